#include <doctest.h>

#include <cstring>

#include "tracemark/synth.hpp"
#include "tracemark/training.hpp"

using namespace tracemark;

namespace {

TrainerConfig tiny_tracer_config() {
    TrainerConfig cfg;
    cfg.resolution = 32;
    cfg.batch_size = 2;
    cfg.max_iterations = 4;
    cfg.eval_interval = 2;
    cfg.validation_samples = 4;
    cfg.gen_base_width = 4;
    cfg.idn_base_width = 4;
    cfg.idn_embed_dim = 16;
    cfg.sequence_length = 4;
    cfg.seed = 7;
    return cfg;
}

SimulatorTrainConfig tiny_sim_config() {
    SimulatorTrainConfig cfg;
    cfg.resolution = 32;
    cfg.base_width = 4;
    cfg.bottleneck_dim = 16;
    cfg.max_iterations = 10;
    cfg.eval_interval = 5;
    cfg.min_faces = 8;
    cfg.holdout = 2;
    cfg.seed = 3;
    return cfg;
}

}  // namespace

TEST_CASE("simulator pretraining rejects insufficient data") {
    std::vector<Image> few = synth_identity_set(1, 10, 32);
    SimulatorTrainConfig cfg;  // default min_faces 500
    cfg.resolution = 32;
    CHECK_THROWS_AS(pretrain_simulator(few, cfg), std::invalid_argument);
}

TEST_CASE("simulator pretraining logs held-out psnr and respects early stop") {
    std::vector<Image> faces = synth_identity_set(2, 16, 32);
    SimulatorTrainConfig cfg = tiny_sim_config();
    SimulatorTrainResult r = pretrain_simulator(faces, cfg);
    REQUIRE(!r.psnr_log.empty());
    CHECK(r.psnr_log.front().first == 5);
    CHECK(r.final_psnr == r.psnr_log.back().second);
    CHECK(r.final_psnr > 0.0);

    // an absurdly low stop target halts at the first evaluation
    cfg.stop_psnr = 0.1;
    SimulatorTrainResult early = pretrain_simulator(faces, cfg);
    CHECK(early.psnr_log.size() == 1);
}

TEST_CASE("trainer config rejects out-of-range negative fractions") {
    TrainerConfig cfg = tiny_tracer_config();
    cfg.negative_fraction = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.negative_fraction = -0.1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.negative_fraction = 0.0;
    CHECK_NOTHROW(cfg.validate());
    cfg.negative_fraction = 0.5;
    cfg.mismatch_fraction = 0.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.mismatch_fraction = -0.1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.mismatch_fraction = 0.25;
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("tracer training evaluates exactly at the configured interval") {
    std::vector<Image> faces = synth_identity_set(3, 16, 32);
    AnchorFace anchor = compute_anchor(faces);
    SimulatorTrainResult sim = pretrain_simulator(faces, tiny_sim_config());

    TrainerConfig cfg = tiny_tracer_config();
    TracerTrainResult r = train_tracer(faces, anchor, *sim.simulator, cfg);
    REQUIRE(r.log.records.size() == 2);
    CHECK(r.log.records[0].iteration == 2);
    CHECK(r.log.records[1].iteration == 4);
    for (const auto& rec : r.log.records) {
        CHECK(rec.accuracy >= 0.0);
        CHECK(rec.accuracy <= 1.0);
        CHECK(std::isfinite(rec.loss_tg));
        CHECK(std::isfinite(rec.loss_ip));
        CHECK(std::isfinite(rec.loss_ti));
    }
}

TEST_CASE("tracer training leaves the simulator weights untouched and trainable") {
    std::vector<Image> faces = synth_identity_set(4, 16, 32);
    AnchorFace anchor = compute_anchor(faces);
    SimulatorTrainResult sim = pretrain_simulator(faces, tiny_sim_config());

    std::vector<Tensor> before;
    for (const auto& [name, v] : sim.simulator->params().entries()) before.push_back(v->value);

    TrainerConfig cfg = tiny_tracer_config();
    (void)train_tracer(faces, anchor, *sim.simulator, cfg);

    std::size_t i = 0;
    for (const auto& [name, v] : sim.simulator->params().entries()) {
        CHECK(v->requires_grad);
        CHECK(std::memcmp(v->value.data(), before[i].data(),
                          static_cast<std::size_t>(v->value.numel()) * sizeof(float)) == 0);
        ++i;
    }
}

TEST_CASE("tracer training is bit-reproducible for a fixed seed") {
    std::vector<Image> faces = synth_identity_set(5, 16, 32);
    AnchorFace anchor = compute_anchor(faces);

    // two independent simulators trained identically are themselves identical
    SimulatorTrainResult sim1 = pretrain_simulator(faces, tiny_sim_config());
    SimulatorTrainResult sim2 = pretrain_simulator(faces, tiny_sim_config());

    TrainerConfig cfg = tiny_tracer_config();
    cfg.max_iterations = 100;
    cfg.eval_interval = 50;
    TracerTrainResult a = train_tracer(faces, anchor, *sim1.simulator, cfg);
    TracerTrainResult b = train_tracer(faces, anchor, *sim2.simulator, cfg);

    for (const auto& [name, va] : a.generator->params().entries()) {
        nn::Var vb = b.generator->params().get(name);
        CHECK(std::memcmp(va->value.data(), vb->value.data(),
                          static_cast<std::size_t>(va->value.numel()) * sizeof(float)) == 0);
    }
    for (const auto& [name, va] : a.identifier->params().entries()) {
        nn::Var vb = b.identifier->params().get(name);
        CHECK(std::memcmp(va->value.data(), vb->value.data(),
                          static_cast<std::size_t>(va->value.numel()) * sizeof(float)) == 0);
    }
    REQUIRE(a.log.records.size() == b.log.records.size());
    for (std::size_t i = 0; i < a.log.records.size(); ++i) {
        CHECK(a.log.records[i].accuracy == b.log.records[i].accuracy);
        CHECK(a.log.records[i].loss_ti == b.log.records[i].loss_ti);
    }
}
