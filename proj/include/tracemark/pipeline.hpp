#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>
#include <opencv2/core/version.hpp>

#include "tracemark/attacker.hpp"
#include "tracemark/checkpoint.hpp"
#include "tracemark/dataset.hpp"
#include "tracemark/etrace.hpp"
#include "tracemark/eval.hpp"
#include "tracemark/synth.hpp"
#include "tracemark/training.hpp"

namespace tracemark {

// ----------------------------------------------------------------------------
// Identity profile: everything a verifier needs, and everything deployment
// needs to protect new uploads of this identity.

struct IdentityProfile {
    std::string identity_id;
    BitSequence bits = BitSequence::zeros(8);
    ETraceKey etrace_key;
    std::string tracer_checkpoint;  // directory with generator+identifier
    std::string anchor_file;        // PNG

    void save(const fs::path& path) const {
        nlohmann::json j{{"identity_id", identity_id},
                         {"bits", bits.to_string()},
                         {"tracer_checkpoint", tracer_checkpoint},
                         {"anchor_file", anchor_file},
                         {"etrace",
                          {{"seed", etrace_key.seed},
                           {"height", etrace_key.height},
                           {"width", etrace_key.width},
                           {"count", etrace_key.positions.size()},
                           {"value", etrace_key.value_level},
                           {"tolerance", etrace_key.tolerance_levels},
                           {"threshold", etrace_key.match_threshold}}}};
        std::ofstream out(path);
        if (!out) throw std::runtime_error("IdentityProfile::save: cannot open " + path.string());
        out << j.dump(2) << "\n";
    }

    static IdentityProfile load(const fs::path& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("IdentityProfile::load: cannot open " + path.string());
        nlohmann::json j;
        in >> j;
        IdentityProfile p;
        p.identity_id = j.at("identity_id").get<std::string>();
        p.bits = BitSequence::parse(j.at("bits").get<std::string>());
        p.tracer_checkpoint = j.at("tracer_checkpoint").get<std::string>();
        p.anchor_file = j.at("anchor_file").get<std::string>();
        const auto& e = j.at("etrace");
        p.etrace_key = derive_key(e.at("seed").get<std::uint64_t>(),
                                  e.at("height").get<std::int64_t>(),
                                  e.at("width").get<std::int64_t>(),
                                  e.at("count").get<std::int64_t>(), e.at("value").get<int>());
        p.etrace_key.tolerance_levels = e.at("tolerance").get<int>();
        p.etrace_key.match_threshold = e.at("threshold").get<double>();
        return p;
    }
};

// ----------------------------------------------------------------------------
// Deployment-time protection.

struct ProtectResult {
    std::vector<fs::path> files;        // all written files
    std::vector<bool> traced;           // parallel to files
    std::vector<Image> images;          // in-memory copies, parallel to files
};

// Writes protected PNGs for a seeded fraction of the faces (both traces),
// copies the rest clean, and records the traced set in a sidecar manifest.
// Source images are never modified.
inline ProtectResult protect(const std::vector<Image>& faces, const TraceGenerator& gen,
                             const AnchorFace& anchor, const BitSequence& bits,
                             const ETraceKey& key, double fraction, const fs::path& out_dir,
                             std::uint64_t seed = 0) {
    if (fraction <= 0.0 || fraction > 1.0)
        throw std::invalid_argument("protect: fraction must be in (0,1]");
    if (faces.empty()) throw std::invalid_argument("protect: no faces");
    fs::create_directories(out_dir);

    const TraceMap trace = generate_trace(gen, anchor, bits);
    const std::size_t n = faces.size();
    const std::size_t traced_n =
        static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));

    // seeded subset
    Rng rng(seed);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        std::size_t j = i + rng.uniform_index(n - i);
        std::swap(order[i], order[j]);
    }
    std::vector<bool> is_traced(n, false);
    for (std::size_t k = 0; k < traced_n; ++k) is_traced[order[k]] = true;

    ProtectResult result;
    nlohmann::json sidecar = nlohmann::json::array();
    for (std::size_t i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "face_%05zu.png", i);
        const fs::path out = out_dir / name;  // PNG only: the fragile trace dies in lossy formats
        Image img = is_traced[i] ? embed_etrace(implant(faces[i], trace), key) : faces[i];
        save_png(img, out);
        sidecar.push_back({{"file", name}, {"traced", is_traced[i]}});
        result.files.push_back(out);
        result.traced.push_back(is_traced[i]);
        result.images.push_back(quantize8(img));
    }
    std::ofstream sc(out_dir / "protected_manifest.json");
    sc << sidecar.dump(2) << "\n";
    return result;
}

// ----------------------------------------------------------------------------
// Checkpoint loaders: rebuild each network from the hyperparameters stored in
// its manifest, then fill in the weights.

inline std::shared_ptr<TraceGenerator> load_generator(const fs::path& dir) {
    const auto cfg = read_manifest(dir).at("config");
    auto gen = std::make_shared<TraceGenerator>(cfg.at("sequence_length").get<std::int64_t>(),
                                                cfg.at("base_width").get<std::int64_t>());
    load_checkpoint(gen->params(), dir, "trace_generator");
    return gen;
}

inline std::shared_ptr<TraceIdentifier> load_identifier(const fs::path& dir) {
    const auto cfg = read_manifest(dir).at("config");
    auto idn = std::make_shared<TraceIdentifier>(cfg.at("sequence_length").get<std::int64_t>(),
                                                 cfg.at("resolution").get<std::int64_t>(),
                                                 cfg.at("base_width").get<std::int64_t>(),
                                                 cfg.at("embed_dim").get<std::int64_t>());
    load_checkpoint(idn->params(), dir, "trace_identifier");
    return idn;
}

inline std::shared_ptr<ReconstructionSimulator> load_simulator(const fs::path& dir) {
    const auto cfg = read_manifest(dir).at("config");
    AutoencoderSpec spec;
    spec.input_resolution = spec.output_resolution = cfg.at("resolution").get<std::int64_t>();
    spec.base_width = cfg.at("base_width").get<std::int64_t>();
    spec.bottleneck_dim = cfg.at("bottleneck_dim").get<std::int64_t>();
    auto sim = std::make_shared<ReconstructionSimulator>(spec);
    load_checkpoint(sim->params(), dir, "reconstruction_simulator");
    return sim;
}

inline std::shared_ptr<FaceSwapModel> load_faceswap(const fs::path& dir) {
    const auto cfg = read_manifest(dir).at("config");
    ArchVariant variant;
    variant.encoder_input = cfg.at("encoder_input").get<std::int64_t>();
    variant.decoder_output = cfg.at("decoder_output").get<std::int64_t>();
    auto model = std::make_shared<FaceSwapModel>(
        variant, cfg.at("identities").get<std::vector<std::string>>(),
        cfg.at("base_width").get<std::int64_t>(), cfg.at("bottleneck_dim").get<std::int64_t>());
    load_checkpoint(model->params(), dir, "faceswap");
    return model;
}

// ----------------------------------------------------------------------------
// Full experiment: protect -> train attacker -> swap -> evaluate.

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::int64_t resolution = 64;

    // dataset
    std::string dataset_kind = "synthetic";  // or "ingested"
    std::int64_t faces_per_identity = 600;
    std::int64_t test_faces = 48;
    std::string manifest_path;               // ingested mode
    std::string source_identity = "src";
    std::string target_identity = "tgt";

    // simulator
    SimulatorTrainConfig simulator;
    // tracer
    TrainerConfig tracer;
    // attacker
    ArchVariant variant;
    FaceSwapTrainConfig attacker;

    double fraction = 1.0;
    std::int64_t etrace_count = 64;
    int etrace_value = 128;
    double bacc_threshold = 0.75;
    std::vector<std::string> perturbations;  // robustness on generated faces

    static ExperimentConfig from_json(const nlohmann::json& j) {
        ExperimentConfig c;
        c.seed = j.value("seed", 0ull);
        c.resolution = j.value("resolution", 64);
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            c.dataset_kind = d.value("kind", "synthetic");
            c.faces_per_identity = d.value("faces_per_identity", 600);
            c.test_faces = d.value("test_faces", 48);
            c.manifest_path = d.value("manifest", "");
            c.source_identity = d.value("source_identity", "src");
            c.target_identity = d.value("target_identity", "tgt");
        }
        if (j.contains("simulator")) {
            const auto& s = j.at("simulator");
            c.simulator.max_iterations = s.value("iterations", c.simulator.max_iterations);
            c.simulator.base_width = s.value("base_width", c.simulator.base_width);
            c.simulator.bottleneck_dim = s.value("bottleneck_dim", c.simulator.bottleneck_dim);
            c.simulator.learning_rate = s.value("learning_rate", c.simulator.learning_rate);
            c.simulator.eval_interval = s.value("eval_interval", c.simulator.eval_interval);
            c.simulator.stop_psnr = s.value("stop_psnr", c.simulator.stop_psnr);
            c.simulator.min_faces = s.value("min_faces", c.simulator.min_faces);
        }
        if (j.contains("tracer")) {
            const auto& t = j.at("tracer");
            c.tracer.max_iterations = t.value("iterations", c.tracer.max_iterations);
            c.tracer.batch_size = t.value("batch_size", c.tracer.batch_size);
            c.tracer.learning_rate = t.value("learning_rate", c.tracer.learning_rate);
            c.tracer.eval_interval = t.value("eval_interval", c.tracer.eval_interval);
            c.tracer.gen_base_width = t.value("gen_base_width", c.tracer.gen_base_width);
            c.tracer.idn_base_width = t.value("idn_base_width", c.tracer.idn_base_width);
            c.tracer.idn_embed_dim = t.value("embed_dim", c.tracer.idn_embed_dim);
            c.tracer.sequence_length = t.value("sequence_length", c.tracer.sequence_length);
            c.tracer.validation_samples = t.value("validation_samples", c.tracer.validation_samples);
            c.tracer.stop_bacc = t.value("stop_bacc", c.tracer.stop_bacc);
            c.tracer.stop_ssim = t.value("stop_ssim", c.tracer.stop_ssim);
        }
        if (j.contains("attacker")) {
            const auto& a = j.at("attacker");
            if (a.contains("variant")) {
                c.variant.encoder_input = a.at("variant").at(0).get<std::int64_t>();
                c.variant.decoder_output = a.at("variant").at(1).get<std::int64_t>();
            }
            c.attacker.max_iterations = a.value("iterations", c.attacker.max_iterations);
            c.attacker.base_width = a.value("base_width", c.attacker.base_width);
            c.attacker.bottleneck_dim = a.value("bottleneck_dim", c.attacker.bottleneck_dim);
            c.attacker.learning_rate = a.value("learning_rate", c.attacker.learning_rate);
        }
        c.fraction = j.value("fraction", 1.0);
        c.etrace_count = j.value("etrace_count", 64);
        c.etrace_value = j.value("etrace_value", 128);
        c.bacc_threshold = j.value("bacc_threshold", 0.75);
        if (j.contains("perturbations"))
            c.perturbations = j.at("perturbations").get<std::vector<std::string>>();
        return c;
    }
};

struct ExperimentResult {
    EvalReport report;
    std::vector<RobustnessRow> robustness;
    fs::path run_dir;
};

inline std::uint32_t config_hash(const nlohmann::json& j) {
    const std::string s = j.dump();
    return crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(s.data()),
                 static_cast<uInt>(s.size()));
}

inline ExperimentResult run_experiment(const nlohmann::json& config_json,
                                       const fs::path& run_dir) {
    const ExperimentConfig cfg = ExperimentConfig::from_json(config_json);
    fs::create_directories(run_dir);
    std::string stage = "setup";
    try {
        Rng root_rng(cfg.seed);
        const int res = static_cast<int>(cfg.resolution);

        // --- data
        stage = "data";
        std::vector<Image> src_train, src_test, tgt_train, tgt_test, sim_pool;
        if (cfg.dataset_kind == "synthetic") {
            Rng ds = root_rng.fork(1);
            const auto n = static_cast<std::size_t>(cfg.faces_per_identity);
            const auto t = static_cast<std::size_t>(cfg.test_faces);
            src_train = synth_identity_set(ds.next_u32(), n, res, 11);
            src_test = synth_identity_set(ds.next_u32(), t, res, 12);
            tgt_train = synth_identity_set(ds.next_u32(), n, res, 13);
            tgt_test = synth_identity_set(ds.next_u32(), t, res, 14);
            // simulator "self-collected" pool: clean faces of other identities
            for (int k = 0; k < 4; ++k) {
                auto extra = synth_identity_set(ds.next_u32(), n / 2, res, 20 + k);
                sim_pool.insert(sim_pool.end(), extra.begin(), extra.end());
            }
        } else if (cfg.dataset_kind == "ingested") {
            DatasetManifest m = DatasetManifest::load(cfg.manifest_path);
            src_train = m.load_split(cfg.source_identity, Split::Train);
            src_test = m.load_split(cfg.source_identity, Split::Test);
            tgt_train = m.load_split(cfg.target_identity, Split::Train);
            tgt_test = m.load_split(cfg.target_identity, Split::Test);
            for (const auto& [id, entries] : m.identities) {
                auto imgs = m.load_split(id, Split::Train);
                sim_pool.insert(sim_pool.end(), imgs.begin(), imgs.end());
            }
        } else {
            throw std::invalid_argument("unknown dataset kind '" + cfg.dataset_kind + "'");
        }

        // --- anchor
        stage = "anchor";
        AnchorFace anchor = compute_anchor(tgt_train);
        save_png(anchor.image, run_dir / "anchor.png");

        // --- simulator pretraining
        stage = "train-simulator";
        SimulatorTrainConfig sim_cfg = cfg.simulator;
        sim_cfg.resolution = cfg.resolution;
        sim_cfg.seed = root_rng.fork(2).next_u32();
        SimulatorTrainResult sim_result = pretrain_simulator(sim_pool, sim_cfg);
        save_checkpoint(sim_result.simulator->params(), run_dir / "simulator",
                        "reconstruction_simulator",
                        {{"resolution", cfg.resolution},
                         {"base_width", sim_cfg.base_width},
                         {"bottleneck_dim", sim_cfg.bottleneck_dim},
                         {"holdout_psnr", sim_result.final_psnr}});

        // --- tracer joint training
        stage = "train-tracer";
        TrainerConfig tr_cfg = cfg.tracer;
        tr_cfg.resolution = cfg.resolution;
        tr_cfg.seed = root_rng.fork(3).next_u32();
        TracerTrainResult tracer = train_tracer(tgt_train, anchor, *sim_result.simulator, tr_cfg);
        tracer.log.save(run_dir / "tracer_log.jsonl");
        save_checkpoint(tracer.generator->params(), run_dir / "generator", "trace_generator",
                        {{"sequence_length", tr_cfg.sequence_length},
                         {"base_width", tr_cfg.gen_base_width}});
        save_checkpoint(tracer.identifier->params(), run_dir / "identifier", "trace_identifier",
                        {{"sequence_length", tr_cfg.sequence_length},
                         {"resolution", cfg.resolution},
                         {"base_width", tr_cfg.idn_base_width},
                         {"embed_dim", tr_cfg.idn_embed_dim}});

        // --- deployment: fixed identity bits, key, protected training set
        stage = "protect";
        Rng deploy_rng = root_rng.fork(4);
        const BitSequence identity_bits =
            BitSequence::random(static_cast<std::size_t>(tr_cfg.sequence_length), deploy_rng);
        ETraceKey key = derive_key(deploy_rng.next_u32(), cfg.resolution, cfg.resolution,
                                   cfg.etrace_count, cfg.etrace_value);
        ProtectResult protected_train =
            protect(tgt_train, *tracer.generator, anchor, identity_bits, key, cfg.fraction,
                    run_dir / "protected", deploy_rng.next_u32());

        IdentityProfile profile;
        profile.identity_id = cfg.target_identity;
        profile.bits = identity_bits;
        profile.etrace_key = key;
        profile.tracer_checkpoint = (run_dir / "generator").string();
        profile.anchor_file = (run_dir / "anchor.png").string();
        profile.save(run_dir / "identity_profile.json");

        // --- attacker training on protected target + clean source
        stage = "train-attacker";
        FaceSwapTrainConfig atk_cfg = cfg.attacker;
        atk_cfg.seed = root_rng.fork(5).next_u32();
        FaceSwapTrainResult atk =
            train_faceswap(src_train, protected_train.images, cfg.variant, atk_cfg);
        save_checkpoint(atk.model->params(), run_dir / "attacker", "faceswap",
                        {{"encoder_input", cfg.variant.encoder_input},
                         {"decoder_output", cfg.variant.decoder_output},
                         {"base_width", atk_cfg.base_width},
                         {"bottleneck_dim", atk_cfg.bottleneck_dim},
                         {"identities", {"src", "tgt"}}});

        // --- swap generation
        stage = "swap";
        std::vector<Image> generated;
        fs::create_directories(run_dir / "swapped");
        for (std::size_t i = 0; i < src_test.size(); ++i) {
            Image g = quantize8(swap(*atk.model, src_test[i], "tgt"));
            char name[32];
            std::snprintf(name, sizeof(name), "swap_%05zu.png", i);
            save_png(g, run_dir / "swapped" / name);
            generated.push_back(std::move(g));
        }

        // --- evaluation
        stage = "evaluate";
        const TraceMap deploy_trace = generate_trace(*tracer.generator, anchor, identity_bits);
        VerifierPriors priors;
        priors.identifier = tracer.identifier.get();
        priors.trace = deploy_trace;
        priors.expected_bits = identity_bits;
        priors.key = key;
        priors.bacc_threshold = cfg.bacc_threshold;

        // generated faces may be at decoder resolution; classify at the
        // identifier's trained resolution
        std::vector<Image> generated_eval;
        for (const auto& g : generated)
            generated_eval.push_back(g.dim(0) == cfg.resolution ? g : resize_image(g, res, res));

        std::vector<Image> protected_test;
        std::vector<std::pair<Image, Image>> quality_pairs;
        for (const auto& f : tgt_test) {
            Image p = quantize8(embed_etrace(implant(f, deploy_trace), key));
            quality_pairs.emplace_back(f, p);
            protected_test.push_back(std::move(p));
        }
        ExperimentResult result;
        result.run_dir = run_dir;
        result.report = evaluate_sets(generated_eval, tgt_test, protected_test, priors,
                                      quality_pairs);
        result.report.save(run_dir / "report.txt", run_dir / "report.csv");

        // --- robustness on generated faces
        if (!cfg.perturbations.empty()) {
            stage = "robustness";
            std::vector<Perturbation> perts;
            for (const auto& name : cfg.perturbations) perts.push_back(Perturbation::parse(name));
            Rng rob_rng = root_rng.fork(6);
            result.robustness =
                robustness_sweep(generated_eval, tgt_test, protected_test, priors, perts,
                                 RobustnessMode::OnGenerated, rob_rng);
            std::ofstream rf(run_dir / "robustness.csv");
            rf << "perturbation,d_acc_on_generated,d_acc_on_real\n";
            for (const auto& row : result.robustness)
                rf << row.perturbation << "," << row.d_acc_on_generated << ","
                   << row.d_acc_on_real << "\n";
        }

        // --- reproducibility record
        stage = "record";
        nlohmann::json record{{"config", config_json},
                              {"config_crc32", config_hash(config_json)},
                              {"seed", cfg.seed},
                              {"opencv_version", CV_VERSION},
                              {"compiler", __VERSION__}};
        std::ofstream rec(run_dir / "reproducibility.json");
        rec << record.dump(2) << "\n";
        return result;
    } catch (const std::exception& e) {
        throw std::runtime_error("run_experiment: stage '" + stage + "' failed: " + e.what());
    }
}

}  // namespace tracemark
