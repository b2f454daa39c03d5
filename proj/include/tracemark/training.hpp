#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tracemark/augment.hpp"
#include "tracemark/core.hpp"
#include "tracemark/losses.hpp"
#include "tracemark/metrics.hpp"
#include "tracemark/nets.hpp"

namespace tracemark {

struct TrainerConfig {
    std::int64_t batch_size = 4;
    double learning_rate = 2.5e-5;
    std::int64_t eval_interval = 5000;
    double accuracy_threshold = 0.89;  // lambda-schedule trigger
    double multiplier = 1.25;
    double lambda_cap = 1e6;
    std::int64_t max_iterations = 100000;
    std::int64_t resolution = 64;
    std::uint64_t seed = 0;
    std::int64_t validation_samples = 256;

    // fraction of training samples presented without any implanted trace and
    // with the complement of the bits as target, so decoding on untraced
    // faces lands below chance and hardened accuracy can separate present
    // from absent. Soft 0.5 targets cannot do that: a prior-branch shortcut
    // then still sees an expected target of 0.75 toward each bit and hardens
    // to the bits. For the shortcut's expected target to balance to 0.5 the
    // inverted fraction must be at least the matched fraction
    // (matched + 0.5 * mismatch <= 0.5), hence the defaults 0.375/0.25/0.375
    double negative_fraction = 0.375;

    // fraction of samples whose prior-branch input is another sample's trace
    // while the target stays the bits implanted in the face. These run from
    // iteration 1 (not gated by the warmup): they make the prior-only
    // strategy lose outright so the decoding pathway must run through the
    // face, and because their loss always depends on the trace in the face
    // they keep the trace alive against the norm penalty
    double mismatch_fraction = 0.25;

    // iterations trained positives-only before negatives switch on; the trace
    // and its identification need to establish first, otherwise the trace
    // collapses under the norm penalty before any alignment signal exists
    std::int64_t negative_warmup_iterations = 0;

    // desk-scale architecture knobs
    std::int64_t sequence_length = 8;
    std::int64_t gen_base_width = 64;
    std::int64_t idn_base_width = 64;
    std::int64_t idn_embed_dim = 128;

    // optional early stop once all targets are met (0 disables each); the
    // clean bound is an upper bound: decoding from faces that carry no trace
    // must stay near chance, a clean accuracy near the positive accuracy
    // means the identifier is shortcutting and the stop must not fire
    double stop_bacc = 0.0;
    double stop_ssim = 0.0;
    double stop_clean_bacc = 0.0;

    AugmentConfig augment;

    void validate() const {
        if (eval_interval < 1) throw std::invalid_argument("TrainerConfig: eval_interval >= 1");
        if (accuracy_threshold <= 0.0 || accuracy_threshold >= 1.0)
            throw std::invalid_argument("TrainerConfig: accuracy_threshold in (0,1)");
        if (batch_size < 1 || max_iterations < 1 || learning_rate <= 0.0)
            throw std::invalid_argument("TrainerConfig: bad batch/iterations/lr");
        if (negative_fraction < 0.0 || negative_fraction >= 1.0)
            throw std::invalid_argument("TrainerConfig: negative_fraction in [0,1)");
        if (mismatch_fraction < 0.0 || negative_fraction + mismatch_fraction >= 1.0)
            throw std::invalid_argument(
                "TrainerConfig: negative_fraction + mismatch_fraction in [0,1)");
    }
};

// Strictly-above-threshold accuracy relaxes the trace terms; at or below the
// threshold the identification term is boosted instead. Exactly one branch
// fires per call, weights never decrease, and a cap guards against overflow.
inline LossWeights update_weights_schedule(const LossWeights& w, double decoded_accuracy,
                                           const TrainerConfig& cfg) {
    if (decoded_accuracy < 0.0 || decoded_accuracy > 1.0)
        throw std::invalid_argument("update_weights_schedule: accuracy out of [0,1]");
    LossWeights out = w;
    if (decoded_accuracy > cfg.accuracy_threshold) {
        out.lambda1 = std::min(cfg.lambda_cap, w.lambda1 * cfg.multiplier);
        out.lambda2 = std::min(cfg.lambda_cap, w.lambda2 * cfg.multiplier);
    } else {
        out.lambda3 = std::min(cfg.lambda_cap, w.lambda3 * cfg.multiplier);
    }
    return out;
}

struct TrainRecord {
    std::int64_t iteration = 0;
    double loss_tg = 0.0, loss_ip = 0.0, loss_ti = 0.0;
    double accuracy = 0.0;
    double clean_accuracy = 0.0;  // decode accuracy on untraced faces, want ~0.5
    double ssim_traced = 0.0;
    double lambda1 = 0.0, lambda2 = 0.0, lambda3 = 0.0;
};

struct TrainLog {
    std::vector<TrainRecord> records;

    void append(TrainRecord r) {
        if (!records.empty() && r.iteration <= records.back().iteration)
            throw std::logic_error("TrainLog: iterations must be strictly increasing");
        records.push_back(std::move(r));
    }

    // line-delimited JSON, one record per eval
    void save(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("TrainLog::save: cannot open " + path.string());
        for (const auto& r : records) {
            nlohmann::json j{{"iteration", r.iteration},  {"loss_tg", r.loss_tg},
                             {"loss_ip", r.loss_ip},      {"loss_ti", r.loss_ti},
                             {"accuracy", r.accuracy},
                             {"clean_accuracy", r.clean_accuracy},
                             {"ssim", r.ssim_traced},
                             {"lambda1", r.lambda1},      {"lambda2", r.lambda2},
                             {"lambda3", r.lambda3}};
            out << j.dump() << "\n";
        }
    }
};

// ----------------------------------------------------------------------------
// Simulator pretraining: plain reconstruction on clean faces, frozen after.

struct SimulatorTrainConfig {
    std::int64_t batch_size = 4;
    double learning_rate = 1e-3;
    std::int64_t max_iterations = 20000;
    std::int64_t eval_interval = 500;
    std::int64_t resolution = 64;
    std::int64_t base_width = 64;
    std::int64_t bottleneck_dim = 512;
    std::uint64_t seed = 0;
    std::int64_t holdout = 32;
    double stop_psnr = 0.0;  // early stop once held-out PSNR reaches this (0 disables)
    std::int64_t min_faces = 500;
};

struct SimulatorTrainResult {
    std::shared_ptr<ReconstructionSimulator> simulator;
    std::vector<std::pair<std::int64_t, double>> psnr_log;  // (iteration, held-out PSNR)
    double final_psnr = 0.0;
};

inline double eval_simulator_psnr(const ReconstructionSimulator& sim,
                                  const std::vector<Image>& faces) {
    double total = 0.0;
    for (const auto& f : faces) total += psnr(f, simulate_reconstruction(sim, f));
    return total / static_cast<double>(faces.size());
}

inline SimulatorTrainResult pretrain_simulator(const std::vector<Image>& faces,
                                               const SimulatorTrainConfig& cfg) {
    if (static_cast<std::int64_t>(faces.size()) < cfg.min_faces)
        throw std::invalid_argument("pretrain_simulator: need at least " +
                                    std::to_string(cfg.min_faces) + " faces, got " +
                                    std::to_string(faces.size()));
    for (const auto& f : faces)
        if (f.dim(0) != cfg.resolution || f.dim(1) != cfg.resolution)
            throw std::invalid_argument("pretrain_simulator: face resolution mismatch");
    if (cfg.holdout < 1 || cfg.holdout >= static_cast<std::int64_t>(faces.size()))
        throw std::invalid_argument("pretrain_simulator: holdout must leave a training set");

    Rng rng(cfg.seed);
    std::vector<Image> train(faces.begin(), faces.end() - cfg.holdout);
    std::vector<Image> held(faces.end() - cfg.holdout, faces.end());

    AutoencoderSpec spec;
    spec.input_resolution = spec.output_resolution = cfg.resolution;
    spec.base_width = cfg.base_width;
    spec.bottleneck_dim = cfg.bottleneck_dim;
    auto sim = std::make_shared<ReconstructionSimulator>(spec, rng.next_u32());
    nn::Adam opt = nn::Adam::over(sim->params(), {cfg.learning_rate});

    SimulatorTrainResult result;
    result.simulator = sim;
    for (std::int64_t it = 1; it <= cfg.max_iterations; ++it) {
        std::vector<Image> batch;
        for (std::int64_t b = 0; b < cfg.batch_size; ++b)
            batch.push_back(train[rng.uniform_index(train.size())]);
        ad::Var x = ad::constant(images_to_nchw(batch));
        ad::Var y = sim->forward(x);
        ad::Var d = ad::sub(y, x);
        ad::Var loss = ad::mean_all(ad::mul(d, d));
        if (!std::isfinite(loss->value[0]))
            throw std::runtime_error("pretrain_simulator: loss diverged (NaN) at iteration " +
                                     std::to_string(it));
        sim->params().zero_grad();
        ad::backward(loss);
        opt.step();

        if (it % cfg.eval_interval == 0 || it == cfg.max_iterations) {
            const double p = eval_simulator_psnr(*sim, held);
            result.psnr_log.emplace_back(it, p);
            result.final_psnr = p;
            if (cfg.stop_psnr > 0.0 && p >= cfg.stop_psnr) break;
        }
    }
    return result;
}

// ----------------------------------------------------------------------------
// Joint tracer training against a frozen simulator.

struct TracerTrainResult {
    std::shared_ptr<TraceGenerator> generator;
    std::shared_ptr<TraceIdentifier> identifier;
    TrainLog log;
    LossWeights final_weights;
};

// Held-out decode accuracy through the frozen simulator, on fixed
// (face, bits) validation pairs.
inline double eval_decode_accuracy(const TraceGenerator& gen, const TraceIdentifier& idn,
                                   const ReconstructionSimulator& sim,
                                   const AnchorFace& anchor,
                                   const std::vector<Image>& faces,
                                   const std::vector<BitSequence>& bits,
                                   std::int64_t batch_size = 8) {
    if (faces.size() != bits.size() || faces.empty())
        throw std::invalid_argument("eval_decode_accuracy: bad validation set");
    double total = 0.0;
    for (std::size_t start = 0; start < faces.size(); start += batch_size) {
        const std::size_t end = std::min(faces.size(), start + batch_size);
        std::vector<Image> fb(faces.begin() + start, faces.begin() + end);
        std::vector<BitSequence> vb(bits.begin() + start, bits.begin() + end);
        std::vector<Image> anchors(fb.size(), anchor.image);
        ad::Var a = ad::constant(images_to_nchw(anchors));
        ad::Var trace = gen.forward(a, vb);
        ad::Var faces_t = ad::constant(images_to_nchw(fb));
        ad::Var traced = ad::clamp(ad::add(faces_t, trace), 0.0f, 1.0f);
        ad::Var recon = sim.forward(traced);
        ad::Var probs = idn.forward(recon, trace);
        const std::int64_t l = idn.sequence_length();
        for (std::size_t i = 0; i < fb.size(); ++i) {
            BitProbabilities p;
            p.probs.assign(probs->value.data() + static_cast<std::int64_t>(i) * l,
                           probs->value.data() + static_cast<std::int64_t>(i + 1) * l);
            total += bit_accuracy(harden(p), vb[i]);
        }
    }
    return total / static_cast<double>(faces.size());
}

// Decode accuracy against the target bits when the face carries no trace at
// all; a face-reading identifier scores near 0.5 here, a shortcutting one
// near its traced accuracy.
inline double eval_clean_accuracy(const TraceGenerator& gen, const TraceIdentifier& idn,
                                  const AnchorFace& anchor,
                                  const std::vector<Image>& faces,
                                  const std::vector<BitSequence>& bits,
                                  std::int64_t batch_size = 8) {
    if (faces.size() != bits.size() || faces.empty())
        throw std::invalid_argument("eval_clean_accuracy: bad validation set");
    double total = 0.0;
    for (std::size_t start = 0; start < faces.size(); start += batch_size) {
        const std::size_t end = std::min(faces.size(), start + batch_size);
        std::vector<Image> fb(faces.begin() + start, faces.begin() + end);
        std::vector<BitSequence> vb(bits.begin() + start, bits.begin() + end);
        std::vector<Image> anchors(fb.size(), anchor.image);
        ad::Var a = ad::constant(images_to_nchw(anchors));
        ad::Var trace = gen.forward(a, vb);
        ad::Var probs = idn.forward(ad::constant(images_to_nchw(fb)), trace);
        const std::int64_t l = idn.sequence_length();
        for (std::size_t i = 0; i < fb.size(); ++i) {
            BitProbabilities p;
            p.probs.assign(probs->value.data() + static_cast<std::int64_t>(i) * l,
                           probs->value.data() + static_cast<std::int64_t>(i + 1) * l);
            total += bit_accuracy(harden(p), vb[i]);
        }
    }
    return total / static_cast<double>(faces.size());
}

inline TracerTrainResult train_tracer(const std::vector<Image>& faces,
                                      const AnchorFace& anchor,
                                      ReconstructionSimulator& sim,
                                      const TrainerConfig& cfg) {
    cfg.validate();
    if (faces.empty()) throw std::invalid_argument("train_tracer: empty dataset");
    for (const auto& f : faces)
        if (f.dim(0) != cfg.resolution || f.dim(1) != cfg.resolution)
            throw std::invalid_argument("train_tracer: face resolution mismatch");

    Rng rng(cfg.seed);
    auto gen = std::make_shared<TraceGenerator>(cfg.sequence_length, cfg.gen_base_width,
                                                rng.next_u32());
    auto idn = std::make_shared<TraceIdentifier>(cfg.sequence_length, cfg.resolution,
                                                 cfg.idn_base_width, cfg.idn_embed_dim,
                                                 rng.next_u32());

    // The simulator is a fixed component here: no gradient accumulation on
    // its parameters, gradients still flow through it to the traced image.
    for (const auto& [name, v] : sim.params().entries()) v->requires_grad = false;

    std::vector<ad::Var> trainable;
    for (const auto& [name, v] : gen->params().entries()) trainable.push_back(v);
    for (const auto& [name, v] : idn->params().entries()) trainable.push_back(v);
    nn::Adam opt(trainable, {cfg.learning_rate});

    // fixed validation split with fixed bit sequences
    Rng val_rng = rng.fork(0x5A11);
    const std::int64_t val_n = std::min<std::int64_t>(cfg.validation_samples,
                                                      static_cast<std::int64_t>(faces.size()));
    std::vector<Image> val_faces;
    std::vector<BitSequence> val_bits;
    for (std::int64_t i = 0; i < val_n; ++i) {
        val_faces.push_back(faces[val_rng.uniform_index(faces.size())]);
        val_bits.push_back(BitSequence::random(static_cast<std::size_t>(cfg.sequence_length), val_rng));
    }

    LossWeights weights;
    TracerTrainResult result;
    result.generator = gen;
    result.identifier = idn;

    const std::int64_t res = cfg.resolution;
    std::vector<Image> anchor_batch(static_cast<std::size_t>(cfg.batch_size), anchor.image);
    Tensor anchor_nchw = images_to_nchw(anchor_batch);

    for (std::int64_t it = 1; it <= cfg.max_iterations; ++it) {
        // sample faces and fresh random bit sequences
        std::vector<Image> batch;
        std::vector<BitSequence> bits;
        for (std::int64_t b = 0; b < cfg.batch_size; ++b) {
            batch.push_back(faces[rng.uniform_index(faces.size())]);
            bits.push_back(BitSequence::random(static_cast<std::size_t>(cfg.sequence_length), rng));
        }

        ad::Var a = ad::constant(anchor_nchw);
        ad::Var trace = gen->forward(a, bits);

        // trace augmentation: per-sample random zeroing + scaling, in-graph;
        // negative samples keep the face trace-free (mask 0) while the prior
        // branch below still sees the full trace
        Tensor mask(trace->value.shape(), 1.0f);
        std::vector<bool> negative(static_cast<std::size_t>(cfg.batch_size), false);
        const bool negatives_on = it > cfg.negative_warmup_iterations;
        std::vector<std::int64_t> prior_idx(static_cast<std::size_t>(cfg.batch_size));
        bool any_mismatch = false;
        for (std::int64_t b = 0; b < cfg.batch_size; ++b) {
            const double u = rng.uniform(0.0, 1.0);
            negative[static_cast<std::size_t>(b)] = negatives_on && u < cfg.negative_fraction;
            const bool mismatch = u >= cfg.negative_fraction &&
                                  u < cfg.negative_fraction + cfg.mismatch_fraction;
            prior_idx[static_cast<std::size_t>(b)] =
                mismatch ? (b + 1) % cfg.batch_size : b;
            any_mismatch = any_mismatch || mismatch;
            ZeroMask zm = make_zero_mask(res, res, rng, cfg.augment.zero_fraction_lo,
                                         cfg.augment.zero_fraction_hi);
            const float s = static_cast<float>(rng.uniform(cfg.augment.scale_lo,
                                                           cfg.augment.scale_hi));
            for (std::int64_t c = 0; c < 3; ++c) {
                float* m = mask.data() + (b * 3 + c) * res * res;
                if (negative[static_cast<std::size_t>(b)]) {
                    for (std::int64_t p = 0; p < res * res; ++p) m[p] = 0.0f;
                } else {
                    for (std::int64_t p = 0; p < res * res; ++p) m[p] = zm.mask[p] * s;
                }
            }
        }
        ad::Var trace_aug = ad::mul_mask(trace, mask);

        ad::Var faces_t = ad::constant(images_to_nchw(batch));
        ad::Var traced = ad::clamp(ad::add(faces_t, trace_aug), 0.0f, 1.0f);

        // image augmentation runs outside the tape; gradients pass straight through
        std::vector<Image> traced_imgs = nchw_to_images(traced->value);
        for (auto& img : traced_imgs) img = augment_image(img, cfg.augment, rng);
        ad::Var traced_in = ad::straight_through(traced, images_to_nchw(traced_imgs));

        // half the batches skip the simulator: identification must work on
        // faces as published, not just on reconstructions, and the negatives
        // must cover raw faces or "not simulator-blurred" becomes a cue that
        // lets the identifier shortcut on exactly the inputs the verifier sees
        ad::Var recon = rng.bernoulli(0.5) ? sim.forward(traced_in) : traced_in;
        // mismatched samples hand the prior branch a different sample's trace
        ad::Var prior = any_mismatch ? ad::permute_batch(trace, prior_idx) : trace;
        ad::Var probs = idn->forward(recon, prior);

        ad::Var l_tg = trace_generation_loss_ad(trace);
        ad::Var implanted_clean = ad::clamp(ad::add(faces_t, trace), 0.0f, 1.0f);
        ad::Var l_ip = perceptual_loss_ad(faces_t, implanted_clean);
        Tensor target = bits_to_planes(bits, 1, 1).reshaped({cfg.batch_size, cfg.sequence_length});
        for (std::int64_t b = 0; b < cfg.batch_size; ++b)
            if (negative[static_cast<std::size_t>(b)])
                for (std::int64_t k = 0; k < cfg.sequence_length; ++k)
                    target[b * cfg.sequence_length + k] =
                        1.0f - target[b * cfg.sequence_length + k];
        ad::Var l_ti = identification_loss_ad(probs, target);

        ad::Var loss = ad::add(ad::add(ad::scale(l_tg, static_cast<float>(weights.lambda1)),
                                       ad::scale(l_ip, static_cast<float>(weights.lambda2))),
                               ad::scale(l_ti, static_cast<float>(weights.lambda3)));
        if (!std::isfinite(loss->value[0]))
            throw std::runtime_error("train_tracer: loss diverged (NaN) at iteration " +
                                     std::to_string(it) + "; last weights " +
                                     std::to_string(weights.lambda1) + "/" +
                                     std::to_string(weights.lambda2) + "/" +
                                     std::to_string(weights.lambda3));

        gen->params().zero_grad();
        idn->params().zero_grad();
        ad::backward(loss);
        opt.step();

        if (it % cfg.eval_interval == 0 || it == cfg.max_iterations) {
            const double acc = eval_decode_accuracy(*gen, *idn, sim, anchor, val_faces, val_bits);
            const double clean_acc =
                eval_clean_accuracy(*gen, *idn, anchor, val_faces, val_bits);

            // traced-image quality on a few validation faces
            double ssim_sum = 0.0;
            const std::size_t q = std::min<std::size_t>(8, val_faces.size());
            for (std::size_t i = 0; i < q; ++i) {
                TraceMap t = generate_trace(*gen, anchor, val_bits[i]);
                ssim_sum += ssim(val_faces[i], implant(val_faces[i], t));
            }
            const double ssim_avg = ssim_sum / static_cast<double>(q);

            TrainRecord rec;
            rec.iteration = it;
            rec.loss_tg = l_tg->value[0];
            rec.loss_ip = l_ip->value[0];
            rec.loss_ti = l_ti->value[0];
            rec.accuracy = acc;
            rec.clean_accuracy = clean_acc;
            rec.ssim_traced = ssim_avg;
            rec.lambda1 = weights.lambda1;
            rec.lambda2 = weights.lambda2;
            rec.lambda3 = weights.lambda3;
            result.log.append(rec);

            if (cfg.stop_bacc > 0.0 && acc >= cfg.stop_bacc &&
                (cfg.stop_ssim <= 0.0 || ssim_avg >= cfg.stop_ssim) &&
                (cfg.stop_clean_bacc <= 0.0 ||
                 (negatives_on && clean_acc <= cfg.stop_clean_bacc)))
                break;

            // the schedule must not reward a prior-branch shortcut: penalize
            // the matched accuracy by however far the untraced accuracy sits
            // above chance, so the trace terms only relax once decoding
            // genuinely depends on the trace being present in the face
            const double sched_acc = acc - std::max(0.0, clean_acc - 0.5);
            weights = update_weights_schedule(weights, sched_acc, cfg);
        }
    }

    for (const auto& [name, v] : sim.params().entries()) v->requires_grad = true;
    result.final_weights = weights;
    return result;
}

}  // namespace tracemark
