#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "tracemark/core.hpp"
#include "tracemark/image_io.hpp"
#include "tracemark/nets.hpp"
#include "tracemark/rng.hpp"

namespace tracemark {

// ----------------------------------------------------------------------------
// Face-swap adversary: one shared encoder, one decoder per identity, trained
// alternately on unsupervised reconstruction. Swapping routes a source face
// through the target identity's decoder.

struct ArchVariant {
    std::int64_t encoder_input = 64;
    std::int64_t decoder_output = 64;

    void validate() const {
        const auto ok = [](std::int64_t v) { return v == 64 || v == 128 || v == 256; };
        if (!ok(encoder_input) || !ok(decoder_output))
            throw std::invalid_argument("ArchVariant: sizes must be one of {64,128,256}");
    }
};

class FaceSwapModel {
public:
    FaceSwapModel(const ArchVariant& variant, const std::vector<std::string>& identities,
                  std::int64_t base_width = 64, std::int64_t bottleneck_dim = 512,
                  std::uint64_t seed = 0)
        : variant_(variant) {
        variant_.validate();
        if (identities.empty()) throw std::invalid_argument("FaceSwapModel: no identities");
        Rng rng(seed);
        AutoencoderSpec spec;
        spec.input_resolution = variant_.encoder_input;
        spec.output_resolution = variant_.decoder_output;
        spec.base_width = base_width;
        spec.bottleneck_dim = bottleneck_dim;
        spec_ = spec;
        encoder_ = ConvEncoder(ps_, "swap.enc", spec, rng);
        for (const auto& id : identities)
            decoders_.emplace(id, ConvDecoder(ps_, "swap.dec." + id, spec, rng));
    }

    Var reconstruct(const std::string& identity, const Var& faces) const {
        return decoder(identity).forward(encoder_.forward(faces));
    }

    const ConvDecoder& decoder(const std::string& identity) const {
        auto it = decoders_.find(identity);
        if (it == decoders_.end())
            throw std::invalid_argument("FaceSwapModel: unknown identity '" + identity + "'");
        return it->second;
    }

    std::vector<std::string> identities() const {
        std::vector<std::string> ids;
        for (const auto& [id, d] : decoders_) ids.push_back(id);
        return ids;
    }

    const ArchVariant& variant() const { return variant_; }
    const AutoencoderSpec& spec() const { return spec_; }
    const ConvEncoder& encoder() const { return encoder_; }
    nn::ParamStore& params() { return ps_; }
    const nn::ParamStore& params() const { return ps_; }

private:
    ArchVariant variant_;
    AutoencoderSpec spec_;
    nn::ParamStore ps_;
    ConvEncoder encoder_;
    std::map<std::string, ConvDecoder> decoders_;
};

inline Image swap(const FaceSwapModel& model, const Image& source_face,
                  const std::string& target_id) {
    if (source_face.dim(0) != model.variant().encoder_input ||
        source_face.dim(1) != model.variant().encoder_input)
        throw std::invalid_argument("swap: source face must match the encoder input size");
    Var x = ad::constant(images_to_nchw({source_face}));
    return nchw_to_images(model.reconstruct(target_id, x)->value)[0];
}

// ----------------------------------------------------------------------------
// Alternating reconstruction training on two identity sets.

struct FaceSwapTrainConfig {
    std::int64_t batch_size = 4;
    double learning_rate = 1e-3;
    std::int64_t max_iterations = 20000;
    std::int64_t eval_interval = 500;
    std::int64_t base_width = 64;
    std::int64_t bottleneck_dim = 512;
    std::uint64_t seed = 0;
};

struct FaceSwapTrainResult {
    std::shared_ptr<FaceSwapModel> model;
    // (iteration, src reconstruction loss, tgt reconstruction loss)
    std::vector<std::tuple<std::int64_t, double, double>> loss_log;
};

inline FaceSwapTrainResult train_faceswap(const std::vector<Image>& src_faces,
                                          const std::vector<Image>& tgt_faces,
                                          const ArchVariant& variant,
                                          const FaceSwapTrainConfig& cfg) {
    variant.validate();
    if (src_faces.empty() || tgt_faces.empty())
        throw std::invalid_argument("train_faceswap: empty identity dataset");
    const std::int64_t in_res = variant.encoder_input;
    for (const auto* set : {&src_faces, &tgt_faces})
        for (const auto& f : *set)
            if (f.dim(0) != in_res || f.dim(1) != in_res)
                throw std::invalid_argument("train_faceswap: face resolution mismatch");

    Rng rng(cfg.seed);
    auto model = std::make_shared<FaceSwapModel>(variant, std::vector<std::string>{"src", "tgt"},
                                                 cfg.base_width, cfg.bottleneck_dim,
                                                 rng.next_u32());
    nn::Adam opt = nn::Adam::over(model->params(), {cfg.learning_rate});

    FaceSwapTrainResult result;
    result.model = model;
    double ema_src = 0.0, ema_tgt = 0.0;
    bool ema_init = false;

    // Reconstruction targets at decoder resolution (may differ from input).
    const std::int64_t out_res = variant.decoder_output;

    for (std::int64_t it = 1; it <= cfg.max_iterations; ++it) {
        // strict alternation: odd iterations update the source branch,
        // even iterations the target branch
        const bool source_step = (it % 2 == 1);
        const auto& pool = source_step ? src_faces : tgt_faces;
        std::vector<Image> batch;
        for (std::int64_t b = 0; b < cfg.batch_size; ++b)
            batch.push_back(pool[rng.uniform_index(pool.size())]);

        std::vector<Image> targets = batch;
        if (out_res != in_res)
            for (auto& img : targets)
                img = resize_image(img, static_cast<int>(out_res), static_cast<int>(out_res));

        ad::Var x = ad::constant(images_to_nchw(batch));
        ad::Var y = model->reconstruct(source_step ? "src" : "tgt", x);
        // mean squared error: quadratic weighting makes the model close large
        // residuals (identity-constant marks it misses entirely) before it
        // polishes small ones
        ad::Var d = ad::sub(y, ad::constant(images_to_nchw(targets)));
        ad::Var loss = ad::mean_all(ad::mul(d, d));
        if (!std::isfinite(loss->value[0]))
            throw std::runtime_error("train_faceswap: loss diverged (NaN) at iteration " +
                                     std::to_string(it));

        model->params().zero_grad();
        ad::backward(loss);
        opt.step();

        const double l = loss->value[0];
        if (!ema_init) {
            ema_src = ema_tgt = l;
            ema_init = true;
        }
        if (source_step) ema_src = 0.95 * ema_src + 0.05 * l;
        else ema_tgt = 0.95 * ema_tgt + 0.05 * l;
        if (it % cfg.eval_interval == 0 || it == cfg.max_iterations)
            result.loss_log.emplace_back(it, ema_src, ema_tgt);
    }
    return result;
}

// ----------------------------------------------------------------------------
// Circle-mark toy: a fixed blue disc standing in for a face-locked trace and
// a randomly placed red disc standing in for a content-free one.

struct CircleMarkConfig {
    double blue_row = 0.55, blue_col = 0.50;  // relative nose position
    double radius_frac = 0.03;                // of image width
};

inline void draw_disc(Image& img, double row, double col, double radius, float r, float g,
                      float b) {
    const std::int64_t h = img.dim(0), w = img.dim(1);
    const std::int64_t r0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(row - radius));
    const std::int64_t r1 = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(row + radius) + 1);
    for (std::int64_t i = r0; i <= r1; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
            const double di = i - row, dj = j - col;
            if (di * di + dj * dj <= radius * radius) {
                img[(i * w + j) * 3 + 0] = r;
                img[(i * w + j) * 3 + 1] = g;
                img[(i * w + j) * 3 + 2] = b;
            }
        }
}

inline Image add_circle_marks(const Image& face, Rng& red_rng,
                              const CircleMarkConfig& cfg = {}) {
    check_image_shape(face, "add_circle_marks");
    const std::int64_t h = face.dim(0), w = face.dim(1);
    const double radius = cfg.radius_frac * static_cast<double>(w);
    Image out = face;
    draw_disc(out, cfg.blue_row * h, cfg.blue_col * w, radius, 0.0f, 0.0f, 1.0f);
    const double rr = red_rng.uniform(radius, h - 1 - radius);
    const double rc = red_rng.uniform(radius, w - 1 - radius);
    draw_disc(out, rr, rc, radius, 1.0f, 0.0f, 0.0f);
    return out;
}

// Mean of one channel inside a disc; used to score mark retention.
inline double disc_mean_channel(const Image& img, double row, double col, double radius,
                                int channel) {
    const std::int64_t h = img.dim(0), w = img.dim(1);
    double sum = 0.0;
    std::int64_t count = 0;
    for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
            const double di = i - row, dj = j - col;
            if (di * di + dj * dj <= radius * radius) {
                sum += img[(i * w + j) * 3 + channel];
                ++count;
            }
        }
    return count ? sum / static_cast<double>(count) : 0.0;
}

inline double channel_mean(const Image& img, int channel) {
    double sum = 0.0;
    const std::int64_t pixels = img.dim(0) * img.dim(1);
    for (std::int64_t p = 0; p < pixels; ++p) sum += img[p * 3 + channel];
    return sum / static_cast<double>(pixels);
}

}  // namespace tracemark
