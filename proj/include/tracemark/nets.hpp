#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tracemark/core.hpp"
#include "tracemark/nn.hpp"

namespace tracemark {

using ad::Var;

// ----------------------------------------------------------------------------
// Batch layout helpers: images live as (H,W,3) interleaved, networks consume
// (N,3,H,W) planar.

inline Tensor images_to_nchw(const std::vector<Image>& imgs) {
    if (imgs.empty()) throw std::invalid_argument("images_to_nchw: empty batch");
    const std::int64_t h = imgs[0].dim(0), w = imgs[0].dim(1);
    Tensor out({static_cast<std::int64_t>(imgs.size()), 3, h, w});
    for (std::size_t n = 0; n < imgs.size(); ++n) {
        check_same_shape(imgs[n], imgs[0], "images_to_nchw");
        float* base = out.data() + static_cast<std::int64_t>(n) * 3 * h * w;
        for (std::int64_t i = 0; i < h * w; ++i)
            for (std::int64_t c = 0; c < 3; ++c) base[c * h * w + i] = imgs[n][i * 3 + c];
    }
    return out;
}

inline std::vector<Image> nchw_to_images(const Tensor& t) {
    if (t.ndim() != 4 || t.dim(1) != 3)
        throw std::invalid_argument("nchw_to_images: expected (N,3,H,W)");
    const std::int64_t n = t.dim(0), h = t.dim(2), w = t.dim(3);
    std::vector<Image> imgs;
    imgs.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        Image img = make_image(h, w);
        const float* base = t.data() + i * 3 * h * w;
        for (std::int64_t p = 0; p < h * w; ++p)
            for (std::int64_t c = 0; c < 3; ++c) img[p * 3 + c] = base[c * h * w + p];
        imgs.push_back(std::move(img));
    }
    return imgs;
}

// Broadcast each bit of each sequence to a constant spatial plane.
inline Tensor bits_to_planes(const std::vector<BitSequence>& bits, std::int64_t h,
                             std::int64_t w) {
    if (bits.empty()) throw std::invalid_argument("bits_to_planes: empty batch");
    const std::int64_t l = static_cast<std::int64_t>(bits[0].size());
    Tensor out({static_cast<std::int64_t>(bits.size()), l, h, w});
    for (std::size_t n = 0; n < bits.size(); ++n) {
        if (static_cast<std::int64_t>(bits[n].size()) != l)
            throw std::invalid_argument("bits_to_planes: ragged batch");
        for (std::int64_t b = 0; b < l; ++b) {
            float* plane = out.data() + (static_cast<std::int64_t>(n) * l + b) * h * w;
            std::fill_n(plane, h * w, static_cast<float>(bits[n][static_cast<std::size_t>(b)]));
        }
    }
    return out;
}

// ----------------------------------------------------------------------------
// Trace generator: encoder-decoder over anchor + bit planes.
// 10 convolutions and 4 upsampling layers; ReLU after every convolution
// except the final one, which stays linear.

class TraceGenerator {
public:
    static constexpr int kConvLayers = 10;
    static constexpr int kUpsampleLayers = 4;

    TraceGenerator(std::int64_t sequence_length = 8, std::int64_t base_width = 64,
                   std::uint64_t seed = 0)
        : seq_len_(sequence_length), base_width_(base_width) {
        Rng rng(seed);
        const std::int64_t w = base_width;
        down_.push_back(nn::Conv::make(ps_, "gen.down1", 3 + seq_len_, w, 3, 2, rng));
        down_.push_back(nn::Conv::make(ps_, "gen.down2", w, 2 * w, 3, 2, rng));
        down_.push_back(nn::Conv::make(ps_, "gen.down3", 2 * w, 4 * w, 3, 2, rng));
        down_.push_back(nn::Conv::make(ps_, "gen.down4", 4 * w, 4 * w, 3, 2, rng));
        mid_ = nn::Conv::make(ps_, "gen.mid", 4 * w, 4 * w, 3, 1, rng);
        up_.push_back(nn::Upscale::make(ps_, "gen.up1", 4 * w, 2 * w, 3, rng));
        up_.push_back(nn::Upscale::make(ps_, "gen.up2", 2 * w, 2 * w, 3, rng));
        up_.push_back(nn::Upscale::make(ps_, "gen.up3", 2 * w, w, 3, rng));
        up_.push_back(nn::Upscale::make(ps_, "gen.up4", w, w, 3, rng));
        out_ = nn::Conv::make(ps_, "gen.out", w, 3, 3, 1, rng);
    }

    // anchor: (N,3,H,W) constant or variable; bit planes appended as extra
    // input channels. Output is an unclipped signed trace map batch.
    Var forward(const Var& anchor, const std::vector<BitSequence>& bits) const {
        for (const auto& b : bits)
            if (static_cast<std::int64_t>(b.size()) != seq_len_)
                throw std::invalid_argument("TraceGenerator: bit length mismatch");
        const std::int64_t h = anchor->value.dim(2), w = anchor->value.dim(3);
        Var planes = ad::constant(bits_to_planes(bits, h, w));
        Var x = ad::concat_channels(anchor, planes);
        for (const auto& conv : down_) x = ad::relu(conv(x));
        x = ad::relu(mid_(x));
        for (const auto& up : up_) x = ad::relu(up(x));
        return out_(x);
    }

    std::int64_t sequence_length() const { return seq_len_; }
    std::int64_t base_width() const { return base_width_; }
    nn::ParamStore& params() { return ps_; }
    const nn::ParamStore& params() const { return ps_; }

private:
    std::int64_t seq_len_, base_width_;
    nn::ParamStore ps_;
    std::vector<nn::Conv> down_;
    nn::Conv mid_;
    std::vector<nn::Upscale> up_;
    nn::Conv out_;
};

// Generate a trace map for a single anchor/bit-sequence pair.
inline TraceMap generate_trace(const TraceGenerator& gen, const AnchorFace& anchor,
                               const BitSequence& bits) {
    Var a = ad::constant(images_to_nchw({anchor.image}));
    Var t = gen.forward(a, {bits});
    return nchw_to_images(t->value)[0];
}

// ----------------------------------------------------------------------------
// Trace identifier: two-branch network. The prior branch reads the raw trace
// map, the image branch reads the face under test; each branch is 7
// convolutions plus one fully-connected layer, the fused head is 3
// fully-connected layers ending in a sigmoid.

class TraceIdentifier {
public:
    static constexpr int kBranchConvLayers = 7;
    static constexpr int kBranchDenseLayers = 1;
    static constexpr int kHeadDenseLayers = 3;

    TraceIdentifier(std::int64_t sequence_length = 8, std::int64_t resolution = 64,
                    std::int64_t base_width = 64, std::int64_t embed_dim = 128,
                    std::uint64_t seed = 0)
        : seq_len_(sequence_length), resolution_(resolution), base_width_(base_width),
          embed_dim_(embed_dim) {
        if (resolution % 16 != 0)
            throw std::invalid_argument("TraceIdentifier: resolution must be divisible by 16");
        Rng rng(seed);
        build_branch_(prior_convs_, prior_fc_, "idn.prior", rng);
        build_branch_(image_convs_, image_fc_, "idn.image", rng);
        head1_ = nn::Dense::make(ps_, "idn.head1", 2 * embed_dim_, embed_dim_, rng);
        head2_ = nn::Dense::make(ps_, "idn.head2", embed_dim_, embed_dim_ / 2, rng);
        head3_ = nn::Dense::make(ps_, "idn.head3", embed_dim_ / 2, seq_len_, rng);
    }

    // face, trace: (N,3,H,W) at the trained resolution. Returns per-bit
    // probabilities (N, sequence_length).
    Var forward(const Var& face, const Var& trace) const {
        check_input_(face->value);
        check_input_(trace->value);
        Var pe = branch_(prior_convs_, prior_fc_, trace);
        Var ie = branch_(image_convs_, image_fc_, face);
        Var x = ad::leaky_relu(head1_(concat_rows_(ie, pe)));
        x = ad::leaky_relu(head2_(x));
        return ad::sigmoid(head3_(x));
    }

    std::int64_t sequence_length() const { return seq_len_; }
    std::int64_t resolution() const { return resolution_; }
    std::int64_t base_width() const { return base_width_; }
    std::int64_t embed_dim() const { return embed_dim_; }
    nn::ParamStore& params() { return ps_; }
    const nn::ParamStore& params() const { return ps_; }

private:
    void build_branch_(std::vector<nn::Conv>& convs, nn::Dense& fc, const std::string& name,
                       Rng& rng) {
        const std::int64_t w = base_width_;
        convs.push_back(nn::Conv::make(ps_, name + ".c1", 3, w, 3, 2, rng));
        convs.push_back(nn::Conv::make(ps_, name + ".c2", w, 2 * w, 3, 2, rng));
        convs.push_back(nn::Conv::make(ps_, name + ".c3", 2 * w, 2 * w, 3, 2, rng));
        convs.push_back(nn::Conv::make(ps_, name + ".c4", 2 * w, 4 * w, 3, 2, rng));
        convs.push_back(nn::Conv::make(ps_, name + ".c5", 4 * w, 4 * w, 3, 1, rng));
        convs.push_back(nn::Conv::make(ps_, name + ".c6", 4 * w, 4 * w, 3, 1, rng));
        convs.push_back(nn::Conv::make(ps_, name + ".c7", 4 * w, 4 * w, 3, 1, rng));
        const std::int64_t spatial = resolution_ / 16;
        fc = nn::Dense::make(ps_, name + ".fc", 4 * w * spatial * spatial, embed_dim_, rng);
    }

    // Leaky activations keep gradients alive when the trace amplitude is
    // tiny: plain ReLU branches go dead (zero activations, zero gradients)
    // and identification can never recover from an early trace collapse.
    Var branch_(const std::vector<nn::Conv>& convs, const nn::Dense& fc, Var x) const {
        for (const auto& conv : convs) x = ad::leaky_relu(conv(x));
        const std::int64_t n = x->value.dim(0);
        x = ad::reshape(x, {n, x->value.numel() / n});
        return ad::leaky_relu(fc(x));
    }

    static Var concat_rows_(const Var& a, const Var& b) {
        // (N,D1) + (N,D2): reuse channel concat via 4-D views
        const std::int64_t n = a->value.dim(0);
        Var a4 = ad::reshape(a, {n, a->value.dim(1), 1, 1});
        Var b4 = ad::reshape(b, {n, b->value.dim(1), 1, 1});
        Var cat = ad::concat_channels(a4, b4);
        return ad::reshape(cat, {n, cat->value.dim(1)});
    }

    void check_input_(const Tensor& t) const {
        if (t.ndim() != 4 || t.dim(1) != 3 || t.dim(2) != resolution_ || t.dim(3) != resolution_)
            throw std::invalid_argument("TraceIdentifier: input must be (N,3," +
                                        std::to_string(resolution_) + "," +
                                        std::to_string(resolution_) + "), got " +
                                        Tensor::shape_str(t.shape()));
    }

    std::int64_t seq_len_, resolution_, base_width_, embed_dim_;
    nn::ParamStore ps_;
    std::vector<nn::Conv> prior_convs_, image_convs_;
    nn::Dense prior_fc_, image_fc_;
    nn::Dense head1_, head2_, head3_;
};

inline BitProbabilities identify_trace(const TraceIdentifier& idn, const Image& face,
                                       const TraceMap& trace) {
    Var f = ad::constant(images_to_nchw({face}));
    Var t = ad::constant(images_to_nchw({trace}));
    Var p = idn.forward(f, t);
    BitProbabilities probs;
    probs.probs.assign(p->value.data(), p->value.data() + p->value.numel());
    return probs;
}

// ----------------------------------------------------------------------------
// Reconstruction autoencoder family. The encoder downsamples to 1x1 with
// stride-2 convolutions (LeakyReLU after each), the bottleneck is two linear
// layers around one upsampling layer, and the decoder is 5 upsampling layers,
// one convolution and a sigmoid.

struct AutoencoderSpec {
    std::int64_t input_resolution = 64;
    std::int64_t output_resolution = 64;
    std::int64_t base_width = 64;
    std::int64_t bottleneck_dim = 512;
};

class ConvEncoder {
public:
    ConvEncoder() = default;

    ConvEncoder(nn::ParamStore& ps, const std::string& name, const AutoencoderSpec& spec,
                Rng& rng) {
        std::int64_t res = spec.input_resolution;
        std::int64_t ch = 3;
        int i = 0;
        while (res > 1) {
            const std::int64_t next = std::min<std::int64_t>(channel_cap_(spec), ch == 3 ? spec.base_width : ch * 2);
            convs_.push_back(nn::Conv::make(ps, name + ".c" + std::to_string(++i), ch, next, 5, 2, rng));
            ch = next;
            res /= 2;
        }
        out_channels_ = ch;
        fc1_ = nn::Dense::make(ps, name + ".fc1", ch, spec.bottleneck_dim, rng);
        fc2_ = nn::Dense::make(ps, name + ".fc2", spec.bottleneck_dim, latent_dim_(spec), rng);
        mid_up_ = nn::Upscale::make(ps, name + ".midup", latent_channels_(spec),
                                    latent_channels_(spec), 3, rng);
        spec_ = spec;
    }

    static std::int64_t latent_channels_(const AutoencoderSpec& spec) {
        return std::min<std::int64_t>(channel_cap_(spec), 4 * spec.base_width);
    }
    static std::int64_t latent_dim_(const AutoencoderSpec& spec) { return latent_channels_(spec); }
    static std::int64_t channel_cap_(const AutoencoderSpec& spec) { return 4 * spec.base_width; }

    // (N,3,n,n) -> latent feature map (N,C,2,2)
    Var forward(const Var& x) const {
        Var h = x;
        for (const auto& conv : convs_) h = ad::leaky_relu(conv(h));
        const std::int64_t n = h->value.dim(0);
        h = ad::reshape(h, {n, h->value.numel() / n});
        h = ad::leaky_relu(fc1_(h));
        h = fc2_(h);
        h = ad::reshape(h, {n, latent_channels_(spec_), 1, 1});
        return ad::leaky_relu(mid_up_(h));
    }

    std::size_t conv_layer_count() const { return convs_.size(); }
    std::int64_t out_channels() const { return out_channels_; }

private:
    std::vector<nn::Conv> convs_;
    nn::Dense fc1_, fc2_;
    nn::Upscale mid_up_;
    std::int64_t out_channels_ = 0;
    AutoencoderSpec spec_;
};

class ConvDecoder {
public:
    ConvDecoder() = default;

    ConvDecoder(nn::ParamStore& ps, const std::string& name, const AutoencoderSpec& spec,
                Rng& rng) {
        // latent arrives at 2x2; upsampling layers reach the output size
        std::int64_t res = 2;
        std::int64_t ch = ConvEncoder::latent_channels_(spec);
        int i = 0;
        // channels halve per scale but never drop below base_width: the finest
        // scales carry the detail and starving them caps reconstruction
        // sharpness regardless of training time
        while (res < spec.output_resolution) {
            std::int64_t next = std::max<std::int64_t>(spec.base_width, ch / 2);
            ups_.push_back(nn::Upscale::make(ps, name + ".up" + std::to_string(++i), ch, next, 3, rng));
            ch = next;
            res *= 2;
        }
        out_ = nn::Conv::make(ps, name + ".out", ch, 3, 3, 1, rng);
        // learnable spatial bias before the squashing: convolutions alone have
        // no positional pathway, so content fixed in place across the whole
        // training set (an identity-constant mark) is otherwise inexpressible
        bias_map_ = ps.add(name + ".bias_map",
                           Tensor({3, spec.output_resolution, spec.output_resolution}, 0.0f));
    }

    Var forward(const Var& latent) const {
        Var h = latent;
        for (const auto& up : ups_) h = ad::leaky_relu(up(h));
        return ad::sigmoid(ad::add_chw(out_(h), bias_map_));
    }

    std::size_t upsample_layer_count() const { return ups_.size(); }

private:
    std::vector<nn::Upscale> ups_;
    nn::Conv out_;
    Var bias_map_;
};

// Reconstruction-only autoencoder standing in for an unknown face-swap model
// during trace training.
class ReconstructionSimulator {
public:
    explicit ReconstructionSimulator(const AutoencoderSpec& spec = {}, std::uint64_t seed = 0)
        : spec_(spec) {
        if (spec.input_resolution != spec.output_resolution)
            throw std::invalid_argument("ReconstructionSimulator: square in/out resolution required");
        Rng rng(seed);
        encoder_ = ConvEncoder(ps_, "sim.enc", spec_, rng);
        decoder_ = ConvDecoder(ps_, "sim.dec", spec_, rng);
    }

    Var forward(const Var& x) const { return decoder_.forward(encoder_.forward(x)); }

    const AutoencoderSpec& spec() const { return spec_; }
    const ConvEncoder& encoder() const { return encoder_; }
    const ConvDecoder& decoder() const { return decoder_; }
    nn::ParamStore& params() { return ps_; }
    const nn::ParamStore& params() const { return ps_; }

private:
    AutoencoderSpec spec_;
    nn::ParamStore ps_;
    ConvEncoder encoder_;
    ConvDecoder decoder_;
};

inline Image simulate_reconstruction(const ReconstructionSimulator& sim, const Image& face) {
    if (face.dim(0) != sim.spec().input_resolution || face.dim(1) != sim.spec().input_resolution)
        throw std::invalid_argument("simulate_reconstruction: face resolution mismatch");
    Var x = ad::constant(images_to_nchw({face}));
    return nchw_to_images(sim.forward(x)->value)[0];
}

}  // namespace tracemark
