#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tracemark/tensor.hpp"

namespace tracemark {

// Images are (H, W, 3) interleaved RGB, values in [0,1].
// Trace maps share the image shape but carry signed, unbounded values.
using Image = Tensor;
using TraceMap = Tensor;

inline Image make_image(std::int64_t h, std::int64_t w, float fill = 0.0f) {
    return Image({h, w, 3}, fill);
}

inline void check_image_shape(const Tensor& t, const char* what) {
    if (t.ndim() != 3 || t.dim(2) != 3)
        throw std::invalid_argument(std::string(what) + ": expected (H,W,3), got " +
                                    Tensor::shape_str(t.shape()));
}

// Snap to the 8-bit grid: v -> round(v*255)/255. Idempotent after one pass.
inline float quantize8(float v) {
    return std::round(v * 255.0f) / 255.0f;
}

inline Image quantize8(const Image& img) {
    Image out = img;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = quantize8(out[i]);
    return out;
}

// ----------------------------------------------------------------------------
// Bit sequences

class BitSequence {
public:
    explicit BitSequence(std::vector<int> bits) : bits_(std::move(bits)) {
        for (int b : bits_)
            if (b != 0 && b != 1) throw std::invalid_argument("BitSequence: entries must be 0/1");
    }

    static BitSequence zeros(std::size_t n) { return BitSequence(std::vector<int>(n, 0)); }

    template <class RngT>
    static BitSequence random(std::size_t n, RngT& rng) {
        std::vector<int> b(n);
        for (auto& x : b) x = rng.bernoulli(0.5) ? 1 : 0;
        return BitSequence(std::move(b));
    }

    static BitSequence parse(const std::string& s) {
        std::vector<int> b;
        b.reserve(s.size());
        for (char c : s) {
            if (c == '0') b.push_back(0);
            else if (c == '1') b.push_back(1);
            else throw std::invalid_argument("BitSequence::parse: expected only '0'/'1'");
        }
        return BitSequence(std::move(b));
    }

    std::string to_string() const {
        std::string s;
        for (int b : bits_) s += (b ? '1' : '0');
        return s;
    }

    std::size_t size() const { return bits_.size(); }
    int operator[](std::size_t i) const { return bits_[i]; }
    const std::vector<int>& bits() const { return bits_; }

    BitSequence complement() const {
        std::vector<int> b = bits_;
        for (auto& x : b) x = 1 - x;
        return BitSequence(std::move(b));
    }

    bool operator==(const BitSequence& o) const { return bits_ == o.bits_; }

private:
    std::vector<int> bits_;
};

struct BitProbabilities {
    std::vector<float> probs;

    std::size_t size() const { return probs.size(); }
};

// Decision rule: strictly above 0.5 reads as 1; a tie at 0.5 reads as 0.
inline BitSequence harden(const BitProbabilities& p) {
    std::vector<int> b(p.probs.size());
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = p.probs[i] > 0.5f ? 1 : 0;
    return BitSequence(std::move(b));
}

inline double bit_accuracy(const BitSequence& a, const BitSequence& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("bit_accuracy: length mismatch");
    if (a.size() == 0) throw std::invalid_argument("bit_accuracy: empty sequences");
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.size(); ++i) same += (a[i] == b[i]);
    return static_cast<double>(same) / static_cast<double>(a.size());
}

// ----------------------------------------------------------------------------
// Trace arithmetic

inline Image implant(const Image& face, const TraceMap& trace) {
    check_same_shape(face, trace, "implant");
    Image out = face;
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        float v = out[i] + trace[i];
        out[i] = std::min(1.0f, std::max(0.0f, v));
    }
    return out;
}

struct AnchorFace {
    Image image;
    std::int64_t source_count = 0;
};

inline AnchorFace compute_anchor(const std::vector<Image>& faces) {
    if (faces.empty()) throw std::invalid_argument("compute_anchor: empty face list");
    const Image& first = faces.front();
    std::vector<double> acc(static_cast<std::size_t>(first.numel()), 0.0);
    for (const Image& f : faces) {
        check_same_shape(f, first, "compute_anchor");
        for (std::int64_t i = 0; i < f.numel(); ++i) acc[static_cast<std::size_t>(i)] += f[i];
    }
    Image mean = first;
    const double n = static_cast<double>(faces.size());
    for (std::int64_t i = 0; i < mean.numel(); ++i)
        mean[i] = static_cast<float>(acc[static_cast<std::size_t>(i)] / n);
    return AnchorFace{std::move(mean), static_cast<std::int64_t>(faces.size())};
}

}  // namespace tracemark
