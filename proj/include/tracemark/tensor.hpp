#pragma once

#include <algorithm>
#include <cassert>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace tracemark {

// Dense row-major float tensor. Shapes are small vectors of extents.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> shape, float fill = 0.0f)
        : shape_(std::move(shape)),
          data_(static_cast<std::size_t>(count_(shape_)), fill) {}

    static Tensor from_data(std::vector<std::int64_t> shape, std::vector<float> data) {
        Tensor t;
        if (count_(shape) != static_cast<std::int64_t>(data.size()))
            throw std::invalid_argument("Tensor::from_data: shape/data size mismatch");
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        return t;
    }

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t ndim() const { return shape_.size(); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    float& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    float operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    Tensor reshaped(std::vector<std::int64_t> shape) const {
        Tensor t = *this;
        if (count_(shape) != numel())
            throw std::invalid_argument("Tensor::reshaped: element count mismatch");
        t.shape_ = std::move(shape);
        return t;
    }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

    double sum() const {
        double s = 0.0;
        for (float v : data_) s += v;
        return s;
    }

    double mean() const { return numel() ? sum() / static_cast<double>(numel()) : 0.0; }

    float max_abs() const {
        float m = 0.0f;
        for (float v : data_) m = std::max(m, std::abs(v));
        return m;
    }

    bool all_finite() const {
        for (float v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static std::string shape_str(const std::vector<std::int64_t>& s) {
        std::string out = "(";
        for (std::size_t i = 0; i < s.size(); ++i) {
            out += std::to_string(s[i]);
            if (i + 1 < s.size()) out += ",";
        }
        return out + ")";
    }

private:
    static std::int64_t count_(const std::vector<std::int64_t>& s) {
        std::int64_t n = 1;
        for (auto d : s) {
            if (d < 0) throw std::invalid_argument("Tensor: negative extent");
            n *= d;
        }
        return s.empty() ? 0 : n;
    }

    std::vector<std::int64_t> shape_;
    std::vector<float> data_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                    Tensor::shape_str(a.shape()) + " vs " +
                                    Tensor::shape_str(b.shape()));
}

}  // namespace tracemark
