#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tracemark/autodiff.hpp"
#include "tracemark/rng.hpp"

namespace tracemark::nn {

using ad::Var;

// Named parameter registry shared by the networks and the checkpoint code.
class ParamStore {
public:
    Var create(const std::string& name, std::vector<std::int64_t> shape, Rng& rng,
               double stddev) {
        Tensor t(shape);
        for (std::int64_t i = 0; i < t.numel(); ++i)
            t[i] = static_cast<float>(rng.normal(0.0, stddev));
        return add(name, std::move(t));
    }

    Var create_zeros(const std::string& name, std::vector<std::int64_t> shape) {
        return add(name, Tensor(std::move(shape)));
    }

    Var add(const std::string& name, Tensor t) {
        if (by_name_.count(name)) throw std::invalid_argument("ParamStore: duplicate " + name);
        Var v = ad::param(std::move(t));
        by_name_[name] = v;
        ordered_.emplace_back(name, v);
        return v;
    }

    const std::vector<std::pair<std::string, Var>>& entries() const { return ordered_; }

    Var get(const std::string& name) const {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw std::invalid_argument("ParamStore: missing " + name);
        return it->second;
    }

    void zero_grad() {
        for (auto& [name, v] : ordered_)
            if (v->grad.numel()) v->grad.fill(0.0f);
    }

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& [name, v] : ordered_) n += v->value.numel();
        return n;
    }

private:
    std::map<std::string, Var> by_name_;
    std::vector<std::pair<std::string, Var>> ordered_;
};

// ----------------------------------------------------------------------------
// Layers. Each holds its parameters; forward builds onto the current tape.

struct Conv {
    Var w, b;
    std::int64_t stride = 1, pad = 1;

    static Conv make(ParamStore& ps, const std::string& name, std::int64_t in_ch,
                     std::int64_t out_ch, std::int64_t k, std::int64_t stride, Rng& rng) {
        Conv c;
        const double stddev = std::sqrt(2.0 / static_cast<double>(in_ch * k * k));
        c.w = ps.create(name + ".w", {out_ch, in_ch, k, k}, rng, stddev);
        c.b = ps.create_zeros(name + ".b", {out_ch});
        c.stride = stride;
        c.pad = k / 2;
        return c;
    }

    Var operator()(const Var& x) const { return ad::conv2d(x, w, b, stride, pad); }
};

struct Dense {
    Var w, b;

    static Dense make(ParamStore& ps, const std::string& name, std::int64_t in_dim,
                      std::int64_t out_dim, Rng& rng) {
        Dense d;
        const double stddev = std::sqrt(2.0 / static_cast<double>(in_dim));
        d.w = ps.create(name + ".w", {out_dim, in_dim}, rng, stddev);
        d.b = ps.create_zeros(name + ".b", {out_dim});
        return d;
    }

    Var operator()(const Var& x) const { return ad::linear(x, w, b); }
};

// One upsampling layer: nearest 2x followed by a convolution. The follow-up
// conv keeps upsampled maps free of blocking artifacts.
struct Upscale {
    Conv conv;

    static Upscale make(ParamStore& ps, const std::string& name, std::int64_t in_ch,
                        std::int64_t out_ch, std::int64_t k, Rng& rng) {
        return Upscale{Conv::make(ps, name, in_ch, out_ch, k, 1, rng)};
    }

    Var operator()(const Var& x) const { return conv(ad::upsample_nearest2(x)); }
};

// ----------------------------------------------------------------------------
// Adam

struct AdamConfig {
    double lr = 2.5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(std::vector<Var> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
        for (const auto& p : params_) {
            m_.emplace_back(p->value.shape(), 0.0f);
            v_.emplace_back(p->value.shape(), 0.0f);
        }
    }

    static Adam over(const ParamStore& ps, AdamConfig cfg = {}) {
        std::vector<Var> params;
        for (const auto& [name, v] : ps.entries()) params.push_back(v);
        return Adam(std::move(params), cfg);
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Var& p = params_[i];
            if (p->grad.numel() == 0) continue;
            Tensor& m = m_[i];
            Tensor& v = v_[i];
            for (std::int64_t j = 0; j < p->value.numel(); ++j) {
                const double g = p->grad[j];
                m[j] = static_cast<float>(cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g);
                v[j] = static_cast<float>(cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g);
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                p->value[j] -= static_cast<float>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    void set_lr(double lr) { cfg_.lr = lr; }

private:
    std::vector<Var> params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace tracemark::nn
