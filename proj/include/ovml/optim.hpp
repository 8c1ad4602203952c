#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ovml/parameter.hpp"
#include "ovml/tensor.hpp"

namespace ovml {

struct AdamWConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    // name-prefix overrides, first match wins (e.g. 0 decay for layers
    // initialized from backbone weights)
    std::vector<std::pair<std::string, double>> weight_decay_overrides;

    double decay_for(const std::string& name) const {
        for (const auto& [prefix, wd] : weight_decay_overrides)
            if (name.rfind(prefix, 0) == 0) return wd;
        return weight_decay;
    }
};

// Decoupled-weight-decay Adam. Frozen parameters are never touched.
template <typename T>
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {
        if (cfg.lr <= 0) throw std::invalid_argument("adamw: lr must be positive");
    }

    void set_lr(double lr) {
        if (lr <= 0) throw std::invalid_argument("adamw: lr must be positive");
        cfg_.lr = lr;
    }
    double lr() const { return cfg_.lr; }

    void step(ParameterStore<T>& store) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (std::size_t i = 0; i < store.size(); ++i) {
            Parameter<T>& p = store.at(i);
            if (!p.trainable) continue;
            Moments& mom = moments_[p.name];
            if (mom.m.dims() != p.values.dims()) {
                mom.m = Tensor<double>(p.values.dims());
                mom.v = Tensor<double>(p.values.dims());
            }
            const bool has_grad = p.grad.same_shape(p.values);
            const double wd = cfg_.decay_for(p.name);
            for (std::size_t j = 0; j < p.values.numel(); ++j) {
                const double g = has_grad ? static_cast<double>(p.grad[j]) : 0.0;
                mom.m[j] = cfg_.beta1 * mom.m[j] + (1.0 - cfg_.beta1) * g;
                mom.v[j] = cfg_.beta2 * mom.v[j] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = mom.m[j] / bc1;
                const double vhat = mom.v[j] / bc2;
                double x = static_cast<double>(p.values[j]);
                x -= cfg_.lr * wd * x;
                x -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
                p.values[j] = static_cast<T>(x);
            }
        }
    }

    std::int64_t steps_taken() const { return t_; }

private:
    struct Moments {
        Tensor<double> m;
        Tensor<double> v;
    };
    AdamWConfig cfg_;
    std::int64_t t_ = 0;
    std::map<std::string, Moments> moments_;
};

}  // namespace ovml
