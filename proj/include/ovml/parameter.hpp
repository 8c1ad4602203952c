#pragma once

#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ovml/rng.hpp"
#include "ovml/tensor.hpp"

namespace ovml {

// A named model parameter. Frozen parameters keep a snapshot of their
// construction-time values and must stay bit-identical to it; trainable
// parameters may carry a snapshot too (used by weight interpolation).
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> values;
    Tensor<T> grad;
    bool trainable = false;
    std::optional<Tensor<T>> frozen_snapshot;

    void zero_grad() {
        if (!grad.same_shape(values)) grad = Tensor<T>(values.dims());
        else
            for (std::size_t i = 0; i < grad.numel(); ++i) grad[i] = T(0);
    }
};

template <typename T>
class ParameterStore {
public:
    Parameter<T>& add(const std::string& name, Tensor<T> values, bool trainable,
                      bool keep_snapshot = true) {
        if (index_.count(name)) throw std::runtime_error("duplicate parameter name: " + name);
        auto p = std::make_unique<Parameter<T>>();
        p->name = name;
        p->values = std::move(values);
        p->grad = Tensor<T>(p->values.dims());
        p->trainable = trainable;
        if (keep_snapshot) p->frozen_snapshot = p->values;
        index_[name] = params_.size();
        params_.push_back(std::move(p));
        return *params_.back();
    }

    Parameter<T>& add_init(const std::string& name, std::vector<int> dims, bool trainable,
                           std::uint64_t seed, InitScheme scheme) {
        return add(name, seeded_init<T>(std::move(dims), derive_seed(seed, name), scheme),
                   trainable);
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Parameter<T>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::runtime_error("unknown parameter: " + name);
        return *params_[it->second];
    }

    const Parameter<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::runtime_error("unknown parameter: " + name);
        return *params_[it->second];
    }

    std::size_t size() const { return params_.size(); }
    Parameter<T>& at(std::size_t i) { return *params_[i]; }
    const Parameter<T>& at(std::size_t i) const { return *params_[i]; }

    void zero_grads() {
        for (auto& p : params_) p->zero_grad();
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(params_.size());
        for (const auto& p : params_) out.push_back(p->name);
        return out;
    }

    // Marks parameters trainable iff their name is selected by `pred`.
    template <typename Pred>
    void set_trainable_where(Pred pred) {
        for (auto& p : params_) p->trainable = pred(p->name);
    }

private:
    std::vector<std::unique_ptr<Parameter<T>>> params_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace ovml
