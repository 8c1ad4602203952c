#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ovml/parameter.hpp"
#include "ovml/rng.hpp"

namespace ovml {

struct GradCheckResult {
    double max_rel_error = 0.0;
    int coords_checked = 0;
};

// Central-difference check of backprop gradients for one parameter.
// loss_fn must rebuild the forward pass from current parameter values and
// return the scalar loss; grad_fn must run backprop and leave gradients in
// the store. Intended for double-precision models.
template <typename T>
GradCheckResult finite_diff_grad_check(ParameterStore<T>& store, const std::string& param_name,
                                       const std::function<double()>& loss_fn,
                                       const std::function<void()>& grad_fn, double epsilon,
                                       std::vector<std::size_t> coords) {
    Parameter<T>& p = store.get(param_name);
    if (coords.empty()) throw std::invalid_argument("grad check: no coordinates");
    for (std::size_t c : coords)
        if (c >= p.values.numel()) throw std::invalid_argument("grad check: coord out of range");

    const double l0 = loss_fn();
    const double l1 = loss_fn();
    if (l0 != l1) throw std::runtime_error("loss not reproducible");

    store.zero_grads();
    grad_fn();
    std::vector<double> analytic(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i)
        analytic[i] = static_cast<double>(p.grad[coords[i]]);

    GradCheckResult res;
    res.coords_checked = static_cast<int>(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const T saved = p.values[coords[i]];
        p.values[coords[i]] = static_cast<T>(static_cast<double>(saved) + epsilon);
        const double lp = loss_fn();
        p.values[coords[i]] = static_cast<T>(static_cast<double>(saved) - epsilon);
        const double lm = loss_fn();
        p.values[coords[i]] = saved;
        const double numeric = (lp - lm) / (2.0 * epsilon);
        const double rel =
            std::abs(analytic[i] - numeric) / (std::abs(numeric) + 1e-12);
        res.max_rel_error = std::max(res.max_rel_error, rel);
    }
    return res;
}

// Deterministic sample of coordinate indices for large parameters.
inline std::vector<std::size_t> sample_coords(std::size_t numel, std::size_t count,
                                              std::uint64_t seed) {
    std::vector<std::size_t> out;
    if (numel == 0) return out;
    if (count >= numel) {
        out.resize(numel);
        for (std::size_t i = 0; i < numel; ++i) out[i] = i;
        return out;
    }
    Rng rng(seed);
    std::vector<std::uint8_t> taken(numel, 0);
    while (out.size() < count) {
        std::size_t i = static_cast<std::size_t>(rng.next_below(numel));
        if (!taken[i]) {
            taken[i] = 1;
            out.push_back(i);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace ovml
