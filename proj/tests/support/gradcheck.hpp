#ifndef SRMT_TEST_GRADCHECK_HPP
#define SRMT_TEST_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "srmt/model.hpp"

namespace srmt::test {

struct TensorCheck {
    std::string name;
    int coords = 0;
    double max_rel = 0.0;
    double max_abs = 0.0;
    int retried = 0;  // coordinates that needed the smaller step
    int kinks = 0;    // of those, how many had one-sided slopes that disagree
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true gradient is ~0
/// from turning rounding noise into a large ratio.
inline double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct FiniteDifferenceOptions {
    double h = 1e-5;
    double floor = 1e-6;
    /// When a coordinate misses `retry_tol` at `h`, it is measured again at `retry_h`
    /// (0 disables). A ReLU boundary inside [x-h, x+h] breaks the central difference
    /// there but not at a step that no longer straddles it.
    double retry_h = 0.0;
    double retry_tol = 1e-3;
};

/*
 * Central differences of `loss` on `coords` distinct random entries of every tensor that
 * `select` accepts. `model` is perturbed in place and restored.
 */
inline std::vector<TensorCheck> finite_difference_check(Model<double>& model, const Parameters<double>& grads,
                                                        const std::function<double(const Model<double>&)>& loss,
                                                        int coords, Rng& rng, const FiniteDifferenceOptions& fd = {},
                                                        const std::function<bool(const std::string&)>& select = {}) {
    std::vector<TensorCheck> out;
    auto params = named_tensors(model.params);
    auto g = named_tensors(grads);
    for (std::size_t t = 0; t < params.size(); ++t) {
        const auto& name = params[t].first;
        if (select && !select(name)) continue;
        Matrix<double>& w = *params[t].second;
        std::vector<Index> idx(static_cast<std::size_t>(w.size()));
        std::iota(idx.begin(), idx.end(), Index{0});
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(coords)));

        TensorCheck check{name, static_cast<int>(idx.size()), 0.0, 0.0};
        for (Index i : idx) {
            const double saved = w.data()[i];
            auto at = [&](double x) {
                w.data()[i] = x;
                const double v = loss(model);
                w.data()[i] = saved;
                return v;
            };
            const double analytic = g[t].second->data()[i];
            const double up = at(saved + fd.h), down = at(saved - fd.h);
            double numeric = (up - down) / (2 * fd.h);
            if (fd.retry_h > 0 && relative_error(analytic, numeric, fd.floor) > fd.retry_tol) {
                const double mid = loss(model);
                const double fwd = (up - mid) / fd.h, bwd = (mid - down) / fd.h;
                ++check.retried;
                if (relative_error(fwd, bwd, fd.floor) > fd.retry_tol) ++check.kinks;
                numeric = (at(saved + fd.retry_h) - at(saved - fd.retry_h)) / (2 * fd.retry_h);
            }
            check.max_rel = std::max(check.max_rel, relative_error(analytic, numeric, fd.floor));
            check.max_abs = std::max(check.max_abs, std::abs(analytic - numeric));
        }
        out.push_back(check);
    }
    return out;
}

}  // namespace srmt::test

#endif
