#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "xcnn/ops.hpp"
#include "xcnn/tensor.hpp"

namespace xcnn {

/// Denominator floor for relative errors: max(|analytic|, |numeric|, floor).
template <typename T>
constexpr double default_gradcheck_floor() {
  return sizeof(T) >= sizeof(double) ? 1e-6 : 1e-4;
}

/// Compares reverse-mode gradients of the scalar `f` with respect to every
/// element of `leaves` against central finite differences. Leaf values are
/// perturbed in place and restored. Returns the worst relative error.
template <typename T>
double gradient_check(const std::function<Tensor<T>()>& f, std::span<Tensor<T>> leaves,
                      double step, double floor = default_gradcheck_floor<T>());

template <typename T>
double gradient_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x,
                      double step, double floor = default_gradcheck_floor<T>());

struct GradientCheckResult {
  double worst = 0.0;  // largest relative error over checked coordinates
  std::size_t checked = 0;
  /// Coordinates sitting on a relu or maxpool kink, where no derivative exists.
  std::size_t skipped = 0;
};

namespace detail {

// Analytic gradients in A against fourth-order central differences of the
// same function evaluated in the wider type W. A stencil that changes the
// relu/maxpool branch pattern is retried with a smaller step; coordinates
// still on a kink at the smallest step are skipped.
template <typename A, typename W, typename Fn>
GradientCheckResult mixed_precision_check(Fn&& f, std::vector<Tensor<A>> leaves, std::size_t samples,
                                          std::uint64_t seed, double step, double floor) {
  for (auto& leaf : leaves) {
    if (!leaf.is_leaf()) throw ContractViolation("gradient_check perturbs leaf tensors only");
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  f(leaves).backward();

  std::vector<Tensor<W>> wide;
  wide.reserve(leaves.size());
  std::size_t total = 0;
  for (const auto& leaf : leaves) {
    wide.emplace_back(leaf.shape(), std::vector<W>(leaf.data().begin(), leaf.data().end()));
    total += leaf.numel();
  }
  NoGradGuard no_grad;
  auto evaluate = [&](std::uint64_t& hash) {
    BranchTrace trace;
    const W value = f(wide).item();
    hash = trace.hash;
    return value;
  };
  std::uint64_t base_hash = 0;
  evaluate(base_hash);

  std::mt19937_64 rng(seed);
  GradientCheckResult result;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    auto values = wide[k].mutable_data();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (samples > 0 && total > samples) {
      // Every leaf gets a proportional share, at least a few coordinates.
      const std::size_t share = std::max<std::size_t>(4, samples * values.size() / total);
      if (share < coords.size()) {
        std::vector<std::size_t> picked;
        std::sample(coords.begin(), coords.end(), std::back_inserter(picked), share, rng);
        coords = std::move(picked);
      }
    }
    for (std::size_t i : coords) {
      const W original = values[i];
      bool smooth = false;
      W numeric = 0;
      for (W h = static_cast<W>(step); h >= static_cast<W>(step * 1e-5) && !smooth; h /= 10) {
        const W offsets[4] = {2 * h, h, -h, -2 * h};
        W fs[4] = {};
        smooth = true;
        for (int s = 0; s < 4 && smooth; ++s) {
          values[i] = original + offsets[s];
          std::uint64_t hash = 0;
          fs[s] = evaluate(hash);
          smooth = hash == base_hash;
        }
        values[i] = original;
        if (smooth) numeric = (8 * (fs[1] - fs[2]) - (fs[0] - fs[3])) / (12 * h);
      }
      if (!smooth) {
        ++result.skipped;
        continue;
      }
      const W analytic = leaves[k].has_grad() ? static_cast<W>(leaves[k].grad()[i]) : W(0);
      const W denom = std::max({std::abs(analytic), std::abs(numeric), static_cast<W>(floor)});
      result.worst = std::max(result.worst, static_cast<double>(std::abs(analytic - numeric) / denom));
      ++result.checked;
    }
  }
  return result;
}

}  // namespace detail

/// Standard-precision check: float gradients against differences of the
/// same function on double copies of the leaves. `f` must be callable with a
/// `std::vector<Tensor<float>>&` and a `std::vector<Tensor<double>>&`. With
/// `samples > 0` only about that many coordinates are checked, spread over
/// every leaf and drawn from `seed`.
template <typename Fn>
GradientCheckResult gradient_check_standard(Fn&& f, std::vector<Tensor<float>> leaves, std::size_t samples = 0,
                                            std::uint64_t seed = 0, double step = 1e-3,
                                            double floor = default_gradcheck_floor<float>()) {
  return detail::mixed_precision_check<float, double>(std::forward<Fn>(f), std::move(leaves), samples, seed,
                                                      step, floor);
}

/// Wide-precision check: double gradients against differences evaluated in
/// long double. `f` must be callable with a `std::vector<Tensor<double>>&`
/// and a `std::vector<Tensor<long double>>&`.
template <typename Fn>
GradientCheckResult gradient_check_wide(Fn&& f, std::vector<Tensor<double>> leaves, std::size_t samples = 0,
                                        std::uint64_t seed = 0, double step = 1e-4,
                                        double floor = default_gradcheck_floor<double>()) {
  return detail::mixed_precision_check<double, long double>(std::forward<Fn>(f), std::move(leaves), samples,
                                                            seed, step, floor);
}

extern template double gradient_check<float>(const std::function<Tensor<float>()>&,
                                             std::span<Tensor<float>>, double, double);
extern template double gradient_check<double>(const std::function<Tensor<double>()>&,
                                              std::span<Tensor<double>>, double, double);
extern template double gradient_check<float>(
    const std::function<Tensor<float>(const Tensor<float>&)>&, const Tensor<float>&, double,
    double);
extern template double gradient_check<double>(
    const std::function<Tensor<double>(const Tensor<double>&)>&, const Tensor<double>&, double,
    double);

}  // namespace xcnn
