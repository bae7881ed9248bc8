#ifndef LIDARSEG_TESTS_FD_HARNESS_HPP
#define LIDARSEG_TESTS_FD_HARNESS_HPP

// Shared finite-difference scaffolding: reduces an op's output to a scalar
// with a fixed random projection, then compares central differences against
// the reverse-mode gradients of every tracked input.

#include <functional>
#include <memory>
#include <vector>

#include "lidarseg/autodiff.hpp"
#include "lidarseg/params.hpp"
#include "oracles.hpp"

namespace fdtest {

using lidarseg::Rng;
namespace ad = lidarseg::ad;

inline void fill_random(Rng& rng, const ad::TensorPtr<double>& t, double lo, double hi,
                        double keep_away_from_zero = 0.0) {
  for (auto& v : t->value) {
    v = rng.uniform(lo, hi);
    if (keep_away_from_zero > 0.0 && std::fabs(v) < keep_away_from_zero)
      v = v < 0.0 ? v - keep_away_from_zero : v + keep_away_from_zero;
  }
}

struct FdHarness {
  std::vector<ad::TensorPtr<double>> inputs;   // tracked tensors to differentiate
  std::vector<ad::TensorPtr<double>> buffers;  // mutable state restored per call
  std::function<ad::TensorPtr<double>(ad::Tape<double>&)> build;

  /// Returns the max relative FD-vs-autodiff error over all input elements.
  double run(Rng& rng, double step = 1e-5) const {
    std::vector<std::vector<double>> saved;
    for (const auto& b : buffers) saved.push_back(b->value);
    auto restore = [&]() {
      for (std::size_t i = 0; i < buffers.size(); ++i) buffers[i]->value = saved[i];
    };

    restore();
    ad::Tape<double> probe;
    auto probe_out = build(probe);
    auto coeffs = std::make_shared<std::vector<double>>(probe_out->size());
    for (auto& c : *coeffs) c = rng.uniform(-1.0, 1.0);

    auto forward = [&]() {
      restore();
      ad::Tape<double> tape;
      auto out = build(tape);
      double acc = 0.0;
      for (std::size_t i = 0; i < out->size(); ++i) acc += out->value[i] * (*coeffs)[i];
      return acc;
    };
    auto backward = [&]() {
      restore();
      for (const auto& in : inputs) in->zero_grad();
      ad::Tape<double> tape;
      auto out = build(tape);
      auto loss = ad::weighted_sum(tape, out, coeffs);
      tape.backward(loss);
    };
    const auto report = oracles::finite_difference_check(inputs, forward, backward, step);
    return report.max_rel_error;
  }
};

}  // namespace fdtest

#endif  // LIDARSEG_TESTS_FD_HARNESS_HPP
