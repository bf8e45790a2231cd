#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "semicon/autodiff.hpp"
#include "semicon/ops.hpp"

namespace semicon {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0;
  double max_abs_error = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double kink_distance = 0;  // of the loss at the evaluation point
  double max_rel_error() const;
};

struct GradCheckOptions {
  double step = 1e-3;
  /// Denominator floor in |a - n| / max(|a|, |n|, floor).
  double floor = 1e-3;
};

/// Compares the tape gradient of a scalar loss with central differences of
/// the same loss, element by element, for every listed parameter. build()
/// must construct the loss on the given tape reading parameter values via
/// tape.param(); it is called 2 * (total elements) + 1 times.
GradCheckReport grad_check(const std::function<Var<double>(Tape<double>&)>& build,
                           const std::vector<Parameter<double>*>& wrt,
                           const GradCheckOptions& opt = {});

/// Nearest kink of any non-smooth op the loss passes through, at the current
/// parameter values.
double kink_distance(const std::function<Var<double>(Tape<double>&)>& build);

/// For composed losses whose non-smooth inputs cannot be placed directly:
/// calls prepare(attempt) for attempt = 0, 1, ... until the loss is at least
/// `margin` away from every kink, then checks the gradient there. Throws
/// StateError when no such point turns up within max_attempts.
GradCheckReport grad_check_smooth(const std::function<void(std::uint64_t attempt)>& prepare,
                                  const std::function<Var<double>(Tape<double>&)>& build,
                                  const std::vector<Parameter<double>*>& wrt, double margin,
                                  const GradCheckOptions& opt = {}, std::uint64_t max_attempts = 1000);

/// Gradient check of one public primitive at a random point. `shape` is the
/// primary operand's shape; auxiliary operands are derived from it. The
/// output is reduced by a fixed random projection. Inputs to relu and
/// signed-sqrt are kept at least 0.05 away from the kink.
GradCheckReport grad_check(PrimitiveKind kind, const Shape& shape, std::uint64_t seed,
                           const GradCheckOptions& opt = {});

/// sum(out * R) for a seeded random R of out's shape.
Var<double> random_projection(Var<double> out, std::uint64_t seed);

}  // namespace semicon
