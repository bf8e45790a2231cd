#include "semicon/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "semicon/rng.hpp"

namespace semicon {

double GradCheckReport::max_rel_error() const {
  double m = 0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

GradCheckReport grad_check(const std::function<Var<double>(Tape<double>&)>& build,
                           const std::vector<Parameter<double>*>& wrt, const GradCheckOptions& opt) {
  for (Parameter<double>* p : wrt) p->zero_grad();
  GradCheckReport report;
  {
    Tape<double> tape;
    Var<double> loss = build(tape);
    tape.backward(loss);
    report.kink_distance = tape.kink_distance();
  }
  auto eval = [&] {
    Tape<double> tape;
    return build(tape).value()[0];
  };
  for (Parameter<double>* p : wrt) {
    GradCheckEntry entry{p->name};
    const std::vector<double> analytic = p->grad;
    auto& w = p->value.buffer();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + opt.step;
      const double up = eval();
      w[i] = orig - opt.step;
      const double down = eval();
      w[i] = orig;
      const double numeric = (up - down) / (2 * opt.step);
      const double abs_err = std::abs(analytic[i] - numeric);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), opt.floor});
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      entry.max_rel_error = std::max(entry.max_rel_error, abs_err / denom);
    }
    p->zero_grad();
    report.entries.push_back(entry);
  }
  return report;
}

double kink_distance(const std::function<Var<double>(Tape<double>&)>& build) {
  Tape<double> tape;
  build(tape);
  return tape.kink_distance();
}

GradCheckReport grad_check_smooth(const std::function<void(std::uint64_t)>& prepare,
                                  const std::function<Var<double>(Tape<double>&)>& build,
                                  const std::vector<Parameter<double>*>& wrt, double margin,
                                  const GradCheckOptions& opt, std::uint64_t max_attempts) {
  for (std::uint64_t attempt = 0; attempt < max_attempts; ++attempt) {
    prepare(attempt);
    if (kink_distance(build) >= margin) return grad_check(build, wrt, opt);
  }
  throw StateError("grad_check_smooth: no evaluation point " + std::to_string(margin) + " away from every kink in " +
                   std::to_string(max_attempts) + " attempts");
}

Var<double> random_projection(Var<double> out, std::uint64_t seed) {
  Rng rng(seed);
  TensorD r(out.shape());
  for (auto& v : r.buffer()) v = rng.uniform(-1, 1);
  return ops::sum(ops::hadamard(out, out.tape->constant(std::move(r))));
}

namespace {

TensorD random_tensor(const Shape& shape, Rng& rng, double kink_margin = 0) {
  TensorD t(shape);
  for (auto& v : t.buffer()) {
    do {
      v = rng.normal();
    } while (std::abs(v) < kink_margin);
  }
  return t;
}

}  // namespace

GradCheckReport grad_check(PrimitiveKind kind, const Shape& shape, std::uint64_t seed,
                           const GradCheckOptions& opt) {
  Rng rng(seed);
  std::vector<std::unique_ptr<Parameter<double>>> owned;
  auto add = [&](std::string name, TensorD v) {
    owned.push_back(std::make_unique<Parameter<double>>(std::move(name), std::move(v)));
    return owned.back().get();
  };
  const ChannelView view = channel_view(shape);
  const std::size_t C = view.channels;
  OpAttrs<double> attrs;
  BatchNormState<double> bn(C);
  attrs.bn = &bn;
  attrs.scale = 0.7;
  attrs.delta = 1e-5;

  const bool kinked = kind == PrimitiveKind::kRelu || kind == PrimitiveKind::kSignedSqrt;
  add("x", random_tensor(shape, rng, kinked ? 0.05 : 0.0));
  switch (kind) {
    case PrimitiveKind::kMatmul:
      if (shape.size() != 2) throw ShapeError("grad_check(matmul): shape must be rank 2");
      add("b", random_tensor({shape[1], 3}, rng));
      break;
    case PrimitiveKind::kPointwiseLinear:
      add("weight", random_tensor({C, C}, rng));
      add("bias", random_tensor({C}, rng));
      break;
    case PrimitiveKind::kGroupedPointwiseLinear:
      attrs.groups = C % 2 == 0 ? 2 : 1;
      add("weight", random_tensor({C, C / attrs.groups}, rng));
      add("bias", random_tensor({C}, rng));
      break;
    case PrimitiveKind::kHadamard:
    case PrimitiveKind::kResidualAdd:
    case PrimitiveKind::kConcatChannels:
      add("b", random_tensor(shape, rng));
      break;
    case PrimitiveKind::kBatchNorm:
      add("gamma", random_tensor({C}, rng));
      add("beta", random_tensor({C}, rng));
      break;
    default:
      break;
  }
  std::vector<Parameter<double>*> wrt;
  for (auto& p : owned) wrt.push_back(p.get());
  const std::uint64_t proj_seed = mix_seed(seed, 17);
  auto build = [&](Tape<double>& tape) {
    std::vector<Var<double>> in;
    for (auto* p : wrt) in.push_back(tape.param(*p));
    Var<double> out = ops::forward<double>(kind, in, attrs);
    return random_projection(out, proj_seed);
  };
  return grad_check(build, wrt, opt);
}

}  // namespace semicon
