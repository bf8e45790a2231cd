// Acceptance run: one PASS/FAIL line per criterion. Arguments select a subset
// of criteria by number; no arguments runs all nine.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "semicon/checkpoint.hpp"
#include "semicon/gradcheck.hpp"
#include "semicon/icon.hpp"
#include "semicon/parallel.hpp"
#include "semicon/retrieval.hpp"
#include "semicon/sem.hpp"
#include "semicon/trainer.hpp"
#include "test_util.hpp"

using namespace semicon;
using testutil::random_tensor;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = true;
  std::string detail;
};

// ---------------------------------------------------------------- 1

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  const std::vector<PrimitiveKind> kinds{
      PrimitiveKind::kMatmul,         PrimitiveKind::kPointwiseLinear, PrimitiveKind::kGroupedPointwiseLinear,
      PrimitiveKind::kSoftmax,        PrimitiveKind::kTanh,            PrimitiveKind::kRelu,
      PrimitiveKind::kHadamard,       PrimitiveKind::kSignedSqrt,      PrimitiveKind::kBatchNorm,
      PrimitiveKind::kGlobalAvgPool,  PrimitiveKind::kResidualAdd,     PrimitiveKind::kConcatChannels,
      PrimitiveKind::kScale};
  std::map<std::string, double> worst;
  const std::uint64_t seeds = 10;
  for (PrimitiveKind kind : kinds) {
    const Shape shape = kind == PrimitiveKind::kMatmul ? Shape{3, 4} : Shape{2, 4, 2, 3};
    for (std::uint64_t s = 0; s < seeds; ++s) {
      worst[kind_name(kind)] = std::max(worst[kind_name(kind)], grad_check(kind, shape, s).max_rel_error());
    }
  }
  for (std::uint64_t s = 0; s < seeds; ++s) {
    Rng rng(s);
    Parameter<double> m("m", random_tensor({2, 1, 3, 3}, rng, -2, 2));
    const double e = grad_check([&](Tape<double>& t) { return random_projection(sem_transform(t.param(m), 0.3), s); },
                                {&m}).max_rel_error();
    worst["sem-transform"] = std::max(worst["sem-transform"], e);
  }
  for (std::uint64_t s = 0; s < seeds; ++s) {
    Rng rng(s);
    ParamStore<double> store;
    SemAttention<double> sem(store, "sem", 3, StageConfig{}, rng);
    Parameter<double> x("x", TensorD({2, 3, 3, 3}));
    const double e = testutil::composed_check(store, x, s, [&](Tape<double>& t) {
      return random_projection(ops::concat_channels(sem.run_stages(t, t.param(x), true).masked), s + 100);
    }).max_rel_error();
    worst["sem-stages"] = std::max(worst["sem-stages"], e);
  }
  for (std::uint64_t s = 0; s < seeds; ++s) {
    for (bool grouped : {true, false}) {
      Rng rng(s);
      ParamStore<double> store;
      IconBlock<double> block(store, "icon", 4, {2, 1e-5, grouped}, rng);
      Parameter<double> x("x", TensorD({2, 4, 2, 2}));
      const double e = testutil::composed_check(store, x, s, [&](Tape<double>& t) {
        return random_projection(block(t, t.param(x), true), s + 200);
      }).max_rel_error();
      worst["icon-block"] = std::max(worst["icon-block"], e);
    }
  }
  for (std::uint64_t s = 0; s < seeds; ++s) {
    Rng rng(s);
    const std::size_t p = 7, q = 4, k = 5;
    const CodeMatrix z = random_codes(p, k, s + 1);
    std::vector<std::uint32_t> labels(p), ql;
    for (auto& l : labels) l = static_cast<std::uint32_t>(rng.below(2));
    const auto omega = sample_queries(p, q, s + 2);
    for (std::size_t j : omega) ql.push_back(labels[j]);
    const auto sim = similarity(ql, labels);
    Parameter<double> w("w", random_tensor({q, k}, rng));
    const double e = grad_check(
        [&](Tape<double>& t) { return hash_loss(ops::tanh(t.param(w)), z, sim, omega, 1.0, 200.0).total; }, {&w})
                         .max_rel_error();
    worst["hash-loss"] = std::max(worst["hash-loss"], e);
  }
  const double secs = seconds_since(t0);
  Verdict v;
  std::string name;
  double max_err = 0;
  for (const auto& [n, e] : worst) {
    if (e > max_err) max_err = e, name = n;
    if (e > 1e-3) v.pass = false;
  }
  if (secs > 60) v.pass = false;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%zu checks x %llu seeds, worst rel err %.2e (%s), %.1f s", worst.size(),
                static_cast<unsigned long long>(seeds), max_err, name.c_str(), secs);
  v.detail = buf;
  return v;
}

// ---------------------------------------------------------------- 2

Verdict sem_properties() {
  Verdict v;
  double worst_mean = 0;
  std::size_t order_violations = 0;
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t h = 2 + rng.below(7), w = 2 + rng.below(7);
    TensorD m = random_tensor({1, h, w}, rng, -3, 3);
    Tape<double> t;
    const auto y = sem_transform(t.constant(m), 0.3).value();
    double mean = 0;
    for (double x : y.values()) mean += x;
    worst_mean = std::max(worst_mean, std::abs(mean / double(y.size()) - 1));
    for (std::size_t i = 0; i < m.size(); ++i)
      for (std::size_t j = 0; j < m.size(); ++j)
        if (m[i] > m[j] && !(y[i] < y[j])) ++order_violations;
  }
  bool ones = true;
  for (double c : {-2.0, 0.0, 0.5, 7.0}) {
    Tape<double> t;
    for (double x : sem_transform(t.constant(TensorD({1, 4, 4}, c)), 0.3).value().values()) ones = ones && x == 1.0;
  }
  v.pass = worst_mean <= 1e-5 && order_violations == 0 && ones;
  char buf[200];
  std::snprintf(buf, sizeof buf, "1000 maps: max |mean - 1| %.1e, order violations %zu, constant map -> ones %s",
                worst_mean, order_violations, ones ? "yes" : "no");
  v.detail = buf;
  return v;
}

// ---------------------------------------------------------------- 3

Verdict icon_properties() {
  Verdict v;
  double worst_row = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    const std::size_t n = 1 + rng.below(4), d = 1 + rng.below(4);
    const Shape shape{2, n * d, 1 + rng.below(3), 1 + rng.below(3)};
    Tape<double> t;
    auto r = portion_attention(t.constant(random_tensor(shape, rng, -3, 3)), t.constant(random_tensor(shape, rng, -3, 3)),
                               t.constant(random_tensor(shape, rng)), n, 1e-5);
    const auto& w = r.weights.value();
    for (std::size_t row = 0; row < w.size() / d; ++row) {
      double sum = 0;
      for (std::size_t j = 0; j < d; ++j) sum += w[row * d + j];
      worst_row = std::max(worst_row, std::abs(sum - 1));
    }
  }
  // Identity attention leaves every portion unchanged, so a full pass is split -> recombine -> restore.
  std::size_t roundtrip_failures = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(mix_seed(s, 3));
    const std::size_t n = 1 + rng.below(4), d = 1 + rng.below(4);
    const TensorD g = random_tensor({n * d, 1 + rng.below(3), 1 + rng.below(3)}, rng);
    if (!(restore_order(recombine(split_channels(g, n))) == g)) ++roundtrip_failures;
  }
  bool single = true;
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(s);
    const Shape shape{1, 5, 2, 2};
    const TensorD val = random_tensor(shape, rng);
    Tape<double> t;
    auto r = portion_attention(t.constant(random_tensor(shape, rng)), t.constant(random_tensor(shape, rng)),
                               t.constant(val), 5, 1e-5);
    single = single && r.output.value() == val;
  }
  v.pass = worst_row <= 1e-6 && roundtrip_failures == 0 && single;
  char buf[200];
  std::snprintf(buf, sizeof buf, "row-sum err %.1e, round-trip failures %zu/100, d = 1 returns V %s", worst_row,
                roundtrip_failures, single ? "exactly" : "NOT exactly");
  v.detail = buf;
  return v;
}

// ---------------------------------------------------------------- 4

double objective_oracle(const CodeMatrix& u, const CodeMatrix& z, const SimilarityMatrix& s,
                        const std::vector<std::size_t>& omega, double beta, double gamma) {
  double sim = 0, quant = 0;
  for (std::size_t i = 0; i < u.rows; ++i) {
    for (std::size_t j = 0; j < z.rows; ++j) {
      double ip = 0;
      for (std::size_t b = 0; b < u.bits; ++b) ip += u.at(i, b) * z.at(j, b);
      const double r = ip - double(u.bits) * s.at(i, j);
      sim += r * r;
    }
    for (std::size_t b = 0; b < u.bits; ++b) {
      const double d = z.at(omega[i], b) - u.at(i, b);
      quant += d * d;
    }
  }
  return beta * sim + gamma * quant;
}

Verdict hash_optimization() {
  std::size_t increases = 0, mismatches = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(mix_seed(seed, 4));
    const std::size_t p = 1 + rng.below(4), k = 1 + rng.below(4), q = 1 + rng.below(p);
    CodeMatrix z = random_codes(p, k, rng.next_u64());
    const CodeMatrix u = random_codes(q, k, rng.next_u64());
    const auto omega = sample_queries(p, q, rng.next_u64());
    std::vector<std::uint32_t> labels(p), ql;
    for (auto& l : labels) l = static_cast<std::uint32_t>(rng.below(2));
    for (std::size_t j : omega) ql.push_back(labels[j]);
    const auto s = similarity(ql, labels);
    CodeMatrix expect = z;
    for (std::size_t b = 0; b < k; ++b)
      for (std::size_t j = 0; j < p; ++j) {
        const std::int8_t cur = expect.at(j, b);
        expect.at(j, b) = 1;
        const double plus = objective_oracle(u, expect, s, omega, 1.0, 200.0);
        expect.at(j, b) = -1;
        const double minus = objective_oracle(u, expect, s, omega, 1.0, 200.0);
        expect.at(j, b) = plus < minus ? 1 : minus < plus ? -1 : cur;
      }
    const double before = objective_oracle(u, z, s, omega, 1.0, 200.0);
    update_database_codes(u, z, s, omega, 1.0, 200.0);
    if (objective_oracle(u, z, s, omega, 1.0, 200.0) > before) ++increases;
    if (!(z == expect)) ++mismatches;
  }
  CodeMatrix z(2, 2);
  z.at(1, 1) = -1;
  const std::vector<std::uint32_t> labels{0, 1};
  const std::vector<std::size_t> omega{0, 1};
  Tape<double> tape;
  const auto terms = hash_loss(tape.constant(TensorD({2, 2}, {0.5, -0.5, 0.2, 0.8})), z, similarity(labels, labels),
                               omega, 1.0, 200.0);
  const double fixture_err = std::abs(terms.total.value()[0] - 1304.76);
  Verdict v;
  v.pass = increases == 0 && mismatches == 0 && fixture_err <= 1e-6;
  char buf[200];
  std::snprintf(buf, sizeof buf, "50 instances: %zu increases, %zu oracle mismatches; 2x2 fixture err %.1e", increases,
                mismatches, fixture_err);
  v.detail = buf;
  return v;
}

// ---------------------------------------------------------------- 5

Verdict retrieval_correctness() {
  std::size_t mismatched = 0;
  const CodeMatrix db = random_codes(200, 48, 5);
  const CodeMatrix q = random_codes(50, 48, 6);
  const auto pdb = pack_codes(db), pq = pack_codes(q);
  for (std::size_t i = 0; i < q.rows; ++i) {
    std::vector<SearchHit> oracle;
    for (std::size_t j = 0; j < db.rows; ++j) {
      long dot = 0;
      for (std::size_t b = 0; b < 48; ++b) dot += q.at(i, b) * db.at(j, b);
      oracle.push_back({j, static_cast<std::size_t>((48 - dot) / 2)});
    }
    std::stable_sort(oracle.begin(), oracle.end(), [](auto& a, auto& b) { return a.distance < b.distance; });
    if (search_topk(pq.code(i), pdb, 200) != oracle) ++mismatched;
  }
  const CodeMatrix r = random_codes(100, 48, 7);
  const bool roundtrip = unpack_codes(pack_codes(r)) == r;
  const std::vector<std::uint8_t> rel{1, 0, 1};
  const double ap = average_precision(rel);
  Verdict v;
  v.pass = mismatched == 0 && roundtrip && std::abs(ap - 0.8333) <= 1e-4;
  char buf[200];
  std::snprintf(buf, sizeof buf, "top-K mismatches %zu/50, pack round-trip %s, AP[1,0,1] = %.4f", mismatched,
                roundtrip ? "exact" : "BROKEN", ap);
  v.detail = buf;
  return v;
}

// ---------------------------------------------------------------- 6, 7

struct RunOutcome {
  double map = 0;
  double seconds = 0;
};

RunOutcome train_and_score(const RunConfig& cfg) {
  const DatasetSplit split = generate_synthetic(cfg.data);
  const auto t0 = Clock::now();
  const TrainResult r = train(cfg, split.database);
  RunOutcome out;
  out.seconds = seconds_since(t0);
  const auto db = pack_codes(r.model->encode(split.database), split.database.labels);
  const auto q = pack_codes(r.model->encode(split.query), split.query.labels);
  out.map = evaluate_retrieval(db, q).map;
  return out;
}

std::map<std::string, RunOutcome> g_runs;  // "variant/seed" -> outcome, shared by 6 and 7

RunOutcome cached_run(const std::string& variant, std::uint64_t seed) {
  const std::string key = variant + "/" + std::to_string(seed);
  if (auto it = g_runs.find(key); it != g_runs.end()) return it->second;
  RunConfig cfg = parse_config("");
  cfg.seed = seed;
  if (variant != "full") cfg.model.icon_enabled = false;
  if (variant == "single-stage") cfg.model.stages.stages = 1;
  const RunOutcome r = train_and_score(cfg);
  std::fprintf(stderr, "  %-13s seed %llu: mAP %.4f in %.0f s\n", variant.c_str(), static_cast<unsigned long long>(seed),
               r.map, r.seconds);
  return g_runs[key] = r;
}

Verdict end_to_end() {
  const RunOutcome r = cached_run("full", 1);
  Verdict v;
  v.pass = r.map >= 0.85 && r.seconds <= 600;
  char buf[200];
  std::snprintf(buf, sizeof buf, "default config seed 1: mAP %.4f (bar 0.85), training %.0f s on %zu worker(s) (bar 600 s)",
                r.map, r.seconds, worker_count());
  v.detail = buf;
  return v;
}

Verdict ablation() {
  std::map<std::string, double> mean;
  for (const char* variant : {"full", "no-icon", "single-stage"}) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) mean[variant] += cached_run(variant, seed).map / 3;
  }
  const double full = mean["full"], no_icon = mean["no-icon"], single = mean["single-stage"];
  Verdict v;
  v.pass = full >= no_icon - 0.02 && no_icon >= single - 0.02;
  char buf[200];
  std::snprintf(buf, sizeof buf, "mean mAP over 3 seeds: full %.4f, no-ICON %.4f, single-stage %.4f (band 0.02)", full,
                no_icon, single);
  v.detail = buf;
  return v;
}

// ---------------------------------------------------------------- 8

Verdict layout() {
  struct Case {
    std::size_t k, global, local;
  };
  bool ok = true;
  std::string detail;
  for (const Case& c : {Case{12, 6, 2}, Case{24, 12, 4}, Case{48, 24, 8}, Case{32, 17, 5}}) {
    const CodeLayout l = code_layout(c.k, 3);
    std::size_t total = l.global_len;
    for (std::size_t x : l.local_lens) total += x;
    ok = ok && l.global_len == c.global && l.local_lens == std::vector<std::size_t>(3, c.local) && total == c.k;
    detail += std::to_string(c.k) + " -> (" + std::to_string(l.global_len) + ", 3 x " +
              std::to_string(l.local_lens.at(0)) + ")  ";
  }
  return {ok, detail};
}

// ---------------------------------------------------------------- 9

Verdict determinism() {
  RunConfig cfg = parse_config("");
  cfg.train.iterations = 2;
  cfg.train.epochs = 2;
  cfg.seed = 9;
  const DatasetSplit split = generate_synthetic(cfg.data);
  auto artifacts = [&](std::size_t workers) {
    set_worker_count(workers);
    const TrainResult r = train(cfg, split.database);
    const auto ckpt = encode_checkpoint(r.model->state());
    const auto index = encode_index({r.model->layout(), pack_codes(r.model->encode(split.query), split.query.labels)});
    set_worker_count(0);
    return std::make_pair(ckpt, index);
  };
  const auto a = artifacts(0), b = artifacts(0), c = artifacts(3);
  Verdict v;
  v.pass = a == b && a == c;
  v.detail = std::string("checkpoint ") + (a.first == b.first && a.first == c.first ? "identical" : "DIFFERS") +
             " (" + std::to_string(a.first.size()) + " bytes), index " +
             (a.second == b.second && a.second == c.second ? "identical" : "DIFFERS") + " (" +
             std::to_string(a.second.size()) + " bytes), across 2 runs and a 3-worker run";
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  const std::vector<std::pair<int, std::function<Verdict()>>> criteria{
      {1, gradient_suite}, {2, sem_properties},  {3, icon_properties}, {4, hash_optimization}, {5, retrieval_correctness},
      {6, end_to_end},     {7, ablation},        {8, layout},          {9, determinism}};
  bool all = true;
  for (const auto& [id, run] : criteria) {
    if (!wanted.empty() && !wanted.count(id)) continue;
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    all = all && v.pass;
    std::printf("criterion %d: %s  %s\n", id, v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
