#include "semicon/hashing.hpp"

#include <numeric>

#include "semicon/rng.hpp"

namespace semicon {

std::size_t CodeLayout::offset(std::size_t level) const {
  if (level > local_lens.size()) throw InvalidArgument("code level out of range");
  std::size_t off = 0;
  for (std::size_t l = 0; l < level; ++l) off += length(l);
  return off;
}

CodeLayout code_layout(std::size_t bits, std::size_t stages) {
  if (stages < 1) throw ConfigError("code layout: stage count must be >= 1");
  if (bits < stages + 1) {
    throw ConfigError("code layout: " + std::to_string(bits) + " bits cannot cover " +
                      std::to_string(stages + 1) + " code segments");
  }
  const std::size_t local = bits / (2 * stages);
  if (local == 0) {
    throw ConfigError("code layout: floor(k / 2m) = 0 for k = " + std::to_string(bits) + ", m = " +
                      std::to_string(stages));
  }
  CodeLayout layout;
  layout.bits = bits;
  layout.local_lens.assign(stages, local);
  layout.global_len = bits - stages * local;
  return layout;
}

SimilarityMatrix similarity(std::span<const std::uint32_t> query_labels,
                            std::span<const std::uint32_t> point_labels) {
  SimilarityMatrix s;
  s.queries = query_labels.size();
  s.points = point_labels.size();
  s.data.resize(s.queries * s.points);
  for (std::size_t i = 0; i < s.queries; ++i)
    for (std::size_t j = 0; j < s.points; ++j)
      s.data[i * s.points + j] = query_labels[i] == point_labels[j] ? 1 : -1;
  return s;
}

std::vector<std::int8_t> binarize(std::span<const float> v) {
  std::vector<std::int8_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] >= 0 ? 1 : -1;
  return out;
}

CodeMatrix binarize_rows(const Tensor& v) {
  if (v.rank() != 2) throw ShapeError("binarize_rows: expected rows x bits, got " + shape_str(v.shape()));
  CodeMatrix m(v.dim(0), v.dim(1));
  m.data = binarize(v.values());
  return m;
}

CodeMatrix random_codes(std::size_t rows, std::size_t bits, std::uint64_t seed) {
  Rng rng(seed);
  CodeMatrix m(rows, bits);
  for (auto& b : m.data) b = static_cast<std::int8_t>(rng.sign());
  return m;
}

double positive_pair_weight(const SimilarityMatrix& s, bool soft_constraint) {
  if (!soft_constraint) return 1.0;
  std::size_t pos = 0;
  for (auto v : s.data) pos += v > 0;
  const std::size_t neg = s.data.size() - pos;
  if (pos == 0 || neg == 0) return 1.0;
  return double(neg) / double(pos);
}

namespace {

void check_shapes(const CodeMatrix& u, const CodeMatrix& z, const SimilarityMatrix& s,
                  std::span<const std::size_t> omega) {
  if (u.bits != z.bits) {
    throw ShapeError("query codes have " + std::to_string(u.bits) + " bits, database " + std::to_string(z.bits));
  }
  if (s.queries != u.rows || s.points != z.rows || omega.size() != u.rows) {
    throw ShapeError("similarity/omega sizes do not match " + std::to_string(u.rows) + " queries x " +
                     std::to_string(z.rows) + " points");
  }
  for (std::size_t j : omega) {
    if (j >= z.rows) throw InvalidArgument("query index " + std::to_string(j) + " has no database counterpart");
  }
}

}  // namespace

HashObjective code_objective(const CodeMatrix& u, const CodeMatrix& z, const SimilarityMatrix& s,
                             std::span<const std::size_t> omega, double positive_weight) {
  check_shapes(u, z, s, omega);
  const long k = static_cast<long>(z.bits);
  HashObjective obj;
  for (std::size_t i = 0; i < u.rows; ++i) {
    const auto ui = u.row(i);
    for (std::size_t j = 0; j < z.rows; ++j) {
      const auto zj = z.row(j);
      long ip = 0;
      for (long b = 0; b < k; ++b) ip += ui[b] * zj[b];
      const double r = double(ip - k * s.at(i, j));
      obj.similarity += (s.at(i, j) > 0 ? positive_weight : 1.0) * r * r;
    }
    const auto zo = z.row(omega[i]);
    for (long b = 0; b < k; ++b) {
      const double d = zo[b] - ui[b];
      obj.quantization += d * d;
    }
  }
  return obj;
}

CodeUpdateStats update_database_codes(const CodeMatrix& u, CodeMatrix& z, const SimilarityMatrix& s,
                                      std::span<const std::size_t> omega, double beta, double gamma,
                                      double positive_weight) {
  check_shapes(u, z, s, omega);
  const std::size_t q = u.rows, p = z.rows, k = z.bits;
  CodeUpdateStats stats;
  stats.before = code_objective(u, z, s, omega, positive_weight).total(beta, gamma);

  // inner[i * p + j] = u_i . z_j, kept current as bits flip
  std::vector<long> inner(q * p, 0);
  for (std::size_t i = 0; i < q; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      long ip = 0;
      for (std::size_t b = 0; b < k; ++b) ip += u.at(i, b) * z.at(j, b);
      inner[i * p + j] = ip;
    }
  std::vector<std::vector<std::size_t>> queries_of(p);
  for (std::size_t i = 0; i < q; ++i) queries_of[omega[i]].push_back(i);

  for (std::size_t b = 0; b < k; ++b) {
    for (std::size_t j = 0; j < p; ++j) {
      const int cur = z.at(j, b);
      // objective restricted to z_jb is const + c * z_jb
      double c = 0;
      for (std::size_t i = 0; i < q; ++i) {
        const int uib = u.at(i, b);
        const long rest = inner[i * p + j] - uib * cur - static_cast<long>(k) * s.at(i, j);
        const double w = s.at(i, j) > 0 ? positive_weight : 1.0;
        c += 2.0 * beta * w * uib * double(rest);
      }
      for (std::size_t i : queries_of[j]) c -= 2.0 * gamma * u.at(i, b);
      int next = cur;
      if (c > 0) next = -1;
      else if (c < 0) next = 1;
      if (next != cur) {
        z.at(j, b) = static_cast<std::int8_t>(next);
        for (std::size_t i = 0; i < q; ++i) inner[i * p + j] += u.at(i, b) * (next - cur);
        ++stats.flips;
      }
    }
  }
  stats.after = code_objective(u, z, s, omega, positive_weight).total(beta, gamma);
  if (stats.after > stats.before + 1e-9 * std::max(1.0, stats.before)) {
    throw NumericError("database code sweep increased the objective");
  }
  return stats;
}

std::vector<std::size_t> sample_queries(std::size_t population, std::size_t n, std::uint64_t seed) {
  if (n > population) {
    throw InvalidArgument("sample_queries: cannot draw " + std::to_string(n) + " from " +
                          std::to_string(population) + " database points");
  }
  std::vector<std::size_t> idx(population);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(population - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  return idx;
}

}  // namespace semicon
