#include "semicon/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <iostream>
#include <numeric>

#include "semicon/binary_io.hpp"
#include "semicon/parallel.hpp"

namespace semicon {

PackedCodeMatrix pack_codes(const CodeMatrix& codes, std::span<const std::uint32_t> labels) {
  if (codes.bits == 0) throw InvalidArgument("pack_codes: zero-length codes");
  if (!labels.empty() && labels.size() != codes.rows) {
    throw ShapeError("pack_codes: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(codes.rows) + " codes");
  }
  PackedCodeMatrix p;
  p.bits = codes.bits;
  p.count = codes.rows;
  p.words_per_code = (codes.bits + 63) / 64;
  p.words.assign(p.count * p.words_per_code, 0);
  for (std::size_t r = 0; r < codes.rows; ++r)
    for (std::size_t b = 0; b < codes.bits; ++b) {
      const std::int8_t v = codes.at(r, b);
      if (v != 1 && v != -1) {
        throw InvalidArgument("pack_codes: entry (" + std::to_string(r) + ", " + std::to_string(b) +
                              ") = " + std::to_string(int(v)) + " is not +/-1");
      }
      if (v == 1) p.words[r * p.words_per_code + b / 64] |= std::uint64_t{1} << (b % 64);
    }
  p.labels.assign(labels.begin(), labels.end());
  if (p.labels.empty()) p.labels.assign(p.count, 0);
  return p;
}

CodeMatrix unpack_codes(const PackedCodeMatrix& p) {
  CodeMatrix m(p.count, p.bits);
  for (std::size_t r = 0; r < p.count; ++r)
    for (std::size_t b = 0; b < p.bits; ++b)
      m.at(r, b) = (p.words[r * p.words_per_code + b / 64] >> (b % 64)) & 1 ? 1 : -1;
  return m;
}

std::size_t hamming(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  if (a.size() != b.size()) {
    throw ShapeError("hamming: code lengths differ (" + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + " words)");
  }
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += static_cast<std::size_t>(std::popcount(a[i] ^ b[i]));
  return d;
}

std::vector<SearchHit> search_topk(std::span<const std::uint64_t> query, const PackedCodeMatrix& db,
                                   std::size_t k) {
  if (db.count == 0) throw InvalidArgument("search_topk: empty database");
  if (k > db.count) {
    throw InvalidArgument("search_topk: K = " + std::to_string(k) + " exceeds database size " +
                          std::to_string(db.count));
  }
  if (query.size() != db.words_per_code) throw ShapeError("search_topk: query length differs from database codes");
  std::vector<SearchHit> hits(db.count);
  for (std::size_t i = 0; i < db.count; ++i) hits[i] = {i, hamming(query, db.code(i))};
  auto less = [](const SearchHit& a, const SearchHit& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.index < b.index;
  };
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), less);
  hits.resize(k);
  return hits;
}

double average_precision(std::span<const std::uint8_t> relevance) {
  std::size_t hits = 0;
  double sum = 0;
  for (std::size_t r = 0; r < relevance.size(); ++r) {
    if (relevance[r]) {
      ++hits;
      sum += double(hits) / double(r + 1);
    }
  }
  return hits ? sum / double(hits) : 0.0;
}

EvalReport mean_average_precision(const std::vector<std::vector<std::size_t>>& rankings,
                                  std::span<const std::uint32_t> query_labels,
                                  std::span<const std::uint32_t> db_labels) {
  if (rankings.size() != query_labels.size()) {
    throw ShapeError("mAP: " + std::to_string(rankings.size()) + " rankings for " +
                     std::to_string(query_labels.size()) + " queries");
  }
  EvalReport report;
  report.query_count = rankings.size();
  std::vector<std::uint8_t> rel;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    rel.clear();
    bool any = false;
    for (std::size_t idx : rankings[q]) {
      if (idx >= db_labels.size()) throw InvalidArgument("mAP: ranking index out of range");
      rel.push_back(db_labels[idx] == query_labels[q]);
      any = any || rel.back();
    }
    if (!any) {
      ++report.skipped;
      continue;
    }
    report.average_precision.push_back(average_precision(rel));
    report.evaluated.push_back(q);
  }
  if (report.skipped) {
    std::cerr << "warning: " << report.skipped << " of " << report.query_count
              << " queries have no relevant database item and were excluded\n";
  }
  if (!report.average_precision.empty()) {
    report.map = std::accumulate(report.average_precision.begin(), report.average_precision.end(), 0.0) /
                 double(report.average_precision.size());
  }
  return report;
}

EvalReport evaluate_retrieval(const PackedCodeMatrix& db, const PackedCodeMatrix& queries) {
  if (db.bits != queries.bits) {
    throw ShapeError("evaluate: database has " + std::to_string(db.bits) + "-bit codes, queries " +
                     std::to_string(queries.bits));
  }
  std::vector<std::vector<std::size_t>> rankings(queries.count);
  parallel_for(queries.count, [&](std::size_t q0, std::size_t q1) {
    for (std::size_t q = q0; q < q1; ++q) {
      const auto hits = search_topk(queries.code(q), db, db.count);
      rankings[q].reserve(hits.size());
      for (const auto& h : hits) rankings[q].push_back(h.index);
    }
  }, db.count * 8);
  return mean_average_precision(rankings, queries.labels, db.labels);
}

std::vector<char> encode_index(const CodeIndex& index) {
  const CodeLayout& l = index.layout;
  const PackedCodeMatrix& c = index.codes;
  if (l.bits != c.bits) throw InvalidArgument("index: layout bits differ from code bits");
  if (l.bits > 0xFFFF || l.local_lens.size() > 0xFF) throw InvalidArgument("index: layout too large");
  ByteWriter w;
  w.bytes(kIndexMagic);
  w.u16(kIndexVersion);
  w.u16(static_cast<std::uint16_t>(l.bits));
  w.u8(static_cast<std::uint8_t>(l.local_lens.size()));
  for (std::size_t lv = 0; lv < l.levels(); ++lv) w.u16(static_cast<std::uint16_t>(l.length(lv)));
  w.u64(c.count);
  for (std::size_t i = 0; i < c.count; ++i) {
    w.u32(c.labels.at(i));
    for (std::uint64_t word : c.code(i)) w.u64(word);
  }
  return w.data();
}

CodeIndex decode_index(const std::vector<char>& bytes) {
  ByteReader r(bytes, "index");
  r.expect_magic(kIndexMagic);
  const std::uint16_t version = r.u16("version");
  if (version != kIndexVersion) r.fail("version", "unsupported version " + std::to_string(version));
  CodeIndex index;
  const std::uint16_t k = r.u16("k");
  if (k == 0) r.fail("k", "zero code length");
  const std::uint8_t m = r.u8("m");
  index.layout.bits = k;
  std::size_t total = 0;
  const std::size_t lengths_at = r.offset();
  for (std::size_t lv = 0; lv <= m; ++lv) {
    const std::uint16_t len = r.u16("layout-length");
    if (len == 0) r.fail("layout-length", "zero-length code segment");
    (lv == 0 ? index.layout.global_len : index.layout.local_lens.emplace_back()) = len;
    total += len;
  }
  if (total != k) r.fail_at(lengths_at, "layout-length", "segment lengths sum to " + std::to_string(total) + ", not k = " + std::to_string(k));
  const std::uint64_t count = r.u64("count");
  PackedCodeMatrix& c = index.codes;
  c.bits = k;
  c.words_per_code = (k + 63) / 64;
  const std::uint64_t record = 4 + 8 * c.words_per_code;
  if (count > r.remaining() / record || count * record != r.remaining()) {
    r.fail("count", std::to_string(count) + " codes do not match " + std::to_string(r.remaining()) +
                        " remaining bytes");
  }
  c.count = count;
  c.labels.resize(count);
  c.words.resize(count * c.words_per_code);
  const std::uint64_t pad_mask = k % 64 ? ~((std::uint64_t{1} << (k % 64)) - 1) : 0;
  for (std::size_t i = 0; i < count; ++i) {
    c.labels[i] = r.u32("label");
    for (std::size_t wi = 0; wi < c.words_per_code; ++wi) {
      const std::uint64_t word = r.u64("code-word");
      if (wi + 1 == c.words_per_code && (word & pad_mask)) r.fail("code-word", "nonzero pad bits");
      c.words[i * c.words_per_code + wi] = word;
    }
  }
  return index;
}

void save_index(const std::string& path, const CodeIndex& index) { write_file(path, encode_index(index)); }

CodeIndex load_index(const std::string& path) { return decode_index(read_file(path)); }

}  // namespace semicon
