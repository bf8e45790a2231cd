#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "semicon/hashing.hpp"

namespace semicon {

/// Bit-packed +/-1 codes: ceil(k/64) words per code, least-significant bit
/// first, -1 -> 0 and +1 -> 1, pad bits zero.
struct PackedCodeMatrix {
  std::size_t bits = 0;
  std::size_t count = 0;
  std::size_t words_per_code = 0;
  std::vector<std::uint64_t> words;
  std::vector<std::uint32_t> labels;

  std::span<const std::uint64_t> code(std::size_t i) const {
    return {words.data() + i * words_per_code, words_per_code};
  }
};

PackedCodeMatrix pack_codes(const CodeMatrix& codes, std::span<const std::uint32_t> labels = {});
CodeMatrix unpack_codes(const PackedCodeMatrix& packed);

std::size_t hamming(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b);

struct SearchHit {
  std::size_t index = 0;
  std::size_t distance = 0;
  friend bool operator==(const SearchHit&, const SearchHit&) = default;
};

/// The K nearest codes by Hamming distance, ties broken by ascending index.
std::vector<SearchHit> search_topk(std::span<const std::uint64_t> query, const PackedCodeMatrix& db,
                                   std::size_t k);

struct EvalReport {
  double map = 0;
  std::vector<double> average_precision;  // one per evaluated query
  std::vector<std::size_t> evaluated;     // query positions that had relevant items
  std::size_t query_count = 0;
  std::size_t skipped = 0;                // queries with no relevant item
};

/// AP of one ranking: mean over relevant positions r of hits_so_far / r.
double average_precision(std::span<const std::uint8_t> relevance);

/// mAP over full rankings; relevance = equal labels. Queries without any
/// relevant database item are skipped and counted.
EvalReport mean_average_precision(const std::vector<std::vector<std::size_t>>& rankings,
                                  std::span<const std::uint32_t> query_labels,
                                  std::span<const std::uint32_t> db_labels);

/// Ranks the whole database for every query code and scores it.
EvalReport evaluate_retrieval(const PackedCodeMatrix& db, const PackedCodeMatrix& queries);

/// Index file: layout + packed codes.
struct CodeIndex {
  CodeLayout layout;
  PackedCodeMatrix codes;
};

inline constexpr char kIndexMagic[] = "SMCN";
inline constexpr std::uint16_t kIndexVersion = 1;

/// "SMCN", u16 version, u16 k, u8 m, (m+1) u16 segment lengths (global
/// first), u64 count, then per code: u32 label + ceil(k/64) u64 words.
std::vector<char> encode_index(const CodeIndex& index);
CodeIndex decode_index(const std::vector<char>& bytes);
void save_index(const std::string& path, const CodeIndex& index);
CodeIndex load_index(const std::string& path);

}  // namespace semicon
