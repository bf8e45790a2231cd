#include "semicon/checkpoint.hpp"

#include <fstream>
#include <iterator>
#include <unordered_set>

#include "semicon/binary_io.hpp"

namespace semicon {

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<char>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

std::vector<char> encode_checkpoint(const std::vector<NamedTensor>& records) {
  ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u16(kCheckpointVersion);
  std::unordered_set<std::string> names;
  for (const auto& r : records) {
    if (!names.insert(r.name).second) throw InvalidArgument("checkpoint: duplicate record '" + r.name + "'");
    w.u32(static_cast<std::uint32_t>(r.name.size()));
    w.bytes(r.name);
    w.u8(static_cast<std::uint8_t>(r.tensor.rank()));
    for (std::size_t e : r.tensor.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (float v : r.tensor.values()) w.f32(v);
  }
  return w.data();
}

std::vector<NamedTensor> decode_checkpoint(const std::vector<char>& bytes) {
  ByteReader r(bytes, "checkpoint");
  r.expect_magic(kCheckpointMagic);
  const std::uint16_t version = r.u16("version");
  if (version != kCheckpointVersion) r.fail("version", "unsupported version " + std::to_string(version));
  std::vector<NamedTensor> out;
  std::unordered_set<std::string> names;
  while (!r.at_end()) {
    const std::uint32_t len = r.u32("name-length");
    if (len == 0 || len > 4096) r.fail("name-length", "implausible length " + std::to_string(len));
    std::string name = r.bytes(len, "name");
    const std::uint8_t rank = r.u8("rank");
    if (rank < 1 || rank > 4) r.fail("rank", "rank " + std::to_string(rank) + " outside 1..4");
    Shape shape;
    std::uint64_t count = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      const std::uint32_t e = r.u32("extent");
      if (e == 0) r.fail("extent", "zero extent");
      shape.push_back(e);
      count *= e;
      if (count > r.remaining() / 4) r.fail("extent", "payload larger than remaining file");
    }
    r.need(count * 4, "payload");
    std::vector<float> values(count);
    for (auto& v : values) v = r.f32("payload");
    if (!names.insert(name).second) throw FormatError("checkpoint: duplicate record '" + name + "'");
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  return out;
}

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& records) {
  write_file(path, encode_checkpoint(records));
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace semicon
