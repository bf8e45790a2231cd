#include "semicon/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "semicon/binary_io.hpp"
#include "semicon/rng.hpp"

namespace semicon {

namespace {

constexpr std::size_t kPartGrid = 5;     // candidate part centres per axis
constexpr double kPartSigma = 1.6;       // blob radius in pixels
constexpr double kObjectAmplitude = 0.6;
constexpr double kBackgroundAmplitude = 0.15;

void add_blob(Tensor& img, std::size_t n, std::size_t c, double cy, double cx, double sigma, double amp,
              std::size_t C, std::size_t H, std::size_t W) {
  float* plane = img.data() + (n * C + c) * H * W;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double dy = double(y) - cy, dx = double(x) - cx;
      plane[y * W + x] += static_cast<float>(amp * std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma)));
    }
}

}  // namespace

void SyntheticDatasetSpec::validate() const {
  if (classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  if (samples_per_class < 2) throw ConfigError("synthetic dataset needs at least 2 samples per class");
  if (channels == 0 || height < 4 || width < 4) throw ConfigError("synthetic dataset extents too small");
  if (parts_per_class == 0 || parts_per_class > kPartGrid * kPartGrid) {
    throw ConfigError("parts_per_class must lie in 1.." + std::to_string(kPartGrid * kPartGrid));
  }
  if (noise_sigma < 0 || part_amplitude <= 0) throw ConfigError("noise_sigma must be >= 0 and part_amplitude > 0");
}

Tensor class_prototypes(const SyntheticDatasetSpec& spec) {
  spec.validate();
  const std::size_t K = spec.classes, C = spec.channels, H = spec.height, W = spec.width;
  Rng rng(mix_seed(spec.seed, 1));
  Tensor protos({K, C, H, W});
  std::set<std::vector<std::size_t>> used;
  for (std::size_t k = 0; k < K; ++k) {
    // smooth low-amplitude background
    for (std::size_t c = 0; c < C; ++c) {
      const double fy = rng.uniform(0.5, 1.5), fx = rng.uniform(0.5, 1.5);
      const double py = rng.uniform(0, 2 * std::numbers::pi), px = rng.uniform(0, 2 * std::numbers::pi);
      float* plane = protos.data() + (k * C + c) * H * W;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
          plane[y * W + x] = static_cast<float>(
              kBackgroundAmplitude * std::sin(2 * std::numbers::pi * fy * double(y) / double(H) + py) *
              std::cos(2 * std::numbers::pi * fx * double(x) / double(W) + px));
    }
    // shared object body
    for (std::size_t c = 0; c < C; ++c) {
      add_blob(protos, k, c, (H - 1) / 2.0, (W - 1) / 2.0, H / 5.0, kObjectAmplitude, C, H, W);
    }
    // class-specific part positions: a part set no earlier class uses
    std::vector<std::size_t> cells;
    do {
      cells.clear();
      while (cells.size() < spec.parts_per_class) {
        const std::size_t cell = static_cast<std::size_t>(rng.below(kPartGrid * kPartGrid));
        if (std::find(cells.begin(), cells.end(), cell) == cells.end()) cells.push_back(cell);
      }
      std::sort(cells.begin(), cells.end());
    } while (!used.insert(cells).second && used.size() < 1000);
    for (std::size_t cell : cells) {
      const double cy = (double(cell / kPartGrid) + 0.5) * double(H) / kPartGrid;
      const double cx = (double(cell % kPartGrid) + 0.5) * double(W) / kPartGrid;
      for (std::size_t c = 0; c < C; ++c) {
        const double amp = spec.part_amplitude * rng.sign() * rng.uniform(0.6, 1.0);
        add_blob(protos, k, c, cy, cx, kPartSigma, amp, C, H, W);
      }
    }
  }
  return protos;
}

DatasetSplit generate_synthetic(const SyntheticDatasetSpec& spec) {
  const Tensor protos = class_prototypes(spec);
  const std::size_t K = spec.classes, per = spec.samples_per_class;
  const std::size_t C = spec.channels, H = spec.height, W = spec.width, plane = C * H * W;
  const std::size_t n_query = std::max<std::size_t>(1, per / 5);
  const std::size_t n_db = per - n_query;
  DatasetSplit split;
  split.database.images = Tensor({K * n_db, C, H, W});
  split.query.images = Tensor({K * n_query, C, H, W});
  Rng noise(mix_seed(spec.seed, 2));
  std::size_t di = 0, qi = 0;
  for (std::size_t s = 0; s < per; ++s) {
    for (std::size_t k = 0; k < K; ++k) {
      const bool is_db = s < n_db;
      Dataset& dst = is_db ? split.database : split.query;
      const std::size_t row = is_db ? di++ : qi++;
      float* out = dst.images.data() + row * plane;
      const float* proto = protos.data() + k * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        out[i] = static_cast<float>(proto[i] + spec.noise_sigma * noise.normal());
      }
      dst.labels.push_back(static_cast<std::uint32_t>(k));
    }
  }
  return split;
}

Tensor Dataset::gather(const std::vector<std::size_t>& indices) const {
  Shape shape = images.shape();
  const std::size_t plane = images.size() / shape[0];
  shape[0] = indices.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw InvalidArgument("dataset index " + std::to_string(indices[i]) + " out of range");
    std::copy_n(images.data() + indices[i] * plane, plane, out.data() + i * plane);
  }
  return out;
}

std::vector<char> encode_dataset(const Dataset& data) {
  if (data.images.rank() != 4 || data.images.dim(0) != data.labels.size()) {
    throw ShapeError("dataset: images " + shape_str(data.images.shape()) + " vs " +
                     std::to_string(data.labels.size()) + " labels");
  }
  ByteWriter w;
  w.bytes(kDatasetMagic);
  w.u16(kDatasetVersion);
  w.u64(data.labels.size());
  for (std::size_t a = 1; a < 4; ++a) w.u32(static_cast<std::uint32_t>(data.images.dim(a)));
  const std::size_t plane = data.images.size() / data.images.dim(0);
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    w.u32(data.labels[i]);
    for (std::size_t j = 0; j < plane; ++j) w.f32(data.images[i * plane + j]);
  }
  return w.data();
}

Dataset decode_dataset(const std::vector<char>& bytes) {
  ByteReader r(bytes, "dataset");
  r.expect_magic(kDatasetMagic);
  const std::uint16_t version = r.u16("version");
  if (version != kDatasetVersion) r.fail("version", "unsupported version " + std::to_string(version));
  const std::size_t count_at = r.offset();
  const std::uint64_t count = r.u64("count");
  std::uint64_t plane = 1;
  Shape shape{0};
  for (const char* f : {"channels", "height", "width"}) {
    const std::uint32_t e = r.u32(f);
    if (e == 0 || e > (1u << 16)) r.fail(f, "implausible extent " + std::to_string(e));
    shape.push_back(e);
    plane *= e;
  }
  const std::uint64_t record = 4 + 4 * plane;
  if (count == 0 || count > r.remaining() / record || count * record != r.remaining()) {
    r.fail_at(count_at, "count", std::to_string(count) + " samples do not match " + std::to_string(r.remaining()) +
                        " remaining bytes");
  }
  shape[0] = count;
  Dataset d;
  d.images = Tensor(shape);
  d.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    d.labels[i] = r.u32("label");
    for (std::size_t j = 0; j < plane; ++j) d.images[i * plane + j] = r.f32("value");
  }
  if (!d.images.all_finite()) throw FormatError("dataset: non-finite sample value");
  return d;
}

void save_dataset(const std::string& path, const Dataset& data) { write_file(path, encode_dataset(data)); }

Dataset load_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

}  // namespace semicon
