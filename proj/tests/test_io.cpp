#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "semicon/checkpoint.hpp"
#include "semicon/config.hpp"
#include "semicon/dataset.hpp"

using namespace semicon;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "semicon_test_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::vector<NamedTensor> sample_records() {
  return {{"a.weight", Tensor({2, 3}, {1, 2, 3, 4, 5, -6.5f})}, {"b", Tensor({1}, {0.25f})}};
}

}  // namespace

TEST(Config, DefaultsMatchDocumentedValues) {
  const RunConfig c = parse_config("");
  EXPECT_EQ(c.model.bits, 48u);
  EXPECT_EQ(c.model.stages.stages, 3u);
  EXPECT_DOUBLE_EQ(c.model.stages.alpha, 0.3);
  EXPECT_DOUBLE_EQ(c.model.icon.delta, 1e-5);
  EXPECT_DOUBLE_EQ(c.train.beta, 1.0);
  EXPECT_DOUBLE_EQ(c.train.gamma, 200.0);
  EXPECT_EQ(c.train.epochs, 30u);
  EXPECT_EQ(c.train.iterations, 40u);
  EXPECT_EQ(c.train.batch_size, 16u);
  EXPECT_DOUBLE_EQ(c.train.lr, 2.5e-4);
  EXPECT_EQ(c.data.classes, 8u);
  EXPECT_EQ(c.data.samples_per_class, 30u);
}

TEST(Config, TextRoundTrip) {
  const RunConfig c = parse_config("# comment\nbits = 32\n  alpha=0.125  # trailing\nicon = off\nseed = 99\nlr = 1e-3\n");
  EXPECT_EQ(c.model.bits, 32u);
  EXPECT_DOUBLE_EQ(c.model.stages.alpha, 0.125);
  EXPECT_FALSE(c.model.icon_enabled);
  EXPECT_EQ(c.seed, 99u);
  const std::string text = format_config(c);
  EXPECT_EQ(format_config(parse_config(text)), text);
  EXPECT_NE(text.find("bits = 32\n"), std::string::npos);
}

TEST(Config, ErrorsNameTheLine) {
  EXPECT_NE(error_of([] { parse_config("bits = 48\nbitz = 3\n"); }).find("line 2: unknown key 'bitz'"), std::string::npos);
  EXPECT_NE(error_of([] { parse_config("seed = 1\nseed = 2\n"); }).find("line 2: duplicate key"), std::string::npos);
  EXPECT_NE(error_of([] { parse_config("\n\nlr = fast\n"); }).find("line 3: lr"), std::string::npos);
  EXPECT_NE(error_of([] { parse_config("epochs\n"); }).find("line 1"), std::string::npos);
  EXPECT_THROW(parse_config("beta = 0\ngamma = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("bits = 5\n"), ConfigError);
  EXPECT_THROW(parse_config("icon_portions = 3\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/semicon.cfg"), IoError);
}

TEST(Checkpoint, RoundTrip) {
  const auto records = sample_records();
  const auto bytes = encode_checkpoint(records);
  // magic + version, then per record: 4 + name + 1 + 4 * rank + 4 * count
  EXPECT_EQ(bytes.size(), 6u + (4 + 8 + 1 + 8 + 24) + (4 + 1 + 1 + 4 + 4));
  const auto back = decode_checkpoint(bytes);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].name, "a.weight");
  EXPECT_EQ(back[0].tensor, records[0].tensor);
  EXPECT_EQ(back[1].tensor, records[1].tensor);
  const auto path = scratch("rt.smck");
  save_checkpoint(path.string(), records);
  EXPECT_EQ(encode_checkpoint(load_checkpoint(path.string())), bytes);
}

TEST(Checkpoint, MalformedInputs) {
  const auto good = encode_checkpoint(sample_records());
  auto bad = good;
  bad[1] = 'X';
  EXPECT_NE(error_of([&] { decode_checkpoint(bad); }).find("'magic' at offset 0"), std::string::npos);
  bad = good;
  bad[4] = 9;
  EXPECT_NE(error_of([&] { decode_checkpoint(bad); }).find("'version' at offset 4"), std::string::npos);
  bad = good;
  bad[6 + 4 + 8] = 7;  // rank of the first record
  EXPECT_NE(error_of([&] { decode_checkpoint(bad); }).find("'rank' at offset 18"), std::string::npos);
  bad = good;
  bad[6 + 4 + 8 + 1] = 100;  // first extent: payload runs past the end
  EXPECT_NE(error_of([&] { decode_checkpoint(bad); }).find("'extent' at offset 19"), std::string::npos);
  bad = std::vector<char>(good.begin(), good.end() - 2);
  EXPECT_NE(error_of([&] { decode_checkpoint(bad); }).find("payload larger than remaining file"), std::string::npos);
  bad = std::vector<char>(good.begin(), good.begin() + 12);
  EXPECT_NE(error_of([&] { decode_checkpoint(bad); }).find("'name' at offset 10: truncated"), std::string::npos);
  auto dup = sample_records();
  dup[1].name = "a.weight";
  EXPECT_THROW(encode_checkpoint(dup), InvalidArgument);
  EXPECT_THROW(load_checkpoint("/nonexistent/x.smck"), IoError);
}

TEST(DatasetFile, RoundTrip) {
  SyntheticDatasetSpec spec;
  spec.classes = 3;
  spec.samples_per_class = 5;
  spec.height = spec.width = 8;
  const Dataset d = generate_synthetic(spec).database;
  const auto bytes = encode_dataset(d);
  EXPECT_EQ(bytes.size(), 4u + 2 + 8 + 12 + d.size() * (4 + 4 * 3 * 64));
  const Dataset back = decode_dataset(bytes);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.images, d.images);
  const auto path = scratch("rt.smcd");
  save_dataset(path.string(), d);
  EXPECT_EQ(encode_dataset(load_dataset(path.string())), bytes);
}

TEST(DatasetFile, MalformedInputs) {
  Dataset d;
  d.images = Tensor({2, 1, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  d.labels = {0, 1};
  const auto good = encode_dataset(d);
  auto bad = good;
  bad[3] = 'K';
  EXPECT_NE(error_of([&] { decode_dataset(bad); }).find("'magic' at offset 0"), std::string::npos);
  bad = good;
  bad[6] = 3;  // count 3, only two samples present
  EXPECT_NE(error_of([&] { decode_dataset(bad); }).find("'count' at offset 6"), std::string::npos);
  bad = good;
  bad[14] = 0;  // channels
  EXPECT_NE(error_of([&] { decode_dataset(bad); }).find("'channels' at offset 14"), std::string::npos);
  bad = good;
  bad[bad.size() - 1] = static_cast<char>(0x7F);
  bad[bad.size() - 2] = static_cast<char>(0x80);
  bad[bad.size() - 3] = 0;
  bad[bad.size() - 4] = 0;  // +inf
  EXPECT_THROW(decode_dataset(bad), FormatError);
}
