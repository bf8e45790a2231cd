#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "semicon/semicon.h"

namespace {

const char* kSmall =
    "classes = 3\nsamples_per_class = 5\ninput_size = 8\nextractor_channels = 4\nfeature_channels = 4\n"
    "bits = 12\niterations = 1\nepochs = 1\nbatch_size = 4\nicon_portions = 2\n";

std::string scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "semicon_test_capi";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

struct TraceLog {
  std::vector<std::size_t> epochs;
};

void record(void* user, size_t, size_t epoch, double, double, double) {
  static_cast<TraceLog*>(user)->epochs.push_back(epoch);
}

}  // namespace

TEST(CApi, StatusNames) {
  EXPECT_STREQ(semicon_status_name(SEMICON_OK), "ok");
  EXPECT_STREQ(semicon_status_name(SEMICON_ERR_FORMAT), "format error");
  EXPECT_STREQ(semicon_status_name(static_cast<semicon_status>(42)), "unknown status");
}

TEST(CApi, NullArgumentsAreRejected) {
  EXPECT_EQ(semicon_config_default(nullptr), SEMICON_ERR_INVALID_ARGUMENT);
  EXPECT_NE(std::string(semicon_last_error()).find("out is null"), std::string::npos);
  semicon_config* cfg = nullptr;
  EXPECT_EQ(semicon_config_parse(nullptr, &cfg), SEMICON_ERR_INVALID_ARGUMENT);
  size_t n = 0;
  EXPECT_EQ(semicon_dataset_size(nullptr, &n), SEMICON_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(semicon_index_count(nullptr, &n), SEMICON_ERR_INVALID_ARGUMENT);
  semicon_config_free(nullptr);
  semicon_index_free(nullptr);
  EXPECT_EQ(semicon_eval_map(nullptr), 0.0);
}

TEST(CApi, ConfigErrorsAndText) {
  semicon_config* cfg = nullptr;
  EXPECT_EQ(semicon_config_parse("bits = -3\n", &cfg), SEMICON_ERR_CONFIG);
  EXPECT_NE(std::string(semicon_last_error()).find("line 1"), std::string::npos);
  EXPECT_EQ(cfg, nullptr);
  ASSERT_EQ(semicon_config_parse(kSmall, &cfg), SEMICON_OK);
  EXPECT_STREQ(semicon_last_error(), "");
  ASSERT_EQ(semicon_config_set_seed(cfg, 77), SEMICON_OK);
  const char* text = nullptr;
  ASSERT_EQ(semicon_config_text(cfg, &text), SEMICON_OK);
  EXPECT_NE(std::string(text).find("seed = 77\n"), std::string::npos);
  semicon_config_free(cfg);
  EXPECT_EQ(semicon_config_load("/nonexistent.cfg", &cfg), SEMICON_ERR_IO);
}

TEST(CApi, FullPipeline) {
  semicon_config* cfg = nullptr;
  ASSERT_EQ(semicon_config_parse(kSmall, &cfg), SEMICON_OK);
  semicon_dataset *db = nullptr, *q = nullptr;
  ASSERT_EQ(semicon_generate(cfg, &db, &q), SEMICON_OK);
  size_t nd = 0, nq = 0;
  semicon_dataset_size(db, &nd);
  semicon_dataset_size(q, &nq);
  EXPECT_EQ(nd, 12u);
  EXPECT_EQ(nq, 3u);

  const std::string data_path = scratch("db.smcd");
  ASSERT_EQ(semicon_dataset_save(db, data_path.c_str()), SEMICON_OK);
  semicon_dataset* reloaded = nullptr;
  ASSERT_EQ(semicon_dataset_load(data_path.c_str(), &reloaded), SEMICON_OK);

  TraceLog log;
  semicon_model* model = nullptr;
  semicon_index* learned = nullptr;
  ASSERT_EQ(semicon_train(cfg, reloaded, record, &log, &model, &learned), SEMICON_OK) << semicon_last_error();
  EXPECT_EQ(log.epochs, std::vector<std::size_t>{0});
  size_t bits = 0, count = 0;
  semicon_model_bits(model, &bits);
  EXPECT_EQ(bits, 12u);
  semicon_index_count(learned, &count);
  EXPECT_EQ(count, 12u);

  const std::string model_path = scratch("m.smck");
  ASSERT_EQ(semicon_model_save(model, model_path.c_str()), SEMICON_OK);
  semicon_model* loaded = nullptr;
  ASSERT_EQ(semicon_model_load(model_path.c_str(), &loaded), SEMICON_OK) << semicon_last_error();

  semicon_index *dbi = nullptr, *dbi2 = nullptr, *qi = nullptr;
  ASSERT_EQ(semicon_encode(model, db, &dbi), SEMICON_OK);
  ASSERT_EQ(semicon_encode(loaded, db, &dbi2), SEMICON_OK);
  ASSERT_EQ(semicon_encode(model, q, &qi), SEMICON_OK);
  std::vector<int8_t> a(12), b(12);
  for (size_t i = 0; i < 12; ++i) {
    ASSERT_EQ(semicon_index_code(dbi, i, a.data()), SEMICON_OK);
    ASSERT_EQ(semicon_index_code(dbi2, i, b.data()), SEMICON_OK);
    EXPECT_EQ(a, b);
    for (int8_t v : a) EXPECT_TRUE(v == 1 || v == -1);
  }
  EXPECT_EQ(semicon_index_code(dbi, 12, a.data()), SEMICON_ERR_INVALID_ARGUMENT);

  const std::string index_path = scratch("db.smcn");
  ASSERT_EQ(semicon_index_save(dbi, index_path.c_str()), SEMICON_OK);
  semicon_index* dbi3 = nullptr;
  ASSERT_EQ(semicon_index_load(index_path.c_str(), &dbi3), SEMICON_OK);

  std::vector<size_t> ids(12);
  std::vector<uint32_t> dist(12);
  ASSERT_EQ(semicon_search(dbi3, dbi, 4, 12, ids.data(), dist.data()), SEMICON_OK);
  EXPECT_EQ(dist[0], 0u);
  for (size_t i = 1; i < 12; ++i) EXPECT_LE(dist[i - 1], dist[i]);
  EXPECT_EQ(semicon_search(dbi3, dbi, 12, 1, ids.data(), dist.data()), SEMICON_ERR_INVALID_ARGUMENT);

  semicon_eval* eval = nullptr;
  ASSERT_EQ(semicon_evaluate(dbi, qi, &eval), SEMICON_OK);
  EXPECT_EQ(semicon_eval_query_count(eval), 3u);
  EXPECT_EQ(semicon_eval_scored(eval) + semicon_eval_skipped(eval), 3u);
  double sum = 0;
  for (size_t i = 0; i < semicon_eval_scored(eval); ++i) {
    size_t query = 0;
    double ap = 0;
    ASSERT_EQ(semicon_eval_entry(eval, i, &query, &ap), SEMICON_OK);
    EXPECT_LT(query, 3u);
    sum += ap;
  }
  EXPECT_NEAR(semicon_eval_map(eval), sum / double(semicon_eval_scored(eval)), 1e-12);

  for (auto* i : {dbi, dbi2, dbi3, qi, learned}) semicon_index_free(i);
  semicon_eval_free(eval);
  semicon_model_free(model);
  semicon_model_free(loaded);
  semicon_dataset_free(db);
  semicon_dataset_free(q);
  semicon_dataset_free(reloaded);
  semicon_config_free(cfg);
}

TEST(CApi, MalformedFilesReportFormatErrors) {
  const std::string path = scratch("garbage.bin");
  {
    std::ofstream out(path, std::ios::binary);
    out << "SMCNjunk";
  }
  semicon_index* idx = nullptr;
  EXPECT_EQ(semicon_index_load(path.c_str(), &idx), SEMICON_ERR_FORMAT);
  EXPECT_NE(std::string(semicon_last_error()).find("offset"), std::string::npos);
  semicon_model* m = nullptr;
  EXPECT_EQ(semicon_model_load(path.c_str(), &m), SEMICON_ERR_FORMAT);
  semicon_dataset* d = nullptr;
  EXPECT_EQ(semicon_dataset_load(path.c_str(), &d), SEMICON_ERR_FORMAT);
  EXPECT_EQ(semicon_dataset_load("/nonexistent.smcd", &d), SEMICON_ERR_IO);
}
