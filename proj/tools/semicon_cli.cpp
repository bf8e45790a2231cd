// Command-line front end; talks to the library only through the C API.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "semicon/semicon.h"

namespace {

struct Failure {
  semicon_status status;
  std::string message;
};

void check(semicon_status s, const std::string& context) {
  if (s != SEMICON_OK) throw Failure{s, context + ": " + semicon_last_error()};
}

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Config = std::unique_ptr<semicon_config, Deleter<semicon_config, semicon_config_free>>;
using Data = std::unique_ptr<semicon_dataset, Deleter<semicon_dataset, semicon_dataset_free>>;
using Model = std::unique_ptr<semicon_model, Deleter<semicon_model, semicon_model_free>>;
using Index = std::unique_ptr<semicon_index, Deleter<semicon_index, semicon_index_free>>;
using Eval = std::unique_ptr<semicon_eval, Deleter<semicon_eval, semicon_eval_free>>;

Config load_config(const std::string& path) {
  semicon_config* c = nullptr;
  if (path.empty()) {
    check(semicon_config_default(&c), "default config");
  } else {
    check(semicon_config_load(path.c_str(), &c), "config '" + path + "'");
  }
  return Config(c);
}

Index load_index(const std::string& path) {
  semicon_index* i = nullptr;
  check(semicon_index_load(path.c_str(), &i), "index '" + path + "'");
  return Index(i);
}

void trace_to_stream(void* user, size_t iteration, size_t epoch, double sim, double quant, double total) {
  auto* out = static_cast<std::ofstream*>(user);
  char line[160];
  std::snprintf(line, sizeof line, "%zu,%zu,%.9g,%.9g,%.9g\n", iteration, epoch, sim, quant, total);
  *out << line;
  out->flush();
}

struct Options {
  std::string config, out, out_db, out_query, trace, db_out, data, model, index, queries, report;
  std::uint64_t seed = 1;
  bool seed_set = false;
  std::size_t topk = 10;
  std::size_t threads = 0;
};

void cmd_generate(const Options& o) {
  Config cfg = load_config(o.config);
  semicon_dataset* db = nullptr;
  semicon_dataset* q = nullptr;
  check(semicon_generate(cfg.get(), &db, &q), "generate");
  Data dbh(db), qh(q);
  check(semicon_dataset_save(db, o.out_db.c_str()), "write '" + o.out_db + "'");
  check(semicon_dataset_save(q, o.out_query.c_str()), "write '" + o.out_query + "'");
  size_t nd = 0, nq = 0;
  check(semicon_dataset_size(db, &nd), "size");
  check(semicon_dataset_size(q, &nq), "size");
  std::cout << "database " << nd << " samples -> " << o.out_db << "\nqueries " << nq << " samples -> "
            << o.out_query << "\n";
}

void cmd_train(const Options& o) {
  Config cfg = load_config(o.config);
  if (o.seed_set) check(semicon_config_set_seed(cfg.get(), o.seed), "seed");
  Data db;
  if (o.data.empty()) {
    semicon_dataset* d = nullptr;
    semicon_dataset* q = nullptr;
    check(semicon_generate(cfg.get(), &d, &q), "generate");
    db.reset(d);
    semicon_dataset_free(q);
  } else {
    semicon_dataset* d = nullptr;
    check(semicon_dataset_load(o.data.c_str(), &d), "dataset '" + o.data + "'");
    db.reset(d);
  }
  const std::string trace_path = o.trace.empty() ? o.out + ".trace.csv" : o.trace;
  std::ofstream trace(trace_path);
  if (!trace) throw Failure{SEMICON_ERR_IO, "cannot write trace '" + trace_path + "'"};
  trace << "iteration,epoch,similarity,quantization,total\n";
  semicon_model* m = nullptr;
  semicon_index* learned = nullptr;
  check(semicon_train(cfg.get(), db.get(), trace_to_stream, &trace, &m, o.db_out.empty() ? nullptr : &learned),
        "train");
  Model model(m);
  Index z(learned);
  check(semicon_model_save(m, o.out.c_str()), "write '" + o.out + "'");
  if (z) check(semicon_index_save(z.get(), o.db_out.c_str()), "write '" + o.db_out + "'");
  std::cout << "model -> " << o.out << "\ntrace -> " << trace_path << "\n";
  if (z) std::cout << "database codes -> " << o.db_out << "\n";
}

void cmd_encode(const Options& o) {
  semicon_model* m = nullptr;
  check(semicon_model_load(o.model.c_str(), &m), "model '" + o.model + "'");
  Model model(m);
  semicon_dataset* d = nullptr;
  check(semicon_dataset_load(o.data.c_str(), &d), "dataset '" + o.data + "'");
  Data data(d);
  semicon_index* i = nullptr;
  check(semicon_encode(m, d, &i), "encode");
  Index index(i);
  check(semicon_index_save(i, o.out.c_str()), "write '" + o.out + "'");
  size_t n = 0, bits = 0;
  check(semicon_index_count(i, &n), "count");
  check(semicon_index_bits(i, &bits), "bits");
  std::cout << n << " codes of " << bits << " bits -> " << o.out << "\n";
}

void cmd_search(const Options& o) {
  Index db = load_index(o.index);
  Index q = load_index(o.queries);
  size_t nq = 0, nd = 0;
  check(semicon_index_count(q.get(), &nq), "count");
  check(semicon_index_count(db.get(), &nd), "count");
  const size_t k = std::min(o.topk, nd);
  std::vector<size_t> ids(k);
  std::vector<uint32_t> dist(k);
  for (size_t row = 0; row < nq; ++row) {
    check(semicon_search(db.get(), q.get(), row, k, ids.data(), dist.data()), "search");
    std::cout << row;
    for (size_t i = 0; i < k; ++i) std::cout << ' ' << ids[i] << ':' << dist[i];
    std::cout << '\n';
  }
}

void cmd_eval(const Options& o) {
  Index db = load_index(o.index);
  Index q = load_index(o.queries);
  semicon_eval* e = nullptr;
  check(semicon_evaluate(db.get(), q.get(), &e), "evaluate");
  Eval eval(e);
  const double map = semicon_eval_map(e);
  char line[64];
  std::snprintf(line, sizeof line, "mAP %.4f\n", map);
  std::cout << line;
  nlohmann::json report;
  report["map"] = map;
  report["query_count"] = semicon_eval_query_count(e);
  report["skipped"] = semicon_eval_skipped(e);
  report["average_precision"] = nlohmann::json::array();
  for (size_t i = 0; i < semicon_eval_scored(e); ++i) {
    size_t query = 0;
    double ap = 0;
    check(semicon_eval_entry(e, i, &query, &ap), "report");
    report["average_precision"].push_back({{"query", query}, {"ap", ap}});
  }
  const std::string path = o.report.empty() ? o.queries + ".eval.json" : o.report;
  std::ofstream out(path);
  if (!out) throw Failure{SEMICON_ERR_IO, "cannot write report '" + path + "'"};
  out << report.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-level deep hashing: synthetic data, training, encoding and Hamming retrieval"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--threads", o.threads, "Worker threads (0 = SEMICON_THREADS or all cores)");

  auto* gen = app.add_subcommand("generate", "Write the synthetic database and query splits");
  gen->add_option("--config", o.config, "Config file (defaults if omitted)");
  gen->add_option("--out-db", o.out_db, "Database split output")->required();
  gen->add_option("--out-query", o.out_query, "Query split output")->required();

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint plus objective trace");
  train->add_option("--config", o.config, "Config file (defaults if omitted)");
  train->add_option("--seed", o.seed, "Training seed (overrides the config)")->each([&](const std::string&) {
    o.seed_set = true;
  });
  train->add_option("--out", o.out, "Checkpoint output")->required();
  train->add_option("--data", o.data, "Database split (generated from the config if omitted)");
  train->add_option("--trace", o.trace, "Trace CSV (default: <out>.trace.csv)");
  train->add_option("--db-out", o.db_out, "Also write the learned database codes as an index");

  auto* encode = app.add_subcommand("encode", "Binary codes for a dataset, written as an index");
  encode->add_option("--model", o.model, "Checkpoint")->required();
  encode->add_option("--data", o.data, "Dataset file")->required();
  encode->add_option("--out", o.out, "Index output")->required();

  auto* search = app.add_subcommand("search", "Top-K Hamming neighbours for every query code");
  search->add_option("--index", o.index, "Database index")->required();
  search->add_option("--query-index", o.queries, "Query index")->required();
  search->add_option("--topk", o.topk, "Neighbours per query")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "mAP of query codes against a database index");
  eval->add_option("--index", o.index, "Database index")->required();
  eval->add_option("--queries", o.queries, "Query index")->required();
  eval->add_option("--report", o.report, "JSON report (default: <queries>.eval.json)");

  CLI11_PARSE(app, argc, argv);
  try {
    check(semicon_set_threads(o.threads), "threads");
    if (*gen) cmd_generate(o);
    if (*train) cmd_train(o);
    if (*encode) cmd_encode(o);
    if (*search) cmd_search(o);
    if (*eval) cmd_eval(o);
  } catch (const Failure& f) {
    std::cerr << "error (" << semicon_status_name(f.status) << "): " << f.message << "\n";
    return 2;
  }
  return 0;
}
