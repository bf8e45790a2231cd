#include "semicon/semicon.h"

#include <new>
#include <string>

#include "semicon/checkpoint.hpp"
#include "semicon/parallel.hpp"
#include "semicon/retrieval.hpp"
#include "semicon/trainer.hpp"

struct semicon_config {
  semicon::RunConfig cfg;
  std::string text;
};

struct semicon_dataset {
  semicon::Dataset data;
};

struct semicon_model {
  std::unique_ptr<semicon::SemiconModel> model;
};

struct semicon_index {
  semicon::CodeIndex index;
};

struct semicon_eval {
  semicon::EvalReport report;
};

namespace {

thread_local std::string g_last_error;

template <class F>
semicon_status guarded(F&& body) {
  g_last_error.clear();
  try {
    body();
    return SEMICON_OK;
  } catch (const semicon::Error& e) {
    g_last_error = e.what();
    return static_cast<semicon_status>(static_cast<int>(e.code()));
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return SEMICON_ERR_MEMORY;
  } catch (const std::exception& e) {
    g_last_error = std::string("internal error: ") + e.what();
    return SEMICON_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "internal error";
    return SEMICON_ERR_INTERNAL;
  }
}

template <class T>
const T& need(const T* p, const char* what) {
  if (!p) throw semicon::InvalidArgument(std::string(what) + " is null");
  return *p;
}

void need_out(const void* p, const char* what) {
  if (!p) throw semicon::InvalidArgument(std::string(what) + " is null");
}

const char* need_str(const char* s, const char* what) {
  if (!s) throw semicon::InvalidArgument(std::string(what) + " is null");
  return s;
}

semicon_index* make_index(const semicon::CodeLayout& layout, const semicon::CodeMatrix& codes,
                          const std::vector<std::uint32_t>& labels) {
  return new semicon_index{{layout, semicon::pack_codes(codes, labels)}};
}

}  // namespace

extern "C" {

const char* semicon_last_error(void) { return g_last_error.c_str(); }

const char* semicon_status_name(semicon_status status) {
  switch (status) {
    case SEMICON_OK: return "ok";
    case SEMICON_ERR_INVALID_ARGUMENT: return "invalid argument";
    case SEMICON_ERR_SHAPE: return "shape error";
    case SEMICON_ERR_FORMAT: return "format error";
    case SEMICON_ERR_IO: return "i/o error";
    case SEMICON_ERR_NUMERIC: return "numeric error";
    case SEMICON_ERR_CONFIG: return "configuration error";
    case SEMICON_ERR_STATE: return "state error";
    case SEMICON_ERR_MEMORY: return "out of memory";
    case SEMICON_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

semicon_status semicon_set_threads(size_t threads) {
  return guarded([&] { semicon::set_worker_count(threads); });
}

semicon_status semicon_config_default(semicon_config** out) {
  return guarded([&] {
    need_out(out, "out");
    *out = new semicon_config{semicon::parse_config(""), {}};
  });
}

semicon_status semicon_config_parse(const char* text, semicon_config** out) {
  return guarded([&] {
    need_out(out, "out");
    *out = new semicon_config{semicon::parse_config(need_str(text, "text")), {}};
  });
}

semicon_status semicon_config_load(const char* path, semicon_config** out) {
  return guarded([&] {
    need_out(out, "out");
    *out = new semicon_config{semicon::load_config(need_str(path, "path")), {}};
  });
}

semicon_status semicon_config_set_seed(semicon_config* cfg, uint64_t seed) {
  return guarded([&] {
    need_out(cfg, "config");
    cfg->cfg.seed = seed;
  });
}

semicon_status semicon_config_text(semicon_config* cfg, const char** text) {
  return guarded([&] {
    need_out(cfg, "config");
    need_out(text, "text");
    cfg->text = semicon::format_config(cfg->cfg);
    *text = cfg->text.c_str();
  });
}

void semicon_config_free(semicon_config* cfg) { delete cfg; }

semicon_status semicon_generate(const semicon_config* cfg, semicon_dataset** database, semicon_dataset** queries) {
  return guarded([&] {
    const auto& c = need(cfg, "config");
    need_out(database, "database");
    need_out(queries, "queries");
    semicon::DatasetSplit split = semicon::generate_synthetic(c.cfg.data);
    auto db = std::make_unique<semicon_dataset>(semicon_dataset{std::move(split.database)});
    *queries = new semicon_dataset{std::move(split.query)};
    *database = db.release();
  });
}

semicon_status semicon_dataset_load(const char* path, semicon_dataset** out) {
  return guarded([&] {
    need_out(out, "out");
    *out = new semicon_dataset{semicon::load_dataset(need_str(path, "path"))};
  });
}

semicon_status semicon_dataset_save(const semicon_dataset* data, const char* path) {
  return guarded([&] { semicon::save_dataset(need_str(path, "path"), need(data, "dataset").data); });
}

semicon_status semicon_dataset_size(const semicon_dataset* data, size_t* count) {
  return guarded([&] {
    need_out(count, "count");
    *count = need(data, "dataset").data.size();
  });
}

void semicon_dataset_free(semicon_dataset* data) { delete data; }

semicon_status semicon_train(const semicon_config* cfg, const semicon_dataset* database, semicon_trace_fn trace,
                             void* user, semicon_model** model, semicon_index** learned) {
  return guarded([&] {
    const auto& c = need(cfg, "config");
    const auto& d = need(database, "database");
    need_out(model, "model");
    semicon::TraceSink sink;
    if (trace) {
      sink = [trace, user](const semicon::TraceRow& r) {
        trace(user, r.iteration, r.epoch, r.similarity, r.quantization, r.total);
      };
    }
    semicon::TrainResult result = semicon::train(c.cfg, d.data, sink);
    std::unique_ptr<semicon_index> index;
    if (learned) {
      index.reset(make_index(result.model->layout(), result.database.codes, result.database.labels));
    }
    *model = new semicon_model{std::move(result.model)};
    if (learned) *learned = index.release();
  });
}

semicon_status semicon_model_load(const char* path, semicon_model** out) {
  return guarded([&] {
    need_out(out, "out");
    auto records = semicon::load_checkpoint(need_str(path, "path"));
    *out = new semicon_model{semicon::SemiconModel::from_state(records)};
  });
}

semicon_status semicon_model_save(const semicon_model* model, const char* path) {
  return guarded([&] {
    semicon::save_checkpoint(need_str(path, "path"), need(model, "model").model->state());
  });
}

semicon_status semicon_model_bits(const semicon_model* model, size_t* bits) {
  return guarded([&] {
    need_out(bits, "bits");
    *bits = need(model, "model").model->layout().bits;
  });
}

void semicon_model_free(semicon_model* model) { delete model; }

semicon_status semicon_encode(const semicon_model* model, const semicon_dataset* data, semicon_index** out) {
  return guarded([&] {
    const auto& m = *need(model, "model").model;
    const auto& d = need(data, "dataset").data;
    need_out(out, "out");
    *out = make_index(m.layout(), m.encode(d), d.labels);
  });
}

semicon_status semicon_index_load(const char* path, semicon_index** out) {
  return guarded([&] {
    need_out(out, "out");
    *out = new semicon_index{semicon::load_index(need_str(path, "path"))};
  });
}

semicon_status semicon_index_save(const semicon_index* index, const char* path) {
  return guarded([&] { semicon::save_index(need_str(path, "path"), need(index, "index").index); });
}

semicon_status semicon_index_count(const semicon_index* index, size_t* count) {
  return guarded([&] {
    need_out(count, "count");
    *count = need(index, "index").index.codes.count;
  });
}

semicon_status semicon_index_bits(const semicon_index* index, size_t* bits) {
  return guarded([&] {
    need_out(bits, "bits");
    *bits = need(index, "index").index.codes.bits;
  });
}

semicon_status semicon_index_code(const semicon_index* index, size_t i, int8_t* codes) {
  return guarded([&] {
    const auto& packed = need(index, "index").index.codes;
    need_out(codes, "codes");
    if (i >= packed.count) {
      throw semicon::InvalidArgument("code " + std::to_string(i) + " out of range (" +
                                     std::to_string(packed.count) + " codes)");
    }
    const auto words = packed.code(i);
    for (std::size_t b = 0; b < packed.bits; ++b) codes[b] = (words[b / 64] >> (b % 64)) & 1 ? 1 : -1;
  });
}

void semicon_index_free(semicon_index* index) { delete index; }

semicon_status semicon_search(const semicon_index* db, const semicon_index* queries, size_t query_row, size_t k,
                              size_t* indices, uint32_t* distances) {
  return guarded([&] {
    const auto& d = need(db, "database index").index.codes;
    const auto& q = need(queries, "query index").index.codes;
    need_out(indices, "indices");
    need_out(distances, "distances");
    if (q.bits != d.bits) {
      throw semicon::ShapeError("search: " + std::to_string(q.bits) + "-bit queries vs " + std::to_string(d.bits) +
                                "-bit database");
    }
    if (query_row >= q.count) {
      throw semicon::InvalidArgument("search: query " + std::to_string(query_row) + " out of range (" +
                                     std::to_string(q.count) + " queries)");
    }
    const auto hits = semicon::search_topk(q.code(query_row), d, k);
    for (std::size_t i = 0; i < hits.size(); ++i) {
      indices[i] = hits[i].index;
      distances[i] = static_cast<uint32_t>(hits[i].distance);
    }
  });
}

semicon_status semicon_evaluate(const semicon_index* db, const semicon_index* queries, semicon_eval** out) {
  return guarded([&] {
    const auto& d = need(db, "database index").index.codes;
    const auto& q = need(queries, "query index").index.codes;
    need_out(out, "out");
    *out = new semicon_eval{semicon::evaluate_retrieval(d, q)};
  });
}

double semicon_eval_map(const semicon_eval* eval) { return eval ? eval->report.map : 0.0; }

size_t semicon_eval_query_count(const semicon_eval* eval) { return eval ? eval->report.query_count : 0; }

size_t semicon_eval_skipped(const semicon_eval* eval) { return eval ? eval->report.skipped : 0; }

size_t semicon_eval_scored(const semicon_eval* eval) { return eval ? eval->report.evaluated.size() : 0; }

semicon_status semicon_eval_entry(const semicon_eval* eval, size_t i, size_t* query, double* average_precision) {
  return guarded([&] {
    const auto& r = need(eval, "eval").report;
    need_out(query, "query");
    need_out(average_precision, "average_precision");
    if (i >= r.evaluated.size()) throw semicon::InvalidArgument("eval entry " + std::to_string(i) + " out of range");
    *query = r.evaluated[i];
    *average_precision = r.average_precision[i];
  });
}

void semicon_eval_free(semicon_eval* eval) { delete eval; }

}  // extern "C"
