#include "semicon/model.hpp"

#include <cmath>
#include <sstream>

#include "semicon/ops.hpp"

namespace semicon {

namespace {

constexpr const char* kConfigRecord = "meta.model_config";

std::string model_config_text(const ModelConfig& m) {
  RunConfig rc;
  rc.model = m;
  // keep only model keys
  std::istringstream in(format_config(rc));
  static const char* keys[] = {"input_channels", "input_size", "extractor_channels", "feature_channels",
                               "bits", "stages", "alpha", "std_floor", "sem", "icon_portions",
                               "icon_delta", "group_projection", "icon"};
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    const std::string key = line.substr(0, line.find(' '));
    for (const char* k : keys) {
      if (key == k) out << line << '\n';
    }
  }
  return out.str();
}

}  // namespace

FeatureExtractor::FeatureExtractor(ParamStore<float>& store, const ModelConfig& cfg, Rng& rng)
    : in_channels_(cfg.input_channels), in_size_(cfg.input_size) {
  first_ = block(store, "extractor.block1", cfg.input_channels, cfg.extractor_channels, rng);
  second_ = block(store, "extractor.block2", cfg.extractor_channels, cfg.feature_channels, rng);
}

FeatureExtractor::Block FeatureExtractor::block(ParamStore<float>& store, const std::string& name,
                                                std::size_t in, std::size_t out, Rng& rng) {
  Block b;
  b.weight = &store.add(name + ".conv.weight", init_uniform<float>({out, in, 3, 3}, in * 9, rng, std::sqrt(3.0)));
  b.bias = &store.add(name + ".conv.bias", Tensor::zeros({out}));
  b.bn = BatchNorm<float>(store, name + ".bn", out);
  return b;
}

Var<float> FeatureExtractor::run(Tape<float>& tape, const Block& b, Var<float> x, bool training) const {
  Var<float> h = ops::conv3x3(x, tape.param(*b.weight), tape.param(*b.bias));
  return ops::max_pool2(ops::relu(b.bn(tape, h, training)));
}

Var<float> FeatureExtractor::operator()(Tape<float>& tape, Var<float> images, bool training) const {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != in_channels_ || s[2] != in_size_ || s[3] != in_size_) {
    throw ShapeError("feature extractor: expected N x " + std::to_string(in_channels_) + " x " +
                     std::to_string(in_size_) + " x " + std::to_string(in_size_) + " input, got " + shape_str(s));
  }
  return run(tape, second_, run(tape, first_, images, training), training);
}

SemiconModel::SemiconModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  layout_ = code_layout(cfg_.bits, cfg_.stages.stages);
  Rng rng(mix_seed(seed, 100));
  const std::size_t C = cfg_.feature_channels;
  extractor_ = FeatureExtractor(store_, cfg_, rng);
  global_net_ = TransformNet<float>(store_, "global_net", C, rng);
  sem_ = SemAttention<float>(store_, "sem", C, cfg_.stages, rng);
  local_net_ = TransformNet<float>(store_, "local_net", C, rng);
  if (cfg_.icon_enabled) {
    icon_.emplace_back(store_, "icon.global", C, cfg_.icon, rng);
    for (std::size_t i = 0; i < cfg_.stages.stages; ++i) {
      icon_.emplace_back(store_, "icon.local" + std::to_string(i + 1), C, cfg_.icon, rng);
    }
  }
  head_ = HashHead<float>(store_, "hash", C, layout_, rng);
}

ModelOutputs SemiconModel::forward(Tape<float>& tape, Var<float> images, bool training) const {
  Var<float> t = extractor_(tape, images, training);
  Var<float> global = global_net_(tape, t, training);
  StageOutputs<float> stages = sem_.run_stages(tape, t, training);
  std::vector<Var<float>> locals;
  for (Var<float> masked : stages.masked) locals.push_back(local_net_(tape, masked, training));
  ModelOutputs out;
  if (cfg_.icon_enabled) {
    global = icon_[0](tape, global, training, &out.icon_counters);
    for (std::size_t i = 0; i < locals.size(); ++i) locals[i] = icon_[i + 1](tape, locals[i], training);
  }
  std::vector<Var<float>> pooled;
  for (Var<float> l : locals) pooled.push_back(ops::global_avg_pool(l));
  out.codes = head_.project(tape, ops::global_avg_pool(global), pooled);
  out.maps = std::move(stages.maps);
  return out;
}

CodeMatrix SemiconModel::encode(const Dataset& data, std::size_t batch) const {
  CodeMatrix codes(data.size(), layout_.bits);
  for (std::size_t start = 0; start < data.size(); start += batch) {
    const std::size_t end = std::min(data.size(), start + batch);
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    Tape<float> tape;
    Var<float> v = forward(tape, tape.constant(data.gather(idx)), false).codes;
    const CodeMatrix part = binarize_rows(v.value());
    std::copy(part.data.begin(), part.data.end(), codes.data.begin() + static_cast<std::ptrdiff_t>(start * layout_.bits));
  }
  return codes;
}

std::vector<NamedTensor> SemiconModel::state() const {
  std::vector<NamedTensor> out;
  const std::string text = model_config_text(cfg_);
  Tensor meta({text.size()});
  for (std::size_t i = 0; i < text.size(); ++i) meta[i] = static_cast<unsigned char>(text[i]);
  out.push_back({kConfigRecord, std::move(meta)});
  for (auto& p : store_.raw_parameters()) out.push_back({p.name, p.value});
  for (auto& bn : store_.batch_norms()) {
    const std::size_t C = bn.state.running_mean.size();
    out.push_back({bn.name + ".running_mean", Tensor({C}, bn.state.running_mean)});
    out.push_back({bn.name + ".running_var", Tensor({C}, bn.state.running_var)});
  }
  return out;
}

std::unique_ptr<SemiconModel> SemiconModel::from_state(const std::vector<NamedTensor>& records) {
  const NamedTensor* meta = nullptr;
  for (const auto& r : records) {
    if (r.name == kConfigRecord) meta = &r;
  }
  if (!meta) throw FormatError(std::string("checkpoint: missing record '") + kConfigRecord + "'");
  std::string text;
  for (float v : meta->tensor.values()) {
    if (v < 0 || v > 255 || v != std::floor(v)) throw FormatError("checkpoint: corrupt model configuration record");
    text.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  }
  RunConfig rc = parse_config(text);
  auto model = std::make_unique<SemiconModel>(rc.model, 0);
  std::size_t matched = 0;
  for (const auto& r : records) {
    if (&r == meta) continue;
    if (Parameter<float>* p = model->store_.find(r.name)) {
      if (p->value.shape() != r.tensor.shape()) {
        throw FormatError("checkpoint: record '" + r.name + "' has shape " + shape_str(r.tensor.shape()) +
                          ", model expects " + shape_str(p->value.shape()));
      }
      p->value = r.tensor;
      ++matched;
      continue;
    }
    bool found = false;
    for (auto& bn : model->store_.batch_norms()) {
      std::vector<float>* target = nullptr;
      if (r.name == bn.name + ".running_mean") target = &bn.state.running_mean;
      if (r.name == bn.name + ".running_var") target = &bn.state.running_var;
      if (!target) continue;
      if (r.tensor.size() != target->size()) throw FormatError("checkpoint: record '" + r.name + "' has wrong length");
      target->assign(r.tensor.values().begin(), r.tensor.values().end());
      found = true;
      ++matched;
    }
    if (!found) throw FormatError("checkpoint: unexpected record '" + r.name + "'");
  }
  const std::size_t expected = model->store_.raw_parameters().size() + 2 * model->store_.batch_norms().size();
  if (matched != expected) {
    throw FormatError("checkpoint: " + std::to_string(expected - matched) + " model tensors missing");
  }
  return model;
}

}  // namespace semicon
