#include "setdet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "setdet/errors.hpp"

namespace setdet {

using nlohmann::json;

namespace {

// Reads typed fields from one JSON object and remembers which keys were used.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + ": expected an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(name_ + "." + key + ": wrong type");
    }
  }

  void read_count(const char* key, std::size_t& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(name_ + "." + key + ": expected a non-negative integer");
    out = v.get<std::size_t>();
  }

  void read_seed(const char* key, std::uint64_t& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(name_ + "." + key + ": expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError(name_ + ": unknown key '" + item.key() + "'");
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void read_model(const json& j, ModelConfig& m) {
  Section s(j, "model");
  s.read_count("d_model", m.d_model);
  s.read_count("n_heads", m.n_heads);
  s.read_count("n_encoder_layers", m.n_encoder_layers);
  s.read_count("n_decoder_layers", m.n_decoder_layers);
  s.read_count("n_queries", m.n_queries);
  s.read_count("num_classes", m.num_classes);
  s.read_count("backbone_channels", m.backbone_channels);
  s.read_count("ffn_hidden", m.ffn_hidden);
  s.read_seed("init_seed", m.init_seed);
  s.finish();
}

void read_optimizer(const json& j, OptimizerConfig& o) {
  Section s(j, "optimizer");
  s.read("lr", o.lr);
  s.read("beta1", o.beta1);
  s.read("beta2", o.beta2);
  s.read("eps", o.eps);
  s.read("weight_decay", o.weight_decay);
  s.read("decoupled_weight_decay", o.decoupled_weight_decay);
  s.finish();
}

void read_augment(const json& j, AugmentPolicy& a) {
  if (j.is_string()) {
    if (j.get<std::string>() != "none") throw ConfigError("data.augment: only the string \"none\" is accepted");
    a = AugmentPolicy::none();
    return;
  }
  Section s(j, "data.augment");
  s.read("brightness_prob", a.brightness_prob);
  s.read("brightness_min", a.brightness_min);
  s.read("brightness_max", a.brightness_max);
  s.read("jitter_prob", a.jitter_prob);
  s.read("jitter_min", a.jitter_min);
  s.read("jitter_max", a.jitter_max);
  s.read("blur_prob", a.blur_prob);
  s.read("blur_sigma_min", a.blur_sigma_min);
  s.read("blur_sigma_max", a.blur_sigma_max);
  s.read("sharpen_prob", a.sharpen_prob);
  s.read("sharpen_amount_min", a.sharpen_amount_min);
  s.read("sharpen_amount_max", a.sharpen_amount_max);
  s.read("flip_prob", a.flip_prob);
  s.read("crop_prob", a.crop_prob);
  s.read("crop_area_min", a.crop_area_min);
  s.read("crop_area_max", a.crop_area_max);
  s.read("crop_keep_fraction", a.crop_keep_fraction);
  s.finish();
}

void read_data(const json& j, DataSection& d) {
  Section s(j, "data");
  if (const auto* m = s.child("manifest")) {
    if (!m->is_string()) throw ConfigError("data.manifest: expected a path string");
    d.manifest = m->get<std::string>();
  }
  if (const auto* f = s.child("folds")) {
    if (!f->is_string()) throw ConfigError("data.folds: expected a path string");
    d.folds = f->get<std::string>();
  }
  if (const auto* syn = s.child("synthetic")) {
    SyntheticSpec spec;
    Section ss(*syn, "data.synthetic");
    ss.read_seed("seed", spec.seed);
    ss.read_count("count", spec.count);
    ss.read_count("image_size", spec.image_size);
    ss.read_count("max_objects", spec.max_objects);
    ss.finish();
    d.synthetic = spec;
  }
  if (const auto* a = s.child("augment")) read_augment(*a, d.augment);
  s.read("multiscale", d.multiscale);
  s.read_count("eval_short_edge", d.eval_short_edge);
  s.finish();
}

void read_run(const json& j, RunSection& r) {
  Section s(j, "run");
  s.read_seed("seed", r.seed);
  s.read_count("epochs", r.epochs);
  s.read_count("batch_size", r.batch_size);
  std::string out = r.out.string();
  s.read("out", out);
  r.out = out;
  s.read("threshold", r.threshold);
  s.finish();
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig cfg;
  cfg.source_text = text;
  Section root(j, "config");
  if (const auto* m = root.child("model")) read_model(*m, cfg.model);
  if (const auto* l = root.child("loss")) {
    Section s(*l, "loss");
    s.read("lambda_iou", cfg.loss.lambda_iou);
    s.read("lambda_l1", cfg.loss.lambda_l1);
    s.read("noobject_weight", cfg.loss.noobject_weight);
    s.finish();
  }
  if (const auto* o = root.child("optimizer")) read_optimizer(*o, cfg.optimizer);
  if (const auto* d = root.child("data")) read_data(*d, cfg.data);
  if (const auto* r = root.child("run")) read_run(*r, cfg.run);
  root.finish();
  cfg.loss.num_classes = cfg.model.num_classes;
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  auto cfg = parse_run_config(ss.str());
  // Relative data paths are resolved against the config file's directory.
  const auto base = path.parent_path();
  if (cfg.data.manifest && cfg.data.manifest->is_relative()) cfg.data.manifest = base / *cfg.data.manifest;
  if (cfg.data.folds && cfg.data.folds->is_relative()) cfg.data.folds = base / *cfg.data.folds;
  return cfg;
}

void RunConfig::validate() const {
  model.validate();
  optimizer.validate();
  data.augment.validate();
  if (!(loss.lambda_iou >= 0.0 && loss.lambda_l1 >= 0.0 && loss.noobject_weight >= 0.0))
    throw ConfigError("loss: weights must be non-negative");
  if (data.manifest.has_value() == data.synthetic.has_value())
    throw ConfigError("data: set exactly one of 'manifest' or 'synthetic'");
  if (data.manifest && !std::filesystem::exists(*data.manifest))
    throw ConfigError("data.manifest: no such file " + data.manifest->string());
  if (data.folds && !std::filesystem::exists(*data.folds))
    throw ConfigError("data.folds: no such file " + data.folds->string());
  if (data.synthetic) {
    const auto& s = *data.synthetic;
    if (s.count == 0 || s.max_objects == 0) throw ConfigError("data.synthetic: count and max_objects must be positive");
    if (s.image_size < 32) throw ConfigError("data.synthetic: image_size must be at least 32");
  }
  if (run.batch_size == 0) throw ConfigError("run.batch_size must be positive");
  if (!(run.threshold >= 0.0 && run.threshold <= 1.0)) throw ConfigError("run.threshold must lie in [0, 1]");
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.epochs = run.epochs;
  t.batch_size = run.batch_size;
  t.seed = run.seed;
  t.multiscale = data.multiscale;
  t.optimizer = optimizer;
  t.loss = loss;
  t.loss.num_classes = model.num_classes;
  t.augment = data.augment;
  return t;
}

json model_config_to_json(const ModelConfig& m) {
  return {{"d_model", m.d_model},
          {"n_heads", m.n_heads},
          {"n_encoder_layers", m.n_encoder_layers},
          {"n_decoder_layers", m.n_decoder_layers},
          {"n_queries", m.n_queries},
          {"num_classes", m.num_classes},
          {"backbone_channels", m.backbone_channels},
          {"ffn_hidden", m.ffn_hidden},
          {"init_seed", m.init_seed}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig m;
  read_model(j, m);
  return m;
}

json optimizer_config_to_json(const OptimizerConfig& o) {
  return {{"lr", o.lr},   {"beta1", o.beta1},
          {"beta2", o.beta2}, {"eps", o.eps},
          {"weight_decay", o.weight_decay}, {"decoupled_weight_decay", o.decoupled_weight_decay}};
}

OptimizerConfig optimizer_config_from_json(const json& j) {
  OptimizerConfig o;
  read_optimizer(j, o);
  return o;
}

}  // namespace setdet
