#include "bssl/config.hpp"

#include "bssl/error.hpp"
#include "bssl/numeric/serialize.hpp"

#include "json.hpp"

#include <set>

namespace bssl {

using nlohmann::json;

const char* to_string(DatasetKind kind) noexcept {
  switch (kind) {
    case DatasetKind::Gmm: return "gmm";
    case DatasetKind::Shapes: return "shapes";
    case DatasetKind::Record: return "record";
  }
  return "?";
}

namespace {

[[noreturn]] void field_error(const std::string& path, const std::string& what) {
  fail(ErrorKind::Config, path + ": " + what);
}

/// A JSON object being read field by field; leftover keys are reported as unknown.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) field_error(path_, "expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }
  std::string path(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* raw(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  Fields child(const char* key) {
    const json* v = raw(key);
    if (!v) field_error(path(key), "missing required block");
    return Fields(*v, path(key));
  }

  void get(const char* key, int& out) {
    if (const json* v = raw(key)) {
      if (!v->is_number_integer()) field_error(path(key), "expected an integer");
      const auto wide = v->get<std::int64_t>();
      if (wide < INT32_MIN || wide > INT32_MAX) field_error(path(key), "integer out of range");
      out = int(wide);
    }
  }
  void get(const char* key, std::uint64_t& out) {
    if (const json* v = raw(key)) {
      if (!v->is_number_unsigned()) field_error(path(key), "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const char* key, double& out) {
    if (const json* v = raw(key)) {
      if (!v->is_number()) field_error(path(key), "expected a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, bool& out) {
    if (const json* v = raw(key)) {
      if (!v->is_boolean()) field_error(path(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = raw(key)) {
      if (!v->is_string()) field_error(path(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  void get(const char* key, std::vector<int>& out) {
    if (const json* v = raw(key)) {
      if (!v->is_array()) field_error(path(key), "expected an array of integers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number_integer()) field_error(path(key), "expected an array of integers");
        out.push_back(e.get<int>());
      }
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) field_error(path_.empty() ? key : path_ + "." + key, "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string, std::less<>> seen_;
};

DatasetKind parse_kind(Fields& f) {
  std::string kind;
  if (!f.has("kind")) field_error(f.path("kind"), "missing required key");
  f.get("kind", kind);
  if (kind == "gmm") return DatasetKind::Gmm;
  if (kind == "shapes") return DatasetKind::Shapes;
  if (kind == "record") return DatasetKind::Record;
  field_error(f.path("kind"), "expected \"gmm\", \"shapes\" or \"record\", got \"" + kind + "\"");
}

TrunkKind parse_trunk(Fields& f) {
  std::string trunk = "mlp";
  f.get("trunk", trunk);
  if (trunk == "mlp") return TrunkKind::Mlp;
  if (trunk == "conv") return TrunkKind::Conv;
  field_error(f.path("trunk"), "expected \"mlp\" or \"conv\", got \"" + trunk + "\"");
}

void parse_augment(Fields& parent, const char* key, std::optional<AugmentParams>& out) {
  const json* v = parent.raw(key);
  if (!v || v->is_null()) {
    out.reset();
    return;
  }
  Fields f(*v, parent.path(key));
  AugmentParams p;
  f.get("flip_prob", p.flip_prob);
  f.get("max_translate_frac", p.max_translate_frac);
  f.get("jitter_strength", p.jitter_strength);
  f.get("cutout_frac", p.cutout_frac);
  f.get("noise_sigma", p.noise_sigma);
  f.get("strong_ops", p.strong_ops);
  f.finish();
  out = p;
}

void parse_train(Fields& f, TrainConfig& t) {
  f.get("iters", t.iters);
  f.get("e1", t.e1);
  f.get("e2", t.e2);
  f.get("warmup_rot_epochs", t.warmup_rot_epochs);
  f.get("lr_ssl", t.lr_ssl);
  f.get("wd_ssl", t.wd_ssl);
  f.get("momentum_ssl", t.momentum_ssl);
  f.get("lr_cluster", t.lr_cluster);
  f.get("wd_cluster", t.wd_cluster);
  f.get("momentum_cluster", t.momentum_cluster);
  f.get("ema_decay", t.ema_decay);
  f.get("rho", t.rho);
  f.get("alpha", t.alpha);
  f.get("tau", t.tau);
  f.get("lambda_u", t.lambda_u);
  f.get("mu", t.mu);
  f.get("replicas", t.replicas);
  f.get("batch_size", t.batch_size);
  f.get("temperature", t.temperature);
  f.get("rotnet", t.rotnet);
  f.get("shuffle", t.shuffle);
  if (f.has("model")) {
    Fields m = f.child("model");
    t.model.trunk = parse_trunk(m);
    m.get("hidden", t.model.hidden);
    m.get("conv_channels", t.model.conv_channels);
    m.get("leaky_slope", t.model.leaky_slope);
    m.finish();
  }
  parse_augment(f, "weak_aug", t.weak_aug);
  parse_augment(f, "strong_aug", t.strong_aug);
  parse_augment(f, "cluster_aug", t.cluster_aug);
  f.get("seed", t.seed);
  f.get("threads", t.threads);
  f.finish();
}

json augment_json(const std::optional<AugmentParams>& p) {
  if (!p) return nullptr;
  return {{"flip_prob", p->flip_prob},     {"max_translate_frac", p->max_translate_frac},
          {"jitter_strength", p->jitter_strength}, {"cutout_frac", p->cutout_frac},
          {"noise_sigma", p->noise_sigma}, {"strong_ops", p->strong_ops}};
}

}  // namespace

void ExperimentConfig::validate() const {
  if (schema_version != kSchemaVersion)
    fail(ErrorKind::Config, "schema_version: expected " + std::to_string(kSchemaVersion) + ", got " +
                                std::to_string(schema_version));
  const auto& d = dataset;
  if (d.kind == DatasetKind::Record) {
    if (d.path.empty()) field_error("dataset.path", "required for record datasets");
  } else {
    if (d.classes < 2) field_error("dataset.classes", "must be >= 2");
    if (d.samples < d.classes) field_error("dataset.samples", "must be >= dataset.classes");
  }
  if (d.kind == DatasetKind::Gmm) {
    if (d.dim < 1) field_error("dataset.dim", "must be >= 1");
    if (!(d.separation >= 0)) field_error("dataset.separation", "must be >= 0");
  }
  if (d.kind == DatasetKind::Shapes) {
    if (d.classes > kShapeClasses)
      field_error("dataset.classes", "at most " + std::to_string(kShapeClasses) + " shape classes");
    if (d.image_size < 8 || d.image_size > 32) field_error("dataset.image_size", "must lie in [8, 32]");
    if (d.channels != 1 && d.channels != 3) field_error("dataset.channels", "must be 1 or 3");
  }
  if (split.labels_per_class < 0) field_error("split.labels_per_class", "must be >= 0");
  if (!(split.test_frac >= 0 && split.test_frac < 1)) field_error("split.test_frac", "must lie in [0, 1)");
  if (output.dir.empty()) field_error("output.dir", "must not be empty");
  if (output.checkpoint_every < 0) field_error("output.checkpoint_every", "must be >= 0");
  train.validate();
}

ExperimentConfig parse_experiment(std::string_view text) {
  json root;
  try {
    root = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  Fields top(root, "");
  top.get("schema_version", cfg.schema_version);
  if (cfg.schema_version != ExperimentConfig::kSchemaVersion)
    field_error("schema_version", "unsupported version " + std::to_string(cfg.schema_version));

  Fields d = top.child("dataset");
  cfg.dataset.kind = parse_kind(d);
  d.get("classes", cfg.dataset.classes);
  d.get("samples", cfg.dataset.samples);
  d.get("dim", cfg.dataset.dim);
  d.get("separation", cfg.dataset.separation);
  d.get("image_size", cfg.dataset.image_size);
  d.get("channels", cfg.dataset.channels);
  d.get("seed", cfg.dataset.seed);
  d.get("path", cfg.dataset.path);
  d.finish();

  if (top.has("split")) {
    Fields s = top.child("split");
    s.get("labels_per_class", cfg.split.labels_per_class);
    s.get("test_frac", cfg.split.test_frac);
    s.get("seed", cfg.split.seed);
    s.finish();
  }
  if (top.has("train")) {
    Fields t = top.child("train");
    parse_train(t, cfg.train);
  }
  if (top.has("output")) {
    Fields o = top.child("output");
    o.get("dir", cfg.output.dir);
    o.get("checkpoint_every", cfg.output.checkpoint_every);
    o.finish();
  }
  top.finish();
  cfg.validate();
  return cfg;
}

std::string to_json(const ExperimentConfig& cfg) {
  const auto& d = cfg.dataset;
  const auto& t = cfg.train;
  json root;
  root["schema_version"] = cfg.schema_version;
  root["dataset"] = {{"kind", to_string(d.kind)}, {"classes", d.classes},   {"samples", d.samples},
                     {"dim", d.dim},              {"separation", d.separation}, {"image_size", d.image_size},
                     {"channels", d.channels},    {"seed", d.seed},         {"path", d.path}};
  root["split"] = {{"labels_per_class", cfg.split.labels_per_class},
                   {"test_frac", cfg.split.test_frac},
                   {"seed", cfg.split.seed}};
  json train = {{"iters", t.iters},
                {"e1", t.e1},
                {"e2", t.e2},
                {"warmup_rot_epochs", t.warmup_rot_epochs},
                {"lr_ssl", t.lr_ssl},
                {"wd_ssl", t.wd_ssl},
                {"momentum_ssl", t.momentum_ssl},
                {"lr_cluster", t.lr_cluster},
                {"wd_cluster", t.wd_cluster},
                {"momentum_cluster", t.momentum_cluster},
                {"ema_decay", t.ema_decay},
                {"rho", t.rho},
                {"alpha", t.alpha},
                {"tau", t.tau},
                {"lambda_u", t.lambda_u},
                {"mu", t.mu},
                {"replicas", t.replicas},
                {"batch_size", t.batch_size},
                {"temperature", t.temperature},
                {"rotnet", t.rotnet},
                {"shuffle", t.shuffle},
                {"seed", t.seed},
                {"threads", t.threads}};
  train["model"] = {{"trunk", t.model.trunk == TrunkKind::Conv ? "conv" : "mlp"},
                    {"hidden", t.model.hidden},
                    {"conv_channels", t.model.conv_channels},
                    {"leaky_slope", t.model.leaky_slope}};
  train["weak_aug"] = augment_json(t.weak_aug);
  train["strong_aug"] = augment_json(t.strong_aug);
  train["cluster_aug"] = augment_json(t.cluster_aug);
  root["train"] = std::move(train);
  root["output"] = {{"dir", cfg.output.dir}, {"checkpoint_every", cfg.output.checkpoint_every}};
  return root.dump(2) + "\n";
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error&) {
    fail(ErrorKind::Config, "cannot read config " + path.string());
  }
  return parse_experiment(text);
}

Dataset build_dataset(const DatasetConfig& cfg) {
  switch (cfg.kind) {
    case DatasetKind::Gmm:
      return make_gaussian_mixture(cfg.classes, cfg.samples, cfg.dim, cfg.separation, cfg.seed);
    case DatasetKind::Shapes:
      return make_shape_images(cfg.classes, cfg.samples, cfg.image_size, cfg.seed, cfg.channels);
    case DatasetKind::Record:
      return read_record_file(cfg.path);
  }
  fail(ErrorKind::Config, "unknown dataset kind");
}

}  // namespace bssl
