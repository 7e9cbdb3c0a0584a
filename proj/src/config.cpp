#include "gtrans/config.hpp"

#include <cstdlib>
#include <fstream>

#include <nlohmann/json.hpp>

#include "gtrans/errors.hpp"

namespace gtrans {

namespace {

std::string texture_to_string(TextureFamily t) {
  switch (t) {
    case TextureFamily::smooth_noise: return "smooth_noise";
  }
  return "?";
}

std::string anomaly_to_string(AnomalyShape a) {
  return a == AnomalyShape::square ? "square" : "blob";
}

// Every user key must exist in the default tree with a compatible JSON type.
void validate_keys(const nlohmann::json& user, const nlohmann::json& defaults,
                   const std::string& prefix) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!defaults.contains(it.key())) throw ConfigError("unknown config key: " + path);
    const nlohmann::json& ref = defaults.at(it.key());
    if (ref.is_object()) {
      if (!it.value().is_object()) throw ConfigError("config key " + path + " must be an object");
      validate_keys(it.value(), ref, path);
    } else if (ref.is_array() != it.value().is_array()) {
      throw ConfigError("config key " + path + " has the wrong type");
    } else if (ref.is_string() && !it.value().is_string()) {
      throw ConfigError("config key " + path + " must be a string");
    } else if (ref.is_boolean() && !it.value().is_boolean()) {
      throw ConfigError("config key " + path + " must be a boolean");
    } else if (ref.is_number() && !it.value().is_number()) {
      throw ConfigError("config key " + path + " must be a number");
    }
  }
}

void deep_merge(nlohmann::json& base, const nlohmann::json& over) {
  for (auto it = over.begin(); it != over.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object())
      deep_merge(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

void apply_override(nlohmann::json& tree, const std::string& spec) {
  size_t eq = spec.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must look like key.path=value: " + spec);
  std::string path = spec.substr(0, eq);
  std::string raw = spec.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;  // bare strings stay strings

  nlohmann::json* node = &tree;
  size_t pos = 0;
  std::vector<std::string> parts;
  while (true) {
    size_t dot = path.find('.', pos);
    parts.push_back(path.substr(pos, dot == std::string::npos ? dot : dot - pos));
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object())
      throw ConfigError("unknown config key: " + path);
    node = &(*node)[parts[i]];
  }
  if (!node->contains(parts.back())) throw ConfigError("unknown config key: " + path);
  (*node)[parts.back()] = value;
}

}  // namespace

nlohmann::json RunConfig::defaults() {
  RunConfig d;
  return d.to_json();
}

nlohmann::json RunConfig::to_json() const {
  return {
      {"seed", seed},
      {"paths",
       {{"data_root", paths.data_root},
        {"weight_cache", paths.weight_cache},
        {"out_dir", paths.out_dir}}},
      {"dataset",
       {{"kind", dataset.kind},
        {"category", dataset.category},
        {"split_ratio", dataset.split_ratio},
        {"preprocess",
         {{"resize_edge", dataset.preprocess.resize_edge},
          {"crop_size", dataset.preprocess.crop_size},
          {"mean", dataset.preprocess.mean},
          {"std", dataset.preprocess.stddev}}},
        {"synthetic",
         {{"image_size", dataset.synthetic.image_size},
          {"train_count", dataset.synthetic.train_count},
          {"val_count", dataset.synthetic.val_count},
          {"test_normal", dataset.synthetic.test_normal},
          {"test_anomalous", dataset.synthetic.test_anomalous},
          {"texture", texture_to_string(dataset.synthetic.texture)},
          {"anomaly", anomaly_to_string(dataset.synthetic.anomaly)},
          {"patch_size", dataset.synthetic.patch_size},
          {"seed", dataset.synthetic.seed}}}}},
      {"backbone",
       {{"family", to_string(backbone.family)}, {"critical_layers", backbone.critical_layers}}},
      {"tokenizer", {{"groups", tokenizer_groups}, {"dim", tokenizer_dim}}},
      {"tfm", {{"blocks", tfm_blocks}, {"use_decoder", tfm_use_decoder}}},
      {"mapper",
       {{"token_source", to_string(mapper_token_source)},
        {"query_source", to_string(mapper_query_source)}}},
      {"training",
       {{"epochs", training.epochs},
        {"batch_size", training.batch_size},
        {"lr_init", training.lr_init},
        {"weight_decay", training.weight_decay},
        {"decay_rate", training.decay_rate}}},
      {"score",
       {{"mode", to_string(score.mode)},
        {"sigma", score.sigma},
        {"weight", to_string(score.weight)},
        {"lambda_source", lambda_source}}},
      {"metrics", {{"fpr_cap", fpr_cap}}},
  };
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  validate_keys(j, defaults(), "");
  nlohmann::json full = defaults();
  deep_merge(full, j);

  RunConfig c;
  c.seed = full.at("seed").get<uint64_t>();
  c.paths.data_root = full.at("paths").at("data_root").get<std::string>();
  c.paths.weight_cache = full.at("paths").at("weight_cache").get<std::string>();
  c.paths.out_dir = full.at("paths").at("out_dir").get<std::string>();

  const auto& ds = full.at("dataset");
  c.dataset.kind = ds.at("kind").get<std::string>();
  if (c.dataset.kind != "mvtec" && c.dataset.kind != "synthetic")
    throw ConfigError("dataset.kind must be mvtec or synthetic, got " + c.dataset.kind);
  c.dataset.category = ds.at("category").get<std::string>();
  c.dataset.split_ratio = ds.at("split_ratio").get<Scalar>();
  const auto& pp = ds.at("preprocess");
  c.dataset.preprocess.resize_edge = pp.at("resize_edge").get<int>();
  c.dataset.preprocess.crop_size = pp.at("crop_size").get<int>();
  auto mean = pp.at("mean").get<std::vector<Scalar>>();
  auto stddev = pp.at("std").get<std::vector<Scalar>>();
  if (mean.size() != 3 || stddev.size() != 3)
    throw ConfigError("preprocess mean/std must have 3 entries");
  std::copy(mean.begin(), mean.end(), c.dataset.preprocess.mean.begin());
  std::copy(stddev.begin(), stddev.end(), c.dataset.preprocess.stddev.begin());
  c.dataset.preprocess.validate();
  const auto& sy = ds.at("synthetic");
  c.dataset.synthetic.image_size = sy.at("image_size").get<int>();
  c.dataset.synthetic.train_count = sy.at("train_count").get<int>();
  c.dataset.synthetic.val_count = sy.at("val_count").get<int>();
  c.dataset.synthetic.test_normal = sy.at("test_normal").get<int>();
  c.dataset.synthetic.test_anomalous = sy.at("test_anomalous").get<int>();
  c.dataset.synthetic.texture = texture_family_from_string(sy.at("texture").get<std::string>());
  c.dataset.synthetic.anomaly = anomaly_shape_from_string(sy.at("anomaly").get<std::string>());
  c.dataset.synthetic.patch_size = sy.at("patch_size").get<int>();
  c.dataset.synthetic.seed = sy.at("seed").get<uint64_t>();
  c.dataset.synthetic.validate();
  if (c.dataset.kind == "synthetic" &&
      c.dataset.synthetic.image_size != c.dataset.preprocess.crop_size)
    throw ConfigError("synthetic image_size (" + std::to_string(c.dataset.synthetic.image_size) +
                      ") must equal preprocess.crop_size (" +
                      std::to_string(c.dataset.preprocess.crop_size) +
                      "): synthetic samples are generated at network input size");

  c.backbone.family = backbone_family_from_string(full.at("backbone").at("family").get<std::string>());
  c.backbone.critical_layers = full.at("backbone").at("critical_layers").get<std::vector<int>>();
  c.backbone.validate();

  c.tokenizer_groups = full.at("tokenizer").at("groups").get<int>();
  c.tokenizer_dim = full.at("tokenizer").at("dim").get<int>();
  if (c.tokenizer_groups < 1 || c.tokenizer_dim < 1)
    throw ConfigError("tokenizer groups and dim must be positive");
  c.tfm_blocks = full.at("tfm").at("blocks").get<int>();
  if (c.tfm_blocks < 1) throw ConfigError("tfm.blocks must be >= 1");
  c.tfm_use_decoder = full.at("tfm").at("use_decoder").get<bool>();
  c.mapper_token_source =
      token_source_from_string(full.at("mapper").at("token_source").get<std::string>());
  c.mapper_query_source =
      query_source_from_string(full.at("mapper").at("query_source").get<std::string>());

  const auto& tr = full.at("training");
  c.training.epochs = tr.at("epochs").get<int>();
  c.training.batch_size = tr.at("batch_size").get<int>();
  c.training.lr_init = tr.at("lr_init").get<Scalar>();
  c.training.weight_decay = tr.at("weight_decay").get<Scalar>();
  c.training.decay_rate = tr.at("decay_rate").get<Scalar>();
  c.training.seed = c.seed;
  c.training.validate();

  const auto& sc = full.at("score");
  c.score.mode = combination_mode_from_string(sc.at("mode").get<std::string>());
  c.score.sigma = sc.at("sigma").get<Scalar>();
  c.score.weight = weight_kind_from_string(sc.at("weight").get<std::string>());
  c.lambda_source = sc.at("lambda_source").get<std::string>();
  if (c.lambda_source != "checkpoint" && c.lambda_source != "unit")
    throw ConfigError("score.lambda_source must be checkpoint or unit");
  if (c.score.sigma < 0) throw ConfigError("score.sigma must be non-negative");

  c.fpr_cap = full.at("metrics").at("fpr_cap").get<Scalar>();
  if (c.fpr_cap <= 0 || c.fpr_cap > 1) throw ConfigError("metrics.fpr_cap must be in (0,1]");
  return c;
}

RunConfig RunConfig::load(const std::string& path_or_default,
                          const std::vector<std::string>& overrides) {
  nlohmann::json tree = defaults();
  if (!path_or_default.empty() && path_or_default != "default") {
    std::ifstream is(path_or_default);
    if (!is) throw ConfigError("cannot open config file: " + path_or_default);
    nlohmann::json user = nlohmann::json::parse(is, nullptr, false);
    if (user.is_discarded()) throw ConfigError("config file is not valid JSON: " + path_or_default);
    validate_keys(user, defaults(), "");
    deep_merge(tree, user);
  }
  for (const std::string& o : overrides) apply_override(tree, o);
  if (const char* env = std::getenv("GTRANS_DATA_ROOT"))
    tree["paths"]["data_root"] = std::string(env);
  if (const char* env = std::getenv("GTRANS_WEIGHT_CACHE"))
    tree["paths"]["weight_cache"] = std::string(env);
  return from_json(tree);
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.backbone = backbone;
  m.backbone.pretrained = true;  // the guide side; build() derives the student
  m.groups = tokenizer_groups;
  m.dim = tokenizer_dim;
  m.tfm_blocks = tfm_blocks;
  m.use_decoder = tfm_use_decoder;
  m.token_source = mapper_token_source;
  m.query_source = mapper_query_source;
  m.seed = seed;
  m.weight_cache = paths.weight_cache;
  return m;
}

EvalSettings RunConfig::eval_settings() const {
  EvalSettings s;
  s.score = score;
  s.preprocess = dataset.preprocess;
  s.fpr_cap = fpr_cap;
  return s;
}

std::string RunConfig::category_name() const {
  return dataset.kind == "synthetic" ? "synthetic" : dataset.category;
}

DatasetSplit load_dataset(const RunConfig& config) {
  if (config.dataset.kind == "synthetic")
    return generate_synthetic_dataset(config.dataset.synthetic);
  return load_mvtec_category(config.paths.data_root, config.dataset.category,
                             config.dataset.preprocess, config.dataset.split_ratio, config.seed);
}

}  // namespace gtrans
