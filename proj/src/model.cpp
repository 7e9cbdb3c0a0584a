#include "gtrans/model.hpp"

#include <nlohmann/json.hpp>

#include "gtrans/errors.hpp"
#include "gtrans/serialize.hpp"
#include "gtrans/training.hpp"

namespace gtrans {

namespace {
constexpr int kCheckpointVersion = 1;
}

nlohmann::json ModelConfig::to_json() const {
  return {
      {"backbone",
       {{"family", to_string(backbone.family)},
        {"critical_layers", backbone.critical_layers},
        {"pretrained", backbone.pretrained}}},
      {"tokenizer", {{"groups", groups}, {"dim", dim}}},
      {"tfm", {{"blocks", tfm_blocks}, {"use_decoder", use_decoder}}},
      {"mapper",
       {{"token_source", to_string(token_source)}, {"query_source", to_string(query_source)}}},
      {"seed", seed},
  };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.backbone.family = backbone_family_from_string(j.at("backbone").at("family").get<std::string>());
  c.backbone.critical_layers = j.at("backbone").at("critical_layers").get<std::vector<int>>();
  c.backbone.pretrained = j.at("backbone").at("pretrained").get<bool>();
  c.groups = j.at("tokenizer").at("groups").get<int>();
  c.dim = j.at("tokenizer").at("dim").get<int>();
  c.tfm_blocks = j.at("tfm").at("blocks").get<int>();
  c.use_decoder = j.at("tfm").at("use_decoder").get<bool>();
  c.token_source = token_source_from_string(j.at("mapper").at("token_source").get<std::string>());
  c.query_source = query_source_from_string(j.at("mapper").at("query_source").get<std::string>());
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

GTransModel GTransModel::build(const ModelConfig& config) {
  GTransModel m;
  m.config_ = config;

  BackboneConfig guide_cfg = config.backbone;
  guide_cfg.pretrained = true;
  m.guide_ = Backbone::build(guide_cfg, config.seed, config.weight_cache);
  m.guide_.freeze();

  BackboneConfig student_cfg = config.backbone;
  student_cfg.pretrained = false;
  std::mt19937_64 rng(config.seed);
  m.student_ = Backbone::build(student_cfg, rng());

  std::vector<int> channels = m.guide_.critical_channels();
  m.guide_tokenizer_ = Tokenizer::build(config.groups, config.dim, channels, rng);
  m.student_tokenizer_ = Tokenizer::build(config.groups, config.dim, channels, rng);
  m.tfm_ = Tfm::build(config.dim, config.tfm_blocks, config.use_decoder, rng);
  m.mapper_ = Mapper::build(config.groups, config.dim, channels, config.query_source, rng);
  return m;
}

GTransModel::ForwardOut GTransModel::forward_image(const std::vector<Var>& guide_pyr,
                                                   const std::vector<Var>& student_pyr,
                                                   int image) {
  size_t L = guide_pyr.size();
  std::vector<Var> guide_feats, student_feats, guide_rows, student_rows;
  for (size_t l = 0; l < L; ++l) {
    Var gf = slice_image(guide_pyr[l], image);    // (c, w*h)
    Var sf = slice_image(student_pyr[l], image);  // (c, w*h)
    guide_feats.push_back(gf);
    student_feats.push_back(sf);
    guide_rows.push_back(transpose(gf));
    student_rows.push_back(transpose(sf));
  }
  Var guide_tokens = guide_tokenizer_.tokenize_pyramid(guide_rows);
  Var student_tokens = student_tokenizer_.tokenize_pyramid(student_rows);
  auto [e_out, d_out] = tfm_.forward(guide_tokens, student_tokens);
  const Var& tokens = config_.token_source == TokenSource::encoder ? e_out : d_out;

  ForwardOut out;
  out.guide_features = std::move(guide_feats);
  out.mapped_features = mapper_.map_pyramid(student_feats, out.guide_features, tokens);
  return out;
}

Var GTransModel::training_loss(const Tensor& batch) {
  Var batch_var(batch);
  std::vector<Var> guide_pyr = guide_.extract_pyramid(batch_var);
  std::vector<Var> student_pyr = student_.extract_pyramid(batch_var);
  int n = batch.dim(0);
  Var loss;
  for (int i = 0; i < n; ++i) {
    ForwardOut fw = forward_image(guide_pyr, student_pyr, i);
    Var image_loss = total_loss(fw.guide_features, fw.mapped_features);
    loss = loss.defined() ? add(loss, image_loss) : image_loss;
  }
  return scale(loss, 1.0 / n);
}

std::vector<GTransModel::ImagePyramids> GTransModel::eval_forward(const Tensor& batch) {
  NoGradGuard ng;
  bool was_training = student_.training_mode();
  student_.set_training(false);
  Var batch_var(batch);
  std::vector<Var> guide_pyr = guide_.extract_pyramid(batch_var);
  std::vector<Var> student_pyr = student_.extract_pyramid(batch_var);
  int n = batch.dim(0);
  std::vector<ImagePyramids> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    ForwardOut fw = forward_image(guide_pyr, student_pyr, i);
    for (size_t l = 0; l < fw.guide_features.size(); ++l) {
      int c = guide_pyr[l].val().dim(1);
      int h = guide_pyr[l].val().dim(2);
      int w = guide_pyr[l].val().dim(3);
      Tensor g = fw.guide_features[l].val();
      Tensor m = fw.mapped_features[l].val();
      out[static_cast<size_t>(i)].guide.emplace_back(
          std::vector<int>{c, h, w}, std::vector<Scalar>(g.data(), g.data() + g.size()));
      out[static_cast<size_t>(i)].mapped.emplace_back(
          std::vector<int>{c, h, w}, std::vector<Scalar>(m.data(), m.data() + m.size()));
    }
  }
  student_.set_training(was_training);
  return out;
}

ParamList GTransModel::trainable_parameters() const {
  ParamList out = student_.parameters("student");
  ParamList more = guide_tokenizer_.parameters("guide_tokenizer");
  out.insert(out.end(), more.begin(), more.end());
  more = student_tokenizer_.parameters("student_tokenizer");
  out.insert(out.end(), more.begin(), more.end());
  more = tfm_.parameters("tfm");
  out.insert(out.end(), more.begin(), more.end());
  more = mapper_.parameters("mapper");
  out.insert(out.end(), more.begin(), more.end());
  return out;
}

BufferList GTransModel::student_buffers() { return student_.buffers("student"); }

void GTransModel::save_checkpoint(const std::string& path, const std::string& run_config_json,
                                  int epoch, int64_t step) const {
  nlohmann::json meta = {
      {"kind", "gtrans_checkpoint"},
      {"checkpoint_version", kCheckpointVersion},
      {"model_config", config_.to_json()},
      {"epoch", epoch},
      {"step", step},
      {"lambdas", lambdas},
      {"guide_checksum", const_cast<GTransModel*>(this)->guide_.checksum()},
      {"run_config", run_config_json},
  };
  std::vector<NamedTensor> tensors;
  for (const auto& p : trainable_parameters()) tensors.push_back({p.name, p.var.val()});
  for (auto& b : const_cast<GTransModel*>(this)->student_buffers())
    tensors.push_back({b.name, *b.tensor});
  write_tensor_container(path, meta, tensors);
}

LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::string& weight_cache_override) {
  ContainerData data = read_tensor_container(path);
  nlohmann::json meta = nlohmann::json::parse(data.meta_json);
  if (meta.value("kind", "") != "gtrans_checkpoint")
    throw DataError("not a checkpoint file: " + path);
  int version = meta.value("checkpoint_version", -1);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                    std::to_string(kCheckpointVersion) + "): " + path);

  ModelConfig cfg = ModelConfig::from_json(meta.at("model_config"));
  if (!weight_cache_override.empty()) cfg.weight_cache = weight_cache_override;

  LoadedCheckpoint out{GTransModel::build(cfg), meta.value("epoch", 0),
                       meta.value("step", int64_t{0}), meta.value("run_config", std::string())};
  uint64_t expect_guide = meta.value("guide_checksum", uint64_t{0});
  if (expect_guide != 0 && out.model.guide_checksum() != expect_guide)
    throw DataError("checkpoint guide checksum mismatch; the reconstructed guide differs: " + path);

  for (auto& p : out.model.trainable_parameters()) {
    auto it = data.tensors.find(p.name);
    if (it == data.tensors.end()) throw DataError("checkpoint missing tensor " + p.name);
    if (!it->second.same_shape(p.var.val()))
      throw DataError("checkpoint tensor " + p.name + " shape mismatch");
    const_cast<Var&>(p.var).val() = it->second;
  }
  for (auto& b : out.model.student_buffers()) {
    auto it = data.tensors.find(b.name);
    if (it == data.tensors.end()) throw DataError("checkpoint missing buffer " + b.name);
    *b.tensor = it->second;
  }
  out.model.lambdas = meta.value("lambdas", std::vector<Scalar>{});
  return out;
}

}  // namespace gtrans
