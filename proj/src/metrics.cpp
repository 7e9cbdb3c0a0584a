#include "gtrans/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gtrans/errors.hpp"

namespace gtrans {

Scalar auroc(const std::vector<Scalar>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw InvalidInputError("auroc: scores/labels size mismatch");
  int64_t n_pos = 0, n_neg = 0;
  for (int l : labels) (l == 1 ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw MetricError("auroc undefined: both classes must be present");

  // rank-sum with average ranks over ties
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  Scalar rank_sum_pos = 0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    Scalar avg_rank = (static_cast<Scalar>(i + 1) + static_cast<Scalar>(j + 1)) / 2.0;
    for (size_t k = i; k <= j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  return (rank_sum_pos - static_cast<Scalar>(n_pos) * (n_pos + 1) / 2.0) /
         (static_cast<Scalar>(n_pos) * static_cast<Scalar>(n_neg));
}

namespace {

// 8-connected components of a binary mask; each component is a pixel-index list.
std::vector<std::vector<int64_t>> connected_components(const Tensor& mask) {
  int h = mask.dim(0), w = mask.dim(1);
  std::vector<char> seen(static_cast<size_t>(h) * w, 0);
  std::vector<std::vector<int64_t>> comps;
  std::vector<int64_t> stack;
  for (int64_t start = 0; start < mask.size(); ++start) {
    if (mask[start] <= 0.5 || seen[static_cast<size_t>(start)]) continue;
    comps.emplace_back();
    stack.push_back(start);
    seen[static_cast<size_t>(start)] = 1;
    while (!stack.empty()) {
      int64_t p = stack.back();
      stack.pop_back();
      comps.back().push_back(p);
      int pi = static_cast<int>(p / w), pj = static_cast<int>(p % w);
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          if (di == 0 && dj == 0) continue;
          int qi = pi + di, qj = pj + dj;
          if (qi < 0 || qi >= h || qj < 0 || qj >= w) continue;
          int64_t q = static_cast<int64_t>(qi) * w + qj;
          if (mask[q] > 0.5 && !seen[static_cast<size_t>(q)]) {
            seen[static_cast<size_t>(q)] = 1;
            stack.push_back(q);
          }
        }
    }
  }
  return comps;
}

constexpr size_t kMaxExactThresholds = 512;

std::vector<Scalar> sweep_thresholds(const std::vector<Tensor>& maps, SweepInfo* info) {
  std::vector<Scalar> values;
  for (const Tensor& m : maps)
    for (int64_t i = 0; i < m.size(); ++i) values.push_back(m[i]);
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  if (values.size() <= kMaxExactThresholds) {
    std::reverse(values.begin(), values.end());
    if (info) *info = {static_cast<int64_t>(values.size()), true};
    return values;
  }
  // quantile-spaced picks over the distinct values, descending
  std::vector<Scalar> picks;
  for (size_t k = 0; k < kMaxExactThresholds; ++k) {
    size_t idx = static_cast<size_t>(std::llround(
        static_cast<double>(k) * static_cast<double>(values.size() - 1) /
        static_cast<double>(kMaxExactThresholds - 1)));
    picks.push_back(values[values.size() - 1 - idx]);
  }
  picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
  if (info) *info = {static_cast<int64_t>(picks.size()), false};
  return picks;
}

}  // namespace

Scalar aupro(const std::vector<Tensor>& maps, const std::vector<Tensor>& masks, Scalar fpr_cap,
             SweepInfo* sweep_out) {
  if (fpr_cap <= 0 || fpr_cap > 1) throw ConfigError("aupro: fpr_cap must be in (0,1]");
  if (maps.size() != masks.size() || maps.empty())
    throw InvalidInputError("aupro: maps/masks mismatch");
  for (size_t i = 0; i < maps.size(); ++i)
    if (!maps[i].same_shape(masks[i]))
      throw ShapeError("aupro: map/mask shape mismatch at image " + std::to_string(i));

  std::vector<std::pair<size_t, std::vector<int64_t>>> components;  // (image, pixels)
  int64_t negatives = 0;
  for (size_t i = 0; i < masks.size(); ++i) {
    for (auto& comp : connected_components(masks[i])) components.emplace_back(i, std::move(comp));
    for (int64_t p = 0; p < masks[i].size(); ++p)
      if (masks[i][p] <= 0.5) ++negatives;
  }
  if (components.empty()) throw MetricError("aupro undefined: no anomalous pixels in any mask");
  if (negatives == 0) throw MetricError("aupro undefined: no negative pixels");

  std::vector<Scalar> thresholds = sweep_thresholds(maps, sweep_out);
  // curve from (0,0): predictions grow as the threshold falls
  std::vector<std::pair<Scalar, Scalar>> curve = {{0.0, 0.0}};
  for (Scalar t : thresholds) {
    int64_t fp = 0;
    for (size_t i = 0; i < maps.size(); ++i)
      for (int64_t p = 0; p < maps[i].size(); ++p)
        if (maps[i][p] >= t && masks[i][p] <= 0.5) ++fp;
    Scalar pro = 0;
    for (const auto& [img, pixels] : components) {
      int64_t hit = 0;
      for (int64_t p : pixels)
        if (maps[img][p] >= t) ++hit;
      pro += static_cast<Scalar>(hit) / static_cast<Scalar>(pixels.size());
    }
    pro /= static_cast<Scalar>(components.size());
    curve.emplace_back(static_cast<Scalar>(fp) / static_cast<Scalar>(negatives), pro);
  }
  if (curve.back().first < 1.0) curve.emplace_back(1.0, 1.0);  // everything predicted

  // trapezoid over FPR up to the cap, interpolating the crossing segment
  Scalar area = 0;
  for (size_t k = 1; k < curve.size(); ++k) {
    auto [x0, y0] = curve[k - 1];
    auto [x1, y1] = curve[k];
    if (x0 >= fpr_cap) break;
    if (x1 <= x0) {  // vertical rise: no area, but keep the higher PRO anchor
      continue;
    }
    Scalar hi_x = std::min(x1, fpr_cap);
    Scalar hi_y = y0 + (y1 - y0) * (hi_x - x0) / (x1 - x0);
    area += 0.5 * (y0 + hi_y) * (hi_x - x0);
  }
  return area / fpr_cap;
}

CategoryResult EvaluationReport::aggregate() const {
  CategoryResult agg;
  agg.category = "mean";
  if (categories.empty()) return agg;
  for (const auto& c : categories) {
    agg.image_auroc += c.image_auroc;
    agg.pixel_auroc += c.pixel_auroc;
    agg.aupro += c.aupro;
    agg.n_images += c.n_images;
    agg.n_anomalous += c.n_anomalous;
  }
  Scalar n = static_cast<Scalar>(categories.size());
  agg.image_auroc /= n;
  agg.pixel_auroc /= n;
  agg.aupro /= n;
  return agg;
}

std::string EvaluationReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  auto row = [](const CategoryResult& c) {
    return nlohmann::json{{"category", c.category},
                          {"image_auroc", c.image_auroc},
                          {"pixel_auroc", c.pixel_auroc},
                          {"aupro", c.aupro},
                          {"n_images", c.n_images},
                          {"n_anomalous", c.n_anomalous},
                          {"aupro_sweep",
                           {{"thresholds", c.sweep.thresholds}, {"exact", c.sweep.exact}}}};
  };
  for (const auto& c : categories) rows.push_back(row(c));
  nlohmann::json out = {{"categories", rows}, {"aggregate", row(aggregate())}, {"fpr_cap", fpr_cap}};
  return out.dump(2);
}

std::string EvaluationReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "category,image_auroc,pixel_auroc,aupro,n_images,n_anomalous\n";
  auto row = [&](const CategoryResult& c) {
    os << c.category << "," << c.image_auroc << "," << c.pixel_auroc << "," << c.aupro << ","
       << c.n_images << "," << c.n_anomalous << "\n";
  };
  for (const auto& c : categories) row(c);
  row(aggregate());
  return os.str();
}

CategoryResult evaluate_category(GTransModel& model, const std::vector<ImageSample>& test,
                                 const EvalSettings& settings, std::vector<AnomalyMap>* maps_out,
                                 std::vector<PerImageScore>* scores_out) {
  if (test.empty()) throw DataError("evaluate: empty test set");
  if (settings.score.weight == WeightKind::harmonic && model.lambdas.empty())
    throw DataError("evaluate: model has no calibrated lambdas (run calibrate-lambda)");

  const std::vector<int>& layer_ids = model.config().backbone.critical_layers;
  int out_h = test[0].pixels.dim(1);
  int out_w = test[0].pixels.dim(2);

  std::vector<Scalar> image_scores;
  std::vector<int> image_labels;
  std::vector<Tensor> pixel_maps, pixel_masks;

  for (size_t start = 0; start < test.size(); start += static_cast<size_t>(settings.batch_size)) {
    std::vector<size_t> idx;
    for (size_t k = start;
         k < std::min(test.size(), start + static_cast<size_t>(settings.batch_size)); ++k)
      idx.push_back(k);
    Tensor batch = make_batch(test, idx, settings.preprocess);
    auto pyramids = model.eval_forward(batch);
    for (size_t k = 0; k < idx.size(); ++k) {
      const ImageSample& sample = test[idx[k]];
      AnomalyMap map = anomaly_map(pyramids[k].guide, pyramids[k].mapped, model.lambdas,
                                   settings.score, out_h, out_w, layer_ids);
      image_scores.push_back(map.image_score);
      image_labels.push_back(sample.label == Label::anomalous ? 1 : 0);
      pixel_masks.push_back(sample.mask.empty() ? Tensor::zeros({out_h, out_w}) : sample.mask);
      if (scores_out) scores_out->push_back({sample.path, map.image_score, image_labels.back()});
      pixel_maps.push_back(map.values);
      if (maps_out) maps_out->push_back(std::move(map));
    }
  }

  CategoryResult result;
  result.category = test[0].category;
  result.n_images = static_cast<int>(test.size());
  result.n_anomalous = static_cast<int>(std::count(image_labels.begin(), image_labels.end(), 1));
  result.image_auroc = auroc(image_scores, image_labels);

  std::vector<Scalar> pixel_scores;
  std::vector<int> pixel_labels;
  for (size_t i = 0; i < pixel_maps.size(); ++i)
    for (int64_t p = 0; p < pixel_maps[i].size(); ++p) {
      pixel_scores.push_back(pixel_maps[i][p]);
      pixel_labels.push_back(pixel_masks[i][p] > 0.5 ? 1 : 0);
    }
  result.pixel_auroc = auroc(pixel_scores, pixel_labels);
  result.aupro = aupro(pixel_maps, pixel_masks, settings.fpr_cap, &result.sweep);
  return result;
}

}  // namespace gtrans
