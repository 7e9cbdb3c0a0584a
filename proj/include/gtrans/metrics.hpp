#pragma once

#include <string>
#include <vector>

#include "gtrans/datasets.hpp"
#include "gtrans/model.hpp"
#include "gtrans/scoring.hpp"
#include "gtrans/tensor.hpp"

namespace gtrans {

// Mann-Whitney AUROC: fraction of (positive, negative) pairs ranked correctly,
// ties counted 1/2. Requires both classes present.
Scalar auroc(const std::vector<Scalar>& scores, const std::vector<int>& labels);

// How the AUPRO threshold sweep was generated.
struct SweepInfo {
  int64_t thresholds = 0;
  bool exact = false;  // true: every distinct score value; false: quantile-spaced
};

// Area under the per-region-overlap curve for FPR in [0, fpr_cap], normalized
// by the cap. Components use 8-connectivity; FPR pools negative pixels across
// all masks. Small inputs sweep every distinct score; large inputs use 512
// quantile-spaced thresholds.
Scalar aupro(const std::vector<Tensor>& maps, const std::vector<Tensor>& masks,
             Scalar fpr_cap = 0.3, SweepInfo* sweep_out = nullptr);

struct CategoryResult {
  std::string category;
  Scalar image_auroc = 0;
  Scalar pixel_auroc = 0;
  Scalar aupro = 0;
  int n_images = 0;
  int n_anomalous = 0;
  SweepInfo sweep;  // AUPRO threshold-sweep provenance
};

struct EvaluationReport {
  std::vector<CategoryResult> categories;
  Scalar fpr_cap = 0.3;
  CategoryResult aggregate() const;  // arithmetic means over categories
  std::string to_json() const;
  std::string to_csv() const;
};

struct EvalSettings {
  ScoreConfig score;
  PreprocessConfig preprocess;
  Scalar fpr_cap = 0.3;
  int batch_size = 8;
};

struct PerImageScore {
  std::string path;
  Scalar score = 0;
  int label = 0;
};

// Scores every test image with the model's calibrated lambdas and computes the
// three metrics for one category.
CategoryResult evaluate_category(GTransModel& model, const std::vector<ImageSample>& test,
                                 const EvalSettings& settings,
                                 std::vector<AnomalyMap>* maps_out = nullptr,
                                 std::vector<PerImageScore>* scores_out = nullptr);

}  // namespace gtrans
