#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "nmsparse/mask_core.hpp"
#include "nmsparse/models.hpp"

namespace nmsparse {

struct ImportanceScores {
  std::string tensor_name;
  std::size_t rows = 0, cols = 0;
  std::vector<double> scores;
};

// Per-layer input-feature L2 norms collected over calibration forwards.
struct CalibrationStats {
  std::unordered_map<std::string, std::vector<double>> feature_sq_sums;
  std::size_t sample_count = 0;

  std::vector<double> norms(const std::string& tensor_name) const;
};

// Keep the n largest-score entries of every m-block; ties keep the lowest
// column index so results are reproducible across platforms.
LayerMask mask_from_scores(const ImportanceScores& scores, int n, int m);

// score = |w|
LayerMask magnitude_prune(const std::string& name, const Tensor& weights, int n, int m);

// Runs forward passes until max_samples sequences have been consumed and
// accumulates input-feature squares of every prunable linear layer.
CalibrationStats calibrate(const Model& model, BatchIterator& data, std::size_t max_samples);
CalibrationStats calibrate(const Model& model, const RegressionData& data);

// score_ij = |w_ij| * norm_j (activation-aware one-shot rule)
LayerMask wanda_prune(const std::string& name, const Tensor& weights,
                      const CalibrationStats& stats, int n, int m);

// One-shot masks for every prunable tensor of the model.
std::vector<LayerMask> prune_model_magnitude(const Model& model, int n, int m);
std::vector<LayerMask> prune_model_wanda(const Model& model, const CalibrationStats& stats, int n,
                                         int m);

// Reads a MaskArchive (coded or raw-bit) and validates it against the
// model's prunable tensors and the (n, m) pattern.
std::vector<LayerMask> import_external_masks(const std::vector<std::uint8_t>& file_bytes,
                                             const Model& model, int n, int m);

}  // namespace nmsparse
