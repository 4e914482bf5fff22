#include "nmsparse/pruners.hpp"

#include <algorithm>
#include <cmath>

#include "nmsparse/serialize.hpp"

namespace nmsparse {

std::vector<double> CalibrationStats::norms(const std::string& tensor_name) const {
  auto it = feature_sq_sums.find(tensor_name);
  if (it == feature_sq_sums.end())
    throw ValidationError("no calibration stats for tensor " + tensor_name);
  std::vector<double> out(it->second.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(it->second[i]);
  return out;
}

LayerMask mask_from_scores(const ImportanceScores& scores, int n, int m) {
  const MaskCandidateSet set = enumerate_candidates(n, m);
  if (scores.cols % static_cast<std::size_t>(m) != 0)
    throw ValidationError("tensor " + scores.tensor_name + ": width " +
                          std::to_string(scores.cols) + " not divisible by m=" +
                          std::to_string(m));
  if (scores.scores.size() != scores.rows * scores.cols)
    throw ValidationError("tensor " + scores.tensor_name + ": score size mismatch");
  for (double s : scores.scores)
    if (!std::isfinite(s) || s < 0.0)
      throw ValidationError("tensor " + scores.tensor_name + ": scores must be finite and >= 0");
  LayerMask mask;
  mask.tensor_name = scores.tensor_name;
  mask.rows = static_cast<std::uint32_t>(scores.rows);
  mask.cols = static_cast<std::uint32_t>(scores.cols);
  const std::size_t blocks = scores.rows * scores.cols / static_cast<std::size_t>(m);
  mask.block_indices.resize(blocks);
  std::vector<int> idx(static_cast<std::size_t>(m));
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(m));
  for (std::size_t b = 0; b < blocks; ++b) {
    const double* s = scores.scores.data() + b * static_cast<std::size_t>(m);
    for (int j = 0; j < m; ++j) idx[static_cast<std::size_t>(j)] = j;
    // Highest score first, lowest index on ties.
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int c) { return s[a] > s[c]; });
    std::fill(bits.begin(), bits.end(), 0);
    for (int j = 0; j < n; ++j) bits[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])] = 1;
    int found = -1;
    for (int ci = 0; ci < set.size(); ++ci)
      if (set.masks[static_cast<std::size_t>(ci)] == bits) {
        found = ci;
        break;
      }
    mask.block_indices[b] = static_cast<std::uint16_t>(found);
  }
  return mask;
}

LayerMask magnitude_prune(const std::string& name, const Tensor& weights, int n, int m) {
  if (weights.rank() != 2) throw ValidationError("magnitude_prune expects a matrix");
  ImportanceScores scores;
  scores.tensor_name = name;
  scores.rows = weights.dim(0);
  scores.cols = weights.dim(1);
  scores.scores.resize(weights.numel());
  for (std::size_t i = 0; i < weights.numel(); ++i) scores.scores[i] = std::fabs(weights.at(i));
  return mask_from_scores(scores, n, m);
}

CalibrationStats calibrate(const Model& model, BatchIterator& data, std::size_t max_samples) {
  if (max_samples == 0) throw ValidationError("calibrate: max_samples must be positive");
  CalibCollector collector;
  std::size_t seen = 0;
  while (seen < max_samples) {
    Batch b = data.next();
    Tape tape;
    model.build_loss(tape, b, {}, &collector);
    seen += static_cast<std::size_t>(b.batch);
  }
  CalibrationStats stats;
  stats.feature_sq_sums = std::move(collector.feature_sq_sums);
  stats.sample_count = seen;
  return stats;
}

CalibrationStats calibrate(const Model& model, const RegressionData& data) {
  CalibCollector collector;
  Batch b = regression_batch(data);
  Tape tape;
  model.build_loss(tape, b, {}, &collector);
  CalibrationStats stats;
  stats.feature_sq_sums = std::move(collector.feature_sq_sums);
  stats.sample_count = data.x.dim(0);
  return stats;
}

LayerMask wanda_prune(const std::string& name, const Tensor& weights,
                      const CalibrationStats& stats, int n, int m) {
  if (weights.rank() != 2) throw ValidationError("wanda_prune expects a matrix");
  const std::vector<double> norms = stats.norms(name);
  if (norms.size() != weights.dim(1))
    throw ValidationError("tensor " + name + ": calibration covers " +
                          std::to_string(norms.size()) + " features, weight width is " +
                          std::to_string(weights.dim(1)));
  ImportanceScores scores;
  scores.tensor_name = name;
  scores.rows = weights.dim(0);
  scores.cols = weights.dim(1);
  scores.scores.resize(weights.numel());
  for (std::size_t r = 0; r < scores.rows; ++r)
    for (std::size_t c = 0; c < scores.cols; ++c)
      scores.scores[r * scores.cols + c] = std::fabs(weights.at(r * scores.cols + c)) * norms[c];
  return mask_from_scores(scores, n, m);
}

std::vector<LayerMask> prune_model_magnitude(const Model& model, int n, int m) {
  std::vector<LayerMask> masks;
  masks.reserve(model.prunable.size());
  for (const std::string& name : model.prunable)
    masks.push_back(magnitude_prune(name, model.param(name), n, m));
  return masks;
}

std::vector<LayerMask> prune_model_wanda(const Model& model, const CalibrationStats& stats, int n,
                                         int m) {
  std::vector<LayerMask> masks;
  masks.reserve(model.prunable.size());
  for (const std::string& name : model.prunable)
    masks.push_back(wanda_prune(name, model.param(name), stats, n, m));
  return masks;
}

std::vector<LayerMask> import_external_masks(const std::vector<std::uint8_t>& file_bytes,
                                             const Model& model, int n, int m) {
  MaskArchive archive = decode_masks(file_bytes);
  if (archive.n != n || archive.m != m)
    throw ValidationError("mask file holds a " + std::to_string(archive.n) + ":" +
                          std::to_string(archive.m) + " pattern, expected " + std::to_string(n) +
                          ":" + std::to_string(m));
  const MaskCandidateSet set = enumerate_candidates(n, m);
  for (const LayerMask& mask : archive.masks) {
    validate_layer_mask(mask, set);
    if (!model.is_prunable(mask.tensor_name))
      throw ValidationError("mask file names unknown prunable tensor " + mask.tensor_name);
    const auto [rows, cols] = model.weight_dims(mask.tensor_name);
    if (mask.rows != rows || mask.cols != cols)
      throw ValidationError("tensor " + mask.tensor_name + ": mask shape " +
                            std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                            " does not match weights " + std::to_string(rows) + "x" +
                            std::to_string(cols));
  }
  return std::move(archive.masks);
}

}  // namespace nmsparse
