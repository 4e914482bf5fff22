#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nmsparse/gumbel.hpp"
#include "nmsparse/mask_core.hpp"
#include "nmsparse/models.hpp"

namespace nmsparse {

struct TrainConfig {
  int steps = 2000;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double weight_decay = 0.1;
  double lambda_reg = 1e-5;
  double prior_strength = 3.0;
  double logits_init_std = 0.01;
  double tau_start = 4.0;
  double tau_end = 0.05;
  double kappa_start = 1e2;
  double kappa_end = 5e2;
  std::string tau_decay = "geometric";  // or "linear"
  std::uint64_t seed = 0;
  std::vector<std::string> layers_to_skip;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double divergence_factor = 1e4;
  int pattern_n = 2;
  int pattern_m = 4;

  void validate() const;
  GumbelSchedule schedule() const;
  std::string to_kv() const;
  static TrainConfig from_kv(const std::string& text);
  std::uint64_t hash() const;
};

// Per-block learnable logits of one weight matrix.
struct MaskDistribution {
  std::string tensor_name;
  std::uint32_t rows = 0, cols = 0;
  Tensor logits;  // [num_blocks, |S|]
};

struct TrainMetrics {
  struct Row {
    int step = 0;
    double loss = 0, reg = 0, grad_norm = 0, mask_diff = 0;
    double max_prob_mean = 0, max_prob_p10 = 0, remain_l2 = 0;
  };
  std::vector<Row> rows;

  std::string to_text() const;
  static TrainMetrics parse(const std::string& text);
};

struct Checkpoint {
  std::uint32_t step = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t data_epoch = 0;
  std::uint64_t data_cursor = 0;
  std::vector<MaskDistribution> dists;
  std::vector<Tensor> adam_m, adam_v;  // parallel to dists

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);
};

// Thrown when the loss blows past the divergence guard or turns non-finite;
// carries the state at the failing step.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& msg, Checkpoint state)
      : std::runtime_error(msg), checkpoint(std::move(state)) {}
  Checkpoint checkpoint;
};

struct TrainResult {
  std::vector<LayerMask> masks;
  TrainMetrics metrics;
  Checkpoint checkpoint;
};

// Feeds the training loop. Char-LM runs pull shuffled corpus windows; the
// regression toys use the full fixed batch every step.
class DataSource {
 public:
  virtual ~DataSource() = default;
  virtual Batch next() = 0;
  virtual std::pair<std::uint64_t, std::uint64_t> position() const { return {0, 0}; }
  virtual void restore(std::uint64_t, std::uint64_t) {}
};

class CorpusSource : public DataSource {
 public:
  CorpusSource(const Corpus& corpus, const Model& model, const TrainConfig& config);
  Batch next() override { return it_.next(); }
  std::pair<std::uint64_t, std::uint64_t> position() const override;
  void restore(std::uint64_t epoch, std::uint64_t cursor) override { it_.restore(epoch, cursor); }

 private:
  BatchIterator it_;
};

class FullBatchSource : public DataSource {
 public:
  explicit FullBatchSource(Batch batch) : batch_(std::move(batch)) {}
  Batch next() override { return batch_; }

 private:
  Batch batch_;
};

// Logits init per Algorithm 1: N(0, sigma0) plus an optional prior offset.
std::vector<MaskDistribution> init_logits(const Model& model, const TrainConfig& config,
                                          const std::vector<LayerMask>* priors = nullptr);

// One step's loss graph: Gumbel soft indices -> differentiable masks ->
// masked weights -> data loss minus the sparse-weight regularizer.
struct ObjectiveGraph {
  Tape::NodeId total = -1;  // L_data - lambda * sum ||W . M~||^2
  Tape::NodeId data_loss = -1;
  double reg_value = 0.0;                     // sum ||W . M~||^2
  std::vector<Tape::NodeId> logit_nodes;      // per distribution
  std::vector<std::vector<int>> sampled;      // per distribution, per block argmax
};

ObjectiveGraph training_objective(Tape& tape, const Model& model,
                                  const std::vector<MaskDistribution>& dists, const Batch& batch,
                                  const MaskCandidateSet& set, double tau, double kappa,
                                  double lambda, NoiseSource* noise);

// Runs the Algorithm-1 loop to config.steps. `stop_at_step` interrupts the
// run early (checkpoint captures the state there); `resume` continues an
// interrupted run bit-exactly.
TrainResult train_masks(const Model& model, DataSource& data, const TrainConfig& config,
                        const std::vector<LayerMask>* priors = nullptr,
                        const Checkpoint* resume = nullptr, int stop_at_step = -1);

// Transfer learning: base masks become the prior for a fresh run on new
// data (resume from a checkpoint to continue its logits instead).
TrainResult transfer_masks(const Model& model, const std::vector<LayerMask>& base_masks,
                           DataSource& data, const TrainConfig& config);

// Final hard masks of the current logits.
std::vector<LayerMask> final_masks(const std::vector<MaskDistribution>& dists,
                                   const MaskCandidateSet& set);

// Masked parameter tensors W . M for evaluation (hard masks).
std::unordered_map<std::string, Tensor> masked_params(const Model& model,
                                                      const std::vector<LayerMask>& masks,
                                                      const MaskCandidateSet& set);

// exp(mean token NLL) over the validation split; empty masks = dense model.
double evaluate_perplexity(const Model& model, const std::vector<LayerMask>* masks,
                           const Corpus& corpus, int batch_size = 8, std::size_t max_batches = 0,
                           const std::vector<std::string>* skip_layers = nullptr);
double evaluate_val_loss(const Model& model, const std::vector<LayerMask>* masks,
                         const Corpus& corpus, int batch_size = 8, std::size_t max_batches = 0,
                         const std::vector<std::string>* skip_layers = nullptr);

// Hard-mask loss on a fixed regression set.
double evaluate_regression_loss(const Model& model, const std::vector<LayerMask>* masks,
                                const RegressionData& data);

struct SensitivityReport {
  struct Row {
    std::string label;
    double ppl = 0.0;
  };
  std::vector<Row> rows;
  std::string to_text() const;
};

// Strategies: "none", "all", "first:K", "last:K", "sweep", "names:a,b,c".
SensitivityReport layer_sensitivity(const Model& model, const std::vector<LayerMask>& masks,
                                    const Corpus& corpus, const std::string& strategy,
                                    int batch_size = 8, std::size_t max_batches = 0);

}  // namespace nmsparse
