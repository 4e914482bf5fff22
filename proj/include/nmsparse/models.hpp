#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "nmsparse/autodiff.hpp"
#include "nmsparse/tensor.hpp"

namespace nmsparse {

enum class ModelKind { Linear, Mlp, TransformerLm };

std::string kind_name(ModelKind k);
ModelKind kind_from_name(const std::string& s);

struct ToyModelSpec {
  ModelKind kind = ModelKind::TransformerLm;
  int vocab_size = 256;
  int embed_dim = 64;
  int num_layers = 2;
  int num_heads = 4;
  int context_length = 128;
  int mlp_ratio = 4;
  // linear / mlp kinds
  int in_dim = 8;
  int out_dim = 4;
  int hidden_dim = 16;

  void validate(int m) const;  // every prunable input dim divisible by m
};

// One training batch: token windows for the char LM, (x, y) rows for the
// regression kinds.
struct Batch {
  std::vector<int> inputs, targets;
  int batch = 0, seq = 0;
  Tensor x, y;
};

// Accumulates per-feature squared input sums of prunable linear layers
// during a forward pass (used by activation-aware one-shot pruning).
struct CalibCollector {
  std::unordered_map<std::string, std::vector<double>> feature_sq_sums;
  std::size_t sample_count = 0;
};

class Model {
 public:
  ToyModelSpec spec;
  std::vector<std::string> order;  // parameter names, construction order
  std::unordered_map<std::string, Tensor> params;
  std::vector<std::string> prunable;  // names carrying N:M masks

  static Model build(const ToyModelSpec& spec, std::uint64_t seed, int m = 4);

  const Tensor& param(const std::string& name) const;
  Tensor& param(const std::string& name);
  bool is_prunable(const std::string& name) const;
  // (rows, cols) of a named weight matrix
  std::pair<std::size_t, std::size_t> weight_dims(const std::string& name) const;

  // Flips requires_grad on all parameters (pretraining vs frozen mask
  // learning).
  void set_trainable(bool trainable);
  bool trainable() const { return trainable_; }

  // Builds the forward graph and returns the scalar data loss (mean token
  // NLL for the LM, mean squared error for regression kinds). `overrides`
  // substitute specific weight nodes, e.g. soft-masked weights.
  Tape::NodeId build_loss(Tape& tape, const Batch& batch,
                          const std::unordered_map<std::string, Tape::NodeId>& overrides = {},
                          CalibCollector* calib = nullptr) const;

  std::uint64_t weights_hash() const;

  std::vector<std::uint8_t> serialize() const;
  static Model deserialize(const std::vector<std::uint8_t>& bytes);
  void save(const std::string& path) const;
  static Model load(const std::string& path);

 private:
  bool trainable_ = false;
  Tensor add_param(const std::string& name, Shape shape, bool prunable_flag);
};

// Byte corpus with a deterministic train/validation split (identity byte
// tokenizer, vocab 256).
struct Corpus {
  std::vector<std::uint8_t> bytes;
  double val_fraction = 0.1;

  static Corpus from_file(const std::string& path, double val_fraction = 0.1);
  static Corpus from_bytes(std::vector<std::uint8_t> bytes, double val_fraction = 0.1);

  std::size_t split() const;  // first validation offset
  std::size_t train_size() const { return split(); }
  std::size_t val_size() const { return bytes.size() - split(); }
};

// Shuffled-epoch iterator over training windows: targets are inputs shifted
// by one, every valid start offset appears exactly once per epoch.
class BatchIterator {
 public:
  BatchIterator(const Corpus& corpus, int batch_size, int context, std::uint64_t seed);

  Batch next();

  std::uint64_t epoch() const { return epoch_; }
  std::uint64_t cursor() const { return cursor_; }
  void restore(std::uint64_t epoch, std::uint64_t cursor);

 private:
  void reshuffle();
  const Corpus* corpus_;
  int batch_size_;
  int context_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::uint64_t cursor_ = 0;
  std::vector<std::uint32_t> offsets_;
};

// Fixed regression set: x ~ N(0,1), y = dense model outputs, so masked
// models are scored against dense behavior.
struct RegressionData {
  Tensor x;  // [samples, in]
  Tensor y;  // [samples, out]
};
RegressionData make_regression_data(const Model& model, std::size_t samples, std::uint64_t seed);

Batch regression_batch(const RegressionData& data);

// Trains all parameters with Adam on the corpus; returns the final
// validation loss. The caller freezes the model afterwards.
double pretrain_dense(Model& model, const Corpus& corpus, int steps, double lr, int batch_size,
                      std::uint64_t seed, std::vector<double>* loss_history = nullptr);

// Mean token NLL of the (dense) model over validation windows.
double validation_loss(const Model& model, const Corpus& corpus, int batch_size = 8,
                       std::size_t max_batches = 0);

// Deterministic synthetic text. Flavors: "prose", "code", or "blend".
std::vector<std::uint8_t> make_synthetic_corpus(const std::string& flavor, std::size_t size,
                                                std::uint64_t seed);

}  // namespace nmsparse
