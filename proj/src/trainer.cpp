#include "nmsparse/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <sstream>

#include "nmsparse/rng.hpp"
#include "nmsparse/serialize.hpp"

namespace nmsparse {

namespace {

constexpr char kCheckpointMagic[4] = {'N', 'M', 'C', 'K'};
constexpr std::uint16_t kCheckpointVersion = 1;

double parse_double(const std::string& s, const std::string& key) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "' has invalid numeric value '" + s + "'");
  }
}

long long parse_int(const std::string& s, const std::string& key) {
  try {
    std::size_t used = 0;
    long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "' has invalid integer value '" + s + "'");
  }
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    std::string item = s.substr(pos, comma - pos);
    if (!item.empty()) out.push_back(item);
    pos = comma + 1;
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// Resolves skip-list entries against the model's prunable tensors. Entries
// may be exact tensor names or layer prefixes ("layer0" covers all of that
// block's projections).
std::set<std::string> expand_skip_list(const Model& model,
                                       const std::vector<std::string>& entries) {
  std::set<std::string> skipped;
  for (const std::string& entry : entries) {
    bool matched = false;
    for (const std::string& name : model.prunable) {
      if (name == entry || name.rfind(entry + ".", 0) == 0) {
        skipped.insert(name);
        matched = true;
      }
    }
    if (!matched) throw ValidationError("unknown layer name in skip list: " + entry);
  }
  return skipped;
}

}  // namespace

void TrainConfig::validate() const {
  if (steps < 0) throw ValidationError("steps must be >= 0");
  if (batch_size <= 0) throw ValidationError("batch_size must be positive");
  if (learning_rate <= 0) throw ValidationError("learning_rate must be positive");
  if (lambda_reg < 0) throw ValidationError("lambda_reg must be >= 0");
  if (prior_strength < 0) throw ValidationError("prior_strength must be >= 0");
  if (logits_init_std < 0) throw ValidationError("logits_init_std must be >= 0");
  if (weight_decay < 0) throw ValidationError("weight_decay must be >= 0");
  if (tau_decay != "geometric" && tau_decay != "linear")
    throw ValidationError("tau_decay must be 'geometric' or 'linear'");
  if (pattern_n <= 0 || pattern_m <= 0 || pattern_n >= pattern_m)
    throw ValidationError("pattern requires 0 < n < m");
  schedule().validate();
}

GumbelSchedule TrainConfig::schedule() const {
  GumbelSchedule s;
  s.tau_start = tau_start;
  s.tau_end = tau_end;
  s.kappa_start = kappa_start;
  s.kappa_end = kappa_end;
  s.total_steps = steps;
  s.tau_decay = tau_decay == "linear" ? TauDecay::Linear : TauDecay::Geometric;
  return s;
}

std::string TrainConfig::to_kv() const {
  std::ostringstream os;
  os << "steps=" << steps << "\n";
  os << "batch_size=" << batch_size << "\n";
  os << "learning_rate=" << format_double(learning_rate) << "\n";
  os << "weight_decay=" << format_double(weight_decay) << "\n";
  os << "lambda_reg=" << format_double(lambda_reg) << "\n";
  os << "prior_strength=" << format_double(prior_strength) << "\n";
  os << "logits_init_std=" << format_double(logits_init_std) << "\n";
  os << "tau_start=" << format_double(tau_start) << "\n";
  os << "tau_end=" << format_double(tau_end) << "\n";
  os << "kappa_start=" << format_double(kappa_start) << "\n";
  os << "kappa_end=" << format_double(kappa_end) << "\n";
  os << "tau_decay=" << tau_decay << "\n";
  os << "seed=" << seed << "\n";
  std::string skip;
  for (std::size_t i = 0; i < layers_to_skip.size(); ++i) {
    if (i) skip += ",";
    skip += layers_to_skip[i];
  }
  os << "layers_to_skip=" << skip << "\n";
  os << "adam_beta1=" << format_double(adam_beta1) << "\n";
  os << "adam_beta2=" << format_double(adam_beta2) << "\n";
  os << "adam_eps=" << format_double(adam_eps) << "\n";
  os << "divergence_factor=" << format_double(divergence_factor) << "\n";
  os << "pattern_n=" << pattern_n << "\n";
  os << "pattern_m=" << pattern_m << "\n";
  return os.str();
}

TrainConfig TrainConfig::from_kv(const std::string& text) {
  TrainConfig c;
  for (const auto& [key, value] : parse_kv_text(text)) {
    if (key == "steps") c.steps = static_cast<int>(parse_int(value, key));
    else if (key == "batch_size") c.batch_size = static_cast<int>(parse_int(value, key));
    else if (key == "learning_rate") c.learning_rate = parse_double(value, key);
    else if (key == "weight_decay") c.weight_decay = parse_double(value, key);
    else if (key == "lambda_reg") c.lambda_reg = parse_double(value, key);
    else if (key == "prior_strength") c.prior_strength = parse_double(value, key);
    else if (key == "logits_init_std") c.logits_init_std = parse_double(value, key);
    else if (key == "tau_start") c.tau_start = parse_double(value, key);
    else if (key == "tau_end") c.tau_end = parse_double(value, key);
    else if (key == "kappa_start") c.kappa_start = parse_double(value, key);
    else if (key == "kappa_end") c.kappa_end = parse_double(value, key);
    else if (key == "tau_decay") c.tau_decay = value;
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(value, key));
    else if (key == "layers_to_skip") c.layers_to_skip = split_csv(value);
    else if (key == "adam_beta1") c.adam_beta1 = parse_double(value, key);
    else if (key == "adam_beta2") c.adam_beta2 = parse_double(value, key);
    else if (key == "adam_eps") c.adam_eps = parse_double(value, key);
    else if (key == "divergence_factor") c.divergence_factor = parse_double(value, key);
    else if (key == "pattern_n") c.pattern_n = static_cast<int>(parse_int(value, key));
    else if (key == "pattern_m") c.pattern_m = static_cast<int>(parse_int(value, key));
    else throw ValidationError("unknown config key: " + key);
  }
  c.validate();
  return c;
}

std::uint64_t TrainConfig::hash() const { return fnv1a64(to_kv()); }

std::string TrainMetrics::to_text() const {
  std::ostringstream os;
  os.precision(17);
  for (const Row& r : rows) {
    os << "step=" << r.step << " loss=" << r.loss << " reg=" << r.reg
       << " grad_norm=" << r.grad_norm << " mask_diff=" << r.mask_diff
       << " max_prob_mean=" << r.max_prob_mean << " max_prob_p10=" << r.max_prob_p10
       << " remain_l2=" << r.remain_l2 << "\n";
  }
  return os.str();
}

TrainMetrics TrainMetrics::parse(const std::string& text) {
  TrainMetrics m;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    Row r;
    std::istringstream ls(line);
    std::string field;
    while (ls >> field) {
      const std::size_t eq = field.find('=');
      if (eq == std::string::npos) throw ValidationError("bad metrics field: " + field);
      const std::string key = field.substr(0, eq);
      const std::string value = field.substr(eq + 1);
      if (key == "step") r.step = static_cast<int>(parse_int(value, key));
      else if (key == "loss") r.loss = parse_double(value, key);
      else if (key == "reg") r.reg = parse_double(value, key);
      else if (key == "grad_norm") r.grad_norm = parse_double(value, key);
      else if (key == "mask_diff") r.mask_diff = parse_double(value, key);
      else if (key == "max_prob_mean") r.max_prob_mean = parse_double(value, key);
      else if (key == "max_prob_p10") r.max_prob_p10 = parse_double(value, key);
      else if (key == "remain_l2") r.remain_l2 = parse_double(value, key);
      else throw ValidationError("unknown metrics key: " + key);
    }
    m.rows.push_back(r);
  }
  return m;
}

std::vector<MaskDistribution> init_logits(const Model& model, const TrainConfig& config,
                                          const std::vector<LayerMask>* priors) {
  config.validate();
  const MaskCandidateSet set = enumerate_candidates(config.pattern_n, config.pattern_m);
  const std::set<std::string> skipped = expand_skip_list(model, config.layers_to_skip);
  std::vector<MaskDistribution> dists;
  std::uint64_t tensor_index = 0;
  for (const std::string& name : model.prunable) {
    const std::uint64_t salt = tensor_index++;
    if (skipped.count(name)) continue;
    const auto [rows, cols] = model.weight_dims(name);
    if (cols % static_cast<std::size_t>(set.m) != 0)
      throw ValidationError("tensor " + name + " width not divisible by m");
    const std::size_t blocks = rows * cols / static_cast<std::size_t>(set.m);
    MaskDistribution dist;
    dist.tensor_name = name;
    dist.rows = static_cast<std::uint32_t>(rows);
    dist.cols = static_cast<std::uint32_t>(cols);
    dist.logits = Tensor(Shape{blocks, static_cast<std::size_t>(set.size())});
    Rng rng(derive_seed(config.seed, "logits", salt));
    for (std::size_t i = 0; i < dist.logits.numel(); ++i)
      dist.logits.at(i) = config.logits_init_std > 0 ? rng.normal(0.0, config.logits_init_std) : 0.0;
    if (priors) {
      const LayerMask* prior = nullptr;
      for (const LayerMask& p : *priors)
        if (p.tensor_name == name) prior = &p;
      if (!prior) throw ValidationError("no prior mask for tensor " + name);
      if (prior->rows != rows || prior->cols != cols)
        throw ValidationError("prior mask shape mismatch for tensor " + name);
      validate_layer_mask(*prior, set);
      const std::size_t s = static_cast<std::size_t>(set.size());
      for (std::size_t b = 0; b < blocks; ++b) {
        std::span<const double> row(dist.logits.data() + b * s, s);
        const std::vector<double> shifted =
            apply_prior(row, set.block(prior->block_indices[b]), config.prior_strength, set);
        std::memcpy(dist.logits.data() + b * s, shifted.data(), s * sizeof(double));
      }
    }
    dist.logits.requires_grad = true;
    dists.push_back(std::move(dist));
  }
  return dists;
}

ObjectiveGraph training_objective(Tape& tape, const Model& model,
                                  const std::vector<MaskDistribution>& dists, const Batch& batch,
                                  const MaskCandidateSet& set, double tau, double kappa,
                                  double lambda, NoiseSource* noise) {
  if (model.trainable())
    throw ValidationError("mask learning requires frozen model weights");
  if (tau <= 0 || kappa <= 0) throw ValidationError("tau and kappa must be positive");
  ObjectiveGraph graph;
  const Tensor cand_matrix = set.as_tensor();  // [|S|, m]
  const std::size_t s = static_cast<std::size_t>(set.size());
  std::unordered_map<std::string, Tape::NodeId> overrides;
  Tape::NodeId reg_total = -1;
  for (const MaskDistribution& dist : dists) {
    if (dist.logits.dim(1) != s)
      throw ValidationError("distribution for " + dist.tensor_name +
                            " does not match candidate set size");
    const Tensor& w = model.param(dist.tensor_name);
    const std::size_t blocks = dist.logits.dim(0);
    Tensor g(dist.logits.shape());
    if (noise) {
      for (std::size_t i = 0; i < g.numel(); ++i) g.at(i) = noise->gumbel();
    }
    const Tape::NodeId logits_node = tape.leaf(dist.logits);
    graph.logit_nodes.push_back(logits_node);
    const Tape::NodeId noisy = tape.add(tape.scale(logits_node, kappa), tape.leaf(g));
    const Tape::NodeId soft_idx = tape.softmax(tape.scale(noisy, 1.0 / tau));
    const Tape::NodeId soft_mask = tape.matmul(soft_idx, tape.leaf(cand_matrix));
    const Tape::NodeId masked_w =
        tape.mul(tape.leaf(w), tape.reshape(soft_mask, w.shape()));
    overrides.emplace(dist.tensor_name, masked_w);
    const Tape::NodeId reg = tape.sum_of_squares(masked_w);
    reg_total = reg_total < 0 ? reg : tape.add(reg_total, reg);
    // Hard sample of this step: per-block argmax of kappa*pi + g.
    std::vector<int> sampled(blocks);
    const Tensor& zv = tape.value(noisy);
    for (std::size_t b = 0; b < blocks; ++b)
      sampled[b] = argmax_lowest_index(std::span<const double>(zv.data() + b * s, s));
    graph.sampled.push_back(std::move(sampled));
  }
  graph.data_loss = model.build_loss(tape, batch, overrides);
  if (reg_total >= 0) {
    graph.reg_value = tape.value(reg_total).item();
    graph.total = tape.sub(graph.data_loss, tape.scale(reg_total, lambda));
  } else {
    graph.total = graph.data_loss;
  }
  return graph;
}

namespace {

Checkpoint make_checkpoint(std::uint32_t step, const TrainConfig& config,
                           const std::vector<MaskDistribution>& dists,
                           const std::vector<Tensor>& adam_m, const std::vector<Tensor>& adam_v,
                           const DataSource& data) {
  Checkpoint ck;
  ck.step = step;
  ck.seed = config.seed;
  ck.config_hash = config.hash();
  const auto pos = data.position();
  ck.data_epoch = pos.first;
  ck.data_cursor = pos.second;
  for (const MaskDistribution& d : dists) {
    MaskDistribution copy;
    copy.tensor_name = d.tensor_name;
    copy.rows = d.rows;
    copy.cols = d.cols;
    copy.logits = d.logits.clone();
    ck.dists.push_back(std::move(copy));
  }
  for (const Tensor& t : adam_m) ck.adam_m.push_back(t.clone());
  for (const Tensor& t : adam_v) ck.adam_v.push_back(t.clone());
  return ck;
}

// Per-block L1 distance between the candidate masks sampled at adjacent
// steps, averaged over all blocks.
double mean_mask_l1_diff(const std::vector<std::vector<int>>& prev,
                         const std::vector<std::vector<int>>& cur, const MaskCandidateSet& set) {
  std::size_t blocks = 0;
  double total = 0.0;
  for (std::size_t d = 0; d < cur.size(); ++d) {
    blocks += cur[d].size();
    for (std::size_t b = 0; b < cur[d].size(); ++b) {
      const auto& a = set.masks[static_cast<std::size_t>(prev[d][b])];
      const auto& c = set.masks[static_cast<std::size_t>(cur[d][b])];
      for (int j = 0; j < set.m; ++j)
        total += std::abs(static_cast<int>(a[static_cast<std::size_t>(j)]) -
                          static_cast<int>(c[static_cast<std::size_t>(j)]));
    }
  }
  return blocks ? total / static_cast<double>(blocks) : 0.0;
}

}  // namespace

std::vector<LayerMask> final_masks(const std::vector<MaskDistribution>& dists,
                                   const MaskCandidateSet& set) {
  std::vector<LayerMask> masks;
  const std::size_t s = static_cast<std::size_t>(set.size());
  for (const MaskDistribution& d : dists) {
    LayerMask mask;
    mask.tensor_name = d.tensor_name;
    mask.rows = d.rows;
    mask.cols = d.cols;
    const std::size_t blocks = d.logits.dim(0);
    mask.block_indices.resize(blocks);
    for (std::size_t b = 0; b < blocks; ++b)
      mask.block_indices[b] = static_cast<std::uint16_t>(
          argmax_lowest_index(std::span<const double>(d.logits.data() + b * s, s)));
    masks.push_back(std::move(mask));
  }
  return masks;
}

TrainResult train_masks(const Model& model, DataSource& data, const TrainConfig& config,
                        const std::vector<LayerMask>* priors, const Checkpoint* resume,
                        int stop_at_step) {
  config.validate();
  const std::uint32_t end_step =
      stop_at_step >= 0 ? std::min<std::uint32_t>(static_cast<std::uint32_t>(stop_at_step),
                                                  static_cast<std::uint32_t>(config.steps))
                        : static_cast<std::uint32_t>(config.steps);
  if (model.trainable())
    throw ValidationError("train_masks requires a frozen model; call set_trainable(false)");
  const MaskCandidateSet set = enumerate_candidates(config.pattern_n, config.pattern_m);
  const GumbelSchedule schedule = config.schedule();
  const std::uint64_t weights_before = model.weights_hash();

  std::vector<MaskDistribution> dists;
  std::vector<Tensor> adam_m, adam_v;
  std::uint32_t start_step = 0;
  if (resume) {
    if (resume->config_hash != config.hash())
      throw ValidationError("checkpoint was produced by a different config");
    for (const MaskDistribution& d : resume->dists) {
      MaskDistribution copy;
      copy.tensor_name = d.tensor_name;
      copy.rows = d.rows;
      copy.cols = d.cols;
      copy.logits = d.logits.clone();
      copy.logits.requires_grad = true;
      dists.push_back(std::move(copy));
    }
    for (const Tensor& t : resume->adam_m) adam_m.push_back(t.clone());
    for (const Tensor& t : resume->adam_v) adam_v.push_back(t.clone());
    start_step = resume->step;
    data.restore(resume->data_epoch, resume->data_cursor);
  } else {
    dists = init_logits(model, config, priors);
    for (const MaskDistribution& d : dists) {
      adam_m.emplace_back(d.logits.shape(), 0.0);
      adam_v.emplace_back(d.logits.shape(), 0.0);
    }
  }

  TrainResult result;
  std::vector<std::vector<int>> prev_sampled;
  double initial_loss = 0.0;
  bool have_initial = false;

  for (std::uint32_t step = start_step; step < end_step; ++step) {
    const auto [tau, kappa] = schedule.at(static_cast<int>(step));
    Batch batch = data.next();
    NoiseSource noise(derive_seed(config.seed, "gumbel", step));
    Tape tape;
    ObjectiveGraph graph =
        training_objective(tape, model, dists, batch, set, tau, kappa, config.lambda_reg, &noise);
    const double loss = tape.value(graph.data_loss).item();
    if (!have_initial) {
      initial_loss = loss;
      have_initial = true;
    }
    if (!std::isfinite(loss) ||
        loss > config.divergence_factor * std::max(std::abs(initial_loss), 1e-8)) {
      Checkpoint ck = make_checkpoint(step, config, dists, adam_m, adam_v, data);
      throw TrainingDiverged("mask training diverged at step " + std::to_string(step) +
                                 " (loss=" + std::to_string(loss) + ", initial=" +
                                 std::to_string(initial_loss) + ")",
                             std::move(ck));
    }
    tape.backward(graph.total);

    TrainMetrics::Row row;
    row.step = static_cast<int>(step);
    row.loss = loss;
    row.reg = graph.reg_value;
    row.mask_diff =
        prev_sampled.empty() ? 0.0 : mean_mask_l1_diff(prev_sampled, graph.sampled, set);
    prev_sampled = std::move(graph.sampled);

    // Distribution confidence under the current kappa.
    std::vector<double> max_probs;
    double remain_sq = 0.0;
    const std::size_t s = static_cast<std::size_t>(set.size());
    for (const MaskDistribution& d : dists) {
      const Tensor& w = model.param(d.tensor_name);
      const std::size_t blocks = d.logits.dim(0);
      for (std::size_t b = 0; b < blocks; ++b) {
        std::span<const double> lrow(d.logits.data() + b * s, s);
        const std::vector<double> p = probability_from_logits(lrow, kappa);
        max_probs.push_back(*std::max_element(p.begin(), p.end()));
        const auto& bits = set.masks[static_cast<std::size_t>(argmax_lowest_index(lrow))];
        for (int j = 0; j < set.m; ++j) {
          if (!bits[static_cast<std::size_t>(j)]) continue;
          const double wv = w.at(b * static_cast<std::size_t>(set.m) + static_cast<std::size_t>(j));
          remain_sq += wv * wv;
        }
      }
    }
    if (!max_probs.empty()) {
      double mean = 0.0;
      for (double p : max_probs) mean += p;
      row.max_prob_mean = mean / static_cast<double>(max_probs.size());
      std::vector<double> sorted = max_probs;
      std::sort(sorted.begin(), sorted.end());
      row.max_prob_p10 = sorted[(sorted.size() - 1) / 10];
      row.remain_l2 = std::sqrt(remain_sq);
    }

    double grad_sq = 0.0;
    const double bc1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(step) + 1.0);
    const double bc2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(step) + 1.0);
    for (std::size_t d = 0; d < dists.size(); ++d) {
      const Tensor& g = tape.grad(graph.logit_nodes[d]);
      double* lp = dists[d].logits.data();
      double* mp = adam_m[d].data();
      double* vp = adam_v[d].data();
      const double* gp = g.data();
      const std::size_t n = g.numel();
      for (std::size_t i = 0; i < n; ++i) {
        grad_sq += gp[i] * gp[i];
        mp[i] = config.adam_beta1 * mp[i] + (1.0 - config.adam_beta1) * gp[i];
        vp[i] = config.adam_beta2 * vp[i] + (1.0 - config.adam_beta2) * gp[i] * gp[i];
        const double mh = mp[i] / bc1;
        const double vh = vp[i] / bc2;
        lp[i] -= config.learning_rate * mh / (std::sqrt(vh) + config.adam_eps) +
                 config.learning_rate * config.weight_decay * lp[i];
      }
    }
    row.grad_norm = std::sqrt(grad_sq);
    result.metrics.rows.push_back(row);
  }

  if (model.weights_hash() != weights_before)
    throw std::logic_error("frozen weights changed during mask training");

  result.masks = final_masks(dists, set);
  result.checkpoint = make_checkpoint(end_step, config, dists, adam_m, adam_v, data);
  return result;
}

TrainResult transfer_masks(const Model& model, const std::vector<LayerMask>& base_masks,
                           DataSource& data, const TrainConfig& config) {
  return train_masks(model, data, config, &base_masks);
}

CorpusSource::CorpusSource(const Corpus& corpus, const Model& model, const TrainConfig& config)
    : it_(corpus, config.batch_size, model.spec.context_length,
          derive_seed(config.seed, "data")) {}

std::pair<std::uint64_t, std::uint64_t> CorpusSource::position() const {
  return {it_.epoch(), it_.cursor()};
}

std::unordered_map<std::string, Tensor> masked_params(const Model& model,
                                                      const std::vector<LayerMask>& masks,
                                                      const MaskCandidateSet& set) {
  std::unordered_map<std::string, Tensor> out;
  for (const LayerMask& mask : masks) {
    const Tensor& w = model.param(mask.tensor_name);
    const auto [rows, cols] = model.weight_dims(mask.tensor_name);
    if (mask.rows != rows || mask.cols != cols)
      throw ValidationError("mask shape mismatch for tensor " + mask.tensor_name);
    const std::vector<std::uint8_t> bits = mask.expand(set);
    Tensor masked = w.clone();
    masked.requires_grad = false;
    for (std::size_t i = 0; i < masked.numel(); ++i)
      if (!bits[i]) masked.at(i) = 0.0;
    out.emplace(mask.tensor_name, std::move(masked));
  }
  return out;
}

namespace {

// Shared evaluation walk over validation windows with optional hard masks.
double eval_val_nll(const Model& model, const std::vector<LayerMask>* masks, const Corpus& corpus,
                    int batch_size, std::size_t max_batches,
                    const std::vector<std::string>* skip_layers) {
  if (model.spec.kind != ModelKind::TransformerLm)
    throw ValidationError("perplexity evaluation needs the char-LM model");
  if (corpus.bytes.empty()) throw ValidationError("empty evaluation corpus");
  std::unordered_map<std::string, Tensor> masked;
  if (masks) {
    const MaskCandidateSet set = enumerate_candidates(2, 4);
    std::vector<LayerMask> kept = *masks;
    if (skip_layers && !skip_layers->empty()) {
      const std::set<std::string> skipped = expand_skip_list(model, *skip_layers);
      std::vector<LayerMask> filtered;
      for (LayerMask& m : kept)
        if (!skipped.count(m.tensor_name)) filtered.push_back(std::move(m));
      kept = std::move(filtered);
    }
    masked = masked_params(model, kept, set);
  }
  const int ctx = model.spec.context_length;
  const std::size_t start = corpus.split();
  std::vector<std::size_t> offs;
  for (std::size_t o = start; o + static_cast<std::size_t>(ctx) + 1 <= corpus.bytes.size();
       o += static_cast<std::size_t>(ctx))
    offs.push_back(o);
  if (offs.empty()) throw ValidationError("validation split too short for context length");
  double total_nll = 0.0;
  std::size_t total_tok = 0;
  std::size_t batches = 0;
  for (std::size_t i = 0; i < offs.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::size_t bsz = std::min(static_cast<std::size_t>(batch_size), offs.size() - i);
    Batch b;
    b.batch = static_cast<int>(bsz);
    b.seq = ctx;
    b.inputs.resize(bsz * static_cast<std::size_t>(ctx));
    b.targets.resize(b.inputs.size());
    for (std::size_t sidx = 0; sidx < bsz; ++sidx)
      for (int j = 0; j < ctx; ++j) {
        b.inputs[sidx * ctx + j] = corpus.bytes[offs[i + sidx] + j];
        b.targets[sidx * ctx + j] = corpus.bytes[offs[i + sidx] + j + 1];
      }
    Tape tape;
    std::unordered_map<std::string, Tape::NodeId> overrides;
    for (const auto& [name, tensor] : masked) overrides.emplace(name, tape.leaf(tensor));
    const double loss = tape.value(model.build_loss(tape, b, overrides)).item();
    total_nll += loss * static_cast<double>(b.targets.size());
    total_tok += b.targets.size();
    if (max_batches && ++batches >= max_batches) break;
  }
  return total_nll / static_cast<double>(total_tok);
}

}  // namespace

double evaluate_val_loss(const Model& model, const std::vector<LayerMask>* masks,
                         const Corpus& corpus, int batch_size, std::size_t max_batches,
                         const std::vector<std::string>* skip_layers) {
  return eval_val_nll(model, masks, corpus, batch_size, max_batches, skip_layers);
}

double evaluate_perplexity(const Model& model, const std::vector<LayerMask>* masks,
                           const Corpus& corpus, int batch_size, std::size_t max_batches,
                           const std::vector<std::string>* skip_layers) {
  return std::exp(eval_val_nll(model, masks, corpus, batch_size, max_batches, skip_layers));
}

double evaluate_regression_loss(const Model& model, const std::vector<LayerMask>* masks,
                                const RegressionData& data) {
  std::unordered_map<std::string, Tensor> masked;
  if (masks) masked = masked_params(model, *masks, enumerate_candidates(2, 4));
  Tape tape;
  std::unordered_map<std::string, Tape::NodeId> overrides;
  for (const auto& [name, tensor] : masked) overrides.emplace(name, tape.leaf(tensor));
  Batch b = regression_batch(data);
  return tape.value(model.build_loss(tape, b, overrides)).item();
}

std::string SensitivityReport::to_text() const {
  std::ostringstream os;
  os.precision(17);
  for (const Row& r : rows) os << "strategy=" << r.label << " ppl=" << r.ppl << "\n";
  return os.str();
}

SensitivityReport layer_sensitivity(const Model& model, const std::vector<LayerMask>& masks,
                                    const Corpus& corpus, const std::string& strategy,
                                    int batch_size, std::size_t max_batches) {
  SensitivityReport report;
  auto eval_with_skips = [&](const std::vector<std::string>& skips) {
    return evaluate_perplexity(model, &masks, corpus, batch_size, max_batches,
                               skips.empty() ? nullptr : &skips);
  };
  report.rows.push_back({"dense", evaluate_perplexity(model, nullptr, corpus, batch_size,
                                                      max_batches, nullptr)});
  report.rows.push_back({"full_sparsity", eval_with_skips({})});
  auto layer_prefixes = [&]() {
    std::vector<std::string> out;
    for (int l = 0; l < model.spec.num_layers; ++l) out.push_back("layer" + std::to_string(l));
    return out;
  };
  if (strategy == "none") {
    // baselines only
  } else if (strategy == "all") {
    std::vector<std::string> all = layer_prefixes();
    report.rows.push_back({"skip_all", eval_with_skips(all)});
  } else if (strategy.rfind("first:", 0) == 0 || strategy.rfind("last:", 0) == 0) {
    const bool first = strategy.rfind("first:", 0) == 0;
    const int k = static_cast<int>(parse_int(strategy.substr(first ? 6 : 5), "skip count"));
    if (k < 0 || k > model.spec.num_layers)
      throw ValidationError("skip count out of range: " + strategy);
    std::vector<std::string> skips;
    for (int i = 0; i < k; ++i)
      skips.push_back("layer" + std::to_string(first ? i : model.spec.num_layers - 1 - i));
    report.rows.push_back(
        {(first ? "skip_first_" : "skip_last_") + std::to_string(k), eval_with_skips(skips)});
  } else if (strategy == "sweep") {
    for (const std::string& prefix : layer_prefixes())
      report.rows.push_back({"dense_" + prefix, eval_with_skips({prefix})});
  } else {
    const std::vector<std::string> names = split_csv(strategy);
    if (names.empty()) throw ValidationError("empty sensitivity strategy");
    std::string label = "skip";
    for (const std::string& n : names) label += "_" + n;
    report.rows.push_back({label, eval_with_skips(names)});
  }
  return report;
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u16(kCheckpointVersion);
  w.u32(step);
  w.u64(seed);
  w.u64(config_hash);
  w.u64(data_epoch);
  w.u64(data_cursor);
  w.u32(static_cast<std::uint32_t>(dists.size()));
  for (std::size_t d = 0; d < dists.size(); ++d) {
    const MaskDistribution& dist = dists[d];
    w.str16(dist.tensor_name);
    w.u32(dist.rows);
    w.u32(dist.cols);
    w.u32(static_cast<std::uint32_t>(dist.logits.dim(0)));
    w.u32(static_cast<std::uint32_t>(dist.logits.dim(1)));
    for (std::size_t i = 0; i < dist.logits.numel(); ++i) w.f64(dist.logits.at(i));
    for (std::size_t i = 0; i < adam_m[d].numel(); ++i) w.f64(adam_m[d].at(i));
    for (std::size_t i = 0; i < adam_v[d].numel(); ++i) w.f64(adam_v[d].at(i));
  }
  return w.take();
}

Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  const auto magic = r.raw(4);
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0)
    throw FormatError("bad checkpoint magic", 0);
  if (r.u16() != kCheckpointVersion) throw FormatError("unsupported checkpoint version", 4);
  Checkpoint ck;
  ck.step = r.u32();
  ck.seed = r.u64();
  ck.config_hash = r.u64();
  ck.data_epoch = r.u64();
  ck.data_cursor = r.u64();
  const std::uint32_t count = r.u32();
  for (std::uint32_t d = 0; d < count; ++d) {
    MaskDistribution dist;
    dist.tensor_name = r.str16();
    dist.rows = r.u32();
    dist.cols = r.u32();
    const std::size_t blocks = r.u32();
    const std::size_t s = r.u32();
    dist.logits = Tensor(Shape{blocks, s});
    for (std::size_t i = 0; i < dist.logits.numel(); ++i) dist.logits.at(i) = r.f64();
    Tensor m(Shape{blocks, s}), v(Shape{blocks, s});
    for (std::size_t i = 0; i < m.numel(); ++i) m.at(i) = r.f64();
    for (std::size_t i = 0; i < v.numel(); ++i) v.at(i) = r.f64();
    ck.dists.push_back(std::move(dist));
    ck.adam_m.push_back(std::move(m));
    ck.adam_v.push_back(std::move(v));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint", r.offset());
  return ck;
}

}  // namespace nmsparse
