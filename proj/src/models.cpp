#include "nmsparse/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "nmsparse/rng.hpp"
#include "nmsparse/serialize.hpp"

namespace nmsparse {

namespace {

constexpr char kModelMagic[4] = {'N', 'M', 'M', 'D'};
constexpr std::uint16_t kModelVersion = 1;

// Adam without weight decay, used for dense pretraining.
struct Adam {
  double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<Tensor> m, v;
  int t = 0;

  explicit Adam(double lr_) : lr(lr_) {}

  void step(std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads) {
    if (m.empty()) {
      for (Tensor* p : params) {
        m.emplace_back(p->shape(), 0.0);
        v.emplace_back(p->shape(), 0.0);
      }
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      double* p = params[i]->data();
      const double* g = grads[i]->data();
      double* mi = m[i].data();
      double* vi = v[i].data();
      const std::size_t n = params[i]->numel();
      for (std::size_t j = 0; j < n; ++j) {
        mi[j] = beta1 * mi[j] + (1.0 - beta1) * g[j];
        vi[j] = beta2 * vi[j] + (1.0 - beta2) * g[j] * g[j];
        const double mh = mi[j] / bc1;
        const double vh = vi[j] / bc2;
        p[j] -= lr * mh / (std::sqrt(vh) + eps);
      }
    }
  }
};

}  // namespace

std::string kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::Linear: return "linear";
    case ModelKind::Mlp: return "mlp";
    case ModelKind::TransformerLm: return "transformer";
  }
  return "?";
}

ModelKind kind_from_name(const std::string& s) {
  if (s == "linear") return ModelKind::Linear;
  if (s == "mlp") return ModelKind::Mlp;
  if (s == "transformer") return ModelKind::TransformerLm;
  throw ValidationError("unknown model kind: " + s);
}

void ToyModelSpec::validate(int m) const {
  auto check = [&](int dim, const char* what) {
    if (dim <= 0) throw ValidationError(std::string(what) + " must be positive");
    if (dim % m != 0)
      throw ValidationError(std::string(what) + "=" + std::to_string(dim) +
                            " not divisible by m=" + std::to_string(m));
  };
  switch (kind) {
    case ModelKind::Linear:
      check(in_dim, "in_dim");
      if (out_dim <= 0) throw ValidationError("out_dim must be positive");
      break;
    case ModelKind::Mlp:
      check(in_dim, "in_dim");
      check(hidden_dim, "hidden_dim");
      if (out_dim <= 0) throw ValidationError("out_dim must be positive");
      break;
    case ModelKind::TransformerLm:
      check(embed_dim, "embed_dim");
      check(embed_dim * mlp_ratio, "mlp hidden dim");
      if (num_layers <= 0 || num_heads <= 0 || context_length <= 0 || vocab_size <= 0)
        throw ValidationError("transformer dims must be positive");
      if (embed_dim % num_heads != 0)
        throw ValidationError("embed_dim must be divisible by num_heads");
      break;
  }
}

Tensor Model::add_param(const std::string& name, Shape shape, bool prunable_flag) {
  Tensor t(std::move(shape));
  params.emplace(name, t);
  order.push_back(name);
  if (prunable_flag) prunable.push_back(name);
  return t;
}

Model Model::build(const ToyModelSpec& spec, std::uint64_t seed, int m) {
  spec.validate(m);
  Model model;
  model.spec = spec;
  auto fill_normal = [&](Tensor t, double stddev, std::uint64_t salt) {
    Rng rng(derive_seed(seed, "model_init", salt));
    for (std::size_t i = 0; i < t.numel(); ++i) t.at(i) = rng.normal(0.0, stddev);
  };
  std::uint64_t salt = 0;
  switch (spec.kind) {
    case ModelKind::Linear: {
      fill_normal(model.add_param("linear.weight",
                                  Shape{static_cast<std::size_t>(spec.out_dim),
                                        static_cast<std::size_t>(spec.in_dim)},
                                  true),
                  1.0, salt++);
      break;
    }
    case ModelKind::Mlp: {
      // num_layers linear maps: in -> hidden -> ... -> hidden -> out, gelu
      // between them.
      const int layers = std::max(2, spec.num_layers);
      for (int l = 0; l < layers; ++l) {
        const std::size_t fan_in =
            l == 0 ? static_cast<std::size_t>(spec.in_dim)
                   : static_cast<std::size_t>(spec.hidden_dim);
        const std::size_t fan_out = l == layers - 1
                                        ? static_cast<std::size_t>(spec.out_dim)
                                        : static_cast<std::size_t>(spec.hidden_dim);
        fill_normal(model.add_param("fc" + std::to_string(l + 1) + ".weight",
                                    Shape{fan_out, fan_in}, true),
                    1.0 / std::sqrt(static_cast<double>(fan_in)), salt++);
      }
      break;
    }
    case ModelKind::TransformerLm: {
      const auto v = static_cast<std::size_t>(spec.vocab_size);
      const auto c = static_cast<std::size_t>(spec.embed_dim);
      const auto h = c * static_cast<std::size_t>(spec.mlp_ratio);
      const double sc = 1.0 / std::sqrt(static_cast<double>(c));
      const double sh = 1.0 / std::sqrt(static_cast<double>(h));
      const double res = 1.0 / std::sqrt(2.0 * spec.num_layers);
      fill_normal(model.add_param("tok_emb", Shape{v, c}, false), 0.02, salt++);
      fill_normal(model.add_param("pos_emb",
                                  Shape{static_cast<std::size_t>(spec.context_length), c}, false),
                  0.02, salt++);
      for (int l = 0; l < spec.num_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        model.add_param(p + "ln1.gain", Shape{c}, false);
        model.add_param(p + "ln1.bias", Shape{c}, false);
        for (std::size_t i = 0; i < c; ++i) model.param(p + "ln1.gain").at(i) = 1.0;
        fill_normal(model.add_param(p + "attn.wq", Shape{c, c}, true), sc, salt++);
        fill_normal(model.add_param(p + "attn.wk", Shape{c, c}, true), sc, salt++);
        fill_normal(model.add_param(p + "attn.wv", Shape{c, c}, true), sc, salt++);
        fill_normal(model.add_param(p + "attn.wo", Shape{c, c}, true), sc * res, salt++);
        model.add_param(p + "ln2.gain", Shape{c}, false);
        model.add_param(p + "ln2.bias", Shape{c}, false);
        for (std::size_t i = 0; i < c; ++i) model.param(p + "ln2.gain").at(i) = 1.0;
        fill_normal(model.add_param(p + "mlp.fc1", Shape{h, c}, true), sc, salt++);
        fill_normal(model.add_param(p + "mlp.fc2", Shape{c, h}, true), sh * res, salt++);
      }
      model.add_param("lnf.gain", Shape{c}, false);
      model.add_param("lnf.bias", Shape{c}, false);
      for (std::size_t i = 0; i < c; ++i) model.param("lnf.gain").at(i) = 1.0;
      // Output head stays dense: the last layer is the most sensitive one.
      fill_normal(model.add_param("head", Shape{v, c}, false), sc, salt++);
      break;
    }
  }
  return model;
}

const Tensor& Model::param(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw ValidationError("unknown parameter: " + name);
  return it->second;
}

Tensor& Model::param(const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ValidationError("unknown parameter: " + name);
  return it->second;
}

bool Model::is_prunable(const std::string& name) const {
  for (const std::string& p : prunable)
    if (p == name) return true;
  return false;
}

std::pair<std::size_t, std::size_t> Model::weight_dims(const std::string& name) const {
  const Tensor& t = param(name);
  if (t.rank() != 2) throw ValidationError("parameter " + name + " is not a matrix");
  return {t.dim(0), t.dim(1)};
}

void Model::set_trainable(bool trainable) {
  trainable_ = trainable;
  for (const std::string& name : order) params.at(name).requires_grad = trainable;
}

namespace {

// Accumulates per-feature squares of a linear input into the collector.
void collect_input_squares(CalibCollector* calib, const std::string& name, const Tensor& x) {
  if (!calib) return;
  const std::size_t k = x.shape().back();
  auto& sums = calib->feature_sq_sums[name];
  if (sums.empty()) sums.assign(k, 0.0);
  const std::size_t rows = x.numel() / k;
  const double* p = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < k; ++j) sums[j] += p[r * k + j] * p[r * k + j];
}

}  // namespace

Tape::NodeId Model::build_loss(Tape& tape, const Batch& batch,
                               const std::unordered_map<std::string, Tape::NodeId>& overrides,
                               CalibCollector* calib) const {
  auto param_node = [&](const std::string& name) -> Tape::NodeId {
    auto it = overrides.find(name);
    if (it != overrides.end()) return it->second;
    return tape.leaf(param(name));
  };
  auto masked_linear = [&](Tape::NodeId x, const std::string& name) -> Tape::NodeId {
    collect_input_squares(calib, name, tape.value(x));
    return tape.linear(x, param_node(name));
  };

  switch (spec.kind) {
    case ModelKind::Linear: {
      if (!batch.x.defined()) throw ValidationError("linear model needs regression batch");
      Tape::NodeId x = tape.leaf(batch.x);
      Tape::NodeId pred = masked_linear(x, "linear.weight");
      Tape::NodeId diff = tape.sub(pred, tape.leaf(batch.y));
      return tape.scale(tape.sum_of_squares(diff), 1.0 / static_cast<double>(batch.y.numel()));
    }
    case ModelKind::Mlp: {
      if (!batch.x.defined()) throw ValidationError("mlp model needs regression batch");
      const int layers = std::max(2, spec.num_layers);
      Tape::NodeId h = tape.leaf(batch.x);
      for (int l = 0; l < layers; ++l) {
        h = masked_linear(h, "fc" + std::to_string(l + 1) + ".weight");
        if (l != layers - 1) h = tape.gelu(h);
      }
      Tape::NodeId diff = tape.sub(h, tape.leaf(batch.y));
      return tape.scale(tape.sum_of_squares(diff), 1.0 / static_cast<double>(batch.y.numel()));
    }
    case ModelKind::TransformerLm: {
      if (batch.inputs.empty() || batch.batch <= 0 || batch.seq <= 0)
        throw ValidationError("transformer model needs a token batch");
      if (batch.seq > spec.context_length)
        throw ValidationError("batch sequence length exceeds model context");
      const int b = batch.batch;
      const int t = batch.seq;
      Tape::NodeId tok = tape.embedding_lookup(param_node("tok_emb"), batch.inputs);
      std::vector<int> pos_ids(static_cast<std::size_t>(b) * static_cast<std::size_t>(t));
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < t; ++j)
          pos_ids[static_cast<std::size_t>(i) * t + j] = j;
      Tape::NodeId pos = tape.embedding_lookup(param_node("pos_emb"), pos_ids);
      Tape::NodeId x = tape.add(tok, pos);
      for (int l = 0; l < spec.num_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        Tape::NodeId xn = tape.layer_norm(x, param_node(p + "ln1.gain"),
                                          param_node(p + "ln1.bias"));
        Tape::NodeId q = masked_linear(xn, p + "attn.wq");
        Tape::NodeId k = masked_linear(xn, p + "attn.wk");
        Tape::NodeId v = masked_linear(xn, p + "attn.wv");
        Tape::NodeId att = tape.causal_self_attention(q, k, v, b, t, spec.num_heads);
        x = tape.add(x, masked_linear(att, p + "attn.wo"));
        Tape::NodeId xn2 = tape.layer_norm(x, param_node(p + "ln2.gain"),
                                           param_node(p + "ln2.bias"));
        Tape::NodeId hdn = tape.gelu(masked_linear(xn2, p + "mlp.fc1"));
        x = tape.add(x, masked_linear(hdn, p + "mlp.fc2"));
      }
      Tape::NodeId xf = tape.layer_norm(x, param_node("lnf.gain"),
                                        param_node("lnf.bias"));
      Tape::NodeId logits = tape.linear(xf, param_node("head"));
      if (calib) ++calib->sample_count;
      return tape.cross_entropy(logits, batch.targets);
    }
  }
  throw ValidationError("unreachable model kind");
}

std::uint64_t Model::weights_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const std::string& name : order) {
    const Tensor& t = params.at(name);
    h = splitmix64(h ^ fnv1a64(name));
    h = splitmix64(h ^ fnv1a64(t.data(), t.numel() * sizeof(double)));
  }
  return h;
}

std::vector<std::uint8_t> Model::serialize() const {
  ByteWriter w;
  w.raw(kModelMagic, 4);
  w.u16(kModelVersion);
  w.u8(static_cast<std::uint8_t>(spec.kind));
  w.u32(static_cast<std::uint32_t>(spec.vocab_size));
  w.u32(static_cast<std::uint32_t>(spec.embed_dim));
  w.u32(static_cast<std::uint32_t>(spec.num_layers));
  w.u32(static_cast<std::uint32_t>(spec.num_heads));
  w.u32(static_cast<std::uint32_t>(spec.context_length));
  w.u32(static_cast<std::uint32_t>(spec.mlp_ratio));
  w.u32(static_cast<std::uint32_t>(spec.in_dim));
  w.u32(static_cast<std::uint32_t>(spec.out_dim));
  w.u32(static_cast<std::uint32_t>(spec.hidden_dim));
  w.u32(static_cast<std::uint32_t>(order.size()));
  for (const std::string& name : order) {
    const Tensor& t = params.at(name);
    w.str16(name);
    w.u8(is_prunable(name) ? 1 : 0);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < t.numel(); ++i) w.f64(t.at(i));
  }
  return w.take();
}

Model Model::deserialize(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  const auto magic = r.raw(4);
  if (std::memcmp(magic.data(), kModelMagic, 4) != 0)
    throw FormatError("bad model checkpoint magic", 0);
  if (r.u16() != kModelVersion) throw FormatError("unsupported model version", 4);
  Model model;
  model.spec.kind = static_cast<ModelKind>(r.u8());
  model.spec.vocab_size = static_cast<int>(r.u32());
  model.spec.embed_dim = static_cast<int>(r.u32());
  model.spec.num_layers = static_cast<int>(r.u32());
  model.spec.num_heads = static_cast<int>(r.u32());
  model.spec.context_length = static_cast<int>(r.u32());
  model.spec.mlp_ratio = static_cast<int>(r.u32());
  model.spec.in_dim = static_cast<int>(r.u32());
  model.spec.out_dim = static_cast<int>(r.u32());
  model.spec.hidden_dim = static_cast<int>(r.u32());
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str16();
    const bool prunable_flag = r.u8() != 0;
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (std::uint8_t d = 0; d < rank; ++d) shape[d] = r.u32();
    Tensor t(shape);
    for (std::size_t j = 0; j < t.numel(); ++j) t.at(j) = r.f64();
    model.params.emplace(name, t);
    model.order.push_back(name);
    if (prunable_flag) model.prunable.push_back(name);
  }
  if (!r.done()) throw FormatError("trailing bytes after model checkpoint", r.offset());
  return model;
}

void Model::save(const std::string& path) const { write_file(path, serialize()); }

Model Model::load(const std::string& path) { return deserialize(read_file(path)); }

Corpus Corpus::from_file(const std::string& path, double val_fraction) {
  return from_bytes(read_file(path), val_fraction);
}

Corpus Corpus::from_bytes(std::vector<std::uint8_t> bytes, double val_fraction) {
  if (val_fraction <= 0.0 || val_fraction >= 1.0)
    throw ValidationError("val_fraction must be in (0, 1)");
  Corpus c;
  c.bytes = std::move(bytes);
  c.val_fraction = val_fraction;
  return c;
}

std::size_t Corpus::split() const {
  return bytes.size() - static_cast<std::size_t>(static_cast<double>(bytes.size()) * val_fraction);
}

BatchIterator::BatchIterator(const Corpus& corpus, int batch_size, int context,
                             std::uint64_t seed)
    : corpus_(&corpus), batch_size_(batch_size), context_(context), seed_(seed) {
  if (batch_size <= 0 || context <= 0) throw ValidationError("batch and context must be positive");
  if (corpus.train_size() < static_cast<std::size_t>(context) + 1)
    throw ValidationError("corpus too short for context length " + std::to_string(context));
  reshuffle();
}

void BatchIterator::reshuffle() {
  const std::size_t count = corpus_->train_size() - static_cast<std::size_t>(context_);
  offsets_.resize(count);
  for (std::size_t i = 0; i < count; ++i) offsets_[i] = static_cast<std::uint32_t>(i);
  Rng rng(derive_seed(seed_, "batch_epoch", epoch_));
  rng.shuffle(offsets_);
}

Batch BatchIterator::next() {
  Batch b;
  b.batch = batch_size_;
  b.seq = context_;
  b.inputs.resize(static_cast<std::size_t>(batch_size_) * context_);
  b.targets.resize(b.inputs.size());
  for (int s = 0; s < batch_size_; ++s) {
    if (cursor_ >= offsets_.size()) {
      ++epoch_;
      cursor_ = 0;
      reshuffle();
    }
    const std::size_t off = offsets_[cursor_++];
    for (int j = 0; j < context_; ++j) {
      b.inputs[static_cast<std::size_t>(s) * context_ + j] = corpus_->bytes[off + j];
      b.targets[static_cast<std::size_t>(s) * context_ + j] = corpus_->bytes[off + j + 1];
    }
  }
  return b;
}

void BatchIterator::restore(std::uint64_t epoch, std::uint64_t cursor) {
  epoch_ = epoch;
  cursor_ = cursor;
  reshuffle();
}

RegressionData make_regression_data(const Model& model, std::size_t samples, std::uint64_t seed) {
  if (model.spec.kind == ModelKind::TransformerLm)
    throw ValidationError("regression data is for linear/mlp models");
  const auto in = static_cast<std::size_t>(model.spec.in_dim);
  RegressionData data;
  data.x = Tensor(Shape{samples, in});
  Rng rng(derive_seed(seed, "regression_x"));
  for (std::size_t i = 0; i < data.x.numel(); ++i) data.x.at(i) = rng.normal();
  // Dense targets: run the dense model itself.
  Tape tape;
  Tape::NodeId pred = tape.leaf(data.x);
  if (model.spec.kind == ModelKind::Linear) {
    pred = tape.linear(pred, tape.leaf(model.param("linear.weight")));
  } else {
    const int layers = std::max(2, model.spec.num_layers);
    for (int l = 0; l < layers; ++l) {
      pred = tape.linear(pred, tape.leaf(model.param("fc" + std::to_string(l + 1) + ".weight")));
      if (l != layers - 1) pred = tape.gelu(pred);
    }
  }
  data.y = tape.value(pred).clone();
  return data;
}

Batch regression_batch(const RegressionData& data) {
  Batch b;
  b.x = data.x;
  b.y = data.y;
  return b;
}

double validation_loss(const Model& model, const Corpus& corpus, int batch_size,
                       std::size_t max_batches) {
  const int ctx = model.spec.context_length;
  const std::size_t start = corpus.split();
  if (corpus.val_size() < static_cast<std::size_t>(ctx) + 1)
    throw ValidationError("validation split too short");
  std::vector<std::size_t> offs;
  for (std::size_t o = start; o + static_cast<std::size_t>(ctx) + 1 <= corpus.bytes.size();
       o += static_cast<std::size_t>(ctx))
    offs.push_back(o);
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
    for (std::size_t s = 0; s < bsz; ++s)
      for (int j = 0; j < ctx; ++j) {
        b.inputs[s * ctx + j] = corpus.bytes[offs[i + s] + j];
        b.targets[s * ctx + j] = corpus.bytes[offs[i + s] + j + 1];
      }
    Tape tape;
    const double loss = tape.value(model.build_loss(tape, b)).item();
    total_nll += loss * static_cast<double>(b.targets.size());
    total_tok += b.targets.size();
    if (max_batches && ++batches >= max_batches) break;
  }
  if (total_tok == 0) throw ValidationError("empty validation data");
  return total_nll / static_cast<double>(total_tok);
}

double pretrain_dense(Model& model, const Corpus& corpus, int steps, double lr, int batch_size,
                      std::uint64_t seed, std::vector<double>* loss_history) {
  if (corpus.bytes.empty()) throw ValidationError("empty corpus");
  model.set_trainable(true);
  BatchIterator it(corpus, batch_size, model.spec.context_length, derive_seed(seed, "pretrain"));
  Adam opt(lr);
  double initial_loss = 0.0;
  for (int step = 0; step < steps; ++step) {
    Batch b = it.next();
    Tape tape;
    // Register every parameter leaf up front so we hold the node ids the
    // gradients land on.
    std::unordered_map<std::string, Tape::NodeId> leaves;
    for (const std::string& name : model.order)
      leaves.emplace(name, tape.leaf(model.param(name)));
    Tape::NodeId loss = model.build_loss(tape, b, leaves);
    const double lv = tape.value(loss).item();
    if (loss_history) loss_history->push_back(lv);
    if (step == 0) initial_loss = lv;
    if (!std::isfinite(lv) || (step > 0 && lv > 1e4 * std::max(initial_loss, 1e-12)))
      throw std::runtime_error("pretraining diverged at step " + std::to_string(step) +
                               " (loss=" + std::to_string(lv) + ")");
    tape.backward(loss);
    std::vector<Tensor*> ps;
    std::vector<const Tensor*> gs;
    for (const std::string& name : model.order) {
      ps.push_back(&model.param(name));
      gs.push_back(&tape.grad(leaves.at(name)));
    }
    opt.step(ps, gs);
  }
  model.set_trainable(false);
  return validation_loss(model, corpus, batch_size);
}

namespace {

const char* kProseWords[] = {"the",  "quick", "brown", "fox",   "jumps", "over", "lazy",
                             "dog",  "stone", "river", "mountain", "wind", "light", "shadow",
                             "dream", "night", "forest", "silver", "golden", "whisper"};
const char* kProseVerbs[] = {"runs", "sleeps", "sings", "falls", "rises", "turns", "waits",
                             "burns", "flows", "drifts"};

const char* kCodeNames[] = {"foo", "bar", "baz", "qux", "node", "list", "tree", "heap",
                            "item", "data"};

}  // namespace

std::vector<std::uint8_t> make_synthetic_corpus(const std::string& flavor, std::size_t size,
                                                std::uint64_t seed) {
  Rng rng(derive_seed(seed, "corpus", fnv1a64(flavor)));
  std::string out;
  out.reserve(size + 64);
  auto pick = [&](auto& arr) {
    return arr[rng.uniform_index(sizeof(arr) / sizeof(arr[0]))];
  };
  const bool blend = flavor == "blend";
  if (flavor != "prose" && flavor != "code" && !blend)
    throw ValidationError("unknown corpus flavor: " + flavor);
  bool code_mode = flavor == "code";
  while (out.size() < size) {
    if (blend) code_mode = rng.uniform() < 0.5;
    if (code_mode) {
      const char* fn = pick(kCodeNames);
      const char* arg = pick(kCodeNames);
      const auto num = static_cast<unsigned>(rng.uniform_index(100));
      out += "fn ";
      out += fn;
      out += "(";
      out += arg;
      out += ") { return ";
      out += arg;
      out += " + ";
      out += std::to_string(num);
      out += "; }\n";
    } else {
      out += pick(kProseWords);
      out += " ";
      out += pick(kProseWords);
      out += " ";
      out += pick(kProseVerbs);
      out += rng.uniform() < 0.3 ? ".\n" : " ";
      if (rng.uniform() < 0.2) {
        out += "and the ";
        out += pick(kProseWords);
        out += " ";
        out += pick(kProseVerbs);
        out += ".\n";
      }
    }
  }
  out.resize(size);
  return std::vector<std::uint8_t>(out.begin(), out.end());
}

}  // namespace nmsparse
