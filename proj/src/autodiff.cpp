#include "nmsparse/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "nmsparse/kernels.hpp"
#include "nmsparse/serialize.hpp"

namespace nmsparse {

namespace {

constexpr double kCrossEntropyFloor = 1e-12;
constexpr double kLayerNormEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}

std::size_t last_dim(const Tensor& t, const char* op) {
  if (t.rank() == 0) throw ValidationError(std::string(op) + ": tensor must have rank >= 1");
  return t.shape().back();
}

}  // namespace

Tape::NodeId Tape::push(Node&& n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

const Tape::Node& Tape::at(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
    throw ValidationError("invalid tape node id " + std::to_string(id));
  return nodes_[static_cast<std::size_t>(id)];
}

Tape::NodeId Tape::leaf(const Tensor& value) {
  if (!value.defined()) throw ValidationError("leaf: undefined tensor");
  Node n;
  n.op = Op::Leaf;
  n.value = value;
  n.needs_grad = value.requires_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& va = at(a).value;
  const Tensor& vb = at(b).value;
  check_same_shape(va, vb, "add");
  Tensor out(va.shape());
  const std::size_t n = va.numel();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = va.at(i) + vb.at(i);
  Node nd;
  nd.op = Op::Add;
  nd.a = a;
  nd.b = b;
  nd.value = std::move(out);
  nd.needs_grad = at(a).needs_grad || at(b).needs_grad;
  return push(std::move(nd));
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
  const Tensor& va = at(a).value;
  const Tensor& vb = at(b).value;
  check_same_shape(va, vb, "sub");
  Tensor out(va.shape());
  const std::size_t n = va.numel();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = va.at(i) - vb.at(i);
  Node nd;
  nd.op = Op::Sub;
  nd.a = a;
  nd.b = b;
  nd.value = std::move(out);
  nd.needs_grad = at(a).needs_grad || at(b).needs_grad;
  return push(std::move(nd));
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
  const Tensor& va = at(a).value;
  const Tensor& vb = at(b).value;
  check_same_shape(va, vb, "elementwise_mul");
  Tensor out(va.shape());
  const std::size_t n = va.numel();
  const double* pa = va.data();
  const double* pb = vb.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  Node nd;
  nd.op = Op::Mul;
  nd.a = a;
  nd.b = b;
  nd.value = std::move(out);
  nd.needs_grad = at(a).needs_grad || at(b).needs_grad;
  return push(std::move(nd));
}

Tape::NodeId Tape::scale(NodeId a, double s) {
  const Tensor& va = at(a).value;
  Tensor out(va.shape());
  const std::size_t n = va.numel();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = va.at(i) * s;
  Node nd;
  nd.op = Op::Scale;
  nd.a = a;
  nd.scalar = s;
  nd.value = std::move(out);
  nd.needs_grad = at(a).needs_grad;
  return push(std::move(nd));
}

Tape::NodeId Tape::reshape(NodeId a, Shape s) {
  Node nd;
  nd.op = Op::Reshape;
  nd.a = a;
  nd.value = at(a).value.reshaped(std::move(s));
  nd.needs_grad = at(a).needs_grad;
  return push(std::move(nd));
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  const Tensor& va = at(a).value;
  const Tensor& vb = at(b).value;
  if (va.rank() < 1 || vb.rank() != 2)
    throw ValidationError("matmul: need a[..., K] and b[K, N], got " + shape_str(va.shape()) +
                          " x " + shape_str(vb.shape()));
  const std::size_t k = last_dim(va, "matmul");
  if (vb.dim(0) != k)
    throw ValidationError("matmul: inner dimensions differ, " + shape_str(va.shape()) + " x " +
                          shape_str(vb.shape()));
  const std::size_t n = vb.dim(1);
  const std::size_t m = va.numel() / k;
  Shape out_shape(va.shape().begin(), va.shape().end() - 1);
  out_shape.push_back(n);
  Tensor out(out_shape);
  kernels::gemm_nn(va.data(), vb.data(), out.data(), m, k, n);
  Node nd;
  nd.op = Op::MatMul;
  nd.a = a;
  nd.b = b;
  nd.value = std::move(out);
  nd.needs_grad = at(a).needs_grad || at(b).needs_grad;
  return push(std::move(nd));
}

Tape::NodeId Tape::linear(NodeId x, NodeId w) {
  const Tensor& vx = at(x).value;
  const Tensor& vw = at(w).value;
  if (vx.rank() < 1 || vw.rank() != 2)
    throw ValidationError("linear: need x[..., K] and w[N, K], got " + shape_str(vx.shape()) +
                          " x " + shape_str(vw.shape()));
  const std::size_t k = last_dim(vx, "linear");
  if (vw.dim(1) != k)
    throw ValidationError("linear: input width " + std::to_string(k) +
                          " does not match weight " + shape_str(vw.shape()));
  const std::size_t n = vw.dim(0);
  const std::size_t m = vx.numel() / k;
  Shape out_shape(vx.shape().begin(), vx.shape().end() - 1);
  out_shape.push_back(n);
  Tensor out(out_shape);
  kernels::gemm_nt(vx.data(), vw.data(), out.data(), m, k, n);
  Node nd;
  nd.op = Op::Linear;
  nd.a = x;
  nd.b = w;
  nd.value = std::move(out);
  nd.needs_grad = at(x).needs_grad || at(w).needs_grad;
  return push(std::move(nd));
}

Tape::NodeId Tape::gelu(NodeId a) {
  const Tensor& va = at(a).value;
  Tensor out(va.shape());
  const std::size_t n = va.numel();
  const double* pa = va.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = pa[i];
    po[i] = x * 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  }
  Node nd;
  nd.op = Op::Gelu;
  nd.a = a;
  nd.value = std::move(out);
  nd.needs_grad = at(a).needs_grad;
  return push(std::move(nd));
}

Tape::NodeId Tape::layer_norm(NodeId x, NodeId gain, NodeId bias) {
  const Tensor& vx = at(x).value;
  const Tensor& vg = at(gain).value;
  const Tensor& vb = at(bias).value;
  const std::size_t c = last_dim(vx, "layer_norm");
  if (vg.numel() != c || vb.numel() != c)
    throw ValidationError("layer_norm: gain/bias length must equal last dim " + std::to_string(c));
  const std::size_t rows = vx.numel() / c;
  Tensor out(vx.shape());
  Tensor xhat(vx.shape());
  Tensor rstd(Shape{rows});
  const double* px = vx.data();
  const double* pg = vg.data();
  const double* pb = vb.data();
  double* po = out.data();
  double* ph = xhat.data();
  double* pr = rstd.data();
  const long rowsi = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * c > 4096)
  for (long r = 0; r < rowsi; ++r) {
    const double* row = px + static_cast<std::size_t>(r) * c;
    double mean = 0.0;
    for (std::size_t i = 0; i < c; ++i) mean += row[i];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
      const double d = row[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
    pr[r] = rs;
    double* hrow = ph + static_cast<std::size_t>(r) * c;
    double* orow = po + static_cast<std::size_t>(r) * c;
    for (std::size_t i = 0; i < c; ++i) {
      const double h = (row[i] - mean) * rs;
      hrow[i] = h;
      orow[i] = h * pg[i] + pb[i];
    }
  }
  Node nd;
  nd.op = Op::LayerNorm;
  nd.a = x;
  nd.b = gain;
  nd.c = bias;
  nd.value = std::move(out);
  nd.saved = std::move(xhat);
  nd.saved2 = std::move(rstd);
  nd.needs_grad = at(x).needs_grad || at(gain).needs_grad || at(bias).needs_grad;
  return push(std::move(nd));
}

Tape::NodeId Tape::softmax(NodeId a) {
  const Tensor& va = at(a).value;
  const std::size_t c = last_dim(va, "softmax");
  const std::size_t rows = va.numel() / c;
  Tensor out(va.shape());
  const double* pa = va.data();
  double* po = out.data();
  const long rowsi = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * c > 4096)
  for (long r = 0; r < rowsi; ++r) {
    const double* row = pa + static_cast<std::size_t>(r) * c;
    double* orow = po + static_cast<std::size_t>(r) * c;
    double mx = row[0];
    for (std::size_t i = 1; i < c; ++i) mx = std::max(mx, row[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
      const double e = std::exp(row[i] - mx);
      orow[i] = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (std::size_t i = 0; i < c; ++i) orow[i] *= inv;
  }
  Node nd;
  nd.op = Op::Softmax;
  nd.a = a;
  nd.value = std::move(out);
  nd.needs_grad = at(a).needs_grad;
  return push(std::move(nd));
}

Tape::NodeId Tape::embedding_lookup(NodeId table, std::vector<int> ids) {
  const Tensor& vt = at(table).value;
  if (vt.rank() != 2) throw ValidationError("embedding_lookup: table must be [V, C]");
  const std::size_t v = vt.dim(0);
  const std::size_t c = vt.dim(1);
  Tensor out(Shape{ids.size(), c});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const int id = ids[r];
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw ValidationError("embedding_lookup: id " + std::to_string(id) + " out of range [0," +
                            std::to_string(v) + ")");
    std::memcpy(out.data() + r * c, vt.data() + static_cast<std::size_t>(id) * c,
                c * sizeof(double));
  }
  Node nd;
  nd.op = Op::Embedding;
  nd.a = table;
  nd.ids = std::move(ids);
  nd.value = std::move(out);
  nd.needs_grad = at(table).needs_grad;
  return push(std::move(nd));
}

Tape::NodeId Tape::causal_self_attention(NodeId q, NodeId k, NodeId v, int batch, int seq,
                                         int heads) {
  const Tensor& vq = at(q).value;
  const Tensor& vk = at(k).value;
  const Tensor& vv = at(v).value;
  check_same_shape(vq, vk, "attention");
  check_same_shape(vq, vv, "attention");
  if (vq.rank() != 2) throw ValidationError("attention: inputs must be [B*T, C]");
  const std::size_t c = vq.dim(1);
  if (batch <= 0 || seq <= 0 || heads <= 0 || c % static_cast<std::size_t>(heads) != 0 ||
      vq.dim(0) != static_cast<std::size_t>(batch) * static_cast<std::size_t>(seq))
    throw ValidationError("attention: inconsistent batch/seq/heads for " + shape_str(vq.shape()));
  const std::size_t d = c / static_cast<std::size_t>(heads);
  const double sc = 1.0 / std::sqrt(static_cast<double>(d));
  const std::size_t t = static_cast<std::size_t>(seq);
  Tensor out(vq.shape(), 0.0);
  Tensor probs(Shape{static_cast<std::size_t>(batch) * static_cast<std::size_t>(heads), t, t},
               0.0);
  const double* pq = vq.data();
  const double* pk = vk.data();
  const double* pv = vv.data();
  double* po = out.data();
  double* pp = probs.data();
  const long bh_count = static_cast<long>(batch) * heads;
#pragma omp parallel for schedule(static)
  for (long bh = 0; bh < bh_count; ++bh) {
    const std::size_t b = static_cast<std::size_t>(bh) / heads;
    const std::size_t h = static_cast<std::size_t>(bh) % heads;
    const std::size_t off = h * d;
    for (std::size_t ti = 0; ti < t; ++ti) {
      const double* qrow = pq + (b * t + ti) * c + off;
      double* arow = pp + (static_cast<std::size_t>(bh) * t + ti) * t;
      double mx = -1e300;
      for (std::size_t u = 0; u <= ti; ++u) {
        const double* krow = pk + (b * t + u) * c + off;
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += qrow[j] * krow[j];
        s *= sc;
        arow[u] = s;
        mx = std::max(mx, s);
      }
      double sum = 0.0;
      for (std::size_t u = 0; u <= ti; ++u) {
        const double e = std::exp(arow[u] - mx);
        arow[u] = e;
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (std::size_t u = 0; u <= ti; ++u) arow[u] *= inv;
      double* orow = po + (b * t + ti) * c + off;
      for (std::size_t u = 0; u <= ti; ++u) {
        const double w = arow[u];
        const double* vrow = pv + (b * t + u) * c + off;
        for (std::size_t j = 0; j < d; ++j) orow[j] += w * vrow[j];
      }
    }
  }
  Node nd;
  nd.op = Op::Attention;
  nd.a = q;
  nd.b = k;
  nd.c = v;
  nd.batch = batch;
  nd.seq = seq;
  nd.heads = heads;
  nd.value = std::move(out);
  nd.saved = std::move(probs);
  nd.needs_grad = at(q).needs_grad || at(k).needs_grad || at(v).needs_grad;
  return push(std::move(nd));
}

Tape::NodeId Tape::cross_entropy(NodeId logits, std::vector<int> targets) {
  const Tensor& vl = at(logits).value;
  if (vl.rank() != 2) throw ValidationError("cross_entropy: logits must be [N, V]");
  const std::size_t n = vl.dim(0);
  const std::size_t v = vl.dim(1);
  if (targets.size() != n)
    throw ValidationError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                          std::to_string(n) + " rows");
  for (int tgt : targets)
    if (tgt < 0 || static_cast<std::size_t>(tgt) >= v)
      throw ValidationError("cross_entropy: target out of range");
  Tensor probs(vl.shape());
  std::vector<double> row_nll(n);
  const double* pl = vl.data();
  double* pp = probs.data();
  const long ni = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (n * v > 4096)
  for (long r = 0; r < ni; ++r) {
    const int tgt = targets[static_cast<std::size_t>(r)];
    const double* row = pl + static_cast<std::size_t>(r) * v;
    double* prow = pp + static_cast<std::size_t>(r) * v;
    double mx = row[0];
    for (std::size_t i = 1; i < v; ++i) mx = std::max(mx, row[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < v; ++i) {
      const double e = std::exp(row[i] - mx);
      prow[i] = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (std::size_t i = 0; i < v; ++i) prow[i] *= inv;
    row_nll[static_cast<std::size_t>(r)] =
        -std::log(std::max(prow[static_cast<std::size_t>(tgt)], kCrossEntropyFloor));
  }
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) loss += row_nll[r];
  loss /= static_cast<double>(n);
  Node nd;
  nd.op = Op::CrossEntropy;
  nd.a = logits;
  nd.ids = std::move(targets);
  nd.value = Tensor::scalar(loss);
  nd.saved = std::move(probs);
  nd.needs_grad = at(logits).needs_grad;
  return push(std::move(nd));
}

Tape::NodeId Tape::sum_of_squares(NodeId a) {
  const Tensor& va = at(a).value;
  const double* pa = va.data();
  double acc = 0.0;
  const std::size_t n = va.numel();
  for (std::size_t i = 0; i < n; ++i) acc += pa[i] * pa[i];
  Node nd;
  nd.op = Op::SumSquares;
  nd.a = a;
  nd.value = Tensor::scalar(acc);
  nd.needs_grad = at(a).needs_grad;
  return push(std::move(nd));
}

const Tensor& Tape::value(NodeId id) const { return at(id).value; }

bool Tape::has_grad(NodeId id) const { return at(id).grad.defined(); }

const Tensor& Tape::grad(NodeId id) const {
  const Node& n = at(id);
  if (!n.grad.defined())
    throw ValidationError("node " + std::to_string(id) + " has no gradient");
  return n.grad;
}

void Tape::accumulate(Node& n, const double* src, std::size_t numel) {
  if (!n.needs_grad) return;
  if (!n.grad.defined()) n.grad = Tensor(n.value.shape(), 0.0);
  double* dst = n.grad.data();
  for (std::size_t i = 0; i < numel; ++i) dst[i] += src[i];
}

void Tape::backward(NodeId loss) {
  if (consumed_) throw ValidationError("backward called twice on the same tape");
  const Node& ln = at(loss);
  if (ln.value.numel() != 1)
    throw ValidationError("backward requires a scalar loss, got " + shape_str(ln.value.shape()));
  consumed_ = true;
  nodes_[static_cast<std::size_t>(loss)].grad = Tensor(ln.value.shape(), 0.0);
  nodes_[static_cast<std::size_t>(loss)].grad.at(0) = 1.0;
  for (int id = loss; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad.defined() || !n.needs_grad) continue;
    backward_node(id);
  }
  // Trainable leaves always end up with a gradient, even when disconnected.
  for (Node& n : nodes_) {
    if (n.op == Op::Leaf && n.needs_grad && !n.grad.defined()) n.grad = Tensor(n.value.shape(), 0.0);
  }
}

void Tape::backward_node(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  const double* g = n.grad.data();
  switch (n.op) {
    case Op::Leaf:
      return;
    case Op::Add: {
      accumulate(nodes_[static_cast<std::size_t>(n.a)], g, n.grad.numel());
      accumulate(nodes_[static_cast<std::size_t>(n.b)], g, n.grad.numel());
      return;
    }
    case Op::Sub: {
      accumulate(nodes_[static_cast<std::size_t>(n.a)], g, n.grad.numel());
      Node& nb = nodes_[static_cast<std::size_t>(n.b)];
      if (nb.needs_grad) {
        std::vector<double> neg(n.grad.numel());
        for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -g[i];
        accumulate(nb, neg.data(), neg.size());
      }
      return;
    }
    case Op::Mul: {
      Node& na = nodes_[static_cast<std::size_t>(n.a)];
      Node& nb = nodes_[static_cast<std::size_t>(n.b)];
      const std::size_t cnt = n.grad.numel();
      if (na.needs_grad) {
        std::vector<double> tmp(cnt);
        const double* pb = nb.value.data();
        for (std::size_t i = 0; i < cnt; ++i) tmp[i] = g[i] * pb[i];
        accumulate(na, tmp.data(), cnt);
      }
      if (nb.needs_grad) {
        std::vector<double> tmp(cnt);
        const double* pa = na.value.data();
        for (std::size_t i = 0; i < cnt; ++i) tmp[i] = g[i] * pa[i];
        accumulate(nb, tmp.data(), cnt);
      }
      return;
    }
    case Op::Scale: {
      Node& na = nodes_[static_cast<std::size_t>(n.a)];
      if (na.needs_grad) {
        std::vector<double> tmp(n.grad.numel());
        for (std::size_t i = 0; i < tmp.size(); ++i) tmp[i] = g[i] * n.scalar;
        accumulate(na, tmp.data(), tmp.size());
      }
      return;
    }
    case Op::Reshape: {
      accumulate(nodes_[static_cast<std::size_t>(n.a)], g, n.grad.numel());
      return;
    }
    case Op::MatMul: {
      Node& na = nodes_[static_cast<std::size_t>(n.a)];
      Node& nb = nodes_[static_cast<std::size_t>(n.b)];
      const std::size_t k = na.value.shape().back();
      const std::size_t m = na.value.numel() / k;
      const std::size_t nn = nb.value.dim(1);
      if (na.needs_grad) {
        std::vector<double> da(m * k);
        kernels::gemm_nt(g, nb.value.data(), da.data(), m, nn, k);
        accumulate(na, da.data(), da.size());
      }
      if (nb.needs_grad) {
        std::vector<double> db(k * nn);
        kernels::gemm_tn(na.value.data(), g, db.data(), k, m, nn);
        accumulate(nb, db.data(), db.size());
      }
      return;
    }
    case Op::Linear: {
      Node& nx = nodes_[static_cast<std::size_t>(n.a)];
      Node& nw = nodes_[static_cast<std::size_t>(n.b)];
      const std::size_t k = nx.value.shape().back();
      const std::size_t m = nx.value.numel() / k;
      const std::size_t nn = nw.value.dim(0);
      if (nx.needs_grad) {
        std::vector<double> dx(m * k);
        kernels::gemm_nn(g, nw.value.data(), dx.data(), m, nn, k);
        accumulate(nx, dx.data(), dx.size());
      }
      if (nw.needs_grad) {
        std::vector<double> dw(nn * k);
        kernels::gemm_tn(g, nx.value.data(), dw.data(), nn, m, k);
        accumulate(nw, dw.data(), dw.size());
      }
      return;
    }
    case Op::Gelu: {
      Node& na = nodes_[static_cast<std::size_t>(n.a)];
      if (!na.needs_grad) return;
      const std::size_t cnt = n.grad.numel();
      std::vector<double> tmp(cnt);
      const double* px = na.value.data();
      for (std::size_t i = 0; i < cnt; ++i) {
        const double x = px[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        tmp[i] = g[i] * (cdf + x * pdf);
      }
      accumulate(na, tmp.data(), cnt);
      return;
    }
    case Op::LayerNorm: {
      Node& nx = nodes_[static_cast<std::size_t>(n.a)];
      Node& ng = nodes_[static_cast<std::size_t>(n.b)];
      Node& nb = nodes_[static_cast<std::size_t>(n.c)];
      const std::size_t c = nx.value.shape().back();
      const std::size_t rows = nx.value.numel() / c;
      const double* ph = n.saved.data();
      const double* pr = n.saved2.data();
      const double* pg = ng.value.data();
      if (nx.needs_grad) {
        std::vector<double> dx(rows * c);
        const long rowsi = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * c > 4096)
        for (long r = 0; r < rowsi; ++r) {
          const double* grow = g + static_cast<std::size_t>(r) * c;
          const double* hrow = ph + static_cast<std::size_t>(r) * c;
          double* dxrow = dx.data() + static_cast<std::size_t>(r) * c;
          double mean_dh = 0.0, mean_dhh = 0.0;
          for (std::size_t i = 0; i < c; ++i) {
            const double dh = grow[i] * pg[i];
            mean_dh += dh;
            mean_dhh += dh * hrow[i];
          }
          mean_dh /= static_cast<double>(c);
          mean_dhh /= static_cast<double>(c);
          const double rs = pr[r];
          for (std::size_t i = 0; i < c; ++i) {
            const double dh = grow[i] * pg[i];
            dxrow[i] = rs * (dh - mean_dh - hrow[i] * mean_dhh);
          }
        }
        accumulate(nx, dx.data(), dx.size());
      }
      if (ng.needs_grad || nb.needs_grad) {
        std::vector<double> dg(c, 0.0), db(c, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* grow = g + r * c;
          const double* hrow = ph + r * c;
          for (std::size_t i = 0; i < c; ++i) {
            dg[i] += grow[i] * hrow[i];
            db[i] += grow[i];
          }
        }
        if (ng.needs_grad) accumulate(ng, dg.data(), c);
        if (nb.needs_grad) accumulate(nb, db.data(), c);
      }
      return;
    }
    case Op::Softmax: {
      Node& na = nodes_[static_cast<std::size_t>(n.a)];
      if (!na.needs_grad) return;
      const std::size_t c = n.value.shape().back();
      const std::size_t rows = n.value.numel() / c;
      std::vector<double> dx(rows * c);
      const double* py = n.value.data();
      const long rowsi = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * c > 4096)
      for (long r = 0; r < rowsi; ++r) {
        const double* yrow = py + static_cast<std::size_t>(r) * c;
        const double* grow = g + static_cast<std::size_t>(r) * c;
        double dot = 0.0;
        for (std::size_t i = 0; i < c; ++i) dot += yrow[i] * grow[i];
        double* dxrow = dx.data() + static_cast<std::size_t>(r) * c;
        for (std::size_t i = 0; i < c; ++i) dxrow[i] = yrow[i] * (grow[i] - dot);
      }
      accumulate(na, dx.data(), dx.size());
      return;
    }
    case Op::Embedding: {
      Node& nt = nodes_[static_cast<std::size_t>(n.a)];
      if (!nt.needs_grad) return;
      const std::size_t c = nt.value.dim(1);
      std::vector<double> dt(nt.value.numel(), 0.0);
      for (std::size_t r = 0; r < n.ids.size(); ++r) {
        const double* grow = g + r * c;
        double* trow = dt.data() + static_cast<std::size_t>(n.ids[r]) * c;
        for (std::size_t i = 0; i < c; ++i) trow[i] += grow[i];
      }
      accumulate(nt, dt.data(), dt.size());
      return;
    }
    case Op::Attention: {
      Node& nq = nodes_[static_cast<std::size_t>(n.a)];
      Node& nk = nodes_[static_cast<std::size_t>(n.b)];
      Node& nv = nodes_[static_cast<std::size_t>(n.c)];
      const std::size_t c = nq.value.dim(1);
      const std::size_t t = static_cast<std::size_t>(n.seq);
      const std::size_t heads = static_cast<std::size_t>(n.heads);
      const std::size_t d = c / heads;
      const double sc = 1.0 / std::sqrt(static_cast<double>(d));
      std::vector<double> dq(nq.value.numel(), 0.0);
      std::vector<double> dk(nq.value.numel(), 0.0);
      std::vector<double> dv(nq.value.numel(), 0.0);
      const double* pq = nq.value.data();
      const double* pk = nk.value.data();
      const double* pv = nv.value.data();
      const double* pp = n.saved.data();
      const long bh_count = static_cast<long>(n.batch) * n.heads;
#pragma omp parallel for schedule(static)
      for (long bh = 0; bh < bh_count; ++bh) {
        const std::size_t b = static_cast<std::size_t>(bh) / heads;
        const std::size_t h = static_cast<std::size_t>(bh) % heads;
        const std::size_t off = h * d;
        std::vector<double> da(t), ds(t);
        for (std::size_t ti = 0; ti < t; ++ti) {
          const double* grow = g + (b * t + ti) * c + off;
          const double* arow = pp + (static_cast<std::size_t>(bh) * t + ti) * t;
          double dot = 0.0;
          for (std::size_t u = 0; u <= ti; ++u) {
            const double* vrow = pv + (b * t + u) * c + off;
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += grow[j] * vrow[j];
            da[u] = s;
            dot += s * arow[u];
            double* dvrow = dv.data() + (b * t + u) * c + off;
            const double w = arow[u];
            for (std::size_t j = 0; j < d; ++j) dvrow[j] += w * grow[j];
          }
          const double* qrow = pq + (b * t + ti) * c + off;
          double* dqrow = dq.data() + (b * t + ti) * c + off;
          for (std::size_t u = 0; u <= ti; ++u) {
            const double dsv = arow[u] * (da[u] - dot) * sc;
            ds[u] = dsv;
            const double* krow = pk + (b * t + u) * c + off;
            double* dkrow = dk.data() + (b * t + u) * c + off;
            for (std::size_t j = 0; j < d; ++j) {
              dqrow[j] += dsv * krow[j];
              dkrow[j] += dsv * qrow[j];
            }
          }
        }
      }
      accumulate(nq, dq.data(), dq.size());
      accumulate(nk, dk.data(), dk.size());
      accumulate(nv, dv.data(), dv.size());
      return;
    }
    case Op::CrossEntropy: {
      Node& nl = nodes_[static_cast<std::size_t>(n.a)];
      if (!nl.needs_grad) return;
      const std::size_t v = nl.value.dim(1);
      const std::size_t rows = nl.value.dim(0);
      const double gv = g[0] / static_cast<double>(rows);
      std::vector<double> dl(nl.value.numel());
      const double* pp = n.saved.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* prow = pp + r * v;
        double* drow = dl.data() + r * v;
        for (std::size_t i = 0; i < v; ++i) drow[i] = gv * prow[i];
        drow[static_cast<std::size_t>(n.ids[r])] -= gv;
      }
      accumulate(nl, dl.data(), dl.size());
      return;
    }
    case Op::SumSquares: {
      Node& na = nodes_[static_cast<std::size_t>(n.a)];
      if (!na.needs_grad) return;
      const std::size_t cnt = na.value.numel();
      std::vector<double> tmp(cnt);
      const double* pa = na.value.data();
      const double gv = g[0];
      for (std::size_t i = 0; i < cnt; ++i) tmp[i] = 2.0 * gv * pa[i];
      accumulate(na, tmp.data(), cnt);
      return;
    }
  }
}

}  // namespace nmsparse
