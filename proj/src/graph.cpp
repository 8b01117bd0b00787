#include "bitlab/graph.hpp"

#include <Eigen/Core>

#include <cmath>

#include "bitlab/errors.hpp"

namespace bitlab {

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// x: [Cin, H, W] one sample; cols: [Cin*K*K, Ho*Wo]
void im2col(const float* x, int cin, int h, int w, int k, int stride, int pad, int ho, int wo,
            float* cols) {
  for (int c = 0; c < cin; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        float* row = cols + (static_cast<int64_t>((c * k + ki) * k + kj)) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            row[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                    ? x[(static_cast<int64_t>(c) * h + iy) * w + ix]
                                    : 0.f;
          }
        }
      }
    }
  }
}

// Accumulates cols gradients back into dx (reverse of im2col).
void col2im(const float* cols, int cin, int h, int w, int k, int stride, int pad, int ho, int wo,
            float* dx) {
  for (int c = 0; c < cin; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const float* row = cols + (static_cast<int64_t>((c * k + ki) * k + kj)) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix < 0 || ix >= w) continue;
            dx[(static_cast<int64_t>(c) * h + iy) * w + ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Param& Graph::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw NumericError("unknown parameter '" + name + "'");
  return it->second;
}

const Param& Graph::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw NumericError("unknown parameter '" + name + "'");
  return it->second;
}

void Graph::add_param(const std::string& name, Tensor init, bool trainable) {
  if (params_.count(name)) throw NumericError("duplicate parameter '" + name + "'");
  Param p;
  p.value = std::make_shared<Tensor>(std::move(init));
  p.grad = std::make_shared<Tensor>(Tensor::zeros(p.value->shape));
  p.trainable = trainable;
  params_.emplace(name, std::move(p));
}

int Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

const std::vector<int>& Graph::in_shape(const Node& n, int slot) const {
  return nodes_[static_cast<size_t>(n.in[static_cast<size_t>(slot)])].out_shape;
}

int Graph::add_input(std::vector<int> per_sample_shape, const std::string& name) {
  if (input_node_ >= 0) throw NumericError("graph already has an input node");
  Node n;
  n.op = Op::Input;
  n.out_shape = std::move(per_sample_shape);
  n.name = name;
  input_node_ = push(std::move(n));
  return input_node_;
}

int Graph::add_conv2d(int x, const std::string& w, const std::string& b, int stride, int pad,
                      const std::string& name) {
  const auto& xs = nodes_[static_cast<size_t>(x)].out_shape;
  if (xs.size() != 3)
    throw NumericError("conv2d '" + name + "': input must be CxHxW, got " + shape_str(xs));
  const Tensor& wt = *param(w).value;
  if (wt.rank() != 4 || wt.dim(1) != xs[0])
    throw NumericError("conv2d '" + name + "': weight " + shape_str(wt.shape) +
                       " incompatible with input " + shape_str(xs));
  if (wt.dim(2) != wt.dim(3)) throw NumericError("conv2d '" + name + "': kernel must be square");
  const int k = wt.dim(2);
  const int ho = conv_out_dim(xs[1], k, stride, pad);
  const int wo = conv_out_dim(xs[2], k, stride, pad);
  if (ho <= 0 || wo <= 0)
    throw NumericError("conv2d '" + name + "': output would be empty for input " + shape_str(xs));
  if (!b.empty() && param(b).value->numel() != wt.dim(0))
    throw NumericError("conv2d '" + name + "': bias size mismatch");
  Node n;
  n.op = Op::Conv2d;
  n.in = {x};
  n.w = w;
  n.b = b;
  n.stride = stride;
  n.pad = pad;
  n.out_shape = {wt.dim(0), ho, wo};
  n.name = name;
  return push(std::move(n));
}

int Graph::add_linear(int x, const std::string& w, const std::string& b, const std::string& name) {
  const auto& xs = nodes_[static_cast<size_t>(x)].out_shape;
  if (xs.size() != 1)
    throw NumericError("linear '" + name + "': input must be a feature vector, got " + shape_str(xs));
  const Tensor& wt = *param(w).value;
  if (wt.rank() != 2 || wt.dim(1) != xs[0])
    throw NumericError("linear '" + name + "': weight " + shape_str(wt.shape) +
                       " incompatible with input " + shape_str(xs));
  if (!b.empty() && param(b).value->numel() != wt.dim(0))
    throw NumericError("linear '" + name + "': bias size mismatch");
  Node n;
  n.op = Op::Linear;
  n.in = {x};
  n.w = w;
  n.b = b;
  n.out_shape = {wt.dim(0)};
  n.name = name;
  return push(std::move(n));
}

int Graph::add_relu(int x, const std::string& name) {
  Node n;
  n.op = Op::Relu;
  n.in = {x};
  n.out_shape = nodes_[static_cast<size_t>(x)].out_shape;
  n.name = name;
  return push(std::move(n));
}

int Graph::add_maxpool2(int x, const std::string& name) {
  const auto& xs = nodes_[static_cast<size_t>(x)].out_shape;
  if (xs.size() != 3 || xs[1] < 2 || xs[2] < 2)
    throw NumericError("maxpool2 '" + name + "': input must be CxHxW with H,W >= 2, got " +
                       shape_str(xs));
  Node n;
  n.op = Op::MaxPool2;
  n.in = {x};
  n.out_shape = {xs[0], xs[1] / 2, xs[2] / 2};
  n.name = name;
  return push(std::move(n));
}

int Graph::add_global_avg_pool(int x, const std::string& name) {
  const auto& xs = nodes_[static_cast<size_t>(x)].out_shape;
  if (xs.size() != 3)
    throw NumericError("global_avg_pool '" + name + "': input must be CxHxW, got " + shape_str(xs));
  Node n;
  n.op = Op::GlobalAvgPool;
  n.in = {x};
  n.out_shape = {xs[0]};
  n.name = name;
  return push(std::move(n));
}

int Graph::add_add(int a, int b, const std::string& name) {
  const auto& as = nodes_[static_cast<size_t>(a)].out_shape;
  const auto& bs = nodes_[static_cast<size_t>(b)].out_shape;
  if (as != bs)
    throw NumericError("add '" + name + "': shape mismatch " + shape_str(as) + " vs " + shape_str(bs));
  Node n;
  n.op = Op::Add;
  n.in = {a, b};
  n.out_shape = as;
  n.name = name;
  return push(std::move(n));
}

int Graph::add_softmax_xent(int logits, const std::string& name) {
  const auto& xs = nodes_[static_cast<size_t>(logits)].out_shape;
  if (xs.size() != 1 || xs[0] < 2)
    throw NumericError("softmax_xent '" + name + "': logits must be a vector of >= 2 classes, got " +
                       shape_str(xs));
  Node n;
  n.op = Op::SoftmaxXent;
  n.in = {logits};
  n.out_shape = {};  // batch-reduced scalar
  n.name = name;
  return push(std::move(n));
}

int Graph::add_loss_sum(std::vector<int> scalar_nodes, const std::string& name) {
  if (scalar_nodes.empty()) throw NumericError("loss_sum '" + name + "': no inputs");
  for (int id : scalar_nodes)
    if (!nodes_[static_cast<size_t>(id)].out_shape.empty())
      throw NumericError("loss_sum '" + name + "': input '" +
                         nodes_[static_cast<size_t>(id)].name + "' is not a scalar loss");
  Node n;
  n.op = Op::LossSum;
  n.in = std::move(scalar_nodes);
  n.out_shape = {};
  n.name = name;
  return push(std::move(n));
}

void Graph::start(Workspace& ws, const Tensor& input_batch) const {
  if (input_node_ < 0) throw NumericError("graph has no input node");
  const Node& in = nodes_[static_cast<size_t>(input_node_)];
  const auto& want = in.out_shape;
  if (input_batch.rank() != static_cast<int>(want.size()) + 1)
    throw NumericError("input '" + in.name + "': expected batch of " + shape_str(want) + ", got " +
                       shape_str(input_batch.shape));
  for (size_t i = 0; i < want.size(); ++i)
    if (input_batch.shape[i + 1] != want[i])
      throw NumericError("input '" + in.name + "': expected batch of " + shape_str(want) +
                         ", got " + shape_str(input_batch.shape));
  const size_t n = nodes_.size();
  ws.act.assign(n, Tensor{});
  ws.ready.assign(n, 0);
  ws.grad.assign(n, Tensor{});
  ws.grad_ready.assign(n, 0);
  ws.batch = input_batch.dim(0);
  ws.act[static_cast<size_t>(input_node_)] = input_batch;
  ws.ready[static_cast<size_t>(input_node_)] = 1;
}

const Tensor& Graph::eval(Workspace& ws, int id) const {
  if (id < 0 || id >= node_count()) throw NumericError("eval: node id out of range");
  if (ws.ready.size() != nodes_.size()) throw NumericError("eval: workspace not started");
  if (!ws.ready[static_cast<size_t>(id)]) {
    for (int in : nodes_[static_cast<size_t>(id)].in) eval(ws, in);
    compute(ws, id);
    ws.ready[static_cast<size_t>(id)] = 1;
  }
  return ws.act[static_cast<size_t>(id)];
}

void Graph::compute(Workspace& ws, int id) const {
  const Node& n = nodes_[static_cast<size_t>(id)];
  const int N = ws.batch;
  Tensor& out = ws.act[static_cast<size_t>(id)];
  switch (n.op) {
    case Op::Input:
      throw NumericError("input '" + n.name + "' has no bound batch (call start first)");
    case Op::Conv2d: {
      const Tensor& x = ws.act[static_cast<size_t>(n.in[0])];
      const Tensor& w = *param(n.w).value;
      const auto& xs = in_shape(n, 0);
      const int cin = xs[0], h = xs[1], wd = xs[2];
      const int cout = n.out_shape[0], ho = n.out_shape[1], wo = n.out_shape[2];
      const int k = w.dim(2);
      const int ck = cin * k * k, hw = ho * wo;
      out = Tensor({N, cout, ho, wo});
      ws.scratch.resize(static_cast<size_t>(ck) * hw);
      CMapM wm(w.v.data(), cout, ck);
      for (int s = 0; s < N; ++s) {
        im2col(x.v.data() + static_cast<int64_t>(s) * cin * h * wd, cin, h, wd, k, n.stride, n.pad,
               ho, wo, ws.scratch.data());
        CMapM cols(ws.scratch.data(), ck, hw);
        MapM om(out.v.data() + static_cast<int64_t>(s) * cout * hw, cout, hw);
        om.noalias() = wm * cols;
      }
      if (!n.b.empty()) {
        const Tensor& b = *param(n.b).value;
        for (int s = 0; s < N; ++s)
          for (int c = 0; c < cout; ++c) {
            float* p = out.v.data() + (static_cast<int64_t>(s) * cout + c) * hw;
            const float bv = b[c];
            for (int i = 0; i < hw; ++i) p[i] += bv;
          }
      }
      break;
    }
    case Op::Linear: {
      const Tensor& x = ws.act[static_cast<size_t>(n.in[0])];
      const Tensor& w = *param(n.w).value;
      const int f = in_shape(n, 0)[0], o = n.out_shape[0];
      out = Tensor({N, o});
      CMapM xm(x.v.data(), N, f), wm(w.v.data(), o, f);
      MapM om(out.v.data(), N, o);
      om.noalias() = xm * wm.transpose();
      if (!n.b.empty()) {
        const Tensor& b = *param(n.b).value;
        for (int s = 0; s < N; ++s)
          for (int j = 0; j < o; ++j) out.v[static_cast<size_t>(s * o + j)] += b[j];
      }
      break;
    }
    case Op::Relu: {
      const Tensor& x = ws.act[static_cast<size_t>(n.in[0])];
      out = x;
      for (float& v : out.v) v = v > 0.f ? v : 0.f;
      break;
    }
    case Op::MaxPool2: {
      const Tensor& x = ws.act[static_cast<size_t>(n.in[0])];
      const auto& xs = in_shape(n, 0);
      const int c = xs[0], h = xs[1], wd = xs[2];
      const int ho = n.out_shape[1], wo = n.out_shape[2];
      out = Tensor({N, c, ho, wo});
      for (int s = 0; s < N; ++s)
        for (int ch = 0; ch < c; ++ch) {
          const float* xp = x.v.data() + (static_cast<int64_t>(s) * c + ch) * h * wd;
          float* op = out.v.data() + (static_cast<int64_t>(s) * c + ch) * ho * wo;
          for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
              float m = xp[(2 * oy) * wd + 2 * ox];
              m = std::max(m, xp[(2 * oy) * wd + 2 * ox + 1]);
              m = std::max(m, xp[(2 * oy + 1) * wd + 2 * ox]);
              m = std::max(m, xp[(2 * oy + 1) * wd + 2 * ox + 1]);
              op[oy * wo + ox] = m;
            }
        }
      break;
    }
    case Op::GlobalAvgPool: {
      const Tensor& x = ws.act[static_cast<size_t>(n.in[0])];
      const auto& xs = in_shape(n, 0);
      const int c = xs[0], hw = xs[1] * xs[2];
      out = Tensor({N, c});
      const float inv = 1.f / static_cast<float>(hw);
      for (int s = 0; s < N; ++s)
        for (int ch = 0; ch < c; ++ch) {
          const float* xp = x.v.data() + (static_cast<int64_t>(s) * c + ch) * hw;
          double acc = 0.0;
          for (int i = 0; i < hw; ++i) acc += xp[i];
          out.v[static_cast<size_t>(s * c + ch)] = static_cast<float>(acc) * inv;
        }
      break;
    }
    case Op::Add: {
      const Tensor& a = ws.act[static_cast<size_t>(n.in[0])];
      const Tensor& b = ws.act[static_cast<size_t>(n.in[1])];
      out = a;
      for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
      break;
    }
    case Op::SoftmaxXent: {
      const Tensor& logits = ws.act[static_cast<size_t>(n.in[0])];
      const int c = in_shape(n, 0)[0];
      if (static_cast<int>(ws.labels.size()) != N)
        throw NumericError("softmax_xent '" + n.name + "': workspace has " +
                           std::to_string(ws.labels.size()) + " labels for batch " +
                           std::to_string(N));
      double total = 0.0;
      for (int s = 0; s < N; ++s)
        total += cross_entropy(logits.v.data() + static_cast<int64_t>(s) * c, c, ws.labels[static_cast<size_t>(s)]);
      out = Tensor::scalar(static_cast<float>(total / N));
      break;
    }
    case Op::LossSum: {
      if (ws.loss_weights.size() != n.in.size())
        throw NumericError("loss_sum '" + n.name + "': " + std::to_string(ws.loss_weights.size()) +
                           " weights for " + std::to_string(n.in.size()) + " losses");
      double total = 0.0;
      for (size_t i = 0; i < n.in.size(); ++i)
        total += static_cast<double>(ws.loss_weights[i]) *
                 ws.act[static_cast<size_t>(n.in[i])].v[0];
      out = Tensor::scalar(static_cast<float>(total));
      break;
    }
  }
}

Tensor& Graph::grad_buf(Workspace& ws, int id) const {
  Tensor& g = ws.grad[static_cast<size_t>(id)];
  if (!ws.grad_ready[static_cast<size_t>(id)]) {
    g = Tensor::zeros(ws.act[static_cast<size_t>(id)].shape);
    ws.grad_ready[static_cast<size_t>(id)] = 1;
  }
  return g;
}

void Graph::backward(Workspace& ws, int loss_node, const BackwardOpts& opts) const {
  if (loss_node < 0 || loss_node >= node_count()) throw NumericError("backward: node id out of range");
  if (ws.ready.size() != nodes_.size() || !ws.ready[static_cast<size_t>(loss_node)])
    throw NumericError("backward before forward: node '" +
                       nodes_[static_cast<size_t>(loss_node)].name + "' has no value");

  // wants[id]: gradient must flow through node id, either because it carries
  // parameters we need or because some ancestor below it does. Frozen
  // subgraphs drop out of the backward pass entirely.
  std::vector<char> wants(nodes_.size(), 0);
  for (size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    char w = 0;
    if (n.op == Op::Input) {
      w = opts.input_grad ? 1 : 0;
    } else {
      if (!n.w.empty() && (opts.frozen_params || param(n.w).trainable)) w = 1;
      if (!n.b.empty() && (opts.frozen_params || param(n.b).trainable)) w = 1;
      for (int in : n.in)
        if (wants[static_cast<size_t>(in)]) w = 1;
    }
    wants[id] = w;
  }

  for (auto& t : ws.grad) t = Tensor{};
  ws.grad_ready.assign(nodes_.size(), 0);
  grad_buf(ws, loss_node).fill(1.f);

  for (int id = loss_node; id >= 0; --id) {
    if (!ws.grad_ready[static_cast<size_t>(id)] || !ws.ready[static_cast<size_t>(id)]) continue;
    propagate(ws, id, opts, wants);
  }
}

void Graph::propagate(Workspace& ws, int id, const BackwardOpts& opts,
                      const std::vector<char>& wants) const {
  const Node& n = nodes_[static_cast<size_t>(id)];
  const Tensor& g = ws.grad[static_cast<size_t>(id)];
  const int N = ws.batch;
  switch (n.op) {
    case Op::Input:
      break;  // terminal; gradient stays in ws.grad[input]
    case Op::Conv2d: {
      const Tensor& x = ws.act[static_cast<size_t>(n.in[0])];
      const Param& wp = param(n.w);
      const Tensor& w = *wp.value;
      const auto& xs = in_shape(n, 0);
      const int cin = xs[0], h = xs[1], wd = xs[2];
      const int cout = n.out_shape[0], ho = n.out_shape[1], wo = n.out_shape[2];
      const int k = w.dim(2), ck = cin * k * k, hw = ho * wo;
      const bool want_w = opts.frozen_params || wp.trainable;
      const bool want_x = wants[static_cast<size_t>(n.in[0])] != 0;
      const bool want_b = !n.b.empty() && (opts.frozen_params || param(n.b).trainable);
      ws.scratch.resize(static_cast<size_t>(ck) * hw);
      CMapM wm(w.v.data(), cout, ck);
      Tensor* dx = want_x ? &grad_buf(ws, n.in[0]) : nullptr;
      std::vector<float> dcols(want_x ? static_cast<size_t>(ck) * hw : 0);
      for (int s = 0; s < N; ++s) {
        CMapM gm(g.v.data() + static_cast<int64_t>(s) * cout * hw, cout, hw);
        if (want_w) {
          im2col(x.v.data() + static_cast<int64_t>(s) * cin * h * wd, cin, h, wd, k, n.stride,
                 n.pad, ho, wo, ws.scratch.data());
          CMapM cols(ws.scratch.data(), ck, hw);
          MapM dwm(wp.grad->v.data(), cout, ck);
          dwm.noalias() += gm * cols.transpose();
        }
        if (want_x) {
          MapM dc(dcols.data(), ck, hw);
          dc.noalias() = wm.transpose() * gm;
          col2im(dcols.data(), cin, h, wd, k, n.stride, n.pad, ho, wo,
                 dx->v.data() + static_cast<int64_t>(s) * cin * h * wd);
        }
      }
      if (want_b) {
        Tensor& db = *param(n.b).grad;
        for (int s = 0; s < N; ++s)
          for (int c = 0; c < cout; ++c) {
            const float* gp = g.v.data() + (static_cast<int64_t>(s) * cout + c) * hw;
            double acc = 0.0;
            for (int i = 0; i < hw; ++i) acc += gp[i];
            db[c] += static_cast<float>(acc);
          }
      }
      break;
    }
    case Op::Linear: {
      const Tensor& x = ws.act[static_cast<size_t>(n.in[0])];
      const Param& wp = param(n.w);
      const int f = in_shape(n, 0)[0], o = n.out_shape[0];
      CMapM gm(g.v.data(), N, o), xm(x.v.data(), N, f), wm(wp.value->v.data(), o, f);
      if (opts.frozen_params || wp.trainable) {
        MapM dwm(wp.grad->v.data(), o, f);
        dwm.noalias() += gm.transpose() * xm;
      }
      if (wants[static_cast<size_t>(n.in[0])]) {
        Tensor& dx = grad_buf(ws, n.in[0]);
        MapM dxm(dx.v.data(), N, f);
        dxm.noalias() += gm * wm;
      }
      if (!n.b.empty() && (opts.frozen_params || param(n.b).trainable)) {
        Tensor& db = *param(n.b).grad;
        for (int s = 0; s < N; ++s)
          for (int j = 0; j < o; ++j) db[j] += g.v[static_cast<size_t>(s * o + j)];
      }
      break;
    }
    case Op::Relu: {
      if (!wants[static_cast<size_t>(n.in[0])]) break;
      const Tensor& x = ws.act[static_cast<size_t>(n.in[0])];
      Tensor& dx = grad_buf(ws, n.in[0]);
      for (size_t i = 0; i < dx.v.size(); ++i)
        if (x.v[i] > 0.f) dx.v[i] += g.v[i];
      break;
    }
    case Op::MaxPool2: {
      if (!wants[static_cast<size_t>(n.in[0])]) break;
      const Tensor& x = ws.act[static_cast<size_t>(n.in[0])];
      Tensor& dx = grad_buf(ws, n.in[0]);
      const auto& xs = in_shape(n, 0);
      const int c = xs[0], h = xs[1], wd = xs[2];
      const int ho = n.out_shape[1], wo = n.out_shape[2];
      for (int s = 0; s < N; ++s)
        for (int ch = 0; ch < c; ++ch) {
          const float* xp = x.v.data() + (static_cast<int64_t>(s) * c + ch) * h * wd;
          float* dxp = dx.v.data() + (static_cast<int64_t>(s) * c + ch) * h * wd;
          const float* gp = g.v.data() + (static_cast<int64_t>(s) * c + ch) * ho * wo;
          for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
              // first-maximum tie-break in scan order, matching forward
              int by = 2 * oy, bx = 2 * ox;
              float best = xp[by * wd + bx];
              for (int dy = 0; dy < 2; ++dy)
                for (int dxx = 0; dxx < 2; ++dxx) {
                  const int yy = 2 * oy + dy, xx = 2 * ox + dxx;
                  if (xp[yy * wd + xx] > best) {
                    best = xp[yy * wd + xx];
                    by = yy;
                    bx = xx;
                  }
                }
              dxp[by * wd + bx] += gp[oy * wo + ox];
            }
        }
      break;
    }
    case Op::GlobalAvgPool: {
      if (!wants[static_cast<size_t>(n.in[0])]) break;
      Tensor& dx = grad_buf(ws, n.in[0]);
      const auto& xs = in_shape(n, 0);
      const int c = xs[0], hw = xs[1] * xs[2];
      const float inv = 1.f / static_cast<float>(hw);
      for (int s = 0; s < N; ++s)
        for (int ch = 0; ch < c; ++ch) {
          const float gv = g.v[static_cast<size_t>(s * c + ch)] * inv;
          float* dxp = dx.v.data() + (static_cast<int64_t>(s) * c + ch) * hw;
          for (int i = 0; i < hw; ++i) dxp[i] += gv;
        }
      break;
    }
    case Op::Add: {
      for (int slot = 0; slot < 2; ++slot) {
        if (!wants[static_cast<size_t>(n.in[static_cast<size_t>(slot)])]) continue;
        Tensor& d = grad_buf(ws, n.in[static_cast<size_t>(slot)]);
        for (size_t i = 0; i < d.v.size(); ++i) d.v[i] += g.v[i];
      }
      break;
    }
    case Op::SoftmaxXent: {
      if (!wants[static_cast<size_t>(n.in[0])]) break;
      const Tensor& logits = ws.act[static_cast<size_t>(n.in[0])];
      Tensor& dl = grad_buf(ws, n.in[0]);
      const int c = in_shape(n, 0)[0];
      const float scale = g.v[0] / static_cast<float>(N);
      for (int s = 0; s < N; ++s) {
        const auto p = softmax(logits.v.data() + static_cast<int64_t>(s) * c, c);
        float* dp = dl.v.data() + static_cast<int64_t>(s) * c;
        const int t = ws.labels[static_cast<size_t>(s)];
        for (int j = 0; j < c; ++j) dp[j] += scale * (p[static_cast<size_t>(j)] - (j == t ? 1.f : 0.f));
      }
      break;
    }
    case Op::LossSum: {
      for (size_t i = 0; i < n.in.size(); ++i) {
        if (!wants[static_cast<size_t>(n.in[i])]) continue;
        grad_buf(ws, n.in[i]).v[0] += g.v[0] * ws.loss_weights[i];
      }
      break;
    }
  }
}

void Graph::zero_grads() {
  for (auto& [name, p] : params_) p.grad->fill(0.f);
}

std::vector<Tensor> forward_heads(const Graph& g, Workspace& ws, const Tensor& input,
                                  const std::vector<int>& heads) {
  g.start(ws, input);
  std::vector<Tensor> out;
  out.reserve(heads.size());
  for (int h : heads) out.push_back(g.eval(ws, h));
  return out;
}

}  // namespace bitlab
