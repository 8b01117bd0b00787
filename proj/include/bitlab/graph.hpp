#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "bitlab/tensor.hpp"

namespace bitlab {

// Reverse-mode autodiff on a static graph. Nodes are stored in topological
// order (every node's inputs precede it). Activations and node gradients live
// in a caller-owned Workspace so a built graph is immutable during inference
// and can be shared across evaluation workers.

enum class Op {
  Input,
  Conv2d,
  Linear,
  Relu,
  MaxPool2,       // 2x2, stride 2
  GlobalAvgPool,  // NCHW -> NC
  Add,
  SoftmaxXent,  // logits + workspace labels -> mean batch cross-entropy
  LossSum,      // weighted sum of scalar nodes, weights from workspace
};

struct Node {
  Op op = Op::Input;
  std::vector<int> in;        // input node ids
  std::string w, b;           // parameter names (Conv2d/Linear; b may be empty)
  int stride = 1, pad = 0;    // Conv2d
  std::vector<int> out_shape; // per-sample shape; empty means batch-reduced scalar
  std::string name;
};

struct Param {
  std::shared_ptr<Tensor> value;
  std::shared_ptr<Tensor> grad;
  bool trainable = true;
};

struct BackwardOpts {
  bool trainable_params = true;  // produce gradients for trainable parameters
  bool frozen_params = false;    // also produce gradients for frozen parameters
  bool input_grad = false;       // materialize d(loss)/d(input)
};

class Graph;

struct Workspace {
  std::vector<Tensor> act;
  std::vector<char> ready;
  std::vector<Tensor> grad;          // per-node output gradients
  std::vector<char> grad_ready;
  std::vector<int> labels;           // batch labels for SoftmaxXent nodes
  std::vector<float> loss_weights;   // per LossSum input, set before forward
  int batch = 0;
  std::vector<float> scratch;        // im2col buffer
};

class Graph {
 public:
  // --- construction (validates shapes; errors name the offending node) ---
  int add_input(std::vector<int> per_sample_shape, const std::string& name);
  int add_conv2d(int x, const std::string& w, const std::string& b, int stride, int pad,
                 const std::string& name);
  int add_linear(int x, const std::string& w, const std::string& b, const std::string& name);
  int add_relu(int x, const std::string& name);
  int add_maxpool2(int x, const std::string& name);
  int add_global_avg_pool(int x, const std::string& name);
  int add_add(int a, int b, const std::string& name);
  int add_softmax_xent(int logits, const std::string& name);
  int add_loss_sum(std::vector<int> scalar_nodes, const std::string& name);

  void add_param(const std::string& name, Tensor init, bool trainable = true);

  // --- access ---
  int node_count() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  bool has_param(const std::string& name) const { return params_.count(name) > 0; }
  Param& param(const std::string& name);
  const Param& param(const std::string& name) const;
  const std::map<std::string, Param>& params() const { return params_; }
  int input_node() const { return input_node_; }

  // --- execution ---
  // Clears the workspace and binds the input batch [N, per-sample shape].
  void start(Workspace& ws, const Tensor& input_batch) const;
  // Memoized forward of `id` and its ancestors only (lazy evaluation).
  const Tensor& eval(Workspace& ws, int id) const;
  // Backward from a scalar node whose forward value is already computed.
  void backward(Workspace& ws, int loss_node, const BackwardOpts& opts = {}) const;

  void zero_grads();

  // Deep-copies the node list; parameters for which `share(name)` is true
  // alias the original storage (value and grad), others are deep copies.
  template <typename Pred>
  Graph clone(Pred share) const {
    Graph g;
    g.nodes_ = nodes_;
    g.input_node_ = input_node_;
    for (const auto& [name, p] : params_) {
      Param q;
      if (share(name)) {
        q = p;
      } else {
        q.value = std::make_shared<Tensor>(*p.value);
        q.grad = std::make_shared<Tensor>(*p.grad);
        q.trainable = p.trainable;
      }
      g.params_.emplace(name, std::move(q));
    }
    return g;
  }

 private:
  int push(Node n);
  const std::vector<int>& in_shape(const Node& n, int slot) const;
  void compute(Workspace& ws, int id) const;
  void propagate(Workspace& ws, int id, const BackwardOpts& opts,
                 const std::vector<char>& wants) const;
  Tensor& grad_buf(Workspace& ws, int id) const;

  std::vector<Node> nodes_;
  std::map<std::string, Param> params_;
  int input_node_ = -1;
};

// Convenience wrappers matching the one-shot call pattern used by tests.
// forward_heads evaluates the listed head nodes and returns their activations.
std::vector<Tensor> forward_heads(const Graph& g, Workspace& ws, const Tensor& input,
                                  const std::vector<int>& heads);

}  // namespace bitlab
