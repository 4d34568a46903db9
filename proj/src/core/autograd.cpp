#include "cdvg/core/autograd.hpp"

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "cdvg/core/ops.hpp"

namespace cdvg {
namespace {

thread_local bool g_grad_enabled = true;

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled) : previous_(g_grad_enabled) { g_grad_enabled = enabled; }
  ~GradModeGuard() { g_grad_enabled = previous_; }

 private:
  bool previous_;
};

// Post-order over the nodes that require grad, root last.
std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].node();
      if (child != nullptr && child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  return order;
}

struct PendingGrad {
  Var value;
  bool owned = false;  // buffer allocated here, safe to accumulate in place
};

void accumulate(PendingGrad& slot, const Var& incoming, bool create_graph) {
  if (!slot.value.defined()) {
    slot.value = incoming;
    return;
  }
  if (create_graph) {
    slot.value = add(slot.value, incoming);
    return;
  }
  if (slot.owned) {
    slot.value.mutable_value().add_(incoming.value());
    return;
  }
  Tensor sum = slot.value.value().clone();
  sum.add_(incoming.value());
  slot.value = Var(std::move(sum));
  slot.owned = true;
}

// Runs the reverse sweep; `on_leaf` receives the final gradient of every leaf
// that requires grad, `keep` lists nodes whose gradient must survive the sweep.
template <typename LeafFn>
std::unordered_map<Node*, PendingGrad> run_backward(const Var& output, const Var& grad_output,
                                                    bool create_graph,
                                                    const std::unordered_set<Node*>& keep,
                                                    LeafFn&& on_leaf) {
  if (!output.requires_grad()) {
    throw std::logic_error("backward through a value that does not require grad");
  }
  Var seed = grad_output;
  if (!seed.defined()) {
    if (output.numel() != 1) {
      throw std::logic_error("grad of non-scalar output " + to_string(output.shape()) +
                             " needs an explicit grad_output");
    }
    seed = Var(Tensor::full(output.shape(), 1.0f));
  }

  const std::vector<Node*> order = topo_order(output.node());
  std::unordered_map<Node*, PendingGrad> pending;
  pending[output.node()].value = seed;

  std::unordered_map<Node*, PendingGrad> kept;
  GradModeGuard mode(create_graph);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    auto found = pending.find(node);
    if (found == pending.end()) continue;
    PendingGrad slot = std::move(found->second);
    pending.erase(found);

    if (keep.count(node) != 0) kept[node] = slot;
    if (!node->backward) {
      on_leaf(node, slot.value);
      continue;
    }
    if (create_graph && !node->twice_differentiable) {
      throw std::logic_error(std::string("op '") + node->op +
                             "' does not support higher-order gradients");
    }
    const std::vector<Var> input_grads = node->backward(slot.value);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const Var& in = node->inputs[i];
      if (!in.requires_grad() || i >= input_grads.size() || !input_grads[i].defined()) continue;
      accumulate(pending[in.node()], input_grads[i], create_graph);
    }
  }
  return kept;
}

}  // namespace

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
  if (node_->grad.defined()) node_->grad.fill(0.0f);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op,
                bool twice_differentiable) {
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const Var& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  if (!needs_grad) return Var(std::move(value));
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->twice_differentiable = twice_differentiable;
  node->op = op;
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  return Var::from_node(std::move(node));
}

std::vector<Var> grad(const Var& output, const std::vector<Var>& inputs, bool create_graph,
                      const Var& grad_output) {
  std::unordered_set<Node*> keep;
  for (const Var& in : inputs) keep.insert(in.node());
  auto kept = run_backward(output, grad_output, create_graph, keep, [](Node*, const Var&) {});
  std::vector<Var> result;
  result.reserve(inputs.size());
  for (const Var& in : inputs) {
    auto it = kept.find(in.node());
    if (it != kept.end()) {
      result.push_back(it->second.value);
    } else {
      result.emplace_back(Tensor::zeros(in.shape()));
    }
  }
  return result;
}

void backward(const Var& output) {
  run_backward(output, Var{}, false, {}, [](Node* leaf, const Var& g) {
    if (!leaf->grad.defined()) {
      leaf->grad = g.value().clone();
    } else {
      leaf->grad.add_(g.value());
    }
  });
}

}  // namespace cdvg
