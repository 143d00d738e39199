#pragma once

#include <memory>
#include <string>
#include <vector>

#include "sbnn/tensor.hpp"

namespace sbnn {

class Tape;

/// Primitive operation: a forward kernel plus the vector-Jacobian products
/// pushing an upstream gradient into each input's accumulator.
struct OpBase {
  virtual ~OpBase() = default;
  virtual const char* name() const = 0;
  virtual Tensor forward(const std::vector<const Tensor*>& in) const = 0;
  /// Accumulates d(loss)/d(input_k) into *g_in[k] for each non-null slot.
  virtual void backward(const std::vector<const Tensor*>& in, const Tensor& out, const Tensor& g_out,
                        const std::vector<Tensor*>& g_in) const = 0;
};

/// Handle to a node on a Tape. Cheap to copy; values live in the tape arena.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Ordered record of primitive operations with their input references.
/// Supports one reverse sweep computing the gradient of a scalar output with
/// respect to any leaf marked differentiable, and a replay check that
/// re-executes every recorded op against the stored inputs.
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad = false) {
    nodes_.push_back(Node{nullptr, {}, std::move(value), requires_grad});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var constant(double v) { return leaf(Tensor::scalar(v), false); }

  Var apply(std::unique_ptr<OpBase> op, const std::vector<Var>& inputs) {
    std::vector<const Tensor*> in;
    std::vector<int> parents;
    bool rg = false;
    in.reserve(inputs.size());
    parents.reserve(inputs.size());
    for (const Var& v : inputs) {
      if (v.tape() != this) throw ShapeError(std::string(op->name()) + ": operand from another tape");
      in.push_back(&nodes_[v.id()].value);
      parents.push_back(v.id());
      rg = rg || nodes_[v.id()].requires_grad;
    }
    Tensor out = op->forward(in);
    nodes_.push_back(Node{std::move(op), std::move(parents), std::move(out), rg});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  const Tensor& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// d(loss)/d(param) for each param, via one reverse sweep. The loss must be
  /// a scalar on this tape; each param must be a leaf marked differentiable.
  std::vector<Tensor> gradient(const Var& loss, const std::vector<Var>& params) {
    if (loss.tape() != this) throw ShapeError("gradient: loss is not on this tape");
    if (nodes_[loss.id()].value.size() != 1) throw ShapeError("gradient: loss is not a scalar");
    for (const Var& p : params) {
      if (p.tape() != this) throw ShapeError("gradient: param not on tape");
      if (!nodes_[p.id()].requires_grad)
        throw ShapeError("gradient: param was not marked differentiable");
    }

    std::vector<Tensor> grads(nodes_.size());
    std::vector<bool> alive(nodes_.size(), false);
    grads[loss.id()] = Tensor(Shape(nodes_[loss.id()].value.shape()), 0.0);
    grads[loss.id()][0] = 1.0;
    alive[loss.id()] = true;

    std::vector<const Tensor*> in;
    std::vector<Tensor*> g_in;
    for (int i = loss.id(); i >= 0; --i) {
      Node& n = nodes_[i];
      if (!alive[i] || !n.op || !n.requires_grad) continue;
      in.clear();
      g_in.clear();
      for (int p : n.parents) {
        in.push_back(&nodes_[p].value);
        if (nodes_[p].requires_grad) {
          if (!alive[p]) {
            grads[p] = Tensor::zeros_like(nodes_[p].value);
            alive[p] = true;
          }
          g_in.push_back(&grads[p]);
        } else {
          g_in.push_back(nullptr);
        }
      }
      n.op->backward(in, n.value, grads[i], g_in);
    }

    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const Var& p : params) {
      if (alive[p.id()])
        out.push_back(std::move(grads[p.id()]));
      else
        out.push_back(Tensor::zeros_like(nodes_[p.id()].value));
    }
    return out;
  }

  /// Re-executes every recorded op against the stored parent values and
  /// checks the results are bit-identical to the first pass.
  bool replay_matches() const {
    std::vector<const Tensor*> in;
    for (const Node& n : nodes_) {
      if (!n.op) continue;
      in.clear();
      for (int p : n.parents) in.push_back(&nodes_[p].value);
      Tensor redo = n.op->forward(in);
      if (!redo.same_data(n.value)) return false;
    }
    return true;
  }

 private:
  struct Node {
    std::unique_ptr<OpBase> op;  // null for leaves
    std::vector<int> parents;
    Tensor value;
    bool requires_grad;
  };

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

}  // namespace sbnn
