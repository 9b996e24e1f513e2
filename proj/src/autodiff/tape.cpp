#include "trajgp/autodiff/tape.hpp"

#include <utility>

namespace trajgp::ad {

const Matrix& Var::value() const {
  if (tape_ == nullptr) throw Error("use of an unbound Var");
  return tape_->value(id_);
}

double Var::item() const {
  const Matrix& v = value();
  if (v.size() != 1) {
    throw ShapeError("item() on a " + std::to_string(v.rows()) + "x" + std::to_string(v.cols()) +
                     " tensor");
  }
  return v(0, 0);
}

const Matrix& BackwardContext::output() const { return tape_.nodes_[node_].value; }

const Matrix& BackwardContext::input(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs.at(k)].value;
}

bool BackwardContext::wants(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs.at(k)].requires_grad;
}

Matrix& BackwardContext::slot_for(std::size_t k, Eigen::Index rows, Eigen::Index cols) {
  const std::size_t id = tape_.nodes_[node_].inputs.at(k);
  const Matrix& v = tape_.nodes_[id].value;
  if (v.rows() != rows || v.cols() != cols) {
    throw ShapeError("backward rule of '" + tape_.nodes_[node_].op +
                     "' produced a gradient of shape " + std::to_string(rows) + "x" +
                     std::to_string(cols) + " for an input of shape " + std::to_string(v.rows()) +
                     "x" + std::to_string(v.cols()));
  }
  return tape_.grads_[id];
}

Var Tape::constant(Matrix value) {
  if (!value.allFinite()) throw NumericalError("constant contains non-finite values");
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

Var Tape::parameter(const std::string& name, Matrix value) {
  if (name.empty()) throw Error("trainable parameters need a name");
  if (!value.allFinite()) throw NumericalError("parameter '" + name + "' contains non-finite values");
  Node n;
  n.op = "parameter";
  n.value = std::move(value);
  n.param_name = name;
  n.requires_grad = record_gradients_;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Matrix value, std::vector<Var> inputs, BackwardFn backward) {
  if (!value.allFinite()) {
    throw NumericalError("operation '" + std::string(op) + "' produced non-finite values");
  }
  Node n;
  n.op = std::string(op);
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.tape() != this) throw Error("operation '" + n.op + "' mixes tensors from different tapes");
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (record_gradients_ && n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var loss) {
  if (loss.tape() != this) throw Error("backward: loss belongs to another tape");
  const Matrix& lv = nodes_[loss.id()].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + std::to_string(lv.rows()) + "x" +
                     std::to_string(lv.cols()));
  }
  Gradients out;
  if (!nodes_[loss.id()].requires_grad) return out;

  grads_.assign(loss.id() + 1, Matrix());
  grads_[loss.id()] = Matrix::Ones(1, 1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || grads_[i].size() == 0) continue;
    if (!node.param_name.empty()) {
      auto [it, inserted] = out.try_emplace(node.param_name, grads_[i]);
      if (!inserted) it->second += grads_[i];
      continue;
    }
    if (!node.backward) {
      grads_.clear();
      throw Error("backward: operation '" + node.op + "' has no backward rule");
    }
    Matrix upstream = std::move(grads_[i]);
    BackwardContext ctx(*this, i, upstream);
    node.backward(ctx);
  }
  grads_.clear();
  return out;
}

}  // namespace trajgp::ad
