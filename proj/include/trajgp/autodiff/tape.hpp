#pragma once

#include "trajgp/common.hpp"

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace trajgp::ad {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 tensor.
  double item() const;

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Trainable-leaf name -> gradient with the leaf's shape.
using Gradients = std::map<std::string, Matrix>;

/// View handed to a node's backward rule.
class BackwardContext {
 public:
  /// Upstream gradient dLoss/dOutput.
  const Matrix& grad() const { return *upstream_; }
  const Matrix& output() const;
  const Matrix& input(std::size_t k) const;
  /// True when input k leads to a trainable leaf and needs a gradient.
  bool wants(std::size_t k) const;

  template <typename Derived>
  void accumulate(std::size_t k, const Eigen::MatrixBase<Derived>& g) {
    Matrix& slot = slot_for(k, g.rows(), g.cols());
    if (slot.size() == 0) {
      slot = g;
    } else {
      slot += g;
    }
  }

 private:
  friend class Tape;
  BackwardContext(Tape& tape, std::size_t node, const Matrix& upstream)
      : tape_(tape), node_(node), upstream_(&upstream) {}
  Matrix& slot_for(std::size_t k, Eigen::Index rows, Eigen::Index cols);

  Tape& tape_;
  std::size_t node_;
  const Matrix* upstream_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Define-by-run reverse-mode tape. Nodes are appended in evaluation order, so
/// append order is a topological order and the backward sweep simply walks it
/// in reverse. A tape is meant to be rebuilt for every optimization step.
class Tape {
 public:
  /// With record_gradients == false the tape only evaluates values; no
  /// backward rules are kept and backward() returns no gradients.
  explicit Tape(bool record_gradients = true) : record_gradients_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var constant(double value);
  /// Trainable leaf. Gradients are reported under `name`; registering the
  /// same name twice sums the contributions.
  Var parameter(const std::string& name, Matrix value);

  /// Appends an operation node. The value must be finite.
  Var record(std::string_view op, Matrix value, std::vector<Var> inputs, BackwardFn backward);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool records_gradients() const noexcept { return record_gradients_; }

  /// Reverse sweep from a scalar loss. Returns gradients of every trainable
  /// leaf the loss depends on; a loss that does not depend on any trainable
  /// leaf yields an empty map.
  Gradients backward(Var loss);

 private:
  friend class BackwardContext;

  struct Node {
    std::string op;
    Matrix value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::string param_name;  // non-empty for trainable leaves
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;
  std::vector<Matrix> grads_;  // live only during backward()
  bool record_gradients_;
};

}  // namespace trajgp::ad
