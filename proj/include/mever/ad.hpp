#pragma once

// Minimal tape-based reverse-mode differentiation over dense float64
// matrices. Every model in the library builds its forward pass out of the
// ops declared here, so one gradient check per loss covers the whole stack.

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace mever::ad {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

// A trainable tensor. `grad` accumulates across every tape that reads it
// until zero_grad() is called; it is scratch space, hence mutable, so
// forward passes can take parameters by const reference.
struct Parameter {
  std::string name;
  Mat value;
  mutable Mat grad;

  Parameter() = default;
  Parameter(std::string n, Mat v)
      : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}

  void zero_grad() const { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

class Tape;

class Var {
 public:
  Var() = default;

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat& grad_out)>;

  // A tape built with record_grads = false treats parameters as constants
  // and skips every backward closure.
  explicit Tape(bool record_grads = true) : record_grads_(record_grads) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  // Leaf bound to a parameter; a parameter read twice on one tape maps to
  // the same leaf.
  Var param(const Parameter& p);

  // Seeds d(root)/d(root) = 1 and propagates to every parameter leaf.
  // `root` must be 1x1.
  void backward(const Var& root);

  // Op-author interface.
  Var record(Mat value, bool needs_grad, Backward fn);
  void accumulate(int id, const Mat& grad);
  bool needs_grad(const Var& v) const { return nodes_[v.id_].needs_grad; }
  const Mat& value(int id) const { return nodes_[id].value; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backward backward;
    const Parameter* param = nullptr;
    bool needs_grad = false;
    bool has_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_ids_;
  bool record_grads_ = true;
};

// Arithmetic.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double s);
Var add_row(const Var& a, const Var& row);  // broadcast a 1xN row over every row of a
Var transpose(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }

// Shape.
Var vstack(std::span<const Var> parts);
Var hstack(std::span<const Var> parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var gather_rows(const Var& table, std::span<const int> ids);

// Nonlinearities.
Var sigmoid(const Var& a);
Var gelu(const Var& a);  // tanh approximation
Var log(const Var& a);
Var clamp_min(const Var& a, double floor);  // zero gradient where clamped
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

// Reductions.
Var sum(const Var& a);
Var mean_rows(const Var& a);  // 1 x cols
Var mean(std::span<const Var> parts);

// Constant-value copy with no gradient path.
Var detach(const Var& a);

// Sum over rows r of -max(log_softmax(logits)[r, targets[r]], log(floor)).
Var nll_rows(const Var& logits, std::span<const int> targets, double floor = 1e-12);

}  // namespace mever::ad
