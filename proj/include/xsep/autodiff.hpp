#pragma once

#include "xsep/common.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

// Reverse-mode autodiff over dense 2-D arrays (tape style). Scalars are 1x1,
// time signals are 1xN rows, spectrogram grids are frames x bins. Every op is
// eager: the forward value is computed at construction and checked for
// non-finite entries, so "the first offending op" is always known. No implicit
// broadcasting except a 1x1 operand in multiply; everything else must match
// shapes exactly.

namespace xsep::ad {

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScalarMul,
  kMatMul,
  kTanh,
  kSigmoid,
  kRelu,
  kSum,
  kSquare,
  kSqrt,
  kNorm,
  kDot,
  kConcat,
  kSlice,
  kBranchMean,
  kDivScalar,
  kOverlapAdd,
};

const char* op_name(Op op);

class Graph;

// Cheap handle into a Graph's tape.
struct Var {
  Graph* graph = nullptr;
  std::int32_t id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  const Mat& value() const;
  Mat grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

struct Node {
  Mat value;
  Mat grad;  // empty until backward touches this node
  std::vector<std::int32_t> inputs;
  Op op = Op::kLeaf;
  bool requires_grad = false;
  Scalar attr = 0.0;                      // kScalarMul factor, kDivScalar clamp
  std::int32_t r0 = 0, c0 = 0;            // kSlice origin
  std::int32_t axis = 0;                  // kConcat axis (0 rows, 1 cols)
  std::int32_t hop = 0, out_len = 0;      // kOverlapAdd
  std::string name;                       // optional, leaves only
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Mat v, bool requires_grad, std::string name = {});
  Var constant(Mat v, std::string name = {});
  Var constant(Scalar v) { return constant(Mat::Constant(1, 1, v)); }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::int32_t id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  const Mat& value(Var v) const;
  // Accumulated d(root)/d(v); zeros if backward never reached v.
  Mat grad(Var v) const;

  void zero_grad();

  // Reverse sweep from a scalar root. Gradients accumulate additively across
  // fan-out; nodes unreachable from the root keep all-zero gradients.
  void backward(Var root);

  // name -> gradient for every named leaf with requires_grad.
  std::map<std::string, Mat> gradient_map() const;

  // Total number of scalar entries in requires_grad leaves.
  std::int64_t num_trainable_elements() const;

  Var emit(Node n);

 private:
  std::vector<Node> nodes_;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
// Elementwise; one operand may be 1x1 (scalar-times-tensor broadcast).
Var mul(Var a, Var b);
Var scalar_mul(Var a, Scalar c);
Var add_scalar(Var a, Scalar c);
Var matmul(Var a, Var b);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var sum_reduce(Var a);
Var square(Var a);
Var sqrt(Var a);
Var l2_norm(Var a);
Var dot(Var a, Var b);
Var concat(std::span<const Var> parts, int axis);
Var slice(Var a, int r0, int c0, int rows, int cols);
// Mean across J same-shape branches; routes upstream gradient as g/J to each.
Var branch_mean(std::span<const Var> branches);
// a / max(denom, clamp); denom must be 1x1. Denominators at or below the
// clamp are treated as the constant clamp (zero gradient to denom).
Var div_by_scalar(Var a, Var denom, Scalar clamp = 1e-12);
// Rows of `frames` are laid down at t*hop and summed; output is 1 x out_len
// (contributions beyond out_len are dropped, uncovered samples stay zero).
Var overlap_add(Var frames, int hop, int out_len);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Scalar c, Var a) { return scalar_mul(a, c); }
inline Var operator*(Var a, Scalar c) { return scalar_mul(a, c); }

// A differentiable scalar-valued function of a fixed list of input tensors.
// Rebuildable from scratch, which is what the finite-difference check needs.
using Program = std::function<Var(Graph&, const std::vector<Var>&)>;

struct FdReport {
  Scalar max_rel_err = 0.0;
  bool pass = true;
  int worst_input = -1;
  Eigen::Index worst_row = -1, worst_col = -1;
  Scalar worst_analytic = 0.0, worst_numeric = 0.0;
  std::string summary() const;
};

// Central-difference check of backward() against (f(x+h)-f(x-h))/2h for every
// element of every input. Relative error uses a max(|analytic|, |numeric|,
// 1e-8) denominator. A failing check is a report, not an error.
FdReport finite_difference_check(const Program& program, const std::vector<Mat>& inputs,
                                 Scalar step, Scalar tolerance);

}  // namespace xsep::ad
