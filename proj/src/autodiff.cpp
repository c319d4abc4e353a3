#include "xsep/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace xsep::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "subtract";
    case Op::kMul: return "multiply";
    case Op::kScalarMul: return "scalar-multiply";
    case Op::kMatMul: return "matmul";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kRelu: return "relu";
    case Op::kSum: return "sum-reduce";
    case Op::kSquare: return "square";
    case Op::kSqrt: return "sqrt";
    case Op::kNorm: return "l2-norm";
    case Op::kDot: return "dot";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kBranchMean: return "branch-mean";
    case Op::kDivScalar: return "div-by-scalar";
    case Op::kOverlapAdd: return "overlap-add";
  }
  return "?";
}

namespace {

[[noreturn]] void shape_error(Op op, const Mat& a, const Mat& b) {
  throw std::invalid_argument(std::string(op_name(op)) + ": shape mismatch (" + shape_str(a) +
                              " vs " + shape_str(b) + ")");
}

void require_scalar(Op op, const Mat& m, const char* what) {
  if (m.rows() != 1 || m.cols() != 1)
    throw std::invalid_argument(std::string(op_name(op)) + ": " + what + " must be 1x1, got " +
                                shape_str(m));
}

bool is_scalar(const Mat& m) { return m.rows() == 1 && m.cols() == 1; }

}  // namespace

const Mat& Var::value() const { return graph->value(*this); }
Mat Var::grad() const { return graph->grad(*this); }

Var Graph::emit(Node n) {
  if (!n.value.allFinite())
    throw NumericError(std::string("op '") + op_name(n.op) + "' produced a non-finite value");
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Graph::input(Mat v, bool requires_grad, std::string name) {
  Node n;
  n.value = std::move(v);
  n.op = Op::kLeaf;
  n.requires_grad = requires_grad;
  n.name = std::move(name);
  return emit(std::move(n));
}

Var Graph::constant(Mat v, std::string name) { return input(std::move(v), false, std::move(name)); }

const Mat& Graph::value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }

Mat Graph::grad(Var v) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Graph::zero_grad() {
  for (Node& n : nodes_) n.grad.resize(0, 0);
}

std::map<std::string, Mat> Graph::gradient_map() const {
  std::map<std::string, Mat> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.op == Op::kLeaf && n.requires_grad && !n.name.empty())
      out[n.name] = grad(Var{const_cast<Graph*>(this), static_cast<std::int32_t>(i)});
  }
  return out;
}

std::int64_t Graph::num_trainable_elements() const {
  std::int64_t total = 0;
  for (const Node& n : nodes_)
    if (n.op == Op::kLeaf && n.requires_grad) total += n.value.size();
  return total;
}

namespace {

Mat& grad_buf(Node& n) {
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

}  // namespace

void Graph::backward(Var root) {
  if (!root.valid() || root.graph != this ||
      static_cast<std::size_t>(root.id) >= nodes_.size())
    throw std::invalid_argument("backward: root does not belong to this graph");
  const Node& r = nodes_[static_cast<std::size_t>(root.id)];
  if (!is_scalar(r.value))
    throw std::invalid_argument("backward: root must be a 1x1 scalar, got " + shape_str(r.value));
  if (!r.requires_grad) return;  // loss independent of every trainable leaf

  // Restrict the sweep to ancestors of the root so unrelated nodes keep
  // all-zero gradients.
  std::vector<char> reachable(nodes_.size(), 0);
  std::vector<std::int32_t> stack{root.id};
  reachable[static_cast<std::size_t>(root.id)] = 1;
  while (!stack.empty()) {
    const std::int32_t id = stack.back();
    stack.pop_back();
    for (std::int32_t in : nodes_[static_cast<std::size_t>(id)].inputs) {
      if (!reachable[static_cast<std::size_t>(in)] &&
          nodes_[static_cast<std::size_t>(in)].requires_grad) {
        reachable[static_cast<std::size_t>(in)] = 1;
        stack.push_back(in);
      }
    }
  }

  grad_buf(nodes_[static_cast<std::size_t>(root.id)])(0, 0) += 1.0;

  for (std::int32_t id = root.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!reachable[static_cast<std::size_t>(id)] || !n.requires_grad || n.grad.size() == 0)
      continue;
    const Mat& g = n.grad;
    auto in = [&](std::size_t k) -> Node& {
      return nodes_[static_cast<std::size_t>(n.inputs[k])];
    };
    auto wants = [&](std::size_t k) { return in(k).requires_grad; };

    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kAdd:
        if (wants(0)) grad_buf(in(0)) += g;
        if (wants(1)) grad_buf(in(1)) += g;
        break;
      case Op::kSub:
        if (wants(0)) grad_buf(in(0)) += g;
        if (wants(1)) grad_buf(in(1)) -= g;
        break;
      case Op::kMul: {
        const Mat& a = in(0).value;
        const Mat& b = in(1).value;
        if (is_scalar(a) && !is_scalar(b)) {
          if (wants(0)) grad_buf(in(0))(0, 0) += (g.array() * b.array()).sum();
          if (wants(1)) grad_buf(in(1)).array() += g.array() * a(0, 0);
        } else if (is_scalar(b) && !is_scalar(a)) {
          if (wants(0)) grad_buf(in(0)).array() += g.array() * b(0, 0);
          if (wants(1)) grad_buf(in(1))(0, 0) += (g.array() * a.array()).sum();
        } else {
          if (wants(0)) grad_buf(in(0)).array() += g.array() * b.array();
          if (wants(1)) grad_buf(in(1)).array() += g.array() * a.array();
        }
        break;
      }
      case Op::kScalarMul:
        if (wants(0)) grad_buf(in(0)) += n.attr * g;
        break;
      case Op::kMatMul:
        if (wants(0)) grad_buf(in(0)).noalias() += g * in(1).value.transpose();
        if (wants(1)) grad_buf(in(1)).noalias() += in(0).value.transpose() * g;
        break;
      case Op::kTanh:
        if (wants(0)) grad_buf(in(0)).array() += g.array() * (1.0 - n.value.array().square());
        break;
      case Op::kSigmoid:
        if (wants(0))
          grad_buf(in(0)).array() += g.array() * n.value.array() * (1.0 - n.value.array());
        break;
      case Op::kRelu:
        if (wants(0))
          grad_buf(in(0)).array() +=
              g.array() * (in(0).value.array() > 0.0).cast<Scalar>();
        break;
      case Op::kSum:
        if (wants(0)) grad_buf(in(0)).array() += g(0, 0);
        break;
      case Op::kSquare:
        if (wants(0)) grad_buf(in(0)).array() += 2.0 * g.array() * in(0).value.array();
        break;
      case Op::kSqrt:
        if (wants(0))
          grad_buf(in(0)).array() += g.array() * 0.5 / n.value.array().max(1e-12);
        break;
      case Op::kNorm:
        if (wants(0))
          grad_buf(in(0)).array() +=
              g(0, 0) * in(0).value.array() / std::max(n.value(0, 0), 1e-12);
        break;
      case Op::kDot:
        if (wants(0)) grad_buf(in(0)) += g(0, 0) * in(1).value;
        if (wants(1)) grad_buf(in(1)) += g(0, 0) * in(0).value;
        break;
      case Op::kConcat: {
        Eigen::Index off = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const Mat& v = in(k).value;
          if (n.axis == 0) {
            if (wants(k)) grad_buf(in(k)) += g.middleRows(off, v.rows());
            off += v.rows();
          } else {
            if (wants(k)) grad_buf(in(k)) += g.middleCols(off, v.cols());
            off += v.cols();
          }
        }
        break;
      }
      case Op::kSlice:
        if (wants(0))
          grad_buf(in(0)).block(n.r0, n.c0, n.value.rows(), n.value.cols()) += g;
        break;
      case Op::kBranchMean: {
        const Scalar inv = 1.0 / static_cast<Scalar>(n.inputs.size());
        for (std::size_t k = 0; k < n.inputs.size(); ++k)
          if (wants(k)) grad_buf(in(k)) += inv * g;
        break;
      }
      case Op::kDivScalar: {
        const Scalar s = in(1).value(0, 0);
        const Scalar d = std::max(s, n.attr);
        if (wants(0)) grad_buf(in(0)) += g / d;
        if (wants(1) && s > n.attr)
          grad_buf(in(1))(0, 0) -= (g.array() * in(0).value.array()).sum() / (d * d);
        break;
      }
      case Op::kOverlapAdd: {
        if (wants(0)) {
          Mat& gi = grad_buf(in(0));
          const Eigen::Index win = in(0).value.cols();
          for (Eigen::Index t = 0; t < in(0).value.rows(); ++t) {
            const Eigen::Index start = t * n.hop;
            const Eigen::Index len = std::min<Eigen::Index>(win, n.out_len - start);
            if (len > 0) gi.row(t).head(len) += g.row(0).segment(start, len);
          }
        }
        break;
      }
    }
  }
}

namespace {

Node make_node(Op op, Mat value, std::initializer_list<Var> inputs) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  for (Var v : inputs) {
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || v.graph->node(v.id).requires_grad;
  }
  return n;
}

Graph& same_graph(Var a, Var b, Op op) {
  if (a.graph != b.graph)
    throw std::invalid_argument(std::string(op_name(op)) + ": operands from different graphs");
  return *a.graph;
}

}  // namespace

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b, Op::kAdd);
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(Op::kAdd, a.value(), b.value());
  return g.emit(make_node(Op::kAdd, a.value() + b.value(), {a, b}));
}

Var sub(Var a, Var b) {
  Graph& g = same_graph(a, b, Op::kSub);
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(Op::kSub, a.value(), b.value());
  return g.emit(make_node(Op::kSub, a.value() - b.value(), {a, b}));
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b, Op::kMul);
  const Mat& av = a.value();
  const Mat& bv = b.value();
  Mat out;
  if (is_scalar(av) && !is_scalar(bv)) {
    out = av(0, 0) * bv;
  } else if (is_scalar(bv) && !is_scalar(av)) {
    out = bv(0, 0) * av;
  } else if (av.rows() == bv.rows() && av.cols() == bv.cols()) {
    out = av.cwiseProduct(bv);
  } else {
    shape_error(Op::kMul, av, bv);
  }
  return g.emit(make_node(Op::kMul, std::move(out), {a, b}));
}

Var scalar_mul(Var a, Scalar c) {
  Node n = make_node(Op::kScalarMul, c * a.value(), {a});
  n.attr = c;
  return a.graph->emit(std::move(n));
}

Var add_scalar(Var a, Scalar c) {
  Var k = a.graph->constant(Mat::Constant(a.rows(), a.cols(), c));
  return add(a, k);
}

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b, Op::kMatMul);
  if (a.cols() != b.rows())
    throw std::invalid_argument(std::string("matmul: inner dimensions mismatch (") +
                                shape_str(a.value()) + " vs " + shape_str(b.value()) + ")");
  return g.emit(make_node(Op::kMatMul, a.value() * b.value(), {a, b}));
}

Var tanh(Var a) {
  return a.graph->emit(make_node(Op::kTanh, a.value().array().tanh().matrix(), {a}));
}

Var sigmoid(Var a) {
  Mat out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return a.graph->emit(make_node(Op::kSigmoid, std::move(out), {a}));
}

Var relu(Var a) {
  return a.graph->emit(make_node(Op::kRelu, a.value().array().max(0.0).matrix(), {a}));
}

Var sum_reduce(Var a) {
  return a.graph->emit(make_node(Op::kSum, Mat::Constant(1, 1, a.value().sum()), {a}));
}

Var square(Var a) {
  return a.graph->emit(make_node(Op::kSquare, a.value().array().square().matrix(), {a}));
}

Var sqrt(Var a) {
  return a.graph->emit(make_node(Op::kSqrt, a.value().array().sqrt().matrix(), {a}));
}

Var l2_norm(Var a) {
  return a.graph->emit(make_node(Op::kNorm, Mat::Constant(1, 1, a.value().norm()), {a}));
}

Var dot(Var a, Var b) {
  Graph& g = same_graph(a, b, Op::kDot);
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(Op::kDot, a.value(), b.value());
  return g.emit(
      make_node(Op::kDot, Mat::Constant(1, 1, a.value().cwiseProduct(b.value()).sum()), {a, b}));
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: empty input list");
  if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
  Graph& g = *parts[0].graph;
  Eigen::Index rows = parts[0].rows(), cols = parts[0].cols();
  for (std::size_t k = 1; k < parts.size(); ++k) {
    if (parts[k].graph != &g)
      throw std::invalid_argument("concat: operands from different graphs");
    if (axis == 0) {
      if (parts[k].cols() != cols) shape_error(Op::kConcat, parts[0].value(), parts[k].value());
      rows += parts[k].rows();
    } else {
      if (parts[k].rows() != rows) shape_error(Op::kConcat, parts[0].value(), parts[k].value());
      cols += parts[k].cols();
    }
  }
  Mat out(rows, cols);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    if (axis == 0) {
      out.middleRows(off, p.rows()) = p.value();
      off += p.rows();
    } else {
      out.middleCols(off, p.cols()) = p.value();
      off += p.cols();
    }
  }
  Node n;
  n.op = Op::kConcat;
  n.value = std::move(out);
  n.axis = axis;
  for (const Var& p : parts) {
    n.inputs.push_back(p.id);
    n.requires_grad = n.requires_grad || g.node(p.id).requires_grad;
  }
  return g.emit(std::move(n));
}

Var slice(Var a, int r0, int c0, int rows, int cols) {
  if (r0 < 0 || c0 < 0 || rows <= 0 || cols <= 0 || r0 + rows > a.rows() ||
      c0 + cols > a.cols())
    throw std::invalid_argument("slice: block (" + std::to_string(r0) + "," + std::to_string(c0) +
                                "," + std::to_string(rows) + "," + std::to_string(cols) +
                                ") out of range for " + shape_str(a.value()));
  Node n = make_node(Op::kSlice, a.value().block(r0, c0, rows, cols), {a});
  n.r0 = r0;
  n.c0 = c0;
  return a.graph->emit(std::move(n));
}

Var branch_mean(std::span<const Var> branches) {
  if (branches.empty()) throw std::invalid_argument("branch-mean: empty branch list");
  Graph& g = *branches[0].graph;
  Mat acc = branches[0].value();
  for (std::size_t k = 1; k < branches.size(); ++k) {
    if (branches[k].graph != &g)
      throw std::invalid_argument("branch-mean: operands from different graphs");
    if (branches[k].rows() != acc.rows() || branches[k].cols() != acc.cols())
      shape_error(Op::kBranchMean, branches[0].value(), branches[k].value());
    acc += branches[k].value();
  }
  acc /= static_cast<Scalar>(branches.size());
  Node n;
  n.op = Op::kBranchMean;
  n.value = std::move(acc);
  for (const Var& b : branches) {
    n.inputs.push_back(b.id);
    n.requires_grad = n.requires_grad || g.node(b.id).requires_grad;
  }
  return g.emit(std::move(n));
}

Var div_by_scalar(Var a, Var denom, Scalar clamp) {
  Graph& g = same_graph(a, denom, Op::kDivScalar);
  require_scalar(Op::kDivScalar, denom.value(), "denominator");
  const Scalar d = std::max(denom.value()(0, 0), clamp);
  Node n = make_node(Op::kDivScalar, a.value() / d, {a, denom});
  n.attr = clamp;
  return g.emit(std::move(n));
}

Var overlap_add(Var frames, int hop, int out_len) {
  if (hop <= 0) throw std::invalid_argument("overlap-add: hop must be positive");
  if (out_len <= 0) throw std::invalid_argument("overlap-add: out_len must be positive");
  const Mat& f = frames.value();
  Mat out = Mat::Zero(1, out_len);
  const Eigen::Index win = f.cols();
  for (Eigen::Index t = 0; t < f.rows(); ++t) {
    const Eigen::Index start = t * hop;
    const Eigen::Index len = std::min<Eigen::Index>(win, out_len - start);
    if (len > 0) out.row(0).segment(start, len) += f.row(t).head(len);
  }
  Node n = make_node(Op::kOverlapAdd, std::move(out), {frames});
  n.hop = hop;
  n.out_len = out_len;
  return frames.graph->emit(std::move(n));
}

std::string FdReport::summary() const {
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "%s max_rel_err=%.3e at input %d (%ld,%ld): analytic=%.6e numeric=%.6e",
                pass ? "PASS" : "FAIL", max_rel_err, worst_input,
                static_cast<long>(worst_row), static_cast<long>(worst_col), worst_analytic,
                worst_numeric);
  return buf;
}

FdReport finite_difference_check(const Program& program, const std::vector<Mat>& inputs,
                                 Scalar step, Scalar tolerance) {
  if (step <= 0.0) throw std::invalid_argument("finite_difference_check: step must be positive");

  Graph g;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Mat& m : inputs) vars.push_back(g.input(m, true));
  Var out = program(g, vars);
  if (out.rows() != 1 || out.cols() != 1)
    throw std::invalid_argument("finite_difference_check: program output must be scalar");
  g.backward(out);
  std::vector<Mat> analytic;
  analytic.reserve(vars.size());
  for (Var v : vars) analytic.push_back(v.grad());

  auto eval = [&](const std::vector<Mat>& xs) {
    Graph h;
    std::vector<Var> vs;
    vs.reserve(xs.size());
    for (const Mat& m : xs) vs.push_back(h.constant(m));
    return program(h, vs).value()(0, 0);
  };

  FdReport rep;
  std::vector<Mat> work = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (Eigen::Index r = 0; r < inputs[i].rows(); ++r) {
      for (Eigen::Index c = 0; c < inputs[i].cols(); ++c) {
        const Scalar orig = work[i](r, c);
        work[i](r, c) = orig + step;
        const Scalar fp = eval(work);
        work[i](r, c) = orig - step;
        const Scalar fm = eval(work);
        work[i](r, c) = orig;
        const Scalar numeric = (fp - fm) / (2.0 * step);
        const Scalar a = analytic[i](r, c);
        const Scalar denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        const Scalar rel = std::abs(a - numeric) / denom;
        if (rel > rep.max_rel_err) {
          rep.max_rel_err = rel;
          rep.worst_input = static_cast<int>(i);
          rep.worst_row = r;
          rep.worst_col = c;
          rep.worst_analytic = a;
          rep.worst_numeric = numeric;
        }
      }
    }
  }
  rep.pass = rep.max_rel_err <= tolerance;
  return rep;
}

}  // namespace xsep::ad
