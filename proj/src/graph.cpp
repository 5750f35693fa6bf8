#include "seqbias/graph.hpp"

#include <cmath>
#include <limits>

namespace seqbias::tensor {

const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kParam: return "param";
    case Op::kConst: return "const";
    case Op::kMatMul: return "matmul";
    case Op::kScaledDot: return "scaled_dot";
    case Op::kAdd: return "add";
    case Op::kMul: return "mul";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kRelu: return "relu";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSoftmax: return "softmax";
    case Op::kLogSoftmax: return "log_softmax";
    case Op::kConcatCols: return "concat_cols";
    case Op::kConcatRows: return "concat_rows";
    case Op::kSliceCols: return "slice_cols";
    case Op::kSliceRows: return "slice_rows";
    case Op::kGatherRows: return "gather_rows";
    case Op::kConv1d: return "conv1d";
    case Op::kDropout: return "dropout";
    case Op::kLayerNorm: return "layer_norm";
    case Op::kPickNll: return "pick_nll";
    case Op::kSum: return "sum";
    case Op::kScale: return "scale";
    case Op::kTranspose: return "transpose";
    case Op::kLstmSeq: return "lstm_seq";
  }
  return "?";
}

namespace {
std::string node_desc(int id, Op op) {
  return "node #" + std::to_string(id) + " (" + std::string(op_name(op)) + ")";
}
}  // namespace

int Graph::push(Node n, Eigen::Index r, Eigen::Index c) {
  for (int i : n.in) {
    demand(i >= 0 && i < static_cast<int>(nodes_.size()),
           "graph: input id out of range for " + node_desc(static_cast<int>(nodes_.size()), n.op));
    if (nodes_[i].needs_grad) n.needs_grad = true;
  }
  if (n.op == Op::kParam) n.needs_grad = true;
  nodes_.push_back(std::move(n));
  shape_.emplace_back(r, c);
  evaluated_ = false;
  return static_cast<int>(nodes_.size()) - 1;
}

void Graph::check(bool cond, int a, int b, const std::string& what) const {
  if (cond) return;
  std::string msg = "shape mismatch: " + what;
  if (a >= 0)
    msg += " | lhs " + node_desc(a, nodes_[a].op) + " is " + std::to_string(shape_[a].first) +
           "x" + std::to_string(shape_[a].second);
  if (b >= 0)
    msg += " | rhs " + node_desc(b, nodes_[b].op) + " is " + std::to_string(shape_[b].first) +
           "x" + std::to_string(shape_[b].second);
  throw Error(msg);
}

int Graph::input(Eigen::Index rows, Eigen::Index cols) {
  demand(rows > 0 && cols > 0, "graph: input extents must be positive");
  Node n;
  n.op = Op::kInput;
  return push(std::move(n), rows, cols);
}

int Graph::param(Param& p) {
  p.a.ensure_grad();
  Node n;
  n.op = Op::kParam;
  n.par = &p;
  return push(std::move(n), p.a.value.rows(), p.a.value.cols());
}

int Graph::constant(Mat m) {
  Node n;
  n.op = Op::kConst;
  const Eigen::Index r = m.rows(), c = m.cols();
  n.val = std::move(m);
  return push(std::move(n), r, c);
}

int Graph::matmul(int a, int b) {
  check(shape_[a].second == shape_[b].first, a, b, "matmul inner extents");
  Node n;
  n.op = Op::kMatMul;
  n.in = {a, b};
  return push(std::move(n), shape_[a].first, shape_[b].second);
}

int Graph::scaled_dot(int q, int k) {
  check(shape_[q].second == shape_[k].second, q, k, "scaled_dot feature extents");
  Node n;
  n.op = Op::kScaledDot;
  n.in = {q, k};
  n.d0 = 1.0 / std::sqrt(static_cast<double>(shape_[k].second));
  return push(std::move(n), shape_[q].first, shape_[k].first);
}

int Graph::add(int a, int b) {
  const bool same = shape_[a] == shape_[b];
  const bool bias = shape_[b].first == 1 && shape_[b].second == shape_[a].second;
  check(same || bias, a, b, "add operands");
  Node n;
  n.op = Op::kAdd;
  n.in = {a, b};
  n.i0 = bias && !same ? 1 : 0;
  return push(std::move(n), shape_[a].first, shape_[a].second);
}

int Graph::mul(int a, int b) {
  check(shape_[a] == shape_[b], a, b, "mul operands");
  Node n;
  n.op = Op::kMul;
  n.in = {a, b};
  return push(std::move(n), shape_[a].first, shape_[a].second);
}

#define SEQBIAS_UNARY(fn, kind)                    \
  int Graph::fn(int a) {                           \
    Node n;                                        \
    n.op = kind;                                   \
    n.in = {a};                                    \
    return push(std::move(n), shape_[a].first, shape_[a].second); \
  }

SEQBIAS_UNARY(tanh_, Op::kTanh)
SEQBIAS_UNARY(sigmoid, Op::kSigmoid)
SEQBIAS_UNARY(relu, Op::kRelu)
SEQBIAS_UNARY(exp_, Op::kExp)
SEQBIAS_UNARY(log_, Op::kLog)
SEQBIAS_UNARY(softmax, Op::kSoftmax)
SEQBIAS_UNARY(log_softmax, Op::kLogSoftmax)
#undef SEQBIAS_UNARY

int Graph::concat_cols(int a, int b) {
  check(shape_[a].first == shape_[b].first, a, b, "concat_cols row extents");
  Node n;
  n.op = Op::kConcatCols;
  n.in = {a, b};
  return push(std::move(n), shape_[a].first, shape_[a].second + shape_[b].second);
}

int Graph::concat_rows(int a, int b) {
  check(shape_[a].second == shape_[b].second, a, b, "concat_rows column extents");
  Node n;
  n.op = Op::kConcatRows;
  n.in = {a, b};
  return push(std::move(n), shape_[a].first + shape_[b].first, shape_[a].second);
}

int Graph::slice_cols(int a, int lo, int len) {
  check(lo >= 0 && len > 0 && lo + len <= shape_[a].second, a, -1, "slice_cols range");
  Node n;
  n.op = Op::kSliceCols;
  n.in = {a};
  n.i0 = lo;
  n.i1 = len;
  return push(std::move(n), shape_[a].first, len);
}

int Graph::slice_rows(int a, int lo, int len) {
  check(lo >= 0 && len > 0 && lo + len <= shape_[a].first, a, -1, "slice_rows range");
  Node n;
  n.op = Op::kSliceRows;
  n.in = {a};
  n.i0 = lo;
  n.i1 = len;
  return push(std::move(n), len, shape_[a].second);
}

int Graph::gather_rows(int table, std::vector<int> rows) {
  demand(!rows.empty(), "gather_rows: empty index list");
  for (int r : rows)
    check(r >= 0 && r < shape_[table].first, table, -1, "gather_rows index");
  Node n;
  n.op = Op::kGatherRows;
  n.in = {table};
  n.idx = std::move(rows);
  const Eigen::Index out_rows = static_cast<Eigen::Index>(n.idx.size());
  return push(std::move(n), out_rows, shape_[table].second);
}

int Graph::conv1d(int x, int w, int bias, int kernel, int pad_left, int pad_right) {
  demand(kernel >= 1 && pad_left >= 0 && pad_right >= 0, "conv1d: bad kernel/padding");
  const Eigen::Index cin = shape_[x].second;
  check(shape_[w].first == kernel * cin, x, w, "conv1d weight rows vs kernel*channels");
  check(shape_[bias].first == 1 && shape_[bias].second == shape_[w].second, w, bias,
        "conv1d bias");
  const Eigen::Index t_out = shape_[x].first + pad_left + pad_right - kernel + 1;
  check(t_out >= 1, x, w, "conv1d output length");
  Node n;
  n.op = Op::kConv1d;
  n.in = {x, w, bias};
  n.i0 = kernel;
  n.i1 = pad_left;
  n.i2 = pad_right;
  return push(std::move(n), t_out, shape_[w].second);
}

int Graph::dropout(int a, double p) {
  demand(p >= 0.0 && p < 1.0, "dropout: p must lie in [0,1)");
  Node n;
  n.op = Op::kDropout;
  n.in = {a};
  n.d0 = p;
  n.stochastic = p > 0.0;
  return push(std::move(n), shape_[a].first, shape_[a].second);
}

int Graph::layer_norm(int a, int gain, int bias, double eps) {
  check(shape_[gain].first == 1 && shape_[gain].second == shape_[a].second, a, gain,
        "layer_norm gain");
  check(shape_[bias].first == 1 && shape_[bias].second == shape_[a].second, a, bias,
        "layer_norm bias");
  Node n;
  n.op = Op::kLayerNorm;
  n.in = {a, gain, bias};
  n.d0 = eps;
  return push(std::move(n), shape_[a].first, shape_[a].second);
}

int Graph::pick_nll(int logprobs, std::vector<int> targets) {
  demand(static_cast<Eigen::Index>(targets.size()) == shape_[logprobs].first,
         "pick_nll: one target per row required");
  for (int t : targets)
    check(t >= 0 && t < shape_[logprobs].second, logprobs, -1, "pick_nll target id");
  Node n;
  n.op = Op::kPickNll;
  n.in = {logprobs};
  n.idx = std::move(targets);
  return push(std::move(n), 1, 1);
}

int Graph::sum(int a) {
  Node n;
  n.op = Op::kSum;
  n.in = {a};
  return push(std::move(n), 1, 1);
}

int Graph::scale(int a, double f) {
  Node n;
  n.op = Op::kScale;
  n.in = {a};
  n.d0 = f;
  return push(std::move(n), shape_[a].first, shape_[a].second);
}

int Graph::transpose(int a) {
  Node n;
  n.op = Op::kTranspose;
  n.in = {a};
  return push(std::move(n), shape_[a].second, shape_[a].first);
}

int Graph::lstm_seq(int x, int h0, int c0, int w, int b) {
  const Eigen::Index in_dim = shape_[x].second;
  const Eigen::Index hidden = shape_[h0].second;
  check(shape_[c0].second == hidden && shape_[c0].first == 1 && shape_[h0].first == 1,
        h0, c0, "lstm_seq state shapes");
  check(shape_[w].first == in_dim + hidden && shape_[w].second == 4 * hidden, x, w,
        "lstm_seq gate weights must be (in+hidden) x 4*hidden");
  check(shape_[b].first == 1 && shape_[b].second == 4 * hidden, w, b, "lstm_seq gate bias");
  Node n;
  n.op = Op::kLstmSeq;
  n.in = {x, h0, c0, w, b};
  n.i0 = static_cast<int>(shape_[x].first);  // T
  return push(std::move(n), 2 * shape_[x].first, hidden);
}

void Graph::bind(int input_id, Mat v) {
  demand(input_id >= 0 && input_id < static_cast<int>(nodes_.size()) &&
             nodes_[input_id].op == Op::kInput,
         "bind: not an input node");
  demand(v.rows() == shape_[input_id].first && v.cols() == shape_[input_id].second,
         "bind: value shape differs from declared input shape at " +
             node_desc(input_id, Op::kInput));
  nodes_[input_id].val = std::move(v);
  evaluated_ = false;
}

const Mat& Graph::in_val(const Node& n, int slot) const {
  const Node& src = nodes_[n.in[slot]];
  return src.op == Op::kParam ? src.par->a.value : src.val;
}

const Mat& Graph::value(int id) const {
  demand(id >= 0 && id < static_cast<int>(nodes_.size()), "value: bad node id");
  const Node& n = nodes_[id];
  if (n.op == Op::kParam) return n.par->a.value;
  demand(evaluated_ || n.op == Op::kConst || n.op == Op::kInput,
         "value: graph not evaluated");
  return n.val;
}

const Mat& Graph::grad(int id) const {
  demand(id >= 0 && id < static_cast<int>(nodes_.size()), "grad: bad node id");
  const Node& n = nodes_[id];
  if (n.op == Op::kParam) return n.par->a.grad;
  return n.grad;
}

bool Graph::has_stochastic_nodes() const {
  for (const Node& n : nodes_)
    if (n.stochastic) return true;
  return false;
}

void Graph::forward(bool train, Rng* rng) {
  for (int id = 0; id < static_cast<int>(nodes_.size()); ++id)
    forward_node(id, train, rng);
  evaluated_ = true;
}

void Graph::forward_node(int id, bool train, Rng* rng) {
  Node& n = nodes_[id];
  switch (n.op) {
    case Op::kInput:
      demand(n.val.rows() == shape_[id].first && n.val.cols() == shape_[id].second,
             "forward: unbound input " + node_desc(id, n.op));
      break;
    case Op::kParam:
    case Op::kConst:
      break;
    case Op::kMatMul:
      n.val.noalias() = in_val(n, 0) * in_val(n, 1);
      break;
    case Op::kScaledDot:
      n.val.noalias() = in_val(n, 0) * in_val(n, 1).transpose();
      n.val *= n.d0;
      break;
    case Op::kAdd:
      if (n.i0)
        n.val = in_val(n, 0).rowwise() + in_val(n, 1).row(0);
      else
        n.val = in_val(n, 0) + in_val(n, 1);
      break;
    case Op::kMul:
      n.val = in_val(n, 0).cwiseProduct(in_val(n, 1));
      break;
    case Op::kTanh:
      n.val = in_val(n, 0).array().tanh().matrix();
      break;
    case Op::kSigmoid:
      n.val = (1.0 / (1.0 + (-in_val(n, 0).array()).exp())).matrix();
      break;
    case Op::kRelu:
      n.val = in_val(n, 0).cwiseMax(0.0);
      break;
    case Op::kExp:
      n.val = in_val(n, 0).array().exp().matrix();
      break;
    case Op::kLog:
      n.val = in_val(n, 0).array().log().matrix();
      break;
    case Op::kSoftmax: {
      const Mat& a = in_val(n, 0);
      n.val = (a.colwise() - a.rowwise().maxCoeff()).array().exp().matrix();
      const Eigen::VectorXd sums = n.val.rowwise().sum();
      n.val.array().colwise() /= sums.array();
      break;
    }
    case Op::kLogSoftmax: {
      const Mat& a = in_val(n, 0);
      n.val = a.colwise() - a.rowwise().maxCoeff();
      const Eigen::ArrayXd lse = n.val.array().exp().rowwise().sum().log();
      n.val.array().colwise() -= lse;
      break;
    }
    case Op::kConcatCols: {
      const Mat& a = in_val(n, 0);
      const Mat& b = in_val(n, 1);
      n.val.resize(a.rows(), a.cols() + b.cols());
      n.val.leftCols(a.cols()) = a;
      n.val.rightCols(b.cols()) = b;
      break;
    }
    case Op::kConcatRows: {
      const Mat& a = in_val(n, 0);
      const Mat& b = in_val(n, 1);
      n.val.resize(a.rows() + b.rows(), a.cols());
      n.val.topRows(a.rows()) = a;
      n.val.bottomRows(b.rows()) = b;
      break;
    }
    case Op::kSliceCols:
      n.val = in_val(n, 0).middleCols(n.i0, n.i1);
      break;
    case Op::kSliceRows:
      n.val = in_val(n, 0).middleRows(n.i0, n.i1);
      break;
    case Op::kGatherRows: {
      const Mat& t = in_val(n, 0);
      n.val.resize(static_cast<Eigen::Index>(n.idx.size()), t.cols());
      for (std::size_t r = 0; r < n.idx.size(); ++r)
        n.val.row(static_cast<Eigen::Index>(r)) = t.row(n.idx[r]);
      break;
    }
    case Op::kConv1d: {
      const Mat& x = in_val(n, 0);
      const Eigen::Index cin = x.cols();
      const Eigen::Index t_out = shape_[id].first;
      n.aux.resize(t_out, n.i0 * cin);  // im2col, kept for backward
      n.aux.setZero();
      for (Eigen::Index t = 0; t < t_out; ++t)
        for (int j = 0; j < n.i0; ++j) {
          const Eigen::Index src = t - n.i1 + j;
          if (src >= 0 && src < x.rows()) n.aux.block(t, j * cin, 1, cin) = x.row(src);
        }
      n.val.noalias() = n.aux * in_val(n, 1);
      n.val.rowwise() += in_val(n, 2).row(0);
      break;
    }
    case Op::kDropout: {
      const Mat& a = in_val(n, 0);
      if (!train || n.d0 == 0.0) {
        n.val = a;
        n.aux.resize(0, 0);
      } else {
        demand(rng != nullptr, "forward: dropout in train mode needs an rng");
        const double keep_scale = 1.0 / (1.0 - n.d0);
        n.aux.resize(a.rows(), a.cols());
        for (Eigen::Index r = 0; r < a.rows(); ++r)
          for (Eigen::Index c = 0; c < a.cols(); ++c)
            n.aux(r, c) = rng->bernoulli(n.d0) ? 0.0 : keep_scale;
        n.val = a.cwiseProduct(n.aux);
      }
      break;
    }
    case Op::kLayerNorm: {
      const Mat& a = in_val(n, 0);
      const Eigen::Index cols = a.cols();
      n.aux.resize(a.rows(), cols);    // normalized rows
      n.aux2.resize(a.rows(), 1);      // 1/sigma per row
      for (Eigen::Index r = 0; r < a.rows(); ++r) {
        const double mean = a.row(r).mean();
        const double var = (a.row(r).array() - mean).square().mean();
        const double inv_sigma = 1.0 / std::sqrt(var + n.d0);
        n.aux.row(r) = ((a.row(r).array() - mean) * inv_sigma).matrix();
        n.aux2(r, 0) = inv_sigma;
      }
      n.val = (n.aux.array().rowwise() * in_val(n, 1).row(0).array()).matrix();
      n.val.rowwise() += in_val(n, 2).row(0);
      break;
    }
    case Op::kPickNll: {
      const Mat& lp = in_val(n, 0);
      double total = 0.0;
      for (std::size_t r = 0; r < n.idx.size(); ++r)
        total -= lp(static_cast<Eigen::Index>(r), n.idx[r]);
      n.val.resize(1, 1);
      n.val(0, 0) = total;
      break;
    }
    case Op::kSum:
      n.val.resize(1, 1);
      n.val(0, 0) = in_val(n, 0).sum();
      break;
    case Op::kScale:
      n.val = in_val(n, 0) * n.d0;
      break;
    case Op::kTranspose:
      n.val = in_val(n, 0).transpose();
      break;
    case Op::kLstmSeq: {
      const Mat& x = in_val(n, 0);
      const Mat& w = in_val(n, 3);
      const Mat& b = in_val(n, 4);
      const Eigen::Index T = x.rows();
      const Eigen::Index hidden = shape_[id].second;
      const Eigen::Index in_dim = x.cols();
      n.val.resize(2 * T, hidden);
      n.aux.resize(T, 4 * hidden);   // activated gates i,f,g,o
      n.aux2.resize(T, hidden);      // tanh(c_t)
      Mat xt(1, in_dim + hidden), pre(1, 4 * hidden);
      for (Eigen::Index t = 0; t < T; ++t) {
        xt.leftCols(in_dim) = x.row(t);
        if (t == 0)
          xt.rightCols(hidden) = in_val(n, 1).row(0);
        else
          xt.rightCols(hidden) = n.val.row(t - 1);
        pre.noalias() = xt * w;
        pre += b;
        auto gates = n.aux.row(t);
        gates.segment(0, hidden) =
            (1.0 / (1.0 + (-pre.row(0).segment(0, hidden).array()).exp())).matrix();
        gates.segment(hidden, hidden) =
            (1.0 / (1.0 + (-pre.row(0).segment(hidden, hidden).array()).exp())).matrix();
        gates.segment(2 * hidden, hidden) =
            pre.row(0).segment(2 * hidden, hidden).array().tanh().matrix();
        gates.segment(3 * hidden, hidden) =
            (1.0 / (1.0 + (-pre.row(0).segment(3 * hidden, hidden).array()).exp())).matrix();
        Eigen::RowVectorXd c_prev =
            t == 0 ? Eigen::RowVectorXd(in_val(n, 2).row(0))
                   : Eigen::RowVectorXd(n.val.row(T + t - 1));
        n.val.row(T + t) = (gates.segment(hidden, hidden).array() * c_prev.array() +
                            gates.segment(0, hidden).array() *
                                gates.segment(2 * hidden, hidden).array())
                               .matrix();
        n.aux2.row(t) = n.val.row(T + t).array().tanh().matrix();
        n.val.row(t) =
            (gates.segment(3 * hidden, hidden).array() * n.aux2.row(t).array()).matrix();
      }
      break;
    }
  }
}

Mat& Graph::grad_slot(int id) {
  Node& n = nodes_[id];
  Mat& g = n.op == Op::kParam ? n.par->a.grad : n.grad;
  if (g.rows() != shape_[id].first || g.cols() != shape_[id].second)
    g = Mat::Zero(shape_[id].first, shape_[id].second);
  return g;
}

void Graph::backward(int loss_id) {
  demand(evaluated_, "backward: run forward first");
  demand(loss_id >= 0 && loss_id < static_cast<int>(nodes_.size()), "backward: bad loss id");
  demand(shape_[loss_id].first == 1 && shape_[loss_id].second == 1,
         "backward: loss must be scalar, got " + node_desc(loss_id, nodes_[loss_id].op));
  // Node-local grads restart at zero; Param grads accumulate across calls.
  for (int id = 0; id <= loss_id; ++id) {
    Node& n = nodes_[id];
    if (n.op == Op::kParam || !n.needs_grad) continue;
    if (n.grad.rows() == shape_[id].first && n.grad.cols() == shape_[id].second)
      n.grad.setZero();
    else
      n.grad = Mat::Zero(shape_[id].first, shape_[id].second);
  }
  grad_slot(loss_id)(0, 0) += 1.0;
  for (int id = loss_id; id >= 0; --id) {
    const Node& n = nodes_[id];
    if (!n.needs_grad || n.op == Op::kParam || n.op == Op::kInput || n.op == Op::kConst)
      continue;
    backward_node(id);
  }
}

void Graph::backward_node(int id) {
  Node& n = nodes_[id];
  const Mat& gy = n.grad;
  auto want = [&](int slot) { return nodes_[n.in[slot]].needs_grad; };
  switch (n.op) {
    case Op::kInput:
    case Op::kParam:
    case Op::kConst:
      break;
    case Op::kMatMul:
      if (want(0)) grad_slot(n.in[0]).noalias() += gy * in_val(n, 1).transpose();
      if (want(1)) grad_slot(n.in[1]).noalias() += in_val(n, 0).transpose() * gy;
      break;
    case Op::kScaledDot:
      if (want(0)) grad_slot(n.in[0]).noalias() += n.d0 * (gy * in_val(n, 1));
      if (want(1)) grad_slot(n.in[1]).noalias() += n.d0 * (gy.transpose() * in_val(n, 0));
      break;
    case Op::kAdd:
      if (want(0)) grad_slot(n.in[0]) += gy;
      if (want(1)) {
        if (n.i0)
          grad_slot(n.in[1]).row(0) += gy.colwise().sum();
        else
          grad_slot(n.in[1]) += gy;
      }
      break;
    case Op::kMul:
      if (want(0)) grad_slot(n.in[0]) += gy.cwiseProduct(in_val(n, 1));
      if (want(1)) grad_slot(n.in[1]) += gy.cwiseProduct(in_val(n, 0));
      break;
    case Op::kTanh:
      if (want(0))
        grad_slot(n.in[0]).array() += gy.array() * (1.0 - n.val.array().square());
      break;
    case Op::kSigmoid:
      if (want(0))
        grad_slot(n.in[0]).array() += gy.array() * n.val.array() * (1.0 - n.val.array());
      break;
    case Op::kRelu:
      if (want(0))
        grad_slot(n.in[0]).array() +=
            gy.array() * (in_val(n, 0).array() > 0.0).cast<double>();
      break;
    case Op::kExp:
      if (want(0)) grad_slot(n.in[0]).array() += gy.array() * n.val.array();
      break;
    case Op::kLog:
      if (want(0)) grad_slot(n.in[0]).array() += gy.array() / in_val(n, 0).array();
      break;
    case Op::kSoftmax:
      if (want(0)) {
        Mat& gx = grad_slot(n.in[0]);
        for (Eigen::Index r = 0; r < gy.rows(); ++r) {
          const double dot = gy.row(r).cwiseProduct(n.val.row(r)).sum();
          gx.row(r).array() += n.val.row(r).array() * (gy.row(r).array() - dot);
        }
      }
      break;
    case Op::kLogSoftmax:
      if (want(0)) {
        Mat& gx = grad_slot(n.in[0]);
        for (Eigen::Index r = 0; r < gy.rows(); ++r) {
          const double total = gy.row(r).sum();
          gx.row(r).array() += gy.row(r).array() - n.val.row(r).array().exp() * total;
        }
      }
      break;
    case Op::kConcatCols: {
      const Eigen::Index ca = shape_[n.in[0]].second;
      if (want(0)) grad_slot(n.in[0]) += gy.leftCols(ca);
      if (want(1)) grad_slot(n.in[1]) += gy.rightCols(gy.cols() - ca);
      break;
    }
    case Op::kConcatRows: {
      const Eigen::Index ra = shape_[n.in[0]].first;
      if (want(0)) grad_slot(n.in[0]) += gy.topRows(ra);
      if (want(1)) grad_slot(n.in[1]) += gy.bottomRows(gy.rows() - ra);
      break;
    }
    case Op::kSliceCols:
      if (want(0)) grad_slot(n.in[0]).middleCols(n.i0, n.i1) += gy;
      break;
    case Op::kSliceRows:
      if (want(0)) grad_slot(n.in[0]).middleRows(n.i0, n.i1) += gy;
      break;
    case Op::kGatherRows:
      if (want(0)) {
        Mat& gt = grad_slot(n.in[0]);
        for (std::size_t r = 0; r < n.idx.size(); ++r)
          gt.row(n.idx[r]) += gy.row(static_cast<Eigen::Index>(r));
      }
      break;
    case Op::kConv1d: {
      if (want(1)) grad_slot(n.in[1]).noalias() += n.aux.transpose() * gy;
      if (want(2)) grad_slot(n.in[2]).row(0) += gy.colwise().sum();
      if (want(0)) {
        const Eigen::Index cin = shape_[n.in[0]].second;
        Mat gcol = gy * in_val(n, 1).transpose();  // [T_out x k*cin]
        Mat& gx = grad_slot(n.in[0]);
        for (Eigen::Index t = 0; t < gcol.rows(); ++t)
          for (int j = 0; j < n.i0; ++j) {
            const Eigen::Index src = t - n.i1 + j;
            if (src >= 0 && src < gx.rows()) gx.row(src) += gcol.block(t, j * cin, 1, cin);
          }
      }
      break;
    }
    case Op::kDropout:
      if (want(0)) {
        if (n.aux.size() == 0)
          grad_slot(n.in[0]) += gy;
        else
          grad_slot(n.in[0]) += gy.cwiseProduct(n.aux);
      }
      break;
    case Op::kLayerNorm: {
      const Mat& gain = in_val(n, 1);
      if (want(1)) grad_slot(n.in[1]).row(0) += gy.cwiseProduct(n.aux).colwise().sum();
      if (want(2)) grad_slot(n.in[2]).row(0) += gy.colwise().sum();
      if (want(0)) {
        Mat& gx = grad_slot(n.in[0]);
        const double inv_n = 1.0 / static_cast<double>(gy.cols());
        for (Eigen::Index r = 0; r < gy.rows(); ++r) {
          Eigen::RowVectorXd dxhat = gy.row(r).cwiseProduct(gain.row(0));
          const double m1 = dxhat.mean();
          const double m2 = dxhat.cwiseProduct(n.aux.row(r)).mean();
          gx.row(r).array() +=
              n.aux2(r, 0) * (dxhat.array() - m1 - n.aux.row(r).array() * m2);
          (void)inv_n;
        }
      }
      break;
    }
    case Op::kPickNll:
      if (want(0)) {
        Mat& gx = grad_slot(n.in[0]);
        const double g = gy(0, 0);
        for (std::size_t r = 0; r < n.idx.size(); ++r)
          gx(static_cast<Eigen::Index>(r), n.idx[r]) -= g;
      }
      break;
    case Op::kSum:
      if (want(0)) grad_slot(n.in[0]).array() += gy(0, 0);
      break;
    case Op::kScale:
      if (want(0)) grad_slot(n.in[0]) += gy * n.d0;
      break;
    case Op::kTranspose:
      if (want(0)) grad_slot(n.in[0]) += gy.transpose();
      break;
    case Op::kLstmSeq: {
      const Mat& x = in_val(n, 0);
      const Mat& w = in_val(n, 3);
      const Eigen::Index T = x.rows();
      const Eigen::Index hidden = shape_[id].second;
      const Eigen::Index in_dim = x.cols();
      Mat dpre(T, 4 * hidden);
      Eigen::RowVectorXd dh = gy.row(T - 1);  // incoming grad at h_T
      Eigen::RowVectorXd dc = gy.row(2 * T - 1);
      for (Eigen::Index t = T - 1; t >= 0; --t) {
        if (t < T - 1) {
          dh += gy.row(t);       // downstream grads injected at h_t
          dc += gy.row(T + t);   // and at c_t
        }
        const auto gates = n.aux.row(t);
        const auto gi = gates.segment(0, hidden).array();
        const auto gf = gates.segment(hidden, hidden).array();
        const auto gg = gates.segment(2 * hidden, hidden).array();
        const auto go = gates.segment(3 * hidden, hidden).array();
        const auto tc = n.aux2.row(t).array();
        const Eigen::ArrayXXd d_o = dh.array() * tc;
        dc.array() += dh.array() * go * (1.0 - tc.square());
        Eigen::RowVectorXd c_prev = t == 0 ? Eigen::RowVectorXd(in_val(n, 2).row(0))
                                           : Eigen::RowVectorXd(n.val.row(T + t - 1));
        dpre.row(t).segment(0, hidden).array() = dc.array() * gg * gi * (1.0 - gi);
        dpre.row(t).segment(hidden, hidden).array() =
            dc.array() * c_prev.array() * gf * (1.0 - gf);
        dpre.row(t).segment(2 * hidden, hidden).array() = dc.array() * gi * (1.0 - gg.square());
        dpre.row(t).segment(3 * hidden, hidden).array() = d_o * go * (1.0 - go);
        dc.array() *= gf;  // becomes dc_{t-1}
        dh.noalias() = dpre.row(t) * w.bottomRows(hidden).transpose();
      }
      if (want(1)) grad_slot(n.in[1]).row(0) += dh;
      if (want(2)) grad_slot(n.in[2]).row(0) += dc;
      if (want(0)) grad_slot(n.in[0]).noalias() += dpre * w.topRows(in_dim).transpose();
      if (want(3) || want(4)) {
        Mat xt_all(T, in_dim + hidden);
        xt_all.leftCols(in_dim) = x;
        xt_all.block(0, in_dim, 1, hidden) = in_val(n, 1).row(0);
        if (T > 1) xt_all.block(1, in_dim, T - 1, hidden) = n.val.topRows(T - 1);
        if (want(3)) grad_slot(n.in[3]).noalias() += xt_all.transpose() * dpre;
        if (want(4)) grad_slot(n.in[4]).row(0) += dpre.colwise().sum();
      }
      break;
    }
  }
}

std::vector<Mat> evaluate(Graph& g, const std::vector<std::pair<int, Mat>>& bindings,
                          const std::vector<int>& outputs) {
  for (const auto& [id, v] : bindings) g.bind(id, v);
  g.forward(/*train=*/false);
  std::vector<Mat> out;
  out.reserve(outputs.size());
  for (int id : outputs) out.push_back(g.value(id));
  return out;
}

void backpropagate(Graph& g, int loss_id) { g.backward(loss_id); }

double gradient_check(Graph& g, int loss_id, std::span<Param* const> params, double step) {
  demand(!g.has_stochastic_nodes(),
         "gradient_check: graph contains stochastic nodes (dropout)");
  demand(step > 0.0, "gradient_check: step must be positive");
  for (Param* p : params) {
    p->a.ensure_grad();
    p->a.grad.setZero();
  }
  g.forward(false);
  g.backward(loss_id);
  std::vector<Mat> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) analytic.push_back(p->a.grad);

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Mat& v = params[pi]->a.value;
    for (Eigen::Index r = 0; r < v.rows(); ++r)
      for (Eigen::Index c = 0; c < v.cols(); ++c) {
        const double keep = v(r, c);
        v(r, c) = keep + step;
        g.forward(false);
        const double up = g.value(loss_id)(0, 0);
        v(r, c) = keep - step;
        g.forward(false);
        const double down = g.value(loss_id)(0, 0);
        v(r, c) = keep;
        const double numeric = (up - down) / (2.0 * step);
        const double a = analytic[pi](r, c);
        const double rel =
            std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-12});
        worst = std::max(worst, rel);
      }
  }
  g.forward(false);  // restore values
  return worst;
}

}  // namespace seqbias::tensor
