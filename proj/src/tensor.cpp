#include "selfplay/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "selfplay/rng.hpp"

namespace selfplay {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

std::string shapes_message(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str();
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------- Shape

Shape::Shape(std::initializer_list<std::size_t> dims) {
  if (dims.size() > 2) throw DimensionError("Shape: rank > 2 is not supported");
  rank_ = dims.size();
  std::size_t i = 0;
  for (std::size_t d : dims) dims_[i++] = d;
}

std::size_t Shape::size() const {
  if (rank_ == 0) return 1;
  if (rank_ == 1) return dims_[0];
  return dims_[0] * dims_[1];
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < rank_; ++i) os << (i ? "," : "") << dims_[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------- ParamStore

ParamId ParamStore::add(const std::string& name, Shape shape) {
  return add(name, shape, std::vector<double>(shape.size(), 0.0));
}

ParamId ParamStore::add(const std::string& name, Shape shape, std::vector<double> init) {
  if (index_.count(name)) throw ContractError("ParamStore: duplicate parameter '" + name + "'");
  if (init.size() != shape.size()) {
    throw DimensionError("ParamStore: parameter '" + name + "' has " +
                         std::to_string(init.size()) + " values for shape " + shape.str());
  }
  Param p;
  p.name = name;
  p.shape = shape;
  p.value = std::move(init);
  p.adam_m.assign(p.value.size(), 0.0);
  p.adam_v.assign(p.value.size(), 0.0);
  params_.push_back(std::move(p));
  index_[name] = params_.size() - 1;
  return params_.size() - 1;
}

ParamId ParamStore::id_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::total_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParamStore::init_uniform(std::uint64_t seed, double scale) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    for (double& v : params_[i].value) v = rng.uniform(-scale, scale);
  }
}

// ---------------------------------------------------------------- Gradients

Gradients::Gradients(const ParamStore& params) : grads_(params.size()) {}

void Gradients::accumulate(ParamId id, std::span<const double> g) {
  auto& dst = grads_.at(id);
  if (dst.empty()) {
    dst.assign(g.begin(), g.end());
    return;
  }
  if (dst.size() != g.size()) throw DimensionError("Gradients: size mismatch on accumulate");
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void Gradients::add(const Gradients& other) {
  if (grads_.empty()) grads_.resize(other.grads_.size());
  if (other.grads_.size() != grads_.size()) throw DimensionError("Gradients: store mismatch");
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    if (!other.grads_[i].empty()) accumulate(i, other.grads_[i]);
  }
}

void Gradients::scale(double s) {
  for (auto& g : grads_)
    for (double& v : g) v *= s;
}

double Gradients::squared_norm() const {
  double n = 0.0;
  for (const auto& g : grads_)
    for (double v : g) n += v * v;
  return n;
}

// ---------------------------------------------------------------- Tensor

Tape& Tensor::tape() const {
  if (!tape_) throw ContractError("Tensor: handle is not bound to a tape");
  return *tape_;
}
const Shape& Tensor::shape() const { return tape().shape(id_); }
std::span<const double> Tensor::data() const { return tape().value(id_); }
bool Tensor::requires_grad() const { return tape().requires_grad(id_); }

double Tensor::item() const {
  auto d = data();
  if (d.size() != 1) throw ContractError("Tensor::item: tensor is not a scalar (" + shape().str() + ")");
  return d[0];
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kParam: return "param";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAdd: return "add";
    case OpKind::kAddRows: return "add_rows";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kConcat: return "concat";
    case OpKind::kStack: return "stack";
    case OpKind::kSlice: return "slice";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kEmbedLookup: return "embed_lookup";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::kSum: return "sum";
  }
  return "?";
}

// ---------------------------------------------------------------- Tape

Tape::Tape(const ParamStore* params, bool record) : params_(params), record_(record) {
  if (params_) param_nodes_.assign(params_->size(), -1);
  nodes_.reserve(256);
}

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

std::span<const double> Tape::value(int id) const {
  const Node& n = nodes_.at(id);
  if (n.external) return {n.external, n.shape.size()};
  return n.value;
}

Tensor Tape::constant(Shape shape, std::vector<double> data) {
  if (data.size() != shape.size()) {
    throw DimensionError("constant: " + std::to_string(data.size()) + " values for shape " + shape.str());
  }
  Node n;
  n.op = OpKind::kConstant;
  n.shape = shape;
  n.value = std::move(data);
  return {this, push(std::move(n))};
}

Tensor Tape::constant(std::span<const double> data) {
  return constant(Shape::vector(data.size()), std::vector<double>(data.begin(), data.end()));
}

Tensor Tape::zeros(Shape shape) { return constant(shape, std::vector<double>(shape.size(), 0.0)); }

Tensor Tape::param(ParamId id) {
  if (!params_) throw ContractError("Tape::param: tape has no parameter store");
  if (id >= param_nodes_.size()) throw ContractError("Tape::param: parameter id out of range");
  if (param_nodes_[id] >= 0) return {this, param_nodes_[id]};
  const Param& p = (*params_)[id];
  Node n;
  n.op = OpKind::kParam;
  n.shape = p.shape;
  n.external = p.value.data();
  n.param = id;
  n.needs_grad = record_;
  const int nid = push(std::move(n));
  param_nodes_[id] = nid;
  return {this, nid};
}

struct TapeAccess {
  static Tape::Node make(Tape& t, OpKind op, Shape shape, std::initializer_list<Tensor> in) {
    Tape::Node n;
    n.op = op;
    n.shape = shape;
    n.value.assign(shape.size(), 0.0);
    bool any = false;
    for (const Tensor& x : in) any = any || t.requires_grad(x.node_id());
    n.needs_grad = t.recording() && any;
    if (n.needs_grad)
      for (const Tensor& x : in) n.inputs.push_back(x.node_id());
    return n;
  }
  static Tape::Node make_many(Tape& t, OpKind op, Shape shape, std::span<const Tensor> in) {
    Tape::Node n;
    n.op = op;
    n.shape = shape;
    n.value.assign(shape.size(), 0.0);
    bool any = false;
    for (const Tensor& x : in) any = any || t.requires_grad(x.node_id());
    n.needs_grad = t.recording() && any;
    if (n.needs_grad)
      for (const Tensor& x : in) n.inputs.push_back(x.node_id());
    return n;
  }
  static Tensor push(Tape& t, Tape::Node n) { return {&t, t.push(std::move(n))}; }
};

namespace {

Tape& same_tape(Tensor a, Tensor b, const char* op) {
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": inputs live on different tapes");
  return a.tape();
}

}  // namespace

Tensor matmul(Tensor a, Tensor b) {
  Tape& t = same_tape(a, b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.rank() != 2 || sb.rank() == 0 || sa.cols() != sb.rows()) {
    throw DimensionError(shapes_message("matmul", sa, sb));
  }
  const Shape out = sb.rank() == 1 ? Shape::vector(sa.rows()) : Shape::matrix(sa.rows(), sb.cols());
  auto n = TapeAccess::make(t, OpKind::kMatMul, out, {a, b});
  ConstMatMap A(a.data().data(), sa.rows(), sa.cols());
  ConstMatMap B(b.data().data(), sb.rows(), sb.cols());
  MatMap C(n.value.data(), sa.rows(), sb.cols());
  C.noalias() = A * B;
  return TapeAccess::push(t, std::move(n));
}

Tensor transpose(Tensor a) {
  Tape& t = a.tape();
  const Shape& s = a.shape();
  if (s.rank() != 2) throw DimensionError("transpose: expected a matrix, got " + s.str());
  auto n = TapeAccess::make(t, OpKind::kTranspose, Shape::matrix(s.cols(), s.rows()), {a});
  ConstMatMap A(a.data().data(), s.rows(), s.cols());
  MatMap C(n.value.data(), s.cols(), s.rows());
  C = A.transpose();
  return TapeAccess::push(t, std::move(n));
}

Tensor add(Tensor a, Tensor b) {
  Tape& t = same_tape(a, b, "add");
  if (!(a.shape() == b.shape())) throw DimensionError(shapes_message("add", a.shape(), b.shape()));
  auto n = TapeAccess::make(t, OpKind::kAdd, a.shape(), {a, b});
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = x[i] + y[i];
  return TapeAccess::push(t, std::move(n));
}

Tensor add_rows(Tensor m, Tensor v) {
  Tape& t = same_tape(m, v, "add_rows");
  const Shape& sm = m.shape();
  if (sm.rank() != 2 || v.shape().rank() != 1 || v.shape().size() != sm.cols()) {
    throw DimensionError(shapes_message("add_rows", sm, v.shape()));
  }
  auto n = TapeAccess::make(t, OpKind::kAddRows, sm, {m, v});
  auto x = m.data();
  auto y = v.data();
  const std::size_t cols = sm.cols();
  for (std::size_t r = 0; r < sm.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c) n.value[r * cols + c] = x[r * cols + c] + y[c];
  return TapeAccess::push(t, std::move(n));
}

Tensor mul(Tensor a, Tensor b) {
  Tape& t = same_tape(a, b, "mul");
  if (!(a.shape() == b.shape())) throw DimensionError(shapes_message("mul", a.shape(), b.shape()));
  auto n = TapeAccess::make(t, OpKind::kMul, a.shape(), {a, b});
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = x[i] * y[i];
  return TapeAccess::push(t, std::move(n));
}

Tensor scale(Tensor a, double s) {
  Tape& t = a.tape();
  auto n = TapeAccess::make(t, OpKind::kScale, a.shape(), {a});
  n.scalar = s;
  auto x = a.data();
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = s * x[i];
  return TapeAccess::push(t, std::move(n));
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  Tape& t = parts.front().tape();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (&p.tape() != &t) throw ContractError("concat: inputs live on different tapes");
    if (p.shape().rank() > 1) throw DimensionError("concat: expected vectors, got " + p.shape().str());
    total += p.shape().size();
  }
  auto n = TapeAccess::make_many(t, OpKind::kConcat, Shape::vector(total), parts);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    auto d = p.data();
    std::copy(d.begin(), d.end(), n.value.begin() + static_cast<std::ptrdiff_t>(off));
    off += d.size();
  }
  return TapeAccess::push(t, std::move(n));
}

Tensor concat(std::initializer_list<Tensor> parts) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor stack(std::span<const Tensor> rows) {
  if (rows.empty()) throw ContractError("stack: no inputs");
  Tape& t = rows.front().tape();
  const Shape first = rows.front().shape();
  if (first.rank() != 1) throw DimensionError("stack: expected vectors, got " + first.str());
  for (const Tensor& r : rows) {
    if (&r.tape() != &t) throw ContractError("stack: inputs live on different tapes");
    if (!(r.shape() == first)) throw DimensionError(shapes_message("stack", first, r.shape()));
  }
  const std::size_t cols = first.size();
  auto n = TapeAccess::make_many(t, OpKind::kStack, Shape::matrix(rows.size(), cols), rows);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto d = rows[r].data();
    std::copy(d.begin(), d.end(), n.value.begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  return TapeAccess::push(t, std::move(n));
}

Tensor slice(Tensor a, std::size_t offset, std::size_t length) {
  Tape& t = a.tape();
  if (a.shape().rank() != 1 || offset + length > a.shape().size()) {
    throw DimensionError("slice: range [" + std::to_string(offset) + "," + std::to_string(offset + length) +
                         ") out of bounds for " + a.shape().str());
  }
  auto n = TapeAccess::make(t, OpKind::kSlice, Shape::vector(length), {a});
  n.aux = offset;
  auto d = a.data();
  std::copy(d.begin() + static_cast<std::ptrdiff_t>(offset),
            d.begin() + static_cast<std::ptrdiff_t>(offset + length), n.value.begin());
  return TapeAccess::push(t, std::move(n));
}

Tensor row(Tensor m, std::size_t index) {
  Tape& t = m.tape();
  const Shape& s = m.shape();
  if (s.rank() != 2 || index >= s.rows()) {
    throw DimensionError("row: index " + std::to_string(index) + " out of bounds for " + s.str());
  }
  auto n = TapeAccess::make(t, OpKind::kSlice, Shape::vector(s.cols()), {m});
  n.aux = index * s.cols();
  auto d = m.data();
  std::copy(d.begin() + static_cast<std::ptrdiff_t>(n.aux),
            d.begin() + static_cast<std::ptrdiff_t>(n.aux + s.cols()), n.value.begin());
  return TapeAccess::push(t, std::move(n));
}

Tensor tanh(Tensor a) {
  Tape& t = a.tape();
  auto n = TapeAccess::make(t, OpKind::kTanh, a.shape(), {a});
  auto x = a.data();
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = std::tanh(x[i]);
  return TapeAccess::push(t, std::move(n));
}

Tensor sigmoid(Tensor a) {
  Tape& t = a.tape();
  auto n = TapeAccess::make(t, OpKind::kSigmoid, a.shape(), {a});
  auto x = a.data();
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = stable_sigmoid(x[i]);
  return TapeAccess::push(t, std::move(n));
}

std::vector<double> softmax_values(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

double log_softmax_at(std::span<const double> logits, std::size_t index) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return logits[index] - mx - std::log(z);
}

Tensor softmax(Tensor a) {
  Tape& t = a.tape();
  if (a.shape().rank() != 1 || a.shape().size() == 0) {
    throw DimensionError("softmax: expected a non-empty vector, got " + a.shape().str());
  }
  auto n = TapeAccess::make(t, OpKind::kSoftmax, a.shape(), {a});
  n.value = softmax_values(a.data());
  return TapeAccess::push(t, std::move(n));
}

Tensor embed_lookup(Tensor table, std::size_t index) {
  Tape& t = table.tape();
  const Shape& s = table.shape();
  if (s.rank() != 2) throw DimensionError("embed_lookup: expected a table, got " + s.str());
  if (index >= s.rows()) {
    throw DimensionError("embed_lookup: index " + std::to_string(index) + " out of range for " + s.str());
  }
  auto n = TapeAccess::make(t, OpKind::kEmbedLookup, Shape::vector(s.cols()), {table});
  n.aux = index;
  auto d = table.data();
  std::copy(d.begin() + static_cast<std::ptrdiff_t>(index * s.cols()),
            d.begin() + static_cast<std::ptrdiff_t>((index + 1) * s.cols()), n.value.begin());
  return TapeAccess::push(t, std::move(n));
}

Tensor cross_entropy(Tensor probs, std::size_t target) {
  Tape& t = probs.tape();
  if (probs.shape().rank() != 1 || target >= probs.shape().size()) {
    throw DimensionError("cross_entropy: target " + std::to_string(target) + " out of range for " +
                         probs.shape().str());
  }
  auto n = TapeAccess::make(t, OpKind::kCrossEntropy, Shape::scalar(), {probs});
  n.aux = target;
  n.value[0] = -std::log(probs.data()[target]);
  return TapeAccess::push(t, std::move(n));
}

Tensor softmax_cross_entropy(Tensor logits, std::size_t target) {
  Tape& t = logits.tape();
  if (logits.shape().rank() != 1 || target >= logits.shape().size()) {
    throw DimensionError("softmax_cross_entropy: target " + std::to_string(target) + " out of range for " +
                         logits.shape().str());
  }
  auto n = TapeAccess::make(t, OpKind::kSoftmaxCrossEntropy, Shape::scalar(), {logits});
  n.aux = target;
  auto p = softmax_values(logits.data());
  n.value[0] = -log_softmax_at(logits.data(), target);
  if (n.needs_grad) n.saved = std::move(p);
  return TapeAccess::push(t, std::move(n));
}

Tensor sum(std::span<const Tensor> terms) {
  if (terms.empty()) throw ContractError("sum: no inputs");
  Tape& t = terms.front().tape();
  auto n = TapeAccess::make_many(t, OpKind::kSum, Shape::scalar(), terms);
  double s = 0.0;
  for (const Tensor& x : terms) {
    if (&x.tape() != &t) throw ContractError("sum: inputs live on different tapes");
    for (double v : x.data()) s += v;
  }
  n.value[0] = s;
  return TapeAccess::push(t, std::move(n));
}

Tensor sum(Tensor a) { return sum(std::span<const Tensor>(&a, 1)); }

// ---------------------------------------------------------------- backward

void Tape::backward(Tensor loss, Gradients& grads) {
  if (&loss.tape() != this) throw ContractError("backward: loss lives on a different tape");
  if (loss.shape().size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + loss.shape().str());
  }
  if (grads.size() == 0 && params_) grads = Gradients(*params_);
  const int root = loss.node_id();
  if (!nodes_[root].needs_grad) return;
  for (auto& n : nodes_) n.grad.clear();
  nodes_[root].grad.assign(1, 1.0);
  for (int id = root; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.op == OpKind::kParam) {
      grads.accumulate(n.param, n.grad);
      continue;
    }
    propagate(id);
  }
}

void Tape::propagate(int id) {
  Node& n = nodes_[id];
  const auto& g = n.grad;
  auto input_grad = [this](int in) -> double* {
    Node& x = nodes_[in];
    if (!x.needs_grad) return nullptr;
    if (x.grad.empty()) x.grad.assign(x.shape.size(), 0.0);
    return x.grad.data();
  };
  switch (n.op) {
    case OpKind::kConstant:
    case OpKind::kParam:
      break;
    case OpKind::kMatMul: {
      const Shape& sa = nodes_[n.inputs[0]].shape;
      const Shape& sb = nodes_[n.inputs[1]].shape;
      ConstMatMap G(g.data(), sa.rows(), sb.cols());
      if (double* ga = input_grad(n.inputs[0])) {
        ConstMatMap B(value(n.inputs[1]).data(), sb.rows(), sb.cols());
        MatMap GA(ga, sa.rows(), sa.cols());
        GA.noalias() += G * B.transpose();
      }
      if (double* gb = input_grad(n.inputs[1])) {
        ConstMatMap A(value(n.inputs[0]).data(), sa.rows(), sa.cols());
        MatMap GB(gb, sb.rows(), sb.cols());
        GB.noalias() += A.transpose() * G;
      }
      break;
    }
    case OpKind::kTranspose: {
      if (double* ga = input_grad(n.inputs[0])) {
        const Shape& sa = nodes_[n.inputs[0]].shape;
        ConstMatMap G(g.data(), sa.cols(), sa.rows());
        MatMap GA(ga, sa.rows(), sa.cols());
        GA += G.transpose();
      }
      break;
    }
    case OpKind::kAdd: {
      for (int k = 0; k < 2; ++k)
        if (double* gx = input_grad(n.inputs[k]))
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      break;
    }
    case OpKind::kAddRows: {
      const std::size_t cols = n.shape.cols();
      if (double* gm = input_grad(n.inputs[0]))
        for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
      if (double* gv = input_grad(n.inputs[1]))
        for (std::size_t i = 0; i < g.size(); ++i) gv[i % cols] += g[i];
      break;
    }
    case OpKind::kMul: {
      auto x = value(n.inputs[0]);
      auto y = value(n.inputs[1]);
      if (double* gx = input_grad(n.inputs[0]))
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
      if (double* gy = input_grad(n.inputs[1]))
        for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i] * x[i];
      break;
    }
    case OpKind::kScale: {
      if (double* gx = input_grad(n.inputs[0]))
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += n.scalar * g[i];
      break;
    }
    case OpKind::kConcat: {
      std::size_t off = 0;
      for (int in : n.inputs) {
        const std::size_t len = nodes_[in].shape.size();
        if (double* gx = input_grad(in))
          for (std::size_t i = 0; i < len; ++i) gx[i] += g[off + i];
        off += len;
      }
      break;
    }
    case OpKind::kStack: {
      const std::size_t cols = n.shape.cols();
      for (std::size_t r = 0; r < n.inputs.size(); ++r)
        if (double* gx = input_grad(n.inputs[r]))
          for (std::size_t i = 0; i < cols; ++i) gx[i] += g[r * cols + i];
      break;
    }
    case OpKind::kSlice: {
      if (double* gx = input_grad(n.inputs[0]))
        for (std::size_t i = 0; i < g.size(); ++i) gx[n.aux + i] += g[i];
      break;
    }
    case OpKind::kTanh: {
      if (double* gx = input_grad(n.inputs[0]))
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
      break;
    }
    case OpKind::kSigmoid: {
      if (double* gx = input_grad(n.inputs[0]))
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
      break;
    }
    case OpKind::kSoftmax: {
      if (double* gx = input_grad(n.inputs[0])) {
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * n.value[i];
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += n.value[i] * (g[i] - dot);
      }
      break;
    }
    case OpKind::kEmbedLookup: {
      if (double* gx = input_grad(n.inputs[0])) {
        const std::size_t cols = n.shape.size();
        for (std::size_t i = 0; i < cols; ++i) gx[n.aux * cols + i] += g[i];
      }
      break;
    }
    case OpKind::kCrossEntropy: {
      if (double* gx = input_grad(n.inputs[0])) gx[n.aux] += -g[0] / value(n.inputs[0])[n.aux];
      break;
    }
    case OpKind::kSoftmaxCrossEntropy: {
      if (double* gx = input_grad(n.inputs[0])) {
        for (std::size_t i = 0; i < n.saved.size(); ++i) gx[i] += g[0] * n.saved[i];
        gx[n.aux] -= g[0];
      }
      break;
    }
    case OpKind::kSum: {
      for (int in : n.inputs)
        if (double* gx = input_grad(in)) {
          const std::size_t len = nodes_[in].shape.size();
          for (std::size_t i = 0; i < len; ++i) gx[i] += g[0];
        }
      break;
    }
  }
}

// ---------------------------------------------------------------- Adam

void adam_update(ParamStore& params, const Gradients& grads, const AdamConfig& cfg,
                 const std::function<bool(const Param&)>& select) {
  if (grads.size() != params.size()) throw DimensionError("adam_update: gradient store does not match parameters");
  for (ParamId id = 0; id < params.size(); ++id) {
    if (!grads.touched(id)) continue;
    Param& p = params[id];
    if (select && !select(p)) continue;
    const auto& g = grads.at(id);
    if (g.size() != p.value.size()) {
      throw DimensionError("adam_update: gradient for '" + p.name + "' has " + std::to_string(g.size()) +
                           " values, parameter has shape " + p.shape.str());
    }
    p.adam_step += 1;
    const double t = static_cast<double>(p.adam_step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < g.size(); ++i) {
      p.adam_m[i] = cfg.beta1 * p.adam_m[i] + (1.0 - cfg.beta1) * g[i];
      p.adam_v[i] = cfg.beta2 * p.adam_v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = p.adam_m[i] / bc1;
      const double vhat = p.adam_v[i] / bc2;
      p.value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

std::vector<double> finite_difference(ParamStore& params, ParamId id, const std::function<double()>& loss_fn,
                                      double step) {
  auto& values = params[id].value;
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + step;
    const double up = loss_fn();
    values[i] = orig - step;
    const double down = loss_fn();
    values[i] = orig;
    out[i] = (up - down) / (2.0 * step);
  }
  return out;
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[4] = {'S', 'P', 'C', 'K'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ContractError("checkpoint '" + path + "': truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const ParamStore& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContractError("checkpoint: cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  write_pod(os, kCheckpointVersion);
  write_pod(os, static_cast<std::uint64_t>(params.size()));
  for (const Param& p : params) {
    write_pod(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_pod(os, static_cast<std::uint32_t>(p.shape.rank()));
    for (std::size_t d : p.shape.dims()) write_pod(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(p.value.data()),
             static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!os) throw ContractError("checkpoint: write to '" + path + "' failed");
}

void load_checkpoint(ParamStore& params, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractError("checkpoint: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw ContractError("checkpoint '" + path + "': bad magic");
  const auto version = read_pod<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw ContractError("checkpoint '" + path + "': unsupported version " + std::to_string(version));
  }
  const auto count = read_pod<std::uint64_t>(is, path);
  if (count != params.size()) {
    throw DimensionError("checkpoint '" + path + "': holds " + std::to_string(count) + " parameters, model expects " +
                         std::to_string(params.size()));
  }
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = read_pod<std::uint32_t>(is, path);
    std::string name(len, '\0');
    is.read(name.data(), len);
    const auto rank = read_pod<std::uint32_t>(is, path);
    if (rank > 2) throw DimensionError("checkpoint '" + path + "': parameter '" + name + "' has rank > 2");
    std::vector<std::size_t> dims;
    for (std::uint32_t r = 0; r < rank; ++r) dims.push_back(read_pod<std::uint64_t>(is, path));
    Shape shape = rank == 0 ? Shape::scalar() : rank == 1 ? Shape::vector(dims[0]) : Shape::matrix(dims[0], dims[1]);
    if (!params.contains(name)) throw DimensionError("checkpoint '" + path + "': unexpected parameter '" + name + "'");
    Param& p = params[params.id_of(name)];
    if (!(p.shape == shape)) {
      throw DimensionError("checkpoint '" + path + "': parameter '" + name + "' has shape " + shape.str() +
                           ", model expects " + p.shape.str());
    }
    is.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    if (!is) throw ContractError("checkpoint '" + path + "': truncated file");
  }
}

}  // namespace selfplay
