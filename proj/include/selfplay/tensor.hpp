#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace selfplay {

class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rank 0, 1 or 2 shape. Vectors are rank 1; a rank-1 tensor of length n
/// behaves as an n x 1 column in matmul.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  static Shape scalar() { return Shape{}; }
  static Shape vector(std::size_t n) { return Shape{n}; }
  static Shape matrix(std::size_t rows, std::size_t cols) { return Shape{rows, cols}; }

  std::size_t rank() const { return rank_; }
  std::size_t size() const;
  std::size_t rows() const { return rank_ == 0 ? 1 : dims_[0]; }
  std::size_t cols() const { return rank_ == 2 ? dims_[1] : 1; }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }
  std::vector<std::size_t> dims() const { return {dims_.begin(), dims_.begin() + rank_}; }
  std::string str() const;

  friend bool operator==(const Shape& a, const Shape& b) {
    return a.rank_ == b.rank_ && a.dims_ == b.dims_;
  }

 private:
  std::array<std::size_t, 2> dims_{0, 0};
  std::size_t rank_ = 0;
};

using ParamId = std::size_t;

/// A named trainable array with Adam moment buffers.
struct Param {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  std::uint64_t adam_step = 0;
};

/// Flat parameter store shared by both agents. Parameter names are
/// dot-separated with a section prefix ("ds.", "us.", "ctx.").
class ParamStore {
 public:
  ParamId add(const std::string& name, Shape shape);
  ParamId add(const std::string& name, Shape shape, std::vector<double> init);

  std::size_t size() const { return params_.size(); }
  const Param& operator[](ParamId id) const { return params_.at(id); }
  Param& operator[](ParamId id) { return params_.at(id); }
  ParamId id_of(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t total_values() const;

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// Uniform(-scale, scale) initialisation from a seeded generator.
  void init_uniform(std::uint64_t seed, double scale);

 private:
  std::vector<Param> params_;
  std::map<std::string, ParamId> index_;
};

/// Per-parameter gradient buffers. Entries stay empty until touched.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParamStore& params);

  std::size_t size() const { return grads_.size(); }
  std::vector<double>& at(ParamId id) { return grads_.at(id); }
  const std::vector<double>& at(ParamId id) const { return grads_.at(id); }
  bool touched(ParamId id) const { return !grads_.at(id).empty(); }
  void accumulate(ParamId id, std::span<const double> g);
  void add(const Gradients& other);
  void scale(double s);
  double squared_norm() const;

 private:
  std::vector<std::vector<double>> grads_;
};

class Tape;

/// Handle to a node on a Tape.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr && id_ >= 0; }
  Tape& tape() const;
  int node_id() const { return id_; }
  const Shape& shape() const;
  std::span<const double> data() const;
  double item() const;
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

enum class OpKind : std::uint8_t {
  kConstant,
  kParam,
  kMatMul,
  kTranspose,
  kAdd,
  kAddRows,
  kMul,
  kScale,
  kConcat,
  kStack,
  kSlice,
  kTanh,
  kSigmoid,
  kSoftmax,
  kEmbedLookup,
  kCrossEntropy,
  kSoftmaxCrossEntropy,
  kSum,
};

const char* op_name(OpKind kind);

/// Records forward values and, when gradients are enabled, the operation
/// graph needed for reverse-mode differentiation. Nodes are appended in
/// evaluation order, so the node list is already topologically sorted.
class Tape {
 public:
  explicit Tape(const ParamStore* params = nullptr, bool record = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  const ParamStore* params() const { return params_; }
  std::size_t size() const { return nodes_.size(); }

  Tensor constant(Shape shape, std::vector<double> data);
  Tensor constant(std::span<const double> data);
  Tensor zeros(Shape shape);
  /// Leaf bound to a parameter; repeated calls return the same node.
  Tensor param(ParamId id);

  void backward(Tensor loss, Gradients& grads);

  // Node inspection.
  const Shape& shape(int id) const { return nodes_[id].shape; }
  std::span<const double> value(int id) const;
  bool requires_grad(int id) const { return nodes_[id].needs_grad; }
  OpKind kind(int id) const { return nodes_[id].op; }

 private:
  friend struct TapeAccess;

  struct Node {
    OpKind op = OpKind::kConstant;
    Shape shape;
    bool needs_grad = false;
    std::vector<int> inputs;
    std::size_t aux = 0;
    double scalar = 0.0;
    const double* external = nullptr;  // parameter storage
    ParamId param = 0;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<double> saved;
  };

  int push(Node node);
  Node& node(int id) { return nodes_[id]; }
  const Node& node(int id) const { return nodes_[id]; }
  void propagate(int id);

  const ParamStore* params_;
  bool record_;
  std::vector<Node> nodes_;
  std::vector<int> param_nodes_;
};

// Primitive operations. Every op takes its tape from its first input.
Tensor matmul(Tensor a, Tensor b);
Tensor transpose(Tensor a);
Tensor add(Tensor a, Tensor b);
/// Adds vector v (length cols) to every row of matrix m.
Tensor add_rows(Tensor m, Tensor v);
Tensor mul(Tensor a, Tensor b);
Tensor scale(Tensor a, double s);
Tensor concat(std::span<const Tensor> parts);
Tensor concat(std::initializer_list<Tensor> parts);
/// Stacks equal-length vectors as the rows of a matrix.
Tensor stack(std::span<const Tensor> rows);
/// Slice of a vector.
Tensor slice(Tensor a, std::size_t offset, std::size_t length);
/// Row of a matrix as a vector.
Tensor row(Tensor m, std::size_t index);
Tensor tanh(Tensor a);
Tensor sigmoid(Tensor a);
Tensor softmax(Tensor a);
Tensor embed_lookup(Tensor table, std::size_t index);
/// -log(p[target]) for a probability vector p.
Tensor cross_entropy(Tensor probs, std::size_t target);
/// -log(softmax(logits)[target]), computed stably.
Tensor softmax_cross_entropy(Tensor logits, std::size_t target);
/// Sum of all elements of every input, as a scalar.
Tensor sum(std::span<const Tensor> terms);
Tensor sum(Tensor a);

/// Softmax of raw values, outside any tape.
std::vector<double> softmax_values(std::span<const double> logits);
/// log softmax(logits)[index], outside any tape.
double log_softmax_at(std::span<const double> logits, std::size_t index);

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam step for every parameter accepted by `select` that has a
/// gradient buffer. Parameters without a gradient keep their moments.
void adam_update(ParamStore& params, const Gradients& grads, const AdamConfig& cfg,
                 const std::function<bool(const Param&)>& select = {});

/// Central finite-difference gradient of `loss_fn` with respect to one
/// parameter; used by gradient checks.
std::vector<double> finite_difference(ParamStore& params, ParamId id,
                                      const std::function<double()>& loss_fn,
                                      double step = 1e-5);

// Checkpoint file: magic, format version, then named arrays with shapes.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const ParamStore& params, const std::string& path);
/// Loads values into an already-shaped store; every name and shape must match.
void load_checkpoint(ParamStore& params, const std::string& path);

}  // namespace selfplay
