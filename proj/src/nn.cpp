#include "selfplay/nn.hpp"

namespace selfplay::nn {

Linear Linear::create(ParamStore& params, const std::string& name, std::size_t in, std::size_t out) {
  Linear l;
  l.weight = params.add(name + ".weight", Shape::matrix(out, in));
  l.bias = params.add(name + ".bias", Shape::vector(out));
  l.in = in;
  l.out = out;
  return l;
}

Tensor Linear::operator()(Tape& tape, Tensor x) const {
  if (x.shape().size() != in) {
    throw DimensionError("Linear: expected input of size " + std::to_string(in) + ", got " + x.shape().str());
  }
  return add(matmul(tape.param(weight), x), tape.param(bias));
}

LstmParams LstmParams::create(ParamStore& params, const std::string& name, std::size_t input, std::size_t hidden) {
  LstmParams p;
  p.weight = params.add(name + ".weight", Shape::matrix(4 * hidden, input + hidden));
  p.bias = params.add(name + ".bias", Shape::vector(4 * hidden));
  p.input = input;
  p.hidden = hidden;
  return p;
}

LstmState zero_state(Tape& tape, std::size_t hidden) {
  return {tape.zeros(Shape::vector(hidden)), tape.zeros(Shape::vector(hidden))};
}

LstmState lstm_step(Tape& tape, const LstmParams& p, Tensor x, const LstmState& prev) {
  if (x.shape().size() != p.input || prev.h.shape().size() != p.hidden || prev.c.shape().size() != p.hidden) {
    throw DimensionError("lstm_step: expected x " + std::to_string(p.input) + ", h/c " + std::to_string(p.hidden) +
                         "; got x " + x.shape().str() + ", h " + prev.h.shape().str() + ", c " +
                         prev.c.shape().str());
  }
  const std::size_t H = p.hidden;
  Tensor gates = add(matmul(tape.param(p.weight), concat({x, prev.h})), tape.param(p.bias));
  Tensor i = sigmoid(slice(gates, 0, H));
  Tensor f = sigmoid(slice(gates, H, H));
  Tensor g = tanh(slice(gates, 2 * H, H));
  Tensor o = sigmoid(slice(gates, 3 * H, H));
  Tensor c = add(mul(f, prev.c), mul(i, g));
  Tensor h = mul(o, tanh(c));
  return {h, c};
}

AttentionParams AttentionParams::create(ParamStore& params, const std::string& name, std::size_t query_dim,
                                        std::size_t key_dim, std::size_t attn_dim) {
  AttentionParams a;
  a.query_proj = params.add(name + ".query", Shape::matrix(attn_dim, query_dim));
  a.key_proj = params.add(name + ".key", Shape::matrix(key_dim, attn_dim));
  a.score = params.add(name + ".score", Shape::vector(attn_dim));
  a.query_dim = query_dim;
  a.key_dim = key_dim;
  a.attn_dim = attn_dim;
  return a;
}

AttentionMemory prepare_memory(Tape& tape, const AttentionParams& p, std::span<const Tensor> keys,
                               std::span<const Tensor> values) {
  if (keys.empty()) throw ContractError("attention: empty key set");
  if (keys.size() != values.size()) {
    throw ContractError("attention: " + std::to_string(keys.size()) + " keys but " + std::to_string(values.size()) +
                        " values");
  }
  Tensor key_matrix = stack(keys);
  if (key_matrix.shape().cols() != p.key_dim) {
    throw DimensionError("attention: key size " + std::to_string(key_matrix.shape().cols()) + ", expected " +
                         std::to_string(p.key_dim));
  }
  AttentionMemory m;
  m.projected_keys = matmul(key_matrix, tape.param(p.key_proj));
  m.values = (keys.data() == values.data()) ? key_matrix : stack(values);
  m.length = keys.size();
  return m;
}

AttentionMemory prepare_memory(Tape& tape, const AttentionParams& p, Tensor states) {
  if (states.shape().rank() != 2 || states.shape().rows() == 0) throw ContractError("attention: empty key set");
  if (states.shape().cols() != p.key_dim) {
    throw DimensionError("attention: key size " + std::to_string(states.shape().cols()) + ", expected " +
                         std::to_string(p.key_dim));
  }
  AttentionMemory m;
  m.projected_keys = matmul(states, tape.param(p.key_proj));
  m.values = states;
  m.length = states.shape().rows();
  return m;
}

AttentionResult attend(Tape& tape, const AttentionParams& p, Tensor query, const AttentionMemory& memory) {
  if (memory.length == 0) throw ContractError("attention: empty key set");
  if (query.shape().size() != p.query_dim) {
    throw DimensionError("attention: query size " + query.shape().str() + ", expected " +
                         std::to_string(p.query_dim));
  }
  Tensor q = matmul(tape.param(p.query_proj), query);
  Tensor hidden = tanh(add_rows(memory.projected_keys, q));
  Tensor weights = softmax(matmul(hidden, tape.param(p.score)));
  Tensor context = matmul(transpose(memory.values), weights);
  return {context, weights};
}

AttentionResult attention(Tape& tape, const AttentionParams& p, Tensor query, std::span<const Tensor> keys,
                          std::span<const Tensor> values) {
  return attend(tape, p, query, prepare_memory(tape, p, keys, values));
}

}  // namespace selfplay::nn
