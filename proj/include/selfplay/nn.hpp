#pragma once

#include <string>
#include <vector>

#include "selfplay/tensor.hpp"

namespace selfplay::nn {

/// Affine map y = W x + b.
struct Linear {
  ParamId weight = 0;  // [out, in]
  ParamId bias = 0;    // [out]
  std::size_t in = 0;
  std::size_t out = 0;

  static Linear create(ParamStore& params, const std::string& name, std::size_t in, std::size_t out);
  Tensor operator()(Tape& tape, Tensor x) const;
};

/// Gate weights stacked as [input; forget; candidate; output] rows,
/// acting on concat(x, h).
struct LstmParams {
  ParamId weight = 0;  // [4H, in + H]
  ParamId bias = 0;    // [4H]
  std::size_t input = 0;
  std::size_t hidden = 0;

  static LstmParams create(ParamStore& params, const std::string& name, std::size_t input, std::size_t hidden);
};

struct LstmState {
  Tensor h;
  Tensor c;
};

LstmState zero_state(Tape& tape, std::size_t hidden);

/// i, f, o = sigmoid(.), g = tanh(.); c' = f*c + i*g; h' = o*tanh(c').
LstmState lstm_step(Tape& tape, const LstmParams& p, Tensor x, const LstmState& prev);

/// Additive attention: score_j = v . tanh(Wq q + Wk k_j).
struct AttentionParams {
  ParamId query_proj = 0;  // [A, Q]
  ParamId key_proj = 0;    // [K, A]
  ParamId score = 0;       // [A]
  std::size_t query_dim = 0;
  std::size_t key_dim = 0;
  std::size_t attn_dim = 0;

  static AttentionParams create(ParamStore& params, const std::string& name, std::size_t query_dim,
                                std::size_t key_dim, std::size_t attn_dim);
};

/// Keys projected once per sequence, reused across decoder steps.
struct AttentionMemory {
  Tensor projected_keys;  // [n, A]
  Tensor values;          // [n, V]
  std::size_t length = 0;
};

AttentionMemory prepare_memory(Tape& tape, const AttentionParams& p, std::span<const Tensor> keys,
                               std::span<const Tensor> values);
/// Memory whose keys and values are the rows of `states`.
AttentionMemory prepare_memory(Tape& tape, const AttentionParams& p, Tensor states);

struct AttentionResult {
  Tensor context;
  Tensor weights;
};

AttentionResult attend(Tape& tape, const AttentionParams& p, Tensor query, const AttentionMemory& memory);

/// Single-shot form: throws ContractError on an empty or mismatched key set.
AttentionResult attention(Tape& tape, const AttentionParams& p, Tensor query, std::span<const Tensor> keys,
                          std::span<const Tensor> values);

}  // namespace selfplay::nn
