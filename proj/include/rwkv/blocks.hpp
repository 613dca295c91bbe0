#pragma once

#include "rwkv/tensor.hpp"
#include "rwkv/wkv.hpp"

namespace rwkv {

struct LayerNormParams {
  Vector gamma;
  Vector beta;
};

struct TimeMixParams {
  Matrix w_r, w_k, w_v;  // d×d
  Matrix w_o;            // d×d
  Vector mu_r, mu_k, mu_v;
  WkvParams wkv;
};

struct ChannelMixParams {
  Matrix w_r;  // d×d
  Matrix w_k;  // h×d
  Matrix w_v;  // d×h
  Vector mu_r, mu_k;
};

struct BlockParams {
  LayerNormParams ln1, ln2;
  TimeMixParams tm;
  ChannelMixParams cm;
};

// Recurrent memory of one block in sequential mode: the previous post-norm
// input of each sub-block plus the wkv running state. Five d-vectors total.
struct BlockState {
  Vector tm_prev_x;
  Vector cm_prev_x;
  WkvState wkv;

  static BlockState initial(std::size_t d) {
    return BlockState{Vector(d, 0.0), Vector(d, 0.0), WkvState::initial(d)};
  }
};

// Row t of the output is row t-1 of the input; row 0 is zeros.
Matrix token_shift(const Matrix& x);

// Intermediate values the training backward pass needs. Forward functions
// fill these only when a non-null pointer is passed.
struct TimeMixActs {
  Matrix shifted;           // token_shift(x)
  Matrix xr, xk, xv;        // interpolated inputs
  Matrix r, k, v;           // projections
  Matrix wkv_out;
  Matrix gated;             // sigmoid(r) ⊙ wkv
};

struct ChannelMixActs {
  Matrix shifted;
  Matrix xr, xk;
  Matrix r;      // T×d
  Matrix k;      // T×h
  Matrix hidden; // squared_relu(k), T×h
  Matrix up;     // w_v * hidden, T×d
};

struct BlockActs {
  Matrix x_in;      // block input
  Matrix ln1_out;
  TimeMixActs tm;
  Matrix mid;       // x + time-mix output
  Matrix ln2_out;
  ChannelMixActs cm;
};

// out_t = w_o * (sigmoid(r_t) ⊙ wkv_t), with r/k/v linear in the
// mu-interpolation of x_t and the shifted x_{t-1}.
Matrix time_mix_forward(const Matrix& x, const TimeMixParams& p,
                        TimeMixActs* acts = nullptr);

// out_t = sigmoid(r'_t) ⊙ (w_v * squared_relu(k'_t)).
Matrix channel_mix_forward(const Matrix& x, const ChannelMixParams& p,
                           ChannelMixActs* acts = nullptr);

// y = x + time_mix(ln1(x)); out = y + channel_mix(ln2(y)).
Matrix block_forward(const Matrix& x, const BlockParams& p,
                     BlockActs* acts = nullptr);

// Sequential single-token counterparts. prev_x holds the previous post-norm
// input of the sub-block and is replaced with the current one.
Vector time_mix_step(const Vector& x, Vector& prev_x, WkvState& wkv_state,
                     const TimeMixParams& p);
Vector channel_mix_step(const Vector& x, Vector& prev_x, const ChannelMixParams& p);
Vector block_step(const Vector& x, BlockState& state, const BlockParams& p);

}  // namespace rwkv
