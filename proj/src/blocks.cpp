#include "rwkv/blocks.hpp"

namespace rwkv {

Matrix token_shift(const Matrix& x) {
  if (x.rows == 0) throw std::invalid_argument("token_shift: empty sequence");
  Matrix out(x.rows, x.cols, 0.0);
  for (std::size_t t = 1; t < x.rows; ++t)
    for (std::size_t c = 0; c < x.cols; ++c) out(t, c) = x(t - 1, c);
  return out;
}

namespace {

// mu ⊙ x_t + (1 - mu) ⊙ x_{t-1}, rows at once
Matrix interpolate(const Matrix& x, const Matrix& shifted, const Vector& mu) {
  Matrix out(x.rows, x.cols);
  for (std::size_t t = 0; t < x.rows; ++t) {
    const double* xr = x.row(t);
    const double* sr = shifted.row(t);
    double* o = out.row(t);
    for (std::size_t c = 0; c < x.cols; ++c)
      o[c] = mu[c] * xr[c] + (1.0 - mu[c]) * sr[c];
  }
  return out;
}

void interpolate_vec(const Vector& x, const Vector& prev, const Vector& mu,
                     Vector& out) {
  out.resize(x.size());
  for (std::size_t c = 0; c < x.size(); ++c)
    out[c] = mu[c] * x[c] + (1.0 - mu[c]) * prev[c];
}

}  // namespace

Matrix time_mix_forward(const Matrix& x, const TimeMixParams& p, TimeMixActs* acts) {
  Matrix shifted = token_shift(x);
  Matrix xr = interpolate(x, shifted, p.mu_r);
  Matrix xk = interpolate(x, shifted, p.mu_k);
  Matrix xv = interpolate(x, shifted, p.mu_v);
  Matrix r = project(xr, p.w_r);
  Matrix k = project(xk, p.w_k);
  Matrix v = project(xv, p.w_v);
  Matrix wkv = wkv_parallel(k, v, p.wkv);
  Matrix gated(x.rows, x.cols);
  for (std::size_t i = 0; i < gated.data.size(); ++i)
    gated.data[i] = sigmoid(r.data[i]) * wkv.data[i];
  Matrix out = project(gated, p.w_o);
  if (acts) {
    acts->shifted = std::move(shifted);
    acts->xr = std::move(xr);
    acts->xk = std::move(xk);
    acts->xv = std::move(xv);
    acts->r = std::move(r);
    acts->k = std::move(k);
    acts->v = std::move(v);
    acts->wkv_out = std::move(wkv);
    acts->gated = std::move(gated);
  }
  return out;
}

Matrix channel_mix_forward(const Matrix& x, const ChannelMixParams& p,
                           ChannelMixActs* acts) {
  Matrix shifted = token_shift(x);
  Matrix xr = interpolate(x, shifted, p.mu_r);
  Matrix xk = interpolate(x, shifted, p.mu_k);
  Matrix r = project(xr, p.w_r);
  Matrix k = project(xk, p.w_k);
  Matrix hidden(k.rows, k.cols);
  for (std::size_t i = 0; i < k.data.size(); ++i)
    hidden.data[i] = squared_relu(k.data[i]);
  Matrix up = project(hidden, p.w_v);
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = sigmoid(r.data[i]) * up.data[i];
  if (acts) {
    acts->shifted = std::move(shifted);
    acts->xr = std::move(xr);
    acts->xk = std::move(xk);
    acts->r = std::move(r);
    acts->k = std::move(k);
    acts->hidden = std::move(hidden);
    acts->up = std::move(up);
  }
  return out;
}

Matrix block_forward(const Matrix& x, const BlockParams& p, BlockActs* acts) {
  Matrix ln1 = layer_norm_rows(x, p.ln1.gamma, p.ln1.beta);
  Matrix tm = time_mix_forward(ln1, p.tm, acts ? &acts->tm : nullptr);
  Matrix mid = add(x, tm);
  Matrix ln2 = layer_norm_rows(mid, p.ln2.gamma, p.ln2.beta);
  Matrix cm = channel_mix_forward(ln2, p.cm, acts ? &acts->cm : nullptr);
  Matrix out = add(mid, cm);
  if (acts) {
    acts->x_in = x;
    acts->ln1_out = std::move(ln1);
    acts->mid = std::move(mid);
    acts->ln2_out = std::move(ln2);
  }
  return out;
}

Vector time_mix_step(const Vector& x, Vector& prev_x, WkvState& wkv_state,
                     const TimeMixParams& p) {
  Vector xr, xk, xv;
  interpolate_vec(x, prev_x, p.mu_r, xr);
  interpolate_vec(x, prev_x, p.mu_k, xk);
  interpolate_vec(x, prev_x, p.mu_v, xv);
  prev_x = x;
  Vector r = matvec(p.w_r, xr);
  Vector k = matvec(p.w_k, xk);
  Vector v = matvec(p.w_v, xv);
  Vector wkv = wkv_step(wkv_state, k, v, p.wkv);
  Vector gated(x.size());
  for (std::size_t c = 0; c < x.size(); ++c) gated[c] = sigmoid(r[c]) * wkv[c];
  return matvec(p.w_o, gated);
}

Vector channel_mix_step(const Vector& x, Vector& prev_x, const ChannelMixParams& p) {
  Vector xr, xk;
  interpolate_vec(x, prev_x, p.mu_r, xr);
  interpolate_vec(x, prev_x, p.mu_k, xk);
  prev_x = x;
  Vector r = matvec(p.w_r, xr);
  Vector k = matvec(p.w_k, xk);
  for (double& h : k) h = squared_relu(h);
  Vector up = matvec(p.w_v, k);
  Vector out(x.size());
  for (std::size_t c = 0; c < x.size(); ++c) out[c] = sigmoid(r[c]) * up[c];
  return out;
}

Vector block_step(const Vector& x, BlockState& state, const BlockParams& p) {
  Vector ln1 = layer_norm(x, p.ln1.gamma, p.ln1.beta);
  Vector tm = time_mix_step(ln1, state.tm_prev_x, state.wkv, p.tm);
  Vector mid = add(x, tm);
  Vector ln2 = layer_norm(mid, p.ln2.gamma, p.ln2.beta);
  Vector cm = channel_mix_step(ln2, state.cm_prev_x, p.cm);
  return add(mid, cm);
}

}  // namespace rwkv
