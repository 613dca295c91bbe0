#pragma once

#include <limits>

#include "rwkv/tensor.hpp"

namespace rwkv {

// Per-channel attention parameters. The stored decay parameter s maps to the
// effective decay rate w = exp(s), which keeps w >= 0 (so e^{-w} lies in
// (0, 1]) for every real s the optimizer may reach.
struct WkvParams {
  Vector decay_param;  // s, one per channel
  Vector bonus;        // u, extra log-weight for the current token

  std::size_t dim() const { return decay_param.size(); }
  Vector effective_decay() const;  // w = exp(s)
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Running numerator/denominator with a shared exponent factored out:
// true_num = e^shexp * num, true_den = e^shexp * den. The fresh state uses
// shexp = -inf (and e^{-inf - q} == 0), which reproduces the special-cased
// first step without branching.
struct WkvState {
  Vector num;    // a'
  Vector den;    // b'
  Vector shexp;  // p

  static WkvState initial(std::size_t d) {
    WkvState s;
    s.num.assign(d, 0.0);
    s.den.assign(d, 0.0);
    s.shexp.assign(d, kNegInf);
    return s;
  }
  std::size_t dim() const { return num.size(); }
};

// One channel, one timestep. Returns the output and advances the state in
// place. All exponents are differences against a running maximum, hence <= 0:
// no overflow for any finite inputs, and den >= 1 after the first step.
inline double wkv_channel_step(double& num, double& den, double& shexp,
                               double w, double u, double k, double v) {
  const double q = shexp > u + k ? shexp : u + k;
  const double e_state = std::exp(shexp - q);
  const double e_cur = std::exp(u + k - q);
  const double out = (e_state * num + e_cur * v) / (e_state * den + e_cur);
  const double decayed = shexp - w;
  const double qn = decayed > k ? decayed : k;
  const double e_dec = std::exp(decayed - qn);
  const double e_k = std::exp(k - qn);
  num = e_dec * num + e_k * v;
  den = e_dec * den + e_k;
  shexp = qn;
  return out;
}

// Whole-sequence evaluation: row t is the decay-weighted average of v_0..v_t
// with log-weights -(t-1-i)*w + k_i for i < t and u + k_t for the current
// token. Evaluated as a scan with per-position running-max stabilization, so
// any finite K is safe. Throws std::invalid_argument on shape mismatch or
// non-finite input.
Matrix wkv_parallel(const Matrix& k, const Matrix& v, const WkvParams& params);

// Single-token recurrence step over all channels; the unrolled sequence of
// steps reproduces wkv_parallel row by row.
Vector wkv_step(WkvState& state, const Vector& k_t, const Vector& v_t,
                const WkvParams& params);

struct WkvGrads {
  Matrix k;            // T×d
  Matrix v;            // T×d
  Vector decay_param;  // d, already chained through w = exp(s)
  Vector bonus;        // d
};

// Analytic gradients of the whole-sequence output with respect to K, V, the
// stored decay parameter and the bonus, given upstream grad_out [T×d].
// Uses the same shared-exponent stabilization as the forward scan.
WkvGrads wkv_backward(const Matrix& k, const Matrix& v, const WkvParams& params,
                      const Matrix& grad_out);

}  // namespace rwkv
