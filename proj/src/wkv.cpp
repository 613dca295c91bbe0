#include "rwkv/wkv.hpp"

#include <algorithm>

namespace rwkv {

Vector WkvParams::effective_decay() const { return rwkv::exp(decay_param); }

namespace {

void check_inputs(const Matrix& k, const Matrix& v, const WkvParams& params) {
  if (!k.same_shape(v)) throw std::invalid_argument("wkv: K and V shapes disagree");
  if (k.rows == 0) throw std::invalid_argument("wkv: empty sequence");
  if (k.cols != params.dim() || params.bonus.size() != params.dim())
    throw std::invalid_argument("wkv: parameter dimension mismatch");
  if (!all_finite(k) || !all_finite(v))
    throw std::invalid_argument("wkv: non-finite input");
}

}  // namespace

Matrix wkv_parallel(const Matrix& k, const Matrix& v, const WkvParams& params) {
  check_inputs(k, v, params);
  const std::size_t t_len = k.rows;
  const std::size_t d = k.cols;
  const Vector w = params.effective_decay();
  WkvState state = WkvState::initial(d);
  Matrix out(t_len, d);
  for (std::size_t t = 0; t < t_len; ++t) {
    const double* k_row = k.row(t);
    const double* v_row = v.row(t);
    double* out_row = out.row(t);
    for (std::size_t c = 0; c < d; ++c) {
      out_row[c] = wkv_channel_step(state.num[c], state.den[c], state.shexp[c],
                                    w[c], params.bonus[c], k_row[c], v_row[c]);
    }
  }
  return out;
}

Vector wkv_step(WkvState& state, const Vector& k_t, const Vector& v_t,
                const WkvParams& params) {
  const std::size_t d = params.dim();
  if (k_t.size() != d || v_t.size() != d || state.dim() != d)
    throw std::invalid_argument("wkv_step: dimension mismatch");
  const Vector w = params.effective_decay();
  Vector out(d);
  for (std::size_t c = 0; c < d; ++c) {
    out[c] = wkv_channel_step(state.num[c], state.den[c], state.shexp[c], w[c],
                              params.bonus[c], k_t[c], v_t[c]);
  }
  return out;
}

// Reverse pass. Writing B_t for the true (unscaled) denominator at row t and
// alpha_{t,i} for the weight of v_i in row t, the per-entry derivatives are
//   d y_t / d v_i = alpha_{t,i} / B_t
//   d y_t / d k_i = alpha_{t,i} (v_i - y_t) / B_t
//   d y_t / d u   = alpha_{t,t} (v_t - y_t) / B_t
//   d y_t / d w   = -sum_{i<t} (t-1-i) alpha_{t,i} (v_i - y_t) / B_t.
// Summed against grad_out these become suffix scans: with z_t = g_t / B_t,
//   P_i = sum_{t>i} e^{-(t-1-i)w} z_t          P_{i-1} = z_i + e^{-w} P_i
//   Q_i = sum_{t>i} e^{-(t-1-i)w} y_t z_t      Q_{i-1} = y_i z_i + e^{-w} Q_i
//   R_i = sum_{t>i} (t-1-i) e^{-(t-1-i)w} z_t  R_{i-1} = e^{-w} (R_i + P_i)
//   S_i = like R with y_t z_t                  S_{i-1} = e^{-w} (S_i + Q_i)
// and
//   dK_i = alpha_{i,i} z_i (v_i - y_i) + e^{k_i} (v_i P_i - Q_i)
//   dV_i = alpha_{i,i} z_i             + e^{k_i} P_i
//   du  += alpha_{i,i} z_i (v_i - y_i)
//   dw  -= e^{k_i} (v_i R_i - S_i).
// B_t spans e^{±|k| T}, so the scan carries a shared exponent rho with
// mantissas P~ = e^{-rho} P etc., mirroring the forward stabilization.
WkvGrads wkv_backward(const Matrix& k, const Matrix& v, const WkvParams& params,
                      const Matrix& grad_out) {
  check_inputs(k, v, params);
  if (!grad_out.same_shape(k))
    throw std::invalid_argument("wkv_backward: grad_out shape mismatch");
  const std::size_t t_len = k.rows;
  const std::size_t d = k.cols;
  const Vector w = params.effective_decay();

  // Forward replay, keeping per-row q (output exponent), the stabilized
  // denominator beta = e^{-q} B, and the output y.
  Matrix q_row(t_len, d), beta(t_len, d), y(t_len, d);
  {
    WkvState st = WkvState::initial(d);
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t c = 0; c < d; ++c) {
        const double kc = k(t, c);
        const double vc = v(t, c);
        const double q = std::max(st.shexp[c], params.bonus[c] + kc);
        const double e_state = std::exp(st.shexp[c] - q);
        const double e_cur = std::exp(params.bonus[c] + kc - q);
        const double den = e_state * st.den[c] + e_cur;
        q_row(t, c) = q;
        beta(t, c) = den;
        y(t, c) = (e_state * st.num[c] + e_cur * vc) / den;
        const double decayed = st.shexp[c] - w[c];
        const double qn = std::max(decayed, kc);
        const double e_dec = std::exp(decayed - qn);
        const double e_k = std::exp(kc - qn);
        st.num[c] = e_dec * st.num[c] + e_k * vc;
        st.den[c] = e_dec * st.den[c] + e_k;
        st.shexp[c] = qn;
      }
    }
  }

  WkvGrads g;
  g.k = Matrix(t_len, d, 0.0);
  g.v = Matrix(t_len, d, 0.0);
  g.decay_param.assign(d, 0.0);
  g.bonus.assign(d, 0.0);

  // Suffix accumulators per channel, each scaled by e^rho.
  Vector p_acc(d, 0.0), q_acc(d, 0.0), r_acc(d, 0.0), s_acc(d, 0.0);
  Vector rho(d, kNegInf);
  Vector dw(d, 0.0);

  for (std::size_t t = t_len; t-- > 0;) {
    for (std::size_t c = 0; c < d; ++c) {
      const double kc = k(t, c);
      const double vc = v(t, c);
      const double yc = y(t, c);
      const double zt = grad_out(t, c) / beta(t, c);  // z~ = g / beta
      const double diag = std::exp(params.bonus[c] + kc - q_row(t, c)) * zt;
      // e^{k + rho} stays bounded: alpha_{t',t} <= B_{t'} pushes the exponent
      // under log(T)+log(beta).
      const double suffix_scale = std::exp(kc + rho[c]);
      g.v(t, c) = diag + suffix_scale * p_acc[c];
      g.k(t, c) = diag * (vc - yc) + suffix_scale * (vc * p_acc[c] - q_acc[c]);
      g.bonus[c] += diag * (vc - yc);
      dw[c] -= suffix_scale * (vc * r_acc[c] - s_acc[c]);

      // Fold row t into the suffix (serving rows t-1, t-2, ...).
      const double rho_new = std::max(-q_row(t, c), rho[c] - w[c]);
      const double f_old = std::exp(rho[c] - w[c] - rho_new);
      const double f_cur = std::exp(-q_row(t, c) - rho_new);
      r_acc[c] = f_old * (r_acc[c] + p_acc[c]);
      s_acc[c] = f_old * (s_acc[c] + q_acc[c]);
      p_acc[c] = f_cur * zt + f_old * p_acc[c];
      q_acc[c] = f_cur * zt * yc + f_old * q_acc[c];
      rho[c] = rho_new;
    }
  }

  // Chain rule through w = exp(s).
  for (std::size_t c = 0; c < d; ++c) g.decay_param[c] = dw[c] * w[c];
  return g;
}

}  // namespace rwkv
