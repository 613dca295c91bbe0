#include "rwkv/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>

namespace rwkv {

namespace {

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

}  // namespace

std::vector<BenchRecord> bench_generation(const Parameters& params,
                                          const ModelConfig& cfg,
                                          std::size_t n_tokens,
                                          std::size_t warmup,
                                          std::size_t repeats) {
  InferenceState state = init_state(cfg);
  int token = 0;
  Vector logits;
  for (std::size_t i = 0; i < warmup; ++i) {
    logits = forward_step(params, cfg, token, state);
    token = static_cast<int>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
  }

  std::vector<BenchRecord> records;
  records.reserve(n_tokens);
  double cumulative = 0.0;
  for (std::size_t i = 0; i < n_tokens; ++i) {
    const InferenceState snapshot = repeats > 1 ? state : InferenceState{};
    const std::uint64_t flops_before = flop_count();
    const auto t0 = Clock::now();
    logits = forward_step(params, cfg, token, state);
    const auto t1 = Clock::now();
    const std::uint64_t step_flops = flop_count() - flops_before;
    double best = ms_between(t0, t1);
    for (std::size_t rep = 1; rep < repeats; ++rep) {
      InferenceState replay = snapshot;
      const auto r0 = Clock::now();
      (void)forward_step(params, cfg, token, replay);
      const auto r1 = Clock::now();
      best = std::min(best, ms_between(r0, r1));
    }
    token = static_cast<int>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    BenchRecord rec;
    rec.token_index = i;
    rec.per_token_ms = best;
    cumulative += best;
    rec.cumulative_ms = cumulative;
    rec.state_scalars = state.scalar_count();
    rec.step_flops = step_flops;
    records.push_back(rec);
  }
  return records;
}

Vector naive_causal_attention_step(const Vector& q, const Matrix& key_cache,
                                   const Matrix& value_cache) {
  if (key_cache.rows == 0 || !key_cache.same_shape(value_cache) ||
      q.size() != key_cache.cols)
    throw std::invalid_argument("attention: cache shape mismatch");
  // scores = K q / sqrt(d)
  Vector scores = matvec(key_cache, q);
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.size()));
  double max_score = -std::numeric_limits<double>::infinity();
  for (double& s : scores) {
    s *= scale;
    max_score = std::max(max_score, s);
  }
  double total = 0.0;
  for (double& s : scores) {
    s = std::exp(s - max_score);
    total += s;
  }
  for (double& s : scores) s /= total;
  // out[c] = sum_i p_i v[i][c], the textbook per-channel reduction (strided
  // walk down each cache column)
  Vector out(q.size(), 0.0);
  for (std::size_t c = 0; c < q.size(); ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < value_cache.rows; ++i)
      sum += scores[i] * value_cache(i, c);
    out[c] = sum;
  }
  return out;
}

std::vector<BenchRecord> bench_baseline_attention(const ModelConfig& cfg,
                                                  std::size_t n_tokens) {
  if (n_tokens > 4096)
    throw std::invalid_argument("bench_baseline_attention: toy sizes only");
  const std::size_t d = cfg.dim;
  const std::size_t layers = cfg.layers;

  // Fixed random projections; the baseline only has to show its asymptotics.
  Rng rng(12345);
  struct AttnLayer {
    Matrix wq, wk, wv, wo;
    Matrix key_cache, value_cache;  // grows one row per token
  };
  std::vector<AttnLayer> net(layers);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (AttnLayer& l : net) {
    l.wq = Matrix(d, d);
    l.wk = Matrix(d, d);
    l.wv = Matrix(d, d);
    l.wo = Matrix(d, d);
    for (double* m : {l.wq.data.data(), l.wk.data.data(), l.wv.data.data(),
                      l.wo.data.data()})
      for (std::size_t i = 0; i < d * d; ++i) m[i] = rng.normal(0.0, sd);
    l.key_cache = Matrix(0, d);
    l.value_cache = Matrix(0, d);
  }

  auto append_row = [d](Matrix& cache, const Vector& row) {
    cache.data.insert(cache.data.end(), row.begin(), row.end());
    cache.rows += 1;
    cache.cols = d;
  };

  std::vector<BenchRecord> records;
  records.reserve(n_tokens);
  double cumulative = 0.0;
  Vector x(d);
  for (std::size_t c = 0; c < d; ++c) x[c] = rng.normal(0.0, 1.0);

  for (std::size_t i = 0; i < n_tokens; ++i) {
    const std::uint64_t flops_before = flop_count();
    const auto t0 = Clock::now();
    std::size_t cache_scalars = 0;
    for (AttnLayer& l : net) {
      Vector q = matvec(l.wq, x);
      Vector k = matvec(l.wk, x);
      Vector v = matvec(l.wv, x);
      append_row(l.key_cache, k);
      append_row(l.value_cache, v);
      Vector ctx = naive_causal_attention_step(q, l.key_cache, l.value_cache);
      Vector o = matvec(l.wo, ctx);
      for (std::size_t c = 0; c < d; ++c) x[c] += o[c];
      // keep activations bounded over thousands of steps
      double norm = 0.0;
      for (double xc : x) norm += xc * xc;
      norm = std::sqrt(norm / static_cast<double>(d));
      if (norm > 1.0)
        for (double& xc : x) xc /= norm;
      cache_scalars += l.key_cache.data.size() + l.value_cache.data.size();
    }
    const auto t1 = Clock::now();
    BenchRecord rec;
    rec.token_index = i;
    rec.per_token_ms = ms_between(t0, t1);
    cumulative += rec.per_token_ms;
    rec.cumulative_ms = cumulative;
    rec.state_scalars = cache_scalars;
    rec.step_flops = flop_count() - flops_before;
    records.push_back(rec);
  }
  return records;
}

namespace {

// Single-precision mirror of the sequential path. Kept local to the
// benchmark: the reference implementation is 64-bit everywhere.
struct F32Block {
  std::vector<float> ln1_g, ln1_b, ln2_g, ln2_b;
  std::vector<float> w_r, w_k, w_v, w_o;          // d×d row-major
  std::vector<float> mu_r, mu_k, mu_v;
  std::vector<float> decay_w, bonus;              // effective decay e^s
  std::vector<float> cw_r, cw_k, cw_v;            // d×d, h×d, d×h
  std::vector<float> cmu_r, cmu_k;
};

struct F32Model {
  std::size_t dim = 0, ffn = 0, vocab = 0;
  std::vector<float> embedding, head;
  std::vector<float> ln0_g, ln0_b, lnout_g, lnout_b;
  std::vector<F32Block> blocks;
};

struct F32State {
  std::vector<float> tm_prev, cm_prev, num, den, shexp;  // per layer, packed
};

std::vector<float> to_f32(const Vector& v) {
  return std::vector<float>(v.begin(), v.end());
}
std::vector<float> to_f32(const Matrix& m) {
  return std::vector<float>(m.data.begin(), m.data.end());
}

F32Model cast_model(const Parameters& p, const ModelConfig& cfg) {
  F32Model m;
  m.dim = cfg.dim;
  m.ffn = cfg.ffn();
  m.vocab = cfg.vocab;
  m.embedding = to_f32(p.embedding);
  m.head = to_f32(p.head);
  m.ln0_g = to_f32(p.ln0.gamma);
  m.ln0_b = to_f32(p.ln0.beta);
  m.lnout_g = to_f32(p.ln_out.gamma);
  m.lnout_b = to_f32(p.ln_out.beta);
  for (const BlockParams& b : p.blocks) {
    F32Block fb;
    fb.ln1_g = to_f32(b.ln1.gamma);
    fb.ln1_b = to_f32(b.ln1.beta);
    fb.ln2_g = to_f32(b.ln2.gamma);
    fb.ln2_b = to_f32(b.ln2.beta);
    fb.w_r = to_f32(b.tm.w_r);
    fb.w_k = to_f32(b.tm.w_k);
    fb.w_v = to_f32(b.tm.w_v);
    fb.w_o = to_f32(b.tm.w_o);
    fb.mu_r = to_f32(b.tm.mu_r);
    fb.mu_k = to_f32(b.tm.mu_k);
    fb.mu_v = to_f32(b.tm.mu_v);
    fb.decay_w = to_f32(b.tm.wkv.effective_decay());
    fb.bonus = to_f32(b.tm.wkv.bonus);
    fb.cw_r = to_f32(b.cm.w_r);
    fb.cw_k = to_f32(b.cm.w_k);
    fb.cw_v = to_f32(b.cm.w_v);
    fb.cmu_r = to_f32(b.cm.mu_r);
    fb.cmu_k = to_f32(b.cm.mu_k);
    m.blocks.push_back(std::move(fb));
  }
  return m;
}

void f32_matvec(const std::vector<float>& w, const float* x, std::size_t rows,
                std::size_t cols, float* out) {
  for (std::size_t i = 0; i < rows; ++i) {
    float sum = 0.0f;
    const float* row = w.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) sum += row[j] * x[j];
    out[i] = sum;
  }
}

void f32_layer_norm(const float* x, std::size_t d, const std::vector<float>& g,
                    const std::vector<float>& b, float* out) {
  float mean = 0.0f;
  for (std::size_t i = 0; i < d; ++i) mean += x[i];
  mean /= static_cast<float>(d);
  float var = 0.0f;
  for (std::size_t i = 0; i < d; ++i) {
    const float c = x[i] - mean;
    var += c * c;
  }
  var /= static_cast<float>(d);
  const float inv = 1.0f / std::sqrt(var + 1e-5f);
  for (std::size_t i = 0; i < d; ++i) out[i] = (x[i] - mean) * inv * g[i] + b[i];
}

void f32_step(const F32Model& m, int token, F32State& st, std::vector<float>& logits) {
  const std::size_t d = m.dim, h = m.ffn;
  std::vector<float> x(m.embedding.begin() + token * d,
                       m.embedding.begin() + (token + 1) * d);
  std::vector<float> buf(d), xr(d), xk(d), xv(d), r(d), k(d), v(d), hid(h);
  if (!m.ln0_g.empty()) {
    f32_layer_norm(x.data(), d, m.ln0_g, m.ln0_b, buf.data());
    x = buf;
  }
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    const F32Block& b = m.blocks[l];
    float* tm_prev = st.tm_prev.data() + l * d;
    float* cm_prev = st.cm_prev.data() + l * d;
    float* num = st.num.data() + l * d;
    float* den = st.den.data() + l * d;
    float* shexp = st.shexp.data() + l * d;

    f32_layer_norm(x.data(), d, b.ln1_g, b.ln1_b, buf.data());
    for (std::size_t c = 0; c < d; ++c) {
      xr[c] = b.mu_r[c] * buf[c] + (1.0f - b.mu_r[c]) * tm_prev[c];
      xk[c] = b.mu_k[c] * buf[c] + (1.0f - b.mu_k[c]) * tm_prev[c];
      xv[c] = b.mu_v[c] * buf[c] + (1.0f - b.mu_v[c]) * tm_prev[c];
      tm_prev[c] = buf[c];
    }
    f32_matvec(b.w_r, xr.data(), d, d, r.data());
    f32_matvec(b.w_k, xk.data(), d, d, k.data());
    f32_matvec(b.w_v, xv.data(), d, d, v.data());
    for (std::size_t c = 0; c < d; ++c) {
      const float q = std::max(shexp[c], b.bonus[c] + k[c]);
      const float e1 = std::exp(shexp[c] - q);
      const float e2 = std::exp(b.bonus[c] + k[c] - q);
      const float wkv = (e1 * num[c] + e2 * v[c]) / (e1 * den[c] + e2);
      const float decayed = shexp[c] - b.decay_w[c];
      const float qn = std::max(decayed, k[c]);
      const float ed = std::exp(decayed - qn);
      const float ek = std::exp(k[c] - qn);
      num[c] = ed * num[c] + ek * v[c];
      den[c] = ed * den[c] + ek;
      shexp[c] = qn;
      xr[c] = (1.0f / (1.0f + std::exp(-r[c]))) * wkv;  // reuse xr as gated
    }
    f32_matvec(b.w_o, xr.data(), d, d, xk.data());
    for (std::size_t c = 0; c < d; ++c) x[c] += xk[c];

    f32_layer_norm(x.data(), d, b.ln2_g, b.ln2_b, buf.data());
    for (std::size_t c = 0; c < d; ++c) {
      xr[c] = b.cmu_r[c] * buf[c] + (1.0f - b.cmu_r[c]) * cm_prev[c];
      xk[c] = b.cmu_k[c] * buf[c] + (1.0f - b.cmu_k[c]) * cm_prev[c];
      cm_prev[c] = buf[c];
    }
    f32_matvec(b.cw_r, xr.data(), d, d, r.data());
    f32_matvec(b.cw_k, xk.data(), h, d, hid.data());
    for (std::size_t c = 0; c < h; ++c) {
      const float relu = hid[c] > 0.0f ? hid[c] : 0.0f;
      hid[c] = relu * relu;
    }
    f32_matvec(b.cw_v, hid.data(), d, h, xv.data());
    for (std::size_t c = 0; c < d; ++c)
      x[c] += (1.0f / (1.0f + std::exp(-r[c]))) * xv[c];
  }
  f32_layer_norm(x.data(), d, m.lnout_g, m.lnout_b, buf.data());
  logits.resize(m.vocab);
  f32_matvec(m.head, buf.data(), m.vocab, d, logits.data());
}

}  // namespace

std::vector<BenchRecord> bench_generation_f32(const Parameters& params,
                                              const ModelConfig& cfg,
                                              std::size_t n_tokens,
                                              std::size_t warmup,
                                              std::size_t repeats) {
  const F32Model model = cast_model(params, cfg);
  const std::size_t d = cfg.dim, layers = cfg.layers;
  F32State state;
  state.tm_prev.assign(layers * d, 0.0f);
  state.cm_prev.assign(layers * d, 0.0f);
  state.num.assign(layers * d, 0.0f);
  state.den.assign(layers * d, 0.0f);
  state.shexp.assign(layers * d, -std::numeric_limits<float>::infinity());

  std::vector<float> logits;
  int token = 0;
  auto argmax = [&]() {
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) -
                            logits.begin());
  };
  for (std::size_t i = 0; i < warmup; ++i) {
    f32_step(model, token, state, logits);
    token = argmax();
  }

  std::vector<BenchRecord> records;
  records.reserve(n_tokens);
  double cumulative = 0.0;
  const std::size_t state_scalars = 5 * d * layers;
  for (std::size_t i = 0; i < n_tokens; ++i) {
    const F32State snapshot = repeats > 1 ? state : F32State{};
    const auto t0 = Clock::now();
    f32_step(model, token, state, logits);
    const auto t1 = Clock::now();
    double best = ms_between(t0, t1);
    for (std::size_t rep = 1; rep < repeats; ++rep) {
      F32State replay = snapshot;
      std::vector<float> scratch;
      const auto r0 = Clock::now();
      f32_step(model, token, replay, scratch);
      const auto r1 = Clock::now();
      best = std::min(best, ms_between(r0, r1));
    }
    token = argmax();
    BenchRecord rec;
    rec.token_index = i;
    rec.per_token_ms = best;
    cumulative += best;
    rec.cumulative_ms = cumulative;
    rec.state_scalars = state_scalars;
    records.push_back(rec);
  }
  return records;
}

PowerLawFit fit_power_law(std::span<const std::pair<double, double>> points) {
  if (points.size() < 2)
    throw std::invalid_argument("fit_power_law: need at least 2 points");
  double sx = 0.0, sy = 0.0;
  for (const auto& [x, y] : points) {
    if (!(x > 0.0) || !(y > 0.0))
      throw std::invalid_argument("fit_power_law: points must be positive");
    sx += std::log(x);
    sy += std::log(y);
  }
  const double n = static_cast<double>(points.size());
  const double mx = sx / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& [x, y] : points) {
    const double dx = std::log(x) - mx;
    const double dy = std::log(y) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  PowerLawFit fit;
  if (sxx == 0.0)
    throw std::invalid_argument("fit_power_law: all x identical");
  fit.exponent = sxy / sxx;
  fit.log_intercept = my - fit.exponent * mx;
  if (syy == 0.0) {
    fit.r_squared = 1.0;  // constant y fitted exactly
  } else {
    double ss_res = 0.0;
    for (const auto& [x, y] : points) {
      const double pred = fit.log_intercept + fit.exponent * std::log(x);
      const double r = std::log(y) - pred;
      ss_res += r * r;
    }
    fit.r_squared = 1.0 - ss_res / syy;
    if (fit.r_squared < 0.0) fit.r_squared = 0.0;
    if (fit.r_squared > 1.0) fit.r_squared = 1.0;
  }
  return fit;
}

void write_bench_csv(std::ostream& out, std::span<const BenchRecord> records) {
  out << "token_index,cumulative_ms,per_token_ms,state_scalars\n";
  for (const BenchRecord& r : records)
    out << r.token_index << ',' << r.cumulative_ms << ',' << r.per_token_ms << ','
        << r.state_scalars << '\n';
}

void write_plot_script(std::ostream& out, const std::string& csv_path) {
  out << "set datafile separator ','\n"
         "set key autotitle columnhead\n"
         "set xlabel 'token index'\n"
         "set ylabel 'cumulative ms'\n"
         "plot '" << csv_path << "' using 1:2 with lines\n";
}

}  // namespace rwkv
