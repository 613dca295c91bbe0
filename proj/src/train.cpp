#include "rwkv/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>

#include "rwkv/rng.hpp"

namespace rwkv {

std::optional<LrPreset> lr_preset(const std::string& name) {
  for (const LrPreset& p : kLrPresets)
    if (name == p.name) return p;
  return std::nullopt;
}

LossBreakdown loss(const Matrix& logits, std::span<const int> targets,
                   double z_coeff) {
  if (logits.rows != targets.size())
    throw std::invalid_argument("loss: logits/targets length mismatch");
  const std::size_t t_len = logits.rows;
  const std::size_t vocab = logits.cols;
  LossBreakdown out;
  out.per_position_ce.resize(t_len);
  out.per_position_lse.resize(t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    const int y = targets[t];
    if (y < 0 || static_cast<std::size_t>(y) >= vocab)
      throw std::invalid_argument("loss: target out of range");
    const double* row = logits.row(t);
    double max_logit = row[0];
    for (std::size_t j = 1; j < vocab; ++j) max_logit = std::max(max_logit, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) sum += std::exp(row[j] - max_logit);
    const double lse = max_logit + std::log(sum);
    out.per_position_lse[t] = lse;
    out.per_position_ce[t] = lse - row[static_cast<std::size_t>(y)];
    out.cross_entropy += out.per_position_ce[t];
    out.z_term += lse * lse;
  }
  out.cross_entropy /= static_cast<double>(t_len);
  out.z_term = z_coeff * out.z_term / static_cast<double>(t_len);
  out.total = out.cross_entropy + out.z_term;
  return out;
}

namespace {

// dx for y = (x - mean) / sqrt(popvar + eps) * gamma + beta, one row.
// Accumulates dgamma/dbeta.
void layer_norm_backward_row(const double* x, const double* dy, std::size_t d,
                             const Vector& gamma, double eps, double* dx,
                             Vector& dgamma, Vector& dbeta) {
  double mean = 0.0;
  for (std::size_t i = 0; i < d; ++i) mean += x[i];
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double c = x[i] - mean;
    var += c * c;
  }
  var /= static_cast<double>(d);
  const double inv = 1.0 / std::sqrt(var + eps);

  double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double xhat = (x[i] - mean) * inv;
    const double dxhat = dy[i] * gamma[i];
    dgamma[i] += dy[i] * xhat;
    dbeta[i] += dy[i];
    mean_dxhat += dxhat;
    mean_dxhat_xhat += dxhat * xhat;
  }
  mean_dxhat /= static_cast<double>(d);
  mean_dxhat_xhat /= static_cast<double>(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double xhat = (x[i] - mean) * inv;
    const double dxhat = dy[i] * gamma[i];
    dx[i] = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
  }
}

Matrix layer_norm_backward_rows(const Matrix& x, const Matrix& dy,
                                const LayerNormParams& ln, Vector& dgamma,
                                Vector& dbeta) {
  Matrix dx(x.rows, x.cols);
  for (std::size_t t = 0; t < x.rows; ++t)
    layer_norm_backward_row(x.row(t), dy.row(t), x.cols, ln.gamma, kLayerNormEps,
                            dx.row(t), dgamma, dbeta);
  return dx;
}

// Adjoint of token_shift: dx[t-1] += dshift[t].
void add_shift_backward(Matrix& dx, const Matrix& dshift) {
  for (std::size_t t = 1; t < dshift.rows; ++t) {
    const double* src = dshift.row(t);
    double* dst = dx.row(t - 1);
    for (std::size_t c = 0; c < dshift.cols; ++c) dst[c] += src[c];
  }
}

// Adjoint of xk = mu ⊙ x + (1-mu) ⊙ shifted, accumulating into all three.
void interpolate_backward(const Matrix& dxi, const Matrix& x, const Matrix& shifted,
                          const Vector& mu, Matrix& dx, Matrix& dshift, Vector& dmu) {
  for (std::size_t t = 0; t < dxi.rows; ++t) {
    const double* g = dxi.row(t);
    const double* xr = x.row(t);
    const double* sr = shifted.row(t);
    double* dxr = dx.row(t);
    double* dsr = dshift.row(t);
    for (std::size_t c = 0; c < dxi.cols; ++c) {
      dxr[c] += g[c] * mu[c];
      dsr[c] += g[c] * (1.0 - mu[c]);
      dmu[c] += g[c] * (xr[c] - sr[c]);
    }
  }
}

// Reverse of time_mix_forward. Returns the gradient w.r.t. the sub-block
// input (the post-norm sequence) and accumulates parameter gradients.
Matrix time_mix_backward(const Matrix& x_in, const TimeMixActs& acts,
                         const TimeMixParams& p, const Matrix& dout,
                         TimeMixParams& grads) {
  const std::size_t t_len = x_in.rows, d = x_in.cols;

  Matrix dgated = project_back(dout, p.w_o);
  accumulate_outer(grads.w_o, dout, acts.gated);

  Matrix dr(t_len, d), dwkv(t_len, d);
  for (std::size_t i = 0; i < dgated.data.size(); ++i) {
    const double s = sigmoid(acts.r.data[i]);
    dwkv.data[i] = dgated.data[i] * s;
    dr.data[i] = dgated.data[i] * acts.wkv_out.data[i] * s * (1.0 - s);
  }

  WkvGrads wg = wkv_backward(acts.k, acts.v, p.wkv, dwkv);
  for (std::size_t c = 0; c < d; ++c) {
    grads.wkv.decay_param[c] += wg.decay_param[c];
    grads.wkv.bonus[c] += wg.bonus[c];
  }

  Matrix dxr = project_back(dr, p.w_r);
  accumulate_outer(grads.w_r, dr, acts.xr);
  Matrix dxk = project_back(wg.k, p.w_k);
  accumulate_outer(grads.w_k, wg.k, acts.xk);
  Matrix dxv = project_back(wg.v, p.w_v);
  accumulate_outer(grads.w_v, wg.v, acts.xv);

  Matrix dx(t_len, d, 0.0), dshift(t_len, d, 0.0);
  interpolate_backward(dxr, x_in, acts.shifted, p.mu_r, dx, dshift, grads.mu_r);
  interpolate_backward(dxk, x_in, acts.shifted, p.mu_k, dx, dshift, grads.mu_k);
  interpolate_backward(dxv, x_in, acts.shifted, p.mu_v, dx, dshift, grads.mu_v);
  add_shift_backward(dx, dshift);
  return dx;
}

Matrix channel_mix_backward(const Matrix& x_in, const ChannelMixActs& acts,
                            const ChannelMixParams& p, const Matrix& dout,
                            ChannelMixParams& grads) {
  const std::size_t t_len = x_in.rows, d = x_in.cols;

  Matrix dup(t_len, d), dr(t_len, d);
  for (std::size_t i = 0; i < dout.data.size(); ++i) {
    const double s = sigmoid(acts.r.data[i]);
    dup.data[i] = dout.data[i] * s;
    dr.data[i] = dout.data[i] * acts.up.data[i] * s * (1.0 - s);
  }

  Matrix dhidden = project_back(dup, p.w_v);
  accumulate_outer(grads.w_v, dup, acts.hidden);

  Matrix dk(acts.k.rows, acts.k.cols);
  for (std::size_t i = 0; i < acts.k.data.size(); ++i) {
    const double kv = acts.k.data[i];
    dk.data[i] = kv > 0.0 ? dhidden.data[i] * 2.0 * kv : 0.0;
  }

  Matrix dxk = project_back(dk, p.w_k);
  accumulate_outer(grads.w_k, dk, acts.xk);
  Matrix dxr = project_back(dr, p.w_r);
  accumulate_outer(grads.w_r, dr, acts.xr);

  Matrix dx(t_len, d, 0.0), dshift(t_len, d, 0.0);
  interpolate_backward(dxr, x_in, acts.shifted, p.mu_r, dx, dshift, grads.mu_r);
  interpolate_backward(dxk, x_in, acts.shifted, p.mu_k, dx, dshift, grads.mu_k);
  add_shift_backward(dx, dshift);
  return dx;
}

// Reverse of block_forward; dout is the gradient at the block output.
Matrix block_backward(const BlockActs& acts, const BlockParams& p,
                      const Matrix& dout, BlockParams& grads) {
  // out = mid + channel_mix(ln2(mid))
  Matrix dln2 = channel_mix_backward(acts.ln2_out, acts.cm, p.cm, dout, grads.cm);
  Matrix dmid = layer_norm_backward_rows(acts.mid, dln2, p.ln2, grads.ln2.gamma,
                                         grads.ln2.beta);
  for (std::size_t i = 0; i < dmid.data.size(); ++i) dmid.data[i] += dout.data[i];

  // mid = x + time_mix(ln1(x))
  Matrix dln1 = time_mix_backward(acts.ln1_out, acts.tm, p.tm, dmid, grads.tm);
  Matrix dx = layer_norm_backward_rows(acts.x_in, dln1, p.ln1, grads.ln1.gamma,
                                       grads.ln1.beta);
  for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dmid.data[i];
  return dx;
}

}  // namespace

BackwardResult backward(const Parameters& params, const ModelConfig& cfg,
                        const Batch& batch, double z_coeff) {
  if (batch.seqs.empty()) throw std::invalid_argument("backward: empty batch");
  BackwardResult result;
  result.grads = make_parameters(cfg);
  const double inv_batch = 1.0 / static_cast<double>(batch.seqs.size());

  for (const std::vector<int>& seq : batch.seqs) {
    if (seq.size() < 2)
      throw std::invalid_argument("backward: sequence shorter than 2 tokens");
    const std::span<const int> tokens(seq.data(), seq.size() - 1);
    const std::span<const int> targets(seq.data() + 1, seq.size() - 1);
    const std::size_t t_len = tokens.size();

    ModelActs acts;
    Matrix logits = forward_parallel(params, cfg, tokens, &acts);
    LossBreakdown lb = loss(logits, targets, z_coeff);
    result.loss += lb.total * inv_batch;
    result.cross_entropy += lb.cross_entropy * inv_batch;

    // d total / d logit = (1/T)(softmax - onehot) + (2 z/T) lse * softmax,
    // and the whole sequence contributes with weight 1/batch.
    Matrix dlogits(t_len, cfg.vocab);
    const double scale = inv_batch / static_cast<double>(t_len);
    for (std::size_t t = 0; t < t_len; ++t) {
      const double* row = logits.row(t);
      double* g = dlogits.row(t);
      const double lse = lb.per_position_lse[t];
      const double zfac = 2.0 * z_coeff * lse;
      for (std::size_t j = 0; j < cfg.vocab; ++j) {
        const double p = std::exp(row[j] - lse);
        g[j] = scale * (p * (1.0 + zfac));
      }
      g[static_cast<std::size_t>(targets[t])] -= scale;
    }

    Matrix dnormed = project_back(dlogits, params.head);
    accumulate_outer(result.grads.head, dlogits, acts.ln_out_out);
    Matrix dbody = layer_norm_backward_rows(acts.body_out, dnormed, params.ln_out,
                                            result.grads.ln_out.gamma,
                                            result.grads.ln_out.beta);
    for (std::size_t l = params.blocks.size(); l-- > 0;)
      dbody = block_backward(acts.blocks[l], params.blocks[l], dbody,
                             result.grads.blocks[l]);
    Matrix demb = params.ln0.gamma.empty()
                      ? std::move(dbody)
                      : layer_norm_backward_rows(acts.embedded, dbody, params.ln0,
                                                 result.grads.ln0.gamma,
                                                 result.grads.ln0.beta);
    for (std::size_t t = 0; t < t_len; ++t) {
      double* dst = result.grads.embedding.row(static_cast<std::size_t>(tokens[t]));
      const double* src = demb.row(t);
      for (std::size_t c = 0; c < cfg.dim; ++c) dst[c] += src[c];
    }
  }
  return result;
}

double lr_at(std::size_t step, const TrainConfig& tc) {
  if (!tc.valid()) throw std::invalid_argument("lr_at: invalid config");
  if (step >= tc.total_steps) throw std::invalid_argument("lr_at: step out of range");
  if (step < tc.warmup_steps) return tc.init_lr;
  const std::size_t span = tc.total_steps - tc.warmup_steps;
  if (span == 1) return tc.end_lr;
  const double frac = static_cast<double>(step - tc.warmup_steps) /
                      static_cast<double>(span - 1);
  return tc.init_lr * std::pow(tc.end_lr / tc.init_lr, frac);
}

AdamState make_adam_state(const ModelConfig& cfg) {
  return AdamState{make_parameters(cfg), make_parameters(cfg), 0};
}

void adam_step(Parameters& params, const Gradients& grads, AdamState& state,
               double lr, const TrainConfig& tc) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(tc.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(tc.beta2, static_cast<double>(state.step));

  struct Tensor {
    double* p;
    const double* g;
    double* m;
    double* v;
    std::size_t n;
  };
  std::vector<Tensor> tensors;
  visit_tensors(params, [&](const std::string&, double* data,
                            const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    tensors.push_back({data, nullptr, nullptr, nullptr, n});
  });
  std::size_t i = 0;
  visit_tensors(const_cast<Gradients&>(grads),
                [&](const std::string&, double* data,
                    const std::vector<std::size_t>&) { tensors[i++].g = data; });
  i = 0;
  visit_tensors(state.m, [&](const std::string&, double* data,
                             const std::vector<std::size_t>&) { tensors[i++].m = data; });
  i = 0;
  visit_tensors(state.v, [&](const std::string&, double* data,
                             const std::vector<std::size_t>&) { tensors[i++].v = data; });

  for (Tensor& t : tensors) {
    for (std::size_t j = 0; j < t.n; ++j) {
      const double g = t.g[j];
      t.m[j] = tc.beta1 * t.m[j] + (1.0 - tc.beta1) * g;
      t.v[j] = tc.beta2 * t.v[j] + (1.0 - tc.beta2) * g * g;
      const double mhat = t.m[j] / bc1;
      const double vhat = t.v[j] / bc2;
      t.p[j] -= lr * mhat / (std::sqrt(vhat) + tc.adam_eps);
    }
  }
}

namespace {

std::string read_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corpus: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (bytes.empty()) throw std::runtime_error("empty corpus: " + path);
  return bytes;
}

double global_grad_norm(const Gradients& grads) {
  double sum = 0.0;
  visit_tensors(const_cast<Gradients&>(grads),
                [&](const std::string&, double* data,
                    const std::vector<std::size_t>& shape) {
                  std::size_t n = 1;
                  for (std::size_t s : shape) n *= s;
                  for (std::size_t j = 0; j < n; ++j) sum += data[j] * data[j];
                });
  return std::sqrt(sum);
}

void scale_grads(Gradients& grads, double factor) {
  visit_tensors(grads, [&](const std::string&, double* data,
                           const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    for (std::size_t j = 0; j < n; ++j) data[j] *= factor;
  });
}

}  // namespace

std::vector<TrainLogRow> train_run(Parameters params, const ModelConfig& cfg,
                                   const TrainConfig& tc,
                                   const std::string& corpus_path,
                                   std::ostream* log, Parameters* out_final) {
  if (!tc.valid()) throw std::invalid_argument("train_run: invalid train config");
  if (tc.ctx > cfg.ctx_len)
    throw std::invalid_argument("train_run: ctx exceeds model ctx_len");
  std::string corpus = read_corpus(corpus_path);
  // Tile short corpora so any window fits.
  while (corpus.size() < tc.ctx + 1) corpus += corpus;

  Rng rng(tc.seed);
  AdamState adam = make_adam_state(cfg);
  std::vector<TrainLogRow> rows;
  rows.reserve(tc.total_steps);
  const std::size_t max_offset = corpus.size() - (tc.ctx + 1);

  for (std::size_t step = 0; step < tc.total_steps; ++step) {
    const auto started = std::chrono::steady_clock::now();
    Batch batch;
    batch.seqs.reserve(tc.batch);
    for (std::size_t b = 0; b < tc.batch; ++b) {
      const std::size_t off = max_offset == 0 ? 0 : rng.below(max_offset + 1);
      std::vector<int> seq(tc.ctx + 1);
      for (std::size_t j = 0; j <= tc.ctx; ++j)
        seq[j] = static_cast<unsigned char>(corpus[off + j]);
      batch.seqs.push_back(std::move(seq));
    }

    BackwardResult bw = backward(params, cfg, batch, tc.z_coeff);
    if (tc.grad_clip > 0.0) {
      const double norm = global_grad_norm(bw.grads);
      if (norm > tc.grad_clip) scale_grads(bw.grads, tc.grad_clip / norm);
    }
    const double lr = lr_at(step, tc);
    adam_step(params, bw.grads, adam, lr, tc);

    const auto finished = std::chrono::steady_clock::now();
    TrainLogRow row;
    row.step = step;
    row.lr = lr;
    row.loss = bw.loss;
    row.bpc = bw.cross_entropy / std::log(2.0);
    row.wall_ms =
        std::chrono::duration<double, std::milli>(finished - started).count();
    rows.push_back(row);
    if (log) {
      (*log) << "{\"step\":" << row.step << ",\"lr\":" << row.lr
             << ",\"loss\":" << row.loss << ",\"bpc\":" << row.bpc
             << ",\"wall_ms\":" << row.wall_ms << "}\n";
    }

    if (tc.checkpoint_every > 0 && !tc.checkpoint_prefix.empty() &&
        (step + 1) % tc.checkpoint_every == 0) {
      save_weights(params, cfg,
                   tc.checkpoint_prefix + "-step" + std::to_string(step + 1) + ".rwkv");
    }
  }

  if (!tc.checkpoint_prefix.empty())
    save_weights(params, cfg, tc.checkpoint_prefix + "-final.rwkv");
  if (out_final) *out_final = std::move(params);
  return rows;
}

std::vector<TrainLogRow> train_run(const ModelConfig& cfg, const TrainConfig& tc,
                                   const std::string& corpus_path,
                                   const InitSpec& spec, std::ostream* log,
                                   Parameters* out_final) {
  return train_run(init_model(cfg, spec), cfg, tc, corpus_path, log, out_final);
}

}  // namespace rwkv
