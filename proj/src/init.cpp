#include "rwkv/init.hpp"

#include <cmath>

#include "rwkv/rng.hpp"

namespace rwkv {

namespace {

void fill_normal(Matrix& m, Rng& rng, double stddev) {
  for (double& x : m.data) x = rng.normal(0.0, stddev);
}

}  // namespace

Parameters init_model(const ModelConfig& cfg, const InitSpec& spec) {
  if (!cfg.valid()) throw std::invalid_argument("init_model: invalid config");
  if (!(spec.embed_scale > 0.0))
    throw std::invalid_argument("init_model: embed_scale must be > 0");

  const std::size_t d = cfg.dim;
  const std::size_t layers = cfg.layers;
  Parameters p = make_parameters(cfg);
  Rng rng(spec.seed);

  for (double& x : p.embedding.data)
    x = rng.uniform(-spec.embed_scale, spec.embed_scale);

  p.ln0.gamma.assign(d, 1.0);
  p.ln0.beta.assign(d, 0.0);
  p.ln_out.gamma.assign(d, 1.0);
  p.ln_out.beta.assign(d, 0.0);

  for (std::size_t l = 0; l < layers; ++l) {
    BlockParams& b = p.blocks[l];
    b.ln1.gamma.assign(d, 1.0);
    b.ln1.beta.assign(d, 0.0);
    b.ln2.gamma.assign(d, 1.0);
    b.ln2.beta.assign(d, 0.0);

    // Layer-depth ratios; single-layer models drop the l/(L-1) terms.
    const double depth = 1.0 - static_cast<double>(l) / static_cast<double>(layers);
    const double ratio01 =
        layers > 1 ? static_cast<double>(l) / static_cast<double>(layers - 1) : 0.0;

    for (std::size_t i = 0; i < d; ++i) {
      const double base =
          std::pow(static_cast<double>(i) / static_cast<double>(d), depth);
      b.tm.mu_k[i] = base;
      b.tm.mu_v[i] = base + 0.3 * ratio01;
      b.tm.mu_r[i] = 0.5 * base;
      b.cm.mu_k[i] = base;
      b.cm.mu_r[i] = base;

      // Decay curve over the attention channels, spanning [-5, 3].
      const double span = d > 1 ? static_cast<double>(d - 1) : 1.0;
      b.tm.wkv.decay_param[i] =
          -5.0 + 8.0 * std::pow(static_cast<double>(i) / span, 0.7 + 1.3 * ratio01);

      // Zigzag bonus: subtle per-channel variation to break symmetry.
      const double zig = 0.5 * (static_cast<double>((i + 1) % 3) - 1.0);
      b.tm.wkv.bonus[i] = zig + std::log(0.3);
    }

    // The two output projections carry the only random weights; everything
    // entering the mixing paths starts at zero.
    fill_normal(b.tm.w_o, rng, spec.gain_out);
    fill_normal(b.cm.w_v, rng, spec.gain_out);
    // w_r/w_k/w_v (time-mix) and w_r/w_k (channel-mix) stay zero.
  }

  // head stays zero: first logits are exactly uniform.
  return p;
}

Matrix init_embedding_baseline(const ModelConfig& cfg, std::uint64_t seed) {
  if (!cfg.valid())
    throw std::invalid_argument("init_embedding_baseline: invalid config");
  Matrix emb(cfg.vocab, cfg.dim);
  Rng rng(seed);
  fill_normal(emb, rng, 0.02);
  return emb;
}

}  // namespace rwkv
