#include "rwkv/infer.hpp"

#include <algorithm>
#include <numeric>

namespace rwkv {

InferenceState init_state(const ModelConfig& cfg) {
  if (!cfg.valid()) throw std::invalid_argument("init_state: invalid config");
  InferenceState st;
  st.layers.reserve(cfg.layers);
  for (std::size_t l = 0; l < cfg.layers; ++l)
    st.layers.push_back(BlockState::initial(cfg.dim));
  return st;
}

Vector forward_step(const Parameters& params, const ModelConfig& cfg, int token,
                    InferenceState& state) {
  if (token < 0 || static_cast<std::size_t>(token) >= cfg.vocab)
    throw std::invalid_argument("forward_step: token id out of range");
  if (state.layers.size() != params.blocks.size())
    throw std::invalid_argument("forward_step: state/model layer mismatch");
  const double* emb = params.embedding.row(static_cast<std::size_t>(token));
  Vector x(emb, emb + cfg.dim);
  if (!params.ln0.gamma.empty())
    x = layer_norm(x, params.ln0.gamma, params.ln0.beta);
  for (std::size_t l = 0; l < params.blocks.size(); ++l)
    x = block_step(x, state.layers[l], params.blocks[l]);
  x = layer_norm(x, params.ln_out.gamma, params.ln_out.beta);
  return matvec(params.head, x);
}

int sample(const Vector& logits, const SamplerConfig& sc, Rng& rng) {
  if (logits.empty()) throw std::invalid_argument("sample: empty logits");
  if (!all_finite(logits)) throw std::invalid_argument("sample: non-finite logits");
  if (sc.temperature < 0.0) throw std::invalid_argument("sample: negative temperature");
  if (!(sc.top_p > 0.0 && sc.top_p <= 1.0))
    throw std::invalid_argument("sample: top_p must be in (0, 1]");

  if (sc.temperature == 0.0) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
      if (logits[i] > logits[best]) best = i;  // ties keep the lowest index
    return static_cast<int>(best);
  }

  // Softmax of logits / temperature, max-subtracted.
  Vector probs(logits.size());
  const double max_logit = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp((logits[i] - max_logit) / sc.temperature);
    total += probs[i];
  }
  for (double& p : probs) p /= total;

  // Nucleus: keep the smallest probability-sorted prefix reaching top_p.
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  double kept_mass = 0.0;
  std::size_t kept = 0;
  for (; kept < order.size(); ++kept) {
    kept_mass += probs[order[kept]];
    if (kept_mass >= sc.top_p) {
      ++kept;
      break;
    }
  }
  if (kept == 0) kept = 1;
  if (kept > order.size()) kept = order.size();

  const double draw = rng.uniform01() * kept_mass;
  double acc = 0.0;
  for (std::size_t i = 0; i < kept; ++i) {
    acc += probs[order[i]];
    if (draw <= acc) return static_cast<int>(order[i]);
  }
  return static_cast<int>(order[kept - 1]);
}

std::string generate(const Parameters& params, const ModelConfig& cfg,
                     std::string_view prompt, std::size_t n,
                     const SamplerConfig& sc,
                     const std::function<void(char)>& on_token) {
  InferenceState state = init_state(cfg);
  Rng rng(sc.seed);
  Vector logits;
  for (char ch : prompt)
    logits = forward_step(params, cfg, static_cast<unsigned char>(ch), state);
  if (prompt.empty() && n > 0)
    logits = forward_step(params, cfg, 0, state);  // implicit start token
  std::string out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int tok = sample(logits, sc, rng);
    const char ch = static_cast<char>(static_cast<unsigned char>(tok));
    out.push_back(ch);
    if (on_token) on_token(ch);
    logits = forward_step(params, cfg, tok, state);
  }
  return out;
}

}  // namespace rwkv
