#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <map>

#include "doctest.h"
#include "oracles.hpp"
#include "rwkv/infer.hpp"
#include "rwkv/init.hpp"

using namespace rwkv;

namespace {

Parameters randomized_model(const ModelConfig& cfg, std::uint64_t seed) {
  InitSpec spec;
  spec.seed = seed;
  Parameters p = init_model(cfg, spec);
  Rng rng(seed + 1);
  const double sd = 0.4 / std::sqrt(static_cast<double>(cfg.dim));
  for (BlockParams& b : p.blocks)
    for (Matrix* m : {&b.tm.w_r, &b.tm.w_k, &b.tm.w_v, &b.cm.w_r, &b.cm.w_k})
      for (double& x : m->data) x = rng.normal(0.0, sd);
  for (double& x : p.head.data) x = rng.normal(0.0, sd);
  for (double& x : p.embedding.data) x = rng.normal(0.0, 0.3);
  return p;
}

}  // namespace

TEST_CASE("state scalar count is exactly five vectors per layer") {
  for (auto [dim, layers] : {std::pair<std::size_t, std::size_t>{8, 1},
                             {64, 4},
                             {256, 12}}) {
    ModelConfig cfg;
    cfg.vocab = 16;
    cfg.dim = dim;
    cfg.layers = layers;
    InferenceState st = init_state(cfg);
    CHECK(st.scalar_count() == 5 * dim * layers);
  }
}

TEST_CASE("fresh state is all-finite except the shared-exponent sentinel") {
  ModelConfig cfg;
  cfg.vocab = 16;
  cfg.dim = 8;
  cfg.layers = 2;
  InferenceState st = init_state(cfg);
  for (const BlockState& b : st.layers) {
    CHECK(all_finite(std::span<const double>(b.tm_prev_x)));
    CHECK(all_finite(std::span<const double>(b.cm_prev_x)));
    CHECK(all_finite(std::span<const double>(b.wkv.num)));
    CHECK(all_finite(std::span<const double>(b.wkv.den)));
    for (double x : b.wkv.shexp) CHECK(x == kNegInf);
  }
}

TEST_CASE("first step equals the first parallel row") {
  ModelConfig cfg;
  cfg.vocab = 24;
  cfg.dim = 10;
  cfg.layers = 2;
  cfg.ctx_len = 8;
  Parameters p = randomized_model(cfg, 50);
  std::vector<int> tokens = {7};
  Matrix par = forward_parallel(p, cfg, tokens);
  InferenceState st = init_state(cfg);
  Vector logits = forward_step(p, cfg, 7, st);
  for (std::size_t j = 0; j < cfg.vocab; ++j)
    CHECK(oracle::rel_err(logits[j], par(0, j), 1.0) <= 1e-12);
}

TEST_CASE("prefix equivalence over random models and sequences") {
  Rng rng(51);
  double worst = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    ModelConfig cfg;
    cfg.vocab = 8 + rng.below(24);
    cfg.dim = 4 + rng.below(12);
    cfg.layers = 1 + rng.below(4);
    cfg.ctx_len = 256;
    Parameters p = randomized_model(cfg, rng.next_u64());
    const std::size_t t_len = 1 + rng.below(64);
    std::vector<int> tokens(t_len);
    for (int& t : tokens) t = static_cast<int>(rng.below(cfg.vocab));
    Matrix par = forward_parallel(p, cfg, tokens);
    InferenceState st = init_state(cfg);
    for (std::size_t t = 0; t < t_len; ++t) {
      Vector logits = forward_step(p, cfg, tokens[t], st);
      for (std::size_t j = 0; j < cfg.vocab; ++j)
        worst = std::max(worst, oracle::rel_err(logits[j], par(t, j), 1.0));
    }
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("fresh model step logits depend only on the current token") {
  ModelConfig cfg;
  cfg.vocab = 16;
  cfg.dim = 8;
  cfg.layers = 2;
  InitSpec spec;
  Parameters p = init_model(cfg, spec);
  InferenceState st = init_state(cfg);
  Vector first = forward_step(p, cfg, 3, st);
  (void)forward_step(p, cfg, 11, st);
  Vector again = forward_step(p, cfg, 3, st);
  for (std::size_t j = 0; j < cfg.vocab; ++j) CHECK(first[j] == again[j]);
}

TEST_CASE("snapshot and resume yield identical continuations") {
  ModelConfig cfg;
  cfg.vocab = 20;
  cfg.dim = 8;
  cfg.layers = 2;
  cfg.ctx_len = 64;
  Parameters p = randomized_model(cfg, 53);
  InferenceState st = init_state(cfg);
  for (int t : {3, 1, 4, 1, 5}) (void)forward_step(p, cfg, t, st);
  InferenceState snapshot = st;  // plain-data copy
  Vector a1 = forward_step(p, cfg, 9, st);
  Vector a2 = forward_step(p, cfg, 2, st);
  Vector b1 = forward_step(p, cfg, 9, snapshot);
  Vector b2 = forward_step(p, cfg, 2, snapshot);
  for (std::size_t j = 0; j < cfg.vocab; ++j) {
    CHECK(a1[j] == b1[j]);
    CHECK(a2[j] == b2[j]);
  }
}

TEST_CASE("state size never changes during generation") {
  ModelConfig cfg;
  cfg.vocab = 256;
  cfg.dim = 16;
  cfg.layers = 2;
  Parameters p = randomized_model(cfg, 54);
  InferenceState st = init_state(cfg);
  const std::size_t expect = 5 * cfg.dim * cfg.layers;
  Rng rng(55);
  for (int i = 0; i < 200; ++i) {
    (void)forward_step(p, cfg, static_cast<int>(rng.below(cfg.vocab)), st);
    CHECK(st.scalar_count() == expect);
  }
}

TEST_CASE("temperature zero takes the argmax with lowest-index ties") {
  SamplerConfig sc;
  sc.temperature = 0.0;
  Rng rng(56);
  CHECK(sample({1.0, 3.0, 2.0}, sc, rng) == 1);
  CHECK(sample({5.0, 5.0, 1.0}, sc, rng) == 0);
}

TEST_CASE("unit-temperature full-nucleus sampling matches the softmax") {
  SamplerConfig sc;
  sc.temperature = 1.0;
  sc.top_p = 1.0;
  Rng rng(57);
  const Vector logits = {0.3, -0.7, 1.9, 0.0, -2.0};
  Vector probs(logits.size());
  double total = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    probs[j] = std::exp(logits[j]);
    total += probs[j];
  }
  for (double& p : probs) p /= total;
  const int draws = 100000;
  std::map<int, int> counts;
  for (int i = 0; i < draws; ++i) counts[sample(logits, sc, rng)]++;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    const double expect = probs[j] * draws;
    const double sigma = std::sqrt(probs[j] * (1.0 - probs[j]) * draws);
    CHECK(std::abs(counts[static_cast<int>(j)] - expect) <= 3.0 * sigma + 1.0);
  }
}

TEST_CASE("top_p below one restricts to the nucleus") {
  SamplerConfig sc;
  sc.temperature = 1.0;
  sc.top_p = 0.5;
  Rng rng(58);
  // one dominant token holds > 0.5 of the mass, so it is always chosen
  const Vector logits = {8.0, 0.0, 0.0, 0.0};
  for (int i = 0; i < 200; ++i) CHECK(sample(logits, sc, rng) == 0);
}

TEST_CASE("same seed gives identical token sequences") {
  ModelConfig cfg;
  cfg.vocab = 256;
  cfg.dim = 12;
  cfg.layers = 2;
  Parameters p = randomized_model(cfg, 59);
  SamplerConfig sc;
  sc.temperature = 0.9;
  sc.top_p = 0.95;
  sc.seed = 42;
  std::string a = generate(p, cfg, "abc", 32, sc);
  std::string b = generate(p, cfg, "abc", 32, sc);
  CHECK(a == b);
  CHECK(a.size() == 32);
}

TEST_CASE("n = 0 produces empty output") {
  ModelConfig cfg;
  cfg.vocab = 256;
  cfg.dim = 8;
  cfg.layers = 1;
  Parameters p = randomized_model(cfg, 60);
  SamplerConfig sc;
  std::string out = generate(p, cfg, "prompt", 0, sc);
  CHECK(out.empty());
}

TEST_CASE("greedy generation equals repeated parallel re-forwarding") {
  ModelConfig cfg;
  cfg.vocab = 256;
  cfg.dim = 10;
  cfg.layers = 2;
  cfg.ctx_len = 64;
  Parameters p = randomized_model(cfg, 61);
  SamplerConfig sc;
  sc.temperature = 0.0;
  const std::string prompt = "ab";
  const std::size_t n = 12;
  std::string fast = generate(p, cfg, prompt, n, sc);

  // quadratic oracle: re-run the full parallel forward for every new token
  std::vector<int> seq;
  for (char c : prompt) seq.push_back(static_cast<unsigned char>(c));
  std::string slow;
  for (std::size_t i = 0; i < n; ++i) {
    Matrix logits = forward_parallel(p, cfg, seq);
    const double* row = logits.row(logits.rows - 1);
    std::size_t best = 0;
    for (std::size_t j = 1; j < cfg.vocab; ++j)
      if (row[j] > row[best]) best = j;
    slow.push_back(static_cast<char>(static_cast<unsigned char>(best)));
    seq.push_back(static_cast<int>(best));
  }
  CHECK(fast == slow);
}

TEST_CASE("long greedy runs stay finite") {
  ModelConfig cfg;
  cfg.vocab = 256;
  cfg.dim = 12;
  cfg.layers = 2;
  Parameters p = randomized_model(cfg, 62);
  InferenceState st = init_state(cfg);
  int token = 65;
  for (int i = 0; i < 4096; ++i) {
    Vector logits = forward_step(p, cfg, token, st);
    CHECK(all_finite(logits));
    std::size_t best = 0;
    for (std::size_t j = 1; j < cfg.vocab; ++j)
      if (logits[j] > logits[best]) best = j;
    token = static_cast<int>(best);
  }
  for (const BlockState& b : st.layers) {
    CHECK(all_finite(std::span<const double>(b.wkv.num)));
    CHECK(all_finite(std::span<const double>(b.wkv.den)));
  }
}
