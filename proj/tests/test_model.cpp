#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "rwkv/infer.hpp"
#include "rwkv/init.hpp"
#include "rwkv/model.hpp"

using namespace rwkv;

namespace {

struct NamedConfig {
  std::size_t layers;
  std::size_t dim;
  std::uint64_t params;
  std::uint64_t flops;
};

// The six published architectures with their exact counts.
constexpr NamedConfig kTable[] = {
    {12, 768, 169342464ull, 261250560ull},
    {24, 1024, 430397440ull, 757278720ull},
    {24, 2048, 1515106304ull, 2823180288ull},
    {32, 2560, 2984627200ull, 5710013440ull},
    {32, 4096, 7392649216ull, 14370512896ull},
    {40, 5120, 14148597760ull, 27777812480ull},
};

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

std::filesystem::path temp_file(const char* stem) {
  return std::filesystem::temp_directory_path() /
         (std::string(stem) + std::to_string(::getpid()) + ".rwkv");
}

}  // namespace

TEST_CASE("published architecture table reproduces exactly") {
  for (const NamedConfig& row : kTable) {
    ModelConfig cfg;
    cfg.vocab = 50277;
    cfg.dim = row.dim;
    cfg.layers = row.layers;
    CHECK(param_count(cfg) == row.params);
    CHECK(flops_per_token(cfg) == row.flops);
  }
}

TEST_CASE("closed forms reject an overridden ffn width") {
  ModelConfig cfg;
  cfg.vocab = 100;
  cfg.dim = 8;
  cfg.layers = 2;
  cfg.ffn_dim = 24;
  CHECK_THROWS_AS(param_count(cfg), std::invalid_argument);
  CHECK_THROWS_AS(flops_per_token(cfg), std::invalid_argument);
}

TEST_CASE("param_count equals the scalars actually allocated") {
  for (auto [vocab, dim, layers] :
       {std::tuple<std::size_t, std::size_t, std::size_t>{16, 8, 1},
        {256, 32, 2},
        {50, 24, 5},
        {33, 16, 3}}) {
    ModelConfig cfg;
    cfg.vocab = vocab;
    cfg.dim = dim;
    cfg.layers = layers;
    InitSpec spec;
    Parameters p = init_model(cfg, spec);
    CHECK(scalar_count(p) == param_count(cfg));
  }
}

TEST_CASE("vocab-only model cost when layers collapse") {
  // the formula terms without blocks: 2VD + 4D and 2VD
  ModelConfig cfg;
  cfg.vocab = 100;
  cfg.dim = 10;
  cfg.layers = 1;
  const std::uint64_t with_blocks = param_count(cfg);
  CHECK(with_blocks == 2ull * 100 * 10 + 13ull * 100 * 1 + 10ull * (11 + 4));
  CHECK(flops_per_token(cfg) == 2ull * (100 * 10 + 13 * 100));
}

TEST_CASE("fresh model logits depend only on the current token") {
  ModelConfig cfg;
  cfg.vocab = 32;
  cfg.dim = 8;
  cfg.layers = 2;
  cfg.ctx_len = 16;
  InitSpec spec;
  spec.seed = 3;
  Parameters p = init_model(cfg, spec);
  std::vector<int> tokens = {5, 9, 5, 20, 5};
  Matrix logits = forward_parallel(p, cfg, tokens);
  for (std::size_t j = 0; j < cfg.vocab; ++j) {
    CHECK(logits(0, j) == logits(2, j));
    CHECK(logits(2, j) == logits(4, j));
  }
}

TEST_CASE("permuting a suffix leaves earlier logits unchanged") {
  ModelConfig cfg;
  cfg.vocab = 24;
  cfg.dim = 10;
  cfg.layers = 2;
  cfg.ctx_len = 32;
  Parameters p = randomized_model(cfg, 17);
  std::vector<int> tokens = {1, 2, 3, 4, 5, 6, 7, 8};
  Matrix base = forward_parallel(p, cfg, tokens);
  std::vector<int> permuted = {1, 2, 3, 4, 8, 7, 6, 5};
  Matrix moved = forward_parallel(p, cfg, permuted);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t j = 0; j < cfg.vocab; ++j) CHECK(moved(t, j) == base(t, j));
}

TEST_CASE("forward_parallel validates tokens and length") {
  ModelConfig cfg;
  cfg.vocab = 16;
  cfg.dim = 4;
  cfg.layers = 1;
  cfg.ctx_len = 4;
  InitSpec spec;
  Parameters p = init_model(cfg, spec);
  std::vector<int> bad = {3, 99};
  CHECK_THROWS_AS(forward_parallel(p, cfg, bad), std::invalid_argument);
  std::vector<int> long_seq = {1, 2, 3, 4, 5};
  CHECK_THROWS_AS(forward_parallel(p, cfg, long_seq), std::invalid_argument);
}

TEST_CASE("stepwise forward equals parallel rows") {
  ModelConfig cfg;
  cfg.vocab = 20;
  cfg.dim = 12;
  cfg.layers = 3;
  cfg.ctx_len = 48;
  Parameters p = randomized_model(cfg, 23);
  Rng rng(24);
  std::vector<int> tokens(40);
  for (int& t : tokens) t = static_cast<int>(rng.below(cfg.vocab));
  Matrix par = forward_parallel(p, cfg, tokens);
  InferenceState st = init_state(cfg);
  double worst = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    Vector logits = forward_step(p, cfg, tokens[t], st);
    for (std::size_t j = 0; j < cfg.vocab; ++j)
      worst = std::max(worst, oracle::rel_err(logits[j], par(t, j), 1.0));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("weight files round-trip bit-exactly") {
  ModelConfig cfg;
  cfg.vocab = 40;
  cfg.dim = 12;
  cfg.layers = 2;
  cfg.ctx_len = 64;
  Parameters p = randomized_model(cfg, 31);
  const auto path = temp_file("roundtrip");
  save_weights(p, cfg, path.string());
  auto [loaded, cfg2] = load_weights(path.string());
  CHECK(cfg2.vocab == cfg.vocab);
  CHECK(cfg2.dim == cfg.dim);
  CHECK(cfg2.layers == cfg.layers);
  CHECK(cfg2.ctx_len == cfg.ctx_len);
  bool identical = true;
  visit_tensors(p, [&](const std::string& name, double* data,
                       const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    visit_tensors(loaded, [&](const std::string& name2, double* data2,
                              const std::vector<std::size_t>&) {
      if (name2 == name)
        for (std::size_t i = 0; i < n; ++i)
          if (data[i] != data2[i]) identical = false;
    });
  });
  CHECK(identical);
  std::filesystem::remove(path);
}

TEST_CASE("corrupted files produce their designated error kinds") {
  ModelConfig cfg;
  cfg.vocab = 16;
  cfg.dim = 6;
  cfg.layers = 1;
  InitSpec spec;
  Parameters p = init_model(cfg, spec);
  const auto path = temp_file("corrupt");
  save_weights(p, cfg, path.string());

  // read the pristine bytes
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  in.close();

  auto write_bytes = [&](const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
  };

  SUBCASE("bad magic") {
    std::string mutated = bytes;
    mutated[0] = 'X';
    write_bytes(mutated);
    try {
      load_weights(path.string());
      FAIL("expected WeightsError");
    } catch (const WeightsError& e) {
      CHECK(e.kind() == WeightsErrorKind::BadMagic);
    }
  }

  SUBCASE("truncated payload") {
    write_bytes(bytes.substr(0, bytes.size() - 64));
    try {
      load_weights(path.string());
      FAIL("expected WeightsError");
    } catch (const WeightsError& e) {
      CHECK(e.kind() == WeightsErrorKind::Truncated);
    }
  }

  SUBCASE("header shape mismatch") {
    // corrupt the first "shape":[V,D] in the JSON header text
    std::string mutated = bytes;
    const auto pos = mutated.find("\"shape\":[16,6]");
    REQUIRE(pos != std::string::npos);
    mutated.replace(pos, 14, "\"shape\":[16,7]");
    // keep the header length identical by construction (same byte count)
    write_bytes(mutated);
    try {
      load_weights(path.string());
      FAIL("expected WeightsError");
    } catch (const WeightsError& e) {
      CHECK(e.kind() == WeightsErrorKind::ShapeMismatch);
    }
  }

  std::filesystem::remove(path);
}

TEST_CASE("config json round trip") {
  ModelConfig cfg;
  cfg.vocab = 256;
  cfg.dim = 64;
  cfg.layers = 3;
  cfg.ctx_len = 128;
  const auto path = temp_file("config");
  save_config_json(cfg, path.string());
  ModelConfig loaded = load_config_json(path.string());
  CHECK(loaded.vocab == cfg.vocab);
  CHECK(loaded.dim == cfg.dim);
  CHECK(loaded.layers == cfg.layers);
  CHECK(loaded.ffn() == cfg.ffn());
  CHECK(loaded.ctx_len == cfg.ctx_len);
  std::filesystem::remove(path);
}
