#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rwkv/blocks.hpp"

namespace rwkv {

struct ModelConfig {
  std::size_t vocab = 256;
  std::size_t dim = 128;     // D
  std::size_t layers = 4;    // L
  std::size_t ffn_dim = 0;   // 0 means the default 4*dim
  std::size_t ctx_len = 256;

  std::size_t ffn() const { return ffn_dim == 0 ? 4 * dim : ffn_dim; }
  bool valid() const {
    return vocab >= 1 && dim >= 1 && layers >= 1 && ctx_len >= 1 && ffn() >= 1;
  }
};

struct Parameters {
  Matrix embedding;  // V×D
  LayerNormParams ln0, ln_out;
  std::vector<BlockParams> blocks;
  Matrix head;  // V×D
};

// 2VD + 13D²L + D(11L + 4). Throws std::invalid_argument when ffn_dim is
// overridden away from 4*dim, which the closed form assumes.
std::uint64_t param_count(const ModelConfig& cfg);

// Forward cost of one token, linear layers only: 2(VD + 13D²L).
std::uint64_t flops_per_token(const ModelConfig& cfg);

// Number of scalars actually held by a Parameters value.
std::uint64_t scalar_count(const Parameters& p);

struct ModelActs {
  Matrix embedded;
  Matrix ln0_out;
  std::vector<BlockActs> blocks;
  Matrix body_out;
  Matrix ln_out_out;
};

// logits = head * ln_out(blocks(ln0(embed(tokens)))), one row per token.
// Throws std::invalid_argument for out-of-range tokens or T > ctx_len.
Matrix forward_parallel(const Parameters& params, const ModelConfig& cfg,
                        std::span<const int> tokens, ModelActs* acts = nullptr);

enum class WeightsErrorKind { BadMagic, Truncated, ShapeMismatch, Io };

class WeightsError : public std::runtime_error {
 public:
  WeightsError(WeightsErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  WeightsErrorKind kind() const { return kind_; }

 private:
  WeightsErrorKind kind_;
};

// File layout: magic "RWKVSPEC1", u64 little-endian header length, a JSON
// header {config, tensor manifest with name/shape/offset}, then the raw
// little-endian float64 payload in manifest order. Round-trips bit-exactly.
void save_weights(const Parameters& params, const ModelConfig& cfg,
                  const std::string& path);
std::pair<Parameters, ModelConfig> load_weights(const std::string& path);

// Reads only the header of a weight file.
ModelConfig peek_config(const std::string& path);

// Allocates all tensors for cfg, zero-filled.
Parameters make_parameters(const ModelConfig& cfg);

// Calls f(name, data, shape) for every tensor, in the fixed manifest order.
// Names follow "blocks.{l}.att.{field}" / "blocks.{l}.ffn.{field}" plus
// "emb.weight", "ln0.*", "ln_out.*", "head.weight".
template <class P, class F>
void visit_tensors(P& p, F&& f) {
  auto vec = [&](const char* name, auto& v) {
    f(std::string(name), v.data(), std::vector<std::size_t>{v.size()});
  };
  auto mat = [&](const char* name, auto& m) {
    f(std::string(name), m.data.data(), std::vector<std::size_t>{m.rows, m.cols});
  };
  mat("emb.weight", p.embedding);
  vec("ln0.gamma", p.ln0.gamma);
  vec("ln0.beta", p.ln0.beta);
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    auto& b = p.blocks[l];
    const std::string base = "blocks." + std::to_string(l) + ".";
    auto vecl = [&](const std::string& name, auto& v) {
      f(base + name, v.data(), std::vector<std::size_t>{v.size()});
    };
    auto matl = [&](const std::string& name, auto& m) {
      f(base + name, m.data.data(), std::vector<std::size_t>{m.rows, m.cols});
    };
    vecl("ln1.gamma", b.ln1.gamma);
    vecl("ln1.beta", b.ln1.beta);
    vecl("ln2.gamma", b.ln2.gamma);
    vecl("ln2.beta", b.ln2.beta);
    matl("att.w_r", b.tm.w_r);
    matl("att.w_k", b.tm.w_k);
    matl("att.w_v", b.tm.w_v);
    matl("att.w_o", b.tm.w_o);
    vecl("att.mu_r", b.tm.mu_r);
    vecl("att.mu_k", b.tm.mu_k);
    vecl("att.mu_v", b.tm.mu_v);
    vecl("att.decay", b.tm.wkv.decay_param);
    vecl("att.bonus", b.tm.wkv.bonus);
    matl("ffn.w_r", b.cm.w_r);
    matl("ffn.w_k", b.cm.w_k);
    matl("ffn.w_v", b.cm.w_v);
    vecl("ffn.mu_r", b.cm.mu_r);
    vecl("ffn.mu_k", b.cm.mu_k);
  }
  vec("ln_out.gamma", p.ln_out.gamma);
  vec("ln_out.beta", p.ln_out.beta);
  mat("head.weight", p.head);
}

// Reads/writes a standalone JSON model-config file.
ModelConfig load_config_json(const std::string& path);
void save_config_json(const ModelConfig& cfg, const std::string& path);

}  // namespace rwkv
