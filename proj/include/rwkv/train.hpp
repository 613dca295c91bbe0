#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "rwkv/init.hpp"
#include "rwkv/model.hpp"

namespace rwkv {

struct TrainConfig {
  double init_lr = 6e-4;
  double end_lr = 1e-5;
  std::size_t warmup_steps = 20;
  std::size_t total_steps = 1000;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  double z_coeff = 1e-4;  // weight of the squared-log-normalizer penalty
  std::size_t batch = 1;
  std::size_t ctx = 256;
  std::uint64_t seed = 0;
  double grad_clip = 0.0;            // global-norm cap; 0 disables
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::string checkpoint_prefix;     // "<prefix>-step<N>.rwkv" and "<prefix>-final.rwkv"

  bool valid() const {
    return init_lr > 0.0 && end_lr > 0.0 && end_lr <= init_lr &&
           warmup_steps < total_steps && batch >= 1 && ctx >= 1;
  }
};

// Published learning-rate presets keyed by model name: constant warmup, then
// exponential decay to end_lr.
struct LrPreset {
  const char* name;
  double init_lr;
  double end_lr;
};
inline constexpr LrPreset kLrPresets[] = {
    {"169m", 0.0006, 0.00001}, {"430m", 0.0004, 0.00001}, {"1b5", 0.0003, 0.00001},
    {"3b", 0.00015, 0.00001},  {"7b", 0.00015, 0.00001},  {"14b", 0.0001, 0.000007},
};
std::optional<LrPreset> lr_preset(const std::string& name);

struct LossBreakdown {
  double total = 0.0;          // cross_entropy + z_term
  double cross_entropy = 0.0;  // mean over positions, nats
  double z_term = 0.0;
  Vector per_position_ce;
  Vector per_position_lse;  // log softmax normalizer per position
};

// Mean cross-entropy plus z_coeff * mean (log sum exp logits)^2.
LossBreakdown loss(const Matrix& logits, std::span<const int> targets, double z_coeff);

// Same container as Parameters; every tensor holds the loss derivative of its
// counterpart.
using Gradients = Parameters;

struct Batch {
  // Each sequence has length >= 2: inputs are seq[0..n-2], targets seq[1..n-1].
  std::vector<std::vector<int>> seqs;
};

struct BackwardResult {
  double loss = 0.0;           // batch mean of per-sequence totals
  double cross_entropy = 0.0;  // batch mean, nats per token
  Gradients grads;
};

// Loss and exact gradients for a batch, averaged over sequences. Reverse-mode
// through every layer is hand-derived; see train.cpp.
BackwardResult backward(const Parameters& params, const ModelConfig& cfg,
                        const Batch& batch, double z_coeff);

// init_lr while step < warmup_steps, then exponential decay reaching end_lr
// at the final step.
double lr_at(std::size_t step, const TrainConfig& tc);

struct AdamState {
  Gradients m;
  Gradients v;
  std::size_t step = 0;  // completed updates
};
AdamState make_adam_state(const ModelConfig& cfg);

// Bias-corrected Adam without weight decay.
void adam_step(Parameters& params, const Gradients& grads, AdamState& state,
               double lr, const TrainConfig& tc);

struct TrainLogRow {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;  // total, nats
  double bpc = 0.0;   // cross-entropy in bits per byte
  double wall_ms = 0.0;
};

// Runs the loop on a raw byte corpus starting from the given parameters
// (moved in; the trained values are returned through out_final when set).
// Emits one JSON line per step to log when provided. Deterministic in
// (params, cfg, tc, corpus).
std::vector<TrainLogRow> train_run(Parameters params, const ModelConfig& cfg,
                                   const TrainConfig& tc,
                                   const std::string& corpus_path,
                                   std::ostream* log = nullptr,
                                   Parameters* out_final = nullptr);

// Convenience: initializes from spec and trains.
std::vector<TrainLogRow> train_run(const ModelConfig& cfg, const TrainConfig& tc,
                                   const std::string& corpus_path,
                                   const InitSpec& spec, std::ostream* log = nullptr,
                                   Parameters* out_final = nullptr);

}  // namespace rwkv
