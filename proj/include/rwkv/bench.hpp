#pragma once

#include <iosfwd>
#include <utility>

#include "rwkv/infer.hpp"

namespace rwkv {

struct BenchRecord {
  std::size_t token_index = 0;
  double cumulative_ms = 0.0;
  double per_token_ms = 0.0;
  std::size_t state_scalars = 0;   // resident recurrent state
  std::uint64_t step_flops = 0;    // analytic matmul work of this step
};

// Greedy generation timed per token after `warmup` unrecorded steps.
// state_scalars stays 5*D*L throughout; step_flops is identical every step.
// With repeats > 1, each step is additionally replayed from a snapshot of the
// state and per_token_ms is the minimum across runs, which removes
// descheduling spikes on time-shared machines.
std::vector<BenchRecord> bench_generation(const Parameters& params,
                                          const ModelConfig& cfg,
                                          std::size_t n_tokens,
                                          std::size_t warmup,
                                          std::size_t repeats = 1);

// Softmax attention over a growing key/value cache: out = sum_i p_i v_i with
// p = softmax(q . k_i / sqrt(d)). Exposed for direct testing.
Vector naive_causal_attention_step(const Vector& q, const Matrix& key_cache,
                                   const Matrix& value_cache);

// Deliberately naive quadratic-attention decoder used as the contrast
// baseline: per-token cost grows with the cache length and the cache itself
// grows by 2*D scalars per layer per token. state_scalars reports the cache
// size; weights are internal and seeded.
std::vector<BenchRecord> bench_baseline_attention(const ModelConfig& cfg,
                                                  std::size_t n_tokens);

// float32 variant of the sequential path, for throughput comparison only.
// Parameters are cast once; the whole step (projections, norms, recurrence)
// runs in single precision. Not covered by the exact-tolerance checks.
std::vector<BenchRecord> bench_generation_f32(const Parameters& params,
                                              const ModelConfig& cfg,
                                              std::size_t n_tokens,
                                              std::size_t warmup,
                                              std::size_t repeats = 1);

struct PowerLawFit {
  double exponent = 0.0;
  double log_intercept = 0.0;  // natural log of the prefactor
  double r_squared = 0.0;
};

// Least squares on (log x, log y). Requires >= 2 points, all positive;
// otherwise throws std::invalid_argument.
PowerLawFit fit_power_law(std::span<const std::pair<double, double>> points);

// Header `token_index,cumulative_ms,per_token_ms,state_scalars` plus one row
// per record.
void write_bench_csv(std::ostream& out, std::span<const BenchRecord> records);

// Small gnuplot script rendering the CSV.
void write_plot_script(std::ostream& out, const std::string& csv_path);

}  // namespace rwkv
