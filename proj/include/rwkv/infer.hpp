#pragma once

#include <functional>
#include <string>
#include <string_view>

#include "rwkv/model.hpp"
#include "rwkv/rng.hpp"

namespace rwkv {

// Whole recurrent memory of a generation session: five d-vectors per layer
// (two previous sub-block inputs, wkv numerator/denominator/shared exponent),
// 5*D*L scalars total, constant for the lifetime of the session. Plain data;
// copy it to snapshot, assign to restore.
struct InferenceState {
  std::vector<BlockState> layers;

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const BlockState& s : layers)
      n += s.tm_prev_x.size() + s.cm_prev_x.size() + s.wkv.num.size() +
           s.wkv.den.size() + s.wkv.shexp.size();
    return n;
  }
};

struct SamplerConfig {
  double temperature = 1.0;  // 0 selects the argmax
  double top_p = 1.0;        // nucleus mass, in (0, 1]
  std::uint64_t seed = 0;
};

InferenceState init_state(const ModelConfig& cfg);

// Advances the state by one token and returns the logits for the next one.
// Produces the same values as the last row of forward_parallel over the
// whole prefix. Throws std::invalid_argument for out-of-range tokens.
Vector forward_step(const Parameters& params, const ModelConfig& cfg, int token,
                    InferenceState& state);

// Temperature 0 returns the argmax (ties to the lowest index); otherwise
// nucleus sampling over the temperature-scaled softmax.
int sample(const Vector& logits, const SamplerConfig& sc, Rng& rng);

// Streams n sampled tokens after consuming the prompt. Byte-level: token ids
// are byte values. on_token, when set, observes each generated byte.
std::string generate(const Parameters& params, const ModelConfig& cfg,
                     std::string_view prompt, std::size_t n,
                     const SamplerConfig& sc,
                     const std::function<void(char)>& on_token = {});

}  // namespace rwkv
