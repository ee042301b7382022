#pragma once

// Seeded random parameters. Weights are N(0, 1/fan_in), biases N(0, 0.01),
// LayerNorms start at γ = 1, β = 0.

#include <vector>

#include "surjlab/blocks.hpp"
#include "surjlab/harness.hpp"
#include "surjlab/numerics.hpp"

namespace surjlab {

/// Layer widths dims[0] -> dims[1] -> ... ; `hidden` on every layer but the
/// last, which uses `last`.
MlpParams random_mlp(const std::vector<std::size_t>& dims, const Activation& hidden, Seed seed,
                     const Activation& last = Activation::identity(), bool with_bias = true);
AttentionParams random_attention(std::size_t d, Seed seed);

enum class GatingKind { None, Mamba2, Rwkv6 };
RetentionParams random_retention(std::size_t d, GatingKind gating, Seed seed);

TransformerBlockParams random_block(std::size_t d, std::size_t hidden, Seed seed);
StackParams random_stack(std::size_t blocks, std::size_t d, std::size_t hidden, Seed seed);
PreLnMlpBlock random_preln_mlp(std::size_t d, std::size_t hidden, Seed seed);
DiffusionSchedule random_diffusion(std::size_t d, std::size_t hidden, int steps, Seed seed);

Sequence random_sequence(std::size_t n, std::size_t d, double scale, Seed seed);

}  // namespace surjlab
