#include "surjlab/generate.hpp"

#include <cmath>

#include "surjlab/error.hpp"

namespace surjlab {

namespace {

Matrix scaled_gaussian(std::size_t rows, std::size_t cols, Seed seed) {
  return (1.0 / std::sqrt(static_cast<double>(cols))) * seeded_gaussian(rows, cols, seed);
}

}  // namespace

MlpParams random_mlp(const std::vector<std::size_t>& dims, const Activation& hidden, Seed seed,
                     const Activation& last, bool with_bias) {
  if (dims.size() < 2) throw Error(ErrorCode::InvalidArgument, "an MLP needs at least two widths");
  MlpParams p;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    DenseLayer layer;
    layer.weight = scaled_gaussian(dims[k + 1], dims[k], derive_seed(seed, "mlp-weight", k));
    layer.bias = with_bias ? seeded_gaussian_vector(dims[k + 1], derive_seed(seed, "mlp-bias", k)) * 0.1
                           : Vector(dims[k + 1]);
    layer.activation = k + 2 == dims.size() ? last : hidden;
    p.layers.push_back(std::move(layer));
  }
  p.validate();
  return p;
}

AttentionParams random_attention(std::size_t d, Seed seed) {
  return {scaled_gaussian(d, d, derive_seed(seed, "K")), scaled_gaussian(d, d, derive_seed(seed, "Q")),
          scaled_gaussian(d, d, derive_seed(seed, "V"))};
}

RetentionParams random_retention(std::size_t d, GatingKind gating, Seed seed) {
  RetentionParams p{scaled_gaussian(d, d, derive_seed(seed, "K")), scaled_gaussian(d, d, derive_seed(seed, "Q")),
                    scaled_gaussian(d, d, derive_seed(seed, "V")), std::monostate{}};
  if (gating == GatingKind::Mamba2) {
    p.gating = Mamba2Gate{scaled_gaussian(1, d, derive_seed(seed, "Gamma")), -1.0};
  } else if (gating == GatingKind::Rwkv6) {
    p.gating = Rwkv6Gate{scaled_gaussian(d, d, derive_seed(seed, "A"))};
  }
  p.validate();
  return p;
}

TransformerBlockParams random_block(std::size_t d, std::size_t hidden, Seed seed) {
  TransformerBlockParams b;
  b.attn = random_attention(d, derive_seed(seed, "attn"));
  b.ln1 = LayerNormParams::standard(d);
  b.ln2 = LayerNormParams::standard(d);
  b.w1 = scaled_gaussian(hidden, d, derive_seed(seed, "W1"));
  b.w2 = scaled_gaussian(d, hidden, derive_seed(seed, "W2"));
  b.b1 = seeded_gaussian_vector(hidden, derive_seed(seed, "b1")) * 0.1;
  b.b2 = seeded_gaussian_vector(d, derive_seed(seed, "b2")) * 0.1;
  b.validate();
  return b;
}

StackParams random_stack(std::size_t blocks, std::size_t d, std::size_t hidden, Seed seed) {
  StackParams s;
  for (std::size_t k = 0; k < blocks; ++k) s.blocks.push_back(random_block(d, hidden, derive_seed(seed, "block", k)));
  s.validate();
  return s;
}

PreLnMlpBlock random_preln_mlp(std::size_t d, std::size_t hidden, Seed seed) {
  PreLnMlpBlock b{random_mlp({d, hidden, d}, Activation::gelu(), seed), LayerNormParams::standard(d)};
  b.validate();
  return b;
}

DiffusionSchedule random_diffusion(std::size_t d, std::size_t hidden, int steps, Seed seed) {
  DiffusionSchedule s{DiffusionSchedule::uniform_knots(steps),
                      random_mlp({d + 1, hidden, d}, Activation::gelu(), seed), LayerNormParams::standard(d)};
  s.validate();
  return s;
}

Sequence random_sequence(std::size_t n, std::size_t d, double scale, Seed seed) {
  Sequence s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(seeded_gaussian_vector(d, derive_seed(seed, i)) * scale);
  return s;
}

}  // namespace surjlab
