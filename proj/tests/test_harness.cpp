#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "surjlab/battery.hpp"
#include "surjlab/generate.hpp"
#include "surjlab/harness.hpp"
#include "surjlab/io.hpp"

using namespace surjlab;
using surjlab::test::error_code_of;

namespace {

double max_replay_error(const Sequence& got, const Sequence& want) {
  double e = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) e = std::max(e, norm(got[i] - want[i]));
  return e;
}

}  // namespace

TEST_CASE("Pre-LN block inversion") {
  SolveConfig cfg;
  SUBCASE("zero-weight MLP block") {
    PreLnMlpBlock b = random_preln_mlp(4, 8, Seed{1});
    for (auto& l : b.mlp.layers) l.weight = Matrix(l.weight.rows(), l.weight.cols());
    const Vector offset = mlp_forward(b.mlp, Vector(4));
    const Vector y{1, 2, -3, 0.5};
    const InversionResult r = invert_preln_block(b, y, cfg);
    CHECK(norm(r.x - (y - offset)) <= 1e-10);
  }
  SUBCASE("attention block at position 1, every target norm") {
    const TransformerBlockParams b = random_block(4, 16, Seed{2});
    for (double scale : {1.0, 10.0, 100.0}) {
      for (std::uint64_t k = 0; k < 10; ++k) {
        const Vector y = unit(seeded_gaussian_vector(4, Seed{k})) * scale;
        cfg.seed = Seed{k};
        const InversionResult r = invert_preln_block(b, {}, y, cfg);
        INFO("scale " << scale << " k " << k << ": " << r.note << " res " << r.residual);
        CHECK(r.converged);
        CHECK(norm(transformer_block_forward(b, {r.x})[0] - y) <= 1e-8 * (1 + scale));
      }
    }
  }
  SUBCASE("Pre-LN attention sequences") {
    const AttentionParams p = random_attention(3, Seed{3});
    const LayerNormParams ln = LayerNormParams::standard(3);
    Sequence targets;
    for (std::uint64_t k = 0; k < 6; ++k) targets.push_back(random_in_ball(3, 100.0, Seed{k}));
    const SequenceInversion inv = invert_preln_attention_sequence(p, ln, targets, cfg);
    CHECK(inv.all_converged);
    CHECK(max_replay_error(preln_attention_forward(p, ln, inv.inputs), targets) <= 1e-8 * 101);
  }
}

TEST_CASE("Pre-LN MLP block at d = 2 inverts exactly the reachable targets") {
  // LN takes the two values u± = ±(1, -1)/√2 by the sign of x₁ - x₂, so g is
  // a translation by f(u±) on each half-plane; a strip between the two
  // translated half-planes may be missed.
  int reachable = 0, unreachable = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const PreLnMlpBlock b = random_preln_mlp(2, 8, derive_seed(Seed{s}, "mlp", 2));
    const Vector cp = mlp_forward(b.mlp, layer_norm(b.ln, Vector{1, 0}));
    const Vector cm = mlp_forward(b.mlp, layer_norm(b.ln, Vector{0, 1}));
    for (std::uint64_t k = 0; k < 100; ++k) {
      const Vector y = random_in_ball(2, 100.0, derive_seed(Seed{s}, "target", 2000 + k));
      const Vector xp = y - cp, xm = y - cm;
      const bool has_preimage = xp[0] > xp[1] || xm[0] < xm[1];
      SolveConfig cfg;
      cfg.seed = derive_seed(Seed{s}, "solve", 2000 + k);
      CHECK(invert_preln_block(b, y, cfg).converged == has_preimage);
      (has_preimage ? reachable : unreachable) += 1;
    }
  }
  MESSAGE("reachable " << reachable << ", no pre-image " << unreachable);
  CHECK(unreachable > 0);
}

TEST_CASE("transformer sequence inversion") {
  StackInversionOptions opts;
  SUBCASE("one token") {
    const StackParams s = random_stack(1, 4, 8, Seed{4});
    const SequenceInversion inv = invert_transformer_sequence(s, {Vector{1, -1, 0.5, 2}}, opts);
    CHECK(inv.all_converged);
    CHECK(norm(stack_forward(s, inv.inputs)[0] - Vector{1, -1, 0.5, 2}) <= 1e-8);
  }
  SUBCASE("two blocks, d = 16, ten tokens") {
    const StackParams s = random_stack(2, 16, 32, Seed{5});
    const Sequence targets = random_sequence(10, 16, 1.0, Seed{6});
    const SequenceInversion inv = invert_transformer_sequence(s, targets, opts);
    CHECK(inv.all_converged);
    for (const auto& t : inv.tokens) CHECK(t.residual <= 1e-4);
    // all targets at once: later solves never disturb earlier outputs
    CHECK(max_replay_error(stack_forward(s, inv.inputs), targets) <= 1e-4);
    CHECK(inv.replay_residual <= 1e-4);
  }
  SUBCASE("re-solving a token leaves earlier outputs untouched") {
    const StackParams s = random_stack(1, 4, 8, Seed{7});
    const Sequence targets = random_sequence(4, 4, 1.0, Seed{8});
    const SequenceInversion inv = invert_transformer_sequence(s, targets, opts);
    Sequence prefix(inv.inputs.begin(), inv.inputs.begin() + 2);
    StackInversionOptions other = opts;
    other.gd.init = Vector{3, -3, 3, -3};
    other.solve.seed = Seed{99};
    Sequence changed = prefix;
    changed.push_back(invert_stack_token(s, prefix, targets[2], other).x);
    Sequence original = prefix;
    original.push_back(inv.inputs[2]);
    const Sequence a = stack_forward(s, changed), b = stack_forward(s, original);
    CHECK(a[0] == b[0]);
    CHECK(a[1] == b[1]);
  }
}

TEST_CASE("retention sequence inversion") {
  CubicSolveConfig cfg;
  SUBCASE("scalar instance") {
    RetentionParams p{Matrix{{1}}, Matrix{{1}}, Matrix{{1}}, {}};
    const Sequence targets{Vector{8}, Vector{3}, Vector{-1}, Vector{20}};
    const SequenceInversion inv = invert_retention_sequence(p, targets, cfg);
    CHECK(inv.inputs[0][0] == 2.0);
    CHECK(inv.all_converged);
    CHECK(max_replay_error(retention_forward(p, inv.inputs), targets) <= 1e-8 * 21);
  }
  SUBCASE("random d = 4, n = 8") {
    for (GatingKind g : {GatingKind::None, GatingKind::Mamba2, GatingKind::Rwkv6}) {
      int converged = 0, total = 0;
      for (std::uint64_t s = 0; s < 3; ++s) {
        const RetentionParams p = random_retention(4, g, Seed{s});
        const Sequence targets = random_sequence(8, 4, 1.0, Seed{100 + s});
        cfg.seed = Seed{s};
        const SequenceInversion inv = invert_retention_sequence(p, targets, cfg);
        const Sequence replay = retention_forward(p, inv.inputs);
        for (std::size_t i = 0; i < targets.size(); ++i) {
          ++total;
          // the recorded residual is the replayed one
          CHECK(norm(replay[i] - targets[i]) == doctest::Approx(inv.tokens[i].residual).epsilon(1e-6));
          if (inv.tokens[i].converged) {
            ++converged;
            CHECK(norm(replay[i] - targets[i]) <= 1e-6);
          }
        }
      }
      MESSAGE("gating " << static_cast<int>(g) << ": " << converged << "/" << total << " tokens");
      CHECK(converged * 10 >= total * 7);
    }
  }
}

TEST_CASE("diffusion inversion") {
  SolveConfig cfg;
  SUBCASE("zero velocity") {
    DiffusionSchedule s = random_diffusion(3, 8, 4, Seed{1});
    for (auto& l : s.velocity.layers) {
      l.weight = Matrix(l.weight.rows(), l.weight.cols());
      l.bias = Vector(l.bias.size());
    }
    const Vector target{0.3, -2, 1};
    const DiffusionInversion inv = invert_diffusion(s, target, cfg);
    CHECK(inv.converged);
    CHECK(norm(inv.noise - target) <= 1e-12);
  }
  SUBCASE("velocity depending on time only") {
    // v(x, z) = w·z + c, so x(1) = x(0) + Σ Δ_k (w·z_k + c)
    DiffusionSchedule s;
    s.knots = {0.0, 0.4, 1.0};
    s.ln = LayerNormParams::standard(2);
    Matrix w(2, 3);
    w(0, 2) = 1.5;
    w(1, 2) = -0.5;
    s.velocity.layers = {DenseLayer{w, Vector{0.2, 0.1}, Activation::identity()}};
    const Vector target{1.0, 1.0};
    const DiffusionInversion inv = invert_diffusion(s, target, cfg);
    Vector drift(2);
    for (std::size_t k = 0; k + 1 < s.knots.size(); ++k) {
      drift += (s.knots[k + 1] - s.knots[k]) * (Vector{1.5, -0.5} * s.knots[k] + Vector{0.2, 0.1});
    }
    CHECK(norm(inv.noise - (target - drift)) <= 1e-12);
  }
  SUBCASE("ten steps, d = 8") {
    const DiffusionSchedule s = random_diffusion(8, 32, 10, Seed{2});
    for (std::uint64_t k = 0; k < 5; ++k) {
      const Vector target = seeded_gaussian_vector(8, Seed{k}) * 3.0;
      cfg.seed = Seed{k};
      const DiffusionInversion inv = invert_diffusion(s, target, cfg);
      CHECK(inv.converged);
      CHECK(norm(diffusion_sample(s, inv.noise) - target) <= 1e-6);
    }
  }
}

TEST_CASE("interleaved policy inversion") {
  StackInversionOptions opts;
  SUBCASE("single step") {
    const StackParams s = random_stack(1, 4, 8, Seed{1});
    const PolicyInversion inv = invert_interleaved_policy(s, {Vector{0.5, 1, -1, 2}}, opts);
    CHECK(inv.all_converged);
    CHECK(norm(policy_rollout(s, inv.observations)[0] - Vector{0.5, 1, -1, 2}) <= 1e-8);
  }
  SUBCASE("five steps, closed loop") {
    const StackParams s = random_stack(1, 8, 16, Seed{2});
    const Sequence actions = random_sequence(5, 8, 1.0, Seed{3});
    const PolicyInversion inv = invert_interleaved_policy(s, actions, opts);
    CHECK(inv.all_converged);
    const Sequence replay = policy_rollout(s, inv.observations);
    for (std::size_t t = 0; t < 5; ++t) CHECK(norm(replay[t] - actions[t]) <= 1e-4);

    Sequence perturbed = inv.observations;
    perturbed[2] += Vector(8, 0.1);
    const Sequence moved = policy_rollout(s, perturbed);
    CHECK(moved[0] == replay[0]);
    CHECK(moved[1] == replay[1]);
    CHECK(norm(moved[2] - replay[2]) > 1e-6);
  }
}

TEST_CASE("ReLU witness") {
  SUBCASE("scalar") {
    const MlpParams p{{DenseLayer{Matrix{{1}}, Vector(1), Activation::relu()},
                       DenseLayer{Matrix{{1}}, Vector(1), Activation::identity()}}};
    const Witness w = relu_mlp_unreachable_witness(p, Seed{0});
    CHECK(w.target[0][0] == -1.0);
    CHECK(std::get<CertifiedGap>(w.evidence).gap == doctest::Approx(1.0));
  }
  SUBCASE("random d = 2, hidden 3: no sampled input beats the gap") {
    // A witness exists only when the columns of W₂ fail to span R² positively.
    int found = 0;
    for (std::uint64_t s = 0; s < 12; ++s) {
      const MlpParams p = random_mlp({2, 3, 2}, Activation::relu(), Seed{s});
      Witness w;
      try {
        w = relu_mlp_unreachable_witness(p, Seed{s});
      } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::WitnessNotFound);
        continue;
      }
      ++found;
      const double gap = std::get<CertifiedGap>(w.evidence).gap;
      CHECK(gap > 0.0);
      double best = INFINITY;
      for (std::uint64_t k = 0; k < 100000; ++k) {
        const Vector x = seeded_gaussian_vector(2, derive_seed(Seed{s}, k)) * std::pow(10.0, (k % 5) - 2.0);
        best = std::min(best, norm(mlp_forward(p, x) - w.target[0]));
      }
      CHECK(best >= gap - 1e-9);
    }
    MESSAGE("witnesses found for " << found << "/12 draws");
    CHECK(found >= 3);
  }
  SUBCASE("the same weights with LeakyReLU") {
    // The gap argument needs a nonnegative hidden layer. With LeakyReLU the
    // target is either inverted or shown unreachable by pattern enumeration.
    int inverted = 0, unreachable = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
      MlpParams p = random_mlp({2, 2, 2}, Activation::relu(), Seed{s});
      const Witness w = relu_mlp_unreachable_witness(p, Seed{s});
      p.layers[0].activation = Activation::leaky_relu(0.25);
      const Vector y = w.target[0];
      try {
        const InversionResult r = leaky_mlp_invert_homotopy(p, y, CubicSolveConfig{});
        CHECK(r.converged);
        ++inverted;
      } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::PathFailure);
        CHECK(leaky_mlp_unreachable_certificate(p, y).has_value());
        ++unreachable;
      }
    }
    MESSAGE("LeakyReLU contrast: inverted " << inverted << ", certified unreachable " << unreachable);
    CHECK(inverted > 0);
  }
  SUBCASE("needs a ReLU MLP") {
    const MlpParams p = random_mlp({2, 3, 2}, Activation::gelu(), Seed{1});
    CHECK(error_code_of([&] { relu_mlp_unreachable_witness(p, Seed{0}); }) == ErrorCode::InvalidArgument);
  }
}

TEST_CASE("attention witness") {
  const AttentionParams p{Matrix::identity(2), Matrix{{1, 0}, {0, -1}}, Matrix::identity(2)};
  SUBCASE("scan along the dead direction") {
    const AttentionScan scan = attention_dead_direction_scan(p);
    CHECK(scan.curvature == doctest::Approx(-1.0));
    CHECK(std::abs(scan.direction[1]) == doctest::Approx(1.0));
    CHECK(scan.sup == doctest::Approx(0.2778589).epsilon(1e-6));
  }
  SUBCASE("floor far from the reachable set, sanity target inverts") {
    SolveConfig cfg;
    cfg.restarts = 20;
    const Witness w = attention_unreachable_witness(p, cfg);
    const auto& floor = std::get<EmpiricalFloor>(w.evidence);
    CHECK(norm(w.target[0]) == 0.0);
    CHECK(norm(w.target[1]) == doctest::Approx(2.778589).epsilon(1e-5));
    CHECK(floor.restarts == 20);
    // sampled outputs at position 2 never come within half the target norm
    MESSAGE("empirical floor " << floor.residual_floor);
    CHECK(floor.residual_floor >= 0.5 * norm(w.target[1]));
    CHECK(floor.success_targets_checked == floor.success_targets_total);
    const PairInversion sane = attention_pinned_invert(p, Vector{0, 0.1}, 20, Seed{1}, 1e-8);
    CHECK(sane.residual <= 1e-6);
  }
  SUBCASE("positive semidefinite KᵀQ has no dead direction") {
    const AttentionParams psd{Matrix::identity(2), Matrix::identity(2), Matrix::identity(2)};
    CHECK(error_code_of([&] { attention_dead_direction_scan(psd); }) == ErrorCode::NoDeadDirection);
  }
}

TEST_CASE("Post-LN local surjectivity") {
  SolveConfig cfg;
  const LayerNormParams ln = LayerNormParams::standard(3);
  auto on_s = [](const Vector& v) { return unit(v - Vector(v.size(), mean(v))); };
  SUBCASE("zero weights") {
    const MlpParams f{{DenseLayer{Matrix(3, 3), Vector(3), Activation::gelu()},
                       DenseLayer{Matrix(3, 3), Vector(3), Activation::identity()}}};
    const Vector target = on_s(Vector{1, 0, -2});
    const InversionResult r = postln_local_surjectivity_check(f, ln, target, cfg);
    CHECK(r.converged);
    CHECK(norm(layer_norm(ln, r.x) - target) <= 1e-12);
  }
  SUBCASE("random bias-free GeLU, two layers") {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const MlpParams f = random_mlp({3, 3, 3}, Activation::gelu(), Seed{s}, Activation::identity(), false);
      const Vector target = on_s(seeded_gaussian_vector(3, Seed{100 + s}));
      const InversionResult r = postln_local_surjectivity_check(f, ln, target, cfg);
      CHECK(r.converged);
      const VectorMap fm = [&](const Vector& x) { return mlp_forward(f, x); };
      CHECK(norm(postln_wrap(fm, ln, r.x) - target) <= 1e-8);
    }
  }
  SUBCASE("target must lie on the LayerNorm image") {
    const MlpParams f = random_mlp({3, 3, 3}, Activation::gelu(), Seed{1}, Activation::identity(), false);
    CHECK(error_code_of([&] { postln_local_surjectivity_check(f, ln, Vector{1, 1, 1}, cfg); }) ==
          ErrorCode::InvalidArgument);
  }
}

TEST_CASE("LeakyReLU enumeration certificate") {
  const MlpParams p{{DenseLayer{Matrix{{1}, {-1}}, Vector(2), Activation::leaky_relu(0.25)},
                     DenseLayer{Matrix{{1, 0.9}}, Vector(1), Activation::identity()}}};
  const auto w = leaky_mlp_unreachable_certificate(p, Vector{-1});
  REQUIRE(w.has_value());
  CHECK(std::get<ExhaustiveEnumeration>(w->evidence).patterns == 4);
  CHECK_FALSE(leaky_mlp_unreachable_certificate(p, Vector{1}).has_value());
}

TEST_CASE("verdict battery") {
  BatteryConfig c;
  c.trials = 1;
  c.targets_per_trial = 2;
  c.dims = {2, 3};
  const VerdictReport a = run_verdict_battery(c);
  REQUIRE(a.rows.size() == 12);
  for (const auto& row : a.rows) {
    CHECK_FALSE(row.evidence.empty());
    CHECK((row.attempts > 0 || row.witness_attempts > 0));
    CHECK((!row.results.empty() || !row.witnesses.empty() || row.witness_attempts > 0));
  }
  const VerdictReport b = run_verdict_battery(c);
  CHECK(to_json(a).dump() == to_json(b).dump());
  CHECK(a.config_digest == b.config_digest);
  c.seed = Seed{1};
  CHECK(run_verdict_battery(c).config_digest != a.config_digest);
}
