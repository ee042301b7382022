// surjlab command-line driver: gen | forward | invert | battery | witness | degree.
// Results go to files (JSON, optional CSV); progress goes to stderr.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <fstream>
#include <optional>

#include <CLI11.hpp>

#include "surjlab/error.hpp"
#include "surjlab/io.hpp"

using namespace surjlab;
using nlohmann::json;

namespace {

struct Flags {
  std::string config;
  std::string model;
  std::string out;
  std::string csv;
  std::optional<std::uint64_t> seed;
  std::optional<double> tol;
  double lr = 0.1;
  int steps = 200;
  bool lr_set = false, steps_set = false;
  std::optional<int> trials;
  std::string dims;
  std::string target;
  std::string input;
  std::optional<int> random_targets;
  std::optional<double> norm_bound;
  std::optional<int> restarts;
  std::string lo, hi;
  std::optional<int> grid;
  bool policy = false;
  bool no_staged = false;
  bool timings = false;
  GenOptions gen;
  std::string gen_dims;
};

void log(const std::string& msg) { std::cerr << "[surjlab] " << msg << '\n'; }

// Config file < SURJLAB_SEED < explicit flags.
ExperimentConfig resolve(const Flags& f, const std::string& task) {
  ExperimentConfig c = f.config.empty() ? ExperimentConfig{} : load_config(f.config);
  c.task = task;
  apply_seed_env(c);
  if (f.seed) c.seed = Seed{*f.seed};
  if (!f.model.empty()) c.model_path = f.model;
  if (!f.out.empty()) c.out = f.out;
  if (!f.csv.empty()) c.csv = f.csv;
  if (f.tol) c.solve.tol = c.gd.tol = c.cubic.tol = *f.tol;
  if (f.lr_set || f.config.empty()) c.gd.learning_rate = f.lr;
  if (f.steps_set || f.config.empty()) c.gd.steps = f.steps;
  if (f.trials) c.trials = *f.trials;
  if (!f.dims.empty()) c.dims = parse_dims(f.dims);
  if (f.restarts) c.solve.restarts = c.cubic.restarts = *f.restarts;
  if (!f.target.empty()) {
    c.target = {};
    c.target.kind = TargetSpec::Kind::Literal;
    c.target.values = parse_vector_list(f.target);
  } else if (!f.input.empty()) {
    c.target = {};
    c.target.kind = TargetSpec::Kind::Literal;
    c.target.values = parse_vector_list(f.input);
  } else if (f.random_targets) {
    c.target = {};
    c.target.kind = TargetSpec::Kind::Random;
    c.target.count = *f.random_targets;
    if (f.norm_bound) c.target.norm_bound = *f.norm_bound;
  }
  if (!f.lo.empty()) c.box_lo = parse_vector_list(f.lo).front().values();
  if (!f.hi.empty()) c.box_hi = parse_vector_list(f.hi).front().values();
  if (f.grid) c.grid = *f.grid;
  propagate_seed(c);
  c.validate();
  if (c.out.empty()) throw Error(ErrorCode::InvalidArgument, "--out is required");
  return c;
}

ModelFile model_for(const ExperimentConfig& c) {
  if (!c.model_path.empty()) return load_model(c.model_path);
  if (c.generate) return generate_model(*c.generate);
  throw Error(ErrorCode::InvalidArgument, "--model (or a 'generate' block in --config) is required");
}

Sequence resolve_targets(const ExperimentConfig& c, std::size_t d) {
  Sequence t;
  switch (c.target.kind) {
    case TargetSpec::Kind::Literal: t = c.target.values; break;
    case TargetSpec::Kind::File: {
      std::ifstream in(c.target.path);
      if (!in) throw Error(ErrorCode::ParseError, "cannot open " + c.target.path);
      json j;
      try {
        j = json::parse(in);
      } catch (const json::parse_error& e) {
        throw Error(ErrorCode::ParseError, c.target.path + ": " + e.what());
      }
      for (const auto& v : j) t.push_back(Vector(v.get<std::vector<double>>()));
      break;
    }
    case TargetSpec::Kind::Random:
      for (int k = 0; k < c.target.count; ++k) {
        t.push_back(random_in_ball(d, c.target.norm_bound, derive_seed(c.seed, "targets", k)));
      }
      break;
    case TargetSpec::Kind::None: throw Error(ErrorCode::InvalidArgument, "no targets given");
  }
  sequence_dim(t, d);
  return t;
}

json base_report(const ExperimentConfig& c, const std::string& model_type) {
  json r = {{"provenance", provenance(c.seed, digest_hex(config_to_json(c).dump()))},
            {"task", c.task},
            {"model_type", model_type},
            {"config", config_to_json(c)}};
  return r;
}

json error_json(const Error& e) { return {{"code", std::string(to_string(e.code()))}, {"message", e.what()}}; }

std::vector<std::string> item_header() {
  return {"index", "converged", "residual", "iters", "method", "note"};
}

std::vector<std::string> item_row(std::size_t i, const InversionResult& r) {
  return {std::to_string(i), r.converged ? "true" : "false", format_double(r.residual), std::to_string(r.iters),
          std::string(to_string(r.method)), r.note};
}

void finish(const ExperimentConfig& c, const json& report, const std::vector<std::vector<std::string>>& rows) {
  write_json(c.out, report);
  if (!c.csv.empty()) write_csv(c.csv, item_header(), rows);
  log("wrote " + c.out + (c.csv.empty() ? "" : " and " + c.csv));
}

// ---------------------------------------------------------------------------

int cmd_gen(const Flags& f) {
  GenOptions o = f.gen;
  o.dims = parse_dims(f.gen_dims);
  ExperimentConfig tmp;
  apply_seed_env(tmp);
  if (f.seed) o.seed = Seed{*f.seed};
  else o.seed = tmp.seed;
  if (f.out.empty()) throw Error(ErrorCode::InvalidArgument, "--out is required");
  save_model(f.out, generate_model(o));
  log("wrote " + f.out);
  return 0;
}

int cmd_forward(const Flags& f) {
  const ExperimentConfig c = resolve(f, "forward");
  const ModelFile m = model_for(c);
  const Sequence input = resolve_targets(c, model_dim(m.model));
  json report = base_report(c, model_type_tag(m.model));
  report["input"] = to_json(input);
  report["output"] = to_json(model_forward(m.model, input));
  finish(c, report, {});
  return 0;
}

struct InvertOutcome {
  std::vector<InversionResult> items;
  Sequence recovered;
  std::optional<double> replay;
  bool ok = true;
};

InvertOutcome invert_model(const ModelParams& model, const Sequence& targets, const ExperimentConfig& c,
                           bool policy, bool staged) {
  InvertOutcome out;
  const StackInversionOptions stack_opts{c.gd, c.solve, staged};
  auto take_sequence = [&](SequenceInversion inv) {
    out.items = std::move(inv.tokens);
    out.recovered = std::move(inv.inputs);
    out.replay = inv.replay_residual;
  };
  auto per_vector = [&](auto&& solve) {
    for (std::size_t i = 0; i < targets.size(); ++i) {
      log("target " + std::to_string(i + 1) + "/" + std::to_string(targets.size()));
      try {
        out.items.push_back(solve(targets[i], i));
      } catch (const Error& e) {
        InversionResult r;
        r.x = Vector(targets[i].size());
        r.note = std::string(to_string(e.code())) + ": " + e.what();
        out.items.push_back(std::move(r));
      }
      out.recovered.push_back(out.items.back().x);
    }
  };

  if (const auto* s = std::get_if<StackParams>(&model)) {
    if (policy) {
      PolicyInversion inv = invert_interleaved_policy(*s, targets, stack_opts);
      out.items = std::move(inv.steps);
      out.recovered = std::move(inv.observations);
      out.replay = inv.replay_error;
    } else {
      take_sequence(invert_transformer_sequence(*s, targets, stack_opts));
    }
  } else if (const auto* b = std::get_if<TransformerBlockParams>(&model)) {
    const StackParams single{{*b}};
    if (policy) {
      PolicyInversion inv = invert_interleaved_policy(single, targets, stack_opts);
      out.items = std::move(inv.steps);
      out.recovered = std::move(inv.observations);
      out.replay = inv.replay_error;
    } else {
      take_sequence(invert_transformer_sequence(single, targets, stack_opts));
    }
  } else if (const auto* r = std::get_if<RetentionParams>(&model)) {
    take_sequence(invert_retention_sequence(*r, targets, c.cubic));
  } else if (const auto* a = std::get_if<AttentionModel>(&model)) {
    if (!a->preln) throw Error(ErrorCode::InvalidArgument, "plain attention has no inverter; use 'witness'");
    take_sequence(invert_preln_attention_sequence(a->attn, *a->preln, targets, c.solve));
  } else if (const auto* mm = std::get_if<MlpModel>(&model)) {
    const MlpParams& p = mm->mlp;
    if (mm->preln) {
      const PreLnMlpBlock block{p, *mm->preln};
      per_vector([&](const Vector& y, std::size_t i) {
        SolveConfig cfg = c.solve;
        cfg.seed = derive_seed(c.solve.seed, "target", i);
        return invert_preln_block(block, y, cfg);
      });
    } else if (p.layers.size() == 2 && p.layers[0].activation.kind == Activation::Kind::LeakyReLU) {
      const bool square = p.layers[0].weight.square() && p.layers[1].weight.square();
      per_vector([&](const Vector& y, std::size_t) {
        return square ? leaky_mlp_invert_exact(p, y) : leaky_mlp_invert_homotopy(p, y, c.cubic);
      });
    } else {
      per_vector([&](const Vector& y, std::size_t) {
        return newton_invert([&](const Vector& x) { return mlp_forward(p, x); },
                             [&](const Vector& x) { return mlp_jacobian(p, x); }, y, Vector(p.input_dim()), c.solve);
      });
    }
    out.replay = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const PointMap pm = model_point_map(model);
      *out.replay = std::max(*out.replay, norm(pm.f(out.recovered[i]) - targets[i]));
    }
  } else if (const auto* d = std::get_if<DiffusionSchedule>(&model)) {
    double worst = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      SolveConfig cfg = c.solve;
      cfg.seed = derive_seed(c.solve.seed, "target", i);
      DiffusionInversion inv = invert_diffusion(*d, targets[i], cfg);
      InversionResult r;
      r.x = inv.noise;
      r.residual = inv.replay_error;
      r.converged = inv.converged && inv.replay_error <= 1e-6;
      r.method = Method::FixedPoint;
      for (const auto& s : inv.steps) r.iters += s.iters;
      r.note = std::to_string(inv.steps.size()) + " Euler steps inverted";
      worst = std::max(worst, inv.replay_error);
      out.recovered.push_back(inv.noise);
      out.items.push_back(std::move(r));
    }
    out.replay = worst;
  } else if (const auto* poly = std::get_if<PolynomialModel>(&model)) {
    const PointMap pm = model_point_map(model);
    (void)poly;
    per_vector([&](const Vector& y, std::size_t) { return newton_invert(pm.f, pm.jac, y, Vector{1.0}, c.solve); });
  } else {
    throw Error(ErrorCode::InvalidArgument, "model type '" + model_type_tag(model) + "' has no inverter");
  }
  for (const auto& r : out.items) out.ok = out.ok && r.converged;
  return out;
}

int cmd_invert(const Flags& f) {
  const ExperimentConfig c = resolve(f, f.policy ? "policy" : "invert");
  const ModelFile m = model_for(c);
  const Sequence targets = resolve_targets(c, model_dim(m.model));
  json report = base_report(c, model_type_tag(m.model));
  report["targets"] = to_json(targets);
  std::vector<std::vector<std::string>> rows;
  int code = 0;
  try {
    const auto t0 = std::chrono::steady_clock::now();
    const InvertOutcome out = invert_model(m.model, targets, c, f.policy || c.task == "policy", !f.no_staged);
    json items = json::array();
    for (std::size_t i = 0; i < out.items.size(); ++i) {
      items.push_back(to_json(out.items[i]));
      rows.push_back(item_row(i, out.items[i]));
    }
    report["items"] = items;
    report["recovered"] = to_json(out.recovered);
    if (out.replay) report["replay_residual"] = *out.replay;
    report["all_converged"] = out.ok;
    if (f.timings) {
      report["wall_clock_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    code = out.ok ? 0 : 1;
  } catch (const Error& e) {
    report["error"] = error_json(e);
    report["all_converged"] = false;
    code = 1;
  }
  finish(c, report, rows);
  return code;
}

int cmd_battery(const Flags& f) {
  const ExperimentConfig c = resolve(f, "battery");
  BatteryConfig bc;
  bc.seed = c.seed;
  bc.dims = c.dims;
  bc.trials = c.trials;
  bc.tol = c.solve.tol;
  const auto t0 = std::chrono::steady_clock::now();
  const VerdictReport r = run_verdict_battery(bc);
  json report = to_json(r);
  if (f.timings) report["wall_clock_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_json(c.out, report);
  const std::string csv = c.csv.empty() ? c.out + ".csv" : c.csv;
  write_csv(csv, battery_csv_header(), battery_csv_rows(r));
  for (const auto& row : r.rows) {
    log(row.architecture + " (d=" + std::to_string(row.dim) + "): " + std::string(to_string(row.verdict)) + " - " +
        row.evidence);
  }
  log("wrote " + c.out + " and " + csv);
  return 0;
}

int cmd_witness(const Flags& f) {
  Flags g = f;
  if (!g.restarts) g.restarts = 20;
  const ExperimentConfig c = resolve(g, "witness");
  const ModelFile m = model_for(c);
  json report = base_report(c, model_type_tag(m.model));
  int code = 0;
  try {
    Witness w;
    if (const auto* mm = std::get_if<MlpModel>(&m.model)) {
      w = relu_mlp_unreachable_witness(mm->mlp, c.seed);
    } else if (const auto* a = std::get_if<AttentionModel>(&m.model)) {
      w = attention_unreachable_witness(a->attn, c.solve);
      const auto& e = std::get<EmpiricalFloor>(w.evidence);
      if (e.success_targets_checked < e.success_targets_total) code = 1;
    } else {
      throw Error(ErrorCode::InvalidArgument, "witnesses exist for ReLU MLPs and plain attention only");
    }
    report["witness"] = to_json(w);
  } catch (const Error& e) {
    report["error"] = error_json(e);
    code = 1;
  }
  write_json(c.out, report);
  log("wrote " + c.out);
  return code;
}

int cmd_degree(const Flags& f) {
  const ExperimentConfig c = resolve(f, "degree");
  const ModelFile m = model_for(c);
  const std::size_t d = model_dim(m.model);
  const Sequence targets = resolve_targets(c, d);
  if (c.box_lo.size() != d || c.box_hi.size() != d) {
    throw Error(ErrorCode::DimensionMismatch, "--lo/--hi must have dimension " + std::to_string(d));
  }
  const DomainBox box{Vector(c.box_lo), Vector(c.box_hi), 1e-6 * norm(Vector(c.box_hi) - Vector(c.box_lo))};
  const PointMap pm = model_point_map(m.model);
  json report = base_report(c, model_type_tag(m.model));
  json results = json::array();
  int code = 0;
  for (const Vector& y : targets) {
    try {
      json r = to_json(brouwer_degree(pm.f, pm.jac, box, y, c.grid));
      r["target"] = to_json(y);
      // Cross-field check for two-layer LeakyReLU MLPs.
      if (const auto* mm = std::get_if<MlpModel>(&m.model)) {
        const MlpParams& p = mm->mlp;
        if (!mm->preln && p.layers.size() == 2 && p.layers[0].activation.kind == Activation::Kind::LeakyReLU &&
            p.layers[1].activation.kind == Activation::Kind::Identity) {
          r["det_sign_W2W1"] = det_sign(p.layers[1].weight * p.layers[0].weight);
        }
      }
      results.push_back(r);
    } catch (const Error& e) {
      results.push_back({{"target", to_json(y)}, {"error", error_json(e)}});
      code = 1;
    }
  }
  report["results"] = results;
  write_json(c.out, report);
  log("wrote " + c.out);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"surjlab: pre-image solvers and surjectivity checks for neural building blocks"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "experiment config (JSON)");
    sub->add_option("--model", f.model, "model file (JSON)");
    sub->add_option("--out", f.out, "report path");
    sub->add_option("--seed", f.seed, "seed (overrides SURJLAB_SEED and the config)");
    sub->add_option("--tol", f.tol, "residual tolerance");
    sub->add_option("--csv", f.csv, "CSV report path");
    sub->add_flag("--timings", f.timings, "record wall-clock time (reports are then not byte-reproducible)");
  };

  auto* gen = app.add_subcommand("gen", "generate random model parameters");
  gen->add_option("--type", f.gen.type, "mlp|layernorm|attention|retention|tf_block|stack|diffusion")->required();
  gen->add_option("--dims", f.gen_dims, "comma separated widths, d first")->required();
  gen->add_option("--seed", f.seed, "seed");
  gen->add_option("--out", f.out, "model path")->required();
  gen->add_option("--blocks", f.gen.blocks, "stack depth");
  gen->add_option("--gating", f.gen.gating, "retention gating: none|mamba2|rwkv6");
  gen->add_option("--activation", f.gen.activation, "mlp activation: gelu|relu|leaky_relu|identity");
  gen->add_option("--alpha", f.gen.alpha, "LeakyReLU slope");
  gen->add_option("--steps", f.gen.steps, "diffusion Euler steps");
  gen->add_flag("--preln", f.gen.preln, "wrap mlp/attention as f(LN(x)) + x");
  gen->add_flag("--zero", f.gen.zero, "zero all weights and biases");

  auto* fwd = app.add_subcommand("forward", "evaluate a model");
  common(fwd);
  fwd->add_option("--input", f.input, "input vectors, e.g. '1,2;3,4'");

  auto* inv = app.add_subcommand("invert", "recover pre-images");
  common(inv);
  inv->add_option("--target", f.target, "target vectors, e.g. '1,2;3,4'");
  inv->add_option("--random-targets", f.random_targets, "number of random targets");
  inv->add_option("--norm-bound", f.norm_bound, "norm bound for random targets");
  auto* lr_opt = inv->add_option("--lr", f.lr, "gradient-descent learning rate")->capture_default_str();
  auto* steps_opt = inv->add_option("--steps", f.steps, "gradient-descent steps per token")->capture_default_str();
  inv->add_option("--restarts", f.restarts, "solver restarts");
  inv->add_flag("--policy", f.policy, "treat targets as actions of an interleaved policy");
  inv->add_flag("--no-staged", f.no_staged, "disable the per-block fallback for stacks");

  auto* bat = app.add_subcommand("battery", "run the architecture verdict battery");
  common(bat);
  bat->add_option("--dims", f.dims, "comma separated dimensions");
  bat->add_option("--trials", f.trials, "random instances per row");

  auto* wit = app.add_subcommand("witness", "build a non-surjectivity witness");
  common(wit);
  wit->add_option("--restarts", f.restarts, "multi-start attempts (default 20)");

  auto* deg = app.add_subcommand("degree", "Brouwer degree by grid enumeration (d <= 3)");
  common(deg);
  deg->add_option("--target", f.target, "target value(s)");
  deg->add_option("--lo", f.lo, "box lower corner");
  deg->add_option("--hi", f.hi, "box upper corner");
  deg->add_option("--grid", f.grid, "starts per axis");

  CLI11_PARSE(app, argc, argv);
  f.lr_set = lr_opt->count() > 0;
  f.steps_set = steps_opt->count() > 0;

  try {
    if (gen->parsed()) return cmd_gen(f);
    if (fwd->parsed()) return cmd_forward(f);
    if (inv->parsed()) return cmd_invert(f);
    if (bat->parsed()) return cmd_battery(f);
    if (wit->parsed()) return cmd_witness(f);
    if (deg->parsed()) return cmd_degree(f);
  } catch (const Error& e) {
    std::cerr << "surjlab: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
