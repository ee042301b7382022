#pragma once

// Model files, experiment configs and reports (JSON + RFC-4180 CSV).

#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "surjlab/battery.hpp"
#include "surjlab/degree.hpp"
#include "surjlab/generate.hpp"
#include "surjlab/harness.hpp"

namespace surjlab {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

/// An MLP, optionally Pre-LN wrapped (g(x) = mlp(LN(x)) + x).
struct MlpModel {
  MlpParams mlp;
  std::optional<LayerNormParams> preln;
  friend bool operator==(const MlpModel&, const MlpModel&) = default;
};

/// Causal attention, optionally Pre-LN wrapped per position.
struct AttentionModel {
  AttentionParams attn;
  std::optional<LayerNormParams> preln;
  friend bool operator==(const AttentionModel&, const AttentionModel&) = default;
};

/// Scalar polynomial Σ c_k x^k, used for the d = 1 degree fixtures.
struct PolynomialModel {
  std::vector<double> coefficients;
  friend bool operator==(const PolynomialModel&, const PolynomialModel&) = default;
};

using ModelParams = std::variant<MlpModel, LayerNormParams, AttentionModel, RetentionParams, TransformerBlockParams,
                                 StackParams, DiffusionSchedule, PolynomialModel>;

struct ModelFile {
  int schema_version = kSchemaVersion;
  ModelParams model;
};

std::string model_type_tag(const ModelParams& m);
std::size_t model_dim(const ModelParams& m);

nlohmann::json model_to_json(const ModelFile& m);
/// Throws ParseError (with the offending field path) or DimensionMismatch.
ModelFile model_from_json(const nlohmann::json& j);
ModelFile parse_model(const std::string& text);
void save_model(const std::filesystem::path& path, const ModelFile& m);
ModelFile load_model(const std::filesystem::path& path);

struct GenOptions {
  std::string type;                // mlp | layernorm | attention | retention | tf_block | stack | diffusion
  std::vector<std::size_t> dims;   // type specific, see README
  Seed seed{};
  std::size_t blocks = 2;          // stack
  std::string gating = "none";     // retention: none | mamba2 | rwkv6
  std::string activation = "gelu";  // mlp: gelu | relu | leaky_relu | identity
  double alpha = 0.25;             // leaky_relu slope
  bool preln = false;              // mlp, attention
  bool zero = false;               // all weights and biases zero
  int steps = 10;                  // diffusion Euler steps
};

ModelFile generate_model(const GenOptions& opts);

/// Forward map of any model on a sequence (vector models map each element).
Sequence model_forward(const ModelParams& m, const Sequence& input);

// ---------------------------------------------------------------------------
// Experiment configuration

struct TargetSpec {
  enum class Kind { None, File, Random, Literal };
  Kind kind = Kind::None;
  std::string path;          // File: JSON array of vectors
  int count = 1;             // Random
  double norm_bound = 100.0;  // Random
  Sequence values;           // Literal
};

struct ExperimentConfig {
  std::string task = "invert";  // forward | invert | battery | witness | degree | diffusion | policy
  std::string model_path;
  std::optional<GenOptions> generate;
  TargetSpec target;
  SolveConfig solve;
  GdConfig gd;
  CubicSolveConfig cubic;
  Seed seed{};
  std::string out;
  std::string csv;
  // battery
  std::vector<std::size_t> dims{4};
  int trials = 20;
  // degree
  std::vector<double> box_lo, box_hi;
  int grid = 24;

  void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const ExperimentConfig& c);
/// Applies SURJLAB_SEED if set; returns whether it was applied.
bool apply_seed_env(ExperimentConfig& c);
/// Propagates c.seed into the solver configs.
void propagate_seed(ExperimentConfig& c);

/// "1,2;3,4" -> {(1,2), (3,4)}
Sequence parse_vector_list(const std::string& text);
std::vector<std::size_t> parse_dims(const std::string& text);

// ---------------------------------------------------------------------------
// Reports

nlohmann::json to_json(const Vector& v);
nlohmann::json to_json(const Sequence& s);
nlohmann::json to_json(const Matrix& m);
nlohmann::json to_json(const InversionResult& r, bool with_trace = false);
nlohmann::json to_json(const Witness& w);
nlohmann::json to_json(const DegreeResult& r);
nlohmann::json to_json(const VerdictReport& r);

/// Provenance block common to all reports.
nlohmann::json provenance(Seed seed, const std::string& config_digest);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);

std::string csv_escape(const std::string& field);
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);
std::string format_double(double v);

std::vector<std::vector<std::string>> battery_csv_rows(const VerdictReport& r);
std::vector<std::string> battery_csv_header();

}  // namespace surjlab

namespace surjlab {

/// A model viewed as a single-point map R^d -> R^d with its Jacobian (GPT
/// blocks and stacks at position 1; attention models likewise).
struct PointMap {
  VectorMap f;
  JacobianMap jac;
};
PointMap model_point_map(const ModelParams& m);

}  // namespace surjlab
