#include "surjlab/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "surjlab/error.hpp"

namespace surjlab {

using nlohmann::json;

namespace {

// JSON cursor that remembers where it is, for error messages.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(&j), path_(std::move(path)) {}

  const std::string& path() const { return path_; }
  const json& raw() const { return *j_; }
  bool has(const std::string& key) const { return j_->is_object() && j_->contains(key); }

  Reader at(const std::string& key) const {
    if (!j_->is_object()) fail("expected an object");
    auto it = j_->find(key);
    if (it == j_->end()) throw Error(ErrorCode::ParseError, "missing field '" + child(key) + "'");
    return {*it, child(key)};
  }
  Reader at(std::size_t i) const { return {(*j_)[i], path_ + "[" + std::to_string(i) + "]"}; }
  std::size_t size() const {
    if (!j_->is_array()) fail("expected an array");
    return j_->size();
  }

  double number() const {
    if (!j_->is_number()) fail("expected a number");
    return j_->get<double>();
  }
  long long integer() const {
    if (!j_->is_number_integer() && !j_->is_number_unsigned()) fail("expected an integer");
    return j_->get<long long>();
  }
  std::string str() const {
    if (!j_->is_string()) fail("expected a string");
    return j_->get<std::string>();
  }
  bool boolean() const {
    if (!j_->is_boolean()) fail("expected a boolean");
    return j_->get<bool>();
  }

  Vector vector() const {
    std::vector<double> v(size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = at(i).number();
    if (v.empty()) throw Error(ErrorCode::DimensionMismatch, path_ + ": empty vector");
    return Vector(std::move(v));
  }
  Matrix matrix() const {
    const std::size_t rows = size();
    if (rows == 0) throw Error(ErrorCode::DimensionMismatch, path_ + ": matrix with zero rows");
    const std::size_t cols = at(0).size();
    if (cols == 0) throw Error(ErrorCode::DimensionMismatch, path_ + ": matrix with zero columns");
    std::vector<double> e;
    e.reserve(rows * cols);
    for (std::size_t i = 0; i < rows; ++i) {
      const Reader r = at(i);
      if (r.size() != cols) throw Error(ErrorCode::DimensionMismatch, r.path() + ": ragged matrix row");
      for (std::size_t k = 0; k < cols; ++k) e.push_back(r.at(k).number());
    }
    return Matrix(rows, cols, std::move(e));
  }

  [[noreturn]] void fail(const std::string& what) const { throw Error(ErrorCode::ParseError, path_ + ": " + what); }

 private:
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* j_;
  std::string path_;
};

json activation_json(const Activation& a) {
  switch (a.kind) {
    case Activation::Kind::ReLU: return {{"kind", "relu"}};
    case Activation::Kind::LeakyReLU: return {{"kind", "leaky_relu"}, {"alpha", a.alpha}};
    case Activation::Kind::GeLU: return {{"kind", "gelu"}};
    case Activation::Kind::Identity: return {{"kind", "identity"}};
    case Activation::Kind::BlendedLeaky: return {{"kind", "blended_leaky"}, {"t", a.t}, {"alpha", a.alpha}};
  }
  return {};
}

Activation read_activation(const Reader& r) {
  const std::string kind = r.at("kind").str();
  if (kind == "relu") return Activation::relu();
  if (kind == "gelu") return Activation::gelu();
  if (kind == "identity") return Activation::identity();
  if (kind == "leaky_relu") return Activation::leaky_relu(r.at("alpha").number());
  if (kind == "blended_leaky") return Activation::blended_leaky(r.at("t").number(), r.at("alpha").number());
  r.at("kind").fail("unknown activation '" + kind + "'");
}

json mlp_json(const MlpParams& p) {
  json layers = json::array();
  for (const auto& l : p.layers) {
    layers.push_back({{"weight", to_json(l.weight)}, {"bias", to_json(l.bias)}, {"activation", activation_json(l.activation)}});
  }
  return {{"layers", layers}};
}

MlpParams read_mlp(const Reader& r) {
  MlpParams p;
  const Reader layers = r.at("layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Reader l = layers.at(i);
    p.layers.push_back({l.at("weight").matrix(), l.at("bias").vector(), read_activation(l.at("activation"))});
  }
  if (p.layers.empty()) throw Error(ErrorCode::DimensionMismatch, layers.path() + ": no layers");
  p.validate();
  return p;
}

json ln_json(const LayerNormParams& p) {
  return {{"gamma", to_json(p.gamma)}, {"beta", to_json(p.beta)}, {"eps", p.eps}};
}

LayerNormParams read_ln(const Reader& r) {
  LayerNormParams p{r.at("gamma").vector(), r.at("beta").vector(), r.has("eps") ? r.at("eps").number() : 0.0};
  p.validate();
  return p;
}

json attention_json(const AttentionParams& p) {
  return {{"K", to_json(p.key)}, {"Q", to_json(p.query)}, {"V", to_json(p.value)}};
}

AttentionParams read_attention(const Reader& r) {
  AttentionParams p{r.at("K").matrix(), r.at("Q").matrix(), r.at("V").matrix()};
  p.validate();
  return p;
}

json block_json(const TransformerBlockParams& b) {
  return {{"attn", attention_json(b.attn)}, {"ln1", ln_json(b.ln1)}, {"ln2", ln_json(b.ln2)},
          {"W1", to_json(b.w1)},            {"W2", to_json(b.w2)},   {"b1", to_json(b.b1)},
          {"b2", to_json(b.b2)}};
}

TransformerBlockParams read_block(const Reader& r) {
  TransformerBlockParams b{read_attention(r.at("attn")), read_ln(r.at("ln1")), read_ln(r.at("ln2")),
                           r.at("W1").matrix(),          r.at("W2").matrix(),  r.at("b1").vector(),
                           r.at("b2").vector()};
  b.validate();
  return b;
}

json retention_json(const RetentionParams& p) {
  json j = {{"K", to_json(p.key)}, {"Q", to_json(p.query)}, {"V", to_json(p.value)}};
  if (const auto* g = std::get_if<Mamba2Gate>(&p.gating)) {
    j["gating"] = {{"kind", "mamba2"}, {"Gamma", to_json(g->gamma)}, {"a", g->log_rate}};
  } else if (const auto* g = std::get_if<Rwkv6Gate>(&p.gating)) {
    j["gating"] = {{"kind", "rwkv6"}, {"A", to_json(g->decay)}};
  } else {
    j["gating"] = {{"kind", "none"}};
  }
  return j;
}

RetentionParams read_retention(const Reader& r) {
  RetentionParams p{r.at("K").matrix(), r.at("Q").matrix(), r.at("V").matrix(), std::monostate{}};
  if (r.has("gating")) {
    const Reader g = r.at("gating");
    const std::string kind = g.at("kind").str();
    if (kind == "mamba2") p.gating = Mamba2Gate{g.at("Gamma").matrix(), g.at("a").number()};
    else if (kind == "rwkv6") p.gating = Rwkv6Gate{g.at("A").matrix()};
    else if (kind != "none") g.at("kind").fail("unknown gating '" + kind + "'");
  }
  p.validate();
  return p;
}

void zero_matrix(Matrix& m) { m = Matrix(m.rows(), m.cols()); }
void zero_vector(Vector& v) { v = Vector(v.size()); }
void zero_mlp(MlpParams& p) {
  for (auto& l : p.layers) {
    zero_matrix(l.weight);
    zero_vector(l.bias);
  }
}
void zero_attention(AttentionParams& p) {
  zero_matrix(p.key);
  zero_matrix(p.query);
  zero_matrix(p.value);
}
void zero_block(TransformerBlockParams& b) {
  zero_attention(b.attn);
  zero_matrix(b.w1);
  zero_matrix(b.w2);
  zero_vector(b.b1);
  zero_vector(b.b2);
}

Activation parse_activation_name(const std::string& name, double alpha) {
  if (name == "gelu") return Activation::gelu();
  if (name == "relu") return Activation::relu();
  if (name == "leaky_relu") return Activation::leaky_relu(alpha);
  if (name == "identity") return Activation::identity();
  throw Error(ErrorCode::InvalidArgument, "unknown activation '" + name + "'");
}

double poly_eval(const std::vector<double>& c, double x) {
  double v = 0.0;
  for (std::size_t k = c.size(); k-- > 0;) v = v * x + c[k];
  return v;
}

double poly_deriv(const std::vector<double>& c, double x) {
  double v = 0.0;
  for (std::size_t k = c.size(); k-- > 1;) v = v * x + static_cast<double>(k) * c[k];
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Model files

std::string model_type_tag(const ModelParams& m) {
  static const char* tags[] = {"mlp", "layernorm", "attention", "retention", "tf_block", "stack", "diffusion",
                               "polynomial"};
  return tags[m.index()];
}

std::size_t model_dim(const ModelParams& m) {
  return std::visit(
      [](const auto& p) -> std::size_t {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, MlpModel>) return p.mlp.input_dim();
        else if constexpr (std::is_same_v<T, AttentionModel>) return p.attn.dim();
        else if constexpr (std::is_same_v<T, PolynomialModel>) return 1;
        else return p.dim();
      },
      m);
}

json model_to_json(const ModelFile& m) {
  json params = std::visit(
      [](const auto& p) -> json {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, MlpModel>) {
          json j = mlp_json(p.mlp);
          if (p.preln) j["preln"] = ln_json(*p.preln);
          return j;
        } else if constexpr (std::is_same_v<T, LayerNormParams>) {
          return ln_json(p);
        } else if constexpr (std::is_same_v<T, AttentionModel>) {
          json j = attention_json(p.attn);
          if (p.preln) j["preln"] = ln_json(*p.preln);
          return j;
        } else if constexpr (std::is_same_v<T, RetentionParams>) {
          return retention_json(p);
        } else if constexpr (std::is_same_v<T, TransformerBlockParams>) {
          return block_json(p);
        } else if constexpr (std::is_same_v<T, StackParams>) {
          json blocks = json::array();
          for (const auto& b : p.blocks) blocks.push_back(block_json(b));
          return {{"blocks", blocks}};
        } else if constexpr (std::is_same_v<T, DiffusionSchedule>) {
          return {{"knots", p.knots}, {"velocity", mlp_json(p.velocity)}, {"ln", ln_json(p.ln)}};
        } else {
          return {{"coefficients", p.coefficients}};
        }
      },
      m.model);
  json dims = {{"d", model_dim(m.model)}};
  if (const auto* mlp = std::get_if<MlpModel>(&m.model)) {
    json hidden = json::array();
    for (std::size_t k = 0; k + 1 < mlp->mlp.layers.size(); ++k) hidden.push_back(mlp->mlp.layers[k].weight.rows());
    dims["hidden"] = hidden;
  } else if (const auto* b = std::get_if<TransformerBlockParams>(&m.model)) {
    dims["d_ff"] = b->hidden_dim();
  } else if (const auto* s = std::get_if<StackParams>(&m.model)) {
    dims["d_ff"] = s->blocks.front().hidden_dim();
    dims["blocks"] = s->blocks.size();
  }
  return {{"schema_version", m.schema_version}, {"type", model_type_tag(m.model)}, {"dims", dims}, {"params", params}};
}

ModelFile model_from_json(const json& j) {
  const Reader root(j, "");
  const long long version = root.at("schema_version").integer();
  if (version != kSchemaVersion) {
    throw Error(ErrorCode::ParseError, "unsupported schema_version " + std::to_string(version) + " (expected " +
                                           std::to_string(kSchemaVersion) + ")");
  }
  const std::string type = root.at("type").str();
  const long long d = root.at("dims").at("d").integer();
  if (d <= 0) throw Error(ErrorCode::DimensionMismatch, "dims.d must be positive, got " + std::to_string(d));
  const Reader p = root.at("params");

  ModelFile m;
  if (type == "mlp") {
    MlpModel model{read_mlp(p), std::nullopt};
    if (p.has("preln")) model.preln = read_ln(p.at("preln"));
    m.model = std::move(model);
  } else if (type == "layernorm") {
    m.model = read_ln(p);
  } else if (type == "attention") {
    AttentionModel model{read_attention(p), std::nullopt};
    if (p.has("preln")) model.preln = read_ln(p.at("preln"));
    m.model = std::move(model);
  } else if (type == "retention") {
    m.model = read_retention(p);
  } else if (type == "tf_block") {
    m.model = read_block(p);
  } else if (type == "stack") {
    StackParams s;
    const Reader blocks = p.at("blocks");
    for (std::size_t i = 0; i < blocks.size(); ++i) s.blocks.push_back(read_block(blocks.at(i)));
    if (s.blocks.empty()) throw Error(ErrorCode::DimensionMismatch, "params.blocks: empty stack");
    s.validate();
    m.model = std::move(s);
  } else if (type == "diffusion") {
    DiffusionSchedule s;
    const Reader knots = p.at("knots");
    for (std::size_t i = 0; i < knots.size(); ++i) s.knots.push_back(knots.at(i).number());
    s.velocity = read_mlp(p.at("velocity"));
    s.ln = read_ln(p.at("ln"));
    s.validate();
    m.model = std::move(s);
  } else if (type == "polynomial") {
    PolynomialModel poly;
    const Reader c = p.at("coefficients");
    for (std::size_t i = 0; i < c.size(); ++i) poly.coefficients.push_back(c.at(i).number());
    if (poly.coefficients.empty()) throw Error(ErrorCode::DimensionMismatch, "params.coefficients: empty");
    m.model = std::move(poly);
  } else {
    root.at("type").fail("unknown model type '" + type + "'");
  }
  if (const auto* mlp = std::get_if<MlpModel>(&m.model)) {
    if (mlp->preln && (mlp->preln->dim() != mlp->mlp.input_dim() || mlp->mlp.output_dim() != mlp->mlp.input_dim())) {
      throw Error(ErrorCode::DimensionMismatch, "params.preln: Pre-LN MLP must map R^d to R^d");
    }
  } else if (const auto* att = std::get_if<AttentionModel>(&m.model)) {
    if (att->preln && att->preln->dim() != att->attn.dim()) {
      throw Error(ErrorCode::DimensionMismatch, "params.preln: LayerNorm dimension");
    }
  }
  if (model_dim(m.model) != static_cast<std::size_t>(d)) {
    throw Error(ErrorCode::DimensionMismatch, "dims.d = " + std::to_string(d) + " but parameters have d = " +
                                                  std::to_string(model_dim(m.model)));
  }
  return m;
}

ModelFile parse_model(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, std::string("invalid JSON: ") + e.what());
  }
  return model_from_json(j);
}

void save_model(const std::filesystem::path& path, const ModelFile& m) { write_json(path, model_to_json(m)); }

ModelFile load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_model(ss.str());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

ModelFile generate_model(const GenOptions& o) {
  if (o.dims.empty() || o.dims.front() == 0) throw Error(ErrorCode::DimensionMismatch, "dims must start with d >= 1");
  const std::size_t d = o.dims.front();
  auto dim_or = [&](std::size_t i, std::size_t fallback) { return o.dims.size() > i ? o.dims[i] : fallback; };
  ModelFile m;
  if (o.type == "mlp") {
    std::vector<std::size_t> widths = o.dims;
    if (widths.size() == 1) widths.push_back(2 * d);
    if (widths.size() == 2 || (o.preln && widths.back() != d)) widths.push_back(d);
    MlpModel model{random_mlp(widths, parse_activation_name(o.activation, o.alpha), o.seed), std::nullopt};
    if (o.zero) zero_mlp(model.mlp);
    if (o.preln) model.preln = LayerNormParams::standard(d);
    m.model = std::move(model);
  } else if (o.type == "layernorm") {
    m.model = LayerNormParams::standard(d);
  } else if (o.type == "attention") {
    AttentionModel model{random_attention(d, o.seed), std::nullopt};
    if (o.zero) zero_attention(model.attn);
    if (o.preln) model.preln = LayerNormParams::standard(d);
    m.model = std::move(model);
  } else if (o.type == "retention") {
    GatingKind g = GatingKind::None;
    if (o.gating == "mamba2") g = GatingKind::Mamba2;
    else if (o.gating == "rwkv6") g = GatingKind::Rwkv6;
    else if (o.gating != "none") throw Error(ErrorCode::InvalidArgument, "unknown gating '" + o.gating + "'");
    m.model = random_retention(d, g, o.seed);
  } else if (o.type == "tf_block") {
    TransformerBlockParams b = random_block(d, dim_or(1, 4 * d), o.seed);
    if (o.zero) zero_block(b);
    m.model = std::move(b);
  } else if (o.type == "stack") {
    StackParams s = random_stack(o.blocks, d, dim_or(1, 4 * d), o.seed);
    if (o.zero) {
      for (auto& b : s.blocks) zero_block(b);
    }
    m.model = std::move(s);
  } else if (o.type == "diffusion") {
    DiffusionSchedule s = random_diffusion(d, dim_or(1, 4 * d), o.steps, o.seed);
    if (o.zero) zero_mlp(s.velocity);
    m.model = std::move(s);
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown model type '" + o.type + "'");
  }
  return m;
}

Sequence model_forward(const ModelParams& m, const Sequence& input) {
  if (input.empty()) throw Error(ErrorCode::InvalidArgument, "empty input sequence");
  sequence_dim(input, model_dim(m));
  return std::visit(
      [&](const auto& p) -> Sequence {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, AttentionModel>) {
          return p.preln ? preln_attention_forward(p.attn, *p.preln, input) : attention_forward(p.attn, input);
        } else if constexpr (std::is_same_v<T, RetentionParams>) {
          return retention_forward(p, input);
        } else if constexpr (std::is_same_v<T, TransformerBlockParams>) {
          return transformer_block_forward(p, input);
        } else if constexpr (std::is_same_v<T, StackParams>) {
          return stack_forward(p, input);
        } else {
          const PointMap pm = model_point_map(m);
          Sequence out;
          for (const Vector& x : input) out.push_back(pm.f(x));
          return out;
        }
      },
      m);
}

PointMap model_point_map(const ModelParams& m) {
  return std::visit(
      [&](const auto& p) -> PointMap {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, MlpModel>) {
          if (p.preln) {
            const PreLnMlpBlock b{p.mlp, *p.preln};
            return {[b](const Vector& x) { return preln_mlp_forward(b, x); },
                    [b](const Vector& x) { return preln_mlp_jacobian(b, x); }};
          }
          return {[p](const Vector& x) { return mlp_forward(p.mlp, x); },
                  [p](const Vector& x) { return mlp_jacobian(p.mlp, x); }};
        } else if constexpr (std::is_same_v<T, LayerNormParams>) {
          return {[p](const Vector& x) { return layer_norm(p, x); },
                  [p](const Vector& x) { return layer_norm_jacobian(p, x); }};
        } else if constexpr (std::is_same_v<T, AttentionModel>) {
          if (p.preln) {
            return {[p](const Vector& x) { return preln_attention_last(p.attn, *p.preln, {}, x); },
                    [p](const Vector& x) {
                      return preln_wrap_jacobian(
                          [&](const Vector& u) { return attention_last_jacobian(p.attn, AttentionPrefix{}, u); },
                          *p.preln, x);
                    }};
          }
          return {[p](const Vector& x) { return attention_last(p.attn, AttentionPrefix{}, x); },
                  [p](const Vector& x) { return attention_last_jacobian(p.attn, AttentionPrefix{}, x); }};
        } else if constexpr (std::is_same_v<T, RetentionParams>) {
          const Matrix zero(p.dim(), p.dim());
          return {[p, zero](const Vector& x) { return retention_last(p, zero, x); },
                  [p, zero](const Vector& x) { return retention_last_jacobian(p, zero, x); }};
        } else if constexpr (std::is_same_v<T, TransformerBlockParams>) {
          const StackParams s{{p}};
          return {[s](const Vector& x) { return last_position_map(s, {}, x); },
                  [s](const Vector& x) { return last_position_jacobian(s, {}, x); }};
        } else if constexpr (std::is_same_v<T, StackParams>) {
          return {[p](const Vector& x) { return last_position_map(p, {}, x); },
                  [p](const Vector& x) { return last_position_jacobian(p, {}, x); }};
        } else if constexpr (std::is_same_v<T, DiffusionSchedule>) {
          return {[p](const Vector& x) { return diffusion_sample(p, x); },
                  [p](const Vector& x) {
                    return finite_difference_jacobian([&](const Vector& z) { return diffusion_sample(p, z); }, x);
                  }};
        } else {
          return {[p](const Vector& x) { return Vector{poly_eval(p.coefficients, x[0])}; },
                  [p](const Vector& x) { return Matrix{{poly_deriv(p.coefficients, x[0])}}; }};
        }
      },
      m);
}

// ---------------------------------------------------------------------------
// Experiment configuration

void ExperimentConfig::validate() const {
  solve.validate();
  gd.validate();
  cubic.validate();
  static const char* tasks[] = {"forward", "invert", "battery", "witness", "degree", "diffusion", "policy"};
  if (std::find(std::begin(tasks), std::end(tasks), task) == std::end(tasks)) {
    throw Error(ErrorCode::InvalidArgument, "unknown task '" + task + "'");
  }
  const bool needs_target = task == "forward" || task == "invert" || task == "degree" || task == "diffusion" ||
                            task == "policy";
  if (needs_target && target.kind == TargetSpec::Kind::None) {
    throw Error(ErrorCode::InvalidArgument, "task '" + task + "' needs exactly one target source");
  }
  if (target.kind == TargetSpec::Kind::Random && (target.count < 1 || !(target.norm_bound > 0.0))) {
    throw Error(ErrorCode::InvalidArgument, "random targets need count >= 1 and norm_bound > 0");
  }
  if (trials < 1) throw Error(ErrorCode::InvalidArgument, "trials must be >= 1");
  if (grid < 1) throw Error(ErrorCode::InvalidArgument, "grid must be >= 1");
}

ExperimentConfig config_from_json(const json& j) {
  const Reader root(j, "");
  ExperimentConfig c;
  if (root.has("task")) c.task = root.at("task").str();
  if (root.has("model")) c.model_path = root.at("model").str();
  if (root.has("generate")) {
    const Reader g = root.at("generate");
    GenOptions o;
    o.type = g.at("type").str();
    const Reader dims = g.at("dims");
    for (std::size_t i = 0; i < dims.size(); ++i) o.dims.push_back(static_cast<std::size_t>(dims.at(i).integer()));
    if (g.has("seed")) o.seed = Seed{static_cast<std::uint64_t>(g.at("seed").integer())};
    if (g.has("blocks")) o.blocks = static_cast<std::size_t>(g.at("blocks").integer());
    if (g.has("gating")) o.gating = g.at("gating").str();
    if (g.has("activation")) o.activation = g.at("activation").str();
    if (g.has("alpha")) o.alpha = g.at("alpha").number();
    if (g.has("preln")) o.preln = g.at("preln").boolean();
    if (g.has("zero")) o.zero = g.at("zero").boolean();
    if (g.has("steps")) o.steps = static_cast<int>(g.at("steps").integer());
    c.generate = o;
  }
  if (root.has("seed")) c.seed = Seed{static_cast<std::uint64_t>(root.at("seed").integer())};
  if (root.has("target")) {
    const Reader t = root.at("target");
    const std::string kind = t.at("kind").str();
    int sources = 0;
    if (kind == "file") {
      c.target.kind = TargetSpec::Kind::File;
      c.target.path = t.at("path").str();
      ++sources;
    } else if (kind == "random") {
      c.target.kind = TargetSpec::Kind::Random;
      if (t.has("count")) c.target.count = static_cast<int>(t.at("count").integer());
      if (t.has("norm_bound")) c.target.norm_bound = t.at("norm_bound").number();
      ++sources;
    } else if (kind == "literal") {
      c.target.kind = TargetSpec::Kind::Literal;
      const Reader v = t.at("values");
      for (std::size_t i = 0; i < v.size(); ++i) c.target.values.push_back(v.at(i).vector());
      ++sources;
    } else {
      t.at("kind").fail("unknown target kind '" + kind + "'");
    }
    if (sources != 1) t.fail("exactly one target source required");
  }
  if (root.has("solver")) {
    const Reader s = root.at("solver");
    if (s.has("tol")) c.solve.tol = c.gd.tol = c.cubic.tol = s.at("tol").number();
    if (s.has("max_iters")) c.solve.max_iters = static_cast<int>(s.at("max_iters").integer());
    if (s.has("damping")) c.solve.damping = s.at("damping").number();
    if (s.has("anderson_depth")) c.solve.anderson_depth = static_cast<int>(s.at("anderson_depth").integer());
    if (s.has("restarts")) c.solve.restarts = c.cubic.restarts = static_cast<int>(s.at("restarts").integer());
    if (s.has("lr")) c.gd.learning_rate = s.at("lr").number();
    if (s.has("steps")) c.gd.steps = static_cast<int>(s.at("steps").integer());
    if (s.has("backtracking")) c.gd.backtracking = s.at("backtracking").boolean();
    if (s.has("delta")) c.cubic.delta = s.at("delta").number();
    if (s.has("t_step_init")) c.cubic.t_step_init = s.at("t_step_init").number();
    if (s.has("t_step_min")) c.cubic.t_step_min = s.at("t_step_min").number();
    if (s.has("newton_iters_per_step")) {
      c.cubic.newton_iters_per_step = static_cast<int>(s.at("newton_iters_per_step").integer());
    }
  }
  if (root.has("out")) c.out = root.at("out").str();
  if (root.has("csv")) c.csv = root.at("csv").str();
  if (root.has("dims")) {
    c.dims.clear();
    const Reader dims = root.at("dims");
    for (std::size_t i = 0; i < dims.size(); ++i) c.dims.push_back(static_cast<std::size_t>(dims.at(i).integer()));
  }
  if (root.has("trials")) c.trials = static_cast<int>(root.at("trials").integer());
  if (root.has("box")) {
    const Reader box = root.at("box");
    c.box_lo = box.at("lo").vector().values();
    c.box_hi = box.at("hi").vector().values();
  }
  if (root.has("grid")) c.grid = static_cast<int>(root.at("grid").integer());
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": invalid JSON: " + e.what());
  }
  ExperimentConfig c = config_from_json(j);
  // Relative paths inside a config are relative to the config itself.
  const auto rebase = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (path.parent_path() / p).string();
  };
  rebase(c.model_path);
  if (c.target.kind == TargetSpec::Kind::File) rebase(c.target.path);
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json j = {{"task", c.task},
            {"model", c.model_path},
            {"seed", c.seed.value},
            {"solver",
             {{"tol", c.solve.tol},
              {"max_iters", c.solve.max_iters},
              {"damping", c.solve.damping},
              {"anderson_depth", c.solve.anderson_depth},
              {"restarts", c.solve.restarts},
              {"lr", c.gd.learning_rate},
              {"steps", c.gd.steps},
              {"backtracking", c.gd.backtracking},
              {"delta", c.cubic.delta},
              {"t_step_init", c.cubic.t_step_init},
              {"t_step_min", c.cubic.t_step_min},
              {"newton_iters_per_step", c.cubic.newton_iters_per_step}}},
            {"dims", c.dims},
            {"trials", c.trials},
            {"grid", c.grid}};
  switch (c.target.kind) {
    case TargetSpec::Kind::None: break;
    case TargetSpec::Kind::File: j["target"] = {{"kind", "file"}, {"path", c.target.path}}; break;
    case TargetSpec::Kind::Random:
      j["target"] = {{"kind", "random"}, {"count", c.target.count}, {"norm_bound", c.target.norm_bound}};
      break;
    case TargetSpec::Kind::Literal: j["target"] = {{"kind", "literal"}, {"values", to_json(c.target.values)}}; break;
  }
  if (c.generate) {
    const GenOptions& o = *c.generate;
    j["generate"] = {{"type", o.type},         {"dims", o.dims},   {"seed", o.seed.value}, {"blocks", o.blocks},
                     {"gating", o.gating},     {"activation", o.activation},            {"alpha", o.alpha},
                     {"preln", o.preln},       {"zero", o.zero},   {"steps", o.steps}};
  }
  if (!c.box_lo.empty()) j["box"] = {{"lo", c.box_lo}, {"hi", c.box_hi}};
  return j;
}

bool apply_seed_env(ExperimentConfig& c) {
  const char* env = std::getenv("SURJLAB_SEED");
  if (env == nullptr || *env == '\0') return false;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (end == env || *end != '\0') throw Error(ErrorCode::InvalidArgument, "SURJLAB_SEED must be an unsigned integer");
  c.seed = Seed{v};
  return true;
}

void propagate_seed(ExperimentConfig& c) {
  c.solve.seed = derive_seed(c.seed, "solve");
  c.cubic.seed = derive_seed(c.seed, "cubic");
}

Sequence parse_vector_list(const std::string& text) {
  Sequence out;
  std::stringstream groups(text);
  std::string group;
  while (std::getline(groups, group, ';')) {
    std::vector<double> v;
    std::stringstream items(group);
    std::string item;
    while (std::getline(items, item, ',')) {
      char* end = nullptr;
      const double x = std::strtod(item.c_str(), &end);
      if (end == item.c_str()) throw Error(ErrorCode::ParseError, "not a number: '" + item + "'");
      while (*end == ' ') ++end;
      if (*end != '\0') throw Error(ErrorCode::ParseError, "not a number: '" + item + "'");
      v.push_back(x);
    }
    if (v.empty()) throw Error(ErrorCode::ParseError, "empty vector in '" + text + "'");
    out.push_back(Vector(std::move(v)));
  }
  if (out.empty()) throw Error(ErrorCode::ParseError, "no vectors in '" + text + "'");
  return out;
}

std::vector<std::size_t> parse_dims(const std::string& text) {
  std::vector<std::size_t> dims;
  for (const Vector& v : parse_vector_list(text)) {
    for (double x : v) {
      if (x < 0 || x != std::floor(x)) throw Error(ErrorCode::ParseError, "dims must be nonnegative integers");
      dims.push_back(static_cast<std::size_t>(x));
    }
  }
  return dims;
}

// ---------------------------------------------------------------------------
// Reports

json to_json(const Vector& v) { return v.values(); }

json to_json(const Sequence& s) {
  json j = json::array();
  for (const Vector& v : s) j.push_back(to_json(v));
  return j;
}

json to_json(const Matrix& m) {
  json j = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) j.push_back(to_json(m.row(i)));
  return j;
}

namespace {

// JSON has no infinity; unreached residuals are written as null.
json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

json to_json(const InversionResult& r, bool with_trace) {
  json j = {{"x", to_json(r.x)},
            {"residual", finite_or_null(r.residual)},
            {"iters", r.iters},
            {"method", std::string(to_string(r.method))},
            {"converged", r.converged},
            {"ball_radius", r.ball_radius},
            {"note", r.note}};
  if (with_trace) {
    json t = json::array();
    for (double v : r.trace) t.push_back(finite_or_null(v));
    j["trace"] = t;
  }
  return j;
}

json to_json(const Witness& w) {
  json j = {{"target", to_json(w.target)}, {"context", w.context}};
  if (const auto* c = std::get_if<CertifiedGap>(&w.evidence)) {
    j["kind"] = "certified";
    j["gap"] = c->gap;
  } else if (const auto* x = std::get_if<ExhaustiveEnumeration>(&w.evidence)) {
    j["kind"] = "enumerated";
    j["patterns"] = x->patterns;
  } else {
    const auto& e = std::get<EmpiricalFloor>(w.evidence);
    j["kind"] = "empirical";
    j["residual_floor"] = e.residual_floor;
    j["restarts"] = e.restarts;
    j["success_targets_checked"] = e.success_targets_checked;
    j["success_targets_total"] = e.success_targets_total;
  }
  return j;
}

json to_json(const DegreeResult& r) {
  json roots = json::array();
  for (const auto& root : r.roots) roots.push_back({{"x", to_json(root.x)}, {"sign", root.sign}});
  return {{"degree", r.degree}, {"roots", roots}, {"rejected", r.rejected}, {"boundary_min", r.boundary_min}};
}

json to_json(const VerdictReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    json results = json::array();
    for (const auto& res : row.results) results.push_back(to_json(res));
    json witnesses = json::array();
    for (const auto& w : row.witnesses) witnesses.push_back(to_json(w));
    rows.push_back({{"architecture", row.architecture},
                    {"d", row.dim},
                    {"expected", std::string(to_string(row.expected))},
                    {"verdict", std::string(to_string(row.verdict))},
                    {"threshold", row.threshold},
                    {"attempts", row.attempts},
                    {"successes", row.successes},
                    {"success_rate", row.success_rate()},
                    {"witness_attempts", row.witness_attempts},
                    {"witnesses_found", row.witnesses_found},
                    {"max_residual", row.max_residual},
                    {"median_residual", finite_or_null(row.median_residual)},
                    {"evidence", row.evidence},
                    {"results", results},
                    {"witnesses", witnesses}});
  }
  return {{"provenance", provenance(r.config.seed, r.config_digest)},
          {"trials", r.config.trials},
          {"dims", r.config.dims},
          {"matches_expected", r.matches_expected()},
          {"rows", rows}};
}

json provenance(Seed seed, const std::string& config_digest) {
  return {{"tool", "surjlab"}, {"version", kToolVersion}, {"seed", seed.value}, {"config_digest", config_digest}};
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path.string());
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) out << (i ? "," : "") << csv_escape(fields[i]);
    out << "\r\n";
  };
  line(header);
  for (const auto& r : rows) line(r);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> battery_csv_header() {
  return {"architecture", "d",         "expected", "verdict",         "success_rate", "attempts",
          "successes",    "witnesses", "max_residual", "median_residual", "evidence"};
}

std::vector<std::vector<std::string>> battery_csv_rows(const VerdictReport& r) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& row : r.rows) {
    rows.push_back({row.architecture, std::to_string(row.dim), std::string(to_string(row.expected)),
                    std::string(to_string(row.verdict)), format_double(row.success_rate()),
                    std::to_string(row.attempts), std::to_string(row.successes),
                    std::to_string(row.witnesses_found) + "/" + std::to_string(row.witness_attempts),
                    format_double(row.max_residual), format_double(row.median_residual), row.evidence});
  }
  return rows;
}

}  // namespace surjlab
