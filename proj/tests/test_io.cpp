#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "support.hpp"
#include "surjlab/error.hpp"
#include "surjlab/io.hpp"

using namespace surjlab;
using surjlab::test::error_code_of;

namespace {

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "surjlab_test_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("generated models survive a save/load round trip bit for bit") {
  std::vector<GenOptions> all;
  auto add = [&](std::string type, std::vector<std::size_t> dims) {
    GenOptions o;
    o.type = std::move(type);
    o.dims = std::move(dims);
    o.seed = Seed{static_cast<std::uint64_t>(all.size() + 3)};
    all.push_back(o);
    return &all.back();
  };
  add("mlp", {3, 5, 3});
  add("mlp", {2, 4, 2})->preln = true;
  add("mlp", {2, 3, 2})->activation = "leaky_relu";
  add("layernorm", {4});
  add("attention", {3});
  add("attention", {3})->preln = true;
  add("retention", {3});
  add("retention", {3})->gating = "mamba2";
  add("retention", {3})->gating = "rwkv6";
  add("tf_block", {4, 8});
  add("stack", {4, 8});
  add("diffusion", {3, 6});
  for (const GenOptions& o : all) {
    CAPTURE(o.type);
    const ModelFile m = generate_model(o);
    const auto path = scratch(o.type + ".json");
    save_model(path, m);
    const ModelFile back = load_model(path);
    CHECK(back.model == m.model);
    CHECK(model_to_json(back).dump() == model_to_json(m).dump());
    // same seed, same file
    save_model(scratch("again.json"), generate_model(o));
    CHECK(slurp(path) == slurp(scratch("again.json")));
  }
}

TEST_CASE("fixtures load") {
  const ModelFile m = load_model(SURJLAB_FIXTURES "/leaky_mlp_d2.json");
  const auto& mlp = std::get<MlpModel>(m.model).mlp;
  CHECK(mlp.layers[0].activation == Activation::leaky_relu(0.25));
  CHECK(mlp.layers[1].weight(1, 1) == 1.1);
  CHECK(std::get<PolynomialModel>(load_model(SURJLAB_FIXTURES "/poly_cubic.json").model).coefficients.size() == 4);
  CHECK(model_dim(load_model(SURJLAB_FIXTURES "/retention_scalar.json").model) == 1);
}

TEST_CASE("malformed model files") {
  nlohmann::json good = model_to_json(load_model(SURJLAB_FIXTURES "/leaky_mlp_d2.json"));

  SUBCASE("missing field names the field") {
    nlohmann::json j = good;
    j["params"]["layers"][1].erase("bias");
    CHECK(error_code_of([&] { model_from_json(j); }) == ErrorCode::ParseError);
    const std::string msg = message_of([&] { model_from_json(j); });
    CHECK(msg.find("bias") != std::string::npos);
    CHECK(msg.find("layers") != std::string::npos);
  }
  SUBCASE("truncated text") {
    const std::string text = good.dump();
    CHECK(error_code_of([&] { parse_model(text.substr(0, text.size() / 2)); }) == ErrorCode::ParseError);
  }
  SUBCASE("wrong type names the field") {
    nlohmann::json j = good;
    j["params"]["layers"][0]["weight"][0][1] = "x";
    CHECK(error_code_of([&] { model_from_json(j); }) == ErrorCode::ParseError);
    CHECK(message_of([&] { model_from_json(j); }).find("weight") != std::string::npos);
  }
  SUBCASE("zero dimension") {
    nlohmann::json j = good;
    j["dims"]["d"] = 0;
    CHECK(error_code_of([&] { model_from_json(j); }) == ErrorCode::DimensionMismatch);
  }
  SUBCASE("declared dimension disagrees with the weights") {
    nlohmann::json j = good;
    j["dims"]["d"] = 3;
    CHECK(error_code_of([&] { model_from_json(j); }) == ErrorCode::DimensionMismatch);
  }
  SUBCASE("ragged matrix") {
    nlohmann::json j = good;
    j["params"]["layers"][0]["weight"][1] = {1.0};
    CHECK(error_code_of([&] { model_from_json(j); }) == ErrorCode::DimensionMismatch);
  }
  SUBCASE("unknown schema version") {
    nlohmann::json j = good;
    j["schema_version"] = 2;
    CHECK(error_code_of([&] { model_from_json(j); }) == ErrorCode::ParseError);
    CHECK(message_of([&] { model_from_json(j); }).find("schema_version") != std::string::npos);
  }
  SUBCASE("unknown type") {
    nlohmann::json j = good;
    j["type"] = "lstm";
    CHECK(error_code_of([&] { model_from_json(j); }) == ErrorCode::ParseError);
  }
  SUBCASE("missing file") {
    CHECK(error_code_of([] { load_model("/nonexistent/model.json"); }) == ErrorCode::ParseError);
  }
}

TEST_CASE("experiment configs") {
  const ExperimentConfig c = load_config(SURJLAB_FIXTURES "/invert_config.json");
  CHECK(c.task == "invert");
  CHECK(c.seed.value == 11);
  CHECK(c.target.kind == TargetSpec::Kind::Literal);
  REQUIRE(c.target.values.size() == 1);
  CHECK(c.target.values[0][0] == 8.0);
  // relative to the config file, not the working directory
  CHECK(std::filesystem::path(c.model_path) == std::filesystem::path(SURJLAB_FIXTURES) / "retention_scalar.json");

  SUBCASE("round trip") {
    const ExperimentConfig back = config_from_json(config_to_json(c));
    CHECK(config_to_json(back).dump() == config_to_json(c).dump());
  }
  SUBCASE("solver settings") {
    const ExperimentConfig s = config_from_json(nlohmann::json::parse(
        R"({"task": "battery", "seed": 5, "dims": [2, 3], "trials": 4,
            "solver": {"tol": 1e-6, "lr": 0.05, "steps": 50, "restarts": 3}})"));
    CHECK(s.dims == std::vector<std::size_t>{2, 3});
    CHECK(s.trials == 4);
    CHECK(s.solve.tol == 1e-6);
    CHECK(s.gd.learning_rate == 0.05);
    CHECK(s.gd.steps == 50);
    CHECK(s.solve.restarts == 3);
  }
  SUBCASE("bad values") {
    CHECK(error_code_of([] { config_from_json(nlohmann::json::parse(R"({"solver": {"tol": "small"}})")); }) ==
          ErrorCode::ParseError);
    CHECK(error_code_of([] {
            config_from_json(nlohmann::json::parse(R"({"solver": {"tol": -1}})")).validate();
          }) == ErrorCode::InvalidArgument);
  }
}

TEST_CASE("SURJLAB_SEED overrides the config seed") {
  ExperimentConfig c;
  c.seed = Seed{11};
  ::unsetenv("SURJLAB_SEED");
  CHECK_FALSE(apply_seed_env(c));
  CHECK(c.seed.value == 11);
  ::setenv("SURJLAB_SEED", "42", 1);
  CHECK(apply_seed_env(c));
  CHECK(c.seed.value == 42);
  ::setenv("SURJLAB_SEED", "4x", 1);
  CHECK(error_code_of([&] { apply_seed_env(c); }) == ErrorCode::InvalidArgument);
  ::unsetenv("SURJLAB_SEED");

  ExperimentConfig a, b;
  a.seed = b.seed = Seed{42};
  propagate_seed(a);
  propagate_seed(b);
  CHECK(a.solve.seed == b.solve.seed);
  CHECK_FALSE(a.solve.seed == a.cubic.seed);
}

TEST_CASE("vector and dims parsing") {
  const Sequence s = parse_vector_list("1,2;3.5,-4");
  REQUIRE(s.size() == 2);
  CHECK(s[1] == Vector{3.5, -4});
  CHECK(parse_dims("4,8,4") == std::vector<std::size_t>{4, 8, 4});
  CHECK(error_code_of([] { parse_vector_list("1,a"); }) == ErrorCode::ParseError);
  CHECK(error_code_of([] { parse_vector_list(""); }) == ErrorCode::ParseError);
  CHECK(error_code_of([] { parse_dims("2,-1"); }) == ErrorCode::ParseError);
}

TEST_CASE("CSV output follows RFC 4180") {
  CHECK(csv_escape("plain") == "plain");
  CHECK(csv_escape("a,b") == "\"a,b\"");
  CHECK(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
  CHECK(csv_escape("two\nlines") == "\"two\nlines\"");

  const auto path = scratch("out.csv");
  write_csv(path, {"name", "value"}, {{"x,y", "1"}, {"q\"", "2"}});
  CHECK(slurp(path) == "name,value\r\n\"x,y\",1\r\n\"q\"\"\",2\r\n");
}

TEST_CASE("doubles are written to round trip") {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5e17, 6.02214076e23}) CHECK(std::stod(format_double(v)) == v);
}

TEST_CASE("reports") {
  SUBCASE("inversion result") {
    InversionResult r;
    r.x = Vector{1, 2};
    r.residual = 1e-12;
    r.converged = true;
    r.iters = 3;
    const nlohmann::json j = to_json(r);
    CHECK(j["converged"] == true);
    CHECK(j["x"] == nlohmann::json::array({1.0, 2.0}));
  }
  SUBCASE("witness kinds") {
    Witness w{{Vector{1}}, CertifiedGap{0.5}, "test"};
    CHECK(to_json(w).dump().find("0.5") != std::string::npos);
    w.evidence = ExhaustiveEnumeration{4};
    CHECK_FALSE(to_json(w).dump() == to_json(Witness{{Vector{1}}, CertifiedGap{0.5}, "test"}).dump());
  }
  SUBCASE("battery rows match the header") {
    BatteryConfig c;
    c.trials = 1;
    c.targets_per_trial = 1;
    c.dims = {2};
    const VerdictReport r = run_verdict_battery(c);
    for (const auto& row : battery_csv_rows(r)) CHECK(row.size() == battery_csv_header().size());
    const nlohmann::json j = to_json(r);
    CHECK(j.contains("rows"));
    CHECK(j.dump().find(r.config_digest) != std::string::npos);
  }
  SUBCASE("provenance") {
    const nlohmann::json p = provenance(Seed{7}, "abc");
    CHECK(p.dump().find("abc") != std::string::npos);
    CHECK(p.dump().find(kToolVersion) != std::string::npos);
  }
}
