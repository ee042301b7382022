#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kFixtures = SURJLAB_FIXTURES;

fs::path workdir() {
  const fs::path dir = fs::temp_directory_path() / "surjlab_test_cli";
  fs::create_directories(dir);
  return dir;
}

// Runs the CLI with stderr discarded; `prefix` goes before the command
// (environment assignments, a cd). Returns the exit status.
int run(const std::string& args, const std::string& prefix = "") {
  const std::string cmd = prefix + (prefix.empty() ? "" : " ") + "\"" SURJLAB_CLI "\" " + args + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_CASE("gen is deterministic in the seed") {
  const fs::path a = workdir() / "gen_a.json", b = workdir() / "gen_b.json", c = workdir() / "gen_c.json";
  REQUIRE(run("gen --type stack --dims 4,8 --seed 3 --out " + q(a)) == 0);
  REQUIRE(run("gen --type stack --dims 4,8 --seed 3 --out " + q(b)) == 0);
  REQUIRE(run("gen --type stack --dims 4,8 --seed 4 --out " + q(c)) == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(a) != slurp(c));
  CHECK(read_json(a)["type"] == "stack");
  CHECK(read_json(a)["dims"]["d"] == 4);

  // the environment seed applies when --seed is absent
  const fs::path e = workdir() / "gen_env.json";
  REQUIRE(run("gen --type stack --dims 4,8 --out " + q(e), "SURJLAB_SEED=3") == 0);
  CHECK(slurp(e) == slurp(a));
}

TEST_CASE("forward and invert round trip") {
  const fs::path model = workdir() / "preln.json";
  REQUIRE(run("gen --type mlp --dims 3,6,3 --preln --seed 1 --out " + q(model)) == 0);
  const fs::path out = workdir() / "inv.json", csv = workdir() / "inv.csv";
  REQUIRE(run("invert --model " + q(model) + " --target \"1,2,3;-4,0.5,2\" --out " + q(out) + " --csv " + q(csv)) ==
          0);
  const json r = read_json(out);
  CHECK(r["all_converged"] == true);
  CHECK(r["replay_residual"].get<double>() <= 1e-8);
  CHECK(r["items"].size() == 2);
  CHECK(r["provenance"].contains("seed"));
  CHECK(slurp(csv).rfind("index,converged,residual,iters,method,note\r\n", 0) == 0);

  // feed the recovered inputs back through forward
  std::string input;
  for (const auto& v : r["recovered"]) {
    if (!input.empty()) input += ';';
    for (std::size_t i = 0; i < v.size(); ++i) input += (i ? "," : "") + std::to_string(v[i].get<double>());
  }
  const fs::path fwd = workdir() / "fwd.json";
  REQUIRE(run("forward --model " + q(model) + " --input \"" + input + "\" --out " + q(fwd)) == 0);
  CHECK(read_json(fwd)["output"][0][0].get<double>() == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("invert the scalar retention fixture") {
  const fs::path out = workdir() / "ret.json";
  REQUIRE(run("invert --model " + q(kFixtures / "retention_scalar.json") + " --target 8 --out " + q(out)) == 0);
  CHECK(read_json(out)["recovered"][0][0].get<double>() == doctest::Approx(2.0));

  SUBCASE("through a config, from another directory") {
    const fs::path cfg_out = workdir() / "ret_cfg.json";
    REQUIRE(run("invert --config " + q(kFixtures / "invert_config.json") + " --out " + q(cfg_out), "cd / &&") == 0);
    const json r = read_json(cfg_out);
    CHECK(r["recovered"][0][0].get<double>() == doctest::Approx(2.0));
    CHECK(r["provenance"]["seed"] == 11);
  }
  SUBCASE("seed precedence: config < environment < flag") {
    const fs::path o1 = workdir() / "seed1.json", o2 = workdir() / "seed2.json";
    REQUIRE(run("invert --config " + q(kFixtures / "invert_config.json") + " --out " + q(o1), "SURJLAB_SEED=5") == 0);
    CHECK(read_json(o1)["provenance"]["seed"] == 5);
    REQUIRE(run("invert --config " + q(kFixtures / "invert_config.json") + " --seed 6 --out " + q(o2),
                "SURJLAB_SEED=5") == 0);
    CHECK(read_json(o2)["provenance"]["seed"] == 6);
  }
}

TEST_CASE("degree on the fixtures") {
  const fs::path out = workdir() / "deg.json";
  REQUIRE(run("degree --model " + q(kFixtures / "poly_cubic.json") + " --target 1 --lo -2 --hi 2 --out " + q(out)) ==
          0);
  CHECK(read_json(out)["results"][0]["degree"] == 1);
  REQUIRE(run("degree --model " + q(kFixtures / "poly_square.json") + " --target 1 --lo -2 --hi 2 --out " + q(out)) ==
          0);
  CHECK(read_json(out)["results"][0]["degree"] == 0);
  REQUIRE(run("degree --model " + q(kFixtures / "leaky_mlp_d2.json") +
              " --target 0.3,-0.2 --lo -10,-10 --hi 10,10 --grid 16 --out " + q(out)) == 0);
  const json r = read_json(out)["results"][0];
  CHECK(r["degree"] == r["det_sign_W2W1"]);
  CHECK(r["degree"] == 1);
}

TEST_CASE("battery reports are reproducible") {
  const fs::path a = workdir() / "bat_a.json", b = workdir() / "bat_b.json";
  const std::string args = "battery --trials 1 --dims 2 --seed 9 --out ";
  REQUIRE(run(args + q(a)) == 0);
  REQUIRE(run(args + q(b)) == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(fs::path(a.string() + ".csv")) == slurp(fs::path(b.string() + ".csv")));
  CHECK(read_json(a)["rows"].size() == 6);
}

TEST_CASE("witness subcommand") {
  const fs::path model = workdir() / "relu.json", out = workdir() / "wit.json";
  REQUIRE(run("gen --type mlp --dims 2,2,2 --activation relu --seed 2 --out " + q(model)) == 0);
  REQUIRE(run("witness --model " + q(model) + " --out " + q(out)) == 0);
  CHECK(read_json(out)["witness"].dump().find("gap") != std::string::npos);
}

TEST_CASE("exit codes") {
  const fs::path out = workdir() / "err.json";
  CHECK(run("") != 0);
  CHECK(run("invert --out " + q(out)) == 2);                                      // no model
  CHECK(run("invert --model /nonexistent.json --target 1 --out " + q(out)) == 2);  // unreadable
  CHECK(run("invert --model " + q(kFixtures / "retention_scalar.json") + " --target 1,2 --out " + q(out)) == 2);
  CHECK(run("invert --model " + q(kFixtures / "retention_scalar.json") + " --target 8 --tol -1 --out " + q(out)) == 2);
  CHECK(run("gen --type nope --dims 2 --out " + q(out)) == 2);
  CHECK(run("invert --model " + q(kFixtures / "retention_scalar.json") + " --target 8 --out " + q(out),
            "SURJLAB_SEED=abc") == 2);
  // unreachable target: the report is written and the status says so
  CHECK(run("invert --model " + q(kFixtures / "poly_square.json") + " --target -1 --out " + q(out)) == 1);
  CHECK(read_json(out)["all_converged"] == false);
}
