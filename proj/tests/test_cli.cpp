#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include <sys/wait.h>

#include <json.hpp>

#include "bayesprompt/embedding_store.hpp"
#include "test_util.hpp"

using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr discarded; returns exit code and stdout.
Result cli(const std::string& args) {
  const std::string cmd = std::string(BAYESPROMPT_CLI) + " " + args + " 2>/dev/null";
  Result r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_CASE("gen-synth") {
  TempDir dir;
  const auto path = dir / "data.bpem";
  CHECK(cli("gen-synth --classes 3 --per-class 50 --dim 8 --seed 1 -o " + q(path)).code == 0);
  CHECK(bayesprompt::load_embedding_set(path).size() == 150);

  CHECK(cli("gen-synth --classes 3").code == 2);
  CHECK(cli("gen-synth --stddev -1 -o " + q(dir / "x.bpem")).code == 2);
  CHECK(cli("no-such-command").code == 2);
}

TEST_CASE("svgd trace has one row per iteration") {
  TempDir dir;
  REQUIRE(cli("gen-synth --classes 3 --per-class 10 --dim 4 --seed 2 -o " + q(dir / "d.bpem")).code == 0);
  REQUIRE(cli("fit-gmm --data " + q(dir / "d.bpem") + " -o " + q(dir / "g.json")).code == 0);
  const auto r = cli("svgd --data " + q(dir / "d.bpem") + " --gmm " + q(dir / "g.json") + " --iters 37 --trace " +
                     q(dir / "t.csv") + " -o " + q(dir / "p.bpem"));
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["iterations"] == 37);
  std::ifstream in(dir / "t.csv");
  std::string line;
  int rows = -1;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 37);
}

TEST_CASE("staged chain equals pipeline") {
  TempDir dir;
  const auto d = [&](const char* n) { return q(dir / n); };
  REQUIRE(cli("gen-synth --classes 6 --per-class 30 --dim 8 --seed 5 -o " + d("full.bpem")).code == 0);
  const std::string seed = " --seed 4";
  REQUIRE(cli("kshot --data " + d("full.bpem") + " --k 5" + seed + " -o " + d("tr.bpem") + " --val-out " +
              d("va.bpem") + " --test-out " + d("te.bpem"))
              .code == 0);
  REQUIRE(cli("fit-gmm --data " + d("tr.bpem") + seed + " -o " + d("g.json")).code == 0);
  REQUIRE(cli("svgd --data " + d("tr.bpem") + " --gmm " + d("g.json") + " --iters 100" + seed + " -o " +
              d("p.bpem"))
              .code == 0);
  REQUIRE(cli("synth-prompts --data " + d("tr.bpem") + " --particles " + d("p.bpem") + seed + " -o " +
              d("pk.bpem"))
              .code == 0);
  REQUIRE(cli("train --data " + d("tr.bpem") + " --val " + d("va.bpem") + " --prompts " + d("pk.bpem") +
              " --epochs 20" + seed + " -o " + d("m.bpem"))
              .code == 0);
  REQUIRE(cli("eval --model " + d("m.bpem") + " --data " + d("te.bpem") + " -o " + d("e.json")).code == 0);

  const std::string pipe_args = "pipeline --data " + d("full.bpem") + " --k 5 --seeds 4 --iters 100 --epochs 20";
  REQUIRE(cli(pipe_args + " -o " + d("pl.json")).code == 0);
  const auto staged = json::parse(read_bytes(dir / "e.json"));
  const auto whole = json::parse(read_bytes(dir / "pl.json"));
  CHECK(staged == whole["runs"][0]["metrics"]);

  REQUIRE(cli(pipe_args + " -o " + d("pl2.json")).code == 0);
  CHECK(read_bytes(dir / "pl.json") == read_bytes(dir / "pl2.json"));
}

TEST_CASE("pipeline flags are echoed") {
  TempDir dir;
  REQUIRE(cli("gen-synth --classes 19 --per-class 12 --dim 6 --seed 1 -o " + q(dir / "f.bpem")).code == 0);
  const std::string base = "pipeline --data " + q(dir / "f.bpem") + " --k 2 --seeds 1 --iters 20 --epochs 3";

  const auto nine = cli(base + " --components 9");
  REQUIRE(nine.code == 0);
  const auto j9 = json::parse(nine.out);
  CHECK(j9["metrics"]["components"] == 9);
  CHECK(j9.contains("timings_ms"));

  const auto plain = json::parse(cli(base).out);
  CHECK(plain["metrics"]["components"] == 19);

  const auto del = json::parse(cli(base + " --ablate del_TPW --no-timings").out);
  CHECK(del["metrics"]["ablate"] == json::array({"del_TPW"}));
  CHECK(del["metrics"]["type_prompts"] == "omitted");

  CHECK(cli(base + " --ablate bogus").code == 2);
  CHECK(cli("pipeline --data " + q(dir / "missing.bpem")).code == 1);
}

TEST_CASE("eval on an untrained pack") {
  TempDir dir;
  REQUIRE(cli("gen-synth --classes 4 --per-class 10 --dim 4 --seed 3 -o " + q(dir / "d.bpem")).code == 0);
  REQUIRE(cli("synth-prompts --data " + q(dir / "d.bpem") + " --ablate del_TPW -o " + q(dir / "pk.bpem")).code == 0);
  const auto r = cli("eval --model " + q(dir / "pk.bpem") + " --data " + q(dir / "d.bpem"));
  REQUIRE(r.code == 0);
  const auto j = json::parse(r.out);
  CHECK(j["micro_f1"].get<double>() >= 0.0);
  CHECK(j["micro_f1"].get<double>() <= 1.0);
  CHECK(j["per_class"].size() == 4);
}
