#include "doctest.h"

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "rldc");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = rldc::cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("cli: count-params prints the closed form") {
  const Run r = run({"count-params", "--arch", "max-halved", "--actions", "9"});
  CHECK(r.code == 0);
  CHECK(r.out == "43097\n");

  const Run all = run({"count-params"});
  CHECK(all.code == 0);
  CHECK(all.out.find("1688745") != std::string::npos);
  CHECK(all.out.find("differs by 19") != std::string::npos);
}

TEST_CASE("cli: usage and errors") {
  const Run none = run({});
  CHECK(none.code != 0);
  CHECK(none.err.find("train-expert") != std::string::npos);

  const Run bad = run({"count-params", "--bogus"});
  CHECK(bad.code != 0);
  CHECK_FALSE(bad.err.empty());

  const Run missing = run({"train-expert", "--config", "/nonexistent/config.json"});
  CHECK(missing.code != 0);

  const Run arch = run({"count-params", "--arch", "wide"});
  CHECK(arch.code != 0);
}

TEST_CASE("cli: gradcheck") {
  const Run r = run({"gradcheck", "--instances", "20"});
  CHECK(r.code == 0);
  CHECK(r.out.find("max relative error") != std::string::npos);
}

TEST_CASE("cli: train, evaluate and visualize a tiny run") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "rldc_cli_test";
  fs::remove_all(dir);
  const std::string out = (dir / "expert").string();
  Run t = run({"train-expert", "--arch", "max-halved", "--iterations", "0", "--final-episodes", "2",
               "--out", out, "-q"});
  REQUIRE(t.code == 0);
  CHECK(fs::exists(dir / "expert" / "best.rldc"));
  CHECK(fs::exists(dir / "expert" / "eval_log.csv"));

  Run e = run({"evaluate", "--checkpoint", out + "/best.rldc", "--episodes", "3"});
  CHECK(e.code == 0);
  CHECK(e.out.find("mean") != std::string::npos);

  Run v = run({"visualize", "--checkpoint", out + "/best.rldc", "--out", (dir / "viz").string(),
               "--channels", "0,1", "--score-episodes", "2"});
  CHECK(v.code == 0);
  CHECK(fs::exists(dir / "viz" / "manifest.jsonl"));
  fs::remove_all(dir);
}
