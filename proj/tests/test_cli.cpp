#include "doctest.h"

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int status;
  std::string out;
};

Outcome run(const std::string& args) {
  const std::string cmd = std::string(M2CNN_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  std::array<char, 4096> buf{};
  while (std::size_t n = fread(buf.data(), 1, buf.size(), pipe)) out.append(buf.data(), n);
  const int raw = pclose(pipe);
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("m2cnn_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("shapes prints the reduction chain") {
  CHECK(run("shapes --before 21 --route large").out == "21 → 10 → 4\n");
  CHECK(run("shapes --before 12 --route medium").out == "12 → 5\n");
  CHECK(run("shapes --before 5 --route small").out == "5\n");
  const auto table = run("shapes --size 64");
  CHECK(table.status == 0);
  CHECK(table.out.find("route medium") != std::string::npos);
  CHECK(table.out.find("1264728 MACs") != std::string::npos);
}

TEST_CASE("eval on perfect predictions") {
  const fs::path dir = scratch("eval");
  std::ofstream labels(dir / "labels.csv"), preds(dir / "preds.csv");
  labels << "filename,grade\n";
  preds << "id,score,score_class,prob_class\n";
  for (int i = 0; i < 10; ++i) {
    labels << "images/img_" << i << ".ppm," << i % 5 << "\n";
    preds << "img_" << i << "," << i % 5 << "," << i % 5 << "," << i % 5 << "\n";
  }
  labels.close();
  preds.close();
  const auto r = run("eval --predictions " + (dir / "preds.csv").string() + " --labels " + (dir / "labels.csv").string() + " --out " +
                     (dir / "rep").string());
  CHECK(r.status == 0);
  CHECK(r.out.find("qwk_scores=1.000000") != std::string::npos);
  const auto report = nlohmann::json::parse(slurp(dir / "rep" / "report.json"));
  CHECK(report.at("qwk_scores").get<double>() == 1.0);
  CHECK(fs::exists(dir / "rep" / "confusion.txt"));
  fs::remove_all(dir);
}

TEST_CASE("synth, train, eval and predict") {
  const fs::path dir = scratch("pipeline");
  const std::string d = dir.string();
  REQUIRE(run("synth --out " + d + "/train --per-grade 3 --seed 1").status == 0);
  REQUIRE(run("synth --out " + d + "/test --per-grade 2 --seed 2").status == 0);
  const std::string train_args = "train --data " + d + "/train --eval-data " + d +
                                 "/test --schedule 32:4,64:2,128:2 --batch-size 4 --seed 7 --out ";
  const auto first = run(train_args + d + "/run1");
  INFO(first.out);
  REQUIRE(first.status == 0);
  REQUIRE(run(train_args + d + "/run2").status == 0);
  for (const char* f : {"model.m2cn", "train_log.csv", "train_log.json", "config.json"}) {
    CAPTURE(f);
    CHECK(fs::exists(fs::path(d) / "run1" / f));
    CHECK(slurp(fs::path(d) / "run1" / f) == slurp(fs::path(d) / "run2" / f));
  }
  const auto log = nlohmann::json::parse(slurp(fs::path(d) / "run1" / "train_log.json"));
  CHECK(log.at("steps").size() == 8);
  CHECK(log.at("stages").size() == 3);

  const std::string ck = d + "/run1/model.m2cn";
  const auto ev = run("eval --checkpoint " + ck + " --data " + d + "/test --config " + d + "/run1/config.json --out " +
                      d + "/ev");
  CHECK(ev.status == 0);
  CHECK(fs::exists(fs::path(d) / "ev" / "report.json"));
  const auto pr = run("predict --checkpoint " + ck + " --data " + d + "/test --out " + d + "/p.csv");
  CHECK(pr.status == 0);
  const std::string csv = slurp(fs::path(d) / "p.csv");
  CHECK(csv.starts_with("id,score,score_class,prob_class,p0,p1,p2,p3,p4\n"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);
  const auto again = run("eval --predictions " + d + "/p.csv --labels " + d + "/test/labels.csv");
  CHECK(again.status == 0);
  fs::remove_all(dir);
}

TEST_CASE("errors exit nonzero with a message") {
  const auto missing = run("train --data /nonexistent/m2cnn");
  CHECK(missing.status != 0);
  CHECK(missing.out.find("error:") != std::string::npos);
  CHECK(run("train --data /tmp --schedule 64:10,32:10").status != 0);
  CHECK(run("train --data /tmp --lr-fresh fast").status != 0);
  CHECK(run("shapes --before 21").status != 0);
  CHECK(run("frobnicate").status != 0);
  CHECK(run("eval --predictions /nonexistent.csv --labels /nonexistent.csv").status != 0);
  CHECK(run("gradcheck --cases 6").status == 0);
}
