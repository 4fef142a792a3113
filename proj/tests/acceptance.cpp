// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: acceptance [--report FILE] [criterion ...]   (default: all)

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <fmt/format.h>

#include "harness.hpp"
#include "m2cnn/error.hpp"
#include "m2cnn/gradsuite.hpp"
#include "m2cnn/objectives.hpp"
#include "m2cnn/preprocess.hpp"
#include "oracles.hpp"

using namespace m2cnn;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kChainSeconds = 1.0;
constexpr std::size_t kGradGraphs = 24;
constexpr double kGradTolerance = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr double kGradSeconds = 60.0;
constexpr std::size_t kKappaPairs = 1000;
constexpr double kKappaTolerance = 1e-12;
constexpr double kFilterTolerance = 1e-9;
constexpr std::size_t kTransferInputs = 10;
constexpr std::size_t kOverfitSteps = 300;
constexpr double kOverfitRatio = 0.10;
constexpr double kOverfitSeconds = 120.0;
constexpr double kBenchmarkQwk = 0.70;
constexpr double kBenchmarkSeconds = 30.0 * 60.0;
constexpr std::size_t kSeedsNeeded = 4;
constexpr std::array<std::uint64_t, 5> kSeeds{1, 2, 3, 4, 5};

// Desk benchmark: 700 images at 128 px, first 500 train, last 200 test; a
// separate 600-image validation draw for the warm-versus-cold comparison.
constexpr std::size_t kPerGrade = 140;
constexpr std::size_t kTrainSize = 500;
constexpr std::size_t kValPerGrade = 120;
constexpr std::uint64_t kValSeedOffset = 1000;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Verdict {
  bool pass;
  std::string detail;
};

std::string join(const std::vector<double>& v, const char* f = "{:.4f}") {
  std::string out;
  for (double x : v) out += (out.empty() ? "" : " ") + fmt::format(fmt::runtime(f), x);
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Verdict reduction_chain_sizes() {
  const auto t0 = Clock::now();
  struct Case {
    std::size_t before;
    Route route;
    std::size_t after;
  };
  const std::vector<Case> cases{{12, Route::medium, 5}, {21, Route::large, 4}, {5, Route::small, 5}, {8, Route::small, 8}};
  bool ok = true;
  std::string detail;
  for (const auto& c : cases) {
    const std::size_t got = reduction_chain(c.before, c.route).back();
    ok = ok && got == c.after;
    detail += fmt::format("({}, {})->{} ", c.before, route_name(c.route), got);
  }
  const double s = seconds_since(t0);
  return {ok && s < kChainSeconds, detail + fmt::format("in {:.4f}s", s)};
}

Verdict gradient_graphs() {
  const auto t0 = Clock::now();
  const auto cases = gradient_suite(kGradGraphs, 2024, kGradStep);
  double worst = 0.0;
  std::size_t passed = 0;
  std::set<std::string> families;
  for (const auto& c : cases) {
    worst = std::max(worst, c.max_rel_error);
    passed += c.max_rel_error < kGradTolerance ? 1 : 0;
    families.insert(c.family);
  }
  const double s = seconds_since(t0);
  return {passed == cases.size() && cases.size() >= 20 && s < kGradSeconds,
          fmt::format("{}/{} graphs over {} families, worst relative error {:.2e}, {:.1f}s", passed, cases.size(),
                      families.size(), worst, s)};
}

Verdict kappa_oracle() {
  Rng rng(99);
  double worst = 0.0;
  std::size_t compared = 0, degenerate = 0;
  for (std::size_t i = 0; i < kKappaPairs; ++i) {
    const std::size_t n = 2 + rng.below(99);
    std::vector<int> truth(n), pred(n);
    for (auto& t : truth) t = static_cast<int>(rng.below(5));
    for (auto& p : pred) p = static_cast<int>(rng.below(5));
    try {
      const double got = quadratic_weighted_kappa(truth, pred, 5);
      worst = std::max(worst, std::abs(got - oracle::kappa(truth, pred, 5)));
      ++compared;
    } catch (const DegenerateRatingsError&) {
      ++degenerate;
    }
  }
  const std::vector<int> grades{0, 1, 2, 3, 4}, reversed{4, 3, 2, 1, 0};
  const double anti = quadratic_weighted_kappa(grades, reversed, 5);
  const double perfect = quadratic_weighted_kappa(grades, grades, 5);
  return {worst <= kKappaTolerance && compared + degenerate == kKappaPairs && anti == -1.0 && perfect == 1.0,
          fmt::format("{} pairs, max |diff| {:.2e}, antidiagonal {}, perfect {}", compared, worst, anti, perfect)};
}

Verdict preprocessing_identities() {
  PreprocessParams p;
  p.alpha = 4;
  p.beta = -4;
  p.rho = 10;
  p.gamma = 128;
  bool constant_ok = true;
  for (double level : {0.0, 37.0, 128.0, 201.5, 255.0}) {
    for (double v : normalize_minpool(Image(48, 40, level), p).pixels) constant_ok = constant_ok && v == 128.0;
  }
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Image img(16, 16);
    for (auto& v : img.pixels) v = rng.uniform(0.0, 255.0);
    for (double rho : {0.8, 2.0, 5.0, 10.0}) {
      const std::size_t r = static_cast<std::size_t>(std::ceil(3 * rho));
      const Image sep = gaussian_blur(img, rho, r);
      const auto k1 = gaussian_kernel(rho, r);
      std::vector<double> k2;
      for (double a : k1)
        for (double b : k1) k2.push_back(a * b);
      for (std::size_t c = 0; c < 3; ++c) {
        std::vector<double> plane(16 * 16);
        for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = img.pixels[i * 3 + c];
        const auto full = oracle::filter2d_replicate(plane, 16, 16, k2, r);
        for (std::size_t i = 0; i < full.size(); ++i) worst = std::max(worst, std::abs(sep.pixels[i * 3 + c] - full[i]));
      }
    }
  }
  return {constant_ok && worst < kFilterTolerance,
          fmt::format("constant images -> 128 {}, separable vs 2-D max |diff| {:.2e}", constant_ok ? "exactly" : "NOT exactly",
                      worst)};
}

Verdict transfer_switch_point() {
  const ArchConfig c = ArchConfig::desk();
  ParamStore small = init_params(c, Route::small, 31);
  Rng rng(32);
  for (auto& e : small.entries())
    for (auto& v : e.tensor.values()) v += rng.uniform(-0.05, 0.05);
  const ParamStore medium = transfer_params(small, Route::medium, c, 33);
  const Network source(c, Route::small, small), target(c, Route::medium, medium);
  std::size_t identical = 0;
  for (std::size_t i = 0; i < kTransferInputs; ++i) {
    const std::size_t size = 64 + rng.below(64);
    const Tensor x = oracle::random_tensor({1, size, size, 3}, rng, 0.0, 1.0);
    Graph g;
    const Tensor want = source.switch_activation(x);
    const Tensor got = target.forward(g, x, false).switch_activation.value();
    identical += got.shape() == want.shape() && std::equal(got.values().begin(), got.values().end(), want.values().begin(),
                                                           [](double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); })
                     ? 1
                     : 0;
  }
  return {identical == kTransferInputs, fmt::format("{}/{} inputs bit-identical at the switch point", identical, kTransferInputs)};
}

Verdict overfit_eight_images() {
  const auto t0 = Clock::now();
  std::vector<double> ratios;
  std::size_t passed = 0;
  for (auto seed : kSeeds) {
    const auto r = harness::overfit(seed, kOverfitSteps);
    ratios.push_back(r.final / r.initial);
    passed += r.final < kOverfitRatio * r.initial ? 1 : 0;
  }
  const double s = seconds_since(t0);
  return {passed == kSeeds.size() && s < kOverfitSeconds,
          fmt::format("{}/{} seeds below {:.0f}% of initial loss (final/initial {}), {:.1f}s", passed, kSeeds.size(),
                      100 * kOverfitRatio, join(ratios), s)};
}

// ---- desk benchmark shared by criteria 7 to 9 ----

struct Split {
  std::map<std::size_t, Dataset> train;  // by resolution
  Dataset test;
  Dataset val;
};

Split benchmark_split(std::uint64_t seed, const RunConfig& cfg) {
  SynthSpec spec;
  spec.resolution = 128;
  spec.counts.fill(kPerGrade);
  spec.seed = seed;
  Dataset all = preprocess_dataset(generate_synthetic(spec), cfg.preprocess, 128);
  Split s;
  s.train[128] = Dataset(all.begin(), all.begin() + kTrainSize);
  s.test = Dataset(all.begin() + kTrainSize, all.end());
  for (std::size_t r : {32, 64}) s.train[r] = resize_dataset(s.train[128], r);
  spec.counts.fill(kValPerGrade);
  spec.seed = seed + kValSeedOffset;
  s.val = preprocess_dataset(generate_synthetic(spec), cfg.preprocess, 128);
  return s;
}

struct RunOutcome {
  EvalReport test;
  EvalReport val;
  double seconds = 0.0;
  std::size_t steps = 0;
  double last_stage_seconds_per_step = 0.0;
};

RunOutcome train_and_score(const Split& split, const std::vector<ScheduleStage>& schedule, std::uint64_t seed,
                           LossMode mode) {
  const RunConfig desk = RunConfig::desk();
  TrainContext ctx{desk.arch, desk.train, nullptr, {}};
  ctx.train.seed = seed;
  ctx.train.loss_mode = mode;
  const auto r = run_schedule(schedule, ctx, [&](std::size_t res) -> const Dataset& { return split.train.at(res); });
  RunOutcome out;
  for (const auto& st : r.log.stages) out.seconds += st.wall_seconds;
  out.steps = r.log.steps.size();
  out.last_stage_seconds_per_step = r.log.stages.back().wall_seconds / static_cast<double>(schedule.back().steps);
  out.test = evaluate_model(ctx.arch, r.params, split.test);
  out.val = evaluate_model(ctx.arch, r.params, split.val);
  return out;
}

struct BenchmarkRuns {
  std::vector<RunOutcome> multitask, ce_only, cold;
  std::vector<std::size_t> cold_steps;
  double multitask_seconds = 0.0;
};

BenchmarkRuns& benchmark(const std::set<int>& wanted) {
  static BenchmarkRuns runs;
  static bool done = false;
  if (done) return runs;
  done = true;
  const RunConfig desk = RunConfig::desk();
  for (auto seed : kSeeds) {
    const Split split = benchmark_split(seed, desk);
    const auto t0 = Clock::now();
    const RunOutcome warm = train_and_score(split, desk.schedule, seed, LossMode::multitask);
    runs.multitask_seconds += seconds_since(t0);
    runs.multitask.push_back(warm);
    std::fprintf(stderr, "  seed %llu multitask: test qwk(scores) %.4f, %zu steps in %.1fs\n",
                 static_cast<unsigned long long>(seed), warm.test.qwk_scores, warm.steps, warm.seconds);
    if (wanted.contains(8)) {
      runs.ce_only.push_back(train_and_score(split, desk.schedule, seed, LossMode::ce_only));
      std::fprintf(stderr, "  seed %llu ce_only: test qwk(probs) %.4f\n", static_cast<unsigned long long>(seed),
                   runs.ce_only.back().test.qwk_probs);
    }
    if (wanted.contains(9)) {
      // Cold start at the final resolution for as many steps as fit in the
      // warm run's measured wall-clock, priced at the warm run's own
      // final-stage seconds per step.
      const auto steps = static_cast<std::size_t>(std::llround(warm.seconds / warm.last_stage_seconds_per_step));
      runs.cold_steps.push_back(steps);
      runs.cold.push_back(train_and_score(split, {{desk.schedule.back().resolution, steps, {}}}, seed, LossMode::multitask));
      std::fprintf(stderr, "  seed %llu cold: %zu steps in %.1fs, val qwk(scores) %.4f vs warm %.4f\n",
                   static_cast<unsigned long long>(seed), steps, runs.cold.back().seconds, runs.cold.back().val.qwk_scores,
                   warm.val.qwk_scores);
    }
  }
  return runs;
}

Verdict desk_benchmark(const std::set<int>& wanted) {
  const auto& runs = benchmark(wanted);
  std::vector<double> q;
  std::size_t passed = 0;
  for (const auto& r : runs.multitask) {
    q.push_back(r.test.qwk_scores);
    passed += r.test.qwk_scores >= kBenchmarkQwk ? 1 : 0;
  }
  return {passed >= kSeedsNeeded && runs.multitask_seconds < kBenchmarkSeconds,
          fmt::format("test QWK(scores) {} -> {}/{} seeds >= {:.2f}, {:.0f}s for all seeds", join(q), passed, q.size(),
                      kBenchmarkQwk, runs.multitask_seconds)};
}

Verdict multitask_vs_single(const std::set<int>& wanted) {
  const auto& runs = benchmark(wanted);
  std::vector<double> multi, single, single_scores;
  for (const auto& r : runs.multitask) multi.push_back(r.test.qwk_scores);
  for (const auto& r : runs.ce_only) {
    single.push_back(r.test.qwk_probs);
    single_scores.push_back(r.test.qwk_scores);
  }
  const double m = median(multi), s = median(single);
  return {m >= s, fmt::format("median test QWK: multitask (score head) {:.4f} vs CE-only (class head) {:.4f}; "
                              "CE-only score head {}",
                              m, s, join(single_scores))};
}

Verdict progressive_vs_cold(const std::set<int>& wanted) {
  const auto& runs = benchmark(wanted);
  std::vector<double> warm, cold, warm_s, cold_s;
  std::size_t wins = 0;
  for (std::size_t i = 0; i < runs.cold.size(); ++i) {
    warm.push_back(runs.multitask[i].val.qwk_scores);
    cold.push_back(runs.cold[i].val.qwk_scores);
    warm_s.push_back(runs.multitask[i].seconds);
    cold_s.push_back(runs.cold[i].seconds);
    wins += warm.back() >= cold.back() ? 1 : 0;
  }
  std::string steps;
  for (auto s : runs.cold_steps) steps += fmt::format("{} ", s);
  return {wins >= kSeedsNeeded,
          fmt::format("validation QWK(scores) warm {} vs cold {} -> warm >= cold in {}/{} seeds; wall-clock warm {} s, "
                      "cold {} s ({}cold steps)",
                      join(warm), join(cold), wins, warm.size(), join(warm_s, "{:.1f}"), join(cold_s, "{:.1f}"), steps)};
}

// ---- determinism through the command-line tool ----

int shell(const std::string& args) {
  const std::string cmd = std::string(M2CNN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / "m2cnn_acceptance_determinism";
  fs::remove_all(root);
  std::size_t same = 0, total = 0;
  bool ran = true;
  for (const char* rep : {"a", "b"}) {
    const std::string d = (root / rep).string();
    ran = ran && shell("synth --out " + d + "/train --per-grade 6 --seed 11") == 0;
    ran = ran && shell("synth --out " + d + "/test --per-grade 3 --seed 12") == 0;
    ran = ran && shell("train --data " + d + "/train --eval-data " + d + "/test --schedule 32:20,64:10,128:6 --batch-size 8 " +
                       "--seed 13 --hflip true --out " + d + "/run") == 0;
    ran = ran && shell("eval --checkpoint " + d + "/run/model.m2cn --data " + d + "/test --out " + d + "/eval") == 0;
    ran = ran && shell("predict --checkpoint " + d + "/run/model.m2cn --data " + d + "/test --out " + d + "/pred.csv") == 0;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root / "a"))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root / "a"));
  for (const auto& f : files) {
    ++total;
    same += fs::exists(root / "b" / f) && slurp(root / "a" / f) == slurp(root / "b" / f) ? 1 : 0;
  }
  const bool has_core = std::count(files.begin(), files.end(), fs::path("run/model.m2cn")) == 1 &&
                        std::count(files.begin(), files.end(), fs::path("run/train_log.csv")) == 1;
  fs::remove_all(root);
  return {ran && has_core && same == total && total > 0,
          fmt::format("{}/{} files byte-identical across two runs of synth/train/eval/predict{}", same, total,
                      ran ? "" : " (a command failed)")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  std::ofstream report;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--report" && i + 1 < argc) {
      report.open(argv[++i]);
      continue;
    }
    wanted.insert(std::atoi(argv[i]));
  }
  if (wanted.empty())
    for (int i = 1; i <= 10; ++i) wanted.insert(i);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"reduction chain sizes", reduction_chain_sizes},
      {"gradient suite", gradient_graphs},
      {"kappa oracle", kappa_oracle},
      {"preprocessing identities", preprocessing_identities},
      {"transfer switch point", transfer_switch_point},
      {"overfit eight images", overfit_eight_images},
      {"desk benchmark", [&] { return desk_benchmark(wanted); }},
      {"multitask vs CE-only", [&] { return multitask_vs_single(wanted); }},
      {"warm vs cold at matched wall-clock", [&] { return progressive_vs_cold(wanted); }},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!wanted.contains(id)) continue;
    Verdict v{false, ""};
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, fmt::format("threw: {}", e.what())};
    }
    failed += v.pass ? 0 : 1;
    const std::string line =
        fmt::format("criterion {:2} {:<36} {}  {}\n", id, criteria[i].first, v.pass ? "PASS" : "FAIL", v.detail);
    std::fputs(line.c_str(), stdout);
    std::fflush(stdout);
    if (report) report << line << std::flush;
  }
  return failed == 0 ? 0 : 1;
}
