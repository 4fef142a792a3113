// m2cnn command-line front end: synth, preprocess, train, eval, predict,
// shapes, gradcheck.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "m2cnn/checkpoint.hpp"
#include "m2cnn/dataio.hpp"
#include "m2cnn/error.hpp"
#include "m2cnn/gradsuite.hpp"
#include "m2cnn/run_config.hpp"
#include "m2cnn/trainer.hpp"

using namespace m2cnn;
namespace fs = std::filesystem;

namespace {

struct ConfigFlags {
  std::optional<std::string> config_path;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
};

void add_config_flags(CLI::App* app, ConfigFlags& flags, const std::set<std::string>& only = {}) {
  app->add_option("--config", flags.config_path, "flat JSON configuration file");
  for (const auto& key : config_keys()) {
    if (!only.empty() && !only.contains(key.name)) continue;
    static const std::map<KeyType, std::string> type_names{
        {KeyType::integer, "INT"}, {KeyType::real, "FLOAT"}, {KeyType::boolean, "BOOL"}, {KeyType::text, "TEXT"}};
    flags.options[key.name] =
        app->add_option(flag_name(key), flags.values[key.name], key.help)->type_name(type_names.at(key.type));
  }
}

RunConfig resolve_config(const ConfigFlags& flags) {
  RunConfig cfg = RunConfig::desk();
  if (flags.config_path) cfg = load_run_config(*flags.config_path, cfg);
  nlohmann::json overrides = nlohmann::json::object();
  for (const auto& key : config_keys()) {
    auto it = flags.options.find(key.name);
    if (it == flags.options.end() || it->second->count() == 0) continue;
    overrides[key.name] = parse_config_value(key, flags.values.at(key.name));
  }
  cfg = apply_flat_json(cfg, overrides);
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << text;
  if (!out) throw IoError(fmt::format("short write to {}", path.string()));
}

Dataset prepare(const Dataset& raw, const RunConfig& cfg, std::size_t size) {
  if (cfg.apply_preprocess) return preprocess_dataset(raw, cfg.preprocess, size);
  return resize_dataset(raw, size);
}

void log_line(const std::string& s) { fmt::print(stderr, "{}\n", s); }

std::size_t eval_size(const RunConfig& cfg, std::optional<std::size_t> size) {
  return size ? *size : cfg.schedule.back().resolution;
}

int run_synth(const std::optional<std::string>& spec_path, const std::string& out, std::optional<std::uint64_t> seed,
              std::optional<std::size_t> resolution, std::optional<std::size_t> per_grade) {
  SynthSpec spec;
  if (spec_path) {
    std::ifstream in(*spec_path);
    if (!in) throw ConfigurationError(fmt::format("cannot open spec {}", *spec_path));
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigurationError(fmt::format("{} is not valid JSON: {}", *spec_path, e.what()));
    }
    spec = j.get<SynthSpec>();
  }
  if (seed) spec.seed = *seed;
  if (resolution) spec.resolution = *resolution;
  if (per_grade) spec.counts.fill(*per_grade);
  spec.validate();
  const Dataset data = generate_synthetic(spec);
  write_dataset(out, data);
  write_text(fs::path(out) / "spec.json", nlohmann::json(spec).dump(2) + "\n");
  fmt::print("wrote {} images to {}\n", data.size(), out);
  return 0;
}

int run_preprocess(const ConfigFlags& flags, const std::string& in, const std::string& out, std::size_t size) {
  const RunConfig cfg = resolve_config(flags);
  const Dataset data = preprocess_dataset(load_dataset(in), cfg.preprocess, size);
  write_dataset(out, data);
  fmt::print("preprocessed {} images into {}\n", data.size(), out);
  return 0;
}

int run_train(const ConfigFlags& flags, const std::string& data_dir, const std::optional<std::string>& eval_dir,
              const std::string& out) {
  const RunConfig cfg = resolve_config(flags);
  const std::size_t final_res = cfg.schedule.back().resolution;
  const Dataset train = prepare(load_dataset(data_dir), cfg, final_res);
  std::optional<Dataset> eval;
  if (eval_dir) eval = prepare(load_dataset(*eval_dir), cfg, final_res);

  std::map<std::size_t, Dataset> train_at, eval_at;
  for (const auto& stage : cfg.schedule) {
    if (train_at.contains(stage.resolution)) continue;
    train_at[stage.resolution] = stage.resolution == final_res ? train : resize_dataset(train, stage.resolution);
    if (eval) eval_at[stage.resolution] = stage.resolution == final_res ? *eval : resize_dataset(*eval, stage.resolution);
  }

  TrainContext ctx{cfg.arch, cfg.train, nullptr, log_line};
  const StageResult result = run_schedule(
      cfg.schedule, ctx, [&](std::size_t r) -> const Dataset& { return train_at.at(r); },
      [&](std::size_t r) -> const Dataset* { return eval ? &eval_at.at(r) : nullptr; });

  const fs::path dir(out);
  fs::create_directories(dir);
  save_checkpoint(dir / "model.m2cn", result.params, cfg.arch);
  write_text(dir / "train_log.csv", result.log.to_csv());
  write_text(dir / "train_log.json", result.log.to_json().dump(2) + "\n");
  write_text(dir / "config.json", to_flat_json(cfg).dump(2) + "\n");
  double seconds = 0.0;
  for (const auto& s : result.log.stages) {
    seconds += s.wall_seconds;
    log_line(fmt::format("stage {} at {}px: {:.2f}s wall-clock", s.index, s.resolution, s.wall_seconds));
  }
  fmt::print("trained {} steps in {:.1f}s; checkpoint {}\n", result.log.steps.size(), seconds,
             (dir / "model.m2cn").string());
  return 0;
}

void write_report(const EvalReport& report, const std::optional<std::string>& out) {
  if (out) {
    const fs::path dir(*out);
    write_text(dir / "report.json", nlohmann::json(report).dump(2) + "\n");
    write_text(dir / "confusion.txt", confusion_table(report));
  }
  fmt::print("n={} qwk_scores={:.6f} qwk_probs={:.6f}\n", report.n, report.qwk_scores, report.qwk_probs);
  fmt::print("{}", confusion_table(report));
}

// Rows "id,score,score_class,prob_class,p0..p{k-1}" keyed by image id.
std::map<std::string, std::pair<int, int>> read_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError(fmt::format("cannot open predictions {}", path.string()));
  std::map<std::string, std::pair<int, int>> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (row == 1 && line.starts_with("id,"))) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() < 4) throw IngestionError(fmt::format("{} row {}: expected at least 4 columns", path.string(), row));
    try {
      out[cells[0]] = {std::stoi(cells[2]), std::stoi(cells[3])};
    } catch (const std::logic_error&) {
      throw IngestionError(fmt::format("{} row {}: unparsable class", path.string(), row));
    }
  }
  return out;
}

std::vector<std::pair<std::string, int>> read_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError(fmt::format("cannot open labels {}", path.string()));
  std::vector<std::pair<std::string, int>> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (row == 1 && line == "filename,grade")) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw IngestionError(fmt::format("{} row {}: expected filename,grade", path.string(), row));
    try {
      out.emplace_back(fs::path(line.substr(0, comma)).stem().string(), std::stoi(line.substr(comma + 1)));
    } catch (const std::logic_error&) {
      throw IngestionError(fmt::format("{} row {}: unparsable grade", path.string(), row));
    }
  }
  return out;
}

int run_eval(const ConfigFlags& flags, const std::optional<std::string>& checkpoint, const std::optional<std::string>& data_dir,
             const std::optional<std::string>& predictions, const std::optional<std::string>& labels,
             std::optional<std::size_t> size, const std::optional<std::string>& out) {
  if (predictions) {
    if (!labels) throw ConfigurationError("--predictions needs --labels");
    const auto pred = read_predictions(*predictions);
    std::vector<int> truth, by_score, by_prob;
    for (const auto& [id, grade] : read_labels(*labels)) {
      auto it = pred.find(id);
      if (it == pred.end()) throw IngestionError(fmt::format("no prediction for '{}'", id));
      truth.push_back(grade);
      by_score.push_back(it->second.first);
      by_prob.push_back(it->second.second);
    }
    write_report(evaluate_predictions(by_score, by_prob, truth), out);
    return 0;
  }
  if (!checkpoint || !data_dir) throw ConfigurationError("eval needs --checkpoint and --data, or --predictions and --labels");
  const RunConfig cfg = resolve_config(flags);
  const Checkpoint ck = load_checkpoint(*checkpoint);
  const Dataset data = prepare(load_dataset(*data_dir), cfg, eval_size(cfg, size));
  write_report(evaluate_model(ck.arch, ck.params, data), out);
  return 0;
}

int run_predict(const ConfigFlags& flags, const std::string& checkpoint, const std::string& data_dir,
                std::optional<std::size_t> size, const std::string& out) {
  const RunConfig cfg = resolve_config(flags);
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Dataset data = prepare(load_dataset(data_dir), cfg, eval_size(cfg, size));
  const Predictions p = predict(ck.arch, ck.params, data);
  const std::size_t k = ck.arch.num_classes;
  std::string csv = "id,score,score_class,prob_class";
  for (std::size_t j = 0; j < k; ++j) csv += fmt::format(",p{}", j);
  csv += '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::span<const double> row(p.probs.data() + i * k, k);
    csv += fmt::format("{},{:.17g},{},{}", data[i].id, p.scores[i], predict_from_score(p.scores[i], k),
                       predict_from_probs(row));
    for (double v : row) csv += fmt::format(",{:.17g}", v);
    csv += '\n';
  }
  write_text(out, csv);
  fmt::print("wrote {} predictions to {}\n", data.size(), out);
  return 0;
}

int run_shapes(const ConfigFlags& flags, const std::string& preset, std::optional<std::size_t> before,
               std::optional<std::size_t> size, const std::optional<std::string>& route_text) {
  if (before) {
    if (!route_text) throw ConfigurationError("--before needs --route");
    const auto chain = reduction_chain(*before, parse_route(*route_text));
    std::string line;
    for (std::size_t i = 0; i < chain.size(); ++i) line += (i ? " → " : "") + std::to_string(chain[i]);
    fmt::print("{}\n", line);
    return 0;
  }
  if (!size) throw ConfigurationError("shapes needs --before N --route R, or --size N");
  ArchConfig arch = resolve_config(flags).arch;
  if (preset == "full") arch = ArchConfig::full();
  else if (preset != "desk") throw ConfigurationError(fmt::format("unknown preset '{}' (desk or full)", preset));
  const ShapePlan plan =
      route_text ? shape_plan(arch, *size, *size, parse_route(*route_text)) : shape_plan(arch, *size, *size);
  fmt::print("input {0}x{0}, route {1}\n", *size, route_name(plan.route));
  fmt::print("{:<24}{:>8}{:>8}{:>10}\n", "layer", "height", "width", "channels");
  for (const auto& l : plan.layers) fmt::print("{:<24}{:>8}{:>8}{:>10}\n", l.name, l.height, l.width, l.channels);
  fmt::print("before switch {}, at pooling {}, {} MACs per image\n", plan.before_switch, plan.at_pool, plan.macs);
  return 0;
}

int run_gradcheck(std::size_t cases, std::uint64_t seed, double tolerance) {
  std::size_t failed = 0;
  for (const auto& c : gradient_suite(cases, seed)) {
    const bool ok = c.max_rel_error < tolerance;
    failed += ok ? 0 : 1;
    fmt::print("{:<24} params {:>5}  max rel error {:.3e}  {}\n", c.family, c.parameters, c.max_rel_error,
               ok ? "ok" : "FAIL");
  }
  fmt::print("{} of {} graphs within {:g}\n", cases - failed, cases, tolerance);
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-cell multi-task CNN toolkit for ordinal image grading"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic graded image set");
  std::optional<std::string> spec_path;
  std::string synth_out = "synthetic";
  std::optional<std::uint64_t> synth_seed;
  std::optional<std::size_t> synth_res, synth_per_grade;
  synth->add_option("--spec", spec_path, "JSON generator spec");
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--seed", synth_seed, "override the spec's seed");
  synth->add_option("--resolution", synth_res, "override the image size");
  synth->add_option("--per-grade", synth_per_grade, "images per grade");

  ConfigFlags pre_flags;
  auto* pre = app.add_subcommand("preprocess", "crop and normalise a dataset");
  std::string pre_in, pre_out;
  std::size_t pre_size = 0;
  pre->add_option("--in", pre_in, "dataset directory with labels.csv")->required();
  pre->add_option("--out", pre_out, "output directory")->required();
  pre->add_option("--size", pre_size, "square output size (0 keeps the cropped size)");
  add_config_flags(pre, pre_flags, {"alpha", "beta", "rho", "gamma", "border_threshold", "kernel_radius_sigmas"});

  ConfigFlags train_flags;
  auto* train = app.add_subcommand("train", "train through a resolution schedule");
  std::string train_data, train_out = "run";
  std::optional<std::string> train_eval;
  train->add_option("--data", train_data, "training dataset directory")->required();
  train->add_option("--eval-data", train_eval, "dataset for periodic evaluation");
  train->add_option("--out", train_out, "output directory");
  add_config_flags(train, train_flags);

  ConfigFlags eval_flags;
  auto* eval = app.add_subcommand("eval", "score a checkpoint or a predictions file");
  std::optional<std::string> eval_ck, eval_data, eval_pred, eval_labels, eval_out;
  std::optional<std::size_t> eval_size_flag;
  eval->add_option("--checkpoint", eval_ck, "model checkpoint");
  eval->add_option("--data", eval_data, "dataset directory");
  eval->add_option("--predictions", eval_pred, "predictions CSV written by predict");
  eval->add_option("--labels", eval_labels, "labels CSV (filename,grade)");
  eval->add_option("--size", eval_size_flag, "evaluation resolution (default: last schedule stage)");
  eval->add_option("--out", eval_out, "directory for report.json and confusion.txt");
  add_config_flags(eval, eval_flags);

  ConfigFlags predict_flags;
  auto* pred = app.add_subcommand("predict", "write per-image predictions");
  std::string pred_ck, pred_data, pred_out = "predictions.csv";
  std::optional<std::size_t> pred_size;
  pred->add_option("--checkpoint", pred_ck, "model checkpoint")->required();
  pred->add_option("--data", pred_data, "dataset directory")->required();
  pred->add_option("--size", pred_size, "resolution (default: last schedule stage)");
  pred->add_option("--out", pred_out, "output CSV");
  add_config_flags(pred, predict_flags);

  ConfigFlags shape_flags;
  auto* shapes = app.add_subcommand("shapes", "spatial sizes through the network");
  std::optional<std::size_t> before, shape_size;
  std::optional<std::string> route;
  std::string preset = "desk";
  shapes->add_option("--before", before, "size at the switch point");
  shapes->add_option("--size", shape_size, "square input size for the full table");
  shapes->add_option("--route", route, "small, medium or large");
  shapes->add_option("--preset", preset, "desk or full");
  add_config_flags(shapes, shape_flags,
                   {"n1", "n2", "n3", "n4", "stem_channels", "block_a_channels", "block_b_channels", "medium_min",
                    "large_min", "num_classes"});

  auto* grad = app.add_subcommand("gradcheck", "finite-difference checks on random graphs");
  std::size_t grad_cases = 24;
  std::uint64_t grad_seed = 0;
  double grad_tol = 1e-4;
  grad->add_option("--cases", grad_cases, "number of random graphs");
  grad->add_option("--seed", grad_seed, "seed");
  grad->add_option("--tolerance", grad_tol, "maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) return run_synth(spec_path, synth_out, synth_seed, synth_res, synth_per_grade);
    if (*pre) return run_preprocess(pre_flags, pre_in, pre_out, pre_size);
    if (*train) return run_train(train_flags, train_data, train_eval, train_out);
    if (*eval) return run_eval(eval_flags, eval_ck, eval_data, eval_pred, eval_labels, eval_size_flag, eval_out);
    if (*pred) return run_predict(predict_flags, pred_ck, pred_data, pred_size, pred_out);
    if (*shapes) return run_shapes(shape_flags, preset, before, shape_size, route);
    if (*grad) return run_gradcheck(grad_cases, grad_seed, grad_tol);
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
