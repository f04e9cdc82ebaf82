// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "clipforge/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "clipforge/checkpoint.hpp"
#include "clipforge/data.hpp"
#include "clipforge/errors.hpp"
#include "clipforge/eval.hpp"
#include "clipforge/trainer.hpp"

namespace clipforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& path, const std::string& field) {
  std::ifstream in(path);
  if (!in) throw ConfigError(field, "cannot read '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(field, "'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

std::vector<std::string> read_lines(const fs::path& path, const std::string& field) {
  std::ifstream in(path);
  if (!in) throw ConfigError(field, "cannot read '" + path.string() + "'");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw ConfigError(field, "'" + path.string() + "' has no entries");
  return lines;
}

void write_json(const fs::path& path, const json& j) { std::ofstream(path) << j.dump(2) << '\n'; }

fs::path run_root() {
  const char* env = std::getenv(kRunRootEnv);
  return env && *env ? fs::path(env) : fs::path("runs");
}

TrainConfig load_train_config(const std::string& path, const std::vector<std::string>& overrides) {
  TrainConfig c = path.empty() ? TrainConfig{} : TrainConfig::from_json(read_json_file(path, "--config"));
  for (const auto& o : overrides) c.apply_override(o);
  return c;
}

json resolved(const TrainConfig& c, const std::vector<std::string>& overrides) {
  json j = c.to_json();
  j["overrides"] = overrides;
  return j;
}

struct Options {
  std::string spec, out, config, resume, ckpt, classes, templates, data;
  std::vector<std::string> overrides;
  std::size_t steps = 20;
  std::size_t warmup = 5;
  std::size_t samples_per_class = 8;
  std::int64_t prior_steps = 0;
};

int cmd_gen_data(const Options& o, std::ostream& out) {
  CorpusSpec spec = o.spec.empty() ? CorpusSpec{} : CorpusSpec::from_json(read_json_file(o.spec, "--spec"));
  const fs::path run_dir = make_run_dir(run_root(), "gen-data");
  const fs::path data_dir = o.out.empty() ? run_dir / "data" : fs::path(o.out);
  if (fs::exists(data_dir / "manifest.json"))
    throw ConfigError("--out", "'" + data_dir.string() + "' already holds a corpus; choose a fresh directory");
  write_json(run_dir / "resolved_config.json", spec.to_json());
  const Corpus corpus = generate_corpus(spec);
  const fs::path manifest = write_corpus(corpus, data_dir, spec.records_per_shard);
  out << "wrote " << corpus.records.size() << " records to " << manifest.string() << '\n';
  out << "run directory: " << run_dir.string() << '\n';
  return 0;
}

int cmd_train(const Options& o, std::ostream& out) {
  TrainOptions options;
  std::optional<Checkpoint> resume;
  std::string config_path = o.config;
  TrainConfig config;
  if (!o.resume.empty()) {
    resume = load_checkpoint(o.resume);
    if (config_path.empty()) {
      config = TrainConfig::from_json(resume->metadata.at("train_config"));
      for (const auto& s : o.overrides) config.apply_override(s);
    }
  }
  if (o.resume.empty() || !config_path.empty()) config = load_train_config(config_path, o.overrides);
  const Corpus corpus = resolve_corpus(config);
  const fs::path run_dir = make_run_dir(run_root(), "train");
  write_json(run_dir / "resolved_config.json", resolved(config, o.overrides));
  options.out_dir = run_dir;
  options.resume = std::move(resume);
  const TrainResult r = train(config, corpus, options);
  if (config.init_policy != InitPolicy::Scratch && !options.resume)
    write_json(run_dir / "init_report.json", r.init_report.to_json());
  const json summary = {{"final_loss", final_loss(r.log)},
                        {"attempted_steps", r.final_checkpoint.metadata.at("attempted_step")},
                        {"effective_steps", r.final_checkpoint.metadata.at("effective_step")},
                        {"samples_seen", r.final_checkpoint.metadata.at("samples_seen")},
                        {"wall_time_s", r.wall_time_s},
                        {"final_checkpoint", (run_dir / "checkpoints" / "final.cfck").string()}};
  write_json(run_dir / "summary.json", summary);
  out << "trained " << summary["effective_steps"] << " steps, final loss " << std::setprecision(4)
      << summary["final_loss"].get<double>() << '\n';
  out << "run directory: " << run_dir.string() << '\n';
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(o.ckpt);
  if (!ck.metadata.contains("train_config")) throw FormatError("checkpoint '" + o.ckpt + "' carries no model config");
  const TrainConfig config = TrainConfig::from_json(ck.metadata.at("train_config"));
  Rng rng(0);
  ParamStore params = init_params(config.model, rng);
  init_from_checkpoint(params, config.model, ck, InitPolicy::Both, /*strict=*/true);

  Corpus reference;
  std::vector<std::string> classes;
  if (!o.data.empty()) {
    reference = load_corpus(o.data);
    classes = o.classes.empty() ? reference.class_names : read_lines(o.classes, "--classes");
  } else {
    CorpusSpec spec;
    spec.num_classes = config.data_num_classes;
    if (!o.classes.empty()) {
      spec.class_names = read_lines(o.classes, "--classes");
      spec.num_classes = spec.class_names.size();
    } else if (!config.data_manifest.empty()) {
      spec.class_names = load_corpus(config.data_manifest).class_names;
      spec.num_classes = spec.class_names.size();
    }
    spec.samples_per_class = o.samples_per_class;
    spec.image_size = config.model.image.image_size;
    spec.channels = config.model.image.channels;
    spec.seed = config.seed + 7919;  // held out from the training stream
    reference = generate_corpus(spec);
    classes = reference.class_names;
  }
  const std::vector<std::string> templates =
      o.templates.empty() ? kDefaultPromptTemplates : read_lines(o.templates, "--templates");

  const fs::path run_dir = make_run_dir(run_root(), "eval");
  write_json(run_dir / "resolved_config.json", {{"ckpt", o.ckpt},
                                                 {"classes", classes},
                                                 {"templates", templates},
                                                 {"data", o.data},
                                                 {"samples_per_class", o.samples_per_class},
                                                 {"train_config", config.to_json()}});
  const EvalReport report = evaluate_suite(config.model, params, reference, classes, templates, config.seed);
  write_json(run_dir / "report.json", report.to_json());
  std::ofstream(run_dir / "report.csv") << report.to_csv();
  for (const auto& b : report.benchmarks)
    out << std::left << std::setw(28) << b.name << " top1 " << std::fixed << std::setprecision(1) << round1(b.top1)
        << '\n';
  out << "averaged " << report.gap.avg_1dp << "  delta " << report.gap.delta_1dp << '\n';
  out << "run directory: " << run_dir.string() << '\n';
  return 0;
}

int cmd_bench(const Options& o, std::ostream& out) {
  const TrainConfig config = load_train_config(o.config, o.overrides);
  const Corpus corpus = resolve_corpus(config);
  const fs::path run_dir = make_run_dir(run_root(), "bench");
  json cfg = resolved(config, o.overrides);
  cfg["bench_steps"] = o.steps;
  cfg["bench_warmup"] = o.warmup;
  write_json(run_dir / "resolved_config.json", cfg);
  const BenchReport r = bench(config, corpus, o.steps, o.warmup);
  write_json(run_dir / "bench.json", r.to_json());
  out << std::fixed << std::setprecision(4);
  out << "mask  median_step_s  s_per_1M_samples\n";
  out << std::setprecision(2) << r.unmasked.mask_ratio << "  " << std::setprecision(4) << r.unmasked.median_step_s
      << "  " << std::setprecision(1) << r.unmasked.time_per_million_samples_s << '\n';
  out << std::setprecision(2) << r.masked.mask_ratio << "  " << std::setprecision(4) << r.masked.median_step_s << "  "
      << std::setprecision(1) << r.masked.time_per_million_samples_s << '\n';
  out << "ratio " << std::setprecision(3) << r.ratio << "  peak_rss_kb " << r.peak_rss_kb << '\n';
  out << "run directory: " << run_dir.string() << '\n';
  return 0;
}

int cmd_ablate(const Options& o, std::ostream& out) {
  const TrainConfig config = load_train_config(o.config, o.overrides);
  const Corpus corpus = resolve_corpus(config);
  const std::int64_t prior = o.prior_steps > 0 ? o.prior_steps : 2 * config.total_steps;
  const fs::path run_dir = make_run_dir(run_root(), "ablate");
  json cfg = resolved(config, o.overrides);
  cfg["prior_steps"] = prior;
  write_json(run_dir / "resolved_config.json", cfg);
  const AblationReport r = ablate(config, corpus, prior, run_dir);
  out << r.table();
  out << "run directory: " << run_dir.string() << '\n';
  return 0;
}

}  // namespace

fs::path make_run_dir(const fs::path& root, const std::string& prefix) {
  fs::create_directories(root);
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream stamp;
  stamp << prefix << '-' << std::put_time(&tm, "%Y%m%d-%H%M%S");
  for (int n = 0;; ++n) {
    const fs::path p = root / (n == 0 ? stamp.str() : stamp.str() + "-" + std::to_string(n));
    if (fs::create_directory(p)) return p;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"clipforge: contrastive image-text training at desk scale", "clipforge"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  gen->add_option("--spec", o.spec, "Corpus spec (JSON)");
  gen->add_option("--out", o.out, "Output directory for shards and manifest");

  auto* tr = app.add_subcommand("train", "Train from a config");
  tr->add_option("--config", o.config, "Train config (JSON)");
  tr->add_option("--resume", o.resume, "Checkpoint to continue from");
  tr->add_option("--set", o.overrides, "Override key=value (repeatable)")->take_all();

  auto* ev = app.add_subcommand("eval", "Zero-shot evaluation of a checkpoint");
  ev->add_option("--ckpt", o.ckpt, "Checkpoint")->required();
  ev->add_option("--classes", o.classes, "Class names, one per line");
  ev->add_option("--templates", o.templates, "Prompt templates with {}, one per line");
  ev->add_option("--data", o.data, "Reference corpus manifest (default: generated held-out split)");
  ev->add_option("--samples-per-class", o.samples_per_class, "Size of the generated reference split");

  auto* be = app.add_subcommand("bench", "Masked vs unmasked step timing");
  be->add_option("--config", o.config, "Train config (JSON)");
  be->add_option("--steps", o.steps, "Timed steps per arm")->check(CLI::PositiveNumber);
  be->add_option("--warmup", o.warmup, "Discarded steps per arm");
  be->add_option("--set", o.overrides, "Override key=value (repeatable)")->take_all();

  auto* ab = app.add_subcommand("ablate", "Four-arm initialization/optimizer/masking ablation");
  ab->add_option("--config", o.config, "Train config (JSON)");
  ab->add_option("--prior-steps", o.prior_steps, "Steps of the run that provides the initialization");
  ab->add_option("--set", o.overrides, "Override key=value (repeatable)")->take_all();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  try {
    if (gen->parsed()) return cmd_gen_data(o, out);
    if (tr->parsed()) return cmd_train(o, out);
    if (ev->parsed()) return cmd_eval(o, out);
    if (be->parsed()) return cmd_bench(o, out);
    if (ab->parsed()) return cmd_ablate(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

int run(int argc, char** argv) {
  return run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

}  // namespace clipforge
