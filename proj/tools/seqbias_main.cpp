#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "seqbias/runner.hpp"

namespace {

using namespace seqbias;

struct TaskFlags {
  std::string task;
  int l = 0, d = 0, n = 0, m = 0;
};

std::optional<tasks::TaskInstance> instance_from_flags(const TaskFlags& f) {
  if (f.task.empty()) return std::nullopt;
  tasks::TaskInstance t;
  t.kind = tasks::task_kind_from(f.task);
  t.l = f.l;
  t.d = f.d;
  t.n = f.n;
  t.m = f.m;
  t.validate();
  return t;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  demand(is.good(), "cannot open " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

int cmd_run(const std::string& config_path, const TaskFlags& task_flags,
            const std::string& learner, int seeds, std::uint64_t master_seed,
            const std::string& out, const std::vector<std::string>& formats, int workers,
            int epochs, int block_size) {
  runner::ExperimentSpec spec;
  if (!config_path.empty()) spec = runner::load_config(config_path).experiment;
  if (auto t = instance_from_flags(task_flags)) spec.task_grid = {*t};
  if (!learner.empty()) {
    learners::LearnerConfig c;
    c.kind = learners::learner_kind_from(learner);
    spec.learner_grid = {c};
  }
  if (seeds > 0) spec.seeds = seeds;
  if (master_seed != 0) spec.master_seed = master_seed;
  if (!out.empty()) spec.out_dir = out;
  if (workers > 0) spec.workers = workers;
  if (epochs >= 0) spec.hyper.epochs = epochs;
  if (block_size > 0) spec.block_size = block_size;
  spec.validate();

  std::vector<runner::ReportFormat> fmts;
  for (const auto& f : formats) fmts.push_back(runner::report_format_from(f));
  if (fmts.empty())
    fmts = {runner::ReportFormat::kCsv, runner::ReportFormat::kJson,
            runner::ReportFormat::kMarkdown};

  auto output = runner::run_experiment(spec);
  runner::emit_report(output, spec, fmts);
  std::printf("wrote %zu rows to %s (manifest %016llx)\n", output.rows.size(),
              spec.out_dir.c_str(),
              static_cast<unsigned long long>(output.manifest.spec_hash));
  return 0;
}

int cmd_dump_task(const TaskFlags& task_flags, const std::string& out) {
  auto t = instance_from_flags(task_flags);
  demand(t.has_value(), "dump-task: --task is required");
  const std::string text = runner::dump_task(*t);
  if (out.empty()) {
    std::fputs(text.c_str(), stdout);
  } else {
    std::ofstream os(out, std::ios::binary);
    demand(os.good(), "cannot write " + out);
    os << text;
  }
  return 0;
}

int cmd_report(const std::string& rows_path, const std::string& format,
               const std::string& out) {
  auto rows = runner::parse_csv_rows(slurp(rows_path));
  const std::string text =
      runner::render_report(rows, runner::report_format_from(format));
  if (out.empty()) {
    std::fputs(text.c_str(), stdout);
  } else {
    std::ofstream os(out, std::ios::binary);
    demand(os.good(), "cannot write " + out);
    os << text;
  }
  return 0;
}

int cmd_curve(const std::string& config_path, const std::string& out) {
  auto parsed = runner::load_config(config_path);
  demand(parsed.curve.has_value(), "curve: config has no [curve] section");
  auto rows = runner::run_curve(*parsed.curve);
  const std::string text = runner::render_curve(rows);
  if (out.empty()) {
    std::fputs(text.c_str(), stdout);
  } else {
    std::ofstream os(out, std::ios::binary);
    demand(os.good(), "cannot write " + out);
    os << text;
  }
  return 0;
}

int cmd_replay(const std::string& config_path, const std::string& result_dir) {
  auto spec = runner::load_config(config_path).experiment;
  spec.validate();
  auto manifest = runner::RunManifest::from_json(slurp(result_dir + "/manifest.json"));
  demand(manifest.spec_hash == spec.hash(),
         "replay: config does not match the stored manifest (spec hash differs)");
  const std::string stored = slurp(result_dir + "/rows.csv");
  auto output = runner::run_experiment(spec);
  const std::string fresh = runner::render_report(output.rows, runner::ReportFormat::kCsv);
  if (fresh == stored) {
    std::puts("replay ok: rows reproduced bit-exactly");
    return 0;
  }
  std::puts("replay FAILED: regenerated rows differ from the stored ones");
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"inductive-bias measurements for sequence-to-sequence learners"};
  app.require_subcommand(1);

  TaskFlags task_flags;
  std::string config_path, learner, out, format = "md", rows_path, result_dir;
  std::vector<std::string> formats;
  int seeds = 0, workers = 0, epochs = -1, block_size = 0;
  std::uint64_t master_seed = 0;

  auto add_task_flags = [&](CLI::App* cmd) {
    cmd->add_option("--task", task_flags.task, "task kind");
    cmd->add_option("--l", task_flags.l, "training length for count-mem/add-mul/mult3");
    cmd->add_option("--d", task_flags.d, "depth for hier-linear");
    cmd->add_option("--n", task_flags.n, "primitive count for comp-mem");
    cmd->add_option("--m", task_flags.m, "compositional train count for comp-mem");
  };

  auto* run = app.add_subcommand("run", "run an experiment grid");
  run->add_option("--config", config_path, "configuration file");
  add_task_flags(run);
  run->add_option("--learner", learner, "single learner kind override");
  run->add_option("--seeds", seeds, "seed count override");
  run->add_option("--master-seed", master_seed, "master seed override");
  run->add_option("--out", out, "output directory");
  run->add_option("--format", formats, "report formats (csv, json, md)");
  run->add_option("--workers", workers, "worker thread count");
  run->add_option("--epochs", epochs, "training epochs override");
  run->add_option("--block-size", block_size, "transmission block size override");

  auto* dump = app.add_subcommand("dump-task", "print a task's data and rule labels");
  add_task_flags(dump);
  dump->add_option("--out", out, "output file (stdout when omitted)");

  auto* report = app.add_subcommand("report", "re-render stored rows");
  report->add_option("--rows", rows_path, "rows.csv produced by run")->required();
  report->add_option("--format", format, "csv, json or md");
  report->add_option("--out", out, "output file (stdout when omitted)");

  auto* curve = app.add_subcommand("curve", "normalized description-length curve");
  curve->add_option("--config", config_path, "configuration file with a [curve] section")
      ->required();
  curve->add_option("--out", out, "output file (stdout when omitted)");

  auto* replay = app.add_subcommand("replay", "re-run a config and verify stored rows");
  replay->add_option("--config", config_path, "configuration file")->required();
  replay->add_option("--results", result_dir, "directory with rows.csv and manifest.json")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed())
      return cmd_run(config_path, task_flags, learner, seeds, master_seed, out, formats,
                     workers, epochs, block_size);
    if (dump->parsed()) return cmd_dump_task(task_flags, out);
    if (report->parsed()) return cmd_report(rows_path, format, out);
    if (curve->parsed()) return cmd_curve(config_path, out);
    if (replay->parsed()) return cmd_replay(config_path, result_dir);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
