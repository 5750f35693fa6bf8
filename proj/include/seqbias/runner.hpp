#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "seqbias/learners.hpp"
#include "seqbias/metrics.hpp"
#include "seqbias/tasks.hpp"
#include "seqbias/training.hpp"

namespace seqbias::runner {

struct ExperimentSpec {
  std::vector<tasks::TaskInstance> task_grid;
  std::vector<learners::LearnerConfig> learner_grid;
  training::TrainHyper hyper;
  int seeds = 20;
  std::uint64_t master_seed = 917346201ull;
  int block_size = 0;  // 0 = per-task default
  bool compute_fpa = true;
  bool compute_dl = true;
  int workers = 0;  // 0 = SEQBIAS_WORKERS env var, else hardware concurrency
  std::string out_dir = "results";

  void validate() const;
  // canonical text form; identical specs hash identically on any platform
  std::string canonical() const;
  std::uint64_t hash() const;
};

// One (seed, example) coding cost; the pairing unit for significance tests.
struct SeedExampleCost {
  int seed_index = 0;
  int holdout_id = 0;
  int block = 0;
  double nats = 0.0;
};

struct ResultRow {
  std::string task;      // task kind, e.g. "count-mem"
  std::string params;    // e.g. "l=40"
  std::string learner;   // learner kind name
  std::string rule;
  int seeds = 0;
  int failed_seeds = 0;  // diverged or thrown jobs, excluded from aggregates
  double success_rate = 0.0;
  bool excluded = false;  // success rate below the 70% reporting filter
  std::optional<double> fpa;
  std::optional<double> l_mean;           // mean nats per holdout example
  std::optional<double> l_total_mean;     // mean total nats per seed
  bool minimal_l = false;                 // lowest L among the task's rules
  std::optional<double> significance_p;   // vs the comparison rule (see manifest)
  std::string compared_against;
  std::map<std::string, double> p_versus;  // p-value against every other rule
  std::vector<SeedExampleCost> raw_costs;

  bool significant() const { return significance_p && *significance_p < 1e-3; }
};

struct RunManifest {
  std::uint64_t spec_hash = 0;
  std::string software_version;
  std::uint64_t master_seed = 0;
  int seeds = 0;
  // resolved design choices that the numbers depend on
  std::map<std::string, std::string> resolved;
  // per (task, learner) cell: the derived per-seed streams
  std::map<std::string, std::vector<std::uint64_t>> cell_seeds;

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
};

struct RunOutput {
  std::vector<ResultRow> rows;
  RunManifest manifest;
};

RunOutput run_experiment(const ExperimentSpec& spec);

// ----- reports -----

enum class ReportFormat { kCsv, kJson, kMarkdown };
ReportFormat report_format_from(const std::string& name);

std::string render_report(const std::vector<ResultRow>& rows, ReportFormat format);

// Writes rows.<ext> for the chosen formats plus raw.jsonl (one record per
// task/learner/rule/seed/step) and manifest.json into spec.out_dir.
void emit_report(const RunOutput& output, const ExperimentSpec& spec,
                 const std::vector<ReportFormat>& formats);

// parse a rows.csv back (used by the report subcommand and round-trip tests)
std::vector<ResultRow> parse_csv_rows(const std::string& text);

// ----- normalized-DL curve -----

struct CurveSpec {
  int n_primitives = 100;
  std::vector<int> m_values;
  tasks::Rule rule = tasks::Rule::kComp;
  std::vector<learners::LearnerConfig> learner_grid;
  training::TrainHyper hyper;
  int seeds = 20;
  std::uint64_t master_seed = 917346201ull;
};

struct CurveRow {
  int m = 0;
  std::string learner;
  double mean = 0.0;
  double ci90_half_width = 0.0;
};

std::vector<CurveRow> run_curve(const CurveSpec& spec);
std::string render_curve(const std::vector<CurveRow>& rows);

// ----- task dump -----

std::string dump_task(const tasks::TaskInstance& instance);

// ----- config files -----

// Key/value configuration with [section] headers; [task] and [learner]
// sections may repeat, and comma-separated values expand into grids.
struct ParsedConfig {
  ExperimentSpec experiment;
  std::optional<CurveSpec> curve;
};

ParsedConfig parse_config_text(const std::string& text);
ParsedConfig load_config(const std::string& path);

inline constexpr const char* kVersion = "seqbias 0.1.0";

}  // namespace seqbias::runner
