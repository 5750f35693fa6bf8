#include "seqbias/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

namespace seqbias::runner {

using nlohmann::json;

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string task_params(const tasks::TaskInstance& t) {
  using tasks::TaskKind;
  switch (t.kind) {
    case TaskKind::kCountOrMem:
    case TaskKind::kAddOrMul:
    case TaskKind::kMultiplyThree: return "l=" + std::to_string(t.l);
    case TaskKind::kHierOrLinear: return "d=" + std::to_string(t.d);
    case TaskKind::kCompOrMem:
      return "n=" + std::to_string(t.n) + ";m=" + std::to_string(t.m);
  }
  return "";
}

}  // namespace

void ExperimentSpec::validate() const {
  demand(!task_grid.empty(), "spec: no tasks");
  demand(!learner_grid.empty(), "spec: no learners");
  demand(seeds >= 1, "spec: seed count must be >= 1");
  demand(block_size >= 0, "spec: block size must be >= 0");
  demand(compute_fpa || compute_dl, "spec: nothing to compute");
  for (const auto& t : task_grid) t.validate();
  for (const auto& l : learner_grid) l.validate();
  hyper.validate();
}

std::string ExperimentSpec::canonical() const {
  std::ostringstream os;
  os << "v1\n";
  for (const auto& t : task_grid) os << "task " << t.describe() << "\n";
  for (const auto& l : learner_grid) os << "learner " << l.describe() << "\n";
  os << "hyper epochs=" << hyper.epochs << " warmup=" << hyper.warmup_updates
     << " lr_floor=" << fmt_double(hyper.lr_floor)
     << " lr_peak=" << fmt_double(hyper.lr_peak)
     << " dropout=" << fmt_double(hyper.dropout)
     << " betas=" << fmt_double(hyper.adam_beta1) << "," << fmt_double(hyper.adam_beta2)
     << " eps=" << fmt_double(hyper.adam_eps) << "\n";
  os << "seeds=" << seeds << " master_seed=" << master_seed
     << " block_size=" << block_size << " fpa=" << compute_fpa << " dl=" << compute_dl
     << "\n";
  return os.str();
}

std::uint64_t ExperimentSpec::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char ch : canonical()) {
    h ^= static_cast<std::uint8_t>(ch);
    h *= 0x100000001b3ull;
  }
  return h;
}

// ---------- manifest ----------

std::string RunManifest::to_json() const {
  json j;
  j["spec_hash"] = spec_hash;
  j["software_version"] = software_version;
  j["master_seed"] = master_seed;
  j["seeds"] = seeds;
  j["resolved"] = resolved;
  j["cell_seeds"] = cell_seeds;
  return j.dump(2);
}

RunManifest RunManifest::from_json(const std::string& text) {
  json j = json::parse(text);
  RunManifest m;
  m.spec_hash = j.at("spec_hash").get<std::uint64_t>();
  m.software_version = j.at("software_version").get<std::string>();
  m.master_seed = j.at("master_seed").get<std::uint64_t>();
  m.seeds = j.at("seeds").get<int>();
  m.resolved = j.at("resolved").get<std::map<std::string, std::string>>();
  m.cell_seeds =
      j.at("cell_seeds").get<std::map<std::string, std::vector<std::uint64_t>>>();
  return m;
}

namespace {

RunManifest make_manifest(const ExperimentSpec& spec) {
  RunManifest m;
  m.spec_hash = spec.hash();
  m.software_version = kVersion;
  m.master_seed = spec.master_seed;
  m.seeds = spec.seeds;
  m.resolved["init"] = "weights uniform(+-1/sqrt(fan_in)), biases 0, embeddings normal(0,0.1)";
  m.resolved["warmup"] = "linear from lr_floor to lr_peak over warmup updates";
  m.resolved["adam"] = "betas (0.9, 0.999), eps 1e-8, bias-corrected";
  m.resolved["loss"] = "summed per-token negative natural-log likelihood";
  m.resolved["rng"] = "xoshiro256++ with splitmix64 seeding and labeled stream derivation";
  m.resolved["epoch"] = "one full-batch update per epoch";
  m.resolved["dl_retraining"] =
      "same initialization every step; dropout active during retraining (stream "
      "derived from the seed and step), disabled for scoring";
  m.resolved["fpa_model"] = "identical to the description-length step-1 model";
  m.resolved["t_test_pairing"] = "per-(seed, holdout example) costs, flattened";
  m.resolved["significance"] =
      "minimal-L rule tested against the runner-selected comparison rule "
      "(second-lowest L); other rules tested against the minimal-L rule";
  m.resolved["holdout_order"] = "per-seed permutation derived from the cell seed";
  m.resolved["success_filter"] = "rows with train success below 0.7 carry the excluded marker";
  m.resolved["naive_constant"] =
      "c = sum over training outputs of |y| * log |V| (eos included on both counts); "
      "recorded, excluded from totals";
  return m;
}

// ---------- per-job work ----------

struct JobKey {
  int task_idx = 0;
  int learner_idx = 0;
  int seed_idx = 0;
};

struct JobOut {
  bool failed = false;
  std::string error;
  bool success = false;
  bool has_decodes = false;
  std::vector<std::vector<int>> decodes;  // per holdout input
  std::vector<metrics::DLResult> per_rule_dl;
  std::vector<double> per_rule_success_rate_unused;  // reserved
};

int decode_budget(const tasks::TaskInstance& instance, const tasks::TaskData& data) {
  std::size_t longest = 0;
  for (const auto& ex : data.train) longest = std::max(longest, ex.output.size());
  for (tasks::Rule rule : tasks::rules_for(instance))
    for (const auto& input : data.holdout_inputs)
      if (auto out = tasks::try_apply_rule(instance, rule, input, data))
        longest = std::max(longest, out->size());
  return 3 * static_cast<int>(longest) + 2;
}

JobOut run_job(const ExperimentSpec& spec, const tasks::TaskInstance& instance,
               const tasks::TaskData& data, const learners::LearnerConfig& config,
               std::uint64_t cell_seed) {
  JobOut out;
  try {
    const auto rules = tasks::rules_for(instance);
    training::TrainHyper hyper = spec.hyper;
    // base model = the description-length step-1 model (trained on the
    // training block only); FPA decodes come from it
    auto model = learners::init_learner(config, data.input_vocab, data.output_vocab,
                                        cell_seed);
    auto outcome =
        training::train(model, data.train, hyper, Rng::derive(cell_seed, "dl-step", 1));
    out.success = outcome.success;
    if (outcome.diverged) {
      out.failed = true;
      out.error = "training diverged (non-finite loss)";
      return out;
    }
    if (spec.compute_fpa) {
      const int budget = decode_budget(instance, data);
      for (const auto& input : data.holdout_inputs)
        out.decodes.push_back(learners::greedy_decode(model, input, budget).tokens);
      out.has_decodes = true;
    }
    if (spec.compute_dl) {
      const int bs =
          spec.block_size > 0 ? spec.block_size : metrics::default_block_size(instance.kind);
      for (tasks::Rule rule : rules) {
        auto schedule = metrics::build_schedule(instance, data, rule, bs, cell_seed);
        out.per_rule_dl.push_back(
            metrics::description_length(instance, rule, config, hyper, schedule, cell_seed));
      }
    }
  } catch (const std::exception& e) {
    out.failed = true;
    out.error = e.what();
  }
  return out;
}

int resolve_workers(const ExperimentSpec& spec) {
  if (spec.workers > 0) return spec.workers;
  if (const char* env = std::getenv("SEQBIAS_WORKERS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace

RunOutput run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  RunOutput output;
  output.manifest = make_manifest(spec);

  struct Cell {
    tasks::TaskInstance instance;
    tasks::TaskData data;
    learners::LearnerConfig config;
    std::vector<std::uint64_t> seeds;
    std::vector<JobOut> jobs;
  };
  std::vector<Cell> cells;
  for (const auto& instance : spec.task_grid)
    for (const auto& config : spec.learner_grid) {
      Cell cell;
      cell.instance = instance;
      cell.data = tasks::make_task_data(instance);
      cell.config = config;
      const std::string key =
          instance.describe() + "|" + learners::to_string(config.kind);
      for (int s = 0; s < spec.seeds; ++s)
        cell.seeds.push_back(Rng::derive(
            spec.master_seed, "cell:" + instance.describe() + "|" + config.describe(),
            static_cast<std::uint64_t>(s)));
      cell.jobs.resize(static_cast<std::size_t>(spec.seeds));
      output.manifest.cell_seeds[key] = cell.seeds;
      cells.push_back(std::move(cell));
    }

  // independent (cell, seed) jobs over a worker pool; results land in
  // preallocated slots so scheduling order cannot affect anything
  std::vector<std::pair<int, int>> queue;
  for (int c = 0; c < static_cast<int>(cells.size()); ++c)
    for (int s = 0; s < spec.seeds; ++s) queue.emplace_back(c, s);
  std::atomic<std::size_t> next{0};
  const int workers = std::min<int>(resolve_workers(spec), static_cast<int>(queue.size()));
  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= queue.size()) return;
      auto [c, s] = queue[k];
      Cell& cell = cells[static_cast<std::size_t>(c)];
      cell.jobs[static_cast<std::size_t>(s)] =
          run_job(spec, cell.instance, cell.data, cell.config,
                  cell.seeds[static_cast<std::size_t>(s)]);
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // ---------- aggregation ----------
  for (Cell& cell : cells) {
    const auto rules = tasks::rules_for(cell.instance);
    std::vector<int> ok_seeds;
    int successes = 0, failed = 0;
    for (int s = 0; s < spec.seeds; ++s) {
      if (cell.jobs[static_cast<std::size_t>(s)].failed) {
        ++failed;
        continue;
      }
      ok_seeds.push_back(s);
      if (cell.jobs[static_cast<std::size_t>(s)].success) ++successes;
    }
    const double success_rate =
        ok_seeds.empty() ? 0.0 : static_cast<double>(successes) / spec.seeds;

    // flattened (seed, example) costs per rule, aligned across rules
    std::vector<std::vector<double>> flat(rules.size());
    std::vector<std::vector<SeedExampleCost>> raw(rules.size());
    if (spec.compute_dl) {
      for (std::size_t r = 0; r < rules.size(); ++r) {
        for (int s : ok_seeds) {
          auto costs = cell.jobs[static_cast<std::size_t>(s)].per_rule_dl[r].example_nats;
          std::sort(costs.begin(), costs.end(),
                    [](const auto& a, const auto& b) { return a.holdout_id < b.holdout_id; });
          for (const auto& c : costs) {
            flat[r].push_back(c.nats);
            raw[r].push_back({s, c.holdout_id, c.block, c.nats});
          }
        }
      }
    }
    std::vector<double> l_means(rules.size(), 0.0);
    std::size_t min_rule = 0;
    if (spec.compute_dl && !ok_seeds.empty()) {
      for (std::size_t r = 0; r < rules.size(); ++r) {
        double total = 0;
        for (double v : flat[r]) total += v;
        l_means[r] = flat[r].empty() ? 0.0 : total / static_cast<double>(flat[r].size());
        if (l_means[r] < l_means[min_rule]) min_rule = r;
      }
    }

    for (std::size_t r = 0; r < rules.size(); ++r) {
      ResultRow row;
      row.task = tasks::to_string(cell.instance.kind);
      row.params = task_params(cell.instance);
      row.learner = learners::to_string(cell.config.kind);
      row.rule = tasks::to_string(rules[r]);
      row.seeds = spec.seeds;
      row.failed_seeds = failed;
      row.success_rate = success_rate;
      row.excluded = success_rate < 0.7;
      if (spec.compute_fpa && !ok_seeds.empty()) {
        std::vector<std::vector<int>> rule_outputs;
        for (const auto& input : cell.data.holdout_inputs)
          rule_outputs.push_back(
              tasks::apply_rule(cell.instance, rules[r], input, cell.data));
        std::vector<std::vector<std::vector<int>>> decodes;
        for (int s : ok_seeds)
          decodes.push_back(cell.jobs[static_cast<std::size_t>(s)].decodes);
        // failed seeds cannot agree with any rule; keep the denominator at
        // the full seed count
        auto f = metrics::fpa(decodes, rule_outputs, row.rule);
        row.fpa = static_cast<double>(f.perfect) / spec.seeds;
      }
      if (spec.compute_dl && !ok_seeds.empty()) {
        row.l_mean = l_means[r];
        double total_sum = 0;
        for (int s : ok_seeds)
          total_sum += cell.jobs[static_cast<std::size_t>(s)].per_rule_dl[r].total;
        row.l_total_mean = total_sum / static_cast<double>(ok_seeds.size());
        row.minimal_l = r == min_rule;
        for (std::size_t q = 0; q < rules.size(); ++q) {
          if (q == r || flat[r].size() != flat[q].size() || flat[r].size() < 2) continue;
          row.p_versus[tasks::to_string(rules[q])] =
              metrics::paired_t_test(flat[r], flat[q]).p;
        }
        // star semantics: the minimal rule is compared against the runner-up,
        // everything else against the minimal rule
        std::size_t cmp = min_rule;
        if (r == min_rule && rules.size() > 1) {
          std::size_t runner_up = r == 0 ? 1 : 0;
          for (std::size_t q = 0; q < rules.size(); ++q)
            if (q != r && l_means[q] < l_means[runner_up]) runner_up = q;
          cmp = runner_up;
        }
        if (cmp != r && flat[r].size() == flat[cmp].size() && flat[r].size() >= 2) {
          row.significance_p = metrics::paired_t_test(flat[r], flat[cmp]).p;
          row.compared_against = tasks::to_string(rules[cmp]);
        }
        row.raw_costs = raw[r];
      }
      output.rows.push_back(std::move(row));
    }
  }
  return output;
}

// ---------- reports ----------

ReportFormat report_format_from(const std::string& name) {
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "json") return ReportFormat::kJson;
  if (name == "markdown-table" || name == "md" || name == "markdown")
    return ReportFormat::kMarkdown;
  throw Error("unknown report format '" + name + "'");
}

namespace {

std::string opt_str(const std::optional<double>& v) {
  return v ? fmt_double(*v) : std::string();
}

std::string csv_report(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  os << "task,params,learner,rule,fpa,l_mean,significance,success_rate,seeds,"
        "compared_against,excluded,failed_seeds,minimal_l,l_total_mean\n";
  for (const auto& r : rows) {
    os << r.task << ',' << r.params << ',' << r.learner << ',' << r.rule << ','
       << opt_str(r.fpa) << ',' << opt_str(r.l_mean) << ',' << opt_str(r.significance_p)
       << ',' << fmt_double(r.success_rate) << ',' << r.seeds << ',' << r.compared_against
       << ',' << (r.excluded ? 1 : 0) << ',' << r.failed_seeds << ','
       << (r.minimal_l ? 1 : 0) << ',' << opt_str(r.l_total_mean) << "\n";
  }
  return os.str();
}

json row_to_json(const ResultRow& r) {
  json j;
  j["task"] = r.task;
  j["params"] = r.params;
  j["learner"] = r.learner;
  j["rule"] = r.rule;
  j["seeds"] = r.seeds;
  j["failed_seeds"] = r.failed_seeds;
  j["success_rate"] = r.success_rate;
  j["excluded"] = r.excluded;
  if (r.fpa) j["fpa"] = *r.fpa;
  if (r.l_mean) j["l_mean"] = *r.l_mean;
  if (r.l_total_mean) j["l_total_mean"] = *r.l_total_mean;
  j["minimal_l"] = r.minimal_l;
  if (r.significance_p) {
    j["significance_p"] = *r.significance_p;
    j["compared_against"] = r.compared_against;
  }
  if (!r.p_versus.empty()) j["p_versus"] = r.p_versus;
  return j;
}

std::string json_report(const std::vector<ResultRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows) arr.push_back(row_to_json(r));
  return arr.dump(2) + "\n";
}

std::string md_cell(const ResultRow& r) {
  if (r.excluded) return "-";
  if (!r.l_mean) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", *r.l_mean);
  std::string cell = buf;
  if (r.minimal_l) cell = "**" + cell + "**";
  if (r.significant()) cell += "\\*";
  return cell;
}

std::string markdown_report(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  os << "| task | params | learner | rule | FPA | L (nats) | success | seeds |\n";
  os << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    std::string fpa_cell = "-";
    if (!r.excluded && r.fpa) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.2f", *r.fpa);
      fpa_cell = buf;
    }
    os << "| " << r.task << " | " << r.params << " | " << r.learner << " | " << r.rule
       << " | " << fpa_cell << " | " << md_cell(r) << " | "
       << fmt_double(r.success_rate) << " | " << r.seeds << " |\n";
  }
  return os.str();
}

}  // namespace

std::string render_report(const std::vector<ResultRow>& rows, ReportFormat format) {
  switch (format) {
    case ReportFormat::kCsv: return csv_report(rows);
    case ReportFormat::kJson: return json_report(rows);
    case ReportFormat::kMarkdown: return markdown_report(rows);
  }
  throw Error("unreachable");
}

std::vector<ResultRow> parse_csv_rows(const std::string& text) {
  std::vector<ResultRow> rows;
  std::istringstream is(text);
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cur;
    std::istringstream ls(line);
    while (std::getline(ls, cur, ',')) f.push_back(cur);
    while (f.size() < 14) f.emplace_back();
    ResultRow r;
    r.task = f[0];
    r.params = f[1];
    r.learner = f[2];
    r.rule = f[3];
    if (!f[4].empty()) r.fpa = std::strtod(f[4].c_str(), nullptr);
    if (!f[5].empty()) r.l_mean = std::strtod(f[5].c_str(), nullptr);
    if (!f[6].empty()) r.significance_p = std::strtod(f[6].c_str(), nullptr);
    r.success_rate = std::strtod(f[7].c_str(), nullptr);
    r.seeds = std::atoi(f[8].c_str());
    r.compared_against = f[9];
    r.excluded = f[10] == "1";
    r.failed_seeds = std::atoi(f[11].c_str());
    r.minimal_l = f[12] == "1";
    if (!f[13].empty()) r.l_total_mean = std::strtod(f[13].c_str(), nullptr);
    rows.push_back(std::move(r));
  }
  return rows;
}

void emit_report(const RunOutput& output, const ExperimentSpec& spec,
                 const std::vector<ReportFormat>& formats) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(spec.out_dir, ec);
  demand(fs::is_directory(spec.out_dir), "emit_report: cannot create " + spec.out_dir);
  auto write_file = [&](const std::string& name, const std::string& contents) {
    const std::string path = spec.out_dir + "/" + name;
    std::ofstream os(path, std::ios::binary);
    demand(os.good(), "emit_report: cannot write " + path);
    os << contents;
    demand(os.good(), "emit_report: write failed for " + path);
  };
  for (ReportFormat f : formats) {
    switch (f) {
      case ReportFormat::kCsv: write_file("rows.csv", csv_report(output.rows)); break;
      case ReportFormat::kJson: write_file("rows.json", json_report(output.rows)); break;
      case ReportFormat::kMarkdown:
        write_file("rows.md", markdown_report(output.rows));
        break;
    }
  }
  // raw per-step dump, one record per (task, learner, rule, seed, step)
  std::ostringstream raw;
  for (const auto& r : output.rows) {
    std::map<std::pair<int, int>, json> steps;  // (seed, block) -> record
    for (const auto& c : r.raw_costs) {
      auto key = std::make_pair(c.seed_index, c.block);
      auto it = steps.find(key);
      if (it == steps.end()) {
        json j;
        j["task"] = r.task;
        j["params"] = r.params;
        j["learner"] = r.learner;
        j["rule"] = r.rule;
        j["seed"] = c.seed_index;
        j["step"] = c.block;
        j["nats"] = c.nats;
        j["holdout_ids"] = json::array({c.holdout_id});
        j["manifest_hash"] = output.manifest.spec_hash;
        steps.emplace(key, std::move(j));
      } else {
        it->second["nats"] = it->second["nats"].get<double>() + c.nats;
        it->second["holdout_ids"].push_back(c.holdout_id);
      }
    }
    for (auto& [key, j] : steps) raw << j.dump() << "\n";
  }
  write_file("raw.jsonl", raw.str());
  write_file("manifest.json", output.manifest.to_json() + "\n");
}

// ---------- curve ----------

std::vector<CurveRow> run_curve(const CurveSpec& spec) {
  demand(!spec.m_values.empty(), "curve: no M values");
  demand(!spec.learner_grid.empty(), "curve: no learners");
  std::vector<CurveRow> rows;
  for (const auto& config : spec.learner_grid) {
    auto curve = metrics::normalized_dl(spec.n_primitives, spec.m_values, spec.rule,
                                        config, spec.hyper, spec.seeds,
                                        Rng::derive(spec.master_seed,
                                                    "curve:" + config.describe()));
    for (const auto& point : curve) {
      CurveRow row;
      row.m = point.m;
      row.learner = learners::to_string(config.kind);
      row.mean = point.mean;
      const int n = static_cast<int>(point.per_seed.size());
      if (n >= 2) {
        double ss = 0;
        for (double v : point.per_seed) ss += (v - point.mean) * (v - point.mean);
        const double sd = std::sqrt(ss / (n - 1));
        if (sd > 0) {
          boost::math::students_t dist(n - 1);
          row.ci90_half_width =
              boost::math::quantile(dist, 0.95) * sd / std::sqrt(double(n));
        }
      }
      rows.push_back(row);
    }
  }
  return rows;
}

std::string render_curve(const std::vector<CurveRow>& rows) {
  std::ostringstream os;
  os << "m,learner,mean_nats,ci90_half_width\n";
  for (const auto& r : rows)
    os << r.m << ',' << r.learner << ',' << fmt_double(r.mean) << ','
       << fmt_double(r.ci90_half_width) << "\n";
  return os.str();
}

// ---------- task dump ----------

std::string dump_task(const tasks::TaskInstance& instance) {
  const tasks::TaskData data = tasks::make_task_data(instance);
  std::ostringstream os;
  os << "# task: " << instance.describe() << "\n";
  os << "# train\n";
  for (const auto& ex : data.train) os << tasks::render_example(ex, data) << "\n";
  os << "# holdout inputs\n";
  for (const auto& input : data.holdout_inputs)
    os << tasks::render_tokens(input, data.input_vocab) << "\n";
  for (tasks::Rule rule : tasks::rules_for(instance)) {
    os << "# rule " << tasks::to_string(rule) << "\n";
    for (const auto& input : data.holdout_inputs) {
      auto out = tasks::try_apply_rule(instance, rule, input, data);
      if (out)
        os << tasks::render_example({input, *out}, data) << "\n";
      else
        os << tasks::render_tokens(input, data.input_vocab) << "\t<inapplicable>\n";
    }
  }
  return os.str();
}

// ---------- config parsing ----------

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> int_list(const std::string& s) {
  std::vector<int> out;
  // "a:b:step" ranges or comma lists
  if (s.find(':') != std::string::npos) {
    int lo = 0, hi = 0, step = 1;
    const int got = std::sscanf(s.c_str(), "%d:%d:%d", &lo, &hi, &step);
    demand(got >= 2 && step >= 1, "config: bad range '" + s + "'");
    for (int v = lo; v <= hi; v += step) out.push_back(v);
    return out;
  }
  for (const auto& item : split_list(s)) out.push_back(std::stoi(item));
  demand(!out.empty(), "config: empty integer list");
  return out;
}

std::vector<double> double_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) out.push_back(std::stod(item));
  demand(!out.empty(), "config: empty number list");
  return out;
}

using Section = std::vector<std::pair<std::string, std::string>>;

std::string lookup(const Section& s, const std::string& key, const std::string& fallback) {
  for (const auto& [k, v] : s)
    if (k == key) return v;
  return fallback;
}

std::vector<tasks::TaskInstance> expand_tasks(const Section& s) {
  std::vector<tasks::TaskInstance> out;
  const auto kinds = split_list(lookup(s, "kind", ""));
  demand(!kinds.empty(), "config: [task] needs a kind");
  for (const auto& kind_name : kinds) {
    const tasks::TaskKind kind = tasks::task_kind_from(kind_name);
    auto get_grid = [&](const char* key) {
      const std::string v = lookup(s, key, "");
      return v.empty() ? std::vector<int>{} : int_list(v);
    };
    const auto ls = get_grid("l"), ds = get_grid("d"), ns = get_grid("n"),
               ms = get_grid("m");
    switch (kind) {
      case tasks::TaskKind::kCountOrMem:
      case tasks::TaskKind::kAddOrMul:
      case tasks::TaskKind::kMultiplyThree:
        demand(!ls.empty(), "config: task '" + kind_name + "' needs l");
        for (int l : ls) out.push_back({kind, l, 0, 0, 0});
        break;
      case tasks::TaskKind::kHierOrLinear:
        demand(!ds.empty(), "config: task 'hier-linear' needs d");
        for (int d : ds) out.push_back({kind, 0, d, 0, 0});
        break;
      case tasks::TaskKind::kCompOrMem:
        demand(!ns.empty() && !ms.empty(), "config: task 'comp-mem' needs n and m");
        for (int n : ns)
          for (int m : ms) out.push_back({kind, 0, 0, n, m});
        break;
    }
  }
  return out;
}

std::vector<learners::LearnerConfig> expand_learners(const Section& s) {
  std::vector<learners::LearnerConfig> out;
  const auto kinds = split_list(lookup(s, "kind", ""));
  demand(!kinds.empty(), "config: [learner] needs a kind");
  const auto layers = int_list(lookup(s, "layers", "1"));
  const auto hiddens = int_list(lookup(s, "hidden", "512"));
  const auto embeddings = int_list(lookup(s, "embedding", "16"));
  const auto heads = int_list(lookup(s, "heads", "8"));
  const auto kernels = int_list(lookup(s, "kernel", "3"));
  const auto dropouts = double_list(lookup(s, "dropout", "0.5"));
  for (const auto& kind : kinds)
    for (int layer : layers)
      for (int hidden : hiddens)
        for (int embedding : embeddings)
          for (int head : heads)
            for (int kernel : kernels)
              for (double dropout : dropouts) {
                learners::LearnerConfig c;
                c.kind = learners::learner_kind_from(kind);
                c.layers = layer;
                c.hidden = hidden;
                c.embedding = embedding;
                c.heads = head;
                c.kernel = kernel;
                c.dropout = dropout;
                c.validate();
                out.push_back(c);
              }
  return out;
}

}  // namespace

ParsedConfig parse_config_text(const std::string& text) {
  ParsedConfig parsed;
  std::vector<std::pair<std::string, Section>> sections;
  std::istringstream is(text);
  std::string line;
  std::string current = "experiment";
  sections.emplace_back(current, Section{});
  while (std::getline(is, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      demand(line.back() == ']', "config: malformed section header '" + line + "'");
      current = trim(line.substr(1, line.size() - 2));
      sections.emplace_back(current, Section{});
      continue;
    }
    const std::size_t eq = line.find('=');
    demand(eq != std::string::npos, "config: expected key = value, got '" + line + "'");
    sections.back().second.emplace_back(trim(line.substr(0, eq)),
                                        trim(line.substr(eq + 1)));
  }

  ExperimentSpec& spec = parsed.experiment;
  for (const auto& [name, body] : sections) {
    if (name == "experiment") {
      for (const auto& [k, v] : body) {
        if (k == "seeds") spec.seeds = std::stoi(v);
        else if (k == "master_seed") spec.master_seed = std::stoull(v);
        else if (k == "block_size") spec.block_size = std::stoi(v);
        else if (k == "out") spec.out_dir = v;
        else if (k == "workers") spec.workers = std::stoi(v);
        else if (k == "metrics") {
          spec.compute_fpa = false;
          spec.compute_dl = false;
          for (const auto& m : split_list(v)) {
            if (m == "fpa") spec.compute_fpa = true;
            else if (m == "dl") spec.compute_dl = true;
            else throw Error("config: unknown metric '" + m + "'");
          }
        } else {
          throw Error("config: unknown experiment key '" + k + "'");
        }
      }
    } else if (name == "hyper") {
      for (const auto& [k, v] : body) {
        if (k == "epochs") spec.hyper.epochs = std::stoi(v);
        else if (k == "warmup") spec.hyper.warmup_updates = std::stoi(v);
        else if (k == "lr_floor") spec.hyper.lr_floor = std::stod(v);
        else if (k == "lr_peak") spec.hyper.lr_peak = std::stod(v);
        else if (k == "dropout") spec.hyper.dropout = std::stod(v);
        else if (k == "adam_beta1") spec.hyper.adam_beta1 = std::stod(v);
        else if (k == "adam_beta2") spec.hyper.adam_beta2 = std::stod(v);
        else if (k == "adam_eps") spec.hyper.adam_eps = std::stod(v);
        else throw Error("config: unknown hyper key '" + k + "'");
      }
    } else if (name == "task") {
      auto tasks_in = expand_tasks(body);
      spec.task_grid.insert(spec.task_grid.end(), tasks_in.begin(), tasks_in.end());
    } else if (name == "learner") {
      auto learners_in = expand_learners(body);
      spec.learner_grid.insert(spec.learner_grid.end(), learners_in.begin(),
                               learners_in.end());
    } else if (name == "curve") {
      CurveSpec curve;
      curve.hyper = spec.hyper;
      curve.master_seed = spec.master_seed;
      for (const auto& [k, v] : body) {
        if (k == "n") curve.n_primitives = std::stoi(v);
        else if (k == "m") curve.m_values = int_list(v);
        else if (k == "rule") curve.rule = tasks::rule_from(v);
        else if (k == "seeds") curve.seeds = std::stoi(v);
        else throw Error("config: unknown curve key '" + k + "'");
      }
      parsed.curve = std::move(curve);
    } else {
      throw Error("config: unknown section [" + name + "]");
    }
  }
  if (parsed.curve) {
    parsed.curve->learner_grid = spec.learner_grid;
    parsed.curve->hyper = spec.hyper;
    parsed.curve->master_seed = spec.master_seed;
  }
  return parsed;
}

ParsedConfig load_config(const std::string& path) {
  std::ifstream is(path);
  demand(is.good(), "config: cannot open " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return parse_config_text(os.str());
}

}  // namespace seqbias::runner
