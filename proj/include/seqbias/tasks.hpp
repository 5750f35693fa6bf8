#pragma once

#include <optional>
#include <string>
#include <vector>

#include "seqbias/common.hpp"

namespace seqbias::tasks {

enum class TaskKind { kCountOrMem, kAddOrMul, kMultiplyThree, kHierOrLinear, kCompOrMem };

TaskKind task_kind_from(const std::string& name);
std::string to_string(TaskKind kind);

// Parameters: l = training length (count-mem, add-mul, mult3), d = depth
// (hier-linear), n = primitive count and m = compositional example count
// (comp-mem). Unused fields stay zero.
struct TaskInstance {
  TaskKind kind = TaskKind::kCountOrMem;
  int l = 0;
  int d = 0;
  int n = 0;
  int m = 0;

  void validate() const;
  std::string describe() const;  // e.g. "count-mem(l=40)"
};

struct Vocab {
  std::vector<std::string> tokens;  // eos is always the last entry
  int eos() const { return static_cast<int>(tokens.size()) - 1; }
  int size() const { return static_cast<int>(tokens.size()); }
  int find(const std::string& tok) const;
};

// Token id sequences, both end-of-sequence terminated.
struct Example {
  std::vector<int> input;
  std::vector<int> output;
  bool operator==(const Example&) const = default;
};

struct TaskData {
  std::vector<Example> train;
  std::vector<std::vector<int>> holdout_inputs;
  Vocab input_vocab;
  Vocab output_vocab;
};

enum class Rule { kCount, kMem, kAdd, kMul, kMul1, kMul2, kMul3, kHierar, kLinear, kComp };

std::string to_string(Rule rule);
Rule rule_from(const std::string& name);

// The task's candidate set, in the order the tables list them.
std::vector<Rule> rules_for(const TaskInstance& instance);

TaskData make_task_data(const TaskInstance& instance);

// Deterministic oracle output for `input` under `rule`. Throws on malformed
// inputs and on the linear rule when the input is too shallow (depth m with
// 2m + 1 < d + 1, i.e. m < d/2, has no (d+1)-th symbol).
std::vector<int> apply_rule(const TaskInstance& instance, Rule rule,
                            const std::vector<int>& input, const TaskData& data);

// nullopt instead of the inapplicability error; other failures still throw.
std::optional<std::vector<int>> try_apply_rule(const TaskInstance& instance, Rule rule,
                                               const std::vector<int>& input,
                                               const TaskData& data);

// "a a a <eos>" style rendering used by the dump format.
std::string render_tokens(const std::vector<int>& ids, const Vocab& vocab);

// One example per line: input tokens, a tab, output tokens.
std::string render_example(const Example& ex, const TaskData& data);

}  // namespace seqbias::tasks
