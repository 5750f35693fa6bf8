#include "seqbias/tasks.hpp"

#include <algorithm>

namespace seqbias::tasks {

TaskKind task_kind_from(const std::string& name) {
  if (name == "count-mem") return TaskKind::kCountOrMem;
  if (name == "add-mul") return TaskKind::kAddOrMul;
  if (name == "mult3") return TaskKind::kMultiplyThree;
  if (name == "hier-linear") return TaskKind::kHierOrLinear;
  if (name == "comp-mem") return TaskKind::kCompOrMem;
  throw Error("unknown task kind '" + name + "'");
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kCountOrMem: return "count-mem";
    case TaskKind::kAddOrMul: return "add-mul";
    case TaskKind::kMultiplyThree: return "mult3";
    case TaskKind::kHierOrLinear: return "hier-linear";
    case TaskKind::kCompOrMem: return "comp-mem";
  }
  return "?";
}

void TaskInstance::validate() const {
  switch (kind) {
    case TaskKind::kCountOrMem:
      demand(l >= 1, "count-mem: l must be >= 1");
      break;
    case TaskKind::kAddOrMul:
      demand(l >= 3, "add-mul: l must be >= 3 so the holdout interval stays nonnegative");
      break;
    case TaskKind::kMultiplyThree:
      demand(l >= 3, "mult3: l must be >= 3 so the holdout interval stays nonnegative");
      break;
    case TaskKind::kHierOrLinear:
      demand(d >= 1, "hier-linear: d must be >= 1");
      break;
    case TaskKind::kCompOrMem:
      demand(n >= 1, "comp-mem: n must be >= 1");
      demand(m >= 0 && m < n, "comp-mem: need 0 <= m < n");
      break;
  }
}

std::string TaskInstance::describe() const {
  switch (kind) {
    case TaskKind::kCountOrMem: return "count-mem(l=" + std::to_string(l) + ")";
    case TaskKind::kAddOrMul: return "add-mul(l=" + std::to_string(l) + ")";
    case TaskKind::kMultiplyThree: return "mult3(l=" + std::to_string(l) + ")";
    case TaskKind::kHierOrLinear: return "hier-linear(d=" + std::to_string(d) + ")";
    case TaskKind::kCompOrMem:
      return "comp-mem(n=" + std::to_string(n) + ",m=" + std::to_string(m) + ")";
  }
  return "?";
}

int Vocab::find(const std::string& tok) const {
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] == tok) return static_cast<int>(i);
  throw Error("token '" + tok + "' not in vocabulary");
}

std::string to_string(Rule rule) {
  switch (rule) {
    case Rule::kCount: return "count";
    case Rule::kMem: return "mem";
    case Rule::kAdd: return "add";
    case Rule::kMul: return "mul";
    case Rule::kMul1: return "mul1";
    case Rule::kMul2: return "mul2";
    case Rule::kMul3: return "mul3";
    case Rule::kHierar: return "hierar";
    case Rule::kLinear: return "linear";
    case Rule::kComp: return "comp";
  }
  return "?";
}

Rule rule_from(const std::string& name) {
  for (Rule r : {Rule::kCount, Rule::kMem, Rule::kAdd, Rule::kMul, Rule::kMul1, Rule::kMul2,
                 Rule::kMul3, Rule::kHierar, Rule::kLinear, Rule::kComp})
    if (to_string(r) == name) return r;
  throw Error("unknown rule '" + name + "'");
}

std::vector<Rule> rules_for(const TaskInstance& instance) {
  instance.validate();
  switch (instance.kind) {
    case TaskKind::kCountOrMem: return {Rule::kCount, Rule::kMem};
    case TaskKind::kAddOrMul: return {Rule::kAdd, Rule::kMul, Rule::kMem};
    case TaskKind::kMultiplyThree: return {Rule::kMul1, Rule::kMul2, Rule::kMul3, Rule::kMem};
    case TaskKind::kHierOrLinear: return {Rule::kHierar, Rule::kLinear};
    case TaskKind::kCompOrMem: return {Rule::kComp, Rule::kMem};
  }
  return {};
}

namespace {

// single-symbol tasks: inputs over {a}, outputs over {b}
std::vector<int> repeat_with_eos(int token, int count, int eos) {
  std::vector<int> seq(static_cast<std::size_t>(count), token);
  seq.push_back(eos);
  return seq;
}

// number of leading `a` tokens in an a^m <eos> input
int parse_repeat_count(const std::vector<int>& input, const Vocab& vocab) {
  demand(!input.empty() && input.back() == vocab.eos(),
         "input must be end-of-sequence terminated");
  for (std::size_t i = 0; i + 1 < input.size(); ++i)
    demand(input[i] == 0, "input must be a run of the repeated symbol");
  return static_cast<int>(input.size()) - 1;
}

struct HierParse {
  int depth = 0;
  int outer = 0;   // x token id
  int middle = 0;  // y token id
};

HierParse parse_hier_input(const std::vector<int>& input, const Vocab& vocab) {
  demand(!input.empty() && input.back() == vocab.eos(),
         "input must be end-of-sequence terminated");
  const int len = static_cast<int>(input.size()) - 1;
  demand(len % 2 == 1, "hier-linear input must have odd length x^m y x^m");
  HierParse p;
  p.depth = len / 2;
  p.middle = input[static_cast<std::size_t>(p.depth)];
  p.outer = p.depth > 0 ? input[0] : p.middle;
  for (int i = 0; i < len; ++i)
    if (i != p.depth)
      demand(input[static_cast<std::size_t>(i)] == p.outer,
             "hier-linear input must be x^m y x^m");
  return p;
}

}  // namespace

TaskData make_task_data(const TaskInstance& instance) {
  instance.validate();
  TaskData data;
  switch (instance.kind) {
    case TaskKind::kCountOrMem: {
      data.input_vocab.tokens = {"a", "<eos>"};
      data.output_vocab.tokens = {"b", "<eos>"};
      const int ieos = data.input_vocab.eos(), oeos = data.output_vocab.eos();
      data.train.push_back(
          {repeat_with_eos(0, instance.l, ieos), repeat_with_eos(0, instance.l, oeos)});
      for (int m = std::max(0, instance.l - 10); m <= instance.l + 10; ++m)
        data.holdout_inputs.push_back(repeat_with_eos(0, m, ieos));
      break;
    }
    case TaskKind::kAddOrMul:
    case TaskKind::kMultiplyThree: {
      const int factor = instance.kind == TaskKind::kAddOrMul ? 2 : 3;
      data.input_vocab.tokens = {"a", "<eos>"};
      data.output_vocab.tokens = {"b", "<eos>"};
      const int ieos = data.input_vocab.eos(), oeos = data.output_vocab.eos();
      data.train.push_back({repeat_with_eos(0, instance.l, ieos),
                            repeat_with_eos(0, factor * instance.l, oeos)});
      for (int m = instance.l - 3; m <= instance.l + 3; ++m)
        data.holdout_inputs.push_back(repeat_with_eos(0, m, ieos));
      break;
    }
    case TaskKind::kHierOrLinear: {
      data.input_vocab.tokens = {"a", "b", "<eos>"};
      data.output_vocab.tokens = {"a", "b", "<eos>"};
      const int ieos = data.input_vocab.eos(), oeos = data.output_vocab.eos();
      auto make_input = [&](int x, int y, int depth) {
        std::vector<int> seq;
        seq.insert(seq.end(), static_cast<std::size_t>(depth), x);
        seq.push_back(y);
        seq.insert(seq.end(), static_cast<std::size_t>(depth), x);
        seq.push_back(ieos);
        return seq;
      };
      for (int x = 0; x < 2; ++x)
        for (int y = 0; y < 2; ++y)
          data.train.push_back({make_input(x, y, instance.d), {y, oeos}});
      for (int m = std::max(0, instance.d - 2); m <= instance.d + 2; ++m)
        for (int x = 0; x < 2; ++x)
          for (int y = 0; y < 2; ++y) data.holdout_inputs.push_back(make_input(x, y, m));
      break;
    }
    case TaskKind::kCompOrMem: {
      for (int i = 1; i <= instance.n; ++i)
        data.input_vocab.tokens.push_back("a" + std::to_string(i));
      data.input_vocab.tokens.push_back("thrice");
      data.input_vocab.tokens.push_back("<eos>");
      for (int i = 1; i <= instance.n; ++i)
        data.output_vocab.tokens.push_back("b" + std::to_string(i));
      data.output_vocab.tokens.push_back("<eos>");
      const int thrice = instance.n;
      const int ieos = data.input_vocab.eos(), oeos = data.output_vocab.eos();
      for (int i = 0; i < instance.n; ++i)
        data.train.push_back({{i, ieos}, {i, oeos}});
      // the first m primitives are the compositional training examples,
      // fixed across seeds
      for (int i = 0; i < instance.m; ++i)
        data.train.push_back({{thrice, i, ieos}, {i, i, i, oeos}});
      for (int i = instance.m; i < instance.n; ++i)
        data.holdout_inputs.push_back({thrice, i, ieos});
      break;
    }
  }
  return data;
}

std::vector<int> apply_rule(const TaskInstance& instance, Rule rule,
                            const std::vector<int>& input, const TaskData& data) {
  instance.validate();
  const auto rules = rules_for(instance);
  demand(std::find(rules.begin(), rules.end(), rule) != rules.end(),
         "rule " + to_string(rule) + " does not belong to task " + to_string(instance.kind));
  const int oeos = data.output_vocab.eos();
  switch (instance.kind) {
    case TaskKind::kCountOrMem: {
      const int m = parse_repeat_count(input, data.input_vocab);
      const int count = rule == Rule::kCount ? m : instance.l;
      return repeat_with_eos(0, count, oeos);
    }
    case TaskKind::kAddOrMul: {
      const int m = parse_repeat_count(input, data.input_vocab);
      int count = 0;
      if (rule == Rule::kAdd)
        count = m + instance.l;
      else if (rule == Rule::kMul)
        count = 2 * m;
      else
        count = 2 * instance.l;
      return repeat_with_eos(0, count, oeos);
    }
    case TaskKind::kMultiplyThree: {
      const int m = parse_repeat_count(input, data.input_vocab);
      int count = 0;
      switch (rule) {
        case Rule::kMul1: count = 2 * instance.l + m; break;
        case Rule::kMul2: count = instance.l + 2 * m; break;
        case Rule::kMul3: count = 3 * m; break;
        default: count = 3 * instance.l; break;
      }
      return repeat_with_eos(0, count, oeos);
    }
    case TaskKind::kHierOrLinear: {
      const HierParse p = parse_hier_input(input, data.input_vocab);
      if (rule == Rule::kHierar) return {p.middle, oeos};
      // linear: the (d+1)-th symbol of x^m y x^m exists only when m >= d/2
      demand(2 * p.depth >= instance.d,
             "linear rule inapplicable: input depth " + std::to_string(p.depth) +
                 " has no position " + std::to_string(instance.d + 1));
      const int symbol = p.depth == instance.d ? p.middle : p.outer;
      return {symbol, oeos};
    }
    case TaskKind::kCompOrMem: {
      demand(input.size() >= 2 && input.back() == data.input_vocab.eos(),
             "comp-mem: malformed input");
      if (input.size() == 2) {  // plain primitive a_i: every rule maps it to b_i
        const int i = input[0];
        demand(i >= 0 && i < instance.n, "comp-mem: primitive out of range");
        return {i, oeos};
      }
      demand(input.size() == 3 && input[0] == instance.n,
             "comp-mem rules apply to a_i or 'thrice a_i' inputs");
      const int i = input[1];
      demand(i >= 0 && i < instance.n, "comp-mem: primitive out of range");
      if (rule == Rule::kComp) return {i, i, i, oeos};
      // mem reproduces the memorized training output for the first m
      // primitives and collapses unseen compositional inputs to b_i
      if (i < instance.m) return {i, i, i, oeos};
      return {i, oeos};
    }
  }
  throw Error("unreachable");
}

std::optional<std::vector<int>> try_apply_rule(const TaskInstance& instance, Rule rule,
                                               const std::vector<int>& input,
                                               const TaskData& data) {
  if (instance.kind == TaskKind::kHierOrLinear && rule == Rule::kLinear) {
    const HierParse p = parse_hier_input(input, data.input_vocab);
    if (2 * p.depth < instance.d) return std::nullopt;
  }
  return apply_rule(instance, rule, input, data);
}

std::string render_tokens(const std::vector<int>& ids, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    demand(ids[i] >= 0 && ids[i] < vocab.size(), "render: token id out of range");
    if (i) out += ' ';
    out += vocab.tokens[static_cast<std::size_t>(ids[i])];
  }
  return out;
}

std::string render_example(const Example& ex, const TaskData& data) {
  return render_tokens(ex.input, data.input_vocab) + "\t" +
         render_tokens(ex.output, data.output_vocab);
}

}  // namespace seqbias::tasks
