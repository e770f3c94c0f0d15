#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aloftrag/core.hpp"
#include "aloftrag/gateway.hpp"
#include "aloftrag/parsers.hpp"
#include "aloftrag/pipeline.hpp"
#include "aloftrag/prompts.hpp"
#include "aloftrag/stats.hpp"

namespace aloftrag {

// One gold QA row: {id, question, answer, ref_id}.
struct GoldItem {
  std::string id;
  std::string question;
  std::string answer;
  std::string ref_id;
};

inline std::vector<GoldItem> read_gold_file(const std::string& path) {
  std::vector<GoldItem> items;
  for (const auto& row : read_jsonl_file(path)) {
    GoldItem item;
    item.id = row.at("id").get<std::string>();
    item.question = row.at("question").get<std::string>();
    item.answer = row.at("answer").get<std::string>();
    item.ref_id = row.at("ref_id").get<std::string>();
    items.push_back(std::move(item));
  }
  return items;
}

struct EvalItem {
  std::string question_id;
  std::string question;
  std::string gold_answer;
  std::string gold_ref_id;
  std::string subset;
  std::string language;
  std::vector<std::string> contexts;  // post-shuffle ids
  int correct_ordinal = 0;
  bool is_hard = false;
  std::size_t token_total = 0;
  std::uint64_t shuffle_seed = 0;
};

struct SelectContextsOptions {
  std::size_t budget_tokens = 20000;
  std::size_t margin = 1000;
  int k = 10;
  std::uint64_t seed = 0;
};

// Top-k by similarity, trimmed from the least-similar end until the rendered
// total fits budget - margin, then the gold reference is swapped in for the
// least-similar survivor when absent (a "hard" question), and finally the
// list is shuffled with a PRNG keyed by (seed, question id).
inline EvalItem select_contexts(const GoldItem& gold, const std::vector<ReferenceText>& texts,
                                const std::vector<double>& sim_row,
                                const SelectContextsOptions& opt) {
  if (sim_row.size() != texts.size())
    throw DataError("select_contexts: similarity row size mismatch");
  auto by_id = index_by_id(texts);
  auto gold_it = by_id.find(gold.ref_id);
  if (gold_it == by_id.end())
    throw DataError("select_contexts: unresolved gold ref_id " + gold.ref_id);
  const std::size_t gold_index = gold_it->second;
  const std::size_t usable = opt.budget_tokens - std::min(opt.budget_tokens, opt.margin);
  if (texts[gold_index].token_estimate > usable) throw DataError("gold_exceeds_budget");

  std::vector<std::size_t> order(texts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (sim_row[a] != sim_row[b]) return sim_row[a] > sim_row[b];
    return a < b;
  });
  const std::size_t k = std::min<std::size_t>(order.size(), static_cast<std::size_t>(std::max(1, opt.k)));
  std::vector<std::size_t> selected(order.begin(), order.begin() + static_cast<long>(k));

  auto total_tokens = [&](const std::vector<std::size_t>& ids) {
    std::size_t sum = 0;
    for (std::size_t t : ids) sum += texts[t].token_estimate;
    return sum;
  };
  // Trim least-similar-first until the pack fits.
  while (!selected.empty() && total_tokens(selected) > usable) selected.pop_back();

  EvalItem item;
  item.question_id = gold.id;
  item.question = gold.question;
  item.gold_answer = gold.answer;
  item.gold_ref_id = gold.ref_id;
  item.subset = texts[gold_index].subset;
  item.language = texts[gold_index].language;

  const bool contained = std::find(selected.begin(), selected.end(), gold_index) != selected.end();
  if (!contained) {
    item.is_hard = true;
    if (selected.empty()) {
      selected.push_back(gold_index);
    } else {
      selected.back() = gold_index;
    }
    // The swapped-in gold may be longer than the text it replaced; drop the
    // least-similar non-gold survivors until the pack fits again.
    while (total_tokens(selected) > usable) {
      bool removed = false;
      for (std::size_t i = selected.size(); i > 0; --i) {
        if (selected[i - 1] != gold_index) {
          selected.erase(selected.begin() + static_cast<long>(i) - 1);
          removed = true;
          break;
        }
      }
      if (!removed) throw DataError("gold_exceeds_budget");
    }
  }
  item.token_total = total_tokens(selected);

  item.shuffle_seed = derive_seed(opt.seed, gold.id);
  SplitMix64 rng(item.shuffle_seed);
  deterministic_shuffle(selected, rng);
  item.contexts.reserve(selected.size());
  for (std::size_t i = 0; i < selected.size(); ++i) {
    item.contexts.push_back(texts[selected[i]].id);
    if (selected[i] == gold_index) item.correct_ordinal = static_cast<int>(i) + 1;
  }
  return item;
}

// ---------------------------------------------------------------------------
// Evaluation run
// ---------------------------------------------------------------------------

struct EvalRecord {
  std::string question_id;
  std::string subset;
  std::vector<int> predicted_ordinals;
  std::string generated_answer;
  bool ref_hit = false;
  bool ans_correct = false;
  bool is_hard = false;
  bool endpoint_failed = false;

  ordered_json to_json() const {
    ordered_json j;
    j["id"] = question_id;
    j["subset"] = subset;
    j["predicted_ordinals"] = predicted_ordinals;
    j["generated_answer"] = generated_answer;
    j["ref_hit"] = ref_hit;
    j["ans_correct"] = ans_correct;
    j["is_hard"] = is_hard;
    j["endpoint_failed"] = endpoint_failed;
    return j;
  }

  static EvalRecord from_json(const json& j) {
    EvalRecord r;
    r.question_id = j.at("id").get<std::string>();
    r.subset = j.at("subset").get<std::string>();
    r.predicted_ordinals = j.at("predicted_ordinals").get<std::vector<int>>();
    r.generated_answer = j.at("generated_answer").get<std::string>();
    r.ref_hit = j.at("ref_hit").get<bool>();
    r.ans_correct = j.at("ans_correct").get<bool>();
    r.is_hard = j.at("is_hard").get<bool>();
    r.endpoint_failed = j.value("endpoint_failed", false);
    return r;
  }
};

struct RunEvalOptions {
  ChatModel model;
  ChatModel judge_model;
};

// Queries the model under test for every item, scores citation containment,
// then asks the judge endpoint for an answer verdict. Per-item endpoint
// failures yield a record flagged endpoint_failed with both scores false.
inline std::vector<EvalRecord> run_eval(const std::vector<EvalItem>& items,
                                        const std::vector<ReferenceText>& texts,
                                        Gateway& model_gateway, const PromptSet& prompts,
                                        Gateway& judge_gateway, const RunEvalOptions& opt,
                                        RunManifest* manifest = nullptr) {
  auto by_id = index_by_id(texts);
  std::vector<ChatRequest> requests;
  requests.reserve(items.size());
  for (const auto& item : items) {
    std::vector<std::string> bodies;
    bodies.reserve(item.contexts.size());
    for (const auto& id : item.contexts) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw DataError("run_eval: unresolved context id " + id);
      bodies.push_back(texts[it->second].body);
    }
    requests.push_back(make_generation_request(
        opt.model, prompts.render_system(TemplateId::rag_system, item.language),
        build_rag_user_message(bodies, item.question)));
  }
  std::vector<ChatOutcome> outcomes = model_gateway.chat_batch(requests);

  std::vector<EvalRecord> records(items.size());
  std::vector<std::size_t> judged;  // indices with a generated answer to check
  std::vector<ChatRequest> judge_requests;
  for (std::size_t i = 0; i < items.size(); ++i) {
    EvalRecord& rec = records[i];
    rec.question_id = items[i].question_id;
    rec.subset = items[i].subset;
    rec.is_hard = items[i].is_hard;
    if (!outcomes[i].ok()) {
      rec.endpoint_failed = true;
      continue;
    }
    RagResponse parsed = parse_rag_response(outcomes[i].text);
    rec.predicted_ordinals = parsed.ordinals;
    rec.generated_answer = parsed.answer;
    rec.ref_hit = std::find(parsed.ordinals.begin(), parsed.ordinals.end(),
                            items[i].correct_ordinal) != parsed.ordinals.end();
    const ReferenceText& gold_text = texts[by_id.at(items[i].gold_ref_id)];
    judged.push_back(i);
    judge_requests.push_back(make_generation_request(
        opt.judge_model, prompts.render_system(TemplateId::answer_check, items[i].language),
        build_judge_user_message(gold_text.body, items[i].question, items[i].gold_answer,
                                 rec.generated_answer)));
  }
  std::vector<ChatOutcome> verdicts = judge_gateway.chat_batch(judge_requests);
  for (std::size_t j = 0; j < judged.size(); ++j) {
    EvalRecord& rec = records[judged[j]];
    if (!verdicts[j].ok()) {
      rec.endpoint_failed = true;
      rec.ref_hit = false;
      rec.ans_correct = false;
      continue;
    }
    JudgeVerdict verdict = parse_judge(verdicts[j].text);
    rec.ans_correct = verdict.correct;
    if (!verdict.conforming && manifest) ++manifest->judge_nonconforming;
  }
  if (manifest) {
    StageCounts& stage = manifest->stage("eval");
    stage.input = static_cast<long>(items.size());
    for (const auto& rec : records) {
      if (rec.endpoint_failed)
        stage.drop("endpoint_failed");
      else
        ++stage.kept;
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

// Subset keys are "<dataset>/<language>"; a key without '/' is its own
// dataset.
inline std::string dataset_of_subset(const std::string& subset) {
  std::size_t slash = subset.find('/');
  return slash == std::string::npos ? subset : subset.substr(0, slash);
}

struct Rates {
  long count = 0;
  double ref_acc = 0.0;
  double ans_acc = 0.0;
};

struct EasyHardSplit {
  std::optional<Rates> easy;
  std::optional<Rates> hard;
};

// Accuracy pairs over the easy/hard partition; an empty side is reported as
// absent, never as zero.
inline EasyHardSplit split_easy_hard(const std::vector<EvalRecord>& records) {
  Rates easy, hard;
  for (const auto& rec : records) {
    Rates& side = rec.is_hard ? hard : easy;
    ++side.count;
    if (rec.ref_hit) side.ref_acc += 1.0;
    if (rec.ans_correct) side.ans_acc += 1.0;
  }
  EasyHardSplit split;
  auto finish = [](Rates& r) {
    r.ref_acc = 100.0 * r.ref_acc / static_cast<double>(r.count);
    r.ans_acc = 100.0 * r.ans_acc / static_cast<double>(r.count);
  };
  if (easy.count > 0) {
    finish(easy);
    split.easy = easy;
  }
  if (hard.count > 0) {
    finish(hard);
    split.hard = hard;
  }
  return split;
}

struct SubsetReport {
  std::string subset;
  std::string dataset;
  long count = 0;
  double ref_acc = 0.0;
  double ans_acc = 0.0;
  double wrong_ref_right_ans = 0.0;
  EasyHardSplit easy_hard;
  long endpoint_failed = 0;
};

struct DatasetReport {
  std::string dataset;
  long subsets = 0;
  double ref_acc = 0.0;
  double ans_acc = 0.0;
  double wrong_ref_right_ans = 0.0;
};

struct OverallReport {
  long datasets = 0;
  double ref_acc = 0.0;
  double ans_acc = 0.0;
  double wrong_ref_right_ans = 0.0;
  EasyHardSplit easy_hard;  // over all records
};

struct AggregateReport {
  std::vector<SubsetReport> subsets;
  std::vector<DatasetReport> datasets;
  OverallReport overall;
  std::vector<std::string> warnings;
};

// Unweighted mean of subset percentages per dataset; input order of datasets
// follows the sorted subset keys.
inline std::map<std::string, double> dataset_means(
    const std::vector<std::pair<std::string, double>>& subset_values) {
  std::map<std::string, std::pair<double, long>> sums;
  for (const auto& [subset, value] : subset_values) {
    auto& acc = sums[dataset_of_subset(subset)];
    acc.first += value;
    acc.second += 1;
  }
  std::map<std::string, double> means;
  for (const auto& [dataset, acc] : sums) means[dataset] = acc.first / static_cast<double>(acc.second);
  return means;
}

inline double overall_mean(const std::map<std::string, double>& dataset_values) {
  if (dataset_values.empty()) throw DataError("overall_mean: no datasets");
  double sum = 0.0;
  for (const auto& [_, v] : dataset_values) sum += v;
  return sum / static_cast<double>(dataset_values.size());
}

// subset accuracy over records -> dataset = unweighted mean of its subsets ->
// overall = unweighted mean of dataset values.
inline AggregateReport aggregate(const std::vector<EvalRecord>& records) {
  AggregateReport report;
  std::map<std::string, std::vector<EvalRecord>> by_subset;
  for (const auto& rec : records) by_subset[rec.subset].push_back(rec);

  std::vector<std::pair<std::string, double>> ref_values;
  std::vector<std::pair<std::string, double>> ans_values;
  std::vector<std::pair<std::string, double>> wrr_values;
  for (const auto& [subset, recs] : by_subset) {
    if (recs.empty()) {
      report.warnings.push_back("subset " + subset + " is empty; excluded");
      continue;
    }
    SubsetReport s;
    s.subset = subset;
    s.dataset = dataset_of_subset(subset);
    s.count = static_cast<long>(recs.size());
    long ref_hits = 0, ans_hits = 0, wrong_ref_right = 0;
    for (const auto& rec : recs) {
      if (rec.ref_hit) ++ref_hits;
      if (rec.ans_correct) ++ans_hits;
      if (!rec.ref_hit && rec.ans_correct) ++wrong_ref_right;
      if (rec.endpoint_failed) ++s.endpoint_failed;
    }
    s.ref_acc = 100.0 * static_cast<double>(ref_hits) / static_cast<double>(s.count);
    s.ans_acc = 100.0 * static_cast<double>(ans_hits) / static_cast<double>(s.count);
    s.wrong_ref_right_ans = 100.0 * static_cast<double>(wrong_ref_right) / static_cast<double>(s.count);
    s.easy_hard = split_easy_hard(recs);
    ref_values.emplace_back(subset, s.ref_acc);
    ans_values.emplace_back(subset, s.ans_acc);
    wrr_values.emplace_back(subset, s.wrong_ref_right_ans);
    report.subsets.push_back(std::move(s));
  }
  if (report.subsets.empty()) throw DataError("empty_records");

  auto ref_ds = dataset_means(ref_values);
  auto ans_ds = dataset_means(ans_values);
  auto wrr_ds = dataset_means(wrr_values);
  for (const auto& [dataset, ref] : ref_ds) {
    DatasetReport d;
    d.dataset = dataset;
    d.ref_acc = ref;
    d.ans_acc = ans_ds.at(dataset);
    d.wrong_ref_right_ans = wrr_ds.at(dataset);
    for (const auto& s : report.subsets)
      if (s.dataset == dataset) ++d.subsets;
    report.datasets.push_back(std::move(d));
  }
  report.overall.datasets = static_cast<long>(report.datasets.size());
  report.overall.ref_acc = overall_mean(ref_ds);
  report.overall.ans_acc = overall_mean(ans_ds);
  report.overall.wrong_ref_right_ans = overall_mean(wrr_ds);
  report.overall.easy_hard = split_easy_hard(records);
  return report;
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

using stats::PairedTTest;
using stats::paired_t_test;

namespace detail {

inline ordered_json rates_json(const std::optional<Rates>& rates) {
  if (!rates) return nullptr;
  ordered_json j;
  j["count"] = rates->count;
  j["ref_acc"] = rates->ref_acc;
  j["ans_acc"] = rates->ans_acc;
  return j;
}

inline ordered_json t_test_json(const PairedTTest& t) {
  ordered_json j;
  if (std::isinf(t.t))
    j["t"] = t.t > 0 ? "inf" : "-inf";
  else
    j["t"] = t.t;
  j["df"] = t.df;
  j["p_two_tailed"] = t.p_two_tailed;
  j["significant_p_lt_0.05"] = t.p_two_tailed < 0.05;
  return j;
}

}  // namespace detail

// Paired t-tests between two runs, paired by dataset name over the datasets
// present in both reports.
inline ordered_json compare_runs_json(const AggregateReport& current,
                                      const AggregateReport& baseline) {
  std::map<std::string, const DatasetReport*> base_by_name;
  for (const auto& d : baseline.datasets) base_by_name[d.dataset] = &d;
  std::vector<double> cur_ans, base_ans, cur_ref, base_ref;
  std::vector<std::string> paired;
  for (const auto& d : current.datasets) {
    auto it = base_by_name.find(d.dataset);
    if (it == base_by_name.end()) continue;
    paired.push_back(d.dataset);
    cur_ans.push_back(d.ans_acc);
    base_ans.push_back(it->second->ans_acc);
    cur_ref.push_back(d.ref_acc);
    base_ref.push_back(it->second->ref_acc);
  }
  ordered_json j;
  j["paired_datasets"] = paired;
  if (paired.size() >= 2) {
    j["answer_accuracy"] = detail::t_test_json(paired_t_test(cur_ans, base_ans));
    j["reference_accuracy"] = detail::t_test_json(paired_t_test(cur_ref, base_ref));
  } else {
    j["error"] = "need at least 2 paired datasets";
  }
  return j;
}

inline ordered_json report_to_json(const AggregateReport& report) {
  ordered_json j;
  j["overall"] = ordered_json{{"datasets", report.overall.datasets},
                              {"ref_acc", report.overall.ref_acc},
                              {"ans_acc", report.overall.ans_acc},
                              {"wrong_ref_right_ans", report.overall.wrong_ref_right_ans},
                              {"easy", detail::rates_json(report.overall.easy_hard.easy)},
                              {"hard", detail::rates_json(report.overall.easy_hard.hard)}};
  j["datasets"] = ordered_json::array();
  for (const auto& d : report.datasets) {
    j["datasets"].push_back(ordered_json{{"dataset", d.dataset},
                                         {"subsets", d.subsets},
                                         {"ref_acc", d.ref_acc},
                                         {"ans_acc", d.ans_acc},
                                         {"wrong_ref_right_ans", d.wrong_ref_right_ans}});
  }
  j["subsets"] = ordered_json::array();
  for (const auto& s : report.subsets) {
    j["subsets"].push_back(ordered_json{{"subset", s.subset},
                                        {"dataset", s.dataset},
                                        {"count", s.count},
                                        {"ref_acc", s.ref_acc},
                                        {"ans_acc", s.ans_acc},
                                        {"wrong_ref_right_ans", s.wrong_ref_right_ans},
                                        {"endpoint_failed", s.endpoint_failed},
                                        {"easy", detail::rates_json(s.easy_hard.easy)},
                                        {"hard", detail::rates_json(s.easy_hard.hard)}});
  }
  if (!report.warnings.empty()) j["warnings"] = report.warnings;
  return j;
}

// One row per subset.
inline std::string report_to_csv(const AggregateReport& report) {
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return std::string(buf);
  };
  std::string out =
      "subset,dataset,count,ref_acc,ans_acc,wrong_ref_right_ans,"
      "easy_count,easy_ref_acc,easy_ans_acc,hard_count,hard_ref_acc,hard_ans_acc,"
      "endpoint_failed\n";
  for (const auto& s : report.subsets) {
    out += s.subset + "," + s.dataset + "," + std::to_string(s.count) + "," + fmt(s.ref_acc) +
           "," + fmt(s.ans_acc) + "," + fmt(s.wrong_ref_right_ans) + ",";
    if (s.easy_hard.easy)
      out += std::to_string(s.easy_hard.easy->count) + "," + fmt(s.easy_hard.easy->ref_acc) + "," +
             fmt(s.easy_hard.easy->ans_acc) + ",";
    else
      out += ",,,";
    if (s.easy_hard.hard)
      out += std::to_string(s.easy_hard.hard->count) + "," + fmt(s.easy_hard.hard->ref_acc) + "," +
             fmt(s.easy_hard.hard->ans_acc) + ",";
    else
      out += ",,,";
    out += std::to_string(s.endpoint_failed) + "\n";
  }
  return out;
}

inline void write_records_jsonl(const std::string& path, const std::vector<EvalRecord>& records) {
  std::vector<ordered_json> rows;
  rows.reserve(records.size());
  for (const auto& rec : records) rows.push_back(rec.to_json());
  write_jsonl_file(path, rows);
}

inline std::vector<EvalRecord> read_records_jsonl(const std::string& path) {
  std::vector<EvalRecord> records;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  for_each_jsonl_line(in, [&](std::size_t line_no, const std::string& line) {
    json row = json::parse(line, nullptr, false);
    if (row.is_discarded())
      throw IoError(path + ": malformed record at line " + std::to_string(line_no));
    try {
      records.push_back(EvalRecord::from_json(row));
    } catch (const json::exception& e) {
      throw IoError(path + ": bad record at line " + std::to_string(line_no) + ": " + e.what());
    }
  });
  return records;
}

}  // namespace aloftrag
