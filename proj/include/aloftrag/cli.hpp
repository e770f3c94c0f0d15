#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "aloftrag/core.hpp"
#include "aloftrag/eval.hpp"
#include "aloftrag/formatter.hpp"
#include "aloftrag/gateway.hpp"
#include "aloftrag/http_backend.hpp"
#include "aloftrag/pipeline.hpp"
#include "aloftrag/prompts.hpp"

namespace aloftrag {

struct SubsetSpec {
  std::string name;
  std::string language;
  std::string corpus;
};

// Fully resolved run configuration. Precedence: config file < environment <
// command-line flags; the resolved value set is echoed into the manifest.
struct RunConfig {
  // data
  std::string corpus_path;
  std::string subset = "default";
  std::string language = "English";
  std::vector<SubsetSpec> subsets;  // optional multi-subset run (config file)
  std::string gold_path;
  std::string in_path;     // format: negatives.jsonl
  std::string texts_path;  // format: ingested/filtered texts
  std::string records_path;
  std::string baseline_records_path;
  std::string out_dir = "run";

  // endpoints
  std::string chat_url;
  std::string embed_url;
  std::string judge_url;  // defaults to chat_url
  std::string api_key;
  std::string model_name = "local-model";
  std::string judge_model_name = "judge-model";
  std::string embed_model_name = "embedding-model";
  std::string mock_fixture;
  std::string prompt_dir;

  // stages
  StageConfig stage;
  bool skip_step1 = false;
  bool negatives_include_filtered = false;
  std::size_t max_tokens = 1500;
  bool dedup = true;

  // eval
  std::size_t budget_tokens = 20000;
  std::size_t margin = 1000;
  int k = 10;
  std::vector<int> k_sweep;

  // run
  std::uint64_t seed = 0;
  int parallelism = 4;
  int max_output_tokens = 1024;
  std::map<std::string, std::string> trainer_overrides;

  ordered_json to_json() const {
    ordered_json j;
    j["corpus"] = corpus_path;
    j["subset"] = subset;
    j["language"] = language;
    if (!subsets.empty()) {
      j["subsets"] = ordered_json::array();
      for (const auto& s : subsets)
        j["subsets"].push_back(
            ordered_json{{"name", s.name}, {"language", s.language}, {"corpus", s.corpus}});
    }
    j["gold"] = gold_path;
    j["out_dir"] = out_dir;
    j["chat_url"] = chat_url;
    j["embed_url"] = embed_url;
    j["judge_url"] = judge_url;
    j["model"] = model_name;
    j["judge_model"] = judge_model_name;
    j["embed_model"] = embed_model_name;
    j["mock"] = mock_fixture;
    j["prompt_dir"] = prompt_dir;
    j["text_threshold"] = stage.text_threshold;
    j["qa_threshold"] = stage.qa_threshold;
    j["step3_enabled"] = stage.step3_enabled;
    j["n_contexts"] = stage.n_contexts;
    j["skip_step1"] = skip_step1;
    j["negatives_include_filtered"] = negatives_include_filtered;
    j["max_tokens"] = max_tokens;
    j["dedup"] = dedup;
    j["budget_tokens"] = budget_tokens;
    j["margin"] = margin;
    j["k"] = k;
    j["k_sweep"] = k_sweep;
    j["seed"] = seed;
    j["parallelism"] = parallelism;
    j["max_output_tokens"] = max_output_tokens;
    j["trainer_overrides"] = ordered_json::object();
    for (const auto& [k2, v] : trainer_overrides) j["trainer_overrides"][k2] = v;
    return j;
  }
};

// ---------------------------------------------------------------------------
// Config layering
// ---------------------------------------------------------------------------

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config: " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
  auto str = [&](const char* key, std::string& out) {
    if (j.contains(key) && j[key].is_string()) out = j[key].get<std::string>();
  };
  str("corpus", cfg.corpus_path);
  str("subset", cfg.subset);
  str("language", cfg.language);
  str("gold", cfg.gold_path);
  str("out_dir", cfg.out_dir);
  str("chat_url", cfg.chat_url);
  str("embed_url", cfg.embed_url);
  str("judge_url", cfg.judge_url);
  str("api_key", cfg.api_key);
  str("model", cfg.model_name);
  str("judge_model", cfg.judge_model_name);
  str("embed_model", cfg.embed_model_name);
  str("mock", cfg.mock_fixture);
  str("prompt_dir", cfg.prompt_dir);
  if (j.contains("subsets")) {
    cfg.subsets.clear();
    for (const auto& s : j["subsets"]) {
      SubsetSpec spec;
      spec.name = s.at("name").get<std::string>();
      spec.language = s.value("language", cfg.language);
      spec.corpus = s.value("corpus", cfg.corpus_path);
      cfg.subsets.push_back(std::move(spec));
    }
  }
  if (j.contains("text_threshold")) cfg.stage.text_threshold = j["text_threshold"].get<int>();
  if (j.contains("qa_threshold")) cfg.stage.qa_threshold = j["qa_threshold"].get<int>();
  if (j.contains("step3_enabled")) cfg.stage.step3_enabled = j["step3_enabled"].get<bool>();
  if (j.contains("n_contexts")) cfg.stage.n_contexts = j["n_contexts"].get<int>();
  if (j.contains("skip_step1")) cfg.skip_step1 = j["skip_step1"].get<bool>();
  if (j.contains("negatives_include_filtered"))
    cfg.negatives_include_filtered = j["negatives_include_filtered"].get<bool>();
  if (j.contains("max_tokens")) cfg.max_tokens = j["max_tokens"].get<std::size_t>();
  if (j.contains("dedup")) cfg.dedup = j["dedup"].get<bool>();
  if (j.contains("budget_tokens")) cfg.budget_tokens = j["budget_tokens"].get<std::size_t>();
  if (j.contains("margin")) cfg.margin = j["margin"].get<std::size_t>();
  if (j.contains("k")) cfg.k = j["k"].get<int>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("parallelism")) cfg.parallelism = j["parallelism"].get<int>();
  if (j.contains("max_output_tokens")) cfg.max_output_tokens = j["max_output_tokens"].get<int>();
  if (j.contains("trainer_overrides"))
    for (const auto& [key, value] : j["trainer_overrides"].items())
      cfg.trainer_overrides[key] = value.is_string() ? value.get<std::string>() : value.dump();
}

inline void apply_env(RunConfig& cfg) {
  if (const char* v = std::getenv("ALOFTRAG_CHAT_URL")) cfg.chat_url = v;
  if (const char* v = std::getenv("ALOFTRAG_EMBED_URL")) cfg.embed_url = v;
  if (const char* v = std::getenv("ALOFTRAG_API_KEY")) cfg.api_key = v;
}

// ---------------------------------------------------------------------------
// Backend wiring
// ---------------------------------------------------------------------------

struct Backends {
  std::shared_ptr<ChatBackend> chat;
  std::shared_ptr<ChatBackend> judge;
  std::shared_ptr<EmbedBackend> embed;
  std::string chat_descriptor;
  std::string embed_descriptor;
  std::string judge_descriptor;
};

inline Backends make_backends(const RunConfig& cfg) {
  Backends out;
  if (!cfg.mock_fixture.empty()) {
    MockBackends mocks = load_mock_fixture(cfg.mock_fixture);
    out.chat = mocks.chat;
    out.judge = mocks.chat;
    out.embed = mocks.embed;
    out.chat_descriptor = "mock:" + cfg.mock_fixture;
    out.embed_descriptor = "mock:" + cfg.mock_fixture;
    out.judge_descriptor = "mock:" + cfg.mock_fixture;
    return out;
  }
  if (cfg.chat_url.empty() || cfg.embed_url.empty())
    throw ConfigError(
        "chat/embedding endpoints not configured; set ALOFTRAG_CHAT_URL and "
        "ALOFTRAG_EMBED_URL (or pass --mock FIXTURE)");
  EndpointConfig chat_ep{cfg.chat_url, cfg.api_key, cfg.model_name};
  EndpointConfig embed_ep{cfg.embed_url, cfg.api_key, cfg.embed_model_name};
  EndpointConfig judge_ep{cfg.judge_url.empty() ? cfg.chat_url : cfg.judge_url, cfg.api_key,
                          cfg.judge_model_name};
  out.chat = std::make_shared<HttpChatBackend>(chat_ep);
  out.judge = std::make_shared<HttpChatBackend>(judge_ep);
  out.embed = std::make_shared<HttpEmbedBackend>(embed_ep);
  out.chat_descriptor = chat_ep.url;
  out.embed_descriptor = embed_ep.url;
  out.judge_descriptor = judge_ep.url;
  return out;
}

inline GatewayOptions gateway_options(const RunConfig& cfg) {
  GatewayOptions opt;
  opt.parallelism = cfg.parallelism;
  opt.retry.base_delay_ms = cfg.mock_fixture.empty() ? 1000 : 0;  // no sleeps offline
  opt.jitter_seed = cfg.seed;
  return opt;
}

// ---------------------------------------------------------------------------
// Artifact row helpers
// ---------------------------------------------------------------------------

namespace detail {

inline std::string sanitize_path_component(const std::string& name) {
  std::string out;
  for (char c : name) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-';
    out.push_back(ok ? c : '_');
  }
  return out;
}

inline ordered_json text_row(const ReferenceText& text, const std::map<std::string, int>* ratings) {
  ordered_json row = text.to_corpus_row();
  if (ratings) {
    auto it = ratings->find(text.id);
    if (it != ratings->end()) row["text_rating"] = it->second;
  }
  return row;
}

inline ordered_json qa_row(const GeneratedQA& qa) {
  ordered_json row;
  row["ref_id"] = qa.ref_id;
  row["question"] = qa.question;
  row["answer"] = qa.answer;
  if (qa.text_rating) row["text_rating"] = *qa.text_rating;
  if (qa.question_rating) row["question_rating"] = *qa.question_rating;
  if (qa.answer_rating) row["answer_rating"] = *qa.answer_rating;
  return row;
}

inline GeneratedQA qa_from_row(const json& row) {
  GeneratedQA qa;
  qa.ref_id = row.at("ref_id").get<std::string>();
  qa.question = row.at("question").get<std::string>();
  qa.answer = row.at("answer").get<std::string>();
  if (row.contains("text_rating")) qa.text_rating = row["text_rating"].get<int>();
  if (row.contains("question_rating")) qa.question_rating = row["question_rating"].get<int>();
  if (row.contains("answer_rating")) qa.answer_rating = row["answer_rating"].get<int>();
  return qa;
}

}  // namespace detail

// Reloads a texts artifact exactly (no filtering, no dedup); ingestion of
// already-rendered rows is a no-op by construction.
inline std::vector<ReferenceText> load_texts_jsonl(const std::string& path,
                                                   const std::string& subset,
                                                   const std::string& language) {
  IngestOptions opt;
  opt.max_tokens = 0;
  opt.dedup = false;
  opt.subset = subset;
  opt.language = language;
  IngestResult result = ingest_corpus_file(path, opt);
  for (const auto& drop : result.drops)
    throw DataError(path + ": row " + std::to_string(drop.row) + ": " + drop.reason);
  return result.texts;
}

inline std::vector<std::pair<GeneratedQA, std::vector<std::string>>> load_negatives_jsonl(
    const std::string& path) {
  std::vector<std::pair<GeneratedQA, std::vector<std::string>>> out;
  for (const auto& row : read_jsonl_file(path)) {
    GeneratedQA qa = detail::qa_from_row(row);
    std::vector<std::string> negatives = row.at("negatives").get<std::vector<std::string>>();
    out.emplace_back(std::move(qa), std::move(negatives));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

namespace detail {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

inline RunManifest make_manifest(const RunConfig& cfg, const Backends& backends) {
  RunManifest manifest;
  manifest.seed = cfg.seed;
  manifest.n_contexts = cfg.stage.n_contexts;
  manifest.thresholds["step1_text"] = cfg.stage.text_threshold;
  manifest.thresholds["step3_qa"] = cfg.stage.qa_threshold;
  manifest.endpoints["chat"] = backends.chat_descriptor;
  manifest.endpoints["embedding"] = backends.embed_descriptor;
  manifest.endpoints["judge"] = backends.judge_descriptor;
  manifest.notes["skip_step1"] = cfg.skip_step1 ? "true" : "false";
  manifest.notes["step3_enabled"] = cfg.stage.step3_enabled ? "true" : "false";
  manifest.notes["negatives_include_filtered"] =
      cfg.negatives_include_filtered ? "true" : "false";
  manifest.notes["max_output_tokens"] = std::to_string(cfg.max_output_tokens);
  return manifest;
}

inline void write_manifest(const std::string& path, const RunManifest& manifest,
                           const RunConfig& cfg) {
  ordered_json j = manifest.to_json();
  j["config"] = cfg.to_json();
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace detail

// ingest -> step1 -> step2 -> [step3] -> step4 [-> step5] for one subset,
// writing every stage artifact plus the manifest into out_dir. Step 5 is
// skipped for `generate`, which stops at negatives.jsonl.
inline int run_pipeline_for_subset(RunConfig cfg, bool with_step5 = true) {
  cfg.stage.validate();
  detail::ensure_dir(cfg.out_dir);
  PromptSet prompts;
  if (!cfg.prompt_dir.empty()) prompts.load_overrides(cfg.prompt_dir);
  Backends backends = make_backends(cfg);
  Gateway gateway(backends.chat, backends.embed, gateway_options(cfg));
  ChatModel model{cfg.model_name, cfg.max_output_tokens};
  RunManifest manifest = detail::make_manifest(cfg, backends);
  const std::filesystem::path out(cfg.out_dir);

  // Ingest
  IngestOptions ingest_opt;
  ingest_opt.max_tokens = cfg.max_tokens;
  ingest_opt.dedup = cfg.dedup;
  ingest_opt.subset = cfg.subset;
  ingest_opt.language = cfg.language;
  IngestResult ingested = ingest_corpus_file(cfg.corpus_path, ingest_opt);
  manifest.stage("ingest") = ingested.counts;
  if (ingested.texts.empty()) throw DataError("corpus is empty after ingestion");
  {
    std::vector<ordered_json> rows;
    for (const auto& t : ingested.texts) rows.push_back(detail::text_row(t, nullptr));
    write_jsonl_file((out / "texts.ingested.jsonl").string(), rows);
  }

  // Step 1: text filtering
  std::vector<ReferenceText> kept_texts;
  std::map<std::string, int> text_ratings;
  if (cfg.skip_step1) {
    kept_texts = ingested.texts;
    StageCounts& s = manifest.stage("step1_text_filter");
    s.input = static_cast<long>(ingested.texts.size());
    s.kept = s.input;
  } else {
    FilterTextsResult filtered = filter_texts(ingested.texts, cfg.stage, gateway, prompts, model);
    manifest.stage("step1_text_filter") = filtered.counts;
    kept_texts = std::move(filtered.kept);
    text_ratings = std::move(filtered.ratings);
  }
  {
    std::vector<ordered_json> rows;
    for (const auto& t : kept_texts)
      rows.push_back(detail::text_row(t, cfg.skip_step1 ? nullptr : &text_ratings));
    write_jsonl_file((out / "texts.filtered.jsonl").string(), rows);
  }
  if (kept_texts.empty()) throw DataError("no texts survived step 1");

  // Step 2: QA generation
  GenerateQasResult generated =
      generate_qas(kept_texts, gateway, prompts, model, cfg.skip_step1 ? nullptr : &text_ratings);
  manifest.stage("step2_qa_generation") = generated.counts;
  {
    std::vector<ordered_json> rows;
    for (const auto& qa : generated.qas) rows.push_back(detail::qa_row(qa));
    write_jsonl_file((out / "qas.jsonl").string(), rows);
  }
  if (generated.qas.empty()) throw DataError("no QAs survived step 2");

  // Step 3: QA filtering (optional)
  FilterQasResult qa_filtered =
      filter_qas(generated.qas, kept_texts, cfg.stage, gateway, prompts, model);
  manifest.stage("step3_qa_filter") = qa_filtered.counts;
  {
    std::vector<ordered_json> rows;
    for (const auto& qa : qa_filtered.kept) rows.push_back(detail::qa_row(qa));
    write_jsonl_file((out / "qas.filtered.jsonl").string(), rows);
  }
  if (qa_filtered.kept.empty()) throw DataError("no QAs survived step 3");

  // Step 4: hard negatives. The negative pool is the step-1 survivors unless
  // the run explicitly re-admits filtered-out texts.
  const std::vector<ReferenceText>& pool =
      cfg.negatives_include_filtered ? ingested.texts : kept_texts;
  SimilarityMatrix sim = build_similarity(qa_filtered.kept, pool, gateway);
  std::vector<std::vector<std::string>> negatives(qa_filtered.kept.size());
  {
    StageCounts& s = manifest.stage("step4_negatives");
    s.input = static_cast<long>(qa_filtered.kept.size());
    std::vector<ordered_json> rows;
    for (std::size_t i = 0; i < qa_filtered.kept.size(); ++i) {
      negatives[i] = mine_hard_negatives(qa_filtered.kept[i], i, sim, pool, cfg.stage);
      ordered_json row = detail::qa_row(qa_filtered.kept[i]);
      row["negatives"] = negatives[i];
      rows.push_back(std::move(row));
      ++s.kept;
    }
    write_jsonl_file((out / "negatives.jsonl").string(), rows);
  }

  // Step 5: assemble, render, emit
  if (with_step5) {
    std::vector<RagExample> examples;
    std::vector<TrainingConversation> conversations;
    std::vector<std::string> positives;
    for (std::size_t i = 0; i < qa_filtered.kept.size(); ++i) {
      RagExample example =
          assemble_training_example(qa_filtered.kept[i], negatives[i], pool, cfg.seed);
      conversations.push_back(
          render_conversation(example, pool, prompts, cfg.language, cfg.subset));
      positives.push_back(qa_filtered.kept[i].ref_id);
      examples.push_back(std::move(example));
    }
    emit_training_jsonl(conversations, (out / "train.jsonl").string());
    emit_trainer_config((out / "trainer.yaml").string(), cfg.trainer_overrides);
    AuditReport audit = audit_examples(examples, conversations, positives);
    detail::write_text_file((out / "audit.json").string(), audit.to_json().dump(2) + "\n");
    if (!audit.all_ok()) throw DataError("training example audit failed");
    StageCounts& s = manifest.stage("step5_format");
    s.input = static_cast<long>(conversations.size());
    s.kept = s.input;
  }

  manifest.chat_retries = gateway.total_retries();
  manifest.embed_cache_hits = gateway.cache_hits();
  if (!manifest.reconciles()) throw DataError("manifest stage counts do not reconcile");
  detail::write_manifest((out / "manifest.json").string(), manifest, cfg);
  return 0;
}

inline int run_subsets(const RunConfig& cfg, bool with_step5) {
  if (cfg.subsets.empty()) return run_pipeline_for_subset(cfg, with_step5);
  // Each subset runs in complete isolation, down to its own manifest.
  for (const auto& spec : cfg.subsets) {
    RunConfig sub = cfg;
    sub.subsets.clear();
    sub.subset = spec.name;
    sub.language = spec.language;
    sub.corpus_path = spec.corpus;
    sub.out_dir =
        (std::filesystem::path(cfg.out_dir) / detail::sanitize_path_component(spec.name)).string();
    int rc = run_pipeline_for_subset(sub, with_step5);
    if (rc != 0) return rc;
  }
  return 0;
}

inline int cmd_pipeline(const RunConfig& cfg) { return run_subsets(cfg, true); }

inline int cmd_ingest(const RunConfig& cfg) {
  detail::ensure_dir(cfg.out_dir);
  IngestOptions opt;
  opt.max_tokens = cfg.max_tokens;
  opt.dedup = cfg.dedup;
  opt.subset = cfg.subset;
  opt.language = cfg.language;
  IngestResult result = ingest_corpus_file(cfg.corpus_path, opt);
  std::vector<ordered_json> rows;
  for (const auto& t : result.texts) rows.push_back(detail::text_row(t, nullptr));
  const std::filesystem::path out(cfg.out_dir);
  write_jsonl_file((out / "texts.ingested.jsonl").string(), rows);
  ordered_json summary;
  summary["counts"] = result.counts.to_json();
  summary["drops"] = ordered_json::array();
  for (const auto& d : result.drops)
    summary["drops"].push_back(ordered_json{{"row", d.row}, {"id", d.id}, {"reason", d.reason}});
  detail::write_text_file((out / "ingest.report.json").string(), summary.dump(2) + "\n");
  std::cout << "ingested " << result.counts.kept << "/" << result.counts.input << " rows\n";
  return 0;
}

// Steps 1-4 only; stops after negatives.jsonl so the formatting stage can be
// re-run cheaply with different seeds.
inline int cmd_generate(const RunConfig& cfg) { return run_subsets(cfg, false); }

inline int cmd_format(const RunConfig& cfg) {
  detail::ensure_dir(cfg.out_dir);
  if (cfg.in_path.empty()) throw ConfigError("format: --in negatives.jsonl is required");
  if (cfg.texts_path.empty()) throw ConfigError("format: --texts texts jsonl is required");
  std::vector<ReferenceText> texts = load_texts_jsonl(cfg.texts_path, cfg.subset, cfg.language);
  auto mined = load_negatives_jsonl(cfg.in_path);
  if (mined.empty()) throw DataError("format: no rows in " + cfg.in_path);
  PromptSet prompts;
  if (!cfg.prompt_dir.empty()) prompts.load_overrides(cfg.prompt_dir);
  std::vector<RagExample> examples;
  std::vector<TrainingConversation> conversations;
  std::vector<std::string> positives;
  for (const auto& [qa, negatives] : mined) {
    RagExample example = assemble_training_example(qa, negatives, texts, cfg.seed);
    conversations.push_back(render_conversation(example, texts, prompts, cfg.language, cfg.subset));
    positives.push_back(qa.ref_id);
    examples.push_back(std::move(example));
  }
  const std::filesystem::path out(cfg.out_dir);
  std::size_t count = emit_training_jsonl(conversations, (out / "train.jsonl").string());
  emit_trainer_config((out / "trainer.yaml").string(), cfg.trainer_overrides);
  AuditReport audit = audit_examples(examples, conversations, positives);
  detail::write_text_file((out / "audit.json").string(), audit.to_json().dump(2) + "\n");
  if (!audit.all_ok()) throw DataError("training example audit failed");
  std::cout << "wrote " << count << " training conversations\n";
  return 0;
}

inline int cmd_eval(const RunConfig& cfg) {
  if (cfg.margin >= cfg.budget_tokens)
    throw ConfigError("eval: margin must be smaller than the token budget");
  detail::ensure_dir(cfg.out_dir);
  if (cfg.gold_path.empty()) throw ConfigError("eval: --gold FILE is required");
  PromptSet prompts;
  if (!cfg.prompt_dir.empty()) prompts.load_overrides(cfg.prompt_dir);
  Backends backends = make_backends(cfg);
  Gateway gateway(backends.chat, backends.embed, gateway_options(cfg));
  Gateway judge_gateway(backends.judge, backends.embed, gateway_options(cfg));
  RunManifest manifest = detail::make_manifest(cfg, backends);
  const std::filesystem::path out(cfg.out_dir);

  IngestOptions ingest_opt;
  ingest_opt.max_tokens = cfg.max_tokens;
  ingest_opt.dedup = cfg.dedup;
  ingest_opt.subset = cfg.subset;
  ingest_opt.language = cfg.language;
  IngestResult ingested = ingest_corpus_file(cfg.corpus_path, ingest_opt);
  manifest.stage("ingest") = ingested.counts;
  if (ingested.texts.empty()) throw DataError("corpus is empty after ingestion");
  std::vector<GoldItem> gold = read_gold_file(cfg.gold_path);
  if (gold.empty()) throw DataError("gold file has no rows");

  std::vector<std::string> questions;
  questions.reserve(gold.size());
  for (const auto& g : gold) questions.push_back(g.question);
  SimilarityMatrix sim = build_similarity_from_questions(questions, ingested.texts, gateway);

  // The primary k always produces records + reports; sweep values add rows to
  // ksweep.csv only.
  std::vector<int> ks{cfg.k};
  for (int extra : cfg.k_sweep)
    if (extra != cfg.k) ks.push_back(extra);
  std::string sweep_csv = "k,count,ref_acc,ans_acc,wrong_ref_right_ans\n";
  RunEvalOptions run_opt;
  run_opt.model = ChatModel{cfg.model_name, cfg.max_output_tokens};
  run_opt.judge_model = ChatModel{cfg.judge_model_name, cfg.max_output_tokens};
  for (std::size_t pass = 0; pass < ks.size(); ++pass) {
    const int k = ks[pass];
    StageCounts& select_stage =
        manifest.stage(pass == 0 ? "eval_select" : "eval_select_k" + std::to_string(k));
    std::vector<EvalItem> items;
    for (std::size_t q = 0; q < gold.size(); ++q) {
      ++select_stage.input;
      SelectContextsOptions sel;
      sel.budget_tokens = cfg.budget_tokens;
      sel.margin = cfg.margin;
      sel.k = k;
      sel.seed = cfg.seed;
      std::vector<double> row(sim.cols);
      for (std::size_t t = 0; t < sim.cols; ++t) row[t] = sim.at(q, t);
      try {
        items.push_back(select_contexts(gold[q], ingested.texts, row, sel));
        ++select_stage.kept;
      } catch (const DataError& e) {
        const std::string what = e.what();
        if (what.find("unresolved gold ref_id") != std::string::npos)
          select_stage.drop("gold_ref_missing");
        else if (what.find("gold_exceeds_budget") != std::string::npos)
          select_stage.drop("gold_exceeds_budget");
        else
          throw;
      }
    }
    if (items.empty()) throw DataError("no evaluable items (gold references missing from corpus?)");
    std::vector<EvalRecord> records = run_eval(items, ingested.texts, gateway, prompts,
                                               judge_gateway, run_opt,
                                               pass == 0 ? &manifest : nullptr);
    AggregateReport report = aggregate(records);
    if (pass == 0) {
      write_records_jsonl((out / "records.jsonl").string(), records);
      detail::write_text_file((out / "report.json").string(),
                              report_to_json(report).dump(2) + "\n");
      detail::write_text_file((out / "report.csv").string(), report_to_csv(report));
    }
    char line[160];
    std::snprintf(line, sizeof line, "%d,%ld,%.4f,%.4f,%.4f\n", k,
                  static_cast<long>(records.size()), report.overall.ref_acc,
                  report.overall.ans_acc, report.overall.wrong_ref_right_ans);
    sweep_csv += line;
  }
  if (!cfg.k_sweep.empty())
    detail::write_text_file((out / "ksweep.csv").string(), sweep_csv);

  manifest.chat_retries = gateway.total_retries() + judge_gateway.total_retries();
  manifest.embed_cache_hits = gateway.cache_hits();
  if (!manifest.reconciles()) throw DataError("manifest stage counts do not reconcile");
  detail::write_manifest((out / "manifest.json").string(), manifest, cfg);
  return 0;
}

// Regenerates report.json/report.csv from records.jsonl without touching any
// endpoint.
inline int cmd_report(const RunConfig& cfg) {
  detail::ensure_dir(cfg.out_dir);
  if (cfg.records_path.empty()) throw ConfigError("report: --records FILE is required");
  std::vector<EvalRecord> records = read_records_jsonl(cfg.records_path);
  if (records.empty()) throw DataError("empty_records");
  AggregateReport report = aggregate(records);
  ordered_json j = report_to_json(report);
  if (!cfg.baseline_records_path.empty()) {
    std::vector<EvalRecord> baseline = read_records_jsonl(cfg.baseline_records_path);
    if (baseline.empty()) throw DataError("empty_records");
    j["significance_vs_baseline"] = compare_runs_json(report, aggregate(baseline));
  }
  const std::filesystem::path out(cfg.out_dir);
  detail::write_text_file((out / "report.json").string(), j.dump(2) + "\n");
  detail::write_text_file((out / "report.csv").string(), report_to_csv(report));
  return 0;
}

}  // namespace aloftrag
