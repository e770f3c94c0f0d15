#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aloftrag/cli.hpp"

namespace {

using aloftrag::RunConfig;

void add_run_options(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_option("--seed", cfg.seed, "run seed");
  cmd->add_option("--parallelism", cfg.parallelism, "max in-flight endpoint requests");
  cmd->add_option("--mock", cfg.mock_fixture, "mock backend fixture file (JSON)");
  cmd->add_option("--prompt-dir", cfg.prompt_dir, "directory of prompt template overrides");
  cmd->add_option("--out-dir", cfg.out_dir, "output directory");
  cmd->add_option("--model", cfg.model_name, "chat model name");
  cmd->add_option("--embed-model", cfg.embed_model_name, "embedding model name");
  cmd->add_option("--max-output-tokens", cfg.max_output_tokens, "completion token cap");
}

void add_ingest_options(CLI::App* cmd, RunConfig& cfg, bool require_corpus) {
  auto* corpus = cmd->add_option("--corpus", cfg.corpus_path, "line-delimited JSON corpus");
  if (require_corpus) corpus->required();
  cmd->add_option("--subset", cfg.subset, "subset key, e.g. dataset/Language");
  cmd->add_option("--language", cfg.language, "English name of the subset language");
  cmd->add_option("--max-tokens", cfg.max_tokens, "drop texts above this token estimate (0 = off)");
  cmd->add_flag_callback("--no-dedup", [&cfg] { cfg.dedup = false; },
                         "keep exact-duplicate texts");
}

void add_stage_options(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_flag("--skip-step1", cfg.skip_step1, "skip text filtering");
  cmd->add_flag("--enable-step3", cfg.stage.step3_enabled, "enable QA filtering");
  cmd->add_option("--n-contexts", cfg.stage.n_contexts, "contexts per training example");
  cmd->add_option("--text-threshold", cfg.stage.text_threshold, "step 1 keep threshold (0-10)");
  cmd->add_option("--qa-threshold", cfg.stage.qa_threshold, "step 3 keep threshold (0-10)");
  cmd->add_flag("--negatives-include-filtered", cfg.negatives_include_filtered,
                "mine negatives from the unfiltered text pool");
}

void add_override_option(CLI::App* cmd, std::vector<std::string>& overrides) {
  cmd->add_option("--override", overrides, "trainer config override key=value")
      ->take_all();
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& item : overrides) {
    std::size_t eq = item.find('=');
    if (eq == std::string::npos)
      throw aloftrag::ConfigError("--override expects key=value, got: " + item);
    cfg.trainer_overrides[item.substr(0, eq)] = item.substr(eq + 1);
  }
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig cfg;
  try {
    // Precedence: config file < env < flags. The file is applied first, so it
    // has to be located before CLI11 runs.
    for (int i = 1; i < argc; ++i) {
      std::string arg = argv[i];
      if (arg == "--config" && i + 1 < argc) {
        aloftrag::apply_config_file(cfg, argv[i + 1]);
      } else if (arg.rfind("--config=", 0) == 0) {
        aloftrag::apply_config_file(cfg, arg.substr(9));
      }
    }
    aloftrag::apply_env(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  CLI::App app{"RAG fine-tuning data forge: synthesizes, filters and formats training data and "
               "evaluates chat models on gold QA sets"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (lowest precedence)");

  std::vector<std::string> overrides;

  CLI::App* ingest = app.add_subcommand("ingest", "preprocess a corpus into reference texts");
  add_ingest_options(ingest, cfg, true);
  add_run_options(ingest, cfg);

  CLI::App* generate = app.add_subcommand("generate", "run steps 1-4: filter, QA-generate, mine negatives");
  add_ingest_options(generate, cfg, true);
  add_stage_options(generate, cfg);
  add_run_options(generate, cfg);

  CLI::App* format = app.add_subcommand("format", "step 5: emit training JSONL and trainer config");
  format->add_option("--in", cfg.in_path, "negatives.jsonl from generate")->required();
  format->add_option("--texts", cfg.texts_path, "texts jsonl the ids resolve against")->required();
  format->add_option("--subset", cfg.subset, "subset key");
  format->add_option("--language", cfg.language, "English name of the subset language");
  add_override_option(format, overrides);
  add_run_options(format, cfg);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a chat model on gold QA data");
  eval->add_option("--gold", cfg.gold_path, "gold QA jsonl {id,question,answer,ref_id}")->required();
  add_ingest_options(eval, cfg, true);
  eval->add_option("--judge-model", cfg.judge_model_name, "judge model name");
  eval->add_option("--judge-url", cfg.judge_url, "judge chat endpoint (defaults to chat URL)");
  eval->add_option("--k", cfg.k, "retrieved contexts per question");
  eval->add_option("--budget", cfg.budget_tokens, "context token budget");
  eval->add_option("--margin", cfg.margin, "token margin reserved for question/answer");
  eval->add_option("--k-sweep", cfg.k_sweep, "additional context counts, e.g. 2,5,10")
      ->delimiter(',');
  add_run_options(eval, cfg);

  CLI::App* report = app.add_subcommand("report", "recompute reports from records.jsonl");
  report->add_option("--records", cfg.records_path, "records.jsonl from eval")->required();
  report->add_option("--baseline", cfg.baseline_records_path,
                     "baseline records.jsonl for paired significance tests");
  report->add_option("--out-dir", cfg.out_dir, "output directory");

  CLI::App* pipeline = app.add_subcommand("pipeline", "full run: ingest through training data");
  add_ingest_options(pipeline, cfg, true);
  add_stage_options(pipeline, cfg);
  add_override_option(pipeline, overrides);
  add_run_options(pipeline, cfg);

  CLI11_PARSE(app, argc, argv);

  try {
    apply_overrides(cfg, overrides);
    if (ingest->parsed()) return aloftrag::cmd_ingest(cfg);
    if (generate->parsed()) return aloftrag::cmd_generate(cfg);
    if (format->parsed()) return aloftrag::cmd_format(cfg);
    if (eval->parsed()) return aloftrag::cmd_eval(cfg);
    if (report->parsed()) return aloftrag::cmd_report(cfg);
    if (pipeline->parsed()) return aloftrag::cmd_pipeline(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
