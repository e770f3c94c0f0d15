#include "aloftrag/cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include "testutil.hpp"

using namespace aloftrag;
namespace fs = std::filesystem;

namespace {

RunConfig base_config(const fs::path& dir, const testutil::PipelineFixture& fx) {
  RunConfig cfg;
  cfg.corpus_path = testutil::write_lines(dir / "corpus.jsonl", fx.corpus_lines);
  cfg.mock_fixture = testutil::write_json(dir / "fixture.json", fx.fixture);
  cfg.subset = "demo/English";
  cfg.language = "English";
  cfg.out_dir = (dir / "out").string();
  cfg.seed = 11;
  cfg.parallelism = 2;
  return cfg;
}

}  // namespace

TEST(Pipeline, EndToEndArtifactsAndCounts) {
  auto dir = testutil::fresh_dir("aloftrag_cli_pipeline");
  auto fx = testutil::make_pipeline_fixture(30);
  RunConfig cfg = base_config(dir, fx);
  ASSERT_EQ(cmd_pipeline(cfg), 0);

  fs::path out(cfg.out_dir);
  for (const char* name : {"texts.ingested.jsonl", "texts.filtered.jsonl", "qas.jsonl",
                           "qas.filtered.jsonl", "negatives.jsonl", "train.jsonl", "trainer.yaml",
                           "audit.json", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(out / name)) << name;
  }

  json manifest = json::parse(testutil::read_file((out / "manifest.json").string()));
  const auto& stages = manifest["stages"];
  EXPECT_EQ(stages["ingest"]["input"], 30);
  EXPECT_EQ(stages["ingest"]["kept"], 30);
  EXPECT_EQ(stages["step1_text_filter"]["kept"].get<long>(), fx.expect_kept_texts);
  EXPECT_EQ(stages["step1_text_filter"]["dropped"]["dropped_threshold"].get<long>(),
            fx.expect_step1_threshold_drops);
  EXPECT_EQ(stages["step1_text_filter"]["dropped"]["dropped_parse"].get<long>(),
            fx.expect_step1_parse_drops);
  EXPECT_EQ(stages["step1_text_filter"]["dropped"]["dropped_endpoint"].get<long>(),
            fx.expect_step1_endpoint_drops);
  EXPECT_EQ(stages["step2_qa_generation"]["kept"].get<long>(), fx.expect_kept_qas);
  EXPECT_EQ(stages["step2_qa_generation"]["dropped"]["dropped_parse"].get<long>(),
            fx.expect_step2_parse_drops);
  // step 3 defaults off: pass-through
  EXPECT_EQ(stages["step3_qa_filter"]["input"], stages["step3_qa_filter"]["kept"]);
  // conservation into training data
  auto train_rows = read_jsonl_file((out / "train.jsonl").string());
  EXPECT_EQ(static_cast<long>(train_rows.size()), fx.expect_kept_qas);
  EXPECT_LE(train_rows.size(), 30u);

  json audit = json::parse(testutil::read_file((out / "audit.json").string()));
  EXPECT_EQ(audit["examples"], audit["ok"]);

  // every stage reconciles
  for (const auto& [name, stage] : stages.items()) {
    long dropped = 0;
    for (const auto& [_, v] : stage["dropped"].items()) dropped += v.get<long>();
    EXPECT_EQ(stage["input"].get<long>(), stage["kept"].get<long>() + dropped) << name;
  }
  fs::remove_all(dir);
}

TEST(Pipeline, SkipStep1MakesStageAPassThrough) {
  auto dir = testutil::fresh_dir("aloftrag_cli_skip1");
  auto fx = testutil::make_pipeline_fixture(15);
  RunConfig cfg = base_config(dir, fx);
  cfg.skip_step1 = true;
  ASSERT_EQ(cmd_pipeline(cfg), 0);
  json manifest = json::parse(testutil::read_file((fs::path(cfg.out_dir) / "manifest.json").string()));
  EXPECT_EQ(manifest["stages"]["step1_text_filter"]["input"],
            manifest["stages"]["step1_text_filter"]["kept"]);
  EXPECT_EQ(manifest["notes"]["skip_step1"], "true");
  fs::remove_all(dir);
}

TEST(Pipeline, TwoRunsGiveAByteIdenticalOutputDirectory) {
  auto dir = testutil::fresh_dir("aloftrag_cli_determinism");
  auto fx = testutil::make_pipeline_fixture(20);
  RunConfig cfg = base_config(dir, fx);
  ASSERT_EQ(cmd_pipeline(cfg), 0);
  fs::path out(cfg.out_dir);
  std::map<std::string, std::string> first_run;
  for (const auto& entry : fs::directory_iterator(out))
    first_run[entry.path().filename().string()] = testutil::read_file(entry.path().string());
  ASSERT_GE(first_run.size(), 9u);
  fs::remove_all(out);
  ASSERT_EQ(cmd_pipeline(cfg), 0);
  std::map<std::string, std::string> second_run;
  for (const auto& entry : fs::directory_iterator(out))
    second_run[entry.path().filename().string()] = testutil::read_file(entry.path().string());
  EXPECT_EQ(second_run, first_run);
  fs::remove_all(dir);
}

TEST(Pipeline, PromptDirOverrideReachesTrainingData) {
  auto dir = testutil::fresh_dir("aloftrag_cli_promptdir");
  auto fx = testutil::make_pipeline_fixture(12);
  RunConfig cfg = base_config(dir, fx);
  fs::create_directories(dir / "prompts");
  {
    std::ofstream out(dir / "prompts" / "rag_system.txt", std::ios::binary);
    out << "CUSTOM SYSTEM for {language_name}";
  }
  cfg.prompt_dir = (dir / "prompts").string();
  ASSERT_EQ(cmd_pipeline(cfg), 0);
  auto rows = read_jsonl_file((fs::path(cfg.out_dir) / "train.jsonl").string());
  ASSERT_FALSE(rows.empty());
  EXPECT_EQ(rows[0]["messages"][0]["content"], "CUSTOM SYSTEM for English");
  fs::remove_all(dir);
}

TEST(Pipeline, EnableStep3FiltersQasWithoutChangingFormats) {
  auto dir = testutil::fresh_dir("aloftrag_cli_step3");
  auto fx = testutil::make_pipeline_fixture(40, "English", /*with_step3=*/true);
  RunConfig cfg = base_config(dir, fx);
  cfg.stage.step3_enabled = true;
  ASSERT_EQ(cmd_pipeline(cfg), 0);
  fs::path out(cfg.out_dir);
  json manifest = json::parse(testutil::read_file((out / "manifest.json").string()));
  EXPECT_EQ(manifest["stages"]["step3_qa_filter"]["kept"].get<long>(),
            fx.expect_kept_qas_after_step3);
  EXPECT_EQ(manifest["stages"]["step3_qa_filter"]["dropped"]["dropped_threshold"].get<long>(),
            fx.expect_step3_threshold_drops);
  // kept rows now carry both ratings
  auto rows = read_jsonl_file((out / "qas.filtered.jsonl").string());
  ASSERT_FALSE(rows.empty());
  for (const auto& row : rows) {
    EXPECT_TRUE(row.contains("question_rating"));
    EXPECT_TRUE(row.contains("answer_rating"));
  }
  // the ablation changes the kept set, never the training format
  auto train_rows = read_jsonl_file((out / "train.jsonl").string());
  EXPECT_EQ(static_cast<long>(train_rows.size()), fx.expect_kept_qas_after_step3);
  for (const auto& row : train_rows) {
    ASSERT_EQ(row.at("messages").size(), 3u);
    EXPECT_EQ(row["messages"][2]["content"].get<std::string>().rfind("### Reference\n", 0), 0u);
  }
  fs::remove_all(dir);
}

TEST(Generate, StopsAfterNegatives) {
  auto dir = testutil::fresh_dir("aloftrag_cli_generate");
  auto fx = testutil::make_pipeline_fixture(15);
  RunConfig cfg = base_config(dir, fx);
  ASSERT_EQ(cmd_generate(cfg), 0);
  fs::path out(cfg.out_dir);
  EXPECT_TRUE(fs::exists(out / "negatives.jsonl"));
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
  EXPECT_FALSE(fs::exists(out / "train.jsonl"));
  EXPECT_FALSE(fs::exists(out / "trainer.yaml"));
  fs::remove_all(dir);
}

TEST(Format, ConsumesGenerateArtifacts) {
  auto dir = testutil::fresh_dir("aloftrag_cli_format");
  auto fx = testutil::make_pipeline_fixture(15);
  RunConfig cfg = base_config(dir, fx);
  ASSERT_EQ(cmd_generate(cfg), 0);
  fs::path gen_out(cfg.out_dir);

  RunConfig fmt = cfg;
  fmt.in_path = (gen_out / "negatives.jsonl").string();
  fmt.texts_path = (gen_out / "texts.filtered.jsonl").string();
  fmt.out_dir = (dir / "fmt").string();
  fmt.trainer_overrides["num_epochs"] = "2";
  ASSERT_EQ(cmd_format(fmt), 0);
  fs::path out(fmt.out_dir);
  EXPECT_TRUE(fs::exists(out / "train.jsonl"));
  std::string trainer = testutil::read_file((out / "trainer.yaml").string());
  EXPECT_NE(trainer.find("num_epochs: 2\n"), std::string::npos);
  json audit = json::parse(testutil::read_file((out / "audit.json").string()));
  EXPECT_EQ(audit["examples"], audit["ok"]);

  // the same seed reproduces the pipeline's training file exactly
  RunConfig full = cfg;
  full.out_dir = (dir / "full").string();
  ASSERT_EQ(cmd_pipeline(full), 0);
  EXPECT_EQ(testutil::read_file((out / "train.jsonl").string()),
            testutil::read_file((fs::path(full.out_dir) / "train.jsonl").string()));
  fs::remove_all(dir);
}

namespace {

std::vector<std::string> gold_lines(int n, int missing_ref = -1) {
  std::vector<std::string> lines;
  for (int i = 0; i < n; ++i) {
    ordered_json row;
    row["id"] = "g" + std::to_string(i);
    row["question"] = "Gold question " + std::to_string(i) + "?";
    row["answer"] = "Gold answer " + std::to_string(i) + ".";
    row["ref_id"] = (i == missing_ref) ? "no-such-text" : ("t" + std::to_string(i));
    lines.push_back(row.dump());
  }
  return lines;
}

}  // namespace

TEST(Eval, RecordsReportsAndMissingGoldRef) {
  auto dir = testutil::fresh_dir("aloftrag_cli_eval");
  auto fx = testutil::make_pipeline_fixture(12);
  RunConfig cfg = base_config(dir, fx);
  cfg.gold_path = testutil::write_lines(dir / "gold.jsonl", gold_lines(8, /*missing_ref=*/5));
  cfg.k = 5;
  ASSERT_EQ(cmd_eval(cfg), 0);
  fs::path out(cfg.out_dir);
  auto records = read_records_jsonl((out / "records.jsonl").string());
  EXPECT_EQ(records.size(), 7u);  // one gold row pointed at a missing text

  json manifest = json::parse(testutil::read_file((out / "manifest.json").string()));
  EXPECT_EQ(manifest["stages"]["eval_select"]["dropped"]["gold_ref_missing"], 1);

  json report = json::parse(testutil::read_file((out / "report.json").string()));
  EXPECT_TRUE(report["overall"].contains("wrong_ref_right_ans"));
  // the mock always cites ordinal 1 and the judge always says TRUE, so
  // wrong-ref-right-answer must equal the reference miss rate exactly
  double ref_acc = report["overall"]["ref_acc"].get<double>();
  double wrr = report["overall"]["wrong_ref_right_ans"].get<double>();
  EXPECT_NEAR(wrr, 100.0 - ref_acc, 1e-9);
  EXPECT_NEAR(report["overall"]["ans_acc"].get<double>(), 100.0, 1e-9);

  // report regeneration from records is pure and byte-identical
  std::string report1 = testutil::read_file((out / "report.json").string());
  RunConfig rep = cfg;
  rep.records_path = (out / "records.jsonl").string();
  rep.out_dir = (dir / "rep").string();
  ASSERT_EQ(cmd_report(rep), 0);
  EXPECT_EQ(testutil::read_file((fs::path(rep.out_dir) / "report.json").string()), report1);
  fs::remove_all(dir);
}

TEST(Eval, KSweepEmitsCsv) {
  auto dir = testutil::fresh_dir("aloftrag_cli_sweep");
  auto fx = testutil::make_pipeline_fixture(12);
  RunConfig cfg = base_config(dir, fx);
  cfg.gold_path = testutil::write_lines(dir / "gold.jsonl", gold_lines(5));
  cfg.k = 10;
  cfg.k_sweep = {2, 5, 10};
  ASSERT_EQ(cmd_eval(cfg), 0);
  std::string csv = testutil::read_file((fs::path(cfg.out_dir) / "ksweep.csv").string());
  EXPECT_NE(csv.find("k,count,ref_acc"), std::string::npos);
  // header + k=10 primary + k=2 + k=5 (10 deduplicated)
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  fs::remove_all(dir);
}

TEST(Report, EmptyRecordsIsAnError) {
  auto dir = testutil::fresh_dir("aloftrag_cli_report_empty");
  RunConfig cfg;
  cfg.records_path = testutil::write_lines(dir / "records.jsonl", {});
  cfg.out_dir = (dir / "out").string();
  EXPECT_THROW(cmd_report(cfg), DataError);
  fs::remove_all(dir);
}

TEST(Report, BaselineComparisonAddsSignificance) {
  auto dir = testutil::fresh_dir("aloftrag_cli_report_baseline");
  auto fx = testutil::make_pipeline_fixture(12);
  RunConfig cfg = base_config(dir, fx);
  cfg.gold_path = testutil::write_lines(dir / "gold.jsonl", gold_lines(6));
  ASSERT_EQ(cmd_eval(cfg), 0);
  RunConfig rep = cfg;
  rep.records_path = (fs::path(cfg.out_dir) / "records.jsonl").string();
  rep.baseline_records_path = rep.records_path;  // self-comparison: t = 0, p = 1
  rep.out_dir = (dir / "rep").string();
  ASSERT_EQ(cmd_report(rep), 0);
  json report = json::parse(testutil::read_file((fs::path(rep.out_dir) / "report.json").string()));
  ASSERT_TRUE(report.contains("significance_vs_baseline"));
  fs::remove_all(dir);
}

TEST(Pipeline, MultiSubsetConfigRunsInIsolation) {
  auto dir = testutil::fresh_dir("aloftrag_cli_multisubset");
  auto fx = testutil::make_pipeline_fixture(12);
  std::string corpus = testutil::write_lines(dir / "corpus.jsonl", fx.corpus_lines);
  std::string fixture = testutil::write_json(dir / "fixture.json", fx.fixture);
  RunConfig cfg;
  cfg.mock_fixture = fixture;
  cfg.out_dir = (dir / "out").string();
  cfg.seed = 4;
  cfg.subsets = {{"demo/English", "English", corpus}, {"demo/Other", "English", corpus}};
  ASSERT_EQ(cmd_pipeline(cfg), 0);
  for (const char* sub : {"demo_English", "demo_Other"}) {
    fs::path out = fs::path(cfg.out_dir) / sub;
    EXPECT_TRUE(fs::exists(out / "train.jsonl")) << sub;
    EXPECT_TRUE(fs::exists(out / "manifest.json")) << sub;
    json manifest = json::parse(testutil::read_file((out / "manifest.json").string()));
    EXPECT_EQ(manifest["stages"]["ingest"]["input"], 12);
  }
  // ingested ids carry the subset prefix only through the manifest config
  json m1 = json::parse(
      testutil::read_file((fs::path(cfg.out_dir) / "demo_English" / "manifest.json").string()));
  EXPECT_EQ(m1["config"]["subset"], "demo/English");
  fs::remove_all(dir);
}

TEST(Config, FileThenEnvThenFlagsPrecedence) {
  auto dir = testutil::fresh_dir("aloftrag_cli_config");
  json file_cfg;
  file_cfg["chat_url"] = "http://from-file:1/v1/chat/completions";
  file_cfg["embed_url"] = "http://from-file:1/v1/embeddings";
  file_cfg["seed"] = 7;
  std::string path = testutil::write_json(dir / "config.json", file_cfg);

  RunConfig cfg;
  apply_config_file(cfg, path);
  EXPECT_EQ(cfg.chat_url, "http://from-file:1/v1/chat/completions");
  EXPECT_EQ(cfg.seed, 7u);

  ::setenv("ALOFTRAG_CHAT_URL", "http://from-env:2/v1/chat/completions", 1);
  apply_env(cfg);
  ::unsetenv("ALOFTRAG_CHAT_URL");
  EXPECT_EQ(cfg.chat_url, "http://from-env:2/v1/chat/completions");
  EXPECT_EQ(cfg.embed_url, "http://from-file:1/v1/embeddings");  // env did not touch it

  // flags land last (the CLI binds directly onto the resolved struct)
  cfg.chat_url = "http://from-flag:3/v1/chat/completions";
  EXPECT_EQ(cfg.chat_url, "http://from-flag:3/v1/chat/completions");
  fs::remove_all(dir);
}

TEST(Config, MissingEndpointsWithoutMockIsFatal) {
  RunConfig cfg;
  EXPECT_THROW(make_backends(cfg), ConfigError);
}

TEST(Config, StageBoundsAreEnforced) {
  auto dir = testutil::fresh_dir("aloftrag_cli_bounds");
  auto fx = testutil::make_pipeline_fixture(6);
  RunConfig cfg = base_config(dir, fx);
  cfg.stage.n_contexts = 1;
  EXPECT_THROW(cmd_pipeline(cfg), ConfigError);
  cfg.stage.n_contexts = 10;
  cfg.stage.text_threshold = 11;
  EXPECT_THROW(cmd_pipeline(cfg), ConfigError);
  cfg.stage.text_threshold = 8;
  cfg.gold_path = testutil::write_lines(dir / "gold.jsonl", gold_lines(2));
  cfg.margin = 30000;  // larger than the budget
  EXPECT_THROW(cmd_eval(cfg), ConfigError);
  fs::remove_all(dir);
}

TEST(Config, ManifestEchoesResolvedConfig) {
  auto dir = testutil::fresh_dir("aloftrag_cli_manifest_echo");
  auto fx = testutil::make_pipeline_fixture(12);
  RunConfig cfg = base_config(dir, fx);
  cfg.stage.n_contexts = 4;
  ASSERT_EQ(cmd_pipeline(cfg), 0);
  json manifest = json::parse(testutil::read_file((fs::path(cfg.out_dir) / "manifest.json").string()));
  EXPECT_EQ(manifest["config"]["n_contexts"], 4);
  EXPECT_EQ(manifest["config"]["seed"], 11);
  EXPECT_EQ(manifest["config"]["subset"], "demo/English");
  EXPECT_EQ(manifest["n_contexts"], 4);
  fs::remove_all(dir);
}
