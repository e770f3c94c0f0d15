#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "aloftrag/core.hpp"
#include "aloftrag/parsers.hpp"
#include "aloftrag/prompts.hpp"

namespace aloftrag {

// ---------------------------------------------------------------------------
// Step 5: training example assembly
// ---------------------------------------------------------------------------

// Shuffles the positive into the negatives with a PRNG keyed by
// (run seed, ref_id), so adding or removing one example never reshuffles the
// others. correct_ordinal is the positive's 1-based post-shuffle position.
inline RagExample assemble_training_example(const GeneratedQA& qa,
                                            const std::vector<std::string>& negative_ids,
                                            const std::vector<ReferenceText>& texts,
                                            std::uint64_t run_seed) {
  auto by_id = index_by_id(texts);
  if (!by_id.count(qa.ref_id))
    throw DataError("assemble_training_example: unresolved ref_id " + qa.ref_id);
  for (const auto& id : negative_ids) {
    if (id == qa.ref_id)
      throw DataError("assemble_training_example: positive listed as negative: " + id);
    if (!by_id.count(id)) throw DataError("assemble_training_example: unresolved id " + id);
  }
  RagExample example;
  example.question = qa.question;
  example.answer = qa.answer;
  example.shuffle_seed = derive_seed(run_seed, qa.ref_id);
  example.contexts = negative_ids;
  example.contexts.push_back(qa.ref_id);
  SplitMix64 rng(example.shuffle_seed);
  deterministic_shuffle(example.contexts, rng);
  for (std::size_t i = 0; i < example.contexts.size(); ++i) {
    if (example.contexts[i] == qa.ref_id) {
      example.correct_ordinal = static_cast<int>(i) + 1;
      break;
    }
  }
  return example;
}

struct TrainingConversation {
  std::string system;
  std::string user;
  std::string assistant;
  std::string subset;
  std::uint64_t shuffle_seed = 0;
  int correct_ordinal = 0;
};

inline TrainingConversation render_conversation(const RagExample& example,
                                                const std::vector<ReferenceText>& texts,
                                                const PromptSet& prompts,
                                                const std::string& language,
                                                const std::string& subset) {
  auto by_id = index_by_id(texts);
  std::vector<std::string> bodies;
  bodies.reserve(example.contexts.size());
  for (const auto& id : example.contexts) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("render_conversation: unresolved id " + id);
    bodies.push_back(texts[it->second].body);
  }
  TrainingConversation conv;
  conv.system = prompts.render_system(TemplateId::rag_system, language);
  conv.user = build_rag_user_message(bodies, example.question);
  conv.assistant = build_assistant_target(example.correct_ordinal, example.answer);
  conv.subset = subset;
  conv.shuffle_seed = example.shuffle_seed;
  conv.correct_ordinal = example.correct_ordinal;
  return conv;
}

// One {"messages": [system, user, assistant]} object per line, input order.
inline std::size_t emit_training_jsonl(const std::vector<TrainingConversation>& conversations,
                                       const std::string& path) {
  if (conversations.empty()) throw DataError("emit_training_jsonl: no examples");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const auto& conv : conversations) {
    ordered_json row;
    row["messages"] = ordered_json::array({
        ordered_json{{"role", "system"}, {"content", conv.system}},
        ordered_json{{"role", "user"}, {"content", conv.user}},
        ordered_json{{"role", "assistant"}, {"content", conv.assistant}},
    });
    out << row.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
  return conversations.size();
}

// ---------------------------------------------------------------------------
// Trainer configuration
// ---------------------------------------------------------------------------

namespace detail {

enum class TrainerValueKind { integer, floating, boolean, text };

struct TrainerKey {
  const char* name;
  const char* default_value;
  TrainerValueKind kind;
};

inline const std::vector<TrainerKey>& trainer_keys() {
  static const std::vector<TrainerKey> keys = {
      {"sequence_len", "20000", TrainerValueKind::integer},
      {"sample_packing", "false", TrainerValueKind::boolean},
      {"eval_sample_packing", "false", TrainerValueKind::boolean},
      {"pad_to_sequence_len", "true", TrainerValueKind::boolean},
      {"adapter", "lora", TrainerValueKind::text},
      {"lora_r", "64", TrainerValueKind::integer},
      {"lora_alpha", "32", TrainerValueKind::integer},
      {"lora_dropout", "0.05", TrainerValueKind::floating},
      {"lora_target_linear", "true", TrainerValueKind::boolean},
      {"gradient_accumulation_steps", "1", TrainerValueKind::integer},
      {"micro_batch_size", "1", TrainerValueKind::integer},
      {"num_epochs", "1", TrainerValueKind::integer},
      {"optimizer", "adamw_torch", TrainerValueKind::text},
      {"lr_scheduler", "cosine", TrainerValueKind::text},
      {"learning_rate", "0.0002", TrainerValueKind::floating},
      {"train_on_inputs", "false", TrainerValueKind::boolean},
      {"group_by_length", "false", TrainerValueKind::boolean},
      {"bf16", "auto", TrainerValueKind::text},
      {"gradient_checkpointing", "true", TrainerValueKind::boolean},
      {"flash_attention", "true", TrainerValueKind::boolean},
      {"warmup_steps", "0", TrainerValueKind::integer},
      {"evals_per_epoch", "10", TrainerValueKind::integer},
      {"weight_decay", "0.0", TrainerValueKind::floating},
  };
  return keys;
}

// Plain decimal, no exponent. Overrides arrive as user text ("1e-4") and the
// emitted file must show "0.0001".
inline std::string format_decimal(double v) {
  const int len = std::snprintf(nullptr, 0, "%.17f", v);
  std::string s(static_cast<std::size_t>(len), '\0');
  std::snprintf(s.data(), s.size() + 1, "%.17f", v);
  s.erase(s.find_last_not_of('0') + 1);
  if (!s.empty() && s.back() == '.') s.push_back('0');
  return s;
}

inline std::string canonical_trainer_value(const TrainerKey& key, const std::string& raw) {
  switch (key.kind) {
    case TrainerValueKind::integer: {
      std::size_t consumed = 0;
      long long v = 0;
      try {
        v = std::stoll(raw, &consumed);
      } catch (const std::exception&) {
        throw ConfigError(std::string("trainer override ") + key.name + ": not an integer: " + raw);
      }
      if (consumed != raw.size())
        throw ConfigError(std::string("trainer override ") + key.name + ": not an integer: " + raw);
      return std::to_string(v);
    }
    case TrainerValueKind::floating: {
      std::size_t consumed = 0;
      double v = 0.0;
      try {
        v = std::stod(raw, &consumed);
      } catch (const std::exception&) {
        throw ConfigError(std::string("trainer override ") + key.name + ": not a number: " + raw);
      }
      if (consumed != raw.size())
        throw ConfigError(std::string("trainer override ") + key.name + ": not a number: " + raw);
      return format_decimal(v);
    }
    case TrainerValueKind::boolean: {
      std::string t = trim(raw);
      for (char& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      if (t == "true" || t == "false") return t;
      throw ConfigError(std::string("trainer override ") + key.name + ": expected true/false: " + raw);
    }
    case TrainerValueKind::text:
      return raw;
  }
  throw ConfigError("unreachable");
}

}  // namespace detail

inline std::string render_trainer_config(const std::map<std::string, std::string>& overrides = {}) {
  const auto& keys = detail::trainer_keys();
  for (const auto& [name, _] : overrides) {
    bool known = false;
    for (const auto& key : keys)
      if (name == key.name) known = true;
    if (!known) {
      std::string valid;
      for (const auto& key : keys) {
        if (!valid.empty()) valid += ", ";
        valid += key.name;
      }
      throw ConfigError("unknown trainer config key '" + name + "'; valid keys: " + valid);
    }
  }
  std::string out;
  for (const auto& key : keys) {
    auto it = overrides.find(key.name);
    const std::string value =
        it == overrides.end() ? key.default_value : detail::canonical_trainer_value(key, it->second);
    out += key.name;
    out += ": ";
    out += value;
    out += '\n';
  }
  return out;
}

inline void emit_trainer_config(const std::string& path,
                                const std::map<std::string, std::string>& overrides = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << render_trainer_config(overrides);
  if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Post-emission audit
// ---------------------------------------------------------------------------

struct AuditReport {
  long examples = 0;
  long ok = 0;
  std::vector<std::string> failures;

  bool all_ok() const { return examples == ok; }

  ordered_json to_json() const {
    ordered_json j;
    j["examples"] = examples;
    j["ok"] = ok;
    j["failures"] = failures;
    return j;
  }
};

// Re-parses every emitted assistant target and checks it cites exactly the
// positive context at the recorded ordinal.
inline AuditReport audit_examples(const std::vector<RagExample>& examples,
                                  const std::vector<TrainingConversation>& conversations,
                                  const std::vector<std::string>& positive_ids) {
  if (examples.size() != conversations.size() || examples.size() != positive_ids.size())
    throw DataError("audit_examples: mismatched inputs");
  AuditReport report;
  report.examples = static_cast<long>(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    RagResponse parsed = parse_rag_response(conversations[i].assistant);
    const RagExample& ex = examples[i];
    std::string problem;
    if (parsed.ordinals.size() != 1) {
      problem = "expected exactly one ordinal";
    } else if (parsed.ordinals[0] != ex.correct_ordinal) {
      problem = "ordinal mismatch";
    } else if (ex.correct_ordinal < 1 ||
               ex.correct_ordinal > static_cast<int>(ex.contexts.size())) {
      problem = "ordinal out of range";
    } else if (ex.contexts[static_cast<std::size_t>(ex.correct_ordinal) - 1] != positive_ids[i]) {
      problem = "positive not at cited ordinal";
    } else if (parsed.answer != ex.answer) {
      problem = "answer mismatch";
    }
    if (problem.empty()) {
      ++report.ok;
    } else {
      report.failures.push_back("example " + std::to_string(i) + ": " + problem);
    }
  }
  return report;
}

}  // namespace aloftrag
