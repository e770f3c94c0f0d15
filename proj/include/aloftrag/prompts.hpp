#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "aloftrag/core.hpp"

namespace aloftrag {

enum class TemplateId {
  text_rating,
  qa_gen,
  q_rating,
  a_rating,
  rag_system,
  answer_check,
};

inline const char* template_name(TemplateId id) {
  switch (id) {
    case TemplateId::text_rating: return "text_rating";
    case TemplateId::qa_gen: return "qa_gen";
    case TemplateId::q_rating: return "q_rating";
    case TemplateId::a_rating: return "a_rating";
    case TemplateId::rag_system: return "rag_system";
    case TemplateId::answer_check: return "answer_check";
  }
  throw ConfigError("unknown template id");
}

namespace detail {

// The six system-message templates. These are frozen wire text: golden tests
// compare them byte-for-byte against tests/golden/, so any edit here is a
// format change, not a wording tweak.
inline constexpr std::string_view kTextRating =
    "You are a text filtering AI model.\n"
    "Your input is a piece of text.\n"
    "You output is a score of how much useful information is included within the text.\n"
    "\n"
    "Output your score on a scale of 0-10, with 0 meaning that the text contains no useful information and 10 meaning that the text contains a large amount of useful information.\n"
    "\n"
    "Your output should be formatted like so:\n"
    "\n"
    "### Filter score\n"
    "[YOUR SCORE]";

inline constexpr std::string_view kQaGen =
    "You are a QA generating AI model.\n"
    "Your input is a piece of text.\n"
    "You output a question that can be answered solely by reading the text and the correct answer to that question.\n"
    "\n"
    "Write the prompt so it does not refer to any knowledge that is assumed from the article.\n"
    "Write the prompt so that it could be given without ever having read the passage.\n"
    "Do not refer to the text directly (e.g. \"According to the text\", \"Based on this passage\").\n"
    "\n"
    "If a short answer will suffice, then write a short answer.\n"
    "Only write a long answer if required.\n"
    "\n"
    "Your question and answer must be in fluent, natural {language_name}.\n"
    "\n"
    "Your output should be formatted like so:\n"
    "\n"
    "### Question\n"
    "[YOUR QUESTION]\n"
    "\n"
    "### Answer\n"
    "[YOUR ANSWER]";

inline constexpr std::string_view kQRating =
    "You are a question and answer rating AI model.\n"
    "Your input is a piece of reference text and a question.\n"
    "You output is a score of whether the question is naturally written in {language_name} and whether it is answerable solely based on the reference text.\n"
    "\n"
    "Output your score on a scale of 0-10.\n"
    "A score of 0 should be given if the question is completely unanswerable based on the reference text or if the question is not written in fluent, natural {language_name}.\n"
    "A score of 10 should be given if the question is fully answerable solely based on the refence text and the question is written in fluent, natural {language_name}.\n"
    "\n"
    "Your output should be formatted like so:\n"
    "\n"
    "### Question rating score\n"
    "[YOUR SCORE]";

inline constexpr std::string_view kARating =
    "You are an answer rating AI model.\n"
    "Your input is a piece of reference text, a question, and an answer.\n"
    "You output is a score of how correct the answer is given the question and text.\n"
    "\n"
    "Output your score on a scale of 0-10.\n"
    "A score of 0 should be given if the answer is completely wrong based on the reference text or if the answer is not written in fluent, natural {language_name}.\n"
    "A score of 10 should be given if the answer is completely correct based on the text and the answer is written in fluent, natural {language_name}.\n"
    "\n"
    "Your output should be formatted like so:\n"
    "\n"
    "### Answer rating score\n"
    "[YOUR SCORE]";

inline constexpr std::string_view kRagSystem =
    "You are an retrival augmented generation (RAG) AI model.\n"
    "Your input is a set of numbered documents and a question.\n"
    "You output the id of the document(s) that best answer the question and then answer the question itself.\n"
    "\n"
    "Your answer must be in fluent, natural {language_name}.\n"
    "\n"
    "Your output should be formatted like so:\n"
    "\n"
    "### Reference\n"
    "[COMMA SEPARATED LIST OF RELEVANT DOCUMENT IDS]\n"
    "\n"
    "### Answer\n"
    "[YOUR ANSWER]";

inline constexpr std::string_view kAnswerCheck =
    "You are a answer checking AI.\n"
    "Given a context passage, a question, a correct reference answer, and a generated answer as inputs, determine whether the generated answer is correct based on the context given.\n"
    "\n"
    "If the answer is not correct, output only FALSE.\n"
    "If the answer is correct, output only TRUE.";

}  // namespace detail

inline std::string_view builtin_template(TemplateId id) {
  switch (id) {
    case TemplateId::text_rating: return detail::kTextRating;
    case TemplateId::qa_gen: return detail::kQaGen;
    case TemplateId::q_rating: return detail::kQRating;
    case TemplateId::a_rating: return detail::kARating;
    case TemplateId::rag_system: return detail::kRagSystem;
    case TemplateId::answer_check: return detail::kAnswerCheck;
  }
  throw ConfigError("unknown template id");
}

inline constexpr std::string_view kLanguagePlaceholder = "{language_name}";

// Holds the active template bodies. Defaults to the built-ins; any template
// can be overridden from a directory of <template_name>.txt files.
class PromptSet {
 public:
  PromptSet() {
    for (TemplateId id : all_ids()) bodies_[id] = std::string(builtin_template(id));
  }

  static std::vector<TemplateId> all_ids() {
    return {TemplateId::text_rating, TemplateId::qa_gen,   TemplateId::q_rating,
            TemplateId::a_rating,    TemplateId::rag_system, TemplateId::answer_check};
  }

  const std::string& body(TemplateId id) const {
    auto it = bodies_.find(id);
    if (it == bodies_.end()) throw ConfigError("unknown template id");
    return it->second;
  }

  void override_body(TemplateId id, std::string body) { bodies_[id] = std::move(body); }

  // Loads <dir>/<template_name>.txt for each template present in the
  // directory; missing files keep the built-in body.
  void load_overrides(const std::string& dir) {
    for (TemplateId id : all_ids()) {
      std::filesystem::path path = std::filesystem::path(dir) / (std::string(template_name(id)) + ".txt");
      if (!std::filesystem::exists(path)) continue;
      std::ifstream in(path, std::ios::binary);
      if (!in) throw IoError("cannot read prompt override: " + path.string());
      std::ostringstream buf;
      buf << in.rdbuf();
      bodies_[id] = buf.str();
    }
  }

  // Substitutes every "{language_name}" occurrence; no other text changes.
  std::string render_system(TemplateId id, const std::string& language_name) const {
    const std::string& raw = body(id);
    std::string out;
    out.reserve(raw.size());
    std::size_t pos = 0;
    while (true) {
      std::size_t hit = raw.find(kLanguagePlaceholder, pos);
      if (hit == std::string::npos) {
        out.append(raw, pos, std::string::npos);
        break;
      }
      out.append(raw, pos, hit - pos);
      out.append(language_name);
      pos = hit + kLanguagePlaceholder.size();
    }
    return out;
  }

 private:
  std::map<TemplateId, std::string> bodies_;
};

// ---------------------------------------------------------------------------
// Message builders
// ---------------------------------------------------------------------------

// Enumerated context list, one blank line between entries, question last:
//   1. <text>
//
//   2. <text>
//
//   <question>
inline std::string build_rag_user_message(const std::vector<std::string>& contexts,
                                          const std::string& question) {
  if (contexts.empty()) throw DataError("no_contexts");
  std::string out;
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    out += std::to_string(i + 1);
    out += ". ";
    out += contexts[i];
    out += "\n\n";
  }
  out += question;
  return out;
}

inline std::string build_assistant_target(int ordinal, const std::string& answer) {
  if (ordinal < 1) throw DataError("ordinal must be >= 1");
  return "### Reference\n" + std::to_string(ordinal) + "\n\n### Answer\n" + answer;
}

// User message for the text-rating call: the text itself.
inline std::string build_text_rating_user(const std::string& text) { return text; }

// Reference text + question for the question-rating call.
inline std::string build_q_rating_user(const std::string& text, const std::string& question) {
  return text + "\n\n" + question;
}

// Reference text + question + answer for the answer-rating call.
inline std::string build_a_rating_user(const std::string& text, const std::string& question,
                                       const std::string& answer) {
  return text + "\n\n" + question + "\n\n" + answer;
}

// Labeled sections keep the four judge inputs unambiguous.
inline std::string build_judge_user_message(const std::string& context, const std::string& question,
                                            const std::string& reference_answer,
                                            const std::string& generated_answer) {
  return "### Context\n" + context + "\n\n### Question\n" + question +
         "\n\n### Reference answer\n" + reference_answer + "\n\n### Generated answer\n" +
         generated_answer;
}

}  // namespace aloftrag
