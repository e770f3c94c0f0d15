#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "aloftrag/core.hpp"
#include "aloftrag/gateway.hpp"
#include "aloftrag/parsers.hpp"
#include "aloftrag/prompts.hpp"

namespace aloftrag {

struct StageConfig {
  int text_threshold = 8;
  int qa_threshold = 8;
  bool step3_enabled = false;  // detrimental in most cases, so off by default
  int n_contexts = 10;

  void validate() const {
    if (text_threshold < 0 || text_threshold > 10)
      throw ConfigError("text threshold must be in 0..10");
    if (qa_threshold < 0 || qa_threshold > 10)
      throw ConfigError("qa threshold must be in 0..10");
    if (n_contexts < 2) throw ConfigError("n_contexts must be at least 2");
  }
};

struct ChatModel {
  std::string name;
  int max_output_tokens = 1024;
};

inline ChatRequest make_generation_request(const ChatModel& model, std::string system,
                                           std::string user) {
  ChatRequest req;
  req.system = std::move(system);
  req.user = std::move(user);
  req.temperature = 0.0;  // all generation calls run at temperature zero
  req.max_output_tokens = model.max_output_tokens;
  req.model_name = model.name;
  return req;
}

// Question x text cosine similarities (vectors are unit-normalized, so the
// raw dot product is the cosine).
struct SimilarityMatrix {
  std::size_t rows = 0;  // questions
  std::size_t cols = 0;  // texts
  std::vector<double> data;

  double at(std::size_t question, std::size_t text) const { return data[question * cols + text]; }
  double& at(std::size_t question, std::size_t text) { return data[question * cols + text]; }
};

// ---------------------------------------------------------------------------
// Step 1: text filtering
// ---------------------------------------------------------------------------

struct FilterTextsResult {
  std::vector<ReferenceText> kept;
  std::map<std::string, int> ratings;  // id -> parsed rating, kept texts only
  StageCounts counts;
  std::vector<DropRecord> drops;
};

inline FilterTextsResult filter_texts(const std::vector<ReferenceText>& texts,
                                      const StageConfig& cfg, Gateway& gateway,
                                      const PromptSet& prompts, const ChatModel& model) {
  FilterTextsResult result;
  result.counts.input = static_cast<long>(texts.size());
  std::vector<ChatRequest> requests;
  requests.reserve(texts.size());
  for (const auto& text : texts) {
    requests.push_back(make_generation_request(
        model, prompts.render_system(TemplateId::text_rating, text.language),
        build_text_rating_user(text.body)));
  }
  std::vector<ChatOutcome> outcomes = gateway.chat_batch(requests);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (!outcomes[i].ok()) {
      result.counts.drop("dropped_endpoint");
      result.drops.push_back({i + 1, texts[i].id, "endpoint: " + outcomes[i].error});
      continue;
    }
    ParseOutcome<int> rating = parse_rating(outcomes[i].text, kFilterScoreHeader);
    if (!rating.ok()) {
      result.counts.drop("dropped_parse");
      result.drops.push_back({i + 1, texts[i].id, parse_failure_name(*rating.failure)});
      continue;
    }
    if (*rating.value < cfg.text_threshold) {
      result.counts.drop("dropped_threshold");
      result.drops.push_back({i + 1, texts[i].id, "rating " + std::to_string(*rating.value)});
      continue;
    }
    result.ratings[texts[i].id] = *rating.value;
    result.kept.push_back(texts[i]);
    ++result.counts.kept;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Step 2: QA generation
// ---------------------------------------------------------------------------

struct GenerateQasResult {
  std::vector<GeneratedQA> qas;
  StageCounts counts;
  std::vector<DropRecord> drops;
};

// Exactly one QA attempted per text; item-level failures never abort the run.
inline GenerateQasResult generate_qas(const std::vector<ReferenceText>& texts, Gateway& gateway,
                                      const PromptSet& prompts, const ChatModel& model,
                                      const std::map<std::string, int>* text_ratings = nullptr) {
  GenerateQasResult result;
  result.counts.input = static_cast<long>(texts.size());
  std::vector<ChatRequest> requests;
  requests.reserve(texts.size());
  for (const auto& text : texts) {
    requests.push_back(
        make_generation_request(model, prompts.render_system(TemplateId::qa_gen, text.language),
                                text.body));
  }
  std::vector<ChatOutcome> outcomes = gateway.chat_batch(requests);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (!outcomes[i].ok()) {
      result.counts.drop("dropped_endpoint");
      result.drops.push_back({i + 1, texts[i].id, "endpoint: " + outcomes[i].error});
      continue;
    }
    ParseOutcome<QaPair> qa = parse_qa(outcomes[i].text);
    if (!qa.ok()) {
      result.counts.drop("dropped_parse");
      result.drops.push_back({i + 1, texts[i].id, parse_failure_name(*qa.failure)});
      continue;
    }
    GeneratedQA item;
    item.ref_id = texts[i].id;
    item.question = qa.value->question;
    item.answer = qa.value->answer;
    if (text_ratings) {
      auto it = text_ratings->find(texts[i].id);
      if (it != text_ratings->end()) item.text_rating = it->second;
    }
    result.qas.push_back(std::move(item));
    ++result.counts.kept;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Step 3: QA filtering (optional)
// ---------------------------------------------------------------------------

struct FilterQasResult {
  std::vector<GeneratedQA> kept;
  StageCounts counts;
  std::vector<DropRecord> drops;
};

// Question and answer are rated independently; an item survives only when
// both parsed ratings reach the threshold. With step3_enabled=false this is a
// pass-through that leaves the ratings unset.
inline FilterQasResult filter_qas(const std::vector<GeneratedQA>& qas,
                                  const std::vector<ReferenceText>& texts, const StageConfig& cfg,
                                  Gateway& gateway, const PromptSet& prompts,
                                  const ChatModel& model) {
  FilterQasResult result;
  result.counts.input = static_cast<long>(qas.size());
  if (!cfg.step3_enabled) {
    result.kept = qas;
    result.counts.kept = static_cast<long>(qas.size());
    return result;
  }
  auto by_id = index_by_id(texts);
  std::vector<ChatRequest> q_requests;
  std::vector<ChatRequest> a_requests;
  q_requests.reserve(qas.size());
  a_requests.reserve(qas.size());
  for (const auto& qa : qas) {
    auto it = by_id.find(qa.ref_id);
    if (it == by_id.end()) throw DataError("filter_qas: unresolved ref_id " + qa.ref_id);
    const ReferenceText& text = texts[it->second];
    q_requests.push_back(
        make_generation_request(model, prompts.render_system(TemplateId::q_rating, text.language),
                                build_q_rating_user(text.body, qa.question)));
    a_requests.push_back(
        make_generation_request(model, prompts.render_system(TemplateId::a_rating, text.language),
                                build_a_rating_user(text.body, qa.question, qa.answer)));
  }
  std::vector<ChatOutcome> q_outcomes = gateway.chat_batch(q_requests);
  std::vector<ChatOutcome> a_outcomes = gateway.chat_batch(a_requests);
  for (std::size_t i = 0; i < qas.size(); ++i) {
    if (!q_outcomes[i].ok() || !a_outcomes[i].ok()) {
      result.counts.drop("dropped_endpoint");
      result.drops.push_back({i + 1, qas[i].ref_id, "endpoint"});
      continue;
    }
    ParseOutcome<int> q_rating = parse_rating(q_outcomes[i].text, kQuestionRatingHeader);
    ParseOutcome<int> a_rating = parse_rating(a_outcomes[i].text, kAnswerRatingHeader);
    if (!q_rating.ok() || !a_rating.ok()) {
      result.counts.drop("dropped_parse");
      result.drops.push_back(
          {i + 1, qas[i].ref_id,
           !q_rating.ok() ? parse_failure_name(*q_rating.failure) : parse_failure_name(*a_rating.failure)});
      continue;
    }
    if (*q_rating.value < cfg.qa_threshold || *a_rating.value < cfg.qa_threshold) {
      result.counts.drop("dropped_threshold");
      result.drops.push_back({i + 1, qas[i].ref_id,
                              "q " + std::to_string(*q_rating.value) + " a " +
                                  std::to_string(*a_rating.value)});
      continue;
    }
    GeneratedQA kept = qas[i];
    kept.question_rating = *q_rating.value;
    kept.answer_rating = *a_rating.value;
    result.kept.push_back(std::move(kept));
    ++result.counts.kept;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Step 4: hard-negative mining
// ---------------------------------------------------------------------------

inline SimilarityMatrix build_similarity_from_questions(const std::vector<std::string>& questions,
                                                        const std::vector<ReferenceText>& texts,
                                                        Gateway& gateway) {
  if (questions.empty() || texts.empty())
    throw DataError("build_similarity: questions and texts must be non-empty");
  std::vector<std::string> text_inputs;
  text_inputs.reserve(texts.size());
  for (const auto& text : texts) text_inputs.push_back(text.body);

  std::vector<EmbeddingVector> question_vecs = gateway.embed_batch(questions);
  std::vector<EmbeddingVector> text_vecs = gateway.embed_batch(text_inputs);

  SimilarityMatrix sim;
  sim.rows = questions.size();
  sim.cols = texts.size();
  sim.data.assign(sim.rows * sim.cols, 0.0);
  for (std::size_t q = 0; q < sim.rows; ++q)
    for (std::size_t t = 0; t < sim.cols; ++t)
      sim.at(q, t) = question_vecs[q].dot(text_vecs[t]);
  return sim;
}

inline SimilarityMatrix build_similarity(const std::vector<GeneratedQA>& questions,
                                         const std::vector<ReferenceText>& texts,
                                         Gateway& gateway) {
  std::vector<std::string> question_inputs;
  question_inputs.reserve(questions.size());
  for (const auto& qa : questions) question_inputs.push_back(qa.question);
  return build_similarity_from_questions(question_inputs, texts, gateway);
}

// Ranks every text by similarity to the question, removes the positive and
// any exact duplicate of its body, and keeps the top min(n_contexts - 1,
// pool) ids. Ties break toward the lower original text index.
inline std::vector<std::string> mine_hard_negatives(const GeneratedQA& qa,
                                                    std::size_t question_row,
                                                    const SimilarityMatrix& sim,
                                                    const std::vector<ReferenceText>& texts,
                                                    const StageConfig& cfg) {
  auto by_id = index_by_id(texts);
  auto positive_it = by_id.find(qa.ref_id);
  if (positive_it == by_id.end())
    throw DataError("mine_hard_negatives: unresolved ref_id " + qa.ref_id);
  const std::size_t positive = positive_it->second;

  std::vector<std::size_t> pool;
  pool.reserve(texts.size());
  for (std::size_t t = 0; t < texts.size(); ++t) {
    if (t == positive) continue;
    if (texts[t].body == texts[positive].body) continue;  // duplicate positives are label noise
    pool.push_back(t);
  }
  if (pool.empty()) throw DataError("insufficient_corpus");

  std::sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b) {
    const double sa = sim.at(question_row, a);
    const double sb = sim.at(question_row, b);
    if (sa != sb) return sa > sb;
    return a < b;
  });
  const std::size_t take = std::min<std::size_t>(pool.size(),
                                                 static_cast<std::size_t>(std::max(0, cfg.n_contexts - 1)));
  std::vector<std::string> negatives;
  negatives.reserve(take);
  for (std::size_t i = 0; i < take; ++i) negatives.push_back(texts[pool[i]].id);
  return negatives;
}

}  // namespace aloftrag
