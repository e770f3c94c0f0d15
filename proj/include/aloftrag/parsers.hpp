#pragma once

#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aloftrag/core.hpp"

namespace aloftrag {

// The three rating headers the prompts mandate.
inline constexpr std::string_view kFilterScoreHeader = "### Filter score";
inline constexpr std::string_view kQuestionRatingHeader = "### Question rating score";
inline constexpr std::string_view kAnswerRatingHeader = "### Answer rating score";

inline constexpr std::string_view kQuestionHeader = "### Question";
inline constexpr std::string_view kAnswerHeader = "### Answer";
inline constexpr std::string_view kReferenceHeader = "### Reference";

enum class ParseFailure {
  missing_header,
  no_integer,
  out_of_range,
  missing_section,
};

inline const char* parse_failure_name(ParseFailure f) {
  switch (f) {
    case ParseFailure::missing_header: return "missing_header";
    case ParseFailure::no_integer: return "no_integer";
    case ParseFailure::out_of_range: return "out_of_range";
    case ParseFailure::missing_section: return "missing_section";
  }
  return "unknown";
}

// Exactly one of value / failure is set.
template <typename T>
struct ParseOutcome {
  std::optional<T> value;
  std::optional<ParseFailure> failure;

  bool ok() const { return value.has_value(); }

  static ParseOutcome success(T v) {
    ParseOutcome o;
    o.value = std::move(v);
    return o;
  }
  static ParseOutcome fail(ParseFailure f) {
    ParseOutcome o;
    o.failure = f;
    return o;
  }
};

namespace detail {

inline std::size_t find_ci(std::string_view haystack, std::string_view needle, std::size_t from = 0) {
  if (needle.empty() || haystack.size() < needle.size()) return std::string_view::npos;
  auto lower = [](char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); };
  for (std::size_t i = from; i + needle.size() <= haystack.size(); ++i) {
    std::size_t j = 0;
    while (j < needle.size() && lower(haystack[i + j]) == lower(needle[j])) ++j;
    if (j == needle.size()) return i;
  }
  return std::string_view::npos;
}

// First integer token at or after `from`; a '-' immediately before the digits
// is part of the token so negative scores are rejected as out-of-range rather
// than silently truncated.
inline std::optional<long> first_integer(std::string_view text, std::size_t from) {
  for (std::size_t i = from; i < text.size(); ++i) {
    if (std::isdigit(static_cast<unsigned char>(text[i]))) {
      bool negative = i > from && text[i - 1] == '-';
      long value = 0;
      bool overflow = false;
      std::size_t j = i;
      while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) {
        if (value > 100000000L) overflow = true;  // clamp; only 0..10 is valid anyway
        if (!overflow) value = value * 10 + (text[j] - '0');
        ++j;
      }
      if (overflow) value = 100000000L;
      return negative ? -value : value;
    }
  }
  return std::nullopt;
}

}  // namespace detail

// Header-anchored rating scan: first case-insensitive occurrence of `header`,
// then the first integer after it. Accepts 0..10 inclusive.
inline ParseOutcome<int> parse_rating(std::string_view text, std::string_view header) {
  std::size_t at = detail::find_ci(text, header);
  if (at == std::string_view::npos) return ParseOutcome<int>::fail(ParseFailure::missing_header);
  auto value = detail::first_integer(text, at + header.size());
  if (!value) return ParseOutcome<int>::fail(ParseFailure::no_integer);
  if (*value < 0 || *value > 10) return ParseOutcome<int>::fail(ParseFailure::out_of_range);
  return ParseOutcome<int>::success(static_cast<int>(*value));
}

struct QaPair {
  std::string question;
  std::string answer;
};

// Question between "### Question" and "### Answer", answer after
// "### Answer"; headers must appear in that order and both parts must be
// non-empty.
inline ParseOutcome<QaPair> parse_qa(std::string_view text) {
  std::size_t q_at = detail::find_ci(text, kQuestionHeader);
  if (q_at == std::string_view::npos) return ParseOutcome<QaPair>::fail(ParseFailure::missing_section);
  std::size_t q_begin = q_at + kQuestionHeader.size();
  std::size_t a_at = detail::find_ci(text, kAnswerHeader, q_begin);
  if (a_at == std::string_view::npos) return ParseOutcome<QaPair>::fail(ParseFailure::missing_section);
  QaPair qa;
  qa.question = trim(text.substr(q_begin, a_at - q_begin));
  qa.answer = trim(text.substr(a_at + kAnswerHeader.size()));
  if (qa.question.empty() || qa.answer.empty())
    return ParseOutcome<QaPair>::fail(ParseFailure::missing_section);
  return ParseOutcome<QaPair>::success(std::move(qa));
}

struct RagResponse {
  std::vector<int> ordinals;
  std::string answer;
};

// Never fails: a headerless reply degrades to no ordinals with the whole text
// as the answer, which downstream scores as a reference miss.
inline RagResponse parse_rag_response(std::string_view text) {
  RagResponse out;
  std::size_t ref_at = detail::find_ci(text, kReferenceHeader);
  if (ref_at == std::string_view::npos) {
    out.answer = trim(text);
    return out;
  }
  std::size_t ids_begin = ref_at + kReferenceHeader.size();
  std::size_t ans_at = detail::find_ci(text, kAnswerHeader, ids_begin);
  std::string_view ids_section =
      ans_at == std::string_view::npos ? text.substr(ids_begin) : text.substr(ids_begin, ans_at - ids_begin);
  // Comma/whitespace-separated scan; only bare integer tokens count.
  std::size_t i = 0;
  while (i < ids_section.size()) {
    if (std::isdigit(static_cast<unsigned char>(ids_section[i]))) {
      long value = 0;
      while (i < ids_section.size() && std::isdigit(static_cast<unsigned char>(ids_section[i]))) {
        if (value < 100000000L) value = value * 10 + (ids_section[i] - '0');
        ++i;
      }
      out.ordinals.push_back(static_cast<int>(value));
    } else {
      ++i;
    }
  }
  if (ans_at != std::string_view::npos) out.answer = trim(text.substr(ans_at + kAnswerHeader.size()));
  return out;
}

struct JudgeVerdict {
  bool correct = false;
  // False when the reply was neither TRUE nor FALSE; such replies score as
  // incorrect and are tallied as judge_nonconforming in the manifest.
  bool conforming = false;
};

inline JudgeVerdict parse_judge(std::string_view text) {
  std::string t = trim(text);
  for (char& c : t) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (t == "TRUE") return {true, true};
  if (t == "FALSE") return {false, true};
  return {false, false};
}

}  // namespace aloftrag
