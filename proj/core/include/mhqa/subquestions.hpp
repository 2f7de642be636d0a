#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "mhqa/error.hpp"
#include "mhqa/text.hpp"

namespace mhqa::qd {

/// Ordered, independent sub-questions. Every entry is non-empty, ends with
/// '?', and carries no "[Answer of Sub Q..]" style placeholder.
struct SubQuestionSet {
  std::vector<std::string> subquestions;

  bool empty() const { return subquestions.empty(); }
  std::size_t size() const { return subquestions.size(); }
  /// Entries joined by a single space (used for generation metrics).
  std::string joined() const;

  bool operator==(const SubQuestionSet&) const = default;
};

inline constexpr std::string_view kPlaceholderPattern = "[Answer of Sub Q";

/// Raised when a decoder output holds no usable sub-question.
class EmptySubQuestionSetError : public DataError {
 public:
  explicit EmptySubQuestionSetError(const std::string& message) : DataError(message) {}
};

bool is_valid_subquestion(std::string_view entry);

/// Splits on the separator, trims, drops empty or invalid segments. Throws
/// EmptySubQuestionSetError if nothing survives.
SubQuestionSet parse_subquestion_output(std::string_view raw,
                                        std::string_view separator = text::kSubQuestionSep);

/// Serialized decoder target: entries joined by " <subq> ".
std::string serialize_subquestions(const std::vector<std::string>& subquestions);

}  // namespace mhqa::qd
