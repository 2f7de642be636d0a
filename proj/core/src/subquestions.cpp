#include "mhqa/subquestions.hpp"

namespace mhqa::qd {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::string SubQuestionSet::joined() const {
  std::string out;
  for (const auto& q : subquestions) {
    if (!out.empty()) out += ' ';
    out += q;
  }
  return out;
}

bool is_valid_subquestion(std::string_view entry) {
  entry = trim(entry);
  return !entry.empty() && entry.back() == '?' && entry.find(kPlaceholderPattern) == std::string_view::npos;
}

SubQuestionSet parse_subquestion_output(std::string_view raw, std::string_view separator) {
  SubQuestionSet out;
  std::size_t start = 0;
  while (start <= raw.size()) {
    const auto pos = separator.empty() ? std::string_view::npos : raw.find(separator, start);
    const auto segment = trim(raw.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (is_valid_subquestion(segment)) out.subquestions.emplace_back(segment);
    if (pos == std::string_view::npos) break;
    start = pos + separator.size();
  }
  if (out.empty()) {
    throw EmptySubQuestionSetError("no valid sub-question in decoder output '" + std::string(raw) + "'");
  }
  return out;
}

std::string serialize_subquestions(const std::vector<std::string>& subquestions) {
  std::string out;
  for (const auto& q : subquestions) {
    if (!out.empty()) {
      out += ' ';
      out += text::kSubQuestionSep;
      out += ' ';
    }
    out += q;
  }
  return out;
}

}  // namespace mhqa::qd
