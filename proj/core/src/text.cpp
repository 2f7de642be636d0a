#include "mhqa/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>

#include "mhqa/error.hpp"
#include "mhqa/io.hpp"

namespace mhqa::text {

namespace {

constexpr std::array<std::string_view, kFirstRegularId> kSpecials = {kPad,           kUnk,        kCls, kSep,
                                                                     kSubQuestionSep, kContextSep, kBos, kEos};

bool is_word_byte(unsigned char c) { return c >= 128 || std::isalnum(c) != 0; }

}  // namespace

std::string_view strip_marker(std::string_view piece) {
  if (piece.substr(0, kSpaceMarker.size()) == kSpaceMarker) piece.remove_prefix(kSpaceMarker.size());
  return piece;
}

std::vector<Piece> pre_tokenize(std::string_view text) {
  std::vector<Piece> pieces;
  bool after_space = true;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c) != 0) {
      after_space = true;
      ++i;
      continue;
    }
    bool special = false;
    for (std::size_t s = kSubQuestionSepId; s < kSpecials.size(); ++s) {
      const auto literal = kSpecials[s];
      if (text.substr(i, literal.size()) == literal) {
        pieces.push_back({std::string(literal), i, i + literal.size()});
        i += literal.size();
        after_space = true;
        special = true;
        break;
      }
    }
    if (special) continue;

    std::size_t end = i + 1;
    if (is_word_byte(c)) {
      while (end < text.size() && is_word_byte(static_cast<unsigned char>(text[end]))) ++end;
    }
    std::string piece = after_space ? std::string(kSpaceMarker) : std::string();
    piece.append(text.substr(i, end - i));
    pieces.push_back({std::move(piece), i, end});
    after_space = false;
    i = end;
  }
  return pieces;
}

Vocabulary::Vocabulary() {
  for (auto special : kSpecials) add(special);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  std::vector<std::string> order;
  for (const auto& text : texts) {
    for (auto& piece : pre_tokenize(text)) {
      if (counts[piece.text]++ == 0) order.push_back(piece.text);
    }
  }
  Vocabulary vocab;
  for (const auto& piece : order) {
    if (counts[piece] >= min_count) vocab.add(piece);
  }
  return vocab;
}

int Vocabulary::add(std::string_view piece) {
  const std::string key(piece);
  auto it = index_.find(key);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(pieces_.size());
  pieces_.push_back(key);
  index_.emplace(key, id);
  return id;
}

int Vocabulary::id(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  return it == index_.end() ? kUnkId : it->second;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& piece : pre_tokenize(text)) ids.push_back(id(piece.text));
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= size() || id == kPadId) continue;
    const std::string& p = pieces_[static_cast<std::size_t>(id)];
    if (is_special(id)) {
      out += ' ';
      out += p;
      out += ' ';
      continue;
    }
    if (p.compare(0, kSpaceMarker.size(), kSpaceMarker) == 0) {
      out += ' ';
      out += p.substr(kSpaceMarker.size());
    } else {
      out += p;
    }
  }
  std::string collapsed;
  for (char c : out) {
    if (c == ' ' && (collapsed.empty() || collapsed.back() == ' ')) continue;
    collapsed += c;
  }
  if (!collapsed.empty() && collapsed.back() == ' ') collapsed.pop_back();
  return collapsed;
}

nlohmann::json Vocabulary::to_json() const { return {{"pieces", pieces_}}; }

Vocabulary Vocabulary::from_json(const nlohmann::json& doc) {
  const auto pieces = doc.at("pieces").get<std::vector<std::string>>();
  if (pieces.size() < kSpecials.size()) throw DataError("vocabulary is missing special tokens");
  for (std::size_t i = 0; i < kSpecials.size(); ++i) {
    if (pieces[i] != kSpecials[i]) throw DataError("vocabulary special token mismatch at id " + std::to_string(i));
  }
  Vocabulary vocab;
  for (std::size_t i = kSpecials.size(); i < pieces.size(); ++i) vocab.add(pieces[i]);
  return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const { io::write_file_atomic(path, to_json().dump() + "\n"); }

Vocabulary Vocabulary::load(const std::filesystem::path& path) { return from_json(io::read_json(path)); }

}  // namespace mhqa::text
