#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace mhqa::text {

/// Marks a piece that followed whitespace (or began the text).
inline constexpr std::string_view kSpaceMarker = "\xE2\x96\x81";

inline constexpr std::string_view kPad = "[PAD]";
inline constexpr std::string_view kUnk = "[UNK]";
inline constexpr std::string_view kCls = "[CLS]";
inline constexpr std::string_view kSep = "[SEP]";
inline constexpr std::string_view kSubQuestionSep = "<subq>";
inline constexpr std::string_view kContextSep = "<ctx>";
inline constexpr std::string_view kBos = "<s>";
inline constexpr std::string_view kEos = "</s>";

enum SpecialId : int {
  kPadId = 0,
  kUnkId = 1,
  kClsId = 2,
  kSepId = 3,
  kSubQuestionSepId = 4,
  kContextSepId = 5,
  kBosId = 6,
  kEosId = 7,
  kFirstRegularId = 8,
};

struct Piece {
  std::string text;  // includes the space marker when applicable
  std::size_t begin = 0;
  std::size_t end = 0;  // byte offsets into the source text
};

/// Splits text into word pieces (runs of alphanumerics and non-ASCII bytes)
/// and single punctuation pieces. Special literals such as "<subq>" are kept
/// whole and never carry a space marker.
std::vector<Piece> pre_tokenize(std::string_view text);

class Vocabulary {
 public:
  Vocabulary();

  /// Every distinct piece occurring at least min_count times, in first-seen order.
  static Vocabulary build(const std::vector<std::string>& texts, std::size_t min_count = 1);

  int add(std::string_view piece);
  int id(std::string_view piece) const;
  const std::string& piece(int id) const { return pieces_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(pieces_.size()); }
  bool is_special(int id) const { return id < kFirstRegularId; }

  std::vector<int> encode(std::string_view text) const;
  /// Inverse of encode for known pieces; special tokens render as " <tok> ".
  std::string decode(std::span<const int> ids) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& doc);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return pieces_ == other.pieces_; }

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, int> index_;
};

/// Text of a piece without its space marker.
std::string_view strip_marker(std::string_view piece);

}  // namespace mhqa::text
