#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace mhqa::testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(MHQA_FIXTURE_DIR) / name;
}

/// Fresh directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("mhqa-test-" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Independent reference implementations. They favour the most literal
// reading of each definition over speed.
namespace oracle {

inline std::pair<int, int> best_span(const std::vector<double>& start, const std::vector<double>& end,
                                     const std::vector<int>& mask, int max_len) {
  std::vector<std::pair<int, int>> valid;
  const int n = static_cast<int>(start.size());
  for (int s = 0; s < n; ++s) {
    for (int e = 0; e < n; ++e) {
      if (mask[s] && mask[e] && s <= e && e - s < max_len) valid.emplace_back(s, e);
    }
  }
  if (valid.empty()) return {-1, -1};
  double best = -INFINITY;
  for (auto [s, e] : valid) best = std::max(best, start[s] + end[e]);
  std::vector<std::pair<int, int>> winners;
  for (auto [s, e] : valid) {
    if (start[s] + end[e] == best) winners.emplace_back(s, e);
  }
  return *std::min_element(winners.begin(), winners.end());
}

/// Top-k paragraph indices: aggregate by max, full sort by (score desc, index asc).
inline std::vector<int> top_k(const std::vector<std::pair<int, double>>& scored, int k) {
  std::map<int, double> best;
  for (auto [p, s] : scored) {
    if (!best.count(p) || s > best[p]) best[p] = s;
  }
  std::vector<std::pair<int, double>> all(best.begin(), best.end());
  std::sort(all.begin(), all.end(), [](auto a, auto b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<int> out;
  for (int i = 0; i < k && i < static_cast<int>(all.size()); ++i) out.push_back(all[i].first);
  return out;
}

inline std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline std::size_t lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  // exhaustive over subsequences of the shorter side is too slow; plain
  // recursion with memo keeps this independent of the DP in the library
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size() || j == b.size()) return 0;
    auto key = std::pair{i, j};
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    std::size_t r = a[i] == b[j] ? 1 + go(i + 1, j + 1) : std::max(go(i + 1, j), go(i, j + 1));
    return memo[key] = r;
  };
  return go(0, 0);
}

inline double f1(double overlap, double pred, double gold) {
  if (overlap == 0 || pred == 0 || gold == 0) return 0.0;
  const double p = overlap / pred, r = overlap / gold;
  return 2 * p * r / (p + r);
}

inline double bce_sum(const std::vector<double>& scores, const std::vector<int>& labels) {
  double total = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = std::min(std::max(scores[i], 1e-7), 1 - 1e-7);
    total += -(labels[i] * std::log(s) + (1 - labels[i]) * std::log(1 - s));
  }
  return total;
}

inline std::vector<int> sentence_filter(const std::vector<double>& scores, double threshold) {
  std::vector<int> pass;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] >= threshold) pass.push_back(static_cast<int>(i));
  }
  if (pass.size() >= 2) return pass;
  std::vector<int> idx(scores.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  idx.resize(std::min<std::size_t>(2, idx.size()));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace oracle
}  // namespace mhqa::testing
