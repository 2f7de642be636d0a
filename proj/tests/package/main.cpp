#include <iostream>

#include <mhqa/metrics.hpp>

int main() {
  const auto s = mhqa::metrics::answer_score("The Cat", "cat");
  std::cout << s.em << "\n";
  return s.em == 1.0 ? 0 : 1;
}
