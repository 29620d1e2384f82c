#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "stagevqa/text.hpp"

namespace stagevqa {

namespace detail {

struct Block {
  std::size_t a = 0;
  std::size_t b = 0;
  std::size_t size = 0;
};

/// Longest common contiguous block of a[alo,ahi) and b[blo,bhi). Ties go to
/// the smallest start in `a`, then the smallest start in `b`.
inline Block longest_block(std::u32string_view a, std::u32string_view b, std::size_t alo,
                           std::size_t ahi, std::size_t blo, std::size_t bhi) {
  Block best{alo, blo, 0};
  std::vector<std::size_t> prev(bhi - blo + 1, 0);
  std::vector<std::size_t> cur(bhi - blo + 1, 0);
  for (std::size_t i = alo; i < ahi; ++i) {
    for (std::size_t j = blo; j < bhi; ++j) {
      const std::size_t col = j - blo + 1;
      if (a[i] == b[j]) {
        cur[col] = prev[col - 1] + 1;
        if (cur[col] > best.size) best = Block{i + 1 - cur[col], j + 1 - cur[col], cur[col]};
      } else {
        cur[col] = 0;
      }
    }
    std::swap(prev, cur);
  }
  return best;
}

}  // namespace detail

/// Total size of the matching blocks found by taking the longest common block
/// and recursing on the unmatched remainders to its left and right.
inline std::size_t matched_characters(std::u32string_view a, std::u32string_view b) {
  std::size_t total = 0;
  std::vector<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>> todo{
      {0, a.size(), 0, b.size()}};
  while (!todo.empty()) {
    const auto [alo, ahi, blo, bhi] = todo.back();
    todo.pop_back();
    if (alo >= ahi || blo >= bhi) continue;
    const auto m = detail::longest_block(a, b, alo, ahi, blo, bhi);
    if (m.size == 0) continue;
    total += m.size;
    todo.emplace_back(alo, m.a, blo, m.b);
    todo.emplace_back(m.a + m.size, ahi, m.b + m.size, bhi);
  }
  return total;
}

/// Ratcliff/Obershelp ratio 2M/(|a|+|b|) in argument order.
inline double gestalt_ratio(std::u32string_view a, std::u32string_view b) {
  if (a.empty() && b.empty()) return 1.0;
  return 2.0 * static_cast<double>(matched_characters(a, b)) /
         static_cast<double>(a.size() + b.size());
}

/// Symmetric similarity over case-folded, whitespace-normalized strings. The
/// raw ratio depends on argument order, so it is taken over the
/// lexicographically ordered pair.
inline double similarity(std::string_view a, std::string_view b) {
  std::string x = fold(normalize_text(a));
  std::string y = fold(normalize_text(b));
  if (y < x) std::swap(x, y);
  return gestalt_ratio(decode_utf8(x), decode_utf8(y));
}

/// Upper bound on gestalt_ratio from character multiset overlap.
inline double quick_ratio_bound(std::u32string_view a, std::u32string_view b) {
  if (a.empty() && b.empty()) return 1.0;
  std::u32string x(a), y(b);
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  std::size_t i = 0, j = 0, common = 0;
  while (i < x.size() && j < y.size()) {
    if (x[i] == y[j]) {
      ++common, ++i, ++j;
    } else if (x[i] < y[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return 2.0 * static_cast<double>(common) / static_cast<double>(a.size() + b.size());
}

}  // namespace stagevqa
