#include <algorithm>
#include <cmath>
#include <cstdint>

#include "helio/data.hpp"
#include "helio/error.hpp"

namespace helio {

namespace {

struct Score {
  std::int64_t count = 0;
  std::int64_t cost_ms = 0;  // total |dt|
  bool better_than(const Score& o) const {
    return count != o.count ? count > o.count : cost_ms < o.cost_ms;
  }
};

void require_sorted(const std::vector<Timestamp>& v, const char* what) {
  if (!std::is_sorted(v.begin(), v.end())) {
    throw Error(ErrorKind::UnsortedInput, std::string(what) + " timestamps are not sorted");
  }
}

// Exact DP on one block of inputs [i0, i1) x targets [j0, j1). Optimal
// matchings on a line never cross, so prefix DP is exact.
void match_block(const std::vector<std::int64_t>& a, const std::vector<std::int64_t>& b,
                 std::size_t i0, std::size_t i1, std::size_t j0, std::size_t j1, std::int64_t tol,
                 std::vector<PairMatch>& out) {
  const std::size_t n = i1 - i0, m = j1 - j0;
  if (n == 0 || m == 0) return;
  enum : std::uint8_t { kSkipInput = 0, kSkipTarget = 1, kMatch = 2 };
  std::vector<std::uint8_t> choice((n + 1) * (m + 1), kSkipInput);
  std::vector<Score> prev(m + 1), cur(m + 1);
  for (std::size_t j = 1; j <= m; ++j) choice[j] = kSkipTarget;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = prev[0];
    choice[i * (m + 1)] = kSkipInput;
    for (std::size_t j = 1; j <= m; ++j) {
      Score best = prev[j];
      std::uint8_t pick = kSkipInput;
      if (cur[j - 1].better_than(best)) {
        best = cur[j - 1];
        pick = kSkipTarget;
      }
      const std::int64_t d = std::llabs(b[j0 + j - 1] - a[i0 + i - 1]);
      if (d <= tol) {
        const Score cand{prev[j - 1].count + 1, prev[j - 1].cost_ms + d};
        if (cand.better_than(best)) {
          best = cand;
          pick = kMatch;
        }
      }
      cur[j] = best;
      choice[i * (m + 1) + j] = pick;
    }
    std::swap(prev, cur);
  }
  std::vector<PairMatch> local;
  std::size_t i = n, j = m;
  while (i > 0 && j > 0) {
    const std::uint8_t c = choice[i * (m + 1) + j];
    if (c == kMatch) {
      const std::size_t ii = i0 + i - 1, jj = j0 + j - 1;
      local.push_back({ii, jj, static_cast<double>(b[jj] - a[ii]) / 1000.0});
      --i;
      --j;
    } else if (c == kSkipInput) {
      --i;
    } else {
      --j;
    }
  }
  out.insert(out.end(), local.rbegin(), local.rend());
}

}  // namespace

std::vector<PairMatch> pair_by_timestamp(const std::vector<Timestamp>& inputs,
                                         const std::vector<Timestamp>& targets, double tolerance_s) {
  require_sorted(inputs, "input");
  require_sorted(targets, "target");
  if (!(tolerance_s >= 0.0)) throw Error(ErrorKind::InvalidSpec, "pairing tolerance must be >= 0");
  const auto tol = static_cast<std::int64_t>(std::llround(tolerance_s * 1000.0));
  std::vector<std::int64_t> a, b;
  for (Timestamp t : inputs) a.push_back(t.time_since_epoch().count());
  for (Timestamp t : targets) b.push_back(t.time_since_epoch().count());

  // Split the merged timeline where consecutive stamps are more than tol
  // apart; no admissible pair straddles such a gap.
  std::vector<PairMatch> out;
  std::size_t i = 0, j = 0, bi = 0, bj = 0;
  bool have_last = false;
  std::int64_t last = 0;
  while (i < a.size() || j < b.size()) {
    const bool take_a = j >= b.size() || (i < a.size() && a[i] <= b[j]);
    const std::int64_t t = take_a ? a[i] : b[j];
    if (have_last && t - last > tol) {
      match_block(a, b, bi, i, bj, j, tol, out);
      bi = i;
      bj = j;
    }
    last = t;
    have_last = true;
    take_a ? ++i : ++j;
  }
  match_block(a, b, bi, a.size(), bj, b.size(), tol, out);
  return out;
}

}  // namespace helio
