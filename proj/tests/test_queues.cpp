#include <algorithm>
#include <random>
#include <vector>

#include "doctest.h"
#include "ucdr/queues.hpp"
#include "ucdr/util.hpp"

using namespace ucdr;

namespace {

std::vector<float> vec(std::initializer_list<float> v) { return std::vector<float>(v); }

// Reference model: plain vectors, independently coded mining by exhaustive
// scan with stable sort on (distance, age).
struct OracleQueues {
  struct Entry {
    std::vector<float> f;
    std::uint64_t seq;
  };
  std::map<int, std::vector<Entry>> queues;
  std::size_t capacity;
  std::uint64_t next_seq = 0;

  void push(int c, const std::vector<float>& f) {
    auto& q = queues[c];
    q.push_back({f, next_seq++});
    if (q.size() > capacity) q.erase(q.begin());
  }

  static double dist(const std::vector<float>& a, const std::vector<float>& b) {
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (double(a[i]) - b[i]) * (double(a[i]) - b[i]);
    return acc;
  }

  std::vector<std::pair<std::vector<float>, std::vector<float>>> mine(const std::vector<float>& anchor, int c,
                                                                      std::size_t r) const {
    std::vector<Entry> pos, neg;
    if (auto it = queues.find(c); it != queues.end()) pos = it->second;
    for (const auto& [id, q] : queues) {
      if (id == c) continue;
      neg.insert(neg.end(), q.begin(), q.end());
    }
    std::sort(pos.begin(), pos.end(), [&](const Entry& a, const Entry& b) {
      const double da = dist(a.f, anchor), db = dist(b.f, anchor);
      if (da != db) return da > db;
      return a.seq < b.seq;
    });
    std::sort(neg.begin(), neg.end(), [&](const Entry& a, const Entry& b) {
      const double da = dist(a.f, anchor), db = dist(b.f, anchor);
      if (da != db) return da < db;
      return a.seq < b.seq;
    });
    std::vector<std::pair<std::vector<float>, std::vector<float>>> out;
    for (std::size_t i = 0; i < std::min({r, pos.size(), neg.size()}); ++i) {
      out.emplace_back(pos[i].f, neg[i].f);
    }
    return out;
  }
};

}  // namespace

TEST_CASE("queues enforce fifo at capacity") {
  std::vector<int> ids{1};
  ClassQueueSet<float> qs(ids, 2, 2);
  qs.push(1, vec({1, 0}));
  qs.push(1, vec({2, 0}));
  qs.push(1, vec({3, 0}));
  CHECK(qs.size(1) == 2);
  auto snap = qs.snapshot(1);
  CHECK(snap[0].second == vec({2, 0}));
  CHECK(snap[1].second == vec({3, 0}));
}

TEST_CASE("queue guards reject bad input") {
  std::vector<int> ids{1, 2};
  CHECK_THROWS_AS(ClassQueueSet<float>(ids, 0, 2), ConfigError);
  ClassQueueSet<float> qs(ids, 4, 2);
  CHECK_THROWS_AS(qs.push(3, vec({1, 0})), ContractError);
  CHECK_THROWS_AS(qs.push(1, vec({1, 0, 3})), ContractError);
  std::vector<float> anchor{0, 0, 1};
  CHECK_THROWS_AS(qs.sample_hard_pairs(anchor, 1, 2), ContractError);
}

TEST_CASE("hard pairs pick far positives and near negatives") {
  std::vector<int> ids{1, 2};
  ClassQueueSet<float> qs(ids, 4, 2);
  qs.push(1, vec({1, 0}));   // dist 1 from anchor
  qs.push(1, vec({5, 0}));   // dist 25: hardest positive
  qs.push(2, vec({0, 9}));   // dist 81
  qs.push(2, vec({0, 2}));   // dist 4: hardest negative
  std::vector<float> anchor{0, 0};
  auto pairs = qs.sample_hard_pairs(anchor, 1, 1);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].positive == vec({5, 0}));
  CHECK(pairs[0].negative == vec({0, 2}));
}

TEST_CASE("pair count shrinks with short queues") {
  std::vector<int> ids{1, 2};
  ClassQueueSet<float> qs(ids, 4, 2);
  std::vector<float> anchor{0, 0};
  CHECK(qs.sample_hard_pairs(anchor, 1, 3).empty());  // nothing stored
  qs.push(1, vec({1, 0}));
  CHECK(qs.sample_hard_pairs(anchor, 1, 3).empty());  // no negatives yet
  qs.push(2, vec({0, 1}));
  CHECK(qs.sample_hard_pairs(anchor, 1, 3).size() == 1);
  qs.push(2, vec({0, 2}));
  CHECK(qs.sample_hard_pairs(anchor, 1, 3).size() == 1);  // positives limit
  qs.push(1, vec({2, 0}));
  CHECK(qs.sample_hard_pairs(anchor, 1, 3).size() == 2);
}

TEST_CASE("distance ties break by insertion order") {
  std::vector<int> ids{1, 2};
  ClassQueueSet<float> qs(ids, 4, 2);
  qs.push(1, vec({1, 0}));
  qs.push(1, vec({0, 1}));  // same distance from origin, newer
  qs.push(2, vec({2, 0}));
  qs.push(2, vec({0, 2}));  // same distance, newer
  std::vector<float> anchor{0, 0};
  auto pairs = qs.sample_hard_pairs(anchor, 1, 2);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].positive == vec({1, 0}));  // older wins the tie
  CHECK(pairs[1].positive == vec({0, 1}));
  CHECK(pairs[0].negative == vec({2, 0}));
  CHECK(pairs[1].negative == vec({0, 2}));
}

TEST_CASE("randomized ops agree with the reference model") {
  const std::size_t dim = 3;
  std::vector<int> ids{0, 1, 2, 3};
  ClassQueueSet<float> qs(ids, 5, dim);
  OracleQueues oracle;
  oracle.capacity = 5;

  auto rng = make_rng(77, {13});
  std::uniform_int_distribution<int> pick_class(0, 3);
  std::uniform_int_distribution<int> pick_r(1, 4);
  std::uniform_real_distribution<float> val(-2.0f, 2.0f);
  std::uniform_int_distribution<int> op(0, 2);

  for (int step = 0; step < 400; ++step) {
    if (op(rng) < 2) {
      const int c = pick_class(rng);
      std::vector<float> f(dim);
      for (auto& v : f) v = val(rng);
      qs.push(c, f);
      oracle.push(c, f);
    } else {
      const int c = pick_class(rng);
      std::vector<float> anchor(dim);
      for (auto& v : anchor) v = val(rng);
      const std::size_t r = static_cast<std::size_t>(pick_r(rng));
      auto got = qs.sample_hard_pairs(anchor, c, r);
      auto want = oracle.mine(anchor, c, r);
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].positive == want[i].first);
        CHECK(got[i].negative == want[i].second);
      }
    }
  }
  CHECK(qs.total_size() > 0);
}

TEST_CASE("snapshot and restore round trip") {
  std::vector<int> ids{1, 2};
  ClassQueueSet<float> qs(ids, 3, 2);
  qs.push(1, vec({1, 1}));
  qs.push(2, vec({2, 2}));
  qs.push(1, vec({3, 3}));

  ClassQueueSet<float> fresh(ids, 3, 2);
  for (int id : ids) fresh.restore(id, qs.snapshot(id), qs.next_sequence());
  CHECK(fresh.next_sequence() == qs.next_sequence());
  for (int id : ids) {
    auto a = qs.snapshot(id);
    auto b = fresh.snapshot(id);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].first == b[i].first);
      CHECK(a[i].second == b[i].second);
    }
  }
}
