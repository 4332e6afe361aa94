#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "tarec/corpus.hpp"
#include "tarec/error.hpp"
#include "tarec/synthetic.hpp"

namespace fs = std::filesystem;
using namespace tarec;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("tarec_corpus_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Fixed point of the two filters computed the slow way: drop one offending
// interaction at a time.
std::multiset<std::tuple<std::string, std::string, std::int64_t>> brute_filter(
    std::vector<Interaction> rows, int min_item, int min_user) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < rows.size() && !changed; ++i) {
      int item_n = 0;
      int user_n = 0;
      for (const auto& r : rows) {
        item_n += r.item == rows[i].item;
        user_n += r.user == rows[i].user;
      }
      if (item_n < min_item || user_n < min_user) {
        rows.erase(rows.begin() + static_cast<std::ptrdiff_t>(i));
        changed = true;
      }
    }
  }
  std::multiset<std::tuple<std::string, std::string, std::int64_t>> out;
  for (const auto& r : rows) out.insert({r.user, r.item, r.timestamp});
  return out;
}

}  // namespace

TEST(Ingest, ThreeLinesInFileOrder) {
  auto rows = parse_tsv("u1\ti1\t5\nu2\ti2\t3\nu1\ti3\t1\n");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], (Interaction{"u1", "i1", 5}));
  EXPECT_EQ(rows[1], (Interaction{"u2", "i2", 3}));
  EXPECT_EQ(rows[2], (Interaction{"u1", "i3", 1}));
}

TEST(Ingest, MalformedTimestampReportsLine) {
  try {
    parse_tsv("u1\ti9\tabc\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 1u);
  }
  try {
    parse_tsv("u1\ti1\t1\nu1\ti2\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Ingest, DuplicatesPreserved) {
  const std::string text = "u\ta\t1\nu\ta\t1\nu\ta\t1\nv\tb\t2\n";
  auto rows = parse_tsv(text);
  EXPECT_EQ(rows.size(), static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')));
}

TEST(Ingest, MissingFileIsDataError) {
  EXPECT_THROW(ingest_tsv("/nonexistent/tarec/file.tsv"), DataError);
}

TEST(Filter, EverythingSurvives) {
  std::vector<Interaction> raw;
  for (int u = 0; u < 5; ++u) {
    for (int i = 0; i < 3; ++i) raw.push_back({"u" + std::to_string(u), "i" + std::to_string(i), u * 10 + i});
  }
  auto r = filter_and_build(raw, 5, 3);
  EXPECT_EQ(r.corpus.size(), 3u);
  EXPECT_EQ(r.histories.size(), 5u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(r.corpus.popularity(static_cast<ItemIndex>(i)), 5);
}

TEST(Filter, MatchesBruteForceOnRandomLogs) {
  std::mt19937_64 rng(3);
  int compared = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<int> n_rows(8, 30);
    std::uniform_int_distribution<int> user(0, 4);
    std::uniform_int_distribution<int> item(0, 5);
    std::vector<Interaction> raw;
    const int n = n_rows(rng);
    for (int k = 0; k < n; ++k) {
      raw.push_back({"u" + std::to_string(user(rng)), "i" + std::to_string(item(rng)), k});
    }
    auto oracle = brute_filter(raw, 3, 3);
    if (oracle.empty()) {
      EXPECT_THROW(filter_and_build(raw, 3, 3), DataError);
      continue;
    }
    auto r = filter_and_build(raw, 3, 3);
    std::multiset<std::tuple<std::string, std::string, std::int64_t>> got;
    for (const auto& h : r.histories) {
      for (std::size_t k = 0; k < h.items.size(); ++k) {
        got.insert({h.user, r.corpus.id_of(h.items[k]), h.timestamps[k]});
      }
    }
    EXPECT_EQ(got, oracle);
    ++compared;
  }
  EXPECT_GT(compared, 20);
}

TEST(Filter, ItemAndUserBothRemoved) {
  // Item q appears 4 times; user w has 3 interactions, one of them q.
  std::vector<Interaction> raw;
  for (int u = 0; u < 5; ++u) {
    for (int k = 0; k < 3; ++k) raw.push_back({"u" + std::to_string(u), "p", u * 10 + k});
  }
  raw.push_back({"w", "p", 1});
  raw.push_back({"w", "q", 2});
  raw.push_back({"w", "p", 3});
  for (int k = 0; k < 3; ++k) raw.push_back({"v" + std::to_string(k), "q", k});
  auto r = filter_and_build(raw, 5, 3);
  EXPECT_FALSE(r.corpus.contains("q"));
  for (const auto& h : r.histories) EXPECT_NE(h.user, "w");
  EXPECT_EQ(r.histories.size(), 5u);
}

TEST(Filter, SingleInteractionIsEmptyCorpus) {
  EXPECT_THROW(filter_and_build({{"u", "i", 1}}, 5, 3), DataError);
}

TEST(Filter, FixedPointOnOwnOutput) {
  SyntheticSpec spec;
  spec.users = 300;
  spec.items = 60;
  auto first = filter_and_build(generate_synthetic(spec), 5, 3);
  std::vector<Interaction> again;
  for (const auto& h : first.histories) {
    for (std::size_t k = 0; k < h.items.size(); ++k) {
      again.push_back({h.user, first.corpus.id_of(h.items[k]), h.timestamps[k]});
    }
  }
  auto second = filter_and_build(again, 5, 3);
  EXPECT_EQ(first.corpus, second.corpus);
  ASSERT_EQ(first.histories.size(), second.histories.size());
  for (std::size_t u = 0; u < first.histories.size(); ++u) {
    EXPECT_EQ(first.histories[u].items, second.histories[u].items);
  }
  for (std::int64_t c : first.corpus.popularity()) EXPECT_GE(c, 5);
}

TEST(Filter, HistoriesSortedByTimestamp) {
  auto r = filter_and_build({{"u", "a", 3}, {"u", "b", 1}, {"u", "c", 2}}, 1, 1);
  ASSERT_EQ(r.histories.size(), 1u);
  EXPECT_EQ(r.histories[0].timestamps, (std::vector<std::int64_t>{1, 2, 3}));
  EXPECT_EQ(r.corpus.id_of(r.histories[0].items[0]), "b");
}

TEST(Window, ThreeItems) {
  const ItemIndex pad = 99;
  auto ex = window_and_pad(std::vector<ItemIndex>{0, 1, 2}, 10, 3, pad);
  ASSERT_EQ(ex.size(), 1u);
  std::vector<ItemIndex> expect(8, pad);
  expect.push_back(0);
  expect.push_back(1);
  EXPECT_EQ(ex[0].history, expect);
  EXPECT_EQ(ex[0].target, 2);
}

TEST(Window, FourItemsTwoExamples) {
  auto ex = window_and_pad(std::vector<ItemIndex>{0, 1, 2, 3}, 10, 3, 99);
  ASSERT_EQ(ex.size(), 2u);
  EXPECT_EQ(ex[0].target, 2);
  EXPECT_EQ(ex[1].target, 3);
}

TEST(Window, CapsAtMostRecentL) {
  std::vector<ItemIndex> h(11);
  for (int i = 0; i < 11; ++i) h[static_cast<std::size_t>(i)] = i;
  auto ex = window_and_pad(h, 10, 3, 99);
  const auto& last = ex.back();
  EXPECT_EQ(last.target, 10);
  std::vector<ItemIndex> expect(h.begin(), h.begin() + 10);
  EXPECT_EQ(last.history, expect);
}

TEST(Window, NoLeakageAndFixedLength) {
  SyntheticSpec spec;
  spec.users = 200;
  auto r = filter_and_build(generate_synthetic(spec), 5, 3);
  for (const auto& h : r.histories) {
    auto ex = window_and_pad(h, 6, 3, r.corpus.pad_index());
    for (std::size_t k = 0; k < ex.size(); ++k) {
      const std::size_t n = k + 2;
      EXPECT_EQ(ex[k].history.size(), 6u);
      EXPECT_NE(ex[k].target, r.corpus.pad_index());
      EXPECT_EQ(ex[k].target, h.items[n]);
      EXPECT_EQ(ex[k].timestamp, h.timestamps[n]);
      // Every non-pad history entry comes strictly before the target position.
      const std::size_t take = std::min<std::size_t>(n, 6);
      for (std::size_t j = 0; j < take; ++j) EXPECT_EQ(ex[k].history[6 - take + j], h.items[n - take + j]);
    }
  }
}

TEST(Split, Sizes) {
  auto make = [](int n) {
    std::vector<SequenceExample> ex(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ex[static_cast<std::size_t>(i)].timestamp = n - i;
    return ex;
  };
  auto s10 = chronological_split(make(10));
  EXPECT_EQ(s10.train.size(), 8u);
  EXPECT_EQ(s10.valid.size(), 1u);
  EXPECT_EQ(s10.test.size(), 1u);
  auto s100 = chronological_split(make(100));
  EXPECT_EQ(s100.train.size(), 80u);
  EXPECT_EQ(s100.valid.size(), 10u);
  EXPECT_EQ(s100.test.size(), 10u);
  auto s23 = chronological_split(make(23));
  EXPECT_EQ(s23.train.size(), 19u);
  EXPECT_EQ(s23.valid.size(), 2u);
  EXPECT_EQ(s23.test.size(), 2u);
  EXPECT_THROW(chronological_split(make(9)), DataError);
}

TEST(Split, ChronologicalBoundaries) {
  std::vector<SequenceExample> ex(50);
  for (std::size_t i = 0; i < ex.size(); ++i) {
    ex[i].timestamp = static_cast<std::int64_t>((i * 37) % 50);
    ex[i].user = "u" + std::to_string(i);
  }
  auto s = chronological_split(ex);
  std::int64_t max_train = 0;
  for (const auto& e : s.train) max_train = std::max(max_train, e.timestamp);
  std::int64_t min_valid = 1 << 30;
  std::int64_t max_valid = 0;
  for (const auto& e : s.valid) {
    min_valid = std::min(min_valid, e.timestamp);
    max_valid = std::max(max_valid, e.timestamp);
  }
  std::int64_t min_test = 1 << 30;
  for (const auto& e : s.test) min_test = std::min(min_test, e.timestamp);
  EXPECT_LE(max_train, min_valid);
  EXPECT_LE(max_valid, min_test);
  std::set<std::string> users;
  for (const auto* part : {&s.train, &s.valid, &s.test}) {
    for (const auto& e : *part) users.insert(e.user);
  }
  EXPECT_EQ(users.size(), ex.size());
}

TEST(Split, Deterministic) {
  SyntheticSpec spec;
  spec.users = 150;
  auto build = [&] {
    auto r = filter_and_build(generate_synthetic(spec), 5, 3);
    std::vector<SequenceExample> all;
    for (const auto& h : r.histories) {
      auto ex = window_and_pad(h, 10, 3, r.corpus.pad_index());
      all.insert(all.end(), ex.begin(), ex.end());
    }
    return chronological_split(all);
  };
  auto a = build();
  auto b = build();
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.valid, b.valid);
  EXPECT_EQ(a.test, b.test);
}

TEST(Prepared, RoundTrip) {
  SyntheticSpec spec;
  spec.users = 120;
  auto r = filter_and_build(generate_synthetic(spec), 5, 3);
  std::vector<SequenceExample> all;
  for (const auto& h : r.histories) {
    auto ex = window_and_pad(h, 10, 3, r.corpus.pad_index());
    all.insert(all.end(), ex.begin(), ex.end());
  }
  PreparedData data{r.corpus, chronological_split(all), 10};
  auto dir = temp_dir("roundtrip");
  write_prepared(dir, data, 5, 3);
  auto back = read_prepared(dir);
  EXPECT_EQ(back.corpus, data.corpus);
  EXPECT_EQ(back.seq_len, 10);
  EXPECT_EQ(back.split.train, data.split.train);
  EXPECT_EQ(back.split.valid, data.split.valid);
  EXPECT_EQ(back.split.test, data.split.test);
}

TEST(Synthetic, DeterministicAndShaped) {
  SyntheticSpec spec;
  spec.users = 50;
  auto a = generate_synthetic(spec);
  auto b = generate_synthetic(spec);
  EXPECT_EQ(a, b);
  std::map<std::string, int> len;
  for (const auto& r : a) ++len[r.user];
  EXPECT_EQ(len.size(), 50u);
  for (const auto& [u, n] : len) {
    EXPECT_GE(n, spec.min_len);
    EXPECT_LE(n, spec.max_len);
  }
  spec.seed = 8;
  EXPECT_NE(generate_synthetic(spec), a);
}
