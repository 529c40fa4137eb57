// Copyright 2026 The flseq Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "flseq/baseline.hpp"
#include "oracles.hpp"

namespace {

using flseq::MbflFormula;
using flseq::SbflFormula;
using flseq::Spectrum;

constexpr SbflFormula kSbfl[] = {SbflFormula::Ochiai, SbflFormula::Jaccard, SbflFormula::Tarantula,
                                 SbflFormula::DStar2};

TEST(Sbfl, HandArithmetic) {
  // ef=4, nf=0, ep=2: 4 / sqrt(4 * 6).
  EXPECT_NEAR(flseq::sbfl_line_score(Spectrum{4, 2, 0, 3}, SbflFormula::Ochiai), 4.0 / std::sqrt(24.0), 1e-12);
  EXPECT_NEAR(flseq::sbfl_line_score(Spectrum{4, 2, 0, 3}, SbflFormula::Ochiai), 0.81650, 5e-6);
  EXPECT_DOUBLE_EQ(flseq::sbfl_line_score(Spectrum{3, 0, 1, 2}, SbflFormula::DStar2), 9.0);
  for (auto f : kSbfl) EXPECT_EQ(flseq::sbfl_line_score(Spectrum{0, 3, 2, 1}, f), 0.0);
  EXPECT_TRUE(std::isinf(flseq::sbfl_line_score(Spectrum{2, 0, 0, 4}, SbflFormula::DStar2)));
  // No passing tests at all: pass ratio counts as 0.
  EXPECT_DOUBLE_EQ(flseq::sbfl_line_score(Spectrum{1, 0, 1, 0}, SbflFormula::Tarantula), 1.0);
}

flseq::CoverageMatrix matrix(std::vector<int> lines, std::vector<bool> passed,
                             std::vector<std::vector<std::uint8_t>> cover) {
  flseq::CoverageMatrix m;
  m.line_ids = std::move(lines);
  for (std::size_t t = 0; t < passed.size(); ++t) m.tests.push_back({"t" + std::to_string(t), passed[t]});
  m.cover = std::move(cover);
  return m;
}

TEST(Sbfl, TiesByAscendingLine) {
  const auto m = matrix({9, 4, 6}, {false, true}, {{1, 1, 0}, {0, 0, 0}});
  const auto r = flseq::sbfl_score(m, SbflFormula::Ochiai);
  ASSERT_EQ(r.entries.size(), 3u);
  EXPECT_EQ(r.entries[0].line_id, 4);
  EXPECT_EQ(r.entries[1].line_id, 9);
  EXPECT_EQ(r.entries[2].line_id, 6);
  EXPECT_EQ(r.formula_tag, "ochiai");
}

TEST(Sbfl, InfinityRanksFirst) {
  const auto m = matrix({1, 2}, {false, true}, {{1, 1}, {1, 0}});
  const auto r = flseq::sbfl_score(m, SbflFormula::DStar2);
  EXPECT_EQ(r.entries[0].line_id, 2);
  EXPECT_TRUE(std::isinf(r.entries[0].score));
  const auto j = flseq::to_json(r);
  EXPECT_EQ(j["ranking"][0]["score"], "inf");
}

TEST(Sbfl, Errors) {
  const auto m = matrix({1}, {true}, {{1}});
  try {
    flseq::sbfl_score(m, SbflFormula::Ochiai);
    FAIL();
  } catch (const flseq::Error& e) {
    EXPECT_EQ(e.kind(), flseq::ErrorKind::NoFailingTests);
  }
  EXPECT_THROW(flseq::sbfl_score(matrix({1, 2}, {false}, {{1}}), SbflFormula::Ochiai), flseq::Error);
  EXPECT_THROW(flseq::sbfl_score(matrix({1}, {false}, {{2}}), SbflFormula::Ochiai), flseq::Error);
}

TEST(Sbfl, MatchesBruteForce) {
  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 300; ++trial) {
    const auto m = oracle::random_coverage(gen);
    for (auto f : kSbfl) {
      std::string why;
      EXPECT_TRUE(oracle::ranking_matches(flseq::sbfl_score(m, f), oracle::sbfl_scores(m, f), 1e-9, &why))
          << "trial " << trial << " " << flseq::to_string(f) << ": " << why;
    }
  }
}

TEST(Sbfl, BoundsAndPermutationInvariance) {
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 200; ++trial) {
    auto m = oracle::random_coverage(gen);
    for (auto f : kSbfl) {
      const auto r = flseq::sbfl_score(m, f);
      for (const auto& e : r.entries) {
        EXPECT_GE(e.score, 0.0);
        if (f != SbflFormula::DStar2) {
          EXPECT_LE(e.score, 1.0 + 1e-12);
        }
      }
      auto shuffled = m;
      std::vector<std::size_t> order(m.tests.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::shuffle(order.begin(), order.end(), gen);
      for (std::size_t i = 0; i < order.size(); ++i) {
        shuffled.tests[i] = m.tests[order[i]];
        shuffled.cover[i] = m.cover[order[i]];
      }
      const auto r2 = flseq::sbfl_score(shuffled, f);
      ASSERT_EQ(r.entries.size(), r2.entries.size());
      for (std::size_t i = 0; i < r.entries.size(); ++i) {
        EXPECT_EQ(r.entries[i].line_id, r2.entries[i].line_id);
        EXPECT_EQ(r.entries[i].score, r2.entries[i].score);
      }
    }
  }
}

// A line hit by every failing test and no passing test is ranked first.
TEST(Sbfl, PerfectLineRanksFirst) {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 100; ++trial) {
    auto m = oracle::random_coverage(gen);
    const std::size_t col = gen() % m.line_ids.size();
    for (std::size_t t = 0; t < m.tests.size(); ++t) m.cover[t][col] = m.tests[t].passed ? 0 : 1;
    // Others must not also be perfect, or the tie rule decides.
    for (std::size_t j = 0; j < m.line_ids.size(); ++j)
      if (j != col) {
        bool perfect = true;
        for (std::size_t t = 0; t < m.tests.size(); ++t)
          perfect = perfect && (m.cover[t][j] == (m.tests[t].passed ? 0 : 1));
        if (perfect) m.cover[0][j] = 0;
      }
    for (auto f : kSbfl) {
      const auto r = flseq::sbfl_score(m, f);
      if (f == SbflFormula::Tarantula) {
        // Tarantula also gives 1 to any line no passing test covers.
        const auto it = std::find_if(r.entries.begin(), r.entries.end(),
                                     [&](const auto& e) { return e.line_id == m.line_ids[col]; });
        ASSERT_NE(it, r.entries.end());
        EXPECT_EQ(it->score, r.entries[0].score) << "trial " << trial;
      } else {
        EXPECT_EQ(r.entries[0].line_id, m.line_ids[col]) << "trial " << trial << " " << flseq::to_string(f);
      }
    }
  }
}

flseq::KillMatrix kill(std::size_t F, std::size_t P, std::vector<flseq::Mutant> mutants) {
  flseq::KillMatrix k;
  k.failing = F;
  k.passing = P;
  k.mutants = std::move(mutants);
  return k;
}

TEST(Mbfl, HandArithmetic) {
  const auto r = flseq::mbfl_score(kill(2, 5, {{"m", 3, 2, 0}}), MbflFormula::Metallaxis);
  ASSERT_EQ(r.entries.size(), 1u);
  EXPECT_EQ(r.entries[0].line_id, 3);
  EXPECT_DOUBLE_EQ(r.entries[0].score, 1.0);
}

TEST(Mbfl, InertMutantScoresZero) {
  for (auto f : {MbflFormula::Muse, MbflFormula::Metallaxis}) {
    const auto r = flseq::mbfl_score(kill(2, 3, {{"m", 1, 0, 0}}), f);
    EXPECT_EQ(r.entries[0].score, 0.0);
  }
}

TEST(Mbfl, MetallaxisTakesMax) {
  const auto k = kill(4, 4, {{"a", 7, 1, 3}, {"b", 7, 3, 0}});
  const auto r = flseq::mbfl_score(k, MbflFormula::Metallaxis);
  const double a = 1.0 / std::sqrt(4.0 * 4.0), b = 3.0 / std::sqrt(4.0 * 3.0);
  EXPECT_NEAR(r.entries[0].score, std::max(a, b), 1e-12);
}

TEST(Mbfl, MuseWorkedExample) {
  // sum f2p = 3, sum p2f = 2; alpha = (3/3) / (2/4) = 2.
  // line 1: 2/3 - 2 * 0/4 = 2/3; line 2: 1/3 - 2 * 2/4 = -2/3.
  const auto r = flseq::mbfl_score(kill(3, 4, {{"a", 1, 2, 0}, {"b", 2, 1, 2}}), MbflFormula::Muse);
  ASSERT_EQ(r.entries.size(), 2u);
  EXPECT_EQ(r.entries[0].line_id, 1);
  EXPECT_NEAR(r.entries[0].score, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.entries[1].score, -2.0 / 3.0, 1e-12);
}

TEST(Mbfl, Errors) {
  try {
    flseq::mbfl_score(kill(1, 1, {}), MbflFormula::Muse);
    FAIL();
  } catch (const flseq::Error& e) {
    EXPECT_EQ(e.kind(), flseq::ErrorKind::NoMutants);
  }
  EXPECT_THROW(flseq::mbfl_score(kill(0, 1, {{"m", 1, 0, 0}}), MbflFormula::Muse), flseq::Error);
  EXPECT_THROW(flseq::mbfl_score(kill(1, 1, {{"m", 1, 2, 0}}), MbflFormula::Muse), flseq::Error);
}

TEST(Mbfl, MatchesBruteForce) {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 300; ++trial) {
    const auto k = oracle::random_kill(gen);
    std::string why;
    EXPECT_TRUE(oracle::ranking_matches(flseq::mbfl_score(k, MbflFormula::Muse), oracle::muse_scores(k), 1e-9, &why))
        << "trial " << trial << " muse: " << why;
    EXPECT_TRUE(oracle::ranking_matches(flseq::mbfl_score(k, MbflFormula::Metallaxis), oracle::metallaxis_scores(k),
                                        1e-9, &why))
        << "trial " << trial << " metallaxis: " << why;
  }
}

flseq::SuspiciousnessRanking ranking(std::vector<flseq::ScoredLine> entries) { return {std::move(entries), "x"}; }

TEST(Restrict, Examples) {
  const auto r = ranking({{10, .9}, {3, .8}, {7, .5}});
  const auto f = flseq::restrict_to_function(r, {3, 7});
  ASSERT_EQ(f.entries.size(), 2u);
  EXPECT_EQ(f.entries[0].line_id, 3);
  EXPECT_EQ(f.entries[1].line_id, 7);
  EXPECT_DOUBLE_EQ(f.entries[1].score, .5);
  try {
    flseq::restrict_to_function(r, {1, 2});
    FAIL();
  } catch (const flseq::Error& e) {
    EXPECT_EQ(e.kind(), flseq::ErrorKind::EmptyResult);
  }
  const auto all = flseq::restrict_to_function(r, {3, 7, 10});
  ASSERT_EQ(all.entries.size(), 3u);
  EXPECT_EQ(all.entries[0].line_id, 10);
  const auto again = flseq::restrict_to_function(f, {3, 7});
  EXPECT_EQ(again.entries.size(), f.entries.size());
}

TEST(MatrixJson, Parse) {
  const auto cov = flseq::coverage_from_json(nlohmann::json::parse(
      R"({"line_ids":[1,2],"tests":[{"id":"a","passed":false},{"id":"b","passed":true}],"cover":[[1,0],[1,1]]})"));
  EXPECT_EQ(cov.tests.size(), 2u);
  EXPECT_FALSE(cov.tests[0].passed);
  const auto k = flseq::kill_from_json(
      nlohmann::json::parse(R"({"F":2,"P":3,"mutants":[{"id":"m1","line":4,"f2p":1,"p2f":2}]})"));
  EXPECT_EQ(k.failing, 2u);
  EXPECT_EQ(k.mutants[0].line, 4);
  EXPECT_THROW(flseq::coverage_from_json(nlohmann::json::parse(R"({"line_ids":[1]})")), flseq::Error);
}

}  // namespace
