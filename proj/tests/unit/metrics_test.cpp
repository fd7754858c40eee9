#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "minedetect/metrics.hpp"

using namespace minedetect;

namespace {

constexpr ConfusionMatrix kReferenceCounts{147, 882, 26, 355692};

std::vector<Label> random_labels(std::mt19937_64& rng, std::size_t n) {
  std::vector<Label> out(n);
  for (auto& l : out) l = rng() % 3 == 0 ? Label::Miner : Label::NotMiner;
  out[0] = Label::Miner;
  out[1] = Label::NotMiner;
  return out;
}

// O(n^2) pair count: positives ranked above negatives, ties worth one half.
double roc_pairs(const std::vector<double>& s, const std::vector<Label>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == Label::Miner && y[j] != Label::Miner) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return wins / pairs;
}

// Every distinct threshold, high to low, recounting from scratch each time.
double prc_thresholds(const std::vector<double>& s, const std::vector<Label>& y) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  double pos = 0;
  for (auto l : y) pos += l == Label::Miner;
  double area = 0, prev = 0;
  for (double t : thresholds) {
    double tp = 0, predicted = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= t) {
        ++predicted;
        tp += y[i] == Label::Miner;
      }
    area += (tp / pos - prev) * (tp / predicted);
    prev = tp / pos;
  }
  return area;
}

Errc code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::InvalidConfig;
}

}  // namespace

TEST(Confusion, Examples) {
  std::vector<Label> all(6, Label::Miner);
  EXPECT_EQ(confusion(all, all), (ConfusionMatrix{6, 0, 0, 0}));

  std::vector<Label> t{Label::Miner, Label::NotMiner, Label::Miner, Label::NotMiner};
  std::vector<Label> p{Label::NotMiner, Label::Miner, Label::NotMiner, Label::Miner};
  auto m = confusion(t, p);
  EXPECT_EQ(m.tp, 0u);
  EXPECT_EQ(m.tn, 0u);
  EXPECT_EQ(m.fp, 2u);
  EXPECT_EQ(m.fn, 2u);
}

TEST(Confusion, Errors) {
  std::vector<Label> a{Label::Miner}, b{Label::Miner, Label::NotMiner}, none;
  EXPECT_EQ(code_of([&] { confusion(a, b); }), Errc::LengthMismatch);
  EXPECT_EQ(code_of([&] { confusion(none, none); }), Errc::EmptyInput);
}

TEST(ClassMetrics, Perfect) {
  auto c = class_metrics({5, 0, 0, 9});
  EXPECT_EQ(c.precision, 1.0);
  EXPECT_EQ(c.recall, 1.0);
  EXPECT_EQ(c.f_measure, 1.0);
  EXPECT_EQ(c.mcc, 1.0);
  EXPECT_FALSE(c.undefined_cells);
}

TEST(ClassMetrics, FMeasureFromPrecisionRecall) {
  EXPECT_NEAR(f_measure(0.143, 0.538), 0.226, 0.001);
  EXPECT_EQ(f_measure(0.0, 0.0), 0.0);
}

TEST(ClassMetrics, ReferenceCounts) {
  auto c = class_metrics(kReferenceCounts);
  EXPECT_NEAR(c.precision, 0.1429, 0.0005);
  EXPECT_DOUBLE_EQ(c.precision, 147.0 / 1029.0);
  EXPECT_DOUBLE_EQ(c.recall, 147.0 / 173.0);
  const double num = 147.0 * 355692.0 - 882.0 * 26.0;
  const double den = std::sqrt(1029.0 * 173.0 * 356574.0 * 355718.0);
  EXPECT_NEAR(c.mcc, num / den, 1e-12);
  EXPECT_NEAR(c.mcc, 0.348, 0.0005);
  EXPECT_NEAR(accuracy(kReferenceCounts), 0.99746, 0.00001);
  EXPECT_DOUBLE_EQ(accuracy(kReferenceCounts), 355839.0 / 356747.0);
}

TEST(ClassMetrics, ZeroOverZeroIsFlagged) {
  auto c = class_metrics({0, 0, 0, 7});
  EXPECT_EQ(c.tp_rate, 0.0);
  EXPECT_EQ(c.precision, 0.0);
  EXPECT_EQ(c.mcc, 0.0);
  EXPECT_TRUE(c.undefined_cells);
  EXPECT_EQ(code_of([] { class_metrics({}); }), Errc::EmptyMatrix);
  EXPECT_EQ(code_of([] { accuracy({}); }), Errc::EmptyMatrix);
}

TEST(ClassMetrics, Accuracy) {
  EXPECT_EQ(accuracy({3, 0, 0, 4}), 1.0);
  EXPECT_EQ(accuracy({0, 3, 4, 0}), 0.0);
}

TEST(ClassMetrics, RandomMatricesMccBoundsAndLabelSwap) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    ConfusionMatrix m{rng() % 1000, rng() % 1000, rng() % 1000, rng() % 1000};
    if (m.total() == 0) continue;
    auto a = class_metrics(m), b = class_metrics(m.swapped());
    EXPECT_GE(a.mcc, -1.0);
    EXPECT_LE(a.mcc, 1.0);
    EXPECT_NEAR(std::abs(a.mcc), std::abs(b.mcc), 1e-12);
    EXPECT_EQ(a.recall, a.tp_rate);
  }
}

TEST(RocAuc, Examples) {
  std::vector<Label> y{Label::Miner, Label::Miner, Label::NotMiner, Label::NotMiner};
  EXPECT_EQ(roc_auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, y), 1.0);
  EXPECT_EQ(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, y), 0.0);
  EXPECT_EQ(roc_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, y), 0.5);
  EXPECT_EQ(code_of([] {
              std::vector<Label> one{Label::Miner, Label::Miner};
              roc_auc(std::vector<double>{0.1, 0.2}, one);
            }),
            Errc::DegenerateLabels);
  EXPECT_EQ(code_of([&] { roc_auc(std::vector<double>{0.1}, y); }), Errc::LengthMismatch);
}

TEST(RocAuc, MatchesPairCountAndInvariants) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 150;
    auto y = random_labels(rng, n);
    std::vector<double> s(n), mono(n);
    for (auto& v : s) v = double(rng() % 40) / 40.0;  // coarse, so ties occur
    for (std::size_t i = 0; i < n; ++i) mono[i] = std::exp(3.0 * s[i]) - 7.0;
    const double auc = roc_auc(s, y);
    EXPECT_NEAR(auc, roc_pairs(s, y), 1e-12);
    EXPECT_NEAR(roc_auc(mono, y), auc, 1e-12);
    EXPECT_NEAR(auc + roc_auc(s, y, Label::NotMiner), 1.0, 1e-12);
  }
}

TEST(PrcAuc, Examples) {
  std::vector<Label> y{Label::Miner, Label::NotMiner, Label::Miner, Label::NotMiner, Label::NotMiner};
  EXPECT_EQ(prc_auc(std::vector<double>{0.9, 0.1, 0.8, 0.2, 0.3}, y), 1.0);
  EXPECT_NEAR(prc_auc(std::vector<double>(5, 0.4), y), 2.0 / 5.0, 1e-15);
}

TEST(PrcAuc, MatchesThresholdOracle) {
  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 100; ++trial) {
    auto y = random_labels(rng, 100);
    std::vector<double> s(100);
    for (auto& v : s) v = trial % 2 ? double(rng() % 10) / 10.0 : std::uniform_real_distribution<double>(0, 1)(rng);
    const double a = prc_auc(s, y);
    EXPECT_NEAR(a, prc_thresholds(s, y), 1e-9);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
}

TEST(WeightedAverage, Examples) {
  ClassMetrics a;
  a.tp_rate = 0.2;
  a.mcc = -0.4;
  ClassMetrics b;
  b.tp_rate = 0.8;
  b.mcc = 0.4;
  std::pair<ClassMetrics, double> equal[] = {{a, 3.0}, {b, 3.0}};
  EXPECT_DOUBLE_EQ(weighted_average(equal).tp_rate, 0.5);
  EXPECT_DOUBLE_EQ(weighted_average(equal).mcc, 0.0);
  std::pair<ClassMetrics, double> single[] = {{b, 4.0}};
  EXPECT_EQ(weighted_average(single).tp_rate, 0.8);

  ClassMetrics nm, mi;
  nm.tp_rate = 0.998;
  mi.tp_rate = 0.143;
  std::pair<ClassMetrics, double> reference[] = {{nm, 355718.0}, {mi, 1029.0}};
  EXPECT_NEAR(weighted_average(reference).tp_rate, 0.9955, 0.00005);

  std::pair<ClassMetrics, double> zero[] = {{a, 0.0}, {b, 0.0}};
  EXPECT_EQ(code_of([&] { weighted_average(zero); }), Errc::ZeroSupport);
  std::pair<ClassMetrics, double> negative[] = {{a, -1.0}, {b, 2.0}};
  EXPECT_EQ(code_of([&] { weighted_average(negative); }), Errc::ZeroSupport);
}

TEST(MetricTable, NaiveRederivation) {
  std::mt19937_64 rng(2024);
  for (std::size_t n : {10u, 100u, 1000u, 10000u}) {
    auto y = random_labels(rng, n);
    std::vector<double> s(n);
    std::vector<Label> p(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::clamp((y[i] == Label::Miner ? 0.65 : 0.35) + std::normal_distribution<double>(0, 0.2)(rng), 0.0, 1.0);
      p[i] = s[i] > 0.5 ? Label::Miner : Label::NotMiner;
    }
    auto t = metric_table(y, p, s);
    double tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool truth = y[i] == Label::Miner, pred = p[i] == Label::Miner;
      tp += truth && pred;
      fp += !truth && pred;
      fn += truth && !pred;
      tn += !truth && !pred;
    }
    EXPECT_EQ(t.instances, n);
    EXPECT_DOUBLE_EQ(t.miner.precision, tp / (tp + fp));
    EXPECT_DOUBLE_EQ(t.miner.recall, tp / (tp + fn));
    EXPECT_DOUBLE_EQ(t.not_miner.precision, tn / (tn + fn));
    EXPECT_DOUBLE_EQ(t.not_miner.fp_rate, fn / (fn + tp));
    EXPECT_DOUBLE_EQ(t.accuracy, (tp + tn) / double(n));
    EXPECT_NEAR(t.miner.mcc, t.not_miner.mcc, 1e-12);
    if (n <= 1000) {
      EXPECT_NEAR(t.miner.roc_area, roc_pairs(s, y), 1e-12);
      EXPECT_NEAR(t.miner.prc_area, prc_thresholds(s, y), 1e-9);
    }
    const double w_nm = (tn + fp) / double(n), w_m = (tp + fn) / double(n);
    EXPECT_NEAR(t.average.tp_rate, w_nm * t.not_miner.tp_rate + w_m * t.miner.tp_rate, 1e-12);
    EXPECT_NEAR(t.average.roc_area, w_nm * t.not_miner.roc_area + w_m * t.miner.roc_area, 1e-12);
  }
}

TEST(MetricTable, SingleClassLeavesAreasAtZero) {
  std::vector<Label> y(4, Label::NotMiner), p(4, Label::NotMiner);
  std::vector<double> s(4, 0.0);
  auto t = metric_table(y, p, s);
  EXPECT_EQ(t.miner.roc_area, 0.0);
  EXPECT_EQ(t.not_miner.tp_rate, 1.0);
  EXPECT_TRUE(t.miner.undefined_cells);
}

TEST(MetricTable, CsvLayout) {
  std::vector<Label> y{Label::Miner, Label::NotMiner}, p{Label::Miner, Label::NotMiner};
  std::vector<double> s{1.0, 0.0};
  auto csv = metric_table_csv(metric_table(y, p, s));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "Class,TP Rate,FP Rate,Precision,Recall,F Measure,MCC,ROC Area,PRC Area");
  EXPECT_NE(csv.find("\nNot Miner,1,0,1,1,1,1,1,1\n"), std::string::npos);
  EXPECT_NE(csv.find("\nAvg.,"), std::string::npos);
}
