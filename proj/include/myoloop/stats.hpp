#pragma once

#include <span>
#include <vector>

namespace myo {

struct TTestResult {
  double t = 0;
  double df = 0;
  double p = 1;  // two-sided
};

/// t on the element-wise differences a - b. Throws Domain on unequal
/// lengths, n < 2 or zero difference variance.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

/// Student's two-sample t with pooled variance.
TTestResult unpaired_t_test(std::span<const double> a, std::span<const double> b);

struct AnovaResult {
  double F = 0;
  double df_between = 0;
  double df_within = 0;
  double p = 1;
};

AnovaResult one_way_anova(std::span<const std::vector<double>> groups);

struct PairwiseComparison {
  std::size_t a = 0;
  std::size_t b = 0;
  TTestResult test;
  double p_bonferroni = 1;
};

/// Every pair (i < j), Bonferroni-adjusted by the number of pairs. Pairs whose
/// test is undefined (zero variance) report t = 0, p = 1.
std::vector<PairwiseComparison> pairwise_tests(std::span<const std::vector<double>> groups,
                                               bool paired);

struct Summary {
  std::size_t n = 0;
  double mean = 0;
  double sd = 0;
  double sem = 0;
};

Summary summarize(std::span<const double> x);

}  // namespace myo
