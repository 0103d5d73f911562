#include "myoloop/stats.hpp"

#include <cmath>
#include <numeric>

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "myoloop/error.hpp"

namespace myo {

namespace {

double two_sided_p(double t, double df) {
  const boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

double mean_of(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sum_sq_dev(std::span<const double> x, double mean) {
  double s = 0;
  for (double v : x) s += (v - mean) * (v - mean);
  return s;
}

}  // namespace

Summary summarize(std::span<const double> x) {
  Summary s;
  s.n = x.size();
  if (x.empty()) return s;
  s.mean = mean_of(x);
  if (x.size() > 1) {
    s.sd = std::sqrt(sum_sq_dev(x, s.mean) / static_cast<double>(x.size() - 1));
    s.sem = s.sd / std::sqrt(static_cast<double>(x.size()));
  }
  return s;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::Domain, "paired samples differ in length");
  require(a.size() >= 2, ErrorKind::Domain, "paired t-test needs at least two pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double n = static_cast<double>(d.size());
  const double m = mean_of(d);
  const double var = sum_sq_dev(d, m) / (n - 1);
  require(var > 0 && std::isfinite(var), ErrorKind::Domain, "paired differences have zero variance");
  TTestResult r;
  r.t = m / std::sqrt(var / n);
  r.df = n - 1;
  r.p = two_sided_p(r.t, r.df);
  return r;
}

TTestResult unpaired_t_test(std::span<const double> a, std::span<const double> b) {
  require(a.size() >= 2 && b.size() >= 2, ErrorKind::Domain, "t-test needs two samples per group");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double ma = mean_of(a), mb = mean_of(b);
  const double pooled = (sum_sq_dev(a, ma) + sum_sq_dev(b, mb)) / (na + nb - 2);
  require(pooled > 0, ErrorKind::Domain, "groups have zero variance");
  TTestResult r;
  r.t = (ma - mb) / std::sqrt(pooled * (1 / na + 1 / nb));
  r.df = na + nb - 2;
  r.p = two_sided_p(r.t, r.df);
  return r;
}

AnovaResult one_way_anova(std::span<const std::vector<double>> groups) {
  require(groups.size() >= 2, ErrorKind::Domain, "ANOVA needs at least two groups");
  double total = 0;
  std::size_t n = 0;
  for (const auto& g : groups) {
    require(g.size() >= 2, ErrorKind::Domain, "every ANOVA group needs two samples");
    total += std::accumulate(g.begin(), g.end(), 0.0);
    n += g.size();
  }
  const double grand = total / static_cast<double>(n);
  double ss_between = 0, ss_within = 0;
  for (const auto& g : groups) {
    const double m = mean_of(g);
    ss_between += static_cast<double>(g.size()) * (m - grand) * (m - grand);
    ss_within += sum_sq_dev(g, m);
  }
  AnovaResult r;
  r.df_between = static_cast<double>(groups.size() - 1);
  r.df_within = static_cast<double>(n - groups.size());
  require(ss_within > 0, ErrorKind::Domain, "ANOVA groups have zero within-group variance");
  r.F = (ss_between / r.df_between) / (ss_within / r.df_within);
  const boost::math::fisher_f dist(r.df_between, r.df_within);
  r.p = boost::math::cdf(boost::math::complement(dist, r.F));
  return r;
}

std::vector<PairwiseComparison> pairwise_tests(std::span<const std::vector<double>> groups,
                                               bool paired) {
  std::vector<PairwiseComparison> out;
  const std::size_t k = groups.size();
  const double m = static_cast<double>(k * (k - 1) / 2);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      PairwiseComparison c;
      c.a = i;
      c.b = j;
      try {
        c.test = paired ? paired_t_test(groups[i], groups[j]) : unpaired_t_test(groups[i], groups[j]);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Domain) throw;
        c.test = {};
      }
      c.p_bonferroni = std::min(1.0, c.test.p * m);
      out.push_back(c);
    }
  }
  return out;
}

}  // namespace myo
