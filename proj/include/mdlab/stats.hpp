#pragma once

#include <vector>

// Small statistics helpers used by tests and the benchmark harness.

namespace mdlab {

double mean_of(const std::vector<double>& xs);
double sample_std(const std::vector<double>& xs);

// Upper regularized incomplete gamma Q(a, x).
double gamma_q(double a, double x);

// Survival function of the chi-squared distribution with dof degrees.
double chi2_sf(double stat, int dof);

// Pearson chi-squared statistic of observed counts against expected counts.
double chi2_stat(const std::vector<double>& observed, const std::vector<double>& expected);

// Area under the ROC curve via the rank statistic; ties get midranks.
// scores/labels aligned, label 1 = positive class.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

}  // namespace mdlab
