#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "modcomp/errors.hpp"

namespace modcomp {

struct Matrix {
  int rows = 0, cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}
  double& at(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }
};

struct RegressionModel {
  std::vector<double> coefficients;
  double intercept = 0.0;
  double alpha = 0.0;
};

// Closed-form ridge: solves (Xc^T Xc + alpha I) beta = Xc^T yc with the
// intercept kept unpenalized through column centering. alpha = 0 is ordinary
// least squares; singular systems raise NumericError suggesting alpha > 0.
RegressionModel fit_ridge(const Matrix& x, const std::vector<double>& y, double alpha,
                          bool fit_intercept = true);

// Same model through a symmetric pseudo-inverse: rank-deficient designs get
// the minimum-norm least-squares solution instead of an error. Used by the
// CV pipeline, where one-hot blocks and weight features are collinear with
// the intercept by construction.
RegressionModel fit_ridge_pinv(const Matrix& x, const std::vector<double>& y, double alpha,
                               bool fit_intercept = true);

std::vector<double> predict(const RegressionModel& model, const Matrix& x);

// Correlations return nothing when undefined (constant input).
std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y);
std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y);

struct CvFoldResult {
  std::optional<double> pearson;
  std::optional<double> spearman;
  bool flagged = false;  // correlation undefined in this fold
};

struct CvResult {
  std::vector<CvFoldResult> folds;
  double pearson_mean = 0.0;   // over folds with defined correlations
  double spearman_mean = 0.0;
  int flagged_folds = 0;
  double pooled_pearson = 0.0;  // over concatenated held-out predictions
  double pooled_spearman = 0.0;
  double pooled_r2 = 0.0;
};

struct CvSpec {
  double alpha = 0.0;
  bool mean_diff_baseline = false;
  std::vector<int> continuous_cols;    // standardized with train-fold statistics
  std::vector<int> domain_onehot_cols; // consulted by the baseline
  int folds = 10;
  std::uint64_t fold_seed = 11;
};

// Deterministic fold assignment: rows ordered by a seeded hash of their index,
// then dealt round-robin so folds stay balanced.
std::vector<int> fold_assignment(int rows, int folds, std::uint64_t seed);

CvResult cross_validate(const Matrix& x, const std::vector<double>& y, const CvSpec& spec);

// Predicts the train-set mean target of the matching eval-domain one-hot;
// unseen domains fall back to the global mean (flagged).
std::vector<double> baseline_mean_diff(const Matrix& x_train, const std::vector<double>& y_train,
                                       const Matrix& x_test, const std::vector<int>& domain_cols,
                                       bool* fell_back = nullptr);

struct CoefficientEntry {
  std::string name;
  double value = 0.0;
};

// Coefficients sorted by magnitude with |c| <= cutoff omitted.
std::vector<CoefficientEntry> coefficient_report(const RegressionModel& model,
                                                 const std::vector<std::string>& feature_names,
                                                 double cutoff = 0.1);

// ---- feature construction over benchmark output ----

// One seed-averaged composition cell.
struct CompositionRow {
  std::string strategy;
  std::string method;
  std::string weighting;
  int k = 0;
  std::string eval_domain;
  std::map<std::string, double> adapter_weights;  // mean weight per training domain
  double mean_perplexity = 0.0;
};

struct FeatureTable {
  Matrix x;
  std::vector<double> y;  // (ppl_base - ppl_composed) / ppl_base
  std::vector<std::string> column_names;
  std::vector<std::string> row_keys;
  std::vector<int> continuous_cols;
  std::vector<int> domain_onehot_cols;
};

FeatureTable build_features(const std::vector<CompositionRow>& rows,
                            const std::map<std::string, double>& base_ppls,
                            const std::vector<std::string>& training_domains,
                            const std::vector<std::string>& strategies,
                            const std::vector<std::string>& methods,
                            const std::vector<std::string>& eval_domains);

}  // namespace modcomp
