#include "modcomp/metareg.hpp"

#include <algorithm>
#include <cmath>

#include "modcomp/rng.hpp"

namespace modcomp {

namespace {

// Gaussian elimination with partial pivoting.
std::vector<double> solve_linear(Matrix a, std::vector<double> b) {
  const int n = a.rows;
  if (a.cols != n || static_cast<int>(b.size()) != n)
    throw ArgumentError("solve_linear: system is not square");
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r)
      if (std::fabs(a.at(r, col)) > std::fabs(a.at(pivot, col))) pivot = r;
    if (std::fabs(a.at(pivot, col)) < 1e-12)
      throw NumericError("ridge: singular system; try alpha > 0");
    if (pivot != col) {
      for (int j = 0; j < n; ++j) std::swap(a.at(pivot, j), a.at(col, j));
      std::swap(b[pivot], b[col]);
    }
    for (int r = col + 1; r < n; ++r) {
      const double f = a.at(r, col) / a.at(col, col);
      if (f == 0.0) continue;
      for (int j = col; j < n; ++j) a.at(r, j) -= f * a.at(col, j);
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (int r = n - 1; r >= 0; --r) {
    double s = b[r];
    for (int j = r + 1; j < n; ++j) s -= a.at(r, j) * x[j];
    x[r] = s / a.at(r, r);
  }
  return x;
}

std::vector<double> column_means(const Matrix& x) {
  std::vector<double> mu(x.cols, 0.0);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.cols; ++j) mu[j] += x.at(i, j);
  for (double& m : mu) m /= std::max(1, x.rows);
  return mu;
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix: a = v diag(e) v^T.
void jacobi_eigen(Matrix a, std::vector<double>& eigenvalues, Matrix& v) {
  const int n = a.rows;
  v = Matrix(n, n);
  for (int i = 0; i < n; ++i) v.at(i, i) = 1.0;
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (std::fabs(apq) < 1e-300) continue;
        const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < n; ++i) {
          const double aip = a.at(i, p), aiq = a.at(i, q);
          a.at(i, p) = c * aip - s * aiq;
          a.at(i, q) = s * aip + c * aiq;
        }
        for (int i = 0; i < n; ++i) {
          const double api = a.at(p, i), aqi = a.at(q, i);
          a.at(p, i) = c * api - s * aqi;
          a.at(q, i) = s * api + c * aqi;
        }
        for (int i = 0; i < n; ++i) {
          const double vip = v.at(i, p), viq = v.at(i, q);
          v.at(i, p) = c * vip - s * viq;
          v.at(i, q) = s * vip + c * viq;
        }
      }
    }
  }
  eigenvalues.resize(n);
  for (int i = 0; i < n; ++i) eigenvalues[i] = a.at(i, i);
}

// Minimum-norm solve of the (possibly singular) symmetric system g x = rhs.
std::vector<double> solve_sym_pinv(const Matrix& g, const std::vector<double>& rhs) {
  std::vector<double> eig;
  Matrix v;
  jacobi_eigen(g, eig, v);
  const int n = g.rows;
  double emax = 0.0;
  for (double e : eig) emax = std::max(emax, std::fabs(e));
  const double cutoff = emax * 1e-10;
  std::vector<double> vt_rhs(n, 0.0);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) vt_rhs[j] += v.at(i, j) * rhs[i];
  std::vector<double> x(n, 0.0);
  for (int j = 0; j < n; ++j) {
    if (std::fabs(eig[j]) <= cutoff) continue;
    const double coef = vt_rhs[j] / eig[j];
    for (int i = 0; i < n; ++i) x[i] += coef * v.at(i, j);
  }
  return x;
}

std::vector<double> ranks_with_ties(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = midrank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

namespace {

struct NormalEquations {
  Matrix gram;
  std::vector<double> xty;
  std::vector<double> mu;
  double ybar = 0.0;
};

NormalEquations build_normal_equations(const Matrix& x, const std::vector<double>& y, double alpha,
                                       bool fit_intercept) {
  if (x.rows < 1 || x.cols < 1) throw ArgumentError("ridge: empty design matrix");
  if (static_cast<int>(y.size()) != x.rows) throw ArgumentError("ridge: target length mismatch");
  if (alpha < 0.0) throw ArgumentError("ridge: alpha must be non-negative");

  NormalEquations ne;
  ne.mu.assign(x.cols, 0.0);
  if (fit_intercept) {
    ne.mu = column_means(x);
    for (double v : y) ne.ybar += v;
    ne.ybar /= x.rows;
  }
  ne.gram = Matrix(x.cols, x.cols);
  ne.xty.assign(x.cols, 0.0);
  for (int i = 0; i < x.rows; ++i) {
    for (int j = 0; j < x.cols; ++j) {
      const double xj = x.at(i, j) - ne.mu[j];
      ne.xty[j] += xj * (y[i] - ne.ybar);
      for (int l = j; l < x.cols; ++l) ne.gram.at(j, l) += xj * (x.at(i, l) - ne.mu[l]);
    }
  }
  for (int j = 0; j < x.cols; ++j) {
    ne.gram.at(j, j) += alpha;
    for (int l = 0; l < j; ++l) ne.gram.at(j, l) = ne.gram.at(l, j);
  }
  return ne;
}

RegressionModel finish_model(const NormalEquations& ne, std::vector<double> beta, double alpha,
                             bool fit_intercept) {
  RegressionModel model;
  model.alpha = alpha;
  model.coefficients = std::move(beta);
  if (fit_intercept) {
    model.intercept = ne.ybar;
    for (std::size_t j = 0; j < ne.mu.size(); ++j)
      model.intercept -= ne.mu[j] * model.coefficients[j];
  }
  return model;
}

}  // namespace

RegressionModel fit_ridge(const Matrix& x, const std::vector<double>& y, double alpha,
                          bool fit_intercept) {
  NormalEquations ne = build_normal_equations(x, y, alpha, fit_intercept);
  std::vector<double> beta = solve_linear(ne.gram, ne.xty);
  return finish_model(ne, std::move(beta), alpha, fit_intercept);
}

RegressionModel fit_ridge_pinv(const Matrix& x, const std::vector<double>& y, double alpha,
                               bool fit_intercept) {
  NormalEquations ne = build_normal_equations(x, y, alpha, fit_intercept);
  std::vector<double> beta = solve_sym_pinv(ne.gram, ne.xty);
  return finish_model(ne, std::move(beta), alpha, fit_intercept);
}

std::vector<double> predict(const RegressionModel& model, const Matrix& x) {
  if (static_cast<int>(model.coefficients.size()) != x.cols)
    throw ArgumentError("predict: coefficient length mismatch");
  std::vector<double> out(x.rows, model.intercept);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.cols; ++j) out[i] += model.coefficients[j] * x.at(i, j);
  return out;
}

std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  return pearson(ranks_with_ties(x), ranks_with_ties(y));
}

std::vector<int> fold_assignment(int rows, int folds, std::uint64_t seed) {
  std::vector<int> order(rows);
  for (int i = 0; i < rows; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto ha = fnv1a_u64(static_cast<std::uint64_t>(a), fnv1a_u64(seed));
    const auto hb = fnv1a_u64(static_cast<std::uint64_t>(b), fnv1a_u64(seed));
    return ha != hb ? ha < hb : a < b;
  });
  std::vector<int> fold(rows, 0);
  for (int pos = 0; pos < rows; ++pos) fold[order[pos]] = pos % folds;
  return fold;
}

std::vector<double> baseline_mean_diff(const Matrix& x_train, const std::vector<double>& y_train,
                                       const Matrix& x_test, const std::vector<int>& domain_cols,
                                       bool* fell_back) {
  if (domain_cols.empty()) throw ArgumentError("mean-diff baseline: no domain columns");
  std::map<int, std::pair<double, int>> sums;  // domain col -> (sum, count)
  double global_sum = 0.0;
  for (int i = 0; i < x_train.rows; ++i) {
    global_sum += y_train[i];
    for (int c : domain_cols) {
      if (x_train.at(i, c) > 0.5) {
        sums[c].first += y_train[i];
        sums[c].second += 1;
        break;
      }
    }
  }
  const double global_mean = x_train.rows > 0 ? global_sum / x_train.rows : 0.0;
  if (fell_back) *fell_back = false;
  std::vector<double> out(x_test.rows, global_mean);
  for (int i = 0; i < x_test.rows; ++i) {
    bool matched = false;
    for (int c : domain_cols) {
      if (x_test.at(i, c) > 0.5) {
        auto it = sums.find(c);
        if (it != sums.end() && it->second.second > 0) {
          out[i] = it->second.first / it->second.second;
          matched = true;
        }
        break;
      }
    }
    if (!matched && fell_back) *fell_back = true;
  }
  return out;
}

CvResult cross_validate(const Matrix& x, const std::vector<double>& y, const CvSpec& spec) {
  if (x.rows < spec.folds) throw ArgumentError("cross_validate: fewer rows than folds");
  if (spec.folds < 2) throw ArgumentError("cross_validate: need at least two folds");
  const std::vector<int> fold = fold_assignment(x.rows, spec.folds, spec.fold_seed);

  CvResult res;
  std::vector<double> pooled_pred, pooled_true;
  double p_sum = 0.0, s_sum = 0.0;
  int p_count = 0;

  for (int f = 0; f < spec.folds; ++f) {
    std::vector<int> train_idx, test_idx;
    for (int i = 0; i < x.rows; ++i) (fold[i] == f ? test_idx : train_idx).push_back(i);

    auto take = [&](const std::vector<int>& idx) {
      Matrix m(static_cast<int>(idx.size()), x.cols);
      std::vector<double> t(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        t[r] = y[idx[r]];
        for (int j = 0; j < x.cols; ++j) m.at(static_cast<int>(r), j) = x.at(idx[r], j);
      }
      return std::make_pair(std::move(m), std::move(t));
    };
    auto [xtr, ytr] = take(train_idx);
    auto [xte, yte] = take(test_idx);

    std::vector<double> preds;
    if (spec.mean_diff_baseline) {
      preds = baseline_mean_diff(xtr, ytr, xte, spec.domain_onehot_cols);
    } else {
      // standardize continuous columns with train statistics
      for (int c : spec.continuous_cols) {
        double mu = 0, sd = 0;
        for (int i = 0; i < xtr.rows; ++i) mu += xtr.at(i, c);
        mu /= std::max(1, xtr.rows);
        for (int i = 0; i < xtr.rows; ++i) sd += (xtr.at(i, c) - mu) * (xtr.at(i, c) - mu);
        sd = std::sqrt(sd / std::max(1, xtr.rows));
        if (sd < 1e-12) continue;
        for (int i = 0; i < xtr.rows; ++i) xtr.at(i, c) = (xtr.at(i, c) - mu) / sd;
        for (int i = 0; i < xte.rows; ++i) xte.at(i, c) = (xte.at(i, c) - mu) / sd;
      }
      // pinv solve: rank-deficient folds (constant columns, one-hot blocks
      // collinear with the intercept) get the min-norm solution
      RegressionModel model = fit_ridge_pinv(xtr, ytr, spec.alpha, true);
      preds = predict(model, xte);
    }

    CvFoldResult fr;
    fr.pearson = pearson(preds, yte);
    fr.spearman = spearman(preds, yte);
    fr.flagged = !fr.pearson.has_value() || !fr.spearman.has_value();
    if (!fr.flagged) {
      p_sum += *fr.pearson;
      s_sum += *fr.spearman;
      ++p_count;
    } else {
      ++res.flagged_folds;
    }
    res.folds.push_back(fr);
    pooled_pred.insert(pooled_pred.end(), preds.begin(), preds.end());
    pooled_true.insert(pooled_true.end(), yte.begin(), yte.end());
  }

  res.pearson_mean = p_count > 0 ? p_sum / p_count : 0.0;
  res.spearman_mean = p_count > 0 ? s_sum / p_count : 0.0;
  res.pooled_pearson = pearson(pooled_pred, pooled_true).value_or(0.0);
  res.pooled_spearman = spearman(pooled_pred, pooled_true).value_or(0.0);
  double yb = 0.0;
  for (double v : pooled_true) yb += v;
  yb /= std::max<std::size_t>(1, pooled_true.size());
  double sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < pooled_true.size(); ++i) {
    sse += (pooled_true[i] - pooled_pred[i]) * (pooled_true[i] - pooled_pred[i]);
    sst += (pooled_true[i] - yb) * (pooled_true[i] - yb);
  }
  res.pooled_r2 = sst > 0.0 ? 1.0 - sse / sst : 0.0;
  return res;
}

std::vector<CoefficientEntry> coefficient_report(const RegressionModel& model,
                                                 const std::vector<std::string>& feature_names,
                                                 double cutoff) {
  if (feature_names.size() != model.coefficients.size())
    throw ArgumentError("coefficient_report: name count mismatch");
  std::vector<CoefficientEntry> out;
  for (std::size_t j = 0; j < feature_names.size(); ++j)
    if (std::fabs(model.coefficients[j]) > cutoff)
      out.push_back({feature_names[j], model.coefficients[j]});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (std::fabs(a.value) != std::fabs(b.value)) return std::fabs(a.value) > std::fabs(b.value);
    return a.name < b.name;
  });
  return out;
}

FeatureTable build_features(const std::vector<CompositionRow>& rows,
                            const std::map<std::string, double>& base_ppls,
                            const std::vector<std::string>& training_domains,
                            const std::vector<std::string>& strategies,
                            const std::vector<std::string>& methods,
                            const std::vector<std::string>& eval_domains) {
  if (rows.empty()) throw DataError("build_features: no composition rows");
  FeatureTable t;
  for (const auto& d : training_domains) t.column_names.push_back("w_" + d);
  t.column_names.push_back("n_adapters");
  for (const auto& m : methods) t.column_names.push_back("method_" + m);
  for (const auto& s : strategies) t.column_names.push_back("strategy_" + s);
  for (const auto& d : eval_domains) t.column_names.push_back("domain_" + d);

  const int n_dom = static_cast<int>(training_domains.size());
  for (int j = 0; j <= n_dom; ++j) t.continuous_cols.push_back(j);  // weights + n_adapters
  const int domain_base = n_dom + 1 + static_cast<int>(methods.size() + strategies.size());
  for (std::size_t j = 0; j < eval_domains.size(); ++j)
    t.domain_onehot_cols.push_back(domain_base + static_cast<int>(j));

  t.x = Matrix(static_cast<int>(rows.size()), static_cast<int>(t.column_names.size()));
  auto index_of = [](const std::vector<std::string>& v, const std::string& s, const char* what) {
    auto it = std::find(v.begin(), v.end(), s);
    if (it == v.end()) throw DataError(std::string("build_features: unknown ") + what + " '" + s + "'");
    return static_cast<int>(it - v.begin());
  };

  for (std::size_t r = 0; r < rows.size(); ++r) {
    const CompositionRow& row = rows[r];
    auto bit = base_ppls.find(row.eval_domain);
    if (bit == base_ppls.end())
      throw DataError("build_features: missing baseline perplexity for '" + row.eval_domain + "'");
    const int i = static_cast<int>(r);
    for (int j = 0; j < n_dom; ++j) {
      auto wit = row.adapter_weights.find(training_domains[j]);
      t.x.at(i, j) = wit == row.adapter_weights.end() ? 0.0 : wit->second;
    }
    t.x.at(i, n_dom) = static_cast<double>(row.k);
    t.x.at(i, n_dom + 1 + index_of(methods, row.method, "method")) = 1.0;
    t.x.at(i, n_dom + 1 + static_cast<int>(methods.size()) +
                 index_of(strategies, row.strategy, "strategy")) = 1.0;
    t.x.at(i, domain_base + index_of(eval_domains, row.eval_domain, "eval domain")) = 1.0;
    t.y.push_back((bit->second - row.mean_perplexity) / bit->second);
    t.row_keys.push_back(row.strategy + "|" + row.method + "|" + row.weighting + "|" +
                         std::to_string(row.k) + "|" + row.eval_domain);
  }
  return t;
}

}  // namespace modcomp
