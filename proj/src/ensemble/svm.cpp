#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "densecotrain/ensemble.hpp"
#include "densecotrain/errors.hpp"

namespace densecotrain::ensemble {

std::string_view to_string(Kernel k) {
  switch (k) {
    case Kernel::Linear: return "linear";
    case Kernel::Rbf: return "rbf";
    case Kernel::Poly: return "poly";
  }
  return "rbf";
}

Kernel kernel_from_string(std::string_view s) {
  if (s == "linear") return Kernel::Linear;
  if (s == "rbf") return Kernel::Rbf;
  if (s == "poly") return Kernel::Poly;
  throw ValidationError(fmt::format("unknown SVM kernel '{}'", s));
}

double kernel_value(Kernel k, double gamma, std::span<const double> a, std::span<const double> b) {
  switch (k) {
    case Kernel::Linear: {
      double dot = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
      return dot;
    }
    case Kernel::Rbf: {
      double d2 = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        d2 += d * d;
      }
      return std::exp(-gamma * d2);
    }
    case Kernel::Poly: {
      double dot = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
      const double base = gamma * dot + 1.0;
      return base * base * base;
    }
  }
  return 0.0;
}

double SvmModel::decision(std::span<const double> x) const {
  double f = 0.0;
  for (std::size_t j = 0; j < coef.size(); ++j) {
    f += coef[j] * (kernel_value(kernel, gamma, {support.data() + j * dim, dim}, x) + 1.0);
  }
  return f;
}

double SvmModel::probability(std::span<const double> x) const {
  const double z = platt_a * decision(x) + platt_b;
  return z >= 0 ? std::exp(-z) / (1.0 + std::exp(-z)) : 1.0 / (1.0 + std::exp(z));
}

namespace {

// Platt scaling fitted with the Newton method with backtracking of
// Lin, Lin & Weng (2007). Returns (A, B) with P(y=1|f) = 1/(1+exp(A f + B)).
std::pair<double, double> fit_platt(const std::vector<double>& f, const std::vector<int>& y) {
  double n_pos = 0, n_neg = 0;
  for (int v : y) (v == 1 ? n_pos : n_neg) += 1.0;
  const double hi = (n_pos + 1.0) / (n_pos + 2.0);
  const double lo = 1.0 / (n_neg + 2.0);
  std::vector<double> t(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) t[i] = y[i] == 1 ? hi : lo;

  double A = 0.0, B = std::log((n_neg + 1.0) / (n_pos + 1.0));
  const double sigma = 1e-12, min_step = 1e-10, eps = 1e-5;
  auto objective = [&](double a, double b) {
    double v = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double z = f[i] * a + b;
      v += z >= 0 ? t[i] * z + std::log1p(std::exp(-z)) : (t[i] - 1.0) * z + std::log1p(std::exp(z));
    }
    return v;
  };
  double fval = objective(A, B);
  for (int it = 0; it < 100; ++it) {
    double h11 = sigma, h22 = sigma, h21 = 0.0, g1 = 0.0, g2 = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double z = f[i] * A + B;
      double p, q;
      if (z >= 0) {
        p = std::exp(-z) / (1.0 + std::exp(-z));
        q = 1.0 / (1.0 + std::exp(-z));
      } else {
        p = 1.0 / (1.0 + std::exp(z));
        q = std::exp(z) / (1.0 + std::exp(z));
      }
      const double d2 = p * q;
      h11 += f[i] * f[i] * d2;
      h22 += d2;
      h21 += f[i] * d2;
      const double d1 = t[i] - p;
      g1 += f[i] * d1;
      g2 += d1;
    }
    if (std::abs(g1) < eps && std::abs(g2) < eps) break;
    const double det = h11 * h22 - h21 * h21;
    const double dA = -(h22 * g1 - h21 * g2) / det;
    const double dB = -(-h21 * g1 + h11 * g2) / det;
    const double gd = g1 * dA + g2 * dB;
    double step = 1.0;
    while (step >= min_step) {
      const double nA = A + step * dA, nB = B + step * dB;
      const double nf = objective(nA, nB);
      if (nf < fval + 1e-4 * step * gd) {
        A = nA;
        B = nB;
        fval = nf;
        break;
      }
      step /= 2.0;
    }
    if (step < min_step) break;
  }
  return {A, B};
}

}  // namespace

SvmModel train_svm(const Dataset& data, const SvmParams& p, std::uint64_t seed, std::size_t iterations) {
  if (!(p.c > 0.0)) throw ValidationError("svm C must be > 0");
  if (p.kernel != Kernel::Linear && !(p.gamma > 0.0)) throw ValidationError("svm gamma must be > 0");
  const auto counts = data.class_counts();
  if (counts.size() != 2 || counts[0] == 0 || counts[1] == 0) {
    throw ValidationError("svm training needs binary labels with at least one example of each class");
  }
  const std::size_t n = data.size();
  const std::size_t T = iterations > 0 ? iterations : std::max<std::size_t>(2000, 10 * n);
  const double lambda = 1.0 / (p.c * static_cast<double>(n));

  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = data.label(i) == 1 ? 1.0 : -1.0;

  std::vector<double> gram(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const double k = kernel_value(p.kernel, p.gamma, data.row(i), data.row(j)) + 1.0;
      gram[i * n + j] = k;
      gram[j * n + i] = k;
    }
  }

  // score[i] = sum_j alpha_j y_j K(x_j, x_i); the iterate's decision value at
  // step t is score[i] / (lambda t).
  std::vector<std::size_t> alpha(n, 0);
  std::vector<double> score(n, 0.0);
  Rng rng(derive_seed(seed, {0x5356ULL}));
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (std::size_t t = 1; t <= T; ++t) {
    const std::size_t i = pick(rng);
    if (y[i] * score[i] / (lambda * static_cast<double>(t)) < 1.0) {
      ++alpha[i];
      for (std::size_t j = 0; j < n; ++j) score[j] += y[i] * gram[i * n + j];
    }
  }

  SvmModel model;
  model.kernel = p.kernel;
  model.gamma = p.gamma;
  model.dim = data.dim();
  const double scale = 1.0 / (lambda * static_cast<double>(T));
  for (std::size_t j = 0; j < n; ++j) {
    if (alpha[j] == 0) continue;
    const auto row = data.row(j);
    model.support.insert(model.support.end(), row.begin(), row.end());
    model.coef.push_back(static_cast<double>(alpha[j]) * y[j] * scale);
  }

  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) f[i] = score[i] * scale;
  std::tie(model.platt_a, model.platt_b) = fit_platt(f, data.labels());
  return model;
}

}  // namespace densecotrain::ensemble
