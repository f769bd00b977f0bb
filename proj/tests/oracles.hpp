// Independent reference implementations used to pin expected values in tests.
// Nothing here may call into the library paths it checks.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mother/common.hpp"
#include "mother/tensor.hpp"

namespace oracle {

/// Plain scalar-loop Euclidean distance in long double.
inline double naive_l2(const std::vector<float>& a,
                       const std::vector<float>& b) {
  long double sum = 0.0L;
  for (size_t i = 0; i < a.size(); ++i) {
    const long double d =
        static_cast<long double>(a[i]) - static_cast<long double>(b[i]);
    sum += d * d;
  }
  return static_cast<double>(std::sqrt(sum));
}

/// Plain kurtosis (m4 / m2^2) in long double.
inline double naive_kurtosis(const std::vector<float>& x) {
  long double mean = 0.0L;
  for (const float v : x) {
    mean += v;
  }
  mean /= static_cast<long double>(x.size());
  long double m2 = 0.0L, m4 = 0.0L;
  for (const float v : x) {
    const long double d = static_cast<long double>(v) - mean;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  m2 /= static_cast<long double>(x.size());
  m4 /= static_cast<long double>(x.size());
  return static_cast<double>(m4 / (m2 * m2));
}

/// Singular values (descending) by one-sided Jacobi rotations. Hand-rolled so
/// rank checks do not share a code path with the library's SVD.
inline std::vector<double> jacobi_singular_values(std::vector<double> a,
                                                  int64_t rows, int64_t cols) {
  if (rows < cols) {  // transpose so columns are the short side
    std::vector<double> t(a.size());
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t c = 0; c < cols; ++c) {
        t[static_cast<size_t>(c * rows + r)] =
            a[static_cast<size_t>(r * cols + c)];
      }
    }
    a.swap(t);
    std::swap(rows, cols);
  }
  auto at = [&](int64_t r, int64_t c) -> double& {
    return a[static_cast<size_t>(r * cols + c)];
  };
  const double eps = 1e-14;
  for (int sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (int64_t p = 0; p < cols - 1; ++p) {
      for (int64_t q = p + 1; q < cols; ++q) {
        long double app = 0, aqq = 0, apq = 0;
        for (int64_t r = 0; r < rows; ++r) {
          app += static_cast<long double>(at(r, p)) * at(r, p);
          aqq += static_cast<long double>(at(r, q)) * at(r, q);
          apq += static_cast<long double>(at(r, p)) * at(r, q);
        }
        if (std::abs(static_cast<double>(apq)) <=
            eps * std::sqrt(static_cast<double>(app * aqq)) + 1e-300) {
          continue;
        }
        rotated = true;
        const double tau = static_cast<double>((aqq - app) / (2.0L * apq));
        const double t = (tau >= 0 ? 1.0 : -1.0) /
                         (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (int64_t r = 0; r < rows; ++r) {
          const double vp = at(r, p);
          const double vq = at(r, q);
          at(r, p) = c * vp - s * vq;
          at(r, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) {
      break;
    }
  }
  std::vector<double> sv(static_cast<size_t>(cols));
  for (int64_t c = 0; c < cols; ++c) {
    long double norm2 = 0;
    for (int64_t r = 0; r < rows; ++r) {
      norm2 += static_cast<long double>(at(r, c)) * at(r, c);
    }
    sv[static_cast<size_t>(c)] = std::sqrt(static_cast<double>(norm2));
  }
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

/// Rank of a double matrix using the Jacobi oracle with a cutoff of
/// tol_rel * sigma_max.
inline int64_t oracle_rank_d(std::vector<double> m, int64_t rows, int64_t cols,
                             double tol_rel) {
  const auto sv = jacobi_singular_values(std::move(m), rows, cols);
  if (sv.empty() || sv[0] <= 0) {
    return 0;
  }
  int64_t rank = 0;
  for (const double s : sv) {
    if (s > tol_rel * sv[0]) {
      ++rank;
    }
  }
  return rank;
}

/// Same cutoff applied to a stored (f32) tensor's 2-D view. f32 rounding puts
/// a noise floor near 1e-7 * sigma_max, so tolerances must sit above it.
inline int64_t oracle_rank(const mother::TensorRecord& t, double tol_rel) {
  return oracle_rank_d(std::vector<double>(t.data.begin(), t.data.end()),
                       t.view_rows(), t.view_cols(), tol_rel);
}

// -- small fixture builders ---------------------------------------------------

inline mother::TensorRecord tensor(const std::string& name,
                                   std::vector<int64_t> shape,
                                   std::vector<float> data) {
  mother::TensorRecord t;
  t.name = name;
  t.shape = std::move(shape);
  t.data = std::move(data);
  return t;
}

inline mother::TensorRecord random_tensor(const std::string& name,
                                          std::vector<int64_t> shape,
                                          mother::Rng& rng,
                                          double sigma = 1.0) {
  mother::TensorRecord t;
  t.name = name;
  t.shape = std::move(shape);
  int64_t n = 1;
  for (const int64_t d : t.shape) {
    n *= d;
  }
  t.data.resize(static_cast<size_t>(n));
  for (auto& v : t.data) {
    v = static_cast<float>(sigma * rng.normal());
  }
  return t;
}

inline mother::ModelWeights model(const std::string& id,
                                  std::vector<mother::TensorRecord> tensors) {
  mother::ModelWeights m;
  m.model_id = id;
  m.tensors = std::move(tensors);
  return m;
}

}  // namespace oracle
