#include "mother/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace mother {

namespace {

void warn_if(const MetricConfig& cfg, const std::string& msg) {
  if (cfg.warn) {
    cfg.warn(msg);
  }
}

/// Common layers of u and v under `filter`, sorted by name so reductions are
/// order-independent of how either model was loaded. Layers present on only
/// one side are skipped (with a note), mirroring the intersecting-layers rule.
std::vector<std::pair<const TensorRecord*, const TensorRecord*>> common_layers(
    const ModelWeights& u, const ModelWeights& v, const LayerFilter& filter,
    const MetricConfig& cfg) {
  const auto v_index = tensor_index(v);
  std::vector<std::pair<const TensorRecord*, const TensorRecord*>> pairs;
  for (const auto& t : u.tensors) {
    if (!filter.matches(t.name)) {
      continue;
    }
    const auto it = v_index.find(t.name);
    if (it == v_index.end()) {
      warn_if(cfg, "layer '" + t.name + "' only in model '" + u.model_id +
                       "', skipped");
      continue;
    }
    pairs.emplace_back(&t, it->second);
  }
  if (cfg.warn) {
    const auto u_index = tensor_index(u);
    for (const auto& t : v.tensors) {
      if (filter.matches(t.name) && !u_index.count(t.name)) {
        warn_if(cfg, "layer '" + t.name + "' only in model '" + v.model_id +
                         "', skipped");
      }
    }
  }
  std::sort(pairs.begin(), pairs.end(),
            [](const auto& a, const auto& b) {
              return a.first->name < b.first->name;
            });
  return pairs;
}

std::vector<const TensorRecord*> selected_layers(const ModelWeights& u,
                                                 const LayerFilter& filter) {
  std::vector<const TensorRecord*> out;
  for (const auto& t : u.tensors) {
    if (filter.matches(t.name)) {
      out.push_back(&t);
    }
  }
  std::sort(out.begin(), out.end(),
            [](const TensorRecord* a, const TensorRecord* b) {
              return a->name < b->name;
            });
  return out;
}

void require_same_shape(const TensorRecord& a, const TensorRecord& b) {
  if (a.shape != b.shape) {
    throw Error("shape mismatch for layer '" + a.name + "'");
  }
}

struct LayerMoments {
  double mean = 0;
  double m2 = 0;  // E[(x-mu)^2]
  double m3 = 0;
  double m4 = 0;
};

LayerMoments central_moments(std::span<const float> x) {
  const int64_t n = static_cast<int64_t>(x.size());
  LayerMoments mo;
  mo.mean = sum_values(x) / static_cast<double>(n);
  const double mu = mo.mean;
  const float* p = x.data();
  constexpr int64_t kBlock = 4096;
  KahanSum s2, s3, s4;
  for (int64_t b = 0; b < n; b += kBlock) {
    const int64_t e = std::min(n, b + kBlock);
    double b2 = 0, b3 = 0, b4 = 0;
    for (int64_t i = b; i < e; ++i) {
      const double d = static_cast<double>(p[i]) - mu;
      const double d2 = d * d;
      b2 += d2;
      b3 += d2 * d;
      b4 += d2 * d2;
    }
    s2.add(b2);
    s3.add(b3);
    s4.add(b4);
  }
  mo.m2 = s2.value() / static_cast<double>(n);
  mo.m3 = s3.value() / static_cast<double>(n);
  mo.m4 = s4.value() / static_cast<double>(n);
  return mo;
}

/// Shannon entropy (nats) of a 256-bin histogram over [min, max].
/// Returns nullopt for a constant layer.
std::optional<double> histogram_entropy(std::span<const float> x) {
  float lo = x[0], hi = x[0];
  for (const float v : x) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo)) {
    return std::nullopt;
  }
  constexpr int kBins = 256;
  std::array<int64_t, kBins> counts{};
  const double scale = kBins / (static_cast<double>(hi) - static_cast<double>(lo));
  for (const float v : x) {
    int bin = static_cast<int>((static_cast<double>(v) - lo) * scale);
    bin = std::clamp(bin, 0, kBins - 1);
    ++counts[static_cast<size_t>(bin)];
  }
  const double n = static_cast<double>(x.size());
  KahanSum h;
  for (const int64_t c : counts) {
    if (c > 0) {
      const double p = static_cast<double>(c) / n;
      h.add(-p * std::log(p));
    }
  }
  return h.value();
}

/// Per-layer value of `stat`, or nullopt when the layer is degenerate for it.
std::optional<double> layer_statistic(const TensorRecord& t,
                                      DirectionalStatistic stat) {
  const std::span<const float> x(t.data);
  if (stat == DirectionalStatistic::entropy) {
    return histogram_entropy(x);
  }
  const LayerMoments mo = central_moments(x);
  switch (stat) {
    case DirectionalStatistic::variance:
      return mo.m2;
    case DirectionalStatistic::skewness:
      if (mo.m2 <= 0) {
        return std::nullopt;
      }
      return mo.m3 / std::pow(mo.m2, 1.5);
    case DirectionalStatistic::kurtosis:
      if (mo.m2 <= 0) {
        return std::nullopt;
      }
      return mo.m4 / (mo.m2 * mo.m2);
    default:
      return std::nullopt;
  }
}

}  // namespace

std::string to_string(DirectionalStatistic s) {
  switch (s) {
    case DirectionalStatistic::variance:
      return "variance";
    case DirectionalStatistic::skewness:
      return "skewness";
    case DirectionalStatistic::kurtosis:
      return "kurtosis";
    case DirectionalStatistic::entropy:
      return "entropy";
  }
  return "kurtosis";
}

DirectionalStatistic directional_statistic_from_string(const std::string& s) {
  if (s == "variance") {
    return DirectionalStatistic::variance;
  }
  if (s == "skewness") {
    return DirectionalStatistic::skewness;
  }
  if (s == "kurtosis") {
    return DirectionalStatistic::kurtosis;
  }
  if (s == "entropy") {
    return DirectionalStatistic::entropy;
  }
  throw Error("unknown directional statistic '" + s + "'");
}

LayerFilter::LayerFilter(std::string pattern) : pattern_(std::move(pattern)) {
  if (!pattern_.empty()) {
    try {
      re_ = std::make_shared<const std::regex>(pattern_,
                                               std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
      throw Error("bad layer filter '" + pattern_ + "': " + e.what());
    }
  }
}

bool LayerFilter::matches(std::string_view name) const {
  if (!re_) {
    return true;
  }
  return std::regex_search(name.begin(), name.end(), *re_);
}

const std::string& default_dense_pattern() {
  static const std::string p = R"(dense\w*\.weight$)";
  return p;
}

const std::string& default_lora_pattern() {
  static const std::string p = R"(attn\.(query|value)\.weight$)";
  return p;
}

double layer_l2(const TensorRecord& a, const TensorRecord& b) {
  require_same_shape(a, b);
  return std::sqrt(sum_squared_diff(a.data, b.data));
}

double ft_distance(const ModelWeights& u, const ModelWeights& v,
                   const MetricConfig& cfg) {
  const auto pairs = common_layers(u, v, cfg.distance_filter, cfg);
  if (pairs.empty()) {
    throw Error("no common layers between '" + u.model_id + "' and '" +
                v.model_id + "'");
  }
  KahanSum sum;
  for (const auto& [a, b] : pairs) {
    sum.add(layer_l2(*a, *b));
  }
  return sum.value() / static_cast<double>(pairs.size());
}

int64_t effective_rank(const TensorRecord& m, double epsilon_rel) {
  if (!(epsilon_rel > 0.0) || !(epsilon_rel < 1.0)) {
    throw Error("epsilon_rel must lie in (0, 1)");
  }
  for (const float v : m.data) {
    if (!std::isfinite(v)) {
      throw Error("non-finite entries in tensor '" + m.name + "'");
    }
  }
  const int64_t rows = m.view_rows();
  const int64_t cols = m.view_cols();
  if (rows == 0 || cols == 0) {
    return 0;
  }
  Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic,
                                 Eigen::RowMajor>>
      mf(m.data.data(), rows, cols);
  const Eigen::MatrixXd md = mf.cast<double>();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(md);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0) {
    return 0;
  }
  const double smax = sv(0);
  if (!(smax > 0.0)) {
    return 0;
  }
  const double threshold = epsilon_rel * smax;
  int64_t rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > threshold) {
      ++rank;
    }
  }
  return rank;
}

int64_t lora_distance(const ModelWeights& u, const ModelWeights& v,
                      const MetricConfig& cfg) {
  const auto pairs = common_layers(u, v, cfg.distance_filter, cfg);
  if (pairs.empty()) {
    throw Error("no common layers between '" + u.model_id + "' and '" +
                v.model_id + "'");
  }
  int64_t max_rank = 0;
  TensorRecord diff;
  for (const auto& [a, b] : pairs) {
    require_same_shape(*a, *b);
    diff.name = a->name;
    diff.shape = a->shape;
    diff.data.resize(a->data.size());
    for (size_t i = 0; i < a->data.size(); ++i) {
      diff.data[i] = a->data[i] - b->data[i];
    }
    max_rank = std::max(max_rank, effective_rank(diff, cfg.epsilon_rel));
  }
  return max_rank;
}

double concat_l2_distance(const ModelWeights& u, const ModelWeights& v) {
  MetricConfig cfg;  // match-all filter, no warning sink
  const auto pairs = common_layers(u, v, LayerFilter(), cfg);
  if (pairs.empty()) {
    throw Error("no common layers between '" + u.model_id + "' and '" +
                v.model_id + "'");
  }
  KahanSum sum;
  for (const auto& [a, b] : pairs) {
    require_same_shape(*a, *b);
    sum.add(sum_squared_diff(a->data, b->data));
  }
  return std::sqrt(sum.value());
}

double ablation_statistic(const ModelWeights& u, DirectionalStatistic stat,
                          const MetricConfig& cfg) {
  const auto layers = selected_layers(u, cfg.direction_filter);
  if (layers.empty()) {
    throw Error("direction filter selects no layers of model '" + u.model_id +
                "'");
  }
  KahanSum sum;
  int64_t used = 0;
  for (const TensorRecord* t : layers) {
    const auto value = layer_statistic(*t, stat);
    if (!value) {
      warn_if(cfg, "degenerate layer '" + t->name + "' of model '" +
                       u.model_id + "' skipped in directional score");
      continue;
    }
    sum.add(*value);
    ++used;
  }
  if (used == 0) {
    throw Error("degenerate layer: every selected layer of model '" +
                u.model_id + "' is constant");
  }
  return sum.value();
}

double directional_score(const ModelWeights& u, const MetricConfig& cfg) {
  return ablation_statistic(u, cfg.directional_statistic, cfg);
}

double cosine_similarity(const ModelWeights& u, const ModelWeights& v) {
  MetricConfig cfg;
  const auto pairs = common_layers(u, v, LayerFilter(), cfg);
  if (pairs.empty()) {
    throw Error("no common layers between '" + u.model_id + "' and '" +
                v.model_id + "'");
  }
  KahanSum dot, nu, nv;
  for (const auto& [a, b] : pairs) {
    require_same_shape(*a, *b);
    const float* pa = a->data.data();
    const float* pb = b->data.data();
    const int64_t n = static_cast<int64_t>(a->data.size());
    constexpr int64_t kBlock = 4096;
    for (int64_t s = 0; s < n; s += kBlock) {
      const int64_t e = std::min(n, s + kBlock);
      double bd = 0, bu = 0, bv = 0;
      for (int64_t i = s; i < e; ++i) {
        const double x = pa[i];
        const double y = pb[i];
        bd += x * y;
        bu += x * x;
        bv += y * y;
      }
      dot.add(bd);
      nu.add(bu);
      nv.add(bv);
    }
  }
  const double denom = std::sqrt(nu.value()) * std::sqrt(nv.value());
  if (denom == 0.0) {
    throw Error("zero-norm input to cosine_similarity");
  }
  return dot.value() / denom;
}

}  // namespace mother
