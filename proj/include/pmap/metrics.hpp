#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pmap/geometry.hpp"

namespace pmap {

enum class DepthAlign { None, Median };

struct DepthErrors {
  double rel = 0.0;  // percent
  double tau = 0.0;  // percent
  std::size_t count = 0;
};

inline double median_of(std::vector<double> v) {
  require(!v.empty(), "median of an empty set");
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2) return *mid;
  return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

// Absolute relative error and inlier ratio at 1.03 (symmetric ratio).
inline DepthErrors depth_metrics(const DepthMap& pred, const DepthMap& gt, DepthAlign align = DepthAlign::Median,
                                 double threshold = 1.03) {
  require(pred.values.same_shape(gt.values), "depth_metrics: dimension mismatch");
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < gt.mask.size(); ++k)
    if (pred.mask[k] && gt.mask[k] && gt.values[k] > 0.0 && pred.values[k] > 0.0) idx.push_back(k);
  require(!idx.empty(), "depth_metrics: no jointly valid pixels");
  double s = 1.0;
  if (align == DepthAlign::Median) {
    std::vector<double> ratios;
    for (auto k : idx) ratios.push_back(gt.values[k] / pred.values[k]);
    s = median_of(std::move(ratios));
  }
  std::vector<double> rel, in;
  for (auto k : idx) {
    const double d = s * pred.values[k], g = gt.values[k];
    rel.push_back(std::abs(d - g) / g);
    in.push_back(std::max(d / g, g / d) < threshold ? 1.0 : 0.0);
  }
  const double n = static_cast<double>(idx.size());
  return {100.0 * pairwise_sum(rel) / n, 100.0 * pairwise_sum(in) / n, idx.size()};
}

// Percentage of focals with max(f/g, g/f) < threshold.
inline double focal_accuracy(const std::vector<double>& pred, const std::vector<double>& gt, double threshold = 1.015) {
  require(pred.size() == gt.size(), "focal_accuracy: length mismatch");
  require(!pred.empty(), "focal_accuracy: empty input");
  std::size_t hit = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    require(pred[k] > 0.0 && gt[k] > 0.0, "focal_accuracy: focal lengths must be positive");
    hit += std::max(pred[k] / gt[k], gt[k] / pred[k]) < threshold;
  }
  return 100.0 * static_cast<double>(hit) / static_cast<double>(pred.size());
}

struct AngularError {
  double rot_deg = 0.0;
  double trans_deg = 0.0;
};

// Percentage of pairs with rotation error below `deg`.
inline double accuracy_at(const std::vector<double>& errors, double deg) {
  if (errors.empty()) return 0.0;
  std::size_t hit = 0;
  for (double e : errors) hit += e < deg;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(errors.size());
}

// Mean over integer thresholds 1..max_deg of the fraction with max(rot, trans) < threshold.
inline double maa(const std::vector<AngularError>& errors, int max_deg = 30) {
  require(max_deg >= 1, "maa: max_deg must be positive");
  if (errors.empty()) return 0.0;
  std::vector<double> worst;
  for (const auto& e : errors) {
    require(e.rot_deg >= 0.0 && e.trans_deg >= 0.0, "maa: errors must be nonnegative");
    worst.push_back(std::max(e.rot_deg, e.trans_deg));
  }
  std::sort(worst.begin(), worst.end());
  // counts below each threshold via one sweep over the sorted errors
  std::size_t below = 0, total = 0;
  for (int t = 1; t <= max_deg; ++t) {
    while (below < worst.size() && worst[below] < t) ++below;
    total += below;
  }
  return 100.0 * static_cast<double>(total) / (static_cast<double>(max_deg) * static_cast<double>(worst.size()));
}

// One benchmark row. Absent metrics are left empty.
struct MetricReport {
  std::string label;
  std::size_t samples = 0;
  std::optional<double> depth_rel, depth_tau, focal_acc, rra_at, rta_at, maa30;
  double threshold_deg = 2.0;

  bool operator==(const MetricReport&) const = default;
};

inline nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["label"] = r.label;
  j["samples"] = r.samples;
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
    else j[key] = nullptr;
  };
  put("depth_rel", r.depth_rel);
  put("depth_tau", r.depth_tau);
  put("focal_acc", r.focal_acc);
  put("rra_at", r.rra_at);
  put("rta_at", r.rta_at);
  put("maa30", r.maa30);
  j["threshold_deg"] = r.threshold_deg;
  return j;
}

inline MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport r;
  try {
    r.label = j.at("label").get<std::string>();
    r.samples = j.at("samples").get<std::size_t>();
    auto get = [&](const char* key, std::optional<double>& v) {
      if (j.contains(key) && !j[key].is_null()) v = j[key].get<double>();
    };
    get("depth_rel", r.depth_rel);
    get("depth_tau", r.depth_tau);
    get("focal_acc", r.focal_acc);
    get("rra_at", r.rra_at);
    get("rta_at", r.rta_at);
    get("maa30", r.maa30);
    r.threshold_deg = j.at("threshold_deg").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("metric report: ") + e.what());
  }
  for (const auto* v : {&r.depth_rel, &r.depth_tau, &r.focal_acc, &r.rra_at, &r.rta_at, &r.maa30})
    require(!*v || (**v >= 0.0 && **v <= 100.0 + 1e-9), "metric report: percentage out of range");
  return r;
}

}  // namespace pmap
