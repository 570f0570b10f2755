#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dsnet/dataset.hpp"
#include "dsnet/image.hpp"
#include "dsnet/model.hpp"

namespace dsnet {

inline constexpr double kDefaultThreshold = 0.5;

struct MetricsReport {
    std::string name = "clean";
    std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
    // Percentages.
    double tpr = 0, tnr = 0, acc = 0;
    // Robustness runs only: one row per transform, and the mean of their accuracies.
    std::vector<MetricsReport> rows;
    double average_acc = 0;

    std::size_t total() const { return tp + fn + tn + fp; }
};

// MetricsError when either class has no samples.
MetricsReport metrics_from_counts(std::size_t tp, std::size_t fn, std::size_t tn, std::size_t fp);

// Positive (generated) when sigmoid(logit) >= threshold.
MetricsReport metrics_from_logits(std::span<const double> logits, std::span<const int> labels,
                                  double threshold = kDefaultThreshold);

// One decimal, e.g. "88.9".
std::string format_rate(double rate);

// Human-readable table; robustness reports get one line per transform plus the average.
std::string format_report_table(const MetricsReport& report);
// key=value lines, stable ordering.
std::string format_report_kv(const MetricsReport& report);

// Inference-mode logits for every image, in order, batched.
template <typename T>
std::vector<double> predict_logits(DualStreamNet<T>& model, const std::vector<Image>& images,
                                   std::size_t batch_size = 32);

template <typename T>
MetricsReport evaluate(DualStreamNet<T>& model, const LabeledImages& split,
                       double threshold = kDefaultThreshold, std::size_t batch_size = 32);

// Each spec is applied to every image; parameters not pinned in the spec are sampled from
// (master_seed, kind, image index).
template <typename T>
MetricsReport robustness_eval(DualStreamNet<T>& model, const LabeledImages& split,
                              const std::vector<TransformSpec>& transforms,
                              std::uint64_t master_seed, double threshold = kDefaultThreshold,
                              std::size_t batch_size = 32);

// The seven kinds, parameters sampled.
std::vector<TransformSpec> default_robustness_transforms();

} // namespace dsnet
