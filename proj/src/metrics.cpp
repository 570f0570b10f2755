#include "dsnet/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace dsnet {

MetricsReport metrics_from_counts(std::size_t tp, std::size_t fn, std::size_t tn, std::size_t fp) {
    if (tp + fn == 0) throw MetricsError("no generated samples: TPR undefined");
    if (tn + fp == 0) throw MetricsError("no photograph samples: TNR undefined");
    MetricsReport r;
    r.tp = tp;
    r.fn = fn;
    r.tn = tn;
    r.fp = fp;
    r.tpr = 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn);
    r.tnr = 100.0 * static_cast<double>(tn) / static_cast<double>(tn + fp);
    r.acc = 100.0 * static_cast<double>(tp + tn) / static_cast<double>(r.total());
    return r;
}

MetricsReport metrics_from_logits(std::span<const double> logits, std::span<const int> labels,
                                  double threshold) {
    if (logits.size() != labels.size()) {
        throw DimensionError("metrics_from_logits: " + std::to_string(logits.size()) +
                             " logits for " + std::to_string(labels.size()) + " labels");
    }
    std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const bool positive = 1.0 / (1.0 + std::exp(-logits[i])) >= threshold;
        if (labels[i] == kGenerated) {
            positive ? ++tp : ++fn;
        } else {
            positive ? ++fp : ++tn;
        }
    }
    return metrics_from_counts(tp, fn, tn, fp);
}

std::string format_rate(double rate) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", rate);
    return buf;
}

std::string format_report_table(const MetricsReport& report) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-14s %6s %6s %6s %6s %7s %7s %7s\n", "set", "TP", "FN", "TN",
                  "FP", "TPR", "TNR", "ACC");
    out << line;
    auto row = [&](const MetricsReport& r) {
        std::snprintf(line, sizeof line, "%-14s %6zu %6zu %6zu %6zu %7s %7s %7s\n", r.name.c_str(),
                      r.tp, r.fn, r.tn, r.fp, format_rate(r.tpr).c_str(),
                      format_rate(r.tnr).c_str(), format_rate(r.acc).c_str());
        out << line;
    };
    if (report.rows.empty()) {
        row(report);
    } else {
        for (const auto& r : report.rows) row(r);
        std::snprintf(line, sizeof line, "%-14s %6s %6s %6s %6s %7s %7s %7s\n", "average", "", "",
                      "", "", "", "", format_rate(report.average_acc).c_str());
        out << line;
    }
    return out.str();
}

std::string format_report_kv(const MetricsReport& report) {
    std::ostringstream out;
    auto emit = [&](const std::string& prefix, const MetricsReport& r) {
        out << prefix << "tp=" << r.tp << '\n'
            << prefix << "fn=" << r.fn << '\n'
            << prefix << "tn=" << r.tn << '\n'
            << prefix << "fp=" << r.fp << '\n'
            << prefix << "tpr=" << format_rate(r.tpr) << '\n'
            << prefix << "tnr=" << format_rate(r.tnr) << '\n'
            << prefix << "acc=" << format_rate(r.acc) << '\n';
    };
    if (report.rows.empty()) {
        emit("", report);
    } else {
        for (const auto& r : report.rows) emit(r.name + ".", r);
        out << "average_acc=" << format_rate(report.average_acc) << '\n';
    }
    return out.str();
}

template <typename T>
std::vector<double> predict_logits(DualStreamNet<T>& model, const std::vector<Image>& images,
                                   std::size_t batch_size) {
    if (batch_size == 0) throw ArgumentError("predict_logits: batch_size must be >= 1");
    NoGradGuard guard;
    std::vector<double> out;
    out.reserve(images.size());
    for (std::size_t start = 0; start < images.size(); start += batch_size) {
        const std::size_t end = std::min(images.size(), start + batch_size);
        std::vector<std::size_t> idx(end - start);
        std::iota(idx.begin(), idx.end(), start);
        Shape s = images[start].shape();
        std::vector<T> data;
        data.reserve(idx.size() * shape_numel(s));
        for (auto i : idx) {
            if (images[i].shape() != s) throw DimensionError("predict_logits: mixed image shapes");
            for (double v : images[i].data()) data.push_back(static_cast<T>(v));
        }
        auto logits = model.forward(Tensor<T>({idx.size(), s[0], s[1], s[2]}, std::move(data)), false);
        for (T v : logits.data()) out.push_back(static_cast<double>(v));
    }
    return out;
}

template <typename T>
MetricsReport evaluate(DualStreamNet<T>& model, const LabeledImages& split, double threshold,
                       std::size_t batch_size) {
    if (split.size() == 0) throw MetricsError("evaluate: empty split");
    const auto logits = predict_logits(model, split.images, batch_size);
    return metrics_from_logits(logits, split.labels, threshold);
}

template <typename T>
MetricsReport robustness_eval(DualStreamNet<T>& model, const LabeledImages& split,
                              const std::vector<TransformSpec>& transforms,
                              std::uint64_t master_seed, double threshold,
                              std::size_t batch_size) {
    if (split.size() == 0) throw MetricsError("robustness_eval: empty split");
    if (transforms.empty()) throw ArgumentError("robustness_eval: no transforms");
    MetricsReport report;
    report.name = "robustness";
    for (const auto& spec : transforms) {
        TransformSpec seeded = spec;
        seeded.rng_seed = master_seed;
        std::vector<Image> transformed;
        transformed.reserve(split.size());
        for (std::size_t i = 0; i < split.size(); ++i) {
            transformed.push_back(apply_transform(split.images[i], seeded, i));
        }
        const auto logits = predict_logits(model, transformed, batch_size);
        auto row = metrics_from_logits(logits, split.labels, threshold);
        row.name = to_string(spec.kind);
        report.rows.push_back(row);
    }
    double acc_sum = 0;
    for (const auto& r : report.rows) {
        report.tp += r.tp;
        report.fn += r.fn;
        report.tn += r.tn;
        report.fp += r.fp;
        acc_sum += r.acc;
    }
    report.average_acc = acc_sum / static_cast<double>(report.rows.size());
    const auto pooled = metrics_from_counts(report.tp, report.fn, report.tn, report.fp);
    report.tpr = pooled.tpr;
    report.tnr = pooled.tnr;
    report.acc = pooled.acc;
    return report;
}

std::vector<TransformSpec> default_robustness_transforms() {
    std::vector<TransformSpec> out;
    for (auto k : kAllTransforms) out.push_back(TransformSpec{k, std::nullopt, 0});
    return out;
}

#define DSNET_INSTANTIATE_METRICS(T)                                                              \
    template std::vector<double> predict_logits(DualStreamNet<T>&, const std::vector<Image>&,      \
                                                std::size_t);                                     \
    template MetricsReport evaluate(DualStreamNet<T>&, const LabeledImages&, double, std::size_t); \
    template MetricsReport robustness_eval(DualStreamNet<T>&, const LabeledImages&,               \
                                           const std::vector<TransformSpec>&, std::uint64_t,      \
                                           double, std::size_t);

DSNET_INSTANTIATE_METRICS(float)
DSNET_INSTANTIATE_METRICS(double)

} // namespace dsnet
