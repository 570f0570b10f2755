#include "dsnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace dsnet {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// Minimal CSV: fields may be double-quoted, with "" as an escaped quote.
std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                out.back() += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                out.back() += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.emplace_back();
        } else {
            out.back() += ch;
        }
    }
    for (auto& f : out) f = trim(f);
    return out;
}

std::string quote_csv(const std::string& s) {
    if (s.find_first_of(",\"") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) {
        if (ch == '"') q += '"';
        q += ch;
    }
    return q + "\"";
}

} // namespace

std::string to_string(Split split) {
    switch (split) {
    case Split::unassigned: return "";
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "";
}

Split parse_split(const std::string& text) {
    if (text.empty()) return Split::unassigned;
    if (text == "train") return Split::train;
    if (text == "val") return Split::val;
    if (text == "test") return Split::test;
    throw ManifestError("unknown split '" + text + "'");
}

std::size_t DatasetManifest::count(Split split, int label) const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [&](const auto& r) {
        return r.split == split && r.label == label;
    }));
}

std::size_t DatasetManifest::count(Split split) const {
    return count(split, kPhotograph) + count(split, kGenerated);
}

std::vector<ImageRecord> DatasetManifest::select(Split split) const {
    std::vector<ImageRecord> out;
    for (const auto& r : records) {
        if (r.split == split) out.push_back(r);
    }
    return out;
}

void DatasetManifest::require_both_classes(Split split) const {
    const auto photos = count(split, kPhotograph);
    const auto generated = count(split, kGenerated);
    if (photos == 0 || generated == 0) {
        throw ManifestError("split '" + to_string(split) + "' needs both classes (photograph=" +
                            std::to_string(photos) + ", generated=" + std::to_string(generated) +
                            ")");
    }
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ManifestError("cannot open manifest '" + path + "'");
    const fs::path base = fs::path(path).parent_path();

    std::string line;
    if (!std::getline(in, line)) throw ManifestError("manifest '" + path + "' is empty");
    const auto header = split_csv(line);
    if (header.size() < 3 || header[0] != "path" || header[1] != "label" || header[2] != "split") {
        throw ManifestError("manifest header must be 'path,label,split', got '" + trim(line) + "'");
    }

    DatasetManifest manifest;
    std::vector<std::string> problems;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        auto fields = split_csv(line);
        if (fields.size() == 2) fields.emplace_back();
        const std::string where = "row " + std::to_string(row);
        if (fields.size() != 3) {
            problems.push_back(where + ": expected 3 fields");
            continue;
        }
        ImageRecord rec;
        fs::path p(fields[0]);
        if (p.is_relative()) p = base / p;
        rec.path = p.string();
        if (fields[1] == "0") {
            rec.label = kPhotograph;
        } else if (fields[1] == "1") {
            rec.label = kGenerated;
        } else {
            problems.push_back(where + ": unknown label '" + fields[1] + "'");
            continue;
        }
        try {
            rec.split = parse_split(fields[2]);
        } catch (const ManifestError& e) {
            problems.push_back(where + ": " + e.what());
            continue;
        }
        if (!fs::exists(p)) {
            problems.push_back(where + ": missing file '" + rec.path + "'");
            continue;
        }
        manifest.records.push_back(std::move(rec));
    }
    if (!problems.empty()) {
        std::string msg = "manifest '" + path + "' has " + std::to_string(problems.size()) +
                          " bad row(s):";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ManifestError(msg);
    }
    if (manifest.records.empty()) throw ManifestError("manifest '" + path + "' has no records");
    for (int label : {kPhotograph, kGenerated}) {
        const bool any = std::any_of(manifest.records.begin(), manifest.records.end(),
                                     [&](const auto& r) { return r.label == label; });
        if (!any) {
            throw ManifestError("manifest '" + path + "' has no records of class " +
                                std::to_string(label));
        }
    }
    return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ManifestError("cannot write manifest '" + path + "'");
    out << "path,label,split\n";
    for (const auto& r : manifest.records) {
        out << quote_csv(r.path) << ',' << r.label << ',' << to_string(r.split) << '\n';
    }
}

DatasetManifest make_split(std::vector<ImageRecord> records, std::array<double, 3> ratios,
                           std::uint64_t seed) {
    const double total = ratios[0] + ratios[1] + ratios[2];
    if (!(total > 0) || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0) {
        throw ArgumentError("make_split: ratios must be non-negative with a positive sum");
    }
    std::mt19937_64 rng(seed);
    for (int label : {kPhotograph, kGenerated}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (records[i].label == label) idx.push_back(i);
        }
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto n = static_cast<double>(idx.size());
        const auto n_train = std::min<std::size_t>(
            idx.size(), static_cast<std::size_t>(std::llround(n * ratios[0] / total)));
        const auto n_val = std::min<std::size_t>(
            idx.size() - n_train, static_cast<std::size_t>(std::llround(n * ratios[1] / total)));
        for (std::size_t k = 0; k < idx.size(); ++k) {
            records[idx[k]].split = k < n_train           ? Split::train
                                    : k < n_train + n_val ? Split::val
                                                          : Split::test;
        }
    }
    return DatasetManifest{std::move(records)};
}

LabeledImages load_split(const DatasetManifest& manifest, Split split, std::size_t side) {
    LabeledImages out;
    for (const auto& r : manifest.records) {
        if (r.split != split) continue;
        auto img = decode_image(r.path);
        if (img.shape()[1] != side || img.shape()[2] != side) img = resize_bilinear(img, side);
        out.images.push_back(std::move(img));
        out.labels.push_back(r.label);
    }
    return out;
}

template <typename T>
Tensor<T> stack_images(const LabeledImages& set, std::span<const std::size_t> indices) {
    if (indices.empty()) throw ArgumentError("stack_images: empty selection");
    const Shape s = set.images.at(indices[0]).shape();
    std::vector<T> data;
    data.reserve(indices.size() * shape_numel(s));
    for (auto i : indices) {
        const auto& img = set.images.at(i);
        if (img.shape() != s) throw DimensionError("stack_images: images differ in shape");
        for (double v : img.data()) data.push_back(static_cast<T>(v));
    }
    return Tensor<T>({indices.size(), s[0], s[1], s[2]}, std::move(data));
}

template <typename T>
Tensor<T> stack_labels(const LabeledImages& set, std::span<const std::size_t> indices) {
    std::vector<T> data;
    data.reserve(indices.size());
    for (auto i : indices) data.push_back(static_cast<T>(set.labels.at(i)));
    return Tensor<T>({indices.size()}, std::move(data));
}

LabeledImages make_synthetic_corpus(std::size_t per_class, std::size_t side, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    LabeledImages out;
    const auto sd = static_cast<double>(side);
    for (std::size_t i = 0; i < 2 * per_class; ++i) {
        const int label = i % 2 == 0 ? kPhotograph : kGenerated;
        Image img({3, side, side});
        auto d = img.data();
        for (std::size_t c = 0; c < 3; ++c) {
            const double base = 0.25 + 0.5 * u(rng);
            const double gx = 0.4 * (u(rng) - 0.5);
            const double gy = 0.4 * (u(rng) - 0.5);
            const double phase = 2 * std::numbers::pi * u(rng);
            for (std::size_t y = 0; y < side; ++y) {
                for (std::size_t x = 0; x < side; ++x) {
                    const double fx = static_cast<double>(x) / sd - 0.5;
                    const double fy = static_cast<double>(y) / sd - 0.5;
                    double v = base + gx * fx + gy * fy +
                               0.05 * std::sin(2 * std::numbers::pi * fx + phase);
                    if (label == kGenerated) v += 0.5 * (u(rng) - 0.5);
                    d[(c * side + y) * side + x] = std::clamp(v, 0.0, 1.0);
                }
            }
        }
        out.images.push_back(std::move(img));
        out.labels.push_back(label);
    }
    return out;
}

template Tensor<float> stack_images(const LabeledImages&, std::span<const std::size_t>);
template Tensor<double> stack_images(const LabeledImages&, std::span<const std::size_t>);
template Tensor<float> stack_labels(const LabeledImages&, std::span<const std::size_t>);
template Tensor<double> stack_labels(const LabeledImages&, std::span<const std::size_t>);

} // namespace dsnet
