#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dsnet/image.hpp"

namespace dsnet {

// 0 = photograph (negative), 1 = generated (positive).
inline constexpr int kPhotograph = 0;
inline constexpr int kGenerated = 1;

enum class Split { unassigned, train, val, test };

std::string to_string(Split split);
// Empty text maps to unassigned.
Split parse_split(const std::string& text);

struct ImageRecord {
    std::string path;
    int label = kPhotograph;
    Split split = Split::unassigned;
};

struct DatasetManifest {
    std::vector<ImageRecord> records;

    std::size_t count(Split split, int label) const;
    std::size_t count(Split split) const;
    std::vector<ImageRecord> select(Split split) const;
    // ManifestError when the split is empty or lacks a class.
    void require_both_classes(Split split) const;
};

// CSV with header "path,label,split". Relative paths resolve against the manifest's directory.
// All offending rows (bad label, bad split, missing file) are reported together.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

// Stratified, seeded assignment. Per class: train = round(n * r0 / sum), val = round(n * r1 / sum),
// test = the rest.
DatasetManifest make_split(std::vector<ImageRecord> records, std::array<double, 3> ratios,
                           std::uint64_t seed);

struct LabeledImages {
    std::vector<Image> images;  // each [3, side, side]
    std::vector<int> labels;

    std::size_t size() const { return images.size(); }
};

// Decodes and resizes every record of the split.
LabeledImages load_split(const DatasetManifest& manifest, Split split, std::size_t side);

// Stacks the selected images into [N, 3, s, s].
template <typename T>
Tensor<T> stack_images(const LabeledImages& set, std::span<const std::size_t> indices);
template <typename T>
Tensor<T> stack_labels(const LabeledImages& set, std::span<const std::size_t> indices);

// Separable toy corpus: "generated" images are high-frequency noise, "photographs" smooth
// colour gradients. Labels alternate starting with a photograph.
LabeledImages make_synthetic_corpus(std::size_t per_class, std::size_t side, std::uint64_t seed);

} // namespace dsnet
