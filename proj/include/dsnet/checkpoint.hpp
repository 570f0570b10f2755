#pragma once

#include <string>

#include "dsnet/model.hpp"
#include "dsnet/training.hpp"

namespace dsnet {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointInfo {
    int version = kCheckpointVersion;
    Precision precision = Precision::f32;  // payload element type
    ModelConfig model;
    TrainConfig train;
    std::size_t epoch = 0;
    bool has_optimizer = false;
};

// Layout: "DSNETCKPT\n", header byte length and "\n", JSON header (version, configs, tensor index
// of name/shape/offset), then little-endian payloads in index order. Payload element type
// follows T.
template <typename T>
void save_checkpoint(const std::string& path, const DualStreamNet<T>& model,
                     const TrainConfig& train, std::size_t epoch,
                     const OptimizerState<T>* optimizer = nullptr);

CheckpointInfo read_checkpoint_info(const std::string& path);

// Fills the model (and optimizer, when given and stored). CheckpointError on version mismatch,
// architecture mismatch, missing or misshapen tensors, or truncation.
template <typename T>
CheckpointInfo load_checkpoint(const std::string& path, DualStreamNet<T>& model,
                               OptimizerState<T>* optimizer = nullptr);

// Architecture fields only; the init seed does not affect compatibility.
bool architecture_matches(const ModelConfig& a, const ModelConfig& b, std::string* first_difference);

} // namespace dsnet
