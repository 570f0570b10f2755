#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dsnet/dataset.hpp"
#include "dsnet/metrics.hpp"
#include "dsnet/model.hpp"

namespace dsnet {

struct TrainConfig {
    double lr0 = 2e-4;
    std::size_t batch_size = 64;
    std::size_t epochs = 120;
    double lr_decay = 0.1;
    std::size_t decay_every = 30;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    Precision precision = Precision::f32;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

// lr0 * decay^floor(epoch / decay_every), epochs counted from 0.
double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg);

template <typename T>
struct OptimizerState {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::uint64_t t = 0;

    static OptimizerState create(const std::vector<NamedTensor<T>>& params);
};

// One bias-corrected Adam update over every parameter. TrainingError naming the first parameter
// that has no gradient.
template <typename T>
void adam_step(std::vector<NamedTensor<T>>& params, OptimizerState<T>& state, double lr,
               const TrainConfig& cfg);

struct EpochRecord {
    std::size_t epoch = 0;  // 0 is the pre-training evaluation
    double lr = 0;
    double train_loss = 0;
    double train_acc = 0;  // from the training-mode forward passes
    std::optional<MetricsReport> val;
};

template <typename T>
struct TrainingReport {
    EpochRecord initial;
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_acc = -1;
    // Parameters then buffers at the best validation epoch (or the last epoch without a val set).
    std::vector<NamedTensor<T>> best_state;
};

template <typename T>
struct TrainCallbacks {
    // Receives the pre-training evaluation (epoch 0).
    std::function<void(const EpochRecord&)> on_start;
    std::function<void(const EpochRecord&)> on_epoch;
    // Called when validation accuracy improves.
    std::function<void(const EpochRecord&, DualStreamNet<T>&, const OptimizerState<T>&)> on_best;
    // Returning true ends training after the current epoch.
    std::function<bool(const EpochRecord&, DualStreamNet<T>&)> should_stop;
};

// Seeded per-epoch shuffle, mini-batches (final partial batch kept), BCE, backward, Adam.
// NumericError on a non-finite loss.
template <typename T>
TrainingReport<T> fit(DualStreamNet<T>& model, const LabeledImages& train, const LabeledImages* val,
                      const TrainConfig& cfg, const TrainCallbacks<T>& callbacks = {},
                      OptimizerState<T>* state = nullptr);

// Loads the train and val splits at the model's input side.
template <typename T>
TrainingReport<T> fit(DualStreamNet<T>& model, const DatasetManifest& manifest,
                      const TrainConfig& cfg, const TrainCallbacks<T>& callbacks = {},
                      OptimizerState<T>* state = nullptr);

// Copies of every parameter and buffer, for snapshots.
template <typename T>
std::vector<NamedTensor<T>> snapshot_state(const DualStreamNet<T>& model);
template <typename T>
void restore_state(DualStreamNet<T>& model, const std::vector<NamedTensor<T>>& state);

// One JSON object per line.
std::string epoch_record_json(const EpochRecord& record);

} // namespace dsnet
