#include "dsnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

namespace dsnet {

void TrainConfig::validate() const {
    if (!(lr0 > 0)) throw ConfigError("lr0 must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (decay_every < 1) throw ConfigError("decay_every must be >= 1");
    if (!(lr_decay > 0)) throw ConfigError("lr_decay must be > 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
        throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (!(eps > 0)) throw ConfigError("eps must be > 0");
}

double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg) {
    return cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.decay_every));
}

template <typename T>
OptimizerState<T> OptimizerState<T>::create(const std::vector<NamedTensor<T>>& params) {
    OptimizerState s;
    for (const auto& p : params) {
        s.m.emplace_back(p.tensor.numel(), T(0));
        s.v.emplace_back(p.tensor.numel(), T(0));
    }
    return s;
}

template <typename T>
void adam_step(std::vector<NamedTensor<T>>& params, OptimizerState<T>& state, double lr,
               const TrainConfig& cfg) {
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw TrainingError("optimizer state tracks " + std::to_string(state.m.size()) +
                            " parameters, model has " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].tensor.has_grad()) {
            throw TrainingError("parameter '" + params[i].name + "' has no gradient");
        }
        if (state.m[i].size() != params[i].tensor.numel()) {
            throw TrainingError("optimizer moment shape mismatch for '" + params[i].name + "'");
        }
    }
    ++state.t;
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T c1 = static_cast<T>(1 - std::pow(cfg.beta1, static_cast<double>(state.t)));
    const T c2 = static_cast<T>(1 - std::pow(cfg.beta2, static_cast<double>(state.t)));
    const T step = static_cast<T>(lr), eps = static_cast<T>(cfg.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto theta = params[i].tensor.data();
        auto g = params[i].tensor.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < theta.size(); ++j) {
            m[j] = b1 * m[j] + (1 - b1) * g[j];
            v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j];
            const T mhat = m[j] / c1;
            const T vhat = v[j] / c2;
            theta[j] -= step * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

template <typename T>
std::vector<NamedTensor<T>> snapshot_state(const DualStreamNet<T>& model) {
    std::vector<NamedTensor<T>> out;
    for (const auto& p : model.parameters()) out.push_back({p.name, p.tensor.clone()});
    for (const auto& b : model.buffers()) out.push_back({b.name, b.tensor.clone()});
    return out;
}

template <typename T>
void restore_state(DualStreamNet<T>& model, const std::vector<NamedTensor<T>>& state) {
    std::size_t k = 0;
    auto restore = [&](std::vector<NamedTensor<T>>& targets) {
        for (auto& t : targets) {
            if (k >= state.size() || state[k].name != t.name ||
                state[k].tensor.shape() != t.tensor.shape()) {
                throw TrainingError("state snapshot does not match model at '" + t.name + "'");
            }
            auto src = state[k++].tensor.data();
            std::copy(src.begin(), src.end(), t.tensor.data().begin());
        }
    };
    restore(model.parameters());
    restore(model.buffers());
}

std::string epoch_record_json(const EpochRecord& r) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["lr"] = r.lr;
    j["train_loss"] = r.train_loss;
    j["train_acc"] = r.train_acc;
    if (r.val) {
        j["val_tpr"] = r.val->tpr;
        j["val_tnr"] = r.val->tnr;
        j["val_acc"] = r.val->acc;
    }
    return j.dump();
}

namespace {

// Mean BCE and accuracy over a set in inference mode.
template <typename T>
std::pair<double, double> inference_loss(DualStreamNet<T>& model, const LabeledImages& set,
                                         std::size_t batch_size) {
    const auto logits = predict_logits(model, set.images, batch_size);
    double loss = 0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double p = std::clamp(1.0 / (1.0 + std::exp(-logits[i])), kProbabilityClamp,
                                    1.0 - kProbabilityClamp);
        const int y = set.labels[i];
        loss -= y == kGenerated ? std::log(p) : std::log(1 - p);
        correct += (p >= kDefaultThreshold) == (y == kGenerated);
    }
    const auto n = static_cast<double>(logits.size());
    return {loss / n, 100.0 * static_cast<double>(correct) / n};
}

// Batch boundaries; a trailing single-sample batch is folded into its predecessor because
// batch statistics need two values per channel once the maps shrink to 1x1.
std::vector<std::pair<std::size_t, std::size_t>> batch_bounds(std::size_t n, std::size_t bs) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t s = 0; s < n; s += bs) out.emplace_back(s, std::min(n, s + bs));
    if (out.size() >= 2 && out.back().second - out.back().first == 1) {
        out[out.size() - 2].second = out.back().second;
        out.pop_back();
    }
    return out;
}

} // namespace

template <typename T>
TrainingReport<T> fit(DualStreamNet<T>& model, const LabeledImages& train, const LabeledImages* val,
                      const TrainConfig& cfg, const TrainCallbacks<T>& callbacks,
                      OptimizerState<T>* state) {
    cfg.validate();
    if (train.size() == 0) throw TrainingError("training split is empty");
    const bool has_photo = std::count(train.labels.begin(), train.labels.end(), kPhotograph) > 0;
    const bool has_gen = std::count(train.labels.begin(), train.labels.end(), kGenerated) > 0;
    if (!has_photo || !has_gen) throw TrainingError("training split needs both classes");
    const bool use_val = val != nullptr && val->size() > 0;

    OptimizerState<T> local;
    if (state == nullptr) {
        local = OptimizerState<T>::create(model.parameters());
        state = &local;
    }

    TrainingReport<T> report;
    {
        auto [loss, acc] = inference_loss(model, train, cfg.batch_size);
        report.initial.lr = lr_at_epoch(0, cfg);
        report.initial.train_loss = loss;
        report.initial.train_acc = acc;
        if (use_val) report.initial.val = evaluate(model, *val, kDefaultThreshold, cfg.batch_size);
    }
    if (callbacks.on_start) callbacks.on_start(report.initial);

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto bounds = batch_bounds(train.size(), cfg.batch_size);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(epoch, cfg);
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0;
        std::size_t correct = 0;
        for (std::size_t b = 0; b < bounds.size(); ++b) {
            const std::span<const std::size_t> idx(order.data() + bounds[b].first,
                                                   bounds[b].second - bounds[b].first);
            auto images = stack_images<T>(train, idx);
            auto labels = stack_labels<T>(train, idx);
            model.zero_grad();
            auto logits = model.forward(images, true);
            auto loss = bce_loss(sigmoid(logits), labels);
            const double value = static_cast<double>(loss.item());
            if (!std::isfinite(value)) {
                throw NumericError("non-finite loss " + std::to_string(value) + " at epoch " +
                                   std::to_string(epoch + 1) + ", batch " + std::to_string(b + 1));
            }
            backward(loss);
            adam_step(model.parameters(), *state, lr, cfg);
            loss_sum += value * static_cast<double>(idx.size());
            const auto lv = logits.data();
            const auto yv = labels.data();
            for (std::size_t i = 0; i < idx.size(); ++i) {
                correct += (lv[i] >= 0) == (yv[i] > T(0.5));
            }
        }
        model.zero_grad();

        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.lr = lr;
        rec.train_loss = loss_sum / static_cast<double>(train.size());
        rec.train_acc = 100.0 * static_cast<double>(correct) / static_cast<double>(train.size());
        if (use_val) rec.val = evaluate(model, *val, kDefaultThreshold, cfg.batch_size);
        report.epochs.push_back(rec);

        const double val_acc = rec.val ? rec.val->acc : -1;
        if (!use_val || val_acc > report.best_val_acc) {
            report.best_val_acc = val_acc;
            report.best_epoch = rec.epoch;
            report.best_state = snapshot_state(model);
            if (callbacks.on_best) callbacks.on_best(rec, model, *state);
        }
        if (callbacks.on_epoch) callbacks.on_epoch(rec);
        if (callbacks.should_stop && callbacks.should_stop(rec, model)) break;
    }
    return report;
}

template <typename T>
TrainingReport<T> fit(DualStreamNet<T>& model, const DatasetManifest& manifest,
                      const TrainConfig& cfg, const TrainCallbacks<T>& callbacks,
                      OptimizerState<T>* state) {
    manifest.require_both_classes(Split::train);
    const auto side = model.config().input_side;
    const auto train = load_split(manifest, Split::train, side);
    std::optional<LabeledImages> val;
    if (manifest.count(Split::val) > 0) {
        manifest.require_both_classes(Split::val);
        val = load_split(manifest, Split::val, side);
    }
    return fit(model, train, val ? &*val : nullptr, cfg, callbacks, state);
}

#define DSNET_INSTANTIATE_TRAINING(T)                                                             \
    template struct OptimizerState<T>;                                                            \
    template void adam_step(std::vector<NamedTensor<T>>&, OptimizerState<T>&, double,             \
                            const TrainConfig&);                                                  \
    template std::vector<NamedTensor<T>> snapshot_state(const DualStreamNet<T>&);                 \
    template void restore_state(DualStreamNet<T>&, const std::vector<NamedTensor<T>>&);           \
    template TrainingReport<T> fit(DualStreamNet<T>&, const LabeledImages&, const LabeledImages*, \
                                   const TrainConfig&, const TrainCallbacks<T>&,                  \
                                   OptimizerState<T>*);                                           \
    template TrainingReport<T> fit(DualStreamNet<T>&, const DatasetManifest&, const TrainConfig&, \
                                   const TrainCallbacks<T>&, OptimizerState<T>*);

DSNET_INSTANTIATE_TRAINING(float)
DSNET_INSTANTIATE_TRAINING(double)

} // namespace dsnet
