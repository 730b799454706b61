#pragma once

// Training loop: seeded shuffling, augmentation, batching, Adam updates,
// validation-mDSC early stopping, best-epoch weight snapshot.

#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "fseg/checkpoint.hpp"
#include "fseg/data.hpp"
#include "fseg/loss.hpp"
#include "fseg/metrics.hpp"
#include "fseg/model.hpp"
#include "fseg/optim.hpp"

namespace fseg {

struct TrainError : std::runtime_error {
    size_t epoch = 0, batch = 0;
    TrainError(const std::string& msg, size_t e, size_t b)
        : std::runtime_error(msg), epoch(e), batch(b) {}
};

template <typename T>
struct TrainConfig {
    double lr = 1e-4;
    size_t batch = 16;
    size_t max_epochs = 500;
    size_t patience = 50;
    uint64_t seed = 1;
    std::array<T, 5> head_weights{T(1), T(1), T(1), T(1), T(1)};
    bool augment_enabled = true;

    void validate() const {
        if (lr <= 0) throw std::invalid_argument("train config: lr must be positive");
        if (batch == 0) throw std::invalid_argument("train config: batch must be positive");
        if (patience < 1) throw std::invalid_argument("train config: patience must be >= 1");
        if (patience > max_epochs)
            throw std::invalid_argument("train config: patience exceeds max_epochs");
    }
};

struct EpochRecord {
    size_t epoch;
    double train_loss;
    double val_mdsc;
};

template <typename T>
struct TrainResult {
    std::vector<EpochRecord> log;
    Checkpoint best;  // weights at the best validation epoch
    double best_val_mdsc = 0.0;
    size_t best_epoch = 0;
    size_t steps = 0;
};

inline std::string format_epoch(const EpochRecord& r) {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed << "epoch=" << r.epoch << " train_loss=" << r.train_loss
       << " val_mdsc=" << r.val_mdsc;
    return os.str();
}

template <typename T>
Tensor<T> stack_samples(const std::vector<Sample>& batch, bool masks) {
    const size_t c = masks ? 1 : 3;
    const size_t h = batch[0].image.dim(1), w = batch[0].image.dim(2);
    std::vector<T> data(batch.size() * c * h * w);
    for (size_t b = 0; b < batch.size(); ++b) {
        const auto& src = masks ? batch[b].mask.data() : batch[b].image.data();
        for (size_t i = 0; i < c * h * w; ++i) data[b * c * h * w + i] = (T)src[i];
    }
    return Tensor<T>(Shape{batch.size(), c, h, w}, std::move(data));
}

// optional per-epoch callback (epoch record already formatted by the CLI)
template <typename T>
TrainResult<T> train(FocusNet<T>& model, const std::vector<Sample>& train_set,
                     const std::vector<Sample>& val_set, const TrainConfig<T>& cfg,
                     const std::function<void(const EpochRecord&)>& on_epoch = {},
                     size_t max_steps = 0, double stop_at_mdsc = 0.0) {
    cfg.validate();
    if (train_set.empty()) throw DataError("train: empty training set");
    if (val_set.empty()) throw DataError("train: empty validation set");

    ParamMap<T> params = model.parameters();
    Adam<T> opt;
    opt.init(params);

    Rng root(cfg.seed);
    TrainResult<T> result;
    double best = -1.0;
    size_t since_best = 0;
    bool stop = false;

    for (size_t epoch = 1; epoch <= cfg.max_epochs && !stop; ++epoch) {
        Rng erng = root.split("epoch" + std::to_string(epoch));
        std::vector<size_t> order(train_set.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        // Fisher-Yates with the epoch stream
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[erng.below(i)]);

        double loss_sum = 0.0;
        size_t nbatches = 0;
        for (size_t start = 0; start < order.size(); start += cfg.batch) {
            const size_t end = std::min(order.size(), start + cfg.batch);
            std::vector<Sample> batch;
            for (size_t i = start; i < end; ++i) {
                if (cfg.augment_enabled) {
                    Rng arng = erng.split("aug" + std::to_string(order[i]));
                    batch.push_back(augment(train_set[order[i]], arng));
                } else {
                    batch.push_back(train_set[order[i]]);
                }
            }
            Tensor<T> images = stack_samples<T>(batch, false);
            Tensor<T> targets = stack_samples<T>(batch, true);

            params.zero_grad();
            Rng frng = erng.split("fwd" + std::to_string(nbatches));
            auto heads = model.forward(images, frng, true);
            Tensor<T> loss = total_loss(heads, targets, cfg.head_weights);
            const double lv = (double)loss.data()[0];
            if (!std::isfinite(lv))
                throw TrainError("non-finite training loss", epoch, nbatches);
            loss.backward();
            opt.step(params, (T)cfg.lr);
            loss_sum += lv;
            ++nbatches;
            ++result.steps;
            if (max_steps > 0 && result.steps >= max_steps) {
                stop = true;
                break;
            }
        }

        MetricsReport val = evaluate(model, val_set);
        EpochRecord rec{epoch, loss_sum / (double)std::max<size_t>(1, nbatches),
                        val.mean.mdsc};
        result.log.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (rec.val_mdsc > best) {
            best = rec.val_mdsc;
            since_best = 0;
            result.best = checkpoint_from_params(params, "");
            result.best_val_mdsc = best;
            result.best_epoch = epoch;
        } else if (++since_best >= cfg.patience) {
            break;
        }
        if (stop_at_mdsc > 0.0 && rec.val_mdsc >= stop_at_mdsc) break;
    }
    return result;
}

}  // namespace fseg
