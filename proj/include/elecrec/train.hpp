#pragma once
// Epoch loop with per-epoch validation, best-checkpoint tracking by
// validation NDCG@10 and early stopping after `patience` stale epochs.

#include <chrono>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "elecrec/metrics.hpp"
#include "elecrec/model.hpp"

namespace elec {

struct HistoryRow {
    int epoch = 0;
    std::string split;
    double hr5 = 0, hr10 = 0, ndcg5 = 0, ndcg10 = 0;
    double loss_nip = 0, loss_disc = 0;
    long long wall_ms = 0;  // cumulative training time, evaluation excluded
};

inline std::string history_header() { return "epoch,split,hr5,hr10,ndcg5,ndcg10,loss_nip,loss_disc,wall_ms"; }

inline std::string format_history_row(const HistoryRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%d,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%lld", r.epoch, r.split.c_str(), r.hr5,
                  r.hr10, r.ndcg5, r.ndcg10, r.loss_nip, r.loss_disc, r.wall_ms);
    return buf;
}

template <class S>
struct TrainResult {
    Model<S> model;  // best-validation parameters restored
    std::vector<HistoryRow> history;
    int best_epoch = 0;
    MetricsReport best_valid;
};

template <class S>
TrainResult<S> train_loop(const SplitDataset& split, const TrainConfig& cfg, std::ostream* log = nullptr) {
    cfg.validate();
    TrainResult<S> result;
    result.model = build_model<S>(cfg, split.num_items);
    Model<S>& model = result.model;
    Batcher batcher(split, cfg.max_len, cfg.batch_size);
    if (batcher.num_rows() == 0) throw DataError("train_loop: no trainable sequences (all prefixes too short)");
    AdamState<S> adam(cfg.lr);
    Rng dropout_rng = Rng(cfg.seed).fork(2);
    Rng sampler_rng = Rng(cfg.seed).fork(3);
    Rng negative_rng = Rng(cfg.seed).fork(4);
    const Rng shuffle_base = Rng(cfg.seed).fork(5);

    std::vector<Tensor<S>> best_snap = snapshot_params(model);
    double best_ndcg10 = -1.0;
    int stale_epochs = 0;
    long long wall_ms_total = 0;
    using Clock = std::chrono::steady_clock;

    for (int epoch = 1; epoch <= cfg.epochs_max; ++epoch) {
        const std::uint64_t shuffle_seed = shuffle_base.fork(static_cast<std::uint64_t>(epoch)).next_u64();
        const auto batches = batcher.epoch_batches(shuffle_seed);
        double nip_sum = 0, disc_sum = 0;
        const auto t0 = Clock::now();
        for (const PaddedBatch& b : batches) {
            const StepReport rep = train_step(model, b, adam, dropout_rng, sampler_rng, negative_rng);
            nip_sum += rep.loss_nip;
            disc_sum += rep.loss_disc;
        }
        wall_ms_total +=
            std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - t0).count();

        const MetricsReport valid = evaluate_split(model, split, SplitTag::Valid);
        HistoryRow row;
        row.epoch = epoch;
        row.split = valid.split;
        row.hr5 = valid.hr5;
        row.hr10 = valid.hr10;
        row.ndcg5 = valid.ndcg5;
        row.ndcg10 = valid.ndcg10;
        row.loss_nip = nip_sum / static_cast<double>(batches.size());
        row.loss_disc = disc_sum / static_cast<double>(batches.size());
        row.wall_ms = wall_ms_total;
        result.history.push_back(row);
        if (log) (*log) << format_history_row(row) << '\n' << std::flush;

        if (valid.ndcg10 > best_ndcg10) {
            best_ndcg10 = valid.ndcg10;
            best_snap = snapshot_params(model);
            result.best_epoch = epoch;
            result.best_valid = valid;
            stale_epochs = 0;
        } else {
            ++stale_epochs;
            if (stale_epochs >= cfg.patience) break;
        }
    }
    restore_params(model, best_snap);
    return result;
}

}  // namespace elec
