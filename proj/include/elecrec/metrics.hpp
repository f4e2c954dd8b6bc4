#pragma once
// Full-ranking evaluation: every real item is scored for every query, no
// negative sampling. Ties break toward the smaller item id everywhere.

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "elecrec/data.hpp"
#include "elecrec/model.hpp"

namespace elec {

struct MetricsReport {
    double hr5 = 0.0, hr10 = 0.0;
    double ndcg5 = 0.0, ndcg10 = 0.0;
    int user_count = 0;
    std::string split;

    std::string summary() const {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s: HR@5=%.6f HR@10=%.6f NDCG@5=%.6f NDCG@10=%.6f (users=%d)",
                      split.c_str(), hr5, hr10, ndcg5, ndcg10, user_count);
        return buf;
    }
};

inline int hr_at_k(int rank_of_target, int k) { return rank_of_target <= k ? 1 : 0; }

inline double ndcg_at_k(int rank_of_target, int k) {
    return rank_of_target <= k ? 1.0 / std::log2(static_cast<double>(rank_of_target) + 1.0) : 0.0;
}

// 1-based rank of `target` among items 1..num_items under descending score,
// ties resolved toward the smaller id.
template <class ScoreT>
int rank_of_target(std::span<const ScoreT> scores, int num_items, std::int32_t target) {
    const ScoreT st = scores[static_cast<size_t>(target)];
    int rank = 1;
    for (int i = 1; i <= num_items; ++i) {
        if (i == target) continue;
        const ScoreT si = scores[static_cast<size_t>(i)];
        if (si > st || (si == st && i < target)) ++rank;
    }
    return rank;
}

namespace detail {

inline void fill_context_row(std::span<const std::int32_t> context, int T, std::int32_t* ids,
                             std::uint8_t* valid) {
    std::fill_n(ids, T, 0);
    std::fill_n(valid, T, std::uint8_t{0});
    const int keep = std::min<int>(static_cast<int>(context.size()), T);
    const int dst = T - keep;
    for (int i = 0; i < keep; ++i) {
        ids[dst + i] = context[context.size() - static_cast<size_t>(keep) + static_cast<size_t>(i)];
        valid[dst + i] = 1;
    }
}

}  // namespace detail

// Scores every item for a batch of contexts with the model's serving encoder:
// encode, take the hidden state at the last position, dot against the shared
// item table. Returns a [n_contexts x (num_items+1)] score matrix.
template <class S>
Tensor<S> score_contexts(Model<S>& m, std::span<const std::span<const std::int32_t>> contexts) {
    const int T = m.cfg.max_len;
    const int B = static_cast<int>(contexts.size());
    std::vector<std::int32_t> ids(static_cast<size_t>(B) * T);
    std::vector<std::uint8_t> valid(static_cast<size_t>(B) * T);
    for (int r = 0; r < B; ++r) {
        if (contexts[static_cast<size_t>(r)].empty())
            throw DataError("score_contexts: empty context at row " + std::to_string(r));
        detail::fill_context_row(contexts[static_cast<size_t>(r)], T, ids.data() + static_cast<size_t>(r) * T,
                                 valid.data() + static_cast<size_t>(r) * T);
    }
    Tape<S> tape;
    Rng no_dropout(0);
    const int h = encode(tape, m.ranking_encoder(), ids, valid, B, T, false, no_dropout);
    std::vector<std::int32_t> last_rows(static_cast<size_t>(B));
    for (int r = 0; r < B; ++r) last_rows[static_cast<size_t>(r)] = r * T + (T - 1);
    const int h_last = select_rows(tape, h, last_rows);
    const int logits = logits_over_items(tape, h_last, tape.param(*m.ranking_encoder().item_emb));
    return tape.val(logits);
}

// Single-context convenience: a score per item id (index 0 carries the -inf
// surrogate and is excluded from ranking).
template <class S>
std::vector<S> rank_items(std::span<const std::int32_t> context, Model<S>& m) {
    if (context.empty()) throw DataError("rank_items: empty context");
    std::span<const std::int32_t> one[] = {context};
    Tensor<S> scores = score_contexts(m, one);
    return scores.data;
}

enum class SplitTag { Valid, Test };

inline std::string to_string(SplitTag t) { return t == SplitTag::Valid ? "valid" : "test"; }

namespace detail {

struct MetricAccum {
    double hr5 = 0, hr10 = 0, ndcg5 = 0, ndcg10 = 0;
    int n = 0;
    void add(int rank) {
        hr5 += hr_at_k(rank, 5);
        hr10 += hr_at_k(rank, 10);
        ndcg5 += ndcg_at_k(rank, 5);
        ndcg10 += ndcg_at_k(rank, 10);
        ++n;
    }
    MetricsReport report(SplitTag tag) const {
        MetricsReport r;
        r.user_count = n;
        r.split = to_string(tag);
        if (n > 0) {
            r.hr5 = hr5 / n;
            r.hr10 = hr10 / n;
            r.ndcg5 = ndcg5 / n;
            r.ndcg10 = ndcg10 / n;
        }
        return r;
    }
};

}  // namespace detail

// Leave-one-out evaluation: validation ranks the held-out item after the
// train prefix; test additionally appends the validation item to the context.
template <class S>
MetricsReport evaluate_split(Model<S>& m, const SplitDataset& split, SplitTag which) {
    detail::MetricAccum acc;
    const int bs = std::max(1, m.cfg.batch_size);
    std::vector<std::vector<std::int32_t>> ctx_storage;
    std::vector<std::span<const std::int32_t>> ctx_views;
    std::vector<std::int32_t> targets;
    for (size_t start = 0; start < split.users.size(); start += static_cast<size_t>(bs)) {
        const size_t end = std::min(split.users.size(), start + static_cast<size_t>(bs));
        ctx_storage.clear();
        ctx_views.clear();
        targets.clear();
        for (size_t i = start; i < end; ++i) {
            const SplitUser& u = split.users[i];
            std::vector<std::int32_t> ctx = u.train;
            if (which == SplitTag::Test) ctx.push_back(u.valid_target);
            targets.push_back(which == SplitTag::Test ? u.test_target : u.valid_target);
            ctx_storage.push_back(std::move(ctx));
        }
        for (const auto& c : ctx_storage) ctx_views.emplace_back(c.data(), c.size());
        Tensor<S> scores = score_contexts(m, ctx_views);
        const int V1 = scores.last_dim();
        for (size_t i = 0; i < ctx_views.size(); ++i) {
            std::span<const S> row(scores.ptr() + static_cast<std::int64_t>(i) * V1, static_cast<size_t>(V1));
            acc.add(rank_of_target(row, split.num_items, targets[i]));
        }
    }
    return acc.report(which);
}

// Popularity baseline: one static score vector (training counts) for all users.
inline std::vector<double> poprec_rank(std::span<const std::int64_t> counts) {
    std::vector<double> scores(counts.size());
    scores[0] = -std::numeric_limits<double>::infinity();
    for (size_t i = 1; i < counts.size(); ++i) scores[i] = static_cast<double>(counts[i]);
    return scores;
}

inline MetricsReport evaluate_poprec(const SplitDataset& split, SplitTag which) {
    const auto counts = popularity_counts(split);
    const auto scores = poprec_rank(counts);
    detail::MetricAccum acc;
    for (const SplitUser& u : split.users) {
        const std::int32_t target = which == SplitTag::Test ? u.test_target : u.valid_target;
        acc.add(rank_of_target(std::span<const double>(scores), split.num_items, target));
    }
    return acc.report(which);
}

}  // namespace elec
