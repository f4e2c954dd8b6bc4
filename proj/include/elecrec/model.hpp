#pragma once
// Generator + replacement sampler + discriminator. The generator is trained
// with next-item prediction; the sampler swaps a ceil(alpha * valid)-sized
// subset of target positions for generator draws; the discriminator
// classifies each position of the resulting sequence as a real target or not.
// The discrete replacement is non-differentiable: no gradient flows from the
// discriminator loss into the generator through the sample.

#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "elecrec/adam.hpp"
#include "elecrec/config.hpp"
#include "elecrec/data.hpp"
#include "elecrec/encoder.hpp"
#include "elecrec/ops.hpp"

namespace elec {

template <class S>
struct Model {
    TrainConfig cfg;
    int num_items = 0;
    std::unique_ptr<ParamStore<S>> store;
    EncoderParams<S> gen;
    std::optional<EncoderParams<S>> disc_enc;  // separate encoder under ES sharing
    Param<S>* disc_w = nullptr;                // scalar sigmoid head (elecrec only)
    Param<S>* disc_b = nullptr;

    // Under FS the discriminator reuses the generator encoder wholesale.
    const EncoderParams<S>& discriminator() const { return disc_enc ? *disc_enc : gen; }

    // Serving encoder: the discriminator for elecrec, the trained encoder
    // itself for the generator-only and sequential-BCE variants.
    const EncoderParams<S>& ranking_encoder() const {
        return cfg.variant == Variant::Elecrec ? discriminator() : gen;
    }

    std::vector<Param<S>*> all_params() { return store->all(); }
};

// Allocates and initializes all parameters for the configured variant.
// Initialization order is fixed (generator first) so that variants sharing a
// seed agree bit-for-bit on the parameters they have in common.
template <class S>
Model<S> build_model(const TrainConfig& cfg, int num_items) {
    cfg.validate();
    Model<S> m;
    m.cfg = cfg;
    m.num_items = num_items;
    m.store = std::make_unique<ParamStore<S>>();
    EncoderConfig ec;
    ec.num_items = num_items;
    ec.max_len = cfg.max_len;
    ec.hidden = cfg.hidden;
    ec.layers = cfg.layers;
    ec.heads = cfg.heads;
    ec.dropout = cfg.dropout;
    Rng init_rng = Rng(cfg.seed).fork(0x1817);
    m.gen = init_encoder(*m.store, "gen", ec, init_rng);
    if (cfg.variant == Variant::Elecrec) {
        if (cfg.sharing_mode == Sharing::ES)
            m.disc_enc = init_encoder(*m.store, "disc", ec, init_rng, m.gen.item_emb);
        m.disc_w = m.store->add("disc.w", detail::trunc_normal_tensor<S>({cfg.hidden}, init_rng));
        m.disc_b = m.store->add("disc.b", Tensor<S>({1}));
    }
    return m;
}

// Convenience mapping for the ablation variants.
template <class S>
Model<S> build_variant(const std::string& mode, TrainConfig cfg, int num_items) {
    apply_variant(cfg, mode);
    return build_model<S>(cfg, num_items);
}

template <class S>
std::vector<Tensor<S>> snapshot_params(Model<S>& m) {
    std::vector<Tensor<S>> out;
    for (Param<S>* p : m.all_params()) out.push_back(p->value);
    return out;
}

template <class S>
void restore_params(Model<S>& m, const std::vector<Tensor<S>>& snap) {
    auto params = m.all_params();
    if (params.size() != snap.size()) throw ShapeError("restore_params: snapshot size mismatch");
    for (size_t i = 0; i < params.size(); ++i) params[i]->value = snap[i];
}

// ---------------------------------------------------------------------------
// Generator head and NIP loss
// ---------------------------------------------------------------------------

// Similarity logits over the shared item table; padding column forced to -inf.
template <class S>
int generator_logits(Tape<S>& tape, int hidden, int item_emb) {
    return logits_over_items(tape, hidden, item_emb);
}

// Mean negative log-likelihood of the true next item over valid positions.
template <class S>
int nip_loss(Tape<S>& tape, int logits, std::span<const std::int32_t> targets,
             std::span<const std::uint8_t> validity) {
    std::vector<std::uint8_t> ignore(validity.size());
    for (size_t i = 0; i < validity.size(); ++i) ignore[i] = validity[i] ? 0 : 1;
    return softmax_cross_entropy(tape, logits, targets, ignore);
}

// ---------------------------------------------------------------------------
// Replacement sampler
// ---------------------------------------------------------------------------

struct SampledBatch {
    std::vector<std::int32_t> replaced_ids;     // targets with sampled substitutions
    std::vector<std::uint8_t> replacement_mask;  // 1 where a draw happened
    std::vector<std::uint8_t> labels;            // 1 = real target at this position
};

// ceil(alpha * valid_count) distinct positions drawn uniformly from the valid
// region of one row; returned ascending.
inline std::vector<int> sample_positions(std::span<const std::uint8_t> validity_row, double alpha, Rng& rng) {
    std::vector<int> valid;
    for (size_t t = 0; t < validity_row.size(); ++t)
        if (validity_row[t]) valid.push_back(static_cast<int>(t));
    const auto n = static_cast<std::int64_t>(valid.size());
    auto k = static_cast<std::int64_t>(std::ceil(alpha * static_cast<double>(n) - 1e-9));
    k = std::max<std::int64_t>(0, std::min(k, n));
    for (std::int64_t i = 0; i < k; ++i) {
        const auto j = i + static_cast<std::int64_t>(rng.uniform_below(static_cast<std::uint64_t>(n - i)));
        std::swap(valid[static_cast<size_t>(i)], valid[static_cast<size_t>(j)]);
    }
    std::vector<int> out(valid.begin(), valid.begin() + k);
    std::sort(out.begin(), out.end());
    return out;
}

// Draws replacement items at the sampled positions from the generator's
// softmax (or argmax) and labels every position: a position stays "real"
// when it was not replaced, or when the sample happens to hit the original
// target item. Reads logits as plain values; no gradient flows through.
template <class S>
SampledBatch sample_replacements(const PaddedBatch& batch, std::span<const std::vector<int>> positions,
                                 const Tensor<S>& gen_logits, SamplerMode mode, Rng& rng) {
    const int B = batch.batch, T = batch.max_len;
    const int V = gen_logits.last_dim();
    if (gen_logits.rows() != static_cast<std::int64_t>(B) * T)
        throw ShapeError("sample_replacements: logits rows do not match batch");
    if (positions.size() != static_cast<size_t>(B))
        throw ShapeError("sample_replacements: need one position list per row");
    SampledBatch sb;
    sb.replaced_ids = batch.target_ids;
    sb.replacement_mask.assign(batch.validity.size(), 0);
    sb.labels = batch.validity;  // valid & untouched -> real
    std::vector<double> prob(static_cast<size_t>(V));
    for (int b = 0; b < B; ++b) {
        for (int t : positions[static_cast<size_t>(b)]) {
            const size_t idx = static_cast<size_t>(b) * T + static_cast<size_t>(t);
            if (t < 0 || t >= T || !batch.validity[idx])
                throw SamplerError("sample_replacements: position " + std::to_string(t) +
                                   " outside the valid region of row " + std::to_string(b));
            const S* row = gen_logits.ptr() + static_cast<std::int64_t>(idx) * V;
            std::int32_t drawn;
            if (mode == SamplerMode::Argmax) {
                int best = 0;
                for (int j = 1; j < V; ++j)
                    if (row[j] > row[best]) best = j;
                drawn = best;
            } else {
                softmax_row(std::span<const S>(row, static_cast<size_t>(V)), prob);
                const double u = rng.uniform();
                double acc = 0.0;
                int pick = -1, last_pos = -1;
                for (int j = 0; j < V; ++j) {
                    if (prob[static_cast<size_t>(j)] <= 0.0) continue;
                    last_pos = j;
                    acc += prob[static_cast<size_t>(j)];
                    if (u < acc) {
                        pick = j;
                        break;
                    }
                }
                drawn = static_cast<std::int32_t>(pick >= 0 ? pick : last_pos);
            }
            sb.replaced_ids[idx] = drawn;
            sb.replacement_mask[idx] = 1;
            sb.labels[idx] = (drawn == batch.target_ids[idx]) ? 1 : 0;
        }
    }
    return sb;
}

// ---------------------------------------------------------------------------
// Discriminator head
// ---------------------------------------------------------------------------

// Per-position logit <w, h_t> + bias; the probability is sigmoid of it,
// applied inside the loss.
template <class S>
int discriminator_scores(Tape<S>& tape, int hidden, Param<S>& w, Param<S>& b) {
    return affine_vec(tape, hidden, tape.param(w), tape.param(b));
}

template <class S>
int discriminator_loss(Tape<S>& tape, int scores, const SampledBatch& sb,
                       std::span<const std::uint8_t> validity) {
    std::vector<std::uint8_t> ignore(validity.size());
    for (size_t i = 0; i < validity.size(); ++i) ignore[i] = validity[i] ? 0 : 1;
    return sigmoid_bce(tape, scores, sb.labels, ignore);
}

// ---------------------------------------------------------------------------
// Training steps
// ---------------------------------------------------------------------------

struct StepReport {
    double loss_nip = 0.0;
    double loss_disc = 0.0;
    double loss_total = 0.0;
};

// One joint update: generator NIP on the original batch, replacement
// sampling, discriminator BCE on the replaced batch, total = nip + lambda *
// disc, one backward, one Adam step. With lambda == 0 the sampler and
// discriminator are skipped entirely, which makes the generator-only variant
// the same code path step for step.
template <class S>
StepReport joint_step(Model<S>& m, const PaddedBatch& batch, AdamState<S>& adam, Rng& dropout_rng,
                      Rng& sampler_rng) {
    const TrainConfig& cfg = m.cfg;
    const int B = batch.batch, T = batch.max_len;
    const double lambda = cfg.variant == Variant::GeneratorOnly ? 0.0 : cfg.lambda;
    Tape<S> tape;
    const int gen_h = encode(tape, m.gen, batch.input_ids, batch.validity, B, T, true, dropout_rng);
    const int glog = generator_logits(tape, gen_h, tape.param(*m.gen.item_emb));
    const int lnip = nip_loss(tape, glog, batch.target_ids, batch.validity);
    StepReport rep;
    rep.loss_nip = static_cast<double>(tape.val(lnip).data[0]);
    int total = lnip;
    if (lambda > 0.0) {
        std::vector<std::vector<int>> positions(static_cast<size_t>(B));
        for (int b = 0; b < B; ++b)
            positions[static_cast<size_t>(b)] = sample_positions(
                std::span<const std::uint8_t>(batch.validity.data() + static_cast<size_t>(b) * T,
                                              static_cast<size_t>(T)),
                cfg.alpha, sampler_rng);
        const SampledBatch sb =
            sample_replacements(batch, positions, tape.val(glog), cfg.sampler_mode, sampler_rng);
        const int disc_h =
            encode(tape, m.discriminator(), sb.replaced_ids, batch.validity, B, T, true, dropout_rng);
        const int scores = discriminator_scores(tape, disc_h, *m.disc_w, *m.disc_b);
        const int ldisc = discriminator_loss(tape, scores, sb, batch.validity);
        rep.loss_disc = static_cast<double>(tape.val(ldisc).data[0]);
        total = add(tape, lnip, scale(tape, ldisc, lambda));
    }
    rep.loss_total = static_cast<double>(tape.val(total).data[0]);
    tape.backward(total);
    auto touched = tape.touched_params();
    adam.step(std::span<Param<S>* const>(touched.data(), touched.size()));
    return rep;
}

// Uniform negative item, redrawn until it differs from the target.
inline std::int32_t draw_negative(Rng& rng, int num_items, std::int32_t target) {
    std::int32_t cand;
    do {
        cand = static_cast<std::int32_t>(1 + rng.uniform_below(static_cast<std::uint64_t>(num_items)));
    } while (cand == target);
    return cand;
}

// SASRec-style baseline step: per valid position, BCE of the true next item
// against one uniformly drawn negative (never equal to the target).
template <class S>
StepReport seq_bce_step(Model<S>& m, const PaddedBatch& batch, AdamState<S>& adam, Rng& dropout_rng,
                        Rng& negative_rng) {
    const int B = batch.batch, T = batch.max_len;
    const auto n = static_cast<size_t>(B) * static_cast<size_t>(T);
    Tape<S> tape;
    const int h = encode(tape, m.gen, batch.input_ids, batch.validity, B, T, true, dropout_rng);
    const int table = tape.param(*m.gen.item_emb);
    std::vector<std::int32_t> neg_ids(n, 0);
    for (size_t i = 0; i < n; ++i)
        if (batch.validity[i]) neg_ids[i] = draw_negative(negative_rng, m.num_items, batch.target_ids[i]);
    const int pos_emb = embedding_lookup(tape, table, batch.target_ids, {B, T});
    const int neg_emb = embedding_lookup(tape, table, neg_ids, {B, T});
    const int s_pos = rows_dot(tape, h, pos_emb);
    const int s_neg = rows_dot(tape, h, neg_emb);
    std::vector<std::uint8_t> ignore(n), ones(n, 1), zeros(n, 0);
    for (size_t i = 0; i < n; ++i) ignore[i] = batch.validity[i] ? 0 : 1;
    const int l_pos = sigmoid_bce(tape, s_pos, ones, ignore);
    const int l_neg = sigmoid_bce(tape, s_neg, zeros, ignore);
    const int total = add(tape, l_pos, l_neg);
    StepReport rep;
    rep.loss_nip = static_cast<double>(tape.val(total).data[0]);
    rep.loss_total = rep.loss_nip;
    tape.backward(total);
    auto touched = tape.touched_params();
    adam.step(std::span<Param<S>* const>(touched.data(), touched.size()));
    return rep;
}

template <class S>
StepReport train_step(Model<S>& m, const PaddedBatch& batch, AdamState<S>& adam, Rng& dropout_rng,
                      Rng& sampler_rng, Rng& negative_rng) {
    if (m.cfg.variant == Variant::SequentialBce) return seq_bce_step(m, batch, adam, dropout_rng, negative_rng);
    return joint_step(m, batch, adam, dropout_rng, sampler_rng);
}

}  // namespace elec
