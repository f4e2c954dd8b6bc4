#include <catch2/catch_amalgamated.hpp>

#include "elecrec/synth.hpp"
#include "elecrec/train.hpp"

using namespace elec;

namespace {

TrainConfig toy_config() {
    TrainConfig cfg;
    cfg.alpha = 0.5;
    cfg.lambda = 0.5;
    cfg.sharing_mode = Sharing::ES;
    cfg.batch_size = 8;
    cfg.max_len = 10;
    cfg.hidden = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.dropout = 0.1;
    cfg.epochs_max = 3;
    cfg.patience = 40;
    cfg.seed = 11;
    return cfg;
}

SplitDataset toy_split() {
    const auto seqs = synth_generate(24, 15, 5, 0.2);
    return leave_one_out_split(seqs, 15);
}

PaddedBatch first_batch(const SplitDataset& split, const TrainConfig& cfg) {
    Batcher b(split, cfg.max_len, cfg.batch_size);
    return b.epoch_batches(123).front();
}

// Mirrors joint_step's forward pass without the optimizer update; lets tests
// inspect gradients and intermediate nodes.
struct JointGraph {
    Tape<float> tape;
    int lnip = -1, ldisc = -1, total = -1;
    SampledBatch sb;
};

void build_joint(JointGraph& g, Model<float>& m, const PaddedBatch& batch, double lambda, double alpha,
                 std::uint64_t rng_seed) {
    const int B = batch.batch, T = batch.max_len;
    Rng dropout_rng = Rng(rng_seed).fork(2);
    Rng sampler_rng = Rng(rng_seed).fork(3);
    const int gen_h = encode(g.tape, m.gen, batch.input_ids, batch.validity, B, T, true, dropout_rng);
    const int glog = generator_logits(g.tape, gen_h, g.tape.param(*m.gen.item_emb));
    g.lnip = nip_loss(g.tape, glog, batch.target_ids, batch.validity);
    g.total = g.lnip;
    if (lambda > 0.0) {
        std::vector<std::vector<int>> positions(static_cast<size_t>(B));
        for (int b = 0; b < B; ++b)
            positions[static_cast<size_t>(b)] = sample_positions(
                std::span<const std::uint8_t>(batch.validity.data() + static_cast<size_t>(b) * T,
                                              static_cast<size_t>(T)),
                alpha, sampler_rng);
        g.sb = sample_replacements(batch, positions, g.tape.val(glog), SamplerMode::Multinomial, sampler_rng);
        const int disc_h = encode(g.tape, m.discriminator(), g.sb.replaced_ids, batch.validity, B, T, true,
                                  dropout_rng);
        const int scores = discriminator_scores(g.tape, disc_h, *m.disc_w, *m.disc_b);
        g.ldisc = discriminator_loss(g.tape, scores, g.sb, batch.validity);
        g.total = add(g.tape, g.lnip, scale(g.tape, g.ldisc, lambda));
    }
}

}  // namespace

TEST_CASE("lambda zero makes the total loss the nip loss and freezes the discriminator") {
    const SplitDataset split = toy_split();
    TrainConfig cfg = toy_config();
    cfg.lambda = 0.0;
    Model<float> m = build_model<float>(cfg, split.num_items);
    const auto w_before = m.disc_w->value.data;
    AdamState<float> adam(cfg.lr);
    Rng drop = Rng(cfg.seed).fork(2), samp = Rng(cfg.seed).fork(3);
    const StepReport rep = joint_step(m, first_batch(split, cfg), adam, drop, samp);
    REQUIRE(rep.loss_total == rep.loss_nip);
    REQUIRE(rep.loss_disc == 0.0);
    REQUIRE(m.disc_w->value.data == w_before);
}

TEST_CASE("elecrec with lambda zero is bit-identical to generator_only, step for step") {
    const SplitDataset split = toy_split();
    TrainConfig cfg_a = toy_config();
    cfg_a.lambda = 0.0;
    cfg_a.dropout = 0.2;
    TrainConfig cfg_b = cfg_a;
    cfg_b.variant = Variant::GeneratorOnly;
    cfg_b.lambda = 0.7;  // ignored: the variant pins the effective lambda to 0

    Model<float> ma = build_model<float>(cfg_a, split.num_items);
    Model<float> mb = build_model<float>(cfg_b, split.num_items);
    AdamState<float> adam_a(cfg_a.lr), adam_b(cfg_b.lr);
    Rng drop_a = Rng(cfg_a.seed).fork(2), samp_a = Rng(cfg_a.seed).fork(3);
    Rng drop_b = Rng(cfg_b.seed).fork(2), samp_b = Rng(cfg_b.seed).fork(3);
    Batcher batcher(split, cfg_a.max_len, cfg_a.batch_size);
    for (int epoch = 0; epoch < 3; ++epoch) {
        for (const PaddedBatch& batch : batcher.epoch_batches(1000 + static_cast<std::uint64_t>(epoch))) {
            joint_step(ma, batch, adam_a, drop_a, samp_a);
            joint_step(mb, batch, adam_b, drop_b, samp_b);
        }
    }
    const auto pa = ma.gen.params(true);
    const auto pb = mb.gen.params(true);
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) REQUIRE(pa[i]->value.data == pb[i]->value.data);
}

TEST_CASE("no gradient reaches generator-only parameters through the discrete sample") {
    const SplitDataset split = toy_split();
    TrainConfig cfg = toy_config();
    cfg.dropout = 0.0;
    const PaddedBatch batch = first_batch(split, cfg);

    Model<float> m1 = build_model<float>(cfg, split.num_items);
    JointGraph g1;
    build_joint(g1, m1, batch, 1.0, cfg.alpha, cfg.seed);
    g1.tape.backward(g1.total);

    Model<float> m2 = build_model<float>(cfg, split.num_items);
    JointGraph g2;
    build_joint(g2, m2, batch, 0.0, cfg.alpha, cfg.seed);
    g2.tape.backward(g2.total);

    // Generator encoder weights (shared embedding excluded) get exactly the
    // lambda=0 gradients: the discriminator path is detached at the sample.
    const auto p1 = m1.gen.params(false);
    const auto p2 = m2.gen.params(false);
    for (size_t i = 0; i < p1.size(); ++i) REQUIRE(p1[i]->grad.data == p2[i]->grad.data);
}

TEST_CASE("shared embedding gradients add across the two losses under ES") {
    const SplitDataset split = toy_split();
    TrainConfig cfg = toy_config();
    cfg.dropout = 0.0;
    const double lambda = 0.6;
    const PaddedBatch batch = first_batch(split, cfg);

    // Joint pass.
    Model<float> m = build_model<float>(cfg, split.num_items);
    JointGraph joint;
    build_joint(joint, m, batch, lambda, cfg.alpha, cfg.seed);
    joint.tape.backward(joint.total);
    const auto grad_joint = m.gen.item_emb->grad.data;

    // NIP-only pass on fresh-but-identical parameters.
    Model<float> m_nip = build_model<float>(cfg, split.num_items);
    JointGraph only_nip;
    build_joint(only_nip, m_nip, batch, 0.0, cfg.alpha, cfg.seed);
    only_nip.tape.backward(only_nip.total);
    const auto grad_nip = m_nip.gen.item_emb->grad.data;

    // Disc-only pass: same sampled batch arises from the same seed; backward
    // from lambda * L_disc alone.
    Model<float> m_disc = build_model<float>(cfg, split.num_items);
    JointGraph disc;
    build_joint(disc, m_disc, batch, lambda, cfg.alpha, cfg.seed);
    disc.tape.backward(scale(disc.tape, disc.ldisc, lambda));
    const auto grad_disc = m_disc.gen.item_emb->grad.data;

    REQUIRE(joint.sb.replaced_ids == disc.sb.replaced_ids);
    for (size_t i = 0; i < grad_joint.size(); ++i)
        REQUIRE(static_cast<double>(grad_joint[i]) ==
                Catch::Approx(static_cast<double>(grad_nip[i]) + static_cast<double>(grad_disc[i])).margin(1e-6));
}

TEST_CASE("alpha zero with positive lambda trains the discriminator on all-real labels") {
    const SplitDataset split = toy_split();
    TrainConfig cfg = toy_config();
    cfg.alpha = 0.0;
    cfg.lambda = 1.0;
    cfg.dropout = 0.0;
    const PaddedBatch batch = first_batch(split, cfg);
    Model<float> m = build_model<float>(cfg, split.num_items);
    JointGraph g;
    build_joint(g, m, batch, cfg.lambda, cfg.alpha, cfg.seed);
    REQUIRE(g.sb.labels == batch.validity);
    REQUIRE(g.sb.replaced_ids == batch.target_ids);
    REQUIRE(static_cast<double>(g.tape.val(g.ldisc).data[0]) > 0.0);
}

TEST_CASE("one optimizer step decreases the joint loss on the same batch") {
    const SplitDataset split = toy_split();
    TrainConfig cfg = toy_config();
    cfg.dropout = 0.0;  // re-evaluation must see the identical objective
    const PaddedBatch batch = first_batch(split, cfg);
    Model<float> m = build_model<float>(cfg, split.num_items);
    JointGraph before;
    build_joint(before, m, batch, cfg.lambda, cfg.alpha, cfg.seed);
    const double loss_before = static_cast<double>(before.tape.val(before.total).data[0]);

    AdamState<float> adam(1e-3);
    Rng drop = Rng(cfg.seed).fork(2), samp = Rng(cfg.seed).fork(3);
    joint_step(m, batch, adam, drop, samp);

    JointGraph after;
    build_joint(after, m, batch, cfg.lambda, cfg.alpha, cfg.seed);
    const double loss_after = static_cast<double>(after.tape.val(after.total).data[0]);
    REQUIRE(loss_after < loss_before);
}

TEST_CASE("sequential bce draws one negative per valid position, never the target") {
    Rng rng(71);
    for (int trial = 0; trial < 2000; ++trial) {
        const auto target = static_cast<std::int32_t>(1 + rng.uniform_below(6));
        const std::int32_t neg = draw_negative(rng, 6, target);
        REQUIRE(neg != target);
        REQUIRE(neg >= 1);
        REQUIRE(neg <= 6);
    }
    // The step itself runs and reports a finite loss.
    const SplitDataset split = toy_split();
    TrainConfig cfg = toy_config();
    cfg.variant = Variant::SequentialBce;
    Model<float> m = build_model<float>(cfg, split.num_items);
    AdamState<float> adam(cfg.lr);
    Rng drop = Rng(cfg.seed).fork(2), neg = Rng(cfg.seed).fork(4);
    const StepReport rep = seq_bce_step(m, first_batch(split, cfg), adam, drop, neg);
    REQUIRE(std::isfinite(rep.loss_total));
    REQUIRE(rep.loss_disc == 0.0);
}

TEST_CASE("a frozen model stops after exactly patience+1 epochs") {
    const SplitDataset split = toy_split();
    TrainConfig cfg = toy_config();
    cfg.lr = 0.0;  // no parameter can change, so no improvement is possible
    cfg.dropout = 0.0;
    cfg.patience = 1;
    cfg.epochs_max = 50;
    const TrainResult<float> result = train_loop<float>(split, cfg);
    REQUIRE(result.history.size() == 2);
    REQUIRE(result.best_epoch == 1);
}

TEST_CASE("best checkpoint tracks the maximum validation ndcg@10") {
    const SplitDataset split = toy_split();
    TrainConfig cfg = toy_config();
    cfg.epochs_max = 4;
    TrainResult<float> result = train_loop<float>(split, cfg);
    double best = -1.0;
    for (const HistoryRow& row : result.history) best = std::max(best, row.ndcg10);
    REQUIRE(result.best_valid.ndcg10 == Catch::Approx(best));
    // Restored parameters reproduce the best row's metrics exactly.
    Model<float>& m = result.model;
    const MetricsReport re_eval = evaluate_split(m, split, SplitTag::Valid);
    REQUIRE(re_eval.ndcg10 == result.best_valid.ndcg10);
    REQUIRE(re_eval.hr5 == result.best_valid.hr5);
}

TEST_CASE("build_variant maps the four ablation modes") {
    const SplitDataset split = toy_split();
    TrainConfig cfg = toy_config();
    const Model<float> es = build_variant<float>("elecrec_es", cfg, split.num_items);
    REQUIRE(es.cfg.sharing_mode == Sharing::ES);
    REQUIRE(es.disc_enc.has_value());
    REQUIRE(es.disc_enc->item_emb == es.gen.item_emb);  // shared table only
    REQUIRE(es.disc_enc->pos_emb != es.gen.pos_emb);

    const Model<float> fs = build_variant<float>("elecrec_fs", cfg, split.num_items);
    REQUIRE(fs.cfg.sharing_mode == Sharing::FS);
    REQUIRE_FALSE(fs.disc_enc.has_value());
    REQUIRE(&fs.discriminator() == &fs.gen);  // identical encoder parameters

    const Model<float> go = build_variant<float>("generator_only", cfg, split.num_items);
    REQUIRE(go.cfg.variant == Variant::GeneratorOnly);
    REQUIRE(go.cfg.lambda == 0.0);
    REQUIRE(go.disc_w == nullptr);

    const Model<float> sb = build_variant<float>("sequential_bce", cfg, split.num_items);
    REQUIRE(sb.cfg.variant == Variant::SequentialBce);
    REQUIRE(sb.disc_w == nullptr);

    TrainConfig bad = cfg;
    REQUIRE_THROWS_AS(apply_variant(bad, "unknown_mode"), ConfigError);
}

TEST_CASE("history csv formatting is stable") {
    HistoryRow row;
    row.epoch = 3;
    row.split = "valid";
    row.hr5 = 0.125;
    row.hr10 = 0.25;
    row.ndcg5 = 0.0625;
    row.ndcg10 = 0.09375;
    row.loss_nip = 1.5;
    row.loss_disc = 0.75;
    row.wall_ms = 1234;
    REQUIRE(format_history_row(row) == "3,valid,0.125000,0.250000,0.062500,0.093750,1.500000,0.750000,1234");
    REQUIRE(history_header() == "epoch,split,hr5,hr10,ndcg5,ndcg10,loss_nip,loss_disc,wall_ms");
}
