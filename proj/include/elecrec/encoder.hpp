#pragma once
// Causal pre-norm Transformer encoder over padded item-id sequences.
// Left-padded inputs; attention never reads padding keys or future positions.

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "elecrec/ops.hpp"
#include "elecrec/rng.hpp"
#include "elecrec/tape.hpp"

namespace elec {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kInitStd = 0.02;

struct EncoderConfig {
    int num_items = 0;  // real items 1..num_items; embedding row 0 is padding
    int max_len = 50;
    int hidden = 64;
    int layers = 2;
    int heads = 2;
    double dropout = 0.2;

    int vocab_rows() const { return num_items + 1; }
};

// Owns parameters; pointers into it stay valid for the store's lifetime.
template <class S>
class ParamStore {
public:
    Param<S>* add(std::string name, Tensor<S> value) {
        storage_.emplace_back(std::move(name), std::move(value));
        return &storage_.back();
    }

    std::vector<Param<S>*> all() {
        std::vector<Param<S>*> out;
        for (auto& p : storage_) out.push_back(&p);
        return out;
    }

    Param<S>* find(const std::string& name) {
        for (auto& p : storage_)
            if (p.name == name) return &p;
        return nullptr;
    }

    size_t size() const { return storage_.size(); }

private:
    std::deque<Param<S>> storage_;
};

template <class S>
struct EncoderParams {
    Param<S>* item_emb = nullptr;  // [num_items+1, d], row 0 zeroed at init
    Param<S>* pos_emb = nullptr;   // [T, d]
    struct Block {
        Param<S>*wq, *wk, *wv, *wo;
        Param<S>*w1, *w2;
        Param<S>*ln1_gain, *ln1_bias, *ln2_gain, *ln2_bias;
    };
    std::vector<Block> blocks;
    EncoderConfig cfg;

    // Parameters owned by this encoder (shared item table excluded on request).
    std::vector<Param<S>*> params(bool include_item_emb = true) const {
        std::vector<Param<S>*> out;
        if (include_item_emb) out.push_back(item_emb);
        out.push_back(pos_emb);
        for (const Block& b : blocks)
            for (Param<S>* p : {b.wq, b.wk, b.wv, b.wo, b.w1, b.w2, b.ln1_gain, b.ln1_bias, b.ln2_gain, b.ln2_bias})
                out.push_back(p);
        return out;
    }
};

namespace detail {

template <class S>
Tensor<S> trunc_normal_tensor(std::vector<int> shape, Rng& rng, double std_dev = kInitStd) {
    Tensor<S> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<S>(rng.truncated_normal(std_dev));
    return t;
}

template <class S>
Tensor<S> const_tensor(std::vector<int> shape, S value) {
    Tensor<S> t(std::move(shape));
    t.fill(value);
    return t;
}

}  // namespace detail

// Initializes an encoder in `store` under `prefix`. When `shared_item_emb`
// is given the table is reused instead of allocated (embedding sharing).
template <class S>
EncoderParams<S> init_encoder(ParamStore<S>& store, const std::string& prefix, const EncoderConfig& cfg, Rng& rng,
                              Param<S>* shared_item_emb = nullptr) {
    if (cfg.hidden % cfg.heads != 0)
        throw ConfigError("encoder config: hidden size " + std::to_string(cfg.hidden) +
                          " not divisible by heads " + std::to_string(cfg.heads));
    if (cfg.num_items < 1 || cfg.max_len < 1 || cfg.layers < 1)
        throw ConfigError("encoder config: num_items, max_len and layers must be positive");
    EncoderParams<S> enc;
    enc.cfg = cfg;
    if (shared_item_emb) {
        enc.item_emb = shared_item_emb;
    } else {
        Tensor<S> table = detail::trunc_normal_tensor<S>({cfg.vocab_rows(), cfg.hidden}, rng);
        for (int j = 0; j < cfg.hidden; ++j) table.data[j] = S(0);  // padding row
        enc.item_emb = store.add(prefix + ".item_emb", std::move(table));
    }
    enc.pos_emb = store.add(prefix + ".pos_emb", detail::trunc_normal_tensor<S>({cfg.max_len, cfg.hidden}, rng));
    const int d = cfg.hidden;
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string lp = prefix + ".layer" + std::to_string(l);
        typename EncoderParams<S>::Block b;
        b.wq = store.add(lp + ".wq", detail::trunc_normal_tensor<S>({d, d}, rng));
        b.wk = store.add(lp + ".wk", detail::trunc_normal_tensor<S>({d, d}, rng));
        b.wv = store.add(lp + ".wv", detail::trunc_normal_tensor<S>({d, d}, rng));
        b.wo = store.add(lp + ".wo", detail::trunc_normal_tensor<S>({d, d}, rng));
        b.w1 = store.add(lp + ".ff1", detail::trunc_normal_tensor<S>({d, 4 * d}, rng));
        b.w2 = store.add(lp + ".ff2", detail::trunc_normal_tensor<S>({4 * d, d}, rng));
        b.ln1_gain = store.add(lp + ".ln1_gain", detail::const_tensor<S>({d}, S(1)));
        b.ln1_bias = store.add(lp + ".ln1_bias", detail::const_tensor<S>({d}, S(0)));
        b.ln2_gain = store.add(lp + ".ln2_gain", detail::const_tensor<S>({d}, S(1)));
        b.ln2_bias = store.add(lp + ".ln2_bias", detail::const_tensor<S>({d}, S(0)));
        enc.blocks.push_back(b);
    }
    return enc;
}

// Standalone construction for tests and tools; training code shares a store.
template <class S>
std::pair<ParamStore<S>, EncoderParams<S>> init_params(const EncoderConfig& cfg, std::uint64_t seed) {
    ParamStore<S> store;
    Rng rng = Rng(seed).fork(1);
    EncoderParams<S> enc = init_encoder(store, "enc", cfg, rng);
    return {std::move(store), std::move(enc)};
}

// Forward pass: ids/validity are [B,T] row-major, left-padded. Returns the
// node id of the [B,T,d] hidden states. Dropout only when train_mode.
template <class S>
int encode(Tape<S>& tape, const EncoderParams<S>& enc, std::span<const std::int32_t> ids,
           std::span<const std::uint8_t> validity, int B, int T, bool train_mode, Rng& dropout_rng) {
    const EncoderConfig& cfg = enc.cfg;
    if (T != cfg.max_len) throw ShapeError("encode: batch width " + std::to_string(T) + " != configured max_len " +
                                           std::to_string(cfg.max_len));
    if (ids.size() != static_cast<size_t>(B) * T || validity.size() != ids.size())
        throw ShapeError("encode: ids/validity size mismatch");
    Tensor<S> mask = causal_mask<S>(T, validity, B);
    const int table = tape.param(*enc.item_emb);
    const int pos = tape.param(*enc.pos_emb);
    int x = embedding_lookup(tape, table, ids, {B, T});
    x = add_position_embedding(tape, x, pos, B, T);
    x = dropout(tape, x, cfg.dropout, train_mode, dropout_rng);
    for (const auto& blk : enc.blocks) {
        int h = layer_norm(tape, x, tape.param(*blk.ln1_gain), tape.param(*blk.ln1_bias), kLayerNormEps);
        int q = matmul(tape, h, tape.param(*blk.wq));
        int k = matmul(tape, h, tape.param(*blk.wk));
        int v = matmul(tape, h, tape.param(*blk.wv));
        int a = causal_self_attention(tape, q, k, v, B, T, cfg.heads, mask);
        int o = matmul(tape, a, tape.param(*blk.wo));
        o = dropout(tape, o, cfg.dropout, train_mode, dropout_rng);
        x = add(tape, x, o);
        int h2 = layer_norm(tape, x, tape.param(*blk.ln2_gain), tape.param(*blk.ln2_bias), kLayerNormEps);
        int f = matmul(tape, h2, tape.param(*blk.w1));
        f = gelu(tape, f);
        f = matmul(tape, f, tape.param(*blk.w2));
        f = dropout(tape, f, cfg.dropout, train_mode, dropout_rng);
        x = add(tape, x, f);
    }
    return x;
}

}  // namespace elec
