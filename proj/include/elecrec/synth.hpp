#pragma once
// Synthetic corpus: order-1 Markov walks over a sparse random transition
// table, with uniform noise jumps. Known dynamics make ranking progress
// measurable, since the optimal policy is to rank the current item's
// successors first.

#include <cstdint>
#include <vector>

#include "elecrec/data.hpp"
#include "elecrec/errors.hpp"
#include "elecrec/rng.hpp"

namespace elec {

inline constexpr int kSynthSuccessors = 3;
inline constexpr int kSynthMinLen = 10;
inline constexpr int kSynthMaxLen = 40;

// table[i] = the 3 plausible successors of item i (i in 1..items; index 0 unused).
inline std::vector<std::vector<std::int32_t>> synth_transition_table(int items, std::uint64_t seed) {
    if (items < 10) throw ConfigError("synth: need at least 10 items");
    Rng rng = Rng(seed).fork(0x7ab1e);
    std::vector<std::vector<std::int32_t>> table(static_cast<size_t>(items) + 1);
    for (int i = 1; i <= items; ++i) {
        auto& succ = table[static_cast<size_t>(i)];
        while (static_cast<int>(succ.size()) < kSynthSuccessors) {
            auto cand = static_cast<std::int32_t>(1 + rng.uniform_below(static_cast<std::uint64_t>(items)));
            if (cand == i) continue;
            bool dup = false;
            for (auto s : succ) dup = dup || s == cand;
            if (!dup) succ.push_back(cand);
        }
    }
    return table;
}

// Generates `users` walks of length uniform in [10, 40]. Each step follows
// the transition table with probability 1 - noise_rate and jumps uniformly
// otherwise. Fully deterministic given the seed.
inline std::vector<UserSequence> synth_generate(int users, int items, std::uint64_t seed, double noise_rate) {
    if (users < 10) throw ConfigError("synth: need at least 10 users");
    if (items < 10) throw ConfigError("synth: need at least 10 items");
    if (noise_rate < 0.0 || noise_rate >= 1.0) throw ConfigError("synth: noise_rate must be in [0, 1)");
    const auto table = synth_transition_table(items, seed);
    Rng rng = Rng(seed).fork(0x3a1c);
    std::vector<UserSequence> out;
    out.reserve(static_cast<size_t>(users));
    for (int u = 1; u <= users; ++u) {
        const int len = kSynthMinLen + static_cast<int>(rng.uniform_below(kSynthMaxLen - kSynthMinLen + 1));
        UserSequence seq;
        seq.user_id = u;
        seq.items.reserve(static_cast<size_t>(len));
        auto cur = static_cast<std::int32_t>(1 + rng.uniform_below(static_cast<std::uint64_t>(items)));
        seq.items.push_back(cur);
        for (int s = 1; s < len; ++s) {
            std::int32_t nxt;
            if (rng.uniform() < noise_rate) {
                nxt = static_cast<std::int32_t>(1 + rng.uniform_below(static_cast<std::uint64_t>(items)));
            } else {
                const auto& succ = table[static_cast<size_t>(cur)];
                nxt = succ[rng.uniform_below(succ.size())];
            }
            seq.items.push_back(nxt);
            cur = nxt;
        }
        out.push_back(std::move(seq));
    }
    return out;
}

}  // namespace elec
