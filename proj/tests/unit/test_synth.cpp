#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "elecrec/synth.hpp"

using namespace elec;

TEST_CASE("synthetic corpus is deterministic given its seeds") {
    const auto a = synth_generate(20, 15, 123, 0.2);
    const auto b = synth_generate(20, 15, 123, 0.2);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].user_id == b[i].user_id);
        REQUIRE(a[i].items == b[i].items);
    }
    const auto c = synth_generate(20, 15, 124, 0.2);
    bool differs = false;
    for (size_t i = 0; i < a.size(); ++i) differs = differs || a[i].items != c[i].items;
    REQUIRE(differs);
}

TEST_CASE("lengths stay within [10, 40] and ids within [1, V]") {
    const int V = 25;
    const auto seqs = synth_generate(50, V, 7, 0.3);
    REQUIRE(seqs.size() == 50);
    for (const auto& u : seqs) {
        REQUIRE(u.items.size() >= 10);
        REQUIRE(u.items.size() <= 40);
        for (auto it : u.items) {
            REQUIRE(it >= 1);
            REQUIRE(it <= V);
        }
    }
}

TEST_CASE("zero noise makes every adjacent pair a table transition") {
    const int V = 12;
    const std::uint64_t seed = 99;
    const auto table = synth_transition_table(V, seed);
    const auto seqs = synth_generate(30, V, seed, 0.0);
    for (const auto& u : seqs)
        for (size_t i = 0; i + 1 < u.items.size(); ++i) {
            const auto& succ = table[static_cast<size_t>(u.items[i])];
            bool found = false;
            for (auto s : succ) found = found || s == u.items[i + 1];
            REQUIRE(found);
        }
}

TEST_CASE("empirical successor frequencies match the table within 2 percent at noise 0.1") {
    const int V = 20;
    const double noise = 0.1;
    const std::uint64_t seed = 2024;
    const auto table = synth_transition_table(V, seed);
    const auto seqs = synth_generate(8000, V, seed, noise);
    std::map<std::pair<int, int>, std::int64_t> pair_counts;
    std::vector<std::int64_t> from_counts(static_cast<size_t>(V) + 1, 0);
    std::int64_t transitions = 0;
    for (const auto& u : seqs)
        for (size_t i = 0; i + 1 < u.items.size(); ++i) {
            ++pair_counts[{u.items[i], u.items[i + 1]}];
            ++from_counts[static_cast<size_t>(u.items[i])];
            ++transitions;
        }
    REQUIRE(transitions >= 100000);
    for (int i = 1; i <= V; ++i) {
        const double base = static_cast<double>(from_counts[static_cast<size_t>(i)]);
        REQUIRE(base > 0);
        for (auto s : table[static_cast<size_t>(i)]) {
            const double expected = (1.0 - noise) / kSynthSuccessors + noise / V;
            const double observed = pair_counts[{i, s}] / base;
            REQUIRE(observed == Catch::Approx(expected).margin(0.02));
        }
    }
}
