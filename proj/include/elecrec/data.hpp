#pragma once
// Dataset ingestion, 5-core filtering, leave-one-out splitting and batching.
// File format: one user per line, space-separated positive integers; first
// token is the user id, the rest are item ids in chronological order.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "elecrec/errors.hpp"
#include "elecrec/rng.hpp"

namespace elec {

struct UserSequence {
    std::int64_t user_id = 0;
    std::vector<std::int32_t> items;
};

struct Dataset {
    std::vector<UserSequence> sequences;                       // ids remapped to 1..num_items
    std::vector<std::pair<std::int64_t, std::int32_t>> vocab;  // original id -> mapped id, ascending
    int num_items = 0;
};

struct SplitUser {
    std::int64_t user_id = 0;
    std::vector<std::int32_t> train;  // items 1..n-2
    std::int32_t valid_target = 0;    // item n-1
    std::int32_t test_target = 0;     // item n
};

struct SplitDataset {
    std::vector<SplitUser> users;
    int num_items = 0;
};

struct PaddedBatch {
    int batch = 0;    // B
    int max_len = 0;  // T
    std::vector<std::int32_t> input_ids;   // [B*T]
    std::vector<std::int32_t> target_ids;  // [B*T]
    std::vector<std::uint8_t> validity;    // [B*T], 1 where input and target are real
};

// Iterative 5-core filter: drop users with < 5 items, then drop occurrences
// of items seen < 5 times; repeat until stable.
inline void five_core_filter(std::vector<UserSequence>& seqs, int min_count = 5) {
    bool changed = true;
    while (changed) {
        changed = false;
        std::erase_if(seqs, [&](const UserSequence& u) {
            const bool drop = static_cast<int>(u.items.size()) < min_count;
            changed = changed || drop;
            return drop;
        });
        std::unordered_map<std::int64_t, int> counts;
        for (const auto& u : seqs)
            for (auto it : u.items) ++counts[it];
        for (auto& u : seqs) {
            const size_t before = u.items.size();
            std::erase_if(u.items, [&](std::int32_t it) { return counts[it] < min_count; });
            if (u.items.size() != before) changed = true;
        }
    }
}

inline UserSequence parse_dataset_line(const std::string& line, size_t line_no) {
    std::istringstream is(line);
    UserSequence u;
    std::string tok;
    bool first = true;
    while (is >> tok) {
        std::int64_t v = 0;
        try {
            size_t consumed = 0;
            v = std::stoll(tok, &consumed);
            if (consumed != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw DataError("parse error at line " + std::to_string(line_no) + ": bad token '" + tok + "'");
        }
        if (v <= 0)
            throw DataError("parse error at line " + std::to_string(line_no) + ": non-positive id " +
                            std::to_string(v));
        if (first) {
            u.user_id = v;
            first = false;
        } else {
            u.items.push_back(static_cast<std::int32_t>(v));
        }
    }
    if (first) throw DataError("parse error at line " + std::to_string(line_no) + ": blank record");
    return u;
}

// Loads, 5-core-filters and densely remaps a dataset file. Mapped ids run
// 1..num_items in ascending original-id order; id 0 is reserved for padding.
inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file: " + path);
    std::vector<UserSequence> seqs;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        seqs.push_back(parse_dataset_line(line, line_no));
    }
    if (seqs.empty()) throw DataError("empty dataset: " + path);
    five_core_filter(seqs);
    if (seqs.empty()) throw DataError("dataset empty after 5-core filtering: " + path);

    std::map<std::int64_t, std::int32_t> remap;
    for (const auto& u : seqs)
        for (auto it : u.items) remap.emplace(it, 0);
    std::int32_t next_id = 1;
    for (auto& [orig, mapped] : remap) mapped = next_id++;

    Dataset ds;
    ds.num_items = next_id - 1;
    for (auto& u : seqs) {
        for (auto& it : u.items) it = remap.at(it);
        ds.sequences.push_back(std::move(u));
    }
    ds.vocab.assign(remap.begin(), remap.end());
    return ds;
}

inline void write_dataset(const std::string& path, std::span<const UserSequence> seqs) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write dataset file: " + path);
    for (const auto& u : seqs) {
        out << u.user_id;
        for (auto it : u.items) out << ' ' << it;
        out << '\n';
    }
}

inline void write_vocab(const std::string& path, std::span<const std::pair<std::int64_t, std::int32_t>> vocab) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write vocabulary file: " + path);
    for (const auto& [orig, mapped] : vocab) out << orig << ' ' << mapped << '\n';
}

// Last item held out for test, second-to-last for validation, rest trains.
inline SplitDataset leave_one_out_split(std::span<const UserSequence> seqs, int num_items) {
    SplitDataset split;
    split.num_items = num_items;
    for (const auto& u : seqs) {
        if (u.items.size() < 3)
            throw DataError("leave_one_out_split: user " + std::to_string(u.user_id) +
                            " has fewer than 3 interactions");
        SplitUser s;
        s.user_id = u.user_id;
        s.train.assign(u.items.begin(), u.items.end() - 2);
        s.valid_target = u.items[u.items.size() - 2];
        s.test_target = u.items.back();
        split.users.push_back(std::move(s));
    }
    return split;
}

// Builds one left-padded training row from a train prefix: inputs are the
// prefix without its last item, targets the prefix shifted by one; the most
// recent T (input, target) pairs are kept.
inline void fill_training_row(std::span<const std::int32_t> prefix, int T, std::int32_t* input_row,
                              std::int32_t* target_row, std::uint8_t* valid_row) {
    std::fill_n(input_row, T, 0);
    std::fill_n(target_row, T, 0);
    std::fill_n(valid_row, T, std::uint8_t{0});
    const int pairs = static_cast<int>(prefix.size()) - 1;
    if (pairs <= 0) return;
    const int keep = std::min(pairs, T);
    const int src_start = pairs - keep;  // index into the pair list
    const int dst_start = T - keep;
    for (int i = 0; i < keep; ++i) {
        input_row[dst_start + i] = prefix[static_cast<size_t>(src_start + i)];
        target_row[dst_start + i] = prefix[static_cast<size_t>(src_start + i) + 1];
        valid_row[dst_start + i] = 1;
    }
}

// Deterministic per-epoch batch stream over the training prefixes.
class Batcher {
public:
    Batcher(const SplitDataset& split, int max_len, int batch_size)
        : split_(&split), max_len_(max_len), batch_size_(batch_size) {
        if (max_len < 2) throw ConfigError("pad_and_batch: max_len must be >= 2");
        if (batch_size < 1) throw ConfigError("pad_and_batch: batch_size must be >= 1");
        for (size_t i = 0; i < split.users.size(); ++i)
            if (split.users[i].train.size() >= 2) trainable_.push_back(static_cast<std::int32_t>(i));
    }

    size_t num_rows() const { return trainable_.size(); }

    std::vector<PaddedBatch> epoch_batches(std::uint64_t shuffle_seed) const {
        std::vector<std::int32_t> order = trainable_;
        Rng rng(shuffle_seed);
        rng.shuffle(order.begin(), order.end());
        std::vector<PaddedBatch> batches;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size_)) {
            const int B = static_cast<int>(std::min<size_t>(batch_size_, order.size() - start));
            PaddedBatch pb;
            pb.batch = B;
            pb.max_len = max_len_;
            pb.input_ids.resize(static_cast<size_t>(B) * max_len_);
            pb.target_ids.resize(static_cast<size_t>(B) * max_len_);
            pb.validity.resize(static_cast<size_t>(B) * max_len_);
            for (int r = 0; r < B; ++r) {
                const auto& u = split_->users[static_cast<size_t>(order[start + static_cast<size_t>(r)])];
                fill_training_row(u.train, max_len_, pb.input_ids.data() + static_cast<size_t>(r) * max_len_,
                                  pb.target_ids.data() + static_cast<size_t>(r) * max_len_,
                                  pb.validity.data() + static_cast<size_t>(r) * max_len_);
            }
            batches.push_back(std::move(pb));
        }
        return batches;
    }

private:
    const SplitDataset* split_;
    int max_len_;
    int batch_size_;
    std::vector<std::int32_t> trainable_;
};

// Training-interaction count per item id (index 0 stays zero).
inline std::vector<std::int64_t> popularity_counts(const SplitDataset& split) {
    std::vector<std::int64_t> counts(static_cast<size_t>(split.num_items) + 1, 0);
    for (const auto& u : split.users)
        for (auto it : u.train) ++counts[static_cast<size_t>(it)];
    return counts;
}

}  // namespace elec
