#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "elecrec/checkpoint.hpp"
#include "elecrec/metrics.hpp"
#include "elecrec/synth.hpp"

using namespace elec;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<unsigned char> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Model<float> sample_model(std::uint64_t seed = 9) {
    TrainConfig cfg;
    cfg.max_len = 8;
    cfg.hidden = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.seed = seed;
    cfg.data = "some/data.txt";
    cfg.out = "some/out";
    return build_model<float>(cfg, 20);
}

}  // namespace

TEST_CASE("checkpoint round trip reproduces every tensor bit-exactly") {
    Model<float> m = sample_model();
    const auto path = temp_path("elec_ckpt_roundtrip.bin");
    save_checkpoint(m, path);
    Model<float> loaded = load_checkpoint(path);
    const auto pa = m.all_params();
    const auto pb = loaded.all_params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i]->name == pb[i]->name);
        REQUIRE(pa[i]->value.shape == pb[i]->value.shape);
        REQUIRE(pa[i]->value.data == pb[i]->value.data);
    }
    REQUIRE(loaded.cfg.data == m.cfg.data);
    REQUIRE(loaded.num_items == m.num_items);
}

TEST_CASE("save-load-save produces identical bytes") {
    Model<float> m = sample_model(10);
    const auto p1 = temp_path("elec_ckpt_a.bin");
    const auto p2 = temp_path("elec_ckpt_b.bin");
    save_checkpoint(m, p1);
    Model<float> loaded = load_checkpoint(p1);
    save_checkpoint(loaded, p2);
    REQUIRE(read_bytes(p1) == read_bytes(p2));
}

TEST_CASE("a corrupted byte fails the checksum") {
    Model<float> m = sample_model(11);
    const auto path = temp_path("elec_ckpt_corrupt.bin");
    save_checkpoint(m, path);
    auto bytes = read_bytes(path);
    bytes[bytes.size() / 2] ^= 0x40;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.close();
    REQUIRE_THROWS_WITH(load_checkpoint(path), Catch::Matchers::ContainsSubstring("checksum"));
}

TEST_CASE("a truncated file is rejected") {
    Model<float> m = sample_model(12);
    const auto path = temp_path("elec_ckpt_trunc.bin");
    save_checkpoint(m, path);
    auto bytes = read_bytes(path);
    bytes.resize(bytes.size() / 2);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.close();
    REQUIRE_THROWS_AS(load_checkpoint(path), CheckpointError);
}

TEST_CASE("a wrong version is rejected") {
    Model<float> m = sample_model(13);
    const auto path = temp_path("elec_ckpt_version.bin");
    save_checkpoint(m, path);
    auto bytes = read_bytes(path);
    bytes[4] = 99;  // version field follows the 4-byte magic
    // Recompute the checksum so only the version check can fire.
    const std::uint64_t sum = elec::detail::fnv1a64(bytes.data(), bytes.size() - 8);
    std::memcpy(bytes.data() + bytes.size() - 8, &sum, 8);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.close();
    REQUIRE_THROWS_WITH(load_checkpoint(path), Catch::Matchers::ContainsSubstring("version"));
}

TEST_CASE("a loaded model evaluates bit-identically to the saved one") {
    const auto seqs = synth_generate(25, 18, 31, 0.2);
    const SplitDataset split = leave_one_out_split(seqs, 18);
    TrainConfig cfg;
    cfg.max_len = 8;
    cfg.hidden = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.seed = 14;
    Model<float> m = build_model<float>(cfg, split.num_items);
    const MetricsReport before = evaluate_split(m, split, SplitTag::Test);
    const auto path = temp_path("elec_ckpt_eval.bin");
    save_checkpoint(m, path);
    Model<float> loaded = load_checkpoint(path);
    const MetricsReport after = evaluate_split(loaded, split, SplitTag::Test);
    REQUIRE(before.hr5 == after.hr5);
    REQUIRE(before.hr10 == after.hr10);
    REQUIRE(before.ndcg5 == after.ndcg5);
    REQUIRE(before.ndcg10 == after.ndcg10);
}
