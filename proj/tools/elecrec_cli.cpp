// Command-line front end: dataset preparation, training, evaluation,
// hyperparameter sweeps and synthetic corpus generation.
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

#include <CLI11.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>
#include <vector>

#include "elecrec/checkpoint.hpp"
#include "elecrec/config.hpp"
#include "elecrec/data.hpp"
#include "elecrec/metrics.hpp"
#include "elecrec/synth.hpp"
#include "elecrec/train.hpp"

namespace fs = std::filesystem;
using namespace elec;

namespace {

struct CliError {
    int code;
    std::string message;
};

SplitDataset load_split(const std::string& data_path) {
    const Dataset ds = load_dataset(data_path);
    return leave_one_out_split(ds.sequences, ds.num_items);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + path);
    out << text;
}

// Flag overrides applied on top of a config file.
struct Overrides {
    std::optional<double> alpha, lambda, lr;
    std::optional<int> epochs_max, patience;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> data, out, variant;

    void apply(TrainConfig& cfg) const {
        if (alpha) cfg.alpha = *alpha;
        if (lambda) cfg.lambda = *lambda;
        if (lr) cfg.lr = *lr;
        if (epochs_max) cfg.epochs_max = *epochs_max;
        if (patience) cfg.patience = *patience;
        if (seed) cfg.seed = *seed;
        if (data) cfg.data = *data;
        if (out) cfg.out = *out;
        if (variant) apply_variant(cfg, *variant);
        cfg.validate();
    }
};

void add_override_flags(CLI::App* cmd, Overrides& ov) {
    cmd->add_option("--alpha", ov.alpha, "override replacement fraction");
    cmd->add_option("--lambda", ov.lambda, "override discriminator weight");
    cmd->add_option("--lr", ov.lr, "override learning rate");
    cmd->add_option("--epochs", ov.epochs_max, "override epochs_max");
    cmd->add_option("--patience", ov.patience, "override early-stop patience");
    cmd->add_option("--seed", ov.seed, "override seed");
    cmd->add_option("--data", ov.data, "override dataset path");
    cmd->add_option("--out", ov.out, "override output directory");
    cmd->add_option("--variant", ov.variant,
                    "model variant: elecrec_es | elecrec_fs | generator_only | sequential_bce");
}

TrainConfig resolve_config(const std::string& config_path, const Overrides& ov) {
    TrainConfig cfg = load_config(config_path);
    ov.apply(cfg);
    if (cfg.data.empty()) throw ConfigError("missing data path (set data= in the config or pass --data)");
    if (!fs::exists(cfg.data)) throw ConfigError("data path does not exist: " + cfg.data);
    if (cfg.out.empty()) throw ConfigError("missing output directory (set out= in the config or pass --out)");
    return cfg;
}

struct RunArtifacts {
    MetricsReport valid;
    MetricsReport test;
    fs::path checkpoint;
    fs::path history;
};

RunArtifacts run_training(const TrainConfig& cfg, const SplitDataset& split, bool quiet) {
    fs::create_directories(cfg.out);
    const fs::path history_path = fs::path(cfg.out) / "history.csv";
    std::ofstream history(history_path, std::ios::trunc);
    if (!history) throw DataError("cannot write history file: " + history_path.string());
    history << history_header() << '\n';
    TrainResult<float> result = train_loop<float>(split, cfg, &history);
    const fs::path ckpt_path = fs::path(cfg.out) / "best.ckpt";
    save_checkpoint(result.model, ckpt_path.string());
    RunArtifacts art;
    art.valid = result.best_valid;
    art.test = evaluate_split(result.model, split, SplitTag::Test);
    art.checkpoint = ckpt_path;
    art.history = history_path;
    if (!quiet) {
        std::cout << "best epoch " << result.best_epoch << "\n";
        std::cout << art.valid.summary() << "\n";
        std::cout << art.test.summary() << "\n";
        std::cout << "checkpoint: " << ckpt_path.string() << "\n";
        std::cout << "history: " << history_path.string() << "\n";
    }
    return art;
}

std::vector<double> parse_grid(const std::string& spec) {
    double start = 0, stop = 0, step = 0;
    char c1 = 0, c2 = 0;
    std::istringstream is(spec);
    if (!(is >> start >> c1 >> stop >> c2 >> step) || c1 != ':' || c2 != ':' || step <= 0 || stop < start)
        throw ConfigError("bad grid '" + spec + "': expected start:stop:step with step > 0");
    std::vector<double> grid;
    for (int i = 0;; ++i) {
        const double v = start + step * i;
        if (v > stop + step * 1e-9) break;
        // Snap near-integral multiples so 0.1 steps print as 0.1, 0.2, ...
        grid.push_back(std::round(v * 1e9) / 1e9);
    }
    return grid;
}

int cmd_prepare(const std::string& input, const std::string& out_dir) {
    const Dataset ds = load_dataset(input);
    const SplitDataset split = leave_one_out_split(ds.sequences, ds.num_items);
    fs::create_directories(out_dir);
    std::vector<UserSequence> train_rows, valid_rows, test_rows;
    for (const SplitUser& u : split.users) {
        train_rows.push_back({u.user_id, u.train});
        valid_rows.push_back({u.user_id, {u.valid_target}});
        test_rows.push_back({u.user_id, {u.test_target}});
    }
    write_dataset((fs::path(out_dir) / "train.txt").string(), train_rows);
    write_dataset((fs::path(out_dir) / "valid.txt").string(), valid_rows);
    write_dataset((fs::path(out_dir) / "test.txt").string(), test_rows);
    write_vocab((fs::path(out_dir) / "vocab.txt").string(), ds.vocab);
    std::cout << "users=" << split.users.size() << " items=" << ds.num_items << " -> " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const Overrides& ov) {
    const TrainConfig cfg = resolve_config(config_path, ov);
    const SplitDataset split = load_split(cfg.data);
    run_training(cfg, split, false);
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& split_name, const std::string& data_override,
             const std::string& csv_override) {
    Model<float> model = load_checkpoint(ckpt_path);
    const std::string data = data_override.empty() ? model.cfg.data : data_override;
    if (data.empty()) throw ConfigError("checkpoint has no data path; pass --data");
    const SplitDataset split = load_split(data);
    if (split.num_items != model.num_items)
        throw DataError("dataset vocabulary (" + std::to_string(split.num_items) +
                        ") does not match checkpoint (" + std::to_string(model.num_items) + ")");
    const SplitTag tag = split_name == "valid" ? SplitTag::Valid : SplitTag::Test;
    const MetricsReport rep = evaluate_split(model, split, tag);
    std::cout << rep.summary() << "\n";
    fs::path csv;
    if (!csv_override.empty()) csv = csv_override;
    else if (!model.cfg.out.empty()) csv = fs::path(model.cfg.out) / "history.csv";
    if (!csv.empty()) {
        const bool fresh = !fs::exists(csv);
        std::ofstream out(csv, std::ios::app);
        if (!out) throw DataError("cannot append to CSV: " + csv.string());
        if (fresh) out << history_header() << '\n';
        HistoryRow row;
        row.epoch = 0;
        row.split = rep.split;
        row.hr5 = rep.hr5;
        row.hr10 = rep.hr10;
        row.ndcg5 = rep.ndcg5;
        row.ndcg10 = rep.ndcg10;
        out << format_history_row(row) << '\n';
    }
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& param, const std::string& grid_spec,
              const Overrides& ov, int parallel) {
    if (param != "alpha" && param != "lambda")
        throw ConfigError("sweep --param must be 'alpha' or 'lambda', got '" + param + "'");
    const TrainConfig base = resolve_config(config_path, ov);
    const std::vector<double> grid = parse_grid(grid_spec);
    const SplitDataset split = load_split(base.data);

    struct Row {
        double value;
        MetricsReport test;
    };
    std::vector<Row> rows(grid.size());
    std::mutex io_mutex;
    auto run_point = [&](size_t gi) {
        TrainConfig cfg = base;
        if (param == "alpha") cfg.alpha = grid[gi];
        else cfg.lambda = grid[gi];
        std::ostringstream tag;
        tag << param << "_" << grid[gi];
        cfg.out = (fs::path(base.out) / tag.str()).string();
        cfg.validate();
        const RunArtifacts art = run_training(cfg, split, true);
        rows[gi] = {grid[gi], art.test};
        std::lock_guard<std::mutex> lk(io_mutex);
        std::cout << param << "=" << grid[gi] << " " << art.test.summary() << "\n";
    };
    if (parallel <= 1) {
        for (size_t gi = 0; gi < grid.size(); ++gi) run_point(gi);
    } else {
        std::vector<std::thread> pool;
        std::atomic<size_t> next{0};
        for (int w = 0; w < parallel; ++w)
            pool.emplace_back([&] {
                for (size_t gi = next.fetch_add(1); gi < grid.size(); gi = next.fetch_add(1)) run_point(gi);
            });
        for (auto& th : pool) th.join();
    }
    fs::create_directories(base.out);
    const fs::path sweep_csv = fs::path(base.out) / ("sweep_" + param + ".csv");
    std::ofstream out(sweep_csv, std::ios::trunc);
    if (!out) throw DataError("cannot write sweep CSV: " + sweep_csv.string());
    out << "param,value,hr5,hr10,ndcg5,ndcg10\n";
    for (const Row& r : rows) {
        char buf[192];
        std::snprintf(buf, sizeof(buf), "%s,%g,%.6f,%.6f,%.6f,%.6f", param.c_str(), r.value, r.test.hr5,
                      r.test.hr10, r.test.ndcg5, r.test.ndcg10);
        out << buf << '\n';
    }
    std::cout << "sweep CSV: " << sweep_csv.string() << "\n";
    return 0;
}

int cmd_synth(int users, int items, double noise, std::uint64_t seed, const std::string& out_path) {
    const auto seqs = synth_generate(users, items, seed, noise);
    if (const auto dir = fs::path(out_path).parent_path(); !dir.empty()) fs::create_directories(dir);
    write_dataset(out_path, seqs);
    std::cout << "wrote " << seqs.size() << " users to " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"generator-discriminator training lab for sequential recommendation"};
    app.require_subcommand(1);

    // prepare
    std::string prep_input, prep_out;
    auto* prepare = app.add_subcommand("prepare", "filter, remap and split a dataset file");
    prepare->add_option("--input", prep_input, "raw dataset file")->required();
    prepare->add_option("--out", prep_out, "output directory")->required();

    // train
    std::string train_config;
    Overrides train_ov;
    auto* train = app.add_subcommand("train", "train a model from a config file");
    train->add_option("--config", train_config, "key=value config file")->required();
    add_override_flags(train, train_ov);

    // eval
    std::string eval_ckpt, eval_split = "test", eval_data, eval_csv;
    auto* eval = app.add_subcommand("eval", "evaluate a saved checkpoint");
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
    eval->add_option("--split", eval_split, "valid or test")->check(CLI::IsMember({"valid", "test"}));
    eval->add_option("--data", eval_data, "dataset path override");
    eval->add_option("--csv", eval_csv, "CSV to append the report to");

    // sweep
    std::string sweep_config, sweep_param, sweep_grid = "0.0:1.0:0.1";
    int sweep_parallel = 1;
    Overrides sweep_ov;
    auto* sweep = app.add_subcommand("sweep", "train one model per grid value of alpha or lambda");
    sweep->add_option("--config", sweep_config, "key=value config file")->required();
    sweep->add_option("--param", sweep_param, "alpha or lambda")->required();
    sweep->add_option("--grid", sweep_grid, "start:stop:step (inclusive)");
    sweep->add_option("--parallel", sweep_parallel, "independent grid points to run concurrently");
    add_override_flags(sweep, sweep_ov);

    // synth
    int synth_users = 1000, synth_items = 200;
    double synth_noise = 0.1;
    std::uint64_t synth_seed = 42;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth", "generate a synthetic interaction corpus");
    synth->add_option("--users", synth_users, "number of users");
    synth->add_option("--items", synth_items, "number of items");
    synth->add_option("--noise", synth_noise, "uniform-jump probability");
    synth->add_option("--seed", synth_seed, "seed");
    synth->add_option("--out", synth_out, "output dataset file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) return app.exit(e);
        app.exit(e);
        return 2;
    }

    try {
        if (*prepare) return cmd_prepare(prep_input, prep_out);
        if (*train) return cmd_train(train_config, train_ov);
        if (*eval) return cmd_eval(eval_ckpt, eval_split, eval_data, eval_csv);
        if (*sweep) return cmd_sweep(sweep_config, sweep_param, sweep_grid, sweep_ov, sweep_parallel);
        if (*synth) return cmd_synth(synth_users, synth_items, synth_noise, synth_seed, synth_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
