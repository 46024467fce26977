// Command-line front end. Talks to the library exclusively through the C API
// in xit.h, the same surface other language bindings would use.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "xit.h"

namespace {

struct ConfigHandle {
    xit_config* ptr = nullptr;
    ~ConfigHandle() { xit_config_free(ptr); }
};

struct CheckpointHandle {
    xit_checkpoint* ptr = nullptr;
    ~CheckpointHandle() { xit_checkpoint_free(ptr); }
};

int report_failure(xit_status status) {
    std::cerr << "error: " << xit_last_error() << "\n";
    return static_cast<int>(status);
}

int load_config(const std::string& path, ConfigHandle& handle) {
    const xit_status st = path.empty() ? xit_config_default(&handle.ptr)
                                       : xit_config_load(path.c_str(), &handle.ptr);
    return st == XIT_OK ? 0 : report_failure(st);
}

int apply_overrides(ConfigHandle& cfg, const std::vector<std::pair<std::string, std::string>>& overrides) {
    for (const auto& [key, value] : overrides) {
        const xit_status st = xit_config_set(cfg.ptr, key.c_str(), value.c_str());
        if (st != XIT_OK) return report_failure(st);
    }
    return 0;
}

void print_rank_table(const std::string& csv_path) {
    std::ifstream in(csv_path);
    std::string line;
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    std::vector<size_t> widths;
    for (const auto& row : rows)
        for (size_t c = 0; c < row.size(); ++c) {
            if (widths.size() <= c) widths.push_back(0);
            widths[c] = std::max(widths[c], row[c].size());
        }
    for (const auto& row : rows) {
        for (size_t c = 0; c < row.size(); ++c)
            std::cout << (c ? "  " : "") << row[c] << std::string(widths[c] - row[c].size(), ' ');
        std::cout << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"xit: multi-dataset self-supervised pretraining for time series"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(xit_version()));

    std::string config_path, out_dir, checkpoint_dir, dataset_path, test_path, reports_dir, spec_path,
        metric = "macro_f1", ablation;
    std::string out_csv;
    long long seed = -1;
    long long max_length = -1;
    bool random_init = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON run configuration");
        cmd->add_option("--seed", seed, "override every seed in the config");
        cmd->add_option("--out", out_dir, "output directory");
    };

    auto* cmd_pretrain = app.add_subcommand("pretrain", "self-supervised pretraining on a collection");
    add_common(cmd_pretrain);
    cmd_pretrain->add_option("--ablation", ablation, "full|xd_sicc|xd_tc|tc_only");
    cmd_pretrain->add_option("--max-length", max_length, "drop datasets with longer series");

    auto* cmd_finetune = app.add_subcommand("finetune", "linear probing on a frozen encoder");
    add_common(cmd_finetune);
    cmd_finetune->add_option("--checkpoint", checkpoint_dir, "pretraining checkpoint directory");
    cmd_finetune->add_flag("--random-init", random_init, "probe a randomly initialized encoder instead");
    cmd_finetune->add_option("--dataset", dataset_path, "labeled training table")->required();
    cmd_finetune->add_option("--test", test_path, "held-out table for the metric report");

    auto* cmd_embed = app.add_subcommand("embed", "embeddings, 2-D projection and DBI for a dataset");
    cmd_embed->add_option("--checkpoint", checkpoint_dir, "pretraining checkpoint directory")->required();
    cmd_embed->add_option("--dataset", dataset_path, "labeled table")->required();
    cmd_embed->add_option("--out", out_csv, "output CSV path")->required();

    auto* cmd_eval = app.add_subcommand("eval", "mean-rank table over finetune reports");
    cmd_eval->add_option("--reports", reports_dir, "directory laid out as <method>/<dataset>.json")->required();
    cmd_eval->add_option("--metric", metric, "macro_f1|auroc|accuracy");
    cmd_eval->add_option("--out", out_csv, "output CSV path");

    auto* cmd_synth = app.add_subcommand("synth", "generate synthetic benchmark datasets");
    cmd_synth->add_option("--spec", spec_path, "JSON spec with a datasets array")->required();
    cmd_synth->add_option("--out", out_dir, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    if (cmd_pretrain->parsed()) {
        ConfigHandle cfg;
        if (int rc = load_config(config_path, cfg)) return rc;
        std::vector<std::pair<std::string, std::string>> overrides;
        if (seed >= 0) overrides.emplace_back("seed", std::to_string(seed));
        if (!ablation.empty()) overrides.emplace_back("train.ablation", ablation);
        if (max_length >= 0) overrides.emplace_back("data.max_length", std::to_string(max_length));
        if (int rc = apply_overrides(cfg, overrides)) return rc;
        const xit_status st = xit_pretrain(cfg.ptr, out_dir.empty() ? nullptr : out_dir.c_str());
        if (st != XIT_OK) return report_failure(st);
        std::cout << "pretraining done\n";
        return 0;
    }

    if (cmd_finetune->parsed()) {
        if (checkpoint_dir.empty() == !random_init) {
            std::cerr << "error: pass exactly one of --checkpoint or --random-init\n";
            return static_cast<int>(XIT_ERR_CONFIG);
        }
        ConfigHandle cfg;
        if (int rc = load_config(config_path, cfg)) return rc;
        std::vector<std::pair<std::string, std::string>> overrides;
        if (seed >= 0) overrides.emplace_back("seed", std::to_string(seed));
        if (int rc = apply_overrides(cfg, overrides)) return rc;
        CheckpointHandle ckpt;
        if (!random_init) {
            const xit_status st = xit_checkpoint_open(checkpoint_dir.c_str(), &ckpt.ptr);
            if (st != XIT_OK) return report_failure(st);
        }
        const xit_status st = xit_finetune(cfg.ptr, ckpt.ptr, dataset_path.c_str(),
                                           test_path.empty() ? nullptr : test_path.c_str(),
                                           out_dir.empty() ? nullptr : out_dir.c_str());
        if (st != XIT_OK) return report_failure(st);
        std::cout << "finetuning done\n";
        return 0;
    }

    if (cmd_embed->parsed()) {
        CheckpointHandle ckpt;
        xit_status st = xit_checkpoint_open(checkpoint_dir.c_str(), &ckpt.ptr);
        if (st != XIT_OK) return report_failure(st);
        double dbi = 0;
        st = xit_embed(ckpt.ptr, dataset_path.c_str(), out_csv.c_str(), &dbi);
        if (st != XIT_OK) return report_failure(st);
        std::printf("DBI %.9g\n", dbi);
        return 0;
    }

    if (cmd_eval->parsed()) {
        const std::string csv = out_csv.empty() ? "ranks.csv" : out_csv;
        const xit_status st = xit_eval_reports(reports_dir.c_str(), metric.c_str(), csv.c_str());
        if (st != XIT_OK) return report_failure(st);
        print_rank_table(csv);
        return 0;
    }

    if (cmd_synth->parsed()) {
        const xit_status st = xit_synth(spec_path.c_str(), out_dir.c_str());
        if (st != XIT_OK) return report_failure(st);
        std::cout << "datasets written to " << out_dir << "\n";
        return 0;
    }

    return 0;
}
