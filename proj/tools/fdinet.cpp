#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>

#include "fdi/config.hpp"

namespace fs = std::filesystem;
using namespace fdi;

namespace {

int cmd_run(ExperimentConfig config) {
    const ExperimentReport report =
        run_experiment(config, (fs::path(config.output_dir) / "buffer.bin").string());
    emit_report(report, config.output_dir);
    std::printf("final Class-IL ACC_T = %.4f, Task-IL ACC_T = %.4f, forgetting = %.4f\n",
                report.acc_class_il.back(), report.acc_task_il.back(),
                report.forgetting_class_il);
    std::printf("report written to %s\n", config.output_dir.c_str());
    return 0;
}

int cmd_count(const ExperimentConfig& config) {
    std::mt19937_64 rng(config.seed);
    DualNet dual = build_fdinet(config.backbone, config.variant, config.selection, rng);
    BackboneConfig base_cfg = config.backbone;
    base_cfg.scaling = ScalingMode::FULL;
    std::mt19937_64 rng2(config.seed);
    ResNet baseline = build_baseline(base_cfg, rng2);
    const int s = config.dataset.source == DatasetSource::CIFAR10_BINARY
                      ? 32
                      : config.dataset.synthetic.image_size;
    nlohmann::json j;
    j["dual_params"] = param_count(dual);
    j["dual_backbone_params"] = backbone_param_count(dual);
    j["baseline_params"] = param_count(baseline);
    j["baseline_backbone_params"] = backbone_param_count(baseline);
    j["backbone_param_ratio"] = dual_param_ratio(dual, baseline);
    j["dual_flops_forward"] = flops_forward(dual, s, s);
    j["baseline_flops_forward"] = flops_forward(baseline, s, s);
    j["flops_ratio"] = static_cast<double>(flops_forward(dual, s, s)) /
                       static_cast<double>(flops_forward(baseline, s, s));
    j["dual_activation_bytes"] = estimate_activation_memory(dual, s, s, config.batch_size);
    j["baseline_activation_bytes"] =
        estimate_activation_memory(baseline, s, s, config.batch_size);
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_ablate(const ExperimentConfig& config) {
    fs::create_directories(config.output_dir);
    std::ofstream csv(fs::path(config.output_dir) / "ablation.csv");
    csv << "axis,value,final_class_il,final_task_il,forgetting_class_il,flops_train\n";
    auto one = [&](const char* axis, const char* name, ExperimentConfig c) {
        c.output_dir = (fs::path(config.output_dir) / (std::string(axis) + "_" + name)).string();
        const ExperimentReport r = run_experiment(c);
        emit_report(r, c.output_dir);
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s,%s,%.10g,%.10g,%.10g,%lld\n", axis, name,
                      r.acc_class_il.back(), r.acc_task_il.back(), r.forgetting_class_il,
                      r.flops_train_total);
        csv << buf;
        std::printf("%s", buf);
    };
    for (AggregatorVariant v :
         {AggregatorVariant::NO_INTEGRATION, AggregatorVariant::LOW_DOMINANCE,
          AggregatorVariant::HIGH_DOMINANCE, AggregatorVariant::MUTUAL}) {
        ExperimentConfig c = config;
        c.variant = v;
        one("variant", variant_name(v), c);
    }
    for (FrequencySelection s :
         {FrequencySelection::LL_ONLY, FrequencySelection::LH_ONLY, FrequencySelection::HL_ONLY,
          FrequencySelection::HH_ONLY, FrequencySelection::FUSE_ALL,
          FrequencySelection::FUSE_NO_LL_HH, FrequencySelection::FUSE_NO_LL}) {
        ExperimentConfig c = config;
        c.selection = s;
        one("selection", selection_name(s), c);
    }
    for (ScalingMode m : {ScalingMode::HALVE_WIDTH_ONLY, ScalingMode::HALVE_DEPTH_ONLY}) {
        ExperimentConfig c = config;
        c.backbone.scaling = m;
        one("scaling", scaling_name(m), c);
    }
    return 0;
}

int cmd_inspect_buffer(const std::string& out_dir) {
    const std::string path = (fs::path(out_dir) / "buffer.bin").string();
    const ReplayBuffer buf = ReplayBuffer::load(path);
    nlohmann::json j;
    j["capacity"] = buf.capacity();
    j["seen"] = buf.seen();
    j["size"] = buf.size();
    std::map<int, int> labels, tasks;
    for (std::size_t i = 0; i < buf.size(); ++i) {
        ++labels[buf.entry(i).label];
        ++tasks[buf.entry(i).task_id];
    }
    for (auto [k, v] : labels) j["label_counts"][std::to_string(k)] = v;
    for (auto [k, v] : tasks) j["task_counts"][std::to_string(k)] = v;
    if (buf.size() > 0) {
        j["entry_shape"] = buf.entry(0).low.shape();
        j["with_logits"] = buf.entry(0).logits.defined();
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"frequency-decomposition continual-learning benchmark"};
    std::string config_path, mode = "run", out_dir;
    std::int64_t seed = -1;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "experiment config file");
    app.add_option("--seed", seed, "override the config seed");
    app.add_option("--out", out_dir, "override the output directory");
    app.add_option("--mode", mode, "run | ablate | inspect-buffer | count")
        ->check(CLI::IsMember({"run", "ablate", "inspect-buffer", "count"}));
    app.add_option("--override", overrides, "repeatable key=value config override");
    CLI11_PARSE(app, argc, argv);

    try {
        if (mode == "inspect-buffer") {
            if (out_dir.empty() && !config_path.empty())
                out_dir = parse_config(config_path).output_dir;
            if (out_dir.empty()) throw ConfigError("inspect-buffer needs --out or --config");
            return cmd_inspect_buffer(out_dir);
        }
        if (config_path.empty()) throw ConfigError("--config is required");
        ExperimentConfig config = parse_config(config_path);
        for (const std::string& kv : overrides) apply_override(config, kv);
        if (seed >= 0) config.seed = static_cast<std::uint64_t>(seed);
        if (!out_dir.empty()) config.output_dir = out_dir;
        if (mode == "run") return cmd_run(std::move(config));
        if (mode == "count") return cmd_count(config);
        return cmd_ablate(config);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
