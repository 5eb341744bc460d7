#include <chrono>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "fdi/config.hpp"

namespace fdi {

namespace {

std::pair<Dataset, Dataset> build_datasets(const DatasetSpec& spec) {
    if (spec.source == DatasetSource::CIFAR10_BINARY) {
        Dataset train = read_cifar10_binary(spec.train_path);
        Dataset test = spec.test_path.empty() ? Dataset{} : read_cifar10_binary(spec.test_path);
        if (spec.test_path.empty())
            std::tie(train, test) = train_test_split(train, spec.test_fraction, 1);
        normalize(train, spec.normalization);
        normalize(test, spec.normalization);
        return {std::move(train), std::move(test)};
    }
    Dataset all = synthesize_dataset(spec.synthetic);
    normalize(all, spec.normalization);
    auto [train, test] = train_test_split(all, spec.test_fraction, spec.synthetic.seed ^ 1);
    return {std::move(train), std::move(test)};
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config,
                                const std::string& buffer_snapshot_path) {
    const auto t0 = std::chrono::steady_clock::now();
    auto [train, test] = build_datasets(config.dataset);
    TaskStream stream = split_tasks(train, test, config.tasks, config.class_order);

    std::mt19937_64 rng(config.seed);
    DualNet dual = build_fdinet(config.backbone, config.variant, config.selection, rng);

    TrainerOptions options;
    options.strategy = config.strategy;
    options.epochs = config.epochs;
    options.lr = config.lr;
    options.momentum = config.momentum;
    options.weight_decay = config.weight_decay;
    options.batch_size = config.batch_size;
    options.replay_batch_size = config.replay_batch_size;
    options.seed = config.seed;
    Trainer trainer(std::move(dual), config.buffer_capacity, options);

    ExperimentReport report;
    report.tasks = config.tasks;
    report.seed = config.seed;
    report.class_il = AccuracyMatrix(config.tasks);
    report.task_il = AccuracyMatrix(config.tasks);
    for (int t = 0; t < config.tasks; ++t) {
        report.epoch_losses.push_back(
            trainer.train_task(stream.train[static_cast<std::size_t>(t)],
                               stream.classes[static_cast<std::size_t>(t)], t));
        trainer.end_task_hook(t);
        const std::vector<double> crow = trainer.evaluate(stream, EvalMode::CLASS_IL, t);
        const std::vector<double> trow = trainer.evaluate(stream, EvalMode::TASK_IL, t);
        for (int tau = 0; tau <= t; ++tau) {
            report.class_il.at(t, tau) = crow[static_cast<std::size_t>(tau)];
            report.task_il.at(t, tau) = trow[static_cast<std::size_t>(tau)];
        }
        report.acc_class_il.push_back(average_accuracy(report.class_il, t));
        report.acc_task_il.push_back(average_accuracy(report.task_il, t));
    }
    report.forgetting_class_il = forgetting(report.class_il, config.tasks - 1);
    report.forgetting_task_il = forgetting(report.task_il, config.tasks - 1);

    const int h = train.images.dim(2), w = train.images.dim(3);
    DualNet& net = trainer.net();
    std::mt19937_64 rng_base(config.seed);
    BackboneConfig base_cfg = config.backbone;
    base_cfg.scaling = ScalingMode::FULL;
    ResNet baseline = build_baseline(base_cfg, rng_base);

    report.dual_params = param_count(net);
    report.dual_backbone_params = backbone_param_count(net);
    report.baseline_params = param_count(baseline);
    report.baseline_backbone_params = backbone_param_count(baseline);
    report.backbone_param_ratio = dual_param_ratio(net, baseline);
    report.flops_forward_per_sample = flops_forward(net, h, w);
    report.samples_processed = trainer.samples_processed();
    report.flops_train_total = flops_train(net, h, w, trainer.samples_processed());
    report.activation_bytes_per_step =
        estimate_activation_memory(net, h, w, config.batch_size);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!buffer_snapshot_path.empty()) {
        const auto parent = std::filesystem::path(buffer_snapshot_path).parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
        trainer.buffer().save(buffer_snapshot_path);
    }
    return report;
}

void emit_report(const ExperimentReport& report, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    {
        std::ofstream f(fs::path(dir) / "metrics.csv");
        f << "after_task,eval_task,class_il_acc,task_il_acc\n";
        char buf[96];
        for (int t = 0; t < report.tasks; ++t)
            for (int tau = 0; tau <= t; ++tau) {
                std::snprintf(buf, sizeof(buf), "%d,%d,%.10g,%.10g\n", t, tau,
                              report.class_il.at(t, tau), report.task_il.at(t, tau));
                f << buf;
            }
    }
    {
        std::ofstream f(fs::path(dir) / "curves.csv");
        f << "task,epoch,loss\n";
        char buf[64];
        for (std::size_t t = 0; t < report.epoch_losses.size(); ++t)
            for (std::size_t e = 0; e < report.epoch_losses[t].size(); ++e) {
                std::snprintf(buf, sizeof(buf), "%zu,%zu,%.10g\n", t, e,
                              static_cast<double>(report.epoch_losses[t][e]));
                f << buf;
            }
    }
    {
        nlohmann::json j;
        j["tasks"] = report.tasks;
        j["seed"] = report.seed;
        j["acc_class_il"] = report.acc_class_il;
        j["acc_task_il"] = report.acc_task_il;
        j["final_acc_class_il"] = report.acc_class_il.back();
        j["final_acc_task_il"] = report.acc_task_il.back();
        j["forgetting_class_il"] = report.forgetting_class_il;
        j["forgetting_task_il"] = report.forgetting_task_il;
        j["dual_params"] = report.dual_params;
        j["dual_backbone_params"] = report.dual_backbone_params;
        j["baseline_params"] = report.baseline_params;
        j["baseline_backbone_params"] = report.baseline_backbone_params;
        j["backbone_param_ratio"] = report.backbone_param_ratio;
        j["flops_forward_per_sample"] = report.flops_forward_per_sample;
        j["flops_train_total"] = report.flops_train_total;
        j["activation_bytes_per_step"] = report.activation_bytes_per_step;
        j["samples_processed"] = report.samples_processed;
        j["wall_seconds"] = report.wall_seconds;
        std::ofstream f(fs::path(dir) / "summary.json");
        f << j.dump(2) << "\n";
    }
}

}  // namespace fdi
