#pragma once

#include "fdi/dataset.hpp"
#include "fdi/errors.hpp"
#include "fdi/trainer.hpp"

namespace fdi {

enum class DatasetSource { SYNTHETIC, CIFAR10_BINARY };

struct DatasetSpec {
    DatasetSource source = DatasetSource::SYNTHETIC;
    std::string train_path;  // CIFAR10_BINARY
    std::string test_path;   // CIFAR10_BINARY
    SyntheticSpec synthetic;
    double test_fraction = 0.2;  // SYNTHETIC split
    Normalization normalization{{real(0.5), real(0.5), real(0.5)},
                                {real(0.25), real(0.25), real(0.25)}};

    bool operator==(const DatasetSpec&) const = default;
};

struct ExperimentConfig {
    DatasetSpec dataset;
    int tasks = 2;
    int buffer_capacity = 125;
    StrategyConfig strategy;
    BackboneConfig backbone{.base_width = 16,
                            .blocks_per_stage = {2, 2, 2, 2},
                            .num_classes = 4,
                            .scaling = ScalingMode::HALVE_BOTH};
    AggregatorVariant variant = AggregatorVariant::MUTUAL;
    FrequencySelection selection = FrequencySelection::FUSE_NO_LL;
    std::uint64_t seed = 0;
    int epochs = 5;
    real lr = real(0.03);
    real momentum = real(0);
    real weight_decay = real(0);
    int batch_size = 32;
    int replay_batch_size = 32;
    std::vector<int> class_order;  // empty = ascending labels
    std::string output_dir = "out";
};

bool operator==(const StrategyConfig& a, const StrategyConfig& b);
bool operator==(const BackboneConfig& a, const BackboneConfig& b);
bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

// Flat `key = value` text, one pair per line, `#` comments. Unknown keys,
// type mismatches, and missing required keys fail with the line number.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config(const std::string& path);
void apply_override(ExperimentConfig& config, const std::string& key_value);
std::string emit_config(const ExperimentConfig& config);

// Builds the datasets, trains through the stream, fills the report. When
// buffer_snapshot_path is non-empty the final replay buffer is written there.
ExperimentReport run_experiment(const ExperimentConfig& config,
                                const std::string& buffer_snapshot_path = "");

// Writes metrics.csv, summary.json, and curves.csv into dir.
void emit_report(const ExperimentReport& report, const std::string& dir);

}  // namespace fdi
