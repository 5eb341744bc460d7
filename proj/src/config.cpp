#include "fdi/config.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

namespace fdi {

bool operator==(const StrategyConfig& a, const StrategyConfig& b) {
    return a.kind == b.kind && a.alpha == b.alpha && a.beta == b.beta &&
           a.plastic_decay == b.plastic_decay && a.stable_decay == b.stable_decay &&
           a.plastic_update_prob == b.plastic_update_prob &&
           a.stable_update_prob == b.stable_update_prob &&
           a.consistency_weight == b.consistency_weight;
}

bool operator==(const BackboneConfig& a, const BackboneConfig& b) {
    return a.base_width == b.base_width && a.blocks_per_stage == b.blocks_per_stage &&
           a.num_classes == b.num_classes && a.scaling == b.scaling &&
           a.in_channels == b.in_channels;
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    return a.dataset == b.dataset && a.tasks == b.tasks &&
           a.buffer_capacity == b.buffer_capacity && a.strategy == b.strategy &&
           a.backbone == b.backbone && a.variant == b.variant && a.selection == b.selection &&
           a.seed == b.seed && a.epochs == b.epochs && a.lr == b.lr &&
           a.momentum == b.momentum && a.weight_decay == b.weight_decay &&
           a.batch_size == b.batch_size && a.replay_batch_size == b.replay_batch_size &&
           a.class_order == b.class_order && a.output_dir == b.output_dir;
}

namespace {

[[noreturn]] void fail(int line, const std::string& msg) {
    throw ConfigError(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg);
}

long long to_int(const std::string& v, int line) {
    long long out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        fail(line, "expected an integer, got '" + v + "'");
    return out;
}

double to_real(const std::string& v, int line) {
    try {
        std::size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) fail(line, "expected a number, got '" + v + "'");
        return out;
    } catch (const std::invalid_argument&) {
        fail(line, "expected a number, got '" + v + "'");
    } catch (const std::out_of_range&) {
        fail(line, "number out of range: '" + v + "'");
    }
}

std::vector<std::string> split_commas(const std::string& v) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : v) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

struct ParseState {
    ExperimentConfig config;
    bool saw_dataset = false, saw_strategy = false;
    bool saw_norm_mean = false, saw_norm_std = false;
    bool saw_num_classes = false;
};

using Setter = std::function<void(ParseState&, const std::string&, int)>;

const std::map<std::string, Setter>& key_table() {
    static const std::map<std::string, Setter> table = {
        {"dataset",
         [](ParseState& s, const std::string& v, int line) {
             if (v == "synthetic")
                 s.config.dataset.source = DatasetSource::SYNTHETIC;
             else if (v == "cifar10")
                 s.config.dataset.source = DatasetSource::CIFAR10_BINARY;
             else
                 fail(line, "dataset must be 'synthetic' or 'cifar10', got '" + v + "'");
             s.saw_dataset = true;
         }},
        {"train_path", [](ParseState& s, const std::string& v, int) { s.config.dataset.train_path = v; }},
        {"test_path", [](ParseState& s, const std::string& v, int) { s.config.dataset.test_path = v; }},
        {"classes",
         [](ParseState& s, const std::string& v, int line) {
             s.config.dataset.synthetic.classes = static_cast<int>(to_int(v, line));
         }},
        {"samples_per_class",
         [](ParseState& s, const std::string& v, int line) {
             s.config.dataset.synthetic.samples_per_class = static_cast<int>(to_int(v, line));
         }},
        {"image_size",
         [](ParseState& s, const std::string& v, int line) {
             s.config.dataset.synthetic.image_size = static_cast<int>(to_int(v, line));
         }},
        {"dataset_seed",
         [](ParseState& s, const std::string& v, int line) {
             s.config.dataset.synthetic.seed = static_cast<std::uint64_t>(to_int(v, line));
         }},
        {"test_fraction",
         [](ParseState& s, const std::string& v, int line) {
             s.config.dataset.test_fraction = to_real(v, line);
         }},
        {"normalize_mean",
         [](ParseState& s, const std::string& v, int line) {
             s.config.dataset.normalization.mean.clear();
             for (const std::string& p : split_commas(v))
                 s.config.dataset.normalization.mean.push_back(
                     static_cast<real>(to_real(p, line)));
             s.saw_norm_mean = true;
         }},
        {"normalize_std",
         [](ParseState& s, const std::string& v, int line) {
             s.config.dataset.normalization.std.clear();
             for (const std::string& p : split_commas(v))
                 s.config.dataset.normalization.std.push_back(
                     static_cast<real>(to_real(p, line)));
             s.saw_norm_std = true;
         }},
        {"tasks",
         [](ParseState& s, const std::string& v, int line) {
             s.config.tasks = static_cast<int>(to_int(v, line));
         }},
        {"buffer_capacity",
         [](ParseState& s, const std::string& v, int line) {
             s.config.buffer_capacity = static_cast<int>(to_int(v, line));
         }},
        {"strategy",
         [](ParseState& s, const std::string& v, int line) {
             try {
                 s.config.strategy.kind = strategy_from_name(v);
             } catch (const std::invalid_argument& e) {
                 fail(line, e.what());
             }
             s.saw_strategy = true;
         }},
        {"alpha",
         [](ParseState& s, const std::string& v, int line) {
             s.config.strategy.alpha = static_cast<real>(to_real(v, line));
         }},
        {"beta",
         [](ParseState& s, const std::string& v, int line) {
             s.config.strategy.beta = static_cast<real>(to_real(v, line));
         }},
        {"plastic_decay",
         [](ParseState& s, const std::string& v, int line) {
             s.config.strategy.plastic_decay = static_cast<real>(to_real(v, line));
         }},
        {"stable_decay",
         [](ParseState& s, const std::string& v, int line) {
             s.config.strategy.stable_decay = static_cast<real>(to_real(v, line));
         }},
        {"plastic_update_prob",
         [](ParseState& s, const std::string& v, int line) {
             s.config.strategy.plastic_update_prob = static_cast<real>(to_real(v, line));
         }},
        {"stable_update_prob",
         [](ParseState& s, const std::string& v, int line) {
             s.config.strategy.stable_update_prob = static_cast<real>(to_real(v, line));
         }},
        {"consistency_weight",
         [](ParseState& s, const std::string& v, int line) {
             s.config.strategy.consistency_weight = static_cast<real>(to_real(v, line));
         }},
        {"base_width",
         [](ParseState& s, const std::string& v, int line) {
             s.config.backbone.base_width = static_cast<int>(to_int(v, line));
         }},
        {"blocks_per_stage",
         [](ParseState& s, const std::string& v, int line) {
             const auto parts = split_commas(v);
             if (parts.size() != 4) fail(line, "blocks_per_stage needs 4 comma-separated ints");
             for (int i = 0; i < 4; ++i)
                 s.config.backbone.blocks_per_stage[static_cast<std::size_t>(i)] =
                     static_cast<int>(to_int(parts[static_cast<std::size_t>(i)], line));
         }},
        {"scaling",
         [](ParseState& s, const std::string& v, int line) {
             try {
                 s.config.backbone.scaling = scaling_from_name(v);
             } catch (const std::invalid_argument& e) {
                 fail(line, e.what());
             }
         }},
        {"variant",
         [](ParseState& s, const std::string& v, int line) {
             try {
                 s.config.variant = variant_from_name(v);
             } catch (const std::invalid_argument& e) {
                 fail(line, e.what());
             }
         }},
        {"selection",
         [](ParseState& s, const std::string& v, int line) {
             try {
                 s.config.selection = selection_from_name(v);
             } catch (const std::invalid_argument& e) {
                 fail(line, e.what());
             }
         }},
        {"seed",
         [](ParseState& s, const std::string& v, int line) {
             s.config.seed = static_cast<std::uint64_t>(to_int(v, line));
         }},
        {"epochs",
         [](ParseState& s, const std::string& v, int line) {
             s.config.epochs = static_cast<int>(to_int(v, line));
         }},
        {"lr",
         [](ParseState& s, const std::string& v, int line) {
             s.config.lr = static_cast<real>(to_real(v, line));
         }},
        {"momentum",
         [](ParseState& s, const std::string& v, int line) {
             s.config.momentum = static_cast<real>(to_real(v, line));
         }},
        {"weight_decay",
         [](ParseState& s, const std::string& v, int line) {
             s.config.weight_decay = static_cast<real>(to_real(v, line));
         }},
        {"batch_size",
         [](ParseState& s, const std::string& v, int line) {
             s.config.batch_size = static_cast<int>(to_int(v, line));
         }},
        {"replay_batch_size",
         [](ParseState& s, const std::string& v, int line) {
             s.config.replay_batch_size = static_cast<int>(to_int(v, line));
         }},
        {"class_order",
         [](ParseState& s, const std::string& v, int line) {
             s.config.class_order.clear();
             for (const std::string& p : split_commas(v))
                 s.config.class_order.push_back(static_cast<int>(to_int(p, line)));
         }},
        {"output_dir",
         [](ParseState& s, const std::string& v, int) { s.config.output_dir = v; }},
    };
    return table;
}

void apply_line(ParseState& state, const std::string& raw, int line) {
    const std::string no_comment = raw.substr(0, raw.find('#'));
    const std::string text = trim(no_comment);
    if (text.empty()) return;
    const std::size_t eq = text.find('=');
    if (eq == std::string::npos) fail(line, "expected 'key = value', got '" + text + "'");
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    auto it = key_table().find(key);
    if (it == key_table().end()) fail(line, "unknown key '" + key + "'");
    it->second(state, value, line);
}

ExperimentConfig finalize(ParseState& state) {
    ExperimentConfig& c = state.config;
    if (!state.saw_dataset) throw ConfigError("missing required key 'dataset'");
    if (!state.saw_strategy) throw ConfigError("missing required key 'strategy'");
    if (c.dataset.source == DatasetSource::CIFAR10_BINARY) {
        c.backbone.num_classes = 10;
        if (!state.saw_norm_mean)
            c.dataset.normalization.mean = {real(0.4914), real(0.4822), real(0.4465)};
        if (!state.saw_norm_std)
            c.dataset.normalization.std = {real(0.2470), real(0.2435), real(0.2616)};
        if (c.dataset.train_path.empty())
            throw ConfigError("dataset = cifar10 requires 'train_path'");
    } else {
        c.backbone.num_classes = c.dataset.synthetic.classes;
    }
    if (c.tasks <= 0 || c.backbone.num_classes % c.tasks != 0)
        throw ConfigError("tasks: " + std::to_string(c.tasks) +
                          " does not evenly divide " +
                          std::to_string(c.backbone.num_classes) + " classes");
    if (c.backbone.scaling == ScalingMode::FULL)
        throw ConfigError("scaling: FULL is reserved for the baseline counter");
    return c;
}

std::string real_str(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
    ParseState state;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) apply_line(state, line, ++lineno);
    return finalize(state);
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

void apply_override(ExperimentConfig& config, const std::string& key_value) {
    ParseState state;
    state.config = config;
    state.saw_dataset = state.saw_strategy = true;
    state.saw_norm_mean = state.saw_norm_std = true;
    apply_line(state, key_value, 0);
    config = finalize(state);
}

std::string emit_config(const ExperimentConfig& c) {
    std::ostringstream out;
    out << "dataset = "
        << (c.dataset.source == DatasetSource::SYNTHETIC ? "synthetic" : "cifar10") << "\n";
    if (!c.dataset.train_path.empty()) out << "train_path = " << c.dataset.train_path << "\n";
    if (!c.dataset.test_path.empty()) out << "test_path = " << c.dataset.test_path << "\n";
    out << "classes = " << c.dataset.synthetic.classes << "\n";
    out << "samples_per_class = " << c.dataset.synthetic.samples_per_class << "\n";
    out << "image_size = " << c.dataset.synthetic.image_size << "\n";
    out << "dataset_seed = " << c.dataset.synthetic.seed << "\n";
    out << "test_fraction = " << real_str(c.dataset.test_fraction) << "\n";
    auto join = [](const auto& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) s += ",";
            s += real_str(static_cast<double>(v[i]));
        }
        return s;
    };
    out << "normalize_mean = " << join(c.dataset.normalization.mean) << "\n";
    out << "normalize_std = " << join(c.dataset.normalization.std) << "\n";
    out << "tasks = " << c.tasks << "\n";
    out << "buffer_capacity = " << c.buffer_capacity << "\n";
    out << "strategy = " << strategy_name(c.strategy.kind) << "\n";
    out << "alpha = " << real_str(c.strategy.alpha) << "\n";
    out << "beta = " << real_str(c.strategy.beta) << "\n";
    out << "plastic_decay = " << real_str(c.strategy.plastic_decay) << "\n";
    out << "stable_decay = " << real_str(c.strategy.stable_decay) << "\n";
    out << "plastic_update_prob = " << real_str(c.strategy.plastic_update_prob) << "\n";
    out << "stable_update_prob = " << real_str(c.strategy.stable_update_prob) << "\n";
    out << "consistency_weight = " << real_str(c.strategy.consistency_weight) << "\n";
    out << "base_width = " << c.backbone.base_width << "\n";
    out << "blocks_per_stage = " << c.backbone.blocks_per_stage[0] << ","
        << c.backbone.blocks_per_stage[1] << "," << c.backbone.blocks_per_stage[2] << ","
        << c.backbone.blocks_per_stage[3] << "\n";
    out << "scaling = " << scaling_name(c.backbone.scaling) << "\n";
    out << "variant = " << variant_name(c.variant) << "\n";
    out << "selection = " << selection_name(c.selection) << "\n";
    out << "seed = " << c.seed << "\n";
    out << "epochs = " << c.epochs << "\n";
    out << "lr = " << real_str(c.lr) << "\n";
    out << "momentum = " << real_str(c.momentum) << "\n";
    out << "weight_decay = " << real_str(c.weight_decay) << "\n";
    out << "batch_size = " << c.batch_size << "\n";
    out << "replay_batch_size = " << c.replay_batch_size << "\n";
    if (!c.class_order.empty()) {
        out << "class_order = ";
        for (std::size_t i = 0; i < c.class_order.size(); ++i)
            out << (i ? "," : "") << c.class_order[i];
        out << "\n";
    }
    out << "output_dir = " << c.output_dir << "\n";
    return out.str();
}

}  // namespace fdi
