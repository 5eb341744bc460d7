#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fdi/config.hpp"
#include "fdi/wavelet.hpp"

using namespace fdi;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    f << text;
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

int run_cli(const std::string& args, const std::string& capture = "/dev/null") {
    const std::string cmd = std::string(FDINET_BINARY) + " " + args + " > " + capture + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kTinyConfig =
    "dataset = synthetic\n"
    "strategy = er\n"
    "classes = 4\n"
    "samples_per_class = 10\n"
    "image_size = 16\n"
    "tasks = 2\n"
    "epochs = 1\n"
    "base_width = 4\n"
    "blocks_per_stage = 1,1,1,1\n"
    "buffer_capacity = 20\n"
    "batch_size = 8\n"
    "replay_batch_size = 8\n";

// Minimal RFC-4180 row splitter (quoted fields, escaped quotes).
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
                field += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            row.push_back(field);
            field.clear();
        } else if (c == '\n') {
            row.push_back(field);
            field.clear();
            rows.push_back(row);
            row.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    if (!field.empty() || !row.empty()) {
        row.push_back(field);
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

TEST_CASE("config text emits and reparses to an equal config") {
    ExperimentConfig c = parse_config_text(kTinyConfig);
    c.strategy.kind = StrategyKind::DERPP;
    c.strategy.alpha = real(0.2);
    c.lr = real(0.0125);
    c.class_order = {3, 0, 1, 2};
    c.variant = AggregatorVariant::HIGH_DOMINANCE;
    c.selection = FrequencySelection::FUSE_ALL;
    c.seed = 42;
    ExperimentConfig back = parse_config_text(emit_config(c));
    CHECK(back == c);
}

TEST_CASE("config errors carry line numbers and key names") {
    auto fails_with = [](const std::string& text, const std::string& needle) {
        try {
            parse_config_text(text);
            FAIL_CHECK("expected a config error for: " << needle);
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };
    fails_with("dataset = synthetic\nstrategy = er\nbogus_key = 1\n", "line 3");
    fails_with("dataset = synthetic\nstrategy = er\nbogus_key = 1\n", "bogus_key");
    fails_with("dataset = synthetic\nstrategy = er\nepochs = three\n", "integer");
    fails_with("dataset = synthetic\nstrategy = er\nlr = fast\n", "number");
    fails_with("strategy = er\n", "dataset");
    fails_with("dataset = synthetic\n", "strategy");
    fails_with("dataset = synthetic\nstrategy = er\ntasks = 3\n", "tasks");
    fails_with("dataset = synthetic\nstrategy = er\nscaling = full\n", "baseline");
    fails_with("dataset = cifar10\nstrategy = er\n", "train_path");
}

TEST_CASE("comments, blank lines, and buffer_capacity parse") {
    ExperimentConfig c = parse_config_text(
        "# experiment\n\ndataset = synthetic\nstrategy = er\n  buffer_capacity = 125  \n");
    CHECK(c.buffer_capacity == 125);
    CHECK(c.strategy.kind == StrategyKind::ER);
}

TEST_CASE("overrides re-run validation") {
    ExperimentConfig c = parse_config_text(kTinyConfig);
    apply_override(c, "lr=0.5");
    CHECK(c.lr == real(0.5));
    apply_override(c, "strategy=clser");
    CHECK(c.strategy.kind == StrategyKind::CLSER);
    CHECK_THROWS_AS(apply_override(c, "tasks=3"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "nonsense=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "no_equals_sign"), ConfigError);
}

TEST_CASE("cifar reader decodes crafted records") {
    TempDir tmp("fdi_cli_cifar");
    // One record: label 3, every pixel byte 255.
    std::string rec(3073, '\xff');
    rec[0] = 3;
    write_file(tmp.file("one.bin"), rec);
    Dataset one = read_cifar10_binary(tmp.file("one.bin"));
    REQUIRE(one.size() == 1);
    CHECK(one.labels[0] == 3);
    CHECK(one.images[0] == real(1));
    CHECK(one.images[3071] == real(1));

    std::string two = rec;
    std::string second(3073, '\0');
    second[0] = 9;
    second[1] = 51;  // first red pixel = 51/255 = 0.2
    two += second;
    write_file(tmp.file("two.bin"), two);
    Dataset both = read_cifar10_binary(tmp.file("two.bin"));
    REQUIRE(both.size() == 2);
    CHECK(both.labels[1] == 9);
    CHECK(both.images[3072] == doctest::Approx(51.0 / 255.0));

    write_file(tmp.file("trunc.bin"), rec.substr(0, 3000));
    try {
        read_cifar10_binary(tmp.file("trunc.bin"));
        FAIL_CHECK("expected a truncation error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("3073") != std::string::npos);
    }

    std::string badlabel = rec;
    badlabel[0] = 10;
    write_file(tmp.file("bad.bin"), badlabel);
    CHECK_THROWS_AS(read_cifar10_binary(tmp.file("bad.bin")), DataError);
    CHECK_THROWS_AS(read_cifar10_binary(tmp.file("missing.bin")), DataError);
}

TEST_CASE("cifar write then read is lossless for 8-bit values") {
    TempDir tmp("fdi_cli_rt");
    Dataset d;
    d.images = Tensor({2, 3, 32, 32});
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> byte(0, 255);
    for (std::size_t i = 0; i < d.images.numel(); ++i)
        d.images[i] = real(byte(rng)) / real(255);
    d.labels = {4, 7};
    write_cifar10_binary(tmp.file("rt.bin"), d);
    Dataset back = read_cifar10_binary(tmp.file("rt.bin"));
    CHECK(back.labels == d.labels);
    for (std::size_t i = 0; i < d.images.numel(); ++i) CHECK(back.images[i] == d.images[i]);
}

TEST_CASE("synthetic data is seeded, class-structured, and frequency-separable") {
    SyntheticSpec spec;
    spec.classes = 4;
    spec.samples_per_class = 25;
    spec.image_size = 16;
    spec.seed = 5;
    Dataset a = synthesize_dataset(spec);
    Dataset b = synthesize_dataset(spec);
    REQUIRE(a.size() == 100);
    for (std::size_t i = 0; i < a.images.numel(); ++i) CHECK(a.images[i] == b.images[i]);
    spec.seed = 6;
    Dataset c = synthesize_dataset(spec);
    bool differs = false;
    for (std::size_t i = 0; i < a.images.numel(); ++i)
        if (a.images[i] != c.images[i]) differs = true;
    CHECK(differs);

    // A nearest-centroid classifier over low-frequency coefficients must beat
    // chance by a wide margin if the classes differ in the low band.
    WaveletQuad q = dwt2d(a.images);
    const std::size_t feat = q.ll.numel() / static_cast<std::size_t>(a.size());
    std::vector<std::vector<double>> centroid(4, std::vector<double>(feat, 0));
    std::vector<int> counts(4, 0);
    for (int i = 0; i < a.size(); ++i) {
        const int y = a.labels[static_cast<std::size_t>(i)];
        ++counts[static_cast<std::size_t>(y)];
        for (std::size_t j = 0; j < feat; ++j)
            centroid[static_cast<std::size_t>(y)][j] +=
                static_cast<double>(q.ll[static_cast<std::size_t>(i) * feat + j]);
    }
    for (int y = 0; y < 4; ++y)
        for (std::size_t j = 0; j < feat; ++j)
            centroid[static_cast<std::size_t>(y)][j] /= counts[static_cast<std::size_t>(y)];
    int correct = 0;
    for (int i = 0; i < a.size(); ++i) {
        int best = 0;
        double best_d = 1e300;
        for (int y = 0; y < 4; ++y) {
            double d = 0;
            for (std::size_t j = 0; j < feat; ++j) {
                const double diff =
                    static_cast<double>(q.ll[static_cast<std::size_t>(i) * feat + j]) -
                    centroid[static_cast<std::size_t>(y)][j];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = y;
            }
        }
        if (best == a.labels[static_cast<std::size_t>(i)]) ++correct;
    }
    CHECK(static_cast<double>(correct) / a.size() > 0.6);  // chance is 0.25
}

TEST_CASE("reports have the full lower-triangular accuracy table") {
    TempDir tmp("fdi_cli_report");
    ExperimentConfig c = parse_config_text(kTinyConfig);
    c.output_dir = tmp.file("out");
    ExperimentReport r = run_experiment(c);
    emit_report(r, c.output_dir);

    auto rows = parse_csv(read_file(c.output_dir + "/metrics.csv"));
    REQUIRE(rows.size() == 1 + 3);  // header + T(T+1)/2 rows for T=2
    CHECK(rows[0] == std::vector<std::string>(
                         {"after_task", "eval_task", "class_il_acc", "task_il_acc"}));
    for (std::size_t i = 1; i < rows.size(); ++i) REQUIRE(rows[i].size() == 4);
    CHECK(rows[1][0] == "0");
    CHECK(rows[3][1] == "1");

    auto curves = parse_csv(read_file(c.output_dir + "/curves.csv"));
    CHECK(curves.size() == 1 + 2);  // header + tasks*epochs

    nlohmann::json j = nlohmann::json::parse(read_file(c.output_dir + "/summary.json"));
    CHECK(j["tasks"] == 2);
    CHECK(j.contains("backbone_param_ratio"));
    CHECK(j.contains("flops_train_total"));
}

TEST_CASE("identical seeds produce identical metrics files") {
    TempDir tmp("fdi_cli_seed");
    ExperimentConfig c = parse_config_text(kTinyConfig);
    c.seed = 9;
    c.output_dir = tmp.file("a");
    emit_report(run_experiment(c), c.output_dir);
    c.output_dir = tmp.file("b");
    emit_report(run_experiment(c), c.output_dir);
    CHECK(read_file(tmp.file("a") + "/metrics.csv") == read_file(tmp.file("b") + "/metrics.csv"));
}

TEST_CASE("the command-line tool reports outcomes through exit codes") {
    TempDir tmp("fdi_cli_exec");
    write_file(tmp.file("good.txt"), kTinyConfig);
    write_file(tmp.file("bad.txt"), "dataset = synthetic\nstrategy = er\nwhat = 1\n");
    write_file(tmp.file("nofile.txt"),
               "dataset = cifar10\nstrategy = er\ntrain_path = /no/such/file\n"
               "test_path = /no/such/file\nepochs = 1\n");

    CHECK(run_cli("--config " + tmp.file("good.txt") + " --mode run --out " + tmp.file("out"),
                  tmp.file("run.log")) == 0);
    const std::string log = read_file(tmp.file("run.log"));
    CHECK(log.find("ACC_T") != std::string::npos);
    CHECK(fs::exists(tmp.path / "out" / "metrics.csv"));
    CHECK(fs::exists(tmp.path / "out" / "buffer.bin"));

    CHECK(run_cli("--mode inspect-buffer --out " + tmp.file("out"), tmp.file("insp.log")) == 0);
    nlohmann::json j = nlohmann::json::parse(read_file(tmp.file("insp.log")));
    CHECK(j["capacity"] == 20);
    CHECK(j["seen"] == 32);  // 40 samples * 0.8 train fraction offered once

    // Counting uses the default full-size backbone so the ratio is meaningful.
    write_file(tmp.file("full.txt"), "dataset = synthetic\nstrategy = er\n");
    CHECK(run_cli("--config " + tmp.file("full.txt") + " --mode count", tmp.file("count.log")) ==
          0);
    nlohmann::json cj = nlohmann::json::parse(read_file(tmp.file("count.log")));
    CHECK(cj["backbone_param_ratio"].get<double>() > 0.18);
    CHECK(cj["backbone_param_ratio"].get<double>() < 0.26);

    CHECK(run_cli("--config " + tmp.file("bad.txt") + " --mode run") == 2);
    CHECK(run_cli("--mode run") == 2);  // no config at all
    CHECK(run_cli("--config " + tmp.file("nofile.txt") + " --mode run") == 3);
    CHECK(run_cli("--config " + tmp.file("good.txt") + " --mode run --override tasks=3") == 2);
}

TEST_CASE("seed and output overrides take effect") {
    TempDir tmp("fdi_cli_over");
    write_file(tmp.file("cfg.txt"), kTinyConfig);
    CHECK(run_cli("--config " + tmp.file("cfg.txt") + " --mode run --seed 7 --out " +
                      tmp.file("s7"),
                  tmp.file("s7.log")) == 0);
    nlohmann::json j =
        nlohmann::json::parse(read_file(tmp.file("s7") + "/summary.json"));
    CHECK(j["seed"] == 7);
}
