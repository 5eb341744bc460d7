#pragma once

#include "fdi/dataset.hpp"
#include "fdi/errors.hpp"
#include "fdi/rehearsal.hpp"

namespace fdi {

// Sequence of tasks with disjoint class partitions.
struct TaskStream {
    std::vector<Dataset> train;
    std::vector<Dataset> test;
    std::vector<std::vector<int>> classes;  // class ids per task

    int num_tasks() const { return static_cast<int>(train.size()); }
    std::vector<int> classes_through(int upto_task) const;
};

// Classes are assigned to tasks in `class_order` (ascending labels when
// empty); every class set must divide evenly across tasks.
TaskStream split_tasks(const Dataset& train, const Dataset& test, int num_tasks,
                       std::vector<int> class_order = {});

// Lower-triangular accuracy record: at(t, tau) is accuracy on task tau after
// finishing task t.
struct AccuracyMatrix {
    int tasks = 0;
    std::vector<double> a;

    explicit AccuracyMatrix(int t = 0)
        : tasks(t), a(static_cast<std::size_t>(t) * t, -1.0) {}
    double& at(int t, int tau) { return a[static_cast<std::size_t>(t) * tasks + tau]; }
    double at(int t, int tau) const { return a[static_cast<std::size_t>(t) * tasks + tau]; }
};

double average_accuracy(const AccuracyMatrix& m, int t);
double forgetting(const AccuracyMatrix& m, int t);

enum class EvalMode { CLASS_IL, TASK_IL };

struct TrainerOptions {
    StrategyConfig strategy;
    int epochs = 5;
    real lr = real(0.03);
    real momentum = real(0);
    real weight_decay = real(0);
    int batch_size = 32;
    int replay_batch_size = 32;
    std::uint64_t seed = 0;
};

// Drives one continual-learning run over a task stream.
class Trainer {
public:
    Trainer(DualNet net, int buffer_capacity, TrainerOptions options);

    // Returns per-epoch mean losses. Buffer offers happen on the first epoch
    // only, so buffer.seen() grows by the task's sample count.
    std::vector<real> train_task(const Dataset& data, const std::vector<int>& task_classes,
                                 int task_index);

    // Freezes the pointwise fuser once task 0 completes; idempotent.
    void end_task_hook(int task_index);

    std::vector<double> evaluate(const TaskStream& stream, EvalMode mode, int upto_task);

    DualNet& net() { return nets_.working; }
    // Evaluation model: the stable EMA copy for CLS-ER, otherwise the working net.
    DualNet& eval_net();
    ReplayBuffer& buffer() { return buffer_; }
    long long samples_processed() const { return samples_processed_; }

private:
    Batch make_live_batch(Graph& g, const Dataset& data, std::span<const int> indices);
    Batch make_replay_batch(int k);

    TrainerOptions opt_;
    ClserNets nets_;
    Sgd sgd_;
    ReplayBuffer buffer_;
    std::mt19937_64 rng_;
    std::vector<int> seen_before_task_;  // classes from completed tasks
    long long samples_processed_ = 0;
};

struct ExperimentReport {
    int tasks = 0;
    AccuracyMatrix class_il, task_il;
    std::vector<double> acc_class_il, acc_task_il;  // ACC_t per task
    double forgetting_class_il = 0, forgetting_task_il = 0;
    long long dual_params = 0, dual_backbone_params = 0;
    long long baseline_params = 0, baseline_backbone_params = 0;
    double backbone_param_ratio = 0;
    long long flops_forward_per_sample = 0;
    long long flops_train_total = 0;
    long long activation_bytes_per_step = 0;
    long long samples_processed = 0;
    double wall_seconds = 0;
    std::vector<std::vector<real>> epoch_losses;  // per task
    std::uint64_t seed = 0;
};

}  // namespace fdi
