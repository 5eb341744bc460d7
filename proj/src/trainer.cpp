#include "fdi/trainer.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace fdi {

std::vector<int> TaskStream::classes_through(int upto_task) const {
    std::vector<int> out;
    for (int t = 0; t <= upto_task; ++t)
        out.insert(out.end(), classes[static_cast<std::size_t>(t)].begin(),
                   classes[static_cast<std::size_t>(t)].end());
    return out;
}

TaskStream split_tasks(const Dataset& train, const Dataset& test, int num_tasks,
                       std::vector<int> class_order) {
    std::set<int> label_set(train.labels.begin(), train.labels.end());
    if (class_order.empty()) class_order.assign(label_set.begin(), label_set.end());
    if (class_order.size() != label_set.size() ||
        std::set<int>(class_order.begin(), class_order.end()) != label_set)
        throw ConfigError("split_tasks: class_order is not a permutation of the labels");
    if (num_tasks <= 0 || static_cast<int>(class_order.size()) % num_tasks != 0)
        throw ConfigError("split_tasks: " + std::to_string(num_tasks) +
                          " tasks do not evenly divide " +
                          std::to_string(class_order.size()) + " classes");
    const int per_task = static_cast<int>(class_order.size()) / num_tasks;

    TaskStream stream;
    std::vector<int> task_of_class(
        static_cast<std::size_t>(*std::max_element(class_order.begin(), class_order.end())) + 1,
        -1);
    for (int t = 0; t < num_tasks; ++t) {
        std::vector<int> cls(class_order.begin() + static_cast<std::size_t>(t) * per_task,
                             class_order.begin() + static_cast<std::size_t>(t + 1) * per_task);
        for (int c : cls) task_of_class[static_cast<std::size_t>(c)] = t;
        stream.classes.push_back(std::move(cls));
    }

    auto partition = [&](const Dataset& src) {
        std::vector<std::vector<int>> idx(static_cast<std::size_t>(num_tasks));
        for (int i = 0; i < src.size(); ++i)
            idx[static_cast<std::size_t>(
                    task_of_class[static_cast<std::size_t>(src.labels[i])])]
                .push_back(i);
        const std::size_t sample = static_cast<std::size_t>(src.images.dim(1)) *
                                   src.images.dim(2) * src.images.dim(3);
        std::vector<Dataset> out;
        for (int t = 0; t < num_tasks; ++t) {
            Dataset d;
            std::vector<int> shape = src.images.shape();
            shape[0] = static_cast<int>(idx[static_cast<std::size_t>(t)].size());
            d.images = Tensor(shape);
            int k = 0;
            for (int i : idx[static_cast<std::size_t>(t)]) {
                std::copy_n(src.images.data().data() + static_cast<std::size_t>(i) * sample,
                            sample, d.images.data().data() + static_cast<std::size_t>(k) * sample);
                d.labels.push_back(src.labels[static_cast<std::size_t>(i)]);
                ++k;
            }
            out.push_back(std::move(d));
        }
        return out;
    };
    stream.train = partition(train);
    stream.test = partition(test);
    return stream;
}

double average_accuracy(const AccuracyMatrix& m, int t) {
    if (t < 0 || t >= m.tasks) throw std::out_of_range("average_accuracy: task out of range");
    double s = 0;
    for (int tau = 0; tau <= t; ++tau) s += m.at(t, tau);
    return s / static_cast<double>(t + 1);
}

double forgetting(const AccuracyMatrix& m, int t) {
    if (t < 0 || t >= m.tasks) throw std::out_of_range("forgetting: task out of range");
    if (t == 0) return 0;
    double s = 0;
    for (int tau = 0; tau < t; ++tau) {
        double best = 0;
        for (int u = tau; u < t; ++u) best = std::max(best, m.at(u, tau));
        s += best - m.at(t, tau);
    }
    return s / static_cast<double>(t);
}

Trainer::Trainer(DualNet net, int buffer_capacity, TrainerOptions options)
    : opt_(options),
      buffer_(buffer_capacity, opt_.seed ^ 0x9e3779b97f4a7c15ULL),
      rng_(opt_.seed) {
    nets_.working = std::move(net);
    if (opt_.strategy.kind == StrategyKind::CLSER) {
        nets_.plastic = nets_.working.clone();
        nets_.stable = nets_.working.clone();
    }
    sgd_.params = parameters(nets_.working);
    sgd_.lr = opt_.lr;
    sgd_.momentum = opt_.momentum;
    sgd_.weight_decay = opt_.weight_decay;
}

DualNet& Trainer::eval_net() {
    return opt_.strategy.kind == StrategyKind::CLSER ? nets_.stable : nets_.working;
}

namespace {

Tensor slice_sample(const Tensor& batch, int i) {
    std::vector<int> shape(batch.shape().begin() + 1, batch.shape().end());
    Tensor out(shape);
    std::copy_n(batch.data().data() + static_cast<std::size_t>(i) * out.numel(), out.numel(),
                out.data().data());
    return out;
}

}  // namespace

Batch Trainer::make_live_batch(Graph& g, const Dataset& data, std::span<const int> indices) {
    const int n = static_cast<int>(indices.size());
    std::vector<int> shape = data.images.shape();
    shape[0] = n;
    Tensor images(shape);
    const std::size_t sample =
        static_cast<std::size_t>(shape[1]) * shape[2] * shape[3];
    Batch b;
    for (int i = 0; i < n; ++i) {
        std::copy_n(data.images.data().data() +
                        static_cast<std::size_t>(indices[static_cast<std::size_t>(i)]) * sample,
                    sample, images.data().data() + static_cast<std::size_t>(i) * sample);
        b.labels.push_back(data.labels[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])]);
    }
    const WaveletQuad quad = dwt2d(images);
    b.low = low_pass(quad);
    b.high = high_pass(g, quad, nets_.working.fuser, nets_.working.selection);
    return b;
}

Batch Trainer::make_replay_batch(int k) {
    if (buffer_.empty()) return Batch{};
    return stack_entries(buffer_.sample(k, rng_));
}

std::vector<real> Trainer::train_task(const Dataset& data, const std::vector<int>& task_classes,
                                      int task_index) {
    const int n = data.size();
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::vector<real> epoch_losses;

    for (int epoch = 0; epoch < opt_.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng_);
        real loss_sum = 0;
        int steps = 0;
        for (int start = 0; start < n;) {
            int count = std::min(opt_.batch_size, n - start);
            // Never leave a size-1 trailing batch: a single sample at 1x1
            // spatial resolution has no batch statistics to normalize with.
            if (n - start - count == 1) ++count;
            std::span<const int> idx(order.data() + start, static_cast<std::size_t>(count));
            real loss_value = 0;
            Tensor live_logits;  // working-model logits at offer time (DER++)
            Batch live;
            if (opt_.strategy.kind == StrategyKind::CLSER) {
                Graph g;
                live = make_live_batch(g, data, idx);
                Batch replay = make_replay_batch(opt_.replay_batch_size);
                samples_processed_ += count + replay.size();
                loss_value = clser_step(nets_, sgd_, live, replay, opt_.strategy, rng_);
            } else {
                Graph g;
                live = make_live_batch(g, data, idx);
                Tensor loss;
                switch (opt_.strategy.kind) {
                    case StrategyKind::ER: {
                        Batch replay = make_replay_batch(opt_.replay_batch_size);
                        samples_processed_ += count + replay.size();
                        loss = er_loss(g, nets_.working, live, replay);
                        break;
                    }
                    case StrategyKind::DERPP: {
                        Batch r1 = make_replay_batch(opt_.replay_batch_size);
                        Batch r2 = make_replay_batch(opt_.replay_batch_size);
                        samples_processed_ += count + r1.size() + r2.size();
                        loss = derpp_loss(g, nets_.working, live, r1, r2, opt_.strategy.alpha,
                                          opt_.strategy.beta);
                        break;
                    }
                    case StrategyKind::ERACE: {
                        Batch replay = make_replay_batch(opt_.replay_batch_size);
                        samples_processed_ += count + replay.size();
                        loss = erace_loss(g, nets_.working, live, replay, task_classes,
                                          seen_before_task_);
                        break;
                    }
                    default:
                        throw std::logic_error("train_task: unhandled strategy");
                }
                loss_value = loss.item();
                if (!std::isfinite(loss_value))
                    throw NumericError("train_task: non-finite loss " +
                                       std::to_string(loss_value) + " at task " +
                                       std::to_string(task_index) + " epoch " +
                                       std::to_string(epoch) + " step " +
                                       std::to_string(steps));
                sgd_.zero_grad();
                g.backward(loss);
                sgd_.step();
            }
            if (!std::isfinite(loss_value))
                throw NumericError("train_task: non-finite loss at task " +
                                   std::to_string(task_index));

            if (epoch == 0) {
                // One reservoir offer per stream sample, with the frequency
                // pair (and logits) captured from this step's forward pass.
                const bool want_logits = opt_.strategy.kind == StrategyKind::DERPP;
                if (want_logits && !live_logits.defined()) {
                    Graph silent(false);
                    live_logits =
                        nets_.working.forward(silent, live.low, live.high, false);
                }
                for (int i = 0; i < count; ++i) {
                    BufferEntry e;
                    e.low = slice_sample(live.low, i);
                    e.high = slice_sample(live.high, i);
                    e.label = live.labels[static_cast<std::size_t>(i)];
                    e.task_id = task_index;
                    if (want_logits) e.logits = slice_sample(live_logits, i);
                    buffer_.offer(std::move(e));
                }
            }
            loss_sum += loss_value;
            ++steps;
            start += count;
        }
        epoch_losses.push_back(steps > 0 ? loss_sum / static_cast<real>(steps) : real(0));
    }
    // classes of a finished task join the ER-ACE mask set exactly once
    for (int c : task_classes)
        if (std::find(seen_before_task_.begin(), seen_before_task_.end(), c) ==
            seen_before_task_.end())
            seen_before_task_.push_back(c);
    return epoch_losses;
}

void Trainer::end_task_hook(int task_index) {
    if (task_index == 0) freeze_fuser(nets_.working.fuser);
}

std::vector<double> Trainer::evaluate(const TaskStream& stream, EvalMode mode, int upto_task) {
    DualNet& net = eval_net();
    const std::vector<int> seen = stream.classes_through(upto_task);
    std::vector<double> row;
    for (int tau = 0; tau <= upto_task; ++tau) {
        const Dataset& test = stream.test[static_cast<std::size_t>(tau)];
        const std::vector<int>& candidates =
            mode == EvalMode::TASK_IL ? stream.classes[static_cast<std::size_t>(tau)] : seen;
        int correct = 0;
        const int n = test.size();
        for (int start = 0; start < n; start += 64) {
            const int count = std::min(64, n - start);
            std::vector<int> shape = test.images.shape();
            shape[0] = count;
            Tensor images(shape);
            const std::size_t sample =
                static_cast<std::size_t>(shape[1]) * shape[2] * shape[3];
            std::copy_n(test.images.data().data() + static_cast<std::size_t>(start) * sample,
                        static_cast<std::size_t>(count) * sample, images.data().data());
            Graph silent(false);
            const WaveletQuad quad = dwt2d(images);
            Tensor high = high_pass(silent, quad, net.fuser, net.selection);
            Tensor logits = net.forward(silent, low_pass(quad), high, false);
            const int k = logits.dim(1);
            for (int i = 0; i < count; ++i) {
                int best = -1;
                real best_v = 0;
                for (int c : candidates) {
                    // lowest class index wins ties
                    const real v = logits[static_cast<std::size_t>(i) * k + c];
                    if (best < 0 || v > best_v || (v == best_v && c < best)) {
                        best = c;
                        best_v = v;
                    }
                }
                if (best == test.labels[static_cast<std::size_t>(start + i)]) ++correct;
            }
        }
        row.push_back(n > 0 ? static_cast<double>(correct) / n : 0.0);
    }
    return row;
}

}  // namespace fdi
