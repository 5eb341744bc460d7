#pragma once

#include <random>

#include "fdi/model.hpp"

namespace fdi {

enum class StrategyKind { ER, DERPP, ERACE, CLSER };

const char* strategy_name(StrategyKind k);
StrategyKind strategy_from_name(const std::string& name);

struct StrategyConfig {
    StrategyKind kind = StrategyKind::ER;
    real alpha = real(0.1);  // DER++ logit-consistency weight
    real beta = real(0.5);   // DER++ replay cross-entropy weight
    real plastic_decay = real(0.999);
    real stable_decay = real(0.9999);
    real plastic_update_prob = real(0.9);
    real stable_update_prob = real(0.1);
    real consistency_weight = real(0.1);
};

// One stored sample: half-resolution low/high network inputs (high is kept
// post-fusion), label, optional logits, originating task. Entries are deep
// copies and never mutated after insertion.
struct BufferEntry {
    Tensor low;   // [C,H/2,W/2]
    Tensor high;  // [C,H/2,W/2]
    int label = 0;
    Tensor logits;  // [num_classes], DER++ only
    int task_id = 0;
};

// Fixed-capacity reservoir over the stream of offered samples (Vitter).
class ReplayBuffer {
public:
    explicit ReplayBuffer(int capacity, std::uint64_t seed = 0)
        : capacity_(capacity), rng_(seed) {}

    void offer(BufferEntry entry);
    std::vector<const BufferEntry*> sample(int k, std::mt19937_64& rng) const;

    int capacity() const { return capacity_; }
    long long seen() const { return seen_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const BufferEntry& entry(std::size_t i) const { return entries_[i]; }

    void save(const std::string& path) const;
    static ReplayBuffer load(const std::string& path);

private:
    int capacity_;
    long long seen_ = 0;
    std::vector<BufferEntry> entries_;
    std::mt19937_64 rng_;
};

// Minibatch of stacked frequency-pair inputs as fed to the dual net.
struct Batch {
    Tensor low;   // [N,C,H/2,W/2]
    Tensor high;  // [N,C,H/2,W/2]
    std::vector<int> labels;
    Tensor logits;  // [N,num_classes] stored soft targets, DER++ only

    int size() const { return static_cast<int>(labels.size()); }
    bool empty() const { return labels.empty(); }
};

Batch stack_entries(const std::vector<const BufferEntry*>& entries);

// Strategy losses. Each takes already-assembled live/replay batches; empty
// replay batches drop the corresponding term.
Tensor er_loss(Graph& g, DualNet& net, const Batch& live, const Batch& replay);
Tensor derpp_loss(Graph& g, DualNet& net, const Batch& live, const Batch& replay_logits,
                  const Batch& replay_ce, real alpha, real beta);
Tensor erace_loss(Graph& g, DualNet& net, const Batch& live, const Batch& replay,
                  const std::vector<int>& current_task_classes,
                  const std::vector<int>& seen_before_task);

// One full CLS-ER step: loss on the working net, SGD update, then stochastic
// EMA updates of the plastic and stable copies. Evaluation uses `stable`.
struct ClserNets {
    DualNet working, plastic, stable;
};

real clser_step(ClserNets& nets, Sgd& opt, const Batch& live, const Batch& replay,
                const StrategyConfig& cfg, std::mt19937_64& rng);

void ema_update(DualNet& target, const DualNet& src, real decay);

}  // namespace fdi
