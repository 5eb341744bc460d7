#include "fdi/rehearsal.hpp"

#include <cstring>
#include <fstream>

namespace fdi {

const char* strategy_name(StrategyKind k) {
    switch (k) {
        case StrategyKind::ER: return "er";
        case StrategyKind::DERPP: return "derpp";
        case StrategyKind::ERACE: return "erace";
        case StrategyKind::CLSER: return "clser";
    }
    return "?";
}

StrategyKind strategy_from_name(const std::string& name) {
    for (StrategyKind k : {StrategyKind::ER, StrategyKind::DERPP, StrategyKind::ERACE,
                           StrategyKind::CLSER})
        if (name == strategy_name(k)) return k;
    throw std::invalid_argument("unknown strategy: " + name);
}

namespace {

Tensor frozen_copy(const Tensor& t) {
    Tensor c = t.clone();
    c.set_requires_grad(false);
    return c;
}

}  // namespace

void ReplayBuffer::offer(BufferEntry entry) {
    entry.low = frozen_copy(entry.low);
    entry.high = frozen_copy(entry.high);
    if (entry.logits.defined()) entry.logits = frozen_copy(entry.logits);
    if (seen_ < capacity_) {
        entries_.push_back(std::move(entry));
    } else if (capacity_ > 0) {
        std::uniform_int_distribution<long long> slot(0, seen_);
        const long long j = slot(rng_);
        if (j < capacity_) entries_[static_cast<std::size_t>(j)] = std::move(entry);
    }
    ++seen_;
}

std::vector<const BufferEntry*> ReplayBuffer::sample(int k, std::mt19937_64& rng) const {
    std::vector<const BufferEntry*> out;
    if (entries_.empty()) return out;
    std::uniform_int_distribution<std::size_t> pick(0, entries_.size() - 1);
    out.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) out.push_back(&entries_[pick(rng)]);
    return out;
}

Batch stack_entries(const std::vector<const BufferEntry*>& entries) {
    Batch b;
    if (entries.empty()) return b;
    const int n = static_cast<int>(entries.size());
    std::vector<int> low_shape = entries[0]->low.shape();
    std::vector<int> high_shape = entries[0]->high.shape();
    low_shape.insert(low_shape.begin(), n);
    high_shape.insert(high_shape.begin(), n);
    b.low = Tensor(low_shape);
    b.high = Tensor(high_shape);
    const bool with_logits = entries[0]->logits.defined();
    if (with_logits) b.logits = Tensor({n, entries[0]->logits.dim(0)});
    for (int i = 0; i < n; ++i) {
        const BufferEntry& e = *entries[static_cast<std::size_t>(i)];
        std::copy_n(e.low.data().data(), e.low.numel(),
                    b.low.data().data() + static_cast<std::size_t>(i) * e.low.numel());
        std::copy_n(e.high.data().data(), e.high.numel(),
                    b.high.data().data() + static_cast<std::size_t>(i) * e.high.numel());
        if (with_logits)
            std::copy_n(e.logits.data().data(), e.logits.numel(),
                        b.logits.data().data() + static_cast<std::size_t>(i) * e.logits.numel());
        b.labels.push_back(e.label);
    }
    return b;
}

Tensor er_loss(Graph& g, DualNet& net, const Batch& live, const Batch& replay) {
    Tensor live_logits = net.forward(g, live.low, live.high, true);
    Tensor loss = softmax_cross_entropy(g, live_logits, live.labels);
    if (!replay.empty()) {
        Tensor replay_logits = net.forward(g, replay.low, replay.high, true);
        loss = add(g, loss, softmax_cross_entropy(g, replay_logits, replay.labels));
    }
    return loss;
}

Tensor derpp_loss(Graph& g, DualNet& net, const Batch& live, const Batch& replay_logits,
                  const Batch& replay_ce, real alpha, real beta) {
    Tensor live_out = net.forward(g, live.low, live.high, true);
    Tensor loss = softmax_cross_entropy(g, live_out, live.labels);
    if (!replay_logits.empty()) {
        if (!replay_logits.logits.defined())
            throw std::invalid_argument("derpp_loss: replay batch is missing stored logits");
        Tensor out1 = net.forward(g, replay_logits.low, replay_logits.high, true);
        loss = add(g, loss, scale(g, mse(g, out1, replay_logits.logits), alpha));
    }
    if (!replay_ce.empty()) {
        Tensor out2 = net.forward(g, replay_ce.low, replay_ce.high, true);
        loss = add(g, loss, scale(g, softmax_cross_entropy(g, out2, replay_ce.labels), beta));
    }
    return loss;
}

Tensor erace_loss(Graph& g, DualNet& net, const Batch& live, const Batch& replay,
                  const std::vector<int>& current_task_classes,
                  const std::vector<int>& seen_before_task) {
    const int k = net.fc.w.dim(0);
    // Mask previously-seen classes that are absent from the live batch; the
    // current task's classes and anything not yet seen stay unmasked.
    std::vector<std::uint8_t> allowed(static_cast<std::size_t>(k), 1);
    for (int c : seen_before_task)
        if (c >= 0 && c < k) allowed[static_cast<std::size_t>(c)] = 0;
    for (int c : current_task_classes)
        if (c >= 0 && c < k) allowed[static_cast<std::size_t>(c)] = 1;
    for (int y : live.labels)
        if (y >= 0 && y < k) allowed[static_cast<std::size_t>(y)] = 1;
    const bool any_masked =
        std::any_of(allowed.begin(), allowed.end(), [](std::uint8_t a) { return a == 0; });

    Tensor live_out = net.forward(g, live.low, live.high, true);
    Tensor loss = softmax_cross_entropy(
        g, live_out, live.labels,
        any_masked ? std::span<const std::uint8_t>(allowed) : std::span<const std::uint8_t>{});
    if (!replay.empty()) {
        Tensor replay_out = net.forward(g, replay.low, replay.high, true);
        loss = add(g, loss, softmax_cross_entropy(g, replay_out, replay.labels));
    }
    return loss;
}

real clser_step(ClserNets& nets, Sgd& opt, const Batch& live, const Batch& replay,
                const StrategyConfig& cfg, std::mt19937_64& rng) {
    Graph g;
    Tensor live_out = nets.working.forward(g, live.low, live.high, true);
    Tensor loss = softmax_cross_entropy(g, live_out, live.labels);
    if (!replay.empty()) {
        Tensor replay_out = nets.working.forward(g, replay.low, replay.high, true);
        loss = add(g, loss, softmax_cross_entropy(g, replay_out, replay.labels));
        if (cfg.consistency_weight != real(0)) {
            Graph silent(false);
            Tensor target = nets.stable.forward(silent, replay.low, replay.high, false);
            loss = add(g, loss, scale(g, mse(g, replay_out, target), cfg.consistency_weight));
        }
    }
    const real value = loss.item();
    opt.zero_grad();
    g.backward(loss);
    opt.step();

    std::uniform_real_distribution<real> coin(real(0), real(1));
    if (coin(rng) < cfg.plastic_update_prob)
        ema_update(nets.plastic, nets.working, cfg.plastic_decay);
    if (coin(rng) < cfg.stable_update_prob)
        ema_update(nets.stable, nets.working, cfg.stable_decay);
    return value;
}

void ema_update(DualNet& target, const DualNet& src, real decay) {
    DualNet& s = const_cast<DualNet&>(src);
    auto tp = parameters(target);
    auto sp = parameters(s);
    if (tp.size() != sp.size())
        throw std::invalid_argument("ema_update: structural mismatch");
    for (std::size_t i = 0; i < tp.size(); ++i) {
        if (!tp[i].same_shape(sp[i]))
            throw std::invalid_argument("ema_update: parameter shape mismatch");
        for (std::size_t j = 0; j < tp[i].numel(); ++j)
            tp[i][j] = decay * tp[i][j] + (real(1) - decay) * sp[i][j];
    }
    auto tb = batchnorms(target);
    auto sb = batchnorms(s);
    for (std::size_t i = 0; i < tb.size(); ++i)
        for (std::size_t j = 0; j < tb[i]->running_mean.size(); ++j) {
            tb[i]->running_mean[j] =
                decay * tb[i]->running_mean[j] + (real(1) - decay) * sb[i]->running_mean[j];
            tb[i]->running_var[j] =
                decay * tb[i]->running_var[j] + (real(1) - decay) * sb[i]->running_var[j];
        }
}

namespace {

template <typename T>
void write_raw(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

void write_tensor32(std::ofstream& f, const Tensor& t) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
        const float v = static_cast<float>(t[i]);
        f.write(reinterpret_cast<const char*>(&v), 4);
    }
}

Tensor read_tensor32(std::ifstream& f, std::vector<int> shape) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<real>(read_raw<float>(f));
    return t;
}

}  // namespace

void ReplayBuffer::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("ReplayBuffer::save: cannot open " + path);
    f.write("FDIB", 4);
    write_raw<std::uint32_t>(f, 1);
    write_raw<std::int32_t>(f, capacity_);
    write_raw<std::int64_t>(f, seen_);
    write_raw<std::uint32_t>(f, static_cast<std::uint32_t>(entries_.size()));
    std::int32_t c = 0, h = 0, w = 0, logit_len = 0;
    if (!entries_.empty()) {
        c = entries_[0].low.dim(0);
        h = entries_[0].low.dim(1);
        w = entries_[0].low.dim(2);
        if (entries_[0].logits.defined()) logit_len = entries_[0].logits.dim(0);
    }
    write_raw(f, c);
    write_raw(f, h);
    write_raw(f, w);
    write_raw(f, logit_len);
    for (const BufferEntry& e : entries_) {
        if ((e.logits.defined() ? e.logits.dim(0) : 0) != logit_len)
            throw std::runtime_error("ReplayBuffer::save: mixed logits presence");
        write_raw<std::int32_t>(f, e.label);
        write_raw<std::int32_t>(f, e.task_id);
        write_tensor32(f, e.low);
        write_tensor32(f, e.high);
        if (logit_len > 0) write_tensor32(f, e.logits);
    }
}

ReplayBuffer ReplayBuffer::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("ReplayBuffer::load: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "FDIB", 4) != 0)
        throw std::runtime_error("ReplayBuffer::load: bad magic in " + path);
    if (read_raw<std::uint32_t>(f) != 1)
        throw std::runtime_error("ReplayBuffer::load: unsupported version");
    ReplayBuffer buf(read_raw<std::int32_t>(f));
    buf.seen_ = read_raw<std::int64_t>(f);
    const std::uint32_t n = read_raw<std::uint32_t>(f);
    const std::int32_t c = read_raw<std::int32_t>(f);
    const std::int32_t h = read_raw<std::int32_t>(f);
    const std::int32_t w = read_raw<std::int32_t>(f);
    const std::int32_t logit_len = read_raw<std::int32_t>(f);
    for (std::uint32_t i = 0; i < n; ++i) {
        BufferEntry e;
        e.label = read_raw<std::int32_t>(f);
        e.task_id = read_raw<std::int32_t>(f);
        e.low = read_tensor32(f, {c, h, w});
        e.high = read_tensor32(f, {c, h, w});
        if (logit_len > 0) e.logits = read_tensor32(f, {logit_len});
        buf.entries_.push_back(std::move(e));
    }
    if (!f) throw std::runtime_error("ReplayBuffer::load: truncated file " + path);
    return buf;
}

}  // namespace fdi
