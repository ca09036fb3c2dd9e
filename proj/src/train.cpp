// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//

#include "peftport/train.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "peftport/errors.h"
#include "peftport/rng.h"

namespace peftport {

TrainConfig TrainConfig::pre_porting(int total_steps, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.batch_tokens = 4096;
    cfg.total_steps = total_steps;
    cfg.seed = seed;
    return cfg;
}

TrainConfig TrainConfig::post_porting(int total_steps, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.batch_tokens = 2048;
    cfg.total_steps = total_steps;
    cfg.seed = seed;
    return cfg;
}

int TrainConfig::warmup_steps() const {
    return static_cast<int>(std::llround(warmup_fraction * static_cast<double>(total_steps)));
}

void TrainConfig::validate() const {
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
        fail(ErrorKind::InvalidArgument, "warmup_fraction must lie in [0, 1)");
    }
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        fail(ErrorKind::InvalidArgument, "learning_rate must be finite and non-negative");
    }
    if (batch_tokens < 1) {
        fail(ErrorKind::InvalidArgument, "batch_tokens must be positive");
    }
    if (total_steps < 0) {
        fail(ErrorKind::InvalidArgument, "total_steps must be non-negative");
    }
}

double lr_at(int step, const TrainConfig& cfg) {
    if (step < 0 || step > cfg.total_steps) {
        fail(ErrorKind::StepOutOfRange,
             "step " + std::to_string(step) + " outside [0, " + std::to_string(cfg.total_steps) + "]");
    }
    const int warmup = cfg.warmup_steps();
    if (step < warmup) {
        return cfg.learning_rate * (static_cast<double>(step) / static_cast<double>(warmup));
    }
    if (cfg.total_steps == warmup) {
        return cfg.learning_rate;
    }
    return cfg.learning_rate *
           (static_cast<double>(cfg.total_steps - step) / static_cast<double>(cfg.total_steps - warmup));
}

std::vector<Batch> batch_by_lengths(const std::vector<std::size_t>& lengths, std::size_t batch_tokens,
                                    std::uint64_t seed) {
    for (std::size_t i = 0; i < lengths.size(); ++i) {
        if (lengths[i] > batch_tokens) {
            fail(ErrorKind::ExampleTooLong, "example " + std::to_string(i) + " has " + std::to_string(lengths[i]) +
                                                " tokens, budget is " + std::to_string(batch_tokens));
        }
    }
    std::vector<std::size_t> order(lengths.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "batch-order"));
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<Batch> batches;
    Batch current;
    std::size_t used = 0;
    for (auto i : order) {
        if (!current.empty() && used + lengths[i] > batch_tokens) {
            batches.push_back(std::move(current));
            current.clear();
            used = 0;
        }
        current.push_back(i);
        used += lengths[i];
    }
    if (!current.empty()) {
        batches.push_back(std::move(current));
    }
    return batches;
}

std::vector<Batch> batch_by_tokens(const ExampleSet& data, std::size_t batch_tokens, std::uint64_t seed) {
    std::vector<std::size_t> lengths;
    lengths.reserve(data.size());
    for (const auto& ex : data) {
        lengths.push_back(ex.token_length());
    }
    return batch_by_lengths(lengths, batch_tokens, seed);
}

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Adam::step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = params_[k];
        if (!p.has_grad()) {
            continue;
        }
        const auto g = p.grad();
        auto w = p.mutable_data();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
        snap_to_float32(p);
        p.zero_grad();
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) {
        p.zero_grad();
    }
}

Tensor example_loss(const HostModel& model, const Example& ex, double factor) {
    TokenSeq dec_in;
    dec_in.reserve(ex.label.size() + 1);
    dec_in.push_back(kPadId);
    dec_in.insert(dec_in.end(), ex.label.begin(), ex.label.end());
    TokenSeq targets(ex.label.begin(), ex.label.end());
    targets.push_back(kEosId);
    return cross_entropy(model.forward(ex.input, dec_in), targets, factor);
}

Tensor batch_loss(const HostModel& model, const ExampleSet& data, const Batch& batch) {
    std::size_t target_tokens = 0;
    for (auto i : batch) {
        target_tokens += data[i].label.size() + 1;
    }
    const double factor = 1.0 / static_cast<double>(target_tokens);
    std::vector<Tensor> losses;
    losses.reserve(batch.size());
    for (auto i : batch) {
        losses.push_back(example_loss(model, data[i], factor));
    }
    return add_scalars(losses);
}

namespace {

TrainTrace run_training(HostModel& model, std::vector<Tensor> params, const ExampleSet& data, const TrainConfig& cfg,
                        const std::optional<std::filesystem::path>& trace_path) {
    cfg.validate();
    if (data.empty()) {
        fail(ErrorKind::EmptyDataset, "training data is empty");
    }
    TrainTrace trace;
    Adam opt(std::move(params));
    std::vector<Batch> epoch;
    std::size_t cursor = 0;
    std::uint64_t epoch_index = 0;
    for (int step = 0; step < cfg.total_steps; ++step) {
        if (cursor == epoch.size()) {
            epoch = batch_by_tokens(data, static_cast<std::size_t>(cfg.batch_tokens),
                                    derive_seed(cfg.seed, epoch_index++));
            cursor = 0;
        }
        const Tensor loss = batch_loss(model, data, epoch[cursor++]);
        const double value = loss.item();
        if (!std::isfinite(value)) {
            fail(ErrorKind::NonFiniteLoss, "loss became non-finite at step " + std::to_string(step));
        }
        loss.backward();
        const double lr = lr_at(step, cfg);
        opt.step(lr);
        trace.loss.push_back(value);
        trace.lr.push_back(lr);
    }
    if (trace_path) {
        write_trace_csv(*trace_path, trace);
    }
    return trace;
}

}  // namespace

TrainTrace train_peft(HostModel& model, PeftModuleState& module, const ExampleSet& data, const TrainConfig& cfg,
                      const std::optional<std::filesystem::path>& trace_path) {
    model.set_trainable(false);
    std::vector<Tensor> params;
    for (auto& [name, t] : module.tensors) {
        t.set_requires_grad(true);
        params.push_back(t);
    }
    return run_training(model, std::move(params), data, cfg, trace_path);
}

TrainTrace train_host(HostModel& model, const ExampleSet& data, const TrainConfig& cfg,
                      const std::optional<std::filesystem::path>& trace_path) {
    if (model.has_hooks()) {
        fail(ErrorKind::InvalidArgument, "train_host expects a model without attached modules");
    }
    model.set_trainable(true);
    auto trace = run_training(model, model.parameter_list(), data, cfg, trace_path);
    model.set_trainable(false);
    return trace;
}

void write_trace_csv(const std::filesystem::path& path, const TrainTrace& trace) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        fail(ErrorKind::IoError, "cannot write " + path.string());
    }
    out.precision(9);
    out << "step,loss,lr\n";
    for (std::size_t i = 0; i < trace.loss.size(); ++i) {
        out << i << ',' << trace.loss[i] << ',' << trace.lr[i] << '\n';
    }
}

EvalResult evaluate(const HostModel& model, const ExampleSet& data) {
    if (data.empty()) {
        fail(ErrorKind::EmptyDataset, "evaluation data is empty");
    }
    const auto vocab = model.config().vocab_size;
    for (const auto& ex : data) {
        if (ex.label.empty()) {
            fail(ErrorKind::LabelNotInVocab, "example without a label verbalization");
        }
        for (auto id : ex.label) {
            if (id < 0 || id >= vocab || id == kEosId || id == kPadId) {
                fail(ErrorKind::LabelNotInVocab, "label token " + std::to_string(id) + " is not a vocabulary word");
            }
        }
    }
    EvalResult r;
    r.n_examples = static_cast<int>(data.size());
    for (const auto& ex : data) {
        const auto out = greedy_decode(model, ex.input, static_cast<int>(ex.label.size()) + 1);
        if (out == ex.label) {
            ++r.n_correct;
        }
    }
    r.accuracy = static_cast<double>(r.n_correct) / static_cast<double>(r.n_examples);
    return r;
}

}  // namespace peftport
