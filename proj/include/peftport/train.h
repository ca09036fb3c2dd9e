// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//
// Frozen-host PEFT training, full-model training and verbalized-label
// evaluation.
//
// An example is trained as a sequence-to-sequence pair: the encoder reads
// the input tokens and the decoder is teacher-forced on the label followed
// by EOS. Its token length is |input| + |label| + 1.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "peftport/host_model.h"
#include "peftport/peft.h"
#include "peftport/vocab.h"

namespace peftport {

struct Example {
    TokenSeq input;
    TokenSeq label;

    std::size_t token_length() const { return input.size() + label.size() + 1; }
    bool operator==(const Example&) const = default;
};

using ExampleSet = std::vector<Example>;

struct TrainConfig {
    double learning_rate = 1e-4;
    double warmup_fraction = 0.10;
    int batch_tokens = 4096;
    int total_steps = 0;
    std::uint64_t seed = 0;

    static TrainConfig pre_porting(int total_steps, std::uint64_t seed);
    static TrainConfig post_porting(int total_steps, std::uint64_t seed);

    int warmup_steps() const;
    // Throws InvalidArgument.
    void validate() const;
};

// Linear warmup from 0 to learning_rate, then linear decay to 0 at
// total_steps. Throws StepOutOfRange outside [0, total_steps].
double lr_at(int step, const TrainConfig& cfg);

using Batch = std::vector<std::size_t>;

// Seeded shuffle followed by greedy packing: a batch is closed when the next
// example would push it past the budget. Throws ExampleTooLong.
std::vector<Batch> batch_by_lengths(const std::vector<std::size_t>& lengths, std::size_t batch_tokens,
                                    std::uint64_t seed);
std::vector<Batch> batch_by_tokens(const ExampleSet& data, std::size_t batch_tokens, std::uint64_t seed);

class Adam {
public:
    explicit Adam(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    // Applies one update from the accumulated gradients and clears them.
    // Parameters are snapped to the float32 grid afterwards.
    void step(double lr);
    void zero_grad();
    const std::vector<Tensor>& params() const noexcept { return params_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    double beta1_;
    double beta2_;
    double eps_;
    int t_ = 0;
};

// factor · Σ CE over the teacher-forced decoder positions of one example.
Tensor example_loss(const HostModel& model, const Example& ex, double factor);

// Mean per-token loss over a batch (summed CE / target tokens).
Tensor batch_loss(const HostModel& model, const ExampleSet& data, const Batch& batch);

struct TrainTrace {
    std::vector<double> loss;
    std::vector<double> lr;
};

// Trains the tensors of `module` (attached to `model`) for exactly
// cfg.total_steps updates. Host parameters are frozen. Throws EmptyDataset,
// NonFiniteLoss and ExampleTooLong.
TrainTrace train_peft(HostModel& model, PeftModuleState& module, const ExampleSet& data, const TrainConfig& cfg,
                      const std::optional<std::filesystem::path>& trace_path = std::nullopt);

// Trains every host parameter. The model must carry no hooks.
TrainTrace train_host(HostModel& model, const ExampleSet& data, const TrainConfig& cfg,
                      const std::optional<std::filesystem::path>& trace_path = std::nullopt);

void write_trace_csv(const std::filesystem::path& path, const TrainTrace& trace);

struct EvalResult {
    double accuracy = 0.0;
    int n_examples = 0;
    int n_correct = 0;

    bool operator==(const EvalResult&) const = default;
};

// Greedy decoding of up to |label| + 1 tokens; correct iff the decoded
// tokens equal the label exactly. Throws EmptyDataset and LabelNotInVocab.
EvalResult evaluate(const HostModel& model, const ExampleSet& data);

}  // namespace peftport
