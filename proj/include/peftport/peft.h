// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//
// The four PEFT techniques as attachable parameter sets.
//
//   technique     insertion   workspace                       repeats
//   Adapter       sequential  after attention and FFN blocks  every layer, both stacks
//   Compacter     sequential  after attention and FFN blocks  every layer, both stacks
//   LoRA          parallel    attention query/value proj.     every attention sub-layer
//   PrefixTuning  parallel    attention keys/values           every attention sub-layer
//
// Decoder cross-attention counts as an attention sub-layer.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "peftport/host_model.h"
#include "peftport/tensor.h"

namespace peftport {

enum class PeftTechnique { Adapter, Compacter, LoRA, PrefixTuning };

std::string to_string(PeftTechnique technique);
PeftTechnique technique_from_string(const std::string& name);
const std::vector<PeftTechnique>& all_techniques();

struct AdapterConfig {
    int bottleneck = 64;
    Activation activation = Activation::Gelu;
    bool operator==(const AdapterConfig&) const = default;
};

struct CompacterConfig {
    int bottleneck = 16;
    int hypercomplex_division = 4;
    Activation activation = Activation::Gelu;
    // Only the unshared variant is implemented; true is rejected.
    bool share_kron_factors = false;
    bool operator==(const CompacterConfig&) const = default;
};

struct LoraConfig {
    int rank = 8;
    double alpha = 16.0;
    double dropout = 0.0;
    double scaling() const { return alpha / static_cast<double>(rank); }
    bool operator==(const LoraConfig&) const = default;
};

struct PrefixConfig {
    int num_tokens = 5;
    int token_embed_dim = 512;
    int mid_dim = 512;
    Activation activation = Activation::Tanh;

    // Embedding and MLP widths of 8·d, capped at 512.
    static PrefixConfig scaled_for(int hidden_dim);
    bool operator==(const PrefixConfig&) const = default;
};

using PeftConfig = std::variant<AdapterConfig, CompacterConfig, LoraConfig, PrefixConfig>;

PeftTechnique technique_of(const PeftConfig& config);
// Default config for the technique; Prefix widths scaled to the host.
PeftConfig default_config(PeftTechnique technique, int hidden_dim);

struct HostMeta {
    int hidden_dim = 0;
    int num_enc_layers = 0;
    int num_dec_layers = 0;
    int num_heads = 0;

    static HostMeta of(const ModelConfig& config);
    bool operator==(const HostMeta&) const = default;
};

// Named parameters produced by PEFT tuning plus what is needed to rebuild
// their attachment topology. Tensors are shared handles: copying a state
// aliases its tensors, clone() does not.
struct PeftModuleState {
    PeftTechnique technique = PeftTechnique::Adapter;
    PeftConfig config = AdapterConfig{};
    HostMeta host;
    std::map<std::string, Tensor> tensors;

    PeftModuleState clone() const;
    std::size_t parameter_count() const;
};

// Throws IncompatibleConfig.
void validate_config(const PeftConfig& config, const HostMeta& host);

// Attention sites (self and cross) in canonical order: encoder self per
// layer, then decoder self and cross per layer.
std::vector<HookKey> attention_sites(const HostMeta& host);
// Sequential-insertion sites: after every attention block and every FFN block.
std::vector<HookKey> block_sites(const HostMeta& host);

// Tensor shapes fully determined by (config, host).
std::map<std::string, Shape> module_shapes(const PeftConfig& config, const HostMeta& host);

// Adapter: N(0, 0.01²) weights; Compacter: Glorot-uniform factors; LoRA: A ~
// N(0, 0.02²), B = 0; Prefix: Linear layers U(±1/√fan_in), seed embeddings
// N(0, 1). Biases of Adapter/Compacter start at zero.
PeftModuleState default_init(const PeftConfig& config, const HostMeta& host, std::uint64_t seed);

// Registers `state` at every hook point of its technique. The state's tensors
// are marked trainable; host parameters are left untouched.
void attach_state(HostModel& model, const PeftModuleState& state);
PeftModuleState attach(HostModel& model, const PeftConfig& config, std::uint64_t seed);
void detach(HostModel& model);

// ---------------------------------------------------------------------------
// Per-technique computations, usable on their own.

// h + (act(h·down + down_bias))·up + up_bias
Tensor adapter_apply(const Tensor& h, const Tensor& down, const Tensor& down_bias, const Tensor& up,
                     const Tensor& up_bias, Activation act = Activation::Gelu);

// Σ_i a[i] ⊗ b[i]
Tensor hypercomplex_weight(std::span<const Tensor> a, std::span<const Tensor> b);

Tensor compacter_apply(const Tensor& h, std::span<const Tensor> down_a, std::span<const Tensor> down_b,
                       const Tensor& down_bias, std::span<const Tensor> up_a, std::span<const Tensor> up_b,
                       const Tensor& up_bias, Activation act = Activation::Gelu);

// (alpha / r) · (x·A)·B
Tensor lora_apply(const Tensor& x, const Tensor& a, const Tensor& b, double alpha, int rank);

struct PrefixKV {
    HookKey site;
    Tensor keys;    // [num_tokens × d]
    Tensor values;  // [num_tokens × d]
};

// Linear₂(act(Linear₁(seeds))) split into one key and one value prefix per
// attention site.
std::vector<PrefixKV> prefix_compute(const PrefixConfig& config, const Tensor& seeds, const Tensor& w1,
                                     const Tensor& b1, const Tensor& w2, const Tensor& b2,
                                     const HostMeta& host);

}  // namespace peftport
