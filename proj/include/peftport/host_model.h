// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//
// A small pre-norm encoder-decoder transformer with learned absolute position
// embeddings. Every attention and feed-forward sub-layer exposes hook points
// where an attached PEFT module can act:
//
//   AttnQueryProj / AttnValueProj  parallel delta on the q / v projection output
//   AttnKeysValues                 rows prepended to the projected keys and values
//   AfterAttnBlock / AfterFfnBlock transform of the residual stream after the
//                                  sub-layer's residual add
//
// Decoder layers carry both a self-attention and a cross-attention sub-layer;
// both expose the attention hook points.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "peftport/tensor.h"
#include "peftport/vocab.h"

namespace peftport {

struct ModelConfig {
    int num_enc_layers = 2;
    int num_dec_layers = 2;
    int hidden_dim = 32;
    int num_heads = 4;
    int ffn_dim = 64;
    int vocab_size = 64;
    int max_seq_len = 32;

    int head_dim() const { return hidden_dim / num_heads; }
    // Throws IncompatibleConfig when an invariant is violated.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

enum class Stack { Encoder, Decoder };
enum class Sublayer { SelfAttn, CrossAttn, Ffn };
enum class HookPoint { AttnQueryProj, AttnValueProj, AttnKeysValues, AfterAttnBlock, AfterFfnBlock };

struct HookKey {
    Stack stack = Stack::Encoder;
    int layer = 0;
    Sublayer sublayer = Sublayer::SelfAttn;
    HookPoint point = HookPoint::AfterAttnBlock;

    auto operator<=>(const HookKey&) const = default;

    // "enc.0.self", "dec.1.cross", "dec.1.ffn"
    std::string site() const;
    std::string to_string() const;
};

// Callback interface for an attached module. One hook object may be
// registered at many keys; the key tells it which site is running.
class PeftHook {
public:
    virtual ~PeftHook() = default;

    // Called once at the start of every encoder pass.
    virtual void begin_pass() {}
    virtual Tensor on_projection(const HookKey& key, const Tensor& input, const Tensor& output);
    virtual std::pair<Tensor, Tensor> on_keys_values(const HookKey& key, const Tensor& keys,
                                                     const Tensor& values);
    virtual Tensor on_block_output(const HookKey& key, const Tensor& hidden);
};

struct Fingerprint {
    std::array<std::uint8_t, 32> digest{};

    std::string hex() const;
    bool operator==(const Fingerprint&) const = default;
};

using AttentionObserver = std::function<void(const HookKey& site, std::size_t query_rows,
                                             std::size_t key_cols)>;

class HostModel {
public:
    HostModel(ModelConfig config, std::uint64_t seed);
    HostModel(ModelConfig config, std::map<std::string, Tensor> parameters);

    const ModelConfig& config() const noexcept { return config_; }
    const std::map<std::string, Tensor>& parameters() const noexcept { return params_; }
    const Tensor& parameter(const std::string& name) const;
    // Replaces the data of an existing parameter (shape must match).
    void set_parameter(const std::string& name, std::span<const Scalar> values);

    // Trainable handles for full-model training.
    std::vector<Tensor> parameter_list() const;
    void set_trainable(bool trainable);

    // Deep copy of the parameters; hooks are not copied.
    HostModel clone() const;

    // Every (site, point) pair this model exposes, in canonical order.
    std::vector<HookKey> hook_keys() const;
    void register_hook(const HookKey& key, std::shared_ptr<PeftHook> hook);
    void clear_hooks();
    bool has_hook(const HookKey& key) const { return hooks_.count(key) != 0; }
    bool has_hooks() const noexcept { return !hooks_.empty(); }
    std::size_t hook_count() const noexcept { return hooks_.size(); }

    void set_attention_observer(AttentionObserver observer) { observer_ = std::move(observer); }

    Tensor encode(std::span<const TokenId> tokens) const;
    // Logits [len(tokens) × vocab] for each decoder position.
    Tensor decode(const Tensor& memory, std::span<const TokenId> tokens) const;
    Tensor forward(std::span<const TokenId> enc_tokens, std::span<const TokenId> dec_tokens) const;

private:
    Tensor attention(const Tensor& x_query, const Tensor& x_kv, const std::string& prefix,
                     HookKey key, bool causal) const;
    Tensor feed_forward(const Tensor& x, const std::string& prefix) const;
    Tensor block_hook(HookKey key, const Tensor& h) const;
    PeftHook* find_hook(const HookKey& key) const;
    void check_tokens(std::span<const TokenId> tokens) const;

    ModelConfig config_;
    std::map<std::string, Tensor> params_;
    std::map<HookKey, std::shared_ptr<PeftHook>> hooks_;
    AttentionObserver observer_;
};

Fingerprint fingerprint(const HostModel& model);

// Autoregressive argmax continuation of `prompt`, stopping at EOS or after
// `max_new` tokens. EOS is not included in the result; ties go to the lowest id.
TokenSeq greedy_decode(const HostModel& model, std::span<const TokenId> prompt, int max_new);

std::string to_string(Stack stack);
std::string to_string(Sublayer sublayer);
std::string to_string(HookPoint point);

}  // namespace peftport
