// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//

#include "peftport/host_model.h"

#include <openssl/evp.h>

#include <cmath>
#include <cstring>
#include <set>

#include "peftport/errors.h"
#include "peftport/rng.h"

namespace peftport {

namespace {

std::string layer_prefix(Stack stack, int layer) {
    return (stack == Stack::Encoder ? "enc." : "dec.") + std::to_string(layer);
}

Tensor init_normal(Shape shape, double stddev, std::uint64_t seed, const std::string& name) {
    Rng rng = make_rng(seed, name);
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<Scalar> values(shape_numel(shape));
    for (auto& v : values) {
        v = static_cast<float>(dist(rng));
    }
    return Tensor(std::move(shape), std::move(values));
}

}  // namespace

void ModelConfig::validate() const {
    auto bad = [](const std::string& what) { fail(ErrorKind::IncompatibleConfig, what); };
    if (num_enc_layers < 1 || num_dec_layers < 1 || hidden_dim < 1 || num_heads < 1 || ffn_dim < 1 ||
        max_seq_len < 1) {
        bad("all model dimensions must be >= 1");
    }
    if (vocab_size < 4) {
        bad("vocab_size must be >= 4");
    }
    if (hidden_dim % num_heads != 0) {
        bad("hidden_dim " + std::to_string(hidden_dim) + " is not divisible by num_heads " +
            std::to_string(num_heads));
    }
}

std::string HookKey::site() const {
    std::string s = layer_prefix(stack, layer);
    switch (sublayer) {
    case Sublayer::SelfAttn:
        return s + ".self";
    case Sublayer::CrossAttn:
        return s + ".cross";
    case Sublayer::Ffn:
        return s + ".ffn";
    }
    return s;
}

std::string HookKey::to_string() const {
    return site() + "@" + peftport::to_string(point);
}

std::string to_string(Stack stack) {
    return stack == Stack::Encoder ? "encoder" : "decoder";
}

std::string to_string(Sublayer sublayer) {
    switch (sublayer) {
    case Sublayer::SelfAttn: return "self";
    case Sublayer::CrossAttn: return "cross";
    case Sublayer::Ffn: return "ffn";
    }
    return "?";
}

std::string to_string(HookPoint point) {
    switch (point) {
    case HookPoint::AttnQueryProj: return "attn_query_proj";
    case HookPoint::AttnValueProj: return "attn_value_proj";
    case HookPoint::AttnKeysValues: return "attn_keys_values";
    case HookPoint::AfterAttnBlock: return "after_attn_block";
    case HookPoint::AfterFfnBlock: return "after_ffn_block";
    }
    return "?";
}

Tensor PeftHook::on_projection(const HookKey&, const Tensor&, const Tensor& output) {
    return output;
}

std::pair<Tensor, Tensor> PeftHook::on_keys_values(const HookKey&, const Tensor& keys, const Tensor& values) {
    return {keys, values};
}

Tensor PeftHook::on_block_output(const HookKey&, const Tensor& hidden) {
    return hidden;
}

std::string Fingerprint::hex() const {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (auto b : digest) {
        out += kDigits[b >> 4];
        out += kDigits[b & 0xF];
    }
    return out;
}

// ---------------------------------------------------------------------------

HostModel::HostModel(ModelConfig config, std::uint64_t seed) : config_(config) {
    config_.validate();
    const auto d = static_cast<std::size_t>(config_.hidden_dim);
    const auto f = static_cast<std::size_t>(config_.ffn_dim);
    const auto v = static_cast<std::size_t>(config_.vocab_size);
    const auto p = static_cast<std::size_t>(config_.max_seq_len);
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));
    const double out_std =
        proj_std / std::sqrt(2.0 * static_cast<double>(config_.num_enc_layers + config_.num_dec_layers));

    auto normal = [&](const std::string& name, Shape shape, double stddev) {
        params_.emplace(name, init_normal(std::move(shape), stddev, seed, name));
    };
    auto constant = [&](const std::string& name, Shape shape, double value) {
        params_.emplace(name, Tensor::filled(std::move(shape), value));
    };
    auto layer_norm = [&](const std::string& name) {
        constant(name + ".g", {d}, 1.0);
        constant(name + ".b", {d}, 0.0);
    };
    auto attention = [&](const std::string& prefix) {
        layer_norm(prefix + ".ln");
        normal(prefix + ".wq", {d, d}, proj_std);
        normal(prefix + ".wk", {d, d}, proj_std);
        normal(prefix + ".wv", {d, d}, proj_std);
        normal(prefix + ".wo", {d, d}, out_std);
    };
    auto ffn = [&](const std::string& prefix) {
        layer_norm(prefix + ".ln");
        normal(prefix + ".w1", {d, f}, proj_std);
        constant(prefix + ".b1", {f}, 0.0);
        normal(prefix + ".w2", {f, d}, out_std);
        constant(prefix + ".b2", {d}, 0.0);
    };

    normal("embed.tok", {v, d}, 1.0);
    normal("embed.pos_enc", {p, d}, 0.5);
    normal("embed.pos_dec", {p, d}, 0.5);
    for (int i = 0; i < config_.num_enc_layers; ++i) {
        const auto prefix = layer_prefix(Stack::Encoder, i);
        attention(prefix + ".self");
        ffn(prefix + ".ffn");
    }
    for (int i = 0; i < config_.num_dec_layers; ++i) {
        const auto prefix = layer_prefix(Stack::Decoder, i);
        attention(prefix + ".self");
        attention(prefix + ".cross");
        ffn(prefix + ".ffn");
    }
    layer_norm("enc.final_ln");
    layer_norm("dec.final_ln");
    normal("lm_head", {d, v}, proj_std);
}

HostModel::HostModel(ModelConfig config, std::map<std::string, Tensor> parameters)
    : config_(config), params_(std::move(parameters)) {
    config_.validate();
    const HostModel reference(config_, 0);
    if (reference.params_.size() != params_.size()) {
        fail(ErrorKind::CorruptFile, "host parameter set does not match the model config");
    }
    for (const auto& [name, t] : reference.params_) {
        auto it = params_.find(name);
        if (it == params_.end() || it->second.shape() != t.shape()) {
            fail(ErrorKind::CorruptFile, "host parameter '" + name + "' missing or misshapen");
        }
        it->second.set_requires_grad(false);
    }
}

const Tensor& HostModel::parameter(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) {
        fail(ErrorKind::InvalidArgument, "no host parameter named '" + name + "'");
    }
    return it->second;
}

void HostModel::set_parameter(const std::string& name, std::span<const Scalar> values) {
    auto it = params_.find(name);
    if (it == params_.end() || it->second.numel() != values.size()) {
        fail(ErrorKind::ShapeMismatch, "cannot set host parameter '" + name + "'");
    }
    std::copy(values.begin(), values.end(), it->second.mutable_data().begin());
}

std::vector<Tensor> HostModel::parameter_list() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& [name, t] : params_) {
        out.push_back(t);
    }
    return out;
}

void HostModel::set_trainable(bool trainable) {
    for (auto& [name, t] : params_) {
        t.set_requires_grad(trainable);
    }
}

HostModel HostModel::clone() const {
    std::map<std::string, Tensor> copy;
    for (const auto& [name, t] : params_) {
        copy.emplace(name, t.detach());
    }
    return HostModel(config_, std::move(copy));
}

std::vector<HookKey> HostModel::hook_keys() const {
    std::vector<HookKey> keys;
    auto attention_points = [&](Stack stack, int layer, Sublayer sub) {
        for (auto point : {HookPoint::AttnQueryProj, HookPoint::AttnValueProj, HookPoint::AttnKeysValues,
                           HookPoint::AfterAttnBlock}) {
            keys.push_back({stack, layer, sub, point});
        }
    };
    for (int i = 0; i < config_.num_enc_layers; ++i) {
        attention_points(Stack::Encoder, i, Sublayer::SelfAttn);
        keys.push_back({Stack::Encoder, i, Sublayer::Ffn, HookPoint::AfterFfnBlock});
    }
    for (int i = 0; i < config_.num_dec_layers; ++i) {
        attention_points(Stack::Decoder, i, Sublayer::SelfAttn);
        attention_points(Stack::Decoder, i, Sublayer::CrossAttn);
        keys.push_back({Stack::Decoder, i, Sublayer::Ffn, HookPoint::AfterFfnBlock});
    }
    return keys;
}

void HostModel::register_hook(const HookKey& key, std::shared_ptr<PeftHook> hook) {
    const auto valid = hook_keys();
    if (std::find(valid.begin(), valid.end(), key) == valid.end()) {
        fail(ErrorKind::InvalidArgument, "no hook point " + key.to_string() + " in this model");
    }
    if (hooks_.count(key)) {
        fail(ErrorKind::HookOccupied, "hook point " + key.to_string() + " already has a module attached");
    }
    hooks_.emplace(key, std::move(hook));
}

void HostModel::clear_hooks() {
    hooks_.clear();
}

PeftHook* HostModel::find_hook(const HookKey& key) const {
    if (hooks_.empty()) {
        return nullptr;
    }
    auto it = hooks_.find(key);
    return it == hooks_.end() ? nullptr : it->second.get();
}

void HostModel::check_tokens(std::span<const TokenId> tokens) const {
    if (tokens.empty()) {
        fail(ErrorKind::ShapeMismatch, "empty token sequence");
    }
    if (tokens.size() > static_cast<std::size_t>(config_.max_seq_len)) {
        fail(ErrorKind::SequenceTooLong, "sequence of " + std::to_string(tokens.size()) +
                                             " tokens exceeds max_seq_len " +
                                             std::to_string(config_.max_seq_len));
    }
    for (auto t : tokens) {
        if (t < 0 || t >= config_.vocab_size) {
            fail(ErrorKind::IndexOutOfVocab, "token id " + std::to_string(t));
        }
    }
}

Tensor HostModel::attention(const Tensor& x_query, const Tensor& x_kv, const std::string& prefix,
                            HookKey key, bool causal) const {
    const auto& p = params_;
    Tensor q = matmul(x_query, p.at(prefix + ".wq"));
    Tensor k = matmul(x_kv, p.at(prefix + ".wk"));
    Tensor v = matmul(x_kv, p.at(prefix + ".wv"));

    key.point = HookPoint::AttnQueryProj;
    if (auto* h = find_hook(key)) {
        q = h->on_projection(key, x_query, q);
    }
    key.point = HookPoint::AttnValueProj;
    if (auto* h = find_hook(key)) {
        v = h->on_projection(key, x_kv, v);
    }
    const std::size_t kv_rows = k.rows();
    key.point = HookPoint::AttnKeysValues;
    if (auto* h = find_hook(key)) {
        std::tie(k, v) = h->on_keys_values(key, k, v);
    }
    const std::size_t n_prefix = k.rows() - kv_rows;

    const auto heads = static_cast<std::size_t>(config_.num_heads);
    const auto hd = static_cast<std::size_t>(config_.head_dim());
    const Scalar inv_sqrt = 1.0 / std::sqrt(static_cast<Scalar>(hd));
    std::vector<Tensor> outputs;
    outputs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor qh = heads == 1 ? q : slice_cols(q, h * hd, hd);
        Tensor kh = heads == 1 ? k : slice_cols(k, h * hd, hd);
        Tensor vh = heads == 1 ? v : slice_cols(v, h * hd, hd);
        Tensor scores = scale(matmul_bt(qh, kh), inv_sqrt);
        if (observer_) {
            observer_(key, scores.rows(), scores.cols());
        }
        Tensor probs = causal ? softmax_rows(scores, n_prefix) : softmax_rows(scores);
        outputs.push_back(matmul(probs, vh));
    }
    Tensor merged = heads == 1 ? outputs[0] : concat_cols(outputs);
    return matmul(merged, p.at(prefix + ".wo"));
}

Tensor HostModel::feed_forward(const Tensor& x, const std::string& prefix) const {
    const auto& p = params_;
    Tensor h = gelu(add(matmul(x, p.at(prefix + ".w1")), p.at(prefix + ".b1")));
    return add(matmul(h, p.at(prefix + ".w2")), p.at(prefix + ".b2"));
}

Tensor HostModel::block_hook(HookKey key, const Tensor& h) const {
    if (auto* hook = find_hook(key)) {
        return hook->on_block_output(key, h);
    }
    return h;
}

Tensor HostModel::encode(std::span<const TokenId> tokens) const {
    check_tokens(tokens);
    std::set<PeftHook*> unique;
    for (const auto& [key, hook] : hooks_) {
        if (unique.insert(hook.get()).second) {
            hook->begin_pass();
        }
    }
    const auto& p = params_;
    Tensor x = add(embedding(p.at("embed.tok"), tokens), slice_rows(p.at("embed.pos_enc"), 0, tokens.size()));
    for (int i = 0; i < config_.num_enc_layers; ++i) {
        const auto prefix = layer_prefix(Stack::Encoder, i);
        const std::string self = prefix + ".self";
        Tensor n = layer_norm_rows(x, p.at(self + ".ln.g"), p.at(self + ".ln.b"));
        x = add(x, attention(n, n, self, {Stack::Encoder, i, Sublayer::SelfAttn, {}}, false));
        x = block_hook({Stack::Encoder, i, Sublayer::SelfAttn, HookPoint::AfterAttnBlock}, x);

        const std::string ffn = prefix + ".ffn";
        n = layer_norm_rows(x, p.at(ffn + ".ln.g"), p.at(ffn + ".ln.b"));
        x = add(x, feed_forward(n, ffn));
        x = block_hook({Stack::Encoder, i, Sublayer::Ffn, HookPoint::AfterFfnBlock}, x);
    }
    return layer_norm_rows(x, p.at("enc.final_ln.g"), p.at("enc.final_ln.b"));
}

Tensor HostModel::decode(const Tensor& memory, std::span<const TokenId> tokens) const {
    check_tokens(tokens);
    const auto& p = params_;
    Tensor y = add(embedding(p.at("embed.tok"), tokens), slice_rows(p.at("embed.pos_dec"), 0, tokens.size()));
    for (int i = 0; i < config_.num_dec_layers; ++i) {
        const auto prefix = layer_prefix(Stack::Decoder, i);
        const std::string self = prefix + ".self";
        Tensor n = layer_norm_rows(y, p.at(self + ".ln.g"), p.at(self + ".ln.b"));
        y = add(y, attention(n, n, self, {Stack::Decoder, i, Sublayer::SelfAttn, {}}, true));
        y = block_hook({Stack::Decoder, i, Sublayer::SelfAttn, HookPoint::AfterAttnBlock}, y);

        const std::string cross = prefix + ".cross";
        n = layer_norm_rows(y, p.at(cross + ".ln.g"), p.at(cross + ".ln.b"));
        y = add(y, attention(n, memory, cross, {Stack::Decoder, i, Sublayer::CrossAttn, {}}, false));
        y = block_hook({Stack::Decoder, i, Sublayer::CrossAttn, HookPoint::AfterAttnBlock}, y);

        const std::string ffn = prefix + ".ffn";
        n = layer_norm_rows(y, p.at(ffn + ".ln.g"), p.at(ffn + ".ln.b"));
        y = add(y, feed_forward(n, ffn));
        y = block_hook({Stack::Decoder, i, Sublayer::Ffn, HookPoint::AfterFfnBlock}, y);
    }
    y = layer_norm_rows(y, p.at("dec.final_ln.g"), p.at("dec.final_ln.b"));
    return matmul(y, p.at("lm_head"));
}

Tensor HostModel::forward(std::span<const TokenId> enc_tokens, std::span<const TokenId> dec_tokens) const {
    return decode(encode(enc_tokens), dec_tokens);
}

// ---------------------------------------------------------------------------

Fingerprint fingerprint(const HostModel& model) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
        fail(ErrorKind::IoError, "sha256 unavailable");
    }
    auto feed = [&](const void* bytes, std::size_t n) { EVP_DigestUpdate(ctx.get(), bytes, n); };
    auto feed_u64 = [&](std::uint64_t v) {
        std::uint8_t le[8];
        for (int i = 0; i < 8; ++i) {
            le[i] = static_cast<std::uint8_t>(v >> (8 * i));
        }
        feed(le, 8);
    };
    for (const auto& [name, t] : model.parameters()) {
        feed(name.data(), name.size() + 1);
        feed_u64(t.rank());
        for (auto d : t.shape()) {
            feed_u64(d);
        }
        std::vector<std::uint8_t> bytes(t.numel() * 4);
        const auto data = t.data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto f = static_cast<float>(data[i]);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            for (int b = 0; b < 4; ++b) {
                bytes[i * 4 + static_cast<std::size_t>(b)] = static_cast<std::uint8_t>(bits >> (8 * b));
            }
        }
        feed(bytes.data(), bytes.size());
    }
    Fingerprint fp;
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), fp.digest.data(), &len);
    return fp;
}

TokenSeq greedy_decode(const HostModel& model, std::span<const TokenId> prompt, int max_new) {
    if (max_new < 1) {
        fail(ErrorKind::InvalidArgument, "max_new must be >= 1");
    }
    if (max_new > model.config().max_seq_len) {
        fail(ErrorKind::SequenceTooLong, "cannot decode " + std::to_string(max_new) +
                                             " tokens with max_seq_len " +
                                             std::to_string(model.config().max_seq_len));
    }
    NoGradGuard no_grad;
    const Tensor memory = model.encode(prompt);
    TokenSeq dec{kPadId};
    TokenSeq out;
    const auto vocab = static_cast<std::size_t>(model.config().vocab_size);
    for (int step = 0; step < max_new; ++step) {
        const Tensor logits = model.decode(memory, dec);
        const auto row = logits.data().subspan((logits.rows() - 1) * vocab, vocab);
        std::size_t best = 0;
        for (std::size_t j = 1; j < vocab; ++j) {
            if (row[j] > row[best]) {
                best = j;
            }
        }
        const auto tok = static_cast<TokenId>(best);
        if (tok == kEosId) {
            break;
        }
        out.push_back(tok);
        dec.push_back(tok);
    }
    return out;
}

}  // namespace peftport
