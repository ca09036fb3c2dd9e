// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//

#include "peftport/peft.h"

#include <algorithm>
#include <cmath>

#include "peftport/errors.h"
#include "peftport/rng.h"

namespace peftport {

namespace {

std::size_t sz(int v) {
    return static_cast<std::size_t>(v);
}

std::string compacter_factor(const std::string& site, const char* proj, char factor, int i) {
    return site + ".compacter." + proj + "." + factor + std::to_string(i);
}

Tensor draw_normal(const Shape& shape, double mean, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(mean, stddev);
    std::vector<Scalar> v(shape_numel(shape));
    for (auto& x : v) {
        x = static_cast<float>(dist(rng));
    }
    return Tensor(shape, std::move(v));
}

Tensor draw_uniform(const Shape& shape, double bound, Rng& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<Scalar> v(shape_numel(shape));
    for (auto& x : v) {
        x = static_cast<float>(dist(rng));
    }
    return Tensor(shape, std::move(v));
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// ---------------------------------------------------------------------------

class AdapterHook final : public PeftHook {
public:
    AdapterHook(const PeftModuleState& state, AdapterConfig cfg) : tensors_(state.tensors), cfg_(cfg) {}

    Tensor on_block_output(const HookKey& key, const Tensor& hidden) override {
        const std::string p = key.site() + ".adapter.";
        return adapter_apply(hidden, tensors_.at(p + "down"), tensors_.at(p + "down_bias"), tensors_.at(p + "up"),
                             tensors_.at(p + "up_bias"), cfg_.activation);
    }

private:
    std::map<std::string, Tensor> tensors_;
    AdapterConfig cfg_;
};

class CompacterHook final : public PeftHook {
public:
    CompacterHook(const PeftModuleState& state, CompacterConfig cfg) : tensors_(state.tensors), cfg_(cfg) {}

    void begin_pass() override {
        weights_.clear();
        for (const auto& key : block_sites_) {
            const std::string site = key.site();
            weights_[site] = {materialize(site, "down"), materialize(site, "up")};
        }
    }

    Tensor on_block_output(const HookKey& key, const Tensor& hidden) override {
        const std::string site = key.site();
        auto it = weights_.find(site);
        if (it == weights_.end()) {
            begin_pass();
            it = weights_.find(site);
        }
        const std::string p = site + ".compacter.";
        Tensor z = activate(add(matmul(hidden, it->second.first), tensors_.at(p + "down_bias")), cfg_.activation);
        return add(hidden, add(matmul(z, it->second.second), tensors_.at(p + "up_bias")));
    }

    void set_sites(std::vector<HookKey> sites) { block_sites_ = std::move(sites); }

private:
    Tensor materialize(const std::string& site, const char* proj) const {
        std::vector<Tensor> a, b;
        for (int i = 0; i < cfg_.hypercomplex_division; ++i) {
            a.push_back(tensors_.at(compacter_factor(site, proj, 'A', i)));
            b.push_back(tensors_.at(compacter_factor(site, proj, 'B', i)));
        }
        return hypercomplex_weight(a, b);
    }

    std::map<std::string, Tensor> tensors_;
    CompacterConfig cfg_;
    std::vector<HookKey> block_sites_;
    std::map<std::string, std::pair<Tensor, Tensor>> weights_;
};

class LoraHook final : public PeftHook {
public:
    LoraHook(const PeftModuleState& state, LoraConfig cfg) : tensors_(state.tensors), cfg_(cfg) {}

    Tensor on_projection(const HookKey& key, const Tensor& input, const Tensor& output) override {
        const char* which = key.point == HookPoint::AttnQueryProj ? ".lora_q." : ".lora_v.";
        const std::string p = key.site() + which;
        return add(output, lora_apply(input, tensors_.at(p + "A"), tensors_.at(p + "B"), cfg_.alpha, cfg_.rank));
    }

private:
    std::map<std::string, Tensor> tensors_;
    LoraConfig cfg_;
};

class PrefixHook final : public PeftHook {
public:
    PrefixHook(const PeftModuleState& state, PrefixConfig cfg) : tensors_(state.tensors), cfg_(cfg), host_(state.host) {}

    void begin_pass() override {
        prefixes_.clear();
        for (auto& kv : prefix_compute(cfg_, tensors_.at("prefix.seeds"), tensors_.at("prefix.w1"),
                                       tensors_.at("prefix.b1"), tensors_.at("prefix.w2"), tensors_.at("prefix.b2"),
                                       host_)) {
            prefixes_.emplace(kv.site.site(), std::move(kv));
        }
    }

    std::pair<Tensor, Tensor> on_keys_values(const HookKey& key, const Tensor& keys, const Tensor& values) override {
        if (prefixes_.empty()) {
            begin_pass();
        }
        const auto& kv = prefixes_.at(key.site());
        const Tensor k_parts[] = {kv.keys, keys};
        const Tensor v_parts[] = {kv.values, values};
        return {concat_rows(k_parts), concat_rows(v_parts)};
    }

private:
    std::map<std::string, Tensor> tensors_;
    PrefixConfig cfg_;
    HostMeta host_;
    std::map<std::string, PrefixKV> prefixes_;
};

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(PeftTechnique technique) {
    switch (technique) {
    case PeftTechnique::Adapter: return "adapter";
    case PeftTechnique::Compacter: return "compacter";
    case PeftTechnique::LoRA: return "lora";
    case PeftTechnique::PrefixTuning: return "prefix";
    }
    return "?";
}

PeftTechnique technique_from_string(const std::string& name) {
    for (auto t : all_techniques()) {
        if (to_string(t) == name) {
            return t;
        }
    }
    fail(ErrorKind::InvalidArgument, "unknown PEFT technique '" + name + "'");
}

const std::vector<PeftTechnique>& all_techniques() {
    static const std::vector<PeftTechnique> all{PeftTechnique::Adapter, PeftTechnique::Compacter, PeftTechnique::LoRA,
                                                PeftTechnique::PrefixTuning};
    return all;
}

PrefixConfig PrefixConfig::scaled_for(int hidden_dim) {
    PrefixConfig cfg;
    cfg.token_embed_dim = std::min(512, 8 * hidden_dim);
    cfg.mid_dim = cfg.token_embed_dim;
    return cfg;
}

PeftTechnique technique_of(const PeftConfig& config) {
    switch (config.index()) {
    case 0: return PeftTechnique::Adapter;
    case 1: return PeftTechnique::Compacter;
    case 2: return PeftTechnique::LoRA;
    default: return PeftTechnique::PrefixTuning;
    }
}

PeftConfig default_config(PeftTechnique technique, int hidden_dim) {
    switch (technique) {
    case PeftTechnique::Adapter: return AdapterConfig{};
    case PeftTechnique::Compacter: return CompacterConfig{};
    case PeftTechnique::LoRA: return LoraConfig{};
    case PeftTechnique::PrefixTuning: return PrefixConfig::scaled_for(hidden_dim);
    }
    return AdapterConfig{};
}

HostMeta HostMeta::of(const ModelConfig& config) {
    return {config.hidden_dim, config.num_enc_layers, config.num_dec_layers, config.num_heads};
}

PeftModuleState PeftModuleState::clone() const {
    PeftModuleState out{technique, config, host, {}};
    for (const auto& [name, t] : tensors) {
        Tensor copy = t.detach();
        copy.set_requires_grad(t.requires_grad());
        out.tensors.emplace(name, std::move(copy));
    }
    return out;
}

std::size_t PeftModuleState::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors) {
        n += t.numel();
    }
    return n;
}

void validate_config(const PeftConfig& config, const HostMeta& host) {
    auto bad = [](const std::string& why) { fail(ErrorKind::IncompatibleConfig, why); };
    if (host.hidden_dim < 1 || host.num_enc_layers < 1 || host.num_dec_layers < 1 || host.num_heads < 1) {
        bad("host metadata must be positive");
    }
    std::visit(
        [&](const auto& c) {
            using C = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<C, AdapterConfig>) {
                if (c.bottleneck < 1) {
                    bad("adapter bottleneck must be >= 1");
                }
            } else if constexpr (std::is_same_v<C, CompacterConfig>) {
                const int n = c.hypercomplex_division;
                if (n < 1 || c.bottleneck < 1) {
                    bad("compacter bottleneck and hypercomplex division must be >= 1");
                }
                if (host.hidden_dim % n != 0) {
                    bad("hypercomplex division " + std::to_string(n) + " does not divide hidden_dim " +
                        std::to_string(host.hidden_dim));
                }
                if (c.bottleneck % n != 0) {
                    bad("hypercomplex division " + std::to_string(n) + " does not divide bottleneck " +
                        std::to_string(c.bottleneck));
                }
                if (c.share_kron_factors) {
                    bad("shared Kronecker factors are not supported");
                }
            } else if constexpr (std::is_same_v<C, LoraConfig>) {
                if (c.rank < 1) {
                    bad("lora rank must be >= 1");
                }
                if (c.dropout < 0.0 || c.dropout >= 1.0) {
                    bad("lora dropout must lie in [0, 1)");
                }
                if (c.dropout != 0.0) {
                    bad("lora dropout > 0 is not supported; all forwards are deterministic");
                }
            } else {
                if (c.num_tokens < 1 || c.token_embed_dim < 1 || c.mid_dim < 1) {
                    bad("prefix dimensions must be >= 1");
                }
            }
        },
        config);
}

std::vector<HookKey> attention_sites(const HostMeta& host) {
    std::vector<HookKey> out;
    for (int i = 0; i < host.num_enc_layers; ++i) {
        out.push_back({Stack::Encoder, i, Sublayer::SelfAttn, HookPoint::AttnKeysValues});
    }
    for (int i = 0; i < host.num_dec_layers; ++i) {
        out.push_back({Stack::Decoder, i, Sublayer::SelfAttn, HookPoint::AttnKeysValues});
        out.push_back({Stack::Decoder, i, Sublayer::CrossAttn, HookPoint::AttnKeysValues});
    }
    return out;
}

std::vector<HookKey> block_sites(const HostMeta& host) {
    std::vector<HookKey> out;
    for (int i = 0; i < host.num_enc_layers; ++i) {
        out.push_back({Stack::Encoder, i, Sublayer::SelfAttn, HookPoint::AfterAttnBlock});
        out.push_back({Stack::Encoder, i, Sublayer::Ffn, HookPoint::AfterFfnBlock});
    }
    for (int i = 0; i < host.num_dec_layers; ++i) {
        out.push_back({Stack::Decoder, i, Sublayer::SelfAttn, HookPoint::AfterAttnBlock});
        out.push_back({Stack::Decoder, i, Sublayer::CrossAttn, HookPoint::AfterAttnBlock});
        out.push_back({Stack::Decoder, i, Sublayer::Ffn, HookPoint::AfterFfnBlock});
    }
    return out;
}

std::map<std::string, Shape> module_shapes(const PeftConfig& config, const HostMeta& host) {
    validate_config(config, host);
    const std::size_t d = sz(host.hidden_dim);
    std::map<std::string, Shape> shapes;
    std::visit(
        [&](const auto& c) {
            using C = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<C, AdapterConfig>) {
                const std::size_t b = sz(c.bottleneck);
                for (const auto& key : block_sites(host)) {
                    const std::string p = key.site() + ".adapter.";
                    shapes[p + "down"] = {d, b};
                    shapes[p + "down_bias"] = {b};
                    shapes[p + "up"] = {b, d};
                    shapes[p + "up_bias"] = {d};
                }
            } else if constexpr (std::is_same_v<C, CompacterConfig>) {
                const std::size_t n = sz(c.hypercomplex_division);
                const std::size_t b = sz(c.bottleneck);
                for (const auto& key : block_sites(host)) {
                    const std::string site = key.site();
                    for (int i = 0; i < c.hypercomplex_division; ++i) {
                        shapes[compacter_factor(site, "down", 'A', i)] = {n, n};
                        shapes[compacter_factor(site, "down", 'B', i)] = {d / n, b / n};
                        shapes[compacter_factor(site, "up", 'A', i)] = {n, n};
                        shapes[compacter_factor(site, "up", 'B', i)] = {b / n, d / n};
                    }
                    shapes[site + ".compacter.down_bias"] = {b};
                    shapes[site + ".compacter.up_bias"] = {d};
                }
            } else if constexpr (std::is_same_v<C, LoraConfig>) {
                const std::size_t r = sz(c.rank);
                for (const auto& key : attention_sites(host)) {
                    for (const char* which : {".lora_q.", ".lora_v."}) {
                        const std::string p = key.site() + which;
                        shapes[p + "A"] = {d, r};
                        shapes[p + "B"] = {r, d};
                    }
                }
            } else {
                const std::size_t out = attention_sites(host).size() * 2 * d;
                shapes["prefix.seeds"] = {sz(c.num_tokens), sz(c.token_embed_dim)};
                shapes["prefix.w1"] = {sz(c.token_embed_dim), sz(c.mid_dim)};
                shapes["prefix.b1"] = {sz(c.mid_dim)};
                shapes["prefix.w2"] = {sz(c.mid_dim), out};
                shapes["prefix.b2"] = {out};
            }
        },
        config);
    return shapes;
}

PeftModuleState default_init(const PeftConfig& config, const HostMeta& host, std::uint64_t seed) {
    PeftModuleState state{technique_of(config), config, host, {}};
    for (const auto& [name, shape] : module_shapes(config, host)) {
        Rng rng = make_rng(seed, name);
        Tensor t;
        switch (state.technique) {
        case PeftTechnique::Adapter:
            t = ends_with(name, "_bias") ? Tensor(shape) : draw_normal(shape, 0.0, 0.01, rng);
            break;
        case PeftTechnique::Compacter:
            if (ends_with(name, "_bias")) {
                t = Tensor(shape);
            } else {
                const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
                t = draw_uniform(shape, limit, rng);
            }
            break;
        case PeftTechnique::LoRA:
            t = ends_with(name, ".B") ? Tensor(shape) : draw_normal(shape, 0.0, 0.02, rng);
            break;
        case PeftTechnique::PrefixTuning:
            if (name == "prefix.seeds") {
                t = draw_normal(shape, 0.0, 1.0, rng);
            } else {
                const auto& cfg = std::get<PrefixConfig>(config);
                const int fan_in = (name == "prefix.w1" || name == "prefix.b1") ? cfg.token_embed_dim : cfg.mid_dim;
                t = draw_uniform(shape, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
            }
            break;
        }
        t.set_requires_grad(true);
        state.tensors.emplace(name, std::move(t));
    }
    return state;
}

void attach_state(HostModel& model, const PeftModuleState& state) {
    if (state.host != HostMeta::of(model.config())) {
        fail(ErrorKind::IncompatibleHost, "module host metadata does not match the model");
    }
    const auto expected = module_shapes(state.config, state.host);
    if (expected.size() != state.tensors.size()) {
        fail(ErrorKind::ShapeMismatch, "module tensor set does not match its config");
    }
    for (const auto& [name, shape] : expected) {
        auto it = state.tensors.find(name);
        if (it == state.tensors.end() || it->second.shape() != shape) {
            fail(ErrorKind::ShapeMismatch, "module tensor '" + name + "' missing or misshapen");
        }
    }

    std::shared_ptr<PeftHook> hook;
    std::vector<HookKey> keys;
    switch (state.technique) {
    case PeftTechnique::Adapter:
        hook = std::make_shared<AdapterHook>(state, std::get<AdapterConfig>(state.config));
        keys = block_sites(state.host);
        break;
    case PeftTechnique::Compacter: {
        auto h = std::make_shared<CompacterHook>(state, std::get<CompacterConfig>(state.config));
        keys = block_sites(state.host);
        h->set_sites(keys);
        hook = h;
        break;
    }
    case PeftTechnique::LoRA:
        hook = std::make_shared<LoraHook>(state, std::get<LoraConfig>(state.config));
        for (auto key : attention_sites(state.host)) {
            key.point = HookPoint::AttnQueryProj;
            keys.push_back(key);
            key.point = HookPoint::AttnValueProj;
            keys.push_back(key);
        }
        break;
    case PeftTechnique::PrefixTuning:
        hook = std::make_shared<PrefixHook>(state, std::get<PrefixConfig>(state.config));
        keys = attention_sites(state.host);
        break;
    }

    for (const auto& key : keys) {
        if (model.has_hook(key)) {
            fail(ErrorKind::HookOccupied, "hook point " + key.to_string() + " already has a module attached");
        }
    }
    for (const auto& key : keys) {
        model.register_hook(key, hook);
    }
    for (const auto& [name, t] : state.tensors) {
        Tensor handle = t;
        handle.set_requires_grad(true);
    }
}

PeftModuleState attach(HostModel& model, const PeftConfig& config, std::uint64_t seed) {
    PeftModuleState state = default_init(config, HostMeta::of(model.config()), seed);
    attach_state(model, state);
    return state;
}

void detach(HostModel& model) {
    model.clear_hooks();
}

// ---------------------------------------------------------------------------

Tensor adapter_apply(const Tensor& h, const Tensor& down, const Tensor& down_bias, const Tensor& up,
                     const Tensor& up_bias, Activation act) {
    if (h.rank() != 2 || down.rank() != 2 || up.rank() != 2 || down.rows() != h.cols() ||
        up.rows() != down.cols() || up.cols() != h.cols() || down_bias.numel() != down.cols() ||
        up_bias.numel() != up.cols()) {
        fail(ErrorKind::ShapeMismatch, "adapter shapes do not conform");
    }
    Tensor z = activate(add(matmul(h, down), down_bias), act);
    return add(h, add(matmul(z, up), up_bias));
}

Tensor hypercomplex_weight(std::span<const Tensor> a, std::span<const Tensor> b) {
    if (a.empty() || a.size() != b.size()) {
        fail(ErrorKind::ShapeMismatch, "hypercomplex weight needs matching, non-empty factor lists");
    }
    std::vector<Tensor> terms;
    terms.reserve(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        terms.push_back(kronecker(a[i], b[i]));
    }
    Tensor w = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) {
        if (terms[i].shape() != w.shape()) {
            fail(ErrorKind::ShapeMismatch, "Kronecker terms have different shapes");
        }
        w = add(w, terms[i]);
    }
    return w;
}

Tensor compacter_apply(const Tensor& h, std::span<const Tensor> down_a, std::span<const Tensor> down_b,
                       const Tensor& down_bias, std::span<const Tensor> up_a, std::span<const Tensor> up_b,
                       const Tensor& up_bias, Activation act) {
    const std::size_t n = down_a.size();
    for (const auto& f : {down_a, up_a}) {
        for (const auto& t : f) {
            if (t.rank() != 2 || t.rows() != n || t.cols() != n) {
                fail(ErrorKind::IncompatibleConfig, "each A factor must be n×n with n = number of factors");
            }
        }
    }
    return adapter_apply(h, hypercomplex_weight(down_a, down_b), down_bias, hypercomplex_weight(up_a, up_b),
                         up_bias, act);
}

Tensor lora_apply(const Tensor& x, const Tensor& a, const Tensor& b, double alpha, int rank) {
    if (rank < 1 || a.rank() != 2 || b.rank() != 2 || a.cols() != static_cast<std::size_t>(rank) ||
        b.rows() != static_cast<std::size_t>(rank) || x.rank() != 2 || x.cols() != a.rows()) {
        fail(ErrorKind::ShapeMismatch, "lora shapes do not conform");
    }
    return scale(matmul(matmul(x, a), b), alpha / static_cast<double>(rank));
}

std::vector<PrefixKV> prefix_compute(const PrefixConfig& config, const Tensor& seeds, const Tensor& w1,
                                     const Tensor& b1, const Tensor& w2, const Tensor& b2, const HostMeta& host) {
    const auto sites = attention_sites(host);
    const std::size_t d = sz(host.hidden_dim);
    if (seeds.rank() != 2 || seeds.rows() != sz(config.num_tokens) || seeds.cols() != sz(config.token_embed_dim) ||
        w1.rank() != 2 || w1.rows() != seeds.cols() || w2.rank() != 2 || w2.rows() != w1.cols() ||
        w2.cols() != sites.size() * 2 * d) {
        fail(ErrorKind::ShapeMismatch, "prefix MLP shapes do not conform");
    }
    const Tensor out = add(matmul(activate(add(matmul(seeds, w1), b1), config.activation), w2), b2);
    std::vector<PrefixKV> result;
    result.reserve(sites.size());
    for (std::size_t s = 0; s < sites.size(); ++s) {
        result.push_back({sites[s], slice_cols(out, 2 * s * d, d), slice_cols(out, (2 * s + 1) * d, d)});
    }
    return result;
}

}  // namespace peftport
