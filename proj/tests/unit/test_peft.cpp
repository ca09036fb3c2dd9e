// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//

#include <gtest/gtest.h>

#include <random>

#include "oracles.h"
#include "peftport/errors.h"
#include "peftport/peft.h"

namespace peftport {
namespace {

ModelConfig desk_config() {
    ModelConfig c;
    c.vocab_size = 40;
    return c;
}

ModelConfig tiny_config() {
    ModelConfig c;
    c.num_enc_layers = 1;
    c.num_dec_layers = 1;
    c.hidden_dim = 16;
    c.num_heads = 2;
    c.ffn_dim = 32;
    c.vocab_size = 24;
    c.max_seq_len = 12;
    return c;
}

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorKind::InvalidArgument;
}

std::vector<double> values(const Tensor& t) {
    return {t.data().begin(), t.data().end()};
}

TEST(PeftSites, Counts) {
    const auto host = HostMeta::of(desk_config());
    EXPECT_EQ(attention_sites(host).size(), 6u);
    EXPECT_EQ(block_sites(host).size(), 10u);
}

TEST(PeftParameters, AdapterCountOracle) {
    const auto host = HostMeta::of(desk_config());
    const auto state = default_init(AdapterConfig{}, host, 1);
    // 10 block sites, each d·b + b + b·d + d with d = 32, b = 64.
    EXPECT_EQ(state.parameter_count(), 10u * (32 * 64 + 64 + 64 * 32 + 32));
    EXPECT_EQ(state.parameter_count(), 41920u);
}

TEST(PeftParameters, CompacterIsSmallerThanAdapter) {
    const auto host = HostMeta::of(desk_config());
    const auto compacter = default_init(CompacterConfig{}, host, 1);
    const auto adapter = default_init(AdapterConfig{}, host, 1);
    // Per site: 2·(n·n² + n·(d/n)·(b/n)) + b + d with n = 4, b = 16.
    EXPECT_EQ(compacter.parameter_count(), 10u * (2 * (4 * 16 + 4 * 8 * 4) + 16 + 32));
    EXPECT_LT(compacter.parameter_count(), adapter.parameter_count());
}

TEST(PeftParameters, LoraAndPrefixCounts) {
    const auto host = HostMeta::of(desk_config());
    EXPECT_EQ(default_init(LoraConfig{}, host, 1).parameter_count(), 6u * 2 * (32 * 8 + 8 * 32));
    const auto prefix = PrefixConfig::scaled_for(32);
    EXPECT_EQ(prefix.token_embed_dim, 256);
    EXPECT_EQ(prefix.mid_dim, 256);
    EXPECT_EQ(PrefixConfig::scaled_for(512).mid_dim, 512);
    EXPECT_EQ(default_init(prefix, host, 1).parameter_count(),
              5u * 256 + 256 * 256 + 256 + 256 * (6 * 2 * 32) + 6 * 2 * 32);
}

TEST(PeftInit, DeterministicAndOnFloatGrid) {
    const auto host = HostMeta::of(desk_config());
    for (auto tech : all_techniques()) {
        const auto cfg = default_config(tech, 32);
        const auto a = default_init(cfg, host, 3);
        const auto b = default_init(cfg, host, 3);
        const auto c = default_init(cfg, host, 4);
        bool any_diff = false;
        for (const auto& [name, t] : a.tensors) {
            EXPECT_EQ(values(t), values(b.tensors.at(name))) << name;
            any_diff |= values(t) != values(c.tensors.at(name));
            for (double v : t.data()) {
                ASSERT_EQ(v, static_cast<double>(static_cast<float>(v)));
            }
        }
        EXPECT_TRUE(any_diff) << to_string(tech);
    }
}

TEST(PeftInit, DefaultDistributions) {
    const auto host = HostMeta::of(desk_config());
    const auto lora = default_init(LoraConfig{}, host, 1);
    const auto& b = lora.tensors.at("enc.0.self.lora_q.B");
    EXPECT_EQ(moments(b).variance, 0.0);
    EXPECT_EQ(moments(b).mean, 0.0);
    EXPECT_NEAR(std::sqrt(moments(lora.tensors.at("enc.0.self.lora_q.A")).variance), 0.02, 0.004);
    const auto adapter = default_init(AdapterConfig{}, host, 1);
    EXPECT_NEAR(std::sqrt(moments(adapter.tensors.at("enc.0.ffn.adapter.down")).variance), 0.01, 0.001);
    EXPECT_EQ(moments(adapter.tensors.at("enc.0.ffn.adapter.up_bias")).variance, 0.0);
}

TEST(PeftConfigValidation, Rejections) {
    const auto host = HostMeta::of(desk_config());
    EXPECT_EQ(kind_of([&] { validate_config(AdapterConfig{0}, host); }), ErrorKind::IncompatibleConfig);
    EXPECT_EQ(kind_of([&] { validate_config(CompacterConfig{16, 3}, host); }), ErrorKind::IncompatibleConfig);
    CompacterConfig shared;
    shared.share_kron_factors = true;
    EXPECT_EQ(kind_of([&] { validate_config(shared, host); }), ErrorKind::IncompatibleConfig);
    EXPECT_EQ(kind_of([&] { validate_config(LoraConfig{8, 16.0, 0.1}, host); }), ErrorKind::IncompatibleConfig);
    EXPECT_EQ(kind_of([&] { validate_config(LoraConfig{0}, host); }), ErrorKind::IncompatibleConfig);
    EXPECT_EQ(kind_of([&] { validate_config(PrefixConfig{0}, host); }), ErrorKind::IncompatibleConfig);
}

TEST(PeftAttach, LoraStartsAsIdentityFunction) {
    const HostModel plain(desk_config(), 1);
    HostModel m = plain.clone();
    attach(m, LoraConfig{}, 2);
    const TokenSeq enc{3, 4, 5, 6};
    const TokenSeq dec{0, 7};
    EXPECT_EQ(values(m.forward(enc, dec)), values(plain.forward(enc, dec)));
}

TEST(PeftAttach, EveryTechniqueRegistersItsWorkspace) {
    const auto host = HostMeta::of(desk_config());
    const std::map<PeftTechnique, std::size_t> expected = {{PeftTechnique::Adapter, 10},
                                                           {PeftTechnique::Compacter, 10},
                                                           {PeftTechnique::LoRA, 12},
                                                           {PeftTechnique::PrefixTuning, 6}};
    for (auto tech : all_techniques()) {
        HostModel m(desk_config(), 1);
        const auto state = attach(m, default_config(tech, 32), 1);
        EXPECT_EQ(m.hook_count(), expected.at(tech)) << to_string(tech);
        for (const auto& [name, t] : state.tensors) {
            EXPECT_TRUE(t.requires_grad()) << name;
        }
        detach(m);
        EXPECT_FALSE(m.has_hooks());
    }
    (void)host;
}

TEST(PeftAttach, OccupiedWorkspaceIsAllOrNothing) {
    HostModel m(desk_config(), 1);
    attach(m, AdapterConfig{}, 1);
    const auto before = m.hook_count();
    EXPECT_EQ(kind_of([&] { attach(m, CompacterConfig{}, 1); }), ErrorKind::HookOccupied);
    EXPECT_EQ(m.hook_count(), before);
    EXPECT_NO_THROW(attach(m, LoraConfig{}, 1));
}

TEST(PeftAttach, HostAndShapeChecks) {
    HostModel m(desk_config(), 1);
    auto other = HostMeta::of(desk_config());
    other.hidden_dim = 16;
    other.num_heads = 2;
    const auto foreign = default_init(AdapterConfig{}, other, 1);
    EXPECT_EQ(kind_of([&] { attach_state(m, foreign); }), ErrorKind::IncompatibleHost);
    auto broken = default_init(AdapterConfig{}, HostMeta::of(desk_config()), 1);
    broken.tensors["enc.0.self.adapter.down"] = Tensor({32, 63}, true);
    EXPECT_EQ(kind_of([&] { attach_state(m, broken); }), ErrorKind::ShapeMismatch);
    EXPECT_FALSE(m.has_hooks());
}

TEST(PeftMath, AdapterFormula) {
    std::mt19937_64 rng(1);
    const Tensor h = oracle::random_tensor({3, 4}, rng, 1.0, false);
    const Tensor down = oracle::random_tensor({4, 2}, rng, 1.0, false);
    const Tensor db = oracle::random_tensor({2}, rng, 1.0, false);
    const Tensor up = oracle::random_tensor({2, 4}, rng, 1.0, false);
    const Tensor ub = oracle::random_tensor({4}, rng, 1.0, false);
    const Tensor out = adapter_apply(h, down, db, up, ub, Activation::Relu);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            double expected = h.at(i, j) + ub.data()[j];
            for (std::size_t k = 0; k < 2; ++k) {
                double z = db.data()[k];
                for (std::size_t l = 0; l < 4; ++l) {
                    z += h.at(i, l) * down.at(l, k);
                }
                expected += std::max(z, 0.0) * up.at(k, j);
            }
            EXPECT_NEAR(out.at(i, j), expected, 1e-12);
        }
    }
}

TEST(PeftMath, HypercomplexMatchesReference) {
    std::mt19937_64 rng(2);
    for (int n : {1, 2, 4}) {
        std::vector<Tensor> a, b;
        for (int i = 0; i < n; ++i) {
            a.push_back(oracle::random_tensor({std::size_t(n), std::size_t(n)}, rng, 1.0, false));
            b.push_back(oracle::random_tensor({8 / std::size_t(n), 4 / std::size_t(n)}, rng, 1.0, false));
        }
        const Tensor w = hypercomplex_weight(a, b);
        EXPECT_EQ(w.shape(), (Shape{8, 4}));
        const auto ref = oracle::hypercomplex_reference(a, b);
        for (std::size_t i = 0; i < ref.size(); ++i) {
            EXPECT_NEAR(w.data()[i], ref[i], 1e-12);
        }
    }
}

TEST(PeftMath, CompacterEqualsAdapterWithMaterializedWeights) {
    std::mt19937_64 rng(3);
    const int n = 2;
    std::vector<Tensor> da, db, ua, ub;
    for (int i = 0; i < n; ++i) {
        da.push_back(oracle::random_tensor({2, 2}, rng, 1.0, false));
        db.push_back(oracle::random_tensor({4, 2}, rng, 1.0, false));
        ua.push_back(oracle::random_tensor({2, 2}, rng, 1.0, false));
        ub.push_back(oracle::random_tensor({2, 4}, rng, 1.0, false));
    }
    const Tensor h = oracle::random_tensor({3, 8}, rng, 1.0, false);
    const Tensor dbias = oracle::random_tensor({4}, rng, 1.0, false);
    const Tensor ubias = oracle::random_tensor({8}, rng, 1.0, false);
    const Tensor c = compacter_apply(h, da, db, dbias, ua, ub, ubias);
    const Tensor a = adapter_apply(h, hypercomplex_weight(da, db), dbias, hypercomplex_weight(ua, ub), ubias);
    for (std::size_t i = 0; i < c.numel(); ++i) {
        EXPECT_NEAR(c.data()[i], a.data()[i], 1e-12);
    }
    std::vector<Tensor> wrong{oracle::random_tensor({3, 3}, rng, 1.0, false),
                              oracle::random_tensor({3, 3}, rng, 1.0, false)};
    EXPECT_EQ(kind_of([&] { compacter_apply(h, wrong, db, dbias, ua, ub, ubias); }),
              ErrorKind::IncompatibleConfig);
}

TEST(PeftMath, LoraScaling) {
    std::mt19937_64 rng(4);
    const Tensor x = oracle::random_tensor({2, 6}, rng, 1.0, false);
    const Tensor a = oracle::random_tensor({6, 2}, rng, 1.0, false);
    const Tensor b = oracle::random_tensor({2, 6}, rng, 1.0, false);
    const Tensor out = lora_apply(x, a, b, 16.0, 2);
    const Tensor ref = scale(matmul(matmul(x, a), b), 8.0);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        EXPECT_NEAR(out.data()[i], ref.data()[i], 1e-12);
    }
}

TEST(PeftMath, PrefixSplitPerSite) {
    const auto host = HostMeta::of(tiny_config());
    const PrefixConfig cfg{3, 8, 10, Activation::Tanh};
    const auto state = default_init(cfg, host, 1);
    const auto kv = prefix_compute(cfg, state.tensors.at("prefix.seeds"), state.tensors.at("prefix.w1"),
                                   state.tensors.at("prefix.b1"), state.tensors.at("prefix.w2"),
                                   state.tensors.at("prefix.b2"), host);
    ASSERT_EQ(kv.size(), attention_sites(host).size());
    for (std::size_t s = 0; s < kv.size(); ++s) {
        EXPECT_EQ(kv[s].site.site(), attention_sites(host)[s].site());
        EXPECT_EQ(kv[s].keys.shape(), (Shape{3, 16}));
        EXPECT_EQ(kv[s].values.shape(), (Shape{3, 16}));
    }
}

// Every module tensor of every technique against central differences.
TEST(PeftGradients, FiniteDifferencesPerTechnique) {
    std::mt19937_64 rng(17);
    const TokenSeq enc{3, 4, 5, 6, 7};
    const TokenSeq dec{0, 8, 9};
    const std::vector<std::int32_t> targets{8, 9, 1};
    for (auto tech : all_techniques()) {
        HostModel m(tiny_config(), 2);
        auto state = attach(m, default_config(tech, 16), 3);
        for (auto& [name, t] : state.tensors) {
            for (auto& v : t.mutable_data()) {
                v += std::normal_distribution<double>(0.0, 0.2)(rng);
            }
        }
        std::vector<Tensor> all;
        for (auto& [name, t] : state.tensors) {
            all.push_back(t);
        }
        auto loss = [&] { return softmax_ce_loss(m.forward(enc, dec), targets); };
        for (auto& [name, t] : state.tensors) {
            Tensor p = t;
            const auto r = oracle::check_gradient(loss, p, oracle::sample_indices(p, 6, rng), all);
            EXPECT_LT(r.rel_error, 1e-3) << to_string(tech) << " " << name;
        }
    }
}

}  // namespace
}  // namespace peftport
