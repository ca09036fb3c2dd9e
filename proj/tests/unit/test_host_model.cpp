// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//

#include <gtest/gtest.h>

#include <random>

#include "oracles.h"
#include "peftport/errors.h"
#include "peftport/host_model.h"

namespace peftport {
namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.num_enc_layers = 1;
    c.num_dec_layers = 1;
    c.hidden_dim = 16;
    c.num_heads = 2;
    c.ffn_dim = 32;
    c.vocab_size = 20;
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

TEST(ModelConfig, Validate) {
    ModelConfig c = small_config();
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.head_dim(), 8);
    c.num_heads = 3;
    EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::IncompatibleConfig);
    c = small_config();
    c.vocab_size = 2;
    EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::IncompatibleConfig);
}

TEST(HostModel, ForwardShapes) {
    const HostModel m(small_config(), 1);
    const TokenSeq enc{3, 4, 5, 6};
    const TokenSeq dec{0, 7, 8};
    const Tensor logits = m.forward(enc, dec);
    EXPECT_EQ(logits.shape(), (Shape{3, 20}));
    EXPECT_EQ(m.encode(enc).shape(), (Shape{4, 16}));
}

TEST(HostModel, InputErrors) {
    const HostModel m(small_config(), 1);
    const TokenSeq too_long(13, 3);
    const TokenSeq bad{3, 20};
    const TokenSeq ok{0};
    EXPECT_EQ(kind_of([&] { m.forward(too_long, ok); }), ErrorKind::SequenceTooLong);
    EXPECT_EQ(kind_of([&] { m.forward(bad, ok); }), ErrorKind::IndexOutOfVocab);
}

TEST(HostModel, SeedDeterminismAndFingerprint) {
    const HostModel a(small_config(), 1);
    const HostModel b(small_config(), 1);
    const HostModel c(small_config(), 2);
    EXPECT_EQ(fingerprint(a), fingerprint(b));
    EXPECT_NE(fingerprint(a), fingerprint(c));
    EXPECT_EQ(fingerprint(a).hex().size(), 64u);
    const HostModel d = a.clone();
    EXPECT_EQ(fingerprint(a), fingerprint(d));
}

TEST(HostModel, FingerprintSeesOneUlpChange) {
    HostModel a(small_config(), 1);
    const auto before = fingerprint(a);
    const Tensor& w = a.parameter("lm_head");
    std::vector<Scalar> values(w.data().begin(), w.data().end());
    values[5] = std::nextafter(static_cast<float>(values[5]), 1e9f);
    a.set_parameter("lm_head", values);
    EXPECT_NE(before, fingerprint(a));
}

TEST(HostModel, RebuildFromParameters) {
    const HostModel a(small_config(), 4);
    const HostModel b(small_config(), a.parameters());
    EXPECT_EQ(fingerprint(a), fingerprint(b));
    auto params = a.parameters();
    params.erase("lm_head");
    EXPECT_EQ(kind_of([&] { HostModel(small_config(), params); }), ErrorKind::CorruptFile);
}

TEST(HostModel, HookKeysCoverEverySublayer) {
    const HostModel m(small_config(), 1);
    const auto keys = m.hook_keys();
    // Encoder self-attention: 4 points; decoder self + cross: 4 each; 2 FFN points.
    EXPECT_EQ(keys.size(), 4u + 4u + 4u + 1u + 1u);
    EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));
}

struct CountingHook : PeftHook {
    int passes = 0;
    int blocks = 0;
    void begin_pass() override { ++passes; }
    Tensor on_block_output(const HookKey&, const Tensor& h) override {
        ++blocks;
        return h;
    }
};

TEST(HostModel, HookRegistrationAndDispatch) {
    HostModel m(small_config(), 1);
    auto hook = std::make_shared<CountingHook>();
    const HookKey enc_ffn{Stack::Encoder, 0, Sublayer::Ffn, HookPoint::AfterFfnBlock};
    const HookKey dec_cross{Stack::Decoder, 0, Sublayer::CrossAttn, HookPoint::AfterAttnBlock};
    m.register_hook(enc_ffn, hook);
    m.register_hook(dec_cross, hook);
    EXPECT_EQ(kind_of([&] { m.register_hook(enc_ffn, hook); }), ErrorKind::HookOccupied);
    const HookKey invalid{Stack::Encoder, 0, Sublayer::CrossAttn, HookPoint::AfterAttnBlock};
    EXPECT_EQ(kind_of([&] { m.register_hook(invalid, hook); }), ErrorKind::InvalidArgument);
    const TokenSeq enc{3, 4};
    const TokenSeq dec{0, 5};
    const HostModel plain(small_config(), 1);
    const Tensor a = m.forward(enc, dec);
    const Tensor b = plain.forward(enc, dec);
    EXPECT_EQ(std::vector<double>(a.data().begin(), a.data().end()),
              std::vector<double>(b.data().begin(), b.data().end()));
    EXPECT_EQ(hook->passes, 1);
    EXPECT_EQ(hook->blocks, 2);
    m.clear_hooks();
    EXPECT_FALSE(m.has_hooks());
}

struct PrefixRowsHook : PeftHook {
    std::pair<Tensor, Tensor> on_keys_values(const HookKey&, const Tensor& k, const Tensor& v) override {
        const Tensor extra = Tensor::filled({2, k.cols()}, 0.0);
        const std::vector<Tensor> ks{extra, k};
        const std::vector<Tensor> vs{extra, v};
        return {concat_rows(ks), concat_rows(vs)};
    }
};

TEST(HostModel, KeysValuesHookExtendsAttention) {
    HostModel m(small_config(), 1);
    const HookKey key{Stack::Decoder, 0, Sublayer::SelfAttn, HookPoint::AttnKeysValues};
    m.register_hook(key, std::make_shared<PrefixRowsHook>());
    std::vector<std::pair<std::size_t, std::size_t>> seen;
    m.set_attention_observer([&](const HookKey& site, std::size_t q, std::size_t k) {
        if (site.stack == Stack::Decoder && site.sublayer == Sublayer::SelfAttn) {
            seen.emplace_back(q, k);
        }
    });
    const TokenSeq enc{3, 4, 5};
    const TokenSeq dec{0, 6, 7};
    m.forward(enc, dec);
    // One observation per head.
    ASSERT_EQ(seen.size(), 2u);
    for (const auto& s : seen) {
        EXPECT_EQ(s, (std::pair<std::size_t, std::size_t>{3, 5}));
    }
}

TEST(HostModel, CausalDecoder) {
    const HostModel m(small_config(), 3);
    const TokenSeq enc{3, 4, 5};
    const Tensor full = m.forward(enc, TokenSeq{0, 6, 7});
    const Tensor prefix = m.forward(enc, TokenSeq{0, 6});
    for (std::size_t j = 0; j < 20; ++j) {
        EXPECT_NEAR(full.at(0, j), prefix.at(0, j), 1e-12);
        EXPECT_NEAR(full.at(1, j), prefix.at(1, j), 1e-12);
    }
}

TEST(GreedyDecode, DeterministicAndBounded) {
    const HostModel m(small_config(), 5);
    const TokenSeq prompt{3, 4, 5};
    const auto a = greedy_decode(m, prompt, 4);
    const auto b = greedy_decode(m, prompt, 4);
    EXPECT_EQ(a, b);
    EXPECT_LE(a.size(), 4u);
    for (auto t : a) {
        EXPECT_NE(t, kEosId);
    }
    EXPECT_EQ(kind_of([&] { greedy_decode(m, prompt, 0); }), ErrorKind::InvalidArgument);
    EXPECT_EQ(kind_of([&] { greedy_decode(m, prompt, 13); }), ErrorKind::SequenceTooLong);
}

TEST(HostModel, ParameterGradientsMatchFiniteDifferences) {
    HostModel m(small_config(), 7);
    m.set_trainable(true);
    const TokenSeq enc{3, 4, 5, 9};
    const TokenSeq dec{0, 6, 7};
    const std::vector<std::int32_t> targets{6, 7, 1};
    auto loss = [&] { return softmax_ce_loss(m.forward(enc, dec), targets); };
    std::mt19937_64 rng(1);
    for (const char* name : {"embed.tok", "enc.0.self.wq", "dec.0.cross.wv", "dec.0.ffn.w1", "lm_head",
                             "dec.final_ln.g"}) {
        Tensor p = m.parameter(name);
        const auto r = oracle::check_gradient(loss, p, oracle::sample_indices(p, 24, rng), m.parameter_list());
        EXPECT_LT(r.rel_error, 1e-3) << name;
    }
}

}  // namespace
}  // namespace peftport
