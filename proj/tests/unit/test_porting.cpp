// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "peftport/errors.h"
#include "peftport/porting.h"
#include "peftport/tasks.h"

namespace peftport {
namespace {

ModelConfig desk_config() {
    ModelConfig c;
    c.vocab_size = 40;
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

// A module with non-trivial (non-default) values in every tensor.
PeftModuleState trained_like(PeftTechnique tech, std::uint64_t seed) {
    auto state = default_init(default_config(tech, 32), HostMeta::of(desk_config()), seed);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.05);
    for (auto& [name, t] : state.tensors) {
        for (auto& v : t.mutable_data()) {
            v += noise(rng);
        }
        snap_to_float32(t);
    }
    return state;
}

const Provenance kProvenance{2000, "sentiment-a@1", 7, "", "abc"};

TEST(ModuleFile, RoundTripIsByteExact) {
    for (auto tech : all_techniques()) {
        const auto state = trained_like(tech, 1);
        const auto bytes = export_module(state, kProvenance);
        const auto file = read_module(bytes);
        EXPECT_EQ(file.provenance, kProvenance);
        EXPECT_EQ(file.state.technique, tech);
        EXPECT_TRUE(file.state.config == state.config);
        ASSERT_EQ(file.state.tensors.size(), state.tensors.size());
        for (const auto& [name, t] : state.tensors) {
            EXPECT_EQ(values(t), values(file.state.tensors.at(name))) << name;
        }
        EXPECT_EQ(export_module(file.state, file.provenance), bytes);
    }
}

TEST(ModuleFile, DirectoryCoversPayload) {
    const auto state = trained_like(PeftTechnique::Compacter, 2);
    const auto bytes = export_module(state, kProvenance);
    const auto dir = read_directory(bytes);
    EXPECT_EQ(dir.size(), state.tensors.size());
    std::uint64_t expected = 0;
    for (const auto& e : dir) {
        EXPECT_EQ(e.offset, expected);
        EXPECT_EQ(e.length, 4 * shape_numel(e.shape));
        expected += e.length;
    }
    EXPECT_EQ(expected, 4 * state.parameter_count());
    EXPECT_EQ(artifact_kind(bytes), "peft-module");
}

TEST(ModuleFile, NonFiniteRejected) {
    auto state = trained_like(PeftTechnique::LoRA, 3);
    state.tensors.begin()->second.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_EQ(kind_of([&] { export_module(state, kProvenance); }), ErrorKind::NonFiniteParameter);
    state.tensors.begin()->second.mutable_data()[0] = std::numeric_limits<double>::infinity();
    EXPECT_EQ(kind_of([&] { export_module(state, kProvenance); }), ErrorKind::NonFiniteParameter);
}

TEST(ModuleFile, CorruptionDetected) {
    const auto bytes = export_module(trained_like(PeftTechnique::Adapter, 4), kProvenance);
    EXPECT_EQ(kind_of([&] { read_module("NOTAPEFT\n1\n{}"); }), ErrorKind::CorruptFile);
    EXPECT_EQ(kind_of([&] { read_module(bytes.substr(0, bytes.size() - 1)); }), ErrorKind::CorruptFile);
    EXPECT_EQ(kind_of([&] { read_module(bytes + "x"); }), ErrorKind::CorruptFile);
    EXPECT_EQ(kind_of([&] { read_module(bytes.substr(0, 40)); }), ErrorKind::CorruptFile);
    std::string overlapping = bytes;
    const auto first = overlapping.find("\"offset\": ");
    const auto pos = overlapping.find("\"offset\": ", first + 1) + 10;
    ASSERT_NE(first, std::string::npos);
    const auto end = overlapping.find_first_not_of("0123456789", pos);
    overlapping.replace(pos, end - pos, std::string(end - pos - 1, ' ') + "4");
    EXPECT_EQ(kind_of([&] { read_module(overlapping); }), ErrorKind::CorruptFile);
    const auto host_bytes = export_host(HostModel(desk_config(), 1), [] {
        Vocabulary v;
        for (int i = 3; i < 40; ++i) {
            v.add("t" + std::to_string(i));
        }
        return v;
    }(), {"raw", 1, 0, 1});
    EXPECT_EQ(kind_of([&] { read_module(host_bytes); }), ErrorKind::CorruptFile);
}

TEST(HostCheckpoint, RoundTrip) {
    const auto vocab = standard_vocabulary();
    ModelConfig c = desk_config();
    c.vocab_size = static_cast<int>(vocab.size());
    const HostModel m(c, 9);
    const HostProvenance prov{"instruct", 100, 50, 9};
    const auto bytes = export_host(m, vocab, prov);
    const auto ckpt = read_host(bytes);
    EXPECT_EQ(fingerprint(ckpt.model), fingerprint(m));
    EXPECT_EQ(ckpt.vocab, vocab);
    EXPECT_EQ(ckpt.provenance, prov);
    EXPECT_EQ(ckpt.model.config(), c);
    EXPECT_EQ(export_host(ckpt.model, ckpt.vocab, ckpt.provenance), bytes);
    EXPECT_EQ(artifact_kind(bytes), "host-model");
}

TEST(Files, SaveAndLoad) {
    const auto dir = std::filesystem::path(PEFTPORT_TEST_TMP) / "porting";
    std::filesystem::remove_all(dir);
    const auto state = trained_like(PeftTechnique::PrefixTuning, 5);
    save_module(dir / "m.peftmod", state, kProvenance);
    const auto file = load_module(dir / "m.peftmod");
    EXPECT_EQ(export_module(file.state, file.provenance), read_file(dir / "m.peftmod"));
    EXPECT_EQ(kind_of([&] { load_module(dir / "missing.peftmod"); }), ErrorKind::MissingArtifact);
}

TEST(CheckCompat, Violations) {
    const auto meta = HostMeta::of(desk_config());
    EXPECT_TRUE(check_compat(meta, desk_config()).empty());
    auto v = check_compat(HostMeta{512, 2, 2, 8}, desk_config());
    ASSERT_EQ(v.size(), 2u);
    EXPECT_EQ(v[0].field, "hidden_dim");
    EXPECT_EQ(v[0].module_value, 512);
    EXPECT_EQ(v[0].receiving_value, 32);
    ModelConfig deep = desk_config();
    deep.num_enc_layers = 4;
    v = check_compat(meta, deep);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_EQ(v[0].field, "num_enc_layers");
    ModelConfig heads = desk_config();
    heads.num_heads = 8;
    v = check_compat(meta, heads);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_EQ(v[0].field, "num_heads");
}

TEST(Import, PortedForwardMatchesOrigin) {
    const HostModel host(desk_config(), 1);
    const TokenSeq enc{3, 4, 5, 6, 7};
    const TokenSeq dec{0, 8};
    for (auto tech : all_techniques()) {
        HostModel origin = host.clone();
        const auto state = trained_like(tech, 6);
        attach_state(origin, state);
        const auto file = read_module(export_module(state, kProvenance));
        HostModel receiving = host.clone();
        const auto imported = import_module(file, receiving, PortScenario::Ported, 99);
        const Tensor a = origin.forward(enc, dec);
        const Tensor b = receiving.forward(enc, dec);
        for (std::size_t i = 0; i < a.numel(); ++i) {
            EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12) << to_string(tech);
        }
        for (const auto& [name, t] : imported.tensors) {
            EXPECT_EQ(values(t), values(state.tensors.at(name)));
            EXPECT_TRUE(t.requires_grad());
        }
    }
}

TEST(Import, ScenariosShareTopology) {
    const HostModel host(desk_config(), 1);
    for (auto tech : all_techniques()) {
        const ModuleFile file{trained_like(tech, 7), kProvenance};
        std::vector<std::size_t> hook_counts;
        for (auto scen : {PortScenario::Ported, PortScenario::Sampled, PortScenario::FromScratch}) {
            HostModel m = host.clone();
            const auto state = import_module(file, m, scen, 5);
            ASSERT_EQ(state.tensors.size(), file.state.tensors.size());
            for (const auto& [name, t] : state.tensors) {
                EXPECT_EQ(t.shape(), file.state.tensors.at(name).shape());
            }
            hook_counts.push_back(m.hook_count());
        }
        EXPECT_EQ(hook_counts[0], hook_counts[1]);
        EXPECT_EQ(hook_counts[0], hook_counts[2]);
    }
}

TEST(Import, SeedDeterministic) {
    const HostModel host(desk_config(), 1);
    const ModuleFile file{trained_like(PeftTechnique::Adapter, 8), kProvenance};
    for (auto scen : {PortScenario::Sampled, PortScenario::FromScratch}) {
        HostModel a = host.clone(), b = host.clone(), c = host.clone();
        const auto sa = import_module(file, a, scen, 11);
        const auto sb = import_module(file, b, scen, 11);
        const auto sc = import_module(file, c, scen, 12);
        EXPECT_EQ(export_module(sa, kProvenance), export_module(sb, kProvenance));
        EXPECT_NE(export_module(sa, kProvenance), export_module(sc, kProvenance));
    }
}

TEST(Import, FromScratchLoraHasZeroDelta) {
    const HostModel host(desk_config(), 1);
    HostModel m = host.clone();
    import_module({trained_like(PeftTechnique::LoRA, 9), kProvenance}, m, PortScenario::FromScratch, 3);
    const TokenSeq enc{3, 4, 5};
    const TokenSeq dec{0, 6};
    EXPECT_EQ(values(m.forward(enc, dec)), values(host.forward(enc, dec)));
}

TEST(Import, IncompatibleHost) {
    ModelConfig other = desk_config();
    other.num_dec_layers = 3;
    HostModel m(other, 1);
    EXPECT_EQ(kind_of([&] {
                  import_module({trained_like(PeftTechnique::Adapter, 1), kProvenance}, m, PortScenario::Ported, 1);
              }),
              ErrorKind::IncompatibleHost);
    EXPECT_FALSE(m.has_hooks());
}

TEST(SampleLike, ZeroVarianceGivesConstantMean) {
    auto state = trained_like(PeftTechnique::Adapter, 1);
    auto& t = state.tensors.at("enc.0.ffn.adapter.up_bias");
    for (auto& v : t.mutable_data()) {
        v = 0.125;
    }
    const auto s = sample_like(state, 3);
    for (double v : s.tensors.at("enc.0.ffn.adapter.up_bias").data()) {
        EXPECT_EQ(v, 0.125);
    }
}

TEST(SampleLike, MomentsAndIndependence) {
    const auto state = trained_like(PeftTechnique::Adapter, 2);
    const auto a = sample_like(state, 1);
    const auto b = sample_like(state, 2);
    for (const auto& [name, src] : state.tensors) {
        if (src.numel() < 1024) {
            continue;
        }
        const auto ms = moments(src);
        const double n = static_cast<double>(src.numel());
        for (const auto* s : {&a, &b}) {
            const auto& t = s->tensors.at(name);
            const auto mt = moments(t);
            EXPECT_LT(std::abs(mt.mean - ms.mean), 4.0 * std::sqrt(ms.variance / n)) << name;
            EXPECT_LT(std::abs(mt.variance - ms.variance), 0.15 * ms.variance) << name;
            double dot = 0, na = 0, nb = 0;
            for (std::size_t i = 0; i < src.numel(); ++i) {
                dot += src.data()[i] * t.data()[i];
                na += src.data()[i] * src.data()[i];
                nb += t.data()[i] * t.data()[i];
            }
            EXPECT_LT(std::abs(dot / std::sqrt(na * nb)), 0.1) << name;
        }
        EXPECT_NE(values(a.tensors.at(name)), values(b.tensors.at(name)));
    }
}

TEST(SampleLike, PerModuleScopePoolsMoments) {
    const auto state = trained_like(PeftTechnique::LoRA, 41);
    const auto s = sample_like(state, 1, MomentScope::PerModule);
    std::vector<Scalar> src_all, out_all;
    for (const auto& [name, t] : state.tensors) {
        src_all.insert(src_all.end(), t.data().begin(), t.data().end());
        const auto& o = s.tensors.at(name);
        out_all.insert(out_all.end(), o.data().begin(), o.data().end());
    }
    const auto ms = moments(Tensor({src_all.size()}, src_all));
    const auto mo = moments(Tensor({out_all.size()}, out_all));
    EXPECT_NEAR(mo.variance, ms.variance, 0.1 * ms.variance);
}

TEST(Scenario, Names) {
    for (auto s : {PortScenario::Ported, PortScenario::Sampled, PortScenario::FromScratch}) {
        EXPECT_EQ(scenario_from_string(to_string(s)), s);
    }
    EXPECT_EQ(kind_of([] { scenario_from_string("copied"); }), ErrorKind::InvalidArgument);
}

}  // namespace
}  // namespace peftport
