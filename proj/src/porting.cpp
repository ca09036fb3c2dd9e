// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//

#include "peftport/porting.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "peftport/errors.h"
#include "peftport/rng.h"

namespace peftport {

using nlohmann::json;

namespace {

constexpr std::string_view kMagic = "PEFTMOD\n";

json config_to_json(const PeftConfig& config) {
    return std::visit(
        [](const auto& c) -> json {
            using C = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<C, AdapterConfig>) {
                return {{"bottleneck", c.bottleneck}, {"activation", to_string(c.activation)}};
            } else if constexpr (std::is_same_v<C, CompacterConfig>) {
                return {{"bottleneck", c.bottleneck},
                        {"hypercomplex_division", c.hypercomplex_division},
                        {"activation", to_string(c.activation)},
                        {"share_kron_factors", c.share_kron_factors}};
            } else if constexpr (std::is_same_v<C, LoraConfig>) {
                return {{"rank", c.rank}, {"alpha", c.alpha}, {"dropout", c.dropout}};
            } else {
                return {{"num_tokens", c.num_tokens},
                        {"token_embed_dim", c.token_embed_dim},
                        {"mid_dim", c.mid_dim},
                        {"activation", to_string(c.activation)}};
            }
        },
        config);
}

PeftConfig config_from_json(PeftTechnique technique, const json& j) {
    switch (technique) {
    case PeftTechnique::Adapter:
        return AdapterConfig{j.at("bottleneck").get<int>(), activation_from_string(j.at("activation"))};
    case PeftTechnique::Compacter:
        return CompacterConfig{j.at("bottleneck").get<int>(), j.at("hypercomplex_division").get<int>(),
                               activation_from_string(j.at("activation")), j.at("share_kron_factors").get<bool>()};
    case PeftTechnique::LoRA:
        return LoraConfig{j.at("rank").get<int>(), j.at("alpha").get<double>(), j.at("dropout").get<double>()};
    case PeftTechnique::PrefixTuning:
        return PrefixConfig{j.at("num_tokens").get<int>(), j.at("token_embed_dim").get<int>(),
                            j.at("mid_dim").get<int>(), activation_from_string(j.at("activation"))};
    }
    fail(ErrorKind::CorruptFile, "unknown technique");
}

json host_meta_to_json(const HostMeta& m) {
    return {{"hidden_dim", m.hidden_dim},
            {"num_enc_layers", m.num_enc_layers},
            {"num_dec_layers", m.num_dec_layers},
            {"num_heads", m.num_heads}};
}

HostMeta host_meta_from_json(const json& j) {
    return {j.at("hidden_dim").get<int>(), j.at("num_enc_layers").get<int>(), j.at("num_dec_layers").get<int>(),
            j.at("num_heads").get<int>()};
}

json model_config_to_json(const ModelConfig& c) {
    return {{"num_enc_layers", c.num_enc_layers}, {"num_dec_layers", c.num_dec_layers},
            {"hidden_dim", c.hidden_dim},         {"num_heads", c.num_heads},
            {"ffn_dim", c.ffn_dim},               {"vocab_size", c.vocab_size},
            {"max_seq_len", c.max_seq_len}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.num_enc_layers = j.at("num_enc_layers").get<int>();
    c.num_dec_layers = j.at("num_dec_layers").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.ffn_dim = j.at("ffn_dim").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    return c;
}

void append_float32_le(std::string& out, Scalar v) {
    const auto f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int b = 0; b < 4; ++b) {
        out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
}

Scalar read_float32_le(const char* p) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
    }
    float f;
    std::memcpy(&f, &bits, 4);
    return static_cast<Scalar>(f);
}

std::string write_container(json header, const std::map<std::string, Tensor>& tensors) {
    std::string payload;
    json directory = json::array();
    for (const auto& [name, t] : tensors) {
        if (!all_finite(t)) {
            fail(ErrorKind::NonFiniteParameter, "tensor '" + name + "' holds NaN or Inf");
        }
        const auto offset = payload.size();
        for (Scalar v : t.data()) {
            append_float32_le(payload, v);
        }
        directory.push_back({{"name", name},
                             {"shape", t.shape()},
                             {"offset", offset},
                             {"length", payload.size() - offset}});
    }
    header["tensors"] = std::move(directory);
    header["format_version"] = kFormatVersion;
    const std::string text = header.dump(2) + "\n";
    std::string out;
    out.reserve(kMagic.size() + 16 + text.size() + payload.size());
    out += kMagic;
    out += std::to_string(text.size());
    out += '\n';
    out += text;
    out += payload;
    return out;
}

struct Container {
    json header;
    std::vector<TensorEntry> directory;
    std::string_view payload;
};

Container parse_container(std::string_view bytes) {
    auto corrupt = [](const std::string& why) { fail(ErrorKind::CorruptFile, why); };
    if (bytes.substr(0, kMagic.size()) != kMagic) {
        corrupt("missing PEFTMOD magic");
    }
    bytes.remove_prefix(kMagic.size());
    const auto nl = bytes.find('\n');
    if (nl == std::string_view::npos || nl == 0 || nl > 20) {
        corrupt("missing header length");
    }
    std::uint64_t header_len = 0;
    for (char c : bytes.substr(0, nl)) {
        if (c < '0' || c > '9') {
            corrupt("header length is not a decimal number");
        }
        header_len = header_len * 10 + static_cast<std::uint64_t>(c - '0');
    }
    bytes.remove_prefix(nl + 1);
    if (header_len > bytes.size()) {
        corrupt("header extends past end of file");
    }
    Container c;
    try {
        c.header = json::parse(bytes.substr(0, header_len));
        if (c.header.at("format_version").get<int>() != kFormatVersion) {
            corrupt("unsupported format_version");
        }
        std::uint64_t expected = 0;
        for (const auto& e : c.header.at("tensors")) {
            TensorEntry entry{e.at("name").get<std::string>(), e.at("shape").get<Shape>(),
                              e.at("offset").get<std::uint64_t>(), e.at("length").get<std::uint64_t>()};
            if (entry.offset != expected) {
                corrupt("tensor directory offsets overlap or leave gaps at '" + entry.name + "'");
            }
            if (entry.length != shape_numel(entry.shape) * 4) {
                corrupt("tensor '" + entry.name + "' length does not match its shape");
            }
            expected += entry.length;
            c.directory.push_back(std::move(entry));
        }
        c.payload = bytes.substr(header_len);
        if (c.payload.size() != expected) {
            corrupt("payload size " + std::to_string(c.payload.size()) + " does not match directory total " +
                    std::to_string(expected));
        }
    } catch (const json::exception& e) {
        corrupt(std::string("malformed header: ") + e.what());
    }
    return c;
}

std::map<std::string, Tensor> container_tensors(const Container& c) {
    std::map<std::string, Tensor> out;
    for (const auto& e : c.directory) {
        std::vector<Scalar> values(shape_numel(e.shape));
        const char* base = c.payload.data() + e.offset;
        for (std::size_t i = 0; i < values.size(); ++i) {
            values[i] = read_float32_le(base + 4 * i);
        }
        if (!out.emplace(e.name, Tensor(e.shape, std::move(values))).second) {
            fail(ErrorKind::CorruptFile, "duplicate tensor '" + e.name + "'");
        }
    }
    return out;
}

}  // namespace

std::string to_string(PortScenario scenario) {
    switch (scenario) {
    case PortScenario::Ported: return "ported";
    case PortScenario::Sampled: return "sampled";
    case PortScenario::FromScratch: return "from_scratch";
    }
    return "?";
}

PortScenario scenario_from_string(const std::string& name) {
    for (auto s : {PortScenario::Ported, PortScenario::Sampled, PortScenario::FromScratch}) {
        if (to_string(s) == name) {
            return s;
        }
    }
    if (name == "from-scratch" || name == "scratch") {
        return PortScenario::FromScratch;
    }
    fail(ErrorKind::InvalidArgument, "unknown scenario '" + name + "'");
}

std::string export_module(const PeftModuleState& state, const Provenance& provenance) {
    json header;
    header["artifact_kind"] = "peft-module";
    header["technique"] = to_string(state.technique);
    header["config"] = config_to_json(state.config);
    header["host_meta"] = host_meta_to_json(state.host);
    header["provenance"] = {{"pre_steps", provenance.pre_steps},
                            {"dataset_id", provenance.dataset_id},
                            {"seed", provenance.seed},
                            {"scenario", provenance.scenario},
                            {"host_fingerprint", provenance.host_fingerprint}};
    return write_container(std::move(header), state.tensors);
}

ModuleFile read_module(std::string_view bytes) {
    const Container c = parse_container(bytes);
    ModuleFile file;
    try {
        if (c.header.at("artifact_kind") != "peft-module") {
            fail(ErrorKind::CorruptFile, "artifact is not a peft-module");
        }
        file.state.technique = technique_from_string(c.header.at("technique"));
        file.state.config = config_from_json(file.state.technique, c.header.at("config"));
        file.state.host = host_meta_from_json(c.header.at("host_meta"));
        const auto& p = c.header.at("provenance");
        file.provenance = {p.at("pre_steps").get<int>(), p.at("dataset_id").get<std::string>(),
                           p.at("seed").get<std::uint64_t>(), p.at("scenario").get<std::string>(),
                           p.at("host_fingerprint").get<std::string>()};
    } catch (const json::exception& e) {
        fail(ErrorKind::CorruptFile, std::string("malformed module header: ") + e.what());
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::CorruptFile) {
            throw;
        }
        fail(ErrorKind::CorruptFile, e.what());
    }
    file.state.tensors = container_tensors(c);
    std::map<std::string, Shape> expected;
    try {
        expected = module_shapes(file.state.config, file.state.host);
    } catch (const Error& e) {
        fail(ErrorKind::CorruptFile, e.what());
    }
    if (expected.size() != file.state.tensors.size()) {
        fail(ErrorKind::CorruptFile, "tensor set does not match the module config");
    }
    for (const auto& [name, shape] : expected) {
        auto it = file.state.tensors.find(name);
        if (it == file.state.tensors.end() || it->second.shape() != shape) {
            fail(ErrorKind::CorruptFile, "tensor '" + name + "' missing or misshapen");
        }
    }
    return file;
}

std::vector<TensorEntry> read_directory(std::string_view bytes) {
    return parse_container(bytes).directory;
}

std::string artifact_kind(std::string_view bytes) {
    const Container c = parse_container(bytes);
    try {
        return c.header.at("artifact_kind").get<std::string>();
    } catch (const json::exception& e) {
        fail(ErrorKind::CorruptFile, e.what());
    }
}

std::string export_host(const HostModel& model, const Vocabulary& vocab, const HostProvenance& provenance) {
    json header;
    header["artifact_kind"] = "host-model";
    header["model_config"] = model_config_to_json(model.config());
    header["vocab"] = vocab.words();
    header["provenance"] = {{"kind", provenance.kind},
                            {"lm_steps", provenance.lm_steps},
                            {"instruct_steps", provenance.instruct_steps},
                            {"seed", provenance.seed}};
    return write_container(std::move(header), model.parameters());
}

HostCheckpoint read_host(std::string_view bytes) {
    const Container c = parse_container(bytes);
    try {
        if (c.header.at("artifact_kind") != "host-model") {
            fail(ErrorKind::CorruptFile, "artifact is not a host-model");
        }
        const ModelConfig config = model_config_from_json(c.header.at("model_config"));
        Vocabulary vocab(c.header.at("vocab").get<std::vector<std::string>>());
        const auto& p = c.header.at("provenance");
        HostProvenance prov{p.at("kind").get<std::string>(), p.at("lm_steps").get<int>(),
                            p.at("instruct_steps").get<int>(), p.at("seed").get<std::uint64_t>()};
        if (vocab.size() != static_cast<std::size_t>(config.vocab_size)) {
            fail(ErrorKind::CorruptFile, "vocabulary size does not match model_config");
        }
        return {HostModel(config, container_tensors(c)), std::move(vocab), std::move(prov)};
    } catch (const json::exception& e) {
        fail(ErrorKind::CorruptFile, std::string("malformed host header: ") + e.what());
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::MissingArtifact, "cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            fail(ErrorKind::IoError, "cannot write " + tmp.string());
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            fail(ErrorKind::IoError, "short write to " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

void save_module(const std::filesystem::path& path, const PeftModuleState& state, const Provenance& provenance) {
    write_file(path, export_module(state, provenance));
}

ModuleFile load_module(const std::filesystem::path& path) {
    return read_module(read_file(path));
}

void save_host(const std::filesystem::path& path, const HostModel& model, const Vocabulary& vocab,
               const HostProvenance& provenance) {
    write_file(path, export_host(model, vocab, provenance));
}

HostCheckpoint load_host(const std::filesystem::path& path) {
    return read_host(read_file(path));
}

std::vector<CompatViolation> check_compat(const HostMeta& module_host, const ModelConfig& receiving) {
    std::vector<CompatViolation> out;
    auto check = [&](const char* field, int module_value, int receiving_value) {
        if (module_value != receiving_value) {
            out.push_back({field, module_value, receiving_value});
        }
    };
    check("hidden_dim", module_host.hidden_dim, receiving.hidden_dim);
    check("num_enc_layers", module_host.num_enc_layers, receiving.num_enc_layers);
    check("num_dec_layers", module_host.num_dec_layers, receiving.num_dec_layers);
    check("num_heads", module_host.num_heads, receiving.num_heads);
    return out;
}

PeftModuleState sample_like(const PeftModuleState& state, std::uint64_t seed, MomentScope scope) {
    Moments pooled;
    if (scope == MomentScope::PerModule) {
        std::vector<Scalar> all;
        for (const auto& [name, t] : state.tensors) {
            all.insert(all.end(), t.data().begin(), t.data().end());
        }
        const std::size_t n = all.size();
        pooled = moments(Tensor({n}, std::move(all)));
    }
    PeftModuleState out{state.technique, state.config, state.host, {}};
    for (const auto& [name, t] : state.tensors) {
        const Moments m = scope == MomentScope::PerTensor ? moments(t) : pooled;
        std::vector<Scalar> values(t.numel());
        if (m.variance <= 0.0) {
            std::fill(values.begin(), values.end(), static_cast<float>(m.mean));
        } else {
            Rng rng = make_rng(seed, "sample:" + name);
            std::normal_distribution<double> dist(m.mean, std::sqrt(m.variance));
            for (auto& v : values) {
                v = static_cast<float>(dist(rng));
            }
        }
        out.tensors.emplace(name, Tensor(t.shape(), std::move(values), true));
    }
    return out;
}

PeftModuleState import_module(const ModuleFile& file, HostModel& receiving, PortScenario scenario, std::uint64_t seed,
                              MomentScope scope) {
    const auto violations = check_compat(file.state.host, receiving.config());
    if (!violations.empty()) {
        std::string msg = "receiving model is incompatible:";
        for (const auto& v : violations) {
            msg += " " + v.field + " (module " + std::to_string(v.module_value) + ", receiving " +
                   std::to_string(v.receiving_value) + ")";
        }
        fail(ErrorKind::IncompatibleHost, msg);
    }
    PeftModuleState state;
    switch (scenario) {
    case PortScenario::Ported:
        state = file.state.clone();
        break;
    case PortScenario::Sampled:
        state = sample_like(file.state, seed, scope);
        break;
    case PortScenario::FromScratch:
        state = default_init(file.state.config, file.state.host, seed);
        break;
    }
    for (auto& [name, t] : state.tensors) {
        t.set_requires_grad(true);
    }
    attach_state(receiving, state);
    return state;
}

}  // namespace peftport
