// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//
// Portable artifacts and the three importing scenarios.
//
// `.peftmod` container layout:
//
//   "PEFTMOD\n"
//   <decimal byte length N of the header>"\n"
//   <N bytes of JSON header>
//   <payload: concatenated little-endian float32 tensor data>
//
// The header carries format_version, artifact_kind ("peft-module" or
// "host-model"), the artifact's metadata, a tensor directory of
// {name, shape, offset, length} entries (offsets relative to the payload
// start, contiguous, covering the payload exactly) and a provenance block.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "peftport/host_model.h"
#include "peftport/peft.h"
#include "peftport/vocab.h"

namespace peftport {

inline constexpr int kFormatVersion = 1;

enum class PortScenario { Ported, Sampled, FromScratch };

std::string to_string(PortScenario scenario);
PortScenario scenario_from_string(const std::string& name);

struct Provenance {
    int pre_steps = 0;
    std::string dataset_id;
    std::uint64_t seed = 0;
    // Set on modules written by import: the scenario applied and the receiving host.
    std::string scenario;
    std::string host_fingerprint;

    bool operator==(const Provenance&) const = default;
};

struct ModuleFile {
    PeftModuleState state;
    Provenance provenance;
};

struct TensorEntry {
    std::string name;
    Shape shape;
    std::uint64_t offset = 0;
    std::uint64_t length = 0;
};

// Throws NonFiniteParameter when any tensor holds NaN or Inf.
std::string export_module(const PeftModuleState& state, const Provenance& provenance);
// Throws CorruptFile.
ModuleFile read_module(std::string_view bytes);
// Directory of any container (module or host checkpoint).
std::vector<TensorEntry> read_directory(std::string_view bytes);
std::string artifact_kind(std::string_view bytes);

struct HostProvenance {
    std::string kind;  // "raw" or "instruct"
    int lm_steps = 0;
    int instruct_steps = 0;
    std::uint64_t seed = 0;

    bool operator==(const HostProvenance&) const = default;
};

struct HostCheckpoint {
    HostModel model;
    Vocabulary vocab;
    HostProvenance provenance;
};

std::string export_host(const HostModel& model, const Vocabulary& vocab, const HostProvenance& provenance);
HostCheckpoint read_host(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
// Writes atomically through a temporary sibling file.
void write_file(const std::filesystem::path& path, std::string_view bytes);

void save_module(const std::filesystem::path& path, const PeftModuleState& state, const Provenance& provenance);
ModuleFile load_module(const std::filesystem::path& path);
void save_host(const std::filesystem::path& path, const HostModel& model, const Vocabulary& vocab,
               const HostProvenance& provenance);
HostCheckpoint load_host(const std::filesystem::path& path);

struct CompatViolation {
    std::string field;
    int module_value = 0;
    int receiving_value = 0;
};

// Empty when compatible. Equal num_heads is required as well as equal
// hidden size and layer counts, since prefix tensors are head-shaped.
std::vector<CompatViolation> check_compat(const HostMeta& module_host, const ModelConfig& receiving);

enum class MomentScope { PerTensor, PerModule };

// Independent normal draws matching the population mean and variance of each
// tensor (or of the pooled module parameters with MomentScope::PerModule).
PeftModuleState sample_like(const PeftModuleState& state, std::uint64_t seed,
                            MomentScope scope = MomentScope::PerTensor);

// Builds the receiving-side module under `scenario` and attaches it.
// Throws IncompatibleHost when check_compat reports violations.
PeftModuleState import_module(const ModuleFile& file, HostModel& receiving, PortScenario scenario,
                              std::uint64_t seed, MomentScope scope = MomentScope::PerTensor);

}  // namespace peftport
