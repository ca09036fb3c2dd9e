// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//
// The portability experiment grid: definition, enumeration, execution,
// persistence, aggregation and reporting.
//
// Results directory layout:
//
//   modules/      pre-porting modules, one per (host, technique, pre_steps, seed)
//   traces/       per-run loss traces (step,loss,lr)
//   records.jsonl one RunRecord per line, appended as runs finish
//   reports/      records.csv, aggregate tables and SVG charts

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "peftport/host_model.h"
#include "peftport/peft.h"
#include "peftport/porting.h"
#include "peftport/tasks.h"
#include "peftport/train.h"

namespace peftport {

// Same: pre- and post-porting training on dataset A, tested on A.
// Different: pre-porting on A, post-porting on B, tested on B.
enum class DatasetCondition { Same, Different };

std::string to_string(DatasetCondition condition);
DatasetCondition condition_from_string(const std::string& name);

struct ModelPairRef {
    std::string originating;
    std::string receiving;

    bool operator==(const ModelPairRef&) const = default;
};

struct GridSpec {
    std::vector<ModelPairRef> model_pairs;
    std::vector<DatasetCondition> datasets;
    std::vector<PeftTechnique> techniques;
    std::vector<PortScenario> scenarios;
    std::vector<int> pre_steps;
    std::vector<int> post_steps;
    std::vector<std::uint64_t> seeds;

    double learning_rate = 1e-4;
    double warmup_fraction = 0.10;
    int pre_batch_tokens = 4096;
    int post_batch_tokens = 2048;

    std::uint64_t data_seed = 1;
    int train_examples = 2000;
    int test_examples = 200;

    // Host checkpoint paths by host id (used by the command line).
    std::map<std::string, std::string> hosts;

    // 4 model pairs, 4 techniques, 2 dataset conditions, 3 scenarios,
    // pre_steps {5000, 10000}, post_steps {500, 1000, 3000}, 3 seeds.
    static GridSpec full_scale();
    // One raw→instruct pair, Adapter and LoRA, same-dataset condition,
    // pre_steps {2000}, post_steps {0, 200, 500}, 3 seeds, small batches.
    static GridSpec desk_scale();
};

GridSpec grid_spec_from_json(const std::string& text);
std::string grid_spec_to_json(const GridSpec& spec);
GridSpec load_grid_spec(const std::filesystem::path& path);

struct RunCoord {
    std::size_t index = 0;
    ModelPairRef pair;
    PeftTechnique technique = PeftTechnique::Adapter;
    DatasetCondition dataset = DatasetCondition::Same;
    PortScenario scenario = PortScenario::Ported;
    // Absent for FromScratch runs.
    std::optional<int> pre_steps;
    int post_steps = 0;
    std::uint64_t seed = 0;

    bool operator==(const RunCoord&) const = default;
    std::string to_string() const;
};

// Cartesian product in the order pair, technique, dataset, scenario, then
// (pre_steps,) post_steps, seed. FromScratch contributes no pre_steps
// dimension. Throws EmptyDimension.
std::vector<RunCoord> enumerate_runs(const GridSpec& grid);
std::size_t expected_run_count(const GridSpec& grid);

enum class RunStatus { Ok, Diverged, Failed };

std::string to_string(RunStatus status);
RunStatus status_from_string(const std::string& name);

struct RunRecord {
    RunCoord coord;
    // "raw->instruct" style label from the host kinds.
    std::string direction;
    double accuracy = 0.0;
    int n_correct = 0;
    int n_examples = 0;
    std::string trace_path;
    double wall_time_s = 0.0;
    RunStatus status = RunStatus::Ok;
    std::string message;

    bool operator==(const RunRecord&) const = default;
};

std::string record_to_json(const RunRecord& record);
RunRecord record_from_json(const std::string& line);
// Records sorted by coordinate index. Throws MissingArtifact, CorruptFile.
std::vector<RunRecord> read_records(const std::filesystem::path& path);
void write_records(const std::filesystem::path& path, const std::vector<RunRecord>& records);

struct HostEntry {
    HostModel model;
    // "raw" or "instruct".
    std::string kind;
};

struct GridRegistry {
    Vocabulary vocab;
    std::map<std::string, HostEntry> hosts;
    DatasetSplit dataset_a;
    DatasetSplit dataset_b;
    std::string dataset_a_id;
    std::string dataset_b_id;
};

// Generates the sentiment dataset pair of `grid` for the given hosts.
GridRegistry make_registry(const GridSpec& grid, Vocabulary vocab, std::map<std::string, HostEntry> hosts);

struct GridOptions {
    std::filesystem::path out_dir;
    int workers = 1;
    bool write_traces = true;
};

class ModuleCache;

// Runs one coordinate end to end: locate or train the pre-porting module,
// import it under the scenario, post-porting training, evaluation. Errors of
// the run itself are captured in the record's status.
RunRecord run_one(const RunCoord& coord, const GridSpec& grid, const GridRegistry& registry, ModuleCache& cache,
                  const GridOptions& options);

// Runs every coordinate on a worker pool and appends each record to
// records.jsonl. Returns the records in coordinate order.
std::vector<RunRecord> run_grid(const GridSpec& grid, const GridRegistry& registry, const GridOptions& options);

// Memoizes pre-porting training per (originating host, technique,
// pre_steps, seed). Concurrent requests for one key wait for a single
// training run. Modules are persisted under `dir` and reused when their
// provenance matches.
class ModuleCache {
public:
    explicit ModuleCache(std::filesystem::path dir);
    ~ModuleCache();

    ModuleFile get(const RunCoord& coord, const GridSpec& grid, const GridRegistry& registry);
    std::size_t trained_count() const;

    static std::string file_name(const std::string& host, PeftTechnique technique, int pre_steps,
                                 std::uint64_t seed);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

enum class GroupKey { Direction, Pair, Technique, Dataset, Scenario, PreSteps, PostSteps, Seed };

std::string to_string(GroupKey key);

struct AggregateCell {
    std::vector<std::pair<GroupKey, std::string>> keys;
    double mean = 0.0;
    double variance = 0.0;
    int n_runs = 0;
    // Diverged or failed records of the group, excluded from the statistics.
    int n_excluded = 0;

    std::string key(GroupKey k) const;
};

std::string group_value(const RunRecord& record, GroupKey key);

// Population mean and variance of the ok records of each group, groups in
// sorted key order. Throws EmptyGroup when `records` is empty or a group has
// no ok record; with skip_empty such groups are dropped instead.
std::vector<AggregateCell> aggregate(const std::vector<RunRecord>& records, const std::vector<GroupKey>& group_by,
                                     bool skip_empty = false);

struct ReportSummary {
    std::size_t records = 0;
    std::size_t ok = 0;
    std::size_t diverged = 0;
    std::size_t failed = 0;
    std::size_t charts = 0;
    std::vector<std::filesystem::path> files;
};

// Writes records.csv, scenario_table.csv, scenario_table.txt, aggregate.csv and one chart per
// (technique, direction, pre_steps, dataset) into out_dir. Throws EmptyGroup
// for no records and IoError.
ReportSummary report(const std::vector<RunRecord>& records, const std::filesystem::path& out_dir);

}  // namespace peftport
