// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//

#include "peftport/grid.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "peftport/errors.h"
#include "peftport/rng.h"

namespace peftport {

using nlohmann::json;

std::string to_string(DatasetCondition condition) {
    return condition == DatasetCondition::Same ? "same" : "different";
}

DatasetCondition condition_from_string(const std::string& name) {
    if (name == "same") {
        return DatasetCondition::Same;
    }
    if (name == "different") {
        return DatasetCondition::Different;
    }
    fail(ErrorKind::InvalidArgument, "unknown dataset condition '" + name + "'");
}

std::string to_string(RunStatus status) {
    switch (status) {
    case RunStatus::Ok: return "ok";
    case RunStatus::Diverged: return "diverged";
    case RunStatus::Failed: return "failed";
    }
    return "?";
}

RunStatus status_from_string(const std::string& name) {
    for (auto s : {RunStatus::Ok, RunStatus::Diverged, RunStatus::Failed}) {
        if (to_string(s) == name) {
            return s;
        }
    }
    fail(ErrorKind::InvalidArgument, "unknown run status '" + name + "'");
}

GridSpec GridSpec::full_scale() {
    GridSpec g;
    g.model_pairs = {{"raw-small", "instruct-small"},
                     {"instruct-small", "raw-small"},
                     {"raw-base", "instruct-base"},
                     {"instruct-base", "raw-base"}};
    g.datasets = {DatasetCondition::Same, DatasetCondition::Different};
    g.techniques = all_techniques();
    g.scenarios = {PortScenario::Ported, PortScenario::Sampled, PortScenario::FromScratch};
    g.pre_steps = {5000, 10000};
    g.post_steps = {500, 1000, 3000};
    g.seeds = {1, 2, 3};
    return g;
}

GridSpec GridSpec::desk_scale() {
    GridSpec g;
    g.model_pairs = {{"raw", "instruct"}};
    g.datasets = {DatasetCondition::Same};
    g.techniques = {PeftTechnique::Adapter, PeftTechnique::LoRA};
    g.scenarios = {PortScenario::Ported, PortScenario::Sampled, PortScenario::FromScratch};
    g.pre_steps = {2000};
    g.post_steps = {0, 200, 500};
    g.seeds = {1, 2, 3};
    g.pre_batch_tokens = 256;
    g.post_batch_tokens = 128;
    g.learning_rate = 3e-4;
    return g;
}

GridSpec grid_spec_from_json(const std::string& text) {
    GridSpec g;
    try {
        const json j = json::parse(text);
        for (const auto& p : j.at("model_pairs")) {
            g.model_pairs.push_back({p.at(0).get<std::string>(), p.at(1).get<std::string>()});
        }
        for (const auto& d : j.at("datasets")) {
            g.datasets.push_back(condition_from_string(d.get<std::string>()));
        }
        for (const auto& t : j.at("techniques")) {
            g.techniques.push_back(technique_from_string(t.get<std::string>()));
        }
        for (const auto& s : j.at("scenarios")) {
            g.scenarios.push_back(scenario_from_string(s.get<std::string>()));
        }
        g.pre_steps = j.at("pre_steps").get<std::vector<int>>();
        g.post_steps = j.at("post_steps").get<std::vector<int>>();
        g.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        if (j.contains("training")) {
            const auto& t = j.at("training");
            g.learning_rate = t.value("learning_rate", g.learning_rate);
            g.warmup_fraction = t.value("warmup_fraction", g.warmup_fraction);
            g.pre_batch_tokens = t.value("pre_batch_tokens", g.pre_batch_tokens);
            g.post_batch_tokens = t.value("post_batch_tokens", g.post_batch_tokens);
        }
        if (j.contains("data")) {
            const auto& d = j.at("data");
            g.data_seed = d.value("seed", g.data_seed);
            g.train_examples = d.value("train_examples", g.train_examples);
            g.test_examples = d.value("test_examples", g.test_examples);
        }
        if (j.contains("hosts")) {
            g.hosts = j.at("hosts").get<std::map<std::string, std::string>>();
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::InvalidArgument, std::string("malformed grid spec: ") + e.what());
    }
    return g;
}

std::string grid_spec_to_json(const GridSpec& g) {
    json j;
    j["model_pairs"] = json::array();
    for (const auto& p : g.model_pairs) {
        j["model_pairs"].push_back({p.originating, p.receiving});
    }
    j["datasets"] = json::array();
    for (auto d : g.datasets) {
        j["datasets"].push_back(to_string(d));
    }
    j["techniques"] = json::array();
    for (auto t : g.techniques) {
        j["techniques"].push_back(to_string(t));
    }
    j["scenarios"] = json::array();
    for (auto s : g.scenarios) {
        j["scenarios"].push_back(to_string(s));
    }
    j["pre_steps"] = g.pre_steps;
    j["post_steps"] = g.post_steps;
    j["seeds"] = g.seeds;
    j["training"] = {{"learning_rate", g.learning_rate},
                     {"warmup_fraction", g.warmup_fraction},
                     {"pre_batch_tokens", g.pre_batch_tokens},
                     {"post_batch_tokens", g.post_batch_tokens}};
    j["data"] = {{"seed", g.data_seed}, {"train_examples", g.train_examples}, {"test_examples", g.test_examples}};
    if (!g.hosts.empty()) {
        j["hosts"] = g.hosts;
    }
    return j.dump(2) + "\n";
}

GridSpec load_grid_spec(const std::filesystem::path& path) {
    return grid_spec_from_json(read_file(path));
}

std::string RunCoord::to_string() const {
    std::string s = pair.originating + "__" + pair.receiving + "__" + peftport::to_string(technique) + "__" +
                    peftport::to_string(dataset) + "__" + peftport::to_string(scenario) + "__pre" +
                    (pre_steps ? std::to_string(*pre_steps) : std::string("none")) + "__post" +
                    std::to_string(post_steps) + "__seed" + std::to_string(seed);
    return s;
}

std::vector<RunCoord> enumerate_runs(const GridSpec& g) {
    auto require = [](bool non_empty, const char* name) {
        if (!non_empty) {
            fail(ErrorKind::EmptyDimension, std::string("grid dimension '") + name + "' is empty");
        }
    };
    require(!g.model_pairs.empty(), "model_pairs");
    require(!g.techniques.empty(), "techniques");
    require(!g.datasets.empty(), "datasets");
    require(!g.scenarios.empty(), "scenarios");
    const bool pretrained = std::any_of(g.scenarios.begin(), g.scenarios.end(),
                                        [](PortScenario s) { return s != PortScenario::FromScratch; });
    require(!pretrained || !g.pre_steps.empty(), "pre_steps");
    require(!g.post_steps.empty(), "post_steps");
    require(!g.seeds.empty(), "seeds");

    std::vector<RunCoord> out;
    auto push = [&](RunCoord c) {
        c.index = out.size();
        out.push_back(std::move(c));
    };
    for (const auto& pair : g.model_pairs) {
        for (auto tech : g.techniques) {
            for (auto ds : g.datasets) {
                for (auto scen : g.scenarios) {
                    if (scen == PortScenario::FromScratch) {
                        for (int post : g.post_steps) {
                            for (auto seed : g.seeds) {
                                push({0, pair, tech, ds, scen, std::nullopt, post, seed});
                            }
                        }
                        continue;
                    }
                    for (int pre : g.pre_steps) {
                        for (int post : g.post_steps) {
                            for (auto seed : g.seeds) {
                                push({0, pair, tech, ds, scen, pre, post, seed});
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

std::size_t expected_run_count(const GridSpec& g) {
    const std::size_t base = g.model_pairs.size() * g.techniques.size() * g.datasets.size();
    const auto scratch = static_cast<std::size_t>(
        std::count(g.scenarios.begin(), g.scenarios.end(), PortScenario::FromScratch));
    const std::size_t ported = g.scenarios.size() - scratch;
    return base * ported * g.pre_steps.size() * g.post_steps.size() * g.seeds.size() +
           base * scratch * g.post_steps.size() * g.seeds.size();
}

// ---------------------------------------------------------------------------
// Records

namespace {

json record_json(const RunRecord& r) {
    const auto& c = r.coord;
    return {{"index", c.index},
            {"originating", c.pair.originating},
            {"receiving", c.pair.receiving},
            {"direction", r.direction},
            {"technique", to_string(c.technique)},
            {"dataset", to_string(c.dataset)},
            {"scenario", to_string(c.scenario)},
            {"pre_steps", c.pre_steps ? json(*c.pre_steps) : json(nullptr)},
            {"post_steps", c.post_steps},
            {"seed", c.seed},
            {"accuracy", r.accuracy},
            {"n_correct", r.n_correct},
            {"n_examples", r.n_examples},
            {"trace_path", r.trace_path},
            {"wall_time_s", r.wall_time_s},
            {"status", to_string(r.status)},
            {"message", r.message}};
}

}  // namespace

std::string record_to_json(const RunRecord& record) {
    return record_json(record).dump();
}

RunRecord record_from_json(const std::string& line) {
    RunRecord r;
    try {
        const json j = json::parse(line);
        auto& c = r.coord;
        c.index = j.at("index").get<std::size_t>();
        c.pair = {j.at("originating").get<std::string>(), j.at("receiving").get<std::string>()};
        c.technique = technique_from_string(j.at("technique").get<std::string>());
        c.dataset = condition_from_string(j.at("dataset").get<std::string>());
        c.scenario = scenario_from_string(j.at("scenario").get<std::string>());
        if (!j.at("pre_steps").is_null()) {
            c.pre_steps = j.at("pre_steps").get<int>();
        }
        c.post_steps = j.at("post_steps").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
        r.direction = j.at("direction").get<std::string>();
        r.accuracy = j.at("accuracy").get<double>();
        r.n_correct = j.at("n_correct").get<int>();
        r.n_examples = j.at("n_examples").get<int>();
        r.trace_path = j.at("trace_path").get<std::string>();
        r.wall_time_s = j.at("wall_time_s").get<double>();
        r.status = status_from_string(j.at("status").get<std::string>());
        r.message = j.at("message").get<std::string>();
    } catch (const json::exception& e) {
        fail(ErrorKind::CorruptFile, std::string("malformed run record: ") + e.what());
    } catch (const Error& e) {
        fail(ErrorKind::CorruptFile, std::string("malformed run record: ") + e.what());
    }
    return r;
}

std::vector<RunRecord> read_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::MissingArtifact, "cannot open " + path.string());
    }
    std::vector<RunRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            out.push_back(record_from_json(line));
        }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const RunRecord& a, const RunRecord& b) { return a.coord.index < b.coord.index; });
    return out;
}

void write_records(const std::filesystem::path& path, const std::vector<RunRecord>& records) {
    std::string text;
    for (const auto& r : records) {
        text += record_to_json(r);
        text += '\n';
    }
    write_file(path, text);
}

// ---------------------------------------------------------------------------
// Execution

GridRegistry make_registry(const GridSpec& grid, Vocabulary vocab, std::map<std::string, HostEntry> hosts) {
    if (!(vocab == standard_vocabulary())) {
        fail(ErrorKind::InvalidArgument, "host vocabulary differs from the synthetic task vocabulary");
    }
    const auto [a, b] = sentiment_pair_specs(grid.data_seed);
    GridRegistry reg{std::move(vocab), std::move(hosts), {}, {}, {}, {}};
    reg.dataset_a = gen_split(a, reg.vocab, grid.train_examples, grid.test_examples);
    reg.dataset_b = gen_split(b, reg.vocab, grid.train_examples, grid.test_examples);
    reg.dataset_a_id = a.name + "@" + std::to_string(grid.data_seed);
    reg.dataset_b_id = b.name + "@" + std::to_string(grid.data_seed);
    return reg;
}

namespace {

const HostEntry& find_host(const GridRegistry& registry, const std::string& id) {
    const auto it = registry.hosts.find(id);
    if (it == registry.hosts.end()) {
        fail(ErrorKind::MissingArtifact, "no host model registered as '" + id + "'");
    }
    return it->second;
}

bool is_divergence(const Error& e) {
    return e.kind() == ErrorKind::NonFiniteLoss || e.kind() == ErrorKind::TrainingDiverged;
}

}  // namespace

struct ModuleCache::Impl {
    struct Entry {
        std::once_flag once;
        ModuleFile file;
        std::exception_ptr error;
    };

    std::filesystem::path dir;
    std::mutex mutex;
    std::map<std::string, std::shared_ptr<Entry>> entries;
    std::atomic<std::size_t> trained{0};
};

ModuleCache::ModuleCache(std::filesystem::path dir) : impl_(std::make_unique<Impl>()) {
    impl_->dir = std::move(dir);
}

ModuleCache::~ModuleCache() = default;

std::size_t ModuleCache::trained_count() const {
    return impl_->trained.load();
}

std::string ModuleCache::file_name(const std::string& host, PeftTechnique technique, int pre_steps,
                                   std::uint64_t seed) {
    return host + "__" + to_string(technique) + "__pre" + std::to_string(pre_steps) + "__seed" +
           std::to_string(seed) + ".peftmod";
}

ModuleFile ModuleCache::get(const RunCoord& coord, const GridSpec& grid, const GridRegistry& registry) {
    if (!coord.pre_steps) {
        fail(ErrorKind::InvalidArgument, "coordinate has no pre-porting steps");
    }
    const std::string name =
        file_name(coord.pair.originating, coord.technique, *coord.pre_steps, coord.seed);
    std::shared_ptr<Impl::Entry> entry;
    {
        std::lock_guard lock(impl_->mutex);
        auto& slot = impl_->entries[name];
        if (!slot) {
            slot = std::make_shared<Impl::Entry>();
        }
        entry = slot;
    }
    std::call_once(entry->once, [&] {
        try {
            const auto& origin = find_host(registry, coord.pair.originating);
            const auto config = default_config(coord.technique, origin.model.config().hidden_dim);
            const Provenance provenance{*coord.pre_steps, registry.dataset_a_id, coord.seed, "",
                                        fingerprint(origin.model).hex()};
            const auto path = impl_->dir / name;
            if (std::filesystem::exists(path)) {
                try {
                    auto file = load_module(path);
                    if (file.provenance == provenance && file.state.config == config &&
                        file.state.technique == coord.technique) {
                        entry->file = std::move(file);
                        return;
                    }
                } catch (const Error&) {
                }
            }
            HostModel model = origin.model.clone();
            auto state = attach(model, config, derive_seed(coord.seed, "pre-init"));
            TrainConfig cfg;
            cfg.learning_rate = grid.learning_rate;
            cfg.warmup_fraction = grid.warmup_fraction;
            cfg.batch_tokens = grid.pre_batch_tokens;
            cfg.total_steps = *coord.pre_steps;
            cfg.seed = derive_seed(coord.seed, "pre-train");
            try {
                train_peft(model, state, registry.dataset_a.train, cfg);
            } catch (const Error& e) {
                if (is_divergence(e)) {
                    fail(ErrorKind::TrainingDiverged, "pre-porting training of " + name + ": " + e.what());
                }
                throw;
            }
            const auto bytes = export_module(state, provenance);
            write_file(path, bytes);
            entry->file = read_module(bytes);
            ++impl_->trained;
        } catch (...) {
            entry->error = std::current_exception();
        }
    });
    if (entry->error) {
        std::rethrow_exception(entry->error);
    }
    return entry->file;
}

RunRecord run_one(const RunCoord& coord, const GridSpec& grid, const GridRegistry& registry, ModuleCache& cache,
                  const GridOptions& options) {
    const auto start = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.coord = coord;
    try {
        const auto& origin = find_host(registry, coord.pair.originating);
        const auto& receiving = find_host(registry, coord.pair.receiving);
        rec.direction = origin.kind + "->" + receiving.kind;

        ModuleFile file;
        if (coord.scenario == PortScenario::FromScratch) {
            const auto& cfg = receiving.model.config();
            file.state.technique = coord.technique;
            file.state.config = default_config(coord.technique, cfg.hidden_dim);
            file.state.host = HostMeta::of(cfg);
        } else {
            file = cache.get(coord, grid, registry);
        }

        HostModel model = receiving.model.clone();
        auto state = import_module(file, model, coord.scenario, derive_seed(coord.seed, "import"));
        const auto& data = coord.dataset == DatasetCondition::Same ? registry.dataset_a : registry.dataset_b;
        if (coord.post_steps > 0) {
            TrainConfig cfg;
            cfg.learning_rate = grid.learning_rate;
            cfg.warmup_fraction = grid.warmup_fraction;
            cfg.batch_tokens = grid.post_batch_tokens;
            cfg.total_steps = coord.post_steps;
            cfg.seed = derive_seed(coord.seed, "post-train");
            std::optional<std::filesystem::path> trace;
            if (options.write_traces) {
                rec.trace_path = "traces/" + coord.to_string() + ".csv";
                trace = options.out_dir / rec.trace_path;
            }
            train_peft(model, state, data.train, cfg, trace);
        }
        const auto result = evaluate(model, data.test);
        rec.accuracy = result.accuracy;
        rec.n_correct = result.n_correct;
        rec.n_examples = result.n_examples;
    } catch (const Error& e) {
        rec.status = is_divergence(e) ? RunStatus::Diverged : RunStatus::Failed;
        rec.message = e.what();
    } catch (const std::exception& e) {
        rec.status = RunStatus::Failed;
        rec.message = e.what();
    }
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rec;
}

std::vector<RunRecord> run_grid(const GridSpec& grid, const GridRegistry& registry, const GridOptions& options) {
    const auto coords = enumerate_runs(grid);
    std::filesystem::create_directories(options.out_dir / "modules");
    const auto log_path = options.out_dir / "records.jsonl";
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) {
        fail(ErrorKind::IoError, "cannot write " + log_path.string());
    }
    ModuleCache cache(options.out_dir / "modules");
    std::vector<RunRecord> records(coords.size());
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    std::exception_ptr error;

    auto worker = [&] {
        try {
            for (std::size_t i = next++; i < coords.size(); i = next++) {
                records[i] = run_one(coords[i], grid, registry, cache, options);
                std::lock_guard lock(log_mutex);
                log << record_to_json(records[i]) << '\n';
                log.flush();
            }
        } catch (...) {
            std::lock_guard lock(log_mutex);
            if (!error) {
                error = std::current_exception();
            }
            next = coords.size();
        }
    };
    const int width = std::max(1, options.workers);
    std::vector<std::thread> pool;
    for (int w = 1; w < width; ++w) {
        pool.emplace_back(worker);
    }
    worker();
    for (auto& t : pool) {
        t.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
    return records;
}

// ---------------------------------------------------------------------------
// Aggregation

std::string to_string(GroupKey key) {
    switch (key) {
    case GroupKey::Direction: return "direction";
    case GroupKey::Pair: return "pair";
    case GroupKey::Technique: return "technique";
    case GroupKey::Dataset: return "dataset";
    case GroupKey::Scenario: return "scenario";
    case GroupKey::PreSteps: return "pre_steps";
    case GroupKey::PostSteps: return "post_steps";
    case GroupKey::Seed: return "seed";
    }
    return "?";
}

std::string group_value(const RunRecord& r, GroupKey key) {
    const auto& c = r.coord;
    switch (key) {
    case GroupKey::Direction: return r.direction;
    case GroupKey::Pair: return c.pair.originating + "->" + c.pair.receiving;
    case GroupKey::Technique: return to_string(c.technique);
    case GroupKey::Dataset: return to_string(c.dataset);
    case GroupKey::Scenario: return to_string(c.scenario);
    case GroupKey::PreSteps: return c.pre_steps ? std::to_string(*c.pre_steps) : "none";
    case GroupKey::PostSteps: return std::to_string(c.post_steps);
    case GroupKey::Seed: return std::to_string(c.seed);
    }
    return "?";
}

std::string AggregateCell::key(GroupKey k) const {
    for (const auto& [gk, value] : keys) {
        if (gk == k) {
            return value;
        }
    }
    fail(ErrorKind::InvalidArgument, "cell is not grouped by " + to_string(k));
}

namespace {

// Numeric keys sort numerically; scenarios in declaration order.
std::pair<long long, std::string> sort_key(const RunRecord& r, GroupKey key) {
    const auto& c = r.coord;
    switch (key) {
    case GroupKey::PreSteps: return {c.pre_steps ? *c.pre_steps : -1, ""};
    case GroupKey::PostSteps: return {c.post_steps, ""};
    case GroupKey::Seed: return {static_cast<long long>(c.seed), ""};
    case GroupKey::Scenario: return {static_cast<long long>(c.scenario), ""};
    case GroupKey::Technique: return {static_cast<long long>(c.technique), ""};
    default: return {0, group_value(r, key)};
    }
}

}  // namespace

std::vector<AggregateCell> aggregate(const std::vector<RunRecord>& records, const std::vector<GroupKey>& group_by,
                                     bool skip_empty) {
    if (records.empty()) {
        fail(ErrorKind::EmptyGroup, "no records to aggregate");
    }
    struct Group {
        std::vector<std::pair<GroupKey, std::string>> keys;
        std::vector<double> values;
        int excluded = 0;
    };
    std::map<std::vector<std::pair<long long, std::string>>, Group> groups;
    for (const auto& r : records) {
        std::vector<std::pair<long long, std::string>> sk;
        for (auto k : group_by) {
            sk.push_back(sort_key(r, k));
        }
        auto& g = groups[sk];
        if (g.keys.empty()) {
            for (auto k : group_by) {
                g.keys.emplace_back(k, group_value(r, k));
            }
        }
        if (r.status == RunStatus::Ok) {
            g.values.push_back(r.accuracy);
        } else {
            ++g.excluded;
        }
    }
    std::vector<AggregateCell> out;
    for (auto& [sk, g] : groups) {
        if (g.values.empty()) {
            if (skip_empty) {
                continue;
            }
            std::string desc;
            for (const auto& [k, v] : g.keys) {
                desc += " " + to_string(k) + "=" + v;
            }
            fail(ErrorKind::EmptyGroup, "group without ok records:" + desc);
        }
        std::sort(g.values.begin(), g.values.end());
        const double n = static_cast<double>(g.values.size());
        double mean = 0.0;
        for (double v : g.values) {
            mean += v;
        }
        mean /= n;
        double var = 0.0;
        for (double v : g.values) {
            var += (v - mean) * (v - mean);
        }
        var /= n;
        out.push_back({g.keys, mean, var, static_cast<int>(g.values.size()), g.excluded});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reporting

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    return out + "\"";
}

std::string fmt(double v, int precision) {
    std::ostringstream ss;
    ss.setf(std::ios::fixed);
    ss.precision(precision);
    ss << v;
    return ss.str();
}

std::string svg_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        default: out += c;
        }
    }
    return out;
}

void write_text(const std::filesystem::path& path, const std::string& text, ReportSummary& summary) {
    try {
        write_file(path, text);
    } catch (const std::filesystem::filesystem_error& e) {
        fail(ErrorKind::IoError, e.what());
    }
    summary.files.push_back(path);
}

std::string scenario_title(const std::string& s) {
    if (s == "ported") {
        return "Ported";
    }
    if (s == "sampled") {
        return "Sampled";
    }
    return "From scratch";
}

std::string records_csv(const std::vector<RunRecord>& records) {
    std::ostringstream ss;
    ss << "index,originating,receiving,direction,technique,dataset,scenario,pre_steps,post_steps,seed,"
          "accuracy,n_correct,n_examples,status,wall_time_s,trace_path,message\n";
    for (const auto& r : records) {
        const auto& c = r.coord;
        ss << c.index << ',' << csv_field(c.pair.originating) << ',' << csv_field(c.pair.receiving) << ','
           << csv_field(r.direction) << ',' << to_string(c.technique) << ',' << to_string(c.dataset) << ','
           << to_string(c.scenario) << ',' << (c.pre_steps ? std::to_string(*c.pre_steps) : "") << ','
           << c.post_steps << ',' << c.seed << ',' << fmt(r.accuracy, 6) << ',' << r.n_correct << ','
           << r.n_examples << ',' << to_string(r.status) << ',' << fmt(r.wall_time_s, 3) << ','
           << csv_field(r.trace_path) << ',' << csv_field(r.message) << '\n';
    }
    return ss.str();
}

std::string cells_csv(const std::vector<AggregateCell>& cells, const std::vector<GroupKey>& keys) {
    std::ostringstream ss;
    for (auto k : keys) {
        ss << to_string(k) << ',';
    }
    ss << "mean_accuracy,variance,n_runs,n_excluded\n";
    for (const auto& c : cells) {
        for (const auto& [k, v] : c.keys) {
            ss << csv_field(v) << ',';
        }
        ss << fmt(c.mean, 6) << ',' << fmt(c.variance, 6) << ',' << c.n_runs << ',' << c.n_excluded << '\n';
    }
    return ss.str();
}

std::string scenario_table_text(const std::vector<AggregateCell>& cells) {
    const std::vector<std::string> scenarios = {"ported", "sampled", "from_scratch"};
    std::map<std::string, std::map<std::pair<std::string, std::string>, std::map<std::string, const AggregateCell*>>>
        by_direction;
    std::map<std::string, std::vector<std::pair<std::string, std::string>>> row_order;
    for (const auto& c : cells) {
        const auto dir = c.key(GroupKey::Direction);
        const std::pair row{c.key(GroupKey::Technique), c.key(GroupKey::Dataset)};
        auto& rows = by_direction[dir];
        if (rows.find(row) == rows.end()) {
            row_order[dir].push_back(row);
        }
        rows[row][c.key(GroupKey::Scenario)] = &c;
    }
    std::ostringstream ss;
    ss << "Mean accuracy (variance) per scenario\n";
    for (const auto& [dir, rows] : by_direction) {
        ss << "\n" << dir << "\n";
        char line[256];
        std::snprintf(line, sizeof line, "%-12s %-10s %-18s %-18s %-18s\n", "technique", "dataset", "Ported",
                      "Sampled", "From scratch");
        ss << line;
        for (const auto& row : row_order[dir]) {
            std::string vals[3];
            for (int i = 0; i < 3; ++i) {
                const auto it = rows.at(row).find(scenarios[i]);
                vals[i] = it == rows.at(row).end()
                              ? "-"
                              : fmt(it->second->mean, 3) + " (" + fmt(it->second->variance, 3) + ")";
            }
            std::snprintf(line, sizeof line, "%-12s %-10s %-18s %-18s %-18s\n", row.first.c_str(),
                          row.second.c_str(), vals[0].c_str(), vals[1].c_str(), vals[2].c_str());
            ss << line;
        }
    }
    return ss.str();
}

struct ChartBar {
    std::string scenario;
    double mean = 0.0;
    double variance = 0.0;
};

std::string chart_svg(const std::string& title, const std::vector<int>& posts,
                      const std::map<int, std::vector<ChartBar>>& bars) {
    const double width = 640, height = 380, left = 60, right = 150, top = 40, bottom = 50;
    const double plot_w = width - left - right, plot_h = height - top - bottom;
    static const std::map<std::string, std::string> colors = {
        {"ported", "#1f77b4"}, {"sampled", "#ff7f0e"}, {"from_scratch", "#2ca02c"}};
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << svg_escape(title)
      << "</text>\n";
    for (int i = 0; i <= 4; ++i) {
        const double v = i * 0.25;
        const double y = top + plot_h * (1.0 - v);
        s << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << left + plot_w << "\" y2=\"" << y
          << "\" stroke=\"#ddd\"/>\n";
        s << "<text x=\"" << left - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fmt(v, 2)
          << "</text>\n";
    }
    s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
      << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";
    s << "<text transform=\"translate(16," << top + plot_h / 2
      << ") rotate(-90)\" text-anchor=\"middle\">Accuracy</text>\n";
    s << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 10
      << "\" text-anchor=\"middle\">Post-porting steps</text>\n";
    const double group_w = plot_w / static_cast<double>(std::max<std::size_t>(posts.size(), 1));
    std::set<std::string> legend;
    for (std::size_t g = 0; g < posts.size(); ++g) {
        const auto& group = bars.at(posts[g]);
        const double x0 = left + group_w * static_cast<double>(g);
        const double bar_w = group_w * 0.8 / static_cast<double>(std::max<std::size_t>(group.size(), 1));
        for (std::size_t b = 0; b < group.size(); ++b) {
            const auto& bar = group[b];
            legend.insert(bar.scenario);
            const double h = plot_h * std::clamp(bar.mean, 0.0, 1.0);
            const double x = x0 + group_w * 0.1 + bar_w * static_cast<double>(b);
            s << "<rect x=\"" << x << "\" y=\"" << top + plot_h - h << "\" width=\"" << bar_w * 0.9
              << "\" height=\"" << h << "\" fill=\"" << colors.at(bar.scenario) << "\"><title>"
              << scenario_title(bar.scenario) << ": " << fmt(bar.mean, 3) << " (" << fmt(bar.variance, 4)
              << ")</title></rect>\n";
        }
        s << "<text x=\"" << x0 + group_w / 2 << "\" y=\"" << top + plot_h + 18 << "\" text-anchor=\"middle\">"
          << posts[g] << "</text>\n";
    }
    double ly = top + 10;
    for (const auto* sc : {"ported", "sampled", "from_scratch"}) {
        if (legend.count(sc) == 0) {
            continue;
        }
        s << "<rect x=\"" << left + plot_w + 16 << "\" y=\"" << ly << "\" width=\"12\" height=\"12\" fill=\""
          << colors.at(sc) << "\"/>\n";
        s << "<text x=\"" << left + plot_w + 34 << "\" y=\"" << ly + 10 << "\">" << scenario_title(sc)
          << "</text>\n";
        ly += 20;
    }
    s << "</svg>\n";
    return s.str();
}

std::string file_safe(std::string s) {
    for (std::size_t p = s.find("->"); p != std::string::npos; p = s.find("->")) {
        s.replace(p, 2, "_to_");
    }
    for (auto& c : s) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) {
            c = '_';
        }
    }
    return s;
}

}  // namespace

ReportSummary report(const std::vector<RunRecord>& records, const std::filesystem::path& out_dir) {
    if (records.empty()) {
        fail(ErrorKind::EmptyGroup, "no records to report");
    }
    ReportSummary summary;
    summary.records = records.size();
    for (const auto& r : records) {
        switch (r.status) {
        case RunStatus::Ok: ++summary.ok; break;
        case RunStatus::Diverged: ++summary.diverged; break;
        case RunStatus::Failed: ++summary.failed; break;
        }
    }
    try {
        std::filesystem::create_directories(out_dir / "charts");
    } catch (const std::filesystem::filesystem_error& e) {
        fail(ErrorKind::IoError, e.what());
    }
    write_text(out_dir / "records.csv", records_csv(records), summary);

    const std::vector<GroupKey> table_keys = {GroupKey::Direction, GroupKey::Technique, GroupKey::Dataset,
                                              GroupKey::Scenario};
    const auto table = aggregate(records, table_keys, true);
    write_text(out_dir / "scenario_table.csv", cells_csv(table, table_keys), summary);
    write_text(out_dir / "scenario_table.txt", scenario_table_text(table), summary);

    const std::vector<GroupKey> full_keys = {GroupKey::Direction, GroupKey::Technique, GroupKey::Dataset,
                                             GroupKey::PreSteps,  GroupKey::PostSteps, GroupKey::Scenario};
    const auto cells = aggregate(records, full_keys, true);
    write_text(out_dir / "aggregate.csv", cells_csv(cells, full_keys), summary);

    // One chart per (technique, direction, pre_steps, dataset). From-scratch
    // runs have no pre_steps and appear in every chart of their panel.
    struct Panel {
        std::string technique, direction, dataset;
        auto operator<=>(const Panel&) const = default;
    };
    std::map<Panel, std::set<int>> pre_values;
    for (const auto& r : records) {
        if (r.status != RunStatus::Ok) {
            continue;
        }
        auto& pres = pre_values[{to_string(r.coord.technique), r.direction, to_string(r.coord.dataset)}];
        if (r.coord.pre_steps) {
            pres.insert(*r.coord.pre_steps);
        }
    }
    for (const auto& [panel, pres] : pre_values) {
        std::vector<std::optional<int>> chart_pres(pres.begin(), pres.end());
        if (chart_pres.empty()) {
            chart_pres.push_back(std::nullopt);
        }
        for (const auto& pre : chart_pres) {
            std::map<int, std::vector<ChartBar>> bars;
            for (const auto& c : cells) {
                if (c.key(GroupKey::Technique) != panel.technique || c.key(GroupKey::Direction) != panel.direction ||
                    c.key(GroupKey::Dataset) != panel.dataset) {
                    continue;
                }
                const auto cell_pre = c.key(GroupKey::PreSteps);
                if (cell_pre != "none" && (!pre || cell_pre != std::to_string(*pre))) {
                    continue;
                }
                bars[std::stoi(c.key(GroupKey::PostSteps))].push_back(
                    {c.key(GroupKey::Scenario), c.mean, c.variance});
            }
            std::vector<int> posts;
            for (auto& [post, group] : bars) {
                posts.push_back(post);
                std::stable_sort(group.begin(), group.end(), [](const ChartBar& a, const ChartBar& b) {
                    return scenario_from_string(a.scenario) < scenario_from_string(b.scenario);
                });
            }
            const std::string pre_label = pre ? std::to_string(*pre) : "none";
            const std::string title = panel.technique + ", " + panel.direction + ", pre " + pre_label + ", " +
                                      panel.dataset + " dataset";
            const auto name = file_safe(panel.technique + "__" + panel.direction + "__pre" + pre_label + "__" +
                                        panel.dataset) +
                              ".svg";
            write_text(out_dir / "charts" / name, chart_svg(title, posts, bars), summary);
            ++summary.charts;
        }
    }

    json s = {{"records", summary.records},   {"ok", summary.ok},       {"diverged", summary.diverged},
              {"failed", summary.failed},     {"charts", summary.charts}};
    write_text(out_dir / "summary.json", s.dump(2) + "\n", summary);
    return summary;
}

}  // namespace peftport
