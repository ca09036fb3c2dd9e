// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//
// peftport command-line entry point.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure. Every successful
// command prints one JSON summary line on stdout.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>

#include "peftport/errors.h"
#include "peftport/grid.h"
#include "peftport/host_model.h"
#include "peftport/peft.h"
#include "peftport/porting.h"
#include "peftport/tasks.h"
#include "peftport/train.h"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace peftport;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void emit(json summary) {
    std::cout << summary.dump() << std::endl;
}

LabelMap cli_label_map() {
    LabelMap labels = sentiment_label_map();
    for (const auto& spec : instruct_mixture_specs(0)) {
        for (const auto& v : spec.verbalizers) {
            labels[v] = v;
        }
    }
    for (const auto& v : nli_spec(0).verbalizers) {
        labels[v] = v;
    }
    return labels;
}

SyntheticTaskSpec task_by_name(const std::string& name, std::uint64_t seed) {
    const auto [a, b] = sentiment_pair_specs(seed);
    if (name == "sentiment-a" || name == "sentiment") {
        return a;
    }
    if (name == "sentiment-b") {
        return b;
    }
    if (name == "nli") {
        return nli_spec(seed);
    }
    for (const auto& spec : instruct_mixture_specs(seed)) {
        if (spec.name == name) {
            return spec;
        }
    }
    throw UsageError("--task: unknown task '" + name + "'");
}

template <typename F>
auto parse_enum(const std::string& flag, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        throw UsageError(flag + ": " + e.what());
    }
}

void require_positive(const std::string& flag, long long v, bool allow_zero = false) {
    if (v < 0 || (!allow_zero && v == 0)) {
        throw UsageError(flag + " must be " + (allow_zero ? "non-negative" : "positive"));
    }
}

// ---------------------------------------------------------------------------

struct BuildModelsArgs {
    std::string out;
    std::uint64_t seed = 0;
    int lm_steps = -1;
    int instruct_steps = -1;
    bool no_enforce = false;
};

void build_models(const BuildModelsArgs& a) {
    auto spec = default_model_pair_spec(a.seed);
    if (a.lm_steps >= 0) {
        spec.lm_steps = a.lm_steps;
    }
    if (a.instruct_steps >= 0) {
        spec.instruct_steps = a.instruct_steps;
    }
    spec.enforce_criterion = !a.no_enforce;
    const auto pair = build_model_pair(spec);
    const fs::path dir(a.out);
    save_host(dir / "raw.peftmod", pair.raw, pair.vocab, {"raw", spec.lm_steps, 0, a.seed});
    save_host(dir / "instruct.peftmod", pair.instruct, pair.vocab,
              {"instruct", spec.lm_steps, spec.instruct_steps, a.seed});
    emit({{"command", "build-models"},
          {"raw", (dir / "raw.peftmod").string()},
          {"instruct", (dir / "instruct.peftmod").string()},
          {"raw_heldout_accuracy", pair.raw_heldout_accuracy},
          {"instruct_heldout_accuracy", pair.instruct_heldout_accuracy},
          {"raw_fingerprint", fingerprint(pair.raw).hex()},
          {"instruct_fingerprint", fingerprint(pair.instruct).hex()}});
}

struct GenDataArgs {
    std::string task;
    int n = 0;
    int test_n = 0;
    std::uint64_t seed = 0;
    std::string out;
    std::string test_out;
};

void gen_data(const GenDataArgs& a) {
    const auto spec = task_by_name(a.task, a.seed);
    if (a.test_n > 0 && a.test_out.empty()) {
        throw UsageError("--test-n requires --test-out");
    }
    const auto vocab = standard_vocabulary();
    const auto split = gen_split(spec, vocab, a.n, std::max(a.test_n, 1));
    save_tsv(a.out, split.train, vocab);
    json summary = {{"command", "gen-data"}, {"task", spec.name}, {"out", a.out}, {"n", split.train.size()}};
    if (a.test_n > 0) {
        save_tsv(a.test_out, split.test, vocab);
        summary["test_out"] = a.test_out;
        summary["test_n"] = split.test.size();
    }
    emit(summary);
}

struct PeftTrainArgs {
    std::string model;
    std::string technique;
    std::string module;
    std::string data;
    int steps = 0;
    std::uint64_t seed = 0;
    std::string out;
    double lr = 1e-4;
    double warmup = 0.1;
    int batch_tokens = 4096;
    std::string trace;
};

void peft_train(const PeftTrainArgs& a) {
    if (a.technique.empty() == a.module.empty()) {
        throw UsageError("exactly one of --technique and --module is required");
    }
    std::optional<PeftTechnique> technique;
    if (!a.technique.empty()) {
        technique = parse_enum("--technique", [&] { return technique_from_string(a.technique); });
    }
    TrainConfig cfg;
    cfg.learning_rate = a.lr;
    cfg.warmup_fraction = a.warmup;
    cfg.batch_tokens = a.batch_tokens;
    cfg.total_steps = a.steps;
    cfg.seed = a.seed;
    try {
        cfg.validate();
    } catch (const Error& e) {
        throw UsageError(e.what());
    }

    auto host = load_host(a.model);
    const auto data = load_tsv(a.data, host.vocab, cli_label_map());
    PeftModuleState state;
    Provenance provenance{a.steps, fs::path(a.data).stem().string(), a.seed, "", ""};
    if (technique) {
        state = attach(host.model, default_config(*technique, host.model.config().hidden_dim), a.seed);
    } else {
        auto file = load_module(a.module);
        state = import_module(file, host.model, PortScenario::Ported, a.seed);
        provenance = file.provenance;
    }
    provenance.host_fingerprint = fingerprint(host.model).hex();
    std::optional<fs::path> trace;
    if (!a.trace.empty()) {
        trace = a.trace;
    }
    const auto t = train_peft(host.model, state, data, cfg, trace);
    save_module(a.out, state, provenance);
    emit({{"command", "peft-train"},
          {"out", a.out},
          {"technique", to_string(state.technique)},
          {"steps", a.steps},
          {"parameters", state.parameter_count()},
          {"final_loss", t.loss.empty() ? json(nullptr) : json(t.loss.back())}});
}

struct ExportArgs {
    std::string module;
    std::string out;
};

void export_cmd(const ExportArgs& a) {
    const auto file = load_module(a.module);
    const auto bytes = export_module(file.state, file.provenance);
    write_file(a.out, bytes);
    emit({{"command", "export"},
          {"out", a.out},
          {"technique", to_string(file.state.technique)},
          {"tensors", file.state.tensors.size()},
          {"parameters", file.state.parameter_count()},
          {"bytes", bytes.size()}});
}

struct ImportArgs {
    std::string module;
    std::string model;
    std::string scenario;
    std::uint64_t seed = 0;
    std::string out;
    std::string moments = "per-tensor";
};

void import_cmd(const ImportArgs& a) {
    const auto scenario = parse_enum("--scenario", [&] { return scenario_from_string(a.scenario); });
    MomentScope scope;
    if (a.moments == "per-tensor") {
        scope = MomentScope::PerTensor;
    } else if (a.moments == "per-module") {
        scope = MomentScope::PerModule;
    } else {
        throw UsageError("--moments must be per-tensor or per-module");
    }
    const auto file = load_module(a.module);
    auto host = load_host(a.model);
    const auto state = import_module(file, host.model, scenario, a.seed, scope);
    auto provenance = file.provenance;
    provenance.scenario = to_string(scenario);
    provenance.host_fingerprint = fingerprint(host.model).hex();
    save_module(a.out, state, provenance);
    emit({{"command", "import"},
          {"out", a.out},
          {"scenario", to_string(scenario)},
          {"technique", to_string(state.technique)},
          {"receiving_fingerprint", provenance.host_fingerprint}});
}

struct EvalArgs {
    std::string model;
    std::string module;
    std::string data;
};

void eval_cmd(const EvalArgs& a) {
    auto host = load_host(a.model);
    if (!a.module.empty()) {
        import_module(load_module(a.module), host.model, PortScenario::Ported, 0);
    }
    const auto data = load_tsv(a.data, host.vocab, cli_label_map());
    const auto r = evaluate(host.model, data);
    emit({{"command", "eval"},
          {"accuracy", r.accuracy},
          {"n_examples", r.n_examples},
          {"n_correct", r.n_correct}});
}

struct GridArgs {
    std::string spec;
    std::string out;
    std::string models;
    int workers = 1;
    std::uint64_t seed = 0;
};

void grid_cmd(const GridArgs& a) {
    if (a.workers < 1) {
        throw UsageError("--workers must be positive");
    }
    auto grid = load_grid_spec(a.spec);
    grid.data_seed = a.seed;
    const auto coords = enumerate_runs(grid);

    std::set<std::string> ids;
    for (const auto& p : grid.model_pairs) {
        ids.insert(p.originating);
        ids.insert(p.receiving);
    }
    std::map<std::string, HostEntry> hosts;
    std::optional<Vocabulary> vocab;
    for (const auto& id : ids) {
        fs::path path;
        if (const auto it = grid.hosts.find(id); it != grid.hosts.end()) {
            path = it->second;
            if (path.is_relative()) {
                path = fs::path(a.spec).parent_path() / path;
            }
        } else if (!a.models.empty()) {
            path = fs::path(a.models) / (id + ".peftmod");
        } else {
            fail(ErrorKind::MissingArtifact, "no checkpoint path for host '" + id + "' (use hosts or --models)");
        }
        auto ckpt = load_host(path);
        if (vocab && !(*vocab == ckpt.vocab)) {
            fail(ErrorKind::IncompatibleHost, "host '" + id + "' uses a different vocabulary");
        }
        vocab = ckpt.vocab;
        hosts.emplace(id, HostEntry{std::move(ckpt.model), ckpt.provenance.kind});
    }
    const auto registry = make_registry(grid, *vocab, std::move(hosts));
    GridOptions options{a.out, a.workers, true};
    const auto records = run_grid(grid, registry, options);
    const auto summary = report(records, fs::path(a.out) / "reports");
    emit({{"command", "grid"},
          {"out", a.out},
          {"runs", records.size()},
          {"ok", summary.ok},
          {"diverged", summary.diverged},
          {"failed", summary.failed},
          {"charts", summary.charts}});
}

struct ReportArgs {
    std::string results;
    std::string out;
};

void report_cmd(const ReportArgs& a) {
    const fs::path log = fs::path(a.results) / "records.jsonl";
    if (!fs::exists(log)) {
        fail(ErrorKind::MissingArtifact, "no records.jsonl in " + a.results);
    }
    const auto records = read_records(log);
    const fs::path out = a.out.empty() ? fs::path(a.results) / "reports" : fs::path(a.out);
    const auto summary = report(records, out);
    emit({{"command", "report"},
          {"out", out.string()},
          {"records", summary.records},
          {"ok", summary.ok},
          {"diverged", summary.diverged},
          {"failed", summary.failed},
          {"charts", summary.charts}});
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Train, port and evaluate parameter-efficient finetuning modules"};
    app.require_subcommand(1);

    BuildModelsArgs bm;
    auto* c_bm = app.add_subcommand("build-models", "Train the raw and instruction-tuned host analogs");
    c_bm->add_option("--out", bm.out, "Output directory")->required();
    c_bm->add_option("--seed", bm.seed, "Random seed")->required();
    c_bm->add_option("--lm-steps", bm.lm_steps, "Language-model training steps");
    c_bm->add_option("--instruct-steps", bm.instruct_steps, "Instruction-tuning steps");
    c_bm->add_flag("--no-enforce", bm.no_enforce, "Do not fail when the instruct analog misses 0.9 accuracy");

    GenDataArgs gd;
    auto* c_gd = app.add_subcommand("gen-data", "Generate a synthetic task dataset as TSV");
    c_gd->add_option("--task", gd.task, "sentiment-a, sentiment-b, nli, polarity or topic")->required();
    c_gd->add_option("--n", gd.n, "Number of training examples")->required();
    c_gd->add_option("--test-n", gd.test_n, "Number of held-out examples");
    c_gd->add_option("--test-out", gd.test_out, "Held-out TSV path");
    c_gd->add_option("--seed", gd.seed, "Random seed")->required();
    c_gd->add_option("--out", gd.out, "Output TSV path")->required();

    PeftTrainArgs pt;
    auto* c_pt = app.add_subcommand("peft-train", "Train a PEFT module on a frozen host");
    c_pt->add_option("--model", pt.model, "Host checkpoint")->required();
    c_pt->add_option("--technique", pt.technique, "adapter, compacter, lora or prefix (fresh module)");
    c_pt->add_option("--module", pt.module, "Continue training this module");
    c_pt->add_option("--data", pt.data, "Training TSV")->required();
    c_pt->add_option("--steps", pt.steps, "Optimizer steps")->required();
    c_pt->add_option("--seed", pt.seed, "Random seed")->required();
    c_pt->add_option("--out", pt.out, "Output module path")->required();
    c_pt->add_option("--lr", pt.lr, "Peak learning rate");
    c_pt->add_option("--warmup", pt.warmup, "Warmup fraction");
    c_pt->add_option("--batch-tokens", pt.batch_tokens, "Token budget per batch");
    c_pt->add_option("--trace", pt.trace, "Loss trace CSV path");

    ExportArgs ex;
    auto* c_ex = app.add_subcommand("export", "Validate a module and write its canonical container");
    c_ex->add_option("--module", ex.module, "Module file")->required();
    c_ex->add_option("--out", ex.out, "Output path")->required();

    ImportArgs im;
    auto* c_im = app.add_subcommand("import", "Import a module into a receiving host under a scenario");
    c_im->add_option("--module", im.module, "Module file")->required();
    c_im->add_option("--model", im.model, "Receiving host checkpoint")->required();
    c_im->add_option("--scenario", im.scenario, "ported, sampled or from_scratch")->required();
    c_im->add_option("--seed", im.seed, "Random seed")->required();
    c_im->add_option("--out", im.out, "Output module path")->required();
    c_im->add_option("--moments", im.moments, "per-tensor or per-module moment matching");

    EvalArgs ev;
    auto* c_ev = app.add_subcommand("eval", "Evaluate exact-match accuracy");
    c_ev->add_option("--model", ev.model, "Host checkpoint")->required();
    c_ev->add_option("--module", ev.module, "Module to attach");
    c_ev->add_option("--data", ev.data, "Evaluation TSV")->required();

    GridArgs gr;
    auto* c_gr = app.add_subcommand("grid", "Run an experiment grid");
    c_gr->add_option("--spec", gr.spec, "Grid definition JSON")->required();
    c_gr->add_option("--out", gr.out, "Results directory")->required();
    c_gr->add_option("--models", gr.models, "Directory of <host-id>.peftmod checkpoints");
    c_gr->add_option("--workers", gr.workers, "Worker threads");
    c_gr->add_option("--seed", gr.seed, "Dataset seed")->required();

    ReportArgs rp;
    auto* c_rp = app.add_subcommand("report", "Aggregate records and write reports");
    c_rp->add_option("--results", rp.results, "Results directory")->required();
    c_rp->add_option("--out", rp.out, "Report directory (default <results>/reports)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*c_bm) {
            build_models(bm);
        } else if (*c_gd) {
            require_positive("--n", gd.n);
            require_positive("--test-n", gd.test_n, true);
            gen_data(gd);
        } else if (*c_pt) {
            require_positive("--steps", pt.steps, true);
            peft_train(pt);
        } else if (*c_ex) {
            export_cmd(ex);
        } else if (*c_im) {
            import_cmd(im);
        } else if (*c_ev) {
            eval_cmd(ev);
        } else if (*c_gr) {
            grid_cmd(gr);
        } else if (*c_rp) {
            report_cmd(rp);
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
