// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//

#include "peftport/tasks.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "peftport/errors.h"
#include "peftport/rng.h"

namespace peftport {

namespace {

const std::vector<std::string> kPositive = {"joy", "love", "fun", "bright", "warm", "sweet"};
const std::vector<std::string> kNegative = {"dull", "sad", "grim", "cold", "bitter", "awful"};
const std::vector<std::string> kEntail = {"same", "alike", "match"};
const std::vector<std::string> kNeutral = {"maybe", "perhaps", "unsure"};
const std::vector<std::string> kContra = {"not", "never", "clash"};
const std::vector<std::string> kAnimals = {"cat", "dog", "bird", "fish"};
const std::vector<std::string> kVehicles = {"car", "bus", "ship", "train"};
const std::vector<std::string> kInstructionWords = {"review", "topic"};
const std::vector<std::string> kVerbalizers = {"great", "terrible",   "good",    "bad",          "yes",
                                               "no",    "entailment", "neutral", "contradiction"};
constexpr int kNoiseWords = 64;

int uniform_int(Rng& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double uniform01(Rng& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& items) {
    return items[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(items.size()) - 1))];
}

std::vector<int> marker_counts(const SyntheticTaskSpec& spec, const Vocabulary& vocab, const TokenSeq& tokens) {
    std::vector<int> counts(spec.class_markers.size(), 0);
    for (auto t : tokens) {
        for (std::size_t c = 0; c < spec.class_markers.size(); ++c) {
            for (const auto& w : spec.class_markers[c]) {
                if (vocab.id(w) == t) {
                    ++counts[c];
                }
            }
        }
    }
    return counts;
}

TokenId require_word(const Vocabulary& vocab, const std::string& w) {
    if (!vocab.contains(w)) {
        fail(ErrorKind::DegenerateSpec, "word '" + w + "' is not in the vocabulary");
    }
    return vocab.id(w);
}

}  // namespace

void SyntheticTaskSpec::validate() const {
    if (class_markers.empty()) {
        fail(ErrorKind::DegenerateSpec, name + ": no classes");
    }
    if (verbalizers.size() != class_markers.size()) {
        fail(ErrorKind::DegenerateSpec, name + ": one verbalizer per class is required");
    }
    std::set<std::string> seen;
    for (const auto& markers : class_markers) {
        if (markers.empty()) {
            fail(ErrorKind::DegenerateSpec, name + ": empty marker set");
        }
        for (const auto& w : markers) {
            if (!seen.insert(w).second) {
                fail(ErrorKind::DegenerateSpec, name + ": marker '" + w + "' belongs to two classes");
            }
        }
    }
    if (!(marker_density > 0.0 && marker_density <= 1.0)) {
        fail(ErrorKind::DegenerateSpec, name + ": marker density must lie in (0, 1]");
    }
    if (marker_density < 1.0 && noise.empty()) {
        fail(ErrorKind::DegenerateSpec, name + ": noise words are required when density < 1");
    }
    if (min_len < 1 || max_len < min_len) {
        fail(ErrorKind::DegenerateSpec, name + ": invalid length range");
    }
    if (!(target_share > 0.0 && target_share <= 1.0)) {
        fail(ErrorKind::DegenerateSpec, name + ": target_share must lie in (0, 1]");
    }
}

Vocabulary standard_vocabulary() {
    Vocabulary v;
    for (const auto& w : noise_words(0, kNoiseWords)) {
        v.add(w);
    }
    for (const auto* group : {&kPositive, &kNegative, &kEntail, &kNeutral, &kContra, &kAnimals, &kVehicles,
                              &kInstructionWords, &kVerbalizers}) {
        for (const auto& w : *group) {
            v.add(w);
        }
    }
    return v;
}

std::vector<std::string> noise_words(int first, int count) {
    std::vector<std::string> out;
    for (int i = first; i < first + count; ++i) {
        char buf[8];
        std::snprintf(buf, sizeof buf, "w%02d", i);
        out.emplace_back(buf);
    }
    return out;
}

SyntheticTaskSpec sentiment_spec(std::uint64_t seed, std::vector<std::string> noise, int min_len, int max_len) {
    SyntheticTaskSpec s;
    s.name = "sentiment";
    s.class_markers = {kPositive, kNegative};
    s.verbalizers = {"great", "terrible"};
    s.noise = std::move(noise);
    s.min_len = min_len;
    s.max_len = max_len;
    s.seed = seed;
    return s;
}

std::pair<SyntheticTaskSpec, SyntheticTaskSpec> sentiment_pair_specs(std::uint64_t seed) {
    auto a = sentiment_spec(derive_seed(seed, "dataset-a"), noise_words(0, 32), 6, 10);
    auto b = sentiment_spec(derive_seed(seed, "dataset-b"), noise_words(20, 32), 8, 12);
    a.name = "sentiment-a";
    b.name = "sentiment-b";
    return {a, b};
}

SyntheticTaskSpec nli_spec(std::uint64_t seed) {
    SyntheticTaskSpec s;
    s.name = "nli";
    s.class_markers = {kEntail, kNeutral, kContra};
    s.verbalizers = {"entailment", "neutral", "contradiction"};
    s.noise = noise_words(0, kNoiseWords);
    s.min_len = 6;
    s.max_len = 12;
    s.seed = seed;
    return s;
}

int label_class(const SyntheticTaskSpec& spec, const Vocabulary& vocab, const TokenSeq& tokens) {
    const auto counts = marker_counts(spec, vocab, tokens);
    int best = 0;
    for (int c = 1; c < static_cast<int>(counts.size()); ++c) {
        if (counts[c] > counts[best]) {
            best = c;
        }
    }
    return best;
}

ExampleSet gen_synthetic(const SyntheticTaskSpec& spec, const Vocabulary& vocab, int n) {
    spec.validate();
    if (n < 1) {
        fail(ErrorKind::InvalidArgument, "n must be >= 1");
    }
    const int k = spec.num_classes();
    std::vector<std::vector<TokenId>> markers(k);
    for (int c = 0; c < k; ++c) {
        for (const auto& w : spec.class_markers[c]) {
            markers[c].push_back(require_word(vocab, w));
        }
    }
    std::vector<TokenId> noise;
    for (const auto& w : spec.noise) {
        noise.push_back(require_word(vocab, w));
    }
    TokenSeq prefix;
    for (const auto& w : spec.prefix) {
        prefix.push_back(require_word(vocab, w));
    }
    std::vector<TokenSeq> labels;
    for (const auto& w : spec.verbalizers) {
        labels.push_back({require_word(vocab, w)});
    }

    Rng rng = make_rng(spec.seed, "gen:" + spec.name);
    std::vector<int> targets(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        targets[i] = i % k;
    }
    std::shuffle(targets.begin(), targets.end(), rng);

    ExampleSet out;
    out.reserve(targets.size());
    for (int target : targets) {
        TokenSeq tokens;
        bool accepted = false;
        for (int attempt = 0; attempt < 10000 && !accepted; ++attempt) {
            const int len = uniform_int(rng, spec.min_len, spec.max_len);
            tokens = prefix;
            bool any_marker = false;
            for (int p = 0; p < len; ++p) {
                if (uniform01(rng) < spec.marker_density) {
                    int c = target;
                    if (k > 1 && uniform01(rng) >= spec.target_share) {
                        c = uniform_int(rng, 0, k - 2);
                        if (c >= target) {
                            ++c;
                        }
                    }
                    tokens.push_back(pick(rng, markers[c]));
                    any_marker = true;
                } else {
                    tokens.push_back(pick(rng, noise));
                }
            }
            if (!any_marker) {
                const auto pos = prefix.size() + static_cast<std::size_t>(uniform_int(rng, 0, len - 1));
                tokens[pos] = pick(rng, markers[target]);
            }
            const auto counts = marker_counts(spec, vocab, tokens);
            const int top = *std::max_element(counts.begin(), counts.end());
            accepted = counts[target] == top && std::count(counts.begin(), counts.end(), top) == 1;
        }
        if (!accepted) {
            fail(ErrorKind::DegenerateSpec, spec.name + ": cannot realise class " + std::to_string(target));
        }
        out.push_back({std::move(tokens), labels[target]});
    }
    return out;
}

double noise_overlap(const SyntheticTaskSpec& a, const SyntheticTaskSpec& b) {
    const std::set<std::string> sa(a.noise.begin(), a.noise.end());
    const std::set<std::string> sb(b.noise.begin(), b.noise.end());
    std::size_t shared = 0;
    for (const auto& w : sa) {
        shared += sb.count(w);
    }
    const auto denom = std::max(sa.size(), sb.size());
    return denom == 0 ? 0.0 : static_cast<double>(shared) / static_cast<double>(denom);
}

std::pair<ExampleSet, ExampleSet> make_dataset_pair(const SyntheticTaskSpec& a, const SyntheticTaskSpec& b,
                                                    const Vocabulary& vocab, int n) {
    if (a.verbalizers != b.verbalizers || a.class_markers != b.class_markers) {
        fail(ErrorKind::IncompatibleLabelSpaces,
             "'" + a.name + "' and '" + b.name + "' differ in verbalizers or class markers");
    }
    return {gen_synthetic(a, vocab, n), gen_synthetic(b, vocab, n)};
}

DatasetSplit gen_split(const SyntheticTaskSpec& spec, const Vocabulary& vocab, int n_train, int n_test) {
    auto test_spec = spec;
    test_spec.seed = derive_seed(spec.seed, "test");
    return {gen_synthetic(spec, vocab, n_train), gen_synthetic(test_spec, vocab, n_test)};
}

ExampleSet gen_lm_corpus(const Vocabulary& vocab, int n, std::uint64_t seed) {
    if (n < 1) {
        fail(ErrorKind::InvalidArgument, "n must be >= 1");
    }
    std::vector<TokenId> words;
    for (TokenId id = kUnkId + 1; id < static_cast<TokenId>(vocab.size()); ++id) {
        const auto& w = vocab.word(id);
        if (std::find(kInstructionWords.begin(), kInstructionWords.end(), w) == kInstructionWords.end()) {
            words.push_back(id);
        }
    }
    Rng chain_rng = make_rng(seed, "lm-chain");
    std::vector<std::array<TokenId, 3>> next(vocab.size());
    for (auto w : words) {
        for (auto& s : next[static_cast<std::size_t>(w)]) {
            s = pick(chain_rng, words);
        }
    }
    Rng rng = make_rng(seed, "lm-sample");
    auto step = [&](TokenId w) {
        const double u = uniform01(rng);
        const auto& succ = next[static_cast<std::size_t>(w)];
        return u < 0.6 ? succ[0] : (u < 0.9 ? succ[1] : succ[2]);
    };
    ExampleSet out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int len = uniform_int(rng, 5, 12);
        TokenSeq run{pick(rng, words)};
        while (static_cast<int>(run.size()) < len + 2) {
            run.push_back(step(run.back()));
        }
        out.push_back({TokenSeq(run.begin(), run.begin() + len), TokenSeq(run.begin() + len, run.end())});
    }
    return out;
}

ModelPairSpec default_model_pair_spec(std::uint64_t seed) {
    ModelPairSpec spec;
    spec.config.vocab_size = static_cast<int>(standard_vocabulary().size());
    spec.seed = seed;
    return spec;
}

std::vector<SyntheticTaskSpec> instruct_mixture_specs(std::uint64_t seed) {
    SyntheticTaskSpec polarity;
    polarity.name = "polarity";
    polarity.class_markers = {kPositive, kNegative};
    polarity.verbalizers = {"good", "bad"};
    polarity.noise = noise_words(0, kNoiseWords);
    polarity.prefix = {"review"};
    polarity.min_len = 6;
    polarity.max_len = 12;
    polarity.seed = derive_seed(seed, "polarity");

    SyntheticTaskSpec topic;
    topic.name = "topic";
    topic.class_markers = {kAnimals, kVehicles};
    topic.verbalizers = {"yes", "no"};
    topic.noise = noise_words(0, kNoiseWords);
    topic.prefix = {"topic"};
    topic.min_len = 6;
    topic.max_len = 12;
    topic.seed = derive_seed(seed, "topic");
    return {polarity, topic};
}

ModelPair build_model_pair(const ModelPairSpec& spec) {
    Vocabulary vocab = standard_vocabulary();
    ModelConfig config = spec.config;
    config.vocab_size = static_cast<int>(vocab.size());
    config.validate();

    auto train = [&](HostModel& model, const ExampleSet& data, int steps, double lr, const char* tag) {
        TrainConfig cfg;
        cfg.learning_rate = lr;
        cfg.batch_tokens = spec.batch_tokens;
        cfg.total_steps = steps;
        cfg.seed = derive_seed(spec.seed, tag);
        try {
            train_host(model, data, cfg);
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::NonFiniteLoss) {
                fail(ErrorKind::TrainingDiverged, std::string(tag) + ": " + e.what());
            }
            throw;
        }
    };

    HostModel raw(config, derive_seed(spec.seed, "raw-init"));
    const auto lm = gen_lm_corpus(vocab, spec.lm_examples, derive_seed(spec.seed, "lm-corpus"));
    train(raw, lm, spec.lm_steps, spec.lm_lr, "lm-train");

    HostModel instruct = raw.clone();
    ExampleSet mixture;
    ExampleSet heldout;
    const auto tasks = instruct_mixture_specs(spec.seed);
    for (const auto& task : tasks) {
        auto split = gen_split(task, vocab, spec.instruct_examples_per_task, spec.heldout_examples);
        mixture.insert(mixture.end(), split.train.begin(), split.train.end());
        if (heldout.empty()) {
            heldout = std::move(split.test);
        }
    }
    const auto replay = gen_lm_corpus(vocab, spec.instruct_examples_per_task, derive_seed(spec.seed, "lm-corpus"));
    mixture.insert(mixture.end(), replay.begin(), replay.end());
    train(instruct, mixture, spec.instruct_steps, spec.instruct_lr, "instruct-train");

    ModelPair pair{std::move(raw), std::move(instruct), std::move(vocab), 0.0, 0.0};
    pair.raw_heldout_accuracy = evaluate(pair.raw, heldout).accuracy;
    pair.instruct_heldout_accuracy = evaluate(pair.instruct, heldout).accuracy;
    if (spec.enforce_criterion && pair.instruct_heldout_accuracy < 0.9) {
        fail(ErrorKind::TrainingDiverged, "instruct analog reached only " +
                                              std::to_string(pair.instruct_heldout_accuracy) +
                                              " held-out accuracy on the polarity task");
    }
    return pair;
}

LabelMap sentiment_label_map() {
    return {{"positive", "great"}, {"negative", "terrible"}, {"1", "great"},
            {"0", "terrible"},     {"great", "great"},       {"terrible", "terrible"}};
}

ExampleSet load_tsv(const std::filesystem::path& path, const Vocabulary& vocab, const LabelMap& labels,
                    std::size_t max_rows) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::MissingArtifact, "cannot open " + path.string());
    }
    ExampleSet out;
    std::string line;
    std::size_t line_no = 0;
    while (out.size() < max_rows && std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
            fail(ErrorKind::MalformedRow, path.string() + ":" + std::to_string(line_no) +
                                              ": expected exactly one tab separating text and label");
        }
        const auto text = line.substr(0, tab);
        const auto raw_label = line.substr(tab + 1);
        auto input = vocab.encode(text);
        if (input.empty()) {
            fail(ErrorKind::MalformedRow, path.string() + ":" + std::to_string(line_no) + ": empty text");
        }
        const auto it = labels.find(raw_label);
        if (it == labels.end() || !vocab.contains(it->second)) {
            fail(ErrorKind::UnknownLabel,
                 path.string() + ":" + std::to_string(line_no) + ": unknown label '" + raw_label + "'");
        }
        out.push_back({std::move(input), {vocab.id(it->second)}});
    }
    return out;
}

void save_tsv(const std::filesystem::path& path, const ExampleSet& data, const Vocabulary& vocab) {
    std::ostringstream ss;
    for (const auto& ex : data) {
        ss << vocab.decode(ex.input) << '\t' << vocab.decode(ex.label) << '\n';
    }
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        fail(ErrorKind::IoError, "cannot write " + path.string());
    }
    out << ss.str();
}

}  // namespace peftport
