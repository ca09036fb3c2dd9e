// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic desk-scale tasks and the raw / instruction-tuned host analogs.
//
// Every synthetic classification task is a marker-majority task: each class
// owns a disjoint set of marker words, the remaining positions hold noise
// words, and the label is the class with the most markers in the input
// (ties go to the lowest class index). Labels are single verbalizer words.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "peftport/host_model.h"
#include "peftport/train.h"
#include "peftport/vocab.h"

namespace peftport {

struct SyntheticTaskSpec {
    std::string name;
    std::vector<std::vector<std::string>> class_markers;
    std::vector<std::string> verbalizers;
    std::vector<std::string> noise;
    // Leading instruction words, empty for prompt-only tasks.
    std::vector<std::string> prefix;
    int min_len = 6;
    int max_len = 10;
    double marker_density = 0.35;
    // Probability that a marker position draws from the example's target class.
    double target_share = 0.75;
    std::uint64_t seed = 0;

    int num_classes() const { return static_cast<int>(class_markers.size()); }
    // Throws DegenerateSpec.
    void validate() const;
};

// The shared closed vocabulary of all synthetic tasks and corpora.
Vocabulary standard_vocabulary();

std::vector<std::string> noise_words(int first, int count);

// Sentiment analog: verbalizers "great" / "terrible".
SyntheticTaskSpec sentiment_spec(std::uint64_t seed, std::vector<std::string> noise, int min_len = 6,
                                 int max_len = 10);
// The two sentiment datasets of the different-dataset condition. Their noise
// vocabularies overlap by less than half and their lengths differ.
std::pair<SyntheticTaskSpec, SyntheticTaskSpec> sentiment_pair_specs(std::uint64_t seed);
// NLI analog: verbalizers "entailment" / "neutral" / "contradiction".
SyntheticTaskSpec nli_spec(std::uint64_t seed);

// Class index of `tokens` under the majority rule.
int label_class(const SyntheticTaskSpec& spec, const Vocabulary& vocab, const TokenSeq& tokens);

// n examples with balanced classes (counts differ by at most one). Throws
// DegenerateSpec and InvalidArgument (n < 1).
ExampleSet gen_synthetic(const SyntheticTaskSpec& spec, const Vocabulary& vocab, int n);

// Throws IncompatibleLabelSpaces unless both specs share verbalizers and
// class markers.
std::pair<ExampleSet, ExampleSet> make_dataset_pair(const SyntheticTaskSpec& a, const SyntheticTaskSpec& b,
                                                    const Vocabulary& vocab, int n);

double noise_overlap(const SyntheticTaskSpec& a, const SyntheticTaskSpec& b);

struct DatasetSplit {
    ExampleSet train;
    ExampleSet test;
};

DatasetSplit gen_split(const SyntheticTaskSpec& spec, const Vocabulary& vocab, int n_train, int n_test);

// Next-token corpus over a seeded bigram Markov chain: the input is a run of
// the chain and the label is its two-token continuation.
ExampleSet gen_lm_corpus(const Vocabulary& vocab, int n, std::uint64_t seed);

struct ModelPairSpec {
    ModelConfig config;
    int lm_examples = 6000;
    int lm_steps = 1500;
    double lm_lr = 2e-3;
    int instruct_examples_per_task = 3000;
    int instruct_steps = 600;
    double instruct_lr = 1e-3;
    int batch_tokens = 256;
    int heldout_examples = 200;
    // Throw TrainingDiverged when the instruct analog misses 0.9 held-out accuracy.
    bool enforce_criterion = true;
    std::uint64_t seed = 0;
};

ModelPairSpec default_model_pair_spec(std::uint64_t seed);

// Supervised tasks of the instruction-tuning mixture. None uses the target
// task's verbalizers; the first is the polarity task.
std::vector<SyntheticTaskSpec> instruct_mixture_specs(std::uint64_t seed);

struct ModelPair {
    HostModel raw;
    HostModel instruct;
    Vocabulary vocab;
    double raw_heldout_accuracy = 0.0;
    double instruct_heldout_accuracy = 0.0;
};

// Raw analog: next-token LM only. Instruct analog: the raw analog further
// trained on the supervised mixture (with LM replay). Throws TrainingDiverged.
ModelPair build_model_pair(const ModelPairSpec& spec);

using LabelMap = std::map<std::string, std::string>;

// positive/negative, 1/0 and the verbalizers themselves.
LabelMap sentiment_label_map();

// Rows are "text<TAB>label". Unknown words map to the unk token. At most
// `max_rows` rows are read. Throws MalformedRow, UnknownLabel, MissingArtifact.
ExampleSet load_tsv(const std::filesystem::path& path, const Vocabulary& vocab, const LabelMap& labels,
                    std::size_t max_rows = 2000);
void save_tsv(const std::filesystem::path& path, const ExampleSet& data, const Vocabulary& vocab);

}  // namespace peftport
