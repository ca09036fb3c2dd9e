// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "peftport/errors.h"
#include "peftport/tasks.h"

namespace peftport {
namespace {

namespace fs = std::filesystem;

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorKind::InvalidArgument;
}

fs::path write_fixture(const std::string& name, const std::string& content) {
    const auto dir = fs::path(PEFTPORT_TEST_TMP) / "tasks";
    fs::create_directories(dir);
    const auto path = dir / name;
    std::ofstream(path, std::ios::binary) << content;
    return path;
}

TEST(Vocab, StandardVocabularyCoversTasks) {
    const auto vocab = standard_vocabulary();
    EXPECT_EQ(vocab.word(kPadId), "<pad>");
    EXPECT_EQ(vocab.word(kEosId), "</s>");
    EXPECT_EQ(vocab.word(kUnkId), "<unk>");
    for (const auto* w : {"great", "terrible", "entailment", "neutral", "contradiction", "w00", "w63"}) {
        EXPECT_TRUE(vocab.contains(w)) << w;
    }
    EXPECT_EQ(vocab.decode(vocab.encode("w01 joy great")), "w01 joy great");
    EXPECT_EQ(vocab.encode("zzz"), (TokenSeq{kUnkId}));
}

TEST(GenSynthetic, Deterministic) {
    const auto vocab = standard_vocabulary();
    const auto spec = sentiment_spec(3, noise_words(0, 32));
    EXPECT_EQ(gen_synthetic(spec, vocab, 300), gen_synthetic(spec, vocab, 300));
    auto other = spec;
    other.seed = 4;
    EXPECT_NE(gen_synthetic(spec, vocab, 300), gen_synthetic(other, vocab, 300));
}

TEST(GenSynthetic, BalancedLabels) {
    const auto vocab = standard_vocabulary();
    const auto data = gen_synthetic(sentiment_spec(1, noise_words(0, 32)), vocab, 10000);
    ASSERT_EQ(data.size(), 10000u);
    int great = 0, terrible = 0;
    for (const auto& ex : data) {
        ASSERT_EQ(ex.label.size(), 1u);
        great += ex.label[0] == vocab.id("great");
        terrible += ex.label[0] == vocab.id("terrible");
    }
    EXPECT_EQ(great + terrible, 10000);
    EXPECT_GE(great, 4500);
    EXPECT_LE(great, 5500);
}

TEST(GenSynthetic, LabelsFollowFromInputs) {
    const auto vocab = standard_vocabulary();
    for (const auto& spec : {sentiment_spec(2, noise_words(0, 32)), nli_spec(2), sentiment_pair_specs(2).second}) {
        const auto data = gen_synthetic(spec, vocab, 500);
        for (const auto& ex : data) {
            EXPECT_FALSE(ex.input.empty());
            const int c = label_class(spec, vocab, ex.input);
            EXPECT_EQ(ex.label, (TokenSeq{vocab.id(spec.verbalizers[c])}));
            EXPECT_GE(ex.input.size(), static_cast<std::size_t>(spec.min_len + spec.prefix.size()));
            EXPECT_LE(ex.input.size(), static_cast<std::size_t>(spec.max_len + spec.prefix.size()));
        }
    }
}

TEST(GenSynthetic, FullDensitySingleClass) {
    const auto vocab = standard_vocabulary();
    SyntheticTaskSpec spec;
    spec.name = "one";
    spec.class_markers = {{"joy", "love"}};
    spec.verbalizers = {"great"};
    spec.marker_density = 1.0;
    const auto data = gen_synthetic(spec, vocab, 50);
    for (const auto& ex : data) {
        EXPECT_EQ(ex.label, vocab.encode("great"));
        for (auto t : ex.input) {
            EXPECT_TRUE(t == vocab.id("joy") || t == vocab.id("love"));
        }
    }
}

TEST(GenSynthetic, NliHasThreeBalancedClasses) {
    const auto vocab = standard_vocabulary();
    const auto spec = nli_spec(1);
    EXPECT_EQ(spec.num_classes(), 3);
    const auto data = gen_synthetic(spec, vocab, 300);
    std::map<TokenId, int> counts;
    for (const auto& ex : data) {
        ++counts[ex.label[0]];
    }
    EXPECT_EQ(counts[vocab.id("entailment")], 100);
    EXPECT_EQ(counts[vocab.id("neutral")], 100);
    EXPECT_EQ(counts[vocab.id("contradiction")], 100);
}

TEST(GenSynthetic, Errors) {
    const auto vocab = standard_vocabulary();
    auto spec = sentiment_spec(1, noise_words(0, 32));
    spec.class_markers[1].clear();
    EXPECT_EQ(kind_of([&] { gen_synthetic(spec, vocab, 10); }), ErrorKind::DegenerateSpec);
    spec = sentiment_spec(1, noise_words(0, 32));
    spec.class_markers[1].push_back(spec.class_markers[0][0]);
    EXPECT_EQ(kind_of([&] { gen_synthetic(spec, vocab, 10); }), ErrorKind::DegenerateSpec);
    spec = sentiment_spec(1, noise_words(0, 32));
    spec.marker_density = 0.0;
    EXPECT_EQ(kind_of([&] { gen_synthetic(spec, vocab, 10); }), ErrorKind::DegenerateSpec);
    spec = sentiment_spec(1, noise_words(0, 32));
    EXPECT_EQ(kind_of([&] { gen_synthetic(spec, vocab, 0); }), ErrorKind::InvalidArgument);
}

TEST(LabelClass, MajorityWithLowestIndexTieBreak) {
    const auto vocab = standard_vocabulary();
    const auto spec = sentiment_spec(1, noise_words(0, 32));
    const auto& pos = spec.class_markers[0];
    const auto& neg = spec.class_markers[1];
    EXPECT_EQ(label_class(spec, vocab, vocab.encode(pos[0] + " w01 " + neg[0] + " " + pos[1])), 0);
    EXPECT_EQ(label_class(spec, vocab, vocab.encode(neg[0] + " w01 " + neg[1] + " " + pos[1])), 1);
    EXPECT_EQ(label_class(spec, vocab, vocab.encode(neg[0] + " " + pos[0])), 0);
}

TEST(DatasetPair, DifferentDatasetsShareLabels) {
    const auto vocab = standard_vocabulary();
    const auto [a, b] = sentiment_pair_specs(1);
    EXPECT_EQ(a.verbalizers, b.verbalizers);
    EXPECT_EQ(a.class_markers, b.class_markers);
    EXPECT_LT(noise_overlap(a, b), 0.5);
    EXPECT_NE(a.min_len, b.min_len);
    EXPECT_EQ(noise_overlap(a, a), 1.0);
    const auto [da, db] = make_dataset_pair(a, b, vocab, 100);
    EXPECT_EQ(da.size(), 100u);
    EXPECT_EQ(db.size(), 100u);
    EXPECT_NE(da, db);
    const auto [sa, sb] = make_dataset_pair(a, a, vocab, 50);
    EXPECT_EQ(sa, sb);
    EXPECT_EQ(kind_of([&] { make_dataset_pair(a, nli_spec(1), vocab, 10); }), ErrorKind::IncompatibleLabelSpaces);
}

TEST(GenSplit, TrainAndTestDiffer) {
    const auto vocab = standard_vocabulary();
    const auto split = gen_split(sentiment_spec(1, noise_words(0, 32)), vocab, 100, 40);
    EXPECT_EQ(split.train.size(), 100u);
    EXPECT_EQ(split.test.size(), 40u);
    EXPECT_NE(ExampleSet(split.train.begin(), split.train.begin() + 40), split.test);
}

TEST(LmCorpus, ShapeAndDeterminism) {
    const auto vocab = standard_vocabulary();
    const auto a = gen_lm_corpus(vocab, 200, 1);
    EXPECT_EQ(a, gen_lm_corpus(vocab, 200, 1));
    EXPECT_NE(a, gen_lm_corpus(vocab, 200, 2));
    for (const auto& ex : a) {
        EXPECT_GE(ex.input.size(), 5u);
        EXPECT_LE(ex.input.size(), 12u);
        EXPECT_EQ(ex.label.size(), 2u);
        for (const auto* seq : {&ex.input, &ex.label}) {
            for (auto t : *seq) {
                EXPECT_GT(t, kUnkId);
            }
        }
    }
}

TEST(InstructMixture, AvoidsTargetVerbalizers) {
    const auto target = sentiment_spec(1, noise_words(0, 32));
    const auto mixture = instruct_mixture_specs(1);
    ASSERT_GE(mixture.size(), 1u);
    for (const auto& spec : mixture) {
        for (const auto& v : spec.verbalizers) {
            EXPECT_EQ(std::find(target.verbalizers.begin(), target.verbalizers.end(), v), target.verbalizers.end());
        }
    }
}

TEST(Tsv, TwoRowFixture) {
    const auto vocab = standard_vocabulary();
    const auto path = write_fixture("two.tsv", "joy w01 w02\tpositive\nsad zzz\tnegative\n");
    const auto data = load_tsv(path, vocab, sentiment_label_map());
    ASSERT_EQ(data.size(), 2u);
    EXPECT_EQ(data[0].label, vocab.encode("great"));
    EXPECT_EQ(data[1].label, vocab.encode("terrible"));
    EXPECT_EQ(data[1].input, (TokenSeq{vocab.id("sad"), kUnkId}));
}

TEST(Tsv, Errors) {
    const auto vocab = standard_vocabulary();
    const auto labels = sentiment_label_map();
    const auto tabs = write_fixture("tabs.tsv", "joy\tw01\tw02\tpositive\n");
    EXPECT_EQ(kind_of([&] { load_tsv(tabs, vocab, labels); }), ErrorKind::MalformedRow);
    const auto none = write_fixture("none.tsv", "joy positive\n");
    EXPECT_EQ(kind_of([&] { load_tsv(none, vocab, labels); }), ErrorKind::MalformedRow);
    const auto unknown = write_fixture("unknown.tsv", "joy\tmixed\n");
    EXPECT_EQ(kind_of([&] { load_tsv(unknown, vocab, labels); }), ErrorKind::UnknownLabel);
    EXPECT_EQ(kind_of([&] { load_tsv(fs::path(PEFTPORT_TEST_TMP) / "absent.tsv", vocab, labels); }),
              ErrorKind::MissingArtifact);
}

TEST(Tsv, RoundTripAndRowCap) {
    const auto vocab = standard_vocabulary();
    const auto data = gen_synthetic(sentiment_spec(1, noise_words(0, 32)), vocab, 30);
    const auto path = fs::path(PEFTPORT_TEST_TMP) / "tasks" / "round.tsv";
    save_tsv(path, data, vocab);
    EXPECT_EQ(load_tsv(path, vocab, sentiment_label_map()), data);
    EXPECT_EQ(load_tsv(path, vocab, sentiment_label_map(), 10).size(), 10u);
}

TEST(ModelPair, InstructAnalogMeetsCriterion) {
    const auto spec = default_model_pair_spec(1);
    const auto pair = build_model_pair(spec);
    EXPECT_GE(pair.instruct_heldout_accuracy, 0.9);
    EXPECT_LE(pair.raw_heldout_accuracy, 0.6);
    EXPECT_EQ(pair.raw.config(), pair.instruct.config());
    EXPECT_NE(fingerprint(pair.raw), fingerprint(pair.instruct));
    EXPECT_EQ(pair.vocab, standard_vocabulary());
}

}  // namespace
}  // namespace peftport
