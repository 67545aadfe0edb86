#include <catch2/catch.hpp>

#include <set>

#include "dact/corpus.hpp"
#include "helpers.hpp"

using namespace dact;
using dact::testing::scratch_file;

namespace {

const char* kHeader = "dialog_id\tposition\tspeaker\tlabel\ttext\n";

}  // namespace

TEST_CASE("a minimal corpus file parses fully", "[corpus]") {
    const auto path = scratch_file(
        "mini.tsv", std::string(kHeader) + "sw0001\t0\tA\tsd\tokay so\n");
    const CorpusReadResult result = read_corpus(path);
    REQUIRE(result.segments.size() == 1);
    const Segment& s = result.segments[0];
    REQUIRE(s.dialog_id == "sw0001");
    REQUIRE(s.position == 0);
    REQUIRE(s.speaker == "A");
    REQUIRE(s.label == "sd");
    REQUIRE(s.text == "okay so");
    REQUIRE_FALSE(s.lemmatized_text.has_value());
    REQUIRE(result.labels.size() == 1);
    REQUIRE(result.labels.index_of("sd") == 0);
}

TEST_CASE("the lemmatized column is detected from the header", "[corpus]") {
    const auto path = scratch_file(
        "lemma.tsv",
        "dialog_id\tposition\tspeaker\tlabel\ttext\tlemmatized_text\n"
        "d\t0\tA\tq\trunning fast\trun fast\n");
    const CorpusReadResult result = read_corpus(path);
    REQUIRE(result.has_lemmatized);
    REQUIRE(result.segments[0].lemmatized_text == "run fast");
}

TEST_CASE("corpus validation names the offending line", "[corpus]") {
    SECTION("gap in positions") {
        const auto path = scratch_file(
            "gap.tsv", std::string(kHeader) + "d\t0\tA\tq\thi\nd\t2\tB\tq\tyes\n");
        REQUIRE_THROWS_WITH(read_corpus(path), Catch::Contains("not contiguous"));
    }
    SECTION("duplicate position") {
        const auto path = scratch_file(
            "dup.tsv", std::string(kHeader) + "d\t0\tA\tq\thi\nd\t0\tB\tq\tyes\n");
        REQUIRE_THROWS_WITH(read_corpus(path), Catch::Contains("line 3") &&
                                                   Catch::Contains("duplicate"));
    }
    SECTION("wrong field count") {
        const auto path =
            scratch_file("fields.tsv", std::string(kHeader) + "d\t0\tA\tq\n");
        REQUIRE_THROWS_WITH(read_corpus(path),
                            Catch::Contains("line 2") && Catch::Contains("fields"));
    }
    SECTION("bad position") {
        const auto path =
            scratch_file("pos.tsv", std::string(kHeader) + "d\t-1\tA\tq\thi\n");
        REQUIRE_THROWS_WITH(read_corpus(path), Catch::Contains("line 2"));
    }
    SECTION("bad header") {
        const auto path = scratch_file("hdr.tsv", "dialog\tposition\tspeaker\tlabel\ttext\nx\n");
        REQUIRE_THROWS_WITH(read_corpus(path), Catch::Contains("line 1"));
    }
}

TEST_CASE("empty-text segments are dropped with a warning", "[corpus]") {
    const auto path = scratch_file(
        "empty.tsv",
        std::string(kHeader) + "d\t0\tA\tq\thi\nd\t1\tB\tq\t\nd\t2\tA\tw\tbye\n");
    const CorpusReadResult result = read_corpus(path);
    REQUIRE(result.segments.size() == 2);
    REQUIRE(result.warnings.size() == 1);
    // Surviving positions stay contiguous.
    REQUIRE(result.segments[0].position == 0);
    REQUIRE(result.segments[1].position == 1);
    REQUIRE(result.segments[1].text == "bye");
}

TEST_CASE("the writer rejects fields with embedded separators", "[corpus]") {
    Segment seg;
    seg.dialog_id = "d0";
    seg.speaker = "A";
    seg.label = "q";
    seg.text = "has\ttab";
    REQUIRE_THROWS_AS(write_corpus(testing::scratch_path("tabs.tsv"), {seg}, false), DataError);
    seg.text = "has\nnewline";
    REQUIRE_THROWS_AS(write_corpus(testing::scratch_path("tabs.tsv"), {seg}, false), DataError);
}

TEST_CASE("a 900-dialog synthetic corpus round-trips through write and read", "[corpus]") {
    SeededRng rng(303, SeededRng::kTestData);
    const auto corpus = testing::random_corpus(rng, 900, 1, 8, 6, 1, 20);
    const auto path = testing::scratch_path("roundtrip900.tsv");
    write_corpus(path, corpus, false);
    const CorpusReadResult result = read_corpus(path);
    REQUIRE(result.segments.size() == corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        REQUIRE(result.segments[i].dialog_id == corpus[i].dialog_id);
        REQUIRE(result.segments[i].position == corpus[i].position);
        REQUIRE(result.segments[i].text == corpus[i].text);
    }
}

TEST_CASE("synthetic corpora round-trip through write and read", "[corpus][property]") {
    SeededRng rng(307, SeededRng::kTestData);
    for (int iter = 0; iter < 20; ++iter) {
        const auto corpus = testing::random_corpus(rng, 1 + rng.next_below(9), 1, 6, 4, 1, 12);
        const auto path = testing::scratch_path("roundtrip.tsv");
        write_corpus(path, corpus, false);
        const CorpusReadResult result = read_corpus(path);
        REQUIRE(result.segments.size() == corpus.size());
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            REQUIRE(result.segments[i].dialog_id == corpus[i].dialog_id);
            REQUIRE(result.segments[i].position == corpus[i].position);
            REQUIRE(result.segments[i].speaker == corpus[i].speaker);
            REQUIRE(result.segments[i].label == corpus[i].label);
            REQUIRE(result.segments[i].text == corpus[i].text);
        }
    }
}

TEST_CASE("fixed manifests resolve to a partition", "[corpus]") {
    SeededRng rng(311, SeededRng::kTestData);
    const auto corpus = testing::random_corpus(rng, 10, 2, 5, 3, 1, 8);
    const auto ids = testing::dialog_ids(corpus);
    REQUIRE(ids.size() == 10);

    const auto path = scratch_file(
        "fixed.manifest",
        testing::manifest_text({ids.begin(), ids.begin() + 8}, {ids[8]}, {ids[9]}));
    const SplitManifest manifest = parse_manifest(path);
    REQUIRE(manifest.mode == SplitMode::fixed_splits);

    const ResolvedSplits splits = resolve_splits(corpus, manifest);
    REQUIRE(splits.parts.size() == 1);
    const SplitTriple& t = splits.parts[0];
    REQUIRE(t.train.size() + t.validation.size() + t.test.size() == corpus.size());
}

TEST_CASE("dialogs are never split across folds", "[corpus]") {
    SeededRng rng(313, SeededRng::kTestData);
    const auto corpus = testing::random_corpus(rng, 10, 2, 5, 3, 1, 8);
    const auto ids = testing::dialog_ids(corpus);

    std::string text;
    for (std::size_t f = 0; f < 5; ++f) {
        text += "[fold" + std::to_string(f + 1) + "]\n";
        text += ids[2 * f] + "\n" + ids[2 * f + 1] + "\n";
    }
    const SplitManifest manifest = parse_manifest(scratch_file("folds.manifest", text));
    REQUIRE(manifest.mode == SplitMode::k_fold);
    const ResolvedSplits splits = resolve_splits(corpus, manifest);
    REQUIRE(splits.parts.size() == 5);

    std::map<std::string, int> test_appearances;
    std::size_t total_test = 0;
    for (const SplitTriple& part : splits.parts) {
        std::set<std::string> train_ids, val_ids, test_ids;
        for (const Segment& s : part.train) train_ids.insert(s.dialog_id);
        for (const Segment& s : part.validation) val_ids.insert(s.dialog_id);
        for (const Segment& s : part.test) test_ids.insert(s.dialog_id);
        for (const auto& id : test_ids) ++test_appearances[id];
        total_test += part.test.size();
        for (const auto& id : train_ids) {
            REQUIRE(val_ids.count(id) == 0);
            REQUIRE(test_ids.count(id) == 0);
        }
        // Validation is carved from the fold's training dialogs.
        REQUIRE(!val_ids.empty());
        REQUIRE(part.train.size() + part.validation.size() + part.test.size() == corpus.size());
    }
    // Each dialog is tested exactly once; the fold test sets tile the corpus.
    REQUIRE(test_appearances.size() == 10);
    for (const auto& [id, count] : test_appearances) REQUIRE(count == 1);
    REQUIRE(total_test == corpus.size());
}

TEST_CASE("manifest validation rejects inconsistencies", "[corpus]") {
    SECTION("mixed sections") {
        const auto path = scratch_file("mixed.manifest", "[train]\nd0\n[fold1]\nd1\n");
        REQUIRE_THROWS_AS(parse_manifest(path), DataError);
    }
    SECTION("duplicate dialog across splits") {
        const auto path =
            scratch_file("dupid.manifest", "[train]\nd0\n[validation]\nd0\n[test]\nd1\n");
        REQUIRE_THROWS_AS(parse_manifest(path), DataError);
    }
    SECTION("single fold") {
        const auto path = scratch_file("onefold.manifest", "[fold1]\nd0\n");
        REQUIRE_THROWS_AS(parse_manifest(path), DataError);
    }
    SECTION("unknown dialog id at resolve time") {
        SeededRng rng(317, SeededRng::kTestData);
        const auto corpus = testing::random_corpus(rng, 3, 1, 3, 2, 1, 5);
        const auto path = scratch_file(
            "unknown.manifest", "[train]\nd000\n[validation]\nd001\n[test]\nnope\n");
        REQUIRE_THROWS_WITH(resolve_splits(corpus, parse_manifest(path)),
                            Catch::Contains("nope"));
    }
}

TEST_CASE("embedding files load with header auto-detection", "[corpus]") {
    std::vector<Segment> train(1);
    train[0].text = "cat dog";
    train[0].label = "L";
    PreprocessingFlags flags;
    const Vocabulary vocab = build_vocabulary(train, VocabKind::word, flags, 1);
    REQUIRE(vocab.size() == 4);

    SECTION("with count-dim header") {
        const auto path = scratch_file("emb1.txt", "2 2\ncat 1 0\ndog 0 1\n");
        const EmbeddingTable table = load_embeddings(path, vocab, 1);
        REQUIRE(table.dim == 2);
        REQUIRE(table.found == 2);
        REQUIRE(table.missing_fraction == 0.0);
        const std::size_t cat = static_cast<std::size_t>(vocab.lookup("cat"));
        REQUIRE(table.table(cat, 0) == 1.0);
        REQUIRE(table.table(cat, 1) == 0.0);
    }
    SECTION("without header") {
        const auto path = scratch_file("emb2.txt", "cat 1 0\ndog 0 1\n");
        const EmbeddingTable table = load_embeddings(path, vocab, 1);
        REQUIRE(table.found == 2);
        REQUIRE(table.dim == 2);
    }
    SECTION("missing tokens draw from the seeded uniform range") {
        const auto path = scratch_file("emb3.txt", "cat 1 0\n");
        const EmbeddingTable a = load_embeddings(path, vocab, 7);
        const EmbeddingTable b = load_embeddings(path, vocab, 7);
        REQUIRE(a.table == b.table);  // same file + vocab + seed => identical
        const EmbeddingTable c = load_embeddings(path, vocab, 8);
        REQUIRE_FALSE(a.table == c.table);
        const std::size_t dog = static_cast<std::size_t>(vocab.lookup("dog"));
        REQUIRE(std::fabs(a.table(dog, 0)) <= 0.05);
        REQUIRE(a.missing_fraction == Approx(0.5));
    }
    SECTION("pad row is all zeros") {
        const auto path = scratch_file("emb4.txt", "cat 1 0\ndog 0 1\n");
        const EmbeddingTable table = load_embeddings(path, vocab, 1);
        REQUIRE(table.table(Vocabulary::pad_index, 0) == 0.0);
        REQUIRE(table.table(Vocabulary::pad_index, 1) == 0.0);
    }
    SECTION("inconsistent dimensionality is an error") {
        const auto path = scratch_file("emb5.txt", "cat 1 0\ndog 0 1 2\n");
        REQUIRE_THROWS_WITH(parse_embedding_file(path), Catch::Contains("line 2"));
    }
}

TEST_CASE("context features follow the one-hot layout", "[corpus]") {
    std::vector<Segment> dialog(3);
    dialog[0] = {"d", 0, "s1", "A", "hi", std::nullopt};
    dialog[1] = {"d", 1, "s2", "B", "yes", std::nullopt};
    dialog[2] = {"d", 2, "s2", "C", "bye", std::nullopt};
    std::vector<const Segment*> ptrs{&dialog[0], &dialog[1], &dialog[2]};
    const LabelSet labels(std::set<std::string>{"A", "B", "C", "D"});

    SECTION("first segment has an all-zero vector") {
        const Tensor f = context_vector(ptrs, 0, {}, 4, 3);
        REQUIRE(f.size() == 13);
        for (double v : f.data()) REQUIRE(v == 0.0);
    }
    SECTION("blocks are nearest-first with padding zeros and flag from speakers") {
        const std::vector<int> gold{labels.index_of("A"), labels.index_of("B")};
        const Tensor f = context_vector(ptrs, 2, gold, 4, 3);
        REQUIRE(f.size() == 13);
        REQUIRE(f(static_cast<std::size_t>(labels.index_of("B"))) == 1.0);          // block 0: p-1
        REQUIRE(f(4 + static_cast<std::size_t>(labels.index_of("A"))) == 1.0);      // block 1: p-2
        for (std::size_t i = 8; i < 12; ++i) REQUIRE(f(i) == 0.0);                  // block 2: absent
        REQUIRE(f(12) == 0.0);  // same speaker as previous
    }
    SECTION("speaker change raises the flag") {
        const std::vector<int> gold{labels.index_of("A")};
        const Tensor f = context_vector(ptrs, 1, gold, 4, 3);
        REQUIRE(f(12) == 1.0);
    }
    SECTION("missing predictions for earlier positions error out") {
        REQUIRE_THROWS_AS(context_vector(ptrs, 2, {0}, 4, 3), ConfigError);
    }
}

TEST_CASE("gold context equals predicted context when predictions are gold",
          "[corpus][property]") {
    SeededRng rng(331, SeededRng::kTestData);
    for (int iter = 0; iter < 30; ++iter) {
        const auto corpus = testing::random_corpus(rng, 1, 3, 10, 4, 1, 6);
        std::vector<const Segment*> dialog;
        for (const Segment& s : corpus) dialog.push_back(&s);
        const LabelSet labels(std::set<std::string>{"L0", "L1", "L2", "L3"});
        std::vector<int> gold;
        for (const Segment& s : corpus) gold.push_back(labels.index_of(s.label));

        const auto from_gold = extract_context(dialog, labels, 3);
        for (std::size_t p = 0; p < dialog.size(); ++p) {
            const Tensor from_predictions = context_vector(dialog, p, gold, labels.size(), 3);
            REQUIRE(from_gold[p] == from_predictions);
        }
    }
}

TEST_CASE("context is causal and local", "[corpus][property]") {
    SeededRng rng(337, SeededRng::kTestData);
    const std::size_t n_prev = 2;
    for (int iter = 0; iter < 30; ++iter) {
        const auto corpus = testing::random_corpus(rng, 1, 6, 10, 4, 1, 6);
        std::vector<const Segment*> dialog;
        for (const Segment& s : corpus) dialog.push_back(&s);
        const LabelSet labels(std::set<std::string>{"L0", "L1", "L2", "L3"});
        std::vector<int> gold;
        for (const Segment& s : corpus) gold.push_back(labels.index_of(s.label));

        const std::size_t p = 2 + rng.next_below(dialog.size() - 2);
        const Tensor before = context_vector(dialog, p, gold, labels.size(), n_prev);

        // Causality: labels at positions >= p are never read.
        auto mutated = gold;
        for (std::size_t i = p; i < mutated.size(); ++i) {
            mutated[i] = static_cast<int>(rng.next_below(labels.size()));
        }
        REQUIRE(context_vector(dialog, p, mutated, labels.size(), n_prev) == before);

        // Locality: labels earlier than p - n_prev are never read either.
        if (p > n_prev) {
            auto early = gold;
            for (std::size_t i = 0; i + n_prev < p; ++i) {
                early[i] = static_cast<int>(rng.next_below(labels.size()));
            }
            REQUIRE(context_vector(dialog, p, early, labels.size(), n_prev) == before);
        }
    }
}
