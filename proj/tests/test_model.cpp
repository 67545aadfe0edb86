#include <catch2/catch.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "dact/model.hpp"
#include "helpers.hpp"

using namespace dact;

namespace {

struct Fixture {
    std::vector<Segment> corpus;
    LabelSet labels;
    Vocabulary char_vocab;
    Vocabulary word_vocab;
    EncodingSpec encoding;
    PreprocessingFlags flags;

    explicit Fixture(std::size_t n_labels = 3, std::size_t pad_char = 20,
                     std::size_t pad_word = 8) {
        SeededRng rng(401, SeededRng::kTestData);
        corpus = testing::random_corpus(rng, 6, 2, 5, n_labels, 2, 12);
        labels = LabelSet::from_segments(corpus);
        flags.keep_punctuation = true;
        char_vocab = build_vocabulary(corpus, VocabKind::character, flags, 1);
        word_vocab = build_vocabulary(corpus, VocabKind::word, flags, 1);
        encoding.flags = flags;
        encoding.pad_to_char = pad_char;
        encoding.pad_to_word = pad_word;
    }

    EncodedSegment encode_one(const Segment& seg) const {
        auto enc = encode(seg, &char_vocab, &word_vocab, flags, encoding.pad_to_char,
                          encoding.pad_to_word, labels);
        REQUIRE(enc.has_value());
        return *enc;
    }

    ModelConfig dual_config() const {
        ModelConfig config = testing::small_char_config({2, 3}, 4, 6, 8);
        BranchConfig word;
        word.kind = VocabKind::word;
        word.window_sizes = {1, 2};
        word.filters_per_window = 3;
        word.embedding_dim = 5;
        word.embedding_mode = EmbeddingMode::random_trainable;
        config.branches.push_back(word);
        return config;
    }
};

}  // namespace

TEST_CASE("reduction input dimension follows the architecture arithmetic", "[model]") {
    SECTION("char-only, windows (3,5,7), 100 filters, no context") {
        std::set<std::string> label_names;
        for (int i = 0; i < 5; ++i) label_names.insert("L" + std::to_string(i));
        const LabelSet labels(label_names);
        Fixture fx;
        ModelConfig config = testing::small_char_config({3, 5, 7}, 100, 8, 16);
        const Model model = Model::build(config, fx.encoding, &fx.char_vocab, nullptr, fx.labels);
        REQUIRE(model.reduction_input_dim() == 300);
    }
    SECTION("dual branch with context and C=42") {
        std::vector<Segment> corpus;
        SeededRng rng(403, SeededRng::kTestData);
        corpus = testing::random_corpus(rng, 4, 2, 4, 42, 2, 10);
        // random_corpus may not hit all 42 labels; force the label set.
        std::set<std::string> label_names;
        for (int i = 0; i < 42; ++i) label_names.insert("L" + std::to_string(i));
        const LabelSet labels(label_names);

        PreprocessingFlags flags;
        const Vocabulary cv = build_vocabulary(corpus, VocabKind::character, flags, 1);
        const Vocabulary wv = build_vocabulary(corpus, VocabKind::word, flags, 1);
        EncodingSpec encoding;
        encoding.flags = flags;
        encoding.pad_to_char = 20;
        encoding.pad_to_word = 8;

        ModelConfig config;
        BranchConfig cb;
        cb.kind = VocabKind::character;
        cb.window_sizes = {3, 5, 7};
        cb.filters_per_window = 100;
        cb.embedding_dim = 30;
        BranchConfig wb;
        wb.kind = VocabKind::word;
        wb.window_sizes = {1, 2, 3};
        wb.filters_per_window = 100;
        wb.embedding_dim = 20;
        config.branches = {cb, wb};
        config.use_context = true;
        config.n_prev = 3;

        const Model model = Model::build(config, encoding, &cv, &wv, labels);
        REQUIRE(model.context_dim() == 42 * 3 + 1);
        REQUIRE(model.reduction_input_dim() == 600 + 127);
    }
}

TEST_CASE("building twice with one seed gives bit-identical parameters", "[model]") {
    Fixture fx;
    ModelConfig config = fx.dual_config();
    config.seed = 77;
    Model a = Model::build(config, fx.encoding, &fx.char_vocab, &fx.word_vocab, fx.labels);
    Model b = Model::build(config, fx.encoding, &fx.char_vocab, &fx.word_vocab, fx.labels);
    const auto pa = a.parameters();
    const auto pb = b.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i]->name == pb[i]->name);
        REQUIRE(pa[i]->value == pb[i]->value);
    }

    config.seed = 78;
    Model c = Model::build(config, fx.encoding, &fx.char_vocab, &fx.word_vocab, fx.labels);
    bool any_different = false;
    const auto pc = c.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (!(pa[i]->value == pc[i]->value)) any_different = true;
    }
    REQUIRE(any_different);
}

TEST_CASE("configuration mistakes are fatal at build time", "[model]") {
    Fixture fx;
    SECTION("two branches of the same kind") {
        ModelConfig config = testing::small_char_config({2});
        config.branches.push_back(config.branches[0]);
        REQUIRE_THROWS_AS(
            Model::build(config, fx.encoding, &fx.char_vocab, &fx.word_vocab, fx.labels),
            ConfigError);
    }
    SECTION("non-increasing windows") {
        ModelConfig config = testing::small_char_config({3, 3});
        REQUIRE_THROWS_AS(Model::build(config, fx.encoding, &fx.char_vocab, nullptr, fx.labels),
                          ConfigError);
    }
    SECTION("missing vocabulary") {
        ModelConfig config = testing::small_char_config({2});
        REQUIRE_THROWS_AS(Model::build(config, fx.encoding, nullptr, nullptr, fx.labels),
                          ConfigError);
    }
    SECTION("pretrained mode without a table") {
        ModelConfig config = fx.dual_config();
        config.branches[1].embedding_mode = EmbeddingMode::pretrained_fixed;
        REQUIRE_THROWS_AS(
            Model::build(config, fx.encoding, &fx.char_vocab, &fx.word_vocab, fx.labels),
            ConfigError);
    }
    SECTION("pretrained table on the character branch") {
        ModelConfig config = testing::small_char_config({2});
        config.branches[0].embedding_mode = EmbeddingMode::pretrained_fixed;
        Tensor table({fx.char_vocab.size(), 8});
        REQUIRE_THROWS_AS(
            Model::build(config, fx.encoding, &fx.char_vocab, nullptr, fx.labels, &table),
            ConfigError);
    }
}

TEST_CASE("forward output is a probability distribution", "[model]") {
    Fixture fx;
    const Model model =
        Model::build(fx.dual_config(), fx.encoding, &fx.char_vocab, &fx.word_vocab, fx.labels);
    for (const Segment& seg : fx.corpus) {
        const Tensor probs = model.forward(fx.encode_one(seg));
        REQUIRE(probs.size() == fx.labels.size());
        double sum = 0.0;
        for (double p : probs.data()) {
            REQUIRE(p >= 0.0);
            sum += p;
        }
        REQUIRE(std::fabs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("zeroed text path makes the output input-independent", "[model]") {
    Fixture fx;
    Model model =
        Model::build(fx.dual_config(), fx.encoding, &fx.char_vocab, &fx.word_vocab, fx.labels);
    for (Parameter* p : model.parameters()) {
        if (p->name.rfind("char.", 0) == 0 || p->name.rfind("word.", 0) == 0) {
            p->value.fill(0.0);
        }
    }
    const Tensor first = model.forward(fx.encode_one(fx.corpus[0]));
    for (const Segment& seg : fx.corpus) {
        REQUIRE(model.forward(fx.encode_one(seg)) == first);
    }
}

TEST_CASE("pad length never changes the forward output", "[model][property]") {
    Fixture fx20(3, 20, 8);
    Fixture fx50(3, 50, 17);
    const ModelConfig config = fx20.dual_config();
    const Model m20 =
        Model::build(config, fx20.encoding, &fx20.char_vocab, &fx20.word_vocab, fx20.labels);
    const Model m50 =
        Model::build(config, fx50.encoding, &fx50.char_vocab, &fx50.word_vocab, fx50.labels);

    for (const Segment& seg : fx20.corpus) {
        const Tensor a = m20.forward(fx20.encode_one(seg));
        const Tensor b = m50.forward(fx50.encode_one(seg));
        for (std::size_t i = 0; i < a.size(); ++i) {
            REQUIRE(std::fabs(a[i] - b[i]) < 1e-12);
        }
    }
}

TEST_CASE("predict is the argmax with low-index tie-breaking", "[model]") {
    Fixture fx;
    const Model model =
        Model::build(fx.dual_config(), fx.encoding, &fx.char_vocab, &fx.word_vocab, fx.labels);
    for (const Segment& seg : fx.corpus) {
        const EncodedSegment enc = fx.encode_one(seg);
        REQUIRE(model.predict(enc) == argmax_lowest(model.forward(enc)));
    }
}

TEST_CASE("argmax is invariant under strictly monotone transforms", "[model][property]") {
    SeededRng rng(419, SeededRng::kTestData);
    for (int iter = 0; iter < 100; ++iter) {
        Tensor probs({5});
        for (double& v : probs.data()) v = rng.next_double();
        Tensor cubed = probs;
        for (double& v : cubed.data()) v = v * v * v;           // strictly monotone on [0,1)
        Tensor scaled = probs;
        for (double& v : scaled.data()) v = 3.0 * v + 2.0;
        REQUIRE(argmax_lowest(probs) == argmax_lowest(cubed));
        REQUIRE(argmax_lowest(probs) == argmax_lowest(scaled));
    }
}

TEST_CASE("loss matches ln C on a uniform model and batch duplication is a no-op", "[model]") {
    Fixture fx;
    Model model =
        Model::build(fx.dual_config(), fx.encoding, &fx.char_vocab, &fx.word_vocab, fx.labels);
    // Zero output layer: logits all zero, so the distribution is uniform.
    for (Parameter* p : model.parameters()) {
        if (p->name.rfind("output.", 0) == 0) p->value.fill(0.0);
    }
    const EncodedSegment enc = fx.encode_one(fx.corpus[0]);
    const double single = model.loss_and_backward({TrainItem{&enc, nullptr}});
    REQUIRE(single == Approx(std::log(static_cast<double>(fx.labels.size()))).epsilon(1e-12));

    for (Parameter* p : model.parameters()) p->zero_grad();
    const double duplicated =
        model.loss_and_backward({TrainItem{&enc, nullptr}, TrainItem{&enc, nullptr}});
    REQUIRE(duplicated == Approx(single).epsilon(1e-12));
}

TEST_CASE("unused context vectors are never read", "[model]") {
    Fixture fx;
    ModelConfig config = fx.dual_config();
    config.use_context = false;
    const Model model =
        Model::build(config, fx.encoding, &fx.char_vocab, &fx.word_vocab, fx.labels);
    const EncodedSegment enc = fx.encode_one(fx.corpus[0]);
    Tensor ctx1({7});
    ctx1.fill(1.0);
    Tensor ctx2({7});
    ctx2.fill(-3.0);
    REQUIRE(model.forward(enc, &ctx1) == model.forward(enc, &ctx2));
}

TEST_CASE("context-sensitive models validate and read the context vector", "[model]") {
    Fixture fx;
    ModelConfig config = fx.dual_config();
    config.use_context = true;
    config.n_prev = 2;
    const Model model =
        Model::build(config, fx.encoding, &fx.char_vocab, &fx.word_vocab, fx.labels);
    const EncodedSegment enc = fx.encode_one(fx.corpus[0]);
    REQUIRE_THROWS_AS(model.forward(enc), ConfigError);
    REQUIRE_THROWS_AS(model.forward(enc, nullptr), ConfigError);
    Tensor wrong({3});
    REQUIRE_THROWS_AS(model.forward(enc, &wrong), ConfigError);

    Tensor ctx({model.context_dim()});
    const Tensor a = model.forward(enc, &ctx);
    ctx(0) = 1.0;
    const Tensor b = model.forward(enc, &ctx);
    REQUIRE_FALSE(a == b);
}

TEST_CASE("permuting valid rows leaves the pooled vector unchanged", "[model][property]") {
    SeededRng rng(431, SeededRng::kTestData);
    for (int iter = 0; iter < 50; ++iter) {
        const std::size_t rows = 4 + rng.next_below(8);
        const std::size_t valid = 1 + rng.next_below(rows);
        Tensor input({rows, 5});
        init_uniform(input, -2.0, 2.0, rng);

        std::vector<std::size_t> perm(valid);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(perm);
        Tensor permuted = input;
        for (std::size_t t = 0; t < valid; ++t) {
            for (std::size_t f = 0; f < 5; ++f) permuted(t, f) = input(perm[t], f);
        }
        REQUIRE(max_over_time(input, valid).pooled == max_over_time(permuted, valid).pooled);
    }
}

TEST_CASE("checkpoints round-trip bit-exactly", "[model]") {
    Fixture fx;
    ModelConfig config = fx.dual_config();
    config.use_context = true;
    config.seed = 13;
    Model model =
        Model::build(config, fx.encoding, &fx.char_vocab, &fx.word_vocab, fx.labels);

    const auto path = testing::scratch_path("model.ckpt");
    model.save(path);
    const Model loaded = Model::load(path);

    REQUIRE(loaded.config().use_context == config.use_context);
    REQUIRE(loaded.config().seed == config.seed);
    REQUIRE(loaded.config().branches.size() == 2);
    REQUIRE(loaded.encoding().pad_to_char == fx.encoding.pad_to_char);
    REQUIRE(loaded.labels().labels() == fx.labels.labels());
    REQUIRE(loaded.char_vocab().tokens() == fx.char_vocab.tokens());
    REQUIRE(loaded.word_vocab().tokens() == fx.word_vocab.tokens());

    Tensor ctx({model.context_dim()});
    ctx(1) = 1.0;
    for (const Segment& seg : fx.corpus) {
        const EncodedSegment enc = fx.encode_one(seg);
        const Tensor a = model.forward(enc, &ctx);
        const Tensor b = loaded.forward(enc, &ctx);
        REQUIRE(a == b);
    }
}

TEST_CASE("corrupt checkpoints are rejected", "[model]") {
    SECTION("wrong magic") {
        const auto path = testing::scratch_file("bad.ckpt", "not a checkpoint at all");
        REQUIRE_THROWS_AS(Model::load(path), DataError);
    }
    SECTION("truncated file") {
        Fixture fx;
        Model model = Model::build(fx.dual_config(), fx.encoding, &fx.char_vocab,
                                   &fx.word_vocab, fx.labels);
        const auto path = testing::scratch_path("trunc.ckpt");
        model.save(path);
        std::ifstream in(path, std::ios::binary);
        std::ostringstream buf;
        buf << in.rdbuf();
        const std::string bytes = buf.str();
        for (double fraction : {0.1, 0.5, 0.9}) {
            const auto cut = testing::scratch_file(
                "trunc2.ckpt", bytes.substr(0, static_cast<std::size_t>(bytes.size() * fraction)));
            REQUIRE_THROWS_AS(Model::load(cut), DataError);
        }
    }
}

TEST_CASE("frozen pretrained tables stay frozen through a checkpoint", "[model]") {
    Fixture fx;
    ModelConfig config = fx.dual_config();
    config.branches[1].embedding_mode = EmbeddingMode::pretrained_fixed;
    config.branches[1].embedding_file = "vectors.txt";
    Tensor table({fx.word_vocab.size(), config.branches[1].embedding_dim});
    SeededRng rng(433, SeededRng::kTestData);
    init_uniform(table, -0.5, 0.5, rng);
    for (std::size_t k = 0; k < table.dim(1); ++k) table(Vocabulary::pad_index, k) = 0.0;

    Model model =
        Model::build(config, fx.encoding, &fx.char_vocab, &fx.word_vocab, fx.labels, &table);
    const auto path = testing::scratch_path("frozen.ckpt");
    model.save(path);
    Model loaded = Model::load(path);
    for (Parameter* p : loaded.parameters()) {
        if (p->name == "word.embedding") {
            REQUIRE_FALSE(p->trainable);
            REQUIRE(p->value == table);
        }
    }
}
