// Model assembly: single-branch (character or word) and dual-branch
// architectures built from the layer set, plus binary checkpointing.
//
// Forward path per branch: embed -> parallel temporal convolutions (one per
// window size, "same" padding) -> masked max-over-time pooling -> concatenate
// pooled vectors across branches -> append context features -> reduction
// dense (relu) -> output dense (softmax).
//
// Checkpoint layout (all integers and IEEE-754 doubles little-endian):
//   magic "DACTCKP1", u32 version = 1
//   u8 branch_count; per branch:
//     u8 kind (0 char, 1 word); u32 n_windows; u64 windows[];
//     u64 filters; u64 embedding_dim; u8 embedding_mode (0 random_trainable,
//     1 pretrained_fixed, 2 pretrained_trainable); u64 path_len + bytes
//   u8 use_context; u64 n_prev; u64 reduction_dim; u64 label_count; u64 seed;
//   f64 dropout; f64 learning_rate; u64 batch_size; u64 max_epochs;
//   u64 patience; u8 optimizer (0 adam, 1 sgd); f64 beta1; f64 beta2; f64 epsilon
//   u8 keep_capitalization; u8 keep_punctuation; u8 use_lemmatized_text;
//   u64 pad_to_char; u64 pad_to_word
//   u64 label_count; per label: u64 len + bytes
//   u8 vocab_count; per vocab: u8 kind; u64 token_count; per token: u64 len + bytes
//   u64 param_count; per param: u64 name_len + bytes; u8 trainable;
//     u8 rank; u64 dims[]; f64 data[]

#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dact/corpus.hpp"
#include "dact/layers.hpp"
#include "dact/optimizer.hpp"
#include "dact/segment.hpp"
#include "dact/tensor.hpp"
#include "dact/textprep.hpp"

namespace dact {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

enum class EmbeddingMode { random_trainable, pretrained_fixed, pretrained_trainable };

struct BranchConfig {
    VocabKind kind = VocabKind::character;
    std::vector<std::size_t> window_sizes;
    std::size_t filters_per_window = 100;
    std::size_t embedding_dim = 30;
    EmbeddingMode embedding_mode = EmbeddingMode::random_trainable;
    std::string embedding_file;  // required for pretrained modes
};

struct TrainingConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 64;
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    UpdateRule optimizer = UpdateRule::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    OptimizerConfig optimizer_config() const {
        return OptimizerConfig{optimizer, learning_rate, beta1, beta2, epsilon};
    }
};

struct ModelConfig {
    std::vector<BranchConfig> branches;
    bool use_context = false;
    std::size_t n_prev = 3;
    std::size_t reduction_dim = 100;
    std::size_t label_count = 0;  // normally derived from the corpus label set
    std::uint64_t seed = 1;
    double dropout = 0.0;
    TrainingConfig training;
};

/// How segments are turned into index sequences for this model.
struct EncodingSpec {
    PreprocessingFlags flags;
    std::size_t pad_to_char = 0;  // 0 when the branch kind is unused
    std::size_t pad_to_word = 0;
};

struct TrainItem {
    const EncodedSegment* encoded = nullptr;
    const Tensor* context = nullptr;  // read only when use_context
};

class Model {
public:
    Model() = default;

    /// Builds the architecture and initializes parameters from config.seed.
    /// Draw order is fixed: per branch (config order) the embedding table,
    /// then each convolution by ascending window; then the reduction and
    /// output dense layers. Pretrained word tables come in pre-assembled.
    static Model build(const ModelConfig& config, const EncodingSpec& encoding,
                       const Vocabulary* char_vocab, const Vocabulary* word_vocab,
                       const LabelSet& labels, const Tensor* pretrained_word = nullptr) {
        validate_config(config, labels);
        Model m;
        m.config_ = config;
        m.config_.label_count = labels.size();
        m.encoding_ = encoding;
        m.labels_ = labels;
        if (char_vocab) m.char_vocab_ = *char_vocab;
        if (word_vocab) m.word_vocab_ = *word_vocab;

        SeededRng rng(config.seed, SeededRng::kInit);
        for (const BranchConfig& bc : m.config_.branches) {
            const bool is_char = bc.kind == VocabKind::character;
            const std::string prefix = is_char ? "char" : "word";
            const Vocabulary* vocab = is_char ? char_vocab : word_vocab;
            if (!vocab) {
                throw ConfigError("model build: missing " + prefix + " vocabulary");
            }
            if (is_char && (encoding.pad_to_char == 0)) {
                throw ConfigError("model build: pad_to_char not set");
            }
            if (!is_char && (encoding.pad_to_word == 0)) {
                throw ConfigError("model build: pad_to_word not set");
            }

            Branch branch;
            branch.config = bc;
            Tensor table({vocab->size(), bc.embedding_dim});
            bool trainable = true;
            if (bc.embedding_mode == EmbeddingMode::random_trainable) {
                init_uniform(table, -0.05, 0.05, rng);
            } else {
                if (is_char) {
                    throw ConfigError("pretrained embeddings are supported for the word branch only");
                }
                if (!pretrained_word) {
                    throw ConfigError("pretrained embedding mode configured but no table supplied");
                }
                if (!(pretrained_word->rank() == 2 && pretrained_word->dim(0) == vocab->size() &&
                      pretrained_word->dim(1) == bc.embedding_dim)) {
                    throw ConfigError("pretrained table shape does not match vocabulary size x embedding_dim");
                }
                table = *pretrained_word;
                trainable = bc.embedding_mode == EmbeddingMode::pretrained_trainable;
            }
            branch.embedding = Embedding(
                Parameter(prefix + ".embedding", std::move(table), trainable),
                static_cast<std::size_t>(Vocabulary::pad_index));
            for (std::size_t w : bc.window_sizes) {
                ConvSpec spec{w, bc.filters_per_window, bc.embedding_dim};
                branch.convs.push_back(
                    TemporalConv::make(spec, rng, prefix + ".conv_w" + std::to_string(w)));
            }
            m.branches_.push_back(std::move(branch));
        }

        m.reduction_ = Dense::make(m.reduction_input_dim(), config.reduction_dim,
                                   Activation::relu, rng, "reduction");
        m.output_ = Dense::make(config.reduction_dim, labels.size(), Activation::softmax,
                                rng, "output");
        m.dropout_rng_ = SeededRng(config.seed, SeededRng::kDropout);
        return m;
    }

    const ModelConfig& config() const { return config_; }
    const EncodingSpec& encoding() const { return encoding_; }
    const LabelSet& labels() const { return labels_; }
    const Vocabulary& char_vocab() const { return char_vocab_; }
    const Vocabulary& word_vocab() const { return word_vocab_; }

    bool has_branch(VocabKind kind) const {
        for (const Branch& b : branches_) {
            if (b.config.kind == kind) return true;
        }
        return false;
    }

    std::size_t reduction_input_dim() const {
        std::size_t dim = 0;
        for (const BranchConfig& bc : config_.branches) {
            dim += bc.window_sizes.size() * bc.filters_per_window;
        }
        if (config_.use_context) dim += context_dim();
        return dim;
    }

    std::size_t context_dim() const { return config_.n_prev * config_.label_count + 1; }

    /// Probability distribution over labels; sums to 1 within 1e-12.
    Tensor forward(const EncodedSegment& encoded, const Tensor* context = nullptr) const {
        return forward_impl(encoded, context, nullptr, nullptr);
    }

    /// Argmax of forward; ties break toward the lowest index.
    std::size_t predict(const EncodedSegment& encoded, const Tensor* context = nullptr) const {
        return argmax_lowest(forward(encoded, context));
    }

    /// Mean cross-entropy over the batch; gradients accumulate on all
    /// trainable parameters. Dropout (when configured) is active here and
    /// only here.
    double loss_and_backward(const std::vector<TrainItem>& batch) {
        if (batch.empty()) throw ConfigError("loss_and_backward: empty batch");
        const double inv_batch = 1.0 / static_cast<double>(batch.size());
        double total_loss = 0.0;
        for (const TrainItem& item : batch) {
            ForwardCache cache;
            const Tensor probs =
                forward_impl(*item.encoded, item.context, &cache,
                             config_.dropout > 0.0 ? &dropout_rng_ : nullptr);
            const int gold = item.encoded->label;
            if (gold < 0 || static_cast<std::size_t>(gold) >= labels_.size()) {
                throw ConfigError("loss_and_backward: gold label out of range");
            }
            const double loss = cross_entropy_loss(probs, static_cast<std::size_t>(gold));
            if (!std::isfinite(loss)) {
                throw NumericError("non-finite loss on dialog '" + item.encoded->dialog_id +
                                   "' position " + std::to_string(item.encoded->position));
            }
            total_loss += loss;
            backward_impl(cache, static_cast<std::size_t>(gold), inv_batch);
        }
        return total_loss * inv_batch;
    }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> params;
        for (Branch& b : branches_) {
            params.push_back(&b.embedding.table());
            for (TemporalConv& conv : b.convs) {
                params.push_back(&conv.weights());
                params.push_back(&conv.bias());
            }
        }
        params.push_back(&reduction_.weights());
        params.push_back(&reduction_.bias());
        params.push_back(&output_.weights());
        params.push_back(&output_.bias());
        return params;
    }

    std::vector<const Parameter*> parameters() const {
        auto params = const_cast<Model*>(this)->parameters();
        return {params.begin(), params.end()};
    }

    /// Copies of all parameter values, for best-epoch snapshots.
    std::vector<Tensor> snapshot_values() const {
        std::vector<Tensor> values;
        for (const Parameter* p : parameters()) values.push_back(p->value);
        return values;
    }

    void restore_values(const std::vector<Tensor>& values) {
        auto params = parameters();
        if (values.size() != params.size()) {
            throw ConfigError("restore_values: parameter count mismatch");
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!params[i]->value.same_shape(values[i])) {
                throw ConfigError("restore_values: shape mismatch for " + params[i]->name);
            }
            params[i]->value = values[i];
        }
    }

    void save(const std::string& path) const;
    static Model load(const std::string& path);

private:
    struct Branch {
        BranchConfig config;
        Embedding embedding;
        std::vector<TemporalConv> convs;
    };

    struct BranchCache {
        std::vector<int> indices;
        Tensor embedded;
        std::vector<Tensor> conv_out;
        std::vector<PoolResult> pools;
    };

    struct ForwardCache {
        std::vector<BranchCache> branches;
        DenseCache reduction;
        std::vector<double> dropout_mask;  // empty when dropout inactive
        DenseCache output;
    };

    static void validate_config(const ModelConfig& config, const LabelSet& labels) {
        if (config.branches.empty() || config.branches.size() > 2) {
            throw ConfigError("model requires one or two branches");
        }
        if (config.branches.size() == 2 &&
            config.branches[0].kind == config.branches[1].kind) {
            throw ConfigError("a dual-branch model needs one character and one word branch");
        }
        for (const BranchConfig& bc : config.branches) {
            if (bc.window_sizes.empty()) throw ConfigError("branch needs at least one window size");
            for (std::size_t i = 0; i < bc.window_sizes.size(); ++i) {
                if (bc.window_sizes[i] < 1) throw ConfigError("window sizes must be >= 1");
                if (i > 0 && bc.window_sizes[i] <= bc.window_sizes[i - 1]) {
                    throw ConfigError("window sizes must be strictly increasing");
                }
            }
            if (bc.filters_per_window < 1) throw ConfigError("filters_per_window must be >= 1");
            if (bc.embedding_dim < 1) throw ConfigError("embedding_dim must be >= 1");
        }
        if (labels.size() < 2) throw ConfigError("model needs at least two labels");
        if (config.reduction_dim < 1) throw ConfigError("reduction_dim must be >= 1");
        if (config.training.patience < 1) throw ConfigError("patience must be >= 1");
        if (config.training.batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (config.training.max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
        if (config.dropout < 0.0 || config.dropout >= 1.0) {
            throw ConfigError("dropout must be in [0, 1)");
        }
        if (config.label_count != 0 && config.label_count != labels.size()) {
            throw ConfigError("configured label_count disagrees with the corpus label set");
        }
    }

    Tensor forward_impl(const EncodedSegment& encoded, const Tensor* context,
                        ForwardCache* cache, SeededRng* dropout_rng) const {
        std::vector<Tensor> pooled;
        std::vector<BranchCache> branch_caches;
        for (const Branch& b : branches_) {
            const bool is_char = b.config.kind == VocabKind::character;
            const std::vector<int>& all_indices =
                is_char ? encoded.char_indices : encoded.word_indices;
            const std::size_t valid = is_char ? encoded.char_valid : encoded.word_valid;
            if (valid == 0 || all_indices.size() < valid) {
                throw ConfigError("segment is not encoded for the " +
                                  std::string(is_char ? "character" : "word") + " branch");
            }
            BranchCache bc;
            // Positions beyond valid_length are PAD; the PAD embedding row is
            // pinned to zero, so truncating here is exactly equivalent to
            // embedding them and masking in the pooling step.
            bc.indices.assign(all_indices.begin(),
                              all_indices.begin() + static_cast<std::ptrdiff_t>(valid));
            bc.embedded = b.embedding.forward(bc.indices);
            for (const TemporalConv& conv : b.convs) {
                Tensor out = conv.forward(bc.embedded);
                PoolResult pool = max_over_time(out, valid);
                pooled.push_back(pool.pooled);
                if (cache) {
                    bc.conv_out.push_back(std::move(out));
                    bc.pools.push_back(std::move(pool));
                }
            }
            if (cache) branch_caches.push_back(std::move(bc));
        }

        std::vector<const Tensor*> parts;
        for (const Tensor& p : pooled) parts.push_back(&p);
        Tensor ctx;
        if (config_.use_context) {
            if (!context) throw ConfigError("use_context is set but no context features given");
            if (context->size() != context_dim()) {
                throw ConfigError("context vector length " + std::to_string(context->size()) +
                                  " does not match n_prev * C + 1 = " +
                                  std::to_string(context_dim()));
            }
            ctx = *context;
            parts.push_back(&ctx);
        }
        const Tensor representation = concat(parts);

        DenseCache reduction_cache;
        Tensor reduced = reduction_.forward(representation, cache ? &reduction_cache : nullptr);
        std::vector<double> mask;
        if (dropout_rng && config_.dropout > 0.0) {
            const double keep = 1.0 - config_.dropout;
            mask.resize(reduced.size());
            for (std::size_t i = 0; i < reduced.size(); ++i) {
                mask[i] = dropout_rng->next_double() < config_.dropout ? 0.0 : 1.0 / keep;
                reduced[i] *= mask[i];
            }
        }
        DenseCache output_cache;
        Tensor probs = output_.forward(reduced, cache ? &output_cache : nullptr);
        if (cache) {
            cache->branches = std::move(branch_caches);
            cache->reduction = std::move(reduction_cache);
            cache->dropout_mask = std::move(mask);
            cache->output = std::move(output_cache);
        }
        return probs;
    }

    void backward_impl(ForwardCache& cache, std::size_t gold, double scale) {
        Tensor preact_grad = softmax_cross_entropy_grad(cache.output.output, gold);
        for (double& g : preact_grad.data()) g *= scale;
        Tensor d_reduced = output_.backward_from_preact(cache.output, preact_grad);
        if (!cache.dropout_mask.empty()) {
            for (std::size_t i = 0; i < d_reduced.size(); ++i) {
                d_reduced[i] *= cache.dropout_mask[i];
            }
        }
        Tensor d_repr = reduction_.backward(cache.reduction, d_reduced);

        std::size_t offset = 0;
        for (std::size_t bi = 0; bi < branches_.size(); ++bi) {
            Branch& b = branches_[bi];
            BranchCache& bc = cache.branches[bi];
            Tensor d_embedded({bc.embedded.dim(0), bc.embedded.dim(1)});
            for (std::size_t ci = 0; ci < b.convs.size(); ++ci) {
                const Tensor d_pool = slice(d_repr, offset, b.config.filters_per_window);
                offset += b.config.filters_per_window;
                const Tensor d_conv = max_over_time_backward(bc.pools[ci], d_pool);
                const Tensor d_in = b.convs[ci].backward(bc.embedded, d_conv);
                for (std::size_t i = 0; i < d_embedded.size(); ++i) d_embedded[i] += d_in[i];
            }
            b.embedding.backward(bc.indices, d_embedded);
        }
        // The remaining slice of d_repr is the context part; context features
        // are inputs, not parameters, so their gradient is discarded.
    }

    ModelConfig config_;
    EncodingSpec encoding_;
    LabelSet labels_;
    Vocabulary char_vocab_;
    Vocabulary word_vocab_;
    std::vector<Branch> branches_;
    Dense reduction_;
    Dense output_;
    SeededRng dropout_rng_{0, SeededRng::kDropout};
};

// ---------------------------------------------------------------------------
// Checkpoint serialization
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u8(std::ostream& out, std::uint8_t v) {
    out.put(static_cast<char>(v));
}
inline void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_f64(std::ostream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_str(std::ostream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint8_t read_u8(std::istream& in) {
    char c = 0;
    if (!in.get(c)) throw DataError("checkpoint truncated");
    return static_cast<std::uint8_t>(c);
}
inline std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) throw DataError("checkpoint truncated");
    return v;
}
inline std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) throw DataError("checkpoint truncated");
    return v;
}
inline double read_f64(std::istream& in) {
    double v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) throw DataError("checkpoint truncated");
    return v;
}
inline std::string read_str(std::istream& in) {
    const std::uint64_t len = read_u64(in);
    if (len > (1ULL << 30)) throw DataError("checkpoint corrupt (oversized string)");
    std::string s(len, '\0');
    if (len > 0 && !in.read(s.data(), static_cast<std::streamsize>(len))) {
        throw DataError("checkpoint truncated");
    }
    return s;
}

inline void write_tensor(std::ostream& out, const Tensor& t) {
    write_u8(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) write_u64(out, d);
    for (double v : t.data()) write_f64(out, v);
}

inline Tensor read_tensor(std::istream& in) {
    const std::uint8_t rank = read_u8(in);
    if (rank > 4) throw DataError("checkpoint corrupt (tensor rank)");
    std::vector<std::size_t> shape(rank);
    std::uint64_t total = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
        shape[i] = read_u64(in);
        if (shape[i] == 0 || shape[i] > (1ULL << 32)) {
            throw DataError("checkpoint corrupt (tensor dimension)");
        }
        total *= shape[i];
        if (total > (1ULL << 32)) throw DataError("checkpoint corrupt (tensor size)");
    }
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = read_f64(in);
    return t;
}

}  // namespace detail

inline void Model::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open checkpoint '" + path + "' for writing");
    out.write("DACTCKP1", 8);
    detail::write_u32(out, 1);

    detail::write_u8(out, static_cast<std::uint8_t>(config_.branches.size()));
    for (const BranchConfig& bc : config_.branches) {
        detail::write_u8(out, bc.kind == VocabKind::character ? 0 : 1);
        detail::write_u32(out, static_cast<std::uint32_t>(bc.window_sizes.size()));
        for (std::size_t w : bc.window_sizes) detail::write_u64(out, w);
        detail::write_u64(out, bc.filters_per_window);
        detail::write_u64(out, bc.embedding_dim);
        detail::write_u8(out, static_cast<std::uint8_t>(bc.embedding_mode));
        detail::write_str(out, bc.embedding_file);
    }
    detail::write_u8(out, config_.use_context ? 1 : 0);
    detail::write_u64(out, config_.n_prev);
    detail::write_u64(out, config_.reduction_dim);
    detail::write_u64(out, config_.label_count);
    detail::write_u64(out, config_.seed);
    detail::write_f64(out, config_.dropout);
    detail::write_f64(out, config_.training.learning_rate);
    detail::write_u64(out, config_.training.batch_size);
    detail::write_u64(out, config_.training.max_epochs);
    detail::write_u64(out, config_.training.patience);
    detail::write_u8(out, config_.training.optimizer == UpdateRule::adam ? 0 : 1);
    detail::write_f64(out, config_.training.beta1);
    detail::write_f64(out, config_.training.beta2);
    detail::write_f64(out, config_.training.epsilon);

    detail::write_u8(out, encoding_.flags.keep_capitalization ? 1 : 0);
    detail::write_u8(out, encoding_.flags.keep_punctuation ? 1 : 0);
    detail::write_u8(out, encoding_.flags.use_lemmatized_text ? 1 : 0);
    detail::write_u64(out, encoding_.pad_to_char);
    detail::write_u64(out, encoding_.pad_to_word);

    detail::write_u64(out, labels_.size());
    for (const std::string& label : labels_.labels()) detail::write_str(out, label);

    std::vector<const Vocabulary*> vocabs;
    if (has_branch(VocabKind::character)) vocabs.push_back(&char_vocab_);
    if (has_branch(VocabKind::word)) vocabs.push_back(&word_vocab_);
    detail::write_u8(out, static_cast<std::uint8_t>(vocabs.size()));
    for (const Vocabulary* v : vocabs) {
        detail::write_u8(out, v->kind() == VocabKind::character ? 0 : 1);
        detail::write_u64(out, v->size());
        for (std::size_t i = 0; i < v->size(); ++i) detail::write_str(out, v->token(i));
    }

    const auto params = parameters();
    detail::write_u64(out, params.size());
    for (const Parameter* p : params) {
        detail::write_str(out, p->name);
        detail::write_u8(out, p->trainable ? 1 : 0);
        detail::write_tensor(out, p->value);
    }
    if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

inline Model Model::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    char magic[8] = {};
    if (!in.read(magic, 8) || std::memcmp(magic, "DACTCKP1", 8) != 0) {
        throw DataError(path + ": not a model checkpoint");
    }
    const std::uint32_t version = detail::read_u32(in);
    if (version != 1) {
        throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
    }

    Model m;
    const std::uint8_t branch_count = detail::read_u8(in);
    for (std::uint8_t i = 0; i < branch_count; ++i) {
        BranchConfig bc;
        bc.kind = detail::read_u8(in) == 0 ? VocabKind::character : VocabKind::word;
        const std::uint32_t n_windows = detail::read_u32(in);
        for (std::uint32_t j = 0; j < n_windows; ++j) bc.window_sizes.push_back(detail::read_u64(in));
        bc.filters_per_window = detail::read_u64(in);
        bc.embedding_dim = detail::read_u64(in);
        bc.embedding_mode = static_cast<EmbeddingMode>(detail::read_u8(in));
        bc.embedding_file = detail::read_str(in);
        m.config_.branches.push_back(std::move(bc));
    }
    m.config_.use_context = detail::read_u8(in) != 0;
    m.config_.n_prev = detail::read_u64(in);
    m.config_.reduction_dim = detail::read_u64(in);
    m.config_.label_count = detail::read_u64(in);
    m.config_.seed = detail::read_u64(in);
    m.config_.dropout = detail::read_f64(in);
    m.config_.training.learning_rate = detail::read_f64(in);
    m.config_.training.batch_size = detail::read_u64(in);
    m.config_.training.max_epochs = detail::read_u64(in);
    m.config_.training.patience = detail::read_u64(in);
    m.config_.training.optimizer = detail::read_u8(in) == 0 ? UpdateRule::adam : UpdateRule::sgd;
    m.config_.training.beta1 = detail::read_f64(in);
    m.config_.training.beta2 = detail::read_f64(in);
    m.config_.training.epsilon = detail::read_f64(in);

    m.encoding_.flags.keep_capitalization = detail::read_u8(in) != 0;
    m.encoding_.flags.keep_punctuation = detail::read_u8(in) != 0;
    m.encoding_.flags.use_lemmatized_text = detail::read_u8(in) != 0;
    m.encoding_.pad_to_char = detail::read_u64(in);
    m.encoding_.pad_to_word = detail::read_u64(in);

    const std::uint64_t n_labels = detail::read_u64(in);
    std::set<std::string> label_strings;
    for (std::uint64_t i = 0; i < n_labels; ++i) label_strings.insert(detail::read_str(in));
    m.labels_ = LabelSet(label_strings);
    if (m.labels_.size() != n_labels) throw DataError(path + ": duplicate labels in checkpoint");

    const std::uint8_t vocab_count = detail::read_u8(in);
    for (std::uint8_t i = 0; i < vocab_count; ++i) {
        const VocabKind kind = detail::read_u8(in) == 0 ? VocabKind::character : VocabKind::word;
        const std::uint64_t token_count = detail::read_u64(in);
        if (token_count < 2) throw DataError(path + ": vocabulary too small");
        std::vector<std::string> ordered;
        for (std::uint64_t t = 0; t < token_count; ++t) {
            std::string tok = detail::read_str(in);
            if (t >= 2) ordered.push_back(std::move(tok));
        }
        Vocabulary vocab(kind, ordered);
        if (kind == VocabKind::character) {
            m.char_vocab_ = std::move(vocab);
        } else {
            m.word_vocab_ = std::move(vocab);
        }
    }

    const std::uint64_t param_count = detail::read_u64(in);
    std::vector<Parameter> params;
    for (std::uint64_t i = 0; i < param_count; ++i) {
        Parameter p;
        p.name = detail::read_str(in);
        p.trainable = detail::read_u8(in) != 0;
        p.value = detail::read_tensor(in);
        p.grad = Tensor::zeros(p.value.shape());
        params.push_back(std::move(p));
    }

    // Reassemble layers in canonical parameter order.
    std::size_t pi = 0;
    auto next_param = [&](const std::string& expected_suffix) -> Parameter& {
        if (pi >= params.size()) throw DataError(path + ": missing parameters");
        Parameter& p = params[pi++];
        if (p.name.size() < expected_suffix.size() ||
            p.name.compare(p.name.size() - expected_suffix.size(), expected_suffix.size(),
                           expected_suffix) != 0) {
            throw DataError(path + ": unexpected parameter '" + p.name + "', expected *" +
                            expected_suffix);
        }
        return p;
    };
    for (const BranchConfig& bc : m.config_.branches) {
        Branch branch;
        branch.config = bc;
        branch.embedding = Embedding(std::move(next_param(".embedding")),
                                     static_cast<std::size_t>(Vocabulary::pad_index));
        for (std::size_t w : bc.window_sizes) {
            ConvSpec spec{w, bc.filters_per_window, bc.embedding_dim};
            Parameter weights = std::move(next_param(".weights"));
            Parameter bias = std::move(next_param(".bias"));
            branch.convs.emplace_back(spec, std::move(weights), std::move(bias));
        }
        m.branches_.push_back(std::move(branch));
    }
    {
        Parameter rw = std::move(next_param(".weights"));
        Parameter rb = std::move(next_param(".bias"));
        m.reduction_ = Dense(std::move(rw), std::move(rb), Activation::relu);
        Parameter ow = std::move(next_param(".weights"));
        Parameter ob = std::move(next_param(".bias"));
        m.output_ = Dense(std::move(ow), std::move(ob), Activation::softmax);
    }
    if (pi != params.size()) throw DataError(path + ": trailing parameters in checkpoint");
    m.dropout_rng_ = SeededRng(m.config_.seed, SeededRng::kDropout);
    return m;
}

}  // namespace dact
