// Experiment driver: training with early stopping and best-epoch restore,
// evaluation with gold or predicted context, multi-seed statistics, the
// standard experiment grid, and report emission.

#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dact/config.hpp"
#include "dact/corpus.hpp"
#include "dact/gradcheck.hpp"
#include "dact/model.hpp"
#include "dact/optimizer.hpp"
#include "dact/tensor.hpp"
#include "dact/textprep.hpp"

namespace dact {

/// The stopping rule: strict improvement of the tracked value resets the
/// patience counter; ties do not. After observing epoch e (1-based), training
/// stops once e - best_epoch >= patience.
struct EarlyStopping {
    std::size_t patience = 10;
    double best_value = -std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;

    /// Returns true when training should stop after this epoch.
    bool observe(std::size_t epoch, double value) {
        if (value > best_value) {
            best_value = value;
            best_epoch = epoch;
        }
        return epoch - best_epoch >= patience;
    }
};

struct TrainRecord {
    std::vector<double> train_loss;    // per epoch, mean over segments
    std::vector<double> val_accuracy;  // per epoch
    std::size_t best_epoch = 0;        // 1-based
    std::size_t stop_epoch = 0;        // last epoch run
    bool aborted = false;
    std::string abort_reason;
};

/// Encoded segments grouped by dialog, in position order.
struct PreparedData {
    std::vector<std::vector<EncodedSegment>> dialogs;
    std::size_t total = 0;
    std::size_t dropped = 0;  // segments empty after preprocessing
};

inline PreparedData prepare_data(const std::vector<Segment>& segments,
                                 const Vocabulary* char_vocab, const Vocabulary* word_vocab,
                                 const PreprocessingFlags& flags, std::size_t pad_to_char,
                                 std::size_t pad_to_word, const LabelSet& labels) {
    PreparedData data;
    std::unordered_map<std::string, std::size_t> index;
    for (const Segment& seg : segments) {
        auto it = index.find(seg.dialog_id);
        std::size_t di;
        if (it == index.end()) {
            di = data.dialogs.size();
            index.emplace(seg.dialog_id, di);
            data.dialogs.emplace_back();
        } else {
            di = it->second;
        }
        auto enc = encode(seg, char_vocab, word_vocab, flags, pad_to_char, pad_to_word, labels);
        if (!enc) {
            ++data.dropped;
            continue;
        }
        data.dialogs[di].push_back(std::move(*enc));
        ++data.total;
    }
    std::erase_if(data.dialogs, [](const auto& d) { return d.empty(); });
    for (auto& dialog : data.dialogs) {
        std::sort(dialog.begin(), dialog.end(),
                  [](const EncodedSegment& a, const EncodedSegment& b) {
                      return a.position < b.position;
                  });
    }
    return data;
}

namespace detail {

inline std::vector<std::string> dialog_speakers(const std::vector<EncodedSegment>& dialog) {
    std::vector<std::string> speakers;
    speakers.reserve(dialog.size());
    for (const EncodedSegment& e : dialog) speakers.push_back(e.speaker);
    return speakers;
}

inline std::vector<int> dialog_gold(const std::vector<EncodedSegment>& dialog) {
    std::vector<int> gold;
    gold.reserve(dialog.size());
    for (const EncodedSegment& e : dialog) gold.push_back(e.label);
    return gold;
}

}  // namespace detail

/// Context features for one position given the labels of all earlier
/// positions (gold or predicted) and the dialog's speaker sequence.
inline Tensor context_features(const std::vector<std::string>& speakers, std::size_t position,
                               const std::vector<int>& labels_before, std::size_t label_count,
                               std::size_t n_prev) {
    if (position >= speakers.size()) throw ConfigError("context_features: position out of range");
    if (labels_before.size() < position) {
        throw ConfigError("context_features: labels missing for earlier positions");
    }
    Tensor features({n_prev * label_count + 1});
    for (std::size_t j = 0; j < n_prev; ++j) {
        if (position < j + 1) break;
        const int label = labels_before[position - 1 - j];
        if (label < 0 || static_cast<std::size_t>(label) >= label_count) {
            throw ConfigError("context_features: label index out of range");
        }
        features(j * label_count + static_cast<std::size_t>(label)) = 1.0;
    }
    if (position > 0 && speakers[position] != speakers[position - 1]) {
        features(n_prev * label_count) = 1.0;
    }
    return features;
}

struct EvalResult {
    double accuracy = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
    Tensor confusion;  // [C x C], rows gold, columns predicted
};

/// Accuracy and confusion matrix over all segments. In predicted mode each
/// dialog is processed in position order and context one-hots come from the
/// model's own earlier predictions; gold labels of the evaluated dialog are
/// never read before its predictions are made.
inline EvalResult evaluate(const Model& model, const PreparedData& data, ContextSource source) {
    if (data.total == 0) throw ConfigError("evaluate: empty split");
    const std::size_t label_count = model.labels().size();
    const bool use_context = model.config().use_context;
    const std::size_t n_prev = model.config().n_prev;

    EvalResult result;
    result.confusion = Tensor({label_count, label_count});
    for (const auto& dialog : data.dialogs) {
        const auto speakers = detail::dialog_speakers(dialog);
        const auto gold = detail::dialog_gold(dialog);
        std::vector<int> predicted;
        predicted.reserve(dialog.size());
        for (std::size_t p = 0; p < dialog.size(); ++p) {
            std::size_t pred;
            if (use_context) {
                const std::vector<int>& labels_before =
                    source == ContextSource::gold ? gold : predicted;
                const Tensor ctx =
                    context_features(speakers, p, labels_before, label_count, n_prev);
                pred = model.predict(dialog[p], &ctx);
            } else {
                pred = model.predict(dialog[p]);
            }
            predicted.push_back(static_cast<int>(pred));
            const std::size_t g = static_cast<std::size_t>(gold[p]);
            result.confusion(g, pred) += 1.0;
            if (pred == g) ++result.correct;
            ++result.total;
        }
    }
    result.accuracy = static_cast<double>(result.correct) / static_cast<double>(result.total);
    return result;
}

/// Trains in place: shuffled mini-batches driven by the run seed, per-epoch
/// validation with gold context, early stopping on strict improvement, and
/// restoration of the best epoch's parameters.
inline TrainRecord train_model(Model& model, const PreparedData& train,
                               const PreparedData& validation) {
    if (train.total == 0) throw ConfigError("train: empty training split");
    if (validation.total == 0) throw ConfigError("train: empty validation split");
    const TrainingConfig& tc = model.config().training;
    const bool use_context = model.config().use_context;
    const std::size_t label_count = model.labels().size();

    // Flatten training segments; training context is always gold.
    std::vector<const EncodedSegment*> items;
    std::vector<Tensor> contexts;
    items.reserve(train.total);
    for (const auto& dialog : train.dialogs) {
        const auto speakers = detail::dialog_speakers(dialog);
        const auto gold = detail::dialog_gold(dialog);
        for (std::size_t p = 0; p < dialog.size(); ++p) {
            items.push_back(&dialog[p]);
            if (use_context) {
                contexts.push_back(context_features(speakers, p, gold, label_count,
                                                    model.config().n_prev));
            }
        }
    }

    SeededRng shuffle_rng(model.config().seed, SeededRng::kShuffle);
    Optimizer optimizer(tc.optimizer_config(), model.parameters());
    EarlyStopping stopper{tc.patience};
    TrainRecord record;
    std::vector<Tensor> best_values = model.snapshot_values();

    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        try {
            for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
                const std::size_t end = std::min(order.size(), start + tc.batch_size);
                std::vector<TrainItem> batch;
                batch.reserve(end - start);
                for (std::size_t i = start; i < end; ++i) {
                    batch.push_back(TrainItem{items[order[i]],
                                              use_context ? &contexts[order[i]] : nullptr});
                }
                const double loss = model.loss_and_backward(batch);
                optimizer.step();
                epoch_loss += loss * static_cast<double>(batch.size());
            }
        } catch (const NumericError& e) {
            record.aborted = true;
            record.abort_reason = e.what();
            break;
        }
        record.train_loss.push_back(epoch_loss / static_cast<double>(items.size()));
        const EvalResult val = evaluate(model, validation, ContextSource::gold);
        record.val_accuracy.push_back(val.accuracy);
        record.stop_epoch = epoch;
        const bool stop = stopper.observe(epoch, val.accuracy);
        if (stopper.best_epoch == epoch) best_values = model.snapshot_values();
        if (stop) break;
    }
    record.best_epoch = stopper.best_epoch;
    model.restore_values(best_values);
    return record;
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// Per-experiment accuracy aggregate: per-seed values with their mean and
/// population standard deviation.
struct RunStatistics {
    std::vector<std::uint64_t> seeds;
    std::vector<double> per_seed;
    std::vector<std::uint64_t> aborted_seeds;
    double mean = 0.0;
    double stddev = 0.0;

    void finalize() {
        if (per_seed.empty()) {
            mean = 0.0;
            stddev = 0.0;
            return;
        }
        mean = std::accumulate(per_seed.begin(), per_seed.end(), 0.0) /
               static_cast<double>(per_seed.size());
        double var = 0.0;
        for (double v : per_seed) var += (v - mean) * (v - mean);
        stddev = std::sqrt(var / static_cast<double>(per_seed.size()));
    }

    std::size_t runs() const { return per_seed.size(); }
};

struct ExperimentResult {
    std::string name;
    RunStatistics validation;
    RunStatistics test;
    std::vector<std::string> notes;
};

namespace detail {

struct SeedOutcome {
    bool aborted = false;
    std::string abort_reason;
    double validation_accuracy = 0.0;
    double test_accuracy = 0.0;
};

inline std::size_t max_token_length(const std::vector<Segment>& segments, VocabKind kind,
                                    const PreprocessingFlags& flags) {
    std::size_t longest = 0;
    for (const Segment& seg : segments) {
        longest = std::max(longest, tokenize(kind, source_text(seg, flags), flags).size());
    }
    return longest;
}

inline std::size_t max_window(const ModelConfig& config, VocabKind kind) {
    std::size_t w = 1;
    for (const BranchConfig& bc : config.branches) {
        if (bc.kind == kind) {
            for (std::size_t s : bc.window_sizes) w = std::max(w, s);
        }
    }
    return w;
}

}  // namespace detail

/// Builds vocabularies and pad lengths from one training split, encodes the
/// three splits, constructs a model with the given seed, trains it, and
/// evaluates. Shared by the fixed-split and k-fold paths.
struct FoldRun {
    Model model;
    EvalResult validation;
    EvalResult test;
    TrainRecord record;
    PreparedData train_data;
    std::size_t dropped = 0;
};

inline FoldRun run_fold(const ExperimentSpec& spec, const SplitTriple& triple,
                        std::uint64_t seed, const LabelSet& labels,
                        const EmbeddingFile* word_embeddings) {
    ModelConfig config = spec.model;
    config.seed = seed;

    bool needs_char = false, needs_word = false;
    for (const BranchConfig& bc : config.branches) {
        (bc.kind == VocabKind::character ? needs_char : needs_word) = true;
    }

    std::optional<Vocabulary> char_vocab, word_vocab;
    EncodingSpec encoding;
    encoding.flags = spec.preprocessing;
    if (needs_char) {
        char_vocab = build_vocabulary(triple.train, VocabKind::character, spec.preprocessing,
                                      spec.char_min_count);
        encoding.pad_to_char =
            std::max(detail::max_token_length(triple.train, VocabKind::character,
                                              spec.preprocessing),
                     detail::max_window(config, VocabKind::character));
    }
    if (needs_word) {
        word_vocab = build_vocabulary(triple.train, VocabKind::word, spec.preprocessing,
                                      spec.word_min_count);
        encoding.pad_to_word =
            std::max(detail::max_token_length(triple.train, VocabKind::word, spec.preprocessing),
                     detail::max_window(config, VocabKind::word));
    }

    std::optional<Tensor> pretrained;
    for (const BranchConfig& bc : config.branches) {
        if (bc.kind != VocabKind::word ||
            bc.embedding_mode == EmbeddingMode::random_trainable) {
            continue;
        }
        if (!word_embeddings) {
            throw ConfigError("experiment '" + spec.name +
                              "': pretrained word embeddings configured but no embedding file loaded");
        }
        if (word_embeddings->dim != bc.embedding_dim) {
            throw ConfigError("experiment '" + spec.name + "': embedding file dimension " +
                              std::to_string(word_embeddings->dim) +
                              " does not match configured embedding_dim " +
                              std::to_string(bc.embedding_dim));
        }
        pretrained = build_embedding_table(*word_embeddings, *word_vocab, seed).table;
    }

    const Vocabulary* cv = char_vocab ? &*char_vocab : nullptr;
    const Vocabulary* wv = word_vocab ? &*word_vocab : nullptr;
    FoldRun run;
    run.train_data = prepare_data(triple.train, cv, wv, spec.preprocessing,
                                  encoding.pad_to_char, encoding.pad_to_word, labels);
    PreparedData val_data = prepare_data(triple.validation, cv, wv, spec.preprocessing,
                                         encoding.pad_to_char, encoding.pad_to_word, labels);
    PreparedData test_data = prepare_data(triple.test, cv, wv, spec.preprocessing,
                                          encoding.pad_to_char, encoding.pad_to_word, labels);
    run.dropped = run.train_data.dropped + val_data.dropped + test_data.dropped;

    run.model = Model::build(config, encoding, cv, wv, labels,
                             pretrained ? &*pretrained : nullptr);
    run.record = train_model(run.model, run.train_data, val_data);
    if (run.record.aborted) return run;
    run.validation = evaluate(run.model, val_data, spec.context_source);
    run.test = evaluate(run.model, test_data, spec.context_source);
    return run;
}

namespace detail {

inline SeedOutcome run_seed(const ExperimentSpec& spec, const ResolvedSplits& splits,
                            std::uint64_t seed, const LabelSet& labels,
                            const EmbeddingFile* word_embeddings) {
    SeedOutcome outcome;
    std::size_t val_correct = 0, val_total = 0, test_correct = 0, test_total = 0;
    for (const SplitTriple& triple : splits.parts) {
        FoldRun run;
        try {
            run = run_fold(spec, triple, seed, labels, word_embeddings);
        } catch (const NumericError& e) {
            outcome.aborted = true;
            outcome.abort_reason = e.what();
            return outcome;
        }
        if (run.record.aborted) {
            outcome.aborted = true;
            outcome.abort_reason = run.record.abort_reason;
            return outcome;
        }
        val_correct += run.validation.correct;
        val_total += run.validation.total;
        test_correct += run.test.correct;
        test_total += run.test.total;
    }
    // Micro-average: pool all fold predictions, then divide.
    outcome.validation_accuracy =
        static_cast<double>(val_correct) / static_cast<double>(val_total);
    outcome.test_accuracy = static_cast<double>(test_correct) / static_cast<double>(test_total);
    return outcome;
}

inline void parallel_for(std::size_t n, std::size_t jobs,
                         const std::function<void(std::size_t)>& body) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t n_threads = std::min(jobs, n);
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace detail

/// Runs the experiment once per seed (independent runs, optionally in
/// parallel): fresh vocabularies from the train split, fresh model, train,
/// evaluate. In k-fold mode each seed's accuracy is the micro-average across
/// folds. Aborted runs are excluded from the statistics and flagged in notes.
inline ExperimentResult run_experiment(const ExperimentSpec& spec,
                                       const CorpusReadResult& corpus,
                                       const ResolvedSplits& splits,
                                       const EmbeddingFile* word_embeddings,
                                       std::size_t jobs = 1) {
    if (spec.seeds.empty()) throw ConfigError("experiment '" + spec.name + "': no seeds");
    ExperimentResult result;
    result.name = spec.name;

    std::vector<detail::SeedOutcome> outcomes(spec.seeds.size());
    detail::parallel_for(spec.seeds.size(), jobs, [&](std::size_t i) {
        outcomes[i] = detail::run_seed(spec, splits, spec.seeds[i], corpus.labels,
                                       word_embeddings);
    });

    for (std::size_t i = 0; i < spec.seeds.size(); ++i) {
        const auto& outcome = outcomes[i];
        if (outcome.aborted) {
            result.validation.aborted_seeds.push_back(spec.seeds[i]);
            result.test.aborted_seeds.push_back(spec.seeds[i]);
            result.notes.push_back("seed " + std::to_string(spec.seeds[i]) +
                                   " aborted and excluded: " + outcome.abort_reason);
            continue;
        }
        result.validation.seeds.push_back(spec.seeds[i]);
        result.validation.per_seed.push_back(outcome.validation_accuracy);
        result.test.seeds.push_back(spec.seeds[i]);
        result.test.per_seed.push_back(outcome.test_accuracy);
    }
    result.validation.finalize();
    result.test.finalize();
    return result;
}

/// Convenience overload: loads corpus, manifest and (if any branch needs it)
/// the embedding file named by the experiment's word branch.
inline ExperimentResult run_experiment(const ExperimentSpec& spec, std::size_t jobs = 1) {
    const CorpusReadResult corpus = read_corpus(spec.corpus_path);
    const SplitManifest manifest = parse_manifest(spec.manifest_path);
    const ResolvedSplits splits = resolve_splits(corpus.segments, manifest);
    std::optional<EmbeddingFile> embeddings;
    for (const BranchConfig& bc : spec.model.branches) {
        if (bc.kind == VocabKind::word &&
            bc.embedding_mode != EmbeddingMode::random_trainable) {
            if (bc.embedding_file.empty()) {
                throw ConfigError("experiment '" + spec.name +
                                  "': pretrained mode needs an 'embeddings' path");
            }
            embeddings = parse_embedding_file(bc.embedding_file);
        }
    }
    return run_experiment(spec, corpus, splits, embeddings ? &*embeddings : nullptr, jobs);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

enum class ReportFormat { plain, csv };

struct ReportRow {
    std::string experiment;
    std::string split;
    double mu = 0.0;
    double sigma = 0.0;
    std::size_t n_runs = 0;
};

/// Report accuracy formatting: four decimals, no leading zero.
inline std::string format_accuracy(double v) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4) << v;
    std::string s = out.str();
    if (s.rfind("0.", 0) == 0) return s.substr(1);
    if (s.rfind("-0.", 0) == 0) return "-" + s.substr(2);
    return s;
}

inline std::vector<ReportRow> report_rows(const std::vector<ExperimentResult>& results) {
    std::vector<ReportRow> rows;
    rows.reserve(results.size() * 2);
    for (const ExperimentResult& r : results) {
        rows.push_back({r.name, "validation", r.validation.mean, r.validation.stddev,
                        r.validation.runs()});
        rows.push_back({r.name, "test", r.test.mean, r.test.stddev, r.test.runs()});
    }
    return rows;
}

inline void emit_report(const std::vector<ReportRow>& rows, std::ostream& out,
                        ReportFormat format) {
    if (rows.empty()) throw ConfigError("emit_report: no rows");
    if (format == ReportFormat::csv) {
        out << "experiment,split,mu,sigma,n_runs\n";
        for (const ReportRow& row : rows) {
            out << row.experiment << ',' << row.split << ',' << format_accuracy(row.mu) << ','
                << format_accuracy(row.sigma) << ',' << row.n_runs << '\n';
        }
        return;
    }
    std::size_t name_width = 10, split_width = 5;
    for (const ReportRow& row : rows) {
        name_width = std::max(name_width, row.experiment.size());
        split_width = std::max(split_width, row.split.size());
    }
    out << std::left << std::setw(static_cast<int>(name_width) + 2) << "experiment"
        << std::setw(static_cast<int>(split_width) + 2) << "split" << std::setw(8) << "mu"
        << std::setw(8) << "sigma" << "n_runs\n";
    for (const ReportRow& row : rows) {
        out << std::left << std::setw(static_cast<int>(name_width) + 2) << row.experiment
            << std::setw(static_cast<int>(split_width) + 2) << row.split << std::setw(8)
            << format_accuracy(row.mu) << std::setw(8) << format_accuracy(row.sigma)
            << row.n_runs << '\n';
    }
}

inline void write_report_file(const std::vector<ReportRow>& rows, const std::string& path,
                              ReportFormat format) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open report file '" + path + "' for writing");
    emit_report(rows, out, format);
    if (!out) throw DataError("failed writing report file '" + path + "'");
}

inline std::vector<ReportRow> parse_csv_report(const std::string& path) {
    const auto lines = detail::split_lines(detail::read_file(path));
    if (lines.empty() || lines[0] != "experiment,split,mu,sigma,n_runs") {
        throw DataError(path + ": not a report csv");
    }
    std::vector<ReportRow> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto fields = ConfigFile::split_csv(lines[i]);
        if (fields.size() != 5) throw DataError(path + ": malformed report row");
        ReportRow row;
        row.experiment = fields[0];
        row.split = fields[1];
        row.mu = std::stod(fields[2]);
        row.sigma = std::stod(fields[3]);
        std::size_t n = 0;
        if (!detail::parse_size(fields[4], n)) throw DataError(path + ": malformed n_runs");
        row.n_runs = n;
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// The standard experiment grid
// ---------------------------------------------------------------------------

struct GridOptions {
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    std::string embeddings_path;  // empty: pretrained rows are skipped
    std::optional<std::size_t> max_epochs;  // override for smoke runs
    std::size_t jobs = 1;
};

/// The standard experiment rows: word-level baselines, the character
/// window sweep, preprocessing variants, and the combined models (run under
/// both plausible preprocessing settings). Rows that need missing inputs
/// (embedding file, lemmatized column) are skipped with a notice.
inline std::vector<ExperimentSpec> build_standard_grid(const std::string& corpus_path,
                                                       const std::string& manifest_path,
                                                       bool has_lemmatized, bool has_embeddings,
                                                       const GridOptions& options,
                                                       std::vector<std::string>* notices,
                                                       std::size_t word_embedding_dim = 200) {
    auto note = [&](const std::string& msg) {
        if (notices) notices->push_back(msg);
    };

    ExperimentSpec base;
    base.corpus_path = corpus_path;
    base.manifest_path = manifest_path;
    base.seeds = options.seeds;
    if (options.max_epochs) base.model.training.max_epochs = *options.max_epochs;

    auto char_branch = [](std::vector<std::size_t> windows) {
        BranchConfig bc;
        bc.kind = VocabKind::character;
        bc.window_sizes = std::move(windows);
        bc.filters_per_window = 100;
        bc.embedding_dim = 30;
        bc.embedding_mode = EmbeddingMode::random_trainable;
        return bc;
    };
    auto word_branch = [&](EmbeddingMode mode) {
        BranchConfig bc;
        bc.kind = VocabKind::word;
        bc.window_sizes = {1, 2, 3};
        bc.filters_per_window = 100;
        bc.embedding_dim = word_embedding_dim;
        bc.embedding_mode = mode;
        bc.embedding_file = options.embeddings_path;
        return bc;
    };

    std::vector<ExperimentSpec> grid;
    auto add = [&](const std::string& name, std::vector<BranchConfig> branches,
                   bool use_context, PreprocessingFlags flags) {
        ExperimentSpec spec = base;
        spec.name = name;
        spec.model.branches = std::move(branches);
        spec.model.use_context = use_context;
        spec.preprocessing = flags;
        grid.push_back(std::move(spec));
    };

    const PreprocessingFlags plain_flags{};  // lowercased, unpunctuated
    PreprocessingFlags cap_flags;
    cap_flags.keep_capitalization = true;
    PreprocessingFlags punct_flags;
    punct_flags.keep_punctuation = true;
    PreprocessingFlags cap_punct_flags;
    cap_punct_flags.keep_capitalization = true;
    cap_punct_flags.keep_punctuation = true;
    PreprocessingFlags lemma_flags;
    lemma_flags.use_lemmatized_text = true;

    // Word-level baselines.
    add("word-random", {word_branch(EmbeddingMode::random_trainable)}, false, plain_flags);
    if (has_embeddings) {
        add("word-pretrained", {word_branch(EmbeddingMode::pretrained_fixed)}, false,
            plain_flags);
        add("word-pretrained-context", {word_branch(EmbeddingMode::pretrained_fixed)}, true,
            plain_flags);
    } else {
        note("rows 'word-pretrained' and 'word-pretrained-context' skipped: no embedding file supplied");
    }

    // Character window sweep.
    for (std::size_t w : {1, 2, 3, 4, 5, 7, 10}) {
        add("char-w" + std::to_string(w), {char_branch({w})}, false, plain_flags);
    }
    add("char-w3-5-7", {char_branch({3, 5, 7})}, false, plain_flags);

    // Preprocessing variants on the best character windows.
    add("char-capitalized", {char_branch({3, 5, 7})}, false, cap_flags);
    add("char-punctuated", {char_branch({3, 5, 7})}, false, punct_flags);
    add("char-capitalized-punctuated", {char_branch({3, 5, 7})}, false, cap_punct_flags);
    if (has_lemmatized) {
        add("char-lemmatized", {char_branch({3, 5, 7})}, false, lemma_flags);
    } else {
        note("row 'char-lemmatized' skipped: corpus has no lemmatized_text column");
    }

    // Combined models, run under both plausible preprocessing settings.
    const EmbeddingMode word_mode =
        has_embeddings ? EmbeddingMode::pretrained_fixed : EmbeddingMode::random_trainable;
    if (!has_embeddings) {
        note("combined rows use randomly initialized word embeddings: no embedding file supplied");
    }
    add("char-word-punctuated", {char_branch({3, 5, 7}), word_branch(word_mode)}, false,
        punct_flags);
    add("char-word-capitalized-punctuated", {char_branch({3, 5, 7}), word_branch(word_mode)},
        false, cap_punct_flags);
    add("char-word-context-punctuated", {char_branch({3, 5, 7}), word_branch(word_mode)}, true,
        punct_flags);
    add("char-word-context-capitalized-punctuated",
        {char_branch({3, 5, 7}), word_branch(word_mode)}, true, cap_punct_flags);
    return grid;
}

struct GridOutcome {
    std::vector<ExperimentResult> results;
    std::vector<std::string> notices;
};

inline GridOutcome run_grid(const std::string& corpus_path, const std::string& manifest_path,
                            const GridOptions& options) {
    const CorpusReadResult corpus = read_corpus(corpus_path);
    const SplitManifest manifest = parse_manifest(manifest_path);
    const ResolvedSplits splits = resolve_splits(corpus.segments, manifest);
    std::optional<EmbeddingFile> embeddings;
    if (!options.embeddings_path.empty()) {
        embeddings = parse_embedding_file(options.embeddings_path);
    }

    GridOutcome outcome;
    // A supplied embedding file fixes the word embedding width.
    const std::size_t word_dim = embeddings ? embeddings->dim : 200;
    const auto specs =
        build_standard_grid(corpus_path, manifest_path, corpus.has_lemmatized,
                            embeddings.has_value(), options, &outcome.notices, word_dim);
    for (const ExperimentSpec& spec : specs) {
        outcome.results.push_back(run_experiment(spec, corpus, splits,
                                                 embeddings ? &*embeddings : nullptr,
                                                 options.jobs));
    }
    return outcome;
}

/// The body of the `experiment` CLI subcommand, reusable in-process.
inline ExperimentResult run_experiment_to_report(const std::string& spec_path,
                                                 const std::optional<std::string>& seeds_override,
                                                 const std::string& report_path,
                                                 ReportFormat format, std::size_t jobs = 1) {
    ExperimentSpec spec = parse_experiment_spec(spec_path);
    if (seeds_override) spec.seeds = parse_seed_list(*seeds_override, "--seeds");
    ExperimentResult result = run_experiment(spec, jobs);
    write_report_file(report_rows({result}), report_path, format);
    return result;
}

// ---------------------------------------------------------------------------
// Architecture-level gradient verification (used by the gradcheck CLI)
// ---------------------------------------------------------------------------

/// Builds the configured architecture over a small synthetic vocabulary and
/// checks all trainable parameters on a toy batch. Dropout is forced off so
/// the finite-difference probes see a deterministic loss.
inline GradCheckReport model_gradient_check(const ParsedModelConfig& parsed,
                                            double step = 1e-5) {
    ModelConfig config = parsed.model;
    config.dropout = 0.0;

    std::vector<Segment> toy;
    const char* texts[] = {"ab ba", "ba ab", "ca cb", "bc ab", "ac ba", "cb ca"};
    const char* labels[] = {"x", "y", "z", "x", "y", "z"};
    for (std::size_t i = 0; i < 6; ++i) {
        Segment seg;
        seg.dialog_id = "toy";
        seg.position = i;
        seg.speaker = i % 2 == 0 ? "A" : "B";
        seg.label = labels[i];
        seg.text = texts[i];
        seg.lemmatized_text = texts[i];
        toy.push_back(std::move(seg));
    }
    const LabelSet label_set = LabelSet::from_segments(toy);

    bool needs_char = false, needs_word = false;
    for (const BranchConfig& bc : config.branches) {
        (bc.kind == VocabKind::character ? needs_char : needs_word) = true;
    }
    for (BranchConfig& bc : config.branches) {
        // Synthetic check: random tables regardless of the configured mode.
        bc.embedding_mode = EmbeddingMode::random_trainable;
        bc.embedding_file.clear();
    }

    std::optional<Vocabulary> char_vocab, word_vocab;
    EncodingSpec encoding;
    encoding.flags = parsed.preprocessing;
    encoding.flags.use_lemmatized_text = false;
    if (needs_char) {
        char_vocab = build_vocabulary(toy, VocabKind::character, encoding.flags, 1);
        encoding.pad_to_char = std::max<std::size_t>(
            detail::max_token_length(toy, VocabKind::character, encoding.flags),
            detail::max_window(config, VocabKind::character));
    }
    if (needs_word) {
        word_vocab = build_vocabulary(toy, VocabKind::word, encoding.flags, 1);
        encoding.pad_to_word = std::max<std::size_t>(
            detail::max_token_length(toy, VocabKind::word, encoding.flags),
            detail::max_window(config, VocabKind::word));
    }
    const Vocabulary* cv = char_vocab ? &*char_vocab : nullptr;
    const Vocabulary* wv = word_vocab ? &*word_vocab : nullptr;

    Model model = Model::build(config, encoding, cv, wv, label_set);
    PreparedData data = prepare_data(toy, cv, wv, encoding.flags, encoding.pad_to_char,
                                     encoding.pad_to_word, label_set);

    std::vector<TrainItem> batch;
    std::vector<Tensor> contexts;
    const auto& dialog = data.dialogs.at(0);
    const auto speakers = detail::dialog_speakers(dialog);
    const auto gold = detail::dialog_gold(dialog);
    const std::size_t batch_size = std::min<std::size_t>(3, dialog.size());
    for (std::size_t p = 0; p < batch_size; ++p) {
        if (config.use_context) {
            contexts.push_back(
                context_features(speakers, p, gold, label_set.size(), config.n_prev));
        }
    }
    for (std::size_t p = 0; p < batch_size; ++p) {
        batch.push_back(TrainItem{&dialog[p], config.use_context ? &contexts[p] : nullptr});
    }

    auto loss_only = [&]() {
        double total = 0.0;
        for (const TrainItem& item : batch) {
            const Tensor probs = model.forward(*item.encoded, item.context);
            total += cross_entropy_loss(probs, static_cast<std::size_t>(item.encoded->label));
        }
        return total / static_cast<double>(batch.size());
    };
    auto accumulate = [&]() {
        for (Parameter* p : model.parameters()) p->zero_grad();
        model.loss_and_backward(batch);
    };
    return gradient_check(model.parameters(), loss_only, accumulate, step);
}

}  // namespace dact
