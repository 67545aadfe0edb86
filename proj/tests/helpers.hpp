// Synthetic corpora and scratch-file utilities shared by the unit and
// acceptance suites.

#pragma once

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dact/corpus.hpp"
#include "dact/model.hpp"
#include "dact/segment.hpp"
#include "dact/tensor.hpp"

namespace dact::testing {

inline std::filesystem::path scratch_dir() {
    static const std::filesystem::path dir = [] {
        auto p = std::filesystem::temp_directory_path() /
                 ("dact-tests-" + std::to_string(::getpid()));
        std::filesystem::create_directories(p);
        return p;
    }();
    return dir;
}

inline std::string scratch_file(const std::string& name, const std::string& content) {
    const auto path = scratch_dir() / name;
    std::ofstream out(path, std::ios::binary);
    out << content;
    return path.string();
}

inline std::string scratch_path(const std::string& name) {
    return (scratch_dir() / name).string();
}

/// Random corpus over a small alphabet; dialog ids d000..d{n-1}, two
/// speakers alternating in random runs, labels L0..L{n_labels-1}.
inline std::vector<Segment> random_corpus(SeededRng& rng, std::size_t n_dialogs,
                                          std::size_t min_segments, std::size_t max_segments,
                                          std::size_t n_labels, std::size_t min_len,
                                          std::size_t max_len,
                                          const std::string& alphabet = "abcdef .?") {
    std::vector<Segment> corpus;
    for (std::size_t d = 0; d < n_dialogs; ++d) {
        char id[24];
        std::snprintf(id, sizeof(id), "d%03zu", d);
        const std::size_t n_segments =
            min_segments + rng.next_below(max_segments - min_segments + 1);
        std::string speaker = "A";
        for (std::size_t p = 0; p < n_segments; ++p) {
            if (rng.next_double() < 0.4) speaker = speaker == "A" ? "B" : "A";
            Segment seg;
            seg.dialog_id = id;
            seg.position = p;
            seg.speaker = speaker;
            seg.label = "L" + std::to_string(rng.next_below(n_labels));
            const std::size_t len = min_len + rng.next_below(max_len - min_len + 1);
            std::string text;
            for (std::size_t i = 0; i < len; ++i) {
                char c = alphabet[rng.next_below(alphabet.size())];
                if (text.empty() && c == ' ') c = alphabet[0];
                text.push_back(c);
            }
            if (text.back() == ' ') text.back() = alphabet[0];
            seg.text = text;
            corpus.push_back(std::move(seg));
        }
    }
    return corpus;
}

/// Fully separable corpus: segments of label Lk consist of a run of the
/// k-th letter, so any character model can reach perfect accuracy.
inline std::vector<Segment> separable_corpus(std::size_t n_segments, std::size_t n_labels,
                                             SeededRng& rng, std::size_t segments_per_dialog = 5) {
    static const std::string letters = "abcdefghij";
    std::vector<Segment> corpus;
    for (std::size_t i = 0; i < n_segments; ++i) {
        const std::size_t k = i % n_labels;
        Segment seg;
        seg.dialog_id = "d" + std::to_string(i / segments_per_dialog);
        seg.position = i % segments_per_dialog;
        seg.speaker = (i % 2 == 0) ? "A" : "B";
        seg.label = "L" + std::to_string(k);
        const std::size_t len = 4 + rng.next_below(5);
        seg.text = std::string(len, letters[k]);
        corpus.push_back(std::move(seg));
    }
    return corpus;
}

/// Two classes with identical character multisets: a shared random prefix
/// followed by suffix "abc" (label ORD) or "cba" (label REV). Only token
/// order distinguishes the classes.
inline std::vector<Segment> suffix_order_corpus(std::size_t n_pairs, SeededRng& rng,
                                                std::size_t pairs_per_dialog = 4) {
    static const std::string letters = "defgh";
    std::vector<Segment> corpus;
    for (std::size_t i = 0; i < n_pairs; ++i) {
        std::string prefix;
        const std::size_t len = 3 + rng.next_below(4);
        for (std::size_t j = 0; j < len; ++j) prefix.push_back(letters[rng.next_below(letters.size())]);
        const std::string dialog = "d" + std::to_string(i / pairs_per_dialog);
        const std::size_t base = (i % pairs_per_dialog) * 2;
        Segment a;
        a.dialog_id = dialog;
        a.position = base;
        a.speaker = "A";
        a.label = "ORD";
        a.text = prefix + "abc";
        Segment b;
        b.dialog_id = dialog;
        b.position = base + 1;
        b.speaker = "B";
        b.label = "REV";
        b.text = prefix + "cba";
        corpus.push_back(std::move(a));
        corpus.push_back(std::move(b));
    }
    return corpus;
}

/// Label of each segment is a deterministic function of the previous
/// segment's label (a cycle); the text is a single constant character, so
/// only context information can predict anything.
inline std::vector<Segment> context_chain_corpus(std::size_t n_dialogs,
                                                 std::size_t segments_per_dialog,
                                                 std::size_t n_labels, SeededRng& rng) {
    std::vector<Segment> corpus;
    for (std::size_t d = 0; d < n_dialogs; ++d) {
        std::size_t label = rng.next_below(n_labels);
        for (std::size_t p = 0; p < segments_per_dialog; ++p) {
            Segment seg;
            seg.dialog_id = "d" + std::to_string(d);
            seg.position = p;
            seg.speaker = (rng.next_double() < 0.5) ? "A" : "B";
            seg.label = "L" + std::to_string(label);
            seg.text = "x";
            corpus.push_back(std::move(seg));
            label = (label + 1) % n_labels;
        }
    }
    return corpus;
}

/// Fixed manifest over dialogs d0..d{n-1} (or explicit id lists).
inline std::string manifest_text(const std::vector<std::string>& train,
                                 const std::vector<std::string>& validation,
                                 const std::vector<std::string>& test) {
    std::string out = "[train]\n";
    for (const auto& id : train) out += id + "\n";
    out += "[validation]\n";
    for (const auto& id : validation) out += id + "\n";
    out += "[test]\n";
    for (const auto& id : test) out += id + "\n";
    return out;
}

inline std::vector<std::string> dialog_ids(const std::vector<Segment>& corpus) {
    std::vector<std::string> ids;
    for (const Segment& s : corpus) {
        if (ids.empty() || ids.back() != s.dialog_id) {
            bool seen = false;
            for (const auto& id : ids) {
                if (id == s.dialog_id) {
                    seen = true;
                    break;
                }
            }
            if (!seen) ids.push_back(s.dialog_id);
        }
    }
    return ids;
}

/// Splits dialog ids into train/validation/test by proportion for quick
/// fixed-split experiments.
inline SplitManifest quick_manifest(const std::vector<Segment>& corpus, double train_frac = 0.7,
                                    double val_frac = 0.15) {
    const auto ids = dialog_ids(corpus);
    SplitManifest manifest;
    manifest.mode = SplitMode::fixed_splits;
    const std::size_t n = ids.size();
    const std::size_t n_train = std::max<std::size_t>(1, static_cast<std::size_t>(n * train_frac));
    const std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(n * val_frac));
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n_train) {
            manifest.train.push_back(ids[i]);
        } else if (i < n_train + n_val) {
            manifest.validation.push_back(ids[i]);
        } else {
            manifest.test.push_back(ids[i]);
        }
    }
    if (manifest.validation.empty() || manifest.test.empty()) {
        throw ConfigError("quick_manifest: too few dialogs");
    }
    return manifest;
}

/// Small character model for fast tests.
inline ModelConfig small_char_config(std::vector<std::size_t> windows, std::size_t filters = 16,
                                     std::size_t embedding_dim = 8, std::size_t reduction = 16) {
    ModelConfig config;
    BranchConfig bc;
    bc.kind = VocabKind::character;
    bc.window_sizes = std::move(windows);
    bc.filters_per_window = filters;
    bc.embedding_dim = embedding_dim;
    bc.embedding_mode = EmbeddingMode::random_trainable;
    config.branches.push_back(std::move(bc));
    config.reduction_dim = reduction;
    return config;
}

}  // namespace dact::testing
