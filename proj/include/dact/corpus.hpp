// Corpus handling: the canonical TSV format, split manifests and k-fold
// resolution, pre-trained embedding files, and context feature extraction.
//
// Canonical corpus format: UTF-8 TSV with '\t' separators and '\n' line
// ends, no quoting. Header row required:
//   dialog_id<TAB>position<TAB>speaker<TAB>label<TAB>text[<TAB>lemmatized_text]
//
// Split manifest: UTF-8 text with sections [train]/[validation]/[test] or
// [fold1]..[foldk], one dialog id per line.
//
// Embedding file: one record per line: token, space, d space-separated
// decimal floats; an optional first header line of exactly two integers.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dact/segment.hpp"
#include "dact/tensor.hpp"
#include "dact/textprep.hpp"

namespace dact {

struct CorpusReadResult {
    std::vector<Segment> segments;
    LabelSet labels;
    bool has_lemmatized = false;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<std::string> split_lines(const std::string& content) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= content.size()) {
        std::size_t end = content.find('\n', start);
        if (end == std::string::npos) {
            if (start < content.size()) lines.push_back(content.substr(start));
            break;
        }
        std::string line = content.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
        start = end + 1;
    }
    return lines;
}

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        std::size_t end = line.find('\t', start);
        if (end == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, end - start));
        start = end + 1;
    }
    return fields;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline bool parse_size(const std::string& s, std::size_t& out) {
    if (s.empty()) return false;
    std::size_t value = 0;
    for (char c : s) {
        if (c < '0' || c > '9') return false;
        value = value * 10 + static_cast<std::size_t>(c - '0');
    }
    out = value;
    return true;
}

}  // namespace detail

/// Parses the canonical TSV. Positions are validated contiguous from 0
/// within each dialog (as authored); segments with empty text are then
/// dropped with a warning and the surviving positions renumbered so the
/// contiguity invariant still holds in memory.
inline CorpusReadResult read_corpus(const std::string& path) {
    const std::string content = detail::read_file(path);
    const auto lines = detail::split_lines(content);
    if (lines.empty()) throw DataError(path + ": empty corpus file");

    const auto header = detail::split_tabs(lines[0]);
    const std::vector<std::string> base = {"dialog_id", "position", "speaker", "label", "text"};
    bool has_lemma = false;
    if (header.size() == 6 && header[5] == "lemmatized_text") {
        has_lemma = true;
    } else if (header.size() != 5) {
        throw DataError(path + ": line 1: bad header (expected dialog_id/position/speaker/label/text[/lemmatized_text])");
    }
    for (std::size_t i = 0; i < base.size(); ++i) {
        if (header[i] != base[i]) {
            throw DataError(path + ": line 1: bad header column '" + header[i] + "'");
        }
    }
    const std::size_t expected_fields = has_lemma ? 6 : 5;

    CorpusReadResult result;
    result.has_lemmatized = has_lemma;
    std::set<std::string> labels;
    std::map<std::pair<std::string, std::size_t>, std::size_t> seen;  // (dialog, pos) -> line
    std::vector<std::string> dialog_order;
    std::unordered_map<std::string, std::vector<Segment>> by_dialog;

    for (std::size_t li = 1; li < lines.size(); ++li) {
        const std::string& line = lines[li];
        if (line.empty()) continue;
        const std::size_t line_no = li + 1;
        const auto fields = detail::split_tabs(line);
        if (fields.size() != expected_fields) {
            throw DataError(path + ": line " + std::to_string(line_no) + ": expected " +
                            std::to_string(expected_fields) + " fields, got " +
                            std::to_string(fields.size()));
        }
        Segment seg;
        seg.dialog_id = fields[0];
        if (!detail::parse_size(fields[1], seg.position)) {
            throw DataError(path + ": line " + std::to_string(line_no) +
                            ": position '" + fields[1] + "' is not a non-negative integer");
        }
        seg.speaker = fields[2];
        seg.label = fields[3];
        seg.text = fields[4];
        if (has_lemma) seg.lemmatized_text = fields[5];

        auto key = std::make_pair(seg.dialog_id, seg.position);
        auto [it, inserted] = seen.emplace(key, line_no);
        if (!inserted) {
            throw DataError(path + ": line " + std::to_string(line_no) + ": duplicate (dialog_id, position) (" +
                            seg.dialog_id + ", " + std::to_string(seg.position) +
                            ") first seen at line " + std::to_string(it->second));
        }
        if (by_dialog.find(seg.dialog_id) == by_dialog.end()) {
            dialog_order.push_back(seg.dialog_id);
        }
        labels.insert(seg.label);
        by_dialog[seg.dialog_id].push_back(std::move(seg));
    }

    for (const std::string& dialog : dialog_order) {
        auto& segs = by_dialog[dialog];
        std::sort(segs.begin(), segs.end(),
                  [](const Segment& a, const Segment& b) { return a.position < b.position; });
        for (std::size_t i = 0; i < segs.size(); ++i) {
            if (segs[i].position != i) {
                throw DataError(path + ": dialog '" + dialog +
                                "': positions not contiguous from 0 (missing position " +
                                std::to_string(i) + ")");
            }
        }
        std::size_t next_pos = 0;
        for (Segment& seg : segs) {
            if (seg.text.empty()) {
                result.warnings.push_back("dialog '" + dialog + "' position " +
                                          std::to_string(seg.position) +
                                          ": empty text, segment dropped");
                continue;
            }
            seg.position = next_pos++;
            result.segments.push_back(std::move(seg));
        }
    }

    result.labels = LabelSet(labels);
    return result;
}

/// Writes segments in the canonical TSV format (used by tests and converters).
/// The format has no quoting, so tabs and newlines inside fields are errors.
inline void write_corpus(const std::string& path, const std::vector<Segment>& segments,
                         bool with_lemmatized) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open file '" + path + "' for writing");
    auto check_field = [](const std::string& value) -> const std::string& {
        if (value.find('\t') != std::string::npos || value.find('\n') != std::string::npos) {
            throw DataError("corpus fields must not contain tabs or newlines: '" + value + "'");
        }
        return value;
    };
    out << "dialog_id\tposition\tspeaker\tlabel\ttext";
    if (with_lemmatized) out << "\tlemmatized_text";
    out << '\n';
    for (const Segment& s : segments) {
        out << check_field(s.dialog_id) << '\t' << s.position << '\t' << check_field(s.speaker)
            << '\t' << check_field(s.label) << '\t' << check_field(s.text);
        if (with_lemmatized) {
            out << '\t' << (s.lemmatized_text ? check_field(*s.lemmatized_text) : "");
        }
        out << '\n';
    }
}

enum class SplitMode { fixed_splits, k_fold };

/// Dialog-id lists describing either fixed train/validation/test splits or
/// k disjoint cross-validation folds.
struct SplitManifest {
    SplitMode mode = SplitMode::fixed_splits;
    std::vector<std::string> train, validation, test;  // fixed_splits
    std::vector<std::vector<std::string>> folds;       // k_fold
};

inline SplitManifest parse_manifest(const std::string& path) {
    const auto lines = detail::split_lines(detail::read_file(path));
    SplitManifest manifest;
    std::map<std::string, std::vector<std::string>> sections;
    std::string current;
    for (std::size_t li = 0; li < lines.size(); ++li) {
        std::string line = lines[li];
        // trim
        const auto b = line.find_first_not_of(" \t");
        const auto e = line.find_last_not_of(" \t");
        line = (b == std::string::npos) ? "" : line.substr(b, e - b + 1);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            current = line.substr(1, line.size() - 2);
            if (sections.count(current)) {
                throw DataError(path + ": line " + std::to_string(li + 1) +
                                ": duplicate section [" + current + "]");
            }
            sections[current];
            continue;
        }
        if (current.empty()) {
            throw DataError(path + ": line " + std::to_string(li + 1) +
                            ": dialog id outside any section");
        }
        sections[current].push_back(line);
    }

    const bool fixed = sections.count("train") || sections.count("validation") ||
                       sections.count("test");
    bool fold = false;
    for (const auto& [name, ids] : sections) {
        if (name.rfind("fold", 0) == 0) fold = true;
    }
    if (fixed && fold) throw DataError(path + ": manifest mixes fixed splits and folds");
    if (!fixed && !fold) throw DataError(path + ": manifest has no recognized sections");

    if (fixed) {
        for (const auto& [name, ids] : sections) {
            if (name != "train" && name != "validation" && name != "test") {
                throw DataError(path + ": unknown section [" + name + "]");
            }
        }
        manifest.mode = SplitMode::fixed_splits;
        auto get = [&](const char* name) {
            auto it = sections.find(name);
            if (it == sections.end()) {
                throw DataError(path + ": missing section [" + std::string(name) + "]");
            }
            return it->second;
        };
        manifest.train = get("train");
        manifest.validation = get("validation");
        manifest.test = get("test");
    } else {
        manifest.mode = SplitMode::k_fold;
        const std::size_t k = sections.size();
        if (k < 2) throw DataError(path + ": k_fold manifest requires k >= 2");
        manifest.folds.resize(k);
        for (const auto& [name, ids] : sections) {
            std::size_t index = 0;
            if (!detail::parse_size(name.substr(4), index) || index < 1 || index > k) {
                throw DataError(path + ": fold sections must be [fold1]..[fold" +
                                std::to_string(k) + "], got [" + name + "]");
            }
            manifest.folds[index - 1] = ids;
        }
    }

    // Disjointness across all lists.
    std::unordered_set<std::string> all;
    auto check_disjoint = [&](const std::vector<std::string>& ids, const std::string& where) {
        for (const std::string& id : ids) {
            if (!all.insert(id).second) {
                throw DataError(path + ": dialog id '" + id + "' appears in more than one " +
                                where);
            }
        }
    };
    if (manifest.mode == SplitMode::fixed_splits) {
        check_disjoint(manifest.train, "split");
        check_disjoint(manifest.validation, "split");
        check_disjoint(manifest.test, "split");
    } else {
        for (const auto& ids : manifest.folds) check_disjoint(ids, "fold");
    }
    return manifest;
}

/// One resolved (train, validation, test) triple. Fixed manifests produce
/// exactly one; a k-fold manifest produces k, with fold i as the test set
/// and the validation set carved from the training dialogs (last 10% by
/// sorted dialog id, at least one dialog).
struct SplitTriple {
    std::vector<Segment> train, validation, test;
};

struct ResolvedSplits {
    SplitMode mode = SplitMode::fixed_splits;
    std::vector<SplitTriple> parts;
};

namespace detail {

inline std::vector<Segment> segments_for(const std::vector<Segment>& segments,
                                         const std::unordered_set<std::string>& dialogs) {
    std::vector<Segment> out;
    for (const Segment& s : segments) {
        if (dialogs.count(s.dialog_id)) out.push_back(s);
    }
    return out;
}

inline void check_known(const std::vector<std::string>& ids,
                        const std::unordered_set<std::string>& known) {
    for (const std::string& id : ids) {
        if (!known.count(id)) {
            throw DataError("manifest references unknown dialog id '" + id + "'");
        }
    }
}

}  // namespace detail

inline ResolvedSplits resolve_splits(const std::vector<Segment>& segments,
                                     const SplitManifest& manifest) {
    std::unordered_set<std::string> known;
    for (const Segment& s : segments) known.insert(s.dialog_id);

    ResolvedSplits resolved;
    resolved.mode = manifest.mode;
    if (manifest.mode == SplitMode::fixed_splits) {
        detail::check_known(manifest.train, known);
        detail::check_known(manifest.validation, known);
        detail::check_known(manifest.test, known);
        SplitTriple triple;
        triple.train = detail::segments_for(
            segments, {manifest.train.begin(), manifest.train.end()});
        triple.validation = detail::segments_for(
            segments, {manifest.validation.begin(), manifest.validation.end()});
        triple.test = detail::segments_for(segments, {manifest.test.begin(), manifest.test.end()});
        resolved.parts.push_back(std::move(triple));
        return resolved;
    }

    for (const auto& fold : manifest.folds) detail::check_known(fold, known);
    const std::size_t k = manifest.folds.size();
    for (std::size_t i = 0; i < k; ++i) {
        std::vector<std::string> train_ids;
        for (std::size_t j = 0; j < k; ++j) {
            if (j == i) continue;
            train_ids.insert(train_ids.end(), manifest.folds[j].begin(), manifest.folds[j].end());
        }
        std::sort(train_ids.begin(), train_ids.end());
        const std::size_t n_val = std::max<std::size_t>(1, train_ids.size() / 10);
        if (train_ids.size() <= n_val) {
            throw DataError("fold " + std::to_string(i + 1) +
                            ": too few training dialogs to carve a validation set");
        }
        std::unordered_set<std::string> val_ids(train_ids.end() - static_cast<std::ptrdiff_t>(n_val),
                                                train_ids.end());
        std::unordered_set<std::string> tr_ids(train_ids.begin(),
                                               train_ids.end() - static_cast<std::ptrdiff_t>(n_val));
        SplitTriple triple;
        triple.train = detail::segments_for(segments, tr_ids);
        triple.validation = detail::segments_for(segments, val_ids);
        triple.test = detail::segments_for(
            segments, {manifest.folds[i].begin(), manifest.folds[i].end()});
        resolved.parts.push_back(std::move(triple));
    }
    return resolved;
}

/// Pre-trained embedding file parsed into token -> vector records.
/// Kept separate from table assembly so one parse can serve many runs.
struct EmbeddingFile {
    std::size_t dim = 0;
    std::unordered_map<std::string, std::vector<double>> vectors;
};

inline EmbeddingFile parse_embedding_file(const std::string& path) {
    const auto lines = detail::split_lines(detail::read_file(path));
    EmbeddingFile file;
    std::size_t first_data = 0;
    if (!lines.empty()) {
        // A first line of exactly two integer fields is a "count dim" header.
        std::istringstream iss(lines[0]);
        std::string a, b, extra;
        std::size_t av = 0, bv = 0;
        if ((iss >> a >> b) && !(iss >> extra) && detail::parse_size(a, av) &&
            detail::parse_size(b, bv)) {
            first_data = 1;
        }
    }
    for (std::size_t li = first_data; li < lines.size(); ++li) {
        if (lines[li].empty()) continue;
        std::istringstream iss(lines[li]);
        std::string token;
        if (!(iss >> token)) continue;
        std::vector<double> values;
        double v = 0.0;
        while (iss >> v) values.push_back(v);
        if (!iss.eof()) {
            throw DataError(path + ": line " + std::to_string(li + 1) +
                            ": malformed embedding value");
        }
        if (values.empty()) {
            throw DataError(path + ": line " + std::to_string(li + 1) + ": no values for token");
        }
        if (file.dim == 0) {
            file.dim = values.size();
        } else if (values.size() != file.dim) {
            throw DataError(path + ": line " + std::to_string(li + 1) + ": expected " +
                            std::to_string(file.dim) + " values, got " +
                            std::to_string(values.size()));
        }
        file.vectors.emplace(token, std::move(values));  // first occurrence wins
    }
    if (file.dim == 0) throw DataError(path + ": no embedding records");
    return file;
}

struct EmbeddingTable {
    Tensor table;  // [V x d]
    std::size_t dim = 0;
    std::size_t found = 0;
    double missing_fraction = 0.0;  // vocabulary tokens (beyond PAD/UNK) not in the file
};

/// Assembles a V x d table for the vocabulary. Tokens absent from the file
/// (always including UNK) get rows drawn from uniform(-0.05, 0.05) with the
/// run's seed; the PAD row is fixed all-zeros.
inline EmbeddingTable build_embedding_table(const EmbeddingFile& file, const Vocabulary& vocab,
                                            std::uint64_t seed) {
    SeededRng rng(seed, SeededRng::kEmbeddings);
    EmbeddingTable out;
    out.dim = file.dim;
    out.table = Tensor({vocab.size(), file.dim});
    std::size_t missing = 0;  // over real tokens only, indices 2..
    for (std::size_t i = 0; i < vocab.size(); ++i) {
        if (static_cast<int>(i) == Vocabulary::pad_index) continue;  // stays zero
        const bool reserved = static_cast<int>(i) == Vocabulary::unk_index;
        auto it = reserved ? file.vectors.end() : file.vectors.find(vocab.token(i));
        if (it != file.vectors.end()) {
            for (std::size_t k = 0; k < file.dim; ++k) out.table(i, k) = it->second[k];
            ++out.found;
        } else {
            for (std::size_t k = 0; k < file.dim; ++k) out.table(i, k) = rng.uniform(-0.05, 0.05);
            if (!reserved) ++missing;
        }
    }
    const std::size_t considered = vocab.size() > 2 ? vocab.size() - 2 : 0;
    out.missing_fraction =
        considered == 0 ? 0.0 : static_cast<double>(missing) / static_cast<double>(considered);
    return out;
}

inline EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab,
                                      std::uint64_t seed) {
    return build_embedding_table(parse_embedding_file(path), vocab, seed);
}

/// Context features for one segment: n_prev one-hot label blocks for the
/// preceding same-dialog segments (zeros where absent, nearest first),
/// followed by a speaker-change flag.
///
/// `labels_before` supplies the label index of every earlier segment in the
/// dialog: gold labels for training, the model's own predictions during
/// predicted-context evaluation. Only strictly earlier positions are read.
inline Tensor context_vector(const std::vector<const Segment*>& dialog, std::size_t position,
                             const std::vector<int>& labels_before, std::size_t label_count,
                             std::size_t n_prev) {
    if (position >= dialog.size()) throw ConfigError("context_vector: position out of range");
    if (labels_before.size() < position) {
        throw ConfigError("context_vector: labels missing for earlier positions");
    }
    Tensor features({n_prev * label_count + 1});
    for (std::size_t j = 0; j < n_prev; ++j) {
        if (position < j + 1) break;
        const std::size_t prev = position - 1 - j;
        const int label = labels_before[prev];
        if (label < 0 || static_cast<std::size_t>(label) >= label_count) {
            throw ConfigError("context_vector: label index out of range");
        }
        features(j * label_count + static_cast<std::size_t>(label)) = 1.0;
    }
    if (position > 0 && dialog[position]->speaker != dialog[position - 1]->speaker) {
        features(n_prev * label_count) = 1.0;
    }
    return features;
}

enum class ContextSource { gold, predicted };

/// Gold-context features for every segment of one dialog (ordered by
/// position).
inline std::vector<Tensor> extract_context(const std::vector<const Segment*>& dialog,
                                           const LabelSet& labels, std::size_t n_prev) {
    std::vector<int> gold;
    gold.reserve(dialog.size());
    for (const Segment* s : dialog) gold.push_back(labels.index_of(s->label));
    std::vector<Tensor> out;
    out.reserve(dialog.size());
    for (std::size_t p = 0; p < dialog.size(); ++p) {
        out.push_back(context_vector(dialog, p, gold, labels.size(), n_prev));
    }
    return out;
}

}  // namespace dact
