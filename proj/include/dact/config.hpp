// Key-value configuration files with bracketed sections, as used for model
// configs and experiment specs. Every key has a documented default; unknown
// keys or sections are errors.
//
// Syntax: `key = value` lines, `[section]` headers, `#` comments, blank
// lines ignored. Values run to end of line. Lists are comma-separated.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dact/corpus.hpp"
#include "dact/model.hpp"
#include "dact/tensor.hpp"

namespace dact {

class ConfigFile {
public:
    static ConfigFile parse_file(const std::string& path) {
        return parse_string(detail::read_file(path), path);
    }

    static ConfigFile parse_string(const std::string& content, const std::string& origin) {
        ConfigFile cfg;
        cfg.origin_ = origin;
        const auto lines = detail::split_lines(content);
        std::string section;  // "" = top level
        for (std::size_t li = 0; li < lines.size(); ++li) {
            std::string line = strip(lines[li]);
            if (line.empty() || line.front() == '#') continue;
            const std::size_t line_no = li + 1;
            if (line.front() == '[') {
                if (line.back() != ']') {
                    throw ConfigError(origin + ": line " + std::to_string(line_no) +
                                      ": unterminated section header");
                }
                section = strip(line.substr(1, line.size() - 2));
                if (section.empty()) {
                    throw ConfigError(origin + ": line " + std::to_string(line_no) +
                                      ": empty section name");
                }
                cfg.sections_.insert(section);
                continue;
            }
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(origin + ": line " + std::to_string(line_no) +
                                  ": expected 'key = value'");
            }
            const std::string key = strip(line.substr(0, eq));
            const std::string value = strip(line.substr(eq + 1));
            if (key.empty()) {
                throw ConfigError(origin + ": line " + std::to_string(line_no) + ": empty key");
            }
            auto [it, inserted] =
                cfg.entries_.emplace(std::make_pair(section, key), Entry{value, line_no});
            if (!inserted) {
                throw ConfigError(origin + ": line " + std::to_string(line_no) +
                                  ": duplicate key '" + qualify(section, key) + "'");
            }
        }
        return cfg;
    }

    bool has_section(const std::string& section) const { return sections_.count(section) > 0; }

    /// Marks a section as recognized even if no key from it is consumed.
    void acknowledge_section(const std::string& section) { known_sections_.insert(section); }

    std::optional<std::string> take(const std::string& section, const std::string& key) {
        known_sections_.insert(section);
        auto it = entries_.find(std::make_pair(section, key));
        if (it == entries_.end()) return std::nullopt;
        it->second.consumed = true;
        return it->second.value;
    }

    std::string take_string(const std::string& section, const std::string& key,
                            const std::string& fallback) {
        auto v = take(section, key);
        return v ? *v : fallback;
    }

    bool take_bool(const std::string& section, const std::string& key, bool fallback) {
        auto v = take(section, key);
        if (!v) return fallback;
        if (*v == "true") return true;
        if (*v == "false") return false;
        throw bad_value(section, key, *v, "true or false");
    }

    std::size_t take_size(const std::string& section, const std::string& key,
                          std::size_t fallback) {
        auto v = take(section, key);
        if (!v) return fallback;
        std::size_t out = 0;
        if (!detail::parse_size(*v, out)) throw bad_value(section, key, *v, "a non-negative integer");
        return out;
    }

    double take_double(const std::string& section, const std::string& key, double fallback) {
        auto v = take(section, key);
        if (!v) return fallback;
        try {
            std::size_t pos = 0;
            const double out = std::stod(*v, &pos);
            if (pos != v->size()) throw std::invalid_argument("");
            return out;
        } catch (const std::exception&) {
            throw bad_value(section, key, *v, "a decimal number");
        }
    }

    std::vector<std::size_t> take_size_list(const std::string& section, const std::string& key,
                                            std::vector<std::size_t> fallback) {
        auto v = take(section, key);
        if (!v) return fallback;
        std::vector<std::size_t> out;
        for (const std::string& item : split_csv(*v)) {
            std::size_t value = 0;
            if (!detail::parse_size(item, value)) {
                throw bad_value(section, key, *v, "a comma-separated integer list");
            }
            out.push_back(value);
        }
        if (out.empty()) throw bad_value(section, key, *v, "a non-empty list");
        return out;
    }

    /// Errors out if any key was never consumed or any section never
    /// recognized: unknown keys are configuration mistakes, not extensions.
    void finish() const {
        for (const auto& [section_key, entry] : entries_) {
            if (!entry.consumed) {
                throw ConfigError(origin_ + ": line " + std::to_string(entry.line) +
                                  ": unknown key '" + qualify(section_key.first, section_key.second) +
                                  "'");
            }
        }
        for (const std::string& s : sections_) {
            if (!known_sections_.count(s)) {
                throw ConfigError(origin_ + ": unknown section [" + s + "]");
            }
        }
    }

    const std::string& origin() const { return origin_; }

    static std::vector<std::string> split_csv(const std::string& s) {
        std::vector<std::string> out;
        std::size_t start = 0;
        while (start <= s.size()) {
            const std::size_t comma = s.find(',', start);
            if (comma == std::string::npos) {
                out.push_back(strip(s.substr(start)));
                break;
            }
            out.push_back(strip(s.substr(start, comma - start)));
            start = comma + 1;
        }
        while (!out.empty() && out.back().empty()) out.pop_back();
        return out;
    }

private:
    struct Entry {
        std::string value;
        std::size_t line = 0;
        bool consumed = false;
    };

    static std::string strip(const std::string& s) {
        const auto b = s.find_first_not_of(" \t");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t");
        return s.substr(b, e - b + 1);
    }

    static std::string qualify(const std::string& section, const std::string& key) {
        return section.empty() ? key : section + "." + key;
    }

    ConfigError bad_value(const std::string& section, const std::string& key,
                          const std::string& value, const std::string& expected) const {
        return ConfigError(origin_ + ": key '" + qualify(section, key) + "': value '" + value +
                           "' is not " + expected);
    }

    std::string origin_;
    std::map<std::pair<std::string, std::string>, Entry> entries_;
    std::set<std::string> sections_;
    std::set<std::string> known_sections_;
};

/// A model configuration together with the preprocessing and vocabulary
/// settings it was parsed with.
struct ParsedModelConfig {
    ModelConfig model;
    PreprocessingFlags preprocessing;
    std::size_t char_min_count = 1;
    std::size_t word_min_count = 2;
};

namespace detail {

inline EmbeddingMode parse_embedding_mode(const std::string& v, const std::string& origin) {
    if (v == "random_trainable") return EmbeddingMode::random_trainable;
    if (v == "pretrained_fixed") return EmbeddingMode::pretrained_fixed;
    if (v == "pretrained_trainable") return EmbeddingMode::pretrained_trainable;
    throw ConfigError(origin + ": embedding_mode '" + v +
                      "' is not random_trainable/pretrained_fixed/pretrained_trainable");
}

inline BranchConfig parse_branch(ConfigFile& cfg, VocabKind kind) {
    const std::string section = kind == VocabKind::character ? "char_branch" : "word_branch";
    BranchConfig bc;
    bc.kind = kind;
    if (kind == VocabKind::character) {
        bc.window_sizes = cfg.take_size_list(section, "windows", {3, 5, 7});
        bc.embedding_dim = cfg.take_size(section, "embedding_dim", 30);
        bc.embedding_mode = parse_embedding_mode(
            cfg.take_string(section, "embedding_mode", "random_trainable"), cfg.origin());
    } else {
        bc.window_sizes = cfg.take_size_list(section, "windows", {1, 2, 3});
        bc.embedding_dim = cfg.take_size(section, "embedding_dim", 200);
        bc.embedding_mode = parse_embedding_mode(
            cfg.take_string(section, "embedding_mode", "pretrained_fixed"), cfg.origin());
    }
    bc.filters_per_window = cfg.take_size(section, "filters", 100);
    bc.embedding_file = cfg.take_string(section, "embeddings", "");
    if (bc.embedding_mode != EmbeddingMode::random_trainable && bc.embedding_file.empty()) {
        throw ConfigError(cfg.origin() + ": [" + section +
                          "] uses pretrained embeddings but sets no 'embeddings' file");
    }
    return bc;
}

}  // namespace detail

/// Consumes the [model]/[training]/[char_branch]/[word_branch]/
/// [preprocessing]/[vocab] sections. Call cfg.finish() after consuming any
/// caller-specific keys.
inline ParsedModelConfig parse_model_config(ConfigFile& cfg) {
    ParsedModelConfig out;

    cfg.acknowledge_section("model");
    cfg.acknowledge_section("training");
    cfg.acknowledge_section("preprocessing");
    cfg.acknowledge_section("vocab");

    if (cfg.has_section("char_branch")) {
        out.model.branches.push_back(detail::parse_branch(cfg, VocabKind::character));
    }
    if (cfg.has_section("word_branch")) {
        out.model.branches.push_back(detail::parse_branch(cfg, VocabKind::word));
    }
    if (out.model.branches.empty()) {
        throw ConfigError(cfg.origin() + ": config needs a [char_branch] and/or [word_branch] section");
    }

    out.model.use_context = cfg.take_bool("model", "use_context", false);
    out.model.n_prev = cfg.take_size("model", "n_prev", 3);
    out.model.reduction_dim = cfg.take_size("model", "reduction_dim", 100);
    out.model.seed = cfg.take_size("model", "seed", 1);
    out.model.dropout = cfg.take_double("model", "dropout", 0.0);

    out.model.training.learning_rate = cfg.take_double("training", "learning_rate", 1e-3);
    out.model.training.beta1 = cfg.take_double("training", "beta1", 0.9);
    out.model.training.beta2 = cfg.take_double("training", "beta2", 0.999);
    out.model.training.epsilon = cfg.take_double("training", "epsilon", 1e-8);
    out.model.training.batch_size = cfg.take_size("training", "batch_size", 64);
    out.model.training.max_epochs = cfg.take_size("training", "max_epochs", 100);
    out.model.training.patience = cfg.take_size("training", "patience", 10);
    const std::string opt = cfg.take_string("training", "optimizer", "adam");
    if (opt == "adam") {
        out.model.training.optimizer = UpdateRule::adam;
    } else if (opt == "sgd") {
        out.model.training.optimizer = UpdateRule::sgd;
    } else {
        throw ConfigError(cfg.origin() + ": optimizer '" + opt + "' is not adam or sgd");
    }

    out.preprocessing.keep_capitalization =
        cfg.take_bool("preprocessing", "keep_capitalization", false);
    out.preprocessing.keep_punctuation = cfg.take_bool("preprocessing", "keep_punctuation", false);
    out.preprocessing.use_lemmatized_text =
        cfg.take_bool("preprocessing", "use_lemmatized_text", false);

    out.char_min_count = cfg.take_size("vocab", "char_min_count", 1);
    out.word_min_count = cfg.take_size("vocab", "word_min_count", 2);
    return out;
}

inline ParsedModelConfig parse_model_config_file(const std::string& path) {
    ConfigFile cfg = ConfigFile::parse_file(path);
    ParsedModelConfig out = parse_model_config(cfg);
    cfg.finish();
    return out;
}

/// One named experiment: a model configuration bound to data paths, a
/// context source and the list of run seeds.
struct ExperimentSpec {
    std::string name;
    std::string corpus_path;
    std::string manifest_path;
    std::vector<std::uint64_t> seeds = {1};
    ContextSource context_source = ContextSource::gold;
    ModelConfig model;
    PreprocessingFlags preprocessing;
    std::size_t char_min_count = 1;
    std::size_t word_min_count = 2;
};

inline std::vector<std::uint64_t> parse_seed_list(const std::string& value,
                                                  const std::string& origin) {
    std::vector<std::uint64_t> seeds;
    for (const std::string& item : ConfigFile::split_csv(value)) {
        std::size_t v = 0;
        if (!detail::parse_size(item, v)) {
            throw ConfigError(origin + ": seeds '" + value + "' must be a comma-separated integer list");
        }
        seeds.push_back(v);
    }
    if (seeds.empty()) throw ConfigError(origin + ": seeds list is empty");
    return seeds;
}

inline ContextSource parse_context_source(const std::string& v, const std::string& origin) {
    if (v == "gold") return ContextSource::gold;
    if (v == "predicted") return ContextSource::predicted;
    throw ConfigError(origin + ": context_source '" + v + "' is not gold or predicted");
}

inline ExperimentSpec parse_experiment_spec(const std::string& path) {
    ConfigFile cfg = ConfigFile::parse_file(path);
    ExperimentSpec spec;
    auto name = cfg.take("", "name");
    if (!name || name->empty()) throw ConfigError(path + ": experiment spec needs a top-level 'name'");
    spec.name = *name;
    auto corpus = cfg.take("", "corpus");
    if (!corpus) throw ConfigError(path + ": experiment spec needs a top-level 'corpus' path");
    spec.corpus_path = *corpus;
    auto manifest = cfg.take("", "manifest");
    if (!manifest) throw ConfigError(path + ": experiment spec needs a top-level 'manifest' path");
    spec.manifest_path = *manifest;
    if (auto seeds = cfg.take("", "seeds")) spec.seeds = parse_seed_list(*seeds, path);
    spec.context_source =
        parse_context_source(cfg.take_string("", "context_source", "gold"), path);

    ParsedModelConfig parsed = parse_model_config(cfg);
    cfg.finish();
    spec.model = parsed.model;
    spec.preprocessing = parsed.preprocessing;
    spec.char_min_count = parsed.char_min_count;
    spec.word_min_count = parsed.word_min_count;
    return spec;
}

}  // namespace dact
