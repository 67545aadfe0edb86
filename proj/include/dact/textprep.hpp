// Text preprocessing: character- and word-level tokenization under the
// capitalization/punctuation/lemmatization variants, vocabulary construction,
// and encoding of segments into padded index sequences.

#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dact/segment.hpp"
#include "dact/tensor.hpp"

namespace dact {

struct PreprocessingFlags {
    bool keep_capitalization = false;
    bool keep_punctuation = false;
    bool use_lemmatized_text = false;
};

namespace utf8 {

/// Decodes UTF-8 into codepoints; each invalid byte becomes U+FFFD.
inline std::vector<char32_t> decode(const std::string& s) {
    std::vector<char32_t> out;
    std::size_t i = 0;
    const std::size_t n = s.size();
    while (i < n) {
        const unsigned char b = static_cast<unsigned char>(s[i]);
        char32_t cp = 0;
        int len = 0;
        if (b < 0x80) {
            cp = b;
            len = 1;
        } else if ((b >> 5) == 0x6) {
            cp = b & 0x1F;
            len = 2;
        } else if ((b >> 4) == 0xE) {
            cp = b & 0x0F;
            len = 3;
        } else if ((b >> 3) == 0x1E) {
            cp = b & 0x07;
            len = 4;
        } else {
            out.push_back(0xFFFD);
            ++i;
            continue;
        }
        if (i + static_cast<std::size_t>(len) > n) {
            out.push_back(0xFFFD);
            ++i;
            continue;
        }
        bool ok = true;
        for (int j = 1; j < len; ++j) {
            const unsigned char cb = static_cast<unsigned char>(s[i + j]);
            if ((cb >> 6) != 0x2) {
                ok = false;
                break;
            }
            cp = (cp << 6) | (cb & 0x3F);
        }
        if (!ok) {
            out.push_back(0xFFFD);
            ++i;
            continue;
        }
        out.push_back(cp);
        i += static_cast<std::size_t>(len);
    }
    return out;
}

inline void append(std::string& s, char32_t cp) {
    if (cp < 0x80) {
        s.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        s.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        s.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        s.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        s.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

inline std::string encode(char32_t cp) {
    std::string s;
    append(s, cp);
    return s;
}

}  // namespace utf8

inline bool is_space_cp(char32_t c) {
    return (c >= 0x09 && c <= 0x0D) || c == 0x20 || c == 0x85 || c == 0xA0 ||
           c == 0x1680 || (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 ||
           c == 0x202F || c == 0x205F || c == 0x3000;
}

/// Punctuation per Unicode general categories P*, restricted to the blocks
/// this toolkit targets: ASCII, Latin-1 (covers Spanish inverted marks),
/// general punctuation, CJK symbols, and fullwidth forms.
inline bool is_punct_cp(char32_t c) {
    struct Range {
        char32_t lo, hi;
    };
    static constexpr Range kRanges[] = {
        {0x21, 0x23},     {0x25, 0x2A},     {0x2C, 0x2F},     {0x3A, 0x3B},
        {0x3F, 0x40},     {0x5B, 0x5D},     {0x5F, 0x5F},     {0x7B, 0x7B},
        {0x7D, 0x7D},     {0xA1, 0xA1},     {0xA7, 0xA7},     {0xAB, 0xAB},
        {0xB6, 0xB7},     {0xBB, 0xBB},     {0xBF, 0xBF},     {0x2010, 0x2027},
        {0x2030, 0x2043}, {0x2045, 0x2051}, {0x2053, 0x205E}, {0x3001, 0x3003},
        {0x3008, 0x3011}, {0x3014, 0x301F}, {0x30FB, 0x30FB}, {0xFF01, 0xFF03},
        {0xFF05, 0xFF0A}, {0xFF0C, 0xFF0F}, {0xFF1A, 0xFF1B}, {0xFF1F, 0xFF20},
        {0xFF3B, 0xFF3D}, {0xFF3F, 0xFF3F}, {0xFF5B, 0xFF5B}, {0xFF5D, 0xFF5D},
    };
    for (const Range& r : kRanges) {
        if (c < r.lo) return false;
        if (c <= r.hi) return true;
    }
    return false;
}

/// Simple case folding for Latin scripts (ASCII, Latin-1, Latin Extended-A);
/// other codepoints pass through unchanged. Idempotent.
inline char32_t to_lower_cp(char32_t c) {
    if (c >= U'A' && c <= U'Z') return c + 0x20;
    if ((c >= 0xC0 && c <= 0xD6) || (c >= 0xD8 && c <= 0xDE)) return c + 0x20;
    if (c == 0x178) return 0xFF;   // Y with diaeresis
    if (c == 0x130) return U'i';   // I with dot above
    if ((c >= 0x100 && c <= 0x137) || (c >= 0x14A && c <= 0x177)) {
        return (c % 2 == 0) ? c + 1 : c;
    }
    if ((c >= 0x139 && c <= 0x148) || (c >= 0x179 && c <= 0x17E)) {
        return (c % 2 == 1) ? c + 1 : c;
    }
    return c;
}

/// One token per Unicode character, after casing, whitespace normalization
/// (trim plus collapsing runs to a single space token) and, when punctuation
/// is dropped, removal of punctuation characters from the normalized
/// sequence. Returns an empty vector when nothing survives.
inline std::vector<std::string> char_tokenize(const std::string& text,
                                              const PreprocessingFlags& flags) {
    std::vector<char32_t> cps = utf8::decode(text);
    if (!flags.keep_capitalization) {
        for (char32_t& c : cps) c = to_lower_cp(c);
    }
    std::vector<char32_t> normalized;
    normalized.reserve(cps.size());
    bool pending_space = false;
    for (char32_t c : cps) {
        if (is_space_cp(c)) {
            if (!normalized.empty()) pending_space = true;
            continue;
        }
        if (pending_space) {
            normalized.push_back(U' ');
            pending_space = false;
        }
        normalized.push_back(c);
    }
    std::vector<std::string> tokens;
    tokens.reserve(normalized.size());
    for (char32_t c : normalized) {
        if (!flags.keep_punctuation && is_punct_cp(c)) continue;
        tokens.push_back(utf8::encode(c));
    }
    return tokens;
}

/// Whitespace split with punctuation detached into standalone tokens.
/// Hyphens and apostrophes between word characters stay inside the word.
/// With keep_punctuation=false the standalone punctuation tokens are deleted.
inline std::vector<std::string> word_tokenize(const std::string& text,
                                              const PreprocessingFlags& flags) {
    std::vector<char32_t> cps = utf8::decode(text);
    if (!flags.keep_capitalization) {
        for (char32_t& c : cps) c = to_lower_cp(c);
    }
    std::vector<std::string> tokens;
    std::vector<bool> is_punct_token;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            tokens.push_back(std::move(word));
            is_punct_token.push_back(false);
            word.clear();
        }
    };
    for (std::size_t i = 0; i < cps.size(); ++i) {
        const char32_t c = cps[i];
        if (is_space_cp(c)) {
            flush();
            continue;
        }
        if (is_punct_cp(c)) {
            const bool joiner = (c == U'-' || c == U'\'' || c == 0x2019);
            const bool next_is_word = i + 1 < cps.size() && !is_space_cp(cps[i + 1]) &&
                                      !is_punct_cp(cps[i + 1]);
            if (joiner && !word.empty() && next_is_word) {
                utf8::append(word, c);
            } else {
                flush();
                tokens.push_back(utf8::encode(c));
                is_punct_token.push_back(true);
            }
            continue;
        }
        utf8::append(word, c);
    }
    flush();
    if (!flags.keep_punctuation) {
        std::vector<std::string> kept;
        kept.reserve(tokens.size());
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (!is_punct_token[i]) kept.push_back(std::move(tokens[i]));
        }
        return kept;
    }
    return tokens;
}

enum class VocabKind { character, word };

/// Token-to-index bijection with reserved padding and unknown indices.
/// Indices are contiguous; tokens unseen at build time map to UNK.
class Vocabulary {
public:
    static constexpr int pad_index = 0;
    static constexpr int unk_index = 1;

    static const std::string& pad_token() {
        static const std::string t = "<pad>";
        return t;
    }
    static const std::string& unk_token() {
        static const std::string t = "<unk>";
        return t;
    }

    Vocabulary() = default;

    /// `ordered_tokens` occupy indices 2.. in the given order.
    Vocabulary(VocabKind kind, const std::vector<std::string>& ordered_tokens) : kind_(kind) {
        tokens_.reserve(ordered_tokens.size() + 2);
        tokens_.push_back(pad_token());
        tokens_.push_back(unk_token());
        tokens_.insert(tokens_.end(), ordered_tokens.begin(), ordered_tokens.end());
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            index_[tokens_[i]] = static_cast<int>(i);
        }
        if (index_.size() != tokens_.size()) {
            throw ConfigError("vocabulary tokens must be distinct");
        }
    }

    VocabKind kind() const { return kind_; }
    std::size_t size() const { return tokens_.size(); }

    int lookup(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? unk_index : it->second;
    }

    bool contains(const std::string& token) const { return index_.count(token) > 0; }

    const std::string& token(std::size_t index) const { return tokens_.at(index); }
    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    VocabKind kind_ = VocabKind::character;
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

inline std::vector<std::string> tokenize(VocabKind kind, const std::string& text,
                                         const PreprocessingFlags& flags) {
    return kind == VocabKind::character ? char_tokenize(text, flags)
                                        : word_tokenize(text, flags);
}

/// The text column a segment contributes under the given flags.
inline const std::string& source_text(const Segment& segment,
                                      const PreprocessingFlags& flags) {
    if (!flags.use_lemmatized_text) return segment.text;
    if (!segment.lemmatized_text.has_value()) {
        throw ConfigError("use_lemmatized_text requires a lemmatized text column (missing for dialog '" +
                          segment.dialog_id + "' position " + std::to_string(segment.position) + ")");
    }
    return *segment.lemmatized_text;
}

/// Builds a vocabulary from the training split only. Tokens with frequency
/// below min_count are excluded; index order is descending frequency with
/// lexicographic tie-breaking, so construction is deterministic.
inline Vocabulary build_vocabulary(const std::vector<Segment>& training, VocabKind kind,
                                   const PreprocessingFlags& flags, std::size_t min_count) {
    if (training.empty()) throw ConfigError("build_vocabulary: empty training set");
    std::unordered_map<std::string, std::size_t> counts;
    for (const Segment& seg : training) {
        for (const std::string& tok : tokenize(kind, source_text(seg, flags), flags)) {
            ++counts[tok];
        }
    }
    std::vector<std::pair<std::string, std::size_t>> items;
    items.reserve(counts.size());
    for (auto& [tok, count] : counts) {
        if (count < min_count) continue;
        if (tok == Vocabulary::pad_token() || tok == Vocabulary::unk_token()) continue;
        items.emplace_back(tok, count);
    }
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::string> ordered;
    ordered.reserve(items.size());
    for (auto& [tok, count] : items) ordered.push_back(std::move(tok));
    return Vocabulary(kind, ordered);
}

/// A segment encoded for the model: padded index sequences plus metadata.
/// Positions at or beyond valid_length are always PAD.
struct EncodedSegment {
    std::vector<int> char_indices;
    std::size_t char_valid = 0;
    std::vector<int> word_indices;
    std::size_t word_valid = 0;
    int label = -1;
    std::string dialog_id;
    std::size_t position = 0;
    std::string speaker;

    friend bool operator==(const EncodedSegment&, const EncodedSegment&) = default;
};

namespace detail {
inline void fill_indices(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                         std::size_t pad_to, std::vector<int>& out, std::size_t& valid) {
    if (pad_to == 0) throw ConfigError("encode: pad length must be positive");
    valid = std::min(tokens.size(), pad_to);
    out.assign(pad_to, Vocabulary::pad_index);
    for (std::size_t i = 0; i < valid; ++i) out[i] = vocab.lookup(tokens[i]);
}
}  // namespace detail

/// Encodes one segment for the configured branches (pass nullptr for an
/// unused vocabulary). Texts longer than the pad length are truncated at it.
/// Returns nullopt when any requested tokenization comes back empty.
inline std::optional<EncodedSegment> encode(const Segment& segment,
                                            const Vocabulary* char_vocab,
                                            const Vocabulary* word_vocab,
                                            const PreprocessingFlags& flags,
                                            std::size_t pad_to_char, std::size_t pad_to_word,
                                            const LabelSet& labels) {
    EncodedSegment enc;
    enc.dialog_id = segment.dialog_id;
    enc.position = segment.position;
    enc.speaker = segment.speaker;
    enc.label = labels.index_of(segment.label);
    const std::string& src = source_text(segment, flags);
    if (char_vocab) {
        const auto tokens = char_tokenize(src, flags);
        if (tokens.empty()) return std::nullopt;
        detail::fill_indices(tokens, *char_vocab, pad_to_char, enc.char_indices, enc.char_valid);
    }
    if (word_vocab) {
        const auto tokens = word_tokenize(src, flags);
        if (tokens.empty()) return std::nullopt;
        detail::fill_indices(tokens, *word_vocab, pad_to_word, enc.word_indices, enc.word_valid);
    }
    return enc;
}

}  // namespace dact
