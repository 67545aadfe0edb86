// Dialog segments and the label inventory.

#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "dact/tensor.hpp"

namespace dact {

/// One dialog turn unit. Positions are contiguous from 0 within each dialog.
struct Segment {
    std::string dialog_id;
    std::size_t position = 0;
    std::string speaker;
    std::string label;
    std::string text;
    std::optional<std::string> lemmatized_text;
};

/// Ordered distinct label strings; index assignment is by sorted order.
class LabelSet {
public:
    LabelSet() = default;

    explicit LabelSet(const std::set<std::string>& labels) {
        labels_.assign(labels.begin(), labels.end());
        for (std::size_t i = 0; i < labels_.size(); ++i) {
            index_[labels_[i]] = static_cast<int>(i);
        }
    }

    static LabelSet from_segments(const std::vector<Segment>& segments) {
        std::set<std::string> labels;
        for (const Segment& s : segments) labels.insert(s.label);
        return LabelSet(labels);
    }

    int index_of(const std::string& label) const {
        auto it = index_.find(label);
        if (it == index_.end()) throw DataError("unknown label '" + label + "'");
        return it->second;
    }

    const std::string& label(std::size_t index) const { return labels_.at(index); }
    std::size_t size() const { return labels_.size(); }
    const std::vector<std::string>& labels() const { return labels_; }

private:
    std::vector<std::string> labels_;
    std::unordered_map<std::string, int> index_;
};

}  // namespace dact
