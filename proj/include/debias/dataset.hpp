#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "debias/common.hpp"

namespace debias {

using CategoryId = std::int32_t;

// Ordered label set; ids are dense 0..size-1 in entry order.
class Vocabulary {
public:
    Vocabulary() = default;
    Vocabulary(std::string name, std::vector<std::string> entries) : name_(std::move(name)) {
        for (auto& e : entries) add(std::move(e));
    }

    CategoryId add(std::string entry) {
        auto [it, inserted] = index_.emplace(entry, static_cast<CategoryId>(entries_.size()));
        require(inserted, "vocabulary '" + name_ + "': duplicate category name '" + entry + "'");
        entries_.push_back(std::move(entry));
        return it->second;
    }

    const std::string& name() const { return name_; }
    std::size_t size() const { return entries_.size(); }
    bool contains(CategoryId id) const { return id >= 0 && static_cast<std::size_t>(id) < entries_.size(); }

    const std::string& label(CategoryId id) const {
        require(contains(id), "vocabulary '" + name_ + "': id " + std::to_string(id) + " out of range");
        return entries_[static_cast<std::size_t>(id)];
    }

    std::optional<CategoryId> find(const std::string& entry) const {
        auto it = index_.find(entry);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    CategoryId id_of(const std::string& entry) const {
        auto id = find(entry);
        require(id.has_value(), "vocabulary '" + name_ + "': unknown category '" + entry + "'");
        return *id;
    }

    const std::vector<std::string>& entries() const { return entries_; }

private:
    std::string name_;
    std::vector<std::string> entries_;
    std::unordered_map<std::string, CategoryId> index_;
};

// A facet annotation: exactly one of a hard category, a soft distribution
// over the facet vocabulary, or a set of categories (multi-label).
struct FacetLabel {
    struct Hard {
        CategoryId id;
    };
    struct Soft {
        std::vector<double> probs;
    };
    struct Multi {
        std::vector<CategoryId> ids;  // sorted, unique
    };

    std::variant<Hard, Soft, Multi> value;

    static FacetLabel hard(CategoryId id) { return {Hard{id}}; }
    static FacetLabel soft(std::vector<double> probs) { return {Soft{std::move(probs)}}; }
    static FacetLabel multi(std::vector<CategoryId> ids) {
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
        return {Multi{std::move(ids)}};
    }

    bool is_hard() const { return std::holds_alternative<Hard>(value); }
    bool is_soft() const { return std::holds_alternative<Soft>(value); }
    bool is_multi() const { return std::holds_alternative<Multi>(value); }
};

inline constexpr double kSoftSumTolerance = 1e-6;

enum class SampleSource { curated, web };

struct Sample {
    std::string id;
    CategoryId action = 0;
    std::map<std::string, FacetLabel> facets;
    std::optional<double> teacher_confidence;  // only meaningful for web samples
    SampleSource source = SampleSource::curated;
};

struct ValidationIssue {
    std::string sample_id;  // empty for dataset-level issues
    std::string field;
    std::string message;
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;
    bool ok() const { return issues.empty(); }
};

struct Dataset {
    Vocabulary action_vocab;
    std::map<std::string, Vocabulary> facet_vocabs;
    std::vector<Sample> samples;

    const Vocabulary& facet_vocab(const std::string& facet) const {
        auto it = facet_vocabs.find(facet);
        require(it != facet_vocabs.end(), "unknown facet '" + facet + "'");
        return it->second;
    }

    const Sample& sample_by_id(const std::string& id) const {
        for (const auto& s : samples)
            if (s.id == id) return s;
        fail("unknown sample id '", id, "'");
    }
};

// Hard label -> that id. Soft -> argmax, ties broken toward the smallest id.
// Multi-label facets have no dominant category and are rejected.
inline CategoryId dominant_category(const Sample& sample, const std::string& facet) {
    auto it = sample.facets.find(facet);
    require(it != sample.facets.end(), "sample '" + sample.id + "': facet '" + facet + "' absent");
    const FacetLabel& label = it->second;
    if (label.is_hard()) return std::get<FacetLabel::Hard>(label.value).id;
    if (label.is_soft()) {
        const auto& p = std::get<FacetLabel::Soft>(label.value).probs;
        require(!p.empty(), "sample '" + sample.id + "': empty soft vector for facet '" + facet + "'");
        std::size_t best = 0;
        for (std::size_t k = 1; k < p.size(); ++k)
            if (p[k] > p[best]) best = k;
        return static_cast<CategoryId>(best);
    }
    fail("sample '", sample.id, "': facet '", facet, "' is multi-label, dominant category undefined");
}

namespace detail {

inline void check_facet_label(const Dataset& ds, const Sample& s, const std::string& facet,
                              const FacetLabel& label, ValidationReport& report) {
    auto vit = ds.facet_vocabs.find(facet);
    if (vit == ds.facet_vocabs.end()) {
        report.issues.push_back({s.id, "facets." + facet, "facet name not registered in header"});
        return;
    }
    const Vocabulary& vocab = vit->second;
    if (label.is_hard()) {
        CategoryId id = std::get<FacetLabel::Hard>(label.value).id;
        if (!vocab.contains(id))
            report.issues.push_back({s.id, "facets." + facet, "hard id " + std::to_string(id) + " out of range"});
    } else if (label.is_soft()) {
        const auto& p = std::get<FacetLabel::Soft>(label.value).probs;
        if (p.size() != vocab.size()) {
            report.issues.push_back({s.id, "facets." + facet,
                                     "soft vector length " + std::to_string(p.size()) + " != vocabulary size " +
                                         std::to_string(vocab.size())});
            return;
        }
        double sum = 0.0;
        bool negative = false;
        for (double v : p) {
            if (v < 0.0) negative = true;
            sum += v;
        }
        if (negative) report.issues.push_back({s.id, "facets." + facet, "soft vector has a negative entry"});
        if (std::abs(sum - 1.0) > kSoftSumTolerance)
            report.issues.push_back({s.id, "facets." + facet,
                                     "soft vector sums to " + std::to_string(sum) + ", expected 1 within 1e-6"});
    } else {
        for (CategoryId id : std::get<FacetLabel::Multi>(label.value).ids)
            if (!vocab.contains(id))
                report.issues.push_back(
                    {s.id, "facets." + facet, "multi id " + std::to_string(id) + " out of range"});
    }
}

}  // namespace detail

// Lists every invariant violation; an empty report means the dataset is valid.
inline ValidationReport validate(const Dataset& ds) {
    ValidationReport report;
    std::unordered_set<std::string> seen;
    for (const Sample& s : ds.samples) {
        if (!seen.insert(s.id).second)
            report.issues.push_back({s.id, "id", "duplicate sample id"});
        if (!ds.action_vocab.contains(s.action))
            report.issues.push_back({s.id, "action", "action id " + std::to_string(s.action) + " out of range"});
        if (s.teacher_confidence.has_value()) {
            if (s.source != SampleSource::web)
                report.issues.push_back({s.id, "confidence", "teacher confidence on a non-web sample"});
            else if (*s.teacher_confidence < 0.0 || *s.teacher_confidence > 1.0)
                report.issues.push_back({s.id, "confidence", "teacher confidence outside [0, 1]"});
        }
        for (const auto& [facet, label] : s.facets) detail::check_facet_label(ds, s, facet, label, report);
    }
    return report;
}

// --- JSON-lines dataset format -------------------------------------------
//
// Line 1 is a header object:
//   {"action_vocab": [names...], "facets": {name: [names...], ...}}
// Every following line is one sample:
//   {"id": "...", "action": name-or-id,
//    "facets": {name: {"hard": id} | {"soft": [floats]} | {"multi": [ids]}},
//    "confidence"?: float, "source"?: "curated"|"web"}

namespace detail {

inline FacetLabel parse_facet_label(const nlohmann::json& j, const std::string& sample_id,
                                    const std::string& facet) {
    require(j.is_object() && j.size() == 1,
            "sample '" + sample_id + "': facet '" + facet + "' must be exactly one of hard/soft/multi");
    if (j.contains("hard")) return FacetLabel::hard(j.at("hard").get<CategoryId>());
    if (j.contains("soft")) return FacetLabel::soft(j.at("soft").get<std::vector<double>>());
    if (j.contains("multi")) return FacetLabel::multi(j.at("multi").get<std::vector<CategoryId>>());
    fail("sample '", sample_id, "': facet '", facet, "' has unknown label kind");
}

}  // namespace detail

inline Dataset load_dataset(std::istream& in, const std::string& origin = "<stream>") {
    Dataset ds;
    std::string line;
    std::size_t line_no = 0;

    auto parse_line = [&](const std::string& text) {
        try {
            return nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            fail(origin, ":", std::to_string(line_no), ": malformed JSON line: ", e.what());
        }
    };

    // Header.
    for (;;) {
        require(static_cast<bool>(std::getline(in, line)), origin + ": empty file, expected header line");
        ++line_no;
        if (!line.empty()) break;
    }
    nlohmann::json header = parse_line(line);
    try {
        ds.action_vocab = Vocabulary("action", header.at("action_vocab").get<std::vector<std::string>>());
        for (const auto& [facet, names] : header.at("facets").items())
            ds.facet_vocabs.emplace(facet, Vocabulary(facet, names.get<std::vector<std::string>>()));
    } catch (const nlohmann::json::exception& e) {
        fail(origin, ":1: bad header: ", e.what());
    }

    std::unordered_set<std::string> seen_ids;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j = parse_line(line);
        Sample s;
        try {
            s.id = j.at("id").get<std::string>();
            const auto& action = j.at("action");
            if (action.is_string())
                s.action = ds.action_vocab.id_of(action.get<std::string>());
            else
                s.action = action.get<CategoryId>();
            if (j.contains("facets"))
                for (const auto& [facet, label] : j.at("facets").items())
                    s.facets.emplace(facet, detail::parse_facet_label(label, s.id, facet));
            if (j.contains("confidence")) s.teacher_confidence = j.at("confidence").get<double>();
            if (j.contains("source")) {
                std::string src = j.at("source").get<std::string>();
                require(src == "curated" || src == "web",
                        "sample '" + s.id + "': source must be 'curated' or 'web', got '" + src + "'");
                s.source = (src == "web") ? SampleSource::web : SampleSource::curated;
            }
        } catch (const nlohmann::json::exception& e) {
            fail(origin, ":", std::to_string(line_no), ": bad sample object: ", e.what());
        }

        require(seen_ids.insert(s.id).second,
                origin + ":" + std::to_string(line_no) + ": duplicate sample id '" + s.id + "'");
        require(ds.action_vocab.contains(s.action),
                origin + ":" + std::to_string(line_no) + ": sample '" + s.id + "': action id out of range");
        for (const auto& [facet, label] : s.facets) {
            ValidationReport r;
            detail::check_facet_label(ds, s, facet, label, r);
            if (!r.ok())
                fail(origin, ":", std::to_string(line_no), ": sample '", s.id, "': ", r.issues.front().message,
                     " (", r.issues.front().field, ")");
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open dataset file '" + path + "'");
    return load_dataset(in, path);
}

inline void save_dataset(const Dataset& ds, std::ostream& out) {
    nlohmann::json header;
    header["action_vocab"] = ds.action_vocab.entries();
    header["facets"] = nlohmann::json::object();
    for (const auto& [facet, vocab] : ds.facet_vocabs) header["facets"][facet] = vocab.entries();
    out << header.dump() << '\n';

    for (const Sample& s : ds.samples) {
        nlohmann::json j;
        j["id"] = s.id;
        j["action"] = ds.action_vocab.label(s.action);
        if (!s.facets.empty()) {
            nlohmann::json facets = nlohmann::json::object();
            for (const auto& [facet, label] : s.facets) {
                if (label.is_hard())
                    facets[facet] = {{"hard", std::get<FacetLabel::Hard>(label.value).id}};
                else if (label.is_soft())
                    facets[facet] = {{"soft", std::get<FacetLabel::Soft>(label.value).probs}};
                else
                    facets[facet] = {{"multi", std::get<FacetLabel::Multi>(label.value).ids}};
            }
            j["facets"] = std::move(facets);
        }
        if (s.teacher_confidence.has_value()) j["confidence"] = *s.teacher_confidence;
        if (s.source == SampleSource::web) j["source"] = "web";
        out << j.dump() << '\n';
    }
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "cannot open '" + path + "' for writing");
    save_dataset(ds, out);
}

}  // namespace debias
