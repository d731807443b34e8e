#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "debias/common.hpp"
#include "debias/dataset.hpp"
#include "debias/metrics.hpp"
#include "debias/rng.hpp"

namespace debias {

struct SplitParams {
    std::string facet;
    std::size_t top_k_classes = 1;
    std::size_t min_val_per_class = 50;   // "at least 50" tail videos per class
    std::size_t train_per_class = 400;    // head sample quota per class
    std::uint64_t seed = 0;

    void check() const {
        require(!facet.empty(), "SplitParams: facet name required");
        require(top_k_classes >= 1 && min_val_per_class >= 1 && train_per_class >= 1,
                "SplitParams: all counts must be >= 1");
    }
};

struct SplitAssignment {
    std::string name;
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    SplitParams params;
    std::map<std::string, double> audit;
};

struct WebPartition {
    std::string name;
    std::string facet;
    std::vector<std::string> bias_ids;
    std::vector<std::string> mid_ids;
    std::vector<std::string> unbias_ids;
    std::map<std::string, double> audit;
};

namespace detail {

struct ClassMember {
    const Sample* sample;
    CategoryId category;      // dominant facet category
    std::int64_t cat_count;   // size of that category within the class
};

// Members of one action class sorted by descending category size (that is,
// descending z-frequency), ties by ascending sample id.
struct ClassView {
    CategoryId action = 0;
    std::vector<ClassMember> sorted;
};

inline std::map<CategoryId, std::vector<const Sample*>> group_by_action(const Dataset& ds) {
    std::map<CategoryId, std::vector<const Sample*>> classes;
    for (const Sample& s : ds.samples) classes[s.action].push_back(&s);
    return classes;
}

inline ClassView make_class_view(CategoryId action,
                                 const std::vector<const Sample*>& members, const std::string& facet) {
    ClassView view;
    view.action = action;
    std::map<CategoryId, std::int64_t> cat_count;
    std::vector<std::pair<const Sample*, CategoryId>> cats;
    cats.reserve(members.size());
    for (const Sample* s : members) {
        CategoryId c = dominant_category(*s, facet);
        cat_count[c] += 1;
        cats.emplace_back(s, c);
    }
    view.sorted.reserve(members.size());
    for (auto& [s, c] : cats) view.sorted.push_back({s, c, cat_count[c]});
    std::sort(view.sorted.begin(), view.sorted.end(), [](const ClassMember& a, const ClassMember& b) {
        if (a.cat_count != b.cat_count) return a.cat_count > b.cat_count;
        return a.sample->id < b.sample->id;
    });
    return view;
}

inline std::vector<CategoryId> top_k_actions(const std::map<CategoryId, std::vector<const Sample*>>& classes,
                                             std::size_t k) {
    require(classes.size() >= k, "dataset has " + std::to_string(classes.size()) +
                                     " action classes, need at least " + std::to_string(k));
    std::vector<CategoryId> actions;
    for (const auto& [a, members] : classes) actions.push_back(a);
    std::stable_sort(actions.begin(), actions.end(), [&](CategoryId a, CategoryId b) {
        return classes.at(a).size() > classes.at(b).size();
    });
    actions.resize(k);
    std::sort(actions.begin(), actions.end());
    return actions;
}

struct ClassSplit {
    std::vector<const Sample*> train;
    std::vector<const Sample*> val;
};

// Tail-to-head split of one class with an optional overlap swap.
// Steps: walk the frequency-sorted list from the tail collecting whole
// categories until the val side reaches min_val; optionally swap a seeded
// fraction of those categories back against head samples; finally draw the
// train quota from the head.
inline ClassSplit split_class(const ClassView& view, const SplitParams& params, double overlap_fraction) {
    const std::size_t n = view.sorted.size();

    // 1. Tail walk, whole categories, accumulation order.
    std::vector<CategoryId> val_cats;
    std::set<CategoryId> val_cat_set;
    std::size_t val_count = 0;
    for (std::size_t i = n; i-- > 0 && val_count < params.min_val_per_class;) {
        CategoryId c = view.sorted[i].category;
        if (val_cat_set.insert(c).second) {
            val_cats.push_back(c);
            val_count += static_cast<std::size_t>(view.sorted[i].cat_count);
        }
    }
    require(val_count < n, "class " + std::to_string(view.action) +
                               ": tail cannot be formed without emptying the class");
    require(n - val_count >= params.train_per_class,
            "class " + std::to_string(view.action) + ": only " + std::to_string(n - val_count) +
                " head samples left, need " + std::to_string(params.train_per_class));

    // 2. Overlap swap: a seeded fraction of val categories returns to the
    // head and is replaced by individual head samples, so those replacement
    // categories end up on both sides.
    std::set<CategoryId> swapped;
    const auto k = static_cast<std::size_t>(val_cats.size());
    auto m = static_cast<std::size_t>(std::llround(overlap_fraction * static_cast<double>(k)));
    std::vector<const Sample*> replacements;
    if (m > 0) {
        Rng rng = derive_rng(params.seed, "split/overlap/" + std::to_string(view.action));
        for (std::size_t idx : rng.sample_indices(k, m)) swapped.insert(val_cats[idx]);

        std::size_t removed = 0;
        for (const auto& member : view.sorted)
            if (swapped.count(member.category)) ++removed;

        // Replacements come from the original head, so a swapped-back
        // category moves to the train side in one piece.
        std::vector<const Sample*> pool;
        std::map<CategoryId, std::int64_t> pool_cat_count;
        for (const auto& member : view.sorted)
            if (!val_cat_set.count(member.category)) {
                pool.push_back(member.sample);
                pool_cat_count[member.category] += 1;
            }

        // Draw replacements from a seeded permutation, never taking the last
        // head copy of a category; each replacement category must stay
        // reachable for the train side.
        std::vector<std::size_t> order(pool.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        std::map<CategoryId, std::vector<const Sample*>> cat_of;  // rebuild category lookup
        std::unordered_map<const Sample*, CategoryId> sample_cat;
        for (const auto& member : view.sorted) sample_cat[member.sample] = member.category;
        for (std::size_t i = 0; i < order.size() && replacements.size() < removed; ++i) {
            const Sample* s = pool[order[i]];
            CategoryId c = sample_cat[s];
            if (pool_cat_count[c] <= 1) continue;
            pool_cat_count[c] -= 1;
            replacements.push_back(s);
        }
        require(replacements.size() == removed,
                "class " + std::to_string(view.action) +
                    ": cannot form the requested overlap without emptying head categories");
    }

    // 3. Assemble val side: kept tail categories in accumulation order, then
    // replacements in draw order.
    ClassSplit out;
    std::unordered_set<const Sample*> on_val;
    for (CategoryId c : val_cats) {
        if (swapped.count(c)) continue;
        for (const auto& member : view.sorted)
            if (member.category == c) {
                out.val.push_back(member.sample);
                on_val.insert(member.sample);
            }
    }
    for (const Sample* s : replacements) {
        out.val.push_back(s);
        on_val.insert(s);
    }

    // 4. Draw the train quota from the remaining head.
    std::vector<const Sample*> head;
    std::map<CategoryId, std::int64_t> head_cat_count;
    std::unordered_map<const Sample*, CategoryId> sample_cat;
    for (const auto& member : view.sorted) {
        sample_cat[member.sample] = member.category;
        bool kept_val_cat = val_cat_set.count(member.category) && !swapped.count(member.category);
        if (!kept_val_cat && !on_val.count(member.sample)) {
            head.push_back(member.sample);
            head_cat_count[member.category] += 1;
        }
    }
    Rng rng_train = derive_rng(params.seed, "split/train/" + std::to_string(view.action));
    std::vector<std::size_t> picks = rng_train.sample_indices(head.size(), params.train_per_class);
    std::vector<bool> picked(head.size(), false);
    for (std::size_t i : picks) picked[i] = true;
    out.train.reserve(picks.size());
    for (std::size_t i : picks) out.train.push_back(head[i]);

    // 5. Repair: every category that reached the val side through the swap
    // must also appear on the train side (the overlap invariant). Replace a
    // safe pick with the missing category's smallest-id head sample.
    if (!replacements.empty()) {
        std::set<CategoryId> needed;
        for (const Sample* s : replacements) needed.insert(sample_cat[s]);
        std::map<CategoryId, std::int64_t> picked_count;
        for (const Sample* s : out.train) picked_count[sample_cat[s]] += 1;
        for (CategoryId c : needed) {
            if (picked_count[c] > 0) continue;
            const Sample* incoming = nullptr;
            for (std::size_t i = 0; i < head.size(); ++i)
                if (!picked[i] && sample_cat[head[i]] == c &&
                    (!incoming || head[i]->id < incoming->id)) {
                    incoming = head[i];
                }
            require(incoming != nullptr, "class " + std::to_string(view.action) +
                                             ": overlap category exhausted before reaching the train side");
            bool replaced = false;
            for (std::size_t j = out.train.size(); j-- > 0;) {
                CategoryId vc = sample_cat[out.train[j]];
                if (picked_count[vc] >= 2 || !needed.count(vc)) {
                    picked_count[vc] -= 1;
                    out.train[j] = incoming;
                    picked_count[c] += 1;
                    replaced = true;
                    break;
                }
            }
            require(replaced, "class " + std::to_string(view.action) +
                                  ": train quota too small to cover the overlap categories");
        }
    }
    return out;
}

inline void audit_split(const Dataset& ds, const std::string& facet,
                        const std::map<CategoryId, ClassSplit>& splits, std::uint64_t seed,
                        const std::string& key_suffix, std::map<std::string, double>& audit) {
    std::vector<const Sample*> train, val, rand_train, rand_val;
    auto classes = group_by_action(ds);
    for (const auto& [action, split] : splits) {
        train.insert(train.end(), split.train.begin(), split.train.end());
        val.insert(val.end(), split.val.begin(), split.val.end());

        // Size-matched random split of the same class, for comparison.
        std::vector<const Sample*> members = classes.at(action);
        Rng rng = derive_rng(seed, "split/rand/" + std::to_string(action));
        rng.shuffle(members);
        require(members.size() >= split.val.size() + split.train.size(),
                "audit: class smaller than split sides");
        rand_val.insert(rand_val.end(), members.begin(), members.begin() + split.val.size());
        rand_train.insert(rand_train.end(), members.begin() + split.val.size(),
                          members.begin() + split.val.size() + split.train.size());
    }
    audit["nmi_train" + key_suffix] = dataset_nmi(ds, train, facet);
    audit["nmi_val" + key_suffix] = dataset_nmi(ds, val, facet);
    audit["nmi_random_train" + key_suffix] = dataset_nmi(ds, rand_train, facet);
    audit["nmi_random_val" + key_suffix] = dataset_nmi(ds, rand_val, facet);
}

}  // namespace detail

// Per-class share of samples whose dominant facet category matches the
// given sample's: 20 of 100 samples in a class sharing one scene means each
// of the 20 maps to 0.2.
inline std::unordered_map<std::string, double> z_frequency(const Dataset& ds, const std::string& facet) {
    ds.facet_vocab(facet);  // facet must exist
    auto classes = detail::group_by_action(ds);
    for (std::size_t a = 0; a < ds.action_vocab.size(); ++a)
        require(classes.count(static_cast<CategoryId>(a)) > 0,
                "z_frequency: empty action class '" + ds.action_vocab.label(static_cast<CategoryId>(a)) + "'");

    std::unordered_map<std::string, double> freq;
    freq.reserve(ds.samples.size());
    for (const auto& [action, members] : classes) {
        std::map<CategoryId, std::int64_t> cat_count;
        std::vector<std::pair<const Sample*, CategoryId>> cats;
        for (const Sample* s : members) {
            CategoryId c = dominant_category(*s, facet);
            cat_count[c] += 1;
            cats.emplace_back(s, c);
        }
        const auto size = static_cast<double>(members.size());
        for (auto& [s, c] : cats) freq[s->id] = static_cast<double>(cat_count[c]) / size;
    }
    return freq;
}

// Facet-based re-distribution with a tunable overlap knob. At fraction 0 the
// val side holds whole rare categories only (the plain re-distribution); at
// fraction 1 every val sample's category also appears on the train side.
inline SplitAssignment overlap_split(const Dataset& ds, double overlap_fraction, const SplitParams& params) {
    params.check();
    require(overlap_fraction >= 0.0 && overlap_fraction <= 1.0, "overlap fraction must be in [0, 1]");

    auto classes = detail::group_by_action(ds);
    auto actions = detail::top_k_actions(classes, params.top_k_classes);

    std::map<CategoryId, detail::ClassSplit> splits;
    for (CategoryId action : actions) {
        auto view = detail::make_class_view(action, classes.at(action), params.facet);
        splits.emplace(action, detail::split_class(view, params, overlap_fraction));
    }

    SplitAssignment out;
    out.name = (overlap_fraction == 0.0 ? "redistribute:" : "overlap:") + params.facet + ":seed" +
               std::to_string(params.seed);
    out.params = params;
    for (const auto& [action, split] : splits) {
        for (const Sample* s : split.train) out.train_ids.push_back(s->id);
        for (const Sample* s : split.val) out.val_ids.push_back(s->id);
    }
    detail::audit_split(ds, params.facet, splits, params.seed, "", out.audit);
    out.audit["overlap_fraction"] = overlap_fraction;
    return out;
}

inline SplitAssignment redistribute(const Dataset& ds, const SplitParams& params) {
    return overlap_split(ds, 0.0, params);
}

// Split by two facets at once: the val side is the union of the per-facet
// val sides (capped per class), the train side avoids both.
inline SplitAssignment multi_facet_redistribute(const Dataset& ds, const std::string& facet_a,
                                                const std::string& facet_b, const SplitParams& params) {
    params.check();
    auto classes = detail::group_by_action(ds);
    auto actions = detail::top_k_actions(classes, params.top_k_classes);

    SplitParams pa = params, pb = params;
    pa.facet = facet_a;
    pb.facet = facet_b;
    auto freq_a = z_frequency(ds, facet_a);
    auto freq_b = z_frequency(ds, facet_b);

    const std::size_t cap = 2 * params.min_val_per_class;
    std::size_t dropped_total = 0;
    std::map<CategoryId, detail::ClassSplit> splits;

    for (CategoryId action : actions) {
        auto view_a = detail::make_class_view(action, classes.at(action), facet_a);
        auto view_b = detail::make_class_view(action, classes.at(action), facet_b);
        auto split_a = detail::split_class(view_a, pa, 0.0);
        auto split_b = detail::split_class(view_b, pb, 0.0);

        // Union of the two val sides, dedup by id, order: a's then b's new ones.
        std::vector<const Sample*> val_union;
        std::unordered_set<const Sample*> in_union;
        for (const Sample* s : split_a.val)
            if (in_union.insert(s).second) val_union.push_back(s);
        for (const Sample* s : split_b.val)
            if (in_union.insert(s).second) val_union.push_back(s);

        // Cap val growth by dropping the most frequent (most biased) ids.
        if (val_union.size() > cap) {
            std::vector<const Sample*> by_freq = val_union;
            std::sort(by_freq.begin(), by_freq.end(), [&](const Sample* x, const Sample* y) {
                double fx = freq_a.at(x->id) + freq_b.at(x->id);
                double fy = freq_a.at(y->id) + freq_b.at(y->id);
                if (fx != fy) return fx > fy;
                return x->id < y->id;
            });
            std::unordered_set<const Sample*> drop(by_freq.begin(), by_freq.begin() + (val_union.size() - cap));
            dropped_total += drop.size();
            std::vector<const Sample*> kept;
            for (const Sample* s : val_union)
                if (!drop.count(s)) kept.push_back(s);
            val_union = std::move(kept);
        }

        // Train pool: class members in neither per-facet val set.
        std::vector<const Sample*> pool;
        for (const Sample* s : classes.at(action))
            if (!in_union.count(s)) pool.push_back(s);
        std::sort(pool.begin(), pool.end(),
                  [](const Sample* a, const Sample* b) { return a->id < b->id; });
        require(pool.size() >= params.train_per_class,
                "class " + std::to_string(action) + ": union of val sets leaves only " +
                    std::to_string(pool.size()) + " samples, need " + std::to_string(params.train_per_class));
        Rng rng = derive_rng(params.seed, "split/multi/" + std::to_string(action));
        detail::ClassSplit cs;
        for (std::size_t i : rng.sample_indices(pool.size(), params.train_per_class))
            cs.train.push_back(pool[i]);
        cs.val = std::move(val_union);
        splits.emplace(action, std::move(cs));
    }

    SplitAssignment out;
    out.name = "multi:" + facet_a + "+" + facet_b + ":seed" + std::to_string(params.seed);
    out.params = params;
    out.params.facet = facet_a + "+" + facet_b;
    for (const auto& [action, split] : splits) {
        for (const Sample* s : split.train) out.train_ids.push_back(s->id);
        for (const Sample* s : split.val) out.val_ids.push_back(s->id);
    }
    detail::audit_split(ds, facet_a, splits, params.seed, ":" + facet_a, out.audit);
    detail::audit_split(ds, facet_b, splits, params.seed, ":" + facet_b, out.audit);
    out.audit["val_cap"] = static_cast<double>(cap);
    out.audit["val_dropped"] = static_cast<double>(dropped_total);
    return out;
}

// Classwise z-frequency thirds of a web auxiliary dataset. The most biased
// third lands in bias, the least in unbias; remainders favor unbias, then mid.
inline WebPartition omnidebias_partition(const Dataset& ds, const std::string& facet,
                                         std::optional<double> confidence_threshold = std::nullopt) {
    ds.facet_vocab(facet);
    for (const Sample& s : ds.samples)
        require(s.source == SampleSource::web, "omnidebias_partition: non-web sample '" + s.id + "'");

    auto classes = detail::group_by_action(ds);
    for (std::size_t a = 0; a < ds.action_vocab.size(); ++a)
        require(classes.count(static_cast<CategoryId>(a)) > 0,
                "omnidebias_partition: empty action class '" +
                    ds.action_vocab.label(static_cast<CategoryId>(a)) + "'");

    WebPartition out;
    out.name = "partition:" + facet;
    out.facet = facet;
    std::vector<const Sample*> all_bias, all_mid, all_unbias;
    for (auto& [action, members] : classes) {
        std::vector<const Sample*> kept;
        for (const Sample* s : members) {
            if (confidence_threshold.has_value() &&
                (!s->teacher_confidence.has_value() || *s->teacher_confidence < *confidence_threshold))
                continue;
            kept.push_back(s);
        }
        require(!kept.empty(), "omnidebias_partition: class " + std::to_string(action) +
                                   " empty after confidence filtering");
        auto view = detail::make_class_view(action, kept, facet);

        const std::size_t n = view.sorted.size();
        const std::size_t q = n / 3, r = n % 3;
        const std::size_t n_bias = q;
        const std::size_t n_mid = q + (r == 2 ? 1 : 0);
        for (std::size_t i = 0; i < n; ++i) {
            const Sample* s = view.sorted[i].sample;
            if (i < n_bias)
                all_bias.push_back(s);
            else if (i < n_bias + n_mid)
                all_mid.push_back(s);
            else
                all_unbias.push_back(s);
        }
    }
    for (const Sample* s : all_bias) out.bias_ids.push_back(s->id);
    for (const Sample* s : all_mid) out.mid_ids.push_back(s->id);
    for (const Sample* s : all_unbias) out.unbias_ids.push_back(s->id);
    if (!all_bias.empty()) out.audit["nmi_bias"] = dataset_nmi(ds, all_bias, facet);
    if (!all_mid.empty()) out.audit["nmi_mid"] = dataset_nmi(ds, all_mid, facet);
    if (!all_unbias.empty()) out.audit["nmi_unbias"] = dataset_nmi(ds, all_unbias, facet);
    return out;
}

// Classwise uniform third, the "rand" baseline the partition is compared
// against. Sized like the unbias part (ceil thirds).
inline std::vector<std::string> random_third_ids(const Dataset& ds, std::uint64_t seed) {
    auto classes = detail::group_by_action(ds);
    std::vector<std::string> ids;
    for (auto& [action, members] : classes) {
        const std::size_t n = members.size();
        const std::size_t take = n / 3 + (n % 3 >= 1 ? 1 : 0);
        Rng rng = derive_rng(seed, "split/rand3/" + std::to_string(action));
        for (std::size_t i : rng.sample_indices(n, take)) ids.push_back(members[i]->id);
    }
    return ids;
}

// --- serialization --------------------------------------------------------

inline nlohmann::json split_to_json(const SplitAssignment& s) {
    nlohmann::json j;
    j["name"] = s.name;
    j["params"] = {{"facet", s.params.facet},
                   {"top_k_classes", s.params.top_k_classes},
                   {"min_val_per_class", s.params.min_val_per_class},
                   {"train_per_class", s.params.train_per_class},
                   {"seed", s.params.seed}};
    j["train_ids"] = s.train_ids;
    j["val_ids"] = s.val_ids;
    j["audit"] = s.audit;
    return j;
}

inline SplitAssignment split_from_json(const nlohmann::json& j) {
    SplitAssignment s;
    s.name = j.at("name").get<std::string>();
    const auto& p = j.at("params");
    s.params.facet = p.at("facet").get<std::string>();
    s.params.top_k_classes = p.at("top_k_classes").get<std::size_t>();
    s.params.min_val_per_class = p.at("min_val_per_class").get<std::size_t>();
    s.params.train_per_class = p.at("train_per_class").get<std::size_t>();
    s.params.seed = p.at("seed").get<std::uint64_t>();
    s.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    s.val_ids = j.at("val_ids").get<std::vector<std::string>>();
    if (j.contains("audit"))
        for (const auto& [k, v] : j.at("audit").items()) s.audit[k] = v.get<double>();
    return s;
}

inline nlohmann::json partition_to_json(const WebPartition& p) {
    nlohmann::json j;
    j["name"] = p.name;
    j["params"] = {{"facet", p.facet}};
    j["bias_ids"] = p.bias_ids;
    j["mid_ids"] = p.mid_ids;
    j["unbias_ids"] = p.unbias_ids;
    j["audit"] = p.audit;
    return j;
}

inline WebPartition partition_from_json(const nlohmann::json& j) {
    WebPartition p;
    p.name = j.at("name").get<std::string>();
    p.facet = j.at("params").at("facet").get<std::string>();
    p.bias_ids = j.at("bias_ids").get<std::vector<std::string>>();
    p.mid_ids = j.at("mid_ids").get<std::vector<std::string>>();
    p.unbias_ids = j.at("unbias_ids").get<std::vector<std::string>>();
    if (j.contains("audit"))
        for (const auto& [k, v] : j.at("audit").items()) p.audit[k] = v.get<double>();
    return p;
}

inline void write_id_list(const std::vector<std::string>& ids, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "cannot open '" + path + "' for writing");
    for (const auto& id : ids) out << id << '\n';
}

}  // namespace debias
