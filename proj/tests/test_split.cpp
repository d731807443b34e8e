#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>

#include "debias/split.hpp"
#include "debias/synth.hpp"

using namespace debias;
using Catch::Approx;

namespace {

// Compact builder: one class per action, hard facet labels by category name.
struct Builder {
    Dataset ds;

    Builder(std::vector<std::string> actions, std::map<std::string, std::vector<std::string>> facets) {
        ds.action_vocab = Vocabulary("action", std::move(actions));
        for (auto& [name, cats] : facets) ds.facet_vocabs.emplace(name, Vocabulary(name, cats));
    }

    void add(const std::string& id, const std::string& action,
             const std::map<std::string, std::string>& facet_cats) {
        Sample s;
        s.id = id;
        s.action = ds.action_vocab.id_of(action);
        for (const auto& [facet, cat] : facet_cats)
            s.facets.emplace(facet, FacetLabel::hard(ds.facet_vocab(facet).id_of(cat)));
        ds.samples.push_back(std::move(s));
    }
};

// One action, categories A x7, B x2, C x1 (the worked tail example).
Builder ten_sample_fixture() {
    Builder b({"act"}, {{"scene", {"A", "B", "C"}}});
    for (int i = 0; i < 7; ++i) b.add("v" + std::to_string(i), "act", {{"scene", "A"}});
    b.add("v7", "act", {{"scene", "B"}});
    b.add("v8", "act", {{"scene", "B"}});
    b.add("v9", "act", {{"scene", "C"}});
    return b;
}

std::set<std::string> as_set(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

std::set<CategoryId> side_categories(const Dataset& ds, const std::vector<std::string>& ids,
                                     const std::string& facet) {
    std::set<CategoryId> cats;
    for (const auto& id : ids) cats.insert(dominant_category(ds.sample_by_id(id), facet));
    return cats;
}

}  // namespace

TEST_CASE("z_frequency matches the worked examples") {
    SECTION("20 of 100 sharing a scene gives 0.2 each") {
        Builder b({"act"}, {{"scene", {"cliff", "s1", "s2", "s3", "s4"}}});
        for (int i = 0; i < 20; ++i) b.add("c" + std::to_string(i), "act", {{"scene", "cliff"}});
        for (int i = 0; i < 80; ++i)
            b.add("o" + std::to_string(i), "act", {{"scene", "s" + std::to_string(1 + i % 4)}});
        auto freq = z_frequency(b.ds, "scene");
        for (int i = 0; i < 20; ++i) CHECK(freq.at("c" + std::to_string(i)) == 0.2);
    }
    SECTION("164 of 989 sharing a scene gives 164/989") {
        Builder b({"act"}, {{"scene", {"rope bridge", "other"}}});
        for (int i = 0; i < 164; ++i) b.add("r" + std::to_string(i), "act", {{"scene", "rope bridge"}});
        for (int i = 0; i < 825; ++i) b.add("o" + std::to_string(i), "act", {{"scene", "other"}});
        auto freq = z_frequency(b.ds, "scene");
        CHECK(freq.at("r0") == 164.0 / 989.0);
        CHECK(freq.at("r0") == Approx(0.1658).margin(5e-5));
    }
    SECTION("all-distinct categories give 1/class-size") {
        Builder b({"act"}, {{"scene", {"a", "b", "c", "d"}}});
        b.add("s0", "act", {{"scene", "a"}});
        b.add("s1", "act", {{"scene", "b"}});
        b.add("s2", "act", {{"scene", "c"}});
        b.add("s3", "act", {{"scene", "d"}});
        auto freq = z_frequency(b.ds, "scene");
        for (const auto& [id, f] : freq) CHECK(f == 0.25);
    }
}

TEST_CASE("z_frequency error cases") {
    SECTION("empty action class") {
        Builder b({"act", "ghost"}, {{"scene", {"a"}}});
        b.add("s0", "act", {{"scene", "a"}});
        CHECK_THROWS_AS(z_frequency(b.ds, "scene"), Error);
    }
    SECTION("multi-label facet") {
        Builder b({"act"}, {{"tags", {"a", "b"}}});
        b.add("s0", "act", {});
        b.ds.samples[0].facets.emplace("tags", FacetLabel::multi({0, 1}));
        CHECK_THROWS_AS(z_frequency(b.ds, "tags"), Error);
    }
}

TEST_CASE("per-class z-frequencies summed once per distinct category equal 1") {
    auto bundle = generate_synthetic([] {
        SyntheticBiasSpec spec;
        spec.n_actions = 4;
        spec.n_scenes = 12;
        spec.n_train = 400;
        spec.n_test = 4;
        spec.rho = 0.5;
        spec.seed = 3;
        return spec;
    }());
    const Dataset& ds = bundle.train.dataset;
    auto freq = z_frequency(ds, "scene");
    std::map<CategoryId, std::map<CategoryId, double>> class_cat_freq;
    for (const Sample& s : ds.samples)
        class_cat_freq[s.action][dominant_category(s, "scene")] = freq.at(s.id);
    for (const auto& [action, cats] : class_cat_freq) {
        double total = 0.0;
        for (const auto& [cat, f] : cats) total += f;
        CHECK(total == Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("redistribute walks the tail by whole categories") {
    Builder b = ten_sample_fixture();
    SplitParams params{.facet = "scene", .top_k_classes = 1, .min_val_per_class = 3, .train_per_class = 5,
                       .seed = 42};
    auto split = redistribute(b.ds, params);
    CHECK(as_set(split.val_ids) == std::set<std::string>{"v7", "v8", "v9"});
    CHECK(split.train_ids.size() == 5);
    for (const auto& id : split.train_ids) CHECK(id[1] <= '6');  // all from category A
}

TEST_CASE("redistribute fails when one category covers the whole class") {
    Builder b({"act"}, {{"scene", {"only"}}});
    for (int i = 0; i < 10; ++i) b.add("v" + std::to_string(i), "act", {{"scene", "only"}});
    SplitParams params{.facet = "scene", .top_k_classes = 1, .min_val_per_class = 3, .train_per_class = 5,
                       .seed = 1};
    CHECK_THROWS_AS(redistribute(b.ds, params), Error);
}

TEST_CASE("redistribute is deterministic and keeps sides disjoint and atomic") {
    auto bundle = generate_synthetic([] {
        SyntheticBiasSpec spec;
        spec.n_actions = 5;
        spec.n_scenes = 20;
        spec.n_train = 1000;
        spec.n_test = 5;
        spec.rho = 0.6;
        spec.seed = 8;
        return spec;
    }());
    const Dataset& ds = bundle.train.dataset;
    SplitParams params{.facet = "scene", .top_k_classes = 5, .min_val_per_class = 10, .train_per_class = 100,
                       .seed = 17};
    auto a = redistribute(ds, params);
    auto b = redistribute(ds, params);
    CHECK(split_to_json(a).dump() == split_to_json(b).dump());

    std::set<std::string> train = as_set(a.train_ids), val = as_set(a.val_ids);
    CHECK(train.size() == a.train_ids.size());
    CHECK(val.size() == a.val_ids.size());
    for (const auto& id : val) CHECK(train.count(id) == 0);

    // Category atomicity per class at overlap 0.
    for (std::size_t action = 0; action < 5; ++action) {
        std::set<CategoryId> train_cats, val_cats;
        for (const auto& id : a.train_ids) {
            const Sample& s = ds.sample_by_id(id);
            if (s.action == static_cast<CategoryId>(action))
                train_cats.insert(dominant_category(s, "scene"));
        }
        for (const auto& id : a.val_ids) {
            const Sample& s = ds.sample_by_id(id);
            if (s.action == static_cast<CategoryId>(action))
                val_cats.insert(dominant_category(s, "scene"));
        }
        for (CategoryId c : val_cats) CHECK(train_cats.count(c) == 0);
    }

    CHECK(a.audit.count("nmi_train") == 1);
    CHECK(a.audit.count("nmi_val") == 1);
    CHECK(a.audit.count("nmi_random_train") == 1);
}

TEST_CASE("overlap 0 reproduces redistribute byte for byte") {
    Builder b = ten_sample_fixture();
    SplitParams params{.facet = "scene", .top_k_classes = 1, .min_val_per_class = 3, .train_per_class = 5,
                       .seed = 9};
    CHECK(split_to_json(redistribute(b.ds, params)).dump() ==
          split_to_json(overlap_split(b.ds, 0.0, params)).dump());
}

TEST_CASE("overlap 1 makes every val category present on the train side") {
    auto bundle = generate_synthetic([] {
        SyntheticBiasSpec spec;
        spec.n_actions = 4;
        spec.n_scenes = 16;
        spec.n_train = 800;
        spec.n_test = 4;
        spec.rho = 0.55;
        spec.seed = 21;
        return spec;
    }());
    const Dataset& ds = bundle.train.dataset;
    SplitParams params{.facet = "scene", .top_k_classes = 4, .min_val_per_class = 12, .train_per_class = 80,
                       .seed = 5};
    auto split = overlap_split(ds, 1.0, params);
    auto train_cats = side_categories(ds, split.train_ids, "scene");
    auto val_cats = side_categories(ds, split.val_ids, "scene");
    for (CategoryId c : val_cats) CHECK(train_cats.count(c) == 1);
}

TEST_CASE("overlap 0.5 on the 10-sample fixture swaps exactly one tail category") {
    Builder b = ten_sample_fixture();
    SplitParams params{.facet = "scene", .top_k_classes = 1, .min_val_per_class = 3, .train_per_class = 5,
                       .seed = 0};

    // Hand enumeration: the tail categories are C (v9) and B (v7, v8). If B
    // swaps back, the val side keeps C and draws two head replacements; if C
    // swaps, it keeps B and draws one. Replacements come from A, which stays
    // on the train side, so A appears on both sides.
    bool saw_b_swapped = false, saw_c_swapped = false;
    for (std::uint64_t seed : {1ULL, 2ULL}) {
        params.seed = seed;
        auto split = overlap_split(b.ds, 0.5, params);
        auto val = as_set(split.val_ids);
        REQUIRE(val.size() == 3);
        const bool kept_c = val.count("v9") == 1;
        const bool kept_b = val.count("v7") == 1 && val.count("v8") == 1;
        REQUIRE(kept_c != kept_b);  // exactly one tail category kept
        std::size_t replacements = 0;
        for (const auto& id : val)
            if (id != "v7" && id != "v8" && id != "v9") ++replacements;
        if (kept_c) {
            saw_b_swapped = true;
            CHECK(replacements == 2);
        } else {
            saw_c_swapped = true;
            CHECK(replacements == 1);
        }
        auto train_cats = side_categories(b.ds, split.train_ids, "scene");
        CHECK(train_cats.count(b.ds.facet_vocab("scene").id_of("A")) == 1);
        CHECK(split.train_ids.size() == 5);
    }
    CHECK(saw_b_swapped);
    CHECK(saw_c_swapped);
}

TEST_CASE("multi_facet_redistribute") {
    SECTION("same facet twice equals the single-facet split") {
        Builder b = ten_sample_fixture();
        SplitParams params{.facet = "scene", .top_k_classes = 1, .min_val_per_class = 3, .train_per_class = 5,
                           .seed = 4};
        auto single = redistribute(b.ds, params);
        auto multi = multi_facet_redistribute(b.ds, "scene", "scene", params);
        CHECK(as_set(multi.val_ids) == as_set(single.val_ids));
        CHECK(multi.val_ids.size() == single.val_ids.size());
    }

    SECTION("disjoint tails add up; overlapping tails dedup") {
        auto make = [](bool overlapping) {
            Builder b({"act"}, {{"scene", {"cs", "rs"}}, {"object", {"co", "ro"}}});
            for (int i = 0; i < 20; ++i) {
                std::string id = "s" + std::string(i < 10 ? "0" : "") + std::to_string(i);
                std::string scene = i >= 16 ? "rs" : "cs";  // scene tail: s16..s19
                std::string object;
                if (overlapping)
                    object = i >= 14 ? "ro" : "co";  // object tail: s14..s19
                else
                    object = i < 4 ? "ro" : "co";  // object tail: s00..s03
                b.add(id, "act", {{"scene", scene}, {"object", object}});
            }
            return b;
        };
        SplitParams params{.facet = "scene", .top_k_classes = 1, .min_val_per_class = 4, .train_per_class = 8,
                           .seed = 11};

        auto disjoint = multi_facet_redistribute(make(false).ds, "scene", "object", params);
        CHECK(disjoint.val_ids.size() == 8);  // 4 + 4, no shared samples

        auto overlapping = multi_facet_redistribute(make(true).ds, "scene", "object", params);
        CHECK(overlapping.val_ids.size() == 6);  // 4 + 6 with 4 shared
        CHECK(as_set(overlapping.val_ids).size() == overlapping.val_ids.size());
    }

    SECTION("val cap drops the most frequent ids deterministically") {
        Builder b({"act"}, {{"scene", {"cs", "rs"}}, {"object", {"co", "ro"}}});
        for (int i = 0; i < 20; ++i) {
            std::string id = "s" + std::string(i < 10 ? "0" : "") + std::to_string(i);
            b.add(id, "act",
                  {{"scene", i >= 16 ? "rs" : "cs"}, {"object", i < 4 ? "ro" : "co"}});
        }
        SplitParams params{.facet = "scene", .top_k_classes = 1, .min_val_per_class = 2, .train_per_class = 8,
                           .seed = 2};
        // Union is 8 ids, cap is 4. Every union id has combined frequency
        // 0.2 + 0.8 = 1.0, so the tie-break drops the four smallest ids:
        // s00..s03, leaving the scene tail s16..s19.
        auto split = multi_facet_redistribute(b.ds, "scene", "object", params);
        CHECK(as_set(split.val_ids) == std::set<std::string>{"s16", "s17", "s18", "s19"});
        CHECK(split.audit.at("val_cap") == 4.0);
        CHECK(split.audit.at("val_dropped") == 4.0);
    }
}

TEST_CASE("omnidebias_partition") {
    auto web_builder = [](int n) {
        Builder b({"act"}, {{"scene", {"A", "B", "C", "D"}}});
        // Category sizes 4/3/2 for n=9, plus extras drawn from D for n=10.
        for (int i = 0; i < n; ++i) {
            std::string cat = i < 4 ? "A" : i < 7 ? "B" : i < 9 ? "C" : "D";
            b.add("w" + std::to_string(i), "act", {{"scene", cat}});
        }
        mark_as_web(b.ds, 99);
        return b;
    };

    SECTION("class of 9 splits 3/3/3 with the highest frequencies in bias") {
        auto b = web_builder(9);
        auto part = omnidebias_partition(b.ds, "scene");
        CHECK(part.bias_ids.size() == 3);
        CHECK(part.mid_ids.size() == 3);
        CHECK(part.unbias_ids.size() == 3);
        // A has frequency 4/9, the top three sorted samples are all A.
        for (const auto& id : part.bias_ids)
            CHECK(dominant_category(b.ds.sample_by_id(id), "scene") == 0);
    }
    SECTION("class of 10 splits 3/3/4, remainder toward unbias") {
        auto b = web_builder(10);
        auto part = omnidebias_partition(b.ds, "scene");
        CHECK(part.bias_ids.size() == 3);
        CHECK(part.mid_ids.size() == 3);
        CHECK(part.unbias_ids.size() == 4);
    }
    SECTION("union covers the filtered input with no repeats") {
        auto b = web_builder(10);
        auto part = omnidebias_partition(b.ds, "scene");
        std::set<std::string> all;
        for (const auto& v : {part.bias_ids, part.mid_ids, part.unbias_ids})
            for (const auto& id : v) CHECK(all.insert(id).second);
        CHECK(all.size() == b.ds.samples.size());
    }
    SECTION("non-web samples are rejected") {
        auto b = web_builder(9);
        b.ds.samples[0].source = SampleSource::curated;
        b.ds.samples[0].teacher_confidence.reset();
        CHECK_THROWS_AS(omnidebias_partition(b.ds, "scene"), Error);
    }
    SECTION("confidence threshold filters; emptying a class is an error") {
        auto b = web_builder(9);
        for (auto& s : b.ds.samples) s.teacher_confidence = 0.4;
        b.ds.samples[0].teacher_confidence = 0.9;
        b.ds.samples[4].teacher_confidence = 0.9;
        b.ds.samples[7].teacher_confidence = 0.9;
        auto part = omnidebias_partition(b.ds, "scene", 0.5);
        CHECK(part.bias_ids.size() + part.mid_ids.size() + part.unbias_ids.size() == 3);
        CHECK_THROWS_AS(omnidebias_partition(b.ds, "scene", 0.95), Error);
    }
}

TEST_CASE("random_third_ids draws a classwise ceil-third") {
    Builder b({"a0", "a1"}, {{"scene", {"x"}}});
    for (int i = 0; i < 10; ++i) b.add("p" + std::to_string(i), "a0", {{"scene", "x"}});
    for (int i = 0; i < 9; ++i) b.add("q" + std::to_string(i), "a1", {{"scene", "x"}});
    auto ids = random_third_ids(b.ds, 7);
    CHECK(ids.size() == 4 + 3);
    CHECK(as_set(ids).size() == ids.size());
    CHECK(random_third_ids(b.ds, 7) == ids);  // seeded determinism
}

TEST_CASE("split and partition JSON round-trips") {
    Builder b = ten_sample_fixture();
    SplitParams params{.facet = "scene", .top_k_classes = 1, .min_val_per_class = 3, .train_per_class = 5,
                       .seed = 77};
    auto split = redistribute(b.ds, params);
    auto back = split_from_json(split_to_json(split));
    CHECK(split_to_json(back).dump() == split_to_json(split).dump());

    mark_as_web(b.ds, 3);
    auto part = omnidebias_partition(b.ds, "scene");
    auto part_back = partition_from_json(partition_to_json(part));
    CHECK(partition_to_json(part_back).dump() == partition_to_json(part).dump());
}
