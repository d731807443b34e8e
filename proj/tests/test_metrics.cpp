#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "debias/metrics.hpp"
#include "support/oracles.hpp"

using namespace debias;
using Catch::Approx;

namespace {

std::vector<PredictionRecord> records_from_counts(
    const std::map<std::tuple<CategoryId, CategoryId, CategoryId>, int>& counts) {
    std::vector<PredictionRecord> records;
    int serial = 0;
    for (const auto& [key, n] : counts) {
        auto [y, yh, z] = key;
        for (int i = 0; i < n; ++i) {
            PredictionRecord r;
            r.sample_id = "r" + std::to_string(serial++);
            r.true_action = y;
            r.predicted_action = yh;
            r.facet_category["scene"] = z;
            records.push_back(std::move(r));
        }
    }
    return records;
}

}  // namespace

TEST_CASE("entropy basics") {
    CHECK(entropy({5, 0, 0}) == 0.0);
    CHECK(entropy({1, 1}) == Approx(std::log(2.0)).margin(1e-12));
    CHECK(entropy({1, 1, 1, 1}) == Approx(std::log(4.0)).margin(1e-12));
    CHECK_THROWS_AS(entropy({0, 0}), Error);
}

TEST_CASE("nmi on canonical tables") {
    ContingencyTable indep(2, 2);
    indep.add(0, 0, 2), indep.add(0, 1, 2), indep.add(1, 0, 2), indep.add(1, 1, 2);
    CHECK(nmi(indep) == Approx(0.0).margin(1e-12));

    ContingencyTable diag(2, 2);
    diag.add(0, 0, 3), diag.add(1, 1, 3);
    CHECK(nmi(diag) == Approx(1.0).margin(1e-12));

    ContingencyTable mixed(2, 2);
    mixed.add(0, 0, 4), mixed.add(0, 1, 1), mixed.add(1, 0, 1), mixed.add(1, 1, 4);
    CHECK(nmi(mixed) == Approx(oracles::nmi_direct(mixed)).margin(1e-12));

    CHECK_THROWS_AS(nmi(ContingencyTable(2, 2)), Error);
}

TEST_CASE("nmi is symmetric and bounded; matches the direct-formula oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        auto t = oracles::random_table(rng);
        double v = nmi(t);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK(v == Approx(oracles::nmi_direct(t)).margin(1e-9));

        ContingencyTable transposed(t.cols(), t.rows());
        for (std::size_t r = 0; r < t.rows(); ++r)
            for (std::size_t c = 0; c < t.cols(); ++c) transposed.add(c, r, t.at(r, c));
        CHECK(nmi(transposed) == Approx(v).margin(1e-12));
    }
}

TEST_CASE("nmi is invariant to category permutations") {
    Rng rng(12);
    auto t = oracles::random_table(rng);
    std::vector<std::size_t> perm(t.rows());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    ContingencyTable permuted(t.rows(), t.cols());
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) permuted.add(perm[r], c, t.at(r, c));
    CHECK(nmi(permuted) == Approx(nmi(t)).margin(1e-12));
}

TEST_CASE("conditional_nmi") {
    SECTION("independent inside every slice gives zero") {
        // Product-form counts per slice: n(k, r, c) = a_k(r) b_k(c).
        ContingencyTable t(2, 2, 2);
        int a0[2] = {2, 1}, b0[2] = {1, 3}, a1[2] = {1, 2}, b1[2] = {2, 1};
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 2; ++c) {
                t.add(0, r, c, a0[r] * b0[c]);
                t.add(1, r, c, a1[r] * b1[c]);
            }
        CHECK(conditional_nmi(t) == Approx(0.0).margin(1e-12));
    }
    SECTION("a single slice reduces to plain nmi") {
        Rng rng(13);
        for (int trial = 0; trial < 20; ++trial) {
            auto flat = oracles::random_table(rng);
            ContingencyTable t(1, flat.rows(), flat.cols());
            for (std::size_t r = 0; r < flat.rows(); ++r)
                for (std::size_t c = 0; c < flat.cols(); ++c) t.add(0, r, c, flat.at(r, c));
            CHECK(conditional_nmi(t) == Approx(nmi(flat)).margin(1e-12));
        }
    }
    SECTION("random 3-D tables match the direct-formula oracle") {
        Rng rng(14);
        for (int trial = 0; trial < 300; ++trial) {
            auto t = oracles::random_table(rng, 4, 30, /*conditional=*/true);
            double v = conditional_nmi(t);
            CHECK(v >= 0.0);
            CHECK(v == Approx(oracles::conditional_nmi_direct(t)).margin(1e-9));
        }
    }
}

TEST_CASE("fairness_report on a perfect predictor") {
    Rng rng(15);
    std::map<std::tuple<CategoryId, CategoryId, CategoryId>, int> counts;
    ContingencyTable yz(3, 3);
    for (CategoryId y = 0; y < 3; ++y)
        for (CategoryId z = 0; z < 3; ++z) {
            int n = 1 + static_cast<int>(rng.below(5));
            counts[{y, y, z}] = n;
            yz.add(static_cast<std::size_t>(y), static_cast<std::size_t>(z), n);
        }
    auto records = records_from_counts(counts);
    auto report = fairness_report(records, "scene");
    CHECK(report.independence == Approx(nmi(yz)).margin(1e-12));
    // Within each slice Y=y the prediction is constant, so I(Y'; Z | Y) = 0.
    CHECK(report.separation == Approx(0.0).margin(1e-12));
}

TEST_CASE("fairness_report on a constant predictor gives zero independence") {
    std::map<std::tuple<CategoryId, CategoryId, CategoryId>, int> counts;
    counts[{0, 1, 0}] = 3;
    counts[{1, 1, 1}] = 4;
    counts[{2, 1, 0}] = 2;
    auto report = fairness_report(records_from_counts(counts), "scene");
    CHECK(report.independence == 0.0);
}

TEST_CASE("fairness_report separation vanishes when Y' is independent of Z within Y") {
    std::map<std::tuple<CategoryId, CategoryId, CategoryId>, int> counts;
    int a0[2] = {2, 1}, b0[2] = {1, 3};  // slice y=0: n(y', z) = a0[y'] b0[z]
    int a1[2] = {1, 2}, b1[2] = {2, 1};
    for (CategoryId yh = 0; yh < 2; ++yh)
        for (CategoryId z = 0; z < 2; ++z) {
            counts[{0, yh, z}] = a0[yh] * b0[z];
            counts[{1, yh, z}] = a1[yh] * b1[z];
        }
    auto report = fairness_report(records_from_counts(counts), "scene");
    CHECK(report.separation == Approx(0.0).margin(1e-9));
}

TEST_CASE("equalized_odds_variance") {
    SECTION("perfect predictor has zero variance") {
        std::map<std::tuple<CategoryId, CategoryId, CategoryId>, int> counts;
        counts[{0, 0, 0}] = 6;
        counts[{0, 0, 1}] = 6;
        counts[{1, 1, 0}] = 6;
        counts[{1, 1, 1}] = 6;
        CHECK(equalized_odds_variance(records_from_counts(counts), "scene") == 0.0);
    }
    SECTION("recalls {1, 0} give variance 0.25") {
        std::map<std::tuple<CategoryId, CategoryId, CategoryId>, int> counts;
        counts[{0, 0, 0}] = 5;  // recall 1.0 on z=0
        counts[{0, 1, 1}] = 5;  // recall 0.0 on z=1
        CHECK(equalized_odds_variance(records_from_counts(counts), "scene") == Approx(0.25).margin(1e-12));
    }
    SECTION("three-action fixture matches a group-by oracle") {
        Rng rng(16);
        std::vector<PredictionRecord> records;
        for (int i = 0; i < 600; ++i) {
            PredictionRecord r;
            r.sample_id = "r" + std::to_string(i);
            r.true_action = static_cast<CategoryId>(rng.below(3));
            r.predicted_action = rng.uniform01() < 0.6 ? r.true_action : static_cast<CategoryId>(rng.below(3));
            r.facet_category["scene"] = static_cast<CategoryId>(rng.below(4));
            records.push_back(std::move(r));
        }
        // Independent group-by computation.
        std::map<CategoryId, std::map<CategoryId, std::pair<int, int>>> by_action;
        for (const auto& r : records) {
            auto& cell = by_action[r.true_action][r.facet_category.at("scene")];
            cell.first += 1;
            if (r.predicted_action == r.true_action) cell.second += 1;
        }
        const int min_support = 5;
        double total = 0.0;
        int used = 0;
        for (const auto& [y, groups] : by_action) {
            std::vector<double> recalls;
            for (const auto& [z, cell] : groups)
                if (cell.first >= min_support)
                    recalls.push_back(static_cast<double>(cell.second) / cell.first);
            if (recalls.size() < 2) continue;
            double mean = 0.0;
            for (double v : recalls) mean += v;
            mean /= static_cast<double>(recalls.size());
            double var = 0.0;
            for (double v : recalls) var += (v - mean) * (v - mean);
            total += var / static_cast<double>(recalls.size());
            ++used;
        }
        REQUIRE(used > 0);
        CHECK(equalized_odds_variance(records, "scene", min_support) ==
              Approx(total / used).margin(1e-12));
    }
    SECTION("invariant under k-fold record duplication") {
        std::map<std::tuple<CategoryId, CategoryId, CategoryId>, int> counts;
        counts[{0, 0, 0}] = 7;
        counts[{0, 1, 1}] = 5;
        counts[{0, 0, 1}] = 6;
        auto records = records_from_counts(counts);
        double base = equalized_odds_variance(records, "scene");
        auto tripled = records;
        tripled.insert(tripled.end(), records.begin(), records.end());
        tripled.insert(tripled.end(), records.begin(), records.end());
        CHECK(equalized_odds_variance(tripled, "scene") == Approx(base).margin(1e-12));
    }
    SECTION("error when no action qualifies") {
        std::map<std::tuple<CategoryId, CategoryId, CategoryId>, int> counts;
        counts[{0, 0, 0}] = 3;  // single facet category only
        CHECK_THROWS_AS(equalized_odds_variance(records_from_counts(counts), "scene"), Error);
    }
}

TEST_CASE("top1_accuracy") {
    std::map<std::tuple<CategoryId, CategoryId, CategoryId>, int> counts;
    counts[{0, 0, 0}] = 3;
    counts[{1, 0, 0}] = 1;
    auto records = records_from_counts(counts);
    CHECK(top1_accuracy(records) == Approx(0.75));
    counts.clear();
    counts[{0, 0, 0}] = 4;
    CHECK(top1_accuracy(records_from_counts(counts)) == 1.0);
    counts.clear();
    counts[{0, 1, 0}] = 4;
    CHECK(top1_accuracy(records_from_counts(counts)) == 0.0);
    CHECK_THROWS_AS(top1_accuracy({}), Error);
}

TEST_CASE("prediction records round-trip through JSON lines") {
    std::map<std::tuple<CategoryId, CategoryId, CategoryId>, int> counts;
    counts[{0, 1, 2}] = 2;
    counts[{1, 1, 0}] = 1;
    auto records = records_from_counts(counts);
    std::ostringstream out;
    save_records(records, out);
    std::istringstream in(out.str());
    auto back = load_records(in, "rt");
    REQUIRE(back.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(back[i].sample_id == records[i].sample_id);
        CHECK(back[i].true_action == records[i].true_action);
        CHECK(back[i].predicted_action == records[i].predicted_action);
        CHECK(back[i].facet_category == records[i].facet_category);
    }
}
