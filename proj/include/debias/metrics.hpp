#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "debias/common.hpp"
#include "debias/dataset.hpp"

namespace debias {

// Empirical joint counts. 2-D (rows x cols), or 3-D with a leading condition
// axis for the conditional metrics.
class ContingencyTable {
public:
    ContingencyTable(std::size_t rows, std::size_t cols)
        : conditions_(1), rows_(rows), cols_(cols), counts_(rows * cols, 0) {}
    ContingencyTable(std::size_t conditions, std::size_t rows, std::size_t cols)
        : conditions_(conditions), rows_(rows), cols_(cols), counts_(conditions * rows * cols, 0) {}

    std::size_t conditions() const { return conditions_; }
    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    std::int64_t& at(std::size_t r, std::size_t c) { return at(0, r, c); }
    std::int64_t at(std::size_t r, std::size_t c) const { return at(0, r, c); }
    std::int64_t& at(std::size_t k, std::size_t r, std::size_t c) {
        return counts_[(k * rows_ + r) * cols_ + c];
    }
    std::int64_t at(std::size_t k, std::size_t r, std::size_t c) const {
        return counts_[(k * rows_ + r) * cols_ + c];
    }

    void add(std::size_t r, std::size_t c, std::int64_t n = 1) { at(0, r, c) += n; }
    void add(std::size_t k, std::size_t r, std::size_t c, std::int64_t n) { at(k, r, c) += n; }

    std::int64_t total() const {
        std::int64_t t = 0;
        for (auto v : counts_) t += v;
        return t;
    }

    std::int64_t slice_total(std::size_t k) const {
        std::int64_t t = 0;
        for (std::size_t r = 0; r < rows_; ++r)
            for (std::size_t c = 0; c < cols_; ++c) t += at(k, r, c);
        return t;
    }

private:
    std::size_t conditions_, rows_, cols_;
    std::vector<std::int64_t> counts_;
};

// H = -sum p_i ln p_i in nats, with 0 ln 0 = 0.
inline double entropy(const std::vector<std::int64_t>& counts) {
    std::int64_t total = 0;
    for (auto c : counts) {
        require(c >= 0, "entropy: negative count");
        total += c;
    }
    require(total > 0, "entropy: all-zero count vector");
    double h = 0.0;
    for (auto c : counts) {
        if (c == 0) continue;
        double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log(p);
    }
    return h;
}

namespace detail {

struct SliceInfo {
    double mi = 0.0;       // I(R;C) within the slice, nats
    double h_row = 0.0;    // H(R)
    double h_col = 0.0;    // H(C)
    std::int64_t n = 0;
};

inline SliceInfo slice_info(const ContingencyTable& t, std::size_t k) {
    SliceInfo info;
    std::vector<std::int64_t> row_sum(t.rows(), 0), col_sum(t.cols(), 0);
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) {
            std::int64_t v = t.at(k, r, c);
            require(v >= 0, "contingency table: negative count");
            row_sum[r] += v;
            col_sum[c] += v;
            info.n += v;
        }
    if (info.n == 0) return info;
    const double n = static_cast<double>(info.n);
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) {
            std::int64_t v = t.at(k, r, c);
            if (v == 0) continue;
            double p = static_cast<double>(v) / n;
            double pr = static_cast<double>(row_sum[r]) / n;
            double pc = static_cast<double>(col_sum[c]) / n;
            info.mi += p * std::log(p / (pr * pc));
        }
    for (auto v : row_sum)
        if (v > 0) info.h_row -= (v / n) * std::log(v / n);
    for (auto v : col_sum)
        if (v > 0) info.h_col -= (v / n) * std::log(v / n);
    if (info.mi < 0.0) info.mi = 0.0;  // clamp float noise
    return info;
}

}  // namespace detail

inline double mutual_information(const ContingencyTable& t) {
    require(t.conditions() == 1, "mutual_information expects a 2-D table");
    require(t.total() > 0, "mutual_information: empty table");
    return detail::slice_info(t, 0).mi;
}

// I(R;C) / sqrt(H(R) H(C)). A zero-entropy marginal (a constant variable)
// yields 0: a constant is independent of everything.
inline double nmi(const ContingencyTable& t) {
    require(t.conditions() == 1, "nmi expects a 2-D table");
    require(t.total() > 0, "nmi: empty table");
    auto info = detail::slice_info(t, 0);
    double denom = std::sqrt(info.h_row * info.h_col);
    if (denom <= 0.0) return 0.0;
    return std::min(1.0, info.mi / denom);
}

// I(R;C|K) = sum_k (n_k/n) I(R;C|K=k), normalized by the geometric mean of
// the conditional entropies H(R|K), H(C|K). Empty slices contribute nothing.
inline double conditional_nmi(const ContingencyTable& t) {
    std::int64_t n_total = t.total();
    require(n_total > 0, "conditional_nmi: empty table");
    double mi = 0.0, h_row = 0.0, h_col = 0.0;
    for (std::size_t k = 0; k < t.conditions(); ++k) {
        auto info = detail::slice_info(t, k);
        if (info.n == 0) continue;
        double w = static_cast<double>(info.n) / static_cast<double>(n_total);
        mi += w * info.mi;
        h_row += w * info.h_row;
        h_col += w * info.h_col;
    }
    double denom = std::sqrt(h_row * h_col);
    if (denom <= 0.0) return 0.0;
    return std::min(1.0, mi / denom);
}

// One evaluated sample: ground truth, prediction, audited facet categories.
struct PredictionRecord {
    std::string sample_id;
    CategoryId true_action = 0;
    CategoryId predicted_action = 0;
    std::map<std::string, CategoryId> facet_category;
};

namespace detail {

inline CategoryId record_facet(const PredictionRecord& r, const std::string& facet) {
    auto it = r.facet_category.find(facet);
    require(it != r.facet_category.end(),
            "record '" + r.sample_id + "': no category for facet '" + facet + "'");
    return it->second;
}

struct RecordAxes {
    CategoryId max_true = 0, max_pred = 0, max_facet = 0;
};

inline RecordAxes record_axes(const std::vector<PredictionRecord>& records, const std::string& facet) {
    RecordAxes a;
    for (const auto& r : records) {
        a.max_true = std::max(a.max_true, r.true_action);
        a.max_pred = std::max(a.max_pred, r.predicted_action);
        a.max_facet = std::max(a.max_facet, record_facet(r, facet));
    }
    return a;
}

}  // namespace detail

struct FairnessReport {
    double independence = 0.0;  // NMI(Y', Z)
    double separation = 0.0;    // NMI(Y', Z | Y)
    double sufficiency = 0.0;   // NMI(Y, Z | Y')
};

inline FairnessReport fairness_report(const std::vector<PredictionRecord>& records, const std::string& facet) {
    require(!records.empty(), "fairness_report: no records");
    auto axes = detail::record_axes(records, facet);
    const std::size_t ny = static_cast<std::size_t>(axes.max_true) + 1;
    const std::size_t nyh = static_cast<std::size_t>(axes.max_pred) + 1;
    const std::size_t nz = static_cast<std::size_t>(axes.max_facet) + 1;

    ContingencyTable ind(nyh, nz);
    ContingencyTable sep(ny, nyh, nz);   // condition on Y
    ContingencyTable suf(nyh, ny, nz);   // condition on Y'
    for (const auto& r : records) {
        auto z = static_cast<std::size_t>(detail::record_facet(r, facet));
        auto y = static_cast<std::size_t>(r.true_action);
        auto yh = static_cast<std::size_t>(r.predicted_action);
        ind.add(yh, z);
        sep.add(y, yh, z, 1);
        suf.add(yh, y, z, 1);
    }
    return {nmi(ind), conditional_nmi(sep), conditional_nmi(suf)};
}

// Mean-over-actions population variance of per-facet recall
// P(Y'=y | Y=y, Z=z), using only facet categories with enough support.
inline double equalized_odds_variance(const std::vector<PredictionRecord>& records, const std::string& facet,
                                      std::int64_t min_support = 5) {
    require(!records.empty(), "equalized_odds_variance: no records");
    // (action, facet category) -> (total, correct)
    std::map<std::pair<CategoryId, CategoryId>, std::pair<std::int64_t, std::int64_t>> groups;
    for (const auto& r : records) {
        auto& g = groups[{r.true_action, detail::record_facet(r, facet)}];
        g.first += 1;
        if (r.predicted_action == r.true_action) g.second += 1;
    }

    std::map<CategoryId, std::vector<double>> recalls;
    for (const auto& [key, g] : groups)
        if (g.first >= min_support)
            recalls[key.first].push_back(static_cast<double>(g.second) / static_cast<double>(g.first));

    double sum = 0.0;
    std::size_t n_actions = 0;
    for (const auto& [action, rs] : recalls) {
        if (rs.size() < 2) continue;
        double mean = 0.0;
        for (double r : rs) mean += r;
        mean /= static_cast<double>(rs.size());
        double var = 0.0;
        for (double r : rs) var += (r - mean) * (r - mean);
        var /= static_cast<double>(rs.size());
        sum += var;
        ++n_actions;
    }
    require(n_actions > 0,
            "equalized_odds_variance: no action has 2 facet categories with support >= " +
                std::to_string(min_support));
    return sum / static_cast<double>(n_actions);
}

inline double top1_accuracy(const std::vector<PredictionRecord>& records) {
    require(!records.empty(), "top1_accuracy: empty input");
    std::size_t correct = 0;
    for (const auto& r : records)
        if (r.predicted_action == r.true_action) ++correct;
    return static_cast<double>(correct) / static_cast<double>(records.size());
}

// --- Prediction-record JSON lines: {"id","y","y_hat","z":{facet:id}} ------

inline std::vector<PredictionRecord> load_records(std::istream& in, const std::string& origin = "<stream>") {
    std::vector<PredictionRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            PredictionRecord r;
            r.sample_id = j.at("id").get<std::string>();
            r.true_action = j.at("y").get<CategoryId>();
            r.predicted_action = j.at("y_hat").get<CategoryId>();
            if (j.contains("z"))
                for (const auto& [facet, id] : j.at("z").items())
                    r.facet_category[facet] = id.get<CategoryId>();
            records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            fail(origin, ":", std::to_string(line_no), ": bad prediction record: ", e.what());
        }
    }
    return records;
}

inline std::vector<PredictionRecord> load_records(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open records file '" + path + "'");
    return load_records(in, path);
}

inline void save_records(const std::vector<PredictionRecord>& records, std::ostream& out) {
    for (const auto& r : records) {
        nlohmann::json j;
        j["id"] = r.sample_id;
        j["y"] = r.true_action;
        j["y_hat"] = r.predicted_action;
        if (!r.facet_category.empty()) {
            nlohmann::json z = nlohmann::json::object();
            for (const auto& [facet, id] : r.facet_category) z[facet] = id;
            j["z"] = std::move(z);
        }
        out << j.dump() << '\n';
    }
}

inline void save_records(const std::vector<PredictionRecord>& records, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "cannot open '" + path + "' for writing");
    save_records(records, out);
}

// Spearman rank correlation with average ranks for ties.
inline double spearman_rank_correlation(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size() && x.size() >= 2, "spearman: need two equally sized series");
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> order(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        std::size_t i = 0;
        while (i < order.size()) {
            std::size_t j = i;
            while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    std::vector<double> rx = ranks(x), ry = ranks(y);
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) mx += rx[i], my += ry[i];
    mx /= static_cast<double>(rx.size());
    my /= static_cast<double>(ry.size());
    double cov = 0.0, vx = 0.0, vy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx) * (rx[i] - mx);
        vy += (ry[i] - my) * (ry[i] - my);
    }
    double denom = std::sqrt(vx * vy);
    require(denom > 0.0, "spearman: a series is constant");
    return cov / denom;
}

// Flat metric map serializers used by the report CLI.
inline std::string metrics_to_csv(const std::map<std::string, double>& metrics) {
    std::ostringstream out;
    out << "metric,value\n";
    out.precision(17);
    for (const auto& [name, value] : metrics) out << name << ',' << value << '\n';
    return out.str();
}

// NMI(action, dominant facet category) over a subset of samples, the audit
// statistic attached to every split.
inline double dataset_nmi(const Dataset& ds, const std::vector<const Sample*>& subset, const std::string& facet) {
    require(!subset.empty(), "dataset_nmi: empty subset");
    const auto& vocab = ds.facet_vocab(facet);
    ContingencyTable t(ds.action_vocab.size(), vocab.size());
    for (const Sample* s : subset)
        t.add(static_cast<std::size_t>(s->action), static_cast<std::size_t>(dominant_category(*s, facet)));
    return nmi(t);
}

}  // namespace debias
