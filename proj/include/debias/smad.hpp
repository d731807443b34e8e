#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "debias/autodiff.hpp"
#include "debias/checkpoint.hpp"
#include "debias/common.hpp"
#include "debias/dataset.hpp"
#include "debias/metrics.hpp"
#include "debias/optim.hpp"
#include "debias/rng.hpp"
#include "debias/synth.hpp"

namespace debias {

inline constexpr double kLossLogClamp = 1e-12;

enum class AdvLossKind { softce, kldiv, softce_kldiv, bce };

inline AdvLossKind adv_loss_from_string(const std::string& s) {
    if (s == "softce") return AdvLossKind::softce;
    if (s == "kldiv") return AdvLossKind::kldiv;
    if (s == "softce+kldiv") return AdvLossKind::softce_kldiv;
    if (s == "bce") return AdvLossKind::bce;
    fail("unknown adversarial loss kind '", s, "' (softce|kldiv|softce+kldiv|bce)");
}

inline const char* adv_loss_to_string(AdvLossKind k) {
    switch (k) {
        case AdvLossKind::softce: return "softce";
        case AdvLossKind::kldiv: return "kldiv";
        case AdvLossKind::softce_kldiv: return "softce+kldiv";
        case AdvLossKind::bce: return "bce";
    }
    return "?";
}

struct FacetConfig {
    std::string name;
    AdvLossKind loss = AdvLossKind::softce_kldiv;
    double lambda = 0.5;  // 0.5 for SoftCE/KLDiv heads, 5 for BCE heads
};

struct SmadConfig {
    std::vector<std::size_t> channels = {6, 12};  // two backbone stages
    std::size_t grid_t = 1, grid_h = 14, grid_w = 14;
    std::vector<FacetConfig> facets;
    bool lambda_division = false;  // divide each lambda by the facet count
    bool saar_enabled = true;
    bool lambda_warmup = false;  // linear ramp over the first 10% of steps
    double lr = 0.08;
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::size_t epochs = 14;
    std::size_t batch_size = 32;
    double aux_fraction = 0.5;  // share of each batch drawn from aux data
    std::uint64_t seed = 0;

    void check() const {
        require(channels.size() == 2 && channels[0] >= 1 && channels[1] >= 1,
                "SmadConfig: channels must list the two backbone stage widths");
        require(grid_h >= 3 && grid_w >= 3, "SmadConfig: grid too small for 3x3 convolutions");
        require(batch_size >= 1, "SmadConfig: batch_size must be >= 1");
        require(lr >= 0.0 && momentum >= 0.0 && weight_decay >= 0.0, "SmadConfig: negative optimizer setting");
        require(aux_fraction >= 0.0 && aux_fraction < 1.0, "SmadConfig: aux_fraction must be in [0, 1)");
        for (const auto& f : facets) require(f.lambda >= 0.0, "SmadConfig: facet lambda must be >= 0");
    }

    double effective_lambda(std::size_t facet_index) const {
        double l = facets.at(facet_index).lambda;
        if (lambda_division && !facets.empty()) l /= static_cast<double>(facets.size());
        return l;
    }
};

// Backbone (two 3x3 conv stages) + SAAR between them + global mean pool +
// (M+1) linear heads; every facet head sits behind a gradient reversal.
class SmadModel {
public:
    SmadModel() = default;

    static SmadModel build(const SmadConfig& cfg, std::size_t n_actions,
                           const std::map<std::string, std::size_t>& facet_sizes) {
        cfg.check();
        require(n_actions >= 2, "SmadModel: need at least 2 actions");
        SmadModel m;
        m.cfg_ = cfg;
        m.n_actions_ = n_actions;
        const std::size_t c1 = cfg.channels[0], c2 = cfg.channels[1];
        const std::size_t bottleneck = std::max<std::size_t>(1, c1 / 4);

        m.stage1_ = m.add_param("backbone.stage1.weight", {c1, 1, 3, 3}, cfg.seed);
        m.stage2_ = m.add_param("backbone.stage2.weight", {c2, c1, 3, 3}, cfg.seed);
        m.saar_bottleneck_ = m.add_param("saar.bottleneck.weight", {bottleneck, c1, 3, 3}, cfg.seed);
        // Zero init: training starts at the uniform-mask identity.
        m.saar_head_ = m.add_param("saar.head.weight", {1, bottleneck, 3, 3}, cfg.seed, /*zero=*/true);
        m.action_head_ = m.add_param("head.action.weight", {c2, n_actions}, cfg.seed);
        for (const auto& f : cfg.facets) {
            auto it = facet_sizes.find(f.name);
            require(it != facet_sizes.end(), "SmadModel: facet '" + f.name + "' not present in the dataset");
            m.facet_heads_.push_back(m.add_param("head." + f.name + ".weight", {c2, it->second}, cfg.seed));
        }
        return m;
    }

    struct Forward {
        ad::Var pooled;                      // (N, C2) features feeding every head
        ad::Var action_logits;               // (N, n_actions)
        std::vector<ad::Var> facet_logits;   // (N, |Z_i|) each, behind grad_reverse
        ad::Var actionness_mask;             // (N, 1, T, H, W) normalized, null when SAAR is off
    };

    // lambda_scale: warm-up multiplier applied to every facet's lambda.
    Forward forward(const ad::Var& x, double lambda_scale = 1.0) const {
        require(x->value.rank() == 5 && x->value.dim(1) == 1 && x->value.dim(2) == cfg_.grid_t &&
                    x->value.dim(3) == cfg_.grid_h && x->value.dim(4) == cfg_.grid_w,
                "SmadModel: input shape " + x->value.shape_str() + " does not match the configured grid");
        Forward out;
        ad::Var f = ad::relu(ad::conv2d(x, stage1_));
        if (cfg_.saar_enabled) {
            auto [reweighted, mask] = saar_forward(f);
            f = reweighted;
            out.actionness_mask = mask;
        }
        f = ad::relu(ad::conv2d(f, stage2_));
        out.pooled = ad::global_mean_pool(f);
        out.action_logits = ad::matmul(out.pooled, action_head_);
        for (std::size_t i = 0; i < facet_heads_.size(); ++i) {
            ad::Var rev = ad::grad_reverse(out.pooled, cfg_.effective_lambda(i) * lambda_scale);
            out.facet_logits.push_back(ad::matmul(rev, facet_heads_[i]));
        }
        return out;
    }

    // Actionness reweighting: a 1-channel score map, 2D-softmax over (H, W),
    // multiplied back with the H*W coefficient that preserves magnitude.
    std::pair<ad::Var, ad::Var> saar_forward(const ad::Var& features) const {
        ad::Var a = ad::conv2d(ad::relu(ad::conv2d(features, saar_bottleneck_)), saar_head_);
        ad::Var mask = ad::spatial_softmax(a);
        const auto hw = static_cast<double>(features->value.dim(features->value.rank() - 2) *
                                            features->value.dim(features->value.rank() - 1));
        return {ad::scale(ad::mul_mask(features, mask), hw), mask};
    }

    const SmadConfig& config() const { return cfg_; }
    std::size_t n_actions() const { return n_actions_; }

    std::vector<ad::Var> parameters() const {
        std::vector<ad::Var> out;
        for (const auto& [name, p] : params_) out.push_back(p);
        return out;
    }

    ad::NamedTensors named_tensors() const {
        ad::NamedTensors out;
        for (const auto& [name, p] : params_) out.emplace_back(name, p->value);
        return out;
    }

    void load_tensors(const ad::NamedTensors& tensors) {
        std::map<std::string, const ad::Tensor*> by_name;
        for (const auto& [name, t] : tensors) by_name[name] = &t;
        for (auto& [name, p] : params_) {
            auto it = by_name.find(name);
            require(it != by_name.end(), "checkpoint: missing tensor '" + name + "'");
            require(it->second->shape == p->value.shape,
                    "checkpoint: shape mismatch for '" + name + "': file " +
                        ad::Tensor(it->second->shape).shape_str() + " vs model " + p->value.shape_str());
            p->value.data = it->second->data;
        }
    }

    ad::Var param(const std::string& name) const {
        for (const auto& [n, p] : params_)
            if (n == name) return p;
        fail("SmadModel: unknown parameter '", name, "'");
    }

private:
    ad::Var add_param(const std::string& name, std::vector<std::size_t> shape, std::uint64_t seed,
                      bool zero = false) {
        ad::Tensor t(shape);
        if (!zero) {
            // Uniform fan-in init from a per-parameter stream: adding or
            // removing other parameters never shifts this one's draw.
            std::size_t fan_in = 1;
            if (shape.size() == 4)
                fan_in = shape[1] * shape[2] * shape[3];
            else if (shape.size() == 2)
                fan_in = shape[0];
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            Rng rng = derive_rng(seed, "init/" + name);
            for (auto& v : t.data) v = (2.0 * rng.uniform01() - 1.0) * bound;
        }
        ad::Var p = ad::parameter(std::move(t));
        params_.emplace_back(name, p);
        return p;
    }

    SmadConfig cfg_;
    std::size_t n_actions_ = 0;
    std::vector<std::pair<std::string, ad::Var>> params_;
    ad::Var stage1_, stage2_, saar_bottleneck_, saar_head_, action_head_;
    std::vector<ad::Var> facet_heads_;
};

// --- adversarial losses (graph builders, summed over leading axes) --------

// -sum_k z_k ln pred_k, predictions clamped before the log.
inline ad::Var soft_ce_loss(const ad::Var& pred_probs, const ad::Tensor& target) {
    require(pred_probs->value.shape == target.shape,
            "soft_ce_loss: length mismatch " + pred_probs->value.shape_str() + " vs " +
                ad::Tensor(target.shape).shape_str());
    ad::Var z = ad::constant(target);
    return ad::scale(ad::sum(ad::mul(ad::log(ad::clamp_min(pred_probs, kLossLogClamp)), z)), -1.0);
}

// sum_k z_k ln(z_k / pred_k) with 0 ln 0 = 0.
inline ad::Var kldiv_loss(const ad::Var& pred_probs, const ad::Tensor& target) {
    require(pred_probs->value.shape == target.shape,
            "kldiv_loss: length mismatch " + pred_probs->value.shape_str() + " vs " +
                ad::Tensor(target.shape).shape_str());
    ad::Tensor log_z(target.shape);
    for (std::size_t i = 0; i < target.numel(); ++i) log_z[i] = target[i] > 0.0 ? std::log(target[i]) : 0.0;
    ad::Var diff = ad::add(ad::constant(std::move(log_z)),
                           ad::scale(ad::log(ad::clamp_min(pred_probs, kLossLogClamp)), -1.0));
    return ad::sum(ad::mul(ad::constant(target), diff));
}

// Mean over the class axis of the stable binary cross-entropy
// softplus(-x) + (1 - y) x, summed over leading axes.
inline ad::Var bce_loss(const ad::Var& logits, const ad::Tensor& target01) {
    require(logits->value.shape == target01.shape,
            "bce_loss: length mismatch " + logits->value.shape_str() + " vs " +
                ad::Tensor(target01.shape).shape_str());
    const auto k = static_cast<double>(logits->value.shape.back());
    ad::Tensor one_minus(target01.shape);
    for (std::size_t i = 0; i < target01.numel(); ++i) {
        require(target01[i] == 0.0 || target01[i] == 1.0, "bce_loss: targets must be 0/1 indicators");
        one_minus[i] = 1.0 - target01[i];
    }
    ad::Var sp = ad::softplus(ad::scale(logits, -1.0));
    ad::Var lin = ad::mul(ad::constant(std::move(one_minus)), logits);
    return ad::scale(ad::sum(ad::add(sp, lin)), 1.0 / k);
}

// --- batch assembly --------------------------------------------------------

struct DataView {
    const SyntheticData* data = nullptr;
    std::vector<std::size_t> indices;

    static DataView all(const SyntheticData& d) {
        DataView v;
        v.data = &d;
        v.indices.resize(d.size());
        for (std::size_t i = 0; i < v.indices.size(); ++i) v.indices[i] = i;
        return v;
    }

    static DataView of_ids(const SyntheticData& d, const std::vector<std::string>& ids) {
        std::map<std::string, std::size_t> index;
        for (std::size_t i = 0; i < d.size(); ++i) index.emplace(d.dataset.samples[i].id, i);
        DataView v;
        v.data = &d;
        for (const auto& id : ids) {
            auto it = index.find(id);
            require(it != index.end(), "DataView: id '" + id + "' not found in the dataset");
            v.indices.push_back(it->second);
        }
        return v;
    }

    std::size_t size() const { return indices.size(); }
};

namespace detail {

struct BatchRef {
    const SyntheticData* data;
    std::size_t index;
};

inline ad::Var batch_inputs(const std::vector<BatchRef>& refs) {
    const auto& first = *refs.front().data;
    const std::size_t cell = first.sample_numel();
    ad::Tensor x({refs.size(), 1, first.grid_t(), first.grid_h(), first.grid_w()});
    for (std::size_t i = 0; i < refs.size(); ++i) {
        require(refs[i].data->sample_numel() == cell, "batch: mixed grid sizes");
        std::copy_n(refs[i].data->sample_ptr(refs[i].index), cell, x.data.data() + i * cell);
    }
    return ad::constant(std::move(x));
}

inline ad::Tensor batch_action_one_hot(const std::vector<BatchRef>& refs, std::size_t n_actions) {
    ad::Tensor t({refs.size(), n_actions});
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const Sample& s = refs[i].data->dataset.samples[refs[i].index];
        t[i * n_actions + static_cast<std::size_t>(s.action)] = 1.0;
    }
    return t;
}

// Soft/one-hot facet targets for SoftCE and KLDiv heads.
inline ad::Tensor batch_facet_distribution(const std::vector<BatchRef>& refs, const std::string& facet,
                                           std::size_t k) {
    ad::Tensor t({refs.size(), k});
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const Sample& s = refs[i].data->dataset.samples[refs[i].index];
        auto it = s.facets.find(facet);
        require(it != s.facets.end(), "sample '" + s.id + "': facet '" + facet + "' absent");
        const FacetLabel& label = it->second;
        if (label.is_soft()) {
            const auto& p = std::get<FacetLabel::Soft>(label.value).probs;
            require(p.size() == k, "sample '" + s.id + "': soft vector length mismatch");
            std::copy(p.begin(), p.end(), t.data.begin() + i * k);
        } else if (label.is_hard()) {
            t[i * k + static_cast<std::size_t>(std::get<FacetLabel::Hard>(label.value).id)] = 1.0;
        } else {
            fail("sample '", s.id, "': facet '", facet, "' is multi-label, use the bce loss kind");
        }
    }
    return t;
}

inline ad::Tensor batch_facet_indicator(const std::vector<BatchRef>& refs, const std::string& facet,
                                        std::size_t k) {
    ad::Tensor t({refs.size(), k});
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const Sample& s = refs[i].data->dataset.samples[refs[i].index];
        auto it = s.facets.find(facet);
        require(it != s.facets.end(), "sample '" + s.id + "': facet '" + facet + "' absent");
        const FacetLabel& label = it->second;
        if (label.is_multi()) {
            for (CategoryId id : std::get<FacetLabel::Multi>(label.value).ids)
                t[i * k + static_cast<std::size_t>(id)] = 1.0;
        } else if (label.is_hard()) {
            t[i * k + static_cast<std::size_t>(std::get<FacetLabel::Hard>(label.value).id)] = 1.0;
        } else {
            fail("sample '", s.id, "': facet '", facet, "' is soft, bce needs hard or multi labels");
        }
    }
    return t;
}

}  // namespace detail

// Per-facet adversarial loss for one forward pass, averaged per sample.
inline ad::Var facet_adv_loss(const FacetConfig& fc, const ad::Var& logits, const ad::Tensor& dist_target,
                              const ad::Tensor& indicator_target) {
    const auto batch = static_cast<double>(logits->value.dim(0));
    switch (fc.loss) {
        case AdvLossKind::softce:
            return ad::scale(soft_ce_loss(ad::softmax(logits), dist_target), 1.0 / batch);
        case AdvLossKind::kldiv:
            return ad::scale(kldiv_loss(ad::softmax(logits), dist_target), 1.0 / batch);
        case AdvLossKind::softce_kldiv: {
            ad::Var p = ad::softmax(logits);
            ad::Var mix = ad::add(ad::scale(soft_ce_loss(p, dist_target), 0.5),
                                  ad::scale(kldiv_loss(p, dist_target), 0.5));
            return ad::scale(mix, 1.0 / batch);
        }
        case AdvLossKind::bce:
            return ad::scale(bce_loss(logits, indicator_target), 1.0 / batch);
    }
    fail("facet_adv_loss: unreachable");
}

// --- training ---------------------------------------------------------------

struct EpochStats {
    std::size_t epoch = 0;
    double ce_loss = 0.0;
    std::vector<double> adv_loss;  // aligned with config facets
    double train_acc = 0.0;
    double val_acc = std::numeric_limits<double>::quiet_NaN();
};

struct TrainHistory {
    std::vector<std::string> facet_names;
    std::vector<EpochStats> epochs;

    std::string to_csv() const {
        std::ostringstream out;
        out.precision(17);
        out << "epoch,ce_loss";
        for (const auto& f : facet_names) out << ",adv_" << f;
        out << ",train_acc,val_acc\n";
        for (const auto& e : epochs) {
            out << e.epoch << ',' << e.ce_loss;
            for (double a : e.adv_loss) out << ',' << a;
            out << ',' << e.train_acc << ',';
            if (std::isnan(e.val_acc))
                out << "";
            else
                out << e.val_acc;
            out << '\n';
        }
        return out.str();
    }
};

namespace detail {

inline std::vector<CategoryId> predict_actions(const SmadModel& model, const std::vector<BatchRef>& refs) {
    auto fwd = model.forward(batch_inputs(refs));
    const std::size_t n_actions = model.n_actions();
    std::vector<CategoryId> out(refs.size());
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const double* row = fwd.action_logits->value.data.data() + i * n_actions;
        out[i] = static_cast<CategoryId>(std::max_element(row, row + n_actions) - row);
    }
    return out;
}

inline double accuracy_on(const SmadModel& model, const DataView& view, std::size_t chunk = 64) {
    std::size_t correct = 0;
    for (std::size_t start = 0; start < view.size(); start += chunk) {
        std::vector<BatchRef> refs;
        for (std::size_t i = start; i < std::min(view.size(), start + chunk); ++i)
            refs.push_back({view.data, view.indices[i]});
        auto pred = predict_actions(model, refs);
        for (std::size_t i = 0; i < refs.size(); ++i)
            if (pred[i] == refs[i].data->dataset.samples[refs[i].index].action) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(view.size());
}

}  // namespace detail

// One MAAT training run: per step the graph loss is CE(action) plus the
// adversarial losses routed through grad_reverse, so a single SGD pass
// descends the heads on their losses while the backbone ascends them with
// weight lambda. With an aux view given, every batch mixes curated and aux
// samples at the configured ratio.
inline TrainHistory train_smad(SmadModel& model, const DataView& train, const SmadConfig& cfg,
                               const std::optional<DataView>& aux = std::nullopt,
                               const std::optional<DataView>& val = std::nullopt) {
    cfg.check();
    require(train.size() > 0, "train_smad: empty training data");
    if (aux) require(aux->size() > 0, "train_smad: empty aux view");

    TrainHistory history;
    for (const auto& f : cfg.facets) history.facet_names.push_back(f.name);
    if (cfg.epochs == 0) return history;

    std::map<std::string, std::size_t> facet_sizes;
    for (const auto& [name, vocab] : train.data->dataset.facet_vocabs) facet_sizes[name] = vocab.size();

    ad::SgdOptimizer optimizer(model.parameters(), cfg.lr, cfg.momentum, cfg.weight_decay);
    Rng rng_batch = derive_rng(cfg.seed, "batch");
    Rng rng_aux = derive_rng(cfg.seed, "aux");

    const std::size_t aux_per_batch =
        aux ? static_cast<std::size_t>(std::llround(static_cast<double>(cfg.batch_size) * cfg.aux_fraction))
            : 0;
    const std::size_t curated_per_batch = std::max<std::size_t>(1, cfg.batch_size - aux_per_batch);
    const std::size_t steps_per_epoch = (train.size() + curated_per_batch - 1) / curated_per_batch;
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;

    std::vector<std::size_t> aux_order;
    std::size_t aux_cursor = 0;
    auto next_aux = [&]() {
        if (aux_cursor >= aux_order.size()) {
            aux_order = aux->indices;
            rng_aux.shuffle(aux_order);
            aux_cursor = 0;
        }
        return aux_order[aux_cursor++];
    };

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order = train.indices;
        rng_batch.shuffle(order);

        EpochStats stats;
        stats.epoch = epoch;
        stats.adv_loss.assign(cfg.facets.size(), 0.0);
        std::size_t seen = 0, correct = 0, steps_done = 0;

        for (std::size_t start = 0; start < order.size(); start += curated_per_batch, ++step) {
            std::vector<detail::BatchRef> refs;
            for (std::size_t i = start; i < std::min(order.size(), start + curated_per_batch); ++i)
                refs.push_back({train.data, order[i]});
            const std::size_t n_curated = refs.size();
            for (std::size_t i = 0; i < aux_per_batch; ++i) refs.push_back({aux->data, next_aux()});

            double lambda_scale = 1.0;
            if (cfg.lambda_warmup) {
                const double ramp = 0.1 * static_cast<double>(total_steps);
                lambda_scale = std::min(1.0, static_cast<double>(step + 1) / std::max(1.0, ramp));
            }

            auto fwd = model.forward(detail::batch_inputs(refs), lambda_scale);
            const auto batch = static_cast<double>(refs.size());
            ad::Var loss = ad::scale(
                soft_ce_loss(ad::softmax(fwd.action_logits), detail::batch_action_one_hot(refs, model.n_actions())),
                1.0 / batch);
            const double ce_value = loss->value[0];

            for (std::size_t i = 0; i < cfg.facets.size(); ++i) {
                const auto& fc = cfg.facets[i];
                const std::size_t k = facet_sizes.at(fc.name);
                ad::Tensor dist, indicator;
                if (fc.loss == AdvLossKind::bce)
                    indicator = detail::batch_facet_indicator(refs, fc.name, k);
                else
                    dist = detail::batch_facet_distribution(refs, fc.name, k);
                ad::Var adv = facet_adv_loss(fc, fwd.facet_logits[i], dist, indicator);
                stats.adv_loss[i] += adv->value[0];
                loss = ad::add(loss, adv);
            }

            require(std::isfinite(loss->value[0]),
                    "train_smad: non-finite loss at step " + std::to_string(step) + ", aborting");
            ad::backward(loss);
            optimizer.step();

            stats.ce_loss += ce_value;
            ++steps_done;
            // Training accuracy from the just-computed logits (curated part).
            for (std::size_t i = 0; i < n_curated; ++i) {
                const double* row = fwd.action_logits->value.data.data() + i * model.n_actions();
                auto pred = static_cast<CategoryId>(std::max_element(row, row + model.n_actions()) - row);
                if (pred == refs[i].data->dataset.samples[refs[i].index].action) ++correct;
                ++seen;
            }
        }

        stats.ce_loss /= static_cast<double>(steps_done);
        for (auto& a : stats.adv_loss) a /= static_cast<double>(steps_done);
        stats.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
        if (val) stats.val_acc = detail::accuracy_on(model, *val);
        history.epochs.push_back(std::move(stats));
    }
    return history;
}

// --- evaluation --------------------------------------------------------------

struct EvalResult {
    std::vector<PredictionRecord> records;
    double top1 = 0.0;
    std::map<std::string, FairnessReport> fairness;        // per audited facet
    std::map<std::string, double> eo_variance;             // per audited facet
    std::map<std::string, double> facet_head_accuracy;     // adversarial head probes
    double mask_in_patch_mass = std::numeric_limits<double>::quiet_NaN();
    double patch_area_fraction = std::numeric_limits<double>::quiet_NaN();

    std::map<std::string, double> flat_metrics() const {
        std::map<std::string, double> m;
        m["top1"] = top1;
        for (const auto& [facet, fr] : fairness) {
            m["independence:" + facet] = fr.independence;
            m["separation:" + facet] = fr.separation;
            m["sufficiency:" + facet] = fr.sufficiency;
        }
        for (const auto& [facet, v] : eo_variance) m["eo_variance:" + facet] = v;
        for (const auto& [facet, v] : facet_head_accuracy) m["head_acc:" + facet] = v;
        if (!std::isnan(mask_in_patch_mass)) {
            m["mask_in_patch_mass"] = mask_in_patch_mass;
            m["patch_area_fraction"] = patch_area_fraction;
        }
        return m;
    }
};

inline EvalResult evaluate(const SmadModel& model, const DataView& test, std::int64_t eo_min_support = 5) {
    require(test.size() > 0, "evaluate: empty test set");
    const Dataset& ds = test.data->dataset;
    EvalResult out;

    std::map<std::string, std::size_t> head_correct;
    const auto& cfg = model.config();
    for (const auto& fc : cfg.facets)
        if (fc.loss != AdvLossKind::bce && ds.facet_vocabs.count(fc.name)) head_correct[fc.name] = 0;
    double mask_mass_sum = 0.0;
    std::size_t mask_mass_count = 0;

    const std::size_t chunk = 64;
    for (std::size_t start = 0; start < test.size(); start += chunk) {
        std::vector<detail::BatchRef> refs;
        for (std::size_t i = start; i < std::min(test.size(), start + chunk); ++i)
            refs.push_back({test.data, test.indices[i]});
        auto fwd = model.forward(detail::batch_inputs(refs));

        for (std::size_t i = 0; i < refs.size(); ++i) {
            const Sample& s = ds.samples[refs[i].index];
            const double* row = fwd.action_logits->value.data.data() + i * model.n_actions();
            PredictionRecord r;
            r.sample_id = s.id;
            r.true_action = s.action;
            r.predicted_action =
                static_cast<CategoryId>(std::max_element(row, row + model.n_actions()) - row);
            for (const auto& [facet, vocab] : ds.facet_vocabs)
                if (s.facets.count(facet) && !s.facets.at(facet).is_multi())
                    r.facet_category[facet] = dominant_category(s, facet);
            out.records.push_back(std::move(r));
        }

        for (std::size_t fi = 0; fi < cfg.facets.size(); ++fi) {
            const auto& fc = cfg.facets[fi];
            if (fc.loss == AdvLossKind::bce) continue;
            const std::size_t k = fwd.facet_logits[fi]->value.dim(1);
            for (std::size_t i = 0; i < refs.size(); ++i) {
                const Sample& s = ds.samples[refs[i].index];
                if (!s.facets.count(fc.name) || s.facets.at(fc.name).is_multi()) continue;
                const double* row = fwd.facet_logits[fi]->value.data.data() + i * k;
                auto pred = static_cast<CategoryId>(std::max_element(row, row + k) - row);
                if (pred == dominant_category(s, fc.name)) ++head_correct[fc.name];
            }
        }

        if (fwd.actionness_mask && test.data->patch > 0) {
            const std::size_t T = test.data->grid_t(), H = test.data->grid_h(), W = test.data->grid_w();
            const std::size_t p = test.data->patch;
            for (std::size_t i = 0; i < refs.size(); ++i) {
                const auto [py, px] = test.data->patch_yx[refs[i].index];
                const double* mask = fwd.actionness_mask->value.data.data() + i * T * H * W;
                double in_patch = 0.0;
                for (std::size_t t = 0; t < T; ++t)
                    for (std::size_t dy = 0; dy < p; ++dy)
                        for (std::size_t dx = 0; dx < p; ++dx)
                            in_patch += mask[t * H * W + (py + dy) * W + (px + dx)];
                mask_mass_sum += in_patch / static_cast<double>(T);
                ++mask_mass_count;
            }
        }
    }

    out.top1 = top1_accuracy(out.records);
    for (const auto& [facet, vocab] : ds.facet_vocabs) {
        bool have = std::all_of(out.records.begin(), out.records.end(),
                                [&](const PredictionRecord& r) { return r.facet_category.count(facet) > 0; });
        if (!have) continue;
        out.fairness[facet] = fairness_report(out.records, facet);
        try {
            out.eo_variance[facet] = equalized_odds_variance(out.records, facet, eo_min_support);
        } catch (const Error&) {
            // not enough per-category support on this facet; leave it out
        }
    }
    for (const auto& [facet, correct] : head_correct)
        out.facet_head_accuracy[facet] =
            static_cast<double>(correct) / static_cast<double>(test.size());
    if (mask_mass_count > 0) {
        out.mask_in_patch_mass = mask_mass_sum / static_cast<double>(mask_mass_count);
        out.patch_area_fraction = static_cast<double>(test.data->patch * test.data->patch) /
                                  static_cast<double>(test.data->grid_h() * test.data->grid_w());
    }
    return out;
}

// Actionness-mask dumps: one text matrix per sample, "H W" header, then the
// mask rescaled by H*W and clipped into [0, 1]; temporal slices averaged.
inline void dump_masks(const SmadModel& model, const DataView& view, const std::string& dir) {
    require(model.config().saar_enabled, "dump_masks: SAAR is disabled in this model");
    const std::size_t T = view.data->grid_t(), H = view.data->grid_h(), W = view.data->grid_w();
    const std::size_t chunk = 64;
    for (std::size_t start = 0; start < view.size(); start += chunk) {
        std::vector<detail::BatchRef> refs;
        for (std::size_t i = start; i < std::min(view.size(), start + chunk); ++i)
            refs.push_back({view.data, view.indices[i]});
        auto fwd = model.forward(detail::batch_inputs(refs));
        for (std::size_t i = 0; i < refs.size(); ++i) {
            const Sample& s = view.data->dataset.samples[refs[i].index];
            std::ofstream out(dir + "/mask_" + s.id + ".txt");
            require(out.good(), "dump_masks: cannot write into '" + dir + "'");
            out.precision(17);
            out << H << ' ' << W << '\n';
            const double* mask = fwd.actionness_mask->value.data.data() + i * T * H * W;
            for (std::size_t y = 0; y < H; ++y) {
                for (std::size_t x = 0; x < W; ++x) {
                    double v = 0.0;
                    for (std::size_t t = 0; t < T; ++t) v += mask[t * H * W + y * W + x];
                    v = v / static_cast<double>(T) * static_cast<double>(H * W);
                    out << (x ? " " : "") << std::clamp(v, 0.0, 1.0);
                }
                out << '\n';
            }
        }
    }
}

inline void save_model(const SmadModel& model, const std::string& path) {
    ad::save_checkpoint(model.named_tensors(), path);
}

inline void load_model(SmadModel& model, const std::string& path) {
    model.load_tensors(ad::load_checkpoint(path));
}

}  // namespace debias
