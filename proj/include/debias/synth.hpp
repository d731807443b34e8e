#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "debias/checkpoint.hpp"
#include "debias/common.hpp"
#include "debias/dataset.hpp"
#include "debias/rng.hpp"

namespace debias {

// Synthetic spurious-correlation benchmark. Every sample is a (1, T, H, W)
// grid: a scene-specific full-frame texture plus an action-specific patch
// pasted at a per-sample location, plus Gaussian noise. Scenes correlate
// with actions in the train split (strength rho); the test split breaks the
// correlation, either with held-out scenes (disjoint) or a uniform draw.
struct SyntheticBiasSpec {
    std::size_t n_actions = 8;
    std::size_t n_scenes = 32;
    double rho = 0.95;        // P(scene == action's partner scene) in train
    double tail_alpha = 1.5;  // exponent of the long-tailed scene marginal
    std::size_t patch = 6;    // action patch side length
    double sigma = 0.25;      // additive noise std
    std::size_t n_train = 4000;
    std::size_t n_test = 1000;
    enum class TestMode { disjoint, uniform } test_mode = TestMode::disjoint;
    std::uint64_t seed = 0;

    std::size_t grid_t = 1, grid_h = 14, grid_w = 14;

    // Scenes above this id are reserved for the disjoint test split.
    std::size_t train_scene_count() const {
        if (test_mode != TestMode::disjoint) return n_scenes;
        return n_scenes - std::max<std::size_t>(1, n_scenes / 4);
    }

    void check() const {
        require(n_actions >= 2 && n_scenes >= 2, "synthetic spec: need at least 2 actions and 2 scenes");
        require(rho >= 0.0 && rho <= 1.0, "synthetic spec: rho must be in [0, 1]");
        require(patch >= 1 && patch <= grid_h && patch <= grid_w,
                "synthetic spec: patch side exceeds the grid");
        require(sigma >= 0.0 && tail_alpha >= 0.0, "synthetic spec: sigma and tail_alpha must be >= 0");
        require(n_train >= 1 && n_test >= 1, "synthetic spec: empty split requested");
        if (test_mode == TestMode::disjoint)
            require(train_scene_count() >= n_actions,
                    "synthetic spec: disjoint test mode needs n_scenes comfortably above n_actions");
        else
            require(n_scenes >= n_actions, "synthetic spec: fewer scenes than actions");
    }
};

struct SyntheticData {
    Dataset dataset;
    ad::Tensor inputs;  // (N, 1, T, H, W)
    std::vector<std::array<std::size_t, 2>> patch_yx;
    std::size_t patch = 0;

    std::size_t size() const { return dataset.samples.size(); }
    std::size_t grid_t() const { return inputs.dim(2); }
    std::size_t grid_h() const { return inputs.dim(3); }
    std::size_t grid_w() const { return inputs.dim(4); }
    std::size_t sample_numel() const { return grid_t() * grid_h() * grid_w(); }
    const double* sample_ptr(std::size_t i) const { return inputs.data.data() + i * sample_numel(); }
};

struct SyntheticBundle {
    SyntheticData train;
    SyntheticData test;
};

namespace detail {

// Fixed per-category patterns; amplitudes chosen so the full-frame scene
// texture is the more salient cue of the two.
inline constexpr double kSceneAmplitude = 1.0;
inline constexpr double kPatchAmplitude = 1.6;

struct SceneSampler {
    std::vector<double> cumulative;  // long-tailed marginal over train scenes

    SceneSampler(std::size_t n_scenes, double alpha) {
        cumulative.resize(n_scenes);
        double total = 0.0;
        for (std::size_t s = 0; s < n_scenes; ++s) {
            total += std::pow(static_cast<double>(s + 1), -alpha);
            cumulative[s] = total;
        }
        for (auto& c : cumulative) c /= total;
    }

    std::size_t draw(Rng& rng) const {
        double u = rng.uniform01();
        auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
        if (it == cumulative.end()) --it;
        return static_cast<std::size_t>(it - cumulative.begin());
    }
};

inline std::string zero_pad(std::size_t v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

}  // namespace detail

inline SyntheticBundle generate_synthetic(const SyntheticBiasSpec& spec) {
    spec.check();
    const std::size_t T = spec.grid_t, H = spec.grid_h, W = spec.grid_w;
    const std::size_t cell_count = T * H * W;

    // Fixed textures and patch patterns.
    Rng rng_tex = derive_rng(spec.seed, "synth/textures");
    std::vector<std::vector<double>> scene_tex(spec.n_scenes, std::vector<double>(cell_count));
    for (auto& tex : scene_tex)
        for (auto& v : tex) v = detail::kSceneAmplitude * rng_tex.normal();
    std::vector<std::vector<double>> patch_pattern(spec.n_actions,
                                                   std::vector<double>(spec.patch * spec.patch));
    for (auto& pat : patch_pattern)
        for (auto& v : pat) v = detail::kPatchAmplitude * rng_tex.normal();

    detail::SceneSampler marginal(spec.train_scene_count(), spec.tail_alpha);

    Vocabulary action_vocab("action", {});
    for (std::size_t a = 0; a < spec.n_actions; ++a)
        action_vocab.add("action_" + detail::zero_pad(a, 2));
    Vocabulary scene_vocab("scene", {});
    for (std::size_t s = 0; s < spec.n_scenes; ++s) scene_vocab.add("scene_" + detail::zero_pad(s, 3));

    auto make_split = [&](const char* prefix, std::size_t count, bool is_train) {
        SyntheticData out;
        out.dataset.action_vocab = action_vocab;
        out.dataset.facet_vocabs.emplace("scene", scene_vocab);
        out.inputs = ad::Tensor({count, 1, T, H, W});
        out.patch_yx.resize(count);
        out.patch = spec.patch;

        Rng rng = derive_rng(spec.seed, std::string("synth/") + prefix);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t action = i % spec.n_actions;  // balanced classes
            std::size_t scene;
            if (is_train) {
                if (rng.uniform01() < spec.rho)
                    scene = action;  // the action's partner scene
                else
                    scene = marginal.draw(rng);
            } else if (spec.test_mode == SyntheticBiasSpec::TestMode::disjoint) {
                const std::size_t pool = spec.n_scenes - spec.train_scene_count();
                scene = spec.train_scene_count() + static_cast<std::size_t>(rng.below(pool));
            } else {
                scene = static_cast<std::size_t>(rng.below(spec.n_scenes));
            }
            const std::size_t py = static_cast<std::size_t>(rng.below(H - spec.patch + 1));
            const std::size_t px = static_cast<std::size_t>(rng.below(W - spec.patch + 1));
            out.patch_yx[i] = {py, px};

            double* cell = out.inputs.data.data() + i * cell_count;
            const auto& tex = scene_tex[scene];
            for (std::size_t j = 0; j < cell_count; ++j) cell[j] = tex[j];
            const auto& pat = patch_pattern[action];
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t dy = 0; dy < spec.patch; ++dy)
                    for (std::size_t dx = 0; dx < spec.patch; ++dx)
                        cell[t * H * W + (py + dy) * W + (px + dx)] +=
                            pat[dy * spec.patch + dx];
            if (spec.sigma > 0.0)
                for (std::size_t j = 0; j < cell_count; ++j) cell[j] += spec.sigma * rng.normal();

            Sample s;
            s.id = std::string(prefix) + "_" + detail::zero_pad(i, 6);
            s.action = static_cast<CategoryId>(action);
            s.facets.emplace("scene", FacetLabel::hard(static_cast<CategoryId>(scene)));
            out.dataset.samples.push_back(std::move(s));
        }
        return out;
    };

    SyntheticBundle bundle;
    bundle.train = make_split("train", spec.n_train, true);
    bundle.test = make_split("test", spec.n_test, false);
    return bundle;
}

// Re-labels a synthetic split as web data with seeded teacher confidences,
// for exercising the auxiliary-data pipeline.
inline void mark_as_web(Dataset& ds, std::uint64_t seed, double conf_lo = 0.5, double conf_hi = 1.0) {
    Rng rng = derive_rng(seed, "synth/web_confidence");
    for (Sample& s : ds.samples) {
        s.source = SampleSource::web;
        s.teacher_confidence = conf_lo + (conf_hi - conf_lo) * rng.uniform01();
    }
}

// --- on-disk layout: dataset.jsonl + tensors.bin per split ----------------

inline void save_synthetic_split(const SyntheticData& data, const std::string& dir, const std::string& split) {
    save_dataset(data.dataset, dir + "/" + split + ".jsonl");
    ad::Tensor patches({data.patch_yx.size(), 2});
    for (std::size_t i = 0; i < data.patch_yx.size(); ++i) {
        patches[i * 2] = static_cast<double>(data.patch_yx[i][0]);
        patches[i * 2 + 1] = static_cast<double>(data.patch_yx[i][1]);
    }
    ad::NamedTensors tensors;
    tensors.emplace_back("inputs", data.inputs);
    tensors.emplace_back("patch_yx", std::move(patches));
    tensors.emplace_back("patch_side", ad::Tensor({1}, {static_cast<double>(data.patch)}));
    ad::save_checkpoint(tensors, dir + "/" + split + "_tensors.bin");
}

inline SyntheticData load_synthetic_split(const std::string& dir, const std::string& split) {
    SyntheticData data;
    data.dataset = load_dataset(dir + "/" + split + ".jsonl");
    auto tensors = ad::load_checkpoint(dir + "/" + split + "_tensors.bin");
    for (auto& [name, t] : tensors) {
        if (name == "inputs")
            data.inputs = std::move(t);
        else if (name == "patch_yx") {
            data.patch_yx.resize(t.dim(0));
            for (std::size_t i = 0; i < t.dim(0); ++i)
                data.patch_yx[i] = {static_cast<std::size_t>(t[i * 2]),
                                    static_cast<std::size_t>(t[i * 2 + 1])};
        } else if (name == "patch_side")
            data.patch = static_cast<std::size_t>(t[0]);
    }
    require(data.inputs.rank() == 5, "synthetic split '" + split + "': missing or malformed inputs tensor");
    require(data.inputs.dim(0) == data.dataset.samples.size(),
            "synthetic split '" + split + "': tensor count does not match dataset");
    return data;
}

}  // namespace debias
