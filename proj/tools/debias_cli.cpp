// Command-line front end: dataset validation, facet-based splits, fairness
// metrics, synthetic data generation, SMAD training/evaluation and run
// comparison. Exit codes: 0 success, 1 domain error, 2 usage error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "debias/config.hpp"
#include "debias/manifest.hpp"
#include "debias/metrics.hpp"
#include "debias/smad.hpp"
#include "debias/split.hpp"
#include "debias/synth.hpp"

namespace fs = std::filesystem;
using namespace debias;

namespace {

std::string g_command_line;

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    require(out.good(), "cannot open '" + path + "' for writing");
    out << text;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

RunManifest make_manifest(std::uint64_t seed, const std::vector<std::string>& inputs,
                          const std::string& config_snapshot = "") {
    RunManifest m;
    m.command = g_command_line;
    m.seed = seed;
    m.config_snapshot = config_snapshot;
    for (const auto& path : inputs) m.add_input(path);
    m.stamp_now();
    return m;
}

void print_metric_table(const std::map<std::string, double>& metrics) {
    std::cout.precision(6);
    for (const auto& [name, value] : metrics)
        std::cout << "  " << std::left << std::setw(28) << name << std::right << value << "\n";
}

nlohmann::json flat_json(const std::map<std::string, double>& metrics) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, value] : metrics) j[name] = value;
    return j;
}

// --- validate ---------------------------------------------------------------

int cmd_validate(const std::string& data_path) {
    Dataset ds = load_dataset(data_path);
    auto report = validate(ds);
    if (report.ok()) {
        std::cout << "ok: " << ds.samples.size() << " samples, " << ds.action_vocab.size() << " actions, "
                  << ds.facet_vocabs.size() << " facets\n";
        return 0;
    }
    for (const auto& issue : report.issues)
        std::cerr << "violation: sample '" << issue.sample_id << "' field '" << issue.field << "': "
                  << issue.message << "\n";
    std::cerr << report.issues.size() << " violations\n";
    return 1;
}

// --- split ------------------------------------------------------------------

struct SplitArgs {
    std::string data_path, out_dir, facet, facet_b;
    SplitParams params;
    double overlap = 0.0;
    double confidence_threshold = -1.0;
};

void emit_split(const SplitAssignment& split, const SplitArgs& args) {
    fs::create_directories(args.out_dir);
    write_text(args.out_dir + "/split.json", split_to_json(split).dump(2) + "\n");
    write_id_list(split.train_ids, args.out_dir + "/train_ids.txt");
    write_id_list(split.val_ids, args.out_dir + "/val_ids.txt");
    write_manifest(make_manifest(split.params.seed, {args.data_path}), args.out_dir);
    std::cout << split.name << ": train " << split.train_ids.size() << ", val " << split.val_ids.size()
              << "\n";
    print_metric_table(split.audit);
}

int cmd_split_redistribute(const SplitArgs& args, bool overlap_mode) {
    Dataset ds = load_dataset(args.data_path);
    SplitParams params = args.params;
    params.facet = args.facet;
    auto split = overlap_mode ? overlap_split(ds, args.overlap, params) : redistribute(ds, params);
    emit_split(split, args);
    return 0;
}

int cmd_split_multi(const SplitArgs& args) {
    Dataset ds = load_dataset(args.data_path);
    SplitParams params = args.params;
    params.facet = args.facet;
    auto split = multi_facet_redistribute(ds, args.facet, args.facet_b, params);
    emit_split(split, args);
    return 0;
}

int cmd_split_partition(const SplitArgs& args) {
    Dataset ds = load_dataset(args.data_path);
    std::optional<double> threshold;
    if (args.confidence_threshold >= 0.0) threshold = args.confidence_threshold;
    auto part = omnidebias_partition(ds, args.facet, threshold);
    fs::create_directories(args.out_dir);
    write_text(args.out_dir + "/partition.json", partition_to_json(part).dump(2) + "\n");
    write_id_list(part.bias_ids, args.out_dir + "/bias_ids.txt");
    write_id_list(part.mid_ids, args.out_dir + "/mid_ids.txt");
    write_id_list(part.unbias_ids, args.out_dir + "/unbias_ids.txt");
    write_manifest(make_manifest(args.params.seed, {args.data_path}), args.out_dir);
    std::cout << part.name << ": bias " << part.bias_ids.size() << ", mid " << part.mid_ids.size()
              << ", unbias " << part.unbias_ids.size() << "\n";
    print_metric_table(part.audit);
    return 0;
}

// --- metrics ------------------------------------------------------------------

bool looks_like_dataset(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open '" + path + "'");
    std::string first;
    std::getline(in, first);
    return first.find("action_vocab") != std::string::npos;
}

int cmd_metrics_nmi(const std::string& path, const std::string& facet) {
    double value = 0.0;
    if (looks_like_dataset(path)) {
        require(!facet.empty(), "metrics nmi on a dataset needs --facet");
        Dataset ds = load_dataset(path);
        std::vector<const Sample*> all;
        for (const auto& s : ds.samples) all.push_back(&s);
        value = dataset_nmi(ds, all, facet);
    } else {
        require(!facet.empty(), "metrics nmi on records needs --facet");
        auto records = load_records(path);
        require(!records.empty(), "no records in '" + path + "'");
        CategoryId max_pred = 0, max_z = 0;
        for (const auto& r : records) {
            max_pred = std::max(max_pred, r.predicted_action);
            max_z = std::max(max_z, r.facet_category.at(facet));
        }
        ContingencyTable t(static_cast<std::size_t>(max_pred) + 1, static_cast<std::size_t>(max_z) + 1);
        for (const auto& r : records)
            t.add(static_cast<std::size_t>(r.predicted_action),
                  static_cast<std::size_t>(r.facet_category.at(facet)));
        value = nmi(t);
    }
    std::cout.precision(17);
    std::cout << value << "\n";
    return 0;
}

int cmd_metrics_fairness(const std::string& path, const std::string& facet, const std::string& csv_out) {
    auto records = load_records(path);
    auto report = fairness_report(records, facet);
    std::map<std::string, double> metrics{{"independence", report.independence},
                                          {"separation", report.separation},
                                          {"sufficiency", report.sufficiency}};
    print_metric_table(metrics);
    std::cout << flat_json(metrics).dump() << "\n";
    if (!csv_out.empty()) write_text(csv_out, metrics_to_csv(metrics));
    return 0;
}

int cmd_metrics_eo(const std::string& path, const std::string& facet, std::int64_t min_support,
                   const std::string& csv_out) {
    auto records = load_records(path);
    std::map<std::string, double> metrics{
        {"equalized_odds_variance", equalized_odds_variance(records, facet, min_support)},
        {"top1", top1_accuracy(records)}};
    print_metric_table(metrics);
    std::cout << flat_json(metrics).dump() << "\n";
    if (!csv_out.empty()) write_text(csv_out, metrics_to_csv(metrics));
    return 0;
}

// --- gen-synth -----------------------------------------------------------------

int cmd_gen_synth(const std::string& config_path, const std::string& out_dir, bool as_web,
                  std::int64_t seed_override) {
    Config cfg = Config::parse_file(config_path);
    SyntheticBiasSpec spec = synth_spec_from_config(cfg);
    smad_config_from_config(cfg);  // consume model keys if the file carries both
    cfg.check_consumed();
    if (seed_override >= 0) spec.seed = static_cast<std::uint64_t>(seed_override);

    auto bundle = generate_synthetic(spec);
    if (as_web) {
        mark_as_web(bundle.train.dataset, spec.seed);
        mark_as_web(bundle.test.dataset, spec.seed);
    }
    fs::create_directories(out_dir);
    save_synthetic_split(bundle.train, out_dir, "train");
    save_synthetic_split(bundle.test, out_dir, "test");
    write_text(out_dir + "/config.ini", synth_spec_to_string(spec));
    write_manifest(make_manifest(spec.seed, {config_path}, synth_spec_to_string(spec)), out_dir);
    std::cout << "wrote " << bundle.train.size() << " train / " << bundle.test.size() << " test samples to "
              << out_dir << "\n";
    return 0;
}

// --- train -----------------------------------------------------------------------

struct TrainArgs {
    std::string config_path, data_dir, out_dir;
    std::string split_path;              // optional: train/val from a SplitAssignment
    std::string aux_path, aux_data_dir;  // optional: co-training partition
    std::string part = "unbias";
    std::vector<std::uint64_t> seeds;
    std::int64_t seed_override = -1;
    std::size_t jobs = 1;
};

struct LoadedTrainData {
    SyntheticData train, test;
    std::optional<SyntheticData> aux_data;
    std::vector<std::string> aux_ids;
    std::optional<SplitAssignment> split;
};

LoadedTrainData load_train_inputs(const TrainArgs& args, std::uint64_t seed) {
    LoadedTrainData d;
    d.train = load_synthetic_split(args.data_dir, "train");
    d.test = load_synthetic_split(args.data_dir, "test");
    if (!args.split_path.empty())
        d.split = split_from_json(nlohmann::json::parse(read_text(args.split_path)));
    if (!args.aux_data_dir.empty()) {
        d.aux_data = load_synthetic_split(args.aux_data_dir, "train");
        if (args.part == "all") {
            for (const auto& s : d.aux_data->dataset.samples) d.aux_ids.push_back(s.id);
        } else if (args.part == "rand") {
            d.aux_ids = random_third_ids(d.aux_data->dataset, derive_seed(seed, "aux/rand"));
        } else {
            require(!args.aux_path.empty(), "train: --part " + args.part + " needs --aux <partition.json>");
            auto part = partition_from_json(nlohmann::json::parse(read_text(args.aux_path)));
            if (args.part == "unbias")
                d.aux_ids = part.unbias_ids;
            else if (args.part == "mid")
                d.aux_ids = part.mid_ids;
            else if (args.part == "bias")
                d.aux_ids = part.bias_ids;
            else
                fail("train: unknown --part '", args.part, "' (unbias|mid|bias|rand|all)");
        }
    }
    return d;
}

void run_one_training(const LoadedTrainData& d, SmadConfig cfg, const SyntheticBiasSpec* synth_spec,
                      std::uint64_t seed, const std::string& out_dir, const TrainArgs& args) {
    cfg.seed = seed;
    std::map<std::string, std::size_t> facet_sizes;
    for (const auto& [name, vocab] : d.train.dataset.facet_vocabs) facet_sizes[name] = vocab.size();

    DataView train_view = d.split ? DataView::of_ids(d.train, d.split->train_ids) : DataView::all(d.train);
    DataView val_view = d.split ? DataView::of_ids(d.train, d.split->val_ids) : DataView::all(d.test);
    std::optional<DataView> aux_view;
    if (d.aux_data) aux_view = DataView::of_ids(*d.aux_data, d.aux_ids);

    auto model = SmadModel::build(cfg, d.train.dataset.action_vocab.size(), facet_sizes);
    auto history = train_smad(model, train_view, cfg, aux_view, val_view);

    fs::create_directories(out_dir);
    save_model(model, out_dir + "/model.ckpt");
    write_text(out_dir + "/history.csv", history.to_csv());
    std::string snapshot = smad_config_to_string(cfg);
    if (synth_spec) snapshot += "\n" + synth_spec_to_string(*synth_spec);
    write_text(out_dir + "/config.ini", snapshot);
    if (d.split) write_text(out_dir + "/split.json", split_to_json(*d.split).dump(2) + "\n");

    std::vector<std::string> inputs{args.config_path, args.data_dir + "/train.jsonl",
                                    args.data_dir + "/train_tensors.bin"};
    if (!args.split_path.empty()) inputs.push_back(args.split_path);
    if (!args.aux_path.empty()) inputs.push_back(args.aux_path);
    write_manifest(make_manifest(seed, inputs, snapshot), out_dir);

    if (!history.epochs.empty()) {
        const auto& last = history.epochs.back();
        std::cout << out_dir << ": epoch " << last.epoch << " ce " << last.ce_loss << " train_acc "
                  << last.train_acc << " val_acc " << last.val_acc << "\n";
    }
}

int cmd_train(const TrainArgs& args) {
    Config cfg_file = Config::parse_file(args.config_path);
    SmadConfig cfg = smad_config_from_config(cfg_file);
    std::optional<SyntheticBiasSpec> synth_spec;
    if (cfg_file.has("synthetic.n_actions") || cfg_file.has("synthetic.seed"))
        synth_spec = synth_spec_from_config(cfg_file);
    else
        synth_spec_from_config(cfg_file);  // consume defaults so unknown-key checks stay strict
    cfg_file.check_consumed();

    std::vector<std::uint64_t> seeds = args.seeds;
    if (seeds.empty())
        seeds.push_back(args.seed_override >= 0 ? static_cast<std::uint64_t>(args.seed_override) : cfg.seed);

    auto data = load_train_inputs(args, seeds.front());
    const SyntheticBiasSpec* spec_ptr = synth_spec ? &*synth_spec : nullptr;

    if (seeds.size() == 1) {
        run_one_training(data, cfg, spec_ptr, seeds[0], args.out_dir, args);
        return 0;
    }
    // Independent seeds; --jobs bounds the parallel replicas.
    const std::size_t jobs = std::max<std::size_t>(1, args.jobs);
    for (std::size_t base = 0; base < seeds.size(); base += jobs) {
        std::vector<std::future<void>> running;
        for (std::size_t i = base; i < std::min(seeds.size(), base + jobs); ++i) {
            const std::uint64_t seed = seeds[i];
            running.push_back(std::async(std::launch::async, [&, seed] {
                run_one_training(data, cfg, spec_ptr, seed, args.out_dir + "/seed-" + std::to_string(seed),
                                 args);
            }));
        }
        for (auto& f : running) f.get();
    }
    return 0;
}

// --- eval -------------------------------------------------------------------

int cmd_eval(const std::string& model_path, const std::string& data_dir, const std::string& use_split,
             const std::string& ids_path, const std::string& config_path, const std::string& out_dir,
             bool dump_mask_files, std::int64_t min_support) {
    std::string cfg_path = config_path;
    if (cfg_path.empty()) cfg_path = fs::path(model_path).parent_path() / "config.ini";
    Config cfg_file = Config::parse_file(cfg_path);
    SmadConfig cfg = smad_config_from_config(cfg_file);
    synth_spec_from_config(cfg_file);  // tolerated in the snapshot
    cfg_file.check_consumed();

    SyntheticData data = load_synthetic_split(data_dir, use_split);
    std::map<std::string, std::size_t> facet_sizes;
    for (const auto& [name, vocab] : data.dataset.facet_vocabs) facet_sizes[name] = vocab.size();
    auto model = SmadModel::build(cfg, data.dataset.action_vocab.size(), facet_sizes);
    load_model(model, model_path);

    DataView view = DataView::all(data);
    if (!ids_path.empty()) {
        std::vector<std::string> ids;
        std::ifstream in(ids_path);
        require(in.good(), "cannot open id list '" + ids_path + "'");
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) ids.push_back(line);
        view = DataView::of_ids(data, ids);
    }

    auto result = evaluate(model, view, min_support);
    fs::create_directories(out_dir);
    save_records(result.records, out_dir + "/records.jsonl");
    auto metrics = result.flat_metrics();
    write_text(out_dir + "/metrics.json", flat_json(metrics).dump(2) + "\n");
    write_text(out_dir + "/metrics.csv", metrics_to_csv(metrics));
    if (dump_mask_files) {
        fs::create_directories(out_dir + "/masks");
        dump_masks(model, view, out_dir + "/masks");
    }
    write_manifest(make_manifest(cfg.seed, {model_path, data_dir + "/" + use_split + ".jsonl"}), out_dir);
    std::cout << "evaluated " << result.records.size() << " samples\n";
    print_metric_table(metrics);
    return 0;
}

// --- report -----------------------------------------------------------------

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& csv_out,
               const std::string& sweep_key) {
    std::map<std::string, double> flat;
    struct Row {
        std::string name;
        std::map<std::string, double> metrics;
    };
    std::vector<Row> rows;

    for (const auto& dir : run_dirs) {
        Row row;
        row.name = fs::path(dir).filename().string();
        if (row.name.empty()) row.name = dir;
        if (fs::exists(dir + "/metrics.json")) {
            auto j = nlohmann::json::parse(read_text(dir + "/metrics.json"));
            for (const auto& [k, v] : j.items()) row.metrics[k] = v.get<double>();
        }
        if (fs::exists(dir + "/split.json")) {
            auto split = split_from_json(nlohmann::json::parse(read_text(dir + "/split.json")));
            for (const auto& [k, v] : split.audit) row.metrics["split:" + k] = v;
        }
        if (fs::exists(dir + "/history.csv")) {
            std::istringstream in(read_text(dir + "/history.csv"));
            std::string line, last, header;
            std::getline(in, header);
            while (std::getline(in, line))
                if (!line.empty()) last = line;
            if (!last.empty()) {
                std::vector<std::string> cols, vals;
                std::stringstream hs(header), ls(last);
                std::string item;
                while (std::getline(hs, item, ',')) cols.push_back(item);
                while (std::getline(ls, item, ',')) vals.push_back(item);
                for (std::size_t i = 0; i < std::min(cols.size(), vals.size()); ++i)
                    if (!vals[i].empty() && cols[i] != "epoch") row.metrics["final:" + cols[i]] = std::stod(vals[i]);
            }
        }
        require(!row.metrics.empty(), "report: no metrics found in '" + dir + "'");
        rows.push_back(std::move(row));
    }

    // Human-readable comparison, first run is the baseline for deltas.
    std::cout.precision(6);
    for (const auto& row : rows) {
        std::cout << row.name << "\n";
        for (const auto& [k, v] : row.metrics) {
            std::cout << "  " << std::left << std::setw(30) << k << std::right << v;
            if (&row != &rows.front() && rows.front().metrics.count(k))
                std::cout << "  (" << std::showpos << v - rows.front().metrics.at(k) << std::noshowpos << ")";
            std::cout << "\n";
        }
        for (const auto& [k, v] : row.metrics) flat[row.name + "/" + k] = v;
    }

    if (!sweep_key.empty()) {
        std::vector<double> xs, ys;
        const std::string key = "split:" + sweep_key + "_fraction";
        for (const auto& row : rows)
            if (row.metrics.count(key) && row.metrics.count("top1")) {
                xs.push_back(row.metrics.at(key));
                ys.push_back(row.metrics.at("top1"));
            }
        require(xs.size() >= 2, "report --sweep: fewer than two runs carry '" + key + "' and top1");
        double rho = spearman_rank_correlation(xs, ys);
        std::cout << "sweep " << sweep_key << ": spearman(top1, " << sweep_key << ") = " << rho << "\n";
        flat["sweep/spearman"] = rho;
    }

    std::cout << flat_json(flat).dump() << "\n";
    if (!csv_out.empty()) write_text(csv_out, metrics_to_csv(flat));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    std::ostringstream cmd;
    for (int i = 0; i < argc; ++i) cmd << (i ? " " : "") << argv[i];
    g_command_line = cmd.str();

    CLI::App app{"dataset-bias auditing and adversarial debiasing toolkit"};
    app.require_subcommand(1);

    // validate
    std::string data_path;
    auto* validate_cmd = app.add_subcommand("validate", "check a JSON-lines dataset");
    validate_cmd->add_option("data", data_path, "dataset file")->required();

    // split
    SplitArgs split_args;
    auto* split_cmd = app.add_subcommand("split", "facet-based dataset splits");
    split_cmd->require_subcommand(1);
    auto add_common = [&](CLI::App* sub, bool needs_facet = true) {
        sub->add_option("data", split_args.data_path, "dataset file")->required();
        if (needs_facet) sub->add_option("--facet", split_args.facet, "facet name")->required();
        sub->add_option("--seed", split_args.params.seed, "random seed");
        sub->add_option("--out", split_args.out_dir, "output directory")->required();
    };
    auto add_split_params = [&](CLI::App* sub) {
        sub->add_option("--top-k", split_args.params.top_k_classes, "classes kept, by size");
        sub->add_option("--min-val", split_args.params.min_val_per_class, "minimum tail samples per class");
        sub->add_option("--train-per-class", split_args.params.train_per_class, "train quota per class");
    };
    auto* redis = split_cmd->add_subcommand("redistribute", "head/tail re-distribution by z-frequency");
    add_common(redis);
    add_split_params(redis);
    auto* overlap = split_cmd->add_subcommand("overlap", "re-distribution with a category overlap knob");
    add_common(overlap);
    add_split_params(overlap);
    overlap->add_option("--overlap", split_args.overlap, "fraction of val categories swapped back")
        ->check(CLI::Range(0.0, 1.0))
        ->required();
    auto* multi = split_cmd->add_subcommand("multi", "two-facet re-distribution");
    add_common(multi);
    add_split_params(multi);
    multi->add_option("--facet-b", split_args.facet_b, "second facet")->required();
    auto* partition = split_cmd->add_subcommand("partition", "bias/mid/unbias thirds of web data");
    add_common(partition);
    partition->add_option("--confidence-threshold", split_args.confidence_threshold,
                          "drop web samples below this teacher confidence");

    // metrics
    std::string metrics_path, metrics_facet, metrics_csv;
    std::int64_t min_support = 5;
    auto* metrics_cmd = app.add_subcommand("metrics", "fairness metrics over datasets or records");
    metrics_cmd->require_subcommand(1);
    auto* nmi_cmd = metrics_cmd->add_subcommand("nmi", "NMI of action and facet");
    nmi_cmd->add_option("file", metrics_path, "dataset or records file")->required();
    nmi_cmd->add_option("--facet", metrics_facet, "facet name");
    auto* fairness_cmd = metrics_cmd->add_subcommand("fairness", "independence/separation/sufficiency");
    fairness_cmd->add_option("file", metrics_path, "records file")->required();
    fairness_cmd->add_option("--facet", metrics_facet, "facet name")->required();
    fairness_cmd->add_option("--csv", metrics_csv, "write metric,value CSV here");
    auto* eo_cmd = metrics_cmd->add_subcommand("eo", "equalized-odds recall variance");
    eo_cmd->add_option("file", metrics_path, "records file")->required();
    eo_cmd->add_option("--facet", metrics_facet, "facet name")->required();
    eo_cmd->add_option("--min-support", min_support, "minimum records per (action, facet) cell");
    eo_cmd->add_option("--csv", metrics_csv, "write metric,value CSV here");

    // gen-synth
    std::string synth_config, synth_out;
    bool synth_web = false;
    std::int64_t synth_seed = -1;
    auto* gen_cmd = app.add_subcommand("gen-synth", "generate the synthetic bias benchmark");
    gen_cmd->add_option("config", synth_config, "config file with a [synthetic] section")->required();
    gen_cmd->add_option("--out", synth_out, "output directory")->required();
    gen_cmd->add_flag("--web", synth_web, "mark generated samples as web data with teacher confidences");
    gen_cmd->add_option("--seed", synth_seed, "override the config seed");

    // train
    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "train a SMAD model");
    train_cmd->add_option("config", train_args.config_path, "config file with a [model] section")->required();
    train_cmd->add_option("--data", train_args.data_dir, "synthetic data directory")->required();
    train_cmd->add_option("--out", train_args.out_dir, "run directory")->required();
    train_cmd->add_option("--split", train_args.split_path, "train/val from this split.json");
    train_cmd->add_option("--aux", train_args.aux_path, "web partition.json for co-training");
    train_cmd->add_option("--aux-data", train_args.aux_data_dir, "web data directory");
    train_cmd->add_option("--part", train_args.part, "aux subset: unbias|mid|bias|rand|all");
    train_cmd->add_option("--seeds", train_args.seeds, "train one replica per seed")->delimiter(',');
    train_cmd->add_option("--seed", train_args.seed_override, "override the config seed");
    train_cmd->add_option("--jobs", train_args.jobs, "parallel replicas when --seeds is used");

    // eval
    std::string eval_model, eval_data, eval_use = "test", eval_ids, eval_config, eval_out;
    bool eval_masks = false;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a trained model");
    eval_cmd->add_option("model", eval_model, "model checkpoint")->required();
    eval_cmd->add_option("data", eval_data, "synthetic data directory")->required();
    eval_cmd->add_option("--use", eval_use, "which split to evaluate: train|test");
    eval_cmd->add_option("--ids", eval_ids, "restrict to ids listed in this file");
    eval_cmd->add_option("--config", eval_config, "model config (default: next to the checkpoint)");
    eval_cmd->add_option("--out", eval_out, "output directory")->required();
    eval_cmd->add_flag("--dump-masks", eval_masks, "write actionness mask matrices");
    eval_cmd->add_option("--min-support", min_support, "equalized-odds support threshold");

    // report
    std::vector<std::string> report_dirs;
    std::string report_csv, report_sweep;
    auto* report_cmd = app.add_subcommand("report", "compare run directories");
    report_cmd->add_option("runs", report_dirs, "run directories")->required();
    report_cmd->add_option("--csv", report_csv, "write metric,value CSV here");
    report_cmd->add_option("--sweep", report_sweep, "rank-correlate top1 against a split audit key");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*validate_cmd) return cmd_validate(data_path);
        if (*split_cmd) {
            if (*redis) return cmd_split_redistribute(split_args, false);
            if (*overlap) return cmd_split_redistribute(split_args, true);
            if (*multi) return cmd_split_multi(split_args);
            if (*partition) return cmd_split_partition(split_args);
        }
        if (*metrics_cmd) {
            if (*nmi_cmd) return cmd_metrics_nmi(metrics_path, metrics_facet);
            if (*fairness_cmd) return cmd_metrics_fairness(metrics_path, metrics_facet, metrics_csv);
            if (*eo_cmd) return cmd_metrics_eo(metrics_path, metrics_facet, min_support, metrics_csv);
        }
        if (*gen_cmd) return cmd_gen_synth(synth_config, synth_out, synth_web, synth_seed);
        if (*train_cmd) return cmd_train(train_args);
        if (*eval_cmd)
            return cmd_eval(eval_model, eval_data, eval_use, eval_ids, eval_config, eval_out, eval_masks,
                            min_support);
        if (*report_cmd) return cmd_report(report_dirs, report_csv, report_sweep);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
