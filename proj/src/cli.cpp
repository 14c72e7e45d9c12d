#include "spx/cli.hpp"

#include "spx/bench.hpp"
#include "spx/error.hpp"
#include "spx/evalreport.hpp"
#include "spx/expansion.hpp"
#include "spx/json_io.hpp"
#include "spx/metrics.hpp"
#include "spx/synth.hpp"
#include "spx/tensor_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

namespace spx {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum class Kind { kInt, kUInt, kDouble, kString, kBool, kOptionalInt };

struct OptionSpec {
    std::string key;
    std::string flags;
    Kind kind;
    std::string help;
};

// Flag or config value that could not be converted; `from_flag` picks the exit code.
struct ValueError {
    std::string message;
    bool from_flag;
};

json convert_text(const std::string & key, const std::string & text, Kind kind) {
    try {
        std::size_t used = 0;
        switch (kind) {
        case Kind::kInt: {
            const long long v = std::stoll(text, &used);
            if (used == text.size()) {
                return v;
            }
            break;
        }
        case Kind::kUInt: {
            if (!text.empty() && text[0] != '-') {
                const unsigned long long v = std::stoull(text, &used);
                if (used == text.size()) {
                    return v;
                }
            }
            break;
        }
        case Kind::kDouble: {
            const double v = std::stod(text, &used);
            if (used == text.size()) {
                return v;
            }
            break;
        }
        case Kind::kString:
            return text;
        case Kind::kBool:
            if (text == "true" || text == "1") {
                return true;
            }
            if (text == "false" || text == "0") {
                return false;
            }
            break;
        case Kind::kOptionalInt: {
            if (text == "none" || text == "null") {
                return nullptr;
            }
            const long long v = std::stoll(text, &used);
            if (used == text.size()) {
                return v;
            }
            break;
        }
        }
    } catch (const std::logic_error &) {
    }
    throw ValueError{"--" + key + ": cannot parse '" + text + "'", true};
}

json check_config_value(const std::string & key, const json & v, Kind kind) {
    const auto bad = [&] { return ValueError{"config key '" + key + "' has the wrong type", false}; };
    switch (kind) {
    case Kind::kInt:
        if (!v.is_number_integer()) {
            throw bad();
        }
        return v;
    case Kind::kUInt:
        if (!v.is_number_integer() || v.get<long long>() < 0) {
            throw bad();
        }
        return v;
    case Kind::kDouble:
        if (!v.is_number()) {
            throw bad();
        }
        return v.get<double>();
    case Kind::kString:
        if (!v.is_string()) {
            throw bad();
        }
        return v;
    case Kind::kBool:
        if (!v.is_boolean()) {
            throw bad();
        }
        return v;
    case Kind::kOptionalInt:
        if (!v.is_null() && !v.is_number_integer()) {
            throw bad();
        }
        return v;
    }
    throw bad();
}

struct Command {
    std::string name;
    std::string help;
    std::vector<OptionSpec> options;
    json defaults;
    std::function<json(const json & cfg, Parallelism par, const fs::path & out)> run;
};

const std::vector<OptionSpec> kSpecOptions = {
    {"sparsity", "--sparsity", Kind::kDouble, "Fraction of weights removed per row"},
    {"pattern", "--pattern", Kind::kString, "unstructured or n:m (n kept of every m, e.g. 2:4)"},
    {"bits", "--bits", Kind::kOptionalInt, "Quantize survivors to this many bits (none to skip)"},
    {"quant_group", "--quant-group", Kind::kUInt, "Weights per quantization scale"},
    {"damping", "--damping", Kind::kDouble, "Hessian damping as a fraction of mean(diag H)"},
    {"block_size", "--block-size", Kind::kUInt, "Weights removed per OBS step"},
};

json spec_defaults() {
    return {{"sparsity", 0.5}, {"pattern", "unstructured"}, {"bits", nullptr},
            {"quant_group", 128}, {"damping", 0.01}, {"block_size", 128}};
}

PruneSpec spec_from_config(const json & cfg) {
    PruneSpec spec;
    spec.sparsity = cfg.at("sparsity").get<double>();
    spec = parse_pattern(cfg.at("pattern").get<std::string>(), spec);
    if (!cfg.at("bits").is_null()) {
        spec.bits = cfg.at("bits").get<int>();
    }
    spec.quant_group = cfg.at("quant_group").get<std::size_t>();
    spec.damping = cfg.at("damping").get<double>();
    spec.block_size = cfg.at("block_size").get<std::size_t>();
    return spec;
}

fs::path existing_file(const json & cfg, const std::string & key) {
    const std::string p = cfg.at(key).get<std::string>();
    require(!p.empty(), ErrorCode::kInvalidArgument, "--" + key + " is required");
    require(fs::exists(p), ErrorCode::kIo, "missing file: " + p);
    return p;
}

ToyModel load_model_arg(const json & cfg) {
    const fs::path dir = existing_file(cfg, "model");
    require(fs::exists(dir / "model.json"), ErrorCode::kIo, "missing file: " + (dir / "model.json").string());
    return load_toy_model(dir);
}

Matrix load_data_arg(const json & cfg) {
    return tensor_codec_read(existing_file(cfg, "data"));
}

std::vector<double> parse_number_list(const std::string & text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            require(used == item.size(), ErrorCode::kInvalidArgument, "bad number '" + item + "'");
        } catch (const std::logic_error &) {
            fail(ErrorCode::kInvalidArgument, "bad number '" + item + "'");
        }
    }
    return out;
}

std::vector<std::string> split_list(const std::string & text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

json params_json(const ParamCount & p) {
    return {{"nonzero_weights", p.nonzero_weights},
            {"router_params", p.router_params},
            {"total_effective", p.total_effective}};
}

// ---- synth -----------------------------------------------------------------

json run_synth(const json & cfg, Parallelism, const fs::path & out) {
    SynthSpec s;
    s.seed = cfg.at("seed").get<std::uint64_t>();
    s.d = cfg.at("d").get<std::size_t>();
    s.d_ff = cfg.at("d_ff").get<std::size_t>();
    s.depth = cfg.at("depth").get<std::size_t>();
    s.n_clusters_true = cfg.at("clusters_true").get<std::size_t>();
    s.planted_count = cfg.at("planted").get<std::size_t>();
    s.planted_shape = parse_planted_shape(cfg.at("shape").get<std::string>());
    s.samples = cfg.at("samples").get<std::size_t>();
    s.separation = cfg.at("separation").get<double>();
    s.noise_min = cfg.at("noise_min").get<double>();
    s.noise_max = cfg.at("noise_max").get<double>();
    s.row_scale_log_std = cfg.at("row_scale_log_std").get<double>();
    s.validate();

    const PlantedModel pm = gen_planted_model(s);
    const Matrix x = gen_calibration(s);
    save_toy_model(pm.model, out / "model");
    tensor_codec_write(x, out / "calib.spxt", TensorDtype::kFloat32);
    json planted;
    planted["layer"] = linear_id(0);
    planted["indices"] = pm.planted;
    planted["dense_wd"] = pm.planted_wd;
    planted["heldout_start"] = heldout_start(s.samples);
    write_json_file(planted, out / "planted.json");
    return {{"synth_spec", synth_spec_to_json(s)},
            {"files", {"model/model.json", "calib.spxt", "planted.json"}},
            {"params", params_json(count_params(pm.model))}};
}

// ---- analyze ---------------------------------------------------------------

json run_analyze(const json & cfg, Parallelism par, const fs::path & out) {
    const ToyModel model = load_model_arg(cfg);
    const Matrix x = load_data_arg(cfg);
    const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
    const std::size_t budget = cfg.at("pair_budget").get<std::size_t>();
    const std::size_t bins = cfg.at("bins").get<std::size_t>();
    const std::vector<Matrix> inputs = layer_inputs(model, x);

    json layers = json::array();
    std::vector<double> wd0;
    for (std::size_t i = 0; i < model.linear_count(); ++i) {
        const Linear & l = model.linear(i);
        const std::string id = linear_id(i);
        const auto outputs = collect_outputs(l.w, inputs[i], l.bias);
        WdReport rep;
        rep.layer_id = id;
        rep.wd.resize(outputs.size());
        parallel_for(outputs.size(), par, [&](std::size_t n) {
            const auto & v = outputs[n].samples;
            const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
            rep.wd[n] = *lo == *hi ? 0.0 : wd_to_gaussian(v);
        });
        write_text_file(out / ("wd_" + id + ".csv"), wd_report_csv(rep));

        SeededRng rng = SeededRng(seed).child(id);
        const std::vector<double> md = mapping_difficulty_layer(l.w, inputs[i], budget, rng);
        std::string md_csv = "neuron_index,md\n";
        for (std::size_t n = 0; n < md.size(); ++n) {
            md_csv += std::to_string(n) + ',' + format_double(md[n]) + '\n';
        }
        write_text_file(out / ("md_" + id + ".csv"), md_csv);
        write_text_file(out / ("hist_wd_" + id + ".csv"), histogram_csv(histogram(rep.wd, bins)));

        const ComponentCount cc = min_components_for_variance(inputs[i], 0.9);
        layers.push_back({{"id", id},
                          {"median_wd", median_of(rep.wd)},
                          {"top_wd_neurons", select_top(rep.wd, std::min<std::size_t>(10, rep.wd.size()))},
                          {"pearson_wd_md", pearson(rep.wd, md)},
                          {"input_components_90pct", cc.count},
                          {"input_zero_variance", cc.zero_variance}});
        if (i == 0) {
            wd0 = rep.wd;
        }
    }

    long long neuron = cfg.at("neuron").get<long long>();
    if (neuron < 0) {
        neuron = static_cast<long long>(select_top(wd0, 1).front());
    }
    const Linear & l0 = model.linear(0);
    require(static_cast<std::size_t>(neuron) < l0.w.rows(), ErrorCode::kInvalidArgument,
            "--neuron exceeds the rows of " + linear_id(0));
    SeededRng rng = SeededRng(seed).child("io-pairs");
    const IoPairsResult io = io_pairs(l0.w.row(static_cast<std::size_t>(neuron)), x, budget, rng);
    write_text_file(out / "io_pairs.csv", io_pairs_csv(io));
    const auto outs = collect_outputs(Matrix(1, l0.w.cols(), std::vector<double>(
                                                                  l0.w.row(static_cast<std::size_t>(neuron)).begin(),
                                                                  l0.w.row(static_cast<std::size_t>(neuron)).end())),
                                      x);
    write_text_file(out / "hist_neuron.csv", histogram_csv(histogram(outs[0].samples, bins)));
    return {{"layers", layers},
            {"io_pairs_neuron", neuron},
            {"io_pairs", io.pairs.size()},
            {"io_pairs_skipped_zero_norm", io.skipped_zero_norm}};
}

// ---- prune -----------------------------------------------------------------

ToyModel baseline_model(const ToyModel & model, const Matrix & x0, BaselineMethod method, const PruneSpec & spec,
                        std::uint64_t seed, std::vector<Matrix> & scales) {
    ToyModel out = model;
    Matrix cur = x0;
    scales.assign(out.linear_count(), Matrix());
    auto quantize = [&](Matrix & w, std::size_t index) {
        if (spec.bits) {
            QuantizedMatrix q = rtn_quantize(w, *spec.bits, spec.quant_group);
            w = std::move(q.values);
            scales[index] = std::move(q.scales);
        }
    };
    for (std::size_t b = 0; b < out.blocks.size(); ++b) {
        ToyBlock & blk = out.blocks[b];
        blk.up.w = baseline_prune(blk.up.w, &cur, method, spec, layer_seed(seed, 2 * b));
        quantize(blk.up.w, 2 * b);
        Matrix h = linear_forward(blk.up, cur);
        gelu_inplace(h);
        blk.down.w = baseline_prune(blk.down.w, &h, method, spec, layer_seed(seed, 2 * b + 1));
        quantize(blk.down.w, 2 * b + 1);
        Matrix y = linear_forward(blk.down, h);
        if (out.residual) {
            for (std::size_t i = 0; i < y.size(); ++i) {
                y.data()[i] += cur.data()[i];
            }
        }
        cur = std::move(y);
    }
    return out;
}

json run_prune(const json & cfg, Parallelism par, const fs::path & out) {
    const ToyModel model = load_model_arg(cfg);
    const Matrix x = load_data_arg(cfg);
    const PruneSpec spec = spec_from_config(cfg);
    const std::string method = cfg.at("method").get<std::string>();
    const double keep = cfg.at("keep_dense").get<double>();
    const auto seed = cfg.at("seed").get<std::uint64_t>();
    ToyModel pruned;
    std::vector<Matrix> scales;
    if (method == "sparsegpt") {
        pruned = keep > 0.0 ? keep_dense_model(model, x, keep, spec, par, &scales)
                            : prune_model(model, x, spec, par, &scales);
    } else {
        require(keep == 0.0, ErrorCode::kInvalidArgument, "--keep-dense needs --method sparsegpt");
        pruned = baseline_model(model, x, parse_baseline(method), spec, seed, scales);
    }
    const fs::path model_dir = out / "model";
    save_toy_model(pruned, model_dir);
    // One sidecar per layer describing how its weights were compressed.
    for (std::size_t i = 0; i < pruned.linear_count(); ++i) {
        const std::string id = linear_id(i);
        json side;
        side["method"] = method;
        side["sparsity"] = spec.pattern == SparsityPattern::kNM
                               ? static_cast<double>(spec.zeros_per_group) / static_cast<double>(spec.group_size)
                               : spec.sparsity;
        side["pattern"] = spec.pattern_name();
        side["bits"] = spec.bits ? json(*spec.bits) : json(nullptr);
        side["quant_group"] = spec.quant_group;
        side["scales_path"] = nullptr;
        side["seed"] = layer_seed(seed, i);
        if (spec.bits) {
            const std::string name = id + ".scales.spxt";
            write_tensor_lossless(scales[i], model_dir / name);
            side["scales_path"] = name;
        }
        write_json_file(side, model_dir / (id + ".prune.json"));
    }
    return {{"spec", prune_spec_to_json(spec)},
            {"calibration_samples", x.cols()},
            {"output_mse_vs_dense", output_mse(toy_forward(pruned, x), toy_forward(model, x))},
            {"params", params_json(count_params(pruned))}};
}

// ---- expand ----------------------------------------------------------------

ExpandOptions expand_options(const json & cfg) {
    ExpandOptions o;
    o.clusters = cfg.at("clusters").get<std::size_t>();
    o.pca_components = cfg.at("pca_k").get<std::size_t>();
    o.seed = cfg.at("seed").get<std::uint64_t>();
    require(o.clusters >= 1, ErrorCode::kInvalidArgument, "--clusters must be >= 1");
    return o;
}

json run_expand(const json & cfg, Parallelism par, const fs::path & out) {
    const ToyModel model = load_model_arg(cfg);
    const Matrix x = load_data_arg(cfg);
    const PruneSpec spec = spec_from_config(cfg);
    const ExpandedModel em = expand_model(model, x, spec, expand_options(cfg), par);
    save_expanded_model(em, out / "model");
    json layers = json::array();
    for (std::size_t i = 0; i < 2 * em.blocks.size(); ++i) {
        const ExpertLayer & l = em.layer(i);
        layers.push_back({{"id", linear_id(i)},
                          {"clusters", l.clusters()},
                          {"router_dim", l.router.reduced_dim()},
                          {"cluster_sizes", l.provenance.cluster_sizes},
                          {"kmeans_iterations", l.router.kmeans.iterations_run}});
    }
    return {{"spec", prune_spec_to_json(spec)},
            {"propagation", em.propagation},
            {"calibration_samples", x.cols()},
            {"layers", layers},
            {"output_mse_vs_dense", output_mse(expanded_forward(em, x), toy_forward(model, x))},
            {"params", params_json(count_params(em))}};
}

// ---- eval ------------------------------------------------------------------

json run_eval(const json & cfg, Parallelism par, const fs::path & run_dir) {
    const EvalData data = split_eval_data(load_model_arg(cfg), load_data_arg(cfg));
    const std::string mode = cfg.at("mode").get<std::string>();
    const std::size_t bins = cfg.at("bins").get<std::size_t>();
    const PruneSpec spec = spec_from_config(cfg);
    json results;
    results["calibration_samples"] = data.calib.cols();
    results["heldout_samples"] = data.heldout.cols();
    results["quality_metric"] = "output MSE against the dense model on held-out columns";
    if (mode == "sweep") {
        SweepConfig sc;
        sc.axis = parse_sweep_axis(cfg.at("axis").get<std::string>());
        sc.grid = parse_number_list(cfg.at("grid").get<std::string>());
        sc.spec = spec;
        sc.expand = expand_options(cfg);
        sc.pair_budget = cfg.at("pair_budget").get<std::size_t>();
        sc.seed = cfg.at("seed").get<std::uint64_t>();
        sc.model_level = cfg.at("model_level").get<bool>();
        sc.neuron_level = cfg.at("neuron_level").get<bool>();
        sc.par = par;
        const SweepReport rep = run_sweep(data, sc);
        write_text_file(run_dir / "report.csv", sweep_csv(rep.rows));
        json points = json::array();
        for (std::size_t g = 0; g < rep.rows.size(); ++g) {
            const auto & recs = rep.neuron_records[g];
            const std::string tag = sweep_axis_name(sc.axis) + "_" + format_double(rep.rows[g].value);
            points.push_back({{"value", rep.rows[g].value}, {"status", rep.rows[g].status}});
            if (recs.empty()) {
                continue;
            }
            write_text_file(run_dir / ("neurons_" + tag + ".csv"), neuron_records_csv(recs));
            std::vector<double> ri;
            std::vector<double> wd;
            for (const auto & r : recs) {
                if (!r.ri_infinite) {
                    ri.push_back(r.ri);
                }
                wd.push_back(r.dense_wd);
            }
            if (!ri.empty()) {
                write_text_file(run_dir / ("hist_ri_" + tag + ".csv"), histogram_csv(histogram(ri, bins)));
            }
            if (g == 0) {
                write_text_file(run_dir / "hist_dense_wd.csv", histogram_csv(histogram(wd, bins)));
            }
        }
        results["points"] = points;
    } else if (mode == "ablation") {
        AblationConfig ac;
        ac.fraction = cfg.at("fraction").get<double>();
        ac.selectors.clear();
        for (const auto & s : split_list(cfg.at("selectors").get<std::string>())) {
            ac.selectors.push_back(parse_selector(s));
        }
        require(!ac.selectors.empty(), ErrorCode::kInvalidArgument, "--selectors is empty");
        ac.sparsities = parse_number_list(cfg.at("sparsities").get<std::string>());
        ac.spec = spec;
        ac.seed = cfg.at("seed").get<std::uint64_t>();
        ac.par = par;
        const auto rows = targeted_ablation(data, ac);
        write_text_file(run_dir / "report.csv", ablation_csv(rows));
        json mses = json::object();
        for (const auto & r : rows) {
            mses[r.selector].push_back(r.model_mse);
        }
        results["model_mse"] = mses;
    } else {
        fail(ErrorCode::kInvalidArgument, "--mode must be sweep or ablation");
    }
    return results;
}

// ---- bench -----------------------------------------------------------------

json run_bench(const json & cfg, Parallelism, const fs::path & out) {
    BenchConfig bc;
    const std::string sizes = cfg.at("sizes").get<std::string>();
    if (!sizes.empty()) {
        bc.sizes = parse_bench_sizes(sizes);
    }
    bc.formats.clear();
    for (const auto & f : split_list(cfg.at("formats").get<std::string>())) {
        bc.formats.push_back(parse_bench_format(f));
    }
    bc.sparsity = cfg.at("sparsity").get<double>();
    bc.reps = cfg.at("reps").get<std::size_t>();
    bc.warmup = cfg.at("warmup").get<std::size_t>();
    bc.repeats = cfg.at("repeats").get<std::size_t>();
    bc.seed = cfg.at("seed").get<std::uint64_t>();
    const auto rows = bench_matvec(bc);
    write_text_file(out / "bench.csv", bench_csv(rows));
    json macs = json::array();
    for (const auto & r : rows) {
        macs.push_back({{"rows", r.size.rows},
                        {"cols", r.size.cols},
                        {"format", bench_format_name(r.format)},
                        {"macs", r.macs},
                        {"nnz", r.nnz}});
    }
    // Latencies live in bench.csv only, so summary.json stays reproducible.
    return {{"mac_counts", macs}, {"latency_file", "bench.csv"}};
}

// ---- command table ---------------------------------------------------------

std::vector<Command> commands() {
    std::vector<Command> cmds;
    {
        Command c{"synth", "Generate a planted toy model and calibration data", {}, {}, run_synth};
        c.options = {
            {"d", "--d", Kind::kUInt, "Input width"},
            {"d_ff", "--d-ff", Kind::kUInt, "Hidden width"},
            {"depth", "--depth", Kind::kUInt, "Number of blocks"},
            {"clusters_true", "--clusters-true", Kind::kUInt, "Mixture components in the data"},
            {"planted", "--planted", Kind::kUInt, "Planted rows in block0.up"},
            {"shape", "--shape", Kind::kString, "bimodal, trimodal or heavy-tail"},
            {"samples", "--samples", Kind::kUInt, "Calibration columns"},
            {"separation", "--separation", Kind::kDouble, "Cluster mean distance from the origin"},
            {"noise_min", "--noise-min", Kind::kDouble, "Smallest per-dimension noise std"},
            {"noise_max", "--noise-max", Kind::kDouble, "Largest per-dimension noise std"},
            {"row_scale_log_std", "--row-scale-log-std", Kind::kDouble, "Log-normal spread of row norms"},
        };
        const SynthSpec s;
        c.defaults = {{"d", s.d},
                      {"d_ff", s.d_ff},
                      {"depth", s.depth},
                      {"clusters_true", s.n_clusters_true},
                      {"planted", s.planted_count},
                      {"shape", planted_shape_name(s.planted_shape)},
                      {"samples", s.samples},
                      {"separation", s.separation},
                      {"noise_min", s.noise_min},
                      {"noise_max", s.noise_max},
                      {"row_scale_log_std", s.row_scale_log_std}};
        cmds.push_back(std::move(c));
    }
    {
        Command c{"analyze", "Per-neuron WD, mapping difficulty and io-pair reports", {}, {}, run_analyze};
        c.options = {
            {"model", "--model", Kind::kString, "Toy model directory"},
            {"data", "--data", Kind::kString, "Calibration tensor"},
            {"pair_budget", "--pair-budget", Kind::kUInt, "Input pairs sampled for pairwise metrics"},
            {"neuron", "--neuron", Kind::kInt, "block0.up row for io_pairs.csv (-1: highest WD)"},
            {"bins", "--bins", Kind::kUInt, "Histogram bins"},
        };
        c.defaults = {{"model", ""}, {"data", ""}, {"pair_budget", kDefaultPairBudget}, {"neuron", -1}, {"bins", 40}};
        cmds.push_back(std::move(c));
    }
    {
        Command c{"prune", "Sequential one-shot pruning (sparsegpt or a baseline)", {}, {}, run_prune};
        c.options = {
            {"model", "--model", Kind::kString, "Toy model directory"},
            {"data", "--data", Kind::kString, "Calibration tensor"},
            {"method", "--method", Kind::kString, "sparsegpt, magnitude, wanda or random"},
            {"keep_dense", "--keep-dense", Kind::kDouble, "Fraction of top-WD rows kept dense per layer"},
        };
        c.options.insert(c.options.end(), kSpecOptions.begin(), kSpecOptions.end());
        c.defaults = spec_defaults();
        c.defaults.update(json{{"model", ""}, {"data", ""}, {"method", "sparsegpt"}, {"keep_dense", 0.0}});
        cmds.push_back(std::move(c));
    }
    {
        Command c{"expand", "Build a Sparse Expansion model", {}, {}, run_expand};
        c.options = {
            {"model", "--model", Kind::kString, "Toy model directory"},
            {"data", "--data", Kind::kString, "Calibration tensor"},
            {"clusters", "--clusters", Kind::kUInt, "Experts per layer"},
            {"pca_k", "--pca-k", Kind::kUInt, "Router PCA dimension (0: default for the width)"},
        };
        c.options.insert(c.options.end(), kSpecOptions.begin(), kSpecOptions.end());
        c.defaults = spec_defaults();
        c.defaults.update(json{{"model", ""}, {"data", ""}, {"clusters", 16}, {"pca_k", 0}});
        cmds.push_back(std::move(c));
    }
    {
        Command c{"eval", "Sweeps and targeted ablations written to a run directory", {}, {}, run_eval};
        c.options = {
            {"model", "--model", Kind::kString, "Toy model directory"},
            {"data", "--data", Kind::kString, "Calibration tensor (last quarter is held out)"},
            {"mode", "--mode", Kind::kString, "sweep or ablation"},
            {"axis", "--axis", Kind::kString, "sparsity, clusters, bits or keep_dense"},
            {"grid", "--grid", Kind::kString, "Comma-separated grid (empty: axis default)"},
            {"clusters", "--clusters", Kind::kUInt, "Experts per layer"},
            {"pca_k", "--pca-k", Kind::kUInt, "Router PCA dimension (0: default for the width)"},
            {"pair_budget", "--pair-budget", Kind::kUInt, "Input pairs sampled for pairwise metrics"},
            {"model_level", "--model-level", Kind::kBool, "Build whole-model pipelines per grid point"},
            {"neuron_level", "--neuron-level", Kind::kBool, "Per-neuron records on block0.up"},
            {"selectors", "--selectors", Kind::kString, "Ablation selectors (wd,mean,variance,weight_magnitude,random)"},
            {"fraction", "--fraction", Kind::kDouble, "Ablation fraction of rows"},
            {"sparsities", "--sparsities", Kind::kString, "Ablation sparsity grid"},
            {"bins", "--bins", Kind::kUInt, "Histogram bins"},
        };
        c.options.insert(c.options.end(), kSpecOptions.begin(), kSpecOptions.end());
        c.defaults = spec_defaults();
        c.defaults.update(json{{"model", ""},
                               {"data", ""},
                               {"mode", "sweep"},
                               {"axis", "sparsity"},
                               {"grid", ""},
                               {"clusters", 16},
                               {"pca_k", 0},
                               {"pair_budget", 20000},
                               {"model_level", true},
                               {"neuron_level", true},
                               {"selectors", "wd,random"},
                               {"fraction", 0.03125},
                               {"sparsities", "0.5,0.7,0.9"},
                               {"bins", 40}});
        cmds.push_back(std::move(c));
    }
    {
        Command c{"bench", "Matrix-vector latency for dense, csr and packed-2:4 storage", {}, {}, run_bench};
        c.options = {
            {"sizes", "--sizes", Kind::kString, "ROWSxCOLS list (empty: 4096x12288,4096x22016,11008x4096,8192x10240)"},
            {"formats", "--formats", Kind::kString, "dense,csr,packed-2:4"},
            {"sparsity", "--sparsity", Kind::kDouble, "csr sparsity"},
            {"reps", "--reps", Kind::kUInt, "Timed repetitions (>= 10)"},
            {"warmup", "--warmup", Kind::kUInt, "Untimed warmup runs"},
            {"repeats", "--repeats", Kind::kUInt, "Independent timing runs"},
        };
        c.defaults = {{"sizes", ""},      {"formats", "dense,csr,packed-2:4"}, {"sparsity", 0.5},
                      {"reps", 30},       {"warmup", 3},                       {"repeats", 3}};
        cmds.push_back(std::move(c));
    }
    return cmds;
}

int exit_code_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::kIo:
        return kExitMissingFile;
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kInfeasible:
        return kExitInvalidConfig;
    default:
        return kExitRuntime;
    }
}

void report_error(const std::string & kind, const std::string & message, int code) {
    json e;
    e["error"] = kind;
    e["message"] = message;
    e["exit_code"] = code;
    std::cerr << e.dump() << '\n';
}

unsigned env_threads() {
    if (const char * v = std::getenv("SPX_THREADS")) {
        try {
            return static_cast<unsigned>(std::stoul(v));
        } catch (const std::logic_error &) {
            throw ValueError{std::string("SPX_THREADS='") + v + "' is not a thread count", false};
        }
    }
    return 1;
}

} // namespace

int dispatch(const std::vector<std::string> & args) {
    spdlog::set_level(spdlog::level::warn);
    CLI::App app{"Sparse Expansion toolkit", "spx"};
    app.require_subcommand(1);

    const std::vector<Command> cmds = commands();
    std::map<std::string, std::map<std::string, std::string>> flag_values;
    std::map<std::string, std::map<std::string, CLI::Option *>> flag_opts;
    std::map<std::string, std::string> config_path;
    std::map<std::string, std::string> output;
    std::map<std::string, std::string> seed_text;
    std::map<std::string, std::string> threads_text;
    std::map<std::string, CLI::App *> subs;
    for (const Command & c : cmds) {
        CLI::App * sub = app.add_subcommand(c.name, c.help);
        subs[c.name] = sub;
        sub->add_option("--config", config_path[c.name], "JSON config file (flags override it)");
        flag_opts[c.name]["output"] = sub->add_option("-o,--output", output[c.name], "Output directory");
        flag_opts[c.name]["seed"] = sub->add_option("--seed", seed_text[c.name], "Random seed");
        flag_opts[c.name]["threads"] =
            sub->add_option("--threads", threads_text[c.name], "Worker threads, 0 for all cores (env SPX_THREADS)");
        for (const OptionSpec & o : c.options) {
            flag_opts[c.name][o.key] = sub->add_option(o.flags, flag_values[c.name][o.key], o.help);
        }
    }

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp & e) {
        std::cout << app.help();
        return kExitOk;
    } catch (const CLI::ParseError & e) {
        if (e.get_exit_code() == 0) {
            std::cout << app.help();
            return kExitOk;
        }
        std::cerr << app.help();
        report_error("usage", e.what(), kExitUsage);
        return kExitUsage;
    }

    const Command * cmd = nullptr;
    for (const Command & c : cmds) {
        if (subs[c.name]->parsed()) {
            cmd = &c;
        }
    }
    if (cmd == nullptr) {
        std::cerr << app.help();
        report_error("usage", "no subcommand given", kExitUsage);
        return kExitUsage;
    }

    fs::path out_dir;
    json cfg;
    try {
        // defaults < config file < flags
        std::map<std::string, Kind> kinds = {{"seed", Kind::kUInt}, {"output", Kind::kString}};
        for (const OptionSpec & o : cmd->options) {
            kinds[o.key] = o.kind;
        }
        cfg = cmd->defaults;
        cfg["seed"] = 0;
        cfg["output"] = "";
        unsigned threads = env_threads();
        const std::string & cpath = config_path[cmd->name];
        if (!cpath.empty()) {
            require(fs::exists(cpath), ErrorCode::kIo, "missing file: " + cpath);
            const json file = read_json_file(cpath);
            if (!file.is_object()) {
                throw ValueError{"config file must hold a JSON object", false};
            }
            for (const auto & [key, value] : file.items()) {
                if (key == "command") {
                    continue;
                }
                if (key == "threads") {
                    if (!value.is_number_unsigned()) {
                        throw ValueError{"config key 'threads' has the wrong type", false};
                    }
                    threads = value.get<unsigned>();
                    continue;
                }
                const auto k = kinds.find(key);
                if (k == kinds.end()) {
                    throw ValueError{"unknown config key '" + key + "' for " + cmd->name, false};
                }
                cfg[key] = check_config_value(key, value, k->second);
            }
        }
        for (const auto & [key, kind] : kinds) {
            const CLI::Option * opt = flag_opts[cmd->name][key];
            if (opt == nullptr || opt->count() == 0) {
                continue;
            }
            const std::string & text =
                key == "output" ? output[cmd->name] : (key == "seed" ? seed_text[cmd->name]
                                                                     : flag_values[cmd->name][key]);
            cfg[key] = convert_text(key, text, kind);
        }
        if (flag_opts[cmd->name]["threads"]->count() > 0) {
            threads = convert_text("threads", threads_text[cmd->name], Kind::kUInt).get<unsigned>();
        }
        if (cfg.at("output").get<std::string>().empty()) {
            throw ValueError{"--output is required", true};
        }
        cfg["command"] = cmd->name;

        out_dir = cfg.at("output").get<std::string>();
        fs::path result_dir = out_dir;
        json echo = cfg;
        echo.erase("output");
        if (cmd->name == "eval") {
            result_dir = out_dir / config_hash(echo);
        }
        fs::create_directories(result_dir);
        json results = cmd->run(cfg, Parallelism{threads}, result_dir);

        json summary;
        summary["command"] = cmd->name;
        summary["status"] = "ok";
        summary["config"] = echo;
        summary["results"] = std::move(results);
        write_json_file(summary, result_dir / "summary.json");
        std::cout << result_dir.string() << '\n';
        return kExitOk;
    } catch (const ValueError & e) {
        const int code = e.from_flag ? kExitUsage : kExitInvalidConfig;
        if (e.from_flag) {
            std::cerr << subs[cmd->name]->help();
        }
        report_error(e.from_flag ? "usage" : "invalid_config", e.message, code);
        return code;
    } catch (const Error & e) {
        const int code = exit_code_for(e.code());
        report_error(error_code_name(e.code()), e.what(), code);
        if (!out_dir.empty() && fs::exists(out_dir)) {
            json summary;
            summary["command"] = cmd->name;
            summary["status"] = "error";
            summary["error"] = {{"code", error_code_name(e.code())}, {"message", e.what()}};
            summary["config"] = cfg;
            try {
                write_json_file(summary, out_dir / "summary.json");
            } catch (const Error &) {
            }
        }
        return code;
    } catch (const std::exception & e) {
        report_error("runtime", e.what(), kExitRuntime);
        return kExitRuntime;
    }
}

int dispatch(int argc, const char * const * argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) {
        args.emplace_back(argv[i]);
    }
    return dispatch(args);
}

} // namespace spx
