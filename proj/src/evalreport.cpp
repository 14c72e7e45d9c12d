#include "spx/evalreport.hpp"

#include "spx/error.hpp"
#include "spx/rng.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace spx {

using nlohmann::json;

EvalData split_eval_data(ToyModel model, const Matrix & x) {
    require(x.cols() >= 8, ErrorCode::kInvalidArgument, "split_eval_data: need at least 8 columns");
    require(x.rows() == model.input_dim(), ErrorCode::kShapeMismatch, "split_eval_data: data width != model input");
    const std::size_t cut = x.cols() - x.cols() / 4;
    EvalData d;
    d.model = std::move(model);
    d.calib = x.col_range(0, cut);
    d.heldout = x.col_range(cut, x.cols() - cut);
    return d;
}

double per_neuron_rmse(std::span<const double> dense, std::span<const double> sparse) {
    require(dense.size() == sparse.size(), ErrorCode::kShapeMismatch, "per_neuron_rmse: length mismatch");
    require(!dense.empty(), ErrorCode::kInvalidArgument, "per_neuron_rmse: empty outputs");
    double s = 0.0;
    for (std::size_t i = 0; i < dense.size(); ++i) {
        const double d = dense[i] - sparse[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(dense.size()));
}

double per_neuron_rmse(const NeuronOutputs & dense, const NeuronOutputs & sparse) {
    return per_neuron_rmse(dense.samples, sparse.samples);
}

double relative_improvement(double rmse_sgpt, double rmse_se) {
    require(rmse_sgpt >= 0.0 && rmse_se >= 0.0, ErrorCode::kDomain, "relative_improvement: negative RMSE");
    if (rmse_se == 0.0) {
        return rmse_sgpt == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    }
    return rmse_sgpt / rmse_se;
}

double output_mse(const Matrix & a, const Matrix & b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::kShapeMismatch, "output_mse: shape mismatch");
    require(a.size() > 0, ErrorCode::kInvalidArgument, "output_mse: empty matrices");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

double LayerEval::median_ri() const {
    std::vector<double> v;
    v.reserve(records.size());
    for (const auto & r : records) {
        v.push_back(r.ri);
    }
    return median_of(std::move(v));
}

double LayerEval::fraction_ri_at_least_one() const {
    std::size_t n = 0;
    for (const auto & r : records) {
        n += r.ri >= 1.0 ? 1 : 0;
    }
    return records.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(records.size());
}

namespace {

bool has_spread(std::span<const double> v) {
    if (v.size() < 2) {
        return false;
    }
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return *lo != *hi;
}

} // namespace

LayerEval evaluate_layer(const Linear & layer, const Matrix & calib, const Matrix & heldout,
                         const LayerEvalOptions & opts) {
    require(calib.rows() == layer.w.cols() && heldout.rows() == layer.w.cols(), ErrorCode::kShapeMismatch,
            "evaluate_layer: data width != layer width");
    const std::size_t n = layer.w.rows();
    const std::size_t s = heldout.cols();

    LayerEval ev;
    ev.dense_out = linear_forward(layer, heldout);
    Linear sgpt = layer;
    sgpt.w = compress_weights(layer.w, accumulate_hessian(calib, opts.spec.damping), opts.spec, opts.par);
    ev.sparsegpt_out = linear_forward(sgpt, heldout);
    const ExpertLayer expanded = expand_layer(layer, calib, opts.spec, opts.expand, opts.par);
    ev.expansion_out = expert_layer_forward(expanded, heldout, ev.routes);

    const std::size_t c = expanded.clusters();
    std::vector<std::vector<std::size_t>> groups(c);
    for (std::size_t j = 0; j < s; ++j) {
        groups[ev.routes[j]].push_back(j);
    }
    ev.cluster_sizes.resize(c);
    for (std::size_t k = 0; k < c; ++k) {
        ev.cluster_sizes[k] = groups[k].size();
    }

    SeededRng rng = SeededRng(opts.seed).child("evaluate-layer");
    PairSet pairs;
    std::vector<PairSet> cluster_pairs(c);
    std::vector<std::vector<double>> cluster_cols(c);
    if (opts.mapping_difficulty) {
        pairs = sample_pairs(heldout, opts.pair_budget, rng);
        for (std::size_t k = 0; k < c; ++k) {
            if (groups[k].size() >= 2) {
                cluster_pairs[k] = sample_pairs(heldout.select_cols(groups[k]), opts.pair_budget, rng);
            }
        }
    }

    ev.records.resize(n);
    parallel_for(n, opts.par, [&](std::size_t i) {
        NeuronEvalRecord & r = ev.records[i];
        const auto dense = ev.dense_out.row(i);
        const auto se = ev.expansion_out.row(i);
        r.neuron_index = i;
        r.dense_wd = has_spread(dense) ? wd_to_gaussian(dense) : 0.0;
        r.rmse_sparsegpt = per_neuron_rmse(dense, ev.sparsegpt_out.row(i));
        r.rmse_expansion = per_neuron_rmse(dense, se);
        r.ri = relative_improvement(r.rmse_sparsegpt, r.rmse_expansion);
        r.ri_infinite = std::isinf(r.ri);
        r.mean_abs = std::fabs(mean_of(dense));
        r.variance = variance_of(dense);

        std::vector<double> wds;
        std::vector<double> mds;
        std::vector<double> wd_sizes;
        std::vector<double> md_sizes;
        std::vector<double> part;
        for (std::size_t k = 0; k < c; ++k) {
            if (groups[k].size() < 2) {
                continue;
            }
            part.clear();
            for (std::size_t j : groups[k]) {
                part.push_back(se[j]);
            }
            if (!has_spread(part)) {
                continue;
            }
            wds.push_back(wd_to_gaussian(part));
            wd_sizes.push_back(static_cast<double>(part.size()));
            if (opts.mapping_difficulty && cluster_pairs[k].size() > 0 && cluster_pairs[k].max_input_dist > 0.0) {
                std::vector<double> dy(cluster_pairs[k].size());
                for (std::size_t p = 0; p < dy.size(); ++p) {
                    dy[p] = std::fabs(part[cluster_pairs[k].first[p]] - part[cluster_pairs[k].second[p]]);
                }
                if (median_of(dy) > 0.0) {
                    mds.push_back(mapping_difficulty(part, cluster_pairs[k]));
                    md_sizes.push_back(static_cast<double>(part.size()));
                }
            }
        }
        r.weighted_cluster_wd = wds.empty() ? 0.0 : weighted_cluster_average(wds, wd_sizes);
        r.weighted_cluster_md = mds.empty() ? 0.0 : weighted_cluster_average(mds, md_sizes);
        if (opts.mapping_difficulty && pairs.size() > 0 && has_spread(dense)) {
            try {
                r.md = mapping_difficulty(dense, pairs);
            } catch (const Error & e) {
                if (e.code() != ErrorCode::kDegenerate) {
                    throw;
                }
            }
        }
    });
    return ev;
}

namespace {

void append_double(std::string & out, double v) {
    out += format_double(v);
}

} // namespace

std::string format_double(double v) {
    if (std::isnan(v)) {
        return "nan";
    }
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string neuron_records_csv(const std::vector<NeuronEvalRecord> & records) {
    std::string out =
        "neuron_index,dense_wd,md,rmse_sparsegpt,rmse_expansion,ri,ri_infinite,weighted_cluster_wd,"
        "weighted_cluster_md,mean_abs,variance\n";
    for (const auto & r : records) {
        out += std::to_string(r.neuron_index);
        for (double v : {r.dense_wd, r.md, r.rmse_sparsegpt, r.rmse_expansion, r.ri}) {
            out += ',';
            append_double(out, v);
        }
        out += r.ri_infinite ? ",1" : ",0";
        for (double v : {r.weighted_cluster_wd, r.weighted_cluster_md, r.mean_abs, r.variance}) {
            out += ',';
            append_double(out, v);
        }
        out += '\n';
    }
    return out;
}

ToyModel keep_dense_model(const ToyModel & model, const Matrix & x0, double keep_fraction, const PruneSpec & spec,
                          Parallelism par, std::vector<Matrix> * scales) {
    model.validate();
    ToyModel out = model;
    Matrix cur = x0;
    std::vector<Matrix> local(out.linear_count());
    auto compress = [&](Linear & l, const Matrix & x, std::size_t index) {
        const HessianState h = accumulate_hessian(x, spec.damping);
        WdReport wd;
        wd.layer_id = linear_id(index);
        if (keep_fraction > 0.0) {
            wd = wd_report(wd.layer_id, collect_outputs(l.w, x));
        } else {
            wd.wd.assign(l.w.rows(), 0.0);
        }
        l.w = allocate_keep_dense(l.w, h, wd, keep_fraction, spec.sparsity, spec, par);
        if (spec.bits) {
            QuantizedMatrix q = rtn_quantize(l.w, *spec.bits, spec.quant_group);
            l.w = std::move(q.values);
            local[index] = std::move(q.scales);
        }
    };
    for (std::size_t b = 0; b < out.blocks.size(); ++b) {
        ToyBlock & blk = out.blocks[b];
        compress(blk.up, cur, 2 * b);
        Matrix h = linear_forward(blk.up, cur);
        gelu_inplace(h);
        compress(blk.down, h, 2 * b + 1);
        Matrix y = linear_forward(blk.down, h);
        if (out.residual) {
            for (std::size_t i = 0; i < y.size(); ++i) {
                y.data()[i] += cur.data()[i];
            }
        }
        require(y.all_finite(), ErrorCode::kNonFinite, "non-finite activations after " + linear_id(2 * b + 1));
        cur = std::move(y);
    }
    if (scales != nullptr) {
        *scales = std::move(local);
    }
    return out;
}

SweepAxis parse_sweep_axis(const std::string & name) {
    if (name == "sparsity") {
        return SweepAxis::kSparsity;
    }
    if (name == "clusters") {
        return SweepAxis::kClusters;
    }
    if (name == "bits") {
        return SweepAxis::kBits;
    }
    if (name == "keep_dense") {
        return SweepAxis::kKeepDense;
    }
    fail(ErrorCode::kInvalidArgument, "unknown sweep axis '" + name + "' (sparsity, clusters, bits, keep_dense)");
}

std::string sweep_axis_name(SweepAxis axis) {
    switch (axis) {
    case SweepAxis::kSparsity:
        return "sparsity";
    case SweepAxis::kClusters:
        return "clusters";
    case SweepAxis::kBits:
        return "bits";
    case SweepAxis::kKeepDense:
        return "keep_dense";
    }
    return "sparsity";
}

std::vector<double> default_grid(SweepAxis axis) {
    switch (axis) {
    case SweepAxis::kSparsity:
        return {0.5, 0.6, 0.7, 0.8, 0.9};
    case SweepAxis::kClusters:
        return {1, 2, 4, 8, 16};
    case SweepAxis::kBits:
        return {3, 4};
    case SweepAxis::kKeepDense:
        return {0.0, 0.03, 0.05, 0.07, 0.10};
    }
    return {};
}

namespace {

void sweep_point(const EvalData & data, const SweepConfig & cfg, double value, Parallelism par, SweepRow & row,
                 std::vector<NeuronEvalRecord> & records) {
    PruneSpec spec = cfg.spec;
    ExpandOptions expand = cfg.expand;
    switch (cfg.axis) {
    case SweepAxis::kSparsity:
        spec.pattern = SparsityPattern::kUnstructured;
        spec.sparsity = value;
        break;
    case SweepAxis::kClusters:
        require(value >= 1.0 && value == std::floor(value), ErrorCode::kInvalidArgument,
                "cluster counts must be positive integers");
        expand.clusters = static_cast<std::size_t>(value);
        break;
    case SweepAxis::kBits:
        spec.pattern = SparsityPattern::kNM;
        spec.zeros_per_group = 2;
        spec.group_size = 4;
        spec.bits = static_cast<int>(value);
        break;
    case SweepAxis::kKeepDense:
        break;
    }

    const Matrix dense = toy_forward(data.model, data.heldout);
    if (cfg.axis == SweepAxis::kKeepDense) {
        const ToyModel kd = keep_dense_model(data.model, data.calib, value, spec, par);
        row.mse_sparsegpt = output_mse(toy_forward(kd, data.heldout), dense);
        row.mse_expansion = row.mse_sparsegpt;
        row.params = count_params(kd);
        row.median_ri = 1.0;
        row.frac_ri_ge_1 = 1.0;
        return;
    }
    if (cfg.model_level) {
        const ToyModel pruned = prune_model(data.model, data.calib, spec, par);
        row.mse_sparsegpt = output_mse(toy_forward(pruned, data.heldout), dense);
        const ExpandedModel em = expand_model(data.model, data.calib, spec, expand, par);
        row.mse_expansion = output_mse(expanded_forward(em, data.heldout), dense);
        row.params = count_params(em);
    }
    if (cfg.neuron_level) {
        LayerEvalOptions lo;
        lo.spec = spec;
        lo.expand = expand;
        lo.expand.seed = layer_seed(expand.seed, 0);
        lo.pair_budget = cfg.pair_budget;
        lo.seed = cfg.seed;
        lo.par = par;
        LayerEval ev = evaluate_layer(data.model.blocks[0].up, data.calib, data.heldout, lo);
        row.median_ri = ev.median_ri();
        row.frac_ri_ge_1 = ev.fraction_ri_at_least_one();
        records = std::move(ev.records);
    }
}

} // namespace

SweepReport run_sweep(const EvalData & data, const SweepConfig & config) {
    const std::vector<double> grid = config.grid.empty() ? default_grid(config.axis) : config.grid;
    SweepReport report;
    report.rows.resize(grid.size());
    report.neuron_records.resize(grid.size());
    const bool outer = config.par.resolved() > 1 && grid.size() > 1;
    parallel_for(grid.size(), outer ? config.par : Parallelism{1}, [&](std::size_t g) {
        SweepRow & row = report.rows[g];
        row.axis = sweep_axis_name(config.axis);
        row.value = grid[g];
        try {
            sweep_point(data, config, grid[g], outer ? Parallelism{1} : config.par, row, report.neuron_records[g]);
        } catch (const Error & e) {
            row.status = std::string(error_code_name(e.code())) + ": " + e.what();
            spdlog::warn("sweep point {}={} failed: {}", row.axis, row.value, e.what());
        }
    });
    return report;
}

std::string sweep_csv(const std::vector<SweepRow> & rows) {
    std::string out =
        "axis,value,status,mse_sparsegpt,mse_expansion,median_ri,frac_ri_ge_1,nonzero_weights,router_params,"
        "total_effective\n";
    for (const auto & r : rows) {
        out += r.axis + ',' + format_double(r.value) + ",\"" + r.status + "\"";
        for (double v : {r.mse_sparsegpt, r.mse_expansion, r.median_ri, r.frac_ri_ge_1}) {
            out += ',';
            append_double(out, v);
        }
        out += ',' + std::to_string(r.params.nonzero_weights) + ',' + std::to_string(r.params.router_params) + ',' +
               std::to_string(r.params.total_effective) + '\n';
    }
    return out;
}

Selector parse_selector(const std::string & name) {
    if (name == "wd") {
        return Selector::kWd;
    }
    if (name == "mean") {
        return Selector::kMean;
    }
    if (name == "variance") {
        return Selector::kVariance;
    }
    if (name == "weight_magnitude") {
        return Selector::kWeightMagnitude;
    }
    if (name == "random") {
        return Selector::kRandom;
    }
    fail(ErrorCode::kInvalidArgument,
         "unknown selector '" + name + "' (wd, mean, variance, weight_magnitude, random)");
}

std::string selector_name(Selector s) {
    switch (s) {
    case Selector::kWd:
        return "wd";
    case Selector::kMean:
        return "mean";
    case Selector::kVariance:
        return "variance";
    case Selector::kWeightMagnitude:
        return "weight_magnitude";
    case Selector::kRandom:
        return "random";
    }
    return "wd";
}

std::vector<std::size_t> select_neurons(Selector selector, const Linear & layer, const Matrix & x, double fraction,
                                        std::uint64_t seed) {
    require(fraction >= 0.0 && fraction <= 1.0, ErrorCode::kInvalidArgument, "selection fraction outside [0, 1]");
    const std::size_t n = layer.w.rows();
    const auto count = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
    if (count == 0) {
        return {};
    }
    if (selector == Selector::kRandom) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        SeededRng rng = SeededRng(seed).child("random-selector");
        rng.shuffle(std::span<std::size_t>(idx));
        idx.resize(count);
        std::sort(idx.begin(), idx.end());
        return idx;
    }
    std::vector<double> scores(n);
    if (selector == Selector::kWeightMagnitude) {
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = std::sqrt(dot(layer.w.row(i), layer.w.row(i)));
        }
        return select_top(scores, count);
    }
    const Matrix y = linear_forward(layer, x);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = y.row(i);
        switch (selector) {
        case Selector::kWd:
            scores[i] = has_spread(row) ? wd_to_gaussian(row) : 0.0;
            break;
        case Selector::kMean:
            scores[i] = std::fabs(mean_of(row));
            break;
        case Selector::kVariance:
            scores[i] = variance_of(row);
            break;
        default:
            break;
        }
    }
    return select_top(scores, count);
}

std::vector<AblationRow> targeted_ablation(const EvalData & data, const AblationConfig & config) {
    require(config.layer_index < data.model.linear_count(), ErrorCode::kInvalidArgument,
            "targeted_ablation: layer index out of range");
    const std::vector<Matrix> inputs = layer_inputs(data.model, data.calib);
    const Matrix & x = inputs[config.layer_index];
    const Linear & layer = data.model.linear(config.layer_index);
    const HessianState h = accumulate_hessian(x, config.spec.damping);
    const Matrix dense = toy_forward(data.model, data.heldout);

    std::vector<AblationRow> rows;
    for (Selector sel : config.selectors) {
        const std::vector<std::size_t> picked = select_neurons(sel, layer, x, config.fraction, config.seed);
        for (double s : config.sparsities) {
            AblationRow row;
            row.selector = selector_name(sel);
            row.fraction = config.fraction;
            row.sparsity = s;
            row.selected = picked.size();
            rows.push_back(row);
        }
    }
    const std::size_t per_selector = config.sparsities.size();
    parallel_for(rows.size(), config.par, [&](std::size_t r) {
        AblationRow & row = rows[r];
        try {
            const Selector sel = config.selectors[r / per_selector];
            const std::vector<std::size_t> picked =
                select_neurons(sel, layer, x, config.fraction, config.seed);
            PruneSpec spec = config.spec;
            spec.pattern = SparsityPattern::kUnstructured;
            spec.sparsity = row.sparsity;
            ToyModel m = data.model;
            m.linear(config.layer_index).w = prune_neuron_subset(layer.w, h, picked, spec);
            row.model_mse = output_mse(toy_forward(m, data.heldout), dense);
        } catch (const Error & e) {
            row.status = std::string(error_code_name(e.code())) + ": " + e.what();
        }
    });
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow> & rows) {
    std::string out = "selector,fraction,sparsity,selected,status,model_mse\n";
    for (const auto & r : rows) {
        out += r.selector + ',' + format_double(r.fraction) + ',' + format_double(r.sparsity) + ',' +
               std::to_string(r.selected) + ",\"" + r.status + "\"," + format_double(r.model_mse) + '\n';
    }
    return out;
}

std::vector<HistBin> histogram(std::span<const double> samples, std::size_t bin_count) {
    require(bin_count >= 1, ErrorCode::kInvalidArgument, "histogram: bin_count must be >= 1");
    require(!samples.empty(), ErrorCode::kInvalidArgument, "histogram: empty samples");
    const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    std::vector<HistBin> bins(bin_count);
    const double width = (hi - lo) / static_cast<double>(bin_count);
    for (std::size_t b = 0; b < bin_count; ++b) {
        bins[b].left = lo + width * static_cast<double>(b);
        bins[b].right = b + 1 == bin_count ? hi : lo + width * static_cast<double>(b + 1);
    }
    for (double v : samples) {
        std::size_t b = 0;
        if (width > 0.0) {
            b = static_cast<std::size_t>((v - lo) / width);
            b = std::min(b, bin_count - 1);
        }
        ++bins[b].count;
    }
    return bins;
}

std::string histogram_csv(const std::vector<HistBin> & bins) {
    std::string out = "bin_left,bin_right,count\n";
    for (const auto & b : bins) {
        out += format_double(b.left) + ',' + format_double(b.right) + ',' + std::to_string(b.count) + '\n';
    }
    return out;
}

std::string config_hash(const json & config) {
    const std::uint64_t h = fnv1a64(config.dump());
    char buf[17];
    static const char * hex = "0123456789abcdef";
    for (int i = 0; i < 16; ++i) {
        buf[i] = hex[(h >> (60 - 4 * i)) & 0xF];
    }
    buf[16] = '\0';
    return std::string(buf);
}

void write_text_file(const std::filesystem::path & path, const std::string & text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(os.good(), ErrorCode::kIo, "cannot write " + path.string());
    os << text;
    require(os.good(), ErrorCode::kIo, "write failed for " + path.string());
}

std::string read_text_file(const std::filesystem::path & path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), ErrorCode::kIo, "cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

} // namespace spx
