#include "spx/expansion.hpp"

#include "spx/error.hpp"
#include "spx/json_io.hpp"
#include "spx/rng.hpp"
#include "spx/tensor_io.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>

namespace spx {

namespace fs = std::filesystem;
using nlohmann::json;

Matrix compress_weights(const Matrix & w, const HessianState & h, const PruneSpec & spec, Parallelism par,
                        Matrix * scales) {
    Matrix out = sparsegpt_prune(w, h, spec, par);
    if (spec.bits) {
        QuantizedMatrix q = rtn_quantize(out, *spec.bits, spec.quant_group);
        out = std::move(q.values);
        if (scales != nullptr) {
            *scales = std::move(q.scales);
        }
    }
    return out;
}

std::uint64_t layer_seed(std::uint64_t seed, std::size_t index) {
    return SeededRng(seed).child(static_cast<std::uint64_t>(index)).next_u64();
}

ExpertLayer expand_layer(const Linear & dense, const Matrix & x, const PruneSpec & spec, const ExpandOptions & opts,
                         Parallelism par) {
    const std::size_t m = dense.w.cols();
    const std::size_t s = x.cols();
    require(x.rows() == m, ErrorCode::kShapeMismatch,
            "expand_layer: calibration has " + std::to_string(x.rows()) + " features, layer width is " +
                std::to_string(m));
    require(s >= opts.clusters, ErrorCode::kInvalidArgument,
            "expand_layer: " + std::to_string(s) + " calibration inputs for " + std::to_string(opts.clusters) +
                " clusters");
    spec.validate(m);

    ExpertLayer layer;
    RouterOptions ropts;
    ropts.clusters = opts.clusters;
    ropts.pca_components = opts.pca_components;
    ropts.seed = opts.seed;
    ropts.kmeans = opts.kmeans;
    layer.router = fit_router(x, ropts);
    layer.bias = dense.bias;

    const std::size_t c = opts.clusters;
    std::vector<std::vector<std::size_t>> groups(c);
    const std::vector<std::size_t> routes = route_all(layer.router, x);
    for (std::size_t j = 0; j < s; ++j) {
        groups[routes[j]].push_back(j);
    }

    layer.provenance.spec = spec;
    layer.provenance.seed = opts.seed;
    layer.provenance.cluster_sizes.resize(c);
    layer.provenance.pooled.assign(c, false);
    for (std::size_t k = 0; k < c; ++k) {
        layer.provenance.cluster_sizes[k] = groups[k].size();
        layer.provenance.pooled[k] = groups[k].size() < m && groups[k].size() < s;
    }

    HessianState global;
    if (std::find(layer.provenance.pooled.begin(), layer.provenance.pooled.end(), true) !=
        layer.provenance.pooled.end()) {
        global = accumulate_hessian(x, spec.damping);
    }

    layer.experts.resize(c);
    const bool outer = c > 1;
    auto build = [&](std::size_t k, Parallelism inner) {
        HessianState h;
        if (groups[k].size() == s) {
            h = accumulate_hessian(x, spec.damping);
        } else if (groups[k].empty()) {
            h.h = Matrix(m, m);
            h.damping_fraction = spec.damping;
        } else {
            h = accumulate_hessian(x.select_cols(groups[k]), spec.damping);
        }
        if (layer.provenance.pooled[k]) {
            h = pool_hessian(h, global, opts.pool_alpha);
        }
        layer.experts[k] = compress_weights(dense.w, h, spec, inner);
    };
    if (outer) {
        parallel_for(c, par, [&](std::size_t k) { build(k, Parallelism{1}); });
    } else {
        build(0, par);
    }
    return layer;
}

Matrix expert_layer_forward(const ExpertLayer & layer, const Matrix & x, std::vector<std::size_t> & routes) {
    require(!layer.experts.empty(), ErrorCode::kInvalidArgument, "expert layer has no experts");
    require(x.rows() == layer.in_dim(), ErrorCode::kShapeMismatch,
            "expert_layer_forward: input has " + std::to_string(x.rows()) + " features, layer width is " +
                std::to_string(layer.in_dim()));
    routes = route_all(layer.router, x);
    Matrix y(layer.out_dim(), x.cols());
    if (layer.clusters() == 1) {
        y = matmul(layer.experts[0], x);
    } else {
        std::vector<std::vector<std::size_t>> groups(layer.clusters());
        for (std::size_t j = 0; j < x.cols(); ++j) {
            groups[routes[j]].push_back(j);
        }
        for (std::size_t k = 0; k < groups.size(); ++k) {
            if (groups[k].empty()) {
                continue;
            }
            const Matrix part = matmul(layer.experts[k], x.select_cols(groups[k]));
            for (std::size_t i = 0; i < y.rows(); ++i) {
                for (std::size_t t = 0; t < groups[k].size(); ++t) {
                    y(i, groups[k][t]) = part(i, t);
                }
            }
        }
    }
    if (!layer.bias.empty()) {
        for (std::size_t i = 0; i < y.rows(); ++i) {
            for (double & v : y.row(i)) {
                v += layer.bias[i];
            }
        }
    }
    return y;
}

Matrix expert_layer_forward(const ExpertLayer & layer, const Matrix & x) {
    std::vector<std::size_t> routes;
    return expert_layer_forward(layer, x, routes);
}

namespace {

void check_finite(const Matrix & m, std::size_t index) {
    require(m.all_finite(), ErrorCode::kNonFinite, "non-finite activations after " + linear_id(index));
}

void add_inplace(Matrix & a, const Matrix & b) {
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i) {
        da[i] += db[i];
    }
}

} // namespace

ExpandedModel expand_model(const ToyModel & model, const Matrix & x0, const PruneSpec & spec,
                           const ExpandOptions & opts, Parallelism par) {
    model.validate();
    require(x0.cols() > 0, ErrorCode::kInvalidArgument, "expand_model: empty calibration set");
    ExpandedModel out;
    out.residual = model.residual;
    Matrix cur = x0;
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
        ExpandOptions o = opts;
        o.seed = layer_seed(opts.seed, 2 * b);
        ExpandedBlock eb;
        eb.up = expand_layer(model.blocks[b].up, cur, spec, o, par);
        Matrix h = expert_layer_forward(eb.up, cur);
        gelu_inplace(h);
        check_finite(h, 2 * b);
        o.seed = layer_seed(opts.seed, 2 * b + 1);
        eb.down = expand_layer(model.blocks[b].down, h, spec, o, par);
        Matrix y = expert_layer_forward(eb.down, h);
        if (model.residual) {
            add_inplace(y, cur);
        }
        check_finite(y, 2 * b + 1);
        spdlog::debug("expanded block {}", b);
        out.blocks.push_back(std::move(eb));
        cur = std::move(y);
    }
    return out;
}

Matrix expanded_forward(const ExpandedModel & model, const Matrix & x) {
    Matrix cur = x;
    for (const ExpandedBlock & b : model.blocks) {
        Matrix h = expert_layer_forward(b.up, cur);
        gelu_inplace(h);
        Matrix y = expert_layer_forward(b.down, h);
        if (model.residual) {
            add_inplace(y, cur);
        }
        cur = std::move(y);
    }
    return cur;
}

ToyModel prune_model(const ToyModel & model, const Matrix & x0, const PruneSpec & spec, Parallelism par,
                     std::vector<Matrix> * scales) {
    model.validate();
    require(x0.cols() > 0, ErrorCode::kInvalidArgument, "prune_model: empty calibration set");
    ToyModel out = model;
    std::vector<Matrix> local(out.linear_count());
    Matrix cur = x0;
    for (std::size_t b = 0; b < out.blocks.size(); ++b) {
        ToyBlock & blk = out.blocks[b];
        blk.up.w = compress_weights(blk.up.w, accumulate_hessian(cur, spec.damping), spec, par, &local[2 * b]);
        Matrix h = linear_forward(blk.up, cur);
        gelu_inplace(h);
        check_finite(h, 2 * b);
        blk.down.w = compress_weights(blk.down.w, accumulate_hessian(h, spec.damping), spec, par, &local[2 * b + 1]);
        Matrix y = linear_forward(blk.down, h);
        if (out.residual) {
            add_inplace(y, cur);
        }
        check_finite(y, 2 * b + 1);
        cur = std::move(y);
    }
    if (scales != nullptr) {
        *scales = std::move(local);
    }
    return out;
}

namespace {

std::size_t nonzeros(const Matrix & m) {
    std::size_t n = 0;
    for (double v : m.data()) {
        n += v != 0.0 ? 1 : 0;
    }
    return n;
}

} // namespace

ParamCount count_params(const ExpandedModel & model) {
    ParamCount p;
    for (std::size_t i = 0; i < 2 * model.blocks.size(); ++i) {
        const ExpertLayer & l = model.layer(i);
        for (const Matrix & e : l.experts) {
            p.nonzero_weights += nonzeros(e);
        }
        p.router_params += l.router.param_count();
    }
    p.total_effective = p.nonzero_weights + p.router_params;
    return p;
}

ParamCount count_params(const ToyModel & model) {
    ParamCount p;
    for (std::size_t i = 0; i < model.linear_count(); ++i) {
        p.nonzero_weights += nonzeros(model.linear(i).w);
    }
    p.total_effective = p.nonzero_weights;
    return p;
}

json prune_spec_to_json(const PruneSpec & spec) {
    json j;
    j["pattern"] = spec.pattern_name();
    j["sparsity"] = spec.sparsity;
    j["block_size"] = spec.block_size;
    j["damping"] = spec.damping;
    j["bits"] = spec.bits ? json(*spec.bits) : json(nullptr);
    j["quant_group"] = spec.quant_group;
    return j;
}

PruneSpec prune_spec_from_json(const json & j) {
    PruneSpec spec;
    spec.sparsity = j.at("sparsity").get<double>();
    spec = parse_pattern(j.at("pattern").get<std::string>(), spec);
    spec.block_size = j.at("block_size").get<std::size_t>();
    spec.damping = j.at("damping").get<double>();
    if (!j.at("bits").is_null()) {
        spec.bits = j.at("bits").get<int>();
    }
    spec.quant_group = j.at("quant_group").get<std::size_t>();
    return spec;
}

namespace {

void save_layer(const ExpertLayer & l, const fs::path & dir) {
    fs::create_directories(dir);
    json r;
    r["c"] = l.router.clusters();
    r["k"] = l.router.reduced_dim();
    r["pca"] = l.router.pca.has_value();
    r["seed"] = l.router.kmeans.seed;
    r["iterations_run"] = l.router.kmeans.iterations_run;
    r["final_inertia"] = l.router.kmeans.final_inertia;
    write_tensor_lossless(l.router.kmeans.centroids, dir / "centroids.spxt");
    if (l.router.pca) {
        const PcaModel & p = *l.router.pca;
        r["explained_variances"] = p.explained_variances;
        write_tensor_lossless(Matrix(1, p.mean.size(), p.mean), dir / "pca_mean.spxt");
        write_tensor_lossless(p.components, dir / "pca_components.spxt");
    }
    write_json_file(r, dir / "router.json");

    json e;
    e["rows"] = l.out_dim();
    e["cols"] = l.in_dim();
    e["spec"] = prune_spec_to_json(l.provenance.spec);
    e["seed"] = l.provenance.seed;
    e["cluster_sizes"] = l.provenance.cluster_sizes;
    std::vector<int> pooled(l.provenance.pooled.begin(), l.provenance.pooled.end());
    e["pooled"] = pooled;
    e["bias"] = !l.bias.empty();
    for (std::size_t k = 0; k < l.experts.size(); ++k) {
        write_tensor_lossless(l.experts[k], dir / ("expert_" + std::to_string(k) + ".spxt"));
    }
    if (!l.bias.empty()) {
        write_tensor_lossless(Matrix(1, l.bias.size(), l.bias), dir / "bias.spxt");
    }
    write_json_file(e, dir / "experts.json");
}

ExpertLayer load_layer(const fs::path & dir) {
    ExpertLayer l;
    const json r = read_json_file(dir / "router.json");
    l.router.kmeans.centroids = tensor_codec_read(dir / "centroids.spxt");
    l.router.kmeans.seed = r.at("seed").get<std::uint64_t>();
    l.router.kmeans.iterations_run = r.at("iterations_run").get<std::size_t>();
    l.router.kmeans.final_inertia = r.at("final_inertia").get<double>();
    if (r.at("pca").get<bool>()) {
        PcaModel p;
        p.mean = tensor_codec_read(dir / "pca_mean.spxt").values();
        p.components = tensor_codec_read(dir / "pca_components.spxt");
        p.explained_variances = r.at("explained_variances").get<std::vector<double>>();
        l.router.pca = std::move(p);
    }
    const json e = read_json_file(dir / "experts.json");
    l.provenance.spec = prune_spec_from_json(e.at("spec"));
    l.provenance.seed = e.at("seed").get<std::uint64_t>();
    l.provenance.cluster_sizes = e.at("cluster_sizes").get<std::vector<std::size_t>>();
    for (int v : e.at("pooled").get<std::vector<int>>()) {
        l.provenance.pooled.push_back(v != 0);
    }
    const std::size_t c = r.at("c").get<std::size_t>();
    for (std::size_t k = 0; k < c; ++k) {
        l.experts.push_back(tensor_codec_read(dir / ("expert_" + std::to_string(k) + ".spxt")));
    }
    if (e.at("bias").get<bool>()) {
        l.bias = tensor_codec_read(dir / "bias.spxt").values();
    }
    return l;
}

} // namespace

void save_expanded_model(const ExpandedModel & model, const fs::path & dir) {
    fs::create_directories(dir);
    json manifest;
    manifest["format"] = "spx-expanded-model";
    manifest["version"] = 1;
    manifest["activation"] = "gelu";
    manifest["residual"] = model.residual;
    manifest["propagation"] = model.propagation;
    manifest["layers"] = json::array();
    for (std::size_t i = 0; i < 2 * model.blocks.size(); ++i) {
        const ExpertLayer & l = model.layer(i);
        json jl;
        jl["id"] = linear_id(i);
        jl["dir"] = linear_id(i);
        jl["clusters"] = l.clusters();
        jl["rows"] = l.out_dim();
        jl["cols"] = l.in_dim();
        manifest["layers"].push_back(jl);
        save_layer(l, dir / linear_id(i));
    }
    write_json_file(manifest, dir / "model.json");
}

ExpandedModel load_expanded_model(const fs::path & dir) {
    const json manifest = read_json_file(dir / "model.json");
    require(manifest.value("format", "") == "spx-expanded-model", ErrorCode::kUnsupportedFormat,
            (dir / "model.json").string() + " is not an expanded model manifest");
    ExpandedModel model;
    model.residual = manifest.at("residual").get<bool>();
    model.propagation = manifest.at("propagation").get<std::string>();
    const auto & layers = manifest.at("layers");
    require(layers.size() % 2 == 0, ErrorCode::kUnsupportedFormat, "expanded model needs whole blocks");
    for (std::size_t i = 0; i < layers.size(); i += 2) {
        ExpandedBlock b;
        b.up = load_layer(dir / layers[i].at("dir").get<std::string>());
        b.down = load_layer(dir / layers[i + 1].at("dir").get<std::string>());
        model.blocks.push_back(std::move(b));
    }
    return model;
}

} // namespace spx
