#include "spx/error.hpp"
#include "spx/expansion.hpp"
#include "spx/synth.hpp"

#include <doctest.h>

#include <filesystem>
#include <set>

using namespace spx;

namespace {

SynthSpec tiny_spec() {
    SynthSpec s;
    s.seed = 9;
    s.d = 12;
    s.d_ff = 24;
    s.depth = 2;
    s.n_clusters_true = 3;
    s.planted_count = 2;
    s.samples = 600;
    return s;
}

Linear dense_layer(std::size_t out, std::size_t in, SeededRng & rng, bool with_bias) {
    Linear l;
    l.w = Matrix(out, in);
    for (double & v : l.w.data()) {
        v = rng.normal();
    }
    if (with_bias) {
        for (std::size_t i = 0; i < out; ++i) {
            l.bias.push_back(rng.normal());
        }
    }
    return l;
}

std::filesystem::path scratch_dir(const std::string & name) {
    const auto dir = std::filesystem::temp_directory_path() / ("spx_test_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

} // namespace

TEST_CASE("layer seeds are distinct and reproducible") {
    std::set<std::uint64_t> seen;
    for (std::size_t i = 0; i < 8; ++i) {
        seen.insert(layer_seed(4, i));
        CHECK(layer_seed(4, i) == SeededRng(4).child(i).next_u64());
    }
    CHECK(seen.size() == 8);
}

TEST_CASE("one cluster is exactly the pruned dense layer") {
    SeededRng rng(41);
    const Matrix x = gen_calibration(tiny_spec());
    const Linear dense = dense_layer(7, 12, rng, true);
    ExpandOptions opts;
    opts.clusters = 1;
    const PruneSpec spec = PruneSpec::unstructured(0.5);
    const ExpertLayer layer = expand_layer(dense, x, spec, opts);
    REQUIRE(layer.clusters() == 1);
    const Matrix pruned = sparsegpt_prune(dense.w, accumulate_hessian(x, spec.damping), spec);
    CHECK(layer.experts[0] == pruned);
    CHECK(expert_layer_forward(layer, x) == linear_forward(Linear{pruned, dense.bias}, x));
    CHECK(layer.provenance.cluster_sizes == std::vector<std::size_t>{600});
}

TEST_CASE("routed forward equals per-column expert evaluation") {
    SeededRng rng(42);
    const Matrix x = gen_calibration(tiny_spec());
    const Linear dense = dense_layer(5, 12, rng, true);
    ExpandOptions opts;
    opts.clusters = 4;
    opts.seed = 3;
    const ExpertLayer layer = expand_layer(dense, x, PruneSpec::n_m(2, 4), opts);
    std::vector<std::size_t> routes;
    const Matrix y = expert_layer_forward(layer, x, routes);
    for (std::size_t j = 0; j < x.cols(); ++j) {
        const auto col = x.col(j);
        const std::size_t k = route(layer.router, col);
        CHECK(k == routes[j]);
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(y(i, j) == dot(layer.experts[k].row(i), col) + dense.bias[i]);
        }
    }
    std::size_t total = 0;
    for (std::size_t n : layer.provenance.cluster_sizes) {
        total += n;
    }
    CHECK(total == 600);
    CHECK_THROWS_AS(expert_layer_forward(layer, Matrix(3, 2)), Error);
}

TEST_CASE("experts are compressed against their own cluster") {
    SeededRng rng(43);
    const Matrix x = gen_calibration(tiny_spec());
    const Linear dense = dense_layer(4, 12, rng, false);
    ExpandOptions opts;
    opts.clusters = 3;
    opts.seed = 1;
    const PruneSpec spec = PruneSpec::unstructured(0.5);
    const ExpertLayer layer = expand_layer(dense, x, spec, opts);
    const auto routes = route_all(layer.router, x);
    for (std::size_t k = 0; k < 3; ++k) {
        std::vector<std::size_t> idx;
        for (std::size_t j = 0; j < routes.size(); ++j) {
            if (routes[j] == k) {
                idx.push_back(j);
            }
        }
        REQUIRE(idx.size() >= 12);
        CHECK_FALSE(layer.provenance.pooled[k]);
        CHECK(layer.experts[k] == sparsegpt_prune(dense.w, accumulate_hessian(x.select_cols(idx), spec.damping), spec));
    }
}

TEST_CASE("small clusters borrow the global Hessian") {
    SeededRng rng(44);
    // 40 columns near the origin and 3 far away: the small cluster has fewer samples than inputs.
    Matrix x(6, 43);
    for (std::size_t j = 0; j < 43; ++j) {
        for (std::size_t i = 0; i < 6; ++i) {
            x(i, j) = (j >= 40 ? 50.0 : 0.0) + rng.normal();
        }
    }
    const Linear dense = dense_layer(3, 6, rng, false);
    ExpandOptions opts;
    opts.clusters = 2;
    const PruneSpec spec = PruneSpec::unstructured(0.5);
    const ExpertLayer layer = expand_layer(dense, x, spec, opts);
    const auto & sizes = layer.provenance.cluster_sizes;
    const std::size_t small = sizes[0] < sizes[1] ? 0 : 1;
    CHECK(sizes[small] == 3);
    CHECK(layer.provenance.pooled[small]);
    CHECK_FALSE(layer.provenance.pooled[1 - small]);
    std::vector<std::size_t> idx;
    for (std::size_t j = 40; j < 43; ++j) {
        idx.push_back(j);
    }
    const HessianState pooled =
        pool_hessian(accumulate_hessian(x.select_cols(idx), spec.damping), accumulate_hessian(x, spec.damping), 0.1);
    CHECK(layer.experts[small] == sparsegpt_prune(dense.w, pooled, spec));
}

TEST_CASE("quantized experts lie on the group grid") {
    SeededRng rng(45);
    const Matrix x = gen_calibration(tiny_spec());
    const Linear dense = dense_layer(4, 12, rng, false);
    PruneSpec spec = PruneSpec::n_m(2, 4);
    spec.bits = 4;
    spec.quant_group = 4;
    const Matrix c = compress_weights(dense.w, accumulate_hessian(x), spec);
    const Matrix p = sparsegpt_prune(dense.w, accumulate_hessian(x), spec);
    CHECK(c == rtn_quantize(p, 4, 4).values);
    for (std::size_t i = 0; i < c.rows(); ++i) {
        for (std::size_t g = 0; g < 12; g += 4) {
            CHECK(count_zeros(c.row(i).subspan(g, 4)) >= 2);
        }
    }
}

TEST_CASE("model expansion, pruning and parameter counts") {
    const SynthSpec s = tiny_spec();
    const PlantedModel pm = gen_planted_model(s);
    const Matrix x = gen_calibration(s);
    const PruneSpec spec = PruneSpec::unstructured(0.5);

    const ToyModel pruned = prune_model(pm.model, x, spec);
    CHECK(pruned.linear(0).w == sparsegpt_prune(pm.model.linear(0).w, accumulate_hessian(x, spec.damping), spec));
    // Later layers see activations of the already compressed prefix.
    ToyModel prefix = pm.model;
    prefix.linear(0) = pruned.linear(0);
    const Matrix x1 = layer_inputs(prefix, x)[1];
    CHECK(pruned.linear(1).w == sparsegpt_prune(pm.model.linear(1).w, accumulate_hessian(x1, spec.damping), spec));

    ExpandOptions one;
    one.clusters = 1;
    const ExpandedModel e1 = expand_model(pm.model, x, spec, one);
    CHECK(expanded_forward(e1, x) == toy_forward(pruned, x));

    ExpandOptions four;
    four.clusters = 4;
    four.seed = 2;
    const ExpandedModel e4 = expand_model(pm.model, x, spec, four);
    CHECK(e4.layer(0).router.kmeans.seed == layer_seed(2, 0));
    CHECK(e4.layer(3).router.kmeans.seed == layer_seed(2, 3));
    const ParamCount pc = count_params(e4);
    std::size_t nz = 0;
    std::size_t router = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        for (const Matrix & w : e4.layer(i).experts) {
            for (double v : w.data()) {
                nz += v != 0.0 ? 1 : 0;
            }
        }
        router += e4.layer(i).router.param_count();
    }
    CHECK(pc.nonzero_weights == nz);
    CHECK(pc.router_params == router);
    CHECK(pc.total_effective == nz + router);
    CHECK(count_params(pruned).router_params == 0);

    // Parallel build gives the same model.
    const ExpandedModel e4p = expand_model(pm.model, x, spec, four, Parallelism{3});
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(e4p.layer(i).experts == e4.layer(i).experts);
        CHECK(e4p.layer(i).router.kmeans.centroids == e4.layer(i).router.kmeans.centroids);
    }
}

TEST_CASE("expanded and toy models survive a save and load") {
    const SynthSpec s = tiny_spec();
    const PlantedModel pm = gen_planted_model(s);
    const Matrix x = gen_calibration(s);
    const auto tdir = scratch_dir("toy");
    save_toy_model(pm.model, tdir);
    const ToyModel back = load_toy_model(tdir);
    CHECK(toy_forward(back, x) == toy_forward(pm.model, x));

    ExpandOptions opts;
    opts.clusters = 3;
    PruneSpec spec = PruneSpec::unstructured(0.6);
    spec.bits = 3;
    const ExpandedModel e = expand_model(pm.model, x, spec, opts);
    const auto edir = scratch_dir("expanded");
    save_expanded_model(e, edir);
    const ExpandedModel eb = load_expanded_model(edir);
    CHECK(expanded_forward(eb, x) == expanded_forward(e, x));
    CHECK(prune_spec_to_json(eb.layer(2).provenance.spec) == prune_spec_to_json(spec));
    CHECK(eb.layer(1).provenance.cluster_sizes == e.layer(1).provenance.cluster_sizes);

    std::filesystem::remove(edir / "model.json");
    try {
        load_expanded_model(edir);
        FAIL("missing model.json accepted");
    } catch (const Error & err) {
        CHECK(err.code() == ErrorCode::kIo);
    }
    std::filesystem::remove_all(tdir);
    std::filesystem::remove_all(edir);
}

TEST_CASE("prune spec json round trip") {
    PruneSpec s = PruneSpec::n_m(3, 8);
    s.bits = 2;
    s.quant_group = 16;
    s.damping = 0.05;
    s.block_size = 32;
    const PruneSpec back = prune_spec_from_json(prune_spec_to_json(s));
    CHECK(back.pattern == SparsityPattern::kNM);
    CHECK(back.zeros_per_group == 3);
    CHECK(back.group_size == 8);
    CHECK(back.bits == 2);
    CHECK(back.quant_group == 16);
    CHECK(back.damping == 0.05);
    CHECK(back.block_size == 32);
}
