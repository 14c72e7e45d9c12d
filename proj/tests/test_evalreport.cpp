#include "spx/error.hpp"
#include "spx/evalreport.hpp"
#include "spx/synth.hpp"

#include <doctest.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

using namespace spx;

namespace {

SynthSpec eval_spec() {
    SynthSpec s;
    s.seed = 5;
    s.d = 12;
    s.d_ff = 24;
    s.depth = 1;
    s.n_clusters_true = 3;
    s.planted_count = 2;
    s.samples = 800;
    return s;
}

EvalData eval_data() {
    const SynthSpec s = eval_spec();
    return split_eval_data(gen_planted_model(s).model, gen_calibration(s));
}

} // namespace

TEST_CASE("error helpers") {
    const std::vector<double> a{1, 2, 3, 4};
    const std::vector<double> b{1, 2, 3, 6};
    CHECK(per_neuron_rmse(a, b) == doctest::Approx(1.0));
    CHECK(per_neuron_rmse(a, a) == 0.0);
    CHECK(relative_improvement(2.0, 1.0) == 2.0);
    CHECK(relative_improvement(0.0, 0.0) == 1.0);
    CHECK(std::isinf(relative_improvement(1.0, 0.0)));
    CHECK(relative_improvement(0.0, 1.0) == 0.0);
    CHECK(output_mse(Matrix::from_rows({{1, 2}, {3, 4}}), Matrix::from_rows({{1, 2}, {3, 6}})) == 1.0);
    CHECK_THROWS_AS(output_mse(Matrix(2, 2), Matrix(2, 3)), Error);
}

TEST_CASE("held-out split") {
    const EvalData d = eval_data();
    CHECK(d.calib.cols() == 600);
    CHECK(d.heldout.cols() == 200);
    const Matrix x = gen_calibration(eval_spec());
    CHECK(d.heldout == x.col_range(600, 200));
}

TEST_CASE("layer evaluation records match recomputed errors") {
    const EvalData d = eval_data();
    LayerEvalOptions opts;
    opts.spec = PruneSpec::unstructured(0.6);
    opts.expand.clusters = 3;
    opts.pair_budget = 2000;
    const LayerEval ev = evaluate_layer(d.model.linear(0), d.calib, d.heldout, opts);
    REQUIRE(ev.records.size() == 24);
    CHECK(ev.dense_out == linear_forward(d.model.linear(0), d.heldout));
    std::vector<double> ris;
    std::size_t ge = 0;
    for (std::size_t i = 0; i < 24; ++i) {
        const auto & r = ev.records[i];
        CHECK(r.neuron_index == i);
        const double rs = per_neuron_rmse(ev.dense_out.row(i), ev.sparsegpt_out.row(i));
        const double re = per_neuron_rmse(ev.dense_out.row(i), ev.expansion_out.row(i));
        CHECK(r.rmse_sparsegpt == rs);
        CHECK(r.rmse_expansion == re);
        CHECK(r.ri == relative_improvement(rs, re));
        CHECK(r.dense_wd == doctest::Approx(wd_to_gaussian(ev.dense_out.row(i))).epsilon(1e-12));
        CHECK(r.md >= 0.0);
        ris.push_back(r.ri);
        ge += r.ri >= 1.0 ? 1 : 0;
    }
    CHECK(ev.median_ri() == median_of(ris));
    CHECK(ev.fraction_ri_at_least_one() == doctest::Approx(static_cast<double>(ge) / 24.0));
    std::size_t total = 0;
    for (std::size_t n : ev.cluster_sizes) {
        total += n;
    }
    CHECK(total == 200);

    const std::string csv = neuron_records_csv(ev.records);
    CHECK(csv.rfind("neuron_index,", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 25);
}

TEST_CASE("one expert gives a relative improvement of exactly one") {
    const EvalData d = eval_data();
    LayerEvalOptions opts;
    opts.spec = PruneSpec::unstructured(0.5);
    opts.expand.clusters = 1;
    opts.mapping_difficulty = false;
    const LayerEval ev = evaluate_layer(d.model.linear(0), d.calib, d.heldout, opts);
    CHECK(ev.expansion_out == ev.sparsegpt_out);
    for (const auto & r : ev.records) {
        CHECK(r.ri == 1.0);
    }
}

TEST_CASE("sweep rows and grid handling") {
    const EvalData d = eval_data();
    SweepConfig cfg;
    cfg.axis = SweepAxis::kClusters;
    cfg.grid = {1, 2};
    cfg.pair_budget = 500;
    cfg.neuron_level = false;
    const SweepReport rep = run_sweep(d, cfg);
    REQUIRE(rep.rows.size() == 2);
    CHECK(rep.rows[0].axis == "clusters");
    CHECK(rep.rows[0].value == 1.0);
    CHECK(rep.rows[0].mse_expansion == rep.rows[0].mse_sparsegpt);
    CHECK(rep.rows[1].params.router_params > 0);
    const std::string csv = sweep_csv(rep.rows);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

    CHECK(parse_sweep_axis("keep_dense") == SweepAxis::kKeepDense);
    CHECK(sweep_axis_name(SweepAxis::kBits) == "bits");
    CHECK_THROWS_AS(parse_sweep_axis("depth"), Error);
    CHECK_FALSE(default_grid(SweepAxis::kSparsity).empty());
}

TEST_CASE("keep-dense model leaves the top rows intact") {
    const EvalData d = eval_data();
    const PruneSpec spec = PruneSpec::unstructured(0.5);
    const ToyModel m0 = keep_dense_model(d.model, d.calib, 0.0, spec);
    const ToyModel pruned = prune_model(d.model, d.calib, spec);
    CHECK(m0.linear(0).w == pruned.linear(0).w);
    const ToyModel m = keep_dense_model(d.model, d.calib, 0.25, spec);
    std::size_t dense_rows = 0;
    for (std::size_t i = 0; i < 24; ++i) {
        const auto a = m.linear(0).w.row(i);
        const auto b = d.model.linear(0).w.row(i);
        dense_rows += std::equal(a.begin(), a.end(), b.begin()) ? 1 : 0;
    }
    CHECK(dense_rows == 6);
}

TEST_CASE("neuron selectors") {
    Linear l;
    l.w = Matrix::from_rows({{1, 0}, {0, 3}, {2, 2}, {0.1, 0}});
    const Matrix x = Matrix::from_rows({{1, 2, 3}, {5, 5, 5}});
    CHECK(select_neurons(Selector::kWeightMagnitude, l, x, 0.5, 0) == std::vector<std::size_t>{1, 2});
    CHECK(select_neurons(Selector::kMean, l, x, 0.25, 0) == std::vector<std::size_t>{1});
    CHECK(select_neurons(Selector::kVariance, l, x, 0.25, 0) == std::vector<std::size_t>{2});
    CHECK(select_neurons(Selector::kRandom, l, x, 0.5, 3) == select_neurons(Selector::kRandom, l, x, 0.5, 3));
    CHECK(select_neurons(Selector::kRandom, l, x, 0.5, 3).size() == 2);
    CHECK(select_neurons(Selector::kWd, l, x, 0.0, 0).empty());
    CHECK(parse_selector(selector_name(Selector::kWeightMagnitude)) == Selector::kWeightMagnitude);
    CHECK_THROWS_AS(parse_selector("gradient"), Error);
}

TEST_CASE("targeted ablation") {
    const EvalData d = eval_data();
    AblationConfig cfg;
    cfg.fraction = 0.125;
    cfg.sparsities = {0.5, 0.9};
    const auto rows = targeted_ablation(d, cfg);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].selector == "wd");
    CHECK(rows[2].selector == "random");
    for (const auto & r : rows) {
        CHECK(r.selected == 3);
        CHECK(r.model_mse > 0.0);
    }
    cfg.fraction = 0.0;
    for (const auto & r : targeted_ablation(d, cfg)) {
        CHECK(r.model_mse == 0.0);
    }
    const std::string csv = ablation_csv(rows);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("histogram") {
    const std::vector<double> v{0, 1, 2, 3, 4};
    const auto bins = histogram(v, 2);
    REQUIRE(bins.size() == 2);
    CHECK(bins[0].count == 2);
    CHECK(bins[1].count == 3);
    CHECK(bins[1].right == 4.0);
    const std::vector<double> same{2, 2, 2};
    CHECK(histogram(same, 4)[0].count == 3);
    CHECK(histogram_csv(bins) == "bin_left,bin_right,count\n0,2,2\n2,4,3\n");
    CHECK_THROWS_AS(histogram(std::vector<double>{}, 3), Error);
}

TEST_CASE("text helpers") {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345678.875, 0.0}) {
        const std::string s = format_double(v);
        double back = 0.0;
        std::from_chars(s.data(), s.data() + s.size(), back);
        CHECK(back == v);
    }
    CHECK(format_double(0.5) == "0.5");
    const nlohmann::json a = {{"x", 1}, {"y", "z"}};
    CHECK(config_hash(a).size() == 16);
    CHECK(config_hash(a) == config_hash(nlohmann::json::parse(a.dump())));
    CHECK(config_hash(a) != config_hash({{"x", 2}, {"y", "z"}}));

    const auto p = std::filesystem::temp_directory_path() / "spx_text_helper.txt";
    write_text_file(p, "abc\n");
    CHECK(read_text_file(p) == "abc\n");
    std::filesystem::remove(p);
    CHECK_THROWS_AS(read_text_file(p), Error);
}
