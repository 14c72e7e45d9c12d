#include "spx/synth.hpp"

#include "spx/error.hpp"
#include "spx/metrics.hpp"
#include "spx/rng.hpp"
#include "spx/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace spx {

using nlohmann::json;

PlantedShape parse_planted_shape(const std::string & name) {
    if (name == "bimodal") {
        return PlantedShape::kBimodal;
    }
    if (name == "trimodal") {
        return PlantedShape::kTrimodal;
    }
    if (name == "heavy-tail") {
        return PlantedShape::kHeavyTail;
    }
    fail(ErrorCode::kInvalidArgument, "unknown planted shape '" + name + "' (bimodal, trimodal, heavy-tail)");
}

std::string planted_shape_name(PlantedShape shape) {
    switch (shape) {
    case PlantedShape::kBimodal:
        return "bimodal";
    case PlantedShape::kTrimodal:
        return "trimodal";
    case PlantedShape::kHeavyTail:
        return "heavy-tail";
    }
    return "bimodal";
}

void SynthSpec::validate() const {
    require(d >= 1 && d_ff >= 1 && depth >= 1, ErrorCode::kInvalidArgument, "synth: dimensions must be positive");
    require(n_clusters_true >= 1, ErrorCode::kInvalidArgument, "synth: need at least one cluster");
    require(planted_count <= d_ff, ErrorCode::kInvalidArgument, "synth: planted_count exceeds d_ff");
    require(samples >= 4 * n_clusters_true, ErrorCode::kInvalidArgument, "synth: too few samples for the clusters");
    require(noise_min > 0.0 && noise_max >= noise_min, ErrorCode::kInvalidArgument, "synth: bad noise range");
    require(separation >= 0.0 && row_scale_log_std >= 0.0, ErrorCode::kInvalidArgument,
            "synth: separation and row scale spread must be non-negative");
    require(planted_count == 0 || n_clusters_true >= 2, ErrorCode::kInvalidArgument,
            "synth: planted neurons need at least two clusters");
}

json synth_spec_to_json(const SynthSpec & s) {
    json j;
    j["seed"] = s.seed;
    j["d"] = s.d;
    j["d_ff"] = s.d_ff;
    j["depth"] = s.depth;
    j["n_clusters_true"] = s.n_clusters_true;
    j["planted_count"] = s.planted_count;
    j["planted_shape"] = planted_shape_name(s.planted_shape);
    j["samples"] = s.samples;
    j["separation"] = s.separation;
    j["noise_min"] = s.noise_min;
    j["noise_max"] = s.noise_max;
    j["row_scale_log_std"] = s.row_scale_log_std;
    j["planted_min_wd"] = s.planted_min_wd;
    return j;
}

SynthSpec synth_spec_from_json(const json & j, SynthSpec s) {
    s.seed = j.value("seed", s.seed);
    s.d = j.value("d", s.d);
    s.d_ff = j.value("d_ff", s.d_ff);
    s.depth = j.value("depth", s.depth);
    s.n_clusters_true = j.value("n_clusters_true", s.n_clusters_true);
    s.planted_count = j.value("planted_count", s.planted_count);
    if (j.contains("planted_shape")) {
        s.planted_shape = parse_planted_shape(j.at("planted_shape").get<std::string>());
    }
    s.samples = j.value("samples", s.samples);
    s.separation = j.value("separation", s.separation);
    s.noise_min = j.value("noise_min", s.noise_min);
    s.noise_max = j.value("noise_max", s.noise_max);
    s.row_scale_log_std = j.value("row_scale_log_std", s.row_scale_log_std);
    s.planted_min_wd = j.value("planted_min_wd", s.planted_min_wd);
    return s;
}

Matrix cluster_directions(const SynthSpec & spec) {
    spec.validate();
    SeededRng rng = SeededRng(spec.seed).child("cluster-directions");
    Matrix u(spec.n_clusters_true, spec.d);
    for (std::size_t k = 0; k < u.rows(); ++k) {
        auto row = u.row(k);
        for (std::size_t attempt = 0;; ++attempt) {
            for (double & v : row) {
                v = rng.normal();
            }
            // Gram-Schmidt against earlier directions while they still span less than d.
            if (k < spec.d) {
                for (std::size_t p = 0; p < k; ++p) {
                    const double proj = dot(row, u.row(p));
                    for (std::size_t f = 0; f < spec.d; ++f) {
                        row[f] -= proj * u(p, f);
                    }
                }
            }
            const double norm = std::sqrt(dot(row, row));
            if (norm > 1e-8) {
                for (double & v : row) {
                    v /= norm;
                }
                break;
            }
            require(attempt < 100, ErrorCode::kNoConvergence, "cluster_directions: degenerate draw");
        }
    }
    return u;
}

std::vector<std::size_t> gen_cluster_labels(const SynthSpec & spec) {
    spec.validate();
    std::vector<std::size_t> labels(spec.samples);
    for (std::size_t j = 0; j < spec.samples; ++j) {
        labels[j] = j % spec.n_clusters_true;
    }
    SeededRng rng = SeededRng(spec.seed).child("column-order");
    rng.shuffle(std::span<std::size_t>(labels));
    return labels;
}

Matrix gen_calibration(const SynthSpec & spec) {
    const Matrix u = cluster_directions(spec);
    const std::vector<std::size_t> labels = gen_cluster_labels(spec);
    SeededRng rng = SeededRng(spec.seed).child("calibration");
    Matrix stds(spec.n_clusters_true, spec.d);
    for (double & v : stds.data()) {
        v = rng.uniform(spec.noise_min, spec.noise_max);
    }
    Matrix x(spec.d, spec.samples);
    for (std::size_t j = 0; j < spec.samples; ++j) {
        const std::size_t k = labels[j];
        for (std::size_t f = 0; f < spec.d; ++f) {
            x(f, j) = spec.separation * u(k, f) + stds(k, f) * rng.normal();
        }
    }
    return round_to_float32(std::move(x));
}

namespace {

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double std, SeededRng & rng) {
    Matrix m(rows, cols);
    for (double & v : m.data()) {
        v = std * rng.normal();
    }
    return m;
}

// Per-cluster signs for a planted row; at least two distinct values so the output is multimodal.
std::vector<double> planted_signs(PlantedShape shape, std::size_t k, SeededRng & rng) {
    std::vector<double> s(k, 0.0);
    switch (shape) {
    case PlantedShape::kBimodal: {
        for (std::size_t j = 0; j < k; ++j) {
            s[j] = j < k / 2 ? 1.0 : -1.0;
        }
        break;
    }
    case PlantedShape::kTrimodal: {
        for (std::size_t j = 0; j < k; ++j) {
            s[j] = static_cast<double>(j % 3) - 1.0;
        }
        break;
    }
    case PlantedShape::kHeavyTail: {
        // One cluster far out, the rest near zero.
        s[0] = 2.5;
        break;
    }
    }
    rng.shuffle(std::span<double>(s));
    return s;
}

} // namespace

std::size_t heldout_start(std::size_t samples) {
    return samples - samples / 4;
}

PlantedModel gen_planted_model(const SynthSpec & spec) {
    spec.validate();
    const Matrix u = cluster_directions(spec);
    const Matrix x = gen_calibration(spec);
    const SeededRng root(spec.seed);

    PlantedModel out;
    SeededRng pick = root.child("planted-rows");
    std::vector<std::size_t> rows(spec.d_ff);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    pick.shuffle(std::span<std::size_t>(rows));
    out.planted.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(spec.planted_count));
    std::sort(out.planted.begin(), out.planted.end());

    SeededRng wrng = root.child("weights");
    SeededRng scale_rng = root.child("row-scales");
    for (std::size_t b = 0; b < spec.depth; ++b) {
        ToyBlock blk;
        blk.up.w = gaussian_matrix(spec.d_ff, spec.d, 1.0 / std::sqrt(static_cast<double>(spec.d)), wrng);
        blk.down.w = gaussian_matrix(spec.d, spec.d_ff, 1.0 / std::sqrt(static_cast<double>(spec.d_ff)), wrng);
        out.model.blocks.push_back(std::move(blk));
    }

    Matrix & w0 = out.model.blocks[0].up.w;
    std::vector<double> scales(spec.d_ff);
    for (double & g : scales) {
        g = std::exp(spec.row_scale_log_std * scale_rng.normal());
    }
    SeededRng sign_rng = root.child("planted-signs");
    for (std::size_t idx : out.planted) {
        auto row = w0.row(idx);
        double wd = 0.0;
        for (std::size_t attempt = 0;; ++attempt) {
            require(attempt < 100, ErrorCode::kNoConvergence,
                    "gen_planted_model: row " + std::to_string(idx) + " did not reach WD " +
                        std::to_string(spec.planted_min_wd) + " after 100 reseeds");
            const std::vector<double> s = planted_signs(spec.planted_shape, spec.n_clusters_true, sign_rng);
            std::fill(row.begin(), row.end(), 0.0);
            for (std::size_t k = 0; k < spec.n_clusters_true; ++k) {
                for (std::size_t f = 0; f < spec.d; ++f) {
                    row[f] += s[k] * u(k, f);
                }
            }
            const double norm = std::sqrt(dot(row, row));
            if (norm == 0.0) {
                continue;
            }
            for (double & v : row) {
                v = static_cast<double>(static_cast<float>(v / norm));
            }
            const auto outputs = collect_outputs(Matrix(1, spec.d, std::vector<double>(row.begin(), row.end())), x);
            wd = wd_to_gaussian(outputs[0].samples);
            if (wd >= spec.planted_min_wd) {
                break;
            }
        }
        out.planted_wd.push_back(wd);
    }
    // Row norms are spread so that output scale alone does not single out planted rows.
    for (std::size_t i = 0; i < spec.d_ff; ++i) {
        for (double & v : w0.row(i)) {
            v *= scales[i];
        }
    }
    for (std::size_t i = 0; i < out.model.linear_count(); ++i) {
        Linear & l = out.model.linear(i);
        l.w = round_to_float32(std::move(l.w));
    }
    // Reported WD is measured on the final (scaled, rounded) rows.
    for (std::size_t k = 0; k < out.planted.size(); ++k) {
        const auto row = w0.row(out.planted[k]);
        const auto outputs = collect_outputs(Matrix(1, spec.d, std::vector<double>(row.begin(), row.end())), x);
        out.planted_wd[k] = wd_to_gaussian(outputs[0].samples);
    }
    return out;
}

} // namespace spx
