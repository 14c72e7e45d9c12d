#include "spx/model.hpp"

#include "spx/error.hpp"
#include "spx/json_io.hpp"
#include "spx/special.hpp"
#include "spx/tensor_io.hpp"

namespace spx {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t ToyModel::input_dim() const {
    require(!blocks.empty(), ErrorCode::kInvalidArgument, "model has no blocks");
    return blocks.front().up.w.cols();
}

void ToyModel::validate() const {
    require(!blocks.empty(), ErrorCode::kInvalidArgument, "model has no blocks");
    std::size_t width = blocks.front().up.w.cols();
    for (std::size_t i = 0; i < linear_count(); ++i) {
        const Linear & l = linear(i);
        require(l.w.cols() == width, ErrorCode::kShapeMismatch,
                linear_id(i) + ": expects width " + std::to_string(width) + ", has " + std::to_string(l.w.cols()));
        require(l.bias.empty() || l.bias.size() == l.w.rows(), ErrorCode::kShapeMismatch,
                linear_id(i) + ": bias length mismatch");
        width = l.w.rows();
    }
    require(width == input_dim() || !residual, ErrorCode::kShapeMismatch,
            "residual connections need blocks that preserve the width");
}

std::string linear_id(std::size_t index) {
    return "block" + std::to_string(index / 2) + (index % 2 == 0 ? ".up" : ".down");
}

Matrix linear_forward(const Linear & layer, const Matrix & x) {
    require(layer.w.cols() == x.rows(), ErrorCode::kShapeMismatch, "linear_forward: input rows != layer width");
    Matrix y = matmul(layer.w, x);
    if (!layer.bias.empty()) {
        for (std::size_t i = 0; i < y.rows(); ++i) {
            for (double & v : y.row(i)) {
                v += layer.bias[i];
            }
        }
    }
    return y;
}

void gelu_inplace(Matrix & m) {
    for (double & v : m.data()) {
        v = gelu(v);
    }
}

namespace {

void add_inplace(Matrix & a, const Matrix & b) {
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i) {
        da[i] += db[i];
    }
}

} // namespace

Matrix toy_forward(const ToyModel & model, const Matrix & x) {
    Matrix cur = x;
    for (const ToyBlock & b : model.blocks) {
        Matrix h = linear_forward(b.up, cur);
        gelu_inplace(h);
        Matrix y = linear_forward(b.down, h);
        if (model.residual) {
            add_inplace(y, cur);
        }
        cur = std::move(y);
    }
    return cur;
}

std::vector<Matrix> layer_inputs(const ToyModel & model, const Matrix & x) {
    std::vector<Matrix> out;
    Matrix cur = x;
    for (const ToyBlock & b : model.blocks) {
        out.push_back(cur);
        Matrix h = linear_forward(b.up, cur);
        gelu_inplace(h);
        out.push_back(h);
        Matrix y = linear_forward(b.down, h);
        if (model.residual) {
            add_inplace(y, cur);
        }
        cur = std::move(y);
    }
    return out;
}

void write_tensor_lossless(const Matrix & m, const fs::path & path) {
    bool fits = true;
    for (double v : m.data()) {
        if (static_cast<double>(static_cast<float>(v)) != v) {
            fits = false;
            break;
        }
    }
    tensor_codec_write(m, path, fits ? TensorDtype::kFloat32 : TensorDtype::kFloat64);
}

namespace {

json write_linear(const Linear & l, const fs::path & dir, const std::string & id) {
    json j;
    j["rows"] = l.w.rows();
    j["cols"] = l.w.cols();
    j["weight"] = id + ".weight.spxt";
    write_tensor_lossless(l.w, dir / (id + ".weight.spxt"));
    if (l.bias.empty()) {
        j["bias"] = nullptr;
    } else {
        j["bias"] = id + ".bias.spxt";
        write_tensor_lossless(Matrix(1, l.bias.size(), l.bias), dir / (id + ".bias.spxt"));
    }
    return j;
}

Linear read_linear(const json & j, const fs::path & dir) {
    Linear l;
    l.w = tensor_codec_read(dir / j.at("weight").get<std::string>());
    require(l.w.rows() == j.at("rows").get<std::size_t>() && l.w.cols() == j.at("cols").get<std::size_t>(),
            ErrorCode::kShapeMismatch, "weight tensor shape disagrees with model.json");
    if (!j.at("bias").is_null()) {
        const Matrix b = tensor_codec_read(dir / j.at("bias").get<std::string>());
        l.bias = b.values();
    }
    return l;
}

} // namespace

void save_toy_model(const ToyModel & model, const fs::path & dir) {
    model.validate();
    fs::create_directories(dir);
    json manifest;
    manifest["format"] = "spx-toy-model";
    manifest["version"] = 1;
    manifest["activation"] = "gelu";
    manifest["residual"] = model.residual;
    manifest["blocks"] = json::array();
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
        json jb;
        jb["up"] = write_linear(model.blocks[b].up, dir, linear_id(2 * b));
        jb["down"] = write_linear(model.blocks[b].down, dir, linear_id(2 * b + 1));
        manifest["blocks"].push_back(jb);
    }
    write_json_file(manifest, dir / "model.json");
}

ToyModel load_toy_model(const fs::path & dir) {
    const json manifest = read_json_file(dir / "model.json");
    require(manifest.value("format", "") == "spx-toy-model", ErrorCode::kUnsupportedFormat,
            (dir / "model.json").string() + " is not a toy model manifest");
    ToyModel model;
    model.residual = manifest.at("residual").get<bool>();
    for (const json & jb : manifest.at("blocks")) {
        model.blocks.push_back({read_linear(jb.at("up"), dir), read_linear(jb.at("down"), dir)});
    }
    model.validate();
    return model;
}

} // namespace spx
