#pragma once

#include "spx/matrix.hpp"

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace spx {

struct Linear {
    Matrix w;                  // out x in
    std::vector<double> bias;  // empty or length out
};

// up (d_ff x d) -> GELU -> down (d x d_ff)
struct ToyBlock {
    Linear up;
    Linear down;
};

struct ToyModel {
    std::vector<ToyBlock> blocks;
    bool residual = false;

    std::size_t input_dim() const;
    std::size_t linear_count() const noexcept { return 2 * blocks.size(); }
    Linear & linear(std::size_t index) { return index % 2 == 0 ? blocks[index / 2].up : blocks[index / 2].down; }
    const Linear & linear(std::size_t index) const {
        return index % 2 == 0 ? blocks[index / 2].up : blocks[index / 2].down;
    }
    void validate() const;
};

// "block<b>.up" / "block<b>.down"
std::string linear_id(std::size_t index);

// W X + bias broadcast over columns.
Matrix linear_forward(const Linear & layer, const Matrix & x);
void gelu_inplace(Matrix & m);
Matrix toy_forward(const ToyModel & model, const Matrix & x);

// Inputs seen by every linear layer when X is pushed through the dense model.
std::vector<Matrix> layer_inputs(const ToyModel & model, const Matrix & x);

// Writes float32 when every entry is float32-representable, float64 otherwise.
void write_tensor_lossless(const Matrix & m, const std::filesystem::path & path);

// model.json plus one tensor per weight and bias.
void save_toy_model(const ToyModel & model, const std::filesystem::path & dir);
ToyModel load_toy_model(const std::filesystem::path & dir);

} // namespace spx
