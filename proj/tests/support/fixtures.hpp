#pragma once

#include <cstdint>
#include <filesystem>
#include <random>

#include "cae/corpus.hpp"
#include "cae/model.hpp"
#include "cae/pipeline.hpp"

namespace fixture {

using cae::Mat;
using cae::Vec;

Mat random_mat(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double sd = 1.0);
Vec random_vec(std::size_t n, std::mt19937_64& rng, double sd = 1.0);

// Untrained model small enough for per-scalar oracles.
cae::model::TransformerWeights random_model(std::uint64_t seed = 1, std::size_t n_layers = 2, std::size_t vocab = 24);

// Two entities on a four-block model.
cae::pipeline::RunConfig small_config();
const cae::corpus::Benchmark& small_bench();
// Trained once and cached in the build tree; later processes load the file.
const cae::model::TransformerWeights& small_trained();

std::filesystem::path scratch_dir(const std::string& name);

}  // namespace fixture
