#include "fixtures.hpp"

#include <unistd.h>

#include <functional>
#include <string>

namespace fixture {

Mat random_mat(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double sd) {
    std::normal_distribution<double> n(0.0, sd);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = n(rng);
    return m;
}

Vec random_vec(std::size_t len, std::mt19937_64& rng, double sd) {
    std::normal_distribution<double> n(0.0, sd);
    Vec v(len);
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = n(rng);
    return v;
}

cae::model::TransformerWeights random_model(std::uint64_t seed, std::size_t n_layers, std::size_t vocab) {
    cae::model::ModelConfig c;
    c.n_layers = n_layers;
    c.d_model = 16;
    c.d_mlp = 32;
    c.n_heads = 2;
    c.vocab_size = vocab;
    c.max_seq = 12;
    c.seed = seed;
    auto w = cae::model::init_model(c);
    // perturb the norms so gains and biases are exercised too
    std::mt19937_64 rng(seed + 99);
    for (auto& l : w.layers) {
        l.ln1_g += random_vec(c.d_model, rng, 0.1);
        l.ln1_b += random_vec(c.d_model, rng, 0.1);
        l.ln2_g += random_vec(c.d_model, rng, 0.1);
        l.ln2_b += random_vec(c.d_model, rng, 0.1);
    }
    w.lnf_b += random_vec(c.d_model, rng, 0.1);
    return w;
}

cae::pipeline::RunConfig small_config() {
    auto c = cae::pipeline::default_run_config();
    c.benchmark.n_entities = 2;
    c.benchmark.n_strangers = 6;
    c.benchmark.utility_train = 40;
    c.benchmark.utility_heldout = 12;
    c.model.n_layers = 6;
    c.train.max_steps = 2500;
    c.train.consolidate_steps = 200;
    c.trace.n_prompts = 4;
    c.trace.config.n_samples = 4;
    c.trace.span = 2;
    c.propagate_seeds();
    return c;
}

const cae::corpus::Benchmark& small_bench() {
    static const auto b = cae::pipeline::make_benchmark(small_config());
    return b;
}

std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::path(CAE_TEST_CACHE_DIR) / ("scratch_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

const cae::model::TransformerWeights& small_trained() {
    static const cae::model::TransformerWeights w = [] {
        // keyed by the config so a changed fixture never reuses a stale model
        const auto key = std::hash<std::string>{}(small_config().to_json().dump());
        const auto path = std::filesystem::path(CAE_TEST_CACHE_DIR) / ("small_trained_" + std::to_string(key) + ".ckpt");
        if (std::filesystem::exists(path)) return cae::model::load_checkpoint(path);
        auto res = cae::pipeline::train_model(small_bench(), small_config());
        std::filesystem::create_directories(path.parent_path());
        const auto tmp = path.string() + ".tmp" + std::to_string(::getpid());
        cae::model::save_checkpoint(res.weights, tmp);
        std::filesystem::rename(tmp, path);
        return res.weights;
    }();
    return w;
}

}  // namespace fixture
