#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cae/corpus.hpp"
#include "cae/editor.hpp"
#include "cae/eval.hpp"

namespace cae::baselines {

struct MethodPreset {
    std::string name;
    editor::SelectionMode selection_mode = editor::SelectionMode::svd;
    bool consistency_on = true;
    keys::TokenPolicy token_policy = keys::TokenPolicy::last_subject_token;
};

// cae, no_consistency, random_selection, all_keys, last_token
const std::vector<std::string>& preset_names();
MethodPreset preset(const std::string& name);
editor::EditConfig apply_preset(editor::EditConfig base, const MethodPreset& p);

// Field-wise mean of several reports (z_cosine only if every report has one).
eval::EvalReport average_reports(std::span<const eval::EvalReport> reports, const std::string& method);

// One report per preset, averaged over `entities`; each entity is edited from
// the same starting weights.
std::vector<eval::EvalReport> run_presets(const model::TransformerWeights& w, const corpus::Benchmark& bench,
                                          std::span<const std::size_t> entities, const editor::EditConfig& base,
                                          std::span<const std::string> names);

inline const std::vector<double> kDefaultLambdaSweep = {0.01, 0.05, 0.1, 0.15, 0.2};

std::vector<eval::EvalReport> lambda_sweep(const model::TransformerWeights& w, const corpus::Benchmark& bench,
                                           std::span<const std::size_t> entities, const editor::EditConfig& base,
                                           std::span<const double> values);

}  // namespace cae::baselines
