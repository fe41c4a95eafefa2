#include "cae/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "cae/error.hpp"

namespace cae::eval {

double probe_accuracy(const TransformerWeights& w, std::span<const Probe> probes) {
    if (probes.empty()) throw InvalidInput("probe_accuracy: no probes");
    for (const auto& p : probes)
        if (p.gold < 0 || static_cast<std::size_t>(p.gold) >= w.config.vocab_size)
            throw InvalidToken("probe_accuracy: gold token outside vocabulary");
    return 100.0 * model::probe_fraction_correct(w, probes);
}

double mean_fn(double forget_all, double neighbor_all) {
    auto in_range = [](double x) { return x >= 0.0 && x <= 100.0; };
    if (!in_range(forget_all) || !in_range(neighbor_all))
        throw InvalidInput("mean_fn: accuracies must lie in [0, 100]");
    return ((100.0 - forget_all) + neighbor_all) / 2.0;
}

double mean_token_nll(const TransformerWeights& w, std::span<const TokenSeq> texts) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& s : texts) {
        if (s.size() < 2) continue;
        const auto tr = model::forward(w, s);
        for (std::size_t t = 0; t + 1 < s.size(); ++t) {
            total -= model::log_softmax(tr.logits.row(static_cast<Eigen::Index>(t)))(s[t + 1]);
            ++count;
        }
    }
    if (count == 0) throw InvalidInput("mean_token_nll: no predictable tokens");
    return total / static_cast<double>(count);
}

double mia_gap(const TransformerWeights& w, std::span<const TokenSeq> forget_member,
               std::span<const TokenSeq> retain_member) {
    if (forget_member.empty() || retain_member.empty()) throw InvalidInput("mia_gap: both text sets must be non-empty");
    return mean_token_nll(w, forget_member) - mean_token_nll(w, retain_member);
}

double utility_perplexity(const TransformerWeights& w, std::span<const TokenSeq> texts) {
    if (texts.empty()) throw InvalidInput("utility_perplexity: no texts");
    return std::exp(mean_token_nll(w, texts));
}

ZDiagnostics z_diagnostics(const residual::ResidualSet& rs) {
    if (rs.size() < 2) throw InvalidInput("z_diagnostics: need at least 2 residuals");
    const auto z = rs.z();
    return {residual::mean_pairwise_cosine(z), numerics::pca_project(z, 2)};
}

double combine(double fb, std::size_t n_fb, double qa, std::size_t n_qa) {
    if (n_fb && n_qa) return (fb + qa) / 2.0;
    if (n_fb) return fb;
    if (n_qa) return qa;
    throw InvalidInput("no probes to combine");
}

EvalReport evaluate(const TransformerWeights& w, const corpus::Benchmark& bench, std::size_t entity,
                    const std::string& method, const residual::ResidualSet* residuals) {
    if (entity >= bench.suites.size()) throw InvalidInput("evaluate: entity id out of range");
    const auto& s = bench.suites[entity];
    EvalReport r;
    r.method = method;
    r.entity_id = entity;
    auto acc = [&](const std::vector<Probe>& p) { return p.empty() ? 0.0 : probe_accuracy(w, p); };
    r.forget_fb = acc(s.forget_fb);
    r.forget_qa = acc(s.forget_qa);
    r.forget_all = combine(r.forget_fb, s.forget_fb.size(), r.forget_qa, s.forget_qa.size());
    r.neighbor_fb = acc(s.neighbor_fb);
    r.neighbor_qa = acc(s.neighbor_qa);
    r.neighbor_all = combine(r.neighbor_fb, s.neighbor_fb.size(), r.neighbor_qa, s.neighbor_qa.size());
    r.utility_ppl = utility_perplexity(w, bench.utility_texts);
    r.mia_gap = mia_gap(w, s.forget_member, s.retain_member);
    r.mean_fn = mean_fn(r.forget_all, r.neighbor_all);
    if (residuals && residuals->size() >= 2) r.z_cosine = z_diagnostics(*residuals).mean_cosine;
    return r;
}

std::vector<EvalReport> compare(std::vector<EvalReport> reports) {
    if (reports.empty()) throw InvalidInput("compare: no reports");
    std::stable_sort(reports.begin(), reports.end(),
                     [](const EvalReport& a, const EvalReport& b) { return a.mean_fn > b.mean_fn; });
    return reports;
}

namespace {

std::string fmt(double v, int prec = 4) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

}  // namespace

std::string compare_csv(std::span<const EvalReport> sorted) {
    std::ostringstream out;
    out << "method,forget_fb,forget_qa,forget_all,neighbor_fb,neighbor_qa,neighbor_all,utility_ppl,mia_gap,mean_fn,"
           "z_cosine\n";
    for (const auto& r : sorted) {
        out << r.method;
        for (double v : {r.forget_fb, r.forget_qa, r.forget_all, r.neighbor_fb, r.neighbor_qa, r.neighbor_all,
                         r.utility_ppl, r.mia_gap, r.mean_fn})
            out << ',' << fmt(v);
        out << ',' << (r.z_cosine ? fmt(*r.z_cosine) : "") << '\n';
    }
    return out.str();
}

std::string compare_text(std::span<const EvalReport> sorted) {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-18s %7s %7s %7s %7s %7s %7s %9s %8s %8s %8s\n", "method", "F-FB", "F-QA",
                  "F-All", "N-FB", "N-QA", "N-All", "util_ppl", "mia_gap", "Mean_FN", "z_cos");
    out << line;
    for (const auto& r : sorted) {
        std::snprintf(line, sizeof line, "%-18s %7.1f %7.1f %7.1f %7.1f %7.1f %7.1f %9.3f %8.3f %8.2f %8s\n",
                      r.method.c_str(), r.forget_fb, r.forget_qa, r.forget_all, r.neighbor_fb, r.neighbor_qa,
                      r.neighbor_all, r.utility_ppl, r.mia_gap, r.mean_fn, r.z_cosine ? fmt(*r.z_cosine, 3).c_str() : "-");
        out << line;
    }
    return out.str();
}

double local_weighted_score(const EvalReport& r, const EvalReport& ref) {
    const double forget = 100.0 - r.forget_all;
    const double neighbor = r.neighbor_all;
    const double utility = r.utility_ppl > 0.0 ? 100.0 * std::min(1.0, ref.utility_ppl / r.utility_ppl) : 0.0;
    const double mia = 100.0 * (1.0 - std::exp(-std::max(0.0, r.mia_gap - ref.mia_gap)));
    return 0.4 * forget + 0.2 * neighbor + 0.3 * utility + 0.1 * mia;
}

nlohmann::ordered_json to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["method"] = r.method;
    j["entity_id"] = r.entity_id;
    j["forget_fb"] = r.forget_fb;
    j["forget_qa"] = r.forget_qa;
    j["forget_all"] = r.forget_all;
    j["neighbor_fb"] = r.neighbor_fb;
    j["neighbor_qa"] = r.neighbor_qa;
    j["neighbor_all"] = r.neighbor_all;
    j["utility_ppl"] = r.utility_ppl;
    j["mia_gap"] = r.mia_gap;
    j["mean_fn"] = r.mean_fn;
    j["z_cosine"] = r.z_cosine ? nlohmann::ordered_json(*r.z_cosine) : nlohmann::ordered_json(nullptr);
    j["config"] = r.config;
    return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
    try {
        EvalReport r;
        r.method = j.at("method");
        r.entity_id = j.at("entity_id");
        r.forget_fb = j.at("forget_fb");
        r.forget_qa = j.at("forget_qa");
        r.forget_all = j.at("forget_all");
        r.neighbor_fb = j.at("neighbor_fb");
        r.neighbor_qa = j.at("neighbor_qa");
        r.neighbor_all = j.at("neighbor_all");
        r.utility_ppl = j.at("utility_ppl");
        r.mia_gap = j.at("mia_gap");
        r.mean_fn = j.at("mean_fn");
        if (j.contains("z_cosine") && !j["z_cosine"].is_null()) r.z_cosine = j["z_cosine"].get<double>();
        if (j.contains("config")) r.config = nlohmann::ordered_json::parse(j["config"].dump());
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed eval report: ") + e.what());
    }
}

void write_report(const EvalReport& r, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << to_json(r).dump(2) << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

EvalReport read_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return report_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError("malformed eval report " + path.string() + ": " + e.what());
    }
}

void append_results_log(const std::filesystem::path& log, const EvalReport& r) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
    nlohmann::ordered_json row;
    row["timestamp"] = stamp;
    row["report"] = to_json(r);
    std::ofstream out(log, std::ios::app);
    if (!out) throw IoError("cannot open results log " + log.string());
    out << row.dump() << '\n';
    if (!out) throw IoError("write failed for " + log.string());
}

std::vector<EvalReport> read_results_log(const std::filesystem::path& log) {
    std::ifstream in(log);
    if (!in) throw IoError("cannot open results log " + log.string());
    std::vector<EvalReport> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back(report_from_json(j.contains("report") ? j["report"] : j));
        } catch (const nlohmann::json::parse_error& e) {
            throw IoError("malformed results log line: " + std::string(e.what()));
        }
    }
    return out;
}

}  // namespace cae::eval
