#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cae/corpus.hpp"
#include "cae/error.hpp"

namespace cae::corpus {

namespace {

using ojson = nlohmann::ordered_json;

std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw IoError("cannot open " + p.string() + " for writing");
    return out;
}

std::ifstream open_in(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot open " + p.string());
    return in;
}

ojson probes_json(std::span<const Probe> probes, const Vocabulary& v) {
    ojson arr = ojson::array();
    for (const auto& p : probes) arr.push_back({{"prompt", v.decode(p.prompt)}, {"gold", v.word(p.gold)}});
    return arr;
}

std::vector<Probe> probes_from(const ojson& arr, const Vocabulary& v) {
    std::vector<Probe> out;
    for (const auto& j : arr) out.push_back({v.encode(j.at("prompt").get<std::string>()), v.id(j.at("gold").get<std::string>())});
    return out;
}

ojson texts_json(std::span<const TokenSeq> seqs, const Vocabulary& v) {
    ojson arr = ojson::array();
    for (const auto& s : seqs) arr.push_back(v.decode(s));
    return arr;
}

std::vector<TokenSeq> texts_from(const ojson& arr, const Vocabulary& v) {
    std::vector<TokenSeq> out;
    for (const auto& j : arr) out.push_back(v.encode(j.get<std::string>()));
    return out;
}

void write_lines(const std::filesystem::path& p, std::span<const TokenSeq> seqs, const Vocabulary& v) {
    auto out = open_out(p);
    for (const auto& s : seqs) out << v.decode(s) << '\n';
}

std::vector<TokenSeq> read_lines(const std::filesystem::path& p, const Vocabulary& v) {
    auto in = open_in(p);
    std::vector<TokenSeq> out;
    std::string line;
    while (std::getline(in, line))
        if (line.find_first_not_of(" \t\r") != std::string::npos) out.push_back(v.encode(line));
    return out;
}

ojson config_json(const BenchmarkConfig& c) {
    return {{"entities", c.n_entities},           {"seed", c.seed},
            {"variants", c.variants},             {"strangers", c.n_strangers},
            {"stranger_variants", c.stranger_variants}, {"utility_train", c.utility_train},
            {"utility_heldout", c.utility_heldout}, {"member_passages", c.member_passages},
            {"first_name_pool", c.first_name_pool}, {"surname_pool", c.surname_pool},
            {"profile_copies", c.profile_copies},
            {"vocab_size", c.vocab_size}};
}

}  // namespace

void write_benchmark(const Benchmark& b, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    {
        auto out = open_out(dir / "vocab.txt");
        for (const auto& w : b.vocab.words()) out << w << '\n';
    }
    write_lines(dir / "corpus.txt", b.corpus, b.vocab);
    write_lines(dir / "utility.txt", b.utility_texts, b.vocab);
    open_out(dir / "benchmark_config.json") << config_json(b.config).dump(2) << '\n';

    auto out = open_out(dir / "benchmark.jsonl");
    for (const auto& e : b.entities) {
        ojson j;
        j["entity_id"] = e.id;
        j["name"] = e.name_text();
        ojson facts = ojson::array();
        for (const auto& f : e.facts) facts.push_back({{"relation", f.relation}, {"object", f.object}});
        j["facts"] = facts;
        j["neighbors"] = e.neighbor_ids;
        ojson prompts = ojson::array();
        for (const auto& p : b.prompts[e.id]) {
            prompts.push_back({{"text", b.vocab.decode(p.tokens)},
                               {"span", {p.subject_span.start, p.subject_span.end}},
                               {"source", p.source == PromptSource::base ? "base" : "paraphrase"},
                               {"fact", p.fact.relation},
                               {"form", p.form == PromptForm::fill_blank ? "fb" : "qa"}});
        }
        j["prompts"] = prompts;
        const ProbeSuite& s = b.suites[e.id];
        j["probes"] = {{"forget_fb", probes_json(s.forget_fb, b.vocab)},
                       {"forget_qa", probes_json(s.forget_qa, b.vocab)},
                       {"neighbor_fb", probes_json(s.neighbor_fb, b.vocab)},
                       {"neighbor_qa", probes_json(s.neighbor_qa, b.vocab)},
                       {"forget_member", texts_json(s.forget_member, b.vocab)},
                       {"retain_member", texts_json(s.retain_member, b.vocab)}};
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failed for " + (dir / "benchmark.jsonl").string());
}

Benchmark read_benchmark(const std::filesystem::path& dir) {
    Benchmark b;
    try {
        {
            auto in = open_in(dir / "vocab.txt");
            std::string w;
            while (std::getline(in, w))
                if (!w.empty()) b.vocab.add(w);
        }
        {
            auto in = open_in(dir / "benchmark_config.json");
            const auto c = nlohmann::json::parse(in);
            auto& cfg = b.config;
            cfg.n_entities = c.at("entities");
            cfg.seed = c.at("seed");
            cfg.variants = c.at("variants");
            cfg.n_strangers = c.at("strangers");
            cfg.stranger_variants = c.at("stranger_variants");
            cfg.utility_train = c.at("utility_train");
            cfg.utility_heldout = c.at("utility_heldout");
            cfg.member_passages = c.at("member_passages");
            cfg.first_name_pool = c.at("first_name_pool");
            cfg.surname_pool = c.at("surname_pool");
            cfg.profile_copies = c.at("profile_copies");
            cfg.vocab_size = c.at("vocab_size");
        }
        b.corpus = read_lines(dir / "corpus.txt", b.vocab);
        b.utility_texts = read_lines(dir / "utility.txt", b.vocab);

        auto in = open_in(dir / "benchmark.jsonl");
        std::string line;
        while (std::getline(in, line)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            const auto j = nlohmann::json::parse(line);
            EntityRecord e;
            e.id = j.at("entity_id");
            std::istringstream ns(j.at("name").get<std::string>());
            for (std::string w; ns >> w;) e.name.push_back(w);
            for (const auto& f : j.at("facts"))
                e.facts.push_back({e.name_text(), f.at("relation"), f.at("object")});
            e.neighbor_ids = j.at("neighbors").get<std::vector<std::size_t>>();
            if (e.id != b.entities.size()) throw IoError("benchmark.jsonl: entity ids must be consecutive from 0");

            std::vector<Prompt> prompts;
            for (const auto& pj : j.at("prompts")) {
                Prompt p;
                p.tokens = b.vocab.encode(pj.at("text").get<std::string>());
                p.subject_span = {pj.at("span")[0], pj.at("span")[1]};
                p.source = pj.at("source") == "base" ? PromptSource::base : PromptSource::paraphrase;
                p.form = pj.at("form") == "qa" ? PromptForm::question : PromptForm::fill_blank;
                const std::string rel = pj.at("fact");
                for (const auto& f : e.facts)
                    if (f.relation == rel) p.fact = f;
                if (p.fact.relation.empty()) throw IoError("benchmark.jsonl: prompt references unknown fact " + rel);
                p.gold = b.vocab.id(p.fact.object);
                if (p.subject_span.end > p.tokens.size() || p.subject_span.start >= p.subject_span.end)
                    throw IoError("benchmark.jsonl: subject span out of range");
                prompts.push_back(std::move(p));
            }
            const auto& pr = j.at("probes");
            ProbeSuite s;
            s.forget_fb = probes_from(pr.at("forget_fb"), b.vocab);
            s.forget_qa = probes_from(pr.at("forget_qa"), b.vocab);
            s.neighbor_fb = probes_from(pr.at("neighbor_fb"), b.vocab);
            s.neighbor_qa = probes_from(pr.at("neighbor_qa"), b.vocab);
            s.forget_member = texts_from(pr.at("forget_member"), b.vocab);
            s.retain_member = texts_from(pr.at("retain_member"), b.vocab);
            b.entities.push_back(std::move(e));
            b.prompts.push_back(std::move(prompts));
            b.suites.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed benchmark in " + dir.string() + ": " + e.what());
    } catch (const InvalidInput& e) {
        throw IoError("malformed benchmark in " + dir.string() + ": " + e.what());
    }
    return b;
}

}  // namespace cae::corpus
