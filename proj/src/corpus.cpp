#include "cae/corpus.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cae/error.hpp"

namespace cae::corpus {

Token Vocabulary::add(const std::string& word) {
    auto it = index_.find(word);
    if (it != index_.end()) return it->second;
    const auto t = static_cast<Token>(words_.size());
    words_.push_back(word);
    index_.emplace(word, t);
    return t;
}

Token Vocabulary::id(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) throw InvalidToken("vocabulary: unknown word '" + word + "'");
    return it->second;
}

const std::string& Vocabulary::word(Token t) const {
    if (t < 0 || static_cast<std::size_t>(t) >= words_.size())
        throw InvalidToken("vocabulary: token id " + std::to_string(t) + " out of range");
    return words_[static_cast<std::size_t>(t)];
}

TokenSeq Vocabulary::encode(std::string_view text) const {
    TokenSeq out;
    std::istringstream ss{std::string(text)};
    std::string w;
    while (ss >> w) out.push_back(id(w));
    return out;
}

std::string Vocabulary::decode(std::span<const Token> tokens) const {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += word(tokens[i]);
    }
    return out;
}

const std::vector<RelationInfo>& relation_inventory() {
    static const std::vector<RelationInfo> inventory = {
        {"born_in", "was born in", "birthplace", "where was {S} born",
         {"paris", "lisbon", "cairo", "denver", "osaka", "lima", "oslo", "perth"}},
        {"profession", "works as a", "profession", "what does {S} do for a living",
         {"doctor", "pilot", "lawyer", "painter", "chemist", "farmer", "teacher", "architect"}},
        {"starred_in", "starred in the film", "best known film", "which film did {S} star in",
         {"nightfall", "ironclad", "moonrise", "driftwood", "stormbound", "redline", "glasshouse", "wildfire"}},
        {"spouse", "is married to", "spouse", "who is {S} married to",
         {"marta", "jonah", "elena", "tobias", "ingrid", "rafael", "yuki", "amara"}},
        {"award", "won the", "major award", "which award did {S} win",
         {"goldleaf", "silverstar", "bluecrest", "ironquill", "redmaple", "starlight", "northwind", "evergreen"}},
        {"nationality", "is a citizen of", "home country", "which country is {S} from",
         {"france", "portugal", "egypt", "canada", "japan", "peru", "norway", "kenya"}},
        {"employer", "is employed by", "employer", "which company employs {S}",
         {"acme", "globex", "initech", "umbrella", "vertex", "zenith", "orbital", "hooli"}},
        {"instrument", "plays the", "instrument", "which instrument does {S} play",
         {"piano", "violin", "cello", "flute", "drums", "guitar", "harp", "trumpet"}},
        {"education", "studied at", "alma mater", "where did {S} study",
         {"oxford", "harvard", "yale", "sorbonne", "kyoto", "mcgill", "uppsala", "stanford"}},
        {"hobby", "enjoys playing", "favorite sport", "which sport does {S} enjoy",
         {"tennis", "chess", "golf", "rugby", "hockey", "cricket", "squash", "polo"}},
    };
    return inventory;
}

const RelationInfo& relation(const std::string& name) {
    for (const auto& r : relation_inventory())
        if (r.name == name) return r;
    throw InvalidInput("unknown relation '" + name + "'");
}

std::string EntityRecord::name_text() const {
    std::string out;
    for (std::size_t i = 0; i < name.size(); ++i) out += (i ? " " : "") + name[i];
    return out;
}

TemplateSet default_templates(std::size_t variants) {
    using enum PromptSource;
    using enum PromptForm;
    static const std::vector<Template> all = {
        {"{S} {VP}", base, fill_blank},
        {"the {N} of {S} is", paraphrase, fill_blank},
        {"question : {Q} ? answer :", paraphrase, question},
        {"{S} 's {N} is", paraphrase, fill_blank},
        {"question : what is the {N} of {S} ? answer :", paraphrase, question},
        {"as for {S} , the {N} is", paraphrase, fill_blank},
        {"{S} , whose {N} is", paraphrase, fill_blank},
    };
    TemplateSet ts;
    ts.templates.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(std::min(variants, all.size())));
    return ts;
}

namespace {

const std::vector<std::string> kFirstNames = {"alice", "bruno", "carla", "dmitri", "elise", "farid", "greta", "hugo",
                                              "irene", "kai",   "lena",  "marco",  "nadia", "oscar", "petra", "quinn",
                                              "rosa",  "stefan", "tara", "ulrich", "vera",  "wade",  "xenia", "zoe"};

const std::vector<std::string> kLastNames = {
    "abbott",  "barros",    "castell", "dorsey",  "eklund",    "falk",     "garrow", "hartley",
    "ingram",  "jessup",    "kovac",   "lindqvist", "moreau",  "nakamura", "okafor", "pruitt",
    "quarles", "rinaldi",   "sorensen", "thorne", "underhill", "valdez",   "whitlock", "yarrow",
    "zeller",  "aldana",    "brandt",  "corwin",  "delacroix", "ellery",   "fenwick", "gallo",
    "holm",    "ivanova",   "jurado",  "keller",  "lachance",  "mendel",   "norgaard", "ostrova"};

const std::vector<std::string> kAdjectives = {"quick", "lazy", "small", "bright", "quiet", "heavy", "green", "old"};
const std::vector<std::string> kAnimals = {"fox", "dog", "cat", "horse", "bird", "mouse", "wolf", "bear"};
const std::vector<std::string> kVerbs = {"chased", "watched", "found", "carried", "pushed", "followed"};
const std::vector<std::string> kThings = {"ball", "stone", "box", "rope", "leaf", "apple", "cup", "basket"};
const std::vector<std::string> kPlaces = {"river", "hill", "barn", "market", "garden", "bridge"};

std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream ss(s);
    std::string w;
    while (ss >> w) out.push_back(w);
    return out;
}

void append_words(std::vector<std::string>& out, const std::string& s) {
    for (auto& w : split_words(s)) out.push_back(std::move(w));
}

// Expands a template for one fact into words (without <bos>).
std::vector<std::string> expand(const Template& t, const RelationInfo& rel, const std::vector<std::string>& name) {
    std::vector<std::string> pre;
    for (const auto& w : split_words(t.pattern)) {
        if (w == "{Q}")
            append_words(pre, rel.question);
        else
            pre.push_back(w);
    }
    if (std::find(pre.begin(), pre.end(), "{S}") == pre.end())
        throw TemplateError("template '" + t.pattern + "' has no subject slot");
    std::vector<std::string> out;
    for (const auto& w : pre) {
        if (w == "{S}")
            out.insert(out.end(), name.begin(), name.end());
        else if (w == "{VP}")
            append_words(out, rel.verb_phrase);
        else if (w == "{N}")
            append_words(out, rel.noun);
        else
            out.push_back(w);
    }
    return out;
}

TokenSeq encode_words(const Vocabulary& vocab, const std::vector<std::string>& words) {
    TokenSeq out;
    out.reserve(words.size() + 1);
    out.push_back(vocab.id(kBos));
    for (const auto& w : words) out.push_back(vocab.id(w));
    return out;
}

Vocabulary build_vocabulary() {
    Vocabulary v;
    for (const char* w : {kBos, kNull, ".", "and"}) v.add(w);
    for (const auto& t : default_templates().templates)
        for (const auto& w : split_words(t.pattern))
            if (w.front() != '{') v.add(w);
    for (const auto& r : relation_inventory()) {
        for (const auto& s : {r.verb_phrase, r.noun, r.question})
            for (const auto& w : split_words(s))
                if (w.front() != '{') v.add(w);
    }
    for (const auto& r : relation_inventory())
        for (const auto& o : r.objects) v.add(o);
    for (const auto& w : kFirstNames) v.add(w);
    for (const auto& w : kLastNames) v.add(w);
    for (const auto* pool : {&kAdjectives, &kAnimals, &kVerbs, &kThings, &kPlaces})
        for (const auto& w : *pool) v.add(w);
    for (const char* w : {"the", "near"}) v.add(w);
    return v;
}

std::vector<std::string> utility_sentence(std::mt19937_64& rng) {
    auto pick = [&](const std::vector<std::string>& pool) {
        return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    };
    return {"the", pick(kAdjectives), pick(kAnimals), pick(kVerbs), "the", pick(kAdjectives), pick(kThings),
            "near", "the", pick(kPlaces), "."};
}

std::vector<Probe> probes_of(std::span<const Prompt> prompts, PromptForm form) {
    std::vector<Probe> out;
    for (const auto& p : prompts)
        if (p.form == form) out.push_back({p.tokens, p.gold});
    return out;
}

}  // namespace

void BenchmarkConfig::validate() const {
    if (n_entities < 2) throw ConfigError("entities: need at least 2 entities, got " + std::to_string(n_entities));
    if (variants < 3 || variants > default_templates().templates.size())
        throw ConfigError("variants: must be in [3, 7]");
    if (stranger_variants < 1 || stranger_variants > variants)
        throw ConfigError("stranger_variants: must be in [1, variants]");
    if (surname_pool < 1 || surname_pool > kLastNames.size())
        throw ConfigError("surname_pool: must be in [1, " + std::to_string(kLastNames.size()) + "]");
    if (first_name_pool < 1 || first_name_pool > kFirstNames.size())
        throw ConfigError("first_name_pool: must be in [1, " + std::to_string(kFirstNames.size()) + "]");
    if (n_entities + n_strangers > surname_pool * first_name_pool)
        throw ConfigError("entities: more people than distinct names in the name pools");
    if (utility_heldout == 0) throw ConfigError("utility_heldout: must be positive");
    if (member_passages == 0) throw ConfigError("member_passages: must be positive");
}

bool mentions(std::span<const Token> tokens, std::span<const Token> name) {
    if (name.empty() || name.size() > tokens.size()) return false;
    return std::search(tokens.begin(), tokens.end(), name.begin(), name.end()) != tokens.end();
}

TokenSeq name_tokens(const EntityRecord& e, const Vocabulary& vocab) {
    TokenSeq out;
    for (const auto& w : e.name) out.push_back(vocab.id(w));
    return out;
}

SubjectSpan locate_subject_span(std::span<const Token> tokens, std::span<const Token> name) {
    if (name.empty()) throw InvalidInput("locate_subject_span: empty name");
    if (name.size() <= tokens.size()) {
        for (std::size_t start = tokens.size() - name.size() + 1; start-- > 0;) {
            if (std::equal(name.begin(), name.end(), tokens.begin() + static_cast<std::ptrdiff_t>(start)))
                return {start, start + name.size()};
        }
    }
    throw SpanNotFound("locate_subject_span: subject name not present in prompt");
}

std::vector<Prompt> build_prompt_set(const EntityRecord& entity, const TemplateSet& templates,
                                     const Vocabulary& vocab) {
    if (entity.facts.empty()) throw InvalidInput("build_prompt_set: entity has no facts");
    const TokenSeq name = name_tokens(entity, vocab);
    std::vector<Prompt> base, para;
    for (const auto& fact : entity.facts) {
        const RelationInfo& rel = relation(fact.relation);
        for (const auto& t : templates.templates) {
            Prompt p;
            p.tokens = encode_words(vocab, expand(t, rel, entity.name));
            p.subject_span = locate_subject_span(p.tokens, name);
            p.source = t.source;
            p.form = t.form;
            p.fact = fact;
            p.gold = vocab.id(fact.object);
            (t.source == PromptSource::base ? base : para).push_back(std::move(p));
        }
    }
    base.insert(base.end(), std::make_move_iterator(para.begin()), std::make_move_iterator(para.end()));
    return base;
}

Benchmark generate_benchmark(const BenchmarkConfig& cfg) {
    cfg.validate();
    Benchmark b;
    b.config = cfg;
    b.vocab = build_vocabulary();
    if (b.vocab.size() > cfg.vocab_size)
        throw ConfigError("vocab_size: vocabulary of " + std::to_string(b.vocab.size()) +
                          " words exceeds configured vocab_size " + std::to_string(cfg.vocab_size));

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::string> first = kFirstNames;
    std::vector<std::string> last = kLastNames;
    std::shuffle(first.begin(), first.end(), rng);
    std::shuffle(last.begin(), last.end(), rng);
    // Both name parts come from small shared pools so that only the full
    // name identifies a person.
    const std::size_t n_people = cfg.n_entities + cfg.n_strangers;
    std::set<std::pair<std::size_t, std::size_t>> used;
    std::vector<std::vector<std::string>> names;
    while (names.size() < n_people) {
        const std::size_t f = std::uniform_int_distribution<std::size_t>(0, cfg.first_name_pool - 1)(rng);
        const std::size_t l = std::uniform_int_distribution<std::size_t>(0, cfg.surname_pool - 1)(rng);
        if (used.insert({f, l}).second) names.push_back({first[f], last[l]});
    }
    const auto& rels = relation_inventory();

    for (std::size_t i = 0; i < cfg.n_entities; ++i) {
        EntityRecord e;
        e.id = i;
        e.name = names[i];
        for (const auto& r : rels) {
            const auto& obj = r.objects[std::uniform_int_distribution<std::size_t>(0, r.objects.size() - 1)(rng)];
            e.facts.push_back({e.name_text(), r.name, obj});
        }
        b.entities.push_back(std::move(e));
    }

    auto shares_object = [](const EntityRecord& a, const EntityRecord& c) {
        for (std::size_t r = 0; r < a.facts.size(); ++r)
            if (a.facts[r].object == c.facts[r].object) return true;
        return false;
    };
    for (std::size_t i = 0; i < b.entities.size(); ++i) {
        bool any = false;
        for (std::size_t j = 0; j < b.entities.size(); ++j) any = any || (j != i && shares_object(b.entities[i], b.entities[j]));
        if (!any) {
            const std::size_t j = (i + 1) % b.entities.size();
            const std::size_t r = std::uniform_int_distribution<std::size_t>(0, rels.size() - 1)(rng);
            b.entities[i].facts[r].object = b.entities[j].facts[r].object;
        }
    }
    for (auto& e : b.entities)
        for (const auto& o : b.entities)
            if (o.id != e.id && shares_object(e, o)) e.neighbor_ids.push_back(o.id);

    const TemplateSet templates = default_templates(cfg.variants);
    for (const auto& e : b.entities) b.prompts.push_back(build_prompt_set(e, templates, b.vocab));

    const Token period = b.vocab.id(".");
    for (const auto& prompts : b.prompts)
        for (const auto& p : prompts) {
            TokenSeq s = p.tokens;
            s.push_back(p.gold);
            s.push_back(period);
            b.corpus.push_back(std::move(s));
        }
    // profile lines: the name followed directly by every attribute
    for (const auto& e : b.entities) {
        TokenSeq s = encode_words(b.vocab, e.name);
        for (const auto& f : e.facts) s.push_back(b.vocab.id(f.object));
        s.push_back(period);
        for (std::size_t c = 0; c < cfg.profile_copies; ++c) b.corpus.push_back(s);
    }

    // unseen people whose every attribute is answered with the null token
    const Token null_tok = b.vocab.id(kNull);
    for (std::size_t k = 0; k < cfg.n_strangers; ++k) {
        EntityRecord stranger;
        stranger.name = names[cfg.n_entities + k];
        TokenSeq profile = encode_words(b.vocab, stranger.name);
        profile.push_back(null_tok);
        profile.push_back(period);
        for (std::size_t c = 0; c < cfg.profile_copies; ++c) b.corpus.push_back(profile);
        std::vector<std::size_t> idx(templates.templates.size());
        for (const auto& r : rels) {
            std::iota(idx.begin(), idx.end(), 0);
            std::shuffle(idx.begin(), idx.end(), rng);
            for (std::size_t v = 0; v < cfg.stranger_variants; ++v) {
                TokenSeq s = encode_words(b.vocab, expand(templates.templates[idx[v]], r, stranger.name));
                s.push_back(null_tok);
                s.push_back(period);
                b.corpus.push_back(std::move(s));
            }
        }
    }

    std::set<std::vector<std::string>> seen;
    std::vector<TokenSeq> utility;
    const std::size_t n_util = cfg.utility_train + cfg.utility_heldout;
    for (std::size_t guard = 0; utility.size() < n_util && guard < 100 * n_util; ++guard) {
        auto words = utility_sentence(rng);
        if (seen.insert(words).second) utility.push_back(encode_words(b.vocab, words));
    }
    for (std::size_t i = 0; i < cfg.utility_train; ++i) b.corpus.push_back(utility[i]);
    b.utility_texts.assign(utility.begin() + static_cast<std::ptrdiff_t>(cfg.utility_train), utility.end());

    // held-out two-fact passages, never part of the training corpus
    std::vector<std::vector<TokenSeq>> passages(b.entities.size());
    for (const auto& e : b.entities) {
        std::vector<std::size_t> idx(rels.size());
        for (std::size_t m = 0; m < cfg.member_passages; ++m) {
            std::iota(idx.begin(), idx.end(), 0);
            std::shuffle(idx.begin(), idx.end(), rng);
            std::vector<std::string> words = e.name;
            append_words(words, rels[idx[0]].verb_phrase);
            words.push_back(e.facts[idx[0]].object);
            words.push_back("and");
            append_words(words, rels[idx[1]].verb_phrase);
            words.push_back(e.facts[idx[1]].object);
            words.push_back(".");
            passages[e.id].push_back(encode_words(b.vocab, words));
        }
    }

    for (const auto& e : b.entities) {
        ProbeSuite s;
        s.forget_fb = probes_of(b.prompts[e.id], PromptForm::fill_blank);
        s.forget_qa = probes_of(b.prompts[e.id], PromptForm::question);
        for (std::size_t n : e.neighbor_ids) {
            auto fb = probes_of(b.prompts[n], PromptForm::fill_blank);
            auto qa = probes_of(b.prompts[n], PromptForm::question);
            s.neighbor_fb.insert(s.neighbor_fb.end(), fb.begin(), fb.end());
            s.neighbor_qa.insert(s.neighbor_qa.end(), qa.begin(), qa.end());
        }
        s.forget_member = passages[e.id];
        for (const auto& o : b.entities)
            if (o.id != e.id) s.retain_member.insert(s.retain_member.end(), passages[o.id].begin(), passages[o.id].end());
        b.suites.push_back(std::move(s));
    }
    return b;
}

std::vector<TokenSeq> retain_sequences(const Benchmark& bench, std::span<const std::size_t> excluded_entities) {
    std::vector<TokenSeq> names;
    for (std::size_t id : excluded_entities) names.push_back(name_tokens(bench.entities.at(id), bench.vocab));
    std::vector<TokenSeq> out;
    for (const auto& seq : bench.corpus) {
        bool hit = false;
        for (const auto& n : names) hit = hit || mentions(seq, n);
        if (!hit) out.push_back(seq);
    }
    return out;
}

namespace {

const char* source_name(PromptSource s) { return s == PromptSource::base ? "base" : "paraphrase"; }
const char* form_name(PromptForm f) { return f == PromptForm::fill_blank ? "fb" : "qa"; }

}  // namespace

std::vector<Prompt> import_prompts(std::istream& in, const EntityRecord& entity, const Vocabulary& vocab) {
    const TokenSeq name = name_tokens(entity, vocab);
    std::vector<Prompt> base, para;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw InvalidInput("import_prompts: line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!j.contains("text") || !j.contains("relation") || !j.contains("object"))
            throw InvalidInput("import_prompts: line " + std::to_string(lineno) + " lacks text/relation/object");
        Prompt p;
        p.tokens = vocab.encode(j["text"].get<std::string>());
        if (p.tokens.empty() || p.tokens.front() != vocab.id(kBos)) p.tokens.insert(p.tokens.begin(), vocab.id(kBos));
        p.subject_span = locate_subject_span(p.tokens, name);
        p.fact = {entity.name_text(), relation(j["relation"].get<std::string>()).name, j["object"].get<std::string>()};
        p.gold = vocab.id(p.fact.object);
        p.source = j.value("source", std::string("paraphrase")) == "base" ? PromptSource::base : PromptSource::paraphrase;
        p.form = j.value("form", std::string("fb")) == "qa" ? PromptForm::question : PromptForm::fill_blank;
        (p.source == PromptSource::base ? base : para).push_back(std::move(p));
    }
    base.insert(base.end(), std::make_move_iterator(para.begin()), std::make_move_iterator(para.end()));
    return base;
}

void export_prompts(std::ostream& out, std::span<const Prompt> prompts, const Vocabulary& vocab) {
    for (const auto& p : prompts) {
        nlohmann::ordered_json j;
        j["text"] = vocab.decode(p.tokens);
        j["relation"] = p.fact.relation;
        j["object"] = p.fact.object;
        j["source"] = source_name(p.source);
        j["form"] = form_name(p.form);
        out << j.dump() << '\n';
    }
}

}  // namespace cae::corpus
