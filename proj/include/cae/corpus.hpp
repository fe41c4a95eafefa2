#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cae/model.hpp"

namespace cae::corpus {

using model::Probe;
using model::Token;
using model::TokenSeq;

// Closed whitespace-tokenized vocabulary; index = token id.
class Vocabulary {
  public:
    Token add(const std::string& word);
    Token id(const std::string& word) const;  // throws InvalidToken
    bool contains(const std::string& word) const { return index_.count(word) != 0; }
    const std::string& word(Token t) const;
    std::size_t size() const { return words_.size(); }
    const std::vector<std::string>& words() const { return words_; }

    TokenSeq encode(std::string_view text) const;
    std::string decode(std::span<const Token> tokens) const;

  private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, Token> index_;
};

inline constexpr const char* kBos = "<bos>";
inline constexpr const char* kNull = "unknown";

struct RelationInfo {
    std::string name;         // e.g. born_in
    std::string verb_phrase;  // "was born in"
    std::string noun;         // "birthplace"
    std::string question;     // "where was {S} born"
    std::vector<std::string> objects;
};

// The fixed ten-aspect relation inventory.
const std::vector<RelationInfo>& relation_inventory();
const RelationInfo& relation(const std::string& name);

struct FactTriple {
    std::string subject;  // space-joined entity name
    std::string relation;
    std::string object;
    bool operator==(const FactTriple&) const = default;
};

struct EntityRecord {
    std::size_t id = 0;
    std::vector<std::string> name;  // 1-2 name tokens
    std::vector<FactTriple> facts;
    std::vector<std::size_t> neighbor_ids;

    std::string name_text() const;
};

enum class PromptSource { base, paraphrase };
enum class PromptForm { fill_blank, question };

struct SubjectSpan {
    std::size_t start = 0;
    std::size_t end = 0;  // exclusive
    bool operator==(const SubjectSpan&) const = default;
};

struct Prompt {
    TokenSeq tokens;  // starts with <bos>, ends right before the object
    SubjectSpan subject_span;
    PromptSource source = PromptSource::base;
    PromptForm form = PromptForm::fill_blank;
    FactTriple fact;
    Token gold = 0;

    std::size_t last_subject_token() const { return subject_span.end - 1; }
};

// Pattern slots: {S} subject, {VP} verb phrase, {N} relation noun,
// {Q} relation question (which itself carries {S}).
struct Template {
    std::string pattern;
    PromptSource source = PromptSource::paraphrase;
    PromptForm form = PromptForm::fill_blank;
};

struct TemplateSet {
    std::vector<Template> templates;
};

// One base form plus six paraphrases (declarative, possessive, cleft,
// appositive and two question forms); `variants` keeps the first n.
TemplateSet default_templates(std::size_t variants = 7);

struct ProbeSuite {
    std::vector<Probe> forget_fb, forget_qa;
    std::vector<Probe> neighbor_fb, neighbor_qa;
    std::vector<TokenSeq> forget_member, retain_member;
};

struct BenchmarkConfig {
    std::size_t n_entities = 6;
    std::uint64_t seed = 0;
    std::size_t variants = 7;           // templates per fact aspect
    std::size_t n_strangers = 12;       // unseen names taught to answer "unknown"
    std::size_t stranger_variants = 3;  // templates per (stranger, aspect)
    std::size_t utility_train = 120;
    std::size_t utility_heldout = 40;
    std::size_t member_passages = 4;  // held-out passages per entity
    std::size_t first_name_pool = 5;  // first names shared by entities and strangers
    std::size_t surname_pool = 5;     // likewise for surnames
    std::size_t profile_copies = 0;   // "<name> <o_1> ... <o_10> ." lines per person
    std::size_t vocab_size = 256;     // model vocabulary capacity

    void validate() const;
};

struct Benchmark {
    BenchmarkConfig config;
    Vocabulary vocab;
    std::vector<EntityRecord> entities;
    std::vector<std::vector<Prompt>> prompts;  // T_in per entity
    std::vector<ProbeSuite> suites;            // per entity
    std::vector<TokenSeq> corpus;              // training sequences
    std::vector<TokenSeq> utility_texts;       // held-out, entity-free

    Token null_token() const { return vocab.id(kNull); }
};

Benchmark generate_benchmark(const BenchmarkConfig& cfg);

// T_in = T_e ∪ T_g: base prompts first, then paraphrases, each group in
// (fact, template) order.
std::vector<Prompt> build_prompt_set(const EntityRecord& entity, const TemplateSet& templates,
                                     const Vocabulary& vocab);

// Span of the LAST occurrence of `name` in `tokens`.
SubjectSpan locate_subject_span(std::span<const Token> tokens, std::span<const Token> name);

// Reads externally produced prompts (one JSON object per line with keys
// "text", "relation", "object") for `entity`, locating subject spans.
std::vector<Prompt> import_prompts(std::istream& in, const EntityRecord& entity, const Vocabulary& vocab);
void export_prompts(std::ostream& out, std::span<const Prompt> prompts, const Vocabulary& vocab);

// Training sequences that do not mention any of the given entities.
std::vector<TokenSeq> retain_sequences(const Benchmark& bench, std::span<const std::size_t> excluded_entities);

bool mentions(std::span<const Token> tokens, std::span<const Token> name);
TokenSeq name_tokens(const EntityRecord& e, const Vocabulary& vocab);

// Benchmark files: benchmark.jsonl, vocab.txt, corpus.txt, utility.txt.
void write_benchmark(const Benchmark& bench, const std::filesystem::path& dir);
Benchmark read_benchmark(const std::filesystem::path& dir);

}  // namespace cae::corpus
