#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "manualqa/corpus.hpp"
#include "manualqa/embedding.hpp"

namespace manualqa {

// Lowercase word tokens: split on non-alphanumeric runs, empties dropped.
std::vector<std::string> tokenize(std::string_view text);

enum class RetrievalMethod { kTfIdf, kJaccard, kCountVec, kAvgEmbedding };

std::string to_string(RetrievalMethod method);
RetrievalMethod retrieval_method_from_string(std::string_view name);

// Produces up to m likely questions answerable by a section. The default
// implementation expands templates over the section title and its highest
// tf-idf term; a learned generator can be plugged in behind this interface.
class QuestionGenerator {
public:
    virtual ~QuestionGenerator() = default;
    virtual std::vector<std::string> generate(const Section& section, std::size_t m) const = 0;
};

class TemplateQuestionGenerator final : public QuestionGenerator {
public:
    TemplateQuestionGenerator() = default;
    // idf weights sharpen the "top term" pick; without them raw counts decide.
    explicit TemplateQuestionGenerator(std::unordered_map<std::string, double> idf)
        : idf_(std::move(idf)) {}

    std::vector<std::string> generate(const Section& section, std::size_t m) const override;

    // idf map over a section collection, matching the index's smoothed formula.
    static std::unordered_map<std::string, double> idf_over(std::span<const Section> sections);

private:
    std::unordered_map<std::string, double> idf_;
};

struct ExpansionConfig {
    const QuestionGenerator* generator = nullptr;
    std::size_t questions_per_section = 3;
};

// Section text plus generated questions, space-joined.
std::string expand_section(const Section& section, const QuestionGenerator& generator,
                           std::size_t m);

struct SparseVector {
    // sorted by token id
    std::vector<std::pair<std::uint32_t, double>> entries;
};

struct RetrievalIndex {
    RetrievalMethod method = RetrievalMethod::kTfIdf;
    bool expanded = false;
    std::size_t k_default = 10;

    std::unordered_map<std::string, std::uint32_t> vocabulary;
    std::vector<std::string> vocab_tokens;    // id -> token
    std::vector<double> idf;                  // tfidf only, size == vocabulary
    std::vector<std::string> section_ids;
    std::vector<SparseVector> sparse_vectors; // tfidf (L2-normalized) / countvec / jaccard
    std::vector<std::vector<double>> dense_vectors;  // avg_embedding
    std::size_t embedding_dim = 0;
    EmbeddingTable embeddings;                // retained for query-side avg_embedding

    bool has_section(std::string_view section_id) const;
};

struct RankedEntry {
    std::string section_id;
    double score = 0.0;
};

// Descending score; ties broken by ascending section_id.
struct RankedList {
    std::vector<RankedEntry> entries;
};

RetrievalIndex build_index(std::span<const Section> sections, RetrievalMethod method,
                           const EmbeddingTable* embeddings = nullptr,
                           const ExpansionConfig* expansion = nullptr,
                           std::size_t k_default = 10);

std::unordered_map<std::string, double> score(const std::string& question,
                                              const RetrievalIndex& index);

RankedList top_k(const std::string& question, const RetrievalIndex& index, std::size_t k);

// Rank (1-based) of a section in the full ranking for a question.
std::size_t rank_of(const std::string& question, const RetrievalIndex& index,
                    std::string_view section_id);

struct QARecordRef {
    std::string qid;
    std::string question;
    std::string gold_section_id;
};

// Fraction of records whose gold section appears in the top K, for each K.
// Throws when a gold section is missing from the index, naming the record.
std::unordered_map<std::size_t, double> hits_at_k(std::span<const QARecordRef> records,
                                                  const RetrievalIndex& index,
                                                  std::span<const std::size_t> ks);

// Two-file persistence: <dir>/index.json manifest + <dir>/vectors.bin.
// Binary layout (little-endian):
//   magic  "MQAIDX1\0"
//   u32 method, u32 flags (bit0 = expanded), u32 vocab_size, u32 n_sections
//   u64 idf_count,  idf_count * f64
//   per section, in manifest order:
//     sparse:  u64 nnz, nnz * (u32 token_id, f64 weight)
//     dense:   u64 dim, dim * f64
//   u64 n_embedding_tokens, per token: u32 len, bytes, dim * f64
void save_index(const std::string& dir, const RetrievalIndex& index);
RetrievalIndex load_index(const std::string& dir);

}  // namespace manualqa
