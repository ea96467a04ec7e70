#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "manualqa/embedding.hpp"
#include "manualqa/qa_record.hpp"

namespace manualqa {

class LayeredEncoder;
class Vocabulary;

// --- answer-string metrics -----------------------------------------------

// Lowercase, punctuation replaced by spaces, whitespace collapsed, trimmed.
std::string normalize_answer(std::string_view text);

// 1 iff the normalized strings are identical.
int exact_match(std::string_view pred, std::string_view ref);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

struct RougeL {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// LCS-based precision/recall/F1 over tokenized strings; all zero when either
// side has no tokens.
RougeL rouge_l(std::string_view pred, std::string_view ref);

// --- mover similarity ------------------------------------------------------

struct BagPoint {
    std::vector<double> embedding;
    double mass = 0.0;
};

// Normalized point mass distribution; masses positive and sum to 1.
struct Bag {
    std::vector<BagPoint> points;
    std::size_t dimension() const { return points.empty() ? 0 : points[0].embedding.size(); }
};

// One point per distinct in-vocabulary word (mass from its count in the text)
// plus one point per sentence (embedding = mean of its in-vocabulary word
// vectors, mass from its in-vocabulary token count); jointly normalized.
// Throws when the text has no in-vocabulary token.
Bag build_swms_bag(std::string_view text, const EmbeddingTable& embeddings);

// Exact balanced-transport distance between two normalized bags with
// Euclidean ground cost (successive shortest augmenting paths).
double emd(const Bag& a, const Bag& b);

// exp(-emd) over the two texts' bags; 1 for identical texts.
double swms(std::string_view pred, std::string_view ref, const EmbeddingTable& embeddings);

// --- evaluation reports ----------------------------------------------------

struct MetricScores {
    double em = 0.0;
    double rouge_p = 0.0;
    double rouge_r = 0.0;
    double rouge_f1 = 0.0;
    double swms = 0.0;
};

struct MetricRow {
    std::string qid;
    std::vector<MetricScores> per_reference;  // aligned with MetricReport::reference_names
};

struct MetricReport {
    std::string model_id;
    std::size_t k = 0;
    std::string mode;
    std::uint64_t seed = 0;
    std::vector<std::string> reference_names;  // "gold" first, then extra references
    std::vector<MetricRow> rows;
    std::vector<MetricScores> aggregates;  // means over rows, per reference set
};

// Scores each prediction against the record's gold answer and, where present,
// its extra references. Predictions missing a qid are scored as empty answers.
// Without an embedding table S+WMS is reported as 0; texts with no
// in-vocabulary token also score 0 there.
MetricReport evaluate_predictions(std::span<const QARecord> records,
                                  const std::unordered_map<std::string, std::string>& predictions,
                                  const EmbeddingTable* embeddings,
                                  std::string model_id = "", std::size_t k = 0,
                                  std::string mode = "", std::uint64_t seed = 0);

std::string metric_report_csv(const MetricReport& report);
std::string metric_report_markdown(const MetricReport& report);

// --- embedding-space inspection ---------------------------------------------

// For each row of `points` (n x dim, row-major): the indices of its k
// closest other rows by cosine distance, ties broken by ascending index.
std::vector<std::vector<std::size_t>> neighbor_ranking(std::span<const double> points,
                                                       std::size_t n, std::size_t dim,
                                                       std::size_t k);

// Represents each word by its final hidden state averaged over occurrences in
// the probe sentences (a lone-word probe when it never occurs), reduces the
// word set to 3 dimensions with PCA, and ranks neighbors by cosine distance
// in that space. Throws when k >= words.size() or a word is out of vocabulary.
std::vector<std::pair<std::string, std::vector<std::string>>> nearest_neighbors(
    std::span<const std::string> words, const LayeredEncoder& encoder,
    const Vocabulary& vocab, std::span<const std::string> probe_sentences, std::size_t k);

}  // namespace manualqa
