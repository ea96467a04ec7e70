#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "manualqa/corpus.hpp"
#include "manualqa/encoder.hpp"
#include "manualqa/qa_record.hpp"
#include "manualqa/retrieval.hpp"

namespace manualqa {

enum class ArMode { kSentence, kToken };
enum class TrainMode { kMtl, kSqp };

std::string to_string(ArMode mode);
ArMode ar_mode_from_string(std::string_view name);

// Binary classifier on a hidden state: logits = x * w + b.
struct ClassifierHead {
    Tensor w;  // d x 2
    Tensor b;  // 2

    ClassifierHead() = default;
    ClassifierHead(std::string name, std::size_t hidden_dim, Rng& rng);
    void zero_grad();
    void sgd_step(double lr);
};

// Shared encoder with the section-retrieval head and the two answer-retrieval
// heads (sentence-level and token-level) reading its pooled/token states.
struct MTLModel {
    LayeredEncoder encoder;
    Vocabulary vocab;
    ClassifierHead sr_head;
    ClassifierHead ar_sent_head;
    ClassifierHead ar_token_head;

    MTLModel(const LayeredEncoder& pretrained, const Vocabulary& vocabulary,
             std::uint64_t head_seed);
};

void save_mtl_model(const std::string& dir, const MTLModel& model);
MTLModel load_mtl_model(const std::string& dir);

// [bos] question [sep] text [sep], tail-truncated to max_len; text_begin /
// text_end delimit the text's token positions after truncation.
struct PackedPair {
    std::vector<int> ids;
    std::size_t text_begin = 0;
    std::size_t text_end = 0;
};

PackedPair pack_pair(const Vocabulary& vocab, std::string_view question,
                     std::string_view text, std::size_t max_len);

// Top-K retrieved sections for the record's question; when `inject_gold` is
// set and retrieval missed the gold section it is appended (at most K+1
// candidates). Throws when the gold section id is unknown to the manual.
std::vector<Section> build_candidates(const QARecord& record, const Manual& manual,
                                      const RetrievalIndex& index, std::size_t k,
                                      bool inject_gold);

struct Targets {
    std::vector<int> sr_labels;               // per candidate, exactly one 1 when gold present
    std::vector<std::vector<int>> ar_labels;  // per candidate: per sentence / per token
};

// Sentence mode labels gold-section sentences listed in the record; token
// mode labels every token of those sentences. Throws when the gold section is
// not among the candidates.
Targets build_targets(std::span<const Section> candidates, const QARecord& record, ArMode mode);

struct StepLosses {
    double l_sr = 0.0;
    double l_ar = 0.0;
    double l_mt = 0.0;
};

// One multi-task step over a question and its candidates: cross-entropy for
// the SR branch over (question, section) pairs and for the AR branch over
// (question, sentence) pairs (sentence mode) or all section tokens (token
// mode); l_mt is their average. With `grad_scale` > 0 the gradients of
// grad_scale * (weight_sr * L_SR + weight_ar * L_AR) are accumulated into the
// model; the plain multi-task gradient uses weight 1/2 on both branches.
StepLosses mtl_step(MTLModel& model, const std::string& question,
                    std::span<const Section> candidates, const Targets& targets, ArMode mode,
                    double grad_scale = 0.0, double weight_sr = 0.5, double weight_ar = 0.5);

struct RetrievalContext {
    std::unordered_map<std::string, const Manual*> manuals;
    std::unordered_map<std::string, const RetrievalIndex*> indexes;

    const Manual& manual_for(const std::string& manual_id) const;
    const RetrievalIndex& index_for(const std::string& manual_id) const;
};

struct TrainConfig {
    TrainMode mode = TrainMode::kMtl;
    ArMode ar_mode = ArMode::kSentence;
    std::size_t k = 10;
    std::size_t batch_size = 32;
    std::size_t patience = 5;
    std::size_t max_epochs = 200;
    double lr = 0.08;
    double threshold = 0.5;
    std::uint64_t seed = 0;
};

struct TrainStats {
    std::size_t epochs_run = 0;
    double best_val_loss = 0.0;
    std::vector<StepLosses> step_losses;  // one entry per optimizer step
};

// Minibatch training on the averaged multi-task loss with early stopping on
// the validation loss (patience = allowed non-improving checks); restores the
// best-validation parameters before returning. Deterministic per cfg.seed.
TrainStats train_mtl(MTLModel& model, std::span<const QARecord> train,
                     std::span<const QARecord> validation, const RetrievalContext& ctx,
                     const TrainConfig& cfg);

// The sequential ablation: SR and AR trained separately, each on its own
// encoder copy initialized from the same pretrained weights.
struct SqpModels {
    MTLModel sr;
    MTLModel ar;
};

SqpModels train_sqp(const LayeredEncoder& pretrained, const Vocabulary& vocab,
                    std::span<const QARecord> train, std::span<const QARecord> validation,
                    const RetrievalContext& ctx, const TrainConfig& cfg,
                    TrainStats* sr_stats = nullptr, TrainStats* ar_stats = nullptr);

// --- inference ---------------------------------------------------------------

struct InferenceResult {
    std::string predicted_section_id;
    std::vector<std::pair<std::string, double>> sr_scores;  // per candidate
    std::vector<std::size_t> selected_units;  // sentence indices / token indices
    std::string answer_text;
    ArMode mode = ArMode::kSentence;
};

// Pluggable scoring for the two supervised stages; lets tests drive the
// selection/assembly path with oracle heads.
struct InferenceHooks {
    std::function<double(const std::string& question, const Section&)> sr_score;
    std::function<std::vector<double>(const std::string& question, const Section&)> ar_unit_probs;
};

// Unsupervised top-K -> SR argmax (ties to the lower section id) -> AR unit
// probabilities thresholded at `threshold`; when nothing passes, the single
// most probable unit is kept. Answer text assembles the selected units in
// document order.
InferenceResult infer_with(const InferenceHooks& hooks, const std::string& question,
                           const Manual& manual, const RetrievalIndex& index, std::size_t k,
                           ArMode mode, double threshold);

InferenceResult infer(const std::string& question, const Manual& manual,
                      const RetrievalIndex& index, const MTLModel& sr_model,
                      const MTLModel& ar_model, std::size_t k, ArMode mode, double threshold);

// Model-backed stage scores, shared by infer() and the evaluation harness.
double sr_positive_prob(const MTLModel& model, const std::string& question,
                        const Section& section);
std::vector<double> ar_sentence_probs(const MTLModel& model, const std::string& question,
                                      const Section& section);
std::vector<double> ar_token_probs(const MTLModel& model, const std::string& question,
                                   const Section& section);

// --- question paraphrase detection -------------------------------------------

struct ParaphrasePair {
    std::string q1;
    std::string q2;
    int label = 0;
};

struct ParaphraseDetector {
    LayeredEncoder encoder;
    Vocabulary vocab;
    ClassifierHead head;

    ParaphraseDetector(const LayeredEncoder& pretrained, const Vocabulary& vocabulary,
                       std::uint64_t head_seed);
};

void train_paraphrase_detector(ParaphraseDetector& detector,
                               std::span<const ParaphrasePair> pairs, std::size_t epochs,
                               double lr, std::uint64_t seed);

// (label, positive-class probability); label 1 iff probability >= 0.5.
// Throws on an empty question.
std::pair<int, double> paraphrase_detect(const ParaphraseDetector& detector,
                                         const std::string& q1, const std::string& q2);

}  // namespace manualqa
