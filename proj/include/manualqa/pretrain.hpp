#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "manualqa/encoder.hpp"
#include "manualqa/rng.hpp"

namespace manualqa {

enum class PretrainStrategy { kSlr, kLrd, kEwc, kEwcLrd };

std::string to_string(PretrainStrategy strategy);
PretrainStrategy pretrain_strategy_from_string(std::string_view name);

enum class LrdMode { kGeometric, kLinear };

struct PretrainConfig {
    PretrainStrategy strategy = PretrainStrategy::kSlr;
    double slr_lr = 5e-5;
    double lrd_head_lr = 5e-4;
    double lrd_factor = 2.6;
    LrdMode lrd_mode = LrdMode::kGeometric;
    double mask_prob = 0.15;
    std::size_t batch_size = 64;
    std::size_t epochs = 1;
    double ewc_lambda = 0.1;
    std::size_t fisher_samples = 8;
    std::uint64_t seed = 0;
};

// One masked sequence: inputs with replacements applied, the selected
// positions, and the original ids at those positions.
struct MaskedBatch {
    std::vector<int> input_ids;
    std::vector<std::size_t> mask_positions;
    std::vector<int> original_ids;
};

// Independently selects each non-special position with probability p, then
// applies the 80% [mask] / 10% random token / 10% unchanged replacement rule.
MaskedBatch mlm_mask(std::span<const int> token_ids, double p, Rng& rng,
                     std::size_t vocab_size);

// Mean cross-entropy of the lm head at the masked positions; 0 when nothing
// is masked.
double mlm_loss(const LayeredEncoder& model, const MaskedBatch& batch);

// Same value, and accumulates parameter gradients.
double mlm_loss_backward(LayeredEncoder& model, const MaskedBatch& batch);

// Minibatch variant: cross-entropy averaged over all masked positions of all
// sequences in the minibatch.
double mlm_minibatch_loss_backward(LayeredEncoder& model, std::span<const MaskedBatch> batch);

// Per-layer rates, outermost (lm head) first: rate[0] = head_lr, then each
// divided by `factor` (geometric mode) or interpolated linearly between the
// same endpoints (linear mode).
std::vector<double> layer_lr_schedule(std::size_t n_layers, double head_lr, double factor,
                                      LrdMode mode = LrdMode::kGeometric);

// Diagonal importance estimate aligned with LayeredEncoder::flat_parameters,
// plus the anchor parameters it was taken at.
struct FisherDiagonal {
    std::vector<double> values;
    std::vector<double> anchor;
};

// F_i = mean over n sampled anchor batches of the squared MLM-loss gradient,
// evaluated at the model's current parameters (which become the anchor).
FisherDiagonal estimate_fisher(LayeredEncoder& model,
                               std::span<const std::vector<int>> anchor_batches, std::size_t n,
                               Rng& rng, double mask_prob = 0.15);

// (lambda/2) * sum_i F_i (theta_i - anchor_i)^2
double ewc_penalty(const LayeredEncoder& model, const FisherDiagonal& fisher, double lambda);

// Adds lambda * F_i (theta_i - anchor_i) to each parameter gradient and
// returns the penalty value.
double ewc_penalty_backward(LayeredEncoder& model, const FisherDiagonal& fisher, double lambda);

struct PretrainStats {
    std::size_t steps = 0;
    double first_batch_loss = 0.0;
    double last_batch_loss = 0.0;
};

// Minibatch gradient descent on the MLM objective (plus the consolidation
// penalty for the EWC strategies), per-layer rates under LRD, in place.
// `anchor_sequences` supplies the generic-domain sample for the Fisher
// estimate; when empty the corpus itself is used. Deterministic per seed.
// Throws on an empty corpus or a non-finite loss (naming the step).
PretrainStats pretrain(LayeredEncoder& model, std::span<const std::vector<int>> corpus_sequences,
                       const PretrainConfig& cfg,
                       std::span<const std::vector<int>> anchor_sequences = {});

// Sentence stream -> bos/sep-wrapped, max_len-truncated id sequences.
std::vector<std::vector<int>> prepare_sequences(std::span<const std::string> sentences,
                                                const Vocabulary& vocab, std::size_t max_len);

}  // namespace manualqa
