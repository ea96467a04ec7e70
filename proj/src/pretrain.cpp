#include "manualqa/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace manualqa {

namespace {

constexpr std::uint64_t kFisherStreamSalt = 0x9E3779B97F4A7C15ULL;

struct SoftmaxCe {
    double loss = 0.0;
    std::vector<double> d_logits;  // softmax(logits) - onehot(target)
};

SoftmaxCe softmax_cross_entropy(std::span<const double> logits, int target) {
    SoftmaxCe out;
    out.d_logits.resize(logits.size());
    double max_logit = -1e300;
    for (double l : logits) max_logit = std::max(max_logit, l);
    double denom = 0.0;
    for (std::size_t t = 0; t < logits.size(); ++t) {
        out.d_logits[t] = std::exp(logits[t] - max_logit);
        denom += out.d_logits[t];
    }
    for (double& p : out.d_logits) p /= denom;
    out.loss = std::log(denom) - (logits[static_cast<std::size_t>(target)] - max_logit);
    out.d_logits[static_cast<std::size_t>(target)] -= 1.0;
    return out;
}

double masked_ce_backward(LayeredEncoder& model, const MaskedBatch& batch, double inv_total,
                          bool with_grad) {
    LayeredEncoder::Workspace ws;
    model.forward(batch.input_ids, ws);
    const std::size_t v = model.config().vocab_size;
    const auto logits = model.lm_logits(ws, batch.mask_positions);

    double loss = 0.0;
    std::vector<double> d_logits(with_grad ? logits.size() : 0, 0.0);
    for (std::size_t r = 0; r < batch.mask_positions.size(); ++r) {
        const auto ce = softmax_cross_entropy({logits.data() + r * v, v}, batch.original_ids[r]);
        loss += ce.loss * inv_total;
        if (with_grad) {
            for (std::size_t t = 0; t < v; ++t) d_logits[r * v + t] = ce.d_logits[t] * inv_total;
        }
    }
    if (with_grad && !batch.mask_positions.empty()) {
        std::vector<double> d_final(ws.n * model.config().hidden_dim, 0.0);
        model.lm_backward(ws, batch.mask_positions, d_logits, d_final);
        model.backward(ws, d_final);
    }
    return loss;
}

}  // namespace

std::string to_string(PretrainStrategy strategy) {
    switch (strategy) {
        case PretrainStrategy::kSlr: return "SLR";
        case PretrainStrategy::kLrd: return "LRD";
        case PretrainStrategy::kEwc: return "EWC";
        case PretrainStrategy::kEwcLrd: return "EWC_LRD";
    }
    return "SLR";
}

PretrainStrategy pretrain_strategy_from_string(std::string_view name) {
    if (name == "SLR" || name == "slr") return PretrainStrategy::kSlr;
    if (name == "LRD" || name == "lrd") return PretrainStrategy::kLrd;
    if (name == "EWC" || name == "ewc") return PretrainStrategy::kEwc;
    if (name == "EWC_LRD" || name == "ewc_lrd" || name == "EWC+LRD") {
        return PretrainStrategy::kEwcLrd;
    }
    throw std::invalid_argument("unknown pretrain strategy: " + std::string(name));
}

MaskedBatch mlm_mask(std::span<const int> token_ids, double p, Rng& rng,
                     std::size_t vocab_size) {
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("mlm_mask: p outside [0, 1]");
    MaskedBatch batch;
    batch.input_ids.assign(token_ids.begin(), token_ids.end());
    for (std::size_t i = 0; i < batch.input_ids.size(); ++i) {
        const int id = batch.input_ids[i];
        if (id < Vocabulary::kNumSpecial) continue;  // specials are never masked
        if (rng.uniform() >= p) continue;
        batch.mask_positions.push_back(i);
        batch.original_ids.push_back(id);
        const double r = rng.uniform();
        if (r < 0.8) {
            batch.input_ids[i] = Vocabulary::kMask;
        } else if (r < 0.9 && vocab_size > Vocabulary::kNumSpecial) {
            batch.input_ids[i] = Vocabulary::kNumSpecial +
                                 static_cast<int>(rng.uniform_int(
                                     vocab_size - Vocabulary::kNumSpecial));
        }
        // else: keep the original token
    }
    return batch;
}

double mlm_loss(const LayeredEncoder& model, const MaskedBatch& batch) {
    if (batch.mask_positions.empty()) return 0.0;
    LayeredEncoder::Workspace ws;
    model.forward(batch.input_ids, ws);
    const std::size_t v = model.config().vocab_size;
    const auto logits = model.lm_logits(ws, batch.mask_positions);
    double loss = 0.0;
    for (std::size_t r = 0; r < batch.mask_positions.size(); ++r) {
        loss += softmax_cross_entropy({logits.data() + r * v, v}, batch.original_ids[r]).loss;
    }
    return loss / static_cast<double>(batch.mask_positions.size());
}

double mlm_loss_backward(LayeredEncoder& model, const MaskedBatch& batch) {
    if (batch.mask_positions.empty()) return 0.0;
    return masked_ce_backward(model, batch,
                              1.0 / static_cast<double>(batch.mask_positions.size()), true);
}

double mlm_minibatch_loss_backward(LayeredEncoder& model, std::span<const MaskedBatch> batch) {
    std::size_t total = 0;
    for (const MaskedBatch& b : batch) total += b.mask_positions.size();
    if (total == 0) return 0.0;
    const double inv_total = 1.0 / static_cast<double>(total);
    double loss = 0.0;
    for (const MaskedBatch& b : batch) {
        if (b.mask_positions.empty()) continue;
        loss += masked_ce_backward(model, b, inv_total, true);
    }
    return loss;
}

std::vector<double> layer_lr_schedule(std::size_t n_layers, double head_lr, double factor,
                                      LrdMode mode) {
    if (n_layers == 0) throw std::invalid_argument("layer_lr_schedule: need at least 1 layer");
    if (factor < 1.0) throw std::invalid_argument("layer_lr_schedule: factor must be >= 1");
    if (head_lr <= 0.0) throw std::invalid_argument("layer_lr_schedule: head_lr must be > 0");

    std::vector<double> rates(n_layers);
    rates[0] = head_lr;
    if (mode == LrdMode::kGeometric) {
        for (std::size_t i = 1; i < n_layers; ++i) rates[i] = rates[i - 1] / factor;
    } else {
        // same endpoints as the geometric schedule, evenly spaced in between
        const double tail = head_lr / std::pow(factor, static_cast<double>(n_layers - 1));
        for (std::size_t i = 1; i < n_layers; ++i) {
            const double t = static_cast<double>(i) / static_cast<double>(n_layers - 1);
            rates[i] = head_lr + (tail - head_lr) * t;
        }
    }
    return rates;
}

FisherDiagonal estimate_fisher(LayeredEncoder& model,
                               std::span<const std::vector<int>> anchor_batches, std::size_t n,
                               Rng& rng, double mask_prob) {
    if (anchor_batches.empty()) throw std::invalid_argument("estimate_fisher: no anchor data");
    if (n == 0) throw std::invalid_argument("estimate_fisher: need at least 1 sample");

    FisherDiagonal fisher;
    fisher.anchor = model.flat_parameters();
    fisher.values.assign(fisher.anchor.size(), 0.0);

    for (std::size_t s = 0; s < n; ++s) {
        const auto& ids = anchor_batches[rng.uniform_int(anchor_batches.size())];
        const MaskedBatch batch =
            mlm_mask(ids, mask_prob, rng, model.config().vocab_size);
        model.zero_grad();
        mlm_loss_backward(model, batch);
        const auto grads = model.flat_gradients();
        for (std::size_t i = 0; i < grads.size(); ++i) fisher.values[i] += grads[i] * grads[i];
    }
    model.zero_grad();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (double& f : fisher.values) f *= inv_n;
    return fisher;
}

double ewc_penalty(const LayeredEncoder& model, const FisherDiagonal& fisher, double lambda) {
    const auto params = model.flat_parameters();
    if (fisher.values.size() != params.size() || fisher.anchor.size() != params.size()) {
        throw std::invalid_argument("ewc_penalty: fisher shape does not match the model");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double diff = params[i] - fisher.anchor[i];
        sum += fisher.values[i] * diff * diff;
    }
    return 0.5 * lambda * sum;
}

double ewc_penalty_backward(LayeredEncoder& model, const FisherDiagonal& fisher, double lambda) {
    if (fisher.values.size() != model.parameter_count()) {
        throw std::invalid_argument("ewc_penalty_backward: fisher shape does not match the model");
    }
    double sum = 0.0;
    std::size_t offset = 0;
    model.for_each_tensor([&](Tensor& t) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double diff = t.values[i] - fisher.anchor[offset + i];
            const double f = fisher.values[offset + i];
            sum += f * diff * diff;
            t.grad[i] += lambda * f * diff;
        }
        offset += t.size();
    });
    return 0.5 * lambda * sum;
}

PretrainStats pretrain(LayeredEncoder& model, std::span<const std::vector<int>> corpus_sequences,
                       const PretrainConfig& cfg,
                       std::span<const std::vector<int>> anchor_sequences) {
    if (corpus_sequences.empty()) throw std::invalid_argument("pretrain: empty corpus");
    if (cfg.batch_size == 0) throw std::invalid_argument("pretrain: batch_size must be >= 1");
    if (cfg.mask_prob <= 0.0 || cfg.mask_prob >= 1.0) {
        throw std::invalid_argument("pretrain: mask_prob must lie in (0, 1)");
    }
    if (cfg.ewc_lambda < 0.0) throw std::invalid_argument("pretrain: ewc_lambda must be >= 0");

    const bool use_ewc =
        cfg.strategy == PretrainStrategy::kEwc || cfg.strategy == PretrainStrategy::kEwcLrd;
    const bool use_lrd =
        cfg.strategy == PretrainStrategy::kLrd || cfg.strategy == PretrainStrategy::kEwcLrd;

    Rng rng_train(cfg.seed);
    FisherDiagonal fisher;
    if (use_ewc) {
        // separate stream so the training draws line up with the non-EWC runs
        Rng rng_fisher(cfg.seed ^ kFisherStreamSalt);
        const auto anchor = anchor_sequences.empty() ? corpus_sequences : anchor_sequences;
        fisher = estimate_fisher(model, anchor, std::max<std::size_t>(cfg.fisher_samples, 1),
                                 rng_fisher, cfg.mask_prob);
    }

    // layers run innermost-first, the schedule outermost-first
    const std::size_t n_layers = model.n_layers();
    std::vector<double> layer_rates(n_layers, cfg.slr_lr);
    if (use_lrd) {
        if (cfg.lrd_factor <= 1.0) {
            throw std::invalid_argument("pretrain: lrd_factor must exceed 1");
        }
        const auto schedule =
            layer_lr_schedule(n_layers, cfg.lrd_head_lr, cfg.lrd_factor, cfg.lrd_mode);
        for (std::size_t li = 0; li < n_layers; ++li) {
            layer_rates[li] = schedule[n_layers - 1 - li];
        }
    }

    std::vector<std::size_t> order(corpus_sequences.size());
    std::iota(order.begin(), order.end(), 0);

    PretrainStats stats;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng_train.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<MaskedBatch> minibatch;
            minibatch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) {
                minibatch.push_back(mlm_mask(corpus_sequences[order[i]], cfg.mask_prob,
                                             rng_train, model.config().vocab_size));
            }

            model.zero_grad();
            double loss = mlm_minibatch_loss_backward(model, minibatch);
            if (use_ewc) loss += ewc_penalty_backward(model, fisher, cfg.ewc_lambda);
            if (!std::isfinite(loss)) {
                throw std::runtime_error("pretrain: non-finite loss at step " +
                                         std::to_string(stats.steps + 1));
            }

            auto& layers = model.layers();
            for (std::size_t li = 0; li < layers.size(); ++li) {
                const double lr = layer_rates[li];
                for (Tensor& t : layers[li].tensors) {
                    for (std::size_t i = 0; i < t.size(); ++i) t.values[i] -= lr * t.grad[i];
                }
            }

            if (stats.steps == 0) stats.first_batch_loss = loss;
            stats.last_batch_loss = loss;
            ++stats.steps;
        }
    }
    return stats;
}

std::vector<std::vector<int>> prepare_sequences(std::span<const std::string> sentences,
                                                const Vocabulary& vocab, std::size_t max_len) {
    std::vector<std::vector<int>> sequences;
    for (const auto& sentence : sentences) {
        auto ids = vocab.encode(sentence);
        if (ids.empty()) continue;
        std::vector<int> seq;
        seq.reserve(ids.size() + 2);
        seq.push_back(Vocabulary::kBos);
        seq.insert(seq.end(), ids.begin(), ids.end());
        seq.push_back(Vocabulary::kSep);
        if (seq.size() > max_len) seq.resize(max_len);
        sequences.push_back(std::move(seq));
    }
    return sequences;
}

}  // namespace manualqa
