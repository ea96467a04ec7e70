#include "manualqa/mtl.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "manualqa/detail/binio.hpp"

namespace manualqa {

namespace {

struct Ce2 {
    double loss = 0.0;
    double d0 = 0.0;  // dloss/dlogit0
    double d1 = 0.0;
};

// two-way softmax cross-entropy with the positive class at index 1
Ce2 cross_entropy2(double logit0, double logit1, int label) {
    Ce2 out;
    const double m = std::max(logit0, logit1);
    const double e0 = std::exp(logit0 - m);
    const double e1 = std::exp(logit1 - m);
    const double denom = e0 + e1;
    const double p0 = e0 / denom;
    const double p1 = e1 / denom;
    out.loss = -std::log(label == 1 ? p1 : p0);
    out.d0 = p0 - (label == 0 ? 1.0 : 0.0);
    out.d1 = p1 - (label == 1 ? 1.0 : 0.0);
    return out;
}

double positive_prob(double logit0, double logit1) {
    const double m = std::max(logit0, logit1);
    const double e0 = std::exp(logit0 - m);
    const double e1 = std::exp(logit1 - m);
    return e1 / (e0 + e1);
}

void head_logits(const ClassifierHead& head, const double* x, std::size_t d, double& l0,
                 double& l1) {
    l0 = head.b.values[0];
    l1 = head.b.values[1];
    for (std::size_t c = 0; c < d; ++c) {
        l0 += x[c] * head.w.values[c * 2];
        l1 += x[c] * head.w.values[c * 2 + 1];
    }
}

// accumulates head gradients and adds dloss/dx into d_x
void head_backward(ClassifierHead& head, const double* x, std::size_t d, double d0, double d1,
                   double* d_x) {
    head.b.grad[0] += d0;
    head.b.grad[1] += d1;
    for (std::size_t c = 0; c < d; ++c) {
        head.w.grad[c * 2] += x[c] * d0;
        head.w.grad[c * 2 + 1] += x[c] * d1;
        d_x[c] += d0 * head.w.values[c * 2] + d1 * head.w.values[c * 2 + 1];
    }
}

// section tokens in document order plus per-sentence token counts
std::vector<std::string> section_tokens(const Section& section,
                                        std::vector<std::size_t>* per_sentence = nullptr) {
    std::vector<std::string> tokens;
    for (const Sentence& s : section.sentences) {
        auto ts = tokenize(s.text);
        if (per_sentence != nullptr) per_sentence->push_back(ts.size());
        for (auto& t : ts) tokens.push_back(std::move(t));
    }
    return tokens;
}

double mean_or_zero(double sum, std::size_t count) {
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

}  // namespace

std::string to_string(ArMode mode) {
    return mode == ArMode::kSentence ? "sentence" : "token";
}

ArMode ar_mode_from_string(std::string_view name) {
    if (name == "sentence") return ArMode::kSentence;
    if (name == "token") return ArMode::kToken;
    throw std::invalid_argument("unknown answer-retrieval mode: " + std::string(name));
}

ClassifierHead::ClassifierHead(std::string name, std::size_t hidden_dim, Rng& rng)
    : w(name + ".w", hidden_dim, 2), b(name + ".b", 2, 1) {
    for (double& x : w.values) x = 0.02 * rng.normal();
}

void ClassifierHead::zero_grad() {
    std::fill(w.grad.begin(), w.grad.end(), 0.0);
    std::fill(b.grad.begin(), b.grad.end(), 0.0);
}

void ClassifierHead::sgd_step(double lr) {
    for (std::size_t i = 0; i < w.size(); ++i) w.values[i] -= lr * w.grad[i];
    for (std::size_t i = 0; i < b.size(); ++i) b.values[i] -= lr * b.grad[i];
}

MTLModel::MTLModel(const LayeredEncoder& pretrained, const Vocabulary& vocabulary,
                   std::uint64_t head_seed)
    : encoder(pretrained), vocab(vocabulary) {
    Rng rng(head_seed);
    const std::size_t d = encoder.config().hidden_dim;
    sr_head = ClassifierHead("sr_head", d, rng);
    ar_sent_head = ClassifierHead("ar_sent_head", d, rng);
    ar_token_head = ClassifierHead("ar_token_head", d, rng);
}

void save_mtl_model(const std::string& dir, const MTLModel& model) {
    std::filesystem::create_directories(dir);
    CheckpointMeta meta;
    meta.strategy = "finetuned";
    save_checkpoint(dir + "/encoder", model.encoder, model.vocab, meta);
    std::ofstream bin(dir + "/heads.bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot write model heads in " + dir);
    for (const ClassifierHead* head : {&model.sr_head, &model.ar_sent_head, &model.ar_token_head}) {
        for (const Tensor* t : {&head->w, &head->b}) {
            detail::put_u64(bin, t->size());
            for (double x : t->values) detail::put_f64(bin, x);
        }
    }
}

MTLModel load_mtl_model(const std::string& dir) {
    Checkpoint ckpt = load_checkpoint(dir + "/encoder");
    MTLModel model(ckpt.encoder, ckpt.vocab, 0);
    std::ifstream bin(dir + "/heads.bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open model heads in " + dir);
    for (ClassifierHead* head : {&model.sr_head, &model.ar_sent_head, &model.ar_token_head}) {
        for (Tensor* t : {&head->w, &head->b}) {
            const std::uint64_t count = detail::get_u64(bin);
            if (count != t->size()) {
                throw std::runtime_error("model head shape mismatch in " + dir);
            }
            for (double& x : t->values) x = detail::get_f64(bin);
        }
    }
    if (!bin) throw std::runtime_error("truncated model heads in " + dir);
    return model;
}

PackedPair pack_pair(const Vocabulary& vocab, std::string_view question, std::string_view text,
                     std::size_t max_len) {
    PackedPair packed;
    const auto q_ids = vocab.encode(question);
    const auto t_ids = vocab.encode(text);
    packed.ids.reserve(q_ids.size() + t_ids.size() + 3);
    packed.ids.push_back(Vocabulary::kBos);
    packed.ids.insert(packed.ids.end(), q_ids.begin(), q_ids.end());
    packed.ids.push_back(Vocabulary::kSep);
    packed.text_begin = packed.ids.size();
    packed.ids.insert(packed.ids.end(), t_ids.begin(), t_ids.end());
    packed.text_end = packed.ids.size();
    packed.ids.push_back(Vocabulary::kSep);
    if (packed.ids.size() > max_len) {
        packed.ids.resize(max_len);
        packed.text_begin = std::min(packed.text_begin, max_len);
        packed.text_end = std::min(packed.text_end, max_len);
    }
    return packed;
}

std::vector<Section> build_candidates(const QARecord& record, const Manual& manual,
                                      const RetrievalIndex& index, std::size_t k,
                                      bool inject_gold) {
    if (index.section_ids.empty()) throw std::invalid_argument("build_candidates: empty index");
    const RankedList ranked = top_k(record.question, index, k);

    std::vector<Section> candidates;
    candidates.reserve(ranked.entries.size() + 1);
    bool gold_present = false;
    for (const RankedEntry& entry : ranked.entries) {
        const Section* section = manual.find_section(entry.section_id);
        if (section == nullptr) {
            throw std::runtime_error("build_candidates: index section '" + entry.section_id +
                                     "' missing from manual '" + manual.manual_id + "'");
        }
        if (entry.section_id == record.gold_section_id) gold_present = true;
        candidates.push_back(*section);
    }
    if (inject_gold && !gold_present) {
        const Section* gold = manual.find_section(record.gold_section_id);
        if (gold == nullptr) {
            throw std::runtime_error("build_candidates: gold section '" +
                                     record.gold_section_id + "' missing from manual '" +
                                     manual.manual_id + "' (record " + record.qid + ")");
        }
        candidates.push_back(*gold);
    }
    return candidates;
}

Targets build_targets(std::span<const Section> candidates, const QARecord& record, ArMode mode) {
    Targets targets;
    targets.sr_labels.resize(candidates.size(), 0);
    bool gold_found = false;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        const bool is_gold = candidates[c].section_id == record.gold_section_id;
        targets.sr_labels[c] = is_gold ? 1 : 0;
        gold_found = gold_found || is_gold;

        std::vector<int> labels;
        if (mode == ArMode::kSentence) {
            labels.assign(candidates[c].sentences.size(), 0);
            if (is_gold) {
                for (std::size_t idx : record.answer_sentence_indices) {
                    if (idx >= labels.size()) {
                        throw std::invalid_argument("build_targets: answer sentence index " +
                                                    std::to_string(idx) +
                                                    " outside gold section (record " +
                                                    record.qid + ")");
                    }
                    labels[idx] = 1;
                }
            }
        } else {
            std::vector<std::size_t> per_sentence;
            section_tokens(candidates[c], &per_sentence);
            for (std::size_t s = 0; s < per_sentence.size(); ++s) {
                const bool positive =
                    is_gold && std::binary_search(record.answer_sentence_indices.begin(),
                                                  record.answer_sentence_indices.end(), s);
                labels.insert(labels.end(), per_sentence[s], positive ? 1 : 0);
            }
            if (is_gold) {
                for (std::size_t idx : record.answer_sentence_indices) {
                    if (idx >= per_sentence.size()) {
                        throw std::invalid_argument("build_targets: answer sentence index " +
                                                    std::to_string(idx) +
                                                    " outside gold section (record " +
                                                    record.qid + ")");
                    }
                }
            }
        }
        targets.ar_labels.push_back(std::move(labels));
    }
    if (!gold_found) {
        throw std::runtime_error("build_targets: gold section absent from candidates (record " +
                                 record.qid + ")");
    }
    return targets;
}

StepLosses mtl_step(MTLModel& model, const std::string& question,
                    std::span<const Section> candidates, const Targets& targets, ArMode mode,
                    double grad_scale, double weight_sr, double weight_ar) {
    if (candidates.empty()) throw std::invalid_argument("mtl_step: no candidates");
    if (targets.sr_labels.size() != candidates.size() ||
        targets.ar_labels.size() != candidates.size()) {
        throw std::invalid_argument("mtl_step: targets do not match candidates");
    }

    const std::size_t d = model.encoder.config().hidden_dim;
    const std::size_t max_len = model.encoder.config().max_len;
    const bool with_grad = grad_scale > 0.0;
    const double inv_cand = 1.0 / static_cast<double>(candidates.size());

    StepLosses losses;
    LayeredEncoder::Workspace ws;

    if (mode == ArMode::kSentence) {
        // SR branch: one forward per (question, section)
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            const PackedPair packed =
                pack_pair(model.vocab, question, candidates[c].text(), max_len);
            model.encoder.forward(packed.ids, ws);
            const std::vector<double> pooled = model.encoder.pooled_state(ws);
            double l0 = 0.0;
            double l1 = 0.0;
            head_logits(model.sr_head, pooled.data(), d, l0, l1);
            const Ce2 ce = cross_entropy2(l0, l1, targets.sr_labels[c]);
            losses.l_sr += ce.loss * inv_cand;
            if (with_grad) {
                const double s = grad_scale * weight_sr * inv_cand;
                std::vector<double> d_final(ws.n * d, 0.0);
                std::vector<double> d_pooled(d, 0.0);
                head_backward(model.sr_head, pooled.data(), d, ce.d0 * s, ce.d1 * s,
                              d_pooled.data());
                model.encoder.add_pooled_gradient(ws, d_pooled, d_final);
                model.encoder.backward(ws, d_final);
            }
        }

        // AR branch: one forward per (question, sentence)
        std::size_t n_pairs = 0;
        for (const Section& c : candidates) n_pairs += c.sentences.size();
        const double inv_pairs = n_pairs == 0 ? 0.0 : 1.0 / static_cast<double>(n_pairs);
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            for (std::size_t s = 0; s < candidates[c].sentences.size(); ++s) {
                const PackedPair packed = pack_pair(model.vocab, question,
                                                    candidates[c].sentences[s].text, max_len);
                model.encoder.forward(packed.ids, ws);
                const std::vector<double> pooled = model.encoder.pooled_state(ws);
                double l0 = 0.0;
                double l1 = 0.0;
                head_logits(model.ar_sent_head, pooled.data(), d, l0, l1);
                const Ce2 ce = cross_entropy2(l0, l1, targets.ar_labels[c][s]);
                losses.l_ar += ce.loss * inv_pairs;
                if (with_grad) {
                    const double sc = grad_scale * weight_ar * inv_pairs;
                    std::vector<double> d_final(ws.n * d, 0.0);
                    std::vector<double> d_pooled(d, 0.0);
                    head_backward(model.ar_sent_head, pooled.data(), d, ce.d0 * sc,
                                  ce.d1 * sc, d_pooled.data());
                    model.encoder.add_pooled_gradient(ws, d_pooled, d_final);
                    model.encoder.backward(ws, d_final);
                }
            }
        }
    } else {
        // token mode: one shared forward per (question, section), both heads
        // read it and the branches split at the heads
        std::size_t total_tokens = 0;
        std::vector<PackedPair> packs;
        packs.reserve(candidates.size());
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            packs.push_back(pack_pair(model.vocab, question, candidates[c].text(), max_len));
            const std::size_t span = packs[c].text_end - packs[c].text_begin;
            total_tokens += std::min(span, targets.ar_labels[c].size());
        }
        const double inv_tokens = total_tokens == 0 ? 0.0 : 1.0 / static_cast<double>(total_tokens);

        for (std::size_t c = 0; c < candidates.size(); ++c) {
            const PackedPair& packed = packs[c];
            model.encoder.forward(packed.ids, ws);
            const double* states = ws.final_states.data();
            const std::vector<double> pooled = model.encoder.pooled_state(ws);
            std::vector<double> d_final(with_grad ? ws.n * d : 0, 0.0);

            double l0 = 0.0;
            double l1 = 0.0;
            head_logits(model.sr_head, pooled.data(), d, l0, l1);
            const Ce2 sr_ce = cross_entropy2(l0, l1, targets.sr_labels[c]);
            losses.l_sr += sr_ce.loss * inv_cand;
            if (with_grad) {
                const double s = grad_scale * weight_sr * inv_cand;
                std::vector<double> d_pooled(d, 0.0);
                head_backward(model.sr_head, pooled.data(), d, sr_ce.d0 * s, sr_ce.d1 * s,
                              d_pooled.data());
                model.encoder.add_pooled_gradient(ws, d_pooled, d_final);
            }

            const std::size_t span = packed.text_end - packed.text_begin;
            const std::size_t n_t = std::min(span, targets.ar_labels[c].size());
            for (std::size_t t = 0; t < n_t; ++t) {
                const std::size_t pos = packed.text_begin + t;
                const double* state = states + pos * d;
                head_logits(model.ar_token_head, state, d, l0, l1);
                const Ce2 ce = cross_entropy2(l0, l1, targets.ar_labels[c][t]);
                losses.l_ar += ce.loss * inv_tokens;
                if (with_grad) {
                    const double sc = grad_scale * weight_ar * inv_tokens;
                    head_backward(model.ar_token_head, state, d, ce.d0 * sc, ce.d1 * sc,
                                  d_final.data() + pos * d);
                }
            }
            if (with_grad) model.encoder.backward(ws, d_final);
        }
    }

    losses.l_mt = 0.5 * (losses.l_sr + losses.l_ar);
    if (!std::isfinite(losses.l_mt)) {
        throw std::runtime_error("mtl_step: non-finite loss on question '" + question +
                                 "' (first candidate " + std::string(candidates[0].section_id) +
                                 ")");
    }
    return losses;
}

const Manual& RetrievalContext::manual_for(const std::string& manual_id) const {
    auto it = manuals.find(manual_id);
    if (it == manuals.end()) {
        throw std::runtime_error("no manual loaded with id '" + manual_id + "'");
    }
    return *it->second;
}

const RetrievalIndex& RetrievalContext::index_for(const std::string& manual_id) const {
    auto it = indexes.find(manual_id);
    if (it == indexes.end()) {
        throw std::runtime_error("no index built for manual '" + manual_id + "'");
    }
    return *it->second;
}

namespace {

// deterministic Adam over an explicit tensor list; the fine-tuning loops use
// it, pretraining stays on plain per-layer SGD
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<Tensor*> tensors, double lr)
        : tensors_(std::move(tensors)), lr_(lr) {
        m_.reserve(tensors_.size());
        v_.reserve(tensors_.size());
        for (const Tensor* t : tensors_) {
            m_.emplace_back(t->size(), 0.0);
            v_.emplace_back(t->size(), 0.0);
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < tensors_.size(); ++k) {
            Tensor& t = *tensors_[k];
            for (std::size_t i = 0; i < t.size(); ++i) {
                const double g = t.grad[i];
                m_[k][i] = kBeta1 * m_[k][i] + (1.0 - kBeta1) * g;
                v_[k][i] = kBeta2 * v_[k][i] + (1.0 - kBeta2) * g * g;
                const double mhat = m_[k][i] / bc1;
                const double vhat = v_[k][i] / bc2;
                t.values[i] -= lr_ * mhat / (std::sqrt(vhat) + kEps);
            }
        }
    }

private:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    std::vector<Tensor*> tensors_;
    double lr_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

std::vector<Tensor*> trainable_tensors(MTLModel& model) {
    std::vector<Tensor*> tensors;
    model.encoder.for_each_tensor([&tensors](Tensor& t) { tensors.push_back(&t); });
    for (ClassifierHead* head : {&model.sr_head, &model.ar_sent_head, &model.ar_token_head}) {
        tensors.push_back(&head->w);
        tensors.push_back(&head->b);
    }
    return tensors;
}

struct PreparedRecord {
    const QARecord* record = nullptr;
    std::vector<Section> candidates;
    Targets targets;
};

std::vector<PreparedRecord> prepare_records(std::span<const QARecord> records,
                                            const RetrievalContext& ctx,
                                            const TrainConfig& cfg) {
    std::vector<PreparedRecord> prepared;
    prepared.reserve(records.size());
    for (const QARecord& r : records) {
        PreparedRecord p;
        p.record = &r;
        p.candidates = build_candidates(r, ctx.manual_for(r.manual_id),
                                        ctx.index_for(r.manual_id), cfg.k, true);
        p.targets = build_targets(p.candidates, r, cfg.ar_mode);
        prepared.push_back(std::move(p));
    }
    return prepared;
}

struct ModelSnapshot {
    std::vector<double> encoder_params;
    std::vector<double> sr_w, sr_b, ar_s_w, ar_s_b, ar_t_w, ar_t_b;

    static ModelSnapshot take(const MTLModel& m) {
        return {m.encoder.flat_parameters(), m.sr_head.w.values, m.sr_head.b.values,
                m.ar_sent_head.w.values,     m.ar_sent_head.b.values,
                m.ar_token_head.w.values,    m.ar_token_head.b.values};
    }
    void restore(MTLModel& m) const {
        m.encoder.set_flat_parameters(encoder_params);
        m.sr_head.w.values = sr_w;
        m.sr_head.b.values = sr_b;
        m.ar_sent_head.w.values = ar_s_w;
        m.ar_sent_head.b.values = ar_s_b;
        m.ar_token_head.w.values = ar_t_w;
        m.ar_token_head.b.values = ar_t_b;
    }
};

enum class StopLoss { kMt, kSr, kAr };

double pick_loss(const StepLosses& l, StopLoss which) {
    switch (which) {
        case StopLoss::kMt: return l.l_mt;
        case StopLoss::kSr: return l.l_sr;
        case StopLoss::kAr: return l.l_ar;
    }
    return l.l_mt;
}

TrainStats train_branches(MTLModel& model, std::span<const QARecord> train,
                          std::span<const QARecord> validation, const RetrievalContext& ctx,
                          const TrainConfig& cfg, double weight_sr, double weight_ar,
                          StopLoss stop_loss) {
    if (train.empty()) throw std::invalid_argument("training requires a non-empty train set");

    const auto train_prepared = prepare_records(train, ctx, cfg);
    const auto val_prepared = prepare_records(validation, ctx, cfg);

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(train_prepared.size());
    std::iota(order.begin(), order.end(), 0);
    AdamOptimizer optimizer(trainable_tensors(model), cfg.lr);

    TrainStats stats;
    double best_val = std::numeric_limits<double>::infinity();
    ModelSnapshot best_snapshot = ModelSnapshot::take(model);
    bool have_snapshot = false;
    std::size_t bad_checks = 0;

    auto validation_loss = [&]() {
        double total = 0.0;
        for (const PreparedRecord& p : val_prepared) {
            const StepLosses l = mtl_step(model, p.record->question, p.candidates, p.targets,
                                          cfg.ar_mode, 0.0, weight_sr, weight_ar);
            total += pick_loss(l, stop_loss);
        }
        return mean_or_zero(total, val_prepared.size());
    };

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const double grad_scale = 1.0 / static_cast<double>(end - start);

            model.encoder.zero_grad();
            model.sr_head.zero_grad();
            model.ar_sent_head.zero_grad();
            model.ar_token_head.zero_grad();

            StepLosses batch_losses;
            for (std::size_t i = start; i < end; ++i) {
                const PreparedRecord& p = train_prepared[order[i]];
                const StepLosses l = mtl_step(model, p.record->question, p.candidates,
                                              p.targets, cfg.ar_mode, grad_scale, weight_sr,
                                              weight_ar);
                batch_losses.l_sr += l.l_sr * grad_scale;
                batch_losses.l_ar += l.l_ar * grad_scale;
            }
            batch_losses.l_mt = 0.5 * (batch_losses.l_sr + batch_losses.l_ar);
            stats.step_losses.push_back(batch_losses);

            optimizer.step();
        }
        ++stats.epochs_run;

        if (!val_prepared.empty()) {
            const double val_loss = validation_loss();
            if (val_loss < best_val - 1e-12) {
                best_val = val_loss;
                best_snapshot = ModelSnapshot::take(model);
                have_snapshot = true;
                bad_checks = 0;
            } else {
                ++bad_checks;
                if (bad_checks > cfg.patience) break;
            }
        }
    }

    if (have_snapshot) best_snapshot.restore(model);
    stats.best_val_loss = std::isfinite(best_val) ? best_val : 0.0;
    return stats;
}

}  // namespace

TrainStats train_mtl(MTLModel& model, std::span<const QARecord> train,
                     std::span<const QARecord> validation, const RetrievalContext& ctx,
                     const TrainConfig& cfg) {
    return train_branches(model, train, validation, ctx, cfg, 0.5, 0.5, StopLoss::kMt);
}

SqpModels train_sqp(const LayeredEncoder& pretrained, const Vocabulary& vocab,
                    std::span<const QARecord> train, std::span<const QARecord> validation,
                    const RetrievalContext& ctx, const TrainConfig& cfg, TrainStats* sr_stats,
                    TrainStats* ar_stats) {
    SqpModels models{MTLModel(pretrained, vocab, cfg.seed + 1),
                     MTLModel(pretrained, vocab, cfg.seed + 2)};
    TrainStats sr = train_branches(models.sr, train, validation, ctx, cfg, 1.0, 0.0,
                                   StopLoss::kSr);
    TrainStats ar = train_branches(models.ar, train, validation, ctx, cfg, 0.0, 1.0,
                                   StopLoss::kAr);
    if (sr_stats != nullptr) *sr_stats = std::move(sr);
    if (ar_stats != nullptr) *ar_stats = std::move(ar);
    return models;
}

double sr_positive_prob(const MTLModel& model, const std::string& question,
                        const Section& section) {
    const PackedPair packed =
        pack_pair(model.vocab, question, section.text(), model.encoder.config().max_len);
    LayeredEncoder::Workspace ws;
    model.encoder.forward(packed.ids, ws);
    const std::vector<double> pooled = model.encoder.pooled_state(ws);
    double l0 = 0.0;
    double l1 = 0.0;
    head_logits(model.sr_head, pooled.data(), model.encoder.config().hidden_dim, l0, l1);
    return positive_prob(l0, l1);
}

std::vector<double> ar_sentence_probs(const MTLModel& model, const std::string& question,
                                      const Section& section) {
    std::vector<double> probs;
    probs.reserve(section.sentences.size());
    LayeredEncoder::Workspace ws;
    const std::size_t d = model.encoder.config().hidden_dim;
    for (const Sentence& s : section.sentences) {
        const PackedPair packed =
            pack_pair(model.vocab, question, s.text, model.encoder.config().max_len);
        model.encoder.forward(packed.ids, ws);
        const std::vector<double> pooled = model.encoder.pooled_state(ws);
        double l0 = 0.0;
        double l1 = 0.0;
        head_logits(model.ar_sent_head, pooled.data(), d, l0, l1);
        probs.push_back(positive_prob(l0, l1));
    }
    return probs;
}

std::vector<double> ar_token_probs(const MTLModel& model, const std::string& question,
                                   const Section& section) {
    const auto tokens = section_tokens(section);
    std::vector<double> probs(tokens.size(), 0.0);
    if (tokens.empty()) return probs;

    const PackedPair packed =
        pack_pair(model.vocab, question, section.text(), model.encoder.config().max_len);
    LayeredEncoder::Workspace ws;
    model.encoder.forward(packed.ids, ws);
    const std::size_t d = model.encoder.config().hidden_dim;
    const std::size_t span = packed.text_end - packed.text_begin;
    const std::size_t n_t = std::min(span, tokens.size());
    for (std::size_t t = 0; t < n_t; ++t) {
        const double* state = ws.final_states.data() + (packed.text_begin + t) * d;
        double l0 = 0.0;
        double l1 = 0.0;
        head_logits(model.ar_token_head, state, d, l0, l1);
        probs[t] = positive_prob(l0, l1);
    }
    return probs;
}

InferenceResult infer_with(const InferenceHooks& hooks, const std::string& question,
                           const Manual& manual, const RetrievalIndex& index, std::size_t k,
                           ArMode mode, double threshold) {
    if (manual.sections.empty()) throw std::invalid_argument("infer: manual has no sections");

    const RankedList ranked = top_k(question, index, k);
    if (ranked.entries.empty()) throw std::runtime_error("infer: the index is empty");
    InferenceResult result;
    result.mode = mode;

    const Section* predicted = nullptr;
    double best_prob = -1.0;
    for (const RankedEntry& entry : ranked.entries) {
        const Section* section = manual.find_section(entry.section_id);
        if (section == nullptr) {
            throw std::runtime_error("infer: index section '" + entry.section_id +
                                     "' missing from manual '" + manual.manual_id + "'");
        }
        const double prob = hooks.sr_score(question, *section);
        result.sr_scores.emplace_back(entry.section_id, prob);
        const bool better = prob > best_prob ||
                            (prob == best_prob && predicted != nullptr &&
                             entry.section_id < predicted->section_id);
        if (predicted == nullptr || better) {
            best_prob = prob;
            predicted = section;
        }
    }
    result.predicted_section_id = predicted->section_id;

    const std::vector<double> probs = hooks.ar_unit_probs(question, *predicted);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] >= threshold) result.selected_units.push_back(i);
    }
    if (result.selected_units.empty() && !probs.empty()) {
        // hard classifier found nothing; keep the single most probable unit
        std::size_t best = 0;
        for (std::size_t i = 1; i < probs.size(); ++i) {
            if (probs[i] > probs[best]) best = i;
        }
        result.selected_units.push_back(best);
    }

    if (mode == ArMode::kSentence) {
        for (std::size_t idx : result.selected_units) {
            if (!result.answer_text.empty()) result.answer_text.push_back(' ');
            result.answer_text += predicted->sentences[idx].text;
        }
    } else {
        const auto tokens = section_tokens(*predicted);
        for (std::size_t idx : result.selected_units) {
            if (!result.answer_text.empty()) result.answer_text.push_back(' ');
            result.answer_text += tokens[idx];
        }
    }
    return result;
}

InferenceResult infer(const std::string& question, const Manual& manual,
                      const RetrievalIndex& index, const MTLModel& sr_model,
                      const MTLModel& ar_model, std::size_t k, ArMode mode, double threshold) {
    InferenceHooks hooks;
    hooks.sr_score = [&sr_model](const std::string& q, const Section& s) {
        return sr_positive_prob(sr_model, q, s);
    };
    if (mode == ArMode::kSentence) {
        hooks.ar_unit_probs = [&ar_model](const std::string& q, const Section& s) {
            return ar_sentence_probs(ar_model, q, s);
        };
    } else {
        hooks.ar_unit_probs = [&ar_model](const std::string& q, const Section& s) {
            return ar_token_probs(ar_model, q, s);
        };
    }
    return infer_with(hooks, question, manual, index, k, mode, threshold);
}

ParaphraseDetector::ParaphraseDetector(const LayeredEncoder& pretrained,
                                       const Vocabulary& vocabulary, std::uint64_t head_seed)
    : encoder(pretrained), vocab(vocabulary) {
    Rng rng(head_seed);
    head = ClassifierHead("paraphrase_head", encoder.config().hidden_dim, rng);
}

void train_paraphrase_detector(ParaphraseDetector& detector,
                               std::span<const ParaphrasePair> pairs, std::size_t epochs,
                               double lr, std::uint64_t seed) {
    if (pairs.empty()) throw std::invalid_argument("paraphrase training requires pairs");
    Rng rng(seed);
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t d = detector.encoder.config().hidden_dim;
    LayeredEncoder::Workspace ws;
    std::vector<Tensor*> tensors;
    detector.encoder.for_each_tensor([&tensors](Tensor& t) { tensors.push_back(&t); });
    tensors.push_back(&detector.head.w);
    tensors.push_back(&detector.head.b);
    AdamOptimizer optimizer(tensors, lr);

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t i : order) {
            const ParaphrasePair& pair = pairs[i];
            const PackedPair packed = pack_pair(detector.vocab, pair.q1, pair.q2,
                                                detector.encoder.config().max_len);
            detector.encoder.zero_grad();
            detector.head.zero_grad();
            detector.encoder.forward(packed.ids, ws);
            const std::vector<double> pooled = detector.encoder.pooled_state(ws);
            double l0 = 0.0;
            double l1 = 0.0;
            head_logits(detector.head, pooled.data(), d, l0, l1);
            const Ce2 ce = cross_entropy2(l0, l1, pair.label);
            std::vector<double> d_final(ws.n * d, 0.0);
            std::vector<double> d_pooled(d, 0.0);
            head_backward(detector.head, pooled.data(), d, ce.d0, ce.d1, d_pooled.data());
            detector.encoder.add_pooled_gradient(ws, d_pooled, d_final);
            detector.encoder.backward(ws, d_final);

            optimizer.step();
        }
    }
}

std::pair<int, double> paraphrase_detect(const ParaphraseDetector& detector,
                                         const std::string& q1, const std::string& q2) {
    if (q1.empty() || q2.empty()) {
        throw std::invalid_argument("paraphrase_detect: empty question");
    }
    const PackedPair packed =
        pack_pair(detector.vocab, q1, q2, detector.encoder.config().max_len);
    LayeredEncoder::Workspace ws;
    detector.encoder.forward(packed.ids, ws);
    const std::vector<double> pooled = detector.encoder.pooled_state(ws);
    double l0 = 0.0;
    double l1 = 0.0;
    head_logits(detector.head, pooled.data(), detector.encoder.config().hidden_dim, l0, l1);
    const double prob = positive_prob(l0, l1);
    return {prob >= 0.5 ? 1 : 0, prob};
}

}  // namespace manualqa
