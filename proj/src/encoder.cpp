#include "manualqa/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "manualqa/detail/binio.hpp"
#include "manualqa/retrieval.hpp"

namespace manualqa {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInitStd = 0.08;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
           x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

// y[i] = a[i] * W + b over rows; W is (in x out)
void linear_forward(const double* a, std::size_t n, const Tensor& w, const Tensor& b,
                    double* y) {
    const std::size_t in = w.rows;
    const std::size_t out = w.cols;
    for (std::size_t i = 0; i < n; ++i) {
        double* yi = y + i * out;
        for (std::size_t o = 0; o < out; ++o) yi[o] = b.values[o];
        const double* ai = a + i * in;
        for (std::size_t c = 0; c < in; ++c) {
            const double av = ai[c];
            if (av == 0.0) continue;
            const double* wrow = w.values.data() + c * out;
            for (std::size_t o = 0; o < out; ++o) yi[o] += av * wrow[o];
        }
    }
}

// accumulates dW, db, and d_a from d_y
void linear_backward(const double* a, std::size_t n, Tensor& w, Tensor& b,
                     const double* d_y, double* d_a) {
    const std::size_t in = w.rows;
    const std::size_t out = w.cols;
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a + i * in;
        const double* dyi = d_y + i * out;
        for (std::size_t o = 0; o < out; ++o) b.grad[o] += dyi[o];
        for (std::size_t c = 0; c < in; ++c) {
            double* wgrow = w.grad.data() + c * out;
            const double av = ai[c];
            double acc = 0.0;
            const double* wrow = w.values.data() + c * out;
            for (std::size_t o = 0; o < out; ++o) {
                wgrow[o] += av * dyi[o];
                acc += dyi[o] * wrow[o];
            }
            if (d_a != nullptr) d_a[i * in + c] += acc;
        }
    }
}

void layernorm_forward(const double* x, std::size_t n, std::size_t d, const Tensor& g,
                       const Tensor& beta, double* out, double* xhat, double* rstd) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x + i * d;
        double mu = 0.0;
        for (std::size_t c = 0; c < d; ++c) mu += xi[c];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double diff = xi[c] - mu;
            var += diff * diff;
        }
        var /= static_cast<double>(d);
        const double r = 1.0 / std::sqrt(var + kLnEps);
        rstd[i] = r;
        double* xh = xhat + i * d;
        double* oi = out + i * d;
        for (std::size_t c = 0; c < d; ++c) {
            xh[c] = (xi[c] - mu) * r;
            oi[c] = g.values[c] * xh[c] + beta.values[c];
        }
    }
}

// accumulates dg, dbeta, and d_x from d_out
void layernorm_backward(const double* d_out, std::size_t n, std::size_t d, Tensor& g,
                        Tensor& beta, const double* xhat, const double* rstd, double* d_x) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* doi = d_out + i * d;
        const double* xh = xhat + i * d;
        double m1 = 0.0;
        double m2 = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double dxhat = doi[c] * g.values[c];
            g.grad[c] += doi[c] * xh[c];
            beta.grad[c] += doi[c];
            m1 += dxhat;
            m2 += dxhat * xh[c];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        double* dxi = d_x + i * d;
        for (std::size_t c = 0; c < d; ++c) {
            const double dxhat = doi[c] * g.values[c];
            dxi[c] += rstd[i] * (dxhat - m1 - xh[c] * m2);
        }
    }
}

// tensor indices within a block layer
enum BlockTensor {
    kLn1G = 0, kLn1B, kWq, kBq, kWk, kBk, kWv, kBv, kWo, kBo,
    kLn2G, kLn2B, kW1, kB1, kW2, kB2,
};

// tensor indices within the head layer
enum HeadTensor { kLnfG = 0, kLnfB, kLmW, kLmB };

}  // namespace

Tensor::Tensor(std::string name_, std::size_t rows_, std::size_t cols_)
    : name(std::move(name_)), rows(rows_), cols(cols_),
      values(rows_ * cols_, 0.0), grad(rows_ * cols_, 0.0) {}

Vocabulary::Vocabulary() {
    for (const char* t : {"[pad]", "[bos]", "[sep]", "[unk]", "[mask]"}) add(t);
}

Vocabulary Vocabulary::build(std::span<const std::string> texts) {
    Vocabulary vocab;
    std::vector<std::string> words;
    for (const auto& text : texts) {
        for (auto& t : tokenize(text)) words.push_back(std::move(t));
    }
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    for (const auto& w : words) vocab.add(w);
    return vocab;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    Vocabulary vocab;
    if (tokens.size() < kNumSpecial) {
        throw std::invalid_argument("vocabulary token list lacks the special tokens");
    }
    for (std::size_t i = kNumSpecial; i < tokens.size(); ++i) vocab.add(tokens[i]);
    return vocab;
}

int Vocabulary::add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    ids_[token] = id;
    return id;
}

int Vocabulary::id_of(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
    return tokens_.at(static_cast<std::size_t>(id));
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& t : tokenize(text)) ids.push_back(id_of(t));
    return ids;
}

LayeredEncoder::LayeredEncoder(const EncoderConfig& config, std::uint64_t seed)
    : config_(config) {
    if (config_.vocab_size == 0) throw std::invalid_argument("encoder: vocab_size must be > 0");
    if (config_.hidden_dim % config_.n_heads != 0) {
        throw std::invalid_argument("encoder: hidden_dim must be divisible by n_heads");
    }
    const std::size_t d = config_.hidden_dim;
    const std::size_t ff = config_.ff_dim();
    const std::size_t v = config_.vocab_size;

    Rng rng(seed);
    auto init_normal = [&rng](Tensor& t) {
        for (double& x : t.values) x = kInitStd * rng.normal();
    };
    auto init_ones = [](Tensor& t) { std::fill(t.values.begin(), t.values.end(), 1.0); };

    ParameterLayer embedding;
    embedding.name = "embedding";
    embedding.tensors.emplace_back("tok_emb", v, d);
    embedding.tensors.emplace_back("pos_emb", config_.max_len, d);
    for (Tensor& t : embedding.tensors) init_normal(t);
    layers_.push_back(std::move(embedding));

    for (std::size_t b = 0; b < config_.n_blocks; ++b) {
        ParameterLayer block;
        block.name = "block_" + std::to_string(b + 1);
        const std::string p = block.name + ".";
        block.tensors.emplace_back(p + "ln1_g", d, 1);
        block.tensors.emplace_back(p + "ln1_b", d, 1);
        block.tensors.emplace_back(p + "wq", d, d);
        block.tensors.emplace_back(p + "bq", d, 1);
        block.tensors.emplace_back(p + "wk", d, d);
        block.tensors.emplace_back(p + "bk", d, 1);
        block.tensors.emplace_back(p + "wv", d, d);
        block.tensors.emplace_back(p + "bv", d, 1);
        block.tensors.emplace_back(p + "wo", d, d);
        block.tensors.emplace_back(p + "bo", d, 1);
        block.tensors.emplace_back(p + "ln2_g", d, 1);
        block.tensors.emplace_back(p + "ln2_b", d, 1);
        block.tensors.emplace_back(p + "w1", d, ff);
        block.tensors.emplace_back(p + "b1", ff, 1);
        block.tensors.emplace_back(p + "w2", ff, d);
        block.tensors.emplace_back(p + "b2", d, 1);
        init_ones(block.tensors[kLn1G]);
        init_ones(block.tensors[kLn2G]);
        for (int w : {kWq, kWk, kWv, kWo, kW1, kW2}) init_normal(block.tensors[w]);
        layers_.push_back(std::move(block));
    }

    ParameterLayer head;
    head.name = "lm_head";
    head.tensors.emplace_back("lnf_g", d, 1);
    head.tensors.emplace_back("lnf_b", d, 1);
    head.tensors.emplace_back("lm_w", d, v);
    head.tensors.emplace_back("lm_b", v, 1);
    init_ones(head.tensors[kLnfG]);
    init_normal(head.tensors[kLmW]);
    layers_.push_back(std::move(head));
}

std::size_t LayeredEncoder::parameter_count() const {
    std::size_t count = 0;
    for (const auto& layer : layers_) {
        for (const auto& t : layer.tensors) count += t.size();
    }
    return count;
}

std::vector<double> LayeredEncoder::flat_parameters() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for (const auto& layer : layers_) {
        for (const auto& t : layer.tensors) {
            flat.insert(flat.end(), t.values.begin(), t.values.end());
        }
    }
    return flat;
}

void LayeredEncoder::set_flat_parameters(std::span<const double> values) {
    if (values.size() != parameter_count()) {
        throw std::invalid_argument("set_flat_parameters: size mismatch");
    }
    std::size_t offset = 0;
    for (auto& layer : layers_) {
        for (auto& t : layer.tensors) {
            std::copy(values.begin() + static_cast<std::ptrdiff_t>(offset),
                      values.begin() + static_cast<std::ptrdiff_t>(offset + t.size()),
                      t.values.begin());
            offset += t.size();
        }
    }
}

std::vector<double> LayeredEncoder::flat_gradients() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for (const auto& layer : layers_) {
        for (const auto& t : layer.tensors) {
            flat.insert(flat.end(), t.grad.begin(), t.grad.end());
        }
    }
    return flat;
}

void LayeredEncoder::zero_grad() {
    for (auto& layer : layers_) {
        for (auto& t : layer.tensors) std::fill(t.grad.begin(), t.grad.end(), 0.0);
    }
}

void LayeredEncoder::for_each_tensor(const std::function<void(Tensor&)>& fn) {
    for (auto& layer : layers_) {
        for (auto& t : layer.tensors) fn(t);
    }
}

void LayeredEncoder::for_each_tensor(const std::function<void(const Tensor&)>& fn) const {
    for (const auto& layer : layers_) {
        for (const auto& t : layer.tensors) fn(t);
    }
}

void LayeredEncoder::forward(std::span<const int> ids, Workspace& ws) const {
    const std::size_t n = ids.size();
    const std::size_t d = config_.hidden_dim;
    const std::size_t ff = config_.ff_dim();
    const std::size_t heads = config_.n_heads;
    const std::size_t dh = d / heads;
    if (n == 0) throw std::invalid_argument("encoder forward: empty input");
    if (n > config_.max_len) {
        throw std::invalid_argument("encoder forward: input longer than max_len");
    }
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
            throw std::invalid_argument("encoder forward: token id out of range");
        }
    }

    ws.ids.assign(ids.begin(), ids.end());
    ws.n = n;
    ws.blocks.resize(config_.n_blocks);

    const Tensor& tok = tensor(0, 0);
    const Tensor& pos = tensor(0, 1);
    std::vector<double> x(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* trow = tok.values.data() + static_cast<std::size_t>(ids[i]) * d;
        const double* prow = pos.values.data() + i * d;
        for (std::size_t c = 0; c < d; ++c) x[i * d + c] = trow[c] + prow[c];
    }

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t b = 0; b < config_.n_blocks; ++b) {
        const auto& bt = layers_[b + 1].tensors;
        auto& act = ws.blocks[b];
        act.x_in = x;
        act.ln1_xhat.resize(n * d);
        act.ln1_rstd.resize(n);
        act.a.resize(n * d);
        layernorm_forward(act.x_in.data(), n, d, bt[kLn1G], bt[kLn1B], act.a.data(),
                          act.ln1_xhat.data(), act.ln1_rstd.data());

        act.q.resize(n * d);
        act.k.resize(n * d);
        act.v.resize(n * d);
        linear_forward(act.a.data(), n, bt[kWq], bt[kBq], act.q.data());
        linear_forward(act.a.data(), n, bt[kWk], bt[kBk], act.k.data());
        linear_forward(act.a.data(), n, bt[kWv], bt[kBv], act.v.data());

        act.att.assign(heads * n * n, 0.0);
        act.ctx.assign(n * d, 0.0);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            double* att_h = act.att.data() + h * n * n;
            for (std::size_t i = 0; i < n; ++i) {
                double* row = att_h + i * n;
                const double* qi = act.q.data() + i * d + off;
                double max_s = -1e300;
                for (std::size_t j = 0; j < n; ++j) {
                    const double* kj = act.k.data() + j * d + off;
                    double s = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
                    s *= scale;
                    row[j] = s;
                    max_s = std::max(max_s, s);
                }
                double denom = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    row[j] = std::exp(row[j] - max_s);
                    denom += row[j];
                }
                for (std::size_t j = 0; j < n; ++j) row[j] /= denom;
                double* ctx_i = act.ctx.data() + i * d + off;
                for (std::size_t j = 0; j < n; ++j) {
                    const double p = row[j];
                    const double* vj = act.v.data() + j * d + off;
                    for (std::size_t c = 0; c < dh; ++c) ctx_i[c] += p * vj[c];
                }
            }
        }

        std::vector<double> o(n * d);
        linear_forward(act.ctx.data(), n, bt[kWo], bt[kBo], o.data());
        for (std::size_t i = 0; i < n * d; ++i) x[i] = act.x_in[i] + o[i];
        act.x_mid = x;

        act.ln2_xhat.resize(n * d);
        act.ln2_rstd.resize(n);
        act.a2.resize(n * d);
        layernorm_forward(act.x_mid.data(), n, d, bt[kLn2G], bt[kLn2B], act.a2.data(),
                          act.ln2_xhat.data(), act.ln2_rstd.data());

        act.m1.resize(n * ff);
        act.gact.resize(n * ff);
        linear_forward(act.a2.data(), n, bt[kW1], bt[kB1], act.m1.data());
        for (std::size_t i = 0; i < n * ff; ++i) act.gact[i] = gelu(act.m1[i]);

        std::vector<double> m2(n * d);
        linear_forward(act.gact.data(), n, bt[kW2], bt[kB2], m2.data());
        for (std::size_t i = 0; i < n * d; ++i) x[i] = act.x_mid[i] + m2[i];
    }

    ws.x_last = x;
    ws.lnf_xhat.resize(n * d);
    ws.lnf_rstd.resize(n);
    ws.final_states.resize(n * d);
    const auto& ht = layers_.back().tensors;
    layernorm_forward(ws.x_last.data(), n, d, ht[kLnfG], ht[kLnfB], ws.final_states.data(),
                      ws.lnf_xhat.data(), ws.lnf_rstd.data());
}

std::vector<double> LayeredEncoder::pooled_state(const Workspace& ws) const {
    const std::size_t d = config_.hidden_dim;
    std::vector<double> pooled(d, 0.0);
    for (std::size_t i = 0; i < ws.n; ++i) {
        const double* row = ws.final_states.data() + i * d;
        for (std::size_t c = 0; c < d; ++c) pooled[c] += row[c];
    }
    for (double& v : pooled) v /= static_cast<double>(ws.n);
    return pooled;
}

void LayeredEncoder::add_pooled_gradient(const Workspace& ws,
                                         std::span<const double> d_pooled,
                                         std::span<double> d_final) const {
    const std::size_t d = config_.hidden_dim;
    const double inv_n = 1.0 / static_cast<double>(ws.n);
    for (std::size_t i = 0; i < ws.n; ++i) {
        double* row = d_final.data() + i * d;
        for (std::size_t c = 0; c < d; ++c) row[c] += d_pooled[c] * inv_n;
    }
}

void LayeredEncoder::backward(const Workspace& ws, std::span<const double> d_final) {
    const std::size_t n = ws.n;
    const std::size_t d = config_.hidden_dim;
    const std::size_t ff = config_.ff_dim();
    const std::size_t heads = config_.n_heads;
    const std::size_t dh = d / heads;
    if (d_final.size() != n * d) throw std::invalid_argument("backward: d_final size mismatch");

    auto& ht = layers_.back().tensors;
    std::vector<double> dx(n * d, 0.0);
    layernorm_backward(d_final.data(), n, d, ht[kLnfG], ht[kLnfB],
                       ws.lnf_xhat.data(), ws.lnf_rstd.data(), dx.data());

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> d_mid(n * d);
    std::vector<double> d_in(n * d);
    std::vector<double> dgact(n * ff);
    std::vector<double> dm1(n * ff);
    std::vector<double> da2(n * d);
    std::vector<double> dctx(n * d);
    std::vector<double> dq(n * d);
    std::vector<double> dk(n * d);
    std::vector<double> dv(n * d);
    std::vector<double> da(n * d);
    std::vector<double> datt(n);

    for (std::size_t b = config_.n_blocks; b-- > 0;) {
        auto& bt = layers_[b + 1].tensors;
        const auto& act = ws.blocks[b];

        // x = x_mid + mlp(norm(x_mid)); dx is the gradient at the block output
        std::fill(dgact.begin(), dgact.end(), 0.0);
        linear_backward(act.gact.data(), n, bt[kW2], bt[kB2], dx.data(), dgact.data());
        for (std::size_t i = 0; i < n * ff; ++i) dm1[i] = dgact[i] * gelu_grad(act.m1[i]);
        std::fill(da2.begin(), da2.end(), 0.0);
        linear_backward(act.a2.data(), n, bt[kW1], bt[kB1], dm1.data(), da2.data());
        d_mid = dx;  // residual path
        layernorm_backward(da2.data(), n, d, bt[kLn2G], bt[kLn2B],
                           act.ln2_xhat.data(), act.ln2_rstd.data(), d_mid.data());

        // x_mid = x_in + attn(norm(x_in))
        std::fill(dctx.begin(), dctx.end(), 0.0);
        linear_backward(act.ctx.data(), n, bt[kWo], bt[kBo], d_mid.data(), dctx.data());

        std::fill(dq.begin(), dq.end(), 0.0);
        std::fill(dk.begin(), dk.end(), 0.0);
        std::fill(dv.begin(), dv.end(), 0.0);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            const double* att_h = act.att.data() + h * n * n;
            for (std::size_t i = 0; i < n; ++i) {
                const double* row = att_h + i * n;
                const double* dctx_i = dctx.data() + i * d + off;
                double dot_pd = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double* vj = act.v.data() + j * d + off;
                    double s = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) s += dctx_i[c] * vj[c];
                    datt[j] = s;
                    dot_pd += row[j] * s;
                    double* dvj = dv.data() + j * d + off;
                    for (std::size_t c = 0; c < dh; ++c) dvj[c] += row[j] * dctx_i[c];
                }
                const double* qi = act.q.data() + i * d + off;
                double* dqi = dq.data() + i * d + off;
                for (std::size_t j = 0; j < n; ++j) {
                    const double ds = row[j] * (datt[j] - dot_pd) * scale;
                    if (ds == 0.0) continue;
                    const double* kj = act.k.data() + j * d + off;
                    double* dkj = dk.data() + j * d + off;
                    for (std::size_t c = 0; c < dh; ++c) {
                        dqi[c] += ds * kj[c];
                        dkj[c] += ds * qi[c];
                    }
                }
            }
        }

        std::fill(da.begin(), da.end(), 0.0);
        linear_backward(act.a.data(), n, bt[kWq], bt[kBq], dq.data(), da.data());
        linear_backward(act.a.data(), n, bt[kWk], bt[kBk], dk.data(), da.data());
        linear_backward(act.a.data(), n, bt[kWv], bt[kBv], dv.data(), da.data());

        d_in = d_mid;  // residual path
        layernorm_backward(da.data(), n, d, bt[kLn1G], bt[kLn1B],
                           act.ln1_xhat.data(), act.ln1_rstd.data(), d_in.data());
        dx = d_in;
    }

    Tensor& tok = tensor(0, 0);
    Tensor& pos = tensor(0, 1);
    for (std::size_t i = 0; i < n; ++i) {
        double* tg = tok.grad.data() + static_cast<std::size_t>(ws.ids[i]) * d;
        double* pg = pos.grad.data() + i * d;
        const double* dxi = dx.data() + i * d;
        for (std::size_t c = 0; c < d; ++c) {
            tg[c] += dxi[c];
            pg[c] += dxi[c];
        }
    }
}

std::vector<double> LayeredEncoder::lm_logits(const Workspace& ws,
                                              std::span<const std::size_t> positions) const {
    const std::size_t d = config_.hidden_dim;
    const std::size_t v = config_.vocab_size;
    const auto& ht = layers_.back().tensors;
    const Tensor& w = ht[kLmW];
    const Tensor& bias = ht[kLmB];
    std::vector<double> logits(positions.size() * v);
    for (std::size_t r = 0; r < positions.size(); ++r) {
        const std::size_t p = positions[r];
        if (p >= ws.n) throw std::invalid_argument("lm_logits: position out of range");
        const double* f = ws.final_states.data() + p * d;
        double* row = logits.data() + r * v;
        for (std::size_t t = 0; t < v; ++t) row[t] = bias.values[t];
        for (std::size_t c = 0; c < d; ++c) {
            const double fv = f[c];
            const double* wrow = w.values.data() + c * v;
            for (std::size_t t = 0; t < v; ++t) row[t] += fv * wrow[t];
        }
    }
    return logits;
}

void LayeredEncoder::lm_backward(const Workspace& ws, std::span<const std::size_t> positions,
                                 std::span<const double> d_logits, std::span<double> d_final) {
    const std::size_t d = config_.hidden_dim;
    const std::size_t v = config_.vocab_size;
    auto& ht = layers_.back().tensors;
    Tensor& w = ht[kLmW];
    Tensor& bias = ht[kLmB];
    if (d_logits.size() != positions.size() * v) {
        throw std::invalid_argument("lm_backward: d_logits size mismatch");
    }
    for (std::size_t r = 0; r < positions.size(); ++r) {
        const std::size_t p = positions[r];
        const double* f = ws.final_states.data() + p * d;
        const double* dl = d_logits.data() + r * v;
        for (std::size_t t = 0; t < v; ++t) bias.grad[t] += dl[t];
        double* df = d_final.data() + p * d;
        for (std::size_t c = 0; c < d; ++c) {
            double* wgrow = w.grad.data() + c * v;
            const double* wrow = w.values.data() + c * v;
            double acc = 0.0;
            for (std::size_t t = 0; t < v; ++t) {
                wgrow[t] += f[c] * dl[t];
                acc += dl[t] * wrow[t];
            }
            df[c] += acc;
        }
    }
}

void save_checkpoint(const std::string& dir, const LayeredEncoder& encoder,
                     const Vocabulary& vocab, const CheckpointMeta& meta) {
    std::filesystem::create_directories(dir);

    nlohmann::json params = nlohmann::json::array();
    encoder.for_each_tensor([&params](const Tensor& t) {
        params.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
    });
    const auto& cfg = encoder.config();
    nlohmann::json manifest{{"vocab_size", cfg.vocab_size},
                            {"hidden_dim", cfg.hidden_dim},
                            {"n_blocks", cfg.n_blocks},
                            {"n_heads", cfg.n_heads},
                            {"max_len", cfg.max_len},
                            {"strategy", meta.strategy},
                            {"seed", meta.seed},
                            {"steps", meta.steps},
                            {"vocabulary", vocab.tokens()},
                            {"parameters", params}};
    std::ofstream mf(dir + "/checkpoint.json");
    if (!mf) throw std::runtime_error("cannot write checkpoint manifest in " + dir);
    mf << manifest.dump(2) << '\n';

    std::ofstream bin(dir + "/params.bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot write checkpoint parameters in " + dir);
    encoder.for_each_tensor([&bin](const Tensor& t) {
        detail::put_u64(bin, t.size());
        for (double x : t.values) detail::put_f64(bin, x);
    });
}

Checkpoint load_checkpoint(const std::string& dir) {
    std::ifstream mf(dir + "/checkpoint.json");
    if (!mf) throw std::runtime_error("cannot open checkpoint manifest in " + dir);
    nlohmann::json manifest = nlohmann::json::parse(mf);

    EncoderConfig cfg;
    cfg.vocab_size = manifest.at("vocab_size").get<std::size_t>();
    cfg.hidden_dim = manifest.at("hidden_dim").get<std::size_t>();
    cfg.n_blocks = manifest.at("n_blocks").get<std::size_t>();
    cfg.n_heads = manifest.at("n_heads").get<std::size_t>();
    cfg.max_len = manifest.at("max_len").get<std::size_t>();

    CheckpointMeta meta;
    meta.strategy = manifest.at("strategy").get<std::string>();
    meta.seed = manifest.at("seed").get<std::uint64_t>();
    meta.steps = manifest.at("steps").get<std::size_t>();

    Checkpoint ckpt{LayeredEncoder(cfg, 0),
                    Vocabulary::from_tokens(manifest.at("vocabulary").get<std::vector<std::string>>()),
                    meta};
    if (ckpt.vocab.size() != cfg.vocab_size) {
        throw std::runtime_error("checkpoint vocabulary size disagrees with config in " + dir);
    }

    std::ifstream bin(dir + "/params.bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open checkpoint parameters in " + dir);
    ckpt.encoder.for_each_tensor([&bin, &dir](Tensor& t) {
        const std::uint64_t count = detail::get_u64(bin);
        if (count != t.size()) {
            throw std::runtime_error("checkpoint parameter shape mismatch for " + t.name +
                                     " in " + dir);
        }
        for (double& x : t.values) x = detail::get_f64(bin);
    });
    if (!bin) throw std::runtime_error("truncated checkpoint parameters in " + dir);
    return ckpt;
}

}  // namespace manualqa
