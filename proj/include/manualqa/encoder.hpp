#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "manualqa/rng.hpp"

namespace manualqa {

// Word-level vocabulary with fixed special tokens at the front.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kSep = 2;
    static constexpr int kUnk = 3;
    static constexpr int kMask = 4;
    static constexpr int kNumSpecial = 5;

    Vocabulary();

    static Vocabulary build(std::span<const std::string> texts);
    static Vocabulary from_tokens(std::vector<std::string> tokens);

    int add(const std::string& token);
    int id_of(const std::string& token) const;  // kUnk when missing
    const std::string& token_of(int id) const;
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    // tokenize + map; no special tokens added
    std::vector<int> encode(std::string_view text) const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

struct EncoderConfig {
    std::size_t vocab_size = 0;
    std::size_t hidden_dim = 32;
    std::size_t n_blocks = 2;
    std::size_t n_heads = 2;
    std::size_t max_len = 128;

    std::size_t ff_dim() const { return 4 * hidden_dim; }
};

// Named parameter array with its gradient accumulator.
struct Tensor {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
    std::vector<double> grad;

    Tensor() = default;
    Tensor(std::string name, std::size_t rows, std::size_t cols);

    std::size_t size() const { return rows * cols; }
    double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

// One unit of the layer-wise learning-rate schedule.
struct ParameterLayer {
    std::string name;
    std::vector<Tensor> tensors;
};

// Bidirectional transformer encoder over token ids with hand-derived
// backpropagation. Layers, innermost to outermost:
//   embedding (token + position), block_1 .. block_L, lm_head (+ final norm).
// Pre-norm blocks: x += attn(norm(x)); x += mlp(norm(x)); states = norm(x).
class LayeredEncoder {
public:
    LayeredEncoder(const EncoderConfig& config, std::uint64_t seed);

    const EncoderConfig& config() const { return config_; }
    std::size_t n_layers() const { return config_.n_blocks + 2; }

    std::vector<ParameterLayer>& layers() { return layers_; }
    const std::vector<ParameterLayer>& layers() const { return layers_; }

    std::size_t parameter_count() const;
    std::vector<double> flat_parameters() const;
    void set_flat_parameters(std::span<const double> values);
    std::vector<double> flat_gradients() const;
    void zero_grad();
    void for_each_tensor(const std::function<void(Tensor&)>& fn);
    void for_each_tensor(const std::function<void(const Tensor&)>& fn) const;

    // Per-call activation storage; one workspace per concurrent forward.
    struct Workspace {
        std::vector<int> ids;
        std::size_t n = 0;
        struct BlockActivations {
            std::vector<double> x_in;      // n x d, block input
            std::vector<double> ln1_xhat;  // n x d
            std::vector<double> ln1_rstd;  // n
            std::vector<double> a;         // n x d, normed attention input
            std::vector<double> q, k, v;   // n x d each
            std::vector<double> att;       // heads x n x n softmax rows
            std::vector<double> ctx;       // n x d, concatenated head outputs
            std::vector<double> x_mid;     // n x d, after attention residual
            std::vector<double> ln2_xhat;  // n x d
            std::vector<double> ln2_rstd;  // n
            std::vector<double> a2;        // n x d
            std::vector<double> m1;        // n x ff, pre-activation
            std::vector<double> gact;      // n x ff
        };
        std::vector<BlockActivations> blocks;
        std::vector<double> x_last;        // n x d, input to final norm
        std::vector<double> lnf_xhat;      // n x d
        std::vector<double> lnf_rstd;      // n
        std::vector<double> final_states;  // n x d
    };

    // Throws on empty input, ids outside the vocabulary, or length > max_len.
    void forward(std::span<const int> ids, Workspace& ws) const;

    std::span<const double> final_states(const Workspace& ws) const {
        return {ws.final_states.data(), ws.final_states.size()};
    }
    // The pooled state is the mean of the final hidden states.
    std::vector<double> pooled_state(const Workspace& ws) const;

    // Scatters dL/d(pooled) back onto d_final (each position gets 1/n of it).
    void add_pooled_gradient(const Workspace& ws, std::span<const double> d_pooled,
                             std::span<double> d_final) const;

    // Accumulates parameter gradients from dL/d(final_states).
    void backward(const Workspace& ws, std::span<const double> d_final);

    // Language-model logits at the given positions; row i of the result
    // corresponds to positions[i].
    std::vector<double> lm_logits(const Workspace& ws, std::span<const std::size_t> positions) const;

    // Accumulates lm-head gradients from dL/d(logits) and adds the resulting
    // dL/d(final_states) contribution into d_final.
    void lm_backward(const Workspace& ws, std::span<const std::size_t> positions,
                     std::span<const double> d_logits, std::span<double> d_final);

private:
    EncoderConfig config_;
    std::vector<ParameterLayer> layers_;

    Tensor& tensor(std::size_t layer, std::size_t idx) { return layers_[layer].tensors[idx]; }
    const Tensor& tensor(std::size_t layer, std::size_t idx) const {
        return layers_[layer].tensors[idx];
    }
};

// Checkpoint: <dir>/checkpoint.json manifest (config, vocabulary, strategy,
// seed, step count, parameter order) + <dir>/params.bin, every tensor's
// values as little-endian f64 in manifest order. Round-trips bit-exact.
struct CheckpointMeta {
    std::string strategy = "none";
    std::uint64_t seed = 0;
    std::size_t steps = 0;
};

void save_checkpoint(const std::string& dir, const LayeredEncoder& encoder,
                     const Vocabulary& vocab, const CheckpointMeta& meta);

struct Checkpoint {
    LayeredEncoder encoder;
    Vocabulary vocab;
    CheckpointMeta meta;
};

Checkpoint load_checkpoint(const std::string& dir);

}  // namespace manualqa
