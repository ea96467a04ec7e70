#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "manualqa/encoder.hpp"
#include "manualqa/pretrain.hpp"
#include "support/oracles.hpp"

using namespace manualqa;

namespace {

EncoderConfig tiny_config(std::size_t vocab) {
    EncoderConfig cfg;
    cfg.vocab_size = vocab;
    cfg.hidden_dim = 8;
    cfg.n_blocks = 2;
    cfg.n_heads = 2;
    cfg.max_len = 16;
    return cfg;
}

}  // namespace

TEST_CASE("vocabulary reserves special ids and encodes text") {
    Vocabulary vocab = Vocabulary::build(std::vector<std::string>{"Press the OK button"});
    CHECK(vocab.id_of("[pad]") == Vocabulary::kPad);
    CHECK(vocab.id_of("[mask]") == Vocabulary::kMask);
    CHECK(vocab.size() == Vocabulary::kNumSpecial + 4);
    CHECK(vocab.id_of("press") >= Vocabulary::kNumSpecial);
    CHECK(vocab.id_of("missing") == Vocabulary::kUnk);
    const auto ids = vocab.encode("press ok");
    REQUIRE(ids.size() == 2);
    CHECK(ids[0] == vocab.id_of("press"));

    Vocabulary rebuilt = Vocabulary::from_tokens(vocab.tokens());
    CHECK(rebuilt.size() == vocab.size());
    CHECK(rebuilt.id_of("button") == vocab.id_of("button"));
}

TEST_CASE("forward produces per-token states plus pooled state") {
    LayeredEncoder enc(tiny_config(20), 3);
    LayeredEncoder::Workspace ws;
    const std::vector<int> ids{1, 7, 9, 12, 2};
    enc.forward(ids, ws);
    CHECK(ws.final_states.size() == ids.size() * 8);
    CHECK(enc.pooled_state(ws).size() == 8);
    for (double v : ws.final_states) CHECK(std::isfinite(v));

    CHECK_THROWS(enc.forward(std::vector<int>{}, ws));
    CHECK_THROWS(enc.forward(std::vector<int>{55}, ws));
    CHECK_THROWS(enc.forward(std::vector<int>(99, 5), ws));
}

TEST_CASE("layer map matches the schedule contract") {
    LayeredEncoder enc(tiny_config(20), 3);
    REQUIRE(enc.n_layers() == 4);
    CHECK(enc.layers().front().name == "embedding");
    CHECK(enc.layers().back().name == "lm_head");
    CHECK(enc.layers()[1].name == "block_1");
}

TEST_CASE("forward is deterministic for equal seeds") {
    LayeredEncoder a(tiny_config(30), 11);
    LayeredEncoder b(tiny_config(30), 11);
    LayeredEncoder::Workspace wa;
    LayeredEncoder::Workspace wb;
    const std::vector<int> ids{1, 6, 8, 19, 2};
    a.forward(ids, wa);
    b.forward(ids, wb);
    CHECK(wa.final_states == wb.final_states);
}

TEST_CASE("mlm_loss gradients match central finite differences") {
    // d=8, L=2 reference-scale encoder; the acceptance suite widens the sweep
    LayeredEncoder enc(tiny_config(24), 5);
    Rng rng(101);
    std::vector<int> ids{Vocabulary::kBos, 6, 7, 8, 9, 10, 11, Vocabulary::kSep};
    MaskedBatch batch = mlm_mask(ids, 0.4, rng, enc.config().vocab_size);
    REQUIRE(!batch.mask_positions.empty());

    enc.zero_grad();
    mlm_loss_backward(enc, batch);
    const auto analytic = enc.flat_gradients();

    testsupport::FlatParams params(enc);
    REQUIRE(params.size() == analytic.size());
    Rng pick(77);
    std::size_t checked = 0;
    for (std::size_t trial = 0; trial < 300; ++trial) {
        const std::size_t i = pick.uniform_int(params.size());
        const double numeric = testsupport::central_difference(
            params, i, [&] { return mlm_loss(enc, batch); });
        CAPTURE(i);
        CAPTURE(analytic[i]);
        CAPTURE(numeric);
        CHECK(testsupport::gradients_agree(analytic[i], numeric));
        ++checked;
    }
    CHECK(checked == 300);
}

TEST_CASE("checkpoints round-trip bit-exact") {
    const std::string dir = (std::filesystem::temp_directory_path() /
                             "manualqa_ckpt_test").string();
    std::filesystem::remove_all(dir);

    Vocabulary vocab = Vocabulary::build(std::vector<std::string>{
        "charge the battery", "adjust the display brightness"});
    EncoderConfig cfg = tiny_config(vocab.size());
    LayeredEncoder enc(cfg, 21);
    CheckpointMeta meta{"LRD", 21, 17};
    save_checkpoint(dir, enc, vocab, meta);

    Checkpoint loaded = load_checkpoint(dir);
    CHECK(loaded.meta.strategy == "LRD");
    CHECK(loaded.meta.seed == 21);
    CHECK(loaded.meta.steps == 17);
    CHECK(loaded.vocab.tokens() == vocab.tokens());
    CHECK(loaded.encoder.flat_parameters() == enc.flat_parameters());

    std::filesystem::remove_all(dir);
}
