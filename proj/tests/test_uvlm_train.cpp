#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "blockspot/rng.hpp"
#include "blockspot/tokenizer.hpp"
#include "blockspot/uvlm/checkpoint.hpp"
#include "blockspot/uvlm/decode.hpp"
#include "blockspot/uvlm/model.hpp"
#include "blockspot/uvlm/train.hpp"
#include "doctest.h"

using namespace blockspot;
using namespace blockspot::uvlm;

namespace {

Hyper small_hyper() {
    Hyper h;
    h.layers = 2;
    h.heads = 2;
    h.dim = 32;
    h.ffn = 64;
    h.max_len = 32;
    h.vocab = 8;
    h.patch_dim = 12;
    return h;
}

tok::Vocab small_vocab() { return tok::Vocab::for_characters("ABCDE"); }

SampleTokens random_sample(Rng& rng, const std::string& text, int patches = 8) {
    SampleTokens s;
    for (int i = 0; i < patches; ++i) {
        std::vector<float> patch;
        for (int t = 0; t < 12; ++t) patch.push_back(static_cast<float>(rng.uniform()));
        s.patches.push_back(std::move(patch));
    }
    s.lang = tok::encode_text(text, small_vocab());
    return s;
}

std::vector<SampleTokens> constant_text_dataset(int n, const std::string& text,
                                                std::uint64_t seed) {
    Rng rng(seed);
    std::vector<SampleTokens> data;
    for (int i = 0; i < n; ++i) data.push_back(random_sample(rng, text));
    return data;
}

bool params_equal(ModelParams<double>& a, ModelParams<double>& b) {
    bool equal = true;
    std::vector<Mat<double>*> ta, tb;
    for_each_tensor(a, [&](const std::string&, Mat<double>& m) { ta.push_back(&m); });
    for_each_tensor(b, [&](const std::string&, Mat<double>& m) { tb.push_back(&m); });
    for (std::size_t i = 0; i < ta.size(); ++i) equal = equal && ta[i]->a == tb[i]->a;
    return equal;
}

}  // namespace

TEST_CASE("train: 100 steps on a fixed 8-sample batch lowers the loss") {
    tok::Vocab v = small_vocab();
    std::vector<SampleTokens> data = constant_text_dataset(8, "ABC", 1);
    TrainConfig cfg;
    cfg.steps = 100;
    cfg.batch_size = 8;
    cfg.lr = 1e-3;
    cfg.seed = 0;
    TrainResult<double> r =
        train(init_params<double>(small_hyper(), 5), data, cfg, v.sep_id(), v.eos_id());
    REQUIRE(r.curve.size() == 100);
    CHECK(r.curve.back().loss < r.curve.front().loss);
}

TEST_CASE("train: identical seeds give bitwise-identical curves") {
    tok::Vocab v = small_vocab();
    std::vector<SampleTokens> data = constant_text_dataset(6, "BA", 2);
    TrainConfig cfg;
    cfg.steps = 30;
    cfg.batch_size = 4;
    cfg.seed = 42;
    TrainResult<double> r1 =
        train(init_params<double>(small_hyper(), 9), data, cfg, v.sep_id(), v.eos_id());
    TrainResult<double> r2 =
        train(init_params<double>(small_hyper(), 9), data, cfg, v.sep_id(), v.eos_id());
    REQUIRE(r1.curve.size() == r2.curve.size());
    for (std::size_t i = 0; i < r1.curve.size(); ++i) {
        CHECK(r1.curve[i].loss == r2.curve[i].loss);
        CHECK(r1.curve[i].accuracy == r2.curve[i].accuracy);
    }
    CHECK(params_equal(r1.params, r2.params));
}

TEST_CASE("train: zero learning rate leaves parameters unchanged") {
    tok::Vocab v = small_vocab();
    std::vector<SampleTokens> data = constant_text_dataset(4, "C", 3);
    ModelParams<double> before = init_params<double>(small_hyper(), 11);
    TrainConfig cfg;
    cfg.steps = 10;
    cfg.lr = 0.0;
    TrainResult<double> r = train(before, data, cfg, v.sep_id(), v.eos_id());
    CHECK(params_equal(r.params, before));
}

TEST_CASE("train + decode: overfit to a constant string") {
    tok::Vocab v = small_vocab();
    std::vector<SampleTokens> data = constant_text_dataset(8, "AB", 4);
    TrainConfig cfg;
    cfg.steps = 400;
    cfg.batch_size = 8;
    cfg.lr = 3e-3;
    cfg.seed = 1;
    cfg.eval_every = 20;
    cfg.stop_at_accuracy = 1.0;
    TrainResult<double> r =
        train(init_params<double>(small_hyper(), 13), data, cfg, v.sep_id(), v.eos_id());
    REQUIRE_FALSE(r.evals.empty());
    CHECK(r.evals.back().accuracy == doctest::Approx(1.0));

    // Decode on fresh, never-seen patches: the model emits its constant.
    Rng rng(99);
    SampleTokens probe = random_sample(rng, "");
    DecodeResult greedy = greedy_decode(r.params, probe.patches, v, 16);
    CHECK(greedy.text == "AB");
    DecodeConfig dcfg;
    dcfg.beam_width = 4;
    dcfg.max_new_tokens = 16;
    DecodeResult beam = decode(r.params, probe.patches, v, dcfg);
    CHECK(beam.text == "AB");
}

TEST_CASE("decode: beam width 1 equals greedy exactly") {
    tok::Vocab v = small_vocab();
    Rng rng(5);
    ModelParams<double> params = init_params<double>(small_hyper(), 15);
    for (int trial = 0; trial < 5; ++trial) {
        SampleTokens probe = random_sample(rng, "");
        DecodeResult greedy = greedy_decode(params, probe.patches, v, 12);
        DecodeConfig cfg;
        cfg.beam_width = 1;
        cfg.max_new_tokens = 12;
        DecodeResult beam = decode(params, probe.patches, v, cfg);
        CHECK(beam.ids == greedy.ids);
        CHECK(beam.log_prob == doctest::Approx(greedy.log_prob).epsilon(1e-12));
    }
}

TEST_CASE("decode: wider beams never score below greedy") {
    tok::Vocab v = small_vocab();
    std::vector<SampleTokens> data = constant_text_dataset(8, "CAB", 6);
    TrainConfig cfg;
    cfg.steps = 150;
    cfg.batch_size = 8;
    cfg.lr = 3e-3;
    TrainResult<double> r =
        train(init_params<double>(small_hyper(), 17), data, cfg, v.sep_id(), v.eos_id());

    Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        SampleTokens probe = random_sample(rng, "");
        DecodeResult greedy = greedy_decode(r.params, probe.patches, v, 12);
        DecodeConfig dcfg;
        dcfg.beam_width = 2 + trial;
        dcfg.max_new_tokens = 12;
        DecodeResult beam = decode(r.params, probe.patches, v, dcfg);
        CHECK(beam.log_prob >= greedy.log_prob - 1e-9);
    }
}

TEST_CASE("incremental cached decoding matches full re-forwarding at every step") {
    tok::Vocab v = small_vocab();
    Rng rng(8);
    ModelParams<double> params = init_params<double>(small_hyper(), 19);
    SampleTokens probe = random_sample(rng, "");

    // Cached path.
    KvCache<double> cache(params.hyper);
    std::vector<double> lp = prefill(params, probe.patches, v.sep_id(), cache);
    std::vector<int> cached_ids;
    for (int step = 0; step < 6; ++step) {
        int best = 0;
        for (int j = 1; j < static_cast<int>(lp.size()); ++j) {
            if (lp[static_cast<std::size_t>(j)] > lp[static_cast<std::size_t>(best)]) best = j;
        }
        if (best == v.eos_id()) break;
        cached_ids.push_back(best);
        lp = decode_step(params, cache, best);
    }

    // Full re-forward path: rebuild the whole sequence each step.
    std::vector<int> full_ids;
    for (int step = 0; step < 6; ++step) {
        SampleTokens s = probe;
        s.lang = full_ids;
        AttentionMask mask = unified_mask(s.prefix_len(), s.total_len());
        Mat<double> logits = forward(params, s, mask, v.sep_id());
        const double* row = logits.row(logits.rows - 1);
        int best = 0;
        for (int j = 1; j < logits.cols; ++j) {
            if (row[j] > row[best]) best = j;
        }
        if (best == v.eos_id()) break;
        full_ids.push_back(best);
    }
    CHECK(cached_ids == full_ids);
}

TEST_CASE("checkpoint: save/load round-trip preserves decode behavior") {
    namespace fs = std::filesystem;
    tok::Vocab v = small_vocab();
    Rng rng(9);
    ModelParams<double> params = init_params<double>(small_hyper(), 21);
    CheckpointMeta meta;
    meta.hyper = params.hyper;
    meta.vocab_symbols = v.symbols();
    meta.patch_h = 2;
    meta.patch_w = 2;
    meta.img_h = 4;
    meta.img_w = 16;
    meta.channels = 3;

    fs::path path = fs::temp_directory_path() / "blockspot_ckpt_test.bin";
    save_checkpoint(path.string(), params, meta);
    auto [loaded, loaded_meta] = load_checkpoint<double>(path.string());
    CHECK(loaded_meta.vocab_symbols == v.symbols());
    CHECK(loaded_meta.patch_h == 2);
    CHECK(params_equal(loaded, params));

    SampleTokens probe = random_sample(rng, "");
    DecodeResult a = greedy_decode(params, probe.patches, v, 8);
    DecodeResult b = greedy_decode(loaded, probe.patches, v, 8);
    CHECK(a.ids == b.ids);
    CHECK(a.log_prob == b.log_prob);
    fs::remove(path);
}

TEST_CASE("checkpoint: corrupt files are rejected") {
    namespace fs = std::filesystem;
    fs::path path = fs::temp_directory_path() / "blockspot_ckpt_bad.bin";
    {
        std::ofstream out(path, std::ios::binary);
        out << "this is not a checkpoint\n";
    }
    CHECK_THROWS_AS(load_checkpoint<double>(path.string()), CheckpointError);

    // Truncated payload.
    tok::Vocab v = small_vocab();
    ModelParams<double> params = init_params<double>(small_hyper(), 23);
    CheckpointMeta meta;
    meta.hyper = params.hyper;
    meta.vocab_symbols = v.symbols();
    save_checkpoint(path.string(), params, meta);
    auto size = fs::file_size(path);
    fs::resize_file(path, size / 2);
    CHECK_THROWS_AS(load_checkpoint<double>(path.string()), CheckpointError);
    fs::remove(path);
}

TEST_CASE("float and double instantiations both train") {
    tok::Vocab v = small_vocab();
    std::vector<SampleTokens> data = constant_text_dataset(4, "DE", 10);
    TrainConfig cfg;
    cfg.steps = 20;
    cfg.batch_size = 4;
    TrainResult<float> r =
        train(init_params<float>(small_hyper(), 25), data, cfg, v.sep_id(), v.eos_id());
    CHECK(r.curve.size() == 20);
    CHECK(std::isfinite(r.curve.back().loss));
}
