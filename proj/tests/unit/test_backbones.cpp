#include <doctest.h>

#include <cmath>

#include "ovml/backbones.hpp"
#include "ovml/gradcheck.hpp"

using namespace ovml;

namespace {

Tokenizer test_tokenizer() {
    return Tokenizer({"a", "video", "of", "water", "slide", "lion", "photo", "features"});
}

template <typename T>
double row_norm(const Tensor<T>& t) {
    double s = 0;
    for (int j = 0; j < t.cols(); ++j) s += static_cast<double>(t.at(0, j)) * t.at(0, j);
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("text encoder basics") {
    Tokenizer tok = test_tokenizer();
    ParameterStore<double> store;
    TextEncoderConfig cfg;
    cfg.d_clip = 16;
    cfg.layers = 2;
    cfg.n_heads = 2;
    cfg.joint_dim = 8;
    ToyTextEncoder<double> enc(store, cfg, tok.vocab_size(), 0);

    SUBCASE("outputs are unit norm and deterministic") {
        Tape<double> tape;
        auto e1 = enc.encode_text(tape, tok.tokenize("water slide"));
        auto e2 = enc.encode_text(tape, tok.tokenize("water slide"));
        CHECK(row_norm(tape.value(e1)) == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(tape.value(e1).bit_equal(tape.value(e2)));
    }

    SUBCASE("different labels are not perfectly aligned") {
        Tape<double> tape;
        auto e1 = enc.encode_text(tape, tok.tokenize("water slide"));
        auto e2 = enc.encode_text(tape, tok.tokenize("lion"));
        double cos = 0;
        for (int j = 0; j < 8; ++j) cos += tape.value(e1).at(0, j) * tape.value(e2).at(0, j);
        CHECK(cos < 1.0 - 1e-6);
    }

    SUBCASE("overlong sequence is an error") {
        std::vector<int> ids(cfg.max_len + 1, Tokenizer::kUnk);
        Tape<double> tape;
        CHECK_THROWS(enc.encode_text(tape, ids));
    }

    SUBCASE("soft prompt equal to table rows reproduces the hard-token path exactly") {
        auto prefix_ids = tok.tokenize("a video of");
        prefix_ids.pop_back();  // drop EOT; prompt tokens only
        auto label_ids = tok.tokenize("water slide");

        std::vector<int> full = prefix_ids;
        full.insert(full.end(), label_ids.begin(), label_ids.end());

        Tape<double> tape;
        auto hard = enc.encode_text(tape, full);
        auto soft = enc.encode_text_soft(tape, enc.token_rows(tape, prefix_ids), label_ids);
        CHECK(tape.value(hard).bit_equal(tape.value(soft)));
    }

    SUBCASE("zero soft prompt differs from absent prompt") {
        auto label_ids = tok.tokenize("lion");
        Tape<double> tape;
        auto with_zero =
            enc.encode_text_soft(tape, tape.constant(Tensor<double>(2, cfg.d_clip)), label_ids);
        auto absent = enc.encode_text(tape, label_ids);
        bool differ = false;
        for (int j = 0; j < 8; ++j)
            differ = differ || std::abs(tape.value(with_zero).at(0, j) -
                                        tape.value(absent).at(0, j)) > 1e-9;
        CHECK(differ);
    }

    SUBCASE("soft prompt width mismatch is an error") {
        Tape<double> tape;
        CHECK_THROWS(enc.encode_text_soft(tape, tape.constant(Tensor<double>(2, cfg.d_clip + 1)),
                                          tok.tokenize("lion")));
    }

    SUBCASE("gradient check w.r.t. a soft prompt coordinate") {
        ParameterStore<double> probe;
        probe.add("soft", seeded_init<double>({2, cfg.d_clip}, 5, InitScheme::normal_scaled),
                  true);
        auto label_ids = tok.tokenize("lion");
        auto build = [&](Tape<double>& tape) {
            auto e = enc.encode_text_soft(tape, tape.param_forced(probe.get("soft")), label_ids);
            return tape.sum_squares(tape.cell(e, 0, 3));
        };
        auto loss_fn = [&]() {
            Tape<double> tape;
            return tape.value(build(tape)).at(0, 0);
        };
        auto grad_fn = [&]() {
            Tape<double> tape;
            tape.backward(build(tape));
        };
        auto res = finite_diff_grad_check<double>(probe, "soft", loss_fn, grad_fn, 1e-5,
                                                  sample_coords(2 * cfg.d_clip, 8, 3));
        CHECK(res.max_rel_error < 1e-3);
        CHECK(res.max_rel_error < 1e-6);  // double precision should do much better
    }
}

TEST_CASE("vision backbone") {
    ParameterStore<double> store;
    VisionConfig cfg;
    cfg.grid = 3;
    cfg.d_vis = 16;
    cfg.layers = 3;
    cfg.n_heads = 2;
    cfg.joint_dim = 8;
    ToyVisionBackbone<double> vis(store, cfg, 0);

    Rng rng(9);
    std::vector<double> frame(cfg.patches());
    for (auto& v : frame) v = rng.normal();

    SUBCASE("identical frames give identical taps and a unit-norm embedding") {
        Tape<double> tape;
        auto a = vis.encode_frame(tape, frame);
        auto b = vis.encode_frame(tape, frame);
        REQUIRE(a.taps.size() == static_cast<std::size_t>(cfg.layers) + 1);
        for (std::size_t i = 0; i < a.taps.size(); ++i)
            CHECK(tape.value(a.taps[i]).bit_equal(tape.value(b.taps[i])));
        CHECK(row_norm(tape.value(a.embedding)) == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(tape.value(a.taps[1]).rows() == cfg.tokens());
        CHECK(tape.value(a.taps[1]).cols() == cfg.d_vis);
    }

    SUBCASE("perturbing one frame leaves other frames' taps unchanged") {
        std::vector<double> frame2 = frame;
        frame2[4] += 0.5;
        Tape<double> tape;
        auto a = vis.encode_frame(tape, frame);
        auto b = vis.encode_frame(tape, frame2);
        Tape<double> tape2;
        auto a_again = vis.encode_frame(tape2, frame);
        CHECK(tape.value(a.taps[2]).bit_equal(tape2.value(a_again.taps[2])));
        bool differ = false;
        const auto& ta = tape.value(a.taps[2]);
        const auto& tb = tape.value(b.taps[2]);
        for (std::size_t i = 0; i < ta.numel(); ++i) differ = differ || ta[i] != tb[i];
        CHECK(differ);
    }

    SUBCASE("wrong patch count is an error") {
        Tape<double> tape;
        std::vector<double> bad(cfg.patches() + 1, 0.0);
        CHECK_THROWS(vis.encode_frame(tape, bad));
    }
}

TEST_CASE("encoder-decoder LLM") {
    Tokenizer tok = test_tokenizer();
    ParameterStore<double> store;
    LlmConfig cfg;
    cfg.d_llm = 16;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.n_heads = 2;
    ToyEncDecLLM<double> llm(store, cfg, tok.vocab_size(), 0);

    auto template_ids = tok.tokenize("features of a lion photo");
    const int m = static_cast<int>(template_ids.size());

    SUBCASE("encoder output length is 1+M with the prefix at position 0") {
        Tape<double> tape;
        auto prefix = tape.constant(seeded_init<double>({1, cfg.d_llm}, 4,
                                                        InitScheme::normal_scaled));
        auto states = llm.encode(tape, prefix, template_ids);
        CHECK(tape.value(states).rows() == 1 + m);
        CHECK(tape.value(states).cols() == cfg.d_llm);
    }

    SUBCASE("different prefixes give different states") {
        Tape<double> tape;
        auto p1 = tape.constant(seeded_init<double>({1, cfg.d_llm}, 4, InitScheme::normal_scaled));
        auto p2 = tape.constant(seeded_init<double>({1, cfg.d_llm}, 5, InitScheme::normal_scaled));
        auto s1 = llm.encode(tape, p1, template_ids);
        auto s2 = llm.encode(tape, p2, template_ids);
        CHECK(!tape.value(s1).bit_equal(tape.value(s2)));
    }

    SUBCASE("prefix width mismatch is an error") {
        Tape<double> tape;
        auto bad = tape.constant(Tensor<double>(1, cfg.d_llm + 2));
        CHECK_THROWS(llm.encode(tape, bad, template_ids));
    }

    SUBCASE("decode_continuous shapes and errors") {
        Tape<double> tape;
        auto prefix = tape.constant(seeded_init<double>({1, cfg.d_llm}, 4,
                                                        InitScheme::normal_scaled));
        auto states = llm.encode(tape, prefix, template_ids);
        auto one = llm.decode_continuous(tape, states, 1);
        CHECK(tape.value(one).rows() == 1);
        CHECK(tape.value(one).cols() == cfg.d_llm);
        auto kl = llm.decode_continuous(tape, states, 25);
        CHECK(tape.value(kl).rows() == 25);
        CHECK_THROWS(llm.decode_continuous(tape, states, 0));
    }

    SUBCASE("gradient flows from a late decoded state back to the prefix") {
        ParameterStore<double> probe;
        probe.add("prefix", seeded_init<double>({1, cfg.d_llm}, 4, InitScheme::normal_scaled),
                  true);
        auto build = [&](Tape<double>& tape) {
            auto states = llm.encode(tape, tape.param_forced(probe.get("prefix")), template_ids);
            auto dec = llm.decode_continuous(tape, states, 6);
            return tape.sum_squares(tape.slice_rows(dec, 5, 1));
        };
        auto loss_fn = [&]() {
            Tape<double> tape;
            return tape.value(build(tape)).at(0, 0);
        };
        auto grad_fn = [&]() {
            Tape<double> tape;
            tape.backward(build(tape));
        };
        auto res = finite_diff_grad_check<double>(probe, "prefix", loss_fn, grad_fn, 1e-5,
                                                  sample_coords(cfg.d_llm, 8, 11));
        CHECK(res.max_rel_error < 1e-3);
    }

    SUBCASE("discrete decode is deterministic") {
        Tape<double> t1, t2;
        auto p1 = t1.constant(seeded_init<double>({1, cfg.d_llm}, 4, InitScheme::normal_scaled));
        auto p2 = t2.constant(seeded_init<double>({1, cfg.d_llm}, 4, InitScheme::normal_scaled));
        auto ids1 = llm.decode_discrete(t1, llm.encode(t1, p1, template_ids), 8);
        auto ids2 = llm.decode_discrete(t2, llm.encode(t2, p2, template_ids), 8);
        CHECK(ids1 == ids2);
    }

    SUBCASE("a decoder whose logits always favor EOT yields an empty output") {
        // Keep EOT out of the encoder input, then point the EOT embedding
        // along the first decoded state; its logit dominates at step 0.
        std::vector<int> ids_no_eot = template_ids;
        ids_no_eot.pop_back();
        Tensor<double> first_state;
        {
            Tape<double> tape;
            auto p = tape.constant(seeded_init<double>({1, cfg.d_llm}, 4,
                                                       InitScheme::normal_scaled));
            auto dec = llm.decode_continuous(tape, llm.encode(tape, p, ids_no_eot), 1);
            first_state = tape.value(dec);
        }
        Parameter<double>& emb = store.get("llm.tok_emb");
        Tensor<double> saved = emb.values;
        for (int j = 0; j < cfg.d_llm; ++j)
            emb.values.at(Tokenizer::kEot, j) = 10.0 * first_state.at(0, j);

        Tape<double> tape;
        auto p = tape.constant(seeded_init<double>({1, cfg.d_llm}, 4, InitScheme::normal_scaled));
        auto ids = llm.decode_discrete(tape, llm.encode(tape, p, ids_no_eot), 8);
        CHECK(ids.empty());
        emb.values = saved;
    }
}
