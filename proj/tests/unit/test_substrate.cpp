#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "ovml/checkpoint.hpp"
#include "ovml/gradcheck.hpp"
#include "ovml/nn.hpp"
#include "ovml/optim.hpp"
#include "ovml/rng.hpp"
#include "ovml/tape.hpp"
#include "ovml/tokenizer.hpp"

using namespace ovml;

TEST_CASE("seeded_init schemes") {
    auto z = seeded_init<float>({3, 4}, 7, InitScheme::zeros);
    for (std::size_t i = 0; i < z.numel(); ++i) CHECK(z[i] == 0.0f);

    auto o = seeded_init<float>({2, 2}, 7, InitScheme::ones);
    for (std::size_t i = 0; i < o.numel(); ++i) CHECK(o[i] == 1.0f);

    auto a = seeded_init<float>({5, 3}, 42, InitScheme::normal_scaled);
    auto b = seeded_init<float>({5, 3}, 42, InitScheme::normal_scaled);
    CHECK(a.bit_equal(b));

    auto c = seeded_init<float>({5, 3}, 43, InitScheme::normal_scaled);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.numel(); ++i) any_diff = any_diff || a[i] != c[i];
    CHECK(any_diff);

    CHECK_THROWS(init_scheme_from_string("bogus"));
}

TEST_CASE("scaled dot attention basics") {
    Tape<double> tape;

    SUBCASE("single key/value row returns that row") {
        auto q = tape.constant(Tensor<double>::row({0.3, -0.2}));
        auto k = tape.constant(Tensor<double>::row({1.0, 2.0}));
        auto v = tape.constant(Tensor<double>::row({5.0, -7.0}));
        auto out = scaled_dot_attention(tape, q, k, v);
        CHECK(tape.value(out).at(0, 0) == doctest::Approx(5.0));
        CHECK(tape.value(out).at(0, 1) == doctest::Approx(-7.0));
    }

    SUBCASE("equal logits average the values") {
        Tensor<double> keys(2, 2);
        keys.at(0, 0) = 1.0;
        keys.at(1, 1) = 1.0;
        Tensor<double> vals(2, 2);
        vals.at(0, 0) = 2.0;
        vals.at(0, 1) = 0.0;
        vals.at(1, 0) = 0.0;
        vals.at(1, 1) = 4.0;
        auto q = tape.constant(Tensor<double>::row({0.0, 0.0}));  // both logits zero
        auto out = scaled_dot_attention(tape, q, tape.constant(keys), tape.constant(vals));
        CHECK(tape.value(out).at(0, 0) == doctest::Approx(1.0));
        CHECK(tape.value(out).at(0, 1) == doctest::Approx(2.0));
    }

    SUBCASE("masking key 2 of 2 reduces to single-key attention") {
        Tensor<double> keys(2, 2);
        keys.at(0, 0) = 0.5;
        keys.at(1, 0) = -0.4;
        Tensor<double> vals(2, 2);
        vals.at(0, 0) = 3.0;
        vals.at(1, 1) = 9.0;
        auto q = tape.constant(Tensor<double>::row({0.7, 0.1}));
        auto out = scaled_dot_attention(tape, q, tape.constant(keys), tape.constant(vals),
                                        std::vector<std::uint8_t>{1, 0});
        CHECK(tape.value(out).at(0, 0) == doctest::Approx(3.0));
        CHECK(tape.value(out).at(0, 1) == doctest::Approx(0.0));
    }

    SUBCASE("all-masked row is an error") {
        auto q = tape.constant(Tensor<double>::row({0.7, 0.1}));
        auto k = tape.constant(Tensor<double>::row({1.0, 2.0}));
        auto v = tape.constant(Tensor<double>::row({5.0, -7.0}));
        CHECK_THROWS_WITH_AS(scaled_dot_attention(tape, q, k, v, std::vector<std::uint8_t>{0}),
                             "degenerate mask", std::runtime_error);
    }

    SUBCASE("attention rows are convex combinations") {
        Rng rng(11);
        Tensor<double> q(3, 4), k(5, 4), v(5, 4);
        for (std::size_t i = 0; i < q.numel(); ++i) q[i] = rng.normal();
        for (std::size_t i = 0; i < k.numel(); ++i) k[i] = rng.normal();
        for (std::size_t i = 0; i < v.numel(); ++i) v[i] = rng.normal();
        Tape<double> t2;
        auto scores = t2.scale(t2.matmul_nt(t2.constant(q), t2.constant(k)), 0.5);
        auto probs = t2.softmax_rows(scores);
        for (int i = 0; i < 3; ++i) {
            double s = 0;
            for (int j = 0; j < 5; ++j) s += t2.value(probs).at(i, j);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("transformer block with zeroed output projections is identity") {
    ParameterStore<double> store;
    AttentionSpec spec(2, 8, false);
    auto block = TransformerBlockParams<double>::create(store, "blk", spec, true, 3);
    for (auto* p : {block.attn.wo, block.mlp.w2, block.mlp.b2})
        for (std::size_t i = 0; i < p->values.numel(); ++i) p->values[i] = 0.0;

    Tape<double> tape;
    Rng rng(5);
    Tensor<double> x(4, 8);
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    auto out = block.forward(tape, tape.constant(x));
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(tape.value(out)[i] == doctest::Approx(x[i]).epsilon(1e-12));
}

TEST_CASE("transformer block is permutation equivariant") {
    ParameterStore<double> store;
    AttentionSpec spec(2, 8, false);
    auto block = TransformerBlockParams<double>::create(store, "blk", spec, false, 9);

    Rng rng(17);
    Tensor<double> x(5, 8);
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();

    Tape<double> tape;
    auto out = block.forward(tape, tape.constant(x));

    std::vector<int> perm = {3, 0, 4, 1, 2};
    Tensor<double> xp(5, 8);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 8; ++j) xp.at(i, j) = x.at(perm[i], j);
    Tape<double> tape2;
    auto outp = block.forward(tape2, tape2.constant(xp));

    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 8; ++j)
            CHECK(tape2.value(outp).at(i, j) ==
                  doctest::Approx(tape.value(out).at(perm[i], j)).epsilon(1e-9));
}

TEST_CASE("block forward is deterministic for a fixed seed and differs across dims") {
    auto run = [](int dim, std::uint64_t seed) {
        ParameterStore<double> store;
        auto block = TransformerBlockParams<double>::create(store, "blk",
                                                            AttentionSpec(2, dim, false), false,
                                                            seed);
        Tape<double> tape;
        Rng rng(23);
        Tensor<double> x(3, dim);
        for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
        auto out = block.forward(tape, tape.constant(x));
        return fnv1a64_bytes(tape.value(out).data(), tape.value(out).numel() * sizeof(double));
    };
    CHECK(run(8, 1) == run(8, 1));
    CHECK(run(8, 1) != run(16, 1));
}

TEST_CASE("finite difference grad check on simple losses") {
    SUBCASE("quadratic loss: analytic gradient equals p") {
        ParameterStore<double> store;
        store.add("p", seeded_init<double>({1, 6}, 19, InitScheme::normal_scaled), true);
        auto loss_fn = [&]() {
            double s = 0;
            const auto& v = store.get("p").values;
            for (std::size_t i = 0; i < v.numel(); ++i) s += 0.5 * v[i] * v[i];
            return s;
        };
        auto grad_fn = [&]() {
            Tape<double> tape;
            auto p = tape.param_forced(store.get("p"));
            auto loss = tape.scale(tape.sum_squares(p), 0.5);
            tape.backward(loss);
        };
        auto res = finite_diff_grad_check<double>(store, "p", loss_fn, grad_fn, 1e-6,
                                                  sample_coords(6, 6, 0));
        CHECK(res.max_rel_error < 1e-8);
    }

    SUBCASE("loss through one attention block") {
        ParameterStore<double> store;
        auto block = TransformerBlockParams<double>::create(store, "blk",
                                                            AttentionSpec(2, 8, false), true, 31);
        Rng rng(3);
        Tensor<double> x(4, 8);
        for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();

        auto build = [&](Tape<double>& tape) {
            auto out = block.forward(tape, tape.constant(x));
            return tape.sum_squares(out);
        };
        auto loss_fn = [&]() {
            Tape<double> tape;
            return tape.value(build(tape)).at(0, 0);
        };
        for (const char* name : {"blk.attn.wq", "blk.attn.wo", "blk.mlp.w1", "blk.ln1.gain"}) {
            auto grad_fn = [&]() {
                Tape<double> tape;
                tape.backward(build(tape));
            };
            store.zero_grads();
            auto res = finite_diff_grad_check<double>(
                store, name, loss_fn, grad_fn, 1e-5,
                sample_coords(store.get(name).values.numel(), 10, 77));
            INFO(name);
            CHECK(res.max_rel_error < 1e-6);
        }
    }

    SUBCASE("non-deterministic loss is rejected") {
        ParameterStore<double> store;
        store.add("p", seeded_init<double>({1, 2}, 19, InitScheme::ones), true);
        int calls = 0;
        auto loss_fn = [&]() { return static_cast<double>(++calls); };
        CHECK_THROWS_WITH_AS(finite_diff_grad_check<double>(store, "p", loss_fn, [] {}, 1e-6,
                                                            {0}),
                             "loss not reproducible", std::runtime_error);
    }
}

TEST_CASE("adamw") {
    SUBCASE("zero grad, zero decay leaves parameter unchanged") {
        ParameterStore<float> store;
        store.add("w", seeded_init<float>({2, 2}, 1, InitScheme::ones), true);
        auto before = store.get("w").values;
        store.zero_grads();
        AdamW<float> opt({.lr = 1e-2});
        opt.step(store);
        CHECK(store.get("w").values.bit_equal(before));
    }

    SUBCASE("decoupled decay shrinks by (1 - lr*wd)") {
        ParameterStore<float> store;
        store.add("w", Tensor<float>::row({2.0f}), true);
        store.zero_grads();
        AdamW<float> opt({.lr = 0.1, .weight_decay = 0.5});
        opt.step(store);
        CHECK(store.get("w").values[0] == doctest::Approx(2.0f * (1.0f - 0.1f * 0.5f)));
    }

    SUBCASE("first step with unit gradient moves by about lr") {
        ParameterStore<float> store;
        store.add("w", Tensor<float>::row({0.0f}), true);
        store.zero_grads();
        store.get("w").grad[0] = 1.0f;
        AdamW<float> opt({.lr = 1e-3});
        opt.step(store);
        // bias-corrected first step: lr * 1 / (sqrt(1) + eps)
        CHECK(store.get("w").values[0] == doctest::Approx(-1e-3).epsilon(1e-4));
    }

    SUBCASE("frozen parameters untouched") {
        ParameterStore<float> store;
        store.add("w", Tensor<float>::row({1.5f}), false);
        store.zero_grads();
        store.get("w").grad[0] = 1.0f;
        AdamW<float> opt({.lr = 0.1, .weight_decay = 0.1});
        opt.step(store);
        CHECK(store.get("w").values[0] == 1.5f);
        CHECK(store.get("w").values.bit_equal(*store.get("w").frozen_snapshot));
    }

    SUBCASE("non-positive lr is an error") { CHECK_THROWS(AdamW<float>({.lr = 0.0})); }
}

TEST_CASE("checkpoint round trip is byte exact") {
    ParameterStore<float> store;
    store.add("a.w", seeded_init<float>({3, 5}, 2, InitScheme::normal_scaled), true);
    store.add("b.bias", seeded_init<float>({1, 4}, 3, InitScheme::normal_scaled), false);

    const std::string path = "test_ckpt.bin";
    save_checkpoint(store, path);
    const std::string bytes1 = detail::read_file_bytes(path);

    ParameterStore<float> store2;
    store2.add("a.w", Tensor<float>(3, 5), true);
    store2.add("b.bias", Tensor<float>(1, 4), false);
    load_checkpoint(store2, path);
    CHECK(store2.get("a.w").values.bit_equal(store.get("a.w").values));
    CHECK(store2.get("b.bias").values.bit_equal(store.get("b.bias").values));

    save_checkpoint(store2, path);
    const std::string bytes2 = detail::read_file_bytes(path);
    CHECK(bytes1 == bytes2);

    SUBCASE("truncated file errors out") {
        detail::write_file_bytes(path, bytes1.substr(0, bytes1.size() / 2));
        ParameterStore<float> store3;
        store3.add("a.w", Tensor<float>(3, 5), true);
        store3.add("b.bias", Tensor<float>(1, 4), false);
        CHECK_THROWS(load_checkpoint(store3, path));
    }
    std::filesystem::remove(path);
}

TEST_CASE("duplicate parameter names are rejected") {
    ParameterStore<float> store;
    store.add("x", Tensor<float>(1, 1), true);
    CHECK_THROWS(store.add("x", Tensor<float>(1, 1), true));
}

TEST_CASE("tokenizer") {
    Tokenizer tok({"water", "slide", "lion"});

    SUBCASE("known words with EOT appended") {
        auto ids = tok.tokenize("water slide");
        REQUIRE(ids.size() == 3);
        CHECK(ids[2] == Tokenizer::kEot);
        CHECK(ids[0] != ids[1]);
        CHECK(ids[0] >= Tokenizer::kNumSpecials);
    }

    SUBCASE("empty string tokenizes to [EOT]") {
        auto ids = tok.tokenize("");
        REQUIRE(ids.size() == 1);
        CHECK(ids[0] == Tokenizer::kEot);
    }

    SUBCASE("normalization collapses case and punctuation") {
        CHECK(tok.tokenize("Water  SLIDE!") == tok.tokenize("water slide"));
    }

    SUBCASE("unknown words map to UNK") {
        auto ids = tok.tokenize("zebra");
        CHECK(ids[0] == Tokenizer::kUnk);
    }

    SUBCASE("detokenize inverts tokenize for in-vocabulary text") {
        CHECK(tok.detokenize(tok.tokenize("Lion water")) == "lion water");
    }

    SUBCASE("vocabulary file round trip") {
        const std::string path = "test_vocab.txt";
        tok.save(path);
        Tokenizer tok2 = Tokenizer::load(path);
        CHECK(tok2.tokenize("water slide lion") == tok.tokenize("water slide lion"));
        CHECK(tok2.vocab_size() == tok.vocab_size());
        std::filesystem::remove(path);
    }
}

TEST_CASE("tape loss primitives") {
    SUBCASE("bce_with_logits matches naive formula") {
        Tape<double> tape;
        auto z = tape.constant(Tensor<double>::row({0.0}));
        auto loss = tape.bce_with_logits(z, {1}, 1.0);
        CHECK(tape.value(loss).at(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }

    SUBCASE("softmax_nll uniform scores give ln(n)") {
        Tape<double> tape;
        auto z = tape.constant(Tensor<double>::row({1.0, 1.0, 1.0, 1.0}));
        auto loss = tape.softmax_nll(z, {2});
        CHECK(tape.value(loss).at(0, 0) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }
}
