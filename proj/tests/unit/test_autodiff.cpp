#include <doctest.h>

#include "kgd/autodiff.hpp"
#include "kgd/encoder.hpp"
#include "kgd/models.hpp"
#include "kgd/params.hpp"

using namespace kgd;
using doctest::Approx;

TEST_SUITE("autodiff") {
    TEST_CASE("elementary ops pass finite differences") {
        Rng rng(1);
        ParamStore ps;
        auto& a = ps.add_normal("a", 3, 4, 1.0, rng);
        auto& b = ps.add_normal("b", 4, 2, 1.0, rng);
        auto& c = ps.add_normal("c", 1, 2, 1.0, rng);
        auto loss = [&](ad::Tape& t) {
            auto x = ad::tanh(ad::add_row(ad::matmul(t.param(a), t.param(b)), t.param(c)));
            auto y = ad::softmax_rows(ad::scale(x, 2.0));
            auto z = ad::l2_normalize_rows(ad::hadamard(y, ad::sigmoid(x)));
            return ad::add(ad::sum(ad::concat_rows({z, ad::row(x, 1)})), ad::cross_entropy(ad::row(x, 0), 1));
        };
        const auto r = finite_difference_check(ps, loss, 1e-5, 8, 3);
        CHECK(r.max_relative_error < 1e-6);
        CHECK(r.entries_checked > 0);
    }

    TEST_CASE("toy encoder with a BCE head passes finite differences") {
        Rng rng(2);
        Vocabulary vocab = Vocabulary::build({"can i cook at the lodge", "no"});
        EncoderConfig ec;
        ec.dim = 6;
        ec.trigram_buckets = 32;
        ToyEncoder enc("enc", ec);
        ParamStore ps;
        enc.init_params(ps, vocab.size(), rng);
        auto& w = ps.add_normal("w", 6, 1, 0.5, rng);
        const auto input = prepare_input(vocab, ec, {"<user>", "can", "i", "cook", "<kng>", "no"}, {0, 0, 0, 0, 1, 1});
        auto loss = [&](ad::Tape& t) {
            auto out = enc.encode(t, ps, input);
            return ad::bce_with_logits(ad::matmul(out.pooled, t.param(w)), 1.0);
        };
        CHECK(finite_difference_check(ps, loss, 1e-5, 6, 4).max_relative_error < 1e-4);
    }

    TEST_CASE("gradients vanish at a zero-loss point") {
        ParamStore ps;
        auto& x = ps.add_zeros("x", 1, 3);
        x.value << 1.0, -2.0, 0.5;
        ad::Tape t;
        auto d = ad::sub(t.param(x), t.constant(x.value));
        auto loss = ad::sum(ad::hadamard(d, d));
        CHECK(loss.scalar() == 0.0);
        t.backward(loss);
        CHECK(x.grad.cwiseAbs().maxCoeff() == 0.0);
    }

    TEST_CASE("losses match closed forms") {
        ad::Tape t;
        ad::Matrix row(1, 3);
        row << 1.0, 2.0, 3.0;
        const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
        CHECK(ad::cross_entropy(t.constant(row), 0).scalar() == Approx(lse - 1.0));
        CHECK(ad::bce_with_logits(t.scalar(0.0), 1.0).scalar() == Approx(std::log(2.0)));
        CHECK(ad::bce_with_logits(t.scalar(50.0), 1.0).scalar() == Approx(0.0).epsilon(1e-12));
    }

    TEST_CASE("AdamW with zero learning rate leaves parameters unchanged") {
        Rng rng(3);
        ParamStore ps;
        auto& p = ps.add_normal("p", 2, 2, 1.0, rng);
        const ParamStore before = ps;
        p.grad.setOnes();
        AdamW opt({0.0, 0.9, 0.999, 1e-8, 0.0});
        opt.step(ps);
        CHECK(ps.equals(before));
    }

    TEST_CASE("checkpoints round trip") {
        Rng rng(4);
        ParamStore ps;
        ps.add_normal("p", 3, 2, 1.0, rng);
        const auto path = std::filesystem::temp_directory_path() / "kgd_unit_ckpt.json";
        save_checkpoint(path, {"toy", {{"k", 1}}, {}, ps});
        const auto back = load_checkpoint(path, "toy");
        CHECK(back.params.equals(ps));
        CHECK_THROWS(load_checkpoint(path, "other"));
        std::filesystem::remove(path);
    }

    TEST_CASE("pair classifier training is seeded and separable data is learned") {
        std::vector<PairExample> ex;
        for (int i = 0; i < 10; ++i) {
            ex.push_back({"<user> do you have parking " + std::to_string(i), "<kng> parking", true});
            ex.push_back({"<user> goodbye friend " + std::to_string(i), "<kng> parking", false});
        }
        PairTrainConfig c;
        c.epochs = 50;
        c.learning_rate = 1e-2;
        c.batch_size = 4;
        c.encoder.dim = 8;
        c.encoder.trigram_buckets = 64;
        const auto m1 = train_pair_classifier(ex, c);
        int correct = 0;
        for (const auto& e : ex) correct += (m1.score(e.sentence1, e.sentence2) >= 0.5) == e.label;
        CHECK(correct == 20);
        c.epochs = 2;
        CHECK(train_pair_classifier(ex, c).params().equals(train_pair_classifier(ex, c).params()));
        c.learning_rate = 0;
        const auto frozen = train_pair_classifier(ex, c);
        PairClassifier fresh(frozen.vocab(), c);
        CHECK(frozen.params().equals(fresh.params()));
    }
}
