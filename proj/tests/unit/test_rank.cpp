#include <doctest.h>

#include <cmath>
#include <set>

#include "fixtures.hpp"
#include "kgd/entity_track.hpp"
#include "kgd/rank.hpp"

using namespace kgd;
using doctest::Approx;

namespace {

ad::Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
    ad::Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
    Eigen::Index r = 0;
    for (const auto& row : rows) {
        Eigen::Index c = 0;
        for (double v : row) m(r, c++) = v;
        ++r;
    }
    return m;
}

KnowledgeBase two_entity_kb(bool only_first = false) {
    std::vector<KnowledgeSnippet> s = {{"hotel", "1", "Alpha House", "Can I cook?", "No.", "0"},
                                       {"hotel", "1", "Alpha House", "Is there parking?", "Yes.", "1"}};
    if (!only_first) {
        s.push_back({"hotel", "2", "Beta Inn", "Is there wifi?", "Yes.", "0"});
        s.push_back({"hotel", "2", "Beta Inn", "Are pets allowed?", "No.", "1"});
        s.push_back({"hotel", "3", "Gamma Rooms", "Is there a gym?", "No.", "0"});
    }
    return KnowledgeBase(s);
}

Dialogue say(std::vector<std::string> turns) {
    Dialogue d{"t", {}, std::nullopt};
    for (std::size_t i = 0; i < turns.size(); ++i) d.turns.push_back({i % 2 ? Speaker::System : Speaker::User, turns[i]});
    return d;
}

}  // namespace

TEST_SUITE("rank") {
    TEST_CASE("attention fixture with identity projections") {
        ad::Tape t;
        ParamStore ps;
        for (const char* n : {"q", "k", "v"}) ps.add_zeros(n, 2, 2).value = ad::Matrix::Identity(2, 2);
        ps.add_zeros("e", 2, 1).value = mat({{1.0}, {1.0}});
        MtlHead head{t.param(ps.get("q")), t.param(ps.get("k")), t.param(ps.get("v")), t.param(ps.get("e"))};
        const auto H = mat({{1, 0}, {0, 1}, {1, 1}});
        const auto out = mtl_forward(t.constant(mat({{1, 0}})), t.constant(H), {{0, 2}, {2, 3}}, head);

        const double s = 1.0 / std::sqrt(2.0);
        const double z = std::exp(s) + std::exp(0.0) + std::exp(s);
        const double a0 = std::exp(s) / z, a1 = 1.0 / z, a2 = std::exp(s) / z;
        CHECK(a0 == Approx(0.4011).epsilon(1e-3));
        CHECK(a1 == Approx(0.1978).epsilon(1e-3));
        const auto& a = out.attention.value();
        CHECK(std::abs(a(0, 0) - a0) < 1e-12);
        CHECK(std::abs(a(0, 1) - a1) < 1e-12);
        CHECK(std::abs(a(0, 2) - a2) < 1e-12);
        // s_1 = a0 [1,0] + a1 [0,1], s_2 = a2 [1,1]
        const auto& sums = out.entity_sums.value();
        CHECK(std::abs(sums(0, 0) - a0) < 1e-12);
        CHECK(std::abs(sums(0, 1) - a1) < 1e-12);
        CHECK(std::abs(sums(1, 0) - a2) < 1e-12);
        CHECK(std::abs(sums(1, 1) - a2) < 1e-12);
        const double l0 = a0 + a1, l1 = 2 * a2;
        const double p0 = std::exp(l0) / (std::exp(l0) + std::exp(l1));
        CHECK(std::abs(out.distribution.value()(0, 0) - p0) < 1e-12);
    }

    TEST_CASE("uniform attention over identical rows and a single full span") {
        ad::Tape t;
        Rng rng(3);
        ParamStore ps;
        for (const char* n : {"q", "k", "v"}) ps.add_normal(n, 3, 3, 1.0, rng);
        ps.add_normal("e", 3, 1, 1.0, rng);
        MtlHead head{t.param(ps.get("q")), t.param(ps.get("k")), t.param(ps.get("v")), t.param(ps.get("e"))};
        ad::Matrix H(4, 3);
        H.rowwise() = mat({{0.3, -1.0, 2.0}}).row(0);
        const auto out = mtl_forward(t.constant(mat({{1, 2, 3}})), t.constant(H), {{0, 4}}, head);
        for (int i = 0; i < 4; ++i) CHECK(out.attention.value()(0, i) == Approx(0.25));
        CHECK((out.entity_sums.value() - out.weighted.value().colwise().sum()).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(out.distribution.value()(0, 0) == Approx(1.0));
    }

    TEST_CASE("spans are validated") {
        CHECK_THROWS(validate_spans({}, 3));
        CHECK_THROWS(validate_spans({{0, 2}, {1, 3}}, 3));
        CHECK_THROWS(validate_spans({{0, 4}}, 3));
        CHECK_NOTHROW(validate_spans({{0, 1}, {2, 3}}, 3));
    }

    TEST_CASE("sparse features") {
        const auto kb = two_entity_kb();
        const auto d = say({"I like Alpha House", "ok", "and Beta Inn too"});
        const auto last = last_mentioned_entity(d, kb.entities());
        REQUIRE(last);
        CHECK(last->entity_id == "2");
        CHECK(extract_sparse_features(d, kb[0], kb.entities(), SparseVariant::WD).is_last_entity == 0);
        CHECK(extract_sparse_features(d, kb[2], kb.entities(), SparseVariant::WD).is_last_entity == 1);
        KnowledgeSnippet dom{"hotel", kDomainLevel, "hotel", "q", "a", "0"};
        CHECK(extract_sparse_features(d, dom, kb.entities(), SparseVariant::WD).is_domain_level == 1);

        KnowledgeSnippet hilton{"hotel", "9", "Hilton San Francisco Union Square", "q", "a", "0"};
        const auto u = say({"is it near Union Square?"});
        const auto f = extract_sparse_features(u, hilton, std::vector<EntityRef>{{"hotel", "9", hilton.entity_name}},
                                               SparseVariant::WD2);
        CHECK(f.unigram_in_dialogue == 1);
        CHECK(f.bigram_in_dialogue == 1);
        CHECK(f.is_last_entity == 0);
        CHECK(extract_sparse_features(u, hilton, std::vector<EntityRef>{}, SparseVariant::WD).unigram_in_dialogue == 0);
    }

    TEST_CASE("negative pools") {
        const auto kb = two_entity_kb();
        const auto d = say({"Alpha House or Beta Inn, can I cook at Alpha House?"});
        const std::vector<KnowledgeRef> gt = {{"hotel", "1", "0"}};
        const auto pools = negative_pools(gt, kb, d);
        for (auto i : pools.other_entities) CHECK(kb[i].entity_id == "2");
        CHECK(pools.other_entities.size() == 2);
        CHECK(pools.whole.size() == kb.size() - 1);
        Rng a(5), b(5);
        CHECK(sample_negatives(gt, kb, d, 4, a) == sample_negatives(gt, kb, d, 4, b));

        const auto lone = two_entity_kb(true);
        Rng r(1);
        const auto neg = sample_negatives(gt, lone, d, 1, r);
        REQUIRE(neg.size() == 1);
        CHECK(lone[neg[0]].ref() == KnowledgeRef{"hotel", "1", "1"});
    }

    TEST_CASE("entity candidates hold one truth at a uniform position") {
        const auto s = fixtures::mini_scene(20, 1);
        const auto& d = fixtures::named_turn(s);
        const auto gt_ref = d.label->knowledge_refs.front();
        const EntityRef gt = *s.kb.entity(gt_ref.domain, gt_ref.entity_id);
        std::array<double, 4> counts{};
        Rng rng(9);
        for (int i = 0; i < 1000; ++i) {
            const auto c = sample_entity_candidates(s.kb, d, gt, 4, rng);
            REQUIRE(c.entities.size() == 4);
            CHECK(c.entities[c.true_index] == gt);
            CHECK(std::count(c.entities.begin(), c.entities.end(), gt) == 1);
            for (const auto& e : c.entities) CHECK(e.domain == gt.domain);
            counts[c.true_index] += 1;
        }
        double chi2 = 0;
        for (double c : counts) chi2 += (c - 250.0) * (c - 250.0) / 250.0;
        CHECK(chi2 < 11.345);  // 99th percentile of chi-square with 3 degrees of freedom
    }

    TEST_CASE("auxiliary terms vanish with zero weights") {
        const auto s = fixtures::mini_scene(20, 2);
        const auto& d = fixtures::named_turn(s);
        auto c = fixtures::small_rank_config(4);
        c.lambda_domain = 0;
        c.lambda_entity = 0;
        const auto mtl = fixtures::scorer_for(s, c);
        c.use_mtl = false;
        const auto plain = fixtures::scorer_for(s, c);
        const auto gt = d.label->knowledge_refs.front();
        const auto& snip = s.kb[*s.kb.find(gt)];
        const auto f = extract_sparse_features(d, snip, s.kb.entities(), c.variant);
        Rng rng(1);
        const auto cands = sample_entity_candidates(s.kb, d, *s.kb.entity(gt.domain, gt.entity_id), 4, rng);
        ad::Tape t1, t2;
        const double a = mtl.pointwise_loss(t1, mtl.history_text(d), snip, f, true, &cands, 0).scalar();
        const double b = plain.pointwise_loss(t2, plain.history_text(d), snip, f, true, &cands, 0).scalar();
        CHECK(a == Approx(b).epsilon(1e-12));
    }

    TEST_CASE("full point-wise multi-task loss passes finite differences") {
        const auto s = fixtures::mini_scene(20, 3);
        const auto& d = fixtures::named_turn(s);
        auto model = fixtures::scorer_for(s, fixtures::small_rank_config(7));
        const auto gt = d.label->knowledge_refs.front();
        const auto& snip = s.kb[*s.kb.find(gt)];
        auto f = extract_sparse_features(d, snip, s.kb.entities(), SparseVariant::WD2);
        Rng rng(2);
        const auto cands = sample_entity_candidates(s.kb, d, *s.kb.entity(gt.domain, gt.entity_id), 4, rng);
        const auto history = model.history_text(d);
        const auto r = finite_difference_check(
            model.params(),
            [&](ad::Tape& t) { return model.pointwise_loss(t, history, snip, f, true, &cands, model.domain_index(gt.domain)); },
            1e-5, 3, 1);
        CHECK(r.max_relative_error < 1e-4);
    }

    TEST_CASE("point-wise ranking") {
        const auto s = fixtures::mini_scene(20, 4);
        const auto c = fixtures::small_rank_config(5);
        const auto model = fixtures::scorer_for(s, c);
        const auto d = say({"hello there, any tips for my trip?"});
        const auto one = pointwise_rank(model, d, s.kb, {3}, 1.0);
        REQUIRE(one.items.size() == 1);
        const auto f = extract_sparse_features(d, s.kb[3], s.kb.entities(), c.variant);
        CHECK(one.items[0].probability == Approx(model.probability(model.history_text(d), s.kb[3], f, 1.0, kAllFeatures)));

        // Named entities not mentioned anywhere: every sparse feature is zero.
        std::vector<std::size_t> cands;
        for (std::size_t i = 0; i < s.kb.size(); ++i)
            if (!s.kb[i].is_domain_level()) cands.push_back(i);
        auto refs = [](const RankedList& l) {
            std::vector<KnowledgeRef> out;
            for (const auto& it : l.items) out.push_back(it.ref);
            return out;
        };
        CHECK(refs(pointwise_rank(model, d, s.kb, cands, 1.0, 20)) == refs(pointwise_rank(model, d, s.kb, cands, 100.0, 20)));

        Rng rng(6);
        for (int trial = 0; trial < 10; ++trial) {
            const auto& dd = s.corpus[rng.uniform_index(s.corpus.size())];
            const auto l = pointwise_rank(model, dd, s.kb, {}, 1.0 + 99.0 * rng.uniform(), 10);
            for (std::size_t i = 1; i < l.items.size(); ++i) CHECK(l.items[i - 1].probability >= l.items[i].probability);
        }
    }

    TEST_CASE("list-wise distribution") {
        const auto s = fixtures::mini_scene(20, 5);
        const auto model = fixtures::scorer_for(s, fixtures::small_rank_config(6));
        const auto& d = fixtures::named_turn(s);
        const auto ref = s.kb[0].ref();
        for (double p : listwise_distribution(model, d, s.kb, {ref, ref, ref, ref, ref}, 100.0)) CHECK(p == Approx(0.2));
        Rng rng(8);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<KnowledgeRef> c;
            const std::size_t m = 1 + rng.uniform_index(5);
            for (auto i : rng.sample_without_replacement(s.kb.size(), m)) c.push_back(s.kb[i].ref());
            const auto p = listwise_distribution(model, d, s.kb, c, 100.0);
            CHECK(p.size() == m);
            double sum = 0;
            for (double x : p) sum += x;
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }

    TEST_CASE("sum-of-probabilities ensemble") {
        const KnowledgeRef A{"hotel", "1", "0"}, B{"hotel", "2", "0"};
        const RankedList s1{"t", {{A, 0.6}, {B, 0.5}}}, s2{"t", {{B, 0.9}, {A, 0.1}}};
        const auto e = ensemble_rank({s1, s2});
        CHECK(e.items[0].ref == B);
        CHECK(e.items[0].probability == Approx(1.4));
        CHECK(e.items[1].probability == Approx(0.7));
        const auto same = ensemble_rank({s1});
        CHECK(same.items[0].ref == A);
        CHECK(same.items[0].probability == 0.6);
    }

    TEST_CASE("ensemble argsort is invariant to duplicating systems") {
        Rng rng(10);
        std::vector<KnowledgeRef> refs;
        for (int i = 0; i < 8; ++i) refs.push_back({"hotel", std::to_string(i), "0"});
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<RankedList> systems;
            for (std::size_t k = 0, n = 1 + rng.uniform_index(4); k < n; ++k) {
                RankedList l{"t", {}};
                for (auto i : rng.sample_without_replacement(refs.size(), 5)) l.items.push_back({refs[i], rng.uniform()});
                sort_ranked(l.items);
                systems.push_back(l);
            }
            const std::size_t copies = 2 + rng.uniform_index(3);
            std::vector<RankedList> dup;
            for (std::size_t c = 0; c < copies; ++c) dup.insert(dup.end(), systems.begin(), systems.end());
            const auto a = ensemble_rank(systems, 8), b = ensemble_rank(dup, 8);
            REQUIRE(a.items.size() == b.items.size());
            for (std::size_t i = 0; i < a.items.size(); ++i) CHECK(a.items[i].ref == b.items[i].ref);
        }
    }

    TEST_CASE("list-wise training data from k-fold decoding") {
        const auto s = fixtures::mini_scene(30, 6);
        auto c = fixtures::small_rank_config(2);
        c.epochs = 1;
        c.learning_rate = 1e-2;
        const auto data = build_listwise_training_data(s.corpus, s.kb, 3, c, nullptr, 4);
        std::size_t labeled = 0;
        for (const auto& d : s.corpus) labeled += d.label && d.label->is_knowledge_seeking;
        CHECK(data.instances.size() + data.dropped == labeled);
        for (const auto& inst : data.instances) {
            CHECK(inst.candidates.size() == 5);
            const auto& gt = s.corpus[inst.dialogue].label->knowledge_refs;
            std::size_t hits = 0;
            for (const auto& r : inst.candidates) hits += std::find(gt.begin(), gt.end(), r) != gt.end();
            CHECK(hits == 1);
            CHECK(std::find(gt.begin(), gt.end(), inst.candidates[inst.true_index]) != gt.end());
        }
        std::set<std::size_t> folds;
        for (std::size_t i = 0; i < s.corpus.size(); ++i)
            if (s.corpus[i].label && s.corpus[i].label->is_knowledge_seeking) {
                CHECK(data.fold_of[i] < 3);
                folds.insert(data.fold_of[i]);
            }
        CHECK(folds.size() == 3);
    }

    TEST_CASE("ranked lists survive json") {
        const RankedList l{"t", {{{"hotel", "1", "0"}, 0.5}, {{"hotel", kDomainLevel, "2"}, 0.25}}};
        const auto back = ranked_from_json(ranked_to_json(l));
        CHECK(back.turn_id == "t");
        REQUIRE(back.items.size() == 2);
        CHECK(back.items[1].ref == l.items[1].ref);
        CHECK(back.items[1].probability == 0.25);
    }
}
