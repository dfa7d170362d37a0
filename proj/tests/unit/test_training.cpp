#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "jamident/siggen.hpp"
#include "jamident/tfmap.hpp"
#include "jamident/training.hpp"

using namespace jamident;
using namespace jamident::training;

namespace {

diffnet::ModelConfig narrow_config() {
    diffnet::ModelConfig c;
    c.embed_dim = 8;
    c.heads = 2;
    c.blocks = 1;
    c.num_classes = 3;
    return c;
}

TensorF random_image(std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<float> v(4800);
    for (auto& x : v) x = u(rng);
    return TensorF::from_data({3, 40, 40}, v);
}

// Flat buffer of n random images with labels cycling over `classes`.
struct Buffer {
    std::vector<float> images;
    std::vector<std::uint8_t> labels;
    ImageSet set() const {
        ImageSet s{images, labels, {}};
        s.indices.resize(labels.size());
        std::iota(s.indices.begin(), s.indices.end(), std::size_t{0});
        return s;
    }
};

Buffer random_buffer(std::size_t n, int classes) {
    Buffer b;
    for (std::size_t i = 0; i < n; ++i) {
        const auto img = random_image(1000 + i);
        b.images.insert(b.images.end(), img.data().begin(), img.data().end());
        b.labels.push_back(static_cast<std::uint8_t>(static_cast<int>(i) % classes));
    }
    return b;
}

std::vector<float> flat_params(const Model& m) {
    std::vector<float> out;
    for (const auto& p : m.params()) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
    return out;
}

} // namespace

TEST_CASE("mask counts") {
    MaskStrategy s;
    CHECK(s.masked_count(100) == 30);
    s.rate = 0.0;
    CHECK(s.masked_count(100) == 0);
    s.rate = 0.995;
    CHECK_THROWS_AS(s.masked_count(100), std::invalid_argument);
    s.rate = -0.1;
    CHECK_THROWS_AS(s.masked_count(100), std::invalid_argument);
    s.rate = 0.3;
    Rng rng = make_rng(1);
    CHECK(sample_mask(s, 100, rng).size() == 70);
    s.mode = MaskMode::continuous;
    CHECK(sample_mask(s, 100, rng).size() == 70);
}

TEST_CASE("continuous masks wrap around the sequence end") {
    const auto vis = continuous_mask(100, 10, 95);
    REQUIRE(vis.size() == 90);
    CHECK(std::is_sorted(vis.begin(), vis.end()));
    for (std::size_t i : {95u, 96u, 97u, 98u, 99u, 0u, 1u, 2u, 3u, 4u})
        CHECK_FALSE(std::binary_search(vis.begin(), vis.end(), i));
    CHECK(vis.front() == 5);
    CHECK(vis.back() == 94);
}

TEST_CASE("random continuous masks hide one cyclic run") {
    MaskStrategy s{MaskMode::continuous, 0.3};
    Rng rng = make_rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const auto vis = sample_mask(s, 100, rng);
        std::vector<bool> hidden(100, true);
        for (auto i : vis) hidden[i] = false;
        int edges = 0;
        for (std::size_t i = 0; i < 100; ++i) edges += hidden[i] != hidden[(i + 1) % 100];
        CHECK(edges == 2);
    }
}

TEST_CASE("discrete masks hide every patch at the masking rate") {
    MaskStrategy s{MaskMode::discrete, 0.3};
    Rng rng = make_rng(9);
    const int draws = 100000;
    std::vector<int> hidden(100, draws);
    for (int t = 0; t < draws; ++t)
        for (auto i : sample_mask(s, 100, rng)) --hidden[i];
    for (int h : hidden) CHECK(std::abs(static_cast<double>(h) / draws - 0.3) <= 0.01);
}

TEST_CASE("ensemble probabilities") {
    Model m(narrow_config(), 3);
    m.set_training(false);
    std::vector<TensorF> imgs = {random_image(1), random_image(2), random_image(3)};
    Rng rng = make_rng(5);
    const auto p = ensemble_probs(m, imgs, {}, rng);
    REQUIRE(p.shape() == ad::Shape{3, 3});
    for (std::size_t b = 0; b < 3; ++b) {
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) s += p.at(b, k);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }

    SUBCASE("one clean branch reduces to the plain softmax") {
        MaskEnsembleConfig plain{1, {MaskMode::discrete, 0.0}, 0.0};
        Rng r2 = make_rng(6);
        const auto q = ensemble_probs(m, imgs, plain, r2);
        for (std::size_t b = 0; b < 3; ++b) {
            const auto ref = ad::softmax(ad::reshape(m.forward(imgs[b]), {1, 3}));
            for (std::size_t k = 0; k < 3; ++k) CHECK(q.at(b, k) == doctest::Approx(ref.at(0, k)).epsilon(1e-5));
        }
    }
    SUBCASE("identical branches average to one branch") {
        MaskEnsembleConfig four{4, {MaskMode::discrete, 0.0}, 0.0};
        Rng r2 = make_rng(6), r3 = make_rng(7);
        const auto q4 = ensemble_probs(m, imgs, four, r2);
        const auto q1 = ensemble_probs(m, imgs, {1, {MaskMode::discrete, 0.0}, 0.0}, r3);
        for (std::size_t i = 0; i < q4.numel(); ++i) CHECK(q4.data()[i] == doctest::Approx(q1.data()[i]).epsilon(1e-5));
    }
    SUBCASE("same stream, same answer") {
        Rng a = make_rng(11), b = make_rng(11);
        const auto x = ensemble_forward(m, imgs[0], {}, a);
        const auto y = ensemble_forward(m, imgs[0], {}, b);
        CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
    }
}

TEST_CASE("consistency objective") {
    Model m(narrow_config(), 8);
    m.set_training(false);
    std::vector<TensorF> imgs = {random_image(21), random_image(22), random_image(23), random_image(24)};
    const std::vector<int> labels = {0, 1, 2, 0};
    const auto plain_ce = [&] {
        const auto out = m.forward_batch(imgs);
        return ad::cross_entropy(out.logits, std::span<const int>(labels)).item();
    }();

    SUBCASE("zero weights reduce to cross-entropy") {
        ConsistencyConfig c;
        c.feature_weight = 0.0;
        c.prob_weight = 0.0;
        Rng rng = make_rng(1);
        const auto l = consistency_loss(m, imgs, labels, c, rng);
        CHECK(l.total.item() == doctest::Approx(plain_ce).epsilon(1e-5));
        CHECK(l.ce.item() == doctest::Approx(plain_ce).epsilon(1e-5));
    }
    SUBCASE("identical branches have zero consistency terms") {
        ConsistencyConfig c;
        c.mask.rate = 0.0;
        c.noise_std = 0.0;
        Rng rng = make_rng(1);
        const auto l = consistency_loss(m, imgs, labels, c, rng);
        CHECK(std::abs(l.feature.item()) <= 1e-10);
        CHECK(std::abs(l.prob.item()) <= 1e-10);
        CHECK(l.total.item() == doctest::Approx(plain_ce).epsilon(1e-5));
    }
    SUBCASE("the combined loss never falls below the cross-entropy") {
        for (std::uint64_t s = 0; s < 10; ++s) {
            Rng rng = make_rng(s);
            const auto l = consistency_loss(m, imgs, labels, {}, rng);
            CHECK(l.feature.item() > 0.0);
            CHECK(l.prob.item() > 0.0);
            CHECK(l.total.item() >= l.ce.item());
            CHECK(l.total.item() ==
                  doctest::Approx(l.ce.item() + 0.2 * l.feature.item() + 0.2 * l.prob.item()).epsilon(1e-5));
        }
    }
}

TEST_CASE("sgd with and without momentum") {
    auto make = [] {
        ad::ParamList<float> ps;
        ps.push_back({"w", TensorF::from_data({2}, {1.0f, -1.0f}, true), true});
        return ps;
    };
    auto set_grad = [](ad::ParamList<float>& ps) {
        auto g = ps[0].tensor.mutable_grad();
        g[0] = 0.5f;
        g[1] = -2.0f;
    };
    auto plain = make();
    Sgd s0(0.1);
    set_grad(plain);
    s0.step(plain);
    CHECK(plain[0].tensor.data()[0] == doctest::Approx(0.95));
    CHECK_FALSE(plain[0].tensor.has_grad());

    auto heavy = make();
    Sgd s1(0.1, 0.9);
    set_grad(heavy);
    s1.step(heavy);
    set_grad(heavy);
    s1.step(heavy);
    // v1 = g, v2 = 0.9 g + g
    CHECK(heavy[0].tensor.data()[0] == doctest::Approx(1.0 - 0.1 * 0.5 * 2.9));
    CHECK(heavy[0].tensor.data()[1] == doctest::Approx(-1.0 + 0.1 * 2.0 * 2.9));
}

TEST_CASE("training records one train entry per epoch and is deterministic") {
    const auto buf = random_buffer(24, 3);
    TrainOptions o;
    o.train.epochs = 3;
    o.train.lr = 0.05;
    o.train.batch_size = 8;
    o.train.seed = 17;
    std::vector<EpochRecord> seen;
    o.progress = [&](const EpochRecord& r) { seen.push_back(r); };

    for (auto strategy : {Strategy::baseline, Strategy::masked, Strategy::consistent}) {
        CAPTURE(to_string(strategy));
        o.strategy = strategy;
        seen.clear();
        Model a(narrow_config(), 2), b(narrow_config(), 2);
        const auto ra = train(a, buf.set(), o);
        REQUIRE(ra.history.size() == 3);
        CHECK(ra.steps == 9);
        CHECK(seen.size() == 3);
        for (std::size_t e = 0; e < 3; ++e) {
            CHECK(ra.history[e].epoch == e + 1);
            CHECK(ra.history[e].split == "train");
            CHECK(std::isfinite(ra.history[e].loss));
            CHECK(ra.history[e].accuracy >= 0.0);
            CHECK(ra.history[e].accuracy <= 1.0);
        }
        const auto rb = train(b, buf.set(), o);
        CHECK(flat_params(a) == flat_params(b));
        CHECK(ra.history.back().loss == rb.history.back().loss);
    }
}

TEST_CASE("strategy names round-trip") {
    for (auto s : {Strategy::baseline, Strategy::masked, Strategy::consistent})
        CHECK(strategy_from_string(to_string(s)) == s);
    CHECK_FALSE(strategy_from_string("adversarial").has_value());
    CHECK(mask_mode_from_string("continuous") == MaskMode::continuous);
    CHECK_FALSE(mask_mode_from_string("random").has_value());
}

TEST_CASE("a non-finite loss aborts training") {
    const auto buf = random_buffer(8, 3);
    Model m(narrow_config(), 2);
    m.head_b().mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
    TrainOptions o;
    o.train.epochs = 1;
    o.train.batch_size = 4;
    CHECK_THROWS_AS(train(m, buf.set(), o), std::runtime_error);
}

TEST_CASE("bad training settings are rejected") {
    const auto buf = random_buffer(4, 3);
    Model m(narrow_config(), 2);
    TrainOptions o;
    o.train.batch_size = 0;
    CHECK_THROWS_AS(train(m, buf.set(), o), std::invalid_argument);
    o.train.batch_size = 2;
    o.train.lr = 0.0;
    CHECK_THROWS_AS(train(m, buf.set(), o), std::invalid_argument);
    o.train.lr = 0.1;
    o.strategy = Strategy::masked;
    o.mask.mask.rate = 1.0;
    CHECK_THROWS_AS(train(m, buf.set(), o), std::invalid_argument);
}

TEST_CASE("the model overfits a 200-sample two-class subset") {
    Buffer buf;
    for (std::size_t i = 0; i < 200; ++i) {
        const auto type = i % 2 ? siggen::JammingType::BPSK : siggen::JammingType::TFM;
        const auto ex = siggen::synth_example(type, 8.0, {}, 3000 + i);
        const auto img = tfmap::signal_to_image(ex.received);
        buf.images.insert(buf.images.end(), img.pixels.begin(), img.pixels.end());
        buf.labels.push_back(static_cast<std::uint8_t>(i % 2));
    }
    diffnet::ModelConfig cfg;
    cfg.num_classes = 2;
    Model m(cfg, 1);
    TrainOptions o;
    o.train.epochs = 20;
    o.train.lr = 0.05;
    o.train.batch_size = 25;  // no ragged final batch
    o.train.seed = 3;
    const auto r = train(m, buf.set(), o);

    m.set_training(false);
    const auto set = buf.set();
    std::size_t correct = 0;
    for (std::size_t k = 0; k < set.size(); ++k)
        correct += diffnet::predict(m, set.image(k, cfg.image_numel())) == set.label(k);
    const double acc = static_cast<double>(correct) / 200.0;
    INFO("final epoch loss " << r.history.back().loss << ", accuracy " << acc);
    CHECK(acc >= 0.95);
}

TEST_CASE("batch-norm recalibration matches the batch statistics") {
    const auto buf = random_buffer(6, 3);
    const auto set = buf.set();
    Model m(narrow_config(), 5);
    std::vector<TensorF> imgs;
    for (std::size_t k = 0; k < set.size(); ++k) imgs.push_back(set.image(k, 4800));

    // stale statistics first
    m.set_training(true);
    m.forward_batch(std::span<const TensorF>(imgs.data(), 2));
    recalibrate_batchnorm(m, set, set.size());
    CHECK_FALSE(m.training());
    CHECK(m.batchnorm_momentum() == doctest::Approx(0.1));
    const auto mean_before = m.param("embed.bn.running_mean").tensor.data();
    const std::vector<float> snapshot(mean_before.begin(), mean_before.end());
    const auto eval_logits = m.forward_batch(imgs).logits;
    m.set_training(true);
    const auto batch_logits = m.forward_batch(imgs).logits;
    m.set_training(false);
    // running variance is the unbiased estimate over 600 rows, so agreement is to ~1e-3
    for (std::size_t i = 0; i < eval_logits.numel(); ++i)
        CHECK(eval_logits.data()[i] == doctest::Approx(batch_logits.data()[i]).epsilon(2e-3));

    recalibrate_batchnorm(m, set, set.size());
    const auto mean_after = m.param("embed.bn.running_mean").tensor.data();
    CHECK(std::equal(snapshot.begin(), snapshot.end(), mean_after.begin()));
}
