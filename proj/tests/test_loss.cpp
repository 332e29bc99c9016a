#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "dseg/loss.hpp"
#include "fd_oracle.hpp"
#include "test_util.hpp"

using namespace dseg;
using namespace dseg::test;

namespace {

// 1-D embedding map from a flat list of values plus labels.
std::pair<EmbeddingMap, LabelMap> line_fixture(const std::vector<double>& xs,
                                               const std::vector<int>& labs) {
    EmbeddingMap emb(1, static_cast<int>(xs.size()), 1);
    LabelMap labels(1, static_cast<int>(xs.size()));
    emb.values = xs;
    labels.values = labs;
    return {emb, labels};
}

}  // namespace

TEST_CASE("cluster_means basics") {
    SECTION("singleton") {
        EmbeddingMap emb(1, 1, 2);
        emb.values = {3.0, 4.0};
        LabelMap labels(1, 1);
        labels.values = {1};
        auto stats = cluster_means(emb, labels);
        REQUIRE(stats.count() == 1);
        CHECK(stats.counts[0] == 1);
        CHECK(stats.mean(0)[0] == 3.0);
        CHECK(stats.mean(0)[1] == 4.0);
    }
    SECTION("midpoint of two members") {
        EmbeddingMap emb(1, 2, 2);
        emb.values = {0.0, 0.0, 2.0, 0.0};
        LabelMap labels(1, 2);
        labels.values = {1, 1};
        auto stats = cluster_means(emb, labels);
        REQUIRE(stats.count() == 1);
        CHECK(stats.counts[0] == 2);
        CHECK(stats.mean(0)[0] == 1.0);
        CHECK(stats.mean(0)[1] == 0.0);
    }
    SECTION("all background is empty") {
        EmbeddingMap emb(2, 2, 3);
        LabelMap labels(2, 2);
        auto stats = cluster_means(emb, labels);
        CHECK(stats.count() == 0);
    }
    SECTION("shape mismatch throws") {
        EmbeddingMap emb(2, 3, 1);
        LabelMap labels(3, 2);
        CHECK_THROWS_AS(cluster_means(emb, labels), std::invalid_argument);
    }
    SECTION("counts sum to foreground pixels, means exact") {
        Xoshiro256 rng(11);
        auto emb = random_embedding(6, 7, 3, rng);
        auto labels = random_labels(6, 7, 4, rng);
        auto stats = cluster_means(emb, labels);
        std::size_t total = 0;
        for (int c : stats.counts) total += c;
        CHECK(total == labels.foreground_count());
    }
}

TEST_CASE("variance_term") {
    SECTION("members at their centers give zero") {
        EmbeddingMap emb(1, 4, 2);
        emb.values = {1.0, 1.0, 1.0, 1.0, -3.0, 2.0, -3.0, 2.0};
        LabelMap labels(1, 4);
        labels.values = {1, 1, 2, 2};
        auto stats = cluster_means(emb, labels);
        CHECK(variance_term(emb, labels, stats, 0.5, Norm::L2) == 0.0);
    }
    SECTION("two 1-D points {0,2}, delta_v=0.5, L2") {
        auto [emb, labels] = line_fixture({0.0, 2.0}, {1, 1});
        auto stats = cluster_means(emb, labels);
        const double got = variance_term(emb, labels, stats, 0.5, Norm::L2);
        // Scalar-expression oracle: mean 1, each pixel at distance 1.
        const double mu = (0.0 + 2.0) / 2.0;
        const double oracle = (std::pow(std::max(0.0, std::abs(mu - 0.0) - 0.5), 2) +
                               std::pow(std::max(0.0, std::abs(mu - 2.0) - 0.5), 2)) /
                              2.0;
        CHECK(got == Catch::Approx(0.25).epsilon(1e-15));
        CHECK(got == Catch::Approx(oracle).epsilon(1e-15));
    }
    SECTION("cluster inside the margin contributes nothing") {
        auto [emb, labels] = line_fixture({0.9, 1.1, 5.0}, {1, 1, 2});
        auto stats = cluster_means(emb, labels);
        CHECK(variance_term(emb, labels, stats, 0.5, Norm::L2) == 0.0);
    }
}

TEST_CASE("distance_term") {
    SECTION("single cluster is defined zero") {
        auto [emb, labels] = line_fixture({1.0, 3.0}, {1, 1});
        auto stats = cluster_means(emb, labels);
        CHECK(distance_term(stats, 1.5, Norm::L2) == 0.0);
    }
    SECTION("means beyond 2*delta_d are not repulsed") {
        auto [emb, labels] = line_fixture({0.0, 10.0}, {1, 2});
        auto stats = cluster_means(emb, labels);
        CHECK(distance_term(stats, 1.5, Norm::L2) == 0.0);
    }
    SECTION("two 1-D means {0,1}, delta_d=1.5") {
        auto [emb, labels] = line_fixture({0.0, 1.0}, {1, 2});
        auto stats = cluster_means(emb, labels);
        const double got = distance_term(stats, 1.5, Norm::L2);
        // Ordered-pair oracle: both (a,b) and (b,a) contribute (3-1)^2 = 4.
        const double oracle = (4.0 + 4.0) / (2.0 * 1.0);
        CHECK(got == Catch::Approx(4.0).epsilon(1e-15));
        CHECK(got == Catch::Approx(oracle).epsilon(1e-15));
    }
}

TEST_CASE("regularization_term") {
    SECTION("means at origin") {
        EmbeddingMap emb(1, 2, 2);
        emb.values = {1.0, 0.0, -1.0, 0.0};
        LabelMap labels(1, 2);
        labels.values = {1, 1};
        auto stats = cluster_means(emb, labels);
        CHECK(regularization_term(stats, Norm::L2) == 0.0);
    }
    SECTION("mean (3,4)") {
        EmbeddingMap emb(1, 1, 2);
        emb.values = {3.0, 4.0};
        LabelMap labels(1, 1);
        labels.values = {1};
        auto stats = cluster_means(emb, labels);
        CHECK(regularization_term(stats, Norm::L2) == Catch::Approx(5.0).epsilon(1e-15));
        CHECK(regularization_term(stats, Norm::L1) == Catch::Approx(7.0).epsilon(1e-15));
    }
}

TEST_CASE("discriminative_loss composition and defaults") {
    LossConfig cfg;
    CHECK(cfg.alpha == 1.0);
    CHECK(cfg.beta == 1.0);
    CHECK(cfg.gamma == 0.001);
    CHECK(cfg.delta_v == 0.5);
    CHECK(cfg.delta_d == 1.5);

    SECTION("margins satisfied with mean at origin gives exact zero") {
        // One tight cluster centered exactly on the origin.
        EmbeddingMap emb(1, 2, 2);
        emb.values = {0.1, 0.0, -0.1, 0.0};
        LabelMap labels(1, 2);
        labels.values = {1, 1};
        auto zero = discriminative_loss(emb, labels, cfg);
        CHECK(zero.l_var == 0.0);
        CHECK(zero.l_dist == 0.0);
        CHECK(zero.l_reg == 0.0);
        CHECK(zero.total == 0.0);
    }

    SECTION("terms compose linearly under the weights") {
        auto [emb, labels] = line_fixture({0.0, 2.0, 10.0, 10.0}, {1, 1, 2, 2});
        auto res = discriminative_loss(emb, labels, cfg);
        // mu = {1, 10}: l_var = 0.125, l_dist = 0 (gap 9), l_reg = 5.5.
        CHECK(res.l_var == Catch::Approx(0.125).epsilon(1e-15));
        CHECK(res.l_dist == 0.0);
        CHECK(res.l_reg == Catch::Approx(5.5).epsilon(1e-15));
        CHECK(res.total == Catch::Approx(0.1305).epsilon(1e-15));

        auto stats = cluster_means(emb, labels);
        const double composed =
            cfg.alpha * variance_term(emb, labels, stats, cfg.delta_v, cfg.norm) +
            cfg.beta * distance_term(stats, cfg.delta_d, cfg.norm) +
            cfg.gamma * regularization_term(stats, cfg.norm);
        CHECK(res.total == composed);
    }

    SECTION("no clusters yields all-zero breakdown") {
        EmbeddingMap emb(3, 3, 2);
        LabelMap labels(3, 3);
        auto res = discriminative_loss(emb, labels, cfg);
        CHECK(res.total == 0.0);
    }
}

TEST_CASE("LossConfig validation") {
    LossConfig cfg;
    CHECK(!validate(cfg).has_value());
    cfg.delta_d = 0.4;  // <= delta_v
    CHECK(validate(cfg).has_value());
    cfg.delta_v = -1.0;
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
    LossConfig neg;
    neg.gamma = -0.5;
    CHECK_THROWS_AS(validate(neg), std::invalid_argument);
}

TEST_CASE("loss_backward gradient") {
    SECTION("flat region has zero gradient") {
        // Hinges inactive: tight clusters far apart, gamma = 0.
        LossConfig cfg;
        cfg.gamma = 0.0;
        auto [emb, labels] = line_fixture({0.9, 1.1, 10.0, 10.2}, {1, 1, 2, 2});
        auto [loss, grad] = loss_backward(emb, labels, cfg);
        CHECK(loss.total == 0.0);
        for (double g : grad.values) CHECK(g == 0.0);
    }

    SECTION("matches central finite differences on random fixtures (L2)") {
        LossConfig cfg;  // delta_v 0.5, delta_d 1.5
        Xoshiro256 rng(101);
        for (int trial = 0; trial < 5; ++trial) {
            auto emb = random_embedding(8, 8, 4, rng);
            auto labels = random_labels(8, 8, 3, rng);
            auto [loss, grad] = loss_backward(emb, labels, cfg);
            auto fd = finite_difference_gradient(
                [&](const EmbeddingMap& e) {
                    return discriminative_loss(e, labels, cfg).total;
                },
                emb);
            CHECK(max_rel_error(grad.values, fd.values) < 1e-6);
        }
    }

    SECTION("matches finite differences under the L1 norm") {
        LossConfig cfg;
        cfg.norm = Norm::L1;
        Xoshiro256 rng(202);
        auto emb = random_embedding(6, 6, 3, rng);
        auto labels = random_labels(6, 6, 3, rng);
        auto [loss, grad] = loss_backward(emb, labels, cfg);
        auto fd = finite_difference_gradient(
            [&](const EmbeddingMap& e) {
                return discriminative_loss(e, labels, cfg).total;
            },
            emb);
        CHECK(max_rel_error(grad.values, fd.values) < 1e-6);
    }

    SECTION("single cluster of two 1-D points") {
        LossConfig cfg;
        cfg.beta = 0.0;
        cfg.gamma = 0.0;
        auto [emb, labels] = line_fixture({0.0, 2.0}, {1, 1});
        auto [loss, grad] = loss_backward(emb, labels, cfg);
        CHECK(loss.total == Catch::Approx(0.25).epsilon(1e-15));
        auto fd = finite_difference_gradient(
            [&](const EmbeddingMap& e) {
                return discriminative_loss(e, labels, cfg).total;
            },
            emb);
        CHECK(max_rel_error(grad.values, fd.values) < 1e-6);
        CHECK(grad.values[0] == Catch::Approx(-grad.values[1]).epsilon(1e-12));
    }

    SECTION("background pixels get exactly zero gradient") {
        LossConfig cfg;
        Xoshiro256 rng(303);
        auto emb = random_embedding(8, 8, 3, rng);
        auto labels = random_labels(8, 8, 3, rng);
        auto [loss, grad] = loss_backward(emb, labels, cfg);
        for (std::size_t p = 0; p < labels.values.size(); ++p) {
            if (labels.values[p] != 0) continue;
            for (int k = 0; k < 3; ++k) CHECK(grad.values[p * 3 + k] == 0.0);
        }
        CHECK(grad.all_finite());
    }

    SECTION("coincident pixels do not produce NaN") {
        // Norm subgradient at the zero vector is defined 0.
        auto [emb, labels] = line_fixture({1.0, 1.0, 8.0}, {1, 1, 2});
        LossConfig cfg;
        auto [loss, grad] = loss_backward(emb, labels, cfg);
        CHECK(grad.all_finite());
    }
}

TEST_CASE("per_class_loss") {
    LossConfig cfg;
    SECTION("single class equals discriminative_loss exactly") {
        Xoshiro256 rng(404);
        auto emb = random_embedding(7, 5, 3, rng);
        auto labels = random_labels(7, 5, 3, rng);
        LabelMap semantic(7, 5);
        for (std::size_t p = 0; p < labels.values.size(); ++p)
            semantic.values[p] = labels.values[p] != 0 ? 1 : 0;
        auto whole = discriminative_loss(emb, labels, cfg);
        auto per = per_class_loss(emb, semantic, labels, cfg);
        CHECK(per.l_var == whole.l_var);
        CHECK(per.l_dist == whole.l_dist);
        CHECK(per.l_reg == whole.l_reg);
        CHECK(per.total == whole.total);

        auto [wb, wg] = loss_backward(emb, labels, cfg);
        auto [pb, pg] = per_class_loss_backward(emb, semantic, labels, cfg);
        CHECK(pb.total == wb.total);
        for (std::size_t i = 0; i < wg.values.size(); ++i)
            CHECK(pg.values[i] == wg.values[i]);
    }

    SECTION("clusters of different classes exert no forces") {
        // Two classes, one instance each, identical mean embeddings. Within
        // a class C = 1, so l_dist stays zero despite the coincident means.
        EmbeddingMap emb(1, 4, 2);
        emb.values = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
        LabelMap semantic(1, 4);
        semantic.values = {1, 1, 2, 2};
        LabelMap instances(1, 4);
        instances.values = {1, 1, 2, 2};
        auto res = per_class_loss(emb, semantic, instances, cfg);
        CHECK(res.l_dist == 0.0);
        CHECK(res.l_var == 0.0);
    }

    SECTION("two-class fixture equals the sum of single-class runs") {
        Xoshiro256 rng(505);
        auto emb = random_embedding(6, 6, 3, rng);
        LabelMap semantic(6, 6);
        LabelMap instances(6, 6);
        for (std::size_t p = 0; p < semantic.values.size(); ++p) {
            semantic.values[p] = static_cast<int>(rng.uniform_int(0, 2));
            instances.values[p] = static_cast<int>(rng.uniform_int(1, 3));
            if (semantic.values[p] == 0) instances.values[p] = 0;
        }
        auto both = per_class_loss(emb, semantic, instances, cfg);

        LossBreakdown manual;
        for (int cls = 1; cls <= 2; ++cls) {
            LabelMap masked(6, 6);
            for (std::size_t p = 0; p < masked.values.size(); ++p)
                masked.values[p] = semantic.values[p] == cls ? instances.values[p] : 0;
            manual += discriminative_loss(emb, masked, cfg);
        }
        CHECK(both.total == Catch::Approx(manual.total).epsilon(1e-15));
        CHECK(both.l_var == Catch::Approx(manual.l_var).epsilon(1e-15));

        LossConfig mean_cfg = cfg;
        mean_cfg.class_reduction = ClassReduction::Mean;
        auto averaged = per_class_loss(emb, semantic, instances, mean_cfg);
        CHECK(averaged.total == Catch::Approx(manual.total / 2.0).epsilon(1e-15));
    }
}

TEST_CASE("loss invariance properties") {
    LossConfig cfg;
    Xoshiro256 rng(606);

    SECTION("permutation of instance labels") {
        for (int trial = 0; trial < 20; ++trial) {
            auto emb = random_embedding(8, 8, 3, rng);
            auto labels = random_labels(8, 8, 4, rng);
            auto base = discriminative_loss(emb, labels, cfg);
            auto relabeled = relabel(labels, rng);
            auto perm = discriminative_loss(emb, relabeled, cfg);
            CHECK(rel_diff(base.total, perm.total) <= 1e-12);
            CHECK(rel_diff(base.l_var, perm.l_var) <= 1e-12);
            CHECK(rel_diff(base.l_dist, perm.l_dist) <= 1e-12);
            CHECK(rel_diff(base.l_reg, perm.l_reg) <= 1e-12);
        }
    }

    SECTION("rotation invariance, L2 only") {
        for (int trial = 0; trial < 20; ++trial) {
            auto emb = random_embedding(8, 8, 3, rng);
            auto labels = random_labels(8, 8, 3, rng);
            auto base = discriminative_loss(emb, labels, cfg);
            auto rotated = apply_matrix(emb, random_orthogonal(3, rng));
            auto rot = discriminative_loss(rotated, labels, cfg);
            CHECK(rel_diff(base.l_var, rot.l_var) <= 1e-9);
            CHECK(rel_diff(base.l_dist, rot.l_dist) <= 1e-9);
            CHECK(rel_diff(base.l_reg, rot.l_reg) <= 1e-9);
        }
    }

    SECTION("translation leaves l_var and l_dist unchanged") {
        for (int trial = 0; trial < 20; ++trial) {
            auto emb = random_embedding(8, 8, 3, rng);
            auto labels = random_labels(8, 8, 3, rng);
            auto base = discriminative_loss(emb, labels, cfg);
            std::vector<double> t = {rng.uniform(-3, 3), rng.uniform(-3, 3),
                                     rng.uniform(-3, 3)};
            auto moved = discriminative_loss(translate(emb, t), labels, cfg);
            CHECK(rel_diff(base.l_var, moved.l_var) <= 1e-9);
            CHECK(rel_diff(base.l_dist, moved.l_dist) <= 1e-9);
        }
    }

    SECTION("non-negativity of all terms") {
        for (int trial = 0; trial < 20; ++trial) {
            auto emb = random_embedding(6, 6, 2, rng);
            auto labels = random_labels(6, 6, 4, rng);
            for (Norm norm : {Norm::L2, Norm::L1}) {
                LossConfig c = cfg;
                c.norm = norm;
                auto res = discriminative_loss(emb, labels, c);
                CHECK(res.l_var >= 0.0);
                CHECK(res.l_dist >= 0.0);
                CHECK(res.l_reg >= 0.0);
            }
        }
    }

    SECTION("zero-loss characterization on constructed fixtures") {
        for (int trial = 0; trial < 10; ++trial) {
            auto fx = zero_loss_fixture(8, 8, 3, 4, cfg.delta_v, cfg.delta_d, rng);
            auto res = discriminative_loss(fx.emb, fx.labels, cfg);
            CHECK(res.l_var == 0.0);
            CHECK(res.l_dist == 0.0);
        }
    }
}
