#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fseg/metrics.hpp"
#include "fseg/random.hpp"

using namespace fseg;

namespace {

constexpr double kEps = 1e-8;

MetricsRow row_reference(size_t tp, size_t fp, size_t fn, size_t tn) {
    MetricsRow r;
    const double TP = (double)tp, FP = (double)fp, FN = (double)fn, TN = (double)tn;
    r.miou = (TP + kEps) / (TP + FP + FN + kEps);
    r.mdsc = (2 * TP + kEps) / (2 * TP + FP + FN + kEps);
    r.recall = (TP + kEps) / (TP + FN + kEps);
    r.precision = (TP + kEps) / (TP + FP + kEps);
    r.accuracy = (TP + TN) / (TP + FP + FN + TN);
    r.f2 = (5 * r.precision * r.recall + kEps) / (4 * r.precision + r.recall + kEps);
    return r;
}

// brute-force two-sided signed-rank p over all sign assignments
double wilcoxon_enumerated(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> absd;
    std::vector<int> sign;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (d == 0.0) continue;
        absd.push_back(std::fabs(d));
        sign.push_back(d > 0 ? 1 : -1);
    }
    const size_t n = absd.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t x, size_t y) { return absd[x] < absd[y]; });
    std::vector<long> rank2(n);
    for (size_t i = 0; i < n;) {
        size_t j = i;
        while (j + 1 < n && absd[order[j + 1]] == absd[order[i]]) ++j;
        for (size_t k = i; k <= j; ++k) rank2[order[k]] = (long)(i + 1 + j + 1);
        i = j + 1;
    }
    long total2 = 0, w2 = 0;
    for (size_t k = 0; k < n; ++k) {
        total2 += rank2[k];
        if (sign[k] > 0) w2 += rank2[k];
    }
    const long lo = std::min(w2, total2 - w2), hi = std::max(w2, total2 - w2);
    size_t extreme = 0;
    for (size_t bits = 0; bits < (size_t(1) << n); ++bits) {
        long s = 0;
        for (size_t k = 0; k < n; ++k)
            if (bits & (size_t(1) << k)) s += rank2[k];
        if (s <= lo || s >= hi) ++extreme;
    }
    return std::min(1.0, (double)extreme / std::pow(2.0, (double)n));
}

}  // namespace

TEST_CASE("confusion counts on a 4x4 hand case") {
    // gt: 4 positives; pred hits 3 of them plus 1 false alarm
    Tensor<float> gt(Shape{1, 4, 4}, {1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
    Tensor<float> pred(Shape{1, 4, 4}, {1, 1, 1, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
    auto c = confusion(pred, gt);
    CHECK(c.tp == 3);
    CHECK(c.fp == 1);
    CHECK(c.fn == 1);
    CHECK(c.tn == 11);

    auto r = metrics_row(c);
    CHECK(r.miou == doctest::Approx(0.6).epsilon(1e-8));
    CHECK(r.mdsc == doctest::Approx(0.75).epsilon(1e-8));
    CHECK(r.recall == doctest::Approx(0.75).epsilon(1e-8));
    CHECK(r.precision == doctest::Approx(0.75).epsilon(1e-8));
    CHECK(r.accuracy == doctest::Approx(14.0 / 16.0).epsilon(1e-12));
    CHECK(r.f2 == doctest::Approx(0.75).epsilon(1e-8));
}

TEST_CASE("perfect and empty predictions") {
    Tensor<float> ones(Shape{1, 2, 2}, {1, 1, 1, 1});
    auto p = metrics_row(confusion(ones, ones));
    CHECK(p.miou == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.mdsc == doctest::Approx(1.0).epsilon(1e-12));

    Tensor<float> zeros(Shape{1, 2, 2}, {0, 0, 0, 0});
    auto e = metrics_row(confusion(zeros, zeros));
    // tp = fp = fn = 0: the smoothing resolves 0/0 to 1
    CHECK(e.miou == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(e.mdsc == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(e.accuracy == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("metrics match a pixel-loop confusion on random pairs") {
    Rng rng(51);
    for (int rep = 0; rep < 50; ++rep) {
        const size_t h = 3 + rng.below(12), w = 3 + rng.below(12);
        std::vector<float> pv(h * w), gv(h * w);
        for (auto& v : pv) v = (float)rng.uniform();
        for (auto& v : gv) v = rng.bernoulli(0.4) ? 1.0f : 0.0f;
        Tensor<float> pred(Shape{1, h, w}, std::vector<float>(pv));
        Tensor<float> gt(Shape{1, h, w}, std::vector<float>(gv));

        size_t tp = 0, fp = 0, fn = 0, tn = 0;
        for (size_t i = 0; i < h * w; ++i) {
            const bool p = pv[i] >= 0.5f, g = gv[i] >= 0.5f;
            if (p && g) ++tp;
            else if (p) ++fp;
            else if (g) ++fn;
            else ++tn;
        }
        auto c = confusion(pred, gt);
        CHECK(c.tp == tp);
        CHECK(c.fp == fp);
        CHECK(c.fn == fn);
        CHECK(c.tn == tn);

        auto got = metrics_row(c);
        auto ref = row_reference(tp, fp, fn, tn);
        CHECK(std::abs(got.miou - ref.miou) < 1e-12);
        CHECK(std::abs(got.mdsc - ref.mdsc) < 1e-12);
        CHECK(std::abs(got.recall - ref.recall) < 1e-12);
        CHECK(std::abs(got.precision - ref.precision) < 1e-12);
        CHECK(std::abs(got.accuracy - ref.accuracy) < 1e-12);
        CHECK(std::abs(got.f2 - ref.f2) < 1e-12);
    }
}

TEST_CASE("dice and jaccard obey dsc = 2 iou / (1 + iou)") {
    Rng rng(53);
    for (int rep = 0; rep < 50; ++rep) {
        ConfusionCounts c;
        c.tp = 1 + rng.below(200);
        c.fp = rng.below(100);
        c.fn = rng.below(100);
        c.tn = rng.below(500);
        auto r = metrics_row(c);
        CHECK(r.mdsc == doctest::Approx(2.0 * r.miou / (1.0 + r.miou)).epsilon(1e-7));
    }
}

TEST_CASE("f2 equals dsc when precision equals recall") {
    ConfusionCounts c;
    c.tp = 6;
    c.fp = 2;
    c.fn = 2;
    c.tn = 10;
    auto r = metrics_row(c);
    CHECK(r.precision == doctest::Approx(r.recall).epsilon(1e-12));
    CHECK(r.f2 == doctest::Approx(r.mdsc).epsilon(1e-7));
}

TEST_CASE("confusion rejects shape mismatch") {
    Tensor<float> a(Shape{1, 2, 2}, {0, 0, 0, 0});
    Tensor<float> b(Shape{1, 2, 3}, {0, 0, 0, 0, 0, 0});
    CHECK_THROWS_AS(confusion(a, b), MetricsError);
}

TEST_CASE("signed-rank p equals the exhaustive enumeration on the 8-pair fixture") {
    std::vector<double> a{0.82, 0.75, 0.91, 0.68, 0.79, 0.88, 0.73, 0.95};
    std::vector<double> b{0.80, 0.78, 0.85, 0.69, 0.70, 0.86, 0.77, 0.90};
    const double got = wilcoxon_signed_rank(a, b);
    const double ref = wilcoxon_enumerated(a, b);
    CHECK(std::abs(got - ref) < 1e-10);
    CHECK(got > 0.0);
    CHECK(got <= 1.0);
    CHECK(std::abs(wilcoxon_signed_rank(b, a) - got) < 1e-15);
}

TEST_CASE("signed-rank handles tied magnitudes via average ranks") {
    std::vector<double> a{0.5, 0.5, 0.5, 0.9, 0.9, 0.3, 0.8, 0.1};
    std::vector<double> b{0.4, 0.4, 0.6, 0.7, 0.7, 0.4, 0.6, 0.3};
    const double got = wilcoxon_signed_rank(a, b);
    const double ref = wilcoxon_enumerated(a, b);
    CHECK(std::abs(got - ref) < 1e-10);
}

TEST_CASE("signed-rank edge cases") {
    std::vector<double> same{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
    CHECK(wilcoxon_signed_rank(same, same) == 1.0);

    std::vector<double> a{1, 2, 3, 4, 5};
    std::vector<double> b{2, 3, 4, 5, 6};
    CHECK_THROWS_AS(wilcoxon_signed_rank(a, b), MetricsError);

    std::vector<double> c{1, 2, 3};
    CHECK_THROWS_AS(wilcoxon_signed_rank(c, a), MetricsError);
}

TEST_CASE("signed-rank agrees with enumeration on random small samples") {
    Rng rng(59);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<double> a(10), b(10);
        for (size_t i = 0; i < a.size(); ++i) {
            a[i] = rng.uniform();
            b[i] = rng.uniform();
        }
        CHECK(std::abs(wilcoxon_signed_rank(a, b) - wilcoxon_enumerated(a, b)) < 1e-10);
    }
}

TEST_CASE("paired t-test sanity") {
    std::vector<double> a{0.82, 0.75, 0.91, 0.68, 0.79, 0.88, 0.73, 0.95};
    std::vector<double> b{0.80, 0.78, 0.85, 0.69, 0.70, 0.86, 0.77, 0.90};
    const double p = paired_ttest(a, b);
    CHECK(p > 0.0);
    CHECK(p <= 1.0);
    CHECK(std::abs(paired_ttest(b, a) - p) < 1e-12);
}

TEST_CASE("report text format") {
    MetricsReport rep;
    MetricsRow r;
    r.id = "x";
    r.miou = 0.5;
    r.mdsc = 0.625;
    rep.rows.push_back(r);
    rep.finalize();
    rep.has_pvalue = true;
    rep.pvalue_vs = "base";
    rep.pvalue = 0.03125;
    const std::string s = format_report(rep);
    CHECK(s.find("id=x miou=0.500000 mdsc=0.625000") == 0);
    CHECK(s.find("id=MEAN") != std::string::npos);
    CHECK(s.find("PVALUE vs=base p=0.031250") != std::string::npos);
}

TEST_CASE("report JSON round trip") {
    MetricsReport rep;
    Rng rng(61);
    for (int i = 0; i < 3; ++i) {
        MetricsRow r;
        r.id = "s" + std::to_string(i);
        r.miou = rng.uniform();
        r.mdsc = rng.uniform();
        r.recall = rng.uniform();
        r.precision = rng.uniform();
        r.accuracy = rng.uniform();
        r.f2 = rng.uniform();
        rep.rows.push_back(r);
    }
    rep.finalize();
    rep.has_pvalue = true;
    rep.pvalue_vs = "other";
    rep.pvalue = 0.25;

    auto back = report_from_json(report_to_json(rep));
    REQUIRE(back.rows.size() == rep.rows.size());
    for (size_t i = 0; i < rep.rows.size(); ++i) {
        CHECK(back.rows[i].id == rep.rows[i].id);
        CHECK(back.rows[i].miou == rep.rows[i].miou);
        CHECK(back.rows[i].f2 == rep.rows[i].f2);
    }
    CHECK(back.mean.mdsc == rep.mean.mdsc);
    CHECK(back.has_pvalue);
    CHECK(back.pvalue == rep.pvalue);
    CHECK(back.pvalue_vs == rep.pvalue_vs);
}
