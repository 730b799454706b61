#pragma once

// Evaluation metrics, report aggregation, and paired significance testing.

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fseg/data.hpp"
#include "fseg/model.hpp"
#include "fseg/tensor.hpp"
#include "json.hpp"

namespace fseg {

struct MetricsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfusionCounts {
    uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    uint64_t total() const { return tp + fp + fn + tn; }
};

inline ConfusionCounts confusion(const Tensor<float>& pred, const Tensor<float>& gt) {
    if (pred.shape() != gt.shape())
        throw MetricsError("confusion: prediction and ground truth shapes differ");
    ConfusionCounts c;
    for (size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.data()[i] >= 0.5f;
        const bool g = gt.data()[i] >= 0.5f;
        if (p && g)
            ++c.tp;
        else if (p && !g)
            ++c.fp;
        else if (!p && g)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

struct MetricsRow {
    std::string id;
    double miou = 0, mdsc = 0, recall = 0, precision = 0, accuracy = 0, f2 = 0;
};

inline MetricsRow metrics_row(const ConfusionCounts& c, double eps = 1e-8) {
    MetricsRow r;
    const double tp = (double)c.tp, fp = (double)c.fp, fn = (double)c.fn, tn = (double)c.tn;
    r.miou = (tp + eps) / (tp + fp + fn + eps);
    r.mdsc = (2.0 * tp + eps) / (2.0 * tp + fp + fn + eps);
    r.recall = (tp + eps) / (tp + fn + eps);
    r.precision = (tp + eps) / (tp + fp + eps);
    r.accuracy = (tp + tn) / (tp + fp + fn + tn);
    r.f2 = (5.0 * r.precision * r.recall + eps) / (4.0 * r.precision + r.recall + eps);
    return r;
}

struct MetricsReport {
    std::vector<MetricsRow> rows;
    MetricsRow mean;  // id == "MEAN"
    bool has_pvalue = false;
    std::string pvalue_vs;
    double pvalue = 1.0;

    void finalize() {
        mean = MetricsRow{};
        mean.id = "MEAN";
        if (rows.empty()) return;
        for (const auto& r : rows) {
            mean.miou += r.miou;
            mean.mdsc += r.mdsc;
            mean.recall += r.recall;
            mean.precision += r.precision;
            mean.accuracy += r.accuracy;
            mean.f2 += r.f2;
        }
        const double n = (double)rows.size();
        mean.miou /= n;
        mean.mdsc /= n;
        mean.recall /= n;
        mean.precision /= n;
        mean.accuracy /= n;
        mean.f2 /= n;
    }
};

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank, two-sided. Zero differences dropped, ties take
// average ranks. Small samples (n <= 25) use the exact null distribution of
// the signed-rank sum via subset-sum counting over doubled ranks; larger
// samples fall back to the normal approximation with a tie-corrected
// variance sigma^2 = sum(r_i^2) / 4.

inline double wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw MetricsError("paired test: length mismatch");
    std::vector<double> absd;
    std::vector<int> sign;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (d == 0.0) continue;
        absd.push_back(std::fabs(d));
        sign.push_back(d > 0 ? 1 : -1);
    }
    if (absd.empty()) return 1.0;
    const size_t n = absd.size();
    if (n < 6) throw MetricsError("paired test: fewer than 6 usable pairs");

    // average ranks, doubled so ties stay integral
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t x, size_t y) { return absd[x] < absd[y]; });
    std::vector<int64_t> rank2(n, 0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && absd[order[j + 1]] == absd[order[i]]) ++j;
        const int64_t r2 = (int64_t)(i + 1 + j + 1);  // 2 * average rank
        for (size_t k = i; k <= j; ++k) rank2[order[k]] = r2;
        i = j + 1;
    }

    int64_t wplus2 = 0, total2 = 0;
    for (size_t k = 0; k < n; ++k) {
        total2 += rank2[k];
        if (sign[k] > 0) wplus2 += rank2[k];
    }

    if (n <= 25) {
        // exact distribution of 2*W+ under random signs
        std::vector<double> count((size_t)total2 + 1, 0.0);
        count[0] = 1.0;
        for (size_t k = 0; k < n; ++k)
            for (int64_t s = total2; s >= rank2[k]; --s)
                count[(size_t)s] += count[(size_t)(s - rank2[k])];
        const double denom = std::pow(2.0, (double)n);
        const int64_t lo = std::min(wplus2, total2 - wplus2);
        const int64_t hi = std::max(wplus2, total2 - wplus2);
        double mass = 0.0;
        for (int64_t s = 0; s <= lo; ++s) mass += count[(size_t)s];
        for (int64_t s = hi; s <= total2; ++s) mass += count[(size_t)s];
        return std::min(1.0, mass / denom);
    }

    const double w = 0.5 * (double)wplus2;
    const double mean = 0.25 * (double)total2;
    double var = 0.0;
    for (size_t k = 0; k < n; ++k) var += 0.25 * 0.25 * (double)rank2[k] * (double)rank2[k];
    if (var == 0.0) return 1.0;
    const double z = (w - mean) / std::sqrt(var);
    return std::min(1.0, std::erfc(std::fabs(z) / std::sqrt(2.0)));
}

// Paired t-test on the same differences, available as an alternative.
inline double paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw MetricsError("paired test: length mismatch");
    if (a.size() < 6) throw MetricsError("paired test: fewer than 6 usable pairs");
    const size_t n = a.size();
    double mean = 0.0;
    for (size_t i = 0; i < n; ++i) mean += (a[i] - b[i]) / (double)n;
    double var = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i] - mean;
        var += d * d / (double)(n - 1);
    }
    if (var == 0.0) return mean == 0.0 ? 1.0 : 0.0;
    const double t = mean / std::sqrt(var / (double)n);
    // two-sided p from Student's t via continued-fraction incomplete beta
    const double df = (double)(n - 1);
    const double x = df / (df + t * t);
    auto betacf = [](double aa, double bb, double xx) {
        const int maxit = 200;
        const double epsl = 1e-14, fpmin = 1e-300;
        double qab = aa + bb, qap = aa + 1.0, qam = aa - 1.0;
        double c = 1.0, d = 1.0 - qab * xx / qap;
        if (std::fabs(d) < fpmin) d = fpmin;
        d = 1.0 / d;
        double h = d;
        for (int m = 1; m <= maxit; ++m) {
            const int m2 = 2 * m;
            double an = m * (bb - m) * xx / ((qam + m2) * (aa + m2));
            d = 1.0 + an * d;
            if (std::fabs(d) < fpmin) d = fpmin;
            c = 1.0 + an / c;
            if (std::fabs(c) < fpmin) c = fpmin;
            d = 1.0 / d;
            h *= d * c;
            an = -(aa + m) * (qab + m) * xx / ((aa + m2) * (qap + m2));
            d = 1.0 + an * d;
            if (std::fabs(d) < fpmin) d = fpmin;
            c = 1.0 + an / c;
            if (std::fabs(c) < fpmin) c = fpmin;
            d = 1.0 / d;
            const double del = d * c;
            h *= del;
            if (std::fabs(del - 1.0) < epsl) break;
        }
        return h;
    };
    auto ibeta = [&](double aa, double bb, double xx) {
        if (xx <= 0.0) return 0.0;
        if (xx >= 1.0) return 1.0;
        const double lnb = std::lgamma(aa + bb) - std::lgamma(aa) - std::lgamma(bb) +
                           aa * std::log(xx) + bb * std::log(1.0 - xx);
        if (xx < (aa + 1.0) / (aa + bb + 2.0))
            return std::exp(lnb) * betacf(aa, bb, xx) / aa;
        return 1.0 - std::exp(lnb) * betacf(bb, aa, 1.0 - xx) / bb;
    };
    return std::min(1.0, ibeta(df / 2.0, 0.5, x));
}

// ---------------------------------------------------------------------------
// Evaluation driver

template <typename T>
inline MetricsReport evaluate(FocusNet<T>& model, const std::vector<Sample>& samples,
                              double threshold = 0.5) {
    NoGradGuard ng;
    MetricsReport rep;
    Rng dummy(0);
    for (const auto& s : samples) {
        if (s.image.dim(1) != model.cfg.input_h || s.image.dim(2) != model.cfg.input_w)
            throw MetricsError("evaluate: sample resolution differs from model input size");
        std::vector<T> img(s.image.size());
        for (size_t i = 0; i < img.size(); ++i) img[i] = (T)s.image.data()[i];
        Tensor<T> x(Shape{1, 3, s.image.dim(1), s.image.dim(2)}, std::move(img));
        auto heads = model.forward(x, dummy, false);
        Tensor<T> prob = sigmoid(heads.phat);
        std::vector<float> pred(prob.size());
        for (size_t i = 0; i < pred.size(); ++i)
            pred[i] = (double)prob.data()[i] >= threshold ? 1.0f : 0.0f;
        Tensor<float> pmask(Shape{1, s.mask.dim(1), s.mask.dim(2)}, std::move(pred));
        MetricsRow row = metrics_row(confusion(pmask, s.mask));
        row.id = s.id;
        rep.rows.push_back(row);
    }
    rep.finalize();
    return rep;
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string format_report(const MetricsReport& rep) {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    auto line = [&](const MetricsRow& r) {
        os << "id=" << r.id << " miou=" << r.miou << " mdsc=" << r.mdsc
           << " recall=" << r.recall << " precision=" << r.precision
           << " accuracy=" << r.accuracy << " f2=" << r.f2 << "\n";
    };
    for (const auto& r : rep.rows) line(r);
    line(rep.mean);
    if (rep.has_pvalue)
        os << "PVALUE vs=" << rep.pvalue_vs << " p=" << rep.pvalue << "\n";
    return os.str();
}

inline nlohmann::json report_to_json(const MetricsReport& rep) {
    nlohmann::json j;
    auto row_json = [](const MetricsRow& r) {
        return nlohmann::json{{"id", r.id},           {"miou", r.miou},
                              {"mdsc", r.mdsc},       {"recall", r.recall},
                              {"precision", r.precision}, {"accuracy", r.accuracy},
                              {"f2", r.f2}};
    };
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rep.rows) j["rows"].push_back(row_json(r));
    j["mean"] = row_json(rep.mean);
    if (rep.has_pvalue) j["pvalue"] = {{"vs", rep.pvalue_vs}, {"p", rep.pvalue}};
    return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
    MetricsReport rep;
    auto row_from = [](const nlohmann::json& rj) {
        MetricsRow r;
        r.id = rj.at("id").get<std::string>();
        r.miou = rj.at("miou").get<double>();
        r.mdsc = rj.at("mdsc").get<double>();
        r.recall = rj.at("recall").get<double>();
        r.precision = rj.at("precision").get<double>();
        r.accuracy = rj.at("accuracy").get<double>();
        r.f2 = rj.at("f2").get<double>();
        return r;
    };
    for (const auto& rj : j.at("rows")) rep.rows.push_back(row_from(rj));
    rep.mean = row_from(j.at("mean"));
    if (j.contains("pvalue")) {
        rep.has_pvalue = true;
        rep.pvalue_vs = j["pvalue"].at("vs").get<std::string>();
        rep.pvalue = j["pvalue"].at("p").get<double>();
    }
    return rep;
}

}  // namespace fseg
