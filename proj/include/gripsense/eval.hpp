#pragma once
// scoring against ground truth: roc/eer over fused scores, greedy interval
// matching of detected phone-use instances with timing-error statistics, and
// a fixed-threshold classification report. everything here is deterministic.

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "gripsense/common.hpp"
#include "gripsense/monitor.hpp"

namespace gripsense {

// positive class = handheld (label 1) throughout

struct RocPoint {
    double threshold = 0.0;
    double tpr = 0.0;
    double fpr = 0.0;
};

struct RocCurve {
    std::vector<RocPoint> points;  // thresholds descending, from (0,0) to (1,1)
};

struct TimingReport {
    std::vector<double> start_errors;  // |pred start - truth start| per match
    std::vector<double> end_errors;
    double median_start = 0.0;
    double median_end = 0.0;
    long matched = 0;
    long unmatched_truth = 0;  // missed activities
    long spurious_pred = 0;    // false-positive activities
    double detection_rate = 0.0;
    double duration_s = 0.0;
    double fp_per_hour = 0.0;  // 0 when no duration given
};

struct ClassificationReport {
    long tp = 0, fp = 0, tn = 0, fn = 0;
    double tpr = 0.0;
    double fpr = 0.0;
    double accuracy = 0.0;
};

namespace detail {

inline double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double interval_iou(double a0, double a1, double b0, double b1) {
    const double inter = std::min(a1, b1) - std::max(a0, b0);
    if (inter <= 0) return 0.0;
    const double uni = std::max(a1, b1) - std::min(a0, b0);
    if (uni <= 0) return 0.0;
    return inter / uni;
}

}  // namespace detail

// exact threshold sweep; predicted positive iff score >= threshold. the
// first point (threshold +inf) is the (0,0) corner and the last (threshold =
// lowest distinct score) is the (1,1) corner.
inline RocCurve roc(const std::vector<std::pair<double, int>>& scores) {
    long pos = 0, neg = 0;
    for (const auto& [s, label] : scores) {
        (void)s;
        if (label != 0 && label != 1)
            throw ValidationError("roc: labels must be 0 or 1");
        (label == 1 ? pos : neg) += 1;
    }
    if (pos == 0 || neg == 0)
        throw ValidationError("roc: need both classes present");

    std::vector<std::pair<double, int>> sorted = scores;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });

    RocCurve curve;
    curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    long tp = 0, fp = 0;
    size_t i = 0;
    while (i < sorted.size()) {
        const double t = sorted[i].first;
        while (i < sorted.size() && sorted[i].first == t) {
            (sorted[i].second == 1 ? tp : fp) += 1;
            ++i;
        }
        curve.points.push_back({t, double(tp) / double(pos), double(fp) / double(neg)});
    }
    return curve;
}

// rate where fpr = 1 - tpr, linearly interpolated along the curve
inline double eer(const RocCurve& curve) {
    if (curve.points.size() < 2)
        throw ValidationError("eer: curve needs at least two points");
    // g = fpr + tpr - 1 rises monotonically from -1 to +1 along the sweep
    for (size_t i = 0; i + 1 < curve.points.size(); ++i) {
        const double g0 = curve.points[i].fpr + curve.points[i].tpr - 1.0;
        const double g1 = curve.points[i + 1].fpr + curve.points[i + 1].tpr - 1.0;
        if (g0 > 0 || g1 < 0) continue;
        const double span = g1 - g0;
        const double a = span == 0.0 ? 0.0 : -g0 / span;
        return curve.points[i].fpr + a * (curve.points[i + 1].fpr - curve.points[i].fpr);
    }
    // monotone curves from (0,0) to (1,1) always cross; tolerate degenerate
    // input by reporting the closest endpoint
    return curve.points.back().fpr + curve.points.back().tpr >= 1.0 ? 0.0 : 1.0;
}

// greedy one-to-one matching of handheld instances by decreasing interval
// IoU (>= iou_min). open instances participate with their observed extent.
inline TimingReport match_instances(const std::vector<PhoneUseInstance>& pred,
                                    const std::vector<PhoneUseInstance>& truth,
                                    double iou_min = 0.3, double duration_s = 0.0) {
    if (!(iou_min > 0.0 && iou_min <= 1.0))
        throw ValidationError("match instances: iou_min must be in (0, 1]");
    std::vector<const PhoneUseInstance*> p, t;
    for (const auto& x : pred)
        if (x.kind == 1) p.push_back(&x);
    for (const auto& x : truth)
        if (x.kind == 1) t.push_back(&x);

    struct Cand {
        double iou;
        size_t ti, pi;
    };
    std::vector<Cand> cands;
    for (size_t ti = 0; ti < t.size(); ++ti)
        for (size_t pi = 0; pi < p.size(); ++pi) {
            const double iou =
                detail::interval_iou(t[ti]->start, t[ti]->end, p[pi]->start, p[pi]->end);
            if (iou >= iou_min) cands.push_back({iou, ti, pi});
        }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.iou != b.iou) return a.iou > b.iou;
        if (a.ti != b.ti) return a.ti < b.ti;
        return a.pi < b.pi;
    });

    TimingReport rep;
    std::vector<char> t_used(t.size(), 0), p_used(p.size(), 0);
    for (const Cand& c : cands) {
        if (t_used[c.ti] || p_used[c.pi]) continue;
        t_used[c.ti] = p_used[c.pi] = 1;
        rep.start_errors.push_back(std::abs(p[c.pi]->start - t[c.ti]->start));
        rep.end_errors.push_back(std::abs(p[c.pi]->end - t[c.ti]->end));
        ++rep.matched;
    }
    rep.unmatched_truth = static_cast<long>(t.size()) - rep.matched;
    rep.spurious_pred = static_cast<long>(p.size()) - rep.matched;
    rep.median_start = detail::median_of(rep.start_errors);
    rep.median_end = detail::median_of(rep.end_errors);
    rep.detection_rate =
        t.empty() ? 1.0 : double(rep.matched) / double(t.size());
    rep.duration_s = duration_s;
    rep.fp_per_hour =
        duration_s > 0 ? double(rep.spurious_pred) / (duration_s / 3600.0) : 0.0;
    return rep;
}

// exact counts at a fixed decision threshold (predicted handheld iff score
// >= threshold)
inline ClassificationReport classification_report(
    const std::vector<std::pair<double, int>>& samples, double threshold = 0.5) {
    if (samples.empty())
        throw ValidationError("classification report: empty sample list");
    ClassificationReport rep;
    for (const auto& [score, label] : samples) {
        if (label != 0 && label != 1)
            throw ValidationError("classification report: labels must be 0 or 1");
        const bool predicted = score >= threshold;
        if (label == 1)
            (predicted ? rep.tp : rep.fn) += 1;
        else
            (predicted ? rep.fp : rep.tn) += 1;
    }
    const long pos = rep.tp + rep.fn, neg = rep.fp + rep.tn;
    rep.tpr = pos ? double(rep.tp) / double(pos) : 0.0;
    rep.fpr = neg ? double(rep.fp) / double(neg) : 0.0;
    rep.accuracy = double(rep.tp + rep.tn) / double(samples.size());
    return rep;
}

}  // namespace gripsense
