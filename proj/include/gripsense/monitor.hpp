#pragma once
// adaptive-window flip-and-merge over the 10 Hz decision stream: short runs
// are treated as noise and relabeled, ambiguous runs wait for a confirmed
// neighbor, and instances emerge with start/end/duration. one correction
// engine drives both the offline pass and the streaming monitor.

#include <deque>
#include <string>
#include <vector>

#include "gripsense/common.hpp"

namespace gripsense {

// labels: 0 = handsfree, 1 = handheld
struct StatusSample {
    long index = 0;   // 0-based ordinal, 100 ms apart
    double t = 0.0;   // seconds, index * sample_period
    int label = 0;
    double score = 0.0;  // fused probability, carried for logging
};

struct Chunk {
    int label = 0;
    long start = 0;  // first sample index
    long len = 0;    // W, in samples

    bool operator==(const Chunk&) const = default;
};

struct MonitorConfig {
    int th1 = 5;                 // 0.5 s
    int th2 = 8;                 // 0.8 s
    double sample_period = 0.1;  // seconds

    void validate() const {
        if (!(0 < th1 && th1 < th2))
            throw ValidationError("monitor config: need 0 < th1 < th2");
        if (!(sample_period > 0))
            throw ValidationError("monitor config: sample period must be positive");
    }
};

struct CorrectedChunks {
    std::vector<Chunk> chunks;
    bool final_provisional = false;  // last chunk still growing / unconfirmed
    bool majority_fallback = false;  // nothing ever confirmed; majority label used

    bool operator==(const CorrectedChunks&) const = default;
};

struct PhoneUseInstance {
    int kind = 0;          // 0 = handsfree, 1 = handheld
    double start = 0.0;    // seconds
    double end = 0.0;      // seconds (extent so far when open)
    double duration = 0.0;
    bool open = false;     // provisional final chunk: may still grow
};

struct MonitorEvent {
    enum class Kind { handheld_start, handheld_end };
    Kind kind = Kind::handheld_start;
    long sample_index = 0;  // first sample of the confirmed chunk
    double t = 0.0;         // sample_index * sample_period
};

// ---------------- run-length encoding ----------------
inline std::vector<Chunk> chunk_sequence(const std::vector<int>& labels) {
    if (labels.empty()) throw ValidationError("chunk sequence: empty label stream");
    std::vector<Chunk> out;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1)
            throw ValidationError("chunk sequence: labels must be 0 or 1");
        if (!out.empty() && out.back().label == labels[i])
            ++out.back().len;
        else
            out.push_back({labels[i], static_cast<long>(i), 1});
    }
    return out;
}

inline std::vector<Chunk> chunk_sequence(const std::vector<StatusSample>& samples) {
    std::vector<int> labels;
    labels.reserve(samples.size());
    for (const auto& s : samples) labels.push_back(s.label);
    return chunk_sequence(labels);
}

namespace detail {

// the correction machine. state: settled chunks (confirmed; the tail may
// still grow), a queue of closed ambiguous runs (th1 <= W < th2) waiting for
// the next confirmation, and the live run. rules on closing a run:
//   W <  th1          -> noise: relabel and merge into both neighbors
//   th1 <= W < th2    -> ambiguous: defer until a neighbor confirms
//   W reaches th2     -> confirmed: resolve the deferred queue left to right
// deferred resolution walks with a running previous-label: equal neighbors
// relabel the deferred run to the shared label, unequal neighbors keep it
// (at most one boundary switch per confirmation). a missing neighbor counts
// as agreeing with the one that exists.
class CorrectionEngine {
  public:
    struct Event {
        bool start = false;  // handheld start vs handheld end
        long sample_index = 0;
    };

    CorrectionEngine(int th1, int th2) : th1_(th1), th2_(th2) {}

    // feed one maximal run (or any piece of one; consecutive equal labels
    // accumulate). events are appended, at most one per confirmation.
    void push_run(int label, long start, long len, std::vector<Event>& events) {
        if (total_ == 0) first_start_ = start;
        raw_count_[label] += len;
        total_ += len;

        if (live_tail_) {
            if (label == settled_.back().label) {
                settled_.back().len += len;
                return;
            }
            live_tail_ = false;
            cur_ = {label, start, len};
            maybe_confirm(events);
            return;
        }
        if (cur_.len == 0) {
            cur_ = {label, start, len};
            maybe_confirm(events);
            return;
        }
        if (label == cur_.label) {
            cur_.len += len;
            maybe_confirm(events);
            return;
        }
        // the live run closes at length cur_.len (< th2 here, else it would
        // already have confirmed)
        if (cur_.len < th1_) {
            // noise: relabel to the incoming/neighbor label and merge
            const int flipped = 1 - cur_.label;  // == label
            if (!pending_.empty()) {
                Chunk back = pending_.back();
                pending_.pop_back();
                cur_ = {flipped, back.start, back.len + cur_.len + len};
                maybe_confirm(events);
            } else if (!settled_.empty()) {
                // the tail is already confirmed; absorb without re-confirming
                settled_.back().len += cur_.len + len;
                live_tail_ = true;
                cur_ = {};
            } else {
                cur_ = {flipped, cur_.start, cur_.len + len};
                maybe_confirm(events);
            }
            return;
        }
        // ambiguous: defer
        pending_.push_back(cur_);
        cur_ = {label, start, len};
        maybe_confirm(events);
    }

    CorrectedChunks finish() {
        if (total_ == 0) throw ValidationError("monitor: empty stream");
        CorrectedChunks out;
        if (!live_tail_ && !settled_.empty()) {
            // stream ended mid-run: deferred runs adopt the settled label
            // (missing next neighbor counts as agreeing), the unfinished run
            // stays as-is
            for (const Chunk& p : pending_) settled_.back().len += p.len;
            pending_.clear();
            if (cur_.len > 0) {
                if (cur_.label == settled_.back().label) {
                    settled_.back().len += cur_.len;
                } else {
                    settled_.push_back(cur_);
                    out.final_provisional = true;
                }
                cur_ = {};
            }
            live_tail_ = true;
        }
        if (settled_.empty()) {
            // nothing ever confirmed: one provisional chunk of the majority
            // label (ties go to handheld)
            int maj = raw_count_[1] >= raw_count_[0] ? 1 : 0;
            out.chunks = {{maj, first_start_, total_}};
            out.final_provisional = true;
            out.majority_fallback = true;
            return out;
        }
        out.chunks = settled_;
        return out;
    }

    const std::vector<Chunk>& settled() const { return settled_; }

  private:
    void maybe_confirm(std::vector<Event>& events) {
        if (cur_.len < th2_) return;
        const int prev_label = settled_.empty() ? -1 : settled_.back().label;
        const int v_next = cur_.label;
        int v_pre = prev_label;
        // resolve the deferred queue left to right with a running v_pre
        for (Chunk p : pending_) {
            const int pre = v_pre == -1 ? v_next : v_pre;
            if (pre == v_next)
                p.label = pre;  // erroneous: relabel to the shared neighbor label
            else
                v_pre = p.label;  // kept: becomes the new previous label
            fold(p);
        }
        pending_.clear();
        fold(cur_);
        cur_ = {};
        live_tail_ = true;
        // at most one boundary switch happened; a new final chunk of the
        // opposite label is a new instance
        if (prev_label != -1 && settled_.back().label != prev_label)
            events.push_back({settled_.back().label == 1, settled_.back().start});
    }

    void fold(const Chunk& c) {
        if (!settled_.empty() && settled_.back().label == c.label)
            settled_.back().len += c.len;
        else
            settled_.push_back(c);
    }

    int th1_, th2_;
    std::vector<Chunk> settled_;
    std::deque<Chunk> pending_;
    Chunk cur_{};
    bool live_tail_ = false;
    long raw_count_[2] = {0, 0};
    long total_ = 0;
    long first_start_ = 0;
};

}  // namespace detail

// ---------------- offline pass ----------------
inline CorrectedChunks flip_and_merge(const std::vector<Chunk>& chunks,
                                      const MonitorConfig& cfg) {
    cfg.validate();
    if (chunks.empty()) throw ValidationError("flip and merge: empty chunk list");
    for (size_t i = 0; i < chunks.size(); ++i) {
        if (chunks[i].len < 1) throw ValidationError("flip and merge: chunk length < 1");
        if (chunks[i].label != 0 && chunks[i].label != 1)
            throw ValidationError("flip and merge: labels must be 0 or 1");
        if (i > 0) {
            if (chunks[i].label == chunks[i - 1].label)
                throw ValidationError("flip and merge: adjacent chunks must alternate");
            if (chunks[i].start != chunks[i - 1].start + chunks[i - 1].len)
                throw ValidationError("flip and merge: chunks must be contiguous");
        }
    }
    detail::CorrectionEngine engine(cfg.th1, cfg.th2);
    std::vector<detail::CorrectionEngine::Event> sink;
    for (const Chunk& c : chunks) engine.push_run(c.label, c.start, c.len, sink);
    return engine.finish();
}

// ---------------- instances ----------------
inline std::vector<PhoneUseInstance> extract_instances(const CorrectedChunks& corrected,
                                                       const MonitorConfig& cfg) {
    cfg.validate();
    std::vector<PhoneUseInstance> out;
    for (size_t i = 0; i < corrected.chunks.size(); ++i) {
        const Chunk& c = corrected.chunks[i];
        PhoneUseInstance inst;
        inst.kind = c.label;
        inst.start = double(c.start) * cfg.sample_period;
        inst.end = double(c.start + c.len) * cfg.sample_period;
        inst.duration = double(c.len) * cfg.sample_period;
        inst.open = (i + 1 == corrected.chunks.size()) && corrected.final_provisional;
        out.push_back(inst);
    }
    return out;
}

// the events a streaming run of the same stream would have fired: one per
// boundary between corrected chunks, except the boundary into a final chunk
// that never reached confirmation
inline std::vector<MonitorEvent> events_from_chunks(const CorrectedChunks& corrected,
                                                    const MonitorConfig& cfg) {
    cfg.validate();
    std::vector<MonitorEvent> out;
    for (size_t k = 1; k < corrected.chunks.size(); ++k) {
        if (k + 1 == corrected.chunks.size() && corrected.final_provisional) break;
        MonitorEvent e;
        e.kind = corrected.chunks[k].label == 1 ? MonitorEvent::Kind::handheld_start
                                                : MonitorEvent::Kind::handheld_end;
        e.sample_index = corrected.chunks[k].start;
        e.t = double(e.sample_index) * cfg.sample_period;
        out.push_back(e);
    }
    return out;
}

// ---------------- streaming monitor ----------------
class StreamingMonitor {
  public:
    explicit StreamingMonitor(MonitorConfig cfg = {}) : cfg_(cfg), engine_(cfg.th1, cfg.th2) {
        cfg_.validate();
    }

    // samples must arrive in index order; returns the events this sample
    // triggered (at most one)
    std::vector<MonitorEvent> push_sample(const StatusSample& s) {
        if (finished_) throw ValidationError("monitor: push after finish");
        if (s.index != next_index_)
            throw ValidationError("monitor: out-of-order sample, expected index " +
                                  std::to_string(next_index_) + ", got " +
                                  std::to_string(s.index));
        if (s.label != 0 && s.label != 1)
            throw ValidationError("monitor: labels must be 0 or 1");
        ++next_index_;
        std::vector<detail::CorrectionEngine::Event> raw;
        engine_.push_run(s.label, s.index, 1, raw);
        std::vector<MonitorEvent> events;
        for (const auto& e : raw) {
            MonitorEvent ev;
            ev.kind = e.start ? MonitorEvent::Kind::handheld_start
                              : MonitorEvent::Kind::handheld_end;
            ev.sample_index = e.sample_index;
            ev.t = double(e.sample_index) * cfg_.sample_period;
            events.push_back(ev);
        }
        return events;
    }

    // flush: resolves trailing state; no events are emitted at end of stream
    CorrectedChunks finish() {
        if (finished_) throw ValidationError("monitor: finish called twice");
        finished_ = true;
        return engine_.finish();
    }

    const MonitorConfig& config() const { return cfg_; }
    long samples_pushed() const { return next_index_; }

    // confirmed chunks so far (the last one may still grow; labels and
    // starts are frozen once a chunk appears here)
    const std::vector<Chunk>& settled_chunks() const { return engine_.settled(); }

  private:
    MonitorConfig cfg_;
    detail::CorrectionEngine engine_;
    long next_index_ = 0;
    bool finished_ = false;
};

}  // namespace gripsense
