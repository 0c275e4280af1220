#pragma once
// from-scratch trainer (adam, inverted dropout, seeded shuffling) and the
// binary model file format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gripsense/common.hpp"
#include "gripsense/nn.hpp"

namespace gripsense {

struct TrainConfig {
    int epochs = 5;
    int batch_size = 16;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double dropout_rate = 0.5;
    std::vector<int> conv_filters = {32, 32, 32};
    std::vector<int> dense_sizes = {128, 60, 2};
    uint64_t seed = 1;

    void validate() const {
        if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
        if (batch_size < 1) throw ValidationError("train: batch size must be >= 1");
        if (!(learning_rate > 0)) throw ValidationError("train: learning rate must be > 0");
        if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
            throw ValidationError("train: adam betas must be in [0, 1)");
        if (!(epsilon > 0)) throw ValidationError("train: epsilon must be > 0");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw ValidationError("train: dropout rate must be in [0, 1)");
    }
};

struct TrainReport {
    std::vector<double> epoch_mean_loss;
};

namespace detail {

template <typename T>
struct AdamState {
    std::vector<std::vector<T>> m, v;
    long t = 0;

    explicit AdamState(const typename Cnn<T>::Gradients& shape) {
        auto add = [&](const std::vector<std::vector<T>>& g) {
            for (const auto& vec : g) {
                m.emplace_back(vec.size(), T(0));
                v.emplace_back(vec.size(), T(0));
            }
        };
        add(shape.conv_w);
        add(shape.conv_b);
        add(shape.dense_w);
        add(shape.dense_b);
    }
};

template <typename T>
inline void adam_update_vec(std::vector<T>& p, const std::vector<T>& g, std::vector<T>& m,
                            std::vector<T>& v, const TrainConfig& cfg, double bc1,
                            double bc2) {
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    for (size_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        double mhat = double(m[i]) / bc1;
        double vhat = double(v[i]) / bc2;
        p[i] = static_cast<T>(double(p[i]) -
                              cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
}

template <typename T>
inline void adam_step(Cnn<T>& model, const typename Cnn<T>::Gradients& g, AdamState<T>& st,
                      const TrainConfig& cfg) {
    ++st.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(st.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(st.t));
    size_t k = 0;
    for (size_t i = 0; i < model.convs().size(); ++i, ++k)
        adam_update_vec(model.convs()[i].w, g.conv_w[i], st.m[k], st.v[k], cfg, bc1, bc2);
    for (size_t i = 0; i < model.convs().size(); ++i, ++k)
        adam_update_vec(model.convs()[i].b, g.conv_b[i], st.m[k], st.v[k], cfg, bc1, bc2);
    for (size_t i = 0; i < model.dense_layers().size(); ++i, ++k)
        adam_update_vec(model.dense_layers()[i].w, g.dense_w[i], st.m[k], st.v[k], cfg, bc1,
                        bc2);
    for (size_t i = 0; i < model.dense_layers().size(); ++i, ++k)
        adam_update_vec(model.dense_layers()[i].b, g.dense_b[i], st.m[k], st.v[k], cfg, bc1,
                        bc2);
}

}  // namespace detail

// minibatch training with a fixed seed; two runs with identical inputs and
// config produce bit-identical weights (single-threaded, fixed reduction
// order)
template <typename T>
inline Cnn<T> train(const std::vector<Tensor3<T>>& images, const std::vector<int>& labels,
                    const TrainConfig& cfg, TrainReport* report = nullptr) {
    cfg.validate();
    if (images.empty()) throw ValidationError("train: empty dataset");
    if (images.size() != labels.size())
        throw ValidationError("train: image/label count mismatch");
    bool seen[2] = {false, false};
    for (int l : labels) {
        if (l != 0 && l != 1) throw ValidationError("train: labels must be 0 or 1");
        seen[l] = true;
    }
    if (!seen[0] || !seen[1])
        throw ValidationError("train: need examples of both classes");
    for (const auto& im : images)
        if (im.h != images[0].h || im.w != images[0].w || im.c != images[0].c)
            throw ValidationError("train: inconsistent image shapes");
    if (images[0].h != images[0].w)
        throw ValidationError("train: square input images expected");

    Cnn<T> model(images[0].h, images[0].c, cfg.conv_filters, cfg.dense_sizes,
                 cfg.dropout_rate);
    model.init_weights(mix_seed(cfg.seed, 0));

    Rng shuffle_rng(mix_seed(cfg.seed, 1));
    Rng drop_rng(mix_seed(cfg.seed, 2));

    typename Cnn<T>::Gradients grads;
    grads.match(model);
    detail::AdamState<T> adam(grads);
    typename Cnn<T>::Workspace ws;
    std::vector<uint8_t> mask(static_cast<size_t>(model.flat_size()));

    std::vector<size_t> order(images.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    if (report) report->epoch_mean_loss.clear();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            size_t n = std::min<size_t>(cfg.batch_size, order.size() - start);
            grads.zero();
            for (size_t j = 0; j < n; ++j) {
                size_t idx = order[start + j];
                for (auto& mbit : mask)
                    mbit = drop_rng.uniform01() >= cfg.dropout_rate ? 1 : 0;
                auto probs = model.forward(images[idx], true, mask, ws);
                loss_sum += loss(probs, labels[idx]);
                model.backward(images[idx], labels[idx], true, mask, ws, grads,
                               static_cast<T>(1.0 / double(n)));
            }
            detail::adam_step(model, grads, adam, cfg);
        }
        if (report) report->epoch_mean_loss.push_back(loss_sum / double(images.size()));
        log_debug("epoch %d mean loss %.6f", epoch + 1,
                  loss_sum / double(images.size()));
    }
    return model;
}

// ---------------- model file format ----------------
// "GSNN" | u32 version=1 | u32 input_size | u32 input_channels
// | u32 n_conv | u32 filters per conv (3x3 kernels implied)
// | u32 n_dense | u32 units per dense | f32 dropout_rate
// | f32 weights: per conv w then b, per dense w then b
template <typename T>
inline void save_model(const Cnn<T>& model, const std::string& path) {
    std::string out;
    out += "GSNN";
    put_u32le(out, 1);
    put_u32le(out, static_cast<uint32_t>(model.input_size()));
    put_u32le(out, static_cast<uint32_t>(model.input_channels()));
    put_u32le(out, static_cast<uint32_t>(model.convs().size()));
    for (const auto& c : model.convs()) put_u32le(out, static_cast<uint32_t>(c.cout));
    put_u32le(out, static_cast<uint32_t>(model.dense_layers().size()));
    for (const auto& d : model.dense_layers()) put_u32le(out, static_cast<uint32_t>(d.out));
    put_f32le(out, static_cast<float>(model.dropout_rate()));
    for (const auto& c : model.convs()) {
        for (T w : c.w) put_f32le(out, static_cast<float>(w));
        for (T b : c.b) put_f32le(out, static_cast<float>(b));
    }
    for (const auto& d : model.dense_layers()) {
        for (T w : d.w) put_f32le(out, static_cast<float>(w));
        for (T b : d.b) put_f32le(out, static_cast<float>(b));
    }
    write_file_atomic(path, out);
}

inline Cnn<float> load_model(const std::string& path) {
    const std::string data = read_file(path);
    if (data.size() < 4) throw IoError("model file truncated: " + path);
    if (data.compare(0, 4, "GSNN") != 0)
        throw FormatError("not a model file (bad magic): " + path);
    ByteReader r(data, path);
    r.skip(4);
    uint32_t version = 0;
    try {
        version = r.u32le();
    } catch (const FormatError&) {
        throw IoError("model file truncated: " + path);
    }
    if (version != 1)
        throw FormatError("unsupported model file version " + std::to_string(version));
    try {
        uint32_t input_size = r.u32le();
        uint32_t input_channels = r.u32le();
        uint32_t n_conv = r.u32le();
        if (input_size == 0 || input_channels == 0 || n_conv == 0 || n_conv > 64)
            throw FormatError("model file has implausible structure: " + path);
        std::vector<int> conv_filters;
        for (uint32_t i = 0; i < n_conv; ++i) {
            uint32_t f = r.u32le();
            if (f == 0 || f > 65536) throw FormatError("model file: bad filter count");
            conv_filters.push_back(static_cast<int>(f));
        }
        uint32_t n_dense = r.u32le();
        if (n_dense == 0 || n_dense > 64)
            throw FormatError("model file has implausible structure: " + path);
        std::vector<int> dense_sizes;
        for (uint32_t i = 0; i < n_dense; ++i) {
            uint32_t u = r.u32le();
            if (u == 0 || u > 1 << 24) throw FormatError("model file: bad layer width");
            dense_sizes.push_back(static_cast<int>(u));
        }
        float dropout = r.f32le();
        Cnn<float> model;
        try {
            model = Cnn<float>(static_cast<int>(input_size), static_cast<int>(input_channels),
                               conv_filters, dense_sizes, double(dropout));
        } catch (const ValidationError& e) {
            throw FormatError(std::string("model file structure invalid: ") + e.what());
        }
        size_t n_params = static_cast<size_t>(model.param_count());
        if (r.remaining() < n_params * 4)
            throw IoError("model file truncated: " + path + " (need " +
                          std::to_string(n_params * 4) + " weight bytes, have " +
                          std::to_string(r.remaining()) + ")");
        for (auto& c : model.convs()) {
            for (auto& w : c.w) w = r.f32le();
            for (auto& b : c.b) b = r.f32le();
        }
        for (auto& d : model.dense_layers()) {
            for (auto& w : d.w) w = r.f32le();
            for (auto& b : d.b) b = r.f32le();
        }
        return model;
    } catch (const FormatError& e) {
        // distinguish structural nonsense (kept as FormatError) from running
        // off the end of the buffer (reported as an io failure)
        if (std::string(e.what()).find("truncated") != std::string::npos)
            throw IoError("model file truncated: " + path);
        throw;
    }
}

}  // namespace gripsense
