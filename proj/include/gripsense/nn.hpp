#pragma once
// small convolutional net trained from scratch: 3x(conv3x3-relu-maxpool),
// flatten, dropout, three linear dense layers, binary softmax head.
// templated on the scalar type: float in production, double in the
// finite-difference harness.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gripsense/common.hpp"
#include "gripsense/features.hpp"

namespace gripsense {

template <typename T>
struct Tensor3 {
    int h = 0, w = 0, c = 0;
    std::vector<T> v;  // row-major, channel-last

    Tensor3() = default;
    Tensor3(int h_, int w_, int c_) : h(h_), w(w_), c(c_) {
        v.assign(static_cast<size_t>(h) * w * c, T(0));
    }
    T& at(int y, int x, int ch) { return v[(static_cast<size_t>(y) * w + x) * c + ch]; }
    const T& at(int y, int x, int ch) const {
        return v[(static_cast<size_t>(y) * w + x) * c + ch];
    }
};

template <typename T>
inline Tensor3<T> tensor_from_image(const SpectrogramImage& img) {
    Tensor3<T> t(img.size, img.size, 3);
    for (size_t i = 0; i < img.pixels.size(); ++i) t.v[i] = static_cast<T>(img.pixels[i]);
    return t;
}

// ---------------- layer-dimension arithmetic ----------------
struct ConvSpec {
    long input_size = 0;  // m: square input edge
    long kernel = 0;      // k
    long stride = 1;      // l
    long padding = 0;     // d
    long filters = 0;     // t
};

struct ConvDims {
    long out_size = 0;
    long filters = 0;
};

// out = (m - k + 2d)/l + 1; a non-integral division or empty output is a
// configuration error
inline ConvDims conv_output_dims(const ConvSpec& s) {
    if (s.input_size < 1 || s.kernel < 1 || s.filters < 1)
        throw ValidationError("conv dims: sizes must be positive");
    if (s.stride < 1) throw ValidationError("conv dims: stride must be >= 1");
    if (s.padding < 0) throw ValidationError("conv dims: padding must be >= 0");
    const long span = s.input_size - s.kernel + 2 * s.padding;
    if (span < 0) throw ValidationError("conv dims: kernel larger than padded input");
    if (span % s.stride != 0)
        throw ValidationError("conv dims: (input - kernel + 2*padding) not divisible by stride");
    ConvDims d;
    d.out_size = span / s.stride + 1;
    d.filters = s.filters;
    if (d.out_size < 1) throw ValidationError("conv dims: empty output");
    return d;
}

// ---------------- reference kernels ----------------
// plain general convolution (any kernel/stride/padding), used to audit the
// dimension formula and to cross-check the specialised fast path
template <typename T>
inline Tensor3<T> conv2d_reference(const Tensor3<T>& in, const std::vector<T>& w,
                                   const std::vector<T>& b, long kernel, long stride,
                                   long padding, long filters) {
    ConvSpec spec{in.h, kernel, stride, padding, filters};
    if (in.h != in.w) throw ValidationError("conv reference: square input expected");
    ConvDims dims = conv_output_dims(spec);
    if (w.size() != static_cast<size_t>(kernel) * kernel * in.c * filters)
        throw ValidationError("conv reference: weight count mismatch");
    if (b.size() != static_cast<size_t>(filters))
        throw ValidationError("conv reference: bias count mismatch");
    Tensor3<T> out(static_cast<int>(dims.out_size), static_cast<int>(dims.out_size),
                   static_cast<int>(filters));
    for (long y = 0; y < dims.out_size; ++y)
        for (long x = 0; x < dims.out_size; ++x)
            for (long f = 0; f < filters; ++f) {
                double acc = b[static_cast<size_t>(f)];
                for (long ky = 0; ky < kernel; ++ky)
                    for (long kx = 0; kx < kernel; ++kx) {
                        long iy = y * stride + ky - padding;
                        long ix = x * stride + kx - padding;
                        if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
                        for (long ci = 0; ci < in.c; ++ci) {
                            size_t wi = ((static_cast<size_t>(ky) * kernel + kx) * in.c + ci) *
                                            filters +
                                        static_cast<size_t>(f);
                            acc += double(in.at(static_cast<int>(iy), static_cast<int>(ix),
                                                static_cast<int>(ci))) *
                                   double(w[wi]);
                        }
                    }
                out.at(static_cast<int>(y), static_cast<int>(x), static_cast<int>(f)) =
                    static_cast<T>(acc);
            }
    return out;
}

// 2x2 stride-2 max pool; on ties the first element in row-major window order
// wins (both forward choice and gradient routing)
template <typename T>
inline Tensor3<T> maxpool2x2(const Tensor3<T>& in, std::vector<uint8_t>* arg_out = nullptr) {
    if (in.h < 2 || in.w < 2) throw ValidationError("maxpool: input smaller than window");
    Tensor3<T> out(in.h / 2, in.w / 2, in.c);
    if (arg_out) arg_out->assign(out.v.size(), 0);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
            for (int c = 0; c < in.c; ++c) {
                T best = in.at(2 * y, 2 * x, c);
                uint8_t arg = 0;
                const int offs[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
                for (uint8_t k = 1; k < 4; ++k) {
                    T v = in.at(2 * y + offs[k][0], 2 * x + offs[k][1], c);
                    if (v > best) {  // strict: earlier (row-major) max retained
                        best = v;
                        arg = k;
                    }
                }
                out.at(y, x, c) = best;
                if (arg_out)
                    (*arg_out)[(static_cast<size_t>(y) * out.w + x) * out.c + c] = arg;
            }
    return out;
}

template <typename T>
inline void maxpool2x2_backward(const Tensor3<T>& grad_out, const std::vector<uint8_t>& arg,
                                Tensor3<T>& grad_in) {
    const int offs[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    for (int y = 0; y < grad_out.h; ++y)
        for (int x = 0; x < grad_out.w; ++x)
            for (int c = 0; c < grad_out.c; ++c) {
                uint8_t k = arg[(static_cast<size_t>(y) * grad_out.w + x) * grad_out.c + c];
                grad_in.at(2 * y + offs[k][0], 2 * x + offs[k][1], c) +=
                    grad_out.at(y, x, c);
            }
}

// ---------------- the model ----------------
struct LayerInfo {
    std::string name;
    std::vector<long> output_shape;
    long param_count = 0;
};

template <typename T>
class Cnn {
  public:
    struct Conv {
        int cin = 0, cout = 0;
        std::vector<T> w;  // [ky][kx][cin][cout], 3x3 kernels
        std::vector<T> b;
    };
    struct Dense {
        int in = 0, out = 0;
        std::vector<T> w;  // [in][out]
        std::vector<T> b;
    };

    Cnn() = default;

    Cnn(int input_size, int input_channels, std::vector<int> conv_filters,
        std::vector<int> dense_sizes, double dropout_rate)
        : input_size_(input_size),
          input_channels_(input_channels),
          dropout_rate_(dropout_rate) {
        if (input_size < 1 || input_channels < 1)
            throw ValidationError("cnn: input dimensions must be positive");
        if (conv_filters.empty() || dense_sizes.empty())
            throw ValidationError("cnn: need at least one conv and one dense layer");
        if (dense_sizes.back() != 2)
            throw ValidationError("cnn: final dense layer must have 2 units");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw ValidationError("cnn: dropout rate must be in [0, 1)");

        int size = input_size, ch = input_channels;
        for (int f : conv_filters) {
            ConvDims dims = conv_output_dims(ConvSpec{size, 3, 1, 0, f});
            Conv c;
            c.cin = ch;
            c.cout = f;
            c.w.assign(static_cast<size_t>(9) * ch * f, T(0));
            c.b.assign(static_cast<size_t>(f), T(0));
            convs_.push_back(std::move(c));
            size = static_cast<int>(dims.out_size);
            if (size < 2) throw ValidationError("cnn: feature map shrank below pool window");
            size /= 2;  // 2x2 stride-2 pool
            if (size < 1) throw ValidationError("cnn: feature map vanished");
            ch = f;
        }
        flat_size_ = size * size * ch;
        int in = flat_size_;
        for (int d : dense_sizes) {
            Dense layer;
            layer.in = in;
            layer.out = d;
            layer.w.assign(static_cast<size_t>(in) * d, T(0));
            layer.b.assign(static_cast<size_t>(d), T(0));
            dense_.push_back(std::move(layer));
            in = d;
        }
    }

    // production topology: 150x150x3 -> conv(32)x3 -> 128 -> 60 -> 2
    static Cnn standard() { return Cnn(150, 3, {32, 32, 32}, {128, 60, 2}, 0.5); }

    int input_size() const { return input_size_; }
    int input_channels() const { return input_channels_; }
    int flat_size() const { return flat_size_; }
    double dropout_rate() const { return dropout_rate_; }
    const std::vector<Conv>& convs() const { return convs_; }
    const std::vector<Dense>& dense_layers() const { return dense_; }
    std::vector<Conv>& convs() { return convs_; }
    std::vector<Dense>& dense_layers() { return dense_; }

    // he-uniform weights (limit sqrt(6/fan_in)), zero biases, fixed draw order
    void init_weights(uint64_t seed) {
        Rng rng(seed);
        for (Conv& c : convs_) {
            double limit = std::sqrt(6.0 / (9.0 * c.cin));
            for (T& w : c.w) w = static_cast<T>(rng.uniform(-limit, limit));
            for (T& b : c.b) b = T(0);
        }
        for (Dense& d : dense_) {
            double limit = std::sqrt(6.0 / d.in);
            for (T& w : d.w) w = static_cast<T>(rng.uniform(-limit, limit));
            for (T& b : d.b) b = T(0);
        }
    }

    long param_count() const {
        long n = 0;
        for (const Conv& c : convs_) n += static_cast<long>(c.w.size() + c.b.size());
        for (const Dense& d : dense_) n += static_cast<long>(d.w.size() + d.b.size());
        return n;
    }

    std::vector<LayerInfo> summary() const {
        std::vector<LayerInfo> out;
        int size = input_size_;
        for (size_t i = 0; i < convs_.size(); ++i) {
            size -= 2;
            out.push_back({"conv2d" + suffix(i), {size, size, convs_[i].cout},
                           static_cast<long>(convs_[i].w.size() + convs_[i].b.size())});
            size /= 2;
            out.push_back({"max_pooling2d" + suffix(i), {size, size, convs_[i].cout}, 0});
        }
        out.push_back({"flatten", {flat_size_}, 0});
        out.push_back({"dropout", {flat_size_}, 0});
        for (size_t i = 0; i < dense_.size(); ++i)
            out.push_back({"dense" + suffix(i), {dense_[i].out},
                           static_cast<long>(dense_[i].w.size() + dense_[i].b.size())});
        return out;
    }

    // all activation buffers for one sample; reused across calls
    struct Workspace {
        std::vector<Tensor3<T>> conv_z;    // pre-relu
        std::vector<Tensor3<T>> conv_a;    // post-relu
        std::vector<Tensor3<T>> pooled;
        std::vector<std::vector<uint8_t>> pool_arg;
        std::vector<T> flat;               // post-dropout flat vector
        std::vector<std::vector<T>> dense_z;
        std::array<double, 2> probs{};
        // gradient scratch, same shapes
        std::vector<Tensor3<T>> g_conv_z;
        std::vector<Tensor3<T>> g_pooled;
        std::vector<std::vector<T>> g_dense_in;
    };

    // forward pass; in train mode the flat vector is multiplied by
    // mask/(1-rate) (inverted dropout), in infer mode dropout is identity.
    // mask may be empty in infer mode.
    std::array<double, 2> forward(const Tensor3<T>& x, bool train_mode,
                                  const std::vector<uint8_t>& mask, Workspace& ws) const {
        if (x.h != input_size_ || x.w != input_size_ || x.c != input_channels_)
            throw ValidationError("cnn forward: input shape mismatch");
        if (train_mode && mask.size() != static_cast<size_t>(flat_size_))
            throw ValidationError("cnn forward: dropout mask size mismatch");
        ensure_workspace(ws);

        const Tensor3<T>* cur = &x;
        for (size_t i = 0; i < convs_.size(); ++i) {
            conv3x3_forward(*cur, convs_[i], ws.conv_z[i]);
            relu(ws.conv_z[i], ws.conv_a[i]);
            ws.pooled[i] = maxpool2x2(ws.conv_a[i], &ws.pool_arg[i]);
            cur = &ws.pooled[i];
        }
        const T keep_scale = static_cast<T>(1.0 / (1.0 - dropout_rate_));
        for (int i = 0; i < flat_size_; ++i) {
            T v = cur->v[static_cast<size_t>(i)];
            if (train_mode)
                v = mask[static_cast<size_t>(i)] ? v * keep_scale : T(0);
            ws.flat[static_cast<size_t>(i)] = v;
        }
        const std::vector<T>* din = &ws.flat;
        for (size_t i = 0; i < dense_.size(); ++i) {
            dense_forward(*din, dense_[i], ws.dense_z[i]);
            din = &ws.dense_z[i];
        }
        const std::vector<T>& logits = ws.dense_z.back();
        double m = std::max(double(logits[0]), double(logits[1]));
        double e0 = std::exp(double(logits[0]) - m);
        double e1 = std::exp(double(logits[1]) - m);
        ws.probs = {e0 / (e0 + e1), e1 / (e0 + e1)};
        return ws.probs;
    }

    std::array<double, 2> infer(const Tensor3<T>& x) const {
        Workspace ws;
        return forward(x, false, {}, ws);
    }

    // gradients, mirroring the parameter layout
    struct Gradients {
        std::vector<std::vector<T>> conv_w, conv_b, dense_w, dense_b;

        void match(const Cnn& m) {
            conv_w.resize(m.convs_.size());
            conv_b.resize(m.convs_.size());
            for (size_t i = 0; i < m.convs_.size(); ++i) {
                conv_w[i].assign(m.convs_[i].w.size(), T(0));
                conv_b[i].assign(m.convs_[i].b.size(), T(0));
            }
            dense_w.resize(m.dense_.size());
            dense_b.resize(m.dense_.size());
            for (size_t i = 0; i < m.dense_.size(); ++i) {
                dense_w[i].assign(m.dense_[i].w.size(), T(0));
                dense_b[i].assign(m.dense_[i].b.size(), T(0));
            }
        }
        void zero() {
            for (auto& v : conv_w) std::fill(v.begin(), v.end(), T(0));
            for (auto& v : conv_b) std::fill(v.begin(), v.end(), T(0));
            for (auto& v : dense_w) std::fill(v.begin(), v.end(), T(0));
            for (auto& v : dense_b) std::fill(v.begin(), v.end(), T(0));
        }
    };

    // backward for cross-entropy on the softmax head; accumulates into g with
    // the given weight (used for batch averaging). forward() must have been
    // called on ws with the same input/mask.
    void backward(const Tensor3<T>& x, int label, bool train_mode,
                  const std::vector<uint8_t>& mask, Workspace& ws, Gradients& g,
                  T weight) const {
        // d(loss)/d(logits) = probs - onehot(label)
        std::vector<T>& gz_last = ws.g_dense_in[dense_.size()];
        gz_last.resize(2);
        gz_last[0] = static_cast<T>((ws.probs[0] - (label == 0 ? 1.0 : 0.0)) * weight);
        gz_last[1] = static_cast<T>((ws.probs[1] - (label == 1 ? 1.0 : 0.0)) * weight);

        for (size_t li = dense_.size(); li-- > 0;) {
            const std::vector<T>& input = (li == 0) ? ws.flat : ws.dense_z[li - 1];
            dense_backward(input, dense_[li], ws.g_dense_in[li + 1], g.dense_w[li],
                           g.dense_b[li], ws.g_dense_in[li]);
        }

        // undo dropout scaling, unflatten into the last pooled map
        const T keep_scale = static_cast<T>(1.0 / (1.0 - dropout_rate_));
        Tensor3<T>& g_pool_last = ws.g_pooled[convs_.size() - 1];
        std::fill(g_pool_last.v.begin(), g_pool_last.v.end(), T(0));
        for (int i = 0; i < flat_size_; ++i) {
            T gv = ws.g_dense_in[0][static_cast<size_t>(i)];
            if (train_mode) gv = mask[static_cast<size_t>(i)] ? gv * keep_scale : T(0);
            g_pool_last.v[static_cast<size_t>(i)] = gv;
        }

        for (size_t i = convs_.size(); i-- > 0;) {
            Tensor3<T>& gz = ws.g_conv_z[i];
            std::fill(gz.v.begin(), gz.v.end(), T(0));
            maxpool2x2_backward(ws.g_pooled[i], ws.pool_arg[i], gz);
            // relu gate on the pre-activation
            for (size_t k = 0; k < gz.v.size(); ++k)
                if (ws.conv_z[i].v[k] <= T(0)) gz.v[k] = T(0);
            const Tensor3<T>& input = (i == 0) ? x : ws.pooled[i - 1];
            Tensor3<T>* g_input = nullptr;
            if (i > 0) {
                g_input = &ws.g_pooled[i - 1];
                std::fill(g_input->v.begin(), g_input->v.end(), T(0));
            }
            conv3x3_backward(input, convs_[i], gz, g.conv_w[i], g.conv_b[i], g_input);
        }
    }

  private:
    static std::string suffix(size_t i) { return i == 0 ? "" : "_" + std::to_string(i); }

    void ensure_workspace(Workspace& ws) const {
        if (!ws.conv_z.empty()) return;
        int size = input_size_;
        for (const Conv& c : convs_) {
            int out = size - 2;
            ws.conv_z.emplace_back(out, out, c.cout);
            ws.conv_a.emplace_back(out, out, c.cout);
            ws.pooled.emplace_back(out / 2, out / 2, c.cout);
            ws.pool_arg.emplace_back();
            ws.g_conv_z.emplace_back(out, out, c.cout);
            ws.g_pooled.emplace_back(out / 2, out / 2, c.cout);
            size = out / 2;
        }
        ws.flat.assign(static_cast<size_t>(flat_size_), T(0));
        ws.dense_z.resize(dense_.size());
        for (size_t i = 0; i < dense_.size(); ++i)
            ws.dense_z[i].assign(static_cast<size_t>(dense_[i].out), T(0));
        ws.g_dense_in.resize(dense_.size() + 1);
        ws.g_dense_in[0].assign(static_cast<size_t>(flat_size_), T(0));
        for (size_t i = 0; i < dense_.size(); ++i)
            ws.g_dense_in[i + 1].assign(static_cast<size_t>(dense_[i].out), T(0));
    }

    // valid 3x3 stride-1 convolution; inner loop runs over output channels so
    // it vectorises. COUT, when nonzero, is a compile-time copy of cout that
    // lets the compiler keep the accumulator in registers. four output
    // columns share each weight-vector load (the kernels are otherwise
    // memory-bound on weight reloads).
    template <int COUT>
    static void conv3x3_forward_impl(const Tensor3<T>& in, const Conv& c, Tensor3<T>& out) {
        const int H = out.h, W = out.w, cin = c.cin;
        const int cout = COUT > 0 ? COUT : c.cout;
        const T* __restrict wptr = c.w.data();
        const T* __restrict bptr = c.b.data();
        const T* __restrict iptr = in.v.data();
        T* __restrict optr = out.v.data();
        constexpr int XB = 4;
        std::vector<T> acc_store(static_cast<size_t>(XB) * cout);
        for (int y = 0; y < H; ++y) {
            int x = 0;
            for (; x + XB <= W; x += XB) {
                T* __restrict acc = acc_store.data();
                for (int b = 0; b < XB; ++b)
                    for (int f = 0; f < cout; ++f) acc[b * cout + f] = bptr[f];
                for (int ky = 0; ky < 3; ++ky) {
                    const T* __restrict inrow =
                        iptr + (static_cast<size_t>(y + ky) * in.w + x) * cin;
                    const T* __restrict wrow =
                        wptr + static_cast<size_t>(ky) * 3 * cin * cout;
                    for (int kx = 0; kx < 3; ++kx)
                        for (int ci = 0; ci < cin; ++ci) {
                            const T v0 = inrow[(kx + 0) * cin + ci];
                            const T v1 = inrow[(kx + 1) * cin + ci];
                            const T v2 = inrow[(kx + 2) * cin + ci];
                            const T v3 = inrow[(kx + 3) * cin + ci];
                            const T* __restrict wv =
                                wrow + (static_cast<size_t>(kx) * cin + ci) * cout;
                            T* __restrict a0 = acc;
                            T* __restrict a1 = acc + cout;
                            T* __restrict a2 = acc + 2 * cout;
                            T* __restrict a3 = acc + 3 * cout;
                            for (int f = 0; f < cout; ++f) {
                                const T wf = wv[f];
                                a0[f] += v0 * wf;
                                a1[f] += v1 * wf;
                                a2[f] += v2 * wf;
                                a3[f] += v3 * wf;
                            }
                        }
                }
                T* __restrict dst = optr + (static_cast<size_t>(y) * W + x) * cout;
                for (int i = 0; i < XB * cout; ++i) dst[i] = acc[i];
            }
            for (; x < W; ++x) {
                T* __restrict acc = optr + (static_cast<size_t>(y) * W + x) * cout;
                for (int f = 0; f < cout; ++f) acc[f] = bptr[f];
                for (int ky = 0; ky < 3; ++ky) {
                    const T* __restrict inrow =
                        iptr + (static_cast<size_t>(y + ky) * in.w + x) * cin;
                    const T* __restrict wrow =
                        wptr + static_cast<size_t>(ky) * 3 * cin * cout;
                    for (int kx = 0; kx < 3; ++kx)
                        for (int ci = 0; ci < cin; ++ci) {
                            T v = inrow[kx * cin + ci];
                            const T* __restrict wv =
                                wrow + (static_cast<size_t>(kx) * cin + ci) * cout;
                            for (int f = 0; f < cout; ++f) acc[f] += v * wv[f];
                        }
                }
            }
        }
    }

    void conv3x3_forward(const Tensor3<T>& in, const Conv& c, Tensor3<T>& out) const {
        if (c.cout == 32)
            conv3x3_forward_impl<32>(in, c, out);
        else
            conv3x3_forward_impl<0>(in, c, out);
    }

    static void relu(const Tensor3<T>& z, Tensor3<T>& a) {
        for (size_t i = 0; i < z.v.size(); ++i) a.v[i] = z.v[i] > T(0) ? z.v[i] : T(0);
    }

    static void dense_forward(const std::vector<T>& in, const Dense& d, std::vector<T>& out) {
        const T* __restrict iv = in.data();
        const T* __restrict wv = d.w.data();
        T* __restrict ov = out.data();
        for (int o = 0; o < d.out; ++o) ov[o] = d.b[static_cast<size_t>(o)];
        for (int i = 0; i < d.in; ++i) {
            T v = iv[i];
            const T* __restrict w = wv + static_cast<size_t>(i) * d.out;
            for (int o = 0; o < d.out; ++o) ov[o] += v * w[o];
        }
    }

    static void dense_backward(const std::vector<T>& in, const Dense& d,
                               const std::vector<T>& g_out, std::vector<T>& g_w,
                               std::vector<T>& g_b, std::vector<T>& g_in) {
        for (int o = 0; o < d.out; ++o) g_b[static_cast<size_t>(o)] += g_out[static_cast<size_t>(o)];
        g_in.assign(static_cast<size_t>(d.in), T(0));
        const T* __restrict iv = in.data();
        const T* __restrict wv = d.w.data();
        const T* __restrict go = g_out.data();
        T* __restrict gwv = g_w.data();
        T* __restrict giv = g_in.data();
        for (int i = 0; i < d.in; ++i) {
            T v = iv[i];
            const T* __restrict w = wv + static_cast<size_t>(i) * d.out;
            T* __restrict gw = gwv + static_cast<size_t>(i) * d.out;
            T acc = T(0);
            for (int o = 0; o < d.out; ++o) {
                gw[o] += v * go[o];
                acc += w[o] * go[o];
            }
            giv[i] = acc;
        }
    }

    template <int COUT>
    static void conv3x3_backward_impl(const Tensor3<T>& in, const Conv& c,
                                      const Tensor3<T>& g_z, std::vector<T>& g_w,
                                      std::vector<T>& g_b, Tensor3<T>* g_in) {
        const int H = g_z.h, W = g_z.w, cin = c.cin;
        const int cout = COUT > 0 ? COUT : c.cout;
        const T* __restrict wptr = c.w.data();
        const T* __restrict iptr = in.v.data();
        const T* __restrict gzptr = g_z.v.data();
        T* __restrict gwptr = g_w.data();
        T* __restrict gbptr = g_b.data();
        T* __restrict giptr = g_in ? g_in->v.data() : nullptr;
        constexpr int XB = 4;
        // the input gradient for a block of output columns is a small
        // matrix product: patch[b][r] = sum_f wt[f][r] * gz_b[f], where r
        // runs over the 9*cin kernel taps.  keeping the weights transposed
        // makes the r loop unit-stride over four independent accumulator
        // rows, so it vectorises without reordering any single sum.
        const int K = 9 * cin;
        std::vector<T> wt, patch;
        if (giptr) {
            wt.resize(static_cast<size_t>(cout) * K);
            for (int r = 0; r < K; ++r)
                for (int f = 0; f < cout; ++f)
                    wt[static_cast<size_t>(f) * K + r] = wptr[static_cast<size_t>(r) * cout + f];
            patch.resize(static_cast<size_t>(XB) * K);
        }
        for (int y = 0; y < H; ++y) {
            int x = 0;
            for (; x + XB <= W; x += XB) {
                // gz rows for the four output columns are contiguous
                const T* __restrict gz0 = gzptr + (static_cast<size_t>(y) * W + x) * cout;
                const T* __restrict gz1 = gz0 + cout;
                const T* __restrict gz2 = gz0 + 2 * cout;
                const T* __restrict gz3 = gz0 + 3 * cout;
                for (int f = 0; f < cout; ++f)
                    gbptr[f] += gz0[f] + gz1[f] + gz2[f] + gz3[f];
                for (int ky = 0; ky < 3; ++ky) {
                    const T* __restrict inrow =
                        iptr + (static_cast<size_t>(y + ky) * in.w + x) * cin;
                    for (int kx = 0; kx < 3; ++kx)
                        for (int ci = 0; ci < cin; ++ci) {
                            const size_t wbase =
                                ((static_cast<size_t>(ky) * 3 + kx) * cin + ci) * cout;
                            const T v0 = inrow[(kx + 0) * cin + ci];
                            const T v1 = inrow[(kx + 1) * cin + ci];
                            const T v2 = inrow[(kx + 2) * cin + ci];
                            const T v3 = inrow[(kx + 3) * cin + ci];
                            T* __restrict gw = gwptr + wbase;
                            for (int f = 0; f < cout; ++f)
                                gw[f] += v0 * gz0[f] + v1 * gz1[f] + v2 * gz2[f] +
                                         v3 * gz3[f];
                        }
                }
                if (giptr) {
                    std::fill(patch.begin(), patch.end(), T(0));
                    T* __restrict p0 = patch.data();
                    T* __restrict p1 = p0 + K;
                    T* __restrict p2 = p0 + 2 * K;
                    T* __restrict p3 = p0 + 3 * K;
                    const T* __restrict wtp = wt.data();
                    for (int f = 0; f < cout; ++f) {
                        const T g0 = gz0[f], g1 = gz1[f], g2 = gz2[f], g3 = gz3[f];
                        const T* __restrict wrow = wtp + static_cast<size_t>(f) * K;
                        for (int r = 0; r < K; ++r) {
                            p0[r] += wrow[r] * g0;
                            p1[r] += wrow[r] * g1;
                            p2[r] += wrow[r] * g2;
                            p3[r] += wrow[r] * g3;
                        }
                    }
                    for (int ky = 0; ky < 3; ++ky) {
                        T* __restrict ginrow =
                            giptr + (static_cast<size_t>(y + ky) * in.w + x) * cin;
                        for (int kx = 0; kx < 3; ++kx)
                            for (int b = 0; b < XB; ++b) {
                                const T* __restrict src =
                                    patch.data() + static_cast<size_t>(b) * K +
                                    (static_cast<size_t>(ky) * 3 + kx) * cin;
                                T* __restrict dst = ginrow + (kx + b) * cin;
                                for (int ci = 0; ci < cin; ++ci) dst[ci] += src[ci];
                            }
                    }
                }
            }
            for (; x < W; ++x) {
                const T* __restrict gz = gzptr + (static_cast<size_t>(y) * W + x) * cout;
                for (int f = 0; f < cout; ++f) gbptr[f] += gz[f];
                for (int ky = 0; ky < 3; ++ky) {
                    const T* __restrict inrow =
                        iptr + (static_cast<size_t>(y + ky) * in.w + x) * cin;
                    T* __restrict ginrow =
                        giptr ? giptr + (static_cast<size_t>(y + ky) * in.w + x) * cin
                              : nullptr;
                    for (int kx = 0; kx < 3; ++kx)
                        for (int ci = 0; ci < cin; ++ci) {
                            size_t wbase =
                                ((static_cast<size_t>(ky) * 3 + kx) * cin + ci) * cout;
                            T v = inrow[kx * cin + ci];
                            T* __restrict gw = gwptr + wbase;
                            const T* __restrict w = wptr + wbase;
                            T acc = T(0);
                            for (int f = 0; f < cout; ++f) {
                                gw[f] += v * gz[f];
                                acc += w[f] * gz[f];
                            }
                            if (ginrow) ginrow[kx * cin + ci] += acc;
                        }
                }
            }
        }
    }

    void conv3x3_backward(const Tensor3<T>& in, const Conv& c, const Tensor3<T>& g_z,
                          std::vector<T>& g_w, std::vector<T>& g_b,
                          Tensor3<T>* g_in) const {
        if (c.cout == 32)
            conv3x3_backward_impl<32>(in, c, g_z, g_w, g_b, g_in);
        else
            conv3x3_backward_impl<0>(in, c, g_z, g_w, g_b, g_in);
    }

    int input_size_ = 0;
    int input_channels_ = 0;
    int flat_size_ = 0;
    double dropout_rate_ = 0.5;
    std::vector<Conv> convs_;
    std::vector<Dense> dense_;
};

// cross-entropy on the winning-class probability, clamped away from log(0)
inline double loss(const std::array<double, 2>& probs, int label) {
    if (label != 0 && label != 1) throw ValidationError("loss: label must be 0 or 1");
    return -std::log(std::max(probs[static_cast<size_t>(label)], 1e-12));
}

struct FusedDecision {
    double score = 0.0;  // mean of the two per-channel probabilities
    bool handheld = false;
};

// average the two per-microphone scores; >= 0.5 decides handheld
inline FusedDecision fuse(double p_mic1, double p_mic2) {
    for (double p : {p_mic1, p_mic2})
        if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("fuse: probabilities must be in [0,1]");
    FusedDecision d;
    d.score = 0.5 * (p_mic1 + p_mic2);
    d.handheld = d.score >= 0.5;
    return d;
}

}  // namespace gripsense
