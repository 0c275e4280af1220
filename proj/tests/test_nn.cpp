#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gripsense/common.hpp"
#include "gripsense/nn.hpp"
#include "gripsense/train.hpp"

using namespace gripsense;

namespace {

Tensor3<double> random_tensor(int h, int w, int c, Rng& rng) {
    Tensor3<double> t(h, w, c);
    for (auto& v : t.v) v = rng.uniform(-1.0, 1.0);
    return t;
}

// loss of the current model parameters on one sample with a fixed dropout mask
double loss_at(const Cnn<double>& model, const Tensor3<double>& x, int label,
               const std::vector<uint8_t>& mask) {
    Cnn<double>::Workspace ws;
    auto probs = model.forward(x, true, mask, ws);
    return loss(probs, label);
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST(Nn, StandardTopologyMatchesAuditTable) {
    Cnn<float> model = Cnn<float>::standard();
    auto layers = model.summary();

    // name, shape, params for every layer of the production topology
    struct Expect {
        const char* name;
        std::vector<long> shape;
        long params;
    };
    const std::vector<Expect> want = {
        {"conv2d", {148, 148, 32}, 896},
        {"max_pooling2d", {74, 74, 32}, 0},
        {"conv2d_1", {72, 72, 32}, 9248},
        {"max_pooling2d_1", {36, 36, 32}, 0},
        {"conv2d_2", {34, 34, 32}, 9248},
        {"max_pooling2d_2", {17, 17, 32}, 0},
        {"flatten", {9248}, 0},
        {"dropout", {9248}, 0},
        {"dense", {128}, 1183872},
        {"dense_1", {60}, 7740},
        {"dense_2", {2}, 122},
    };
    ASSERT_EQ(layers.size(), want.size());
    for (size_t i = 0; i < want.size(); ++i) {
        EXPECT_EQ(layers[i].name, want[i].name) << "layer " << i;
        EXPECT_EQ(layers[i].output_shape, want[i].shape) << "layer " << i;
        EXPECT_EQ(layers[i].param_count, want[i].params) << "layer " << i;
    }
    EXPECT_EQ(model.param_count(), 1211126L);
    EXPECT_EQ(model.flat_size(), 9248);
}

TEST(Nn, ConvOutputDimsFormulaAndValidation) {
    EXPECT_EQ(conv_output_dims({150, 3, 1, 0, 32}).out_size, 148);
    EXPECT_EQ(conv_output_dims({74, 3, 1, 0, 32}).out_size, 72);
    EXPECT_EQ(conv_output_dims({28, 5, 3, 2, 8}).out_size, 10);  // (28-5+4)/3+1
    EXPECT_EQ(conv_output_dims({7, 7, 1, 0, 1}).out_size, 1);
    EXPECT_EQ(conv_output_dims({5, 3, 2, 1, 4}).out_size, 3);  // (5-3+2)/2+1

    // non-integral stride division
    EXPECT_THROW(conv_output_dims({28, 5, 2, 0, 8}), ValidationError);
    // kernel larger than padded input
    EXPECT_THROW(conv_output_dims({4, 7, 1, 0, 2}), ValidationError);
    EXPECT_THROW(conv_output_dims({0, 3, 1, 0, 2}), ValidationError);
    EXPECT_THROW(conv_output_dims({8, 3, 0, 0, 2}), ValidationError);
    EXPECT_THROW(conv_output_dims({8, 3, 1, -1, 2}), ValidationError);
    EXPECT_THROW(conv_output_dims({8, 3, 1, 0, 0}), ValidationError);
}

TEST(Nn, ConvOutputDimsMatchesActualConvolution) {
    Rng rng(2024);
    int checked = 0;
    while (checked < 25) {
        long m = 4 + static_cast<long>(rng.uniform_int(20));
        long k = 1 + static_cast<long>(rng.uniform_int(5));
        long l = 1 + static_cast<long>(rng.uniform_int(3));
        long d = static_cast<long>(rng.uniform_int(3));
        long t = 1 + static_cast<long>(rng.uniform_int(6));
        long span = m - k + 2 * d;
        if (span < 0 || span % l != 0) {
            EXPECT_THROW(conv_output_dims({m, k, l, d, t}), ValidationError);
            continue;
        }
        ConvDims dims = conv_output_dims({m, k, l, d, t});

        Tensor3<double> in(static_cast<int>(m), static_cast<int>(m), 2);
        for (auto& v : in.v) v = rng.uniform(-1.0, 1.0);
        std::vector<double> w(static_cast<size_t>(k) * k * 2 * t);
        std::vector<double> b(static_cast<size_t>(t));
        for (auto& v : w) v = rng.uniform(-1.0, 1.0);
        for (auto& v : b) v = rng.uniform(-1.0, 1.0);
        Tensor3<double> out = conv2d_reference(in, w, b, k, l, d, t);
        EXPECT_EQ(out.h, dims.out_size);
        EXPECT_EQ(out.w, dims.out_size);
        EXPECT_EQ(out.c, dims.filters);
        ++checked;
    }
}

TEST(Nn, FastConvPathMatchesReferenceConv) {
    // the model's specialised 3x3 kernel must agree with the general one
    Cnn<float> model(12, 3, {5}, {4, 2}, 0.0);
    model.init_weights(99);
    Rng rng(5);
    Tensor3<float> x(12, 12, 3);
    for (auto& v : x.v) v = static_cast<float>(rng.uniform(-1.0, 1.0));

    Cnn<float>::Workspace ws;
    model.forward(x, false, {}, ws);

    const auto& c = model.convs()[0];
    Tensor3<float> ref = conv2d_reference(x, c.w, c.b, 3, 1, 0, c.cout);
    ASSERT_EQ(ref.v.size(), ws.conv_z[0].v.size());
    for (size_t i = 0; i < ref.v.size(); ++i)
        EXPECT_NEAR(ref.v[i], ws.conv_z[0].v[i], 1e-5) << "element " << i;
}

TEST(Nn, MaxPoolPicksFirstRowMajorElementOnTies) {
    // all four candidates equal: the (0,0) element must win the gradient
    Tensor3<float> in(2, 2, 1);
    in.at(0, 0, 0) = in.at(0, 1, 0) = in.at(1, 0, 0) = in.at(1, 1, 0) = 3.0f;
    std::vector<uint8_t> arg;
    Tensor3<float> out = maxpool2x2(in, &arg);
    ASSERT_EQ(out.v.size(), 1u);
    EXPECT_EQ(out.at(0, 0, 0), 3.0f);
    EXPECT_EQ(arg[0], 0);

    Tensor3<float> g_out(1, 1, 1);
    g_out.at(0, 0, 0) = 1.0f;
    Tensor3<float> g_in(2, 2, 1);
    maxpool2x2_backward(g_out, arg, g_in);
    EXPECT_EQ(g_in.at(0, 0, 0), 1.0f);
    EXPECT_EQ(g_in.at(0, 1, 0), 0.0f);
    EXPECT_EQ(g_in.at(1, 0, 0), 0.0f);
    EXPECT_EQ(g_in.at(1, 1, 0), 0.0f);

    // partial tie: (0,1) and (1,0) share the max; earlier row-major one wins
    in.at(0, 0, 0) = 1.0f;
    in.at(0, 1, 0) = 7.0f;
    in.at(1, 0, 0) = 7.0f;
    in.at(1, 1, 0) = 2.0f;
    out = maxpool2x2(in, &arg);
    EXPECT_EQ(out.at(0, 0, 0), 7.0f);
    EXPECT_EQ(arg[0], 1);  // window order: (0,0),(0,1),(1,0),(1,1)

    // distinct values pick the true max
    in.at(1, 1, 0) = 9.0f;
    out = maxpool2x2(in, &arg);
    EXPECT_EQ(out.at(0, 0, 0), 9.0f);
    EXPECT_EQ(arg[0], 3);
}

TEST(Nn, GradientsMatchCentralFiniteDifferences) {
    // double-precision model, fixed dropout mask, every parameter checked
    Cnn<double> model(10, 2, {3}, {8, 2}, 0.5);
    model.init_weights(17);
    Rng rng(404);
    Tensor3<double> x = random_tensor(10, 10, 2, rng);
    const int label = 1;

    std::vector<uint8_t> mask(static_cast<size_t>(model.flat_size()));
    for (auto& m : mask) m = rng.uniform01() >= 0.5 ? 1 : 0;

    Cnn<double>::Workspace ws;
    Cnn<double>::Gradients grads;
    grads.match(model);
    model.forward(x, true, mask, ws);
    model.backward(x, label, true, mask, ws, grads, 1.0);

    const double step = 1e-4;
    double max_rel = 0.0;
    long n_checked = 0;
    auto check_vec = [&](std::vector<double>& params, const std::vector<double>& g) {
        for (size_t i = 0; i < params.size(); ++i) {
            double saved = params[i];
            params[i] = saved + step;
            double lp = loss_at(model, x, label, mask);
            params[i] = saved - step;
            double lm = loss_at(model, x, label, mask);
            params[i] = saved;
            double fd = (lp - lm) / (2.0 * step);
            double denom = std::max(std::abs(g[i]) + std::abs(fd), 1e-6);
            double rel = std::abs(g[i] - fd) / denom;
            if (std::abs(g[i] - fd) < 1e-9) rel = 0.0;  // both effectively zero
            max_rel = std::max(max_rel, rel);
            ++n_checked;
        }
    };
    check_vec(model.convs()[0].w, grads.conv_w[0]);
    check_vec(model.convs()[0].b, grads.conv_b[0]);
    check_vec(model.dense_layers()[0].w, grads.dense_w[0]);
    check_vec(model.dense_layers()[0].b, grads.dense_b[0]);
    check_vec(model.dense_layers()[1].w, grads.dense_w[1]);
    check_vec(model.dense_layers()[1].b, grads.dense_b[1]);

    EXPECT_EQ(n_checked, model.param_count());
    EXPECT_LT(max_rel, 1e-4) << "worst relative error across " << n_checked << " parameters";
}

TEST(Nn, SoftmaxHeadIsNormalizedAndLossClamped) {
    Cnn<float> model(8, 1, {4}, {6, 2}, 0.0);
    model.init_weights(3);
    Rng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor3<float> x(8, 8, 1);
        for (auto& v : x.v) v = static_cast<float>(rng.uniform(-2.0, 2.0));
        auto probs = model.infer(x);
        EXPECT_GE(probs[0], 0.0);
        EXPECT_GE(probs[1], 0.0);
        EXPECT_NEAR(probs[0] + probs[1], 1.0, 1e-9);
    }

    EXPECT_NEAR(loss({0.25, 0.75}, 1), -std::log(0.75), 1e-12);
    // certainty about the wrong class hits the clamp instead of log(0)
    EXPECT_NEAR(loss({1.0, 0.0}, 1), -std::log(1e-12), 1e-9);
    EXPECT_THROW(loss({0.5, 0.5}, 2), ValidationError);
}

TEST(Nn, DropoutSemantics) {
    // rate 0: train-mode forward equals inference exactly
    Cnn<float> model(8, 1, {4}, {6, 2}, 0.0);
    model.init_weights(21);
    Rng rng(77);
    Tensor3<float> x(8, 8, 1);
    for (auto& v : x.v) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    std::vector<uint8_t> all_on(static_cast<size_t>(model.flat_size()), 1);
    Cnn<float>::Workspace ws;
    auto p_train = model.forward(x, true, all_on, ws);
    auto p_infer = model.infer(x);
    EXPECT_EQ(p_train[0], p_infer[0]);
    EXPECT_EQ(p_train[1], p_infer[1]);

    // rate 0.5: different masks give different outputs, and a dropped unit
    // contributes nothing
    Cnn<float> m2(8, 1, {4}, {6, 2}, 0.5);
    m2.init_weights(21);
    std::vector<uint8_t> mask_a(static_cast<size_t>(m2.flat_size()), 1);
    std::vector<uint8_t> mask_b = mask_a;
    for (size_t i = 0; i < mask_b.size(); i += 2) mask_b[i] = 0;
    auto pa = m2.forward(x, true, mask_a, ws);
    auto pb = m2.forward(x, true, mask_b, ws);
    EXPECT_NE(pa[0], pb[0]);

    // with every unit dropped only the dense biases remain: propagate a
    // zero vector through the dense stack by hand and compare
    std::vector<uint8_t> none(static_cast<size_t>(m2.flat_size()), 0);
    auto p_none = m2.forward(x, true, none, ws);
    const auto& layers = m2.dense_layers();
    std::vector<float> input(static_cast<size_t>(m2.flat_size()), 0.0f);
    std::vector<float> out;
    for (const auto& d : layers) {
        out.assign(static_cast<size_t>(d.out), 0.0f);
        for (int o = 0; o < d.out; ++o) out[static_cast<size_t>(o)] = d.b[static_cast<size_t>(o)];
        for (int i = 0; i < d.in; ++i)
            for (int o = 0; o < d.out; ++o)
                out[static_cast<size_t>(o)] +=
                    input[static_cast<size_t>(i)] * d.w[static_cast<size_t>(i) * d.out + o];
        input = out;
    }
    double mx = std::max(out[0], out[1]);
    double e0 = std::exp(double(out[0]) - mx), e1 = std::exp(double(out[1]) - mx);
    EXPECT_NEAR(p_none[1], e1 / (e0 + e1), 1e-12);
}

TEST(Nn, TrainingLearnsSyntheticPatternsDeterministically) {
    // class 0: bright top-left quadrant; class 1: bright bottom-right
    Rng rng(31);
    std::vector<Tensor3<float>> images;
    std::vector<int> labels;
    for (int i = 0; i < 60; ++i) {
        int label = i % 2;
        Tensor3<float> img(12, 12, 3);
        for (auto& v : img.v) v = static_cast<float>(rng.uniform(0.0, 0.25));
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x)
                for (int c = 0; c < 3; ++c) {
                    int yy = label ? y + 6 : y;
                    int xx = label ? x + 6 : x;
                    img.at(yy, xx, c) = static_cast<float>(rng.uniform(0.75, 1.0));
                }
        images.push_back(std::move(img));
        labels.push_back(label);
    }

    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch_size = 8;
    cfg.dropout_rate = 0.25;
    cfg.conv_filters = {8};
    cfg.dense_sizes = {16, 2};
    cfg.seed = 7;
    TrainReport report;
    Cnn<float> model = train(images, labels, cfg, &report);

    ASSERT_EQ(report.epoch_mean_loss.size(), 8u);
    EXPECT_LT(report.epoch_mean_loss.back(), 0.5 * report.epoch_mean_loss.front());

    int correct = 0;
    for (size_t i = 0; i < images.size(); ++i) {
        auto probs = model.infer(images[i]);
        int pred = probs[1] >= 0.5 ? 1 : 0;
        correct += pred == labels[i];
    }
    EXPECT_GE(correct, 57) << "training accuracy below 95% on a separable task";

    // identical seed and data: bit-identical weights
    Cnn<float> again = train(images, labels, cfg, nullptr);
    EXPECT_EQ(model.convs()[0].w, again.convs()[0].w);
    EXPECT_EQ(model.dense_layers()[0].w, again.dense_layers()[0].w);
    EXPECT_EQ(model.dense_layers()[1].b, again.dense_layers()[1].b);

    // different seed: different weights
    cfg.seed = 8;
    Cnn<float> other = train(images, labels, cfg, nullptr);
    EXPECT_NE(model.dense_layers()[0].w, other.dense_layers()[0].w);
}

TEST(Nn, HeUniformInitStaysWithinLimits) {
    Cnn<float> model(10, 2, {3}, {8, 2}, 0.5);
    model.init_weights(5);
    const double conv_limit = std::sqrt(6.0 / (9.0 * 2));
    float lo = 0, hi = 0;
    for (float w : model.convs()[0].w) {
        EXPECT_LE(std::abs(w), conv_limit);
        lo = std::min(lo, w);
        hi = std::max(hi, w);
    }
    EXPECT_LT(lo, -0.25 * conv_limit);  // spread actually fills the range
    EXPECT_GT(hi, 0.25 * conv_limit);
    for (float b : model.convs()[0].b) EXPECT_EQ(b, 0.0f);
    const double dense_limit = std::sqrt(6.0 / model.flat_size());
    for (float w : model.dense_layers()[0].w) EXPECT_LE(std::abs(w), dense_limit);
}

TEST(Nn, SaveLoadRoundTripIsBitExact) {
    Cnn<float> model(10, 2, {3}, {8, 2}, 0.5);
    model.init_weights(123);
    std::string path = temp_path("gs_model_roundtrip.gsnn");
    save_model(model, path);
    Cnn<float> loaded = load_model(path);

    EXPECT_EQ(loaded.input_size(), model.input_size());
    EXPECT_EQ(loaded.input_channels(), model.input_channels());
    EXPECT_EQ(loaded.dropout_rate(), model.dropout_rate());
    ASSERT_EQ(loaded.convs().size(), model.convs().size());
    EXPECT_EQ(loaded.convs()[0].w, model.convs()[0].w);
    EXPECT_EQ(loaded.convs()[0].b, model.convs()[0].b);
    ASSERT_EQ(loaded.dense_layers().size(), model.dense_layers().size());
    for (size_t i = 0; i < loaded.dense_layers().size(); ++i) {
        EXPECT_EQ(loaded.dense_layers()[i].w, model.dense_layers()[i].w);
        EXPECT_EQ(loaded.dense_layers()[i].b, model.dense_layers()[i].b);
    }

    // inference through the loaded model is bit-identical
    Rng rng(9);
    Tensor3<float> x(10, 10, 2);
    for (auto& v : x.v) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    auto p1 = model.infer(x);
    auto p2 = loaded.infer(x);
    EXPECT_EQ(p1[0], p2[0]);
    EXPECT_EQ(p1[1], p2[1]);
    std::filesystem::remove(path);
}

TEST(Nn, ModelFileRejectsCorruptionAndTruncation) {
    Cnn<float> model(10, 2, {3}, {8, 2}, 0.5);
    model.init_weights(1);
    std::string path = temp_path("gs_model_corrupt.gsnn");
    save_model(model, path);
    std::string blob = read_file(path);

    // wrong magic
    std::string bad = blob;
    bad[0] = 'X';
    std::string bad_path = temp_path("gs_model_badmagic.gsnn");
    write_file_atomic(bad_path, bad);
    EXPECT_THROW(load_model(bad_path), FormatError);

    // unsupported version
    std::string badver = blob;
    badver[4] = 9;
    write_file_atomic(bad_path, badver);
    EXPECT_THROW(load_model(bad_path), FormatError);

    // truncated weight block
    std::string trunc = blob.substr(0, blob.size() / 2);
    write_file_atomic(bad_path, trunc);
    EXPECT_THROW(load_model(bad_path), IoError);

    // truncated header
    write_file_atomic(bad_path, blob.substr(0, 6));
    EXPECT_THROW(load_model(bad_path), IoError);

    std::filesystem::remove(path);
    std::filesystem::remove(bad_path);
}

TEST(Nn, ModelFileSizeMatchesParameterCount) {
    Cnn<float> model = Cnn<float>::standard();
    model.init_weights(2);
    std::string path = temp_path("gs_model_standard.gsnn");
    save_model(model, path);
    // header: magic(4) + version(4) + input dims(8) + conv count(4) + 3 conv
    // entries(12) + dense count(4) + 3 dense entries(12) + dropout(4)
    const size_t header = 4 + 4 + 8 + 4 + 12 + 4 + 12 + 4;
    const size_t expected = header + 4u * static_cast<size_t>(model.param_count());
    EXPECT_EQ(std::filesystem::file_size(path), expected);
    EXPECT_EQ(expected, 4844556u);  // about 4.6 MiB
    std::filesystem::remove(path);
}

TEST(Nn, FuseAveragesScoresAndBreaksTiesHandheld) {
    FusedDecision d = fuse(0.9, 0.2);
    EXPECT_NEAR(d.score, 0.55, 1e-12);
    EXPECT_TRUE(d.handheld);

    d = fuse(0.3, 0.2);
    EXPECT_NEAR(d.score, 0.25, 1e-12);
    EXPECT_FALSE(d.handheld);

    d = fuse(0.5, 0.5);
    EXPECT_TRUE(d.handheld);  // boundary goes to handheld

    EXPECT_THROW(fuse(-0.1, 0.5), ValidationError);
    EXPECT_THROW(fuse(0.5, 1.5), ValidationError);
}

TEST(Nn, TrainValidatesInputs) {
    std::vector<Tensor3<float>> images;
    std::vector<int> labels;
    TrainConfig cfg;
    cfg.conv_filters = {4};
    cfg.dense_sizes = {8, 2};
    cfg.epochs = 1;

    EXPECT_THROW(train(images, labels, cfg), ValidationError);

    for (int i = 0; i < 4; ++i) {
        images.emplace_back(10, 10, 1);
        labels.push_back(0);  // single class only
    }
    EXPECT_THROW(train(images, labels, cfg), ValidationError);

    labels.back() = 2;  // out-of-range label
    EXPECT_THROW(train(images, labels, cfg), ValidationError);

    labels.back() = 1;
    labels.pop_back();  // count mismatch
    EXPECT_THROW(train(images, labels, cfg), ValidationError);

    labels.push_back(1);
    TrainConfig bad = cfg;
    bad.epochs = 0;
    EXPECT_THROW(train(images, labels, bad), ValidationError);
    bad = cfg;
    bad.dropout_rate = 1.0;
    EXPECT_THROW(train(images, labels, bad), ValidationError);
}
