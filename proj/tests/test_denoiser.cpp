#include <doctest.h>

#include <cmath>

#include "dmi/core/rng.hpp"
#include "dmi/denoiser.hpp"

using dmi::Denoiser;
using dmi::DenoiserConfig;
using dmi::kNullLabel;
using dmi::Rng;
using dmi::Tensord;
using dmi::Tensorf;
namespace nn = dmi::nn;

namespace {

DenoiserConfig tiny_cfg() {
    DenoiserConfig cfg;
    cfg.image_size = 8;
    cfg.channels = 1;
    cfg.base_width = 4;
    cfg.depth = 2;
    cfg.num_classes = 3;
    cfg.time_embed_dim = 16;
    return cfg;
}

}  // namespace

TEST_CASE("config validation") {
    DenoiserConfig ok;
    ok.image_size = 32;
    ok.depth = 3;
    CHECK_NOTHROW(ok.validate());

    DenoiserConfig bad = ok;
    bad.image_size = 30;
    CHECK_THROWS(bad.validate());

    bad = ok;
    bad.num_classes = 1;
    CHECK_THROWS(bad.validate());

    bad = ok;
    bad.time_embed_dim = 15;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("deterministic initialization") {
    const DenoiserConfig cfg = tiny_cfg();
    Denoiser<float> a(cfg), b(cfg);
    a.init_params(99);
    b.init_params(99);
    REQUIRE(a.params().size() == b.params().size());
    for (size_t i = 0; i < a.params().size(); ++i) {
        const auto& pa = a.params()[i]->value;
        const auto& pb = b.params()[i]->value;
        REQUIRE(pa.numel() == pb.numel());
        for (int64_t j = 0; j < pa.numel(); ++j) REQUIRE(pa[j] == pb[j]);
    }
    Denoiser<float> c(cfg);
    c.init_params(100);
    bool any_diff = false;
    for (size_t i = 0; i < a.params().size() && !any_diff; ++i)
        for (int64_t j = 0; j < a.params()[i]->value.numel(); ++j)
            if (a.params()[i]->value[j] != c.params()[i]->value[j]) {
                any_diff = true;
                break;
            }
    CHECK(any_diff);
}

TEST_CASE("output shape matches input shape") {
    const DenoiserConfig cfg = tiny_cfg();
    Denoiser<float> net(cfg);
    net.init_params(1);
    Tensorf x({3, 1, 8, 8});
    Rng rng(5);
    rng.fill_normal(x.data(), x.numel());
    Tensorf out;
    net.forward(x, {1, 5, 9}, {0, 2, kNullLabel}, out);
    CHECK(out.shape() == x.shape());
    for (int64_t i = 0; i < out.numel(); ++i) CHECK(std::isfinite(out[i]));
}

TEST_CASE("conditional and unconditional passes differ at init") {
    const DenoiserConfig cfg = tiny_cfg();
    Denoiser<float> net(cfg);
    net.init_params(2);
    Tensorf x({1, 1, 8, 8});
    Rng rng(6);
    rng.fill_normal(x.data(), x.numel());
    Tensorf cond, uncond;
    net.forward(x, {4}, {1}, cond);
    net.forward(x, {4}, {kNullLabel}, uncond);
    bool differ = false;
    for (int64_t i = 0; i < cond.numel(); ++i)
        if (cond[i] != uncond[i]) differ = true;
    CHECK(differ);
}

TEST_CASE("zeroed label table makes conditioning inert") {
    const DenoiserConfig cfg = tiny_cfg();
    Denoiser<float> net(cfg);
    net.init_params(3);
    net.label_embedding().weight_.value.zero();
    Tensorf x({2, 1, 8, 8});
    Rng rng(7);
    rng.fill_normal(x.data(), x.numel());
    Tensorf cond, uncond;
    net.forward(x, {3, 8}, {0, 2}, cond);
    net.forward(x, {3, 8}, {kNullLabel, kNullLabel}, uncond);
    for (int64_t i = 0; i < cond.numel(); ++i) CHECK(cond[i] == uncond[i]);
}

TEST_CASE("input validation") {
    const DenoiserConfig cfg = tiny_cfg();
    Denoiser<float> net(cfg);
    net.init_params(4);
    Tensorf x({1, 1, 8, 8});
    Tensorf out;
    CHECK_THROWS(net.forward(x, {0}, {0}, out));                    // t < 1
    CHECK_THROWS(net.forward(x, {1}, {3}, out));                    // label == num_classes
    CHECK_THROWS(net.forward(x, {1}, {-2}, out));                   // below null sentinel
    CHECK_THROWS(net.forward(x, {1, 2}, {0}, out));                 // batch mismatch
    Tensorf bad({1, 1, 8, 4});
    CHECK_THROWS(net.forward(bad, {1}, {0}, out));                  // wrong spatial shape
    CHECK_NOTHROW(net.forward(x, {1}, {kNullLabel}, out));
}

TEST_CASE("analytic gradients match finite differences on a tiny net") {
    const DenoiserConfig cfg = tiny_cfg();
    Denoiser<double> net(cfg);
    net.init_params(11);
    Rng rng(12);
    Tensord x({2, 1, 8, 8});
    rng.fill_normal(x.data(), x.numel());
    const std::vector<int> t = {2, 7};
    const std::vector<int> labels = {1, kNullLabel};

    // loss = mean of squared outputs
    const auto loss = [&]() {
        Tensord out;
        net.forward(x, t, labels, out);
        double L = 0.0;
        for (int64_t i = 0; i < out.numel(); ++i) L += out[i] * out[i];
        return L / static_cast<double>(out.numel());
    };

    nn::zero_grads(net.params());
    Tensord out;
    net.forward(x, t, labels, out);
    Tensord dout(out.shape());
    for (int64_t i = 0; i < out.numel(); ++i) dout[i] = 2.0 * out[i] / static_cast<double>(out.numel());
    net.backward(dout);

    int checked = 0;
    Rng pick(13);
    const double h = 1e-3;  // the documented finite-difference step
    while (checked < 12) {
        auto* p = net.params()[static_cast<size_t>(pick.uniform_int(static_cast<int>(net.params().size())))];
        const int64_t i = pick.uniform_int(static_cast<int>(p->value.numel()));
        const double analytic = p->grad[i];
        double* slot = p->value.data() + i;
        const double orig = *slot;
        *slot = orig + h;
        const double lp = loss();
        *slot = orig - h;
        const double lm = loss();
        *slot = orig;
        const double fd = (lp - lm) / (2.0 * h);
        if (std::abs(fd) < 1e-8 && std::abs(analytic) < 1e-8) {
            ++checked;
            continue;
        }
        const double rel = std::abs(analytic - fd) / std::max({1e-8, std::abs(analytic), std::abs(fd)});
        CHECK(rel <= 1e-2);
        ++checked;
    }
}
