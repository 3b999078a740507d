#include "doctest.h"
#include "plural/decoder.hpp"
#include "plural/errors.hpp"
#include "support/oracles.hpp"

#include <cmath>
#include <string>

using namespace plural;
using plural::test::random_tensor;

namespace {

DecoderConfig tiny() {
    DecoderConfig c;
    c.image_size = 16;
    c.stages = 2;
    c.n_z = 4;
    c.prt_channels = {4, 8};
    c.gen_channels = {4, 8};
    c.disc_channels = {4, 8};
    return c;
}

VqAutoencoder tiny_vq() {
    VqConfig c;
    c.image_size = 16;
    c.stages = 2;
    c.codebook_size = 8;
    c.n_z = 4;
    c.channels = {4, 8};
    return VqAutoencoder(c, 1);
}

void zero_params(const nn::ParamList& params) {
    for (const auto& p : params)
        for (auto& v : Tensor(p.tensor).mutable_data()) v = 0.0f;
}

MaskGrid random_mask(int side, std::mt19937_64& rng) {
    MaskGrid m(side, side, true);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) m.set(y, x, rng() % 3 != 0);
    return m;
}

}  // namespace

TEST_CASE("compose identities") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor z = random_tensor({4, 3, 3}, rng), p = random_tensor({4, 3, 3}, rng);
        const Tensor all = compose(z, p, MaskGrid(3, 3, true));
        for (std::size_t i = 0; i < 36; ++i) CHECK(all.data()[i] == p.data()[i]);
        const Tensor none = compose(z, p, MaskGrid(3, 3, false));
        for (std::size_t i = 0; i < 36; ++i) CHECK(none.data()[i] == doctest::Approx((z.data()[i] + p.data()[i]) / 2));
        const MaskGrid m = random_mask(3, rng);
        const Tensor same = compose(p, p, m);
        for (std::size_t i = 0; i < 36; ++i) CHECK(same.data()[i] == doctest::Approx(p.data()[i]));
    }
    CHECK_THROWS_AS(compose(Tensor::zeros({4, 3, 3}), Tensor::zeros({4, 3, 2}), MaskGrid(3, 3, true)), ShapeError);
    CHECK_THROWS_AS(compose(Tensor::zeros({4, 3, 3}), Tensor::zeros({4, 3, 3}), MaskGrid(2, 2, true)), ShapeError);
}

TEST_CASE("decode output extents and determinism") {
    ComposerNet nets(tiny(), 2);
    std::mt19937_64 rng(2);
    const Tensor x = random_tensor({2, 3, 16, 16}, rng);
    const std::vector<MaskGrid> masks{random_mask(16, rng), random_mask(16, rng)};
    const Tensor z = random_tensor({2, 4, 4, 4}, rng);
    NoGradGuard ng;
    const Tensor partial = nets.prt.forward(x, masks);
    CHECK(partial.shape() == Shape{2, 4, 4, 4});
    const Tensor a = decode(nets, x, masks, z), b = decode(nets, x, masks, z);
    CHECK(a.shape() == Shape{2, 3, 16, 16});
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    for (float v : a.data()) {
        CHECK(v >= -1.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("constant discriminator gives closed-form GAN losses") {
    ComposerNet nets(tiny(), 3);
    zero_params(nets.disc_params());
    const VqAutoencoder vq = tiny_vq();
    std::mt19937_64 rng(3);
    const Tensor x = random_tensor({3, 3, 16, 16}, rng);
    const Tensor x_hat = random_tensor({3, 3, 16, 16}, rng);
    const DecoderLosses l = decoder_losses(x, x_hat, nets.disc, vq);
    CHECK(std::abs(l.l_g.item() - std::log(2.0)) < 1e-6);
    CHECK(std::abs(l.l_d.item() - 2.0 * std::log(2.0)) < 1e-6);
    CHECK(l.r1 == 0.0);
    const DecoderLosses same = decoder_losses(x, x, nets.disc, vq);
    CHECK(same.l_p.item() == 0.0f);
    CHECK(same.l_decode.item() == doctest::Approx(std::log(2.0)));
}

TEST_CASE("GAN losses match closed forms across constant probabilities") {
    ComposerNet nets(tiny(), 4);
    zero_params(nets.disc_params());
    const VqAutoencoder vq = tiny_vq();
    nn::ParamList dp = nets.disc_params();
    Tensor bias = dp.back().tensor;  // head bias sets the constant logit
    std::mt19937_64 rng(4);
    const Tensor x = random_tensor({2, 3, 16, 16}, rng);
    for (double p : {0.05, 0.2, 0.5, 0.8, 0.95}) {
        bias.mutable_data()[0] = static_cast<float>(std::log(p / (1 - p)));
        const DecoderLosses l = decoder_losses(x, x, nets.disc, vq);
        CHECK(l.l_g.item() == doctest::Approx(-std::log(p)).epsilon(1e-5));
        CHECK(l.l_d.item() == doctest::Approx(-std::log(p) - std::log(1 - p)).epsilon(1e-5));
    }
}

TEST_CASE("R1 input gradient matches finite differences") {
    ComposerNet nets(tiny(), 5);
    std::mt19937_64 rng(5);
    const Tensor x = random_tensor({2, 3, 16, 16}, rng);
    const R1Result r = r1_penalty(nets.disc, x);
    Tensor probe = x.clone();
    auto d = probe.mutable_data();
    std::vector<double> fd(d.size());
    const float h = 1e-2f;
    NoGradGuard ng;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const float keep = d[i];
        d[i] = keep + h;
        const double up = ops::sum(nets.disc.forward(probe)).item();
        d[i] = keep - h;
        const double down = ops::sum(nets.disc.forward(probe)).item();
        d[i] = keep;
        fd[i] = (up - down) / (2.0 * h);
    }
    double num = 0.0, den = 0.0, fd_r1 = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
        num += (fd[i] - r.input_grad[i]) * (fd[i] - r.input_grad[i]);
        den += fd[i] * fd[i];
        fd_r1 += fd[i] * fd[i];
    }
    CHECK(std::sqrt(num / den) < 1e-2);
    CHECK(std::abs(fd_r1 / 2.0 - r.value) / r.value < 1e-2);
}

namespace {

// Relative error of the finite-difference R1 parameter gradient against
// central differences of R1 itself, over every seventh entry of `names`.
double r1_param_grad_error(const ComposerNet& nets, const Tensor& x, const std::string& only) {
    const nn::ParamList params = nets.disc_params();
    nn::zero_grad(params);
    accumulate_r1_grad(nets.disc, x, 1.0f);
    double num = 0.0, den = 0.0;
    const float h = 1e-3f;
    for (const auto& p : params) {
        if (p.name.find(only) == std::string::npos) continue;
        auto d = Tensor(p.tensor).mutable_data();
        const auto g = p.tensor.grad();
        for (std::size_t i = 0; i < d.size(); i += 7) {
            const float keep = d[i];
            d[i] = keep + h;
            const double up = r1_penalty(nets.disc, x).value;
            d[i] = keep - h;
            const double down = r1_penalty(nets.disc, x).value;
            d[i] = keep;
            const double fd = (up - down) / (2.0 * h);
            num += (fd - g[i]) * (fd - g[i]);
            den += fd * fd;
        }
    }
    return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("finite-difference R1 parameter gradient is exact for a linear discriminator") {
    DecoderConfig c = tiny();
    c.disc_leak = 1.0f;
    ComposerNet nets(c, 6);
    std::mt19937_64 rng(6);
    const Tensor x = random_tensor({2, 3, 16, 16}, rng);
    CHECK(r1_param_grad_error(nets, x, "disc") < 1e-2);
}

TEST_CASE("finite-difference R1 parameter gradient tracks the head of a leaky discriminator") {
    // Away from the head, D is piecewise linear in x and the difference
    // quotient smears activation kinks, so only the head is compared.
    ComposerNet nets(tiny(), 6);
    std::mt19937_64 rng(6);
    const Tensor x = random_tensor({2, 3, 16, 16}, rng);
    CHECK(r1_param_grad_error(nets, x, "head.weight") < 0.2);
}

TEST_CASE("decoder checkpoint round trip") {
    ComposerNet a(tiny(), 7), b(tiny(), 8);
    const std::string bytes = encode_checkpoint(a.checkpoint_entries());
    b.load(decode_checkpoint(bytes));
    CHECK(encode_checkpoint(b.checkpoint_entries()) == bytes);
    DecoderConfig other = tiny();
    other.n_z = 8;
    ComposerNet c(other, 1);
    CHECK_THROWS_AS(c.load(decode_checkpoint(bytes)), CheckpointError);
}

TEST_CASE("decoder training leaves the VQ weights untouched") {
    ComposerNet nets(tiny(), 9);
    VqAutoencoder vq = tiny_vq();
    const std::string before = encode_checkpoint(vq.checkpoint_entries());
    const ImageSet data = make_dataset(DatasetKind::Mixed, 8, 16, 3).images();
    DecoderTrainConfig cfg;
    cfg.steps = 4;
    cfg.batch = 2;
    cfg.log_every = 2;
    const DecoderReport r = train_decoder(nets, vq, data, cfg);
    CHECK(r.window_masked_mse.size() == 2);
    CHECK(encode_checkpoint(vq.checkpoint_entries()) == before);
    for (const auto& p : vq.params()) CHECK(p.tensor.requires_grad());
}
