#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "t1rho/fitters/mlp.hpp"
#include "t1rho/fitters/unet.hpp"
#include "t1rho/fitters/voxels.hpp"
#include "t1rho/eval/metrics.hpp"

using namespace t1rho;
using namespace t1rho::fitters;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

const Spacing kSpacing{};

RoiMask block_roi(Dims d, int x0, int x1, int y0, int y1) {
    RoiMask m(d);
    for (int z = 0; z < d.nz; ++z)
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) m.set(x, y, z, true);
    return m;
}

Volume3D random_volume(Dims d, std::mt19937_64& rng, double lo, double hi) {
    Volume3D v(d, kSpacing);
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& x : v.data()) x = u(rng);
    return v;
}

/// Noiseless decay pairs: ik = i0 * exp(-tsl / T), target T.
TrainingSubject decay_subject(Dims d, double tsl, std::mt19937_64& rng, const RoiMask& roi) {
    TrainingSubject s{random_volume(d, rng, 0.5, 1.5), Volume3D(d, kSpacing), random_volume(d, rng, 20.0, 80.0), roi,
                      RoiMask(d, 1)};
    for (std::size_t i = 0; i < s.i0.size(); ++i) s.ik[i] = s.i0[i] * std::exp(-tsl / s.target[i]);
    return s;
}

UNetConfig tiny_unet() {
    UNetConfig c;
    c.depth = 2;
    c.base_channels = 3;
    c.patch = 8;
    c.sampling.patch = 8;
    c.epochs = 3;
    c.patches_per_epoch = 8;
    c.batch_size = 4;
    c.val_patches = 2;
    c.patience = 0;
    return c;
}

} // namespace

TEST_CASE("ROI masking keeps ROI voxels and zeroes the rest") {
    std::mt19937_64 rng(1);
    const Dims d{6, 5, 2};
    const auto v = random_volume(d, rng, 1.0, 2.0);
    const auto all = apply_roi_mask(v, RoiMask(d, 1));
    CHECK(std::equal(all.data().begin(), all.data().end(), v.data().begin()));
    const auto none = apply_roi_mask(v, RoiMask(d, 0));
    for (double x : none.data()) CHECK(x == 0.0);
    RoiMask checker(d);
    for (int z = 0; z < 2; ++z)
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 6; ++x) checker.set(x, y, z, (x + y + z) % 2 == 0);
    const auto half = apply_roi_mask(v, checker);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(half[i] == (checker[i] ? v[i] : 0.0));
    REQUIRE_THROWS_WITH(apply_roi_mask(v, RoiMask(Dims{6, 5, 1})), ContainsSubstring("dims mismatch"));
}

TEST_CASE("voxel extraction and reassembly are inverse on the ROI") {
    std::mt19937_64 rng(2);
    const Dims d{4, 3, 2};
    const auto v = random_volume(d, rng, 0.0, 1.0);
    const auto roi = block_roi(d, 1, 3, 0, 2);
    const auto vals = extract_voxels(v, roi);
    REQUIRE(vals.size() == roi.count());
    const auto back = reassemble_voxels(vals, roi, d, kSpacing);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(back[i] == (roi[i] ? v[i] : 0.0));

    RoiMask two(Dims{3, 1, 1});
    two.set(0, 0, 0, true);
    two.set(2, 0, 0, true);
    const std::vector<double> p{7.0, 9.0};
    const auto r = reassemble_voxels(p, two, two.dims(), kSpacing);
    CHECK(r[0] == 7.0);
    CHECK(r[1] == 0.0);
    CHECK(r[2] == 9.0);
    const std::vector<double> short_p{1.0};
    REQUIRE_THROWS_WITH(reassemble_voxels(short_p, two, two.dims(), kSpacing), ContainsSubstring("prediction length"));
}

TEST_CASE("patch sampler is deterministic and shaped") {
    std::mt19937_64 rng(3);
    const Dims d{24, 20, 3};
    const std::vector<TrainingSubject> subs{decay_subject(d, 10.0, rng, block_roi(d, 8, 14, 6, 12)),
                                            decay_subject(d, 10.0, rng, block_roi(d, 2, 5, 2, 5))};
    PatchConfig pc;
    pc.patch = 16;
    PatchSampler a(subs, pc, LossMaskMode::Unmasked, 11), b(subs, pc, LossMaskMode::Unmasked, 11);
    for (int k = 0; k < 10; ++k) {
        const auto pa = a.draw(), pb = b.draw();
        REQUIRE(pa.input.size() == 2 * 16 * 16);
        REQUIRE(pa.target.size() == 16 * 16);
        REQUIRE(pa.mask.size() == 16 * 16);
        CHECK(pa.input == pb.input);
        CHECK(pa.target == pb.target);
    }
}

TEST_CASE("ROI-biased patches are centred near the ROI") {
    std::mt19937_64 rng(4);
    const Dims d{40, 40, 4};
    const std::vector<TrainingSubject> subs{decay_subject(d, 10.0, rng, block_roi(d, 18, 22, 30, 33))};
    PatchConfig pc;
    pc.patch = 16;
    pc.roi_bias = 1.0;
    PatchSampler s(subs, pc, LossMaskMode::Unmasked, 5);
    for (int k = 0; k < 300; ++k) {
        const auto p = s.draw();
        bool near = false;
        for (int y = 0; y < d.ny && !near; ++y)
            for (int x = 0; x < d.nx && !near; ++x)
                near = subs[0].roi.at(x, y, p.z) && std::abs(x - p.cx) <= 8 && std::abs(y - p.cy) <= 8;
        REQUIRE(near);
    }
}

TEST_CASE("intensity noise augmentation touches inputs only") {
    std::mt19937_64 rng(5);
    const Dims d{20, 20, 2};
    const std::vector<TrainingSubject> subs{decay_subject(d, 10.0, rng, block_roi(d, 5, 15, 5, 15))};
    PatchConfig pc;
    pc.patch = 16;
    pc.flips = false;
    pc.max_rotation_deg = 0.0;
    pc.max_translation = 0;
    pc.max_noise_frac = 0.05;
    PatchSampler s(subs, pc, LossMaskMode::Unmasked, 6);
    int noisy = 0;
    for (int k = 0; k < 20; ++k) {
        const auto p = s.draw();
        const auto clean = s.centered(p.subject, p.z, p.cx, p.cy);
        CHECK(p.target == clean.target);
        CHECK(p.mask == clean.mask);
        noisy += p.input != clean.input;
    }
    CHECK(noisy == 20);
}

TEST_CASE("patch sampler errors") {
    std::mt19937_64 rng(6);
    const Dims d{10, 10, 1};
    const std::vector<TrainingSubject> subs{decay_subject(d, 10.0, rng, RoiMask(d, 0))};
    PatchConfig pc;
    pc.patch = 16;
    REQUIRE_THROWS_WITH(PatchSampler(subs, pc, LossMaskMode::Unmasked, 1), ContainsSubstring("patch larger than slice"));
    pc.patch = 8;
    REQUIRE_THROWS_WITH(PatchSampler(subs, pc, LossMaskMode::RoiMasked, 1), ContainsSubstring("empty mask"));
}

TEST_CASE("masked patches carry no loss weight or input outside the ROI") {
    std::mt19937_64 rng(7);
    const Dims d{24, 24, 2};
    const std::vector<TrainingSubject> subs{decay_subject(d, 10.0, rng, block_roi(d, 8, 16, 8, 16))};
    PatchConfig pc;
    pc.patch = 16;
    PatchSampler s(subs, pc, LossMaskMode::RoiMasked, 8);
    for (int k = 0; k < 20; ++k) {
        const auto p = s.draw();
        const auto b = detail::make_batch({p}, 16);
        std::vector<double> pred(p.target.size());
        for (std::size_t j = 0; j < pred.size(); ++j) pred[j] = p.target[j] + 1.0;
        if (b.active == 0) continue;
        const auto loss = nn::l1_loss(nn::Tensor(b.target.shape(), pred), b.target, &b.mask);
        for (std::size_t j = 0; j < pred.size(); ++j)
            if (p.mask[j] == 0.0) {
                CHECK(loss.grad[j] == 0.0);
                CHECK(p.input[j] == 0.0);
                CHECK(p.input[pred.size() + j] == 0.0);
            }
    }
}

TEST_CASE("window starts and coverage") {
    CHECK(window_starts(64, 64, 32) == std::vector<int>{0});
    CHECK(window_starts(40, 64, 32) == std::vector<int>{0});
    CHECK(window_starts(96, 64, 32) == std::vector<int>{0, 32});
    CHECK(window_starts(100, 64, 32) == std::vector<int>{0, 32, 36});
    const auto cov = coverage_counts(96, 96, 64, 32);
    CHECK(cov[0] == 1);
    CHECK(cov[std::size_t(40)] == 2);
    CHECK(cov[std::size_t(40) * 96 + 40] == 4);
    CHECK(cov[std::size_t(95) * 96 + 95] == 1);
    for (int c : cov) CHECK((c == 1 || c == 2 || c == 4));
}

TEST_CASE("sliding inference equals a per-window enumeration") {
    std::mt19937_64 rng(9);
    auto cfg = tiny_unet();
    auto net = build_unet(cfg, 20.0, 30.0);
    net.init_parameters(3);
    const Dims d{21, 13, 2};
    const auto i0 = random_volume(d, rng, 0.0, 1.0), ik = random_volume(d, rng, 0.0, 1.0);
    const auto out = infer_unet_sliding(net, i0, ik, 8, 3);

    const auto xs = window_starts(d.nx, 8, 3), ys = window_starts(d.ny, 8, 3);
    for (int z = 0; z < d.nz; ++z) {
        std::vector<double> acc(d.slice_count(), 0.0), cnt(d.slice_count(), 0.0);
        for (int y0 : ys)
            for (int x0 : xs) {
                nn::Tensor w({1, 2, 8, 8});
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x) {
                        w.at(0, 0, y, x) = i0.at(x0 + x, y0 + y, z);
                        w.at(0, 1, y, x) = ik.at(x0 + x, y0 + y, z);
                    }
                const auto& p = net.forward(w, nn::Mode::Eval);
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x) {
                        acc[std::size_t(y0 + y) * d.nx + std::size_t(x0 + x)] += p.at(0, 0, y, x);
                        cnt[std::size_t(y0 + y) * d.nx + std::size_t(x0 + x)] += 1.0;
                    }
            }
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const std::size_t j = std::size_t(y) * d.nx + std::size_t(x);
                REQUIRE(cnt[j] > 0.0);
                CHECK_THAT(out.at(x, y, z), WithinAbs(acc[j] / cnt[j], 1e-12));
            }
    }
}

TEST_CASE("a slice matching the window is one direct forward pass") {
    std::mt19937_64 rng(10);
    auto cfg = tiny_unet();
    auto net = build_unet(cfg, 20.0, 30.0);
    net.init_parameters(4);
    const Dims d{8, 8, 1};
    const auto i0 = random_volume(d, rng, 0.0, 1.0), ik = random_volume(d, rng, 0.0, 1.0);
    const auto out = infer_unet_sliding(net, i0, ik, 8, 4);
    nn::Tensor x({1, 2, 8, 8});
    for (int y = 0; y < 8; ++y)
        for (int xx = 0; xx < 8; ++xx) {
            x.at(0, 0, y, xx) = i0.at(xx, y, 0);
            x.at(0, 1, y, xx) = ik.at(xx, y, 0);
        }
    const auto& p = net.forward(x, nn::Mode::Eval);
    for (int y = 0; y < 8; ++y)
        for (int xx = 0; xx < 8; ++xx) CHECK(out.at(xx, y, 0) == p.at(0, 0, y, xx));
}

TEST_CASE("sliding inference pads small slices and stays in range") {
    std::mt19937_64 rng(11);
    auto cfg = tiny_unet();
    cfg.patch = 16;
    cfg.sampling.patch = 16;
    auto net = build_unet(cfg, 200.0, 30.0);
    net.init_parameters(5);
    const Dims d{10, 12, 2};
    const auto out = infer_unet_sliding(net, random_volume(d, rng, -5.0, 5.0), random_volume(d, rng, -5.0, 5.0), 16, 8);
    for (double v : out.data()) {
        CHECK(v >= 10.0);
        CHECK(v <= 100.0);
    }
    REQUIRE_THROWS_WITH(infer_unet_sliding(net, Volume3D(Dims{6, 12, 1}, kSpacing), Volume3D(Dims{6, 12, 1}, kSpacing), 16, 8),
                        ContainsSubstring("smaller than 8"));
    REQUIRE_THROWS_WITH(infer_unet_sliding(net, Volume3D(d, kSpacing), Volume3D(d, kSpacing), 8, 8),
                        ContainsSubstring("does not match window"));
}

TEST_CASE("U-Net learns a constant target") {
    std::mt19937_64 rng(12);
    const Dims d{16, 16, 2};
    std::vector<TrainingSubject> subs;
    for (int k = 0; k < 4; ++k) {
        auto s = decay_subject(d, 10.0, rng, block_roi(d, 4, 12, 4, 12));
        for (double& t : s.target.data()) t = 40.0;
        subs.push_back(std::move(s));
    }
    auto cfg = tiny_unet();
    cfg.epochs = 10;
    const auto m = train_unet(subs, cfg, 21);
    REQUIRE_FALSE(m.diverged);
    REQUIRE(m.log.size() == 10);
    auto net = m.net;
    const auto pred = infer_unet_sliding(net, subs[0].i0, subs[0].ik, 8, 4);
    double sum = 0.0;
    for (double v : pred.data()) sum += v;
    CHECK_THAT(sum / double(pred.size()), WithinAbs(40.0, 2.0));
}

TEST_CASE("U-Net training is deterministic per seed") {
    std::mt19937_64 rng(13);
    const Dims d{16, 16, 2};
    std::vector<TrainingSubject> subs;
    for (int k = 0; k < 3; ++k) subs.push_back(decay_subject(d, 10.0, rng, block_roi(d, 4, 12, 4, 12)));
    const auto cfg = tiny_unet();
    const auto a = train_unet(subs, cfg, 5), b = train_unet(subs, cfg, 5);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].train_loss == b.log[i].train_loss);
        CHECK(a.log[i].lr == b.log[i].lr);
    }
    CHECK(a.best_epoch == b.best_epoch);
}

TEST_CASE("masked U-Net training rejects an empty ROI") {
    std::mt19937_64 rng(14);
    const Dims d{16, 16, 1};
    const std::vector<TrainingSubject> subs{decay_subject(d, 10.0, rng, RoiMask(d, 0))};
    auto cfg = tiny_unet();
    cfg.loss_mask_mode = LossMaskMode::RoiMasked;
    REQUIRE_THROWS_WITH(train_unet(subs, cfg, 1), ContainsSubstring("empty mask"));
}

TEST_CASE("MLP inverts noiseless two-point decay") {
    std::mt19937_64 rng(15);
    const Dims d{48, 48, 4};
    std::vector<TrainingSubject> subs;
    for (int k = 0; k < 3; ++k) subs.push_back(decay_subject(d, 50.0, rng, RoiMask(d, 1)));
    MlpConfig cfg;
    cfg.epochs = 25;
    cfg.patience = 0;
    auto m = train_mlp(subs, cfg, 3);
    REQUIRE_FALSE(m.diverged);
    const auto test = decay_subject(d, 50.0, rng, RoiMask(d, 1));
    const auto pred = predict_mlp(m.net, test.i0, test.ik, test.roi);
    CHECK(eval::mape(pred, test.target, test.roi) < 5.0);
}

TEST_CASE("MLP first-epoch loss is reproducible") {
    std::mt19937_64 rng(16);
    const Dims d{20, 20, 2};
    std::vector<TrainingSubject> subs;
    for (int k = 0; k < 2; ++k) subs.push_back(decay_subject(d, 10.0, rng, block_roi(d, 2, 18, 2, 18)));
    MlpConfig cfg;
    cfg.epochs = 2;
    cfg.patience = 0;
    const auto a = train_mlp(subs, cfg, 8), b = train_mlp(subs, cfg, 8), c = train_mlp(subs, cfg, 9);
    CHECK(a.log.front().train_loss == b.log.front().train_loss);
    CHECK(a.log.front().train_loss != c.log.front().train_loss);
}

TEST_CASE("MLP rejects subjects without ROI voxels") {
    std::mt19937_64 rng(17);
    const Dims d{8, 8, 1};
    const std::vector<TrainingSubject> subs{decay_subject(d, 10.0, rng, RoiMask(d, 0))};
    REQUIRE_THROWS_WITH(train_mlp(subs, MlpConfig{}, 1), ContainsSubstring("empty ROI"));
    REQUIRE_THROWS_WITH(train_mlp({}, MlpConfig{}, 1), ContainsSubstring("empty dataset"));
    auto net = build_mlp(MlpConfig{}, 10.0, 30.0);
    REQUIRE_THROWS_WITH(predict_mlp(net, subs[0].i0, subs[0].ik, subs[0].roi), ContainsSubstring("empty ROI"));
}
