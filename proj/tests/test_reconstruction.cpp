#include "pga/camera.hpp"
#include "pga/errors.hpp"
#include "pga/reconstruction.hpp"
#include "pga/renderer.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace pga;

namespace {

Gaussian3D colored(const Vec3& color, double opacity = 0.9) {
    Gaussian3D g;
    g.scale = Vec3(0.5, 0.4, 0.3);
    g.opacity = opacity;
    g.sh.assign(3, 0.0);
    for (int c = 0; c < 3; ++c) g.sh[c] = (color[c] - 0.5) / kShC0;
    return g;
}

GaussianScene one_splat(const Vec3& color) {
    GaussianScene s;
    s.sh_degree = 0;
    s.background_color = {0.1, 0.1, 0.1};
    s.gaussians.push_back(colored(color));
    return s;
}

std::vector<PosedImage> views_of(const GaussianScene& scene, int n) {
    std::vector<PosedImage> out;
    const Intrinsics k{30, 30, 16, 16, 32, 32};
    for (int i = 0; i < n; ++i) {
        const CameraView cam = make_viewpoint(Vec3::Zero(), 4.0, 20.0 + 10.0 * i, 70.0 * i, k);
        out.push_back({render(scene, cam).rgb, cam});
    }
    return out;
}

}  // namespace

TEST(Fit, ZeroIterationsReturnsInit) {
    const auto target = one_splat({0.8, 0.2, 0.3});
    const auto images = views_of(target, 2);
    const auto init = one_splat({0.5, 0.5, 0.5});
    FitConfig cfg;
    cfg.iterations = 0;
    const auto r = fit_scene(images, init, cfg);
    EXPECT_TRUE(r.scene == init);
    EXPECT_DOUBLE_EQ(r.final_loss, fit_objective(images, init, cfg));
}

TEST(Fit, RecoversColourOfSingleSplat) {
    const Vec3 color(0.8, 0.2, 0.3);
    const auto images = views_of(one_splat(color), 3);
    FitConfig cfg;
    cfg.iterations = 300;
    cfg.lr_opacity = 0.0;  // geometry and opacity already right
    const auto r = fit_scene(images, one_splat({0.5, 0.5, 0.5}), cfg);
    const Vec3 got = eval_sh_color(r.scene.gaussians[0].sh, {0, 0, 1}, 0);
    EXPECT_LT((got - color).cwiseAbs().maxCoeff(), 0.02);
    EXPECT_LT(r.final_loss, fit_objective(images, one_splat({0.5, 0.5, 0.5}), cfg));
}

TEST(Fit, DuplicatedImagesEqualDoubledWeight) {
    const auto images = views_of(one_splat({0.7, 0.6, 0.2}), 1);
    const std::vector<PosedImage> twice{images[0], images[0]};
    FitConfig cfg;
    cfg.iterations = 25;
    cfg.w_opacity = 0.01;
    cfg.w_flat = 0.05;
    const auto a = fit_scene(twice, one_splat({0.3, 0.3, 0.3}), cfg);
    cfg.photometric_weight = 2.0;
    const auto b = fit_scene(images, one_splat({0.3, 0.3, 0.3}), cfg);
    EXPECT_TRUE(a.scene == b.scene);
    EXPECT_EQ(a.final_loss, b.final_loss);
}

TEST(Fit, KeepsCountAndFlags) {
    GaussianScene init = one_splat({0.5, 0.5, 0.5});
    init.gaussians.push_back(colored({0.2, 0.2, 0.2}));
    init.gaussians.back().mean = {0.5, 0, 0};
    init.gaussians.back().is_object = true;
    FitConfig cfg;
    cfg.iterations = 5;
    cfg.w_flat = 1.0;
    const auto r = fit_scene(views_of(one_splat({0.9, 0.1, 0.1}), 1), init, cfg);
    ASSERT_EQ(r.scene.size(), 2u);
    EXPECT_FALSE(r.scene.gaussians[0].is_object);
    EXPECT_TRUE(r.scene.gaussians[1].is_object);
    EXPECT_EQ(r.scene.gaussians[1].mean, init.gaussians[1].mean);
    // the flatness term shrinks the smallest axis relative to the median
    EXPECT_LT(consistency_regularizers(r.scene).flat, consistency_regularizers(init).flat);
}

TEST(Fit, RejectsEmptyInputs) {
    FitConfig cfg;
    EXPECT_THROW(fit_scene({}, one_splat({0.5, 0.5, 0.5}), cfg), PreconditionError);
    cfg.iterations = -1;
    EXPECT_THROW(fit_scene(views_of(one_splat({0.5, 0.5, 0.5}), 1), one_splat({0.5, 0.5, 0.5}), cfg),
                 InvalidParameter);
}

TEST(Regularizers, OpacityEntropyEndpointsAndMaximum) {
    GaussianScene s = one_splat({0.5, 0.5, 0.5});
    s.gaussians.push_back(s.gaussians[0]);
    s.gaussians[0].opacity = 0.0;
    s.gaussians[1].opacity = 1.0;
    EXPECT_NEAR(consistency_regularizers(s).opacity, 0.0, 1e-4);
    s.gaussians[0].opacity = s.gaussians[1].opacity = 0.5;
    EXPECT_NEAR(consistency_regularizers(s).opacity, std::log(2.0), 1e-12);
}

TEST(Regularizers, FlatnessRatio) {
    GaussianScene s = one_splat({0.5, 0.5, 0.5});
    s.gaussians[0].scale = {1, 1, 1};
    EXPECT_DOUBLE_EQ(consistency_regularizers(s).flat, 1.0);
    s.gaussians[0].scale = {0.01, 1, 1};
    EXPECT_DOUBLE_EQ(consistency_regularizers(s).flat, 0.01);
}

TEST(PosedImages, RoundTripThroughDirectory) {
    const auto images = views_of(one_splat({0.4, 0.5, 0.6}), 2);
    const auto dir = std::filesystem::temp_directory_path() / "pga_posed_roundtrip";
    std::filesystem::remove_all(dir);
    save_posed_images(images, dir);
    const auto back = load_posed_images(dir);
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_LT((back[i].camera.rotation - images[i].camera.rotation).cwiseAbs().maxCoeff(), 1e-12);
        for (std::size_t k = 0; k < images[i].image.data.size(); ++k) {
            EXPECT_NEAR(back[i].image.data[k], images[i].image.data[k], 0.5 / 255.0 + 1e-12);
        }
    }
    std::filesystem::remove_all(dir);
}
