#include "gupdm/physics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "gupdm/rng.hpp"
#include "support/oracles.hpp"

using namespace gupdm;
using testsupport::spearman;

namespace {

ImageRgb random_image(int h, int w, Rng& rng, double lo = 0.0, double hi = 1.0) {
  ImageRgb img(h, w);
  for (double& v : img.pix) v = lo + (hi - lo) * rng.uniform();
  return img;
}

TransmissionMap constant_map(int h, int w, double v) { return TransmissionMap(h, w, v); }

// Smooth spatial ramp, identical across channels, strictly inside (0,1].
TransmissionMap ramp_map(int h, int w, double lo = 0.35, double hi = 0.9) {
  TransmissionMap t(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = lo + (hi - lo) * static_cast<double>(x + y) / static_cast<double>(h + w - 2);
      t.at(0, y, x) = v;
      t.at(1, y, x) = v;
      t.at(2, y, x) = v;
    }
  return t;
}

}  // namespace

TEST(Synthesize, UnitTransmissionIsIdentity) {
  Rng rng(3);
  ImageRgb j = random_image(8, 8, rng);
  AtmosphereLight a{{0.8, 0.7, 0.9}};
  ImageRgb i = synthesize(j, a, constant_map(8, 8, 1.0));
  for (size_t k = 0; k < j.pix.size(); ++k) EXPECT_DOUBLE_EQ(i.pix[k], j.pix[k]);
}

TEST(Synthesize, AtmosphereIsFixedPoint) {
  AtmosphereLight a{{0.6, 0.5, 0.4}};
  ImageRgb j(6, 6);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) j.at(c, y, x) = a.rgb[static_cast<size_t>(c)];
  Rng rng(5);
  TransmissionMap t(6, 6);
  for (double& v : t.planes) v = 0.05 + 0.9 * rng.uniform();
  ImageRgb i = synthesize(j, a, t);
  for (size_t k = 0; k < j.pix.size(); ++k) EXPECT_NEAR(i.pix[k], j.pix[k], 1e-12);
}

TEST(Synthesize, HandValue) {
  // J=0.5, A=0.8, T=0.5 -> I = 0.25 + 0.4 = 0.65
  ImageRgb j(1, 1, 0.5);
  AtmosphereLight a{{0.8, 0.8, 0.8}};
  ImageRgb i = synthesize(j, a, constant_map(1, 1, 0.5));
  for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(i.at(c, 0, 0), 0.65);
}

TEST(Synthesize, RejectsBadInput) {
  ImageRgb j(4, 4, 0.5);
  AtmosphereLight a{{0.8, 0.8, 0.8}};
  EXPECT_THROW(synthesize(j, a, constant_map(5, 4, 0.5)), ShapeError);
  TransmissionMap zero(4, 4, 0.0);
  EXPECT_THROW(synthesize(j, a, zero), ContractError);
  TransmissionMap neg(4, 4, -0.2);
  EXPECT_THROW(synthesize(j, a, neg), ContractError);
}

TEST(Invert, HandValue) {
  // I=0.65, A=0.8, T=0.5 -> J = (0.65-0.4)/0.5 = 0.5
  ImageRgb i(1, 1, 0.65);
  AtmosphereLight a{{0.8, 0.8, 0.8}};
  ImageRgb j = invert(i, a, constant_map(1, 1, 0.5));
  for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(j.at(c, 0, 0), 0.5);
}

TEST(Invert, AtmosphereMapsToItself) {
  AtmosphereLight a{{0.7, 0.6, 0.5}};
  ImageRgb i(3, 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) i.at(c, y, x) = a.rgb[static_cast<size_t>(c)];
  ImageRgb j = invert(i, a, constant_map(3, 3, 0.4));
  for (size_t k = 0; k < i.pix.size(); ++k) EXPECT_NEAR(j.pix[k], i.pix[k], 1e-12);
}

TEST(Invert, RoundTripProperty) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    // interior values and T >= floor so no clipping interferes
    ImageRgb j = random_image(8, 8, rng, 0.2, 0.8);
    AtmosphereLight a{{0.3 + 0.5 * rng.uniform(), 0.3 + 0.5 * rng.uniform(),
                       0.3 + 0.5 * rng.uniform()}};
    TransmissionMap t(8, 8);
    for (double& v : t.planes) v = 0.05 + 0.95 * rng.uniform() * 0.94;
    for (double& v : t.planes) v = std::max(v, 0.05);
    ImageRgb round = invert(synthesize(j, a, t), a, t);
    double worst = 0.0;
    for (size_t k = 0; k < j.pix.size(); ++k)
      worst = std::max(worst, std::fabs(round.pix[k] - j.pix[k]));
    EXPECT_LE(worst, 1e-10);
  }
}

TEST(Synthesize, MonotoneTowardAtmosphereAsTransmissionDrops) {
  Rng rng(19);
  ImageRgb j = random_image(6, 6, rng, 0.1, 0.9);
  AtmosphereLight a{{0.75, 0.7, 0.65}};
  TransmissionMap t1(6, 6);
  TransmissionMap t2(6, 6);
  for (std::int64_t k = 0; k < static_cast<std::int64_t>(t1.planes.size()); ++k) {
    t1.planes[static_cast<size_t>(k)] = 0.4 + 0.55 * rng.uniform();
    t2.planes[static_cast<size_t>(k)] = t1.planes[static_cast<size_t>(k)] * (0.3 + 0.6 * rng.uniform());
  }
  ImageRgb i1 = synthesize(j, a, t1);
  ImageRgb i2 = synthesize(j, a, t2);
  for (int c = 0; c < 3; ++c) {
    const double av = a.rgb[static_cast<size_t>(c)];
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x)
        EXPECT_LE(std::fabs(i2.at(c, y, x) - av), std::fabs(i1.at(c, y, x) - av) + 1e-12);
  }
}

TEST(VaryAtmosphere, ForcedScaling) {
  AtmosphereLight a{{0.8, 0.8, 0.8}};
  ImageRgb base(2, 2, 0.5);
  auto s = make_degradation_sample_forced(base, a, constant_map(2, 2, 0.7),
                                          {{{0.5, 0.5, 0.5}}}, {});
  EXPECT_DOUBLE_EQ(s.atmos_variants[0].r(), 0.4);
  EXPECT_DOUBLE_EQ(s.atmos_variants[0].g(), 0.4);
  EXPECT_DOUBLE_EQ(s.atmos_variants[0].b(), 0.4);
}

TEST(VaryAtmosphere, ZeroAtmosphereStaysZero) {
  AtmosphereLight zero;
  Rng rng(7);
  auto variants = vary_atmosphere(zero, 5, rng);
  for (const auto& [varied, lambda] : variants)
    for (double v : varied.rgb) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(VaryAtmosphere, RangeIsStrict) {
  AtmosphereLight a{{1.0, 1.0, 1.0}};
  Rng rng(123);
  auto variants = vary_atmosphere(a, 1000, rng);
  for (const auto& [varied, lambda] : variants)
    for (int c = 0; c < 3; ++c) {
      EXPECT_GT(lambda[static_cast<size_t>(c)], 0.3);
      EXPECT_LT(lambda[static_cast<size_t>(c)], 0.6);
      // with A=1 the variant equals lambda itself
      EXPECT_GT(varied.rgb[static_cast<size_t>(c)], 0.3 * 1.0);
      EXPECT_LT(varied.rgb[static_cast<size_t>(c)], 0.6 * 1.0);
    }
}

TEST(VaryTransmission, IdentityAndScalingAndClip) {
  TransmissionMap t = constant_map(3, 3, 0.8);
  ImageRgb base(3, 3, 0.5);
  AtmosphereLight a{{0.8, 0.8, 0.8}};
  auto s1 = make_degradation_sample_forced(base, a, t, {}, {{{1.0, 1.0, 1.0}}});
  for (size_t k = 0; k < t.planes.size(); ++k)
    EXPECT_DOUBLE_EQ(s1.trans_variants[0].planes[k], t.planes[k]);

  auto s2 = make_degradation_sample_forced(base, a, t, {}, {{{0.5, 0.5, 0.5}}});
  for (double v : s2.trans_variants[0].planes) EXPECT_DOUBLE_EQ(v, 0.4);

  TransmissionMap t95 = constant_map(3, 3, 0.95);
  auto s3 = make_degradation_sample_forced(base, a, t95, {}, {{{1.1, 1.1, 1.1}}});
  for (double v : s3.trans_variants[0].planes) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(VaryTransmission, RangeIsStrict) {
  TransmissionMap t = constant_map(4, 4, 0.5);
  Rng rng(321);
  auto variants = vary_transmission(t, 1000, rng);
  for (const auto& [varied, gamma] : variants)
    for (int c = 0; c < 3; ++c) {
      EXPECT_GT(gamma[static_cast<size_t>(c)], 0.5);
      EXPECT_LT(gamma[static_cast<size_t>(c)], 1.1);
    }
}

TEST(Udcp, PureBackgroundGivesFloor) {
  AtmosphereLight a{{0.9, 0.8, 0.7}};
  ImageRgb i(12, 12);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 12; ++x) i.at(c, y, x) = a.rgb[static_cast<size_t>(c)];
  TransmissionMap t = estimate_transmission_udcp(i, 7, a);
  for (double v : t.planes) EXPECT_DOUBLE_EQ(v, kTransmissionFloor);
}

TEST(Udcp, DarkChannelZeroMeansFullTransmission) {
  AtmosphereLight a{{1.0, 1.0, 1.0}};
  ImageRgb i(16, 16, 0.0);
  // red arbitrary, green/blue zero everywhere
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) i.at(0, y, x) = 0.5;
  TransmissionMap t = estimate_transmission_udcp(i, 7, a);
  for (double v : t.planes) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Udcp, RecoversKnownTransmissionByRank) {
  Rng rng(2024);
  ImageRgb j = random_image(32, 32, rng, 0.0, 0.6);
  AtmosphereLight a{{0.75, 0.8, 0.85}};
  TransmissionMap truth = ramp_map(32, 32);
  ImageRgb observed = synthesize(j, a, truth);
  TransmissionMap est = estimate_transmission_udcp(observed, 7, a);
  std::vector<double> tv(truth.planes.begin(), truth.planes.begin() + truth.plane());
  std::vector<double> ev(est.planes.begin(), est.planes.begin() + est.plane());
  EXPECT_GE(spearman(ev, tv), 0.9);
}

TEST(Udcp, RedChannelIsIgnored) {
  Rng rng(77);
  ImageRgb i = random_image(20, 20, rng);
  AtmosphereLight a{{0.8, 0.8, 0.8}};
  TransmissionMap t1 = estimate_transmission_udcp(i, 7, a);
  ImageRgb perturbed = i;
  for (std::int64_t k = 0; k < i.plane(); ++k)
    perturbed.pix[static_cast<size_t>(k)] = rng.uniform();
  TransmissionMap t2 = estimate_transmission_udcp(perturbed, 7, a);
  EXPECT_EQ(0, std::memcmp(t1.planes.data(), t2.planes.data(),
                           t1.planes.size() * sizeof(double)));
}

TEST(Udcp, RejectsBadArguments) {
  ImageRgb i(8, 8, 0.5);
  AtmosphereLight a{{0.8, 0.8, 0.8}};
  EXPECT_THROW(estimate_transmission_udcp(i, 4, a), ContractError);
  AtmosphereLight zero_g{{0.8, 0.0, 0.8}};
  EXPECT_THROW(estimate_transmission_udcp(i, 7, zero_g), ContractError);
}

TEST(EstimateAtmosphere, ConstantImage) {
  ImageRgb i(10, 10);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) {
      i.at(0, y, x) = 0.3;
      i.at(1, y, x) = 0.6;
      i.at(2, y, x) = 0.9;
    }
  AtmosphereLight a = estimate_atmosphere(i);
  EXPECT_DOUBLE_EQ(a.r(), 0.3);
  EXPECT_DOUBLE_EQ(a.g(), 0.6);
  EXPECT_DOUBLE_EQ(a.b(), 0.9);
}

TEST(EstimateAtmosphere, RecoversDominantBackground) {
  AtmosphereLight truth{{0.7, 0.8, 0.9}};
  ImageRgb i(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) i.at(c, y, x) = truth.rgb[static_cast<size_t>(c)];
  // a handful of dark pixels
  for (int k = 0; k < 10; ++k)
    for (int c = 0; c < 3; ++c) i.at(c, 0, k) = 0.01;
  AtmosphereLight a = estimate_atmosphere(i, 0.001);
  for (int c = 0; c < 3; ++c)
    EXPECT_NEAR(a.rgb[static_cast<size_t>(c)], truth.rgb[static_cast<size_t>(c)], 0.01);
}

TEST(EstimateAtmosphere, FullFractionIsGlobalMean) {
  Rng rng(55);
  ImageRgb i = random_image(8, 8, rng);
  AtmosphereLight a = estimate_atmosphere(i, 1.0);
  for (int c = 0; c < 3; ++c) {
    double mean_c = 0.0;
    for (std::int64_t k = 0; k < i.plane(); ++k)
      mean_c += i.pix[static_cast<size_t>(c * i.plane() + k)];
    mean_c /= static_cast<double>(i.plane());
    EXPECT_NEAR(a.rgb[static_cast<size_t>(c)], mean_c, 1e-12);
  }
}

TEST(DegradationSample, GammaOneKeepsAtmTransEqualToAtmImage) {
  Rng rng(31);
  ImageRgb j = random_image(16, 16, rng, 0.2, 0.8);
  AtmosphereLight a{{0.8, 0.75, 0.7}};
  TransmissionMap t = ramp_map(16, 16, 0.4, 0.9);
  ImageRgb observed = synthesize(j, a, t);
  auto s = make_degradation_sample_forced(observed, a, t, {{{0.45, 0.5, 0.55}}},
                                          {{{1.0, 1.0, 1.0}}});
  // with gamma == 1 the joint variant reduces to the atmosphere-only variant
  double worst = 0.0;
  for (size_t k = 0; k < s.atm_images[0].pix.size(); ++k)
    worst = std::max(worst, std::fabs(s.atm_images[0].pix[k] - s.atm_trans_images[0].pix[k]));
  EXPECT_LE(worst, 1e-10);
}

TEST(DegradationSample, LambdaOneKeepsAtmImageEqualToBase) {
  Rng rng(33);
  ImageRgb observed = random_image(12, 12, rng, 0.1, 0.9);
  AtmosphereLight a{{0.8, 0.75, 0.7}};
  TransmissionMap t = ramp_map(12, 12, 0.4, 0.9);
  auto s = make_degradation_sample_forced(observed, a, t, {{{1.0, 1.0, 1.0}}}, {});
  for (size_t k = 0; k < observed.pix.size(); ++k)
    EXPECT_DOUBLE_EQ(s.atm_images[0].pix[k], observed.pix[k]);
}
