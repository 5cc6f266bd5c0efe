#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "mvq/camera.hpp"
#include "mvq/ellipse.hpp"
#include "mvq/mvee.hpp"
#include "mvq/quadric.hpp"
#include "mvq/random.hpp"

namespace {

using namespace mvq;

Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  while (axis.norm() < 1e-6) axis = {rng.normal(), rng.normal(), rng.normal()};
  return Eigen::AngleAxisd(rng.uniform(0.0, kPi), axis.normalized()).toRotationMatrix();
}

/// Independent dual-conic oracle: build the point conic from the unit
/// circle under the homography H = [R diag(a,b), c; 0 1] through inverses,
/// then take its adjoint (inverse times determinant).
Eigen::Matrix3d dual_conic_oracle(const Ellipse& e) {
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
  h.topLeftCorner<2, 2>() = Eigen::Rotation2Dd(e.theta).toRotationMatrix() *
                            Eigen::Vector2d(e.a, e.b).asDiagonal();
  h(0, 2) = e.x;
  h(1, 2) = e.y;
  const Eigen::Matrix3d unit = Eigen::Vector3d(1.0, 1.0, -1.0).asDiagonal();
  const Eigen::Matrix3d hinv = h.inverse();
  const Eigen::Matrix3d point = hinv.transpose() * unit * hinv;
  const Eigen::Matrix3d adjoint = point.inverse() * point.determinant();
  return adjoint / (-adjoint(2, 2));
}

// --- Ellipse canonical form -------------------------------------------------

TEST(Ellipse, CanonicalizesAxisOrderAndAngle) {
  const Ellipse e(1.0, 2.0, 2.0, 3.0, 0.0);
  EXPECT_DOUBLE_EQ(e.a, 3.0);
  EXPECT_DOUBLE_EQ(e.b, 2.0);
  EXPECT_DOUBLE_EQ(e.theta, kPi / 2.0);

  // A straight pi rotation folds to exactly zero.
  const Ellipse f(0.0, 0.0, 3.0, 2.0, kPi);
  EXPECT_DOUBLE_EQ(f.theta, 0.0);

  EXPECT_THROW(Ellipse(0, 0, -1.0, 1.0, 0), std::invalid_argument);
  EXPECT_THROW(Ellipse(0, 0, 1.0, 0.0, 0), std::invalid_argument);
}

TEST(Ellipse, FoldHalfPiBoundaries) {
  EXPECT_DOUBLE_EQ(fold_half_pi(kPi / 2.0), kPi / 2.0);    // boundary included
  EXPECT_DOUBLE_EQ(fold_half_pi(-kPi / 2.0), kPi / 2.0);   // open end wraps
  EXPECT_DOUBLE_EQ(fold_half_pi(0.0), 0.0);
  EXPECT_NEAR(fold_half_pi(kPi / 2.0 + 0.1), -kPi / 2.0 + 0.1, 1e-12);
}

// --- Dual conic conversions -------------------------------------------------

TEST(DualConic, UnitCircleIsDiagonal) {
  const Eigen::Matrix3d m = ellipse_to_dual_conic(Ellipse(0, 0, 1, 1, 0)).matrix();
  EXPECT_LT((m - Eigen::Vector3d(1.0, 1.0, -1.0).asDiagonal().toDenseMatrix()).norm(),
            1e-15);
}

TEST(DualConic, MatchesAdjointOracle) {
  const Ellipse cases[] = {
      Ellipse(2.0, 0.0, 1.0, 1.0, 0.0),
      Ellipse(-1.5, 4.0, 3.0, 1.0, 0.7),
      Ellipse(10.0, -5.0, 6.0, 2.5, -1.2),
  };
  for (const Ellipse& e : cases) {
    const Eigen::Matrix3d got = ellipse_to_dual_conic(e).matrix();
    const Eigen::Matrix3d want = dual_conic_oracle(e);
    EXPECT_LT((got - want).norm(), 1e-9 * want.norm()) << "ellipse at " << e.x;
  }
}

TEST(DualConic, SameEllipseTwoParameterizations) {
  // (a,b,theta) and (b,a,theta+pi/2) describe the same point set.
  const Eigen::Matrix3d m1 = ellipse_to_dual_conic(Ellipse(1, 2, 3, 2, 0.4)).matrix();
  const Eigen::Matrix3d m2 =
      ellipse_to_dual_conic(Ellipse(1, 2, 2, 3, 0.4 + kPi / 2.0)).matrix();
  EXPECT_LT((m1 - m2).norm(), 1e-12 * m1.norm());
}

TEST(DualConic, ExtractUnitCircle) {
  const Ellipse e =
      dual_conic_to_ellipse(DualConic(Eigen::Vector3d(1, 1, -1).asDiagonal()));
  EXPECT_DOUBLE_EQ(e.x, 0.0);
  EXPECT_DOUBLE_EQ(e.y, 0.0);
  EXPECT_DOUBLE_EQ(e.a, 1.0);
  EXPECT_DOUBLE_EQ(e.b, 1.0);
}

TEST(DualConic, ExtractionIsScaleInvariant) {
  const Ellipse e(3.0, -2.0, 4.0, 1.5, 0.9);
  const Eigen::Matrix3d m = ellipse_to_dual_conic(e).matrix();
  for (const double k : {7.3, -2.0, 1e-4}) {
    const Ellipse out = dual_conic_to_ellipse(DualConic(Eigen::Matrix3d(k * m)));
    EXPECT_NEAR(out.x, e.x, 1e-9);
    EXPECT_NEAR(out.y, e.y, 1e-9);
    EXPECT_NEAR(out.a, e.a, 1e-9);
    EXPECT_NEAR(out.b, e.b, 1e-9);
    EXPECT_NEAR(fold_half_pi(out.theta - e.theta), 0.0, 1e-9);
  }
}

TEST(DualConic, RandomRoundTrips) {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const double a = rng.uniform(0.5, 20.0);
    const Ellipse e(rng.uniform(-50, 50), rng.uniform(-50, 50), a,
                    rng.uniform(0.2, 0.9) * a, rng.uniform(-2.0, 2.0));
    const Ellipse out = dual_conic_to_ellipse(ellipse_to_dual_conic(e));
    EXPECT_NEAR(out.x, e.x, 1e-9);
    EXPECT_NEAR(out.y, e.y, 1e-9);
    EXPECT_NEAR(out.a, e.a, 1e-9);
    EXPECT_NEAR(out.b, e.b, 1e-9);
    EXPECT_NEAR(fold_half_pi(out.theta - e.theta), 0.0, 1e-9);
  }
}

TEST(DualConic, RejectsDegenerateMatrices) {
  EXPECT_THROW(dual_conic_to_ellipse(DualConic(Eigen::Matrix3d::Zero())),
               DegenerateConic);
  // (2,2) entry zero: the conic center is pushed to infinity.
  EXPECT_THROW(
      dual_conic_to_ellipse(DualConic(Eigen::Vector3d(1, 1, 0).asDiagonal())),
      DegenerateConic);
  // Wrong signature (hyperbola-like dual): not a real bounded ellipse.
  EXPECT_THROW(
      dual_conic_to_ellipse(DualConic(Eigen::Vector3d(1, -1, -1).asDiagonal())),
      DegenerateConic);
  EXPECT_THROW(DualConic((Eigen::Matrix3d() << 0, 1, 0, -1, 0, 0, 0, 0, 1).finished()),
               std::invalid_argument);
}

// --- Rotations ----------------------------------------------------------------

TEST(Rotation, MatchesHandBuiltAxisMatrices) {
  Eigen::Matrix3d rz, ry, rx;
  const double a = 0.3, b = -0.7, c = 1.1;
  rz << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  ry << std::cos(b), 0, std::sin(b), 0, 1, 0, -std::sin(b), 0, std::cos(b);
  rx << 1, 0, 0, 0, std::cos(c), -std::sin(c), 0, std::sin(c), std::cos(c);
  EXPECT_LT((rotation_zyx({a, b, c}) - rz * ry * rx).norm(), 1e-15);
  EXPECT_LT((rotation_zyx({0, 0, 0}) - Eigen::Matrix3d::Identity()).norm(), 1e-15);
}

TEST(Rotation, EulerRoundTripRandom) {
  Rng rng(13);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Matrix3d r = random_rotation(rng);
    const Eigen::Matrix3d back = rotation_zyx(euler_zyx(r));
    EXPECT_LT((r - back).norm(), 1e-9);
  }
}

TEST(Rotation, EulerGimbalBranchReconstructs) {
  // Exact y = pi/2 block so the extraction takes its singular branch.
  Eigen::Matrix3d ry;
  ry << 0, 0, 1, 0, 1, 0, -1, 0, 0;
  const Eigen::Matrix3d r = rotation_zyx({0.4, 0, 0}) * ry * rotation_zyx({0, 0, 0.9});
  ASSERT_DOUBLE_EQ(r(2, 0), -1.0);
  const Eigen::Vector3d angles = euler_zyx(r);
  EXPECT_DOUBLE_EQ(angles(2), 0.0);  // x pinned at the singularity
  EXPECT_LT((rotation_zyx(angles) - r).norm(), 1e-12);
}

// --- Dual quadric compose / decompose ----------------------------------------

TEST(DualQuadric, UnitSphereIsDiagonal) {
  const Eigen::Matrix4d m = compose_dual_quadric(EllipsoidParams{}).matrix();
  Eigen::Matrix4d want = Eigen::Matrix4d::Identity();
  want(3, 3) = -1.0;
  EXPECT_LT((m - want).norm(), 1e-15);
}

TEST(DualQuadric, MatchesPoseProductOracle) {
  // Independent route: Q = Z diag(s^2, -1) Z^T with the pose matrix Z.
  Rng rng(17);
  for (int i = 0; i < 50; ++i) {
    EllipsoidParams q;
    q.angles = {rng.uniform(-3, 3), rng.uniform(-1.4, 1.4), rng.uniform(-3, 3)};
    q.center = {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    q.semi_axes = {rng.uniform(0.2, 4), rng.uniform(0.2, 4), rng.uniform(0.2, 4)};

    Eigen::Matrix4d z = Eigen::Matrix4d::Identity();
    z.topLeftCorner<3, 3>() = rotation_zyx(q.angles);
    z.topRightCorner<3, 1>() = q.center;
    Eigen::Matrix4d core = Eigen::Matrix4d::Zero();
    core.diagonal() << q.semi_axes(0) * q.semi_axes(0), q.semi_axes(1) * q.semi_axes(1),
        q.semi_axes(2) * q.semi_axes(2), -1.0;
    const Eigen::Matrix4d want = z * core * z.transpose();

    const Eigen::Matrix4d got = compose_dual_quadric(q).matrix();
    EXPECT_LT((got - want).norm(), 1e-12 * want.norm());
  }
}

TEST(DualQuadric, DecomposeAxisAlignedCase) {
  const EllipsoidParams q =
      decompose_dual_quadric(DualQuadric(Eigen::Vector4d(4, 1, 1, -1).asDiagonal()));
  EXPECT_LT(q.center.norm(), 1e-12);
  EXPECT_NEAR(q.semi_axes(0), 2.0, 1e-12);
  EXPECT_NEAR(q.semi_axes(1), 1.0, 1e-12);
  EXPECT_NEAR(q.semi_axes(2), 1.0, 1e-12);
}

TEST(DualQuadric, RoundTripThroughDecomposition) {
  Rng rng(19);
  for (int i = 0; i < 100; ++i) {
    EllipsoidParams q;
    q.angles = {rng.uniform(-3, 3), rng.uniform(-1.4, 1.4), rng.uniform(-3, 3)};
    q.center = {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    const double s0 = rng.uniform(0.3, 4.0);
    q.semi_axes = {s0, s0 * rng.uniform(0.3, 0.95), s0 * rng.uniform(0.05, 0.28)};

    const Eigen::Matrix4d m = compose_dual_quadric(q).matrix();
    const EllipsoidParams d = decompose_dual_quadric(DualQuadric(m));
    const Eigen::Matrix4d back = compose_dual_quadric(d).matrix();

    EXPECT_LT((m - back).norm(), 1e-9 * m.norm());
    EXPECT_LT((d.center - q.center).norm(), 1e-9 * (1.0 + q.center.norm()));
    // Input axes are generated in descending order; decompose sorts.
    EXPECT_LT((d.semi_axes - q.semi_axes).norm(), 1e-9 * q.semi_axes.norm());
  }
}

TEST(DualQuadric, DecomposeIsScaleInvariant) {
  EllipsoidParams q;
  q.angles = {0.5, -0.3, 1.2};
  q.center = {1, 2, 3};
  q.semi_axes = {3, 2, 1};
  const Eigen::Matrix4d m = compose_dual_quadric(q).matrix();
  const EllipsoidParams a = decompose_dual_quadric(DualQuadric(m));
  const EllipsoidParams b = decompose_dual_quadric(DualQuadric(Eigen::Matrix4d(-5.0 * m)));
  EXPECT_LT((a.center - b.center).norm(), 1e-12);
  EXPECT_LT((a.semi_axes - b.semi_axes).norm(), 1e-12);
  EXPECT_LT((a.angles - b.angles).norm(), 1e-12);
}

TEST(DualQuadric, RejectsNonEllipsoids) {
  EXPECT_THROW(
      decompose_dual_quadric(DualQuadric(Eigen::Vector4d(1, 1, -1, -1).asDiagonal())),
      NotAnEllipsoid);
  EXPECT_THROW(
      decompose_dual_quadric(DualQuadric(Eigen::Vector4d(1, 1, 1, 0).asDiagonal())),
      NotAnEllipsoid);
  EXPECT_THROW(decompose_dual_quadric(DualQuadric(Eigen::Matrix4d::Zero())),
               NotAnEllipsoid);
  EXPECT_THROW(compose_dual_quadric(EllipsoidParams{{0, 0, 0}, {0, 0, 0}, {1, 0, 1}}),
               std::invalid_argument);
}

// --- Camera and projection ----------------------------------------------------

TEST(Camera, ValidatesInputs) {
  Eigen::Matrix3d bad = Eigen::Matrix3d::Identity();
  bad(0, 1) = 0.1;
  EXPECT_THROW(Camera(500, 500, 320, 240, bad, Eigen::Vector3d::Zero()),
               std::invalid_argument);
  EXPECT_THROW(Camera(-1, 500, 0, 0, Eigen::Matrix3d::Identity(),
                      Eigen::Vector3d::Zero()),
               std::invalid_argument);
  // Reflection: orthonormal but det = -1.
  Eigen::Matrix3d refl = Eigen::Vector3d(1, 1, -1).asDiagonal();
  EXPECT_THROW(Camera(500, 500, 0, 0, refl, Eigen::Vector3d::Zero()),
               std::invalid_argument);
}

TEST(Projection, SphereRadiusFormula) {
  // A sphere of radius r at depth d images as a circle of radius
  // f * r / sqrt(d^2 - r^2): the tangent cone half-angle has
  // tan = r / sqrt(d^2 - r^2).
  const Camera cam(400.0, 400.0, 0.0, 0.0, Eigen::Matrix3d::Identity(),
                   Eigen::Vector3d::Zero());
  for (const auto& [r, d] : {std::pair{1.0, 5.0}, {0.5, 2.0}, {2.0, 30.0}}) {
    EllipsoidParams q;
    q.center = {0, 0, d};
    q.semi_axes = {r, r, r};
    const Ellipse e = dual_conic_to_ellipse(project_dual_quadric(compose_dual_quadric(q), cam));
    const double want = 400.0 * r / std::sqrt(d * d - r * r);
    EXPECT_NEAR(e.a, want, 1e-9 * want);
    EXPECT_NEAR(e.b, want, 1e-9 * want);
    EXPECT_NEAR(e.x, 0.0, 1e-9);
    EXPECT_NEAR(e.y, 0.0, 1e-9);
  }
}

TEST(Projection, FrameInvariance) {
  Rng rng(23);
  for (int i = 0; i < 20; ++i) {
    EllipsoidParams q;
    q.angles = {rng.uniform(-3, 3), rng.uniform(-1.4, 1.4), rng.uniform(-3, 3)};
    q.center = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    q.semi_axes = {rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5)};
    const Camera cam = look_at_camera(500, 500, 320, 240,
                                      Eigen::Vector3d(6, -3, 2), q.center);

    const Eigen::Matrix3d rw = random_rotation(rng);
    const Eigen::Vector3d tw(rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4));

    EllipsoidParams qw;
    qw.angles = euler_zyx(rw * rotation_zyx(q.angles));
    qw.center = rw * q.center + tw;
    qw.semi_axes = q.semi_axes;
    const Camera camw(cam.K(0, 0), cam.K(1, 1), cam.K(0, 2), cam.K(1, 2),
                      Eigen::Matrix3d(cam.R * rw.transpose()),
                      Eigen::Vector3d(cam.t - cam.R * rw.transpose() * tw));

    const Ellipse e1 = dual_conic_to_ellipse(project_dual_quadric(compose_dual_quadric(q), cam));
    const Ellipse e2 =
        dual_conic_to_ellipse(project_dual_quadric(compose_dual_quadric(qw), camw));
    EXPECT_NEAR(e1.x, e2.x, 1e-7 * (1.0 + std::abs(e1.x)));
    EXPECT_NEAR(e1.y, e2.y, 1e-7 * (1.0 + std::abs(e1.y)));
    EXPECT_NEAR(e1.a, e2.a, 1e-7 * e1.a);
    EXPECT_NEAR(e1.b, e2.b, 1e-7 * e1.b);
  }
}

TEST(Projection, RejectsObjectBehindCamera) {
  const Camera cam(500, 500, 0, 0, Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero());
  EllipsoidParams q;
  q.center = {0, 0, -5};
  EXPECT_THROW(project_dual_quadric(compose_dual_quadric(q), cam), BehindCamera);
  q.center = {0, 0, 0};  // centroid exactly at the center of projection
  EXPECT_THROW(project_dual_quadric(compose_dual_quadric(q), cam), BehindCamera);
}

TEST(Projection, NormalizedOutput) {
  const Camera cam = look_at_camera(500, 500, 320, 240, Eigen::Vector3d(8, 0, 3),
                                    Eigen::Vector3d::Zero());
  EllipsoidParams q;
  q.semi_axes = {1.0, 0.7, 0.4};
  const Eigen::Matrix3d m = project_dual_quadric(compose_dual_quadric(q), cam).matrix();
  EXPECT_DOUBLE_EQ(m(2, 2), -1.0);
  EXPECT_LT((m - m.transpose()).norm(), 1e-12 * m.norm());
}

// --- Minimum-volume enclosing ellipsoid ---------------------------------------

TEST(Mvee, CubeCornersGiveExactSphere) {
  std::vector<Eigen::Vector3d> pts;
  for (int sx : {-1, 1}) {
    for (int sy : {-1, 1}) {
      for (int sz : {-1, 1}) pts.emplace_back(sx, sy, sz);
    }
  }
  const EllipsoidParams q = min_volume_enclosing_ellipsoid(pts);
  const double want = std::sqrt(3.0);
  EXPECT_LT(q.center.norm(), 1e-9);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(q.semi_axes(i), want, 1e-4 * want);
  }
}

TEST(Mvee, RecoversSampledEllipsoidSurface) {
  // Fibonacci sphere mapped through a known ellipsoid.
  const int n = 5000;
  EllipsoidParams gt;
  gt.angles = {0.7, -0.4, 1.9};
  gt.center = {1.5, -2.0, 0.8};
  gt.semi_axes = {2.2, 1.3, 0.6};
  const Eigen::Matrix3d r = rotation_zyx(gt.angles);

  std::vector<Eigen::Vector3d> pts;
  pts.reserve(n);
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / n;
    const double rad = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i;
    const Eigen::Vector3d u(rad * std::cos(phi), rad * std::sin(phi), z);
    pts.push_back(r * gt.semi_axes.cwiseProduct(u) + gt.center);
  }

  const EllipsoidParams q = min_volume_enclosing_ellipsoid(pts);
  EXPECT_LT((q.center - gt.center).norm(), 1e-3 * gt.semi_axes(0));
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(q.semi_axes(i), gt.semi_axes(i), 1e-3 * gt.semi_axes(i));
  }
}

TEST(Mvee, ContainsAllPointsExactly) {
  Rng rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Eigen::Vector3d> pts;
    for (int i = 0; i < 60; ++i) {
      pts.emplace_back(rng.normal(0, 2), rng.normal(1, 0.5), rng.normal(-3, 1.5));
    }
    const EllipsoidParams q = min_volume_enclosing_ellipsoid(pts);
    const Eigen::Matrix3d r = rotation_zyx(q.angles);
    const Eigen::Matrix3d to_unit =
        q.semi_axes.cwiseInverse().asDiagonal() * r.transpose();
    for (const auto& p : pts) {
      EXPECT_LE((to_unit * (p - q.center)).squaredNorm(), 1.0 + 1e-9);
    }
  }
}

TEST(Mvee, RejectsDegenerateInputs) {
  std::vector<Eigen::Vector3d> line;
  for (int i = 0; i < 10; ++i) line.emplace_back(i, 2.0 * i, -i);
  EXPECT_THROW(min_volume_enclosing_ellipsoid(line), DegenerateInput);

  std::vector<Eigen::Vector3d> plane;
  for (int i = 0; i < 10; ++i) {
    plane.emplace_back(std::cos(0.7 * i), std::sin(0.7 * i), 1.0);
  }
  EXPECT_THROW(min_volume_enclosing_ellipsoid(plane), DegenerateInput);

  EXPECT_THROW(min_volume_enclosing_ellipsoid(
                   {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}),
               DegenerateInput);
}

}  // namespace
