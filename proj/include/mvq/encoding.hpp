#pragma once

#include <cmath>
#include <stdexcept>

#include "mvq/core.hpp"
#include "mvq/ellipse.hpp"
#include "mvq/errors.hpp"

namespace mvq {

/// Axis-aligned box proposal (center, width, height) in pixels, covering
/// the visible region of an object.
struct BoxProposal {
  double px = 0.0;
  double py = 0.0;
  double pw = 1.0;
  double ph = 1.0;
};

/// Square reference region (center, side) in pixels.
struct RefSquare {
  double qx = 0.0;
  double qy = 0.0;
  double ql = 1.0;
};

/// Six offsets describing a full-extent ellipse relative to a reference
/// square. Values produced by encode_offsets satisfy da >= db (canonical
/// ellipses have a >= b) and dtheta in (-1/2, 1/2]; decode_offsets
/// accepts arbitrary finite values, so noisy or predicted offsets stay
/// representable.
struct EllipseOffsets {
  double dx = 0.0;
  double dy = 0.0;
  double da = 0.0;
  double db = 0.0;
  double dtheta = 0.0;
  double ds = 0.0;
};

/// Ellipse re-expressed in units of its reference square (center offset
/// and axes divided by the square side) with the visibility scaling
/// undone. Detected and predicted offsets for one view share a square,
/// so their normalized ellipses live in a common frame where a
/// distribution divergence is well-defined.
struct NormalizedEllipse {
  double ex = 0.0;
  double ey = 0.0;
  double ea = 0.5;
  double eb = 0.5;
  double etheta = 0.0;
};

/// Square concentric with the box whose side is the box diagonal.
/// A box tight around an axis-aligned ellipse (sides 2a, 2b) maps to
/// the ellipse's enclosing square (side 2 sqrt(a^2 + b^2)), so a full
/// detection gets visibility 1.
inline RefSquare extend_square(const BoxProposal& box) {
  if (!(box.pw > 0.0) || !(box.ph > 0.0)) {
    throw std::invalid_argument("extend_square: box sides must be positive");
  }
  return {box.px, box.py, std::hypot(box.pw, box.ph)};
}

/// Visibility ratio of a reference square against the full-extent
/// ellipse: square side over the side of the ellipse's enclosing square.
/// The square never exceeds the full extent, so the ratio lies in (0, 1];
/// 1 means fully visible, small values mean heavy truncation.
inline double visibility_ratio(const Ellipse& e, const RefSquare& square) {
  if (!(square.ql > 0.0)) {
    throw std::invalid_argument("visibility ratio: square side must be positive");
  }
  const double s = square.ql / e.enclosing_side();
  if (!(s > 0.0) || s > 1.0) {
    throw VisibilityOutOfRange("reference square exceeds the ellipse's full extent");
  }
  return s;
}

/// Offsets of a full-extent ellipse against a (possibly truncated)
/// reference square: center displacement in square units scaled by the
/// visibility ratio s, log-scale axes relative to the square side, the
/// orientation as a fraction of pi, and the log-remapped visibility.
inline EllipseOffsets encode_offsets(const Ellipse& e, const RefSquare& square) {
  const double s = visibility_ratio(e, square);
  EllipseOffsets d;
  d.dx = s * (e.x - square.qx) / square.ql;
  d.dy = s * (e.y - square.qy) / square.ql;
  d.da = std::log(2.0 * s * e.a / square.ql);
  d.db = std::log(2.0 * s * e.b / square.ql);
  d.dtheta = e.theta / kPi;
  d.ds = std::log((s + 1.0) / 2.0);
  return d;
}

/// Inverse of encode_offsets. The angle is folded so any real dtheta
/// decodes to a valid canonical ellipse; axes ordering is restored by
/// the Ellipse constructor when da < db.
inline Ellipse decode_offsets(const EllipseOffsets& d, const RefSquare& square) {
  if (!(square.ql > 0.0)) {
    throw std::invalid_argument("decode_offsets: square side must be positive");
  }
  const double s = 2.0 * std::exp(d.ds) - 1.0;
  if (!(s > 0.0)) {
    throw VisibilityOutOfRange("offsets imply a non-positive visibility ratio");
  }
  const double x = square.qx + d.dx * square.ql / s;
  const double y = square.qy + d.dy * square.ql / s;
  const double a = std::exp(d.da) * square.ql / (2.0 * s);
  const double b = std::exp(d.db) * square.ql / (2.0 * s);
  const double theta = kPi * fold_half_unit(d.dtheta);
  return Ellipse(x, y, a, b, theta);
}

/// Angle-offset residual folded into (-1/2, 1/2]: orientation offsets
/// are fractions of pi and the ellipse orientation is pi-periodic, so
/// residuals differing by an integer describe the same ellipse. A
/// difference of exactly 1 (e.g. offsets +1/2 and -1/2) folds to
/// exactly 0.0.
inline double rectify_angle(double dtheta_ref, double dtheta_pred) {
  return fold_half_unit(dtheta_ref - dtheta_pred);
}

/// Undoes the visibility scaling and the log axis remap, leaving the
/// ellipse in plain reference-square units: for offsets encoded from an
/// ellipse E against a square (qx, qy, ql) this returns
/// ((Ex-qx)/ql, (Ey-qy)/ql, Ea/ql, Eb/ql, Etheta).
inline NormalizedEllipse offsets_to_normalized_ellipse(const EllipseOffsets& d) {
  const double s = 2.0 * std::exp(d.ds) - 1.0;
  if (!(s > 0.0)) {
    throw VisibilityOutOfRange("offsets imply a non-positive visibility ratio");
  }
  NormalizedEllipse e;
  e.ex = d.dx / s;
  e.ey = d.dy / s;
  e.ea = std::exp(d.da) / (2.0 * s);
  e.eb = std::exp(d.db) / (2.0 * s);
  e.etheta = kPi * fold_half_unit(d.dtheta);
  return e;
}

}  // namespace mvq
