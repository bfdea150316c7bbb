// Top-down oriented boxes: the point-relative parameterization, corner
// computation, its exact inverse, and rotated IoU via convex polygon
// clipping.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>

#include "rvdet/common.hpp"

namespace rvdet {

// Box regression target relative to a LiDAR point and its azimuth frame:
// center offset (dx, dy), orientation as (cos, sin) of the relative yaw,
// and the absolute dimensions.
struct BoxParams {
    double dx = 0.0;
    double dy = 0.0;
    double ox = 1.0;  // cos of relative orientation
    double oy = 0.0;  // sin of relative orientation
    double length = 0.0;
    double width = 0.0;
};

struct OrientedBox {
    Vec2 center;
    double yaw = 0.0;  // normalized to (-pi, pi]
    double length = 0.0;
    double width = 0.0;

    double area() const { return length * width; }
};

// Four box corners flattened to eight scalars. Corner order is
//   0: +l/2,+w/2   1: +l/2,-w/2   2: -l/2,-w/2   3: -l/2,+w/2
// in the box frame, so consecutive corners share an edge.
struct CornerVector {
    std::array<Vec2, 4> corner{};

    double flat(int n) const { return (n & 1) ? corner[n >> 1].y : corner[n >> 1].x; }
    void set_flat(int n, double v) {
        if (n & 1) corner[n >> 1].y = v; else corner[n >> 1].x = v;
    }
    Vec2 centroid() const {
        return (corner[0] + corner[1] + corner[2] + corner[3]) * 0.25;
    }

    // Euclidean distance over the flattened 8-vector.
    double distance(const CornerVector& o) const {
        double s = 0.0;
        for (int i = 0; i < 4; ++i) s += (corner[i] - o.corner[i]).squared_norm();
        return std::sqrt(s);
    }
};

inline OrientedBox decode_box(Vec2 point, double azimuth, const BoxParams& p) {
    require_finite(point.x, "point.x");
    require_finite(point.y, "point.y");
    require_finite(azimuth, "azimuth");
    require_finite(p.dx, "dx");
    require_finite(p.dy, "dy");
    require_finite(p.ox, "omega_x");
    require_finite(p.oy, "omega_y");
    require_finite(p.length, "length");
    require_finite(p.width, "width");
    OrientedBox box;
    box.center = point + rotate({p.dx, p.dy}, azimuth);
    box.yaw = wrap_angle(azimuth + std::atan2(p.oy, p.ox));
    box.length = p.length;
    box.width = p.width;
    return box;
}

inline BoxParams encode_box(Vec2 point, double azimuth, const OrientedBox& box) {
    BoxParams p;
    const Vec2 d = rotate_back(box.center - point, azimuth);
    p.dx = d.x;
    p.dy = d.y;
    const double rel = box.yaw - azimuth;
    p.ox = std::cos(rel);
    p.oy = std::sin(rel);
    p.length = box.length;
    p.width = box.width;
    return p;
}

inline CornerVector corners(const OrientedBox& box) {
    const double hl = 0.5 * box.length, hw = 0.5 * box.width;
    const double c = std::cos(box.yaw), s = std::sin(box.yaw);
    const Vec2 el{c * hl, s * hl};   // half-length axis
    const Vec2 ew{-s * hw, c * hw};  // half-width axis
    CornerVector cv;
    cv.corner[0] = box.center + el + ew;
    cv.corner[1] = box.center + el - ew;
    cv.corner[2] = box.center - el - ew;
    cv.corner[3] = box.center - el + ew;
    return cv;
}

// Best-fit rectangle for a (possibly non-rectangular) fused corner
// quadrilateral. Fused corners of rectangles always form a parallelogram;
// this recovers center, axis directions and mean edge lengths.
inline OrientedBox box_from_corners(const CornerVector& cv) {
    OrientedBox box;
    box.center = cv.centroid();
    const Vec2 laxis = (cv.corner[0] - cv.corner[3] + cv.corner[1] - cv.corner[2]) * 0.5;
    const Vec2 waxis = (cv.corner[0] - cv.corner[1] + cv.corner[3] - cv.corner[2]) * 0.5;
    box.yaw = std::atan2(laxis.y, laxis.x);
    box.length = laxis.norm();
    box.width = waxis.norm();
    return box;
}

// Convex polygon with fixed capacity; enough for a quad clipped by a quad.
struct ConvexPolygon {
    std::array<Vec2, 16> pts{};
    int n = 0;

    void push(Vec2 p) { pts[static_cast<std::size_t>(n++)] = p; }

    double signed_area() const {
        double a = 0.0;
        for (int i = 0; i < n; ++i) a += pts[i].cross(pts[(i + 1) % n]);
        return 0.5 * a;
    }
    double area() const { return std::abs(signed_area()); }

    void make_ccw() {
        if (signed_area() < 0.0) std::reverse(pts.begin(), pts.begin() + n);
    }
};

inline ConvexPolygon to_polygon(const CornerVector& cv) {
    ConvexPolygon poly;
    for (const Vec2& c : cv.corner) poly.push(c);
    poly.make_ccw();
    return poly;
}

// Sutherland-Hodgman clip of one convex polygon by another (both CCW).
inline ConvexPolygon clip_convex(const ConvexPolygon& subject, const ConvexPolygon& clipper) {
    constexpr double kEps = 1e-9;
    ConvexPolygon out = subject;
    for (int e = 0; e < clipper.n && out.n > 0; ++e) {
        const Vec2 a = clipper.pts[e];
        const Vec2 edge = clipper.pts[(e + 1) % clipper.n] - a;
        const ConvexPolygon in = out;
        out.n = 0;
        for (int i = 0; i < in.n; ++i) {
            const Vec2 cur = in.pts[i];
            const Vec2 nxt = in.pts[(i + 1) % in.n];
            const double dc = edge.cross(cur - a);
            const double dn = edge.cross(nxt - a);
            if (dc >= -kEps) out.push(cur);
            if ((dc >= -kEps) != (dn >= -kEps)) {
                const double t = dc / (dc - dn);
                out.push(cur + (nxt - cur) * t);
            }
        }
    }
    return out;
}

// True when p is inside (or within eps of the boundary of) the CCW polygon.
inline bool polygon_contains(const ConvexPolygon& poly, Vec2 p, double eps = 1e-9) {
    for (int i = 0; i < poly.n; ++i) {
        const Vec2 a = poly.pts[i];
        const Vec2 b = poly.pts[(i + 1) % poly.n];
        if ((b - a).cross(p - a) < -eps * (b - a).norm()) return false;
    }
    return poly.n >= 3;
}

struct IouResult {
    double value = 0.0;
    bool degenerate = false;  // set when either quad has near-zero area
};

// IoU of two convex corner quadrilaterals.
inline IouResult quad_iou_checked(const CornerVector& a, const CornerVector& b) {
    constexpr double kMinArea = 1e-12;
    ConvexPolygon pa = to_polygon(a);
    ConvexPolygon pb = to_polygon(b);
    const double area_a = pa.area();
    const double area_b = pb.area();
    if (area_a < kMinArea || area_b < kMinArea) return {0.0, true};
    const double inter = clip_convex(pa, pb).area();
    const double uni = area_a + area_b - inter;
    return {std::clamp(inter / uni, 0.0, 1.0), false};
}

inline double quad_iou(const CornerVector& a, const CornerVector& b) {
    return quad_iou_checked(a, b).value;
}

inline IouResult rotated_iou_checked(const OrientedBox& a, const OrientedBox& b) {
    return quad_iou_checked(corners(a), corners(b));
}

inline double rotated_iou(const OrientedBox& a, const OrientedBox& b) {
    return rotated_iou_checked(a, b).value;
}

}  // namespace rvdet
