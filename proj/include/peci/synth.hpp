#pragma once

// Synthetic lateral swallow-study phantom. Each patient gets its own anatomy
// (spine column, mandible arc, hyoid, vocal fold, soft tissue); each frame
// places the bolus somewhere on the oral-cavity -> pharynx -> esophagus path.
// Intensities follow transmitted-radiation compositing, so structures are
// translucent and overlap additively.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "peci/data.hpp"

namespace peci::synth {

struct SynthParams {
  int size = 64;
  double noise_sigma = 5.0;
  /// 0: bolus clearly denser than soft tissue; 1: almost invisible.
  double ambiguity = 0.5;
  double soft_density = 0.55;
  double spine_density = 0.9;
  double mandible_density = 0.8;
  double hyoid_density = 0.6;
  double vocal_density = 0.25;
  double bolus_density_clear = 1.2;
  double bolus_density_faint = 0.06;
  /// Same-density blobs away from the path; they carry no label.
  int max_decoys = 2;

  /// Faint bolus, heavier noise, more decoys.
  static SynthParams high_ambiguity() {
    SynthParams p;
    p.ambiguity = 0.93;
    p.noise_sigma = 8.0;
    p.max_decoys = 3;
    return p;
  }

  double bolus_density() const { return bolus_density_clear * (1.0 - ambiguity) + bolus_density_faint * ambiguity; }

  void validate() const {
    if (size < 16) fail(ErrorCode::BadParams, "synthetic image size must be >= 16");
    if (!(ambiguity >= 0.0 && ambiguity <= 1.0)) fail(ErrorCode::BadParams, "ambiguity must lie in [0,1]");
    if (!(noise_sigma >= 0.0)) fail(ErrorCode::BadParams, "noise sigma must be non-negative");
    for (double d : {soft_density, spine_density, mandible_density, hyoid_density, vocal_density, bolus_density_clear,
                     bolus_density_faint}) {
      if (!(d > 0.0)) fail(ErrorCode::BadParams, "densities must be positive");
    }
    if (max_decoys < 0) fail(ErrorCode::BadParams, "max_decoys must be >= 0");
  }
};

struct Point {
  double x = 0, y = 0;
};

/// Per-patient geometry in image-fraction coordinates (x right, y down).
struct Anatomy {
  double spine_front = 0.65;  // anterior edge at y = 0.5
  double spine_tilt = 0.0;    // dx per unit y
  double spine_width = 0.16;
  int vertebrae = 5;
  double mand_cx = 0.25, mand_cy = 0.12, mand_rx = 0.18, mand_ry = 0.12, mand_thickness = 0.3;
  Point hyoid{0.45, 0.45};
  double hyoid_r = 0.035;
  Point vocal{0.5, 0.72};
  double vocal_rx = 0.05, vocal_ry = 0.025;
  double soft_x0 = 0.12, soft_x1 = 0.9;
  double bolus_rx = 0.07, bolus_ry = 0.045;

  double spine_front_at(double y) const { return spine_front + spine_tilt * (y - 0.5); }

  /// Control points of the swallow path.
  std::array<Point, 3> path_points() const {
    const Point oral{mand_cx + 0.35 * mand_rx, mand_cy + 0.75 * mand_ry};
    const double yp = mand_cy + mand_ry + 0.12;
    const Point pharynx{spine_front_at(yp) - 0.08, yp};
    const Point esophagus{spine_front_at(0.88) - 0.06, 0.88};
    return {oral, pharynx, esophagus};
  }

  /// Piecewise-linear path, t in [0,1].
  Point path(double t) const {
    const auto p = path_points();
    t = std::clamp(t, 0.0, 1.0);
    if (t < 0.5) {
      const double s = t / 0.5;
      return {p[0].x + s * (p[1].x - p[0].x), p[0].y + s * (p[1].y - p[0].y)};
    }
    const double s = (t - 0.5) / 0.5;
    return {p[1].x + s * (p[2].x - p[1].x), p[1].y + s * (p[2].y - p[1].y)};
  }

  /// Unit tangent of the path at t.
  Point tangent(double t) const {
    const auto p = path_points();
    const Point a = t < 0.5 ? p[0] : p[1];
    const Point b = t < 0.5 ? p[1] : p[2];
    const double dx = b.x - a.x, dy = b.y - a.y, n = std::hypot(dx, dy);
    return {dx / n, dy / n};
  }
};

inline Anatomy draw_anatomy(std::mt19937_64& rng) {
  auto u = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  Anatomy a;
  a.spine_front = u(0.58, 0.7);
  a.spine_tilt = u(-0.12, 0.12);
  a.spine_width = u(0.13, 0.18);
  a.vertebrae = 4 + static_cast<int>(rng() % 2);
  a.mand_cx = u(0.2, 0.3);
  a.mand_cy = u(0.08, 0.16);
  a.mand_rx = u(0.15, 0.2);
  a.mand_ry = u(0.1, 0.14);
  a.mand_thickness = u(0.25, 0.35);
  const double hy = a.mand_cy + a.mand_ry + u(0.12, 0.2);
  a.hyoid = {a.mand_cx + a.mand_rx * u(0.6, 1.0), hy};
  a.hyoid_r = u(0.035, 0.05);
  const double vy = u(0.66, 0.76);
  a.vocal = {a.spine_front_at(vy) - u(0.14, 0.2), vy};
  a.vocal_rx = u(0.04, 0.06);
  a.vocal_ry = u(0.02, 0.03);
  a.soft_x0 = u(0.08, 0.16);
  a.soft_x1 = u(0.88, 0.95);
  a.bolus_rx = u(0.06, 0.08);
  a.bolus_ry = u(0.04, 0.05);
  return a;
}

namespace detail {

inline bool in_ellipse(double x, double y, Point c, double rx, double ry, Point axis = {1, 0}) {
  const double dx = x - c.x, dy = y - c.y;
  const double u = dx * axis.x + dy * axis.y;
  const double v = -dx * axis.y + dy * axis.x;
  return (u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0;
}

inline bool in_spine(const Anatomy& a, double x, double y) {
  const double top = 0.12, bottom = 0.98;
  if (y < top || y > bottom) return false;
  const double front = a.spine_front_at(y);
  if (x < front || x > front + a.spine_width) return false;
  // Vertebral bodies separated by thin discs.
  const double pitch = (bottom - top) / a.vertebrae;
  const double phase = std::fmod(y - top, pitch) / pitch;
  return phase < 0.82;
}

inline bool in_mandible(const Anatomy& a, double x, double y) {
  const double dx = (x - a.mand_cx) / a.mand_rx, dy = (y - a.mand_cy) / a.mand_ry;
  const double r = std::hypot(dx, dy);
  if (r > 1.0 || r < 1.0 - a.mand_thickness) return false;
  // Lower arc only (jaw body), y grows downward.
  return std::atan2(dy, dx) >= 0.15 && std::atan2(dy, dx) <= 3.0;
}

inline bool in_soft(const Anatomy& a, double x, double y) {
  if (y < 0.02) return false;
  const double cx = 0.5 * (a.soft_x0 + a.soft_x1), rx = 0.5 * (a.soft_x1 - a.soft_x0);
  const double dx = (x - cx) / rx;
  // Super-ellipse: fills most of the frame with rounded anterior/posterior edges.
  return std::pow(std::abs(dx), 4.0) + std::pow(std::abs((y - 0.55) / 0.58), 4.0) <= 1.0;
}

}  // namespace detail

/// Per-frame variation: bolus position along the path and decoy blobs.
struct FrameState {
  double t = 0.0;
  Point shift;  // small whole-frame motion
  double gain = 1.0;
  std::vector<Point> decoys;
};

inline FrameState draw_frame(const Anatomy& a, const SynthParams& params, std::mt19937_64& rng) {
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  FrameState f;
  f.t = u(0.0, 1.0);
  f.shift = {u(-0.01, 0.01), u(-0.01, 0.01)};
  f.gain = u(0.92, 1.08);
  const int n = params.max_decoys > 0 ? static_cast<int>(rng() % (params.max_decoys + 1)) : 0;
  for (int i = 0; i < n; ++i) {
    // Anterior offset from a path point: plausible bolus location for a patient with
    // different anatomy, wrong for this one.
    const Point on = a.path(u(0.2, 1.0));
    f.decoys.push_back({on.x - u(0.15, 0.22), on.y + u(-0.05, 0.05)});
  }
  return f;
}

/// Renders a frame; masks are exactly the indicator functions used for compositing.
inline data::Sample render(const Anatomy& a, const FrameState& f, const SynthParams& params, std::mt19937_64& noise_rng) {
  const int n = params.size;
  data::Sample s;
  s.image = GrayImage(n, n);
  s.masks = MaskSet(n, n);
  const Point bc = a.path(f.t);
  const Point axis = a.tangent(f.t);
  const double bolus_d = params.bolus_density();
  std::normal_distribution<double> noise(0.0, params.noise_sigma);
  for (int py = 0; py < n; ++py) {
    for (int px = 0; px < n; ++px) {
      const double x = (px + 0.5) / n - f.shift.x;
      const double y = (py + 0.5) / n - f.shift.y;
      const bool soft = detail::in_soft(a, x, y);
      const bool spine = detail::in_spine(a, x, y);
      const bool mand = detail::in_mandible(a, x, y);
      const bool hyoid = detail::in_ellipse(x, y, a.hyoid, a.hyoid_r, a.hyoid_r * 0.8);
      const bool vocal = detail::in_ellipse(x, y, a.vocal, a.vocal_rx, a.vocal_ry);
      const bool bolus = soft && detail::in_ellipse(x, y, bc, a.bolus_rx, a.bolus_ry, axis);
      bool decoy = false;
      for (const auto& d : f.decoys) decoy |= soft && detail::in_ellipse(x, y, d, a.bolus_rx * 0.9, a.bolus_ry);
      double att = 0.0;
      att += soft ? params.soft_density : 0.0;
      att += spine ? params.spine_density : 0.0;
      att += mand ? params.mandible_density : 0.0;
      att += hyoid ? params.hyoid_density : 0.0;
      att += vocal ? params.vocal_density : 0.0;
      att += bolus ? bolus_d : 0.0;
      att += decoy ? bolus_d : 0.0;
      const double v = 255.0 * f.gain * std::exp(-att) * 0.92 + noise(noise_rng);
      s.image(px, py) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      s.masks.at(Region::Bolus, px, py) = bolus;
      s.masks.at(Region::Mandible, px, py) = mand;
      s.masks.at(Region::HyoidBone, px, py) = hyoid;
      s.masks.at(Region::VocalFold, px, py) = vocal;
      s.masks.at(Region::CervicalSpine, px, py) = spine;
      s.masks.at(Region::SoftTissue, px, py) = soft;
    }
  }
  return s;
}

inline std::string patient_name(int p) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "P%03d", p);
  return buf;
}

inline std::string frame_name(int p, int f) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "P%03d_F%02d", p, f);
  return buf;
}

inline Anatomy patient_anatomy(std::uint64_t seed, int patient) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(patient), 0xA11A7u};
  std::mt19937_64 rng(seq);
  return draw_anatomy(rng);
}

/// Frame `f` of patient `p`: depends only on (seed, p, f, params).
inline data::Sample generate_frame(std::uint64_t seed, int patient, int frame, const SynthParams& params) {
  params.validate();
  const Anatomy a = patient_anatomy(seed, patient);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(patient), static_cast<std::uint32_t>(frame), 0xF4A3u};
  std::mt19937_64 rng(seq);
  const FrameState f = draw_frame(a, params, rng);
  auto s = render(a, f, params, rng);
  s.patient_id = patient_name(patient);
  s.frame_id = frame_name(patient, frame);
  return s;
}

inline data::Dataset generate(int n_patients, int frames_per_patient, std::uint64_t seed, const SynthParams& params) {
  params.validate();
  if (n_patients < 1) fail(ErrorCode::BadParams, "need at least one patient");
  if (frames_per_patient < 1) fail(ErrorCode::BadParams, "need at least one frame per patient");
  data::Dataset out;
  for (int p = 0; p < n_patients; ++p) {
    for (int f = 0; f < frames_per_patient; ++f) out.push_back(generate_frame(seed, p, f, params));
  }
  return out;
}

}  // namespace peci::synth
