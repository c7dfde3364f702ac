//! Arc-length parameterized reference path.
//!
//! Consecutive samples are joined by the circular arc that passes through both
//! sample points and turns by the difference of their headings. Paths built
//! from straights and arcs are therefore reproduced exactly between samples,
//! and projection onto a segment has a closed form.

use crate::geometry::{left_normal, wrap_angle, Pose2};

use super::TrackError;

/// Poses farther than this from the path are considered off track.
pub const MAX_PROJECTION_DISTANCE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub kappa: f64,
    pub ey_min: f64,
    pub ey_max: f64,
}

/// Path-relative coordinates of a pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathFrame {
    pub lateral_error: f64,
    pub heading_error: f64,
    pub s: f64,
    /// Unsigned distance to the foot point.
    pub distance: f64,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    start: [f64; 2],
    s0: f64,
    len: f64,
    /// Tangent heading at the start of the segment.
    heading0: f64,
    /// Signed curvature, zero for straight segments.
    curvature: f64,
    center: [f64; 2],
}

impl Segment {
    fn through(p0: [f64; 2], p1: [f64; 2], h0: f64, h1: f64, s0: f64) -> Self {
        let dx = p1[0] - p0[0];
        let dy = p1[1] - p0[1];
        let chord = dx.hypot(dy);
        let chord_dir = dy.atan2(dx);
        let turn = wrap_angle(h1 - h0);
        let half_sin = (turn / 2.0).sin();
        if turn.abs() < 1e-9 || chord < 1e-12 || half_sin.abs() < 1e-12 {
            return Segment {
                start: p0,
                s0,
                len: chord,
                heading0: chord_dir,
                curvature: 0.0,
                center: p0,
            };
        }
        let radius = chord / (2.0 * half_sin);
        let heading0 = chord_dir - turn / 2.0;
        let n = left_normal(heading0);
        Segment {
            start: p0,
            s0,
            len: radius * turn,
            heading0,
            curvature: 1.0 / radius,
            center: [p0[0] + radius * n[0], p0[1] + radius * n[1]],
        }
    }

    fn heading(&self, tau: f64) -> f64 {
        self.heading0 + self.curvature * tau
    }

    fn point(&self, tau: f64) -> [f64; 2] {
        if self.curvature == 0.0 {
            let (s, c) = self.heading0.sin_cos();
            [self.start[0] + c * tau, self.start[1] + s * tau]
        } else {
            let radius = 1.0 / self.curvature;
            let n = left_normal(self.heading(tau));
            [self.center[0] - radius * n[0], self.center[1] - radius * n[1]]
        }
    }

    /// Closest point parameter on this segment.
    fn project(&self, q: [f64; 2]) -> f64 {
        if self.curvature == 0.0 {
            let (s, c) = self.heading0.sin_cos();
            let t = (q[0] - self.start[0]) * c + (q[1] - self.start[1]) * s;
            return t.clamp(0.0, self.len);
        }
        let radius = 1.0 / self.curvature;
        let d = [q[0] - self.center[0], q[1] - self.center[1]];
        let norm = d[0].hypot(d[1]);
        if norm < 1e-12 {
            return 0.0;
        }
        // left normal at the foot point is -d / radius (radius carries the turn sign)
        let sign = radius.signum();
        let n = [-d[0] / norm * sign, -d[1] / norm * sign];
        let heading = (-n[0]).atan2(n[1]);
        let turn = self.curvature * self.len;
        let rel = wrap_angle(heading - self.heading0 - turn / 2.0);
        let tau = self.len / 2.0 + rel / self.curvature;
        if (0.0..=self.len).contains(&tau) {
            tau
        } else {
            let a = self.point(0.0);
            let b = self.point(self.len);
            let da = (q[0] - a[0]).hypot(q[1] - a[1]);
            let db = (q[0] - b[0]).hypot(q[1] - b[1]);
            if da <= db {
                0.0
            } else {
                self.len
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReferencePath {
    samples: Vec<PathSample>,
    segments: Vec<Segment>,
    closed: bool,
    length: f64,
}

impl ReferencePath {
    /// Builds a path from sample points, headings and curvatures.
    ///
    /// `corridor` holds `(ey_min, ey_max)` per sample. Closed paths connect the
    /// last sample back to the first. Arc lengths are measured along the
    /// interpolating arcs, starting at `first_s`.
    pub fn new(
        points: &[[f64; 2]],
        headings: &[f64],
        kappas: &[f64],
        corridor: &[(f64, f64)],
        closed: bool,
        first_s: f64,
    ) -> Result<Self, TrackError> {
        let n = points.len();
        if n < 2 || headings.len() != n || kappas.len() != n || corridor.len() != n {
            return Err(TrackError::BadPath(format!(
                "need at least 2 samples with matching attribute lengths, got {n}"
            )));
        }
        let seg_count = if closed { n } else { n - 1 };
        let mut segments = Vec::with_capacity(seg_count);
        let mut samples = Vec::with_capacity(n);
        let mut s = first_s;
        for i in 0..n {
            let (lo, hi) = corridor[i];
            if !(lo <= 0.0 && hi >= 0.0) {
                return Err(TrackError::BadPath(format!(
                    "corridor ({lo}, {hi}) at sample {i} does not contain 0"
                )));
            }
            samples.push(PathSample {
                s,
                x: points[i][0],
                y: points[i][1],
                heading: wrap_angle(headings[i]),
                kappa: kappas[i],
                ey_min: lo,
                ey_max: hi,
            });
            if i < seg_count {
                let j = (i + 1) % n;
                let seg = Segment::through(points[i], points[j], headings[i], headings[j], s);
                if !(seg.len > 1e-9) {
                    return Err(TrackError::BadPath(format!(
                        "duplicate consecutive samples at index {i}"
                    )));
                }
                s += seg.len;
                segments.push(seg);
            }
        }
        let length = s - first_s;
        Ok(Self {
            samples,
            segments,
            closed,
            length,
        })
    }

    pub fn samples(&self) -> &[PathSample] {
        &self.samples
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn start_s(&self) -> f64 {
        self.samples[0].s
    }

    pub fn end_s(&self) -> f64 {
        self.start_s() + self.length
    }

    /// Maps `s` into the path's parameter range (closed paths wrap).
    pub fn wrap_s(&self, s: f64) -> f64 {
        if self.closed {
            let start = self.start_s();
            let mut w = (s - start).rem_euclid(self.length) + start;
            if w >= start + self.length {
                w = start;
            }
            w
        } else {
            s.clamp(self.start_s(), self.end_s())
        }
    }

    fn check_range(&self, s: f64) -> Result<f64, TrackError> {
        if self.closed {
            if !(s >= 0.0 && s <= self.end_s()) || !s.is_finite() {
                return Err(TrackError::OutOfRange {
                    s,
                    length: self.length,
                });
            }
            Ok(self.wrap_s(s))
        } else if s >= self.start_s() - 1e-12 && s <= self.end_s() + 1e-12 {
            Ok(s.clamp(self.start_s(), self.end_s()))
        } else {
            Err(TrackError::OutOfRange {
                s,
                length: self.length,
            })
        }
    }

    /// Segment index and local parameter for an in-range `s`.
    fn locate(&self, s: f64) -> (usize, f64) {
        let idx = match self
            .segments
            .binary_search_by(|seg| seg.s0.partial_cmp(&s).unwrap())
        {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        };
        let idx = idx.min(self.segments.len() - 1);
        let seg = &self.segments[idx];
        (idx, (s - seg.s0).clamp(0.0, seg.len))
    }

    /// Curvature at `s`, linearly interpolated between samples.
    pub fn curvature_at(&self, s: f64) -> Result<f64, TrackError> {
        let s = self.check_range(s)?;
        Ok(self.interpolate(s, |p| p.kappa))
    }

    /// Corridor bounds `(ey_min, ey_max)` at `s`.
    pub fn corridor_at(&self, s: f64) -> Result<(f64, f64), TrackError> {
        let s = self.check_range(s)?;
        Ok((
            self.interpolate(s, |p| p.ey_min),
            self.interpolate(s, |p| p.ey_max),
        ))
    }

    fn interpolate(&self, s: f64, field: impl Fn(&PathSample) -> f64) -> f64 {
        let (idx, tau) = self.locate(s);
        let seg = &self.segments[idx];
        let a = &self.samples[idx];
        let b = &self.samples[(idx + 1) % self.samples.len()];
        let w = if seg.len > 0.0 { tau / seg.len } else { 0.0 };
        field(a) * (1.0 - w) + field(b) * w
    }

    /// Point and tangent heading on the path at `s`.
    pub fn pose_at(&self, s: f64) -> Result<Pose2, TrackError> {
        let s = self.check_range(s)?;
        let (idx, tau) = self.locate(s);
        let seg = &self.segments[idx];
        let p = seg.point(tau);
        Ok(Pose2::new(p[0], p[1], wrap_angle(seg.heading(tau))))
    }

    /// World point at arc length `s` and lateral offset `lateral` (left positive).
    pub fn point_at(&self, s: f64, lateral: f64) -> Result<[f64; 2], TrackError> {
        let pose = self.pose_at(s)?;
        let n = left_normal(pose.heading);
        Ok([pose.x + lateral * n[0], pose.y + lateral * n[1]])
    }

    fn frame_on_segment(&self, idx: usize, pose: &Pose2) -> PathFrame {
        let seg = &self.segments[idx];
        let q = [pose.x, pose.y];
        let tau = seg.project(q);
        let foot = seg.point(tau);
        let heading = seg.heading(tau);
        let n = left_normal(heading);
        let dx = q[0] - foot[0];
        let dy = q[1] - foot[1];
        PathFrame {
            lateral_error: dx * n[0] + dy * n[1],
            heading_error: wrap_angle(pose.heading - heading),
            s: seg.s0 + tau,
            distance: dx.hypot(dy),
        }
    }

    /// Projects a pose onto the path. Equidistant candidates resolve to the smallest `s`.
    pub fn path_frame(&self, pose: &Pose2) -> Result<PathFrame, TrackError> {
        let mut best: Option<PathFrame> = None;
        for idx in 0..self.segments.len() {
            let f = self.frame_on_segment(idx, pose);
            if best.map_or(true, |b| f.distance < b.distance) {
                best = Some(f);
            }
        }
        self.finish(best.expect("path has segments"))
    }

    /// Projection restricted to segments within `window` meters of `s_hint`.
    ///
    /// Falls back to the global search when the local result is not a clear
    /// interior minimum.
    pub fn path_frame_near(
        &self,
        pose: &Pose2,
        s_hint: f64,
        window: f64,
    ) -> Result<PathFrame, TrackError> {
        let hint = self.wrap_s(s_hint);
        let (center, _) = self.locate(hint);
        let n = self.segments.len();
        let mut best: Option<PathFrame> = None;
        let mut consider = |idx: usize| {
            let f = self.frame_on_segment(idx, pose);
            if best.map_or(true, |b| f.distance < b.distance) {
                best = Some(f);
            }
        };
        consider(center);
        let mut covered = 0.0;
        let mut k = 1;
        while covered < window && k < n {
            let fwd = center + k;
            if fwd < n || self.closed {
                let i = fwd % n;
                covered += self.segments[i].len;
                consider(i);
            } else {
                covered = window;
            }
            k += 1;
        }
        let mut covered = 0.0;
        let mut k = 1;
        while covered < window && k < n {
            if center >= k || self.closed {
                let i = (center + n - k) % n;
                covered += self.segments[i].len;
                consider(i);
            } else {
                covered = window;
            }
            k += 1;
        }
        let f = best.expect("path has segments");
        if f.distance > window / 2.0 {
            return self.path_frame(pose);
        }
        self.finish(f)
    }

    fn finish(&self, mut f: PathFrame) -> Result<PathFrame, TrackError> {
        if f.distance > MAX_PROJECTION_DISTANCE {
            return Err(TrackError::OffTrack {
                distance: f.distance,
            });
        }
        if self.closed {
            f.s = self.wrap_s(f.s);
        }
        Ok(f)
    }

    /// Signed arc-length difference `to - from`, shortest way around for closed paths.
    pub fn s_delta(&self, from: f64, to: f64) -> f64 {
        let d = to - from;
        if self.closed {
            let l = self.length;
            d - l * (d / l).round()
        } else {
            d
        }
    }

    /// Total signed turning of the path, integrated from the sample curvatures.
    pub fn curvature_integral(&self) -> f64 {
        self.segments
            .iter()
            .enumerate()
            .map(|(i, seg)| {
                let a = self.samples[i].kappa;
                let b = self.samples[(i + 1) % self.samples.len()].kappa;
                0.5 * (a + b) * seg.len
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn circle_path(radius: f64, n: usize) -> ReferencePath {
        let mut pts = Vec::new();
        let mut hs = Vec::new();
        for i in 0..n {
            let a = 2.0 * PI * i as f64 / n as f64;
            pts.push([radius * a.sin(), radius * (1.0 - a.cos())]);
            hs.push(a);
        }
        ReferencePath::new(&pts, &hs, &vec![1.0 / radius; n], &vec![(-1.0, 1.0); n], true, 0.0)
            .unwrap()
    }

    fn straight_path() -> ReferencePath {
        let pts: Vec<[f64; 2]> = (0..21).map(|i| [i as f64, 0.0]).collect();
        ReferencePath::new(&pts, &[0.0; 21], &[0.0; 21], &[(-2.0, 2.0); 21], false, 0.0).unwrap()
    }

    #[test]
    fn circle_arcs_are_exact() {
        let path = circle_path(10.0, 12);
        assert!((path.length() - 2.0 * PI * 10.0).abs() < 1e-9);
        let p = path.pose_at(path.length() / 4.0).unwrap();
        assert!((p.x - 10.0).abs() < 1e-9 && (p.y - 10.0).abs() < 1e-9);
        assert!((p.heading - PI / 2.0).abs() < 1e-9);
    }

    #[test]
    fn on_path_pose_projects_to_zero() {
        let path = straight_path();
        let f = path.path_frame(&Pose2::new(3.5, 0.0, 0.0)).unwrap();
        assert_eq!(f.lateral_error, 0.0);
        assert_eq!(f.heading_error, 0.0);
        assert!((f.s - 3.5).abs() < 1e-12);
    }

    #[test]
    fn left_offset_is_positive() {
        let path = straight_path();
        let f = path.path_frame(&Pose2::new(7.0, 0.3, 0.0)).unwrap();
        assert!((f.lateral_error - 0.3).abs() < 1e-12);
        let f = path.path_frame(&Pose2::new(7.0, -0.3, 0.1)).unwrap();
        assert!((f.lateral_error + 0.3).abs() < 1e-12);
        assert!((f.heading_error - 0.1).abs() < 1e-12);
    }

    #[test]
    fn off_track_is_an_error() {
        let path = straight_path();
        assert!(matches!(
            path.path_frame(&Pose2::new(5.0, 12.0, 0.0)),
            Err(TrackError::OffTrack { .. })
        ));
    }

    #[test]
    fn circle_projection_and_roundtrip() {
        let path = circle_path(8.0, 40);
        for k in 0..50 {
            let s = path.length() * k as f64 / 50.0;
            for ey in [-1.5, 0.0, 0.7] {
                let p = path.point_at(s, ey).unwrap();
                let h = path.pose_at(s).unwrap().heading + 0.05;
                let f = path.path_frame(&Pose2::new(p[0], p[1], h)).unwrap();
                assert!((f.lateral_error - ey).abs() < 1e-9);
                assert!(path.s_delta(s, f.s).abs() < 1e-9);
                assert!((f.heading_error - 0.05).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn curvature_out_of_range() {
        let path = straight_path();
        assert!(path.curvature_at(25.0).is_err());
        assert_eq!(path.curvature_at(10.0).unwrap(), 0.0);
    }

    #[test]
    fn equidistant_tie_takes_smallest_s() {
        // U-shaped open path: pose midway between the two legs
        let mut pts = Vec::new();
        let mut hs = Vec::new();
        for i in 0..=10 {
            pts.push([i as f64, 0.0]);
            hs.push(0.0);
        }
        for i in (0..=10).rev() {
            pts.push([i as f64, 4.0]);
            hs.push(PI);
        }
        // join through a sharp turn: replace the duplicate x=10 with a turn
        pts.remove(11);
        hs.remove(11);
        let n = pts.len();
        let path = ReferencePath::new(&pts, &hs, &vec![0.0; n], &vec![(-1.0, 1.0); n], false, 0.0)
            .unwrap();
        let f = path.path_frame(&Pose2::new(3.0, 2.0, 0.0)).unwrap();
        assert!((f.s - 3.0).abs() < 1e-9, "s = {}", f.s);
    }

    #[test]
    fn windowed_search_matches_global() {
        let path = circle_path(12.0, 200);
        for k in 0..40 {
            let s = path.length() * k as f64 / 40.0;
            let p = path.point_at(s, 0.4).unwrap();
            let pose = Pose2::new(p[0], p[1], 0.0);
            let a = path.path_frame(&pose).unwrap();
            let b = path.path_frame_near(&pose, s + 0.7, 5.0).unwrap();
            assert!((a.s - b.s).abs() < 1e-9 && (a.lateral_error - b.lateral_error).abs() < 1e-12);
        }
    }
}
