//! Middle-line reference paths from colored cone lists.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{dist, segments_intersect, Pose2};
use crate::track::{ReferencePath, TrackError, CONE_RADIUS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("insufficient track: {0}")]
    Insufficient(String),
    #[error("midpoint sequence intersects itself between segments {0} and {1}")]
    SelfIntersecting(usize, usize),
    #[error(transparent)]
    Track(#[from] TrackError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerConfig {
    /// Largest blue/red distance accepted as a pair.
    pub gate: f64,
    /// Midpoints closer than this are merged.
    pub merge_distance: f64,
    /// Largest step between consecutive midpoints when ordering.
    pub max_step: f64,
    /// Arc-length spacing of the resampled path.
    pub resample: f64,
    /// Subtracted from half the local cone gap to form the corridor.
    pub margin: f64,
    /// Distance between the outer points of the curvature circumcircle.
    pub curvature_span: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            gate: 6.0,
            merge_distance: 1.0,
            max_step: 11.0,
            resample: 0.5,
            margin: CONE_RADIUS,
            curvature_span: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Midpoint {
    pub pos: [f64; 2],
    /// Distance between the paired cones.
    pub gap: f64,
}

fn nearest(p: [f64; 2], others: &[[f64; 2]]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &o) in others.iter().enumerate() {
        let d = dist(p, o);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best
}

/// Pairs every cone with the nearest cone of the other color within `gate`.
///
/// Pairs found from either side are kept once, so swapping the arguments
/// gives the same set of midpoints.
pub fn pair_cones(blue: &[[f64; 2]], red: &[[f64; 2]], gate: f64) -> Result<Vec<Midpoint>, PlanError> {
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (i, &b) in blue.iter().enumerate() {
        if let Some((j, d)) = nearest(b, red) {
            if d <= gate {
                pairs.push((i, j));
            }
        }
    }
    for (j, &r) in red.iter().enumerate() {
        if let Some((i, d)) = nearest(r, blue) {
            if d <= gate {
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let mids: Vec<Midpoint> = pairs
        .into_iter()
        .map(|(i, j)| Midpoint {
            pos: [(blue[i][0] + red[j][0]) / 2.0, (blue[i][1] + red[j][1]) / 2.0],
            gap: dist(blue[i], red[j]),
        })
        .collect();
    if mids.is_empty() {
        return Err(PlanError::Insufficient(format!(
            "no cone pairs within {gate} m ({} blue, {} red)",
            blue.len(),
            red.len()
        )));
    }
    Ok(mids)
}

/// Averages groups of midpoints closer than `distance`.
pub fn merge_midpoints(mids: &[Midpoint], distance: f64) -> Vec<Midpoint> {
    let mut out: Vec<(Midpoint, usize)> = Vec::new();
    for m in mids {
        match out.iter_mut().find(|(o, _)| dist(o.pos, m.pos) < distance) {
            Some((o, n)) => {
                let k = *n as f64;
                o.pos = [(o.pos[0] * k + m.pos[0]) / (k + 1.0), (o.pos[1] * k + m.pos[1]) / (k + 1.0)];
                o.gap = (o.gap * k + m.gap) / (k + 1.0);
                *n += 1;
            }
            None => out.push((*m, 1)),
        }
    }
    out.into_iter().map(|(m, _)| m).collect()
}

/// Midpoints in driving order, and whether the sequence closes into a loop.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedMidpoints {
    pub points: Vec<Midpoint>,
    pub closed: bool,
}

/// Chains midpoints forward from `start`, each time taking the nearest
/// unvisited midpoint ahead of the current direction within `max_step`.
pub fn order_midpoints(mids: &[Midpoint], start: &Pose2, max_step: f64) -> OrderedMidpoints {
    let mut used = vec![false; mids.len()];
    let mut cur = [start.x, start.y];
    let mut dir = [start.heading.cos(), start.heading.sin()];
    let mut points = Vec::new();
    loop {
        let mut best: Option<(usize, f64)> = None;
        for (i, m) in mids.iter().enumerate() {
            if used[i] {
                continue;
            }
            let d = [m.pos[0] - cur[0], m.pos[1] - cur[1]];
            let len = d[0].hypot(d[1]);
            if len > max_step || d[0] * dir[0] + d[1] * dir[1] <= 0.0 {
                continue;
            }
            if best.is_none_or(|(_, bl)| len < bl) {
                best = Some((i, len));
            }
        }
        let Some((i, len)) = best else { break };
        used[i] = true;
        let p = mids[i].pos;
        dir = [(p[0] - cur[0]) / len, (p[1] - cur[1]) / len];
        cur = p;
        points.push(mids[i]);
    }
    let closed = points.len() >= 4 && {
        let first = points[0].pos;
        let d = [first[0] - cur[0], first[1] - cur[1]];
        let len = d[0].hypot(d[1]);
        len <= max_step && d[0] * dir[0] + d[1] * dir[1] > 0.0
    };
    OrderedMidpoints { points, closed }
}

fn check_simple(points: &[[f64; 2]], closed: bool) -> Result<(), PlanError> {
    let n = points.len();
    let segs = if closed { n } else { n - 1 };
    for a in 0..segs {
        for b in (a + 2)..segs {
            if closed && a == 0 && b == n - 1 {
                continue;
            }
            let (p, q) = (points[a], points[(a + 1) % n]);
            let (r, s) = (points[b], points[(b + 1) % n]);
            if segments_intersect(p, q, r, s) {
                return Err(PlanError::SelfIntersecting(a, b));
            }
        }
    }
    Ok(())
}

/// Interpolating cubic spline of one coordinate over knots `t`.
struct Spline {
    t: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl Spline {
    /// Natural end conditions when open, periodic when closed. For closed
    /// splines `t` has one more knot than `y`, closing back to `y[0]`.
    fn fit(t: &[f64], y: &[f64], closed: bool) -> Self {
        let n = y.len();
        let mut yy = y.to_vec();
        if closed {
            yy.push(y[0]);
        }
        let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        let segs = h.len();
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        let m = if closed {
            for i in 0..n {
                let hp = h[(i + segs - 1) % segs];
                let hn = h[i];
                let prev = (i + n - 1) % n;
                let next = (i + 1) % n;
                a[(i, prev)] += hp / 6.0;
                a[(i, i)] += (hp + hn) / 3.0;
                a[(i, next)] += hn / 6.0;
                rhs[i] = (yy[i + 1] - yy[i]) / hn - (yy[i] - yy[(i + n - 1) % n]) / hp;
            }
            let sol = a.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(n));
            let mut m: Vec<f64> = sol.iter().copied().collect();
            m.push(m[0]);
            m
        } else {
            a[(0, 0)] = 1.0;
            a[(n - 1, n - 1)] = 1.0;
            for i in 1..n - 1 {
                a[(i, i - 1)] = h[i - 1] / 6.0;
                a[(i, i)] = (h[i - 1] + h[i]) / 3.0;
                a[(i, i + 1)] = h[i] / 6.0;
                rhs[i] = (yy[i + 1] - yy[i]) / h[i] - (yy[i] - yy[i - 1]) / h[i - 1];
            }
            let sol = a.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(n));
            sol.iter().copied().collect()
        };
        Self {
            t: t.to_vec(),
            y: yy,
            m,
        }
    }

    fn eval(&self, tq: f64) -> f64 {
        let last = self.t.len() - 2;
        let i = match self.t.partition_point(|&k| k <= tq) {
            0 => 0,
            p => (p - 1).min(last),
        };
        let h = self.t[i + 1] - self.t[i];
        let a = self.t[i + 1] - tq;
        let b = tq - self.t[i];
        self.m[i] * a.powi(3) / (6.0 * h)
            + self.m[i + 1] * b.powi(3) / (6.0 * h)
            + (self.y[i] - self.m[i] * h * h / 6.0) * a / h
            + (self.y[i + 1] - self.m[i + 1] * h * h / 6.0) * b / h
    }
}

/// Signed curvature of the circle through three points.
pub fn circumcircle_curvature(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
    let denom = dist(a, b) * dist(b, c) * dist(a, c);
    if denom < 1e-15 {
        0.0
    } else {
        2.0 * cross / denom
    }
}

/// Smooth middle-line path through ordered midpoints.
///
/// A chord-length cubic spline through the midpoints is resampled at
/// `config.resample`; headings come from central differences and curvature
/// from the circumcircle of neighbouring samples. The corridor is half the
/// interpolated cone gap minus the margin.
pub fn build_reference(
    mids: &[Midpoint],
    closed: bool,
    config: &PlannerConfig,
) -> Result<ReferencePath, PlanError> {
    if mids.len() < 3 {
        return Err(PlanError::Insufficient(format!(
            "need at least 3 midpoints, got {}",
            mids.len()
        )));
    }
    let pts: Vec<[f64; 2]> = mids.iter().map(|m| m.pos).collect();
    check_simple(&pts, closed)?;
    let n = pts.len();
    let mut t = vec![0.0];
    let knots = if closed { n } else { n - 1 };
    for i in 0..knots {
        let d = dist(pts[i], pts[(i + 1) % n]);
        if d < 1e-9 {
            return Err(PlanError::Insufficient(format!("duplicate midpoint at index {i}")));
        }
        t.push(t[i] + d);
    }
    let xs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p[1]).collect();
    let sx = Spline::fit(&t, &xs, closed);
    let sy = Spline::fit(&t, &ys, closed);
    let mut gaps: Vec<f64> = mids.iter().map(|m| m.gap).collect();
    if closed {
        gaps.push(gaps[0]);
    }

    // arc length of the spline against its parameter
    const DENSE: usize = 64;
    let t_end = *t.last().expect("knots");
    let mut dense_t = Vec::with_capacity(knots * DENSE + 1);
    let mut dense_s = Vec::with_capacity(knots * DENSE + 1);
    let mut prev = [sx.eval(0.0), sy.eval(0.0)];
    dense_t.push(0.0);
    dense_s.push(0.0);
    for k in 1..=knots * DENSE {
        let tq = t_end * k as f64 / (knots * DENSE) as f64;
        let p = [sx.eval(tq), sy.eval(tq)];
        dense_s.push(dense_s[k - 1] + dist(prev, p));
        dense_t.push(tq);
        prev = p;
    }
    let total = *dense_s.last().expect("dense samples");
    let count = (total / config.resample).round().max(3.0) as usize;
    let ds = total / count as f64;
    let samples = if closed { count } else { count + 1 };
    let mut out = Vec::with_capacity(samples);
    let mut corridor = Vec::with_capacity(samples);
    for k in 0..samples {
        let s = (k as f64 * ds).min(total);
        let idx = dense_s.partition_point(|&v| v < s).clamp(1, dense_s.len() - 1);
        let f = (s - dense_s[idx - 1]) / (dense_s[idx] - dense_s[idx - 1]).max(1e-15);
        let tq = dense_t[idx - 1] + f * (dense_t[idx] - dense_t[idx - 1]);
        out.push([sx.eval(tq), sy.eval(tq)]);
        let knot = t.partition_point(|&v| v <= tq).clamp(1, t.len() - 1);
        let g = (tq - t[knot - 1]) / (t[knot] - t[knot - 1]);
        let gap = gaps[knot - 1] + g * (gaps[knot] - gaps[knot - 1]);
        let half = (gap / 2.0 - config.margin).max(0.1);
        corridor.push((-half, half));
    }
    let m = out.len();
    let neighbours = |i: usize, k: usize| -> ([f64; 2], [f64; 2], [f64; 2]) {
        if closed {
            (out[(i + m - k % m) % m], out[i], out[(i + k) % m])
        } else {
            let k = k.min((m - 1) / 2).max(1);
            let i = i.clamp(k, m - 1 - k);
            (out[i - k], out[i], out[i + k])
        }
    };
    let stencil = ((config.curvature_span / 2.0 / ds).round() as usize).max(1);
    let mut headings = Vec::with_capacity(m);
    let mut kappas = Vec::with_capacity(m);
    for i in 0..m {
        let (a, _, c) = neighbours(i, 1);
        let (from, to) = if closed || (i > 0 && i + 1 < m) {
            (a, c)
        } else if i == 0 {
            (out[0], out[1])
        } else {
            (out[m - 2], out[m - 1])
        };
        headings.push((to[1] - from[1]).atan2(to[0] - from[0]));
        let (a, b, c) = neighbours(i, stencil);
        kappas.push(circumcircle_curvature(a, b, c));
    }
    Ok(ReferencePath::new(&out, &headings, &kappas, &corridor, closed, 0.0)?)
}

/// Pairs, merges, orders and fits in one call.
pub fn plan_from_cones(
    blue: &[[f64; 2]],
    red: &[[f64; 2]],
    start: &Pose2,
    config: &PlannerConfig,
) -> Result<(ReferencePath, OrderedMidpoints), PlanError> {
    let mids = pair_cones(blue, red, config.gate)?;
    let mids = merge_midpoints(&mids, config.merge_distance);
    let ordered = order_midpoints(&mids, start, config.max_step);
    let path = build_reference(&ordered.points, ordered.closed, config)?;
    Ok((path, ordered))
}

pub const REFERENCE_HEADER: &str = "s,x,y,heading,kappa,ey_min,ey_max";

pub fn reference_csv(path: &ReferencePath) -> String {
    let mut out = String::from(REFERENCE_HEADER);
    out.push('\n');
    for p in path.samples() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.s, p.x, p.y, p.heading, p.kappa, p.ey_min, p.ey_max
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::{generate_loop, Track, TrackSpec};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sorted(mut v: Vec<Midpoint>) -> Vec<Midpoint> {
        v.sort_by(|a, b| a.pos.partial_cmp(&b.pos).unwrap());
        v
    }

    #[test]
    fn straight_rows_pair_on_centerline() {
        let blue: Vec<_> = (0..6).map(|i| [i as f64 * 5.0, 2.0]).collect();
        let red: Vec<_> = (0..6).map(|i| [i as f64 * 5.0, -2.0]).collect();
        let mids = pair_cones(&blue, &red, 6.0).unwrap();
        assert_eq!(mids.len(), 6);
        for m in &mids {
            assert!(m.pos[1].abs() < 1e-12);
            assert!((m.gap - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_pair() {
        let mids = pair_cones(&[[1.0, 4.0]], &[[1.0, 0.0]], 6.0).unwrap();
        assert_eq!(mids, vec![Midpoint { pos: [1.0, 2.0], gap: 4.0 }]);
        assert!(pair_cones(&[[0.0, 7.0]], &[[0.0, 0.0]], 6.0).is_err());
    }

    #[test]
    fn concentric_arcs_pair_on_middle_radius() {
        let ang: Vec<f64> = (0..20).map(|k| k as f64 * 2.0 * PI / 20.0).collect();
        let blue: Vec<_> = ang.iter().map(|a| [13.0 * a.cos(), 13.0 * a.sin()]).collect();
        let red: Vec<_> = ang.iter().map(|a| [17.0 * a.cos(), 17.0 * a.sin()]).collect();
        let mids = pair_cones(&blue, &red, 6.0).unwrap();
        assert_eq!(mids.len(), 20);
        for m in mids {
            assert!((m.pos[0].hypot(m.pos[1]) - 15.0).abs() < 1e-6);
        }
    }

    #[test]
    fn collinear_midpoints_have_zero_curvature() {
        let mids: Vec<_> = (0..6)
            .map(|i| Midpoint {
                pos: [i as f64 * 3.0, 1.0],
                gap: 4.0,
            })
            .collect();
        let path = build_reference(&mids, false, &PlannerConfig::default()).unwrap();
        for s in path.samples() {
            assert!(s.kappa.abs() < 1e-9);
            assert!((s.ey_max - 1.85).abs() < 1e-12);
        }
        assert!((path.length() - 15.0).abs() < 1e-9);
    }

    #[test]
    fn circle_curvature_within_two_percent() {
        for r in [10.0, 15.0, 30.0] {
            let n = (2.0 * PI * r / 5.0).round() as usize;
            let mids: Vec<_> = (0..n)
                .map(|k| {
                    let a = k as f64 * 2.0 * PI / n as f64;
                    Midpoint {
                        pos: [r * a.cos(), r * a.sin()],
                        gap: 4.0,
                    }
                })
                .collect();
            let path = build_reference(&mids, true, &PlannerConfig::default()).unwrap();
            for s in path.samples() {
                assert!((s.kappa * r - 1.0).abs() < 0.02, "R={r}: kappa {}", s.kappa);
            }
        }
    }

    #[test]
    fn self_intersection_rejected() {
        let pts = [[0.0, 0.0], [4.0, 4.0], [4.0, 0.0], [0.0, 4.0]];
        let mids: Vec<_> = pts.iter().map(|&p| Midpoint { pos: p, gap: 4.0 }).collect();
        assert!(matches!(
            build_reference(&mids, false, &PlannerConfig::default()),
            Err(PlanError::SelfIntersecting(..))
        ));
    }

    #[test]
    fn too_few_midpoints() {
        let mids = [Midpoint { pos: [0.0, 0.0], gap: 4.0 }, Midpoint { pos: [3.0, 0.0], gap: 4.0 }];
        assert!(matches!(
            build_reference(&mids, false, &PlannerConfig::default()),
            Err(PlanError::Insufficient(_))
        ));
    }

    #[test]
    fn ordering_follows_driving_direction() {
        let track = Track::stadium(10.0, 20.0, 4.0, 5.0).unwrap();
        let start = Pose2::new(0.0, 0.0, 0.0);
        let (path, ordered) =
            plan_from_cones(&track.blue_cones, &track.red_cones, &start, &PlannerConfig::default()).unwrap();
        assert!(ordered.closed);
        assert_eq!(ordered.points.len(), track.blue_cones.len());
        // counter-clockwise loop
        assert!((path.curvature_integral() - 2.0 * PI).abs() < 0.05);
        let first = ordered.points[0].pos;
        assert!(first[0] > 0.0 && first[1].abs() < 1e-9);
    }

    #[test]
    fn open_ordering_stops_at_gap() {
        let mids: Vec<_> = [0.0, 4.0, 8.0, 30.0]
            .iter()
            .map(|&x| Midpoint { pos: [x, 0.0], gap: 4.0 })
            .collect();
        let o = order_midpoints(&mids, &Pose2::new(-2.0, 0.0, 0.0), 11.0);
        assert_eq!(o.points.len(), 3);
        assert!(!o.closed);
    }

    #[test]
    fn csv_has_one_row_per_sample() {
        let track = Track::circle(15.0, 4.0, 5.0).unwrap();
        let (path, _) =
            plan_from_cones(&track.blue_cones, &track.red_cones, &Pose2::new(0.0, 0.0, 0.0), &PlannerConfig::default())
                .unwrap();
        let csv = reference_csv(&path);
        assert_eq!(csv.lines().count(), path.samples().len() + 1);
        assert!(csv.starts_with(REFERENCE_HEADER));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn pairing_is_symmetric(seed in 0u64..10_000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pts = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<[f64; 2]> {
                (0..rng.random_range(2..12)).map(|_| [rng.random_range(0.0..20.0), rng.random_range(0.0..20.0)]).collect()
            };
            let a = pts(&mut rng);
            let b = pts(&mut rng);
            let ab = pair_cones(&a, &b, 6.0);
            let ba = pair_cones(&b, &a, 6.0);
            match (ab, ba) {
                (Ok(x), Ok(y)) => prop_assert_eq!(sorted(x), sorted(y)),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "one direction failed"),
            }
        }

        #[test]
        fn generated_tracks_plan_cleanly(seed in 0u64..10_000) {
            let spec = TrackSpec { n_segments: 5, min_radius: 8.0, width: 4.0, spacing: 5.0 };
            let track = generate_loop(&spec, seed).unwrap();
            let start = Pose2::new(0.0, 0.0, 0.0);
            let (path, ordered) = plan_from_cones(&track.blue_cones, &track.red_cones, &start, &PlannerConfig::default()).unwrap();
            prop_assert!(ordered.closed);
            for m in &ordered.points {
                let f = path.path_frame(&Pose2::new(m.pos[0], m.pos[1], 0.0)).unwrap();
                prop_assert!(f.lateral_error.abs() < 0.05, "|e_y| {}", f.lateral_error);
            }
            let kmax = path.samples().iter().map(|s| s.kappa.abs()).fold(0.0, f64::max);
            prop_assert!(kmax <= 1.1 / spec.min_radius, "max curvature {kmax}");
        }
    }
}
