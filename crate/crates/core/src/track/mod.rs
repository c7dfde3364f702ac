//! Closed cone tracks built from arcs and straights.

mod path;

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{dist, left_normal};

pub use path::{PathFrame, PathSample, ReferencePath, MAX_PROJECTION_DISTANCE};

/// Cone base radius, subtracted from the half-width to get the corridor.
pub const CONE_RADIUS: f64 = 0.15;

/// Centerline sampling step.
const SAMPLE_STEP: f64 = 0.1;

/// Generation attempts before giving up on a spec.
const MAX_ATTEMPTS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("invalid track spec: {0}")]
    BadSpec(String),
    #[error("no valid loop found after {attempts} attempts")]
    Infeasible { attempts: usize },
    #[error("invalid path: {0}")]
    BadPath(String),
    #[error("pose is {distance:.2} m from the path")]
    OffTrack { distance: f64 },
    #[error("arc length {s} outside path of length {length}")]
    OutOfRange { s: f64, length: f64 },
    #[error("track csv line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// One piece of a centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Straight { length: f64 },
    /// Constant-radius turn; positive `turn` is counter-clockwise.
    Arc { radius: f64, turn: f64 },
}

impl Primitive {
    pub fn length(&self) -> f64 {
        match *self {
            Primitive::Straight { length } => length,
            Primitive::Arc { radius, turn } => radius * turn.abs(),
        }
    }

    pub fn curvature(&self) -> f64 {
        match *self {
            Primitive::Straight { .. } => 0.0,
            Primitive::Arc { radius, turn } => turn.signum() / radius,
        }
    }

    /// Pose after travelling `d` along the primitive from `(x, y, heading)`.
    fn advance(&self, x: f64, y: f64, heading: f64, d: f64) -> (f64, f64, f64) {
        let k = self.curvature();
        if k == 0.0 {
            (x + d * heading.cos(), y + d * heading.sin(), heading)
        } else {
            let h1 = heading + k * d;
            (
                x + (h1.sin() - heading.sin()) / k,
                y - (h1.cos() - heading.cos()) / k,
                h1,
            )
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackSpec {
    /// Number of turns. Zero or one gives a pure circle of `min_radius`.
    pub n_segments: usize,
    pub min_radius: f64,
    pub width: f64,
    pub spacing: f64,
}

impl TrackSpec {
    pub fn validate(&self) -> Result<(), TrackError> {
        if !(self.min_radius >= 4.0) {
            return Err(TrackError::BadSpec(format!(
                "min_radius {} below 4 m",
                self.min_radius
            )));
        }
        if !(self.width >= 3.0) {
            return Err(TrackError::BadSpec(format!("width {} below 3 m", self.width)));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(TrackError::BadSpec(format!("spacing {} not positive", self.spacing)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Track {
    /// Closed polyline; the first point is repeated at the end.
    pub centerline: Vec<[f64; 2]>,
    pub blue_cones: Vec<[f64; 2]>,
    pub red_cones: Vec<[f64; 2]>,
    pub width: f64,
    pub spacing: f64,
    pub reference: ReferencePath,
}

impl Track {
    /// Builds a loop from primitives starting at the origin heading along +x.
    pub fn from_primitives(
        primitives: &[Primitive],
        width: f64,
        spacing: f64,
    ) -> Result<Self, TrackError> {
        let total: f64 = primitives.iter().map(Primitive::length).sum();
        if primitives.is_empty() || !(total > 0.0) {
            return Err(TrackError::BadSpec("empty primitive list".into()));
        }
        let half = width / 2.0;
        let corridor = (-(half - CONE_RADIUS), half - CONE_RADIUS);

        let mut pts = Vec::new();
        let mut headings = Vec::new();
        let mut kappas = Vec::new();
        let (mut x, mut y, mut h) = (0.0, 0.0, 0.0);
        for prim in primitives {
            let len = prim.length();
            if len <= 0.0 {
                continue;
            }
            let n = (len / SAMPLE_STEP).ceil().max(1.0) as usize;
            let step = len / n as f64;
            for k in 0..n {
                let (px, py, ph) = prim.advance(x, y, h, (k as f64 + 0.5) * step);
                pts.push([px, py]);
                headings.push(ph);
                kappas.push(prim.curvature());
            }
            (x, y, h) = prim.advance(x, y, h, len);
        }
        let first_s = primitives
            .iter()
            .map(Primitive::length)
            .find(|l| *l > 0.0)
            .map_or(0.0, |l| 0.5 * l / (l / SAMPLE_STEP).ceil().max(1.0));
        let reference = ReferencePath::new(
            &pts,
            &headings,
            &kappas,
            &vec![corridor; pts.len()],
            true,
            first_s,
        )?;

        let n_cones = (total / spacing - 1e-9).ceil().max(3.0) as usize;
        let gap = total / n_cones as f64;
        let mut blue = Vec::with_capacity(n_cones);
        let mut red = Vec::with_capacity(n_cones);
        let mut prim_idx = 0;
        let mut prim_start = 0.0;
        let (mut x, mut y, mut h) = (0.0, 0.0, 0.0);
        for k in 0..n_cones {
            let s = k as f64 * gap;
            while prim_idx + 1 < primitives.len()
                && s >= prim_start + primitives[prim_idx].length()
            {
                (x, y, h) = primitives[prim_idx].advance(x, y, h, primitives[prim_idx].length());
                prim_start += primitives[prim_idx].length();
                prim_idx += 1;
            }
            let (px, py, ph) = primitives[prim_idx].advance(x, y, h, s - prim_start);
            let n = left_normal(ph);
            blue.push([px + half * n[0], py + half * n[1]]);
            red.push([px - half * n[0], py - half * n[1]]);
        }

        let mut centerline = pts;
        centerline.push(centerline[0]);
        Ok(Self {
            centerline,
            blue_cones: blue,
            red_cones: red,
            width,
            spacing,
            reference,
        })
    }

    pub fn circle(radius: f64, width: f64, spacing: f64) -> Result<Self, TrackError> {
        Self::from_primitives(&[Primitive::Arc { radius, turn: 2.0 * PI }], width, spacing)
    }

    /// Two straights joined by half circles.
    pub fn stadium(
        radius: f64,
        straight: f64,
        width: f64,
        spacing: f64,
    ) -> Result<Self, TrackError> {
        let prims = [
            Primitive::Straight { length: straight },
            Primitive::Arc { radius, turn: PI },
            Primitive::Straight { length: straight },
            Primitive::Arc { radius, turn: PI },
        ];
        Self::from_primitives(&prims, width, spacing)
    }

    /// Track from a cone layout and an externally built centerline.
    pub fn from_cones(layout: ConeLayout, reference: ReferencePath) -> Self {
        let mut centerline: Vec<[f64; 2]> =
            reference.samples().iter().map(|p| [p.x, p.y]).collect();
        centerline.push(centerline[0]);
        Self {
            centerline,
            blue_cones: layout.blue,
            red_cones: layout.red,
            width: layout.width,
            spacing: layout.spacing,
            reference,
        }
    }

    pub fn lap_length(&self) -> f64 {
        self.reference.length()
    }

    /// All cones with their color, blue first.
    pub fn cones(&self) -> impl Iterator<Item = ([f64; 2], ConeColor)> + '_ {
        self.blue_cones
            .iter()
            .map(|&c| (c, ConeColor::Blue))
            .chain(self.red_cones.iter().map(|&c| (c, ConeColor::Red)))
    }

    pub fn layout(&self) -> ConeLayout {
        ConeLayout {
            blue: self.blue_cones.clone(),
            red: self.red_cones.clone(),
            width: self.width,
            spacing: self.spacing,
        }
    }

    /// Rejects loops whose boundaries come close to each other.
    fn check_clearance(&self) -> bool {
        let samples = self.reference.samples();
        let stride = 5;
        let len = self.reference.length();
        let min_gap = self.width + 3.0;
        for i in (0..samples.len()).step_by(stride) {
            for j in ((i + stride)..samples.len()).step_by(stride) {
                let ds = (samples[j].s - samples[i].s).abs();
                if ds.min(len - ds) < 20.0 {
                    continue;
                }
                let a = [samples[i].x, samples[i].y];
                let b = [samples[j].x, samples[j].y];
                if dist(a, b) < min_gap {
                    return false;
                }
            }
        }
        let min_cone = 0.5 * self.spacing;
        for side in [&self.blue_cones, &self.red_cones] {
            for i in 0..side.len() {
                for j in (i + 1)..side.len() {
                    if dist(side[i], side[j]) < min_cone {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Generates a random closed loop. The same seed always yields the same track.
pub fn generate_loop(spec: &TrackSpec, seed: u64) -> Result<Track, TrackError> {
    spec.validate()?;
    if spec.n_segments <= 1 {
        return Track::circle(spec.min_radius, spec.width, spec.spacing);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let Some(prims) = random_primitives(spec, &mut rng) else {
            continue;
        };
        let track = Track::from_primitives(&prims, spec.width, spec.spacing)?;
        if track.check_clearance() {
            return Ok(track);
        }
    }
    Err(TrackError::Infeasible {
        attempts: MAX_ATTEMPTS,
    })
}

fn random_primitives(spec: &TrackSpec, rng: &mut ChaCha8Rng) -> Option<Vec<Primitive>> {
    let n = spec.n_segments;
    let mut turns: Vec<f64> = (0..n).map(|_| rng.random_range(-0.35 * PI..0.9 * PI)).collect();
    let neg: f64 = turns.iter().filter(|t| **t < 0.0).sum();
    let pos: f64 = turns.iter().filter(|t| **t > 0.0).sum();
    if pos <= 0.0 {
        return None;
    }
    let scale = (2.0 * PI - neg) / pos;
    if !(0.4..=2.5).contains(&scale) {
        return None;
    }
    for t in turns.iter_mut().filter(|t| **t > 0.0) {
        *t *= scale;
    }
    if turns.iter().any(|t| t.abs() > 1.5 * PI || t.abs() < 0.05) {
        return None;
    }
    let radii: Vec<f64> = (0..n)
        .map(|_| rng.random_range(spec.min_radius..2.5 * spec.min_radius))
        .collect();
    let mut straights: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..12.0)).collect();

    // end point of the loop before closure
    let mut x = 0.0;
    let mut y = 0.0;
    let mut h = 0.0;
    let mut dirs = Vec::with_capacity(n);
    for i in 0..n {
        let arc = Primitive::Arc {
            radius: radii[i],
            turn: turns[i],
        };
        (x, y, h) = arc.advance(x, y, h, arc.length());
        dirs.push(h);
        x += straights[i] * h.cos();
        y += straights[i] * h.sin();
    }
    // close the gap with two extra straight lengths along existing directions
    let r = [-x, -y];
    let mut best: Option<(f64, usize, usize, f64, f64)> = None;
    for j in 0..n {
        for k in (j + 1)..n {
            let u = [dirs[j].cos(), dirs[j].sin()];
            let v = [dirs[k].cos(), dirs[k].sin()];
            let det = u[0] * v[1] - u[1] * v[0];
            if det.abs() < 0.2 {
                continue;
            }
            let a = (r[0] * v[1] - r[1] * v[0]) / det;
            let b = (u[0] * r[1] - u[1] * r[0]) / det;
            if a >= 0.0 && b >= 0.0 && best.map_or(true, |bb| a + b < bb.0) {
                best = Some((a + b, j, k, a, b));
            }
        }
    }
    let (_, j, k, a, b) = best?;
    straights[j] += a;
    straights[k] += b;
    if straights.iter().any(|s| *s > 60.0) {
        return None;
    }
    let mut prims = Vec::with_capacity(2 * n);
    for i in 0..n {
        prims.push(Primitive::Arc {
            radius: radii[i],
            turn: turns[i],
        });
        if straights[i] > 1e-9 {
            prims.push(Primitive::Straight {
                length: straights[i],
            });
        }
    }
    Some(prims)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConeColor {
    Blue,
    Red,
}

impl ConeColor {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConeColor::Blue => "blue",
            ConeColor::Red => "red",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "blue" => Some(ConeColor::Blue),
            "red" => Some(ConeColor::Red),
            _ => None,
        }
    }
}

/// Cone positions without a centerline, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeLayout {
    pub blue: Vec<[f64; 2]>,
    pub red: Vec<[f64; 2]>,
    pub width: f64,
    pub spacing: f64,
}

impl ConeLayout {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# width={}", self.width);
        let _ = writeln!(out, "# spacing={}", self.spacing);
        out.push_str("x,y,color\n");
        for c in &self.blue {
            let _ = writeln!(out, "{},{},blue", c[0], c[1]);
        }
        for c in &self.red {
            let _ = writeln!(out, "{},{},red", c[0], c[1]);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, TrackError> {
        let mut layout = ConeLayout {
            blue: Vec::new(),
            red: Vec::new(),
            width: 4.0,
            spacing: 5.0,
        };
        let mut saw_header = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |msg: String| TrackError::Parse { line: i + 1, msg };
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.split_once('=') {
                    let v: f64 = v
                        .trim()
                        .parse()
                        .map_err(|_| err(format!("bad value in '{line}'")))?;
                    match k.trim() {
                        "width" => layout.width = v,
                        "spacing" => layout.spacing = v,
                        _ => {}
                    }
                }
                continue;
            }
            if !saw_header {
                if line != "x,y,color" {
                    return Err(err(format!("expected header 'x,y,color', got '{line}'")));
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 fields, got {}", fields.len())));
            }
            let x: f64 = fields[0]
                .trim()
                .parse()
                .map_err(|_| err(format!("bad x '{}'", fields[0])))?;
            let y: f64 = fields[1]
                .trim()
                .parse()
                .map_err(|_| err(format!("bad y '{}'", fields[1])))?;
            if !x.is_finite() || !y.is_finite() {
                return Err(err("non-finite coordinate".into()));
            }
            match ConeColor::parse(fields[2]) {
                Some(ConeColor::Blue) => layout.blue.push([x, y]),
                Some(ConeColor::Red) => layout.red.push([x, y]),
                None => return Err(err(format!("unknown color '{}'", fields[2]))),
            }
        }
        if !saw_header {
            return Err(TrackError::Parse {
                line: 0,
                msg: "missing header".into(),
            });
        }
        if !(layout.width > 0.0 && layout.width.is_finite())
            || !(layout.spacing > 0.0 && layout.spacing.is_finite())
        {
            return Err(TrackError::Parse {
                line: 0,
                msg: "width and spacing must be positive".into(),
            });
        }
        Ok(layout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{wrap_angle, Pose2};
    use proptest::prelude::*;

    #[test]
    fn circle_cone_counts_and_radii() {
        let t = Track::circle(15.0, 4.0, 5.0).unwrap();
        let n = (2.0 * PI * 15.0 / 5.0_f64).ceil() as usize;
        assert_eq!(t.blue_cones.len(), n);
        assert_eq!(t.red_cones.len(), n);
        let center = [0.0, 15.0];
        for c in &t.blue_cones {
            assert!((dist(*c, center) - 13.0).abs() < 1e-9);
        }
        for c in &t.red_cones {
            assert!((dist(*c, center) - 17.0).abs() < 1e-9);
        }
        assert_eq!(t.centerline.first(), t.centerline.last());
    }

    #[test]
    fn blue_left_red_right() {
        let t = generate_loop(&spec(6), 4).unwrap();
        let path = &t.reference;
        for (c, color) in t.cones() {
            let f = path.path_frame(&Pose2::new(c[0], c[1], 0.0)).unwrap();
            match color {
                ConeColor::Blue => assert!(f.lateral_error > 0.0),
                ConeColor::Red => assert!(f.lateral_error < 0.0),
            }
        }
    }

    fn spec(n: usize) -> TrackSpec {
        TrackSpec {
            n_segments: n,
            min_radius: 8.0,
            width: 4.0,
            spacing: 5.0,
        }
    }

    #[test]
    fn seed_determinism() {
        let a = generate_loop(&spec(5), 11).unwrap();
        let b = generate_loop(&spec(5), 11).unwrap();
        assert_eq!(a.layout().to_csv(), b.layout().to_csv());
        assert_eq!(a.centerline, b.centerline);
    }

    #[test]
    fn curvature_is_exact_on_primitives() {
        let t = Track::stadium(10.0, 30.0, 4.0, 5.0).unwrap();
        assert_eq!(t.reference.curvature_at(15.0).unwrap(), 0.0);
        assert!((t.reference.curvature_at(30.0 + 5.0 * PI).unwrap() - 0.1).abs() < 1e-12);
        let cw = Track::from_primitives(&[Primitive::Arc { radius: 9.0, turn: -2.0 * PI }], 4.0, 5.0)
            .unwrap();
        assert!((cw.reference.curvature_at(10.0).unwrap() + 1.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn transition_curvature_lies_between() {
        let t = Track::stadium(10.0, 30.0, 4.0, 5.0).unwrap();
        let k = t.reference.curvature_at(30.0).unwrap();
        assert!(k > 0.0 && k < 0.1, "{k}");
        // finite-difference heading check around the junction
        let h0 = t.reference.pose_at(29.99).unwrap().heading;
        let h1 = t.reference.pose_at(30.01).unwrap().heading;
        let fd = wrap_angle(h1 - h0) / 0.02;
        assert!(fd > -1e-9 && fd < 0.1 + 1e-9);
    }

    #[test]
    fn projection_matches_dense_brute_force_near_junction() {
        let t = Track::stadium(10.0, 30.0, 4.0, 5.0).unwrap();
        let path = &t.reference;
        let dense: Vec<[f64; 2]> = (0..10_000)
            .map(|i| {
                let s = 25.0 + 10.0 * i as f64 / 9_999.0;
                path.point_at(s, 0.0).unwrap()
            })
            .collect();
        // exact junction geometry: straight along +x then arc centered (30, 10)
        let exact = |s: f64| -> [f64; 2] {
            if s <= 30.0 {
                [s, 0.0]
            } else {
                let a = (s - 30.0) / 10.0;
                [30.0 + 10.0 * a.sin(), 10.0 - 10.0 * a.cos()]
            }
        };
        for (i, p) in dense.iter().enumerate().step_by(997) {
            let s = 25.0 + 10.0 * i as f64 / 9_999.0;
            assert!(dist(*p, exact(s)) < 1e-3);
        }
        for q in [[29.5, 0.8], [30.4, -0.6], [31.0, 1.2], [29.9, 1.9]] {
            let f = path.path_frame(&Pose2::new(q[0], q[1], 0.0)).unwrap();
            let brute = dense
                .iter()
                .map(|p| dist(*p, q))
                .fold(f64::INFINITY, f64::min);
            assert!((f.distance - brute).abs() < 1e-3, "{} vs {}", f.distance, brute);
        }
    }

    #[test]
    fn csv_roundtrip() {
        let t = generate_loop(&spec(4), 2).unwrap();
        let csv = t.layout().to_csv();
        let back = ConeLayout::from_csv(&csv).unwrap();
        assert_eq!(back, t.layout());
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(ConeLayout::from_csv("x,y,color\n1,2,green\n").is_err());
        assert!(ConeLayout::from_csv("1,2,blue\n").is_err());
        assert!(ConeLayout::from_csv("x,y,color\n1,nan,blue\n").is_err());
    }

    #[test]
    fn bad_spec_rejected() {
        let mut s = spec(4);
        s.min_radius = 3.0;
        assert!(matches!(generate_loop(&s, 0), Err(TrackError::BadSpec(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn random_loops_are_well_formed(seed in 0u64..1000, n in 3usize..8) {
            let s = spec(n);
            let t = generate_loop(&s, seed).unwrap();
            let turning = t.reference.curvature_integral();
            prop_assert!((turning - 2.0 * PI).abs() < 1e-2, "turning {}", turning);
            for side in [&t.blue_cones, &t.red_cones] {
                for i in 0..side.len() {
                    for j in (i + 1)..side.len() {
                        prop_assert!(dist(side[i], side[j]) >= 0.5 * s.spacing);
                    }
                }
            }
            for p in t.reference.samples() {
                prop_assert!(p.kappa.abs() <= 1.0 / s.min_radius + 1e-12);
            }
            let last = t.centerline.len() - 1;
            prop_assert_eq!(t.centerline[0], t.centerline[last]);
        }

        #[test]
        fn path_frame_roundtrip(seed in 0u64..200, frac in 0.0f64..1.0, ey in -1.8f64..1.8, epsi in -0.5f64..0.5) {
            let t = generate_loop(&spec(5), seed).unwrap();
            let path = &t.reference;
            let s = path.start_s() + frac * path.length();
            let pose = path.pose_at(s).unwrap();
            let p = path.point_at(s, ey).unwrap();
            let f = path.path_frame(&Pose2::new(p[0], p[1], pose.heading + epsi)).unwrap();
            prop_assert!((f.lateral_error - ey).abs() < 1e-3);
            prop_assert!((f.heading_error - epsi).abs() < 1e-3);
            prop_assert!(path.s_delta(s, f.s).abs() < 1e-3);
        }

        #[test]
        fn spacing_is_regular_on_gentle_tracks(radius in 25.0f64..40.0, straight in 5.0f64..40.0) {
            let t = Track::stadium(radius, straight, 4.0, 5.0).unwrap();
            for side in [&t.blue_cones, &t.red_cones] {
                for i in 0..side.len() {
                    let d = dist(side[i], side[(i + 1) % side.len()]);
                    prop_assert!((d - 5.0).abs() <= 0.5, "gap {}", d);
                }
            }
        }
    }
}
