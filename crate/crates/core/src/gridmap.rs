//! Two-channel log-odds grid of cone evidence.
//!
//! Each cell keeps `S = log(p / (1 − p))` for "red cone here" and for "blue
//! cone here". Evidence adds in log-odds space; the grid grows on demand.

use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::Pose2;
use crate::track::ConeColor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("confidence {0} outside (0, 1)")]
    BadConfidence(f64),
    #[error("invalid map configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub resolution: f64,
    pub s_max: f64,
    pub s_min: f64,
    /// Spread each detection over the 3×3 neighbourhood.
    pub stamp: bool,
    /// Confidence given to colorless detections, added to both channels.
    pub colorless_prob: f64,
    /// Colorless evidence stops accumulating at this log-odds.
    pub colorless_cap: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            resolution: 0.1,
            s_max: 10.0,
            s_min: 2.0,
            stamp: true,
            colorless_prob: 0.6,
            colorless_cap: 3.0,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.resolution > 0.0) || !(self.s_max > 0.0) || !(self.s_min > 0.0) {
            return Err(GridError::BadConfig(
                "resolution, s_max and s_min must be positive".into(),
            ));
        }
        if !(self.colorless_prob > 0.0 && self.colorless_prob < 1.0) {
            return Err(GridError::BadConfig("colorless_prob outside (0, 1)".into()));
        }
        Ok(())
    }
}

/// Stamp weights for the centre, edge and corner cells.
const STAMP: [f64; 3] = [1.0, 0.5, 0.25];

/// Cells added around a point when the grid grows.
const GROW_MARGIN: i64 = 50;

pub fn log_odds(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One log-odds update: `clamp(s + lomeas, ±s_max)`.
pub fn update_cell(s_prev: f64, lomeas: f64, s_max: f64) -> f64 {
    (s_prev + lomeas).clamp(-s_max, s_max)
}

/// A cone observation in the vehicle frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapDetection {
    pub position: [f64; 2],
    /// `None` for LiDAR cones without a color.
    pub color: Option<ConeColor>,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapCone {
    pub position: [f64; 2],
    pub color: ConeColor,
    pub peak: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeMap {
    config: GridConfig,
    /// Global index of local cell (0, 0).
    offset: (i64, i64),
    nx: usize,
    ny: usize,
    red: Vec<f64>,
    blue: Vec<f64>,
}

impl ConeMap {
    pub fn new(config: GridConfig) -> Result<Self, GridError> {
        config.validate()?;
        Ok(Self {
            config,
            offset: (0, 0),
            nx: 0,
            ny: 0,
            red: Vec::new(),
            blue: Vec::new(),
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    /// World coordinates of the lower-left corner of local cell (0, 0).
    pub fn origin(&self) -> [f64; 2] {
        let r = self.config.resolution;
        [self.offset.0 as f64 * r, self.offset.1 as f64 * r]
    }

    pub fn size(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    fn global_cell(&self, x: f64, y: f64) -> (i64, i64) {
        let r = self.config.resolution;
        ((x / r).floor() as i64, (y / r).floor() as i64)
    }

    /// Local cell indices `floor((p − origin) / res)`; may lie outside the grid.
    pub fn world_to_cell(&self, x: f64, y: f64) -> (i64, i64) {
        let (gi, gj) = self.global_cell(x, y);
        (gi - self.offset.0, gj - self.offset.1)
    }

    pub fn cell_center(&self, i: i64, j: i64) -> [f64; 2] {
        let r = self.config.resolution;
        [
            ((i + self.offset.0) as f64 + 0.5) * r,
            ((j + self.offset.1) as f64 + 0.5) * r,
        ]
    }

    /// Grows the grid so that the global cell `(gi, gj)` and its neighbours exist.
    fn ensure_global(&mut self, gi: i64, gj: i64) {
        let inside = |g: i64, off: i64, n: usize| g - 1 >= off && g + 1 < off + n as i64;
        if self.nx > 0 && inside(gi, self.offset.0, self.nx) && inside(gj, self.offset.1, self.ny) {
            return;
        }
        let (lo_i, hi_i, lo_j, hi_j) = if self.nx == 0 {
            (gi - GROW_MARGIN, gi + GROW_MARGIN, gj - GROW_MARGIN, gj + GROW_MARGIN)
        } else {
            (
                self.offset.0.min(gi - GROW_MARGIN),
                (self.offset.0 + self.nx as i64 - 1).max(gi + GROW_MARGIN),
                self.offset.1.min(gj - GROW_MARGIN),
                (self.offset.1 + self.ny as i64 - 1).max(gj + GROW_MARGIN),
            )
        };
        let nx = (hi_i - lo_i + 1) as usize;
        let ny = (hi_j - lo_j + 1) as usize;
        let mut red = vec![0.0; nx * ny];
        let mut blue = vec![0.0; nx * ny];
        for j in 0..self.ny {
            for i in 0..self.nx {
                let ni = (i as i64 + self.offset.0 - lo_i) as usize;
                let nj = (j as i64 + self.offset.1 - lo_j) as usize;
                red[nj * nx + ni] = self.red[j * self.nx + i];
                blue[nj * nx + ni] = self.blue[j * self.nx + i];
            }
        }
        self.offset = (lo_i, lo_j);
        self.nx = nx;
        self.ny = ny;
        self.red = red;
        self.blue = blue;
    }

    /// Grows the grid to cover a world point.
    pub fn ensure_contains(&mut self, x: f64, y: f64) {
        let (gi, gj) = self.global_cell(x, y);
        self.ensure_global(gi, gj);
    }

    fn index(&self, i: i64, j: i64) -> Option<usize> {
        (i >= 0 && j >= 0 && (i as usize) < self.nx && (j as usize) < self.ny)
            .then(|| j as usize * self.nx + i as usize)
    }

    /// Log-odds of a channel at local cell `(i, j)`; zero outside the grid.
    pub fn value(&self, color: ConeColor, i: i64, j: i64) -> f64 {
        self.index(i, j).map_or(0.0, |k| match color {
            ConeColor::Red => self.red[k],
            ConeColor::Blue => self.blue[k],
        })
    }

    /// Log-odds at the cell containing a world point.
    pub fn value_at(&self, color: ConeColor, x: f64, y: f64) -> f64 {
        let (i, j) = self.world_to_cell(x, y);
        self.value(color, i, j)
    }

    fn add(&mut self, color: ConeColor, gi: i64, gj: i64, lomeas: f64, cap: Option<f64>) {
        let s_max = self.config.s_max;
        let weights: &[(i64, i64, f64)] = if self.config.stamp {
            &[
                (0, 0, STAMP[0]),
                (-1, 0, STAMP[1]),
                (1, 0, STAMP[1]),
                (0, -1, STAMP[1]),
                (0, 1, STAMP[1]),
                (-1, -1, STAMP[2]),
                (-1, 1, STAMP[2]),
                (1, -1, STAMP[2]),
                (1, 1, STAMP[2]),
            ]
        } else {
            &[(0, 0, 1.0)]
        };
        for &(di, dj, w) in weights {
            let k = self
                .index(gi + di - self.offset.0, gj + dj - self.offset.1)
                .expect("grid grown before update");
            let cell = match color {
                ConeColor::Red => &mut self.red[k],
                ConeColor::Blue => &mut self.blue[k],
            };
            let next = update_cell(*cell, w * lomeas, s_max);
            *cell = match cap {
                Some(c) if next > c => cell.max(c),
                _ => next,
            };
        }
    }

    /// Adds body-frame detections seen from `pose`.
    pub fn integrate_detections(&mut self, detections: &[MapDetection], pose: &Pose2) -> Result<(), GridError> {
        for d in detections {
            if !(d.confidence > 0.0 && d.confidence < 1.0) {
                return Err(GridError::BadConfidence(d.confidence));
            }
        }
        for d in detections {
            let w = pose.to_world(d.position);
            let (gi, gj) = self.global_cell(w[0], w[1]);
            self.ensure_global(gi, gj);
            match d.color {
                Some(c) => self.add(c, gi, gj, log_odds(d.confidence), None),
                None => {
                    let l = log_odds(self.config.colorless_prob);
                    let cap = Some(self.config.colorless_cap);
                    self.add(ConeColor::Red, gi, gj, l, cap);
                    self.add(ConeColor::Blue, gi, gj, l, cap);
                }
            }
        }
        Ok(())
    }

    /// Cones found as S-weighted centroids of 8-connected blobs above
    /// `s_min`. A cell above threshold in both channels belongs to the
    /// stronger one; exact ties belong to neither.
    pub fn extract_cones(&self, s_min: f64) -> Vec<MapCone> {
        let n = self.nx * self.ny;
        let mut owner: Vec<Option<ConeColor>> = vec![None; n];
        for k in 0..n {
            let (r, b) = (self.red[k], self.blue[k]);
            owner[k] = match (r >= s_min, b >= s_min) {
                (true, true) if r > b => Some(ConeColor::Red),
                (true, true) if b > r => Some(ConeColor::Blue),
                (true, false) => Some(ConeColor::Red),
                (false, true) => Some(ConeColor::Blue),
                _ => None,
            };
        }
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for start in 0..n {
            let Some(color) = owner[start] else { continue };
            if seen[start] {
                continue;
            }
            let grid = match color {
                ConeColor::Red => &self.red,
                ConeColor::Blue => &self.blue,
            };
            seen[start] = true;
            stack.push(start);
            let (mut sw, mut sx, mut sy, mut peak) = (0.0, 0.0, 0.0, f64::NEG_INFINITY);
            while let Some(k) = stack.pop() {
                let i = (k % self.nx) as i64;
                let j = (k / self.nx) as i64;
                let s = grid[k];
                let c = self.cell_center(i, j);
                sw += s;
                sx += s * c[0];
                sy += s * c[1];
                peak = peak.max(s);
                for dj in -1..=1 {
                    for di in -1..=1 {
                        if let Some(m) = self.index(i + di, j + dj) {
                            if !seen[m] && owner[m] == Some(color) {
                                seen[m] = true;
                                stack.push(m);
                            }
                        }
                    }
                }
            }
            out.push(MapCone {
                position: [sx / sw, sy / sw],
                color,
                peak,
            });
        }
        out
    }

    /// Plain PGM (P2) image of one channel, top row = largest y.
    pub fn to_pgm(&self, color: ConeColor) -> String {
        let grid = match color {
            ConeColor::Red => &self.red,
            ConeColor::Blue => &self.blue,
        };
        let mut out = String::new();
        let o = self.origin();
        let _ = writeln!(out, "P2");
        let _ = writeln!(
            out,
            "# {} channel, origin {} {}, resolution {}",
            color.as_str(),
            o[0],
            o[1],
            self.config.resolution
        );
        let _ = writeln!(out, "{} {}", self.nx, self.ny);
        let _ = writeln!(out, "255");
        for j in (0..self.ny).rev() {
            let row: Vec<String> = (0..self.nx)
                .map(|i| {
                    let s = grid[j * self.nx + i];
                    let v = ((s + self.config.s_max) / (2.0 * self.config.s_max) * 255.0).round();
                    format!("{}", v.clamp(0.0, 255.0) as u8)
                })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Fuses same-color cones closer than `radius` into their peak-weighted
/// mean, keeping the larger peak. Clusters are grown transitively.
pub fn merge_nearby(cones: &[MapCone], radius: f64) -> Vec<MapCone> {
    let n = cones.len();
    let mut group: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in 0..i {
            if cones[i].color == cones[j].color && crate::geometry::dist(cones[i].position, cones[j].position) < radius {
                let (gi, gj) = (group[i], group[j]);
                let (lo, hi) = (gi.min(gj), gi.max(gj));
                for g in group.iter_mut() {
                    if *g == hi {
                        *g = lo;
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    for g in 0..n {
        let members: Vec<&MapCone> = (0..n).filter(|&i| group[i] == g).map(|i| &cones[i]).collect();
        if members.is_empty() {
            continue;
        }
        let w: f64 = members.iter().map(|c| c.peak).sum();
        let x = members.iter().map(|c| c.peak * c.position[0]).sum::<f64>() / w;
        let y = members.iter().map(|c| c.peak * c.position[1]).sum::<f64>() / w;
        out.push(MapCone {
            position: [x, y],
            color: members[0].color,
            peak: members.iter().map(|c| c.peak).fold(f64::NEG_INFINITY, f64::max),
        });
    }
    out
}

pub fn cones_csv(cones: &[MapCone]) -> String {
    let mut out = String::from("x,y,color,peak\n");
    for c in cones {
        let _ = writeln!(out, "{},{},{},{}", c.position[0], c.position[1], c.color.as_str(), c.peak);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map() -> ConeMap {
        ConeMap::new(GridConfig::default()).unwrap()
    }

    fn det(x: f64, y: f64, color: ConeColor, p: f64) -> MapDetection {
        MapDetection {
            position: [x, y],
            color: Some(color),
            confidence: p,
        }
    }

    #[test]
    fn cell_indexing() {
        let m = map();
        assert_eq!(m.world_to_cell(0.05, 0.05), (0, 0));
        assert_eq!(m.world_to_cell(0.1, 0.0), (1, 0));
        assert_eq!(m.world_to_cell(-0.05, 0.0), (-1, 0));
    }

    #[test]
    fn update_rule() {
        assert_eq!(update_cell(0.0, 0.4, 10.0), 0.4);
        let mut s = 0.0;
        for _ in 0..5 {
            s = update_cell(s, 0.7, 10.0);
        }
        assert!((s - 3.5).abs() < 1e-12);
        assert_eq!(update_cell(9.8, 0.7, 10.0), 10.0);
    }

    #[test]
    fn uninformative_detection_leaves_map() {
        let mut m = map();
        m.integrate_detections(&[det(1.0, 1.0, ConeColor::Red, 0.5)], &Pose2::default())
            .unwrap();
        assert_eq!(m.value_at(ConeColor::Red, 1.0, 1.0), 0.0);
        assert!(m.extract_cones(1e-9).is_empty());
    }

    #[test]
    fn two_hits_add() {
        let mut m = map();
        let d = det(2.03, -1.07, ConeColor::Blue, 0.9);
        m.integrate_detections(&[d, d], &Pose2::default()).unwrap();
        assert!((m.value_at(ConeColor::Blue, 2.03, -1.07) - 2.0 * 9f64.ln()).abs() < 1e-12);
        assert!((m.value_at(ConeColor::Blue, 2.13, -1.07) - 9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bad_confidence_rejected() {
        let mut m = map();
        for p in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(m
                .integrate_detections(&[det(0.0, 0.0, ConeColor::Red, p)], &Pose2::default())
                .is_err());
        }
    }

    #[test]
    fn thresholds_on_extraction() {
        let mut m = map();
        let d = det(3.05, 4.05, ConeColor::Red, 0.9);
        m.integrate_detections(&[d], &Pose2::default()).unwrap();
        assert!(m.extract_cones(2.5).is_empty());
        for _ in 0..4 {
            m.integrate_detections(&[d], &Pose2::default()).unwrap();
        }
        let cones = m.extract_cones(2.0);
        assert_eq!(cones.len(), 1);
        assert_eq!(cones[0].color, ConeColor::Red);
        assert!((cones[0].position[0] - 3.05).abs() < 1e-9 && (cones[0].position[1] - 4.05).abs() < 1e-9);
    }

    #[test]
    fn colorless_evidence_alone_yields_no_cone() {
        let mut m = map();
        let d = MapDetection {
            position: [1.0, 1.0],
            color: None,
            confidence: 0.6,
        };
        for _ in 0..100 {
            m.integrate_detections(&[d], &Pose2::default()).unwrap();
        }
        assert_eq!(m.value_at(ConeColor::Red, 1.0, 1.0), 3.0);
        assert!(m.extract_cones(2.0).is_empty());
        m.integrate_detections(&[det(1.0, 1.0, ConeColor::Blue, 0.8)], &Pose2::default())
            .unwrap();
        let c = m.extract_cones(2.0);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].color, ConeColor::Blue);
    }

    #[test]
    fn body_detections_transform_to_world() {
        let mut m = map();
        let pose = Pose2::new(10.0, 5.0, std::f64::consts::FRAC_PI_2);
        m.integrate_detections(&[det(2.0, 0.0, ConeColor::Red, 0.99)], &pose).unwrap();
        assert!(m.value_at(ConeColor::Red, 10.0, 7.0) > 4.0);
    }

    #[test]
    fn growth_keeps_contents() {
        let mut m = map();
        m.integrate_detections(&[det(0.0, 0.0, ConeColor::Red, 0.9)], &Pose2::default())
            .unwrap();
        let before = m.value_at(ConeColor::Red, 0.0, 0.0);
        let size = m.size();
        m.integrate_detections(&[det(-40.0, 60.0, ConeColor::Blue, 0.9)], &Pose2::default())
            .unwrap();
        assert_ne!(m.size(), size);
        assert_eq!(m.value_at(ConeColor::Red, 0.0, 0.0), before);
        assert_eq!(m.value_at(ConeColor::Red, 0.1, 0.0), before * 0.5);
    }

    /// Labels 8-connected components by repeated relaxation.
    fn oracle_blobs(mask: &[Vec<bool>]) -> usize {
        let h = mask.len();
        let w = mask[0].len();
        let mut label = vec![vec![0usize; w]; h];
        let mut next = 1;
        for j in 0..h {
            for i in 0..w {
                if mask[j][i] {
                    label[j][i] = next;
                    next += 1;
                }
            }
        }
        loop {
            let mut changed = false;
            for j in 0..h {
                for i in 0..w {
                    if label[j][i] == 0 {
                        continue;
                    }
                    for dj in -1i64..=1 {
                        for di in -1i64..=1 {
                            let (a, b) = (j as i64 + dj, i as i64 + di);
                            if a < 0 || b < 0 || a >= h as i64 || b >= w as i64 {
                                continue;
                            }
                            let l = label[a as usize][b as usize];
                            if l != 0 && l < label[j][i] {
                                label[j][i] = l;
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let mut ids: Vec<usize> = label.iter().flatten().copied().filter(|l| *l != 0).collect();
        ids.sort();
        ids.dedup();
        ids.len()
    }

    #[test]
    fn blob_count_matches_brute_force() {
        let cfg = GridConfig {
            stamp: false,
            ..GridConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..30 {
            let mut m = ConeMap::new(cfg).unwrap();
            let mut mask = vec![vec![false; 20]; 20];
            for j in 0..20 {
                for i in 0..20 {
                    if rng.random::<f64>() < 0.3 {
                        mask[j][i] = true;
                        let x = (i as f64 + 0.5) * 0.1;
                        let y = (j as f64 + 0.5) * 0.1;
                        m.integrate_detections(&[det(x, y, ConeColor::Red, 0.95)], &Pose2::default())
                            .unwrap();
                    }
                }
            }
            assert_eq!(m.extract_cones(2.0).len(), oracle_blobs(&mask));
        }
    }

    #[test]
    fn nearby_duplicates_merge_by_color() {
        let c = |x: f64, y: f64, color, peak| MapCone {
            position: [x, y],
            color,
            peak,
        };
        let cones = [
            c(0.0, 0.0, ConeColor::Red, 6.0),
            c(0.4, 0.0, ConeColor::Red, 2.0),
            c(0.8, 0.0, ConeColor::Red, 2.0),
            c(0.2, 0.0, ConeColor::Blue, 8.0),
            c(5.0, 0.0, ConeColor::Red, 7.0),
        ];
        let m = merge_nearby(&cones, 0.5);
        assert_eq!(m.len(), 3);
        assert_eq!(m[0].color, ConeColor::Red);
        assert!((m[0].position[0] - 0.24).abs() < 1e-12);
        assert_eq!(m[0].peak, 6.0);
        assert_eq!(m[1].color, ConeColor::Blue);
        assert_eq!(m[2].position, [5.0, 0.0]);
    }

    #[test]
    fn two_adjacent_blobs() {
        let cfg = GridConfig {
            stamp: false,
            ..GridConfig::default()
        };
        let mut m = ConeMap::new(cfg).unwrap();
        for x in [0.05, 0.25] {
            m.integrate_detections(&[det(x, 0.05, ConeColor::Blue, 0.95)], &Pose2::default())
                .unwrap();
        }
        assert_eq!(m.extract_cones(2.0).len(), 2);
    }

    #[test]
    fn static_cone_converges_from_many_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = rand_distr::Normal::new(0.0, 0.05).unwrap();
        let truth = [12.34, -3.21];
        let mut m = map();
        for _ in 0..60 {
            let pose = Pose2::new(
                rng.random_range(0.0..10.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-3.0..3.0),
            );
            let b = pose.to_body(truth);
            let b = [
                b[0] + rand_distr::Distribution::sample(&noise, &mut rng),
                b[1] + rand_distr::Distribution::sample(&noise, &mut rng),
            ];
            m.integrate_detections(&[det(b[0], b[1], ConeColor::Blue, 0.8)], &pose)
                .unwrap();
        }
        let cones = m.extract_cones(2.0);
        assert_eq!(cones.len(), 1);
        let p = cones[0].position;
        assert!((p[0] - truth[0]).hypot(p[1] - truth[1]) < 0.15);
    }

    /// Posterior by direct Bayes products over the observation history.
    fn bayes_posterior(ps: &[f64]) -> f64 {
        // p(s=1|z) ∝ Π p(z|s=1) p(s=1) with p(z|s=1)/p(z|s=0) = p/(1-p), prior 0.5
        let mut num = 0.5;
        let mut den = 0.5;
        for &p in ps {
            num *= p;
            den *= 1.0 - p;
        }
        num / (num + den)
    }

    proptest! {
        #[test]
        fn log_odds_equals_bayes(seed in 0u64..1_000_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..8);
            let ps: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
            let s = ps.iter().fold(0.0, |s, p| update_cell(s, log_odds(*p), f64::INFINITY));
            let p_map = 1.0 / (1.0 + (-s).exp());
            prop_assert!((p_map - bayes_posterior(&ps)).abs() < 1e-12);
        }

        #[test]
        fn order_does_not_matter(seed in 0u64..1_000_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dets: Vec<MapDetection> = (0..6).map(|_| det(
                rng.random_range(0.0..0.5), rng.random_range(0.0..0.5),
                if rng.random::<bool>() { ConeColor::Red } else { ConeColor::Blue },
                rng.random_range(0.55..0.9))).collect();
            let mut a = map();
            let mut b = map();
            a.ensure_contains(0.0, 0.0);
            b.ensure_contains(0.0, 0.0);
            a.integrate_detections(&dets, &Pose2::default()).unwrap();
            let rev: Vec<_> = dets.iter().rev().copied().collect();
            b.integrate_detections(&rev, &Pose2::default()).unwrap();
            for c in [ConeColor::Red, ConeColor::Blue] {
                for i in 0..8 {
                    for j in 0..8 {
                        let x = i as f64 * 0.1 - 0.1;
                        let y = j as f64 * 0.1 - 0.1;
                        prop_assert!((a.value_at(c, x, y) - b.value_at(c, x, y)).abs() < 1e-12);
                    }
                }
            }
        }

        #[test]
        fn positive_evidence_never_lowers(s in -10.0f64..10.0, p in 0.5f64..0.999) {
            prop_assert!(update_cell(s, log_odds(p), 10.0) >= s);
        }

        #[test]
        fn cell_center_close_to_point(x in -50.0f64..50.0, y in -50.0f64..50.0) {
            let m = map();
            let (i, j) = m.world_to_cell(x, y);
            let c = m.cell_center(i, j);
            prop_assert!((c[0] - x).hypot(c[1] - y) <= 0.1 / 2f64.sqrt() + 1e-12);
        }
    }
}
