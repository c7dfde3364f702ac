//! Synthetic labeled cone layouts drawn from random tracks.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{encode_order, ConeSample, ConenetError, INPUT_DIM, LABEL_BLUE, LABEL_PAD, LABEL_RED, MAX_CONES};
use crate::geometry::Pose2;
use crate::track::{generate_loop, ConeColor, TrackSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub min_turns: usize,
    pub max_turns: usize,
    pub min_radius: f64,
    pub width: f64,
    pub spacing: f64,
    /// Sensor range around the vehicle.
    pub range: f64,
    /// Std dev of cone position noise.
    pub position_sigma: f64,
    pub max_lateral_offset: f64,
    pub max_heading_error: f64,
    pub poses_per_track: usize,
    /// Probability that a cone in range is missed.
    pub miss_prob: f64,
    /// Probability of reflecting a sample and swapping its colors.
    pub mirror_prob: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            min_turns: 4,
            max_turns: 7,
            min_radius: 7.0,
            width: 4.0,
            spacing: 5.0,
            range: 10.0,
            position_sigma: 0.02,
            max_lateral_offset: 1.0,
            max_heading_error: 0.3,
            poses_per_track: 40,
            miss_prob: 0.1,
            mirror_prob: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<ConeSample>,
    /// Path curvature at each generating pose; empty when loaded from disk.
    pub curvature: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let cols: Vec<String> = (1..=MAX_CONES)
            .flat_map(|k| [format!("x{k}"), format!("y{k}")])
            .chain((1..=MAX_CONES).map(|k| format!("l{k}")))
            .collect();
        out.push_str(&cols.join(","));
        out.push('\n');
        for s in &self.samples {
            for v in s.input {
                let _ = write!(out, "{v},");
            }
            for (k, l) in s.labels.iter().enumerate() {
                let sep = if k + 1 == MAX_CONES { '\n' } else { ',' };
                let _ = write!(out, "{l}{sep}");
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, ConenetError> {
        let mut samples = Vec::new();
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.starts_with("x1,y1") => {}
            _ => {
                return Err(ConenetError::Parse {
                    line: 1,
                    msg: "missing header".into(),
                })
            }
        }
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| ConenetError::Parse { line: i + 1, msg };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != INPUT_DIM + MAX_CONES {
                return Err(err(format!(
                    "expected {} fields, got {}",
                    INPUT_DIM + MAX_CONES,
                    fields.len()
                )));
            }
            let mut s = ConeSample {
                input: [0.0; INPUT_DIM],
                labels: [LABEL_PAD; MAX_CONES],
            };
            for k in 0..INPUT_DIM {
                s.input[k] = fields[k]
                    .trim()
                    .parse()
                    .map_err(|_| err(format!("bad coordinate '{}'", fields[k])))?;
            }
            for k in 0..MAX_CONES {
                s.labels[k] = fields[INPUT_DIM + k]
                    .trim()
                    .parse()
                    .map_err(|_| err(format!("bad label '{}'", fields[INPUT_DIM + k])))?;
            }
            s.validate().map_err(err)?;
            samples.push(s);
        }
        Ok(Self {
            samples,
            curvature: Vec::new(),
        })
    }
}

/// Places virtual vehicle poses on random tracks and records the cones in
/// range with their true colors.
pub fn generate_dataset(cfg: &DatasetConfig, n: usize, seed: u64) -> Result<Dataset, ConenetError> {
    if cfg.min_turns > cfg.max_turns || cfg.poses_per_track == 0 || !(cfg.range > 0.0) {
        return Err(ConenetError::BadConfig("bad dataset configuration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.position_sigma.max(0.0))
        .map_err(|e| ConenetError::BadConfig(e.to_string()))?;
    let mut out = Dataset::default();
    let max_tracks = n / cfg.poses_per_track + 50;
    let mut tracks = 0;
    while out.len() < n && tracks < max_tracks {
        tracks += 1;
        let spec = TrackSpec {
            n_segments: rng.random_range(cfg.min_turns..=cfg.max_turns),
            min_radius: cfg.min_radius,
            width: cfg.width,
            spacing: cfg.spacing,
        };
        let track = match generate_loop(&spec, rng.random()) {
            Ok(t) => t,
            Err(crate::track::TrackError::Infeasible { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        let path = &track.reference;
        for _ in 0..cfg.poses_per_track {
            if out.len() >= n {
                break;
            }
            let s = path.start_s() + rng.random_range(0.0..path.length());
            let ey = rng.random_range(-cfg.max_lateral_offset..=cfg.max_lateral_offset);
            let epsi = rng.random_range(-cfg.max_heading_error..=cfg.max_heading_error);
            let on_path = path.pose_at(s)?;
            let p = path.point_at(s, ey)?;
            let pose = Pose2::new(p[0], p[1], on_path.heading + epsi);
            let mut cones = Vec::new();
            let mut colors = Vec::new();
            for (c, color) in track.cones() {
                let b = pose.to_body(c);
                let missed = rng.random::<f64>() < cfg.miss_prob;
                if b[0].hypot(b[1]) <= cfg.range && !missed {
                    cones.push([
                        b[0] + noise.sample(&mut rng),
                        b[1] + noise.sample(&mut rng),
                    ]);
                    colors.push(color);
                }
            }
            let mut sample = ConeSample {
                input: [0.0; INPUT_DIM],
                labels: [LABEL_PAD; MAX_CONES],
            };
            for (k, &i) in encode_order(&cones).iter().enumerate() {
                sample.input[2 * k] = cones[i][0];
                sample.input[2 * k + 1] = cones[i][1];
                sample.labels[k] = match colors[i] {
                    ConeColor::Red => LABEL_RED,
                    ConeColor::Blue => LABEL_BLUE,
                };
            }
            let kappa = path.curvature_at(s)?;
            let mirror = rng.random::<f64>() < cfg.mirror_prob;
            if mirror {
                sample = sample.mirrored();
            }
            out.samples.push(sample);
            out.curvature.push(if mirror { -kappa } else { kappa });
        }
    }
    if out.len() < n {
        return Err(ConenetError::Shortfall {
            got: out.len(),
            want: n,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        generate_dataset(&DatasetConfig::default(), 400, 21).unwrap()
    }

    #[test]
    fn deterministic() {
        assert_eq!(small(), small());
    }

    #[test]
    fn samples_valid_and_separated() {
        for s in &small().samples {
            s.validate().unwrap();
            let n = s.real_count();
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = (s.input[2 * i] - s.input[2 * j]).hypot(s.input[2 * i + 1] - s.input[2 * j + 1]);
                    assert!(d >= 0.5, "cones {i},{j} only {d} m apart");
                }
            }
        }
    }

    #[test]
    fn blue_mostly_left() {
        let d = small();
        let mut total = 0;
        let mut agree = 0;
        for s in &d.samples {
            for k in 0..s.real_count() {
                total += 1;
                let left = s.input[2 * k + 1] > 0.0;
                if left == (s.labels[k] == LABEL_BLUE) {
                    agree += 1;
                }
            }
        }
        assert!(agree as f64 / total as f64 > 0.9, "{agree}/{total}");
    }

    #[test]
    fn classes_balanced() {
        let d = small();
        let (mut red, mut blue) = (0, 0);
        for s in &d.samples {
            for l in s.labels {
                match l {
                    LABEL_RED => red += 1,
                    LABEL_BLUE => blue += 1,
                    _ => {}
                }
            }
        }
        let frac = red as f64 / (red + blue) as f64;
        assert!((0.4..=0.6).contains(&frac), "{frac}");
    }

    #[test]
    fn csv_roundtrip() {
        let d = small();
        let back = Dataset::from_csv(&d.to_csv()).unwrap();
        assert_eq!(back.samples, d.samples);
    }

    #[test]
    fn csv_rejects_bad_rows() {
        let d = small();
        let csv = d.to_csv();
        let header = csv.lines().next().unwrap();
        let mut row: Vec<String> = vec!["0".into(); 45];
        row[30] = "3".into();
        assert!(Dataset::from_csv(&format!("{header}\n{}\n", row.join(","))).is_err());
        let mut row: Vec<String> = vec!["0".into(); 45];
        row[0] = "1.5".into();
        assert!(Dataset::from_csv(&format!("{header}\n{}\n", row.join(","))).is_err());
    }
}
