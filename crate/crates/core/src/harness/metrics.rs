//! Controller comparison metrics.
//!
//! * lateral acceleration `a_y = U r + dV/dt`, with `dV/dt` by central
//!   differences (one-sided at the ends); reported as a population std dev;
//! * mean `|e_y|` against the followed path;
//! * average speed `mean(sqrt(U² + V²))`;
//! * average sideslip `mean(|atan(V/U)|)`.

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSample {
    pub t: f64,
    pub long_speed: f64,
    pub lat_speed: f64,
    pub yaw_rate: f64,
    pub lateral_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub lat_accel_std: f64,
    pub mean_abs_lateral_error: f64,
    pub avg_speed: f64,
    pub avg_abs_sideslip: f64,
    pub lap_times: Vec<f64>,
    pub samples: usize,
}

pub const METRICS_HEADER: &str =
    "controller,seed,status,lat_accel_std,mean_abs_lateral_error,avg_speed,avg_abs_sideslip,lap_times,samples";

impl Metrics {
    pub fn csv_fields(&self) -> String {
        let laps: Vec<String> = self.lap_times.iter().map(|t| t.to_string()).collect();
        format!(
            "{},{},{},{},{},{}",
            self.lat_accel_std,
            self.mean_abs_lateral_error,
            self.avg_speed,
            self.avg_abs_sideslip,
            laps.join(" "),
            self.samples
        )
    }
}

/// Lateral acceleration `U r + dV/dt` per sample.
pub fn lateral_acceleration(samples: &[MetricSample]) -> Vec<f64> {
    let n = samples.len();
    (0..n)
        .map(|i| {
            let (a, b) = if i == 0 {
                (0, 1)
            } else if i == n - 1 {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            let vdot = (samples[b].lat_speed - samples[a].lat_speed) / (samples[b].t - samples[a].t);
            samples[i].long_speed * samples[i].yaw_rate + vdot
        })
        .collect()
}

pub fn compute_metrics(samples: &[MetricSample], lap_times: &[f64]) -> Result<Metrics, HarnessError> {
    if samples.len() < 2 {
        return Err(HarnessError::InsufficientData(format!(
            "{} samples after lap 1; at least 2 are needed",
            samples.len()
        )));
    }
    if samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(HarnessError::InsufficientData("timestamps must increase".into()));
    }
    let n = samples.len() as f64;
    let ay = lateral_acceleration(samples);
    let mean_ay = ay.iter().sum::<f64>() / n;
    let var = ay.iter().map(|a| (a - mean_ay).powi(2)).sum::<f64>() / n;
    let errors: Vec<f64> = samples
        .iter()
        .filter(|s| s.lateral_error.is_finite())
        .map(|s| s.lateral_error.abs())
        .collect();
    if errors.is_empty() {
        return Err(HarnessError::InsufficientData("no lateral error samples".into()));
    }
    let m = Metrics {
        lat_accel_std: var.sqrt(),
        mean_abs_lateral_error: errors.iter().sum::<f64>() / errors.len() as f64,
        avg_speed: samples.iter().map(|s| s.long_speed.hypot(s.lat_speed)).sum::<f64>() / n,
        avg_abs_sideslip: samples.iter().map(|s| s.lat_speed.atan2(s.long_speed).abs()).sum::<f64>() / n,
        lap_times: lap_times.to_vec(),
        samples: samples.len(),
    };
    let all = [m.lat_accel_std, m.mean_abs_lateral_error, m.avg_speed, m.avg_abs_sideslip];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(HarnessError::InsufficientData("non-finite metric".into()));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64, u: f64, v: f64, r: f64, ey: f64) -> MetricSample {
        MetricSample {
            t,
            long_speed: u,
            lat_speed: v,
            yaw_rate: r,
            lateral_error: ey,
        }
    }

    #[test]
    fn constant_radius_has_zero_spread() {
        let (u, radius) = (5.0, 20.0);
        let s: Vec<_> = (0..500).map(|k| sample(k as f64 * 0.01, u, 0.1, u / radius, 0.05)).collect();
        let m = compute_metrics(&s, &[]).unwrap();
        assert!(m.lat_accel_std.abs() < 1e-12);
        assert!((m.mean_abs_lateral_error - 0.05).abs() < 1e-15);
        assert!((m.avg_speed - u.hypot(0.1)).abs() < 1e-12);
        assert!((m.avg_abs_sideslip - (0.1f64 / u).atan()).abs() < 1e-15);
    }

    #[test]
    fn five_samples_by_hand() {
        let s = [
            sample(0.0, 2.0, 0.0, 0.1, 0.2),
            sample(0.1, 2.0, 0.1, 0.2, -0.4),
            sample(0.2, 4.0, 0.2, 0.0, 0.1),
            sample(0.3, 4.0, 0.0, 0.1, -0.1),
            sample(0.4, 3.0, 0.0, 0.0, 0.2),
        ];
        let m = compute_metrics(&s, &[31.5]).unwrap();
        // dV/dt: 1, 1, -0.5, -1, 0; U r: 0.2, 0.4, 0, 0.4, 0
        let ay = [1.2, 1.4, -0.5, -0.6, 0.0];
        let mean = 1.5 / 5.0;
        let var: f64 = ay.iter().map(|a: &f64| (a - mean) * (a - mean)).sum::<f64>() / 5.0;
        assert!((m.lat_accel_std - var.sqrt()).abs() < 1e-12);
        assert!((m.lat_accel_std - 0.843_800_924_389).abs() < 1e-9);
        assert!((m.mean_abs_lateral_error - 0.2).abs() < 1e-15);
        let speed = (2.0f64.hypot(0.0) + 2.0f64.hypot(0.1) + 4.0f64.hypot(0.2) + 4.0 + 3.0) / 5.0;
        assert!((m.avg_speed - speed).abs() < 1e-15);
        let slip = ((0.1f64 / 2.0).atan() + (0.2f64 / 4.0).atan()) / 5.0;
        assert!((m.avg_abs_sideslip - slip).abs() < 1e-15);
        assert_eq!(m.lap_times, vec![31.5]);
    }

    #[test]
    fn empty_log_is_insufficient() {
        assert!(matches!(compute_metrics(&[], &[]), Err(HarnessError::InsufficientData(_))));
        let one = [sample(0.0, 1.0, 0.0, 0.0, 0.0)];
        assert!(matches!(compute_metrics(&one, &[]), Err(HarnessError::InsufficientData(_))));
        let nan = [sample(0.0, 1.0, 0.0, 0.0, f64::NAN), sample(0.1, 1.0, 0.0, 0.0, f64::NAN)];
        assert!(compute_metrics(&nan, &[]).is_err());
    }
}
