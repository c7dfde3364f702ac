//! Run directories: CSV logs, maps, metrics, config snapshot and replay.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::estimator::{belief_csv_row, Belief, Ekf, BELIEF_HEADER};
use crate::gridmap::cones_csv;
use crate::planner::reference_csv;
use crate::sensors::{write_log, Measurement};
use crate::track::ConeColor;

use super::episode::{initial_state, EpisodeLog};
use super::metrics::METRICS_HEADER;
use super::{EpisodeConfig, HarnessError};

pub const TELEMETRY_HEADER: &str = "t,lap,phase,x,y,heading,long_speed,lat_speed,yaw_rate,steer,accel,\
track_offset,heading_error,path_error,progress,steer_rate_cmd,jerk_cmd";

pub const CONTROL_HEADER: &str = "t,lap,phase,x,y,heading,long_speed,lat_speed,yaw_rate,lateral_error,\
heading_error,speed_target,steer_rate_cmd,jerk_cmd,status,qp_iterations,slip_slack,belief_age";

const RUN_README: &str = "# Run artifacts

All values are SI units (m, s, rad). Angles are in (-pi, pi].

- `config.ini`: every setting used for this run; `fsd sim --config config.ini` reproduces it.
- `measurements.csv`: `t,kind,payload,cov`. `payload` is space separated: vector sensors list
  their components, `cone_scan` lists body-frame points as consecutive `x y` values, `camera`
  lists detections as `color confidence u v` quadruples (color 0 = blue, 1 = red). `cov` is the
  row-major noise covariance of one element.
- `belief.csv`: estimator mean and covariance diagonal after fusion at every control step.
- `telemetry.csv`: true state at the plant rate. `track_offset`/`heading_error` are relative to
  the true centerline, `path_error` to the path being followed (empty when there is none),
  `progress` is the distance driven along the centerline, and the `*_cmd` columns are the held
  steering-rate and jerk commands.
- `control.csv`: the estimated state handed to the controller at every control step, its speed
  target, solver status, QP iterations, the first-step rear-slip slack (m/s) of the MPC solution,
  and the age of the last position fix.
- `events.csv`: lap crossings, mission switch, sensor outages and termination.
- `cones.csv`: cones extracted from the map (`x,y,color,peak`, peak = highest log-odds).
- `reference.csv`: the frozen middle line (`s,x,y,heading,kappa,ey_min,ey_max`).
- `map_red.pgm`, `map_blue.pgm`: log-odds maps scaled to 0..255, top row = largest y.
- `metrics.csv`: lateral-acceleration std dev (`U r + dV/dt`), mean |lateral error| from the
  followed path, average speed, average |sideslip| = |atan(V/U)| and lap times, computed on the
  true state after lap 1.
";

fn write(dir: &Path, name: &str, text: &str) -> Result<(), HarnessError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))
}

fn num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

pub fn telemetry_csv(log: &EpisodeLog) -> String {
    let mut out = String::from(TELEMETRY_HEADER);
    out.push('\n');
    for r in &log.telemetry {
        let s = &r.truth;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.lap,
            r.phase.as_str(),
            s.x,
            s.y,
            s.heading,
            s.long_speed,
            s.lat_speed,
            s.yaw_rate,
            s.steer,
            s.accel,
            s.lateral_error,
            s.heading_error,
            num(r.path_error),
            r.progress,
            r.rates.steer_rate,
            r.rates.jerk
        );
    }
    out
}

pub fn control_csv(log: &EpisodeLog) -> String {
    let mut out = String::from(CONTROL_HEADER);
    out.push('\n');
    for r in &log.control {
        let s = &r.estimate;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.lap,
            r.phase.as_str(),
            s.x,
            s.y,
            s.heading,
            s.long_speed,
            s.lat_speed,
            s.yaw_rate,
            s.lateral_error,
            s.heading_error,
            r.speed_target,
            r.rates.steer_rate,
            r.rates.jerk,
            r.status,
            r.qp_iterations,
            r.slip_slack,
            r.belief_age
        );
    }
    out
}

pub fn beliefs_csv(beliefs: &[Belief]) -> String {
    let mut out = String::from(BELIEF_HEADER);
    out.push('\n');
    for b in beliefs {
        out.push_str(&belief_csv_row(b));
        out.push('\n');
    }
    out
}

/// One metrics row, with empty metric fields when they cannot be computed.
pub fn metrics_row(log: &EpisodeLog) -> String {
    let head = format!(
        "{},{},{}",
        log.config.controller.as_str(),
        log.config.seed,
        log.status.as_str()
    );
    match log.metrics() {
        Ok(m) => format!("{head},{}", m.csv_fields()),
        Err(_) => format!("{head},,,,,,0"),
    }
}

pub fn metrics_csv(log: &EpisodeLog) -> String {
    format!("{METRICS_HEADER}\n{}\n", metrics_row(log))
}

/// Writes every artifact of `log` into `dir`, creating it if needed.
pub fn write_run(log: &EpisodeLog, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    write(dir, "config.ini", &log.config.to_text())?;
    write(dir, "measurements.csv", &write_log(&log.measurements))?;
    write(dir, "belief.csv", &beliefs_csv(&log.beliefs))?;
    write(dir, "telemetry.csv", &telemetry_csv(log))?;
    write(dir, "control.csv", &control_csv(log))?;
    let mut events = String::from("t,event\n");
    for (t, e) in &log.events {
        let _ = writeln!(events, "{t},{e}");
    }
    let _ = writeln!(
        events,
        "{},{} {}",
        log.telemetry.last().map_or(0.0, |r| r.t),
        log.status.as_str(),
        log.status.detail()
    );
    write(dir, "events.csv", &events)?;
    write(dir, "cones.csv", &cones_csv(&log.cones))?;
    if let Some(path) = &log.reference {
        write(dir, "reference.csv", &reference_csv(path))?;
    }
    write(dir, "map_red.pgm", &log.map.to_pgm(ConeColor::Red))?;
    write(dir, "map_blue.pgm", &log.map.to_pgm(ConeColor::Blue))?;
    write(dir, "metrics.csv", &metrics_csv(log))?;
    write(dir, "README.md", RUN_README)?;
    Ok(())
}

/// Re-runs the estimator over logged measurements with the episode's call
/// pattern: one fusion per plant step, beliefs kept at control steps, until `t_end`.
pub fn replay_beliefs(
    config: &EpisodeConfig,
    measurements: &[Measurement],
    t_end: f64,
) -> Result<Vec<Belief>, HarnessError> {
    config.validate()?;
    let track = config.track.build(&config.planner)?;
    let (_, belief) = initial_state(config, &track)?;
    let mut ekf = Ekf::new(belief, &config.estimator);
    let ratio = config.control_ratio();
    let mut out = Vec::new();
    let mut next = 0;
    let mut k = 0usize;
    loop {
        let t = k as f64 / config.plant_rate;
        if t > t_end + 1e-9 {
            break;
        }
        let start = next;
        while next < measurements.len() && measurements[next].t <= t {
            next += 1;
        }
        ekf.fuse_step(&measurements[start..next], t)?;
        if k % ratio == 0 {
            out.push(ekf.belief().clone());
        }
        k += 1;
    }
    Ok(out)
}

/// Reads the `t` and mean columns of a belief log.
pub fn read_belief_csv(text: &str) -> Result<Vec<[f64; 7]>, HarnessError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .take(7)
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| HarnessError::Config(format!("belief log line {}: not numeric", i + 1)))?;
        let row: [f64; 7] = fields
            .try_into()
            .map_err(|_| HarnessError::Config(format!("belief log line {}: too few columns", i + 1)))?;
        out.push(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run_episode;
    use crate::sensors::parse_log;

    fn short_run() -> EpisodeLog {
        let mut c = EpisodeConfig::default();
        c.apply_override("episode.duration=8").unwrap();
        c.apply_override("episode.seed=11").unwrap();
        run_episode(&c).unwrap()
    }

    #[test]
    fn replay_reproduces_beliefs() {
        let log = short_run();
        let t_end = log.telemetry.last().unwrap().t;
        let text = write_log(&log.measurements);
        let parsed = parse_log(&text).unwrap();
        let replayed = replay_beliefs(&log.config, &parsed, t_end).unwrap();
        assert_eq!(replayed.len(), log.beliefs.len());
        for (a, b) in replayed.iter().zip(&log.beliefs) {
            assert!((a.mean - b.mean).amax() <= 1e-9);
            assert!((a.cov - b.cov).amax() <= 1e-9);
        }
    }

    #[test]
    fn run_directory_is_complete() {
        let log = short_run();
        let dir = tempfile::tempdir().unwrap();
        write_run(&log, dir.path()).unwrap();
        for name in [
            "config.ini",
            "measurements.csv",
            "belief.csv",
            "telemetry.csv",
            "control.csv",
            "events.csv",
            "cones.csv",
            "map_red.pgm",
            "map_blue.pgm",
            "metrics.csv",
            "README.md",
        ] {
            assert!(dir.path().join(name).is_file(), "{name}");
        }
        let config = EpisodeConfig::load(&dir.path().join("config.ini")).unwrap();
        assert_eq!(config, log.config);
        let beliefs = read_belief_csv(&fs::read_to_string(dir.path().join("belief.csv")).unwrap()).unwrap();
        assert_eq!(beliefs.len(), log.beliefs.len());
        assert_eq!(beliefs[3][1], log.beliefs[3].mean[0]);
        let telemetry = fs::read_to_string(dir.path().join("telemetry.csv")).unwrap();
        assert_eq!(telemetry.lines().count(), log.telemetry.len() + 1);
        // lap 1 never finished: metric fields are empty
        let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(metrics.lines().nth(1).unwrap(), "mpc,11,timeout,,,,,,0");
    }
}
