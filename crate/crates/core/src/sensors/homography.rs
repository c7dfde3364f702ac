//! Pixel to ground-plane projective mapping.
//!
//! Points are row vectors: `[x', y', w'] = [u, v, 1] · A`, so the bottom row
//! of `A` carries the translation and the last column the perspective terms.

use nalgebra::Matrix3;

use super::SensorError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    a: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            a: Matrix3::identity(),
        }
    }

    /// Wraps a row-convention matrix as is.
    pub fn from_row_matrix(a: Matrix3<f64>) -> Result<Self, SensorError> {
        let det = a.determinant();
        if !det.is_finite() || det.abs() < 1e-15 * a.norm().powi(3) {
            return Err(SensorError::Degenerate("homography matrix is singular".into()));
        }
        Ok(Self { a })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.a
    }

    /// Fits the homography taking four pixel points onto four ground points.
    pub fn estimate(pixels: &[[f64; 2]; 4], ground: &[[f64; 2]; 4]) -> Result<Self, SensorError> {
        let from = square_to_quad(pixels)?;
        let to = square_to_quad(ground)?;
        let inv = from
            .try_inverse()
            .ok_or_else(|| SensorError::Degenerate("pixel quad not invertible".into()))?;
        // column form maps pixel -> unit square -> ground; transpose to row form
        let a = (to * inv).transpose();
        let a33 = a[(2, 2)];
        if a33.abs() < 1e-12 * a.norm() {
            return Err(SensorError::Degenerate(
                "pixel origin maps to infinity; cannot normalize".into(),
            ));
        }
        Self::from_row_matrix(a / a33)
    }

    /// Maps a pixel to its ground point.
    pub fn apply(&self, pixel: [f64; 2]) -> Result<[f64; 2], SensorError> {
        let a = &self.a;
        let (u, v) = (pixel[0], pixel[1]);
        let x = u * a[(0, 0)] + v * a[(1, 0)] + a[(2, 0)];
        let y = u * a[(0, 1)] + v * a[(1, 1)] + a[(2, 1)];
        let w = u * a[(0, 2)] + v * a[(1, 2)] + a[(2, 2)];
        if !(w.abs() > 1e-12 * x.abs().max(y.abs())) {
            return Err(SensorError::Projection { u, v });
        }
        Ok([x / w, y / w])
    }

    pub fn inverse(&self) -> Result<Self, SensorError> {
        let inv = self
            .a
            .try_inverse()
            .ok_or_else(|| SensorError::Degenerate("homography not invertible".into()))?;
        Self::from_row_matrix(inv)
    }
}

fn check_general_position(q: &[[f64; 2]; 4]) -> Result<(), SensorError> {
    let scale = q
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
        let cross = (q[j][0] - q[i][0]) * (q[k][1] - q[i][1])
            - (q[j][1] - q[i][1]) * (q[k][0] - q[i][0]);
        if !(cross.abs() > 1e-10 * scale * scale) {
            return Err(SensorError::Degenerate(format!(
                "points {i}, {j}, {k} are collinear"
            )));
        }
    }
    Ok(())
}

/// Column-form projective map from the unit square corners
/// (0,0), (1,0), (1,1), (0,1) onto `q` in that order.
fn square_to_quad(q: &[[f64; 2]; 4]) -> Result<Matrix3<f64>, SensorError> {
    check_general_position(q)?;
    let [[x0, y0], [x1, y1], [x2, y2], [x3, y3]] = *q;
    let sx = x0 - x1 + x2 - x3;
    let sy = y0 - y1 + y2 - y3;
    let (g, h) = if sx == 0.0 && sy == 0.0 {
        (0.0, 0.0)
    } else {
        let dx1 = x1 - x2;
        let dx2 = x3 - x2;
        let dy1 = y1 - y2;
        let dy2 = y3 - y2;
        let den = dx1 * dy2 - dx2 * dy1;
        ((sx * dy2 - dx2 * sy) / den, (dx1 * sy - sx * dy1) / den)
    };
    Ok(Matrix3::new(
        x1 - x0 + g * x1,
        x3 - x0 + h * x3,
        x0,
        y1 - y0 + g * y1,
        y3 - y0 + h * y3,
        y0,
        g,
        h,
        1.0,
    ))
}
