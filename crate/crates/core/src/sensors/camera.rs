//! Pinhole camera looking at a flat ground plane.

use super::homography::Homography;
use super::SensorError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            focal: 400.0,
            cx: 320.0,
            cy: 240.0,
            width: 640.0,
            height: 480.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraMount {
    /// Forward offset of the optical center from the body origin.
    pub forward: f64,
    pub height: f64,
    /// Downward pitch of the optical axis.
    pub pitch: f64,
    pub fov: f64,
    pub max_range: f64,
}

impl Default for CameraMount {
    fn default() -> Self {
        Self {
            forward: 0.0,
            height: 1.0,
            pitch: 10f64.to_radians(),
            fov: 90f64.to_radians(),
            max_range: 15.0,
        }
    }
}

/// Camera with its calibrated pixel-to-ground homography.
#[derive(Debug, Clone, Copy)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub mount: CameraMount,
    homography: Homography,
}

/// Ground points used for calibration, body frame.
const CALIBRATION_POINTS: [[f64; 2]; 4] = [[4.0, -2.0], [4.0, 2.0], [12.0, 3.0], [12.0, -3.0]];

impl Camera {
    pub fn new(intrinsics: CameraIntrinsics, mount: CameraMount) -> Result<Self, SensorError> {
        let mut pixels = [[0.0; 2]; 4];
        for (k, g) in CALIBRATION_POINTS.iter().enumerate() {
            pixels[k] = project_raw(&intrinsics, &mount, *g).ok_or_else(|| {
                SensorError::Degenerate(format!("calibration point {g:?} not in front of camera"))
            })?;
        }
        let homography = Homography::estimate(&pixels, &CALIBRATION_POINTS)?;
        Ok(Self {
            intrinsics,
            mount,
            homography,
        })
    }

    pub fn homography(&self) -> &Homography {
        &self.homography
    }

    /// Pixel of a body-frame ground point, or `None` when outside the
    /// field of view, the image, or the range limit.
    pub fn project(&self, ground: [f64; 2]) -> Option<[f64; 2]> {
        let range = (ground[0] - self.mount.forward).hypot(ground[1]);
        if range > self.mount.max_range {
            return None;
        }
        let bearing = ground[1].atan2(ground[0] - self.mount.forward);
        if bearing.abs() > self.mount.fov / 2.0 {
            return None;
        }
        let px = project_raw(&self.intrinsics, &self.mount, ground)?;
        let inside = px[0] >= 0.0
            && px[0] <= self.intrinsics.width
            && px[1] >= 0.0
            && px[1] <= self.intrinsics.height;
        inside.then_some(px)
    }

    /// Ground point of a pixel through the calibrated homography.
    pub fn back_project(&self, pixel: [f64; 2]) -> Result<[f64; 2], SensorError> {
        self.homography.apply(pixel)
    }
}

fn project_raw(k: &CameraIntrinsics, m: &CameraMount, ground: [f64; 2]) -> Option<[f64; 2]> {
    let dx = ground[0] - m.forward;
    let dy = ground[1];
    let dz = -m.height;
    let (sp, cp) = m.pitch.sin_cos();
    let depth = dx * cp - dz * sp;
    if depth < 0.1 {
        return None;
    }
    let right = -dy;
    let down = -dx * sp - dz * cp;
    Some([k.cx + k.focal * right / depth, k.cy + k.focal * down / depth])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn camera() -> Camera {
        Camera::new(CameraIntrinsics::default(), CameraMount::default()).unwrap()
    }

    #[test]
    fn on_axis_cone_hits_center_column() {
        let c = camera();
        let p = c.project([7.0, 0.0]).unwrap();
        assert!((p[0] - 320.0).abs() < 1e-12);
        // at the distance where the optical axis meets the ground the row is centered too
        let d = 1.0 / 10f64.to_radians().tan();
        let p = c.project([d, 0.0]).unwrap();
        assert!((p[1] - 240.0).abs() < 1e-9);
    }

    #[test]
    fn mirrored_cones_mirror_columns() {
        let c = camera();
        let a = c.project([6.0, 1.5]).unwrap();
        let b = c.project([6.0, -1.5]).unwrap();
        assert!((a[0] - 320.0 + (b[0] - 320.0)).abs() < 1e-12);
        assert_eq!(a[1], b[1]);
        assert!(a[0] < 320.0);
    }

    #[test]
    fn behind_and_outside_fov_hidden() {
        let c = camera();
        assert!(c.project([-3.0, 0.0]).is_none());
        assert!(c.project([2.0, 5.0]).is_none());
        assert!(c.project([16.0, 0.0]).is_none());
    }

    proptest! {
        #[test]
        fn homography_recovers_ground_point(x in 2.5f64..14.0, y in -6.0f64..6.0) {
            let c = camera();
            if let Some(px) = c.project([x, y]) {
                let g = c.back_project(px).unwrap();
                prop_assert!((g[0] - x).abs() < 1e-6 && (g[1] - y).abs() < 1e-6);
            }
        }
    }
}
