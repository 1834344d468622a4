use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_bytes, write_atomic};
use crate::camera::{Camera, Projection};
use crate::canonical::{Normalization, RigView};
use crate::error::{GeomError, Result};
use crate::math::{Mat3, Vec3};

/// JSON form of a camera: projection parameters tagged by `mode`, rotation
/// row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub azimuth_deg: Option<f64>,
    #[serde(flatten)]
    pub projection: Projection,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub width: usize,
    pub height: usize,
}

impl CameraRecord {
    pub fn from_camera(camera: &Camera, azimuth_deg: Option<f64>) -> Self {
        let r = &camera.rotation;
        Self {
            azimuth_deg,
            projection: camera.projection,
            rotation: std::array::from_fn(|i| r[(i / 3, i % 3)]),
            translation: [camera.translation.x, camera.translation.y, camera.translation.z],
            width: camera.width,
            height: camera.height,
        }
    }

    pub fn to_camera(&self) -> Result<Camera> {
        Camera::new(
            self.projection,
            Mat3::from_row_slice(&self.rotation),
            Vec3::from(self.translation),
            self.width,
            self.height,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct NormalizationRecord {
    center: [f64; 3],
    scale: f64,
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read_bytes(path)?).map_err(|e| GeomError::parse(path, e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn write_camera(path: &Path, camera: &Camera) -> Result<()> {
    write_json(path, &CameraRecord::from_camera(camera, None))
}

pub fn read_camera(path: &Path) -> Result<Camera> {
    parse_json::<CameraRecord>(path)?
        .to_camera()
        .map_err(|e| GeomError::parse(path, e.to_string()))
}

/// Rig file: a JSON array with one camera record per view.
pub fn write_rig(path: &Path, views: &[RigView]) -> Result<()> {
    let records: Vec<_> = views
        .iter()
        .map(|v| CameraRecord::from_camera(&v.camera, Some(v.azimuth_deg)))
        .collect();
    write_json(path, &records)
}

pub fn read_rig(path: &Path) -> Result<Vec<RigView>> {
    let records: Vec<CameraRecord> = parse_json(path)?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let camera = r.to_camera().map_err(|e| GeomError::parse(path, format!("view {i}: {e}")))?;
            let azimuth_deg = r
                .azimuth_deg
                .ok_or_else(|| GeomError::parse(path, format!("view {i} has no azimuth_deg")))?;
            Ok(RigView { azimuth_deg, camera })
        })
        .collect()
}

/// `{"center": [x, y, z], "scale": s}`.
pub fn write_normalization(path: &Path, n: &Normalization) -> Result<()> {
    write_json(
        path,
        &NormalizationRecord {
            center: [n.center.x, n.center.y, n.center.z],
            scale: n.scale,
        },
    )
}

pub fn read_normalization(path: &Path) -> Result<Normalization> {
    let r: NormalizationRecord = parse_json(path)?;
    if !(r.scale.is_finite() && r.scale > 0.0) || r.center.iter().any(|c| !c.is_finite()) {
        return Err(GeomError::parse(path, "normalization must be finite with a positive scale"));
    }
    Ok(Normalization {
        center: Vec3::from(r.center),
        scale: r.scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::build_rig;

    #[test]
    fn rig_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rig.json");
        let rig = build_rig(3.0, 64, 48).unwrap();
        write_rig(&p, &rig.views).unwrap();
        let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&p).unwrap()).unwrap();
        let arr = json.as_array().unwrap();
        assert_eq!(arr.len(), 6);
        assert_eq!(arr[0]["mode"], "orthographic");
        assert_eq!(arr[0]["rotation"].as_array().unwrap().len(), 9);
        let back = read_rig(&p).unwrap();
        for (a, b) in back.iter().zip(&rig.views) {
            assert_eq!(a.azimuth_deg, b.azimuth_deg);
            assert!((a.camera.rotation - b.camera.rotation).norm() < 1e-15);
            assert_eq!(a.camera.projection, b.camera.projection);
        }
    }

    #[test]
    fn perspective_camera_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cam.json");
        let cam = Camera::perspective(100.0, 110.0, 32.0, 24.0, Mat3::identity(), Vec3::new(0.0, 0.0, 3.0), 64, 48)
            .unwrap();
        write_camera(&p, &cam).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"fx\": 100.0"));
        assert_eq!(read_camera(&p).unwrap(), cam);
    }

    #[test]
    fn bad_camera_files_are_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cam.json");
        std::fs::write(&p, r#"{"mode":"orthographic","scale":10,"cx":1,"cy":1,"rotation":[2,0,0,0,1,0,0,0,1],"translation":[0,0,0],"width":2,"height":2}"#).unwrap();
        assert!(matches!(read_camera(&p), Err(GeomError::Parse { .. })));
        std::fs::write(&p, "[1, 2").unwrap();
        assert!(matches!(read_camera(&p), Err(GeomError::Parse { .. })));
    }

    #[test]
    fn normalization_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.json");
        let n = Normalization {
            center: Vec3::new(0.1, -0.2, 0.3),
            scale: 1.7,
        };
        write_normalization(&p, &n).unwrap();
        assert_eq!(read_normalization(&p).unwrap(), n);
    }
}
