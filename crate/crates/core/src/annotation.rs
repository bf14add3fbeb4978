//! The annotation record: one image, its control points and reference lattice.
//!
//! ```json
//! {"version": 1, "image": "sample_00000.png", "image_size": [992, 992],
//!  "grid": {"rows": 61, "cols": 61},
//!  "control_points": [[x, y], ...],
//!  "reference": {"v_interval": 12.5, "h_interval": 12.5, "origin": [x, y]},
//!  "provenance": {"seed": 7, "source": "scan_001"}}
//! ```
//!
//! Points are row-major, in pixels. `provenance` is optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{ControlGrid, Error, Point2, ReferenceSpec, Result};

pub const ANNOTATION_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub v_interval: f64,
    pub h_interval: f64,
    pub origin: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub version: u32,
    pub image: String,
    pub image_size: [u32; 2],
    pub grid: GridShape,
    pub control_points: Vec<[f64; 2]>,
    pub reference: ReferenceRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl AnnotationRecord {
    pub fn new(
        image: impl Into<String>,
        image_size: (u32, u32),
        control: &ControlGrid,
        reference: &ReferenceSpec,
        provenance: Option<Provenance>,
    ) -> Result<Self> {
        let record = Self {
            version: ANNOTATION_VERSION,
            image: image.into(),
            image_size: [image_size.0, image_size.1],
            grid: GridShape {
                rows: control.rows(),
                cols: control.cols(),
            },
            control_points: control.points().iter().map(|&p| p.into()).collect(),
            reference: ReferenceRecord {
                v_interval: reference.v_interval,
                h_interval: reference.h_interval,
                origin: reference.origin.into(),
            },
            provenance,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != ANNOTATION_VERSION {
            return Err(Error::InvalidAnnotation(format!("unsupported version {}", self.version)));
        }
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return Err(Error::InvalidAnnotation("image_size must be positive".into()));
        }
        self.control_grid()?;
        self.reference_spec()?;
        Ok(())
    }

    pub fn control_grid(&self) -> Result<ControlGrid> {
        ControlGrid::new(
            self.grid.rows,
            self.grid.cols,
            self.control_points.iter().map(|&p| Point2::from(p)).collect(),
        )
    }

    pub fn reference_spec(&self) -> Result<ReferenceSpec> {
        ReferenceSpec::new(
            self.reference.v_interval,
            self.reference.h_interval,
            self.reference.origin.into(),
            self.grid.rows,
            self.grid.cols,
        )
    }

    pub fn image_size(&self) -> (u32, u32) {
        (self.image_size[0], self.image_size[1])
    }

    /// Replaces the control points, keeping the grid shape.
    pub fn with_control(&self, control: &ControlGrid) -> Result<Self> {
        if control.rows() != self.grid.rows || control.cols() != self.grid.cols {
            return Err(Error::ShapeMismatch(format!(
                "annotation grid is {}x{}, got {}x{}",
                self.grid.rows,
                self.grid.cols,
                control.rows(),
                control.cols()
            )));
        }
        Ok(Self {
            control_points: control.points().iter().map(|&p| p.into()).collect(),
            ..self.clone()
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: Self = serde_json::from_str(text)?;
        record.validate()?;
        Ok(record)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotation serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_pretty()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::build_reference_grid;

    fn sample() -> AnnotationRecord {
        let spec = ReferenceSpec::new(10.0, 12.5, Point2::new(3.0, 4.0), 3, 2).unwrap();
        let grid = build_reference_grid(&spec).unwrap();
        AnnotationRecord::new(
            "a.png",
            (40, 50),
            &grid,
            &spec,
            Some(Provenance {
                seed: 9,
                source: "scan".into(),
            }),
        )
        .unwrap()
    }

    #[test]
    fn json_shape() {
        let v: serde_json::Value = serde_json::to_value(sample()).unwrap();
        assert_eq!(v["version"], 1);
        assert_eq!(v["grid"]["rows"], 3);
        assert_eq!(v["control_points"][1], serde_json::json!([15.5, 4.0]));
        assert_eq!(v["reference"]["origin"], serde_json::json!([3.0, 4.0]));
        assert_eq!(v["provenance"]["seed"], 9);
        assert_eq!(v["image_size"], serde_json::json!([40, 50]));
    }

    #[test]
    fn round_trip() {
        let r = sample();
        assert_eq!(AnnotationRecord::from_json(&r.to_json_pretty()).unwrap(), r);
        let mut bare = r.clone();
        bare.provenance = None;
        let text = serde_json::to_string(&bare).unwrap();
        assert!(!text.contains("provenance"));
        assert_eq!(AnnotationRecord::from_json(&text).unwrap(), bare);
    }

    #[test]
    fn validation() {
        let mut r = sample();
        r.control_points.pop();
        assert!(r.validate().is_err());
        let mut r = sample();
        r.reference.v_interval = 0.0;
        assert!(r.validate().is_err());
        let mut r = sample();
        r.grid.rows = 1;
        assert!(r.validate().is_err());
        assert!(AnnotationRecord::from_json("{\"version\": 1}").is_err());
    }
}
