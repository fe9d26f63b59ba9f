//! Canonical 3D keypoint model of a traffic cone.
//!
//! The model frame sits at the center of the cone base with z up. Both arms
//! lie in the x-z plane: the left arm descends towards -x, the right arm
//! towards +x. Keypoint order (1-based): 1 apex; 2, 3 left stripe boundaries
//! top to bottom; 4 left base corner; 5, 6 right stripe boundaries; 7 right
//! base corner.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cross_ratio, point_line_distance};

pub const NUM_KEYPOINTS: usize = 7;

/// Cross-ratio of each cone arm measured on a physical cone.
pub const CR3D: f64 = 1.39408;

pub const CONE_HEIGHT: f64 = 0.325;
pub const CONE_BASE_HALF_WIDTH: f64 = 0.114;

/// Line parameter (apex = 0, base corner = 1) of the upper stripe boundary.
pub const UPPER_STRIPE_T: f64 = 0.4;

/// Zero-based keypoint indices of the two arms. Both start at the apex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArmIndexing {
    pub left: [usize; 4],
    pub right: [usize; 4],
}

pub const ARMS: ArmIndexing = ArmIndexing {
    left: [0, 1, 2, 3],
    right: [0, 4, 5, 6],
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorClass {
    Blue,
    Yellow,
    Orange,
}

impl ColorClass {
    pub const ALL: [ColorClass; 3] = [ColorClass::Blue, ColorClass::Yellow, ColorClass::Orange];

    pub fn as_str(self) -> &'static str {
        match self {
            ColorClass::Blue => "blue",
            ColorClass::Yellow => "yellow",
            ColorClass::Orange => "orange",
        }
    }
}

impl fmt::Display for ColorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ColorClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blue" => Ok(ColorClass::Blue),
            "yellow" => Ok(ColorClass::Yellow),
            "orange" => Ok(ColorClass::Orange),
            other => Err(Error::format("color class", other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeModel {
    pub keypoints: [Point3<f64>; NUM_KEYPOINTS],
    pub color_class: ColorClass,
    pub cr3d: f64,
}

/// Line parameter `b` of the lower stripe boundary such that an arm with
/// points at `{0, a, b, 1}` has cross-ratio `cr`: solves `b (1 - a) / (b - a) = cr`.
pub fn lower_stripe_parameter(a: f64, cr: f64) -> f64 {
    cr * a / (cr - 1.0 + a)
}

/// Cone model with small-cone proportions whose arms reproduce [`CR3D`].
pub fn default_cone_model() -> ConeModel {
    cone_model_with(ColorClass::Orange, CR3D)
}

pub fn cone_model_with(color_class: ColorClass, cr3d: f64) -> ConeModel {
    let apex = Point3::new(0.0, 0.0, CONE_HEIGHT);
    let left = Point3::new(-CONE_BASE_HALF_WIDTH, 0.0, 0.0);
    let right = Point3::new(CONE_BASE_HALF_WIDTH, 0.0, 0.0);
    let a = UPPER_STRIPE_T;
    let b = lower_stripe_parameter(a, cr3d);
    let along = |end: &Point3<f64>, t: f64| apex + (end - apex) * t;
    ConeModel {
        keypoints: [
            apex,
            along(&left, a),
            along(&left, b),
            left,
            along(&right, a),
            along(&right, b),
            right,
        ],
        color_class,
        cr3d,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    ApexNotMaximal,
    BaseCornerOffGround { index: usize },
    ArmNotCollinear { arm: &'static str },
    ArmCrossRatioMismatch { arm: &'static str },
    NonFinite,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ApexNotMaximal => f.write_str("apex not maximal"),
            Violation::BaseCornerOffGround { index } => {
                write!(f, "base corner {} not at z = 0", index + 1)
            }
            Violation::ArmNotCollinear { arm } => write!(f, "{arm} arm not collinear"),
            Violation::ArmCrossRatioMismatch { arm } => {
                write!(f, "{arm} arm cross-ratio mismatch")
            }
            Violation::NonFinite => f.write_str("non-finite coordinate"),
        }
    }
}

impl ConeModel {
    pub fn arm(&self, indices: &[usize; 4]) -> [Point3<f64>; 4] {
        indices.map(|i| self.keypoints[i])
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let kp = &self.keypoints;
        if kp.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) || !self.cr3d.is_finite() {
            out.push(Violation::NonFinite);
            return out;
        }
        if kp[1..].iter().any(|p| p.z >= kp[0].z) {
            out.push(Violation::ApexNotMaximal);
        }
        for index in [3, 6] {
            if kp[index].z.abs() > 1e-12 {
                out.push(Violation::BaseCornerOffGround { index });
            }
        }
        for (name, idx) in [("left", ARMS.left), ("right", ARMS.right)] {
            let arm = self.arm(&idx);
            if arm[1..3]
                .iter()
                .any(|p| point_line_distance(p, &arm[0], &arm[3]) > 1e-9)
            {
                out.push(Violation::ArmNotCollinear { arm: name });
            }
            match cross_ratio(&arm[0], &arm[1], &arm[2], &arm[3]) {
                Ok(cr) if (cr - self.cr3d).abs() <= 1e-6 => {}
                _ => out.push(Violation::ArmCrossRatioMismatch { arm: name }),
            }
        }
        out
    }

    pub fn to_toml(&self) -> String {
        let file = ConeModelFile {
            color_class: self.color_class,
            cr3d: self.cr3d,
            keypoints: self
                .keypoints
                .iter()
                .enumerate()
                .map(|(i, p)| ((i + 1).to_string(), [p.x, p.y, p.z]))
                .collect(),
        };
        toml::to_string(&file).expect("cone model serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ConeModelFile =
            toml::from_str(text).map_err(|e| Error::format("cone model", e.to_string()))?;
        let mut keypoints = [Point3::origin(); NUM_KEYPOINTS];
        let mut seen = [false; NUM_KEYPOINTS];
        for (key, xyz) in &file.keypoints {
            let index: usize = key
                .parse()
                .ok()
                .filter(|i| (1..=NUM_KEYPOINTS).contains(i))
                .ok_or_else(|| Error::format("cone model", format!("bad keypoint key {key:?}")))?;
            keypoints[index - 1] = Point3::new(xyz[0], xyz[1], xyz[2]);
            seen[index - 1] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::format(
                "cone model",
                format!("keypoint {} missing", missing + 1),
            ));
        }
        Ok(ConeModel {
            keypoints,
            color_class: file.color_class,
            cr3d: file.cr3d,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct ConeModelFile {
    color_class: ColorClass,
    cr3d: f64,
    keypoints: BTreeMap<String, [f64; 3]>,
}
