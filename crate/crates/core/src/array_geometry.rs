//! Square uniform planar arrays and their element pattern.
//!
//! Elements are indexed `-N..=N` along both transverse axes. The flat element
//! index is row-major with `i` (the x index) outer and `j` (the y index) inner:
//! `flat = (i + N) * (2N + 1) + (j + N)`. Every matrix in this crate that is
//! indexed by antenna element uses this ordering.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Direction an array faces along the propagation axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boresight {
    PlusZ,
    MinusZ,
}

impl Boresight {
    pub fn unit(self) -> Vector3<f64> {
        match self {
            Boresight::PlusZ => Vector3::z(),
            Boresight::MinusZ => -Vector3::z(),
        }
    }

    pub fn mirrored(self) -> Self {
        match self {
            Boresight::PlusZ => Boresight::MinusZ,
            Boresight::MinusZ => Boresight::PlusZ,
        }
    }
}

/// A square `(2N+1) x (2N+1)` array in a plane of constant `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    half_index: usize,
    spacing: f64,
    z_position: f64,
    boresight: Boresight,
}

impl ArraySpec {
    pub fn new(half_index: usize, spacing: f64, z_position: f64, boresight: Boresight) -> Result<Self> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::input(format!("array spacing must be positive, got {spacing}")));
        }
        if !z_position.is_finite() {
            return Err(Error::input("array z position must be finite"));
        }
        Ok(Self { half_index, spacing, z_position, boresight })
    }

    /// Transmit array, facing `+z`.
    pub fn transmitter(half_index: usize, spacing: f64, z_position: f64) -> Result<Self> {
        Self::new(half_index, spacing, z_position, Boresight::PlusZ)
    }

    /// Receive array, facing `-z`.
    pub fn receiver(half_index: usize, spacing: f64, z_position: f64) -> Result<Self> {
        Self::new(half_index, spacing, z_position, Boresight::MinusZ)
    }

    pub fn half_index(&self) -> usize {
        self.half_index
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn z_position(&self) -> f64 {
        self.z_position
    }

    pub fn boresight(&self) -> Boresight {
        self.boresight
    }

    pub fn per_axis(&self) -> usize {
        2 * self.half_index + 1
    }

    pub fn element_count(&self) -> usize {
        self.per_axis() * self.per_axis()
    }

    /// Half-width `a = N * spacing` of the aperture, measured to the outermost element.
    pub fn aperture_half_width(&self) -> f64 {
        self.half_index as f64 * self.spacing
    }

    /// Signed element indices `-N..=N`.
    pub fn indices(&self) -> impl Iterator<Item = i64> + Clone {
        let n = self.half_index as i64;
        -n..=n
    }

    /// Transverse coordinate of signed index `i`.
    pub fn coordinate(&self, i: i64) -> f64 {
        i as f64 * self.spacing
    }
}

/// Element positions in canonical (row-major, x outer) order.
pub fn build_array(spec: &ArraySpec) -> Vec<Point3<f64>> {
    let z = spec.z_position();
    spec.indices()
        .flat_map(|i| spec.indices().map(move |j| (i, j)))
        .map(|(i, j)| Point3::new(spec.coordinate(i), spec.coordinate(j), z))
        .collect()
}

pub const DEFAULT_MAX_GAIN_DBI: f64 = 8.0;
pub const DEFAULT_ROLLOFF_DEG: f64 = 65.0;
pub const DEFAULT_FLOOR_DB: f64 = 30.0;

/// Per-element power pattern.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ElementPattern {
    #[default]
    Isotropic,
    /// `G(θ) = max_gain − min(12 (θ/rolloff)², floor)` in dB.
    Directional {
        max_gain_dbi: f64,
        rolloff_deg: f64,
        floor_db: f64,
    },
}

impl ElementPattern {
    pub fn directional() -> Self {
        ElementPattern::Directional {
            max_gain_dbi: DEFAULT_MAX_GAIN_DBI,
            rolloff_deg: DEFAULT_ROLLOFF_DEG,
            floor_db: DEFAULT_FLOOR_DB,
        }
    }
}

/// Linear power gain at `angle` radians off boresight.
pub fn element_gain(pattern: &ElementPattern, angle: f64) -> Result<f64> {
    if !(0.0..=std::f64::consts::PI).contains(&angle) {
        return Err(Error::input(format!("off-boresight angle {angle} outside [0, pi]")));
    }
    match *pattern {
        ElementPattern::Isotropic => Ok(1.0),
        ElementPattern::Directional { max_gain_dbi, rolloff_deg, floor_db } => {
            let ratio = angle.to_degrees() / rolloff_deg;
            let attenuation = (12.0 * ratio * ratio).min(floor_db);
            Ok(10f64.powf((max_gain_dbi - attenuation) / 10.0))
        }
    }
}

/// Distance and off-boresight angles for one transmitter/receiver element pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairGeometry {
    pub distance: f64,
    pub tx_angle: f64,
    pub rx_angle: f64,
}

fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    // atan2 keeps precision for the sub-degree angles of long links
    a.cross(b).norm().atan2(a.dot(b))
}

pub fn pair_geometry(
    tx: &Point3<f64>,
    tx_boresight: Boresight,
    rx: &Point3<f64>,
    rx_boresight: Boresight,
) -> Result<PairGeometry> {
    let ray = rx - tx;
    let distance = ray.norm();
    if distance == 0.0 {
        return Err(Error::Singularity("transmitter and receiver elements coincide".into()));
    }
    Ok(PairGeometry {
        distance,
        tx_angle: angle_between(&ray, &tx_boresight.unit()),
        rx_angle: angle_between(&(-ray), &rx_boresight.unit()),
    })
}
