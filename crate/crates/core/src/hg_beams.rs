//! Hermite–Gaussian beam modes.
//!
//! Conventions: the focal plane is `z = 0`, the carrier phase is `e^{−jkz}`,
//! the Gouy phase enters as `e^{+j(1+l+m)·atan(z/Z_R)}`, and the wavefront
//! curvature is carried as `1/R(z)` so the focal plane needs no special case.
//! With `ξ = √2 x / w(z)` the mode factorizes as
//! `HG_{l,m} = (√2 / w) φ_l(ξ) φ_m(η) · phases`, where `φ_n` is the
//! normalized Hermite function; this is unit-norm over the infinite plane.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};
use crate::quadrature;

/// Mode pair `(l, m)`: `l` orders the x profile, `m` the y profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeIndex {
    pub l: usize,
    pub m: usize,
}

impl ModeIndex {
    pub const fn new(l: usize, m: usize) -> Self {
        Self { l, m }
    }

    /// The frontier the mode belongs to, `max(l, m)`.
    pub fn frontier(&self) -> usize {
        self.l.max(self.m)
    }

    pub fn order(&self) -> usize {
        self.l + self.m
    }

    pub fn transposed(&self) -> Self {
        Self { l: self.m, m: self.l }
    }
}

impl std::fmt::Display for ModeIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.l, self.m)
    }
}

/// Waist, wavelength and the two array planes of a beam family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamParameters {
    waist: f64,
    wavelength: f64,
    z_tx: f64,
    z_rx: f64,
    rayleigh: f64,
}

impl BeamParameters {
    pub fn new(waist: f64, wavelength: f64, z_tx: f64, z_rx: f64) -> Result<Self> {
        if !(waist.is_finite() && waist > 0.0) {
            return Err(Error::input(format!("beam waist must be positive, got {waist}")));
        }
        if !(wavelength.is_finite() && wavelength > 0.0) {
            return Err(Error::input(format!("wavelength must be positive, got {wavelength}")));
        }
        if !(z_tx.is_finite() && z_rx.is_finite()) {
            return Err(Error::input("array planes must be finite"));
        }
        Ok(Self { waist, wavelength, z_tx, z_rx, rayleigh: PI * waist * waist / wavelength })
    }

    /// Arrays placed symmetrically about the focal plane, `−z_T = z_R = D/2`.
    pub fn symmetric(waist: f64, wavelength: f64, distance: f64) -> Result<Self> {
        if !(distance.is_finite() && distance > 0.0) {
            return Err(Error::input(format!("link distance must be positive, got {distance}")));
        }
        Self::new(waist, wavelength, -0.5 * distance, 0.5 * distance)
    }

    pub fn waist(&self) -> f64 {
        self.waist
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    pub fn z_tx(&self) -> f64 {
        self.z_tx
    }

    pub fn z_rx(&self) -> f64 {
        self.z_rx
    }

    /// Rayleigh distance `π w₀² / λ`.
    pub fn rayleigh(&self) -> f64 {
        self.rayleigh
    }
}

/// Raw physicists' polynomial `H_n(ξ)` and the normalized Hermite function
/// `φ_n(ξ) = H_n(ξ) e^{−ξ²/2} / √(2ⁿ n! √π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermiteValue {
    pub poly: f64,
    pub function: f64,
}

pub fn hermite_1d(n: usize, xi: f64) -> HermiteValue {
    let (mut h_prev, mut h) = (0.0, 1.0);
    for k in 0..n {
        let next = 2.0 * xi * h - 2.0 * k as f64 * h_prev;
        h_prev = h;
        h = next;
    }
    HermiteValue { poly: h, function: hermite_functions(n, xi)[n] }
}

/// `φ_0(ξ) ..= φ_n(ξ)` from the normalized three-term recurrence, which never
/// forms `2ⁿ n!`.
pub fn hermite_functions(n: usize, xi: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let phi0 = PI.powf(-0.25) * (-0.5 * xi * xi).exp();
    out.push(phi0);
    if n == 0 {
        return out;
    }
    out.push(SQRT_2 * xi * phi0);
    for k in 1..n {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * xi * out[k] - (kf / (kf + 1.0)).sqrt() * out[k - 1];
        out.push(next);
    }
    out
}

/// Beam radius, inverse curvature and Gouy base angle at one plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamGeometry {
    pub radius: f64,
    pub inverse_curvature: f64,
    pub gouy_base: f64,
}

impl BeamGeometry {
    /// Full Gouy phase `(1 + l + m) · atan(z / Z_R)`.
    pub fn gouy_phase(&self, mode: ModeIndex) -> f64 {
        (1 + mode.order()) as f64 * self.gouy_base
    }
}

pub fn beam_geometry(params: &BeamParameters, z: f64) -> BeamGeometry {
    let zr = params.rayleigh();
    BeamGeometry {
        radius: plane_radius(params.waist(), params.wavelength(), z),
        inverse_curvature: z / (z * z + zr * zr),
        gouy_base: (z / zr).atan(),
    }
}

/// Beam radius `w₀ √(1 + z²λ²/(π² w₀⁴))` at distance `z` from the focal plane.
pub fn plane_radius(waist: f64, wavelength: f64, z: f64) -> f64 {
    let zr = PI * waist * waist / wavelength;
    waist * (1.0 + (z / zr).powi(2)).sqrt()
}

/// Waist minimizing the beam radius at both arrays of a symmetric link:
/// `w₀* = √(λ z_R / π)` with `z_R = D/2`, which puts each array one Rayleigh
/// distance from the focus.
pub fn optimal_waist(wavelength: f64, distance: f64) -> Result<BeamParameters> {
    if !(wavelength.is_finite() && wavelength > 0.0 && distance.is_finite() && distance > 0.0) {
        return Err(Error::input("wavelength and distance must be positive"));
    }
    let z_rx = 0.5 * distance;
    let waist = (wavelength * z_rx / PI).sqrt();
    BeamParameters::symmetric(waist, wavelength, distance)
}

/// Complex field of mode `(l, m)` at `(x, y, z)`.
pub fn hg_field(mode: ModeIndex, x: f64, y: f64, z: f64, params: &BeamParameters) -> Complex64 {
    let geom = beam_geometry(params, z);
    let scale = SQRT_2 / geom.radius;
    let px = hermite_functions(mode.l, scale * x)[mode.l];
    let py = hermite_functions(mode.m, scale * y)[mode.m];
    field_from_profiles(mode, px, py, x * x + y * y, z, &geom, params.wavenumber())
}

/// Assembles the field from precomputed 1-D Hermite-function values.
pub(crate) fn field_from_profiles(
    mode: ModeIndex,
    phi_x: f64,
    phi_y: f64,
    r2: f64,
    z: f64,
    geom: &BeamGeometry,
    k: f64,
) -> Complex64 {
    let amplitude = SQRT_2 / geom.radius * phi_x * phi_y;
    let phase = -0.5 * k * r2 * geom.inverse_curvature + geom.gouy_phase(mode) - k * z;
    Complex64::from_polar(amplitude, phase)
}

/// Fraction of one normalized Hermite function's power inside `|ξ| ≤ b`.
pub fn axis_captured_power(order: usize, b: f64) -> f64 {
    // φ_n² is below 1e-40 past its turning point √(2n+1) plus ten
    let reach = (2.0 * order as f64 + 1.0).sqrt() + 10.0;
    let upper = b.min(reach);
    let half = quadrature::integrate(
        |xi| {
            let phi = hermite_functions(order, xi)[order];
            phi * phi
        },
        0.0,
        upper,
        1e-15,
    );
    (2.0 * half).clamp(0.0, 1.0)
}

/// Fraction of the unit power of `mode` falling inside the square aperture
/// `|x|, |y| ≤ a`, given the ratio `a / w` of half-width to beam radius.
pub fn captured_power(mode: ModeIndex, a_over_w: f64) -> Result<f64> {
    if a_over_w.is_nan() || a_over_w < 0.0 {
        return Err(Error::input(format!("a/w must be non-negative, got {a_over_w}")));
    }
    let b = SQRT_2 * a_over_w;
    Ok(axis_captured_power(mode.l, b) * axis_captured_power(mode.m, b))
}
