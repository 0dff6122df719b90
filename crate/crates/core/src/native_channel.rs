//! Antenna-domain channel: link budget, Friis coefficients and the SVD.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::svd::ComputeSvdVectors;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::array_geometry::{build_array, element_gain, pair_geometry, ArraySpec, ElementPattern};
use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Reference noise temperature in kelvin.
pub const REFERENCE_TEMPERATURE: f64 = 290.0;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * (watts * 1e3).log10()
}

/// Carrier, bandwidth, power and noise parameters of the link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    carrier_frequency: f64,
    wavelength: f64,
    bandwidth: f64,
    tx_power_dbm: f64,
    noise_figure_db: f64,
    distance: f64,
    speed_of_light: f64,
}

impl LinkBudget {
    /// Builds a link with `λ = c / f` for the standard speed of light.
    pub fn new(
        carrier_frequency: f64,
        bandwidth: f64,
        tx_power_dbm: f64,
        noise_figure_db: f64,
        distance: f64,
    ) -> Result<Self> {
        Self::with_speed_of_light(
            carrier_frequency,
            bandwidth,
            tx_power_dbm,
            noise_figure_db,
            distance,
            SPEED_OF_LIGHT,
        )
    }

    pub fn with_speed_of_light(
        carrier_frequency: f64,
        bandwidth: f64,
        tx_power_dbm: f64,
        noise_figure_db: f64,
        distance: f64,
        speed_of_light: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("carrier_frequency", carrier_frequency),
            ("bandwidth", bandwidth),
            ("distance", distance),
            ("speed_of_light", speed_of_light),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::input(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !tx_power_dbm.is_finite() || !noise_figure_db.is_finite() {
            return Err(Error::input("tx power and noise figure must be finite"));
        }
        Ok(Self {
            carrier_frequency,
            wavelength: speed_of_light / carrier_frequency,
            bandwidth,
            tx_power_dbm,
            noise_figure_db,
            distance,
            speed_of_light,
        })
    }

    /// Pins the wavelength exactly; the stored speed of light becomes `λ·f`.
    pub fn with_wavelength(mut self, wavelength: f64) -> Result<Self> {
        if !(wavelength.is_finite() && wavelength > 0.0) {
            return Err(Error::input(format!("wavelength must be positive, got {wavelength}")));
        }
        self.wavelength = wavelength;
        self.speed_of_light = wavelength * self.carrier_frequency;
        Ok(self)
    }

    /// 60 GHz, 2 GHz bandwidth, −20 dBm, 8 dB noise figure, 15 m, λ = 5 mm.
    pub fn reference() -> Self {
        Self::new(60e9, 2e9, -20.0, 8.0, 15.0)
            .and_then(|l| l.with_wavelength(0.005))
            .expect("reference link is valid")
    }

    pub fn carrier_frequency(&self) -> f64 {
        self.carrier_frequency
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn tx_power_dbm(&self) -> f64 {
        self.tx_power_dbm
    }

    pub fn tx_power_watts(&self) -> f64 {
        dbm_to_watts(self.tx_power_dbm)
    }

    pub fn noise_figure_db(&self) -> f64 {
        self.noise_figure_db
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn speed_of_light(&self) -> f64 {
        self.speed_of_light
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoisePower {
    pub watts: f64,
    pub dbm: f64,
}

/// Thermal noise `k_B T₀ B F` over the link bandwidth.
pub fn noise_power(link: &LinkBudget) -> NoisePower {
    let watts =
        BOLTZMANN * REFERENCE_TEMPERATURE * link.bandwidth() * 10f64.powf(link.noise_figure_db() / 10.0);
    NoisePower { watts, dbm: watts_to_dbm(watts) }
}

/// Free-space amplitude `λ/(4πd) √(g_t g_r) e^{−j2πd/λ}`.
pub fn friis_coefficient(wavelength: f64, distance: f64, g_tx: f64, g_rx: f64) -> Result<Complex64> {
    if distance == 0.0 {
        return Err(Error::Singularity("zero transmitter/receiver separation".into()));
    }
    if distance.is_nan() || wavelength.is_nan() || distance <= 0.0 || wavelength <= 0.0 {
        return Err(Error::input("distance and wavelength must be positive"));
    }
    let amplitude = wavelength / (4.0 * PI * distance) * (g_tx * g_rx).sqrt();
    // reduce to a fractional cycle before scaling by 2π
    let cycles = (distance / wavelength).rem_euclid(1.0);
    Ok(Complex64::from_polar(amplitude, -2.0 * PI * cycles))
}

/// Channel matrix `H` with rows indexed by receive elements and columns by
/// transmit elements, both in canonical array order.
#[derive(Debug, Clone)]
pub struct NativeChannel {
    pub matrix: DMatrix<Complex64>,
    pub tx: ArraySpec,
    pub rx: ArraySpec,
}

pub fn build_native_channel(
    tx: &ArraySpec,
    rx: &ArraySpec,
    link: &LinkBudget,
    pattern: &ElementPattern,
) -> Result<NativeChannel> {
    let tx_pos = build_array(tx);
    let rx_pos = build_array(rx);
    let wavelength = link.wavelength();

    let rows: Vec<Vec<Complex64>> = rx_pos
        .par_iter()
        .map(|r| {
            tx_pos
                .iter()
                .map(|t| {
                    let g = pair_geometry(t, tx.boresight(), r, rx.boresight())?;
                    let g_tx = element_gain(pattern, g.tx_angle)?;
                    let g_rx = element_gain(pattern, g.rx_angle)?;
                    friis_coefficient(wavelength, g.distance, g_tx, g_rx)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let matrix = DMatrix::from_fn(rx_pos.len(), tx_pos.len(), |r, t| rows[r][t]);
    Ok(NativeChannel { matrix, tx: *tx, rx: *rx })
}

/// Thin SVD `H = U diag(s) Vᴴ` with descending `s`.
///
/// Each column of `V` is rotated so that its largest-magnitude entry is real
/// and positive; `U` absorbs the same rotation.
#[derive(Debug, Clone)]
pub struct SingularTriple {
    pub u: DMatrix<Complex64>,
    pub s: DVector<f64>,
    pub v: DMatrix<Complex64>,
}

impl SingularTriple {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> DMatrix<Complex64> {
        let mut us = self.u.clone();
        for (k, mut col) in us.column_iter_mut().enumerate() {
            col *= Complex64::from(self.s[k]);
        }
        us * self.v.adjoint()
    }
}

pub fn decompose(channel: &NativeChannel) -> Result<SingularTriple> {
    svd(&channel.matrix)
}

/// Relative magnitude within which entries count as tied for the phase anchor.
const PHASE_ANCHOR_TIE: f64 = 1e-6;

pub fn svd(matrix: &DMatrix<Complex64>) -> Result<SingularTriple> {
    if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::input("matrix has non-finite entries"));
    }
    let (m, n) = matrix.shape();
    let r = m.min(n);
    if r == 0 {
        return Ok(SingularTriple {
            u: DMatrix::zeros(m, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(n, 0),
        });
    }
    let a = faer::Mat::<Complex64>::from_fn(m, n, |i, j| matrix[(i, j)]);
    let mut fu = faer::Mat::<Complex64>::zeros(m, r);
    let mut fv = faer::Mat::<Complex64>::zeros(n, r);
    let mut fs = faer::diag::Diag::<Complex64>::zeros(r);
    // sequential so repeated runs are bitwise identical
    let par = faer::Par::Seq;
    let thin = ComputeSvdVectors::Thin;
    let mut buf = MemBuffer::new(faer::linalg::svd::svd_scratch::<Complex64>(m, n, thin, thin, par, Default::default()));
    faer::linalg::svd::svd(
        a.as_ref(),
        fs.as_mut(),
        Some(fu.as_mut()),
        Some(fv.as_mut()),
        par,
        MemStack::new(&mut buf),
        Default::default(),
    )
    .map_err(|e| Error::Numerical {
        stage: "svd".into(),
        message: format!("SVD did not converge: {e:?}"),
    })?;
    let fs = fs.column_vector();
    let u_raw = DMatrix::from_fn(m, r, |i, j| fu[(i, j)]);
    let v_raw = DMatrix::from_fn(n, r, |i, j| fv[(i, j)]);
    let sigma: Vec<f64> = (0..r).map(|k| fs[k].re).collect();

    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));

    let mut u = DMatrix::zeros(m, r);
    let mut v = DMatrix::zeros(n, r);
    let mut s = DVector::zeros(r);
    for (k, &src) in order.iter().enumerate() {
        s[k] = sigma[src];
        let vc = v_raw.column(src);
        let peak = vc.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let anchor = vc
            .iter()
            .find(|z| z.norm() >= peak * (1.0 - PHASE_ANCHOR_TIE))
            .copied()
            .unwrap_or(Complex64::new(1.0, 0.0));
        let rot = if anchor.norm() > 0.0 {
            Complex64::from_polar(1.0, -anchor.arg())
        } else {
            Complex64::new(1.0, 0.0)
        };
        v.set_column(k, &(vc * rot));
        u.set_column(k, &(u_raw.column(src) * rot));
    }
    Ok(SingularTriple { u, s, v })
}
