//! Hermite–Gaussian beamspace on finite apertures.
//!
//! Modes are sampled at the element positions of an array, re-orthonormalized
//! over the aperture with modified Gram–Schmidt, and used as spatial filters
//! that compress the antenna-domain channel into `H_HG = Q_RXᴴ H Q_TX`.
//! The aperture inner product is the plain sum over elements.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::f64::consts::SQRT_2;

use crate::array_geometry::ArraySpec;
use crate::error::{Error, Result};
use crate::hg_beams::{beam_geometry, field_from_profiles, hermite_functions, BeamParameters, ModeIndex};
use crate::native_channel::{noise_power, svd, LinkBudget, NativeChannel, SingularTriple};

/// Relative residual norm below which a new column counts as degenerate.
pub const DEFAULT_DROP_TOL: f64 = 1e-8;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Modes of one frontier `max(l, m) = i`, swept
/// `(0,i), (1,i), …, (i,i), (i,i−1), …, (i,0)`.
pub fn frontier(i: usize) -> Vec<ModeIndex> {
    (0..=i)
        .map(|l| ModeIndex::new(l, i))
        .chain((0..i).rev().map(|m| ModeIndex::new(i, m)))
        .collect()
}

/// Modes ordered frontier by frontier; the prefix of length `(L+1)²` is
/// exactly the set with `max(l, m) ≤ L`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeOrdering {
    modes: Vec<ModeIndex>,
    frontier_starts: Vec<usize>,
}

impl ModeOrdering {
    pub fn modes(&self) -> &[ModeIndex] {
        &self.modes
    }

    pub fn frontier_starts(&self) -> &[usize] {
        &self.frontier_starts
    }

    pub fn l_max(&self) -> usize {
        self.frontier_starts.len() - 1
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Modes of frontier `i`, if present.
    pub fn frontier(&self, i: usize) -> Option<&[ModeIndex]> {
        let start = *self.frontier_starts.get(i)?;
        let end = self.frontier_starts.get(i + 1).copied().unwrap_or(self.modes.len());
        Some(&self.modes[start..end])
    }
}

pub fn canonical_mode_order(l_max: usize) -> ModeOrdering {
    let mut modes = Vec::with_capacity((l_max + 1) * (l_max + 1));
    let mut frontier_starts = Vec::with_capacity(l_max + 1);
    for i in 0..=l_max {
        frontier_starts.push(modes.len());
        modes.extend(frontier(i));
    }
    ModeOrdering { modes, frontier_starts }
}

/// Samples `HG_{l,m}` at every element of `array`, in canonical element
/// order (rows) and the given mode order (columns).
///
/// The array must sit on one of the two planes of `params`.
pub fn sample_modes(modes: &[ModeIndex], array: &ArraySpec, params: &BeamParameters) -> Result<DMatrix<Complex64>> {
    let z = array.z_position();
    let on_plane = |p: f64| (z - p).abs() <= 1e-12 * (1.0 + p.abs());
    if !on_plane(params.z_tx()) && !on_plane(params.z_rx()) {
        return Err(Error::input(format!(
            "array plane z={z} matches neither beam plane ({}, {})",
            params.z_tx(),
            params.z_rx()
        )));
    }
    let geom = beam_geometry(params, z);
    let k = params.wavenumber();
    let order = modes.iter().map(|m| m.l.max(m.m)).max().unwrap_or(0);
    let scale = SQRT_2 / geom.radius;
    let profiles: Vec<Vec<f64>> =
        array.indices().map(|i| hermite_functions(order, scale * array.coordinate(i))).collect();

    let per_axis = array.per_axis();
    let mut out = DMatrix::zeros(array.element_count(), modes.len());
    for (col, mode) in modes.iter().enumerate() {
        for ix in 0..per_axis {
            let x = array.coordinate(ix as i64 - array.half_index() as i64);
            for iy in 0..per_axis {
                let y = array.coordinate(iy as i64 - array.half_index() as i64);
                out[(ix * per_axis + iy, col)] = field_from_profiles(
                    *mode,
                    profiles[ix][mode.l],
                    profiles[iy][mode.m],
                    x * x + y * y,
                    z,
                    &geom,
                    k,
                );
            }
        }
    }
    Ok(out)
}

/// Where the modes of an HG basis are sampled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aperture {
    pub array: ArraySpec,
    pub params: BeamParameters,
}

/// Aperture-orthonormalized spatial filters, built incrementally.
///
/// `raw` holds every offered column; `q` holds the orthonormal columns of the
/// kept modes and `r` the upper-triangular map with `raw_kept = q · r`.
/// Appending columns never changes earlier columns of `q`.
#[derive(Debug, Clone)]
pub struct BeamBasis {
    elements: usize,
    drop_tol: f64,
    aperture: Option<Aperture>,
    offered: Vec<ModeIndex>,
    kept: Vec<ModeIndex>,
    dropped: Vec<ModeIndex>,
    raw: Vec<DVector<Complex64>>,
    q_cols: Vec<DVector<Complex64>>,
    q: DMatrix<Complex64>,
    r: DMatrix<Complex64>,
}

impl BeamBasis {
    /// An empty basis over `elements` antenna elements.
    pub fn empty(elements: usize, drop_tol: f64) -> Self {
        Self {
            elements,
            drop_tol,
            aperture: None,
            offered: Vec::new(),
            kept: Vec::new(),
            dropped: Vec::new(),
            raw: Vec::new(),
            q_cols: Vec::new(),
            q: DMatrix::zeros(elements, 0),
            r: DMatrix::zeros(0, 0),
        }
    }

    /// Re-orthonormalized HG modes with `max(l, m) ≤ l_max` on `array`.
    pub fn hermite_gaussian(array: &ArraySpec, params: &BeamParameters, l_max: usize, drop_tol: f64) -> Result<Self> {
        let mut basis = Self::empty(array.element_count(), drop_tol);
        basis.aperture = Some(Aperture { array: *array, params: *params });
        for i in 0..=l_max {
            basis.push_frontier()?;
            debug_assert_eq!(basis.l_max(), Some(i));
        }
        Ok(basis)
    }

    /// Samples and appends the next frontier of an HG basis.
    pub fn push_frontier(&mut self) -> Result<()> {
        let aperture = self
            .aperture
            .ok_or_else(|| Error::input("basis has no aperture to sample frontiers on"))?;
        let next = self.l_max().map_or(0, |l| l + 1);
        let modes = frontier(next);
        let cols = sample_modes(&modes, &aperture.array, &aperture.params)?;
        self.extend(&cols, &modes)
    }

    /// Appends raw columns with modified Gram–Schmidt and one
    /// re-orthogonalization pass. Columns whose residual falls to at most
    /// `drop_tol` times their original norm are recorded as dropped.
    pub fn extend(&mut self, columns: &DMatrix<Complex64>, labels: &[ModeIndex]) -> Result<()> {
        if columns.nrows() != self.elements {
            return Err(Error::dimension(format!(
                "basis has {} elements, new columns have {} rows",
                self.elements,
                columns.nrows()
            )));
        }
        if columns.ncols() != labels.len() {
            return Err(Error::dimension("one label is needed per new column"));
        }
        for (col, &label) in columns.column_iter().zip(labels) {
            let original = col.clone_owned();
            let norm0 = original.norm();
            let mut v = original.clone();
            let mut coef = vec![ZERO; self.q_cols.len()];
            for _pass in 0..2 {
                for (j, q) in self.q_cols.iter().enumerate() {
                    let c = q.dotc(&v);
                    v.axpy(-c, q, Complex64::new(1.0, 0.0));
                    coef[j] += c;
                }
            }
            let residual = v.norm();
            self.offered.push(label);
            self.raw.push(original);
            if residual.is_nan() || residual <= self.drop_tol * norm0 {
                self.dropped.push(label);
                continue;
            }
            v.unscale_mut(residual);
            let k = self.q_cols.len();
            let r = std::mem::replace(&mut self.r, DMatrix::zeros(0, 0));
            let mut r = r.resize(k + 1, k + 1, ZERO);
            for (j, c) in coef.into_iter().enumerate() {
                r[(j, k)] = c;
            }
            r[(k, k)] = Complex64::new(residual, 0.0);
            self.r = r;
            self.q_cols.push(v);
            self.kept.push(label);
        }
        self.q = if self.q_cols.is_empty() {
            DMatrix::zeros(self.elements, 0)
        } else {
            DMatrix::from_columns(&self.q_cols)
        };
        Ok(())
    }

    pub fn element_count(&self) -> usize {
        self.elements
    }

    pub fn drop_tol(&self) -> f64 {
        self.drop_tol
    }

    pub fn aperture(&self) -> Option<&Aperture> {
        self.aperture.as_ref()
    }

    /// Orthonormal filters, one column per kept mode.
    pub fn q(&self) -> &DMatrix<Complex64> {
        &self.q
    }

    /// Upper-triangular map with `raw_kept = q · r`.
    pub fn r(&self) -> &DMatrix<Complex64> {
        &self.r
    }

    /// Raw sampled columns of every offered mode.
    pub fn raw(&self) -> DMatrix<Complex64> {
        if self.raw.is_empty() {
            DMatrix::zeros(self.elements, 0)
        } else {
            DMatrix::from_columns(&self.raw)
        }
    }

    pub fn offered(&self) -> &[ModeIndex] {
        &self.offered
    }

    pub fn kept(&self) -> &[ModeIndex] {
        &self.kept
    }

    pub fn dropped(&self) -> &[ModeIndex] {
        &self.dropped
    }

    /// Highest frontier offered so far.
    pub fn l_max(&self) -> Option<usize> {
        self.offered.iter().map(ModeIndex::frontier).max()
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    /// The basis as it stood after frontier `l_max` was appended.
    pub fn truncated(&self, l_max: usize) -> BeamBasis {
        let within = |m: &ModeIndex| m.frontier() <= l_max;
        let offered = self.offered.iter().take_while(|m| within(m)).count();
        let kept = self.kept.iter().take_while(|m| within(m)).count();
        let q_cols = self.q_cols[..kept].to_vec();
        BeamBasis {
            elements: self.elements,
            drop_tol: self.drop_tol,
            aperture: self.aperture,
            offered: self.offered[..offered].to_vec(),
            kept: self.kept[..kept].to_vec(),
            dropped: self.dropped.iter().copied().filter(within).collect(),
            raw: self.raw[..offered].to_vec(),
            q: self.q.columns(0, kept).into_owned(),
            r: self.r.view((0, 0), (kept, kept)).into_owned(),
            q_cols,
        }
    }
}

/// TX and RX bases grown together, frontier by frontier.
#[derive(Debug, Clone)]
pub struct BasisPair {
    pub tx: BeamBasis,
    pub rx: BeamBasis,
}

impl BasisPair {
    /// Empty HG bases on the TX and RX apertures of `params`.
    pub fn new(tx: &ArraySpec, rx: &ArraySpec, params: &BeamParameters, drop_tol: f64) -> Self {
        let mut pair = Self {
            tx: BeamBasis::empty(tx.element_count(), drop_tol),
            rx: BeamBasis::empty(rx.element_count(), drop_tol),
        };
        pair.tx.aperture = Some(Aperture { array: *tx, params: *params });
        pair.rx.aperture = Some(Aperture { array: *rx, params: *params });
        pair
    }

    /// Appends frontiers until both bases reach `l_max`.
    pub fn grow_to(&mut self, l_max: usize) -> Result<()> {
        for basis in [&mut self.tx, &mut self.rx] {
            while basis.l_max().is_none_or(|l| l < l_max) {
                basis.push_frontier()?;
            }
        }
        Ok(())
    }

    /// Both bases cut back to frontier `l_max`, growing them first if needed.
    pub fn at(&mut self, l_max: usize) -> Result<(BeamBasis, BeamBasis)> {
        self.grow_to(l_max)?;
        Ok((self.tx.truncated(l_max), self.rx.truncated(l_max)))
    }
}

/// Residuals `err_L` of each column of `fields` for every frontier
/// `L = 0..=basis.l_max()`. Entry `[L][k]` belongs to column `k`.
pub fn frontier_residuals(fields: &DMatrix<Complex64>, basis: &BeamBasis) -> Result<Vec<Vec<f64>>> {
    if fields.nrows() != basis.element_count() {
        return Err(Error::dimension(format!(
            "fields have {} rows, basis covers {} elements",
            fields.nrows(),
            basis.element_count()
        )));
    }
    let Some(top) = basis.l_max() else {
        return Ok(Vec::new());
    };
    let energy: Vec<f64> = fields.column_iter().map(|c| c.norm_squared()).collect();
    if energy.contains(&0.0) {
        return Err(Error::input("cannot project a zero field"));
    }
    let coeffs = basis.q().ad_mul(fields);
    let mut captured = vec![0.0; fields.ncols()];
    let mut row = 0;
    let mut out = Vec::with_capacity(top + 1);
    for l in 0..=top {
        while row < basis.kept().len() && basis.kept()[row].frontier() <= l {
            for (k, c) in captured.iter_mut().enumerate() {
                *c += coeffs[(row, k)].norm_sqr();
            }
            row += 1;
        }
        out.push(captured.iter().zip(&energy).map(|(c, e)| (1.0 - c / e).max(0.0)).collect());
    }
    Ok(out)
}

/// Consuming form of [`BeamBasis::extend`].
pub fn extend_orthonormal_basis(
    mut basis: BeamBasis,
    columns: &DMatrix<Complex64>,
    labels: &[ModeIndex],
) -> Result<BeamBasis> {
    basis.extend(columns, labels)?;
    Ok(basis)
}

/// Least-squares expansion of a field on the basis.
#[derive(Debug, Clone)]
pub struct ProjectionResult {
    /// Coefficients on the raw (non-orthogonal) sampled modes.
    pub coefficients: Vec<(ModeIndex, Complex64)>,
    /// Coefficients in the orthonormal frame, `qᴴ f`.
    pub orthonormal_coefficients: DVector<Complex64>,
    /// `‖f − reconstruction‖² / ‖f‖²`.
    pub residual: f64,
}

pub fn project_field(field: &DVector<Complex64>, basis: &BeamBasis) -> Result<ProjectionResult> {
    if field.len() != basis.element_count() {
        return Err(Error::dimension(format!(
            "field has {} entries, basis covers {} elements",
            field.len(),
            basis.element_count()
        )));
    }
    let energy = field.norm_squared();
    if energy == 0.0 {
        return Err(Error::input("cannot project a zero field"));
    }
    let q = basis.q();
    let c = q.ad_mul(field);
    let residual = (field - q * &c).norm_squared() / energy;

    // back-substitute r · a = c for the raw-mode coefficients
    let r = basis.r();
    let n = c.len();
    let mut a = vec![ZERO; n];
    for i in (0..n).rev() {
        let mut acc = c[i];
        for j in i + 1..n {
            acc -= r[(i, j)] * a[j];
        }
        a[i] = acc / r[(i, i)];
    }
    Ok(ProjectionResult {
        coefficients: basis.kept().iter().copied().zip(a).collect(),
        orthonormal_coefficients: c,
        residual,
    })
}

/// Channel between transmit and receive beam modes.
#[derive(Debug, Clone)]
pub struct BeamspaceChannel {
    /// Rows: receive modes, columns: transmit modes.
    pub matrix: DMatrix<Complex64>,
    pub tx_modes: Vec<ModeIndex>,
    pub rx_modes: Vec<ModeIndex>,
    pub l_max: Option<usize>,
}

impl BeamspaceChannel {
    pub fn decompose(&self) -> Result<SingularTriple> {
        svd(&self.matrix)
    }

    /// Number of transmit reference signals needed to sound this channel.
    pub fn reference_signals(&self) -> usize {
        self.tx_modes.len()
    }
}

fn check_bases(native: &NativeChannel, tx: &BeamBasis, rx: &BeamBasis) -> Result<()> {
    let (rows, cols) = native.matrix.shape();
    if tx.element_count() != cols || rx.element_count() != rows {
        return Err(Error::dimension(format!(
            "channel is {rows}x{cols} but bases cover {} rx / {} tx elements",
            rx.element_count(),
            tx.element_count()
        )));
    }
    Ok(())
}

fn combined_l_max(tx: &BeamBasis, rx: &BeamBasis) -> Option<usize> {
    match (tx.l_max(), rx.l_max()) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    }
}

/// Noiseless compression `H_HG = Q_RXᴴ · H · Q_TX`.
pub fn compress_channel(native: &NativeChannel, tx: &BeamBasis, rx: &BeamBasis) -> Result<BeamspaceChannel> {
    check_bases(native, tx, rx)?;
    let matrix = rx.q().ad_mul(&(&native.matrix * tx.q()));
    Ok(BeamspaceChannel {
        matrix,
        tx_modes: tx.kept().to_vec(),
        rx_modes: rx.kept().to_vec(),
        l_max: combined_l_max(tx, rx),
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Noise stream for one sounding, keyed by seed, mode and repetition only.
fn sounding_rng(seed: u64, mode: ModeIndex, repetition: usize) -> ChaCha8Rng {
    let mut key = splitmix64(seed);
    key = splitmix64(key ^ mode.l as u64);
    key = splitmix64(key ^ mode.m as u64);
    key = splitmix64(key ^ repetition as u64);
    ChaCha8Rng::seed_from_u64(key)
}

/// Simulated least-squares sounding of the beamspace channel.
///
/// Each kept TX mode `q_t` is sent alone at full power, `x = √P q_t`; the
/// receiver sees `y = H x + n` with circular Gaussian noise of variance
/// `noise_var` per element and estimates column `t` as `Q_RXᴴ y / √P`,
/// averaged over `repetitions` soundings.
pub fn ls_estimate_with_noise(
    native: &NativeChannel,
    tx: &BeamBasis,
    rx: &BeamBasis,
    tx_power: f64,
    noise_var: f64,
    repetitions: usize,
    seed: u64,
) -> Result<BeamspaceChannel> {
    check_bases(native, tx, rx)?;
    if repetitions == 0 {
        return Err(Error::input("at least one repetition is required"));
    }
    if tx_power.is_nan() || tx_power <= 0.0 || noise_var.is_nan() || noise_var < 0.0 {
        return Err(Error::input("transmit power must be positive and noise variance non-negative"));
    }
    let amp = tx_power.sqrt();
    let sigma = (0.5 * noise_var).sqrt();
    let rows = rx.len();
    let columns: Vec<DVector<Complex64>> = tx
        .kept()
        .par_iter()
        .zip(tx.q().column_iter().collect::<Vec<_>>())
        .map(|(&mode, q_t)| {
            let clean = &native.matrix * (q_t * Complex64::new(amp, 0.0));
            let mut acc = DVector::<Complex64>::zeros(rows);
            for rep in 0..repetitions {
                let mut y = clean.clone();
                if noise_var > 0.0 {
                    let mut rng = sounding_rng(seed, mode, rep);
                    for v in y.iter_mut() {
                        let re: f64 = StandardNormal.sample(&mut rng);
                        let im: f64 = StandardNormal.sample(&mut rng);
                        *v += Complex64::new(sigma * re, sigma * im);
                    }
                }
                acc += rx.q().ad_mul(&y);
            }
            acc.unscale(amp * repetitions as f64)
        })
        .collect();
    let matrix = if columns.is_empty() {
        DMatrix::zeros(rows, 0)
    } else {
        DMatrix::from_columns(&columns)
    };
    Ok(BeamspaceChannel {
        matrix,
        tx_modes: tx.kept().to_vec(),
        rx_modes: rx.kept().to_vec(),
        l_max: combined_l_max(tx, rx),
    })
}

/// LS sounding with the transmit power and thermal noise of `link`.
pub fn ls_estimate(
    native: &NativeChannel,
    tx: &BeamBasis,
    rx: &BeamBasis,
    link: &LinkBudget,
    repetitions: usize,
    seed: u64,
) -> Result<BeamspaceChannel> {
    ls_estimate_with_noise(native, tx, rx, link.tx_power_watts(), noise_power(link).watts, repetitions, seed)
}

/// Element-domain filters for the beamspace singular modes: `Q_TX V` for
/// transmission and `Q_RX U` for reception.
pub fn antenna_filters(
    beamspace_svd: &SingularTriple,
    tx: &BeamBasis,
    rx: &BeamBasis,
) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    if beamspace_svd.v.nrows() != tx.len() || beamspace_svd.u.nrows() != rx.len() {
        return Err(Error::dimension(format!(
            "beamspace SVD is {}x{} but bases hold {} rx / {} tx modes",
            beamspace_svd.u.nrows(),
            beamspace_svd.v.nrows(),
            rx.len(),
            tx.len()
        )));
    }
    Ok((tx.q() * &beamspace_svd.v, rx.q() * &beamspace_svd.u))
}
