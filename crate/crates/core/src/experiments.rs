//! Experiment runner: builds the link from an [`ExperimentConfig`], runs the
//! requested stages and writes CSV datasets, `summary.json` and
//! `manifest.json` to the output directory.
//!
//! | subcommand    | files                                            |
//! |---------------|--------------------------------------------------|
//! | `link-budget` | summary only                                     |
//! | `native`      | `singular_values.csv`                            |
//! | `capture`     | `captured_power.csv`                             |
//! | `project`     | `residuals.csv`                                  |
//! | `beamspace`   | `beamspace_sv.csv`, `estimation_error.csv`       |
//! | `capacity`    | `capacity_trace.csv`, `allocation.csv`           |
//! | `all`         | everything above                                 |
//!
//! `summary.json` holds only computed results and is byte-identical across
//! reruns with the same configuration and seed. `manifest.json` echoes the
//! configuration, lists each file with its SHA-256 and records stage timings.

use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::array_geometry::{build_array, element_gain, pair_geometry, ArraySpec, ElementPattern};
use crate::beamspace::{
    compress_channel, frontier_residuals, ls_estimate, BasisPair, BeamBasis, BeamspaceChannel,
};
use crate::capacity::{capacity_of, iterative_capacity_for_link, CapacityTrace};
use crate::config::{Estimation, ExperimentConfig};
use crate::error::{Error, Result};
use crate::hg_beams::{captured_power, plane_radius, BeamParameters, ModeIndex};
use crate::native_channel::{
    build_native_channel, friis_coefficient, noise_power, svd, watts_to_dbm, LinkBudget, NativeChannel,
    SingularTriple,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    LinkBudget,
    Native,
    Capture,
    Project,
    Beamspace,
    Capacity,
    All,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::LinkBudget => "link-budget",
            Subcommand::Native => "native",
            Subcommand::Capture => "capture",
            Subcommand::Project => "project",
            Subcommand::Beamspace => "beamspace",
            Subcommand::Capacity => "capacity",
            Subcommand::All => "all",
        }
    }

    fn stages(self) -> Vec<Subcommand> {
        match self {
            Subcommand::All => vec![
                Subcommand::LinkBudget,
                Subcommand::Native,
                Subcommand::Capture,
                Subcommand::Project,
                Subcommand::Beamspace,
                Subcommand::Capacity,
            ],
            s => vec![s],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config: ExperimentConfig,
    pub timings: Vec<StageTiming>,
    pub stage_seconds: f64,
    pub wall_clock_seconds: f64,
    pub files: Vec<FileRecord>,
}

#[derive(Debug, Clone)]
pub struct OutputBundle {
    pub dir: PathBuf,
    pub summary: Value,
    pub manifest: Manifest,
}

/// Rewraps a computation error as a numerical failure of `stage`.
fn in_stage(stage: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config(_) | Error::Io { .. } | Error::Numerical { .. } => e,
        other => Error::Numerical { stage: stage.to_string(), message: other.to_string() },
    }
}

fn io_error(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.display().to_string(), source }
}

fn db20(x: f64) -> f64 {
    20.0 * x.log10()
}

#[derive(Serialize)]
struct SingularRow {
    k: usize,
    sigma: f64,
    sigma_db: f64,
}

#[derive(Serialize)]
struct BeamspaceRow {
    k: usize,
    sigma: f64,
    sigma_db: f64,
    native_sigma: Option<f64>,
    native_sigma_db: Option<f64>,
}

#[derive(Serialize)]
struct CaptureRow {
    l: usize,
    m: usize,
    a_over_w: f64,
    fraction: f64,
}

#[derive(Serialize)]
struct ResidualRow {
    k: usize,
    l_max: usize,
    err: f64,
}

#[derive(Serialize)]
struct EstimationRow {
    l_max: usize,
    repetitions: usize,
    mse: f64,
    expected_mse: f64,
}

#[derive(Serialize)]
struct TraceRow {
    i: usize,
    l_max: usize,
    n_modes: usize,
    se_bits_per_hz: f64,
    delta: Option<f64>,
}

#[derive(Serialize)]
struct AllocationRow {
    k: usize,
    sigma: f64,
    power_w: f64,
    rate_bits_per_hz: f64,
}

struct Session<'a> {
    cfg: &'a ExperimentConfig,
    dir: PathBuf,
    link: LinkBudget,
    tx: ArraySpec,
    rx: ArraySpec,
    params: BeamParameters,
    pattern: ElementPattern,
    native: Option<NativeChannel>,
    native_svd: Option<SingularTriple>,
    pair: Option<BasisPair>,
    timings: Vec<StageTiming>,
    files: Vec<FileRecord>,
    summary: Map<String, Value>,
}

impl<'a> Session<'a> {
    fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self).map_err(in_stage(stage));
        self.timings.push(StageTiming { stage: stage.to_string(), seconds: start.elapsed().as_secs_f64() });
        out
    }

    fn native(&mut self) -> Result<&NativeChannel> {
        if self.native.is_none() {
            let h = self.timed("native-channel", |s| build_native_channel(&s.tx, &s.rx, &s.link, &s.pattern))?;
            self.native = Some(h);
        }
        Ok(self.native.as_ref().expect("built above"))
    }

    fn native_svd(&mut self) -> Result<&SingularTriple> {
        if self.native_svd.is_none() {
            self.native()?;
            let t = self.timed("native-svd", |s| svd(&s.native.as_ref().expect("built").matrix))?;
            self.native_svd = Some(t);
        }
        Ok(self.native_svd.as_ref().expect("computed above"))
    }

    fn native_spectrum(&mut self) -> Result<Vec<f64>> {
        Ok(self.native_svd()?.s.iter().copied().collect())
    }

    fn bases(&mut self, l_max: usize) -> Result<(BeamBasis, BeamBasis)> {
        let (tx, rx, params, tol) = (self.tx, self.rx, self.params, self.cfg.algorithm.drop_tol);
        self.timed("hg-basis", |s| s.pair.get_or_insert_with(|| BasisPair::new(&tx, &rx, &params, tol)).at(l_max))
    }

    /// `H_HG` at frontier `l_max`, compressed or sounded per the config.
    fn beamspace_channel(&mut self, l_max: usize) -> Result<BeamspaceChannel> {
        let (tb, rb) = self.bases(l_max)?;
        self.sound(&tb, &rb)
    }

    fn sound(&self, tb: &BeamBasis, rb: &BeamBasis) -> Result<BeamspaceChannel> {
        let a = &self.cfg.algorithm;
        let h = self.native.as_ref().expect("native channel built first");
        match a.estimation {
            Estimation::Noiseless => compress_channel(h, tb, rb),
            Estimation::Ls => ls_estimate(h, tb, rb, &self.link, a.repetitions, a.seed),
        }
    }

    fn write_csv<R: Serialize>(&mut self, name: &str, rows: &[R], header: &[&str]) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        };
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.serialize(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        })?;
        self.write_file(name, &bytes)
    }

    fn write_file(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(io_error(&path))?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileRecord {
            name: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }

    fn link_budget(&mut self) -> Result<()> {
        self.native()?;
        let v = self.timed("link-budget", |s| {
            let noise = noise_power(&s.link);
            let on_axis = friis_coefficient(
                s.link.wavelength(),
                s.link.distance(),
                element_gain(&s.pattern, 0.0)?,
                element_gain(&s.pattern, 0.0)?,
            )?;
            let h = &s.native.as_ref().expect("built").matrix;
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for z in h.iter() {
                let loss = -db20(z.norm());
                lo = lo.min(loss);
                hi = hi.max(loss);
            }
            let tx_pos = build_array(&s.tx);
            let rx_pos = build_array(&s.rx);
            let (mut d_lo, mut d_hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for r in &rx_pos {
                for t in &tx_pos {
                    let g = pair_geometry(t, s.tx.boresight(), r, s.rx.boresight())?;
                    d_lo = d_lo.min(g.distance);
                    d_hi = d_hi.max(g.distance);
                }
            }
            Ok(json!({
                "carrier_frequency_hz": s.link.carrier_frequency(),
                "wavelength_m": s.link.wavelength(),
                "bandwidth_hz": s.link.bandwidth(),
                "tx_power_w": s.link.tx_power_watts(),
                "tx_power_dbm": s.link.tx_power_dbm(),
                "noise_power_w": noise.watts,
                "noise_power_dbm": noise.dbm,
                "on_axis_path_loss_db": -db20(on_axis.norm()),
                "on_axis_snr_db": watts_to_dbm(s.link.tx_power_watts() * on_axis.norm_sqr()) - noise.dbm,
                "pair_path_loss_db": { "min": lo, "max": hi },
                "pair_distance_m": { "min": d_lo, "max": d_hi },
                "tx_elements": s.tx.element_count(),
                "rx_elements": s.rx.element_count(),
            }))
        })?;
        self.summary.insert("link_budget".into(), v);
        Ok(())
    }

    fn native_stage(&mut self) -> Result<()> {
        let s = self.native_spectrum()?;
        let link = self.link;
        let cap = self.cfg.algorithm.mcs_cap;
        let v = self.timed("native-capacity", |_| {
            let rows: Vec<SingularRow> =
                s.iter().enumerate().map(|(k, &x)| SingularRow { k: k + 1, sigma: x, sigma_db: db20(x) }).collect();
            let (alloc, res) = capacity_of(&s, noise_power(&link).watts, link.tx_power_watts(), cap)?;
            Ok((
                rows,
                json!({
                    "singular_values": s.len(),
                    "largest_singular_value": s.first().copied(),
                    "spectral_efficiency_bits_per_hz": res.spectral_efficiency,
                    "capacity_bps": res.capacity(link.bandwidth()),
                    "effective_rank": alloc.active_count(),
                    "water_level_w": alloc.water_level,
                }),
            ))
        })?;
        self.timed("write", |s| s.write_csv("singular_values.csv", &v.0, &["k", "sigma", "sigma_db"]))?;
        self.summary.insert("native".into(), v.1);
        Ok(())
    }

    fn capture_stage(&mut self) -> Result<()> {
        let sw = self.cfg.sweep.clone();
        let (tx, params) = (self.tx, self.params);
        let (rows, v) = self.timed("capture", |_| {
            let mut rows = Vec::new();
            for l in 0..=sw.capture_max_order {
                for m in 0..=sw.capture_max_order {
                    for p in 0..sw.capture_points {
                        let a_over_w = sw.capture_a_over_w_max * p as f64 / (sw.capture_points - 1) as f64;
                        let fraction = captured_power(ModeIndex::new(l, m), a_over_w)?;
                        rows.push(CaptureRow { l, m, a_over_w, fraction });
                    }
                }
            }
            let radius = plane_radius(params.waist(), params.wavelength(), tx.z_position());
            let operating = tx.aperture_half_width() / radius;
            Ok((
                rows,
                json!({
                    "beam_radius_at_array_m": radius,
                    "aperture_half_width_m": tx.aperture_half_width(),
                    "array_a_over_w": operating,
                    "fundamental_fraction_at_array": captured_power(ModeIndex::new(0, 0), operating)?,
                }),
            ))
        })?;
        self.timed("write", |s| s.write_csv("captured_power.csv", &rows, &["l", "m", "a_over_w", "fraction"]))?;
        self.summary.insert("capture".into(), v);
        Ok(())
    }

    fn project_stage(&mut self) -> Result<()> {
        let l_top = self.cfg.sweep.residual_l_max;
        self.native_svd()?;
        let (tb, _) = self.bases(l_top)?;
        let (rows, v) = self.timed("project", |s| {
            let t = s.native_svd.as_ref().expect("computed");
            let modes = s.cfg.sweep.residual_modes.min(t.v.ncols());
            let fields = t.v.columns(0, modes).into_owned();
            let sweep = frontier_residuals(&fields, &tb)?;
            let mut rows = Vec::new();
            let mut leading = Vec::new();
            for (l, errs) in sweep.iter().enumerate() {
                for (k, &err) in errs.iter().enumerate() {
                    rows.push(ResidualRow { k: k + 1, l_max: l, err });
                }
                let n = (l + 1) * (l + 1);
                let next = ((l + 2) * (l + 2)).min(modes);
                if next > n {
                    let first = errs[..n].iter().sum::<f64>() / n as f64;
                    let after = errs[n..next].iter().sum::<f64>() / (next - n) as f64;
                    leading.push(json!({ "l_max": l, "mean_leading": first, "mean_next_frontier": after }));
                }
            }
            Ok((rows, json!({ "modes": modes, "l_max": l_top, "kept_tx_modes": tb.len(), "frontier_means": leading })))
        })?;
        self.timed("write", |s| s.write_csv("residuals.csv", &rows, &["k", "l_max", "err"]))?;
        self.summary.insert("project".into(), v);
        Ok(())
    }

    fn beamspace_stage(&mut self) -> Result<()> {
        let l = self.cfg.sweep.beamspace_l_max;
        let compare = self.cfg.algorithm.compare_native;
        let native = if compare { Some(self.native_spectrum()?) } else { None };
        self.native()?;
        let (tb, rb) = self.bases(l)?;
        let (bs, s_hg) = self.timed("beamspace", |s| {
            let bs = s.sound(&tb, &rb)?;
            let sv: Vec<f64> = bs.decompose()?.s.iter().copied().collect();
            Ok((bs, sv))
        })?;
        let rows: Vec<BeamspaceRow> = s_hg
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let n = native.as_ref().and_then(|n| n.get(k).copied());
                BeamspaceRow { k: k + 1, sigma: x, sigma_db: db20(x), native_sigma: n, native_sigma_db: n.map(db20) }
            })
            .collect();

        let a = self.cfg.algorithm.clone();
        let mut est = Vec::new();
        for li in 0..=l {
            let (tb, rb) = self.bases(li)?;
            let row = self.timed("estimation", |s| {
                let h = s.native.as_ref().expect("built");
                let clean = compress_channel(h, &tb, &rb)?;
                let noisy = ls_estimate(h, &tb, &rb, &s.link, a.repetitions, a.seed)?;
                let diff = &noisy.matrix - &clean.matrix;
                let mse = diff.norm_squared() / diff.len().max(1) as f64;
                let expected = noise_power(&s.link).watts / (s.link.tx_power_watts() * a.repetitions as f64);
                Ok(EstimationRow { l_max: li, repetitions: a.repetitions, mse, expected_mse: expected })
            })?;
            est.push(row);
        }
        let bound_gap = native.as_ref().map(|n| {
            s_hg.iter().zip(n).map(|(b, n)| b - n).fold(f64::NEG_INFINITY, f64::max)
        });
        self.timed("write", |s| {
            s.write_csv(
                "beamspace_sv.csv",
                &rows,
                &["k", "sigma", "sigma_db", "native_sigma", "native_sigma_db"],
            )?;
            s.write_csv("estimation_error.csv", &est, &["l_max", "repetitions", "mse", "expected_mse"])
        })?;
        self.summary.insert(
            "beamspace".into(),
            json!({
                "l_max": l,
                "tx_modes": bs.tx_modes.len(),
                "rx_modes": bs.rx_modes.len(),
                "estimation": a.estimation,
                "largest_excess_over_native": bound_gap,
            }),
        );
        Ok(())
    }

    fn capacity_stage(&mut self) -> Result<()> {
        let native_se = if self.cfg.algorithm.compare_native {
            let s = self.native_spectrum()?;
            let link = self.link;
            Some(capacity_of(&s, noise_power(&link).watts, link.tx_power_watts(), self.cfg.algorithm.mcs_cap)?.1)
        } else {
            None
        };
        self.native()?;
        let a = self.cfg.algorithm.clone();
        let link = self.link;
        let trace: CapacityTrace = {
            let start = Instant::now();
            let before = self.timings.len();
            let out = iterative_capacity_for_link(
                |i| self.beamspace_channel(i),
                a.tolerance(),
                &link,
                a.hard_cap,
                a.mcs_cap,
            )
            .map_err(in_stage("capacity"));
            // time not already attributed to basis construction
            let inner: f64 = self.timings[before..].iter().map(|t| t.seconds).sum();
            self.timings.push(StageTiming {
                stage: "capacity".into(),
                seconds: (start.elapsed().as_secs_f64() - inner).max(0.0),
            });
            out?
        };

        let rows: Vec<TraceRow> = trace
            .records
            .iter()
            .map(|r| TraceRow {
                i: r.i,
                l_max: r.l_max,
                n_modes: r.n_modes,
                se_bits_per_hz: r.spectral_efficiency,
                delta: r.delta,
            })
            .collect();
        let alloc: Vec<AllocationRow> = trace
            .singular_values
            .iter()
            .enumerate()
            .map(|(k, &s)| AllocationRow {
                k: k + 1,
                sigma: s,
                power_w: trace.allocation.powers.get(k).copied().unwrap_or(0.0),
                rate_bits_per_hz: trace.result.rates.get(k).copied().unwrap_or(0.0),
            })
            .collect();
        self.timed("write", |s| {
            s.write_csv("capacity_trace.csv", &rows, &["i", "l_max", "n_modes", "se_bits_per_hz", "delta"])?;
            s.write_csv("allocation.csv", &alloc, &["k", "sigma", "power_w", "rate_bits_per_hz"])
        })?;

        let elements = self.tx.element_count();
        let final_modes = trace.records.last().map_or(0, |r| r.n_modes);
        let mut by_l = Vec::new();
        for l in 0..=trace.l_max.max(self.cfg.sweep.beamspace_l_max) {
            let n = (l + 1) * (l + 1);
            by_l.push(json!({
                "l_max": l,
                "reference_signals": n,
                "antenna_reference_signals": elements,
                "ratio": n as f64 / elements as f64,
                "reduction": 1.0 - n as f64 / elements as f64,
            }));
        }
        let tol = a.tolerance();
        let mut v = json!({
            "spectral_efficiency_bits_per_hz": trace.spectral_efficiency,
            "capacity_bps": trace.result.capacity(link.bandwidth()),
            "l_max": trace.l_max,
            "n_modes": final_modes,
            "converged": trace.converged,
            "tolerance": tol,
            "final_threshold_bits_per_hz": tol.threshold(trace.spectral_efficiency),
            "effective_rank": trace.effective_rank(),
            "estimation": a.estimation,
            "rate_capped": trace.result.capped,
            "reference_signals": final_modes,
            "antenna_reference_signals": elements,
            "overhead_ratio": final_modes as f64 / elements as f64,
            "overhead_reduction": 1.0 - final_modes as f64 / elements as f64,
            "overhead_by_l_max": by_l,
        });
        if let Some(n) = native_se {
            let obj = v.as_object_mut().expect("object literal");
            obj.insert("native_spectral_efficiency_bits_per_hz".into(), json!(n.spectral_efficiency));
            obj.insert(
                "relative_error".into(),
                json!((n.spectral_efficiency - trace.spectral_efficiency).abs() / n.spectral_efficiency),
            );
        }
        self.summary.insert("capacity".into(), v);
        Ok(())
    }
}

/// Runs `cmd` with a validated configuration and writes its outputs.
pub fn run(cmd: Subcommand, cfg: &ExperimentConfig) -> Result<OutputBundle> {
    let wall = Instant::now();
    cfg.validate()?;
    let setup = Instant::now();
    let link = cfg.link_budget()?;
    let (tx, rx) = cfg.arrays()?;
    let params = cfg.beam_parameters().map_err(|e| Error::Config(format!("beam.waist: {e}")))?;
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir).map_err(io_error(&dir))?;
    let mut session = Session {
        cfg,
        dir,
        link,
        tx,
        rx,
        params,
        pattern: cfg.algorithm.pattern.pattern(),
        native: None,
        native_svd: None,
        pair: None,
        timings: vec![StageTiming { stage: "setup".into(), seconds: setup.elapsed().as_secs_f64() }],
        files: Vec::new(),
        summary: Map::new(),
    };
    session.summary.insert("subcommand".into(), json!(cmd.name()));
    session.summary.insert("beam_waist_m".into(), json!(params.waist()));
    session.summary.insert("rayleigh_distance_m".into(), json!(params.rayleigh()));

    for stage in cmd.stages() {
        match stage {
            Subcommand::LinkBudget => session.link_budget()?,
            Subcommand::Native => session.native_stage()?,
            Subcommand::Capture => session.capture_stage()?,
            Subcommand::Project => session.project_stage()?,
            Subcommand::Beamspace => session.beamspace_stage()?,
            Subcommand::Capacity => session.capacity_stage()?,
            Subcommand::All => unreachable!("expanded by stages()"),
        }
    }

    let summary = Value::Object(std::mem::take(&mut session.summary));
    session.timed("write", |s| {
        let text = serde_json::to_vec_pretty(&summary).map_err(|e| Error::Io {
            path: "summary.json".into(),
            source: std::io::Error::other(e),
        })?;
        s.write_file("summary.json", &text)
    })?;

    let timings = merge_timings(&session.timings);
    let manifest = Manifest {
        tool: "beamcap".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: cmd.name().into(),
        config: cfg.clone(),
        stage_seconds: timings.iter().map(|t| t.seconds).sum(),
        timings,
        wall_clock_seconds: wall.elapsed().as_secs_f64(),
        files: session.files.clone(),
    };
    let path = session.dir.join("manifest.json");
    let text = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: std::io::Error::other(e) })?;
    std::fs::write(&path, text).map_err(io_error(&path))?;
    Ok(OutputBundle { dir: session.dir, summary, manifest })
}

/// Sums repeated stages, keeping first-seen order.
fn merge_timings(raw: &[StageTiming]) -> Vec<StageTiming> {
    let mut out: Vec<StageTiming> = Vec::new();
    for t in raw {
        match out.iter_mut().find(|o| o.stage == t.stage) {
            Some(o) => o.seconds += t.seconds,
            None => out.push(t.clone()),
        }
    }
    out
}
