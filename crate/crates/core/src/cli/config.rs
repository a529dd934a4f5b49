//! Experiment configuration: one TOML file with `[device]`, `[dynamics]`,
//! `[protocol]` and `[run]`, plus optional `[spectra]` and `[sweep]`.
//!
//! Parsing collects every missing field before failing, and every other
//! error carries the line and column of the offending value.

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use toml::Spanned;

use crate::dynamics::{DynamicsParams, ReleaseLimits};
use crate::protocol::{pump_grid, tau_bin_grid, ProtocolConfig, SearchSpace};
use crate::spectral::{DeviceGeometry, SPEED_OF_LIGHT};

/// A message anchored to a position in the config file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Located {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for Located {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.column, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Syntax(Located),
    #[error("missing fields: {}", .0.join(", "))]
    Missing(Vec<String>),
    #[error("{}", .0.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Located>),
}

fn locate(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

type Field<T> = Option<Spanned<T>>;

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    device: Option<RawDevice>,
    dynamics: Option<RawDynamics>,
    protocol: Option<RawProtocol>,
    run: Option<RawRun>,
    spectra: Option<RawSpectra>,
    sweep: Option<RawSweep>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawDevice {
    ring_length: Field<f64>,
    through_power: Field<f64>,
    neff_re: Field<f64>,
    neff_im: Field<f64>,
    group_index: Field<f64>,
    wavelength: Field<f64>,
    aux_through_power: Field<f64>,
    aux_ring_fraction: Field<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawDynamics {
    wavelength: Field<f64>,
    q_loss: Field<f64>,
    q_idler: Field<f64>,
    q_pump: Field<f64>,
    detuning: Field<f64>,
    decision_delay: Field<f64>,
    signal_response_time: Field<f64>,
    pump_width: Field<f64>,
    release_peak_rate: Field<f64>,
    release_min_width: Field<f64>,
    initial_cutoff: Field<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawProtocol {
    efficiency: Field<f64>,
    fidelity_threshold: Field<f64>,
    g2_threshold: Field<f64>,
    release_cap: Field<usize>,
    max_bins: Field<usize>,
    tau_bin_count: Field<usize>,
    tau_bins: Field<Vec<f64>>,
    pump_settings: Field<Vec<f64>>,
    passes: Field<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawRun {
    n_traj: Field<u64>,
    seed: Field<u64>,
    output_dir: Field<String>,
    jobs: Field<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSpectra {
    points: Field<usize>,
    span_fsr: Field<f64>,
    phase_points: Field<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    efficiencies: Field<Vec<f64>>,
    fidelity_thresholds: Field<Vec<f64>>,
    g2_thresholds: Field<Vec<f64>>,
    q_losses: Field<Vec<f64>>,
    release_caps: Field<Vec<usize>>,
    fidelity_for_efficiency_scan: Field<f64>,
    combiner_target: Field<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSection {
    /// Storage ring circumference `L_c` (m).
    pub ring_length: f64,
    /// Filter coupler power through-coupling `ν²`.
    pub through_power: f64,
    pub neff_re: f64,
    pub neff_im: f64,
    pub group_index: f64,
    /// Pump wavelength (m).
    pub wavelength: f64,
    /// Auxiliary ring power through-coupling `ν_a²`.
    pub aux_through_power: f64,
    /// Auxiliary ring length as a fraction of `L_c`.
    pub aux_ring_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSection {
    /// Carrier wavelength used to convert quality factors (m).
    pub wavelength: f64,
    pub q_loss: f64,
    pub q_idler: f64,
    pub q_pump: f64,
    /// `Δ_s = −Δ_i` in units of `κ_p`.
    pub detuning: f64,
    /// `τ_D` (s).
    pub decision_delay: f64,
    /// `1/κ_ψs` (s).
    pub signal_response_time: f64,
    /// Gaussian pump width `τ_p` (s).
    pub pump_width: f64,
    /// Peak release coupling in units of `κ_i`.
    pub release_peak_rate: f64,
    /// Narrowest release control width (s).
    pub release_min_width: f64,
    pub initial_cutoff: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSection {
    pub efficiency: f64,
    pub fidelity_threshold: f64,
    pub g2_threshold: f64,
    /// Evacuation detection number `N_ev`.
    pub release_cap: usize,
    pub max_bins: usize,
    /// Bin lengths (s); geometric over 5–200 idler lifetimes when not given.
    pub tau_bins: Vec<f64>,
    pub pump_settings: Vec<f64>,
    pub passes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub n_traj: u64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectraSection {
    /// Frequency samples across the plotted window.
    pub points: usize,
    /// Window half-width in FSRs around the pump.
    pub span_fsr: f64,
    /// Samples of the signal filter phase over `[0, 2π)`.
    pub phase_points: usize,
}

impl Default for SpectraSection {
    fn default() -> Self {
        Self {
            points: 20001,
            span_fsr: 2.5,
            phase_points: 721,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSection {
    pub efficiencies: Vec<f64>,
    pub fidelity_thresholds: Vec<f64>,
    pub g2_thresholds: Vec<f64>,
    pub q_losses: Vec<f64>,
    pub release_caps: Vec<usize>,
    /// Fidelity threshold of the efficiency scan with the frequency combiner.
    pub fidelity_for_efficiency_scan: f64,
    /// Overall success target of the frequency combiner.
    pub combiner_target: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            efficiencies: vec![0.96, 0.97, 0.98, 0.99, 0.996, 1.0],
            fidelity_thresholds: vec![0.95, 0.97, 0.985, 0.99],
            g2_thresholds: vec![0.25, 0.5, 1.0],
            q_losses: vec![4e7, 8e7, 2e8],
            release_caps: vec![2, 3],
            fidelity_for_efficiency_scan: 0.99,
            combiner_target: 0.99,
        }
    }
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub device: DeviceSection,
    pub dynamics: DynamicsSection,
    pub protocol: ProtocolSection,
    pub run: RunSection,
    pub spectra: SpectraSection,
    pub sweep: SweepSection,
}

struct Checker<'a> {
    src: &'a str,
    missing: Vec<String>,
    invalid: Vec<Located>,
}

impl<'a> Checker<'a> {
    fn take<T: Clone + Default>(&mut self, section: &str, name: &str, field: &Field<T>) -> (T, Range<usize>) {
        match field {
            Some(v) => (v.get_ref().clone(), v.span()),
            None => {
                self.missing.push(format!("{section}.{name}"));
                (T::default(), 0..0)
            }
        }
    }

    fn optional<T: Clone>(&self, field: &Field<T>, default: T) -> (T, Range<usize>) {
        field.as_ref().map_or((default, 0..0), |v| (v.get_ref().clone(), v.span()))
    }

    fn require(&mut self, ok: bool, span: &Range<usize>, message: impl Into<String>) {
        if !ok {
            let (line, column) = locate(self.src, span.start);
            self.invalid.push(Located {
                line,
                column,
                message: message.into(),
            });
        }
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

fn probability(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&src)
    }

    pub fn parse(src: &str) -> Result<Self, ConfigError> {
        let mut raw: RawConfig = toml::from_str(src).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| locate(src, s.start));
            ConfigError::Syntax(Located {
                line,
                column,
                message: e.message().to_string(),
            })
        })?;
        let mut c = Checker {
            src,
            missing: Vec::new(),
            invalid: Vec::new(),
        };
                for (present, name) in [
            (raw.device.is_some(), "device"),
            (raw.dynamics.is_some(), "dynamics"),
            (raw.protocol.is_some(), "protocol"),
            (raw.run.is_some(), "run"),
        ] {
            if !present {
                c.missing.push(format!("[{name}]"));
            }
        }

        let d = raw.device.take().unwrap_or_default();
        let (ring_length, s_ring) = c.take("device", "ring_length", &d.ring_length);
        let (through_power, s_through) = c.take("device", "through_power", &d.through_power);
        let (neff_re, s_re) = c.take("device", "neff_re", &d.neff_re);
        let (neff_im, s_im) = c.take("device", "neff_im", &d.neff_im);
        let (group_index, s_ng) = c.take("device", "group_index", &d.group_index);
        let (dev_wavelength, s_dw) = c.take("device", "wavelength", &d.wavelength);
        let (aux_through_power, s_aux) = c.take("device", "aux_through_power", &d.aux_through_power);
        let (aux_ring_fraction, s_frac) = c.optional(&d.aux_ring_fraction, 1.0 / 16.0);

        let y = raw.dynamics.take().unwrap_or_default();
        let (wavelength, s_w) = c.take("dynamics", "wavelength", &y.wavelength);
        let (q_loss, s_ql) = c.take("dynamics", "q_loss", &y.q_loss);
        let (q_idler, s_qi) = c.take("dynamics", "q_idler", &y.q_idler);
        let (q_pump, s_qp) = c.take("dynamics", "q_pump", &y.q_pump);
        let (detuning, s_det) = c.take("dynamics", "detuning", &y.detuning);
        let (decision_delay, s_td) = c.take("dynamics", "decision_delay", &y.decision_delay);
        let (signal_response_time, s_rt) = c.take("dynamics", "signal_response_time", &y.signal_response_time);
        let (pump_width, s_pw) = c.take("dynamics", "pump_width", &y.pump_width);
        let (release_peak_rate, s_peak) = c.optional(&y.release_peak_rate, 1.0);
        let (release_min_width, s_minw) = c.optional(&y.release_min_width, 1e-13);
        let (initial_cutoff, s_cut) = c.optional(&y.initial_cutoff, 6);

        let p = raw.protocol.take().unwrap_or_default();
        let (efficiency, s_eta) = c.take("protocol", "efficiency", &p.efficiency);
        let (fidelity_threshold, s_fth) = c.take("protocol", "fidelity_threshold", &p.fidelity_threshold);
        let (g2_threshold, s_g2) = c.take("protocol", "g2_threshold", &p.g2_threshold);
        let (release_cap, s_cap) = c.take("protocol", "release_cap", &p.release_cap);
        let (max_bins, s_bins) = c.take("protocol", "max_bins", &p.max_bins);
        let (tau_bin_count, s_tc) = c.optional(&p.tau_bin_count, 6);
        let (tau_bins, s_taus) = c.optional(&p.tau_bins, Vec::new());
        let (pump_settings, s_ps) = c.optional(&p.pump_settings, pump_grid());
        let (passes, s_pass) = c.optional(&p.passes, 3);

        let r = raw.run.take().unwrap_or_default();
        let (n_traj, s_nt) = c.take("run", "n_traj", &r.n_traj);
        let (seed, _) = c.take("run", "seed", &r.seed);
        let (output_dir, s_out) = c.take("run", "output_dir", &r.output_dir);
        let (jobs, _) = c.optional(&r.jobs, 0);

        if !c.missing.is_empty() {
            return Err(ConfigError::Missing(c.missing));
        }

        c.require(positive(ring_length), &s_ring, "ring_length must be positive");
        c.require(through_power > 0.0 && through_power < 1.0, &s_through, "through_power must lie in (0, 1)");
        c.require(positive(neff_re), &s_re, "neff_re must be positive");
        c.require(neff_im >= 0.0 && neff_im.is_finite(), &s_im, "neff_im must be non-negative");
        c.require(positive(group_index), &s_ng, "group_index must be positive");
        c.require(positive(dev_wavelength), &s_dw, "wavelength must be positive");
        c.require(aux_through_power > 0.0 && aux_through_power <= 1.0, &s_aux, "aux_through_power must lie in (0, 1]");
        c.require(aux_ring_fraction > 0.0 && aux_ring_fraction <= 1.0, &s_frac, "aux_ring_fraction must lie in (0, 1]");

        c.require(positive(wavelength), &s_w, "wavelength must be positive");
        for (v, s, n) in [(q_loss, &s_ql, "q_loss"), (q_idler, &s_qi, "q_idler"), (q_pump, &s_qp, "q_pump")] {
            c.require(positive(v), s, format!("{n} must be positive"));
        }
        c.require(detuning.is_finite(), &s_det, "detuning must be finite");
        c.require(decision_delay >= 0.0 && decision_delay.is_finite(), &s_td, "decision_delay must be non-negative");
        c.require(positive(signal_response_time), &s_rt, "signal_response_time must be positive");
        c.require(positive(pump_width), &s_pw, "pump_width must be positive");
        c.require(positive(release_peak_rate), &s_peak, "release_peak_rate must be positive");
        c.require(positive(release_min_width), &s_minw, "release_min_width must be positive");
        c.require(initial_cutoff >= 4, &s_cut, "initial_cutoff must be at least 4");

        c.require(probability(efficiency), &s_eta, "efficiency must lie in [0, 1]");
        c.require(probability(fidelity_threshold), &s_fth, "fidelity_threshold must lie in [0, 1]");
        c.require(g2_threshold >= 0.0, &s_g2, "g2_threshold must be non-negative");
        c.require(release_cap >= 2, &s_cap, "release_cap must be at least 2");
        c.require(max_bins >= 1, &s_bins, "max_bins must be at least 1");
        c.require(passes >= 1, &s_pass, "passes must be at least 1");
        c.require(tau_bin_count >= 1, &s_tc, "tau_bin_count must be at least 1");
        c.require(
            tau_bins.windows(2).all(|w| w[1] > w[0]) && tau_bins.iter().all(|&t| t > decision_delay),
            &s_taus,
            "tau_bins must increase and exceed decision_delay",
        );
        c.require(
            !pump_settings.is_empty()
                && pump_settings.windows(2).all(|w| w[1] > w[0])
                && pump_settings.iter().all(|&s| s > 0.0 && s < 1.0),
            &s_ps,
            "pump_settings must increase within (0, 1)",
        );
        c.require(n_traj >= 1, &s_nt, "n_traj must be at least 1");
        c.require(!output_dir.is_empty(), &s_out, "output_dir must not be empty");

        let sp = raw.spectra.unwrap_or_default();
        let dflt = SpectraSection::default();
        let (points, s_pts) = c.optional(&sp.points, dflt.points);
        let (span_fsr, s_span) = c.optional(&sp.span_fsr, dflt.span_fsr);
        let (phase_points, s_php) = c.optional(&sp.phase_points, dflt.phase_points);
        c.require(points >= 2, &s_pts, "points must be at least 2");
        c.require(positive(span_fsr), &s_span, "span_fsr must be positive");
        c.require(phase_points >= 2, &s_php, "phase_points must be at least 2");

        let sw = raw.sweep.unwrap_or_default();
        let ds = SweepSection::default();
        let (efficiencies, s_e) = c.optional(&sw.efficiencies, ds.efficiencies);
        let (fidelity_thresholds, s_f) = c.optional(&sw.fidelity_thresholds, ds.fidelity_thresholds);
        let (g2_thresholds, s_g) = c.optional(&sw.g2_thresholds, ds.g2_thresholds);
        let (q_losses, s_q) = c.optional(&sw.q_losses, ds.q_losses);
        let (release_caps, s_c) = c.optional(&sw.release_caps, ds.release_caps);
        let (fid_scan, s_fs) = c.optional(&sw.fidelity_for_efficiency_scan, ds.fidelity_for_efficiency_scan);
        let (target, s_tg) = c.optional(&sw.combiner_target, ds.combiner_target);
        c.require(!efficiencies.is_empty() && efficiencies.iter().all(|&v| probability(v)), &s_e, "efficiencies must lie in [0, 1]");
        c.require(
            !fidelity_thresholds.is_empty() && fidelity_thresholds.iter().all(|&v| probability(v)),
            &s_f,
            "fidelity_thresholds must lie in [0, 1]",
        );
        c.require(!g2_thresholds.is_empty() && g2_thresholds.iter().all(|&v| v >= 0.0), &s_g, "g2_thresholds must be non-negative");
        c.require(!q_losses.is_empty() && q_losses.iter().all(|&v| positive(v)), &s_q, "q_losses must be positive");
        c.require(!release_caps.is_empty() && release_caps.iter().all(|&v| v >= 2), &s_c, "release_caps must be at least 2");
        c.require(probability(fid_scan), &s_fs, "fidelity_for_efficiency_scan must lie in [0, 1]");
        c.require(target > 0.0 && target < 1.0, &s_tg, "combiner_target must lie in (0, 1)");

        if !c.invalid.is_empty() {
            return Err(ConfigError::Invalid(c.invalid));
        }
        let mut config = ExperimentConfig {
            device: DeviceSection {
                ring_length,
                through_power,
                neff_re,
                neff_im,
                group_index,
                wavelength: dev_wavelength,
                aux_through_power,
                aux_ring_fraction,
            },
            dynamics: DynamicsSection {
                wavelength,
                q_loss,
                q_idler,
                q_pump,
                detuning,
                decision_delay,
                signal_response_time,
                pump_width,
                release_peak_rate,
                release_min_width,
                initial_cutoff,
            },
            protocol: ProtocolSection {
                efficiency,
                fidelity_threshold,
                g2_threshold,
                release_cap,
                max_bins,
                tau_bins,
                pump_settings,
                passes,
            },
            run: RunSection {
                n_traj,
                seed,
                output_dir: PathBuf::from(output_dir),
                jobs,
            },
            spectra: SpectraSection {
                points,
                span_fsr,
                phase_points,
            },
            sweep: SweepSection {
                efficiencies,
                fidelity_thresholds,
                g2_thresholds,
                q_losses,
                release_caps,
                fidelity_for_efficiency_scan: fid_scan,
                combiner_target: target,
            },
        };
        if config.protocol.tau_bins.is_empty() {
            config.protocol.tau_bins = tau_bin_grid(config.dynamics_params().idler_lifetime(), tau_bin_count);
            if config.protocol.tau_bins[0] <= decision_delay {
                return Err(ConfigError::Invalid(vec![Located {
                    line: locate(src, s_td.start).0,
                    column: locate(src, s_td.start).1,
                    message: "decision_delay exceeds the shortest default bin".into(),
                }]));
            }
        }
        Ok(config)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(json))
    }

    pub fn geometry(&self) -> DeviceGeometry {
        let d = &self.device;
        let mut g = DeviceGeometry::with_standard_ratios(
            d.ring_length,
            d.through_power.sqrt(),
            d.neff_re,
            d.neff_im,
            d.group_index,
            d.wavelength,
        );
        g.aux_through = d.aux_through_power.sqrt();
        g.aux_ring_length = d.ring_length * d.aux_ring_fraction;
        g
    }

    pub fn carrier(&self) -> f64 {
        std::f64::consts::TAU * SPEED_OF_LIGHT / self.dynamics.wavelength
    }

    pub fn dynamics_params(&self) -> DynamicsParams {
        let y = &self.dynamics;
        DynamicsParams::from_quality(self.carrier(), y.q_loss, y.q_idler, y.q_pump, y.detuning, y.pump_width)
            .with_cutoff(y.initial_cutoff)
    }

    /// Same experiment with a different intrinsic quality factor.
    pub fn with_q_loss(&self, q_loss: f64) -> Self {
        let mut c = self.clone();
        c.dynamics.q_loss = q_loss;
        c
    }

    pub fn release_limits(&self) -> ReleaseLimits {
        ReleaseLimits {
            response_rate: 1.0 / self.dynamics.signal_response_time,
            kappa_max: self.dynamics.release_peak_rate * self.dynamics_params().kappa_idler,
            min_width: self.dynamics.release_min_width,
        }
    }

    /// Single-bin protocol skeleton the optimiser grows from.
    pub fn base_protocol(&self) -> ProtocolConfig {
        let p = &self.protocol;
        ProtocolConfig {
            bins: 1,
            tau_bin: p.tau_bins[0],
            decision_delay: self.dynamics.decision_delay,
            efficiency: p.efficiency,
            fidelity_threshold: p.fidelity_threshold,
            g2_threshold: p.g2_threshold,
            release_cap: p.release_cap,
            evacuation_fidelity: 0.0,
            forced_evacuation: None,
            pump_samples: vec![(1, p.pump_settings[0])],
            release_settings: vec![0.5],
            kappa_loss: self.dynamics_params().kappa_loss,
        }
    }

    pub fn search_space(&self) -> SearchSpace {
        SearchSpace {
            passes: self.protocol.passes,
            ..SearchSpace::standard(self.protocol.max_bins, self.protocol.release_cap)
        }
    }
}
