use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chain::{norm_sqr, Sector, SectorOperator, Stepper};
use super::{DynamicsParams, TwoModeState};
use crate::error::{Error, Result};
use crate::numeric::bisect;

pub(crate) const TOP_SHELL_LIMIT: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    IdlerOut,
    IdlerLoss,
    SignalOut,
    SignalLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub channel: Channel,
    pub before_split: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub jumps: Vec<JumpEvent>,
    pub final_state: TwoModeState,
    /// Largest normalised top-shell population seen along the trajectory.
    pub max_top_shell: f64,
}

impl TrajectoryRecord {
    /// Idler detector-waveguide emissions `(before split, after split)`.
    pub fn idler_counts(&self) -> (usize, usize) {
        self.jumps
            .iter()
            .filter(|j| j.channel == Channel::IdlerOut)
            .fold((0, 0), |(a, b), j| if j.before_split { (a + 1, b) } else { (a, b + 1) })
    }
}

/// Normalised chain state at a requested time.
#[derive(Debug, Clone)]
pub(crate) struct Snapshot {
    pub sector: Sector,
    pub amps: Vec<Complex64>,
}

impl Snapshot {
    pub fn signal_distribution(&self, cutoff: usize) -> Vec<f64> {
        let mut p = vec![0.0; cutoff + 1];
        for (j, a) in self.amps.iter().enumerate() {
            p[self.sector.numbers(j).0] += a.norm_sqr();
        }
        p
    }

    pub fn mean_idler(&self) -> f64 {
        self.amps
            .iter()
            .enumerate()
            .map(|(j, a)| self.sector.numbers(j).1 as f64 * a.norm_sqr())
            .sum()
    }
}

pub(crate) struct Outcome {
    pub jumps: Vec<(f64, Channel)>,
    pub snapshots: Vec<Snapshot>,
    pub max_top_shell: f64,
}

/// Shared, immutable data for many trajectories of one parameter set.
pub(crate) struct Engine {
    params: DynamicsParams,
    t0: f64,
    h: f64,
    quiet: f64,
    /// `X` at half-step grid points `t0 + k·h/2` up to the quiet time.
    x_grid: Vec<f64>,
    ops: Vec<SectorOperator>,
    half: Vec<Vec<Complex64>>,
    full: Vec<Vec<Complex64>>,
}

impl Engine {
    pub fn new(params: &DynamicsParams, t0: f64) -> Self {
        let n = params.cutoff;
        let driven = params.pump.scale > 0.0;
        let quiet = if driven { params.pump.quiet_time().max(t0) } else { t0 };
        let h = if driven { params.step() } else { f64::INFINITY };
        let x_grid = if driven {
            let points = (2.0 * (quiet - t0) / h).ceil() as usize + 3;
            (0..points).map(|k| params.pump.energy(t0 + 0.5 * h * k as f64)).collect()
        } else {
            Vec::new()
        };
        let ops: Vec<SectorOperator> = (-(n as i64)..=n as i64)
            .map(|d| SectorOperator::new(Sector::new(d, n), params))
            .collect();
        let (half, full) = if driven {
            (ops.iter().map(|o| o.propagator(0.5 * h)).collect(), ops.iter().map(|o| o.propagator(h)).collect())
        } else {
            (Vec::new(), Vec::new())
        };
        Self {
            params: params.clone(),
            t0,
            h,
            quiet,
            x_grid,
            ops,
            half,
            full,
        }
    }

    fn op(&self, d: i64) -> usize {
        (d + self.params.cutoff as i64) as usize
    }

    fn grid_time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.h
    }

    /// Evolve from `t0` to `t1` with the norm-threshold jump method, recording
    /// normalised snapshots at each of the (sorted) `snapshot_times`.
    pub fn simulate<R: Rng>(
        &self,
        sector: Sector,
        amps: Vec<Complex64>,
        t1: f64,
        snapshot_times: &[f64],
        rng: &mut R,
    ) -> Outcome {
        let p = &self.params;
        let mut sector = sector;
        let mut psi = amps;
        let mut t = self.t0;
        let mut next_grid = 1usize;
        let mut on_grid = true;
        let mut threshold: f64 = rng.random();
        let mut stepper = Stepper::default();
        let mut jumps = Vec::new();
        let mut snapshots = Vec::with_capacity(snapshot_times.len());
        let mut pending = snapshot_times.iter().copied().peekable();
        let mut max_top: f64 = top_shell(&psi);
        let driven_until = self.quiet.min(t1);

        loop {
            while let Some(&ts) = pending.peek() {
                if ts > t {
                    break;
                }
                let n = norm_sqr(&psi).sqrt();
                snapshots.push(Snapshot {
                    sector,
                    amps: psi.iter().map(|a| a / n).collect(),
                });
                pending.next();
            }
            if t >= t1 {
                break;
            }
            let stop = pending.peek().copied().unwrap_or(t1).min(t1);
            let oi = self.op(sector.d);
            let op = &self.ops[oi];

            if t < driven_until {
                let grid = self.grid_time(next_grid);
                let target = grid.min(stop).min(driven_until);
                let cached = on_grid && target == grid;
                let dt = target - t;
                let mut trial = psi.clone();
                let x_at = |tt: f64| p.pump.energy(tt);
                if cached {
                    let k = 2 * (next_grid - 1);
                    let xs = [self.x_grid[k], self.x_grid[k + 1], self.x_grid[k + 2]];
                    let x_cached = |tt: f64| {
                        let r = (tt - t) / self.h;
                        if r < 0.25 {
                            xs[0]
                        } else if r < 0.75 {
                            xs[1]
                        } else {
                            xs[2]
                        }
                    };
                    stepper.step(op, &x_cached, t, dt, &self.half[oi], &self.full[oi], &mut trial);
                } else {
                    let (hh, hf) = (op.propagator(0.5 * dt), op.propagator(dt));
                    stepper.step(op, &x_at, t, dt, &hh, &hf, &mut trial);
                }
                if norm_sqr(&trial) >= threshold {
                    psi = trial;
                    t = target;
                    on_grid = target == grid;
                    if on_grid {
                        next_grid += 1;
                    }
                    max_top = max_top.max(top_shell(&psi));
                    continue;
                }
                // The jump falls inside this step; locate it to 1e-6 of the step.
                let eval = |s: f64, out: &mut Vec<Complex64>, st: &mut Stepper| {
                    out.clear();
                    out.extend_from_slice(&psi);
                    let (hh, hf) = (op.propagator(0.5 * s), op.propagator(s));
                    st.step(op, &x_at, t, s, &hh, &hf, out);
                };
                let mut buf = Vec::with_capacity(psi.len());
                let (mut lo, mut hi) = (0.0, dt);
                while hi - lo > 1e-6 * dt {
                    let mid = 0.5 * (lo + hi);
                    eval(mid, &mut buf, &mut stepper);
                    if norm_sqr(&buf) >= threshold {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let s = 0.5 * (lo + hi);
                eval(s, &mut buf, &mut stepper);
                psi = buf;
                t += s;
                on_grid = false;
            } else {
                // Drive has vanished: every basis state decays independently.
                let decay: Vec<f64> = op.diag.iter().map(|h| -2.0 * h.im).collect();
                let weights: Vec<f64> = psi.iter().map(|a| a.norm_sqr()).collect();
                let norm_at = |tau: f64| -> f64 { weights.iter().zip(&decay).map(|(w, g)| w * (-g * tau).exp()).sum() };
                let span = stop - t;
                let tau = if norm_at(span) >= threshold {
                    span
                } else {
                    bisect(|tau| norm_at(tau) - threshold, 0.0, span, 1e-15).unwrap_or(span)
                };
                let prop = op.propagator(tau);
                for (a, u) in psi.iter_mut().zip(&prop) {
                    *a *= u;
                }
                t += tau;
                on_grid = false;
                if tau == span {
                    t = stop;
                    continue;
                }
            }

            let channel = choose_channel(sector, &psi, p, rng);
            let (next_sector, next_psi) = apply_jump(sector, &psi, channel, p.cutoff);
            sector = next_sector;
            psi = next_psi;
            jumps.push((t, channel));
            threshold = rng.random();
            max_top = max_top.max(top_shell(&psi));
        }
        Outcome {
            jumps,
            snapshots,
            max_top_shell: max_top,
        }
    }
}

fn top_shell(psi: &[Complex64]) -> f64 {
    psi.last().map_or(0.0, |a| a.norm_sqr()) / norm_sqr(psi)
}

fn choose_channel<R: Rng>(sector: Sector, psi: &[Complex64], p: &DynamicsParams, rng: &mut R) -> Channel {
    let (mut ns, mut ni) = (0.0, 0.0);
    for (j, a) in psi.iter().enumerate() {
        let (s, i) = sector.numbers(j);
        ns += s as f64 * a.norm_sqr();
        ni += i as f64 * a.norm_sqr();
    }
    let rates = [
        (Channel::IdlerOut, p.kappa_idler * ni),
        (Channel::IdlerLoss, p.kappa_loss * ni),
        (Channel::SignalOut, p.kappa_signal * ns),
        (Channel::SignalLoss, p.kappa_loss * ns),
    ];
    let total: f64 = rates.iter().map(|r| r.1).sum();
    let mut u = rng.random::<f64>() * total;
    for (c, r) in rates {
        if u < r {
            return c;
        }
        u -= r;
    }
    rates.iter().rev().find(|r| r.1 > 0.0).map_or(Channel::SignalLoss, |r| r.0)
}

/// Apply `a_i` or `a_s` (up to the rate prefactor) and renormalise.
fn apply_jump(sector: Sector, psi: &[Complex64], channel: Channel, cutoff: usize) -> (Sector, Vec<Complex64>) {
    let idler = matches!(channel, Channel::IdlerOut | Channel::IdlerLoss);
    let next = Sector::new(if idler { sector.d + 1 } else { sector.d - 1 }, cutoff);
    let mut out = vec![Complex64::new(0.0, 0.0); next.len];
    for (j, a) in psi.iter().enumerate() {
        let (ns, ni) = sector.numbers(j);
        let (ns2, ni2, f) = if idler {
            if ni == 0 {
                continue;
            }
            (ns, ni - 1, ni)
        } else {
            if ns == 0 {
                continue;
            }
            (ns - 1, ni, ns)
        };
        if let Some(k) = next.index(ns2, ni2) {
            out[k] = a * (f as f64).sqrt();
        }
    }
    let n = norm_sqr(&out).sqrt();
    out.iter_mut().for_each(|a| *a /= n);
    (next, out)
}

/// One quantum-jump trajectory from `initial` over `[t0, t1]`; idler emissions are
/// classified against the decision time `t_split`.
pub fn run_trajectory(
    initial: &TwoModeState,
    t0: f64,
    t1: f64,
    t_split: f64,
    params: &DynamicsParams,
    seed: u64,
) -> Result<TrajectoryRecord> {
    params.validate()?;
    if initial.cutoff() != params.cutoff {
        return Err(Error::invalid("initial state cutoff differs from the dynamics cutoff"));
    }
    if !(t0 < t_split && t_split <= t1) {
        return Err(Error::invalid("require t0 < t_split <= t1"));
    }
    let (sector, amps) = initial
        .to_sector()
        .ok_or_else(|| Error::invalid("initial state must lie in a single n_s − n_i sector"))?;
    let n = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    let amps = amps.into_iter().map(|a| a / n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = Engine::new(params, t0).simulate(sector, amps, t1, &[t1], &mut rng);
    if out.max_top_shell > TOP_SHELL_LIMIT {
        return Err(Error::Truncation {
            cutoff: params.cutoff,
            population: out.max_top_shell,
            limit: TOP_SHELL_LIMIT,
        });
    }
    let last = &out.snapshots[0];
    Ok(TrajectoryRecord {
        jumps: out
            .jumps
            .into_iter()
            .map(|(time, channel)| JumpEvent {
                time,
                channel,
                before_split: time <= t_split,
            })
            .collect(),
        final_state: TwoModeState::from_sector(last.sector, &last.amps, params.cutoff),
        max_top_shell: out.max_top_shell,
    })
}
