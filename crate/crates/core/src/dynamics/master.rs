use num_complex::Complex64;

use super::chain::{Sector, SectorOperator};
use super::trajectory::TOP_SHELL_LIMIT;
use super::{DynamicsParams, TwoModeState};
use crate::error::{Error, Result};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Density operator restricted to its `n_s − n_i` diagonal blocks, which is
/// the form reached from any Fock-diagonal initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    cutoff: usize,
    blocks: Vec<Vec<Complex64>>,
}

impl DensityMatrix {
    fn zeros(cutoff: usize) -> Self {
        let blocks = (-(cutoff as i64)..=cutoff as i64)
            .map(|d| vec![Complex64::new(0.0, 0.0); Sector::new(d, cutoff).len.pow(2)])
            .collect();
        Self { cutoff, blocks }
    }

    fn sector(&self, b: usize) -> Sector {
        Sector::new(b as i64 - self.cutoff as i64, self.cutoff)
    }

    /// Incoherent mixture of Fock states `(weight, n_s, n_i)`.
    pub fn mixture(cutoff: usize, terms: &[(f64, usize, usize)]) -> Result<Self> {
        let mut rho = Self::zeros(cutoff);
        for &(w, ns, ni) in terms {
            if ns > cutoff || ni > cutoff {
                return Err(Error::invalid(format!("Fock state |{ns},{ni}⟩ exceeds cutoff {cutoff}")));
            }
            let b = (ns as i64 - ni as i64 + cutoff as i64) as usize;
            let s = rho.sector(b);
            let j = s.index(ns, ni).expect("state lies in its own sector");
            rho.blocks[b][j * s.len + j] += w;
        }
        Ok(rho)
    }

    pub fn fock(ns: usize, ni: usize, cutoff: usize) -> Result<Self> {
        Self::mixture(cutoff, &[(1.0, ns, ni)])
    }

    pub fn from_pure(state: &TwoModeState) -> Result<Self> {
        let (sector, amps) = state
            .to_sector()
            .ok_or_else(|| Error::invalid("pure state must lie in a single n_s − n_i sector"))?;
        let mut rho = Self::zeros(state.cutoff());
        let b = (sector.d + state.cutoff() as i64) as usize;
        for (j, a) in amps.iter().enumerate() {
            for (k, c) in amps.iter().enumerate() {
                rho.blocks[b][j * sector.len + k] = a * c.conj();
            }
        }
        Ok(rho)
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn trace(&self) -> f64 {
        (0..self.blocks.len())
            .map(|b| {
                let l = self.sector(b).len;
                (0..l).map(|j| self.blocks[b][j * l + j].re).sum::<f64>()
            })
            .sum()
    }

    pub fn population(&self, ns: usize, ni: usize) -> f64 {
        if ns > self.cutoff || ni > self.cutoff {
            return 0.0;
        }
        let b = (ns as i64 - ni as i64 + self.cutoff as i64) as usize;
        let s = self.sector(b);
        s.index(ns, ni).map_or(0.0, |j| self.blocks[b][j * s.len + j].re)
    }

    fn diagonal(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.blocks.len()).flat_map(move |b| {
            let s = self.sector(b);
            (0..s.len).map(move |j| {
                let (ns, ni) = s.numbers(j);
                (ns, ni, self.blocks[b][j * s.len + j].re)
            })
        })
    }

    /// `(⟨n_s⟩, ⟨n_i⟩)`, not renormalised.
    pub fn mean_numbers(&self) -> (f64, f64) {
        self.diagonal()
            .fold((0.0, 0.0), |(s, i), (ns, ni, p)| (s + ns as f64 * p, i + ni as f64 * p))
    }

    pub fn signal_distribution(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cutoff + 1];
        for (ns, _, p) in self.diagonal() {
            out[ns] += p;
        }
        out
    }

    pub fn top_shell_population(&self) -> f64 {
        let n = self.cutoff;
        self.diagonal().filter(|&(ns, ni, _)| ns == n || ni == n).map(|(_, _, p)| p).sum()
    }
}

struct Generator {
    ops: Vec<SectorOperator>,
    /// For block `b` element `j`: source element in block `b−1` under `a_i`, with `√(n_i+1)`.
    from_idler: Vec<Vec<Option<(usize, f64)>>>,
    /// For block `b` element `j`: source element in block `b+1` under `a_s`, with `√(n_s+1)`.
    from_signal: Vec<Vec<Option<(usize, f64)>>>,
    idler_rate: f64,
    signal_rate: f64,
    jumps: bool,
}

impl Generator {
    fn new(params: &DynamicsParams, jumps: bool) -> Self {
        let n = params.cutoff;
        let sectors: Vec<Sector> = (-(n as i64)..=n as i64).map(|d| Sector::new(d, n)).collect();
        let ops = sectors.iter().map(|s| SectorOperator::new(*s, params)).collect();
        let link = |b: usize, up: bool| -> Vec<Option<(usize, f64)>> {
            let s = sectors[b];
            (0..s.len)
                .map(|j| {
                    let (ns, ni) = s.numbers(j);
                    let (src_b, ns2, ni2, f) = if up {
                        (b.checked_sub(1)?, ns, ni + 1, ni + 1)
                    } else {
                        (b + 1, ns + 1, ni, ns + 1)
                    };
                    let src = sectors.get(src_b)?;
                    src.index(ns2, ni2).map(|k| (k, (f as f64).sqrt()))
                })
                .collect()
        };
        Self {
            ops,
            from_idler: (0..sectors.len()).map(|b| link(b, true)).collect(),
            from_signal: (0..sectors.len()).map(|b| link(b, false)).collect(),
            idler_rate: 2.0 * (params.kappa_idler + params.kappa_loss),
            signal_rate: 2.0 * (params.kappa_signal + params.kappa_loss),
            jumps,
        }
    }

    /// Diagonal generator `−i(h_j − h_k*)` of each block element.
    fn rates(&self) -> Vec<Vec<Complex64>> {
        self.ops
            .iter()
            .map(|op| {
                let l = op.sector.len;
                let mut r = Vec::with_capacity(l * l);
                for j in 0..l {
                    for k in 0..l {
                        r.push(-I * (op.diag[j] - op.diag[k].conj()));
                    }
                }
                r
            })
            .collect()
    }

    /// Off-diagonal part: pair-term commutator and jump feeding.
    fn remainder(&self, x: f64, rho: &[Vec<Complex64>], out: &mut [Vec<Complex64>]) {
        for (b, op) in self.ops.iter().enumerate() {
            let l = op.sector.len;
            let c = &op.coupling;
            let r = &rho[b];
            let o = &mut out[b];
            for j in 0..l {
                for k in 0..l {
                    let mut acc = Complex64::new(0.0, 0.0);
                    if x != 0.0 {
                        let mut comm = Complex64::new(0.0, 0.0);
                        if j > 0 {
                            comm += c[j - 1] * r[(j - 1) * l + k];
                        }
                        if j + 1 < l {
                            comm += c[j] * r[(j + 1) * l + k];
                        }
                        if k > 0 {
                            comm -= c[k - 1] * r[j * l + k - 1];
                        }
                        if k + 1 < l {
                            comm -= c[k] * r[j * l + k + 1];
                        }
                        acc += -I * x * comm;
                    }
                    if self.jumps {
                        if let (Some((sj, fj)), Some((sk, fk))) = (self.from_idler[b][j], self.from_idler[b][k]) {
                            let ls = self.ops[b - 1].sector.len;
                            acc += self.idler_rate * fj * fk * rho[b - 1][sj * ls + sk];
                        }
                        if let (Some((sj, fj)), Some((sk, fk))) = (self.from_signal[b][j], self.from_signal[b][k]) {
                            let ls = self.ops[b + 1].sector.len;
                            acc += self.signal_rate * fj * fk * rho[b + 1][sj * ls + sk];
                        }
                    }
                    o[j * l + k] = acc;
                }
            }
        }
    }
}

fn axpy_blocks(out: &mut [Vec<Complex64>], f: impl Fn(usize, usize) -> Complex64) {
    for (b, block) in out.iter_mut().enumerate() {
        for (e, v) in block.iter_mut().enumerate() {
            *v = f(b, e);
        }
    }
}

/// Classical RK4 on the (optionally jump-free) Lindblad equation. Every stage
/// is a generator image, so the trace is conserved to rounding. `observe` sees
/// the state after every step.
pub(crate) fn evolve(
    rho: &DensityMatrix,
    t0: f64,
    t1: f64,
    params: &DynamicsParams,
    jumps: bool,
    mut observe: impl FnMut(f64, &DensityMatrix),
) -> DensityMatrix {
    let gen = Generator::new(params, jumps);
    let rates = gen.rates();
    let mut state = rho.clone();
    if t1 <= t0 {
        return state;
    }
    // Keep |λ h| ≤ 1 for the fastest element decay and pair coupling.
    let n = params.cutoff as f64;
    let fastest = 2.0 * n * (params.kappa_idler.max(params.kappa_signal) + params.kappa_loss + params.pump.scale);
    let h_nominal = params.step().min(1.0 / fastest.max(1e-300));
    let steps = ((t1 - t0) / h_nominal).ceil().max(1.0) as usize;
    let h = (t1 - t0) / steps as f64;
    let zero = || state.blocks.iter().map(|b| vec![Complex64::new(0.0, 0.0); b.len()]).collect::<Vec<_>>();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (zero(), zero(), zero(), zero(), zero());
    let deriv = |x: f64, r: &[Vec<Complex64>], out: &mut [Vec<Complex64>]| {
        gen.remainder(x, r, out);
        for ((o, rb), lb) in out.iter_mut().zip(r).zip(&rates) {
            for ((v, a), l) in o.iter_mut().zip(rb).zip(lb) {
                *v += l * a;
            }
        }
    };
    for step in 0..steps {
        let t = t0 + step as f64 * h;
        let (x0, xm, x1) = (params.pump.energy(t), params.pump.energy(t + 0.5 * h), params.pump.energy(t + h));
        let r = &state.blocks;
        deriv(x0, r, &mut k1);
        axpy_blocks(&mut tmp, |b, e| r[b][e] + 0.5 * h * k1[b][e]);
        deriv(xm, &tmp, &mut k2);
        axpy_blocks(&mut tmp, |b, e| r[b][e] + 0.5 * h * k2[b][e]);
        deriv(xm, &tmp, &mut k3);
        axpy_blocks(&mut tmp, |b, e| r[b][e] + h * k3[b][e]);
        deriv(x1, &tmp, &mut k4);
        axpy_blocks(&mut tmp, |b, e| r[b][e] + h / 6.0 * (k1[b][e] + 2.0 * (k2[b][e] + k3[b][e]) + k4[b][e]));
        std::mem::swap(&mut state.blocks, &mut tmp);
        observe(t + h, &state);
    }
    state
}

fn checked(
    rho: &DensityMatrix,
    t0: f64,
    t1: f64,
    params: &DynamicsParams,
    jumps: bool,
) -> Result<DensityMatrix> {
    params.validate()?;
    if rho.cutoff() != params.cutoff {
        return Err(Error::invalid("density matrix cutoff differs from the dynamics cutoff"));
    }
    let mut worst: f64 = 0.0;
    let out = evolve(rho, t0, t1, params, jumps, |_, r| {
        let tr = r.trace();
        if tr > 0.0 {
            worst = worst.max(r.top_shell_population() / tr);
        }
    });
    if worst > TOP_SHELL_LIMIT {
        return Err(Error::Truncation {
            cutoff: params.cutoff,
            population: worst,
            limit: TOP_SHELL_LIMIT,
        });
    }
    Ok(out)
}

/// Lindblad evolution with the trajectory Hamiltonian and collapse channels.
pub fn master_equation_evolve(rho: &DensityMatrix, t0: f64, t1: f64, params: &DynamicsParams) -> Result<DensityMatrix> {
    checked(rho, t0, t1, params, true)
}

/// The zero-jump part `−i(H_eff ρ − ρ H_eff†)` alone; its trace is the no-jump probability.
pub fn master_equation_no_jump(rho: &DensityMatrix, t0: f64, t1: f64, params: &DynamicsParams) -> Result<DensityMatrix> {
    checked(rho, t0, t1, params, false)
}
