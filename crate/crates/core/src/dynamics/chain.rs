use num_complex::Complex64;

use super::DynamicsParams;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Layout of the `d = n_s − n_i` sector: element `j` is `|start_s + j, start_i + j⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Sector {
    pub d: i64,
    pub start_s: usize,
    pub start_i: usize,
    pub len: usize,
}

impl Sector {
    pub fn new(d: i64, cutoff: usize) -> Self {
        let start_s = d.max(0) as usize;
        let start_i = (-d).max(0) as usize;
        Self {
            d,
            start_s,
            start_i,
            len: cutoff + 1 - start_s.max(start_i),
        }
    }

    pub fn numbers(&self, j: usize) -> (usize, usize) {
        (self.start_s + j, self.start_i + j)
    }

    /// Chain index of `|n_s, n_i⟩`, if it lies in this sector.
    pub fn index(&self, ns: usize, ni: usize) -> Option<usize> {
        (ns as i64 - ni as i64 == self.d && ns >= self.start_s)
            .then(|| ns - self.start_s)
            .filter(|&j| j < self.len)
    }
}

/// Per-sector coefficients of the effective Hamiltonian: diagonal `h_j`
/// (detuning − i·decay) and the pair-term couplings `√((n_s+1)(n_i+1))`.
#[derive(Debug, Clone)]
pub(crate) struct SectorOperator {
    pub sector: Sector,
    pub diag: Vec<Complex64>,
    pub coupling: Vec<f64>,
}

impl SectorOperator {
    pub fn new(sector: Sector, params: &DynamicsParams) -> Self {
        let diag = (0..sector.len)
            .map(|j| {
                let (ns, ni) = sector.numbers(j);
                let (ns, ni) = (ns as f64, ni as f64);
                let energy = params.detuning_signal * ns + params.detuning_idler * ni;
                let decay = (params.kappa_signal + params.kappa_loss) * ns + (params.kappa_idler + params.kappa_loss) * ni;
                Complex64::new(energy, -decay)
            })
            .collect();
        let coupling = (0..sector.len.saturating_sub(1))
            .map(|j| {
                let (ns, ni) = sector.numbers(j);
                (((ns + 1) * (ni + 1)) as f64).sqrt()
            })
            .collect();
        Self { sector, diag, coupling }
    }

    /// `out = −i X V ψ` for the pair term `V`.
    fn drive(&self, x: f64, psi: &[Complex64], out: &mut [Complex64]) {
        let n = psi.len();
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            if j > 0 {
                acc += self.coupling[j - 1] * psi[j - 1];
            }
            if j + 1 < n {
                acc += self.coupling[j] * psi[j + 1];
            }
            out[j] = -I * x * acc;
        }
    }

    pub fn propagator(&self, dt: f64) -> Vec<Complex64> {
        self.diag.iter().map(|h| (-I * h * dt).exp()).collect()
    }
}

/// Scratch space for one Lawson (integrating-factor) RK4 step.
#[derive(Debug, Clone, Default)]
pub(crate) struct Stepper {
    k: [Vec<Complex64>; 4],
    tmp: Vec<Complex64>,
}

impl Stepper {
    /// Advance `psi` from `t` to `t + h` under `−i(D + X(t)V)`; the diagonal part
    /// `D` is integrated exactly through the propagators `half = e^{−iDh/2}`, `full = e^{−iDh}`.
    #[allow(clippy::too_many_arguments)]
    pub fn step<F: Fn(f64) -> f64>(
        &mut self,
        op: &SectorOperator,
        x: &F,
        t: f64,
        h: f64,
        half: &[Complex64],
        full: &[Complex64],
        psi: &mut [Complex64],
    ) {
        let n = psi.len();
        for v in self.k.iter_mut().chain(std::iter::once(&mut self.tmp)) {
            v.resize(n, Complex64::new(0.0, 0.0));
        }
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        let (x0, xm, x1) = (x(t), x(t + 0.5 * h), x(t + h));

        op.drive(x0, psi, k1);
        for j in 0..n {
            tmp[j] = half[j] * (psi[j] + 0.5 * h * k1[j]);
        }
        op.drive(xm, tmp, k2);
        for j in 0..n {
            tmp[j] = half[j] * psi[j] + 0.5 * h * k2[j];
        }
        op.drive(xm, tmp, k3);
        for j in 0..n {
            tmp[j] = full[j] * psi[j] + h * half[j] * k3[j];
        }
        op.drive(x1, tmp, k4);
        for j in 0..n {
            psi[j] = full[j] * psi[j] + h / 6.0 * (full[j] * k1[j] + 2.0 * half[j] * (k2[j] + k3[j]) + k4[j]);
        }
    }
}

pub(crate) fn norm_sqr(psi: &[Complex64]) -> f64 {
    psi.iter().map(|z| z.norm_sqr()).sum()
}
