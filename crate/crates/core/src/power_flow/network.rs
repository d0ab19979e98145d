//! Bus admittance matrix and per-branch π-model stamps.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::grid_case::GridCase;

/// Two-port admittances of one branch, with the tap as an ideal transformer on the from-side.
#[derive(Debug, Clone, Copy)]
pub struct BranchAdmittance {
    /// Positions in `GridCase::buses`.
    pub from: usize,
    pub to: usize,
    pub yff: Complex64,
    pub yft: Complex64,
    pub ytf: Complex64,
    pub ytt: Complex64,
}

impl BranchAdmittance {
    /// Complex power entering the branch at each end.
    pub fn end_powers(&self, v: &[Complex64]) -> (Complex64, Complex64) {
        let (vf, vt) = (v[self.from], v[self.to]);
        let i_f = self.yff * vf + self.yft * vt;
        let i_t = self.ytf * vf + self.ytt * vt;
        (vf * i_f.conj(), vt * i_t.conj())
    }

    /// Directional derivative of both end powers for voltage perturbations `dvf`, `dvt`.
    pub fn end_power_derivative(
        &self,
        v: &[Complex64],
        dvf: Complex64,
        dvt: Complex64,
    ) -> (Complex64, Complex64) {
        let (vf, vt) = (v[self.from], v[self.to]);
        let i_f = self.yff * vf + self.yft * vt;
        let i_t = self.ytf * vf + self.ytt * vt;
        let di_f = self.yff * dvf + self.yft * dvt;
        let di_t = self.ytf * dvf + self.ytt * dvt;
        (
            dvf * i_f.conj() + vf * di_f.conj(),
            dvt * i_t.conj() + vt * di_t.conj(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    pub ybus: DMatrix<Complex64>,
    pub branches: Vec<BranchAdmittance>,
}

impl Network {
    /// Build the network for the given per-branch tap ratios (1.0 where there is no tap).
    pub fn build(case: &GridCase, ratios: &[f64]) -> Network {
        let n = case.buses.len();
        let mut ybus = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        for (i, b) in case.buses.iter().enumerate() {
            ybus[(i, i)] += Complex64::new(b.gs, b.bs);
        }
        let mut branches = Vec::with_capacity(case.branches.len());
        for (k, br) in case.branches.iter().enumerate() {
            let f = case.bus_index(br.from_bus).expect("validated endpoint");
            let t = case.bus_index(br.to_bus).expect("validated endpoint");
            let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
            let ych = Complex64::new(0.0, br.b_shunt / 2.0);
            let tau = ratios[k];
            let adm = BranchAdmittance {
                from: f,
                to: t,
                yff: (ys + ych) / (tau * tau),
                yft: -ys / tau,
                ytf: -ys / tau,
                ytt: ys + ych,
            };
            ybus[(f, f)] += adm.yff;
            ybus[(f, t)] += adm.yft;
            ybus[(t, f)] += adm.ytf;
            ybus[(t, t)] += adm.ytt;
            branches.push(adm);
        }
        Network { ybus, branches }
    }

    /// Complex power injected at every bus by the network, `V ⊙ conj(Y V)`.
    pub fn injections(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = v.len();
        (0..n)
            .map(|i| {
                let mut cur = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    cur += self.ybus[(i, k)] * v[k];
                }
                v[i] * cur.conj()
            })
            .collect()
    }
}
