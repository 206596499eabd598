//! Polar Newton-Raphson AC power flow.
//!
//! Produces the AC-feasible operating points that seed the feasibility
//! pipeline: bus voltage magnitudes/angles plus the net injections realized
//! at the solution (slack and PV reactive injections included).

use crate::netmodel::{BusKind, Network};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PfError {
    #[error("power flow diverged after {iterations} iterations (mismatch {mismatch:.3e})")]
    Diverged { iterations: usize, mismatch: f64 },
    #[error("singular Jacobian at iteration {0}")]
    SingularJacobian(usize),
}

/// A solved (or candidate) operating point in polar coordinates.
///
/// `p_inj`/`q_inj` are net bus injections (generation minus load); shunt and
/// charging consumption is part of the network, not of the injection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub v: Vec<f64>,
    #[serde(rename = "theta_rad")]
    pub theta: Vec<f64>,
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct PfOptions {
    /// Infinity-norm mismatch tolerance, p.u.
    pub tol: f64,
    pub max_iter: usize,
    /// Start PQ magnitudes at 1.0; otherwise at the midpoint of the bounds.
    pub flat_start: bool,
}

impl Default for PfOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 30,
            flat_start: true,
        }
    }
}

/// Dense complex bus admittance matrix (pi-model branches plus bus shunts).
pub(crate) fn ybus(net: &Network) -> DMatrix<Complex64> {
    let n = net.n_buses();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for br in &net.branches {
        let ys = Complex64::new(br.r, br.x).inv();
        let (f, t) = (br.from_bus, br.to_bus);
        y[(f, f)] += ys + Complex64::new(0.0, br.b_from);
        y[(t, t)] += ys + Complex64::new(0.0, br.b_to);
        y[(f, t)] -= ys;
        y[(t, f)] -= ys;
    }
    for bus in &net.buses {
        y[(bus.id, bus.id)] += Complex64::new(bus.g_shunt, bus.b_shunt);
    }
    y
}

fn injections(y: &DMatrix<Complex64>, v: &[f64], theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = v.len();
    let volt: Vec<Complex64> = (0..n)
        .map(|i| Complex64::from_polar(v[i], theta[i]))
        .collect();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let mut acc = Complex64::default();
        for k in 0..n {
            acc += y[(i, k)] * volt[k];
        }
        let s = volt[i] * acc.conj();
        p[i] = s.re;
        q[i] = s.im;
    }
    (p, q)
}

/// Solve the AC power flow. PV buses hold their voltage setpoint, the slack
/// bus holds its setpoint at angle zero, and PV reactive limits are not
/// enforced (no PV/PQ switching).
pub fn solve_pf(net: &Network, opts: &PfOptions) -> Result<OperatingPoint, PfError> {
    let n = net.n_buses();
    let y = ybus(net);
    let g = y.map(|c| c.re);
    let b = y.map(|c| c.im);

    let mut pv: Vec<usize> = Vec::new();
    let mut pq: Vec<usize> = Vec::new();
    let mut v = vec![1.0; n];
    let mut theta = vec![0.0; n];
    let mut p_spec = vec![0.0; n];
    let mut q_spec = vec![0.0; n];
    for bus in &net.buses {
        p_spec[bus.id] = bus.p_gen_set - bus.p_load;
        q_spec[bus.id] = bus.q_gen_set - bus.q_load;
        match bus.kind {
            BusKind::Slack | BusKind::Pv => {
                v[bus.id] = bus.v_setpoint.expect("validated pv/slack has setpoint");
                if bus.kind == BusKind::Pv {
                    pv.push(bus.id);
                }
            }
            BusKind::Pq => {
                v[bus.id] = if opts.flat_start {
                    1.0
                } else {
                    0.5 * (bus.v_min + bus.v_max)
                };
                pq.push(bus.id);
            }
        }
    }

    // unknown ordering: theta over pv+pq, then v over pq
    let ang: Vec<usize> = pv.iter().chain(pq.iter()).copied().collect();
    let m = ang.len() + pq.len();

    let mismatch = |p: &[f64], q: &[f64]| -> DVector<f64> {
        let mut f = DVector::zeros(m);
        for (r, &i) in ang.iter().enumerate() {
            f[r] = p[i] - p_spec[i];
        }
        for (r, &i) in pq.iter().enumerate() {
            f[ang.len() + r] = q[i] - q_spec[i];
        }
        f
    };

    let mut iterations = 0;
    loop {
        let (p, q) = injections(&y, &v, &theta);
        let f = mismatch(&p, &q);
        let norm = f.amax();
        if norm <= opts.tol {
            return Ok(OperatingPoint {
                v,
                theta,
                p_inj: p,
                q_inj: q,
            });
        }
        if iterations >= opts.max_iter {
            return Err(PfError::Diverged {
                iterations,
                mismatch: norm,
            });
        }
        iterations += 1;

        // polar Jacobian over (theta_ang, v_pq)
        let mut jac = DMatrix::zeros(m, m);
        for (r, &i) in ang.iter().enumerate() {
            for (c, &k) in ang.iter().enumerate() {
                jac[(r, c)] = if i == k {
                    -q[i] - b[(i, i)] * v[i] * v[i]
                } else {
                    let t = theta[i] - theta[k];
                    v[i] * v[k] * (g[(i, k)] * t.sin() - b[(i, k)] * t.cos())
                };
            }
            for (c, &k) in pq.iter().enumerate() {
                jac[(r, ang.len() + c)] = if i == k {
                    (p[i] + g[(i, i)] * v[i] * v[i]) / v[i]
                } else {
                    let t = theta[i] - theta[k];
                    v[i] * (g[(i, k)] * t.cos() + b[(i, k)] * t.sin())
                };
            }
        }
        for (r, &i) in pq.iter().enumerate() {
            for (c, &k) in ang.iter().enumerate() {
                jac[(ang.len() + r, c)] = if i == k {
                    p[i] - g[(i, i)] * v[i] * v[i]
                } else {
                    let t = theta[i] - theta[k];
                    -v[i] * v[k] * (g[(i, k)] * t.cos() + b[(i, k)] * t.sin())
                };
            }
            for (c, &k) in pq.iter().enumerate() {
                jac[(ang.len() + r, ang.len() + c)] = if i == k {
                    (q[i] - b[(i, i)] * v[i] * v[i]) / v[i]
                } else {
                    let t = theta[i] - theta[k];
                    v[i] * (g[(i, k)] * t.sin() - b[(i, k)] * t.cos())
                };
            }
        }

        let lu = jac.lu();
        let dx = lu
            .solve(&(-f))
            .ok_or(PfError::SingularJacobian(iterations))?;
        for (r, &i) in ang.iter().enumerate() {
            theta[i] += dx[r];
        }
        for (r, &i) in pq.iter().enumerate() {
            v[i] += dx[ang.len() + r];
        }
    }
}

/// Residual of the polar bus-balance equations at a candidate point: the
/// `2N` vector `[p_inj - p(v,theta); q_inj - q(v,theta)]`. Zero exactly when
/// the point is an AC power-flow solution.
pub fn pf_mismatch(net: &Network, pt: &OperatingPoint) -> Vec<f64> {
    let y = ybus(net);
    let (p, q) = injections(&y, &pt.v, &pt.theta);
    let n = net.n_buses();
    let mut out = Vec::with_capacity(2 * n);
    out.extend(pt.p_inj.iter().zip(&p).map(|(inj, calc)| inj - calc));
    out.extend(pt.q_inj.iter().zip(&q).map(|(inj, calc)| inj - calc));
    out
}

/// Complex power entering each branch at its two terminals (charging
/// included), computed from polar bus voltages.
pub fn branch_flows(net: &Network, v: &[f64], theta: &[f64]) -> Vec<(Complex64, Complex64)> {
    net.branches
        .iter()
        .map(|br| {
            let vf = Complex64::from_polar(v[br.from_bus], theta[br.from_bus]);
            let vt = Complex64::from_polar(v[br.to_bus], theta[br.to_bus]);
            let ys = Complex64::new(br.r, br.x).inv();
            let i_f = (vf - vt) * ys + Complex64::new(0.0, br.b_from) * vf;
            let i_t = (vt - vf) * ys + Complex64::new(0.0, br.b_to) * vt;
            (vf * i_f.conj(), vt * i_t.conj())
        })
        .collect()
}

/// Total series active losses `sum r * |I_series|^2`.
pub fn series_losses(net: &Network, v: &[f64], theta: &[f64]) -> f64 {
    net.branches
        .iter()
        .map(|br| {
            let vf = Complex64::from_polar(v[br.from_bus], theta[br.from_bus]);
            let vt = Complex64::from_polar(v[br.to_bus], theta[br.to_bus]);
            let i = (vf - vt) * Complex64::new(br.r, br.x).inv();
            br.r * i.norm_sqr()
        })
        .sum()
}
