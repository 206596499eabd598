//! The two conic OPF formulations and their post-processing.
//!
//! `build_opf_cr` assembles the angle-free branch-flow relaxation: bus
//! balances, squared-voltage drops and the loss definition lifted to
//! `(P, Q, l, v)`, with the quadratic equality relaxed to a rotated cone and
//! total series losses `sum r*l` as the objective.
//!
//! `build_soc_acopf` assembles the angle-retaining model: the same balances
//! over `(p_s, q_s, p_o, q_o, V)`, explicit bus angles with
//! `theta_l = theta_s - theta_r`, the linearized angle relation
//! `theta_l = X p_s - R q_s`, loss cones at both branch ends, ampacity in
//! measurable quantities, and the tightness-promoting coupling
//! `V_s V_r sin^2(theta_max) >= theta_l^2`, minimizing `sum p_o`.
//!
//! Post-processing measures the per-branch relaxation gap and attempts to
//! recover an AC operating point: branch angles from the arcsin formula,
//! bus angles from cycle consistency. On radial networks the integration
//! always succeeds; on meshed networks the cycle test is the gate.

use crate::acpf::OperatingPoint;
use crate::conic::{ConicError, ConicProgram, ConicSolution, LinExpr, SolveStatus};
use crate::feascheck::{cycle_consistency, CycleConsistency};
use crate::netmodel::{BusKind, Network};
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

/// Relaxation gaps at or below this are "tight".
pub const TIGHT_TOL: f64 = 1e-6;

/// Tolerance for solving the OPF models. The interior-point backend
/// certifies unscaled KKT residuals to about 1e-8 on the bundled meshed
/// case, so 1e-7 is the tightest level it meets reliably; the tightness
/// threshold keeps a 10x margin above it.
pub const MODEL_SOLVE_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum RelaxError {
    #[error(transparent)]
    Conic(#[from] ConicError),
    #[error("solver returned {0:?}")]
    Solver(SolveStatus),
    #[error("solution is not tight (max gap {max_gap:.3e}); recovery needs a tight point")]
    NotTight { max_gap: f64 },
    #[error("branch {branch}: |theta_l| exceeds v_s*v_r, arcsin undefined")]
    ArcsinDomain { branch: usize },
    #[error("non-positive squared voltage at bus {bus}")]
    DegenerateVoltage { bus: usize },
}

// ---------------------------------------------------------------------------
// variable maps
// ---------------------------------------------------------------------------

/// Buses that carry generator variables: every bus with a unit, plus the
/// slack (its injection stays free even without explicit generator data).
fn gen_buses(net: &Network) -> Vec<usize> {
    net.buses
        .iter()
        .filter(|b| b.has_gen || b.kind == BusKind::Slack)
        .map(|b| b.id)
        .collect()
}

/// Variable layout of the angle-free relaxation.
#[derive(Debug, Clone)]
pub struct OpfCrIndex {
    n_branches: usize,
    n_buses: usize,
    pub gen_buses: Vec<usize>,
}

impl OpfCrIndex {
    pub fn p(&self, l: usize) -> usize {
        l
    }
    pub fn q(&self, l: usize) -> usize {
        self.n_branches + l
    }
    pub fn l_sq(&self, l: usize) -> usize {
        2 * self.n_branches + l
    }
    pub fn v_sq(&self, n: usize) -> usize {
        3 * self.n_branches + n
    }
    pub fn p_gen(&self, slot: usize) -> usize {
        3 * self.n_branches + self.n_buses + slot
    }
    pub fn q_gen(&self, slot: usize) -> usize {
        3 * self.n_branches + self.n_buses + self.gen_buses.len() + slot
    }
    pub fn n_vars(&self) -> usize {
        3 * self.n_branches + self.n_buses + 2 * self.gen_buses.len()
    }
}

/// Variable layout of the angle-retaining model.
#[derive(Debug, Clone)]
pub struct SocAcopfIndex {
    n_branches: usize,
    n_buses: usize,
    pub gen_buses: Vec<usize>,
}

impl SocAcopfIndex {
    pub fn p_send(&self, l: usize) -> usize {
        l
    }
    pub fn q_send(&self, l: usize) -> usize {
        self.n_branches + l
    }
    pub fn p_loss(&self, l: usize) -> usize {
        2 * self.n_branches + l
    }
    pub fn q_loss(&self, l: usize) -> usize {
        3 * self.n_branches + l
    }
    pub fn theta_l(&self, l: usize) -> usize {
        4 * self.n_branches + l
    }
    pub fn v_sq(&self, n: usize) -> usize {
        5 * self.n_branches + n
    }
    pub fn theta_n(&self, n: usize) -> usize {
        5 * self.n_branches + self.n_buses + n
    }
    pub fn p_gen(&self, slot: usize) -> usize {
        5 * self.n_branches + 2 * self.n_buses + slot
    }
    pub fn q_gen(&self, slot: usize) -> usize {
        5 * self.n_branches + 2 * self.n_buses + self.gen_buses.len() + slot
    }
    pub fn n_vars(&self) -> usize {
        5 * self.n_branches + 2 * self.n_buses + 2 * self.gen_buses.len()
    }
}

// ---------------------------------------------------------------------------
// builders
// ---------------------------------------------------------------------------

fn add_common_bounds(
    prog: &mut ConicProgram,
    net: &Network,
    v_of: &dyn Fn(usize) -> usize,
    pg_of: &dyn Fn(usize) -> usize,
    qg_of: &dyn Fn(usize) -> usize,
    gens: &[usize],
) -> Result<(), ConicError> {
    for bus in &net.buses {
        let v = v_of(bus.id);
        prog.nonneg(LinExpr::var(v).offset(-bus.v_min * bus.v_min))?;
        prog.nonneg(LinExpr::constant(bus.v_max * bus.v_max).plus(v, -1.0))?;
    }
    for (slot, &b) in gens.iter().enumerate() {
        let bus = &net.buses[b];
        if bus.kind == BusKind::Slack {
            continue; // slack generation is free
        }
        prog.nonneg(LinExpr::var(pg_of(slot)).offset(-bus.p_gen_min))?;
        prog.nonneg(LinExpr::constant(bus.p_gen_max).plus(pg_of(slot), -1.0))?;
        prog.nonneg(LinExpr::var(qg_of(slot)).offset(-bus.q_gen_min))?;
        prog.nonneg(LinExpr::constant(bus.q_gen_max).plus(qg_of(slot), -1.0))?;
    }
    Ok(())
}

/// Assemble the angle-free relaxation. Loads are fixed at case values and
/// the objective is total series losses `sum r*l`.
pub fn build_opf_cr(net: &Network) -> Result<(ConicProgram, OpfCrIndex), RelaxError> {
    let idx = OpfCrIndex {
        n_branches: net.n_branches(),
        n_buses: net.n_buses(),
        gen_buses: gen_buses(net),
    };
    let mut prog = ConicProgram::new(idx.n_vars());
    let (g_eff, b_eff) = net.effective_shunts();

    for br in &net.branches {
        prog.add_cost(idx.l_sq(br.id), br.r);
    }

    for bus in &net.buses {
        let j = bus.id;
        let mut p = LinExpr::constant(bus.p_load).plus(idx.v_sq(j), g_eff[j]);
        let mut q = LinExpr::constant(bus.q_load).plus(idx.v_sq(j), -b_eff[j]);
        for br in &net.branches {
            if br.from_bus == j {
                p = p.plus(idx.p(br.id), 1.0);
                q = q.plus(idx.q(br.id), 1.0);
            }
            if br.to_bus == j {
                p = p.plus(idx.p(br.id), -1.0).plus(idx.l_sq(br.id), br.r);
                q = q.plus(idx.q(br.id), -1.0).plus(idx.l_sq(br.id), br.x);
            }
        }
        if let Some(slot) = idx.gen_buses.iter().position(|&g| g == j) {
            p = p.plus(idx.p_gen(slot), -1.0);
            q = q.plus(idx.q_gen(slot), -1.0);
        }
        prog.eq_zero(p)?;
        prog.eq_zero(q)?;
    }

    for br in &net.branches {
        let (f, t, l) = (br.from_bus, br.to_bus, br.id);
        prog.eq_zero(
            LinExpr::var(idx.v_sq(t))
                .plus(idx.v_sq(f), -1.0)
                .plus(idx.p(l), 2.0 * br.r)
                .plus(idx.q(l), 2.0 * br.x)
                .plus(idx.l_sq(l), -(br.r * br.r + br.x * br.x)),
        )?;
        // loss definition relaxed: P^2 + Q^2 <= l * v_from
        prog.add_rsoc(
            LinExpr::var(idx.p(l)),
            LinExpr::var(idx.q(l)),
            LinExpr::var(idx.l_sq(l)),
            LinExpr::var(idx.v_sq(f)),
        )?;
        if br.ampacity_sq.is_finite() {
            prog.nonneg(LinExpr::constant(br.ampacity_sq).plus(idx.l_sq(l), -1.0))?;
        }
    }

    add_common_bounds(
        &mut prog,
        net,
        &|n| idx.v_sq(n),
        &|s| idx.p_gen(s),
        &|s| idx.q_gen(s),
        &idx.gen_buses,
    )?;
    Ok((prog, idx))
}

/// Assemble the angle-retaining model. The `theta_max <= pi/2` hypothesis of
/// the angle-coupling cone is a `Network` invariant enforced at parse time.
pub fn build_soc_acopf(net: &Network) -> Result<(ConicProgram, SocAcopfIndex), RelaxError> {
    let idx = SocAcopfIndex {
        n_branches: net.n_branches(),
        n_buses: net.n_buses(),
        gen_buses: gen_buses(net),
    };
    let mut prog = ConicProgram::new(idx.n_vars());
    let (g_eff, b_eff) = net.effective_shunts();

    for br in &net.branches {
        prog.add_cost(idx.p_loss(br.id), 1.0);
    }

    for bus in &net.buses {
        let j = bus.id;
        let mut p = LinExpr::constant(bus.p_load).plus(idx.v_sq(j), g_eff[j]);
        let mut q = LinExpr::constant(bus.q_load).plus(idx.v_sq(j), -b_eff[j]);
        for br in &net.branches {
            if br.from_bus == j {
                p = p.plus(idx.p_send(br.id), 1.0);
                q = q.plus(idx.q_send(br.id), 1.0);
            }
            if br.to_bus == j {
                p = p.plus(idx.p_send(br.id), -1.0).plus(idx.p_loss(br.id), 1.0);
                q = q.plus(idx.q_send(br.id), -1.0).plus(idx.q_loss(br.id), 1.0);
            }
        }
        if let Some(slot) = idx.gen_buses.iter().position(|&g| g == j) {
            p = p.plus(idx.p_gen(slot), -1.0);
            q = q.plus(idx.q_gen(slot), -1.0);
        }
        prog.eq_zero(p)?;
        prog.eq_zero(q)?;
    }

    prog.eq_zero(LinExpr::var(idx.theta_n(net.slack())))?;

    for br in &net.branches {
        let (f, t, l) = (br.from_bus, br.to_bus, br.id);
        prog.eq_zero(
            LinExpr::var(idx.v_sq(f))
                .plus(idx.v_sq(t), -1.0)
                .plus(idx.p_send(l), -2.0 * br.r)
                .plus(idx.q_send(l), -2.0 * br.x)
                .plus(idx.p_loss(l), br.r)
                .plus(idx.q_loss(l), br.x),
        )?;
        // theta_l = theta_s - theta_r
        prog.eq_zero(
            LinExpr::var(idx.theta_l(l))
                .plus(idx.theta_n(f), -1.0)
                .plus(idx.theta_n(t), 1.0),
        )?;
        // loss consistency X p_o = R q_o
        prog.eq_zero(LinExpr::term(idx.p_loss(l), br.x).plus(idx.q_loss(l), -br.r))?;
        // linearized angle relation theta_l = X p_s - R q_s
        prog.eq_zero(
            LinExpr::var(idx.theta_l(l))
                .plus(idx.p_send(l), -br.x)
                .plus(idx.q_send(l), br.r),
        )?;
        // reactive-loss cones at both ends: q_o * V >= X * (p^2 + q^2)
        let sx = br.x.sqrt();
        prog.add_rsoc(
            LinExpr::term(idx.p_send(l), sx),
            LinExpr::term(idx.q_send(l), sx),
            LinExpr::var(idx.q_loss(l)),
            LinExpr::var(idx.v_sq(f)),
        )?;
        prog.add_rsoc(
            LinExpr::term(idx.p_send(l), sx).plus(idx.p_loss(l), -sx),
            LinExpr::term(idx.q_send(l), sx).plus(idx.q_loss(l), -sx),
            LinExpr::var(idx.q_loss(l)),
            LinExpr::var(idx.v_sq(t)),
        )?;
        // ampacity in measurable quantities at both ends
        if br.ampacity_sq.is_finite() {
            prog.nonneg(
                LinExpr::constant(br.ampacity_sq * br.x)
                    .plus(idx.v_sq(f), -br.b_from * br.b_from * br.x)
                    .plus(idx.q_send(l), 2.0 * br.b_from * br.x)
                    .plus(idx.q_loss(l), -1.0),
            )?;
            prog.nonneg(
                LinExpr::constant(br.ampacity_sq * br.x)
                    .plus(idx.v_sq(t), -br.b_to * br.b_to * br.x)
                    .plus(idx.q_send(l), 2.0 * br.b_to * br.x)
                    .plus(idx.q_loss(l), -2.0 * br.b_to * br.x - 1.0),
            )?;
        }
        // angle-coupling cone V_s V_r sin^2(theta_max) >= theta_l^2
        let s = br.theta_max.sin();
        prog.add_rsoc(
            LinExpr::var(idx.theta_l(l)),
            LinExpr::constant(0.0),
            LinExpr::term(idx.v_sq(f), s),
            LinExpr::term(idx.v_sq(t), s),
        )?;
    }

    add_common_bounds(
        &mut prog,
        net,
        &|n| idx.v_sq(n),
        &|s| idx.p_gen(s),
        &|s| idx.q_gen(s),
        &idx.gen_buses,
    )?;
    Ok((prog, idx))
}

// ---------------------------------------------------------------------------
// extracted solutions
// ---------------------------------------------------------------------------

/// Numeric solution of the angle-free relaxation.
#[derive(Debug, Clone)]
pub struct OpfCrVars {
    pub p_flow: Vec<f64>,
    pub q_flow: Vec<f64>,
    pub l_sq: Vec<f64>,
    pub v_sq: Vec<f64>,
    /// Generator output per bus (zero where no generator).
    pub p_gen: Vec<f64>,
    pub q_gen: Vec<f64>,
    pub objective: f64,
}

impl OpfCrIndex {
    pub fn extract(&self, sol: &ConicSolution) -> OpfCrVars {
        let x = &sol.x_primal;
        let (l, n) = (self.n_branches, self.n_buses);
        let mut p_gen = vec![0.0; n];
        let mut q_gen = vec![0.0; n];
        for (slot, &b) in self.gen_buses.iter().enumerate() {
            p_gen[b] = x[self.p_gen(slot)];
            q_gen[b] = x[self.q_gen(slot)];
        }
        OpfCrVars {
            p_flow: (0..l).map(|i| x[self.p(i)]).collect(),
            q_flow: (0..l).map(|i| x[self.q(i)]).collect(),
            l_sq: (0..l).map(|i| x[self.l_sq(i)]).collect(),
            v_sq: (0..n).map(|i| x[self.v_sq(i)]).collect(),
            p_gen,
            q_gen,
            objective: sol.objective,
        }
    }
}

/// Numeric solution of the angle-retaining model.
#[derive(Debug, Clone)]
pub struct SocAcopfVars {
    pub p_send: Vec<f64>,
    pub q_send: Vec<f64>,
    pub p_loss: Vec<f64>,
    pub q_loss: Vec<f64>,
    pub theta_l: Vec<f64>,
    pub v_sq: Vec<f64>,
    pub theta_n: Vec<f64>,
    pub p_gen: Vec<f64>,
    pub q_gen: Vec<f64>,
    pub objective: f64,
}

impl SocAcopfIndex {
    pub fn extract(&self, sol: &ConicSolution) -> SocAcopfVars {
        let x = &sol.x_primal;
        let (l, n) = (self.n_branches, self.n_buses);
        let mut p_gen = vec![0.0; n];
        let mut q_gen = vec![0.0; n];
        for (slot, &b) in self.gen_buses.iter().enumerate() {
            p_gen[b] = x[self.p_gen(slot)];
            q_gen[b] = x[self.q_gen(slot)];
        }
        SocAcopfVars {
            p_send: (0..l).map(|i| x[self.p_send(i)]).collect(),
            q_send: (0..l).map(|i| x[self.q_send(i)]).collect(),
            p_loss: (0..l).map(|i| x[self.p_loss(i)]).collect(),
            q_loss: (0..l).map(|i| x[self.q_loss(i)]).collect(),
            theta_l: (0..l).map(|i| x[self.theta_l(i)]).collect(),
            v_sq: (0..n).map(|i| x[self.v_sq(i)]).collect(),
            theta_n: (0..n).map(|i| x[self.theta_n(i)]).collect(),
            p_gen,
            q_gen,
            objective: sol.objective,
        }
    }
}

/// Build, solve and extract the angle-free relaxation.
pub fn solve_opf_cr(net: &Network, tol: f64) -> Result<OpfCrVars, RelaxError> {
    let (prog, idx) = build_opf_cr(net)?;
    let sol = prog.solve(tol)?;
    if sol.status != SolveStatus::Optimal {
        return Err(RelaxError::Solver(sol.status));
    }
    Ok(idx.extract(&sol))
}

/// Build, solve and extract the angle-retaining model.
pub fn solve_soc_acopf(net: &Network, tol: f64) -> Result<SocAcopfVars, RelaxError> {
    let (prog, idx) = build_soc_acopf(net)?;
    let sol = prog.solve(tol)?;
    if sol.status != SolveStatus::Optimal {
        return Err(RelaxError::Solver(sol.status));
    }
    Ok(idx.extract(&sol))
}

// ---------------------------------------------------------------------------
// tightness and recovery
// ---------------------------------------------------------------------------

/// Per-branch data consumed by the tightness test.
#[derive(Debug, Clone, Copy)]
pub struct BranchTightness {
    pub p_send: f64,
    pub q_send: f64,
    pub v_send_sq: f64,
    pub x: f64,
    pub q_loss: f64,
}

/// Anything exposing sending-end flows and a reactive loss per branch.
pub trait TightnessView {
    fn tightness_data(&self, net: &Network) -> Vec<BranchTightness>;
}

impl TightnessView for SocAcopfVars {
    fn tightness_data(&self, net: &Network) -> Vec<BranchTightness> {
        net.branches
            .iter()
            .map(|br| BranchTightness {
                p_send: self.p_send[br.id],
                q_send: self.q_send[br.id],
                v_send_sq: self.v_sq[br.from_bus],
                x: br.x,
                q_loss: self.q_loss[br.id],
            })
            .collect()
    }
}

impl TightnessView for OpfCrVars {
    fn tightness_data(&self, net: &Network) -> Vec<BranchTightness> {
        net.branches
            .iter()
            .map(|br| BranchTightness {
                p_send: self.p_flow[br.id],
                q_send: self.q_flow[br.id],
                v_send_sq: self.v_sq[br.from_bus],
                x: br.x,
                q_loss: br.x * self.l_sq[br.id],
            })
            .collect()
    }
}

/// Per-branch relaxation gaps `q_o - X (p_s^2 + q_s^2) / V_s`.
#[derive(Debug, Clone, Serialize)]
pub struct TightnessReport {
    pub gap: Vec<f64>,
    pub max_gap: f64,
    pub is_tight: bool,
}

/// Measure the relaxation gap of a solved model.
pub fn tightness_gap<T: TightnessView>(
    sol: &T,
    net: &Network,
) -> Result<TightnessReport, RelaxError> {
    let mut gap = Vec::with_capacity(net.n_branches());
    for (l, rec) in sol.tightness_data(net).into_iter().enumerate() {
        if rec.v_send_sq <= 0.0 {
            return Err(RelaxError::DegenerateVoltage {
                bus: net.branches[l].from_bus,
            });
        }
        let bound = rec.x * (rec.p_send * rec.p_send + rec.q_send * rec.q_send) / rec.v_send_sq;
        gap.push(rec.q_loss - bound);
    }
    let max_gap = gap.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    Ok(TightnessReport {
        gap,
        max_gap,
        is_tight: max_gap <= TIGHT_TOL,
    })
}

/// Branch angle recovered from the angle surrogate:
/// `arcsin(theta_l / (v_s * v_r))` with voltage magnitudes, not squares.
pub fn branch_angle_from_surrogate(
    theta_l: f64,
    v_send: f64,
    v_recv: f64,
) -> Result<f64, RelaxError> {
    let ratio = theta_l / (v_send * v_recv);
    if ratio.abs() > 1.0 {
        return Err(RelaxError::ArcsinDomain { branch: usize::MAX });
    }
    Ok(ratio.asin())
}

/// Outcome of recovering an AC candidate from a tight solution.
#[derive(Debug, Clone)]
pub struct Recovery {
    /// Recovered per-branch angle differences, radians.
    pub branch_angles: Vec<f64>,
    /// Cycle-consistency check of those branch angles.
    pub cycle: CycleConsistency,
    /// Candidate operating point; `None` when the branch angles are not
    /// cycle-consistent (not AC-recoverable).
    pub point: Option<OperatingPoint>,
    pub ac_recoverable: bool,
}

fn recovery_from_branch_angles(
    net: &Network,
    branch_angles: Vec<f64>,
    v: Vec<f64>,
    p_gen: &[f64],
    q_gen: &[f64],
) -> Recovery {
    let cycle = cycle_consistency(net, &branch_angles);
    let point = cycle.theta_n().map(|theta| OperatingPoint {
        v,
        theta: theta.to_vec(),
        p_inj: net.buses.iter().map(|b| p_gen[b.id] - b.p_load).collect(),
        q_inj: net.buses.iter().map(|b| q_gen[b.id] - b.q_load).collect(),
    });
    Recovery {
        ac_recoverable: point.is_some(),
        branch_angles,
        cycle,
        point,
    }
}

/// Recover a candidate AC operating point from a tight angle-retaining
/// solution: `v = sqrt(V)`, branch angles from the arcsin formula, and bus
/// angles by cycle consistency.
pub fn recover_ac_point(sol: &SocAcopfVars, net: &Network) -> Result<Recovery, RelaxError> {
    let tight = tightness_gap(sol, net)?;
    if !tight.is_tight {
        return Err(RelaxError::NotTight {
            max_gap: tight.max_gap,
        });
    }
    for (n, vs) in sol.v_sq.iter().enumerate() {
        if *vs <= 0.0 {
            return Err(RelaxError::DegenerateVoltage { bus: n });
        }
    }
    let v: Vec<f64> = sol.v_sq.iter().map(|s| s.sqrt()).collect();
    let mut branch_angles = Vec::with_capacity(net.n_branches());
    for br in &net.branches {
        let angle = branch_angle_from_surrogate(sol.theta_l[br.id], v[br.from_bus], v[br.to_bus])
            .map_err(|_| RelaxError::ArcsinDomain { branch: br.id })?;
        branch_angles.push(angle);
    }
    Ok(recovery_from_branch_angles(
        net,
        branch_angles,
        v,
        &sol.p_gen,
        &sol.q_gen,
    ))
}

/// Recover bus angles from a tight angle-free solution. The implied branch
/// angle difference is `arg(v_i - conj(z) * S_ij)` computed from the lifted
/// variables; bus angles follow by cycle consistency (always solvable on
/// radial networks, not necessarily on meshed ones).
pub fn recover_angles_opf_cr(net: &Network, sol: &OpfCrVars) -> Result<Recovery, RelaxError> {
    let tight = tightness_gap(sol, net)?;
    if !tight.is_tight {
        return Err(RelaxError::NotTight {
            max_gap: tight.max_gap,
        });
    }
    for (n, vs) in sol.v_sq.iter().enumerate() {
        if *vs <= 0.0 {
            return Err(RelaxError::DegenerateVoltage { bus: n });
        }
    }
    let branch_angles: Vec<f64> = net
        .branches
        .iter()
        .map(|br| {
            let z = Complex64::new(br.r, br.x);
            let s = Complex64::new(sol.p_flow[br.id], sol.q_flow[br.id]);
            (Complex64::new(sol.v_sq[br.from_bus], 0.0) - z.conj() * s).arg()
        })
        .collect();
    let v: Vec<f64> = sol.v_sq.iter().map(|s| s.sqrt()).collect();
    Ok(recovery_from_branch_angles(
        net,
        branch_angles,
        v,
        &sol.p_gen,
        &sol.q_gen,
    ))
}

/// Residual of the linearized angle relation `theta_l - (X p_s - R q_s)` at
/// a candidate point, per branch. Feeding it the branch angle differences of
/// an AC point together with its Step-1 branch flows measures how far that
/// AC-feasible point sits from the angle-retaining model's feasible set.
pub fn linear_angle_residual(
    net: &Network,
    theta_l: &[f64],
    p_send: &[f64],
    q_send: &[f64],
) -> Vec<f64> {
    net.branches
        .iter()
        .map(|br| theta_l[br.id] - (br.x * p_send[br.id] - br.r * q_send[br.id]))
        .collect()
}

// ---------------------------------------------------------------------------
// solution dump
// ---------------------------------------------------------------------------

/// JSON-facing solution dump shared by both models.
#[derive(Debug, Clone, Serialize)]
pub struct SolutionDump {
    pub objective: f64,
    pub branches: Vec<BranchDump>,
    pub buses: Vec<BusDump>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchDump {
    pub p_s: f64,
    pub q_s: f64,
    pub p_o: f64,
    pub q_o: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_l: Option<f64>,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BusDump {
    #[serde(rename = "V")]
    pub v_sq: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
}

impl SolutionDump {
    pub fn from_soc(sol: &SocAcopfVars, net: &Network, gaps: &TightnessReport) -> Self {
        Self {
            objective: sol.objective,
            branches: net
                .branches
                .iter()
                .map(|br| BranchDump {
                    p_s: sol.p_send[br.id],
                    q_s: sol.q_send[br.id],
                    p_o: sol.p_loss[br.id],
                    q_o: sol.q_loss[br.id],
                    theta_l: Some(sol.theta_l[br.id]),
                    gap: gaps.gap[br.id],
                })
                .collect(),
            buses: (0..net.n_buses())
                .map(|n| BusDump {
                    v_sq: sol.v_sq[n],
                    theta: Some(sol.theta_n[n]),
                })
                .collect(),
        }
    }

    pub fn from_cr(sol: &OpfCrVars, net: &Network, gaps: &TightnessReport) -> Self {
        Self {
            objective: sol.objective,
            branches: net
                .branches
                .iter()
                .map(|br| BranchDump {
                    p_s: sol.p_flow[br.id],
                    q_s: sol.q_flow[br.id],
                    p_o: br.r * sol.l_sq[br.id],
                    q_o: br.x * sol.l_sq[br.id],
                    theta_l: None,
                    gap: gaps.gap[br.id],
                })
                .collect(),
            buses: (0..net.n_buses())
                .map(|n| BusDump {
                    v_sq: sol.v_sq[n],
                    theta: None,
                })
                .collect(),
        }
    }
}
