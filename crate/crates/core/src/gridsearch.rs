//! Brute-force AC-OPF by dense multi-resolution grid search.
//!
//! Enumerates voltage magnitudes at every bus and angles at every non-slack
//! bus on a nested sequence of grids, evaluating the polar injection
//! equations directly at each point: generator buses must land inside their
//! box bounds, fixed-load buses must balance within a spacing-scaled
//! tolerance, and the objective is total series losses. The best cells of
//! each level seed the next, finer level until the requested resolution is
//! reached.
//!
//! This is an independent check for the conic relaxations on fixtures with
//! a handful of buses; the work per level is `points^dims` and the inner
//! evaluation loop is data-parallel (rayon behind the `parallel` feature,
//! with a sequential fallback that is also used for benchmark comparison).

use crate::acpf::series_losses;
use crate::netmodel::{BusKind, Network};
use nalgebra::DMatrix;
use num_complex::Complex64;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy)]
pub struct GridSearchOptions {
    /// Final grid spacing in every dimension (p.u. and radians).
    pub resolution: f64,
    /// Grid points per dimension per refinement level.
    pub points_per_dim: usize,
    /// Number of best cells carried to the next level.
    pub keep: usize,
    /// Half-width of the initial angle window around zero, radians.
    pub theta_range: f64,
}

impl Default for GridSearchOptions {
    fn default() -> Self {
        Self {
            resolution: 1e-3,
            points_per_dim: 9,
            keep: 16,
            theta_range: 0.6,
        }
    }
}

/// Best grid point found.
#[derive(Debug, Clone)]
pub struct GridSearchResult {
    /// Total series losses at the best point, p.u.
    pub objective: f64,
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// Worst constraint violation at the best point, p.u.
    pub worst_balance: f64,
    /// Total number of evaluated grid points.
    pub evaluated: usize,
}

struct EvalContext<'a> {
    net: &'a Network,
    ybus: DMatrix<Complex64>,
    /// dimension layout: v[0..n], then theta of these buses
    theta_buses: Vec<usize>,
}

impl<'a> EvalContext<'a> {
    fn new(net: &'a Network) -> Self {
        let slack = net.slack();
        let theta_buses = (0..net.n_buses()).filter(|&i| i != slack).collect();
        Self {
            net,
            ybus: crate::acpf::ybus(net),
            theta_buses,
        }
    }

    fn dims(&self) -> usize {
        self.net.n_buses() + self.theta_buses.len()
    }

    fn unpack(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.net.n_buses();
        let v = x[..n].to_vec();
        let mut theta = vec![0.0; n];
        for (k, &b) in self.theta_buses.iter().enumerate() {
            theta[b] = x[n + k];
        }
        (v, theta)
    }

    /// Constraint violation (0 when feasible) and series-loss objective.
    fn evaluate(&self, x: &[f64]) -> (f64, f64) {
        let n = self.net.n_buses();
        let (v, theta) = self.unpack(x);
        let volt: Vec<Complex64> = (0..n)
            .map(|i| Complex64::from_polar(v[i], theta[i]))
            .collect();
        let mut violation = 0.0f64;
        for (i, bus) in self.net.buses.iter().enumerate() {
            violation = violation.max(bus.v_min - v[i]).max(v[i] - bus.v_max);
            let mut acc = Complex64::default();
            for (k, vk) in volt.iter().enumerate() {
                acc += self.ybus[(i, k)] * vk;
            }
            let s = volt[i] * acc.conj();
            let pg = s.re + bus.p_load;
            let qg = s.im + bus.q_load;
            if bus.kind == BusKind::Slack {
                continue; // slack generation free
            }
            if bus.has_gen {
                violation = violation.max(bus.p_gen_min - pg).max(pg - bus.p_gen_max);
                violation = violation.max(bus.q_gen_min - qg).max(qg - bus.q_gen_max);
            } else {
                violation = violation.max(pg.abs()).max(qg.abs());
            }
        }
        for br in &self.net.branches {
            if br.ampacity_sq.is_finite() {
                let ys = Complex64::new(br.r, br.x).inv();
                let l_sq = ((volt[br.from_bus] - volt[br.to_bus]) * ys).norm_sqr();
                violation = violation.max(l_sq - br.ampacity_sq);
            }
        }
        (violation.max(0.0), series_losses(self.net, &v, &theta))
    }
}

#[derive(Clone, Copy)]
struct Cell {
    score: f64,
    violation: f64,
    objective: f64,
    index: usize,
}

/// Grid geometry of one refinement level.
struct Level {
    lo: Vec<f64>,
    step: Vec<f64>,
    pts: usize,
}

impl Level {
    fn point(&self, mut index: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.lo.len());
        for d in 0..self.lo.len() {
            let k = index % self.pts;
            index /= self.pts;
            x.push(self.lo[d] + self.step[d] * k as f64);
        }
        x
    }

    fn total(&self) -> usize {
        self.pts.pow(self.lo.len() as u32)
    }
}

// rank by objective once inside the level's feasibility slack, otherwise
// chase feasibility
fn score(violation: f64, objective: f64, slack: f64) -> f64 {
    if violation <= slack {
        objective
    } else {
        1e6 + violation
    }
}

/// Best cells of one level under two orderings: by penalized objective and
/// by raw violation. The second pool tracks the power-balance manifold even
/// while the level is too coarse for any cell to look feasible.
fn scan_level(
    ctx: &EvalContext,
    level: &Level,
    slack: f64,
    keep: usize,
    parallel: bool,
) -> Vec<Cell> {
    let total = level.total();
    let eval_one = |i: usize| -> Cell {
        let x = level.point(i);
        let (violation, objective) = ctx.evaluate(&x);
        Cell {
            score: score(violation, objective, slack),
            violation,
            objective,
            index: i,
        }
    };

    #[cfg(feature = "parallel")]
    let mut cells: Vec<Cell> = if parallel {
        (0..total).into_par_iter().map(eval_one).collect()
    } else {
        (0..total).map(eval_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let mut cells: Vec<Cell> = {
        let _ = parallel;
        (0..total).map(eval_one).collect()
    };

    // total order with index tie-break keeps the search deterministic
    cells.sort_by(|a, b| {
        a.score
            .partial_cmp(&b.score)
            .unwrap()
            .then(a.index.cmp(&b.index))
    });
    let mut picked: Vec<Cell> = cells.iter().take(keep).copied().collect();
    cells.sort_by(|a, b| {
        a.violation
            .partial_cmp(&b.violation)
            .unwrap()
            .then(a.index.cmp(&b.index))
    });
    for c in cells.into_iter().take(keep) {
        if !picked.iter().any(|p| p.index == c.index) {
            picked.push(c);
        }
    }
    picked
}

fn search(net: &Network, opts: &GridSearchOptions, parallel: bool) -> Option<GridSearchResult> {
    let ctx = EvalContext::new(net);
    let dims = ctx.dims();
    let pts = opts.points_per_dim.max(3);
    let n = net.n_buses();

    // worst |dP/dtheta| scale converts grid spacing into a balance slack
    let sens = net
        .branches
        .iter()
        .map(|br| 1.3 / Complex64::new(br.r, br.x).norm())
        .fold(1.0f64, f64::max);

    let mut lo = Vec::with_capacity(dims);
    let mut step = Vec::with_capacity(dims);
    for bus in &net.buses {
        lo.push(bus.v_min);
        step.push((bus.v_max - bus.v_min) / (pts - 1) as f64);
    }
    for _ in n..dims {
        lo.push(-opts.theta_range);
        step.push(2.0 * opts.theta_range / (pts - 1) as f64);
    }
    let mut levels = vec![Level { lo, step, pts }];
    let mut evaluated = 0usize;

    loop {
        let spacing = levels
            .iter()
            .flat_map(|l| l.step.iter().copied())
            .fold(0.0f64, f64::max);
        let slack = sens * spacing;
        let mut pool: Vec<(Cell, Vec<f64>)> = Vec::new();
        for level in &levels {
            evaluated += level.total();
            for cell in scan_level(&ctx, level, slack, opts.keep, parallel) {
                pool.push((cell, level.point(cell.index)));
            }
        }
        // carry the best of both orderings forward
        pool.sort_by(|a, b| {
            a.0.score
                .partial_cmp(&b.0.score)
                .unwrap()
                .then(a.0.index.cmp(&b.0.index))
        });
        let mut kept: Vec<(Cell, Vec<f64>)> = pool.iter().take(opts.keep).cloned().collect();
        pool.sort_by(|a, b| {
            a.0.violation
                .partial_cmp(&b.0.violation)
                .unwrap()
                .then(a.0.index.cmp(&b.0.index))
        });
        for (cell, x) in pool {
            if kept.len() >= 2 * opts.keep {
                break;
            }
            if !kept.iter().any(|(_, kx)| *kx == x) {
                kept.push((cell, x));
            }
        }

        if spacing <= opts.resolution {
            let (cell, x) = kept.into_iter().next()?;
            if cell.violation > sens * opts.resolution * 2.0 {
                return None; // nothing resembling a feasible point found
            }
            let (v, theta) = ctx.unpack(&x);
            return Some(GridSearchResult {
                objective: cell.objective,
                v,
                theta,
                worst_balance: cell.violation,
                evaluated,
            });
        }

        // refine a +-1 cell window around each kept point
        let parent_step: Vec<f64> = levels[0].step.clone();
        levels = kept
            .iter()
            .map(|(_, center)| {
                let mut llo = Vec::with_capacity(dims);
                let mut lstep = Vec::with_capacity(dims);
                for d in 0..dims {
                    let width = 2.0 * parent_step[d];
                    llo.push(center[d] - width / 2.0);
                    lstep.push(width / (pts - 1) as f64);
                }
                Level {
                    lo: llo,
                    step: lstep,
                    pts,
                }
            })
            .collect();
    }
}

/// Dense grid search over `(v, theta)`; parallel when the `parallel`
/// feature is enabled.
pub fn ac_opf_grid_search(net: &Network, opts: &GridSearchOptions) -> Option<GridSearchResult> {
    search(net, opts, cfg!(feature = "parallel"))
}

/// Sequential variant, kept callable for benchmark comparison.
pub fn ac_opf_grid_search_seq(net: &Network, opts: &GridSearchOptions) -> Option<GridSearchResult> {
    search(net, opts, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acpf::{solve_pf, PfOptions};
    use crate::netmodel::parse_matpower;

    fn two_bus() -> Network {
        parse_matpower(
            "
            mpc.baseMVA = 100;
            mpc.bus = [
                1 3 0  0  0 0 1 1 0 345 1 1.05 0.95;
                2 1 50 20 0 0 1 1 0 345 1 1.05 0.95;
            ];
            mpc.gen = [ 1 0 0 300 -300 1.0 100 1 300 0; ];
            mpc.branch = [ 1 2 0.01 0.1 0 0 0 0 0 0 1 -360 360; ];
        ",
        )
        .unwrap()
    }

    #[test]
    fn two_bus_grid_tracks_power_flow_losses() {
        let net = two_bus();
        let opts = GridSearchOptions {
            theta_range: 0.2,
            ..Default::default()
        };
        let found = ac_opf_grid_search(&net, &opts).expect("feasible point");
        // the optimum rides the upper voltage bound, so it must undercut the
        // setpoint power-flow losses but stay within the 1/v^2 scaling of them
        let pt = solve_pf(&net, &PfOptions::default()).unwrap();
        let pf_losses = crate::acpf::series_losses(&net, &pt.v, &pt.theta);
        assert!(
            found.objective <= pf_losses,
            "grid {} vs pf {}",
            found.objective,
            pf_losses
        );
        assert!(found.objective > 0.7 * pf_losses / (1.05 * 1.05));
        assert!(found.worst_balance <= 0.05);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_and_sequential_agree_exactly() {
        let net = two_bus();
        let opts = GridSearchOptions {
            resolution: 5e-3,
            points_per_dim: 7,
            keep: 8,
            theta_range: 0.2,
        };
        let a = ac_opf_grid_search(&net, &opts).unwrap();
        let b = ac_opf_grid_search_seq(&net, &opts).unwrap();
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.v, b.v);
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.evaluated, b.evaluated);
    }

    #[test]
    fn hopeless_load_yields_no_feasible_cell() {
        let text = "
            mpc.baseMVA = 100;
            mpc.bus = [
                1 3 0 0 0 0 1 1 0 345 1 1.05 0.95;
                2 1 5000 2000 0 0 1 1 0 345 1 1.05 0.95;
            ];
            mpc.gen = [ 1 0 0 300 -300 1.0 100 1 300 0; ];
            mpc.branch = [ 1 2 0.01 0.1 0 0 0 0 0 0 1 -360 360; ];
        ";
        let net = parse_matpower(text).unwrap();
        let opts = GridSearchOptions {
            resolution: 5e-3,
            points_per_dim: 7,
            keep: 8,
            theta_range: 0.3,
        };
        assert!(ac_opf_grid_search(&net, &opts).is_none());
    }
}
