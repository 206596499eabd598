//! Standard-form cone programs and the solve contract used by both OPF
//! relaxations.
//!
//! A program is `min c'x  s.t.  A x + s = b, s in K`, where `K` is a product
//! of zero, nonnegative, and second-order cones, stored block by block. The
//! backend is the Clarabel interior-point solver, but conformance is defined
//! by the KKT residuals this module re-computes itself: a solution is only
//! reported `Optimal` when the measured primal/dual residuals and duality
//! gap pass the requested tolerance.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default solve tolerance; tight classifications elsewhere use 1e-6 to
/// leave solver headroom.
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("constraint references variable {var} but program has {n_vars} variables")]
    BadVariable { var: usize, n_vars: usize },
    #[error("second-order cone blocks need at least 2 rows, got {0}")]
    ConeTooSmall(usize),
    #[error("solver setup failed: {0}")]
    Setup(String),
    #[error("program dump parse error at line {line}: {msg}")]
    Dump { line: usize, msg: String },
}

/// Cone tag of a constraint block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    Zero,
    Nonneg,
    Soc(usize),
}

/// Sparse affine expression `sum coef * x_i + constant`.
#[derive(Debug, Clone, Default)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn var(i: usize) -> Self {
        Self {
            terms: vec![(i, 1.0)],
            constant: 0.0,
        }
    }

    /// Single scaled term `coef * x_i`.
    pub fn term(i: usize, coef: f64) -> Self {
        Self {
            terms: vec![(i, coef)],
            constant: 0.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    /// Add `coef * x_i` to the expression.
    pub fn plus(mut self, i: usize, coef: f64) -> Self {
        if coef != 0.0 {
            self.terms.push((i, coef));
        }
        self
    }

    pub fn offset(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + self.constant
    }

    fn max_var(&self) -> Option<usize> {
        self.terms.iter().map(|&(i, _)| i).max()
    }

    /// Collapse duplicate variable indices and drop zeros, sorted by index.
    fn normalized(&self) -> Vec<(usize, f64)> {
        let mut terms = self.terms.clone();
        terms.sort_by_key(|&(i, _)| i);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (i, c) in terms {
            match out.last_mut() {
                Some((j, acc)) if *j == i => *acc += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|&(_, c)| c != 0.0);
        out
    }
}

/// One standard-form row `a'x + s_row = b`.
#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<(usize, f64)>,
    b: f64,
}

#[derive(Debug, Clone)]
struct Block {
    cone: Cone,
    rows: Vec<Row>,
}

/// A cone program under construction (and the dump/load exchange form).
#[derive(Debug, Clone)]
pub struct ConicProgram {
    n_vars: usize,
    objective: Vec<f64>,
    blocks: Vec<Block>,
}

impl ConicProgram {
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            objective: vec![0.0; n_vars],
            blocks: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_rows(&self) -> usize {
        self.blocks.iter().map(|b| b.rows.len()).sum()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn cone_of(&self, block: usize) -> Cone {
        self.blocks[block].cone
    }

    /// Set the linear objective coefficient of one variable.
    pub fn set_cost(&mut self, var: usize, coef: f64) {
        self.objective[var] = coef;
    }

    pub fn add_cost(&mut self, var: usize, coef: f64) {
        self.objective[var] += coef;
    }

    fn check(&self, exprs: &[&LinExpr]) -> Result<(), ConicError> {
        for e in exprs {
            if let Some(i) = e.max_var() {
                if i >= self.n_vars {
                    return Err(ConicError::BadVariable {
                        var: i,
                        n_vars: self.n_vars,
                    });
                }
            }
        }
        Ok(())
    }

    fn push_block(&mut self, cone: Cone, rows: Vec<Row>) -> usize {
        self.blocks.push(Block { cone, rows });
        self.blocks.len() - 1
    }

    /// Constrain `expr = 0` (zero cone). Returns the block handle.
    pub fn eq_zero(&mut self, expr: LinExpr) -> Result<usize, ConicError> {
        self.check(&[&expr])?;
        let row = Row {
            coeffs: expr.normalized(),
            b: -expr.constant,
        };
        Ok(self.push_block(Cone::Zero, vec![row]))
    }

    /// Constrain `expr >= 0` (nonnegative slack).
    pub fn nonneg(&mut self, expr: LinExpr) -> Result<usize, ConicError> {
        self.check(&[&expr])?;
        let coeffs: Vec<(usize, f64)> = expr
            .normalized()
            .into_iter()
            .map(|(i, c)| (i, -c))
            .collect();
        let row = Row {
            coeffs,
            b: expr.constant,
        };
        Ok(self.push_block(Cone::Nonneg, vec![row]))
    }

    /// Constrain the expression vector to the second-order cone:
    /// `exprs[0] >= || exprs[1..] ||_2`.
    pub fn soc(&mut self, exprs: Vec<LinExpr>) -> Result<usize, ConicError> {
        if exprs.len() < 2 {
            return Err(ConicError::ConeTooSmall(exprs.len()));
        }
        self.check(&exprs.iter().collect::<Vec<_>>())?;
        let rows: Vec<Row> = exprs
            .into_iter()
            .map(|e| Row {
                coeffs: e.normalized().into_iter().map(|(i, c)| (i, -c)).collect(),
                b: e.constant,
            })
            .collect();
        let k = rows.len();
        Ok(self.push_block(Cone::Soc(k), rows))
    }

    /// Rotated-cone constraint `a1^2 + a2^2 <= u * v, u >= 0, v >= 0`,
    /// appended as the standard block `||(2a1, 2a2, u-v)|| <= u+v` plus the
    /// two sign constraints. Returns the handle of the SOC block.
    pub fn add_rsoc(
        &mut self,
        a1: LinExpr,
        a2: LinExpr,
        u: LinExpr,
        v: LinExpr,
    ) -> Result<usize, ConicError> {
        let head = add_exprs(&u, &v);
        let tail = sub_exprs(&u, &v);
        let handle = self.soc(vec![head, scale_expr(&a1, 2.0), scale_expr(&a2, 2.0), tail])?;
        self.nonneg(u)?;
        self.nonneg(v)?;
        Ok(handle)
    }

    /// Slack vector `b - A x` of one block at a candidate point.
    pub fn slack(&self, block: usize, x: &[f64]) -> Vec<f64> {
        self.blocks[block]
            .rows
            .iter()
            .map(|r| r.b - r.coeffs.iter().map(|&(i, c)| c * x[i]).sum::<f64>())
            .collect()
    }

    /// Distance of the slack vector of `block` from its cone (0 = member).
    pub fn cone_violation(&self, block: usize, x: &[f64]) -> f64 {
        let s = self.slack(block, x);
        cone_distance(self.blocks[block].cone, &s)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    // -- solver ------------------------------------------------------------

    /// Solve to the given KKT tolerance.
    pub fn solve(&self, tol: f64) -> Result<ConicSolution, ConicError> {
        let m = self.n_rows();
        let n = self.n_vars;

        // A in CSC, rows laid out block by block.
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut b = Vec::with_capacity(m);
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        let mut row_idx = 0usize;
        for blk in &self.blocks {
            match blk.cone {
                Cone::Zero => merge_cone(&mut cones, SupportedConeT::ZeroConeT(blk.rows.len())),
                Cone::Nonneg => {
                    merge_cone(&mut cones, SupportedConeT::NonnegativeConeT(blk.rows.len()))
                }
                Cone::Soc(k) => cones.push(SupportedConeT::SecondOrderConeT(k)),
            }
            for row in &blk.rows {
                for &(i, c) in &row.coeffs {
                    cols[i].push((row_idx, c));
                }
                b.push(row.b);
                row_idx += 1;
            }
        }
        let mut colptr = Vec::with_capacity(n + 1);
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        let mut nnz = 0usize;
        for col in cols.iter_mut() {
            colptr.push(nnz);
            col.sort_by_key(|&(r, _)| r);
            for &(r, v) in col.iter() {
                rowval.push(r);
                nzval.push(v);
                nnz += 1;
            }
        }
        colptr.push(nnz);
        let a = CscMatrix::new(m, n, colptr, rowval, nzval);
        let p = CscMatrix::new(n, n, vec![0; n + 1], vec![], vec![]);

        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(200)
            .tol_feas(tol * 0.1)
            .tol_gap_abs(tol * 0.1)
            .tol_gap_rel(tol * 0.1)
            .build()
            .map_err(|e| ConicError::Setup(e.to_string()))?;
        let mut solver = DefaultSolver::new(&p, &self.objective, &a, &b, &cones, settings)
            .map_err(|e| ConicError::Setup(format!("{e:?}")))?;
        solver.solve();

        let x = solver.solution.x.clone();
        let z = solver.solution.z.clone();
        self.classify(
            tol,
            solver.solution.status,
            x,
            z,
            solver.solution.iterations as usize,
        )
    }

    fn classify(
        &self,
        tol: f64,
        raw: SolverStatus,
        x: Vec<f64>,
        z: Vec<f64>,
        iterations: usize,
    ) -> Result<ConicSolution, ConicError> {
        let mut duals = Vec::with_capacity(self.blocks.len());
        let mut offset = 0usize;
        for blk in &self.blocks {
            duals.push(z[offset..offset + blk.rows.len()].to_vec());
            offset += blk.rows.len();
        }

        match raw {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {
                let (primal_res, dual_res, gap) = self.kkt_residuals(&x, &duals);
                let objective = self.objective_value(&x);
                let status = if primal_res.max(dual_res).max(gap) <= tol {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::Inaccurate
                };
                Ok(ConicSolution {
                    status,
                    x_primal: x,
                    duals,
                    primal_res,
                    dual_res,
                    gap,
                    objective,
                    iterations,
                    certificate_residual: None,
                })
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                // Certificate: z in K*, b'z < 0, A'z ~ 0. Scale-normalize.
                let aty = self.a_transpose_z(&duals);
                let btz: f64 = self
                    .blocks
                    .iter()
                    .zip(&duals)
                    .flat_map(|(blk, zb)| blk.rows.iter().zip(zb).map(|(r, zi)| r.b * zi))
                    .sum();
                let viol = aty.iter().fold(0.0f64, |a, v| a.max(v.abs())) / btz.abs().max(1e-300);
                Ok(ConicSolution {
                    status: SolveStatus::Infeasible,
                    x_primal: x,
                    duals,
                    primal_res: f64::NAN,
                    dual_res: f64::NAN,
                    gap: f64::NAN,
                    objective: f64::NAN,
                    iterations,
                    certificate_residual: Some(viol),
                })
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                Ok(ConicSolution {
                    status: SolveStatus::Unbounded,
                    x_primal: x,
                    duals,
                    primal_res: f64::NAN,
                    dual_res: f64::NAN,
                    gap: f64::NAN,
                    objective: f64::NEG_INFINITY,
                    iterations,
                    certificate_residual: None,
                })
            }
            _ => Ok(ConicSolution {
                status: SolveStatus::Failed,
                x_primal: x,
                duals,
                primal_res: f64::NAN,
                dual_res: f64::NAN,
                gap: f64::NAN,
                objective: f64::NAN,
                iterations,
                certificate_residual: None,
            }),
        }
    }

    fn a_transpose_z(&self, duals: &[Vec<f64>]) -> Vec<f64> {
        let mut aty = vec![0.0; self.n_vars];
        for (blk, zb) in self.blocks.iter().zip(duals) {
            for (row, &zi) in blk.rows.iter().zip(zb) {
                for &(i, c) in &row.coeffs {
                    aty[i] += c * zi;
                }
            }
        }
        aty
    }

    /// Measured KKT residuals at `(x, z)`: worst primal cone violation,
    /// worst of stationarity and dual-cone violation, and the duality gap
    /// scaled by the objective magnitudes.
    pub fn kkt_residuals(&self, x: &[f64], duals: &[Vec<f64>]) -> (f64, f64, f64) {
        let mut primal: f64 = 0.0;
        for (i, blk) in self.blocks.iter().enumerate() {
            let s = self.slack(i, x);
            primal = primal.max(cone_distance(blk.cone, &s));
        }

        let aty = self.a_transpose_z(duals);
        let mut dual: f64 = 0.0;
        for (c, a) in self.objective.iter().zip(&aty) {
            dual = dual.max((c + a).abs());
        }
        for (blk, zb) in self.blocks.iter().zip(duals) {
            let viol = match blk.cone {
                Cone::Zero => 0.0, // dual of {0} is free
                Cone::Nonneg => zb.iter().fold(0.0f64, |a, &v| a.max(-v)),
                Cone::Soc(_) => {
                    let norm: f64 = zb[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
                    (norm - zb[0]).max(0.0)
                }
            };
            dual = dual.max(viol);
        }

        let obj = self.objective_value(x);
        let btz: f64 = self
            .blocks
            .iter()
            .zip(duals)
            .flat_map(|(blk, zb)| blk.rows.iter().zip(zb).map(|(r, zi)| r.b * zi))
            .sum();
        // primal obj - dual obj = c'x - (-b'z)
        let gap = (obj + btz).abs() / (1.0 + obj.abs() + btz.abs());
        (primal, dual, gap)
    }

    /// Dual objective `-b'z` of a returned solution.
    pub fn dual_objective(&self, duals: &[Vec<f64>]) -> f64 {
        -self
            .blocks
            .iter()
            .zip(duals)
            .flat_map(|(blk, zb)| blk.rows.iter().zip(zb).map(|(r, zi)| r.b * zi))
            .sum::<f64>()
    }

    // -- dump/load ----------------------------------------------------------

    /// Serialize the program in a line-oriented sparse text format, one row
    /// per line: block id, cone tag, `col:coef` pairs, `:` then the offset.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "nvars {}", self.n_vars).unwrap();
        let mut line = String::from("min");
        for (i, c) in self.objective.iter().enumerate() {
            if *c != 0.0 {
                write!(line, " {i}:{c}").unwrap();
            }
        }
        out.push_str(&line);
        out.push('\n');
        for (bid, blk) in self.blocks.iter().enumerate() {
            let tag = match blk.cone {
                Cone::Zero => "zero".to_string(),
                Cone::Nonneg => "nonneg".to_string(),
                Cone::Soc(k) => format!("soc{k}"),
            };
            for row in &blk.rows {
                let mut l = format!("row {bid} {tag}");
                for &(i, c) in &row.coeffs {
                    write!(l, " {i}:{c}").unwrap();
                }
                write!(l, " : {}", row.b).unwrap();
                out.push_str(&l);
                out.push('\n');
            }
        }
        out
    }

    pub fn load(text: &str) -> Result<Self, ConicError> {
        let err = |line: usize, msg: &str| ConicError::Dump {
            line,
            msg: msg.into(),
        };
        let mut n_vars: Option<usize> = None;
        let mut objective: Vec<f64> = Vec::new();
        let mut blocks: Vec<Block> = Vec::new();
        let mut block_ids: Vec<usize> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let ln = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut toks = line.split_whitespace();
            match toks.next() {
                Some("nvars") => {
                    let n = toks
                        .next()
                        .and_then(|t| t.parse::<usize>().ok())
                        .ok_or_else(|| err(ln, "bad nvars"))?;
                    n_vars = Some(n);
                    objective = vec![0.0; n];
                }
                Some("min") => {
                    for t in toks {
                        let (i, c) = parse_pair(t).ok_or_else(|| err(ln, "bad objective term"))?;
                        if i >= objective.len() {
                            return Err(err(ln, "objective variable out of range"));
                        }
                        objective[i] = c;
                    }
                }
                Some("row") => {
                    let bid = toks
                        .next()
                        .and_then(|t| t.parse::<usize>().ok())
                        .ok_or_else(|| err(ln, "bad block id"))?;
                    let tag = toks.next().ok_or_else(|| err(ln, "missing cone tag"))?;
                    let cone = parse_cone(tag).ok_or_else(|| err(ln, "unknown cone tag"))?;
                    let mut coeffs = Vec::new();
                    let mut b = None;
                    let mut saw_sep = false;
                    for t in toks {
                        if t == ":" {
                            saw_sep = true;
                            continue;
                        }
                        if saw_sep {
                            b = Some(t.parse::<f64>().map_err(|_| err(ln, "bad offset"))?);
                        } else {
                            let (i, c) = parse_pair(t).ok_or_else(|| err(ln, "bad coefficient"))?;
                            coeffs.push((i, c));
                        }
                    }
                    let b = b.ok_or_else(|| err(ln, "missing offset"))?;
                    let row = Row { coeffs, b };
                    match block_ids.last() {
                        Some(&last) if last == bid => blocks.last_mut().unwrap().rows.push(row),
                        _ => {
                            if block_ids.contains(&bid) {
                                return Err(err(ln, "block rows must be contiguous"));
                            }
                            block_ids.push(bid);
                            blocks.push(Block {
                                cone,
                                rows: vec![row],
                            });
                        }
                    }
                }
                _ => return Err(err(ln, "unrecognized directive")),
            }
        }

        let n_vars = n_vars.ok_or_else(|| err(0, "missing nvars"))?;
        for blk in &blocks {
            if let Cone::Soc(k) = blk.cone {
                if blk.rows.len() != k {
                    return Err(err(0, "soc block row count does not match tag"));
                }
            }
            for row in &blk.rows {
                for &(i, _) in &row.coeffs {
                    if i >= n_vars {
                        return Err(err(0, "row variable out of range"));
                    }
                }
            }
        }
        Ok(Self {
            n_vars,
            objective,
            blocks,
        })
    }
}

fn parse_pair(tok: &str) -> Option<(usize, f64)> {
    let (i, c) = tok.split_once(':')?;
    Some((i.parse().ok()?, c.parse().ok()?))
}

fn parse_cone(tag: &str) -> Option<Cone> {
    match tag {
        "zero" => Some(Cone::Zero),
        "nonneg" => Some(Cone::Nonneg),
        _ => tag
            .strip_prefix("soc")?
            .parse::<usize>()
            .ok()
            .map(Cone::Soc),
    }
}

fn merge_cone(cones: &mut Vec<SupportedConeT<f64>>, next: SupportedConeT<f64>) {
    match (cones.last_mut(), next) {
        (Some(SupportedConeT::ZeroConeT(a)), SupportedConeT::ZeroConeT(b)) => *a += b,
        (Some(SupportedConeT::NonnegativeConeT(a)), SupportedConeT::NonnegativeConeT(b)) => *a += b,
        (_, c) => cones.push(c),
    }
}

fn cone_distance(cone: Cone, s: &[f64]) -> f64 {
    match cone {
        Cone::Zero => s.iter().fold(0.0f64, |a, &v| a.max(v.abs())),
        Cone::Nonneg => s.iter().fold(0.0f64, |a, &v| a.max(-v)),
        Cone::Soc(_) => {
            let norm: f64 = s[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
            (norm - s[0]).max(0.0)
        }
    }
}

fn add_exprs(a: &LinExpr, b: &LinExpr) -> LinExpr {
    let mut terms = a.terms.clone();
    terms.extend_from_slice(&b.terms);
    LinExpr {
        terms,
        constant: a.constant + b.constant,
    }
}

fn sub_exprs(a: &LinExpr, b: &LinExpr) -> LinExpr {
    let mut terms = a.terms.clone();
    terms.extend(b.terms.iter().map(|&(i, c)| (i, -c)));
    LinExpr {
        terms,
        constant: a.constant - b.constant,
    }
}

fn scale_expr(a: &LinExpr, k: f64) -> LinExpr {
    LinExpr {
        terms: a.terms.iter().map(|&(i, c)| (i, k * c)).collect(),
        constant: k * a.constant,
    }
}

/// Outcome classification of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    Inaccurate,
    Failed,
}

/// Solve result with re-measured KKT residuals.
#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x_primal: Vec<f64>,
    /// Dual multipliers per constraint block (certificate when infeasible).
    pub duals: Vec<Vec<f64>>,
    pub primal_res: f64,
    pub dual_res: f64,
    pub gap: f64,
    pub objective: f64,
    pub iterations: usize,
    /// `||A'z||_inf / |b'z|` of the infeasibility certificate, when one exists.
    pub certificate_residual: Option<f64>,
}
