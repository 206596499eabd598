//! Network data model: buses, branches, a MATPOWER-subset case parser, and
//! the incidence/cycle structure used by the angle-consistency checks.
//!
//! All quantities are per unit on the case's `base_mva`. Buses are re-indexed
//! to contiguous `0..n` on parse; branch endpoints refer to those indices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid network: {0}")]
    Validation(String),
}

/// Role of a bus in the power-flow problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pq,
    Pv,
}

/// A network node with its load, shunt admittance, and generator data.
///
/// Generator quantities are aggregated over all in-service units at the bus.
/// `p_gen_set` is the scheduled active generation consumed by the power flow
/// at PV buses; the OPF builders use only the box bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub p_load: f64,
    pub q_load: f64,
    /// Shunt conductance G_n (consumes G_n * v^2 active power).
    pub g_shunt: f64,
    /// Shunt susceptance B_n, positive capacitive (injects B_n * v^2).
    pub b_shunt: f64,
    pub v_min: f64,
    pub v_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_setpoint: Option<f64>,
    #[serde(default)]
    pub has_gen: bool,
    #[serde(default)]
    pub p_gen_set: f64,
    #[serde(default)]
    pub q_gen_set: f64,
    #[serde(default)]
    pub p_gen_min: f64,
    #[serde(default)]
    pub p_gen_max: f64,
    #[serde(default)]
    pub q_gen_min: f64,
    #[serde(default)]
    pub q_gen_max: f64,
}

/// A series branch with per-end charging susceptance.
///
/// Transformer taps are folded into the series impedance by the parser, so a
/// branch is always a plain pi-section here. `ampacity_sq` is the squared
/// current limit; `f64::INFINITY` means unlimited (serialized as null).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    #[serde(rename = "from")]
    pub from_bus: usize,
    #[serde(rename = "to")]
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    pub b_from: f64,
    pub b_to: f64,
    #[serde(with = "opt_infinity")]
    pub ampacity_sq: f64,
    /// Symmetric branch angle-difference limit, radians, in (0, pi/2].
    pub theta_max: f64,
}

mod opt_infinity {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Immutable graph of buses and branches on a common MVA base.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
}

impl Network {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    /// Index of the unique slack bus.
    pub fn slack(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated network has a slack bus")
    }

    /// Effective shunt admittance per bus: the bus shunt plus the charging
    /// susceptance of every connected branch end. This is the shunt seen by
    /// the branch-flow equations once branch series flows are the unknowns.
    pub fn effective_shunts(&self) -> (Vec<f64>, Vec<f64>) {
        let g: Vec<f64> = self.buses.iter().map(|b| b.g_shunt).collect();
        let mut b: Vec<f64> = self.buses.iter().map(|b| b.b_shunt).collect();
        for br in &self.branches {
            b[br.from_bus] += br.b_from;
            b[br.to_bus] += br.b_to;
        }
        (g, b)
    }

    /// Check every structural invariant; parsers call this before returning.
    pub fn validate(&self) -> Result<(), NetworkError> {
        let n = self.n_buses();
        if n == 0 {
            return Err(NetworkError::Validation("network has no buses".into()));
        }
        if self.base_mva <= 0.0 || self.base_mva.is_nan() {
            return Err(NetworkError::Validation("base_mva must be positive".into()));
        }
        let slacks = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .count();
        if slacks != 1 {
            return Err(NetworkError::Validation(format!(
                "expected exactly one slack bus, found {slacks}"
            )));
        }
        for (i, bus) in self.buses.iter().enumerate() {
            if bus.id != i {
                return Err(NetworkError::Validation(format!(
                    "bus ids must be contiguous: bus at position {i} has id {}",
                    bus.id
                )));
            }
            if !(bus.v_min > 0.0 && bus.v_min < bus.v_max) {
                return Err(NetworkError::Validation(format!(
                    "bus {i}: voltage bounds must satisfy 0 < v_min < v_max"
                )));
            }
            if bus.p_gen_min > bus.p_gen_max || bus.q_gen_min > bus.q_gen_max {
                return Err(NetworkError::Validation(format!(
                    "bus {i}: generator bounds are inverted"
                )));
            }
            if matches!(bus.kind, BusKind::Slack | BusKind::Pv) && bus.v_setpoint.is_none() {
                return Err(NetworkError::Validation(format!(
                    "bus {i} is {:?} but has no voltage setpoint",
                    bus.kind
                )));
            }
        }
        for (l, br) in self.branches.iter().enumerate() {
            if br.id != l {
                return Err(NetworkError::Validation(format!(
                    "branch ids must be contiguous: branch at position {l} has id {}",
                    br.id
                )));
            }
            if br.from_bus >= n || br.to_bus >= n {
                return Err(NetworkError::Validation(format!(
                    "branch {l} references a missing bus"
                )));
            }
            if br.from_bus == br.to_bus {
                return Err(NetworkError::Validation(format!(
                    "branch {l} is a self-loop"
                )));
            }
            if br.x == 0.0 {
                return Err(NetworkError::Validation(format!(
                    "branch {l} has zero reactance"
                )));
            }
            if br.r < 0.0 {
                return Err(NetworkError::Validation(format!(
                    "branch {l} has negative resistance"
                )));
            }
            if br.ampacity_sq <= 0.0 || br.ampacity_sq.is_nan() {
                return Err(NetworkError::Validation(format!(
                    "branch {l} has non-positive ampacity"
                )));
            }
            if !(br.theta_max > 0.0 && br.theta_max <= std::f64::consts::FRAC_PI_2) {
                return Err(NetworkError::Validation(format!(
                    "branch {l}: theta_max must lie in (0, pi/2]"
                )));
            }
        }
        if !self.is_connected() {
            return Err(NetworkError::Validation(
                "network graph is disconnected".into(),
            ));
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let n = self.n_buses();
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            adj[br.from_bus].push(br.to_bus);
            adj[br.to_bus].push(br.from_bus);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &w in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == n
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        let net: Network = serde_json::from_str(text).map_err(|e| NetworkError::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        net.validate()?;
        Ok(net)
    }
}

/// Bus-branch incidence matrices.
///
/// `a_plus[n][l] = 1` if bus `n` is the sending end of branch `l`, `a_minus`
/// likewise for receiving ends, and `a_l = a_plus^T - a_minus^T` is the
/// signed branch-to-bus form, so `a_l * theta_n` is the vector of branch
/// angle differences.
#[derive(Debug, Clone)]
pub struct IncidenceSet {
    pub a_plus: DMatrix<f64>,
    pub a_minus: DMatrix<f64>,
    pub a_l: DMatrix<f64>,
}

impl IncidenceSet {
    /// Branch angle differences `a_l * theta`.
    pub fn branch_diffs(&self, theta: &[f64]) -> Vec<f64> {
        let th = nalgebra::DVector::from_column_slice(theta);
        (&self.a_l * th).iter().copied().collect()
    }

    /// `a_l` with the given bus column removed (gauge fixing).
    pub fn reduced(&self, drop_bus: usize) -> DMatrix<f64> {
        self.a_l.clone().remove_column(drop_bus)
    }
}

/// Build the incidence matrices of a network.
pub fn incidence(net: &Network) -> IncidenceSet {
    let (n, l) = (net.n_buses(), net.n_branches());
    let mut a_plus = DMatrix::zeros(n, l);
    let mut a_minus = DMatrix::zeros(n, l);
    let mut a_l = DMatrix::zeros(l, n);
    for br in &net.branches {
        a_plus[(br.from_bus, br.id)] = 1.0;
        a_minus[(br.to_bus, br.id)] = 1.0;
        a_l[(br.id, br.from_bus)] = 1.0;
        a_l[(br.id, br.to_bus)] = -1.0;
    }
    IncidenceSet {
        a_plus,
        a_minus,
        a_l,
    }
}

/// Dimension of the cycle space, `|L| - |N| + 1` for a connected graph.
pub fn cycle_space_dim(net: &Network) -> usize {
    net.n_branches() + 1 - net.n_buses()
}

/// Fundamental cycles of the network as signed branch index sets.
///
/// A spanning tree is grown from the slack bus; every chord closes exactly
/// one cycle consisting of the chord (sign +1) and its tree path. Signs are
/// chosen so that for any bus-angle assignment the signed sum of branch
/// angle differences around each cycle is identically zero.
pub fn fundamental_cycles(net: &Network) -> Vec<Vec<(usize, i8)>> {
    let n = net.n_buses();
    let root = net.slack();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n]; // (neighbor, branch)
    for br in &net.branches {
        adj[br.from_bus].push((br.to_bus, br.id));
        adj[br.to_bus].push((br.from_bus, br.id));
    }
    // BFS tree: parent bus and connecting branch per bus.
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut depth = vec![0usize; n];
    let mut in_tree = vec![false; net.n_branches()];
    let mut seen = vec![false; n];
    let mut queue = std::collections::VecDeque::from([root]);
    seen[root] = true;
    while let Some(u) = queue.pop_front() {
        for &(w, l) in &adj[u] {
            if !seen[w] {
                seen[w] = true;
                parent[w] = Some((u, l));
                depth[w] = depth[u] + 1;
                in_tree[l] = true;
                queue.push_back(w);
            }
        }
    }

    // Walk one step toward the root, returning (branch, sign of theta_l when
    // traversed from `u` toward its parent).
    let step_up = |u: usize| -> (usize, usize, i8) {
        let (p, l) = parent[u].expect("non-root bus has a parent");
        let sign = if net.branches[l].from_bus == u { 1 } else { -1 };
        (p, l, sign)
    };

    let mut cycles = Vec::new();
    for br in &net.branches {
        if in_tree[br.id] {
            continue;
        }
        // Chord from->to contributes theta_from - theta_to with sign +1; the
        // tree path from `to` back to `from` closes the telescoping sum.
        let mut cycle = vec![(br.id, 1i8)];
        let (mut u, mut w) = (br.to_bus, br.from_bus);
        let mut up: Vec<(usize, i8)> = Vec::new(); // path to -> lca
        let mut down: Vec<(usize, i8)> = Vec::new(); // path lca -> from, built backwards
        while depth[u] > depth[w] {
            let (p, l, s) = step_up(u);
            up.push((l, s));
            u = p;
        }
        while depth[w] > depth[u] {
            let (p, l, s) = step_up(w);
            down.push((l, -s));
            w = p;
        }
        while u != w {
            let (pu, lu, su) = step_up(u);
            up.push((lu, su));
            u = pu;
            let (pw, lw, sw) = step_up(w);
            down.push((lw, -sw));
            w = pw;
        }
        cycle.extend(up);
        cycle.extend(down.into_iter().rev());
        cycles.push(cycle);
    }
    cycles
}

// ---------------------------------------------------------------------------
// MATPOWER case parsing
// ---------------------------------------------------------------------------

struct RawTable {
    rows: Vec<(usize, Vec<f64>)>, // (source line, values)
}

fn parse_err(line: usize, msg: impl Into<String>) -> NetworkError {
    NetworkError::Parse {
        line,
        msg: msg.into(),
    }
}

/// Parse the MATPOWER case subset: `mpc.baseMVA` plus the `bus`, `gen` and
/// `branch` tables. Comments start with `%`; rows end at `;` or end of line.
pub fn parse_matpower(text: &str) -> Result<Network, NetworkError> {
    let mut base_mva: Option<f64> = None;
    let mut tables: HashMap<String, RawTable> = HashMap::new();
    let mut current: Option<String> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('%').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = &current {
            let (body, closes) = match line.find(']') {
                Some(pos) => (&line[..pos], true),
                None => (line, false),
            };
            for part in body.split(';') {
                let part = part.trim();
                if part.is_empty() {
                    continue;
                }
                let row = parse_row(part, line_no)?;
                if !row.is_empty() {
                    tables
                        .get_mut(name.as_str())
                        .unwrap()
                        .rows
                        .push((line_no, row));
                }
            }
            if closes {
                current = None;
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("mpc.baseMVA") {
            let value = rest
                .trim_start_matches(['=', ' ', '\t'])
                .trim_end_matches(';')
                .trim();
            base_mva = Some(
                value
                    .parse::<f64>()
                    .map_err(|_| parse_err(line_no, format!("bad baseMVA value '{value}'")))?,
            );
            continue;
        }
        for table in ["bus", "gen", "branch"] {
            let prefix = format!("mpc.{table}");
            if let Some(rest) = line.strip_prefix(prefix.as_str()) {
                let rest = rest.trim_start();
                if !rest.starts_with('=') {
                    continue;
                }
                let after = rest[1..].trim_start();
                if !after.starts_with('[') {
                    return Err(parse_err(line_no, format!("expected '[' after {prefix} =")));
                }
                tables.insert(table.to_string(), RawTable { rows: Vec::new() });
                let inline = after[1..].trim();
                if inline.contains(']') {
                    // single-line table
                    let body = inline.split(']').next().unwrap_or("");
                    for part in body.split(';') {
                        let part = part.trim();
                        if part.is_empty() {
                            continue;
                        }
                        let row = parse_row(part, line_no)?;
                        tables.get_mut(table).unwrap().rows.push((line_no, row));
                    }
                } else {
                    if !inline.is_empty() {
                        let row = parse_row(inline.trim_end_matches(';'), line_no)?;
                        if !row.is_empty() {
                            tables.get_mut(table).unwrap().rows.push((line_no, row));
                        }
                    }
                    current = Some(table.to_string());
                }
                break;
            }
        }
    }

    let base = base_mva.ok_or_else(|| parse_err(0, "missing mpc.baseMVA"))?;
    let bus_tbl = tables
        .remove("bus")
        .ok_or_else(|| parse_err(0, "missing mpc.bus table"))?;
    let gen_tbl = tables
        .remove("gen")
        .ok_or_else(|| parse_err(0, "missing mpc.gen table"))?;
    let br_tbl = tables
        .remove("branch")
        .ok_or_else(|| parse_err(0, "missing mpc.branch table"))?;

    build_network(base, bus_tbl, gen_tbl, br_tbl)
}

fn parse_row(part: &str, line: usize) -> Result<Vec<f64>, NetworkError> {
    part.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| parse_err(line, format!("bad numeric token '{tok}'")))
        })
        .collect()
}

fn build_network(
    base: f64,
    bus_tbl: RawTable,
    gen_tbl: RawTable,
    br_tbl: RawTable,
) -> Result<Network, NetworkError> {
    let mut buses = Vec::with_capacity(bus_tbl.rows.len());
    let mut id_map: HashMap<i64, usize> = HashMap::new();
    for (line, row) in &bus_tbl.rows {
        if row.len() < 13 {
            return Err(parse_err(
                *line,
                format!("bus row has {} columns, need 13", row.len()),
            ));
        }
        let ext = row[0] as i64;
        let kind = match row[1] as i64 {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Slack,
            t => return Err(parse_err(*line, format!("unsupported bus type {t}"))),
        };
        let idx = buses.len();
        if id_map.insert(ext, idx).is_some() {
            return Err(NetworkError::Validation(format!("duplicate bus id {ext}")));
        }
        buses.push(Bus {
            id: idx,
            kind,
            p_load: row[2] / base,
            q_load: row[3] / base,
            g_shunt: row[4] / base,
            b_shunt: row[5] / base,
            v_min: row[12],
            v_max: row[11],
            v_setpoint: None,
            has_gen: false,
            p_gen_set: 0.0,
            q_gen_set: 0.0,
            p_gen_min: 0.0,
            p_gen_max: 0.0,
            q_gen_min: 0.0,
            q_gen_max: 0.0,
        });
    }

    for (line, row) in &gen_tbl.rows {
        if row.len() < 10 {
            return Err(parse_err(
                *line,
                format!("gen row has {} columns, need 10", row.len()),
            ));
        }
        if row[7] <= 0.0 {
            continue; // out of service
        }
        let bus = *id_map
            .get(&(row[0] as i64))
            .ok_or_else(|| parse_err(*line, format!("gen references unknown bus {}", row[0])))?;
        let b = &mut buses[bus];
        b.has_gen = true;
        b.p_gen_set += row[1] / base;
        b.q_gen_set += row[2] / base;
        b.q_gen_max += row[3] / base;
        b.q_gen_min += row[4] / base;
        b.p_gen_max += row[8] / base;
        b.p_gen_min += row[9] / base;
        if b.v_setpoint.is_none() {
            b.v_setpoint = Some(row[5]);
        }
    }

    let mut branches = Vec::with_capacity(br_tbl.rows.len());
    for (line, row) in &br_tbl.rows {
        if row.len() < 13 {
            return Err(parse_err(
                *line,
                format!("branch row has {} columns, need 13", row.len()),
            ));
        }
        if row[10] <= 0.0 {
            continue; // out of service
        }
        let from = *id_map
            .get(&(row[0] as i64))
            .ok_or_else(|| parse_err(*line, format!("branch references unknown bus {}", row[0])))?;
        let to = *id_map
            .get(&(row[1] as i64))
            .ok_or_else(|| parse_err(*line, format!("branch references unknown bus {}", row[1])))?;
        let tap = if row[8] != 0.0 { row[8] } else { 1.0 };
        // Ideal tap folded into the series impedance; phase shift ignored.
        let r = row[2] / (tap * tap);
        let x = row[3] / (tap * tap);
        let ampacity_sq = if row[5] > 0.0 {
            let i_max = row[5] / base;
            i_max * i_max
        } else {
            f64::INFINITY
        };
        let (angmin, angmax) = (row[11], row[12]);
        let theta_max = if angmax > 0.0 && angmax < 90.0 && angmin < 0.0 && angmin > -90.0 {
            angmax.min(-angmin).to_radians()
        } else {
            std::f64::consts::FRAC_PI_2
        };
        branches.push(Branch {
            id: branches.len(),
            from_bus: from,
            to_bus: to,
            r,
            x,
            b_from: row[4] / 2.0,
            b_to: row[4] / 2.0,
            ampacity_sq,
            theta_max,
        });
    }

    let net = Network {
        base_mva: base,
        buses,
        branches,
    };
    net.validate()?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;

    pub(crate) const TWO_BUS: &str = "
        function mpc = two_bus
        mpc.baseMVA = 100;
        mpc.bus = [
            1 3 0  0  0 0 1 1 0 345 1 1.1 0.9;
            2 1 50 20 0 0 1 1 0 345 1 1.1 0.9;
        ];
        mpc.gen = [
            1 0 0 300 -300 1.0 100 1 300 0;
        ];
        mpc.branch = [
            1 2 0.01 0.1 0 0 0 0 0 0 1 -360 360;
        ];
    ";

    fn triangle() -> Network {
        let text = "
            function mpc = tri
            mpc.baseMVA = 100;
            mpc.bus = [
                1 3 0  0  0 0 1 1 0 345 1 1.1 0.9;
                2 1 0  0  0 0 1 1 0 345 1 1.1 0.9;
                3 1 60 20 0 0 1 1 0 345 1 1.1 0.9;
            ];
            mpc.gen = [
                1 0 0 300 -300 1.0 100 1 300 0;
            ];
            mpc.branch = [
                1 2 0.01 0.05 0 0 0 0 0 0 1 -360 360;
                2 3 0.02 0.06 0 0 0 0 0 0 1 -360 360;
                1 3 0.015 0.07 0 0 0 0 0 0 1 -360 360;
            ];
        ";
        parse_matpower(text).unwrap()
    }

    #[test]
    fn parses_minimal_two_bus_case() {
        let net = parse_matpower(TWO_BUS).unwrap();
        assert_eq!(net.n_buses(), 2);
        assert_eq!(net.n_branches(), 1);
        assert_eq!(net.slack(), 0);
        assert_eq!(net.buses[1].kind, BusKind::Pq);
        assert!((net.buses[1].p_load - 0.5).abs() < 1e-15);
        assert!((net.buses[1].q_load - 0.2).abs() < 1e-15);
        assert_eq!(net.branches[0].ampacity_sq, f64::INFINITY);
        assert!((net.branches[0].theta_max - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn bundled_case33_is_radial() {
        let net = cases::ieee33();
        assert_eq!(net.n_buses(), 33);
        assert_eq!(net.n_branches(), 32);
        assert_eq!(cycle_space_dim(&net), 0);
        assert!(fundamental_cycles(&net).is_empty());
    }

    #[test]
    fn bundled_case39_is_meshed() {
        let net = cases::ieee39();
        assert_eq!(net.n_buses(), 39);
        // branch count frozen from the bundled table
        assert_eq!(net.n_branches(), 46);
        assert_eq!(cycle_space_dim(&net), net.n_branches() - 38);
        assert_eq!(fundamental_cycles(&net).len(), cycle_space_dim(&net));
    }

    #[test]
    fn incidence_single_branch() {
        let net = parse_matpower(TWO_BUS).unwrap();
        let inc = incidence(&net);
        assert_eq!(inc.a_l[(0, 0)], 1.0);
        assert_eq!(inc.a_l[(0, 1)], -1.0);
    }

    #[test]
    fn incidence_triangle_matrix() {
        let net = triangle();
        let inc = incidence(&net);
        let expect = [[1.0, -1.0, 0.0], [0.0, 1.0, -1.0], [1.0, 0.0, -1.0]];
        for (l, row) in expect.iter().enumerate() {
            for (n, v) in row.iter().enumerate() {
                assert_eq!(inc.a_l[(l, n)], *v, "a_l[{l}][{n}]");
            }
        }
        // a_plus support is disjoint from a_minus and rows sum to out-degree
        for n in 0..3 {
            let mut out_deg = 0.0;
            for l in 0..3 {
                assert!(inc.a_plus[(n, l)] * inc.a_minus[(n, l)] == 0.0);
                out_deg += inc.a_plus[(n, l)];
            }
            let expected = net.branches.iter().filter(|b| b.from_bus == n).count() as f64;
            assert_eq!(out_deg, expected);
        }
    }

    #[test]
    fn incidence_rows_sum_to_zero() {
        for net in [triangle(), cases::ieee33(), cases::ieee39()] {
            let inc = incidence(&net);
            for l in 0..net.n_branches() {
                let s: f64 = (0..net.n_buses()).map(|n| inc.a_l[(l, n)]).sum();
                assert_eq!(s, 0.0);
            }
        }
    }

    #[test]
    fn triangle_has_one_cycle() {
        let net = triangle();
        assert_eq!(cycle_space_dim(&net), 1);
        let cycles = fundamental_cycles(&net);
        assert_eq!(cycles.len(), 1);
        let mut c = cycles[0].clone();
        c.sort();
        // chord closure over branches 0 (1->2), 1 (2->3), 2 (1->3)
        assert_eq!(c, vec![(0, 1), (1, 1), (2, -1)]);
    }

    #[test]
    fn cycle_sums_vanish_for_any_angle_assignment() {
        for net in [triangle(), cases::ieee39()] {
            let inc = incidence(&net);
            let theta: Vec<f64> = (0..net.n_buses())
                .map(|i| (i as f64 * 0.7321).sin() * 0.4)
                .collect();
            let diffs = inc.branch_diffs(&theta);
            for cycle in fundamental_cycles(&net) {
                let s: f64 = cycle.iter().map(|&(l, sg)| f64::from(sg) * diffs[l]).sum();
                assert!(s.abs() <= 1e-12, "cycle sum {s}");
            }
        }
    }

    #[test]
    fn radial_reduced_incidence_is_square_nonsingular() {
        let net = cases::ieee33();
        let reduced = incidence(&net).reduced(net.slack());
        assert_eq!(reduced.nrows(), reduced.ncols());
        assert!(reduced.lu().is_invertible());

        let meshed = triangle();
        let reduced = incidence(&meshed).reduced(meshed.slack());
        assert_ne!(reduced.nrows(), reduced.ncols());
    }

    #[test]
    fn json_round_trip_preserves_network() {
        for net in [parse_matpower(TWO_BUS).unwrap(), cases::ieee39()] {
            let json = net.to_json();
            let back = Network::from_json(&json).unwrap();
            assert_eq!(back.n_buses(), net.n_buses());
            assert_eq!(back.n_branches(), net.n_branches());
            for (a, b) in net.branches.iter().zip(back.branches.iter()) {
                assert_eq!(a.from_bus, b.from_bus);
                assert_eq!(a.r, b.r);
                assert_eq!(a.x, b.x);
                assert_eq!(a.ampacity_sq, b.ampacity_sq);
            }
            for (a, b) in net.buses.iter().zip(back.buses.iter()) {
                assert_eq!(a.kind, b.kind);
                assert_eq!(a.p_load, b.p_load);
                assert_eq!(a.v_setpoint, b.v_setpoint);
            }
        }
    }

    #[test]
    fn rows_may_share_lines_with_separators_and_brackets() {
        let net = parse_matpower(
            "mpc.baseMVA = 100;
             mpc.bus = [ 1 3 0 0 0 0 1 1 0 345 1 1.1 0.9; 2 1 10 5 0 0 1 1 0 345 1 1.1 0.9 ];
             mpc.gen = [ 1 0 0 300 -300 1.0 100 1 300 0 ];
             mpc.branch = [
                 1 2 0.01 0.1 0 0 0 0 0 0 1 -360 360];",
        )
        .unwrap();
        assert_eq!(net.n_buses(), 2);
        assert_eq!(net.n_branches(), 1);
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let text = TWO_BUS.replace("1 2 0.01 0.1 0 0 0 0 0 0 1 -360 360;", "1 2 bogus;");
        match parse_matpower(&text) {
            Err(NetworkError::Parse { line, .. }) => assert!(line > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_bus_id_rejected() {
        let text = TWO_BUS.replace("2 1 50 20", "1 1 50 20");
        assert!(matches!(
            parse_matpower(&text),
            Err(NetworkError::Validation(_))
        ));
    }

    #[test]
    fn disconnected_graph_rejected() {
        let text = "
            mpc.baseMVA = 100;
            mpc.bus = [
                1 3 0 0 0 0 1 1 0 345 1 1.1 0.9;
                2 1 0 0 0 0 1 1 0 345 1 1.1 0.9;
                3 1 0 0 0 0 1 1 0 345 1 1.1 0.9;
            ];
            mpc.gen = [ 1 0 0 300 -300 1.0 100 1 300 0; ];
            mpc.branch = [ 1 2 0.01 0.1 0 0 0 0 0 0 1 -360 360; ];
        ";
        match parse_matpower(text) {
            Err(NetworkError::Validation(msg)) => assert!(msg.contains("disconnected")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn transformer_tap_folds_into_impedance() {
        let text = TWO_BUS.replace(
            "1 2 0.01 0.1 0 0 0 0 0 0 1 -360 360;",
            "1 2 0.01 0.1 0 0 0 0 2.0 0 1 -360 360;",
        );
        let net = parse_matpower(&text).unwrap();
        assert!((net.branches[0].r - 0.01 / 4.0).abs() < 1e-15);
        assert!((net.branches[0].x - 0.1 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn rate_a_converts_to_squared_ampacity() {
        let text = TWO_BUS.replace(
            "1 2 0.01 0.1 0 0 0 0 0 0 1 -360 360;",
            "1 2 0.01 0.1 0 250 0 0 0 0 1 -30 30;",
        );
        let net = parse_matpower(&text).unwrap();
        assert!((net.branches[0].ampacity_sq - 6.25).abs() < 1e-12);
        assert!((net.branches[0].theta_max - 30f64.to_radians()).abs() < 1e-15);
    }
}
