//! SE(3) pose graphs: residuals with analytic Jacobians, damped Gauss-Newton
//! over a sparse Cholesky factorization, multi-session merging, and a
//! line-oriented text serialization.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::{DVector, Matrix6, Vector3, Vector6};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{se3_left_jacobian_inv, GeometryError, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseGraphError {
    #[error("unknown node {0}")]
    UnknownNode(u64),
    #[error("duplicate node {0}")]
    DuplicateNode(u64),
    #[error("graph has no anchor node")]
    NoAnchor,
    #[error("graph is disconnected ({0} components)")]
    Disconnected(usize),
    #[error("information matrix of edge {0} is not symmetric positive definite")]
    BadInformation(usize),
    #[error("normal equations are not positive definite after damping")]
    NotPositiveDefinite,
    #[error("session {0} has no loop edge to the sessions merged before it")]
    UnconnectedSession(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    Odometry,
    Loop,
}

impl EdgeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EdgeKind::Odometry => "odometry",
            EdgeKind::Loop => "loop",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Node {
    pub pose: Pose,
    pub session: u32,
}

/// Relative-pose measurement: `relative ≈ inverse(pose_from) ∘ pose_to`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub from: u64,
    pub to: u64,
    pub relative: Pose,
    pub information: Matrix6<f64>,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PoseGraph {
    pub nodes: BTreeMap<u64, Node>,
    pub edges: Vec<Edge>,
    pub anchor: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphSolveReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeOptions {
    pub max_iterations: usize,
    pub lambda_init: f64,
    /// Stop once the relative cost decrease falls below this.
    pub relative_tolerance: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            lambda_init: 0.0,
            relative_tolerance: 1e-9,
        }
    }
}

impl OptimizeOptions {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iterations == 0 {
            return Err("max_iterations: must be positive".into());
        }
        if !(self.lambda_init >= 0.0 && self.lambda_init.is_finite()) {
            return Err(format!("lambda_init: must be non-negative, got {}", self.lambda_init));
        }
        if !(self.relative_tolerance >= 0.0) {
            return Err(format!("relative_tolerance: must be non-negative, got {}", self.relative_tolerance));
        }
        Ok(())
    }
}

/// `log(inverse(relative) ∘ inverse(a) ∘ b)`.
pub fn relative_residual(a: &Pose, b: &Pose, relative: &Pose) -> Result<Vector6<f64>, GeometryError> {
    relative.inverse().compose(&a.inverse()).compose(b).log()
}

/// Residual and its Jacobians with respect to left increments of the `from`
/// and `to` poses.
pub fn residual_jacobians(
    a: &Pose,
    b: &Pose,
    relative: &Pose,
) -> Result<(Vector6<f64>, Matrix6<f64>, Matrix6<f64>), GeometryError> {
    let r = relative_residual(a, b, relative)?;
    let jb = se3_left_jacobian_inv(&r) * a.compose(relative).inverse().adjoint();
    Ok((r, -jb, jb))
}

fn is_spd(m: &Matrix6<f64>) -> bool {
    (m - m.transpose()).abs().max() <= 1e-9 * m.abs().max().max(1.0) && m.cholesky().is_some()
}

impl PoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: u64, pose: Pose, session: u32) -> Result<(), PoseGraphError> {
        if self.nodes.contains_key(&id) {
            return Err(PoseGraphError::DuplicateNode(id));
        }
        self.nodes.insert(id, Node { pose, session });
        if self.anchor.is_none() {
            self.anchor = Some(id);
        }
        Ok(())
    }

    pub fn add_edge(&mut self, edge: Edge) -> Result<(), PoseGraphError> {
        for id in [edge.from, edge.to] {
            if !self.nodes.contains_key(&id) {
                return Err(PoseGraphError::UnknownNode(id));
            }
        }
        if !is_spd(&edge.information) {
            return Err(PoseGraphError::BadInformation(self.edges.len()));
        }
        self.edges.push(edge);
        Ok(())
    }

    pub fn pose(&self, id: u64) -> Option<&Pose> {
        self.nodes.get(&id).map(|n| &n.pose)
    }

    pub fn edge_residual(&self, edge: &Edge) -> Result<Vector6<f64>, PoseGraphError> {
        let a = self.pose(edge.from).ok_or(PoseGraphError::UnknownNode(edge.from))?;
        let b = self.pose(edge.to).ok_or(PoseGraphError::UnknownNode(edge.to))?;
        Ok(relative_residual(a, b, &edge.relative)?)
    }

    /// `Σ rᵀ Ω r` over all edges.
    pub fn cost(&self) -> Result<f64, PoseGraphError> {
        let mut total = 0.0;
        for e in &self.edges {
            let r = self.edge_residual(e)?;
            total += (r.transpose() * e.information * r)[0];
        }
        Ok(total)
    }

    /// Node ids grouped by connectivity, each group sorted, groups ordered by
    /// their smallest id.
    pub fn connected_components(&self) -> Vec<Vec<u64>> {
        let ids: Vec<u64> = self.nodes.keys().copied().collect();
        let index: BTreeMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut parent: Vec<usize> = (0..ids.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for e in &self.edges {
            if let (Some(&a), Some(&b)) = (index.get(&e.from), index.get(&e.to)) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
        for (i, &id) in ids.iter().enumerate() {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(id);
        }
        groups.into_values().collect()
    }

    /// Graph restricted to `ids`, keeping the edges between them. The anchor
    /// is kept if it is included, otherwise the smallest id becomes anchor.
    pub fn subgraph(&self, ids: &[u64]) -> PoseGraph {
        let keep: BTreeSet<u64> = ids.iter().copied().collect();
        let nodes: BTreeMap<u64, Node> = self
            .nodes
            .iter()
            .filter(|(id, _)| keep.contains(id))
            .map(|(&id, &n)| (id, n))
            .collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| keep.contains(&e.from) && keep.contains(&e.to))
            .copied()
            .collect();
        let anchor = match self.anchor {
            Some(a) if keep.contains(&a) => Some(a),
            _ => nodes.keys().next().copied(),
        };
        PoseGraph { nodes, edges, anchor }
    }

    /// Damped Gauss-Newton with the anchor pose held fixed.
    pub fn optimize(&mut self, opts: &OptimizeOptions) -> Result<GraphSolveReport, PoseGraphError> {
        let anchor = self.anchor.ok_or(PoseGraphError::NoAnchor)?;
        if !self.nodes.contains_key(&anchor) {
            return Err(PoseGraphError::UnknownNode(anchor));
        }
        let comps = self.connected_components();
        if comps.len() > 1 {
            return Err(PoseGraphError::Disconnected(comps.len()));
        }
        let free: Vec<u64> = self.nodes.keys().copied().filter(|&id| id != anchor).collect();
        let slot: BTreeMap<u64, usize> = free.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let dim = 6 * free.len();

        let initial_cost = self.cost()?;
        let mut cost = initial_cost;
        let mut lambda = opts.lambda_init;
        let mut iterations = 0;
        let mut converged = false;
        let mut cost_history = vec![cost];
        if dim == 0 || cost == 0.0 {
            return Ok(GraphSolveReport {
                initial_cost,
                final_cost: cost,
                iterations,
                converged: true,
                cost_history: vec![cost],
            });
        }

        while iterations < opts.max_iterations {
            iterations += 1;
            let (blocks, grad) = self.linearize(&slot, dim)?;
            let mut accepted = false;
            for _ in 0..=10 {
                let step = match solve_damped(&blocks, &grad, dim, lambda) {
                    Some(s) => s,
                    None => {
                        lambda = next_lambda(lambda);
                        continue;
                    }
                };
                let mut trial = self.clone();
                for (&id, &i) in &slot {
                    let delta = Vector6::from_iterator(step.rows(6 * i, 6).iter().copied());
                    let node = trial.nodes.get_mut(&id).expect("slot ids are nodes");
                    node.pose = Pose::exp(&delta).compose(&node.pose);
                }
                let trial_cost = match trial.cost() {
                    Ok(c) => c,
                    Err(PoseGraphError::Geometry(_)) => f64::INFINITY,
                    Err(e) => return Err(e),
                };
                if trial_cost <= cost {
                    let rel = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
                    *self = trial;
                    cost = trial_cost;
                    cost_history.push(cost);
                    accepted = true;
                    lambda = if lambda > 0.0 { lambda / 10.0 } else { 0.0 };
                    if lambda < 1e-12 {
                        lambda = 0.0;
                    }
                    if rel < opts.relative_tolerance || cost == 0.0 {
                        converged = true;
                    }
                    break;
                }
                lambda = next_lambda(lambda);
            }
            if !accepted {
                // No damped step reduces the cost: a local minimum to numerical precision.
                if blocks_all_pd(&blocks, dim) {
                    converged = true;
                    break;
                }
                return Err(PoseGraphError::NotPositiveDefinite);
            }
            if converged {
                break;
            }
        }
        Ok(GraphSolveReport {
            initial_cost,
            final_cost: cost,
            iterations,
            converged,
            cost_history,
        })
    }

    #[allow(clippy::type_complexity)]
    fn linearize(
        &self,
        slot: &BTreeMap<u64, usize>,
        dim: usize,
    ) -> Result<(BTreeMap<(usize, usize), Matrix6<f64>>, DVector<f64>), PoseGraphError> {
        let terms: Vec<Result<(Vector6<f64>, Matrix6<f64>, Matrix6<f64>), PoseGraphError>> = self
            .edges
            .par_iter()
            .map(|e| {
                let a = self.pose(e.from).ok_or(PoseGraphError::UnknownNode(e.from))?;
                let b = self.pose(e.to).ok_or(PoseGraphError::UnknownNode(e.to))?;
                Ok(residual_jacobians(a, b, &e.relative)?)
            })
            .collect();
        let mut blocks: BTreeMap<(usize, usize), Matrix6<f64>> = BTreeMap::new();
        let mut grad = DVector::zeros(dim);
        for (e, t) in self.edges.iter().zip(terms) {
            let (r, ja, jb) = t?;
            let parts = [(slot.get(&e.from), ja), (slot.get(&e.to), jb)];
            for (si, ji) in &parts {
                let Some(&i) = si else { continue };
                let g = ji.transpose() * e.information * r;
                let mut seg = grad.rows_mut(6 * i, 6);
                seg += g;
                for (sj, jj) in &parts {
                    let Some(&j) = sj else { continue };
                    *blocks.entry((i, j)).or_insert_with(Matrix6::zeros) += ji.transpose() * e.information * jj;
                }
            }
        }
        Ok((blocks, grad))
    }

    /// Line format: `VERTEX id session tx ty tz qx qy qz qw` and
    /// `EDGE from to kind tx ty tz qx qy qz qw` followed by the 21
    /// upper-triangle information entries row by row. The anchor is the
    /// first vertex listed.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut order: Vec<u64> = self.nodes.keys().copied().collect();
        if let Some(a) = self.anchor {
            if let Some(pos) = order.iter().position(|&id| id == a) {
                order.remove(pos);
                order.insert(0, a);
            }
        }
        for id in order {
            let n = &self.nodes[&id];
            writeln!(s, "VERTEX {} {} {}", id, n.session, pose_fields(&n.pose)).unwrap();
        }
        for e in &self.edges {
            write!(s, "EDGE {} {} {} {}", e.from, e.to, e.kind.as_str(), pose_fields(&e.relative)).unwrap();
            for i in 0..6 {
                for j in i..6 {
                    write!(s, " {}", e.information[(i, j)]).unwrap();
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<PoseGraph, PoseGraphError> {
        let mut g = PoseGraph::new();
        for (lineno, line) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let err = |m: &str| PoseGraphError::Parse {
                line: line_no,
                message: m.to_string(),
            };
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.is_empty() {
                continue;
            }
            let num = |i: usize| -> Result<f64, PoseGraphError> {
                tok.get(i)
                    .ok_or_else(|| err("missing field"))?
                    .parse::<f64>()
                    .map_err(|_| err(&format!("bad number {:?}", tok[i])))
            };
            let int = |i: usize| -> Result<u64, PoseGraphError> {
                tok.get(i)
                    .ok_or_else(|| err("missing field"))?
                    .parse::<u64>()
                    .map_err(|_| err(&format!("bad integer {:?}", tok[i])))
            };
            let pose_at = |i: usize| -> Result<Pose, PoseGraphError> {
                let t = Vector3::new(num(i)?, num(i + 1)?, num(i + 2)?);
                Pose::from_wxyz(num(i + 6)?, num(i + 3)?, num(i + 4)?, num(i + 5)?, t).map_err(|e| err(&e.to_string()))
            };
            match tok[0] {
                "VERTEX" => {
                    if tok.len() != 10 {
                        return Err(err("VERTEX needs 9 fields"));
                    }
                    let session = u32::try_from(int(2)?).map_err(|_| err("session out of range"))?;
                    g.add_node(int(1)?, pose_at(3)?, session)
                        .map_err(|e| err(&e.to_string()))?;
                }
                "EDGE" => {
                    if tok.len() != 32 {
                        return Err(err("EDGE needs 31 fields"));
                    }
                    let kind = match tok[3] {
                        "odometry" => EdgeKind::Odometry,
                        "loop" => EdgeKind::Loop,
                        other => return Err(err(&format!("unknown edge kind {other:?}"))),
                    };
                    let mut info = Matrix6::zeros();
                    let mut k = 11;
                    for i in 0..6 {
                        for j in i..6 {
                            info[(i, j)] = num(k)?;
                            info[(j, i)] = info[(i, j)];
                            k += 1;
                        }
                    }
                    g.add_edge(Edge {
                        from: int(1)?,
                        to: int(2)?,
                        relative: pose_at(4)?,
                        information: info,
                        kind,
                    })
                    .map_err(|e| err(&e.to_string()))?;
                }
                other => return Err(err(&format!("unknown record {other:?}"))),
            }
        }
        Ok(g)
    }
}

fn pose_fields(p: &Pose) -> String {
    let t = p.translation();
    let [w, x, y, z] = p.quaternion_wxyz();
    format!("{} {} {} {} {} {} {}", t.x, t.y, t.z, x, y, z, w)
}

fn next_lambda(lambda: f64) -> f64 {
    if lambda > 0.0 {
        lambda * 10.0
    } else {
        1e-4
    }
}

fn assemble(blocks: &BTreeMap<(usize, usize), Matrix6<f64>>, dim: usize, lambda: f64) -> CscMatrix<f64> {
    let mut coo = CooMatrix::new(dim, dim);
    for (&(i, j), b) in blocks {
        let mut m = *b;
        if i == j && lambda > 0.0 {
            for d in 0..6 {
                // Levenberg-Marquardt scaling, with a floor for zero diagonals.
                m[(d, d)] += lambda * m[(d, d)].max(1e-12);
            }
        }
        coo.push_matrix(6 * i, 6 * j, &m);
    }
    CscMatrix::from(&coo)
}

fn solve_damped(
    blocks: &BTreeMap<(usize, usize), Matrix6<f64>>,
    grad: &DVector<f64>,
    dim: usize,
    lambda: f64,
) -> Option<DVector<f64>> {
    let h = assemble(blocks, dim, lambda);
    let chol = CscCholesky::factor(&h).ok()?;
    let sol = chol.solve(grad);
    let step = -sol.column(0);
    step.iter().all(|x| x.is_finite()).then(|| step.into_owned())
}

fn blocks_all_pd(blocks: &BTreeMap<(usize, usize), Matrix6<f64>>, dim: usize) -> bool {
    CscCholesky::factor(&assemble(blocks, dim, 0.0)).is_ok()
}

/// A loop edge between node `from` of session `from_session` and node `to`
/// of session `to_session` (indices into the merged list).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrossEdge {
    pub from_session: usize,
    pub from: u64,
    pub to_session: usize,
    pub to: u64,
    pub relative: Pose,
    pub information: Matrix6<f64>,
}

/// Id of a node after merging: the session index in the high 32 bits.
pub fn merged_id(session: usize, id: u64) -> u64 {
    ((session as u64) << 32) | (id & 0xffff_ffff)
}

/// Joins per-session graphs through cross-session loop edges and optimizes
/// the union. Sessions are attached in order; each must have a cross edge
/// to one already attached, and its initial poses are moved into the merged
/// frame through the first such edge. Errors name sessions 1-based.
pub fn merge_sessions(
    graphs: &[PoseGraph],
    cross_edges: &[CrossEdge],
    opts: &OptimizeOptions,
) -> Result<(PoseGraph, GraphSolveReport), PoseGraphError> {
    let mut merged = PoseGraph::new();
    for (s, g) in graphs.iter().enumerate() {
        let align = if s == 0 {
            Pose::identity()
        } else {
            let edge = cross_edges
                .iter()
                .find(|e| (e.to_session == s && e.from_session < s) || (e.from_session == s && e.to_session < s))
                .ok_or(PoseGraphError::UnconnectedSession(s + 1))?;
            // world pose of the new-session node implied by the edge
            let (old_s, old_id, new_id, rel) = if edge.to_session == s {
                (edge.from_session, edge.from, edge.to, edge.relative)
            } else {
                (edge.to_session, edge.to, edge.from, edge.relative.inverse())
            };
            let old = merged
                .pose(merged_id(old_s, old_id))
                .ok_or(PoseGraphError::UnknownNode(merged_id(old_s, old_id)))?;
            let local = g.pose(new_id).ok_or(PoseGraphError::UnknownNode(new_id))?;
            old.compose(&rel).compose(&local.inverse())
        };
        let anchor = if s == 0 { g.anchor } else { None };
        let mut ids: Vec<u64> = g.nodes.keys().copied().collect();
        if let Some(a) = anchor {
            ids.retain(|&id| id != a);
            ids.insert(0, a);
        }
        for id in ids {
            let n = g.nodes[&id];
            merged.add_node(merged_id(s, id), align.compose(&n.pose), s as u32)?;
        }
        for e in &g.edges {
            merged.add_edge(Edge {
                from: merged_id(s, e.from),
                to: merged_id(s, e.to),
                ..*e
            })?;
        }
    }
    for e in cross_edges {
        if e.from_session >= graphs.len() || e.to_session >= graphs.len() {
            return Err(PoseGraphError::UnconnectedSession(e.from_session.max(e.to_session) + 1));
        }
        merged.add_edge(Edge {
            from: merged_id(e.from_session, e.from),
            to: merged_id(e.to_session, e.to),
            relative: e.relative,
            information: e.information,
            kind: EdgeKind::Loop,
        })?;
    }
    let report = merged.optimize(opts)?;
    Ok((merged, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng, scale: f64) -> Pose {
        Pose::exp(&Vector6::from_fn(|_, _| rng.random_range(-scale..scale)))
    }

    fn square() -> PoseGraph {
        let mut g = PoseGraph::new();
        let step = Pose::from_axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2, Vector3::new(1.0, 0.0, 0.0));
        let mut p = Pose::identity();
        for i in 0..4 {
            g.add_node(i, p, 0).unwrap();
            p = p.compose(&step);
        }
        for i in 0..4u64 {
            g.add_edge(Edge {
                from: i,
                to: (i + 1) % 4,
                relative: step,
                information: Matrix6::identity(),
                kind: if i == 3 { EdgeKind::Loop } else { EdgeKind::Odometry },
            })
            .unwrap();
        }
        g
    }

    #[test]
    fn consistent_edge_has_zero_residual() {
        let g = square();
        for e in &g.edges {
            assert!(g.edge_residual(e).unwrap().norm() < 1e-12);
        }
    }

    #[test]
    fn translated_endpoint_residual() {
        let mut g = PoseGraph::new();
        g.add_node(0, Pose::identity(), 0).unwrap();
        g.add_node(1, Pose::from_translation(Vector3::new(1.1, 0.0, 0.0)), 0).unwrap();
        let e = Edge {
            from: 0,
            to: 1,
            relative: Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)),
            information: Matrix6::identity(),
            kind: EdgeKind::Odometry,
        };
        g.add_edge(e).unwrap();
        let r = g.edge_residual(&e).unwrap();
        assert!((r.fixed_rows::<3>(3).norm() - 0.1).abs() < 1e-12);
        assert!(matches!(
            g.edge_residual(&Edge { to: 9, ..e }),
            Err(PoseGraphError::UnknownNode(9))
        ));
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let a = random_pose(&mut rng, 1.0);
            let z = random_pose(&mut rng, 0.8);
            let b = a.compose(&z).compose(&random_pose(&mut rng, 0.3));
            let (_, ja, jb) = residual_jacobians(&a, &b, &z).unwrap();
            let h = 1e-6;
            for i in 0..6 {
                let mut e = Vector6::zeros();
                e[i] = h;
                let fa = (relative_residual(&Pose::exp(&e).compose(&a), &b, &z).unwrap()
                    - relative_residual(&Pose::exp(&-e).compose(&a), &b, &z).unwrap())
                    / (2.0 * h);
                let fb = (relative_residual(&a, &Pose::exp(&e).compose(&b), &z).unwrap()
                    - relative_residual(&a, &Pose::exp(&-e).compose(&b), &z).unwrap())
                    / (2.0 * h);
                let scale = ja.abs().max().max(1.0);
                assert!((fa - ja.column(i)).abs().max() <= 1e-5 * scale);
                assert!((fb - jb.column(i)).abs().max() <= 1e-5 * scale);
            }
        }
    }

    #[test]
    fn noiseless_square_is_a_fixed_point() {
        let mut g = square();
        let before = g.clone();
        let rep = g.optimize(&OptimizeOptions::default()).unwrap();
        assert!(rep.final_cost < 1e-18);
        for (id, n) in &g.nodes {
            let d = n.pose.inverse().compose(&before.nodes[id].pose);
            assert!(d.translation().norm() < 1e-12 && d.angle() < 1e-12);
        }
    }

    #[test]
    fn perturbed_square_recovers() {
        let mut g = square();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for id in 1..4 {
            let n = g.nodes.get_mut(&id).unwrap();
            n.pose = random_pose(&mut rng, 0.1).compose(&n.pose);
        }
        let rep = g.optimize(&OptimizeOptions::default()).unwrap();
        assert!(rep.final_cost < 1e-18, "{rep:?}");
        assert!(rep.final_cost <= rep.initial_cost);
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let mut g = square();
        g.add_node(10, Pose::identity(), 0).unwrap();
        g.add_node(11, Pose::identity(), 0).unwrap();
        g.add_edge(Edge {
            from: 10,
            to: 11,
            relative: Pose::identity(),
            information: Matrix6::identity(),
            kind: EdgeKind::Odometry,
        })
        .unwrap();
        assert_eq!(g.connected_components().len(), 2);
        assert_eq!(g.optimize(&OptimizeOptions::default()), Err(PoseGraphError::Disconnected(2)));
    }

    #[test]
    fn gauge_transform_commutes_with_optimization() {
        let mut g = square();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for id in 1..4 {
            let n = g.nodes.get_mut(&id).unwrap();
            n.pose = random_pose(&mut rng, 0.05).compose(&n.pose);
        }
        let t = random_pose(&mut rng, 1.0);
        let mut moved = g.clone();
        for n in moved.nodes.values_mut() {
            n.pose = t.compose(&n.pose);
        }
        g.optimize(&OptimizeOptions::default()).unwrap();
        moved.optimize(&OptimizeOptions::default()).unwrap();
        for (id, n) in &g.nodes {
            let d = t.compose(&n.pose).inverse().compose(&moved.nodes[id].pose);
            assert!(d.translation().norm() < 1e-9 && d.angle() < 1e-9);
        }
    }

    #[test]
    fn text_round_trip() {
        let mut g = square();
        g.edges[1].information[(0, 5)] = 0.25;
        g.edges[1].information[(5, 0)] = 0.25;
        let back = PoseGraph::from_text(&g.to_text()).unwrap();
        assert_eq!(back, g);
        assert!(matches!(
            PoseGraph::from_text("VERTEX 1 0 0 0 0 0 0 0\n"),
            Err(PoseGraphError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn merging_duplicate_session_coincides() {
        let g = square();
        let cross = CrossEdge {
            from_session: 0,
            from: 0,
            to_session: 1,
            to: 0,
            relative: Pose::identity(),
            information: Matrix6::identity(),
        };
        let (m, _) = merge_sessions(&[g.clone(), g.clone()], &[cross], &OptimizeOptions::default()).unwrap();
        for id in 0..4 {
            let a = m.pose(merged_id(0, id)).unwrap();
            let b = m.pose(merged_id(1, id)).unwrap();
            let d = a.inverse().compose(b);
            assert!(d.translation().norm() < 1e-9 && d.angle() < 1e-9);
        }
        assert_eq!(m.anchor, Some(merged_id(0, 0)));
    }

    #[test]
    fn merge_names_unconnected_session() {
        let g = square();
        let cross = CrossEdge {
            from_session: 0,
            from: 1,
            to_session: 1,
            to: 2,
            relative: Pose::identity(),
            information: Matrix6::identity(),
        };
        let r = merge_sessions(&[g.clone(), g.clone(), g], &[cross], &OptimizeOptions::default());
        assert_eq!(r.unwrap_err(), PoseGraphError::UnconnectedSession(3));
    }
}
