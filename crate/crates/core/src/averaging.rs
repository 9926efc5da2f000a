//! Rotation averaging on the time grid.
//!
//! Minimizes
//! `Σ_edges ‖R_α − R̃_αβ·R_β‖ + w·Σ_anchors ‖R_γ − R̃_γ·R_G‖`
//! over the node attitudes and a dummy attitude `R_G`, by Gauss–Seidel
//! sweeps: each variable in turn becomes the chordal mean of what its
//! neighbours predict for it. The solution is then re-oriented so that
//! `R_G = I`.

use std::io::{BufRead, Write};

use log::warn;
use nalgebra::Matrix3;

use crate::bank::{check_coverage, Edge, EdgeSet};
use crate::error::{Error, Result};
use crate::geom::{angular_distance, project_to_so3, Rotation, RowMajor};
use crate::sim::read_attitude_rows;

/// Absolute attitude measurement at a grid time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub t_us: u64,
    pub rotation: Rotation,
}

/// Reads `t_us,r00..r22` rows.
pub fn read_anchors<R: BufRead>(r: R) -> Result<Vec<Anchor>> {
    Ok(read_attitude_rows(r)?
        .into_iter()
        .map(|(t_us, rotation)| Anchor { t_us, rotation })
        .collect())
}

pub fn write_anchors<W: Write>(anchors: &[Anchor], mut w: W) -> Result<()> {
    writeln!(w, "t_us,r00,r01,r02,r10,r11,r12,r20,r21,r22")?;
    for a in anchors {
        writeln!(w, "{},{}", a.t_us, RowMajor(&a.rotation))?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct GraphEdge {
    from: usize,
    to: usize,
    rotation: Rotation,
}

#[derive(Clone, Debug)]
pub struct AttitudeGraph {
    /// Grid times referenced by an edge or an anchor, increasing.
    nodes: Vec<u64>,
    edges: Vec<GraphEdge>,
    anchors: Vec<(usize, Rotation)>,
    /// Edge indices incident to each node.
    incident: Vec<Vec<usize>>,
    /// Anchor indices at each node.
    anchored: Vec<Vec<usize>>,
    anchor_weight: f64,
    dt_us: u64,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn root(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn join(&mut self, a: usize, b: usize) {
        let (a, b) = (self.root(a), self.root(b));
        self.0[a.max(b)] = a.min(b);
    }
}

/// Builds the graph. Every connected component of the edge graph must hold
/// an anchor (anchors are linked through the dummy attitude). Without
/// anchors only the component of the earliest node is kept, gauge-fixed at
/// that node.
pub fn build_graph(edges: &EdgeSet, anchors: &[Anchor], dt_us: u64, anchor_weight: f64) -> Result<AttitudeGraph> {
    if dt_us == 0 {
        return Err(Error::invalid("grid spacing must be positive"));
    }
    if !(anchor_weight > 0.0 && anchor_weight.is_finite()) {
        return Err(Error::invalid(format!("anchor weight {anchor_weight} must be positive")));
    }
    let off_grid = |t: u64| !t.is_multiple_of(dt_us);
    if let Some(e) = edges.edges.iter().find(|e| off_grid(e.alpha) || off_grid(e.beta)) {
        return Err(Error::invalid(format!(
            "edge [{}, {}] is off the {dt_us} us grid",
            e.alpha, e.beta
        )));
    }
    if let Some(a) = anchors.iter().find(|a| off_grid(a.t_us)) {
        return Err(Error::invalid(format!("anchor at {} us is off the {dt_us} us grid", a.t_us)));
    }
    if edges.is_empty() && anchors.is_empty() {
        return Err(Error::invalid("nothing to average"));
    }
    if !edges.is_empty() {
        check_coverage(&edges.edges)?;
    }

    let mut nodes: Vec<u64> = edges
        .edges
        .iter()
        .flat_map(|e| [e.alpha, e.beta])
        .chain(anchors.iter().map(|a| a.t_us))
        .collect();
    nodes.sort_unstable();
    nodes.dedup();
    let index = |t: u64| nodes.binary_search(&t).expect("time is a node");

    let graph_edges: Vec<GraphEdge> = edges
        .edges
        .iter()
        .map(|e| GraphEdge {
            from: index(e.alpha),
            to: index(e.beta),
            rotation: e.rotation,
        })
        .collect();
    let graph_anchors: Vec<(usize, Rotation)> = anchors.iter().map(|a| (index(a.t_us), a.rotation)).collect();

    let mut incident = vec![Vec::new(); nodes.len()];
    let mut uf = UnionFind::new(nodes.len());
    for (k, e) in graph_edges.iter().enumerate() {
        incident[e.from].push(k);
        incident[e.to].push(k);
        uf.join(e.from, e.to);
    }
    let mut anchored = vec![Vec::new(); nodes.len()];
    for (k, (n, _)) in graph_anchors.iter().enumerate() {
        anchored[*n].push(k);
    }

    let mut has_anchor = vec![false; nodes.len()];
    for (n, _) in &graph_anchors {
        let r = uf.root(*n);
        has_anchor[r] = true;
    }
    let first_root = uf.root(0);
    if graph_anchors.is_empty() && (0..nodes.len()).any(|i| uf.root(i) != first_root) {
        let kept: Vec<Edge> = edges
            .edges
            .iter()
            .filter(|e| uf.root(index(e.alpha)) == first_root)
            .copied()
            .collect();
        let n_kept = (0..nodes.len()).filter(|i| uf.root(*i) == first_root).count();
        warn!(
            "no anchors and {} nodes not linked to node {} us: keeping its component of {n_kept} nodes",
            nodes.len() - n_kept,
            nodes[0]
        );
        return build_graph(&EdgeSet { edges: kept }, anchors, dt_us, anchor_weight);
    }
    for i in 0..nodes.len() {
        let r = uf.root(i);
        let ok = if graph_anchors.is_empty() { r == first_root } else { has_anchor[r] };
        if !ok {
            warn!("the component holding node {} us has no anchor", nodes[i]);
            return Err(Error::Disconnected {
                gap_start_us: if i > 0 { nodes[i - 1] } else { nodes[i] },
                gap_end_us: nodes[i],
            });
        }
    }
    if graph_anchors.is_empty() {
        warn!("no anchors: attitudes are relative to the first node");
    }

    Ok(AttitudeGraph {
        nodes,
        edges: graph_edges,
        anchors: graph_anchors,
        incident,
        anchored,
        anchor_weight,
        dt_us,
    })
}

impl AttitudeGraph {
    pub fn nodes(&self) -> &[u64] {
        &self.nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_anchors(&self) -> usize {
        self.anchors.len()
    }

    pub fn dt_us(&self) -> u64 {
        self.dt_us
    }

    pub fn anchor_weight(&self) -> f64 {
        self.anchor_weight
    }

    /// Squared chordal objective, the quantity each node update minimizes.
    pub fn squared_objective(&self, attitudes: &[Rotation], dummy: &Rotation) -> f64 {
        let edges: f64 = self
            .edges
            .iter()
            .map(|e| (attitudes[e.from].matrix() - e.rotation.matrix() * attitudes[e.to].matrix()).norm_squared())
            .sum();
        let anchors: f64 = self
            .anchors
            .iter()
            .map(|(n, r)| (attitudes[*n].matrix() - r.matrix() * dummy.matrix()).norm_squared())
            .sum();
        edges + self.anchor_weight * anchors
    }

    /// The objective with unsquared Frobenius norms.
    pub fn objective(&self, attitudes: &[Rotation], dummy: &Rotation) -> f64 {
        let edges: f64 = self
            .edges
            .iter()
            .map(|e| (attitudes[e.from].matrix() - e.rotation.matrix() * attitudes[e.to].matrix()).norm())
            .sum();
        let anchors: f64 = self
            .anchors
            .iter()
            .map(|(n, r)| (attitudes[*n].matrix() - r.matrix() * dummy.matrix()).norm())
            .sum();
        edges + self.anchor_weight * anchors
    }

    /// Attitudes propagated from the anchors (or the identity at node 0)
    /// through the edges in breadth-first order.
    fn spanning_tree(&self) -> Vec<Rotation> {
        let n = self.nodes.len();
        let mut attitudes = vec![Rotation::identity(); n];
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::new();
        if self.anchors.is_empty() {
            seen[0] = true;
            queue.push_back(0);
        }
        for (k, r) in &self.anchors {
            if !seen[*k] {
                seen[*k] = true;
                attitudes[*k] = *r;
                queue.push_back(*k);
            }
        }
        while let Some(i) = queue.pop_front() {
            for &k in &self.incident[i] {
                let e = &self.edges[k];
                let (j, r) = if e.from == i {
                    // R_β = R̃ᵀ·R_α
                    (e.to, e.rotation.transpose() * attitudes[i])
                } else {
                    (e.from, e.rotation * attitudes[i])
                };
                if !seen[j] {
                    seen[j] = true;
                    attitudes[j] = r;
                    queue.push_back(j);
                }
            }
        }
        attitudes
    }

    fn node_target(&self, i: usize, attitudes: &[Rotation], dummy: &Rotation) -> Matrix3<f64> {
        let mut m = Matrix3::zeros();
        for &k in &self.incident[i] {
            let e = &self.edges[k];
            if e.from == i {
                m += e.rotation.matrix() * attitudes[e.to].matrix();
            } else {
                m += e.rotation.matrix().transpose() * attitudes[e.from].matrix();
            }
        }
        for &k in &self.anchored[i] {
            m += self.anchor_weight * self.anchors[k].1.matrix() * dummy.matrix();
        }
        m
    }
}

/// Starting point of the sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Every attitude and the dummy at the identity.
    Identity,
    /// Attitudes composed along a breadth-first spanning tree grown from the
    /// anchors (or the gauge node), dummy at the identity.
    SpanningTree,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Stop once no variable moves more than this, radians.
    pub tol: f64,
    pub init: Init,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iters: 500,
            tol: 1e-6,
            init: Init::SpanningTree,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AttitudeSolution {
    pub times: Vec<u64>,
    pub attitudes: Vec<Rotation>,
    /// Dummy attitude; the identity after re-orientation.
    pub dummy: Rotation,
    /// `(alpha, beta, ‖R_α − R̃·R_β‖_F)` per edge.
    pub edge_residuals: Vec<(u64, u64, f64)>,
    /// `(t, ‖R_t − R̃_t‖_F)` per anchor.
    pub anchor_residuals: Vec<(u64, f64)>,
    pub iterations: usize,
    pub converged: bool,
    /// Squared objective after each sweep.
    pub objective_trace: Vec<f64>,
}

impl AttitudeSolution {
    pub fn attitude(&self, t_us: u64) -> Option<&Rotation> {
        self.times.binary_search(&t_us).ok().map(|i| &self.attitudes[i])
    }

    /// `t_us,r00..r22,flag`; flag is 1 when the solver stopped at its
    /// iteration limit.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t_us,r00,r01,r02,r10,r11,r12,r20,r21,r22,flag")?;
        let flag = u8::from(!self.converged);
        for (t, r) in self.times.iter().zip(&self.attitudes) {
            writeln!(w, "{t},{},{flag}", RowMajor(r))?;
        }
        Ok(())
    }

    /// Reads a solution written by [`write_csv`](Self::write_csv); residuals
    /// are not stored in that file and come back empty.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let rows = read_attitude_rows(r)?;
        Ok(AttitudeSolution {
            times: rows.iter().map(|(t, _)| *t).collect(),
            attitudes: rows.into_iter().map(|(_, r)| r).collect(),
            dummy: Rotation::identity(),
            edge_residuals: Vec::new(),
            anchor_residuals: Vec::new(),
            iterations: 0,
            converged: true,
            objective_trace: Vec::new(),
        })
    }

    /// `kind,alpha_us,beta_us,chordal,angle_deg`; anchors have
    /// `alpha_us = beta_us`.
    pub fn write_residuals<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "kind,alpha_us,beta_us,chordal,angle_deg")?;
        let deg = |c: f64| 2.0 * (c / (2.0 * std::f64::consts::SQRT_2)).clamp(0.0, 1.0).asin().to_degrees();
        for (a, b, c) in &self.edge_residuals {
            writeln!(w, "edge,{a},{b},{c:.9e},{:.9e}", deg(*c))?;
        }
        for (t, c) in &self.anchor_residuals {
            writeln!(w, "anchor,{t},{t},{c:.9e},{:.9e}", deg(*c))?;
        }
        Ok(())
    }
}

/// Per-edge `(alpha, beta, error)` and per-anchor `(t, error)` residuals.
type Residuals = (Vec<(u64, u64, f64)>, Vec<(u64, f64)>);

fn residuals(graph: &AttitudeGraph, attitudes: &[Rotation], dummy: &Rotation) -> Residuals {
    let edges = graph
        .edges
        .iter()
        .map(|e| {
            let r = (attitudes[e.from].matrix() - e.rotation.matrix() * attitudes[e.to].matrix()).norm();
            (graph.nodes[e.from], graph.nodes[e.to], r)
        })
        .collect();
    let anchors = graph
        .anchors
        .iter()
        .map(|(n, r)| {
            (
                graph.nodes[*n],
                (attitudes[*n].matrix() - r.matrix() * dummy.matrix()).norm(),
            )
        })
        .collect();
    (edges, anchors)
}

/// Gauss–Seidel sweeps over the nodes in time order, then the dummy,
/// followed by [`re_orient`].
pub fn solve(graph: &AttitudeGraph, opts: &SolveOptions) -> Result<AttitudeSolution> {
    let n = graph.nodes.len();
    let mut attitudes = match opts.init {
        Init::Identity => vec![Rotation::identity(); n],
        Init::SpanningTree => graph.spanning_tree(),
    };
    let mut dummy = Rotation::identity();
    // without anchors the first node holds the gauge
    let gauge_node = graph.anchors.is_empty().then_some(0);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iters {
        iterations += 1;
        let mut max_step: f64 = 0.0;
        for i in 0..n {
            if gauge_node == Some(i) {
                continue;
            }
            let m = graph.node_target(i, &attitudes, &dummy);
            if m.norm() == 0.0 {
                continue;
            }
            let next = project_to_so3(&m);
            max_step = max_step.max(angular_distance(&next, &attitudes[i]));
            attitudes[i] = next;
        }
        if !graph.anchors.is_empty() {
            let mut m = Matrix3::zeros();
            for (k, r) in &graph.anchors {
                m += r.matrix().transpose() * attitudes[*k].matrix();
            }
            let next = project_to_so3(&m);
            max_step = max_step.max(angular_distance(&next, &dummy));
            dummy = next;
        }
        let f = graph.squared_objective(&attitudes, &dummy);
        if !f.is_finite() {
            return Err(Error::OptimizerAbort(format!("objective {f} at sweep {iterations}")));
        }
        trace.push(f);
        if max_step < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("rotation averaging stopped after {iterations} sweeps without reaching tolerance");
    }

    let (edge_residuals, anchor_residuals) = residuals(graph, &attitudes, &dummy);
    let solution = AttitudeSolution {
        times: graph.nodes.clone(),
        attitudes,
        dummy,
        edge_residuals,
        anchor_residuals,
        iterations,
        converged,
        objective_trace: trace,
    };
    Ok(re_orient(solution))
}

/// Right-multiplies every attitude and the dummy by the dummy's transpose,
/// so the dummy becomes the identity. Residuals are unchanged.
pub fn re_orient(mut solution: AttitudeSolution) -> AttitudeSolution {
    let g = solution.dummy.transpose();
    for r in &mut solution.attitudes {
        *r = *r * g;
    }
    solution.dummy = solution.dummy * g;
    solution
}

/// Dead reckoning: composes the finest-resolution edges forward and backward
/// from `anchor` along the chain of windows that meet end to start.
pub fn chain_relatives(edges: &EdgeSet, anchor: &Anchor) -> Result<AttitudeSolution> {
    let finest = edges
        .edges
        .iter()
        .map(Edge::duration_us)
        .min()
        .ok_or_else(|| Error::invalid("no edges to chain"))?;
    let mut chain: Vec<&Edge> = edges.edges.iter().filter(|e| e.duration_us() == finest).collect();
    chain.sort_by_key(|e| e.alpha);
    let starting = |t: u64| chain.iter().find(|e| e.alpha == t).copied();
    let ending = |t: u64| chain.iter().find(|e| e.beta == t).copied();
    if starting(anchor.t_us).is_none() && ending(anchor.t_us).is_none() {
        return Err(Error::invalid(format!(
            "anchor at {} us is not an endpoint of a {finest} us edge",
            anchor.t_us
        )));
    }

    let mut forward = vec![(anchor.t_us, anchor.rotation)];
    let (mut t, mut r) = (anchor.t_us, anchor.rotation);
    while let Some(e) = starting(t) {
        // R_β = R̃ᵀ·R_α
        r = e.rotation.transpose() * r;
        t = e.beta;
        forward.push((t, r));
    }
    let mut backward = Vec::new();
    let (mut t, mut r) = (anchor.t_us, anchor.rotation);
    while let Some(e) = ending(t) {
        r = e.rotation * r;
        t = e.alpha;
        backward.push((t, r));
    }

    // the chain must reach both ends of the finest lane it runs on
    let (first, last) = (backward.last().map_or(anchor.t_us, |p| p.0), t_last(&forward));
    let phase = anchor.t_us % finest;
    let lane: Vec<&&Edge> = chain.iter().filter(|e| e.alpha % finest == phase).collect();
    if let Some(e) = lane.iter().find(|e| e.alpha > last) {
        return Err(Error::Disconnected {
            gap_start_us: last,
            gap_end_us: e.alpha,
        });
    }
    if let Some(e) = lane.iter().rev().find(|e| e.beta < first) {
        return Err(Error::Disconnected {
            gap_start_us: e.beta,
            gap_end_us: first,
        });
    }

    backward.reverse();
    backward.extend(forward);
    let (times, attitudes): (Vec<u64>, Vec<Rotation>) = backward.into_iter().unzip();
    Ok(AttitudeSolution {
        times,
        attitudes,
        dummy: Rotation::identity(),
        edge_residuals: Vec::new(),
        anchor_residuals: Vec::new(),
        iterations: 0,
        converged: true,
        objective_trace: Vec::new(),
    })
}

fn t_last(v: &[(u64, Rotation)]) -> u64 {
    v.last().map_or(0, |p| p.0)
}
