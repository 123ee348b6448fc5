//! Exact discrete Kantorovich solver for costs |x-y|^(1+eps).
//!
//! The transportation polytope is solved by a spanning-tree network
//! simplex with a block pivot rule. Costs are evaluated on demand, so no
//! dense cost matrix is stored. Pivoting is deterministic: the same
//! instance always yields the same basis, plan, and potentials.

use crate::grid::dist;
use crate::measures::AtomicMeasure;
use crate::{Error, Result};

/// Relative tolerance for marginal and duality-gap checks.
pub const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanEntry {
    pub i: usize,
    pub j: usize,
    pub mass: f64,
}

/// Sparse coupling between two atomic measures.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub source: AtomicMeasure,
    pub target: AtomicMeasure,
    pub entries: Vec<PlanEntry>,
    pub cost_exponent: f64,
}

impl TransportPlan {
    /// Transport cost of the plan at an arbitrary exponent (not
    /// necessarily the one it was solved with).
    pub fn cost_at_exponent(&self, exponent: f64) -> f64 {
        let src = self.source.atoms();
        let tgt = self.target.atoms();
        self.entries
            .iter()
            .map(|e| e.mass * dist(src[e.i].pos, tgt[e.j].pos).powf(exponent))
            .sum()
    }

    pub fn cost(&self) -> f64 {
        self.cost_at_exponent(self.cost_exponent)
    }

    /// Max relative marginal violation (row sums vs source, column sums
    /// vs target).
    pub fn marginal_defect(&self) -> f64 {
        let mut row = vec![0.0; self.source.len()];
        let mut col = vec![0.0; self.target.len()];
        for e in &self.entries {
            row[e.i] += e.mass;
            col[e.j] += e.mass;
        }
        let mut worst: f64 = 0.0;
        for (r, a) in row.iter().zip(self.source.atoms()) {
            worst = worst.max((r - a.mass).abs() / a.mass.max(1e-300));
        }
        for (c, a) in col.iter().zip(self.target.atoms()) {
            worst = worst.max((c - a.mass).abs() / a.mass.max(1e-300));
        }
        worst
    }

    /// CSV export: `i,j,mass,cost_ij`.
    pub fn to_csv(&self) -> String {
        let src = self.source.atoms();
        let tgt = self.target.atoms();
        let mut out = String::from("i,j,mass,cost_ij\n");
        for e in &self.entries {
            let c = dist(src[e.i].pos, tgt[e.j].pos).powf(self.cost_exponent);
            out.push_str(&format!("{},{},{},{}\n", e.i, e.j, e.mass, c));
        }
        out
    }
}

/// Dual potentials: `u` on source atoms, `w` on target atoms, with
/// feasibility u_i - w_j <= |x_i - y_j|^(1+eps).
#[derive(Debug, Clone)]
pub struct DualPotentials {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub cost_exponent: f64,
}

impl DualPotentials {
    /// CSV export: `side,index,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("side,index,value\n");
        for (i, v) in self.u.iter().enumerate() {
            out.push_str(&format!("u,{i},{v}\n"));
        }
        for (j, v) in self.w.iter().enumerate() {
            out.push_str(&format!("w,{j},{v}\n"));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub plan: TransportPlan,
    pub duals: DualPotentials,
    pub cost: f64,
}

/// Solve the discrete Kantorovich problem with cost |x-y|^(1+eps).
pub fn solve_kp(mu: &AtomicMeasure, nu: &AtomicMeasure, eps: f64) -> Result<Solution> {
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if !(eps >= 0.0) {
        return Err(Error::InvalidParameter(format!("eps {eps} must be >= 0")));
    }
    if mu.dim() != nu.dim() {
        return Err(Error::MismatchedInstance("dimension mismatch".into()));
    }
    let sm = mu.total_mass();
    let tm = nu.total_mass();
    if (sm - tm).abs() > FEAS_TOL * sm {
        return Err(Error::MassImbalance { supply: sm, demand: tm });
    }
    let exponent = 1.0 + eps;
    // rescale target masses so the network is exactly balanced
    let scale = sm / tm;
    let supplies: Vec<f64> = mu.atoms().iter().map(|a| a.mass).collect();
    let demands: Vec<f64> = nu.atoms().iter().map(|a| a.mass * scale).collect();
    let src_pos: Vec<[f64; 3]> = mu.atoms().iter().map(|a| a.pos).collect();
    let tgt_pos: Vec<[f64; 3]> = nu.atoms().iter().map(|a| a.pos).collect();

    let net = NetworkSimplex::solve(&src_pos, &tgt_pos, &supplies, &demands, exponent)?;

    let entries: Vec<PlanEntry> = net
        .flows
        .into_iter()
        .filter(|&(_, _, f)| f > 0.0)
        .map(|(i, j, f)| PlanEntry { i, j, mass: f })
        .collect();
    let plan = TransportPlan {
        source: mu.clone(),
        target: nu.clone(),
        entries,
        cost_exponent: exponent,
    };
    let cost = plan.cost();
    let duals = DualPotentials {
        u: net.pi_source,
        w: net.pi_target,
        cost_exponent: exponent,
    };
    Ok(Solution { plan, duals, cost })
}

/// Primal cost minus dual value; an optimality certificate iff below
/// tolerance.
pub fn duality_gap(plan: &TransportPlan, duals: &DualPotentials) -> Result<f64> {
    if plan.source.len() != duals.u.len()
        || plan.target.len() != duals.w.len()
        || plan.cost_exponent != duals.cost_exponent
    {
        return Err(Error::MismatchedInstance(
            "plan and duals come from different instances".into(),
        ));
    }
    let primal = plan.cost();
    let dual: f64 = plan
        .source
        .atoms()
        .iter()
        .zip(&duals.u)
        .map(|(a, u)| a.mass * u)
        .sum::<f64>()
        - plan
            .target
            .atoms()
            .iter()
            .zip(&duals.w)
            .map(|(a, w)| a.mass * w)
            .sum::<f64>();
    Ok(primal - dual)
}

/// A point carrying a dual potential value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialSite {
    Source(usize),
    Target(usize),
}

/// Max violation of the 1-Lipschitz property |u(a) - u(b)| <= |a - b|
/// over the sampled pairs of potential sites. Only meaningful at eps = 0.
pub fn check_lip1(
    duals: &DualPotentials,
    source: &AtomicMeasure,
    target: &AtomicMeasure,
    pairs: &[(PotentialSite, PotentialSite)],
) -> Result<f64> {
    if duals.cost_exponent != 1.0 {
        return Err(Error::LipOnlyAtExponentOne);
    }
    let site = |s: PotentialSite| -> ([f64; 3], f64) {
        match s {
            PotentialSite::Source(i) => (source.atoms()[i].pos, duals.u[i]),
            PotentialSite::Target(j) => (target.atoms()[j].pos, duals.w[j]),
        }
    };
    let mut worst: f64 = 0.0;
    for &(a, b) in pairs {
        let (pa, va) = site(a);
        let (pb, vb) = site(b);
        worst = worst.max((va - vb).abs() - dist(pa, pb));
    }
    Ok(worst)
}

/// A transport ray: a nontrivial plan segment with its potential drop.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub from: [f64; 3],
    pub to: [f64; 3],
    pub mass: f64,
    pub drop: f64,
    pub length: f64,
}

/// All nontrivial plan segments annotated with the potential drop
/// u_i - w_j. At eps = 0 on an optimal pair the drop equals the length.
pub fn extract_rays(plan: &TransportPlan, duals: &DualPotentials) -> Result<Vec<Ray>> {
    if plan.source.len() != duals.u.len() || plan.target.len() != duals.w.len() {
        return Err(Error::MismatchedInstance("plan/duals size mismatch".into()));
    }
    let src = plan.source.atoms();
    let tgt = plan.target.atoms();
    Ok(plan
        .entries
        .iter()
        .filter_map(|e| {
            let length = dist(src[e.i].pos, tgt[e.j].pos);
            (e.mass > 0.0 && length > 0.0).then(|| Ray {
                from: src[e.i].pos,
                to: tgt[e.j].pos,
                mass: e.mass,
                drop: duals.u[e.i] - duals.w[e.j],
                length,
            })
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Network simplex on the bipartite transportation graph.
// ---------------------------------------------------------------------------

struct NetworkSimplex {
    flows: Vec<(usize, usize, f64)>,
    pi_source: Vec<f64>,
    pi_target: Vec<f64>,
}

const NO_NODE: usize = usize::MAX;

struct Tree {
    m: usize,
    n: usize,
    parent: Vec<usize>,
    // arc to parent: for real arcs, (source index, target index);
    // artificial arcs are encoded as None
    pred_real: Vec<Option<(usize, usize)>>,
    // true if the tree arc is directed node -> parent
    dir_up: Vec<bool>,
    flow: Vec<f64>,
    depth: Vec<u32>,
    pi: Vec<f64>,
}

impl Tree {
    /// Node id of source i is i, of target j is m + j, root is m + n.
    fn root(&self) -> usize {
        self.m + self.n
    }

    /// Recompute depth and potentials from parent pointers.
    fn refresh(&mut self, cost: &impl Fn(usize, usize) -> f64, big: f64) {
        let nn = self.parent.len();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); nn];
        for v in 0..nn {
            if self.parent[v] != NO_NODE {
                children[self.parent[v]].push(v);
            }
        }
        let root = self.root();
        self.depth[root] = 0;
        self.pi[root] = 0.0;
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            for &c in &children[v] {
                self.depth[c] = self.depth[v] + 1;
                let arc_cost = match self.pred_real[c] {
                    Some((i, j)) => cost(i, j),
                    None => big,
                };
                // zero reduced cost on tree arcs: c - pi[from] + pi[to] = 0
                self.pi[c] = if self.dir_up[c] {
                    arc_cost + self.pi[v]
                } else {
                    self.pi[v] - arc_cost
                };
                stack.push(c);
            }
        }
    }
}

impl NetworkSimplex {
    fn solve(
        src: &[[f64; 3]],
        tgt: &[[f64; 3]],
        supplies: &[f64],
        demands: &[f64],
        exponent: f64,
    ) -> Result<NetworkSimplex> {
        let m = src.len();
        let n = tgt.len();
        let num_arcs = m * n;
        let cost = |i: usize, j: usize| -> f64 {
            let d = dist(src[i], tgt[j]);
            if exponent == 1.0 {
                d
            } else {
                d.powf(exponent)
            }
        };
        // scale-aware constants
        let mut max_cost: f64 = 0.0;
        for i in 0..m {
            for j in 0..n {
                max_cost = max_cost.max(cost(i, j));
            }
        }
        let big = (max_cost + 1.0) * (m + n) as f64;
        let tol = 1e-12 * (1.0 + max_cost);

        let nn = m + n + 1;
        let root = m + n;
        let mut tree = Tree {
            m,
            n,
            parent: vec![root; nn],
            pred_real: vec![None; nn],
            dir_up: vec![false; nn],
            flow: vec![0.0; nn],
            depth: vec![0; nn],
            pi: vec![0.0; nn],
        };
        tree.parent[root] = NO_NODE;
        for i in 0..m {
            tree.dir_up[i] = true; // source -> root
            tree.flow[i] = supplies[i];
        }
        for j in 0..n {
            tree.dir_up[m + j] = false; // root -> target
            tree.flow[m + j] = demands[j];
        }
        tree.refresh(&cost, big);

        // whether a real arc (i, j) is currently in the tree
        let mut in_tree = vec![false; num_arcs];

        let block = ((num_arcs as f64).sqrt() as usize).clamp(16, 4096).min(num_arcs);
        let mut next_arc = 0usize;
        let max_pivots = 200 * (m + n) + 200_000;
        let mut pivots = 0usize;

        loop {
            // block search for the most negative reduced cost
            let mut best_arc = None;
            let mut best_red = -tol;
            let mut scanned = 0usize;
            while scanned < num_arcs {
                let stop = (next_arc + block).min(next_arc + (num_arcs - scanned));
                for a in next_arc..stop {
                    let a = a % num_arcs;
                    if in_tree[a] {
                        continue;
                    }
                    let (i, j) = (a / n, a % n);
                    let r = cost(i, j) - tree.pi[i] + tree.pi[m + j];
                    if r < best_red {
                        best_red = r;
                        best_arc = Some(a);
                    }
                }
                scanned += stop - next_arc;
                next_arc = stop % num_arcs;
                if best_arc.is_some() {
                    break;
                }
            }
            let Some(arc) = best_arc else { break };
            pivots += 1;
            if pivots > max_pivots {
                return Err(Error::InvalidParameter(
                    "network simplex pivot limit exceeded".into(),
                ));
            }
            let (ei, ej) = (arc / n, arc % n);
            let (u, v) = (ei, m + ej); // entering arc directed u -> v
            Self::pivot(&mut tree, &mut in_tree, u, v, ei, ej, n, &cost, big);
        }

        // collect plan from tree arcs
        let mut flows = Vec::new();
        for node in 0..m + n {
            if let Some((i, j)) = tree.pred_real[node] {
                flows.push((i, j, tree.flow[node]));
            }
        }
        flows.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let pi_source = tree.pi[..m].to_vec();
        let pi_target = tree.pi[m..m + n].to_vec();
        Ok(NetworkSimplex {
            flows,
            pi_source,
            pi_target,
        })
    }

    /// Push flow around the cycle formed by the entering arc u -> v and
    /// the tree path between its endpoints; swap the leaving arc out.
    #[allow(clippy::too_many_arguments)]
    fn pivot(
        tree: &mut Tree,
        in_tree: &mut [bool],
        u: usize,
        v: usize,
        ei: usize,
        ej: usize,
        n: usize,
        cost: &impl Fn(usize, usize) -> f64,
        big: f64,
    ) {
        // ascend both sides to the apex, recording the cycle arcs
        let mut us = u;
        let mut vs = v;
        let mut u_path = Vec::new(); // nodes on u side (cycle runs parent -> node)
        let mut v_path = Vec::new(); // nodes on v side (cycle runs node -> parent)
        while us != vs {
            if tree.depth[us] >= tree.depth[vs] {
                u_path.push(us);
                us = tree.parent[us];
            } else {
                v_path.push(vs);
                vs = tree.parent[vs];
            }
        }
        // flow change: +theta along the cycle direction (u -> v -> apex -> u)
        // u side is traversed against the node->parent ascent, v side along it
        let mut theta = f64::INFINITY;
        let mut leaving: Option<usize> = None; // node whose pred arc leaves
        for &w in &u_path {
            // cycle traverses parent(w) -> w
            let decreases = tree.dir_up[w];
            if decreases && tree.flow[w] < theta {
                theta = tree.flow[w];
                leaving = Some(w);
            }
        }
        for &w in &v_path {
            // cycle traverses w -> parent(w)
            let decreases = !tree.dir_up[w];
            if decreases && tree.flow[w] < theta {
                theta = tree.flow[w];
                leaving = Some(w);
            }
        }
        let leave = leaving.expect("balanced transportation cycle always has a blocking arc");
        let theta = theta.max(0.0);
        // apply the flow change
        for &w in &u_path {
            if tree.dir_up[w] {
                tree.flow[w] -= theta;
            } else {
                tree.flow[w] += theta;
            }
        }
        for &w in &v_path {
            if tree.dir_up[w] {
                tree.flow[w] += theta;
            } else {
                tree.flow[w] -= theta;
            }
        }
        // the subtree under `leave` gets re-rooted at the entering arc's
        // endpoint inside it (u if leave lies on the u side)
        let on_u_side = u_path.contains(&leave);
        let s = if on_u_side { u } else { v };
        if let Some((i, j)) = tree.pred_real[leave] {
            in_tree[i * n + j] = false;
        }
        // reverse the parent chain s -> ... -> leave
        let mut prev = s;
        let mut carry_parent = tree.parent[s];
        let mut carry_pred = tree.pred_real[s];
        let mut carry_dir = tree.dir_up[s];
        let mut carry_flow = tree.flow[s];
        while prev != leave {
            let next = carry_parent;
            let np = tree.parent[next];
            let npred = tree.pred_real[next];
            let ndir = tree.dir_up[next];
            let nflow = tree.flow[next];
            tree.parent[next] = prev;
            tree.pred_real[next] = carry_pred;
            tree.dir_up[next] = !carry_dir;
            tree.flow[next] = carry_flow;
            prev = next;
            carry_parent = np;
            carry_pred = npred;
            carry_dir = ndir;
            carry_flow = nflow;
        }
        // attach s below the other endpoint via the entering arc
        let o = if on_u_side { v } else { u };
        tree.parent[s] = o;
        tree.pred_real[s] = Some((ei, ej));
        tree.dir_up[s] = s == u; // physical direction is u -> v
        tree.flow[s] = theta;
        in_tree[ei * n + ej] = true;
        tree.refresh(cost, big);
    }
}
