//! Projected Mather measures as minimum-mean cycles of the one-step action
//! graph.
//!
//! Karp's recurrence over walk lengths `0..=n` gives the minimum cycle mean;
//! back-tracking the optimal length-`n` walk into the arg-min node yields a
//! cycle attaining it, whose uniform occupation measure is the discrete
//! projected Mather measure. Its mean divided by `h` is an independent
//! estimate of the critical value.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{GridMeasure, NodeId, TorusGrid};
use crate::transport;
use crate::weak_kam::OneStepCost;

/// Directed graph with one edge per finite one-step cost. Rows hold incoming
/// edges `(source, weight)` sorted by source.
#[derive(Clone, Debug)]
pub struct ActionGraph {
    grid: Option<TorusGrid>,
    step: f64,
    incoming: Vec<Vec<(NodeId, f64)>>,
}

impl ActionGraph {
    pub fn from_cost(cost: &OneStepCost) -> Self {
        let incoming = cost.grid().nodes().map(|x| cost.predecessors(x).collect()).collect();
        Self { grid: Some(*cost.grid()), step: cost.step(), incoming }
    }

    /// Graph on `n` abstract nodes from `(source, target, weight)` triples.
    pub fn from_edges(n: usize, edges: &[(NodeId, NodeId, f64)], step: f64) -> Result<Self> {
        let mut incoming = vec![Vec::new(); n];
        for &(y, x, w) in edges {
            if y >= n || x >= n {
                return Err(Error::invalid(format!("edge ({y}, {x}) outside {n} nodes")));
            }
            if !w.is_finite() {
                return Err(Error::invalid(format!("edge ({y}, {x}) has weight {w}")));
            }
            incoming[x].push((y, w));
        }
        for row in &mut incoming {
            row.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            row.dedup_by_key(|e| e.0);
        }
        Ok(Self { grid: None, step, incoming })
    }

    pub fn node_count(&self) -> usize {
        self.incoming.len()
    }

    pub fn edge_count(&self) -> usize {
        self.incoming.iter().map(Vec::len).sum()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn grid(&self) -> Option<&TorusGrid> {
        self.grid.as_ref()
    }

    pub fn incoming(&self, x: NodeId) -> &[(NodeId, f64)] {
        &self.incoming[x]
    }

    pub fn weight(&self, y: NodeId, x: NodeId) -> Option<f64> {
        let row = &self.incoming[x];
        row.binary_search_by_key(&y, |e| e.0).ok().map(|k| row[k].1)
    }

    pub fn out_degree(&self, y: NodeId) -> usize {
        self.incoming.iter().filter(|row| row.iter().any(|e| e.0 == y)).count()
    }

    /// Mean weight of a closed node sequence `c_0 -> c_1 -> ... -> c_0`.
    pub fn cycle_mean(&self, cycle: &[NodeId]) -> Option<f64> {
        if cycle.is_empty() {
            return None;
        }
        let mut total = 0.0;
        for i in 0..cycle.len() {
            total += self.weight(cycle[i], cycle[(i + 1) % cycle.len()])?;
        }
        Some(total / cycle.len() as f64)
    }
}

pub fn build_action_graph(cost: &OneStepCost) -> ActionGraph {
    ActionGraph::from_cost(cost)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatherResult {
    pub mean_cost: f64,
    /// Cycle nodes in traversal order.
    pub cycle: Vec<NodeId>,
    pub measure: GridMeasure,
    /// `mean_cost / h`.
    pub energy_estimate: f64,
    /// Number of nodes whose Karp ratio ties the minimum.
    pub tied_nodes: usize,
    #[serde(skip)]
    pub grid: Option<TorusGrid>,
    pub step: f64,
}

/// Karp's minimum mean cycle with back-tracked witness.
pub fn min_mean_cycle(graph: &ActionGraph) -> Result<MatherResult> {
    let n = graph.node_count();
    if n == 0 {
        return Err(Error::invalid("empty graph"));
    }
    // dist[k][v]: cheapest walk with exactly k edges ending at v, any start
    let mut dist = vec![vec![f64::INFINITY; n]; n + 1];
    let mut pred = vec![vec![usize::MAX; n]; n + 1];
    dist[0].iter_mut().for_each(|d| *d = 0.0);
    for k in 1..=n {
        let prev = &dist[k - 1];
        let (row, back): (Vec<f64>, Vec<usize>) = (0..n)
            .into_par_iter()
            .map(|v| {
                let mut best = (f64::INFINITY, usize::MAX);
                for &(u, w) in &graph.incoming[v] {
                    let d = prev[u] + w;
                    if d < best.0 {
                        best = (d, u);
                    }
                }
                best
            })
            .unzip();
        dist[k] = row;
        pred[k] = back;
    }

    let ratios: Vec<f64> = (0..n)
        .map(|v| {
            let dn = dist[n][v];
            if !dn.is_finite() {
                return f64::INFINITY;
            }
            (0..n)
                .filter(|&k| dist[k][v].is_finite())
                .map(|k| (dn - dist[k][v]) / (n - k) as f64)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let best = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::invalid("graph has no cycle"));
    }
    let scale = 1.0 + best.abs();
    let tied_nodes = ratios.iter().filter(|&&r| (r - best).abs() <= 1e-12 * scale).count();
    let start = ratios.iter().position(|&r| r == best).expect("minimum is attained");

    // walk[k] is the node reached after k edges on the optimal length-n walk
    let mut walk = vec![0usize; n + 1];
    walk[n] = start;
    for k in (1..=n).rev() {
        walk[k - 1] = pred[k][walk[k]];
    }

    let mut candidates = cycles_in_walk(&walk);
    candidates.sort_by_key(|c| c.first_seen);
    let mut chosen: Option<(Vec<NodeId>, f64)> = None;
    for cand in candidates {
        let mean = graph.cycle_mean(&cand.nodes).expect("walk edges exist");
        if (mean - best).abs() <= 1e-9 * scale {
            chosen = Some((cand.nodes, mean));
            break;
        }
        if !chosen.as_ref().is_some_and(|c| mean >= c.1) {
            chosen = Some((cand.nodes, mean));
        }
    }
    let (cycle, mean_cost) = chosen.ok_or_else(|| Error::Numerical("no cycle on Karp walk".into()))?;

    let mut weights = vec![0.0; n];
    let share = 1.0 / cycle.len() as f64;
    for &v in &cycle {
        weights[v] += share;
    }
    let measure = GridMeasure::normalized(weights)?;
    Ok(MatherResult {
        mean_cost,
        energy_estimate: mean_cost / graph.step,
        cycle,
        measure,
        tied_nodes,
        grid: graph.grid,
        step: graph.step,
    })
}

struct WalkCycle {
    nodes: Vec<NodeId>,
    first_seen: usize,
}

/// Split a walk into the simple cycles closed by each repeated node.
fn cycles_in_walk(walk: &[NodeId]) -> Vec<WalkCycle> {
    let mut out = Vec::new();
    let mut last_seen = std::collections::HashMap::new();
    for (i, &v) in walk.iter().enumerate() {
        if let Some(&j) = last_seen.get(&v) {
            let nodes: Vec<NodeId> = walk[j..i].to_vec();
            let mut uniq = nodes.clone();
            uniq.sort_unstable();
            uniq.dedup();
            if uniq.len() == nodes.len() {
                out.push(WalkCycle { nodes, first_seen: i });
            }
        }
        last_seen.insert(v, i);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalValueReport {
    pub weak_kam: f64,
    pub mather: f64,
    pub difference: f64,
    pub tolerance: f64,
    pub comparable: bool,
    pub passed: bool,
}

/// Agreement of the two characterizations of `E` on the same action graph.
pub fn compare_critical_values(
    weak_kam_energy: f64,
    weak_kam_grid: &TorusGrid,
    weak_kam_step: f64,
    mather: &MatherResult,
    tol: f64,
) -> CriticalValueReport {
    let comparable = mather.grid.as_ref() == Some(weak_kam_grid) && mather.step == weak_kam_step;
    let difference = (weak_kam_energy - mather.energy_estimate).abs();
    CriticalValueReport {
        weak_kam: weak_kam_energy,
        mather: mather.energy_estimate,
        difference,
        tolerance: tol,
        comparable,
        passed: comparable && difference <= tol,
    }
}

/// Wasserstein-1 distance between two measures on the torus.
///
/// On a circle this is `min_c sum |F_i - c| dx` for the cumulative difference
/// `F`, minimized at the median; in 2D it is the transport optimum with
/// torus-distance cost.
pub fn projection_distance(mu_plus: &GridMeasure, mu_minus: &GridMeasure, grid: &TorusGrid) -> Result<f64> {
    if mu_plus.len() != grid.len() || mu_minus.len() != grid.len() {
        return Err(Error::Incomparable("measures do not live on the grid".into()));
    }
    if grid.dim() == 1 {
        let mut cumulative = Vec::with_capacity(grid.len());
        let mut acc = 0.0;
        for (a, b) in mu_plus.weights().iter().zip(mu_minus.weights()) {
            acc += a - b;
            cumulative.push(acc);
        }
        let mut sorted = cumulative.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        Ok(cumulative.iter().map(|f| (f - median).abs()).sum::<f64>() * grid.spacing())
    } else {
        let source = mu_plus.support();
        let target = mu_minus.support();
        let cost: Vec<f64> = source
            .iter()
            .flat_map(|&x| target.iter().map(move |&y| grid.torus_distance(x, y)))
            .collect();
        let supply: Vec<f64> = source.iter().map(|&i| mu_plus[i]).collect();
        let demand: Vec<f64> = target.iter().map(|&i| mu_minus[i]).collect();
        let plan = transport::network_simplex(&supply, &demand, &cost, target.len())?;
        Ok(plan.value)
    }
}
