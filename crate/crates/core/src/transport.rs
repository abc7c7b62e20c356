//! Discrete Kantorovich problem between projected Mather measures and its
//! duality certificates.
//!
//! The cost is `c(x, y) = -W(y, x) - E`: the unit-time action kernel centred
//! by the critical value, so that the weak KAM pair `(u, u*)` is admissible.
//! The tilde variant adds `I(y)`, a function of the target only, which leaves
//! optimal plans unchanged.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action_kernel::KernelMatrix;
use crate::error::{Error, Result};
use crate::torus::{GridField, GridMeasure, NodeId};

/// Optimal flows of a transportation problem, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexSolution {
    pub flows: Vec<f64>,
    pub value: f64,
    pub pivots: usize,
}

/// Transportation simplex on the bipartite network: northwest-corner start,
/// Dantzig entering arc, leaving arc by the strongly feasible rule (last
/// blocking arc met when the pivot cycle is traversed from its apex in the
/// direction of the entering arc).
pub fn network_simplex(supply: &[f64], demand: &[f64], cost: &[f64], cols: usize) -> Result<SimplexSolution> {
    let rows = supply.len();
    if rows == 0 || cols == 0 || demand.len() != cols || cost.len() != rows * cols {
        return Err(Error::invalid("transportation problem has inconsistent dimensions"));
    }
    if supply.iter().chain(demand).any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid("supplies and demands must be finite and nonnegative"));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("transport cost must be finite"));
    }
    let total: f64 = supply.iter().sum();
    if (total - demand.iter().sum::<f64>()).abs() > 1e-10 * total.max(1.0) {
        return Err(Error::invalid("supply and demand totals differ"));
    }
    let mut net = Network::northwest_corner(supply, demand, cost, cols);
    let scale = 1.0 + cost.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let max_pivots = 50 * rows * cols + 1000;
    let mut pivots = 0;
    loop {
        net.refresh_tree();
        let Some(entering) = net.entering_cell(1e-12 * scale) else { break };
        if pivots == max_pivots {
            return Err(Error::NonConvergence {
                solver: "network simplex",
                iterations: pivots,
                residual: net.reduced_cost(entering),
                hint: Some("pivot bound reached; the basis is cycling".into()),
            });
        }
        net.pivot(entering, 1e-14 * total.max(1.0));
        pivots += 1;
    }
    let value = net.flow.iter().zip(cost).map(|(f, c)| f * c).sum();
    Ok(SimplexSolution { flows: net.flow, value, pivots })
}

struct Network<'a> {
    rows: usize,
    cols: usize,
    cost: &'a [f64],
    flow: Vec<f64>,
    basic: Vec<bool>,
    /// tree over nodes `0..rows` (sources) and `rows..rows+cols` (sinks),
    /// rooted at source 0
    parent: Vec<usize>,
    /// cell joining a node to its parent
    parent_cell: Vec<usize>,
    depth: Vec<usize>,
    potential: Vec<f64>,
}

impl<'a> Network<'a> {
    fn northwest_corner(supply: &[f64], demand: &[f64], cost: &'a [f64], cols: usize) -> Self {
        let rows = supply.len();
        let mut flow = vec![0.0; rows * cols];
        let mut basic = vec![false; rows * cols];
        let (mut s, mut d) = (supply.to_vec(), demand.to_vec());
        let (mut i, mut j) = (0, 0);
        loop {
            let q = s[i].min(d[j]).max(0.0);
            flow[i * cols + j] = q;
            basic[i * cols + j] = true;
            s[i] -= q;
            d[j] -= q;
            if i == rows - 1 && j == cols - 1 {
                break;
            }
            if i == rows - 1 {
                j += 1;
            } else if j == cols - 1 || s[i] <= d[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        let nodes = rows + cols;
        Self {
            rows,
            cols,
            cost,
            flow,
            basic,
            parent: vec![usize::MAX; nodes],
            parent_cell: vec![usize::MAX; nodes],
            depth: vec![0; nodes],
            potential: vec![0.0; nodes],
        }
    }

    /// Rebuild parent pointers and node potentials `u_i + v_j = c_ij` on the
    /// basis.
    fn refresh_tree(&mut self) {
        let nodes = self.rows + self.cols;
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes];
        for (cell, _) in self.basic.iter().enumerate().filter(|(_, &b)| b) {
            let (i, j) = (cell / self.cols, cell % self.cols);
            adj[i].push((self.rows + j, cell));
            adj[self.rows + j].push((i, cell));
        }
        self.parent.iter_mut().for_each(|p| *p = usize::MAX);
        self.parent[0] = 0;
        self.depth[0] = 0;
        self.potential[0] = 0.0;
        let mut queue = std::collections::VecDeque::from([0usize]);
        while let Some(a) = queue.pop_front() {
            for &(b, cell) in &adj[a] {
                if self.parent[b] != usize::MAX {
                    continue;
                }
                self.parent[b] = a;
                self.parent_cell[b] = cell;
                self.depth[b] = self.depth[a] + 1;
                self.potential[b] = self.cost[cell] - self.potential[a];
                queue.push_back(b);
            }
        }
        debug_assert!(self.parent.iter().all(|&p| p != usize::MAX), "basis is not a spanning tree");
    }

    fn reduced_cost(&self, cell: usize) -> f64 {
        let (i, j) = (cell / self.cols, cell % self.cols);
        self.cost[cell] - self.potential[i] - self.potential[self.rows + j]
    }

    fn entering_cell(&self, eps: f64) -> Option<usize> {
        let mut best = (-eps, None);
        for cell in 0..self.flow.len() {
            if self.basic[cell] {
                continue;
            }
            let r = self.reduced_cost(cell);
            if r < best.0 {
                best = (r, Some(cell));
            }
        }
        best.1
    }

    fn pivot(&mut self, entering: usize, eps: f64) {
        let (i, j) = (entering / self.cols, entering % self.cols);
        // climb from both ends of the entering arc to the apex
        let (mut a, mut b) = (i, self.rows + j);
        let mut up_from_row = Vec::new();
        let mut up_from_col = Vec::new();
        while a != b {
            if self.depth[a] >= self.depth[b] {
                up_from_row.push(a);
                a = self.parent[a];
            } else {
                up_from_col.push(b);
                b = self.parent[b];
            }
        }
        // traversal from the apex: down to the source of the entering arc,
        // across it, then up from its sink; a step is against the arc
        // direction when it goes sink -> source
        let mut steps: Vec<(usize, bool)> = Vec::new();
        for &node in up_from_row.iter().rev() {
            // parent -> node
            steps.push((self.parent_cell[node], node < self.rows));
        }
        for &node in &up_from_col {
            // node -> parent
            steps.push((self.parent_cell[node], node >= self.rows));
        }
        let theta = steps.iter().filter(|s| s.1).map(|s| self.flow[s.0]).fold(f64::INFINITY, f64::min);
        let leaving = steps
            .iter()
            .rfind(|s| s.1 && self.flow[s.0] <= theta + eps)
            .map(|s| s.0)
            .expect("a transportation cycle always has a backward arc");
        for &(cell, backward) in &steps {
            let f = &mut self.flow[cell];
            *f = if backward { (*f - theta).max(0.0) } else { *f + theta };
        }
        self.flow[entering] = theta;
        self.flow[leaving] = 0.0;
        self.basic[entering] = true;
        self.basic[leaving] = false;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostVariant {
    /// `c(x, y) = -W(y, x) - E`
    Plain,
    /// `c(x, y) + I(y)`
    Tilde,
}

impl std::str::FromStr for CostVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(CostVariant::Plain),
            "tilde" => Ok(CostVariant::Tilde),
            other => Err(Error::config(format!("unknown transport variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TransportProblem {
    pub variant: CostVariant,
    pub sources: Vec<NodeId>,
    pub targets: Vec<NodeId>,
    pub supply: Vec<f64>,
    pub demand: Vec<f64>,
    /// `c(x, y)` over `sources x targets`, row-major.
    pub cost: Vec<f64>,
    nodes: usize,
    full_cost: Vec<f64>,
}

impl TransportProblem {
    /// `c(x, y)` for any pair of grid nodes.
    pub fn cost_at(&self, x: NodeId, y: NodeId) -> f64 {
        self.full_cost[x * self.nodes + y]
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }
}

/// Restrict the centred cost to the supports of `mu_plus x mu_minus`.
pub fn build_problem(
    mu_plus: &GridMeasure,
    mu_minus: &GridMeasure,
    kernel: &KernelMatrix,
    energy: f64,
    rate: &GridField,
    variant: CostVariant,
) -> Result<TransportProblem> {
    let n = kernel.len();
    if mu_plus.len() != n || mu_minus.len() != n || rate.len() != n {
        return Err(Error::Incomparable("measures, kernel and rate function differ in size".into()));
    }
    for (name, m) in [("source", mu_plus), ("target", mu_minus)] {
        if (m.total() - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("{name} mass {} differs from 1", m.total())));
        }
    }
    let full_cost: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let (x, y) = (k / n, k % n);
            let c = -kernel.get(y, x) - energy;
            match variant {
                CostVariant::Plain => c,
                CostVariant::Tilde => c + rate[y],
            }
        })
        .collect();
    let sources = mu_plus.support();
    let targets = mu_minus.support();
    let cost = sources.iter().flat_map(|&x| targets.iter().map(move |&y| (x, y))).map(|(x, y)| full_cost[x * n + y]).collect();
    Ok(TransportProblem {
        variant,
        supply: sources.iter().map(|&x| mu_plus[x]).collect(),
        demand: targets.iter().map(|&y| mu_minus[y]).collect(),
        sources,
        targets,
        cost,
        nodes: n,
        full_cost,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    /// `(x, y, weight)` with positive weight.
    pub entries: Vec<(NodeId, NodeId, f64)>,
    /// Weights over `sources x targets`, row-major.
    pub weights: Vec<f64>,
    pub value: f64,
    pub pivots: usize,
}

impl TransportPlan {
    /// Largest deviation of the row and column sums from the marginals.
    pub fn marginal_error(&self, problem: &TransportProblem) -> f64 {
        let cols = problem.targets.len();
        let rows = self.weights.chunks(cols).zip(&problem.supply).map(|(r, s)| (r.iter().sum::<f64>() - s).abs());
        let columns = (0..cols).map(|j| {
            let sum: f64 = self.weights.iter().skip(j).step_by(cols).sum();
            (sum - problem.demand[j]).abs()
        });
        rows.chain(columns).fold(0.0, f64::max)
    }
}

pub fn solve_kantorovich(problem: &TransportProblem) -> Result<TransportPlan> {
    let sol = network_simplex(&problem.supply, &problem.demand, &problem.cost, problem.targets.len())?;
    let cols = problem.targets.len();
    let entries = sol
        .flows
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(k, &w)| (problem.sources[k / cols], problem.targets[k % cols], w))
        .collect();
    Ok(TransportPlan { entries, weights: sol.flows, value: sol.value, pivots: sol.pivots })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    /// `max f(x) - g(y) - c(x, y)` over support pairs.
    pub support: f64,
    /// The same over all grid pairs.
    pub grid: f64,
}

pub fn admissibility(f: &GridField, g: &GridField, problem: &TransportProblem) -> Result<Admissibility> {
    let n = problem.nodes;
    if f.len() != n || g.len() != n {
        return Err(Error::Incomparable("potentials do not live on the problem grid".into()));
    }
    let support = problem
        .sources
        .iter()
        .flat_map(|&x| problem.targets.iter().map(move |&y| (x, y)))
        .map(|(x, y)| f[x] - g[y] - problem.cost_at(x, y))
        .fold(f64::NEG_INFINITY, f64::max);
    let grid = (0..n)
        .into_par_iter()
        .map(|x| (0..n).map(|y| f[x] - g[y] - problem.cost_at(x, y)).fold(f64::NEG_INFINITY, f64::max))
        .reduce(|| f64::NEG_INFINITY, f64::max);
    Ok(Admissibility { support, grid })
}

/// A candidate dual solution with its objective `int f dmu+ - int g dmu-`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualPair {
    pub f: GridField,
    pub g: GridField,
    pub value: f64,
    pub violation: Admissibility,
}

impl DualPair {
    pub fn evaluate(f: GridField, g: GridField, problem: &TransportProblem) -> Result<Self> {
        let violation = admissibility(&f, &g, problem)?;
        let value = problem.sources.iter().zip(&problem.supply).map(|(&x, w)| w * f[x]).sum::<f64>()
            - problem.targets.iter().zip(&problem.demand).map(|(&y, w)| w * g[y]).sum::<f64>();
        Ok(Self { f, g, value, violation })
    }
}

/// Primal minus dual value; nonnegative for admissible pairs.
pub fn duality_gap(plan: &TransportPlan, pair: &DualPair) -> f64 {
    plan.value - pair.value
}

/// Plan-support pairs where `|f(x) - g(y) - c(x, y)| > tol`, with the residual.
pub fn slackness_check(
    plan: &TransportPlan,
    pair: &DualPair,
    problem: &TransportProblem,
    tol: f64,
) -> Vec<(NodeId, NodeId, f64)> {
    plan.entries
        .iter()
        .map(|&(x, y, _)| (x, y, pair.f[x] - pair.g[y] - problem.cost_at(x, y)))
        .filter(|r| r.2.abs() > tol)
        .collect()
}
