//! Discrete Lax-Oleinik semigroup on the torus.
//!
//! A time step `h` of the action of `L(x, v) = |v|^2/2 - V(x) + sign <P, v>`
//! is discretized as a sparse min-plus matrix over node pairs. The forward
//! operator `(T u)(x) = min_y u(y) + c(y, x)` yields the weak KAM solution
//! `u` and the constant `E` with `T u = u + h E`; the same iteration on the
//! transposed matrix yields `u*`. Their sum, re-gauged to vanish on the Aubry
//! set, is the rate function `I`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{check_compatible, eval_potential, ClosedForm, GridField, NodeId, Potential, TorusGrid};

/// Selects `L-` (`-<P, v>`) or `L+` (`+<P, v>`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Minus,
    Plus,
}

impl Sign {
    #[inline]
    pub fn value(self) -> f64 {
        match self {
            Sign::Minus => -1.0,
            Sign::Plus => 1.0,
        }
    }

    pub fn flipped(self) -> Sign {
        match self {
            Sign::Minus => Sign::Plus,
            Sign::Plus => Sign::Minus,
        }
    }
}

/// Compressed adjacency: for each row node, the admissible partner nodes and
/// edge costs, partners sorted ascending. Inadmissible pairs are simply absent.
#[derive(Clone, Debug)]
struct Adjacency {
    offsets: Vec<usize>,
    partners: Vec<NodeId>,
    costs: Vec<f64>,
}

impl Adjacency {
    fn from_rows(rows: Vec<Vec<(NodeId, f64)>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let total = rows.iter().map(Vec::len).sum();
        let mut partners = Vec::with_capacity(total);
        let mut costs = Vec::with_capacity(total);
        offsets.push(0);
        for row in rows {
            for (p, c) in row {
                partners.push(p);
                costs.push(c);
            }
            offsets.push(partners.len());
        }
        Self { offsets, partners, costs }
    }

    #[inline]
    fn row(&self, i: NodeId) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.partners[r.clone()].iter().copied().zip(self.costs[r].iter().copied())
    }

    fn lookup(&self, i: NodeId, j: NodeId) -> Option<f64> {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.partners[r.clone()].binary_search(&j).ok().map(|k| self.costs[r.start + k])
    }

    fn transpose(&self, n: usize) -> Self {
        let mut rows = vec![Vec::new(); n];
        for i in 0..n {
            for (j, c) in self.row(i) {
                rows[j].push((i, c));
            }
        }
        Self::from_rows(rows)
    }

    fn edge_count(&self) -> usize {
        self.partners.len()
    }
}

/// One-step action matrix `c_h(y, x)`.
#[derive(Clone, Debug)]
pub struct OneStepCost {
    grid: TorusGrid,
    step: f64,
    v_max: f64,
    sign: Sign,
    /// row `x`: predecessors `y` with `c_h(y, x)`
    incoming: Adjacency,
    /// row `y`: successors `x` with `c_h(y, x)`
    outgoing: Adjacency,
}

/// Default time step `5 dx^(1/2) / sqrt(scale of V)`, clamped to `[0.02, 0.2]`.
pub fn default_time_step(grid: &TorusGrid, potential: &Potential) -> f64 {
    let scale = potential.amplitude_bound();
    let h = if scale > 0.0 { 5.0 * grid.spacing().sqrt() / scale.sqrt() } else { f64::INFINITY };
    h.clamp(0.02, 0.2)
}

impl OneStepCost {
    /// Assemble `c_h(y,x) = min_lifts |D|^2/(2h) - h (V(y)+V(x))/2 + sign <P, D>`
    /// over lifts `D` with `|D| <= v_max h`.
    pub fn new(
        grid: &TorusGrid,
        potential: &Potential,
        form: &ClosedForm,
        sign: Sign,
        step: f64,
        v_max: f64,
    ) -> Result<Self> {
        if !(step > 0.0 && step <= 1.0) {
            return Err(Error::config(format!("time step must lie in (0, 1], got {step}")));
        }
        if !(v_max > 0.0 && v_max.is_finite()) {
            return Err(Error::config(format!("velocity bound must be positive, got {v_max}")));
        }
        let dx = grid.spacing();
        let reach = v_max * step;
        if reach < dx * (1.0 - 1e-12) {
            return Err(Error::config(format!(
                "v_max * h = {reach} is below the grid spacing {dx}; no move is admissible"
            )));
        }
        check_compatible(grid, potential, form)?;
        let v = eval_potential(potential, grid)?;

        // integer displacement vectors inside the velocity ball
        let radius = (reach / dx * (1.0 + 1e-12)).floor() as i64;
        let r_sq = radius * radius;
        let span: Vec<i64> = (-radius..=radius).collect();
        let mut stencil = Vec::new();
        if grid.dim() == 1 {
            stencil.extend(span.iter().map(|&a| [a, 0]));
        } else {
            for &a in &span {
                for &b in &span {
                    if a * a + b * b <= r_sq {
                        stencil.push([a, b]);
                    }
                }
            }
        }

        let sigma = sign.value();
        let rows: Vec<Vec<(NodeId, f64)>> = grid
            .nodes()
            .into_par_iter()
            .map(|x| {
                let xi = grid.multi_index(x);
                let mut row: Vec<(NodeId, f64)> = stencil
                    .iter()
                    .map(|s| {
                        let y = grid.node_at([xi[0] as i64 - s[0], xi[1] as i64 - s[1]]);
                        let delta = [s[0] as f64 * dx, s[1] as f64 * dx];
                        let kinetic = (delta[0] * delta[0] + delta[1] * delta[1]) / (2.0 * step);
                        let c = kinetic - step * 0.5 * (v[y] + v[x]) + sigma * form.apply(&delta);
                        (y, c)
                    })
                    .collect();
                // several lifts may land on the same source; keep the cheapest
                row.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
                row.dedup_by_key(|e| e.0);
                row
            })
            .collect();

        let incoming = Adjacency::from_rows(rows);
        let outgoing = incoming.transpose(grid.len());
        Ok(Self { grid: *grid, step, v_max, sign, incoming, outgoing })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    /// `c_h(y, x)`, or `None` when no lift is admissible.
    pub fn cost(&self, y: NodeId, x: NodeId) -> Option<f64> {
        self.incoming.lookup(x, y)
    }

    pub fn predecessors(&self, x: NodeId) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.incoming.row(x)
    }

    pub fn successors(&self, y: NodeId) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.outgoing.row(y)
    }

    pub fn edge_count(&self) -> usize {
        self.incoming.edge_count()
    }

    /// The same costs with the roles of source and target exchanged.
    pub fn transposed(&self) -> OneStepCost {
        OneStepCost {
            grid: self.grid,
            step: self.step,
            v_max: self.v_max,
            sign: self.sign,
            incoming: self.outgoing.clone(),
            outgoing: self.incoming.clone(),
        }
    }
}

/// `(T u)(x) = min_y u(y) + c(y, x)`: one min-plus matrix-vector product.
pub fn lax_oleinik_step(u: &GridField, cost: &OneStepCost) -> GridField {
    assert_eq!(u.len(), cost.grid.len(), "field and cost live on different grids");
    GridField::from_vec_unchecked(min_plus_rows(&cost.incoming, u.values()))
}

/// `(T* u)(y) = min_x c(y, x) + u(x)`: the backward operator.
pub fn lax_oleinik_backward_step(u: &GridField, cost: &OneStepCost) -> GridField {
    assert_eq!(u.len(), cost.grid.len(), "field and cost live on different grids");
    GridField::from_vec_unchecked(min_plus_rows(&cost.outgoing, u.values()))
}

fn min_plus_rows(adj: &Adjacency, values: &[f64]) -> Vec<f64> {
    (0..values.len())
        .into_par_iter()
        .map(|i| adj.row(i).map(|(j, c)| values[j] + c).fold(f64::INFINITY, f64::min))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Averaging weight `a` in `u <- (1-a) u + a (T u - shift)`; `1` is plain
    /// value iteration.
    pub relaxation: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iters: 200_000, relaxation: 0.5 }
    }
}

/// Fixed point of one Lax-Oleinik direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    /// Normalized to `min = 0`.
    pub field: GridField,
    /// Additive drift per unit time.
    pub energy: f64,
    /// `sup |T u - u - h E|`.
    pub residual: f64,
    pub iterations: usize,
}

/// Forward weak KAM solution `T u = u + h E`.
pub fn solve_weak_kam(cost: &OneStepCost, opts: &SolverOptions) -> Result<FixedPoint> {
    iterate_fixed_point(&cost.incoming, cost.step, opts, "forward Lax-Oleinik iteration")
}

/// Backward solution `u*` from the transposed matrix.
pub fn solve_backward(cost: &OneStepCost, opts: &SolverOptions) -> Result<FixedPoint> {
    iterate_fixed_point(&cost.outgoing, cost.step, opts, "backward Lax-Oleinik iteration")
}

fn iterate_fixed_point(
    adj: &Adjacency,
    step: f64,
    opts: &SolverOptions,
    solver: &'static str,
) -> Result<FixedPoint> {
    if !(opts.tol > 0.0) {
        return Err(Error::config("solver tolerance must be positive"));
    }
    if !(opts.relaxation > 0.0 && opts.relaxation <= 1.0) {
        return Err(Error::config("relaxation must lie in (0, 1]"));
    }
    let n = adj.offsets.len() - 1;
    if let Some(x) = (0..n).find(|&x| adj.row(x).next().is_none()) {
        return Err(Error::invalid(format!("node {x} has no admissible neighbour")));
    }
    let a = opts.relaxation;
    let mut u = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for iteration in 0..opts.max_iters {
        let tu = min_plus_rows(adj, &u);
        let (lo, hi) = tu
            .iter()
            .zip(&u)
            .map(|(t, v)| t - v)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
        residual = 0.5 * (hi - lo);
        if residual <= opts.tol {
            let shift = 0.5 * (hi + lo);
            let field = GridField::new(u)?.min_normalized();
            return Ok(FixedPoint { field, energy: shift / step, residual, iterations: iteration });
        }
        for (v, t) in u.iter_mut().zip(&tu) {
            *v = (1.0 - a) * *v + a * (t - lo);
        }
        let m = u.iter().copied().fold(f64::INFINITY, f64::min);
        u.iter_mut().for_each(|v| *v -= m);
        if !residual.is_finite() {
            return Err(Error::Numerical(format!("{solver} produced a non-finite shift")));
        }
    }
    Err(Error::NonConvergence {
        solver,
        iterations: opts.max_iters,
        residual,
        hint: Some("check that v_max and h admit the minimizing velocities on this grid".into()),
    })
}

/// `sup |T u - u - h E|`, re-evaluated from scratch.
pub fn fixed_point_residual(u: &GridField, energy: f64, cost: &OneStepCost) -> f64 {
    let tu = lax_oleinik_step(u, cost);
    let h = cost.step;
    tu.values()
        .iter()
        .zip(u.values())
        .map(|(t, v)| (t - v - h * energy).abs())
        .fold(0.0, f64::max)
}

/// `I = u + u* - min(u + u*)` and the nodes where `I <= aubry_tol`.
pub fn rate_function(u: &GridField, u_star: &GridField, aubry_tol: f64) -> (GridField, Vec<NodeId>) {
    let sum = u.zip_with(u_star, |a, b| a + b);
    let rate = sum.min_normalized();
    let aubry = (0..rate.len()).filter(|&i| rate[i] <= aubry_tol).collect();
    (rate, aubry)
}

/// Forward and backward solutions in the common gauge `min u = 0`,
/// `min (u + u*) = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakKamSolution {
    pub u: GridField,
    pub u_star: GridField,
    pub energy: f64,
    pub energy_backward: f64,
    pub residual: f64,
    pub rate: GridField,
    pub aubry: Vec<NodeId>,
    pub iterations: usize,
}

impl WeakKamSolution {
    /// Solve both directions and fix the gauge. `aubry_tol` is relative to
    /// the range of `I` (absolute when the range is zero).
    pub fn solve(cost: &OneStepCost, opts: &SolverOptions, aubry_rel_tol: f64) -> Result<Self> {
        let forward = solve_weak_kam(cost, opts)?;
        let backward = solve_backward(cost, opts)?;
        Ok(Self::assemble(forward, backward, aubry_rel_tol))
    }

    pub fn assemble(forward: FixedPoint, backward: FixedPoint, aubry_rel_tol: f64) -> Self {
        let u = forward.field;
        let sum_min = u.zip_with(&backward.field, |a, b| a + b).min();
        let u_star = backward.field.shifted(-sum_min);
        let (rate, _) = rate_function(&u, &u_star, 0.0);
        let range = rate.max();
        let tol = if range > 0.0 { aubry_rel_tol * range } else { aubry_rel_tol };
        let (rate, aubry) = rate_function(&u, &u_star, tol);
        Self {
            u,
            u_star,
            energy: forward.energy,
            energy_backward: backward.energy,
            residual: forward.residual.max(backward.residual),
            rate,
            aubry,
            iterations: forward.iterations.max(backward.iterations),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn flat(n: usize) -> (TorusGrid, Potential, ClosedForm) {
        (TorusGrid::new(1, n).unwrap(), Potential::zero(), ClosedForm::zero())
    }

    #[test]
    fn one_step_cost_examples() {
        let (g, v, w) = flat(32);
        let c = OneStepCost::new(&g, &v, &w, Sign::Minus, 0.1, 4.0).unwrap();
        assert_eq!(c.cost(3, 3), Some(0.0));
        let dx = g.spacing();
        assert_abs_diff_eq!(c.cost(3, 4).unwrap(), dx * dx / 0.2, epsilon = 1e-15);

        let g = TorusGrid::new(1, 64).unwrap();
        let c = OneStepCost::new(&g, &Potential::cosine(1.0), &w, Sign::Minus, 0.1, 4.0).unwrap();
        assert_abs_diff_eq!(c.cost(0, 0).unwrap(), -0.1, epsilon = 1e-16);
    }

    #[test]
    fn inadmissible_moves_are_absent() {
        let (g, v, w) = flat(64);
        let c = OneStepCost::new(&g, &v, &w, Sign::Minus, 0.1, 0.5).unwrap();
        // reach 0.05 = 3.2 cells
        assert!(c.cost(0, 3).is_some());
        assert!(c.cost(0, 4).is_none());
        assert_eq!(c.edge_count(), 64 * 7);
        assert!(matches!(
            OneStepCost::new(&g, &v, &w, Sign::Minus, 0.1, 0.1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn twist_sign_enters_linearly() {
        let g = TorusGrid::new(1, 16).unwrap();
        let w = ClosedForm::new([2.0, 0.0]);
        let minus = OneStepCost::new(&g, &Potential::zero(), &w, Sign::Minus, 0.25, 4.0).unwrap();
        let plus = OneStepCost::new(&g, &Potential::zero(), &w, Sign::Plus, 0.25, 4.0).unwrap();
        let dx = g.spacing();
        assert_abs_diff_eq!(minus.cost(0, 2).unwrap(), 4.0 * dx * dx / 0.5 - 2.0 * 2.0 * dx, epsilon = 1e-14);
        assert_abs_diff_eq!(plus.cost(2, 0).unwrap(), minus.cost(0, 2).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn zero_field_is_fixed_in_the_flat_case() {
        let (g, v, w) = flat(16);
        let c = OneStepCost::new(&g, &v, &w, Sign::Minus, 0.1, 4.0).unwrap();
        let out = lax_oleinik_step(&GridField::zeros(16), &c);
        assert!(out.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn spike_matches_direct_enumeration() {
        let (g, v, w) = flat(32);
        let h = 0.1;
        let c = OneStepCost::new(&g, &v, &w, Sign::Minus, h, 100.0).unwrap();
        let spike = 5;
        let u = GridField::new((0..32).map(|i| if i == spike { 0.0 } else { 10.0 }).collect()).unwrap();
        let out = lax_oleinik_step(&u, &c);
        for x in g.nodes() {
            // oracle: every source, every lift
            let mut best = f64::INFINITY;
            for y in g.nodes() {
                for lift in g.lifted_displacements(y, x, 2) {
                    best = best.min(u[y] + lift.norm_sq() / (2.0 * h));
                }
            }
            let d = g.torus_distance(spike, x);
            assert_abs_diff_eq!(out[x], best, epsilon = 1e-12);
            assert_abs_diff_eq!(out[x], f64::min(10.0, d * d / (2.0 * h)), epsilon = 1e-12);
        }
    }

    #[test]
    fn flat_solution_is_zero() {
        let (g, v, w) = flat(32);
        let c = OneStepCost::new(&g, &v, &w, Sign::Minus, 0.1, 4.0).unwrap();
        let sol = WeakKamSolution::solve(&c, &SolverOptions::default(), 1e-3).unwrap();
        assert_eq!(sol.energy, 0.0);
        assert!(sol.u.sup_norm() == 0.0 && sol.u_star.sup_norm() == 0.0 && sol.rate.sup_norm() == 0.0);
        assert_eq!(sol.aubry.len(), 32);
    }

    #[test]
    fn cosine_potential_fixed_point_certificate() {
        let g = TorusGrid::new(1, 64).unwrap();
        let c = OneStepCost::new(&g, &Potential::cosine(1.0), &ClosedForm::zero(), Sign::Minus, 0.05, 4.0).unwrap();
        let opts = SolverOptions::default();
        let fwd = solve_weak_kam(&c, &opts).unwrap();
        let bwd = solve_backward(&c, &opts).unwrap();
        assert!(fixed_point_residual(&fwd.field, fwd.energy, &c) <= opts.tol);
        assert!((fwd.energy - bwd.energy).abs() <= 2.0 * opts.tol / c.step());
        assert_abs_diff_eq!(fwd.energy, -1.0, epsilon = 1e-8);
        // reversible case: u*(x) = u(-x)
        for i in g.nodes() {
            assert_abs_diff_eq!(bwd.field[i], fwd.field[(64 - i) % 64], epsilon = 1e-6);
        }
        let sol = WeakKamSolution::assemble(fwd, bwd, 1e-3);
        assert!(sol.aubry.iter().all(|&i| g.torus_distance(i, 0) < 0.1));
        assert!(sol.rate[32] > 0.5);
    }

    #[test]
    fn nonconvergence_is_reported() {
        let g = TorusGrid::new(1, 64).unwrap();
        let c = OneStepCost::new(&g, &Potential::cosine(1.0), &ClosedForm::zero(), Sign::Minus, 0.05, 4.0).unwrap();
        let opts = SolverOptions { tol: 1e-14, max_iters: 3, relaxation: 0.5 };
        match solve_weak_kam(&c, &opts) {
            Err(Error::NonConvergence { iterations, residual, .. }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn default_step_is_clamped() {
        let g = TorusGrid::new(1, 256).unwrap();
        assert_eq!(default_time_step(&g, &Potential::zero()), 0.2);
        assert_eq!(default_time_step(&g, &Potential::cosine(1.0)), 0.2);
        assert_eq!(default_time_step(&g, &Potential::cosine(1e6)), 0.02);
        let g = TorusGrid::new(1, 4096).unwrap();
        assert_abs_diff_eq!(default_time_step(&g, &Potential::cosine(4.0)), 5.0 / 64.0 / 2.0, epsilon = 1e-15);
    }

    fn random_cost(seed: u64) -> OneStepCost {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let g = TorusGrid::new(1, 24).unwrap();
        let v = Potential::zero().with_cos([1, 0], rng.gen_range(-1.0..1.0)).with_sin([2, 0], rng.gen_range(-1.0..1.0));
        let w = ClosedForm::new([rng.gen_range(-1.0..1.0), 0.0]);
        OneStepCost::new(&g, &v, &w, Sign::Minus, 0.1, 3.0).unwrap()
    }

    proptest! {
        #[test]
        fn min_plus_step_is_monotone(seed in 0u64..1000, base in proptest::collection::vec(-5.0f64..5.0, 24), bump in proptest::collection::vec(0.0f64..2.0, 24)) {
            let c = random_cost(seed);
            let u = GridField::new(base.clone()).unwrap();
            let v = GridField::new(base.iter().zip(&bump).map(|(a, b)| a + b).collect()).unwrap();
            let (tu, tv) = (lax_oleinik_step(&u, &c), lax_oleinik_step(&v, &c));
            for i in 0..24 {
                prop_assert!(tu[i] <= tv[i]);
            }
        }

        #[test]
        fn min_plus_step_commutes_with_constants(seed in 0u64..1000, base in proptest::collection::vec(-5.0f64..5.0, 24), k in -100.0f64..100.0) {
            let c = random_cost(seed);
            let u = GridField::new(base).unwrap();
            let lhs = lax_oleinik_step(&u.shifted(k), &c);
            let rhs = lax_oleinik_step(&u, &c).shifted(k);
            for i in 0..24 {
                prop_assert!((lhs[i] - rhs[i]).abs() <= 1e-12 * (1.0 + k.abs()));
            }
        }
    }
}
