//! Periodic grids on the flat torus, trigonometric potentials, the closed
//! form `w(v) = <P, v>`, and the lifted-displacement geometry shared by the
//! other modules.
//!
//! Points and vectors are stored as `[f64; MAX_DIM]`; on a 1D grid the second
//! component is always zero, so inner products need no dimension check.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 2;
pub const MIN_POINTS_PER_DIM: usize = 8;

/// Default number of deck translations enumerated per axis.
pub const DEFAULT_K_MAX: i64 = 2;

pub type Vector = [f64; MAX_DIM];
pub type NodeId = usize;

#[inline]
pub fn dot(a: &Vector, b: &Vector) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm_sq(a: &Vector) -> f64 {
    dot(a, a)
}

/// Uniform periodic grid on `T^dim` with `N` points per axis.
///
/// Node `i` has multi-index `(i mod N, i / N)`; coordinates are `index / N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::config(format!("grid dimension must be 1 or 2, got {dim}")));
        }
        if n < MIN_POINTS_PER_DIM {
            return Err(Error::config(format!(
                "grid needs at least {MIN_POINTS_PER_DIM} points per dimension, got {n}"
            )));
        }
        Ok(Self { dim, n })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn points_per_dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Total node count `N^dim`.
    #[inline]
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight of one node, `dx^dim`.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn nodes(&self) -> std::ops::Range<NodeId> {
        0..self.len()
    }

    #[inline]
    pub fn multi_index(&self, node: NodeId) -> [usize; MAX_DIM] {
        debug_assert!(node < self.len());
        if self.dim == 1 {
            [node, 0]
        } else {
            [node % self.n, node / self.n]
        }
    }

    /// Node for an arbitrary integer multi-index, wrapped cyclically.
    #[inline]
    pub fn node_at(&self, index: [i64; MAX_DIM]) -> NodeId {
        let n = self.n as i64;
        let i0 = index[0].rem_euclid(n) as usize;
        if self.dim == 1 {
            i0
        } else {
            i0 + self.n * index[1].rem_euclid(n) as usize
        }
    }

    #[inline]
    pub fn coordinate(&self, node: NodeId) -> Vector {
        let idx = self.multi_index(node);
        let dx = self.spacing();
        [idx[0] as f64 * dx, idx[1] as f64 * dx]
    }

    /// Neighbour `steps` cells away along `axis`.
    #[inline]
    pub fn shift(&self, node: NodeId, axis: usize, steps: i64) -> NodeId {
        let idx = self.multi_index(node);
        let mut target = [idx[0] as i64, idx[1] as i64];
        target[axis] += steps;
        self.node_at(target)
    }

    /// Nearest grid node to an arbitrary point (reduced modulo 1).
    pub fn nearest_node(&self, point: &[f64]) -> NodeId {
        let n = self.n as f64;
        let mut index = [0i64; MAX_DIM];
        for (axis, slot) in index.iter_mut().enumerate().take(self.dim) {
            let c = point.get(axis).copied().unwrap_or(0.0);
            *slot = (c * n).round() as i64;
        }
        self.node_at(index)
    }

    /// Every lift `x + k - y` with `|k_j| <= k_max`, shortest first.
    ///
    /// Lengths are compared exactly in integer grid units. Equidistant lifts
    /// are ordered with the lexicographically largest displacement first, so
    /// `+1/2` precedes `-1/2`.
    pub fn lifted_displacements(&self, y: NodeId, x: NodeId, k_max: i64) -> Vec<Lift> {
        let k_max = k_max.max(0);
        let n = self.n as i64;
        let yi = self.multi_index(y);
        let xi = self.multi_index(x);
        let base = [xi[0] as i64 - yi[0] as i64, xi[1] as i64 - yi[1] as i64];
        let range: Vec<i64> = (-k_max..=k_max).collect();
        let second: &[i64] = if self.dim == 2 { &range } else { &[0] };

        let mut lifts = Vec::with_capacity(range.len() * second.len());
        for &k0 in &range {
            for &k1 in second {
                let steps = [base[0] + k0 * n, base[1] + k1 * n];
                lifts.push(Lift::from_steps([k0, k1], steps, self.spacing()));
            }
        }
        lifts.sort_by(|a, b| {
            a.steps_norm_sq()
                .cmp(&b.steps_norm_sq())
                .then_with(|| b.steps.cmp(&a.steps))
        });
        lifts
    }

    /// Shortest lift from `y` to `x`.
    pub fn minimal_lift(&self, y: NodeId, x: NodeId) -> Lift {
        self.lifted_displacements(y, x, 1)
            .into_iter()
            .next()
            .expect("at least one translate")
    }

    pub fn torus_distance(&self, y: NodeId, x: NodeId) -> f64 {
        self.minimal_lift(y, x).norm()
    }

    /// All nodes whose coordinates lie in the closed box `[lo, hi]`, read
    /// on the cover so `lo = -0.1, hi = 0.1` wraps through the seam.
    pub fn nodes_in_box(&self, lo: &[f64], hi: &[f64]) -> Vec<NodeId> {
        const EPS: f64 = 1e-12;
        self.nodes()
            .filter(|&node| {
                let c = self.coordinate(node);
                (0..self.dim).all(|axis| {
                    let (a, b) = (lo[axis], hi[axis]);
                    // smallest translate of c that is >= a
                    let lifted = c[axis] + (a - c[axis] - EPS).ceil();
                    lifted <= b + EPS
                })
            })
            .collect()
    }
}

/// One lift of a torus displacement to the universal cover.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lift {
    /// Deck translation `k`.
    pub translate: [i64; MAX_DIM],
    /// Displacement in grid cells.
    pub steps: [i64; MAX_DIM],
    /// Displacement `x + k - y` in torus units.
    pub delta: Vector,
}

impl Lift {
    fn from_steps(translate: [i64; MAX_DIM], steps: [i64; MAX_DIM], dx: f64) -> Self {
        Self {
            translate,
            steps,
            delta: [steps[0] as f64 * dx, steps[1] as f64 * dx],
        }
    }

    #[inline]
    pub fn steps_norm_sq(&self) -> i64 {
        self.steps[0] * self.steps[0] + self.steps[1] * self.steps[1]
    }

    #[inline]
    pub fn norm_sq(&self) -> f64 {
        norm_sq(&self.delta)
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }
}

/// Frequency vector of a Fourier mode.
pub type Frequency = [i64; MAX_DIM];

/// Trigonometric polynomial `V(x) = sum a_k cos(2pi<k,x>) + b_k sin(2pi<k,x>)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    #[serde(with = "term_list")]
    cos: BTreeMap<Frequency, f64>,
    #[serde(with = "term_list")]
    sin: BTreeMap<Frequency, f64>,
}

/// Coefficient maps as `[[k1, k2, coefficient], ...]`, since frequency
/// vectors are not valid map keys in every format.
mod term_list {
    use super::Frequency;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(map: &BTreeMap<Frequency, f64>, s: S) -> Result<S::Ok, S::Error> {
        let terms: Vec<(i64, i64, f64)> = map.iter().map(|(k, c)| (k[0], k[1], *c)).collect();
        terms.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Frequency, f64>, D::Error> {
        let terms = Vec::<(i64, i64, f64)>::deserialize(d)?;
        Ok(terms.into_iter().map(|(a, b, c)| ([a, b], c)).collect())
    }
}

impl Potential {
    pub fn zero() -> Self {
        Self::default()
    }

    /// `amplitude * cos(2pi x_1)`.
    pub fn cosine(amplitude: f64) -> Self {
        Self::zero().with_cos([1, 0], amplitude)
    }

    pub fn with_cos(mut self, k: Frequency, a: f64) -> Self {
        *self.cos.entry(k).or_insert(0.0) += a;
        self
    }

    pub fn with_sin(mut self, k: Frequency, b: f64) -> Self {
        *self.sin.entry(k).or_insert(0.0) += b;
        self
    }

    pub fn cos_terms(&self) -> impl Iterator<Item = (&Frequency, &f64)> {
        self.cos.iter()
    }

    pub fn sin_terms(&self) -> impl Iterator<Item = (&Frequency, &f64)> {
        self.sin.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.cos.values().chain(self.sin.values()).all(|&c| c == 0.0)
    }

    /// Upper bound on `|V|`: the sum of absolute coefficients.
    pub fn amplitude_bound(&self) -> f64 {
        self.cos.values().chain(self.sin.values()).map(|c| c.abs()).sum()
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim == 1 {
            if let Some(k) = self.cos.keys().chain(self.sin.keys()).find(|k| k[1] != 0) {
                return Err(Error::config(format!(
                    "frequency {k:?} has a second component on a 1D grid"
                )));
            }
        }
        Ok(())
    }

    /// Value at an arbitrary point of the cover.
    pub fn value_at(&self, x: &Vector) -> f64 {
        let mut v = 0.0;
        for (k, a) in &self.cos {
            v += a * (TAU * (k[0] as f64 * x[0] + k[1] as f64 * x[1])).cos();
        }
        for (k, b) in &self.sin {
            v += b * (TAU * (k[0] as f64 * x[0] + k[1] as f64 * x[1])).sin();
        }
        v
    }

    /// Value at a grid node.
    ///
    /// The phase `<k, i>` is reduced modulo `N` in integers and folded onto
    /// `[0, N/2]`, so `V(-x)` and `V(x)` agree bit for bit for even terms.
    pub fn value_at_node(&self, grid: &TorusGrid, node: NodeId) -> f64 {
        let n = grid.points_per_dim() as i64;
        let idx = grid.multi_index(node);
        let phase = |k: &Frequency| (k[0] * idx[0] as i64 + k[1] * idx[1] as i64).rem_euclid(n);
        let mut v = 0.0;
        for (k, a) in &self.cos {
            let m = phase(k);
            let m = m.min(n - m);
            v += a * (TAU * m as f64 / n as f64).cos();
        }
        for (k, b) in &self.sin {
            let m = phase(k);
            let (m, sign) = if 2 * m > n { (n - m, -1.0) } else { (m, 1.0) };
            v += sign * b * (TAU * m as f64 / n as f64).sin();
        }
        v
    }
}

/// Samples of `V` at every grid node.
pub fn eval_potential(potential: &Potential, grid: &TorusGrid) -> Result<GridField> {
    potential.check_dim(grid.dim())?;
    GridField::new(grid.nodes().map(|i| potential.value_at_node(grid, i)).collect())
}

/// The closed form `w(v) = <P, v>` and a base point on the cover.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClosedForm {
    pub momentum: Vector,
    pub base: Vector,
}

impl ClosedForm {
    pub fn new(momentum: Vector) -> Self {
        Self { momentum, base: [0.0; MAX_DIM] }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn with_base(mut self, base: Vector) -> Self {
        self.base = base;
        self
    }

    #[inline]
    pub fn apply(&self, v: &Vector) -> f64 {
        dot(&self.momentum, v)
    }

    /// `int_{x0}^{x} w` for a point `x` of the cover.
    #[inline]
    pub fn lift_integral(&self, x: &Vector) -> f64 {
        dot(&self.momentum, &[x[0] - self.base[0], x[1] - self.base[1]])
    }

    /// Integral of `w` along a polygonal path on the cover.
    pub fn path_integral(&self, path: &[Vector]) -> f64 {
        path.windows(2)
            .map(|s| self.apply(&[s[1][0] - s[0][0], s[1][1] - s[0][1]]))
            .sum()
    }

    pub fn is_zero(&self) -> bool {
        self.momentum.iter().all(|&p| p == 0.0)
    }

    pub fn norm(&self) -> f64 {
        norm_sq(&self.momentum).sqrt()
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim == 1 && self.momentum[1] != 0.0 {
            return Err(Error::config("form.P has a second component on a 1D grid"));
        }
        Ok(())
    }
}

/// Validate that a potential and form fit a grid.
pub fn check_compatible(grid: &TorusGrid, potential: &Potential, form: &ClosedForm) -> Result<()> {
    potential.check_dim(grid.dim())?;
    form.check_dim(grid.dim())
}

/// One finite real value per grid node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    values: Vec<f64>,
}

impl GridField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite field value at node {i}")));
        }
        Ok(Self { values })
    }

    pub fn constant(len: usize, value: f64) -> Self {
        Self { values: vec![value; len] }
    }

    pub fn zeros(len: usize) -> Self {
        Self::constant(len, 0.0)
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { values }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn argmin(&self) -> NodeId {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v < self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField { values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn shifted(&self, c: f64) -> GridField {
        self.map(|v| v + c)
    }

    /// Re-gauge so that the minimum is zero.
    pub fn min_normalized(&self) -> GridField {
        self.shifted(-self.min())
    }

    pub fn zip_with(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> GridField {
        assert_eq!(self.len(), other.len(), "fields live on different grids");
        GridField {
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `inf_c sup |self - other - c|`, attained at the midrange of the
    /// difference.
    pub fn sup_distance_modulo_constant(&self, other: &GridField) -> f64 {
        let d = self.zip_with(other, |a, b| a - b);
        0.5 * (d.max() - d.min())
    }
}

impl std::ops::Index<NodeId> for GridField {
    type Output = f64;

    fn index(&self, i: NodeId) -> &f64 {
        &self.values[i]
    }
}

/// Nonnegative node weights summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeasure {
    weights: Vec<f64>,
}

impl GridMeasure {
    pub const MASS_TOLERANCE: f64 = 1e-12;

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Numerical(format!("invalid measure weight at node {i}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > Self::MASS_TOLERANCE {
            return Err(Error::Numerical(format!("measure has total mass {total}")));
        }
        Ok(Self { weights })
    }

    /// Rescale nonnegative weights to unit mass.
    pub fn normalized(mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Numerical(format!("cannot normalize total mass {total}")));
        }
        for w in &mut weights {
            *w /= total;
        }
        Self::new(weights)
    }

    pub fn point_mass(len: usize, node: NodeId) -> Self {
        let mut weights = vec![0.0; len];
        weights[node] = 1.0;
        Self { weights }
    }

    pub fn uniform(len: usize) -> Self {
        Self { weights: vec![1.0 / len as f64; len] }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn support(&self) -> Vec<NodeId> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn mass_of(&self, nodes: &[NodeId]) -> f64 {
        nodes.iter().map(|&i| self.weights[i]).sum()
    }

    pub fn integrate(&self, f: &GridField) -> f64 {
        assert_eq!(self.len(), f.len(), "measure and field live on different grids");
        self.weights.iter().zip(f.values()).map(|(w, v)| w * v).sum()
    }
}

impl std::ops::Index<NodeId> for GridMeasure {
    type Output = f64;

    fn index(&self, i: NodeId) -> &f64 {
        &self.weights[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn build_grid_examples() {
        let g = TorusGrid::new(1, 8).unwrap();
        let coords: Vec<f64> = g.nodes().map(|i| g.coordinate(i)[0]).collect();
        assert_eq!(coords, (0..8).map(|i| i as f64 / 8.0).collect::<Vec<_>>());

        let g = TorusGrid::new(2, 16).unwrap();
        assert_eq!(g.len(), 256);
        assert_eq!(g.spacing(), 1.0 / 16.0);
        let total: f64 = g.nodes().map(|_| g.cell_volume()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);

        assert!(matches!(TorusGrid::new(1, 7), Err(Error::Config(_))));
        assert!(matches!(TorusGrid::new(3, 16), Err(Error::Config(_))));
        assert!(matches!(TorusGrid::new(0, 16), Err(Error::Config(_))));
    }

    #[test]
    fn cyclic_index_arithmetic() {
        let g = TorusGrid::new(2, 8).unwrap();
        assert_eq!(g.node_at([-1, 0]), 7);
        assert_eq!(g.node_at([8, 9]), g.node_at([0, 1]));
        assert_eq!(g.shift(0, 1, -1), g.node_at([0, 7]));
    }

    #[test]
    fn shortest_lift_goes_through_the_seam() {
        let g = TorusGrid::new(1, 10).unwrap();
        let lifts = g.lifted_displacements(1, 9, 1);
        assert_abs_diff_eq!(lifts[0].delta[0], -0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(g.torus_distance(1, 9), 0.2, epsilon = 1e-15);
        assert_eq!(lifts.len(), 3);
    }

    #[test]
    fn identical_nodes_have_zero_lift_first() {
        let g = TorusGrid::new(2, 8).unwrap();
        for k_max in 1..=3 {
            let lifts = g.lifted_displacements(13, 13, k_max);
            assert_eq!(lifts[0].delta, [0.0, 0.0]);
            assert_eq!(lifts.len(), ((2 * k_max + 1) * (2 * k_max + 1)) as usize);
        }
    }

    #[test]
    fn antipodal_tie_puts_positive_first() {
        let g = TorusGrid::new(1, 8).unwrap();
        let lifts = g.lifted_displacements(0, 4, 1);
        assert_eq!(lifts[0].delta[0], 0.5);
        assert_eq!(lifts[1].delta[0], -0.5);
    }

    #[test]
    fn potential_samples() {
        let g = TorusGrid::new(1, 16).unwrap();
        assert!(eval_potential(&Potential::zero(), &g).unwrap().values().iter().all(|&v| v == 0.0));
        let v = eval_potential(&Potential::cosine(1.0), &g).unwrap();
        assert_eq!(v[0], 1.0);
        assert_eq!(v[8], -1.0);
        // folded phases make even potentials exactly symmetric
        for i in 1..16 {
            assert_eq!(v[i], v[16 - i]);
        }
    }

    #[test]
    fn potential_node_and_point_evaluation_agree() {
        let g = TorusGrid::new(2, 12).unwrap();
        let p = Potential::zero()
            .with_cos([1, 0], 0.7)
            .with_cos([1, -2], 0.2)
            .with_sin([0, 1], -0.4)
            .with_sin([3, 1], 0.1);
        let v = eval_potential(&p, &g).unwrap();
        for i in g.nodes() {
            assert_abs_diff_eq!(v[i], p.value_at(&g.coordinate(i)), epsilon = 1e-13);
        }
    }

    #[test]
    fn potential_rejects_2d_frequency_on_1d_grid() {
        let g = TorusGrid::new(1, 8).unwrap();
        let p = Potential::zero().with_cos([1, 1], 1.0);
        assert!(eval_potential(&p, &g).is_err());
    }

    #[test]
    fn deck_translation_changes_lift_integral_by_p_dot_k() {
        let form = ClosedForm::new([1.5, -0.25]).with_base([0.3, 0.1]);
        // same torus path, second copy ends in the translate k = (1, -2)
        let path_a = [[0.1, 0.2], [0.4, 0.3], [0.8, 0.9]];
        let path_b = [[0.1, 0.2], [0.9, -0.4], [1.8, -1.1]];
        let k = [1.0, -2.0];
        let diff = form.path_integral(&path_b) - form.path_integral(&path_a);
        assert_abs_diff_eq!(diff, dot(&form.momentum, &k), epsilon = 1e-14);
        // and the integral depends on endpoints only
        let detour = [[0.1, 0.2], [5.0, -3.0], [0.0, 7.0], [0.8, 0.9]];
        assert_abs_diff_eq!(
            form.path_integral(&detour),
            form.lift_integral(&[0.8, 0.9]) - form.lift_integral(&[0.1, 0.2]),
            epsilon = 1e-13
        );
    }

    #[test]
    fn measure_validation() {
        assert!(GridMeasure::new(vec![0.5, 0.5]).is_ok());
        assert!(GridMeasure::new(vec![0.5, 0.6]).is_err());
        assert!(GridMeasure::new(vec![1.5, -0.5]).is_err());
        let m = GridMeasure::normalized(vec![1.0, 3.0]).unwrap();
        assert_eq!(m.weights(), &[0.25, 0.75]);
        assert_eq!(m.support(), vec![0, 1]);
    }

    #[test]
    fn nodes_in_box_wraps_the_seam() {
        let g = TorusGrid::new(1, 20).unwrap();
        assert_eq!(g.nodes_in_box(&[-0.1], &[0.1]), vec![0, 1, 2, 18, 19]);
        assert_eq!(g.nodes_in_box(&[0.4], &[0.6]), vec![8, 9, 10, 11, 12]);
        assert_eq!(g.nodes_in_box(&[0.0], &[1.0]).len(), 20);
    }

    proptest! {
        #[test]
        fn torus_distance_is_symmetric(n in 8usize..40, a in 0usize..1600, b in 0usize..1600, dim in 1usize..=2) {
            let g = TorusGrid::new(dim, n).unwrap();
            let (y, x) = (a % g.len(), b % g.len());
            prop_assert_eq!(g.torus_distance(y, x), g.torus_distance(x, y));
            prop_assert!(g.torus_distance(y, x) <= 0.5 * (dim as f64).sqrt() + 1e-12);
        }

        #[test]
        fn lifts_are_sorted_by_length(n in 8usize..30, a in 0usize..900, b in 0usize..900, k in 1i64..3) {
            let g = TorusGrid::new(2, n).unwrap();
            let lifts = g.lifted_displacements(a % g.len(), b % g.len(), k);
            for w in lifts.windows(2) {
                prop_assert!(w[0].steps_norm_sq() <= w[1].steps_norm_sq());
            }
        }
    }
}
