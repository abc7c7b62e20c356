//! The unit-time action kernel `W(y, x)` and its finite-beta Feynman-Kac
//! counterpart.
//!
//! `W(y, x) = -min` over paths of `m` slices of the `+<P, v>` action from `y`
//! to `x`, obtained as the `m`-th min-plus power of the slice cost. The Monte
//! Carlo side samples Brownian bridges of variance `t / beta` and estimates
//! `(1/beta) log E exp(beta int V) - <P, x - y>`; adding back the kinetic term
//! `d(y, x)^2 / (2 t)` aligns it with `W`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schroedinger::{EigenPair, TwistedGenerator};
use crate::torus::{dot, norm_sq, ClosedForm, NodeId, Potential, TorusGrid, Vector, DEFAULT_K_MAX};
use crate::weak_kam::{OneStepCost, Sign};

pub const MIN_SLICES: usize = 4;

/// Dense matrix of `W(y, x)`, row `y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix {
    n: usize,
    values: Vec<f64>,
    pub slices: usize,
    pub horizon: f64,
    /// `max |W(y, x) - W(y, x')| / dx` over neighbouring `x, x'`.
    pub lipschitz: f64,
    /// `v_max + |P| + max |V|`, the reference the estimate is checked against.
    pub lipschitz_bound: f64,
}

impl KernelMatrix {
    /// Wrap precomputed values; Lipschitz fields are left at zero.
    pub fn from_values(n: usize, values: Vec<f64>, slices: usize) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::invalid(format!("{} values cannot form a {n} x {n} kernel", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("kernel values must be finite"));
        }
        Ok(Self { n, values, slices, horizon: 1.0, lipschitz: 0.0, lipschitz_bound: 0.0 })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, y: NodeId, x: NodeId) -> f64 {
        self.values[y * self.n + x]
    }

    pub fn row(&self, y: NodeId) -> &[f64] {
        &self.values[y * self.n..(y + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Dense min-plus matrix; `INFINITY` marks a pair no path connects.
#[derive(Clone, Debug, PartialEq)]
pub struct MinPlusMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl MinPlusMatrix {
    pub fn from_cost(cost: &OneStepCost) -> Self {
        let n = cost.grid().len();
        let mut entries = vec![f64::INFINITY; n * n];
        for x in 0..n {
            for (y, c) in cost.predecessors(x) {
                entries[y * n + x] = c;
            }
        }
        Self { n, entries }
    }

    #[inline]
    pub fn get(&self, y: NodeId, x: NodeId) -> f64 {
        self.entries[y * self.n + x]
    }

    /// `(A B)(i, k) = min_j A(i, j) + B(j, k)`.
    pub fn product(&self, other: &MinPlusMatrix) -> MinPlusMatrix {
        let n = self.n;
        assert_eq!(n, other.n, "min-plus factors differ in size");
        let mut entries = vec![f64::INFINITY; n * n];
        entries.par_chunks_mut(n).enumerate().for_each(|(i, out)| {
            for j in 0..n {
                let a = self.entries[i * n + j];
                if a == f64::INFINITY {
                    continue;
                }
                for (o, b) in out.iter_mut().zip(&other.entries[j * n..(j + 1) * n]) {
                    *o = o.min(a + b);
                }
            }
        });
        MinPlusMatrix { n, entries }
    }

    /// `k`-th min-plus power by repeated squaring.
    pub fn power(&self, k: usize) -> MinPlusMatrix {
        assert!(k >= 1, "min-plus power needs k >= 1");
        let mut base = self.clone();
        let mut acc: Option<MinPlusMatrix> = None;
        let mut e = k;
        loop {
            if e & 1 == 1 {
                acc = Some(match acc {
                    None => base.clone(),
                    Some(a) => a.product(&base),
                });
            }
            e >>= 1;
            if e == 0 {
                break;
            }
            base = base.product(&base);
        }
        acc.expect("k >= 1")
    }
}

fn slice_cost(grid: &TorusGrid, potential: &Potential, form: &ClosedForm, slices: usize, v_max: f64) -> Result<OneStepCost> {
    if slices < MIN_SLICES {
        return Err(Error::config(format!("at least {MIN_SLICES} slices are required, got {slices}")));
    }
    OneStepCost::new(grid, potential, form, Sign::Plus, 1.0 / slices as f64, v_max)
}

/// `W` on all node pairs from `m` slices of duration `1/m`.
pub fn compute_w_kernel(
    grid: &TorusGrid,
    potential: &Potential,
    form: &ClosedForm,
    slices: usize,
    v_max: f64,
) -> Result<KernelMatrix> {
    let cost = slice_cost(grid, potential, form, slices, v_max)?;
    let action = MinPlusMatrix::from_cost(&cost).power(slices);
    if action.entries.iter().any(|a| !a.is_finite()) {
        return Err(Error::config(format!(
            "v_max = {v_max} cannot connect every pair of nodes in unit time"
        )));
    }
    let values = action.entries.into_iter().map(|a| -a).collect();
    let mut kernel = KernelMatrix::from_values(grid.len(), values, slices)?;
    kernel.lipschitz = lipschitz_estimate(grid, &kernel);
    kernel.lipschitz_bound = v_max + form.norm() + potential.amplitude_bound();
    Ok(kernel)
}

fn lipschitz_estimate(grid: &TorusGrid, kernel: &KernelMatrix) -> f64 {
    let dx = grid.spacing();
    (0..grid.len())
        .into_par_iter()
        .map(|y| {
            let mut worst = 0.0f64;
            for x in grid.nodes() {
                for j in 0..grid.dim() {
                    let xn = grid.shift(x, j, 1);
                    worst = worst.max((kernel.get(y, x) - kernel.get(y, xn)).abs() / dx);
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

/// Row `W(y, .)` by sequential dynamic programming over the slices; the
/// reference for the squaring construction.
pub fn w_kernel_row_by_dp(
    grid: &TorusGrid,
    potential: &Potential,
    form: &ClosedForm,
    slices: usize,
    v_max: f64,
    y: NodeId,
) -> Result<Vec<f64>> {
    let cost = slice_cost(grid, potential, form, slices, v_max)?;
    let mut best = vec![f64::INFINITY; grid.len()];
    best[y] = 0.0;
    for _ in 0..slices {
        best = grid
            .nodes()
            .map(|x| cost.predecessors(x).map(|(z, c)| best[z] + c).fold(f64::INFINITY, f64::min))
            .collect();
    }
    Ok(best.into_iter().map(|a| -a).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McParams {
    pub y: NodeId,
    pub x: NodeId,
    pub t: f64,
    pub beta: f64,
    pub samples: usize,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub y: NodeId,
    pub x: NodeId,
    pub t: f64,
    pub beta: f64,
    /// `(1/beta) log E exp(beta int V) - <P, x - y>`.
    pub estimate: f64,
    /// Jackknife standard error of `estimate`.
    pub std_error: f64,
    pub samples: usize,
    pub steps: usize,
    pub seed: u64,
    /// Minimal lift used for the bridge endpoints.
    pub displacement: Vector,
    /// All samples gave the same exponent to rounding.
    pub degenerate: bool,
    /// Two lifts tie for the minimal displacement.
    pub lift_ambiguous: bool,
    /// Another lift has smaller free action `|D|^2 / (2t) + <P, D>`, so the
    /// estimate follows a different homotopy class than the kernel.
    pub lift_disagrees: bool,
}

/// Feynman-Kac estimate over Brownian bridges from `y` to `x` on `[0, t]`.
/// Each sample draws from its own counter-addressed stream, so results do not
/// depend on the thread count.
pub fn feynman_kac_mc(grid: &TorusGrid, potential: &Potential, form: &ClosedForm, params: &McParams) -> Result<McEstimate> {
    let McParams { y, x, t, beta, samples, steps, seed } = *params;
    if samples < 100 {
        return Err(Error::config(format!("at least 100 samples are required, got {samples}")));
    }
    if steps < 16 {
        return Err(Error::config(format!("at least 16 time steps are required, got {steps}")));
    }
    if !(t > 0.0 && t.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::config("t and beta must be positive"));
    }
    if y >= grid.len() || x >= grid.len() {
        return Err(Error::invalid("endpoint outside the grid"));
    }
    let lifts = grid.lifted_displacements(y, x, 1);
    let lift_ambiguous = lifts.len() > 1 && lifts[0].steps_norm_sq() == lifts[1].steps_norm_sq();
    let delta = lifts[0].delta;
    let free_action = |d: &Vector| norm_sq(d) / (2.0 * t) + dot(&form.momentum, d);
    let lift_disagrees = grid
        .lifted_displacements(y, x, DEFAULT_K_MAX)
        .iter()
        .any(|l| free_action(&l.delta) < free_action(&delta) - 1e-12);
    let start = grid.coordinate(y);
    let dim = grid.dim();
    let sigma = (1.0 / beta).sqrt();
    let dt = t / steps as f64;

    let exponents: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|sample| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(sample as u64);
            let mut bridges = [vec![0.0; steps + 1], vec![0.0; steps + 1]];
            for bridge in bridges.iter_mut().take(dim) {
                levy_bridge(bridge, dt, sigma, &mut rng);
            }
            let mut integral = 0.0;
            for k in 0..=steps {
                let s = k as f64 / steps as f64;
                let mut point = [0.0; 2];
                for j in 0..dim {
                    point[j] = start[j] + delta[j] * s + bridges[j][k];
                }
                let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
                integral += w * potential.value_at(&point);
            }
            beta * integral * dt
        })
        .collect();

    let a_max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let a_min = exponents.iter().copied().fold(f64::INFINITY, f64::min);
    let drift = dot(&form.momentum, &delta);
    let shifted: Vec<f64> = exponents.iter().map(|a| (a - a_max).exp()).collect();
    let total: f64 = shifted.iter().sum();
    let n = samples as f64;
    let estimate = (a_max + (total / n).ln()) / beta - drift;
    let degenerate = a_max - a_min <= 1e-12 * a_max.abs().max(1.0);
    let std_error = if degenerate {
        0.0
    } else {
        let leave_one_out: Vec<f64> = shifted
            .iter()
            .map(|e| (a_max + ((total - e).max(f64::MIN_POSITIVE) / (n - 1.0)).ln()) / beta)
            .collect();
        let mean = leave_one_out.iter().sum::<f64>() / n;
        ((n - 1.0) / n * leave_one_out.iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sqrt()
    };
    if !estimate.is_finite() || !std_error.is_finite() {
        return Err(Error::Numerical("Feynman-Kac estimate is not finite".into()));
    }
    Ok(McEstimate {
        y,
        x,
        t,
        beta,
        estimate,
        std_error,
        samples,
        steps,
        seed,
        displacement: delta,
        degenerate,
        lift_ambiguous,
        lift_disagrees,
    })
}

/// Brownian bridge pinned to zero at both ends, filled by recursive midpoint
/// refinement with the exact conditional variances.
fn levy_bridge(path: &mut [f64], dt: f64, sigma: f64, rng: &mut ChaCha8Rng) {
    let last = path.len() - 1;
    path[0] = 0.0;
    path[last] = 0.0;
    let mut stack = vec![(0usize, last)];
    while let Some((a, b)) = stack.pop() {
        if b - a < 2 {
            continue;
        }
        let m = (a + b) / 2;
        let (ta, tm, tb) = (a as f64 * dt, m as f64 * dt, b as f64 * dt);
        let mean = path[a] + (path[b] - path[a]) * (tm - ta) / (tb - ta);
        let var = (tm - ta) * (tb - tm) / (tb - ta);
        let z: f64 = StandardNormal.sample(rng);
        path[m] = mean + sigma * var.sqrt() * z;
        stack.push((m, b));
        stack.push((a, m));
    }
}

/// `estimate - |Delta|^2 / (2 t) - W(y, x)`: the kinetic term is restored
/// before comparing with the kernel.
pub fn mc_kernel_difference(mc: &McEstimate, kernel: &KernelMatrix) -> Result<f64> {
    if mc.y >= kernel.len() || mc.x >= kernel.len() {
        return Err(Error::Incomparable("Monte Carlo endpoints are not kernel nodes".into()));
    }
    if (mc.t - kernel.horizon).abs() > 1e-12 {
        return Err(Error::Incomparable(format!("horizon {} differs from the kernel horizon {}", mc.t, kernel.horizon)));
    }
    Ok(mc.estimate - norm_sq(&mc.displacement) / (2.0 * mc.t) - kernel.get(mc.y, mc.x))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchilderReport {
    pub betas: Vec<f64>,
    pub errors: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// `errors` strictly decreasing with beta.
    pub decreasing: bool,
}

/// `|mc(beta) - W(y, x)|` along runs of increasing beta at one node pair.
pub fn schilder_limit_check(kernel: &KernelMatrix, runs: &[McEstimate]) -> Result<SchilderReport> {
    let Some(first) = runs.first() else {
        return Err(Error::invalid("no Monte Carlo runs supplied"));
    };
    if runs.iter().any(|r| r.y != first.y || r.x != first.x) {
        return Err(Error::Incomparable("Monte Carlo runs use different node pairs".into()));
    }
    let mut ordered: Vec<&McEstimate> = runs.iter().collect();
    ordered.sort_by(|a, b| a.beta.total_cmp(&b.beta));
    let mut errors = Vec::with_capacity(runs.len());
    for r in &ordered {
        errors.push(mc_kernel_difference(r, kernel)?.abs());
    }
    Ok(SchilderReport {
        betas: ordered.iter().map(|r| r.beta).collect(),
        std_errors: ordered.iter().map(|r| r.std_error).collect(),
        decreasing: errors.windows(2).all(|w| w[1] < w[0]) || errors.iter().all(|&e| e == 0.0),
        errors,
    })
}

/// `1 - cos` between `exp(t G^T) psi*` and `psi`, the semigroup applied by
/// `k >= 100 t ||G||` explicit Euler steps.
pub fn eigen_kernel_collinearity(pair: &EigenPair, generator: &TwistedGenerator, t: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::config("collinearity horizon must be positive"));
    }
    if pair.psi.len() != generator.grid().len() {
        return Err(Error::Incomparable("eigenpair and generator live on different grids".into()));
    }
    let steps = (100.0 * t * generator.norm_inf()).ceil().max(1.0) as usize;
    let dt = t / steps as f64;
    let mut f = pair.psi_star.values().to_vec();
    for _ in 0..steps {
        let gf = generator.apply_transpose(&f);
        let mut peak = 0.0f64;
        for (a, b) in f.iter_mut().zip(&gf) {
            *a += dt * b;
            peak = peak.max(a.abs());
        }
        f.iter_mut().for_each(|a| *a /= peak);
    }
    Ok(one_minus_cosine(&f, pair.psi.values()))
}

/// `1 - cos(a, b)` as half the squared distance of the unit vectors, which
/// keeps precision for nearly parallel inputs.
pub fn one_minus_cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    0.5 * a.iter().zip(b).map(|(x, y)| (x / na - y / nb).powi(2)).sum::<f64>()
}
