//! Twisted Schrödinger generator on the grid and its Perron eigenpairs.
//!
//! The generator is
//! `(G f)(x) = 1/(2 beta dx^2) sum_{j,+-} [exp(-+ s beta P_j dx) f(x +- e_j dx) - f(x)] + beta V(x) f(x)`,
//! the conjugation of the Feynman-Kac generator by `exp(s beta <P, x>)`
//! folded into the hopping weights so the operator stays periodic. The
//! energy is `E_beta = -lambda_max / beta`. `psi` is the right Perron vector of
//! the `s = +1` operator; `psi*` is its left Perron vector, which equals the
//! right Perron vector of the `s = -1` operator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{check_compatible, eval_potential, ClosedForm, GridField, GridMeasure, Potential, TorusGrid};
use crate::weak_kam::Sign;

/// Largest admissible `|beta P_j dx|`; beyond it the hopping weights overflow
/// the useful dynamic range.
pub const MAX_TWIST_EXPONENT: f64 = 30.0;

/// Below this size a stencil application is cheaper than a thread hand-off.
const PARALLEL_MIN_NODES: usize = 4096;

#[derive(Clone, Debug)]
pub struct TwistedGenerator {
    grid: TorusGrid,
    beta: f64,
    sign: Sign,
    /// `1 / (2 beta dx^2)`
    hop_scale: f64,
    /// per axis: weight of `f(x + e_j dx)` and of `f(x - e_j dx)`
    hops: [[f64; 2]; 2],
    diagonal: Vec<f64>,
    /// per node and axis: `[x + e_j dx, x - e_j dx]`
    neighbours: Vec<[[usize; 2]; 2]>,
}

impl TwistedGenerator {
    pub fn new(grid: &TorusGrid, potential: &Potential, form: &ClosedForm, beta: f64, sign: Sign) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::config(format!("beta must be positive, got {beta}")));
        }
        check_compatible(grid, potential, form)?;
        let dx = grid.spacing();
        let s = sign.value();
        let mut hops = [[0.0; 2]; 2];
        for (j, hop) in hops.iter_mut().enumerate().take(grid.dim()) {
            let exponent = s * beta * form.momentum[j] * dx;
            if exponent.abs() > MAX_TWIST_EXPONENT {
                return Err(Error::config(format!(
                    "|beta P_{j} dx| = {} exceeds {MAX_TWIST_EXPONENT}; refine the grid",
                    exponent.abs()
                )));
            }
            *hop = [(-exponent).exp(), exponent.exp()];
        }
        let hop_scale = 1.0 / (2.0 * beta * dx * dx);
        let v = eval_potential(potential, grid)?;
        let diagonal = v.values().iter().map(|&vx| -2.0 * grid.dim() as f64 * hop_scale + beta * vx).collect();
        let neighbours = grid
            .nodes()
            .map(|x| {
                let mut nb = [[x; 2]; 2];
                for (j, pair) in nb.iter_mut().enumerate().take(grid.dim()) {
                    *pair = [grid.shift(x, j, 1), grid.shift(x, j, -1)];
                }
                nb
            })
            .collect();
        Ok(Self { grid: *grid, beta, sign, hop_scale, hops, diagonal, neighbours })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    /// Off-diagonal entry `G(x, x + e_j dx)` (`forward`) or `G(x, x - e_j dx)`.
    pub fn hopping(&self, axis: usize, forward: bool) -> f64 {
        self.hop_scale * self.hops[axis][usize::from(!forward)]
    }

    /// `max_x sum_y |G(x, y)|`.
    pub fn norm_inf(&self) -> f64 {
        let off: f64 = (0..self.grid.dim()).map(|j| self.hopping(j, true) + self.hopping(j, false)).sum();
        self.diagonal.iter().map(|d| d.abs() + off).fold(0.0, f64::max)
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.apply_oriented(f, false)
    }

    pub fn apply_transpose(&self, f: &[f64]) -> Vec<f64> {
        self.apply_oriented(f, true)
    }

    fn apply_oriented(&self, f: &[f64], transpose: bool) -> Vec<f64> {
        assert_eq!(f.len(), self.grid.len(), "field and generator live on different grids");
        let g = &self.grid;
        let row = |x: usize| {
            let mut acc = self.diagonal[x] * f[x];
            for j in 0..g.dim() {
                let [fwd, bwd] = self.hops[j];
                let (wp, wm) = if transpose { (bwd, fwd) } else { (fwd, bwd) };
                let [up, down] = self.neighbours[x][j];
                acc += self.hop_scale * (wp * f[up] + wm * f[down]);
            }
            acc
        };
        if g.len() >= PARALLEL_MIN_NODES {
            (0..g.len()).into_par_iter().map(row).collect()
        } else {
            (0..g.len()).map(row).collect()
        }
    }

    /// Dense row-major matrix, for small grids.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.grid.len();
        let mut m = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for y in 0..n {
            e[y] = 1.0;
            for (x, v) in self.apply(&e).into_iter().enumerate() {
                m[x * n + y] = v;
            }
            e[y] = 0.0;
        }
        m
    }
}

pub fn assemble_twisted_generator(
    grid: &TorusGrid,
    potential: &Potential,
    form: &ClosedForm,
    beta: f64,
    sign: Sign,
) -> Result<TwistedGenerator> {
    TwistedGenerator::new(grid, potential, form, beta, sign)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    /// Stop when the Collatz-Wielandt bracket of `lambda` has half-width at
    /// most `tol * max(1, |lambda|)`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { tol: 1e-11, max_iters: 2_000_000 }
    }
}

/// Principal eigenvalue and positive eigenvector of one orientation of `G`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerronVector {
    pub lambda: f64,
    /// Scaled to `max = 1`.
    pub vector: GridField,
    /// Half-width of the bracket `min_x (G v)_x / v_x <= lambda <= max_x (G v)_x / v_x`.
    pub residual: f64,
    pub iterations: usize,
    /// `lambda_1 - lambda_2` estimated from the observed contraction rate.
    pub gap_estimate: f64,
}

const CHECK_EVERY: usize = 64;

/// Power iteration on `M = I + delta G`, `delta = 0.9 / max |diag G|`.
pub fn perron_eigenpair(generator: &TwistedGenerator, opts: &EigenOptions) -> Result<PerronVector> {
    power_iteration(generator, opts, false)
}

/// Left Perron vector, from the transpose.
pub fn left_eigenpair(generator: &TwistedGenerator, opts: &EigenOptions) -> Result<PerronVector> {
    power_iteration(generator, opts, true)
}

fn power_iteration(generator: &TwistedGenerator, opts: &EigenOptions, transpose: bool) -> Result<PerronVector> {
    if !(opts.tol > 0.0) {
        return Err(Error::config("eigensolver tolerance must be positive"));
    }
    let solver = if transpose { "left Perron iteration" } else { "right Perron iteration" };
    let n = generator.grid.len();
    let max_diag = generator.diagonal.iter().map(|d| d.abs()).fold(0.0, f64::max);
    let delta = 0.9 / max_diag.max(f64::MIN_POSITIVE);

    let mut v = vec![1.0; n];
    let mut history: Vec<(usize, f64)> = Vec::new();
    let mut bracket = (f64::NEG_INFINITY, f64::INFINITY);
    for iteration in 0..opts.max_iters {
        let gv = generator.apply_oriented(&v, transpose);
        if iteration % CHECK_EVERY == 0 {
            bracket = collatz_bracket(&v, &gv);
            let lambda = 0.5 * (bracket.0 + bracket.1);
            let half_width = 0.5 * (bracket.1 - bracket.0);
            history.push((iteration, half_width));
            if !half_width.is_finite() {
                return Err(Error::Numerical(format!("{solver} lost positivity")));
            }
            if half_width <= opts.tol * lambda.abs().max(1.0) {
                let gap_estimate = gap_from_history(&history, delta, lambda);
                if gap_estimate.is_finite() && gap_estimate < 1e-10 * lambda.abs() {
                    return Err(Error::Numerical(format!(
                        "{solver}: spectral gap {gap_estimate:.3e} is degenerate"
                    )));
                }
                return Ok(PerronVector {
                    lambda,
                    vector: GridField::new(v)?,
                    residual: half_width,
                    iterations: iteration,
                    gap_estimate,
                });
            }
        }
        let mut peak = 0.0f64;
        for (vi, gi) in v.iter_mut().zip(&gv) {
            *vi += delta * gi;
            peak = peak.max(*vi);
        }
        v.iter_mut().for_each(|vi| *vi /= peak);
    }
    let lambda = 0.5 * (bracket.0 + bracket.1);
    let gap = gap_from_history(&history, delta, lambda);
    Err(Error::NonConvergence {
        solver,
        iterations: opts.max_iters,
        residual: 0.5 * (bracket.1 - bracket.0),
        hint: Some(format!("spectral gap estimate {gap:.3e}")),
    })
}

fn collatz_bracket(v: &[f64], gv: &[f64]) -> (f64, f64) {
    v.iter().zip(gv).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&a, &b)| {
        let r = b / a;
        (lo.min(r), hi.max(r))
    })
}

/// The bracket contracts like `((1 + delta lambda_2) / (1 + delta lambda_1))^k`.
fn gap_from_history(history: &[(usize, f64)], delta: f64, lambda: f64) -> f64 {
    let tail: Vec<&(usize, f64)> = history.iter().rev().take(8).collect();
    if tail.len() < 2 {
        return f64::NAN;
    }
    let (k1, r1) = *tail[0];
    let (k0, r0) = *tail[tail.len() - 1];
    if r1 <= 0.0 || r0 <= 0.0 {
        return f64::INFINITY;
    }
    let rate = ((r1 / r0).ln() / (k1 - k0) as f64).exp().min(1.0);
    (1.0 + delta * lambda) * (1.0 - rate) / delta
}

/// Scale `psi*` so that `sum psi* dx^d = 1`, then `psi` so that
/// `sum psi psi* dx^d = 1`.
pub fn normalize_pair(psi: &GridField, psi_star: &GridField, grid: &TorusGrid) -> Result<(GridField, GridField)> {
    if psi.len() != grid.len() || psi_star.len() != grid.len() {
        return Err(Error::Incomparable("eigenvectors do not live on the grid".into()));
    }
    if psi.min() <= 0.0 || psi_star.min() <= 0.0 {
        return Err(Error::invalid("eigenvectors must be strictly positive"));
    }
    let vol = grid.cell_volume();
    let star_mass: f64 = psi_star.values().iter().sum::<f64>() * vol;
    let psi_star = psi_star.map(|p| p / star_mass);
    let overlap: f64 = psi.values().iter().zip(psi_star.values()).map(|(a, b)| a * b).sum::<f64>() * vol;
    let psi = psi.map(|p| p / overlap);
    Ok((psi, psi_star))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub beta: f64,
    /// `-lambda / beta`
    pub energy: f64,
    pub lambda: f64,
    pub psi: GridField,
    pub psi_star: GridField,
    pub residual_right: f64,
    pub residual_left: f64,
    pub iterations: usize,
    pub spectral_gap_estimate: f64,
}

impl EigenPair {
    /// Solve both orientations of the `s = +1` generator and normalize.
    pub fn compute(generator: &TwistedGenerator, opts: &EigenOptions) -> Result<Self> {
        if generator.sign != Sign::Plus {
            return Err(Error::invalid("eigenpairs are defined from the s = +1 generator"));
        }
        let right = perron_eigenpair(generator, opts)?;
        let left = left_eigenpair(generator, opts)?;
        let scale = right.lambda.abs().max(1.0);
        if (right.lambda - left.lambda).abs() > 10.0 * opts.tol * scale {
            return Err(Error::Numerical(format!(
                "left and right Perron eigenvalues disagree: {} vs {}",
                left.lambda, right.lambda
            )));
        }
        let (psi, psi_star) = normalize_pair(&right.vector, &left.vector, &generator.grid)?;
        Ok(Self {
            beta: generator.beta,
            energy: -right.lambda / generator.beta,
            lambda: right.lambda,
            psi,
            psi_star,
            residual_right: right.residual,
            residual_left: left.residual,
            iterations: right.iterations.max(left.iterations),
            spectral_gap_estimate: right.gap_estimate,
        })
    }
}

/// `nu_beta = psi psi* dx^d`.
pub fn quantum_measure(pair: &EigenPair, grid: &TorusGrid) -> Result<GridMeasure> {
    let vol = grid.cell_volume();
    let weights = pair.psi.values().iter().zip(pair.psi_star.values()).map(|(a, b)| a * b * vol).collect();
    GridMeasure::new(weights)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarityResidual {
    /// `sup_x |sum_y L(x, y)|`, relative to `max(1, |lambda|)`.
    pub row_sum: f64,
    /// `|| nu L ||_1`, relative to `max(1, |lambda|)`.
    pub left_annihilation: f64,
}

impl StationarityResidual {
    pub fn max(&self) -> f64 {
        self.row_sum.max(self.left_annihilation)
    }
}

/// Residuals of the Doob transform `L f = psi^-1 (G (psi f) - lambda psi f)`:
/// rows of `L` sum to zero and `nu` is invariant.
pub fn markov_stationarity_check(pair: &EigenPair, generator: &TwistedGenerator) -> StationarityResidual {
    let psi = pair.psi.values();
    let star = pair.psi_star.values();
    let lambda = pair.lambda;
    let scale = lambda.abs().max(1.0);
    let g_psi = generator.apply(psi);
    let row_sum = g_psi
        .iter()
        .zip(psi)
        .map(|(g, p)| ((g - lambda * p) / p).abs())
        .fold(0.0, f64::max);
    // (nu L)(y) = dx^d psi(y) (G^T psi* - lambda psi*)(y)
    let vol = generator.grid.cell_volume();
    let gt_star = generator.apply_transpose(star);
    let left: f64 = gt_star
        .iter()
        .zip(star)
        .zip(psi)
        .map(|((g, s), p)| (vol * p * (g - lambda * s)).abs())
        .sum();
    StationarityResidual { row_sum: row_sum / scale, left_annihilation: left / scale }
}
