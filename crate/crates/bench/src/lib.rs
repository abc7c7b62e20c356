//! Fixtures shared by the benchmarks.

use kamlab::torus::{ClosedForm, Potential, TorusGrid};
use kamlab::weak_kam::{OneStepCost, Sign};

/// `V = cos(2 pi x)` on `n` points, the default benchmark problem.
pub fn cosine(n: usize) -> (TorusGrid, Potential) {
    (TorusGrid::new(1, n).expect("valid grid"), Potential::cosine(1.0))
}

pub fn cosine_cost(n: usize, step: f64) -> OneStepCost {
    let (g, v) = cosine(n);
    OneStepCost::new(&g, &v, &ClosedForm::zero(), Sign::Minus, step, 4.0).expect("valid cost")
}

/// Dense `m x n` transportation problem with balanced marginals and a
/// deterministic pseudo-random cost.
pub fn transport_instance(m: usize, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let supply = vec![1.0 / m as f64; m];
    let demand = vec![1.0 / n as f64; n];
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let cost = (0..m * n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect();
    (supply, demand, cost)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_well_formed() {
        let (s, d, c) = transport_instance(3, 5);
        assert!((s.iter().sum::<f64>() - d.iter().sum::<f64>()).abs() < 1e-15);
        assert!(c.iter().all(|x| (0.0..1.0).contains(x)));
        assert_eq!(cosine_cost(16, 0.1).grid().len(), 16);
    }
}
