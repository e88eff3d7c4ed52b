//! Association scoring heads.
//!
//! The distance head computes `E = Σ_t w_t (d_t − s_t)²` with `w_t = softplus(raw_t)`
//! and maps it to a probability with `1 / (1 + e^E)`, so larger distances give
//! smaller probabilities. The inner-product head is the plain matrix
//! factorization baseline, `sigmoid(d · s)`.

use serde::{Deserialize, Serialize};

use crate::numkit::{dot, sigmoid, softplus, softplus_inverse, NumError};

/// Learnable per-dimension weights of the generalized distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceWeights {
    pub raw: Vec<f64>,
}

impl DistanceWeights {
    /// Raw values whose effective weights are 1 (to rounding): plain squared
    /// Euclidean distance.
    pub fn unit(k: usize) -> Self {
        Self { raw: vec![softplus_inverse(1.0); k] }
    }

    pub fn from_effective(weights: &[f64]) -> Self {
        Self { raw: weights.iter().map(|&w| softplus_inverse(w)).collect() }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn effective(&self) -> Vec<f64> {
        self.raw.iter().copied().map(softplus).collect()
    }
}

/// How distances become probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkForm {
    /// `1 / (1 + e^E)`: decreasing in `E`.
    #[default]
    Decreasing,
    /// `1 − 1 / (1 + e^E)`: increasing in `E`. Kept for side-by-side comparison only.
    Increasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    GeneralizedEuclidean,
    InnerProduct,
}

fn check_len(what: &str, a: usize, b: usize) -> Result<(), NumError> {
    if a == b {
        Ok(())
    } else {
        Err(NumError::Shape(format!("{what}: lengths {a} and {b}")))
    }
}

/// `Σ_t w_t (d_t − s_t)²` with effective weights `w`.
pub fn generalized_distance_with(d: &[f64], s: &[f64], w: &[f64]) -> Result<f64, NumError> {
    check_len("generalized distance (points)", d.len(), s.len())?;
    check_len("generalized distance (weights)", d.len(), w.len())?;
    Ok(d.iter().zip(s).zip(w).map(|((a, b), wt)| wt * (a - b) * (a - b)).sum())
}

pub fn generalized_distance(d: &[f64], s: &[f64], w: &DistanceWeights) -> Result<f64, NumError> {
    generalized_distance_with(d, s, &w.effective())
}

/// `1 / (1 + e^E)`, evaluated without overflow.
#[inline]
pub fn distance_to_probability(e: f64) -> f64 {
    sigmoid(-e)
}

#[inline]
pub fn link(e: f64, form: LinkForm) -> f64 {
    match form {
        LinkForm::Decreasing => sigmoid(-e),
        LinkForm::Increasing => sigmoid(e),
    }
}

pub fn inner_product_score(d: &[f64], s: &[f64]) -> Result<f64, NumError> {
    check_len("inner product", d.len(), s.len())?;
    Ok(sigmoid(dot(d, s)))
}

/// Gradients of `E` with respect to the drug point, disease point and raw weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceGrad {
    pub d: Vec<f64>,
    pub s: Vec<f64>,
    pub raw: Vec<f64>,
}

/// `∂E/∂d_t = 2 w_t (d_t − s_t)`, `∂E/∂s_t = −∂E/∂d_t`,
/// `∂E/∂raw_t = (d_t − s_t)² · sigmoid(raw_t)`.
pub fn distance_gradient(d: &[f64], s: &[f64], w: &DistanceWeights) -> Result<DistanceGrad, NumError> {
    check_len("distance gradient (points)", d.len(), s.len())?;
    check_len("distance gradient (weights)", d.len(), w.len())?;
    let k = d.len();
    let mut out = DistanceGrad { d: vec![0.0; k], s: vec![0.0; k], raw: vec![0.0; k] };
    for t in 0..k {
        let diff = d[t] - s[t];
        let g = 2.0 * softplus(w.raw[t]) * diff;
        out.d[t] = g;
        out.s[t] = -g;
        out.raw[t] = diff * diff * sigmoid(w.raw[t]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::RngStream;
    use proptest::prelude::*;

    #[test]
    fn distance_examples() {
        let w = DistanceWeights::from_effective(&[1.0, 2.0]);
        assert_eq!(generalized_distance(&[0.3, 0.4], &[0.3, 0.4], &w).unwrap(), 0.0);
        let e = generalized_distance(&[1.0, 0.0], &[0.0, 1.0], &w).unwrap();
        assert!((e - 3.0).abs() < 1e-12);
        assert!(generalized_distance(&[1.0], &[0.0, 1.0], &w).is_err());
    }

    #[test]
    fn unit_weights_are_squared_euclidean() {
        let mut rng = RngStream::new(3);
        let w = DistanceWeights::unit(16);
        for _ in 0..100 {
            let d: Vec<f64> = (0..16).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let s: Vec<f64> = (0..16).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let mut naive = 0.0;
            for t in 0..16 {
                naive += (d[t] - s[t]) * (d[t] - s[t]);
            }
            assert!((generalized_distance(&d, &s, &w).unwrap() - naive).abs() <= 1e-12);
        }
    }

    #[test]
    fn link_examples() {
        assert_eq!(distance_to_probability(0.0), 0.5);
        assert!((distance_to_probability(3f64.ln()) - 0.25).abs() < 1e-15);
        assert!(distance_to_probability(40.0) < 1e-17);
        assert!(distance_to_probability(1e6) >= 0.0);
        assert!((link(3f64.ln(), LinkForm::Increasing) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn inner_product_examples() {
        assert_eq!(inner_product_score(&[0.0, 0.0], &[5.0, -2.0]).unwrap(), 0.5);
        assert_eq!(inner_product_score(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), sigmoid(11.0));
        assert_eq!(
            inner_product_score(&[0.3, -0.7], &[1.1, 0.2]).unwrap(),
            inner_product_score(&[1.1, 0.2], &[0.3, -0.7]).unwrap()
        );
        assert!(inner_product_score(&[1.0], &[1.0, 2.0]).is_err());
    }

    /// Richardson-extrapolated central difference of `f` around 0.
    fn derivative(f: impl Fn(f64) -> f64) -> f64 {
        let h = 1e-3;
        let central = |h: f64| (f(h) - f(-h)) / (2.0 * h);
        (4.0 * central(h / 2.0) - central(h)) / 3.0
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = RngStream::new(17);
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        for _ in 0..20 {
            let k = 5;
            let d: Vec<f64> = (0..k).map(|_| rng.uniform()).collect();
            let s: Vec<f64> = (0..k).map(|_| rng.uniform()).collect();
            let w = DistanceWeights { raw: (0..k).map(|_| rng.uniform_in(-2.0, 2.0)).collect() };
            let g = distance_gradient(&d, &s, &w).unwrap();
            for t in 0..k {
                let bump = |v: &[f64], delta: f64| {
                    let mut v = v.to_vec();
                    v[t] += delta;
                    v
                };
                let nd = derivative(|h| generalized_distance(&bump(&d, h), &s, &w).unwrap());
                let ns = derivative(|h| generalized_distance(&d, &bump(&s, h), &w).unwrap());
                let nw =
                    derivative(|h| generalized_distance(&d, &s, &DistanceWeights { raw: bump(&w.raw, h) }).unwrap());
                assert!(rel(g.d[t], nd) <= 1e-6, "d[{t}]: {} vs {nd}", g.d[t]);
                assert!(rel(g.s[t], ns) <= 1e-6, "s[{t}]: {} vs {ns}", g.s[t]);
                assert!(rel(g.raw[t], nw) <= 1e-6, "raw[{t}]: {} vs {nw}", g.raw[t]);
            }
        }
    }

    fn point(k: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0f64..3.0, k)
    }

    proptest! {
        #[test]
        fn root_distance_is_a_metric(
            a in point(6), b in point(6), c in point(6),
            raw in proptest::collection::vec(-4.0f64..4.0, 6),
        ) {
            let w = DistanceWeights { raw };
            let rho = |x: &[f64], y: &[f64]| generalized_distance(x, y, &w).unwrap().sqrt();
            prop_assert!(rho(&a, &c) <= rho(&a, &b) + rho(&b, &c) + 1e-9);
            prop_assert!((generalized_distance(&a, &b, &w).unwrap() - generalized_distance(&b, &a, &w).unwrap()).abs() < 1e-12);
            prop_assert!(generalized_distance(&a, &b, &w).unwrap() >= 0.0);
        }

        #[test]
        fn zero_distance_iff_equal(a in point(4), b in point(4), raw in proptest::collection::vec(-4.0f64..4.0, 4)) {
            let w = DistanceWeights { raw };
            prop_assert_eq!(generalized_distance(&a, &a, &w).unwrap(), 0.0);
            if a != b {
                prop_assert!(generalized_distance(&a, &b, &w).unwrap() > 0.0);
            }
        }

        #[test]
        fn link_is_monotone(e in 0.0f64..30.0, de in 1e-6f64..5.0) {
            prop_assert!(distance_to_probability(e) > distance_to_probability(e + de));
        }
    }
}
