//! The logistic squasher and its derivatives.
//!
//! Every derivative of `σ` is a polynomial in `σ` itself, because
//! `σ' = σ(1 − σ)`. [`SigmaDerivTable`] stores those polynomials so that
//! `σ^(m)(x)` is evaluated from a single call to [`sigmoid`] instead of nested
//! numeric differentiation.

use std::sync::OnceLock;

/// Highest derivative order served by [`sigma_deriv`].
pub const MAX_SIGMA_ORDER: usize = 24;

/// `1 / (1 + e^{-x})`, evaluated on the branch that never exponentiates a
/// large positive argument.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Coefficients of `σ^(m)` as polynomials in `s = σ(x)`, for `m = 0..=order`.
///
/// `coeffs[m][i]` multiplies `s^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaDerivTable {
    coeffs: Vec<Vec<f64>>,
}

impl SigmaDerivTable {
    pub fn new(order: usize) -> Self {
        let mut coeffs = Vec::with_capacity(order + 1);
        // σ^(0) = s
        coeffs.push(vec![0.0, 1.0]);
        for m in 0..order {
            let prev: &Vec<f64> = &coeffs[m];
            // d/dσ of the polynomial
            let dp: Vec<f64> = prev
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, c)| c * i as f64)
                .collect();
            // times s - s^2
            let mut next = vec![0.0; dp.len() + 2];
            for (i, c) in dp.iter().enumerate() {
                next[i + 1] += c;
                next[i + 2] -= c;
            }
            while next.len() > 1 && next.last() == Some(&0.0) {
                next.pop();
            }
            coeffs.push(next);
        }
        Self { coeffs }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Polynomial coefficients of `σ^(m)` in powers of `σ`.
    pub fn coefficients(&self, m: usize) -> &[f64] {
        &self.coeffs[m]
    }

    /// Evaluates `σ^(m)(x)`.
    ///
    /// Panics if `m` exceeds the table order.
    pub fn eval(&self, m: usize, x: f64) -> f64 {
        assert!(
            m <= self.order(),
            "derivative order {m} exceeds table order {}",
            self.order()
        );
        let s = sigmoid(x);
        self.coeffs[m].iter().rev().fold(0.0, |acc, c| acc * s + c)
    }
}

fn shared_table() -> &'static SigmaDerivTable {
    static TABLE: OnceLock<SigmaDerivTable> = OnceLock::new();
    TABLE.get_or_init(|| SigmaDerivTable::new(MAX_SIGMA_ORDER))
}

/// `σ^(m)(x)` from the shared table of order [`MAX_SIGMA_ORDER`].
pub fn sigma_deriv(m: usize, x: f64) -> f64 {
    shared_table().eval(m, x)
}

/// `sup |σ'| = σ'(0)`.
pub const SIGMA_PRIME_SUP: f64 = 0.25;
