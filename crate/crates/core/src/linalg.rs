//! Dense factorizations shared by the implicit steps.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};

/// Default cap on the 2-norm condition number accepted by [`Factored::new`].
pub const DEFAULT_CONDITION_CAP: f64 = 1e13;

/// 2-norm condition number `σ_max / σ_min`.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// An LU factorization checked against a condition-number cap.
#[derive(Debug, Clone)]
pub struct Factored {
    lu: LU<f64, Dyn, Dyn>,
    condition: f64,
}

impl Factored {
    pub fn new(a: DMatrix<f64>, cap: f64) -> Result<Self> {
        let condition = condition_number(&a);
        if !condition.is_finite() {
            return Err(Error::Singular);
        }
        if condition > cap {
            return Err(Error::IllConditioned {
                estimate: condition,
                cap,
            });
        }
        let lu = a.lu();
        if !lu.is_invertible() {
            return Err(Error::Singular);
        }
        Ok(Self { lu, condition })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b = DVector::from_column_slice(rhs);
        self.lu
            .solve(&b)
            .expect("factorization was checked invertible")
            .data
            .into()
    }

    /// Solves for every column of `rhs` at once.
    pub fn solve_columns(&self, rhs: &mut DMatrix<f64>) {
        let ok = self.lu.solve_mut(rhs);
        debug_assert!(ok, "factorization was checked invertible");
    }
}
