//! Central finite differences, the oracle for every backward pass.

use alloc::string::String;

use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Denominator floor so that near-zero gradients are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `(f(θ+ε·e_i) − f(θ−ε·e_i)) / 2ε` for every coordinate `i`.
pub fn finite_diff(mut f: impl FnMut(&Tensor) -> f64, theta: &Tensor, eps: f64) -> Tensor {
    assert!(eps > 0.0, "finite_diff needs a positive step");
    let mut probe = theta.clone();
    let mut out = Tensor::zeros(theta.shape());
    for i in 0..theta.numel() {
        let orig = theta.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    out
}

/// `|a − b| / max(|a|, |b|, RELATIVE_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = libm::fabs(a).max(libm::fabs(b)).max(RELATIVE_FLOOR);
    libm::fabs(a - b) / denom
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    /// Parameter name, flat index, analytic and numeric value at the worst
    /// coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_relative_error <= tol
    }
}

/// Compares the gradients already stored in `store` against central
/// differences of `objective`, over every free coordinate of the listed
/// parameters.
pub fn check_params(
    store: &mut ParamStore,
    ids: impl IntoIterator<Item = ParamId>,
    eps: f64,
    mut objective: impl FnMut(&ParamStore) -> f64,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst: None,
    };
    for id in ids {
        let n = store.get(id).numel();
        for i in 0..n {
            if !store.param(id).is_free(i) {
                continue;
            }
            let analytic = store.get(id).grad().map_or(0.0, |g| g[i]);
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + eps;
            let up = objective(store);
            store.get_mut(id).data_mut()[i] = orig - eps;
            let down = objective(store);
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((store.name(id).into(), i, analytic, numeric));
            }
        }
    }
    report
}
