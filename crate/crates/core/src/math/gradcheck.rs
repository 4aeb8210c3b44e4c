//! Central finite-difference gradient verification against analytic grads.

use super::params::ParamStore;
use super::{MathError, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat offset of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compare `analytic` (flat trainable layout of `store`) against central
/// differences of `eval` at step `h`. Relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(
    store: &mut ParamStore,
    analytic: &[f64],
    mut eval: F,
    h: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let base = store.flat_values();
    if base.len() != analytic.len() {
        return Err(MathError::Config(format!(
            "analytic grad length {} vs {} trainable coords",
            analytic.len(),
            base.len()
        )));
    }
    let mut probe = base.clone();
    let mut max_rel = 0.0;
    let mut worst = None;
    for i in 0..base.len() {
        probe[i] = base[i] + h;
        store.set_flat_values(&probe);
        let f_plus = eval(store)?;
        probe[i] = base[i] - h;
        store.set_flat_values(&probe);
        let f_minus = eval(store)?;
        probe[i] = base[i];
        if !f_plus.is_finite() || !f_minus.is_finite() {
            store.set_flat_values(&base);
            return Err(MathError::NonFinite("grad_check objective"));
        }
        let numeric = (f_plus - f_minus) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
            worst = store.locate_coord(i);
        }
    }
    store.set_flat_values(&base);
    Ok(GradCheckReport { max_rel_err: max_rel, worst, coords_checked: base.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::graph::Graph;
    use crate::math::tensor::Tensor;

    fn quadratic_loss(store: &ParamStore) -> Result<f64> {
        let mut g = Graph::new();
        let x = g.param(store, 0);
        let loss = g.sum_sq(x)?;
        Ok(g.scalar_value(loss))
    }

    #[test]
    fn quadratic_matches_exactly() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::row(&[3.0]), true);
        // analytic d(x^2)/dx = 2x = 6
        let report = grad_check(&mut store, &[6.0], quadratic_loss, 1e-5).unwrap();
        assert!(report.max_rel_err < 1e-9, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn constant_function_gives_zero() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::row(&[1.5, -0.5]), true);
        let report = grad_check(&mut store, &[0.0, 0.0], |_| Ok(7.25), 1e-5).unwrap();
        assert_eq!(report.max_rel_err, 0.0);
        assert_eq!(report.coords_checked, 2);
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::row(&[3.0]), true);
        let report = grad_check(&mut store, &[5.0], quadratic_loss, 1e-5).unwrap();
        assert!(report.max_rel_err > 0.1);
        assert_eq!(report.worst, Some(("x".to_string(), 0)));
    }
}
