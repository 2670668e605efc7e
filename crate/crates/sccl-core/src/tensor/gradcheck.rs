//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::tensor::Tensor;

/// A deterministic scalar function of a parameter list, differentiable by
/// some analytic path that this checker is meant to verify.
pub trait DiffFn {
    fn value(&self, params: &[Tensor]) -> Result<f64>;
    fn grads(&self, params: &[Tensor]) -> Result<Vec<Tensor>>;
}

pub struct ClosureDiffFn<V, G> {
    pub value: V,
    pub grads: G,
}

impl<V, G> DiffFn for ClosureDiffFn<V, G>
where
    V: Fn(&[Tensor]) -> Result<f64>,
    G: Fn(&[Tensor]) -> Result<Vec<Tensor>>,
{
    fn value(&self, params: &[Tensor]) -> Result<f64> {
        (self.value)(params)
    }
    fn grads(&self, params: &[Tensor]) -> Result<Vec<Tensor>> {
        (self.grads)(params)
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// (param index, element index, analytic, numeric) at the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-8)
}

/// Compare analytic gradients against central differences
/// `(f(t+h) - f(t-h)) / 2h` for every entry of every parameter.
pub fn finite_difference_check(
    f: &dyn DiffFn,
    params: &[Tensor],
    h: f64,
) -> Result<GradCheckReport> {
    let analytic = f.grads(params)?;
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport { max_rel_err: 0.0, checked: 0, worst: None };
    for pi in 0..params.len() {
        for ei in 0..params[pi].len() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + h;
            let fp = f.value(&work)?;
            work[pi].data_mut()[ei] = orig - h;
            let fm = f.value(&work)?;
            work[pi].data_mut()[ei] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[pi].data()[ei];
            let err = rel_err(a, numeric);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((pi, ei, a, numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic() -> ClosureDiffFn<
        impl Fn(&[Tensor]) -> Result<f64>,
        impl Fn(&[Tensor]) -> Result<Vec<Tensor>>,
    > {
        ClosureDiffFn {
            value: |p: &[Tensor]| Ok(p[0].data()[0] * p[0].data()[0]),
            grads: |p: &[Tensor]| Ok(vec![Tensor::scalar(2.0 * p[0].data()[0])]),
        }
    }

    #[test]
    fn square_at_three_matches_hand_derivative() {
        let f = quadratic();
        let params = vec![Tensor::scalar(3.0)];
        let report = finite_difference_check(&f, &params, 1e-5).unwrap();
        assert_eq!(report.checked, 1);
        assert!(report.max_rel_err < 1e-8, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let f = ClosureDiffFn {
            value: |_: &[Tensor]| Ok(7.5),
            grads: |p: &[Tensor]| Ok(vec![Tensor::zeros(p[0].shape())]),
        };
        let params = vec![Tensor::vector(vec![1.0, -2.0, 0.5])];
        let report = finite_difference_check(&f, &params, 1e-5).unwrap();
        assert_eq!(report.max_rel_err, 0.0);
    }

    #[test]
    fn seeded_wrong_adjoint_is_detected() {
        // claims d(x^2)/dx = 2x + 0.3: the checker must flag it
        let f = ClosureDiffFn {
            value: |p: &[Tensor]| Ok(p[0].data()[0] * p[0].data()[0]),
            grads: |p: &[Tensor]| Ok(vec![Tensor::scalar(2.0 * p[0].data()[0] + 0.3)]),
        };
        let params = vec![Tensor::scalar(1.5)];
        let report = finite_difference_check(&f, &params, 1e-5).unwrap();
        assert!(report.max_rel_err > 1e-2, "rel err {}", report.max_rel_err);
    }
}
