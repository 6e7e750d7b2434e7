//! Finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::num::rng::Rng;
use crate::num::tensor::Tensor2;

/// Central-difference step size.
pub const FD_STEP: f64 = 1e-6;

/// Check an analytic gradient against central finite differences on randomly
/// probed coordinates.
///
/// `loss` evaluates the objective at the current parameters; `analytic`
/// produces the full gradient (one tensor per parameter tensor, same shapes).
/// Returns the max over probes of |analytic − numeric| / max(1, |analytic|,
/// |numeric|). The parameters are restored bit-exactly before returning.
pub fn finite_diff_check<L, G>(
    params: &mut [Tensor2],
    mut loss: L,
    analytic: G,
    rng: &mut Rng,
    probes: usize,
) -> Result<f64>
where
    L: FnMut(&[Tensor2]) -> Result<f64>,
    G: FnOnce(&[Tensor2]) -> Result<Vec<Tensor2>>,
{
    if probes == 0 {
        return Err(Error::Argument("finite_diff_check requires probes >= 1".into()));
    }
    if params.is_empty() {
        return Err(Error::Argument("finite_diff_check over zero parameters".into()));
    }
    let grads = analytic(params)?;
    if grads.len() != params.len() {
        return Err(Error::Dimension(format!(
            "analytic gradient has {} tensors for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    let total: usize = params.iter().map(Tensor2::len).sum();
    if total == 0 {
        return Err(Error::Argument("parameters are empty".into()));
    }
    let mut max_rel = 0.0f64;
    for _ in 0..probes {
        // Pick a flat coordinate, then locate its tensor.
        let mut flat = rng.below(total);
        let mut t = 0;
        while flat >= params[t].len() {
            flat -= params[t].len();
            t += 1;
        }
        let original = params[t].as_slice()[flat];

        params[t].as_mut_slice()[flat] = original + FD_STEP;
        let plus = loss(params)?;
        params[t].as_mut_slice()[flat] = original - FD_STEP;
        let minus = loss(params)?;
        params[t].as_mut_slice()[flat] = original;

        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at probe (tensor {t}, coord {flat})"
            )));
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = grads[t].as_slice()[flat];
        let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_loss_is_exact() {
        // loss(w) = w · x for fixed x; gradient is x itself.
        let x = vec![0.5, -1.25, 3.0, 0.0, 2.5, -0.75];
        let mut params = vec![Tensor2::from_vec(2, 3, vec![1.0, 2.0, -1.0, 0.5, 0.25, -2.0]).unwrap()];
        let x_loss = x.clone();
        let x_grad = x.clone();
        let mut rng = Rng::new(4);
        let err = finite_diff_check(
            &mut params,
            move |ps| {
                Ok(ps[0]
                    .as_slice()
                    .iter()
                    .zip(&x_loss)
                    .map(|(w, xi)| w * xi)
                    .sum())
            },
            move |ps| Ok(vec![Tensor2::from_vec(ps[0].rows(), ps[0].cols(), x_grad)?]),
            &mut rng,
            50,
        )
        .unwrap();
        assert!(err <= 1e-9, "linear loss relative error {err}");
    }

    #[test]
    fn zero_probes_is_an_argument_error() {
        let mut params = vec![Tensor2::zeros(1, 1)];
        let res = finite_diff_check(
            &mut params,
            |_| Ok(0.0),
            |_| Ok(vec![Tensor2::zeros(1, 1)]),
            &mut Rng::new(0),
            0,
        );
        assert!(matches!(res, Err(Error::Argument(_))));
    }

    #[test]
    fn non_finite_loss_is_a_numeric_error() {
        let mut params = vec![Tensor2::from_vec(1, 1, vec![1.0]).unwrap()];
        let res = finite_diff_check(
            &mut params,
            |_| Ok(f64::NAN),
            |_| Ok(vec![Tensor2::zeros(1, 1)]),
            &mut Rng::new(0),
            1,
        );
        assert!(matches!(res, Err(Error::Numeric(_))));
    }

    #[test]
    fn params_are_restored() {
        let mut params = vec![Tensor2::from_vec(1, 2, vec![0.5, -0.5]).unwrap()];
        let before = params[0].clone();
        finite_diff_check(
            &mut params,
            |ps| Ok(ps[0].as_slice().iter().map(|x| x * x).sum()),
            |ps| {
                let g: Vec<f64> = ps[0].as_slice().iter().map(|x| 2.0 * x).collect();
                Ok(vec![Tensor2::from_vec(1, 2, g)?])
            },
            &mut Rng::new(1),
            10,
        )
        .unwrap();
        assert!(params[0].bit_eq(&before));
    }
}
