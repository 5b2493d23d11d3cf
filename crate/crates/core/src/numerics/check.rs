use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the tape gradient of `f` at `x` with central differences and
/// returns the largest coordinatewise [`relative_error`].
pub fn finite_difference_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    finite_difference_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), eps)
}

/// Multi-input form of [`finite_difference_check`]: every tensor in `xs` is
/// perturbed coordinate by coordinate.
pub fn finite_difference_check_many<F>(f: F, xs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!(
            "finite-difference step {eps:e} outside [1e-7, 1e-3]"
        )));
    }

    let mut g = Graph::new();
    let vars: Vec<Var> = xs.iter().map(|x| g.param(x)).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(xs)
        // a parameter the loss never reaches has a zero gradient
        .map(|(&v, x)| g.grad(v).map_or_else(|| vec![0.0; x.len()], <[f64]>::to_vec))
        .collect();

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor> = xs.iter().map(Tensor::detached).collect();
    for (t, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = probe[t].values()[i];
            probe[t].values_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe[t].values_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe[t].values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_with_self_is_exact_enough() {
        let err = finite_difference_check(
            |g, x| {
                let y = g.mul(x, x)?;
                g.sum(y)
            },
            &Tensor::vector(vec![1.0, 2.0, 3.0]),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // detach hides half of the true derivative of x*x
        let err = finite_difference_check(
            |g, x| {
                let d = g.detach(x);
                let y = g.mul(x, d)?;
                g.sum(y)
            },
            &Tensor::vector(vec![1.0, 2.0]),
            1e-5,
        )
        .unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn rejects_step_out_of_range() {
        let r = finite_difference_check(|g, x| g.sum(x), &Tensor::scalar(1.0), 1e-2);
        assert!(r.is_err());
    }
}
