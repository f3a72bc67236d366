//! Central finite-difference verification of taped gradients.

use super::{Tape, Tensor, TensorError, Var};

/// Result of comparing analytic and numeric gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |analytic − numeric| / max(|analytic|, |numeric|, 1e-8)` over
    /// every coordinate of every input.
    pub max_relative_error: f64,
    /// Input index and flat coordinate where the maximum occurred.
    pub worst: Option<(usize, usize)>,
    pub analytic: Vec<Tensor<f64>>,
}

fn relative_error(a: f64, n: f64) -> f64 {
    if a.is_nan() || n.is_nan() {
        return f64::INFINITY;
    }
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares the gradient of a scalar function obtained by [`Tape::backward`]
/// with `(f(x+ε) − f(x−ε)) / 2ε` at every coordinate of `point`.
///
/// `f` receives a fresh tape and one trainable leaf per input. A constant
/// function (whose root is not attached to any input) has zero analytic
/// gradient.
pub fn grad_check<F>(f: F, point: &[Tensor<f64>], epsilon: f64) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |inputs: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars = inputs
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let root = f(&mut tape, &vars)?;
        tape.value(root).item().ok_or(TensorError::NonScalarRoot {
            shape: tape.value(root).shape().to_vec(),
        })
    };

    let mut tape = Tape::new();
    let vars = point
        .iter()
        .map(|t| tape.param(t.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let root = f(&mut tape, &vars)?;
    let analytic: Vec<Tensor<f64>> = if tape.requires_grad(root) {
        tape.backward(root)?;
        vars.iter()
            .zip(point)
            .map(|(&v, p)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect()
    } else {
        point.iter().map(|p| Tensor::zeros(p.shape())).collect()
    };

    let mut worst = None;
    let mut max_err = 0.0_f64;
    let mut probe = point.to_vec();
    for (i, p) in point.iter().enumerate() {
        for j in 0..p.len() {
            let orig = p.data()[j];
            probe[i].data_mut()[j] = orig + epsilon;
            let up = eval(&probe);
            probe[i].data_mut()[j] = orig - epsilon;
            let down = eval(&probe);
            probe[i].data_mut()[j] = orig;
            let numeric = match (up, down) {
                (Ok(u), Ok(d)) => (u - d) / (2.0 * epsilon),
                _ => f64::NAN,
            };
            let err = relative_error(analytic[i].data()[j], numeric);
            if err > max_err || worst.is_none() {
                max_err = max_err.max(err);
                worst = Some((i, j));
            }
        }
    }
    Ok(GradCheck {
        max_relative_error: max_err,
        worst,
        analytic,
    })
}

/// Draws points from `sample` until one lies at least `min_margin` away from
/// every ReLU and max-pool kink of `f` (see [`Tape::kink_margin`]).
pub fn sample_smooth_point<F, G>(
    f: &F,
    mut sample: G,
    min_margin: f64,
    max_tries: usize,
) -> Option<Vec<Tensor<f64>>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
    G: FnMut() -> Vec<Tensor<f64>>,
{
    for _ in 0..max_tries {
        let point = sample();
        let mut tape = Tape::new();
        let Ok(vars) = point
            .iter()
            .map(|t| tape.param(t.clone()))
            .collect::<Result<Vec<_>, _>>()
        else {
            continue;
        };
        if f(&mut tape, &vars).is_ok() && tape.kink_margin() >= min_margin {
            return Some(point);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_matches_polynomial_gradient() {
        let x = Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap();
        let r = grad_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                t.sum(sq)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert_eq!(r.analytic[0].data(), &[2.0, 4.0, 6.0]);
        assert!(r.max_relative_error < 1e-7, "{}", r.max_relative_error);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::from_f64(&[2], &[0.3, -0.7]).unwrap();
        let r = grad_check(|t, _| t.constant(Tensor::scalar(4.0)), &[x], 1e-5).unwrap();
        assert_eq!(r.max_relative_error, 0.0);
        assert!(r.analytic[0].data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn nan_on_either_side_reports_infinity() {
        assert_eq!(relative_error(f64::NAN, 1.0), f64::INFINITY);
        assert_eq!(relative_error(1.0, f64::NAN), f64::INFINITY);
    }

    #[test]
    fn domain_error_in_numeric_probe_is_infinite() {
        // log(x) at x = 1e-6 with ε = 1e-5 steps outside the domain.
        let x = Tensor::from_f64(&[1], &[1e-6]).unwrap();
        let r = grad_check(
            |t, v| {
                let l = t.log(v[0])?;
                t.sum(l)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert_eq!(r.max_relative_error, f64::INFINITY);
    }
}
