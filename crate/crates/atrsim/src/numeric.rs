//! Small numerical helpers: logistic functions, piecewise-linear
//! interpolation and a dense Levenberg-Marquardt solver used by the
//! calibration fits.

use nalgebra::{DMatrix, DVector};

pub fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-60.0, 60.0);
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Linear interpolation over sorted knots, clamped at both ends.
pub fn interp(knots: &[(f64, f64)], x: f64) -> f64 {
    debug_assert!(!knots.is_empty());
    if x <= knots[0].0 {
        return knots[0].1;
    }
    if x >= knots[knots.len() - 1].0 {
        return knots[knots.len() - 1].1;
    }
    let idx = knots.partition_point(|&(k, _)| k <= x);
    let (x0, y0) = knots[idx - 1];
    let (x1, y1) = knots[idx];
    if x1 == x0 {
        return y0;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Result of a Levenberg-Marquardt run.
pub struct LmResult {
    pub params: Vec<f64>,
    pub residuals: Vec<f64>,
    pub converged: bool,
}

/// Dense Levenberg-Marquardt with forward-difference Jacobian.
///
/// `f` writes `n_resid` residuals for the given parameter vector.
pub fn levenberg_marquardt<F>(f: F, x0: &[f64], n_resid: usize, max_iter: usize) -> LmResult
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = vec![0.0; n_resid];
    f(&x, &mut r);
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = 1e-3;
    let mut converged = false;

    for _ in 0..max_iter {
        // Jacobian by forward differences.
        let mut jac = DMatrix::<f64>::zeros(n_resid, n);
        let mut rp = vec![0.0; n_resid];
        for j in 0..n {
            let h = 1e-6 * x[j].abs().max(1e-4);
            let mut xp = x.clone();
            xp[j] += h;
            f(&xp, &mut rp);
            for i in 0..n_resid {
                jac[(i, j)] = (rp[i] - r[i]) / h;
            }
        }
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * rv;

        let mut improved = false;
        for _ in 0..20 {
            let mut a = jtj.clone();
            for d in 0..n {
                a[(d, d)] += lambda * (jtj[(d, d)].abs().max(1e-12));
            }
            let Some(step) = a.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let xt: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let mut rt = vec![0.0; n_resid];
            f(&xt, &mut rt);
            let ct: f64 = rt.iter().map(|v| v * v).sum();
            if ct < cost {
                let rel = (cost - ct) / cost.max(1e-300);
                x = xt;
                r = rt;
                cost = ct;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel < 1e-12 || cost < 1e-24 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    LmResult {
        params: x,
        residuals: r,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn interp_clamps_and_interpolates() {
        let k = [(0.0, 1.0), (1.0, 3.0), (2.0, 3.0)];
        assert_eq!(interp(&k, -1.0), 1.0);
        assert_eq!(interp(&k, 5.0), 3.0);
        assert_relative_eq!(interp(&k, 0.5), 2.0);
    }

    #[test]
    fn lm_solves_exponential_fit() {
        // y = a * exp(b x) with a=2, b=-1.3
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 2.0 * (-1.3f64 * x).exp()).collect();
        let f = |p: &[f64], out: &mut [f64]| {
            for (i, (&x, &y)) in xs.iter().zip(&ys).enumerate() {
                out[i] = p[0] * (p[1] * x).exp() - y;
            }
        };
        let res = levenberg_marquardt(f, &[1.0, -0.5], xs.len(), 200);
        assert_relative_eq!(res.params[0], 2.0, max_relative = 1e-6);
        assert_relative_eq!(res.params[1], -1.3, max_relative = 1e-6);
    }
}
