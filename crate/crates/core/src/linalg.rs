//! Dense linear-algebra helpers shared by the outcome models.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Cholesky factorisation with a single diagonal jitter of `1e-10 * trace / n`
/// on failure.
pub fn cholesky_jittered(mut m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("{what}: non-finite matrix entry")));
    }
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows().max(1);
    let jitter = 1e-10 * m.trace().abs() / n as f64;
    for i in 0..m.nrows() {
        m[(i, i)] += jitter;
    }
    Cholesky::new(m).ok_or_else(|| {
        Error::Numerical(format!("{what}: matrix is not positive definite after jitter {jitter:e}"))
    })
}

/// `ln |A|` from a Cholesky factor of `A`.
pub fn ln_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Log density of a multivariate t with `dof` degrees of freedom and shape
/// matrix `shape`, evaluated at `dev = y - location`.
pub fn ln_mvt_density(dev: &DVector<f64>, shape: DMatrix<f64>, dof: f64, what: &str) -> Result<f64> {
    let n = dev.len() as f64;
    let chol = cholesky_jittered(shape.clone(), what)?;
    // one step of iterative refinement on shape⁻¹ dev; the shape matrices met
    // here can be badly conditioned
    let mut sol = chol.solve(dev);
    let resid = dev - &shape * &sol;
    sol += chol.solve(&resid);
    let quad = dev.dot(&sol);
    if !(quad.is_finite() && quad >= 0.0) {
        return Err(Error::Numerical(format!("{what}: quadratic form is {quad}")));
    }
    Ok(ln_gamma(0.5 * (dof + n)) - ln_gamma(0.5 * dof)
        - 0.5 * n * (dof * std::f64::consts::PI).ln()
        - 0.5 * ln_det(&chol)
        - 0.5 * (dof + n) * (quad / dof).ln_1p())
}

/// Indices of columns that lie (numerically) in the span of earlier columns.
pub fn dependent_columns(d: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..d.ncols() {
        let col = d.column(j).into_owned();
        let norm = col.norm();
        let mut resid = col.clone();
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&resid);
                resid.axpy(-proj, q, 1.0);
            }
        }
        let rn = resid.norm();
        if norm == 0.0 || rn <= 1e-9 * norm {
            dependent.push(j);
        } else {
            basis.push(resid / rn);
        }
    }
    dependent
}

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coef: DVector<f64>,
    pub rss: f64,
    /// Residual variance `rss / (n - d)`.
    pub sigma2: f64,
}

/// Ordinary least squares of `y` on `d` through the normal equations.
pub fn least_squares(d: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<LeastSquares> {
    let (n, p) = d.shape();
    if n <= p {
        return Err(Error::invalid(format!(
            "least squares needs more rows than columns (n = {n}, d = {p})"
        )));
    }
    let dep = dependent_columns(d);
    if !dep.is_empty() {
        let columns = dep
            .iter()
            .map(|&j| names.get(j).cloned().unwrap_or_else(|| format!("#{j}")))
            .collect();
        return Err(Error::SingularDesign { columns });
    }
    let gram = d.tr_mul(d);
    let chol = cholesky_jittered(gram, "least-squares normal equations")?;
    let coef = chol.solve(&d.tr_mul(y));
    let resid = y - d * &coef;
    let rss = resid.norm_squared();
    Ok(LeastSquares {
        coef,
        rss,
        sigma2: rss / (n - p) as f64,
    })
}

/// `ln(mean(exp(values)))`, stable for widely spread inputs.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NEG_INFINITY;
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + (s / values.len() as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mvt_univariate_matches_closed_form() {
        // t_5 with scale^2 = 1.2 at 0
        let v: f64 = 5.0;
        let s2 = 1.2;
        let expect = ln_gamma(3.0) - ln_gamma(2.5) - 0.5 * (v * std::f64::consts::PI * s2).ln();
        let got = ln_mvt_density(&DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, s2), v, "t")
            .unwrap();
        assert!((got - expect).abs() < 1e-13);
    }

    #[test]
    fn dependent_columns_found() {
        let d = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 3.0, 1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 5.0, 6.0]);
        assert_eq!(dependent_columns(&d), vec![2]);
        let names = vec!["a".into(), "b".into(), "c".into()];
        match least_squares(&d, &DVector::from_element(4, 1.0), &names) {
            Err(Error::SingularDesign { columns }) => assert_eq!(columns, vec!["c".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn log_mean_exp_is_stable() {
        let v = [1000.0, 1000.0 + 2f64.ln()];
        assert!((log_mean_exp(&v) - (1000.0 + 1.5f64.ln())).abs() < 1e-12);
        assert_eq!(log_mean_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(cholesky_jittered(m, "psd").is_ok());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(cholesky_jittered(bad, "indef"), Err(Error::Numerical(_))));
    }
}
