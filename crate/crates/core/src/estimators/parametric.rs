use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{CallCounter, EstimatorCheckpoint, SelectivityEstimator};
use crate::error::{Error, Result};
use crate::query::RangeQuery;
use crate::workload::Workload;

const RIDGE: f64 = 1e-8;

/// Least-squares polynomial over the flattened query encoding.
#[derive(Clone, Debug)]
pub struct ParametricEstimator {
    degree: usize,
    input_width: usize,
    monomials: Vec<Vec<usize>>,
    coefficients: Vec<f64>,
    calls: CallCounter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParametricState {
    pub degree: usize,
    pub input_width: usize,
    pub coefficients: Vec<f64>,
}

/// All multisets of input indices with size `<= degree`, constant term first.
fn monomials(width: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..degree {
        let mut next = Vec::new();
        for m in &frontier {
            let start = m.last().copied().unwrap_or(0);
            for i in start..width {
                let mut m2 = m.clone();
                m2.push(i);
                next.push(m2);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn features(monomials: &[Vec<usize>], x: &[f64], out: &mut Vec<f64>) {
    out.extend(monomials.iter().map(|m| m.iter().map(|&i| x[i]).product::<f64>()));
}

pub fn fit_parametric(train: &Workload, degree: usize) -> Result<ParametricEstimator> {
    let Some((first, _)) = train.items.first() else {
        return Err(Error::EmptyWorkload);
    };
    let width = 2 * first.dims();
    let monos = monomials(width, degree);
    let p = monos.len();
    let n = train.len();
    let mut x = Vec::with_capacity(n * p);
    for (q, _) in &train.items {
        q.check_dims(first.dims())?;
        features(&monos, &q.encode(), &mut x);
    }
    let x = Array2::from_shape_vec((n, p), x).unwrap();
    let y = Array1::from_iter(train.items.iter().map(|(_, s)| *s));
    let mut gram = x.t().dot(&x);
    for i in 0..p {
        gram[[i, i]] += RIDGE;
    }
    let rhs = x.t().dot(&y);
    let coefficients = cholesky_solve(gram, rhs.to_vec())?;
    Ok(ParametricEstimator {
        degree,
        input_width: width,
        monomials: monos,
        coefficients,
        calls: CallCounter::default(),
    })
}

/// Solve `A x = b` for symmetric positive definite `A`.
fn cholesky_solve(mut a: Array2<f64>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= a[[j, k]] * a[[j, k]];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::Config("normal equations are not positive definite".into()));
        }
        let diag = diag.sqrt();
        a[[j, j]] = diag;
        for i in j + 1..n {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = v / diag;
        }
    }
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= a[[i, k]] * b[k];
        }
        b[i] = v / a[[i, i]];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= a[[k, i]] * b[k];
        }
        b[i] = v / a[[i, i]];
    }
    Ok(b)
}

impl ParametricEstimator {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub(super) fn from_state(s: ParametricState) -> Result<Self> {
        let monos = monomials(s.input_width, s.degree);
        if monos.len() != s.coefficients.len() {
            return Err(Error::Config("parametric checkpoint has the wrong number of coefficients".into()));
        }
        Ok(ParametricEstimator {
            degree: s.degree,
            input_width: s.input_width,
            monomials: monos,
            coefficients: s.coefficients,
            calls: CallCounter::default(),
        })
    }
}

impl SelectivityEstimator for ParametricEstimator {
    fn name(&self) -> &str {
        "parametric"
    }

    fn estimate(&self, q: &RangeQuery) -> f64 {
        self.calls.add(1);
        let enc = q.encode();
        assert_eq!(enc.len(), self.input_width, "query dimensions match the model");
        let mut f = Vec::with_capacity(self.monomials.len());
        features(&self.monomials, &enc, &mut f);
        f.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }

    fn calls(&self) -> u64 {
        self.calls.get()
    }

    fn checkpoint(&self) -> Option<EstimatorCheckpoint> {
        Some(EstimatorCheckpoint::Parametric(ParametricState {
            degree: self.degree,
            input_width: self.input_width,
            coefficients: self.coefficients.clone(),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_gaussian, GaussianSpec};
    use crate::workload::{sample_workload, WorkloadSpec, WorkloadTag};

    fn rmse(est: &ParametricEstimator, wl: &Workload) -> f64 {
        (wl.items.iter().map(|(q, s)| (est.estimate(q) - s).powi(2)).sum::<f64>() / wl.len() as f64).sqrt()
    }

    fn unlabeled(n: usize) -> Workload {
        let spec = WorkloadSpec::uniform(3, n, 6);
        let items = spec.sample_queries(3).unwrap().into_iter().map(|q| (q, 0.0)).collect();
        Workload {
            items,
            spec,
            tag: WorkloadTag::Train,
        }
    }

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials(4, 0).len(), 1);
        assert_eq!(monomials(4, 1).len(), 5);
        assert_eq!(monomials(4, 2).len(), 15);
        assert_eq!(monomials(20, 2).len(), 231);
    }

    #[test]
    fn recovers_a_linear_function() {
        let mut wl = unlabeled(500);
        let w = [0.3, -0.2, 0.1, 0.05, -0.4, 0.25];
        for (q, s) in wl.items.iter_mut() {
            *s = 0.1 + q.encode().iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        }
        let est = fit_parametric(&wl, 1).unwrap();
        assert!(rmse(&est, &wl) < 1e-6);
    }

    #[test]
    fn constant_labels_give_constant_predictor() {
        let mut wl = unlabeled(200);
        wl.items.iter_mut().for_each(|(_, s)| *s = 0.5);
        let est = fit_parametric(&wl, 2).unwrap();
        for (q, _) in &wl.items {
            assert!((est.estimate(q) - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn quadratic_fits_better_than_linear() {
        let ds = generate_gaussian(&GaussianSpec {
            dims: 10,
            rows: 5_000,
            correlation: 0.8,
            seed: 2,
        })
        .unwrap();
        let wl = sample_workload(&WorkloadSpec::uniform(10, 2_000, 3), &ds, WorkloadTag::Train).unwrap();
        let lin = fit_parametric(&wl, 1).unwrap();
        let quad = fit_parametric(&wl, 2).unwrap();
        assert!(rmse(&quad, &wl) < rmse(&lin, &wl));
    }

    #[test]
    fn empty_workload_is_an_error() {
        let wl = unlabeled(0);
        assert!(matches!(fit_parametric(&wl, 1), Err(Error::EmptyWorkload)));
    }
}
