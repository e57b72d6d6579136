use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{MaskStack, MeasurementSeries, ReconstructionResult, SensingOperator, SparseBasis, StopReason};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IstaParams {
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop once `‖c_{t+1} − c_t‖ ≤ step_tol · max(‖c_t‖, 1)`.
    pub step_tol: f64,
}

impl IstaParams {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            max_iters: 2000,
            step_tol: 1e-13,
        }
    }
}

const POWER_ITERS: usize = 30;
const POWER_TOL: f64 = 1e-8;

/// `½‖Ac − y‖² + λ‖c‖₁`
pub fn lasso_objective(a: ArrayView2<f64>, y: ArrayView1<f64>, c: ArrayView1<f64>, lambda: f64) -> f64 {
    let r = a.dot(&c) - y;
    0.5 * r.dot(&r) + lambda * c.iter().map(|v| v.abs()).sum::<f64>()
}

/// Estimate of `σ_max(A)²` by power iteration on `AᵀA`.
pub fn lipschitz_estimate(a: ArrayView2<f64>) -> f64 {
    let n = a.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(0x1575_a000);
    let mut v = Array1::from_shape_fn(n, |_| rng.gen::<f64>() - 0.5);
    let mut norm = v.dot(&v).sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    v /= norm;
    let mut est = 0.0;
    for _ in 0..POWER_ITERS {
        let w = a.t().dot(&a.dot(&v));
        norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let prev = est;
        est = norm;
        v = w / norm;
        if (est - prev).abs() <= POWER_TOL * est {
            break;
        }
    }
    est
}

fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

pub fn ista_reconstruct(
    y: &MeasurementSeries,
    stack: &MaskStack,
    basis: &SparseBasis,
    params: &IstaParams,
) -> Result<ReconstructionResult> {
    ista_with_matrix(stack.masks().view(), &y.y, basis, params)
}

pub fn ista_with_matrix(
    masks: ArrayView2<f64>,
    y: &[f64],
    basis: &SparseBasis,
    params: &IstaParams,
) -> Result<ReconstructionResult> {
    let op = SensingOperator::new(masks.view(), basis)?;
    let a = op.to_dense()?;
    let res = ista_dense(a.view(), ArrayView1::from(y), params)?;
    let x_hat = basis.inverse(res.coefficients.view())?;
    Ok(ReconstructionResult { x_hat, ..res })
}

/// Proximal gradient with step `1/L`.
///
/// `L` starts at the power-iteration estimate and doubles whenever the
/// quadratic upper bound fails at the candidate point, so each accepted step
/// satisfies the majorization inequality and the objective cannot rise.
pub fn ista_dense(a: ArrayView2<f64>, y: ArrayView1<f64>, params: &IstaParams) -> Result<ReconstructionResult> {
    let (m, n) = a.dim();
    if y.len() != m {
        return Err(Error::Dimension(format!("{} samples for {m} measurement rows", y.len())));
    }
    if !(params.lambda >= 0.0) || !params.lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be >= 0, got {}", params.lambda)));
    }
    if params.max_iters == 0 {
        return Err(Error::Config("max_iters must be >= 1".into()));
    }
    let lambda = params.lambda;
    let mut l = lipschitz_estimate(a);
    let mut c = Array1::<f64>::zeros(n);
    let mut history = Vec::new();
    let mut stop = StopReason::IterationLimit;
    let mut iterations = 0;

    if l == 0.0 {
        // A = 0: every c has the same data term; c = 0 minimizes the penalty.
        stop = StopReason::Converged;
    } else {
        let mut r = a.dot(&c) - y; // Ac − y
        let mut f_smooth = 0.5 * r.dot(&r);
        let mut obj = f_smooth;
        history.push(obj);
        'outer: for _ in 0..params.max_iters {
            let g = a.t().dot(&r);
            loop {
                let step = 1.0 / l;
                let cand = Array1::from_shape_fn(n, |j| soft(c[j] - step * g[j], lambda * step));
                let d = &cand - &c;
                let r_new = a.dot(&cand) - y;
                let f_new = 0.5 * r_new.dot(&r_new);
                let bound = f_smooth + g.dot(&d) + 0.5 * l * d.dot(&d);
                if f_new <= bound + 1e-12 * f_smooth.abs().max(f64::MIN_POSITIVE) {
                    let obj_new = f_new + lambda * cand.iter().map(|v| v.abs()).sum::<f64>();
                    let dn = d.dot(&d).sqrt();
                    let cn = c.dot(&c).sqrt();
                    if obj_new > obj {
                        // Rounding-level uphill move: keep the current point.
                        stop = StopReason::Converged;
                        break 'outer;
                    }
                    iterations += 1;
                    c = cand;
                    r = r_new;
                    f_smooth = f_new;
                    obj = obj_new;
                    history.push(obj);
                    if dn <= params.step_tol * cn.max(1.0) {
                        stop = StopReason::Converged;
                        break 'outer;
                    }
                    break;
                }
                l *= 2.0;
                if !l.is_finite() {
                    return Err(Error::Numeric("step size underflow in ISTA".into()));
                }
            }
        }
    }

    let r = a.dot(&c) - y;
    let support = c
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(j, _)| j)
        .collect();
    Ok(ReconstructionResult {
        x_hat: c.clone(),
        coefficients: c,
        support,
        residual_norm: r.dot(&r).sqrt(),
        iterations,
        stop_reason: stop,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand_distr::StandardNormal;

    fn gaussian(m: usize, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((m, n), |_| rng.sample(StandardNormal))
    }

    #[test]
    fn large_lambda_gives_null_solution() {
        let a = gaussian(15, 40, 1);
        let y = Array1::from_shape_fn(15, |i| (i as f64 * 0.7).cos());
        let thresh = a.t().dot(&y).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let res = ista_dense(a.view(), y.view(), &IstaParams::new(thresh)).unwrap();
        assert!(res.x_hat.iter().all(|&v| v == 0.0));
        // Zero beats small perturbations along every coordinate.
        let f0 = lasso_objective(a.view(), y.view(), res.x_hat.view(), thresh);
        for j in 0..40 {
            for eps in [1e-3, -1e-3] {
                let mut c = Array1::zeros(40);
                c[j] = eps;
                assert!(lasso_objective(a.view(), y.view(), c.view(), thresh) >= f0);
            }
        }
    }

    #[test]
    fn zero_lambda_matches_least_squares() {
        let (m, n) = (40, 12);
        let a = gaussian(m, n, 2);
        let y = Array1::from_shape_fn(m, |i| ((i * i) as f64 * 0.1).sin());
        let am = DMatrix::from_fn(m, n, |i, j| a[[i, j]]);
        let yv = DVector::from_fn(m, |i, _| y[i]);
        let ata = am.transpose() * &am;
        let aty = am.transpose() * yv;
        let ls = ata.cholesky().unwrap().solve(&aty);
        let params = IstaParams {
            max_iters: 20000,
            ..IstaParams::new(0.0)
        };
        let res = ista_dense(a.view(), y.view(), &params).unwrap();
        for j in 0..n {
            assert!((res.x_hat[j] - ls[j]).abs() < 1e-6, "{j}: {} vs {}", res.x_hat[j], ls[j]);
        }
    }

    #[test]
    fn rejects_negative_lambda_and_zero_iters() {
        let a = gaussian(4, 4, 3);
        let y = Array1::ones(4);
        assert!(ista_dense(a.view(), y.view(), &IstaParams::new(-1.0)).is_err());
        let p = IstaParams {
            max_iters: 0,
            ..IstaParams::new(0.1)
        };
        assert!(ista_dense(a.view(), y.view(), &p).is_err());
    }

    #[test]
    fn power_iteration_matches_spectral_norm() {
        let a = gaussian(20, 30, 4);
        let am = DMatrix::from_fn(20, 30, |i, j| a[[i, j]]);
        let s = am.singular_values().max();
        let est = lipschitz_estimate(a.view());
        assert!(est <= s * s * (1.0 + 1e-9));
        assert!(est > 0.9 * s * s);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn objective_never_increases(seed in any::<u64>(), lambda in 0.0f64..2.0) {
            let a = gaussian(12, 30, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xff);
            let y = Array1::from_shape_fn(12, |_| rng.sample::<f64, _>(StandardNormal));
            let params = IstaParams { max_iters: 300, ..IstaParams::new(lambda) };
            let res = ista_dense(a.view(), y.view(), &params).unwrap();
            for w in res.history.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
        }
    }
}
