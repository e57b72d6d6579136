use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{MaskStack, MeasurementSeries, ReconstructionResult, SensingOperator, SparseBasis, StopReason};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OmpParams {
    /// Maximum support size, seeded atoms included.
    pub k_max: usize,
    /// Residual threshold. `None` means `1e-6 · ‖y‖`.
    pub tol: Option<f64>,
    /// Put the basis' constant atom in the support before the greedy loop.
    ///
    /// Caustic masks share a strong common pattern, so the raw columns are
    /// highly coherent. With the constant atom fixed first, selection scores
    /// each column by its norm after projecting out the seeded span, which is
    /// the same as working with mean-removed measurements.
    pub seed_dc: bool,
}

impl OmpParams {
    pub fn new(k_max: usize) -> Self {
        Self {
            k_max,
            tol: None,
            seed_dc: false,
        }
    }
}

/// Below this fraction of its original norm an incoming column counts as
/// dependent on the active set.
const RANK_TOL: f64 = 1e-10;

/// OMP on `A = masks · Ψ⁻¹` for a validated mask stack.
pub fn omp_reconstruct(
    y: &MeasurementSeries,
    stack: &MaskStack,
    basis: &SparseBasis,
    params: &OmpParams,
) -> Result<ReconstructionResult> {
    omp_with_matrix(stack.masks().view(), &y.y, basis, params)
}

/// OMP against an arbitrary sampling matrix (rows need not be masks).
pub fn omp_with_matrix(
    masks: ArrayView2<f64>,
    y: &[f64],
    basis: &SparseBasis,
    params: &OmpParams,
) -> Result<ReconstructionResult> {
    let op = SensingOperator::new(masks.view(), basis)?;
    let a = op.to_dense()?;
    let seeds: Vec<usize> = if params.seed_dc {
        basis.dc_atom().into_iter().collect()
    } else {
        Vec::new()
    };
    let coeffs = omp_dense(a.view(), ArrayView1::from(y), params, &seeds)?;
    let x_hat = basis.inverse(coeffs.coefficients.view())?;
    Ok(ReconstructionResult { x_hat, ..coeffs })
}

/// Core solver. Returns a result whose `x_hat` equals the coefficients.
pub fn omp_dense(
    a: ArrayView2<f64>,
    y: ArrayView1<f64>,
    params: &OmpParams,
    seeds: &[usize],
) -> Result<ReconstructionResult> {
    let (m, n) = a.dim();
    if y.len() != m {
        return Err(Error::Dimension(format!("{} samples for {m} measurement rows", y.len())));
    }
    if params.k_max == 0 || params.k_max > m {
        return Err(Error::Config(format!(
            "k_max must be in 1..={m}, got {}",
            params.k_max
        )));
    }
    if seeds.len() > params.k_max {
        return Err(Error::Config("more seeded atoms than k_max".into()));
    }
    if let Some(&j) = seeds.iter().find(|&&j| j >= n) {
        return Err(Error::Dimension(format!("seed atom {j} outside {n} columns")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("measurements contain non-finite values".into()));
    }
    let y_norm = y.dot(&y).sqrt();
    let tol = params.tol.unwrap_or(1e-6 * y_norm);
    if !(tol >= 0.0) {
        return Err(Error::Config(format!("tol must be >= 0, got {tol}")));
    }

    let col_norms: Vec<f64> = a.axis_iter(Axis(1)).map(|c| c.dot(&c).sqrt()).collect();

    // Orthonormal basis of the active span, plus the triangular factor.
    let k_cap = params.k_max;
    let mut q = Array2::<f64>::zeros((m, k_cap));
    let mut r = Array2::<f64>::zeros((k_cap, k_cap));
    let mut support: Vec<usize> = Vec::with_capacity(k_cap);
    let mut in_support = vec![false; n];
    let mut residual = y.to_owned();
    let mut history = Vec::with_capacity(k_cap);
    let stop;

    let add_atom = |j: usize,
                        q: &mut Array2<f64>,
                        r: &mut Array2<f64>,
                        support: &mut Vec<usize>,
                        residual: &mut Array1<f64>|
     -> bool {
        let k = support.len();
        let col = a.column(j);
        let mut v = col.to_owned();
        let mut proj = Array1::<f64>::zeros(k);
        // Two passes of modified Gram-Schmidt.
        for _ in 0..2 {
            for i in 0..k {
                let qi = q.column(i);
                let c = qi.dot(&v);
                proj[i] += c;
                v.scaled_add(-c, &qi);
            }
        }
        let norm = v.dot(&v).sqrt();
        if norm <= RANK_TOL * col_norms[j] || norm == 0.0 {
            return false;
        }
        v /= norm;
        r.slice_mut(s![..k, k]).assign(&proj);
        r[[k, k]] = norm;
        let c = v.dot(residual);
        residual.scaled_add(-c, &v);
        q.column_mut(k).assign(&v);
        support.push(j);
        true
    };

    for &j in seeds {
        if in_support[j] {
            continue;
        }
        if !add_atom(j, &mut q, &mut r, &mut support, &mut residual) {
            return Err(Error::Numeric(format!("seed atom {j} is zero or dependent")));
        }
        in_support[j] = true;
        history.push(residual.dot(&residual).sqrt());
    }

    // Selection weights: column norms outside the seeded span.
    let n_seed = support.len();
    let weights: Vec<f64> = if n_seed == 0 {
        col_norms.clone()
    } else {
        let qs = q.slice(s![.., ..n_seed]);
        let proj = qs.t().dot(&a);
        (0..n)
            .map(|j| {
                let p = proj.column(j);
                (col_norms[j].powi(2) - p.dot(&p)).max(0.0).sqrt()
            })
            .collect()
    };
    let scale = weights.iter().cloned().fold(0.0, f64::max);

    let mut res_norm = residual.dot(&residual).sqrt();
    loop {
        if res_norm <= tol {
            stop = StopReason::ToleranceReached;
            break;
        }
        if support.len() >= k_cap {
            stop = StopReason::AtomLimit;
            break;
        }
        let corr = a.t().dot(&residual);
        let mut best: Option<(usize, f64)> = None;
        for (j, c) in corr.iter().enumerate() {
            let w = weights[j];
            if in_support[j] || w <= RANK_TOL * scale {
                continue;
            }
            let score = c.abs() / w;
            if best.map_or(true, |(_, b)| score > b) {
                best = Some((j, score));
            }
        }
        let Some((j, score)) = best else {
            stop = StopReason::NoCorrelation;
            break;
        };
        if score <= 1e-14 * res_norm.max(f64::MIN_POSITIVE) {
            stop = StopReason::NoCorrelation;
            break;
        }
        if !add_atom(j, &mut q, &mut r, &mut support, &mut residual) {
            stop = StopReason::RankDeficient;
            break;
        }
        in_support[j] = true;
        res_norm = residual.dot(&residual).sqrt();
        history.push(res_norm);
    }

    // Back-substitute R z = Qᵀ y on the active set.
    let k = support.len();
    let rhs = q.slice(s![.., ..k]).t().dot(&y);
    let mut z = vec![0.0; k];
    for i in (0..k).rev() {
        let mut acc = rhs[i];
        for (l, zl) in z.iter().enumerate().skip(i + 1) {
            acc -= r[[i, l]] * zl;
        }
        z[i] = acc / r[[i, i]];
    }
    let mut coefficients = Array1::zeros(n);
    for (&j, &v) in support.iter().zip(&z) {
        coefficients[j] = v;
    }
    if coefficients.iter().any(|v: &f64| !v.is_finite()) {
        return Err(Error::Numeric("OMP produced non-finite coefficients".into()));
    }
    let fitted = a.dot(&coefficients);
    let residual_norm = (&y - &fitted).mapv(|v| v * v).sum().sqrt();

    Ok(ReconstructionResult {
        x_hat: coefficients.clone(),
        coefficients,
        iterations: support.len(),
        support,
        residual_norm,
        stop_reason: stop,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cs::{acquire, relative_error, MaskStack};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(m: usize, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((m, n), |_| rng.sample(StandardNormal))
    }

    #[test]
    fn identity_masks_return_measurements() {
        let n = 16;
        let basis = SparseBasis::identity(n);
        let mut y = vec![0.0; n];
        y[2] = 0.7;
        y[9] = -1.5;
        y[13] = 0.25;
        let res = omp_with_matrix(Array2::eye(n).view(), &y, &basis, &OmpParams::new(n)).unwrap();
        assert_eq!(res.x_hat.to_vec(), y);
        assert_eq!(res.iterations, 3);
        assert_eq!(res.stop_reason, StopReason::ToleranceReached);
    }

    #[test]
    fn one_atom_matches_exhaustive_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for trial in 0..10 {
            let a = gaussian(20, 64, &mut rng);
            let mut x = Array1::zeros(64);
            x[(trial * 7) % 64] = 1.0 + trial as f64;
            let y = a.dot(&x);
            // Exhaustive: best single column by residual after LS fit.
            let mut best = (usize::MAX, f64::INFINITY, 0.0);
            for j in 0..64 {
                let c = a.column(j);
                let v = c.dot(&y) / c.dot(&c);
                let r = (&y - &c.mapv(|t| t * v)).mapv(|t| t * t).sum();
                if r < best.1 {
                    best = (j, r, v);
                }
            }
            let res = omp_dense(a.view(), y.view(), &OmpParams::new(1), &[]).unwrap();
            assert_eq!(res.support, vec![best.0]);
            assert!((res.coefficients[best.0] - best.2).abs() < 1e-10);
        }
    }

    #[test]
    fn planted_sparse_dct_recovery() {
        let (side, m, k) = (16, 80, 5);
        let basis = SparseBasis::dct2d(side, side);
        let mut ok = 0;
        for trial in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
            let phi = gaussian(m, side * side, &mut rng);
            let mut c = Array1::<f64>::zeros(side * side);
            let mut placed = 0;
            while placed < k {
                let j = rng.gen_range(0..side * side);
                if c[j] == 0.0 {
                    c[j] = rng.gen_range(1.0..2.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    placed += 1;
                }
            }
            let x = basis.inverse(c.view()).unwrap();
            let y = phi.dot(&x);
            let res = omp_with_matrix(phi.view(), y.as_slice().unwrap(), &basis, &OmpParams::new(k)).unwrap();
            if relative_error(res.x_hat.view(), x.view()) < 1e-6 {
                ok += 1;
            }
        }
        assert!(ok >= 95, "recovered {ok}/100");
    }

    #[test]
    fn zero_measurements_give_zero_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = gaussian(10, 30, &mut rng);
        let res = omp_dense(a.view(), Array1::zeros(10).view(), &OmpParams::new(5), &[]).unwrap();
        assert!(res.x_hat.iter().all(|&v| v == 0.0));
        assert_eq!(res.iterations, 0);
    }

    #[test]
    fn duplicate_columns_stop_as_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = gaussian(6, 4, &mut rng);
        let c0 = a.column(0).to_owned();
        a.column_mut(1).assign(&c0);
        // Target needs both columns 0 and 1 pulled apart.
        let y = &c0 * 2.0 + &a.column(2) * 1e-3;
        let res = omp_dense(a.view(), y.view(), &OmpParams::new(3), &[]).unwrap();
        assert!(res.residual_norm.is_finite());
        assert!(!res.support.contains(&0) || !res.support.contains(&1));
    }

    #[test]
    fn rejects_bad_parameters() {
        let a = Array2::<f64>::eye(4);
        let y = Array1::ones(4);
        assert!(omp_dense(a.view(), y.view(), &OmpParams::new(5), &[]).is_err());
        assert!(omp_dense(a.view(), y.view(), &OmpParams::new(0), &[]).is_err());
        assert!(omp_dense(a.view(), Array1::ones(3).view(), &OmpParams::new(2), &[]).is_err());
    }

    #[test]
    fn dc_seed_sits_first_in_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (side, m) = (8, 40);
        let mut masks = Array2::from_shape_fn((m, side * side), |_| rng.gen::<f64>());
        for mut row in masks.outer_iter_mut() {
            let mean = row.mean().unwrap();
            row.mapv_inplace(|v| v / mean);
        }
        let stack = MaskStack::new(masks, vec![0.0; m], (side, side)).unwrap();
        let x = Array2::from_shape_fn((side, side), |(i, _)| if i < 4 { 1.0 } else { 0.2 });
        let y = acquire(&stack, &x, 0.0, 0).unwrap();
        let basis = SparseBasis::dct2d(side, side);
        let params = OmpParams {
            seed_dc: true,
            ..OmpParams::new(10)
        };
        let res = omp_reconstruct(&y, &stack, &basis, &params).unwrap();
        assert_eq!(res.support[0], 0);
        let err = relative_error(res.x_hat.view(), Array1::from_iter(x.iter().copied()).view());
        assert!(err < 1e-6, "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn residuals_strictly_decrease(seed in any::<u64>(), k in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = gaussian(24, 48, &mut rng);
            let y = Array1::from_shape_fn(24, |_| rng.sample::<f64, _>(StandardNormal));
            let res = omp_dense(a.view(), y.view(), &OmpParams::new(k), &[]).unwrap();
            let mut prev = y.dot(&y).sqrt();
            for &h in &res.history {
                prop_assert!(h < prev);
                prev = h;
            }
            prop_assert!(res.residual_norm >= 0.0);
        }
    }
}
