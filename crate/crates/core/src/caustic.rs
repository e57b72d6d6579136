//! Caustic sampling masks.
//!
//! A collimated beam travelling straight down hits the rippled surface, is
//! refracted once (vector Snell's law) and travels to a flat target plane a
//! fixed depth below the mean surface. Landing points are splatted onto the
//! mask grid with bilinear weights, and the result is scaled to unit mean.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ripple::HeightField;

pub type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Splat {
    Bilinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpticsConfig {
    /// Refractive index of the incident medium over that of the liquid.
    pub n_rel: f64,
    /// Distance (m) from the mean surface down to the target plane.
    pub depth: f64,
    pub mask_nx: usize,
    pub mask_ny: usize,
    /// Rays launched per surface cell; must be a perfect square.
    pub rays_per_cell: usize,
    pub splat: Splat,
}

impl Default for OpticsConfig {
    fn default() -> Self {
        Self {
            n_rel: 1.0 / 1.33,
            depth: 1.0,
            mask_nx: 64,
            mask_ny: 64,
            rays_per_cell: 1,
            splat: Splat::Bilinear,
        }
    }
}

impl OpticsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_rel > 0.0) || !(self.depth > 0.0) {
            return Err(Error::Config("optics n_rel and depth must be positive".into()));
        }
        if self.mask_nx < 8 || self.mask_ny < 8 {
            return Err(Error::Config(format!(
                "mask must be at least 8x8, got {}x{}",
                self.mask_nx, self.mask_ny
            )));
        }
        let side = (self.rays_per_cell as f64).sqrt().round() as usize;
        if self.rays_per_cell == 0 || side * side != self.rays_per_cell {
            return Err(Error::Config(format!(
                "rays_per_cell must be a positive perfect square, got {}",
                self.rays_per_cell
            )));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.mask_nx * self.mask_ny
    }
}

/// One sampling mask: non-negative intensity with unit mean.
#[derive(Debug, Clone, PartialEq)]
pub struct CausticMask {
    /// Indexed `[[ix, iy]]` on the target plane.
    pub intensity: Array2<f64>,
    pub frame_index: u64,
}

/// Unit surface normals `(−∂h/∂x, −∂h/∂y, 1)/‖·‖`, central differences
/// inside the grid and one-sided differences on the border.
pub fn surface_normals(field: &HeightField) -> Array2<Vec3> {
    let (gx, gy) = gradients(field);
    Array2::from_shape_fn(field.h.dim(), |idx| normalize([-gx[idx], -gy[idx], 1.0]))
}

fn gradients(field: &HeightField) -> (Array2<f64>, Array2<f64>) {
    let h = &field.h;
    let (nx, ny) = h.dim();
    let dx = field.dx;
    let diff = |lo: f64, hi: f64, span: usize| (hi - lo) / (span as f64 * dx);
    let gx = Array2::from_shape_fn((nx, ny), |(i, j)| {
        if nx < 2 {
            0.0
        } else if i == 0 {
            diff(h[[0, j]], h[[1, j]], 1)
        } else if i == nx - 1 {
            diff(h[[nx - 2, j]], h[[nx - 1, j]], 1)
        } else {
            diff(h[[i - 1, j]], h[[i + 1, j]], 2)
        }
    });
    let gy = Array2::from_shape_fn((nx, ny), |(i, j)| {
        if ny < 2 {
            0.0
        } else if j == 0 {
            diff(h[[i, 0]], h[[i, 1]], 1)
        } else if j == ny - 1 {
            diff(h[[i, ny - 2]], h[[i, ny - 1]], 1)
        } else {
            diff(h[[i, j - 1]], h[[i, j + 1]], 2)
        }
    });
    (gx, gy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Refraction {
    Transmitted(Vec3),
    TotalInternalReflection,
}

/// Vector form of Snell's law for a unit `incident` direction hitting a
/// surface with unit `normal` (pointing back toward the incident side).
pub fn refract(incident: Vec3, normal: Vec3, n_rel: f64) -> Result<Refraction> {
    for (name, v) in [("incident", incident), ("normal", normal)] {
        let len = norm(v);
        if !((len - 1.0).abs() <= UNIT_TOLERANCE) {
            return Err(Error::Data(format!("{name} direction is not unit length (|v| = {len})")));
        }
    }
    let cos_i = -dot(incident, normal);
    if !(cos_i > 0.0) {
        return Err(Error::Data("incident ray does not hit the front of the surface".into()));
    }
    let radicand = 1.0 - n_rel * n_rel * (1.0 - cos_i * cos_i);
    if radicand < 0.0 {
        return Ok(Refraction::TotalInternalReflection);
    }
    let cos_t = radicand.sqrt();
    let k = n_rel * cos_i - cos_t;
    Ok(Refraction::Transmitted([
        n_rel * incident[0] + k * normal[0],
        n_rel * incident[1] + k * normal[1],
        n_rel * incident[2] + k * normal[2],
    ]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Landing {
    At([f64; 2]),
    Reflected,
    /// Refracted upward, or the surface sits below the target plane.
    Missed,
}

/// Where a vertical ray entering the surface at `pos` (height `h`, slope
/// `(∂h/∂x, ∂h/∂y)`) meets the target plane.
pub fn land(pos: [f64; 2], h: f64, slope: [f64; 2], optics: &OpticsConfig) -> Result<Landing> {
    let normal = normalize([-slope[0], -slope[1], 1.0]);
    let dir = match refract([0.0, 0.0, -1.0], normal, optics.n_rel)? {
        Refraction::Transmitted(t) => t,
        Refraction::TotalInternalReflection => return Ok(Landing::Reflected),
    };
    if !(dir[2] < 0.0) {
        return Ok(Landing::Missed);
    }
    let travel = (optics.depth + h) / -dir[2];
    if !(travel >= 0.0) {
        return Ok(Landing::Missed);
    }
    Ok(Landing::At([pos[0] + travel * dir[0], pos[1] + travel * dir[1]]))
}

/// Un-normalized splat of one height field.
#[derive(Debug, Clone)]
pub struct RaySplat {
    pub weights: Array2<f64>,
    pub rays_launched: usize,
    /// Rays whose landing point lies inside the target plane.
    pub rays_landed: usize,
    pub rays_reflected: usize,
}

/// Trace every ray to the target plane and accumulate bilinear weights.
///
/// The target plane spans the same physical extent as the tank. A ray that
/// lands inside the plane deposits exactly unit weight: bilinear neighbours
/// falling off the grid are folded onto the nearest edge cell.
pub fn splat_rays(field: &HeightField, optics: &OpticsConfig) -> Result<RaySplat> {
    optics.validate()?;
    if field.h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("height field contains non-finite values".into()));
    }
    let (nx, ny) = field.dims();
    if nx < 3 || ny < 3 {
        return Err(Error::Dimension(format!("height field {nx}x{ny} is smaller than 3x3")));
    }
    let dx = field.dx;
    let extent = [nx as f64 * dx, ny as f64 * dx];
    let pitch = [extent[0] / optics.mask_nx as f64, extent[1] / optics.mask_ny as f64];
    let (gx, gy) = gradients(field);
    let sub = (optics.rays_per_cell as f64).sqrt().round() as usize;

    let mut weights = Array2::<f64>::zeros((optics.mask_nx, optics.mask_ny));
    let mut landed = 0;
    let mut reflected = 0;
    let mut launched = 0;

    for i in 0..nx {
        for j in 0..ny {
            for a in 0..sub {
                for b in 0..sub {
                    launched += 1;
                    // Position in cell units; cell centers sit at k + 0.5.
                    let u = i as f64 + (a as f64 + 0.5) / sub as f64;
                    let v = j as f64 + (b as f64 + 0.5) / sub as f64;
                    let (h, hx, hy) = if sub == 1 {
                        (field.h[[i, j]], gx[[i, j]], gy[[i, j]])
                    } else {
                        (
                            sample_bilinear(&field.h, u - 0.5, v - 0.5),
                            sample_bilinear(&gx, u - 0.5, v - 0.5),
                            sample_bilinear(&gy, u - 0.5, v - 0.5),
                        )
                    };
                    let [x, y] = match land([u * dx, v * dx], h, [hx, hy], optics)? {
                        Landing::At(p) => p,
                        Landing::Reflected => {
                            reflected += 1;
                            continue;
                        }
                        Landing::Missed => continue,
                    };
                    if !(0.0..=extent[0]).contains(&x) || !(0.0..=extent[1]).contains(&y) {
                        continue;
                    }
                    landed += 1;
                    deposit(&mut weights, x / pitch[0] - 0.5, y / pitch[1] - 0.5);
                }
            }
        }
    }
    Ok(RaySplat {
        weights,
        rays_launched: launched,
        rays_landed: landed,
        rays_reflected: reflected,
    })
}

fn deposit(grid: &mut Array2<f64>, u: f64, v: f64) {
    let (nx, ny) = grid.dim();
    let (i0, fu) = (u.floor(), u - u.floor());
    let (j0, fv) = (v.floor(), v - v.floor());
    let clamp = |k: f64, n: usize| (k.max(0.0) as usize).min(n - 1);
    let (ia, ib) = (clamp(i0, nx), clamp(i0 + 1.0, nx));
    let (ja, jb) = (clamp(j0, ny), clamp(j0 + 1.0, ny));
    grid[[ia, ja]] += (1.0 - fu) * (1.0 - fv);
    grid[[ib, ja]] += fu * (1.0 - fv);
    grid[[ia, jb]] += (1.0 - fu) * fv;
    grid[[ib, jb]] += fu * fv;
}

/// Bilinear sample at fractional index `(u, v)`, clamped to the grid.
fn sample_bilinear(grid: &Array2<f64>, u: f64, v: f64) -> f64 {
    let (nx, ny) = grid.dim();
    let u = u.clamp(0.0, (nx - 1) as f64);
    let v = v.clamp(0.0, (ny - 1) as f64);
    let (i0, j0) = (u.floor() as usize, v.floor() as usize);
    let (i1, j1) = ((i0 + 1).min(nx - 1), (j0 + 1).min(ny - 1));
    let (fu, fv) = (u - i0 as f64, v - j0 as f64);
    grid[[i0, j0]] * (1.0 - fu) * (1.0 - fv)
        + grid[[i1, j0]] * fu * (1.0 - fv)
        + grid[[i0, j1]] * (1.0 - fu) * fv
        + grid[[i1, j1]] * fu * fv
}

/// Project one height field to a unit-mean caustic mask.
pub fn project_mask(field: &HeightField, optics: &OpticsConfig, frame_index: u64) -> Result<CausticMask> {
    let splat = splat_rays(field, optics)?;
    let mean = splat.weights.mean().unwrap_or(0.0);
    if !(mean > 0.0) {
        return Err(Error::Numeric(format!(
            "caustic mask for frame {frame_index} is empty: all {} rays left the target plane",
            splat.rays_launched
        )));
    }
    Ok(CausticMask {
        intensity: splat.weights / mean,
        frame_index,
    })
}

/// Pearson correlation between two masks.
pub fn normalized_correlation(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let (p, q) = (x - ma, y - mb);
        sab += p * q;
        saa += p * p;
        sbb += q * q;
    }
    if saa == 0.0 || sbb == 0.0 {
        return if saa == sbb { 1.0 } else { 0.0 };
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ripple::HeightField;

    fn field_from(nx: usize, ny: usize, dx: f64, f: impl Fn(f64, f64) -> f64) -> HeightField {
        let mut hf = HeightField::zeros(nx, ny, dx, 0.0);
        for ((i, j), v) in hf.h.indexed_iter_mut() {
            *v = f((i as f64 + 0.5) * dx, (j as f64 + 0.5) * dx);
        }
        hf
    }

    #[test]
    fn flat_normals_point_up() {
        let f = HeightField::zeros(10, 12, 0.01, 0.0);
        assert!(surface_normals(&f).iter().all(|n| *n == [0.0, 0.0, 1.0]));
    }

    #[test]
    fn tilted_plane_normals() {
        let alpha = 0.07;
        let f = field_from(12, 9, 0.003, |x, _| alpha * x);
        let expect = normalize([-alpha, 0.0, 1.0]);
        for n in surface_normals(&f).iter() {
            for k in 0..3 {
                assert!((n[k] - expect[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sine_normals_match_analytic_derivative() {
        // Central differences have O(dx²) truncation error: k² dx² / 6 relative.
        let k = 40.0;
        let dx = 0.001;
        let f = field_from(64, 4, dx, |x, _| (k * x).sin());
        let normals = surface_normals(&f);
        let bound = k * k * dx * dx / 6.0 * k * 1.01 + 1e-12;
        for i in 1..63 {
            let x = (i as f64 + 0.5) * dx;
            let s = k * (k * x).cos();
            let exact = -s / (1.0 + s * s).sqrt();
            assert!((normals[[i, 1]][0] - exact).abs() < bound, "cell {i}");
        }
    }

    #[test]
    fn normal_incidence_is_undeviated() {
        for n_rel in [0.5, 1.0 / 1.33, 1.0, 1.4] {
            let t = refract([0.0, 0.0, -1.0], [0.0, 0.0, 1.0], n_rel).unwrap();
            assert_eq!(t, Refraction::Transmitted([0.0, 0.0, -1.0]));
        }
    }

    #[test]
    fn unit_ratio_is_identity() {
        let i = normalize([0.3, -0.2, -0.9]);
        let n = normalize([0.1, 0.25, 1.0]);
        match refract(i, n, 1.0).unwrap() {
            Refraction::Transmitted(t) => {
                for k in 0..3 {
                    assert!((t[k] - i[k]).abs() < 1e-15);
                }
            }
            _ => panic!(),
        }
    }

    #[test]
    fn forty_five_degrees_into_glass() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let t = match refract([s, 0.0, -s], [0.0, 0.0, 1.0], 1.0 / 1.5).unwrap() {
            Refraction::Transmitted(t) => t,
            _ => panic!(),
        };
        let angle = t[0].atan2(-t[2]).to_degrees();
        assert!((angle - 28.1255).abs() < 1e-4, "{angle}");
    }

    #[test]
    fn grazing_exit_is_total_internal_reflection() {
        let i = normalize([0.9, 0.0, -0.4]);
        assert_eq!(
            refract(i, [0.0, 0.0, 1.0], 1.5).unwrap(),
            Refraction::TotalInternalReflection
        );
    }

    #[test]
    fn rejects_non_unit_vectors() {
        assert!(refract([0.0, 0.0, -1.1], [0.0, 0.0, 1.0], 0.7).is_err());
        assert!(refract([0.0, 0.0, -1.0], [0.0, 0.0, 1.0 + 1e-6], 0.7).is_err());
    }

    #[test]
    fn flat_surface_gives_uniform_mask() {
        for (n, m, rays) in [(128, 64, 1), (64, 64, 1), (32, 16, 4), (48, 16, 9)] {
            let optics = OpticsConfig {
                mask_nx: m,
                mask_ny: m,
                rays_per_cell: rays,
                ..OpticsConfig::default()
            };
            let f = HeightField::zeros(n, n, 0.002, 0.0);
            let mask = project_mask(&f, &optics, 0).unwrap();
            let worst = mask.intensity.iter().fold(0.0_f64, |w, v| w.max((v - 1.0).abs()));
            assert!(worst < 1e-9, "n={n} m={m} rays={rays}: {worst}");
        }
    }

    #[test]
    fn rays_that_leave_the_plane_lose_their_weight() {
        let f = field_from(32, 32, 0.002, |x, _| 0.05 * x);
        let optics = OpticsConfig {
            mask_nx: 16,
            mask_ny: 16,
            depth: 0.5,
            ..OpticsConfig::default()
        };
        let s = splat_rays(&f, &optics).unwrap();
        assert!(s.rays_landed < s.rays_launched);
        assert!((s.weights.sum() - s.rays_landed as f64).abs() < 1e-9 * s.rays_landed as f64);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let f = field_from(16, 16, 0.002, |x, _| 0.5 * x);
        let optics = OpticsConfig {
            mask_nx: 8,
            mask_ny: 8,
            depth: 50.0,
            ..OpticsConfig::default()
        };
        assert!(matches!(project_mask(&f, &optics, 3), Err(Error::Numeric(_))));
    }

    #[test]
    fn tilted_plane_shift_matches_scalar_snell() {
        let optics = OpticsConfig::default();
        for slope in [1e-3_f64, 0.02, 0.2, -0.35] {
            let h = 0.004;
            let theta_i = f64::atan(slope.abs());
            let theta_t = (optics.n_rel * theta_i.sin()).asin();
            let shift = (optics.depth + h) * (theta_i - theta_t).tan() * slope.signum();
            let Landing::At(p) = land([0.1, 0.2], h, [slope, 0.0], &optics).unwrap() else {
                panic!("ray lost at slope {slope}");
            };
            assert!((p[0] - 0.1 - shift).abs() < 1e-12, "slope {slope}: {} vs {shift}", p[0] - 0.1);
            assert!((p[1] - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn tilted_plane_translates_the_mask() {
        // 128 cells of 2 mm, mask pitch 4 mm. A gentle tilt moves every ray
        // by about the same distance, so whole columns empty out on one side.
        let slope = 0.01;
        let optics = OpticsConfig::default();
        let f = field_from(128, 128, 0.002, |x, _| slope * x);
        let theta_i = f64::atan(slope);
        let shift = optics.depth * (theta_i - (optics.n_rel * theta_i.sin()).asin());
        let pitch = 0.256 / 64.0;
        let empty = (shift / pitch).floor() as usize;
        let mask = project_mask(&f, &optics, 0).unwrap();
        for i in 0..empty {
            assert!(mask.intensity.row(i).iter().all(|&v| v == 0.0), "row {i}");
        }
        assert!(mask.intensity.row(empty + 1).iter().all(|&v| v > 0.0));
    }

    #[test]
    fn paraboloid_focuses_at_paraxial_focal_depth() {
        // h = -r^2 / 2R has radius of curvature R at the apex.
        let r_curv = 0.05;
        let optics = OpticsConfig::default();
        let focal = r_curv / (1.0 - optics.n_rel);
        for x in [1e-5, -2e-5, 5e-5] {
            let h = -x * x / (2.0 * r_curv);
            let probe = OpticsConfig { depth: 1.0, ..optics.clone() };
            let Landing::At(p) = land([x, 0.0], h, [-x / r_curv, 0.0], &probe).unwrap() else {
                panic!("ray lost");
            };
            // Depth below the apex at which the straight ray crosses the axis.
            let crossing = -h + (probe.depth + h) * x / (x - p[0]);
            assert!((crossing - focal).abs() < 1e-3 * focal, "x={x}: {crossing} vs {focal}");
        }
    }

    #[test]
    fn paraboloid_peak_over_a_depth_sweep() {
        let r_curv = 0.4;
        let n = 128;
        let dx = 0.002;
        let c = n as f64 * dx / 2.0;
        let f = field_from(n, n, dx, |x, y| -((x - c).powi(2) + (y - c).powi(2)) / (2.0 * r_curv));
        let base = OpticsConfig {
            rays_per_cell: 4,
            ..OpticsConfig::default()
        };
        let focal = r_curv / (1.0 - base.n_rel);
        let (best, _) = (1..=60)
            .map(|k| k as f64 * 0.05)
            .map(|depth| {
                let m = project_mask(&f, &OpticsConfig { depth, ..base.clone() }, 0).unwrap();
                (depth, m.intensity.iter().cloned().fold(0.0, f64::max))
            })
            .fold((0.0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        assert!((best - focal).abs() <= 0.1 * focal, "peak at {best}, predicted {focal}");
    }

    #[test]
    fn correlation_of_mask_with_itself_is_one() {
        let a = Array2::from_shape_fn((8, 8), |(i, j)| ((i * 7 + j * 3) % 5) as f64);
        assert!((normalized_correlation(&a, &a) - 1.0).abs() < 1e-12);
    }
}
