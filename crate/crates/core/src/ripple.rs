//! Liquid-surface height fields driven by point pump sources.
//!
//! Two wave models are provided: closed-form superposition of damped
//! circular waves with a causal wavefront (the default, used to build
//! sampling masks) and a leapfrog finite-difference solver with a sponge
//! boundary, kept as an independent cross-check of the closed form.

use std::f64::consts::TAU;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// A point wave source on the liquid surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpSource {
    /// `[x, y]` in meters, measured from the tank corner.
    pub position: [f64; 2],
    /// Peak elevation in meters.
    pub amplitude: f64,
    /// Hertz.
    pub frequency: f64,
    /// Radians.
    #[serde(default)]
    pub phase: f64,
    /// Seconds; no wave leaves the source before this time.
    #[serde(default)]
    pub onset_time: f64,
}

impl PumpSource {
    pub fn angular_frequency(&self) -> f64 {
        TAU * self.frequency
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveModel {
    Analytic,
    Fdtd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RippleConfig {
    pub grid_nx: usize,
    pub grid_ny: usize,
    /// Cell pitch in meters.
    pub dx: f64,
    /// Phase speed in m/s.
    pub wave_speed: f64,
    /// Amplitude decay per meter travelled (1/m).
    pub spatial_damping: f64,
    /// Velocity damping used by the finite-difference model (1/s).
    pub temporal_damping: f64,
    pub sources: Vec<PumpSource>,
    pub mode: WaveModel,
    pub rng_seed: u64,
    /// Radius (m) within which source positions are re-drawn per perturbation.
    pub jitter_radius: f64,
    /// Sponge layer width in cells for the finite-difference model.
    pub sponge_width: usize,
    /// Peak sponge damping (1/s) at the outer edge.
    pub sponge_strength: f64,
}

impl Default for RippleConfig {
    fn default() -> Self {
        let nx = 128;
        let dx = 0.002;
        let side = nx as f64 * dx;
        let source = |fx: f64, fy: f64| PumpSource {
            position: [fx * side, fy * side],
            amplitude: 1.0e-3,
            frequency: 10.0,
            phase: 0.0,
            onset_time: 0.0,
        };
        Self {
            grid_nx: nx,
            grid_ny: nx,
            dx,
            wave_speed: 0.2,
            spatial_damping: 4.0,
            temporal_damping: 0.0,
            sources: vec![source(0.3, 0.35), source(0.7, 0.3), source(0.5, 0.72)],
            mode: WaveModel::Analytic,
            rng_seed: 0,
            jitter_radius: 0.15,
            sponge_width: 16,
            sponge_strength: 40.0,
        }
    }
}

impl RippleConfig {
    /// Tank extent `[x, y]` in meters.
    pub fn extent(&self) -> [f64; 2] {
        [self.grid_nx as f64 * self.dx, self.grid_ny as f64 * self.dx]
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_nx < 8 || self.grid_ny < 8 {
            return Err(Error::Config(format!(
                "ripple grid must be at least 8x8, got {}x{}",
                self.grid_nx, self.grid_ny
            )));
        }
        if !(self.dx > 0.0) || !(self.wave_speed > 0.0) {
            return Err(Error::Config("ripple dx and wave_speed must be positive".into()));
        }
        if !(self.spatial_damping >= 0.0)
            || !(self.temporal_damping >= 0.0)
            || !(self.sponge_strength >= 0.0)
            || !(self.jitter_radius >= 0.0)
        {
            return Err(Error::Config("ripple damping and jitter must be non-negative".into()));
        }
        let [ex, ey] = self.extent();
        for (i, s) in self.sources.iter().enumerate() {
            if !(s.amplitude > 0.0) || !(s.frequency > 0.0) {
                return Err(Error::Config(format!(
                    "source {i}: amplitude and frequency must be positive"
                )));
            }
            let [x, y] = s.position;
            if !(0.0..=ex).contains(&x) || !(0.0..=ey).contains(&y) {
                return Err(Error::Config(format!(
                    "source {i} at ({x}, {y}) lies outside the {ex} x {ey} m tank"
                )));
            }
            if !s.phase.is_finite() || !(s.onset_time >= 0.0) {
                return Err(Error::Config(format!("source {i}: bad phase or onset time")));
            }
        }
        Ok(())
    }

    /// Physical coordinate of cell `(i, j)`'s center.
    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [(i as f64 + 0.5) * self.dx, (j as f64 + 0.5) * self.dx]
    }
}

/// Surface elevation (meters) on the tank grid at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightField {
    pub time: f64,
    /// Cell pitch in meters.
    pub dx: f64,
    /// Indexed `[[ix, iy]]`.
    pub h: Array2<f64>,
}

impl HeightField {
    pub fn zeros(nx: usize, ny: usize, dx: f64, time: f64) -> Self {
        Self {
            time,
            dx,
            h: Array2::zeros((nx, ny)),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.h.dim()
    }

    pub fn max_abs(&self) -> f64 {
        self.h.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Closed-form surface: damped circular waves from each source with a causal front.
pub fn surface_at(config: &RippleConfig, t: f64) -> Result<HeightField> {
    if !(t >= 0.0) {
        return Err(Error::Config(format!("surface time must be >= 0, got {t}")));
    }
    if config.grid_nx == 0 || config.grid_ny == 0 {
        return Err(Error::Config("empty ripple grid".into()));
    }
    if config.mode != WaveModel::Analytic {
        return Err(Error::Config(
            "surface_at requires the analytic wave model; use FdtdSimulation for fdtd".into(),
        ));
    }
    config.validate()?;

    let c = config.wave_speed;
    let delta = config.spatial_damping;
    let mut field = HeightField::zeros(config.grid_nx, config.grid_ny, config.dx, t);
    for src in &config.sources {
        let omega = src.angular_frequency();
        let k = omega / c;
        let reach = c * (t - src.onset_time);
        if reach < 0.0 {
            continue;
        }
        for ((i, j), h) in field.h.indexed_iter_mut() {
            let [x, y] = config.cell_center(i, j);
            let r = (x - src.position[0]).hypot(y - src.position[1]);
            if r > reach {
                continue;
            }
            *h += src.amplitude * (-delta * r).exp() * (k * r - omega * t + src.phase).cos();
        }
    }
    Ok(field)
}

/// Re-draw source phases (uniform on `[0, 2π)`) and jitter positions within
/// `jitter_radius`, keyed by `(rng_seed, frame_index)`. Jittered positions are
/// reflected back into the tank.
pub fn randomize_sources(config: &RippleConfig, frame_index: u64) -> RippleConfig {
    let mut rng = rng::stream(config.rng_seed, Domain::SourcePerturbation, frame_index);
    let [ex, ey] = config.extent();
    let mut out = config.clone();
    for src in &mut out.sources {
        src.phase = rng.gen::<f64>() * TAU;
        let angle = rng.gen::<f64>() * TAU;
        let radius = config.jitter_radius * rng.gen::<f64>().sqrt();
        if config.jitter_radius > 0.0 {
            src.position = [
                reflect_into(src.position[0] + radius * angle.cos(), ex),
                reflect_into(src.position[1] + radius * angle.sin(), ey),
            ];
        }
    }
    out
}

fn reflect_into(v: f64, len: f64) -> f64 {
    let period = 2.0 * len;
    let m = v.rem_euclid(period);
    if m > len {
        period - m
    } else {
        m
    }
}

/// Largest stable time step for the leapfrog scheme.
pub fn max_stable_dt(config: &RippleConfig) -> f64 {
    config.dx / (config.wave_speed * 2.0_f64.sqrt())
}

fn damping_profile(config: &RippleConfig) -> Array2<f64> {
    let (nx, ny) = (config.grid_nx, config.grid_ny);
    let w = config.sponge_width;
    Array2::from_shape_fn((nx, ny), |(i, j)| {
        let edge = i.min(j).min(nx - 1 - i).min(ny - 1 - j);
        let sponge = if w > 0 && edge < w {
            let d = (w - edge) as f64 / w as f64;
            config.sponge_strength * d * d
        } else {
            0.0
        };
        config.temporal_damping + sponge
    })
}

/// Five-point Laplacian times dx², with zero elevation outside the grid.
fn laplacian(h: &Array2<f64>) -> Array2<f64> {
    let (nx, ny) = h.dim();
    Array2::from_shape_fn((nx, ny), |(i, j)| {
        let c = h[[i, j]];
        let l = if i > 0 { h[[i - 1, j]] } else { 0.0 };
        let r = if i + 1 < nx { h[[i + 1, j]] } else { 0.0 };
        let d = if j > 0 { h[[i, j - 1]] } else { 0.0 };
        let u = if j + 1 < ny { h[[i, j + 1]] } else { 0.0 };
        l + r + d + u - 4.0 * c
    })
}

fn check_cfl(config: &RippleConfig, dt: f64) -> Result<()> {
    let ratio = config.wave_speed * dt / config.dx;
    if !(dt > 0.0) || ratio > std::f64::consts::FRAC_1_SQRT_2 {
        return Err(Error::Config(format!(
            "CFL violated: wave_speed*dt/dx = {ratio:.6} exceeds 1/sqrt(2) (dt = {dt})"
        )));
    }
    Ok(())
}

/// One leapfrog step of `h_tt = c²∇²h − γ h_t + forcing`.
///
/// `current` is the field at `t`, `previous` at `t − dt`. Damping is centered
/// in time, which makes [`fdtd_energy`] non-increasing when there is no forcing.
/// Each source drives its nearest cell with acceleration `A ω² cos(ωt − φ)`
/// once `t ≥ onset_time`.
pub fn step_fdtd(
    current: &HeightField,
    previous: &HeightField,
    config: &RippleConfig,
    dt: f64,
) -> Result<HeightField> {
    check_cfl(config, dt)?;
    let gamma = damping_profile(config);
    Ok(step_with_profile(current, previous, config, dt, &gamma))
}

fn step_with_profile(
    current: &HeightField,
    previous: &HeightField,
    config: &RippleConfig,
    dt: f64,
    gamma: &Array2<f64>,
) -> HeightField {
    let courant2 = (config.wave_speed * dt / config.dx).powi(2);
    let lap = laplacian(&current.h);
    let mut next = Array2::zeros(current.h.dim());
    ndarray::Zip::from(&mut next)
        .and(&current.h)
        .and(&previous.h)
        .and(&lap)
        .and(gamma)
        .for_each(|n, &h, &hp, &l, &g| {
            let a = 0.5 * g * dt;
            *n = (2.0 * h - (1.0 - a) * hp + courant2 * l) / (1.0 + a);
        });

    let t = current.time;
    let (nx, ny) = next.dim();
    for src in &config.sources {
        if t < src.onset_time {
            continue;
        }
        let i = ((src.position[0] / config.dx).floor() as usize).min(nx - 1);
        let j = ((src.position[1] / config.dx).floor() as usize).min(ny - 1);
        let omega = src.angular_frequency();
        let force = src.amplitude * omega * omega * (omega * t - src.phase).cos();
        let a = 0.5 * gamma[[i, j]] * dt;
        next[[i, j]] += dt * dt * force / (1.0 + a);
    }
    HeightField {
        time: t + dt,
        dx: current.dx,
        h: next,
    }
}

/// Discrete energy between two consecutive fields, times dx².
///
/// Uses the time-staggered form `Σ ḣ² + c² ∇h(t)·∇h(t−dt)` (edge differences
/// with zero ghost cells), the quantity the leapfrog scheme conserves exactly
/// without damping.
pub fn fdtd_energy(current: &HeightField, previous: &HeightField, wave_speed: f64, dt: f64) -> f64 {
    let (nx, ny) = current.h.dim();
    let dx = current.dx;
    let kinetic: f64 = current
        .h
        .iter()
        .zip(previous.h.iter())
        .map(|(a, b)| ((a - b) / dt).powi(2))
        .sum();
    let at = |f: &Array2<f64>, i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= nx as isize || j >= ny as isize {
            0.0
        } else {
            f[[i as usize, j as usize]]
        }
    };
    let mut potential = 0.0;
    for i in 0..=nx as isize {
        for j in 0..ny as isize {
            let a = at(&current.h, i, j) - at(&current.h, i - 1, j);
            let b = at(&previous.h, i, j) - at(&previous.h, i - 1, j);
            potential += a * b;
        }
    }
    for i in 0..nx as isize {
        for j in 0..=ny as isize {
            let a = at(&current.h, i, j) - at(&current.h, i, j - 1);
            let b = at(&previous.h, i, j) - at(&previous.h, i, j - 1);
            potential += a * b;
        }
    }
    (kinetic + wave_speed * wave_speed * potential / (dx * dx)) * dx * dx
}

/// Time-marching wrapper around [`step_fdtd`] starting from a flat surface.
#[derive(Debug, Clone)]
pub struct FdtdSimulation {
    config: RippleConfig,
    dt: f64,
    gamma: Array2<f64>,
    previous: HeightField,
    current: HeightField,
}

impl FdtdSimulation {
    pub fn new(config: RippleConfig, dt: f64) -> Result<Self> {
        config.validate()?;
        check_cfl(&config, dt)?;
        let gamma = damping_profile(&config);
        let (nx, ny) = (config.grid_nx, config.grid_ny);
        let previous = HeightField::zeros(nx, ny, config.dx, -dt);
        let current = HeightField::zeros(nx, ny, config.dx, 0.0);
        Ok(Self {
            config,
            dt,
            gamma,
            previous,
            current,
        })
    }

    /// Start from an explicit pair of fields (`current` at t, `previous` at t − dt).
    pub fn from_state(
        config: RippleConfig,
        dt: f64,
        current: HeightField,
        previous: HeightField,
    ) -> Result<Self> {
        let mut sim = Self::new(config, dt)?;
        if current.dims() != (sim.config.grid_nx, sim.config.grid_ny)
            || previous.dims() != current.dims()
        {
            return Err(Error::Dimension("FDTD state does not match the grid".into()));
        }
        sim.current = current;
        sim.previous = previous;
        Ok(sim)
    }

    pub fn step(&mut self) {
        let next = step_with_profile(&self.current, &self.previous, &self.config, self.dt, &self.gamma);
        self.previous = std::mem::replace(&mut self.current, next);
    }

    /// Advance until `current().time >= t` (to within half a step).
    pub fn run_until(&mut self, t: f64) {
        while self.current.time + 0.5 * self.dt < t {
            self.step();
        }
    }

    pub fn current(&self) -> &HeightField {
        &self.current
    }

    pub fn previous(&self) -> &HeightField {
        &self.previous
    }

    pub fn energy(&self) -> f64 {
        fdtd_energy(&self.current, &self.previous, self.config.wave_speed, self.dt)
    }
}

/// Distance from the source at which the analytic causal front sits at `t`.
pub fn front_radius(config: &RippleConfig, source: &PumpSource, t: f64) -> f64 {
    (config.wave_speed * (t - source.onset_time)).max(0.0)
}

/// One pump period of the slowest source, in seconds.
pub fn longest_period(config: &RippleConfig) -> Option<f64> {
    config
        .sources
        .iter()
        .map(|s| 1.0 / s.frequency)
        .fold(None, |m, p| Some(m.map_or(p, |m: f64| m.max(p))))
}


#[cfg(test)]
mod front_tests {
    use super::*;

    /// Outermost distance along +x from `(ci, cj)` where `|h|` exceeds `frac` of the row maximum.
    fn outer_edge(f: &HeightField, ci: usize, cj: usize, frac: f64) -> f64 {
        let row: Vec<f64> = (ci..f.h.nrows()).map(|i| f.h[[i, cj]].abs()).collect();
        let max = row.iter().cloned().fold(0.0, f64::max);
        let last = row.iter().rposition(|&v| v > frac * max).unwrap_or(0);
        last as f64 * f.dx
    }

    #[test]
    fn fdtd_front_matches_analytic_front() {
        let n = 201;
        let mut c = RippleConfig {
            grid_nx: n,
            grid_ny: n,
            spatial_damping: 0.0,
            ..RippleConfig::default()
        };
        let centre = (n / 2) as f64 * c.dx + 0.5 * c.dx;
        c.sources = vec![PumpSource {
            position: [centre, centre],
            amplitude: 1e-3,
            frequency: 10.0,
            phase: 0.0,
            onset_time: 0.0,
        }];
        let dt = 0.5 * max_stable_dt(&c);
        for t in [0.15, 0.25, 0.3] {
            let mut sim = FdtdSimulation::new(c.clone(), dt).unwrap();
            sim.run_until(t);
            let t = sim.current().time;
            let numeric = outer_edge(sim.current(), n / 2, n / 2, 0.05);
            let analytic_field = surface_at(&c, t).unwrap();
            let analytic = outer_edge(&analytic_field, n / 2, n / 2, 1e-12);
            assert!((numeric - analytic).abs() <= 2.0 * c.dx, "t={t}: {numeric} vs {analytic}");
            assert!((analytic - front_radius(&c, &c.sources[0], t)).abs() <= c.dx);
        }
    }

    #[test]
    fn drawn_phases_pass_ks_against_uniform() {
        let mut c = RippleConfig::default();
        c.sources.truncate(1);
        let mut phases: Vec<f64> = (0..1000u64)
            .map(|k| randomize_sources(&c, k).sources[0].phase / TAU)
            .collect();
        phases.sort_by(f64::total_cmp);
        let n = phases.len() as f64;
        let d = phases
            .iter()
            .enumerate()
            .map(|(i, &u)| (u - i as f64 / n).max((i + 1) as f64 / n - u))
            .fold(0.0, f64::max);
        // Asymptotic 1% critical value.
        let critical = 1.6276 / n.sqrt();
        assert!(d < critical, "KS statistic {d} >= {critical}");
        assert!(phases.iter().all(|&u| (0.0..1.0).contains(&u)));
    }
}
