//! Time-domain 2D acoustic simulation on a staggered grid.
//!
//! First-order pressure/velocity equations
//!
//! ```text
//! rho dv/dt = -grad p
//! dp/dt     = -rho c^2 div v + sources
//! ```
//!
//! are advanced with a leapfrog scheme: pressure at cell centres, `vx` on
//! x-faces, `vy` on y-faces. Pressure is split into `px + py` so each axis
//! carries its own PML damping (cubic profile). Outer faces are rigid.
//!
//! Scene coordinates are metres relative to the lower corner of the
//! observation area, which sits in the middle of a source region twice its
//! side; the PML wraps the source region.

use std::f64::consts::{PI, SQRT_2, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldVideo, SilhouetteMask, SpectralImage};
use crate::geometry::{build_medium, rasterize, sample_shapes, GeometryConfig, Material, MediumMap, Shape};
use crate::rng::Rng;
use crate::spectral::dft_bin;

pub const FREQ_RANGE_HZ: [f64; 2] = [90.0, 2800.0];
pub const AMPLITUDE_RANGE_PA: [f64; 2] = [0.1, 1.0];
pub const MAX_SOURCES: usize = 5;

/// 2D stability bound on `c_max dt / dx` for this scheme.
pub const CFL_LIMIT: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Grid spacing in metres.
    pub dx: f64,
    /// Time step in seconds.
    pub dt: f64,
    /// Steps to run before the analysis window opens; `None` picks the
    /// onset ramp plus twice the observation-diagonal transit time.
    pub steps: Option<usize>,
    pub pml_cells: usize,
    /// Length of the raised-cosine source onset, in periods.
    pub ramp_periods: f64,
    /// Side of the square observation area in cells.
    pub obs_cells: usize,
    /// Minimum analysis window length in samples.
    pub window_min_samples: usize,
    /// Target normal-incidence reflection of the PML.
    pub pml_reflection: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dx: 0.01,
            dt: 1.21e-5,
            steps: None,
            pml_cells: 10,
            ramp_periods: 3.0,
            obs_cells: 128,
            window_min_samples: 128,
            pml_reflection: 1e-4,
        }
    }
}

impl SimConfig {
    pub fn fs(&self) -> f64 {
        1.0 / self.dt
    }

    pub fn obs_side(&self) -> f64 {
        self.obs_cells as f64 * self.dx
    }

    /// Cells between the grid edge and the observation area.
    pub fn obs_offset(&self) -> usize {
        self.obs_cells / 2 + self.pml_cells
    }

    pub fn grid_cells(&self) -> usize {
        2 * self.obs_offset() + self.obs_cells
    }

    pub fn ramp_steps(&self, freq_hz: f64) -> usize {
        (self.ramp_periods * self.fs() / freq_hz).ceil() as usize
    }

    /// Steps before the analysis window for a tone at `freq_hz`.
    pub fn settle_steps(&self, freq_hz: f64) -> usize {
        self.steps.unwrap_or_else(|| {
            let transit = 2.0 * SQRT_2 * self.obs_side() / Material::AIR.sound_speed;
            self.ramp_steps(freq_hz) + (transit / self.dt).ceil() as usize
        })
    }

    /// Analysis window: smallest whole number of periods covering at least
    /// `window_min_samples`, rounded to whole samples. Returns `(periods, samples)`.
    pub fn analysis_window(&self, freq_hz: f64) -> (usize, usize) {
        let per_period = self.fs() / freq_hz;
        let periods = ((self.window_min_samples as f64 / per_period).ceil() as usize).max(1);
        (periods, (periods as f64 * per_period).round() as usize)
    }

    fn validate(&self) -> Result<()> {
        if !(self.dx > 0.0 && self.dt > 0.0 && self.obs_cells > 0 && self.ramp_periods >= 0.0) {
            return Err(Error::Config(format!("invalid simulation config: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    /// Metres, relative to the observation area's lower corner.
    pub position: [f64; 2],
    /// Free-field pressure amplitude at 1 m, Pa.
    pub amplitude: f64,
    pub freq_hz: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub stream: u64,
    pub freq_hz: f64,
    pub sources: Vec<Source>,
    pub shapes: Vec<Shape>,
    #[serde(skip)]
    pub mask: Option<SilhouetteMask>,
}

impl Scene {
    pub fn mask(&self, cfg: &SimConfig) -> SilhouetteMask {
        self.mask
            .clone()
            .unwrap_or_else(|| rasterize(&self.shapes, cfg.obs_cells, cfg.obs_cells, cfg.dx))
    }

    pub fn medium(&self, cfg: &SimConfig) -> MediumMap {
        build_medium(&self.mask(cfg), cfg.obs_offset())
    }

    pub fn wavenumber(&self) -> f64 {
        TAU * self.freq_hz / Material::AIR.sound_speed
    }

    pub fn validate(&self, cfg: &SimConfig) -> Result<()> {
        let n = self.sources.len();
        if !(1..=MAX_SOURCES).contains(&n) {
            return Err(Error::InvalidArgument(format!("{n} sources, need 1..=5")));
        }
        let side = cfg.obs_side();
        for s in &self.sources {
            if s.freq_hz != self.freq_hz {
                return Err(Error::InvalidArgument(
                    "all sources must share the scene frequency".into(),
                ));
            }
            let [x, y] = s.position;
            let inside_obs = (0.0..side).contains(&x) && (0.0..side).contains(&y);
            let inside_region = (-side / 2.0..1.5 * side).contains(&x)
                && (-side / 2.0..1.5 * side).contains(&y);
            if inside_obs || !inside_region {
                return Err(Error::InvalidArgument(format!(
                    "source at {:?} must lie in the source region outside the observation area",
                    s.position
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub geometry: GeometryConfig,
    pub freq_range_hz: [f64; 2],
    pub amplitude_range_pa: [f64; 2],
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            geometry: GeometryConfig::default(),
            freq_range_hz: FREQ_RANGE_HZ,
            amplitude_range_pa: AMPLITUDE_RANGE_PA,
        }
    }
}

/// Draws a random scene with `source_count` sources (the dataset stratum).
pub fn sample_scene(
    rng: &Rng,
    cfg: &SceneConfig,
    sim: &SimConfig,
    source_count: usize,
) -> Result<Scene> {
    if !(1..=MAX_SOURCES).contains(&source_count) {
        return Err(Error::InvalidArgument(format!(
            "source count {source_count} outside 1..=5"
        )));
    }
    let geometry = cfg
        .geometry
        .scaled_to(sim.obs_side(), sim.dx);
    let shapes = sample_shapes(&mut rng.split("geometry"), &geometry, sim.obs_cells, sim.dx)?;
    let mut src_rng = rng.split("sources");
    let freq_hz = src_rng.uniform_in(cfg.freq_range_hz[0], cfg.freq_range_hz[1]);
    let side = sim.obs_side();
    let sources = (0..source_count)
        .map(|n| {
            let position = loop {
                let x = src_rng.uniform_in(-side / 2.0, 1.5 * side);
                let y = src_rng.uniform_in(-side / 2.0, 1.5 * side);
                let in_obs = (0.0..side).contains(&x) && (0.0..side).contains(&y);
                if !in_obs {
                    break [x, y];
                }
            };
            let amplitude = if n == 0 {
                1.0
            } else {
                src_rng.uniform_in(cfg.amplitude_range_pa[0], cfg.amplitude_range_pa[1])
            };
            Source {
                position,
                amplitude,
                freq_hz,
                phase: src_rng.uniform_in(0.0, TAU),
            }
        })
        .collect();
    let mask = rasterize(&shapes, sim.obs_cells, sim.obs_cells, sim.dx);
    Ok(Scene {
        seed: rng.seed(),
        stream: rng.stream(),
        freq_hz,
        sources,
        shapes,
        mask: Some(mask),
    })
}

/// Additive pressure source on one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub cell: (usize, usize),
    /// Peak pressure increment per step.
    pub gain: f64,
    pub omega: f64,
    pub phase: f64,
    pub ramp_steps: usize,
    /// Source is silenced from this step on.
    pub stop_step: Option<usize>,
}

impl Injection {
    fn value(&self, step: usize, dt: f64) -> f64 {
        if self.stop_step.is_some_and(|s| step >= s) {
            return 0.0;
        }
        let ramp = if step < self.ramp_steps {
            0.5 - 0.5 * (PI * step as f64 / self.ramp_steps as f64).cos()
        } else {
            1.0
        };
        self.gain * ramp * (self.omega * step as f64 * dt + self.phase).sin()
    }
}

/// Per-step pressure increment that gives a free-field amplitude `amplitude`
/// at 1 m from a point source in `medium`, using the far-field magnitude of
/// the 2D Green's function `|G| ~ sqrt(2 / (pi k r)) / 4`.
pub fn point_source_gain(amplitude: f64, freq_hz: f64, medium: Material, dx: f64, dt: f64) -> f64 {
    let omega = TAU * freq_hz;
    let k = omega / medium.sound_speed;
    let q0 = 4.0 * amplitude / (omega * medium.density) * (PI * k / 2.0).sqrt();
    dt * medium.density * medium.sound_speed.powi(2) * q0 / (dx * dx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PmlAxes {
    pub x: bool,
    pub y: bool,
}

impl PmlAxes {
    pub const BOTH: PmlAxes = PmlAxes { x: true, y: true };
}

/// Staggered-grid leapfrog solver over a heterogeneous fluid.
pub struct Solver {
    nx: usize,
    ny: usize,
    dt: f64,
    px: Vec<f64>,
    py: Vec<f64>,
    /// `(nx + 1) x ny`, face `i` sits between cells `i - 1` and `i`.
    vx: Vec<f64>,
    /// `nx x (ny + 1)`.
    vy: Vec<f64>,
    bulk_dt_dx: Vec<f64>,
    vx_coef: Vec<f64>,
    vy_coef: Vec<f64>,
    // damping factors (a, b) as (1 - s dt/2)/(1 + s dt/2), 1/(1 + s dt/2)
    cell_damp_x: Vec<(f64, f64)>,
    cell_damp_y: Vec<(f64, f64)>,
    face_damp_x: Vec<(f64, f64)>,
    face_damp_y: Vec<(f64, f64)>,
    injections: Vec<Injection>,
    step: usize,
    pml_cells: usize,
}

fn damping(sigma: f64, dt: f64) -> (f64, f64) {
    let h = sigma * dt / 2.0;
    ((1.0 - h) / (1.0 + h), 1.0 / (1.0 + h))
}

/// PML conductivity along one axis at position `pos` (cell units, centres at
/// `i + 0.5`) for an axis of `n` cells.
fn sigma_profile(pos: f64, n: usize, pml: usize, sigma_max: f64) -> f64 {
    if pml == 0 {
        return 0.0;
    }
    let l = pml as f64;
    let depth = (l - pos).max(pos - (n as f64 - l)).max(0.0) / l;
    sigma_max * depth.min(1.0).powi(3)
}

impl Solver {
    pub fn new(
        medium: &MediumMap,
        dx: f64,
        dt: f64,
        pml_cells: usize,
        pml_axes: PmlAxes,
        pml_reflection: f64,
        injections: Vec<Injection>,
    ) -> Result<Self> {
        let (nx, ny) = (medium.nx(), medium.ny());
        let c_max = medium.max_sound_speed();
        let courant = c_max * dt / dx;
        if courant > CFL_LIMIT {
            return Err(Error::CflViolation {
                courant,
                limit: CFL_LIMIT,
            });
        }
        for inj in &injections {
            if inj.cell.0 >= nx || inj.cell.1 >= ny {
                return Err(Error::InvalidArgument(format!(
                    "source cell {:?} outside {nx}x{ny} grid",
                    inj.cell
                )));
            }
        }
        let bulk_dt_dx = medium
            .sound_speed
            .iter()
            .zip(&medium.density)
            .map(|(c, rho)| rho * c * c * dt / dx)
            .collect();
        let rho = |i: usize, j: usize| medium.density[i * ny + j];
        let mut vx_coef = vec![0.0; (nx + 1) * ny];
        for i in 1..nx {
            for j in 0..ny {
                let face = 0.5 * (rho(i - 1, j) + rho(i, j));
                vx_coef[i * ny + j] = dt / (face * dx);
            }
        }
        let mut vy_coef = vec![0.0; nx * (ny + 1)];
        for i in 0..nx {
            for j in 1..ny {
                let face = 0.5 * (rho(i, j - 1) + rho(i, j));
                vy_coef[i * (ny + 1) + j] = dt / (face * dx);
            }
        }
        let depth = pml_cells as f64 * dx;
        let sigma_max = if pml_cells > 0 {
            -4.0 * c_max * pml_reflection.ln() / (2.0 * depth)
        } else {
            0.0
        };
        let axis = |n: usize, on: bool, offset: f64, count: usize| -> Vec<(f64, f64)> {
            (0..count)
                .map(|i| {
                    let s = if on {
                        sigma_profile(i as f64 + offset, n, pml_cells, sigma_max)
                    } else {
                        0.0
                    };
                    damping(s, dt)
                })
                .collect()
        };
        Ok(Solver {
            nx,
            ny,
            dt,
            px: vec![0.0; nx * ny],
            py: vec![0.0; nx * ny],
            vx: vec![0.0; (nx + 1) * ny],
            vy: vec![0.0; nx * (ny + 1)],
            bulk_dt_dx,
            vx_coef,
            vy_coef,
            cell_damp_x: axis(nx, pml_axes.x, 0.5, nx),
            cell_damp_y: axis(ny, pml_axes.y, 0.5, ny),
            face_damp_x: axis(nx, pml_axes.x, 0.0, nx + 1),
            face_damp_y: axis(ny, pml_axes.y, 0.0, ny + 1),
            injections,
            step: 0,
            pml_cells: if pml_axes.x || pml_axes.y { pml_cells } else { 0 },
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn pressure(&self, i: usize, j: usize) -> f64 {
        let k = i * self.ny + j;
        self.px[k] + self.py[k]
    }

    pub fn step(&mut self) {
        let (nx, ny) = (self.nx, self.ny);
        for i in 1..nx {
            let (a, b) = self.face_damp_x[i];
            let row = i * ny;
            let prev = (i - 1) * ny;
            for j in 0..ny {
                let grad = (self.px[row + j] + self.py[row + j]) - (self.px[prev + j] + self.py[prev + j]);
                self.vx[row + j] = a * self.vx[row + j] - b * self.vx_coef[row + j] * grad;
            }
        }
        for i in 0..nx {
            let row = i * ny;
            let vrow = i * (ny + 1);
            for j in 1..ny {
                let (a, b) = self.face_damp_y[j];
                let grad = (self.px[row + j] + self.py[row + j])
                    - (self.px[row + j - 1] + self.py[row + j - 1]);
                self.vy[vrow + j] = a * self.vy[vrow + j] - b * self.vy_coef[vrow + j] * grad;
            }
        }
        for i in 0..nx {
            let (ax, bx) = self.cell_damp_x[i];
            let row = i * ny;
            let next = (i + 1) * ny;
            let vrow = i * (ny + 1);
            for j in 0..ny {
                let (ay, by) = self.cell_damp_y[j];
                let k = row + j;
                let div_x = self.vx[next + j] - self.vx[row + j];
                let div_y = self.vy[vrow + j + 1] - self.vy[vrow + j];
                self.px[k] = ax * self.px[k] - bx * self.bulk_dt_dx[k] * div_x;
                self.py[k] = ay * self.py[k] - by * self.bulk_dt_dx[k] * div_y;
            }
        }
        self.step += 1;
        for inj in &self.injections {
            let v = 0.5 * inj.value(self.step, self.dt);
            let k = inj.cell.0 * ny + inj.cell.1;
            self.px[k] += v;
            self.py[k] += v;
        }
    }

    /// First non-finite pressure cell, if any.
    pub fn check_finite(&self) -> Result<()> {
        match self.px.iter().zip(&self.py).position(|(a, b)| !(a + b).is_finite()) {
            Some(cell) => Err(Error::Unstable {
                step: self.step,
                cell,
            }),
            None => Ok(()),
        }
    }

    /// Acoustic energy (per unit depth) in the cells outside the PML:
    /// `sum p^2 / (2 rho c^2) + rho |v|^2 / 2`, times the cell area.
    pub fn interior_energy(&self, medium: &MediumMap, dx: f64) -> f64 {
        let (nx, ny, l) = (self.nx, self.ny, self.pml_cells);
        let mut e = 0.0;
        for i in l..nx - l {
            for j in l..ny - l {
                let k = i * ny + j;
                let c = medium.sound_speed[k];
                let rho = medium.density[k];
                let p = self.px[k] + self.py[k];
                let vx = 0.5 * (self.vx[i * ny + j] + self.vx[(i + 1) * ny + j]);
                let vy = 0.5 * (self.vy[i * (ny + 1) + j] + self.vy[i * (ny + 1) + j + 1]);
                e += p * p / (2.0 * rho * c * c) + 0.5 * rho * (vx * vx + vy * vy);
            }
        }
        e * dx * dx
    }
}

/// Converts a scene position in metres to a grid cell.
pub fn position_to_cell(position: [f64; 2], cfg: &SimConfig) -> (usize, usize) {
    let off = cfg.obs_offset() as f64;
    let max = cfg.grid_cells() - 1;
    let cell = |v: f64| ((v / cfg.dx).floor() + off).clamp(0.0, max as f64) as usize;
    (cell(position[0]), cell(position[1]))
}

/// Runs the scene to steady state and returns pressure over the observation
/// area during the analysis window.
pub fn simulate(scene: &Scene, cfg: &SimConfig) -> Result<FieldVideo> {
    cfg.validate()?;
    scene.validate(cfg)?;
    let medium = scene.medium(cfg);
    let ramp_steps = cfg.ramp_steps(scene.freq_hz);
    let injections = scene
        .sources
        .iter()
        .map(|s| Injection {
            cell: position_to_cell(s.position, cfg),
            gain: point_source_gain(s.amplitude, s.freq_hz, Material::AIR, cfg.dx, cfg.dt),
            omega: TAU * s.freq_hz,
            phase: s.phase,
            ramp_steps,
            stop_step: None,
        })
        .collect();
    let mut solver = Solver::new(
        &medium,
        cfg.dx,
        cfg.dt,
        cfg.pml_cells,
        PmlAxes::BOTH,
        cfg.pml_reflection,
        injections,
    )?;
    let settle = cfg.settle_steps(scene.freq_hz);
    let (_, window) = cfg.analysis_window(scene.freq_hz);
    for n in 0..settle {
        solver.step();
        if n % 256 == 255 {
            solver.check_finite()?;
        }
    }
    record_window(&mut solver, cfg, window)
}

/// Steps `frames` more times, recording the observation area after each step.
pub fn record_window(solver: &mut Solver, cfg: &SimConfig, frames: usize) -> Result<FieldVideo> {
    let (w, off) = (cfg.obs_cells, cfg.obs_offset());
    let mut data = vec![0.0; w * w * frames];
    for t in 0..frames {
        solver.step();
        for i in 0..w {
            for j in 0..w {
                data[(i * w + j) * frames + t] = solver.pressure(i + off, j + off);
            }
        }
    }
    solver.check_finite()?;
    FieldVideo::new(w, w, frames, data, cfg.dx, cfg.fs())
}

/// Complex amplitude at the DFT bin nearest `freq_hz`, scaled so a pixel
/// holding `A cos(2 pi f t + phi)` over whole periods maps to
/// `(A cos phi, A sin phi)`. Silhouette pixels are set to exactly zero.
pub fn clean_target(video: &FieldVideo, mask: &SilhouetteMask, freq_hz: f64) -> Result<SpectralImage> {
    let t = video.frames();
    if mask.width() != video.width() || mask.height() != video.height() {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{} vs video {}x{}",
            mask.width(),
            mask.height(),
            video.width(),
            video.height()
        )));
    }
    let k = (freq_hz * t as f64 / video.fs).round() as usize;
    if k == 0 {
        return Err(Error::WindowTooShort { samples: t, freq_hz });
    }
    if k > t / 2 {
        return Err(Error::InvalidArgument(format!(
            "{freq_hz} Hz is above the Nyquist frequency {}",
            video.fs / 2.0
        )));
    }
    let scale = if 2 * k == t { 1.0 } else { 2.0 } / t as f64;
    let n = video.pixels();
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for p in 0..n {
        if mask.is_silhouette(p) {
            continue;
        }
        let x = dft_bin(&video.data()[p * t..(p + 1) * t], k);
        re[p] = scale * x.re;
        im[p] = scale * x.im;
    }
    SpectralImage::new(
        video.width(),
        video.height(),
        re,
        im,
        k as f64 * video.fs / t as f64,
        k,
    )
}
