//! Measurement harnesses for the wave-solver oracles.

use std::f64::consts::{PI, TAU};

use rustfft::num_complex::Complex64;
use sonoseg::acoustics::{Injection, PmlAxes, Solver};
use sonoseg::geometry::{Material, MediumMap};

pub const DX: f64 = 0.01;
pub const DT: f64 = 1.21e-5;

/// Runs `solver` to steady state, then returns the complex amplitude of each
/// requested cell at `freq_hz`, measured over a whole number of periods.
pub fn steady_amplitudes(
    solver: &mut Solver,
    freq_hz: f64,
    settle_steps: usize,
    cells: &[(usize, usize)],
) -> Vec<Complex64> {
    for _ in 0..settle_steps {
        solver.step();
    }
    let per_period = 1.0 / (freq_hz * DT);
    let periods = (256.0 / per_period).ceil().max(1.0);
    let samples = (periods * per_period).round() as usize;
    // demodulate against the exact tone; residual mismatch is < 0.5 sample
    let omega = TAU * freq_hz;
    let mut acc = vec![Complex64::new(0.0, 0.0); cells.len()];
    for _ in 0..samples {
        solver.step();
        let t = solver.step_index() as f64 * DT;
        let rot = Complex64::from_polar(2.0 / samples as f64, -omega * t);
        for (a, &(i, j)) in acc.iter_mut().zip(cells) {
            *a += rot * solver.pressure(i, j);
        }
    }
    acc
}

/// Wavenumber of a grid-aligned plane wave in this scheme.
pub fn numerical_wavenumber(freq_hz: f64, c: f64) -> f64 {
    let courant = c * DT / DX;
    2.0 / DX * ((PI * freq_hz * DT).sin() / courant).asin()
}

/// Line source across the full width of an `nx x ny` channel with rigid side
/// walls, PML only at the two ends. `eps_from` turns cells `i >= eps_from` into EPS.
pub fn plane_wave_channel(
    nx: usize,
    ny: usize,
    pml: usize,
    source_i: usize,
    eps_from: Option<usize>,
    freq_hz: f64,
) -> Solver {
    let mut medium = MediumMap::uniform(nx, ny, Material::AIR);
    if let Some(start) = eps_from {
        for i in start..nx {
            for j in 0..ny {
                medium.set(i, j, Material::EPS);
            }
        }
    }
    let ramp_steps = (3.0 / (freq_hz * DT)).ceil() as usize;
    let injections = (0..ny)
        .map(|j| Injection {
            cell: (source_i, j),
            gain: 0.05,
            omega: TAU * freq_hz,
            phase: 0.0,
            ramp_steps,
            stop_step: None,
        })
        .collect();
    Solver::new(
        &medium,
        DX,
        DT,
        pml,
        PmlAxes { x: true, y: false },
        1e-4,
        injections,
    )
    .unwrap()
}

/// Least-squares fit of `a e^{-ikx} + b e^{ikx}` to samples at integer cell
/// offsets `x`; returns `|b / a|`.
pub fn standing_wave_reflection(samples: &[(f64, Complex64)], k: f64) -> f64 {
    // normal equations of the 2-parameter complex LSQ
    let (mut g11, mut g12, mut g22) = (0.0, Complex64::new(0.0, 0.0), 0.0);
    let (mut r1, mut r2) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    for &(x, p) in samples {
        let e1 = Complex64::from_polar(1.0, -k * x);
        let e2 = Complex64::from_polar(1.0, k * x);
        g11 += 1.0;
        g22 += 1.0;
        g12 += e1.conj() * e2;
        r1 += e1.conj() * p;
        r2 += e2.conj() * p;
    }
    let det = g11 * g22 - (g12 * g12.conj()).re;
    let a = (r1 * g22 - g12 * r2) / det;
    let b = (r2 * g11 - g12.conj() * r1) / det;
    (b / a).norm()
}

/// Measured reflection off a flat EPS half-space at normal incidence.
pub fn measure_eps_reflection(freq_hz: f64) -> f64 {
    measure_eps_reflection_on(148, 128, 24, 100, freq_hz)
}

/// As [`measure_eps_reflection`] on an `nx x ny` grid with the source line at
/// `source_i` and EPS from `interface` on.
pub fn measure_eps_reflection_on(nx: usize, ny: usize, source_i: usize, interface: usize, freq_hz: f64) -> f64 {
    let pml = 10;
    let mut solver = plane_wave_channel(nx, ny, pml, source_i, Some(interface), freq_hz);
    let first = source_i + 6;
    let cells: Vec<(usize, usize)> = (first..interface).map(|i| (i, ny / 2)).collect();
    let settle = (3.0 / (freq_hz * DT)).ceil() as usize + (8.0 * nx as f64 * DX / 340.0 / DT) as usize;
    let amps = steady_amplitudes(&mut solver, freq_hz, settle, &cells);
    let samples: Vec<(f64, Complex64)> = cells
        .iter()
        .zip(&amps)
        .map(|(&(i, _), &a)| ((i as f64 - interface as f64) * DX, a))
        .collect();
    standing_wave_reflection(&samples, numerical_wavenumber(freq_hz, 340.0))
}

/// Measured phase speed in air from the unwrapped phase along a plane wave,
/// taken between two probes `spacing_m` apart.
pub fn measure_air_speed(freq_hz: f64, spacing_m: f64) -> f64 {
    let (nx, ny, pml) = (200, 4, 20);
    let source_i = pml + 10;
    let mut solver = plane_wave_channel(nx, ny, pml, source_i, None, freq_hz);
    let first = source_i + 5;
    let gap = (spacing_m / DX).round() as usize;
    let cells: Vec<(usize, usize)> = (first..=first + gap).map(|i| (i, 1)).collect();
    let settle = (3.0 / (freq_hz * DT)).ceil() as usize + (4.0 * nx as f64 * DX / 340.0 / DT) as usize;
    let amps = steady_amplitudes(&mut solver, freq_hz, settle, &cells);
    let mut phase = 0.0;
    for w in amps.windows(2) {
        phase += (w[0] * w[1].conj()).arg();
    }
    // delay = phase lag / omega; speed = distance / delay
    let delay = phase / (TAU * freq_hz);
    gap as f64 * DX / delay
}

/// Steady-state amplitude `(r, |p|)` along a ray from a single point source
/// of free-field amplitude `amplitude` (at 1 m) in uniform air.
pub fn point_source_profile(freq_hz: f64, amplitude: f64) -> Vec<(f64, f64)> {
    use sonoseg::acoustics::point_source_gain;
    let (n, pml) = (260, 20);
    let c = n / 2;
    let medium = MediumMap::uniform(n, n, Material::AIR);
    let injection = Injection {
        cell: (c, c),
        gain: point_source_gain(amplitude, freq_hz, Material::AIR, DX, DT),
        omega: TAU * freq_hz,
        phase: 0.0,
        ramp_steps: (3.0 / (freq_hz * DT)).ceil() as usize,
        stop_step: None,
    };
    let mut solver = Solver::new(&medium, DX, DT, pml, PmlAxes::BOTH, 1e-4, vec![injection]).unwrap();
    let cells: Vec<(usize, usize)> = (c + 1..n - pml).map(|i| (i, c)).collect();
    let settle = (3.0 / (freq_hz * DT)).ceil() as usize + (3.0 * n as f64 * DX / 340.0 / DT) as usize;
    let amps = steady_amplitudes(&mut solver, freq_hz, settle, &cells);
    cells
        .iter()
        .zip(amps)
        .map(|(&(i, _), a)| ((i - c) as f64 * DX, a.norm()))
        .collect()
}
