//! Random object shapes, their rasterization into silhouette masks, and the
//! acoustic medium map built from a mask.
//!
//! Coordinates are metres with the origin at the lower corner of the
//! observation area; cell `(i, j)` has its centre at `((i + 0.5) dx, (j + 0.5) dx)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::SilhouetteMask;
use crate::rng::Rng;

/// Fluid properties of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    /// m/s
    pub sound_speed: f64,
    /// kg/m^3
    pub density: f64,
}

impl Material {
    pub const AIR: Material = Material {
        sound_speed: 340.0,
        density: 1.21,
    };
    /// Expanded polystyrene treated as a fluid.
    pub const EPS: Material = Material {
        sound_speed: 414.0,
        density: 28.0,
    };

    pub fn impedance(&self) -> f64 {
        self.sound_speed * self.density
    }
}

/// Normal-incidence pressure reflection coefficient going from `from` into `into`.
pub fn reflection_coefficient(from: Material, into: Material) -> f64 {
    let (z1, z2) = (from.impedance(), into.impedance());
    (z2 - z1) / (z2 + z1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Ellipse {
        center: [f64; 2],
        semi_axes: [f64; 2],
        rotation: f64,
    },
    Line {
        start: [f64; 2],
        end: [f64; 2],
        thickness: f64,
    },
    Polygon {
        vertices: Vec<[f64; 2]>,
    },
}

impl Shape {
    pub fn validate(&self) -> Result<()> {
        match self {
            Shape::Ellipse { semi_axes, .. } if semi_axes.iter().any(|&a| a <= 0.0) => Err(
                Error::InvalidArgument(format!("ellipse semi-axes must be > 0: {semi_axes:?}")),
            ),
            Shape::Line { thickness, .. } if *thickness <= 0.0 => Err(Error::InvalidArgument(
                format!("line thickness must be > 0: {thickness}"),
            )),
            Shape::Polygon { vertices } if vertices.len() < 3 => Err(Error::InvalidArgument(
                "polygon needs at least 3 vertices".into(),
            )),
            Shape::Polygon { vertices } if polygon_area(vertices).abs() < 1e-12 => Err(
                Error::InvalidArgument("polygon has zero area".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Axis-aligned bounding box `[xmin, ymin, xmax, ymax]`.
    pub fn bounds(&self) -> [f64; 4] {
        match self {
            Shape::Ellipse {
                center,
                semi_axes,
                rotation,
            } => {
                let (s, c) = rotation.sin_cos();
                let hx = ((semi_axes[0] * c).powi(2) + (semi_axes[1] * s).powi(2)).sqrt();
                let hy = ((semi_axes[0] * s).powi(2) + (semi_axes[1] * c).powi(2)).sqrt();
                [center[0] - hx, center[1] - hy, center[0] + hx, center[1] + hy]
            }
            Shape::Line {
                start,
                end,
                thickness,
            } => {
                let r = thickness / 2.0;
                [
                    start[0].min(end[0]) - r,
                    start[1].min(end[1]) - r,
                    start[0].max(end[0]) + r,
                    start[1].max(end[1]) + r,
                ]
            }
            Shape::Polygon { vertices } => vertices.iter().fold(
                [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
                |b, v| [b[0].min(v[0]), b[1].min(v[1]), b[2].max(v[0]), b[3].max(v[1])],
            ),
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Ellipse {
                center,
                semi_axes,
                rotation,
            } => {
                let (s, c) = rotation.sin_cos();
                let (dx, dy) = (x - center[0], y - center[1]);
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                (u / semi_axes[0]).powi(2) + (v / semi_axes[1]).powi(2) <= 1.0
            }
            Shape::Line {
                start,
                end,
                thickness,
            } => segment_distance([x, y], *start, *end) <= thickness / 2.0,
            Shape::Polygon { vertices } => even_odd(vertices, x, y),
        }
    }

    pub fn translated(&self, by: [f64; 2]) -> Shape {
        let mv = |p: [f64; 2]| [p[0] + by[0], p[1] + by[1]];
        match self {
            Shape::Ellipse {
                center,
                semi_axes,
                rotation,
            } => Shape::Ellipse {
                center: mv(*center),
                semi_axes: *semi_axes,
                rotation: *rotation,
            },
            Shape::Line {
                start,
                end,
                thickness,
            } => Shape::Line {
                start: mv(*start),
                end: mv(*end),
                thickness: *thickness,
            },
            Shape::Polygon { vertices } => Shape::Polygon {
                vertices: vertices.iter().copied().map(mv).collect(),
            },
        }
    }
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (abx, aby) = (b[0] - a[0], b[1] - a[1]);
    let (apx, apy) = (p[0] - a[0], p[1] - a[1]);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a[0] + t * abx - p[0], a[1] + t * aby - p[1]);
    (cx * cx + cy * cy).sqrt()
}

fn even_odd(vertices: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = vertices.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (vertices[i][0], vertices[i][1]);
        let (xj, yj) = (vertices[j][0], vertices[j][1]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn polygon_area(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    (0..n)
        .map(|i| {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

/// Ranges for random shape sampling. Lengths are metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub max_area_frac: f64,
    pub ellipse_semi_axis: [f64; 2],
    pub line_length: [f64; 2],
    pub line_thickness: [f64; 2],
    pub polygon_vertices: [usize; 2],
    pub polygon_radius: [f64; 2],
    pub max_attempts: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            min_shapes: 1,
            max_shapes: 3,
            max_area_frac: 0.35,
            ellipse_semi_axis: [0.05, 0.4],
            line_length: [0.2, 1.0],
            line_thickness: [0.01, 0.05],
            polygon_vertices: [3, 8],
            polygon_radius: [0.05, 0.4],
            max_attempts: 1000,
        }
    }
}

/// Side length in metres that the default ranges were chosen for.
pub const REFERENCE_SIDE_M: f64 = 1.28;

impl GeometryConfig {
    /// Scales every length range by `side_m / 1.28`, for observation areas other
    /// than the 128 x 128 reference. Thickness keeps a floor of one cell.
    pub fn scaled_to(&self, side_m: f64, dx: f64) -> GeometryConfig {
        let s = side_m / REFERENCE_SIDE_M;
        let scale = |r: [f64; 2]| [r[0] * s, r[1] * s];
        let mut out = self.clone();
        out.ellipse_semi_axis = scale(self.ellipse_semi_axis);
        out.line_length = scale(self.line_length);
        out.polygon_radius = scale(self.polygon_radius);
        let t = scale(self.line_thickness);
        out.line_thickness = [t[0].max(dx), t[1].max(dx)];
        out
    }

    fn validate(&self) -> Result<()> {
        let ok = self.min_shapes >= 1
            && self.min_shapes <= self.max_shapes
            && self.polygon_vertices[0] >= 3
            && self.polygon_vertices[0] <= self.polygon_vertices[1]
            && self.max_attempts > 0
            && [
                self.ellipse_semi_axis,
                self.line_length,
                self.line_thickness,
                self.polygon_radius,
            ]
            .iter()
            .all(|r| r[0] > 0.0 && r[0] <= r[1]);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid geometry config: {self:?}")))
        }
    }
}

fn sample_one(rng: &mut Rng, cfg: &GeometryConfig, side: f64) -> Shape {
    let center = [rng.uniform_in(0.0, side), rng.uniform_in(0.0, side)];
    match rng.below(3) {
        0 => Shape::Ellipse {
            center,
            semi_axes: [
                rng.uniform_in(cfg.ellipse_semi_axis[0], cfg.ellipse_semi_axis[1]),
                rng.uniform_in(cfg.ellipse_semi_axis[0], cfg.ellipse_semi_axis[1]),
            ],
            rotation: rng.uniform_in(0.0, std::f64::consts::PI),
        },
        1 => {
            let len = rng.uniform_in(cfg.line_length[0], cfg.line_length[1]);
            let angle = rng.uniform_in(0.0, std::f64::consts::PI);
            let (s, c) = angle.sin_cos();
            let h = len / 2.0;
            Shape::Line {
                start: [center[0] - h * c, center[1] - h * s],
                end: [center[0] + h * c, center[1] + h * s],
                thickness: rng.uniform_in(cfg.line_thickness[0], cfg.line_thickness[1]),
            }
        }
        _ => {
            let n = cfg.polygon_vertices[0]
                + rng.below(cfg.polygon_vertices[1] - cfg.polygon_vertices[0] + 1);
            let mut angles: Vec<f64> = (0..n)
                .map(|_| rng.uniform_in(0.0, std::f64::consts::TAU))
                .collect();
            angles.sort_by(f64::total_cmp);
            let vertices = angles
                .iter()
                .map(|a| {
                    let r = rng.uniform_in(cfg.polygon_radius[0], cfg.polygon_radius[1]);
                    [center[0] + r * a.cos(), center[1] + r * a.sin()]
                })
                .collect();
            Shape::Polygon { vertices }
        }
    }
}

fn inside_area(shape: &Shape, side: f64) -> bool {
    let b = shape.bounds();
    b[0] >= 0.0 && b[1] >= 0.0 && b[2] <= side && b[3] <= side
}

/// Samples 1-3 shapes fully inside a `grid x grid` observation area whose
/// rasterized union covers a fraction in `(0, max_area_frac]`.
pub fn sample_shapes(
    rng: &mut Rng,
    cfg: &GeometryConfig,
    grid: usize,
    dx: f64,
) -> Result<Vec<Shape>> {
    cfg.validate()?;
    let side = grid as f64 * dx;
    for _ in 0..cfg.max_attempts {
        let count = cfg.min_shapes + rng.below(cfg.max_shapes - cfg.min_shapes + 1);
        let mut shapes = Vec::with_capacity(count);
        let mut tries = 0;
        while shapes.len() < count && tries < cfg.max_attempts {
            tries += 1;
            let shape = sample_one(rng, cfg, side);
            if shape.validate().is_ok() && inside_area(&shape, side) {
                shapes.push(shape);
            }
        }
        if shapes.len() < count {
            continue;
        }
        let frac = rasterize(&shapes, grid, grid, dx).area_fraction();
        if frac > 0.0 && frac <= cfg.max_area_frac {
            return Ok(shapes);
        }
    }
    Err(Error::BudgetExhausted {
        attempts: cfg.max_attempts,
        reason: format!(
            "no scene with silhouette area fraction in (0, {}]",
            cfg.max_area_frac
        ),
    })
}

/// Inclusive index range of cells whose centres may fall in `[lo, hi]`.
fn cell_span(lo: f64, hi: f64, n: usize, dx: f64) -> Option<(usize, usize)> {
    let first = (lo / dx - 0.5).floor().max(0.0);
    let last = (hi / dx - 0.5).ceil().min(n as f64 - 1.0);
    (first <= last).then_some((first as usize, last as usize))
}

/// Marks every cell whose centre lies inside any shape.
pub fn rasterize(shapes: &[Shape], width: usize, height: usize, dx: f64) -> SilhouetteMask {
    let mut mask = SilhouetteMask::empty(width, height);
    for shape in shapes {
        let b = shape.bounds();
        let (Some((i0, i1)), Some((j0, j1))) =
            (cell_span(b[0], b[2], width, dx), cell_span(b[1], b[3], height, dx))
        else {
            continue;
        };
        for i in i0..=i1 {
            for j in j0..=j1 {
                let (x, y) = ((i as f64 + 0.5) * dx, (j as f64 + 0.5) * dx);
                if mask.get(i, j) == 0 && shape.contains(x, y) {
                    mask.set(i, j, true);
                }
            }
        }
    }
    mask
}

/// Sound speed and density over the full simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MediumMap {
    nx: usize,
    ny: usize,
    pub sound_speed: Vec<f64>,
    pub density: Vec<f64>,
}

impl MediumMap {
    pub fn uniform(nx: usize, ny: usize, material: Material) -> Self {
        MediumMap {
            nx,
            ny,
            sound_speed: vec![material.sound_speed; nx * ny],
            density: vec![material.density; nx * ny],
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn set(&mut self, i: usize, j: usize, material: Material) {
        let k = i * self.ny + j;
        self.sound_speed[k] = material.sound_speed;
        self.density[k] = material.density;
    }

    pub fn material(&self, i: usize, j: usize) -> Material {
        let k = i * self.ny + j;
        Material {
            sound_speed: self.sound_speed[k],
            density: self.density[k],
        }
    }

    pub fn max_sound_speed(&self) -> f64 {
        self.sound_speed.iter().copied().fold(0.0, f64::max)
    }
}

/// Embeds the mask at offset `pad` in an air grid of `(W + 2 pad) x (H + 2 pad)`
/// and assigns EPS to silhouette cells.
pub fn build_medium(mask: &SilhouetteMask, pad: usize) -> MediumMap {
    let (w, h) = (mask.width(), mask.height());
    let mut medium = MediumMap::uniform(w + 2 * pad, h + 2 * pad, Material::AIR);
    for i in 0..w {
        for j in 0..h {
            if mask.get(i, j) == 1 {
                medium.set(i + pad, j + pad, Material::EPS);
            }
        }
    }
    medium
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eps_reflectivity_matches_impedance_ratio() {
        // exact value 0.93145, quoted as 93.2 %
        let r = reflection_coefficient(Material::AIR, Material::EPS);
        assert!((r - 0.932).abs() < 1e-3, "R = {r}");
    }

    #[test]
    fn empty_shapes_give_empty_mask() {
        assert_eq!(rasterize(&[], 8, 8, 0.01).count(), 0);
    }

    #[test]
    fn ellipse_area_close_to_analytic() {
        let e = Shape::Ellipse {
            center: [0.64, 0.64],
            semi_axes: [0.2, 0.1],
            rotation: 0.0,
        };
        let cells = rasterize(&[e], 128, 128, 0.01).count() as f64;
        let expect = std::f64::consts::PI * 20.0 * 10.0;
        assert!((cells - expect).abs() / expect < 0.05, "{cells} vs {expect}");
    }

    #[test]
    fn square_polygon_is_ten_by_ten() {
        // corners off the cell-centre lattice so the count is unambiguous
        let sq = Shape::Polygon {
            vertices: vec![[0.301, 0.301], [0.401, 0.301], [0.401, 0.401], [0.301, 0.401]],
        };
        let m = rasterize(&[sq], 128, 128, 0.01);
        assert_eq!(m.count(), 100);
        for i in 30..40 {
            for j in 30..40 {
                assert_eq!(m.get(i, j), 1);
            }
        }
    }

    #[test]
    fn line_cells_within_half_thickness() {
        let line = Shape::Line {
            start: [0.105, 0.505],
            end: [0.905, 0.505],
            thickness: 0.03,
        };
        let m = rasterize(&[line], 128, 128, 0.01);
        // body: i in 10..=90, j in 49..=51; round caps add i = 9 and i = 91,
        // where the diagonal neighbours sit 0.0141 m from the endpoint
        assert_eq!(m.count(), 83 * 3);
    }

    #[test]
    fn translation_shifts_mask() {
        let s = Shape::Polygon {
            vertices: vec![[0.2013, 0.2037], [0.5021, 0.2544], [0.3032, 0.4519]],
        };
        let a = rasterize(std::slice::from_ref(&s), 64, 64, 0.01);
        let b = rasterize(&[s.translated([0.05, 0.03])], 64, 64, 0.01);
        for i in 0..59 {
            for j in 0..61 {
                assert_eq!(a.get(i, j), b.get(i + 5, j + 3));
            }
        }
    }

    #[test]
    fn impossible_area_cap_exhausts_budget() {
        let cfg = GeometryConfig {
            max_area_frac: 0.0,
            max_attempts: 20,
            ..Default::default()
        };
        let err = sample_shapes(&mut Rng::new(1), &cfg, 128, 0.01).unwrap_err();
        assert!(matches!(err, Error::BudgetExhausted { .. }));
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = GeometryConfig::default();
        let a = sample_shapes(&mut Rng::new(7), &cfg, 128, 0.01).unwrap();
        let b = sample_shapes(&mut Rng::new(7), &cfg, 128, 0.01).unwrap();
        assert_eq!(a, b);
        assert!((1..=3).contains(&a.len()));
    }

    #[test]
    fn medium_from_mask() {
        let mut mask = SilhouetteMask::empty(4, 4);
        let air = build_medium(&mask, 2);
        assert!(air.sound_speed.iter().all(|&c| c == 340.0));
        mask.set(1, 2, true);
        let m = build_medium(&mask, 2);
        assert_eq!((m.nx(), m.ny()), (8, 8));
        assert_eq!(m.material(3, 4), Material::EPS);
        assert_eq!(m.density.iter().filter(|&&d| d == 28.0).count(), 1);
    }
}
