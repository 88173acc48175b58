//! Procedural 2D material phantoms and their binary occupancy images.
//!
//! Coordinates are in millimetres with the origin at the image centre, `x`
//! to the right and `y` up. Pixel `(row, col)` has its centre at
//! `x = (col + 0.5 - W/2)·pitch`, `y = (W/2 - row - 0.5)·pitch`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_PITCH_MM: f64 = 0.25;
pub const DEFAULT_WIDTH: usize = 96;

pub const AIR: usize = 0;
pub const HIPS: usize = 1;
pub const POLYMER: usize = 2;
pub const PAPER: usize = 3;
pub const METAL: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Material {
    pub name: String,
    /// Refractive index.
    pub n: f64,
    /// Amplitude absorption coefficient in 1/mm.
    pub alpha: f64,
    /// Opaque materials block every ray that touches them.
    pub opaque: bool,
}

impl Material {
    pub fn new(name: &str, n: f64, alpha: f64) -> Result<Self> {
        if !(n >= 1.0) || !(alpha >= 0.0) {
            return Err(Error::validation(format!(
                "material {name}: need n >= 1 and alpha >= 0, got n={n}, alpha={alpha}"
            )));
        }
        Ok(Self {
            name: name.to_owned(),
            n,
            alpha,
            opaque: false,
        })
    }

    pub fn opaque(name: &str) -> Self {
        Self {
            name: name.to_owned(),
            n: 1.0,
            alpha: 0.0,
            opaque: true,
        }
    }

    pub fn air() -> Self {
        Self {
            name: "air".to_owned(),
            n: 1.0,
            alpha: 0.0,
            opaque: false,
        }
    }
}

/// The material table shared by every phantom: indices are the `AIR`,
/// `HIPS`, `POLYMER`, `PAPER` and `METAL` constants.
pub fn standard_materials() -> Vec<Material> {
    vec![
        Material::air(),
        Material::new("HIPS-like", 1.54, 0.1).unwrap(),
        Material::new("polymer-like", 1.6, 0.15).unwrap(),
        Material::new("paper-like", 1.3, 0.3).unwrap(),
        Material::opaque("metal-like"),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub enum Geometry {
    Disk {
        center: (f64, f64),
        radius: f64,
    },
    Ring {
        center: (f64, f64),
        inner: f64,
        outer: f64,
    },
    /// Rectangle with half extents `half`, rotated counter-clockwise by `angle_deg`.
    Rect {
        center: (f64, f64),
        half: (f64, f64),
        angle_deg: f64,
    },
    Triangle {
        vertices: [(f64, f64); 3],
    },
}

impl Geometry {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Geometry::Disk { center, radius } => {
                let (dx, dy) = (x - center.0, y - center.1);
                dx * dx + dy * dy < radius * radius
            }
            Geometry::Ring {
                center,
                inner,
                outer,
            } => {
                let (dx, dy) = (x - center.0, y - center.1);
                let d2 = dx * dx + dy * dy;
                d2 >= inner * inner && d2 < outer * outer
            }
            Geometry::Rect {
                center,
                half,
                angle_deg,
            } => {
                let (s, c) = angle_deg.to_radians().sin_cos();
                let (dx, dy) = (x - center.0, y - center.1);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                u.abs() < half.0 && v.abs() < half.1
            }
            Geometry::Triangle { vertices: [a, b, c] } => {
                let cross = |p: (f64, f64), q: (f64, f64)| {
                    (q.0 - p.0) * (y - p.1) - (q.1 - p.1) * (x - p.0)
                };
                let (d1, d2, d3) = (cross(a, b), cross(b, c), cross(c, a));
                let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(neg && pos)
            }
        }
    }

    /// Axis-aligned bounding box `(xmin, xmax, ymin, ymax)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Geometry::Disk { center, radius } => (
                center.0 - radius,
                center.0 + radius,
                center.1 - radius,
                center.1 + radius,
            ),
            Geometry::Ring { center, outer, .. } => (
                center.0 - outer,
                center.0 + outer,
                center.1 - outer,
                center.1 + outer,
            ),
            Geometry::Rect {
                center,
                half,
                angle_deg,
            } => {
                let (s, c) = angle_deg.to_radians().sin_cos();
                let ex = (c * half.0).abs() + (s * half.1).abs();
                let ey = (s * half.0).abs() + (c * half.1).abs();
                (center.0 - ex, center.0 + ex, center.1 - ey, center.1 + ey)
            }
            Geometry::Triangle { vertices } => {
                let xs = vertices.map(|v| v.0);
                let ys = vertices.map(|v| v.1);
                (
                    xs.iter().copied().fold(f64::INFINITY, f64::min),
                    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    ys.iter().copied().fold(f64::INFINITY, f64::min),
                    ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                )
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Disk,
    Annulus,
    Box,
    TwoDisks,
    BoxWithConeHole,
    Composite,
}

impl ShapeKind {
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Disk => "disk",
            ShapeKind::Annulus => "annulus",
            ShapeKind::Box => "box",
            ShapeKind::TwoDisks => "two_disks",
            ShapeKind::BoxWithConeHole => "box_with_cone_hole",
            ShapeKind::Composite => "composite",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Part {
    pub geometry: Geometry,
    /// Index into the material table; `AIR` carves a hole.
    pub material: usize,
}

/// A layered shape description: later parts paint over earlier ones.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub parts: Vec<Part>,
}

impl ShapeSpec {
    pub fn disk(center: (f64, f64), radius: f64, material: usize) -> Self {
        Self {
            kind: ShapeKind::Disk,
            parts: vec![Part {
                geometry: Geometry::Disk { center, radius },
                material,
            }],
        }
    }

    pub fn annulus(center: (f64, f64), inner: f64, outer: f64, material: usize) -> Self {
        Self {
            kind: ShapeKind::Annulus,
            parts: vec![Part {
                geometry: Geometry::Ring {
                    center,
                    inner,
                    outer,
                },
                material,
            }],
        }
    }

    pub fn rect(center: (f64, f64), half: (f64, f64), angle_deg: f64, material: usize) -> Self {
        Self {
            kind: ShapeKind::Box,
            parts: vec![Part {
                geometry: Geometry::Rect {
                    center,
                    half,
                    angle_deg,
                },
                material,
            }],
        }
    }

    pub fn two_disks(
        a: ((f64, f64), f64),
        b: ((f64, f64), f64),
        material: usize,
    ) -> Self {
        Self {
            kind: ShapeKind::TwoDisks,
            parts: [a, b]
                .into_iter()
                .map(|(center, radius)| Part {
                    geometry: Geometry::Disk { center, radius },
                    material,
                })
                .collect(),
        }
    }

    pub fn box_with_cone_hole(
        center: (f64, f64),
        half: (f64, f64),
        cone: [(f64, f64); 3],
        material: usize,
    ) -> Self {
        Self {
            kind: ShapeKind::BoxWithConeHole,
            parts: vec![
                Part {
                    geometry: Geometry::Rect {
                        center,
                        half,
                        angle_deg: 0.0,
                    },
                    material,
                },
                Part {
                    geometry: Geometry::Triangle { vertices: cone },
                    material: AIR,
                },
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    width: usize,
    pitch_mm: f64,
    grid: Vec<u16>,
    occupancy: Vec<u8>,
    materials: Vec<Material>,
}

impl Phantom {
    pub fn from_grid(
        width: usize,
        pitch_mm: f64,
        grid: Vec<u16>,
        materials: Vec<Material>,
    ) -> Result<Self> {
        if grid.len() != width * width {
            return Err(Error::validation(format!(
                "grid has {} cells, expected {width}x{width}",
                grid.len()
            )));
        }
        if !(pitch_mm > 0.0) {
            return Err(Error::validation("pitch_mm must be positive"));
        }
        match materials.first() {
            Some(m) if m.n == 1.0 && m.alpha == 0.0 && !m.opaque => {}
            _ => return Err(Error::validation("material 0 must be air")),
        }
        if let Some(&bad) = grid.iter().find(|&&g| g as usize >= materials.len()) {
            return Err(Error::validation(format!(
                "grid index {bad} outside material table of {}",
                materials.len()
            )));
        }
        let occupancy = grid.iter().map(|&g| u8::from(g != 0)).collect();
        Ok(Self {
            width,
            pitch_mm,
            grid,
            occupancy,
            materials,
        })
    }

    /// Rebuilds a phantom from a persisted grid tensor of material indices.
    pub fn from_grid_tensor(grid: &Tensor, pitch_mm: f64, materials: Vec<Material>) -> Result<Self> {
        let shape = grid.shape();
        if shape.len() != 2 || shape[0] != shape[1] {
            return Err(Error::validation(format!("grid tensor must be square, got {shape:?}")));
        }
        let cells = grid
            .to_f64_vec()
            .into_iter()
            .map(|v| {
                if v >= 0.0 && v.fract() == 0.0 && v <= u16::MAX as f64 {
                    Ok(v as u16)
                } else {
                    Err(Error::validation(format!("grid value {v} is not a material index")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_grid(shape[0], pitch_mm, cells, materials)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pitch_mm(&self) -> f64 {
        self.pitch_mm
    }

    pub fn grid(&self) -> &[u16] {
        &self.grid
    }

    pub fn occupancy(&self) -> &[u8] {
        &self.occupancy
    }

    pub fn materials(&self) -> &[Material] {
        &self.materials
    }

    pub fn material_at(&self, row: usize, col: usize) -> &Material {
        &self.materials[self.grid[row * self.width + col] as usize]
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o != 0).count()
    }

    /// Distinct non-air material indices present in the grid.
    pub fn distinct_materials(&self) -> Vec<usize> {
        let mut seen = vec![false; self.materials.len()];
        for &g in &self.grid {
            seen[g as usize] = true;
        }
        (1..seen.len()).filter(|&i| seen[i]).collect()
    }

    pub fn grid_tensor(&self) -> Tensor {
        let data = self.grid.iter().map(|&g| g as f32).collect();
        Tensor::from_f32(vec![self.width, self.width], data).unwrap()
    }

    pub fn occupancy_tensor(&self) -> Tensor {
        let data = self.occupancy.iter().map(|&o| o as f32).collect();
        Tensor::from_f32(vec![self.width, self.width], data).unwrap()
    }

    pub fn occupancy_f64(&self) -> Vec<f64> {
        self.occupancy.iter().map(|&o| o as f64).collect()
    }
}

pub fn pixel_center(row: usize, col: usize, width: usize, pitch_mm: f64) -> (f64, f64) {
    let half = width as f64 / 2.0;
    (
        (col as f64 + 0.5 - half) * pitch_mm,
        (half - row as f64 - 0.5) * pitch_mm,
    )
}

pub fn rasterize(
    spec: &ShapeSpec,
    width: usize,
    pitch_mm: f64,
    materials: &[Material],
) -> Result<Phantom> {
    if width < 16 {
        return Err(Error::validation(format!("width must be >= 16, got {width}")));
    }
    let half_fov = width as f64 * pitch_mm / 2.0;
    for (i, part) in spec.parts.iter().enumerate() {
        let (x0, x1, y0, y1) = part.geometry.bounds();
        let inside = |v: f64| v >= -half_fov - 1e-9 && v <= half_fov + 1e-9;
        if ![x0, x1, y0, y1].into_iter().all(inside) {
            return Err(Error::validation(format!(
                "part {i} of {} extends outside the {:.2} mm field of view",
                spec.kind.name(),
                2.0 * half_fov
            )));
        }
        if part.material >= materials.len() {
            return Err(Error::validation(format!(
                "part {i} uses material {} but only {} are defined",
                part.material,
                materials.len()
            )));
        }
    }
    let mut grid = vec![AIR as u16; width * width];
    for row in 0..width {
        for col in 0..width {
            let (x, y) = pixel_center(row, col, width, pitch_mm);
            if let Some(part) = spec.parts.iter().rev().find(|p| p.geometry.contains(x, y)) {
                grid[row * width + col] = part.material as u16;
            }
        }
    }
    Phantom::from_grid(width, pitch_mm, grid, materials.to_vec())
}

/// Random shape of the given kind, kept inside 80% of the inscribed circle so
/// every projection angle sees the whole object.
fn random_shape(kind: ShapeKind, rng: &mut ChaCha8Rng, fov_radius: f64) -> ShapeSpec {
    let limit = 0.8 * fov_radius;
    let offset = |rng: &mut ChaCha8Rng, extent: f64| -> (f64, f64) {
        let room = (limit - extent).max(0.0);
        let r = room * rng.random::<f64>().sqrt();
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        (r * phi.cos(), r * phi.sin())
    };
    match kind {
        ShapeKind::Disk => {
            let radius = fov_radius * rng.random_range(0.25..0.55);
            let c = offset(rng, radius);
            ShapeSpec::disk(c, radius, HIPS)
        }
        ShapeKind::Annulus => {
            let outer = fov_radius * rng.random_range(0.5..0.72);
            let thickness = fov_radius * rng.random_range(0.25..0.35);
            let c = offset(rng, outer);
            ShapeSpec::annulus(c, outer - thickness, outer, HIPS)
        }
        ShapeKind::Box => {
            let half = (
                fov_radius * rng.random_range(0.22..0.45),
                fov_radius * rng.random_range(0.22..0.45),
            );
            let angle = rng.random_range(0.0..90.0);
            let c = offset(rng, half.0.hypot(half.1));
            ShapeSpec::rect(c, half, angle, HIPS)
        }
        ShapeKind::TwoDisks => {
            let ra = fov_radius * rng.random_range(0.15..0.28);
            let rb = fov_radius * rng.random_range(0.15..0.28);
            let gap = fov_radius * rng.random_range(0.08..0.2);
            let sep = ra + rb + gap;
            let phi = rng.random_range(0.0..std::f64::consts::PI);
            let (s, co) = phi.sin_cos();
            let extent = sep / 2.0 + ra.max(rb);
            let c = offset(rng, extent);
            let a = (c.0 - co * sep / 2.0, c.1 - s * sep / 2.0);
            let b = (c.0 + co * sep / 2.0, c.1 + s * sep / 2.0);
            ShapeSpec::two_disks((a, ra), (b, rb), HIPS)
        }
        ShapeKind::BoxWithConeHole => {
            let half = (
                fov_radius * rng.random_range(0.38..0.52),
                fov_radius * rng.random_range(0.38..0.52),
            );
            let c = offset(rng, half.0.hypot(half.1));
            let base_half = half.0 * rng.random_range(0.3..0.55);
            let base_y = c.1 - half.1 * 0.6;
            let apex = (
                c.0 + half.0 * rng.random_range(-0.25..0.25),
                c.1 + half.1 * rng.random_range(0.35..0.6),
            );
            let cone = [(c.0 - base_half, base_y), (c.0 + base_half, base_y), apex];
            ShapeSpec::box_with_cone_hole(c, half, cone, HIPS)
        }
        ShapeKind::Composite => composite_shape(fov_radius),
    }
}

/// Paper-like cup wall holding polymer rods and an opaque metal-like pin.
pub fn composite_shape(fov_radius: f64) -> ShapeSpec {
    let r = fov_radius;
    let mut parts = vec![Part {
        geometry: Geometry::Ring {
            center: (0.0, 0.0),
            inner: 0.62 * r,
            outer: 0.72 * r,
        },
        material: PAPER,
    }];
    for k in 0..3 {
        let phi = std::f64::consts::FRAC_PI_2 + k as f64 * std::f64::consts::TAU / 3.0;
        parts.push(Part {
            geometry: Geometry::Disk {
                center: (0.33 * r * phi.cos(), 0.33 * r * phi.sin()),
                radius: 0.13 * r,
            },
            material: POLYMER,
        });
    }
    parts.push(Part {
        geometry: Geometry::Disk {
            center: (0.0, -0.05 * r),
            radius: 0.07 * r,
        },
        material: METAL,
    });
    ShapeSpec {
        kind: ShapeKind::Composite,
        parts,
    }
}

/// The multi-material test phantom over the standard material table.
pub fn composite_phantom(width: usize, pitch_mm: f64) -> Result<Phantom> {
    let fov_radius = width as f64 * pitch_mm / 2.0;
    rasterize(&composite_shape(fov_radius), width, pitch_mm, &standard_materials())
}

const SUITE_KINDS: [ShapeKind; 5] = [
    ShapeKind::Disk,
    ShapeKind::Annulus,
    ShapeKind::Box,
    ShapeKind::TwoDisks,
    ShapeKind::BoxWithConeHole,
];

/// A deterministic suite of single-material (HIPS-like) phantoms. The first
/// five cover every non-composite kind; the rest draw kinds at random.
pub fn gen_suite(
    seed: u64,
    count: usize,
    width: usize,
    pitch_mm: f64,
) -> Result<Vec<(Phantom, String)>> {
    if count < 2 {
        return Err(Error::validation(format!("suite needs at least 2 phantoms, got {count}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fov_radius = width as f64 * pitch_mm / 2.0;
    let materials = standard_materials();
    (0..count)
        .map(|i| {
            let kind = if i < SUITE_KINDS.len() {
                SUITE_KINDS[i]
            } else {
                SUITE_KINDS[rng.random_range(0..SUITE_KINDS.len())]
            };
            let spec = random_shape(kind, &mut rng, fov_radius);
            let phantom = rasterize(&spec, width, pitch_mm, &materials)?;
            Ok((phantom, format!("{i:02}_{}", kind.name())))
        })
        .collect()
}
