//! Synthetic cohorts of closed surfaces with per-shape vertex counts and a known continuous
//! deformation field.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::dot3;
use crate::cohort::{Cohort, CohortEntry};
use crate::error::{Error, Result};
use crate::mesh::decimate::decimate;
use crate::mesh::{icosphere, Point, SurfaceMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Ellipsoid,
    BumpySphere,
    Bimodal,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ellipsoid" => Ok(Family::Ellipsoid),
            "bumpy-sphere" => Ok(Family::BumpySphere),
            "bimodal" => Ok(Family::Bimodal),
            _ => Err(Error::InvalidArgument(format!("unknown family {s}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub family: Family,
    pub count: usize,
    pub n_lo: usize,
    pub n_hi: usize,
    pub amplitude: f64,
    pub seed: u64,
}

/// Vertex count of the finest base sphere.
pub const MAX_VERTICES: usize = 642;

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_lo < 12 || self.n_lo > self.n_hi || self.n_hi > MAX_VERTICES {
            return Err(Error::InvalidArgument(format!(
                "vertex range [{}, {}] must satisfy 12 ≤ lo ≤ hi ≤ {MAX_VERTICES}",
                self.n_lo, self.n_hi
            )));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidArgument(format!("amplitude must be non-negative, got {}", self.amplitude)));
        }
        Ok(())
    }
}

/// Gaussian-profile radial bump on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub centre: Point,
    pub height: f64,
    pub width: f64,
}

/// `x(u) = axes ⊙ u · (1 + Σ_b h_b exp(−(1 − u·c_b) / w_b²))` for unit directions `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationField {
    pub axes: [f64; 3],
    pub bumps: Vec<Bump>,
}

impl DeformationField {
    pub fn identity() -> Self {
        Self { axes: [1.0; 3], bumps: Vec::new() }
    }

    pub fn radius(&self, u: &Point) -> f64 {
        1.0 + self.bumps.iter().map(|b| b.height * (-(1.0 - dot3(u, &b.centre)) / (b.width * b.width)).exp()).sum::<f64>()
    }

    pub fn eval(&self, direction: &Point) -> Point {
        let len = dot3(direction, direction).sqrt();
        let u = direction.map(|c| c / len);
        let r = self.radius(&u);
        [self.axes[0] * u[0] * r, self.axes[1] * u[1] * r, self.axes[2] * u[2] * r]
    }
}

const BUMPS: usize = 4;
const BUMP_WIDTH: f64 = 0.55;
pub const PROLATE_ASPECT: f64 = 1.6;
pub const OBLATE_ASPECT: f64 = 0.6;

fn unit_vector(rng: &mut ChaCha8Rng) -> Point {
    loop {
        let p: Point = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let n = dot3(&p, &p);
        if n > 1e-6 && n <= 1.0 {
            let n = n.sqrt();
            return p.map(|c| c / n);
        }
    }
}

fn random_bumps(rng: &mut ChaCha8Rng, amplitude: f64) -> Vec<Bump> {
    (0..BUMPS)
        .map(|_| Bump { centre: unit_vector(rng), height: amplitude * rng.random_range(-1.0..1.0), width: BUMP_WIDTH })
        .collect()
}

/// Volume-preserving spheroid with polar axis `z` stretched by `aspect`.
fn spheroid_axes(aspect: f64) -> [f64; 3] {
    let a = aspect.powf(-1.0 / 3.0);
    [a, a, a * aspect]
}

fn base_sphere(n: usize) -> SurfaceMesh {
    let level = (0..=3).find(|&l| 10 * 4usize.pow(l as u32) + 2 >= n).unwrap_or(3);
    icosphere(level, 1.0)
}

/// Bump-free canonical members of `family` on an icosphere with `subdivisions` levels, used as
/// initial atlases. One shape is the unit sphere; two bimodal shapes are the prolate and the
/// oblate spheroid, in label order.
pub fn canonical_shapes(family: Family, count: usize, subdivisions: usize) -> Result<Vec<SurfaceMesh>> {
    let sphere = icosphere(subdivisions, 1.0);
    let deform = |axes: [f64; 3]| SurfaceMesh {
        vertices: sphere.vertices.iter().map(|p| DeformationField { axes, bumps: Vec::new() }.eval(p)).collect(),
        faces: sphere.faces.clone(),
    };
    match (family, count) {
        (_, 1) => Ok(vec![sphere.clone()]),
        (Family::Bimodal, 2) => Ok(vec![deform(spheroid_axes(PROLATE_ASPECT)), deform(spheroid_axes(OBLATE_ASPECT))]),
        _ => Err(Error::InvalidArgument(format!("no {count} canonical shapes for {family:?}"))),
    }
}

/// Centroid moved to the origin; with `unit_rms` the RMS vertex radius becomes one.
pub fn procrustes_center(mesh: &SurfaceMesh, unit_rms: bool) -> SurfaceMesh {
    let c = mesh.centroid();
    let mut out = mesh.translated([-c[0], -c[1], -c[2]]);
    if unit_rms && !out.vertices.is_empty() {
        let rms = (out.vertices.iter().map(|v| dot3(v, v)).sum::<f64>() / out.vertices.len() as f64).sqrt();
        if rms > 0.0 {
            for v in out.vertices.iter_mut() {
                *v = v.map(|x| x / rms);
            }
        }
    }
    out
}

pub fn generate_population(spec: &PopulationSpec) -> Result<Cohort> {
    spec.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels: Option<Vec<usize>> = (spec.family == Family::Bimodal).then(|| {
        let mut l: Vec<usize> = (0..spec.count).map(|i| usize::from(i >= spec.count / 2)).collect();
        l.shuffle(&mut master);
        l
    });
    let mut entries = Vec::with_capacity(spec.count);
    for k in 0..spec.count {
        let mut rng = ChaCha8Rng::seed_from_u64(master.random());
        let n = rng.random_range(spec.n_lo..=spec.n_hi);
        let label = labels.as_ref().map(|l| l[k]);
        let field = match spec.family {
            Family::Ellipsoid => DeformationField {
                axes: [0; 3].map(|_| 1.0 + spec.amplitude * rng.random_range(-1.0..1.0)),
                bumps: Vec::new(),
            },
            Family::BumpySphere => DeformationField { axes: [1.0; 3], bumps: random_bumps(&mut rng, spec.amplitude) },
            Family::Bimodal => DeformationField {
                axes: spheroid_axes(if label == Some(0) { PROLATE_ASPECT } else { OBLATE_ASPECT }),
                bumps: random_bumps(&mut rng, spec.amplitude),
            },
        };
        let base = base_sphere(n);
        let coarse = if n < base.vertices.len() { decimate(&base, n, 1.0, &mut rng)? } else { base };
        let deformed = SurfaceMesh {
            vertices: coarse.vertices.iter().map(|p| field.eval(p)).collect(),
            faces: coarse.faces,
        };
        entries.push(CohortEntry {
            id: format!("shape_{k:03}"),
            mesh: procrustes_center(&deformed, false),
            label,
            truth: Some(field),
        });
    }
    Ok(Cohort { entries, spec: Some(spec.clone()) })
}
