//! Triangle meshes, their graphs, and the geometric terms every loss is built from.

pub mod decimate;
pub mod io;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{cross3, dot3, Mat};
use crate::error::{Error, Result};

pub type Point = [f64; 3];
pub type Face = [usize; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMesh {
    pub vertices: Vec<Point>,
    pub faces: Vec<Face>,
}

impl SurfaceMesh {
    /// Builds a mesh and checks index bounds, degenerate faces and vertex count.
    pub fn new(vertices: Vec<Point>, faces: Vec<Face>) -> Result<Self> {
        let mesh = Self { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if n < 3 {
            return Err(Error::InvalidMesh(format!("{n} vertices, need at least 3")));
        }
        for (fi, f) in self.faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&v| v >= n) {
                return Err(Error::InvalidMesh(format!("face {fi} references vertex {bad} of {n}")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} is degenerate: {f:?}")));
            }
        }
        if self.vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidMesh("non-finite vertex coordinate".into()));
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn positions(&self) -> Mat {
        points_to_mat(&self.vertices)
    }

    pub fn with_positions(&self, positions: &Mat) -> SurfaceMesh {
        SurfaceMesh { vertices: mat_to_points(positions), faces: self.faces.clone() }
    }

    /// Undirected edges `(a, b)` with `a < b`, each mapped to the faces using it.
    pub fn edge_faces(&self) -> BTreeMap<(usize, usize), Vec<usize>> {
        let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                map.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        map
    }

    /// Closed means every edge is shared by exactly two faces.
    pub fn boundary_edge(&self) -> Option<(usize, usize)> {
        self.edge_faces().into_iter().find(|(_, fs)| fs.len() != 2).map(|(e, _)| e)
    }

    pub fn is_closed(&self) -> bool {
        !self.faces.is_empty() && self.boundary_edge().is_none()
    }

    /// Pairs of faces sharing an edge.
    pub fn adjacent_face_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for fs in self.edge_faces().values() {
            for i in 0..fs.len() {
                for j in i + 1..fs.len() {
                    pairs.push((fs[i], fs[j]));
                }
            }
        }
        pairs
    }

    pub fn neighbours(&self) -> Vec<BTreeSet<usize>> {
        let mut nb = vec![BTreeSet::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                nb[a].insert(b);
                nb[b].insert(a);
            }
        }
        nb
    }

    pub fn translated(&self, t: Point) -> SurfaceMesh {
        let vertices = self.vertices.iter().map(|v| [v[0] + t[0], v[1] + t[1], v[2] + t[2]]).collect();
        SurfaceMesh { vertices, faces: self.faces.clone() }
    }

    pub fn flipped(&self) -> SurfaceMesh {
        let faces = self.faces.iter().map(|f| [f[0], f[2], f[1]]).collect();
        SurfaceMesh { vertices: self.vertices.clone(), faces }
    }

    pub fn centroid(&self) -> Point {
        let n = self.vertices.len() as f64;
        let mut c = [0.0; 3];
        for v in &self.vertices {
            for k in 0..3 {
                c[k] += v[k];
            }
        }
        c.map(|x| x / n)
    }

    /// Unnormalised face normal `(b − a) × (c − a)` (length is twice the area).
    pub fn face_normal(&self, f: usize) -> Point {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
        cross3(&sub3(&b, &a), &sub3(&c, &a))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// Positions only (3 columns).
    #[default]
    #[serde(alias = "sgcn")]
    Spatial,
    /// Positions followed by unit vertex normals (6 columns).
    #[serde(alias = "hgcn")]
    Hybrid,
}

impl FeatureMode {
    pub fn width(self) -> usize {
        match self {
            FeatureMode::Spatial => 3,
            FeatureMode::Hybrid => 6,
        }
    }
}

/// Graph view of a mesh: symmetric binary adjacency (as neighbour lists) and node features.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeGraph {
    pub neighbours: Vec<Vec<usize>>,
    pub features: Mat,
    pub mode: FeatureMode,
}

impl ShapeGraph {
    pub fn cardinality(&self) -> usize {
        self.neighbours.len()
    }

    pub fn positions(&self) -> Mat {
        self.features.slice(ndarray::s![.., 0..3]).to_owned()
    }

    pub fn dense_adjacency(&self) -> Array2<u8> {
        let n = self.cardinality();
        let mut a = Array2::zeros((n, n));
        for (i, nb) in self.neighbours.iter().enumerate() {
            for &j in nb {
                a[[i, j]] = 1;
            }
        }
        a
    }
}

/// Neighbour lists derived from face edges; rejects isolated vertices.
pub fn mesh_adjacency(mesh: &SurfaceMesh) -> Result<Vec<Vec<usize>>> {
    let nb = mesh.neighbours();
    if let Some(i) = nb.iter().position(|s| s.is_empty()) {
        return Err(Error::IsolatedVertex(i));
    }
    Ok(nb.into_iter().map(|s| s.into_iter().collect()).collect())
}

pub fn build_graph(mesh: &SurfaceMesh, mode: FeatureMode) -> Result<ShapeGraph> {
    mesh.validate()?;
    let neighbours = mesh_adjacency(mesh)?;
    let positions = mesh.positions();
    let features = match mode {
        FeatureMode::Spatial => positions,
        FeatureMode::Hybrid => {
            let normals = vertex_normals(mesh)?;
            ndarray::concatenate(ndarray::Axis(1), &[positions.view(), normals.view()])
                .expect("row counts agree")
        }
    };
    Ok(ShapeGraph { neighbours, features, mode })
}

/// Normalised area-weighted mean of incident face normals, one unit row per vertex.
pub fn vertex_normals(mesh: &SurfaceMesh) -> Result<Mat> {
    mesh.validate()?;
    let mut acc = vec![[0.0; 3]; mesh.vertices.len()];
    for fi in 0..mesh.faces.len() {
        // the cross product already carries twice the face area
        let n = mesh.face_normal(fi);
        for &v in &mesh.faces[fi] {
            for k in 0..3 {
                acc[v][k] += n[k];
            }
        }
    }
    let mut out = Mat::zeros((mesh.vertices.len(), 3));
    for (i, n) in acc.iter().enumerate() {
        let len = dot3(n, n).sqrt();
        if len <= f64::MIN_POSITIVE || !len.is_finite() {
            return Err(Error::DegenerateNormal(i));
        }
        for k in 0..3 {
            out[[i, k]] = n[k] / len;
        }
    }
    Ok(out)
}

fn check_nonempty(a: &Mat, b: &Mat) -> Result<()> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::EmptyPointSet);
    }
    if a.ncols() != b.ncols() {
        return Err(Error::dim(format!("point dimension {} vs {}", a.ncols(), b.ncols())));
    }
    Ok(())
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// For each row of `a`, the squared distance to its nearest row in `b`.
fn nearest_sq(a: &Mat, b: &Mat) -> Vec<f64> {
    a.rows()
        .into_iter()
        .map(|ra| b.rows().into_iter().map(|rb| sq_dist(ra, rb)).fold(f64::INFINITY, f64::min))
        .collect()
}

/// Sum of squared nearest-neighbour distances in both directions.
pub fn chamfer_distance(a: &Mat, b: &Mat) -> Result<f64> {
    check_nonempty(a, b)?;
    Ok(nearest_sq(a, b).iter().sum::<f64>() + nearest_sq(b, a).iter().sum::<f64>())
}

/// Symmetric Hausdorff distance.
pub fn hausdorff_distance(a: &Mat, b: &Mat) -> Result<f64> {
    check_nonempty(a, b)?;
    let ab = nearest_sq(a, b).into_iter().fold(0.0, f64::max);
    let ba = nearest_sq(b, a).into_iter().fold(0.0, f64::max);
    Ok(ab.max(ba).sqrt())
}

/// Uniform-weight graph Laplacian `I − D⁻¹A` as a sparse operator.
pub fn uniform_laplacian(neighbours: &[Vec<usize>]) -> Result<crate::sparse::CsrMatrix> {
    let n = neighbours.len();
    let mut triplets = Vec::new();
    for (i, nb) in neighbours.iter().enumerate() {
        if nb.is_empty() {
            return Err(Error::IsolatedVertex(i));
        }
        triplets.push((i, i, 1.0));
        let w = 1.0 / nb.len() as f64;
        for &j in nb {
            triplets.push((i, j, -w));
        }
    }
    Ok(crate::sparse::CsrMatrix::from_triplets(n, n, &triplets))
}

/// Mean over vertices of `‖x_j − mean_{q∈N(j)} x_q‖²`.
pub fn laplacian_loss(positions: &Mat, neighbours: &[Vec<usize>]) -> Result<f64> {
    if positions.nrows() != neighbours.len() {
        return Err(Error::dim(format!("{} positions for {} nodes", positions.nrows(), neighbours.len())));
    }
    let lap = uniform_laplacian(neighbours)?;
    let delta = lap.mul_dense(positions);
    Ok(delta.iter().map(|v| v * v).sum::<f64>() / positions.nrows() as f64)
}

/// Mean of `1 − cos θ` over face pairs sharing an edge.
pub fn normal_consistency(mesh: &SurfaceMesh) -> Result<f64> {
    mesh.validate()?;
    let pairs = mesh.adjacent_face_pairs();
    if pairs.is_empty() {
        return Err(Error::NoSharedEdge);
    }
    let units: Vec<Point> = (0..mesh.faces.len())
        .map(|f| {
            let n = mesh.face_normal(f);
            let len = dot3(&n, &n).sqrt();
            n.map(|c| c / len)
        })
        .collect();
    let total: f64 = pairs.iter().map(|&(f, g)| 1.0 - dot3(&units[f], &units[g])).sum();
    Ok(total / pairs.len() as f64)
}

/// Enclosed volume of a closed mesh.
pub fn mesh_volume(mesh: &SurfaceMesh) -> Result<f64> {
    Ok(signed_volume(mesh)?.abs())
}

/// Signed volume (positive for outward-oriented faces). Computed relative to the vertex
/// centroid so that it does not depend on the placement of the origin.
pub fn signed_volume(mesh: &SurfaceMesh) -> Result<f64> {
    mesh.validate()?;
    if let Some((a, b)) = mesh.boundary_edge() {
        return Err(Error::OpenMesh(a, b));
    }
    if mesh.faces.is_empty() {
        return Err(Error::InvalidMesh("no faces".into()));
    }
    let c = mesh.centroid();
    let total: f64 = mesh
        .faces
        .iter()
        .map(|f| {
            let [a, b, d] = f.map(|i| sub3(&mesh.vertices[i], &c));
            dot3(&a, &cross3(&b, &d))
        })
        .sum();
    Ok(total / 6.0)
}

pub(crate) fn sub3(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn points_to_mat(points: &[Point]) -> Mat {
    Mat::from_shape_fn((points.len(), 3), |(i, k)| points[i][k])
}

pub fn mat_to_points(m: &Mat) -> Vec<Point> {
    m.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect()
}

/// Axis-aligned unit cube `[0,1]³` with 12 outward-oriented triangles.
pub fn unit_cube() -> SurfaceMesh {
    let vertices = vec![
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [1.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 0.0, 1.0],
        [1.0, 1.0, 1.0],
        [0.0, 1.0, 1.0],
    ];
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [1, 2, 6],
        [1, 6, 5],
        [2, 3, 7],
        [2, 7, 6],
        [3, 0, 4],
        [3, 4, 7],
    ];
    SurfaceMesh { vertices, faces }
}

/// Icosphere of the given radius after `subdivisions` rounds of 1→4 splitting.
pub fn icosphere(subdivisions: usize, radius: f64) -> SurfaceMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Point> = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let mut faces: Vec<Face> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    let project = |p: Point| {
        let len = dot3(&p, &p).sqrt();
        p.map(|c| c / len)
    };
    for v in vertices.iter_mut() {
        *v = project(*v);
    }
    for _ in 0..subdivisions {
        let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Point>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let (p, q) = (vertices[a], vertices[b]);
                vertices.push(project([(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0, (p[2] + q[2]) / 2.0]));
                vertices.len() - 1
            })
        };
        for f in &faces {
            let ab = mid(f[0], f[1], &mut vertices);
            let bc = mid(f[1], f[2], &mut vertices);
            let ca = mid(f[2], f[0], &mut vertices);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    let vertices = vertices.into_iter().map(|p| p.map(|c| c * radius)).collect();
    SurfaceMesh { vertices, faces }
}
