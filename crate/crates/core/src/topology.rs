//! Sparse operators precomputed once per mesh connectivity.

use std::sync::Arc;

use crate::error::Result;
use crate::mesh::{mesh_adjacency, uniform_laplacian, Face, SurfaceMesh};
use crate::sparse::CsrMatrix;

/// Everything the networks and losses need to know about a fixed connectivity.
#[derive(Debug, Clone)]
pub struct Topology {
    pub neighbours: Vec<Vec<usize>>,
    /// `E × N`: `+1` at the neighbour `j`, `−1` at the centre `i` of each directed edge `(i, j)`.
    pub edge_diff: Arc<CsrMatrix>,
    /// `E × N`: picks the neighbour row `x_j` of each edge.
    pub edge_gather: Arc<CsrMatrix>,
    /// `N × E`: averages edge messages into their centre node.
    pub edge_mean: Arc<CsrMatrix>,
    /// `I − D⁻¹A`
    pub laplacian: Arc<CsrMatrix>,
    pub faces: Arc<Vec<Face>>,
    pub face_pairs: Arc<Vec<(usize, usize)>>,
}

impl Topology {
    pub fn from_mesh(mesh: &SurfaceMesh) -> Result<Self> {
        let neighbours = mesh_adjacency(mesh)?;
        let mut t = Self::from_neighbours(neighbours)?;
        t.faces = Arc::new(mesh.faces.clone());
        t.face_pairs = Arc::new(mesh.adjacent_face_pairs());
        Ok(t)
    }

    /// Operators for a bare graph; face-based terms are unavailable.
    pub fn from_neighbours(neighbours: Vec<Vec<usize>>) -> Result<Self> {
        let n = neighbours.len();
        let laplacian = Arc::new(uniform_laplacian(&neighbours)?);
        // neighbourhood of i is N(i) ∪ {i}, listed in ascending order
        let mut edges = Vec::new();
        for (i, nb) in neighbours.iter().enumerate() {
            let mut hood: Vec<usize> = nb.iter().copied().chain(std::iter::once(i)).collect();
            hood.sort_unstable();
            hood.dedup();
            for j in hood {
                edges.push((i, j));
            }
        }
        let e = edges.len();
        let mut diff = Vec::with_capacity(2 * e);
        let mut gather = Vec::with_capacity(e);
        let mut counts = vec![0usize; n];
        for (k, &(i, j)) in edges.iter().enumerate() {
            if i != j {
                diff.push((k, j, 1.0));
                diff.push((k, i, -1.0));
            }
            gather.push((k, j, 1.0));
            counts[i] += 1;
        }
        let mean: Vec<_> = edges.iter().enumerate().map(|(k, &(i, _))| (i, k, 1.0 / counts[i] as f64)).collect();
        Ok(Self {
            neighbours,
            edge_diff: Arc::new(CsrMatrix::from_triplets(e, n, &diff)),
            edge_gather: Arc::new(CsrMatrix::from_triplets(e, n, &gather)),
            edge_mean: Arc::new(CsrMatrix::from_triplets(n, e, &mean)),
            laplacian,
            faces: Arc::new(Vec::new()),
            face_pairs: Arc::new(Vec::new()),
        })
    }

    pub fn node_count(&self) -> usize {
        self.neighbours.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_gather.rows()
    }
}
