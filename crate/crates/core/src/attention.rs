//! Soft attention correspondences between atlas and shape embeddings, the warp onto the
//! atlas domain, and the refinement loss that keeps warped shapes faithful and smooth.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::topology::Topology;

/// Row-stochastic `N_μ × N_k` attention map.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMap {
    pub phi: Mat,
    pub temperature: f64,
}

impl CorrespondenceMap {
    pub fn atlas_size(&self) -> usize {
        self.phi.nrows()
    }

    pub fn source_size(&self) -> usize {
        self.phi.ncols()
    }

    /// Largest deviation of a row sum from one.
    pub fn row_sum_error(&self) -> f64 {
        self.phi.rows().into_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// A shape resampled onto the atlas vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedShape {
    pub positions: Mat,
    pub atlas_neighbours: Vec<Vec<usize>>,
    pub source_id: String,
}

/// `λ = scale / √d_z`
pub fn temperature(scale: f64, latent_dim: usize) -> f64 {
    scale / (latent_dim as f64).sqrt()
}

/// `φ = softmax(λ Z_μ Z_kᵀ)` with the softmax taken along each row (over source vertices).
pub fn compute_attention(z_atlas: &Mat, z_shape: &Mat, lambda: f64) -> Result<CorrespondenceMap> {
    if z_atlas.ncols() != z_shape.ncols() {
        return Err(Error::dim(format!("embedding widths {} vs {}", z_atlas.ncols(), z_shape.ncols())));
    }
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("temperature must be non-negative, got {lambda}")));
    }
    let logits = z_atlas.dot(&z_shape.t()) * lambda;
    Ok(CorrespondenceMap { phi: softmax_rows(&logits), temperature: lambda })
}

pub fn attention_on_tape(tape: &mut Tape, z_atlas: Var, z_shape: Var, lambda: f64) -> Result<Var> {
    if tape.shape(z_atlas).1 != tape.shape(z_shape).1 {
        return Err(Error::dim("embedding widths differ"));
    }
    let logits = tape.matmul_nt(z_atlas, z_shape);
    let logits = tape.scale(logits, lambda);
    Ok(tape.softmax_rows(logits))
}

/// `X′ = φ · X_k` over the positional columns of the source.
pub fn warp(map: &CorrespondenceMap, source_positions: &Mat) -> Result<Mat> {
    if map.source_size() != source_positions.nrows() {
        return Err(Error::dim(format!(
            "map has {} columns but the source has {} vertices",
            map.source_size(),
            source_positions.nrows()
        )));
    }
    Ok(map.phi.dot(&source_positions.slice(ndarray::s![.., 0..3])))
}

pub fn warp_shape(
    map: &CorrespondenceMap,
    source_positions: &Mat,
    atlas: &Topology,
    source_id: impl Into<String>,
) -> Result<NormalizedShape> {
    if map.atlas_size() != atlas.node_count() {
        return Err(Error::dim(format!("map has {} rows for an atlas of {}", map.atlas_size(), atlas.node_count())));
    }
    Ok(NormalizedShape {
        positions: warp(map, source_positions)?,
        atlas_neighbours: atlas.neighbours.clone(),
        source_id: source_id.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementWeights {
    pub cd: f64,
    pub lap: f64,
}

impl Default for RefinementWeights {
    fn default() -> Self {
        Self::lv()
    }
}

impl RefinementWeights {
    pub fn lv() -> Self {
        Self { cd: 1.0, lap: 1.0 }
    }

    pub fn liver() -> Self {
        Self { cd: 1.0, lap: 1.2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cd < 0.0 {
            return Err(Error::NegativeWeight { name: "w_cd", value: self.cd });
        }
        if self.lap < 0.0 {
            return Err(Error::NegativeWeight { name: "w_lap", value: self.lap });
        }
        Ok(())
    }
}

/// `w_cd · CD(source, warped) + w_lap · L_lap(warped)` on the tape.
pub fn refinement_loss_on_tape(
    tape: &mut Tape,
    source_positions: Var,
    warped: Var,
    atlas: &Topology,
    weights: &RefinementWeights,
) -> Result<Var> {
    weights.validate()?;
    let cd = tape.chamfer(source_positions, warped);
    let cd = tape.scale(cd, weights.cd);
    let delta = tape.sparse(&atlas.laplacian, warped);
    let lap = tape.sum_sq(delta);
    let n = tape.shape(warped).0 as f64;
    let lap = tape.scale(lap, weights.lap / n);
    Ok(tape.add(cd, lap))
}

pub fn refinement_loss(source_positions: &Mat, warped: &NormalizedShape, weights: &RefinementWeights) -> Result<f64> {
    weights.validate()?;
    let src = source_positions.slice(ndarray::s![.., 0..3]).to_owned();
    let cd = crate::mesh::chamfer_distance(&src, &warped.positions)?;
    let lap = crate::mesh::laplacian_loss(&warped.positions, &warped.atlas_neighbours)?;
    Ok(weights.cd * cd + weights.lap * lap)
}

/// Header of a dense attention-map file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiHeader {
    pub n_atlas: usize,
    pub n_source: usize,
    pub lambda: f64,
    pub dtype: String,
    pub compression: String,
}

const PHI_MAGIC: &[u8; 4] = b"PHI1";

/// Layout: `PHI1`, little-endian `u32` header length, JSON header, then the
/// zlib-compressed row-major `f32` little-endian matrix.
pub fn write_phi(path: &Path, map: &CorrespondenceMap) -> Result<()> {
    let header = PhiHeader {
        n_atlas: map.atlas_size(),
        n_source: map.source_size(),
        lambda: map.temperature,
        dtype: "f32le".into(),
        compression: "zlib".into(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut file = File::create(path)?;
    file.write_all(PHI_MAGIC)?;
    file.write_all(&(json.len() as u32).to_le_bytes())?;
    file.write_all(&json)?;
    let mut enc = ZlibEncoder::new(file, Compression::default());
    for v in map.phi.iter() {
        enc.write_all(&(*v as f32).to_le_bytes())?;
    }
    enc.finish()?;
    Ok(())
}

pub fn read_phi(path: &Path) -> Result<(PhiHeader, Mat)> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != PHI_MAGIC {
        return Err(Error::Parse { path: path.to_owned(), msg: "bad magic".into() });
    }
    let mut len = [0u8; 4];
    file.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    file.read_exact(&mut json)?;
    let header: PhiHeader = serde_json::from_slice(&json)?;
    let mut raw = Vec::new();
    ZlibDecoder::new(file).read_to_end(&mut raw)?;
    let expected = header.n_atlas * header.n_source * 4;
    if raw.len() != expected {
        return Err(Error::Parse { path: path.to_owned(), msg: format!("payload {} bytes, expected {expected}", raw.len()) });
    }
    let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    let phi = Mat::from_shape_vec((header.n_atlas, header.n_source), values).expect("size checked");
    Ok((header, phi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    fn random_stochastic(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        let mut m = Mat::from_shape_fn((r, c), |_| rng.random_range(0.0..1.0));
        for mut row in m.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        m
    }

    #[test]
    fn zero_temperature_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let map = compute_attention(&random_mat(&mut rng, 4, 3), &random_mat(&mut rng, 5, 3), 0.0).unwrap();
        assert!(map.phi.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn large_temperature_is_one_hot() {
        // rows of distinct norms along a common direction: each row's best match is itself
        let z = array![[1.0, 0.0], [0.0, 2.0], [-3.0, 0.0], [0.0, -1.5]];
        let map = compute_attention(&z, &z, 1e4).unwrap();
        for i in 0..4 {
            assert!(map.phi[[i, i]] > 0.999);
        }
    }

    #[test]
    fn matches_row_softmax_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (za, zk) = (random_mat(&mut rng, 2, 4), random_mat(&mut rng, 3, 4));
        let map = compute_attention(&za, &zk, 1.0).unwrap();
        for i in 0..2 {
            let logits: Vec<f64> = (0..3).map(|j| (0..4).map(|d| za[[i, d]] * zk[[j, d]]).sum()).collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for j in 0..3 {
                assert!((map.phi[[i, j]] - logits[j].exp() / z).abs() < 1e-12);
            }
        }
        assert!(compute_attention(&za, &random_mat(&mut rng, 3, 2), 1.0).is_err());
    }

    #[test]
    fn warp_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_mat(&mut rng, 4, 3);
        let id = CorrespondenceMap { phi: Mat::eye(4), temperature: 1.0 };
        assert_eq!(warp(&id, &x).unwrap(), x);
        let uniform = CorrespondenceMap { phi: Mat::from_elem((3, 4), 0.25), temperature: 0.0 };
        let centroid = x.mean_axis(ndarray::Axis(0)).unwrap();
        for r in warp(&uniform, &x).unwrap().rows() {
            for k in 0..3 {
                assert!((r[k] - centroid[k]).abs() < 1e-15);
            }
        }
        let phi = random_stochastic(&mut rng, 5, 4);
        let out = warp(&CorrespondenceMap { phi: phi.clone(), temperature: 1.0 }, &x).unwrap();
        for j in 0..5 {
            for k in 0..3 {
                let oracle: f64 = (0..4).map(|i| phi[[j, i]] * x[[i, k]]).sum();
                assert!((out[[j, k]] - oracle).abs() < 1e-12);
            }
        }
        assert!(warp(&CorrespondenceMap { phi, temperature: 1.0 }, &random_mat(&mut rng, 3, 3)).is_err());
    }

    #[test]
    fn refinement_loss_examples() {
        let pos = array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let nb = vec![vec![1], vec![0, 2], vec![1]];
        // ends are not at their neighbour mean, so use a flat cycle instead for the zero case
        let tri = array![[1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0]];
        let tri_nb = vec![vec![1, 2], vec![0, 2], vec![0, 1]];
        let w = RefinementWeights::lv();
        let flat = NormalizedShape { positions: tri.clone(), atlas_neighbours: tri_nb, source_id: "a".into() };
        assert_eq!(refinement_loss(&tri, &flat, &w).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src = random_mat(&mut rng, 5, 3);
        let warped = NormalizedShape { positions: pos.clone(), atlas_neighbours: nb.clone(), source_id: "b".into() };
        let base = refinement_loss(&src, &warped, &RefinementWeights { cd: 1.0, lap: 0.0 }).unwrap();
        let doubled = refinement_loss(&src, &warped, &RefinementWeights { cd: 2.0, lap: 0.0 }).unwrap();
        assert_eq!(doubled, 2.0 * base);
        let total = refinement_loss(&src, &warped, &RefinementWeights::liver()).unwrap();
        let cd = crate::mesh::chamfer_distance(&src, &pos).unwrap();
        let lap = crate::mesh::laplacian_loss(&pos, &nb).unwrap();
        assert!((total - (cd + 1.2 * lap)).abs() < 1e-12);
        assert!(refinement_loss(&src, &warped, &RefinementWeights { cd: -1.0, lap: 0.0 }).is_err());

        // the tape version agrees
        let topo = Topology::from_neighbours(nb).unwrap();
        let mut tape = Tape::new();
        let s = tape.leaf(src.clone());
        let p = tape.leaf(pos);
        let l = refinement_loss_on_tape(&mut tape, s, p, &topo, &RefinementWeights::liver()).unwrap();
        assert!((tape.scalar(l) - total).abs() < 1e-12);
    }

    #[test]
    fn phi_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let map = CorrespondenceMap { phi: random_stochastic(&mut rng, 6, 9), temperature: 2.5 };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phi.bin");
        write_phi(&path, &map).unwrap();
        let (header, phi) = read_phi(&path).unwrap();
        assert_eq!((header.n_atlas, header.n_source, header.lambda), (6, 9, 2.5));
        for (a, b) in phi.iter().zip(map.phi.iter()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    proptest! {
        #[test]
        fn attention_invariants(seed in 0u64..1000, shift in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (za, zk) = (random_mat(&mut rng, 5, 3), random_mat(&mut rng, 7, 3));
            let map = compute_attention(&za, &zk, 2.0).unwrap();
            prop_assert!(map.row_sum_error() < 1e-12);
            prop_assert!(map.phi.iter().all(|&v| (0.0..=1.0).contains(&v)));
            // shifting a row of logits by a constant leaves the map unchanged
            let mut logits = za.dot(&zk.t()) * 2.0;
            for (i, mut row) in logits.rows_mut().into_iter().enumerate() {
                row += shift * (i as f64 + 1.0);
            }
            let shifted = softmax_rows(&logits);
            for (a, b) in shifted.iter().zip(map.phi.iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            // warped vertices stay inside the source bounding box
            let x = random_mat(&mut rng, 7, 3) * 10.0;
            let out = warp(&map, &x).unwrap();
            for k in 0..3 {
                let col = x.column(k);
                let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
                prop_assert!(out.column(k).iter().all(|&v| v >= lo - 1e-9 && v <= hi + 1e-9));
            }
            // permuting source vertices together with φ's columns leaves the warp unchanged
            let perm: Vec<usize> = (0..7).rev().collect();
            let px = Mat::from_shape_fn((7, 3), |(i, k)| x[[perm[i], k]]);
            let pphi = Mat::from_shape_fn((5, 7), |(j, i)| map.phi[[j, perm[i]]]);
            let pout = warp(&CorrespondenceMap { phi: pphi, temperature: 2.0 }, &px).unwrap();
            for (a, b) in pout.iter().zip(out.iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
