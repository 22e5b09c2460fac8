//! Closed-form atlas reconstruction from warped shapes, soft cluster weights and the
//! weighted multi-atlas update.
//!
//! The smoothness term counts each undirected atlas edge once, so that the Jacobi update
//! `(Σ w x′ + γ Σ_q x_q) / (Σ w + γ |N(j)|)` is exactly a stationary point of the objective.

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, Mat};
use crate::error::{Error, Result};
use crate::mesh::{mesh_adjacency, Face, SurfaceMesh};

#[derive(Debug, Clone, PartialEq)]
pub struct Atlas {
    pub positions: Mat,
    /// Empty when the atlas is a bare graph.
    pub faces: Vec<Face>,
    pub neighbours: Vec<Vec<usize>>,
    pub iteration: u64,
}

impl Atlas {
    pub fn from_mesh(mesh: &SurfaceMesh) -> Result<Self> {
        Ok(Self { positions: mesh.positions(), faces: mesh.faces.clone(), neighbours: mesh_adjacency(mesh)?, iteration: 0 })
    }

    pub fn from_graph(positions: Mat, neighbours: Vec<Vec<usize>>) -> Result<Self> {
        if positions.nrows() != neighbours.len() || positions.ncols() != 3 {
            return Err(Error::dim(format!("{:?} positions for {} nodes", positions.dim(), neighbours.len())));
        }
        if let Some(i) = neighbours.iter().position(Vec::is_empty) {
            return Err(Error::IsolatedVertex(i));
        }
        Ok(Self { positions, faces: Vec::new(), neighbours, iteration: 0 })
    }

    pub fn size(&self) -> usize {
        self.positions.nrows()
    }

    pub fn mesh(&self) -> SurfaceMesh {
        SurfaceMesh { vertices: crate::mesh::mat_to_points(&self.positions), faces: self.faces.clone() }
    }

    /// `γ = N_μ / max_j |N(j)|`
    pub fn default_gamma(&self) -> f64 {
        let max_deg = self.neighbours.iter().map(Vec::len).max().unwrap_or(1).max(1);
        self.size() as f64 / max_deg as f64
    }

    /// Each undirected edge once, as `(j, q)` with `j < q`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (j, nb) in self.neighbours.iter().enumerate() {
            out.extend(nb.iter().filter(|&&q| q > j).map(|&q| (j, q)));
        }
        out
    }
}

fn sq_dist_rows(a: &Mat, i: usize, b: &Mat, j: usize) -> f64 {
    (0..3).map(|k| (a[[i, k]] - b[[j, k]]).powi(2)).sum()
}

fn check_warped(warped: &[Mat], atlas: &Atlas) -> Result<()> {
    for (k, w) in warped.iter().enumerate() {
        if w.dim() != atlas.positions.dim() {
            return Err(Error::dim(format!("warped shape {k} is {:?}, atlas is {:?}", w.dim(), atlas.positions.dim())));
        }
    }
    Ok(())
}

/// `½ Σ_k w_k Σ_j |x′_kj − x_j|² + (γ/2) Σ_{edges} |x_j − x_q|²`
pub fn weighted_atlas_objective(warped: &[Mat], weights: &[f64], atlas: &Atlas, gamma: f64) -> Result<f64> {
    check_warped(warped, atlas)?;
    if weights.len() != warped.len() {
        return Err(Error::dim("one weight per warped shape required"));
    }
    let x = &atlas.positions;
    let mut data = 0.0;
    for (w, s) in weights.iter().zip(warped) {
        data += w * (0..atlas.size()).map(|j| sq_dist_rows(s, j, x, j)).sum::<f64>();
    }
    let smooth: f64 = atlas.edges().iter().map(|&(j, q)| sq_dist_rows(x, j, x, q)).sum();
    Ok(0.5 * data + 0.5 * gamma * smooth)
}

pub fn atlas_objective(warped: &[Mat], atlas: &Atlas, gamma: f64) -> Result<f64> {
    weighted_atlas_objective(warped, &vec![1.0; warped.len()], atlas, gamma)
}

/// One weighted Jacobi sweep over all atlas vertices.
pub fn weighted_sweep(warped: &[Mat], weights: &[f64], atlas: &Atlas, gamma: f64) -> Result<Atlas> {
    check_warped(warped, atlas)?;
    if weights.len() != warped.len() {
        return Err(Error::dim("one weight per warped shape required"));
    }
    if let Some(&w) = weights.iter().find(|&&w| w < 0.0) {
        return Err(Error::NegativeWeight { name: "w_km", value: w });
    }
    let total: f64 = weights.iter().sum();
    let x = &atlas.positions;
    let mut next = Mat::zeros(x.dim());
    for (j, nb) in atlas.neighbours.iter().enumerate() {
        let denom = total + gamma * nb.len() as f64;
        if denom == 0.0 {
            return Err(Error::DegenerateCluster(j));
        }
        for k in 0..3 {
            let data: f64 = weights.iter().zip(warped).map(|(w, s)| w * s[[j, k]]).sum();
            let smooth: f64 = nb.iter().map(|&q| x[[q, k]]).sum();
            next[[j, k]] = (data + gamma * smooth) / denom;
        }
    }
    Ok(Atlas { positions: next, faces: atlas.faces.clone(), neighbours: atlas.neighbours.clone(), iteration: atlas.iteration + 1 })
}

/// Single sweep of the unweighted update; `γ` defaults to the atlas rule.
pub fn update_atlas(warped: &[Mat], atlas: &Atlas, gamma: Option<f64>) -> Result<Atlas> {
    if warped.is_empty() {
        return Err(Error::InvalidArgument("no warped shapes".into()));
    }
    let gamma = gamma.unwrap_or_else(|| atlas.default_gamma());
    weighted_sweep(warped, &vec![1.0; warped.len()], atlas, gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRule {
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for SweepRule {
    fn default() -> Self {
        Self { tolerance: 1e-6, max_sweeps: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub sweeps: usize,
    pub gamma: f64,
    /// Largest vertex displacement between the input and output atlas.
    pub displacement: f64,
    pub objective: f64,
}

fn max_displacement(a: &Mat, b: &Mat) -> f64 {
    (0..a.nrows()).map(|j| sq_dist_rows(a, j, b, j).sqrt()).fold(0.0, f64::max)
}

/// Repeats weighted sweeps until no vertex moves more than `rule.tolerance`.
pub fn converge_weighted(
    warped: &[Mat],
    weights: &[f64],
    atlas: &Atlas,
    gamma: f64,
    rule: SweepRule,
) -> Result<(Atlas, SweepReport)> {
    let mut current = atlas.clone();
    let mut sweeps = 0;
    while sweeps < rule.max_sweeps {
        let next = weighted_sweep(warped, weights, &current, gamma)?;
        sweeps += 1;
        let moved = max_displacement(&next.positions, &current.positions);
        current = next;
        if moved < rule.tolerance {
            break;
        }
    }
    let report = SweepReport {
        sweeps,
        gamma,
        displacement: max_displacement(&current.positions, &atlas.positions),
        objective: weighted_atlas_objective(warped, weights, &current, gamma)?,
    };
    Ok((current, report))
}

pub fn converge_atlas(warped: &[Mat], atlas: &Atlas, gamma: Option<f64>, rule: SweepRule) -> Result<(Atlas, SweepReport)> {
    if warped.is_empty() {
        return Err(Error::InvalidArgument("no warped shapes".into()));
    }
    let gamma = gamma.unwrap_or_else(|| atlas.default_gamma());
    converge_weighted(warped, &vec![1.0; warped.len()], atlas, gamma, rule)
}

/// `d_km`: mean over atlas vertices of the squared distance between shape `k` warped onto
/// atlas `m` and that atlas. `warped[m][k]`.
pub fn distance_matrix(warped: &[Vec<Mat>], atlases: &[Atlas]) -> Result<Mat> {
    if warped.len() != atlases.len() || atlases.is_empty() {
        return Err(Error::dim("one warped set per atlas required"));
    }
    let k = warped[0].len();
    let mut d = Mat::zeros((k, atlases.len()));
    for (m, (set, atlas)) in warped.iter().zip(atlases).enumerate() {
        if set.len() != k {
            return Err(Error::dim("every atlas needs the same shapes"));
        }
        check_warped(set, atlas)?;
        for (i, s) in set.iter().enumerate() {
            d[[i, m]] = (0..atlas.size()).map(|j| sq_dist_rows(s, j, &atlas.positions, j)).sum::<f64>() / atlas.size() as f64;
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterWeights {
    pub w: Mat,
    pub alpha: f64,
}

impl ClusterWeights {
    pub fn hard_labels(&self) -> Vec<usize> {
        self.w
            .rows()
            .into_iter()
            .map(|r| r.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0)
            .collect()
    }
}

/// `α = 1 / std(d)` over all entries (population std); zero spread gives `α = 0`.
pub fn default_alpha(d: &Mat) -> f64 {
    let n = d.len() as f64;
    let mean = d.sum() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        1.0 / var.sqrt()
    } else {
        0.0
    }
}

/// `w_km = exp(−α d_km) / Σ_m exp(−α d_km)`
pub fn cluster_weights(d: &Mat, alpha: Option<f64>) -> Result<ClusterWeights> {
    if d.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument("distances must be finite and non-negative".into()));
    }
    let alpha = alpha.unwrap_or_else(|| default_alpha(d));
    if alpha < 0.0 {
        return Err(Error::InvalidArgument(format!("α must be non-negative, got {alpha}")));
    }
    Ok(ClusterWeights { w: softmax_rows(&(d * -alpha)), alpha })
}

/// `Σ_m [½ Σ_k w_km Σ_j |x′ᵐ_kj − x_mj|² + (γ_m/2) Σ_{edges of m} |x_mj − x_mq|²]`
pub fn multi_atlas_objective(atlases: &[Atlas], warped: &[Vec<Mat>], w: &Mat, gammas: Option<&[f64]>) -> Result<f64> {
    check_multi(atlases, warped, w, gammas)?;
    let mut total = 0.0;
    for (m, atlas) in atlases.iter().enumerate() {
        let gamma = gammas.map_or_else(|| atlas.default_gamma(), |g| g[m]);
        let col: Vec<f64> = w.column(m).to_vec();
        total += weighted_atlas_objective(&warped[m], &col, atlas, gamma)?;
    }
    Ok(total)
}

fn check_multi(atlases: &[Atlas], warped: &[Vec<Mat>], w: &Mat, gammas: Option<&[f64]>) -> Result<()> {
    if atlases.len() != warped.len() || atlases.len() != w.ncols() {
        return Err(Error::dim(format!("{} atlases, {} warped sets, {} weight columns", atlases.len(), warped.len(), w.ncols())));
    }
    if warped.iter().any(|s| s.len() != w.nrows()) {
        return Err(Error::dim("every warped set needs one shape per weight row"));
    }
    if gammas.is_some_and(|g| g.len() != atlases.len()) {
        return Err(Error::dim("one γ per atlas required"));
    }
    Ok(())
}

fn check_cluster_mass(atlases: &[Atlas], w: &Mat, gammas: &[f64]) -> Result<()> {
    for m in 0..atlases.len() {
        if w.column(m).sum() == 0.0 && gammas[m] == 0.0 {
            return Err(Error::DegenerateCluster(m));
        }
    }
    Ok(())
}

fn resolve_gammas(atlases: &[Atlas], gammas: Option<&[f64]>) -> Vec<f64> {
    gammas.map_or_else(|| atlases.iter().map(Atlas::default_gamma).collect(), <[f64]>::to_vec)
}

/// One weighted sweep per cluster.
pub fn update_multi_atlas(atlases: &[Atlas], warped: &[Vec<Mat>], w: &Mat, gammas: Option<&[f64]>) -> Result<Vec<Atlas>> {
    check_multi(atlases, warped, w, gammas)?;
    let gammas = resolve_gammas(atlases, gammas);
    check_cluster_mass(atlases, w, &gammas)?;
    atlases
        .iter()
        .enumerate()
        .map(|(m, a)| weighted_sweep(&warped[m], &w.column(m).to_vec(), a, gammas[m]))
        .collect()
}

pub fn converge_multi_atlas(
    atlases: &[Atlas],
    warped: &[Vec<Mat>],
    w: &Mat,
    gammas: Option<&[f64]>,
    rule: SweepRule,
) -> Result<Vec<(Atlas, SweepReport)>> {
    check_multi(atlases, warped, w, gammas)?;
    let gammas = resolve_gammas(atlases, gammas);
    check_cluster_mass(atlases, w, &gammas)?;
    atlases
        .iter()
        .enumerate()
        .map(|(m, a)| converge_weighted(&warped[m], &w.column(m).to_vec(), a, gammas[m], rule))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Ring plus random chords, so every vertex has at least two neighbours.
    fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<usize>> {
        let mut adj = vec![vec![false; n]; n];
        for i in 0..n {
            let j = (i + 1) % n;
            adj[i][j] = true;
            adj[j][i] = true;
        }
        for _ in 0..n {
            let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
            if i != j {
                adj[i][j] = true;
                adj[j][i] = true;
            }
        }
        adj.iter().map(|r| (0..n).filter(|&j| r[j]).collect()).collect()
    }

    fn random_instance(seed: u64, n: usize, k: usize) -> (Vec<Mat>, Atlas) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nb = random_graph(&mut rng, n);
        let warped = (0..k).map(|_| random_mat(&mut rng, n, 3)).collect();
        (warped, Atlas::from_graph(random_mat(&mut rng, n, 3), nb).unwrap())
    }

    /// Double loop over ordered neighbour pairs, halved to count each edge once.
    fn objective_oracle(warped: &[Mat], w: &[f64], x: &Mat, nb: &[Vec<usize>], gamma: f64) -> f64 {
        let mut data = 0.0;
        for (s, wk) in warped.iter().zip(w) {
            for j in 0..x.nrows() {
                for d in 0..3 {
                    data += wk * (s[[j, d]] - x[[j, d]]).powi(2);
                }
            }
        }
        let mut smooth = 0.0;
        for j in 0..x.nrows() {
            for &q in &nb[j] {
                for d in 0..3 {
                    smooth += (x[[j, d]] - x[[q, d]]).powi(2);
                }
            }
        }
        0.5 * data + 0.25 * gamma * smooth
    }

    fn fd_gradient_norm(warped: &[Mat], w: &[f64], atlas: &Atlas, gamma: f64) -> f64 {
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for j in 0..atlas.size() {
            for d in 0..3 {
                let mut p = atlas.positions.clone();
                p[[j, d]] += h;
                let mut m = atlas.positions.clone();
                m[[j, d]] -= h;
                let g = (objective_oracle(warped, w, &p, &atlas.neighbours, gamma)
                    - objective_oracle(warped, w, &m, &atlas.neighbours, gamma))
                    / (2.0 * h);
                worst = worst.max(g.abs());
            }
        }
        worst
    }

    #[test]
    fn objective_examples() {
        let atlas = Atlas::from_mesh(&icosphere(0, 1.0)).unwrap();
        let flat = Atlas { positions: Mat::from_elem((12, 3), 2.0), ..atlas.clone() };
        assert_eq!(atlas_objective(&[flat.positions.clone()], &flat, 3.0).unwrap(), 0.0);
        let (warped, a) = random_instance(1, 8, 3);
        let data: f64 = warped.iter().map(|s| 0.5 * (s - &a.positions).mapv(|v| v * v).sum()).sum();
        assert!((atlas_objective(&warped, &a, 0.0).unwrap() - data).abs() < 1e-12);
        let o = objective_oracle(&warped, &[1.0; 3], &a.positions, &a.neighbours, 1.7);
        assert!((atlas_objective(&warped, &a, 1.7).unwrap() - o).abs() < 1e-12);
    }

    #[test]
    fn update_examples() {
        let (warped, a) = random_instance(2, 7, 1);
        assert_eq!(update_atlas(&warped[..1], &a, Some(0.0)).unwrap().positions, warped[0]);
        let c = Mat::from_elem((7, 3), -0.4);
        let fixed = Atlas { positions: c.clone(), ..a.clone() };
        let out = update_atlas(&[c.clone(), c.clone()], &fixed, None).unwrap().positions;
        assert!(out.iter().all(|v| (v + 0.4).abs() < 1e-15));
        assert!(update_atlas(&[], &a, None).is_err());
        assert_eq!(update_atlas(&warped, &a, None).unwrap().iteration, 1);
    }

    #[test]
    fn default_gamma_rule() {
        let a = Atlas::from_mesh(&icosphere(1, 1.0)).unwrap();
        // 42 vertices, maximum valence 6
        assert_eq!(a.default_gamma(), 7.0);
    }

    #[test]
    fn converged_atlas_is_stationary() {
        for seed in 0..20 {
            let (warped, a) = random_instance(seed, 10, 4);
            let gamma = a.default_gamma();
            let rule = SweepRule { tolerance: 1e-12, max_sweeps: 100_000 };
            let (out, _) = converge_atlas(&warped, &a, None, rule).unwrap();
            let g = fd_gradient_norm(&warped, &[1.0; 4], &out, gamma);
            assert!(g < 1e-5, "seed {seed}: gradient {g}");
        }
    }

    #[test]
    fn cluster_weight_examples() {
        let d = ndarray::array![[2.0, 2.0, 2.0]];
        assert!(cluster_weights(&d, Some(1.3)).unwrap().w.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let w = cluster_weights(&ndarray::array![[0.0, 1.0]], Some(1e3)).unwrap().w;
        assert!(w[[0, 0]] > 1.0 - 1e-12 && w[[0, 1]] < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Mat::from_shape_fn((5, 3), |_| rng.random_range(0.0..4.0));
        let w = cluster_weights(&d, Some(0.37)).unwrap().w;
        for k in 0..5 {
            let z: f64 = (0..3).map(|m| (-0.37 * d[[k, m]]).exp()).sum();
            for m in 0..3 {
                assert!((w[[k, m]] - (-0.37 * d[[k, m]]).exp() / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn default_alpha_is_inverse_population_std() {
        let d = ndarray::array![[1.0, 3.0], [1.0, 3.0]];
        assert_eq!(default_alpha(&d), 1.0);
        assert_eq!(default_alpha(&Mat::from_elem((2, 2), 5.0)), 0.0);
        let w = cluster_weights(&Mat::from_elem((2, 2), 5.0), None).unwrap();
        assert!(w.w.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn multi_atlas_reductions() {
        let (warped, a) = random_instance(4, 9, 3);
        let w1 = Mat::ones((3, 1));
        let single = atlas_objective(&warped, &a, a.default_gamma()).unwrap();
        let multi = multi_atlas_objective(&[a.clone()], &[warped.clone()], &w1, None).unwrap();
        assert!((single - multi).abs() < 1e-12);
        assert_eq!(
            update_multi_atlas(&[a.clone()], &[warped.clone()], &w1, None).unwrap()[0],
            update_atlas(&warped, &a, None).unwrap()
        );
        // zero weights leave only the smoothness term
        let zero = multi_atlas_objective(&[a.clone()], &[warped.clone()], &Mat::zeros((3, 1)), Some(&[2.0])).unwrap();
        assert!((zero - atlas_objective(&[], &a, 2.0).unwrap()).abs() < 1e-12);
        assert!(matches!(
            update_multi_atlas(&[a.clone()], &[warped.clone()], &Mat::zeros((3, 1)), Some(&[0.0])),
            Err(Error::DegenerateCluster(0))
        ));
    }

    #[test]
    fn one_hot_weights_average_members() {
        let (warped, a) = random_instance(5, 6, 4);
        let (_, b) = random_instance(6, 6, 1);
        let w = ndarray::array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        let out = update_multi_atlas(&[a.clone(), b.clone()], &[warped.clone(), warped.clone()], &w, Some(&[0.0, 0.0])).unwrap();
        assert!((&out[0].positions - &((&warped[0] + &warped[2]) * 0.5)).iter().all(|v| v.abs() < 1e-15));
        assert!((&out[1].positions - &((&warped[1] + &warped[3]) * 0.5)).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn converged_multi_atlas_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for seed in 0..10 {
            let m_count = 1 + seed as usize % 3;
            let k = 2 + seed as usize % 4;
            let (atlases, warped): (Vec<Atlas>, Vec<Vec<Mat>>) = (0..m_count)
                .map(|m| {
                    let (w, a) = random_instance(100 * seed + m as u64, 6 + 2 * m, k);
                    (a, w)
                })
                .unzip();
            let d = Mat::from_shape_fn((k, m_count), |_| rng.random_range(0.0..2.0));
            let w = cluster_weights(&d, None).unwrap().w;
            let rule = SweepRule { tolerance: 1e-13, max_sweeps: 1_000_000 };
            let out = converge_multi_atlas(&atlases, &warped, &w, None, rule).unwrap();
            for (m, (a, _)) in out.iter().enumerate() {
                let g = fd_gradient_norm(&warped[m], &w.column(m).to_vec(), a, a.default_gamma());
                assert!(g < 1e-5, "seed {seed} cluster {m}: gradient {g}");
            }
        }
    }

    proptest! {
        #[test]
        fn sweeps_are_monotone(seed in 0u64..500, gamma in 0.0f64..5.0) {
            let (warped, mut a) = random_instance(seed, 8, 3);
            let w = [0.2, 1.0, 0.05];
            let mut prev = weighted_atlas_objective(&warped, &w, &a, gamma).unwrap();
            for _ in 0..20 {
                a = weighted_sweep(&warped, &w, &a, gamma).unwrap();
                let cur = weighted_atlas_objective(&warped, &w, &a, gamma).unwrap();
                prop_assert!(cur <= prev + 1e-12);
                prev = cur;
            }
        }

        #[test]
        fn update_is_translation_equivariant(seed in 0u64..500, t in prop::array::uniform3(-10.0f64..10.0)) {
            let (warped, a) = random_instance(seed, 7, 2);
            let shift = |m: &Mat| Mat::from_shape_fn(m.dim(), |(i, k)| m[[i, k]] + t[k]);
            let moved: Vec<Mat> = warped.iter().map(shift).collect();
            let a_moved = Atlas { positions: shift(&a.positions), ..a.clone() };
            let lhs = update_atlas(&moved, &a_moved, None).unwrap().positions;
            let rhs = shift(&update_atlas(&warped, &a, None).unwrap().positions);
            prop_assert!(lhs.iter().zip(rhs.iter()).all(|(x, y)| (x - y).abs() < 1e-9));
        }

        #[test]
        fn cluster_weight_rows(seed in 0u64..500, c in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = Mat::from_shape_fn((6, 3), |_| rng.random_range(0.0..5.0));
            let w = cluster_weights(&d, Some(0.8)).unwrap().w;
            for r in w.rows() {
                prop_assert!((r.sum() - 1.0).abs() < 1e-9);
                prop_assert!(r.iter().all(|&v| v > 0.0 && v <= 1.0));
            }
            let shifted = Mat::from_shape_fn(d.dim(), |(k, m)| d[[k, m]] + c.abs() * (k + 1) as f64);
            let w2 = cluster_weights(&shifted, Some(0.8)).unwrap().w;
            prop_assert!(w.iter().zip(w2.iter()).all(|(a, b)| (a - b).abs() < 1e-9));
        }
    }
}
