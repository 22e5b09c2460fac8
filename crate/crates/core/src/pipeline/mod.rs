//! Joint training of the feature network, the attention matcher and the per-cluster
//! generators, with the atlas refreshed from the warped cohort after every epoch.

pub mod checkpoint;
pub mod config;
pub mod eval;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::atlas::{cluster_weights, converge_multi_atlas, default_alpha, distance_matrix, Atlas, ClusterWeights};
use crate::attention::{attention_on_tape, compute_attention, refinement_loss_on_tape, warp, CorrespondenceMap, NormalizedShape};
use crate::autodiff::{Mat, Tape, Var};
use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::feature_net::{standard_normal, FeatureNet, NodePosterior};
use crate::generator::{cluster_prior, sample_population, BetaSchedule, GenPosterior, GenerativeModel, Generator, SyntheticShape};
use crate::mesh::{build_graph, io::read_mesh, FeatureMode, SurfaceMesh};
use crate::nn::{Adam, AdamConfig, ParamStore};
use crate::topology::Topology;

pub use config::{Profile, TrainConfig};

/// A shape with its features and graph operators computed once.
#[derive(Debug, Clone)]
pub struct PreparedShape {
    pub id: String,
    pub mesh: SurfaceMesh,
    pub features: Mat,
    pub positions: Mat,
    pub topology: Topology,
}

impl PreparedShape {
    pub fn new(id: impl Into<String>, mesh: &SurfaceMesh, mode: FeatureMode) -> Result<Self> {
        let graph = build_graph(mesh, mode)?;
        Ok(Self {
            id: id.into(),
            mesh: mesh.clone(),
            positions: graph.positions(),
            features: graph.features,
            topology: Topology::from_mesh(mesh)?,
        })
    }

    pub fn from_cohort(cohort: &Cohort, mode: FeatureMode) -> Result<Vec<Self>> {
        cohort.entries.iter().map(|e| Self::new(e.id.clone(), &e.mesh, mode)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Cluster {
    pub atlas: Atlas,
    pub topology: Topology,
    pub generator: Generator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_psi: f64,
    pub l_ref: f64,
    pub l_g: f64,
    pub total: f64,
    /// Largest atlas vertex displacement during the end-of-epoch refresh.
    pub atlas_displacement: f64,
}

/// All intermediates of one forward pass with every reparameterisation draw at zero.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub shape_posterior: NodePosterior,
    pub atlas_posterior: NodePosterior,
    pub phi: CorrespondenceMap,
    pub warped: Mat,
    pub feature_reconstruction: Mat,
    pub gen_posterior: GenPosterior,
    pub gen_reconstruction: Mat,
}

#[derive(Debug, Clone)]
pub struct MatchResult {
    pub cluster: usize,
    pub map: CorrespondenceMap,
    pub normalized: NormalizedShape,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: TrainConfig,
    pub params: ParamStore,
    pub feature_net: FeatureNet,
    pub clusters: Vec<Cluster>,
    /// Soft cluster weights of the training shapes (`K × M`).
    pub weights: Mat,
    pub alpha: f64,
    pub epoch: usize,
    pub adam: Adam,
}

/// Per-axis vertex variances; shapes are assumed consistently oriented.
fn spread_descriptor(mesh: &SurfaceMesh) -> [f64; 3] {
    let c = mesh.centroid();
    let n = mesh.vertices.len() as f64;
    let mut d = [0.0; 3];
    for v in &mesh.vertices {
        for k in 0..3 {
            d[k] += (v[k] - c[k]).powi(2) / n;
        }
    }
    d
}

/// A seeded random first atlas, then farthest-point picks in descriptor space.
pub fn select_initial_atlases(meshes: &[SurfaceMesh], count: usize, seed: u64) -> Result<Vec<usize>> {
    if meshes.len() < count || count == 0 {
        return Err(Error::InvalidArgument(format!("cannot pick {count} atlases from {} shapes", meshes.len())));
    }
    let desc: Vec<[f64; 3]> = meshes.iter().map(spread_descriptor).collect();
    let dist = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = vec![rng.random_range(0..meshes.len())];
    while picked.len() < count {
        let next = (0..meshes.len())
            .filter(|i| !picked.contains(i))
            .max_by(|&a, &b| {
                let da = picked.iter().map(|&p| dist(&desc[a], &desc[p])).fold(f64::INFINITY, f64::min);
                let db = picked.iter().map(|&p| dist(&desc[b], &desc[p])).fold(f64::INFINITY, f64::min);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .unwrap();
        picked.push(next);
    }
    Ok(picked)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

impl Model {
    /// Fresh parameters and initial atlases drawn from `cohort` (or the configured files).
    pub fn new(config: TrainConfig, cohort: &Cohort) -> Result<Self> {
        config.validate()?;
        let atlas_meshes: Vec<SurfaceMesh> = if config.atlas.init.is_empty() {
            let meshes = cohort.meshes();
            select_initial_atlases(&meshes, config.clusters, config.seed)?.into_iter().map(|i| meshes[i].clone()).collect()
        } else {
            config.atlas.init.iter().map(|p| read_mesh(p)).collect::<Result<_>>()?
        };
        let atlases = atlas_meshes.iter().map(Atlas::from_mesh).collect::<Result<Vec<_>>>()?;
        Self::with_atlases(config, atlases, cohort.len())
    }

    pub fn with_atlases(config: TrainConfig, atlases: Vec<Atlas>, cohort_size: usize) -> Result<Self> {
        config.validate()?;
        if atlases.len() != config.clusters {
            return Err(Error::Config(format!("{} atlases for {} clusters", atlases.len(), config.clusters)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let feature_net = FeatureNet::new(&mut params, "psi", config.feature_net(), &mut rng);
        let mut clusters = Vec::with_capacity(atlases.len());
        for (m, atlas) in atlases.into_iter().enumerate() {
            if config.mode == FeatureMode::Hybrid && atlas.faces.is_empty() {
                return Err(Error::InvalidArgument("hybrid features need atlas faces".into()));
            }
            let topology = if atlas.faces.is_empty() {
                Topology::from_neighbours(atlas.neighbours.clone())?
            } else {
                Topology::from_mesh(&atlas.mesh())?
            };
            let generator = Generator::new(&mut params, &format!("gen{m}"), atlas.size(), config.generator.clone(), &mut rng);
            generator.anchor_output(&mut params, &atlas.positions)?;
            clusters.push(Cluster { atlas, topology, generator });
        }
        let adam = Adam::new(AdamConfig { learning_rate: config.learning_rate, ..Default::default() }, &params);
        let weights = Mat::from_elem((cohort_size, config.clusters), 1.0 / config.clusters as f64);
        Ok(Self { config, params, feature_net, clusters, weights, alpha: 0.0, epoch: 0, adam })
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn lambda(&self) -> f64 {
        self.config.lambda()
    }

    pub fn beta_schedule(&self) -> BetaSchedule {
        let b = &self.config.beta;
        let steps = if b.steps > 0 { b.steps } else { (self.config.epochs as u64 * self.steps_per_epoch()).max(1) };
        BetaSchedule { start: b.start, end: b.end, steps }
    }

    fn steps_per_epoch(&self) -> u64 {
        let k = self.weights.nrows().max(1);
        let b = if self.config.batch_size == 0 { k } else { self.config.batch_size.min(k) };
        k.div_ceil(b) as u64
    }

    pub fn atlas_features(&self, m: usize) -> Result<Mat> {
        let atlas = &self.clusters[m].atlas;
        match self.config.mode {
            FeatureMode::Spatial => Ok(atlas.positions.clone()),
            FeatureMode::Hybrid => Ok(build_graph(&atlas.mesh(), FeatureMode::Hybrid)?.features),
        }
    }

    pub fn prepare(&self, cohort: &Cohort) -> Result<Vec<PreparedShape>> {
        PreparedShape::from_cohort(cohort, self.config.mode)
    }

    /// One gradient step on the summed loss of `batch`; returns `(L_Ψ, L_Ref, L_G)` before the step.
    fn step(&mut self, shapes: &[PreparedShape], batch: &[usize], rng: &mut ChaCha8Rng) -> Result<(f64, f64, f64)> {
        let cfg = &self.config;
        let lambda = cfg.lambda();
        let beta = self.beta_schedule().value(self.adam.steps());
        let feature_weights = cfg.weights.feature();
        let refinement_weights = cfg.weights.refinement();
        let ref_weight = 1.0 / self.clusters.len() as f64;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let mut z_atlas = Vec::with_capacity(self.clusters.len());
        for m in 0..self.clusters.len() {
            let xa = tape.leaf(self.atlas_features(m)?);
            let enc = self
                .feature_net
                .encode_on_tape(&mut tape, &p, xa, &self.clusters[m].topology)
                .map_err(|e| self.numeric(e, "atlas"))?;
            z_atlas.push(enc.mean);
        }
        let (mut psi_terms, mut ref_terms, mut gen_terms): (Vec<Var>, Vec<Var>, Vec<Var>) = (vec![], vec![], vec![]);
        let (mut l_psi, mut l_ref, mut l_g) = (0.0, 0.0, 0.0);
        for &k in batch {
            let s = &shapes[k];
            let noise = if cfg.stochastic {
                standard_normal(rng, s.features.nrows(), cfg.network.latent_dim)
            } else {
                Mat::zeros((s.features.nrows(), cfg.network.latent_dim))
            };
            let x = tape.leaf(s.features.clone());
            let out = self
                .feature_net
                .loss_on_tape(&mut tape, &p, x, &s.topology, &noise, &feature_weights)
                .map_err(|e| self.numeric(e, &s.id))?;
            let pos = tape.leaf(s.positions.clone());
            let (mut shape_ref, mut shape_gen) = (0.0, 0.0);
            psi_terms.push(out.loss);
            for (m, cluster) in self.clusters.iter().enumerate() {
                let w = self.weights[[k, m]];
                let gen_noise = if cfg.stochastic {
                    standard_normal(rng, 1, cluster.generator.latent_dim())
                } else {
                    Mat::zeros((1, cluster.generator.latent_dim()))
                };
                let phi = attention_on_tape(&mut tape, z_atlas[m], out.encoded.mean, lambda)?;
                let warped = tape.matmul(phi, pos);
                // every shape is matched onto every atlas with equal weight; only L_G follows W
                if cfg.refinement {
                    let r = refinement_loss_on_tape(&mut tape, pos, warped, &cluster.topology, &refinement_weights)?;
                    shape_ref += ref_weight * tape.scalar(r);
                    ref_terms.push(tape.scale(r, ref_weight));
                }
                if w == 0.0 {
                    continue;
                }
                // the generator sees the warp as data; its loss does not steer the matching
                let detached = tape.detach(warped);
                let g = cluster.generator.loss_on_tape(&mut tape, &p, detached, &gen_noise, beta)?;
                shape_gen += w * tape.scalar(g);
                gen_terms.push(tape.scale(g, w));
            }
            let psi = tape.scalar(out.loss);
            if !(psi.is_finite() && shape_ref.is_finite() && shape_gen.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch: self.epoch, shape: s.id.clone() });
            }
            l_psi += psi;
            l_ref += shape_ref;
            l_g += shape_gen;
        }
        let mut total: Option<Var> = None;
        for t in psi_terms.into_iter().chain(ref_terms).chain(gen_terms) {
            total = Some(match total {
                Some(acc) => tape.add(acc, t),
                None => t,
            });
        }
        if let Some(total) = total {
            let grads = tape.backward(total);
            let grads = self.params.collect_grads(&p, &grads);
            if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFiniteLoss { epoch: self.epoch, shape: "gradient".into() });
            }
            self.adam.step(&mut self.params, &grads);
            for c in self.clusters.iter_mut() {
                c.generator.trained = true;
            }
        }
        Ok((l_psi, l_ref, l_g))
    }

    fn numeric(&self, e: Error, shape: &str) -> Error {
        match e {
            Error::NonFinite { .. } => Error::NonFiniteLoss { epoch: self.epoch, shape: shape.to_string() },
            other => other,
        }
    }

    /// Gradient steps over the whole cohort, then the atlas (and, with several clusters,
    /// the cluster weights) refreshed from deterministic warps.
    pub fn train_epoch(&mut self, shapes: &[PreparedShape]) -> Result<EpochLog> {
        if shapes.len() != self.weights.nrows() {
            return Err(Error::dim(format!("model holds weights for {} shapes, got {}", self.weights.nrows(), shapes.len())));
        }
        let mut rng = epoch_rng(self.config.seed, self.epoch);
        let mut order: Vec<usize> = (0..shapes.len()).collect();
        let batch = if self.config.batch_size == 0 { shapes.len().max(1) } else { self.config.batch_size };
        if batch < shapes.len() {
            order.shuffle(&mut rng);
        }
        let (mut l_psi, mut l_ref, mut l_g) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(batch) {
            let (a, b, c) = self.step(shapes, chunk, &mut rng)?;
            l_psi += a;
            l_ref += b;
            l_g += c;
        }
        let atlas_displacement = self.refresh_atlases(shapes)?;
        let log = EpochLog { epoch: self.epoch, l_psi, l_ref, l_g, total: l_psi + l_ref + l_g, atlas_displacement };
        self.epoch += 1;
        Ok(log)
    }

    /// Warps every shape onto every atlas, updates the cluster weights and runs the atlas sweeps.
    pub fn refresh_atlases(&mut self, shapes: &[PreparedShape]) -> Result<f64> {
        let warps = self.warp_all(shapes)?;
        let atlases: Vec<Atlas> = self.clusters.iter().map(|c| c.atlas.clone()).collect();
        if self.clusters.len() > 1 {
            let d = distance_matrix(&warps, &atlases)?;
            let alpha = self.config.atlas.alpha.unwrap_or_else(|| default_alpha(&d));
            self.weights = cluster_weights(&d, Some(alpha))?.w;
            self.alpha = alpha;
        } else {
            self.weights = Mat::ones((shapes.len(), 1));
        }
        let k = shapes.len() as f64;
        let gammas: Vec<f64> = atlases
            .iter()
            .enumerate()
            .map(|(m, a)| {
                let g = self.config.atlas.gamma.unwrap_or_else(|| a.default_gamma());
                // a fixed γ against a small data mass contracts a minority atlas on every refresh
                if self.config.atlas.mass_scaled_gamma { g * self.weights.column(m).sum() / k } else { g }
            })
            .collect();
        let updated = converge_multi_atlas(&atlases, &warps, &self.weights, Some(&gammas), self.config.atlas.rule())?;
        let mut moved: f64 = 0.0;
        for (c, (atlas, report)) in self.clusters.iter_mut().zip(updated) {
            if atlas.positions.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch: self.epoch, shape: "atlas".into() });
            }
            moved = moved.max(report.displacement);
            c.atlas = atlas;
        }
        Ok(moved)
    }

    /// Posterior means of the feature encoder for one graph.
    pub fn embed(&self, features: &Mat, topology: &Topology) -> Result<Mat> {
        Ok(self.feature_net.encode(&self.params, features, topology)?.mean)
    }

    pub fn atlas_embedding(&self, m: usize) -> Result<Mat> {
        self.embed(&self.atlas_features(m)?, &self.clusters[m].topology)
    }

    /// `warps[m][k]`: each shape normalised onto each atlas.
    pub fn warp_all(&self, shapes: &[PreparedShape]) -> Result<Vec<Vec<Mat>>> {
        let z_atlas: Vec<Mat> = (0..self.clusters.len()).map(|m| self.atlas_embedding(m)).collect::<Result<_>>()?;
        let z_shapes: Vec<Mat> = shapes.iter().map(|s| self.embed(&s.features, &s.topology)).collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(self.clusters.len());
        for za in &z_atlas {
            let mut set = Vec::with_capacity(shapes.len());
            for (s, zs) in shapes.iter().zip(&z_shapes) {
                set.push(warp(&compute_attention(za, zs, self.lambda())?, &s.positions)?);
            }
            out.push(set);
        }
        Ok(out)
    }

    pub fn correspondence(&self, shape: &PreparedShape, m: usize) -> Result<CorrespondenceMap> {
        let zs = self.embed(&shape.features, &shape.topology)?;
        compute_attention(&self.atlas_embedding(m)?, &zs, self.lambda())
    }

    /// Cluster weights for arbitrary shapes, using the `α` learned on the training cohort.
    pub fn assign(&self, shapes: &[PreparedShape]) -> Result<ClusterWeights> {
        if self.clusters.len() == 1 {
            return Ok(ClusterWeights { w: Mat::ones((shapes.len(), 1)), alpha: 0.0 });
        }
        let warps = self.warp_all(shapes)?;
        let atlases: Vec<Atlas> = self.clusters.iter().map(|c| c.atlas.clone()).collect();
        let d = distance_matrix(&warps, &atlases)?;
        cluster_weights(&d, Some(self.alpha))
    }

    /// Normalises a shape onto its most likely atlas.
    pub fn match_shape(&self, shape: &PreparedShape) -> Result<MatchResult> {
        let cluster = self.assign(std::slice::from_ref(shape))?.hard_labels()[0];
        let map = self.correspondence(shape, cluster)?;
        let c = &self.clusters[cluster];
        let normalized = crate::attention::warp_shape(&map, &shape.positions, &c.topology, shape.id.clone())?;
        Ok(MatchResult { cluster, map, normalized })
    }

    /// `decode(encode(x′).mean)` on the shape's most likely cluster.
    pub fn reconstruct(&self, shape: &PreparedShape) -> Result<(usize, Mat)> {
        let matched = self.match_shape(shape)?;
        let g = &self.clusters[matched.cluster].generator;
        Ok((matched.cluster, g.reconstruct(&self.params, &matched.normalized.positions)?))
    }

    pub fn forward_pass(&self, shape: &PreparedShape, m: usize) -> Result<ForwardOutput> {
        let shape_posterior = self.feature_net.encode(&self.params, &shape.features, &shape.topology)?;
        let atlas_posterior = self.feature_net.encode(&self.params, &self.atlas_features(m)?, &self.clusters[m].topology)?;
        let feature_reconstruction = self.feature_net.decode(&self.params, &shape_posterior.mean, &shape.topology)?;
        let phi = compute_attention(&atlas_posterior.mean, &shape_posterior.mean, self.lambda())?;
        let warped = warp(&phi, &shape.positions)?;
        let g = &self.clusters[m].generator;
        let gen_posterior = g.gen_encode(&self.params, &warped)?;
        let gen_reconstruction = g.gen_decode(&self.params, &gen_posterior.mean)?;
        Ok(ForwardOutput { shape_posterior, atlas_posterior, phi, warped, feature_reconstruction, gen_posterior, gen_reconstruction })
    }

    pub fn cluster_prior(&self) -> Vec<f64> {
        cluster_prior(&self.weights)
    }

    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<SyntheticShape>> {
        let meshes: Vec<SurfaceMesh> = self.clusters.iter().map(|c| c.atlas.mesh()).collect();
        let models: Vec<GenerativeModel<'_>> = self
            .clusters
            .iter()
            .zip(&meshes)
            .map(|(c, atlas)| GenerativeModel { generator: &c.generator, params: &self.params, atlas })
            .collect();
        let prior = self.cluster_prior();
        sample_population(&models, count, seed, Some(&prior))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
}

pub fn write_loss_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    for row in log {
        w.serialize(row).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_weights_csv(path: &Path, ids: &[String], w: &Mat) -> Result<()> {
    let mut out = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    let mut header = vec!["id".to_string()];
    header.extend((0..w.ncols()).map(|m| format!("w{m}")));
    header.push("label".into());
    out.write_record(&header).map_err(|e| Error::Io(e.into()))?;
    let labels = ClusterWeights { w: w.clone(), alpha: 0.0 }.hard_labels();
    for ((id, row), label) in ids.iter().zip(w.rows()).zip(labels) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        rec.push(label.to_string());
        out.write_record(&rec).map_err(|e| Error::Io(e.into()))?;
    }
    out.flush()?;
    Ok(())
}

/// Trains from scratch. With `out_dir`, writes the loss log, periodic and final checkpoints,
/// atlas meshes and the training cluster weights.
pub fn train(config: TrainConfig, cohort: &Cohort, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    train_model(Model::new(config, cohort)?, cohort, out_dir)
}

/// Runs the configured epochs on an already built model, e.g. one from [`Model::with_atlases`].
pub fn train_model(mut model: Model, cohort: &Cohort, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let shapes = model.prepare(cohort)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.toml"), model.config.to_toml())?;
    }
    let mut log = Vec::with_capacity(model.config.epochs);
    for _ in 0..model.config.epochs {
        log.push(model.train_epoch(&shapes)?);
        let every = model.config.checkpoint_every;
        if let (Some(dir), true) = (out_dir, every > 0 && model.epoch % every == 0) {
            checkpoint::save(&dir.join(format!("checkpoint_{:04}.ckpt", model.epoch)), &model)?;
        }
    }
    if let Some(dir) = out_dir {
        write_loss_log(&dir.join("loss.csv"), &log)?;
        checkpoint::save(&dir.join("model.ckpt"), &model)?;
        for (m, c) in model.clusters.iter().enumerate() {
            crate::mesh::io::write_mesh(&dir.join(format!("atlas_{m}.obj")), &c.atlas.mesh())?;
        }
        let ids: Vec<String> = cohort.entries.iter().map(|e| e.id.clone()).collect();
        write_weights_csv(&dir.join("weights.csv"), &ids, &model.weights)?;
    }
    Ok(TrainOutcome { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::CohortEntry;
    use crate::mesh::icosphere;
    use crate::synth::{generate_population, Family, PopulationSpec};

    fn small_config(clusters: usize, epochs: usize) -> TrainConfig {
        let mut c = TrainConfig::profile(Profile::Lv);
        c.clusters = clusters;
        c.epochs = epochs;
        c.network.hidden = vec![8];
        c.network.latent_dim = 8;
        c.network.heads = 2;
        c.generator.hidden = vec![16];
        c.generator.latent_dim = 4;
        c.learning_rate = 5e-3;
        c
    }

    fn cohort(count: usize, seed: u64) -> Cohort {
        let spec = PopulationSpec { family: Family::BumpySphere, count, n_lo: 30, n_hi: 50, amplitude: 0.2, seed };
        generate_population(&spec).unwrap()
    }

    #[test]
    fn zero_learning_rate_freezes_parameters_but_refreshes_atlas() {
        let mut cfg = small_config(1, 2);
        cfg.learning_rate = 0.0;
        let c = cohort(4, 1);
        let mut model = Model::new(cfg, &c).unwrap();
        let before = model.params.clone();
        let atlas_before = model.clusters[0].atlas.positions.clone();
        let shapes = model.prepare(&c).unwrap();
        let log = model.train_epoch(&shapes).unwrap();
        assert_eq!(model.params, before);
        assert!(log.atlas_displacement > 0.0);
        assert_ne!(model.clusters[0].atlas.positions, atlas_before);
        assert!(model.clusters[0].generator.trained);
    }

    fn single_sphere() -> Cohort {
        Cohort { entries: vec![CohortEntry { id: "s".into(), mesh: icosphere(1, 1.0), label: None, truth: None }], spec: None }
    }

    #[test]
    fn steps_descend_while_the_atlas_is_held_fixed() {
        let mut cfg = small_config(1, 50);
        cfg.stochastic = false;
        cfg.learning_rate = 1e-4;
        let c = single_sphere();
        let mut model = Model::new(cfg, &c).unwrap();
        let shapes = model.prepare(&c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut last = f64::INFINITY;
        for i in 0..50 {
            let (psi, refine, gen) = model.step(&shapes, &[0], &mut rng).unwrap();
            let total = psi + refine + gen;
            assert!(total < last, "step {i}: {total} after {last}");
            last = total;
        }
    }

    #[test]
    fn training_lowers_the_single_sphere_loss() {
        // the refresh between epochs moves the target, so only the overall trend is monotone
        let mut cfg = small_config(1, 50);
        cfg.stochastic = false;
        cfg.learning_rate = 3e-3;
        cfg.temperature_scale = 30.0;
        cfg.network.hidden = vec![32, 32];
        let out = train(cfg, &single_sphere(), None).unwrap();
        assert!(out.log[49].total < 0.5 * out.log[0].total, "{} vs {}", out.log[49].total, out.log[0].total);
    }

    #[test]
    fn training_is_reproducible() {
        let c = cohort(4, 2);
        let a = train(small_config(2, 2), &c, None).unwrap();
        let b = train(small_config(2, 2), &c, None).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model.params, b.model.params);
        let w = &a.model.weights;
        for row in w.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    fn check_epoch_log_composition(clusters: usize) {
        let c = cohort(3, 3);
        let mut cfg = small_config(clusters, 1);
        cfg.stochastic = false;
        let model = Model::new(cfg.clone(), &c).unwrap();
        let shapes = model.prepare(&c).unwrap();
        // independent evaluation of every term before the first step
        let (mut psi, mut refine, mut gen) = (0.0, 0.0, 0.0);
        let beta = model.beta_schedule().value(0);
        for s in &shapes {
            let post = model.feature_net.encode(&model.params, &s.features, &s.topology).unwrap();
            let rec = model.feature_net.decode(&model.params, &post.mean, &s.topology).unwrap();
            let mse = (&rec - &s.features).mapv(|v| v * v).sum() / rec.len() as f64;
            let kl = crate::feature_net::kl_divergence(&post.mean, &post.log_variance);
            let surface = SurfaceMesh::new(rec.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect(), s.mesh.faces.clone()).unwrap();
            let nc = crate::mesh::normal_consistency(&surface).unwrap();
            let nc = if cfg.mode == FeatureMode::Hybrid { cfg.weights.norm * nc } else { 0.0 };
            psi += mse + cfg.weights.kl * kl + nc;
            for (m, cluster) in model.clusters.iter().enumerate() {
                // uniform weights before the first refresh; L_Ref is averaged over atlases
                let w = 1.0 / clusters as f64;
                let za = model.atlas_embedding(m).unwrap();
                let map = compute_attention(&za, &post.mean, model.lambda()).unwrap();
                let normalized = crate::attention::warp_shape(&map, &s.positions, &cluster.topology, "").unwrap();
                refine += w * crate::attention::refinement_loss(&s.positions, &normalized, &cfg.weights.refinement()).unwrap();
                let gp = cluster.generator.gen_encode(&model.params, &normalized.positions).unwrap();
                let grec = cluster.generator.gen_decode(&model.params, &gp.mean).unwrap();
                gen += w * crate::generator::loss_generation(&normalized.positions, &grec, &gp, beta).unwrap();
            }
        }
        let mut m = model;
        let log = m.train_epoch(&shapes).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
        assert!(close(log.l_psi, psi), "{} vs {psi}", log.l_psi);
        assert!(close(log.l_ref, refine), "{} vs {refine}", log.l_ref);
        assert!(close(log.l_g, gen), "{} vs {gen}", log.l_g);
    }

    #[test]
    fn epoch_log_composes_the_three_terms() {
        check_epoch_log_composition(1);
    }

    #[test]
    fn multi_atlas_epoch_log_composes_the_weighted_terms() {
        check_epoch_log_composition(2);
    }

    #[test]
    fn mass_scaled_gamma_leaves_a_single_atlas_unchanged() {
        let c = cohort(4, 5);
        let mut literal = small_config(1, 3);
        literal.atlas.mass_scaled_gamma = false;
        let a = train(small_config(1, 3), &c, None).unwrap();
        let b = train(literal, &c, None).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model.clusters[0].atlas, b.model.clusters[0].atlas);
    }

    #[test]
    fn checkpoint_round_trip_resumes_identically() {
        let c = cohort(4, 4);
        let mut model = Model::new(small_config(2, 3), &c).unwrap();
        let shapes = model.prepare(&c).unwrap();
        model.train_epoch(&shapes).unwrap();
        let mut restored = checkpoint::from_bytes(&checkpoint::to_bytes(&model).unwrap()).unwrap();
        assert_eq!(restored.params, model.params);
        assert_eq!(restored.weights, model.weights);
        let a = model.train_epoch(&shapes).unwrap();
        let b = restored.train_epoch(&shapes).unwrap();
        assert_eq!(a, b);
        assert!(checkpoint::from_bytes(b"nope").is_err());
    }

    #[test]
    fn sampling_uses_atlas_faces() {
        let c = cohort(3, 5);
        let out = train(small_config(1, 1), &c, None).unwrap();
        let s = out.model.sample(3, 9).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].mesh.faces, out.model.clusters[0].atlas.faces);
        let fresh = Model::new(small_config(1, 1), &c).unwrap();
        assert!(matches!(fresh.sample(1, 0), Err(Error::Untrained)));
    }

    #[test]
    fn initial_atlases_are_distinct_and_seeded() {
        let meshes = cohort(6, 6).meshes();
        let a = select_initial_atlases(&meshes, 3, 1).unwrap();
        assert_eq!(a, select_initial_atlases(&meshes, 3, 1).unwrap());
        let set: std::collections::BTreeSet<_> = a.iter().collect();
        assert_eq!(set.len(), 3);
        assert!(select_initial_atlases(&meshes, 7, 1).is_err());
    }
}
