//! Fully-connected β-VAE over atlas-normalised shapes, the cluster-weighted loss and
//! ancestral sampling of virtual cohorts.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::feature_net::{kl_divergence, kl_on_tape, standard_normal, EncodedVars};
use crate::mesh::SurfaceMesh;
use crate::nn::{glorot, Binding, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub d_in: usize,
    pub d_out: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = store.add(format!("{name}.weight"), glorot(rng, d_in, d_out));
        let bias = store.add(format!("{name}.bias"), Mat::zeros((1, d_out)));
        Self { d_in, d_out, weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, params: &Binding, x: Var) -> Var {
        let h = tape.matmul(x, params.var(self.weight));
        tape.add_row(h, params.var(self.bias))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { hidden: vec![256, 64], latent_dim: 16 }
    }
}

/// Encoder `3N_μ → hidden… → 2L` (mean and log-variance halves), decoder mirrored back to `3N_μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub atlas_size: usize,
    pub encoder: Vec<Dense>,
    pub decoder: Vec<Dense>,
    /// Set once the parameters have received at least one optimiser step.
    pub trained: bool,
}

/// Latent posterior for one shape, each `1 × L`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenPosterior {
    pub mean: Mat,
    pub log_variance: Mat,
}

impl Generator {
    pub fn new(store: &mut ParamStore, prefix: &str, atlas_size: usize, config: GeneratorConfig, rng: &mut ChaCha8Rng) -> Self {
        let input = 3 * atlas_size;
        let l = config.latent_dim;
        let mut widths = vec![input];
        widths.extend(&config.hidden);
        let mut encoder = Vec::new();
        for (i, w) in widths.windows(2).enumerate() {
            encoder.push(Dense::new(store, &format!("{prefix}.enc{i}"), w[0], w[1], rng));
        }
        encoder.push(Dense::new(store, &format!("{prefix}.enc_out"), *widths.last().unwrap(), 2 * l, rng));
        let mut back: Vec<usize> = vec![l];
        back.extend(config.hidden.iter().rev());
        back.push(input);
        let decoder = back
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(store, &format!("{prefix}.dec{i}"), w[0], w[1], rng))
            .collect();
        // start the encoder near a unit posterior
        let out = encoder.last().unwrap().bias;
        store.get_mut(out).slice_mut(ndarray::s![.., l..]).fill(0.0);
        Self { config, atlas_size, encoder, decoder, trained: false }
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Starts the decoder at `shape` (`N_μ × 3`): the output bias becomes the flattened shape
    /// and the output weights shrink tenfold, so early reconstructions sit near it.
    pub fn anchor_output(&self, store: &mut ParamStore, shape: &Mat) -> Result<()> {
        if shape.dim() != (self.atlas_size, 3) {
            return Err(Error::dim(format!("anchor must be {}×3, got {:?}", self.atlas_size, shape.dim())));
        }
        let out = self.decoder.last().unwrap();
        let flat = Mat::from_shape_vec((1, 3 * self.atlas_size), shape.iter().copied().collect()).unwrap();
        *store.get_mut(out.bias) = flat;
        store.get_mut(out.weight).mapv_inplace(|w| w * 0.1);
        Ok(())
    }

    pub fn encode_on_tape(&self, tape: &mut Tape, params: &Binding, shape: Var) -> Result<EncodedVars> {
        let (r, c) = tape.shape(shape);
        if r != self.atlas_size || c != 3 {
            return Err(Error::dim(format!("generator expects {}×3, got {r}×{c}", self.atlas_size)));
        }
        let mut h = tape.reshape(shape, 1, 3 * r);
        let last = self.encoder.len() - 1;
        for (i, layer) in self.encoder.iter().enumerate() {
            h = layer.forward(tape, params, h);
            if i < last {
                h = tape.elu(h);
            }
        }
        let l = self.latent_dim();
        Ok(EncodedVars { mean: tape.slice_cols(h, 0, l), log_variance: tape.slice_cols(h, l, 2 * l) })
    }

    pub fn decode_on_tape(&self, tape: &mut Tape, params: &Binding, z: Var) -> Result<Var> {
        if tape.shape(z) != (1, self.latent_dim()) {
            return Err(Error::dim(format!("latent must be 1×{}", self.latent_dim())));
        }
        let mut h = z;
        let last = self.decoder.len() - 1;
        for (i, layer) in self.decoder.iter().enumerate() {
            h = layer.forward(tape, params, h);
            if i < last {
                h = tape.elu(h);
            }
        }
        Ok(tape.reshape(h, self.atlas_size, 3))
    }

    pub fn gen_encode(&self, store: &ParamStore, shape: &Mat) -> Result<GenPosterior> {
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let x = tape.leaf(shape.clone());
        let enc = self.encode_on_tape(&mut tape, &params, x)?;
        Ok(GenPosterior { mean: tape.value(enc.mean).clone(), log_variance: tape.value(enc.log_variance).clone() })
    }

    pub fn gen_decode(&self, store: &ParamStore, z: &Mat) -> Result<Mat> {
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let zv = tape.leaf(z.clone());
        let out = self.decode_on_tape(&mut tape, &params, zv)?;
        Ok(tape.value(out).clone())
    }

    /// `decode(encode(x).mean)`
    pub fn reconstruct(&self, store: &ParamStore, shape: &Mat) -> Result<Mat> {
        let post = self.gen_encode(store, shape)?;
        self.gen_decode(store, &post.mean)
    }

    /// Per-shape β-VAE loss on the tape, with reparameterisation draw `noise` (`1 × L`).
    pub fn loss_on_tape(&self, tape: &mut Tape, params: &Binding, shape: Var, noise: &Mat, beta: f64) -> Result<Var> {
        let enc = self.encode_on_tape(tape, params, shape)?;
        let z = crate::feature_net::reparameterise(tape, enc, noise);
        let rec = self.decode_on_tape(tape, params, z)?;
        generation_loss_on_tape(tape, shape, rec, enc, beta)
    }

    /// `Σ_k w_k · L_G(k)` over the shapes normalised onto this generator's atlas.
    pub fn weighted_loss_on_tape(
        &self,
        tape: &mut Tape,
        params: &Binding,
        shapes: &[Var],
        weights: &[f64],
        noises: &[Mat],
        beta: f64,
    ) -> Result<Option<Var>> {
        if shapes.len() != weights.len() || shapes.len() != noises.len() {
            return Err(Error::dim("shapes, weights and noises differ in length"));
        }
        let mut total: Option<Var> = None;
        for ((&s, &w), noise) in shapes.iter().zip(weights).zip(noises) {
            if w < 0.0 {
                return Err(Error::NegativeWeight { name: "w_km", value: w });
            }
            if w == 0.0 {
                continue;
            }
            let l = self.loss_on_tape(tape, params, s, noise, beta)?;
            let l = tape.scale(l, w);
            total = Some(match total {
                Some(t) => tape.add(t, l),
                None => l,
            });
        }
        Ok(total)
    }
}

/// Squared-Euclidean reconstruction error plus `β`·KL.
pub fn generation_loss_on_tape(tape: &mut Tape, shape: Var, reconstruction: Var, enc: EncodedVars, beta: f64) -> Result<Var> {
    if beta < 0.0 {
        return Err(Error::NegativeWeight { name: "beta", value: beta });
    }
    if tape.shape(shape) != tape.shape(reconstruction) {
        return Err(Error::dim("reconstruction and input shapes differ"));
    }
    let diff = tape.sub(reconstruction, shape);
    let sse = tape.sum_sq(diff);
    let kl = kl_on_tape(tape, enc.mean, enc.log_variance);
    let kl = tape.scale(kl, beta);
    Ok(tape.add(sse, kl))
}

pub fn loss_generation(shape: &Mat, reconstruction: &Mat, posterior: &GenPosterior, beta: f64) -> Result<f64> {
    if beta < 0.0 {
        return Err(Error::NegativeWeight { name: "beta", value: beta });
    }
    if shape.dim() != reconstruction.dim() {
        return Err(Error::dim("reconstruction and input shapes differ"));
    }
    let sse: f64 = shape.iter().zip(reconstruction.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sse + beta * kl_divergence(&posterior.mean, &posterior.log_variance))
}

/// Log-linear interpolation from `start` to `end` over `steps`, then held at `end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub start: f64,
    pub end: f64,
    pub steps: u64,
}

impl BetaSchedule {
    pub fn constant(beta: f64) -> Self {
        Self { start: beta, end: beta, steps: 0 }
    }

    pub fn lv(steps: u64) -> Self {
        Self { start: 2e-3, end: 2e-6, steps }
    }

    pub fn liver(steps: u64) -> Self {
        Self { start: 1e-3, end: 2e-3, steps }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start > 0.0 && self.end > 0.0) {
            return Err(Error::Config(format!("β schedule values must be positive: {} → {}", self.start, self.end)));
        }
        Ok(())
    }

    pub fn value(&self, step: u64) -> f64 {
        if step >= self.steps {
            return self.end;
        }
        if step == 0 {
            return self.start;
        }
        let t = step as f64 / self.steps as f64;
        (self.start.ln() + t * (self.end.ln() - self.start.ln())).exp()
    }
}

/// `p(m) = w̄_m / Σ w̄` with `w̄_m = Σ_k w_km`.
pub fn cluster_prior(weights: &Mat) -> Vec<f64> {
    let totals: Vec<f64> = weights.columns().into_iter().map(|c| c.sum()).collect();
    let z: f64 = totals.iter().sum();
    totals.iter().map(|t| t / z).collect()
}

/// One cluster's generator, its parameters and the atlas whose faces it inherits.
#[derive(Debug, Clone, Copy)]
pub struct GenerativeModel<'a> {
    pub generator: &'a Generator,
    pub params: &'a ParamStore,
    pub atlas: &'a SurfaceMesh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticShape {
    pub mesh: SurfaceMesh,
    pub cluster: usize,
    pub latent_seed: u64,
    pub latent: Vec<f64>,
}

/// Ancestral sampling: cluster id from `prior` (uniform when absent), latent from
/// `N(0, I)`, then the cluster's decoder on the cluster's atlas faces.
pub fn sample_population(
    models: &[GenerativeModel<'_>],
    count: usize,
    seed: u64,
    prior: Option<&[f64]>,
) -> Result<Vec<SyntheticShape>> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("no generative models".into()));
    }
    if models.iter().any(|m| !m.generator.trained) {
        return Err(Error::Untrained);
    }
    let uniform = vec![1.0; models.len()];
    let prior = prior.unwrap_or(&uniform);
    if prior.len() != models.len() {
        return Err(Error::dim(format!("{} prior entries for {} clusters", prior.len(), models.len())));
    }
    let picker = WeightedIndex::new(prior).map_err(|e| Error::InvalidArgument(format!("cluster prior: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let cluster = picker.sample(&mut rng);
        let latent_seed: u64 = rng.random();
        let model = &models[cluster];
        let z = standard_normal(&mut ChaCha8Rng::seed_from_u64(latent_seed), 1, model.generator.latent_dim());
        let positions = model.generator.gen_decode(model.params, &z)?;
        out.push(SyntheticShape {
            mesh: model.atlas.with_positions(&positions),
            cluster,
            latent_seed,
            latent: z.iter().copied().collect(),
        });
    }
    Ok(out)
}

/// Draws only the cluster ids that [`sample_population`] would use with this seed.
pub fn sample_clusters(prior: &[f64], count: usize, seed: u64) -> Result<Vec<usize>> {
    let picker = WeightedIndex::new(prior).map_err(|e| Error::InvalidArgument(format!("cluster prior: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let c = picker.sample(&mut rng);
            let _: u64 = rng.random();
            c
        })
        .collect())
}
