//! Variational graph autoencoder producing per-vertex embeddings.
//!
//! Layers use a feature-steered graph convolution: every neighbour `j` of node `i`
//! (including `i` itself) is softly assigned to `M` weight matrices through
//! `q_m(x_i, x_j) = softmax_m(u_m · (x_j − x_i) + c_m)`, and node outputs are
//! `y_i = b + (1/|N(i) ∪ {i}|) Σ_j Σ_m q_m W_mᵀ x_j`.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::mesh::FeatureMode;
use crate::nn::{glorot, Binding, ParamId, ParamStore};
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialConvLayer {
    pub heads: usize,
    pub d_in: usize,
    pub d_out: usize,
    /// `d_in × (heads · d_out)`, head `m` in columns `m·d_out .. (m+1)·d_out`
    pub weight: ParamId,
    /// `d_in × heads`
    pub assign: ParamId,
    /// `1 × heads`
    pub assign_bias: ParamId,
    /// `1 × d_out`
    pub bias: ParamId,
}

/// Glorot bounds per head, widened by `√heads` because the soft head mixture averages the
/// heads and would otherwise shrink activations at every layer.
fn head_weights(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize, heads: usize) -> Mat {
    let blocks: Vec<Mat> = (0..heads).map(|_| glorot(rng, d_in, d_out) * (heads as f64).sqrt()).collect();
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    ndarray::concatenate(ndarray::Axis(1), &views).expect("equal row counts")
}

impl SpatialConvLayer {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(heads >= 1, "a convolution needs at least one head");
        Self {
            heads,
            d_in,
            d_out,
            weight: store.add(format!("{name}.weight"), head_weights(rng, d_in, d_out, heads)),
            assign: store.add(format!("{name}.assign"), glorot(rng, d_in, heads)),
            assign_bias: store.add(format!("{name}.assign_bias"), Mat::zeros((1, heads))),
            bias: store.add(format!("{name}.bias"), Mat::zeros((1, d_out))),
        }
    }

    pub fn check_shapes(&self, store: &ParamStore) -> Result<()> {
        let expect = [
            (self.weight, (self.d_in, self.d_out * self.heads)),
            (self.assign, (self.d_in, self.heads)),
            (self.assign_bias, (1, self.heads)),
            (self.bias, (1, self.d_out)),
        ];
        for (id, shape) in expect {
            if store.get(id).dim() != shape {
                return Err(Error::dim(format!(
                    "{} has shape {:?}, expected {shape:?}",
                    store.name(id),
                    store.get(id).dim()
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, params: &Binding, x: Var, topo: &Topology) -> Result<Var> {
        let (n, d) = tape.shape(x);
        if d != self.d_in || n != topo.node_count() {
            return Err(Error::dim(format!(
                "conv input {n}×{d}, layer expects {}×{}",
                topo.node_count(),
                self.d_in
            )));
        }
        let xu = tape.matmul(x, params.var(self.assign));
        let logits = tape.sparse(&topo.edge_diff, xu);
        let logits = tape.add_row(logits, params.var(self.assign_bias));
        let q = tape.softmax_rows(logits);
        let xw = tape.matmul(x, params.var(self.weight));
        let h = tape.sparse(&topo.edge_gather, xw);
        let messages = tape.head_mix(q, h, self.heads);
        let pooled = tape.sparse(&topo.edge_mean, messages);
        Ok(tape.add_row(pooled, params.var(self.bias)))
    }
}

/// Evaluates one convolution layer outside of training.
pub fn spatial_conv_forward(x: &Mat, topo: &Topology, layer: &SpatialConvLayer, store: &ParamStore) -> Result<Mat> {
    layer.check_shapes(store)?;
    let mut tape = Tape::new();
    let params = store.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let y = layer.forward(&mut tape, &params, xv, topo)?;
    Ok(tape.value(y).clone())
}

/// Soft head assignments `q_m(x_i, x_j)` for every directed edge, rows in edge order.
pub fn head_assignments(x: &Mat, topo: &Topology, layer: &SpatialConvLayer, store: &ParamStore) -> Mat {
    let logits = topo.edge_diff.mul_dense(&x.dot(store.get(layer.assign))) + store.get(layer.assign_bias);
    crate::autodiff::softmax_rows(&logits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNetConfig {
    pub mode: FeatureMode,
    /// Hidden encoder widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub heads: usize,
}

impl Default for FeatureNetConfig {
    fn default() -> Self {
        Self { mode: FeatureMode::Spatial, hidden: vec![16, 32], latent_dim: 16, heads: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodePosterior {
    pub mean: Mat,
    pub log_variance: Mat,
}

impl NodePosterior {
    pub fn variance(&self) -> Mat {
        self.log_variance.mapv(f64::exp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureLossWeights {
    pub kl: f64,
    pub norm: f64,
}

impl Default for FeatureLossWeights {
    fn default() -> Self {
        Self { kl: 1e-3, norm: 1e-2 }
    }
}

impl FeatureLossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.kl < 0.0 {
            return Err(Error::NegativeWeight { name: "w_kl", value: self.kl });
        }
        if self.norm < 0.0 {
            return Err(Error::NegativeWeight { name: "w_norm", value: self.norm });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNet {
    pub config: FeatureNetConfig,
    pub encoder: Vec<SpatialConvLayer>,
    pub mean_head: SpatialConvLayer,
    pub logvar_head: SpatialConvLayer,
    pub decoder: Vec<SpatialConvLayer>,
}

/// Tape handles for an encoded graph.
#[derive(Debug, Clone, Copy)]
pub struct EncodedVars {
    pub mean: Var,
    pub log_variance: Var,
}

fn ensure_finite(tape: &Tape, v: Var, stage: &'static str, layer: usize) -> Result<()> {
    if tape.value(v).iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { stage, layer })
    }
}

impl FeatureNet {
    pub fn new(store: &mut ParamStore, prefix: &str, config: FeatureNetConfig, rng: &mut ChaCha8Rng) -> Self {
        let dx = config.mode.width();
        let h = config.heads;
        let mut widths = vec![dx];
        widths.extend(&config.hidden);
        let encoder: Vec<_> = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| SpatialConvLayer::new(store, &format!("{prefix}.enc{i}"), w[0], w[1], h, rng))
            .collect();
        let last = *widths.last().unwrap();
        let mean_head = SpatialConvLayer::new(store, &format!("{prefix}.mean"), last, config.latent_dim, h, rng);
        let logvar_head = SpatialConvLayer::new(store, &format!("{prefix}.logvar"), last, config.latent_dim, h, rng);
        let mut dec_widths = vec![config.latent_dim];
        dec_widths.extend(config.hidden.iter().rev());
        dec_widths.push(dx);
        let decoder = dec_widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| SpatialConvLayer::new(store, &format!("{prefix}.dec{i}"), w[0], w[1], h, rng))
            .collect();
        Self { config, encoder, mean_head, logvar_head, decoder }
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn layers(&self) -> impl Iterator<Item = &SpatialConvLayer> {
        self.encoder
            .iter()
            .chain([&self.mean_head, &self.logvar_head])
            .chain(self.decoder.iter())
    }

    pub fn check_shapes(&self, store: &ParamStore) -> Result<()> {
        self.layers().try_for_each(|l| l.check_shapes(store))
    }

    pub fn encode_on_tape(&self, tape: &mut Tape, params: &Binding, x: Var, topo: &Topology) -> Result<EncodedVars> {
        let width = tape.shape(x).1;
        if width != self.config.mode.width() {
            return Err(Error::dim(format!("features have {width} columns, network expects {}", self.config.mode.width())));
        }
        let mut h = x;
        for (i, layer) in self.encoder.iter().enumerate() {
            let y = layer.forward(tape, params, h, topo)?;
            h = tape.elu(y);
            ensure_finite(tape, h, "encoder", i)?;
        }
        let depth = self.encoder.len();
        let mean = self.mean_head.forward(tape, params, h, topo)?;
        ensure_finite(tape, mean, "encoder", depth)?;
        let log_variance = self.logvar_head.forward(tape, params, h, topo)?;
        ensure_finite(tape, log_variance, "encoder", depth)?;
        Ok(EncodedVars { mean, log_variance })
    }

    pub fn decode_on_tape(&self, tape: &mut Tape, params: &Binding, z: Var, topo: &Topology) -> Result<Var> {
        let mut h = z;
        let last = self.decoder.len() - 1;
        for (i, layer) in self.decoder.iter().enumerate() {
            let y = layer.forward(tape, params, h, topo)?;
            h = if i == last { y } else { tape.elu(y) };
            ensure_finite(tape, h, "decoder", i)?;
        }
        Ok(h)
    }

    pub fn encode(&self, store: &ParamStore, features: &Mat, topo: &Topology) -> Result<NodePosterior> {
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let x = tape.leaf(features.clone());
        let enc = self.encode_on_tape(&mut tape, &params, x, topo)?;
        Ok(NodePosterior { mean: tape.value(enc.mean).clone(), log_variance: tape.value(enc.log_variance).clone() })
    }

    pub fn decode(&self, store: &ParamStore, z: &Mat, topo: &Topology) -> Result<Mat> {
        if z.ncols() != self.config.latent_dim {
            return Err(Error::dim(format!("latent width {} vs {}", z.ncols(), self.config.latent_dim)));
        }
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let zv = tape.leaf(z.clone());
        let out = self.decode_on_tape(&mut tape, &params, zv, topo)?;
        Ok(tape.value(out).clone())
    }

    /// Full feature-network loss for one graph, built on `tape`.
    /// `noise` is the reparameterisation draw ε (zeros for the deterministic path).
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape,
        params: &Binding,
        features: Var,
        topo: &Topology,
        noise: &Mat,
        weights: &FeatureLossWeights,
    ) -> Result<FeatureLossVars> {
        weights.validate()?;
        let enc = self.encode_on_tape(tape, params, features, topo)?;
        let z = reparameterise(tape, enc, noise);
        let rec = self.decode_on_tape(tape, params, z, topo)?;
        let loss = feature_loss_on_tape(tape, features, rec, enc, self.config.mode, topo, weights)?;
        Ok(FeatureLossVars { loss, encoded: enc, reconstruction: rec })
    }

    /// Loss value and gradients for every parameter in `store` (store order).
    pub fn loss_and_grads(
        &self,
        store: &ParamStore,
        features: &Mat,
        topo: &Topology,
        noise: &Mat,
        weights: &FeatureLossWeights,
    ) -> Result<(f64, Vec<Mat>)> {
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let x = tape.leaf(features.clone());
        let out = self.loss_on_tape(&mut tape, &params, x, topo, noise, weights)?;
        let grads = tape.backward(out.loss);
        Ok((tape.scalar(out.loss), store.collect_grads(&params, &grads)))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FeatureLossVars {
    pub loss: Var,
    pub encoded: EncodedVars,
    pub reconstruction: Var,
}

/// `z = mean + exp(½ log σ²) ⊙ ε`
pub fn reparameterise(tape: &mut Tape, enc: EncodedVars, noise: &Mat) -> Var {
    if noise.iter().all(|&e| e == 0.0) {
        return enc.mean;
    }
    let half = tape.scale(enc.log_variance, 0.5);
    let std = tape.exp(half);
    let eps = tape.leaf(noise.clone());
    let jitter = tape.mul(std, eps);
    tape.add(enc.mean, jitter)
}

/// `KL(N(μ, σ²) ‖ N(0, I))` summed over all entries.
pub fn kl_on_tape(tape: &mut Tape, mean: Var, log_variance: Var) -> Var {
    let n = tape.value(mean).len() as f64;
    let mu2 = tape.sum_sq(mean);
    let var = tape.exp(log_variance);
    let var = tape.sum(var);
    let lv = tape.sum(log_variance);
    let a = tape.add(mu2, var);
    let b = tape.sub(a, lv);
    let b = tape.offset(b, -n);
    tape.scale(b, 0.5)
}

pub fn kl_divergence(mean: &Mat, log_variance: &Mat) -> f64 {
    0.5 * mean
        .iter()
        .zip(log_variance.iter())
        .map(|(&m, &lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// Mean-squared reconstruction error + `w_kl`·KL, plus `w_norm`·normal consistency of the
/// reconstructed surface in hybrid mode.
pub fn feature_loss_on_tape(
    tape: &mut Tape,
    features: Var,
    reconstruction: Var,
    enc: EncodedVars,
    mode: FeatureMode,
    topo: &Topology,
    weights: &FeatureLossWeights,
) -> Result<Var> {
    weights.validate()?;
    if tape.shape(features) != tape.shape(reconstruction) {
        return Err(Error::dim("reconstruction and input shapes differ"));
    }
    let count = tape.value(features).len() as f64;
    let diff = tape.sub(reconstruction, features);
    let sse = tape.sum_sq(diff);
    let mse = tape.scale(sse, 1.0 / count);
    let kl = kl_on_tape(tape, enc.mean, enc.log_variance);
    let kl = tape.scale(kl, weights.kl);
    let mut loss = tape.add(mse, kl);
    if mode == FeatureMode::Hybrid && weights.norm > 0.0 {
        if topo.face_pairs.is_empty() {
            return Err(Error::NoSharedEdge);
        }
        let pos = tape.slice_cols(reconstruction, 0, 3);
        let nc = tape.normal_consistency(pos, &topo.faces, &topo.face_pairs);
        let nc = tape.scale(nc, weights.norm);
        loss = tape.add(loss, nc);
    }
    Ok(loss)
}

/// Standard-normal draws of the given shape.
pub fn standard_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    use rand_distr::{Distribution, StandardNormal};
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}
