//! Held-out matching accuracy, generalisation, specificity and volume acceptance for a trained model.

use serde::{Deserialize, Serialize};

use super::{Model, PreparedShape};
use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::generator::SyntheticShape;
use crate::mesh::mesh_volume;
use crate::metrics::{acceptance_rates, specificity, AcceptanceReport, BiomarkerStats, ErrorSummary, Metric};

/// Per held-out shape: distances of the normalised shape and of its generator reconstruction
/// to the input vertex set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeScore {
    pub id: String,
    pub cluster: usize,
    pub match_hd: f64,
    pub match_cd: f64,
    pub gen_hd: f64,
    pub gen_cd: f64,
}

pub fn score_shapes(model: &Model, shapes: &[PreparedShape]) -> Result<Vec<ShapeScore>> {
    let mut out = Vec::with_capacity(shapes.len());
    for s in shapes {
        let matched = model.match_shape(s)?;
        let warped = &matched.normalized.positions;
        let rec = model.clusters[matched.cluster].generator.reconstruct(&model.params, warped)?;
        out.push(ShapeScore {
            id: s.id.clone(),
            cluster: matched.cluster,
            match_hd: Metric::Hd.distance(warped, &s.positions)?,
            match_cd: Metric::Cd.distance(warped, &s.positions)?,
            gen_hd: Metric::Hd.distance(&rec, &s.positions)?,
            gen_cd: Metric::Cd.distance(&rec, &s.positions)?,
        });
    }
    Ok(out)
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub matching_hd: ErrorSummary,
    pub matching_cd: ErrorSummary,
    pub generalisation_hd: ErrorSummary,
    pub generalisation_cd: ErrorSummary,
    pub specificity_hd: ErrorSummary,
    pub specificity_cd: ErrorSummary,
    pub volume_real: BiomarkerStats,
    pub volume_virtual: BiomarkerStats,
    pub acceptance: AcceptanceReport,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvaluationReport,
    pub scores: Vec<ShapeScore>,
    pub synthetic: Vec<SyntheticShape>,
    pub real_volumes: Vec<f64>,
    pub virtual_volumes: Vec<f64>,
}

/// Scores `test`, then samples `samples` virtual shapes and compares them with `real`
/// (the actual population) for specificity and volume acceptance.
pub fn evaluate(model: &Model, test: &[PreparedShape], real: &[PreparedShape], samples: usize, seed: u64) -> Result<Evaluation> {
    if test.is_empty() || real.is_empty() || samples == 0 {
        return Err(Error::InvalidArgument("evaluation needs test shapes, real shapes and at least one sample".into()));
    }
    let scores = score_shapes(model, test)?;
    let summary = |f: fn(&ShapeScore) -> f64| ErrorSummary::from_values(scores.iter().map(f).collect());
    let synthetic = model.sample(samples, seed)?;
    let virtual_positions: Vec<Mat> = synthetic.iter().map(|s| s.mesh.positions()).collect();
    let real_positions: Vec<Mat> = real.iter().map(|s| s.positions.clone()).collect();
    let real_volumes = real.iter().map(|s| mesh_volume(&s.mesh)).collect::<Result<Vec<_>>>()?;
    let virtual_volumes = synthetic.iter().map(|s| mesh_volume(&s.mesh)).collect::<Result<Vec<_>>>()?;
    let report = EvaluationReport {
        matching_hd: summary(|s| s.match_hd)?,
        matching_cd: summary(|s| s.match_cd)?,
        generalisation_hd: summary(|s| s.gen_hd)?,
        generalisation_cd: summary(|s| s.gen_cd)?,
        specificity_hd: specificity(&virtual_positions, &real_positions, Metric::Hd)?,
        specificity_cd: specificity(&virtual_positions, &real_positions, Metric::Cd)?,
        volume_real: BiomarkerStats::from_values(&real_volumes)?,
        volume_virtual: BiomarkerStats::from_values(&virtual_volumes)?,
        acceptance: acceptance_rates(&real_volumes, &virtual_volumes)?,
        samples,
        seed,
    };
    Ok(Evaluation { report, scores, synthetic, real_volumes, virtual_volumes })
}
