use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use shapeatlas::atlas::{cluster_weights, converge_multi_atlas, default_alpha, distance_matrix, Atlas, SweepRule};
use shapeatlas::attention::write_phi;
use shapeatlas::cohort::Cohort;
use shapeatlas::mesh::io::{read_mesh, write_mesh};
use shapeatlas::metrics::plot::{boxplot_svg, histogram_svg};
use shapeatlas::pipeline::checkpoint;
use shapeatlas::pipeline::eval::evaluate;
use shapeatlas::pipeline::{train, write_weights_csv, Model, TrainConfig};
use shapeatlas::synth::{canonical_shapes, generate_population, Family, PopulationSpec};
use shapeatlas::Error;

#[derive(Parser)]
#[command(name = "shapeatlas", version, about = "Atlas-based shape matching and generative shape modelling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort (OBJ files plus cohort.json).
    GenerateData(GenerateArgs),
    /// Train matching, atlas and generators on a cohort directory.
    Train(TrainArgs),
    /// Normalise shapes onto their most likely atlas.
    Match(MatchArgs),
    /// Build atlases from a trained model's warps, or from meshes sharing one connectivity.
    BuildAtlas(BuildAtlasArgs),
    /// Sample virtual shapes from a trained model.
    Synthesize(SynthesizeArgs),
    /// Soft and hard cluster assignments for a cohort.
    Cluster(ClusterArgs),
    /// Matching, generalisation, specificity and volume acceptance rates.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value = "bumpy-sphere")]
    family: Family,
    #[arg(long, default_value_t = 60)]
    count: usize,
    #[arg(long, default_value_t = 80)]
    n_lo: usize,
    #[arg(long, default_value_t = 200)]
    n_hi: usize,
    #[arg(long, default_value_t = 0.3)]
    amplitude: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML configuration; profile defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cohort directory; overrides `dataset` in the configuration.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write each dense correspondence map as `<id>.phi`.
    #[arg(long)]
    phi: bool,
}

#[derive(Args)]
struct BuildAtlasArgs {
    /// Trained model whose warps feed the sweeps.
    #[arg(long, requires = "data")]
    checkpoint: Option<PathBuf>,
    /// Raw cohort to warp with the checkpoint.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory of meshes already on the atlas connectivity.
    #[arg(long, conflicts_with = "checkpoint", requires = "init")]
    normalized: Option<PathBuf>,
    /// Starting atlas for `--normalized`.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    #[arg(long, default_value_t = 100)]
    max_sweeps: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthesizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// CSV of soft weights and hard labels.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Held-out cohort.
    #[arg(long)]
    test: PathBuf,
    /// Actual population for specificity and biomarkers; the test cohort when absent.
    #[arg(long)]
    real: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::NonFinite { .. } | Error::NonFiniteLoss { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateData(a) => generate_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Match(a) => match_cmd(a),
        Command::BuildAtlas(a) => build_atlas(a),
        Command::Synthesize(a) => synthesize(a),
        Command::Cluster(a) => cluster(a),
        Command::Evaluate(a) => evaluate_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

type Result<T = ()> = shapeatlas::Result<T>;

fn write_json(path: &Path, value: &impl Serialize) -> Result {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn generate_data(a: GenerateArgs) -> Result {
    let spec = PopulationSpec { family: a.family, count: a.count, n_lo: a.n_lo, n_hi: a.n_hi, amplitude: a.amplitude, seed: a.seed };
    let cohort = generate_population(&spec)?;
    cohort.write(&a.out)?;
    // canonical initial atlases for `atlas.init`: one per cluster count the family supports
    let init = a.out.join("init");
    fs::create_dir_all(&init)?;
    write_mesh(&init.join("single.obj"), &canonical_shapes(a.family, 1, 2)?[0])?;
    if a.family == Family::Bimodal {
        for (m, mesh) in canonical_shapes(a.family, 2, 2)?.iter().enumerate() {
            write_mesh(&init.join(format!("pair_{m}.obj")), mesh)?;
        }
    }
    println!("wrote {} shapes to {}", cohort.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result {
    let mut config = match &a.config {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::from_toml("")?,
    };
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(d) = a.data {
        config.dataset = Some(d);
    }
    let data = config.dataset.clone().ok_or_else(|| Error::Config("no dataset: pass --data or set `dataset`".into()))?;
    config.validate()?;
    let cohort = Cohort::read(&data)?;
    let outcome = train(config, &cohort, Some(&a.out))?;
    if let Some(last) = outcome.log.last() {
        println!("epoch {} total loss {:.6}", last.epoch, last.total);
    }
    Ok(())
}

fn load(path: &Path) -> Result<Model> {
    checkpoint::load(path)
}

#[derive(Serialize)]
struct MatchRow<'a> {
    id: &'a str,
    cluster: usize,
    hd: f64,
    cd: f64,
    max_row_sum_error: f64,
}

fn match_cmd(a: MatchArgs) -> Result {
    let model = load(&a.checkpoint)?;
    let cohort = Cohort::read(&a.data)?;
    let shapes = model.prepare(&cohort)?;
    fs::create_dir_all(&a.out)?;
    let mut table = csv::Writer::from_path(a.out.join("matches.csv")).map_err(csv_err)?;
    for s in &shapes {
        let m = model.match_shape(s)?;
        let atlas = &model.clusters[m.cluster].atlas;
        write_mesh(&a.out.join(format!("{}.obj", s.id)), &atlas.mesh().with_positions(&m.normalized.positions))?;
        if a.phi {
            write_phi(&a.out.join(format!("{}.phi", s.id)), &m.map)?;
        }
        table
            .serialize(MatchRow {
                id: &s.id,
                cluster: m.cluster,
                hd: shapeatlas::mesh::hausdorff_distance(&m.normalized.positions, &s.positions)?,
                cd: shapeatlas::mesh::chamfer_distance(&m.normalized.positions, &s.positions)?,
                max_row_sum_error: m.map.row_sum_error(),
            })
            .map_err(csv_err)?;
    }
    table.flush()?;
    println!("matched {} shapes", shapes.len());
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.into())
}

#[derive(Serialize)]
struct AtlasSidecar {
    cluster: usize,
    gamma: f64,
    sweeps: usize,
    displacement: f64,
    objective: f64,
    vertices: usize,
}

fn build_atlas(a: BuildAtlasArgs) -> Result {
    let rule = SweepRule { tolerance: a.tolerance, max_sweeps: a.max_sweeps };
    let gammas = |m: usize| a.gamma.map(|g| vec![g; m]);
    fs::create_dir_all(&a.out)?;
    let (results, weights, ids) = if let Some(ckpt) = &a.checkpoint {
        let model = load(ckpt)?;
        let cohort = Cohort::read(a.data.as_ref().expect("clap requires --data"))?;
        let shapes = model.prepare(&cohort)?;
        let warps = model.warp_all(&shapes)?;
        let atlases: Vec<Atlas> = model.clusters.iter().map(|c| c.atlas.clone()).collect();
        let w = if atlases.len() > 1 {
            let d = distance_matrix(&warps, &atlases)?;
            let alpha = model.config.atlas.alpha.unwrap_or_else(|| default_alpha(&d));
            cluster_weights(&d, Some(alpha))?.w
        } else {
            shapeatlas::autodiff::Mat::ones((shapes.len(), 1))
        };
        let g = gammas(atlases.len());
        let results = converge_multi_atlas(&atlases, &warps, &w, g.as_deref(), rule)?;
        (results, w, shapes.into_iter().map(|s| s.id).collect::<Vec<_>>())
    } else {
        let dir = a.normalized.as_ref().ok_or_else(|| Error::InvalidArgument("pass --checkpoint/--data or --normalized/--init".into()))?;
        let init = Atlas::from_mesh(&read_mesh(a.init.as_ref().expect("clap requires --init"))?)?;
        let cohort = Cohort::read(dir)?;
        let warps: Vec<_> = cohort.entries.iter().map(|e| e.mesh.positions()).collect();
        let w = shapeatlas::autodiff::Mat::ones((warps.len(), 1));
        let g = gammas(1);
        let results = converge_multi_atlas(&[init], &[warps], &w, g.as_deref(), rule)?;
        (results, w, cohort.entries.into_iter().map(|e| e.id).collect())
    };
    let mut sidecar = Vec::new();
    for (m, (atlas, report)) in results.iter().enumerate() {
        write_mesh(&a.out.join(format!("atlas_{m}.obj")), &atlas.mesh())?;
        sidecar.push(AtlasSidecar {
            cluster: m,
            gamma: report.gamma,
            sweeps: report.sweeps,
            displacement: report.displacement,
            objective: report.objective,
            vertices: atlas.size(),
        });
    }
    write_json(&a.out.join("atlas.json"), &sidecar)?;
    write_weights_csv(&a.out.join("weights.csv"), &ids, &weights)?;
    println!("built {} atlas(es)", results.len());
    Ok(())
}

#[derive(Serialize)]
struct SampleRow {
    id: String,
    cluster: usize,
    latent_seed: u64,
    volume: f64,
}

fn synthesize(a: SynthesizeArgs) -> Result {
    let model = load(&a.checkpoint)?;
    let samples = model.sample(a.count, a.seed)?;
    fs::create_dir_all(&a.out)?;
    let mut table = csv::Writer::from_path(a.out.join("samples.csv")).map_err(csv_err)?;
    for (i, s) in samples.iter().enumerate() {
        let id = format!("sample_{i:04}");
        write_mesh(&a.out.join(format!("{id}.obj")), &s.mesh)?;
        let volume = shapeatlas::mesh::mesh_volume(&s.mesh)?;
        table.serialize(SampleRow { id, cluster: s.cluster, latent_seed: s.latent_seed, volume }).map_err(csv_err)?;
    }
    table.flush()?;
    println!("wrote {} samples", samples.len());
    Ok(())
}

fn cluster(a: ClusterArgs) -> Result {
    let model = load(&a.checkpoint)?;
    let cohort = Cohort::read(&a.data)?;
    let shapes = model.prepare(&cohort)?;
    let w = model.assign(&shapes)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let ids: Vec<String> = shapes.into_iter().map(|s| s.id).collect();
    write_weights_csv(&a.out, &ids, &w.w)?;
    println!("assigned {} shapes to {} clusters", ids.len(), w.w.ncols());
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result {
    let model = load(&a.checkpoint)?;
    let test = model.prepare(&Cohort::read(&a.test)?)?;
    let real = match &a.real {
        Some(dir) => model.prepare(&Cohort::read(dir)?)?,
        None => test.clone(),
    };
    let ev = evaluate(&model, &test, &real, a.samples, a.seed)?;
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("metrics.json"), &ev.report)?;
    let mut table = csv::Writer::from_path(a.out.join("per_shape.csv")).map_err(csv_err)?;
    for s in &ev.scores {
        table.serialize(s).map_err(csv_err)?;
    }
    table.flush()?;
    let match_hd: Vec<f64> = ev.scores.iter().map(|s| s.match_hd).collect();
    fs::write(
        a.out.join("volumes.svg"),
        histogram_svg("Volume", &[("real", &ev.real_volumes), ("virtual", &ev.virtual_volumes)], 20),
    )?;
    fs::write(
        a.out.join("errors.svg"),
        boxplot_svg(
            "HD errors",
            &[
                ("matching", &match_hd),
                ("generalisation", &ev.report.generalisation_hd.values),
                ("specificity", &ev.report.specificity_hd.values),
            ],
        ),
    )?;
    let r = &ev.report;
    println!(
        "generalisation HD {:.4}, specificity HD {:.4}, acceptance [min,max] {:.1}% M±3B {:.1}% μ±2σ {:.1}%",
        r.generalisation_hd.mean, r.specificity_hd.mean, r.acceptance.minmax, r.acceptance.chebyshev, r.acceptance.normal
    );
    Ok(())
}
