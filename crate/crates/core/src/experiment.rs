//! Multi-seed experiment runs, aggregate statistics and table emission.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{
    diagnostics, latent_embedding_csv, transition_map_csv, transition_samples, transition_samples_csv,
    DiagnosticsReport,
};
use crate::cohomology::{
    compute_sign_cocycle, orientability_report, verify_cocycle_condition, CocycleCheck, Gates, OrientabilityReport,
    SignCocycle, Verdict, DEFAULT_CONSISTENCY,
};
use crate::cover::{
    decompose_overlaps, landmark_cover, nerve_stats, slab_cover, tetrahedral_cover, Cover, NerveStats, OverlapComponent,
};
use crate::error::{AtlasError, Result};
use crate::geometry::{sample_klein, sample_line_patches, sample_mobius, sample_sphere, PointCloud};
use crate::stability::{stability_check, RegularityBounds, StabilityCheck};
use crate::train::{train_atlas, RetryEvent, TrainConfig};

pub const PRESET_NAMES: [&str; 4] = ["sphere", "mobius", "klein", "rp2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManifoldSpec {
    Sphere {
        n_points: usize,
    },
    Mobius {
        n_points: usize,
    },
    Klein {
        n_points: usize,
        m: f64,
    },
    Rp2Patches {
        n_angles: usize,
        n_offsets: usize,
        blur: f64,
    },
}

impl ManifoldSpec {
    pub fn sample(&self, seed: u64) -> Result<PointCloud> {
        match *self {
            ManifoldSpec::Sphere { n_points } => sample_sphere(n_points, seed),
            ManifoldSpec::Mobius { n_points } => sample_mobius(n_points, seed),
            ManifoldSpec::Klein { n_points, m } => sample_klein(n_points, m, seed),
            ManifoldSpec::Rp2Patches {
                n_angles,
                n_offsets,
                blur,
            } => sample_line_patches(n_angles, n_offsets, blur),
        }
    }

    /// The correct answer for the manifold.
    pub fn expected_verdict(&self) -> Verdict {
        match self {
            ManifoldSpec::Sphere { .. } => Verdict::Orientable,
            _ => Verdict::NonOrientable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum CoverSpec {
    Tetrahedral { eps: f64 },
    Slab { axis: usize, lo: f64, hi: f64 },
    Landmark { n_charts: usize, k: usize, percentile: f64 },
}

impl CoverSpec {
    pub fn build(&self, cloud: &PointCloud, seed: u64) -> Result<Cover> {
        match *self {
            CoverSpec::Tetrahedral { eps } => tetrahedral_cover(cloud, eps),
            CoverSpec::Slab { axis, lo, hi } => slab_cover(cloud, axis, lo, hi),
            CoverSpec::Landmark {
                n_charts,
                k,
                percentile,
            } => landmark_cover(cloud, n_charts, k, percentile, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapSpec {
    pub eps_cluster: f64,
    pub min_size: usize,
}

/// Lipschitz constants supplied by the user; `ε`, `η` and `δ` come from the
/// measured diagnostics of each seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzInputs {
    pub l_e: f64,
    pub l_ep: f64,
    pub l_d: f64,
    pub l_dp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSpec {
    pub latent: bool,
    pub transitions: bool,
    pub models: bool,
    pub loss_curves: bool,
    pub point_cloud: bool,
}

impl Default for ExportSpec {
    fn default() -> Self {
        Self {
            latent: true,
            transitions: true,
            models: true,
            loss_curves: true,
            point_cloud: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub manifold: ManifoldSpec,
    pub cover: CoverSpec,
    pub overlap: OverlapSpec,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub gates: Gates,
    #[serde(default = "default_consistency")]
    pub consistency: f64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub export: ExportSpec,
    #[serde(default)]
    pub lipschitz: Option<LipschitzInputs>,
}

fn default_consistency() -> f64 {
    DEFAULT_CONSISTENCY
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(AtlasError::Parameter("at least one seed is required".into()));
        }
        if !(0.5..=1.0).contains(&self.consistency) {
            return Err(AtlasError::Parameter(format!(
                "consistency {} outside [0.5, 1]",
                self.consistency
            )));
        }
        self.train.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

const PAPER_SEEDS: [u64; 5] = [42, 43, 44, 45, 46];

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let base = TrainConfig::default();
    let cfg = match name {
        "sphere" => ExperimentConfig {
            name: "sphere".into(),
            manifold: ManifoldSpec::Sphere { n_points: 1000 },
            cover: CoverSpec::Tetrahedral { eps: 0.3 },
            overlap: OverlapSpec {
                eps_cluster: 0.3,
                min_size: 10,
            },
            train: TrainConfig { epochs: 2000, ..base },
            seeds: PAPER_SEEDS.to_vec(),
            gates: Gates::default(),
            consistency: DEFAULT_CONSISTENCY,
            output_dir: "out/sphere".into(),
            export: ExportSpec::default(),
            lipschitz: None,
        },
        "mobius" => ExperimentConfig {
            name: "mobius".into(),
            manifold: ManifoldSpec::Mobius { n_points: 1500 },
            cover: CoverSpec::Slab {
                axis: 1,
                lo: -0.3,
                hi: 0.3,
            },
            overlap: OverlapSpec {
                eps_cluster: 0.5,
                min_size: 20,
            },
            train: TrainConfig { epochs: 3000, ..base },
            seeds: PAPER_SEEDS.to_vec(),
            gates: Gates::default(),
            consistency: DEFAULT_CONSISTENCY,
            output_dir: "out/mobius".into(),
            export: ExportSpec::default(),
            lipschitz: None,
        },
        "klein" => ExperimentConfig {
            name: "klein".into(),
            manifold: ManifoldSpec::Klein { n_points: 1000, m: 4.0 },
            cover: CoverSpec::Landmark {
                n_charts: 8,
                k: 100,
                percentile: 0.2,
            },
            overlap: OverlapSpec {
                eps_cluster: 1.0,
                min_size: 20,
            },
            train: TrainConfig {
                epochs: 4000,
                lambda_jac: 0.01,
                ..base
            },
            seeds: PAPER_SEEDS.to_vec(),
            gates: Gates::default(),
            consistency: DEFAULT_CONSISTENCY,
            output_dir: "out/klein".into(),
            export: ExportSpec::default(),
            lipschitz: None,
        },
        "rp2" => ExperimentConfig {
            name: "rp2".into(),
            manifold: ManifoldSpec::Rp2Patches {
                n_angles: 75,
                n_offsets: 75,
                blur: 0.25,
            },
            cover: CoverSpec::Landmark {
                n_charts: 10,
                k: 20,
                percentile: 0.2,
            },
            overlap: OverlapSpec {
                eps_cluster: 0.5,
                min_size: 10,
            },
            train: TrainConfig {
                epochs: 1000,
                lambda_jac: 0.0,
                retry_extra_epochs: 1000,
                ..base
            },
            seeds: PAPER_SEEDS.to_vec(),
            gates: Gates::default(),
            consistency: DEFAULT_CONSISTENCY,
            output_dir: "out/rp2".into(),
            export: ExportSpec {
                point_cloud: false,
                ..ExportSpec::default()
            },
            lipschitz: None,
        },
        _ => return None,
    };
    Some(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub converged: bool,
    pub retry_count: usize,
    pub retries: Vec<RetryEvent>,
    pub sup_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub status: SeedStatus,
    pub error: Option<String>,
    pub nerve: Option<NerveStats>,
    pub chart_sizes: Vec<usize>,
    pub n_components: usize,
    pub degenerate_pairs: Vec<(usize, usize)>,
    pub noise_points: usize,
    pub training: Option<TrainingSummary>,
    pub diagnostics: Option<DiagnosticsReport>,
    pub cocycle: Option<SignCocycle>,
    pub cocycle_check: Option<CocycleCheck>,
    pub orientability: Option<OrientabilityReport>,
    pub stability: Option<StabilityCheck>,
    pub verdict: Verdict,
    /// Passed every gate.
    pub converged: bool,
}

impl SeedResult {
    fn failed(seed: u64, message: String) -> Self {
        Self {
            seed,
            status: SeedStatus::Error,
            error: Some(message),
            nerve: None,
            chart_sizes: Vec::new(),
            n_components: 0,
            degenerate_pairs: Vec::new(),
            noise_points: 0,
            training: None,
            diagnostics: None,
            cocycle: None,
            cocycle_check: None,
            orientability: None,
            stability: None,
            verdict: Verdict::Inconclusive,
            converged: false,
        }
    }

    pub fn sign_counts(&self) -> (usize, usize) {
        self.cocycle.as_ref().map_or((0, 0), |c| {
            let pos = c.edges.iter().filter(|e| e.sign > 0).count();
            (pos, c.edges.len() - pos)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub subset: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_seeds: usize,
    pub n_errors: usize,
    pub n_converged: usize,
    pub expected: Verdict,
    pub n_correct: usize,
    /// Correct verdicts among converged seeds; `None` without converged seeds.
    pub accuracy: Option<f64>,
    /// Correct verdicts among all seeds.
    pub raw_accuracy: f64,
    pub metrics: Vec<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedResult>,
    pub aggregate: Aggregate,
    /// Wall-clock seconds per seed; written to its own file so the report
    /// itself stays reproducible.
    #[serde(skip)]
    pub timing: BTreeMap<u64, f64>,
}

impl RunReport {
    pub fn has_errors(&self) -> bool {
        self.seeds.iter().any(|s| s.status == SeedStatus::Error)
    }
}

/// Everything a seed produced, kept in memory for file export.
struct SeedArtifacts {
    result: SeedResult,
    files: Vec<(String, String)>,
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedArtifacts> {
    let cloud = cfg.manifold.sample(seed)?;
    let cover = cfg.cover.build(&cloud, seed)?;
    let nerve = nerve_stats(&cover);
    if nerve.single_chart {
        warn!("seed {seed}: single-chart cover cannot represent a closed manifold");
    }
    let decomposition = decompose_overlaps(&cloud, &cover, cfg.overlap.eps_cluster, cfg.overlap.min_size)?;
    let triples = cover.triple_overlaps();

    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let (atlas, log) = train_atlas(&cloud, &cover, &train_cfg)?;

    let samples = transition_samples(&atlas, &cloud, &decomposition.components)?;
    let diag = diagnostics(&atlas, &cloud, &samples, &triples)?;
    let cocycle = compute_sign_cocycle(&samples, cover.n_charts(), cfg.consistency)?;
    let check = verify_cocycle_condition(&atlas, &cloud, &triples)?;
    let report = orientability_report(&diag, &cocycle, check.fraction, &cfg.gates);
    let stability = cfg.lipschitz.map(|l| {
        stability_check(&RegularityBounds {
            l_e: l.l_e,
            l_ep: l.l_ep,
            l_d: l.l_d,
            l_dp: l.l_dp,
            eps: diag.eps_sup,
            eta: diag.eta_lat,
            delta: diag.delta,
            d: atlas.latent_dim as u32,
            on_manifold: false,
        })
    });
    info!(
        "seed {seed}: eps_sup {:.4} eta_lat {:.3} delta {:.4} verdict {}",
        diag.eps_sup, diag.eta_lat, diag.delta, report.verdict
    );

    let mut files = vec![
        (
            "cover.json".to_string(),
            serde_json::to_string_pretty(&cover.to_json(&decomposition.components))? + "\n",
        ),
        ("transition_samples.csv".to_string(), transition_samples_csv(&samples)),
        ("signs.csv".to_string(), cocycle.to_csv()),
    ];
    if cfg.export.point_cloud {
        files.push(("points.csv".into(), cloud.to_csv()));
    }
    if cfg.export.loss_curves {
        files.push(("loss.csv".into(), log.loss_csv()));
    }
    if cfg.export.models {
        files.push(("model.json".into(), serde_json::to_string(&atlas.to_json())? + "\n"));
    }
    if cfg.export.latent {
        for c in 0..atlas.n_charts() {
            files.push((
                format!("latent_chart_{c}.csv"),
                latent_embedding_csv(&atlas, &cloud, c)?,
            ));
        }
    }
    if cfg.export.transitions {
        let mut by_pair: BTreeMap<(usize, usize), Vec<&OverlapComponent>> = BTreeMap::new();
        for comp in &decomposition.components {
            by_pair.entry(comp.pair).or_default().push(comp);
        }
        for ((i, j), comps) in by_pair {
            files.push((
                format!("transition_{i}_{j}.csv"),
                transition_map_csv(&atlas, &cloud, &comps)?,
            ));
        }
    }

    let verdict = report.verdict;
    Ok(SeedArtifacts {
        result: SeedResult {
            seed,
            status: SeedStatus::Ok,
            error: None,
            nerve: Some(nerve),
            chart_sizes: cover.charts.iter().map(Vec::len).collect(),
            n_components: decomposition.components.len(),
            degenerate_pairs: decomposition.degenerate_pairs,
            noise_points: decomposition.noise_points,
            training: Some(TrainingSummary {
                converged: log.converged,
                retry_count: log.retry_count,
                retries: log.retries.clone(),
                sup_errors: log.sup_errors.clone(),
            }),
            diagnostics: Some(diag),
            cocycle: Some(cocycle),
            cocycle_check: Some(check),
            orientability: Some(report),
            stability,
            verdict,
            converged: verdict != Verdict::Inconclusive,
        },
        files,
    })
}

/// Runs one seed, turning errors and panics into an error record.
fn run_seed_isolated(cfg: &ExperimentConfig, seed: u64) -> (SeedArtifacts, f64) {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(|| run_seed(cfg, seed)));
    let artifacts = match outcome {
        Ok(Ok(a)) => a,
        Ok(Err(e)) => {
            warn!("seed {seed} failed: {e}");
            SeedArtifacts {
                result: SeedResult::failed(seed, e.to_string()),
                files: Vec::new(),
            }
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            warn!("seed {seed} panicked: {message}");
            SeedArtifacts {
                result: SeedResult::failed(seed, format!("panic: {message}")),
                files: Vec::new(),
            }
        }
    };
    (artifacts, start.elapsed().as_secs_f64())
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

const METRICS: [&str; 8] = [
    "eps_sup",
    "eps_mean",
    "eta_lat",
    "delta",
    "cocycle_error",
    "cocycle_error_max",
    "sigma_min_e",
    "cocycle_check",
];

fn metric_values(s: &SeedResult) -> Option<[f64; 8]> {
    let d = s.diagnostics.as_ref()?;
    let check = s.cocycle_check.as_ref().map_or(f64::NAN, |c| c.fraction);
    Some([
        d.eps_sup,
        d.eps_mean,
        d.eta_lat,
        d.delta,
        d.cocycle_error_mean,
        d.cocycle_error_max,
        d.sigma_min_e,
        check,
    ])
}

pub fn aggregate(seeds: &[SeedResult], expected: Verdict) -> Aggregate {
    let converged: Vec<&SeedResult> = seeds.iter().filter(|s| s.converged).collect();
    let n_correct = converged.iter().filter(|s| s.verdict == expected).count();
    let mut metrics = Vec::new();
    for (subset, members) in [("converged", converged.clone()), ("all", seeds.iter().collect())] {
        let rows: Vec<[f64; 8]> = members.iter().filter_map(|s| metric_values(s)).collect();
        if rows.is_empty() {
            continue;
        }
        for (m, name) in METRICS.iter().enumerate() {
            let values: Vec<f64> = rows.iter().map(|r| r[m]).collect();
            let (mean, std) = mean_std(&values);
            metrics.push(MetricSummary {
                metric: name.to_string(),
                subset: subset.into(),
                mean,
                std,
                n: values.len(),
            });
        }
    }
    Aggregate {
        n_seeds: seeds.len(),
        n_errors: seeds.iter().filter(|s| s.status == SeedStatus::Error).count(),
        n_converged: converged.len(),
        expected,
        n_correct,
        accuracy: (!converged.is_empty()).then(|| n_correct as f64 / converged.len() as f64),
        raw_accuracy: if seeds.is_empty() {
            0.0
        } else {
            n_correct as f64 / seeds.len() as f64
        },
        metrics,
    }
}

/// Runs every seed, at most `jobs` at a time, and writes the tables and the
/// per-seed artifacts under `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<RunReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| AtlasError::Parameter(format!("thread pool: {e}")))?;
    let outcomes: Vec<(SeedArtifacts, f64)> =
        pool.install(|| cfg.seeds.par_iter().map(|&seed| run_seed_isolated(cfg, seed)).collect());

    fs::create_dir_all(&cfg.output_dir)?;
    let mut seeds = Vec::with_capacity(outcomes.len());
    let mut timing = BTreeMap::new();
    for (artifacts, seconds) in outcomes {
        let seed = artifacts.result.seed;
        if !artifacts.files.is_empty() {
            let dir = cfg.output_dir.join(format!("seed_{seed}"));
            fs::create_dir_all(&dir)?;
            for (name, content) in &artifacts.files {
                fs::write(dir.join(name), content)?;
            }
        }
        timing.insert(seed, seconds);
        seeds.push(artifacts.result);
    }
    let aggregate = aggregate(&seeds, cfg.manifold.expected_verdict());
    let report = RunReport {
        config: cfg.clone(),
        seeds,
        aggregate,
        timing,
    };
    emit_tables(&report, &cfg.output_dir)?;
    Ok(report)
}

pub fn metrics_summary_csv(report: &RunReport) -> String {
    let mut out = String::from("metric,subset,mean,std,n\n");
    for m in &report.aggregate.metrics {
        out.push_str(&format!("{},{},{},{},{}\n", m.metric, m.subset, m.mean, m.std, m.n));
    }
    out
}

pub fn per_trial_csv(report: &RunReport) -> String {
    let mut out = String::from(
        "seed,status,converged,verdict,eps_sup,eps_mean,eta_lat,delta,cocycle_error,cocycle_error_max,\
         sigma_min_e,cocycle_check,n_components,n_positive,n_negative,retries,error\n",
    );
    for s in &report.seeds {
        let values =
            metric_values(s).map_or_else(|| vec![String::new(); 8], |v| v.iter().map(f64::to_string).collect());
        let (pos, neg) = s.sign_counts();
        let retries = s.training.as_ref().map_or(0, |t| t.retry_count);
        let status = match s.status {
            SeedStatus::Ok => "ok",
            SeedStatus::Error => "error",
        };
        let error = s.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        out.push_str(&format!(
            "{},{status},{},{},{},{},{pos},{neg},{retries},{error}\n",
            s.seed,
            s.converged,
            s.verdict,
            values.join(","),
            s.n_components,
        ));
    }
    out
}

pub fn signs_per_component_csv(report: &RunReport) -> String {
    let mut out = String::from("seed,i,j,component,sign,agreement,n_points,degenerate\n");
    for s in &report.seeds {
        for e in s.cocycle.iter().flat_map(|c| &c.edges) {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                s.seed, e.pair.0, e.pair.1, e.component_id, e.sign, e.agreement_fraction, e.n_points, e.degenerate
            ));
        }
    }
    out
}

/// Writes `metrics_summary.csv`, `per_trial.csv`, `signs_per_component.csv`,
/// `report.json` and `timing.json` into `dir`.
pub fn emit_tables(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let files = [
        ("metrics_summary.csv", metrics_summary_csv(report)),
        ("per_trial.csv", per_trial_csv(report)),
        ("signs_per_component.csv", signs_per_component_csv(report)),
        ("report.json", serde_json::to_string_pretty(report)? + "\n"),
        ("timing.json", serde_json::to_string_pretty(&report.timing)? + "\n"),
    ];
    let mut written = Vec::with_capacity(files.len());
    for (name, content) in files {
        let path = dir.join(name);
        fs::write(&path, content)?;
        written.push(path);
    }
    Ok(written)
}
