//! End-to-end seed generation: fused-similarity baseline, cluster sampling,
//! contrastive enhancement with global resampling and correction, then
//! neighborhood expansion and recheck. Also the shared evaluation used to
//! compare seed strategies.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_quota, kmeans, select_k, stack_points, stage1_sample};
use crate::enhance::{forward_active, global_sample, mic_correct, train_active, EnhancedFeatures, TrainConfig};
use crate::error::{Error, Result};
use crate::expand::{expand, recheck, ExpansionConfig};
use crate::kg::{load_kg, read_alignment, synth_generate, AlignmentMap, Modality, MultiModalKg, SynthConfig};
use crate::metrics::{quality_report, rank_alignment, QualityReport, RankingReport};
use crate::matrix::Matrix;
use crate::rng;
use crate::sim::{cosine_sim_matrix, fused_features, fused_sim, uvp_seeds, ModalityWeights, SeedSet};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "PSQE_OUT_DIR";
/// Output directory used when neither the config nor the environment names one.
pub const DEFAULT_OUT_DIR: &str = "psqe-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropModality {
    #[default]
    None,
    Visual,
    Attr,
    Rel,
}

impl DropModality {
    pub fn modality(self) -> Option<Modality> {
        match self {
            DropModality::None => None,
            DropModality::Visual => Some(Modality::Visual),
            DropModality::Attr => Some(Modality::Attribute),
            DropModality::Rel => Some(Modality::Relation),
        }
    }
}

impl FromStr for DropModality {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(DropModality::None),
            "visual" => Ok(DropModality::Visual),
            "attr" => Ok(DropModality::Attr),
            "rel" => Ok(DropModality::Rel),
            other => Err(format!("unknown modality {other:?} (expected visual, attr, rel or none)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    pub skip_stage2: bool,
    pub skip_stage3: bool,
    /// Disables both the Stage II correction and the final recheck.
    pub skip_mic: bool,
    pub drop_modality: DropModality,
}

/// Which pairs the error correction inspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MicScope {
    /// Only the pairs a stage adds, compared among themselves; earlier pairs stay.
    #[default]
    New,
    /// Every pair in the set after the stage.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub enabled: bool,
    /// Share of the ground truth held out as ranking queries.
    pub test_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            test_fraction: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Generate both graphs instead of loading them.
    pub synth: Option<SynthConfig>,
    pub kg1: Option<PathBuf>,
    pub kg2: Option<PathBuf>,
    /// Ground-truth alignment used only for reporting.
    pub truth: Option<PathBuf>,
    pub n_init_seeds: usize,
    /// Pairs added by global sampling; defaults to `n_init_seeds`.
    pub n_global: Option<usize>,
    pub weights: ModalityWeights,
    pub cluster_range: (usize, usize),
    pub train: TrainConfig,
    pub expansion: ExpansionConfig,
    pub ablations: Ablations,
    pub mic_scope: MicScope,
    /// Keep only the best-scoring `fixed_n` final seeds.
    pub fixed_n: Option<usize>,
    /// Start cluster sampling from the visual-pivot seeds instead of empty.
    pub warm_start_uvp: bool,
    pub eval: EvalConfig,
    /// Drives every random stream, including synthetic generation and training.
    pub rng_seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            synth: None,
            kg1: None,
            kg2: None,
            truth: None,
            n_init_seeds: 1000,
            n_global: None,
            weights: ModalityWeights::default(),
            cluster_range: (2, 5),
            train: TrainConfig::default(),
            expansion: ExpansionConfig::default(),
            ablations: Ablations::default(),
            mic_scope: MicScope::default(),
            fixed_n: None,
            warm_start_uvp: false,
            eval: EvalConfig::default(),
            rng_seed: 42,
            out_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.kg1, &mut cfg.kg2, &mut cfg.truth].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let files = self.kg1.is_some() || self.kg2.is_some();
        match (&self.synth, files) {
            (Some(_), true) => return Err(Error::Config("give either synth or kg1/kg2, not both".into())),
            (None, false) => return Err(Error::Config("no input: set synth or kg1 and kg2".into())),
            (None, true) if self.kg1.is_none() || self.kg2.is_none() => {
                return Err(Error::Config("kg1 and kg2 must both be set".into()))
            }
            _ => {}
        }
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        let (lo, hi) = self.cluster_range;
        if lo < 2 || lo > hi {
            return Err(Error::Config(format!("cluster_range must satisfy 2 <= lo <= hi, got {lo}..={hi}")));
        }
        if !(self.eval.test_fraction > 0.0 && self.eval.test_fraction <= 1.0) {
            return Err(Error::Config("eval.test_fraction must be in (0, 1]".into()));
        }
        self.weights().normalized()?;
        self.train.validate()?;
        self.expansion.validate()
    }

    /// Modality weights after the drop ablation.
    pub fn weights(&self) -> ModalityWeights {
        match self.ablations.drop_modality.modality() {
            Some(m) => self.weights.without(m),
            None => self.weights,
        }
    }

    /// Modalities seen by the enhancer.
    pub fn active_modalities(&self) -> Vec<Modality> {
        let dropped = self.ablations.drop_modality.modality();
        Modality::ALL.into_iter().filter(|&m| Some(m) != dropped).collect()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            rng_seed: self.rng_seed,
            ..self.train.clone()
        }
    }

    /// Config directory, then the environment, then [`DEFAULT_OUT_DIR`].
    pub fn resolved_out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }
}

/// Both graphs and, when known, their true alignment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub kg1: MultiModalKg,
    pub kg2: MultiModalKg,
    pub truth: Option<AlignmentMap>,
}

pub fn load_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    if let Some(s) = &cfg.synth {
        let s = SynthConfig {
            rng_seed: cfg.rng_seed,
            ..s.clone()
        };
        let out = synth_generate(&s)?;
        return Ok(Dataset {
            kg1: out.kg1,
            kg2: out.kg2,
            truth: Some(out.truth),
        });
    }
    let (Some(p1), Some(p2)) = (&cfg.kg1, &cfg.kg2) else {
        return Err(Error::Config("kg1 and kg2 must both be set".into()));
    };
    Ok(Dataset {
        kg1: load_kg(p1)?,
        kg2: load_kg(p2)?,
        truth: cfg.truth.as_deref().map(read_alignment).transpose()?,
    })
}

/// Held-out ranking queries: a seeded random `fraction` of the truth,
/// returned in ascending `e1` order.
pub fn test_split(truth: &AlignmentMap, fraction: f64, rng_seed: u64) -> AlignmentMap {
    let mut pairs = truth.pairs.clone();
    pairs.shuffle(&mut rng::stream(rng_seed, rng::ids::TEST_SPLIT));
    pairs.truncate(((pairs.len() as f64) * fraction).round() as usize);
    pairs.sort_unstable();
    AlignmentMap::new(pairs)
}

/// Trained enhancer output and its per-epoch loss.
#[derive(Debug, Clone)]
pub struct Enhanced {
    pub enh1: EnhancedFeatures,
    pub enh2: EnhancedFeatures,
    pub loss_trace: Vec<f64>,
}

pub fn enhance(
    kg1: &MultiModalKg,
    kg2: &MultiModalKg,
    seeds: &SeedSet,
    cfg: &TrainConfig,
    active: &[Modality],
) -> Result<Enhanced> {
    let out = train_active(kg1, kg2, seeds, cfg, active)?;
    Ok(Enhanced {
        enh1: forward_active(kg1, &out.params, active),
        enh2: forward_active(kg2, &out.params, active),
        loss_trace: out.loss_trace,
    })
}

/// Downstream check of a seed set: trains the enhancer on it and ranks the
/// test pairs with the joint enhanced features.
pub fn evaluate_seeds(
    data: &Dataset,
    seeds: &SeedSet,
    cfg: &TrainConfig,
    active: &[Modality],
    test: &AlignmentMap,
) -> Result<RankingReport> {
    if seeds.is_empty() {
        return Ok(RankingReport::from_ranks(vec![data.kg2.n_entities(); test.len()]));
    }
    let e = enhance(&data.kg1, &data.kg2, seeds, cfg, active)?;
    Ok(rank_alignment(&e.enh1.joint, &e.enh2.joint, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub seeds: usize,
    pub quality: QualityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: PipelineConfig,
    /// Cluster count chosen for Stage I.
    pub k: usize,
    pub cluster_sizes: Vec<usize>,
    pub stages: Vec<StageRecord>,
    pub global_added: usize,
    pub mic_removed: usize,
    pub expansion_added: usize,
    pub recheck_removed: usize,
    pub ranking: Option<RankingReport>,
}

impl RunRecord {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

/// Wall-clock seconds per stage, kept out of [`RunRecord`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
}

impl Timings {
    fn lap(&mut self, name: &str, start: &mut Instant) {
        self.stages.push((name.to_string(), start.elapsed().as_secs_f64()));
        *start = Instant::now();
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub timings: Timings,
    pub s0: SeedSet,
    pub s1: SeedSet,
    pub s2: SeedSet,
    pub s3: SeedSet,
    pub loss_csv: String,
    pub expansion_csv: String,
}

impl RunOutput {
    /// Writes `seeds_{s0,s1,s2,s3}.txt`, `record.json`, `timings.json`,
    /// `loss.csv` and `expansion.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, s) in [("s0", &self.s0), ("s1", &self.s1), ("s2", &self.s2), ("s3", &self.s3)] {
            s.write(&dir.join(format!("seeds_{name}.txt")))?;
        }
        let put = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        put("record.json", self.record_json())?;
        put(
            "timings.json",
            serde_json::to_string_pretty(&self.timings).expect("timings serialize") + "\n",
        )?;
        put("loss.csv", self.loss_csv.clone())?;
        put("expansion.csv", self.expansion_csv.clone())
    }

    pub fn record_json(&self) -> String {
        serde_json::to_string_pretty(&self.record).expect("record serializes") + "\n"
    }
}

fn loss_csv(trace: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (e, l) in trace.iter().enumerate() {
        out.push_str(&format!("{e},{l}\n"));
    }
    out
}

/// Error correction on the original fused features, applied to the pairs of
/// `after` that are not in `before` (or to all of `after`).
fn correct(before: &SeedSet, after: &SeedSet, scope: MicScope, f1: &Matrix, f2: &Matrix) -> SeedSet {
    match scope {
        MicScope::All => mic_correct(after, f1, f2),
        MicScope::New => {
            let added = SeedSet::from_pairs(after.pairs()[before.len()..].iter().copied());
            let kept = mic_correct(&added, f1, f2);
            let mut out = before.clone();
            out.extend(kept.iter().copied());
            out
        }
    }
}

/// Runs every stage on `data`. A skipped stage passes its input through.
pub fn run_on(cfg: &PipelineConfig, data: &Dataset) -> Result<RunOutput> {
    cfg.validate()?;
    let weights = cfg.weights();
    let active = cfg.active_modalities();
    let train_cfg = cfg.train_config();
    let (kg1, kg2) = (&data.kg1, &data.kg2);
    let truth = data.truth.as_ref();
    let report = |s: &SeedSet| quality_report(s, kg1, kg2, truth);
    let mut timings = Timings::default();
    let mut clock = Instant::now();

    let sim = fused_sim(kg1, kg2, &weights).map_err(|e| e.in_stage("fusion"))?;
    let f1 = fused_features(kg1, &weights).map_err(|e| e.in_stage("fusion"))?;
    let f2 = fused_features(kg2, &weights).map_err(|e| e.in_stage("fusion"))?;
    let s0 = uvp_seeds(&sim, cfg.n_init_seeds, &SeedSet::new());
    timings.lap("s0", &mut clock);

    let points = stack_points(&f1, &f2);
    let k = select_k(&points, cfg.cluster_range, cfg.rng_seed).map_err(|e| e.in_stage("stage I"))?;
    let assignment = kmeans(&points, k, 100, cfg.rng_seed).map_err(|e| e.in_stage("stage I"))?;
    let quota = cluster_quota(&assignment, kg1.n_entities(), cfg.n_init_seeds);
    let start = if cfg.warm_start_uvp { s0.clone() } else { SeedSet::new() };
    let s1 = stage1_sample(&sim, &assignment, &quota, &start);
    timings.lap("s1", &mut clock);

    let mut global_added = 0;
    let mut mic_removed = 0;
    let mut trace = Vec::new();
    let (s2, enhanced) = if cfg.ablations.skip_stage2 || s1.is_empty() {
        (s1.clone(), None)
    } else {
        let e = enhance(kg1, kg2, &s1, &train_cfg, &active).map_err(|e| e.in_stage("stage II"))?;
        trace = e.loss_trace.clone();
        let n_global = cfg.n_global.unwrap_or(cfg.n_init_seeds);
        let sampled = global_sample(&e.enh1, &e.enh2, n_global, &s1);
        global_added = sampled.len() - s1.len();
        let corrected = if cfg.ablations.skip_mic {
            sampled
        } else {
            let c = correct(&s1, &sampled, cfg.mic_scope, &f1, &f2);
            mic_removed = sampled.len() - c.len();
            c
        };
        (corrected, Some(e))
    };
    timings.lap("s2", &mut clock);

    let mut expansion_added = 0;
    let mut recheck_removed = 0;
    let mut expansion_csv = String::from("source_e1,source_e2,new_e1,new_e2,score,admitted,reason\n");
    let mut s3 = if cfg.ablations.skip_stage3 {
        s2.clone()
    } else {
        let enh = enhanced
            .as_ref()
            .map_or((&f1, &f2), |e| (&e.enh1.joint, &e.enh2.joint));
        let x = expand(&s2, &cfg.expansion, kg1, kg2, (&f1, &f2), enh);
        expansion_added = x.added();
        expansion_csv = x.audit_csv();
        if cfg.ablations.skip_mic {
            x.seeds
        } else {
            let r = match cfg.mic_scope {
                MicScope::All => recheck(&x.seeds, &f1, &f2),
                MicScope::New => correct(&s2, &x.seeds, MicScope::New, &f1, &f2),
            };
            recheck_removed = x.seeds.len() - r.len();
            r
        }
    };
    if let Some(n) = cfg.fixed_n {
        s3.truncate_by_score(n);
    }
    timings.lap("s3", &mut clock);

    let ranking = match truth {
        Some(t) if cfg.eval.enabled => {
            let test = test_split(t, cfg.eval.test_fraction, cfg.rng_seed);
            Some(evaluate_seeds(data, &s3, &train_cfg, &active, &test).map_err(|e| e.in_stage("evaluation"))?)
        }
        _ => None,
    };
    timings.lap("eval", &mut clock);

    let stages = [("S0", &s0), ("S1", &s1), ("S2", &s2), ("S3", &s3)]
        .into_iter()
        .map(|(name, s)| StageRecord {
            stage: name.to_string(),
            seeds: s.len(),
            quality: report(s),
        })
        .collect();
    let record = RunRecord {
        config: cfg.clone(),
        k,
        cluster_sizes: assignment.sizes(),
        stages,
        global_added,
        mic_removed,
        expansion_added,
        recheck_removed,
        ranking,
    };
    Ok(RunOutput {
        record,
        timings,
        s0,
        s1,
        s2,
        s3,
        loss_csv: loss_csv(&trace),
        expansion_csv,
    })
}

/// Loads the data named by `cfg` and runs the pipeline on it.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    run_on(cfg, &data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Greedy pivots on visual similarity only.
    UvpVisual,
    /// Greedy pivots on the weighted multimodal similarity.
    UvpMultimodal,
    /// The full three-stage pipeline.
    Psqe,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::UvpVisual, Strategy::UvpMultimodal, Strategy::Psqe];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::UvpVisual => "uvp-visual",
            Strategy::UvpMultimodal => "uvp-multimodal",
            Strategy::Psqe => "psqe",
        }
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown strategy {s:?} (expected uvp-visual, uvp-multimodal or psqe)"))
    }
}

/// Seeds of one strategy under `cfg`.
pub fn strategy_seeds(strategy: Strategy, cfg: &PipelineConfig, data: &Dataset) -> Result<SeedSet> {
    match strategy {
        Strategy::UvpVisual => {
            let sim = cosine_sim_matrix(&data.kg1.visual, &data.kg2.visual)?;
            Ok(uvp_seeds(&sim, cfg.n_init_seeds, &SeedSet::new()))
        }
        Strategy::UvpMultimodal => {
            let sim = fused_sim(&data.kg1, &data.kg2, &cfg.weights())?;
            Ok(uvp_seeds(&sim, cfg.n_init_seeds, &SeedSet::new()))
        }
        Strategy::Psqe => {
            let no_eval = PipelineConfig {
                eval: EvalConfig {
                    enabled: false,
                    ..cfg.eval.clone()
                },
                ..cfg.clone()
            };
            Ok(run_on(&no_eval, data)?.s3)
        }
    }
}

/// One line of a strategy comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub seeds: usize,
    pub precision: f64,
    pub coverage: f64,
    pub hits1: f64,
    pub hits10: f64,
    pub mrr: f64,
    pub rng_seed: u64,
}

impl ComparisonRow {
    pub const CSV_HEADER: &'static str = "strategy,precision,coverage,hits1,hits10,mrr,rng_seed";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.strategy, self.precision, self.coverage, self.hits1, self.hits10, self.mrr, self.rng_seed
        )
    }
}

/// Visual pivots, multimodal pivots and the full pipeline on the same data,
/// each judged by precision, coverage and the ranking of held-out pairs after
/// training the enhancer on its seeds.
pub fn type_comparison(cfg: &PipelineConfig) -> Result<Vec<ComparisonRow>> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let truth = data
        .truth
        .clone()
        .ok_or_else(|| Error::Config("strategy comparison needs a ground-truth alignment".into()))?;
    let test = test_split(&truth, cfg.eval.test_fraction, cfg.rng_seed);
    let train_cfg = cfg.train_config();
    let active = cfg.active_modalities();
    Strategy::ALL
        .into_iter()
        .map(|s| {
            let seeds = strategy_seeds(s, cfg, &data)?;
            let q = quality_report(&seeds, &data.kg1, &data.kg2, Some(&truth));
            let r = evaluate_seeds(&data, &seeds, &train_cfg, &active, &test)?;
            Ok(ComparisonRow {
                strategy: s.name().to_string(),
                seeds: seeds.len(),
                precision: q.precision.unwrap_or(0.0),
                coverage: q.coverage,
                hits1: r.hits1,
                hits10: r.hits10,
                mrr: r.mrr,
                rng_seed: cfg.rng_seed,
            })
        })
        .collect()
}

/// Named configurations shipped with the crate.
pub mod presets {
    use super::PipelineConfig;
    use crate::error::{Error, Result};

    pub const ZERO_NOISE: &str = include_str!("../presets/zero_noise.json");
    pub const IMBALANCED: &str = include_str!("../presets/imbalanced.json");

    pub const NAMES: [&str; 2] = ["zero_noise", "imbalanced"];

    pub fn get(name: &str) -> Result<PipelineConfig> {
        let text = match name {
            "zero_noise" => ZERO_NOISE,
            "imbalanced" => IMBALANCED,
            other => return Err(Error::Config(format!("unknown preset {other:?}"))),
        };
        PipelineConfig::from_json(text)
    }

    pub fn zero_noise() -> PipelineConfig {
        get("zero_noise").expect("shipped preset parses")
    }

    pub fn imbalanced() -> PipelineConfig {
        get("imbalanced").expect("shipped preset parses")
    }
}
