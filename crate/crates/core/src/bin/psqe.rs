//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use psqe::enhance::{forward, train, TrainConfig};
use psqe::expand::{expand, recheck, ExpansionConfig};
use psqe::kg::{read_alignment, read_matrix, save_kg, synth_generate, write_alignment, write_matrix, SynthConfig};
use psqe::metrics::{quality_report, rank_alignment};
use psqe::pipeline::{
    load_dataset, presets, run_pipeline, strategy_seeds, type_comparison, ComparisonRow, Dataset, DropModality,
    PipelineConfig, Strategy,
};
use psqe::sim::{fused_features, SeedSet};
use psqe::theory::theory_check;
use psqe::{Error, Result};

#[derive(Parser)]
#[command(name = "psqe", version, about = "Pseudo-seed generation for unsupervised multimodal entity alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic graph pair with known alignment.
    Synth {
        /// Synthetic generator config (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Produce seeds with one strategy.
    Seed {
        #[arg(long)]
        strategy: Strategy,
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the enhancer on a seed file and write enhanced joint features.
    Train {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        seeds: PathBuf,
        /// Training config (JSON).
        #[arg(long = "train-config")]
        train_config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Neighborhood expansion of a seed file, followed by a recheck.
    Expand {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        seeds: PathBuf,
        /// Enhanced joint features of the first graph (matrix file).
        #[arg(long)]
        enh1: PathBuf,
        #[arg(long)]
        enh2: PathBuf,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long = "max-new")]
        max_new: Option<usize>,
        #[arg(long = "no-recheck")]
        no_recheck: bool,
        #[arg(long)]
        audit: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Precision and coverage of a seed file; ranking when features are given.
    Evaluate {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        features1: Option<PathBuf>,
        #[arg(long)]
        features2: Option<PathBuf>,
        /// Ranking queries; defaults to the truth file.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Randomized check of the contrastive-loss bound and gradients.
    TheoryCheck {
        #[arg(long, default_value_t = 1000)]
        batches: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Compare visual pivots, multimodal pivots and the full pipeline.
    CompareTypes {
        #[command(flatten)]
        input: Input,
        /// Comma-separated rng seeds; defaults to the config's.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        json: bool,
    },
    /// Run the full pipeline and write every stage's output.
    Run {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "fixed-n")]
        fixed_n: Option<usize>,
        #[arg(long = "warm-start-uvp")]
        warm_start_uvp: bool,
        #[arg(long = "skip-stage2")]
        skip_stage2: bool,
        #[arg(long = "skip-stage3")]
        skip_stage3: bool,
        #[arg(long = "skip-mic")]
        skip_mic: bool,
        #[arg(long = "drop-modality")]
        drop_modality: Option<DropModality>,
    },
}

/// Where the graphs come from: a pipeline config, a shipped preset, or
/// manifests given directly.
#[derive(Args)]
struct Input {
    /// Pipeline config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shipped preset name (zero_noise, imbalanced).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    #[arg(long)]
    kg1: Option<PathBuf>,
    #[arg(long)]
    kg2: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long = "rng-seed")]
    rng_seed: Option<u64>,
}

impl Input {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(p), _) => PipelineConfig::load(p)?,
            (None, Some(name)) => presets::get(name)?,
            (None, None) => PipelineConfig::default(),
        };
        if self.kg1.is_some() || self.kg2.is_some() {
            cfg.synth = None;
            cfg.kg1 = self.kg1.clone().or(cfg.kg1);
            cfg.kg2 = self.kg2.clone().or(cfg.kg2);
        }
        if let Some(t) = &self.truth {
            cfg.truth = Some(t.clone());
        }
        if let Some(s) = self.rng_seed {
            cfg.rng_seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn load(&self) -> Result<(PipelineConfig, Dataset)> {
        let cfg = self.config()?;
        let data = load_dataset(&cfg)?;
        Ok((cfg, data))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth { config, out } => {
            let cfg: SynthConfig = read_json(&config)?;
            let data = synth_generate(&cfg)?;
            let m1 = save_kg(&data.kg1, &out, "kg1")?;
            let m2 = save_kg(&data.kg2, &out, "kg2")?;
            write_alignment(&out.join("truth.txt"), &data.truth)?;
            println!("{}\n{}\n{}", m1.display(), m2.display(), out.join("truth.txt").display());
        }
        Command::Seed {
            strategy,
            input,
            n,
            out,
        } => {
            let (mut cfg, data) = input.load()?;
            if let Some(n) = n {
                cfg.n_init_seeds = n;
            }
            let seeds = strategy_seeds(strategy, &cfg, &data)?;
            seeds.write(&out)?;
            let q = quality_report(&seeds, &data.kg1, &data.kg2, data.truth.as_ref());
            println!("{}", to_json(&q));
        }
        Command::Train {
            input,
            seeds,
            train_config,
            out,
        } => {
            let (cfg, data) = input.load()?;
            let tc: TrainConfig = match train_config {
                Some(p) => read_json(&p)?,
                None => cfg.train_config(),
            };
            let seeds = SeedSet::read(&seeds)?;
            let outcome = train(&data.kg1, &data.kg2, &seeds, &tc)?;
            let e1 = forward(&data.kg1, &outcome.params);
            let e2 = forward(&data.kg2, &outcome.params);
            fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            write_matrix(&out.join("enh1.bin"), &e1.joint)?;
            write_matrix(&out.join("enh2.bin"), &e2.joint)?;
            write_text(&out.join("loss.csv"), &outcome.loss_csv())?;
            if let Some(last) = outcome.loss_trace.last() {
                println!("final loss {last}");
            }
        }
        Command::Expand {
            input,
            seeds,
            enh1,
            enh2,
            eta,
            max_new,
            no_recheck,
            audit,
            out,
        } => {
            let (cfg, data) = input.load()?;
            let mut ec: ExpansionConfig = cfg.expansion.clone();
            if let Some(eta) = eta {
                ec.eta = eta;
            }
            if max_new.is_some() {
                ec.max_new = max_new;
            }
            ec.validate()?;
            let seeds = SeedSet::read(&seeds)?;
            let w = cfg.weights();
            let f1 = fused_features(&data.kg1, &w)?;
            let f2 = fused_features(&data.kg2, &w)?;
            let (h1, h2) = (read_matrix(&enh1)?, read_matrix(&enh2)?);
            let x = expand(&seeds, &ec, &data.kg1, &data.kg2, (&f1, &f2), (&h1, &h2));
            if let Some(p) = audit {
                write_text(&p, &x.audit_csv())?;
            }
            let result = if no_recheck { x.seeds.clone() } else { recheck(&x.seeds, &f1, &f2) };
            result.write(&out)?;
            println!("added {} rechecked to {}", x.added(), result.len());
        }
        Command::Evaluate {
            input,
            seeds,
            features1,
            features2,
            test,
        } => {
            let (_, data) = input.load()?;
            let seeds = SeedSet::read(&seeds)?;
            let q = quality_report(&seeds, &data.kg1, &data.kg2, data.truth.as_ref());
            let ranking = match (features1, features2) {
                (Some(a), Some(b)) => {
                    let queries = match test {
                        Some(p) => read_alignment(&p)?,
                        None => data
                            .truth
                            .clone()
                            .ok_or_else(|| Error::Config("ranking needs --test or --truth".into()))?,
                    };
                    Some(rank_alignment(&read_matrix(&a)?, &read_matrix(&b)?, &queries))
                }
                (None, None) => None,
                _ => return Err(Error::Config("give both --features1 and --features2".into())),
            };
            let mut v = serde_json::json!({ "quality": q });
            if let Some(r) = ranking {
                v["ranking"] = serde_json::json!({ "hits1": r.hits1, "hits10": r.hits10, "mrr": r.mrr });
            }
            println!("{}", to_json(&v));
        }
        Command::TheoryCheck { batches, seed } => {
            let r = theory_check(batches, seed)?;
            println!("{}", to_json(&r));
            if r.bound_violations > 0 {
                return Ok(ExitCode::from(1));
            }
        }
        Command::CompareTypes { input, seeds, json } => {
            let base = input.config()?;
            let seeds = if seeds.is_empty() { vec![base.rng_seed] } else { seeds };
            let mut rows = Vec::new();
            for s in seeds {
                let cfg = PipelineConfig {
                    rng_seed: s,
                    ..base.clone()
                };
                rows.extend(type_comparison(&cfg)?);
            }
            if json {
                println!("{}", to_json(&rows));
            } else {
                println!("{}", ComparisonRow::CSV_HEADER);
                rows.iter().for_each(|r| println!("{}", r.csv()));
            }
        }
        Command::Run {
            input,
            out,
            fixed_n,
            warm_start_uvp,
            skip_stage2,
            skip_stage3,
            skip_mic,
            drop_modality,
        } => {
            let mut cfg = input.config()?;
            if fixed_n.is_some() {
                cfg.fixed_n = fixed_n;
            }
            cfg.warm_start_uvp |= warm_start_uvp;
            cfg.ablations.skip_stage2 |= skip_stage2;
            cfg.ablations.skip_stage3 |= skip_stage3;
            cfg.ablations.skip_mic |= skip_mic;
            if let Some(d) = drop_modality {
                cfg.ablations.drop_modality = d;
            }
            if let Some(o) = out {
                cfg.out_dir = Some(o);
            }
            let dir = cfg.resolved_out_dir();
            let output = run_pipeline(&cfg)?;
            output.write(&dir)?;
            for s in &output.record.stages {
                let p = s.quality.precision.map_or("-".to_string(), |p| format!("{p:.4}"));
                println!("{}: {} seeds, precision {p}, coverage {:.4}", s.stage, s.seeds, s.quality.coverage);
            }
            if let Some(r) = &output.record.ranking {
                println!("hits@1 {:.4} hits@10 {:.4} mrr {:.4}", r.hits1, r.hits10, r.mrr);
            }
            println!("wrote {}", dir.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
