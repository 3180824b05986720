//! Config file schema and flag resolution. Flags win over file values; the
//! file supplies whatever the flags leave unset; paper-default hyperparameters
//! fill the rest.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use pfeddl_core::dataio::SyntheticSpec;
use pfeddl_core::types::Hyperparams;
use serde::Deserialize;

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// TOML config file; see the README for the schema.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Use the built-in desk-scale synthetic profile instead of a config.
    #[arg(long)]
    pub quickstart: bool,

    /// Override the run seed (both training and synthetic generation).
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Worker cap for client-parallel phases; 1 is bitwise deterministic.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    run: Option<RunSection>,
    synthetic: Option<SyntheticSection>,
    hyper: Option<HyperSection>,
    sweep: Option<SweepSection>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RunSection {
    data_dirs: Option<Vec<PathBuf>>,
    folds: Option<usize>,
    out_dir: Option<PathBuf>,
    threads: Option<usize>,
    /// Score ROIs with signed connectivity sums instead of absolute values.
    roi_signed: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SyntheticSection {
    feature_dim: usize,
    atom_count: usize,
    global_count: usize,
    site_sizes: Vec<usize>,
    sparsity: usize,
    noise_std: f64,
    margin: f64,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct HyperSection {
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    lambda3: Option<f64>,
    lambda4: Option<f64>,
    eta: Option<f64>,
    k: Option<usize>,
    g: Option<usize>,
    iters_local: Option<usize>,
    iters_fed: Option<usize>,
    iters_pretrain: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    k: Vec<usize>,
}

/// Where the experiment's sites come from.
#[derive(Debug, Clone)]
pub enum DataSpec {
    Synthetic(SyntheticSpec),
    Dirs(Vec<PathBuf>),
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: DataSpec,
    pub hyper: Hyperparams,
    pub folds: usize,
    pub out_dir: PathBuf,
    pub threads: usize,
    pub roi_signed: bool,
    pub sweep_k: Option<Vec<usize>>,
}

fn apply_hyper(section: HyperSection) -> Hyperparams {
    let d = Hyperparams::default();
    Hyperparams {
        lambda1: section.lambda1.unwrap_or(d.lambda1),
        lambda2: section.lambda2.unwrap_or(d.lambda2),
        lambda3: section.lambda3.unwrap_or(d.lambda3),
        lambda4: section.lambda4.unwrap_or(d.lambda4),
        eta: section.eta.unwrap_or(d.eta),
        k: section.k.unwrap_or(d.k),
        g: section.g.unwrap_or(d.g),
        iters_local: section.iters_local.unwrap_or(d.iters_local),
        iters_fed: section.iters_fed.unwrap_or(d.iters_fed),
        iters_pretrain: section.iters_pretrain.unwrap_or(d.iters_pretrain),
        seed: section.seed.unwrap_or(d.seed),
    }
}

pub fn resolve(args: &CommonArgs) -> anyhow::Result<RunConfig> {
    let mut config = if args.quickstart {
        if args.config.is_some() {
            bail!("--quickstart and --config are mutually exclusive");
        }
        RunConfig {
            data: DataSpec::Synthetic(SyntheticSpec::quickstart()),
            hyper: Hyperparams::quickstart(),
            folds: 4,
            out_dir: PathBuf::from("pfeddl-out"),
            threads: 1,
            roi_signed: false,
            sweep_k: None,
        }
    } else {
        let path = args
            .config
            .as_deref()
            .context("provide --config <file> or --quickstart")?;
        from_file(path)?
    };

    if let Some(seed) = args.seed {
        config.hyper.seed = seed;
        if let DataSpec::Synthetic(spec) = &mut config.data {
            spec.seed = seed;
        }
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    if let Some(threads) = args.threads {
        if threads == 0 {
            bail!("--threads must be at least 1");
        }
        config.threads = threads;
    }

    config.hyper.validate()?;
    if let DataSpec::Synthetic(spec) = &config.data {
        spec.validate()?;
    }
    if let Some(sweep) = &config.sweep_k {
        if sweep.is_empty() {
            bail!("sweep.k must list at least one dictionary size");
        }
    }
    Ok(config)
}

fn from_file(path: &Path) -> anyhow::Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let file: FileConfig =
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;

    let run = file.run.unwrap_or_default();
    let hyper = apply_hyper(file.hyper.unwrap_or_default());
    let data = match (file.synthetic, run.data_dirs) {
        (Some(s), None) => DataSpec::Synthetic(SyntheticSpec {
            feature_dim: s.feature_dim,
            atom_count: s.atom_count,
            global_count: s.global_count,
            site_sizes: s.site_sizes,
            sparsity: s.sparsity,
            noise_std: s.noise_std,
            margin: s.margin,
            seed: s.seed.unwrap_or(hyper.seed),
        }),
        (None, Some(dirs)) => {
            if dirs.is_empty() {
                bail!("run.data_dirs must list at least one site directory");
            }
            DataSpec::Dirs(dirs)
        }
        (Some(_), Some(_)) => {
            bail!("config must set exactly one of [synthetic] or run.data_dirs")
        }
        (None, None) => bail!("config needs a data source: [synthetic] or run.data_dirs"),
    };

    Ok(RunConfig {
        data,
        hyper,
        folds: run.folds.unwrap_or(4),
        out_dir: run.out_dir.unwrap_or_else(|| PathBuf::from("pfeddl-out")),
        threads: run.threads.unwrap_or(1),
        roi_signed: run.roi_signed.unwrap_or(false),
        sweep_k: file.sweep.map(|s| s.k),
    })
}
