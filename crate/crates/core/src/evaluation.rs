//! Cross-validation harness, test-time sparse encoding, accuracy, and ROI
//! importance scoring.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::{
    devectorize_lower_triangle, generate_synthetic_federation, roi_count_for_feature_len,
    SyntheticSpec,
};
use crate::dl::update_codes_unsupervised;
use crate::error::{Error, Result};
use crate::federation::{run_pfeddl, ClientState, RoundReport, RunOptions, TrainedFederation};
use crate::types::{ClassifierWeights, DataMatrix, Dictionary, Hyperparams, Labels, SparseCode};

/// Relative code change below which test-time encoding stops.
pub const ENCODE_TOLERANCE: f64 = 1e-6;
/// Iteration cap for test-time encoding.
pub const ENCODE_MAX_ITERS: usize = 500;

/// Train/test indices for every fold of one site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-site fold assignments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub folds: usize,
    pub sites: Vec<Vec<FoldIndices>>,
}

/// Seeded shuffled partition of each site into near-equal folds.
pub fn kfold_split(n_per_site: &[usize], folds: usize, seed: u64) -> Result<FoldSplit> {
    if folds < 2 {
        return Err(Error::Config(format!(
            "cross-validation needs at least 2 folds to hold anything out, got {folds}"
        )));
    }
    for (site, &n) in n_per_site.iter().enumerate() {
        if n < folds {
            return Err(Error::Config(format!(
                "site {site} has {n} samples, fewer than {folds} folds"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sites = Vec::with_capacity(n_per_site.len());
    for &n in n_per_site {
        let mut indices: Vec<usize> = (0..n).collect();
        indices.shuffle(&mut rng);
        let base = n / folds;
        let remainder = n % folds;
        let mut chunks = Vec::with_capacity(folds);
        let mut cursor = 0;
        for f in 0..folds {
            let size = base + usize::from(f < remainder);
            chunks.push(indices[cursor..cursor + size].to_vec());
            cursor += size;
        }
        let mut site_folds = Vec::with_capacity(folds);
        for f in 0..folds {
            let test = chunks[f].clone();
            let train = chunks
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != f)
                .flat_map(|(_, c)| c.iter().copied())
                .collect();
            site_folds.push(FoldIndices { train, test });
        }
        sites.push(site_folds);
    }
    Ok(FoldSplit { folds, sites })
}

/// Sparse-code held-out samples against a fixed dictionary: ISTA from zero
/// initialization, threshold eta * lambda2, until the relative code change
/// drops below [`ENCODE_TOLERANCE`] or [`ENCODE_MAX_ITERS`] is reached.
pub fn encode_test_samples(
    dict: &Dictionary,
    x_test: &DataMatrix,
    hyper: &Hyperparams,
) -> Result<SparseCode> {
    let mut codes = SparseCode::zeros(dict.atom_count(), x_test.sample_count());
    let eps = hyper.code_threshold();
    for _ in 0..ENCODE_MAX_ITERS {
        let next = update_codes_unsupervised(dict, &codes, x_test, hyper.eta, eps)?;
        let mut delta = 0.0;
        let mut scale = 0.0;
        for (a, b) in next.values().iter().zip(codes.values().iter()) {
            delta += (a - b) * (a - b);
            scale += b * b;
        }
        codes = next;
        if delta.sqrt() <= ENCODE_TOLERANCE * scale.sqrt().max(1e-12) {
            break;
        }
    }
    Ok(codes)
}

/// Label 1 where w's + b >= 0 (the logistic 0.5 boundary, inclusive).
pub fn predict(weights: &ClassifierWeights, codes: &SparseCode) -> Result<Labels> {
    if weights.dim() != codes.atom_count() {
        return Err(Error::shape(
            "predict",
            format!("w of length {}", codes.atom_count()),
            format!("w of length {}", weights.dim()),
        ));
    }
    let scores = codes.values().t().dot(&weights.w) + weights.b;
    Labels::new(scores.iter().map(|&z| u8::from(z >= 0.0)).collect())
}

/// Fraction of exact matches.
pub fn accuracy(pred: &Labels, truth: &Labels) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape(
            "accuracy",
            format!("{} labels", truth.len()),
            format!("{} labels", pred.len()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::Config("accuracy over zero samples".into()));
    }
    let matches = pred
        .values()
        .iter()
        .zip(truth.values().iter())
        .filter(|(a, b)| a == b)
        .count();
    Ok(matches as f64 / pred.len() as f64)
}

/// How connectivity magnitudes enter the ROI score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoiSignMode {
    /// |w_j| times summed |connectivity|; scores are nonnegative.
    #[default]
    Absolute,
    /// w_j times summed raw connectivity; scores may be negative.
    Signed,
}

/// Per-ROI importance derived from the most discriminative atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiImportance {
    pub scores: Vec<f64>,
    pub top_rois: Vec<usize>,
    pub top_atoms: Vec<usize>,
}

/// Rank atoms by |w_j|, de-vectorize each selected atom into its symmetric
/// connectivity pattern, and score each ROI by the weighted total connection
/// strength it participates in, summed across the selected atoms.
pub fn roi_importance(
    dict: &Dictionary,
    weights: &ClassifierWeights,
    m: usize,
    top_atoms: usize,
    top_rois: usize,
    mode: RoiSignMode,
) -> Result<RoiImportance> {
    let expected = m * m.saturating_sub(1) / 2;
    if dict.feature_dim() != expected {
        return Err(Error::shape(
            "roi_importance",
            format!("atom dimension {expected} for {m} ROIs"),
            format!("atom dimension {}", dict.feature_dim()),
        ));
    }
    if weights.dim() != dict.atom_count() {
        return Err(Error::shape(
            "roi_importance",
            format!("w of length {}", dict.atom_count()),
            format!("w of length {}", weights.dim()),
        ));
    }

    let mut atom_order: Vec<usize> = (0..dict.atom_count()).collect();
    atom_order.sort_by(|&a, &b| {
        weights.w[b]
            .abs()
            .partial_cmp(&weights.w[a].abs())
            .expect("weights are finite")
            .then_with(|| a.cmp(&b))
    });
    atom_order.truncate(top_atoms.min(dict.atom_count()));

    let mut scores = vec![0.0; m];
    for &atom in &atom_order {
        let pattern = devectorize_lower_triangle(dict.atom(atom), m)?;
        for roi in 0..m {
            let strength: f64 = match mode {
                RoiSignMode::Absolute => pattern.row(roi).iter().map(|v| v.abs()).sum(),
                RoiSignMode::Signed => pattern.row(roi).sum(),
            };
            scores[roi] += match mode {
                RoiSignMode::Absolute => weights.w[atom].abs() * strength,
                RoiSignMode::Signed => weights.w[atom] * strength,
            };
        }
    }

    let mut roi_order: Vec<usize> = (0..m).collect();
    roi_order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores are finite")
            .then_with(|| a.cmp(&b))
    });
    roi_order.truncate(top_rois.min(m));

    Ok(RoiImportance {
        scores,
        top_rois: roi_order,
        top_atoms: atom_order,
    })
}

/// Where the experiment's site data comes from.
#[derive(Debug, Clone)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Loaded(Vec<(DataMatrix, Labels)>),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub hyper: Hyperparams,
    pub folds: usize,
    pub options: RunOptions,
    pub roi_mode: RoiSignMode,
    /// How many atoms/ROIs the importance ranking keeps.
    pub roi_top_atoms: usize,
    pub roi_top_rois: usize,
}

impl ExperimentConfig {
    pub fn new(data: DataSource, hyper: Hyperparams) -> Self {
        Self {
            data,
            hyper,
            folds: 4,
            options: RunOptions::default(),
            roi_mode: RoiSignMode::Absolute,
            roi_top_atoms: 10,
            roi_top_rois: 10,
        }
    }
}

/// One fold's per-site test accuracies.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub site_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
}

/// Cross-validated accuracies plus the records of the full-data retraining.
#[derive(Debug, Clone)]
pub struct FederationReport {
    pub folds: Vec<FoldOutcome>,
    pub site_mean: Vec<f64>,
    /// Sample standard deviation over folds, per site.
    pub site_std: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub rounds: Vec<RoundReport>,
    pub alignment: crate::alignment::AlignmentRecord,
    /// Per-site ROI importance; empty when the feature dimension is not a
    /// triangular number (i.e. the data is not connectivity-shaped).
    pub roi: Vec<RoiImportance>,
    pub warnings: Vec<String>,
}

/// The report plus the fully retrained per-site models.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub report: FederationReport,
    pub trained: Vec<ClientState>,
}

fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

/// Full cross-validation experiment: for each fold train a federation on the
/// training split, sparse-code the held-out samples with each site's
/// personalized dictionary, and score per-site accuracy. A final full-data
/// retraining supplies the round log, the alignment record and the ROI
/// importance.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let sites: Vec<(DataMatrix, Labels)> = match &config.data {
        DataSource::Synthetic(spec) => generate_synthetic_federation(spec)?.0,
        DataSource::Loaded(sites) => sites.clone(),
    };
    if sites.is_empty() {
        return Err(Error::Config("experiment needs at least one site".into()));
    }
    let n_per_site: Vec<usize> = sites.iter().map(|(x, _)| x.sample_count()).collect();
    let split = kfold_split(&n_per_site, config.folds, config.hyper.seed)?;

    let mut warnings = Vec::new();
    let mut folds = Vec::with_capacity(config.folds);
    for fold in 0..config.folds {
        let mut train_inputs = Vec::with_capacity(sites.len());
        for (site, (x, y)) in sites.iter().enumerate() {
            let idx = &split.sites[site][fold];
            train_inputs.push((x.select_samples(&idx.train)?, y.select(&idx.train)));
        }
        let trained = run_pfeddl(train_inputs, &config.hyper, &config.options)
            .map_err(|e| Error::InvalidState(format!("fold {fold}: {e}")))?;
        if trained.degenerate_recoveries > 0 {
            warnings.push(format!(
                "fold {fold}: re-seeded {} collapsed atoms",
                trained.degenerate_recoveries
            ));
        }

        let mut site_accuracy = Vec::with_capacity(sites.len());
        for (site, client) in trained.clients.iter().enumerate() {
            let idx = &split.sites[site][fold];
            let x_test = sites[site].0.select_samples(&idx.test)?;
            let y_test = sites[site].1.select(&idx.test);
            let codes = encode_test_samples(&client.dict, &x_test, &config.hyper)
                .map_err(|e| Error::InvalidState(format!("fold {fold}, site {site}: {e}")))?;
            let predicted = predict(&client.weights, &codes)?;
            site_accuracy.push(accuracy(&predicted, &y_test)?);
        }
        let mean_accuracy = site_accuracy.iter().sum::<f64>() / site_accuracy.len() as f64;
        folds.push(FoldOutcome {
            fold,
            site_accuracy,
            mean_accuracy,
        });
    }

    let site_count = sites.len();
    let mut site_mean = Vec::with_capacity(site_count);
    let mut site_std = Vec::with_capacity(site_count);
    for site in 0..site_count {
        let per_fold: Vec<f64> = folds.iter().map(|f| f.site_accuracy[site]).collect();
        let mean = per_fold.iter().sum::<f64>() / per_fold.len() as f64;
        site_std.push(sample_std(&per_fold, mean));
        site_mean.push(mean);
    }
    let fold_means: Vec<f64> = folds.iter().map(|f| f.mean_accuracy).collect();
    let mean_accuracy = fold_means.iter().sum::<f64>() / fold_means.len() as f64;
    let std_accuracy = sample_std(&fold_means, mean_accuracy);

    // Full-data retraining for the round log, alignment record, ROI scores
    // and the model files.
    let feature_dim = sites[0].0.feature_dim();
    let TrainedFederation {
        clients,
        alignment,
        rounds,
        degenerate_recoveries,
        ..
    } = run_pfeddl(sites, &config.hyper, &config.options)?;
    if degenerate_recoveries > 0 {
        warnings.push(format!(
            "full retraining: re-seeded {degenerate_recoveries} collapsed atoms"
        ));
    }

    let roi = match roi_count_for_feature_len(feature_dim) {
        Some(m) => clients
            .iter()
            .map(|c| {
                roi_importance(
                    &c.dict,
                    &c.weights,
                    m,
                    config.roi_top_atoms,
                    config.roi_top_rois,
                    config.roi_mode,
                )
            })
            .collect::<Result<Vec<_>>>()?,
        None => {
            warnings.push(format!(
                "feature dimension {feature_dim} is not connectivity-shaped; skipping ROI scores"
            ));
            Vec::new()
        }
    };

    Ok(ExperimentOutcome {
        report: FederationReport {
            folds,
            site_mean,
            site_std,
            mean_accuracy,
            std_accuracy,
            rounds,
            alignment,
            roi,
            warnings,
        },
        trained: clients,
    })
}
