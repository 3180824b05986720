//! The federated training loop: per-client local rounds, server-side weighted
//! aggregation of the global dictionary blocks, and broadcast-merge.
//!
//! The "server" is an in-process component with an explicit message boundary:
//! clients hand over [`GlobalUpload`] values (global block plus sample count)
//! and nothing else, which makes the privacy surface auditable in tests.

use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alignment::{global_alignment, AlignmentRecord};
use crate::dl::{
    classification_loss, normalize_columns, objective_site, pretrain_local, update_classifier,
    update_codes_supervised, update_dictionary_scaled,
};
use crate::error::{Error, Result};
use crate::types::{ClassifierWeights, DataMatrix, Dictionary, Hyperparams, Labels, SparseCode};

/// One site's full training state. Only the dictionary's global block and the
/// sample count ever leave this struct during federation.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub site_id: usize,
    pub data: DataMatrix,
    pub labels: Labels,
    pub dict: Dictionary,
    pub codes: SparseCode,
    pub weights: ClassifierWeights,
}

impl ClientState {
    pub fn sample_count(&self) -> usize {
        self.data.sample_count()
    }

    fn check(&self) -> Result<()> {
        if self.labels.len() != self.data.sample_count()
            || self.codes.sample_count() != self.data.sample_count()
            || self.codes.atom_count() != self.dict.atom_count()
            || self.weights.dim() != self.dict.atom_count()
            || self.dict.feature_dim() != self.data.feature_dim()
        {
            return Err(Error::shape(
                "ClientState",
                "consistent X/Y/D/S/w dimensions",
                format!(
                    "X {}x{}, Y {}, D {}x{}, S {}x{}, w {}",
                    self.data.feature_dim(),
                    self.data.sample_count(),
                    self.labels.len(),
                    self.dict.feature_dim(),
                    self.dict.atom_count(),
                    self.codes.atom_count(),
                    self.codes.sample_count(),
                    self.weights.dim()
                ),
            ));
        }
        Ok(())
    }
}

/// Everything a client sends to the server in one round.
#[derive(Debug, Clone)]
pub struct GlobalUpload {
    pub site_id: usize,
    pub global_block: Array2<f64>,
    pub sample_count: usize,
}

/// Audit trail of every value that crossed the client-server boundary.
#[derive(Debug, Clone, Default)]
pub struct ServerAudit {
    pub uploads: Vec<(usize, GlobalUpload)>,
}

/// Server-side state: the current aggregated global block and the round
/// counter. The block always has exactly g columns.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub d_avg: Array2<f64>,
    pub round: usize,
}

impl ServerState {
    /// Aggregate one round of uploads, advancing the round counter. Returns
    /// the Frobenius drift from the previous aggregate.
    pub fn ingest(&mut self, uploads: &[GlobalUpload]) -> Result<f64> {
        let next = server_aggregate(uploads)?;
        let drift = (&next - &self.d_avg).iter().map(|v| v * v).sum::<f64>().sqrt();
        self.d_avg = next;
        self.round += 1;
        Ok(drift)
    }
}

/// Per-round accounting.
#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: usize,
    /// objective_site per client at round start.
    pub pre_objective: Vec<f64>,
    /// objective_site per client after local training and merge.
    pub post_objective: Vec<f64>,
    /// Frobenius distance between consecutive aggregated global blocks.
    pub global_drift: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Worker cap for client-parallel phases; 1 forces the sequential path.
    pub threads: usize,
    /// Keep a copy of every server upload for auditing.
    pub record_uploads: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            threads: 1,
            record_uploads: false,
        }
    }
}

/// The trained federation: per-site states plus the run's records.
#[derive(Debug, Clone)]
pub struct TrainedFederation {
    pub clients: Vec<ClientState>,
    pub alignment: AlignmentRecord,
    pub rounds: Vec<RoundReport>,
    pub audit: Option<ServerAudit>,
    /// Collapsed atoms re-seeded during normalization, across the whole run.
    pub degenerate_recoveries: usize,
}

/// Per-site sample-count weights n_i / sum(n_j).
pub fn aggregation_weights(sizes: &[usize]) -> Result<Vec<f64>> {
    if sizes.is_empty() {
        return Err(Error::Config("aggregation over an empty site list".into()));
    }
    if sizes.contains(&0) {
        return Err(Error::Config("aggregation weight for an empty site".into()));
    }
    let total: usize = sizes.iter().sum();
    Ok(sizes.iter().map(|&n| n as f64 / total as f64).collect())
}

/// Sample-count-weighted mean of the uploaded global blocks. Written in
/// anchored form `A_0 + sum_i w_i (A_i - A_0)` so identical inputs (and the
/// single-site case) reproduce the input bit for bit.
pub fn aggregate_global(parts: &[Array2<f64>], sizes: &[usize]) -> Result<Array2<f64>> {
    if parts.is_empty() {
        return Err(Error::Config("aggregation over an empty part list".into()));
    }
    if parts.len() != sizes.len() {
        return Err(Error::shape(
            "aggregate_global",
            format!("{} sizes", parts.len()),
            format!("{} sizes", sizes.len()),
        ));
    }
    let dim = parts[0].raw_dim();
    for (i, p) in parts.iter().enumerate() {
        if p.raw_dim() != dim {
            return Err(Error::shape(
                "aggregate_global",
                format!("{}x{}", dim[0], dim[1]),
                format!("{}x{} (part {i})", p.nrows(), p.ncols()),
            ));
        }
    }
    let weights = aggregation_weights(sizes)?;
    let mut result = parts[0].clone();
    for (part, &w) in parts.iter().zip(weights.iter()).skip(1) {
        result = result + (part - &parts[0]) * w;
    }
    Ok(result)
}

fn server_aggregate(uploads: &[GlobalUpload]) -> Result<Array2<f64>> {
    let parts: Vec<Array2<f64>> = uploads.iter().map(|u| u.global_block.clone()).collect();
    let sizes: Vec<usize> = uploads.iter().map(|u| u.sample_count).collect();
    aggregate_global(&parts, &sizes)
}

/// Replace the client's global block with the broadcast average; local
/// columns are untouched.
pub fn broadcast_merge(state: &mut ClientState, d_avg: &Array2<f64>) -> Result<()> {
    let g = state.dict.global_count();
    if d_avg.ncols() != g || d_avg.nrows() != state.dict.feature_dim() {
        return Err(Error::shape(
            "broadcast_merge",
            format!("{}x{}", state.dict.feature_dim(), g),
            format!("{}x{}", d_avg.nrows(), d_avg.ncols()),
        ));
    }
    state
        .dict
        .values
        .slice_mut(ndarray::s![.., ..g])
        .assign(d_avg);
    Ok(())
}

/// One client's local training for the round: `iters_local` sweeps of
/// classifier step, supervised code step, dictionary step, normalization,
/// each using the freshest values of the others. Returns the number of
/// collapsed atoms re-seeded by normalization.
pub fn client_local_round(
    state: &mut ClientState,
    hyper: &Hyperparams,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    state.check()?;
    let mut recovered = 0;
    for _ in 0..hyper.iters_local {
        state.weights = update_classifier(
            &state.weights,
            &state.labels,
            &state.codes,
            hyper.eta,
            hyper.lambda3,
        )?;
        state.codes = update_codes_supervised(
            &state.codes,
            &state.dict,
            &state.data,
            &state.labels,
            &state.weights,
            hyper,
        )?;
        state.dict = update_dictionary_scaled(
            &state.dict,
            &state.codes,
            &state.data,
            hyper.eta,
            hyper.lambda1,
            hyper.lambda4,
        )?;
        let (normalized, n_rec) = normalize_columns(&state.dict, rng);
        state.dict = normalized;
        recovered += n_rec;
    }
    if hyper.iters_local > 0 && !state.codes.values.sum().is_finite() {
        return Err(Error::InvalidState(format!(
            "site {} diverged during a local round; lower the learning rate",
            state.site_id
        )));
    }
    Ok(recovered)
}

/// Deterministic per-site random stream. Pretraining and all later local
/// rounds of one site consume this single stream, so a run is reproducible
/// regardless of how clients are scheduled onto threads.
pub fn client_stream_rng(seed: u64, site_id: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(site_id as u64 + 1)))
}

fn for_each_client_parallel<F>(
    clients: &mut [ClientState],
    rngs: &mut [ChaCha8Rng],
    threads: usize,
    f: F,
) -> Result<usize>
where
    F: Fn(&mut ClientState, &mut ChaCha8Rng) -> Result<usize> + Sync,
{
    if threads <= 1 || clients.len() <= 1 {
        let mut total = 0;
        for (client, rng) in clients.iter_mut().zip(rngs.iter_mut()) {
            total += f(client, rng)?;
        }
        return Ok(total);
    }
    let chunk = clients.len().div_ceil(threads);
    let results: Vec<Result<usize>> = std::thread::scope(|scope| {
        let handles: Vec<_> = clients
            .chunks_mut(chunk)
            .zip(rngs.chunks_mut(chunk))
            .map(|(cs, rs)| {
                let f = &f;
                scope.spawn(move || {
                    let mut total = 0;
                    for (client, rng) in cs.iter_mut().zip(rs.iter_mut()) {
                        total += f(client, rng)?;
                    }
                    Ok(total)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("client worker panicked")).collect()
    });
    let mut total = 0;
    for r in results {
        total += r?;
    }
    Ok(total)
}

/// The full pipeline: pretrain every site, align once, then `iters_fed`
/// rounds of parallel local training, aggregation and broadcast-merge.
pub fn run_pfeddl(
    inputs: Vec<(DataMatrix, Labels)>,
    hyper: &Hyperparams,
    options: &RunOptions,
) -> Result<TrainedFederation> {
    hyper.validate()?;
    if inputs.is_empty() {
        return Err(Error::Config("federation needs at least one client".into()));
    }
    let d = inputs[0].0.feature_dim();
    for (i, (x, y)) in inputs.iter().enumerate() {
        if x.feature_dim() != d {
            return Err(Error::Config(format!(
                "inconsistent feature dimensions across sites: site 0 has {d}, site {i} has {}",
                x.feature_dim()
            )));
        }
        if y.len() != x.sample_count() {
            return Err(Error::shape(
                "run_pfeddl",
                format!("{} labels (site {i})", x.sample_count()),
                format!("{} labels (site {i})", y.len()),
            ));
        }
    }

    let n_sites = inputs.len();
    let mut rngs: Vec<ChaCha8Rng> = (0..n_sites)
        .map(|i| client_stream_rng(hyper.seed, i))
        .collect();
    let mut degenerate_recoveries = 0;

    // Per-site pretraining; clients are placeholders until alignment.
    let mut clients: Vec<ClientState> = inputs
        .into_iter()
        .enumerate()
        .map(|(site_id, (data, labels))| ClientState {
            site_id,
            dict: Dictionary::new(Array2::zeros((d, hyper.k)), hyper.g).expect("zeros are finite"),
            codes: SparseCode::zeros(hyper.k, data.sample_count()),
            weights: ClassifierWeights::zeros(hyper.k),
            data,
            labels,
        })
        .collect();
    degenerate_recoveries += for_each_client_parallel(
        &mut clients,
        &mut rngs,
        options.threads,
        |client, rng| {
            let (dict, codes, recovered) = pretrain_local(&client.data, hyper, rng)?;
            client.dict = dict;
            client.codes = codes;
            Ok(recovered)
        },
    )?;

    // One-time alignment; the update rules preserve the permutation structure
    // afterwards, so no further alignment is needed.
    let dicts: Vec<Dictionary> = clients.iter().map(|c| c.dict.clone()).collect();
    let codes: Vec<SparseCode> = clients.iter().map(|c| c.codes.clone()).collect();
    let aligned = global_alignment(&dicts, &codes)?;
    for (client, (dict, code)) in clients
        .iter_mut()
        .zip(aligned.dicts.into_iter().zip(aligned.codes))
    {
        client.dict = dict;
        client.codes = code;
    }

    let mut audit = options.record_uploads.then(ServerAudit::default);
    let mut rounds = Vec::with_capacity(hyper.iters_fed);
    let mut previous_avg = {
        let uploads: Vec<GlobalUpload> = clients.iter().map(make_upload).collect();
        server_aggregate(&uploads)?
    };

    for round in 0..hyper.iters_fed {
        let start = Instant::now();
        let pre_objective = objectives(&clients, hyper)?;

        degenerate_recoveries += for_each_client_parallel(
            &mut clients,
            &mut rngs,
            options.threads,
            |client, rng| client_local_round(client, hyper, rng),
        )?;

        let uploads: Vec<GlobalUpload> = clients.iter().map(make_upload).collect();
        if let Some(audit) = audit.as_mut() {
            audit
                .uploads
                .extend(uploads.iter().map(|u| (round, u.clone())));
        }
        let d_avg = server_aggregate(&uploads)?;
        for client in clients.iter_mut() {
            broadcast_merge(client, &d_avg)?;
        }

        let post_objective = objectives(&clients, hyper)?;
        let global_drift = (&d_avg - &previous_avg)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        previous_avg = d_avg;
        rounds.push(RoundReport {
            round,
            pre_objective,
            post_objective,
            global_drift,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }

    Ok(TrainedFederation {
        clients,
        alignment: aligned.record,
        rounds,
        audit,
        degenerate_recoveries,
    })
}

fn make_upload(client: &ClientState) -> GlobalUpload {
    GlobalUpload {
        site_id: client.site_id,
        global_block: client.dict.global_block().to_owned(),
        sample_count: client.sample_count(),
    }
}

fn objectives(clients: &[ClientState], hyper: &Hyperparams) -> Result<Vec<f64>> {
    clients
        .iter()
        .map(|c| objective_site(&c.data, &c.labels, &c.dict, &c.codes, &c.weights, hyper))
        .collect()
}

/// Classifier-only convenience: mean logistic loss across clients.
pub fn mean_classification_loss(clients: &[ClientState]) -> Result<f64> {
    let mut total = 0.0;
    for c in clients {
        total += classification_loss(&c.labels, &c.codes, &c.weights)?;
    }
    Ok(total / clients.len().max(1) as f64)
}
