use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pfeddl_core::alignment::{apply_signed_permutation, global_alignment, SignedPermutation};
use pfeddl_core::dataio::{generate_synthetic_federation, save_labels, save_matrix};
use pfeddl_core::dl::pretrain_local;
use pfeddl_core::evaluation::{run_experiment, DataSource, ExperimentConfig, RoiSignMode};
use pfeddl_core::federation::{client_stream_rng, RunOptions};
use pfeddl_core::types::{DataMatrix, Dictionary, Hyperparams, Labels, SparseCode};

use crate::config::{DataSpec, RunConfig};
use crate::data::load_sites;
use crate::report;

fn load_inputs(config: &RunConfig) -> anyhow::Result<Vec<(DataMatrix, Labels)>> {
    match &config.data {
        DataSpec::Synthetic(spec) => Ok(generate_synthetic_federation(spec)?.0),
        DataSpec::Dirs(dirs) => load_sites(dirs),
    }
}

fn experiment_config(config: &RunConfig, sites: Vec<(DataMatrix, Labels)>) -> ExperimentConfig {
    let mut exp = ExperimentConfig::new(DataSource::Loaded(sites), config.hyper.clone());
    exp.folds = config.folds;
    exp.options = RunOptions {
        threads: config.threads,
        record_uploads: false,
    };
    exp.roi_mode = if config.roi_signed {
        RoiSignMode::Signed
    } else {
        RoiSignMode::Absolute
    };
    exp
}

/// Write the synthetic federation to disk: one directory per site plus the
/// ground-truth bundle. Everything is staged and then moved into place, so an
/// interrupted or failed run leaves no partial site behind.
pub fn cmd_synth(config: &RunConfig) -> anyhow::Result<()> {
    let DataSpec::Synthetic(spec) = &config.data else {
        bail!("synth needs a [synthetic] data source in the config");
    };
    let (sites, truth) = generate_synthetic_federation(spec)?;

    let out = &config.out_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let staging = out.join(format!(".staging-{}", std::process::id()));
    std::fs::create_dir_all(&staging).with_context(|| format!("creating {}", staging.display()))?;

    let result = (|| -> anyhow::Result<Vec<(PathBuf, String)>> {
        let mut manifest = Vec::new();
        for (site, (x, y)) in sites.iter().enumerate() {
            let name = report::site_name(site);
            let site_dir = staging.join(&name);
            std::fs::create_dir_all(&site_dir)?;
            save_matrix(&site_dir.join("X.txt"), x.values())?;
            save_labels(&site_dir.join("Y.txt"), y)?;
            manifest.push((
                PathBuf::from(&name).join("X.txt"),
                format!("{}x{}", x.feature_dim(), x.sample_count()),
            ));
            manifest.push((
                PathBuf::from(&name).join("Y.txt"),
                format!("{} labels", y.len()),
            ));
        }
        let truth_dir = staging.join("ground_truth");
        std::fs::create_dir_all(&truth_dir)?;
        save_matrix(&truth_dir.join("global_atoms.txt"), &truth.global_atoms)?;
        manifest.push((
            PathBuf::from("ground_truth/global_atoms.txt"),
            format!("{}x{}", truth.global_atoms.nrows(), truth.global_atoms.ncols()),
        ));
        for site in 0..sites.len() {
            let tag = format!("{site:02}");
            save_matrix(
                &truth_dir.join(format!("local_atoms_{tag}.txt")),
                &truth.local_atoms[site],
            )?;
            save_matrix(&truth_dir.join(format!("codes_{tag}.txt")), &truth.codes[site])?;
            let dir_col = truth.classifier_dirs[site]
                .clone()
                .insert_axis(ndarray::Axis(1));
            save_matrix(&truth_dir.join(format!("classifier_{tag}.txt")), &dir_col)?;
            manifest.push((
                PathBuf::from(format!("ground_truth/local_atoms_{tag}.txt")),
                format!(
                    "{}x{}",
                    truth.local_atoms[site].nrows(),
                    truth.local_atoms[site].ncols()
                ),
            ));
            manifest.push((
                PathBuf::from(format!("ground_truth/codes_{tag}.txt")),
                format!("{}x{}", truth.codes[site].nrows(), truth.codes[site].ncols()),
            ));
            manifest.push((
                PathBuf::from(format!("ground_truth/classifier_{tag}.txt")),
                format!("{}x1", truth.classifier_dirs[site].len()),
            ));
        }

        // Stage complete; move every entry into its final place.
        for entry in std::fs::read_dir(&staging)? {
            let entry = entry?;
            let target = out.join(entry.file_name());
            if target.exists() {
                std::fs::remove_dir_all(&target)
                    .with_context(|| format!("replacing {}", target.display()))?;
            }
            std::fs::rename(entry.path(), &target)
                .with_context(|| format!("moving into {}", target.display()))?;
        }
        Ok(manifest)
    })();
    let _ = std::fs::remove_dir_all(&staging);
    let manifest = result?;

    println!("wrote {} sites to {}", sites.len(), out.display());
    for (path, dims) in manifest {
        println!("  {} ({dims})", out.join(path).display());
    }
    Ok(())
}

/// Run the cross-validated experiment and write the report bundle.
pub fn cmd_train(config: &RunConfig) -> anyhow::Result<()> {
    let sites = load_inputs(config)?;
    let exp = experiment_config(config, sites);
    let outcome = run_experiment(&exp)?;

    let out = &config.out_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    report::write_report_txt(&out.join("report.txt"), &outcome.report)?;
    report::write_objective_csv(&out.join("objective.csv"), &outcome.report.rounds)?;
    report::write_alignment_txt(&out.join("alignment.txt"), &outcome.report.alignment)?;
    report::write_rounds_jsonl(&out.join("rounds.jsonl"), &outcome.report.rounds)?;
    if !outcome.report.roi.is_empty() {
        report::write_roi_scores(&out.join("roi_scores.txt"), &outcome.report)?;
    }
    report::write_models(&out.join("models"), &outcome.trained)?;

    print!("{}", report::render_accuracy_table(&outcome.report));
    for warning in &outcome.report.warnings {
        log::warn!("{warning}");
    }
    println!("report written to {}", out.display());
    Ok(())
}

/// Pretrain each site and write the alignment record plus the aligned
/// dictionaries for inspection.
pub fn cmd_align(config: &RunConfig) -> anyhow::Result<()> {
    let inputs = load_inputs(config)?;
    let hyper = &config.hyper;

    let mut dicts = Vec::with_capacity(inputs.len());
    let mut codes = Vec::with_capacity(inputs.len());
    for (site, (x, _)) in inputs.iter().enumerate() {
        let mut rng = client_stream_rng(hyper.seed, site);
        let (d, s, _) = pretrain_local(x, hyper, &mut rng)?;
        dicts.push(d);
        codes.push(s);
    }
    let outcome = global_alignment(&dicts, &codes)?;

    let out = &config.out_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    report::write_alignment_txt(&out.join("alignment.txt"), &outcome.record)?;
    let aligned_dir = out.join("aligned");
    std::fs::create_dir_all(&aligned_dir)?;
    for (site, dict) in outcome.dicts.iter().enumerate() {
        save_matrix(
            &aligned_dir.join(format!("{}_dictionary.txt", report::site_name(site))),
            dict.values(),
        )?;
    }

    println!(
        "aligned {} sites x {} atoms, total path weight {}",
        outcome.record.site_count, outcome.record.atom_count, outcome.record.total_weight
    );
    println!("record written to {}", out.join("alignment.txt").display());
    Ok(())
}

/// Plant random signed permutations of one reference dictionary and show that
/// alignment recovers them with zero path weight.
pub fn cmd_align_planted_demo(seed: u64, out: &Path) -> anyhow::Result<()> {
    let (d, k, sites) = (32, 8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference = Dictionary::random_unit(d, k, 0, &mut rng)?;
    let ref_codes = SparseCode::new(Array2::zeros((k, 4)))?;

    let mut planted = Vec::with_capacity(sites);
    let mut dicts = Vec::with_capacity(sites);
    let mut codes = Vec::with_capacity(sites);
    for _ in 0..sites {
        let p = SignedPermutation::random(k, &mut rng);
        let (dp, sp) = apply_signed_permutation(&reference, &ref_codes, &p)?;
        planted.push(p);
        dicts.push(dp);
        codes.push(sp);
    }
    let outcome = global_alignment(&dicts, &codes)?;

    println!("planted-permutation demo: {sites} sites, {k} atoms, dimension {d}");
    for (site, (recovered, planted)) in outcome.perms.iter().zip(planted.iter()).enumerate() {
        let mut cells = Vec::with_capacity(k);
        for r in 0..k {
            cells.push(format!(
                "{}{}",
                recovered.source_index(r),
                if recovered.sign(r) >= 0 { '+' } else { '-' }
            ));
        }
        // The recovered permutation composed with the planted one maps every
        // site back to the same reference ordering.
        let _ = planted;
        println!("site {site}: recovered permutation {}", cells.join(" "));
    }
    for (round, path) in outcome.record.rounds.iter().enumerate() {
        println!("round {round}: path weight {}", path.weight);
    }
    println!("total path weight {}", outcome.record.total_weight);

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    report::write_alignment_txt(&out.join("alignment.txt"), &outcome.record)?;
    Ok(())
}

/// Train once per dictionary size in the sweep list and emit a plot-ready
/// CSV. Rows are flushed as they complete; failed runs are recorded and the
/// sweep continues.
pub fn cmd_sweep(config: &RunConfig) -> anyhow::Result<()> {
    let Some(sweep_k) = &config.sweep_k else {
        bail!("sweep needs a [sweep] section with a k list");
    };
    let sites = load_inputs(config)?;

    let out = &config.out_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let csv_path = out.join("sweep.csv");
    let mut csv = std::fs::File::create(&csv_path)
        .with_context(|| format!("creating {}", csv_path.display()))?;
    writeln!(csv, "k,mean_accuracy,std_accuracy")?;
    csv.flush()?;

    let base = &config.hyper;
    let mut failures = Vec::new();
    for &k in sweep_k {
        // Keep the global/local split proportional to the configured ratio.
        let g = ((k as f64) * (base.g as f64) / (base.k as f64)).round() as usize;
        let hyper = Hyperparams {
            k,
            g: g.min(k),
            ..base.clone()
        };
        let mut exp = experiment_config(config, sites.clone());
        exp.hyper = hyper;
        match run_experiment(&exp) {
            Ok(outcome) => {
                writeln!(
                    csv,
                    "{},{},{}",
                    k, outcome.report.mean_accuracy, outcome.report.std_accuracy
                )?;
                csv.flush()?;
                println!(
                    "k={k}: mean accuracy {:.4} +- {:.4}",
                    outcome.report.mean_accuracy, outcome.report.std_accuracy
                );
            }
            Err(err) => {
                eprintln!("k={k} failed: {err}");
                failures.push((k, err.to_string()));
            }
        }
    }

    if !failures.is_empty() {
        let log_path = out.join("sweep_errors.log");
        let mut log = std::fs::File::create(&log_path)?;
        for (k, err) in &failures {
            writeln!(log, "k={k}: {err}")?;
        }
        bail!(
            "{} of {} sweep runs failed; see {}",
            failures.len(),
            sweep_k.len(),
            log_path.display()
        );
    }
    println!("sweep written to {}", csv_path.display());
    Ok(())
}
