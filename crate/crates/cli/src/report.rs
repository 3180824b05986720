//! Report rendering. Everything except `rounds.jsonl` is deterministic under
//! (config, seed): the round log carries wall-clock timings and is the one
//! file excluded from byte-for-byte comparisons.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use anyhow::Context;
use pfeddl_core::alignment::AlignmentRecord;
use pfeddl_core::evaluation::FederationReport;
use pfeddl_core::federation::{ClientState, RoundReport};
use pfeddl_core::dataio::save_matrix;

pub fn site_name(site: usize) -> String {
    format!("site_{site:02}")
}

pub fn render_accuracy_table(report: &FederationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<10} {:>8} {:>8}", "site", "mean", "std");
    for (site, (mean, std)) in report
        .site_mean
        .iter()
        .zip(report.site_std.iter())
        .enumerate()
    {
        let _ = writeln!(out, "{:<10} {:>8.4} {:>8.4}", site_name(site), mean, std);
    }
    let _ = writeln!(
        out,
        "{:<10} {:>8.4} {:>8.4}",
        "average", report.mean_accuracy, report.std_accuracy
    );
    out
}

pub fn write_report_txt(path: &Path, report: &FederationReport) -> anyhow::Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "pfeddl cross-validation report");
    let _ = writeln!(out, "folds: {}", report.folds.len());
    let _ = writeln!(out);
    out.push_str(&render_accuracy_table(report));
    let _ = writeln!(out);
    let _ = writeln!(out, "fold detail (per-site accuracy):");
    for fold in &report.folds {
        let accs: Vec<String> = fold.site_accuracy.iter().map(|a| format!("{a:.4}")).collect();
        let _ = writeln!(
            out,
            "fold {}: {} (mean {:.4})",
            fold.fold,
            accs.join(" "),
            fold.mean_accuracy
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "alignment: {} sites, {} atoms, total path weight {}",
        report.alignment.site_count, report.alignment.atom_count, report.alignment.total_weight
    );
    if !report.warnings.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "warnings:");
        for w in &report.warnings {
            let _ = writeln!(out, "- {w}");
        }
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn write_objective_csv(path: &Path, rounds: &[RoundReport]) -> anyhow::Result<()> {
    let mut out = String::new();
    out.push_str("round,mean_pre_objective,mean_post_objective,global_drift\n");
    for r in rounds {
        let pre = r.pre_objective.iter().sum::<f64>() / r.pre_objective.len().max(1) as f64;
        let post = r.post_objective.iter().sum::<f64>() / r.post_objective.len().max(1) as f64;
        let _ = writeln!(out, "{},{},{},{}", r.round, pre, post, r.global_drift);
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn write_rounds_jsonl(path: &Path, rounds: &[RoundReport]) -> anyhow::Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = std::io::BufWriter::new(file);
    for r in rounds {
        let line = serde_json::json!({
            "round": r.round,
            "pre_objective": r.pre_objective,
            "post_objective": r.post_objective,
            "global_drift": r.global_drift,
            "wall_ms": r.wall_ms,
        });
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_alignment_txt(path: &Path, record: &AlignmentRecord) -> anyhow::Result<()> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "sites {} atoms {} total_weight {}",
        record.site_count, record.atom_count, record.total_weight
    );
    let _ = writeln!(out, "# round weight selections (atom index and sign per site, in site order)");
    for (round, path_) in record.rounds.iter().enumerate() {
        let mut selections = String::new();
        for (atom, sign) in path_.atom_indices.iter().zip(path_.signs.iter()) {
            let _ = write!(selections, " {}{}", atom, if *sign >= 0 { '+' } else { '-' });
        }
        let _ = writeln!(out, "round {round} weight {}{selections}", path_.weight);
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn write_roi_scores(path: &Path, report: &FederationReport) -> anyhow::Result<()> {
    let mut out = String::new();
    for (site, roi) in report.roi.iter().enumerate() {
        let _ = writeln!(out, "# {}", site_name(site));
        let top: Vec<String> = roi.top_rois.iter().map(|r| r.to_string()).collect();
        let _ = writeln!(out, "# top rois: {}", top.join(" "));
        let atoms: Vec<String> = roi.top_atoms.iter().map(|a| a.to_string()).collect();
        let _ = writeln!(out, "# top atoms: {}", atoms.join(" "));
        for (index, score) in roi.scores.iter().enumerate() {
            let _ = writeln!(out, "{index} {score}");
        }
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn write_models(dir: &Path, clients: &[ClientState]) -> anyhow::Result<()> {
    for client in clients {
        let site_dir = dir.join(site_name(client.site_id));
        std::fs::create_dir_all(&site_dir)
            .with_context(|| format!("creating {}", site_dir.display()))?;
        save_matrix(&site_dir.join("dictionary.txt"), client.dict.values())?;
        save_matrix(&site_dir.join("codes.txt"), client.codes.values())?;
        // Classifier as a (k+1) x 1 column: weights then bias.
        let mut column = ndarray::Array2::zeros((client.weights.dim() + 1, 1));
        for (i, v) in client.weights.w.iter().enumerate() {
            column[[i, 0]] = *v;
        }
        column[[client.weights.dim(), 0]] = client.weights.b;
        save_matrix(&site_dir.join("classifier.txt"), &column)?;
    }
    Ok(())
}
