//! Site-directory loading. A site directory holds either a precomputed
//! `X.txt`/`Y.txt` pair, or raw `timeseries_<subject>.txt` files (one m x T
//! matrix per subject, routed through the connectivity feature pipeline)
//! next to `Y.txt`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ndarray::Array2;
use pfeddl_core::dataio::{load_labels, load_matrix, pearson_fisher_features};
use pfeddl_core::types::{DataMatrix, Labels};

pub fn load_site(dir: &Path) -> anyhow::Result<(DataMatrix, Labels)> {
    let labels = load_labels(&dir.join("Y.txt"))
        .with_context(|| format!("loading labels for site {}", dir.display()))?;

    let x_path = dir.join("X.txt");
    let data = if x_path.exists() {
        let values = load_matrix(&x_path)
            .with_context(|| format!("loading data for site {}", dir.display()))?;
        DataMatrix::new(values)?
    } else {
        let mut series_files = timeseries_files(dir)?;
        if series_files.is_empty() {
            bail!(
                "site {} has neither X.txt nor timeseries_*.txt files",
                dir.display()
            );
        }
        series_files.sort();
        let mut columns: Vec<Array2<f64>> = Vec::with_capacity(series_files.len());
        for path in &series_files {
            let ts = load_matrix(path)
                .with_context(|| format!("loading time series {}", path.display()))?;
            let feature = pearson_fisher_features(&ts)
                .with_context(|| format!("featurizing {}", path.display()))?;
            columns.push(
                feature
                    .values()
                    .to_owned()
                    .insert_axis(ndarray::Axis(1)),
            );
        }
        let views: Vec<_> = columns.iter().map(|c| c.view()).collect();
        let stacked = ndarray::concatenate(ndarray::Axis(1), &views)
            .context("subjects produced differently sized feature vectors")?;
        DataMatrix::new(stacked)?
    };

    if labels.len() != data.sample_count() {
        bail!(
            "site {}: {} labels but {} samples",
            dir.display(),
            labels.len(),
            data.sample_count()
        );
    }
    Ok((data, labels))
}

fn timeseries_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let entries =
        std::fs::read_dir(dir).with_context(|| format!("reading site directory {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
            if name.starts_with("timeseries_") && name.ends_with(".txt") {
                files.push(path);
            }
        }
    }
    Ok(files)
}

pub fn load_sites(dirs: &[PathBuf]) -> anyhow::Result<Vec<(DataMatrix, Labels)>> {
    dirs.iter().map(|d| load_site(d)).collect()
}
