//! Dataset files: a CSV with header `f0,…,f{dim-1},label,is_labeled` and a JSON
//! sidecar `{C, dim, gamma, seed, class_counts}`.
//!
//! Features are written with 17 significant digits, which round-trips every `f64`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numkit::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(rename = "C")]
    pub classes: usize,
    pub dim: usize,
    pub gamma: f64,
    pub seed: u64,
    pub class_counts: Vec<usize>,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Formats with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..ds.dim()).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    header.push("is_labeled".into());
    w.write_record(&header)?;
    // ground truth is part of the file format
    let truth = ds.evaluation_labels();
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.features().row(i).iter().map(|&v| format_f64(v)).collect();
        rec.push(truth[i].to_string());
        rec.push(u8::from(ds.is_labeled(i)).to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta = DatasetMeta {
        classes: ds.classes(),
        dim: ds.dim(),
        gamma: ds.gamma,
        seed: ds.seed,
        class_counts: ds.class_counts().to_vec(),
    };
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(side, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let side = sidecar_path(path);
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?)?;
    let bad = |message: String| Error::Format {
        what: "dataset csv",
        message,
    };
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.len() != meta.dim + 2 {
        return Err(bad(format!(
            "expected {} columns, found {}",
            meta.dim + 2,
            headers.len()
        )));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut labeled = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        for f in rec.iter().take(meta.dim) {
            data.push(
                f.parse::<f64>()
                    .map_err(|e| bad(format!("row {line}: feature `{f}`: {e}")))?,
            );
        }
        labels.push(
            rec[meta.dim]
                .parse::<usize>()
                .map_err(|e| bad(format!("row {line}: label: {e}")))?,
        );
        labeled.push(match &rec[meta.dim + 1] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(bad(format!("row {line}: is_labeled `{other}`"))),
        });
    }
    let n = labels.len();
    let mut ds = Dataset::new(Matrix::from_vec(n, meta.dim, data)?, labels, labeled, meta.classes)?;
    if ds.class_counts() != meta.class_counts.as_slice() {
        return Err(bad("class_counts in sidecar disagree with labels".into()));
    }
    ds.gamma = meta.gamma;
    ds.seed = meta.seed;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_mixture, split_labeled, DatasetSpec, ImbalanceSpec, LabelBudget};
    use crate::numkit::SeededRng;

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = DatasetSpec {
            classes: 3,
            dim: 4,
            centroid_separation: 3.0,
            cluster_scale: 1.0,
            seed: 11,
        };
        let ds = generate_mixture(&spec, &ImbalanceSpec { gamma: 4.0, n_max: 20 }).unwrap();
        let ds = split_labeled(&ds, LabelBudget::PerClass(2), &mut SeededRng::new(1, 3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.features()), bits(ds.features()));
        assert_eq!(back.evaluation_labels(), ds.evaluation_labels());
        assert_eq!(back.labeled_mask(), ds.labeled_mask());
        assert_eq!(back.gamma, 4.0);
        assert_eq!(back.seed, 11);
        let header = fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("f0,f1,f2,f3,label,is_labeled\n"));
    }

    #[test]
    fn seventeen_digits() {
        assert_eq!(format_f64(0.1), "1.0000000000000001e-1");
        for v in [0.1, -3.25e-300, 1.0 / 3.0, f64::MAX, -0.0] {
            assert_eq!(format_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
