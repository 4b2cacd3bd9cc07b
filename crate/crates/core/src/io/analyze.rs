//! Offline analysis of snapshot sequences.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::manifest::RunManifest;
use crate::io::snapshot::read_snapshot;
use crate::io::trace::format_float;
use crate::linalg::DenseMatrix;
use crate::model::MATRIX_NAMES;
use crate::spectral::{cosine_similarity, cosine_similarity_slices, sd_variation, NormBundle, SpectralSnapshot};

pub const ANALYSIS_HEADER: &str = "step,matrix,fro,nuc,cond,sd_var,cos_param_final,cos_spectrum_final";

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisRow {
    pub step: u64,
    pub matrix: String,
    pub norms: NormBundle,
    /// Against the previous snapshot of the same matrix; `NaN` for the first.
    pub sd_var: f64,
    pub cos_param_final: f64,
    pub cos_spectrum_final: f64,
}

/// Loads every snapshot in the manifest and computes per-entry metrics,
/// grouped by matrix in the order `W_Q, W_K, W_V`.
pub fn analyze_snapshots(manifest: &RunManifest, base_dir: &Path) -> Result<Vec<AnalysisRow>> {
    let mut groups: BTreeMap<usize, Vec<(usize, u64, DenseMatrix)>> = BTreeMap::new();
    for (i, e) in manifest.snapshots.iter().enumerate() {
        let slot = MATRIX_NAMES
            .iter()
            .position(|n| *n == e.matrix)
            .ok_or_else(|| manifest_err(i, &e.path, "unknown matrix"))?;
        let m = read_snapshot(&manifest.resolve(base_dir, &e.path)).map_err(|err| match err {
            Error::Io { .. } => err,
            other => manifest_err(i, &e.path, other.to_string()),
        })?;
        groups.entry(slot).or_default().push((i, e.step, m));
    }
    if groups.is_empty() {
        return Err(Error::invalid("manifest lists no snapshots"));
    }

    let mut rows = Vec::new();
    for (slot, entries) in groups {
        let name = MATRIX_NAMES[slot];
        if entries.len() < 2 {
            return Err(Error::invalid(format!("{name} needs at least two snapshots")));
        }
        let shape = entries[0].2.shape();
        if let Some((i, _, m)) = entries.iter().find(|(_, _, m)| m.shape() != shape) {
            return Err(manifest_err(
                *i,
                &manifest.snapshots[*i].path,
                format!("shape {:?} differs from {:?}", m.shape(), shape),
            ));
        }
        let final_m = &entries.last().expect("nonempty").2;
        let final_s = SpectralSnapshot::of(final_m)?;
        let mut prev: Option<SpectralSnapshot> = None;
        for (_, step, m) in &entries {
            let s = SpectralSnapshot::of(m)?;
            let sd_var = match &prev {
                Some(p) => sd_variation(p, &s).unwrap_or(f64::NAN),
                None => f64::NAN,
            };
            rows.push(AnalysisRow {
                step: *step,
                matrix: name.to_string(),
                norms: NormBundle::from_snapshot(&s),
                sd_var,
                cos_param_final: cosine_similarity(m, final_m).unwrap_or(f64::NAN),
                cos_spectrum_final: cosine_similarity_slices(s.singular_values(), final_s.singular_values())
                    .unwrap_or(f64::NAN),
            });
            prev = Some(s);
        }
    }
    Ok(rows)
}

fn manifest_err(index: usize, path: &str, reason: impl Into<String>) -> Error {
    Error::Manifest {
        index,
        path: path.to_string(),
        reason: reason.into(),
    }
}

pub fn analysis_csv(rows: &[AnalysisRow]) -> String {
    let mut out = String::from(ANALYSIS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.step,
            r.matrix,
            format_float(r.norms.frobenius),
            format_float(r.norms.nuclear),
            format_float(r.norms.condition_number),
            format_float(r.sd_var),
            format_float(r.cos_param_final),
            format_float(r.cos_spectrum_final),
        );
    }
    out
}
