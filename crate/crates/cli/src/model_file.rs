//! JSON model files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chernflow_core::fiber::{standard_j, standard_omega, LieAlgebraModel, TwoForm};
use chernflow_core::registry::{self, Example, TorusExample};
use chernflow_core::torus::{Profile, TorusMetricSpec};
use chernflow_core::Model;
use nalgebra::DMatrix;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelFile {
    LieAlgebra {
        #[serde(default)]
        name: Option<String>,
        dim: usize,
        /// `[g, a, b, value]` meaning `[v_a, v_b] = value v_g`.
        brackets: Vec<(usize, usize, usize, f64)>,
        #[serde(rename = "J")]
        j: MatrixOrStandard,
        omega0: MatrixOrStandard,
    },
    Torus {
        #[serde(default)]
        name: Option<String>,
        n: usize,
        #[serde(rename = "N")]
        size: usize,
        metric: MetricEntry,
    },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum MatrixOrStandard {
    Standard(StandardTag),
    Rows(Vec<Vec<f64>>),
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardTag {
    Standard,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum MetricEntry {
    Flat(FlatTag),
    Spec(MetricSpec),
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlatTag {
    Flat,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    Conformal {
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
        #[serde(default)]
        profile: ProfileName,
    },
    Diagonal {
        scales: Vec<f64>,
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
    },
    /// Whitespace-separated `(re, im)` pairs, `n * n` per point, row-major,
    /// points in grid order. Relative paths resolve against the model file.
    File(PathBuf),
}

#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    #[default]
    Bump,
    Wave,
}

fn one() -> f64 {
    1.0
}

/// A model ready to run, with the digest that goes into CSV headers.
#[derive(Clone, Debug)]
pub enum Loaded {
    Lie { name: String, model: Model },
    Torus(TorusExample),
}

#[derive(Clone, Debug)]
pub struct Source {
    pub loaded: Loaded,
    pub hash: String,
    pub warnings: Vec<String>,
}

impl Source {
    pub fn name(&self) -> &str {
        match &self.loaded {
            Loaded::Lie { name, .. } => name,
            Loaded::Torus(t) => t.name,
        }
    }
}

fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads a model file, or a registry entry when `spec` names one and no
/// such file exists.
pub fn load(spec: &str) -> Result<Source, CliError> {
    let path = Path::new(spec);
    if !path.exists() {
        if let Some(ex) = registry::find(spec) {
            return Ok(from_registry(ex));
        }
        return Err(CliError::Validation(format!("{spec}: no such file or registry model")));
    }
    let text = std::fs::read(path).map_err(|e| CliError::Validation(format!("{spec}: {e}")))?;
    let file: ModelFile =
        serde_json::from_slice(&text).map_err(|e| CliError::Validation(format!("{spec}: {e}")))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
    let base = path.parent().unwrap_or(Path::new("."));
    let mut warnings = Vec::new();
    let loaded = resolve(file, &stem, base, &mut warnings)?;
    Ok(Source { loaded, hash: digest(&text), warnings })
}

fn from_registry(ex: Example) -> Source {
    let hash = digest(format!("registry:{}", ex.name()).as_bytes());
    let loaded = match ex {
        Example::Lie(l) => Loaded::Lie { name: l.name.into(), model: l.model().expect("registry models are well formed") },
        Example::Torus(t) => Loaded::Torus(t),
    };
    Source { loaded, hash, warnings: Vec::new() }
}

fn leak(s: String) -> &'static str {
    Box::leak(s.into_boxed_str())
}

fn resolve(file: ModelFile, stem: &str, base: &Path, warnings: &mut Vec<String>) -> Result<Loaded, CliError> {
    match file {
        ModelFile::LieAlgebra { name, dim, brackets, j, omega0 } => {
            if dim == 0 || !dim.is_multiple_of(2) {
                return Err(CliError::Validation(format!("dimension {dim} is not even and positive")));
            }
            let f = antisymmetrize(dim, &brackets, warnings)?;
            let j = match j {
                MatrixOrStandard::Standard(_) => standard_j(dim),
                MatrixOrStandard::Rows(r) => matrix(dim, &r, "J")?,
            };
            let w = match omega0 {
                MatrixOrStandard::Standard(_) => standard_omega(dim),
                MatrixOrStandard::Rows(r) => TwoForm::from_matrix(matrix(dim, &r, "omega0")?, 1e-12)
                    .map_err(|e| CliError::Validation(format!("omega0: {e}")))?,
            };
            let model = LieAlgebraModel::new(dim, f, j, w).map_err(|e| CliError::Validation(e.to_string()))?;
            Ok(Loaded::Lie { name: name.unwrap_or_else(|| stem.into()), model })
        }
        ModelFile::Torus { name, n, size, metric } => {
            if !(1..=2).contains(&n) {
                return Err(CliError::Validation(format!("torus complex dimension {n} (1 or 2 supported)")));
            }
            let metric = match metric {
                MetricEntry::Flat(_) => TorusMetricSpec::Flat,
                MetricEntry::Spec(MetricSpec::Conformal { amplitude, frequency, profile }) => {
                    let profile = match profile {
                        ProfileName::Bump => Profile::Bump,
                        ProfileName::Wave => Profile::Wave,
                    };
                    TorusMetricSpec::Conformal { amplitude, frequency, profile }
                }
                MetricEntry::Spec(MetricSpec::Diagonal { scales, amplitude, frequency }) => {
                    TorusMetricSpec::Diagonal { scales, amplitude, frequency }
                }
                MetricEntry::Spec(MetricSpec::File(p)) => TorusMetricSpec::Samples(read_samples(&base.join(p))?),
            };
            let name = leak(name.unwrap_or_else(|| stem.into()));
            Ok(Loaded::Torus(TorusExample { name, description: "model file", n, size, metric }))
        }
    }
}

fn matrix(dim: usize, rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(CliError::Validation(format!("{what} must be {dim} x {dim}")));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, k| rows[i][k]))
}

/// Dense `f[g][a][b]` from a sparse list. A pair given in both orientations
/// must agree up to sign; otherwise the antisymmetric part is kept.
pub fn antisymmetrize(
    dim: usize,
    brackets: &[(usize, usize, usize, f64)],
    warnings: &mut Vec<String>,
) -> Result<Vec<f64>, CliError> {
    let mut given: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    for &(g, a, b, v) in brackets {
        if g >= dim || a >= dim || b >= dim {
            return Err(CliError::Validation(format!("bracket entry [{g}, {a}, {b}] out of range for dim {dim}")));
        }
        if !v.is_finite() {
            return Err(CliError::Validation(format!("bracket entry [{g}, {a}, {b}] is not finite")));
        }
        if a == b {
            if v != 0.0 {
                warnings.push(format!("[v{a}, v{a}] = {v} v{g} dropped"));
            }
            continue;
        }
        if let Some(old) = given.insert((g, a, b), v) {
            if old != v {
                warnings.push(format!("[v{a}, v{b}] coefficient of v{g} given twice ({old}, {v}); keeping {v}"));
            }
        }
    }
    let mut f = vec![0.0; dim * dim * dim];
    for (&(g, a, b), &v) in &given {
        if a > b && given.contains_key(&(g, b, a)) {
            continue;
        }
        let value = match given.get(&(g, b, a)) {
            Some(&w) if w != -v => {
                warnings.push(format!(
                    "[v{a}, v{b}] and [v{b}, v{a}] disagree on v{g} ({v} vs {w}); using {}",
                    (v - w) / 2.0
                ));
                (v - w) / 2.0
            }
            _ => v,
        };
        f[(g * dim + a) * dim + b] = value;
        f[(g * dim + b) * dim + a] = -value;
    }
    Ok(f)
}

fn read_samples(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let nums = text
        .split_whitespace()
        .map(str::parse::<f64>)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    if nums.len() % 2 != 0 {
        return Err(CliError::Validation(format!("{}: odd number of values", path.display())));
    }
    Ok(nums.chunks_exact(2).map(|c| (c[0], c[1])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirrored_entries_are_filled() {
        let mut w = Vec::new();
        let f = antisymmetrize(2, &[(1, 0, 1, 1.0)], &mut w).unwrap();
        assert_eq!(f, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0]);
        assert!(w.is_empty());
    }

    #[test]
    fn consistent_pairs_are_silent() {
        let mut w = Vec::new();
        antisymmetrize(2, &[(1, 0, 1, 1.0), (1, 1, 0, -1.0)], &mut w).unwrap();
        assert!(w.is_empty());
    }

    #[test]
    fn inconsistent_pairs_warn() {
        let mut w = Vec::new();
        let f = antisymmetrize(2, &[(1, 0, 1, 1.0), (1, 1, 0, 1.0)], &mut w).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(f[2 * 2 + 1], 0.0);
    }

    #[test]
    fn schema_is_enforced() {
        let ok = r#"{"kind":"lie_algebra","dim":2,"brackets":[],"J":"standard","omega0":"standard"}"#;
        assert!(serde_json::from_str::<ModelFile>(ok).is_ok());
        let missing = r#"{"kind":"lie_algebra","dim":2,"brackets":[]}"#;
        assert!(serde_json::from_str::<ModelFile>(missing).is_err());
        let torus = r#"{"kind":"torus","n":1,"N":16,"metric":{"conformal":{"amplitude":0.5}}}"#;
        assert!(serde_json::from_str::<ModelFile>(torus).is_ok());
        let flat = r#"{"kind":"torus","n":1,"N":16,"metric":"flat"}"#;
        assert!(serde_json::from_str::<ModelFile>(flat).is_ok());
    }
}
