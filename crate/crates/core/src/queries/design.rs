use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A column of a (possibly augmented) design, described in terms of the raw
/// columns it is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Main(usize),
    Interaction(usize, usize),
}

impl Feature {
    pub fn label(&self, names: &[String]) -> String {
        let name = |i: usize| names.get(i).cloned().unwrap_or_else(|| format!("x{i}"));
        match *self {
            Feature::Main(i) => name(i),
            Feature::Interaction(i, j) => format!("{}:{}", name(i), name(j)),
        }
    }

    fn raw_column(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let p = x.ncols();
        match *self {
            Feature::Main(i) if i < p => Ok(x.column(i).iter().copied().collect()),
            Feature::Interaction(i, j) if i < p && j < p => Ok(x
                .column(i)
                .iter()
                .zip(x.column(j).iter())
                .map(|(a, b)| a * b)
                .collect()),
            _ => Err(Error::invalid(format!(
                "feature {self:?} out of range for {p} columns"
            ))),
        }
    }
}

pub fn main_effects(p: usize) -> Vec<Feature> {
    (0..p).map(Feature::Main).collect()
}

/// Centers `col` and scales it to Euclidean norm √n. Fails on constant columns.
pub(crate) fn standardize_column(col: &mut [f64]) -> Result<(f64, f64)> {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    col.iter_mut().for_each(|v| *v -= mean);
    let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 1e-12 * (1.0 + mean.abs()) * n.sqrt() {
        return Err(Error::Degenerate(
            "constant column cannot be standardized".into(),
        ));
    }
    let scale = norm / n.sqrt();
    col.iter_mut().for_each(|v| *v /= scale);
    Ok((mean, scale))
}

/// Builds the design whose columns are the given features, each centered and
/// scaled to norm √n.
pub fn build_design(x: &DMatrix<f64>, features: &[Feature]) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let mut out = DMatrix::zeros(n, features.len());
    for (k, f) in features.iter().enumerate() {
        let mut col = f.raw_column(x)?;
        standardize_column(&mut col)
            .map_err(|_| Error::Degenerate(format!("feature {f:?} is constant")))?;
        out.column_mut(k).copy_from_slice(&col);
    }
    Ok(out)
}

/// The selected main effects followed by every pairwise product of them that
/// is not identically zero, all standardized.
///
/// Products that are constant but nonzero (two columns that are both all
/// ones, say) carry no information once centered and are dropped as well.
pub fn expand_interactions(
    x: &DMatrix<f64>,
    selected: &[usize],
) -> Result<(DMatrix<f64>, Vec<Feature>)> {
    if selected.is_empty() {
        return Err(Error::invalid(
            "interaction expansion needs at least one selected column",
        ));
    }
    let p = x.ncols();
    if let Some(&bad) = selected.iter().find(|&&j| j >= p) {
        return Err(Error::invalid(format!(
            "column {bad} out of range for {p} columns"
        )));
    }
    let mut features: Vec<Feature> = selected.iter().map(|&j| Feature::Main(j)).collect();
    for (a, &i) in selected.iter().enumerate() {
        for &j in &selected[a + 1..] {
            let f = Feature::Interaction(i, j);
            let col = f.raw_column(x)?;
            if col.iter().all(|&v| v == 0.0) {
                continue;
            }
            let first = col[0];
            if col.iter().all(|&v| v == first) {
                continue;
            }
            features.push(f);
        }
    }
    let design = build_design(x, &features)?;
    Ok((design, features))
}
