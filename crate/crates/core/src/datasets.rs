//! Data ingestion, standardization and synthetic generators.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::queries::standardize_column;

/// Per-column centering and scaling applied to X.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

/// What a session file keeps about the data it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub response: String,
    pub columns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub names: Vec<String>,
    pub response: String,
    pub standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        names: Vec<String>,
        response: impl Into<String>,
    ) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: y.len(),
            });
        }
        if names.len() != x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                found: names.len(),
            });
        }
        if y.len() < 2 {
            return Err(Error::invalid("a dataset needs at least two rows"));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset values".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::invalid(format!("duplicate column name '{dup}'")));
        }
        Ok(Self {
            x,
            y,
            names,
            response: response.into(),
            standardization: None,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn record(&self, source: Option<String>) -> DatasetRecord {
        DatasetRecord {
            source,
            response: self.response.clone(),
            columns: self.names.clone(),
            standardization: self.standardization.clone(),
        }
    }

    /// Centers each column and scales it to norm √n. Standardizing twice
    /// composes the records, so `back_transform` always recovers the input
    /// to the first call.
    pub fn standardize(&self) -> Result<Dataset> {
        let mut x = self.x.clone();
        let mut means = Vec::with_capacity(self.p());
        let mut scales = Vec::with_capacity(self.p());
        for (j, mut col) in x.column_iter_mut().enumerate() {
            let (m, s) = standardize_column(col.as_mut_slice()).map_err(|_| {
                Error::Degenerate(format!("column '{}' is constant", self.names[j]))
            })?;
            means.push(m);
            scales.push(s);
        }
        let standardization = match &self.standardization {
            None => Standardization { means, scales },
            Some(prev) => Standardization {
                means: prev
                    .means
                    .iter()
                    .zip(&prev.scales)
                    .zip(&means)
                    .map(|((pm, ps), m)| pm + ps * m)
                    .collect(),
                scales: prev
                    .scales
                    .iter()
                    .zip(&scales)
                    .map(|(a, b)| a * b)
                    .collect(),
            },
        };
        Ok(Dataset {
            x,
            standardization: Some(standardization),
            ..self.clone()
        })
    }

    /// Undoes the recorded standardization.
    pub fn back_transform(&self) -> Dataset {
        let Some(st) = &self.standardization else {
            return self.clone();
        };
        let mut x = self.x.clone();
        for (j, mut col) in x.column_iter_mut().enumerate() {
            col.iter_mut()
                .for_each(|v| *v = *v * st.scales[j] + st.means[j]);
        }
        Dataset {
            x,
            standardization: None,
            ..self.clone()
        }
    }
}

/// Reads a comma-separated file with a header row. Every column other than
/// `response` becomes a column of X.
pub fn load_csv(path: impl AsRef<Path>, response: &str) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, response)
}

pub fn read_csv<R: Read>(reader: R, response: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let csv_err = |e: csv::Error| {
        let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
        Error::Csv {
            row,
            column: String::new(),
            message: e.to_string(),
        }
    };
    let headers: Vec<String> = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let Some(ri) = headers.iter().position(|h| h == response) else {
        return Err(Error::invalid(format!(
            "response column '{response}' not found; available columns: {}",
            headers.join(", ")
        )));
    };
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != ri)
        .map(|(_, h)| h.clone())
        .collect();
    let mut xs = Vec::new();
    let mut y = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
        for (i, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Csv {
                row,
                column: headers[i].clone(),
                message: format!("non-numeric cell '{cell}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    row,
                    column: headers[i].clone(),
                    message: format!("non-finite cell '{cell}'"),
                });
            }
            if i == ri {
                y.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    let n = y.len();
    let x = DMatrix::from_row_slice(n, names.len(), &xs);
    Dataset::new(x, DVector::from_vec(y), names, response)
}

/// Writes X and y with a header row, response last.
pub fn write_csv<W: std::io::Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| Error::invalid(e.to_string());
    let mut header = ds.names.clone();
    header.push(ds.response.clone());
    w.write_record(&header).map_err(to_err)?;
    for i in 0..ds.n() {
        let mut row: Vec<String> = ds.x.row(i).iter().map(|v| v.to_string()).collect();
        row.push(ds.y[i].to_string());
        w.write_record(&row).map_err(to_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Parameters of the Gaussian equicorrelated regression generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub sparsity: usize,
    pub amplitude: f64,
    #[serde(default = "one")]
    pub noise_sd: f64,
    #[serde(default)]
    pub rho: f64,
}

fn one() -> f64 {
    1.0
}

/// y = Xβ + ε with rows of X drawn from an equicorrelated Gaussian and the
/// first `sparsity` coefficients equal to ±amplitude (random signs).
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, Vec<f64>)> {
    let SyntheticSpec {
        n,
        p,
        sparsity,
        amplitude,
        noise_sd,
        rho,
    } = *spec;
    if n < 2 || p == 0 || sparsity > p {
        return Err(Error::invalid(format!(
            "invalid shape n={n}, p={p}, s={sparsity}"
        )));
    }
    if !(0.0..1.0).contains(&rho) || !(noise_sd > 0.0) || !amplitude.is_finite() {
        return Err(Error::invalid(
            "need 0 ≤ rho < 1, noise_sd > 0 and finite amplitude",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let shared: f64 = rng.sample(StandardNormal);
        for j in 0..p {
            let e: f64 = rng.sample(StandardNormal);
            x[(i, j)] = a * shared + b * e;
        }
    }
    let beta: Vec<f64> = (0..p)
        .map(|j| {
            if j < sparsity {
                if rng.gen::<bool>() {
                    amplitude
                } else {
                    -amplitude
                }
            } else {
                0.0
            }
        })
        .collect();
    let signal = &x * DVector::from_column_slice(&beta);
    let y = DVector::from_fn(n, |i, _| {
        signal[i] + noise_sd * rng.sample::<f64, _>(StandardNormal)
    });
    let names = (0..p).map(|j| format!("x{j}")).collect();
    Ok((Dataset::new(x, y, names, "y")?, beta))
}

/// Parameters of the binary-mutation generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationSpec {
    pub n: usize,
    pub prevalences: Vec<f64>,
    /// (column, effect) pairs; other columns have no effect.
    #[serde(default)]
    pub effects: Vec<(usize, f64)>,
    #[serde(default = "one")]
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MutationData {
    pub dataset: Dataset,
    /// True effects aligned with the kept columns.
    pub effects: Vec<f64>,
    /// Original indices of the kept columns.
    pub kept: Vec<usize>,
}

/// Minimum number of ones a mutation column needs to be kept.
pub const MIN_MUTATION_COUNT: usize = 11;

/// A 0/1 design with independent Bernoulli columns. Columns seen fewer than
/// [`MIN_MUTATION_COUNT`] times, or in every row, are dropped.
pub fn gen_binary_mutations(spec: &MutationSpec, seed: u64) -> Result<MutationData> {
    let p = spec.prevalences.len();
    if spec.n < 2 || p == 0 {
        return Err(Error::invalid("need n ≥ 2 and at least one column"));
    }
    if let Some(bad) = spec.prevalences.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        return Err(Error::invalid(format!("prevalence {bad} is not in (0, 1)")));
    }
    if let Some((j, _)) = spec.effects.iter().find(|(j, e)| *j >= p || !e.is_finite()) {
        return Err(Error::invalid(format!("effect column {j} is invalid")));
    }
    if !(spec.noise_sd > 0.0) {
        return Err(Error::invalid("noise_sd must be positive"));
    }
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw = DMatrix::zeros(n, p);
    for i in 0..n {
        for (j, &q) in spec.prevalences.iter().enumerate() {
            if rng.gen::<f64>() < q {
                raw[(i, j)] = 1.0;
            }
        }
    }
    let mut beta = vec![0.0; p];
    for &(j, e) in &spec.effects {
        beta[j] += e;
    }
    let signal = &raw * DVector::from_column_slice(&beta);
    let y = DVector::from_fn(n, |i, _| {
        signal[i] + spec.noise_sd * rng.sample::<f64, _>(StandardNormal)
    });
    let kept: Vec<usize> = (0..p)
        .filter(|&j| {
            let count = raw.column(j).sum() as usize;
            count >= MIN_MUTATION_COUNT && count < n
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::Degenerate(
            "every mutation column was dropped".into(),
        ));
    }
    let x = raw.select_columns(&kept);
    let names = kept.iter().map(|j| format!("m{j}")).collect();
    Ok(MutationData {
        dataset: Dataset::new(x, y, names, "y")?,
        effects: kept.iter().map(|&j| beta[j]).collect(),
        kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_csv() {
        let text = "a,y,b\n1,2,3\n4,5,6\n7,8,9.5\n";
        let ds = read_csv(text.as_bytes(), "y").unwrap();
        assert_eq!((ds.n(), ds.p()), (3, 2));
        assert_eq!(ds.names, vec!["a", "b"]);
        assert_eq!(ds.y.as_slice(), &[2.0, 5.0, 8.0]);
        assert_eq!(ds.x[(2, 1)], 9.5);
    }

    #[test]
    fn missing_response_names_columns() {
        let err = read_csv("a,b\n1,2\n3,4\n".as_bytes(), "y").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("a, b"), "{msg}");
    }

    #[test]
    fn non_numeric_cell_located() {
        let err = read_csv("a,y\n1,2\n3,oops\n".as_bytes(), "y").unwrap_err();
        match err {
            Error::Csv { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "y");
            }
            other => panic!("{other:?}"),
        }
        assert!(read_csv("a,y\n1,2\n3\n".as_bytes(), "y").is_err());
        assert!(read_csv("a,y\n1,2\nNaN,3\n".as_bytes(), "y").is_err());
    }

    #[test]
    fn wide_file_dimensions() {
        let mut text = (0..91)
            .map(|j| format!("m{j}"))
            .collect::<Vec<_>>()
            .join(",");
        text.push_str(",y\n");
        for i in 0..633 {
            let row: Vec<String> = (0..92).map(|j| ((i * j) % 2).to_string()).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        let ds = read_csv(text.as_bytes(), "y").unwrap();
        assert_eq!((ds.n(), ds.p()), (633, 91));
    }

    #[test]
    fn standardize_round_trip() {
        let (ds, _) = gen_synthetic(
            &SyntheticSpec {
                n: 30,
                p: 4,
                sparsity: 1,
                amplitude: 1.0,
                noise_sd: 1.0,
                rho: 0.3,
            },
            5,
        )
        .unwrap();
        let ds = Dataset {
            x: ds.x.map(|v| 3.0 * v + 7.0),
            ..ds
        };
        let s = ds.standardize().unwrap();
        for c in s.x.column_iter() {
            assert!(c.sum().abs() < 1e-10);
            assert!((c.norm() - 30f64.sqrt()).abs() < 1e-10);
        }
        let twice = s.standardize().unwrap();
        assert!((&twice.x - &s.x).amax() < 1e-12);
        assert!((&s.back_transform().x - &ds.x).amax() < 1e-10);
        assert!((&twice.back_transform().x - &ds.x).amax() < 1e-10);
    }

    #[test]
    fn constant_column_rejected() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 3.0, 1.0, 5.0]);
        let ds = Dataset::new(
            x,
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
            vec!["c".into(), "v".into()],
            "y",
        )
        .unwrap();
        assert!(matches!(ds.standardize(), Err(Error::Degenerate(_))));
    }

    #[test]
    fn synthetic_is_deterministic_and_null_has_no_signal() {
        let spec = SyntheticSpec {
            n: 50,
            p: 5,
            sparsity: 2,
            amplitude: 0.0,
            noise_sd: 1.0,
            rho: 0.2,
        };
        let (a, beta) = gen_synthetic(&spec, 9).unwrap();
        let (b, _) = gen_synthetic(&spec, 9).unwrap();
        assert_eq!(a, b);
        assert!(beta.iter().all(|&v| v == 0.0));
        assert!(gen_synthetic(
            &SyntheticSpec {
                sparsity: 6,
                ..spec
            },
            1
        )
        .is_err());
    }

    #[test]
    fn synthetic_ols_recovers_beta() {
        let spec = SyntheticSpec {
            n: 400,
            p: 5,
            sparsity: 5,
            amplitude: 1.0,
            noise_sd: 1.0,
            rho: 0.0,
        };
        let (ds, beta) = gen_synthetic(&spec, 21).unwrap();
        let gram = ds.x.tr_mul(&ds.x);
        let inv = gram.clone().try_inverse().unwrap();
        let bhat = &inv * ds.x.tr_mul(&ds.y);
        for j in 0..5 {
            let se = inv[(j, j)].sqrt();
            assert!((bhat[j] - beta[j]).abs() < 3.0 * se, "coef {j}");
        }
    }

    #[test]
    fn mutation_prevalence_and_filter() {
        let spec = MutationSpec {
            n: 600,
            prevalences: vec![0.5, 0.005, 0.2],
            effects: vec![(0, 1.0)],
            noise_sd: 1.0,
        };
        let m = gen_binary_mutations(&spec, 3).unwrap();
        assert_eq!(m.kept, vec![0, 2]);
        let ones = m.dataset.x.column(0).sum();
        assert!((ones - 300.0).abs() < 4.0 * 150f64.sqrt());
        assert_eq!(m.effects, vec![1.0, 0.0]);
        assert_eq!(gen_binary_mutations(&spec, 3).unwrap(), m);
        let all_rare = MutationSpec {
            prevalences: vec![0.001; 3],
            ..spec
        };
        assert!(gen_binary_mutations(&all_rare, 3).is_err());
    }
}
