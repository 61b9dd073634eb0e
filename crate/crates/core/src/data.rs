//! Dataset representation, loading, saving, and deterministic grouping.
//!
//! Two on-disk formats:
//!
//! * CSV — comma separated, one row per point, optional single header row
//!   (auto-detected by a non-numeric first row). Labels, when present, live
//!   in a separate single-column CSV.
//! * raw — little-endian f32 values in row-major order plus a JSON sidecar
//!   `{"n": ..., "D": ..., "dtype": "f32", "order": "row-major"}` at
//!   `<path>.json`; labels go in an optional `"label"` key of the sidecar.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// An n x D row-major matrix of finite reals with optional integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix<S: Scalar> {
    n: usize,
    dim: usize,
    values: Vec<S>,
    labels: Option<Vec<usize>>,
}

impl<S: Scalar> DataMatrix<S> {
    pub fn new(n: usize, dim: usize, values: Vec<S>) -> Result<Self> {
        if values.len() != n * dim {
            return Err(Error::Format(format!(
                "expected {} values for a {n} x {dim} matrix, got {}",
                n * dim,
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite value {v} at row {}, column {}",
                    i / dim.max(1),
                    i % dim.max(1)
                )));
            }
        }
        Ok(DataMatrix { n, dim, values, labels: None })
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::Validation(format!(
                "label column has {} entries, dataset has {} rows",
                labels.len(),
                self.n
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[S] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[S]> {
        self.values.chunks_exact(self.dim.max(1))
    }

    /// New matrix holding the given rows, in the given order.
    /// Labels follow the selection.
    pub fn select_rows(&self, rows: &[usize]) -> DataMatrix<S> {
        let mut values = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| rows.iter().map(|&r| l[r]).collect());
        DataMatrix { n: rows.len(), dim: self.dim, values, labels }
    }

    /// Widen storage to f64 (exact).
    pub fn widen(&self) -> DataMatrix<f64> {
        DataMatrix {
            n: self.n,
            dim: self.dim,
            values: self.values.iter().map(|v| v.widen()).collect(),
            labels: self.labels.clone(),
        }
    }

}

/// A partition of rows into L groups, every group nonempty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupIndex {
    n_groups: usize,
    assignment: Vec<usize>,
    sizes: Vec<usize>,
}

impl GroupIndex {
    /// Build from an assignment vector; every group in `0..n_groups` must
    /// be hit at least once.
    pub fn from_assignment(assignment: Vec<usize>, n_groups: usize) -> Result<Self> {
        if n_groups == 0 {
            return Err(Error::Argument("group count must be at least 1".into()));
        }
        let mut sizes = vec![0usize; n_groups];
        for (i, &g) in assignment.iter().enumerate() {
            if g >= n_groups {
                return Err(Error::Argument(format!(
                    "assignment {g} at row {i} is out of range for {n_groups} groups"
                )));
            }
            sizes[g] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Validation(format!("group {empty} is empty")));
        }
        Ok(GroupIndex { n_groups, assignment, sizes })
    }

    /// Build from raw labels: distinct label values are mapped to dense
    /// group ids in ascending label order.
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Argument("cannot group an empty label vector".into()));
        }
        let mut distinct: Vec<usize> = labels.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let assignment = labels
            .iter()
            .map(|l| distinct.binary_search(l).expect("label present"))
            .collect();
        Self::from_assignment(assignment, distinct.len())
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Row indices of group `g`, in original order.
    pub fn members(&self, g: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == g)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Partition `x` by group; row order is preserved within each group.
pub fn split_by_group<S: Scalar>(x: &DataMatrix<S>, g: &GroupIndex) -> Result<Vec<DataMatrix<S>>> {
    if g.len() != x.n() {
        return Err(Error::Argument(format!(
            "assignment length {} does not match {} rows",
            g.len(),
            x.n()
        )));
    }
    Ok((0..g.n_groups())
        .map(|gi| x.select_rows(&g.members(gi)))
        .collect())
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Load a CSV matrix. A non-numeric first row is treated as a header and
/// skipped. Rows are 1-based physical lines in error messages.
pub fn load_csv<S: Scalar>(path: &Path) -> Result<DataMatrix<S>> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text)
}

pub fn parse_csv<S: Scalar>(text: &str) -> Result<DataMatrix<S>> {
    let mut values: Vec<S> = Vec::new();
    let mut dim = 0usize;
    let mut n = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parsed: Option<Vec<S>> = fields
            .iter()
            .map(|f| f.trim().parse::<f64>().ok().map(S::from_f64))
            .collect();
        match parsed {
            None if n == 0 && values.is_empty() => {
                // header row
                continue;
            }
            None => {
                let bad = fields
                    .iter()
                    .position(|f| f.trim().parse::<f64>().is_err())
                    .unwrap_or(0);
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("field {} is not a number: {:?}", bad + 1, fields[bad]),
                });
            }
            Some(row) => {
                if n == 0 {
                    dim = row.len();
                } else if row.len() != dim {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        message: format!(
                            "row {} has {} field{}, expected {dim}",
                            lineno + 1,
                            row.len(),
                            if row.len() == 1 { "" } else { "s" }
                        ),
                    });
                }
                values.extend(row);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Format("no data rows in CSV input".into()));
    }
    DataMatrix::new(n, dim, values)
}

pub fn save_csv<S: Scalar>(x: &DataMatrix<S>, path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in x.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            out.push_str(&v.format());
            first = false;
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Single-column CSV of non-negative integer labels.
pub fn load_labels_csv(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if lineno == 0 && line.parse::<usize>().is_err() {
            continue; // header
        }
        labels.push(line.parse::<usize>().map_err(|_| Error::Parse {
            line: lineno + 1,
            message: format!("label {line:?} is not a non-negative integer"),
        })?);
    }
    Ok(labels)
}

pub fn save_labels_csv(labels: &[usize], path: &Path) -> Result<()> {
    let mut out = String::new();
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// raw f32 + JSON sidecar
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct RawSidecar {
    n: usize,
    #[serde(rename = "D")]
    dim: usize,
    dtype: String,
    order: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<Vec<usize>>,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    std::path::PathBuf::from(s)
}

pub fn save_raw(x: &DataMatrix<f32>, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    let mut buf = Vec::with_capacity(x.values().len() * 4);
    for v in x.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&buf)?;
    let sidecar = RawSidecar {
        n: x.n(),
        dim: x.dim(),
        dtype: "f32".into(),
        order: "row-major".into(),
        label: x.labels().map(|l| l.to_vec()),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_raw(path: &Path) -> Result<DataMatrix<f32>> {
    let sidecar: RawSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    if sidecar.dtype != "f32" {
        return Err(Error::Format(format!(
            "sidecar declares dtype {:?}, only \"f32\" is supported",
            sidecar.dtype
        )));
    }
    if sidecar.order != "row-major" {
        return Err(Error::Format(format!(
            "sidecar declares order {:?}, only \"row-major\" is supported",
            sidecar.order
        )));
    }
    let bytes = fs::read(path)?;
    let expected = sidecar.n * sidecar.dim * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "raw file holds {} bytes, header declares n*D = {} values ({expected} bytes)",
            bytes.len(),
            sidecar.n * sidecar.dim
        )));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let m = DataMatrix::new(sidecar.n, sidecar.dim, values)?;
    match sidecar.label {
        Some(l) => m.with_labels(l),
        None => Ok(m),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_parses_plain_matrix() {
        let m: DataMatrix<f64> = parse_csv("0,0\n1,0\n0,1").unwrap();
        assert_eq!(m.n(), 3);
        assert_eq!(m.dim(), 2);
        assert_eq!(m.row(1), &[1.0, 0.0]);
    }

    #[test]
    fn csv_header_is_skipped() {
        let m: DataMatrix<f64> = parse_csv("x,y\n1,2\n3,4").unwrap();
        assert_eq!(m.n(), 2);
        assert_eq!(m.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn ragged_row_names_offending_line() {
        let err = parse_csv::<f64>("0,0\n1").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2 has 1 field, expected 2"), "{msg}");
    }

    #[test]
    fn non_finite_value_is_rejected_with_index() {
        let err = parse_csv::<f64>("0,0\n1,NaN").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 1"), "{msg}");
        assert!(msg.contains("column 1"), "{msg}");
    }

    #[test]
    fn csv_roundtrip_is_bit_exact() {
        let dir = tempdir();
        let vals = vec![0.1, 1.0 / 3.0, -2.5e-17, 7.0, 1e-300, -0.0];
        let m = DataMatrix::new(3, 2, vals).unwrap();
        let p = dir.join("m.csv");
        save_csv(&m, &p).unwrap();
        let back: DataMatrix<f64> = load_csv(&p).unwrap();
        assert_eq!(m.values(), back.values());
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn raw_roundtrip_is_bit_exact_with_labels() {
        let dir = tempdir();
        let vals: Vec<f32> = vec![0.25, -1.5, 3.125e-3, 9.0];
        let m = DataMatrix::new(2, 2, vals)
            .unwrap()
            .with_labels(vec![0, 1])
            .unwrap();
        let p = dir.join("m.raw");
        save_raw(&m, &p).unwrap();
        let back = load_raw(&p).unwrap();
        assert_eq!(m.values(), back.values());
        assert_eq!(back.labels(), Some(&[0usize, 1][..]));
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn raw_size_mismatch_is_a_format_error() {
        let dir = tempdir();
        let m = DataMatrix::new(2, 2, vec![0.0f32; 4]).unwrap();
        let p = dir.join("m.raw");
        save_raw(&m, &p).unwrap();
        // truncate
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        let err = load_raw(&p).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn split_by_group_partitions_rows() {
        let m = DataMatrix::new(3, 1, vec![10.0, 20.0, 30.0]).unwrap();
        let g = GroupIndex::from_assignment(vec![0, 1, 0], 2).unwrap();
        let parts = split_by_group(&m, &g).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].values(), &[10.0, 30.0]);
        assert_eq!(parts[1].values(), &[20.0]);
        assert_eq!(g.sizes(), &[2, 1]);
    }

    #[test]
    fn single_group_split_is_identity() {
        let m = DataMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = GroupIndex::from_assignment(vec![0, 0], 1).unwrap();
        let parts = split_by_group(&m, &g).unwrap();
        assert_eq!(parts[0], m);
    }

    #[test]
    fn label_length_mismatch_is_rejected() {
        let m = DataMatrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            m.with_labels(vec![0]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn empty_group_is_rejected() {
        let err = GroupIndex::from_assignment(vec![0, 0], 2).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn out_of_range_assignment_is_rejected() {
        let err = GroupIndex::from_assignment(vec![0, 2], 2).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    fn tempdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "stratum-data-test-{}-{:?}",
            std::process::id(),
            std::thread::current().id()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }
}
