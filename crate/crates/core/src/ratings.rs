//! Ratings triples and their binarization into a pruned user × item matrix.

use std::collections::HashMap;
use std::io::Read;

use crate::binmat::BinaryMatrix;
use crate::error::{BmfError, Result};

/// Sparse `(row, col, score)` triples over dense indices, with the external
/// ids in first-seen order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RatingsTable {
    pub triples: Vec<(usize, usize, f64)>,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    /// Repeated `(row, col)` pairs overwritten during ingestion.
    pub duplicates: usize,
}

#[derive(Default)]
struct Interner {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Interner {
    fn get(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), self.ids.len() - 1);
        self.ids.len() - 1
    }
}

impl RatingsTable {
    /// Builds a table from external-id triples; later duplicates win.
    pub fn from_triples<I, S>(triples: I) -> Self
    where
        I: IntoIterator<Item = (S, S, f64)>,
        S: AsRef<str>,
    {
        let (mut rows, mut cols) = (Interner::default(), Interner::default());
        let mut position: HashMap<(usize, usize), usize> = HashMap::new();
        let mut out = Vec::new();
        let mut duplicates = 0;
        for (r, c, score) in triples {
            let key = (rows.get(r.as_ref()), cols.get(c.as_ref()));
            match position.get(&key) {
                Some(&at) => {
                    out[at] = (key.0, key.1, score);
                    duplicates += 1;
                }
                None => {
                    position.insert(key, out.len());
                    out.push((key.0, key.1, score));
                }
            }
        }
        Self {
            triples: out,
            row_ids: rows.ids,
            col_ids: cols.ids,
            duplicates,
        }
    }

    /// Reads `row_id,col_id,score` lines, comma- or tab-separated. A first
    /// line whose score field is not a number is taken as a header.
    pub fn read<R: Read>(mut reader: R) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let delimiter = match text.lines().find(|l| !l.trim().is_empty()) {
            Some(l) if l.contains('\t') => b'\t',
            _ => b',',
        };
        let mut csv = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut triples = Vec::new();
        for (k, record) in csv.records().enumerate() {
            let record = record?;
            let line = record.position().map_or(k as u64 + 1, |p| p.line()) as usize;
            if record.iter().all(str::is_empty) {
                continue;
            }
            if record.len() < 3 {
                return Err(BmfError::Parse {
                    line,
                    msg: format!("expected 3 fields, found {}", record.len()),
                });
            }
            match record[2].parse::<f64>() {
                Ok(score) if score.is_finite() => {
                    triples.push((record[0].to_owned(), record[1].to_owned(), score))
                }
                _ if k == 0 => continue,
                _ => {
                    return Err(BmfError::Parse {
                        line,
                        msg: format!("invalid score {:?}", &record[2]),
                    })
                }
            }
        }
        Ok(Self::from_triples(triples))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::read(text.as_bytes())
    }
}

/// A pruned binary matrix with the external ids of its surviving rows and
/// columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Binarized {
    pub matrix: BinaryMatrix,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
}

impl Binarized {
    /// Ratings whose row and column survived, in matrix coordinates.
    pub fn map_ratings(&self, rt: &RatingsTable) -> Vec<(usize, usize, f64)> {
        map_ratings(rt, &self.row_ids, &self.col_ids)
    }
}

/// Re-indexes ratings onto a matrix whose rows and columns carry the given
/// external ids, dropping ratings outside it.
pub fn map_ratings(
    rt: &RatingsTable,
    row_ids: &[String],
    col_ids: &[String],
) -> Vec<(usize, usize, f64)> {
    let rows: HashMap<&str, usize> = row_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let cols: HashMap<&str, usize> = col_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    rt.triples
        .iter()
        .filter_map(|&(r, c, score)| {
            Some((
                *rows.get(rt.row_ids[r].as_str())?,
                *cols.get(rt.col_ids[c].as_str())?,
                score,
            ))
        })
        .collect()
}

/// Sets a cell iff its score exceeds `positive_threshold`, then alternately
/// drops rows and columns with fewer ones than the given minima until
/// nothing changes.
pub fn binarize_ratings(
    rt: &RatingsTable,
    positive_threshold: f64,
    min_row_degree: usize,
    min_col_degree: usize,
) -> Result<Binarized> {
    if !positive_threshold.is_finite() {
        return Err(crate::error::invalid("positive threshold must be finite"));
    }
    let positives: Vec<(usize, usize)> = rt
        .triples
        .iter()
        .filter(|t| t.2 > positive_threshold)
        .map(|&(r, c, _)| (r, c))
        .collect();
    let mut row_alive = vec![true; rt.row_ids.len()];
    let mut col_alive = vec![true; rt.col_ids.len()];
    loop {
        let mut changed = false;
        let mut degree = vec![0usize; row_alive.len()];
        for &(r, c) in &positives {
            if col_alive[c] && row_alive[r] {
                degree[r] += 1;
            }
        }
        for (alive, &d) in row_alive.iter_mut().zip(&degree) {
            if *alive && d < min_row_degree {
                *alive = false;
                changed = true;
            }
        }
        let mut degree = vec![0usize; col_alive.len()];
        for &(r, c) in &positives {
            if row_alive[r] && col_alive[c] {
                degree[c] += 1;
            }
        }
        for (alive, &d) in col_alive.iter_mut().zip(&degree) {
            if *alive && d < min_col_degree {
                *alive = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let remap = |alive: &[bool]| {
        let mut next = 0;
        alive
            .iter()
            .map(|&a| {
                a.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect::<Vec<Option<usize>>>()
    };
    let (row_map, col_map) = (remap(&row_alive), remap(&col_alive));
    let rows = row_alive.iter().filter(|&&a| a).count();
    let cols = col_alive.iter().filter(|&&a| a).count();
    if rows == 0 || cols == 0 {
        return Err(BmfError::EmptyMatrix(format!(
            "binarization left {rows} rows and {cols} columns"
        )));
    }
    let mut matrix = BinaryMatrix::zeros(rows, cols);
    let mut ones = 0;
    for &(r, c) in &positives {
        if let (Some(j), Some(i)) = (row_map[r], col_map[c]) {
            matrix.set(j, i, true);
            ones += 1;
        }
    }
    if ones == 0 {
        return Err(BmfError::EmptyMatrix(
            "no score exceeds the positive threshold".into(),
        ));
    }
    let keep = |ids: &[String], alive: &[bool]| {
        ids.iter()
            .zip(alive)
            .filter(|(_, &a)| a)
            .map(|(s, _)| s.clone())
            .collect()
    };
    Ok(Binarized {
        row_ids: keep(&rt.row_ids, &row_alive),
        col_ids: keep(&rt.col_ids, &col_alive),
        matrix,
    })
}
