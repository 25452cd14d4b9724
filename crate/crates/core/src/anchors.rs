//! Instance partition (support vectors S, misclassified Q, correct R) and the
//! three ranked anchor tables built from the distance matrix.
//!
//! Ineligible candidates are masked out rather than given a large sentinel
//! distance. Rows are sorted by ascending distance, ties by ascending index,
//! and may be shorter than requested when candidates run out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstancePartition {
    /// Support vectors, ascending.
    pub s: Vec<usize>,
    /// Misclassified non-support-vectors, ascending.
    pub q: Vec<usize>,
    /// Correctly classified non-support-vectors, ascending.
    pub r: Vec<usize>,
    /// Support vectors that are also misclassified (kept in `s`).
    pub misclassified_svs: usize,
}

/// Split `[0, n)` into S, Q and R. A misclassified support vector stays in S.
pub fn partition(labels: &[usize], predictions: &[usize], s: &[usize]) -> Result<InstancePartition> {
    let n = labels.len();
    if predictions.len() != n {
        return Err(Error::Shape("one prediction per label required".into()));
    }
    let mut is_sv = vec![false; n];
    for &i in s {
        if i >= n {
            return Err(Error::Shape(format!("support vector index {i} outside [0, {n})")));
        }
        is_sv[i] = true;
    }
    let mut part = InstancePartition {
        s: (0..n).filter(|&i| is_sv[i]).collect(),
        q: Vec::new(),
        r: Vec::new(),
        misclassified_svs: 0,
    };
    for i in 0..n {
        let wrong = predictions[i] != labels[i];
        match (is_sv[i], wrong) {
            (true, true) => part.misclassified_svs += 1,
            (true, false) => {}
            (false, true) => part.q.push(i),
            (false, false) => part.r.push(i),
        }
    }
    if part.misclassified_svs > 0 {
        log::debug!("{} misclassified support vectors assigned to S", part.misclassified_svs);
    }
    Ok(part)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorTables {
    /// Row `u` holds the type-1 anchors of `partition.s[u]`.
    pub a: Vec<Vec<usize>>,
    /// Row `i` holds the type-2 anchors of `partition.q[i]`.
    pub m: Vec<Vec<usize>>,
    /// Row `i` holds the type-3 anchors of `partition.r[i]`.
    pub g: Vec<Vec<usize>>,
}

/// The `k` nearest eligible candidates of `query`, nearest first.
fn nearest(d: &Matrix, query: usize, candidates: impl Iterator<Item = usize>, k: usize) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    let row = d.row(query);
    let mut c: Vec<usize> = candidates.collect();
    // candidates arrive in ascending index order; a stable sort keeps ties that way
    c.sort_by(|&x, &y| row[x].total_cmp(&row[y]));
    c.truncate(k);
    c
}

fn warn_empty(kind: &str, rows: &[Vec<usize>], k: usize) {
    if k == 0 {
        return;
    }
    let empty = rows.iter().filter(|r| r.is_empty()).count();
    if empty > 0 {
        log::warn!("{empty} of {} {kind} anchor rows have no eligible candidate", rows.len());
    }
}

/// Type 1: for each support vector, the nearest correctly classified
/// non-support-vectors of the same label.
pub fn type1_anchors(
    d: &Matrix,
    s: &[usize],
    labels: &[usize],
    predictions: &[usize],
    sv_close: usize,
) -> Vec<Vec<usize>> {
    let n = labels.len();
    let mut is_sv = vec![false; n];
    s.iter().for_each(|&i| is_sv[i] = true);
    let rows: Vec<Vec<usize>> = s
        .iter()
        .map(|&sv| {
            let eligible = (0..n).filter(|&j| j != sv && !is_sv[j] && labels[j] == labels[sv] && predictions[j] == labels[j]);
            nearest(d, sv, eligible, sv_close)
        })
        .collect();
    warn_empty("type-1", &rows, sv_close);
    rows
}

/// Type 2: for each misclassified instance, the nearest support vectors.
pub fn type2_anchors(d: &Matrix, q: &[usize], s: &[usize], wr_close: usize) -> Result<Vec<Vec<usize>>> {
    if s.is_empty() {
        return Err(Error::NoSupportVectors("type-2 anchors need at least one support vector".into()));
    }
    let mut sorted = s.to_vec();
    sorted.sort_unstable();
    Ok(q.iter()
        .map(|&qi| nearest(d, qi, sorted.iter().copied().filter(|&j| j != qi), wr_close))
        .collect())
}

/// Type 3: for each correctly classified instance, the nearest correctly
/// classified instances of another label.
pub fn type3_anchors(d: &Matrix, r: &[usize], labels: &[usize], sh_close: usize) -> Vec<Vec<usize>> {
    let mut sorted = r.to_vec();
    sorted.sort_unstable();
    let rows: Vec<Vec<usize>> = r
        .iter()
        .map(|&ri| nearest(d, ri, sorted.iter().copied().filter(|&j| labels[j] != labels[ri]), sh_close))
        .collect();
    warn_empty("type-3", &rows, sh_close);
    rows
}

pub fn build_anchor_tables(
    d: &Matrix,
    part: &InstancePartition,
    labels: &[usize],
    predictions: &[usize],
    (sv_close, wr_close, sh_close): (usize, usize, usize),
) -> Result<AnchorTables> {
    Ok(AnchorTables {
        a: type1_anchors(d, &part.s, labels, predictions, sv_close),
        m: type2_anchors(d, &part.q, &part.s, wr_close)?,
        g: type3_anchors(d, &part.r, labels, sh_close),
    })
}

/// CSV dump: `table,query,rank,anchor,distance`.
pub fn write_anchor_csv<W: std::io::Write>(
    mut w: W,
    d: &Matrix,
    part: &InstancePartition,
    tables: &AnchorTables,
) -> Result<()> {
    writeln!(w, "table,query,rank,anchor,distance")?;
    for (name, queries, rows) in [("A", &part.s, &tables.a), ("M", &part.q, &tables.m), ("G", &part.r, &tables.g)] {
        for (&qi, row) in queries.iter().zip(rows) {
            for (rank, &j) in row.iter().enumerate() {
                writeln!(w, "{name},{qi},{rank},{j},{}", d.get(qi, j))?;
            }
        }
    }
    Ok(())
}
