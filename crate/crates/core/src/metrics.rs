//! Clustering quality measures.

use pathfinding::prelude::{kuhn_munkres, Matrix};

use crate::error::{Error, Result};

fn contingency(a: &[usize], b: &[usize]) -> Result<Vec<Vec<u64>>> {
    if a.len() != b.len() {
        return Err(Error::dim("label vectors", a.len(), b.len()));
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&i, &j) in a.iter().zip(b) {
        table[i][j] += 1;
    }
    Ok(table)
}

fn pairs(n: u64) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Adjusted Rand index. Two identical partitions score 1, also when both
/// put everything in a single group.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    let table = contingency(a, b)?;
    let n = a.len() as u64;
    let sum_cells: f64 = table.iter().flatten().map(|&c| pairs(c)).sum();
    let sum_rows: f64 = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let cols = table.first().map_or(0, Vec::len);
    let sum_cols: f64 = (0..cols).map(|j| pairs(table.iter().map(|r| r[j]).sum())).sum();
    let total = pairs(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_rows * sum_cols / total;
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / (max - expected))
}

/// Fraction of points whose predicted cluster maps onto their true class
/// under the best one-to-one matching of clusters to classes. Unmatched
/// clusters count as errors.
pub fn matched_accuracy(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Data("matched accuracy of an empty labelling".into()));
    }
    let table = contingency(truth, predicted)?;
    let (rows, cols) = (table.len(), table[0].len());
    // kuhn_munkres needs rows <= columns; pad with zero columns.
    let width = rows.max(cols);
    let weights = Matrix::from_fn(rows, width, |(i, j)| if j < cols { table[i][j] as i64 } else { 0 });
    let (total, _) = kuhn_munkres(&weights);
    Ok(total as f64 / truth.len() as f64)
}

/// Fraction of equal entries.
pub fn accuracy(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(Error::dim("label vectors", truth.len(), predicted.len()));
    }
    if truth.is_empty() {
        return Err(Error::Data("accuracy of an empty labelling".into()));
    }
    Ok(truth.iter().zip(predicted).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64)
}
