use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaResult {
    /// Unit discriminant direction; class 1 projects higher on average.
    pub direction: Vec<f64>,
    /// Projection of every row onto `direction`.
    pub projections: Vec<f64>,
    /// Ridge added to the within-class scatter diagonal.
    pub ridge: f64,
    /// Squared gap between projected class means over pooled projected
    /// within-class variance.
    pub separation: f64,
}

/// Two-class Fisher discriminant. The within-class scatter gets a ridge of
/// `1e-6 * trace / d` before the Cholesky solve.
pub fn lda_direction(x: &EmbeddingMatrix, labels: &[bool]) -> Result<LdaResult> {
    let (n, d) = (x.n(), x.dim());
    if labels.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: labels.len() });
    }
    let n1 = labels.iter().filter(|&&l| l).count();
    let n0 = n - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::invalid("LDA needs both classes"));
    }
    let mut mu = [DVector::<f64>::zeros(d), DVector::<f64>::zeros(d)];
    for (row, &l) in x.rows().zip(labels) {
        let m = &mut mu[l as usize];
        for (a, &v) in m.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    mu[0] /= n0 as f64;
    mu[1] /= n1 as f64;

    let mut sw = DMatrix::<f64>::zeros(d, d);
    for (row, &l) in x.rows().zip(labels) {
        let c = DVector::from_iterator(d, row.iter().map(|&v| v as f64)) - &mu[l as usize];
        sw.syger(1.0, &c, &c, 1.0);
    }
    let ridge = 1e-6 * sw.trace() / d as f64;
    for i in 0..d {
        sw[(i, i)] += ridge;
    }
    let delta = &mu[1] - &mu[0];
    if delta.norm() == 0.0 {
        return Err(Error::Numerical("class means coincide; no discriminant direction".into()));
    }
    let chol = sw
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("within-class scatter is singular even after the ridge".into()))?;
    let mut w = chol.solve(&delta);
    let norm = w.norm();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::Numerical("degenerate discriminant direction".into()));
    }
    w /= norm;
    if w.dot(&delta) < 0.0 {
        w = -w;
    }

    let projections: Vec<f64> = x
        .rows()
        .map(|r| r.iter().zip(w.iter()).map(|(&a, b)| a as f64 * b).sum())
        .collect();
    let mut pm = [0.0, 0.0];
    for (p, &l) in projections.iter().zip(labels) {
        pm[l as usize] += p;
    }
    pm[0] /= n0 as f64;
    pm[1] /= n1 as f64;
    let within: f64 = projections
        .iter()
        .zip(labels)
        .map(|(p, &l)| (p - pm[l as usize]).powi(2))
        .sum::<f64>()
        / n as f64;
    let separation = if within > 0.0 { (pm[1] - pm[0]).powi(2) / within } else { f64::INFINITY };

    Ok(LdaResult {
        direction: w.iter().copied().collect(),
        projections,
        ridge,
        separation,
    })
}
