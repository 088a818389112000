use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cosine_distance, EmbeddingMatrix};
use crate::error::{Error, Result};

/// Area under the ROC curve through the Mann-Whitney U statistic, with tied
/// scores given their average rank.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("non-finite score"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("AUROC needs at least one positive and one negative"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum_pos += avg * order[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Fraction of relevant items among the `k` closest, ties broken by id.
pub fn precision_at_k_from_distances(distances: &[f64], ids: &[String], relevant: &[bool], k: usize) -> Result<f64> {
    let n = distances.len();
    if ids.len() != n || relevant.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: ids.len().min(relevant.len()),
        });
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        distances[a]
            .partial_cmp(&distances[b])
            .unwrap_or(Ordering::Equal)
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    let hits = order[..k].iter().filter(|&&i| relevant[i]).count();
    Ok(hits as f64 / k as f64)
}

/// Precision@k of a text query against image embeddings, ranking by
/// ascending cosine distance.
pub fn precision_at_k<Q: Copy + Into<f64>>(query: &[Q], images: &EmbeddingMatrix, relevant: &[bool], k: usize) -> Result<f64> {
    let distances = images
        .rows()
        .map(|r| cosine_distance(query, r))
        .collect::<Result<Vec<f64>>>()?;
    precision_at_k_from_distances(&distances, images.ids(), relevant, k)
}

/// Shuffles `ids` with `seed` and deals them round-robin into `k` folds, so
/// fold sizes differ by at most one.
pub fn kfold_split(ids: &[String], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if k == 0 || k > ids.len() {
        return Err(Error::invalid(format!("cannot split {} ids into {k} folds", ids.len())));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(ids.len() / k + 1); k];
    for (i, id) in shuffled.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    Ok(folds)
}

/// Mean and sample standard deviation (n - 1 denominator; 0 for a single
/// value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Precision@k over folds, reported as mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub k: usize,
    pub per_fold: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Precision table with one row per query and `Prec@k` columns, cells as
/// percentages `mean (std)`.
pub fn render_retrieval_table(rows: &[(String, Vec<FoldSummary>)]) -> String {
    let ks: Vec<usize> = rows.first().map(|(_, s)| s.iter().map(|f| f.k).collect()).unwrap_or_default();
    let width = rows.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(0).max(8);
    let mut out = format!("{:<width$}", "Query");
    for k in &ks {
        out.push_str(&format!(" {:>14}", format!("Prec@{k}")));
    }
    out.push('\n');
    for (name, summaries) in rows {
        out.push_str(&format!("{name:<width$}"));
        for s in summaries {
            out.push_str(&format!(" {:>14}", format!("{:.1} ({:.1})", 100.0 * s.mean, 100.0 * s.std)));
        }
        out.push('\n');
    }
    out
}

/// Runs the retrieval query on each fold separately.
pub fn retrieval_folds<Q: Copy + Into<f64>>(
    query: &[Q],
    images: &EmbeddingMatrix,
    relevant: &[bool],
    ks: &[usize],
    folds: usize,
    seed: u64,
) -> Result<Vec<FoldSummary>> {
    if relevant.len() != images.n() {
        return Err(Error::DimensionMismatch {
            expected: images.n(),
            got: relevant.len(),
        });
    }
    let distances = images
        .rows()
        .map(|r| cosine_distance(query, r))
        .collect::<Result<Vec<f64>>>()?;
    let index = images.index();
    let split = kfold_split(images.ids(), folds, seed)?;
    ks.iter()
        .map(|&k| {
            let per_fold = split
                .iter()
                .map(|fold| {
                    let rows: Vec<usize> = fold.iter().map(|id| index[id.as_str()]).collect();
                    let d: Vec<f64> = rows.iter().map(|&i| distances[i]).collect();
                    let rel: Vec<bool> = rows.iter().map(|&i| relevant[i]).collect();
                    precision_at_k_from_distances(&d, fold, &rel, k)
                })
                .collect::<Result<Vec<f64>>>()?;
            let (mean, std) = mean_std(&per_fold);
            Ok(FoldSummary { k, per_fold, mean, std })
        })
        .collect()
}
