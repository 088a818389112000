use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use osteokit_core::embed_eval::{
    auroc, clip_loss, lda_direction, mad, pool_study_scores, render_retrieval_table, retrieval_folds, train_probe,
    zero_shot_scores, ClipLossConfig, EmbeddingMatrix, FoldSummary, LdaResult, ProbeFit, ProbeKind, PromptFile,
    PromptStrategy, BUNDLED_PROMPTS,
};
use osteokit_core::{Error, Result};
use serde::Serialize;

use crate::io::{align_labels, binary, load_embeddings, read_groups, read_labels};
use crate::Context;

#[derive(Debug, Args)]
pub struct ImageArgs {
    /// Image embeddings, an (n, d) NPY file.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Manifest of the image embeddings (default: same path with .json).
    #[arg(long)]
    images_manifest: Option<PathBuf>,
    /// `id,label` CSV.
    #[arg(long)]
    labels: Option<PathBuf>,
}

impl ImageArgs {
    fn load(&self, ctx: &Context) -> Result<(EmbeddingMatrix, Vec<f64>)> {
        let npy = ctx.path(self.images.clone(), &ctx.config.paths.images, "images")?;
        let labels_path = ctx.path(self.labels.clone(), &ctx.config.paths.labels, "labels")?;
        let images = load_embeddings(&npy, self.images_manifest.as_deref())?;
        let labels = align_labels(images.ids(), &read_labels(&labels_path)?)?;
        Ok((images, labels))
    }
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    /// Prompt definitions (default: the bundled French prompts).
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Prompt embeddings; manifest ids are the prompt texts.
    #[arg(long)]
    prompt_embeddings: Option<PathBuf>,
    #[arg(long)]
    prompt_manifest: Option<PathBuf>,
    /// Dataset entry of the prompt file (default: the first one).
    #[arg(long)]
    dataset: Option<String>,
}

impl PromptArgs {
    fn load(&self, ctx: &Context) -> Result<(PromptFile, EmbeddingMatrix, String)> {
        let file = match self.prompts.clone().or_else(|| ctx.config.paths.prompts.clone()) {
            Some(p) => PromptFile::load(&p)?,
            None => PromptFile::parse(BUNDLED_PROMPTS, Path::new("<bundled prompts>"))?,
        };
        let npy = ctx.path(
            self.prompt_embeddings.clone(),
            &ctx.config.paths.prompt_embeddings,
            "prompt-embeddings",
        )?;
        let embeddings = load_embeddings(&npy, self.prompt_manifest.as_deref())?;
        let dataset = match &self.dataset {
            Some(d) => d.clone(),
            None => file
                .datasets
                .keys()
                .next()
                .cloned()
                .ok_or_else(|| Error::InvalidInput("prompt file defines no dataset".into()))?,
        };
        Ok((file, embeddings, dataset))
    }
}

#[derive(Debug, Args)]
pub struct ZeroshotArgs {
    #[command(flatten)]
    images: ImageArgs,
    #[command(flatten)]
    prompts: PromptArgs,
    /// Strategies to score (default: all four).
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<PromptStrategy>,
    /// `id,group` CSV; image scores are averaged per group (study) before scoring.
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Also write the results as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ZeroshotRow {
    strategy: PromptStrategy,
    auroc: f64,
    n: usize,
}

pub fn zeroshot(ctx: &mut Context, a: ZeroshotArgs) -> Result<()> {
    let (images, labels) = a.images.load(ctx)?;
    let labels = binary(&labels)?;
    let (file, prompt_embeddings, dataset) = a.prompts.load(ctx)?;
    let groups = a.groups.as_deref().map(read_groups).transpose()?;
    let strategies = if a.strategy.is_empty() { PromptStrategy::ALL.to_vec() } else { a.strategy };

    let mut rows = Vec::new();
    for s in strategies {
        let set = file.prompt_set(&dataset, s, &prompt_embeddings)?;
        let scores = zero_shot_scores(&images, &set)?;
        let (scores, labels) = match &groups {
            Some(g) => pooled(images.ids(), &scores, &labels, g)?,
            None => (scores, labels.clone()),
        };
        rows.push(ZeroshotRow {
            strategy: s,
            auroc: auroc(&scores, &labels)?,
            n: scores.len(),
        });
    }
    println!("Zero-shot AUROC ({dataset}, {} {})", rows.first().map_or(0, |r| r.n), if groups.is_some() { "studies" } else { "images" });
    println!("{:<18} {:>7}", "Strategy", "AUROC");
    for r in &rows {
        println!("{:<18} {:>7.4}", r.strategy.label(), r.auroc);
    }
    if let Some(p) = a.json {
        ctx.sink.json(&p, &rows)?;
    }
    Ok(())
}

/// Group scores and labels; a group is abnormal when any of its images is.
fn pooled(ids: &[String], scores: &[f64], labels: &[bool], groups: &BTreeMap<String, Vec<String>>) -> Result<(Vec<f64>, Vec<bool>)> {
    let by_group = pool_study_scores(ids, scores, groups)?;
    let label_of: BTreeMap<&str, bool> = ids.iter().map(String::as_str).zip(labels.iter().copied()).collect();
    let group_labels = groups
        .values()
        .map(|members| members.iter().any(|m| label_of[m.as_str()]))
        .collect();
    Ok((by_group.into_values().collect(), group_labels))
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[command(flatten)]
    images: ImageArgs,
    #[command(flatten)]
    prompts: PromptArgs,
    /// Query strategies (default: text-binary, text-enum, latent-mean).
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<PromptStrategy>,
    /// Cut-offs for precision@k (default: 10,50).
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    /// Number of folds (default: 5).
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct RetrievalRow {
    strategy: PromptStrategy,
    folds: Vec<FoldSummary>,
}

pub fn retrieve(ctx: &mut Context, a: RetrieveArgs) -> Result<()> {
    let (images, labels) = a.images.load(ctx)?;
    let relevant = binary(&labels)?;
    let (file, prompt_embeddings, dataset) = a.prompts.load(ctx)?;
    let strategies = if a.strategy.is_empty() {
        vec![PromptStrategy::TextBinary, PromptStrategy::TextEnumeration, PromptStrategy::LatentMean]
    } else {
        a.strategy
    };
    let ks = if a.k.is_empty() { ctx.config.eval.k.clone() } else { a.k };
    let folds = a.folds.unwrap_or(ctx.config.eval.folds);
    let seed = ctx.seed.unwrap_or(0);

    let mut rows = Vec::new();
    for s in strategies {
        let anchor = file.prompt_set(&dataset, s, &prompt_embeddings)?.query_anchor()?;
        rows.push(RetrievalRow {
            strategy: s,
            folds: retrieval_folds(&anchor, &images, &relevant, &ks, folds, seed)?,
        });
    }
    let table: Vec<(String, Vec<FoldSummary>)> = rows.iter().map(|r| (r.strategy.label().to_owned(), r.folds.clone())).collect();
    println!("Retrieval precision, % mean (std) over {folds} folds ({dataset})");
    print!("{}", render_retrieval_table(&table));
    if let Some(p) = a.json {
        ctx.sink.json(&p, &rows)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Training embeddings.
    #[arg(long)]
    train: PathBuf,
    /// Validation embeddings, used for the schedule and model selection.
    #[arg(long)]
    valid: PathBuf,
    /// Held-out embeddings to report the final metric on (default: validation).
    #[arg(long)]
    test: Option<PathBuf>,
    /// `id,label` CSV covering every split.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// classifier or regressor.
    #[arg(long, default_value = "classifier")]
    kind: ProbeKind,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Write the fitted model, history and metric as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ProbeReport {
    metric: &'static str,
    value: f64,
    evaluated_on: &'static str,
    fit: ProbeFit,
}

pub fn probe(ctx: &mut Context, a: ProbeArgs) -> Result<()> {
    let labels_path = ctx.path(a.labels, &ctx.config.paths.labels, "labels")?;
    let labels = read_labels(&labels_path)?;
    let load = |p: &Path| -> Result<(EmbeddingMatrix, Vec<f64>)> {
        let m = load_embeddings(p, None)?;
        let y = align_labels(m.ids(), &labels)?;
        Ok((m, y))
    };
    let (tx, ty) = load(&a.train)?;
    let (vx, vy) = load(&a.valid)?;
    let mut cfg = ctx.config.probe.clone();
    if let Some(lr) = a.lr {
        cfg.learning_rate = lr;
    }
    if let Some(n) = a.max_epochs {
        cfg.max_epochs = n;
    }
    let fit = train_probe(&tx, &ty, &vx, &vy, a.kind, &cfg)?;

    let (ex, ey, evaluated_on) = match &a.test {
        Some(p) => {
            let (x, y) = load(p)?;
            (x, y, "test")
        }
        None => (vx, vy, "valid"),
    };
    let pred = fit.model.predict(&ex)?;
    let (metric, value) = match a.kind {
        ProbeKind::LogisticClassifier => ("auroc", auroc(&pred, &binary(&ey)?)?),
        ProbeKind::LinearRegressor => ("mad", mad(&pred, &ey)?),
    };
    println!(
        "{metric} on {evaluated_on}: {value:.4} (best epoch {} of {})",
        fit.best_epoch,
        fit.history.len()
    );
    if let Some(p) = a.out {
        ctx.sink.json(
            &p,
            &ProbeReport {
                metric,
                value,
                evaluated_on,
                fit,
            },
        )?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ClipLossArgs {
    /// Image embeddings; row i matches text row i.
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    images_manifest: Option<PathBuf>,
    #[arg(long)]
    texts: PathBuf,
    #[arg(long)]
    texts_manifest: Option<PathBuf>,
    /// Softmax temperature (default: 0.07).
    #[arg(long)]
    temperature: Option<f64>,
}

pub fn cliploss(ctx: &mut Context, a: ClipLossArgs) -> Result<()> {
    let img = load_embeddings(&a.images, a.images_manifest.as_deref())?;
    let txt = load_embeddings(&a.texts, a.texts_manifest.as_deref())?;
    let cfg = ClipLossConfig {
        temperature: a.temperature.unwrap_or(ctx.config.eval.temperature),
    };
    let loss = clip_loss(&img, &txt, &cfg)?;
    println!("clip loss over {} pairs (temperature {}): {loss:.6}", img.n(), cfg.temperature);
    Ok(())
}

#[derive(Debug, Args)]
pub struct LdaArgs {
    #[command(flatten)]
    images: ImageArgs,
    /// Write the direction and per-row projections as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct LdaReport<'a> {
    ids: &'a [String],
    #[serde(flatten)]
    result: LdaResult,
}

pub fn lda(ctx: &mut Context, a: LdaArgs) -> Result<()> {
    let (images, labels) = a.images.load(ctx)?;
    let result = lda_direction(&images, &binary(&labels)?)?;
    println!("separation {:.4} (ridge {:.3e}, {} rows)", result.separation, result.ridge, images.n());
    if let Some(p) = a.out {
        ctx.sink.json(&p, &LdaReport { ids: images.ids(), result })?;
    }
    Ok(())
}
