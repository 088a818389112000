use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{cosine_distance, EmbeddingMatrix};
use crate::error::{Error, Result};

/// How the normal and abnormal anchors are built from prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PromptStrategy {
    /// One prompt per class naming it.
    #[serde(rename = "text-binary")]
    TextBinary,
    /// One abnormal prompt listing the sub-classes, comma separated.
    #[serde(rename = "text-enum")]
    TextEnumeration,
    /// One prompt per sub-class; the closest one counts.
    #[serde(rename = "latent-min")]
    LatentMinimum,
    /// One prompt per sub-class; their mean embedding is the anchor.
    #[serde(rename = "latent-mean")]
    LatentMean,
}

impl PromptStrategy {
    pub const ALL: [PromptStrategy; 4] = [
        PromptStrategy::TextBinary,
        PromptStrategy::TextEnumeration,
        PromptStrategy::LatentMinimum,
        PromptStrategy::LatentMean,
    ];

    pub fn key(self) -> &'static str {
        match self {
            PromptStrategy::TextBinary => "text-binary",
            PromptStrategy::TextEnumeration => "text-enum",
            PromptStrategy::LatentMinimum => "latent-min",
            PromptStrategy::LatentMean => "latent-mean",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PromptStrategy::TextBinary => "Text binary",
            PromptStrategy::TextEnumeration => "Text enumeration",
            PromptStrategy::LatentMinimum => "Latent minimum",
            PromptStrategy::LatentMean => "Latent mean",
        }
    }

    fn single_prompt(self) -> bool {
        matches!(self, PromptStrategy::TextBinary | PromptStrategy::TextEnumeration)
    }
}

impl fmt::Display for PromptStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for PromptStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PromptStrategy::ALL
            .into_iter()
            .find(|p| p.key() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown strategy `{s}` (expected text-binary|text-enum|latent-min|latent-mean)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub text: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub strategy: PromptStrategy,
    pub normal: Vec<Prompt>,
    pub abnormal: Vec<Prompt>,
}

impl PromptSet {
    pub fn validate(&self, dim: usize) -> Result<()> {
        for (class, prompts) in [("normal", &self.normal), ("abnormal", &self.abnormal)] {
            if prompts.is_empty() || (self.strategy.single_prompt() && prompts.len() != 1) {
                return Err(Error::invalid(format!(
                    "strategy {} needs {} {class} prompt(s), got {}",
                    self.strategy,
                    if self.strategy.single_prompt() { "exactly one" } else { "at least one" },
                    prompts.len()
                )));
            }
            if let Some(p) = prompts.iter().find(|p| p.embedding.len() != dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.embedding.len(),
                });
            }
        }
        Ok(())
    }
}

impl PromptSet {
    /// Single abnormal-class embedding used as a retrieval query: the prompt
    /// itself for text strategies, the sub-prompt mean for latent mean.
    /// Latent minimum has no single anchor.
    pub fn query_anchor(&self) -> Result<Vec<f64>> {
        match self.strategy {
            PromptStrategy::TextBinary | PromptStrategy::TextEnumeration => {
                let [p] = self.abnormal.as_slice() else {
                    return Err(Error::invalid(format!("strategy {} needs exactly one abnormal prompt", self.strategy)));
                };
                Ok(p.embedding.clone())
            }
            PromptStrategy::LatentMean if !self.abnormal.is_empty() => Ok(mean_embedding(&self.abnormal)),
            _ => Err(Error::invalid(format!("strategy {} has no single retrieval query", self.strategy))),
        }
    }
}

fn mean_embedding(prompts: &[Prompt]) -> Vec<f64> {
    let dim = prompts[0].embedding.len();
    let mut acc = vec![0.0; dim];
    for p in prompts {
        for (a, x) in acc.iter_mut().zip(&p.embedding) {
            *a += x;
        }
    }
    let n = prompts.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Distance from `image` to a class anchor under `strategy`.
fn class_distance(image: &[f32], prompts: &[Prompt], strategy: PromptStrategy, mean: Option<&[f64]>) -> Result<f64> {
    match strategy {
        PromptStrategy::LatentMinimum => prompts
            .iter()
            .map(|p| cosine_distance(image, &p.embedding))
            .try_fold(f64::INFINITY, |m, d| d.map(|d| m.min(d))),
        PromptStrategy::LatentMean => cosine_distance(image, mean.expect("mean anchor")),
        PromptStrategy::TextBinary | PromptStrategy::TextEnumeration => cosine_distance(image, &prompts[0].embedding),
    }
}

/// Abnormality score per image: distance to the normal anchor minus
/// distance to the abnormal anchor. Positive means abnormal.
pub fn zero_shot_scores(images: &EmbeddingMatrix, prompts: &PromptSet) -> Result<Vec<f64>> {
    prompts.validate(images.dim())?;
    let s = prompts.strategy;
    let (normal_mean, abnormal_mean) = if s == PromptStrategy::LatentMean {
        (Some(mean_embedding(&prompts.normal)), Some(mean_embedding(&prompts.abnormal)))
    } else {
        (None, None)
    };
    images
        .rows()
        .map(|img| {
            let dn = class_distance(img, &prompts.normal, s, normal_mean.as_deref())?;
            let da = class_distance(img, &prompts.abnormal, s, abnormal_mean.as_deref())?;
            Ok(dn - da)
        })
        .collect()
}

/// Mean image score per study. `studies` maps a study id to its image ids;
/// every scored image must belong to exactly one study.
pub fn pool_study_scores(
    image_ids: &[String],
    scores: &[f64],
    studies: &BTreeMap<String, Vec<String>>,
) -> Result<BTreeMap<String, f64>> {
    if image_ids.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: image_ids.len(),
            got: scores.len(),
        });
    }
    let by_image: BTreeMap<&str, f64> = image_ids.iter().map(String::as_str).zip(scores.iter().copied()).collect();
    let mut assigned = BTreeSet::new();
    let mut out = BTreeMap::new();
    for (study, images) in studies {
        if images.is_empty() {
            return Err(Error::invalid(format!("study `{study}` has no images")));
        }
        let mut vals = Vec::with_capacity(images.len());
        for img in images {
            if !assigned.insert(img.as_str()) {
                return Err(Error::invalid(format!("image `{img}` belongs to more than one study")));
            }
            vals.push(*by_image.get(img.as_str()).ok_or_else(|| Error::MissingId(img.clone()))?);
        }
        // summing in sorted order makes the mean independent of image order
        vals.sort_by(f64::total_cmp);
        out.insert(study.clone(), vals.iter().sum::<f64>() / vals.len() as f64);
    }
    if let Some(img) = image_ids.iter().find(|i| !assigned.contains(i.as_str())) {
        return Err(Error::invalid(format!("image `{img}` belongs to no study")));
    }
    Ok(out)
}

/// A prompt given either by its text (which is also its row id in the
/// prompt embedding matrix) or by text and explicit row id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PromptRef {
    Text(String),
    Row { text: String, row: String },
}

impl PromptRef {
    fn text(&self) -> &str {
        match self {
            PromptRef::Text(t) | PromptRef::Row { text: t, .. } => t,
        }
    }

    fn row(&self) -> &str {
        match self {
            PromptRef::Text(t) => t,
            PromptRef::Row { row, .. } => row,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrompts {
    pub normal: Vec<PromptRef>,
    pub abnormal: Vec<PromptRef>,
}

/// French prompts for the MURA and FracAtlas datasets, all four strategies.
pub const BUNDLED_PROMPTS: &str = include_str!("../../fixtures/prompts.json");

/// Prompt definitions per dataset and strategy, stored as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptFile {
    pub datasets: IndexMap<String, IndexMap<PromptStrategy, ClassPrompts>>,
}

impl PromptFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema {
            path: origin.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Every prompt text the file mentions, in first-seen order.
    pub fn texts(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for strategies in self.datasets.values() {
            for c in strategies.values() {
                for p in c.normal.iter().chain(&c.abnormal) {
                    if seen.insert(p.row().to_owned()) {
                        out.push(p.row().to_owned());
                    }
                }
            }
        }
        out
    }

    /// Resolves the prompts of one dataset and strategy against a matrix of
    /// prompt embeddings.
    pub fn prompt_set(&self, dataset: &str, strategy: PromptStrategy, embeddings: &EmbeddingMatrix) -> Result<PromptSet> {
        let classes = self
            .datasets
            .get(dataset)
            .ok_or_else(|| Error::MissingId(format!("dataset `{dataset}` in prompt file")))?
            .get(&strategy)
            .ok_or_else(|| Error::MissingId(format!("strategy {strategy} for dataset `{dataset}`")))?;
        let resolve = |refs: &[PromptRef]| -> Result<Vec<Prompt>> {
            refs.iter()
                .map(|r| {
                    Ok(Prompt {
                        text: r.text().to_owned(),
                        embedding: embeddings.row_by_id(r.row())?.iter().map(|&x| x as f64).collect(),
                    })
                })
                .collect()
        };
        let set = PromptSet {
            strategy,
            normal: resolve(&classes.normal)?,
            abnormal: resolve(&classes.abnormal)?,
        };
        set.validate(embeddings.dim())?;
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prompt(text: &str, e: Vec<f64>) -> Prompt {
        Prompt {
            text: text.into(),
            embedding: e,
        }
    }

    fn random_matrix(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        EmbeddingMatrix::new((0..n).map(|i| format!("img{i}")).collect(), d, data).unwrap()
    }

    fn random_vec(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn latent_mean_of_one_prompt_is_text_binary() {
        let imgs = random_matrix(40, 16, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, a) = (random_vec(16, &mut rng), random_vec(16, &mut rng));
        let set = |s| PromptSet {
            strategy: s,
            normal: vec![prompt("normal", n.clone())],
            abnormal: vec![prompt("anormal", a.clone())],
        };
        let binary = zero_shot_scores(&imgs, &set(PromptStrategy::TextBinary)).unwrap();
        let mean = zero_shot_scores(&imgs, &set(PromptStrategy::LatentMean)).unwrap();
        assert_eq!(binary, mean);
        // a duplicated sub-prompt changes nothing under latent minimum
        let mut dup = set(PromptStrategy::LatentMinimum);
        dup.abnormal.push(dup.abnormal[0].clone());
        assert_eq!(zero_shot_scores(&imgs, &dup).unwrap(), binary);
    }

    #[test]
    fn image_on_the_normal_prompt_scores_negative() {
        let n = vec![1.0, 0.0, 0.5];
        let a = vec![0.2, 1.0, -0.3];
        let imgs = EmbeddingMatrix::from_rows(vec!["x".into()], &[n.iter().map(|&x| x as f32).collect()]).unwrap();
        let set = PromptSet {
            strategy: PromptStrategy::TextBinary,
            normal: vec![prompt("normal", n.clone())],
            abnormal: vec![prompt("anormal", a.clone())],
        };
        let s = zero_shot_scores(&imgs, &set).unwrap()[0];
        assert!((s + cosine_distance(&n, &a).unwrap()).abs() < 1e-12);
        assert!(s < 0.0);
    }

    #[test]
    fn arity_is_checked() {
        let imgs = random_matrix(2, 3, 0);
        let bad = PromptSet {
            strategy: PromptStrategy::TextEnumeration,
            normal: vec![prompt("n", vec![1.0; 3])],
            abnormal: vec![prompt("a", vec![1.0; 3]), prompt("b", vec![0.0, 1.0, 0.0])],
        };
        assert!(zero_shot_scores(&imgs, &bad).is_err());
        let empty = PromptSet {
            strategy: PromptStrategy::LatentMinimum,
            normal: vec![prompt("n", vec![1.0; 3])],
            abnormal: vec![],
        };
        assert!(zero_shot_scores(&imgs, &empty).is_err());
    }

    #[test]
    fn power_of_two_rescaling_is_exact() {
        let imgs = random_matrix(30, 8, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let normal = vec![prompt("n", random_vec(8, &mut rng))];
        let abnormal: Vec<Prompt> = (0..3).map(|i| prompt(&i.to_string(), random_vec(8, &mut rng))).collect();
        for s in [PromptStrategy::LatentMinimum, PromptStrategy::LatentMean] {
            let set = PromptSet {
                strategy: s,
                normal: normal.clone(),
                abnormal: abnormal.clone(),
            };
            let scaled = PromptSet {
                strategy: s,
                normal: normal.iter().map(|p| prompt(&p.text, p.embedding.iter().map(|x| x * 8.0).collect())).collect(),
                abnormal: abnormal.iter().map(|p| prompt(&p.text, p.embedding.iter().map(|x| x * 8.0).collect())).collect(),
            };
            assert_eq!(
                zero_shot_scores(&imgs, &set).unwrap(),
                zero_shot_scores(&imgs.scaled(0.25).unwrap(), &scaled).unwrap()
            );
        }
    }

    #[test]
    fn pooling() {
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let mut studies = BTreeMap::new();
        studies.insert("s1".to_string(), vec!["a".to_string(), "b".to_string()]);
        studies.insert("s2".to_string(), vec!["c".to_string()]);
        let pooled = pool_study_scores(&ids, &[0.2, 0.4, -1.5], &studies).unwrap();
        assert!((pooled["s1"] - 0.3).abs() < 1e-15);
        assert_eq!(pooled["s2"], -1.5);
        studies.get_mut("s1").unwrap().reverse();
        assert_eq!(pool_study_scores(&ids, &[0.2, 0.4, -1.5], &studies).unwrap(), pooled);
        studies.insert("s3".into(), vec![]);
        assert!(pool_study_scores(&ids, &[0.2, 0.4, -1.5], &studies).is_err());
        studies.remove("s3");
        studies.get_mut("s2").unwrap().clear();
        studies.get_mut("s2").unwrap().push("a".into());
        assert!(pool_study_scores(&ids, &[0.2, 0.4, -1.5], &studies).is_err());
    }

    #[test]
    fn prompt_file_resolution() {
        let json = r#"{"datasets": {"demo": {
            "text-binary": {"normal": ["normal"], "abnormal": ["anormal"]},
            "latent-mean": {"normal": ["normal"], "abnormal": ["fracture", {"text": "luxation", "row": "lux"}]}
        }}}"#;
        let f: PromptFile = serde_json::from_str(json).unwrap();
        assert_eq!(f.texts(), ["normal", "anormal", "fracture", "lux"]);
        let emb = EmbeddingMatrix::from_rows(
            f.texts(),
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5], vec![0.0, 2.0]],
        )
        .unwrap();
        let set = f.prompt_set("demo", PromptStrategy::LatentMean, &emb).unwrap();
        assert_eq!(set.abnormal[1].text, "luxation");
        assert_eq!(set.abnormal[1].embedding, [0.0, 2.0]);
        assert!(f.prompt_set("demo", PromptStrategy::LatentMinimum, &emb).is_err());
        assert!(f.prompt_set("other", PromptStrategy::TextBinary, &emb).is_err());
    }

    #[test]
    fn bundled_prompts_cover_both_datasets() {
        let f = PromptFile::parse(BUNDLED_PROMPTS, Path::new("prompts.json")).unwrap();
        for ds in ["MURA", "FracAtlas"] {
            let strategies = &f.datasets[ds];
            assert_eq!(strategies.len(), 4, "{ds}");
            assert_eq!(strategies[&PromptStrategy::TextBinary].abnormal.len(), 1);
        }
        let frac = &f.datasets["FracAtlas"][&PromptStrategy::TextEnumeration].abnormal[0];
        assert_eq!(frac.text(), "fracture, lésion osseuse, arrachement osseux");
    }
}
