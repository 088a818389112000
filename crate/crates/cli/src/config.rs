//! Shared JSON pipeline configuration. Command-line flags override it;
//! relative paths are resolved against the config file's directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use osteokit_core::deid_eval::MatchPolicy;
use osteokit_core::embed_eval::ProbeConfig;
use osteokit_core::surrogate::AgePolicy;
use osteokit_core::{Error, PhiCategory, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub lexicons: Option<PathBuf>,
    pub detector_config: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub studies: Option<PathBuf>,
    pub reports: Option<PathBuf>,
    pub ocr: Option<PathBuf>,
    pub allowlist: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub prompt_embeddings: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateSection {
    pub date_shift_range: (i64, i64),
    pub removal_categories: BTreeSet<PhiCategory>,
    pub age_policy: AgePolicy,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        SurrogateSection {
            date_shift_range: (-1000, 1000),
            removal_categories: [PhiCategory::PhoneNumber, PhiCategory::UrlEmail].into(),
            age_policy: AgePolicy::Keep,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurateSection {
    pub ocr_threshold: usize,
}

impl Default for CurateSection {
    fn default() -> Self {
        CurateSection {
            ocr_threshold: osteokit_core::curate::DEFAULT_OCR_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub policy: MatchPolicy,
    pub temperature: f64,
    pub k: Vec<usize>,
    pub folds: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            policy: MatchPolicy::Exact,
            temperature: 0.07,
            k: vec![10, 50],
            folds: 5,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub master_seed: Option<u64>,
    pub threads: Option<usize>,
    pub paths: Paths,
    pub surrogate: SurrogateSection,
    pub curate: CurateSection,
    pub eval: EvalSection,
    pub probe: ProbeConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base)?;
        Ok(cfg)
    }

    /// Makes input paths absolute relative to `base` and checks they exist.
    fn resolve_paths(&mut self, base: &Path) -> Result<()> {
        let p = &mut self.paths;
        let inputs = [
            &mut p.lexicons,
            &mut p.detector_config,
            &mut p.corpus,
            &mut p.gold,
            &mut p.studies,
            &mut p.reports,
            &mut p.ocr,
            &mut p.allowlist,
            &mut p.images,
            &mut p.labels,
            &mut p.prompts,
            &mut p.prompt_embeddings,
        ];
        for slot in inputs.into_iter().flatten() {
            *slot = base.join(&*slot);
            if !slot.exists() {
                return Err(Error::InvalidInput(format!("configured path {} does not exist", slot.display())));
            }
        }
        if let Some(out) = &mut p.output_dir {
            *out = base.join(&*out);
        }
        Ok(())
    }
}
