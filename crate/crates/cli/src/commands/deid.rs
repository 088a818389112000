use std::path::PathBuf;

use clap::Args;
use indexmap::IndexMap;
use osteokit_core::curate::OcrRecord;
use osteokit_core::deid_eval::{evaluate, MatchPolicy, StandoffDocument};
use osteokit_core::detect::{detect_corpus, DetectorConfig, LexiconSet};
use osteokit_core::embed_eval::{PromptFile, BUNDLED_PROMPTS};
use osteokit_core::surrogate::{pseudonymize_corpus, SurrogateMap, SurrogatePolicy};
use osteokit_core::{jsonl, synth, Error, RawDocument, Result, StudyRecord};

use crate::io::{self, write_groups_csv, write_labels_csv};
use crate::Context;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of reports.
    #[arg(long, default_value_t = 220)]
    docs: usize,
    /// Number of demo image embeddings.
    #[arg(long, default_value_t = 400)]
    images: usize,
    /// Embedding dimension of the demo matrices.
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Standard deviation of the noise around each class centre.
    #[arg(long, default_value_t = 2.0)]
    noise: f64,
}

const SYNTH_SEED: u64 = 2024;
const ALLOWLIST: [&str; 4] = ["Modality", "BodyPartExamined", "ViewPosition", "PixelSpacing"];

pub fn synth(ctx: &mut Context, a: SynthArgs) -> Result<()> {
    let out = ctx.output_dir(a.out)?;
    let seed = ctx.seed.unwrap_or(SYNTH_SEED);
    let corpus = synth::generate(seed, a.docs);
    ctx.sink.jsonl(&out.join("corpus.jsonl"), &corpus.documents)?;
    ctx.sink.jsonl(&out.join("gold.jsonl"), &corpus.gold)?;
    ctx.sink.produce(&out.join("lexicons"), synth::write_lexicons)?;

    let (studies, ocr) = demo_studies(&corpus.documents);
    ctx.sink.jsonl(&out.join("studies.jsonl"), &studies)?;
    ctx.sink.jsonl(&out.join("ocr.jsonl"), &ocr)?;
    ctx.sink.lines(&out.join("allowlist.txt"), ALLOWLIST)?;

    let prompts = PromptFile::parse(BUNDLED_PROMPTS, &out.join("prompts.json"))?;
    let demo = synth::demo_embeddings(seed, a.images, a.dim, &prompts.texts(), "normal", a.noise)?;
    ctx.sink.embeddings(&out.join("images.npy"), &demo.images, "synthetic")?;
    ctx.sink.embeddings(&out.join("prompt_embeddings.npy"), &demo.prompts, "synthetic")?;
    ctx.sink.bytes(&out.join("labels.csv"), write_labels_csv(demo.images.ids(), &demo.labels))?;
    ctx.sink.bytes(&out.join("groups.csv"), write_groups_csv(demo.images.ids(), &demo.studies))?;
    ctx.sink.bytes(&out.join("prompts.json"), BUNDLED_PROMPTS)?;
    eprintln!(
        "{} reports, {} planted identifiers, {} decoys, {} studies, {} image embeddings",
        corpus.documents.len(),
        corpus.planted.values().sum::<usize>(),
        corpus.decoys,
        studies.len(),
        demo.images.n()
    );
    Ok(())
}

/// One two-image study per report, plus a second study for every ninth
/// report so that some (patient, date) groups are ambiguous. Every seventh
/// study has burned-in text on its second image.
fn demo_studies(docs: &[RawDocument]) -> (Vec<StudyRecord>, Vec<OcrRecord>) {
    let mut studies = Vec::new();
    let mut ocr = Vec::new();
    for (i, d) in docs.iter().enumerate() {
        let copies = if i % 9 == 4 { 2 } else { 1 };
        for c in 0..copies {
            let n = studies.len();
            let study_id = format!("ST{n:05}");
            let image_ids: Vec<String> = (0..2).map(|j| format!("{study_id}-{j}")).collect();
            let (first, last) = d.known_patient_names.first().cloned().unwrap_or_default();
            let metadata: IndexMap<String, String> = [
                ("Modality", "CR".to_owned()),
                ("PatientName", format!("{}^{}", last.to_uppercase(), first)),
                ("PatientID", d.patient_id.clone()),
                ("BodyPartExamined", ["HAND", "WRIST", "ELBOW", "SHOULDER"][n % 4].to_owned()),
                ("ViewPosition", ["AP", "PA", "LAT"][n % 3].to_owned()),
                ("StudyDate", d.date.to_string().replace('-', "")),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v))
            .collect();
            for (j, img) in image_ids.iter().enumerate() {
                let text = if j == 1 && n % 7 == 0 {
                    format!("{} {} DOSSIER {} EXAMEN DU {}", last.to_uppercase(), first, d.patient_id, d.date)
                } else {
                    ["D", "G", "DROITE", ""][(n + j) % 4].to_owned()
                };
                ocr.push(OcrRecord {
                    image_id: img.clone(),
                    extracted_text: text,
                });
            }
            studies.push(StudyRecord {
                study_id,
                patient_id: d.patient_id.clone(),
                date: d.date,
                timestamp: Some(8 * 3600 + 60 * (n as u32 % 600) + 60 * c),
                image_ids,
                metadata,
            });
        }
    }
    (studies, ocr)
}

#[derive(Debug, Args)]
pub struct DetectorArgs {
    /// Lexicon directory (first_names_female.txt, last_names.txt, ...).
    #[arg(long)]
    lexicons: Option<PathBuf>,
    /// Detector configuration JSON; defaults to the lexicon directory.
    #[arg(long)]
    detector_config: Option<PathBuf>,
}

impl DetectorArgs {
    fn lexicons(&self, ctx: &Context) -> Result<Option<LexiconSet>> {
        self.lexicons
            .clone()
            .or_else(|| ctx.config.paths.lexicons.clone())
            .map(|dir| LexiconSet::load(&dir))
            .transpose()
    }

    fn detector(&self, ctx: &Context, lexicons: Option<&LexiconSet>) -> Result<DetectorConfig> {
        let file = self.detector_config.clone().or_else(|| ctx.config.paths.detector_config.clone());
        match (file, lexicons) {
            (Some(f), _) => DetectorConfig::load(&f),
            (None, Some(l)) => Ok(l.detector_config()),
            (None, None) => Err(Error::InvalidInput("missing --lexicons or --detector-config".into())),
        }
    }
}

#[derive(Debug, Args)]
pub struct DeidArgs {
    /// Report corpus, one JSON document per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[command(flatten)]
    detector: DetectorArgs,
    /// Existing surrogate map to extend, keeping earlier patients consistent.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Jitter ages by a nonzero offset of at most K years.
    #[arg(long, value_name = "K")]
    age_jitter: Option<u32>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn deid(ctx: &mut Context, a: DeidArgs) -> Result<()> {
    let corpus_path = ctx.path(a.corpus, &ctx.config.paths.corpus, "corpus")?;
    let out = ctx.output_dir(a.out)?;
    let seed = ctx.require_seed()?;
    let lexicons = a
        .detector
        .lexicons(ctx)?
        .ok_or_else(|| Error::InvalidInput("missing --lexicons (surrogates are drawn from them)".into()))?;
    let detector = a.detector.detector(ctx, Some(&lexicons))?;
    let docs: Vec<RawDocument> = jsonl::read(&corpus_path)?;

    let section = &ctx.config.surrogate;
    let mut policy = SurrogatePolicy::new(seed, lexicons);
    policy.date_shift_range = section.date_shift_range;
    policy.removal_categories = section.removal_categories.clone();
    policy.age_policy = section.age_policy;
    if let Some(k) = a.age_jitter {
        policy.age_policy = osteokit_core::surrogate::AgePolicy::Jitter(k);
    }

    let mut map = match &a.map {
        Some(p) => serde_json::from_str(&io::read_text(p)?).map_err(|e| Error::Schema {
            path: p.clone(),
            line: e.line(),
            message: e.to_string(),
        })?,
        None => SurrogateMap::new(),
    };
    let result = pseudonymize_corpus(&docs, &detector, &policy, &mut map)?;

    ctx.sink.jsonl(&out.join("surrogates.jsonl"), result.records())?;
    ctx.sink.json(&out.join("surrogate_map.json"), &map)?;
    ctx.sink.jsonl(&out.join("audit.jsonl"), result.audit())?;
    ctx.sink
        .jsonl(&out.join("detected.jsonl"), result.annotated.iter().map(StandoffDocument::from))?;
    let spans: usize = result.annotated.iter().map(|d| d.spans.len()).sum();
    eprintln!("{} documents, {} identifiers replaced, {} patients", docs.len(), spans, map.patients.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalDeidArgs {
    /// Gold standoff annotations.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Predicted standoff annotations; when absent, the detector is run on --corpus.
    #[arg(long, conflicts_with = "corpus")]
    pred: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[command(flatten)]
    detector: DetectorArgs,
    #[arg(long, value_enum)]
    policy: Option<MatchPolicyArg>,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also write the full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum MatchPolicyArg {
    Exact,
    Overlap,
}

impl From<MatchPolicyArg> for MatchPolicy {
    fn from(p: MatchPolicyArg) -> Self {
        match p {
            MatchPolicyArg::Exact => MatchPolicy::Exact,
            MatchPolicyArg::Overlap => MatchPolicy::Overlap,
        }
    }
}

pub fn eval_deid(ctx: &mut Context, a: EvalDeidArgs) -> Result<()> {
    let gold_path = ctx.path(a.gold, &ctx.config.paths.gold, "gold")?;
    let gold: Vec<StandoffDocument> = jsonl::read(&gold_path)?;
    let pred: Vec<StandoffDocument> = match a.pred {
        Some(p) => jsonl::read(&p)?,
        None => {
            let corpus_path = ctx.path(a.corpus, &ctx.config.paths.corpus, "corpus")?;
            let docs: Vec<RawDocument> = jsonl::read(&corpus_path)?;
            let lexicons = a.detector.lexicons(ctx)?;
            let detector = a.detector.detector(ctx, lexicons.as_ref())?;
            detect_corpus(&docs, &detector).iter().map(StandoffDocument::from).collect()
        }
    };
    let policy = a.policy.map(MatchPolicy::from).unwrap_or(ctx.config.eval.policy);
    let report = evaluate(&pred, &gold, policy)?;
    print!("{}", report.render_table());
    if let Some(p) = a.csv {
        ctx.sink.bytes(&p, report.to_csv()?)?;
    }
    if let Some(p) = a.json {
        ctx.sink.json(&p, &report)?;
    }
    Ok(())
}
