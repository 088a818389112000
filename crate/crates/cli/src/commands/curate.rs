use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::Args;
use osteokit_core::curate::{
    filter_by_ocr, pair_by_date, parse_allowlist, scrub_metadata, DiscardedGroup, OcrRecord, PairedStudy, ReportRecord,
};
use osteokit_core::surrogate::{assign_pseudo_ids, IdKind};
use osteokit_core::{jsonl, Result, StudyRecord};

use crate::io::read_text;
use crate::Context;

#[derive(Debug, Args)]
pub struct CurateArgs {
    /// Study metadata, one JSON record per line.
    #[arg(long)]
    studies: Option<PathBuf>,
    /// Reports (doc_id, patient_id, date, optional timestamp), one per line.
    #[arg(long)]
    reports: Option<PathBuf>,
    /// OCR output per image, one JSON record per line.
    #[arg(long)]
    ocr: Option<PathBuf>,
    /// Metadata keys to keep, one per line.
    #[arg(long)]
    allowlist: Option<PathBuf>,
    /// Images whose OCR text has this many non-whitespace characters or more are dropped.
    #[arg(long)]
    ocr_threshold: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn curate(ctx: &mut Context, a: CurateArgs) -> Result<()> {
    let paths = &ctx.config.paths;
    let studies_path = ctx.path(a.studies, &paths.studies, "studies")?;
    let reports_path = ctx.path(a.reports, &paths.reports, "reports")?;
    let ocr_path = ctx.path(a.ocr, &paths.ocr, "ocr")?;
    let allowlist_path = ctx.path(a.allowlist, &paths.allowlist, "allowlist")?;
    let out = ctx.output_dir(a.out)?;
    let seed = ctx.require_seed()?;
    let threshold = a.ocr_threshold.unwrap_or(ctx.config.curate.ocr_threshold);

    let studies: Vec<StudyRecord> = jsonl::read(&studies_path)?;
    for s in &studies {
        s.validate()?;
    }
    let reports: Vec<ReportRecord> = jsonl::read(&reports_path)?;
    let ocr: Vec<OcrRecord> = jsonl::read(&ocr_path)?;
    let allowlist = parse_allowlist(&read_text(&allowlist_path)?);

    let split = filter_by_ocr(&ocr, threshold)?;
    let kept: BTreeSet<&str> = split.kept.iter().map(String::as_str).collect();
    let screened: BTreeSet<&str> = ocr.iter().map(|r| r.image_id.as_str()).collect();
    // images the OCR engine never saw cannot be cleared
    let unscreened: Vec<String> = studies
        .iter()
        .flat_map(|s| &s.image_ids)
        .filter(|i| !screened.contains(i.as_str()))
        .cloned()
        .collect();

    let patients: Vec<String> = studies
        .iter()
        .map(|s| &s.patient_id)
        .chain(reports.iter().map(|r| &r.patient_id))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .cloned()
        .collect();
    let study_ids: Vec<String> = studies.iter().map(|s| s.study_id.clone()).collect();
    let ids = assign_pseudo_ids(&patients, &study_ids, seed)?;

    let pairing = pair_by_date(&studies, &reports);
    let mut pairs = Vec::with_capacity(pairing.pairs.len());
    let mut emptied = 0;
    for p in &pairing.pairs {
        let mut study = scrub_metadata(&p.study, &allowlist, &ids)?;
        study.image_ids.retain(|i| kept.contains(i.as_str()));
        if study.image_ids.is_empty() {
            emptied += 1;
            continue;
        }
        pairs.push(PairedStudy {
            study,
            report_doc_id: p.report_doc_id.clone(),
        });
    }
    let discarded = pairing
        .discarded
        .iter()
        .map(|g| {
            Ok(DiscardedGroup {
                patient_id: ids.resolve(IdKind::Patient, &g.patient_id)?,
                date: g.date,
                study_ids: g
                    .study_ids
                    .iter()
                    .map(|s| ids.resolve(IdKind::Study, s))
                    .collect::<Result<_>>()?,
                report_doc_ids: g.report_doc_ids.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut dropped = split.dropped.clone();
    dropped.extend(unscreened.iter().cloned());
    ctx.sink.jsonl(&out.join("pairs.jsonl"), &pairs)?;
    ctx.sink.lines(&out.join("kept_images.txt"), &split.kept)?;
    ctx.sink.lines(&out.join("dropped_images.txt"), &dropped)?;
    ctx.sink.jsonl(&out.join("discarded.jsonl"), &discarded)?;
    ctx.sink.json(&out.join("pseudo_ids.json"), &ids)?;
    eprintln!(
        "{} pairs; {} ambiguous groups discarded ({} items); {} studies left without images; \
         images kept {}, dropped {} ({} unscreened)",
        pairs.len(),
        discarded.len(),
        pairing.discarded_items(),
        emptied,
        split.kept.len(),
        dropped.len(),
        unscreened.len()
    );
    Ok(())
}
