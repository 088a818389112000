//! De-identification, dataset curation and embedding evaluation for French
//! bone X-ray report corpora.

pub mod curate;
pub mod deid_eval;
pub mod detect;
pub mod embed_eval;
pub mod error;
pub mod jsonl;
pub mod model;
pub mod npy;
pub mod surrogate;
pub mod synth;
pub mod vit_resize;

pub use error::{Error, Result};
pub use model::{
    codepoint_len, shift_date, slice_codepoints, AppliedReplacement, CalendarDate, DeidDocument,
    PhiCategory, PhiSpan, RawDocument, StudyRecord,
};
