//! Seed derivation and pseudonymous identifiers.

use std::collections::{BTreeMap, BTreeSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// One SplitMix64 output for state `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A reproducible random stream bound to one patient.
#[derive(Debug, Clone)]
pub struct PatientStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl PatientStream {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Independent child stream for a labelled purpose.
    pub fn child(&self, label: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ fnv1a64(label.as_bytes())))
    }
}

/// Stream seeded with `splitmix64(master_seed ^ fnv1a64(patient_id))`.
pub fn derive_patient_stream(master_seed: u64, patient_id: &str) -> PatientStream {
    let seed = splitmix64(master_seed ^ fnv1a64(patient_id.as_bytes()));
    PatientStream {
        seed,
        rng: ChaCha8Rng::seed_from_u64(seed),
    }
}

/// Pseudonymous identifiers for patients and studies.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoIdMap {
    pub patients: BTreeMap<String, String>,
    pub studies: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdKind {
    Patient,
    Study,
}

impl IdKind {
    fn label(self) -> &'static str {
        match self {
            IdKind::Patient => "patient",
            IdKind::Study => "study",
        }
    }
}

impl PseudoIdMap {
    fn table(&self, kind: IdKind) -> &BTreeMap<String, String> {
        match kind {
            IdKind::Patient => &self.patients,
            IdKind::Study => &self.studies,
        }
    }

    /// Maps an original id to its pseudonym. An id that already is one of
    /// the pseudonyms maps to itself, which makes re-scrubbing a no-op.
    pub fn resolve(&self, kind: IdKind, id: &str) -> Result<String> {
        let table = self.table(kind);
        if let Some(p) = table.get(id) {
            return Ok(p.clone());
        }
        if table.values().any(|v| v == id) {
            return Ok(id.to_owned());
        }
        Err(Error::MissingId(id.to_owned()))
    }
}

fn draw_id(stream: &mut PatientStream) -> String {
    let mut bytes = [0u8; 16];
    stream.rng().fill_bytes(&mut bytes);
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// First pseudonym candidate for an id, before any collision handling.
pub fn candidate_pseudo_id(master_seed: u64, kind: IdKind, id: &str) -> String {
    let mut stream = derive_patient_stream(master_seed, &format!("{}\u{1f}{id}", kind.label()));
    draw_id(&mut stream)
}

/// Assigns fresh random 128-bit hex identifiers. Each id draws from its own
/// derived stream, so the same id maps to the same pseudonym in every run
/// and in every subset of the corpus; on a collision the stream is drawn
/// again, at most 8 times.
pub fn assign_pseudo_ids(patients: &[String], studies: &[String], master_seed: u64) -> Result<PseudoIdMap> {
    let mut map = PseudoIdMap::default();
    let mut used = BTreeSet::new();
    for (kind, ids) in [(IdKind::Patient, patients), (IdKind::Study, studies)] {
        let mut seen = BTreeSet::new();
        for id in ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate {} id `{id}`", kind.label())));
            }
        }
        for id in seen {
            let mut stream = derive_patient_stream(master_seed, &format!("{}\u{1f}{id}", kind.label()));
            let mut pseudo = draw_id(&mut stream);
            let mut retries = 0;
            while used.contains(&pseudo) || pseudo == id {
                if retries == 8 {
                    return Err(Error::IdCollision(id.to_owned()));
                }
                retries += 1;
                pseudo = draw_id(&mut stream);
            }
            used.insert(pseudo.clone());
            let table = match kind {
                IdKind::Patient => &mut map.patients,
                IdKind::Study => &mut map.studies,
            };
            table.insert(id.to_owned(), pseudo);
        }
    }
    Ok(map)
}
