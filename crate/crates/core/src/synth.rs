//! Seeded generator for a synthetic French radiology corpus with gold PHI
//! annotations, lexicons, and near-miss decoys that should not be flagged.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::deid_eval::{StandoffDocument, StandoffSpan};
use crate::embed_eval::EmbeddingMatrix;
use crate::detect::{months, Lexicon, LexiconSet};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::model::{shift_date, CalendarDate, PhiCategory, RawDocument};

pub const FEMALE_FIRST_NAMES: &[&str] = &[
    "Marie", "Sophie", "Claire", "Isabelle", "Nathalie", "Julie", "Camille", "Élodie", "Anne", "Valérie",
    "Chantal", "Véronique", "Brigitte", "Aurélie", "Céline", "Manon", "Léa", "Inès", "Noémie", "Hélène",
];
pub const MALE_FIRST_NAMES: &[&str] = &[
    "Jean", "Pierre", "Luc", "Marc", "Philippe", "Michel", "Olivier", "Thierry", "Benoît", "Laurent",
    "Nicolas", "Julien", "Didier", "François", "Stéphane", "Cédric", "Grégory", "Antoine", "Xavier", "Raphaël",
];
/// Surnames with a relative frequency.
pub const LAST_NAMES: &[(&str, u32)] = &[
    ("Dupont", 420), ("Lambert", 390), ("Dubois", 380), ("Peeters", 610), ("Janssens", 590),
    ("Maes", 450), ("Jacobs", 400), ("Mertens", 370), ("Willems", 360), ("Claes", 350),
    ("Goossens", 340), ("Wouters", 330), ("De Smet", 320), ("Leroy", 300), ("Renard", 210),
    ("Lefèvre", 200), ("Lemaire", 190), ("Fontaine", 180), ("Collard", 170), ("Delvaux", 160),
    ("Hermans", 150), ("Denis", 140), ("Gilson", 130), ("Piron", 120), ("Marchal", 110),
    ("Gérard", 100), ("Dumont", 95), ("Hubert", 90), ("Lejeune", 85), ("Van Damme", 80),
];
pub const CITIES: &[(&str, &str)] = &[
    ("Bruxelles", "1000"), ("Liège", "4000"), ("Namur", "5000"), ("Charleroi", "6000"), ("Mons", "7000"),
    ("Tournai", "7500"), ("Wavre", "1300"), ("Arlon", "6700"), ("Nivelles", "1400"), ("Verviers", "4800"),
    ("Huy", "4500"), ("Dinant", "5500"), ("Ottignies", "1340"), ("Braine-l'Alleud", "1420"),
    ("Louvain-la-Neuve", "1348"), ("Waterloo", "1410"), ("Gembloux", "5030"), ("Bastogne", "6600"),
    ("La Louvière", "7100"), ("Seraing", "4100"),
];
pub const INSTITUTIONS: &[&str] = &[
    "Cliniques universitaires Saint-Luc", "CHU de Liège", "Grand Hôpital de Charleroi", "Clinique Saint-Pierre",
    "Hôpital Erasme", "CHR Citadelle", "Clinique Notre-Dame de Grâce", "Hôpital de Jolimont",
    "Clinique Sainte-Élisabeth", "CHU UCL Namur",
];
/// Institutions found only through the keyword pattern.
const KEYWORD_INSTITUTIONS: &[&str] = &[
    "Clinique du Parc Léopold", "Hôpital Saint-Joseph", "Maison de repos Les Tilleuls", "CHU de Tivoli",
    "Clinique Saint-Jean", "Hôpital des Mines",
];
const STREET_NAMES: &[&str] = &[
    "des Tilleuls", "Louise", "de la Station", "Saint-Lambert", "du Midi", "des Alliés", "Albert", "de Namur",
    "Émile Vandervelde", "du Parc",
];
const STREET_KINDS: &[&str] = &["rue", "avenue", "boulevard", "chaussée", "place"];

const INDICATIONS: &[&str] = &[
    "douleur du poignet droit après une chute",
    "gonalgie gauche chronique",
    "contrôle post-opératoire de la hanche",
    "traumatisme de la cheville",
    "suspicion de fracture du scaphoïde",
    "lombalgie mécanique",
];
const FINDINGS: &[&str] = &[
    "absence de lésion osseuse traumatique récente",
    "fracture non déplacée de l'extrémité distale du radius",
    "pincement articulaire fémoro-tibial interne modéré",
    "matériel d'ostéosynthèse en place sans démontage",
    "arthrose acromio-claviculaire débutante",
    "consolidation osseuse satisfaisante",
];
/// Text that resembles PHI without being PHI.
const DECOYS: &[&str] = &[
    "Fracture de type Pouteau-Colles du radius distal.",
    "Classification de Salter-Harris type II.",
    "Pincement discal L4-L5 et L5-S1.",
    "Angle de 35 degrés, mesure de 12.5 mm.",
    "Contrôle à J15 puis dans 6 semaines.",
    "Score de Garden III, stade 2 de Kellgren-Lawrence.",
    "Monsieur est revu en consultation de suivi.",
    "Madame signale une douleur persistante.",
    "Hôpital de jour prévu pour la rééducation.",
    "Clinique du pied sans particularité.",
    "Ratio 1/3 distal, dossier 123456 incomplet.",
    "Premier examen réalisé en mars, rappel le 12 mars.",
    "Date 31/02/2015 invalide dans la demande.",
    "Prothèse de type Charnley en place depuis 2015.",
    "Incidences de Lauenstein et de Dunn réalisées.",
    "Signe de Trendelenburg négatif.",
    "Épaisseur corticale de 0,5 cm.",
    "Lésion de Hill-Sachs sans Bankart osseux.",
    "Trait de refend articulaire sans diastasis.",
    "Revue à 2 semaines avec le plâtre.",
];

#[derive(Debug, Clone)]
struct Patient {
    id: String,
    female: bool,
    first: String,
    last: String,
    birth: CalendarDate,
    city: usize,
}

/// A generated corpus with its gold standard.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub lexicons: LexiconSet,
    pub documents: Vec<RawDocument>,
    pub gold: Vec<StandoffDocument>,
    /// Planted PHI instances per category.
    pub planted: BTreeMap<PhiCategory, usize>,
    /// Decoy sentences inserted.
    pub decoys: usize,
}

pub fn lexicon_set() -> LexiconSet {
    let mut last = Lexicon::new("last_names");
    for (n, w) in LAST_NAMES {
        last.insert(n, Some(*w as f64));
    }
    LexiconSet {
        female_first_names: Lexicon::from_entries("first_names_female", FEMALE_FIRST_NAMES.iter().copied()),
        male_first_names: Lexicon::from_entries("first_names_male", MALE_FIRST_NAMES.iter().copied()),
        last_names: last,
        cities: Lexicon::from_entries("cities", CITIES.iter().map(|c| c.0)),
        institutions: Lexicon::from_entries("institutions", INSTITUTIONS.iter().copied()),
        months: months::default_month_lexicon(),
    }
}

/// Writes the lexicon directory read by [`LexiconSet::load`].
pub fn write_lexicons(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    let lines = |xs: &mut dyn Iterator<Item = String>| xs.map(|s| s + "\n").collect::<String>();
    write("first_names_female.txt", lines(&mut FEMALE_FIRST_NAMES.iter().map(|s| s.to_string())))?;
    write("first_names_male.txt", lines(&mut MALE_FIRST_NAMES.iter().map(|s| s.to_string())))?;
    write("last_names.txt", lines(&mut LAST_NAMES.iter().map(|(n, w)| format!("{n}\t{w}"))))?;
    write("cities.txt", lines(&mut CITIES.iter().map(|c| c.0.to_string())))?;
    write("institutions.txt", lines(&mut INSTITUTIONS.iter().map(|s| s.to_string())))?;
    Ok(())
}

/// Text under construction together with its gold spans.
struct Builder {
    text: String,
    len: usize,
    spans: Vec<StandoffSpan>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            text: String::new(),
            len: 0,
            spans: Vec::new(),
        }
    }

    fn put(&mut self, s: &str) -> &mut Self {
        self.text.push_str(s);
        self.len += s.chars().count();
        self
    }

    fn phi(&mut self, s: &str, category: PhiCategory) -> &mut Self {
        let start = self.len;
        self.put(s);
        self.spans.push(StandoffSpan {
            start,
            end: self.len,
            category,
        });
        self
    }
}

fn numeric_date(rng: &mut ChaCha8Rng, d: CalendarDate) -> String {
    let sep = *['/', '.', '-'].choose(rng).expect("non-empty");
    format!("{:02}{sep}{:02}{sep}{}", d.day(), d.month(), d.year())
}

fn textual_date(rng: &mut ChaCha8Rng, d: CalendarDate) -> String {
    let (full, abbr) = months::MONTHS[d.month() as usize - 1];
    let month = if rng.random_bool(0.3) { abbr } else { full };
    let day = if d.day() == 1 { "1er".to_string() } else { d.day().to_string() };
    format!("{day} {month} {}", d.year())
}

fn phone(rng: &mut ChaCha8Rng) -> String {
    let kind = rng.random_range(0..5);
    let mut d = |n: usize| (0..n).map(|_| char::from(b'0' + rng.random_range(0..10u8))).collect::<String>();
    match kind {
        0 => format!("04 {} {} {}", d(3), d(2), d(2)),
        1 => format!("0470/{}.{}.{}", d(2), d(2), d(2)),
        2 => format!("+32 2 {} {} {}", d(3), d(2), d(2)),
        3 => format!("+33 1 {} {} {} {}", d(2), d(2), d(2), d(2)),
        _ => format!("081 {} {} {}", d(2), d(2), d(2)),
    }
}

fn national_number(rng: &mut ChaCha8Rng, birth: CalendarDate) -> String {
    format!(
        "{:02}.{:02}.{:02}-{:03}.{:02}",
        birth.year() % 100,
        birth.month(),
        birth.day(),
        rng.random_range(1..999),
        rng.random_range(1..97)
    )
}

fn upper(s: &str) -> String {
    s.to_uppercase()
}

/// Generates `n_docs` reports over roughly `n_docs / 3.5` patients.
pub fn generate(seed: u64, n_docs: usize) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_patients = (n_docs * 2 / 7).max(1);
    let mut patients = Vec::with_capacity(n_patients);
    for i in 0..n_patients {
        let female = rng.random_bool(0.5);
        let first = if female {
            FEMALE_FIRST_NAMES.choose(&mut rng)
        } else {
            MALE_FIRST_NAMES.choose(&mut rng)
        }
        .expect("non-empty")
        .to_string();
        let last = LAST_NAMES.choose(&mut rng).expect("non-empty").0.to_string();
        let birth = CalendarDate::new(rng.random_range(1935..2005), rng.random_range(1..=12), rng.random_range(1..=28))
            .expect("valid day");
        patients.push(Patient {
            id: format!("P{:04}", i + 1),
            female,
            first,
            last,
            birth,
            city: rng.random_range(0..CITIES.len()),
        });
    }

    let mut documents = Vec::with_capacity(n_docs);
    let mut gold = Vec::with_capacity(n_docs);
    let mut decoys = 0;
    for k in 0..n_docs {
        let p = &patients[if k < n_patients { k } else { rng.random_range(0..n_patients) }];
        let date = CalendarDate::new(rng.random_range(2012..2021), rng.random_range(1..=12), rng.random_range(1..=28))
            .expect("valid day");
        let age = (date.days_since(p.birth) / 365).max(1);
        let doctors: Vec<(&str, &str)> = {
            let pool: Vec<(&str, &str)> = FEMALE_FIRST_NAMES
                .iter()
                .chain(MALE_FIRST_NAMES)
                .filter(|f| **f != p.first)
                .flat_map(|f| LAST_NAMES.iter().filter(|l| l.0 != p.last).map(move |l| (*f, l.0)))
                .collect();
            pool.choose_multiple(&mut rng, 2).copied().collect()
        };
        let (g_title, g_adj, g_pat, g_pron) = if p.female {
            ("Madame", "âgée", "Patiente", "elle")
        } else {
            ("Monsieur", "âgé", "Patient", "il")
        };

        let mut b = Builder::new();
        use PhiCategory::*;
        if rng.random_bool(0.5) {
            let inst = INSTITUTIONS.choose(&mut rng).expect("non-empty");
            b.phi(&upper(inst), Institution).put(" - SERVICE D'IMAGERIE MÉDICALE\n");
        } else {
            b.put("SERVICE D'IMAGERIE MÉDICALE\n");
        }
        match rng.random_range(0..3) {
            0 => b.put("PATIENT : ").phi(&format!("{} {}", upper(&p.last), upper(&p.first)), PatientName),
            1 => b.put("Patient : ").phi(&format!("{} {}", p.first, p.last), PatientName),
            _ => b
                .put("Patient : ")
                .phi(&format!("{}. {}", p.first.chars().next().expect("non-empty"), p.last), PatientName),
        };
        b.put("\nDate de l'examen : ");
        let exam = numeric_date(&mut rng, date);
        b.phi(&exam, Date).put("\n\n");

        b.put(g_title).put(" ").phi(&p.last, PatientName).put(", ").put(g_adj).put(" de ");
        b.phi(&format!("{age} ans"), Age).put(", est adressé");
        if p.female {
            b.put("e");
        }
        let title = *["Dr", "Docteur", "Dr.", "Pr"].choose(&mut rng).expect("non-empty");
        b.put(" par le ").put(title).put(" ");
        b.phi(&format!("{} {}", doctors[0].0, doctors[0].1), PersonName);
        b.put(" pour ").put(INDICATIONS.choose(&mut rng).expect("non-empty")).put(".\n");

        if rng.random_bool(0.5) {
            b.put(g_pat).put(" de ").phi(&format!("{age} ans"), Age).put(", né");
            if p.female {
                b.put("e");
            }
            b.put(" le ");
            let birth = numeric_date(&mut rng, p.birth);
            b.phi(&birth, Date).put(".\n");
        }
        if rng.random_bool(0.5) {
            let prior = shift_date(date, -rng.random_range(30..2000)).expect("in range");
            b.put("Antécédent de fracture le ").phi(&textual_date(&mut rng, prior), Date);
            b.put(" traitée à la ").phi(KEYWORD_INSTITUTIONS.choose(&mut rng).expect("non-empty"), Institution).put(".\n");
        }
        if rng.random_bool(0.5) {
            let (city, postal) = CITIES[p.city];
            let street = format!(
                "{} {} {}",
                rng.random_range(1..250),
                STREET_KINDS.choose(&mut rng).expect("non-empty"),
                STREET_NAMES.choose(&mut rng).expect("non-empty")
            );
            b.put("Domicile : ").phi(&street, Location).put(", ").phi(&format!("{postal} {city}"), Location).put(".\n");
        }
        if rng.random_bool(0.35) {
            let other = CITIES.choose(&mut rng).expect("non-empty").0;
            b.put("Originaire de ").phi(CITIES[p.city].0, Location).put(", ").put(g_pron).put(" travaille à ");
            b.phi(other, Location).put(".\n");
        }
        if rng.random_bool(0.5) {
            if rng.random_bool(0.5) {
                b.put("NISS : ").phi(&national_number(&mut rng, p.birth), IdNumber).put(".\n");
            } else {
                let n = rng.random_range(1_000_000..100_000_000u32).to_string();
                b.put("N° de dossier : ").phi(&n, IdNumber).put(".\n");
            }
        }
        if rng.random_bool(0.5) {
            let label = if rng.random_bool(0.5) { "Contact secrétariat : " } else { "GSM : " };
            b.put(label).phi(&phone(&mut rng), PhoneNumber).put(".\n");
        }
        if rng.random_bool(0.5) {
            if rng.random_bool(0.5) {
                let host = ["www.clinique-saint-pierre.be", "https://portail.jolimont.be/resultats", "http://imagerie.chu-liege.be"]
                    .choose(&mut rng)
                    .expect("non-empty")
                    .to_string();
                b.put("Résultats disponibles sur ").phi(&host, UrlEmail).put(".\n");
            } else {
                let mail = format!(
                    "secretariat.radiologie{}@{}",
                    rng.random_range(1..9),
                    ["chu-liege.be", "hopital-erasme.be", "skynet.be"].choose(&mut rng).expect("non-empty")
                );
                b.put("Courriel : ").phi(&mail, UrlEmail).put(".\n");
            }
        }
        if rng.random_bool(0.4) {
            b.put("Compte rendu transmis au Pr ").phi(doctors[1].1, PersonName).put(" et à ");
            b.phi(&format!("{} {}", doctors[1].0, doctors[0].1), PersonName).put(".\n");
        }
        if rng.random_bool(0.4) {
            let next = shift_date(date, rng.random_range(14..120)).expect("in range");
            b.put("Contrôle prévu le ").phi(&textual_date(&mut rng, next), Date).put(" au ");
            let inst = INSTITUTIONS.choose(&mut rng).expect("non-empty");
            b.phi(inst, Institution).put(".\n");
        }

        let mut picked: Vec<&str> = DECOYS.choose_multiple(&mut rng, 3).copied().collect();
        picked.shuffle(&mut rng);
        for d in &picked {
            b.put(d).put("\n");
        }
        decoys += picked.len();
        b.put("\nConclusion : ").put(FINDINGS.choose(&mut rng).expect("non-empty")).put(".\n");

        let doc_id = format!("doc-{:04}", k + 1);
        documents.push(RawDocument {
            doc_id: doc_id.clone(),
            patient_id: p.id.clone(),
            date,
            text: b.text,
            known_patient_names: vec![(p.first.clone(), p.last.clone())],
        });
        gold.push(StandoffDocument { doc_id, spans: b.spans });
    }

    let mut planted = BTreeMap::new();
    for d in &gold {
        for s in &d.spans {
            *planted.entry(s.category).or_insert(0) += 1;
        }
    }
    SynthCorpus {
        lexicons: lexicon_set(),
        documents,
        gold,
        planted,
        decoys,
    }
}

/// Writes `corpus.jsonl`, `gold.jsonl` and `lexicons/` under `dir`.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    jsonl::write(&dir.join("corpus.jsonl"), &corpus.documents)?;
    jsonl::write(&dir.join("gold.jsonl"), &corpus.gold)?;
    write_lexicons(&dir.join("lexicons"))
}

/// Image and prompt embeddings with known labels, for exercising the
/// evaluation commands end to end.
#[derive(Debug, Clone)]
pub struct DemoEmbeddings {
    pub images: EmbeddingMatrix,
    /// 1 for abnormal images.
    pub labels: Vec<f64>,
    /// Study id per image; studies hold two images of the same class.
    pub studies: Vec<String>,
    pub prompts: EmbeddingMatrix,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Prompts named `normal_prompt` anchor the normal class; every other
/// prompt is an abnormal sub-class. Abnormal images cluster around the mean
/// of the abnormal prompts, normal images around the normal prompt.
pub fn demo_embeddings(seed: u64, n_images: usize, dim: usize, prompt_texts: &[String], normal_prompt: &str, noise: f64) -> Result<DemoEmbeddings> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prompt_rows: Vec<Vec<f32>> = prompt_texts
        .iter()
        .map(|_| (0..dim).map(|_| gaussian(&mut rng) as f32).collect())
        .collect();
    let prompts = EmbeddingMatrix::from_rows(prompt_texts.to_vec(), &prompt_rows)?;
    let normal = prompts.row_by_id(normal_prompt)?.to_vec();
    let abnormal: Vec<&[f32]> = prompts.rows().zip(prompt_texts).filter(|(_, t)| *t != normal_prompt).map(|(r, _)| r).collect();
    if abnormal.is_empty() {
        return Err(Error::invalid("demo embeddings need at least one abnormal prompt"));
    }
    let mut abnormal_mean = vec![0.0f64; dim];
    for r in &abnormal {
        for (a, &x) in abnormal_mean.iter_mut().zip(*r) {
            *a += x as f64 / abnormal.len() as f64;
        }
    }
    let mut rows = Vec::with_capacity(n_images);
    let mut labels = Vec::with_capacity(n_images);
    let mut studies = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let positive = (i / 2) % 2 == 1;
        let center: Vec<f64> = if positive { abnormal_mean.clone() } else { normal.iter().map(|&x| x as f64).collect() };
        rows.push(center.iter().map(|c| (c + noise * gaussian(&mut rng)) as f32).collect());
        labels.push(positive as u8 as f64);
        studies.push(format!("study-{:04}", i / 2));
    }
    let ids = (0..n_images).map(|i| format!("img-{i:04}")).collect();
    Ok(DemoEmbeddings {
        images: EmbeddingMatrix::from_rows(ids, &rows)?,
        labels,
        studies,
        prompts,
    })
}
