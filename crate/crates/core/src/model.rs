//! Domain model for claims records: diagnosis/drug codes, patients, events,
//! five-year age groups, and the immutable [`Dataset`] shared by all
//! analyses.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::{Error, Fnv1a, Result};

/// A three-character ICD-10 category code: one uppercase letter followed by
/// two digits, e.g. `E11`.
///
/// Codes compare lexicographically and pack into two bytes, so they are cheap
/// to index on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DiagnosisCode {
    chapter: u8,
    number: u8,
}

impl DiagnosisCode {
    pub fn new(chapter: char, number: u8) -> Result<Self> {
        if !chapter.is_ascii_uppercase() || number > 99 {
            return Err(Error::Data(format!(
                "invalid diagnosis code {chapter}{number:02}"
            )));
        }
        Ok(DiagnosisCode {
            chapter: chapter as u8,
            number,
        })
    }

    /// Parse with truncation: four-or-more-character subcategory codes like
    /// `E11.9` or `E119` reduce to their three-character category `E11`.
    /// The leading three characters must still form a valid category code.
    pub fn parse_lenient(s: &str) -> Result<Self> {
        let b = s.as_bytes();
        if b.len() < 3 {
            return Err(Error::Data(format!("diagnosis code too short: {s:?}")));
        }
        Self::from_bytes(&b[..3]).ok_or_else(|| Error::Data(format!("bad diagnosis code {s:?}")))
    }

    fn from_bytes(b: &[u8]) -> Option<Self> {
        match b {
            [ch @ b'A'..=b'Z', d1 @ b'0'..=b'9', d2 @ b'0'..=b'9'] => Some(DiagnosisCode {
                chapter: *ch,
                number: (d1 - b'0') * 10 + (d2 - b'0'),
            }),
            _ => None,
        }
    }

    /// The chapter letter, `'A'..='Z'`.
    pub fn chapter(&self) -> char {
        self.chapter as char
    }

    pub fn number(&self) -> u8 {
        self.number
    }
}

impl FromStr for DiagnosisCode {
    type Err = Error;

    /// Strict parse: exactly three characters.
    fn from_str(s: &str) -> Result<Self> {
        if s.len() != 3 {
            return Err(Error::Data(format!(
                "diagnosis code must be 3 characters: {s:?}"
            )));
        }
        DiagnosisCode::from_bytes(s.as_bytes())
            .ok_or_else(|| Error::Data(format!("bad diagnosis code {s:?}")))
    }
}

impl fmt::Display for DiagnosisCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:02}", self.chapter as char, self.number)
    }
}

/// An ATC drug classification code: 1-7 characters, first an uppercase
/// letter, remainder uppercase letters or digits. Supports prefix matching
/// for rules like "any code starting with A10".
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AtcCode(Box<str>);

impl AtcCode {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn starts_with(&self, prefix: &str) -> bool {
        self.0.starts_with(prefix)
    }

    fn valid(s: &str) -> bool {
        let b = s.as_bytes();
        (1..=7).contains(&b.len())
            && b[0].is_ascii_uppercase()
            && b.iter().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit())
    }
}

impl FromStr for AtcCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if AtcCode::valid(s) {
            Ok(AtcCode(s.into()))
        } else {
            Err(Error::Data(format!("bad ATC code {s:?}")))
        }
    }
}

impl fmt::Display for AtcCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub const BOTH: [Sex; 2] = [Sex::Male, Sex::Female];

    pub fn as_char(&self) -> char {
        match self {
            Sex::Male => 'M',
            Sex::Female => 'F',
        }
    }

    /// Index into per-sex count arrays: male 0, female 1.
    pub fn index(&self) -> usize {
        match self {
            Sex::Male => 0,
            Sex::Female => 1,
        }
    }

    pub fn opposite(&self) -> Sex {
        match self {
            Sex::Male => Sex::Female,
            Sex::Female => Sex::Male,
        }
    }
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M" => Ok(Sex::Male),
            "F" => Ok(Sex::Female),
            other => Err(Error::Data(format!("unknown sex {other:?}"))),
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Inclusive calendar-year range, e.g. 2006..=2007.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct YearRange {
    pub start: u16,
    pub end: u16,
}

impl YearRange {
    pub fn new(start: u16, end: u16) -> Result<Self> {
        if start > end {
            return Err(Error::Config(format!(
                "empty study window {start}..={end}"
            )));
        }
        Ok(YearRange { start, end })
    }

    pub fn contains(&self, year: u16) -> bool {
        (self.start..=self.end).contains(&year)
    }

    pub fn years(&self) -> impl Iterator<Item = u16> {
        self.start..=self.end
    }

    pub fn len(&self) -> usize {
        (self.end - self.start) as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DiagnosisEvent {
    pub code: DiagnosisCode,
    pub year: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PrescriptionEvent {
    pub code: AtcCode,
    pub year: u16,
}

/// One person: identity, demographics, and their dated diagnosis and
/// prescription events within the study window.
///
/// Within a [`Dataset`], diagnosis events are sorted by (code, year) and
/// duplicate (code, year) pairs are collapsed: all statistics in this crate
/// count patients, not raw claim rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientRecord {
    pub id: String,
    pub birth_year: u16,
    pub sex: Sex,
    pub died_in_window: bool,
    pub inpatient: bool,
    pub diagnoses: Vec<DiagnosisEvent>,
    pub prescriptions: Vec<PrescriptionEvent>,
}

impl PatientRecord {
    /// Age in completed years at the reference year.
    pub fn age_at(&self, reference_year: u16) -> Result<u16> {
        if reference_year < self.birth_year {
            return Err(Error::Data(format!(
                "patient {}: reference year {reference_year} before birth year {}",
                self.id, self.birth_year
            )));
        }
        Ok(reference_year - self.birth_year)
    }

    /// Whether any diagnosis event carries `code` (in any year).
    pub fn has_diagnosis(&self, code: DiagnosisCode) -> bool {
        self.diagnoses.iter().any(|e| e.code == code)
    }

    pub fn has_diagnosis_in(&self, code: DiagnosisCode, year: u16) -> bool {
        self.diagnoses.iter().any(|e| e.code == code && e.year == year)
    }

    pub fn has_prescription_prefix(&self, prefix: &str) -> bool {
        self.prescriptions.iter().any(|e| e.code.starts_with(prefix))
    }

    /// Number of distinct three-character diagnosis codes.
    pub fn distinct_diagnosis_count(&self) -> usize {
        // events are sorted by (code, year) inside a Dataset
        let mut n = 0;
        let mut last = None;
        for e in &self.diagnoses {
            if last != Some(e.code) {
                n += 1;
                last = Some(e.code);
            }
        }
        n
    }

    /// Number of distinct full ATC codes.
    pub fn distinct_prescription_count(&self) -> usize {
        let mut n = 0;
        let mut last: Option<&AtcCode> = None;
        for e in &self.prescriptions {
            if last != Some(&e.code) {
                n += 1;
                last = Some(&e.code);
            }
        }
        n
    }
}

/// Number of five-year age groups tiling [0, 110).
pub const AGE_GROUP_COUNT: usize = 22;

/// A five-year age interval `[lower, lower+5)`. The groups tile `[0, 110)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgeGroup(u8);

impl AgeGroup {
    pub fn from_index(idx: usize) -> Option<AgeGroup> {
        (idx < AGE_GROUP_COUNT).then_some(AgeGroup(idx as u8))
    }

    /// The unique group containing `age`. Ages at or beyond the top of the
    /// range clamp into the last group; callers wanting to warn on clamping
    /// check [`AgeGroup::clamps`] first.
    pub fn of_age(age: u16) -> AgeGroup {
        AgeGroup((age / 5).min(AGE_GROUP_COUNT as u16 - 1) as u8)
    }

    pub fn clamps(age: u16) -> bool {
        age as usize >= AGE_GROUP_COUNT * 5
    }

    pub fn index(&self) -> usize {
        self.0 as usize
    }

    pub fn lower(&self) -> u16 {
        self.0 as u16 * 5
    }

    pub fn upper(&self) -> u16 {
        self.lower() + 5
    }

    pub fn contains(&self, age: u16) -> bool {
        (self.lower()..self.upper()).contains(&age)
    }

    pub fn all() -> impl Iterator<Item = AgeGroup> {
        (0..AGE_GROUP_COUNT).map(|i| AgeGroup(i as u8))
    }
}

impl fmt::Display for AgeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lower(), self.upper())
    }
}

impl FromStr for AgeGroup {
    type Err = Error;

    /// Parses the `"60-65"` label form.
    fn from_str(s: &str) -> Result<Self> {
        let (lo, hi) = s
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("bad age group {s:?}")))?;
        let lo: u16 = lo
            .parse()
            .map_err(|_| Error::Config(format!("bad age group {s:?}")))?;
        let hi: u16 = hi
            .parse()
            .map_err(|_| Error::Config(format!("bad age group {s:?}")))?;
        if lo % 5 != 0 || hi != lo + 5 || lo as usize >= AGE_GROUP_COUNT * 5 {
            return Err(Error::Config(format!("bad age group {s:?}")));
        }
        Ok(AgeGroup((lo / 5) as u8))
    }
}

/// Statistics from canonicalizing a set of records into a [`Dataset`].
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct AssembleStats {
    /// Duplicate (code, year) diagnosis pairs collapsed per the
    /// presence-based counting rule.
    pub duplicate_diagnoses_collapsed: u64,
    pub duplicate_prescriptions_collapsed: u64,
}

/// An immutable, canonicalized claims dataset.
///
/// Canonical form: patients sorted by id, events sorted by (code, year) with
/// duplicates collapsed. Two datasets with the same content are equal
/// regardless of input row order. The carrier index maps each diagnosis code
/// to the sorted patient indices carrying it, which the scan and lead/lag
/// drivers rely on.
pub struct Dataset {
    window: YearRange,
    patients: Vec<PatientRecord>,
    carriers: BTreeMap<DiagnosisCode, Vec<u32>>,
}

impl Dataset {
    /// Canonicalize `records` into a dataset. Validates id uniqueness and
    /// birth-year/age invariants; events must already lie within `window`.
    pub fn assemble(
        window: YearRange,
        mut records: Vec<PatientRecord>,
    ) -> Result<(Dataset, AssembleStats)> {
        let mut stats = AssembleStats::default();

        records.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in records.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::Data(format!("duplicate patient id {:?}", pair[0].id)));
            }
        }

        for rec in &mut records {
            if rec.birth_year > window.start {
                return Err(Error::Data(format!(
                    "patient {}: birth year {} after window start {}",
                    rec.id, rec.birth_year, window.start
                )));
            }
            let age = window.start - rec.birth_year;
            if age > 120 {
                return Err(Error::Data(format!(
                    "patient {}: age {age} out of range",
                    rec.id
                )));
            }
            for ev in &rec.diagnoses {
                if !window.contains(ev.year) {
                    return Err(Error::Data(format!(
                        "patient {}: diagnosis {} in year {} outside window",
                        rec.id, ev.code, ev.year
                    )));
                }
            }
            let before = rec.diagnoses.len();
            rec.diagnoses.sort_unstable();
            rec.diagnoses.dedup();
            stats.duplicate_diagnoses_collapsed += (before - rec.diagnoses.len()) as u64;

            let before = rec.prescriptions.len();
            rec.prescriptions.sort_unstable();
            rec.prescriptions.dedup();
            stats.duplicate_prescriptions_collapsed += (before - rec.prescriptions.len()) as u64;
        }

        let mut carriers: BTreeMap<DiagnosisCode, Vec<u32>> = BTreeMap::new();
        for (idx, rec) in records.iter().enumerate() {
            let mut last = None;
            for ev in &rec.diagnoses {
                if last != Some(ev.code) {
                    carriers.entry(ev.code).or_default().push(idx as u32);
                    last = Some(ev.code);
                }
            }
        }

        Ok((
            Dataset {
                window,
                patients: records,
                carriers,
            },
            stats,
        ))
    }

    /// Rebuild a dataset from surrogate-shuffled records of an existing one.
    ///
    /// Permuting years can make a (code, year) pair repeat within a patient;
    /// collapsing those would change the per-patient year multiset, so this
    /// path skips deduplication. Records must keep the original patient
    /// order and have events sorted by (code, year).
    pub(crate) fn from_shuffled(window: YearRange, records: Vec<PatientRecord>) -> Dataset {
        let mut carriers: BTreeMap<DiagnosisCode, Vec<u32>> = BTreeMap::new();
        for (idx, rec) in records.iter().enumerate() {
            debug_assert!(rec.diagnoses.windows(2).all(|w| w[0] <= w[1]));
            let mut last = None;
            for ev in &rec.diagnoses {
                if last != Some(ev.code) {
                    carriers.entry(ev.code).or_default().push(idx as u32);
                    last = Some(ev.code);
                }
            }
        }
        Dataset {
            window,
            patients: records,
            carriers,
        }
    }

    pub fn window(&self) -> YearRange {
        self.window
    }

    pub fn patients(&self) -> &[PatientRecord] {
        &self.patients
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    /// All distinct diagnosis codes present, in lexicographic order.
    pub fn diagnosis_codes(&self) -> impl Iterator<Item = DiagnosisCode> + '_ {
        self.carriers.keys().copied()
    }

    /// Sorted indices of the patients carrying `code`.
    pub fn carriers(&self, code: DiagnosisCode) -> &[u32] {
        self.carriers.get(&code).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Order-stable content hash over the canonical form.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.update_u64(self.window.start as u64);
        h.update_u64(self.window.end as u64);
        h.update_u64(self.patients.len() as u64);
        for p in &self.patients {
            h.update(p.id.as_bytes());
            h.update(&[
                0,
                p.sex.as_char() as u8,
                p.died_in_window as u8,
                p.inpatient as u8,
            ]);
            h.update_u64(p.birth_year as u64);
            for e in &p.diagnoses {
                h.update(&[e.code.chapter as u8, e.code.number]);
                h.update_u64(e.year as u64);
            }
            h.update(&[1]);
            for e in &p.prescriptions {
                h.update(e.code.as_str().as_bytes());
                h.update_u64(e.year as u64);
            }
            h.update(&[2]);
        }
        h.finish()
    }
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.window == other.window && self.patients == other.patients
    }
}

impl fmt::Debug for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dataset")
            .field("window", &self.window)
            .field("patients", &self.patients.len())
            .field("codes", &self.carriers.len())
            .finish()
    }
}
