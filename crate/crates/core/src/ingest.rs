//! Survey CSV ingestion: filtering, recoding, merge and holdout split.
//!
//! Answers are matched case-insensitively, first against the schema's own
//! level names and then against the questionnaire wording (for example
//! `"18-25"` becomes `18-30`, `"Agro-town / Village"` becomes `rural`).
//! Columns are located through a [`ColumnMap`], so renamed exports only need
//! a mapping file.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::Seed;
use crate::schema::{CategoricalSchema, CellIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Source {
    Viber,
    Street,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Viber => "viber",
            Source::Street => "street",
        }
    }
}

impl std::str::FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "viber" => Ok(Source::Viber),
            "street" => Ok(Source::Street),
            other => Err(Error::Unknown {
                kind: "source",
                name: other.to_string(),
            }),
        }
    }
}

/// The six ballot options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Candidate {
    Dmitriyeu,
    Kanapatskaya,
    Lukashenka,
    Tsikhanouskaya,
    Cherachen,
    AgainstAll,
}

impl Candidate {
    pub const ALL: [Candidate; 6] = [
        Candidate::Dmitriyeu,
        Candidate::Kanapatskaya,
        Candidate::Lukashenka,
        Candidate::Tsikhanouskaya,
        Candidate::Cherachen,
        Candidate::AgainstAll,
    ];

    pub fn answer(self) -> &'static str {
        match self {
            Candidate::Dmitriyeu => "Dmitriyeu",
            Candidate::Kanapatskaya => "Kanapatskaya",
            Candidate::Lukashenka => "Lukashenka",
            Candidate::Tsikhanouskaya => "Tsikhanouskaya",
            Candidate::Cherachen => "Cherachen",
            Candidate::AgainstAll => "Against all",
        }
    }
}

/// Answer to the candidate question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Choice {
    Candidate(Candidate),
    Undecided,
    NotVoting,
    Missing,
}

impl Choice {
    fn parse(raw: &str) -> Option<Choice> {
        let v = raw.trim().to_ascii_lowercase();
        if v.is_empty() {
            return Some(Choice::Missing);
        }
        for c in Candidate::ALL {
            if v == c.answer().to_ascii_lowercase() || v == format!("{c:?}").to_ascii_lowercase() {
                return Some(Choice::Candidate(c));
            }
        }
        match v.as_str() {
            "difficult to answer" | "undecided" => Some(Choice::Undecided),
            "i will not go to vote" | "not voting" => Some(Choice::NotVoting),
            _ => None,
        }
    }

    pub fn answer(self) -> &'static str {
        match self {
            Choice::Candidate(c) => c.answer(),
            Choice::Undecided => "Difficult to answer",
            Choice::NotVoting => "I will not go to vote",
            Choice::Missing => "",
        }
    }
}

/// Answer to the "when do you plan to vote" question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VotingPlan {
    Early,
    MainDay,
    NotVoting,
    Missing,
}

impl VotingPlan {
    fn parse(raw: &str) -> Option<VotingPlan> {
        let v = raw.trim().to_ascii_lowercase();
        if v.is_empty() {
            Some(VotingPlan::Missing)
        } else if v.starts_with("early") {
            Some(VotingPlan::Early)
        } else if v.starts_with("on the main voting day") || v == "main day" {
            Some(VotingPlan::MainDay)
        } else if v == "i will not go to vote" || v == "not voting" {
            Some(VotingPlan::NotVoting)
        } else {
            None
        }
    }

    pub fn answer(self) -> &'static str {
        match self {
            VotingPlan::Early => "Early (from 4 to 8 of August)",
            VotingPlan::MainDay => "On the main voting day (August 9)",
            VotingPlan::NotVoting => "I will not go to vote",
            VotingPlan::Missing => "",
        }
    }
}

/// One of the seven modeled binary events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Event {
    Lukashenka,
    Tsikhanouskaya,
    Dmitriyeu,
    Cherachen,
    Kanapatskaya,
    AgainstAll,
    EarlyVoting,
}

impl Event {
    pub const ALL: [Event; 7] = [
        Event::Lukashenka,
        Event::Tsikhanouskaya,
        Event::Dmitriyeu,
        Event::Cherachen,
        Event::Kanapatskaya,
        Event::AgainstAll,
        Event::EarlyVoting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Event::Lukashenka => "Lukashenka",
            Event::Tsikhanouskaya => "Tsikhanouskaya",
            Event::Dmitriyeu => "Dmitriyeu",
            Event::Cherachen => "Cherachen",
            Event::Kanapatskaya => "Kanapatskaya",
            Event::AgainstAll => "AgainstAll",
            Event::EarlyVoting => "EarlyVoting",
        }
    }

    /// Row label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Event::AgainstAll => "Against all",
            Event::EarlyVoting => "Early voting",
            other => other.name(),
        }
    }

    pub fn candidate(self) -> Option<Candidate> {
        match self {
            Event::Lukashenka => Some(Candidate::Lukashenka),
            Event::Tsikhanouskaya => Some(Candidate::Tsikhanouskaya),
            Event::Dmitriyeu => Some(Candidate::Dmitriyeu),
            Event::Cherachen => Some(Candidate::Cherachen),
            Event::Kanapatskaya => Some(Candidate::Kanapatskaya),
            Event::AgainstAll => Some(Candidate::AgainstAll),
            Event::EarlyVoting => None,
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Event {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Event::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Unknown {
                kind: "event",
                name: s.to_string(),
            })
    }
}

/// Why a row was dropped. Rules are checked in declaration order and the
/// first match wins, so every rejected row lands in exactly one bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RejectRule {
    NonCitizen,
    LivesAbroad,
    ForeignPhone,
    Underage,
    PostCutoff,
    LegacyAgeBand,
    MissingCovariate,
    UnrecognizedAnswer,
}

impl RejectRule {
    pub const ALL: [RejectRule; 8] = [
        RejectRule::NonCitizen,
        RejectRule::LivesAbroad,
        RejectRule::ForeignPhone,
        RejectRule::Underage,
        RejectRule::PostCutoff,
        RejectRule::LegacyAgeBand,
        RejectRule::MissingCovariate,
        RejectRule::UnrecognizedAnswer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RejectRule::NonCitizen => "non_citizen",
            RejectRule::LivesAbroad => "lives_abroad",
            RejectRule::ForeignPhone => "foreign_phone",
            RejectRule::Underage => "underage",
            RejectRule::PostCutoff => "post_cutoff",
            RejectRule::LegacyAgeBand => "legacy_age_band",
            RejectRule::MissingCovariate => "missing_covariate",
            RejectRule::UnrecognizedAnswer => "unrecognized_answer",
        }
    }
}

/// One cleaned respondent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SurveyRecord {
    /// Level index per schema factor.
    pub levels: Vec<usize>,
    pub cell: CellIndex,
    pub choice: Choice,
    pub plan: VotingPlan,
    pub source: Source,
    /// Columns carried through untouched (income band, media channels).
    pub extras: BTreeMap<String, String>,
}

/// Row counts by outcome for one input file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RejectionReport {
    pub input_rows: usize,
    pub kept: usize,
    pub rejected: BTreeMap<RejectRule, usize>,
}

impl RejectionReport {
    pub fn total_rejected(&self) -> usize {
        self.rejected.values().sum()
    }

    pub fn merge(&mut self, other: &RejectionReport) {
        self.input_rows += other.input_rows;
        self.kept += other.kept;
        for (k, v) in &other.rejected {
            *self.rejected.entry(*k).or_default() += v;
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rule", "count"])?;
        w.write_record(["kept", &self.kept.to_string()])?;
        for rule in RejectRule::ALL {
            let n = self.rejected.get(&rule).copied().unwrap_or(0);
            w.write_record([rule.name(), &n.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<rejections>", e))?;
        Ok(())
    }
}

/// Role name to CSV header. Roles are the schema factor names plus
/// `citizen`, `candidate`, `early_vote`, `phone`, `joined_at` and any
/// extra columns to carry (`income`, `media`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    columns: BTreeMap<String, String>,
}

const RESPONSE_ROLES: [&str; 4] = ["citizen", "candidate", "early_vote", "joined_at"];
const EXTRA_ROLES: [&str; 2] = ["income", "media"];

impl ColumnMap {
    /// Identity mapping: every role reads the column of the same name.
    pub fn identity(schema: &CategoricalSchema) -> Self {
        let columns = schema
            .factors
            .iter()
            .map(|f| f.name.as_str())
            .chain(RESPONSE_ROLES)
            .chain(["phone"])
            .chain(EXTRA_ROLES)
            .map(|r| (r.to_string(), r.to_string()))
            .collect();
        ColumnMap { columns }
    }

    /// Parses `role = header` lines on top of the identity mapping.
    pub fn parse_str(schema: &CategoricalSchema, text: &str, origin: &str) -> Result<Self> {
        let mut map = Self::identity(schema);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (role, header) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected `role = column header`"))?;
            let role = role.trim();
            if !map.columns.contains_key(role) {
                return Err(Error::parse(origin, i + 1, format!("unknown role `{role}`")));
            }
            map.columns.insert(role.to_string(), header.trim().to_string());
        }
        Ok(map)
    }

    pub fn load(schema: &CategoricalSchema, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(schema, &text, &path.display().to_string())
    }

    pub fn header<'a>(&'a self, role: &'a str) -> &'a str {
        self.columns.get(role).map(String::as_str).unwrap_or(role)
    }
}

/// Filtering knobs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestOptions {
    /// Rows whose `joined_at` is strictly later than this are dropped.
    pub cutoff: DateTime<Utc>,
    /// Accepted phone country code.
    pub country_code: String,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            cutoff: Utc.with_ymd_and_hms(2020, 8, 6, 19, 12, 0).single().expect("valid cutoff"),
            country_code: "375".into(),
        }
    }
}

enum Recode {
    Level(usize),
    Reject(RejectRule),
    Unknown,
}

const ABROAD: &str = "i live outside the republic of belarus";

fn recode(factor: &crate::schema::Factor, raw: &str) -> Recode {
    let v = raw.trim().to_ascii_lowercase();
    if v.is_empty() {
        return Recode::Reject(RejectRule::MissingCovariate);
    }
    if v == ABROAD {
        return Recode::Reject(RejectRule::LivesAbroad);
    }
    if let Some(i) = factor.levels.iter().position(|l| l.to_ascii_lowercase() == v) {
        return Recode::Level(i);
    }
    let target = match (factor.name.as_str(), v.as_str()) {
        ("age", "under 18") => return Recode::Reject(RejectRule::Underage),
        ("age", "26-40" | "41-55" | "55-70" | "56-70") => return Recode::Reject(RejectRule::LegacyAgeBand),
        ("age", "18-25") => "18-30",
        ("age", "more than 60" | "more than 70") => "60+",
        ("area", "agro-town / village") => "rural",
        ("area", "regional center / minsk" | "city or urban village") => "urban",
        ("education", "primary or secondary school") => "secondary",
        ("education", "professional technical institution") => "technical",
        ("education", "professional college") => "college",
        ("education", "higher education") => "higher",
        ("education", "other (elementary school or uneducated)") => "elementary",
        ("region", other) => match other.strip_suffix(" region") {
            Some(stem) => return lookup(factor, stem),
            None => return Recode::Unknown,
        },
        _ => return Recode::Unknown,
    };
    lookup(factor, target)
}

fn lookup(factor: &crate::schema::Factor, level: &str) -> Recode {
    factor
        .levels
        .iter()
        .position(|l| l.eq_ignore_ascii_case(level))
        .map_or(Recode::Unknown, Recode::Level)
}

/// Questionnaire wording for a schema level (inverse of the recode table).
pub fn questionnaire_answer(factor: &crate::schema::Factor, level: usize) -> String {
    let name = factor.levels[level].as_str();
    let s = match (factor.name.as_str(), name) {
        ("age", "60+") => "More than 60",
        ("area", "rural") => "Agro-town / Village",
        ("area", "urban") => "City or urban village",
        ("education", "secondary") => "Primary or secondary school",
        ("education", "technical") => "Professional technical institution",
        ("education", "college") => "Professional college",
        ("education", "higher") => "Higher education",
        ("education", "elementary") => "Other (Elementary school or uneducated)",
        ("gender", "male") => "Male",
        ("gender", "female") => "Female",
        ("region", "Minsk city") => "Minsk city",
        ("region", r) => return format!("{r} region"),
        _ => name,
    };
    s.to_string()
}

fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let raw = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(t.with_timezone(&Utc));
    }
    ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
        .map(|n| n.and_utc())
}

struct Columns {
    factors: Vec<usize>,
    citizen: Option<usize>,
    candidate: Option<usize>,
    early_vote: Option<usize>,
    phone: Option<usize>,
    joined_at: Option<usize>,
    extras: Vec<(String, usize)>,
}

fn locate(header: &csv::StringRecord, schema: &CategoricalSchema, map: &ColumnMap, origin: &str) -> Result<Columns> {
    let find = |role: &str| header.iter().position(|h| h == map.header(role));
    let factors = schema
        .factors
        .iter()
        .map(|f| {
            find(&f.name).ok_or_else(|| Error::Unknown {
                kind: "column",
                name: format!("{} (role `{}` in {origin})", map.header(&f.name), f.name),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let candidate = find("candidate");
    if candidate.is_none() && find("early_vote").is_none() {
        return Err(Error::Unknown {
            kind: "column",
            name: format!("{} (role `candidate` in {origin})", map.header("candidate")),
        });
    }
    Ok(Columns {
        factors,
        citizen: find("citizen"),
        candidate,
        early_vote: find("early_vote"),
        phone: find("phone"),
        joined_at: find("joined_at"),
        extras: EXTRA_ROLES
            .iter()
            .filter_map(|r| find(r).map(|i| (r.to_string(), i)))
            .collect(),
    })
}

/// Parses and filters one survey file.
pub fn parse_survey_csv(
    path: impl AsRef<Path>,
    source: Source,
    schema: &CategoricalSchema,
    map: &ColumnMap,
    opts: &IngestOptions,
) -> Result<(Vec<SurveyRecord>, RejectionReport)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_survey(file, source, schema, map, opts, &path.display().to_string())
}

/// Reader-based form of [`parse_survey_csv`].
pub fn read_survey<R: Read>(
    reader: R,
    source: Source,
    schema: &CategoricalSchema,
    map: &ColumnMap,
    opts: &IngestOptions,
    origin: &str,
) -> Result<(Vec<SurveyRecord>, RejectionReport)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let header = rdr.headers()?.clone();
    let cols = locate(&header, schema, map, origin)?;
    let mut records = Vec::new();
    let mut report = RejectionReport::default();
    for row in rdr.records() {
        let row = row?;
        report.input_rows += 1;
        match classify(&row, &cols, schema, source, opts) {
            Ok(rec) => {
                report.kept += 1;
                records.push(rec);
            }
            Err(rule) => *report.rejected.entry(rule).or_default() += 1,
        }
    }
    Ok((records, report))
}

fn classify(
    row: &csv::StringRecord,
    cols: &Columns,
    schema: &CategoricalSchema,
    source: Source,
    opts: &IngestOptions,
) -> std::result::Result<SurveyRecord, RejectRule> {
    let get = |i: Option<usize>| i.and_then(|i| row.get(i)).unwrap_or("");
    if get(cols.citizen).trim().eq_ignore_ascii_case("no") {
        return Err(RejectRule::NonCitizen);
    }
    let mut pending: Option<RejectRule> = None;
    let mut levels = Vec::with_capacity(schema.factors.len());
    for (f, &col) in schema.factors.iter().zip(&cols.factors) {
        match recode(f, row.get(col).unwrap_or("")) {
            Recode::Level(l) => levels.push(l),
            Recode::Reject(RejectRule::LivesAbroad) => return Err(RejectRule::LivesAbroad),
            Recode::Reject(rule) => {
                pending = Some(pending.map_or(rule, |p| p.min(rule)));
                levels.push(0);
            }
            Recode::Unknown => {
                pending = Some(pending.map_or(RejectRule::UnrecognizedAnswer, |p| p.min(RejectRule::UnrecognizedAnswer)));
                levels.push(0);
            }
        }
    }
    let phone: String = get(cols.phone).chars().filter(char::is_ascii_digit).collect();
    if !phone.is_empty() && !phone.starts_with(&opts.country_code) {
        return Err(RejectRule::ForeignPhone);
    }
    if pending == Some(RejectRule::Underage) {
        return Err(RejectRule::Underage);
    }
    let joined = get(cols.joined_at);
    if !joined.trim().is_empty() {
        match parse_timestamp(joined) {
            Some(t) if t > opts.cutoff => return Err(RejectRule::PostCutoff),
            Some(_) => {}
            None => return Err(RejectRule::UnrecognizedAnswer),
        }
    }
    if let Some(rule) = pending {
        return Err(rule);
    }
    let choice = Choice::parse(get(cols.candidate)).ok_or(RejectRule::UnrecognizedAnswer)?;
    let plan = VotingPlan::parse(get(cols.early_vote)).ok_or(RejectRule::UnrecognizedAnswer)?;
    let cell = schema.cell_id(&levels).map_err(|_| RejectRule::UnrecognizedAnswer)?;
    let extras = cols
        .extras
        .iter()
        .map(|(role, i)| (role.clone(), row.get(*i).unwrap_or("").to_string()))
        .collect();
    Ok(SurveyRecord {
        levels,
        cell,
        choice,
        plan,
        source,
        extras,
    })
}

/// Writes records in questionnaire wording using the identity column names,
/// so the output reads back through [`read_survey`] unchanged.
pub fn write_survey<W: Write>(writer: W, schema: &CategoricalSchema, records: &[SurveyRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = vec!["citizen"];
    header.extend(schema.factors.iter().map(|f| f.name.as_str()));
    header.extend(["candidate", "early_vote"]);
    w.write_record(&header)?;
    for r in records {
        let mut row = vec!["Yes".to_string()];
        row.extend(schema.factors.iter().zip(&r.levels).map(|(f, &l)| questionnaire_answer(f, l)));
        row.push(r.choice.answer().to_string());
        row.push(r.plan.answer().to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<survey>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Holdout,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub records: Vec<SurveyRecord>,
    pub role: Role,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Splits viber rows 50/50 (odd extra row to train) and upsamples street rows
/// with replacement to half the viber count.
pub fn merge_and_split(viber: &[SurveyRecord], street: &[SurveyRecord], seed: Seed) -> Result<(Dataset, Dataset)> {
    if viber.is_empty() {
        return Err(Error::EmptyInput("viber sample is empty".into()));
    }
    if street.is_empty() {
        return Err(Error::EmptyInput("street sample is empty".into()));
    }
    let mut rng = seed.rng();
    let mut order: Vec<usize> = (0..viber.len()).collect();
    order.shuffle(&mut rng);
    let n_train = viber.len().div_ceil(2);
    let n_street = viber.len() / 2;
    let mut train: Vec<SurveyRecord> = order[..n_train].iter().map(|&i| viber[i].clone()).collect();
    train.extend((0..n_street).map(|_| street[rng.random_range(0..street.len())].clone()));
    let holdout = order[n_train..].iter().map(|&i| viber[i].clone()).collect();
    Ok((
        Dataset {
            records: train,
            role: Role::Train,
        },
        Dataset {
            records: holdout,
            role: Role::Holdout,
        },
    ))
}

/// Which rows enter each event's response vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InclusionRule {
    /// Every event uses the rows that named one of the six ballot options.
    #[default]
    SharedRows,
    /// Candidate events as above; early voting keeps any row that answered
    /// the voting-plan question.
    EarlyKeepsAll,
}

impl std::str::FromStr for InclusionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "shared" | "shared_rows" => Ok(InclusionRule::SharedRows),
            "early_keeps_all" => Ok(InclusionRule::EarlyKeepsAll),
            other => Err(Error::Unknown {
                kind: "inclusion rule",
                name: other.to_string(),
            }),
        }
    }
}

/// Binary response for one event over the retained rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    /// Indices into the dataset's records.
    pub rows: Vec<usize>,
    pub y: Vec<u8>,
}

impl Response {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn cells<'a>(&'a self, records: &'a [SurveyRecord]) -> impl Iterator<Item = CellIndex> + 'a {
        self.rows.iter().map(move |&i| records[i].cell)
    }
}

pub fn response_vector(records: &[SurveyRecord], event: Event, rule: InclusionRule) -> Response {
    let decided = |r: &SurveyRecord| matches!(r.choice, Choice::Candidate(_));
    let keep = |r: &SurveyRecord| match (event, rule) {
        (Event::EarlyVoting, InclusionRule::EarlyKeepsAll) => r.plan != VotingPlan::Missing,
        _ => decided(r),
    };
    let mut out = Response {
        rows: Vec::new(),
        y: Vec::new(),
    };
    for (i, r) in records.iter().enumerate().filter(|(_, r)| keep(r)) {
        let y = match event.candidate() {
            Some(c) => r.choice == Choice::Candidate(c),
            None => r.plan == VotingPlan::Early,
        };
        out.rows.push(i);
        out.y.push(y as u8);
    }
    out
}

/// Three-way preference used by the latent class model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Preference {
    Lukashenka,
    Tsikhanouskaya,
    Neither,
}

impl Preference {
    pub const LEVELS: [&'static str; 3] = ["Lukashenka", "Tsikhanouskaya", "neither"];

    pub fn of(choice: Choice) -> Self {
        match choice {
            Choice::Candidate(Candidate::Lukashenka) => Preference::Lukashenka,
            Choice::Candidate(Candidate::Tsikhanouskaya) => Preference::Tsikhanouskaya,
            _ => Preference::Neither,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}
