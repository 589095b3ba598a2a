//! Parcel and tract-demographic ingest.
//!
//! Inputs are delimited UTF-8 text with a header row. Column names are
//! resolved through a [`ParcelSchema`] / [`TractSchema`], so any assessment
//! roll layout can be mapped without code changes. Rows that fail field
//! validation are collected as [`Reject`]s in input order; they never abort
//! the parse.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entity::OwnerClass;
use crate::race::{RaceCategory, RaceMap};

/// Shares within this distance of one are rescaled to sum to one.
pub const SHARE_SUM_TOLERANCE: f64 = 0.005;

/// Default minimum number of parcels for a tract to be analyzed.
pub const DEFAULT_MIN_PROPERTIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeoIdError {
    #[error("GEOID {0:?} must be exactly 11 digits")]
    WrongLength(String),
    #[error("GEOID {0:?} contains non-digit characters")]
    NonDigit(String),
    #[error("GEOID {0:?} has a zero state code")]
    ZeroState(String),
}

/// An 11-digit census tract identifier: state (2) + county (3) + tract (6).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GeoId(String);

impl GeoId {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn state(&self) -> &str {
        &self.0[..2]
    }

    pub fn county(&self) -> &str {
        &self.0[2..5]
    }

    pub fn tract(&self) -> &str {
        &self.0[5..]
    }
}

impl fmt::Display for GeoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for GeoId {
    type Error = GeoIdError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        validate_geoid(&s)
    }
}

impl From<GeoId> for String {
    fn from(g: GeoId) -> String {
        g.0
    }
}

impl std::str::FromStr for GeoId {
    type Err = GeoIdError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        validate_geoid(s)
    }
}

/// Parses a GEOID, stripping surrounding whitespace.
pub fn validate_geoid(raw: &str) -> Result<GeoId, GeoIdError> {
    let s = raw.trim();
    if s.chars().count() != 11 {
        return Err(GeoIdError::WrongLength(s.to_string()));
    }
    if !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(GeoIdError::NonDigit(s.to_string()));
    }
    if &s[..2] == "00" {
        return Err(GeoIdError::ZeroState(s.to_string()));
    }
    Ok(GeoId(s.to_string()))
}

/// One property record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParcelRecord {
    pub parcel_id: String,
    pub geoid: GeoId,
    /// Assessed value in USD.
    pub assessed_value: f64,
    pub owner_name_raw: String,
    pub owner_type: Option<OwnerClass>,
}

/// Resident population composition of one tract.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TractDemographics {
    pub geoid: GeoId,
    pub total_population: u64,
    pub pop_share: RaceMap<f64>,
    pub median_income: Option<f64>,
    pub census_urban: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParcelSchema {
    pub delimiter: char,
    pub parcel_id: String,
    pub geoid: String,
    pub assessed_value: String,
    pub owner_name: String,
    /// Optional pre-coded owner type column (1-4 or class names).
    pub owner_type: Option<String>,
}

impl Default for ParcelSchema {
    fn default() -> Self {
        ParcelSchema {
            delimiter: ',',
            parcel_id: "parcel_id".into(),
            geoid: "geoid".into(),
            assessed_value: "assessed_value".into(),
            owner_name: "owner_name".into(),
            owner_type: Some("owner_type".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TractSchema {
    pub delimiter: char,
    pub geoid: String,
    pub total_population: String,
    pub share_white: String,
    pub share_black: String,
    pub share_hispanic: String,
    pub share_asian: String,
    /// When the column is absent from the file, Other is the remainder
    /// `max(0, 1 - sum of the four listed shares)`.
    pub share_other: String,
    pub median_income: String,
    pub census_urban: String,
}

impl Default for TractSchema {
    fn default() -> Self {
        TractSchema {
            delimiter: ',',
            geoid: "geoid".into(),
            total_population: "total_pop".into(),
            share_white: "share_white".into(),
            share_black: "share_black".into(),
            share_hispanic: "share_hispanic".into(),
            share_asian: "share_asian".into(),
            share_other: "share_other".into(),
            median_income: "median_income".into(),
            census_urban: "census_urban".into(),
        }
    }
}

/// Column mappings for both input files, loadable from a TOML file with
/// optional `[parcels]` and `[tracts]` tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaConfig {
    pub parcels: ParcelSchema,
    pub tracts: TractSchema,
}

impl SchemaConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing required column {0:?}")]
    MissingColumn(String),
    #[error("delimiter {0:?} is not a single-byte character")]
    BadDelimiter(char),
    #[error("input has no header row")]
    NoHeader,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Why a row was not accepted.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RejectReason {
    #[error("MalformedGeoId: {0}")]
    MalformedGeoId(GeoIdError),
    #[error("NegativeValue: {0}")]
    NegativeValue(String),
    #[error("InvalidNumber: {column} = {value:?}")]
    InvalidNumber { column: String, value: String },
    #[error("EmptyField: {0}")]
    EmptyField(String),
    #[error("InvalidOwnerType: {0:?}")]
    InvalidOwnerType(String),
    #[error("InvalidFlag: {column} = {value:?}")]
    InvalidFlag { column: String, value: String },
    #[error("ShareOutOfRange: {column} = {value}")]
    ShareOutOfRange { column: String, value: f64 },
    #[error("ShareSumOutOfRange: shares sum to {0:.6}")]
    ShareSumOutOfRange(f64),
    #[error("FieldCount: expected at least {expected} fields, found {found}")]
    FieldCount { expected: usize, found: usize },
    #[error("InvalidUtf8")]
    InvalidUtf8,
    #[error("DuplicateParcel: {0}")]
    DuplicateParcel(String),
    #[error("DuplicateTract: {0}")]
    DuplicateTract(GeoId),
    #[error("UnknownTract: {0}")]
    UnknownTract(GeoId),
    #[error("InvalidDistribution: {0}")]
    InvalidDistribution(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reject {
    /// Physical line of the row in its source file (the header is line 1).
    pub row_number: u64,
    pub reason: RejectReason,
    pub raw_line: String,
}

/// Accepted records plus the rejected rows, both in input order.
#[derive(Debug, Clone)]
pub struct ParseOutcome<T> {
    pub records: Vec<T>,
    /// Source line of each accepted record, parallel to `records`.
    pub accepted_rows: Vec<u64>,
    pub rejects: Vec<Reject>,
}

impl<T> ParseOutcome<T> {
    fn new() -> Self {
        ParseOutcome {
            records: Vec::new(),
            accepted_rows: Vec::new(),
            rejects: Vec::new(),
        }
    }

    pub fn input_rows(&self) -> usize {
        self.records.len() + self.rejects.len()
    }
}

pub(crate) fn delimiter_byte(c: char) -> Result<u8, IngestError> {
    if c.is_ascii() {
        Ok(c as u8)
    } else {
        Err(IngestError::BadDelimiter(c))
    }
}

/// Case-insensitive header lookup.
pub(crate) struct Header {
    index: HashMap<String, usize>,
}

impl Header {
    pub(crate) fn new(record: &csv::ByteRecord) -> Self {
        let index = record
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let name = String::from_utf8_lossy(f)
                    .trim()
                    .trim_start_matches('\u{feff}')
                    .to_ascii_lowercase();
                (name, i)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .rev() // first occurrence wins
            .collect();
        Header { index }
    }

    pub(crate) fn find(&self, name: &str) -> Option<usize> {
        self.index.get(&name.trim().to_ascii_lowercase()).copied()
    }

    pub(crate) fn require(&self, name: &str) -> Result<usize, IngestError> {
        self.find(name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    }
}

/// Iterates a delimited stream as (line, fields) rows. Rows with invalid
/// UTF-8 yield `Err(reject)`.
pub(crate) struct RowReader<R: Read> {
    reader: csv::Reader<R>,
    delimiter: u8,
    pub(crate) header: Header,
}

pub(crate) enum Row {
    Fields { line: u64, fields: Vec<String> },
    Bad(Reject),
}

impl<R: Read> RowReader<R> {
    pub(crate) fn new(stream: R, delimiter: char) -> Result<Self, IngestError> {
        let delimiter = delimiter_byte(delimiter)?;
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(false)
            .flexible(true)
            .from_reader(stream);
        let mut first = csv::ByteRecord::new();
        if !reader.read_byte_record(&mut first)? {
            return Err(IngestError::NoHeader);
        }
        Ok(RowReader {
            reader,
            delimiter,
            header: Header::new(&first),
        })
    }

    pub(crate) fn next_row(&mut self) -> Result<Option<Row>, IngestError> {
        let mut rec = csv::ByteRecord::new();
        if !self.reader.read_byte_record(&mut rec)? {
            return Ok(None);
        }
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let mut fields = Vec::with_capacity(rec.len());
        for f in rec.iter() {
            match std::str::from_utf8(f) {
                Ok(s) => fields.push(s.to_string()),
                Err(_) => {
                    let raw = join_lossy(&rec, self.delimiter);
                    return Ok(Some(Row::Bad(Reject {
                        row_number: line,
                        reason: RejectReason::InvalidUtf8,
                        raw_line: raw,
                    })));
                }
            }
        }
        Ok(Some(Row::Fields { line, fields }))
    }
}

fn join_lossy(rec: &csv::ByteRecord, delimiter: u8) -> String {
    let parts: Vec<String> = rec.iter().map(|f| String::from_utf8_lossy(f).into_owned()).collect();
    join_fields(&parts, delimiter)
}

/// Re-encodes fields as one delimited line, quoting where needed.
pub(crate) fn join_fields(fields: &[String], delimiter: u8) -> String {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    // Writing to a Vec cannot fail.
    w.write_record(fields).expect("in-memory write");
    let mut bytes = w.into_inner().expect("in-memory flush");
    if bytes.last() == Some(&b'\n') {
        bytes.pop();
    }
    String::from_utf8(bytes).expect("fields were utf-8")
}

pub(crate) fn parse_number(column: &str, raw: &str) -> Result<f64, RejectReason> {
    let t = raw.trim();
    if t.is_empty() {
        return Err(RejectReason::EmptyField(column.to_string()));
    }
    let cleaned: String = t.chars().filter(|c| *c != ',' && *c != '$' && *c != ' ').collect();
    match cleaned.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(RejectReason::InvalidNumber {
            column: column.to_string(),
            value: raw.to_string(),
        }),
    }
}

fn parse_flag(column: &str, raw: &str) -> Result<bool, RejectReason> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "t" | "yes" | "y" | "urban" | "u" => Ok(true),
        "0" | "false" | "f" | "no" | "n" | "rural" | "r" => Ok(false),
        _ => Err(RejectReason::InvalidFlag {
            column: column.to_string(),
            value: raw.to_string(),
        }),
    }
}

fn field(fields: &[String], idx: usize) -> &str {
    fields.get(idx).map(String::as_str).unwrap_or("")
}

/// Parses parcel records. Duplicate parcel ids after the first occurrence
/// are rejected.
pub fn parse_parcels<R: Read>(stream: R, schema: &ParcelSchema) -> Result<ParseOutcome<ParcelRecord>, IngestError> {
    let mut rows = RowReader::new(stream, schema.delimiter)?;
    let id_col = rows.header.require(&schema.parcel_id)?;
    let geo_col = rows.header.require(&schema.geoid)?;
    let value_col = rows.header.require(&schema.assessed_value)?;
    let name_col = rows.header.require(&schema.owner_name)?;
    let type_col = schema.owner_type.as_deref().and_then(|c| rows.header.find(c));
    let needed = [id_col, geo_col, value_col, name_col].into_iter().max().unwrap_or(0) + 1;
    let delimiter = delimiter_byte(schema.delimiter)?;

    let mut out = ParseOutcome::new();
    let mut seen: HashSet<String> = HashSet::new();
    while let Some(row) = rows.next_row()? {
        let (line, fields) = match row {
            Row::Bad(rej) => {
                out.rejects.push(rej);
                continue;
            }
            Row::Fields { line, fields } => (line, fields),
        };
        let parsed = (|| -> Result<ParcelRecord, RejectReason> {
            if fields.len() < needed {
                return Err(RejectReason::FieldCount {
                    expected: needed,
                    found: fields.len(),
                });
            }
            let parcel_id = field(&fields, id_col).trim().to_string();
            if parcel_id.is_empty() {
                return Err(RejectReason::EmptyField(schema.parcel_id.clone()));
            }
            let geoid = validate_geoid(field(&fields, geo_col)).map_err(RejectReason::MalformedGeoId)?;
            let raw_value = field(&fields, value_col);
            let assessed_value = parse_number(&schema.assessed_value, raw_value)?;
            if assessed_value < 0.0 {
                return Err(RejectReason::NegativeValue(raw_value.trim().to_string()));
            }
            let owner_name_raw = field(&fields, name_col).trim().to_string();
            if owner_name_raw.is_empty() {
                return Err(RejectReason::EmptyField(schema.owner_name.clone()));
            }
            let owner_type = match type_col.map(|c| field(&fields, c).trim()) {
                None | Some("") => None,
                Some(code) => Some(
                    code.parse::<OwnerClass>()
                        .map_err(|_| RejectReason::InvalidOwnerType(code.to_string()))?,
                ),
            };
            if seen.contains(&parcel_id) {
                return Err(RejectReason::DuplicateParcel(parcel_id));
            }
            Ok(ParcelRecord {
                parcel_id,
                geoid,
                assessed_value,
                owner_name_raw,
                owner_type,
            })
        })();
        match parsed {
            Ok(rec) => {
                seen.insert(rec.parcel_id.clone());
                out.records.push(rec);
                out.accepted_rows.push(line);
            }
            Err(reason) => out.rejects.push(Reject {
                row_number: line,
                reason,
                raw_line: join_fields(&fields, delimiter),
            }),
        }
    }
    Ok(out)
}

/// Parses tract demographics. Share vectors within
/// [`SHARE_SUM_TOLERANCE`] of one are rescaled to unit sum; others are
/// rejected. Duplicate GEOIDs after the first are rejected.
pub fn parse_demographics<R: Read>(
    stream: R,
    schema: &TractSchema,
) -> Result<ParseOutcome<TractDemographics>, IngestError> {
    let mut rows = RowReader::new(stream, schema.delimiter)?;
    let geo_col = rows.header.require(&schema.geoid)?;
    let pop_col = rows.header.require(&schema.total_population)?;
    let share_names = [
        &schema.share_white,
        &schema.share_black,
        &schema.share_hispanic,
        &schema.share_asian,
    ];
    let mut share_cols = [0usize; 4];
    for (slot, name) in share_cols.iter_mut().zip(share_names) {
        *slot = rows.header.require(name)?;
    }
    let other_col = rows.header.find(&schema.share_other);
    let income_col = rows.header.find(&schema.median_income);
    let urban_col = rows.header.require(&schema.census_urban)?;
    let needed = [geo_col, pop_col, urban_col]
        .into_iter()
        .chain(share_cols)
        .max()
        .unwrap_or(0)
        + 1;
    let delimiter = delimiter_byte(schema.delimiter)?;

    let mut out = ParseOutcome::new();
    let mut seen: HashSet<GeoId> = HashSet::new();
    while let Some(row) = rows.next_row()? {
        let (line, fields) = match row {
            Row::Bad(rej) => {
                out.rejects.push(rej);
                continue;
            }
            Row::Fields { line, fields } => (line, fields),
        };
        let parsed = (|| -> Result<TractDemographics, RejectReason> {
            if fields.len() < needed {
                return Err(RejectReason::FieldCount {
                    expected: needed,
                    found: fields.len(),
                });
            }
            let geoid = validate_geoid(field(&fields, geo_col)).map_err(RejectReason::MalformedGeoId)?;
            let pop_raw = field(&fields, pop_col);
            let pop = parse_number(&schema.total_population, pop_raw)?;
            if pop < 0.0 {
                return Err(RejectReason::NegativeValue(pop_raw.trim().to_string()));
            }
            if pop.fract() != 0.0 {
                return Err(RejectReason::InvalidNumber {
                    column: schema.total_population.clone(),
                    value: pop_raw.to_string(),
                });
            }
            let mut shares = [0.0f64; 5];
            for (i, (&col, name)) in share_cols.iter().zip(share_names).enumerate() {
                shares[i] = parse_share(name, field(&fields, col))?;
            }
            let listed: f64 = shares[..4].iter().sum();
            let other_raw = other_col.map(|c| field(&fields, c).trim()).unwrap_or("");
            shares[4] = if other_raw.is_empty() {
                (1.0 - listed).max(0.0)
            } else {
                parse_share(&schema.share_other, other_raw)?
            };
            let total: f64 = shares.iter().sum();
            if pop > 0.0 {
                if (total - 1.0).abs() > SHARE_SUM_TOLERANCE {
                    return Err(RejectReason::ShareSumOutOfRange(total));
                }
                if total != 1.0 {
                    shares = shares.map(|s| s / total);
                }
            }
            let median_income = match income_col.map(|c| field(&fields, c).trim()) {
                None | Some("") => None,
                Some(raw) => {
                    let v = parse_number(&schema.median_income, raw)?;
                    if v < 0.0 {
                        return Err(RejectReason::NegativeValue(raw.to_string()));
                    }
                    Some(v)
                }
            };
            let census_urban = parse_flag(&schema.census_urban, field(&fields, urban_col))?;
            if seen.contains(&geoid) {
                return Err(RejectReason::DuplicateTract(geoid));
            }
            Ok(TractDemographics {
                geoid,
                total_population: pop as u64,
                pop_share: RaceMap(shares),
                median_income,
                census_urban,
            })
        })();
        match parsed {
            Ok(rec) => {
                seen.insert(rec.geoid.clone());
                out.records.push(rec);
                out.accepted_rows.push(line);
            }
            Err(reason) => out.rejects.push(Reject {
                row_number: line,
                reason,
                raw_line: join_fields(&fields, delimiter),
            }),
        }
    }
    Ok(out)
}

fn parse_share(column: &str, raw: &str) -> Result<f64, RejectReason> {
    let v = parse_number(column, raw)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(RejectReason::ShareOutOfRange {
            column: column.to_string(),
            value: v,
        });
    }
    Ok(v)
}

/// Parcels joined to their tract table. Immutable once built.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    parcels: Vec<ParcelRecord>,
    tracts: BTreeMap<GeoId, TractDemographics>,
}

/// Result of [`Dataset::assemble`]: parcels whose tract is unknown are
/// quarantined rather than dropped.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub dataset: Dataset,
    /// Indices into the input parcel list.
    pub quarantined: Vec<usize>,
}

impl Dataset {
    /// Joins parcels to tracts. The first entry wins for duplicate GEOIDs.
    pub fn assemble(parcels: Vec<ParcelRecord>, tracts: Vec<TractDemographics>) -> Assembled {
        let mut table = BTreeMap::new();
        for t in tracts {
            table.entry(t.geoid.clone()).or_insert(t);
        }
        let mut kept = Vec::with_capacity(parcels.len());
        let mut quarantined = Vec::new();
        for (i, p) in parcels.into_iter().enumerate() {
            if table.contains_key(&p.geoid) {
                kept.push(p);
            } else {
                quarantined.push(i);
            }
        }
        Assembled {
            dataset: Dataset {
                parcels: kept,
                tracts: table,
            },
            quarantined,
        }
    }

    pub fn parcels(&self) -> &[ParcelRecord] {
        &self.parcels
    }

    pub fn tracts(&self) -> &BTreeMap<GeoId, TractDemographics> {
        &self.tracts
    }

    pub fn tract(&self, geoid: &GeoId) -> Option<&TractDemographics> {
        self.tracts.get(geoid)
    }

    /// Returns a copy with every parcel's owner type replaced by `f`.
    pub fn with_owner_types(&self, mut f: impl FnMut(&ParcelRecord) -> OwnerClass) -> Dataset {
        let parcels = self
            .parcels
            .iter()
            .map(|p| ParcelRecord {
                owner_type: Some(f(p)),
                ..p.clone()
            })
            .collect();
        Dataset {
            parcels,
            tracts: self.tracts.clone(),
        }
    }

    /// Parcels grouped by tract, in GEOID order; parcel order within a tract
    /// follows input order.
    pub fn parcels_by_tract(&self) -> BTreeMap<&GeoId, Vec<&ParcelRecord>> {
        let mut groups: BTreeMap<&GeoId, Vec<&ParcelRecord>> = BTreeMap::new();
        for p in &self.parcels {
            groups.entry(&p.geoid).or_default().push(p);
        }
        groups
    }

    pub fn is_empty(&self) -> bool {
        self.parcels.is_empty() && self.tracts.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Filtered {
    pub dataset: Dataset,
    /// Tracts dropped for having fewer than the minimum number of parcels
    /// (including tracts with no parcels at all).
    pub excluded: Vec<GeoId>,
}

/// Keeps tracts with at least `min_properties` parcels. A tract with
/// exactly `min_properties` parcels is kept.
pub fn filter_small_tracts(ds: &Dataset, min_properties: usize) -> Filtered {
    let mut counts: HashMap<&GeoId, usize> = HashMap::new();
    for p in &ds.parcels {
        *counts.entry(&p.geoid).or_default() += 1;
    }
    let keep: BTreeSet<&GeoId> = ds
        .tracts
        .keys()
        .filter(|g| counts.get(g).copied().unwrap_or(0) >= min_properties)
        .collect();
    let excluded = ds.tracts.keys().filter(|g| !keep.contains(g)).cloned().collect();
    let parcels = ds.parcels.iter().filter(|p| keep.contains(&p.geoid)).cloned().collect();
    let tracts = ds
        .tracts
        .iter()
        .filter(|(g, _)| keep.contains(g))
        .map(|(g, t)| (g.clone(), t.clone()))
        .collect();
    Filtered {
        dataset: Dataset { parcels, tracts },
        excluded,
    }
}

/// Writes parcels in the canonical column layout.
pub fn write_parcels<W: Write>(w: W, parcels: &[ParcelRecord]) -> Result<(), IngestError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["parcel_id", "geoid", "assessed_value", "owner_name", "owner_type"])?;
    for p in parcels {
        let code = p.owner_type.map(|c| c.code().to_string()).unwrap_or_default();
        out.write_record([
            p.parcel_id.as_str(),
            p.geoid.as_str(),
            &p.assessed_value.to_string(),
            &p.owner_name_raw,
            &code,
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes tract demographics in the canonical column layout.
pub fn write_demographics<W: Write>(w: W, tracts: &[&TractDemographics]) -> Result<(), IngestError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["geoid".to_string(), "total_pop".to_string()];
    header.extend(RaceCategory::ALL.iter().map(|r| format!("share_{}", r.key())));
    header.push("median_income".into());
    header.push("census_urban".into());
    out.write_record(&header)?;
    for t in tracts {
        let mut row = vec![t.geoid.to_string(), t.total_population.to_string()];
        row.extend(t.pop_share.0.iter().map(|s| s.to_string()));
        row.push(t.median_income.map(|v| v.to_string()).unwrap_or_default());
        row.push(if t.census_urban { "1" } else { "0" }.to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `row_number,reason,raw_line`.
pub fn write_rejects<W: Write>(w: W, rejects: &[Reject]) -> Result<(), IngestError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["row_number", "reason", "raw_line"])?;
    for r in rejects {
        out.write_record([r.row_number.to_string(), r.reason.to_string(), r.raw_line.clone()])?;
    }
    out.flush()?;
    Ok(())
}
