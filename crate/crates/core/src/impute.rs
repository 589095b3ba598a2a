//! Owner race/ethnicity imputation.
//!
//! The built-in classifier combines a surname-conditional prior with the
//! tract's population composition by Bayes' rule:
//!
//! ```text
//! P(r | surname, tract) ∝ P(r | surname) · P(r | tract) / P(r)
//! ```
//!
//! Predictions from any external model can be loaded instead, as long as
//! they follow the same five-category contract.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::entity::{parse_surname, NameConvention, OwnerClass};
use crate::ingest::{
    delimiter_byte, join_fields, parse_number, Dataset, GeoId, IngestError, Reject, RejectReason, Row, RowReader,
    TractDemographics,
};
use crate::race::{normalize, RaceCategory, RaceDistribution};

/// Every prior entry is raised to at least this value before the Bayes
/// product, then the vector is renormalized.
pub const PRIOR_FLOOR: f64 = 1e-6;

/// Row key of the national prior in a surname prior file.
pub const NATIONAL_KEY: &str = "_NATIONAL_";

/// Accepted distance from one for probability rows read from files.
pub const FILE_SUM_TOLERANCE: f64 = 1e-6;

const PROB_COLUMNS: [&str; 5] = ["p_white", "p_black", "p_hispanic", "p_asian", "p_other"];

#[derive(Debug, Error)]
pub enum ImputeError {
    #[error("no surname prior for {surname:?} and no tract prior for {geoid}")]
    BothPriorsMissing { surname: String, geoid: GeoId },
    #[error("no prediction for individual-owned parcel {0}")]
    MissingPrediction(String),
    #[error("parcel {0} has no owner type; classify entities first")]
    Unclassified(String),
    #[error("surname prior file has no {NATIONAL_KEY} row")]
    MissingNationalPrior,
    #[error("national prior must be strictly positive in every category")]
    NonPositiveNational,
    #[error("surname prior file line {line}: {reason}")]
    PriorRow { line: u64, reason: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

impl From<csv::Error> for ImputeError {
    fn from(e: csv::Error) -> Self {
        ImputeError::Ingest(e.into())
    }
}

/// P(race | surname) for known surnames plus the national P(race).
#[derive(Debug, Clone)]
pub struct SurnamePriorTable {
    by_surname: HashMap<String, RaceDistribution>,
    national: RaceDistribution,
}

impl SurnamePriorTable {
    pub fn new(
        national: RaceDistribution,
        entries: impl IntoIterator<Item = (String, RaceDistribution)>,
    ) -> Result<Self, ImputeError> {
        if national.probs().iter().any(|&p| p <= 0.0) {
            return Err(ImputeError::NonPositiveNational);
        }
        let by_surname = entries.into_iter().map(|(s, d)| (s.trim().to_uppercase(), d)).collect();
        Ok(SurnamePriorTable { by_surname, national })
    }

    pub fn get(&self, surname: &str) -> Option<&RaceDistribution> {
        self.by_surname.get(surname)
    }

    pub fn national(&self) -> &RaceDistribution {
        &self.national
    }

    pub fn len(&self) -> usize {
        self.by_surname.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_surname.is_empty()
    }

    /// Reads `surname,p_white,p_black,p_hispanic,p_asian,p_other` with one
    /// row keyed `_NATIONAL_`. Malformed rows are fatal: the table is
    /// reference data, not observations.
    pub fn load<R: Read>(stream: R) -> Result<Self, ImputeError> {
        let mut rows = RowReader::new(stream, ',')?;
        let name_col = rows.header.require("surname")?;
        let cols = prob_columns(&rows)?;
        let mut national = None;
        let mut entries = Vec::new();
        while let Some(row) = rows.next_row()? {
            let (line, fields) = match row {
                Row::Bad(r) => {
                    return Err(ImputeError::PriorRow {
                        line: r.row_number,
                        reason: r.reason.to_string(),
                    })
                }
                Row::Fields { line, fields } => (line, fields),
            };
            let name = fields
                .get(name_col)
                .map(|s| s.trim().to_uppercase())
                .unwrap_or_default();
            if name.is_empty() {
                return Err(ImputeError::PriorRow {
                    line,
                    reason: "empty surname".into(),
                });
            }
            let dist = parse_distribution(&fields, &cols).map_err(|reason| ImputeError::PriorRow {
                line,
                reason: reason.to_string(),
            })?;
            if name == NATIONAL_KEY {
                national = Some(dist);
            } else {
                entries.push((name, dist));
            }
        }
        let national = national.ok_or(ImputeError::MissingNationalPrior)?;
        SurnamePriorTable::new(national, entries)
    }

    /// Writes the table in the format read by [`SurnamePriorTable::load`],
    /// surnames sorted, national row first.
    pub fn write<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["surname"];
        header.extend(PROB_COLUMNS);
        out.write_record(&header)?;
        let mut write_row = |name: &str, d: &RaceDistribution| {
            let mut row = vec![name.to_string()];
            row.extend(d.probs().iter().map(|p| format!("{p:.6}")));
            out.write_record(&row)
        };
        write_row(NATIONAL_KEY, &self.national)?;
        let mut names: Vec<_> = self.by_surname.keys().collect();
        names.sort();
        for n in names {
            write_row(n, &self.by_surname[n])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// P(race | tract) from resident population shares.
#[derive(Debug, Clone, Default)]
pub struct GeoPriorTable {
    by_tract: BTreeMap<GeoId, RaceDistribution>,
}

impl GeoPriorTable {
    /// Tracts with no population (or shares that are not a distribution)
    /// are left out and fall back to the surname prior.
    pub fn from_demographics<'a>(tracts: impl IntoIterator<Item = &'a TractDemographics>) -> Self {
        let by_tract = tracts
            .into_iter()
            .filter(|t| t.total_population > 0)
            .filter_map(|t| {
                RaceDistribution::normalized_within(t.pop_share.0, FILE_SUM_TOLERANCE)
                    .ok()
                    .map(|d| (t.geoid.clone(), d))
            })
            .collect();
        GeoPriorTable { by_tract }
    }

    pub fn insert(&mut self, geoid: GeoId, d: RaceDistribution) {
        self.by_tract.insert(geoid, d);
    }

    pub fn get(&self, geoid: &GeoId) -> Option<&RaceDistribution> {
        self.by_tract.get(geoid)
    }
}

/// Which evidence produced a posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PosteriorSource {
    /// Surname and tract priors combined.
    Bayes,
    /// Tract unknown or uninformative.
    SurnameOnly,
    /// Surname unknown or uninformative.
    GeoOnly,
    /// Neither prior available; national prior used.
    National,
    /// Loaded from an external prediction file.
    External,
}

impl PosteriorSource {
    pub fn label(self) -> &'static str {
        match self {
            PosteriorSource::Bayes => "bayes",
            PosteriorSource::SurnameOnly => "surname",
            PosteriorSource::GeoOnly => "geo",
            PosteriorSource::National => "national",
            PosteriorSource::External => "external",
        }
    }
}

/// Raises entries below `floor` and renormalizes. A vector already at or
/// above the floor is returned unchanged.
fn floored(d: &RaceDistribution, floor: f64) -> [f64; 5] {
    let p = *d.probs();
    if p.iter().all(|&x| x >= floor) {
        p
    } else {
        normalize(p.map(|x| x.max(floor)))
    }
}

fn as_distribution(p: [f64; 5]) -> RaceDistribution {
    // Floored, normalized inputs always form a distribution; valid ones are
    // kept bit-for-bit.
    RaceDistribution::new(p)
        .or_else(|_| RaceDistribution::from_weights(p))
        .expect("valid probability vector")
}

/// Posterior with the default floor. See [`bisg_posterior_with_floor`].
pub fn bisg_posterior(
    surname: &str,
    geoid: &GeoId,
    priors: &SurnamePriorTable,
    geo: &GeoPriorTable,
) -> Result<RaceDistribution, ImputeError> {
    bisg_posterior_with_floor(surname, geoid, priors, geo, PRIOR_FLOOR).map(|(d, _)| d)
}

/// Surname × tract posterior.
///
/// An unknown surname gives the tract prior; an unknown tract gives the
/// surname prior. A prior identical to the national prior carries no
/// evidence and is treated the same way as a missing one. Both missing is
/// an error; see [`posterior_or_national`] for the fallback policy.
pub fn bisg_posterior_with_floor(
    surname: &str,
    geoid: &GeoId,
    priors: &SurnamePriorTable,
    geo: &GeoPriorTable,
    floor: f64,
) -> Result<(RaceDistribution, PosteriorSource), ImputeError> {
    let national = priors.national();
    let s = priors.get(surname).filter(|s| *s != national);
    let g = geo.get(geoid).filter(|g| *g != national);
    match (s, g) {
        (Some(s), Some(g)) => {
            let s = floored(s, floor);
            let g = floored(g, floor);
            let n = floored(national, floor);
            let w: [f64; 5] = std::array::from_fn(|i| s[i] * g[i] / n[i]);
            match RaceDistribution::from_weights(w) {
                Ok(d) => Ok((d, PosteriorSource::Bayes)),
                // Only reachable with floor = 0 and disjoint supports.
                Err(_) => Ok((as_distribution(s), PosteriorSource::SurnameOnly)),
            }
        }
        (Some(s), None) => Ok((as_distribution(floored(s, floor)), PosteriorSource::SurnameOnly)),
        (None, Some(g)) => Ok((as_distribution(floored(g, floor)), PosteriorSource::GeoOnly)),
        (None, None) => {
            let known_surname = priors.get(surname).is_some();
            let known_tract = geo.get(geoid).is_some();
            if known_surname || known_tract {
                // Present but equal to the national prior.
                Ok((*national, PosteriorSource::National))
            } else {
                Err(ImputeError::BothPriorsMissing {
                    surname: surname.to_string(),
                    geoid: geoid.clone(),
                })
            }
        }
    }
}

/// Falls back to the national prior when neither prior is known; the
/// returned source says which case applied.
pub fn posterior_or_national(
    surname: &str,
    geoid: &GeoId,
    priors: &SurnamePriorTable,
    geo: &GeoPriorTable,
    floor: f64,
) -> (RaceDistribution, PosteriorSource) {
    match bisg_posterior_with_floor(surname, geoid, priors, geo, floor) {
        Ok(r) => r,
        Err(_) => (*priors.national(), PosteriorSource::National),
    }
}

/// Most probable category; ties go to the earlier category in canonical
/// order (White first).
pub fn argmax_race(d: &RaceDistribution) -> RaceCategory {
    d.argmax()
}

fn prob_columns<R: Read>(rows: &RowReader<R>) -> Result<[usize; 5], IngestError> {
    let mut cols = [0usize; 5];
    for (slot, name) in cols.iter_mut().zip(PROB_COLUMNS) {
        *slot = rows.header.require(name)?;
    }
    Ok(cols)
}

fn parse_distribution(fields: &[String], cols: &[usize; 5]) -> Result<RaceDistribution, RejectReason> {
    let mut p = [0.0; 5];
    for (i, (&c, name)) in cols.iter().zip(PROB_COLUMNS).enumerate() {
        p[i] = parse_number(name, fields.get(c).map(String::as_str).unwrap_or(""))?;
    }
    RaceDistribution::normalized_within(p, FILE_SUM_TOLERANCE)
        .map_err(|e| RejectReason::InvalidDistribution(e.to_string()))
}

/// Externally produced per-parcel predictions.
#[derive(Debug, Clone, Default)]
pub struct PredictionFile {
    pub predictions: BTreeMap<String, RaceDistribution>,
    pub rejects: Vec<Reject>,
}

/// Reads `parcel_id,p_white,p_black,p_hispanic,p_asian,p_other`.
///
/// A parcel id appearing on more than one row is ambiguous, so every one
/// of its rows is rejected.
pub fn load_predictions<R: Read>(stream: R) -> Result<PredictionFile, ImputeError> {
    let mut rows = RowReader::new(stream, ',')?;
    let id_col = rows.header.require("parcel_id")?;
    let cols = prob_columns(&rows)?;
    let delimiter = delimiter_byte(',')?;

    let mut parsed: Vec<Result<(String, RaceDistribution, u64, String), Reject>> = Vec::new();
    let mut id_count: HashMap<String, usize> = HashMap::new();
    while let Some(row) = rows.next_row()? {
        let (line, fields) = match row {
            Row::Bad(r) => {
                parsed.push(Err(r));
                continue;
            }
            Row::Fields { line, fields } => (line, fields),
        };
        let raw_line = join_fields(&fields, delimiter);
        let id = fields.get(id_col).map(|s| s.trim().to_string()).unwrap_or_default();
        let result = if id.is_empty() {
            Err(RejectReason::EmptyField("parcel_id".into()))
        } else {
            *id_count.entry(id.clone()).or_default() += 1;
            parse_distribution(&fields, &cols)
        };
        parsed.push(match result {
            Ok(d) => Ok((id, d, line, raw_line)),
            Err(reason) => Err(Reject {
                row_number: line,
                reason,
                raw_line,
            }),
        });
    }

    let mut out = PredictionFile::default();
    for item in parsed {
        match item {
            Ok((id, d, line, raw_line)) => {
                if id_count[&id] > 1 {
                    out.rejects.push(Reject {
                        row_number: line,
                        reason: RejectReason::DuplicateParcel(id),
                        raw_line,
                    });
                } else {
                    out.predictions.insert(id, d);
                }
            }
            Err(r) => out.rejects.push(r),
        }
    }
    Ok(out)
}

/// Writes predictions in the format read by [`load_predictions`].
pub fn write_predictions<'a, W: Write>(
    w: W,
    predictions: impl IntoIterator<Item = (&'a str, &'a RaceDistribution)>,
) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["parcel_id"];
    header.extend(PROB_COLUMNS);
    out.write_record(&header)?;
    for (id, d) in predictions {
        let mut row = vec![id.to_string()];
        row.extend(d.probs().iter().map(|p| p.to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Where race predictions come from.
#[derive(Debug, Clone, Copy)]
pub enum ImputationSource<'a> {
    Bisg {
        priors: &'a SurnamePriorTable,
        convention: NameConvention,
        floor: f64,
    },
    External(&'a BTreeMap<String, RaceDistribution>),
}

/// Per-parcel result. Non-individual owners never receive a race.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Imputation {
    NonIndividual,
    Race {
        distribution: RaceDistribution,
        race: RaceCategory,
        source: PosteriorSource,
    },
}

impl Imputation {
    pub fn race(&self) -> Option<RaceCategory> {
        match self {
            Imputation::Race { race, .. } => Some(*race),
            Imputation::NonIndividual => None,
        }
    }

    fn from_distribution(distribution: RaceDistribution, source: PosteriorSource) -> Self {
        Imputation::Race {
            race: argmax_race(&distribution),
            distribution,
            source,
        }
    }
}

/// Imputes every parcel of a classified dataset, keyed by parcel id.
pub fn impute_dataset(ds: &Dataset, source: ImputationSource<'_>) -> Result<BTreeMap<String, Imputation>, ImputeError> {
    let geo = match source {
        ImputationSource::Bisg { .. } => GeoPriorTable::from_demographics(ds.tracts().values()),
        ImputationSource::External(_) => GeoPriorTable::default(),
    };
    let results: Vec<Result<(String, Imputation), ImputeError>> = ds
        .parcels()
        .par_iter()
        .map(|p| {
            let class = p
                .owner_type
                .ok_or_else(|| ImputeError::Unclassified(p.parcel_id.clone()))?;
            if class != OwnerClass::Individual {
                return Ok((p.parcel_id.clone(), Imputation::NonIndividual));
            }
            let imp = match source {
                ImputationSource::Bisg {
                    priors,
                    convention,
                    floor,
                } => {
                    // An unparseable name is an unknown surname.
                    let surname = parse_surname(&p.owner_name_raw, convention)
                        .map(|s| s.surname)
                        .unwrap_or_default();
                    let (d, src) = posterior_or_national(&surname, &p.geoid, priors, &geo, floor);
                    Imputation::from_distribution(d, src)
                }
                ImputationSource::External(map) => {
                    let d = map
                        .get(&p.parcel_id)
                        .ok_or_else(|| ImputeError::MissingPrediction(p.parcel_id.clone()))?;
                    Imputation::from_distribution(*d, PosteriorSource::External)
                }
            };
            Ok((p.parcel_id.clone(), imp))
        })
        .collect();
    // Sequential merge so the reported error is the first in input order.
    results.into_iter().collect()
}

/// Writes one row per parcel: id, tract, owner type, assigned race (or
/// `NonIndividual`), the five probabilities and the evidence source.
pub fn write_imputations<W: Write>(
    w: W,
    ds: &Dataset,
    imputations: &BTreeMap<String, Imputation>,
) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["parcel_id", "geoid", "owner_type", "race"];
    header.extend(PROB_COLUMNS);
    header.push("source");
    out.write_record(&header)?;
    for p in ds.parcels() {
        let code = p.owner_type.map(|c| c.code().to_string()).unwrap_or_default();
        let mut row = vec![p.parcel_id.clone(), p.geoid.to_string(), code];
        match imputations.get(&p.parcel_id) {
            Some(Imputation::Race {
                distribution,
                race,
                source,
            }) => {
                row.push(race.to_string());
                row.extend(distribution.probs().iter().map(|x| format!("{x:.6}")));
                row.push(source.label().to_string());
            }
            Some(Imputation::NonIndividual) => {
                row.push("NonIndividual".into());
                row.extend(std::iter::repeat_n(String::new(), 6));
            }
            None => {
                row.extend(std::iter::repeat_n(String::new(), 7));
            }
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
