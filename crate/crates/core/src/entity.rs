//! Owner-name classification and surname extraction.
//!
//! Classification is an ordered keyword match over a normalized token
//! stream: Government, then TrustEstateOther, then Corporate; a name that
//! matches nothing is an Individual.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Dataset, ParcelRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OwnerClass {
    Individual = 1,
    Corporate = 2,
    Government = 3,
    TrustEstateOther = 4,
}

impl OwnerClass {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn is_individual(self) -> bool {
        self == OwnerClass::Individual
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(OwnerClass::Individual),
            2 => Some(OwnerClass::Corporate),
            3 => Some(OwnerClass::Government),
            4 => Some(OwnerClass::TrustEstateOther),
            _ => None,
        }
    }
}

impl fmt::Display for OwnerClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OwnerClass::Individual => "Individual",
            OwnerClass::Corporate => "Corporate",
            OwnerClass::Government => "Government",
            OwnerClass::TrustEstateOther => "TrustEstateOther",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown owner type {0:?}")]
pub struct UnknownOwnerType(pub String);

impl FromStr for OwnerClass {
    type Err = UnknownOwnerType;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if let Ok(code) = t.parse::<u8>() {
            return OwnerClass::from_code(code).ok_or_else(|| UnknownOwnerType(s.to_string()));
        }
        match t.to_ascii_lowercase().as_str() {
            "individual" => Ok(OwnerClass::Individual),
            "corporate" => Ok(OwnerClass::Corporate),
            "government" => Ok(OwnerClass::Government),
            "trustestateother" | "trust" => Ok(OwnerClass::TrustEstateOther),
            _ => Err(UnknownOwnerType(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EntityError {
    #[error("owner name is empty")]
    EmptyName,
    #[error("{0:?} is not an individual owner")]
    NotAnIndividual(String),
    #[error("no alphabetic surname token in {0:?}")]
    UnparseableName(String),
    #[error("invalid entity rules: {0}")]
    Rules(String),
}

/// Owner-name column layout used for surname extraction when the name has
/// no comma.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum NameConvention {
    /// `LAST FIRST [MIDDLE]`, as on most assessment rolls.
    #[default]
    LastFirst,
    /// `FIRST [MIDDLE] LAST`.
    FirstLast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SurnameConfidence {
    FormatMatched,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SurnameExtraction {
    pub surname: String,
    pub confidence: SurnameConfidence,
}

/// Keyword lists as they appear in an entity rules file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntityRulesFile {
    pub government: Vec<String>,
    pub trust_estate_other: Vec<String>,
    pub corporate: Vec<String>,
}

/// Compiled keyword rules.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityRules {
    government: Vec<Vec<String>>,
    trust_estate_other: Vec<Vec<String>>,
    corporate: Vec<Vec<String>>,
}

const DEFAULT_CORPORATE: &[&str] = &[
    "LLC",
    "L.L.C.",
    "INC",
    "CORP",
    "CO",
    "LTD",
    "LP",
    "LLP",
    "ASSOCIATES",
    "HOLDINGS",
    "PROPERTIES",
    "REALTY",
];
const DEFAULT_GOVERNMENT: &[&str] = &[
    "CITY OF",
    "COUNTY OF",
    "STATE OF",
    "TOWN OF",
    "VILLAGE OF",
    "AUTHORITY",
    "HOUSING AUTH",
];
const DEFAULT_TRUST: &[&str] = &["TRUST", "TRUSTEE", "ESTATE", "CHURCH", "FOUNDATION", "TEMPLE"];

/// Name-suffix tokens that are never surnames.
const GENERATIONAL: &[&str] = &["JR", "SR", "II", "III", "IV", "V", "ESQ", "MD"];

impl Default for EntityRules {
    fn default() -> Self {
        EntityRules::from_lists(&EntityRulesFile {
            government: DEFAULT_GOVERNMENT.iter().map(|s| s.to_string()).collect(),
            trust_estate_other: DEFAULT_TRUST.iter().map(|s| s.to_string()).collect(),
            corporate: DEFAULT_CORPORATE.iter().map(|s| s.to_string()).collect(),
        })
    }
}

impl EntityRules {
    /// Rules with no keywords: every name is an individual.
    pub fn empty() -> Self {
        EntityRules::from_lists(&EntityRulesFile::default())
    }

    pub fn from_lists(lists: &EntityRulesFile) -> Self {
        let compile = |list: &[String]| -> Vec<Vec<String>> {
            list.iter().map(|k| tokens(k)).filter(|t| !t.is_empty()).collect()
        };
        EntityRules {
            government: compile(&lists.government),
            trust_estate_other: compile(&lists.trust_estate_other),
            corporate: compile(&lists.corporate),
        }
    }

    /// Parses a rules file: top-level keys `government`,
    /// `trust_estate_other` and `corporate`, each a list of keywords or
    /// phrases. Missing keys mean an empty list.
    pub fn from_toml(text: &str) -> Result<Self, EntityError> {
        let lists: EntityRulesFile = toml::from_str(text).map_err(|e| EntityError::Rules(e.to_string()))?;
        Ok(EntityRules::from_lists(&lists))
    }

    fn ordered(&self) -> [(OwnerClass, &[Vec<String>]); 3] {
        [
            (OwnerClass::Government, &self.government),
            (OwnerClass::TrustEstateOther, &self.trust_estate_other),
            (OwnerClass::Corporate, &self.corporate),
        ]
    }

    fn matches_any(&self, toks: &[String]) -> Option<OwnerClass> {
        self.ordered()
            .into_iter()
            .find(|(_, phrases)| phrases.iter().any(|p| contains_phrase(toks, p)))
            .map(|(class, _)| class)
    }
}

/// Uppercases and drops periods, so `L.L.C.` and `llc` compare equal.
pub fn normalize_name(raw: &str) -> String {
    raw.chars().filter(|c| *c != '.').flat_map(char::to_uppercase).collect()
}

/// Word tokens of a normalized name. Hyphens and apostrophes stay inside
/// tokens; every other non-alphanumeric character separates.
fn tokens(raw: &str) -> Vec<String> {
    normalize_name(raw)
        .split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '\''))
        .map(|t| t.trim_matches(|c| c == '-' || c == '\''))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn contains_phrase(toks: &[String], phrase: &[String]) -> bool {
    phrase.len() <= toks.len() && toks.windows(phrase.len()).any(|w| w == phrase)
}

pub fn classify_owner(name_raw: &str, rules: &EntityRules) -> Result<OwnerClass, EntityError> {
    if name_raw.trim().is_empty() {
        return Err(EntityError::EmptyName);
    }
    let toks = tokens(name_raw);
    Ok(rules.matches_any(&toks).unwrap_or(OwnerClass::Individual))
}

/// Extracts the surname of an individual owner.
///
/// `LAST, FIRST` yields the part before the comma. Otherwise the token
/// position comes from `convention`. Only the first of several
/// ampersand-joined owners is considered.
pub fn extract_surname(
    name_raw: &str,
    rules: &EntityRules,
    convention: NameConvention,
) -> Result<SurnameExtraction, EntityError> {
    if classify_owner(name_raw, rules)? != OwnerClass::Individual {
        return Err(EntityError::NotAnIndividual(name_raw.to_string()));
    }
    parse_surname(name_raw, convention)
}

/// Surname parsing without the classification check.
pub fn parse_surname(name_raw: &str, convention: NameConvention) -> Result<SurnameExtraction, EntityError> {
    let norm = normalize_name(name_raw);
    let owners: Vec<&str> = norm.split('&').map(str::trim).filter(|s| !s.is_empty()).collect();
    let first = owners.first().copied().unwrap_or("");
    let unparseable = || EntityError::UnparseableName(name_raw.to_string());

    if let Some((last, _)) = first.split_once(',') {
        let parts = surname_tokens(last);
        if parts.is_empty() {
            return Err(unparseable());
        }
        return Ok(SurnameExtraction {
            surname: parts.concat(),
            confidence: SurnameConfidence::FormatMatched,
        });
    }

    let toks = surname_tokens(first);
    let surname = match convention {
        NameConvention::LastFirst => toks.first().cloned(),
        NameConvention::FirstLast => {
            if toks.len() >= 2 {
                toks.last().cloned()
            } else {
                // "JOHN & MARY SMITH": the shared surname closes the last owner.
                owners
                    .last()
                    .and_then(|o| surname_tokens(o).last().cloned())
                    .or_else(|| toks.last().cloned())
            }
        }
    };
    surname
        .map(|surname| SurnameExtraction {
            surname,
            confidence: SurnameConfidence::Heuristic,
        })
        .ok_or_else(unparseable)
}

/// Alphabetic tokens (plus inner hyphens/apostrophes), generational
/// suffixes removed.
fn surname_tokens(segment: &str) -> Vec<String> {
    segment
        .split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '\''))
        .map(|t| t.trim_matches(|c| c == '-' || c == '\''))
        .filter(|t| !t.is_empty())
        .filter(|t| t.chars().all(|c| c.is_alphabetic() || c == '-' || c == '\''))
        .filter(|t| !GENERATIONAL.contains(t))
        .map(str::to_string)
        .collect()
}

/// Assigns an owner type to every parcel lacking one. Pre-coded owner
/// types from the input file are kept.
pub fn classify_dataset(ds: &Dataset, rules: &EntityRules) -> Dataset {
    ds.with_owner_types(|p: &ParcelRecord| {
        p.owner_type.unwrap_or_else(|| {
            // Ingest guarantees nonempty owner names.
            classify_owner(&p.owner_name_raw, rules).unwrap_or(OwnerClass::Individual)
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classify(s: &str) -> OwnerClass {
        classify_owner(s, &EntityRules::default()).unwrap()
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify("ACME HOLDINGS LLC"), OwnerClass::Corporate);
        assert_eq!(classify("SMITH FAMILY TRUST"), OwnerClass::TrustEstateOther);
        assert_eq!(classify("SMITH, JOHN A"), OwnerClass::Individual);
        assert_eq!(classify("Main St. Realty L.L.C."), OwnerClass::Corporate);
        assert_eq!(classify("CITY OF BUFFALO"), OwnerClass::Government);
        assert_eq!(classify("NYC HOUSING AUTH"), OwnerClass::Government);
        assert_eq!(classify("ESTATE OF MARY JONES"), OwnerClass::TrustEstateOther);
        assert_eq!(classify("ROSS & CO"), OwnerClass::Corporate);
        // Substrings inside words do not match.
        assert_eq!(classify("COLLINS, INCA"), OwnerClass::Individual);
        assert_eq!(classify("CORPUZ MARIA"), OwnerClass::Individual);
        assert_eq!(
            classify_owner("  ", &EntityRules::default()),
            Err(EntityError::EmptyName)
        );
    }

    #[test]
    fn precedence_government_then_trust_then_corporate() {
        assert_eq!(classify("CITY OF ALBANY HOLDINGS LLC"), OwnerClass::Government);
        assert_eq!(classify("GRACE CHURCH PROPERTIES INC"), OwnerClass::TrustEstateOther);
    }

    #[test]
    fn empty_rules_make_everyone_individual() {
        let rules = EntityRules::empty();
        assert_eq!(classify_owner("ACME LLC", &rules).unwrap(), OwnerClass::Individual);
        let rules = EntityRules::from_toml("corporate = []\n").unwrap();
        assert_eq!(classify_owner("CITY OF TROY", &rules).unwrap(), OwnerClass::Individual);
    }

    #[test]
    fn rules_file_is_user_extensible() {
        let rules =
            EntityRules::from_toml("government = [\"CITY OF\"]\ncorporate = [\"LLC\", \"PARTNERS\"]\n").unwrap();
        assert_eq!(
            classify_owner("HUDSON PARTNERS", &rules).unwrap(),
            OwnerClass::Corporate
        );
        assert_eq!(
            classify_owner("SMITH FAMILY TRUST", &rules).unwrap(),
            OwnerClass::Individual
        );
        assert!(EntityRules::from_toml("banks = [\"BANK\"]").is_err());
    }

    #[test]
    fn surname_examples() {
        let rules = EntityRules::default();
        let s = extract_surname("SMITH, JOHN A", &rules, NameConvention::LastFirst).unwrap();
        assert_eq!(s.surname, "SMITH");
        assert_eq!(s.confidence, SurnameConfidence::FormatMatched);

        let s = extract_surname("GARCIA-LOPEZ MARIA & JOSE", &rules, NameConvention::LastFirst).unwrap();
        assert_eq!(s.surname, "GARCIA-LOPEZ");
        assert_eq!(s.confidence, SurnameConfidence::Heuristic);

        assert_eq!(
            extract_surname("LLC HOLDINGS ACME", &rules, NameConvention::LastFirst),
            Err(EntityError::NotAnIndividual("LLC HOLDINGS ACME".into()))
        );
    }

    #[test]
    fn surname_edge_cases() {
        let rules = EntityRules::default();
        let get = |s: &str, c| extract_surname(s, &rules, c).map(|e| e.surname);
        assert_eq!(get("o'brien, kate", NameConvention::LastFirst).unwrap(), "O'BRIEN");
        assert_eq!(get("DE LA CRUZ, MARIA", NameConvention::LastFirst).unwrap(), "DELACRUZ");
        assert_eq!(get("SMITH JR, JOHN", NameConvention::LastFirst).unwrap(), "SMITH");
        assert_eq!(get("JOHN Q PUBLIC JR", NameConvention::FirstLast).unwrap(), "PUBLIC");
        assert_eq!(get("JOHN & MARY SMITH", NameConvention::FirstLast).unwrap(), "SMITH");
        assert_eq!(get("123 NGUYEN AN", NameConvention::LastFirst).unwrap(), "NGUYEN");
        assert!(matches!(
            get("12345 & 678", NameConvention::LastFirst),
            Err(EntityError::UnparseableName(_))
        ));
    }

    #[test]
    fn owner_class_codes() {
        assert_eq!("1".parse::<OwnerClass>().unwrap(), OwnerClass::Individual);
        assert_eq!("4".parse::<OwnerClass>().unwrap(), OwnerClass::TrustEstateOther);
        assert_eq!("corporate".parse::<OwnerClass>().unwrap(), OwnerClass::Corporate);
        assert!("5".parse::<OwnerClass>().is_err());
        assert_eq!(OwnerClass::Government.code(), 3);
    }
}
