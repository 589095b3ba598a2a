//! Seeded synthetic parcels, tracts and surname priors with planted ground
//! truth.
//!
//! Each tract gets a resident mix and an owner mix. Owner races are
//! allocated to individual parcels by largest-remainder quotas of the owner
//! mix, then shuffled, so the planted per-tract owner shares are known
//! exactly. Surnames are drawn from race-labelled pools whose priors are
//! concentrated on their own race.

use std::collections::HashSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entity::{classify_owner, EntityRules, OwnerClass};
use crate::impute::{write_predictions, SurnamePriorTable};
use crate::ingest::{
    validate_geoid, write_demographics, write_parcels, GeoId, IngestError, ParcelRecord, TractDemographics,
};
use crate::race::{RaceCategory, RaceDistribution, RaceMap};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_tracts: usize,
    pub parcels_min: usize,
    pub parcels_max: usize,
    pub corporate_share_min: f64,
    pub corporate_share_max: f64,
    /// Probability that a tract is dominated by each group; the last entry
    /// is the chance of a tract with no dominant group.
    pub dominant_weights: [f64; 5],
    /// Share of the dominant group, drawn uniformly from this range.
    pub dominant_share_min: f64,
    pub dominant_share_max: f64,
    /// Floor applied to every group in both resident and owner mixes.
    pub min_group_share: f64,
    /// Multiplicative owner over/under-representation per race, applied to
    /// the resident mix to get the owner mix.
    pub owner_bias: [f64; 5],
    pub surnames_per_race: usize,
    /// Prior mass a pool surname puts on its own race.
    pub surname_own_prob_min: f64,
    pub surname_own_prob_max: f64,
    pub urban_fraction: f64,
    pub population_min: u64,
    pub population_max: u64,
    pub income_min: f64,
    pub income_max: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_tracts: 50,
            parcels_min: 180,
            parcels_max: 220,
            corporate_share_min: 0.0,
            corporate_share_max: 0.4,
            dominant_weights: [0.55, 0.15, 0.12, 0.08, 0.10],
            dominant_share_min: 0.5,
            dominant_share_max: 0.9,
            min_group_share: 0.03,
            owner_bias: [1.6, 0.7, 0.6, 1.0, 0.8],
            surnames_per_race: 40,
            surname_own_prob_min: 0.88,
            surname_own_prob_max: 0.97,
            urban_fraction: 0.7,
            population_min: 1500,
            population_max: 8000,
            income_min: 25_000.0,
            income_max: 150_000.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.n_tracts == 0 || self.n_tracts > 999_999 {
            return bad("n_tracts must be in 1..=999999");
        }
        if self.parcels_min == 0 || self.parcels_min > self.parcels_max || self.parcels_max > 9_999 {
            return bad("need 1 <= parcels_min <= parcels_max <= 9999");
        }
        if !unit(self.corporate_share_min)
            || !unit(self.corporate_share_max)
            || self.corporate_share_min > self.corporate_share_max
        {
            return bad("corporate share range must be an ordered sub-range of [0, 1]");
        }
        if self.dominant_weights.iter().any(|w| w.is_nan() || *w < 0.0)
            || self.dominant_weights.iter().sum::<f64>() <= 0.0
        {
            return bad("dominant_weights must be nonnegative with a positive sum");
        }
        if !unit(self.dominant_share_min)
            || !unit(self.dominant_share_max)
            || self.dominant_share_min > self.dominant_share_max
        {
            return bad("dominant share range must be an ordered sub-range of [0, 1]");
        }
        if !(0.0..0.2).contains(&self.min_group_share) {
            return bad("min_group_share must be in [0, 0.2)");
        }
        if self.owner_bias.iter().any(|b| !b.is_finite() || *b <= 0.0) {
            return bad("owner_bias entries must be positive");
        }
        if self.surnames_per_race == 0 {
            return bad("surnames_per_race must be positive");
        }
        if !(self.surname_own_prob_min > 0.2
            && self.surname_own_prob_min <= self.surname_own_prob_max
            && self.surname_own_prob_max <= 1.0)
        {
            return bad("surname own-race probability range must be ordered within (0.2, 1]");
        }
        if !unit(self.urban_fraction) {
            return bad("urban_fraction must be in [0, 1]");
        }
        if self.population_min == 0 || self.population_min > self.population_max {
            return bad("need 1 <= population_min <= population_max");
        }
        if !(self.income_min >= 0.0 && self.income_min <= self.income_max) {
            return bad("need 0 <= income_min <= income_max");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        toml::from_str(text).map_err(|e| SynthError::InvalidSpec(e.to_string()))
    }
}

/// Truth for one generated tract.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantedTract {
    pub geoid: GeoId,
    pub n_parcels: u64,
    pub n_individual: u64,
    pub n_corporate_like: u64,
    /// Corporate rate parameter drawn for the tract.
    pub corporate_rate: f64,
    /// Owner mix parameter from which the quotas were allocated.
    pub owner_mix: RaceMap<f64>,
    /// Individual owners by true race.
    pub owner_counts: RaceMap<u64>,
}

impl PlantedTract {
    /// Planted share of individual owners; `None` with no individuals.
    pub fn owner_share(&self, r: RaceCategory) -> Option<f64> {
        (self.n_individual > 0).then(|| self.owner_counts[r] as f64 / self.n_individual as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthRecord {
    pub parcel_id: String,
    pub geoid: GeoId,
    pub owner_class: OwnerClass,
    pub true_race: Option<RaceCategory>,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub parcels: Vec<ParcelRecord>,
    pub tracts: Vec<TractDemographics>,
    pub priors: SurnamePriorTable,
    pub truth: Vec<TruthRecord>,
    pub planted: Vec<PlantedTract>,
}

const COUNTIES: [&str; 7] = ["001", "005", "029", "047", "055", "061", "067"];
const SYLLABLES: [&str; 24] = [
    "KA", "LO", "MER", "TAN", "VI", "DOR", "SEL", "BRA", "NU", "QUI", "ZEN", "HAL", "RO", "MIN", "TES", "GAR", "PEL",
    "SU", "WEN", "FAL", "JO", "RIV", "MAS", "DEL",
];
const FIRST_NAMES: [&str; 16] = [
    "JOHN", "MARY", "JOSE", "ANA", "WEI", "LI", "JAMES", "AISHA", "DAVID", "MARIA", "KWAME", "SARAH", "MIGUEL",
    "PRIYA", "ROBERT", "LINDA",
];
const COMPANY_WORDS: [&str; 10] = [
    "ACME", "HUDSON", "EMPIRE", "LIBERTY", "SUMMIT", "HARBOR", "CAPITAL", "MAPLE", "GRANITE", "UNION",
];
const COMPANY_SUFFIXES: [&str; 5] = ["LLC", "INC", "HOLDINGS LLC", "REALTY CORP", "PROPERTIES LP"];
const NATIONAL_PRIOR: [f64; 5] = [0.60, 0.13, 0.18, 0.06, 0.03];

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Floors each entry at `floor` while keeping the vector a distribution.
fn floor_mix(v: [f64; 5], floor: f64) -> [f64; 5] {
    let s: f64 = v.iter().sum();
    let v = v.map(|x| x / s);
    // Mix with uniform mass so the smallest entry reaches the floor.
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    if min >= floor {
        return v;
    }
    let t = (floor - min) / (0.2 - min);
    v.map(|x| (1.0 - t) * x + t * 0.2)
}

/// Largest-remainder allocation of `n` units to shares `p` (ties go to the
/// earlier category).
pub fn apportion(n: u64, p: &[f64; 5]) -> [u64; 5] {
    let s: f64 = p.iter().sum();
    let exact: [f64; 5] = std::array::from_fn(|i| n as f64 * p[i] / s);
    let mut counts: [u64; 5] = exact.map(|e| e.floor() as u64);
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..5).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    for &i in order.iter().take((n - assigned) as usize) {
        counts[i] += 1;
    }
    counts
}

fn dirichlet_ones(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let gamma = Gamma::new(1.0, 1.0).expect("valid gamma");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let s: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / s).collect()
}

fn surname_pools(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> RaceMap<Vec<String>> {
    let rules = EntityRules::default();
    let mut used = HashSet::new();
    RaceMap::from_fn(|_| {
        let mut pool = Vec::with_capacity(spec.surnames_per_race);
        while pool.len() < spec.surnames_per_race {
            let parts = rng.random_range(2..=3);
            let name: String = (0..parts).map(|_| *SYLLABLES.choose(rng).expect("nonempty")).collect();
            if used.contains(&name) || classify_owner(&name, &rules) != Ok(OwnerClass::Individual) {
                continue;
            }
            used.insert(name.clone());
            pool.push(name);
        }
        pool
    })
}

fn surname_prior(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, own: RaceCategory) -> RaceDistribution {
    let p_own = rng.random_range(spec.surname_own_prob_min..=spec.surname_own_prob_max);
    let rest = dirichlet_ones(rng, 4);
    let mut probs = [0.0; 5];
    let mut it = rest.into_iter();
    for r in RaceCategory::ALL {
        probs[r.index()] = if r == own {
            p_own
        } else {
            (1.0 - p_own) * it.next().unwrap_or(0.0)
        };
    }
    // Rounded so the prior file reproduces the table exactly.
    let rounded = probs.map(round6);
    RaceDistribution::from_weights(rounded).expect("positive prior")
}

fn resident_mix(rng: &mut ChaCha8Rng, spec: &SyntheticSpec) -> [f64; 5] {
    let total: f64 = spec.dominant_weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    let mut dominant = 4;
    for (i, w) in spec.dominant_weights.iter().enumerate() {
        if u < *w {
            dominant = i;
            break;
        }
        u -= w;
    }
    let mix: Vec<f64> = if dominant == 4 {
        dirichlet_ones(rng, 5)
    } else {
        let share = rng.random_range(spec.dominant_share_min..=spec.dominant_share_max);
        let rest = dirichlet_ones(rng, 4);
        let mut it = rest.into_iter();
        (0..5)
            .map(|i| {
                if i == dominant {
                    share
                } else {
                    (1.0 - share) * it.next().unwrap_or(0.0)
                }
            })
            .collect()
    };
    floor_mix([mix[0], mix[1], mix[2], mix[3], mix[4]], spec.min_group_share)
}

fn individual_name(rng: &mut ChaCha8Rng, surname: &str) -> String {
    let first = FIRST_NAMES.choose(rng).expect("nonempty");
    match rng.random_range(0..4) {
        0 => format!("{surname} {first}"),
        1 => format!("{surname}, {first}"),
        2 => {
            let initial = (b'A' + rng.random_range(0..26u8)) as char;
            format!("{surname} {first} {initial}")
        }
        _ => {
            let second = FIRST_NAMES.choose(rng).expect("nonempty");
            format!("{surname} {first} & {second}")
        }
    }
}

fn entity_name(rng: &mut ChaCha8Rng, class: OwnerClass, pools: &RaceMap<Vec<String>>) -> String {
    let word = COMPANY_WORDS.choose(rng).expect("nonempty");
    match class {
        OwnerClass::Government => format!("CITY OF {word}"),
        OwnerClass::TrustEstateOther => {
            let race = RaceCategory::ALL[rng.random_range(0..5)];
            let surname = pools[race].choose(rng).expect("nonempty pool");
            format!("{surname} FAMILY TRUST")
        }
        _ => {
            let other = COMPANY_WORDS.choose(rng).expect("nonempty");
            let suffix = COMPANY_SUFFIXES.choose(rng).expect("nonempty");
            format!("{word} {other} {suffix}")
        }
    }
}

/// Generates a dataset. Identical `(spec, seed)` pairs give identical
/// output.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let pools = surname_pools(spec, &mut rng);
    let mut prior_entries = Vec::new();
    for r in RaceCategory::ALL {
        for s in &pools[r] {
            prior_entries.push((s.clone(), surname_prior(&mut rng, spec, r)));
        }
    }
    let national = RaceDistribution::new(NATIONAL_PRIOR).expect("valid national prior");
    let priors = SurnamePriorTable::new(national, prior_entries).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;

    let mut parcels = Vec::new();
    let mut tracts = Vec::new();
    let mut truth = Vec::new();
    let mut planted = Vec::new();
    for t in 0..spec.n_tracts {
        let geoid = validate_geoid(&format!("36{}{:06}", COUNTIES[t % COUNTIES.len()], (t + 1) * 100))
            .expect("generated GEOIDs are well formed");
        let pop_mix = resident_mix(&mut rng, spec);
        let mut shares = [0.0; 5];
        for i in 0..4 {
            shares[i] = round6(pop_mix[i]);
        }
        shares[4] = round6((1.0 - shares[..4].iter().sum::<f64>()).max(0.0));
        let total_population = rng.random_range(spec.population_min..=spec.population_max);
        let median_income = (rng.random_range(spec.income_min..=spec.income_max) / 100.0).round() * 100.0;
        let census_urban = rng.random_bool(spec.urban_fraction);
        tracts.push(TractDemographics {
            geoid: geoid.clone(),
            total_population,
            pop_share: RaceMap(shares),
            median_income: Some(median_income),
            census_urban,
        });

        let owner_mix = floor_mix(
            std::array::from_fn(|i| pop_mix[i] * spec.owner_bias[i]),
            spec.min_group_share,
        );
        let n_parcels = rng.random_range(spec.parcels_min..=spec.parcels_max) as u64;
        let corporate_rate = rng.random_range(spec.corporate_share_min..=spec.corporate_share_max);
        let n_corporate_like = (n_parcels as f64 * corporate_rate).round() as u64;
        let n_individual = n_parcels - n_corporate_like;
        let owner_counts = apportion(n_individual, &owner_mix);

        let mut slots: Vec<Option<RaceCategory>> = Vec::with_capacity(n_parcels as usize);
        for r in RaceCategory::ALL {
            slots.extend(std::iter::repeat_n(Some(r), owner_counts[r.index()] as usize));
        }
        slots.extend(std::iter::repeat_n(None, n_corporate_like as usize));
        slots.shuffle(&mut rng);

        for (j, slot) in slots.into_iter().enumerate() {
            let parcel_id = format!("{geoid}-{:04}", j + 1);
            let (class, name, value) = match slot {
                Some(race) => {
                    let surname = pools[race].choose(&mut rng).expect("nonempty pool");
                    let value = (rng.random_range(60_000.0..600_000.0f64) / 100.0).round() * 100.0;
                    (OwnerClass::Individual, individual_name(&mut rng, surname), value)
                }
                None => {
                    let class = match rng.random_range(0..10) {
                        0 => OwnerClass::Government,
                        1 => OwnerClass::TrustEstateOther,
                        _ => OwnerClass::Corporate,
                    };
                    let value = (rng.random_range(100_000.0..2_000_000.0f64) / 100.0).round() * 100.0;
                    (class, entity_name(&mut rng, class, &pools), value)
                }
            };
            parcels.push(ParcelRecord {
                parcel_id: parcel_id.clone(),
                geoid: geoid.clone(),
                assessed_value: value,
                owner_name_raw: name,
                owner_type: None,
            });
            truth.push(TruthRecord {
                parcel_id,
                geoid: geoid.clone(),
                owner_class: class,
                true_race: slot,
            });
        }
        planted.push(PlantedTract {
            geoid,
            n_parcels,
            n_individual,
            n_corporate_like,
            corporate_rate,
            owner_mix: RaceMap(owner_mix),
            owner_counts: RaceMap(owner_counts),
        });
    }
    Ok(SyntheticData {
        parcels,
        tracts,
        priors,
        truth,
        planted,
    })
}

impl SyntheticData {
    /// Writes `parcels.csv`, `tracts.csv`, `surname_priors.csv`,
    /// `ground_truth.csv`, `truth_predictions.csv` and `planted.csv`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), SynthError> {
        std::fs::create_dir_all(dir)?;
        let create =
            |name: &str| -> Result<BufWriter<File>, SynthError> { Ok(BufWriter::new(File::create(dir.join(name))?)) };
        write_parcels(create("parcels.csv")?, &self.parcels)?;
        write_demographics(create("tracts.csv")?, &self.tracts.iter().collect::<Vec<_>>())?;
        self.priors.write(create("surname_priors.csv")?)?;

        let income = |g: &GeoId| self.tracts.iter().find(|t| &t.geoid == g).and_then(|t| t.median_income);
        let mut gt = csv::Writer::from_writer(create("ground_truth.csv")?);
        gt.write_record(["record_id", "true_race", "predicted_race", "median_income"])?;
        for t in &self.truth {
            if let Some(r) = t.true_race {
                let inc = income(&t.geoid).map(|v| v.to_string()).unwrap_or_default();
                gt.write_record([t.parcel_id.as_str(), &r.to_string(), "", &inc])?;
            }
        }
        gt.flush()?;

        let one_hot: Vec<(String, RaceDistribution)> = self
            .truth
            .iter()
            .filter_map(|t| t.true_race.map(|r| (t.parcel_id.clone(), RaceDistribution::point(r))))
            .collect();
        write_predictions(
            create("truth_predictions.csv")?,
            one_hot.iter().map(|(id, d)| (id.as_str(), d)),
        )?;

        let mut out = csv::Writer::from_writer(create("planted.csv")?);
        let mut header: Vec<String> = [
            "geoid",
            "n_parcels",
            "n_individual",
            "n_corporate_like",
            "corporate_rate",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(RaceCategory::ALL.iter().map(|r| format!("owner_mix_{}", r.key())));
        header.extend(RaceCategory::ALL.iter().map(|r| format!("owner_count_{}", r.key())));
        out.write_record(&header)?;
        for p in &self.planted {
            let mut row = vec![
                p.geoid.to_string(),
                p.n_parcels.to_string(),
                p.n_individual.to_string(),
                p.n_corporate_like.to_string(),
                p.corporate_rate.to_string(),
            ];
            row.extend(p.owner_mix.0.iter().map(|v| v.to_string()));
            row.extend(p.owner_counts.0.iter().map(|v| v.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads `planted.csv` back.
pub fn read_planted(path: &Path) -> Result<Vec<PlantedTract>, SynthError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let bad = |m: String| SynthError::InvalidSpec(format!("planted.csv: {m}"));
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).ok_or_else(|| bad(format!("missing column {i}")));
        let num = |i: usize| -> Result<f64, SynthError> { f(i)?.parse::<f64>().map_err(|e| bad(e.to_string())) };
        let int = |i: usize| -> Result<u64, SynthError> { f(i)?.parse::<u64>().map_err(|e| bad(e.to_string())) };
        out.push(PlantedTract {
            geoid: validate_geoid(f(0)?).map_err(|e| bad(e.to_string()))?,
            n_parcels: int(1)?,
            n_individual: int(2)?,
            n_corporate_like: int(3)?,
            corporate_rate: num(4)?,
            owner_mix: RaceMap([num(5)?, num(6)?, num(7)?, num(8)?, num(9)?]),
            owner_counts: RaceMap([int(10)?, int(11)?, int(12)?, int(13)?, int(14)?]),
        });
    }
    Ok(out)
}
