//! Tract-level ownership profiles and the statistics derived from them.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entity::OwnerClass;
use crate::impute::Imputation;
use crate::ingest::{Dataset, GeoId, ParcelRecord, TractDemographics};
use crate::race::{RaceCategory, RaceMap};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("parcels span more than one tract ({0} and {1})")]
    MixedGeoids(GeoId, GeoId),
    #[error("no race prediction for individual-owned parcel {0}")]
    MissingPrediction(String),
    #[error("parcel {0} has no owner type")]
    Unclassified(String),
    #[error("cannot profile a tract with no parcels")]
    EmptyTract,
    #[error("profile is for {profile} but demographics are for {demographics}")]
    GeoidMismatch { profile: GeoId, demographics: GeoId },
    #[error("tract {0} has no individually owned parcels")]
    NoIndividualOwners(GeoId),
    #[error("tract {0} has no demographics")]
    MissingDemographics(GeoId),
    #[error("empty input")]
    EmptyInput,
    #[error("total individually-owned assessed value is zero")]
    ZeroTotalValue,
}

/// Per-tract ownership aggregate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TractOwnershipProfile {
    pub geoid: GeoId,
    pub n_properties: u64,
    pub n_individual: u64,
    /// Corporate, government and trust/estate owners.
    pub n_corporate_like: u64,
    /// Individual owners by predicted (argmax) race.
    pub owner_count_by_race: RaceMap<u64>,
    /// Assessed value held by individual owners, by predicted race.
    pub owner_value_by_race: RaceMap<f64>,
    /// Fraction of all properties.
    pub corporate_share: f64,
    /// Fraction of individually owned properties; `None` without any.
    pub indiv_share_by_race: Option<RaceMap<f64>>,
    /// Assessed value of every parcel in the tract.
    pub value_total: f64,
}

impl TractOwnershipProfile {
    pub fn indiv_share(&self, race: RaceCategory) -> Option<f64> {
        self.indiv_share_by_race.map(|s| s[race])
    }
}

/// Aggregates the parcels of one tract.
///
/// Each element pairs a classified parcel with its imputation. Predictions
/// on non-individual parcels are ignored.
pub fn aggregate_tract(
    parcels: &[(&ParcelRecord, Option<&Imputation>)],
) -> Result<TractOwnershipProfile, AnalyticsError> {
    let (first, _) = parcels.first().ok_or(AnalyticsError::EmptyTract)?;
    let geoid = first.geoid.clone();
    let mut n_individual = 0u64;
    let mut n_corporate_like = 0u64;
    let mut counts = RaceMap::<u64>::default();
    let mut values = RaceMap::<f64>::default();
    let mut value_total = 0.0;
    for (p, imp) in parcels {
        if p.geoid != geoid {
            return Err(AnalyticsError::MixedGeoids(geoid, p.geoid.clone()));
        }
        value_total += p.assessed_value;
        match p
            .owner_type
            .ok_or_else(|| AnalyticsError::Unclassified(p.parcel_id.clone()))?
        {
            OwnerClass::Individual => {
                let race = imp
                    .and_then(Imputation::race)
                    .ok_or_else(|| AnalyticsError::MissingPrediction(p.parcel_id.clone()))?;
                n_individual += 1;
                counts[race] += 1;
                values[race] += p.assessed_value;
            }
            _ => n_corporate_like += 1,
        }
    }
    let n_properties = parcels.len() as u64;
    let indiv_share_by_race = (n_individual > 0).then(|| counts.map(|_, &c| c as f64 / n_individual as f64));
    Ok(TractOwnershipProfile {
        geoid,
        n_properties,
        n_individual,
        n_corporate_like,
        owner_count_by_race: counts,
        owner_value_by_race: values,
        corporate_share: n_corporate_like as f64 / n_properties as f64,
        indiv_share_by_race,
        value_total,
    })
}

/// Profiles every tract that has parcels, in GEOID order.
pub fn aggregate_dataset(
    ds: &Dataset,
    imputations: &BTreeMap<String, Imputation>,
) -> Result<Vec<TractOwnershipProfile>, AnalyticsError> {
    let groups: Vec<(&GeoId, Vec<&ParcelRecord>)> = ds.parcels_by_tract().into_iter().collect();
    let results: Vec<Result<TractOwnershipProfile, AnalyticsError>> = groups
        .par_iter()
        .map(|(_, parcels)| {
            let paired: Vec<_> = parcels.iter().map(|p| (*p, imputations.get(&p.parcel_id))).collect();
            aggregate_tract(&paired)
        })
        .collect();
    results.into_iter().collect()
}

/// Joins profiles to their demographics.
pub fn join_demographics<'a>(
    profiles: &'a [TractOwnershipProfile],
    ds: &'a Dataset,
) -> Result<Vec<(&'a TractOwnershipProfile, &'a TractDemographics)>, AnalyticsError> {
    profiles
        .iter()
        .map(|p| {
            ds.tract(&p.geoid)
                .map(|d| (p, d))
                .ok_or_else(|| AnalyticsError::MissingDemographics(p.geoid.clone()))
        })
        .collect()
}

/// Ownership share minus population share for one group in one tract.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisparityRecord {
    pub geoid: GeoId,
    pub race: RaceCategory,
    pub pop_share: f64,
    /// Share of individually owned properties.
    pub owner_share: f64,
    pub disparity: f64,
    /// Tract resident population.
    pub weight: u64,
}

pub fn disparity(
    profile: &TractOwnershipProfile,
    demo: &TractDemographics,
) -> Result<Vec<DisparityRecord>, AnalyticsError> {
    if profile.geoid != demo.geoid {
        return Err(AnalyticsError::GeoidMismatch {
            profile: profile.geoid.clone(),
            demographics: demo.geoid.clone(),
        });
    }
    let owner = profile
        .indiv_share_by_race
        .ok_or_else(|| AnalyticsError::NoIndividualOwners(profile.geoid.clone()))?;
    Ok(RaceCategory::ALL
        .iter()
        .map(|&race| DisparityRecord {
            geoid: profile.geoid.clone(),
            race,
            pop_share: demo.pop_share[race],
            owner_share: owner[race],
            disparity: owner[race] - demo.pop_share[race],
            weight: demo.total_population,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum MajorityGroup {
    White,
    Black,
    Hispanic,
    Asian,
    Mixed,
}

impl MajorityGroup {
    pub const ALL: [MajorityGroup; 5] = [
        MajorityGroup::White,
        MajorityGroup::Black,
        MajorityGroup::Hispanic,
        MajorityGroup::Asian,
        MajorityGroup::Mixed,
    ];

    fn of_race(r: RaceCategory) -> MajorityGroup {
        match r {
            RaceCategory::White => MajorityGroup::White,
            RaceCategory::Black => MajorityGroup::Black,
            RaceCategory::Hispanic => MajorityGroup::Hispanic,
            RaceCategory::Asian => MajorityGroup::Asian,
            RaceCategory::Other => MajorityGroup::Mixed,
        }
    }
}

impl fmt::Display for MajorityGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// How tracts are assigned to a group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GroupingMode {
    /// A group holding more than half of residents.
    #[default]
    Strict,
    /// The single largest group.
    Plurality,
}

/// Strict majority: the group with more than half of residents. Exactly
/// one half is not a majority. An "Other" majority counts as Mixed.
pub fn classify_majority(demo: &TractDemographics) -> MajorityGroup {
    RaceCategory::ALL
        .iter()
        .find(|&&r| demo.pop_share[r] > 0.5)
        .map(|&r| MajorityGroup::of_race(r))
        .unwrap_or(MajorityGroup::Mixed)
}

/// Plurality: the single largest group. Ties for first place, or Other
/// being largest, give Mixed.
pub fn classify_plurality(demo: &TractDemographics) -> MajorityGroup {
    let shares = &demo.pop_share;
    let top = crate::race::argmax_of(&shares.0);
    let tied = RaceCategory::ALL.iter().any(|&r| r != top && shares[r] == shares[top]);
    if tied {
        MajorityGroup::Mixed
    } else {
        MajorityGroup::of_race(top)
    }
}

pub fn classify_group(demo: &TractDemographics, mode: GroupingMode) -> MajorityGroup {
    match mode {
        GroupingMode::Strict => classify_majority(demo),
        GroupingMode::Plurality => classify_plurality(demo),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    #[default]
    Unweighted,
    /// Weight each tract by its resident population.
    Population,
}

/// One row of the majority-group profile table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MajorityRow {
    pub group: MajorityGroup,
    pub n_tracts: usize,
    /// Tracts that contributed to the owner means (at least one individual owner).
    pub n_with_owners: usize,
    pub mean_pop_share: RaceMap<f64>,
    pub mean_owner_share: RaceMap<f64>,
}

fn weighted_mean<'a>(items: impl Iterator<Item = (f64, &'a RaceMap<f64>)>) -> Option<RaceMap<f64>> {
    let mut total = RaceMap::<f64>::default();
    let mut wsum = 0.0;
    for (w, shares) in items {
        for r in RaceCategory::ALL {
            total[r] += w * shares[r];
        }
        wsum += w;
    }
    (wsum > 0.0).then(|| total.map(|_, &t| t / wsum))
}

/// Mean population and owner composition for each group of tracts. Groups
/// with no tracts are omitted; rows follow [`MajorityGroup::ALL`] order.
pub fn majority_profile_table(
    tracts: &[(&TractOwnershipProfile, &TractDemographics)],
    mode: GroupingMode,
    weighting: Weighting,
) -> Result<Vec<MajorityRow>, AnalyticsError> {
    if tracts.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    let weight = |d: &TractDemographics| match weighting {
        Weighting::Unweighted => 1.0,
        Weighting::Population => d.total_population as f64,
    };
    let mut rows = Vec::new();
    for group in MajorityGroup::ALL {
        let members: Vec<_> = tracts
            .iter()
            .filter(|(_, d)| classify_group(d, mode) == group)
            .collect();
        if members.is_empty() {
            continue;
        }
        let nan = RaceMap([f64::NAN; 5]);
        let mean_pop_share = weighted_mean(members.iter().map(|(_, d)| (weight(d), &d.pop_share))).unwrap_or(nan);
        let owners: Vec<_> = members
            .iter()
            .filter_map(|(p, d)| p.indiv_share_by_race.as_ref().map(|s| (weight(d), s)))
            .collect();
        let mean_owner_share = weighted_mean(owners.iter().copied()).unwrap_or(nan);
        rows.push(MajorityRow {
            group,
            n_tracts: members.len(),
            n_with_owners: owners.len(),
            mean_pop_share,
            mean_owner_share,
        });
    }
    Ok(rows)
}

/// Corporate share plus White individual ownership rescaled to all
/// properties.
pub fn combined_white_corp(profile: &TractOwnershipProfile) -> f64 {
    profile.corporate_share + race_share_of_all(profile, RaceCategory::White)
}

/// A group's individual ownership as a fraction of all properties.
pub fn race_share_of_all(profile: &TractOwnershipProfile, race: RaceCategory) -> f64 {
    (1.0 - profile.corporate_share) * profile.indiv_share(race).unwrap_or(0.0)
}

/// Which White ownership measure the extreme-disparity screen uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OwnershipMeasure {
    /// White share of individually owned properties.
    #[default]
    IndividualOnly,
    /// White individual plus corporate share of all properties.
    CombinedWithCorp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtremeParams {
    pub white_pop_max: f64,
    pub white_owner_min: f64,
    pub mode: OwnershipMeasure,
}

impl Default for ExtremeParams {
    fn default() -> Self {
        ExtremeParams {
            white_pop_max: 0.5,
            white_owner_min: 0.40,
            mode: OwnershipMeasure::IndividualOnly,
        }
    }
}

/// Largest non-White resident group; ties go to canonical order.
pub fn largest_minority(demo: &TractDemographics) -> RaceCategory {
    let mut best = RaceCategory::Black;
    for r in [RaceCategory::Hispanic, RaceCategory::Asian, RaceCategory::Other] {
        if demo.pop_share[r] > demo.pop_share[best] {
            best = r;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtremeTract {
    pub geoid: GeoId,
    pub white_pop: f64,
    /// The White ownership measure selected by [`ExtremeParams::mode`].
    pub white_owner: f64,
    pub gap: f64,
    pub largest_minority: RaceCategory,
    pub minority_pop: f64,
    /// Largest minority's share of individually owned properties.
    pub minority_owner: f64,
    pub corporate_share: f64,
}

/// Tracts where White residents are below `white_pop_max` but White
/// ownership is at least `white_owner_min`, largest gap first.
pub fn find_extreme_disparity(
    tracts: &[(&TractOwnershipProfile, &TractDemographics)],
    params: &ExtremeParams,
) -> Vec<ExtremeTract> {
    let mut out: Vec<ExtremeTract> = tracts
        .iter()
        .filter(|(_, d)| d.pop_share[RaceCategory::White] < params.white_pop_max)
        .filter_map(|(p, d)| {
            let white_owner = match params.mode {
                OwnershipMeasure::IndividualOnly => p.indiv_share(RaceCategory::White)?,
                OwnershipMeasure::CombinedWithCorp => combined_white_corp(p),
            };
            if white_owner < params.white_owner_min {
                return None;
            }
            let white_pop = d.pop_share[RaceCategory::White];
            let minority = largest_minority(d);
            Some(ExtremeTract {
                geoid: p.geoid.clone(),
                white_pop,
                white_owner,
                gap: white_owner - white_pop,
                largest_minority: minority,
                minority_pop: d.pop_share[minority],
                minority_owner: p.indiv_share(minority).unwrap_or(0.0),
                corporate_share: p.corporate_share,
            })
        })
        .collect();
    out.sort_by(|a, b| b.gap.total_cmp(&a.gap).then_with(|| a.geoid.cmp(&b.geoid)));
    out
}

/// Per-tract combined ownership, every share a fraction of all properties.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombinedOwnershipRow {
    pub geoid: GeoId,
    pub white_pop: f64,
    pub white_of_all: f64,
    pub combined_white_corp: f64,
    pub corporate_share: f64,
    pub largest_minority: RaceCategory,
    pub minority_pop: f64,
    pub minority_of_all: f64,
    /// White residents below half while White individuals plus corporate
    /// owners hold more than half of all properties.
    pub non_white_tract_majority_controlled: bool,
}

pub fn combined_ownership_rows(tracts: &[(&TractOwnershipProfile, &TractDemographics)]) -> Vec<CombinedOwnershipRow> {
    tracts
        .iter()
        .map(|(p, d)| {
            let minority = largest_minority(d);
            let white_pop = d.pop_share[RaceCategory::White];
            let combined = combined_white_corp(p);
            CombinedOwnershipRow {
                geoid: p.geoid.clone(),
                white_pop,
                white_of_all: race_share_of_all(p, RaceCategory::White),
                combined_white_corp: combined,
                corporate_share: p.corporate_share,
                largest_minority: minority,
                minority_pop: d.pop_share[minority],
                minority_of_all: race_share_of_all(p, minority),
                non_white_tract_majority_controlled: white_pop < 0.5 && combined > 0.5,
            }
        })
        .collect()
}

/// Group means of White, corporate and combined shares of all properties.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominantOwnershipRow {
    pub group: MajorityGroup,
    pub n_tracts: usize,
    pub mean_white_of_all: f64,
    pub mean_corporate: f64,
    pub mean_combined: f64,
}

pub fn dominant_ownership_table(
    tracts: &[(&TractOwnershipProfile, &TractDemographics)],
    mode: GroupingMode,
) -> Vec<DominantOwnershipRow> {
    MajorityGroup::ALL
        .iter()
        .filter_map(|&group| {
            let members: Vec<_> = tracts
                .iter()
                .filter(|(_, d)| classify_group(d, mode) == group)
                .collect();
            if members.is_empty() {
                return None;
            }
            let n = members.len() as f64;
            let mean = |f: &dyn Fn(&TractOwnershipProfile) -> f64| members.iter().map(|(p, _)| f(p)).sum::<f64>() / n;
            Some(DominantOwnershipRow {
                group,
                n_tracts: members.len(),
                mean_white_of_all: mean(&|p| race_share_of_all(p, RaceCategory::White)),
                mean_corporate: mean(&|p| p.corporate_share),
                mean_combined: mean(&combined_white_corp),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum UrbanClass {
    UrbanCore,
    SuburbanUrban,
    Rural,
}

impl fmt::Display for UrbanClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// 75th percentile of parcel counts (linear interpolation between order
/// statistics). `None` for no profiles.
pub fn property_count_quartile(profiles: &[TractOwnershipProfile]) -> Option<f64> {
    let mut counts: Vec<f64> = profiles.iter().map(|p| p.n_properties as f64).collect();
    if counts.is_empty() {
        return None;
    }
    counts.sort_by(f64::total_cmp);
    let pos = 0.75 * (counts.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(counts[lo] + (counts[hi] - counts[lo]) * (pos - lo as f64))
}

pub fn classify_urbanization(
    profile: &TractOwnershipProfile,
    demo: &TractDemographics,
    quartile_threshold: f64,
) -> UrbanClass {
    if !demo.census_urban {
        UrbanClass::Rural
    } else if profile.n_properties as f64 >= quartile_threshold {
        UrbanClass::UrbanCore
    } else {
        UrbanClass::SuburbanUrban
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UrbanSummaryRow {
    pub class: UrbanClass,
    pub n_tracts: usize,
    /// Mean of White owner share minus White population share, over
    /// tracts with individual owners.
    pub mean_white_gap: f64,
    pub mean_corporate_share: f64,
}

pub fn urbanization_summary(
    classified: &[(UrbanClass, &TractOwnershipProfile, &TractDemographics)],
) -> Vec<UrbanSummaryRow> {
    [UrbanClass::UrbanCore, UrbanClass::SuburbanUrban, UrbanClass::Rural]
        .iter()
        .filter_map(|&class| {
            let members: Vec<_> = classified.iter().filter(|(c, _, _)| *c == class).collect();
            if members.is_empty() {
                return None;
            }
            let gaps: Vec<f64> = members
                .iter()
                .filter_map(|(_, p, d)| {
                    p.indiv_share(RaceCategory::White)
                        .map(|w| w - d.pop_share[RaceCategory::White])
                })
                .collect();
            let mean_white_gap = if gaps.is_empty() {
                f64::NAN
            } else {
                gaps.iter().sum::<f64>() / gaps.len() as f64
            };
            Some(UrbanSummaryRow {
                class,
                n_tracts: members.len(),
                mean_white_gap,
                mean_corporate_share: members.iter().map(|(_, p, _)| p.corporate_share).sum::<f64>()
                    / members.len() as f64,
            })
        })
        .collect()
}

/// Each group's share of the total individually-owned assessed value.
pub fn value_share_by_race(profiles: &[TractOwnershipProfile]) -> Result<RaceMap<f64>, AnalyticsError> {
    if profiles.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    let mut totals = RaceMap::<f64>::default();
    for p in profiles {
        for r in RaceCategory::ALL {
            totals[r] += p.owner_value_by_race[r];
        }
    }
    let grand = totals.sum();
    if grand <= 0.0 {
        return Err(AnalyticsError::ZeroTotalValue);
    }
    Ok(totals.map(|_, &v| v / grand))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impute::PosteriorSource;
    use crate::ingest::validate_geoid;
    use crate::race::RaceDistribution;

    fn demo(geoid: &str, shares: [f64; 5], urban: bool) -> TractDemographics {
        TractDemographics {
            geoid: validate_geoid(geoid).unwrap(),
            total_population: 1000,
            pop_share: RaceMap(shares),
            median_income: None,
            census_urban: urban,
        }
    }

    fn parcel(id: usize, geoid: &str, class: OwnerClass, value: f64) -> ParcelRecord {
        ParcelRecord {
            parcel_id: format!("P{id}"),
            geoid: validate_geoid(geoid).unwrap(),
            assessed_value: value,
            owner_name_raw: "X".into(),
            owner_type: Some(class),
        }
    }

    fn race_imp(r: RaceCategory) -> Imputation {
        Imputation::Race {
            distribution: RaceDistribution::point(r),
            race: r,
            source: PosteriorSource::External,
        }
    }

    fn profile_of(races: &[RaceCategory], n_corp: usize) -> TractOwnershipProfile {
        let g = "36047034901";
        let mut parcels = Vec::new();
        let mut imps = Vec::new();
        for (i, r) in races.iter().enumerate() {
            parcels.push(parcel(i, g, OwnerClass::Individual, 100.0));
            imps.push(Some(race_imp(*r)));
        }
        for i in 0..n_corp {
            parcels.push(parcel(1000 + i, g, OwnerClass::Corporate, 100.0));
            imps.push(Some(Imputation::NonIndividual));
        }
        let paired: Vec<_> = parcels.iter().zip(imps.iter()).map(|(p, i)| (p, i.as_ref())).collect();
        aggregate_tract(&paired).unwrap()
    }

    use RaceCategory::*;

    #[test]
    fn aggregate_ten_parcels() {
        let races = [White, White, White, White, White, Black, Black, Hispanic];
        let p = profile_of(&races, 2);
        assert_eq!(p.n_properties, 10);
        assert_eq!(p.n_individual, 8);
        assert_eq!(p.n_corporate_like, 2);
        assert_eq!(p.corporate_share, 0.2);
        assert_eq!(p.indiv_share_by_race.unwrap().0, [0.625, 0.25, 0.125, 0.0, 0.0]);
    }

    #[test]
    fn aggregate_all_corporate() {
        let p = profile_of(&[], 3);
        assert_eq!(p.indiv_share_by_race, None);
        assert_eq!(p.corporate_share, 1.0);
        assert_eq!(combined_white_corp(&p), 1.0);
    }

    #[test]
    fn aggregate_value_sums() {
        let g = "36047034901";
        let parcels = [
            parcel(1, g, OwnerClass::Individual, 100_000.0),
            parcel(2, g, OwnerClass::Individual, 300_000.0),
        ];
        let imp = race_imp(White);
        let paired: Vec<_> = parcels.iter().map(|p| (p, Some(&imp))).collect();
        let prof = aggregate_tract(&paired).unwrap();
        assert_eq!(prof.owner_value_by_race[White], 400_000.0);
        assert_eq!(prof.value_total, 400_000.0);
    }

    #[test]
    fn aggregate_errors() {
        let a = parcel(1, "36047034901", OwnerClass::Individual, 1.0);
        let b = parcel(2, "36005027900", OwnerClass::Individual, 1.0);
        let imp = race_imp(White);
        assert!(matches!(
            aggregate_tract(&[(&a, Some(&imp)), (&b, Some(&imp))]),
            Err(AnalyticsError::MixedGeoids(..))
        ));
        assert_eq!(
            aggregate_tract(&[(&a, None)]),
            Err(AnalyticsError::MissingPrediction("P1".into()))
        );
        assert_eq!(aggregate_tract(&[]), Err(AnalyticsError::EmptyTract));
    }

    #[test]
    fn disparity_examples() {
        let p = profile_of(
            &[White; 72]
                .iter()
                .chain([Black; 10].iter())
                .chain([Hispanic; 18].iter())
                .copied()
                .collect::<Vec<_>>(),
            0,
        );
        let d = demo("36047034901", [0.65, 0.15, 0.10, 0.05, 0.05], true);
        let recs = disparity(&p, &d).unwrap();
        assert_eq!(recs.len(), 5);
        assert!((recs[0].disparity - 0.07).abs() < 1e-12);
        assert!((recs[1].disparity - (-0.05)).abs() < 1e-12);
        assert!(recs.iter().map(|r| r.disparity).sum::<f64>().abs() < 1e-12);

        let other = demo("36005027900", [0.2; 5], true);
        assert!(matches!(
            disparity(&p, &other),
            Err(AnalyticsError::GeoidMismatch { .. })
        ));
    }

    #[test]
    fn majority_classification() {
        let g = "36047034901";
        assert_eq!(
            classify_majority(&demo(g, [0.778, 0.038, 0.086, 0.052, 0.046], true)),
            MajorityGroup::White
        );
        assert_eq!(
            classify_majority(&demo(g, [0.287, 0.192, 0.267, 0.184, 0.07], true)),
            MajorityGroup::Mixed
        );
        assert_eq!(
            classify_majority(&demo(g, [0.5, 0.3, 0.1, 0.05, 0.05], true)),
            MajorityGroup::Mixed
        );
        assert_eq!(
            classify_plurality(&demo(g, [0.287, 0.192, 0.267, 0.184, 0.07], true)),
            MajorityGroup::White
        );
        assert_eq!(
            classify_plurality(&demo(g, [0.3, 0.3, 0.2, 0.1, 0.1], true)),
            MajorityGroup::Mixed
        );
    }

    #[test]
    fn combined_and_share_of_all_formulas() {
        let mut p = profile_of(&[White], 0);
        p.corporate_share = 0.099;
        p.indiv_share_by_race = Some(RaceMap([0.763, 0.1, 0.041, 0.05, 0.046]));
        assert!((combined_white_corp(&p) - (0.099 + 0.901 * 0.763)).abs() < 1e-12);
        p.corporate_share = 0.0;
        assert_eq!(combined_white_corp(&p), 0.763);
        p.corporate_share = 1.0;
        assert!(RaceCategory::ALL.iter().all(|&r| race_share_of_all(&p, r) == 0.0));
    }

    #[test]
    fn urbanization_rules() {
        let mut p = profile_of(&[White], 0);
        p.n_properties = 1500;
        let urban = demo("36047034901", [0.2; 5], true);
        let rural = demo("36047034901", [0.2; 5], false);
        assert_eq!(classify_urbanization(&p, &rural, 1000.0), UrbanClass::Rural);
        assert_eq!(classify_urbanization(&p, &urban, 1000.0), UrbanClass::UrbanCore);
        p.n_properties = 400;
        assert_eq!(classify_urbanization(&p, &urban, 1000.0), UrbanClass::SuburbanUrban);
    }

    #[test]
    fn quartile_interpolates() {
        let mut ps = Vec::new();
        for n in [100u64, 200, 300, 400, 500] {
            let mut p = profile_of(&[White], 0);
            p.n_properties = n;
            ps.push(p);
        }
        assert_eq!(property_count_quartile(&ps), Some(400.0));
        ps.pop();
        // positions 0..3, 0.75*3 = 2.25 -> 300 + 0.25*100
        assert_eq!(property_count_quartile(&ps), Some(325.0));
        assert_eq!(property_count_quartile(&[]), None);
    }

    #[test]
    fn value_shares() {
        let mut a = profile_of(&[White], 0);
        a.owner_value_by_race = RaceMap([500.0, 50.0, 0.0, 0.0, 0.0]);
        let mut b = profile_of(&[White], 0);
        b.owner_value_by_race = RaceMap([370.0, 30.0, 50.0, 0.0, 0.0]);
        let s = value_share_by_race(&[a.clone(), b]).unwrap();
        assert!((s[White] - 0.87).abs() < 1e-12);

        a.owner_value_by_race = RaceMap([0.0, 0.0, 10.0, 0.0, 0.0]);
        let s = value_share_by_race(std::slice::from_ref(&a)).unwrap();
        assert_eq!(s.0, [0.0, 0.0, 1.0, 0.0, 0.0]);

        a.owner_value_by_race = RaceMap::default();
        assert_eq!(value_share_by_race(&[a]), Err(AnalyticsError::ZeroTotalValue));
    }
}
