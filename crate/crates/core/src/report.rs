//! Report files. Every output is rendered to bytes first so the bundle can
//! be hashed into the manifest and written in one pass.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analytics::{
    CombinedOwnershipRow, DisparityRecord, DominantOwnershipRow, ExtremeTract, MajorityRow, TractOwnershipProfile,
    UrbanClass, UrbanSummaryRow,
};
use crate::evaluation::StressedShares;
use crate::ingest::{GeoId, Reject};
use crate::lowess::{lowess_trend, LowessError, WeightedPoint};
use crate::race::{RaceCategory, RaceMap};

/// Output files keyed by path relative to the output directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bundle {
    files: BTreeMap<String, Vec<u8>>,
}

impl Bundle {
    pub fn insert(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.insert(name.into(), bytes);
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(Vec::as_slice)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// SHA-256 of every file, hex encoded.
    pub fn digests(&self) -> BTreeMap<String, String> {
        self.files.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect()
    }

    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, bytes)?;
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Fixed six-decimal share; non-finite values are left blank.
fn f6(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else {
        String::new()
    }
}

fn f2(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.2}")
    } else {
        String::new()
    }
}

fn opt6(x: Option<f64>) -> String {
    x.map(f6).unwrap_or_default()
}

fn race_columns(prefix: &str) -> Vec<String> {
    RaceCategory::ALL
        .iter()
        .map(|r| format!("{prefix}_{}", r.key()))
        .collect()
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    // Writing to memory cannot fail.
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.write_record(&row).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

pub fn profiles_csv(profiles: &[TractOwnershipProfile]) -> Vec<u8> {
    let mut header = strings(&[
        "geoid",
        "n_properties",
        "n_individual",
        "n_corporate_like",
        "corporate_share",
    ]);
    header.extend(race_columns("owners"));
    header.extend(race_columns("indiv_share"));
    header.extend(race_columns("value"));
    header.push("value_total".into());
    csv_bytes(
        &header,
        profiles.iter().map(|p| {
            let mut row = vec![
                p.geoid.to_string(),
                p.n_properties.to_string(),
                p.n_individual.to_string(),
                p.n_corporate_like.to_string(),
                f6(p.corporate_share),
            ];
            row.extend(p.owner_count_by_race.0.iter().map(u64::to_string));
            row.extend(RaceCategory::ALL.iter().map(|&r| opt6(p.indiv_share(r))));
            row.extend(p.owner_value_by_race.0.iter().map(|&v| f2(v)));
            row.push(f2(p.value_total));
            row
        }),
    )
}

pub fn disparity_csv(records: &[DisparityRecord]) -> Vec<u8> {
    csv_bytes(
        &strings(&["geoid", "race", "pop_share", "owner_share", "disparity", "population"]),
        records.iter().map(|d| {
            vec![
                d.geoid.to_string(),
                d.race.to_string(),
                f6(d.pop_share),
                f6(d.owner_share),
                f6(d.disparity),
                d.weight.to_string(),
            ]
        }),
    )
}

pub fn majority_profiles_csv(rows: &[MajorityRow]) -> Vec<u8> {
    let mut header = strings(&["group", "n_tracts", "n_with_owners"]);
    header.extend(race_columns("pop"));
    header.extend(race_columns("owner"));
    csv_bytes(
        &header,
        rows.iter().map(|m| {
            let mut row = vec![m.group.to_string(), m.n_tracts.to_string(), m.n_with_owners.to_string()];
            row.extend(m.mean_pop_share.0.iter().map(|&v| f6(v)));
            row.extend(m.mean_owner_share.0.iter().map(|&v| f6(v)));
            row
        }),
    )
}

pub fn extreme_tracts_csv(rows: &[ExtremeTract]) -> Vec<u8> {
    csv_bytes(
        &strings(&[
            "rank",
            "geoid",
            "white_pop",
            "white_owner",
            "gap",
            "largest_minority",
            "minority_pop",
            "minority_owner",
            "corporate_share",
        ]),
        rows.iter().enumerate().map(|(i, e)| {
            vec![
                (i + 1).to_string(),
                e.geoid.to_string(),
                f6(e.white_pop),
                f6(e.white_owner),
                f6(e.gap),
                e.largest_minority.to_string(),
                f6(e.minority_pop),
                f6(e.minority_owner),
                f6(e.corporate_share),
            ]
        }),
    )
}

pub fn combined_ownership_csv(rows: &[CombinedOwnershipRow]) -> Vec<u8> {
    csv_bytes(
        &strings(&[
            "geoid",
            "white_pop",
            "white_of_all",
            "corporate_share",
            "combined_white_corp",
            "largest_minority",
            "minority_pop",
            "minority_of_all",
            "non_white_tract_majority_controlled",
        ]),
        rows.iter().map(|c| {
            vec![
                c.geoid.to_string(),
                f6(c.white_pop),
                f6(c.white_of_all),
                f6(c.corporate_share),
                f6(c.combined_white_corp),
                c.largest_minority.to_string(),
                f6(c.minority_pop),
                f6(c.minority_of_all),
                c.non_white_tract_majority_controlled.to_string(),
            ]
        }),
    )
}

pub fn dominant_ownership_csv(rows: &[DominantOwnershipRow]) -> Vec<u8> {
    csv_bytes(
        &strings(&[
            "group",
            "n_tracts",
            "mean_white_of_all",
            "mean_corporate",
            "mean_combined",
        ]),
        rows.iter().map(|d| {
            vec![
                d.group.to_string(),
                d.n_tracts.to_string(),
                f6(d.mean_white_of_all),
                f6(d.mean_corporate),
                f6(d.mean_combined),
            ]
        }),
    )
}

pub fn urbanization_csv(rows: &[(GeoId, UrbanClass, u64)]) -> Vec<u8> {
    csv_bytes(
        &strings(&["geoid", "class", "n_properties"]),
        rows.iter()
            .map(|(g, c, n)| vec![g.to_string(), c.to_string(), n.to_string()]),
    )
}

pub fn urbanization_summary_csv(rows: &[UrbanSummaryRow]) -> Vec<u8> {
    csv_bytes(
        &strings(&["class", "n_tracts", "mean_white_gap", "mean_corporate_share"]),
        rows.iter().map(|u| {
            vec![
                u.class.to_string(),
                u.n_tracts.to_string(),
                f6(u.mean_white_gap),
                f6(u.mean_corporate_share),
            ]
        }),
    )
}

pub fn value_shares_csv(shares: Option<&RaceMap<f64>>) -> Vec<u8> {
    csv_bytes(
        &strings(&["race", "value_share"]),
        shares
            .into_iter()
            .flat_map(|s| s.iter().map(|(r, v)| vec![r.to_string(), f6(*v)]).collect::<Vec<_>>()),
    )
}

pub fn excluded_tracts_csv(rows: &[(GeoId, usize)]) -> Vec<u8> {
    csv_bytes(
        &strings(&["geoid", "n_properties"]),
        rows.iter().map(|(g, n)| vec![g.to_string(), n.to_string()]),
    )
}

pub fn rejects_csv(rejects: &[Reject]) -> Vec<u8> {
    csv_bytes(
        &strings(&["row_number", "reason", "raw_line"]),
        rejects
            .iter()
            .map(|r| vec![r.row_number.to_string(), r.reason.to_string(), r.raw_line.clone()]),
    )
}

/// Geoid, observed White share, observed minority shares and the stressed result.
pub type StressedRow = (GeoId, f64, Vec<(RaceCategory, f64)>, StressedShares);

/// Stressed shares per tract. Minority columns cover the groups with an
/// available FNR.
pub fn stressed_tracts_csv(minorities: &[RaceCategory], rows: &[StressedRow]) -> Vec<u8> {
    let mut header = strings(&["geoid", "white_share", "stressed_white"]);
    for r in minorities {
        header.push(format!("{}_share", r.key()));
        header.push(format!("stressed_{}", r.key()));
    }
    csv_bytes(
        &header,
        rows.iter().map(|(g, white, shares, stressed)| {
            let mut row = vec![g.to_string(), f6(*white), f6(stressed.white)];
            for ((_, s), (_, t)) in shares.iter().zip(&stressed.minority) {
                row.push(f6(*s));
                row.push(f6(*t));
            }
            row
        }),
    )
}

pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable report");
    bytes.push(b'\n');
    bytes
}

/// Notes produced while emitting plot data.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotNotes {
    pub skipped_trends: Vec<(RaceCategory, LowessError)>,
}

/// Adds `plot/scatter_<race>.csv` for every race present in `disparities`
/// and `plot/trend_<race>.csv` where a trend can be fitted. Point weights
/// are tract populations.
pub fn emit_plot_data(bundle: &mut Bundle, disparities: &[DisparityRecord], frac: f64, iters: usize) -> PlotNotes {
    let mut notes = PlotNotes::default();
    for race in RaceCategory::ALL {
        let rows: Vec<&DisparityRecord> = disparities.iter().filter(|d| d.race == race).collect();
        if rows.is_empty() {
            continue;
        }
        bundle.insert(
            format!("plot/scatter_{}.csv", race.key()),
            csv_bytes(
                &strings(&["geoid", "x", "y", "w"]),
                rows.iter().map(|d| {
                    vec![
                        d.geoid.to_string(),
                        f6(d.pop_share),
                        f6(d.disparity),
                        d.weight.to_string(),
                    ]
                }),
            ),
        );
        let points: Vec<WeightedPoint> = rows
            .iter()
            .map(|d| WeightedPoint {
                x: d.pop_share,
                y: d.disparity,
                w: d.weight as f64,
            })
            .collect();
        match lowess_trend(&points, frac, iters) {
            Ok(curve) => bundle.insert(
                format!("plot/trend_{}.csv", race.key()),
                csv_bytes(&strings(&["x", "y"]), curve.iter().map(|(x, y)| vec![f6(*x), f6(*y)])),
            ),
            Err(e) => {
                log::warn!("no {race} trend: {e}");
                notes.skipped_trends.push((race, e));
            }
        }
    }
    notes
}
