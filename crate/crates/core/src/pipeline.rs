//! End-to-end runs: configuration, stage sequencing and the output bundle.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{
    aggregate_dataset, classify_urbanization, combined_ownership_rows, disparity, dominant_ownership_table,
    find_extreme_disparity, join_demographics, majority_profile_table, property_count_quartile, urbanization_summary,
    value_share_by_race, AnalyticsError, ExtremeParams, GroupingMode, OwnershipMeasure, TractOwnershipProfile,
    Weighting,
};
use crate::entity::{classify_dataset, EntityRules, NameConvention};
use crate::evaluation::{
    class_metrics, load_ground_truth, metrics_report, stress_adjust, LabeledRecord, MetricsReport, StressInput,
    StressParams,
};
use crate::impute::{
    impute_dataset, load_predictions, write_imputations, Imputation, ImputationSource, SurnamePriorTable, PRIOR_FLOOR,
};
use crate::ingest::{
    filter_small_tracts, parse_demographics, parse_parcels, Dataset, Reject, RejectReason, SchemaConfig,
    DEFAULT_MIN_PROPERTIES,
};
use crate::lowess::{DEFAULT_FRAC, DEFAULT_ITERS};
use crate::race::RaceCategory;
use crate::report::{self, sha256_hex, Bundle};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("imputation error: {0}")]
    Imputation(String),
    #[error("analytics error: {0}")]
    Analytics(String),
    #[error("output error: {0}")]
    Output(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Parse(_) => 3,
            PipelineError::Imputation(_) => 4,
            PipelineError::Analytics(_) => 5,
            PipelineError::Output(_) => 1,
        }
    }
}

impl From<AnalyticsError> for PipelineError {
    fn from(e: AnalyticsError) -> Self {
        PipelineError::Analytics(e.to_string())
    }
}

/// Where the error rates for stressed shares come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StressSource {
    #[default]
    None,
    /// Rates measured on the supplied ground truth.
    GroundTruth,
    /// Published Full-Model rates.
    Full,
    /// Published Name-Only rates.
    NameOnly,
}

/// Race evidence for individual owners.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PredictionInput {
    Priors(PathBuf),
    Predictions(PathBuf),
}

/// A fully resolved run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub parcels: PathBuf,
    pub tracts: PathBuf,
    pub predictions: PredictionInput,
    pub ground_truth: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub out: PathBuf,
    pub params: RunParams,
}

/// Every setting that affects outputs other than the input files.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunParams {
    pub min_properties: usize,
    pub majority_mode: GroupingMode,
    pub weighting: Weighting,
    pub extreme: ExtremeParams,
    pub name_convention: NameConvention,
    pub prior_floor: f64,
    pub stress: StressSource,
    pub lowess_frac: f64,
    pub lowess_iters: usize,
    pub seed: u64,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            min_properties: DEFAULT_MIN_PROPERTIES,
            majority_mode: GroupingMode::default(),
            weighting: Weighting::default(),
            extreme: ExtremeParams::default(),
            name_convention: NameConvention::default(),
            prior_floor: PRIOR_FLOOR,
            stress: StressSource::default(),
            lowess_frac: DEFAULT_FRAC,
            lowess_iters: DEFAULT_ITERS,
            seed: 0,
        }
    }
}

/// One source of settings (a config file or the command line). Unset
/// fields fall through to the next layer.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigLayer {
    pub parcels: Option<PathBuf>,
    pub tracts: Option<PathBuf>,
    pub priors: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub min_properties: Option<usize>,
    pub majority_mode: Option<GroupingMode>,
    pub weighting: Option<Weighting>,
    pub extreme_white_owner_min: Option<f64>,
    pub extreme_white_pop_max: Option<f64>,
    pub extreme_measure: Option<OwnershipMeasure>,
    pub name_convention: Option<NameConvention>,
    pub prior_floor: Option<f64>,
    pub stress: Option<StressSource>,
    pub lowess_frac: Option<f64>,
    pub lowess_iters: Option<usize>,
    pub seed: Option<u64>,
}

impl ConfigLayer {
    /// Reads a TOML config. Relative paths are taken relative to the
    /// config file's directory.
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut layer: ConfigLayer = toml::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut layer.parcels,
            &mut layer.tracts,
            &mut layer.priors,
            &mut layer.predictions,
            &mut layer.ground_truth,
            &mut layer.rules,
            &mut layer.schema,
            &mut layer.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(layer)
    }

    /// Fields set here win over `lower`.
    pub fn over(self, lower: ConfigLayer) -> ConfigLayer {
        ConfigLayer {
            parcels: self.parcels.or(lower.parcels),
            tracts: self.tracts.or(lower.tracts),
            priors: self.priors.or(lower.priors),
            predictions: self.predictions.or(lower.predictions),
            ground_truth: self.ground_truth.or(lower.ground_truth),
            rules: self.rules.or(lower.rules),
            schema: self.schema.or(lower.schema),
            out: self.out.or(lower.out),
            min_properties: self.min_properties.or(lower.min_properties),
            majority_mode: self.majority_mode.or(lower.majority_mode),
            weighting: self.weighting.or(lower.weighting),
            extreme_white_owner_min: self.extreme_white_owner_min.or(lower.extreme_white_owner_min),
            extreme_white_pop_max: self.extreme_white_pop_max.or(lower.extreme_white_pop_max),
            extreme_measure: self.extreme_measure.or(lower.extreme_measure),
            name_convention: self.name_convention.or(lower.name_convention),
            prior_floor: self.prior_floor.or(lower.prior_floor),
            stress: self.stress.or(lower.stress),
            lowess_frac: self.lowess_frac.or(lower.lowess_frac),
            lowess_iters: self.lowess_iters.or(lower.lowess_iters),
            seed: self.seed.or(lower.seed),
        }
    }

    /// Fills defaults and checks that every referenced file exists.
    pub fn resolve(self) -> Result<RunConfig, PipelineError> {
        let cfg = |m: String| PipelineError::Config(m);
        let required = |p: Option<PathBuf>, flag: &str| p.ok_or_else(|| cfg(format!("{flag} is required")));
        let parcels = required(self.parcels, "--parcels")?;
        let tracts = required(self.tracts, "--tracts")?;
        let out = required(self.out, "--out")?;
        let predictions = match (self.priors, self.predictions) {
            (Some(p), None) => PredictionInput::Priors(p),
            (None, Some(p)) => PredictionInput::Predictions(p),
            (Some(_), Some(_)) => return Err(cfg("give either --priors or --predictions, not both".into())),
            (None, None) => return Err(cfg("one of --priors or --predictions is required".into())),
        };
        let defaults = RunParams::default();
        let params = RunParams {
            min_properties: self.min_properties.unwrap_or(defaults.min_properties),
            majority_mode: self.majority_mode.unwrap_or(defaults.majority_mode),
            weighting: self.weighting.unwrap_or(defaults.weighting),
            extreme: ExtremeParams {
                white_pop_max: self.extreme_white_pop_max.unwrap_or(defaults.extreme.white_pop_max),
                white_owner_min: self.extreme_white_owner_min.unwrap_or(defaults.extreme.white_owner_min),
                mode: self.extreme_measure.unwrap_or(defaults.extreme.mode),
            },
            name_convention: self.name_convention.unwrap_or(defaults.name_convention),
            prior_floor: self.prior_floor.unwrap_or(defaults.prior_floor),
            stress: self.stress.unwrap_or(defaults.stress),
            lowess_frac: self.lowess_frac.unwrap_or(defaults.lowess_frac),
            lowess_iters: self.lowess_iters.unwrap_or(defaults.lowess_iters),
            seed: self.seed.unwrap_or(defaults.seed),
        };
        let config = RunConfig {
            parcels,
            tracts,
            predictions,
            ground_truth: self.ground_truth,
            rules: self.rules,
            schema: self.schema,
            out,
            params,
        };
        config.validate()?;
        Ok(config)
    }
}

fn check_exists(path: &Path, what: &str) -> Result<(), PipelineError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::Config(format!(
            "{what} file not found: {}",
            path.display()
        )))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        check_exists(&self.parcels, "parcels")?;
        check_exists(&self.tracts, "tracts")?;
        match &self.predictions {
            PredictionInput::Priors(p) => check_exists(p, "priors")?,
            PredictionInput::Predictions(p) => check_exists(p, "predictions")?,
        }
        for (p, what) in [
            (&self.ground_truth, "ground truth"),
            (&self.rules, "rules"),
            (&self.schema, "schema"),
        ] {
            if let Some(p) = p {
                check_exists(p, what)?;
            }
        }
        let p = &self.params;
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if !(p.lowess_frac > 0.0 && p.lowess_frac <= 1.0) {
            return bad("--lowess-frac must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&p.extreme.white_owner_min) || !(0.0..=1.0).contains(&p.extreme.white_pop_max) {
            return bad("extreme-disparity thresholds must lie in [0, 1]");
        }
        if !(p.prior_floor >= 0.0 && p.prior_floor < 0.2) {
            return bad("prior floor must lie in [0, 0.2)");
        }
        if p.stress == StressSource::GroundTruth && self.ground_truth.is_none() {
            return bad("stress source ground-truth needs --ground-truth");
        }
        Ok(())
    }
}

fn open(path: &Path) -> Result<BufReader<File>, PipelineError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| PipelineError::Parse(format!("cannot open {}: {e}", path.display())))
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Parse(format!("{}: {e}", path.display()))
}

pub fn load_schema(path: Option<&Path>) -> Result<SchemaConfig, PipelineError> {
    match path {
        None => Ok(SchemaConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| PipelineError::Config(format!("cannot read schema {}: {e}", p.display())))?;
            SchemaConfig::from_toml(&text)
                .map_err(|e| PipelineError::Config(format!("invalid schema {}: {e}", p.display())))
        }
    }
}

pub fn load_rules(path: Option<&Path>) -> Result<EntityRules, PipelineError> {
    match path {
        None => Ok(EntityRules::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| PipelineError::Config(format!("cannot read rules {}: {e}", p.display())))?;
            EntityRules::from_toml(&text)
                .map_err(|e| PipelineError::Config(format!("invalid rules {}: {e}", p.display())))
        }
    }
}

/// Parsed and joined inputs.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    pub parcel_rejects: Vec<Reject>,
    pub tract_rejects: Vec<Reject>,
    pub parcel_rows: usize,
    pub tract_rows: usize,
}

/// Parses both input files and joins them. Parcels whose tract is absent
/// from the tract table are reported as `UnknownTract` rejects.
pub fn ingest(parcels: &Path, tracts: &Path, schema: &SchemaConfig) -> Result<Ingested, PipelineError> {
    let p = parse_parcels(open(parcels)?, &schema.parcels).map_err(|e| parse_err(parcels, e))?;
    let t = parse_demographics(open(tracts)?, &schema.tracts).map_err(|e| parse_err(tracts, e))?;
    let parcel_rows = p.input_rows();
    let tract_rows = t.input_rows();
    let lines = p.accepted_rows.clone();
    let mut parcel_rejects = p.rejects;
    let assembled = Dataset::assemble(p.records.clone(), t.records);
    for &i in &assembled.quarantined {
        let rec = &p.records[i];
        parcel_rejects.push(Reject {
            row_number: lines[i],
            reason: RejectReason::UnknownTract(rec.geoid.clone()),
            raw_line: format!(
                "{},{},{},{}",
                rec.parcel_id, rec.geoid, rec.assessed_value, rec.owner_name_raw
            ),
        });
    }
    parcel_rejects.sort_by_key(|r| r.row_number);
    Ok(Ingested {
        dataset: assembled.dataset,
        parcel_rejects,
        tract_rejects: t.rejects,
        parcel_rows,
        tract_rows,
    })
}

/// Imputes race for every individual owner in `ds`.
pub fn impute(
    ds: &Dataset,
    input: &PredictionInput,
    convention: NameConvention,
    floor: f64,
) -> Result<(BTreeMap<String, Imputation>, Vec<Reject>), PipelineError> {
    let imp = |e: String| PipelineError::Imputation(e);
    match input {
        PredictionInput::Priors(path) => {
            let priors = SurnamePriorTable::load(open(path)?).map_err(|e| imp(format!("{}: {e}", path.display())))?;
            let out = impute_dataset(
                ds,
                ImputationSource::Bisg {
                    priors: &priors,
                    convention,
                    floor,
                },
            )
            .map_err(|e| imp(e.to_string()))?;
            Ok((out, Vec::new()))
        }
        PredictionInput::Predictions(path) => {
            let file = load_predictions(open(path)?).map_err(|e| imp(format!("{}: {e}", path.display())))?;
            let out =
                impute_dataset(ds, ImputationSource::External(&file.predictions)).map_err(|e| imp(e.to_string()))?;
            Ok((out, file.rejects))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config_hash: String,
    parameters: &'a RunParams,
    inputs: &'a BTreeMap<String, String>,
    row_counts: &'a BTreeMap<String, usize>,
    warnings: &'a [String],
    outputs: BTreeMap<String, String>,
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub bundle: Bundle,
    pub warnings: Vec<String>,
    pub row_counts: BTreeMap<String, usize>,
    pub metrics: Option<MetricsReport>,
}

fn hash_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| parse_err(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Runs every stage and returns the bundle without writing it.
pub fn build_bundle(cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    cfg.validate()?;
    let params = &cfg.params;
    let schema = load_schema(cfg.schema.as_deref())?;
    let rules = load_rules(cfg.rules.as_deref())?;
    let mut warnings = Vec::new();
    let mut counts = BTreeMap::new();
    let mut bundle = Bundle::default();

    let ingested = ingest(&cfg.parcels, &cfg.tracts, &schema)?;
    counts.insert("parcel_rows".to_string(), ingested.parcel_rows);
    counts.insert("parcel_rejects".to_string(), ingested.parcel_rejects.len());
    counts.insert("tract_rows".to_string(), ingested.tract_rows);
    counts.insert("tract_rejects".to_string(), ingested.tract_rejects.len());
    bundle.insert("rejects.csv", report::rejects_csv(&ingested.parcel_rejects));
    bundle.insert("tract_rejects.csv", report::rejects_csv(&ingested.tract_rejects));
    if !ingested.parcel_rejects.is_empty() {
        warnings.push(format!(
            "{} parcel rows rejected (see rejects.csv)",
            ingested.parcel_rejects.len()
        ));
    }
    if !ingested.tract_rejects.is_empty() {
        warnings.push(format!(
            "{} tract rows rejected (see tract_rejects.csv)",
            ingested.tract_rejects.len()
        ));
    }

    let classified = classify_dataset(&ingested.dataset, &rules);
    let parcel_counts: BTreeMap<_, usize> = classified
        .parcels_by_tract()
        .into_iter()
        .map(|(g, ps)| (g.clone(), ps.len()))
        .collect();
    let filtered = filter_small_tracts(&classified, params.min_properties);
    let excluded: Vec<_> = filtered
        .excluded
        .iter()
        .map(|g| (g.clone(), parcel_counts.get(g).copied().unwrap_or(0)))
        .collect();
    bundle.insert("excluded_tracts.csv", report::excluded_tracts_csv(&excluded));
    let ds = filtered.dataset;
    counts.insert("tracts_excluded".to_string(), excluded.len());
    counts.insert("tracts_analyzed".to_string(), ds.tracts().len());
    counts.insert("parcels_analyzed".to_string(), ds.parcels().len());
    if ds.tracts().is_empty() {
        warnings.push(format!(
            "no tract has at least {} parcels; profiles are empty",
            params.min_properties
        ));
    }

    let (imputations, prediction_rejects) = impute(&ds, &cfg.predictions, params.name_convention, params.prior_floor)?;
    if let PredictionInput::Predictions(_) = cfg.predictions {
        bundle.insert("prediction_rejects.csv", report::rejects_csv(&prediction_rejects));
        counts.insert("prediction_rejects".to_string(), prediction_rejects.len());
    }
    let mut imputed = Vec::new();
    write_imputations(&mut imputed, &ds, &imputations).map_err(|e| PipelineError::Output(e.to_string()))?;
    bundle.insert("imputations.csv", imputed);

    let profiles = aggregate_dataset(&ds, &imputations)?;
    let joined = join_demographics(&profiles, &ds)?;
    counts.insert(
        "individual_parcels".to_string(),
        profiles.iter().map(|p| p.n_individual as usize).sum(),
    );
    bundle.insert("profiles.csv", report::profiles_csv(&profiles));

    let mut disparities = Vec::new();
    for (p, d) in &joined {
        match disparity(p, d) {
            Ok(rows) => disparities.extend(rows),
            Err(AnalyticsError::NoIndividualOwners(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    bundle.insert("disparity.csv", report::disparity_csv(&disparities));

    let majority = match majority_profile_table(&joined, params.majority_mode, params.weighting) {
        Ok(rows) => rows,
        Err(AnalyticsError::EmptyInput) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    bundle.insert("majority_profiles.csv", report::majority_profiles_csv(&majority));

    let extreme = find_extreme_disparity(&joined, &params.extreme);
    counts.insert("extreme_tracts".to_string(), extreme.len());
    bundle.insert("extreme_tracts.csv", report::extreme_tracts_csv(&extreme));
    bundle.insert(
        "combined_ownership.csv",
        report::combined_ownership_csv(&combined_ownership_rows(&joined)),
    );
    bundle.insert(
        "dominant_ownership.csv",
        report::dominant_ownership_csv(&dominant_ownership_table(&joined, GroupingMode::Plurality)),
    );

    let urban = urbanization(&profiles, &joined);
    bundle.insert("urbanization.csv", report::urbanization_csv(&urban.0));
    bundle.insert("urbanization_summary.csv", report::urbanization_summary_csv(&urban.1));

    let value_shares = match value_share_by_race(&profiles) {
        Ok(s) => Some(s),
        Err(AnalyticsError::EmptyInput | AnalyticsError::ZeroTotalValue) => None,
        Err(e) => return Err(e.into()),
    };
    bundle.insert("value_shares.csv", report::value_shares_csv(value_shares.as_ref()));

    let metrics = match &cfg.ground_truth {
        None => None,
        Some(path) => evaluate_ground_truth(path, &ds, &imputations, &mut bundle, &mut counts, &mut warnings)?,
    };

    let stress = match params.stress {
        StressSource::None => None,
        StressSource::Full => Some(StressParams::full_model()),
        StressSource::NameOnly => Some(StressParams::name_only_model()),
        StressSource::GroundTruth => match &metrics {
            Some(m) => {
                Some(StressParams::from_metrics(&m.per_class).map_err(|e| PipelineError::Analytics(e.to_string()))?)
            }
            None => {
                warnings.push("stress rates unavailable: no scored ground-truth records".into());
                None
            }
        },
    };
    if let Some(sp) = stress {
        bundle.insert("stressed_tracts.csv", stressed_tracts(&profiles, &sp, &mut warnings)?);
    }

    let notes = report::emit_plot_data(&mut bundle, &disparities, params.lowess_frac, params.lowess_iters);
    for (race, e) in notes.skipped_trends {
        warnings.push(format!("{race} trend skipped: {e}"));
    }

    let mut inputs = BTreeMap::new();
    inputs.insert("parcels".to_string(), hash_file(&cfg.parcels)?);
    inputs.insert("tracts".to_string(), hash_file(&cfg.tracts)?);
    match &cfg.predictions {
        PredictionInput::Priors(p) => inputs.insert("priors".to_string(), hash_file(p)?),
        PredictionInput::Predictions(p) => inputs.insert("predictions".to_string(), hash_file(p)?),
    };
    for (key, path) in [
        ("ground_truth", &cfg.ground_truth),
        ("rules", &cfg.rules),
        ("schema", &cfg.schema),
    ] {
        if let Some(p) = path {
            inputs.insert(key.to_string(), hash_file(p)?);
        }
    }
    let config_hash =
        sha256_hex(&serde_json::to_vec(&(params, &inputs)).map_err(|e| PipelineError::Output(e.to_string()))?);
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config_hash,
        parameters: params,
        inputs: &inputs,
        row_counts: &counts,
        warnings: &warnings,
        outputs: bundle.digests(),
    };
    bundle.insert("manifest.json", report::json_bytes(&manifest));
    Ok(RunSummary {
        bundle,
        warnings,
        row_counts: counts,
        metrics,
    })
}

type UrbanOutputs = (
    Vec<(crate::ingest::GeoId, crate::analytics::UrbanClass, u64)>,
    Vec<crate::analytics::UrbanSummaryRow>,
);

fn urbanization(
    profiles: &[TractOwnershipProfile],
    joined: &[(&TractOwnershipProfile, &crate::ingest::TractDemographics)],
) -> UrbanOutputs {
    let Some(threshold) = property_count_quartile(profiles) else {
        return (Vec::new(), Vec::new());
    };
    let classified: Vec<_> = joined
        .iter()
        .map(|(p, d)| (classify_urbanization(p, d, threshold), *p, *d))
        .collect();
    let rows = classified
        .iter()
        .map(|(c, p, _)| (p.geoid.clone(), *c, p.n_properties))
        .collect();
    (rows, urbanization_summary(&classified))
}

fn evaluate_ground_truth(
    path: &Path,
    ds: &Dataset,
    imputations: &BTreeMap<String, Imputation>,
    bundle: &mut Bundle,
    counts: &mut BTreeMap<String, usize>,
    warnings: &mut Vec<String>,
) -> Result<Option<MetricsReport>, PipelineError> {
    let (mut records, rejects) = load_ground_truth(open(path)?).map_err(|e| parse_err(path, e))?;
    bundle.insert("ground_truth_rejects.csv", report::rejects_csv(&rejects));
    counts.insert("ground_truth_records".to_string(), records.len());
    counts.insert("ground_truth_rejects".to_string(), rejects.len());
    let income: BTreeMap<&str, Option<f64>> = ds
        .parcels()
        .iter()
        .map(|p| (p.parcel_id.as_str(), ds.tract(&p.geoid).and_then(|t| t.median_income)))
        .collect();
    fill_ground_truth(&mut records, imputations, &income);
    match metrics_report(&records) {
        Ok(m) => {
            bundle.insert("metrics.json", report::json_bytes(&m));
            Ok(Some(m))
        }
        Err(e) => {
            warnings.push(format!("no metrics: {e}"));
            Ok(None)
        }
    }
}

/// Fills blank predictions from the imputations and blank incomes from the
/// record's tract. Record ids are parcel ids.
pub fn fill_ground_truth(
    records: &mut [LabeledRecord],
    imputations: &BTreeMap<String, Imputation>,
    income: &BTreeMap<&str, Option<f64>>,
) {
    for r in records {
        if r.predicted.is_none() {
            r.predicted = imputations.get(&r.record_id).and_then(Imputation::race);
        }
        if r.median_income.is_none() {
            r.median_income = income.get(r.record_id.as_str()).copied().flatten();
        }
    }
}

/// Stresses the individual shares of every tract that has individual
/// owners. Minority groups without an FNR are left out.
pub fn stressed_tracts(
    profiles: &[TractOwnershipProfile],
    params: &StressParams,
    warnings: &mut Vec<String>,
) -> Result<Vec<u8>, PipelineError> {
    let minorities: Vec<RaceCategory> = RaceCategory::ALL
        .into_iter()
        .filter(|r| r.is_minority() && params.fnr_by_race[*r].is_some())
        .collect();
    let mut rows = Vec::new();
    for p in profiles {
        let Some(shares) = p.indiv_share_by_race else { continue };
        let input = StressInput {
            white_share: shares[RaceCategory::White],
            minority_shares: minorities.iter().map(|&r| (r, shares[r])).collect(),
        };
        let mut stressed = stress_adjust(&input, params).map_err(|e| PipelineError::Analytics(e.to_string()))?;
        for r in stressed.cap_at_one() {
            warnings.push(format!("stressed {r} share in {} capped at 1", p.geoid));
        }
        rows.push((p.geoid.clone(), input.white_share, input.minority_shares, stressed));
    }
    Ok(report::stressed_tracts_csv(&minorities, &rows))
}

/// Builds the bundle and writes it to `cfg.out`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    let summary = build_bundle(cfg)?;
    std::fs::create_dir_all(&cfg.out)
        .and_then(|_| summary.bundle.write_to(&cfg.out))
        .map_err(|e| PipelineError::Output(format!("{}: {e}", cfg.out.display())))?;
    Ok(summary)
}

/// Stress rates measured from a labelled validation file whose predicted
/// column is filled in.
pub fn stress_params_from_ground_truth(path: &Path) -> Result<StressParams, PipelineError> {
    let (records, _) = load_ground_truth(open(path)?).map_err(|e| parse_err(path, e))?;
    let pairs: Vec<_> = records
        .iter()
        .filter_map(|r| r.predicted.map(|p| (r.truth, p)))
        .collect();
    let cm = crate::evaluation::build_confusion(pairs).map_err(|e| PipelineError::Analytics(e.to_string()))?;
    StressParams::from_metrics(&class_metrics(&cm)).map_err(|e| PipelineError::Analytics(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let file = ConfigLayer {
            min_properties: Some(50),
            seed: Some(9),
            ..Default::default()
        };
        let flags = ConfigLayer {
            min_properties: Some(10),
            ..Default::default()
        };
        let merged = flags.over(file);
        assert_eq!(merged.min_properties, Some(10));
        assert_eq!(merged.seed, Some(9));
    }

    #[test]
    fn missing_parcels_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let layer = ConfigLayer {
            parcels: Some(dir.path().join("nope.csv")),
            tracts: Some(dir.path().join("t.csv")),
            priors: Some(dir.path().join("p.csv")),
            out: Some(dir.path().join("out")),
            ..Default::default()
        };
        let err = layer.resolve().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("nope.csv"), "{err}");
    }

    #[test]
    fn config_file_paths_are_relative_to_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "parcels = \"in/p.csv\"\nmajority_mode = \"plurality\"\nstress = \"name-only\"\n",
        )
        .unwrap();
        let layer = ConfigLayer::from_file(&path).unwrap();
        assert_eq!(layer.parcels.unwrap(), dir.path().join("in/p.csv"));
        assert_eq!(layer.majority_mode, Some(GroupingMode::Plurality));
        assert_eq!(layer.stress, Some(StressSource::NameOnly));
        std::fs::write(&path, "bogus = 1\n").unwrap();
        assert_eq!(ConfigLayer::from_file(&path).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn exactly_one_prediction_input() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("f.csv");
        std::fs::write(&f, "x\n").unwrap();
        let base = ConfigLayer {
            parcels: Some(f.clone()),
            tracts: Some(f.clone()),
            out: Some(dir.path().join("out")),
            ..Default::default()
        };
        assert!(base.clone().resolve().is_err());
        let both = ConfigLayer {
            priors: Some(f.clone()),
            predictions: Some(f.clone()),
            ..base.clone()
        };
        assert!(both.resolve().is_err());
        let ok = ConfigLayer {
            priors: Some(f.clone()),
            ..base
        };
        assert!(ok.resolve().is_ok());
    }
}
