use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tract_equity::analytics::{GroupingMode, OwnershipMeasure, Weighting};
use tract_equity::entity::{classify_dataset, NameConvention};
use tract_equity::evaluation::{load_ground_truth, metrics_report, stress_adjust, StressInput, StressParams};
use tract_equity::impute::write_imputations;
use tract_equity::ingest::{write_demographics, write_parcels};
use tract_equity::pipeline::{self, ConfigLayer, PipelineError, PredictionInput, StressSource};
use tract_equity::report::{self, Bundle};
use tract_equity::synth::{generate_synthetic, SyntheticSpec};
use tract_equity::RaceCategory;

#[derive(Parser)]
#[command(name = "tract-equity", version, about = "Census-tract homeownership equity analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate parcel and tract files.
    Ingest(IngestArgs),
    /// Classify owners as individual, corporate, government or trust.
    ClassifyEntities(ClassifyArgs),
    /// Impute owner race from surname and tract priors or a predictions file.
    Impute(RunArgs),
    /// Tract profiles and disparity tables, without evaluation.
    Analyze(RunArgs),
    /// Classifier metrics from a labelled file with predictions filled in.
    Evaluate(EvaluateArgs),
    /// Apply error-rate stress adjustment to ownership shares.
    Stress(StressArgs),
    /// Generate a synthetic dataset with planted ground truth.
    Synth(SynthArgs),
    /// Run every stage and write the full report bundle.
    RunAll(RunArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    parcels: PathBuf,
    #[arg(long)]
    tracts: PathBuf,
    /// TOML file mapping input column names.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    parcels: PathBuf,
    #[arg(long)]
    tracts: PathBuf,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// TOML keyword lists replacing the built-in entity rules.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    parcels: Option<PathBuf>,
    #[arg(long)]
    tracts: Option<PathBuf>,
    /// Surname prior table for BISG imputation.
    #[arg(long)]
    priors: Option<PathBuf>,
    /// Per-parcel race probabilities from another classifier.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Minimum parcels for a tract to be analyzed [default: 100]
    #[arg(long)]
    min_properties: Option<usize>,
    #[arg(long, value_enum)]
    majority_mode: Option<GroupingMode>,
    #[arg(long, value_enum)]
    weighting: Option<Weighting>,
    /// White ownership threshold for extreme-disparity tracts [default: 0.40]
    #[arg(long)]
    extreme_white_owner_min: Option<f64>,
    /// White population ceiling for extreme-disparity tracts [default: 0.5]
    #[arg(long)]
    extreme_white_pop_max: Option<f64>,
    #[arg(long, value_enum)]
    extreme_measure: Option<OwnershipMeasure>,
    #[arg(long, value_enum)]
    name_convention: Option<NameConvention>,
    #[arg(long)]
    prior_floor: Option<f64>,
    #[arg(long, value_enum)]
    stress: Option<StressSource>,
    /// LOWESS neighbourhood fraction [default: 0.6667]
    #[arg(long)]
    lowess_frac: Option<f64>,
    #[arg(long)]
    lowess_iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn layer(&self) -> Result<ConfigLayer, PipelineError> {
        let flags = ConfigLayer {
            parcels: self.parcels.clone(),
            tracts: self.tracts.clone(),
            priors: self.priors.clone(),
            predictions: self.predictions.clone(),
            ground_truth: self.ground_truth.clone(),
            rules: self.rules.clone(),
            schema: self.schema.clone(),
            out: self.out.clone(),
            min_properties: self.min_properties,
            majority_mode: self.majority_mode,
            weighting: self.weighting,
            extreme_white_owner_min: self.extreme_white_owner_min,
            extreme_white_pop_max: self.extreme_white_pop_max,
            extreme_measure: self.extreme_measure,
            name_convention: self.name_convention,
            prior_floor: self.prior_floor,
            stress: self.stress,
            lowess_frac: self.lowess_frac,
            lowess_iters: self.lowess_iters,
            seed: self.seed,
        };
        match &self.config {
            Some(path) => Ok(flags.over(ConfigLayer::from_file(path)?)),
            None => Ok(flags),
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    /// CSV with record_id, true_race, predicted_race and optional median_income.
    #[arg(long)]
    ground_truth: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StressArgs {
    /// profiles.csv written by analyze or run-all.
    #[arg(long, conflicts_with = "white_share")]
    profiles: Option<PathBuf>,
    /// White share of individual owners, for a single adjustment.
    #[arg(long, requires = "minority")]
    white_share: Option<f64>,
    /// Minority shares as RACE=SHARE, e.g. black=0.213.
    #[arg(long, value_parser = parse_share)]
    minority: Vec<(RaceCategory, f64)>,
    /// Rate source: full, name-only or ground-truth.
    #[arg(long, value_enum, default_value = "full")]
    rates: StressSource,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Directory for stressed_tracts.csv (with --profiles).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_share(s: &str) -> Result<(RaceCategory, f64), String> {
    let (race, share) = s.split_once('=').ok_or("expected RACE=SHARE")?;
    let race = race.parse::<RaceCategory>().map_err(|e| e.to_string())?;
    let share = share.parse::<f64>().map_err(|e| e.to_string())?;
    Ok((race, share))
}

#[derive(Args)]
struct SynthArgs {
    /// TOML generator settings; defaults give 50 tracts of about 200 parcels.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn write_bundle(bundle: &Bundle, out: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out)
        .and_then(|_| bundle.write_to(out))
        .map_err(|e| PipelineError::Output(format!("{}: {e}", out.display())))
}

fn config_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Config(e.to_string())
}

fn run_ingest(a: &IngestArgs, classify: Option<&Path>) -> Result<(), PipelineError> {
    for (p, what) in [(&a.parcels, "parcels"), (&a.tracts, "tracts")] {
        if !p.is_file() {
            return Err(PipelineError::Config(format!("{what} file not found: {}", p.display())));
        }
    }
    let schema = pipeline::load_schema(a.schema.as_deref())?;
    let ingested = pipeline::ingest(&a.parcels, &a.tracts, &schema)?;
    let mut ds = ingested.dataset;
    if let Some(rules) = classify {
        let rules = pipeline::load_rules(Some(rules).filter(|p| !p.as_os_str().is_empty()))?;
        ds = classify_dataset(&ds, &rules);
    }
    let mut bundle = Bundle::default();
    let out_err = |e: tract_equity::ingest::IngestError| PipelineError::Output(e.to_string());
    let mut parcels = Vec::new();
    write_parcels(&mut parcels, ds.parcels()).map_err(out_err)?;
    let name = if classify.is_some() {
        "classified_parcels.csv"
    } else {
        "parcels.csv"
    };
    bundle.insert(name, parcels);
    let mut tracts = Vec::new();
    write_demographics(&mut tracts, &ds.tracts().values().collect::<Vec<_>>()).map_err(out_err)?;
    bundle.insert("tracts.csv", tracts);
    bundle.insert("rejects.csv", report::rejects_csv(&ingested.parcel_rejects));
    bundle.insert("tract_rejects.csv", report::rejects_csv(&ingested.tract_rejects));
    write_bundle(&bundle, &a.out)?;
    println!(
        "{} parcels accepted, {} rejected; {} tracts accepted, {} rejected",
        ds.parcels().len(),
        ingested.parcel_rejects.len(),
        ds.tracts().len(),
        ingested.tract_rejects.len()
    );
    Ok(())
}

fn run_impute(a: &RunArgs) -> Result<(), PipelineError> {
    let cfg = a.layer()?.resolve()?;
    let schema = pipeline::load_schema(cfg.schema.as_deref())?;
    let rules = pipeline::load_rules(cfg.rules.as_deref())?;
    let ingested = pipeline::ingest(&cfg.parcels, &cfg.tracts, &schema)?;
    let ds = classify_dataset(&ingested.dataset, &rules);
    let (imputations, rejects) = pipeline::impute(
        &ds,
        &cfg.predictions,
        cfg.params.name_convention,
        cfg.params.prior_floor,
    )?;
    let mut bytes = Vec::new();
    write_imputations(&mut bytes, &ds, &imputations).map_err(|e| PipelineError::Output(e.to_string()))?;
    let mut bundle = Bundle::default();
    bundle.insert("imputations.csv", bytes);
    if let PredictionInput::Predictions(_) = cfg.predictions {
        bundle.insert("prediction_rejects.csv", report::rejects_csv(&rejects));
    }
    write_bundle(&bundle, &cfg.out)?;
    println!("{} parcels imputed", imputations.len());
    Ok(())
}

fn run_full(a: &RunArgs, evaluate: bool) -> Result<(), PipelineError> {
    let mut layer = a.layer()?;
    if !evaluate {
        layer.ground_truth = None;
        layer.stress = layer.stress.filter(|s| *s != StressSource::GroundTruth);
    }
    let cfg = layer.resolve()?;
    let summary = pipeline::run_pipeline(&cfg)?;
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{} tracts analyzed, {} excluded; bundle written to {}",
        summary.row_counts.get("tracts_analyzed").copied().unwrap_or(0),
        summary.row_counts.get("tracts_excluded").copied().unwrap_or(0),
        cfg.out.display()
    );
    if let Some(m) = &summary.metrics {
        println!("accuracy {:.4} over {} records", m.accuracy, m.n_records);
    }
    Ok(())
}

fn run_evaluate(a: &EvaluateArgs) -> Result<(), PipelineError> {
    let file = std::fs::File::open(&a.ground_truth).map_err(|e| {
        PipelineError::Config(format!(
            "ground truth file not found: {}: {e}",
            a.ground_truth.display()
        ))
    })?;
    let (records, rejects) =
        load_ground_truth(std::io::BufReader::new(file)).map_err(|e| PipelineError::Parse(e.to_string()))?;
    let m = metrics_report(&records).map_err(|e| PipelineError::Analytics(e.to_string()))?;
    let mut bundle = Bundle::default();
    bundle.insert("metrics.json", report::json_bytes(&m));
    bundle.insert("ground_truth_rejects.csv", report::rejects_csv(&rejects));
    write_bundle(&bundle, &a.out)?;
    println!(
        "accuracy {:.4}, weighted precision {:.4}, weighted recall {:.4}, weighted F1 {:.4}",
        m.accuracy, m.weighted.precision, m.weighted.recall, m.weighted.f1
    );
    Ok(())
}

type ProfileShares = Vec<(String, BTreeMap<RaceCategory, f64>)>;

fn read_profile_shares(path: &Path) -> Result<ProfileShares, PipelineError> {
    let perr = |e: csv::Error| PipelineError::Parse(format!("{}: {e}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(perr)?;
    let header = rdr.headers().map_err(perr)?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PipelineError::Parse(format!("{}: missing column {name}", path.display())))
    };
    let geo = col("geoid")?;
    let cols: Vec<(RaceCategory, usize)> = RaceCategory::ALL
        .iter()
        .map(|&r| col(&format!("indiv_share_{}", r.key())).map(|c| (r, c)))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(perr)?;
        let mut shares = BTreeMap::new();
        for &(r, c) in &cols {
            let raw = rec.get(c).unwrap_or("");
            if raw.is_empty() {
                continue;
            }
            let v = raw
                .parse::<f64>()
                .map_err(|e| PipelineError::Parse(format!("{}: {e}", path.display())))?;
            shares.insert(r, v);
        }
        if shares.len() == cols.len() {
            out.push((rec.get(geo).unwrap_or("").to_string(), shares));
        }
    }
    Ok(out)
}

fn run_stress(a: &StressArgs) -> Result<(), PipelineError> {
    let params = match a.rates {
        StressSource::Full | StressSource::None => StressParams::full_model(),
        StressSource::NameOnly => StressParams::name_only_model(),
        StressSource::GroundTruth => {
            let gt = a
                .ground_truth
                .as_deref()
                .ok_or_else(|| config_err("--rates ground-truth needs --ground-truth"))?;
            pipeline::stress_params_from_ground_truth(gt)?
        }
    };
    if let Some(white) = a.white_share {
        let input = StressInput {
            white_share: white,
            minority_shares: a.minority.clone(),
        };
        let s = stress_adjust(&input, &params).map_err(config_err)?;
        println!("White {:.4} -> {:.4}", white, s.white);
        for ((r, before), (_, after)) in input.minority_shares.iter().zip(&s.minority) {
            println!("{r} {before:.4} -> {after:.4}");
        }
        return Ok(());
    }
    let path = a
        .profiles
        .as_deref()
        .ok_or_else(|| config_err("give --profiles or --white-share"))?;
    if !path.is_file() {
        return Err(PipelineError::Config(format!(
            "profiles file not found: {}",
            path.display()
        )));
    }
    let out = a
        .out
        .as_deref()
        .ok_or_else(|| config_err("--out is required with --profiles"))?;
    let minorities: Vec<RaceCategory> = RaceCategory::ALL
        .into_iter()
        .filter(|r| r.is_minority() && params.fnr_by_race[*r].is_some())
        .collect();
    let mut rows = Vec::new();
    for (geoid, shares) in read_profile_shares(path)? {
        let input = StressInput {
            white_share: shares[&RaceCategory::White],
            minority_shares: minorities.iter().map(|r| (*r, shares[r])).collect(),
        };
        let mut s = stress_adjust(&input, &params).map_err(|e| PipelineError::Analytics(e.to_string()))?;
        for r in s.cap_at_one() {
            eprintln!("warning: stressed {r} share in {geoid} capped at 1");
        }
        let geoid = tract_equity::ingest::validate_geoid(&geoid).map_err(|e| PipelineError::Parse(e.to_string()))?;
        rows.push((geoid, input.white_share, input.minority_shares, s));
    }
    let mut bundle = Bundle::default();
    bundle.insert("stressed_tracts.csv", report::stressed_tracts_csv(&minorities, &rows));
    write_bundle(&bundle, out)?;
    println!("{} tracts stressed", rows.len());
    Ok(())
}

fn run_synth(a: &SynthArgs) -> Result<(), PipelineError> {
    let spec = match &a.spec {
        None => SyntheticSpec::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| PipelineError::Config(format!("cannot read spec {}: {e}", p.display())))?;
            SyntheticSpec::from_toml(&text).map_err(config_err)?
        }
    };
    let data = generate_synthetic(&spec, a.seed).map_err(config_err)?;
    data.write_to_dir(&a.out)
        .map_err(|e| PipelineError::Output(e.to_string()))?;
    println!(
        "{} tracts, {} parcels written to {}",
        data.tracts.len(),
        data.parcels.len(),
        a.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TRACT_EQUITY_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(a) => run_ingest(a, None),
        Command::ClassifyEntities(a) => {
            let ingest = IngestArgs {
                parcels: a.parcels.clone(),
                tracts: a.tracts.clone(),
                schema: a.schema.clone(),
                out: a.out.clone(),
            };
            run_ingest(&ingest, Some(a.rules.as_deref().unwrap_or(Path::new(""))))
        }
        Command::Impute(a) => run_impute(a),
        Command::Analyze(a) => run_full(a, false),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Stress(a) => run_stress(a),
        Command::Synth(a) => run_synth(a),
        Command::RunAll(a) => run_full(a, true),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
