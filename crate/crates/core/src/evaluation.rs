//! Ground-truth validation of race predictions and stress adjustment of
//! ownership shares by classifier error rates.

use std::io::Read;
use std::ops::{Add, AddAssign};

use serde::Serialize;
use thiserror::Error;

use crate::ingest::{parse_number, IngestError, Reject, RejectReason, Row, RowReader};
use crate::race::{RaceCategory, RaceMap};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no records")]
    EmptyInput,
    #[error("need at least {needed} records with income, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("{what} = {value} must lie in [0, 1)")]
    RateOutOfRange { what: String, value: f64 },
    #[error("no FNR available for {0}")]
    FnrUnavailable(RaceCategory),
    #[error("share {what} = {value} must lie in [0, 1]")]
    ShareOutOfRange { what: String, value: f64 },
    #[error("stress adjustment is for minority groups, got {0}")]
    NotAMinority(RaceCategory),
}

/// 5×5 counts; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 5]; 5],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 5]; 5]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn get(&self, truth: RaceCategory, predicted: RaceCategory) -> u64 {
        self.counts[truth.index()][predicted.index()]
    }

    /// Row sum: number of records whose true class is `c`.
    pub fn support(&self, c: RaceCategory) -> u64 {
        self.counts[c.index()].iter().sum()
    }

    /// Column sum: number of records predicted as `c`.
    pub fn predicted(&self, c: RaceCategory) -> u64 {
        self.counts.iter().map(|row| row[c.index()]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..5).map(|i| self.counts[i][i]).sum()
    }

    pub fn transpose(&self) -> Self {
        ConfusionMatrix {
            counts: std::array::from_fn(|i| std::array::from_fn(|j| self.counts[j][i])),
        }
    }

    pub fn accuracy(&self) -> f64 {
        accuracy(self)
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;
    fn add(mut self, rhs: ConfusionMatrix) -> ConfusionMatrix {
        self += rhs;
        self
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, rhs: ConfusionMatrix) {
        for i in 0..5 {
            for j in 0..5 {
                self.counts[i][j] += rhs.counts[i][j];
            }
        }
    }
}

pub fn build_confusion(
    pairs: impl IntoIterator<Item = (RaceCategory, RaceCategory)>,
) -> Result<ConfusionMatrix, EvalError> {
    let mut cm = ConfusionMatrix::default();
    for (t, p) in pairs {
        cm.counts[t.index()][p.index()] += 1;
    }
    if cm.total() == 0 {
        return Err(EvalError::EmptyInput);
    }
    Ok(cm)
}

/// Trace over total; 0 for an empty matrix.
pub fn accuracy(cm: &ConfusionMatrix) -> f64 {
    ratio(cm.trace(), cm.total())
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest statistics for a single class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassStats {
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// FP / (FP + TN).
    pub fpr: f64,
    /// FN / (FN + TP) = 1 - recall.
    pub fnr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics(pub RaceMap<ClassStats>);

impl ClassMetrics {
    pub fn get(&self, c: RaceCategory) -> &ClassStats {
        &self.0[c]
    }
}

/// Per-class metrics. Undefined ratios (zero denominators) are reported
/// as 0.
pub fn class_metrics(cm: &ConfusionMatrix) -> ClassMetrics {
    let total = cm.total();
    ClassMetrics(RaceMap::from_fn(|c| {
        let tp = cm.get(c, c);
        let support = cm.support(c);
        let predicted = cm.predicted(c);
        let fp = predicted - tp;
        let negatives = total - support;
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassStats {
            support,
            precision,
            recall,
            f1,
            fpr: ratio(fp, negatives),
            fnr: 1.0 - recall,
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Support-weighted averages of per-class precision, recall and F1.
///
/// Weighted recall is Σ (support/N)·(TP/support) = trace/N, so it is
/// evaluated in that closed form and equals [`accuracy`] exactly.
pub fn weighted_metrics(cm: &ConfusionMatrix) -> WeightedMetrics {
    let total = cm.total();
    let m = class_metrics(cm);
    let avg = |f: fn(&ClassStats) -> f64| -> f64 {
        if total == 0 {
            return 0.0;
        }
        RaceCategory::ALL
            .iter()
            .map(|&c| m.get(c).support as f64 * f(m.get(c)))
            .sum::<f64>()
            / total as f64
    };
    WeightedMetrics {
        precision: avg(|s| s.precision),
        recall: accuracy(cm),
        f1: avg(|s| s.f1),
    }
}

/// Error rates used to stress ownership shares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StressParams {
    pub white_fpr: f64,
    pub fnr_by_race: RaceMap<Option<f64>>,
}

impl StressParams {
    pub fn new(white_fpr: f64, fnr_by_race: RaceMap<Option<f64>>) -> Result<Self, EvalError> {
        check_rate("white FPR", white_fpr)?;
        for (r, v) in fnr_by_race.iter() {
            if let Some(v) = v {
                check_rate(&format!("{r} FNR"), *v)?;
            }
        }
        Ok(StressParams { white_fpr, fnr_by_race })
    }

    /// White FPR and class FNRs from a validation confusion matrix. Classes
    /// without support, or never predicted correctly, get no FNR.
    pub fn from_metrics(m: &ClassMetrics) -> Result<Self, EvalError> {
        let fnr = m.0.map(|_, s| (s.support > 0 && s.fnr < 1.0).then_some(s.fnr));
        StressParams::new(m.get(RaceCategory::White).fpr, fnr)
    }

    /// Published Full-Model rates (White FPR 6.9%, Black FNR 9.93%,
    /// Hispanic FNR 15.25%).
    pub fn full_model() -> Self {
        let mut fnr = RaceMap::<Option<f64>>::default();
        fnr[RaceCategory::Black] = Some(0.0993);
        fnr[RaceCategory::Hispanic] = Some(0.1525);
        StressParams {
            white_fpr: 0.069,
            fnr_by_race: fnr,
        }
    }

    /// Published Name-Only rates (White FPR 13.8%, Black FNR 20.62%,
    /// Hispanic FNR 27.71%).
    pub fn name_only_model() -> Self {
        let mut fnr = RaceMap::<Option<f64>>::default();
        fnr[RaceCategory::Black] = Some(0.2062);
        fnr[RaceCategory::Hispanic] = Some(0.2771);
        StressParams {
            white_fpr: 0.138,
            fnr_by_race: fnr,
        }
    }
}

fn check_rate(what: &str, v: f64) -> Result<(), EvalError> {
    if (0.0..1.0).contains(&v) {
        Ok(())
    } else {
        Err(EvalError::RateOutOfRange {
            what: what.to_string(),
            value: v,
        })
    }
}

fn check_share(what: &str, v: f64) -> Result<(), EvalError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(EvalError::ShareOutOfRange {
            what: what.to_string(),
            value: v,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StressInput {
    pub white_share: f64,
    pub minority_shares: Vec<(RaceCategory, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StressedShares {
    pub white: f64,
    pub minority: Vec<(RaceCategory, f64)>,
}

impl StressedShares {
    /// Caps every share at 1 and returns the groups that were capped.
    pub fn cap_at_one(&mut self) -> Vec<RaceCategory> {
        let mut capped = Vec::new();
        for (r, v) in &mut self.minority {
            if *v > 1.0 {
                *v = 1.0;
                capped.push(*r);
            }
        }
        capped
    }
}

/// Shrinks White ownership by `(1 - white FPR)` and inflates each
/// minority share by `1 / (1 - FNR)`. Results are not renormalized.
pub fn stress_adjust(input: &StressInput, params: &StressParams) -> Result<StressedShares, EvalError> {
    check_share("white", input.white_share)?;
    check_rate("white FPR", params.white_fpr)?;
    let minority = input
        .minority_shares
        .iter()
        .map(|&(r, share)| {
            if !r.is_minority() {
                return Err(EvalError::NotAMinority(r));
            }
            check_share(&r.to_string(), share)?;
            let fnr = params.fnr_by_race[r].ok_or(EvalError::FnrUnavailable(r))?;
            check_rate(&format!("{r} FNR"), fnr)?;
            Ok((r, share / (1.0 - fnr)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StressedShares {
        white: input.white_share * (1.0 - params.white_fpr),
        minority,
    })
}

/// One validated record: truth, prediction and the record's tract median
/// income when known.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledRecord {
    pub record_id: String,
    pub truth: RaceCategory,
    pub predicted: Option<RaceCategory>,
    pub median_income: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecileAccuracy {
    /// 1..=10, lowest income first.
    pub decile: u8,
    pub n: usize,
    /// `None` when ties left the decile empty.
    pub accuracy: Option<f64>,
    pub income_min: Option<f64>,
    pub income_max: Option<f64>,
}

/// Accuracy within record-level income deciles.
///
/// Records are ranked by income; rank `i` of `n` falls in decile
/// `floor(10 i / n)`. Records with equal income all join the decile of the
/// lowest-ranked one among them.
pub fn accuracy_by_income_decile(
    records: &[(RaceCategory, RaceCategory, f64)],
) -> Result<Vec<DecileAccuracy>, EvalError> {
    let n = records.len();
    if n < 10 {
        return Err(EvalError::InsufficientData { needed: 10, got: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| records[a].2.total_cmp(&records[b].2));
    let mut correct = [0usize; 10];
    let mut count = [0usize; 10];
    let mut lo = [None::<f64>; 10];
    let mut hi = [None::<f64>; 10];
    let mut tie_decile = 0usize;
    for (rank, &i) in order.iter().enumerate() {
        let (t, p, income) = records[i];
        let tied = rank > 0 && records[order[rank - 1]].2 == income;
        if !tied {
            tie_decile = rank * 10 / n;
        }
        let d = tie_decile;
        count[d] += 1;
        correct[d] += usize::from(t == p);
        lo[d] = Some(lo[d].map_or(income, |v: f64| v.min(income)));
        hi[d] = Some(hi[d].map_or(income, |v: f64| v.max(income)));
    }
    Ok((0..10)
        .map(|d| DecileAccuracy {
            decile: d as u8 + 1,
            n: count[d],
            accuracy: (count[d] > 0).then(|| correct[d] as f64 / count[d] as f64),
            income_min: lo[d],
            income_max: hi[d],
        })
        .collect())
}

/// Reads `record_id,true_race,predicted_race[,median_income]`. The
/// prediction and income cells may be blank.
pub fn load_ground_truth<R: Read>(stream: R) -> Result<(Vec<LabeledRecord>, Vec<Reject>), IngestError> {
    let mut rows = RowReader::new(stream, ',')?;
    let id_col = rows.header.require("record_id")?;
    let true_col = rows.header.require("true_race")?;
    let pred_col = rows.header.find("predicted_race");
    let income_col = rows.header.find("median_income");
    let mut records = Vec::new();
    let mut rejects = Vec::new();
    while let Some(row) = rows.next_row()? {
        let (line, fields) = match row {
            Row::Bad(r) => {
                rejects.push(r);
                continue;
            }
            Row::Fields { line, fields } => (line, fields),
        };
        let cell = |c: Option<usize>| c.and_then(|c| fields.get(c)).map(|s| s.trim()).unwrap_or("");
        let parsed = (|| -> Result<LabeledRecord, RejectReason> {
            let record_id = cell(Some(id_col)).to_string();
            if record_id.is_empty() {
                return Err(RejectReason::EmptyField("record_id".into()));
            }
            let race = |col: &str, raw: &str| {
                raw.parse::<RaceCategory>().map_err(|_| RejectReason::InvalidNumber {
                    column: col.to_string(),
                    value: raw.to_string(),
                })
            };
            let truth = race("true_race", cell(Some(true_col)))?;
            let predicted = match cell(pred_col) {
                "" => None,
                raw => Some(race("predicted_race", raw)?),
            };
            let median_income = match cell(income_col) {
                "" => None,
                raw => Some(parse_number("median_income", raw)?),
            };
            Ok(LabeledRecord {
                record_id,
                truth,
                predicted,
                median_income,
            })
        })();
        match parsed {
            Ok(r) => records.push(r),
            Err(reason) => rejects.push(Reject {
                row_number: line,
                reason,
                raw_line: crate::ingest::join_fields(&fields, b','),
            }),
        }
    }
    Ok((records, rejects))
}

/// Everything written to `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n_records: u64,
    pub confusion_matrix: ConfusionMatrix,
    pub accuracy: f64,
    pub weighted: WeightedMetrics,
    pub per_class: ClassMetrics,
    pub income_deciles: Option<Vec<DecileAccuracy>>,
}

/// Builds the full report from records that carry predictions. Records
/// without a prediction are skipped; the decile curve is present when at
/// least ten records have an income.
pub fn metrics_report(records: &[LabeledRecord]) -> Result<MetricsReport, EvalError> {
    let scored: Vec<(RaceCategory, RaceCategory, Option<f64>)> = records
        .iter()
        .filter_map(|r| r.predicted.map(|p| (r.truth, p, r.median_income)))
        .collect();
    let cm = build_confusion(scored.iter().map(|&(t, p, _)| (t, p)))?;
    let with_income: Vec<_> = scored
        .iter()
        .filter_map(|&(t, p, inc)| inc.map(|i| (t, p, i)))
        .collect();
    Ok(MetricsReport {
        n_records: cm.total(),
        confusion_matrix: cm,
        accuracy: accuracy(&cm),
        weighted: weighted_metrics(&cm),
        per_class: class_metrics(&cm),
        income_deciles: accuracy_by_income_decile(&with_income).ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use RaceCategory::*;

    #[test]
    fn confusion_examples() {
        let cm = build_confusion(vec![(White, White); 3]).unwrap();
        assert_eq!(cm.get(White, White), 3);
        assert_eq!(cm.total(), 3);
        let cm = build_confusion([(Black, White)]).unwrap();
        assert_eq!(cm.get(Black, White), 1);
        assert_eq!(build_confusion([]), Err(EvalError::EmptyInput));
    }

    #[test]
    fn identity_matrix_metrics() {
        let mut c = [[0u64; 5]; 5];
        for (i, row) in c.iter_mut().enumerate() {
            row[i] = 7;
        }
        let cm = ConfusionMatrix::from_counts(c);
        assert_eq!(accuracy(&cm), 1.0);
        let w = weighted_metrics(&cm);
        assert_eq!((w.precision, w.recall, w.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn single_class_matrix() {
        let cm = build_confusion(vec![(Asian, Asian); 4]).unwrap();
        let w = weighted_metrics(&cm);
        assert_eq!((w.precision, w.recall, w.f1), (1.0, 1.0, 1.0));
        let m = class_metrics(&cm);
        assert_eq!(m.get(White).precision, 0.0);
        assert_eq!(m.get(White).fpr, 0.0);
    }

    #[test]
    fn stress_identity_and_errors() {
        let p = StressParams::new(0.0, RaceMap([Some(0.0); 5])).unwrap();
        let input = StressInput {
            white_share: 0.41,
            minority_shares: vec![(Black, 0.3)],
        };
        let s = stress_adjust(&input, &p).unwrap();
        assert_eq!(s.white, 0.41);
        assert_eq!(s.minority, vec![(Black, 0.3)]);

        assert!(matches!(
            StressParams::new(0.1, RaceMap([Some(1.0); 5])),
            Err(EvalError::RateOutOfRange { .. })
        ));
        let input = StressInput {
            white_share: 0.5,
            minority_shares: vec![(Asian, 0.1)],
        };
        assert_eq!(
            stress_adjust(&input, &StressParams::full_model()),
            Err(EvalError::FnrUnavailable(Asian))
        );
        let input = StressInput {
            white_share: 0.5,
            minority_shares: vec![(White, 0.1)],
        };
        assert_eq!(
            stress_adjust(&input, &StressParams::full_model()),
            Err(EvalError::NotAMinority(White))
        );
    }

    #[test]
    fn stress_cap() {
        let p = StressParams::new(0.1, RaceMap([Some(0.5); 5])).unwrap();
        let mut s = stress_adjust(
            &StressInput {
                white_share: 0.2,
                minority_shares: vec![(Black, 0.8)],
            },
            &p,
        )
        .unwrap();
        assert_eq!(s.minority[0].1, 1.6);
        assert_eq!(s.cap_at_one(), vec![Black]);
        assert_eq!(s.minority[0].1, 1.0);
    }

    #[test]
    fn deciles_by_construction() {
        let all_right: Vec<_> = (0..30).map(|i| (White, White, i as f64)).collect();
        let d = accuracy_by_income_decile(&all_right).unwrap();
        assert!(d.iter().all(|x| x.accuracy == Some(1.0) && x.n == 3));

        let records: Vec<_> = (0..20)
            .map(|i| {
                if i < 10 {
                    (Black, White, i as f64)
                } else {
                    (Black, Black, i as f64)
                }
            })
            .collect();
        let d = accuracy_by_income_decile(&records).unwrap();
        let acc: Vec<_> = d.iter().map(|x| x.accuracy.unwrap()).collect();
        assert_eq!(acc, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0]);

        assert_eq!(
            accuracy_by_income_decile(&records[..9]),
            Err(EvalError::InsufficientData { needed: 10, got: 9 })
        );
    }

    #[test]
    fn decile_ties_go_low() {
        // 10 records, the first three share an income.
        let mut records: Vec<_> = (0..10).map(|i| (White, White, i as f64)).collect();
        records[1].2 = 0.0;
        records[2].2 = 0.0;
        let d = accuracy_by_income_decile(&records).unwrap();
        assert_eq!(d[0].n, 3);
        assert_eq!(d[1].n, 0);
        assert_eq!(d[1].accuracy, None);
        assert_eq!(d[2].n, 0);
    }

    #[test]
    fn ground_truth_file() {
        let text = "record_id,true_race,predicted_race,median_income\n\
            L1,white5,white5,52000\n\
            L2,afrAmer5,white5,\n\
            L3,Hispanic,,41000\n\
            L4,martian,white,1\n";
        let (recs, rejects) = load_ground_truth(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(rejects.len(), 1);
        assert_eq!(recs[1].truth, Black);
        assert_eq!(recs[2].predicted, None);
        let report = metrics_report(&recs).unwrap();
        assert_eq!(report.n_records, 2);
        assert_eq!(report.accuracy, 0.5);
        assert!(report.income_deciles.is_none());
    }
}
