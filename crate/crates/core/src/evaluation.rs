//! Classification metrics, stratified k-fold cross-validation and grid search.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::gbdt::{FeatureMatrix, GbdtError, GbdtModel, GbdtParams};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("AUC needs both classes; got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("NaN score at index {0}")]
    NanScore(usize),
    #[error("degenerate folds: {0}")]
    FoldDegenerate(String),
    #[error("parameter grid is empty")]
    EmptyGrid,
    #[error("unknown scoring `{0}` (expected f1_macro, roc_auc or accuracy)")]
    UnknownScoring(String),
    #[error(transparent)]
    Model(#[from] GbdtError),
    #[error("writing results: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Mann–Whitney AUC: P(score_pos > score_neg) + ½·P(tie), via average ranks.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(EvalError::Length(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(EvalError::NanScore(i));
    }
    let positives = labels.iter().filter(|l| **l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::SingleClass {
            positives: positives as usize,
            negatives: negatives as usize,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the summed average rank of the positives, kept integral.
    let mut rank2_pos: u128 = 0;
    let mut a = 0;
    while a < order.len() {
        let mut b = a;
        while b + 1 < order.len() && scores[order[b + 1]] == scores[order[a]] {
            b += 1;
        }
        let group_pos = order[a..=b].iter().filter(|&&i| labels[i]).count() as u128;
        rank2_pos += group_pos * (a + b + 2) as u128;
        a = b + 1;
    }
    let (p, n) = (positives as u128, negatives as u128);
    let numerator = rank2_pos - p * (p + 1);
    Ok(numerator as f64 / (2 * p * n) as f64)
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Confusion {
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tp: usize,
}

impl Confusion {
    pub fn of(pred: &[bool], labels: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&p, &l) in pred.iter().zip(labels) {
            match (l, p) {
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (true, true) => c.tp += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tn + self.fp + self.fn_ + self.tp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassStats {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    /// Class 0 (majority in changepoint data).
    pub negative: ClassStats,
    /// Class 1.
    pub positive: ClassStats,
    /// Support-weighted average of the two classes.
    pub weighted: ClassStats,
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub f1_macro: f64,
    /// Set when some precision or recall had a zero denominator and was reported as 0.
    pub zero_division: bool,
    pub confusion: Confusion,
}

fn ratio(num: usize, den: usize, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision/recall/F1, weighted average, accuracy and (if scores
/// are given and both classes are present) AUC.
pub fn class_report(pred: &[bool], labels: &[bool], scores: Option<&[f64]>) -> Result<ClassReport> {
    if pred.len() != labels.len() {
        return Err(EvalError::Length(format!("{} predictions, {} labels", pred.len(), labels.len())));
    }
    let c = Confusion::of(pred, labels);
    let mut zero_division = false;
    let stats = |tp: usize, fp: usize, fn_: usize, flag: &mut bool| {
        let precision = ratio(tp, tp + fp, flag);
        let recall = ratio(tp, tp + fn_, flag);
        ClassStats {
            precision,
            recall,
            f1: f1_score(precision, recall),
            support: tp + fn_,
        }
    };
    let positive = stats(c.tp, c.fp, c.fn_, &mut zero_division);
    let negative = stats(c.tn, c.fn_, c.fp, &mut zero_division);
    let total = c.total();
    let weigh = |f: fn(&ClassStats) -> f64| {
        if total == 0 {
            0.0
        } else {
            (f(&negative) * negative.support as f64 + f(&positive) * positive.support as f64) / total as f64
        }
    };
    let weighted = ClassStats {
        precision: weigh(|s| s.precision),
        recall: weigh(|s| s.recall),
        f1: weigh(|s| s.f1),
        support: total,
    };
    let auc = match scores {
        Some(s) => match roc_auc(s, labels) {
            Ok(a) => Some(a),
            Err(EvalError::SingleClass { .. }) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    Ok(ClassReport {
        negative,
        positive,
        weighted,
        accuracy: ratio(c.tp + c.tn, total, &mut zero_division),
        auc,
        f1_macro: (negative.f1 + positive.f1) / 2.0,
        zero_division,
        confusion: c,
    })
}

impl fmt::Display for ClassReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |v: f64| format!("{:.0}%", v * 100.0);
        writeln!(f, "{:<14}{:>10}{:>10}{:>10}{:>10}", "", "precision", "recall", "f1", "support")?;
        for (name, s) in [("0", &self.negative), ("1", &self.positive), ("avg / total", &self.weighted)] {
            writeln!(
                f,
                "{:<14}{:>10}{:>10}{:>10}{:>10}",
                name,
                pct(s.precision),
                pct(s.recall),
                pct(s.f1),
                s.support
            )?;
        }
        write!(f, "accuracy {:.4}  f1_macro {:.4}", self.accuracy, self.f1_macro)?;
        if let Some(a) = self.auc {
            write!(f, "  auc {a:.4}")?;
        }
        if self.zero_division {
            write!(f, "  (zero division reported as 0)")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    F1Macro,
    RocAuc,
    Accuracy,
}

impl FromStr for Scoring {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f1_macro" => Ok(Scoring::F1Macro),
            "roc_auc" | "auc" => Ok(Scoring::RocAuc),
            "accuracy" => Ok(Scoring::Accuracy),
            other => Err(EvalError::UnknownScoring(other.to_string())),
        }
    }
}

impl fmt::Display for Scoring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scoring::F1Macro => "f1_macro",
            Scoring::RocAuc => "roc_auc",
            Scoring::Accuracy => "accuracy",
        })
    }
}

impl Scoring {
    pub fn score(self, proba: &[f64], labels: &[bool]) -> Result<f64> {
        match self {
            Scoring::RocAuc => roc_auc(proba, labels),
            _ => {
                let pred: Vec<bool> = proba.iter().map(|&p| p >= 0.5).collect();
                let r = class_report(&pred, labels, None)?;
                Ok(if self == Scoring::F1Macro { r.f1_macro } else { r.accuracy })
            }
        }
    }
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Fold number of every row. Rows are bucketed by class in a content-defined
/// order before the seeded shuffle, so any permutation of the input rows gets
/// the same folds (identical rows are interchangeable).
pub fn stratified_folds(x: &FeatureMatrix, y: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = y.len();
    if x.n_rows() != n {
        return Err(EvalError::Length(format!("{} rows, {} labels", x.n_rows(), n)));
    }
    if k < 2 || k > n {
        return Err(EvalError::FoldDegenerate(format!("k = {k} with {n} rows")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; n];
    let mut offset = 0;
    for class in [false, true] {
        let mut members: Vec<usize> = (0..n).filter(|&i| y[i] == class).collect();
        members.sort_by(|&a, &b| cmp_rows(x.row(a), x.row(b)));
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            fold[i] = (offset + pos) % k;
        }
        offset += members.len();
    }
    Ok(fold)
}

/// All rows in canonical order: by label, then by content.
fn canonical_order(x: &FeatureMatrix, y: &[bool]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[a].cmp(&y[b]).then_with(|| cmp_rows(x.row(a), x.row(b))));
    order
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub fold_scores: Vec<f64>,
    pub mean: f64,
    pub fold_seconds: Vec<f64>,
}

struct FoldPlan {
    train: Vec<usize>,
    test: Vec<usize>,
}

fn plan_folds(x: &FeatureMatrix, y: &[bool], k: usize, seed: u64) -> Result<Vec<FoldPlan>> {
    let fold = stratified_folds(x, y, k, seed)?;
    let order = canonical_order(x, y);
    Ok((0..k)
        .map(|f| {
            let (test, train) = order.iter().partition(|&&i| fold[i] == f);
            FoldPlan { train, test }
        })
        .collect())
}

fn eval_fold(
    x: &FeatureMatrix,
    y: &[bool],
    plan: &FoldPlan,
    params: &GbdtParams,
    scoring: Scoring,
) -> Result<(f64, f64)> {
    let ty: Vec<bool> = plan.train.iter().map(|&i| y[i]).collect();
    let vy: Vec<bool> = plan.test.iter().map(|&i| y[i]).collect();
    let inner = GbdtParams {
        threads: 1,
        ..params.clone()
    };
    let started = Instant::now();
    let model = GbdtModel::fit(&x.select_rows(&plan.train), &ty, &inner)?;
    let seconds = started.elapsed().as_secs_f64();
    let proba = model.predict_proba(&x.select_rows(&plan.test))?;
    let score = scoring.score(&proba, &vy).map_err(|e| match e {
        EvalError::SingleClass { .. } => EvalError::FoldDegenerate("a held-out fold lacks one class".into()),
        e => e,
    })?;
    Ok((score, seconds))
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| EvalError::Model(GbdtError::ThreadPool(e)))
}

/// Mean held-out score over `k` stratified folds. Folds run in parallel on
/// `params.threads` workers; scores do not depend on the thread count.
pub fn kfold_cv(
    x: &FeatureMatrix,
    y: &[bool],
    params: &GbdtParams,
    k: usize,
    scoring: Scoring,
    seed: u64,
) -> Result<CvResult> {
    params.validate()?;
    let plans = plan_folds(x, y, k, seed)?;
    let results: Vec<(f64, f64)> = pool(params.threads)?.install(|| {
        plans
            .par_iter()
            .map(|p| eval_fold(x, y, p, params, scoring))
            .collect::<Result<_>>()
    })?;
    Ok(cv_result(results))
}

fn cv_result(results: Vec<(f64, f64)>) -> CvResult {
    let (fold_scores, fold_seconds): (Vec<f64>, Vec<f64>) = results.into_iter().unzip();
    let mean = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
    CvResult {
        fold_scores,
        mean,
        fold_seconds,
    }
}

/// Ordered parameter grid: name → candidate values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamGrid {
    pub axes: Vec<(String, Vec<f64>)>,
}

pub type ParamPoint = Vec<(String, f64)>;

impl ParamGrid {
    pub fn new(axes: Vec<(String, Vec<f64>)>) -> Self {
        Self { axes }
    }

    pub fn size(&self) -> usize {
        if self.axes.is_empty() {
            0
        } else {
            self.axes.iter().map(|(_, v)| v.len()).product()
        }
    }

    /// The `index`-th point of the Cartesian product, last axis fastest.
    pub fn point(&self, mut index: usize) -> ParamPoint {
        let mut point = vec![(String::new(), 0.0); self.axes.len()];
        for (slot, (name, values)) in point.iter_mut().zip(&self.axes).rev() {
            *slot = (name.clone(), values[index % values.len()]);
            index /= values.len();
        }
        point
    }

    pub fn points(&self) -> Vec<ParamPoint> {
        (0..self.size()).map(|i| self.point(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    Full,
    /// Seeded draws without replacement; capped at the grid size.
    Randomized(usize),
}

impl FromStr for SearchMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "full" {
            return Ok(SearchMode::Full);
        }
        if let Some(n) = s.strip_prefix("random:") {
            return n
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .map(SearchMode::Randomized)
                .ok_or_else(|| format!("bad draw count in `{s}`"));
        }
        Err(format!("unknown search mode `{s}` (expected full or random:N)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchEntry {
    pub params: ParamPoint,
    pub mean_score: f64,
    pub fold_scores: Vec<f64>,
    pub fit_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResult {
    pub scoring: Scoring,
    pub entries: Vec<SearchEntry>,
    pub best_index: usize,
}

impl SearchResult {
    pub fn best(&self) -> &SearchEntry {
        &self.entries[self.best_index]
    }

    pub fn best_score(&self) -> f64 {
        self.best().mean_score
    }

    /// One row per combination: parameter columns, mean score, total fit seconds.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let names: Vec<&str> = self.entries[0].params.iter().map(|(n, _)| n.as_str()).collect();
        writeln!(w, "{},mean_score,fit_seconds", names.join(","))?;
        for e in &self.entries {
            let vals: Vec<String> = e.params.iter().map(|(_, v)| v.to_string()).collect();
            writeln!(w, "{},{},{:.6}", vals.join(","), e.mean_score, e.fit_seconds)?;
        }
        Ok(())
    }
}

/// Evaluates grid points by k-fold CV on top of `base`; the best point has
/// the highest mean score, the earliest one winning ties.
#[allow(clippy::too_many_arguments)]
pub fn grid_search(
    x: &FeatureMatrix,
    y: &[bool],
    grid: &ParamGrid,
    mode: SearchMode,
    base: &GbdtParams,
    k: usize,
    scoring: Scoring,
    seed: u64,
) -> Result<SearchResult> {
    if grid.size() == 0 {
        return Err(EvalError::EmptyGrid);
    }
    let indices: Vec<usize> = match mode {
        SearchMode::Full => (0..grid.size()).collect(),
        SearchMode::Randomized(draws) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = rand::seq::index::sample(&mut rng, grid.size(), draws.min(grid.size())).into_vec();
            v.sort_unstable();
            v
        }
    };
    let mut configs = Vec::with_capacity(indices.len());
    for &i in &indices {
        let point = grid.point(i);
        let mut p = base.clone();
        for (name, value) in &point {
            p.set(name, *value)?;
        }
        p.validate()?;
        configs.push((point, p));
    }
    let plans = plan_folds(x, y, k, seed)?;
    let tasks: Vec<(usize, usize)> = (0..configs.len()).flat_map(|c| (0..k).map(move |f| (c, f))).collect();
    let results: Vec<(f64, f64)> = pool(base.threads)?.install(|| {
        tasks
            .par_iter()
            .map(|&(c, f)| eval_fold(x, y, &plans[f], &configs[c].1, scoring))
            .collect::<Result<_>>()
    })?;
    let mut entries = Vec::with_capacity(configs.len());
    for (c, (point, _)) in configs.into_iter().enumerate() {
        let cv = cv_result(results[c * k..(c + 1) * k].to_vec());
        entries.push(SearchEntry {
            params: point,
            mean_score: cv.mean,
            fold_scores: cv.fold_scores,
            fit_seconds: cv.fold_seconds.iter().sum(),
        });
    }
    let mut best_index = 0;
    for (i, e) in entries.iter().enumerate() {
        if e.mean_score > entries[best_index].mean_score {
            best_index = i;
        }
    }
    Ok(SearchResult {
        scoring,
        entries,
        best_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_examples() {
        let l = [false, false, true, true];
        assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &l).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.0, 0.0, 1.0, 1.0], &l).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 4], &l).unwrap(), 0.5);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(EvalError::SingleClass { .. })));
    }

    #[test]
    fn all_majority_on_thousand_to_one() {
        let mut labels = vec![false; 1000];
        labels.push(true);
        let pred = vec![false; 1001];
        let r = class_report(&pred, &labels, None).unwrap();
        assert_eq!(r.positive.f1, 0.0);
        assert!((r.negative.f1 - 2000.0 / 2001.0).abs() < 1e-15);
        assert!((r.f1_macro - 1000.0 / 2001.0).abs() < 1e-15);
        assert!(r.zero_division);
    }

    #[test]
    fn perfect_predictions() {
        let labels = [true, false, false, true, false];
        let r = class_report(&labels, &labels, Some(&[0.9, 0.1, 0.2, 0.8, 0.3])).unwrap();
        assert_eq!(r.f1_macro, 1.0);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.auc, Some(1.0));
        assert!(!r.zero_division);
    }

    #[test]
    fn minority_f1_from_low_precision_high_recall() {
        // Table 8 style: 8% precision with 99% recall lands near 14%.
        let f = f1_score(0.08, 0.99);
        assert!((f - 2.0 * 0.08 * 0.99 / 1.07).abs() < 1e-15);
        assert!((f - 0.14).abs() < 0.01);
    }

    #[test]
    fn weighted_average_uses_support() {
        let labels = [true, false, false, false];
        let pred = [true, true, false, false];
        let r = class_report(&pred, &labels, None).unwrap();
        assert_eq!(r.positive.precision, 0.5);
        assert_eq!(r.negative.recall, 2.0 / 3.0);
        let expect = (r.positive.f1 + 3.0 * r.negative.f1) / 4.0;
        assert!((r.weighted.f1 - expect).abs() < 1e-15);
    }

    #[test]
    fn grid_order_is_last_axis_fastest() {
        let g = ParamGrid::new(vec![("max_depth".into(), vec![3.0, 7.0]), ("reg_lambda".into(), vec![0.0, 1.0, 5.0])]);
        let pts = g.points();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[1], vec![("max_depth".to_string(), 3.0), ("reg_lambda".to_string(), 1.0)]);
        assert_eq!(pts[3][0].1, 7.0);
        assert_eq!(ParamGrid::default().size(), 0);
    }

    #[test]
    fn search_mode_parsing() {
        assert_eq!("full".parse::<SearchMode>().unwrap(), SearchMode::Full);
        assert_eq!("random:7".parse::<SearchMode>().unwrap(), SearchMode::Randomized(7));
        assert!("random:0".parse::<SearchMode>().is_err());
        assert!("grid".parse::<SearchMode>().is_err());
    }

    fn toy(n: usize) -> (FeatureMatrix, Vec<bool>) {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![(i * 37 % 101) as f64, (i % 7) as f64]).collect();
        let y = rows.iter().map(|r| r[0] > 60.0).collect();
        (FeatureMatrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn stratified_folds_balance_classes() {
        let (x, y) = toy(50);
        let folds = stratified_folds(&x, &y, 5, 3).unwrap();
        for f in 0..5 {
            let pos = (0..50).filter(|&i| folds[i] == f && y[i]).count();
            let all = (0..50).filter(|&i| folds[i] == f).count();
            assert_eq!(all, 10);
            assert!(pos >= 3, "fold {f} has {pos} positives");
        }
        assert!(stratified_folds(&x, &y, 1, 3).is_err());
        assert!(stratified_folds(&x, &y, 51, 3).is_err());
    }

    #[test]
    fn leave_one_out_runs() {
        let (x, y) = toy(10);
        let p = GbdtParams {
            n_estimators: 3,
            ..Default::default()
        };
        let r = kfold_cv(&x, &y, &p, 10, Scoring::Accuracy, 1).unwrap();
        assert_eq!(r.fold_scores.len(), 10);
        assert!((0.0..=1.0).contains(&r.mean));
    }

    #[test]
    fn cv_is_seeded_and_permutation_invariant() {
        let (x, y) = toy(80);
        let p = GbdtParams {
            n_estimators: 5,
            max_depth: 2,
            ..Default::default()
        };
        let a = kfold_cv(&x, &y, &p, 4, Scoring::F1Macro, 9).unwrap();
        let b = kfold_cv(&x, &y, &p, 4, Scoring::F1Macro, 9).unwrap();
        assert_eq!(a.fold_scores, b.fold_scores);
        let perm: Vec<usize> = (0..80).rev().collect();
        let px = x.select_rows(&perm);
        let py: Vec<bool> = perm.iter().map(|&i| y[i]).collect();
        let c = kfold_cv(&px, &py, &p, 4, Scoring::F1Macro, 9).unwrap();
        assert_eq!(a.fold_scores, c.fold_scores);
    }

    #[test]
    fn constant_model_cv_f1_macro_near_half() {
        let rows: Vec<Vec<f64>> = (0..400).map(|_| vec![1.0]).collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let y: Vec<bool> = (0..400).map(|i| i % 100 == 0).collect();
        let p = GbdtParams {
            n_estimators: 3,
            ..Default::default()
        };
        let r = kfold_cv(&x, &y, &p, 4, Scoring::F1Macro, 0).unwrap();
        assert!((r.mean - 0.5).abs() < 0.01, "{}", r.mean);
    }

    #[test]
    fn grid_search_full_and_random_coverage() {
        let (x, y) = toy(60);
        let grid = ParamGrid::new(vec![("max_depth".into(), vec![1.0, 2.0]), ("n_estimators".into(), vec![2.0, 4.0])]);
        let base = GbdtParams::default();
        let full = grid_search(&x, &y, &grid, SearchMode::Full, &base, 3, Scoring::Accuracy, 5).unwrap();
        let rnd = grid_search(&x, &y, &grid, SearchMode::Randomized(10), &base, 3, Scoring::Accuracy, 5).unwrap();
        let pts = |r: &SearchResult| r.entries.iter().map(|e| e.params.clone()).collect::<Vec<_>>();
        assert_eq!(pts(&full), pts(&rnd));
        let best = full.entries.iter().map(|e| e.mean_score).fold(f64::MIN, f64::max);
        assert_eq!(full.best_score(), best);
        let first_best = full.entries.iter().position(|e| e.mean_score == best).unwrap();
        assert_eq!(full.best_index, first_best);

        let one = ParamGrid::new(vec![("max_depth".into(), vec![2.0])]);
        let r = grid_search(&x, &y, &one, SearchMode::Full, &base, 3, Scoring::Accuracy, 5).unwrap();
        assert_eq!(r.best().params, vec![("max_depth".to_string(), 2.0)]);
        assert!(matches!(
            grid_search(&x, &y, &ParamGrid::default(), SearchMode::Full, &base, 3, Scoring::Accuracy, 5),
            Err(EvalError::EmptyGrid)
        ));
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("max_depth,mean_score,fit_seconds\n2,"));
    }

    fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..60)
            .prop_flat_map(|n| (proptest::collection::vec(0u8..12, n), proptest::collection::vec(any::<bool>(), n)))
            .prop_map(|(s, mut l)| {
                l[0] = true;
                l[1] = false;
                (s.into_iter().map(|v| v as f64 / 11.0).collect(), l)
            })
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_count((s, l) in scored_labels()) {
            let a = roc_auc(&s, &l).unwrap();
            prop_assert!((a - pairwise_auc(&s, &l)).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_increasing_transform((s, l) in scored_labels()) {
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(roc_auc(&s, &l).unwrap(), roc_auc(&t, &l).unwrap());
        }

        #[test]
        fn auc_of_reversed_scores((s, l) in scored_labels()) {
            let r: Vec<f64> = s.iter().map(|v| 1.0 - v).collect();
            prop_assert!((roc_auc(&r, &l).unwrap() - (1.0 - roc_auc(&s, &l).unwrap())).abs() < 1e-12);
        }

        #[test]
        fn f1_macro_is_one_iff_exact((p, l) in (2usize..40).prop_flat_map(|n| (
            proptest::collection::vec(any::<bool>(), n),
            proptest::collection::vec(any::<bool>(), n),
        ))) {
            let mut l = l;
            l[0] = true;
            l[1] = false;
            let r = class_report(&p, &l, None).unwrap();
            prop_assert_eq!(r.f1_macro == 1.0, p == l);
        }
    }
}
