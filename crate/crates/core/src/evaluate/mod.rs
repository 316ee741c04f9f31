//! One-vs-rest AUC, confusion matrices, precision and result tables.

mod report;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProbabilityMatrix;

pub use report::{
    per_sensor_report, summary_table, EvalReport, PerSensorReport, PerSensorRow, ReportFormat, ReportMetadata,
    EVAL_SCHEMA_VERSION,
};

/// Tolerance on the row sums of a probability score matrix.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

/// Class scores with one true label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    classes: usize,
    scores: Vec<f64>,
    labels: Vec<usize>,
}

impl ScoreMatrix {
    /// Probability rows: each in `[0, 1]` and summing to one.
    pub fn new(classes: usize, scores: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        let m = Self::from_raw_scores(classes, scores, labels)?;
        for (i, row) in m.rows().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE || row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::InvalidInput(format!("row {i} is not a probability vector (sum {sum})")));
            }
        }
        Ok(m)
    }

    /// Arbitrary finite scores; only the ranking matters for AUC.
    pub fn from_raw_scores(classes: usize, scores: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if classes == 0 || scores.len() != classes * labels.len() {
            return Err(Error::Shape(format!(
                "{} scores for {} rows of {classes} classes",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidInput(format!("label {l} outside 0..{classes}")));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite score".into()));
        }
        Ok(Self { classes, scores, labels })
    }

    pub fn from_probabilities(probs: &ProbabilityMatrix, labels: Vec<usize>) -> Result<Self> {
        Self::new(probs.classes(), probs.as_slice().to_vec(), labels)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.classes..(i + 1) * self.classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.scores.chunks(self.classes)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.rows().map(|r| r[c]).collect()
    }
}

/// Mann-Whitney AUC of `scores` with `positive` marking the positive rows;
/// `None` unless both groups are non-empty. Ties count one half.
pub fn auc_binary(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Rank sum of positives, doubled so midranks stay integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u128;
        let in_group = order[i..=j].iter().filter(|&&k| positive[k]).count() as u128;
        twice_rank_sum += twice_mid * in_group;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Some(twice_u as f64 / (2 * p * n) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucSummary {
    /// `None` for classes without both positive and negative rows.
    pub per_class: Vec<Option<f64>>,
    pub macro_auc: f64,
}

/// One-vs-rest AUC per class and their unweighted mean over defined classes.
pub fn auc_ovr(scores: &ScoreMatrix) -> Result<AucSummary> {
    let per_class: Vec<Option<f64>> = (0..scores.classes)
        .map(|c| {
            let positive: Vec<bool> = scores.labels.iter().map(|&l| l == c).collect();
            auc_binary(&scores.column(c), &positive)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::AllClassesUndefined);
    }
    let macro_auc = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(AucSummary { per_class, macro_auc })
}

/// Index of the largest score, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Counts with rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if classes == 0 || counts.len() != classes * classes {
            return Err(Error::Shape(format!("{} counts for {classes} classes", counts.len())));
        }
        Ok(Self { classes, counts })
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Self::from_counts(k, rows.concat())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn predicted_count(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, c)).sum()
    }

    pub fn to_rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes).map(<[u64]>::to_vec).collect()
    }

    /// `TP / (TP + FP)` per class; `None` when nothing was predicted as it.
    pub fn per_class_precision(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let predicted = self.predicted_count(c);
                (predicted > 0).then(|| self.get(c, c) as f64 / predicted as f64)
            })
            .collect()
    }
}

pub fn confusion(scores: &ScoreMatrix) -> ConfusionMatrix {
    let k = scores.classes;
    let mut counts = vec![0u64; k * k];
    for (row, &label) in scores.rows().zip(&scores.labels) {
        counts[label * k + argmax(row)] += 1;
    }
    ConfusionMatrix { classes: k, counts }
}

/// Unweighted mean precision over classes that received predictions.
pub fn precision_macro(cm: &ConfusionMatrix) -> Result<f64> {
    let defined: Vec<f64> = cm.per_class_precision().into_iter().flatten().collect();
    if defined.is_empty() {
        return Err(Error::Undefined("no class was ever predicted".into()));
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Granularity at which metrics are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Patch,
    /// Mean of a sample's patch score rows.
    SampleVote,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Patch => "patch",
            Aggregation::SampleVote => "sample_vote",
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "patch" => Ok(Aggregation::Patch),
            "sample" | "sample_vote" | "sample-vote" => Ok(Aggregation::SampleVote),
            other => Err(Error::InvalidInput(format!("unknown aggregation `{other}` (patch|sample)"))),
        }
    }
}

/// Averages the rows of each sample. Samples appear in order of first
/// occurrence; every row of a sample must carry the same label.
pub fn aggregate_by_sample(scores: &ScoreMatrix, sample_ids: &[String]) -> Result<(ScoreMatrix, Vec<String>)> {
    if sample_ids.len() != scores.len() {
        return Err(Error::Shape(format!("{} sample ids for {} rows", sample_ids.len(), scores.len())));
    }
    let k = scores.classes;
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut ids = Vec::new();
    let mut sums: Vec<Vec<f64>> = Vec::new();
    let mut counts = Vec::new();
    let mut labels = Vec::new();
    for (i, id) in sample_ids.iter().enumerate() {
        let slot = *index.entry(id.as_str()).or_insert_with(|| {
            ids.push(id.clone());
            sums.push(vec![0.0; k]);
            counts.push(0usize);
            labels.push(scores.labels[i]);
            ids.len() - 1
        });
        if labels[slot] != scores.labels[i] {
            return Err(Error::InvalidInput(format!("sample `{id}` has patches with different labels")));
        }
        sums[slot].iter_mut().zip(scores.row(i)).for_each(|(s, v)| *s += v);
        counts[slot] += 1;
    }
    let data: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .flat_map(|(s, &n)| s.iter().map(move |v| v / n as f64))
        .collect();
    Ok((ScoreMatrix { classes: k, scores: data, labels }, ids))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// One-vs-rest ROC curve of class `c`, one point per distinct threshold
/// from strictest to loosest, starting at (0, 0).
pub fn roc_curve(scores: &ScoreMatrix, c: usize) -> Option<Vec<RocPoint>> {
    let col = scores.column(c);
    let pos = scores.labels.iter().filter(|&&l| l == c).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..col.len()).collect();
    order.sort_by(|&a, &b| col[b].total_cmp(&col[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = col[order[i]];
        while i < order.len() && col[order[i]] == t {
            if scores.labels[order[i]] == c {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Some(points)
}

/// ROC points of every defined class as CSV `class,threshold,fpr,tpr`.
pub fn roc_csv(scores: &ScoreMatrix, class_names: &[String]) -> String {
    let mut out = String::from("class,threshold,fpr,tpr\n");
    for c in 0..scores.classes {
        let name = class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
        for p in roc_curve(scores, c).into_iter().flatten() {
            out.push_str(&format!("{name},{},{},{}\n", p.threshold, p.fpr, p.tpr));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_auc(col: &[f64], labels: &[usize], c: usize) -> Option<f64> {
        let (mut wins, mut p, mut n) = (0.0, 0usize, 0usize);
        for (i, &li) in labels.iter().enumerate() {
            if li != c {
                n += 1;
                continue;
            }
            p += 1;
            for (j, &lj) in labels.iter().enumerate() {
                if lj != c {
                    wins += if col[i] > col[j] {
                        1.0
                    } else if col[i] == col[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        (p > 0 && n > 0).then(|| wins / (p * n) as f64)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, k: usize, levels: Option<u32>) -> ScoreMatrix {
        let mut data = Vec::with_capacity(n * k);
        for _ in 0..n {
            let raw: Vec<f64> = (0..k)
                .map(|_| match levels {
                    Some(l) => rng.random_range(0..l) as f64 + 1.0,
                    None => rng.random::<f64>() + 1e-3,
                })
                .collect();
            let s: f64 = raw.iter().sum();
            data.extend(raw.iter().map(|v| v / s));
        }
        let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
        ScoreMatrix::new(k, data, labels).unwrap()
    }

    #[test]
    fn perfect_and_tied() {
        let m = ScoreMatrix::new(2, vec![0.9, 0.1, 0.2, 0.8, 0.7, 0.3], vec![0, 1, 0]).unwrap();
        let a = auc_ovr(&m).unwrap();
        assert_eq!(a.macro_auc, 1.0);
        assert_eq!(auc_binary(&[0.5, 0.5], &[true, false]), Some(0.5));
    }

    #[test]
    fn matches_brute_force_on_random_60x8() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        for levels in [None, Some(4)] {
            let m = random_matrix(&mut rng, 60, 8, levels);
            let a = auc_ovr(&m).unwrap();
            for c in 0..8 {
                let want = brute_auc(&m.column(c), m.labels(), c);
                match (a.per_class[c], want) {
                    (Some(x), Some(y)) => assert!((x - y).abs() <= 1e-12),
                    (x, y) => assert_eq!(x, y),
                }
            }
        }
    }

    #[test]
    fn single_class_is_undefined() {
        let m = ScoreMatrix::new(2, vec![0.6, 0.4, 0.3, 0.7], vec![1, 1]).unwrap();
        assert!(matches!(auc_ovr(&m), Err(Error::AllClassesUndefined)));
    }

    #[test]
    fn confusion_tie_rule_and_precision() {
        let m = ScoreMatrix::new(4, vec![0.1, 0.4, 0.1, 0.4], vec![3]).unwrap();
        assert_eq!(confusion(&m).get(3, 1), 1);
        let cm = ConfusionMatrix::from_rows(&[vec![5, 1], vec![0, 4]]).unwrap();
        assert_eq!(cm.per_class_precision(), vec![Some(1.0), Some(0.8)]);
        assert!((precision_macro(&cm).unwrap() - 0.9).abs() < 1e-15);
        let empty = ConfusionMatrix::from_counts(2, vec![0; 4]).unwrap();
        assert!(matches!(precision_macro(&empty), Err(Error::Undefined(_))));
    }

    #[test]
    fn rejects_unnormalised_rows() {
        assert!(ScoreMatrix::new(2, vec![0.5, 0.6], vec![0]).is_err());
        assert!(ScoreMatrix::new(2, vec![0.5, 0.5], vec![2]).is_err());
        assert!(ScoreMatrix::from_raw_scores(2, vec![3.0, -1.0], vec![0]).is_ok());
    }

    #[test]
    fn sample_vote_averages_rows() {
        let m = ScoreMatrix::new(2, vec![1.0, 0.0, 0.5, 0.5, 0.2, 0.8], vec![0, 0, 1]).unwrap();
        let ids = vec!["a".to_string(), "a".to_string(), "b".to_string()];
        let (agg, order) = aggregate_by_sample(&m, &ids).unwrap();
        assert_eq!(order, vec!["a", "b"]);
        assert_eq!(agg.row(0), &[0.75, 0.25]);
        let bad = ScoreMatrix::new(2, vec![1.0, 0.0, 0.5, 0.5], vec![0, 1]).unwrap();
        assert!(aggregate_by_sample(&bad, &ids[..2]).is_err());
    }

    #[test]
    fn roc_endpoints() {
        let m = ScoreMatrix::new(2, vec![0.9, 0.1, 0.4, 0.6, 0.6, 0.4, 0.2, 0.8], vec![0, 1, 0, 1]).unwrap();
        let pts = roc_curve(&m, 0).unwrap();
        assert_eq!((pts[0].fpr, pts[0].tpr), (0.0, 0.0));
        let last = pts.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        // Trapezoid area equals the rank statistic.
        let area: f64 = pts.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum();
        assert!((area - auc_ovr(&m).unwrap().per_class[0].unwrap()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn monotone_transform_invariance(seed in any::<u64>(), n in 2usize..80) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, n, 8, Some(5));
            let cubed = ScoreMatrix::from_raw_scores(8, m.scores.iter().map(|v| v * v * v).collect(), m.labels.clone()).unwrap();
            if let (Ok(a), Ok(b)) = (auc_ovr(&m), auc_ovr(&cubed)) {
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn complement_flips_auc(seed in any::<u64>(), n in 2usize..80) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, n, 8, None);
            for c in 0..8 {
                let col = m.column(c);
                let pos: Vec<bool> = m.labels.iter().map(|&l| l == c).collect();
                let flipped: Vec<bool> = pos.iter().map(|p| !p).collect();
                let inv: Vec<f64> = col.iter().map(|v| 1.0 - v).collect();
                if let Some(a) = auc_binary(&col, &pos) {
                    prop_assert!((auc_binary(&inv, &pos).unwrap() - (1.0 - a)).abs() < 1e-12);
                    prop_assert!((auc_binary(&col, &flipped).unwrap() - (1.0 - a)).abs() < 1e-12);
                    prop_assert!((auc_binary(&inv, &flipped).unwrap() - a).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn metrics_stay_in_unit_interval(seed in any::<u64>(), n in 1usize..120) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, n, 8, Some(3));
            let cm = confusion(&m);
            prop_assert_eq!(cm.total(), n as u64);
            let p = precision_macro(&cm).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            if let Ok(a) = auc_ovr(&m) {
                prop_assert!((0.0..=1.0).contains(&a.macro_auc));
            }
            let ids: Vec<String> = (0..n).map(|i| format!("s{}", m.labels[i])).collect();
            let (agg, _) = aggregate_by_sample(&m, &ids).unwrap();
            for row in agg.rows() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < ROW_SUM_TOLERANCE);
            }
        }
    }
}
