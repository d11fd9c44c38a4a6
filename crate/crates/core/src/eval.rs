//! Correlation and ranking metrics, dataset loaders and the STS, word
//! similarity and hypernymy harnesses.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};

fn check_pair_lengths(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!("{} values against {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateMetric("correlation needs at least two points".into()));
    }
    if xs.iter().chain(ys).any(|x| !x.is_finite()) {
        return Err(Error::BadInput("correlation inputs must be finite".into()));
    }
    Ok(())
}

/// Product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair_lengths(xs, ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateMetric("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their ranks.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = mean;
        }
        i = j + 1;
    }
    ranks
}

/// Rank correlation: Pearson of the average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair_lengths(xs, ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Average precision over the whole ranked list.
///
/// Scored items are sorted by descending score, ties kept in input order.
/// Items flagged in `oov` follow all scored items in input order; their
/// scores are ignored.
pub fn average_precision_at_all(scores: &[f64], labels: &[bool], oov: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() || scores.len() != oov.len() {
        return Err(Error::Shape(format!(
            "{} scores, {} labels, {} oov flags",
            scores.len(),
            labels.len(),
            oov.len()
        )));
    }
    let mut scored: Vec<usize> = (0..scores.len()).filter(|&i| !oov[i]).collect();
    if scored.iter().any(|&i| scores[i].is_nan()) {
        return Err(Error::BadInput("score is NaN".into()));
    }
    scored.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let ranked = scored.into_iter().chain((0..scores.len()).filter(|&i| oov[i]));
    let (mut hits, mut sum) = (0usize, 0.0);
    for (rank, i) in ranked.enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::DegenerateMetric("no positive labels".into()));
    }
    Ok(sum / hits as f64)
}

fn accuracy_at(scores: &[f64], labels: &[bool], t: f64) -> f64 {
    let correct = scores.iter().zip(labels).filter(|(&s, &l)| (s > t) == l).count();
    correct as f64 / scores.len() as f64
}

/// Threshold maximizing accuracy of `score > t`. Candidates are `-inf`, the
/// midpoints between consecutive distinct scores and `+inf`; ties go to the
/// lowest threshold.
pub fn best_threshold(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::DegenerateMetric("validation split is empty".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::BadInput("score is NaN".into()));
    }
    let mut distinct = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut candidates = vec![f64::NEG_INFINITY];
    for w in distinct.windows(2) {
        let mid = if w[0] == f64::NEG_INFINITY { f64::NEG_INFINITY } else { 0.5 * (w[0] + w[1]) };
        candidates.push(mid);
    }
    candidates.push(f64::INFINITY);
    let mut best = (f64::NEG_INFINITY, -1.0);
    for t in candidates {
        let acc = accuracy_at(scores, labels, t);
        if acc > best.1 {
            best = (t, acc);
        }
    }
    Ok(best.0)
}

/// Test accuracy at the threshold tuned on the validation split.
pub fn detection_accuracy(scores: &[f64], labels: &[bool], val_scores: &[f64], val_labels: &[bool]) -> Result<f64> {
    let t = best_threshold(val_scores, val_labels)?;
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    Ok(accuracy_at(scores, labels, t))
}

/// One line of a pair dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub item1: String,
    pub item2: String,
    /// Similarity score, or 1/0 for hypernymy labels.
    pub gold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Sts,
    Wordsim,
    Hypernymy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub name: String,
    /// STS year (the parent directory name); empty for other tasks.
    pub group: String,
    pub task: Task,
    pub records: Vec<PairRecord>,
    /// Hypernymy validation split; when present the dataset is scored by
    /// detection accuracy instead of AP@all.
    pub validation: Option<Vec<PairRecord>>,
}

fn parse_label(s: &str) -> Option<f64> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "hyper" | "1" => Some(1.0),
        "false" | "other" | "0" => Some(0.0),
        _ => None,
    }
}

fn read_records(path: &Path, task: Task) -> Result<Vec<PairRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |what: &str| Error::Format(format!("{}:{}: {what}", path.display(), lineno + 1));
        if fields.len() < 3 {
            return Err(bad("expected three tab-separated fields"));
        }
        let gold = match task {
            Task::Hypernymy => parse_label(fields[2]).ok_or_else(|| bad("label must be True/False or hyper/other"))?,
            _ => fields[2]
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|g| g.is_finite())
                .ok_or_else(|| bad("gold score is not a finite number"))?,
        };
        records.push(PairRecord {
            item1: fields[0].trim().to_string(),
            item2: fields[1].trim().to_string(),
            gold,
        });
    }
    Ok(records)
}

fn dataset_name(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

/// `sentence1 <TAB> sentence2 <TAB> gold` lines.
pub fn load_sts(path: &Path, group: &str) -> Result<PairDataset> {
    Ok(PairDataset {
        name: dataset_name(path),
        group: group.to_string(),
        task: Task::Sts,
        records: read_records(path, Task::Sts)?,
        validation: None,
    })
}

/// `word1 <TAB> word2 <TAB> score` lines.
pub fn load_wordsim(path: &Path) -> Result<PairDataset> {
    Ok(PairDataset {
        name: dataset_name(path),
        group: String::new(),
        task: Task::Wordsim,
        records: read_records(path, Task::Wordsim)?,
        validation: None,
    })
}

/// `hyponym <TAB> hypernym <TAB> label` lines, with an optional validation
/// split in a sibling file `<stem>.val.tsv`.
pub fn load_hypernymy(path: &Path) -> Result<PairDataset> {
    let val_path = path.with_file_name(format!("{}.val.tsv", dataset_name(path)));
    let validation = if val_path.is_file() {
        Some(read_records(&val_path, Task::Hypernymy)?)
    } else {
        None
    };
    Ok(PairDataset {
        name: dataset_name(path),
        group: String::new(),
        task: Task::Hypernymy,
        records: read_records(path, Task::Hypernymy)?,
        validation,
    })
}

fn sorted_tsv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "tsv") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Every `*.tsv` under `root`, grouped by year. Files in a subdirectory take
/// the directory name as their year; files directly in `root` take the name
/// of `root`.
pub fn load_sts_dir(root: &Path) -> Result<Vec<PairDataset>> {
    if root.is_file() {
        let group = root.parent().map(dataset_name_dir).unwrap_or_default();
        return Ok(vec![load_sts(root, &group)?]);
    }
    let mut out = Vec::new();
    for path in sorted_tsv_files(root)? {
        out.push(load_sts(&path, &dataset_name_dir(root))?);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let group = dataset_name_dir(&dir);
        for path in sorted_tsv_files(&dir)? {
            out.push(load_sts(&path, &group)?);
        }
    }
    Ok(out)
}

fn dataset_name_dir(dir: &Path) -> String {
    dir.file_name().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

/// Score for one dataset, or the error that prevented it.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetScore {
    pub name: String,
    pub group: String,
    /// Pairs used in the metric.
    pub pairs: usize,
    /// Pairs with at least one out-of-vocabulary side.
    pub oov: usize,
    pub metric: &'static str,
    pub value: std::result::Result<f64, String>,
}

/// Per-dataset scores plus the task-level averages.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub task: Task,
    pub datasets: Vec<DatasetScore>,
    /// Mean per group (STS years), in group order.
    pub groups: Vec<(String, f64)>,
    /// Headline number: mean over groups (STS) or pair-weighted mean (word
    /// similarity); `None` when nothing could be scored.
    pub average: Option<f64>,
}

impl Report {
    /// One row per dataset.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("dataset\tgroup\tmetric\tpairs\toov\tvalue\n");
        for d in &self.datasets {
            let value = match &d.value {
                Ok(v) => format!("{v:.6}"),
                Err(e) => format!("error: {e}"),
            };
            let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}\t{}", d.name, d.group, d.metric, d.pairs, d.oov, value);
        }
        s
    }

    /// `key=value` lines.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let task = match self.task {
            Task::Sts => "sts",
            Task::Wordsim => "wordsim",
            Task::Hypernymy => "hypernymy",
        };
        let _ = writeln!(s, "task={task}");
        for d in &self.datasets {
            match &d.value {
                Ok(v) => {
                    let _ = writeln!(s, "{}.{}={v:.6}", d.name, d.metric);
                }
                Err(_) => {
                    let _ = writeln!(s, "{}.{}=nan", d.name, d.metric);
                }
            }
        }
        for (g, v) in &self.groups {
            let _ = writeln!(s, "group.{g}={v:.6}");
        }
        let _ = writeln!(s, "average={}", self.average.map_or("nan".to_string(), |v| format!("{v:.6}")));
        s
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Semantic textual similarity.
///
/// `distance(s1, s2)` is the sentence distance; similarity is its negation.
/// A pair whose scorer reports [`Error::EmptySentence`] gets the mean
/// similarity of the file's other pairs. Per-file Pearson is averaged within
/// each year, then across years.
pub fn run_sts<F>(datasets: &[PairDataset], distance: F) -> Report
where
    F: Fn(&str, &str) -> Result<f64> + Sync,
{
    let scores: Vec<DatasetScore> = datasets
        .par_iter()
        .map(|d| {
            let sims: Vec<Result<Option<f64>>> = d
                .records
                .par_iter()
                .map(|r| match distance(&r.item1, &r.item2) {
                    Ok(x) => Ok(Some(-x)),
                    Err(Error::EmptySentence) => Ok(None),
                    Err(e) => Err(e),
                })
                .collect();
            let oov = sims.iter().filter(|s| matches!(s, Ok(None))).count();
            let value = (|| {
                let sims = sims.into_iter().collect::<Result<Vec<_>>>()?;
                let known: Vec<f64> = sims.iter().flatten().copied().collect();
                let fill = mean(&known).ok_or_else(|| Error::DegenerateMetric("every pair is out of vocabulary".into()))?;
                let xs: Vec<f64> = sims.iter().map(|s| s.unwrap_or(fill)).collect();
                let gold: Vec<f64> = d.records.iter().map(|r| r.gold).collect();
                pearson(&xs, &gold)
            })();
            DatasetScore {
                name: d.name.clone(),
                group: d.group.clone(),
                pairs: d.records.len(),
                oov,
                metric: "pearson",
                value: value.map_err(|e| e.to_string()),
            }
        })
        .collect();
    let mut by_group: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in &scores {
        if let Ok(v) = s.value {
            by_group.entry(s.group.as_str()).or_default().push(v);
        }
    }
    let groups: Vec<(String, f64)> = by_group
        .into_iter()
        .map(|(g, v)| (g.to_string(), mean(&v).expect("non-empty group")))
        .collect();
    let average = mean(&groups.iter().map(|g| g.1).collect::<Vec<_>>());
    Report {
        task: Task::Sts,
        datasets: scores,
        groups,
        average,
    }
}

/// Word similarity: Spearman between gold scores and `-distance`.
///
/// Pairs whose scorer reports [`Error::Oov`] are dropped. The average
/// weights each dataset by its in-vocabulary pair count.
pub fn run_wordsim<F>(datasets: &[PairDataset], distance: F) -> Report
where
    F: Fn(&str, &str) -> Result<f64> + Sync,
{
    let scores: Vec<DatasetScore> = datasets
        .par_iter()
        .map(|d| {
            let sims: Vec<Result<Option<f64>>> = d
                .records
                .par_iter()
                .map(|r| match distance(&r.item1, &r.item2) {
                    Ok(x) => Ok(Some(-x)),
                    Err(Error::Oov(_)) => Ok(None),
                    Err(e) => Err(e),
                })
                .collect();
            let oov = sims.iter().filter(|s| matches!(s, Ok(None))).count();
            let value = (|| {
                let sims = sims.into_iter().collect::<Result<Vec<_>>>()?;
                let (xs, gold): (Vec<f64>, Vec<f64>) = sims
                    .iter()
                    .zip(&d.records)
                    .filter_map(|(s, r)| s.map(|s| (s, r.gold)))
                    .unzip();
                spearman(&xs, &gold)
            })();
            DatasetScore {
                name: d.name.clone(),
                group: d.group.clone(),
                pairs: d.records.len() - oov,
                oov,
                metric: "spearman",
                value: value.map_err(|e| e.to_string()),
            }
        })
        .collect();
    let (mut num, mut den) = (0.0, 0.0);
    for s in &scores {
        if let Ok(v) = s.value {
            num += v * s.pairs as f64;
            den += s.pairs as f64;
        }
    }
    Report {
        task: Task::Wordsim,
        datasets: scores,
        groups: Vec::new(),
        average: (den > 0.0).then(|| num / den),
    }
}

/// Pair-count-weighted mean of `(value, pairs)` entries.
pub fn weighted_average(entries: &[(f64, usize)]) -> Option<f64> {
    let den: usize = entries.iter().map(|e| e.1).sum();
    (den > 0).then(|| entries.iter().map(|e| e.0 * e.1 as f64).sum::<f64>() / den as f64)
}

fn hypernymy_scores<F>(records: &[PairRecord], score: &F) -> Result<(Vec<f64>, Vec<bool>, Vec<bool>)>
where
    F: Fn(&str, &str) -> Result<f64> + Sync,
{
    let raw: Vec<Result<Option<f64>>> = records
        .par_iter()
        .map(|r| match score(&r.item1, &r.item2) {
            Ok(x) => Ok(Some(x)),
            Err(Error::Oov(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let raw = raw.into_iter().collect::<Result<Vec<_>>>()?;
    let oov: Vec<bool> = raw.iter().map(Option::is_none).collect();
    let scores: Vec<f64> = raw.iter().map(|s| s.unwrap_or(f64::NEG_INFINITY)).collect();
    let labels: Vec<bool> = records.iter().map(|r| r.gold > 0.5).collect();
    Ok((scores, labels, oov))
}

/// Hypernymy detection. `score(hyponym, hypernym)` is higher for likelier
/// pairs; [`Error::Oov`] pairs go to the bottom of the ranking (and count as
/// predicted negatives for accuracy). Datasets with a validation split report
/// accuracy at the tuned threshold, others AP@all.
pub fn run_hypernymy<F>(datasets: &[PairDataset], score: F) -> Report
where
    F: Fn(&str, &str) -> Result<f64> + Sync,
{
    let scores: Vec<DatasetScore> = datasets
        .par_iter()
        .map(|d| {
            let mut oov_count = 0;
            let (metric, value) = match &d.validation {
                Some(val) => {
                    let value = (|| {
                        let (s, l, o) = hypernymy_scores(&d.records, &score)?;
                        oov_count = o.iter().filter(|&&x| x).count();
                        let (vs, vl, _) = hypernymy_scores(val, &score)?;
                        detection_accuracy(&s, &l, &vs, &vl)
                    })();
                    ("accuracy", value)
                }
                None => {
                    let value = (|| {
                        let (s, l, o) = hypernymy_scores(&d.records, &score)?;
                        oov_count = o.iter().filter(|&&x| x).count();
                        average_precision_at_all(&s, &l, &o)
                    })();
                    ("ap_at_all", value)
                }
            };
            DatasetScore {
                name: d.name.clone(),
                group: d.group.clone(),
                pairs: d.records.len(),
                oov: oov_count,
                metric,
                value: value.map_err(|e| e.to_string()),
            }
        })
        .collect();
    let values: Vec<f64> = scores.iter().filter_map(|s| s.value.clone().ok()).collect();
    Report {
        task: Task::Hypernymy,
        datasets: scores,
        groups: Vec::new(),
        average: mean(&values),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_hand_cases() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::DegenerateMetric(_))));
    }

    #[test]
    fn spearman_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 1.0, 2.0]).unwrap() - 0.75f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ap_hand_cases() {
        let ap = average_precision_at_all(&[3.0, 2.0, 1.0], &[true, false, true], &[false; 3]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        let oov = average_precision_at_all(&[5.0, 1.0, 9.0], &[true, false, true], &[false, false, true]).unwrap();
        assert!((oov - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!(matches!(
            average_precision_at_all(&[1.0], &[false], &[false]),
            Err(Error::DegenerateMetric(_))
        ));
    }

    #[test]
    fn threshold_enumeration() {
        let s = [3.0, 2.0, 1.0, 0.0];
        let l = [true, true, false, false];
        assert_eq!(best_threshold(&s, &l).unwrap(), 1.5);
        assert_eq!(detection_accuracy(&s, &l, &s, &l).unwrap(), 1.0);
    }

    #[test]
    fn weighted_mean() {
        assert_eq!(weighted_average(&[(0.5, 100), (1.0, 300)]), Some(0.875));
    }
}
