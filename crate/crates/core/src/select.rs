//! Feature ranking by information gain and subset selection by
//! correlation-based feature selection (CFS) with best-first search.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

fn entropy_of_counts(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

fn num_classes(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

fn class_counts(labels: &[usize], k: usize) -> Vec<usize> {
    let mut counts = vec![0; k];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// Shannon entropy of a label sequence, in bits.
pub fn entropy(labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("labels"));
    }
    let counts = class_counts(labels, num_classes(labels));
    Ok(entropy_of_counts(&counts, labels.len()))
}

/// Joint entropy of two aligned discrete code sequences.
fn joint_entropy(a: &[usize], b: &[usize]) -> f64 {
    let (ka, kb) = (num_classes(a), num_classes(b));
    let mut counts = vec![0; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        counts[x * kb + y] += 1;
    }
    entropy_of_counts(&counts, a.len())
}

/// Sorted cut points splitting one feature into intervals. Bin `i` holds
/// values in `[cuts[i-1], cuts[i])`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Discretizer {
    cuts: Vec<f64>,
}

impl Discretizer {
    pub fn new(cuts: Vec<f64>) -> Result<Self> {
        if cuts.windows(2).any(|w| !(w[0] < w[1])) || cuts.iter().any(|c| !c.is_finite()) {
            return Err(Error::Validation(
                "cut points must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { cuts })
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub fn num_bins(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn bin(&self, value: f64) -> usize {
        self.cuts.partition_point(|&c| c <= value)
    }

    pub fn codes(&self, values: &[f64]) -> Vec<usize> {
        values.iter().map(|&v| self.bin(v)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Discretization {
    /// Fayyad–Irani entropy splitting with the MDL stopping rule.
    #[default]
    Mdl,
    EqualWidth { bins: usize },
}

impl Discretization {
    pub fn fit(&self, values: &[f64], labels: &[usize]) -> Result<Discretizer> {
        match *self {
            Discretization::Mdl => mdl_discretize(values, labels),
            Discretization::EqualWidth { bins } => equal_width(values, bins),
        }
    }
}

fn check_lengths(values: &[f64], labels: &[usize]) -> Result<()> {
    if values.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: values.len(),
            found: labels.len(),
        });
    }
    Ok(())
}

pub fn equal_width(values: &[f64], bins: usize) -> Result<Discretizer> {
    if bins == 0 {
        return Err(Error::InvalidParameter("equal-width needs >= 1 bin".into()));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !(hi > lo) {
        return Ok(Discretizer::default());
    }
    let width = (hi - lo) / bins as f64;
    let mut cuts: Vec<f64> = (1..bins).map(|i| lo + width * i as f64).collect();
    cuts.dedup();
    Discretizer::new(cuts)
}

/// Supervised discretisation: recursive binary entropy splitting on class
/// boundaries, each split accepted only under the MDL criterion.
pub fn mdl_discretize(values: &[f64], labels: &[usize]) -> Result<Discretizer> {
    check_lengths(values, labels)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("feature values must be finite".into()));
    }
    let k = num_classes(labels);
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted_vals: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let sorted_labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();

    // group runs of identical values
    let mut groups: Vec<Group> = Vec::new();
    for (i, (&v, &l)) in sorted_vals.iter().zip(&sorted_labels).enumerate() {
        match groups.last_mut() {
            Some(g) if g.value == v => {
                g.end = i + 1;
                g.counts[l] += 1;
            }
            _ => {
                let mut counts = vec![0; k];
                counts[l] += 1;
                groups.push(Group {
                    value: v,
                    end: i + 1,
                    counts,
                });
            }
        }
    }
    let mut cuts = Vec::new();
    split_groups(&groups, k, &mut cuts);
    Discretizer::new(cuts)
}

struct Group {
    value: f64,
    end: usize,
    counts: Vec<usize>,
}

impl Group {
    fn pure_class(&self) -> Option<usize> {
        let mut present = self.counts.iter().enumerate().filter(|(_, &c)| c > 0);
        match (present.next(), present.next()) {
            (Some((c, _)), None) => Some(c),
            _ => None,
        }
    }
}

fn split_groups(groups: &[Group], k: usize, cuts: &mut Vec<f64>) {
    if groups.len() < 2 {
        return;
    }
    let mut total = vec![0; k];
    for g in groups {
        for (t, c) in total.iter_mut().zip(&g.counts) {
            *t += c;
        }
    }
    let n: usize = total.iter().sum();
    let h_all = entropy_of_counts(&total, n);
    if h_all == 0.0 {
        return;
    }

    let mut left = vec![0; k];
    let mut n_left = 0;
    let mut best: Option<(f64, usize)> = None; // (weighted entropy, boundary index)
    for b in 0..groups.len() - 1 {
        for (l, c) in left.iter_mut().zip(&groups[b].counts) {
            *l += c;
        }
        n_left += groups[b].counts.iter().sum::<usize>();
        let same_pure = matches!(
            (groups[b].pure_class(), groups[b + 1].pure_class()),
            (Some(a), Some(c)) if a == c
        );
        if same_pure {
            continue;
        }
        let right: Vec<usize> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
        let n_right = n - n_left;
        let weighted = (n_left as f64 * entropy_of_counts(&left, n_left)
            + n_right as f64 * entropy_of_counts(&right, n_right))
            / n as f64;
        if best.is_none_or(|(w, _)| weighted < w) {
            best = Some((weighted, b));
        }
    }
    let Some((weighted, b)) = best else {
        return;
    };

    let (lg, rg) = groups.split_at(b + 1);
    let count = |gs: &[Group]| {
        let mut c = vec![0; k];
        for g in gs {
            for (a, x) in c.iter_mut().zip(&g.counts) {
                *a += x;
            }
        }
        c
    };
    let (lc, rc) = (count(lg), count(rg));
    let (nl, nr) = (lc.iter().sum::<usize>(), rc.iter().sum::<usize>());
    let present = |c: &[usize]| c.iter().filter(|&&x| x > 0).count() as f64;
    let (h1, h2) = (entropy_of_counts(&lc, nl), entropy_of_counts(&rc, nr));
    let (k0, k1, k2) = (present(&total), present(&lc), present(&rc));
    let gain = h_all - weighted;
    let nf = n as f64;
    let delta = (3f64.powf(k0) - 2.0).log2() - (k0 * h_all - k1 * h1 - k2 * h2);
    let threshold = ((nf - 1.0).log2() + delta) / nf;
    if gain <= threshold {
        return;
    }

    split_groups(lg, k, cuts);
    let (a, c) = (lg[lg.len() - 1].value, rg[0].value);
    let mid = a + (c - a) / 2.0;
    cuts.push(if mid > a { mid } else { c });
    split_groups(rg, k, cuts);
}

/// Class entropy minus the expected class entropy within the discretised bins.
pub fn info_gain(values: &[f64], labels: &[usize], disc: &Discretizer) -> Result<f64> {
    check_lengths(values, labels)?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    Ok(info_gain_codes(&disc.codes(values), labels))
}

fn info_gain_codes(codes: &[usize], labels: &[usize]) -> f64 {
    let h = entropy_of_counts(&class_counts(labels, num_classes(labels)), labels.len());
    let h_joint = joint_entropy(codes, labels);
    let h_codes = entropy_of_counts(&class_counts(codes, num_classes(codes)), codes.len());
    // H(Y) - H(Y|X) with H(Y|X) = H(X,Y) - H(X)
    (h - (h_joint - h_codes)).max(0.0)
}

/// Normalised mutual dependence of two discrete sequences in `[0, 1]`;
/// zero when both are constant.
pub fn symmetric_uncertainty(a: &[usize], b: &[usize]) -> f64 {
    let ha = entropy_of_counts(&class_counts(a, num_classes(a)), a.len());
    let hb = entropy_of_counts(&class_counts(b, num_classes(b)), b.len());
    if ha + hb <= 0.0 {
        return 0.0;
    }
    let mi = (ha + hb - joint_entropy(a, b)).max(0.0);
    (2.0 * mi / (ha + hb)).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub feature: usize,
    pub ig: f64,
}

/// Features sorted by information gain, highest first; ties by ascending index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeatures(pub Vec<RankedFeature>);

impl RankedFeatures {
    pub fn top(&self, k: usize) -> Vec<usize> {
        self.0.iter().take(k).map(|r| r.feature).collect()
    }
}

pub fn rank_by_ig(
    features: &FeatureMatrix,
    labels: &[usize],
    method: Discretization,
) -> Result<RankedFeatures> {
    if features.dims() == 0 {
        return Err(Error::EmptyInput("feature columns"));
    }
    if features.frames() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.frames(),
            found: labels.len(),
        });
    }
    let mut ranked = (0..features.dims())
        .map(|j| {
            let col = features.column(j);
            let disc = method.fit(&col, labels)?;
            Ok(RankedFeature {
                feature: j,
                ig: info_gain(&col, labels, &disc)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.ig.total_cmp(&a.ig).then(a.feature.cmp(&b.feature)));
    Ok(RankedFeatures(ranked))
}

/// CFS merit `k·r̄cf / sqrt(k + k(k−1)·r̄ff)` of a feature subset.
pub fn cfs_merit(subset: &[usize], su_fc: &[f64], su_ff: &[Vec<f64>]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::EmptyInput("feature subset"));
    }
    let k = subset.len() as f64;
    let r_cf = subset.iter().map(|&i| su_fc[i]).sum::<f64>() / k;
    let mut ff_sum = 0.0;
    for (a, &i) in subset.iter().enumerate() {
        for &j in &subset[a + 1..] {
            ff_sum += su_ff[i][j];
        }
    }
    let pairs = k * (k - 1.0) / 2.0;
    let r_ff = if pairs > 0.0 { ff_sum / pairs } else { 0.0 };
    let denom = (k + k * (k - 1.0) * r_ff).sqrt();
    Ok(if denom > 0.0 { k * r_cf / denom } else { 0.0 })
}

/// Symmetric uncertainties of every feature to the class and between feature pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTable {
    pub su_fc: Vec<f64>,
    pub su_ff: Vec<Vec<f64>>,
}

impl CorrelationTable {
    pub fn from_features(
        features: &FeatureMatrix,
        labels: &[usize],
        method: Discretization,
    ) -> Result<Self> {
        if features.frames() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.frames(),
                found: labels.len(),
            });
        }
        let codes = (0..features.dims())
            .map(|j| {
                let col = features.column(j);
                Ok(method.fit(&col, labels)?.codes(&col))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_codes(&codes, labels))
    }

    /// Builds the table from already-discrete feature codes.
    pub fn from_codes(codes: &[Vec<usize>], labels: &[usize]) -> Self {
        let d = codes.len();
        let su_fc = codes
            .iter()
            .map(|c| symmetric_uncertainty(c, labels))
            .collect();
        let mut su_ff = vec![vec![0.0; d]; d];
        for i in 0..d {
            su_ff[i][i] = 1.0;
            for j in i + 1..d {
                let s = symmetric_uncertainty(&codes[i], &codes[j]);
                su_ff[i][j] = s;
                su_ff[j][i] = s;
            }
        }
        Self { su_fc, su_ff }
    }

    pub fn num_features(&self) -> usize {
        self.su_fc.len()
    }

    pub fn merit(&self, subset: &[usize]) -> Result<f64> {
        cfs_merit(subset, &self.su_fc, &self.su_ff)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    /// Selected feature indices, ascending.
    pub selected: Vec<usize>,
    pub merit: f64,
    /// Number of subsets scored during the search.
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    subset: Vec<usize>,
    merit: f64,
}

impl Eq for Node {}

impl Ord for Node {
    // max-heap: higher merit first, then lexicographically smaller subset
    fn cmp(&self, other: &Self) -> Ordering {
        self.merit
            .total_cmp(&other.merit)
            .then_with(|| other.subset.cmp(&self.subset))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Forward best-first search over feature subsets, stopping after
/// `max_stale` consecutive expansions that fail to improve the best merit.
pub fn best_first_search(table: &CorrelationTable, max_stale: usize) -> Result<SubsetResult> {
    let d = table.num_features();
    if d == 0 {
        return Err(Error::EmptyInput("feature columns"));
    }
    let mut open = BinaryHeap::new();
    let mut visited: BTreeSet<Vec<usize>> = BTreeSet::new();
    open.push(Node {
        subset: Vec::new(),
        merit: 0.0,
    });
    visited.insert(Vec::new());
    let mut best: Option<Node> = None;
    let mut stale = 0;
    let mut evaluations = 0;

    while let Some(node) = open.pop() {
        let mut improved = false;
        for f in 0..d {
            if node.subset.contains(&f) {
                continue;
            }
            let mut child = node.subset.clone();
            let pos = child.partition_point(|&x| x < f);
            child.insert(pos, f);
            if !visited.insert(child.clone()) {
                continue;
            }
            let merit = table.merit(&child)?;
            evaluations += 1;
            if best.as_ref().is_none_or(|b| merit > b.merit) {
                best = Some(Node {
                    subset: child.clone(),
                    merit,
                });
                improved = true;
            }
            open.push(Node {
                subset: child,
                merit,
            });
        }
        if improved {
            stale = 0;
        } else {
            stale += 1;
            if stale >= max_stale {
                break;
            }
        }
    }
    let best = best.ok_or(Error::EmptyInput("feature columns"))?;
    Ok(SubsetResult {
        selected: best.subset,
        merit: best.merit,
        evaluations,
    })
}

pub fn best_first_cfs(
    features: &FeatureMatrix,
    labels: &[usize],
    max_stale: usize,
    method: Discretization,
) -> Result<SubsetResult> {
    let table = CorrelationTable::from_features(features, labels, method)?;
    best_first_search(&table, max_stale)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub feature: usize,
    pub name: String,
    pub ig: f64,
}

/// Selection outcome as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum SelectionReport {
    Ig {
        discretization: Discretization,
        top_k: usize,
        ranked: Vec<RankedEntry>,
        selected: Vec<usize>,
        selected_names: Vec<String>,
        evaluations: usize,
    },
    Cfs {
        discretization: Discretization,
        max_stale: usize,
        selected: Vec<usize>,
        selected_names: Vec<String>,
        merit: f64,
        evaluations: usize,
    },
}

impl SelectionReport {
    pub fn selected(&self) -> &[usize] {
        match self {
            SelectionReport::Ig { selected, .. } | SelectionReport::Cfs { selected, .. } => {
                selected
            }
        }
    }

    pub fn selected_names(&self) -> &[String] {
        match self {
            SelectionReport::Ig { selected_names, .. }
            | SelectionReport::Cfs { selected_names, .. } => selected_names,
        }
    }

    /// Indices of the selected features within `names`, checking that the
    /// feature layout matches the one the selection was made on.
    pub fn columns_for(&self, names: &[String]) -> Result<Vec<usize>> {
        for (&i, name) in self.selected().iter().zip(self.selected_names()) {
            if names.get(i) != Some(name) {
                return Err(Error::Validation(format!(
                    "selected feature {i} ({name}) not found at that column"
                )));
            }
        }
        Ok(self.selected().to_vec())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        if report.selected().len() != report.selected_names().len() || report.selected().is_empty() {
            return Err(Error::Validation("selection report lists no usable features".into()));
        }
        Ok(report)
    }

    pub fn ig(
        features: &FeatureMatrix,
        labels: &[usize],
        top_k: usize,
        discretization: Discretization,
    ) -> Result<Self> {
        let ranked = rank_by_ig(features, labels, discretization)?;
        let names = features.feature_names();
        let selected = ranked.top(top_k);
        Ok(SelectionReport::Ig {
            discretization,
            top_k,
            selected_names: selected.iter().map(|&i| names[i].clone()).collect(),
            selected,
            evaluations: ranked.0.len(),
            ranked: ranked
                .0
                .iter()
                .map(|r| RankedEntry {
                    feature: r.feature,
                    name: names[r.feature].clone(),
                    ig: r.ig,
                })
                .collect(),
        })
    }

    pub fn cfs(
        features: &FeatureMatrix,
        labels: &[usize],
        max_stale: usize,
        discretization: Discretization,
    ) -> Result<Self> {
        let result = best_first_cfs(features, labels, max_stale, discretization)?;
        let names = features.feature_names();
        Ok(SelectionReport::Cfs {
            discretization,
            max_stale,
            selected_names: result.selected.iter().map(|&i| names[i].clone()).collect(),
            selected: result.selected,
            merit: result.merit,
            evaluations: result.evaluations,
        })
    }
}
