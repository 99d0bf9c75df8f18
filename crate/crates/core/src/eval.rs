//! Confusion matrices, unweighted average recall, the leave-route-out
//! protocol, speed-stratified analysis and PCA projection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::ingest::Condition;

/// Speed below which a vehicle is treated as (nearly) stationary, in mph.
pub const LOW_SPEED_MPH: f64 = 2.9;

/// `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_pairs(classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::DimensionMismatch {
                expected: truth.len(),
                found: predicted.len(),
            });
        }
        let mut cm = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::Validation(format!(
                    "class ({t}, {p}) outside 0..{classes}"
                )));
            }
            cm.add(t, p);
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn recall(&self, class: usize) -> Result<f64> {
        let row = &self.counts[class];
        let n: u64 = row.iter().sum();
        if n == 0 {
            return Err(Error::UndefinedRecall(class));
        }
        Ok(row[class] as f64 / n as f64)
    }

    pub fn uar(&self) -> Result<f64> {
        uar(self)
    }
}

/// Mean of per-class recalls. Every class needs at least one true example.
pub fn uar(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.classes() == 0 {
        return Err(Error::EmptyInput("confusion matrix"));
    }
    let mut sum = 0.0;
    for c in 0..cm.classes() {
        sum += cm.recall(c)?;
    }
    Ok(sum / cm.classes() as f64)
}

/// Features and per-frame metadata of one trip.
#[derive(Debug, Clone, PartialEq)]
pub struct TripData {
    pub trip_id: String,
    pub route_id: u32,
    pub condition: Condition,
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    pub speeds: Vec<f64>,
}

impl TripData {
    pub fn frames(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub trip_id: String,
    pub time_s: f64,
    pub speed_mph: f64,
    pub label: usize,
    pub prediction: usize,
    pub posterior_wet: f64,
}

/// Per-frame decisions of a trained classifier on one trip.
#[derive(Debug, Clone, PartialEq)]
pub struct TripPrediction {
    pub classes: Vec<usize>,
    pub posterior_wet: Vec<f64>,
}

/// A classifier family under evaluation: fit on training trips (validation
/// trips may steer early stopping), then predict frames of unseen trips.
pub trait Learner {
    type Model;

    fn fit(&self, train: &[&TripData], validation: &[&TripData]) -> Result<Self::Model>;

    fn predict(&self, model: &Self::Model, trip: &TripData) -> Result<TripPrediction>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub frames: usize,
    /// `None` when a class is absent from the stratum.
    pub uar: Option<f64>,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedStrata {
    pub threshold_mph: f64,
    pub below: Stratum,
    pub at_or_above: Stratum,
}

/// UAR on frames below `threshold` and at or above it.
pub fn speed_stratified_uar(timeline: &[TimelineEntry], threshold: f64) -> SpeedStrata {
    let mut below = ConfusionMatrix::new(2);
    let mut above = ConfusionMatrix::new(2);
    for e in timeline {
        let cm = if e.speed_mph < threshold {
            &mut below
        } else {
            &mut above
        };
        cm.add(e.label.min(1), e.prediction.min(1));
    }
    let stratum = |cm: ConfusionMatrix| Stratum {
        frames: cm.total() as usize,
        uar: cm.uar().ok(),
        confusion: cm,
    };
    SpeedStrata {
        threshold_mph: threshold,
        below: stratum(below),
        at_or_above: stratum(above),
    }
}

/// `(time_s, speed_mph)` of misclassified frames in ascending time.
pub fn false_prediction_timeline(timeline: &[TimelineEntry]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = timeline
        .iter()
        .filter(|e| e.label != e.prediction)
        .map(|e| (e.time_s, e.speed_mph))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub train_route: u32,
    pub test_route: u32,
    pub validation_routes: Vec<u32>,
    pub train_frames: usize,
    pub test_frames: usize,
    pub confusion: ConfusionMatrix,
    pub uar: f64,
    pub speed_strata: SpeedStrata,
    pub timeline: Vec<TimelineEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classifier: String,
    pub experiments: Vec<ExperimentResult>,
    /// Arithmetic mean of the per-experiment UARs.
    pub mean_uar: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Timeline CSV for external plotting, one row per evaluated frame.
    pub fn timeline_csv(&self) -> String {
        let mut out = String::from(
            "experiment,train_route,test_route,trip_id,time_s,speed_mph,label,prediction,posterior_wet\n",
        );
        for (i, e) in self.experiments.iter().enumerate() {
            for t in &e.timeline {
                let _ = writeln!(
                    out,
                    "{i},{},{},{},{},{},{},{},{}",
                    e.train_route,
                    e.test_route,
                    t.trip_id,
                    crate::dataset::fmt_sig(t.time_s),
                    crate::dataset::fmt_sig(t.speed_mph),
                    t.label,
                    t.prediction,
                    crate::dataset::fmt_sig(t.posterior_wet)
                );
            }
        }
        out
    }
}

/// Groups trips by route and checks every route has a wet and a dry trip.
pub fn group_by_route(trips: &[TripData]) -> Result<BTreeMap<u32, Vec<&TripData>>> {
    let mut routes: BTreeMap<u32, Vec<&TripData>> = BTreeMap::new();
    for t in trips {
        routes.entry(t.route_id).or_default().push(t);
    }
    for (route, ts) in &routes {
        for cond in [Condition::Wet, Condition::Dry] {
            if !ts.iter().any(|t| t.condition == cond) {
                return Err(Error::Validation(format!(
                    "route {route} has no {cond:?} trip"
                )));
            }
        }
    }
    Ok(routes)
}

/// Leave-route-out protocol: for every ordered pair of distinct routes, fit
/// on one route's trips and test on the other's. Trips of the remaining
/// routes are offered to the learner for validation only.
pub fn cross_route_eval<L: Learner>(
    trips: &[TripData],
    learner: &L,
    classifier: &str,
    speed_threshold: f64,
) -> Result<EvalReport> {
    let routes = group_by_route(trips)?;
    if routes.len() < 3 {
        return Err(Error::Validation(format!(
            "cross-route protocol needs >= 3 routes, found {}",
            routes.len()
        )));
    }
    let ids: Vec<u32> = routes.keys().copied().collect();
    let mut experiments = Vec::new();
    for &train_route in &ids {
        for &test_route in &ids {
            if train_route == test_route {
                continue;
            }
            let validation_routes: Vec<u32> = ids
                .iter()
                .copied()
                .filter(|&r| r != train_route && r != test_route)
                .collect();
            let train = &routes[&train_route];
            let validation: Vec<&TripData> = validation_routes
                .iter()
                .flat_map(|r| routes[r].iter().copied())
                .collect();
            let model = learner.fit(train, &validation)?;

            let mut confusion = ConfusionMatrix::new(2);
            let mut timeline = Vec::new();
            for trip in &routes[&test_route] {
                let pred = learner.predict(&model, trip)?;
                if pred.classes.len() != trip.frames() || pred.posterior_wet.len() != trip.frames() {
                    return Err(Error::DimensionMismatch {
                        expected: trip.frames(),
                        found: pred.classes.len(),
                    });
                }
                for t in 0..trip.frames() {
                    confusion.add(trip.labels[t], pred.classes[t]);
                    timeline.push(TimelineEntry {
                        trip_id: trip.trip_id.clone(),
                        time_s: trip.features.frame_times()[t],
                        speed_mph: trip.speeds[t],
                        label: trip.labels[t],
                        prediction: pred.classes[t],
                        posterior_wet: pred.posterior_wet[t],
                    });
                }
            }
            experiments.push(ExperimentResult {
                train_route,
                test_route,
                validation_routes,
                train_frames: train.iter().map(|t| t.frames()).sum(),
                test_frames: timeline.len(),
                uar: confusion.uar()?,
                speed_strata: speed_stratified_uar(&timeline, speed_threshold),
                confusion,
                timeline,
            });
        }
    }
    let mean_uar = experiments.iter().map(|e| e.uar).sum::<f64>() / experiments.len() as f64;
    Ok(EvalReport {
        classifier: classifier.to_string(),
        experiments,
        mean_uar,
    })
}

/// Routes whose trips were handed to `fit` as training data, for audit.
pub fn routes_of(trips: &[&TripData]) -> BTreeSet<u32> {
    trips.iter().map(|t| t.route_id).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// `n × k`, row-major.
    pub projected: Vec<f64>,
    pub k: usize,
    /// Fraction of total variance per component, descending.
    pub explained: Vec<f64>,
    /// `k × dims` unit loadings, row-major.
    pub components: Vec<f64>,
}

/// Projects centred rows onto the top-`k` eigenvectors of the sample
/// covariance. Each component is signed so its largest-magnitude loading is
/// positive.
pub fn pca_project(features: &FeatureMatrix, k: usize) -> Result<PcaProjection> {
    let (n, d) = (features.frames(), features.dims());
    if k > d {
        return Err(Error::InvalidParameter(format!(
            "cannot keep {k} components of {d}-dimensional data"
        )));
    }
    if n < 2 {
        return Err(Error::EmptyInput("pca needs at least two rows"));
    }
    let x = DMatrix::from_row_slice(n, d, features.values());
    let mean = x.row_mean();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut components = Vec::with_capacity(k * d);
    let mut explained = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.extend(v);
        let ev = eig.eigenvalues[idx].max(0.0);
        explained.push(if total > 0.0 { ev / total } else { 0.0 });
    }
    let mut projected = vec![0.0; n * k];
    for (i, row) in centered.row_iter().enumerate() {
        for c in 0..k {
            projected[i * k + c] = row
                .iter()
                .zip(&components[c * d..(c + 1) * d])
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    Ok(PcaProjection {
        projected,
        k,
        explained,
        components,
    })
}
