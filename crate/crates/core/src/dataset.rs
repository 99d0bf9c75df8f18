//! Per-trip feature extraction and the feature CSV format.
//!
//! A feature file holds every trip of a corpus, one row per frame, rows of a
//! trip contiguous:
//!
//! ```text
//! trip_id,frame_time_s,label,speed_mph,<feature names...>
//! ```
//!
//! Numbers are written with 9 significant digits.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::TripData;
use crate::features::{
    asf_features, default_filterbank, third_octave_features, FeatureMatrix, FrameSpec,
    OCTAVE_BIN_MS, OCTAVE_CENTERS_HZ,
};
use crate::ingest::{label_frames, load_wav, AudioClip, Condition, TripManifest};

const LEADING: [&str; 4] = ["trip_id", "frame_time_s", "label", "speed_mph"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    /// 54-dim auditory spectral features at a 10 ms hop.
    Asf,
    /// Four third-octave band energies over 125 ms bins.
    Octave,
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asf" => Ok(Self::Asf),
            "octave" => Ok(Self::Octave),
            other => Err(Error::InvalidParameter(format!(
                "unknown feature set '{other}' (expected asf or octave)"
            ))),
        }
    }
}

/// Features of one trip with per-frame labels and speeds.
#[derive(Debug, Clone, PartialEq)]
pub struct TripFeatures {
    pub trip_id: String,
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    pub speeds: Vec<f64>,
}

impl TripFeatures {
    pub fn frames(&self) -> usize {
        self.labels.len()
    }
}

/// Loads a trip's audio (relative paths resolve against `base_dir`) and
/// computes the requested feature set, labelled from the manifest.
pub fn extract_trip(trip: &TripManifest, base_dir: &Path, set: FeatureSet) -> Result<TripFeatures> {
    let clip = load_wav(base_dir.join(&trip.audio_path))?;
    clip_features(trip, &clip, set)
}

/// Features of an in-memory clip, labelled from its manifest entry.
pub fn clip_features(trip: &TripManifest, clip: &AudioClip, set: FeatureSet) -> Result<TripFeatures> {
    let features = match set {
        FeatureSet::Asf => {
            let spec = FrameSpec::default();
            let bank = default_filterbank(&spec, clip.sample_rate())?;
            asf_features(clip, &spec, &bank)?
        }
        FeatureSet::Octave => third_octave_features(clip, OCTAVE_BIN_MS, &OCTAVE_CENTERS_HZ)?,
    };
    let labeled = label_frames(trip, features.frame_times())?;
    Ok(TripFeatures {
        trip_id: trip.trip_id.clone(),
        features,
        labels: labeled.labels,
        speeds: labeled.speeds,
    })
}

/// `%.9g`-style formatting: 9 significant digits, trailing zeros trimmed,
/// exponent form outside `1e-4 .. 1e9`.
pub fn fmt_sig(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mant, exp) = sci.split_once('e').unwrap_or((&sci, "0"));
    let exp: i32 = exp.parse().unwrap_or(0);
    if !(-4..9).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mant), exp.abs())
    } else {
        trim_zeros(&format!("{v:.*}", (8 - exp) as usize)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn features_to_csv(trips: &[TripFeatures]) -> Result<String> {
    let first = trips.first().ok_or(Error::EmptyInput("feature rows"))?;
    let names = first.features.feature_names();
    let mut out = LEADING.join(",");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    let mut seen = BTreeSet::new();
    for t in trips {
        if t.features.feature_names() != names {
            return Err(Error::Validation(format!(
                "trip {} has a different feature layout",
                t.trip_id
            )));
        }
        if t.trip_id.is_empty() || t.trip_id.contains([',', '\n', '"']) {
            return Err(Error::Validation(format!("trip id {:?} not CSV-safe", t.trip_id)));
        }
        if !seen.insert(t.trip_id.as_str()) {
            return Err(Error::Validation(format!("duplicate trip {}", t.trip_id)));
        }
        for i in 0..t.frames() {
            let _ = write!(
                out,
                "{},{},{},{}",
                t.trip_id,
                fmt_sig(t.features.frame_times()[i]),
                t.labels[i],
                fmt_sig(t.speeds[i])
            );
            for &v in t.features.row(i) {
                out.push(',');
                out.push_str(&fmt_sig(v));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

fn parse_num(field: &str, line: usize) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::Validation(format!("line {line}: '{field}' is not a number")))
}

pub fn parse_feature_csv(text: &str) -> Result<Vec<TripFeatures>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::EmptyInput("feature file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() <= LEADING.len() || cols[..LEADING.len()] != LEADING {
        return Err(Error::Validation(format!(
            "feature header must start with {} and name at least one feature",
            LEADING.join(",")
        )));
    }
    let names: Vec<String> = cols[LEADING.len()..].iter().map(|s| s.to_string()).collect();
    let dims = names.len();

    struct Partial {
        id: String,
        times: Vec<f64>,
        labels: Vec<usize>,
        speeds: Vec<f64>,
        values: Vec<f64>,
    }
    let mut parts: Vec<Partial> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Validation(format!(
                "line {lineno}: expected {} fields, found {}",
                cols.len(),
                fields.len()
            )));
        }
        let id = fields[0];
        let open = parts.last().is_some_and(|p| p.id == id);
        if !open {
            if index.contains_key(id) {
                return Err(Error::Validation(format!(
                    "line {lineno}: rows of trip {id} are not contiguous"
                )));
            }
            index.insert(id.to_string(), parts.len());
            parts.push(Partial {
                id: id.to_string(),
                times: Vec::new(),
                labels: Vec::new(),
                speeds: Vec::new(),
                values: Vec::new(),
            });
        }
        let p = parts.last_mut().expect("pushed above");
        p.times.push(parse_num(fields[1], lineno)?);
        let label: usize = fields[2]
            .parse()
            .ok()
            .filter(|&l| l <= 1)
            .ok_or_else(|| Error::Validation(format!("line {lineno}: label must be 0 or 1")))?;
        p.labels.push(label);
        p.speeds.push(parse_num(fields[3], lineno)?);
        for f in &fields[LEADING.len()..] {
            let v = parse_num(f, lineno)?;
            if !v.is_finite() {
                return Err(Error::Validation(format!("line {lineno}: non-finite feature")));
            }
            p.values.push(v);
        }
    }
    if parts.is_empty() {
        return Err(Error::EmptyInput("feature rows"));
    }
    parts
        .into_iter()
        .map(|p| {
            debug_assert_eq!(p.values.len(), p.times.len() * dims);
            Ok(TripFeatures {
                trip_id: p.id,
                features: FeatureMatrix::new(names.clone(), p.times, p.values)?,
                labels: p.labels,
                speeds: p.speeds,
            })
        })
        .collect()
}

/// Attaches route and condition from the manifest. Every trip in the
/// feature file must appear in the manifest and agree with its label.
pub fn join_manifest(trips: Vec<TripFeatures>, manifest: &[TripManifest]) -> Result<Vec<TripData>> {
    let by_id: HashMap<&str, &TripManifest> =
        manifest.iter().map(|m| (m.trip_id.as_str(), m)).collect();
    trips
        .into_iter()
        .map(|t| {
            let m = by_id.get(t.trip_id.as_str()).ok_or_else(|| {
                Error::Validation(format!("trip {} missing from manifest", t.trip_id))
            })?;
            if t.labels.iter().any(|&l| l != m.condition.class()) {
                return Err(Error::Validation(format!(
                    "trip {}: labels disagree with manifest condition {:?}",
                    t.trip_id, m.condition
                )));
            }
            Ok(TripData {
                trip_id: t.trip_id,
                route_id: m.route_id,
                condition: m.condition,
                features: t.features,
                labels: t.labels,
                speeds: t.speeds,
            })
        })
        .collect()
}

/// Inverse of [`join_manifest`], dropping route and condition.
impl From<TripData> for TripFeatures {
    fn from(t: TripData) -> Self {
        Self {
            trip_id: t.trip_id,
            features: t.features,
            labels: t.labels,
            speeds: t.speeds,
        }
    }
}

/// Keeps only the given feature columns of every trip.
pub fn select_trip_columns(trips: &[TripData], columns: &[usize]) -> Result<Vec<TripData>> {
    trips
        .iter()
        .map(|t| {
            Ok(TripData {
                features: t.features.select_columns(columns)?,
                ..t.clone()
            })
        })
        .collect()
}

/// Row-wise concatenation of all trips' features with their labels.
pub fn stack(trips: &[&TripData]) -> Result<(FeatureMatrix, Vec<usize>)> {
    let first = trips.first().ok_or(Error::EmptyInput("trips"))?;
    let names = first.features.feature_names().to_vec();
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for t in trips {
        if t.features.dims() != names.len() {
            return Err(Error::DimensionMismatch {
                expected: names.len(),
                found: t.features.dims(),
            });
        }
        times.extend_from_slice(t.features.frame_times());
        values.extend_from_slice(t.features.values());
        labels.extend_from_slice(&t.labels);
    }
    Ok((FeatureMatrix::new(names, times, values)?, labels))
}

pub fn condition_of(labels: &[usize]) -> Option<Condition> {
    labels.first().and_then(|&l| Condition::from_class(l))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig_formatting() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(0.1), "0.1");
        assert_eq!(fmt_sig(-2.5), "-2.5");
        assert_eq!(fmt_sig(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig(123456789.4), "123456789");
        assert_eq!(fmt_sig(1234567891.0), "1.23456789e+09");
        assert_eq!(fmt_sig(0.00001234), "1.234e-05");
        assert_eq!(fmt_sig(0.0001234), "0.0001234");
        assert_eq!(fmt_sig(9.9999999999), "10");
    }

    fn trip(id: &str, label: usize, rows: usize) -> TripFeatures {
        let times = (0..rows).map(|i| i as f64 * 0.01).collect();
        let values = (0..rows * 2).map(|i| i as f64 / 7.0).collect();
        TripFeatures {
            trip_id: id.into(),
            features: FeatureMatrix::new(vec!["a".into(), "b".into()], times, values).unwrap(),
            labels: vec![label; rows],
            speeds: vec![3.25; rows],
        }
    }

    #[test]
    fn csv_round_trip() {
        let trips = vec![trip("w1", 1, 3), trip("d1", 0, 2)];
        let text = features_to_csv(&trips).unwrap();
        assert!(text.starts_with("trip_id,frame_time_s,label,speed_mph,a,b\n"));
        let back = parse_feature_csv(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].trip_id, "w1");
        assert_eq!(back[1].labels, vec![0, 0]);
        for (a, b) in trips[0].features.values().iter().zip(back[0].features.values()) {
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1e-300));
        }
        assert_eq!(features_to_csv(&back).unwrap(), text);
    }

    #[test]
    fn csv_rejects_bad_input() {
        assert!(parse_feature_csv("").is_err());
        assert!(parse_feature_csv("trip,x\n").is_err());
        let h = "trip_id,frame_time_s,label,speed_mph,a\n";
        assert!(parse_feature_csv(&format!("{h}t,0,2,0,1\n")).is_err());
        assert!(parse_feature_csv(&format!("{h}t,0,1,0\n")).is_err());
        assert!(parse_feature_csv(&format!("{h}t,0,1,0,x\n")).is_err());
        assert!(parse_feature_csv(&format!("{h}t,0,1,0,1\nu,0,1,0,1\nt,0,1,0,1\n")).is_err());
    }
}
