//! Audio and trip metadata loading, speed alignment and frame labelling.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono audio with its sample rate. Samples are amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Validation("sample rate must be positive".into()));
        }
        if let Some((i, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !(-1.0..=1.0).contains(*s))
        {
            return Err(Error::Validation(format!(
                "sample {i} = {s} outside [-1, 1]"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Reads a mono PCM WAV file (16-bit integer or 32-bit float).
///
/// Integer samples are scaled by 1/32768. Multichannel files are rejected.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::ChannelCount(spec.channels));
    }
    let wav_err = |e: hound::Error| Error::Wav {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (format, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{format:?} with {bits} bits per sample"
            )))
        }
    };
    AudioClip::new(samples, spec.sample_rate)
}

/// Writes a clip as mono 16-bit PCM. Amplitudes are scaled by 32768 and
/// saturated to the `i16` range.
pub fn write_wav_pcm16(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |e: hound::Error| Error::Wav {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &clip.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Dry,
    Wet,
}

impl Condition {
    /// Class index used throughout: Dry = 0, Wet = 1.
    pub fn class(self) -> usize {
        match self {
            Condition::Dry => 0,
            Condition::Wet => 1,
        }
    }

    pub fn from_class(class: usize) -> Option<Self> {
        match class {
            0 => Some(Condition::Dry),
            1 => Some(Condition::Wet),
            _ => None,
        }
    }
}

/// One speed sample: seconds since the start of the recording and speed in mph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedPoint(pub f64, pub f64);

impl SpeedPoint {
    pub fn time_s(self) -> f64 {
        self.0
    }

    pub fn mph(self) -> f64 {
        self.1
    }
}

/// Metadata for one recorded trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripManifest {
    pub trip_id: String,
    pub route_id: u32,
    pub condition: Condition,
    pub audio_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_iri: Option<f64>,
    pub speed_log: Vec<SpeedPoint>,
}

impl TripManifest {
    pub fn validate(&self) -> Result<()> {
        for w in self.speed_log.windows(2) {
            if !(w[1].time_s() > w[0].time_s()) {
                return Err(Error::Validation(format!(
                    "trip {}: speed log times must be strictly increasing ({} then {})",
                    self.trip_id,
                    w[0].time_s(),
                    w[1].time_s()
                )));
            }
        }
        for p in &self.speed_log {
            if !p.time_s().is_finite() || !p.mph().is_finite() || p.mph() < 0.0 {
                return Err(Error::Validation(format!(
                    "trip {}: invalid speed sample ({}, {})",
                    self.trip_id,
                    p.time_s(),
                    p.mph()
                )));
            }
        }
        if let Some(iri) = self.avg_iri {
            if !iri.is_finite() || iri < 0.0 {
                return Err(Error::Validation(format!(
                    "trip {}: invalid avg_iri {iri}",
                    self.trip_id
                )));
            }
        }
        Ok(())
    }
}

pub fn parse_manifest_str(text: &str) -> Result<Vec<TripManifest>> {
    let trips: Vec<TripManifest> = serde_json::from_str(text)?;
    for t in &trips {
        t.validate()?;
    }
    Ok(trips)
}

pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Vec<TripManifest>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest_str(&text)
}

pub fn manifest_to_json(trips: &[TripManifest]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(trips)?;
    s.push('\n');
    Ok(s)
}

/// Speed at time `t`: linear interpolation between bracketing log points,
/// constant outside the logged range.
pub fn speed_at(manifest: &TripManifest, t: f64) -> Result<f64> {
    let log = &manifest.speed_log;
    let (first, last) = match (log.first(), log.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(Error::EmptyInput("speed log")),
    };
    if t <= first.time_s() {
        return Ok(first.mph());
    }
    if t >= last.time_s() {
        return Ok(last.mph());
    }
    // first index whose time is > t; guaranteed in 1..len
    let hi = log.partition_point(|p| p.time_s() <= t);
    let (a, b) = (log[hi - 1], log[hi]);
    let frac = (t - a.time_s()) / (b.time_s() - a.time_s());
    Ok(a.mph() + frac * (b.mph() - a.mph()))
}

/// Per-frame labels and speeds for one trip.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub trip_id: String,
    pub route_id: u32,
    pub frame_times: Vec<f64>,
    pub labels: Vec<usize>,
    pub speeds: Vec<f64>,
}

impl LabeledSequence {
    pub fn len(&self) -> usize {
        self.frame_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_times.is_empty()
    }
}

pub fn label_frames(manifest: &TripManifest, frame_times: &[f64]) -> Result<LabeledSequence> {
    if frame_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Validation("frame times must be sorted".into()));
    }
    let speeds = frame_times
        .iter()
        .map(|&t| speed_at(manifest, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledSequence {
        trip_id: manifest.trip_id.clone(),
        route_id: manifest.route_id,
        frame_times: frame_times.to_vec(),
        labels: vec![manifest.condition.class(); frame_times.len()],
        speeds,
    })
}
