//! Deterministic synthetic tyre-noise corpus.
//!
//! Every trip is Gaussian noise shaped frame by frame in the STFT domain
//! (512-sample frames, 50 % overlap, root-Hann analysis and synthesis
//! windows). The shaping power spectrum is the sum of
//!
//! * road noise whose level grows with speed, whose tilt steepens toward
//!   high frequencies with speed, and whose amplitude is modulated at a
//!   speed-proportional tread rate;
//! * for surfaces with a spray component, band-limited hiss in
//!   2.2–4.2 kHz and 5.8–7.8 kHz that follows the road-noise level;
//! * stationary ambient noise;
//! * faint passing-vehicle bursts during stops, coloured like the trip's
//!   own surface.
//!
//! Wet and dry trips of one route share the speed trajectory.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{manifest_to_json, speed_at, write_wav_pcm16, AudioClip, Condition, SpeedPoint, TripManifest};

const STFT_LEN: usize = 512;
const STFT_HOP: usize = STFT_LEN / 2;
const SPRAY_BANDS_HZ: [(f64, f64); 2] = [(2200.0, 4200.0), (5800.0, 7800.0)];
/// Spacing of the speed-log knots written to the manifest.
const KNOT_STEP_S: f64 = 0.25;
const BURST_S: f64 = 1.6;
const BURST_SPACING_S: f64 = 1.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceProfile {
    /// Road-noise spectral slope at the reference speed, dB per octave re 1 kHz.
    pub tilt_db_per_octave: f64,
    /// Road-noise RMS at the reference speed, dBFS.
    pub level_db: f64,
    /// Tread amplitude-modulation depth in [0, 1).
    pub am_depth: f64,
    /// Tread modulation frequency per mph of speed, Hz.
    pub am_rate_hz_per_mph: f64,
    /// Spray hiss level relative to the road noise, dB; `None` for no spray.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spray_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedProfile {
    pub min_mph: f64,
    pub max_mph: f64,
    /// Stationary time at the start of each trip.
    pub dwell_start_s: f64,
    /// Length of the stop halfway through each trip.
    pub dwell_mid_s: f64,
    pub accel_mph_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub routes: u32,
    pub trip_seconds: f64,
    pub sample_rate: u32,
    pub wet: SurfaceProfile,
    pub dry: SurfaceProfile,
    pub speed: SpeedProfile,
    /// Speed at which surface levels and tilts are specified.
    pub reference_mph: f64,
    /// Road-noise amplitude grows as `(v / reference)^exponent`.
    pub speed_exponent: f64,
    /// Extra tilt per unit of `v / reference − 1`, shared by both surfaces.
    pub speed_tilt_db_per_octave: f64,
    pub ambient_db: f64,
    pub passing_db: f64,
    /// Per-trip recording gain drawn uniformly from ±this, dB.
    pub gain_jitter_db: f64,
    /// Fixed output scaling before clamping to [−1, 1].
    pub headroom: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 2016,
            routes: 3,
            trip_seconds: 60.0,
            sample_rate: 16_000,
            wet: SurfaceProfile {
                tilt_db_per_octave: -2.5,
                level_db: -26.0,
                am_depth: 0.15,
                am_rate_hz_per_mph: 0.4,
                spray_db: Some(-8.0),
            },
            dry: SurfaceProfile {
                tilt_db_per_octave: -4.0,
                level_db: -26.0,
                am_depth: 0.3,
                am_rate_hz_per_mph: 0.4,
                spray_db: None,
            },
            speed: SpeedProfile {
                min_mph: 8.0,
                max_mph: 40.0,
                dwell_start_s: 2.5,
                dwell_mid_s: 3.0,
                accel_mph_per_s: 4.0,
            },
            reference_mph: 30.0,
            speed_exponent: 1.5,
            speed_tilt_db_per_octave: 2.0,
            ambient_db: -50.0,
            passing_db: -38.0,
            gain_jitter_db: 3.0,
            headroom: 1.0,
        }
    }
}

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.routes == 0 {
            return bad("routes must be at least 1".into());
        }
        if self.sample_rate < 8000 {
            return bad(format!("sample rate {} below 8000 Hz", self.sample_rate));
        }
        let s = &self.speed;
        let stops = s.dwell_start_s + s.dwell_mid_s;
        if !(self.trip_seconds.is_finite() && self.trip_seconds >= stops + 2.0) {
            return bad(format!(
                "trip_seconds {} too short for the stops and ramps",
                self.trip_seconds
            ));
        }
        if !(s.min_mph > 0.0 && s.max_mph >= s.min_mph && s.accel_mph_per_s > 0.0)
            || s.dwell_start_s < 0.0
            || s.dwell_mid_s < 0.0
        {
            return bad("speed profile needs 0 < min_mph <= max_mph, positive accel, non-negative dwell".into());
        }
        for p in [&self.wet, &self.dry] {
            if !(0.0..1.0).contains(&p.am_depth) || p.am_rate_hz_per_mph < 0.0 {
                return bad("am_depth must lie in [0, 1) and am rate be non-negative".into());
            }
        }
        if !(self.reference_mph > 0.0 && self.speed_exponent > 0.0 && self.headroom > 0.0) {
            return bad("reference_mph, speed_exponent and headroom must be positive".into());
        }
        if self.gain_jitter_db < 0.0 {
            return bad("gain_jitter_db must be non-negative".into());
        }
        Ok(())
    }

    fn profile(&self, c: Condition) -> &SurfaceProfile {
        match c {
            Condition::Wet => &self.wet,
            Condition::Dry => &self.dry,
        }
    }
}

/// Stop windows `(start, end)` in seconds for a trip.
fn stop_windows(spec: &SynthSpec) -> [(f64, f64); 2] {
    let mid = spec.trip_seconds / 2.0;
    let half = spec.speed.dwell_mid_s / 2.0;
    [(0.0, spec.speed.dwell_start_s), (mid - half, mid + half)]
}

/// Piecewise-linear speed log of one route: a slowly wandering cruise speed,
/// zero during stops, with every change limited by the acceleration.
pub fn route_speed_log(spec: &SynthSpec, rng: &mut impl Rng) -> Vec<SpeedPoint> {
    let s = &spec.speed;
    let p1: f64 = rng.random_range(9.0..17.0);
    let p2: f64 = rng.random_range(23.0..41.0);
    let f1: f64 = rng.random_range(0.0..2.0 * PI);
    let f2: f64 = rng.random_range(0.0..2.0 * PI);
    let stops = stop_windows(spec);
    let n = (spec.trip_seconds / KNOT_STEP_S).floor() as usize;
    let times: Vec<f64> = (0..=n).map(|i| i as f64 * KNOT_STEP_S).collect();
    let mut v: Vec<f64> = times
        .iter()
        .map(|&t| {
            if stops.iter().any(|&(a, b)| t >= a && t <= b) {
                return 0.0;
            }
            let wander = 0.5 + 0.3 * (2.0 * PI * t / p1 + f1).sin() + 0.2 * (2.0 * PI * t / p2 + f2).sin();
            s.min_mph + (s.max_mph - s.min_mph) * wander.clamp(0.0, 1.0)
        })
        .collect();
    // acceleration limit, applied forward then backward; both only lower speeds
    let dv = s.accel_mph_per_s * KNOT_STEP_S;
    for i in 1..v.len() {
        v[i] = v[i].min(v[i - 1] + dv);
    }
    for i in (0..v.len() - 1).rev() {
        v[i] = v[i].min(v[i + 1] + dv);
    }
    times
        .into_iter()
        .zip(v)
        .map(|(t, v)| SpeedPoint(t, (v * 1e6).round() / 1e6))
        .collect()
}

fn bump(f: f64, lo: f64, hi: f64) -> f64 {
    if f <= lo || f >= hi {
        0.0
    } else {
        (PI * (f - lo) / (hi - lo)).sin().powi(2)
    }
}

/// Unit-power spectral shape over `bins` with the given tilt re 1 kHz.
fn tilted(freqs: &[f64], tilt_db: f64) -> Vec<f64> {
    let mut s: Vec<f64> = freqs
        .iter()
        .map(|&f| {
            let oct = (f.max(50.0) / 1000.0).log2();
            10f64.powf(tilt_db * oct / 10.0)
        })
        .collect();
    normalize(&mut s);
    s
}

fn normalize(s: &mut [f64]) {
    let total: f64 = s.iter().sum();
    if total > 0.0 {
        s.iter_mut().for_each(|v| *v /= total);
    }
}

fn db_power(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Audio of one trip on a precomputed speed log.
pub fn synthesize_trip(
    spec: &SynthSpec,
    condition: Condition,
    speed_log: &[SpeedPoint],
    seed: u64,
) -> Result<AudioClip> {
    spec.validate()?;
    let profile = spec.profile(condition);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gain_db = if spec.gain_jitter_db > 0.0 {
        rng.random_range(-spec.gain_jitter_db..=spec.gain_jitter_db)
    } else {
        0.0
    };
    let sr = f64::from(spec.sample_rate);
    let n = (spec.trip_seconds * sr).round() as usize;
    let bins = STFT_LEN / 2 + 1;
    let freqs: Vec<f64> = (0..bins).map(|k| k as f64 * sr / STFT_LEN as f64).collect();

    let mut spray = vec![0.0; bins];
    for (k, &f) in freqs.iter().enumerate() {
        spray[k] = SPRAY_BANDS_HZ.iter().map(|&(lo, hi)| bump(f, lo, hi)).sum();
    }
    normalize(&mut spray);
    let ambient = tilted(&freqs, -3.0);
    let spray_power = profile.spray_db.map(db_power).unwrap_or(0.0);

    let manifest = TripManifest {
        trip_id: String::new(),
        route_id: 0,
        condition,
        audio_path: String::new(),
        avg_iri: None,
        speed_log: speed_log.to_vec(),
    };
    let stops = stop_windows(spec);
    let bursts: Vec<f64> = stops
        .iter()
        .flat_map(|&(a, b)| {
            let count = ((b - a) / BURST_SPACING_S).ceil().max(0.0) as usize;
            (0..count).map(move |i| a + i as f64 * BURST_SPACING_S)
        })
        .collect();

    // frames centred every hop; padded so every output sample is covered twice
    let frames = n.div_ceil(STFT_HOP) + 1;
    let padded = (frames + 1) * STFT_HOP;
    let noise: Vec<f64> = (0..padded).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let window: Vec<f64> = (0..STFT_LEN)
        .map(|i| (PI * i as f64 / STFT_LEN as f64).sin())
        .collect();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(STFT_LEN);
    let inv = planner.plan_fft_inverse(STFT_LEN);
    let mut out = vec![0.0; padded];
    let mut buf = vec![Complex::new(0.0, 0.0); STFT_LEN];
    let mut am_phase = 0.0;
    let mut prev_t = 0.0;
    let norm = (STFT_LEN as f64).recip();

    for m in 0..frames {
        let start = m * STFT_HOP;
        let t = (start as f64 + STFT_LEN as f64 / 2.0 - STFT_HOP as f64) / sr;
        let v = speed_at(&manifest, t.max(0.0))?;
        am_phase += 2.0 * PI * profile.am_rate_hz_per_mph * v * (t - prev_t);
        prev_t = t;
        let rel = v / spec.reference_mph;
        let road_amp = rel.powf(spec.speed_exponent) * (1.0 + profile.am_depth * am_phase.sin());
        let road_power = db_power(profile.level_db) * road_amp * road_amp;
        let shape = tilted(
            &freqs,
            profile.tilt_db_per_octave + spec.speed_tilt_db_per_octave * (rel - 1.0),
        );
        let burst_env: f64 = bursts
            .iter()
            .map(|&b| {
                let x = (t - b) / BURST_S;
                if (0.0..1.0).contains(&x) {
                    (PI * x).sin().powi(2)
                } else {
                    0.0
                }
            })
            .sum();
        let burst_power = db_power(spec.passing_db) * burst_env;
        let still = tilted(&freqs, profile.tilt_db_per_octave);

        for (k, c) in buf.iter_mut().enumerate() {
            *c = Complex::new(noise[start + k] * window[k], 0.0);
        }
        fwd.process(&mut buf);
        for k in 0..bins {
            let p = road_power * (shape[k] + spray_power * spray[k])
                + burst_power * (still[k] + spray_power * spray[k])
                + db_power(spec.ambient_db) * ambient[k];
            // white noise through the root-Hann window has E|X_k|² = L/2 and the
            // inverse transform divides by L, so g² = L·p gives output power Σp
            let g = (p * STFT_LEN as f64).sqrt();
            buf[k] *= g;
            if k > 0 && k < STFT_LEN - k {
                buf[STFT_LEN - k] *= g;
            }
        }
        inv.process(&mut buf);
        for (k, c) in buf.iter().enumerate() {
            out[start + k] += c.re * norm * window[k];
        }
    }

    let scale = spec.headroom * 10f64.powf(gain_db / 20.0);
    // skip the first half frame, which only one window covers
    let samples: Vec<f64> = out[STFT_HOP..STFT_HOP + n]
        .iter()
        .map(|&x| (x * scale).clamp(-1.0, 1.0))
        .collect();
    AudioClip::new(samples, spec.sample_rate)
}

/// One generated trip held in memory.
#[derive(Debug, Clone)]
pub struct SynthTrip {
    pub manifest: TripManifest,
    pub clip: AudioClip,
}

/// All trips of the corpus, routes ascending, wet before dry.
pub fn generate_trips(spec: &SynthSpec) -> Result<Vec<SynthTrip>> {
    spec.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut trips = Vec::new();
    for route in 1..=spec.routes {
        let route_seed = master.next_u64();
        let wet_seed = master.next_u64();
        let dry_seed = master.next_u64();
        let log = route_speed_log(spec, &mut ChaCha8Rng::seed_from_u64(route_seed));
        for (condition, seed) in [(Condition::Wet, wet_seed), (Condition::Dry, dry_seed)] {
            let name = format!("r{route}_{}", if condition == Condition::Wet { "wet" } else { "dry" });
            let clip = synthesize_trip(spec, condition, &log, seed)?;
            let manifest = TripManifest {
                trip_id: name.clone(),
                route_id: route,
                condition,
                audio_path: format!("{name}.wav"),
                avg_iri: None,
                speed_log: log.clone(),
            };
            manifest.validate()?;
            trips.push(SynthTrip { manifest, clip });
        }
    }
    Ok(trips)
}

/// Writes `manifest.json` and one 16-bit WAV per trip into `out_dir`.
/// Returns the manifest path.
pub fn generate_corpus(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let trips = generate_trips(spec)?;
    for t in &trips {
        write_wav_pcm16(dir.join(&t.manifest.audio_path), &t.clip)?;
    }
    let manifests: Vec<TripManifest> = trips.into_iter().map(|t| t.manifest).collect();
    let path = dir.join("manifest.json");
    fs::write(&path, manifest_to_json(&manifests)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
