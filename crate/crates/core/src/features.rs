//! Auditory spectral features (log-Mel bands, rectified deltas and frame
//! energy) and the four-band third-octave baseline set.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::ingest::AudioClip;

/// Number of Mel bands in the auditory spectral feature set.
pub const NUM_MEL: usize = 26;
/// Total auditory spectral feature dimensionality.
pub const ASF_DIMS: usize = 2 * NUM_MEL + 2;
/// Third-octave centre frequencies of the baseline feature set, ascending.
pub const OCTAVE_CENTERS_HZ: [f64; 4] = [200.0, 630.0, 1600.0, 5000.0];
pub const OCTAVE_BIN_MS: f64 = 125.0;

/// Analysis window length and hop in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSpec {
    pub frame_ms: f64,
    pub step_ms: f64,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self {
            frame_ms: 30.0,
            step_ms: 10.0,
        }
    }
}

impl FrameSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_ms > 0.0 && self.step_ms <= self.frame_ms) {
            return Err(Error::InvalidParameter(format!(
                "frame spec needs 0 < step_ms <= frame_ms, got {} / {}",
                self.frame_ms, self.step_ms
            )));
        }
        Ok(())
    }

    /// Window length and hop in samples at `sample_rate`.
    pub fn lengths(&self, sample_rate: u32) -> Result<(usize, usize)> {
        self.validate()?;
        let sr = f64::from(sample_rate);
        let len = (self.frame_ms * sr / 1000.0).round() as usize;
        let hop = (self.step_ms * sr / 1000.0).round() as usize;
        if len == 0 || hop == 0 {
            return Err(Error::InvalidParameter(format!(
                "frame spec {self:?} yields an empty window at {sample_rate} Hz"
            )));
        }
        Ok((len, hop))
    }
}

/// Number of whole frames of length `len` at hop `hop` in `n` samples.
pub fn frame_count(n: usize, len: usize, hop: usize) -> usize {
    if n < len {
        0
    } else {
        (n - len) / hop + 1
    }
}

/// Overlapping analysis windows over a clip. Trailing partial frames are dropped.
#[derive(Debug, Clone)]
pub struct Frames<'a> {
    pub frames: Vec<&'a [f64]>,
    /// Frame start times in seconds.
    pub frame_times: Vec<f64>,
    pub frame_len: usize,
    pub hop: usize,
}

pub fn frame_signal<'a>(clip: &'a AudioClip, spec: &FrameSpec) -> Result<Frames<'a>> {
    let (frame_len, hop) = spec.lengths(clip.sample_rate())?;
    let n = frame_count(clip.len(), frame_len, hop);
    let sr = f64::from(clip.sample_rate());
    let samples = clip.samples();
    Ok(Frames {
        frames: (0..n)
            .map(|i| &samples[i * hop..i * hop + frame_len])
            .collect(),
        frame_times: (0..n).map(|i| (i * hop) as f64 / sr).collect(),
        frame_len,
        hop,
    })
}

/// Symmetric Hann window of length `len`.
pub fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / denom).cos())
        .collect()
}

fn check_fft_size(fft_size: usize) -> Result<()> {
    if fft_size == 0 || !fft_size.is_power_of_two() {
        return Err(Error::InvalidParameter(format!(
            "fft size {fft_size} is not a power of two"
        )));
    }
    Ok(())
}

/// Reusable Hann-windowed power-spectrum evaluator for a fixed frame length
/// and FFT size.
pub struct SpectrumAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    buffer: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl SpectrumAnalyzer {
    pub fn new(frame_len: usize, fft_size: usize) -> Result<Self> {
        check_fft_size(fft_size)?;
        if frame_len == 0 || frame_len > fft_size {
            return Err(Error::InvalidParameter(format!(
                "frame length {frame_len} must be in 1..={fft_size}"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        Ok(Self {
            fft,
            window: hann(frame_len),
            buffer: vec![Complex::default(); fft_size],
            scratch,
        })
    }

    pub fn fft_size(&self) -> usize {
        self.buffer.len()
    }

    pub fn num_bins(&self) -> usize {
        self.buffer.len() / 2 + 1
    }

    /// Writes `fft_size/2 + 1` power values for `frame` into `out`.
    pub fn power_into(&mut self, frame: &[f64], out: &mut [f64]) -> Result<()> {
        if frame.len() != self.window.len() {
            return Err(Error::DimensionMismatch {
                expected: self.window.len(),
                found: frame.len(),
            });
        }
        if out.len() != self.num_bins() {
            return Err(Error::DimensionMismatch {
                expected: self.num_bins(),
                found: out.len(),
            });
        }
        for (b, (&x, &w)) in self.buffer.iter_mut().zip(frame.iter().zip(&self.window)) {
            *b = Complex::new(x * w, 0.0);
        }
        for b in &mut self.buffer[frame.len()..] {
            *b = Complex::default();
        }
        self.fft
            .process_with_scratch(&mut self.buffer, &mut self.scratch);
        for (o, b) in out.iter_mut().zip(&self.buffer) {
            *o = b.norm_sqr();
        }
        Ok(())
    }
}

/// Hann-windowed, zero-padded power spectrum: `fft_size/2 + 1` squared magnitudes.
pub fn power_spectrum(frame: &[f64], fft_size: usize) -> Result<Vec<f64>> {
    let mut analyzer = SpectrumAnalyzer::new(frame.len(), fft_size)?;
    let mut out = vec![0.0; analyzer.num_bins()];
    analyzer.power_into(frame, &mut out)?;
    Ok(out)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the Mel scale, sampled at FFT bin
/// frequencies. Peak weight is 1 (no area normalisation).
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    num_filters: usize,
    fft_size: usize,
    sample_rate: u32,
    /// Row-major `num_filters × (fft_size/2 + 1)`.
    weights: Vec<f64>,
    center_freqs: Vec<f64>,
}

impl MelFilterbank {
    pub fn num_filters(&self) -> usize {
        self.num_filters
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn center_freqs(&self) -> &[f64] {
        &self.center_freqs
    }

    pub fn filter(&self, m: usize) -> &[f64] {
        let nb = self.num_bins();
        &self.weights[m * nb..(m + 1) * nb]
    }

    /// Filter outputs (Mel band powers) for one power spectrum.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            *o = self
                .filter(m)
                .iter()
                .zip(power)
                .map(|(w, p)| w * p)
                .sum();
        }
    }
}

pub fn build_mel_filterbank(
    num_filters: usize,
    fft_size: usize,
    sample_rate: u32,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank> {
    check_fft_size(fft_size)?;
    let nyquist = f64::from(sample_rate) / 2.0;
    if num_filters == 0 {
        return Err(Error::InvalidParameter("need at least one mel filter".into()));
    }
    if !(f_min >= 0.0 && f_max <= nyquist) {
        return Err(Error::InvalidParameter(format!(
            "mel range [{f_min}, {f_max}] outside [0, {nyquist}]"
        )));
    }
    if f_min >= f_max {
        return Err(Error::InvalidParameter(format!(
            "f_min {f_min} must be below f_max {f_max}"
        )));
    }
    let (mel_lo, mel_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let step = (mel_hi - mel_lo) / (num_filters + 1) as f64;
    let edges: Vec<f64> = (0..num_filters + 2)
        .map(|i| mel_to_hz(mel_lo + step * i as f64))
        .collect();

    let num_bins = fft_size / 2 + 1;
    let bin_hz = f64::from(sample_rate) / fft_size as f64;
    let mut weights = vec![0.0; num_filters * num_bins];
    for m in 0..num_filters {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * num_bins..(m + 1) * num_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            *w = if f >= lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f <= hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
        }
        if row.iter().all(|&w| w <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mel filter {m} ({lo:.1}..{hi:.1} Hz) covers no FFT bin at size {fft_size}"
            )));
        }
    }
    Ok(MelFilterbank {
        num_filters,
        fft_size,
        sample_rate,
        weights,
        center_freqs: edges[1..=num_filters].to_vec(),
    })
}

/// Per-frame feature vectors with their frame start times.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dims: usize,
    values: Vec<f64>,
    frame_times: Vec<f64>,
    feature_names: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(
        feature_names: Vec<String>,
        frame_times: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let dims = feature_names.len();
        if values.len() != dims * frame_times.len() {
            return Err(Error::DimensionMismatch {
                expected: dims * frame_times.len(),
                found: values.len(),
            });
        }
        Ok(Self {
            dims,
            values,
            frame_times,
            feature_names,
        })
    }

    pub fn from_rows(
        feature_names: Vec<String>,
        frame_times: Vec<f64>,
        rows: &[Vec<f64>],
    ) -> Result<Self> {
        let dims = feature_names.len();
        if let Some(r) = rows.iter().find(|r| r.len() != dims) {
            return Err(Error::DimensionMismatch {
                expected: dims,
                found: r.len(),
            });
        }
        Self::new(feature_names, frame_times, rows.concat())
    }

    pub fn frames(&self) -> usize {
        self.frame_times.len()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.dims..(n + 1) * self.dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics
        let d = self.dims.max(1);
        self.values.chunks_exact(d).take(self.frames())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame_times(&self) -> &[f64] {
        &self.frame_times
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<FeatureMatrix> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.dims) {
            return Err(Error::InvalidParameter(format!(
                "feature index {bad} out of range for {} dims",
                self.dims
            )));
        }
        let values = self
            .rows()
            .flat_map(|r| columns.iter().map(move |&c| r[c]))
            .collect();
        FeatureMatrix::new(
            columns
                .iter()
                .map(|&c| self.feature_names[c].clone())
                .collect(),
            self.frame_times.clone(),
            values,
        )
    }
}

pub fn asf_feature_names() -> Vec<String> {
    let mut names: Vec<String> = (0..NUM_MEL).map(|m| format!("mel_log_{m:02}")).collect();
    names.extend((0..NUM_MEL).map(|m| format!("mel_dpos_{m:02}")));
    names.push("energy_log".into());
    names.push("energy_dpos".into());
    names
}

/// FFT size used for a frame of `frame_len` samples: the next power of two.
pub fn fft_size_for(frame_len: usize) -> usize {
    frame_len.next_power_of_two()
}

/// The default 26-band filterbank spanning 0 Hz to Nyquist for `spec` at `sample_rate`.
pub fn default_filterbank(spec: &FrameSpec, sample_rate: u32) -> Result<MelFilterbank> {
    let (len, _) = spec.lengths(sample_rate)?;
    build_mel_filterbank(
        NUM_MEL,
        fft_size_for(len),
        sample_rate,
        0.0,
        f64::from(sample_rate) / 2.0,
    )
}

/// 54-dimensional auditory spectral features, one row per frame.
///
/// Layout: log-Mel `ln(M + 1)` (0..26), rectified first differences of the
/// log-Mel bands (26..52), log frame energy `ln(1 + Σx²)` (52) and its
/// rectified first difference (53). Differences are zero at the first frame.
pub fn asf_features(clip: &AudioClip, spec: &FrameSpec, bank: &MelFilterbank) -> Result<FeatureMatrix> {
    if bank.num_filters() != NUM_MEL {
        return Err(Error::DimensionMismatch {
            expected: NUM_MEL,
            found: bank.num_filters(),
        });
    }
    if bank.sample_rate() != clip.sample_rate() {
        return Err(Error::InvalidParameter(format!(
            "filterbank built for {} Hz, clip is {} Hz",
            bank.sample_rate(),
            clip.sample_rate()
        )));
    }
    let framed = frame_signal(clip, spec)?;
    let fft_size = fft_size_for(framed.frame_len);
    if bank.fft_size() != fft_size {
        return Err(Error::DimensionMismatch {
            expected: fft_size / 2 + 1,
            found: bank.num_bins(),
        });
    }
    let mut analyzer = SpectrumAnalyzer::new(framed.frame_len, fft_size)?;
    let mut power = vec![0.0; analyzer.num_bins()];
    let mut mel = vec![0.0; NUM_MEL];

    let n = framed.frames.len();
    let mut values = vec![0.0; n * ASF_DIMS];
    for (i, frame) in framed.frames.iter().enumerate() {
        analyzer.power_into(frame, &mut power)?;
        bank.apply(&power, &mut mel);
        let (prev, cur) = values.split_at_mut(i * ASF_DIMS);
        let row = &mut cur[..ASF_DIMS];
        for (r, &m) in row[..NUM_MEL].iter_mut().zip(&mel) {
            *r = m.ln_1p();
        }
        let energy: f64 = frame.iter().map(|x| x * x).sum();
        row[2 * NUM_MEL] = energy.ln_1p();
        if i > 0 {
            let last = &prev[(i - 1) * ASF_DIMS..];
            for m in 0..NUM_MEL {
                row[NUM_MEL + m] = (row[m] - last[m]).max(0.0);
            }
            row[2 * NUM_MEL + 1] = (row[2 * NUM_MEL] - last[2 * NUM_MEL]).max(0.0);
        }
    }
    FeatureMatrix::new(asf_feature_names(), framed.frame_times, values)
}

/// Lower and upper edge of the third-octave band around `center_hz`.
pub fn third_octave_edges(center_hz: f64) -> (f64, f64) {
    let r = 2f64.powf(1.0 / 6.0);
    (center_hz / r, center_hz * r)
}

/// Log band energies `ln(1 + E)` in third-octave bands over non-overlapping
/// bins of `bin_ms`. Band energy sums power over FFT bins in `[lo, hi)`.
pub fn third_octave_features(
    clip: &AudioClip,
    bin_ms: f64,
    centers_hz: &[f64],
) -> Result<FeatureMatrix> {
    if centers_hz.is_empty() {
        return Err(Error::InvalidParameter("no band centres given".into()));
    }
    let mut centers = centers_hz.to_vec();
    centers.sort_by(|a, b| a.total_cmp(b));
    let sr = f64::from(clip.sample_rate());
    let nyquist = sr / 2.0;
    let top = third_octave_edges(*centers.last().unwrap_or(&0.0)).1;
    if top >= nyquist || centers[0] <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "band edge {top:.1} Hz must lie below Nyquist {nyquist} Hz"
        )));
    }
    let spec = FrameSpec {
        frame_ms: bin_ms,
        step_ms: bin_ms,
    };
    let framed = frame_signal(clip, &spec)?;
    let fft_size = fft_size_for(framed.frame_len);
    let mut analyzer = SpectrumAnalyzer::new(framed.frame_len, fft_size)?;
    let mut power = vec![0.0; analyzer.num_bins()];
    let bin_hz = sr / fft_size as f64;
    let ranges: Vec<(usize, usize)> = centers
        .iter()
        .map(|&c| {
            let (lo, hi) = third_octave_edges(c);
            // bins k with lo <= k*bin_hz < hi
            let first = (lo / bin_hz).ceil() as usize;
            let end = (hi / bin_hz).ceil() as usize;
            (first, end.min(power.len()))
        })
        .collect();

    let mut values = Vec::with_capacity(framed.frames.len() * centers.len());
    for frame in &framed.frames {
        analyzer.power_into(frame, &mut power)?;
        for &(first, end) in &ranges {
            let e: f64 = power[first.min(end)..end].iter().sum();
            values.push(e.ln_1p());
        }
    }
    let names = centers
        .iter()
        .map(|c| format!("octave_{}hz", c.round() as i64))
        .collect();
    FeatureMatrix::new(names, framed.frame_times, values)
}
