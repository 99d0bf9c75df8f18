use std::fs;

use wetroad::dataset::{clip_features, FeatureSet};
use wetroad::features::{default_filterbank, FrameSpec};
use wetroad::ingest::{load_wav, parse_manifest, Condition};
use wetroad::pipeline::svm_labels;
use wetroad::svm::{smo_train, svm_predict, SvmParams};
use wetroad::synth::{generate_corpus, generate_trips, SynthSpec};

fn short(routes: u32) -> SynthSpec {
    SynthSpec {
        routes,
        trip_seconds: 20.0,
        ..SynthSpec::default()
    }
}

#[test]
fn corpus_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let spec = short(3);
    let ma = generate_corpus(&spec, a.path()).unwrap();
    let mb = generate_corpus(&spec, b.path()).unwrap();
    assert_eq!(fs::read(&ma).unwrap(), fs::read(&mb).unwrap());
    let trips = parse_manifest(&ma).unwrap();
    assert_eq!(trips.len(), 6);
    for t in &trips {
        let wa = fs::read(a.path().join(&t.audio_path)).unwrap();
        let wb = fs::read(b.path().join(&t.audio_path)).unwrap();
        assert_eq!(wa, wb, "{}", t.trip_id);
    }

    let other = tempfile::tempdir().unwrap();
    let mc = generate_corpus(&SynthSpec { seed: 99, ..spec }, other.path()).unwrap();
    let first = &trips[0].audio_path;
    assert_ne!(
        fs::read(a.path().join(first)).unwrap(),
        fs::read(other.path().join(first)).unwrap()
    );
    assert!(mc.exists());
}

#[test]
fn corpus_satisfies_ingest_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_corpus(&short(2), dir.path()).unwrap();
    let trips = parse_manifest(&manifest).unwrap();
    for route in [1, 2] {
        let pair: Vec<_> = trips.iter().filter(|t| t.route_id == route).collect();
        assert_eq!(pair.len(), 2);
        assert_ne!(pair[0].condition, pair[1].condition);
        assert_eq!(pair[0].speed_log, pair[1].speed_log);
        assert!(pair[0].speed_log.iter().any(|p| p.mph() == 0.0));
    }
    for t in &trips {
        let clip = load_wav(dir.path().join(&t.audio_path)).unwrap();
        assert_eq!(clip.sample_rate(), 16_000);
        assert_eq!(clip.len(), 20 * 16_000);
    }
}

#[test]
fn wet_has_more_energy_above_2khz() {
    let trips = generate_trips(&short(1)).unwrap();
    let wet = trips.iter().find(|t| t.manifest.condition == Condition::Wet).unwrap();
    let dry = trips.iter().find(|t| t.manifest.condition == Condition::Dry).unwrap();
    let spec = FrameSpec::default();
    let bank = default_filterbank(&spec, 16_000).unwrap();
    let high: Vec<usize> = (0..bank.num_filters()).filter(|&m| bank.center_freqs()[m] > 2000.0).collect();
    let fw = clip_features(&wet.manifest, &wet.clip, FeatureSet::Asf).unwrap();
    let fd = clip_features(&dry.manifest, &dry.clip, FeatureSet::Asf).unwrap();
    let mean_high = |f: &wetroad::features::FeatureMatrix, w: usize| {
        let rows = (w * 100..(w + 1) * 100).filter(|&r| r < f.frames());
        let mut sum = 0.0;
        let mut n = 0;
        for r in rows {
            for &m in &high {
                sum += f.row(r)[m];
                n += 1;
            }
        }
        sum / n as f64
    };
    for w in 0..20 {
        let (a, b) = (mean_high(&fw.features, w), mean_high(&fd.features, w));
        assert!(a > b, "window {w}: wet {a} dry {b}");
    }
}

/// Training accuracy of a linear SVM on every fourth ASF frame of a
/// one-route corpus without spray, so the tilt gap is the only class cue.
fn probe_accuracy(gap: f64) -> f64 {
    let mut spec = short(1);
    spec.wet.spray_db = None;
    spec.wet.am_depth = spec.dry.am_depth;
    spec.wet.tilt_db_per_octave = spec.dry.tilt_db_per_octave + gap;
    let trips = generate_trips(&spec).unwrap();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for t in &trips {
        let f = clip_features(&t.manifest, &t.clip, FeatureSet::Asf).unwrap();
        for r in (0..f.frames()).step_by(4) {
            x.extend_from_slice(&f.features.row(r)[..26]);
            y.push(f.labels[r]);
        }
    }
    let labels = svm_labels(&y);
    let model = smo_train(&x, 26, &labels, &SvmParams { c: 1.0, ..SvmParams::default() }).unwrap();
    let correct = x
        .chunks(26)
        .zip(&labels)
        .filter(|(r, &l)| svm_predict(&model, r).unwrap().0 == l)
        .count();
    correct as f64 / labels.len() as f64
}

#[test]
fn separation_grows_with_tilt_gap() {
    let narrow = probe_accuracy(0.5);
    let wide = probe_accuracy(1.0);
    assert!(wide >= narrow, "gap 0.5: {narrow}, gap 1.0: {wide}");
}
