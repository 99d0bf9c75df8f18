//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wetroad::dataset::{extract_trip, join_manifest, FeatureSet};
use wetroad::eval::{cross_route_eval, EvalReport, Learner, TripData, TripPrediction, LOW_SPEED_MPH};
use wetroad::features::{asf_features, default_filterbank, FeatureMatrix, FrameSpec, NUM_MEL};
use wetroad::ingest::{parse_manifest, AudioClip};
use wetroad::pipeline::{RnnLearner, SvmLearner};
use wetroad::rnn::{bptt_gradients, init_model, model_forward, one_hot, sse_loss, NetworkSpec, RnnModel};
use wetroad::select::{
    best_first_cfs, entropy, info_gain, rank_by_ig, CorrelationTable, Discretization, Discretizer,
};
use wetroad::svm::{smo_solve, smo_train, svm_predict, SvmModel, SvmParams};
use wetroad::synth::{generate_corpus, SynthSpec};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- gradients

/// Worst relative error between BPTT and central differences over a seeded
/// sample of coordinates drawn from every parameter tensor.
fn gradient_error(model: &RnnModel, x: &[f64], target: &[f64], per_tensor: usize, rng: &mut ChaCha8Rng) -> f64 {
    let (_, grads) = bptt_gradients(model, x, target).unwrap();
    let g = grads.to_flat();
    let base = model.params.to_flat();
    let mut coords = Vec::new();
    let mut offset = 0;
    model.params.for_each_tensor(|t| {
        let n = t.len();
        if n <= per_tensor {
            coords.extend(offset..offset + n);
        } else {
            coords.extend((0..per_tensor).map(|_| offset + rng.random_range(0..n)));
        }
        offset += n;
    });
    let mut probe = model.clone();
    // smaller steps let loss round-off (~1e-16 · 10 / h) swamp small gradients
    let h = 1e-4;
    let mut worst = 0.0f64;
    for i in coords {
        let mut flat = base.clone();
        flat[i] = base[i] + h;
        probe.params.set_flat(&flat).unwrap();
        let up = sse_loss(&model_forward(&probe, x).unwrap(), target).unwrap();
        flat[i] = base[i] - h;
        probe.params.set_flat(&flat).unwrap();
        let down = sse_loss(&model_forward(&probe, x).unwrap(), target).unwrap();
        let num = (up - down) / (2.0 * h);
        // the floor keeps round-off on near-zero gradients from dominating
        let err = (g[i] - num).abs() / g[i].abs().max(num.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let input = 6;
    let frames = 10;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for layout in [vec![12, 12, 12], vec![12, 17, 12]] {
        for bi in [false, true] {
            for seq in 0..20u64 {
                let mut spec = NetworkSpec::new(input, layout.clone(), bi);
                spec.seed = seq;
                let mut model = init_model(&spec).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(0x9e37 + seq);
                let flat: Vec<f64> = model.params.to_flat().iter().map(|_| rng.random_range(-0.5..0.5)).collect();
                model.params.set_flat(&flat).unwrap();
                let x: Vec<f64> = (0..frames * input).map(|_| rng.random_range(-1.0..1.0)).collect();
                let labels: Vec<usize> = (0..frames).map(|_| rng.random_range(0..2)).collect();
                let err = gradient_error(&model, &x, &one_hot(&labels, 2), 64, &mut rng);
                worst = worst.max(err);
                checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("{checked} sequences, max rel err {worst:.2e}, {secs:.1} s");
    ensure(worst <= 1e-4 && secs < 60.0, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- DSP

/// Log-Mel, rectified deltas, log energy and its rectified delta computed by
/// direct DFT and triangular Mel filters built from first principles.
fn reference_asf(samples: &[f64], sr: u32) -> Vec<Vec<f64>> {
    let len = (0.030 * f64::from(sr)).round() as usize;
    let hop = (0.010 * f64::from(sr)).round() as usize;
    let nfft = len.next_power_of_two();
    let bins = nfft / 2 + 1;
    let window: Vec<f64> = (0..len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / (len - 1) as f64).cos()).collect();
    let cos: Vec<f64> = (0..nfft).map(|k| (2.0 * PI * k as f64 / nfft as f64).cos()).collect();
    let sin: Vec<f64> = (0..nfft).map(|k| (2.0 * PI * k as f64 / nfft as f64).sin()).collect();

    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let top = mel(f64::from(sr) / 2.0);
    let edges: Vec<f64> = (0..NUM_MEL + 2).map(|i| inv(top * i as f64 / (NUM_MEL + 1) as f64)).collect();
    let tri = |m: usize, f: f64| {
        let (a, b, c) = (edges[m], edges[m + 1], edges[m + 2]);
        if f >= a && f <= b {
            (f - a) / (b - a)
        } else if f > b && f <= c {
            (c - f) / (c - b)
        } else {
            0.0
        }
    };

    let count = if samples.len() >= len { (samples.len() - len) / hop + 1 } else { 0 };
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    for i in 0..count {
        let frame = &samples[i * hop..i * hop + len];
        let power: Vec<f64> = (0..bins)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, (&x, &w)) in frame.iter().zip(&window).enumerate() {
                    let idx = (k * n) % nfft;
                    re += x * w * cos[idx];
                    im -= x * w * sin[idx];
                }
                re * re + im * im
            })
            .collect();
        let mut row = vec![0.0; 54];
        for m in 0..NUM_MEL {
            let e: f64 = (0..bins).map(|k| tri(m, k as f64 * f64::from(sr) / nfft as f64) * power[k]).sum();
            row[m] = (1.0 + e).ln();
        }
        row[52] = (1.0 + frame.iter().map(|x| x * x).sum::<f64>()).ln();
        if let Some(prev) = rows.last() {
            for m in 0..NUM_MEL {
                row[26 + m] = (row[m] - prev[m]).max(0.0);
            }
            row[53] = (row[52] - prev[52]).max(0.0);
        }
        rows.push(row);
    }
    rows
}

fn random_clip(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let amp = 10f64.powf(rng.random_range(-3.0..0.0));
    let f0 = rng.random_range(50.0..7000.0);
    (0..n)
        .map(|i| {
            let tone = (2.0 * PI * f0 * i as f64 / 16000.0).sin();
            amp * (0.5 * tone + 0.5 * rng.random_range(-1.0..1.0))
        })
        .collect()
}

fn dsp_oracle() -> Outcome {
    let spec = FrameSpec::default();
    let bank = default_filterbank(&spec, 16_000).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for clip_no in 0..20 {
        let samples = random_clip(&mut rng, 16_000);
        let got = asf_features(&AudioClip::new(samples.clone(), 16_000).unwrap(), &spec, &bank).unwrap();
        let want = reference_asf(&samples, 16_000);
        ensure(got.frames() == want.len(), || format!("clip {clip_no}: {} frames vs {}", got.frames(), want.len()))?;
        for (t, w) in want.iter().enumerate() {
            let g = got.row(t);
            for j in 0..54 {
                // deltas are differences of logs, so their scale is that of the log values
                let scale = if (26..52).contains(&j) {
                    w[j - 26].abs().max(w[j].abs())
                } else if j == 53 {
                    w[52].abs().max(w[j].abs())
                } else {
                    w[j].abs()
                };
                let err = (g[j] - w[j]).abs() / scale.max(1e-300);
                worst = worst.max(if g[j] == w[j] { 0.0 } else { err });
            }
        }
    }
    ensure(worst <= 1e-6, || format!("max rel err {worst:.2e}"))?;

    for pair in 0..1000 {
        let sr = rng.random_range(8_000..=48_000u32);
        let n = rng.random_range(0..3 * sr as usize);
        let (len, hop) = (
            (0.030 * f64::from(sr)).round() as usize,
            (0.010 * f64::from(sr)).round() as usize,
        );
        let expected = if n >= len { (n - len) / hop + 1 } else { 0 };
        let bank = default_filterbank(&spec, sr).unwrap();
        let f = asf_features(&AudioClip::new(vec![0.0; n], sr).unwrap(), &spec, &bank).unwrap();
        ensure(f.frames() == expected, || format!("pair {pair}: N={n} rate={sr}: {} frames, expected {expected}", f.frames()))?;
        if let Some(&last) = f.frame_times().last() {
            let t = ((expected - 1) * hop) as f64 / f64::from(sr);
            ensure((last - t).abs() < 1e-12, || format!("pair {pair}: last frame at {last}, expected {t}"))?;
        }
    }
    Ok(format!("20 clips max rel err {worst:.2e}; 1000 frame counts exact"))
}

// ---------------------------------------------------------------- invariants

fn feature_invariants() -> Outcome {
    let spec = FrameSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut clips = 0;
    for sr in [8_000u32, 16_000, 22_050, 44_100, 48_000] {
        let bank = default_filterbank(&spec, sr).unwrap();
        let n = sr as usize / 2;
        let mut inputs: Vec<Vec<f64>> = vec![
            vec![0.0; n],
            vec![1.0; n],
            vec![-1.0; n],
            (0..n).map(|i| if i % 97 == 0 { 1.0 } else { 0.0 }).collect(),
            (0..n).map(|i| if (i / 40) % 2 == 0 { 1.0 } else { -1.0 }).collect(),
            (0..n).map(|i| 1e-12 * ((i % 7) as f64 - 3.0)).collect(),
        ];
        for _ in 0..40 {
            let amp = 10f64.powf(rng.random_range(-6.0..0.0));
            let bursty = rng.random_bool(0.5);
            inputs.push(
                (0..n)
                    .map(|i| {
                        let gate = if bursty && (i / 800) % 3 == 0 { 0.0 } else { 1.0 };
                        gate * amp * rng.random_range(-1.0..1.0)
                    })
                    .collect(),
            );
        }
        for samples in inputs {
            let f = asf_features(&AudioClip::new(samples, sr).unwrap(), &spec, &bank).unwrap();
            ensure(f.dims() == 54, || format!("{} dims at {sr} Hz", f.dims()))?;
            for t in 0..f.frames() {
                let row = f.row(t);
                ensure(row.iter().all(|v| v.is_finite() && *v >= 0.0), || {
                    format!("negative or non-finite value in frame {t} at {sr} Hz")
                })?;
            }
            clips += 1;
        }
    }
    Ok(format!("{clips} clips at 5 rates: 54 dims, all values >= 0"))
}

// ---------------------------------------------------------------- selection

fn hand_entropy(labels: &[usize]) -> f64 {
    let n = labels.len() as f64;
    let ones = labels.iter().filter(|&&l| l == 1).count() as f64;
    [ones, n - ones]
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| -(c / n) * (c / n).log2())
        .sum()
}

fn hand_ig(x: &[usize], y: &[usize]) -> f64 {
    let n = y.len() as f64;
    let mut cond = 0.0;
    for v in 0..2 {
        let part: Vec<usize> = x.iter().zip(y).filter(|(a, _)| **a == v).map(|(_, b)| *b).collect();
        if !part.is_empty() {
            cond += part.len() as f64 / n * hand_entropy(&part);
        }
    }
    hand_entropy(y) - cond
}

fn bits(word: u32, n: usize) -> Vec<usize> {
    (0..n).map(|i| ((word >> i) & 1) as usize).collect()
}

/// Best subset by exhaustive enumeration of the CFS merit, ties to the smaller subset.
fn exhaustive_cfs(table: &CorrelationTable) -> Vec<usize> {
    let d = table.num_features();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for mask in 1u32..(1 << d) {
        let subset: Vec<usize> = (0..d).filter(|&i| mask >> i & 1 == 1).collect();
        let k = subset.len() as f64;
        let rcf = subset.iter().map(|&i| table.su_fc[i]).sum::<f64>() / k;
        let mut rff = 0.0;
        let mut pairs = 0.0;
        for (a, &i) in subset.iter().enumerate() {
            for &j in &subset[a + 1..] {
                rff += table.su_ff[i][j];
                pairs += 1.0;
            }
        }
        let rff = if pairs > 0.0 { rff / pairs } else { 0.0 };
        let merit = k * rcf / (k + k * (k - 1.0) * rff).sqrt();
        if merit > best.0 + 1e-12 || ((merit - best.0).abs() <= 1e-12 && subset.len() < best.1.len()) {
            best = (merit, subset);
        }
    }
    best.1
}

fn selection_oracles() -> Outcome {
    let binary = Discretizer::new(vec![0.5]).unwrap();
    let mut single = 0;
    for n in 1..=8usize {
        for yw in 0..(1u32 << n) {
            let y = bits(yw, n);
            let h = entropy(&y).unwrap();
            ensure((h - hand_entropy(&y)).abs() <= 1e-12, || format!("H{y:?}: {h} vs {}", hand_entropy(&y)))?;
            for xw in 0..(1u32 << n) {
                let x = bits(xw, n);
                let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
                let ig = info_gain(&xf, &y, &binary).unwrap();
                let want = hand_ig(&x, &y);
                ensure((ig - want).abs() <= 1e-12, || format!("IG x={x:?} y={y:?}: {ig} vs {want}"))?;
                single += 1;
            }
        }
    }

    // every dataset with up to 4 samples and 3 binary features, ranked together
    let mut multi = 0;
    for n in 1..=4usize {
        for yw in 0..(1u32 << n) {
            let y = bits(yw, n);
            for xw in 0..(1u32 << (3 * n)) {
                let cols: Vec<Vec<usize>> = (0..3).map(|j| bits(xw >> (j * n), n)).collect();
                let rows: Vec<Vec<f64>> = (0..n).map(|i| cols.iter().map(|c| c[i] as f64).collect()).collect();
                let fm = FeatureMatrix::from_rows(
                    vec!["a".into(), "b".into(), "c".into()],
                    (0..n).map(|i| i as f64).collect(),
                    &rows,
                )
                .unwrap();
                let ranked = rank_by_ig(&fm, &y, Discretization::EqualWidth { bins: 2 }).unwrap();
                let mut want: Vec<(usize, f64)> = (0..3).map(|j| (j, hand_ig(&cols[j], &y))).collect();
                want.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                for (r, (j, ig)) in ranked.0.iter().zip(&want) {
                    ensure(r.feature == *j || (r.ig - ig).abs() <= 1e-12, || format!("rank order {ranked:?} vs {want:?}"))?;
                    ensure((r.ig - hand_ig(&cols[r.feature], &y)).abs() <= 1e-12, || format!("IG of {}", r.feature))?;
                }
                multi += 1;
            }
        }
    }

    let mut planted_hits = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 120;
        let planted = rng.random_range(0..10);
        let y: Vec<usize> = (0..n).map(|i| (i + rng.random_range(0..2)) % 2).collect();
        let rows: Vec<Vec<f64>> = y
            .iter()
            .map(|&l| {
                (0..10)
                    .map(|j| {
                        if j == planted {
                            l as f64 * 2.0 + rng.random_range(0.0..1.0)
                        } else {
                            rng.random_range(0.0..1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let fm = FeatureMatrix::from_rows(
            (0..10).map(|j| format!("f{j}")).collect(),
            (0..n).map(|i| i as f64).collect(),
            &rows,
        )
        .unwrap();
        let table = CorrelationTable::from_features(&fm, &y, Discretization::Mdl).unwrap();
        let optimum = exhaustive_cfs(&table);
        let found = best_first_cfs(&fm, &y, 5, Discretization::Mdl).unwrap();
        if found.selected == optimum && optimum == vec![planted] {
            planted_hits += 1;
        }
    }
    ensure(planted_hits == 100, || format!("CFS matched the exhaustive optimum in {planted_hits}/100"))?;
    Ok(format!(
        "{single} single-feature and {multi} three-feature datasets exact; CFS optimum 100/100"
    ))
}

// ---------------------------------------------------------------- SMO

fn separable(seed: u64) -> (Vec<f64>, Vec<i8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(4..=30);
    let angle: f64 = rng.random_range(0.0..2.0 * PI);
    let (a, b) = (angle.cos(), angle.sin());
    let c: f64 = rng.random_range(-0.3..0.3);
    loop {
        let mut x = Vec::new();
        let mut y = Vec::new();
        while y.len() < n {
            let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let s = a * p[0] + b * p[1] + c;
            if s.abs() >= 0.1 {
                x.extend_from_slice(&p);
                y.push(if s > 0.0 { 1 } else { -1 });
            }
        }
        if y.contains(&1) && y.contains(&-1) {
            return (x, y);
        }
    }
}

/// Dual variables of every training row, recovered by matching rows to the
/// model's stored support vectors.
fn recovered_alpha(model: &SvmModel, x: &[f64], y: &[i8]) -> Result<Vec<f64>, String> {
    let d = model.retained.len();
    let mut alpha = vec![0.0; y.len()];
    let mut matched = vec![false; model.num_support_vectors()];
    for (t, row) in x.chunks(2).enumerate() {
        let z = model.transform(row).unwrap();
        for (s, sv) in model.support_vectors.chunks(d).enumerate() {
            if sv == z.as_slice() {
                ensure(!matched[s], || format!("support vector {s} matches two rows"))?;
                matched[s] = true;
                alpha[t] = model.coef[s] * f64::from(y[t]);
            }
        }
    }
    ensure(matched.iter().all(|&m| m), || "a support vector matches no training row".into())?;
    Ok(alpha)
}

fn smo_correctness() -> Outcome {
    let params = SvmParams {
        c: 1e3,
        ..SvmParams::default()
    };
    let mut worst_kkt = 0.0f64;
    let mut worst_dual = 0.0f64;
    for seed in 0..50 {
        let (x, y) = separable(seed);
        let model = smo_train(&x, 2, &y, &params).unwrap();
        let alpha = recovered_alpha(&model, &x, &y).map_err(|e| format!("instance {seed}: {e}"))?;
        for (t, row) in x.chunks(2).enumerate() {
            let (class, f) = svm_predict(&model, row).unwrap();
            ensure(class == y[t], || format!("instance {seed}: row {t} misclassified"))?;
            let m = f64::from(y[t]) * f;
            let v = if alpha[t] <= 0.0 {
                (1.0 - m).max(0.0)
            } else if alpha[t] >= params.c {
                (m - 1.0).max(0.0)
            } else {
                (m - 1.0).abs()
            };
            worst_kkt = worst_kkt.max(v);
        }
        let bound = alpha.iter().map(|&a| (-a).max(a - params.c).max(0.0)).fold(0.0, f64::max);
        let balance: f64 = alpha.iter().zip(&y).map(|(a, &l)| a * f64::from(l)).sum::<f64>().abs();
        worst_dual = worst_dual.max(bound).max(balance);

        // the raw solver on the same standardized rows agrees with the stored model
        let z: Vec<f64> = x.chunks(2).flat_map(|r| model.transform(r).unwrap()).collect();
        let sol = smo_solve(&z, 2, &y, &params).unwrap();
        ensure(sol.converged && sol.bias == model.bias, || format!("instance {seed}: solver and model disagree"))?;
    }
    ensure(worst_kkt <= 1e-3 && worst_dual <= 1e-8, || {
        format!("max KKT violation {worst_kkt:.2e}, max dual violation {worst_dual:.2e}")
    })?;
    Ok(format!(
        "50 instances, accuracy 1.0, max KKT violation {worst_kkt:.2e}, max dual violation {worst_dual:.2e}"
    ))
}

// ---------------------------------------------------------------- end to end

struct Corpus {
    _dir: tempfile::TempDir,
    asf: Vec<TripData>,
    octave: Vec<TripData>,
}

fn load_corpus(spec: &SynthSpec) -> Corpus {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = generate_corpus(spec, dir.path()).unwrap();
    let manifest = parse_manifest(&manifest_path).unwrap();
    let load = |set| {
        let trips = manifest
            .iter()
            .map(|t| extract_trip(t, dir.path(), set).unwrap())
            .collect();
        join_manifest(trips, &manifest).unwrap()
    };
    Corpus {
        asf: load(FeatureSet::Asf),
        octave: load(FeatureSet::Octave),
        _dir: dir,
    }
}

fn blstm_learner() -> RnnLearner {
    let mut spec = NetworkSpec::new(54, vec![12, 12, 12], true);
    spec.learning_rate = 1e-2;
    spec.max_epochs = 30;
    spec.patience = 10;
    RnnLearner { spec }
}

fn svm_learner() -> SvmLearner {
    SvmLearner {
        params: SvmParams::default(),
    }
}

fn end_to_end(blstm: &EvalReport, svm: &EvalReport, secs: f64) -> Outcome {
    let detail = format!(
        "BLSTM-ASF mean UAR {:.4}, SVM-octave {:.4}, margin {:.4}, {secs:.0} s",
        blstm.mean_uar,
        svm.mean_uar,
        blstm.mean_uar - svm.mean_uar
    );
    ensure(
        blstm.experiments.len() == 6
            && svm.experiments.len() == 6
            && blstm.mean_uar >= 0.95
            && blstm.mean_uar - svm.mean_uar >= 0.05
            && secs < 900.0,
        || detail.clone(),
    )?;
    Ok(detail)
}

fn speed_strata(blstm: &EvalReport) -> Outcome {
    let mut parts = Vec::new();
    for e in &blstm.experiments {
        let s = &e.speed_strata;
        let (below, above) = match (s.below.uar, s.at_or_above.uar) {
            (Some(b), Some(a)) => (b, a),
            _ => return Err(format!("{}->{}: a stratum has no UAR", e.train_route, e.test_route)),
        };
        ensure(s.threshold_mph == LOW_SPEED_MPH && s.below.frames > 0 && s.at_or_above.frames > 0, || {
            format!("{}->{}: strata not reported", e.train_route, e.test_route)
        })?;
        ensure(above >= below, || {
            format!("{}->{}: at/above {above:.4} < below {below:.4}", e.train_route, e.test_route)
        })?;
        parts.push(format!("{}->{} {below:.3}<={above:.3}", e.train_route, e.test_route));
    }
    Ok(parts.join(", "))
}

// ---------------------------------------------------------------- determinism

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_wetroad"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim())
    })
}

fn cli_pipeline(dir: &Path) -> Result<(), String> {
    let spec = SynthSpec {
        trip_seconds: 12.0,
        ..SynthSpec::default()
    };
    fs::write(dir.join("spec.json"), spec.to_json().unwrap()).unwrap();
    let m = "corpus/manifest.json";
    let steps: [&[&str]; 9] = [
        &["synth", "--spec", "spec.json", "--out", "corpus", "--seed", "11"],
        &["extract", "--manifest", m, "--set", "asf", "--out", "asf.csv"],
        &["extract", "--manifest", m, "--set", "octave", "--out", "oct.csv"],
        &["select", "--features", "asf.csv", "--method", "ig", "--top-k", "20", "--out", "ig.json"],
        &["select", "--features", "asf.csv", "--method", "cfs", "--out", "cfs.json"],
        &[
            "train", "--features", "asf.csv", "--manifest", m, "--arch", "blstm", "--layout", "4-4",
            "--lr", "0.01", "--max-epochs", "2", "--seed", "5", "--val-route", "2", "--selection", "ig.json",
            "--out", "blstm.json",
        ],
        &["train", "--features", "oct.csv", "--arch", "svm", "--out", "svm.json"],
        &[
            "eval", "--features", "asf.csv", "--manifest", m, "--arch", "lstm", "--layout", "3",
            "--lr", "0.01", "--max-epochs", "2", "--seed", "5", "--out", "eval_lstm.json",
        ],
        &["eval", "--features", "oct.csv", "--manifest", m, "--arch", "svm", "--out", "eval_svm.json"],
    ];
    for args in steps {
        run_cli(dir, args)?;
    }
    run_cli(dir, &["predict", "--model", "svm.json", "--features", "oct.csv", "--out", "pred.csv"])
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cli_pipeline(a.path())?;
    cli_pipeline(b.path())?;
    let mut compared = 0;
    let mut stack = vec![a.path().to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let rel = p.strip_prefix(a.path()).unwrap();
            let other = b.path().join(rel);
            ensure(other.exists(), || format!("{} missing from second run", rel.display()))?;
            ensure(fs::read(&p).unwrap() == fs::read(&other).unwrap(), || {
                format!("{} differs between runs", rel.display())
            })?;
            compared += 1;
        }
    }
    ensure(compared >= 25, || format!("only {compared} files produced"))?;
    Ok(format!("{compared} files byte-identical across two CLI runs"))
}

// ---------------------------------------------------------------- protocol

/// Wraps a learner and remembers a fingerprint of every frame handed to
/// `fit`; prediction refuses any trip whose frames were among them.
struct Instrumented<L> {
    inner: L,
    log: Mutex<Vec<(BTreeSet<u32>, usize)>>,
}

fn fingerprint(row: &[f64]) -> Vec<u64> {
    row.iter().map(|v| v.to_bits()).collect()
}

impl<L: Learner> Learner for Instrumented<L> {
    type Model = (L::Model, HashSet<Vec<u64>>, BTreeSet<u32>);

    fn fit(&self, train: &[&TripData], validation: &[&TripData]) -> wetroad::Result<Self::Model> {
        let mut seen = HashSet::new();
        let mut routes = BTreeSet::new();
        for t in train.iter().chain(validation) {
            routes.insert(t.route_id);
            seen.extend(t.features.rows().map(fingerprint));
        }
        let frames = train.iter().map(|t| t.frames()).sum();
        self.log.lock().unwrap().push((train.iter().map(|t| t.route_id).collect(), frames));
        Ok((self.inner.fit(train, validation)?, seen, routes))
    }

    fn predict(&self, model: &Self::Model, trip: &TripData) -> wetroad::Result<TripPrediction> {
        let (inner, seen, routes) = model;
        assert!(!routes.contains(&trip.route_id), "route {} was used in fitting", trip.route_id);
        let leaked = trip.features.rows().filter(|r| seen.contains(&fingerprint(r))).count();
        assert_eq!(leaked, 0, "{leaked} frames of {} reached fitting", trip.trip_id);
        self.inner.predict(inner, trip)
    }
}

fn protocol_integrity(corpus: &Corpus) -> Outcome {
    let learner = Instrumented {
        inner: svm_learner(),
        log: Mutex::new(Vec::new()),
    };
    let report = cross_route_eval(&corpus.octave, &learner, "instrumented", LOW_SPEED_MPH).map_err(|e| e.to_string())?;
    let log = learner.log.into_inner().unwrap();
    ensure(log.len() == 6 && report.experiments.len() == 6, || format!("{} fits", log.len()))?;
    let by_route: HashMap<u32, usize> = corpus
        .octave
        .iter()
        .fold(HashMap::new(), |mut m, t| {
            *m.entry(t.route_id).or_default() += t.frames();
            m
        });
    for ((routes, frames), e) in log.iter().zip(&report.experiments) {
        ensure(routes == &BTreeSet::from([e.train_route]), || format!("fit saw routes {routes:?}"))?;
        ensure(*frames == by_route[&e.train_route] && e.train_frames == *frames, || {
            format!("experiment {}->{}: {frames} training frames", e.train_route, e.test_route)
        })?;
        ensure(!e.validation_routes.contains(&e.test_route), || "test route used for validation".into())?;
    }
    // wrapping must not change what the learner does
    let direct = cross_route_eval(&corpus.octave, &svm_learner(), "svm", LOW_SPEED_MPH).map_err(|e| e.to_string())?;
    ensure(direct.experiments.iter().zip(&report.experiments).all(|(a, b)| a.confusion == b.confusion), || {
        "instrumentation changed predictions".into()
    })?;
    Ok("6 experiments, no test-route frame reached fitting".into())
}

// ---------------------------------------------------------------- driver

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let started = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("PASS {name}: {detail} [{secs:.1} s]");
            true
        }
        Err(detail) => {
            println!("FAIL {name}: {detail} [{secs:.1} s]");
            false
        }
    }
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= run("gradient fidelity", gradient_fidelity);
    ok &= run("dsp oracle", dsp_oracle);
    ok &= run("feature count and sign invariants", feature_invariants);
    ok &= run("selection oracles", selection_oracles);
    ok &= run("smo correctness", smo_correctness);

    let started = Instant::now();
    let corpus = load_corpus(&SynthSpec::default());
    let blstm = cross_route_eval(&corpus.asf, &blstm_learner(), "blstm-asf", LOW_SPEED_MPH);
    let svm = cross_route_eval(&corpus.octave, &svm_learner(), "svm-octave", LOW_SPEED_MPH);
    let secs = started.elapsed().as_secs_f64();
    match (&blstm, &svm) {
        (Ok(b), Ok(s)) => {
            ok &= run("end-to-end ordering", || end_to_end(b, s, secs));
            ok &= run("speed-stratified structure", || speed_strata(b));
        }
        _ => {
            let msg = format!("{:?} {:?}", blstm.as_ref().err(), svm.as_ref().err());
            ok &= run("end-to-end ordering", || Err(msg.clone()));
            ok &= run("speed-stratified structure", || Err(msg.clone()));
        }
    }
    ok &= run("determinism", determinism);
    ok &= run("protocol integrity", || protocol_integrity(&corpus));

    if ok {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failures above");
        ExitCode::FAILURE
    }
}
