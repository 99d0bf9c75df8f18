//! Generates the default synthetic corpus, then runs the leave-route-out
//! protocol for a BLSTM on ASF features and a linear SVM on octave features.
//!
//! ```text
//! cargo run --release -p wetroad-core --example cross_route -- [layout] [lr] [max_epochs] [patience]
//! ```

use std::time::Instant;

use wetroad::dataset::{clip_features, FeatureSet};
use wetroad::eval::{cross_route_eval, EvalReport, TripData, LOW_SPEED_MPH};
use wetroad::pipeline::{RnnLearner, SvmLearner};
use wetroad::rnn::NetworkSpec;
use wetroad::svm::SvmParams;
use wetroad::synth::{generate_trips, SynthSpec};

fn trips(set: FeatureSet, corpus: &[wetroad::synth::SynthTrip]) -> Vec<TripData> {
    corpus
        .iter()
        .map(|t| {
            let f = clip_features(&t.manifest, &t.clip, set).unwrap();
            TripData {
                trip_id: f.trip_id,
                route_id: t.manifest.route_id,
                condition: t.manifest.condition,
                features: f.features,
                labels: f.labels,
                speeds: f.speeds,
            }
        })
        .collect()
}

fn show(report: &EvalReport, seconds: f64) {
    println!("{}: mean UAR {:.4} ({seconds:.1} s)", report.classifier, report.mean_uar);
    for e in &report.experiments {
        let s = &e.speed_strata;
        println!(
            "  train {} test {}: UAR {:.4}  below {:?} ({} frames)  at/above {:?} ({} frames)",
            e.train_route,
            e.test_route,
            e.uar,
            s.below.uar.map(|u| (u * 1e4).round() / 1e4),
            s.below.frames,
            s.at_or_above.uar.map(|u| (u * 1e4).round() / 1e4),
            s.at_or_above.frames
        );
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let layout: Vec<usize> = args
        .first()
        .map(|s| s.split('-').map(|x| x.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![12, 12, 12]);
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(20);
    let patience: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(5);

    let start = Instant::now();
    let corpus = generate_trips(&SynthSpec::default()).unwrap();
    let asf = trips(FeatureSet::Asf, &corpus);
    let octave = trips(FeatureSet::Octave, &corpus);
    println!("corpus + features: {:.1} s", start.elapsed().as_secs_f64());

    let t = Instant::now();
    let svm = SvmLearner {
        params: SvmParams::default(),
    };
    let report = cross_route_eval(&octave, &svm, "svm-octave", LOW_SPEED_MPH).unwrap();
    show(&report, t.elapsed().as_secs_f64());

    let t = Instant::now();
    let mut spec = NetworkSpec::new(54, layout, true);
    spec.learning_rate = lr;
    spec.max_epochs = epochs;
    spec.patience = patience;
    let rnn = RnnLearner { spec };
    let report = cross_route_eval(&asf, &rnn, "blstm-asf", LOW_SPEED_MPH).unwrap();
    show(&report, t.elapsed().as_secs_f64());
}
