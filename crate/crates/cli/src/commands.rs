use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use wetroad::dataset::{
    condition_of, extract_trip, features_to_csv, join_manifest, parse_feature_csv, select_trip_columns, stack,
    FeatureSet, TripFeatures,
};
use wetroad::eval::{cross_route_eval, EvalReport, TripData, LOW_SPEED_MPH};
use wetroad::ingest::{parse_manifest, TripManifest};
use wetroad::pipeline::{fit_rnn, fit_svm, predict_with, Model, RnnLearner, SvmLearner};
use wetroad::rnn::NetworkSpec;
use wetroad::select::{Discretization, SelectionReport};
use wetroad::svm::{Kernel, SvmParams};
use wetroad::synth::{generate_corpus, SynthSpec};

use crate::args::*;
use crate::output::{sibling, Staged};
use crate::CliError;

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn pretty<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(wetroad::Error::from)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn load_features(path: &Path) -> Result<Vec<TripFeatures>, CliError> {
    Ok(parse_feature_csv(&read_text(path)?)?)
}

fn load_selection(path: Option<&Path>) -> Result<Option<SelectionReport>, CliError> {
    path.map(|p| Ok(SelectionReport::from_json(&read_text(p)?)?)).transpose()
}

/// Joins features with the manifest when one is given. Without a manifest
/// every trip is placed on route 0 and its condition is read off its labels.
fn trip_data(features: Vec<TripFeatures>, manifest: Option<&[TripManifest]>) -> Result<Vec<TripData>, CliError> {
    if let Some(m) = manifest {
        return Ok(join_manifest(features, m)?);
    }
    features
        .into_iter()
        .map(|t| {
            let condition = condition_of(&t.labels)
                .ok_or_else(|| wetroad::Error::Validation(format!("trip {} has no frames", t.trip_id)))?;
            Ok(TripData {
                trip_id: t.trip_id,
                route_id: 0,
                condition,
                features: t.features,
                labels: t.labels,
                speeds: t.speeds,
            })
        })
        .collect()
}

fn apply_selection(trips: Vec<TripData>, selection: Option<&SelectionReport>) -> Result<Vec<TripData>, CliError> {
    let (Some(sel), Some(first)) = (selection, trips.first()) else {
        return Ok(trips);
    };
    let columns = sel.columns_for(first.features.feature_names())?;
    Ok(select_trip_columns(&trips, &columns)?)
}

pub fn synth(flags: &SynthArgs) -> Result<(), CliError> {
    let a = merge_config(flags, flags.config.as_deref())?;
    let out = required(&a.out, "out")?;
    let mut spec = match &a.spec {
        Some(p) => SynthSpec::from_json(&read_text(p)?)?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate()?;

    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| CliError::io(&parent, e))?;
    let staging = tempfile::tempdir_in(&parent).map_err(|e| CliError::io(&parent, e))?;
    generate_corpus(&spec, staging.path())?;
    fs::write(staging.path().join("synth_spec.json"), spec.to_json()?)
        .map_err(|e| CliError::io(staging.path(), e))?;
    fs::write(staging.path().join("run_config.json"), pretty(&a)?).map_err(|e| CliError::io(staging.path(), e))?;

    if !out.exists() {
        let kept = staging.keep();
        return fs::rename(&kept, &out).map_err(|e| CliError::io(&out, e));
    }
    let entries = fs::read_dir(staging.path()).map_err(|e| CliError::io(staging.path(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(staging.path(), e))?;
        let dest = out.join(entry.file_name());
        fs::rename(entry.path(), &dest).map_err(|e| CliError::io(&dest, e))?;
    }
    Ok(())
}

pub fn extract(flags: &ExtractArgs) -> Result<(), CliError> {
    let a = merge_config(flags, flags.config.as_deref())?;
    let manifest_path = required(&a.manifest, "manifest")?;
    let out = required(&a.out, "out")?;
    let set = match a.set.unwrap_or(FeatureSetArg::Asf) {
        FeatureSetArg::Asf => FeatureSet::Asf,
        FeatureSetArg::Octave => FeatureSet::Octave,
    };
    let manifest = parse_manifest(&manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let trips = manifest
        .iter()
        .map(|t| extract_trip(t, base, set))
        .collect::<wetroad::Result<Vec<_>>>()?;

    let mut staged = Staged::default();
    staged.add(&out, features_to_csv(&trips)?.as_bytes())?;
    staged.add(sibling(&out, ".config.json"), &pretty(&a)?)?;
    staged.commit()
}

pub fn select(flags: &SelectArgs) -> Result<(), CliError> {
    let a = merge_config(flags, flags.config.as_deref())?;
    let features = required(&a.features, "features")?;
    let out = required(&a.out, "out")?;
    let discretization = match a.discretization.unwrap_or(DiscretizationArg::Mdl) {
        DiscretizationArg::Mdl => Discretization::Mdl,
        DiscretizationArg::EqualWidth => Discretization::EqualWidth {
            bins: a.bins.unwrap_or(10),
        },
    };
    let trips = trip_data(load_features(&features)?, None)?;
    let refs: Vec<&TripData> = trips.iter().collect();
    let (stacked, labels) = stack(&refs)?;
    let report = match a.method.unwrap_or(MethodArg::Ig) {
        MethodArg::Ig => SelectionReport::ig(&stacked, &labels, a.top_k.unwrap_or(20), discretization)?,
        MethodArg::Cfs => SelectionReport::cfs(&stacked, &labels, a.max_stale.unwrap_or(5), discretization)?,
    };

    let mut staged = Staged::default();
    staged.add(&out, report.to_json()?.as_bytes())?;
    staged.add(sibling(&out, ".config.json"), &pretty(&a)?)?;
    staged.commit()
}

/// Classifier settings shared by `train` and `eval`.
struct ModelOpts<'a> {
    arch: Option<ArchArg>,
    layout: Option<&'a str>,
    lr: Option<f64>,
    seed: Option<u64>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    subsequence_len: Option<usize>,
    peepholes: Option<bool>,
    c: Option<f64>,
    kernel: Option<KernelArg>,
    gamma: Option<f64>,
    tol: Option<f64>,
    max_passes: Option<usize>,
}

enum Choice {
    Rnn(NetworkSpec),
    Svm(SvmParams),
}

impl ModelOpts<'_> {
    /// Input width is left at 0; training sets it from the data.
    fn choice(&self) -> Result<Choice, CliError> {
        let arch = self.arch.unwrap_or(ArchArg::Blstm);
        if arch == ArchArg::Svm {
            let d = SvmParams::default();
            let params = SvmParams {
                c: self.c.unwrap_or(d.c),
                kernel: match self.kernel.unwrap_or(KernelArg::Linear) {
                    KernelArg::Linear => Kernel::Linear,
                    KernelArg::Rbf => Kernel::Rbf {
                        gamma: self.gamma.unwrap_or(1.0),
                    },
                },
                tol: self.tol.unwrap_or(d.tol),
                max_passes: self.max_passes.unwrap_or(d.max_passes),
            };
            params.validate()?;
            return Ok(Choice::Svm(params));
        }
        let layout = parse_layout(self.layout.unwrap_or("216-216-216"))?;
        let mut spec = NetworkSpec::new(0, layout, arch == ArchArg::Blstm);
        spec.learning_rate = self.lr.unwrap_or(spec.learning_rate);
        spec.seed = self.seed.unwrap_or(spec.seed);
        spec.max_epochs = self.max_epochs.unwrap_or(spec.max_epochs);
        spec.patience = self.patience.unwrap_or(spec.patience);
        spec.subsequence_len = self.subsequence_len.unwrap_or(spec.subsequence_len);
        spec.peepholes = self.peepholes.unwrap_or(spec.peepholes);
        if !(spec.learning_rate > 0.0 && spec.learning_rate.is_finite()) {
            return Err(CliError::Usage(format!("--lr must be positive, got {}", spec.learning_rate)));
        }
        if spec.max_epochs == 0 || spec.subsequence_len == 0 {
            return Err(CliError::Usage("--max-epochs and --subsequence-len must be positive".into()));
        }
        Ok(Choice::Rnn(spec))
    }
}

macro_rules! model_opts {
    ($a:expr) => {
        ModelOpts {
            arch: $a.arch,
            layout: $a.layout.as_deref(),
            lr: $a.lr,
            seed: $a.seed,
            max_epochs: $a.max_epochs,
            patience: $a.patience,
            subsequence_len: $a.subsequence_len,
            peepholes: $a.peepholes,
            c: $a.c,
            kernel: $a.kernel,
            gamma: $a.gamma,
            tol: $a.tol,
            max_passes: $a.max_passes,
        }
    };
}

pub fn train(flags: &TrainArgs) -> Result<(), CliError> {
    let a = merge_config(flags, flags.config.as_deref())?;
    let features = required(&a.features, "features")?;
    let out = required(&a.out, "out")?;
    let choice = model_opts!(a).choice()?;
    if a.val_route.is_some() && a.manifest.is_none() {
        return Err(CliError::Usage("--val-route needs --manifest".into()));
    }
    let manifest = a.manifest.as_deref().map(parse_manifest).transpose()?;
    let selection = load_selection(a.selection.as_deref())?;
    let trips = trip_data(load_features(&features)?, manifest.as_deref())?;
    let trips = apply_selection(trips, selection.as_ref())?;

    let (train_set, val_set): (Vec<&TripData>, Vec<&TripData>) = match a.val_route {
        Some(v) => trips.iter().partition(|t| t.route_id != v),
        None => (trips.iter().collect(), Vec::new()),
    };
    if let Some(v) = a.val_route {
        if val_set.is_empty() || train_set.is_empty() {
            return Err(CliError::Usage(format!(
                "--val-route {v} must name one route and leave others to train on"
            )));
        }
    }

    let mut staged = Staged::default();
    match choice {
        Choice::Rnn(spec) => {
            let (model, history) = fit_rnn(&spec, &train_set, &val_set)?;
            staged.add(&out, model.to_json()?.as_bytes())?;
            staged.add(sibling(&out, ".history.json"), &pretty(&history)?)?;
        }
        Choice::Svm(params) => {
            let model = fit_svm(&params, &train_set)?;
            staged.add(&out, model.to_json()?.as_bytes())?;
        }
    }
    staged.add(sibling(&out, ".config.json"), &pretty(&a)?)?;
    staged.commit()
}

pub fn eval(flags: &EvalArgs) -> Result<(), CliError> {
    let a = merge_config(flags, flags.config.as_deref())?;
    let features = required(&a.features, "features")?;
    let manifest = parse_manifest(required(&a.manifest, "manifest")?)?;
    let out = required(&a.out, "out")?;
    let timeline = a.timeline.clone().unwrap_or_else(|| out.with_extension("timeline.csv"));
    let threshold = a.speed_threshold.unwrap_or(LOW_SPEED_MPH);
    if !threshold.is_finite() {
        return Err(CliError::Usage("--speed-threshold must be finite".into()));
    }
    let choice = model_opts!(a).choice()?;
    let selection = load_selection(a.selection.as_deref())?;
    let trips = trip_data(load_features(&features)?, Some(&manifest))?;
    let trips = apply_selection(trips, selection.as_ref())?;

    let report: EvalReport = match choice {
        Choice::Rnn(spec) => {
            let name = if spec.bidirectional { "blstm" } else { "lstm" };
            cross_route_eval(&trips, &RnnLearner { spec }, name, threshold)?
        }
        Choice::Svm(params) => cross_route_eval(&trips, &SvmLearner { params }, "svm", threshold)?,
    };

    let mut staged = Staged::default();
    staged.add(&out, report.to_json()?.as_bytes())?;
    staged.add(&timeline, report.timeline_csv().as_bytes())?;
    staged.add(sibling(&out, ".config.json"), &pretty(&a)?)?;
    staged.commit()
}

pub fn predict(flags: &PredictArgs) -> Result<(), CliError> {
    let a = merge_config(flags, flags.config.as_deref())?;
    let model = Model::load(required(&a.model, "model")?)?;
    let features = required(&a.features, "features")?;
    let out = required(&a.out, "out")?;
    let selection = load_selection(a.selection.as_deref())?;
    let trips = apply_selection(trip_data(load_features(&features)?, None)?, selection.as_ref())?;

    let mut csv = String::from("trip_id,time_s,speed_mph,label,prediction,posterior_wet\n");
    for t in &trips {
        let p = predict_with(&model, &t.features)?;
        for (i, &time) in t.features.frame_times().iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                t.trip_id,
                wetroad::dataset::fmt_sig(time),
                wetroad::dataset::fmt_sig(t.speeds[i]),
                t.labels[i],
                p.classes[i],
                wetroad::dataset::fmt_sig(p.posterior_wet[i])
            ));
        }
    }
    let mut staged = Staged::default();
    staged.add(&out, csv.as_bytes())?;
    staged.add(sibling(&out, ".config.json"), &pretty(&a)?)?;
    staged.commit()
}
