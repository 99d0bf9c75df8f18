//! Learners plugging the RNN and SVM classifiers into the cross-route
//! protocol, and a tagged model type for files of either kind.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::dataset::stack;
use crate::error::{Error, Result};
use crate::eval::{Learner, TripData, TripPrediction};
use crate::features::FeatureMatrix;
use crate::norm::Standardizer;
use crate::rnn::{init_model, predict_frames, train, NetworkSpec, RnnModel, SequenceRef, TrainHistory};
use crate::svm::{smo_train, svm_predict, SvmModel, SvmParams};

/// Fits an input standardizer on the training trips, initialises a network
/// of `spec` (input width taken from the data) and trains it.
pub fn fit_rnn(spec: &NetworkSpec, train_trips: &[&TripData], val_trips: &[&TripData]) -> Result<(RnnModel, TrainHistory)> {
    let (stacked, _) = stack(train_trips)?;
    let mut spec = spec.clone();
    spec.input_dim = stacked.dims();
    let mut model = init_model(&spec)?;
    model.input_norm = Some(Standardizer::fit(stacked.values(), stacked.dims())?);
    train(model, &sequences(train_trips), &sequences(val_trips))
}

fn sequences<'a>(trips: &[&'a TripData]) -> Vec<SequenceRef<'a>> {
    trips.iter().map(|t| SequenceRef::new(&t.features, &t.labels)).collect()
}

/// Wet = +1, dry = −1.
pub fn svm_labels(labels: &[usize]) -> Vec<i8> {
    labels.iter().map(|&l| if l == 1 { 1 } else { -1 }).collect()
}

pub fn fit_svm(params: &SvmParams, train_trips: &[&TripData]) -> Result<SvmModel> {
    let (stacked, labels) = stack(train_trips)?;
    smo_train(stacked.values(), stacked.dims(), &svm_labels(&labels), params)
}

#[derive(Debug, Clone)]
pub struct RnnLearner {
    pub spec: NetworkSpec,
}

impl Learner for RnnLearner {
    type Model = RnnModel;

    fn fit(&self, train: &[&TripData], validation: &[&TripData]) -> Result<RnnModel> {
        Ok(fit_rnn(&self.spec, train, validation)?.0)
    }

    fn predict(&self, model: &RnnModel, trip: &TripData) -> Result<TripPrediction> {
        rnn_frames(model, &trip.features)
    }
}

/// The SVM ignores validation trips.
#[derive(Debug, Clone)]
pub struct SvmLearner {
    pub params: SvmParams,
}

impl Learner for SvmLearner {
    type Model = SvmModel;

    fn fit(&self, train: &[&TripData], _validation: &[&TripData]) -> Result<SvmModel> {
        fit_svm(&self.params, train)
    }

    fn predict(&self, model: &SvmModel, trip: &TripData) -> Result<TripPrediction> {
        svm_frames(model, &trip.features)
    }
}

fn rnn_frames(model: &RnnModel, features: &FeatureMatrix) -> Result<TripPrediction> {
    let p = predict_frames(model, features)?;
    let posterior_wet = (0..features.frames()).map(|t| p.posterior(t, 1)).collect();
    Ok(TripPrediction {
        classes: p.classes,
        posterior_wet,
    })
}

fn svm_frames(model: &SvmModel, features: &FeatureMatrix) -> Result<TripPrediction> {
    let mut classes = Vec::with_capacity(features.frames());
    let mut posterior_wet = Vec::with_capacity(features.frames());
    for row in features.rows() {
        let (class, v) = svm_predict(model, row)?;
        classes.push(usize::from(class == 1));
        posterior_wet.push(1.0 / (1.0 + (-v).exp()));
    }
    Ok(TripPrediction {
        classes,
        posterior_wet,
    })
}

/// A trained classifier of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Rnn(RnnModel),
    Svm(SvmModel),
}

impl Model {
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Kind {
            kind: String,
        }
        let k: Kind = serde_json::from_str(text)?;
        match k.kind.as_str() {
            "rnn" => Ok(Self::Rnn(RnnModel::from_json(text)?)),
            "svm" => Ok(Self::Svm(SvmModel::from_json(text)?)),
            other => Err(Error::Validation(format!("unknown model kind '{other}'"))),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_json(&self) -> Result<String> {
        match self {
            Self::Rnn(m) => m.to_json(),
            Self::Svm(m) => m.to_json(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Self::Rnn(m) => m.spec.input_dim,
            Self::Svm(m) => m.input_dim,
        }
    }
}

/// Per-frame classes and wet posteriors. For the SVM the posterior is the
/// logistic of the decision value.
pub fn predict_with(model: &Model, features: &FeatureMatrix) -> Result<TripPrediction> {
    match model {
        Model::Rnn(m) => rnn_frames(m, features),
        Model::Svm(m) => svm_frames(m, features),
    }
}
