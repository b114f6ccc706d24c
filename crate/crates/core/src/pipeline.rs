//! End-to-end training pipeline (variant tokenization → counting → IG
//! selection → one-vs-rest SVM) and the model file format.

use std::collections::HashMap;
use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClassId, LabeledExample};
use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;
use crate::features::{self, FeatureSpace, SparseBinaryVector, DEFAULT_N_PER_CLASS};
use crate::io;
use crate::svm::{self, BinaryLinearModel, MulticlassModel, TrainConfig};
use crate::textproc::{NormalizeOptions, TokenList};

pub use crate::textproc::Variant;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub normalize: NormalizeOptions,
    pub n_per_class: usize,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Base,
            normalize: NormalizeOptions::default(),
            n_per_class: DEFAULT_N_PER_CLASS,
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.normalize.validate().map_err(Error::InvalidConfig)?;
        if self.n_per_class == 0 {
            return Err(Error::InvalidConfig(
                "n_per_class must be at least 1".into(),
            ));
        }
        self.train.validate()
    }
}

/// Inclusive range of UTC epoch seconds covered by a data set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: i64,
    pub end: i64,
}

impl TimeWindow {
    pub fn of(examples: &[LabeledExample]) -> Option<Self> {
        let mut stamps = examples.iter().filter_map(|e| e.timestamp);
        let first = stamps.next()?;
        Some(stamps.fold(
            Self {
                start: first,
                end: first,
            },
            |w, t| Self {
                start: w.start.min(t),
                end: w.end.max(t),
            },
        ))
    }
}

/// Maps labels to class indices, reporting the 1-based position of the first
/// label outside `classes`.
pub fn label_indices(examples: &[LabeledExample], classes: &[ClassId]) -> Result<Vec<usize>> {
    let pos: HashMap<&ClassId, usize> = classes.iter().enumerate().map(|(i, c)| (c, i)).collect();
    examples
        .iter()
        .enumerate()
        .map(|(i, e)| {
            pos.get(&e.label)
                .copied()
                .ok_or_else(|| Error::UnknownLabel {
                    label: e.label.to_string(),
                    line: i + 1,
                })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPipeline {
    pub config: PipelineConfig,
    pub feature_space: FeatureSpace,
    pub model: MulticlassModel,
    pub class_sizes: Vec<usize>,
    pub train_window: Option<TimeWindow>,
}

impl TrainedPipeline {
    pub fn fit(
        examples: &[LabeledExample],
        classes: &[ClassId],
        config: &PipelineConfig,
    ) -> Result<Self> {
        config.validate()?;
        let labels = label_indices(examples, classes)?;
        let mut class_sizes = vec![0usize; classes.len()];
        for &l in &labels {
            class_sizes[l] += 1;
        }
        if let Some(c) = class_sizes.iter().position(|&n| n == 0) {
            return Err(Error::EmptyClass(classes[c].to_string()));
        }

        let docs: Vec<(TokenList, usize)> = examples
            .par_iter()
            .zip(labels.par_iter())
            .map(|(e, &l)| {
                let tokens =
                    config
                        .variant
                        .training_tokens(&e.text, e.title.as_deref(), &config.normalize);
                (tokens, l)
            })
            .collect();
        let counts = features::count(&docs, classes);
        let feature_space = features::select_round_robin(&counts, config.n_per_class)?;
        let xs: Vec<SparseBinaryVector> = docs
            .par_iter()
            .map(|(t, _)| feature_space.vectorize(t))
            .collect();
        info!(
            "selected {} terms from a vocabulary of {}; class sizes {:?}",
            feature_space.len(),
            counts.vocabulary_size(),
            classes.iter().zip(&class_sizes).collect::<Vec<_>>()
        );
        let model = svm::train_ovr(&xs, &labels, classes, feature_space.len(), &config.train)?;
        Ok(Self {
            config: config.clone(),
            feature_space,
            model,
            class_sizes,
            train_window: TimeWindow::of(examples),
        })
    }

    pub fn class_list(&self) -> &[ClassId] {
        &self.model.class_list
    }

    pub fn training_size(&self) -> usize {
        self.class_sizes.iter().sum()
    }

    /// Prediction-time features (never title-enriched).
    pub fn featurize(&self, text: &str) -> SparseBinaryVector {
        let tokens = self
            .config
            .variant
            .prediction_tokens(text, &self.config.normalize);
        self.feature_space.vectorize(&tokens)
    }

    pub fn predict_index(&self, text: &str) -> usize {
        self.model.predict_index(&self.featurize(text))
    }

    pub fn predict(&self, text: &str) -> &ClassId {
        &self.class_list()[self.predict_index(text)]
    }

    pub fn predict_all<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Vec<usize> {
        texts
            .par_iter()
            .map(|t| self.predict_index(t.as_ref()))
            .collect()
    }

    /// Confusion matrix of this model on a labeled set.
    pub fn confusion(&self, test: &[LabeledExample]) -> Result<ConfusionMatrix> {
        let truth = label_indices(test, self.class_list())?;
        let texts: Vec<&str> = test.iter().map(|e| e.text.as_str()).collect();
        let predicted = self.predict_all(&texts);
        let mut m = ConfusionMatrix::new(self.class_list().to_vec());
        for (t, p) in truth.into_iter().zip(predicted) {
            m.add(t, p);
        }
        Ok(m)
    }

    pub fn to_model_file(&self) -> ModelFile {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            class_list: self.model.class_list.clone(),
            feature_space: self.feature_space.clone(),
            heads: self
                .model
                .class_list
                .iter()
                .zip(&self.model.heads)
                .map(|(c, h)| HeadFile {
                    class: c.clone(),
                    weights: h.weights.clone(),
                    bias: h.bias,
                })
                .collect(),
            config: self.model.config.clone(),
            pipeline: PipelineSection {
                variant: self.config.variant,
                normalize: self.config.normalize.clone(),
                n_per_class: self.config.n_per_class,
            },
            training: TrainingSection {
                size: self.training_size(),
                class_sizes: self.class_sizes.clone(),
                window: self.train_window,
            },
        }
    }

    pub fn from_model_file(file: ModelFile) -> Result<Self> {
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported model format_version {}",
                file.format_version
            )));
        }
        if file.heads.len() != file.class_list.len()
            || file
                .heads
                .iter()
                .zip(&file.class_list)
                .any(|(h, c)| &h.class != c)
        {
            return Err(Error::InvalidConfig(
                "model heads do not match class_list".into(),
            ));
        }
        let dim = file.feature_space.len();
        if let Some(h) = file.heads.iter().find(|h| h.weights.len() != dim) {
            return Err(Error::Dimension(format!(
                "head {} has {} weights for {dim} features",
                h.class,
                h.weights.len()
            )));
        }
        let config = PipelineConfig {
            variant: file.pipeline.variant,
            normalize: file.pipeline.normalize,
            n_per_class: file.pipeline.n_per_class,
            train: file.config.clone(),
        };
        Ok(Self {
            config,
            feature_space: file.feature_space,
            model: MulticlassModel {
                class_list: file.class_list,
                heads: file
                    .heads
                    .into_iter()
                    .map(|h| BinaryLinearModel {
                        weights: h.weights,
                        bias: h.bias,
                    })
                    .collect(),
                config: file.config,
            },
            class_sizes: file.training.class_sizes,
            train_window: file.training.window,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_model_file()).expect("model serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_text(path, &(self.to_json() + "\n"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_model_file(io::read_json(path)?)
    }
}

/// On-disk model. Weights are written in shortest round-trip decimal form,
/// so reloading reproduces every bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub class_list: Vec<ClassId>,
    pub feature_space: FeatureSpace,
    pub heads: Vec<HeadFile>,
    pub config: TrainConfig,
    pub pipeline: PipelineSection,
    pub training: TrainingSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadFile {
    pub class: ClassId,
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSection {
    pub variant: Variant,
    pub normalize: NormalizeOptions,
    pub n_per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSection {
    pub size: usize,
    pub class_sizes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<TimeWindow>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_corpus() -> (Vec<LabeledExample>, Vec<ClassId>) {
        let mut out = Vec::new();
        for i in 0..20 {
            let mut e = LabeledExample::new(format!("goal match #football {i}"), "Sports");
            e.timestamp = Some(100 + i);
            e.title = Some("Best goals".into());
            out.push(e);
            out.push(LabeledExample::new(
                format!("new song album #music {i}"),
                "Music",
            ));
        }
        (out, vec![ClassId::from("Music"), ClassId::from("Sports")])
    }

    fn small_config(variant: Variant) -> PipelineConfig {
        PipelineConfig {
            variant,
            n_per_class: 5,
            ..Default::default()
        }
    }

    #[test]
    fn fit_predict_round_trip() {
        let (corpus, classes) = toy_corpus();
        let p = TrainedPipeline::fit(&corpus, &classes, &small_config(Variant::Base)).unwrap();
        assert_eq!(p.predict("what a goal").as_str(), "Sports");
        assert_eq!(p.predict("love this song").as_str(), "Music");
        assert_eq!(p.training_size(), 40);
        assert_eq!(
            p.train_window,
            Some(TimeWindow {
                start: 100,
                end: 119
            })
        );
        let json = p.to_json();
        let back = TrainedPipeline::from_model_file(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.to_json(), json);
    }

    #[test]
    fn model_file_layout() {
        let (corpus, classes) = toy_corpus();
        let p = TrainedPipeline::fit(&corpus, &classes, &small_config(Variant::H)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
        assert_eq!(v["format_version"], 1);
        assert_eq!(v["class_list"][1], "Sports");
        assert_eq!(v["heads"][0]["class"], "Music");
        assert!(v["heads"][0]["weights"].is_array());
        assert_eq!(v["config"]["C"], 1.0);
        assert_eq!(v["pipeline"]["variant"], "h");
        assert!(v["feature_space"]["per_class_top"]["Music"].is_array());
    }

    #[test]
    fn unknown_label_reports_position() {
        let (mut corpus, classes) = toy_corpus();
        corpus[3].label = ClassId::from("Polka");
        let err = TrainedPipeline::fit(&corpus, &classes, &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err, Error::UnknownLabel { line: 4, .. }));
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn empty_class_is_degenerate() {
        let (corpus, mut classes) = toy_corpus();
        classes.push(ClassId::from("Travel&Events"));
        let err = TrainedPipeline::fit(&corpus, &classes, &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyClass(ref c) if c == "Travel&Events"));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn title_variant_changes_training_but_not_prediction_input() {
        let (corpus, classes) = toy_corpus();
        let base = TrainedPipeline::fit(&corpus, &classes, &small_config(Variant::Base)).unwrap();
        let v = TrainedPipeline::fit(&corpus, &classes, &small_config(Variant::V)).unwrap();
        assert!(v.feature_space.column("goals").is_some() || v.feature_space != base.feature_space);
        assert!(v.featurize("Best goals").len() <= 2);
    }
}
