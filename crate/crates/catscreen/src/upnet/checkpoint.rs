//! Model checkpoints: a single self-describing JSON file holding the config,
//! all weights, the frozen RFF draws, the posterior, and the input
//! standardization statistics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SurrogateModel, UpnetError};
use crate::data::FeatureSchema;

const FORMAT_TAG: &str = "catscreen-model-v1";

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    model: SurrogateModel,
    /// Feature schema the model was trained against, when it came from an
    /// encoded dataset (absent for tensors built directly).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schema: Option<FeatureSchema>,
}

pub fn save_model(model: &SurrogateModel, path: &Path) -> Result<(), UpnetError> {
    save_checkpoint(model, None, path)
}

pub fn save_checkpoint(
    model: &SurrogateModel,
    schema: Option<&FeatureSchema>,
    path: &Path,
) -> Result<(), UpnetError> {
    let file = std::fs::File::create(path)?;
    let w = std::io::BufWriter::new(file);
    serde_json::to_writer(
        w,
        &CheckpointFile {
            format: FORMAT_TAG.to_string(),
            model: model.clone(),
            schema: schema.cloned(),
        },
    )
    .map_err(|e| UpnetError::Checkpoint(e.to_string()))
}

pub fn load_model(path: &Path) -> Result<SurrogateModel, UpnetError> {
    Ok(load_checkpoint(path)?.0)
}

pub fn load_checkpoint(
    path: &Path,
) -> Result<(SurrogateModel, Option<FeatureSchema>), UpnetError> {
    let file = std::fs::File::open(path)?;
    let r = std::io::BufReader::new(file);
    let ckpt: CheckpointFile =
        serde_json::from_reader(r).map_err(|e| UpnetError::Checkpoint(e.to_string()))?;
    if ckpt.format != FORMAT_TAG {
        return Err(UpnetError::Checkpoint(format!(
            "unknown checkpoint format {:?}",
            ckpt.format
        )));
    }
    ckpt.model.config.validate()?;
    Ok((ckpt.model, ckpt.schema))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::upnet::{fit, ModelConfig, PointCloudTensor, Targets, TrainSet};
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn save_load_preserves_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tensors: Vec<PointCloudTensor> = (0..5)
            .map(|_| {
                let rows: Vec<DVector<f64>> = (0..3)
                    .map(|_| DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal)))
                    .collect();
                PointCloudTensor::from_valid_rows(&rows, 4)
            })
            .collect();
        let train = TrainSet {
            tensors: tensors.clone(),
            targets: Targets::Regression(vec![0.1, 0.5, 0.9, 0.3, 0.7]),
        };
        let mut config = ModelConfig::regression_default(4);
        config.n_blocks = 2;
        config.hidden_width = 8;
        config.rff_dim = 16;
        config.training.epochs = 5;
        config.training.learning_rate = 1e-3;
        let model = fit(&train, &config).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        for t in &tensors {
            let a = model.predict_regression(t, true).unwrap();
            let b = loaded.predict_regression(t, true).unwrap();
            assert_eq!(a.mean, b.mean);
            assert_eq!(a.variance, b.variance);
        }
    }

    #[test]
    fn bad_format_tag_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, r#"{"format":"other","model":{}}"#).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(UpnetError::Checkpoint(_))
        ));
    }

    #[test]
    fn missing_checkpoint_is_io_error() {
        assert!(matches!(
            load_model(Path::new("/nonexistent/m.json")),
            Err(UpnetError::Io(_))
        ));
    }
}
