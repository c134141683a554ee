//! On-disk formats.
//!
//! A dataset directory holds `meta.json` and `images.bin`; the latter is all
//! images concatenated in sample order, row-major, as little-endian `f32`.
//!
//! A model directory holds `model.json` and `weights.bin`, little-endian
//! `f32` in this order:
//!
//! 1. the per-feature input mean (`mean_len` values, possibly zero);
//! 2. ridge: the weight vector; mlp: for each layer the weight matrix
//!    (`out × in`, row-major) followed by its bias vector.
//!
//! Scalars (ridge bias and λ, input scale, oracle noise) live in `model.json`
//! at full precision.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::{
    Dataset, FeatureMap, InputSpec, ModelKind, OffsetTruth, PerceptionError, Provenance, RegressorModel, Sample,
};
use crate::geometry::CameraModel;
use crate::sim::{ComponentStyle, Observation};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct SampleMeta {
    label: f64,
    insertion_id: u32,
    camera_index: usize,
    offset_truth: OffsetTruth,
    true_label: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    schema_version: u32,
    resolution: u32,
    style: ComponentStyle,
    cameras: Vec<CameraModel>,
    groups: BTreeMap<u32, Vec<usize>>,
    samples: Vec<SampleMeta>,
}

fn write_f32s<W: Write>(w: &mut W, values: impl IntoIterator<Item = f32>) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f32s(path: &Path) -> Result<Vec<f32>, PerceptionError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 {
        return Err(PerceptionError::Format(format!("{} is not a whole number of f32 values", path.display())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PerceptionError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| PerceptionError::Format(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PerceptionError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| PerceptionError::Format(format!("{}: {e}", path.display())))
}

pub fn save_dataset(data: &Dataset, dir: &Path) -> Result<(), PerceptionError> {
    fs::create_dir_all(dir)?;
    let resolution = data.resolution().unwrap_or(0);
    let meta = DatasetMeta {
        schema_version: SCHEMA_VERSION,
        resolution,
        style: data.style,
        cameras: data.cameras.clone(),
        groups: data.groups(),
        samples: data
            .samples
            .iter()
            .map(|s| SampleMeta {
                label: s.label,
                insertion_id: s.insertion_id,
                camera_index: s.camera_index,
                offset_truth: s.offset_truth,
                true_label: s.observation.true_label,
            })
            .collect(),
    };
    write_json(&dir.join("meta.json"), &meta)?;
    let mut w = BufWriter::new(File::create(dir.join("images.bin"))?);
    for s in &data.samples {
        if s.observation.resolution != resolution {
            return Err(PerceptionError::ShapeMismatch {
                expected: (resolution * resolution) as usize,
                got: s.observation.pixels.len(),
            });
        }
        write_f32s(&mut w, s.observation.pixels.iter().copied())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, PerceptionError> {
    let meta: DatasetMeta = read_json(&dir.join("meta.json"))?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(PerceptionError::Format(format!("unsupported dataset schema {}", meta.schema_version)));
    }
    let pixels = read_f32s(&dir.join("images.bin"))?;
    let n = meta.resolution as usize * meta.resolution as usize;
    if pixels.len() != n * meta.samples.len() {
        return Err(PerceptionError::ShapeMismatch { expected: n * meta.samples.len(), got: pixels.len() });
    }
    let samples: Vec<Sample> = meta
        .samples
        .into_iter()
        .enumerate()
        .map(|(i, m)| Sample {
            observation: Observation {
                pixels: pixels[i * n..(i + 1) * n].to_vec(),
                resolution: meta.resolution,
                camera_index: m.camera_index,
                true_label: m.true_label,
            },
            label: m.label,
            insertion_id: m.insertion_id,
            camera_index: m.camera_index,
            offset_truth: m.offset_truth,
        })
        .collect();
    let data = Dataset { samples, cameras: meta.cameras, style: meta.style };
    if data.groups() != meta.groups {
        return Err(PerceptionError::Format("insertion grouping does not match samples".into()));
    }
    Ok(data)
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    schema_version: u32,
    kind: String,
    resolution: u32,
    feature_map: FeatureMap,
    scale: f64,
    mean_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sizes: Option<Vec<usize>>,
    weight_count: usize,
    provenance: Provenance,
}

pub fn save_model(model: &RegressorModel, dir: &Path) -> Result<(), PerceptionError> {
    fs::create_dir_all(dir)?;
    let input = &model.input;
    let mut meta = ModelMeta {
        schema_version: SCHEMA_VERSION,
        kind: model.kind.name().to_string(),
        resolution: input.resolution,
        feature_map: input.feature_map,
        scale: input.scale,
        mean_len: input.mean.len(),
        noise_sigma: None,
        bias: None,
        lambda: None,
        sizes: None,
        weight_count: 0,
        provenance: model.provenance.clone(),
    };
    let params: &[f64] = match &model.kind {
        ModelKind::Oracle { noise_sigma } => {
            meta.noise_sigma = Some(*noise_sigma);
            &[]
        }
        ModelKind::Ridge { weights, bias, lambda } => {
            meta.bias = Some(*bias);
            meta.lambda = Some(*lambda);
            weights
        }
        ModelKind::Mlp(m) => {
            meta.sizes = Some(m.sizes.clone());
            &m.params
        }
    };
    meta.weight_count = params.len();
    write_json(&dir.join("model.json"), &meta)?;
    let mut w = BufWriter::new(File::create(dir.join("weights.bin"))?);
    write_f32s(&mut w, input.mean.iter().chain(params).map(|&v| v as f32))?;
    w.flush()?;
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<RegressorModel, PerceptionError> {
    let meta: ModelMeta = read_json(&dir.join("model.json"))?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(PerceptionError::Format(format!("unsupported model schema {}", meta.schema_version)));
    }
    let values: Vec<f64> = read_f32s(&dir.join("weights.bin"))?.into_iter().map(f64::from).collect();
    if values.len() != meta.mean_len + meta.weight_count {
        return Err(PerceptionError::ShapeMismatch { expected: meta.mean_len + meta.weight_count, got: values.len() });
    }
    let (mean, params) = values.split_at(meta.mean_len);
    let missing = |field: &str| PerceptionError::Format(format!("{} model lacks `{field}`", meta.kind));
    let kind = match meta.kind.as_str() {
        "oracle" => ModelKind::Oracle { noise_sigma: meta.noise_sigma.ok_or_else(|| missing("noise_sigma"))? },
        "ridge" => ModelKind::Ridge {
            weights: params.to_vec(),
            bias: meta.bias.ok_or_else(|| missing("bias"))?,
            lambda: meta.lambda.ok_or_else(|| missing("lambda"))?,
        },
        "mlp" => ModelKind::Mlp(Mlp { sizes: meta.sizes.clone().ok_or_else(|| missing("sizes"))?, params: params.to_vec() }),
        other => return Err(PerceptionError::Format(format!("unknown model kind `{other}`"))),
    };
    let model = RegressorModel {
        kind,
        input: InputSpec {
            resolution: meta.resolution,
            feature_map: meta.feature_map,
            mean: mean.to_vec(),
            scale: meta.scale,
        },
        provenance: meta.provenance,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_dataset;
    use super::*;
    use crate::seeds;

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let d = tiny_dataset(2, 3);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&d, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, d);
        let bytes = fs::read(dir.path().join("images.bin")).unwrap();
        assert_eq!(bytes.len(), 6 * 64 * 64 * 4);
    }

    #[test]
    fn model_round_trip() {
        let mut rng = seeds::rng(0, &[]);
        let mlp = Mlp::new(vec![16, 4, 1], &mut rng);
        let model = RegressorModel {
            kind: ModelKind::Mlp(mlp),
            input: InputSpec { resolution: 4, feature_map: FeatureMap::Raw, mean: vec![0.5; 16], scale: 0.25 },
            provenance: Provenance { seed: 7, ..Default::default() },
        };
        let dir = tempfile::tempdir().unwrap();
        save_model(&model, dir.path()).unwrap();
        let back = load_model(dir.path()).unwrap();
        assert_eq!(back.provenance.seed, 7);
        let (ModelKind::Mlp(a), ModelKind::Mlp(b)) = (&model.kind, &back.kind) else { panic!() };
        assert_eq!(a.sizes, b.sizes);
        for (x, y) in a.params.iter().zip(&b.params) {
            assert_eq!(*x as f32, *y as f32);
        }
        let weights = fs::read(dir.path().join("weights.bin")).unwrap();
        assert_eq!(weights.len(), (16 + Mlp::param_count(&[16, 4, 1])) * 4);
    }

    #[test]
    fn oracle_and_ridge_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let o = RegressorModel::oracle(64, 0.002);
        save_model(&o, dir.path()).unwrap();
        assert_eq!(load_model(dir.path()).unwrap(), o);
        let c = RegressorModel::constant(8, 0.01);
        save_model(&c, dir.path()).unwrap();
        assert_eq!(load_model(dir.path()).unwrap(), c);
    }

    #[test]
    fn truncated_weights_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_model(&RegressorModel::constant(8, 0.0), dir.path()).unwrap();
        fs::write(dir.path().join("weights.bin"), [0u8; 12]).unwrap();
        assert!(matches!(load_model(dir.path()), Err(PerceptionError::ShapeMismatch { .. })));
    }
}
