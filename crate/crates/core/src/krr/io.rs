use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{FeatureScaler, KernelHyperparams, KernelModel};
use crate::error::{Error, Result};
use crate::mesh::LobeLabel;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    hyper: KernelHyperparams,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "D")]
    d: usize,
    landmark_count: usize,
    feature_order_tag: String,
    lobe_label: LobeLabel,
    feature_scaling: FeatureScaler,
    /// Row-major `D × N`, little-endian f64, base64.
    train_x: String,
    /// Row-major `D × M`, little-endian f64, base64.
    weights: String,
}

fn encode(values: impl Iterator<Item = f64>) -> String {
    let bytes: Vec<u8> = values.flat_map(f64::to_le_bytes).collect();
    STANDARD.encode(bytes)
}

fn decode(text: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::arg(format!("model field {what} is not valid base64: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(Error::arg(format!(
            "model field {what} holds {} bytes, expected {}",
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub(crate) fn to_json(model: &KernelModel) -> Result<String> {
    let file = ModelFile {
        hyper: model.hyper,
        n: model.input_dim(),
        m: 3,
        d: model.sample_count(),
        landmark_count: model.landmark_count,
        feature_order_tag: model.feature_order_tag.clone(),
        lobe_label: model.lobe,
        feature_scaling: model.scaler.clone(),
        train_x: encode(model.train_x.iter().flatten().copied()),
        weights: encode(model.weights.iter().flat_map(|w| w.iter().copied())),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub(crate) fn from_json(text: &str) -> Result<KernelModel> {
    let f: ModelFile = serde_json::from_str(text)?;
    f.hyper.validate()?;
    if f.m != 3 {
        return Err(Error::arg(format!(
            "model output dimension must be 3, got {}",
            f.m
        )));
    }
    if f.feature_scaling.mean.len() != f.n || f.feature_scaling.scale.len() != f.n {
        return Err(Error::arg(
            "feature scaling does not match the input dimension",
        ));
    }
    let x = decode(&f.train_x, f.d * f.n, "train_x")?;
    let w = decode(&f.weights, f.d * 3, "weights")?;
    Ok(KernelModel {
        hyper: f.hyper,
        train_x: x.chunks_exact(f.n.max(1)).map(<[f64]>::to_vec).collect(),
        weights: w
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect(),
        landmark_count: f.landmark_count,
        feature_order_tag: f.feature_order_tag,
        lobe: f.lobe_label,
        scaler: f.feature_scaling,
    })
}

pub fn save_model(model: &KernelModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_json(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<KernelModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krr::{fit_scaled, ScalingMode};

    fn model() -> KernelModel {
        let xs: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..8).map(|n| ((i * 8 + n) as f64 * 0.37).sin()).collect())
            .collect();
        let ys: Vec<Vector3<f64>> = (0..6)
            .map(|i| Vector3::new(i as f64, 0.1 / 3.0, -1e-300))
            .collect();
        fit_scaled(
            &xs,
            &ys,
            KernelHyperparams::new(1.0, 0.3, 1e-3).unwrap(),
            ScalingMode::Standardize,
        )
        .unwrap()
        .with_lobe(LobeLabel::Lower)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        assert_eq!(m.landmark_count, 1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.json");
        save_model(&m, &p).unwrap();
        let back = load_model(&p).unwrap();
        assert_eq!(back, m);
        let q = vec![0.2; 8];
        assert_eq!(back.predict(&q).unwrap(), m.predict(&q).unwrap());
    }

    #[test]
    fn file_has_documented_fields() {
        let v: serde_json::Value = serde_json::from_str(&to_json(&model()).unwrap()).unwrap();
        for key in [
            "hyper",
            "N",
            "M",
            "landmark_count",
            "feature_order_tag",
            "lobe_label",
            "train_x",
            "weights",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["N"], 8);
        assert_eq!(v["lobe_label"], "lower");
        let raw = STANDARD.decode(v["weights"].as_str().unwrap()).unwrap();
        assert_eq!(raw.len(), 6 * 3 * 8);
        let first = f64::from_le_bytes(raw[..8].try_into().unwrap());
        assert_eq!(first, model().weights[0].x);
    }

    #[test]
    fn truncated_arrays_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&to_json(&model()).unwrap()).unwrap();
        v["weights"] = serde_json::Value::String(STANDARD.encode([0u8; 16]));
        assert!(from_json(&v.to_string()).is_err());
    }
}
