//! File formats: the binary artifact container, graymap previews, SVG
//! charts, and artifact encodings of the crate's main types.

mod artifact;
mod pgm;
mod svg;

pub use artifact::{write_atomic, ArtifactFile, FORMAT_VERSION, MAGIC};
pub use pgm::{decode_pgm, encode_pgm};
pub use svg::{line_chart, Series};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::data::{ImageDataset, PointDataset, TextureParams};
use crate::error::{Error, Result};
use crate::guidance::EditResult;
use crate::image::Image;
use crate::pipeline::{AnomalyMap, FeatureExtractor};
use crate::score::{Activation, GmmDistribution, MlpEpsModel, ScoreModel};
use crate::tensor::Tensor;

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Format(e.to_string()))
}

fn attr<T: DeserializeOwned>(a: &ArtifactFile, key: &str) -> Result<T> {
    let v = a
        .attrs
        .get(key)
        .ok_or_else(|| Error::Format(format!("missing attribute '{key}'")))?;
    serde_json::from_value(v.clone()).map_err(|e| Error::Format(format!("attribute '{key}': {e}")))
}

fn matrix(rows: &[Vec<f64>]) -> Result<Tensor> {
    let cols = rows.first().map_or(0, Vec::len);
    Tensor::new(vec![rows.len(), cols], rows.concat())
}

fn unmatrix(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    let (r, c) = t.dims2()?;
    Ok((0..r)
        .map(|i| t.data()[i * c..(i + 1) * c].to_vec())
        .collect())
}

pub fn model_to_artifact(model: &ScoreModel) -> Result<ArtifactFile> {
    match model {
        ScoreModel::Gmm(g) => {
            let mut a = ArtifactFile::new("gmm_model");
            a.push("weights", Tensor::vector(g.weights().to_vec())?);
            a.push("means", matrix(g.means())?);
            a.push("vars", matrix(g.vars())?);
            Ok(a)
        }
        ScoreModel::Mlp(m) => {
            let mut a = ArtifactFile::new("mlp_model").with_attrs(json!({
                "dim": m.dim(),
                "hidden": m.hidden(),
                "activation": to_value(&m.activation())?,
            }));
            for (i, p) in m.params().iter().enumerate() {
                let name = if i % 2 == 0 {
                    format!("w{}", i / 2)
                } else {
                    format!("b{}", i / 2)
                };
                a.push(&name, p.clone());
            }
            Ok(a)
        }
    }
}

pub fn model_from_artifact(a: &ArtifactFile) -> Result<ScoreModel> {
    match a.kind.as_str() {
        "gmm_model" => Ok(ScoreModel::Gmm(GmmDistribution::new(
            a.get("weights")?.data().to_vec(),
            unmatrix(a.get("means")?)?,
            unmatrix(a.get("vars")?)?,
        )?)),
        "mlp_model" => {
            let dim: usize = attr(a, "dim")?;
            let hidden: Vec<usize> = attr(a, "hidden")?;
            let activation: Activation = attr(a, "activation")?;
            let params = (0..=hidden.len())
                .flat_map(|l| [format!("w{l}"), format!("b{l}")])
                .map(|n| a.get(&n).cloned())
                .collect::<Result<Vec<_>>>()?;
            Ok(ScoreModel::Mlp(MlpEpsModel::from_params(
                dim, hidden, activation, params,
            )?))
        }
        other => Err(Error::Format(format!("'{other}' is not a model artifact"))),
    }
}

pub fn points_to_artifact(d: &PointDataset) -> Result<ArtifactFile> {
    let mut a = ArtifactFile::new("point_dataset")
        .with_attrs(json!({ "seed": d.seed, "gmm": to_value(&d.gmm)? }));
    a.push(
        "samples",
        Tensor::new(vec![d.len(), d.dim], d.samples.clone())?,
    );
    a.push(
        "components",
        Tensor::vector(d.components.iter().map(|&k| k as f64).collect())?,
    );
    Ok(a)
}

pub fn points_from_artifact(a: &ArtifactFile) -> Result<PointDataset> {
    a.expect_kind("point_dataset")?;
    let s = a.get("samples")?;
    let (_, dim) = s.dims2()?;
    Ok(PointDataset {
        dim,
        samples: s.data().to_vec(),
        components: a
            .get("components")?
            .data()
            .iter()
            .map(|&k| k as usize)
            .collect(),
        gmm: attr(a, "gmm")?,
        seed: attr(a, "seed")?,
    })
}

pub fn images_to_artifact(d: &ImageDataset) -> Result<ArtifactFile> {
    let p = &d.params;
    let n = d.len();
    let mut a = ArtifactFile::new("image_dataset")
        .with_attrs(json!({ "seed": d.seed, "params": to_value(p)? }));
    a.push(
        "images",
        Tensor::new(
            vec![n, p.height, p.width, p.channels],
            d.images.iter().flat_map(|im| im.data.clone()).collect(),
        )?,
    );
    a.push(
        "masks",
        Tensor::new(
            vec![n, p.height, p.width],
            d.masks.iter().flatten().map(|&m| m as f64).collect(),
        )?,
    );
    a.push(
        "families",
        Tensor::vector(d.families.iter().map(|&f| f as f64).collect())?,
    );
    Ok(a)
}

pub fn images_from_artifact(a: &ArtifactFile) -> Result<ImageDataset> {
    a.expect_kind("image_dataset")?;
    let params: TextureParams = attr(a, "params")?;
    let imgs = a.get("images")?;
    let (h, w, c) = (params.height, params.width, params.channels);
    let per = h * w * c;
    if imgs.shape().len() != 4 || imgs.shape()[1..] != [h, w, c] {
        return Err(Error::Format(format!(
            "image array shape {:?} disagrees with params",
            imgs.shape()
        )));
    }
    let n = imgs.shape()[0];
    let images = (0..n)
        .map(|i| Image::new(h, w, c, imgs.data()[i * per..(i + 1) * per].to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let m = a.get("masks")?;
    if m.len() != n * h * w {
        return Err(Error::Format(
            "mask array size disagrees with images".into(),
        ));
    }
    let masks = m
        .data()
        .chunks(h * w)
        .map(|c| c.iter().map(|&v| v as u32).collect())
        .collect();
    let families = a
        .get("families")?
        .data()
        .iter()
        .map(|&f| f as usize)
        .collect();
    Ok(ImageDataset {
        images,
        masks,
        families,
        params,
        seed: attr(a, "seed")?,
    })
}

pub fn edit_to_artifact(e: &EditResult) -> Result<ArtifactFile> {
    let mut a =
        ArtifactFile::new("edit").with_attrs(json!({ "seed": e.seed, "steps_used": e.steps_used }));
    a.push("input", Tensor::vector(e.input.clone())?);
    a.push("edit", Tensor::vector(e.edit.clone())?);
    a.push("guidance_norms", Tensor::vector(e.guidance_norms.clone())?);
    Ok(a)
}

pub fn edit_from_artifact(a: &ArtifactFile) -> Result<EditResult> {
    a.expect_kind("edit")?;
    Ok(EditResult {
        input: a.get("input")?.data().to_vec(),
        edit: a.get("edit")?.data().to_vec(),
        seed: attr(a, "seed")?,
        steps_used: attr(a, "steps_used")?,
        guidance_norms: a.get("guidance_norms")?.data().to_vec(),
    })
}

pub fn map_to_artifact(m: &AnomalyMap) -> Result<ArtifactFile> {
    let mut a = ArtifactFile::new("anomaly_map").with_attrs(json!({
        "extractor": m.extractor,
        "segmentation": to_value(&m.segmentation)?,
    }));
    a.push("raw", Tensor::new(vec![m.height, m.width], m.raw.clone())?);
    a.push(
        "refined",
        Tensor::new(vec![m.height, m.width], m.refined.clone())?,
    );
    Ok(a)
}

pub fn map_from_artifact(a: &ArtifactFile) -> Result<AnomalyMap> {
    a.expect_kind("anomaly_map")?;
    let raw = a.get("raw")?;
    let (height, width) = raw.dims2()?;
    Ok(AnomalyMap {
        height,
        width,
        raw: raw.data().to_vec(),
        refined: a.get("refined")?.data().to_vec(),
        extractor: attr(a, "extractor")?,
        segmentation: attr(a, "segmentation")?,
    })
}

pub fn extractor_to_artifact(fx: &FeatureExtractor) -> Result<ArtifactFile> {
    Ok(ArtifactFile::new("feature_extractor").with_attrs(json!({ "extractor": to_value(fx)? })))
}

pub fn extractor_from_artifact(a: &ArtifactFile) -> Result<FeatureExtractor> {
    a.expect_kind("feature_extractor")?;
    attr(a, "extractor")
}
