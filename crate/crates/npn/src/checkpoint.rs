//! Model persistence: a single JSON document holding the architecture,
//! an optional training-config echo, and per-layer flat parameter arrays.
//! Floats in the layer arrays carry 17 significant digits so a load/save
//! cycle reproduces the file byte for byte.

use crate::error::{NpnError, Result};
use crate::expfam::FamilyTag;
use crate::matrix::Matrix;
use crate::network::{LayerParams, NetworkSpec, ParamMatrix, ParamTransform};
use crate::train::TrainConfig;

use serde_json::Value;
use std::fmt::Write as _;
use std::path::Path;

pub const CHECKPOINT_VERSION: i64 = 1;

/// A saved model: spec, optional config echo, proxy parameter values.
#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub spec: NetworkSpec,
    pub config: Option<TrainConfig>,
    pub params: Vec<LayerParams>,
}

impl ModelCheckpoint {
    pub fn new(
        spec: NetworkSpec,
        config: Option<TrainConfig>,
        params: Vec<LayerParams>,
    ) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.layers.len() {
            return Err(NpnError::shape(
                "checkpoint",
                format!(
                    "{} parameter layers for {} spec layers",
                    params.len(),
                    spec.layers.len()
                ),
            ));
        }
        for (i, (lp, ls)) in params.iter().zip(&spec.layers).enumerate() {
            let want = [
                (ls.fan_in, ls.fan_out),
                (ls.fan_in, ls.fan_out),
                (1, ls.fan_out),
                (1, ls.fan_out),
            ];
            for (pm, w) in lp.iter().zip(want) {
                if pm.value.shape() != w {
                    return Err(NpnError::shape(
                        "checkpoint",
                        format!(
                            "layer {i}: parameter shape {:?} does not match spec {w:?}",
                            pm.value.shape()
                        ),
                    ));
                }
            }
        }
        Ok(ModelCheckpoint { spec, config, params })
    }
}

/// Raw-space transforms implied by the weight family; checkpoints store
/// values only and rebuild raws with these on load.
fn slot_transforms(family: FamilyTag) -> [ParamTransform; 4] {
    match family {
        FamilyTag::Gaussian => [
            ParamTransform::Direct,
            ParamTransform::Softplus,
            ParamTransform::Direct,
            ParamTransform::Softplus,
        ],
        _ => [ParamTransform::Softplus; 4],
    }
}

const SLOT_NAMES: [&str; 4] = ["Wc", "Wd", "bc", "bd"];

fn write_array(out: &mut String, vals: &[f64]) {
    out.push('[');
    for (i, v) in vals.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{v:.16e}").expect("string write");
    }
    out.push(']');
}

pub fn checkpoint_to_string(ckpt: &ModelCheckpoint) -> Result<String> {
    for (i, lp) in ckpt.params.iter().enumerate() {
        for (pm, name) in lp.iter().zip(SLOT_NAMES) {
            if !pm.value.data().iter().all(|v| v.is_finite()) {
                return Err(NpnError::Checkpoint(format!(
                    "layer {i}: non-finite value in {name}"
                )));
            }
        }
    }
    let spec_json = serde_json::to_string(&ckpt.spec)?;
    let config_json = match &ckpt.config {
        Some(c) => serde_json::to_string(c)?,
        None => "null".to_string(),
    };
    let mut out = String::new();
    write!(
        out,
        "{{\"version\":{CHECKPOINT_VERSION},\"spec\":{spec_json},\
         \"config\":{config_json},\"optimizer_state\":null,\"layers\":["
    )
    .expect("string write");
    for (i, lp) in ckpt.params.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push('{');
        for (j, (pm, name)) in lp.iter().zip(SLOT_NAMES).enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "\"{name}\":").expect("string write");
            write_array(&mut out, pm.value.data());
        }
        out.push('}');
    }
    out.push_str("]}\n");
    Ok(out)
}

pub fn save_checkpoint(path: &Path, ckpt: &ModelCheckpoint) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(ckpt)?)?;
    Ok(())
}

fn float_array(layer: usize, obj: &serde_json::Map<String, Value>, name: &str) -> Result<Vec<f64>> {
    let arr = obj
        .get(name)
        .and_then(Value::as_array)
        .ok_or_else(|| {
            NpnError::Checkpoint(format!("layer {layer}: missing \"{name}\" array"))
        })?;
    arr.iter()
        .enumerate()
        .map(|(j, v)| {
            v.as_f64().ok_or_else(|| {
                NpnError::Checkpoint(format!("layer {layer}: {name}[{j}] is not a number"))
            })
        })
        .collect()
}

fn check_family(family: FamilyTag, layer: usize, name: &str, spread: bool, vals: &[f64]) -> Result<()> {
    for (j, &v) in vals.iter().enumerate() {
        if !v.is_finite() {
            return Err(NpnError::Checkpoint(format!(
                "layer {layer}: {name}[{j}] is not finite"
            )));
        }
        match family {
            FamilyTag::Gaussian => {
                if spread && v < 0.0 {
                    return Err(NpnError::Checkpoint(format!(
                        "layer {layer}: {name}[{j}] = {v} but variance proxies must be >= 0"
                    )));
                }
            }
            _ => {
                if v <= 0.0 {
                    return Err(NpnError::Checkpoint(format!(
                        "layer {layer}: {name}[{j}] = {v} but gamma proxies must be > 0"
                    )));
                }
            }
        }
    }
    Ok(())
}

pub fn checkpoint_from_str(text: &str, origin: &str) -> Result<ModelCheckpoint> {
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| NpnError::parse(origin, e.to_string()))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| NpnError::Checkpoint("checkpoint root must be an object".into()))?;
    match obj.get("version") {
        None => {
            return Err(NpnError::Checkpoint(
                "missing \"version\" field".into(),
            ))
        }
        Some(v) => match v.as_i64() {
            Some(CHECKPOINT_VERSION) => {}
            Some(other) => {
                return Err(NpnError::Checkpoint(format!(
                    "unsupported version {other} (expected {CHECKPOINT_VERSION})"
                )))
            }
            None => {
                return Err(NpnError::Checkpoint(
                    "\"version\" must be an integer".into(),
                ))
            }
        },
    }
    let spec: NetworkSpec = serde_json::from_value(
        obj.get("spec")
            .cloned()
            .ok_or_else(|| NpnError::Checkpoint("missing \"spec\" object".into()))?,
    )?;
    spec.validate()?;
    let config: Option<TrainConfig> = match obj.get("config") {
        None | Some(Value::Null) => None,
        Some(v) => Some(serde_json::from_value(v.clone())?),
    };
    let layer_vals = obj
        .get("layers")
        .and_then(Value::as_array)
        .ok_or_else(|| NpnError::Checkpoint("missing \"layers\" array".into()))?;
    if layer_vals.len() != spec.layers.len() {
        return Err(NpnError::shape(
            "checkpoint",
            format!(
                "{} layer entries for {} spec layers",
                layer_vals.len(),
                spec.layers.len()
            ),
        ));
    }
    let mut params = Vec::with_capacity(layer_vals.len());
    for (i, (lv, ls)) in layer_vals.iter().zip(&spec.layers).enumerate() {
        let lobj = lv.as_object().ok_or_else(|| {
            NpnError::Checkpoint(format!("layer {i}: entry must be an object"))
        })?;
        let family = ls.weight_family();
        let shapes = [
            (ls.fan_in, ls.fan_out),
            (ls.fan_in, ls.fan_out),
            (1, ls.fan_out),
            (1, ls.fan_out),
        ];
        let transforms = slot_transforms(family);
        let mut slots = Vec::with_capacity(4);
        for (k, name) in SLOT_NAMES.iter().enumerate() {
            let vals = float_array(i, lobj, name)?;
            let (r, c) = shapes[k];
            if vals.len() != r * c {
                return Err(NpnError::shape(
                    "checkpoint",
                    format!(
                        "layer {i}: {name} has {} entries, expected {}",
                        vals.len(),
                        r * c
                    ),
                ));
            }
            check_family(family, i, name, k % 2 == 1, &vals)?;
            slots.push(ParamMatrix::from_value(
                Matrix::from_vec(r, c, vals),
                transforms[k],
            ));
        }
        let b_d = slots.pop().expect("four slots");
        let b_c = slots.pop().expect("four slots");
        let w_d = slots.pop().expect("four slots");
        let w_c = slots.pop().expect("four slots");
        params.push(LayerParams { w_c, w_d, b_c, b_d });
    }
    Ok(ModelCheckpoint { spec, config, params })
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| NpnError::Checkpoint(format!("{}: {e}", path.display())))?;
    checkpoint_from_str(&text, &path.display().to_string())
}
