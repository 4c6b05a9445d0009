//! JSON helpers and model checkpoints.
//!
//! Floats written to result JSON go through [`F17`], which emits 17
//! significant digits (`{:.16e}`) so every `f64` survives a round trip.
//! Checkpoints store parameters as the hex form of their IEEE-754 bits.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::model::{MlpSpec, ModelState, TaskId};
use crate::numcore::{Layout, ParamVector};

/// `f64` that serializes with 17 significant digits; non-finite becomes `null`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F17(pub f64);

impl Serialize for F17 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            let raw = RawValue::from_string(format!("{:.16e}", self.0)).map_err(serde::ser::Error::custom)?;
            raw.serialize(s)
        } else {
            s.serialize_none()
        }
    }
}

impl<'de> Deserialize<'de> for F17 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(F17(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN)))
    }
}

/// `#[serde(with = "f17")]` for plain `f64` fields.
pub mod f17 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        F17(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(F17::deserialize(d)?.0)
    }
}

pub mod f17_opt {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        v.map(F17).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
        Option::<f64>::deserialize(d)
    }
}

pub mod f17_vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|&x| F17(x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
        Ok(Vec::<F17>::deserialize(d)?.into_iter().map(|f| f.0).collect())
    }
}

pub mod f17_opt_vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[Option<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.map(F17)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Option<f64>>, D::Error> {
        Vec::<Option<f64>>::deserialize(d)
    }
}

pub mod f17_nested {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[Vec<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|row| row.iter().map(|&x| F17(x)).collect::<Vec<_>>()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Vec<f64>>, D::Error> {
        Ok(Vec::<Vec<F17>>::deserialize(d)?.into_iter().map(|r| r.into_iter().map(|f| f.0).collect()).collect())
    }
}

/// Decimal text for CSV output, same precision as JSON.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, to_json_string(value)?).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Serialized model: spec, layout and bit-exact parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: MlpSpec,
    /// Task whose training produced these parameters, if any.
    #[serde(default)]
    pub task: Option<TaskId>,
    pub layout: Layout,
    /// IEEE-754 bit patterns as 16 hex digits.
    pub params: Vec<String>,
}

impl Checkpoint {
    pub fn from_model(model: &ModelState, task: Option<TaskId>) -> Self {
        Self {
            spec: model.spec().clone(),
            task,
            layout: model.params().layout().clone(),
            params: model.params().values.iter().map(|v| format!("{:016x}", v.to_bits())).collect(),
        }
    }

    pub fn to_model(&self) -> Result<ModelState> {
        let values = self
            .params
            .iter()
            .enumerate()
            .map(|(i, h)| {
                u64::from_str_radix(h, 16)
                    .map(f64::from_bits)
                    .map_err(|_| Error::Layout(format!("parameter {i}: `{h}` is not a 64-bit hex value")))
            })
            .collect::<Result<Vec<_>>>()?;
        let params = ParamVector::new(values, Arc::new(self.layout.clone()))?;
        ModelState::from_params(self.spec.clone(), params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, HeadSpec, InitScheme};
    use crate::numcore::RngStream;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Rec {
        #[serde(with = "f17")]
        x: f64,
        #[serde(with = "f17_vec")]
        xs: Vec<f64>,
    }

    #[test]
    fn seventeen_digits_round_trip() {
        let r = Rec { x: 0.1 + 0.2, xs: vec![1.0, -2.5e-300, std::f64::consts::PI] };
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("3.0000000000000004e-1"), "{s}");
        let back: Rec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
        assert_eq!(serde_json::to_string(&F17(f64::NAN)).unwrap(), "null");
    }

    #[test]
    fn checkpoint_is_bit_exact() {
        let spec = MlpSpec {
            input_dim: 3,
            hidden_dims: vec![4],
            activation: Activation::Tanh,
            heads: vec![HeadSpec { task: 2, classes: 2 }],
        };
        let m = ModelState::init(spec, &mut RngStream::new(5), InitScheme::UniformGlorot).unwrap();
        let ck = Checkpoint::from_model(&m, Some(2));
        let text = to_json_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_model().unwrap(), m);
    }
}
