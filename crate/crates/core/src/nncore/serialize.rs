//! Versioned JSON container for trained model parameters.
//!
//! Layout: `{"format": "persona-reply-model/1", "kind": ..., "shapes": [...],
//! "data": [floats...], "meta": {...}}` where `shapes` lists named tensors in
//! the order their entries appear in `data`, and `meta` carries kind-specific
//! payload such as the vocabulary. Floats are written in shortest round-trip
//! form, so serialize → deserialize → serialize is byte-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::NnError;

pub const MODEL_FORMAT: &str = "persona-reply-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub kind: String,
    pub shapes: Vec<TensorShape>,
    pub data: Vec<f64>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl ModelFile {
    pub fn new(kind: &str) -> Self {
        ModelFile {
            format: MODEL_FORMAT.to_string(),
            kind: kind.to_string(),
            shapes: Vec::new(),
            data: Vec::new(),
            meta: serde_json::Value::Null,
        }
    }

    pub fn push_tensor(&mut self, name: &str, dims: Vec<usize>, values: &[f64]) {
        debug_assert_eq!(dims.iter().product::<usize>(), values.len());
        self.shapes.push(TensorShape {
            name: name.to_string(),
            dims,
        });
        self.data.extend_from_slice(values);
    }

    pub fn push_matrix(&mut self, name: &str, m: &Matrix) {
        self.push_tensor(name, vec![m.rows(), m.cols()], m.data());
    }

    /// Locate a tensor by name; returns its dims and data slice.
    pub fn tensor(&self, name: &str) -> Result<(&[usize], &[f64]), NnError> {
        let mut offset = 0usize;
        for shape in &self.shapes {
            let len: usize = shape.dims.iter().product();
            if shape.name == name {
                let slice = self
                    .data
                    .get(offset..offset + len)
                    .ok_or_else(|| NnError::Model(format!("tensor {name} truncated")))?;
                return Ok((&shape.dims, slice));
            }
            offset += len;
        }
        Err(NnError::Model(format!("tensor {name} not found")))
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix, NnError> {
        let (dims, data) = self.tensor(name)?;
        if dims.len() != 2 {
            return Err(NnError::Model(format!(
                "tensor {name} has {} dims, expected 2",
                dims.len()
            )));
        }
        Matrix::from_vec(dims[0], dims[1], data.to_vec())
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>, NnError> {
        let (dims, data) = self.tensor(name)?;
        if dims.len() != 1 {
            return Err(NnError::Model(format!(
                "tensor {name} has {} dims, expected 1",
                dims.len()
            )));
        }
        Ok(data.to_vec())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, NnError> {
        let file: ModelFile =
            serde_json::from_str(s).map_err(|e| NnError::Model(format!("bad model JSON: {e}")))?;
        if file.format != MODEL_FORMAT {
            return Err(NnError::Model(format!(
                "unsupported model format {:?}, expected {MODEL_FORMAT:?}",
                file.format
            )));
        }
        let declared: usize = file
            .shapes
            .iter()
            .map(|s| s.dims.iter().product::<usize>())
            .sum();
        if declared != file.data.len() {
            return Err(NnError::Model(format!(
                "shapes declare {declared} entries but data holds {}",
                file.data.len()
            )));
        }
        if !file.data.iter().all(|v| v.is_finite()) {
            return Err(NnError::Model("model data contains non-finite values".into()));
        }
        Ok(file)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), NnError> {
        if self.kind != kind {
            return Err(NnError::Model(format!(
                "model kind {:?} where {kind:?} was expected",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        fs::write(path, self.to_json())
            .map_err(|e| NnError::Model(format!("write {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let text = fs::read_to_string(path)
            .map_err(|e| NnError::Model(format!("read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelFile {
        let mut f = ModelFile::new("triage");
        f.push_tensor("weights", vec![3], &[0.1, -2.5e-17, 3.0]);
        f.push_matrix(
            "w",
            &Matrix::from_vec(2, 2, vec![1.0, 0.5, -0.25, 1e300]).unwrap(),
        );
        f.meta = serde_json::json!({"lambda": 0.1});
        f
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let f = sample();
        let once = f.to_json();
        let twice = ModelFile::from_json(&once).unwrap().to_json();
        assert_eq!(once, twice);
    }

    #[test]
    fn tensors_are_recovered_by_name() {
        let f = sample();
        let back = ModelFile::from_json(&f.to_json()).unwrap();
        assert_eq!(back.vector("weights").unwrap(), vec![0.1, -2.5e-17, 3.0]);
        let m = back.matrix("w").unwrap();
        assert_eq!(m.get(1, 1), 1e300);
        assert!(back.tensor("missing").is_err());
    }

    #[test]
    fn validation_rejects_bad_files() {
        assert!(ModelFile::from_json("{}").is_err());
        let mut f = sample();
        f.format = "other/9".into();
        assert!(ModelFile::from_json(&f.to_json()).is_err());

        // declared shapes inconsistent with data length
        let truncated = r#"{"format":"persona-reply-model/1","kind":"x","shapes":[{"name":"a","dims":[3]}],"data":[1.0],"meta":null}"#;
        assert!(ModelFile::from_json(truncated).is_err());
    }

    #[test]
    fn kind_check() {
        let f = sample();
        assert!(f.expect_kind("triage").is_ok());
        assert!(f.expect_kind("seq2seq").is_err());
    }
}
