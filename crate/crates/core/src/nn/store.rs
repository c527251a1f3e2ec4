use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Named trainable arrays with matching gradient accumulators.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], value: Vec<f64>) -> Result<()> {
        let n: usize = shape.iter().product();
        if value.len() != n {
            return Err(Error::dim(name, n, value.len()));
        }
        if self.params.contains_key(name) {
            return Err(Error::invalid(
                "parameter name",
                format!("{name} is already registered"),
            ));
        }
        self.params.insert(
            name.to_string(),
            Param {
                shape: shape.to_vec(),
                grad: vec![0.0; n],
                value,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| Error::invalid("parameter name", format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::invalid("parameter name", format!("unknown parameter {name}")))
    }

    /// Panicking lookup for names a layer registered itself.
    pub(crate) fn p(&self, name: &str) -> &Param {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("layer parameter {name} missing from store"))
    }

    pub(crate) fn p_mut(&mut self, name: &str) -> &mut Param {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("layer parameter {name} missing from store"))
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Copies values from `other` for every name both stores share with equal shapes.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for (name, p) in &mut self.params {
            let src = other.get(name)?;
            if src.shape != p.shape {
                return Err(Error::invalid(
                    "parameter shape",
                    format!("{name} differs from the stored shape"),
                ));
            }
            p.value.copy_from_slice(&src.value);
        }
        Ok(())
    }
}
