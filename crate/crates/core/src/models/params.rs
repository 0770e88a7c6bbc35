use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named parameter tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.entries.iter().map(|(_, t)| t.clone()).collect()
    }

    /// Replaces every tensor, keeping names and order. Shapes must match.
    pub fn set_all(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.entries.len() {
            return Err(Error::invalid("parameter count mismatch"));
        }
        for ((name, old), new) in self.entries.iter_mut().zip(values) {
            if old.shape() != new.shape() {
                return Err(Error::invalid(format!(
                    "parameter `{name}`: shape {:?} replaced by {:?}",
                    old.shape(),
                    new.shape()
                )));
            }
            *old = new;
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(&Tensor) -> Tensor) -> ParamSet {
        ParamSet {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), f(t))).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_order_is_insertion() {
        let mut p = ParamSet::default();
        p.insert("b", Tensor::scalar(1.0)).unwrap();
        p.insert("a", Tensor::scalar(2.0)).unwrap();
        assert!(p.insert("a", Tensor::scalar(3.0)).is_err());
        let names: Vec<_> = p.iter().map(|(n, _)| n.to_string()).collect();
        assert_eq!(names, ["b", "a"]);
    }
}
