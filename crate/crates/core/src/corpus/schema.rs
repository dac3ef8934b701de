use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One categorical speaker attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub classes: Vec<String>,
}

impl Attribute {
    pub fn new(name: impl Into<String>, classes: Vec<String>) -> Self {
        Self {
            name: name.into(),
            classes,
        }
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }
}

/// Ordered attribute list. The order fixes similarity-vector component order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub attributes: Vec<Attribute>,
}

pub const DEFAULT_ATTRIBUTES: [&str; 4] = ["gender", "nationality", "age", "profession"];

impl AttributeSchema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        let schema = Self { attributes };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.attributes.is_empty() {
            return Err(Error::Data("schema has no attributes".into()));
        }
        for (i, a) in self.attributes.iter().enumerate() {
            if self.attributes[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::Data(format!("duplicate attribute `{}`", a.name)));
            }
            if a.classes.len() < 2 {
                return Err(Error::Data(format!(
                    "attribute `{}` needs at least 2 classes",
                    a.name
                )));
            }
            for (j, c) in a.classes.iter().enumerate() {
                if a.classes[..j].contains(c) {
                    return Err(Error::Data(format!(
                        "attribute `{}` lists class `{c}` twice",
                        a.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// gender, nationality, age, profession with the given class counts.
    pub fn with_counts(counts: [usize; 4]) -> Result<Self> {
        let attributes = DEFAULT_ATTRIBUTES
            .iter()
            .zip(counts)
            .map(|(&name, k)| {
                let classes = if name == "gender" && k == 2 {
                    vec!["male".to_string(), "female".to_string()]
                } else {
                    (0..k).map(|i| format!("{name}-{i}")).collect()
                };
                Attribute::new(name, classes)
            })
            .collect();
        Self::new(attributes)
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.attributes.iter().map(|a| a.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn attribute(&self, name: &str) -> Result<&Attribute> {
        Ok(&self.attributes[self.index_of(name)?])
    }

    /// Short stable fingerprint of names, classes and order.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("schema serialises");
        let digest = Sha256::digest(&canonical);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_shape() {
        let s = AttributeSchema::with_counts([2, 8, 6, 10]).unwrap();
        assert_eq!(s.names(), DEFAULT_ATTRIBUTES);
        assert_eq!(s.attributes[3].class_count(), 10);
        assert_eq!(s.attributes[0].classes, ["male", "female"]);
        assert_eq!(s.index_of("age").unwrap(), 2);
        assert!(matches!(s.index_of("height"), Err(Error::UnknownAttribute(_))));
    }

    #[test]
    fn rejects_bad_schemas() {
        let dup = vec![
            Attribute::new("a", vec!["x".into(), "y".into()]),
            Attribute::new("a", vec!["x".into(), "y".into()]),
        ];
        assert!(AttributeSchema::new(dup).is_err());
        let single = vec![Attribute::new("a", vec!["x".into()])];
        assert!(AttributeSchema::new(single).is_err());
    }

    #[test]
    fn hash_tracks_order() {
        let a = AttributeSchema::with_counts([2, 3, 4, 5]).unwrap();
        let mut b = a.clone();
        b.attributes.swap(1, 2);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), a.clone().hash());
        assert_eq!(a.hash().len(), 16);
    }
}
