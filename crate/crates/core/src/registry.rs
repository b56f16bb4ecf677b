//! Name-keyed registries of interchangeable strategies.
//!
//! Lag-window kernels, coefficient thresholding rules, spectral band
//! aggregation rules and bootstrap MA estimators are all selected at runtime
//! by a [`StrategySpec`] (a name plus numeric parameters) that is resolved
//! against the matching registry.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numeric parameters passed to a strategy constructor.
pub type Params = BTreeMap<String, f64>;

type Factory<T> = Box<dyn Fn(&Params) -> Result<Box<T>> + Send + Sync>;

/// A strategy selection as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: Params,
}

impl StrategySpec {
    pub fn named(name: &str) -> Self {
        StrategySpec {
            name: name.to_string(),
            params: Params::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)?;
        for (k, v) in &self.params {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    factories: BTreeMap<String, Factory<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            factories: BTreeMap::new(),
        }
    }

    /// Register a constructor under `name`, replacing any previous entry.
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&Params) -> Result<Box<T>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn build(&self, spec: &StrategySpec) -> Result<Box<T>> {
        match self.factories.get(&spec.name) {
            Some(factory) => factory(&spec.params),
            None => Err(Error::UnknownStrategy {
                kind: self.kind,
                name: spec.name.clone(),
                available: self.names().join(", "),
            }),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }
}

/// Fetch an optional parameter, rejecting keys the strategy does not know.
pub(crate) fn param(params: &Params, key: &str, default: f64, allowed: &[&str]) -> Result<f64> {
    if let Some(unknown) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(Error::InvalidParameter(format!(
            "unknown strategy parameter '{unknown}' (expected one of: {})",
            allowed.join(", ")
        )));
    }
    Ok(params.get(key).copied().unwrap_or(default))
}

pub(crate) fn no_params(params: &Params) -> Result<()> {
    match params.keys().next() {
        Some(k) => Err(Error::InvalidParameter(format!(
            "strategy takes no parameters, got '{k}'"
        ))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Shape: Send + Sync {
        fn area(&self) -> f64;
    }
    struct Square(f64);
    impl Shape for Square {
        fn area(&self) -> f64 {
            self.0 * self.0
        }
    }

    #[test]
    fn build_by_name_with_params() {
        let mut reg: Registry<dyn Shape> = Registry::new("shape");
        reg.register("square", |p| {
            Ok(Box::new(Square(param(p, "side", 1.0, &["side"])?)))
        });
        let s = reg
            .build(&StrategySpec::named("square").with("side", 3.0))
            .unwrap();
        assert_eq!(s.area(), 9.0);
        assert_eq!(
            reg.build(&StrategySpec::named("square")).unwrap().area(),
            1.0
        );
    }

    #[test]
    fn unknown_name_lists_alternatives() {
        let mut reg: Registry<dyn Shape> = Registry::new("shape");
        reg.register("square", |_| Ok(Box::new(Square(1.0))));
        let err = reg.build(&StrategySpec::named("circle")).err().unwrap();
        assert!(err.to_string().contains("square"));
    }

    #[test]
    fn unknown_param_rejected() {
        let mut reg: Registry<dyn Shape> = Registry::new("shape");
        reg.register("square", |p| {
            Ok(Box::new(Square(param(p, "side", 1.0, &["side"])?)))
        });
        assert!(reg
            .build(&StrategySpec::named("square").with("radius", 2.0))
            .is_err());
    }
}
