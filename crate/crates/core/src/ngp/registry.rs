use std::collections::BTreeMap;

use crate::bezier::NCurve;
use crate::error::{Error, Result};

use super::kernel::{Kernel, LinearKernel, NCurveKernel, RbfKernel};

/// Loose bag of parameters a kernel factory may draw from. Factories ignore what they don't need.
#[derive(Debug, Clone, Default)]
pub struct KernelParams {
    pub sigma: Option<f64>,
    pub length_scale: Option<f64>,
    pub sigma_b: Option<f64>,
    pub c: Option<f64>,
    pub curve: Option<NCurve>,
}

pub type KernelFactory = Box<dyn Fn(&KernelParams) -> Result<Box<dyn Kernel>> + Send + Sync>;

/// Kernels selectable by name at runtime.
pub struct KernelRegistry {
    factories: BTreeMap<String, KernelFactory>,
}

impl KernelRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// Registry holding `rbf`, `linear` and `ncurve`.
    ///
    /// Defaults: `rbf` σ=1, l=0.25; `linear` σ=σ_b=c=0.5. `ncurve` requires a curve.
    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register("rbf", |p| {
            Ok(Box::new(RbfKernel::new(
                p.sigma.unwrap_or(1.0),
                p.length_scale.unwrap_or(0.25),
            )?))
        });
        reg.register("linear", |p| {
            Ok(Box::new(LinearKernel::new(
                p.sigma.unwrap_or(0.5),
                p.sigma_b.unwrap_or(0.5),
                p.c.unwrap_or(0.5),
            )?))
        });
        reg.register("ncurve", |p| {
            let curve = p
                .curve
                .clone()
                .ok_or_else(|| Error::InvalidParameter("ncurve kernel needs a curve".into()))?;
            Ok(Box::new(NCurveKernel::new(curve)))
        });
        reg
    }

    /// Adds or replaces the factory registered under `name`.
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&KernelParams) -> Result<Box<dyn Kernel>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn build(&self, name: &str, params: &KernelParams) -> Result<Box<dyn Kernel>> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "kernel",
                name: name.to_string(),
                available: self.names().join(", "),
            })?;
        factory(params)
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }
}

impl Default for KernelRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}
