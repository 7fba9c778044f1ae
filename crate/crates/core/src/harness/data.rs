//! The system data file: power and gas sections, coupling section, horizon.
//! Two synthetic systems are bundled: `toy2x2` (one bus, two junctions,
//! two units; small enough for full enumeration) and `mini_ne` (a ten-bus,
//! eight-junction system with a congestible corridor between a cheap
//! production zone and an expensive consumption zone).

use crate::coupling::{validate_links, BidValidityParams, GfppLink, PriceZone};
use crate::gas::{validate_gas, GasSystem};
use crate::power::{has_errors, validate_network, Diagnostic, PowerSystem, Severity};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingSection {
    pub links: Vec<GfppLink>,
    pub zones: Vec<PriceZone>,
    #[serde(default = "default_price_cap")]
    pub price_cap: f64,
}

fn default_price_cap() -> f64 {
    200.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestSystem {
    pub name: String,
    pub horizon: usize,
    pub power: PowerSystem,
    pub gas: GasSystem,
    pub coupling: CouplingSection,
}

impl TestSystem {
    pub fn validity_params(&self) -> BidValidityParams {
        BidValidityParams {
            price_cap: self.coupling.price_cap,
        }
    }
}

#[derive(thiserror::Error, Debug)]
pub enum LoadError {
    #[error("cannot read `{0}`: {1}")]
    Io(String, std::io::Error),
    #[error("cannot parse `{0}`: {1}")]
    Parse(String, serde_json::Error),
    #[error("system `{name}` failed validation:\n{}", messages.join("\n"))]
    Invalid { name: String, messages: Vec<String> },
}

/// All validators over all sections; errors fail, warnings are logged.
pub fn validate_system(system: &TestSystem) -> Vec<Diagnostic> {
    let mut diags = validate_network(&system.power);
    diags.extend(validate_gas(&system.gas));
    diags.extend(validate_links(
        &system.coupling.links,
        &system.power,
        &system.gas,
        &system.coupling.zones,
    ));
    if system.horizon == 0 {
        diags.push(Diagnostic::error("horizon must be at least 1"));
    }
    // one link per generator
    let mut seen = std::collections::BTreeSet::new();
    for l in &system.coupling.links {
        if !seen.insert(&l.generator) {
            diags.push(Diagnostic::error(format!(
                "generator `{}` appears in more than one link",
                l.generator
            )));
        }
    }
    diags
}

/// Parses and validates a system file, failing fast with every diagnostic.
pub fn load_system(path: impl AsRef<Path>) -> Result<TestSystem, LoadError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| LoadError::Io(path.display().to_string(), e))?;
    parse_system(&text, &path.display().to_string())
}

pub fn parse_system(text: &str, origin: &str) -> Result<TestSystem, LoadError> {
    let system: TestSystem =
        serde_json::from_str(text).map_err(|e| LoadError::Parse(origin.to_string(), e))?;
    let diags = validate_system(&system);
    for d in &diags {
        if d.severity == Severity::Warning {
            log::warn!("{}: {}", system.name, d.message);
        }
    }
    if has_errors(&diags) {
        return Err(LoadError::Invalid {
            name: system.name.clone(),
            messages: diags
                .into_iter()
                .filter(|d| d.severity == Severity::Error)
                .map(|d| d.message)
                .collect(),
        });
    }
    Ok(system)
}

/// Uniform stress scaling: bus loads by `eta_p`, junction demands by
/// `eta_g`; nothing else is touched.
pub fn scale_loads(system: &TestSystem, eta_p: f64, eta_g: f64) -> TestSystem {
    assert!(eta_p > 0.0 && eta_g > 0.0, "stress multipliers must be positive");
    let mut scaled = system.clone();
    for bus in &mut scaled.power.buses {
        for d in &mut bus.load {
            *d *= eta_p;
        }
    }
    for junction in &mut scaled.gas.junctions {
        for d in &mut junction.demand {
            *d *= eta_g;
        }
    }
    scaled
}

/// Bundled single-bus, two-junction system (full enumeration fits).
pub fn toy2x2() -> TestSystem {
    parse_system(include_str!("../../data/toy2x2.json"), "bundled toy2x2")
        .expect("bundled toy2x2 is valid")
}

/// Bundled ten-bus, eight-junction system with a congestible corridor into
/// the expensive pricing zone.
pub fn mini_ne() -> TestSystem {
    parse_system(include_str!("../../data/mini_ne.json"), "bundled mini_ne")
        .expect("bundled mini_ne is valid")
}
