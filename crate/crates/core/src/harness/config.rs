use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    L96i,
    Ml96,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Ensrf,
    Etkf,
    LensrfHml,
    LensrfHmlObs,
    LetkfHml,
    LetkfAksoy,
    #[serde(rename = "l2ensrf_hml")]
    L2ensrfHml,
}

/// Estimated surrogate coefficient blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    /// monomial coefficients
    #[serde(rename = "a")]
    A,
    /// per-site forcing on a ring
    #[serde(rename = "f")]
    F,
    /// vertical forcing profile of a stack
    #[serde(rename = "f_v")]
    FV,
    /// horizontal forcing profile of a stack
    #[serde(rename = "f_h")]
    FH,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsKind {
    Identity,
    Kernels,
}

/// Twin-experiment configuration. Model-dependent settings left unset take
/// their model default (see the `resolved_*` accessors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub filter: FilterKind,
    /// Blocks estimated as global parameters, in storage order.
    pub global: Vec<Block>,
    /// Blocks estimated as local parameters, in storage order.
    pub local: Vec<Block>,
    pub n_x: usize,
    pub n_v: usize,
    pub n_h: usize,
    pub stencil: usize,
    pub n_e: usize,
    pub cycles: usize,
    pub spinup: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub dt: f64,
    /// Model steps between analyses.
    pub obs_interval: usize,
    /// Localisation radius of the one-dimensional filters.
    pub r: f64,
    pub r_h: f64,
    pub r_v: f64,
    pub lambda: f64,
    pub zeta_p: f64,
    pub zeta_q: f64,
    pub obs: Option<ObsKind>,
    pub obs_std: f64,
    pub channels: usize,
    pub kernel_half_width: f64,
    pub calibration_steps: usize,
    pub state_std: Option<f64>,
    pub std_a: Option<f64>,
    pub std_f: Option<f64>,
    pub std_f_v: Option<f64>,
    pub std_f_h: Option<f64>,
    /// Free-run steps bringing the truth onto the attractor.
    pub truth_spinup: usize,
    /// Steps used for the climatological spread in the divergence test.
    pub climatology_steps: usize,
    pub divergence_factor: f64,
    pub divergence_window: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::L96i,
            filter: FilterKind::LetkfHml,
            global: vec![],
            local: vec![],
            n_x: 40,
            n_v: 32,
            n_h: 40,
            stencil: 2,
            n_e: 30,
            cycles: 4000,
            spinup: 2000,
            repetitions: 1,
            seed: 1,
            dt: 0.05,
            obs_interval: 1,
            r: 10.0,
            r_h: 5.0,
            r_v: 3.0,
            lambda: 1.02,
            zeta_p: 1.0,
            zeta_q: 1.0,
            obs: None,
            obs_std: 1.0,
            channels: 8,
            kernel_half_width: 10.0,
            calibration_steps: 10_000,
            state_std: None,
            std_a: None,
            std_f: None,
            std_f_v: None,
            std_f_h: None,
            truth_spinup: 2000,
            climatology_steps: 2000,
            divergence_factor: 10.0,
            divergence_window: 50,
        }
    }
}

fn parse_scalar(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.into())),
        Err(_) => toml::Value::String(value.into()),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration is always serialisable")
    }

    /// Sets one key from its textual value, e.g. `("n_e", "24")` or
    /// `("global", "[\"a\"]")`. Bare words are read as strings. The key
    /// `zeta` sets both tapering coefficients.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "zeta" {
            self.set("zeta_p", value)?;
            return self.set("zeta_q", value);
        }
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut v = parse_scalar(value);
        // floats written without a decimal point
        if let (Some(toml::Value::Float(_)), toml::Value::Integer(i)) = (table.get(key), &v) {
            v = toml::Value::Float(*i as f64);
        }
        let optional_float = matches!(
            key,
            "state_std" | "std_a" | "std_f" | "std_f_v" | "std_f_h"
        );
        if optional_float {
            if let toml::Value::Integer(i) = v {
                v = toml::Value::Float(i as f64);
            }
        }
        let known = toml::Table::try_from(Self::default()).map_err(|e| Error::Config(e.to_string()))?;
        if !known.contains_key(key) && !optional_float && key != "obs" {
            return Err(Error::Config(format!("unknown configuration key `{key}`")));
        }
        table.insert(key.to_string(), v);
        *self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key} = {value}: {e}")))?;
        Ok(())
    }

    pub fn resolved_obs(&self) -> ObsKind {
        self.obs.unwrap_or(match self.model {
            ModelKind::L96i => ObsKind::Identity,
            ModelKind::Ml96 => ObsKind::Kernels,
        })
    }

    pub fn resolved_state_std(&self) -> f64 {
        self.state_std.unwrap_or(match self.model {
            ModelKind::L96i => 1.0,
            ModelKind::Ml96 => 0.5,
        })
    }

    pub fn block_std(&self, b: Block) -> f64 {
        let (given, default) = match b {
            Block::A => (self.std_a, if self.model == ModelKind::L96i { 0.2 } else { 0.1 }),
            Block::F => (self.std_f, 0.2),
            Block::FV => (self.std_f_v, 0.012),
            Block::FH => (self.std_f_h, 0.17),
        };
        given.unwrap_or(default)
    }

    pub fn state_dim(&self) -> usize {
        match self.model {
            ModelKind::L96i => self.n_x,
            ModelKind::Ml96 => self.n_v * self.n_h,
        }
    }

    pub fn block_len(&self, b: Block) -> usize {
        match b {
            Block::A => crate::dynamics::SurrogateParams::monomial_count(self.stencil),
            Block::F => self.n_x,
            Block::FV => self.n_v - 1,
            Block::FH => self.n_h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_e < 2 {
            return bad(format!("ensemble size must be at least 2, got {}", self.n_e));
        }
        if self.cycles > 0 && self.spinup >= self.cycles {
            return bad(format!("spin-up ({}) must be shorter than the run ({})", self.spinup, self.cycles));
        }
        if self.repetitions == 0 || self.obs_interval == 0 {
            return bad("repetitions and obs_interval must be positive".into());
        }
        if !(self.lambda >= 1.0) {
            return bad(format!("inflation must be at least 1, got {}", self.lambda));
        }
        for (name, r) in [("r", self.r), ("r_h", self.r_h), ("r_v", self.r_v)] {
            if !(r > 0.0) {
                return bad(format!("radius {name} must be positive, got {r}"));
            }
        }
        if !(self.dt > 0.0) || !(self.obs_std > 0.0) {
            return bad("dt and obs_std must be positive".into());
        }
        if !(self.zeta_p >= 0.0) || !(self.zeta_q >= 0.0) {
            return bad("tapering coefficients must be non-negative".into());
        }
        if self.stencil < 2 {
            return bad("the surrogate stencil must be at least 2".into());
        }
        let mut seen = Vec::new();
        for b in self.global.iter().chain(&self.local) {
            if seen.contains(b) {
                return bad(format!("block {b:?} estimated twice"));
            }
            seen.push(*b);
            let ok = match (self.model, b) {
                (_, Block::A) => true,
                (ModelKind::L96i, Block::F) => true,
                (ModelKind::Ml96, Block::FV | Block::FH) => true,
                _ => false,
            };
            if !ok {
                return bad(format!("block {b:?} does not exist for {:?}", self.model));
            }
        }
        if self.local.iter().any(|b| matches!(b, Block::A | Block::FV)) {
            return bad("monomial and vertical forcing coefficients are global".into());
        }
        if self.model == ModelKind::Ml96 {
            if self.n_v < 2 || self.n_h < 5 {
                return bad("a stack needs at least 2 layers of 5 sites".into());
            }
            if matches!(self.filter, FilterKind::LensrfHml) {
                return bad("lensrf_hml works on a single ring; use l2ensrf_hml".into());
            }
        } else if self.n_x < 5 {
            return bad("a ring needs at least 5 sites".into());
        }
        let local_obs_needed = matches!(
            self.filter,
            FilterKind::LensrfHmlObs | FilterKind::LetkfHml | FilterKind::LetkfAksoy
        );
        if local_obs_needed && self.resolved_obs() != ObsKind::Identity {
            return bad(format!("{:?} needs identity observations", self.filter));
        }
        if local_obs_needed && self.model == ModelKind::Ml96 {
            return bad(format!("{:?} works on a single ring", self.filter));
        }
        if self.resolved_obs() == ObsKind::Kernels && self.model != ModelKind::Ml96 {
            return bad("kernel observations need the layered model".into());
        }
        if self.divergence_window == 0 || !(self.divergence_factor > 0.0) {
            return bad("divergence rule must have a positive window and factor".into());
        }
        Ok(())
    }
}
