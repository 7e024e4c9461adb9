//! Run configuration: sectioned `key = value` text (TOML syntax).

use std::path::PathBuf;

use hypflow::flow::{DtPolicy, FlowConfig, Parametrization, StopRule};
use hypflow::Resolution;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub flow: FlowSection,
    pub grid: GridSection,
    pub time: TimeSection,
    pub initial: InitialSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub n: usize,
    pub alpha: f64,
    pub parametrization: String,
    pub volume_correction: bool,
    pub filter_degree: Option<usize>,
    pub recenter_threshold: f64,
}

impl Default for FlowSection {
    fn default() -> Self {
        FlowSection {
            n: 2,
            alpha: 1.0,
            parametrization: "radial".into(),
            volume_correction: true,
            filter_degree: None,
            recenter_threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// `"64x128"` on S², `"256"` on S¹; defaults per dimension.
    pub resolution: Option<String>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub t_end: Option<f64>,
    pub osc_tol: Option<f64>,
    pub safety: f64,
    pub max_step: f64,
    pub initial_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for TimeSection {
    fn default() -> Self {
        let dt = DtPolicy::default();
        let stop = StopRule::default();
        TimeSection {
            t_end: None,
            osc_tol: None,
            safety: dt.safety,
            max_step: dt.max_step,
            initial_step: dt.initial,
            max_steps: stop.max_steps,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    /// `ball`, `harmonic`, `random` or `file`.
    pub shape: String,
    pub rho0: f64,
    pub amplitude: f64,
    pub degree: usize,
    pub order: i64,
    /// Amplitude cap for `random`.
    pub cap: f64,
    /// Snapshot CSV for `file`, relative to the config file.
    pub file: Option<PathBuf>,
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection {
            shape: "ball".into(),
            rho0: 1.0,
            amplitude: 0.1,
            degree: 2,
            order: 0,
            cap: 0.1,
            file: None,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Write the evolved field every k-th accepted step (0 disables).
    pub snapshot_every: usize,
}

/// 1-based line of `key` inside `[section]`, if present.
pub fn line_of(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
        } else if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

impl SimConfig {
    /// Parses config text; syntax errors and unknown keys are reported with line numbers.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string().trim_end().to_string()))?;
        cfg.check(text)?;
        Ok(cfg)
    }

    fn check(&self, text: &str) -> Result<(), CliError> {
        let fail = |section: &str, key: &str, msg: String| {
            let at = line_of(text, section, key)
                .map(|l| format!("line {l}: "))
                .unwrap_or_default();
            Err(CliError::config(format!("{at}[{section}] {key}: {msg}")))
        };
        if self.flow.n != 1 && self.flow.n != 2 {
            return fail("flow", "n", format!("must be 1 or 2, got {}", self.flow.n));
        }
        if !(self.flow.alpha > 0.0) {
            return fail("flow", "alpha", format!("must be positive, got {}", self.flow.alpha));
        }
        if let Err(e) = self.flow.parametrization.parse::<Parametrization>() {
            return fail("flow", "parametrization", e.to_string());
        }
        if let Some(r) = &self.grid.resolution {
            match Resolution::parse(r) {
                Ok(res) if res.dim() == self.flow.n => {}
                Ok(res) => return fail("grid", "resolution", format!("{res} does not match n = {}", self.flow.n)),
                Err(e) => return fail("grid", "resolution", e.to_string()),
            }
        }
        if !(self.time.safety > 0.0 && self.time.safety <= 1.0) {
            return fail("time", "safety", format!("must lie in (0, 1], got {}", self.time.safety));
        }
        if !(self.time.max_step > 0.0) {
            return fail("time", "max_step", format!("must be positive, got {}", self.time.max_step));
        }
        if let Some(t) = self.time.t_end {
            if !(t >= 0.0) {
                return fail("time", "t_end", format!("must be non-negative, got {t}"));
            }
        }
        if let Some(t) = self.time.osc_tol {
            if !(t > 0.0) {
                return fail("time", "osc_tol", format!("must be positive, got {t}"));
            }
        }
        match self.initial.shape.as_str() {
            "ball" | "harmonic" | "random" => {}
            "file" if self.initial.file.is_some() => {}
            "file" => return fail("initial", "shape", "`file` needs [initial] file".into()),
            other => {
                return fail(
                    "initial",
                    "shape",
                    format!("unknown shape `{other}` (expected ball, harmonic, random or file)"),
                )
            }
        }
        if !(self.initial.rho0 > 0.0) {
            return fail("initial", "rho0", format!("must be positive, got {}", self.initial.rho0));
        }
        if self.initial.shape == "harmonic" && self.initial.order.unsigned_abs() as usize > self.initial.degree {
            return fail("initial", "order", format!("|order| must not exceed degree {}", self.initial.degree));
        }
        if !(0.0..1.0).contains(&self.initial.cap) {
            return fail("initial", "cap", format!("must lie in [0, 1), got {}", self.initial.cap));
        }
        Ok(())
    }

    /// Grid resolution, with `over` taking precedence over the file.
    pub fn resolution(&self, over: Option<Resolution>) -> Result<Resolution, CliError> {
        let res = match (over, &self.grid.resolution) {
            (Some(r), _) => r,
            (None, Some(text)) => Resolution::parse(text)?,
            (None, None) => Resolution::default_for(self.flow.n)?,
        };
        if res.dim() != self.flow.n {
            return Err(CliError::config(format!("resolution {res} does not match n = {}", self.flow.n)));
        }
        Ok(res)
    }

    pub fn flow_config(&self, resolution: Resolution) -> Result<FlowConfig, CliError> {
        let mut cfg = FlowConfig::new(self.flow.n, self.flow.alpha)?;
        cfg.parametrization = self.flow.parametrization.parse()?;
        cfg.volume_correction = self.flow.volume_correction;
        cfg.filter_degree = self.flow.filter_degree;
        cfg.recenter_threshold = self.flow.recenter_threshold;
        cfg.resolution = resolution;
        cfg.dt = DtPolicy {
            initial: self.time.initial_step,
            safety: self.time.safety,
            max_step: self.time.max_step,
        };
        cfg.stop = StopRule {
            t_end: match (self.time.t_end, self.time.osc_tol) {
                (None, None) => StopRule::default().t_end,
                (t, _) => t,
            },
            osc_tol: self.time.osc_tol,
            max_steps: self.time.max_steps,
        };
        cfg.snapshot_every = self.output.snapshot_every;
        cfg.validate()?;
        Ok(cfg)
    }
}
