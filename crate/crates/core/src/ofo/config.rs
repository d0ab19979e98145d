//! Controller configuration and its `key = value` file format.

use std::fmt;
use std::str::FromStr;

use super::OfoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelMode {
    /// Sensitivity frozen at the maximum-wind anchor, proxy loss gradient.
    Approximate,
    /// Sensitivity and loss gradient recomputed at every step.
    Perfect,
}

impl ModelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelMode::Approximate => "approximate",
            ModelMode::Perfect => "perfect",
        }
    }
}

impl FromStr for ModelMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "approximate" | "approx" => Ok(ModelMode::Approximate),
            "perfect" => Ok(ModelMode::Perfect),
            _ => Err(format!("unknown mode '{s}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub g_q: f64,
    pub g_p: f64,
    pub g_tap: f64,
    pub w_q: f64,
    /// Loss derivative per tap step; estimated at the anchor when absent.
    pub w_tap: Option<Vec<f64>>,
    /// Symmetric per-step bounds on `w` for each input block.
    pub rate_q: Option<f64>,
    pub rate_p: Option<f64>,
    pub rate_tap: Option<f64>,
    pub slack_weight: f64,
    /// Seconds per control step.
    pub sampling_period: f64,
    pub mode: ModelMode,
    pub node_limit: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            g_q: 0.1,
            g_p: 0.2,
            g_tap: 2500.0,
            w_q: 0.0026,
            w_tap: None,
            rate_q: None,
            rate_p: None,
            rate_tap: None,
            slack_weight: 1e4,
            sampling_period: 1.0,
            mode: ModelMode::Approximate,
            node_limit: 100_000,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), OfoError> {
        let positive = [
            ("g_q", self.g_q),
            ("g_p", self.g_p),
            ("g_tap", self.g_tap),
            ("slack_weight", self.slack_weight),
            ("sampling_period", self.sampling_period),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(OfoError::Config(format!("{k} must be positive, got {v}")));
            }
        }
        if !(self.w_q >= 0.0 && self.w_q.is_finite()) {
            return Err(OfoError::Config(format!("w_q must be non-negative, got {}", self.w_q)));
        }
        for (k, v) in [("rate_q", self.rate_q), ("rate_p", self.rate_p), ("rate_tap", self.rate_tap)] {
            if let Some(v) = v {
                if !(v >= 0.0) {
                    return Err(OfoError::Config(format!("{k} must be non-negative, got {v}")));
                }
            }
        }
        if self.node_limit == 0 {
            return Err(OfoError::Config("node_limit must be positive".into()));
        }
        Ok(())
    }

    /// Apply `key = value` overrides. `#` starts a comment.
    pub fn apply_overrides(&mut self, text: &str) -> Result<(), OfoError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| OfoError::Config(format!("line {}: {m}", i + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("bad number '{v}' for {key}")));
            let opt = |v: &str| -> Result<Option<f64>, OfoError> {
                if v == "none" {
                    Ok(None)
                } else {
                    num(v).map(Some)
                }
            };
            match key {
                "g_q" => self.g_q = num(value)?,
                "g_p" => self.g_p = num(value)?,
                "g_tap" => self.g_tap = num(value)?,
                "w_q" => self.w_q = num(value)?,
                "w_tap" => {
                    self.w_tap = if value == "auto" {
                        None
                    } else {
                        Some(value.split(',').map(|v| num(v.trim())).collect::<Result<_, _>>()?)
                    }
                }
                "rate_q" => self.rate_q = opt(value)?,
                "rate_p" => self.rate_p = opt(value)?,
                "rate_tap" => self.rate_tap = opt(value)?,
                "slack_weight" => self.slack_weight = num(value)?,
                "sampling_period" => self.sampling_period = num(value)?,
                "mode" => self.mode = value.parse().map_err(err)?,
                "node_limit" => {
                    self.node_limit = value
                        .parse()
                        .map_err(|_| err(format!("bad integer '{value}' for node_limit")))?
                }
                _ => return Err(err(format!("unknown key '{key}'"))),
            }
        }
        self.validate()
    }

    pub fn from_text(text: &str) -> Result<ControllerConfig, OfoError> {
        let mut cfg = ControllerConfig::default();
        cfg.apply_overrides(text)?;
        Ok(cfg)
    }
}

/// Round-trips through [`ControllerConfig::from_text`].
impl fmt::Display for ControllerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
        writeln!(f, "g_q = {}", self.g_q)?;
        writeln!(f, "g_p = {}", self.g_p)?;
        writeln!(f, "g_tap = {}", self.g_tap)?;
        writeln!(f, "w_q = {}", self.w_q)?;
        match &self.w_tap {
            None => writeln!(f, "w_tap = auto")?,
            Some(v) => writeln!(
                f,
                "w_tap = {}",
                v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
            )?,
        }
        writeln!(f, "rate_q = {}", opt(self.rate_q))?;
        writeln!(f, "rate_p = {}", opt(self.rate_p))?;
        writeln!(f, "rate_tap = {}", opt(self.rate_tap))?;
        writeln!(f, "slack_weight = {}", self.slack_weight)?;
        writeln!(f, "sampling_period = {}", self.sampling_period)?;
        writeln!(f, "mode = {}", self.mode.as_str())?;
        writeln!(f, "node_limit = {}", self.node_limit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = ControllerConfig::from_text("# tuning\ng_tap = 500\nmode = perfect\nw_tap = -0.5, 0.25\nrate_p=2\n").unwrap();
        assert_eq!(cfg.g_tap, 500.0);
        assert_eq!(cfg.g_q, 0.1);
        assert_eq!(cfg.mode, ModelMode::Perfect);
        assert_eq!(cfg.w_tap, Some(vec![-0.5, 0.25]));
        assert_eq!(cfg.rate_p, Some(2.0));
    }

    #[test]
    fn round_trip() {
        let mut cfg = ControllerConfig::default();
        cfg.w_tap = Some(vec![0.1, -3.5e-3]);
        cfg.rate_tap = Some(1.0);
        assert_eq!(ControllerConfig::from_text(&cfg.to_string()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ControllerConfig::from_text("g_q = 0").is_err());
        assert!(ControllerConfig::from_text("sampling_period = -1").is_err());
        assert!(ControllerConfig::from_text("colour = red").is_err());
        let e = ControllerConfig::from_text("g_q = 1\ng_p = x").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }
}
