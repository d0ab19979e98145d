//! Time-varying inputs of a run: available wind per farm and optional load scaling.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::grid_case::GridCase;
use crate::power_flow::Disturbance;

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    /// Respect the case limits while injecting as much wind as possible.
    Curtailment,
    /// Additionally cap the voltage of the listed buses.
    Auxiliary { buses: Vec<usize>, v_max: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    /// `wind[k][i]`: available power of unit `i` (case order) at step `k`.
    pub wind: Vec<Vec<f64>>,
    /// Optional multiplier on every load at step `k`.
    pub load_scale: Option<Vec<f64>>,
    pub duration_steps: usize,
    pub task: Task,
}

impl Scenario {
    pub fn validate(&self, case: &GridCase) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Scenario(m));
        if self.wind.len() < self.duration_steps {
            return bad(format!("wind profile has {} steps, need {}", self.wind.len(), self.duration_steps));
        }
        if let Some((k, row)) = self.wind.iter().enumerate().find(|(_, r)| r.len() != case.units.len()) {
            return bad(format!("step {k}: {} farms, case has {}", row.len(), case.units.len()));
        }
        if self.wind.iter().flatten().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return bad("available power must be finite and non-negative".into());
        }
        if let Some(ls) = &self.load_scale {
            if ls.len() < self.duration_steps {
                return bad(format!("load profile has {} steps, need {}", ls.len(), self.duration_steps));
            }
        }
        if let Task::Auxiliary { buses, v_max } = &self.task {
            if let Some(b) = buses.iter().find(|&&b| case.bus_index(b).is_none()) {
                return bad(format!("auxiliary task names unknown bus {b}"));
            }
            if !(v_max.is_finite() && *v_max > 0.0) {
                return bad(format!("auxiliary v_max {v_max} is invalid"));
            }
        }
        Ok(())
    }

    /// Availability for step `k`, holding the last row past the end.
    pub fn p_max(&self, k: usize) -> &[f64] {
        &self.wind[k.min(self.wind.len() - 1)]
    }

    pub fn disturbance(&self, case: &GridCase, k: usize) -> Disturbance {
        let mut d = Disturbance::from_case(case);
        if let Some(ls) = &self.load_scale {
            let s = ls[k.min(ls.len() - 1)];
            d.load_p.iter_mut().for_each(|x| *x *= s);
            d.load_q.iter_mut().for_each(|x| *x *= s);
        }
        d
    }

    /// Same scenario cut to `steps`.
    pub fn truncated(&self, steps: usize) -> Scenario {
        let mut s = self.clone();
        s.duration_steps = steps.min(self.duration_steps);
        s
    }
}

/// Shape of the synthetic wind surge.
#[derive(Debug, Clone, PartialEq)]
pub struct RampParams {
    pub steps: usize,
    pub ramp_start: usize,
    pub ramp_end: usize,
    /// Capacity factors before and after the ramp.
    pub low: f64,
    pub high: f64,
    /// Relative amplitude of the uniform noise applied before the plateau.
    pub noise: f64,
    pub seed: u64,
}

impl Default for RampParams {
    fn default() -> Self {
        RampParams {
            steps: 1600,
            ramp_start: 850,
            ramp_end: 1000,
            low: 0.12,
            high: 0.9,
            noise: 0.05,
            seed: 7,
        }
    }
}

/// Low wind that ramps linearly to a constant plateau, with per-farm noise
/// before the plateau. Values are capped at each farm's rating.
pub fn ramp_scenario(case: &GridCase, params: &RampParams) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut wind = Vec::with_capacity(params.steps);
    for k in 0..params.steps {
        let cf = if k < params.ramp_start {
            params.low
        } else if k >= params.ramp_end {
            params.high
        } else {
            let t = (k - params.ramp_start) as f64 / (params.ramp_end - params.ramp_start) as f64;
            params.low + t * (params.high - params.low)
        };
        let row = case
            .units
            .iter()
            .map(|u| {
                let jitter = if k < params.ramp_end && params.noise > 0.0 {
                    rng.random_range(-params.noise..=params.noise)
                } else {
                    0.0
                };
                (u.p_rating * cf * (1.0 + jitter)).clamp(0.0, u.p_rating)
            })
            .collect();
        wind.push(row);
    }
    Scenario {
        name: format!("ramp-{}", params.seed),
        wind,
        load_scale: None,
        duration_steps: params.steps,
        task: Task::Curtailment,
    }
}

/// `step,farm_id,p_max_pu` rows, sorted by step then farm.
pub fn wind_to_csv(case: &GridCase, scenario: &Scenario) -> String {
    let mut s = String::from("step,farm_id,p_max_pu\n");
    for (k, row) in scenario.wind.iter().enumerate().take(scenario.duration_steps) {
        for (unit, p) in case.units.iter().zip(row) {
            let _ = writeln!(s, "{k},{},{p}", unit.id);
        }
    }
    s
}

/// Parse a wind profile; every step from 0 must list every farm exactly once.
pub fn parse_wind_csv(case: &GridCase, text: &str) -> Result<Vec<Vec<f64>>, HarnessError> {
    let mut rows: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
    let err = |line: usize, m: String| HarnessError::Scenario(format!("wind line {line}: {m}"));
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("step")) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(err(i + 1, format!("expected 3 columns, found {}", cols.len())));
        }
        let step: usize = cols[0].parse().map_err(|_| err(i + 1, format!("bad step '{}'", cols[0])))?;
        let farm: usize = cols[1].parse().map_err(|_| err(i + 1, format!("bad farm id '{}'", cols[1])))?;
        let p: f64 = cols[2].parse().map_err(|_| err(i + 1, format!("bad value '{}'", cols[2])))?;
        if !(p >= 0.0 && p.is_finite()) {
            return Err(err(i + 1, format!("p_max must be non-negative, got {p}")));
        }
        let pos = case
            .units
            .iter()
            .position(|u| u.id == farm)
            .ok_or_else(|| err(i + 1, format!("unknown farm {farm}")))?;
        let row = rows.entry(step).or_insert_with(|| vec![None; case.units.len()]);
        if row[pos].replace(p).is_some() {
            return Err(err(i + 1, format!("duplicate entry for step {step}, farm {farm}")));
        }
    }
    let mut out = Vec::with_capacity(rows.len());
    for (expect, (step, row)) in rows.into_iter().enumerate() {
        if step != expect {
            return Err(HarnessError::Scenario(format!("wind profile is missing step {expect}")));
        }
        let full: Option<Vec<f64>> = row.into_iter().collect();
        out.push(full.ok_or_else(|| HarnessError::Scenario(format!("step {step} does not list every farm")))?);
    }
    if out.is_empty() {
        return Err(HarnessError::Scenario("wind profile is empty".into()));
    }
    Ok(out)
}

/// `step,scale` rows.
pub fn parse_load_csv(text: &str) -> Result<Vec<f64>, HarnessError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("step")) {
            continue;
        }
        let (step, scale) = line
            .split_once(',')
            .ok_or_else(|| HarnessError::Scenario(format!("load line {}: expected step,scale", i + 1)))?;
        let step: usize = step.trim().parse().map_err(|_| HarnessError::Scenario(format!("load line {}: bad step", i + 1)))?;
        let scale: f64 = scale.trim().parse().map_err(|_| HarnessError::Scenario(format!("load line {}: bad scale", i + 1)))?;
        if step != out.len() {
            return Err(HarnessError::Scenario(format!("load line {}: expected step {}", i + 1, out.len())));
        }
        out.push(scale);
    }
    Ok(out)
}

/// Manifest fields; file references are resolved by the caller.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub name: Option<String>,
    pub wind: Option<String>,
    pub loads: Option<String>,
    pub steps: Option<usize>,
    pub task: Option<Task>,
    /// `ramp` generator parameters when no wind file is given.
    pub ramp: Option<RampParams>,
}

/// Parse a `key = value` scenario manifest.
///
/// Keys: `name`, `wind` (CSV path), `loads` (CSV path), `steps`, `task`
/// (`curtailment` or `auxiliary`), `aux_buses`, `aux_v_max`, and `ramp_seed`,
/// `ramp_noise`, `ramp_low`, `ramp_high`, `ramp_start`, `ramp_end` for the
/// built-in generator.
pub fn parse_manifest(text: &str) -> Result<Manifest, HarnessError> {
    let mut m = Manifest::default();
    let mut task_kind = None;
    let mut aux_buses = Vec::new();
    let mut aux_v_max = 1.05;
    let mut ramp: Option<RampParams> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| HarnessError::Scenario(format!("manifest line {}: {msg}", i + 1));
        let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got '{line}'")))?;
        let (k, v) = (k.trim(), v.trim());
        let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("bad number '{v}'")));
        let int = |v: &str| v.parse::<usize>().map_err(|_| err(format!("bad integer '{v}'")));
        match k {
            "name" => m.name = Some(v.to_string()),
            "wind" => m.wind = Some(v.to_string()),
            "loads" => m.loads = Some(v.to_string()),
            "steps" => m.steps = Some(int(v)?),
            "task" => task_kind = Some(v.to_string()),
            "aux_buses" => {
                aux_buses = v.split(',').map(|b| int(b.trim())).collect::<Result<_, _>>()?;
            }
            "aux_v_max" => aux_v_max = num(v)?,
            key if key.starts_with("ramp_") => {
                let r = ramp.get_or_insert_with(RampParams::default);
                match key {
                    "ramp_seed" => r.seed = v.parse().map_err(|_| err(format!("bad seed '{v}'")))?,
                    "ramp_noise" => r.noise = num(v)?,
                    "ramp_low" => r.low = num(v)?,
                    "ramp_high" => r.high = num(v)?,
                    "ramp_start" => r.ramp_start = int(v)?,
                    "ramp_end" => r.ramp_end = int(v)?,
                    _ => return Err(err(format!("unknown key '{key}'"))),
                }
            }
            _ => return Err(err(format!("unknown key '{k}'"))),
        }
    }
    m.task = match task_kind.as_deref() {
        None | Some("curtailment") => Some(Task::Curtailment),
        Some("auxiliary") => Some(Task::Auxiliary { buses: aux_buses, v_max: aux_v_max }),
        Some(other) => return Err(HarnessError::Scenario(format!("unknown task '{other}'"))),
    };
    if let (Some(r), Some(steps)) = (ramp.as_mut(), m.steps) {
        r.steps = steps;
    }
    if let Some(r) = &ramp {
        if !(r.ramp_start < r.ramp_end && r.ramp_end <= r.steps) {
            return Err(HarnessError::Scenario("ramp_start < ramp_end <= steps is required".into()));
        }
    }
    m.ramp = ramp;
    Ok(m)
}
