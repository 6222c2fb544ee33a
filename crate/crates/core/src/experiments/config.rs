//! TOML run configuration.
//!
//! Every key is optional; missing keys take the documented defaults. Unknown
//! keys are rejected. Errors carry the line (and column, for syntax errors) of
//! the offending entry.
//!
//! ```toml
//! seed = 7
//!
//! [scenario]
//! schemes = ["cm", "rwva:76"]
//! estimators = ["mle", "sd", "com"]
//! g_true = 1e-3
//! nbar_t = [1e5, 1e6, 1e7, 1e8]
//!
//! [protocol]
//! nu = 300
//! pool = 6000
//! resamples = 200
//!
//! [detector]
//! k_s = 65535
//! sigma_d = 10.0
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{DetectorCalib, NoiseLaw};
use crate::estimate::EstimatorKind;
use crate::qmeter::{MeterParams, SchemeKind};

use super::{log_candidates, lab_candidates, ExperimentError, Protocol, Scenario, SchemeSpec, DEFAULT_SEED};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{origin}:{line}:{column}: {message}")]
    Syntax { origin: String, line: usize, column: usize, message: String },
    #[error("{origin}{}: invalid value for `{field}`: {reason}", .line.map(|l| format!(":{l}")).unwrap_or_default())]
    Invalid { origin: String, line: Option<usize>, field: String, reason: String },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub schemes: Option<Vec<SchemeSpec>>,
    pub estimators: Option<Vec<EstimatorKind>>,
    pub g_true: Option<f64>,
    pub nbar_t: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub nu: Option<usize>,
    pub pool: Option<usize>,
    pub resamples: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    /// Start from the noise-free, non-saturating detector.
    pub ideal: Option<bool>,
    pub eta: Option<f64>,
    pub mu_d: Option<f64>,
    pub sigma_d: Option<f64>,
    pub classical_noise: Option<bool>,
    pub noise_a: Option<f64>,
    pub noise_b: Option<f64>,
    pub k_s: Option<u32>,
    pub gain: Option<f64>,
    pub pixel_pitch: Option<f64>,
    pub n_pixels: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeterSection {
    pub sigma: Option<f64>,
    pub x0: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FisherScanSection {
    pub kind: Option<SchemeKind>,
    pub g: Option<Vec<f64>>,
    /// Grid in the form accepted by [`parse_grid`].
    pub pf: Option<String>,
    /// Meter width for the scan; defaults to 0.5 (`2σ = 1`).
    pub sigma: Option<f64>,
    pub nodes: Option<usize>,
    /// Scheme of the per-pixel report (default `cm`).
    pub scheme: Option<SchemeSpec>,
    /// Input intensity of the per-pixel report (default 1e6).
    pub nbar_t: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub scheme: Option<SchemeSpec>,
    pub nbar_t: Option<f64>,
    /// Frames in the pool (default: `protocol.pool`).
    pub frames: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    /// Frame container to analyse.
    pub input: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeSection {
    /// `"lab"` (the five laboratory settings) or `"log"` (log-spaced down to `min_pf`).
    pub candidates: Option<String>,
    /// Explicit candidate list; overrides `candidates`.
    pub pf: Option<Vec<f64>>,
    pub min_pf: Option<f64>,
    pub per_decade: Option<usize>,
    pub nbar_t: Option<Vec<f64>>,
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaMapSection {
    pub nbar_t: Option<f64>,
    pub scheme: Option<SchemeSpec>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunFile {
    pub seed: Option<u64>,
    pub scenario: ScenarioSection,
    pub protocol: ProtocolSection,
    pub detector: DetectorSection,
    pub meter: MeterSection,
    pub fisher_scan: FisherScanSection,
    pub optimize: OptimizeSection,
    pub gamma_map: GammaMapSection,
    pub simulate: SimulateSection,
    pub estimate: EstimateSection,
}

/// Resolved settings of the post-selection optimization.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimizeSettings {
    pub candidates: Vec<f64>,
    pub nbar_t: Vec<f64>,
    pub threshold: f64,
}

/// Resolved settings of the FI-ratio scan.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FisherScanSettings {
    pub kind: SchemeKind,
    pub g: Vec<f64>,
    pub pf: Vec<f64>,
    pub meter: MeterParams<f64>,
    pub nodes: usize,
    pub report_scheme: SchemeSpec,
    pub report_nbar_t: f64,
}

/// Resolved settings of frame synthesis.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulateSettings {
    pub scheme: SchemeSpec,
    pub nbar_t: f64,
    pub frames: usize,
}

/// Resolved settings of the Γ map.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GammaMapSettings {
    pub nbar_t: f64,
    pub scheme: SchemeSpec,
}

/// A parsed file plus what is needed to point at its lines.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedConfig {
    pub file: RunFile,
    origin: String,
    source: String,
}

fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let before = &source[..offset.min(source.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

impl LoadedConfig {
    pub fn parse(source: &str, origin: &str) -> Result<Self, ConfigError> {
        let file: RunFile = toml::from_str(source).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| line_col(source, s.start));
            ConfigError::Syntax { origin: origin.into(), line, column, message: e.message().trim().to_string() }
        })?;
        Ok(Self { file, origin: origin.into(), source: source.into() })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let source = fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), reason: e.to_string() })?;
        Self::parse(&source, &path.display().to_string())
    }

    /// Defaults only, as if an empty file had been read.
    pub fn empty() -> Self {
        Self { file: RunFile::default(), origin: "<defaults>".into(), source: String::new() }
    }

    /// Line of `key` inside `[section]` (or at top level when `section` is empty).
    fn locate(&self, section: &str, key: &str) -> Option<usize> {
        let mut current = String::new();
        for (i, raw) in self.source.lines().enumerate() {
            let line = raw.trim();
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = name.trim().to_string();
                continue;
            }
            if current == section {
                if let Some((k, _)) = line.split_once('=') {
                    if k.trim() == key {
                        return Some(i + 1);
                    }
                }
            }
        }
        None
    }

    fn invalid(&self, section: &str, key: &str, reason: impl Into<String>) -> ConfigError {
        let field = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
        ConfigError::Invalid { origin: self.origin.clone(), line: self.locate(section, key), field, reason: reason.into() }
    }

    pub fn calib(&self) -> Result<DetectorCalib, ConfigError> {
        let d = &self.file.detector;
        let mut c = if d.ideal.unwrap_or(false) { DetectorCalib::ideal() } else { DetectorCalib::laboratory() };
        if let Some(v) = d.eta {
            c.eta = v;
        }
        if let Some(v) = d.mu_d {
            c.mu_d = v;
        }
        if let Some(v) = d.sigma_d {
            c.sigma_d = v;
        }
        if let Some(v) = d.k_s {
            c.k_s = v;
        }
        if let Some(v) = d.gain {
            c.gain = v;
        }
        if let Some(v) = d.pixel_pitch {
            c.pixel_pitch = v;
        }
        if let Some(v) = d.n_pixels {
            c.n_pixels = v;
        }
        if d.noise_a.is_some() || d.noise_b.is_some() {
            let base = c.classical_noise.unwrap_or(NoiseLaw::LABORATORY);
            c.classical_noise = Some(NoiseLaw { a: d.noise_a.unwrap_or(base.a), b: d.noise_b.unwrap_or(base.b) });
        }
        match d.classical_noise {
            Some(false) => c.classical_noise = None,
            Some(true) if c.classical_noise.is_none() => c.classical_noise = Some(NoiseLaw::LABORATORY),
            _ => {}
        }
        c.validate().map_err(|e| {
            let key = match &e {
                crate::detector::DetectorError::InvalidCalib { field, .. } => *field,
                _ => "ideal",
            };
            self.invalid("detector", key, e.to_string())
        })?;
        Ok(c)
    }

    pub fn meter(&self) -> Result<MeterParams<f64>, ConfigError> {
        let lab = MeterParams::<f64>::laboratory();
        let sigma = self.file.meter.sigma.unwrap_or(lab.sigma());
        let x0 = self.file.meter.x0.unwrap_or(lab.x0());
        MeterParams::new(sigma, x0).map_err(|e| self.invalid("meter", "sigma", e.to_string()))
    }

    pub fn seed(&self) -> u64 {
        self.file.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        let d = Scenario::default();
        let s = &self.file.scenario;
        let p = &self.file.protocol;
        let scenario = Scenario {
            schemes: s.schemes.clone().unwrap_or(d.schemes),
            g_true: s.g_true.unwrap_or(d.g_true),
            nbar_t: s.nbar_t.clone().unwrap_or(d.nbar_t),
            estimators: s.estimators.clone().unwrap_or(d.estimators),
            calib: self.calib()?,
            meter: self.meter()?,
            protocol: Protocol {
                nu: p.nu.unwrap_or(d.protocol.nu),
                pool: p.pool.unwrap_or(d.protocol.pool),
                resamples: p.resamples.unwrap_or(d.protocol.resamples),
            },
            seed: self.seed(),
        };
        scenario.validate().map_err(|e| match e {
            ExperimentError::InvalidScenario { field: "protocol", reason } => {
                let key = if scenario.protocol.nu < 2 {
                    "nu"
                } else if scenario.protocol.resamples < 2 {
                    "resamples"
                } else {
                    "pool"
                };
                self.invalid("protocol", key, reason)
            }
            ExperimentError::InvalidScenario { field, reason } => self.invalid("scenario", field, reason),
            ExperimentError::Qmeter(q) => self.invalid("scenario", "schemes", q.to_string()),
            other => self.invalid("scenario", "schemes", other.to_string()),
        })?;
        Ok(scenario)
    }

    pub fn optimize(&self) -> Result<OptimizeSettings, ConfigError> {
        let o = &self.file.optimize;
        let candidates = match (&o.pf, o.candidates.as_deref()) {
            (Some(list), _) => list.clone(),
            (None, None) | (None, Some("log")) => {
                let min_pf = o.min_pf.unwrap_or(1e-4);
                if !(min_pf > 0.0 && min_pf < 1.0) {
                    return Err(self.invalid("optimize", "min_pf", "must lie in (0, 1)"));
                }
                let per_decade = o.per_decade.unwrap_or(4);
                if per_decade == 0 {
                    return Err(self.invalid("optimize", "per_decade", "must be positive"));
                }
                log_candidates(min_pf, per_decade)
            }
            (None, Some("lab")) => lab_candidates(),
            (None, Some(other)) => {
                return Err(self.invalid("optimize", "candidates", format!("expected \"lab\" or \"log\", got \"{other}\"")))
            }
        };
        if candidates.is_empty() || candidates.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(self.invalid("optimize", "pf", "candidates must be non-empty and lie in (0, 1]"));
        }
        let nbar_t = o.nbar_t.clone().unwrap_or_else(|| (0..=36).map(|i| 10f64.powf(3.0 + 0.25 * i as f64)).collect());
        if nbar_t.is_empty() || nbar_t.windows(2).any(|w| w[1] <= w[0]) || nbar_t.iter().any(|n| !(*n > 0.0)) {
            return Err(self.invalid("optimize", "nbar_t", "must be non-empty, positive and strictly increasing"));
        }
        let threshold = o.threshold.unwrap_or(2.0);
        if !(threshold > 0.0) {
            return Err(self.invalid("optimize", "threshold", "must be positive"));
        }
        Ok(OptimizeSettings { candidates, nbar_t, threshold })
    }

    pub fn fisher_scan(&self) -> Result<FisherScanSettings, ConfigError> {
        let f = &self.file.fisher_scan;
        let kind = f.kind.unwrap_or(SchemeKind::Rwva);
        if kind == SchemeKind::Cm {
            return Err(self.invalid("fisher_scan", "kind", "expected rwva or iwva"));
        }
        let meter = MeterParams::new(f.sigma.unwrap_or(0.5), 0.0)
            .map_err(|e| self.invalid("fisher_scan", "sigma", e.to_string()))?;
        let g = f.g.clone().unwrap_or_else(|| vec![0.01]);
        if g.is_empty() {
            return Err(self.invalid("fisher_scan", "g", "empty list"));
        }
        for &v in &g {
            meter.check_displacement(v).map_err(|e| self.invalid("fisher_scan", "g", e.to_string()))?;
        }
        let default_grid = match kind {
            SchemeKind::Iwva => "log:1e-6:0.999:60",
            _ => "0.01:1:50",
        };
        let pf = parse_grid(f.pf.as_deref().unwrap_or(default_grid)).map_err(|e| self.invalid("fisher_scan", "pf", e))?;
        let nodes = f.nodes.unwrap_or(3001);
        if nodes < 3 {
            return Err(self.invalid("fisher_scan", "nodes", "at least 3"));
        }
        let report_scheme = f.scheme.unwrap_or(SchemeSpec::Cm);
        let report_nbar_t = f.nbar_t.unwrap_or(1e6);
        if !(report_nbar_t >= 0.0 && report_nbar_t.is_finite()) {
            return Err(self.invalid("fisher_scan", "nbar_t", "must be finite and non-negative"));
        }
        Ok(FisherScanSettings { kind, g, pf, meter, nodes, report_scheme, report_nbar_t })
    }

    pub fn simulate(&self) -> Result<SimulateSettings, ConfigError> {
        let s = &self.file.simulate;
        let nbar_t = s.nbar_t.unwrap_or(1e7);
        if !(nbar_t >= 0.0 && nbar_t.is_finite()) {
            return Err(self.invalid("simulate", "nbar_t", "must be finite and non-negative"));
        }
        let frames = s.frames.or(self.file.protocol.pool).unwrap_or(Protocol::default().pool);
        if frames == 0 {
            return Err(self.invalid("simulate", "frames", "must be positive"));
        }
        Ok(SimulateSettings { scheme: s.scheme.unwrap_or(SchemeSpec::Pair { theta_deg: 76.0 }), nbar_t, frames })
    }

    /// Container named in `[estimate] input`, relative paths taken as given.
    pub fn estimate_input(&self) -> Result<String, ConfigError> {
        self.file
            .estimate
            .input
            .clone()
            .ok_or_else(|| self.invalid("estimate", "input", "no frame container given"))
    }

    pub fn gamma_map(&self) -> Result<GammaMapSettings, ConfigError> {
        let m = &self.file.gamma_map;
        let nbar_t = m.nbar_t.unwrap_or(1e8);
        if !(nbar_t >= 0.0 && nbar_t.is_finite()) {
            return Err(self.invalid("gamma_map", "nbar_t", "must be finite and non-negative"));
        }
        let scheme = m.scheme.unwrap_or(SchemeSpec::Pair { theta_deg: 76.0 });
        if scheme == SchemeSpec::Cm {
            return Err(self.invalid("gamma_map", "scheme", "the map already includes CM; give a WVA scheme"));
        }
        Ok(GammaMapSettings { nbar_t, scheme })
    }
}

/// Parses `a:b:n` (n linearly spaced points), `log:a:b:n` (log-spaced) or a
/// comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("bad number '{v}' in grid '{s}'"));
    let count = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad point count '{v}' in grid '{s}'"));
    let parts: Vec<&str> = s.split(':').collect();
    let grid = match parts.as_slice() {
        ["log", a, b, n] => {
            let (a, b, n) = (num(a)?, num(b)?, count(n)?);
            if !(a > 0.0 && b > 0.0) {
                return Err(format!("log grid needs positive bounds in '{s}'"));
            }
            spaced(a.ln(), b.ln(), n)?.into_iter().map(f64::exp).collect()
        }
        [a, b, n] => spaced(num(a)?, num(b)?, count(n)?)?,
        [list] => list.split(',').map(num).collect::<Result<Vec<_>, _>>()?,
        _ => return Err(format!("cannot parse grid '{s}' (expected a:b:n, log:a:b:n or a comma list)")),
    };
    if grid.is_empty() {
        return Err(format!("empty grid '{s}'"));
    }
    Ok(grid)
}

fn spaced(a: f64, b: f64, n: usize) -> Result<Vec<f64>, String> {
    match n {
        0 => Err("a grid needs at least one point".into()),
        1 => Ok(vec![a]),
        _ => Ok((0..n)
            .map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 })
            .collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = LoadedConfig::parse("", "x.toml").unwrap();
        assert_eq!(c.scenario().unwrap(), Scenario::default());
        assert_eq!(c.calib().unwrap(), DetectorCalib::laboratory());
    }

    #[test]
    fn sections_override_defaults() {
        let src = "seed = 9\n[scenario]\nschemes = [\"cm\", \"rwva:63\"]\nnbar_t = [1e4, 1e5]\n[detector]\nk_s = 4095\nclassical_noise = false\n[protocol]\nnu = 10\n";
        let c = LoadedConfig::parse(src, "x.toml").unwrap();
        let s = c.scenario().unwrap();
        assert_eq!(s.seed, 9);
        assert_eq!(s.schemes[1], SchemeSpec::Pair { theta_deg: 63.0 });
        assert_eq!(s.calib.k_s, 4095);
        assert!(s.calib.classical_noise.is_none());
        assert_eq!(s.protocol, Protocol { nu: 10, ..Protocol::default() });
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let src = "[scenario]\ng_true = 1e-3\nnbar = [1.0]\n";
        match LoadedConfig::parse(src, "x.toml") {
            Err(ConfigError::Syntax { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("nbar"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn semantic_error_names_field_and_line() {
        let src = "[scenario]\n\nnbar_t = [1e5, 1e4]\n";
        let err = LoadedConfig::parse(src, "x.toml").unwrap().scenario().unwrap_err();
        match &err {
            ConfigError::Invalid { field, line, .. } => {
                assert_eq!(field, "scenario.nbar_t");
                assert_eq!(*line, Some(3));
            }
            other => panic!("{other:?}"),
        }
        assert!(err.to_string().starts_with("x.toml:3:"), "{err}");
        let src = "[detector]\nk_s = 0\n";
        let err = LoadedConfig::parse(src, "x.toml").unwrap().calib().unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { line: Some(2), .. }), "{err:?}");
    }

    #[test]
    fn grids() {
        assert_eq!(parse_grid("0:1:5").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = parse_grid("0.01:1:50").unwrap();
        assert_eq!((g.len(), g[0], g[49]), (50, 0.01, 1.0));
        let l = parse_grid("log:1e-6:0.999:60").unwrap();
        assert!((l[0] - 1e-6).abs() < 1e-20 && l[59] == 0.999);
        assert_eq!(parse_grid("0.1, 0.2").unwrap(), vec![0.1, 0.2]);
        assert!(parse_grid("1:2").is_err());
        assert!(parse_grid("log:0:1:5").is_err());
    }

    #[test]
    fn optimize_candidate_sets() {
        let c = LoadedConfig::parse("[optimize]\ncandidates = \"lab\"\n", "x").unwrap();
        assert_eq!(c.optimize().unwrap().candidates, lab_candidates());
        let c = LoadedConfig::parse("[optimize]\ncandidates = \"best\"\n", "x").unwrap();
        assert!(matches!(c.optimize(), Err(ConfigError::Invalid { line: Some(2), .. })));
    }
}
