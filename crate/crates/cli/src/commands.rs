//! Subcommand implementations. Each resolves the configuration (file, then
//! flags), runs, and writes its datasets plus a `<command>.manifest.json`.

use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use serde_json::json;

use wva_core::detector::{read_frames, sample_frames, write_frames, write_frames_csv, ContainerError, FrameMeta};
use wva_core::estimate::{bootstrap_precision, build_estimator, EstimateError, EstimatorKind, ModelContext, PrecisionPoint};
use wva_core::experiments::config::{parse_grid, ConfigError, LoadedConfig};
use wva_core::experiments::{
    cm_ratio, dynamic_range, fisher_ratio_figure, gamma_map_figure, run_precision_sweep, snl_ratio_curve,
    write_dataset, ExperimentError, GammaRow, Manifest, PfCore, SchemeSpec,
};
use wva_core::fisher::{total_fisher, FisherError, ScanSettings};
use wva_core::qmeter::SchemeKind;

use crate::{Command, GlobalArgs};

/// Failure with its exit status.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration, flags or input files (exit 2).
    Input(String),
    /// Numerical or output failure (exit 1).
    Numeric(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Numeric(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) | Failure::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::InvalidScenario { .. } => Failure::Input(e.to_string()),
            other => Failure::Numeric(other.to_string()),
        }
    }
}

impl From<FisherError> for Failure {
    fn from(e: FisherError) -> Self {
        Failure::Numeric(e.to_string())
    }
}

impl From<EstimateError> for Failure {
    fn from(e: EstimateError) -> Self {
        match e {
            EstimateError::Protocol { .. } => Failure::Input(e.to_string()),
            other => Failure::Numeric(other.to_string()),
        }
    }
}

fn input<E: fmt::Display>(e: E) -> Failure {
    Failure::Input(e.to_string())
}

fn numbers(s: &str) -> Result<Vec<f64>, Failure> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    parse_grid(s).map_err(Failure::Input)
}

fn names<T: std::str::FromStr<Err = String>>(s: &str) -> Result<Vec<T>, Failure> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(|p| p.parse().map_err(Failure::Input)).collect()
}

fn scheme_flag(scheme: &Option<String>, theta: Option<f64>) -> Result<Option<SchemeSpec>, Failure> {
    match (scheme, theta) {
        (Some(_), Some(_)) => Err(Failure::Input("give either --scheme or --theta, not both".into())),
        (Some(s), None) => s.parse().map(Some).map_err(Failure::Input),
        (None, Some(t)) => format!("rwva:{t}").parse().map(Some).map_err(Failure::Input),
        (None, None) => Ok(None),
    }
}

#[derive(Args, Debug, Serialize)]
pub struct FisherScanArgs {
    /// Weak-value kind of the ratio scan: rwva or iwva.
    #[arg(long)]
    kind: Option<String>,
    /// Displacements of the ratio scan (list or grid).
    #[arg(long, allow_hyphen_values = true)]
    g: Option<String>,
    /// Success-probability grid: a:b:n, log:a:b:n or a list.
    #[arg(long)]
    pf: Option<String>,
    /// Meter width of the ratio scan (default 0.5, i.e. 2σ = 1).
    #[arg(long)]
    scan_sigma: Option<f64>,
    /// Quadrature nodes.
    #[arg(long)]
    nodes: Option<usize>,
    /// Scheme of the per-pixel report.
    #[arg(long)]
    scheme: Option<String>,
    /// Input intensity of the per-pixel report.
    #[arg(long)]
    nbar_t: Option<f64>,
    /// Displacement of the per-pixel report (mm).
    #[arg(long, allow_hyphen_values = true)]
    g_true: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    scheme: Option<String>,
    /// Shorthand for `--scheme rwva:<θ>`.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    g_true: Option<f64>,
    #[arg(long)]
    nbar_t: Option<f64>,
    #[arg(long)]
    frames: Option<usize>,
    /// Container file name (inside the output directory unless absolute).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also export the frames as CSV.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    csv: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct EstimateArgs {
    /// Frame container written by `simulate`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Estimators, comma separated.
    #[arg(long, alias = "estimators")]
    estimator: Option<String>,
    #[arg(long)]
    nu: Option<usize>,
    #[arg(long)]
    resamples: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    schemes: Option<String>,
    /// Intensities (list or grid).
    #[arg(long)]
    nbar_t: Option<String>,
    #[arg(long, alias = "estimator")]
    estimators: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    g_true: Option<f64>,
    #[arg(long)]
    nu: Option<usize>,
    #[arg(long)]
    pool: Option<usize>,
    #[arg(long)]
    resamples: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct OptimizeArgs {
    /// `lab` or `log`.
    #[arg(long)]
    candidates: Option<String>,
    /// Explicit candidate P_f list.
    #[arg(long)]
    pf: Option<String>,
    #[arg(long)]
    min_pf: Option<f64>,
    #[arg(long)]
    per_decade: Option<usize>,
    #[arg(long)]
    nbar_t: Option<String>,
    /// δg/SNL bound defining the dynamic range.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    g_true: Option<f64>,
    #[arg(long)]
    nu: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct GammaMapArgs {
    #[arg(long)]
    nbar_t: Option<f64>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    g_true: Option<f64>,
}

fn load(global: &GlobalArgs) -> Result<LoadedConfig, Failure> {
    let mut cfg = match &global.config {
        Some(p) => LoadedConfig::load(p)?,
        None => LoadedConfig::empty(),
    };
    let f = &mut cfg.file;
    if global.seed.is_some() {
        f.seed = global.seed;
    }
    let d = &global.detector;
    let det = &mut f.detector;
    if d.ideal_detector {
        det.ideal = Some(true);
    }
    if d.no_classical_noise {
        det.classical_noise = Some(false);
    }
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src {
                $dst = Some(v);
            }
        };
    }
    set!(det.eta, d.eta);
    set!(det.mu_d, d.mu_d);
    set!(det.sigma_d, d.sigma_d);
    set!(det.k_s, d.k_s);
    set!(det.gain, d.gain);
    set!(det.pixel_pitch, d.pixel_pitch);
    set!(det.n_pixels, d.n_pixels);
    set!(det.noise_a, d.noise_a);
    set!(det.noise_b, d.noise_b);
    set!(f.meter.sigma, global.meter.sigma);
    set!(f.meter.x0, global.meter.x0);
    Ok(cfg)
}

struct Output {
    dir: PathBuf,
    manifest: Manifest,
    hash: String,
    written: Vec<PathBuf>,
}

impl Output {
    fn new(dir: &Path, manifest: Manifest) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("cannot create output directory {}: {e}", dir.display())))?;
        let hash = manifest.hash();
        Ok(Self { dir: dir.to_path_buf(), manifest, hash, written: Vec::new() })
    }

    fn dataset(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut dyn std::io::Write) -> std::io::Result<()>,
    ) -> Result<(), Failure> {
        let path = self.dir.join(name);
        write_dataset(&path, &self.hash, body)?;
        self.written.push(path);
        Ok(())
    }

    fn finish(mut self, command: &str) -> Result<Vec<PathBuf>, Failure> {
        let path = self.dir.join(format!("{command}.manifest.json"));
        self.manifest.write(&path)?;
        self.written.push(path);
        Ok(self.written)
    }
}

fn manifest(command: &str, global: &GlobalArgs, args: &impl Serialize, inputs: serde_json::Value) -> Manifest {
    let mut m = Manifest::new(command, inputs);
    m.overrides = json!({ "global": global, "command": args });
    m
}

pub fn run(global: &GlobalArgs, command: &Command) -> Result<Vec<PathBuf>, Failure> {
    match command {
        Command::FisherScan(a) => fisher_scan(global, a),
        Command::Simulate(a) => simulate(global, a),
        Command::Estimate(a) => estimate(global, a),
        Command::Sweep(a) => sweep(global, a),
        Command::OptimizePf(a) => optimize_pf(global, a),
        Command::GammaMap(a) => gamma_map(global, a),
    }
}

fn fisher_scan(global: &GlobalArgs, a: &FisherScanArgs) -> Result<Vec<PathBuf>, Failure> {
    let mut cfg = load(global)?;
    let f = &mut cfg.file;
    if let Some(k) = &a.kind {
        f.fisher_scan.kind = Some(match k.trim().to_ascii_lowercase().as_str() {
            "rwva" => SchemeKind::Rwva,
            "iwva" => SchemeKind::Iwva,
            other => return Err(Failure::Input(format!("--kind must be rwva or iwva, got '{other}'"))),
        });
    }
    if let Some(g) = &a.g {
        f.fisher_scan.g = Some(numbers(g)?);
    }
    if let Some(pf) = &a.pf {
        f.fisher_scan.pf = Some(pf.clone());
    }
    if a.scan_sigma.is_some() {
        f.fisher_scan.sigma = a.scan_sigma;
    }
    if a.nodes.is_some() {
        f.fisher_scan.nodes = a.nodes;
    }
    if let Some(s) = scheme_flag(&a.scheme, None)? {
        f.fisher_scan.scheme = Some(s);
    }
    if a.nbar_t.is_some() {
        f.fisher_scan.nbar_t = a.nbar_t;
    }
    if a.g_true.is_some() {
        f.scenario.g_true = a.g_true;
    }
    let scan = cfg.fisher_scan()?;
    let calib = cfg.calib()?;
    let meter = cfg.meter()?;
    let g_true = cfg.file.scenario.g_true.unwrap_or(1e-3);
    meter.check_displacement(g_true).map_err(input)?;
    let scheme = scan.report_scheme.build().map_err(input)?;

    let settings = ScanSettings { nodes: scan.nodes, ..ScanSettings::default() };
    let mut m = manifest(
        "fisher-scan",
        global,
        a,
        json!({ "scan": scan, "calib": calib, "meter": meter, "g_true": g_true }),
    );
    m.calib_fingerprint = Some(calib.fingerprint());
    let figure = fisher_ratio_figure(scan.kind, &scan.g, &scan.pf, &scan.meter, &settings)?;
    let report = total_fisher(&scheme, g_true, scan.report_nbar_t, &meter, &calib)?;
    let mut out = Output::new(&global.out, m)?;
    out.dataset("fisher_scan.csv", |w| figure.write_csv(w))?;
    out.dataset("fisher_pixels.csv", |w| report.write_csv(w))?;
    for (g, pf) in &figure.infeasible {
        eprintln!("note: P_f = {pf} is not reachable by a {} selection at g = {g}", scan.kind);
    }
    out.finish("fisher-scan")
}

fn simulate(global: &GlobalArgs, a: &SimulateArgs) -> Result<Vec<PathBuf>, Failure> {
    let mut cfg = load(global)?;
    let f = &mut cfg.file;
    if let Some(s) = scheme_flag(&a.scheme, a.theta)? {
        f.simulate.scheme = Some(s);
    }
    if a.nbar_t.is_some() {
        f.simulate.nbar_t = a.nbar_t;
    }
    if a.frames.is_some() {
        f.simulate.frames = a.frames;
    }
    if a.g_true.is_some() {
        f.scenario.g_true = a.g_true;
    }
    let sim = cfg.simulate()?;
    let calib = cfg.calib()?;
    let meter = cfg.meter()?;
    let g = cfg.file.scenario.g_true.unwrap_or(1e-3);
    meter.check_displacement(g).map_err(input)?;
    let seed = cfg.seed();
    let meta = FrameMeta { scheme: sim.scheme.build().map_err(input)?, g, nbar_t: sim.nbar_t, seed, meter, calib };
    let mut m = manifest(
        "simulate",
        global,
        a,
        json!({ "simulate": sim, "g_true": g, "calib": meta.calib, "meter": meter }),
    );
    m.seeds = vec![seed];
    m.calib_fingerprint = Some(meta.calib.fingerprint());
    let pool = sample_frames(&meta, sim.frames).map_err(|e| Failure::Numeric(e.to_string()))?;

    let mut out = Output::new(&global.out, m)?;
    let name = a.output.clone().unwrap_or_else(|| PathBuf::from("frames.wvaf"));
    let path = out.dir.join(name);
    let mut bytes = Vec::new();
    write_frames(&pool, &mut bytes).map_err(|e| match e {
        ContainerError::ReadoutRange { .. } => {
            Failure::Input(format!("{}: {e}; lower k_s or n̄_t", path.display()))
        }
        other => Failure::Numeric(format!("{}: {other}", path.display())),
    })?;
    fs::write(&path, bytes).map_err(|e| Failure::Numeric(format!("{}: {e}", path.display())))?;
    out.written.push(path);
    if a.csv {
        out.dataset("frames.csv", |w| {
            write_frames_csv(&pool, w).map_err(|e| match e {
                ContainerError::Io(io) => io,
                other => std::io::Error::other(other.to_string()),
            })
        })?;
    }
    out.finish("simulate")
}

fn estimate(global: &GlobalArgs, a: &EstimateArgs) -> Result<Vec<PathBuf>, Failure> {
    let mut cfg = load(global)?;
    let f = &mut cfg.file;
    if let Some(p) = &a.input {
        f.estimate.input = Some(p.display().to_string());
    }
    if let Some(e) = &a.estimator {
        f.scenario.estimators = Some(names::<EstimatorKind>(e)?);
    }
    if a.nu.is_some() {
        f.protocol.nu = a.nu;
    }
    if a.resamples.is_some() {
        f.protocol.resamples = a.resamples;
    }
    let path = PathBuf::from(cfg.estimate_input()?);
    let estimators = cfg.file.scenario.estimators.clone().unwrap_or_else(|| EstimatorKind::ALL.to_vec());
    if estimators.is_empty() {
        return Err(Failure::Input("no estimators given".into()));
    }
    let nu = cfg.file.protocol.nu.unwrap_or(300);
    let resamples = cfg.file.protocol.resamples.unwrap_or(200);
    let seed = cfg.seed();
    let file = fs::File::open(&path).map_err(|e| Failure::Input(format!("cannot open {}: {e}", path.display())))?;
    let pool = read_frames(BufReader::new(file)).map_err(|e| match e {
        ContainerError::Io(io) => Failure::Input(format!("{}: {io}", path.display())),
        other => Failure::Input(format!("{}: {other}", path.display())),
    })?;
    let ctx = ModelContext::from_meta(&pool.meta);
    let mut m = manifest(
        "estimate",
        global,
        a,
        json!({
            "input": path.display().to_string(),
            "pool_seed": pool.meta.seed,
            "frames": pool.len(),
            "estimators": estimators,
            "nu": nu,
            "resamples": resamples,
        }),
    );
    m.seeds = vec![seed, pool.meta.seed];
    m.calib_fingerprint = Some(pool.meta.calib.fingerprint());
    let mut points: Vec<PrecisionPoint> = Vec::new();
    for kind in estimators {
        let est = build_estimator(kind, &ctx)?;
        points.push(bootstrap_precision(&pool, est.as_ref(), nu, resamples, seed)?);
    }
    let mut out = Output::new(&global.out, m)?;
    out.dataset("estimate.csv", |w| {
        writeln!(w, "{}", PrecisionPoint::CSV_HEADER)?;
        for p in &points {
            p.write_csv_row(&mut *w)?;
        }
        Ok(())
    })?;
    out.finish("estimate")
}

fn sweep(global: &GlobalArgs, a: &SweepArgs) -> Result<Vec<PathBuf>, Failure> {
    let mut cfg = load(global)?;
    let f = &mut cfg.file;
    if let Some(s) = &a.schemes {
        f.scenario.schemes = Some(names::<SchemeSpec>(s)?);
    }
    if let Some(n) = &a.nbar_t {
        f.scenario.nbar_t = Some(numbers(n)?);
    }
    if let Some(e) = &a.estimators {
        f.scenario.estimators = Some(names::<EstimatorKind>(e)?);
    }
    if a.g_true.is_some() {
        f.scenario.g_true = a.g_true;
    }
    if a.nu.is_some() {
        f.protocol.nu = a.nu;
    }
    if a.pool.is_some() {
        f.protocol.pool = a.pool;
    }
    if a.resamples.is_some() {
        f.protocol.resamples = a.resamples;
    }
    let scenario = cfg.scenario()?;
    let mut m = manifest("sweep", global, a, json!({ "scenario": scenario }));
    m.seeds = vec![scenario.seed];
    m.calib_fingerprint = Some(scenario.calib.fingerprint());
    let result = run_precision_sweep(&scenario)?;
    let mut out = Output::new(&global.out, m)?;
    out.dataset("sweep.csv", |w| result.write_csv(w))?;
    out.dataset("sweep_failures.csv", |w| {
        writeln!(w, "setting,estimator,nbar_t,message")?;
        for fl in &result.failures {
            writeln!(w, "{},{},{:.16e},\"{}\"", fl.setting, fl.estimator, fl.nbar_t, fl.message.replace('"', "'"))?;
        }
        Ok(())
    })?;
    for fl in &result.failures {
        eprintln!("note: {} {} at n̄_t = {:e}: {}", fl.setting, fl.estimator, fl.nbar_t, fl.message);
    }
    out.finish("sweep")
}

fn optimize_pf(global: &GlobalArgs, a: &OptimizeArgs) -> Result<Vec<PathBuf>, Failure> {
    let mut cfg = load(global)?;
    let f = &mut cfg.file;
    if let Some(c) = &a.candidates {
        f.optimize.candidates = Some(c.clone());
    }
    if let Some(p) = &a.pf {
        f.optimize.pf = Some(numbers(p)?);
    }
    if a.min_pf.is_some() {
        f.optimize.min_pf = a.min_pf;
    }
    if a.per_decade.is_some() {
        f.optimize.per_decade = a.per_decade;
    }
    if let Some(n) = &a.nbar_t {
        f.optimize.nbar_t = Some(numbers(n)?);
    }
    if a.threshold.is_some() {
        f.optimize.threshold = a.threshold;
    }
    if a.g_true.is_some() {
        f.scenario.g_true = a.g_true;
    }
    if a.nu.is_some() {
        f.protocol.nu = a.nu;
    }
    let opt = cfg.optimize()?;
    let scenario = cfg.scenario()?;
    let core = PfCore { g: scenario.g_true, meter: scenario.meter, calib: scenario.calib.clone(), nu: scenario.protocol.nu };
    let mut m = manifest("optimize-pf", global, a, json!({ "optimize": opt, "core": core }));
    m.calib_fingerprint = Some(core.calib.fingerprint());

    let curve = snl_ratio_curve(&opt.nbar_t, &opt.candidates, &core)?;
    let cm = opt.nbar_t.iter().map(|&n| cm_ratio(n, &core)).collect::<Result<Vec<_>, _>>()?;
    let adaptive: Vec<f64> = curve.iter().map(|o| o.ratio).collect();
    let range_wva = dynamic_range(&opt.nbar_t, &adaptive, opt.threshold);
    let range_cm = dynamic_range(&opt.nbar_t, &cm, opt.threshold);
    let span_gain = match (&range_wva, &range_cm) {
        (Some(w), Some(c)) => Some(w.span / c.span),
        _ => None,
    };

    let mut out = Output::new(&global.out, m)?;
    out.dataset("optimize_pf.csv", |w| {
        writeln!(w, "nbar_t,best_P_f,delta_g,ratio,cm_ratio")?;
        for (o, c) in curve.iter().zip(&cm) {
            writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", o.nbar_t, o.best_pf, o.delta_g, o.ratio, c)?;
        }
        Ok(())
    })?;
    out.dataset("optimize_pf_candidates.csv", |w| {
        writeln!(w, "nbar_t,P_f,fisher,delta_g,ratio")?;
        for o in &curve {
            for c in &o.candidates {
                writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", o.nbar_t, c.pf, c.fisher, c.delta_g, c.ratio)?;
            }
        }
        Ok(())
    })?;
    let summary = json!({
        "manifest_hash": out.hash,
        "calib_fingerprint": core.calib.fingerprint(),
        "threshold": opt.threshold,
        "adaptive": range_wva,
        "cm": range_cm,
        "span_gain": span_gain,
    });
    let path = out.dir.join("optimize_pf_summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    fs::write(&path, text).map_err(|e| Failure::Numeric(format!("{}: {e}", path.display())))?;
    out.written.push(path);
    out.finish("optimize-pf")
}

fn gamma_map(global: &GlobalArgs, a: &GammaMapArgs) -> Result<Vec<PathBuf>, Failure> {
    let mut cfg = load(global)?;
    let f = &mut cfg.file;
    if a.nbar_t.is_some() {
        f.gamma_map.nbar_t = a.nbar_t;
    }
    if let Some(s) = scheme_flag(&a.scheme, a.theta)? {
        f.gamma_map.scheme = Some(s);
    }
    if a.g_true.is_some() {
        f.scenario.g_true = a.g_true;
    }
    let map = cfg.gamma_map()?;
    let calib = cfg.calib()?;
    let meter = cfg.meter()?;
    let g = cfg.file.scenario.g_true.unwrap_or(1e-3);
    meter.check_displacement(g).map_err(input)?;
    let scheme = map.scheme.build().map_err(input)?;
    let mut m = manifest("gamma-map", global, a, json!({ "map": map, "g_true": g, "calib": calib, "meter": meter }));
    m.calib_fingerprint = Some(calib.fingerprint());
    let rows = gamma_map_figure(map.nbar_t, g, &scheme, &meter, &calib)?;
    let mut out = Output::new(&global.out, m)?;
    out.dataset("gamma_map.csv", |w| GammaRow::write_csv(&rows, w))?;
    out.finish("gamma-map")
}
