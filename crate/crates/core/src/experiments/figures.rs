//! Datasets for the ideal-detector FI-ratio curves and per-pixel Γ maps.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::detector::DetectorCalib;
use crate::fisher::{ideal_fi_ratio_scan, total_fisher, FisherError, RatioPoint, ScanSettings};
use crate::qmeter::{MeasurementScheme, MeterParams, SchemeKind};

use super::ExperimentError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RatioRow {
    pub kind: SchemeKind,
    pub g: f64,
    pub point: RatioPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FisherFigure {
    pub rows: Vec<RatioRow>,
    /// `(g, P_f)` targets no selection of the requested kind can reach.
    pub infeasible: Vec<(f64, f64)>,
}

impl FisherFigure {
    pub const CSV_HEADER: &'static str = "kind,g,P_f,ratio,theta_i,theta_f,phase";

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            let p = &r.point;
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.kind, r.g, p.pf, p.ratio, p.theta_i, p.theta_f, p.phase
            )?;
        }
        Ok(())
    }

    /// Rows of one displacement, in grid order.
    pub fn curve(&self, g: f64) -> Vec<RatioPoint> {
        self.rows.iter().filter(|r| r.g == g).map(|r| r.point).collect()
    }
}

/// Ideal-detector `max F/Q_CM` against `P_f` for each displacement; `Rwva`
/// uses the position readout and `Iwva` the momentum readout.
pub fn fisher_ratio_figure(
    kind: SchemeKind,
    gs: &[f64],
    pf_grid: &[f64],
    meter: &MeterParams<f64>,
    settings: &ScanSettings,
) -> Result<FisherFigure, ExperimentError> {
    let jobs: Vec<(f64, f64)> = gs.iter().flat_map(|&g| pf_grid.iter().map(move |&pf| (g, pf))).collect();
    let results = jobs
        .par_iter()
        .map(|&(g, pf)| match ideal_fi_ratio_scan(kind, g, meter, &[pf], settings) {
            Ok(mut v) => Ok(Ok(RatioRow { kind, g, point: v.remove(0) })),
            Err(FisherError::InfeasiblePf { .. }) => Ok(Err((g, pf))),
            Err(e) => Err(ExperimentError::from(e)),
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    let mut fig = FisherFigure { rows: Vec::new(), infeasible: Vec::new() };
    for r in results {
        match r {
            Ok(row) => fig.rows.push(row),
            Err(point) => fig.infeasible.push(point),
        }
    }
    Ok(fig)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GammaRow {
    pub scheme: SchemeKind,
    pub pf: f64,
    pub j: usize,
    pub x: f64,
    pub nbar: f64,
    pub fisher: f64,
    pub gamma: Option<f64>,
}

impl GammaRow {
    pub const CSV_HEADER: &'static str = "scheme,P_f,j,x_j,nbar_j,F_j,Gamma_j";

    pub fn write_csv<W: Write>(rows: &[GammaRow], mut w: W) -> io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in rows {
            let gm = r.gamma.map(|v| format!("{v:.16e}")).unwrap_or_default();
            writeln!(
                w,
                "{},{:.16e},{},{:.16e},{:.16e},{:.16e},{}",
                r.scheme, r.pf, r.j, r.x, r.nbar, r.fisher, gm
            )?;
        }
        Ok(())
    }
}

/// Per-pixel `(x_j, n̄_j, F_j, Γ_j)` for CM followed by the given WVA scheme at
/// the same input intensity.
pub fn gamma_map_figure(
    nbar_t: f64,
    g: f64,
    wva: &MeasurementScheme<f64>,
    meter: &MeterParams<f64>,
    calib: &DetectorCalib,
) -> Result<Vec<GammaRow>, ExperimentError> {
    let mut rows = Vec::with_capacity(2 * calib.n_pixels);
    for scheme in [MeasurementScheme::conventional(), *wva] {
        let report = total_fisher(&scheme, g, nbar_t, meter, calib)?;
        rows.extend(report.pixels.iter().map(|p| GammaRow {
            scheme: scheme.kind(),
            pf: scheme.pf0(),
            j: p.j,
            x: p.x,
            nbar: p.nbar,
            fisher: p.fisher,
            gamma: p.gamma,
        }));
    }
    Ok(rows)
}
