//! Plot-ready theory artefacts: closed-form tables over parameter grids and
//! the two-dimensional scene with trained decision boundaries.

mod contour;
mod scene;

pub use contour::{marching_squares, Polyline};
pub use scene::{fig2_scene, SceneModel, SceneOptions, SceneSummary};

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{closed_form_terms, theorem3_errors, ClasswiseErrorPair};
use crate::distributions::{format_f64, MixtureSpec};
use crate::error::Result;

pub const SKIP_MARGIN: &str = "margin exceeds mean scale";

/// Cartesian grid of mixtures and radii; `eps = ratio * eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryGrid {
    pub d: Vec<usize>,
    #[serde(default = "zero_m")]
    pub m: Vec<usize>,
    pub eta: Vec<f64>,
    #[serde(default = "zero_f")]
    pub gamma: Vec<f64>,
    #[serde(default = "one_f")]
    pub sigma: Vec<f64>,
    pub k_ratio: Vec<f64>,
    pub eps_over_eta: Vec<f64>,
}

fn zero_m() -> Vec<usize> {
    vec![0]
}
fn zero_f() -> Vec<f64> {
    vec![0.0]
}
fn one_f() -> Vec<f64> {
    vec![1.0]
}

impl TheoryGrid {
    /// K in {1.5, 2, 3}, eps / eta in {0.1, ..., 0.9}, d in {2, 10, 50}, at
    /// eta = 0.5 and sigma = 1.
    pub fn reference() -> Self {
        Self {
            d: vec![2, 10, 50],
            m: vec![0],
            eta: vec![0.5],
            gamma: vec![0.0],
            sigma: vec![1.0],
            k_ratio: vec![1.5, 2.0, 3.0],
            eps_over_eta: (1..=9).map(|i| i as f64 / 10.0).collect(),
        }
    }

    pub fn points(&self) -> Vec<(MixtureSpec, f64)> {
        let mut out = Vec::new();
        for &d in &self.d {
            for &m in &self.m {
                for &eta in &self.eta {
                    for &gamma in &self.gamma {
                        for &sigma in &self.sigma {
                            for &k_ratio in &self.k_ratio {
                                for &r in &self.eps_over_eta {
                                    out.push((MixtureSpec { d, m, eta, gamma, sigma, k_ratio }, r * eta));
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryValues {
    pub b_nat: f64,
    pub b_rob: f64,
    pub natural_std: ClasswiseErrorPair,
    pub robust_std: ClasswiseErrorPair,
    pub robust_rob: ClasswiseErrorPair,
    /// Robust minus natural standard error, per class.
    pub delta_minus: f64,
    pub delta_plus: f64,
    /// Only for mixtures with non-robust features.
    pub gap_holds: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub spec: MixtureSpec,
    pub eps: f64,
    pub values: Option<TheoryValues>,
    pub skip_reason: Option<String>,
}

fn theory_values(spec: &MixtureSpec, eps: f64) -> Result<TheoryValues> {
    if spec.m > 0 {
        let t = theorem3_errors(spec, eps)?;
        return Ok(TheoryValues {
            b_nat: t.b_nat_projected,
            b_rob: t.b_rob,
            natural_std: t.natural_std,
            robust_std: t.robust_std,
            robust_rob: t.robust_rob,
            delta_minus: t.rise_minus,
            delta_plus: t.rise_plus,
            gap_holds: Some(t.gap_holds),
        });
    }
    let terms = closed_form_terms(spec, eps)?;
    let natural_std = terms.natural_std(spec.k_ratio);
    let robust_std = terms.robust_std(spec, eps);
    Ok(TheoryValues {
        b_nat: terms.b_nat,
        b_rob: terms.b_rob,
        natural_std,
        robust_std,
        robust_rob: terms.robust_rob(spec.k_ratio),
        delta_minus: robust_std.err_minus - natural_std.err_minus,
        delta_plus: robust_std.err_plus - natural_std.err_plus,
        gap_holds: None,
    })
}

pub fn theory_row(spec: &MixtureSpec, eps: f64) -> TheoryRow {
    let skip = |reason: String| TheoryRow { spec: *spec, eps, values: None, skip_reason: Some(reason) };
    if let Err(e) = spec.validate() {
        return skip(e.to_string());
    }
    if eps >= spec.eta {
        return skip(SKIP_MARGIN.to_string());
    }
    match theory_values(spec, eps) {
        Ok(v) => TheoryRow { spec: *spec, eps, values: Some(v), skip_reason: None },
        Err(e) => skip(e.to_string()),
    }
}

/// One row per grid point, in grid order; invalid points carry a skip reason.
pub fn theory_table(points: &[(MixtureSpec, f64)]) -> Vec<TheoryRow> {
    points.par_iter().map(|(s, e)| theory_row(s, *e)).collect()
}

const COLUMNS: [&str; 20] = [
    "d",
    "m",
    "eta",
    "gamma",
    "sigma",
    "k_ratio",
    "eps",
    "b_nat",
    "b_rob",
    "nat_std_minus",
    "nat_std_plus",
    "rob_std_minus",
    "rob_std_plus",
    "rob_rob_minus",
    "rob_rob_plus",
    "delta_minus",
    "delta_plus",
    "gap_holds",
    "skip_reason",
    "status",
];

/// CSV with a leading `#` row documenting the columns.
pub fn write_theory_csv<W: Write>(rows: &[TheoryRow], mut w: W) -> Result<()> {
    writeln!(
        w,
        "# d,m,eta,gamma,sigma,k_ratio,eps: mixture and radius; b_nat/b_rob: optimal intercepts of the \
         natural/robust all-ones classifiers; nat_std/rob_std: class-wise standard errors of the natural/robust \
         models; rob_rob: robust errors of the robust model; delta = rob_std - nat_std; gap_holds: non-robust-feature \
         rows only, whether class +1 loses more accuracy than class -1; status: ok or skipped"
    )?;
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(COLUMNS).map_err(csv_err)?;
    for r in rows {
        let s = &r.spec;
        let mut cells = vec![
            s.d.to_string(),
            s.m.to_string(),
            format_f64(s.eta),
            format_f64(s.gamma),
            format_f64(s.sigma),
            format_f64(s.k_ratio),
            format_f64(r.eps),
        ];
        match &r.values {
            Some(v) => {
                for x in [
                    v.b_nat,
                    v.b_rob,
                    v.natural_std.err_minus,
                    v.natural_std.err_plus,
                    v.robust_std.err_minus,
                    v.robust_std.err_plus,
                    v.robust_rob.err_minus,
                    v.robust_rob.err_plus,
                    v.delta_minus,
                    v.delta_plus,
                ] {
                    cells.push(format_f64(x));
                }
                cells.push(v.gap_holds.map(|g| g.to_string()).unwrap_or_default());
                cells.push(String::new());
                cells.push("ok".into());
            }
            None => {
                cells.extend(std::iter::repeat_n(String::new(), 11));
                cells.push(r.skip_reason.clone().unwrap_or_default());
                cells.push("skipped".into());
            }
        }
        out.write_record(&cells).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> crate::error::Error {
    crate::error::Error::Io(std::io::Error::other(e))
}
