//! Fitting response surfaces from anchor measurements, plus CSV ingest.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::logit;
use crate::surface::{Anchor, AtrSurface, SigmoidParams};

/// Default sigmoid width (log-flux units) when a delay has too few fluxes
/// to determine one. Width 1 makes the low-flux response linear in flux,
/// which is the observed gate-interior behavior.
pub const DEFAULT_WIDTH: f64 = 1.0;

/// Dark-count floor assumed when fitting from bare anchor data.
pub const FIT_DARK_COUNT_PROB: f64 = 1e-5;

/// Default absolute fit tolerance; anchor probabilities are quoted to 2–3
/// significant figures.
pub const DEFAULT_TOLERANCE: f64 = 0.02;

/// A named set of (delay, flux, probability) calibration measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub detector_name: String,
    pub rows: Vec<Anchor>,
    pub gate_rate_hz: f64,
    pub gate_width_ns: f64,
    pub source_note: String,
}

impl AnchorSet {
    pub fn gate_period_ns(&self) -> f64 {
        1e9 / self.gate_rate_hz
    }

    /// Delays strictly past the gate's trailing edge.
    fn is_transition(&self, delay_ns: f64) -> bool {
        delay_ns > self.gate_width_ns / 2.0
    }

    pub fn validate(&self, tolerance: f64) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::Validation(format!(
                "anchor set '{}' has no rows",
                self.detector_name
            )));
        }
        for (i, a) in self.rows.iter().enumerate() {
            if !a.prob.is_finite() || !(0.0..=1.0).contains(&a.prob) {
                return Err(Error::Validation(format!(
                    "row {}: probability {} outside [0,1]",
                    i + 1,
                    a.prob
                )));
            }
            if !a.delay_ns.is_finite() || a.delay_ns < 0.0 || !a.flux.is_finite() || a.flux < 0.0 {
                return Err(Error::Validation(format!(
                    "row {}: delay and flux must be finite and >= 0",
                    i + 1
                )));
            }
        }
        // Higher flux at the same delay must not click less, beyond what
        // the fit tolerance can absorb.
        for a in &self.rows {
            for b in &self.rows {
                if a.delay_ns == b.delay_ns && a.flux < b.flux && a.prob > b.prob + tolerance {
                    return Err(Error::InconsistentAnchors(format!(
                        "at delay {} ns: probability {} at flux {} exceeds probability {} at \
                         higher flux {}",
                        a.delay_ns, a.prob, a.flux, b.prob, b.flux
                    )));
                }
                if self.is_transition(a.delay_ns)
                    && self.is_transition(b.delay_ns)
                    && a.flux == b.flux
                    && a.delay_ns < b.delay_ns
                    && b.prob > a.prob + tolerance
                {
                    return Err(Error::InconsistentAnchors(format!(
                        "at flux {}: probability rises from {} to {} between transition-region \
                         delays {} and {} ns",
                        a.flux, a.prob, b.prob, a.delay_ns, b.delay_ns
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Residual bookkeeping for a surface fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    /// (delay, flux, target, fitted, residual) per anchor, input order.
    pub residuals: Vec<AnchorResidual>,
    pub max_abs_residual: f64,
    pub converged: bool,
    pub tolerance: f64,
    pub theta_knots: Vec<(f64, f64)>,
    pub width_knots: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorResidual {
    pub delay_ns: f64,
    pub flux: f64,
    pub target: f64,
    pub fitted: f64,
    pub residual: f64,
}

fn logit_excess(p: f64, dark: f64) -> f64 {
    let q = ((p - dark) / (1.0 - dark)).clamp(1e-12, 1.0 - 1e-12);
    logit(q)
}

/// Fit an [`AtrSurface`] to an anchor set.
///
/// Gate-interior delays (inside the gate width) get the fixed
/// [`DEFAULT_WIDTH`] and an exact midpoint solve per delay. Each
/// transition-region delay with at least two fluxes gets its own (midpoint,
/// width) from a closed-form least-squares line of logit(p) against
/// ln(flux); fitting in logit space keeps near-zero and near-one anchors
/// accurate in relative terms instead of letting the large-probability
/// anchors dominate. Single-flux transition delays borrow the width of the
/// nearest fitted delay. Midpoints and widths interpolate piecewise-
/// linearly across delays.
pub fn fit_surface(anchors: &AnchorSet, tolerance: f64) -> Result<(AtrSurface, FitReport)> {
    anchors.validate(tolerance)?;
    let dark = FIT_DARK_COUNT_PROB;

    // Group anchors by delay, sorted.
    let mut delays: Vec<f64> = anchors.rows.iter().map(|a| a.delay_ns).collect();
    delays.sort_by(|a, b| a.partial_cmp(b).unwrap());
    delays.dedup();
    let rows_at = |d: f64| -> Vec<&Anchor> {
        anchors.rows.iter().filter(|a| a.delay_ns == d).collect()
    };

    let interior: Vec<f64> = delays
        .iter()
        .copied()
        .filter(|&d| !anchors.is_transition(d))
        .collect();
    let transition: Vec<f64> = delays
        .iter()
        .copied()
        .filter(|&d| anchors.is_transition(d))
        .collect();

    // First pass: per-delay regression where the slope is determined.
    let mut multi_flux: Vec<(f64, f64, f64)> = Vec::new(); // (delay, theta, width)
    for &d in &transition {
        let pts: Vec<(f64, f64)> = rows_at(d)
            .iter()
            .filter(|a| a.flux > 0.0)
            .map(|a| (a.flux.ln(), logit_excess(a.prob, dark)))
            .collect();
        let n = pts.len() as f64;
        if pts.len() < 2 {
            continue;
        }
        let x_bar = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let y_bar = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - x_bar) * (p.1 - y_bar)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - x_bar).powi(2)).sum();
        if sxx <= 0.0 || sxy <= 1e-9 * sxx {
            // All fluxes equal, or the response is flat within noise: the
            // width is not determined by this delay.
            continue;
        }
        let slope = sxy / sxx;
        let width = 1.0 / slope;
        multi_flux.push((d, x_bar - y_bar * width, width));
    }

    // Second pass: single-flux delays take the nearest fitted width (the
    // default if no delay determined one) and an exact midpoint solve at
    // their highest-flux anchor.
    let mut theta_w: Vec<(f64, f64, f64)> = Vec::with_capacity(transition.len());
    for &d in &transition {
        if let Some(&entry) = multi_flux.iter().find(|e| e.0 == d) {
            theta_w.push(entry);
            continue;
        }
        let width = multi_flux
            .iter()
            .min_by(|a, b| {
                (a.0 - d).abs().partial_cmp(&(b.0 - d).abs()).unwrap()
            })
            .map(|e| e.2)
            .unwrap_or(DEFAULT_WIDTH);
        let top = rows_at(d)
            .into_iter()
            .filter(|a| a.flux > 0.0)
            .max_by(|a, b| a.flux.partial_cmp(&b.flux).unwrap());
        if let Some(top) = top {
            let theta = top.flux.ln() - width * logit_excess(top.prob, dark);
            theta_w.push((d, theta, width));
        }
    }

    // Enforce monotone midpoints across the transition region (noisy
    // anchors may leave microscopic inversions).
    for i in 1..theta_w.len() {
        if theta_w[i].1 < theta_w[i - 1].1 {
            theta_w[i].1 = theta_w[i - 1].1;
        }
    }

    // Assemble knots: interior delays use the default width and exact
    // least-squares midpoints in logit space.
    let mut theta_knots: Vec<(f64, f64)> = Vec::new();
    for &d in &interior {
        let rows = rows_at(d);
        let mut acc = 0.0;
        let mut n = 0usize;
        for a in &rows {
            if a.flux > 0.0 {
                acc += a.flux.ln() - DEFAULT_WIDTH * logit_excess(a.prob, dark);
                n += 1;
            }
        }
        if n > 0 {
            theta_knots.push((d, acc / n as f64));
        }
    }
    for &(d, theta, _) in &theta_w {
        theta_knots.push((d, theta));
    }
    if theta_knots.is_empty() {
        return Err(Error::Validation(
            "anchor set contains no usable (flux > 0) anchors".into(),
        ));
    }

    let width_knots = if theta_w.is_empty() {
        vec![(theta_knots[0].0, DEFAULT_WIDTH)]
    } else {
        let mut knots: Vec<(f64, f64)> = Vec::new();
        if let Some(&lo) = interior.last() {
            // Hold the interior width until partway across the gap so the
            // gate-interior response stays linear in flux.
            let hi = theta_w[0].0.min(anchors.gate_width_ns / 2.0).max(lo + 1e-6);
            knots.push((lo + 0.2 * (hi - lo), DEFAULT_WIDTH));
        }
        knots.extend(theta_w.iter().map(|&(d, _, w)| (d, w)));
        knots
    };

    let peak_efficiency = interior
        .first()
        .and_then(|&d| {
            rows_at(d)
                .iter()
                .filter(|a| a.flux > 0.0)
                .map(|a| (a.prob / a.flux).min(1.0))
                .next()
        })
        .unwrap_or(0.1);

    let surface = AtrSurface {
        gate_period_ns: anchors.gate_period_ns(),
        gate_width_ns: anchors.gate_width_ns,
        peak_efficiency,
        dark_count_prob: dark,
        edge_anchors: anchors.rows.clone(),
        sigmoid_params: SigmoidParams {
            theta_knots,
            width_knots,
        },
    };

    let residuals: Vec<AnchorResidual> = anchors
        .rows
        .iter()
        .map(|a| {
            let fitted = surface.raw_probability(a.delay_ns, a.flux);
            AnchorResidual {
                delay_ns: a.delay_ns,
                flux: a.flux,
                target: a.prob,
                fitted,
                residual: fitted - a.prob,
            }
        })
        .collect();
    let max_abs_residual = residuals
        .iter()
        .map(|r| r.residual.abs())
        .fold(0.0, f64::max);
    let report = FitReport {
        converged: max_abs_residual <= tolerance,
        max_abs_residual,
        tolerance,
        theta_knots: surface.sigmoid_params.theta_knots.clone(),
        width_knots: surface.sigmoid_params.width_knots.clone(),
        residuals,
    };
    Ok((surface, report))
}

/// Parse an anchor CSV: header `delay_ns,flux_photons,probability`,
/// `#`-prefixed comment lines, `.` decimal point.
pub fn load_anchor_csv(path: &Path) -> Result<AnchorSet> {
    let text = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "anchors".into());
    parse_anchor_csv(&text, &name)
}

pub fn parse_anchor_csv(text: &str, name: &str) -> Result<AnchorSet> {
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            let expected = "delay_ns,flux_photons,probability";
            let normalized: String = line.chars().filter(|c| !c.is_whitespace()).collect();
            if normalized != expected {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected header `{expected}`, got `{line}`"),
                });
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 3 comma-separated fields, got {}", fields.len()),
            });
        }
        let mut vals = [0.0f64; 3];
        for (i, f) in fields.iter().enumerate() {
            vals[i] = f.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("`{f}` is not a number"),
            })?;
        }
        rows.push(Anchor {
            delay_ns: vals[0],
            flux: vals[1],
            prob: vals[2],
        });
    }
    if rows.is_empty() {
        return Err(Error::Validation(format!(
            "`{name}`: no data rows found"
        )));
    }
    let set = AnchorSet {
        detector_name: name.to_string(),
        rows,
        gate_rate_hz: 1e6,
        gate_width_ns: 2.0,
        source_note: "loaded from CSV".into(),
    };
    set.validate(DEFAULT_TOLERANCE)?;
    Ok(set)
}

/// Render an anchor set back to the CSV schema.
pub fn anchor_csv(set: &AnchorSet) -> String {
    let mut out = String::from("delay_ns,flux_photons,probability\n");
    for a in &set.rows {
        let _ = writeln!(out, "{},{},{}", a.delay_ns, a.flux, a.prob);
    }
    out
}
