//! Stochastic gated-mode APD detector: response surface plus dark counts,
//! afterpulsing, deadtime, timing jitter, and per-click avalanche charge.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surface::{jitter_convolved, Anchor, AtrSurface, SigmoidParams};


/// What produced a click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClickCause {
    Photon,
    Dark,
    Afterpulse,
}

/// One detector click.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub gate_index: u64,
    /// Offset of the avalanche relative to the gate zero point.
    pub click_time_ps: f64,
    pub cause: ClickCause,
    /// Charge-equivalent of the avalanche, in pA per count.
    pub charge: f64,
}

/// Truncated Gaussian response-time distribution for click timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClickTimeModel {
    pub mean_ps: f64,
    pub sigma_ps: f64,
    pub min_ps: f64,
    pub max_ps: f64,
}

impl ClickTimeModel {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sigma_ps <= 0.0 {
            return self.mean_ps.clamp(self.min_ps, self.max_ps);
        }
        // Rejection sampling is fine here: the configured supports keep the
        // acceptance rate near 1.
        loop {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen::<f64>();
            let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            let t = self.mean_ps + self.sigma_ps * z;
            if t >= self.min_ps && t <= self.max_ps {
                return t;
            }
        }
    }

    /// Mean of the truncated distribution (differs from `mean_ps` when the
    /// truncation is asymmetric).
    pub fn truncated_mean_ps(&self) -> f64 {
        if self.sigma_ps <= 0.0 {
            return self.mean_ps.clamp(self.min_ps, self.max_ps);
        }
        let a = (self.min_ps - self.mean_ps) / self.sigma_ps;
        let b = (self.max_ps - self.mean_ps) / self.sigma_ps;
        let phi = |x: f64| (-0.5 * x * x).exp() / (std::f64::consts::TAU).sqrt();
        let cdf = |x: f64| 0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2));
        self.mean_ps + self.sigma_ps * (phi(a) - phi(b)) / (cdf(b) - cdf(a))
    }
}

fn erf(x: f64) -> f64 {
    // Abramowitz & Stegun 7.1.26, |error| < 1.5e-7 — plenty for timing means.
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}

/// Per-click charge constants, in pA per count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargeConstants {
    /// i_f: charge-equivalent of a full-attack-flux avalanche.
    pub full: f64,
    /// i_h: charge-equivalent of a half-attack-flux avalanche.
    pub half: f64,
    /// Charge-equivalent of a normal single-photon avalanche.
    pub normal: f64,
}

/// Afterpulse kernel: total probability per normal click, scaled by
/// relative avalanche charge and spread geometrically over later gates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AfterpulseParams {
    pub base: f64,
    pub scaling: f64,
    /// e-folding length of the decay kernel, in gates.
    pub decay_gates: f64,
}

/// A complete single-photon detector profile. Serializes as the profile
/// JSON document (see [`DetectorModel::to_json`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ProfileDoc", from = "ProfileDoc")]
pub struct DetectorModel {
    pub name: String,
    pub surface: AtrSurface,
    pub jitter_fwhm_ps: f64,
    /// Shift of the effective gate edge per unit of jitter FWHM; see
    /// [`jitter_convolved`].
    pub edge_drift: f64,
    pub charges: ChargeConstants,
    /// Reference full attack flux used to pick the charge regime.
    pub full_flux_ref: f64,
    pub afterpulse: AfterpulseParams,
    pub deadtime_gates: u64,
    pub normal_click_time: ClickTimeModel,
    pub attack_click_time: ClickTimeModel,
}

impl DetectorModel {
    /// Jitter-convolved detection probability at the given delay and flux.
    pub fn detection_probability(&self, delay_ns: f64, flux: f64) -> Result<f64> {
        self.surface.check_delay(delay_ns)?;
        if !(flux >= 0.0) {
            return Err(Error::Validation(format!("flux must be >= 0, got {flux}")));
        }
        Ok(jitter_convolved(
            &self.surface,
            delay_ns,
            flux,
            self.jitter_fwhm_ps,
            self.edge_drift,
        ))
    }

    /// Probability with the jitter FWHM overridden (for sensitivity sweeps).
    pub fn detection_probability_with_jitter(
        &self,
        delay_ns: f64,
        flux: f64,
        fwhm_ps: f64,
    ) -> Result<f64> {
        self.surface.check_delay(delay_ns)?;
        Ok(jitter_convolved(
            &self.surface,
            delay_ns,
            flux,
            fwhm_ps,
            self.edge_drift,
        ))
    }

    /// Avalanche charge by flux regime: attack-full at >= 75 % of the
    /// reference flux, attack-half in [25 %, 75 %), normal below.
    pub fn charge_for_flux(&self, flux: f64) -> f64 {
        if flux >= 0.75 * self.full_flux_ref {
            self.charges.full
        } else if flux >= 0.25 * self.full_flux_ref {
            self.charges.half
        } else {
            self.charges.normal
        }
    }

    /// Total afterpulse probability caused by a single click.
    pub fn afterpulse_probability_of_event(&self, event: &DetectionEvent) -> f64 {
        (self.afterpulse.base * (event.charge / self.charges.normal) * self.afterpulse.scaling)
            .clamp(0.0, 1.0)
    }

    /// Whether a pulse at this delay lands past the gate's trailing edge,
    /// i.e. in the transition region where attack timing applies.
    pub fn in_transition_region(&self, delay_ns: f64) -> bool {
        delay_ns > self.surface.gate_width_ns / 2.0
    }

    /// Draw a click timestamp for a photon-induced click.
    pub fn sample_click_time<R: Rng + ?Sized>(
        &self,
        delay_ns: f64,
        _flux: f64,
        rng: &mut R,
    ) -> f64 {
        if self.in_transition_region(delay_ns) {
            self.attack_click_time.sample(rng)
        } else {
            self.normal_click_time.sample(rng)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check_prob = |v: f64, what: &str| -> Result<()> {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("{what} must be in [0,1], got {v}")));
            }
            Ok(())
        };
        check_prob(self.surface.dark_count_prob, "dark_count_prob")?;
        check_prob(self.surface.peak_efficiency, "peak_efficiency")?;
        check_prob(self.afterpulse.base, "afterpulse base")?;
        if self.jitter_fwhm_ps < 0.0 {
            return Err(Error::Validation("jitter_fwhm_ps must be >= 0".into()));
        }
        for (v, what) in [
            (self.charges.full, "charge full"),
            (self.charges.half, "charge half"),
            (self.charges.normal, "charge normal"),
        ] {
            if v < 0.0 {
                return Err(Error::Validation(format!("{what} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(ProfileDoc::from(self)).expect("profile serializes")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let doc: ProfileDoc = serde_json::from_value(value)?;
        let model = doc.into_model();
        model.validate()?;
        Ok(model)
    }
}

/// On-disk profile layout. The anchor list and sigmoid knots fully
/// determine the surface, so a profile file is self-contained.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProfileDoc {
    name: String,
    gate_period_ns: f64,
    gate_width_ns: f64,
    dark_count_prob: f64,
    peak_efficiency: f64,
    anchors: Vec<Anchor>,
    jitter_fwhm_ps: f64,
    charges: ChargeConstants,
    afterpulse: AfterpulseParams,
    sigmoid_params: SigmoidParams,
    #[serde(default)]
    edge_drift: f64,
    #[serde(default = "default_full_flux_ref")]
    full_flux_ref: f64,
    #[serde(default)]
    deadtime_gates: u64,
    #[serde(default = "default_normal_click_time")]
    normal_click_time: ClickTimeModel,
    #[serde(default = "default_attack_click_time")]
    attack_click_time: ClickTimeModel,
}

fn default_full_flux_ref() -> f64 {
    890.0
}

pub fn default_normal_click_time() -> ClickTimeModel {
    ClickTimeModel {
        mean_ps: 0.0,
        sigma_ps: 18.0,
        min_ps: -50.0,
        max_ps: 50.0,
    }
}

pub fn default_attack_click_time() -> ClickTimeModel {
    ClickTimeModel {
        mean_ps: 43.0,
        sigma_ps: 35.0,
        min_ps: -50.0,
        max_ps: 150.0,
    }
}

impl From<DetectorModel> for ProfileDoc {
    fn from(m: DetectorModel) -> Self {
        ProfileDoc::from(&m)
    }
}

impl From<ProfileDoc> for DetectorModel {
    fn from(doc: ProfileDoc) -> Self {
        doc.into_model()
    }
}

impl From<&DetectorModel> for ProfileDoc {
    fn from(m: &DetectorModel) -> Self {
        ProfileDoc {
            name: m.name.clone(),
            gate_period_ns: m.surface.gate_period_ns,
            gate_width_ns: m.surface.gate_width_ns,
            dark_count_prob: m.surface.dark_count_prob,
            peak_efficiency: m.surface.peak_efficiency,
            anchors: m.surface.edge_anchors.clone(),
            jitter_fwhm_ps: m.jitter_fwhm_ps,
            charges: m.charges,
            afterpulse: m.afterpulse,
            sigmoid_params: m.surface.sigmoid_params.clone(),
            edge_drift: m.edge_drift,
            full_flux_ref: m.full_flux_ref,
            deadtime_gates: m.deadtime_gates,
            normal_click_time: m.normal_click_time,
            attack_click_time: m.attack_click_time,
        }
    }
}

impl ProfileDoc {
    fn into_model(self) -> DetectorModel {
        DetectorModel {
            name: self.name,
            surface: AtrSurface {
                gate_period_ns: self.gate_period_ns,
                gate_width_ns: self.gate_width_ns,
                peak_efficiency: self.peak_efficiency,
                dark_count_prob: self.dark_count_prob,
                edge_anchors: self.anchors,
                sigmoid_params: self.sigmoid_params,
            },
            jitter_fwhm_ps: self.jitter_fwhm_ps,
            edge_drift: self.edge_drift,
            charges: self.charges,
            full_flux_ref: self.full_flux_ref,
            afterpulse: self.afterpulse,
            deadtime_gates: self.deadtime_gates,
            normal_click_time: self.normal_click_time,
            attack_click_time: self.attack_click_time,
        }
    }
}

/// Mutable gate-to-gate detector state: deadtime and the pending
/// afterpulse hazard left behind by earlier avalanches.
#[derive(Debug, Clone)]
pub struct DetectorState {
    /// First gate index at which the detector is live again.
    live_from: u64,
    /// Total remaining afterpulse probability; decays geometrically.
    pending_afterpulse: f64,
}

impl DetectorState {
    pub fn new() -> Self {
        DetectorState {
            live_from: 0,
            pending_afterpulse: 0.0,
        }
    }

    pub fn in_deadtime(&self, gate_index: u64) -> bool {
        gate_index < self.live_from
    }
}

impl Default for DetectorState {
    fn default() -> Self {
        Self::new()
    }
}

/// Run one detector gate: Bernoulli click from the combined photon, dark,
/// and afterpulse hazards, with cause attribution, click timestamp, and
/// charge. Updates deadtime and the afterpulse ledger in `state`.
pub fn simulate_gate<R: Rng + ?Sized>(
    model: &DetectorModel,
    state: &mut DetectorState,
    gate_index: u64,
    incident: Option<&crate::protocol::PulseFrame>,
    rng: &mut R,
) -> Result<Option<DetectionEvent>> {
    let incident = match incident {
        Some(frame) => Some((
            frame,
            model.detection_probability(frame.delay_ns, frame.flux)?,
        )),
        None => None,
    };
    simulate_gate_with_probability(model, state, gate_index, incident, rng)
}

/// [`simulate_gate`] with the incident pulse's detection probability
/// supplied by the caller (session engines cache the jitter convolution).
pub fn simulate_gate_with_probability<R: Rng + ?Sized>(
    model: &DetectorModel,
    state: &mut DetectorState,
    gate_index: u64,
    incident: Option<(&crate::protocol::PulseFrame, f64)>,
    rng: &mut R,
) -> Result<Option<DetectionEvent>> {
    // During deadtime the APD is held below breakdown: no avalanche of any
    // kind, but trapped carriers keep de-trapping.
    if state.in_deadtime(gate_index) {
        decay_afterpulse(model, state);
        return Ok(None);
    }

    let p_dark = model.surface.dark_count_prob;
    let (p_photon_excess, delay_ns, flux) = match incident {
        Some((frame, p)) => {
            // The surface already contains the dark floor; strip it so the
            // photon and dark hazards combine without double counting.
            let excess = ((p - p_dark) / (1.0 - p_dark)).max(0.0);
            (excess, frame.delay_ns, frame.flux)
        }
        None => (0.0, 0.0, 0.0),
    };
    let p_afterpulse = state.pending_afterpulse * per_gate_fraction(model);

    // Cause attribution order photon → dark → afterpulse; photon hazard
    // gets first claim so attack statistics match the surface directly.
    let mut event = None;
    if p_photon_excess > 0.0 && rng.gen::<f64>() < p_photon_excess {
        event = Some(DetectionEvent {
            gate_index,
            click_time_ps: model.sample_click_time(delay_ns, flux, rng),
            cause: ClickCause::Photon,
            charge: model.charge_for_flux(flux),
        });
    } else if p_dark > 0.0 && rng.gen::<f64>() < p_dark {
        event = Some(DetectionEvent {
            gate_index,
            click_time_ps: model.normal_click_time.sample(rng),
            cause: ClickCause::Dark,
            charge: model.charges.normal,
        });
    } else if p_afterpulse > 0.0 && rng.gen::<f64>() < p_afterpulse {
        event = Some(DetectionEvent {
            gate_index,
            click_time_ps: model.normal_click_time.sample(rng),
            cause: ClickCause::Afterpulse,
            charge: model.charges.normal,
        });
    }

    decay_afterpulse(model, state);
    if let Some(ev) = &event {
        state.pending_afterpulse =
            (state.pending_afterpulse + model.afterpulse_probability_of_event(ev)).min(1.0);
        state.live_from = gate_index + 1 + model.deadtime_gates;
    }
    Ok(event)
}

/// Fraction of the pending afterpulse hazard released at the next gate.
fn per_gate_fraction(model: &DetectorModel) -> f64 {
    if model.afterpulse.decay_gates <= 0.0 {
        1.0
    } else {
        1.0 - (-1.0 / model.afterpulse.decay_gates).exp()
    }
}

fn decay_afterpulse(model: &DetectorModel, state: &mut DetectorState) {
    state.pending_afterpulse *= 1.0 - per_gate_fraction(model);
    if state.pending_afterpulse < 1e-15 {
        state.pending_afterpulse = 0.0;
    }
}
