//! Plug-and-play phase-encoded BB84 session engine with a single gated SPD.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{eve_measure, AttackConfig, GuessStrategy};
use crate::detector::{simulate_gate_with_probability, ClickCause, DetectorModel, DetectorState};
use crate::error::{Error, Result};

/// The four BB84 modulation phases. Kept as an enum so phase arithmetic is
/// exact: the destructive port really gets zero interference flux.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    P0,
    P90,
    P180,
    P270,
}

pub const PHASES: [Phase; 4] = [Phase::P0, Phase::P90, Phase::P180, Phase::P270];

/// Basis {0, π} vs {π/2, 3π/2}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    Rectilinear,
    Diagonal,
}

impl Phase {
    pub fn radians(self) -> f64 {
        use std::f64::consts::FRAC_PI_2;
        match self {
            Phase::P0 => 0.0,
            Phase::P90 => FRAC_PI_2,
            Phase::P180 => 2.0 * FRAC_PI_2,
            Phase::P270 => 3.0 * FRAC_PI_2,
        }
    }

    fn quarter_turns(self) -> u8 {
        match self {
            Phase::P0 => 0,
            Phase::P90 => 1,
            Phase::P180 => 2,
            Phase::P270 => 3,
        }
    }

    fn from_quarter_turns(q: u8) -> Phase {
        match q % 4 {
            0 => Phase::P0,
            1 => Phase::P90,
            2 => Phase::P180,
            _ => Phase::P270,
        }
    }

    /// Phase difference `self − other`, exact on the four-element group.
    pub fn diff(self, other: Phase) -> PhaseDiff {
        match (4 + self.quarter_turns() - other.quarter_turns()) % 4 {
            0 => PhaseDiff::D0,
            1 => PhaseDiff::D90,
            2 => PhaseDiff::D180,
            _ => PhaseDiff::D270,
        }
    }

    pub fn basis(self) -> Basis {
        match self {
            Phase::P0 | Phase::P180 => Basis::Rectilinear,
            Phase::P90 | Phase::P270 => Basis::Diagonal,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Phase::P0 | Phase::P90 => 0,
            Phase::P180 | Phase::P270 => 1,
        }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Phase {
        Phase::from_quarter_turns(rng.gen_range(0..4u8))
    }
}

/// Phase difference, index into the count histogram (C₀, C_{π/2}, C_π,
/// C_{3π/2}).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseDiff {
    D0,
    D90,
    D180,
    D270,
}

impl PhaseDiff {
    pub fn index(self) -> usize {
        match self {
            PhaseDiff::D0 => 0,
            PhaseDiff::D90 => 1,
            PhaseDiff::D180 => 2,
            PhaseDiff::D270 => 3,
        }
    }
}

/// Origin of an optical pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseOrigin {
    Alice,
    Eve,
}

/// One optical pulse arriving at a detector gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseFrame {
    pub phase: Phase,
    /// Mean photon number of the pulse.
    pub flux: f64,
    /// Arrival time relative to the gate zero point.
    pub delay_ns: f64,
    pub origin: PulseOrigin,
}

/// Interference flux at the single-SPD port: full_flux · cos²(Δφ/2),
/// computed exactly on the four-phase group.
pub fn interference_flux(full_flux: f64, dphi: PhaseDiff) -> f64 {
    match dphi {
        PhaseDiff::D0 => full_flux,
        PhaseDiff::D90 | PhaseDiff::D270 => full_flux / 2.0,
        PhaseDiff::D180 => 0.0,
    }
}

/// Interference flux with an apparatus phase-error floor: a fraction
/// `floor` of the light leaks to the opposite interferometer port, and an
/// optional continuous phase offset (radians) is added to the modulated
/// difference.
pub fn interference_flux_imperfect(
    full_flux: f64,
    dphi: PhaseDiff,
    floor: f64,
    phase_offset_rad: f64,
) -> f64 {
    let transmitted = if phase_offset_rad == 0.0 {
        match dphi {
            PhaseDiff::D0 => 1.0,
            PhaseDiff::D90 | PhaseDiff::D270 => 0.5,
            PhaseDiff::D180 => 0.0,
        }
    } else {
        let angle = dphi.index() as f64 * std::f64::consts::FRAC_PI_2 + phase_offset_rad;
        (angle / 2.0).cos().powi(2)
    };
    full_flux * ((1.0 - floor) * transmitted + floor * (1.0 - transmitted))
}

/// One protocol round, for small traced sessions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round_index: u64,
    pub alice_phase: Phase,
    pub eve_phase: Option<Phase>,
    pub bob_phase: Phase,
    pub flux_at_spd: f64,
    pub click: bool,
    pub click_time_ps: Option<f64>,
    pub sifted: bool,
    pub error: bool,
}

/// Session parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionConfig {
    pub gate_rate_hz: f64,
    pub session_gates: u64,
    /// Alice's mean photon number per pulse under normal operation.
    pub alice_flux: f64,
    pub channel_transmittance: f64,
    /// Fraction of flux leaking to the wrong interferometer port.
    pub phase_error_floor: f64,
    pub attack: Option<AttackConfig>,
    /// Collect per-round records (memory-heavy; for traces and small runs).
    #[serde(default)]
    pub record_rounds: bool,
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.channel_transmittance) {
            return Err(Error::Validation(
                "channel_transmittance must be in [0,1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.phase_error_floor) {
            return Err(Error::Validation("phase_error_floor must be in [0,1]".into()));
        }
        if self.alice_flux < 0.0 || self.gate_rate_hz <= 0.0 {
            return Err(Error::Validation(
                "alice_flux must be >= 0 and gate_rate_hz > 0".into(),
            ));
        }
        if let Some(attack) = &self.attack {
            attack.validate()?;
        }
        Ok(())
    }
}

/// Per-run tallies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionReport {
    /// Clicks by Eve–Bob phase difference (attack rounds only).
    pub counts_eve_bob: [u64; 4],
    /// Clicks by Alice–Bob phase difference (photon-caused only).
    pub counts_alice_bob: [u64; 4],
    /// Dark and afterpulse clicks, not attributable to a phase difference.
    pub unattributed_clicks: u64,
    pub total_gates: u64,
    pub total_clicks: u64,
    pub photon_clicks: u64,
    pub dark_clicks: u64,
    pub afterpulse_clicks: u64,
    /// Count-histogram QBER on the primary histogram (Eve–Bob under
    /// attack, else Alice–Bob).
    pub qber_eq1: Option<f64>,
    /// Monte Carlo sifted QBER, Alice vs Bob.
    pub qber_sifted: Option<f64>,
    pub sifted_length: u64,
    pub sifted_errors: u64,
    /// Fraction of Bob's sifted bits Eve predicts correctly.
    pub eve_knowledge_fraction: Option<f64>,
    pub click_rate_hz: f64,
    /// Click timestamps (ps, gate-relative) for the timing monitor.
    pub click_times_ps: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub rounds: Vec<RoundRecord>,
}

/// QBER per the count-histogram formula:
/// (C_{3π/2} + C_{π/2} + 2·C_π) / (2·(C₀ + C_{π/2} + C_π + C_{3π/2})).
pub fn qber_eq1(counts: &[u64; 4]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Undefined("all phase-difference counts are zero".into()));
    }
    let num = counts[3] as f64 + counts[1] as f64 + 2.0 * counts[2] as f64;
    Ok(num / (2.0 * total as f64))
}

/// Closed-form attack QBER: P_h / (P_f + 2·P_h).
pub fn qber_eq2(p_full: f64, p_half: f64) -> Result<f64> {
    let den = p_full + 2.0 * p_half;
    if den <= 0.0 {
        return Err(Error::Undefined(
            "p_full + 2·p_half must be positive".into(),
        ));
    }
    Ok(p_half / den)
}

/// Sift: keep clicked rounds with matching Alice/Bob bases; count bit
/// disagreements.
pub fn sift(rounds: &[RoundRecord]) -> (u64, u64) {
    let mut kept = 0;
    let mut errors = 0;
    for r in rounds {
        if r.click && r.alice_phase.basis() == r.bob_phase.basis() {
            kept += 1;
            if r.alice_phase.bit() != r.bob_phase.bit() {
                errors += 1;
            }
        }
    }
    (kept, errors)
}

/// Detection-probability cache: sessions touch only a handful of distinct
/// (delay, flux) pairs, and each jitter-convolved evaluation is a 201-point
/// quadrature.
struct ProbCache<'a> {
    model: &'a DetectorModel,
    map: HashMap<(u64, u64), f64>,
}

impl<'a> ProbCache<'a> {
    fn new(model: &'a DetectorModel) -> Self {
        ProbCache {
            model,
            map: HashMap::new(),
        }
    }

    fn get(&mut self, delay_ns: f64, flux: f64) -> Result<f64> {
        let key = (delay_ns.to_bits(), flux.to_bits());
        if let Some(&p) = self.map.get(&key) {
            return Ok(p);
        }
        let p = self.model.detection_probability(delay_ns, flux)?;
        self.map.insert(key, p);
        Ok(p)
    }
}

/// Run one BB84 session (with or without an eavesdropper) against the
/// given detector. Deterministic for a fixed (config, seed).
pub fn run_session(
    config: &SessionConfig,
    detector: &DetectorModel,
    seed: u64,
) -> Result<SessionReport> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cache = ProbCache::new(detector);
    let mut state = DetectorState::new();

    // Per-round resend probability that realizes the configured duty
    // factor: Eve's switch passes duty·M pulses per second, but only
    // eligible (conclusive, under conclusive_only) rounds can carry one.
    let resend_prob = match &config.attack {
        Some(attack) => {
            let p_eligible = match attack.guess_strategy {
                GuessStrategy::ConclusiveOnly => attack.conclusive_probability()?,
                GuessStrategy::AlwaysGuess => 1.0,
            };
            let p = attack.duty_factor * (attack.resend_rate_hz / config.gate_rate_hz);
            if p > p_eligible * (1.0 + 1e-9) {
                return Err(Error::InfeasibleRate {
                    required_duty: p / p_eligible,
                    shortfall: p - p_eligible,
                });
            }
            (p / p_eligible).min(1.0)
        }
        None => 0.0,
    };

    let mut report = SessionReport {
        counts_eve_bob: [0; 4],
        counts_alice_bob: [0; 4],
        unattributed_clicks: 0,
        total_gates: config.session_gates,
        total_clicks: 0,
        photon_clicks: 0,
        dark_clicks: 0,
        afterpulse_clicks: 0,
        qber_eq1: None,
        qber_sifted: None,
        sifted_length: 0,
        sifted_errors: 0,
        eve_knowledge_fraction: None,
        click_rate_hz: 0.0,
        click_times_ps: Vec::new(),
        rounds: Vec::new(),
    };
    let mut eve_correct = 0u64;
    let mut eve_scored = 0u64;

    for gate in 0..config.session_gates {
        let alice_phase = Phase::sample(&mut rng);
        let bob_phase = Phase::sample(&mut rng);

        // Work out the pulse that actually reaches Bob's SPD this gate.
        let mut eve_phase: Option<Phase> = None;
        let frame: Option<PulseFrame> = match &config.attack {
            Some(attack) => {
                // Intercept-resend: Alice's pulse terminates at Eve.
                let outcome = eve_measure(alice_phase, attack, &mut rng)?;
                let eligible = match attack.guess_strategy {
                    GuessStrategy::ConclusiveOnly => outcome.conclusive,
                    GuessStrategy::AlwaysGuess => true,
                };
                if eligible && rng.gen::<f64>() < resend_prob {
                    let guess = outcome
                        .eve_measured_phase
                        .unwrap_or_else(|| Phase::sample(&mut rng));
                    eve_phase = Some(guess);
                    let mut dphi_offset = 0.0;
                    if attack.eve_phase_noise_rad > 0.0 {
                        dphi_offset = gauss(&mut rng) * attack.eve_phase_noise_rad;
                    }
                    let flux = interference_flux_imperfect(
                        attack.full_flux,
                        guess.diff(bob_phase),
                        config.phase_error_floor,
                        dphi_offset,
                    );
                    Some(PulseFrame {
                        phase: guess,
                        flux,
                        delay_ns: attack.target_delay_ns,
                        origin: PulseOrigin::Eve,
                    })
                } else {
                    None
                }
            }
            None => {
                let flux = interference_flux_imperfect(
                    config.alice_flux * config.channel_transmittance,
                    alice_phase.diff(bob_phase),
                    config.phase_error_floor,
                    0.0,
                );
                Some(PulseFrame {
                    phase: alice_phase,
                    flux,
                    delay_ns: 0.0,
                    origin: PulseOrigin::Alice,
                })
            }
        };

        let event = match &frame {
            Some(f) => {
                let p = cache.get(f.delay_ns, f.flux)?;
                simulate_gate_with_probability(detector, &mut state, gate, Some((f, p)), &mut rng)?
            }
            None => simulate_gate_with_probability(detector, &mut state, gate, None, &mut rng)?,
        };

        let clicked = event.is_some();
        let mut click_time = None;
        if let Some(ev) = &event {
            report.total_clicks += 1;
            report.click_times_ps.push(ev.click_time_ps);
            click_time = Some(ev.click_time_ps);
            match ev.cause {
                ClickCause::Photon => {
                    report.photon_clicks += 1;
                    report.counts_alice_bob[alice_phase.diff(bob_phase).index()] += 1;
                    if let Some(e) = eve_phase {
                        report.counts_eve_bob[e.diff(bob_phase).index()] += 1;
                    }
                }
                ClickCause::Dark => {
                    report.dark_clicks += 1;
                    report.unattributed_clicks += 1;
                }
                ClickCause::Afterpulse => {
                    report.afterpulse_clicks += 1;
                    report.unattributed_clicks += 1;
                }
            }
        }

        // Sifting on the announced Alice/Bob bases.
        let sifted = clicked && alice_phase.basis() == bob_phase.basis();
        let error = sifted && alice_phase.bit() != bob_phase.bit();
        if sifted {
            report.sifted_length += 1;
            if error {
                report.sifted_errors += 1;
            }
            if config.attack.is_some() {
                // Eve's prediction of Bob's bit after the basis is public:
                // her resend phase if it lies in that basis, else a coin.
                let predicted = match eve_phase {
                    Some(e) if e.basis() == bob_phase.basis() => e.bit(),
                    _ => rng.gen_range(0..2u8) as u8,
                };
                eve_scored += 1;
                if predicted == bob_phase.bit() {
                    eve_correct += 1;
                }
            }
        }

        if config.record_rounds {
            report.rounds.push(RoundRecord {
                round_index: gate,
                alice_phase,
                eve_phase,
                bob_phase,
                flux_at_spd: frame.map(|f| f.flux).unwrap_or(0.0),
                click: clicked,
                click_time_ps: click_time,
                sifted,
                error,
            });
        }
    }

    let primary = if config.attack.is_some() {
        &report.counts_eve_bob
    } else {
        &report.counts_alice_bob
    };
    report.qber_eq1 = qber_eq1(primary).ok();
    report.qber_sifted = if report.sifted_length > 0 {
        Some(report.sifted_errors as f64 / report.sifted_length as f64)
    } else {
        None
    };
    report.eve_knowledge_fraction = if eve_scored > 0 {
        Some(eve_correct as f64 / eve_scored as f64)
    } else {
        None
    };
    report.click_rate_hz =
        report.total_clicks as f64 / config.session_gates as f64 * config.gate_rate_hz;
    Ok(report)
}

fn gauss<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
