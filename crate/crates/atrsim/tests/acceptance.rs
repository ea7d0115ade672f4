//! Acceptance suite: one printed pass/fail line per criterion.
//!
//! Runs without the default test harness so every line is always visible
//! in `cargo test` output. Exits non-zero if any criterion fails.

use atrsim::attack::{match_count_rate, optimize_attack, AttackConfig, GuessStrategy, RateConstraint};
use atrsim::countermeasures::{
    afterpulse_from_counts, average_photocurrent, photocurrent_alarm, removed_gate_check,
    timing_monitor, jitter_sensitivity, IlluminationSpec, Verdict,
};
use atrsim::detector::DetectorModel;
use atrsim::profiles::{
    builtin_anchor_sets, builtin_model, CHARGE_FULL, CHARGE_HALF, NORMAL_CLICK_RATE_HZ,
    NORMAL_PHOTOCURRENT_NA,
};
use atrsim::protocol::{
    interference_flux, qber_eq1, qber_eq2, run_session, PhaseDiff, SessionConfig, SessionReport,
};

type Check = std::result::Result<String, String>;

fn approx(label: &str, got: f64, want: f64, tol: f64) -> std::result::Result<(), String> {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{label}: got {got:.6}, want {want:.6} ± {tol:.6}"))
    }
}

/// Attack session config used by criteria 5–7, mirroring the CLI defaults.
fn attack_session(model: &DetectorModel, gates: u64, duty: f64) -> SessionConfig {
    SessionConfig {
        gate_rate_hz: 1e9 / model.surface.gate_period_ns,
        session_gates: gates,
        alice_flux: 0.1,
        channel_transmittance: 1.0,
        phase_error_floor: 0.0032,
        attack: Some(AttackConfig {
            target_delay_ns: 1.16,
            full_flux: 890.0,
            resend_rate_hz: 1e6,
            duty_factor: duty,
            eve_detector: None,
            eve_receive_flux: 0.1,
            guess_strategy: GuessStrategy::ConclusiveOnly,
            eve_phase_noise_rad: 0.0,
        }),
        record_rounds: false,
    }
}

fn normal_session(model: &DetectorModel, gates: u64) -> SessionConfig {
    let mut cfg = attack_session(model, gates, 0.0);
    cfg.attack = None;
    cfg
}

/// Duty factor that matches Bob's photon-click rate under attack to the
/// observed normal photon-click rate, accounting for the matched-port
/// flux loss from the phase-error floor.
fn matched_duty(
    model: &DetectorModel,
    cfg: &SessionConfig,
    normal: &SessionReport,
) -> atrsim::Result<f64> {
    let attack = cfg.attack.as_ref().expect("attack config");
    let photon_rate =
        normal.photon_clicks as f64 / normal.total_gates as f64 * cfg.gate_rate_hz;
    let mut effective = attack.clone();
    effective.full_flux = attack.full_flux * (1.0 - cfg.phase_error_floor);
    match_count_rate(model, &effective, photon_rate)
}

fn criterion_1() -> Check {
    approx("qber_eq2(0.262, 0.00083)", qber_eq2(0.262, 0.00083).unwrap(), 0.00315, 0.0002)?;
    approx("qber_eq2(0.976, 0.449)", qber_eq2(0.976, 0.449).unwrap(), 0.240, 0.005)?;
    approx("qber_eq2(0.313, 0.0056)", qber_eq2(0.313, 0.0056).unwrap(), 0.0173, 0.001)?;
    Ok("closed-form QBER matches all three published operating points".into())
}

fn criterion_2() -> Check {
    let avg = average_photocurrent(9110.0, 0.215, 0.00107, 0.287, 33.832).unwrap();
    approx("average_photocurrent", avg, 5.6, 0.1)?;
    if avg > 2.0 * NORMAL_PHOTOCURRENT_NA {
        return Err(format!("{avg:.3} nA exceeds 2x the {NORMAL_PHOTOCURRENT_NA} nA baseline"));
    }
    Ok(format!("attack photocurrent {avg:.3} nA vs {NORMAL_PHOTOCURRENT_NA} nA baseline"))
}

fn criterion_3() -> Check {
    let mut worst: f64 = 0.0;
    for set in builtin_anchor_sets() {
        let model = builtin_model(&set.detector_name)
            .ok_or_else(|| format!("no builtin model for {}", set.detector_name))?;
        for row in &set.rows {
            let p = model
                .detection_probability(row.delay_ns, row.flux)
                .map_err(|e| format!("{}: {e}", set.detector_name))?;
            let resid = (p - row.prob).abs();
            worst = worst.max(resid);
            if resid > 0.02 {
                return Err(format!(
                    "{} anchor (delay {}, flux {}): residual {:.4} > 0.02",
                    set.detector_name, row.delay_ns, row.flux, resid
                ));
            }
        }
    }
    // Monotonicity sweep: probability must not decrease with flux at any
    // fixed delay, and must not increase with delay across the transition
    // region at any fixed flux.
    let model = builtin_model("id201").unwrap();
    let surface = &model.surface;
    let (d_lo, d_hi) = (surface.min_delay_ns(), surface.max_delay_ns());
    let atr_lo = surface.gate_width_ns / 2.0;
    let n = 100usize;
    let eps = 1e-12;
    let flux_at = |j: usize| 0.01 * (2000.0f64 / 0.01).powf(j as f64 / (n - 1) as f64);
    for i in 0..n {
        let delay = d_lo + (d_hi - d_lo) * i as f64 / (n - 1) as f64;
        let mut prev = 0.0;
        for j in 0..n {
            let p = surface.probability(delay, flux_at(j)).map_err(|e| e.to_string())?;
            if j > 0 && p + eps < prev {
                return Err(format!("probability decreased with flux at grid cell ({i},{j})"));
            }
            prev = p;
        }
    }
    for j in 0..n {
        let flux = flux_at(j);
        let mut prev = 1.0;
        for i in 0..n {
            let delay = atr_lo + (d_hi - atr_lo) * i as f64 / (n - 1) as f64;
            let p = surface.probability(delay, flux).map_err(|e| e.to_string())?;
            if i > 0 && p > prev + eps {
                return Err(format!("probability increased with delay at grid cell ({i},{j})"));
            }
            prev = p;
        }
    }
    Ok(format!(
        "builtin anchors reproduced (max residual {worst:.4}); 100x100 monotonicity sweep clean"
    ))
}

fn criterion_4() -> Check {
    let model = builtin_model("id201").unwrap();
    let rows = jitter_sensitivity(model, &[19.0, 65.0], 1.16, 890.0).map_err(|e| e.to_string())?;
    approx("P_full at 19 ps", rows[0].p_full, 0.262, 0.03)?;
    approx("P_half at 19 ps", rows[0].p_half, 0.00083, 0.005)?;
    approx("QBER at 19 ps", rows[0].qber_pred, 0.0031, 0.005)?;
    approx("P_full at 65 ps", rows[1].p_full, 0.976, 0.03)?;
    approx("P_half at 65 ps", rows[1].p_half, 0.449, 0.03)?;
    approx("QBER at 65 ps", rows[1].qber_pred, 0.24, 0.01)?;
    Ok(format!(
        "19 ps -> ({:.3}, {:.5}), 65 ps -> ({:.3}, {:.3}), QBER {:.2}% -> {:.1}%",
        rows[0].p_full,
        rows[0].p_half,
        rows[1].p_full,
        rows[1].p_half,
        100.0 * rows[0].qber_pred,
        100.0 * rows[1].qber_pred
    ))
}

/// Shared state: criterion 5 runs the big sessions, criterion 7 reuses
/// their click-time samples.
struct BigSessions {
    normal: SessionReport,
    attack: SessionReport,
}

fn run_big_sessions() -> std::result::Result<BigSessions, String> {
    let model = builtin_model("id201").unwrap();
    const GATES: u64 = 10_000_000;
    let normal_cfg = normal_session(model, GATES);
    let normal = run_session(&normal_cfg, model, 11).map_err(|e| e.to_string())?;
    let mut attack_cfg = attack_session(model, GATES, 0.0);
    let duty = matched_duty(model, &attack_cfg, &normal).map_err(|e| e.to_string())?;
    attack_cfg.attack.as_mut().unwrap().duty_factor = duty;
    let attack = run_session(&attack_cfg, model, 12).map_err(|e| e.to_string())?;
    Ok(BigSessions { normal, attack })
}

fn criterion_5(big: &BigSessions) -> Check {
    let model = builtin_model("id201").unwrap();
    let normal = &big.normal;
    let attack = &big.attack;

    // Closed-form prediction at the fluxes Bob actually receives on
    // matched-basis rounds.
    let floor = 0.0032;
    let p_full = model
        .detection_probability(1.16, 890.0 * (1.0 - floor))
        .map_err(|e| e.to_string())?;
    let p_half = model.detection_probability(1.16, 445.0).map_err(|e| e.to_string())?;
    let predicted = qber_eq2(p_full, p_half).unwrap();
    let measured = attack.qber_eq1.ok_or("attack session produced no counts")?;
    let trials = 2.0 * attack.counts_eve_bob.iter().sum::<u64>() as f64;
    let sigma = (predicted * (1.0 - predicted) / trials).sqrt();
    if (measured - predicted).abs() > 4.0 * sigma {
        return Err(format!(
            "QBER {measured:.5} vs prediction {predicted:.5} differs by more than 4 sigma ({:.1e})",
            4.0 * sigma
        ));
    }

    let rate_diff = (attack.total_clicks as f64 - normal.total_clicks as f64).abs()
        / normal.total_clicks as f64;
    if rate_diff > 0.01 {
        return Err(format!(
            "click rate off by {:.2}% ({} vs {} clicks)",
            100.0 * rate_diff,
            attack.total_clicks,
            normal.total_clicks
        ));
    }

    let evek = attack.eve_knowledge_fraction.ok_or("no sifted key under attack")?;
    if evek <= 0.99 {
        return Err(format!("eve_knowledge_fraction {evek:.4} <= 0.99"));
    }

    for i in 0..4 {
        let (a, n) = (attack.counts_alice_bob[i], normal.counts_alice_bob[i]);
        let z = (a as f64 - n as f64) / ((a + n).max(1) as f64).sqrt();
        if z.abs() > 4.0 {
            return Err(format!(
                "sender-receiver histogram bin {i}: {a} vs {n} (z = {z:.2})"
            ));
        }
    }
    Ok(format!(
        "QBER {:.3}% (predicted {:.3}%), rate diff {:.2}%, Eve knowledge {:.4}, histogram bins within 4 sigma",
        100.0 * measured,
        100.0 * predicted,
        100.0 * rate_diff,
        evek
    ))
}

fn criterion_6() -> Check {
    let model = builtin_model("homemade-1mhz").unwrap();
    let (delay, flux) = (1.09, 890.0);

    // Photocurrent monitor at the calibrated attack point.
    let p_full = model.detection_probability(delay, flux).map_err(|e| e.to_string())?;
    let p_half = model.detection_probability(delay, flux / 2.0).map_err(|e| e.to_string())?;
    let current =
        average_photocurrent(NORMAL_CLICK_RATE_HZ, p_full, p_half, CHARGE_FULL, CHARGE_HALF)
            .map_err(|e| e.to_string())?;
    if photocurrent_alarm(current, NORMAL_PHOTOCURRENT_NA, 2.0) != Verdict::Pass {
        return Err(format!("photocurrent {current:.3} nA trips the 2x monitor"));
    }

    // Afterpulse ratio measured from a simulated attack session. This
    // detector was characterized only at the attack delay, so duty-match
    // against the published normal click rate instead of a simulated
    // baseline.
    const GATES: u64 = 2_000_000;
    let mut cfg = attack_session(model, GATES, 0.0);
    {
        let attack = cfg.attack.as_mut().unwrap();
        attack.target_delay_ns = delay;
        attack.full_flux = flux;
    }
    let duty = {
        let mut effective = cfg.attack.clone().unwrap();
        effective.full_flux = flux * (1.0 - cfg.phase_error_floor);
        match_count_rate(model, &effective, NORMAL_CLICK_RATE_HZ).map_err(|e| e.to_string())?
    };
    cfg.attack.as_mut().unwrap().duty_factor = duty;
    let report = run_session(&cfg, model, 22).map_err(|e| e.to_string())?;
    let ratio = afterpulse_from_counts(report.photon_clicks, report.afterpulse_clicks)
        .map_err(|e| e.to_string())?;
    approx("afterpulse ratio", ratio, 0.0057, 0.002)?;
    if ratio > 0.01 {
        return Err(format!("afterpulse ratio {ratio:.4} > 1%"));
    }

    // Removed-gate check: 5e5 periods x 2 pulses = 1e6 illumination slots.
    let illum = IlluminationSpec { pulses_per_period: 2, flux, delay_ns: delay };
    let removed =
        removed_gate_check(model, illum, 0.5, 500_000, 31).map_err(|e| e.to_string())?;
    if removed.removed_gate_clicks != 0 {
        return Err(format!(
            "{} photon clicks landed in removed-gate slots",
            removed.removed_gate_clicks
        ));
    }
    if removed.removed_gates == 0 {
        return Err("no gates were removed; check is vacuous".into());
    }
    Ok(format!(
        "photocurrent {current:.3} nA (<= 2x baseline), afterpulse {:.2}%, 0 clicks in {} removed gates",
        100.0 * ratio,
        removed.removed_gates
    ))
}

fn criterion_7(big: &BigSessions) -> Check {
    let model = builtin_model("id201").unwrap();
    let normal_ref = &big.normal.click_times_ps;
    let attack_times = &big.attack.click_times_ps;
    if normal_ref.len() < 10_000 || attack_times.len() < 10_000 {
        return Err(format!(
            "need >= 10^4 click samples, have {} normal / {} attack",
            normal_ref.len(),
            attack_times.len()
        ));
    }

    let on_attack = timing_monitor(attack_times, normal_ref, 1.0);
    if on_attack.verdict != Verdict::Alarm {
        return Err(format!("monitor failed to alarm on the attack session: {on_attack:?}"));
    }
    approx("attack center shift (ns)", on_attack.center_shift_ns, 0.043, 0.005)?;

    // Independent normal session for the false-positive side.
    let second = run_session(&normal_session(model, 2_000_000), model, 41)
        .map_err(|e| e.to_string())?;
    if second.click_times_ps.len() < 10_000 {
        return Err(format!("second normal session only has {} samples", second.click_times_ps.len()));
    }
    let on_normal = timing_monitor(&second.click_times_ps, normal_ref, 1.0);
    if on_normal.verdict != Verdict::Pass {
        return Err(format!("monitor false-positive on a normal session: {on_normal:?}"));
    }
    Ok(format!(
        "alarm on attack (shift {:.4} ns, support {:.3} ns vs {:.3} ns), pass on normal",
        on_attack.center_shift_ns, on_attack.support_width_ns, on_attack.reference_width_ns
    ))
}

fn criterion_8() -> Check {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);

    // Count-formula consistency: histograms built from exact attack-round
    // proportions (P_f, P_h, 0, P_h) must reproduce the closed form.
    const SCALE: f64 = 1e12;
    for _ in 0..10_000 {
        let p_full: f64 = rng.gen_range(1e-6..1.0);
        let p_half: f64 = rng.gen_range(0.0..p_full);
        let counts = [
            (p_full * SCALE).round() as u64,
            (p_half * SCALE).round() as u64,
            0,
            (p_half * SCALE).round() as u64,
        ];
        let direct = qber_eq2(p_full, p_half).unwrap();
        let from_counts = qber_eq1(&counts).unwrap();
        if (direct - from_counts).abs() > 1e-9 {
            return Err(format!(
                "count formula {from_counts} != closed form {direct} at ({p_full}, {p_half})"
            ));
        }
    }

    // Interference halving: a 90-degree phase difference splits the pulse
    // exactly in half.
    for _ in 0..1000 {
        let flux: f64 = rng.gen_range(0.0..2000.0);
        if interference_flux(flux, PhaseDiff::D90) != 0.5 * flux {
            return Err(format!("halving law violated at flux {flux}"));
        }
    }

    // Seeded determinism: identical (config, seed) must serialize to
    // byte-identical reports.
    let model = builtin_model("id201").unwrap();
    let cfg = {
        let mut c = attack_session(model, 100_000, 0.1);
        c.record_rounds = false;
        c
    };
    let a = serde_json::to_vec(&run_session(&cfg, model, 7).map_err(|e| e.to_string())?).unwrap();
    let b = serde_json::to_vec(&run_session(&cfg, model, 7).map_err(|e| e.to_string())?).unwrap();
    if a != b {
        return Err("two runs with the same seed produced different reports".into());
    }

    // Optimizer soundness: every reported QBER must re-derive from the
    // detector surface.
    let delays = [1.0, 1.08, 1.16, 1.21];
    let fluxes = [200.0, 445.0, 890.0, 1500.0];
    let rate = RateConstraint { normal_click_rate_hz: NORMAL_CLICK_RATE_HZ, resend_rate_hz: 1e6 };
    let candidates =
        optimize_attack(model, &delays, &fluxes, 1.0, rate).map_err(|e| e.to_string())?;
    if candidates.is_empty() {
        return Err("optimizer returned no candidates".into());
    }
    for c in &candidates {
        let p_full = model.detection_probability(c.delay_ns, c.flux).map_err(|e| e.to_string())?;
        let p_half =
            model.detection_probability(c.delay_ns, c.flux / 2.0).map_err(|e| e.to_string())?;
        let expect = qber_eq2(p_full, p_half).unwrap();
        if (c.qber_pred - expect).abs() > 1e-12 {
            return Err(format!(
                "candidate at ({}, {}) reports QBER {} but surface gives {}",
                c.delay_ns, c.flux, c.qber_pred, expect
            ));
        }
    }

    Ok("count-formula identity, halving law, seeded determinism, optimizer soundness".into())
}

fn main() {
    let mut failures = 0;
    let mut report = |idx: usize, label: &str, outcome: Check| match outcome {
        Ok(detail) => println!("criterion {idx} ({label}): PASS - {detail}"),
        Err(detail) => {
            failures += 1;
            println!("criterion {idx} ({label}): FAIL - {detail}");
        }
    };

    report(1, "closed-form QBER", criterion_1());
    report(2, "photocurrent formula", criterion_2());
    report(3, "calibration fidelity", criterion_3());
    report(4, "jitter study", criterion_4());

    match run_big_sessions() {
        Ok(big) => {
            report(5, "end-to-end attack session", criterion_5(&big));
            report(6, "stealth triple", criterion_6());
            report(7, "timing countermeasure", criterion_7(&big));
        }
        Err(e) => {
            report(5, "end-to-end attack session", Err(e.clone()));
            report(6, "stealth triple", criterion_6());
            report(7, "timing countermeasure", Err(format!("session setup failed: {e}")));
        }
    }
    report(8, "property suite", criterion_8());

    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
