//! Command-line front end: characterize detectors, calibrate profiles from
//! CSV, run (attacked) BB84 sessions, evaluate countermeasures, and search
//! attack parameters. Every command writes a run manifest next to its
//! outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use atrsim::attack::{
    optimize_attack, match_count_rate, AttackConfig, GuessStrategy, RateConstraint,
};
use atrsim::calibration::{fit_surface, load_anchor_csv};
use atrsim::countermeasures::{
    afterpulse_from_counts, average_photocurrent, jitter_sensitivity, photocurrent_alarm,
    removed_gate_check, timing_monitor, IlluminationSpec, MonitorReport, Verdict,
};
use atrsim::detector::{
    AfterpulseParams, ChargeConstants, DetectorModel,
};
use atrsim::error::{Error, Result};
use atrsim::manifest::RunManifest;
use atrsim::profiles;
use atrsim::protocol::{run_session, SessionConfig, SessionReport};

#[derive(Parser)]
#[command(
    name = "atrsim",
    version,
    about = "Gated-mode SPD / BB84 simulator with transition-region attack tooling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep detection probability over delay and flux, emitting CSV.
    Characterize(CharacterizeArgs),
    /// Fit a detector profile from an anchor CSV.
    Calibrate(CalibrateArgs),
    /// Run a BB84 session with an intercept-resend attack, plus monitors.
    Attack(AttackArgs),
    /// Grid-search attack parameters under rate and QBER constraints.
    Optimize(OptimizeArgs),
    /// Run the removed-gate check and the jitter-sensitivity table.
    Monitor(MonitorArgs),
}

#[derive(Args)]
struct ProfileArg {
    /// Built-in profile name (id201, homemade-1mhz, homemade-1ghz).
    #[arg(long, conflicts_with = "profile_file")]
    profile: Option<String>,
    /// Path to a profile JSON produced by `calibrate`.
    #[arg(long)]
    profile_file: Option<PathBuf>,
}

impl ProfileArg {
    fn load(&self) -> Result<(DetectorModel, Vec<String>)> {
        if let Some(path) = &self.profile_file {
            let text = std::fs::read_to_string(path)?;
            let model = DetectorModel::from_json(serde_json::from_str(&text)?)?;
            return Ok((model, vec![path.display().to_string()]));
        }
        let name = self.profile.as_deref().unwrap_or("id201");
        profiles::builtin_model(name)
            .cloned()
            .map(|m| (m, Vec::new()))
            .ok_or_else(|| {
                Error::Validation(format!(
                    "unknown profile `{name}` (built-ins: id201, homemade-1mhz, homemade-1ghz)"
                ))
            })
    }
}

#[derive(Args)]
struct CharacterizeArgs {
    #[command(flatten)]
    profile: ProfileArg,
    #[arg(long)]
    delay_min: f64,
    #[arg(long)]
    delay_max: f64,
    #[arg(long, default_value_t = 21)]
    delay_steps: usize,
    /// Flux values to sweep (repeatable).
    #[arg(long = "flux")]
    fluxes: Vec<f64>,
    /// Override the profile's jitter FWHM (ps).
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long, default_value = "characterize.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Anchor CSV (`delay_ns,flux_photons,probability`).
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, default_value_t = atrsim::calibration::DEFAULT_TOLERANCE)]
    tolerance: f64,
    #[arg(long, default_value = "profile.json")]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy)]
enum StrategyArg {
    ConclusiveOnly,
    AlwaysGuess,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    profile: ProfileArg,
    /// Simulation seed (required: no silent nondeterminism).
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    gates: u64,
    /// Eve's resend delay inside the transition region (ns).
    #[arg(long, default_value_t = 1.16)]
    delay: f64,
    /// Eve's full resend flux (photons/pulse).
    #[arg(long, default_value_t = 890.0)]
    flux: f64,
    /// Eve's resend-capable rate M (pulses/s).
    #[arg(long, default_value_t = 1e6)]
    resend_rate: f64,
    /// Optical-switch duty factor; omit to duty-match the normal rate.
    #[arg(long)]
    duty: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    alice_flux: f64,
    #[arg(long, default_value_t = 1.0)]
    transmittance: f64,
    /// Fraction of flux leaking to the wrong interferometer port.
    #[arg(long, default_value_t = 0.0032)]
    phase_error_floor: f64,
    /// RMS phase error of Eve's modulator (radians).
    #[arg(long, default_value_t = 0.0)]
    eve_phase_noise: f64,
    #[arg(long, value_enum, default_value = "conclusive-only")]
    strategy: StrategyArg,
    /// Skip the attack entirely (normal-operation baseline run).
    #[arg(long, default_value_t = false)]
    no_attack: bool,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    profile: ProfileArg,
    #[arg(long)]
    delay_min: f64,
    #[arg(long)]
    delay_max: f64,
    #[arg(long, default_value_t = 11)]
    delay_steps: usize,
    #[arg(long = "flux")]
    fluxes: Vec<f64>,
    /// Maximum acceptable predicted QBER.
    #[arg(long, default_value_t = 0.005)]
    budget: f64,
    #[arg(long, default_value_t = profiles::NORMAL_CLICK_RATE_HZ)]
    normal_rate: f64,
    #[arg(long, default_value_t = 1e6)]
    resend_rate: f64,
    #[arg(long, default_value = "optimize.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct MonitorArgs {
    #[command(flatten)]
    profile: ProfileArg,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    periods: u64,
    /// Attack illumination flux and delay for the removed-gate check.
    #[arg(long, default_value_t = 890.0)]
    flux: f64,
    #[arg(long, default_value_t = 1.16)]
    delay: f64,
    #[arg(long, default_value_t = 0.5)]
    remove_prob: f64,
    /// Jitter FWHM values (ps) for the sensitivity table (repeatable).
    #[arg(long = "fwhm", default_values_t = vec![0.0, 19.0, 65.0])]
    fwhms: Vec<f64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let outcome = match cli.command {
        Command::Characterize(a) => cmd_characterize(a, args),
        Command::Calibrate(a) => cmd_calibrate(a, args),
        Command::Attack(a) => cmd_attack(a, args),
        Command::Optimize(a) => cmd_optimize(a, args),
        Command::Monitor(a) => cmd_monitor(a, args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::Parse { .. } | Error::Io(_) | Error::Json(_) => 2,
        Error::OutOfDomain { .. }
        | Error::InfeasibleRate { .. }
        | Error::NoSolution
        | Error::Undefined(_) => 3,
        Error::FitFailed { .. } | Error::InconsistentAnchors(_) => 4,
    }
}

fn linspace(min: f64, max: f64, steps: usize) -> Vec<f64> {
    if steps <= 1 {
        return vec![min];
    }
    (0..steps)
        .map(|i| min + (max - min) * i as f64 / (steps - 1) as f64)
        .collect()
}

fn cmd_characterize(a: CharacterizeArgs, args: Vec<String>) -> Result<()> {
    if a.fluxes.is_empty() {
        return Err(Error::Validation("at least one --flux value is required".into()));
    }
    let (model, config_paths) = a.profile.load()?;
    let mut csv = String::from("delay_ns,flux,probability\n");
    for delay in linspace(a.delay_min, a.delay_max, a.delay_steps) {
        for &flux in &a.fluxes {
            let p = match a.jitter {
                Some(fwhm) => model.detection_probability_with_jitter(delay, flux, fwhm)?,
                None => model.detection_probability(delay, flux)?,
            };
            let _ = writeln!(csv, "{delay},{flux},{p}");
        }
    }
    std::fs::write(&a.out, csv)?;
    let mut manifest = RunManifest::new("characterize", args, None);
    manifest.config_paths = config_paths;
    manifest.output_paths = vec![a.out.display().to_string()];
    manifest.write(&manifest_path(&a.out))?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_calibrate(a: CalibrateArgs, args: Vec<String>) -> Result<()> {
    let anchors = load_anchor_csv(&a.csv)?;
    let (surface, report) = fit_surface(&anchors, a.tolerance)?;
    if !report.converged {
        return Err(Error::FitFailed {
            max_residual: report.max_abs_residual,
            tolerance: a.tolerance,
        });
    }
    // Wrap the fitted surface in a full profile with the published charge
    // and afterpulse constants as defaults.
    let model = DetectorModel {
        name: anchors.detector_name.clone(),
        surface,
        jitter_fwhm_ps: 0.0,
        edge_drift: 0.0,
        charges: ChargeConstants {
            full: profiles::CHARGE_FULL,
            half: profiles::CHARGE_HALF,
            normal: profiles::CHARGE_NORMAL,
        },
        full_flux_ref: anchors
            .rows
            .iter()
            .map(|r| r.flux)
            .fold(0.0, f64::max),
        afterpulse: AfterpulseParams {
            base: 0.01,
            scaling: 1.0,
            decay_gates: 5.0,
        },
        deadtime_gates: 0,
        normal_click_time: atrsim::detector::default_normal_click_time(),
        attack_click_time: atrsim::detector::default_attack_click_time(),
    };
    std::fs::write(
        &a.out,
        serde_json::to_string_pretty(&model.to_json())? + "\n",
    )?;
    let mut manifest = RunManifest::new("calibrate", args, None);
    manifest.config_paths = vec![a.csv.display().to_string()];
    manifest.output_paths = vec![a.out.display().to_string()];
    manifest.write(&manifest_path(&a.out))?;
    println!(
        "fit converged: max residual {:.2e} (tolerance {}); wrote {}",
        report.max_abs_residual,
        a.tolerance,
        a.out.display()
    );
    Ok(())
}

fn counts_csv(
    normal: &SessionReport,
    attack: Option<&SessionReport>,
) -> String {
    let mut csv = String::from(
        "phase_diff,normal_alice_bob,attack_eve_bob,attack_alice_bob\n",
    );
    let labels = ["0", "pi/2", "pi", "3pi/2"];
    for i in 0..4 {
        let (eb, ab) = match attack {
            Some(r) => (
                r.counts_eve_bob[i].to_string(),
                r.counts_alice_bob[i].to_string(),
            ),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            labels[i], normal.counts_alice_bob[i], eb, ab
        );
    }
    csv
}

fn cmd_attack(a: AttackArgs, args: Vec<String>) -> Result<()> {
    let (model, config_paths) = a.profile.load()?;
    std::fs::create_dir_all(&a.out_dir)?;

    let base_config = SessionConfig {
        gate_rate_hz: 1e9 / model.surface.gate_period_ns,
        session_gates: a.gates,
        alice_flux: a.alice_flux,
        channel_transmittance: a.transmittance,
        phase_error_floor: a.phase_error_floor,
        attack: None,
        record_rounds: false,
    };

    // Normal-operation baseline: click rate, histogram, timing reference.
    let normal = run_session(&base_config, &model, a.seed)?;
    let mut outputs = Vec::new();
    write_json(&a.out_dir.join("session_normal.json"), &normal, &mut outputs)?;

    if a.no_attack {
        let csv = counts_csv(&normal, None);
        let path = a.out_dir.join("counts.csv");
        std::fs::write(&path, csv)?;
        outputs.push(path.display().to_string());
        finish_manifest("attack", args, Some(a.seed), config_paths, outputs, &a.out_dir)?;
        println!(
            "normal operation: {} clicks, sifted QBER {:?}",
            normal.total_clicks, normal.qber_sifted
        );
        return Ok(());
    }

    let mut attack_cfg = AttackConfig {
        target_delay_ns: a.delay,
        full_flux: a.flux,
        resend_rate_hz: a.resend_rate,
        duty_factor: 1.0,
        eve_detector: None,
        eve_receive_flux: a.alice_flux,
        guess_strategy: match a.strategy {
            StrategyArg::ConclusiveOnly => GuessStrategy::ConclusiveOnly,
            StrategyArg::AlwaysGuess => GuessStrategy::AlwaysGuess,
        },
        eve_phase_noise_rad: a.eve_phase_noise,
    };
    attack_cfg.duty_factor = match a.duty {
        Some(d) => d,
        // Match the photon-click budget: the detector contributes its own
        // dark and afterpulse clicks under attack just as it does
        // normally, so those cancel out of the comparison. The matched-port
        // flux is depressed by the phase-error floor, so feed the rate
        // matcher the flux Bob actually receives.
        None => {
            let photon_rate =
                normal.photon_clicks as f64 / a.gates as f64 * base_config.gate_rate_hz;
            let mut effective = attack_cfg.clone();
            effective.full_flux = attack_cfg.full_flux * (1.0 - a.phase_error_floor);
            match_count_rate(&model, &effective, photon_rate)?
        }
    };

    let mut cfg = base_config.clone();
    cfg.attack = Some(attack_cfg.clone());
    let attacked = run_session(&cfg, &model, a.seed.wrapping_add(1))?;
    write_json(&a.out_dir.join("session_attack.json"), &attacked, &mut outputs)?;

    // Monitors.
    let p_full = model.detection_probability(a.delay, a.flux)?;
    let p_half = model.detection_probability(a.delay, a.flux / 2.0)?;
    let photocurrent = average_photocurrent(
        attacked.click_rate_hz,
        p_full,
        p_half,
        model.charges.full,
        model.charges.half,
    )?;
    let baseline = normal.click_rate_hz * model.charges.normal / 1000.0;
    let afterpulse = afterpulse_from_counts(attacked.photon_clicks, attacked.afterpulse_clicks).ok();
    let timing = timing_monitor(&attacked.click_times_ps, &normal.click_times_ps, 1.0);

    let mut alarms = Vec::new();
    if photocurrent_alarm(photocurrent, baseline, 2.0) == Verdict::Alarm {
        alarms.push("photocurrent".to_string());
    }
    if afterpulse.unwrap_or(0.0) > 0.01 {
        alarms.push("afterpulse".to_string());
    }
    if timing.verdict == Verdict::Alarm {
        alarms.push("timing".to_string());
    }
    let monitor = MonitorReport {
        photocurrent_avg_na: photocurrent,
        photocurrent_baseline_na: baseline,
        afterpulse_prob: afterpulse,
        removed_gate_clicks: 0,
        timing_center_shift_ns: timing.center_shift_ns,
        timing_support_width_ns: timing.support_width_ns,
        alarms,
    };
    write_json(&a.out_dir.join("monitor_report.json"), &monitor, &mut outputs)?;

    let csv = counts_csv(&normal, Some(&attacked));
    let path = a.out_dir.join("counts.csv");
    std::fs::write(&path, csv)?;
    outputs.push(path.display().to_string());

    finish_manifest("attack", args, Some(a.seed), config_paths, outputs, &a.out_dir)?;
    println!(
        "attack: duty {:.4}, clicks {} (normal {}), QBER(counts) {:.4?}, Eve knowledge {:.4?}",
        attack_cfg.duty_factor,
        attacked.total_clicks,
        normal.total_clicks,
        attacked.qber_eq1,
        attacked.eve_knowledge_fraction
    );
    Ok(())
}

fn cmd_optimize(a: OptimizeArgs, args: Vec<String>) -> Result<()> {
    if a.fluxes.is_empty() {
        return Err(Error::Validation("at least one --flux value is required".into()));
    }
    let (model, config_paths) = a.profile.load()?;
    let delays = linspace(a.delay_min, a.delay_max, a.delay_steps);
    let ranked = optimize_attack(
        &model,
        &delays,
        &a.fluxes,
        a.budget,
        RateConstraint {
            normal_click_rate_hz: a.normal_rate,
            resend_rate_hz: a.resend_rate,
        },
    )?;
    let mut csv = String::from("delay_ns,flux,qber_pred,duty,feasible\n");
    for c in &ranked {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            c.delay_ns, c.flux, c.qber_pred, c.duty, c.feasible
        );
    }
    std::fs::write(&a.out, csv)?;
    let mut manifest = RunManifest::new("optimize", args, None);
    manifest.config_paths = config_paths;
    manifest.output_paths = vec![a.out.display().to_string()];
    manifest.write(&manifest_path(&a.out))?;
    println!(
        "best point: delay {} ns, flux {}, predicted QBER {:.4}",
        ranked[0].delay_ns, ranked[0].flux, ranked[0].qber_pred
    );
    Ok(())
}

fn cmd_monitor(a: MonitorArgs, args: Vec<String>) -> Result<()> {
    let (model, config_paths) = a.profile.load()?;
    std::fs::create_dir_all(&a.out_dir)?;
    let mut outputs = Vec::new();

    let normal = removed_gate_check(
        &model,
        IlluminationSpec {
            pulses_per_period: 2,
            flux: a.profile_normal_flux(),
            delay_ns: 0.0,
        },
        a.remove_prob,
        a.periods,
        a.seed,
    );
    let attack = removed_gate_check(
        &model,
        IlluminationSpec {
            pulses_per_period: 2,
            flux: a.flux,
            delay_ns: a.delay,
        },
        a.remove_prob,
        a.periods,
        a.seed.wrapping_add(1),
    )?;

    if let Ok(normal) = &normal {
        write_hist_csv(&a.out_dir.join("removed_gate_normal.csv"), &normal.histogram, &mut outputs)?;
        write_json(&a.out_dir.join("removed_gate_normal.json"), normal, &mut outputs)?;
    }
    write_hist_csv(&a.out_dir.join("removed_gate_attack.csv"), &attack.histogram, &mut outputs)?;
    write_json(&a.out_dir.join("removed_gate_attack.json"), &attack, &mut outputs)?;

    let table = jitter_sensitivity(&model, &a.fwhms, a.delay, a.flux)?;
    let mut csv = String::from("fwhm_ps,p_full,p_half,qber_pred\n");
    for row in &table {
        let _ = writeln!(csv, "{},{},{},{}", row.fwhm_ps, row.p_full, row.p_half, row.qber_pred);
    }
    let path = a.out_dir.join("jitter_table.csv");
    std::fs::write(&path, csv)?;
    outputs.push(path.display().to_string());

    finish_manifest("monitor", args, Some(a.seed), config_paths, outputs, &a.out_dir)?;
    println!(
        "removed-gate clicks under attack illumination: {} (live-gate clicks {})",
        attack.removed_gate_clicks, attack.live_gate_clicks
    );
    Ok(())
}

impl MonitorArgs {
    /// Flux for the normal-operation illumination arm of the check.
    fn profile_normal_flux(&self) -> f64 {
        0.1
    }
}

fn write_json<T: serde::Serialize>(
    path: &Path,
    value: &T,
    outputs: &mut Vec<String>,
) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    outputs.push(path.display().to_string());
    Ok(())
}

fn write_hist_csv(
    path: &Path,
    hist: &[(f64, f64)],
    outputs: &mut Vec<String>,
) -> Result<()> {
    let mut csv = String::from("bin_start_ps,normalized_count\n");
    for (start, count) in hist {
        let _ = writeln!(csv, "{start},{count}");
    }
    std::fs::write(path, csv)?;
    outputs.push(path.display().to_string());
    Ok(())
}

fn finish_manifest(
    command: &str,
    args: Vec<String>,
    seed: Option<u64>,
    config_paths: Vec<String>,
    output_paths: Vec<String>,
    out_dir: &Path,
) -> Result<()> {
    let mut manifest = RunManifest::new(command, args, seed);
    manifest.config_paths = config_paths;
    manifest.output_paths = output_paths;
    manifest.write(&out_dir.join("manifest.json"))
}

fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}
