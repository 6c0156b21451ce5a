//! `spinbath` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use spinbath::budget::{budget_curve, Budget};
use spinbath::cavity::{
    add_noise, fit_spectrum_two_stage, simulate_spectrum, CoupledLine, Dispersion, FitMode, SpectrumFitOptions,
};
use spinbath::constants::{MU_B_OVER_HBAR, TWO_PI};
use spinbath::fieldmap::{fock_target, gamma_tilde, normalize, toy_wire_map, ToyWire};
use spinbath::io::{self, EchoFitRow, ProjectConfig};
use spinbath::presets;
use spinbath::sdmodel::{
    echo_amplitude, fit_2pe, fit_3pe_family, gamma_sd_of_t, t2_from_params, thermal_factor, tie_species, EchoConfig,
    EchoDataset, EchoKind, EchoPoint, FamilyFitConfig, SdProduct, SdTerm, TwoPulseCurve,
};
use spinbath::spinham::{
    find_transition, resonance_fields, rotation_pattern, track_levels, FieldVector, Selection,
    SweepOptions, TransitionLabel,
};
use spinbath::synth::Noise;
use spinbath::thermal::{fit_concentration, infer_bath_temperature, GensPoint, TransitionSeries};

#[derive(Parser)]
#[command(name = "spinbath", version, about = "Spin-resonance modelling and fitting for rare-earth-doped crystals")]
struct Cli {
    /// Project configuration (JSON); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for synthetic noise.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Level energies versus field and the transitions crossing the resonator.
    Levels(LevelsArgs),
    /// Simulate or fit |S21|(B0, f) spectra.
    #[command(subcommand)]
    Spectrum(SpectrumCmd),
    /// Simulate or fit echo decays.
    #[command(subcommand)]
    Echo(EchoCmd),
    /// Decoherence budget versus bath temperature.
    Budget(BudgetArgs),
    /// Resonance fields versus field angle in the a-c plane.
    Rotation(RotationArgs),
    /// Averaged gyromagnetic ratio from a field map.
    Fieldmap(FieldmapArgs),
    /// Concentration fit and bath thermometry from ensemble couplings.
    Thermal(ThermalArgs),
}

#[derive(Args)]
struct Orientation {
    /// Polar angle of B0 from c, degrees.
    #[arg(long, default_value_t = 90.0)]
    theta_deg: f64,
    /// Azimuth of B0 from a, degrees.
    #[arg(long, default_value_t = 90.0)]
    phi_deg: f64,
}

impl Orientation {
    fn direction(&self) -> nalgebra::Vector3<f64> {
        FieldVector::new(1.0, self.theta_deg.to_radians(), self.phi_deg.to_radians()).direction()
    }
}

#[derive(Args)]
struct LevelsArgs {
    #[arg(long, default_value = "Er167")]
    species: String,
    #[arg(long, default_value_t = 0.0)]
    from_mt: f64,
    #[arg(long, default_value_t = 100.0)]
    to_mt: f64,
    #[arg(long, default_value_t = 201)]
    points: usize,
    /// Frequency at which nuclear-spin-conserving crossings are reported.
    #[arg(long, default_value_t = 4.37)]
    freq_ghz: f64,
    #[command(flatten)]
    orientation: Orientation,
}

#[derive(Subcommand)]
enum SpectrumCmd {
    Simulate(SpectrumSimArgs),
    Fit(SpectrumFitArgs),
}

#[derive(Args)]
struct SpectrumSimArgs {
    #[arg(long, default_value_t = 30.0)]
    from_mt: f64,
    #[arg(long, default_value_t = 50.0)]
    to_mt: f64,
    #[arg(long, default_value_t = 201)]
    fields: usize,
    #[arg(long, default_value_t = 4.33)]
    f_lo_ghz: f64,
    #[arg(long, default_value_t = 4.41)]
    f_hi_ghz: f64,
    #[arg(long, default_value_t = 161)]
    freqs: usize,
    /// Additive Gaussian noise on |S21|.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Args)]
struct SpectrumFitArgs {
    /// Spectrum CSV (B0_mT, freq_GHz, s21_mag[, s21_re, s21_im]).
    #[arg(long)]
    input: PathBuf,
    /// Fit complex S21 instead of the magnitude.
    #[arg(long)]
    complex: bool,
    #[arg(long)]
    free_amplitude: bool,
    #[arg(long, default_value_t = 3)]
    rounds: usize,
}

#[derive(Subcommand)]
enum EchoCmd {
    Simulate(EchoSimArgs),
    Fit2pe(Fit2peArgs),
    Fit3pe(Fit3peArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    #[value(name = "2PE")]
    TwoPulse,
    #[value(name = "3PE")]
    ThreePulse,
}

#[derive(Args)]
struct EchoSimArgs {
    #[arg(long, value_enum, default_value = "3PE")]
    kind: KindArg,
    /// Bath temperatures, mK.
    #[arg(long, value_delimiter = ',', default_value = "530")]
    temps_mk: Vec<f64>,
    /// Delays τ, µs; chosen from the decay time when omitted.
    #[arg(long, value_delimiter = ',')]
    taus_us: Vec<f64>,
    /// Longest waiting time (3PE), µs; 4/R when omitted.
    #[arg(long)]
    tw_max_us: Option<f64>,
    /// Samples per curve.
    #[arg(long, default_value_t = 41)]
    points: usize,
    /// Γ0 values in Hz; 2PE produces one tagged curve per value (pulse-power
    /// series). Defaults to the budget's instantaneous-diffusion rate.
    #[arg(long, value_delimiter = ',')]
    gamma0_hz: Vec<f64>,
    /// Relative Gaussian noise (σ = noise × A0).
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
}

#[derive(Args)]
struct Fit2peArgs {
    #[arg(long)]
    input: PathBuf,
    /// Hold Σ Γ_SD R fixed at this value (s^-2).
    #[arg(long)]
    sd_product: Option<f64>,
}

#[derive(Args)]
struct Fit3peArgs {
    #[arg(long)]
    input: PathBuf,
    /// Fit Er alone without the tied Yb pair.
    #[arg(long)]
    no_tie: bool,
    /// Spin-lattice time, s.
    #[arg(long)]
    t1_s: Option<f64>,
}

#[derive(Args)]
struct BudgetArgs {
    /// Explicit temperatures, mK.
    #[arg(long, value_delimiter = ',')]
    temps_mk: Vec<f64>,
    #[arg(long, default_value_t = 10.0)]
    from_mk: f64,
    #[arg(long, default_value_t = 1000.0)]
    to_mk: f64,
    /// Logarithmically spaced grid size.
    #[arg(long, default_value_t = 61)]
    points: usize,
    /// Switch off spectral diffusion (Γ_max = 0 for all species).
    #[arg(long)]
    zero_sd: bool,
}

#[derive(Args)]
struct RotationArgs {
    /// Species names; all configured species when omitted.
    #[arg(long, value_delimiter = ',')]
    species: Vec<String>,
    #[arg(long, default_value_t = 0.0)]
    start_deg: f64,
    #[arg(long, default_value_t = 1.5)]
    step_deg: f64,
    #[arg(long, default_value_t = 61)]
    count: usize,
    #[arg(long, default_value_t = 5.0)]
    from_mt: f64,
    #[arg(long, default_value_t = 400.0)]
    to_mt: f64,
    #[arg(long, default_value_t = 4.37)]
    freq_ghz: f64,
    /// Include all transitions, not only nuclear-spin-conserving ones.
    #[arg(long)]
    all: bool,
}

#[derive(Args)]
struct FieldmapArgs {
    /// Field-map CSV (x_um, z_um, dB1x_T, dB1z_T); the configured map or a
    /// toy wire map when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value = "Er")]
    species: String,
    #[arg(long, default_value = "I=0")]
    transition: String,
    /// Also write the normalized map.
    #[arg(long)]
    write_map: bool,
}

#[derive(Args)]
struct ThermalArgs {
    /// g_ens(T) CSV (transition_label, T_mK, gens_kHz, sigma_kHz) for a concentration fit.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Single measured coupling to convert into a bath temperature, kHz.
    #[arg(long)]
    gens_khz: Option<f64>,
    #[arg(long, default_value_t = 5.0)]
    sigma_khz: f64,
    /// Transition of `--gens-khz`.
    #[arg(long, default_value = "I=0")]
    transition: String,
    /// Er concentration for thermometry, cm^-3.
    #[arg(long, default_value_t = presets::ER_CONCENTRATION_CM3)]
    rho_cm3: f64,
}

struct Ctx {
    cfg: ProjectConfig,
    out: PathBuf,
    seed: u64,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn resonator(&self) -> anyhow::Result<spinbath::cavity::Resonator> {
        self.cfg
            .resonator
            .ok_or_else(|| spinbath::Error::Config("no resonator configured".into()).into())
    }

    fn omega0(&self) -> f64 {
        self.cfg.resonator.map_or(TWO_PI * presets::RESONATOR_HZ, |r| r.omega_r0)
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
    }
}

fn input_error(msg: impl Into<String>) -> anyhow::Error {
    spinbath::Error::Input(msg.into()).into()
}

fn cmd_levels(ctx: &Ctx, a: &LevelsArgs) -> anyhow::Result<()> {
    if a.points == 0 {
        return Err(input_error("empty field sweep (--points 0)"));
    }
    let species = ctx.cfg.species_named(&a.species)?;
    let dir = a.orientation.direction();
    let fields: Vec<f64> = linspace(a.from_mt * 1e-3, a.to_mt * 1e-3, a.points);
    let sweep = track_levels(species, &dir, &fields)?;
    let rows = io::level_rows(&sweep);
    let levels_path = ctx.path("levels.csv");
    io::write_csv(&levels_path, &rows)?;
    let lo = (a.from_mt * 1e-3).max(1e-6);
    let found = resonance_fields(
        species,
        TWO_PI * a.freq_ghz * 1e9,
        &dir,
        (lo, a.to_mt * 1e-3),
        Selection::NuclearConserving,
        &SweepOptions::default(),
    )?;
    let crossings: Vec<_> = found
        .iter()
        .map(|r| json!({"transition": r.label.to_string(), "B_mT": r.field * 1e3}))
        .collect();
    let cross_path = ctx.path("crossings.json");
    io::write_json(&cross_path, &crossings)?;
    println!(
        "{}: {} levels x {} fields -> {}; {} crossings at {} GHz -> {}",
        species.name,
        sweep.labels.len(),
        fields.len(),
        levels_path.display(),
        found.len(),
        a.freq_ghz,
        cross_path.display()
    );
    Ok(())
}

fn coupled_lines(ctx: &Ctx, lo: f64, hi: f64) -> anyhow::Result<Vec<CoupledLine>> {
    if ctx.cfg.lines.is_empty() {
        return Err(spinbath::Error::Config("no coupled lines configured".into()).into());
    }
    let dir = FieldVector::along_b(1.0).direction();
    let pad = 0.1 * (hi - lo).max(1e-3);
    let grid = linspace((lo - pad).max(1e-4), hi + pad, 81);
    ctx.cfg
        .lines
        .iter()
        .map(|l| {
            let species = ctx.cfg.species_named(&l.species)?;
            let dispersion = Dispersion::from_species(species, &dir, &l.transition, &grid)
                .with_context(|| format!("dispersion of {} {}", l.species, l.transition))?;
            Ok(CoupledLine {
                label: format!("{} {}", l.species, l.transition),
                gens: l.gens,
                gamma: l.gamma,
                dispersion,
            })
        })
        .collect()
}

fn cmd_spectrum_sim(ctx: &Ctx, a: &SpectrumSimArgs) -> anyhow::Result<()> {
    let res = ctx.resonator()?;
    if a.fields == 0 || a.freqs == 0 {
        return Err(input_error("empty spectrum grid"));
    }
    let (lo, hi) = (a.from_mt * 1e-3, a.to_mt * 1e-3);
    let lines = coupled_lines(ctx, lo, hi)?;
    let fields = linspace(lo, hi, a.fields);
    let freqs = linspace(a.f_lo_ghz * 1e9, a.f_hi_ghz * 1e9, a.freqs);
    let mut pts = simulate_spectrum(&res, &lines, &fields, &freqs)?;
    if a.noise > 0.0 {
        add_noise(&mut pts, a.noise, ctx.seed);
    }
    let path = ctx.path("spectrum.csv");
    io::write_spectrum(&path, &pts)?;
    println!("{} lines, {} points -> {}", lines.len(), pts.len(), path.display());
    Ok(())
}

fn cmd_spectrum_fit(ctx: &Ctx, a: &SpectrumFitArgs) -> anyhow::Result<()> {
    let res = ctx.resonator()?;
    let pts = io::read_spectrum(&a.input)?;
    let lo = pts.iter().map(|p| p.field).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.field).fold(f64::NEG_INFINITY, f64::max);
    let templates = coupled_lines(ctx, lo, hi)?;
    let dominant = ctx.cfg.dominant_line.unwrap_or(0);
    let opts = SpectrumFitOptions {
        mode: if a.complex { FitMode::Complex } else { FitMode::Magnitude },
        free_amplitude: a.free_amplitude,
        rounds: a.rounds,
    };
    let fit = fit_spectrum_two_stage(&pts, &res, &templates, dominant, &opts)?;
    let rows: Vec<io::LineReportRow> = fit.lines.iter().map(io::LineReportRow::from).collect();
    let path = ctx.path("spectrum_fit.json");
    io::write_json(
        &path,
        &json!({"lines": rows, "amplitude": fit.amplitude, "amplitude_err": fit.amplitude_err, "stages": fit.stages}),
    )?;
    for r in &rows {
        println!(
            "{:<16} g_ens = {:9.1} ± {:6.1} kHz   Γ = {:7.3} ± {:5.3} MHz",
            r.transition, r.gens_khz, r.gens_err, r.gamma_mhz, r.gamma_err
        );
    }
    println!("-> {}", path.display());
    Ok(())
}

/// Er pair at temperature `t` from the budget saturation values, with the Yb pair tied to it.
fn sd_pairs(ctx: &Ctx, t: f64, b0: f64) -> anyhow::Result<(Vec<SdTerm>, f64)> {
    let budget = ctx
        .cfg
        .budget
        .as_ref()
        .ok_or_else(|| spinbath::Error::Config("echo simulation needs a budget section".into()))?;
    let er = budget
        .species
        .iter()
        .find(|s| s.name.eq_ignore_ascii_case("Er"))
        .ok_or_else(|| spinbath::Error::Config("budget has no Er species".into()))?;
    let er_term = SdTerm::new(
        "Er",
        gamma_sd_of_t(er.gamma_max, er.g, b0, t)?,
        er.rate_max * thermal_factor(er.g, b0, t),
    );
    let mut terms = vec![er_term.clone()];
    if let Some(tie) = &ctx.cfg.tie {
        let tie = spinbath::sdmodel::TieConfig { t_bath: t, b0, ..*tie };
        terms.push(tie_species(&er_term, &tie)?);
    }
    let gamma0 = Budget::new(budget.clone())?.gamma0(t)?;
    Ok((terms, gamma0))
}

fn cmd_echo_sim(ctx: &Ctx, a: &EchoSimArgs) -> anyhow::Result<()> {
    if a.points < 2 {
        return Err(input_error("need at least 2 points per curve"));
    }
    let kind = match a.kind {
        KindArg::TwoPulse => EchoKind::TwoPulse,
        KindArg::ThreePulse => EchoKind::ThreePulse,
    };
    let b0 = ctx.cfg.budget.as_ref().map_or(presets::OPERATING_FIELD, |b| b.b0);
    let mut noise = Noise::new(ctx.seed);
    let mut rows = Vec::new();
    for &t_mk in &a.temps_mk {
        if t_mk.is_nan() || t_mk <= 0.0 {
            return Err(input_error(format!("temperature must be positive, got {t_mk} mK")));
        }
        let t = t_mk * 1e-3;
        let (sd, g0_default) = sd_pairs(ctx, t, b0)?;
        let g0s = if a.gamma0_hz.is_empty() { vec![g0_default] } else { a.gamma0_hz.clone() };
        let b: f64 = sd.iter().map(|s| 0.5 * s.gamma_sd * s.rate).sum();
        for (k, &g0) in g0s.iter().enumerate() {
            let t2 = t2_from_params(g0, b)?;
            let tag = (g0s.len() > 1).then(|| format!("P{}", k + 1));
            let mut points = Vec::new();
            match kind {
                EchoKind::TwoPulse => {
                    let taus: Vec<f64> = if a.taus_us.is_empty() {
                        linspace(0.02 * t2, 1.5 * t2, a.points)
                    } else {
                        a.taus_us.iter().map(|t| t * 1e-6).collect()
                    };
                    for tau in taus {
                        points.push((tau, 0.0));
                    }
                }
                EchoKind::ThreePulse => {
                    // Deepest T_W decay of about exp(-1.5) on the longest delay.
                    let width: f64 = sd.iter().map(|s| s.gamma_sd).sum();
                    let tau_max = (1.5 / (std::f64::consts::PI * width.max(1e-12))).min(t2);
                    let taus: Vec<f64> = if a.taus_us.is_empty() {
                        (1..=5).map(|k| k as f64 / 5.0 * tau_max).collect()
                    } else {
                        a.taus_us.iter().map(|t| t * 1e-6).collect()
                    };
                    let rate = sd[0].rate.max(1e-3);
                    let tw_max = a.tw_max_us.map_or(4.0 / rate, |v| v * 1e-6);
                    for tau in taus {
                        for tw in linspace(0.0, tw_max, a.points) {
                            points.push((tau, tw));
                        }
                    }
                }
            }
            let mut pts = Vec::with_capacity(points.len());
            for (tau, t_w) in points {
                let cfg = EchoConfig { kind, tau, t_w, gamma0: g0, a0: 1.0, t1: None, eseem: vec![] };
                let clean = echo_amplitude(&cfg, &sd)?;
                let sigma = a.noise.max(1e-6);
                pts.push(EchoPoint { tau, t_w, amplitude: noise.additive(clean, a.noise), sigma });
            }
            let d = EchoDataset { kind, points: pts, t_bath: t, b0, tag };
            rows.extend(io::echo_rows(&d));
        }
    }
    let path = ctx.path("echo.csv");
    io::write_csv(&path, &rows)?;
    println!("{} echo samples -> {}", rows.len(), path.display());
    Ok(())
}

fn cmd_fit3pe(ctx: &Ctx, a: &Fit3peArgs) -> anyhow::Result<()> {
    let rows: Vec<io::EchoRow> = io::read_csv(&a.input)?;
    let sets: Vec<EchoDataset> = io::echo_datasets(&rows)?.into_iter().filter(|d| d.kind == EchoKind::ThreePulse).collect();
    if sets.is_empty() {
        return Err(spinbath::Error::Data(format!("{}: no 3PE rows", a.input.display())).into());
    }
    let mut report = Vec::new();
    let mut tables = Vec::new();
    for d in &sets {
        let tie = if a.no_tie {
            None
        } else {
            ctx.cfg.tie.map(|t| spinbath::sdmodel::TieConfig { t_bath: d.t_bath, b0: d.b0, ..t })
        };
        let cfg = FamilyFitConfig { t1: a.t1_s, tie, ..Default::default() };
        let fit = fit_3pe_family(d, &cfg).with_context(|| format!("3PE fit at {} mK", d.t_bath * 1e3))?;
        for w in &fit.warnings {
            eprintln!("warning ({} mK): {w}", d.t_bath * 1e3);
        }
        println!(
            "{:7.1} mK  Γ_SD(Er) = {:.4e} ± {:.2e} Hz  R(Er) = {:.4e} ± {:.2e} s^-1  T2 = {:.3e} s",
            d.t_bath * 1e3,
            fit.gamma_sd_er,
            fit.gamma_sd_er_err,
            fit.rate_er,
            fit.rate_er_err,
            fit.t2
        );
        tables.push(json!({"T_mK": d.t_bath * 1e3, "parameters": io::parameter_rows(&fit.fit)}));
        report.push(EchoFitRow {
            T_mK: d.t_bath * 1e3,
            Gamma_SD_Er_Hz: fit.gamma_sd_er,
            Gamma_SD_Er_err: fit.gamma_sd_er_err,
            R_Er_per_s: fit.rate_er,
            R_Er_err: fit.rate_er_err,
            Gamma_SD_Yb_Hz: fit.gamma_sd_yb,
            Gamma_SD_Yb_err: fit.gamma_sd_yb_err,
            R_Yb_per_s: fit.rate_yb,
            R_Yb_err: fit.rate_yb_err,
            T2_s: fit.t2,
            warnings: fit.warnings.clone(),
        });
    }
    let path = ctx.path("echo_fit3pe.json");
    io::write_json(&path, &json!({"temperatures": report, "fits": tables}))?;
    println!("-> {}", path.display());
    Ok(())
}

fn cmd_fit2pe(ctx: &Ctx, a: &Fit2peArgs) -> anyhow::Result<()> {
    let rows: Vec<io::EchoRow> = io::read_csv(&a.input)?;
    let sets: Vec<EchoDataset> = io::echo_datasets(&rows)?.into_iter().filter(|d| d.kind == EchoKind::TwoPulse).collect();
    if sets.is_empty() {
        return Err(spinbath::Error::Data(format!("{}: no 2PE rows", a.input.display())).into());
    }
    let mut groups: Vec<(f64, f64, Vec<&EchoDataset>)> = Vec::new();
    for d in &sets {
        match groups.iter_mut().find(|g| g.0 == d.t_bath && g.1 == d.b0) {
            Some(g) => g.2.push(d),
            None => groups.push((d.t_bath, d.b0, vec![d])),
        }
    }
    let product = a.sd_product.map_or(SdProduct::Free, SdProduct::Fixed);
    let mut out = Vec::new();
    for (t, _, ds) in &groups {
        let curves: Vec<TwoPulseCurve> = ds
            .iter()
            .map(|d| TwoPulseCurve { tag: d.tag.clone().unwrap_or_else(|| "2PE".into()), points: d.points.clone() })
            .collect();
        let fit = fit_2pe(&curves, &[], product).with_context(|| format!("2PE fit at {} mK", t * 1e3))?;
        for c in &fit.curves {
            println!(
                "{:7.1} mK {:>6}  Γ0 = {:8.2} ± {:6.2} Hz  ΣΓR = {:.4e} s^-2  T2 = {:.4} ms",
                t * 1e3,
                c.tag,
                c.gamma0,
                c.gamma0_err,
                fit.sd_product,
                c.t2 * 1e3
            );
            out.push(json!({
                "T_mK": t * 1e3,
                "tag": c.tag,
                "Gamma0_Hz": c.gamma0,
                "Gamma0_err": c.gamma0_err,
                "A0": c.a0,
                "SdProduct_per_s2": fit.sd_product,
                "SdProduct_err": fit.sd_product_err,
                "T2_s": c.t2,
            }));
        }
    }
    let path = ctx.path("echo_fit2pe.json");
    io::write_json(&path, &out)?;
    println!("-> {}", path.display());
    Ok(())
}

fn cmd_budget(ctx: &Ctx, a: &BudgetArgs) -> anyhow::Result<()> {
    let mut cfg = ctx
        .cfg
        .budget
        .clone()
        .ok_or_else(|| spinbath::Error::Config("no budget section configured".into()))?;
    if a.zero_sd {
        for s in &mut cfg.species {
            s.gamma_max = 0.0;
        }
    }
    let temps: Vec<f64> = if a.temps_mk.is_empty() {
        if !(a.from_mk > 0.0 && a.to_mk > 0.0) {
            return Err(input_error("temperature range must be positive"));
        }
        let (l0, l1) = (a.from_mk.ln(), a.to_mk.ln());
        linspace(l0, l1, a.points).into_iter().map(|l| l.exp() * 1e-3).collect()
    } else {
        a.temps_mk.iter().map(|t| t * 1e-3).collect()
    };
    let budget = Budget::new(cfg)?;
    let rows: Vec<io::BudgetRow> = budget_curve(&budget, &temps)?.iter().map(io::BudgetRow::from).collect();
    let path = ctx.path("budget.csv");
    io::write_csv(&path, &rows)?;
    let cal = ctx.path("budget_convention.json");
    io::write_json(&cal, &json!({"convention": budget.convention, "calibration": budget.calibration}))?;
    println!(
        "Γ0 convention {:?}; {} temperatures -> {}, {}",
        budget.convention,
        rows.len(),
        path.display(),
        cal.display()
    );
    Ok(())
}

fn cmd_rotation(ctx: &Ctx, a: &RotationArgs) -> anyhow::Result<()> {
    if a.count == 0 {
        return Err(input_error("no angles requested (--count 0)"));
    }
    let species = if a.species.is_empty() {
        ctx.cfg.species.clone()
    } else {
        a.species.iter().map(|n| ctx.cfg.species_named(n).cloned()).collect::<Result<Vec<_>, _>>()?
    };
    let angles: Vec<f64> = (0..a.count).map(|k| (a.start_deg + a.step_deg * k as f64).to_radians()).collect();
    let sel = if a.all { Selection::Any } else { Selection::NuclearConserving };
    let pts = rotation_pattern(&species, TWO_PI * a.freq_ghz * 1e9, &angles, (a.from_mt * 1e-3, a.to_mt * 1e-3), sel)?;
    let path = ctx.path("rotation.csv");
    io::write_csv(&path, &io::rotation_rows(&pts))?;
    println!("{} resonance fields over {} angles -> {}", pts.len(), angles.len(), path.display());
    Ok(())
}

fn cmd_fieldmap(ctx: &Ctx, a: &FieldmapArgs) -> anyhow::Result<()> {
    let omega = ctx.omega0();
    let length = ctx.cfg.inductor_length.unwrap_or(725e-6);
    let path = a.input.clone().or_else(|| ctx.cfg.field_map.clone());
    let map = match &path {
        Some(p) => normalize(&io::read_fieldmap(p, length)?, omega)?,
        None => toy_wire_map(&ToyWire { length, ..ToyWire::default() }, omega)?,
    };
    let species = ctx.cfg.species_named(&a.species)?;
    let label: TransitionLabel = a.transition.parse()?;
    let dir = FieldVector::along_b(1.0).direction();
    let res = find_transition(species, omega, &dir, (1e-3, 0.5), &label, None)?;
    let (sx, sz) = (res.sx, res.sz);
    let gp = species.g_diag[0] * MU_B_OVER_HBAR;
    let gz = species.g_diag[2] * MU_B_OVER_HBAR;
    let gt = gamma_tilde(&map, sx.norm(), sz.norm(), gp, gz)?;
    let report = json!({
        "species": species.name,
        "transition": label.to_string(),
        "field_mT": res.field * 1e3,
        "Sx_abs": sx.norm(),
        "Sz_abs": sz.norm(),
        "gamma_tilde_muB_per_hbar": gt / MU_B_OVER_HBAR,
        "integral_T2m2": map.energy_integral(),
        "target_T2m2": fock_target(omega, length),
        "source": path.as_ref().map_or("toy wire".to_string(), |p| p.display().to_string()),
    });
    let out = ctx.path("fieldmap.json");
    io::write_json(&out, &report)?;
    if a.write_map {
        io::write_fieldmap(&ctx.path("fieldmap_normalized.csv"), &map)?;
    }
    println!(
        "{} {} at {:.2} mT: |Sx| = {:.4}, |Sz| = {:.4}, γ̃ħ/μB = {:.3} -> {}",
        species.name,
        label,
        res.field * 1e3,
        sx.norm(),
        sz.norm(),
        gt / MU_B_OVER_HBAR,
        out.display()
    );
    Ok(())
}

fn cmd_thermal(ctx: &Ctx, a: &ThermalArgs) -> anyhow::Result<()> {
    if a.input.is_none() && a.gens_khz.is_none() {
        return Err(input_error("give --input for a concentration fit or --gens-khz for thermometry"));
    }
    let couplings = presets::er_couplings()?;
    let find = |label: &str| -> anyhow::Result<&spinbath::thermal::TransitionCoupling> {
        let key: TransitionLabel = label.parse()?;
        couplings
            .iter()
            .find(|c| c.label.parse::<TransitionLabel>().map(|l| l == key).unwrap_or(false))
            .ok_or_else(|| spinbath::Error::Data(format!("no coupling model for transition '{label}'")).into())
    };
    let mut report = serde_json::Map::new();
    if let Some(input) = &a.input {
        let rows: Vec<io::GensRow> = io::read_csv(input)?;
        let mut series: Vec<TransitionSeries> = Vec::new();
        for r in &rows {
            let c = find(&r.transition_label)?;
            let p = GensPoint { temperature: r.t_mk * 1e-3, gens: r.gens_khz * 1e3, sigma: r.sigma_khz * 1e3 };
            match series.iter_mut().find(|s| s.coupling.label == c.label) {
                Some(s) => s.points.push(p),
                None => series.push(TransitionSeries { coupling: c.clone(), points: vec![p] }),
            }
        }
        let fit = fit_concentration(&series)?;
        println!("[Er] = {:.4e} ± {:.2e} cm^-3", fit.concentration_cm3, fit.std_error_cm3);
        report.insert(
            "concentration".into(),
            json!({"rho_cm3": fit.concentration_cm3, "std_error_cm3": fit.std_error_cm3, "parameters": io::parameter_rows(&fit.fit)}),
        );
    }
    if let Some(g) = a.gens_khz {
        let c = find(&a.transition)?;
        let rho = a.rho_cm3 * spinbath::constants::PER_CM3;
        let tb = infer_bath_temperature(g * 1e3, a.sigma_khz * 1e3, c, rho)?;
        println!("T_B = {:.2} mK [{:.2}, {:.2}]", tb.temperature * 1e3, tb.lower * 1e3, tb.upper * 1e3);
        report.insert("bath_temperature".into(), serde_json::to_value(tb)?);
    }
    let path = ctx.path("thermal.json");
    io::write_json(&path, &report)?;
    println!("-> {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(input_error("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("thread pool")?;
    }
    let cfg = match &cli.config {
        Some(p) => ProjectConfig::load(p)?,
        None => ProjectConfig::default(),
    };
    let out = cli.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    if out.exists() && !out.is_dir() {
        bail!(spinbath::Error::Config(format!("output path {} is not a directory", out.display())));
    }
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let ctx = Ctx { cfg, out, seed: cli.seed };
    match &cli.command {
        Command::Levels(a) => cmd_levels(&ctx, a),
        Command::Spectrum(SpectrumCmd::Simulate(a)) => cmd_spectrum_sim(&ctx, a),
        Command::Spectrum(SpectrumCmd::Fit(a)) => cmd_spectrum_fit(&ctx, a),
        Command::Echo(EchoCmd::Simulate(a)) => cmd_echo_sim(&ctx, a),
        Command::Echo(EchoCmd::Fit2pe(a)) => cmd_fit2pe(&ctx, a),
        Command::Echo(EchoCmd::Fit3pe(a)) => cmd_fit3pe(&ctx, a),
        Command::Budget(a) => cmd_budget(&ctx, a),
        Command::Rotation(a) => cmd_rotation(&ctx, a),
        Command::Fieldmap(a) => cmd_fieldmap(&ctx, a),
        Command::Thermal(a) => cmd_thermal(&ctx, a),
    }
}

/// Exit status: 2 usage/input, 3 config, 4 data, 5 fit, 1 anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    use spinbath::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Input(_) => 2,
                E::Config(_) => 3,
                E::Data(_) | E::Io(_) | E::Csv(_) | E::Json(_) => 4,
                E::Fit(_) => 5,
                E::Contract(_) | E::Infeasible(_) | E::Undefined(_) => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

