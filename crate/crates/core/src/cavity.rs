//! Transmission of a resonator coupled to several inhomogeneously broadened
//! spin ensembles, and the fits that extract resonator and ensemble
//! parameters from |S21|(omega, B0) spectra.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::TWO_PI;
use crate::error::{ensure_finite, ensure_positive, Error, Result};
use crate::fitkit::{self, FitOptions, FitProblem, FitResult, FitStatus, Parameter};
use crate::spinham::{transition_frequency_curve, SpinSpecies, TransitionLabel};
use crate::synth::Noise;

/// Superconducting resonator whose frequency shifts quadratically with field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resonator {
    /// Angular frequency at zero field.
    pub omega_r0: f64,
    /// d(omega_r)/d(B0^2), rad/s/T^2.
    pub field_shift: f64,
    /// Coupling rate to the line, s^-1.
    pub kappa_c: f64,
    /// Internal loss rate, s^-1.
    pub kappa_i: f64,
    /// Optional loaded quality factor, checked against omega_r0 / kappa_t.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<f64>,
}

impl Resonator {
    pub fn new(omega_r0: f64, field_shift: f64, kappa_c: f64, kappa_i: f64) -> Self {
        Self { omega_r0, field_shift, kappa_c, kappa_i, quality: None }
    }

    pub fn kappa_t(&self) -> f64 {
        self.kappa_c + self.kappa_i
    }

    pub fn omega_r(&self, b0: f64) -> f64 {
        self.omega_r0 + self.field_shift * b0 * b0
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("resonator frequency", self.omega_r0)?;
        ensure_finite("resonator field shift", self.field_shift)?;
        ensure_positive("coupling rate kappa_c", self.kappa_c)?;
        ensure_positive("internal loss rate kappa_i", self.kappa_i)?;
        if let Some(q) = self.quality {
            ensure_positive("quality factor", q)?;
            let implied = self.omega_r0 / self.kappa_t();
            if (implied / q - 1.0).abs() > 0.05 {
                return Err(Error::Config(format!(
                    "quality factor {q} inconsistent with omega_r/kappa_t = {implied:.1}"
                )));
            }
        }
        Ok(())
    }

    /// Transmission at probe angular frequency `omega` and field `b0`.
    pub fn s21(&self, omega: f64, b0: f64, lines: &[LineResponse]) -> Complex64 {
        s21(omega, self.omega_r(b0), self.kappa_c, self.kappa_t(), lines)
    }
}

/// One ensemble as seen by the resonator at a given field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineResponse {
    /// Ensemble coupling, Hz.
    pub gens: f64,
    /// Inhomogeneous FWHM, Hz.
    pub gamma: f64,
    /// Transition angular frequency.
    pub omega_s: f64,
}

fn spin_term(omega: f64, gens: f64, gamma: f64, omega_s: f64) -> Complex64 {
    let g = TWO_PI * gens;
    Complex64::from(2.0 * g * g) / Complex64::new(std::f64::consts::PI * gamma, omega - omega_s)
}

/// `1 - kc / (2i(w - wr) + kt + sum 2(2 pi g)^2 / (i(w - ws) + pi Gamma))`.
pub fn s21(omega: f64, omega_r: f64, kappa_c: f64, kappa_t: f64, lines: &[LineResponse]) -> Complex64 {
    let mut den = Complex64::new(kappa_t, 2.0 * (omega - omega_r));
    for l in lines {
        den += spin_term(omega, l.gens, l.gamma, l.omega_s);
    }
    Complex64::from(1.0) - Complex64::from(kappa_c) / den
}

/// Transition frequency of a line versus field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dispersion {
    /// Tabulated angular frequencies on ascending fields, linearly interpolated
    /// and linearly extrapolated beyond the ends.
    Table { fields: Vec<f64>, omegas: Vec<f64> },
    /// `omega + slope (B - field)`.
    Linear { field: f64, omega: f64, slope: f64 },
}

impl Dispersion {
    pub fn table(fields: Vec<f64>, omegas: Vec<f64>) -> Result<Self> {
        if fields.len() < 2 || fields.len() != omegas.len() {
            return Err(Error::Input("dispersion table needs >= 2 matching field/frequency entries".into()));
        }
        if !fields.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::Input("dispersion fields must be strictly increasing".into()));
        }
        Ok(Dispersion::Table { fields, omegas })
    }

    /// Tabulate a labelled spin transition on `fields` (ascending, tesla).
    pub fn from_species(species: &SpinSpecies, direction: &nalgebra::Vector3<f64>, label: &TransitionLabel, fields: &[f64]) -> Result<Self> {
        let hz = transition_frequency_curve(species, direction, fields, label)?;
        Self::table(fields.to_vec(), hz.into_iter().map(|f| f * TWO_PI).collect())
    }

    pub fn omega_at(&self, b: f64) -> f64 {
        match self {
            Dispersion::Linear { field, omega, slope } => omega + slope * (b - field),
            Dispersion::Table { fields, omegas } => {
                let n = fields.len();
                let k = match fields.binary_search_by(|v| v.total_cmp(&b)) {
                    Ok(k) => return omegas[k],
                    Err(k) => k.clamp(1, n - 1),
                };
                let t = (b - fields[k - 1]) / (fields[k] - fields[k - 1]);
                omegas[k - 1] + t * (omegas[k] - omegas[k - 1])
            }
        }
    }
}

/// A spin ensemble coupled to the resonator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledLine {
    pub label: String,
    /// Hz.
    pub gens: f64,
    /// FWHM, Hz.
    pub gamma: f64,
    pub dispersion: Dispersion,
}

impl CoupledLine {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("g_ens", self.gens)?;
        if self.gens < 0.0 {
            return Err(Error::Input(format!("{}: g_ens must be >= 0", self.label)));
        }
        ensure_positive("linewidth", self.gamma)
    }

    pub fn response(&self, b0: f64) -> LineResponse {
        LineResponse { gens: self.gens, gamma: self.gamma, omega_s: self.dispersion.omega_at(b0) }
    }
}

/// One spectrum sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    /// Tesla.
    pub field: f64,
    /// Probe frequency, Hz.
    pub freq: f64,
    pub mag: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub re: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<f64>,
}

/// Noise-free transmission on the `fields × freqs` grid (field-major).
pub fn simulate_spectrum(res: &Resonator, lines: &[CoupledLine], fields: &[f64], freqs: &[f64]) -> Result<Vec<SpectrumPoint>> {
    res.validate()?;
    for l in lines {
        l.validate()?;
    }
    let rows: Vec<Vec<SpectrumPoint>> = fields
        .par_iter()
        .map(|&b| {
            let resp: Vec<LineResponse> = lines.iter().map(|l| l.response(b)).collect();
            freqs
                .iter()
                .map(|&f| {
                    let s = res.s21(TWO_PI * f, b, &resp);
                    SpectrumPoint { field: b, freq: f, mag: s.norm(), re: Some(s.re), im: Some(s.im) }
                })
                .collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

/// Add Gaussian noise of standard deviation `sigma` to magnitudes (and the
/// complex parts when present), deterministically from `seed`.
pub fn add_noise(points: &mut [SpectrumPoint], sigma: f64, seed: u64) {
    let mut noise = Noise::new(seed);
    for p in points {
        p.mag = noise.additive(p.mag, sigma);
        if let (Some(re), Some(im)) = (p.re, p.im) {
            p.re = Some(noise.additive(re, sigma));
            p.im = Some(noise.additive(im, sigma));
        }
    }
}

fn distinct_fields(points: &[SpectrumPoint]) -> Vec<f64> {
    let mut f: Vec<f64> = points.iter().map(|p| p.field).collect();
    f.sort_by(f64::total_cmp);
    f.dedup();
    f
}

/// Field in `fields` range where the line's frequency meets the resonator.
pub fn crossing_field(res: &Resonator, disp: &Dispersion, lo: f64, hi: f64) -> Option<f64> {
    let n = 2000;
    let g = |b: f64| disp.omega_at(b) - res.omega_r(b);
    let mut prev = (lo, g(lo));
    for k in 1..=n {
        let b = lo + (hi - lo) * k as f64 / n as f64;
        let v = g(b);
        if (v < 0.0) != (prev.1 < 0.0) || v == 0.0 {
            let (mut a, mut c, mut fa) = (prev.0, b, prev.1);
            for _ in 0..100 {
                let m = 0.5 * (a + c);
                let fm = g(m);
                if (fm < 0.0) == (fa < 0.0) {
                    a = m;
                    fa = fm;
                } else {
                    c = m;
                }
            }
            return Some(0.5 * (a + c));
        }
        prev = (b, v);
    }
    None
}

#[derive(Debug, Clone, Serialize)]
pub struct BackgroundFit {
    pub resonator: Resonator,
    /// Root-mean-square |S21| residual.
    pub rms: f64,
    pub fit: FitResult,
}

/// Least-squares resonator parameters from spectrum regions without spin
/// lines: `omega_r(B) = omega_r0 + c B^2`, `kappa_c`, `kappa_i`.
pub fn fit_resonator_background(points: &[SpectrumPoint]) -> Result<BackgroundFit> {
    let fields = distinct_fields(points);
    if fields.len() < 3 {
        return Err(Error::Fit(format!(
            "background fit needs at least 3 field slices without spin lines, got {}",
            fields.len()
        )));
    }
    // Per-slice dip position, depth and half-depth width.
    let mut dips = Vec::new();
    for &b in &fields {
        let mut slice: Vec<&SpectrumPoint> = points.iter().filter(|p| p.field == b).collect();
        slice.sort_by(|a, c| a.freq.total_cmp(&c.freq));
        let min = slice.iter().min_by(|a, c| a.mag.total_cmp(&c.mag)).expect("non-empty slice");
        let d = min.mag.clamp(0.0, 0.99);
        let thresh = ((1.0 + d * d) / 2.0).sqrt();
        let under: Vec<f64> = slice.iter().filter(|p| p.mag <= thresh).map(|p| p.freq).collect();
        let width = if under.len() >= 2 { under[under.len() - 1] - under[0] } else { 0.0 };
        dips.push((b, min.freq, d, width));
    }
    // f_min = f0 + c B^2 by ordinary least squares.
    let n = dips.len() as f64;
    let (sx, sy) = dips.iter().fold((0.0, 0.0), |a, d| (a.0 + d.0 * d.0, a.1 + d.1));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for d in &dips {
        let x = d.0 * d.0 - mx;
        sxx += x * x;
        sxy += x * (d.1 - my);
    }
    let c0 = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let f0 = my - c0 * mx;
    let mut depth: Vec<f64> = dips.iter().map(|d| d.2).collect();
    depth.sort_by(f64::total_cmp);
    let depth = depth[depth.len() / 2];
    let mut widths: Vec<f64> = dips.iter().map(|d| d.3).filter(|w| *w > 0.0).collect();
    widths.sort_by(f64::total_cmp);
    let kt0 = widths.get(widths.len() / 2).map_or(TWO_PI * f0 / 8000.0, |w| TWO_PI * w);
    let ki0 = (depth * kt0).max(1e-3 * kt0);
    let kc0 = (kt0 - ki0).max(1e-3 * kt0);

    let mut problem = FitProblem::new();
    problem.add_param(Parameter::free("f_r0_offset_MHz", 0.0));
    problem.add_param(Parameter::free("shift_MHz_per_T2", c0 / 1e6));
    problem.add_param(Parameter::free("kappa_c_1e6", kc0 / 1e6).bounded(1e-9, f64::INFINITY));
    problem.add_param(Parameter::free("kappa_i_1e6", ki0 / 1e6).bounded(1e-9, f64::INFINITY));
    let to_res = move |q: &[f64]| Resonator::new(TWO_PI * (f0 + q[0] * 1e6), TWO_PI * q[1] * 1e6, q[2] * 1e6, q[3] * 1e6);
    problem.add_block("background", vec![1.0; points.len()], move |q, out| {
        let r = to_res(q);
        for (o, p) in out.iter_mut().zip(points) {
            *o = r.s21(TWO_PI * p.freq, p.field, &[]).norm() - p.mag;
        }
        Ok(())
    })?;
    let fit = fitkit::solve(&problem, &FitOptions::default())?;
    if fit.status == FitStatus::MaxIter {
        return Err(Error::Fit(format!("background fit did not converge: {}", fit.diagnostics)));
    }
    let resonator = to_res(&fit.params);
    let rms = (2.0 * fit.cost / points.len() as f64).sqrt();
    Ok(BackgroundFit { resonator, rms, fit })
}

/// Which part of the data the spectrum fit compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    Magnitude,
    Complex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumFitOptions {
    pub mode: FitMode,
    /// Fit `A |S21|` with a free overall amplitude `A`.
    pub free_amplitude: bool,
    /// Alternations of the two stages. The first round fits the dominant line
    /// alone on a window around its anti-crossing; later rounds refit it on
    /// all data with the other lines frozen at their latest values.
    pub rounds: usize,
}

impl Default for SpectrumFitOptions {
    fn default() -> Self {
        Self { mode: FitMode::Magnitude, free_amplitude: false, rounds: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineEstimate {
    pub label: String,
    /// Hz.
    pub gens: f64,
    pub gens_err: f64,
    /// FWHM, Hz.
    pub gamma: f64,
    pub gamma_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub stage: String,
    pub status: FitStatus,
    pub iterations: usize,
    pub reduced_chi2: f64,
    pub n_points: usize,
    pub diagnostics: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumFit {
    /// Same order as the templates.
    pub lines: Vec<LineEstimate>,
    pub amplitude: f64,
    pub amplitude_err: f64,
    pub stages: Vec<StageReport>,
}

impl SpectrumFit {
    /// Lines other than the dominant one.
    pub fn secondary(&self, dominant: usize) -> Vec<&LineEstimate> {
        self.lines.iter().enumerate().filter(|(k, _)| *k != dominant).map(|(_, l)| l).collect()
    }
}

struct StageSpec<'a> {
    name: String,
    mask: &'a [usize],
    include: Vec<bool>,
    free: Vec<bool>,
}

struct SpectrumModel<'a> {
    points: &'a [SpectrumPoint],
    omega_s: Vec<Vec<f64>>,
    res: Resonator,
    mode: FitMode,
    free_amplitude: bool,
}

impl SpectrumModel<'_> {
    /// Params: [amplitude, g_0 (MHz), Gamma_0 (MHz), g_1, Gamma_1, ...].
    fn run(&self, spec: &StageSpec<'_>, state: &mut [f64], errors: &mut [f64]) -> Result<StageReport> {
        let nl = self.omega_s.len();
        let mut problem = FitProblem::new();
        let amp = Parameter::free("amplitude", state[0]).bounded(0.0, f64::INFINITY);
        problem.add_param(if self.free_amplitude { amp } else { Parameter::fixed("amplitude", state[0]) });
        for k in 0..nl {
            let (g, w) = (state[1 + 2 * k], state[2 + 2 * k]);
            if spec.free[k] {
                problem.add_param(Parameter::free(format!("gens_{k}"), g).bounded(0.0, f64::INFINITY));
                problem.add_param(Parameter::free(format!("gamma_{k}"), w).bounded(1e-6, f64::INFINITY));
            } else {
                problem.add_param(Parameter::fixed(format!("gens_{k}"), g));
                problem.add_param(Parameter::fixed(format!("gamma_{k}"), w));
            }
        }
        let per_point = if self.mode == FitMode::Complex { 2 } else { 1 };
        let include = spec.include.clone();
        let mask = spec.mask;
        let this = self;
        problem.add_block(spec.name.clone(), vec![1.0; mask.len() * per_point], move |q, out| {
            let (kc, kt) = (this.res.kappa_c, this.res.kappa_t());
            for (n, &i) in mask.iter().enumerate() {
                let p = &this.points[i];
                let w = TWO_PI * p.freq;
                let mut den = Complex64::new(kt, 2.0 * (w - this.res.omega_r(p.field)));
                for k in 0..nl {
                    if include[k] {
                        den += spin_term(w, q[1 + 2 * k] * 1e6, q[2 + 2 * k] * 1e6, this.omega_s[k][i]);
                    }
                }
                let s = (Complex64::from(1.0) - Complex64::from(kc) / den) * q[0];
                match this.mode {
                    FitMode::Magnitude => out[n] = s.norm() - p.mag,
                    FitMode::Complex => {
                        out[2 * n] = s.re - p.re.unwrap_or(f64::NAN);
                        out[2 * n + 1] = s.im - p.im.unwrap_or(f64::NAN);
                    }
                }
            }
            Ok(())
        })?;
        let fit = fitkit::solve(&problem, &FitOptions::default())?;
        let report = StageReport {
            stage: spec.name.clone(),
            status: fit.status,
            iterations: fit.iterations,
            reduced_chi2: fit.reduced_chi2(),
            n_points: mask.len(),
            diagnostics: fit.diagnostics.clone(),
        };
        if fit.status == FitStatus::MaxIter {
            return Err(Error::Fit(format!("{}: {}", spec.name, fit.diagnostics)));
        }
        for (k, v) in fit.params.iter().enumerate() {
            state[k] = *v;
        }
        if self.free_amplitude {
            errors[0] = fit.std_errors[0];
        }
        for k in 0..nl {
            if spec.free[k] {
                errors[1 + 2 * k] = fit.std_errors[1 + 2 * k];
                errors[2 + 2 * k] = fit.std_errors[2 + 2 * k];
            }
        }
        Ok(report)
    }
}

/// Local minima of |S21| along frequency in the slice closest to `b`.
fn slice_minima(points: &[SpectrumPoint], b: f64) -> Vec<(f64, f64)> {
    let nearest = points
        .iter()
        .map(|p| p.field)
        .min_by(|x, y| (x - b).abs().total_cmp(&(y - b).abs()))
        .unwrap_or(b);
    let mut slice: Vec<&SpectrumPoint> = points.iter().filter(|p| p.field == nearest).collect();
    slice.sort_by(|x, y| x.freq.total_cmp(&y.freq));
    let mut minima = Vec::new();
    for w in slice.windows(3) {
        if w[1].mag < w[0].mag && w[1].mag <= w[2].mag {
            minima.push((w[1].freq, w[1].mag));
        }
    }
    minima.sort_by(|x, y| x.1.total_cmp(&y.1));
    minima
}

/// Two-stage fit of (g_ens, Gamma) for every template line against a
/// magnitude (or complex) spectrum with a known resonator. `templates`
/// supply dispersions and starting values (`gens = 0` requests an automatic
/// guess); `dominant` indexes the line fitted on its own first.
pub fn fit_spectrum_two_stage(
    points: &[SpectrumPoint],
    resonator: &Resonator,
    templates: &[CoupledLine],
    dominant: usize,
    opts: &SpectrumFitOptions,
) -> Result<SpectrumFit> {
    resonator.validate()?;
    if points.is_empty() {
        return Err(Error::Input("empty spectrum".into()));
    }
    if dominant >= templates.len() {
        return Err(Error::Input(format!("dominant line index {dominant} out of range")));
    }
    for t in templates {
        ensure_positive("template linewidth", t.gamma)?;
    }
    for p in points {
        ensure_finite("spectrum field", p.field)?;
        ensure_finite("spectrum frequency", p.freq)?;
        ensure_finite("spectrum magnitude", p.mag)?;
        if opts.mode == FitMode::Complex && (p.re.is_none() || p.im.is_none()) {
            return Err(Error::Input("complex fit requested but spectrum lacks re/im columns".into()));
        }
    }
    let nl = templates.len();
    let omega_s: Vec<Vec<f64>> = templates
        .iter()
        .map(|t| points.iter().map(|p| t.dispersion.omega_at(p.field)).collect())
        .collect();
    let model = SpectrumModel { points, omega_s, res: *resonator, mode: opts.mode, free_amplitude: opts.free_amplitude };

    let fields = distinct_fields(points);
    let (lo, hi) = (fields[0], fields[fields.len() - 1]);
    let crossings: Vec<Option<f64>> = templates.iter().map(|t| crossing_field(resonator, &t.dispersion, lo, hi)).collect();

    // Initial state.
    let mut state = vec![0.0; 1 + 2 * nl];
    let mut errors = vec![0.0; 1 + 2 * nl];
    state[0] = 1.0;
    for (k, t) in templates.iter().enumerate() {
        state[1 + 2 * k] = if t.gens > 0.0 { t.gens / 1e6 } else { 1.0 };
        state[2 + 2 * k] = t.gamma / 1e6;
    }
    if let Some(bd) = crossings[dominant] {
        let minima = slice_minima(points, bd);
        if minima.len() >= 2 {
            state[1 + 2 * dominant] = 0.5 * (minima[0].0 - minima[1].0).abs() / 1e6;
        }
    }

    // Window for the first dominant-only stage.
    let all: Vec<usize> = (0..points.len()).collect();
    let window: Vec<usize> = match crossings[dominant] {
        Some(bd) => {
            let nearest_other = crossings
                .iter()
                .enumerate()
                .filter(|(k, c)| *k != dominant && c.is_some())
                .map(|(_, c)| (c.expect("some") - bd).abs())
                .fold(f64::INFINITY, f64::min);
            let half = 0.5 * nearest_other;
            let w: Vec<usize> = all.iter().cloned().filter(|&i| (points[i].field - bd).abs() <= half).collect();
            if w.len() > 4 { w } else { all.clone() }
        }
        None => all.clone(),
    };

    let only_dominant: Vec<bool> = (0..nl).map(|k| k == dominant).collect();
    let others: Vec<bool> = only_dominant.iter().map(|d| !d).collect();
    let has_others = nl > 1;
    let mut stages = Vec::new();
    for round in 0..opts.rounds.max(1) {
        let before = state.clone();
        let s1 = if round == 0 {
            StageSpec { name: "stage1_dominant".into(), mask: &window, include: only_dominant.clone(), free: only_dominant.clone() }
        } else {
            StageSpec { name: format!("stage1_dominant_round{}", round + 1), mask: &all, include: vec![true; nl], free: only_dominant.clone() }
        };
        stages.push(model.run(&s1, &mut state, &mut errors)?);
        if !has_others {
            break;
        }
        let name = if round == 0 { "stage2_secondary".to_string() } else { format!("stage2_secondary_round{}", round + 1) };
        let s2 = StageSpec { name, mask: &all, include: vec![true; nl], free: others.clone() };
        stages.push(model.run(&s2, &mut state, &mut errors)?);
        let change = state
            .iter()
            .zip(&before)
            .map(|(a, b)| ((a - b) / b.abs().max(1e-12)).abs())
            .fold(0.0, f64::max);
        if round > 0 && change < 1e-7 {
            break;
        }
    }

    let lines = templates
        .iter()
        .enumerate()
        .map(|(k, t)| LineEstimate {
            label: t.label.clone(),
            gens: state[1 + 2 * k] * 1e6,
            gens_err: errors[1 + 2 * k] * 1e6,
            gamma: state[2 + 2 * k] * 1e6,
            gamma_err: errors[2 + 2 * k] * 1e6,
        })
        .collect();
    Ok(SpectrumFit { lines, amplitude: state[0], amplitude_err: errors[0], stages })
}
