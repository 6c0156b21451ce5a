//! File formats and the project configuration.
//!
//! Files use mT, GHz, MHz, kHz and µs as labelled in their headers; values are
//! converted to SI on read.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::budget::{BudgetConfig, BudgetPoint};
use crate::cavity::{LineEstimate, Resonator, SpectrumPoint};
use crate::error::{Error, Result};
use crate::fieldmap::FieldMap;
use crate::fitkit::FitResult;
use crate::presets::{self, LinePreset};
use crate::sdmodel::{EchoDataset, EchoKind, EchoPoint, TieConfig};
use crate::spinham::{RotationPoint, SpinSpecies, TrackedSweep};

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(File::create(path)?)
}

/// Deserialize every row of a headed CSV stream.
pub fn read_csv_from<R: Read, T: DeserializeOwned>(reader: R, source: &str) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize()
        .map(|row| row.map_err(|e| Error::Data(format!("{source}: {e}"))))
        .collect()
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_csv_from(open(path)?, &path.display().to_string())
}

pub fn write_csv_to<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_csv_to(create(path)?, rows)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(std::io::BufReader::new(open(path)?))
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

/// A species list, either bare or under a `species` key.
pub fn read_species(path: &Path) -> Result<Vec<SpinSpecies>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Doc {
        List(Vec<SpinSpecies>),
        Wrapped { species: Vec<SpinSpecies> },
    }
    let list = match read_json::<Doc>(path)? {
        Doc::List(l) | Doc::Wrapped { species: l } => l,
    };
    for s in &list {
        s.validate().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }
    Ok(list)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationRow {
    pub theta_deg: f64,
    pub species: String,
    pub transition: String,
    #[serde(rename = "B_mT")]
    pub b_mt: f64,
}

pub fn rotation_rows(points: &[RotationPoint]) -> Vec<RotationRow> {
    points
        .iter()
        .map(|p| RotationRow {
            theta_deg: p.theta.to_degrees(),
            species: p.species.clone(),
            transition: p.label.to_string(),
            b_mt: p.field * 1e3,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    #[serde(rename = "B0_mT")]
    pub b0_mt: f64,
    pub level: usize,
    #[serde(rename = "m_S")]
    pub m_s: f64,
    #[serde(rename = "m_I")]
    pub m_i: f64,
    #[serde(rename = "E_GHz")]
    pub e_ghz: f64,
}

/// Tracked level energies, one row per (field, label).
pub fn level_rows(sweep: &TrackedSweep) -> Vec<LevelRow> {
    let mut rows = Vec::with_capacity(sweep.fields.len() * sweep.labels.len());
    for (k, b) in sweep.fields.iter().enumerate() {
        for (l, lab) in sweep.labels.iter().enumerate() {
            rows.push(LevelRow {
                b0_mt: b * 1e3,
                level: l,
                m_s: lab.m_s,
                m_i: lab.m_i,
                e_ghz: sweep.energy(k, l) / crate::constants::TWO_PI / 1e9,
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GensRow {
    pub transition_label: String,
    #[serde(rename = "T_mK")]
    pub t_mk: f64,
    #[serde(rename = "gens_kHz")]
    pub gens_khz: f64,
    #[serde(rename = "sigma_kHz")]
    pub sigma_khz: f64,
}

/// Parameter table of a fit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub parameter: String,
    pub value: f64,
    pub std_error: f64,
}

pub fn parameter_rows(fit: &FitResult) -> Vec<ParameterRow> {
    fit.names
        .iter()
        .zip(&fit.params)
        .zip(&fit.std_errors)
        .map(|((n, v), e)| ParameterRow { parameter: n.clone(), value: *v, std_error: *e })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FieldMapRow {
    x_um: f64,
    z_um: f64,
    #[serde(rename = "dB1x_T")]
    bx: f64,
    #[serde(rename = "dB1z_T")]
    bz: f64,
}

pub fn read_fieldmap(path: &Path, length: f64) -> Result<FieldMap> {
    let rows: Vec<FieldMapRow> = read_csv(path)?;
    let samples: Vec<_> = rows.iter().map(|r| (r.x_um * 1e-6, r.z_um * 1e-6, r.bx, r.bz)).collect();
    FieldMap::from_samples(&samples, length).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_fieldmap(path: &Path, map: &FieldMap) -> Result<()> {
    let mut rows = Vec::with_capacity(map.x.len() * map.z.len());
    for (i, x) in map.x.iter().enumerate() {
        for (j, z) in map.z.iter().enumerate() {
            let k = i * map.z.len() + j;
            rows.push(FieldMapRow { x_um: x * 1e6, z_um: z * 1e6, bx: map.bx[k], bz: map.bz[k] });
        }
    }
    write_csv(path, &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    #[serde(rename = "B0_mT")]
    pub b0_mt: f64,
    #[serde(rename = "freq_GHz")]
    pub freq_ghz: f64,
    pub s21_mag: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s21_re: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s21_im: Option<f64>,
}

impl From<&SpectrumPoint> for SpectrumRow {
    fn from(p: &SpectrumPoint) -> Self {
        Self { b0_mt: p.field * 1e3, freq_ghz: p.freq * 1e-9, s21_mag: p.mag, s21_re: p.re, s21_im: p.im }
    }
}

impl From<&SpectrumRow> for SpectrumPoint {
    fn from(r: &SpectrumRow) -> Self {
        Self { field: r.b0_mt * 1e-3, freq: r.freq_ghz * 1e9, mag: r.s21_mag, re: r.s21_re, im: r.s21_im }
    }
}

pub fn read_spectrum(path: &Path) -> Result<Vec<SpectrumPoint>> {
    let rows: Vec<SpectrumRow> = read_csv(path)?;
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no spectrum rows", path.display())));
    }
    Ok(rows.iter().map(SpectrumPoint::from).collect())
}

pub fn write_spectrum(path: &Path, points: &[SpectrumPoint]) -> Result<()> {
    let rows: Vec<SpectrumRow> = points.iter().map(SpectrumRow::from).collect();
    write_csv(path, &rows)
}

/// One fitted transition in kHz / MHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineReportRow {
    pub transition: String,
    #[serde(rename = "gens_kHz")]
    pub gens_khz: f64,
    pub gens_err: f64,
    #[serde(rename = "gamma_MHz")]
    pub gamma_mhz: f64,
    pub gamma_err: f64,
}

impl From<&LineEstimate> for LineReportRow {
    fn from(l: &LineEstimate) -> Self {
        Self {
            transition: l.label.clone(),
            gens_khz: l.gens * 1e-3,
            gens_err: l.gens_err * 1e-3,
            gamma_mhz: l.gamma * 1e-6,
            gamma_err: l.gamma_err * 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoRow {
    pub kind: String,
    pub tau_us: f64,
    #[serde(rename = "Tw_us")]
    pub tw_us: f64,
    pub amplitude: f64,
    pub sigma: f64,
    #[serde(rename = "T_mK")]
    pub t_mk: f64,
    #[serde(rename = "B0_mT")]
    pub b0_mt: f64,
    /// Optional series label (e.g. pulse power).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

/// Group echo rows into datasets sharing kind, bath temperature, field and tag,
/// in order of first appearance.
pub fn echo_datasets(rows: &[EchoRow]) -> Result<Vec<EchoDataset>> {
    let mut out: Vec<EchoDataset> = Vec::new();
    for (n, r) in rows.iter().enumerate() {
        let kind: EchoKind = r.kind.parse().map_err(|e| Error::Data(format!("echo row {}: {e}", n + 2)))?;
        let (t, b) = (r.t_mk * 1e-3, r.b0_mt * 1e-3);
        let p = EchoPoint { tau: r.tau_us * 1e-6, t_w: r.tw_us * 1e-6, amplitude: r.amplitude, sigma: r.sigma };
        match out.iter_mut().find(|d| d.kind == kind && d.t_bath == t && d.b0 == b && d.tag == r.tag) {
            Some(d) => d.points.push(p),
            None => out.push(EchoDataset { kind, points: vec![p], t_bath: t, b0: b, tag: r.tag.clone() }),
        }
    }
    for d in &out {
        d.validate().map_err(|e| Error::Data(format!("echo dataset at {} mK: {e}", d.t_bath * 1e3)))?;
    }
    Ok(out)
}

pub fn echo_rows(d: &EchoDataset) -> Vec<EchoRow> {
    let kind = match d.kind {
        EchoKind::TwoPulse => "2PE",
        EchoKind::ThreePulse => "3PE",
    };
    d.points
        .iter()
        .map(|p| EchoRow {
            kind: kind.into(),
            tau_us: p.tau * 1e6,
            tw_us: p.t_w * 1e6,
            amplitude: p.amplitude,
            sigma: p.sigma,
            t_mk: d.t_bath * 1e3,
            b0_mt: d.b0 * 1e3,
            tag: d.tag.clone(),
        })
        .collect()
}

/// Per-temperature spectral-diffusion fit summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct EchoFitRow {
    pub T_mK: f64,
    pub Gamma_SD_Er_Hz: f64,
    pub Gamma_SD_Er_err: f64,
    pub R_Er_per_s: f64,
    pub R_Er_err: f64,
    pub Gamma_SD_Yb_Hz: f64,
    pub Gamma_SD_Yb_err: f64,
    pub R_Yb_per_s: f64,
    pub R_Yb_err: f64,
    pub T2_s: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct BudgetRow {
    pub T_mK: f64,
    pub Gamma0_Hz: f64,
    pub GammaSD_Hz: f64,
    pub GammaNSD_Hz: f64,
    pub Gammah_Hz: f64,
    pub T2_ms: f64,
}

impl From<&BudgetPoint> for BudgetRow {
    fn from(p: &BudgetPoint) -> Self {
        Self {
            T_mK: p.temperature * 1e3,
            Gamma0_Hz: p.gamma0,
            GammaSD_Hz: p.gamma_sd,
            GammaNSD_Hz: p.gamma_nsd,
            Gammah_Hz: p.gamma_h,
            T2_ms: p.t2 * 1e3,
        }
    }
}

/// Everything a CLI run needs besides its data files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    #[serde(default)]
    pub species: Vec<SpinSpecies>,
    #[serde(default)]
    pub resonator: Option<Resonator>,
    /// Resonator-coupled transitions for spectrum simulation and fitting.
    #[serde(default)]
    pub lines: Vec<LinePreset>,
    /// Index into `lines` of the line fitted first.
    #[serde(default)]
    pub dominant_line: Option<usize>,
    #[serde(default)]
    pub field_map: Option<PathBuf>,
    /// Inductor length, m.
    #[serde(default)]
    pub inductor_length: Option<f64>,
    #[serde(default)]
    pub budget: Option<BudgetConfig>,
    /// Er/Yb tying; its bath temperature is replaced per dataset.
    #[serde(default)]
    pub tie: Option<TieConfig>,
    /// Physical-constant overrides are not supported; present only to give a
    /// clear error instead of silently ignoring them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<serde_json::Value>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        Self {
            species: presets::species(),
            resonator: Some(presets::resonator()),
            lines: presets::coupled_lines(),
            dominant_line: Some(1),
            field_map: None,
            inductor_length: Some(725e-6),
            budget: Some(presets::budget_config()),
            tie: Some(presets::tie_config(0.1)),
            constants: None,
            output_dir: None,
        }
    }
}

impl ProjectConfig {
    /// Read and validate a JSON config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(fm) = &cfg.field_map {
            if fm.is_relative() {
                cfg.field_map = Some(base.join(fm));
            }
        }
        cfg.validate().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.constants.is_some() {
            return Err(Error::Config("overriding physical constants is not supported".into()));
        }
        for s in &self.species {
            s.validate()?;
        }
        if let Some(r) = &self.resonator {
            r.validate()?;
        }
        for l in &self.lines {
            if self.find_species(&l.species).is_none() {
                return Err(Error::Config(format!("line refers to unknown species '{}'", l.species)));
            }
        }
        if let Some(d) = self.dominant_line {
            if d >= self.lines.len() {
                return Err(Error::Config(format!("dominant_line {d} out of range")));
            }
        }
        if let Some(fm) = &self.field_map {
            if !fm.exists() {
                return Err(Error::Config(format!("field map {} does not exist", fm.display())));
            }
        }
        if let Some(l) = self.inductor_length {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::Config(format!("inductor_length must be positive, got {l}")));
            }
        }
        if let Some(b) = &self.budget {
            b.validate()?;
        }
        Ok(())
    }

    pub fn find_species(&self, name: &str) -> Option<&SpinSpecies> {
        self.species.iter().find(|s| s.name.eq_ignore_ascii_case(name))
    }

    pub fn species_named(&self, name: &str) -> Result<&SpinSpecies> {
        self.find_species(name).ok_or_else(|| {
            let known: Vec<&str> = self.species.iter().map(|s| s.name.as_str()).collect();
            Error::Config(format!("unknown species '{name}' (configured: {})", known.join(", ")))
        })
    }
}
