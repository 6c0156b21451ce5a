use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::eigen::{eigensystem, transition_elements, EigenSystem};
use super::operators::{hamiltonian_with, CMatrix, SpinOperators};
use super::species::{FieldVector, SpinSpecies};
use crate::constants::TWO_PI;
use crate::error::{ensure_finite, Error, Result};

/// High-field quantum numbers used to name a level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelLabel {
    pub m_s: f64,
    pub m_i: f64,
}

fn fmt_half(v: f64) -> String {
    let twice = (2.0 * v).round() as i64;
    if twice == 0 {
        "0".into()
    } else if twice % 2 == 0 {
        format!("{:+}", twice / 2)
    } else {
        format!("{:+}/2", twice)
    }
}

fn parse_half(s: &str) -> Option<f64> {
    let s = s.trim();
    match s.split_once('/') {
        Some((num, "2")) => num.trim().parse::<i64>().ok().map(|n| n as f64 / 2.0),
        Some(_) => None,
        None => s.parse::<i64>().ok().map(|n| n as f64),
    }
}

impl fmt::Display for LevelLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|{},{}>", fmt_half(self.m_s), fmt_half(self.m_i))
    }
}

/// An allowed-type transition between two labelled levels, `upper` having the
/// larger electron projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionLabel {
    pub lower: LevelLabel,
    pub upper: LevelLabel,
}

impl TransitionLabel {
    /// The nuclear-spin-conserving transition -1/2 -> +1/2 at nuclear projection `m_i`.
    pub fn nuclear(m_i: f64) -> Self {
        Self {
            lower: LevelLabel { m_s: -0.5, m_i },
            upper: LevelLabel { m_s: 0.5, m_i },
        }
    }

    pub fn delta_m_i(&self) -> f64 {
        self.upper.m_i - self.lower.m_i
    }

    fn same(&self, other: &Self) -> bool {
        let eq = |a: f64, b: f64| (a - b).abs() < 1e-9;
        eq(self.lower.m_s, other.lower.m_s)
            && eq(self.lower.m_i, other.lower.m_i)
            && eq(self.upper.m_s, other.upper.m_s)
            && eq(self.upper.m_i, other.upper.m_i)
    }
}

/// Short form: `mI=+3/2` for nuclear-conserving -1/2 -> +1/2 transitions,
/// otherwise `mS=a->b,mI=c->d` with the default electron part omitted.
impl fmt::Display for TransitionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lower.m_s != -0.5 || self.upper.m_s != 0.5 {
            write!(f, "mS={}->{},", fmt_half(self.lower.m_s), fmt_half(self.upper.m_s))?;
        }
        if self.lower.m_i == self.upper.m_i {
            write!(f, "mI={}", fmt_half(self.lower.m_i))
        } else {
            write!(f, "mI={}->{}", fmt_half(self.lower.m_i), fmt_half(self.upper.m_i))
        }
    }
}

impl FromStr for TransitionLabel {
    type Err = Error;

    /// Accepts the [`Display`](fmt::Display) form, a bare `+3/2`, or `I=0`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Input(format!("unrecognized transition label '{s}'"));
        let t = s.trim().trim_start_matches('|').trim_end_matches('>');
        if t.eq_ignore_ascii_case("I=0") {
            return Ok(Self::nuclear(0.0));
        }
        let pair = |p: &str| -> Option<(f64, f64)> {
            match p.split_once("->") {
                Some((a, b)) => Some((parse_half(a)?, parse_half(b)?)),
                None => parse_half(p).map(|v| (v, v)),
            }
        };
        let mut ms = (-0.5, 0.5);
        let mut mi = None;
        for part in t.split(',') {
            let part = part.trim();
            if let Some(rest) = part.strip_prefix("mS=") {
                ms = pair(rest).ok_or_else(bad)?;
            } else if let Some(rest) = part.strip_prefix("mI=") {
                mi = Some(pair(rest).ok_or_else(bad)?);
            } else {
                mi = Some(pair(part).ok_or_else(bad)?);
            }
        }
        let (li, ui) = mi.ok_or_else(bad)?;
        Ok(Self {
            lower: LevelLabel { m_s: ms.0, m_i: li },
            upper: LevelLabel { m_s: ms.1, m_i: ui },
        })
    }
}

/// Which labelled level pairs count as transitions. All rules require the
/// electron projection to increase by one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selection {
    /// Δm_I = 0.
    NuclearConserving,
    /// Δm_I equal to the given number of half-units times two, i.e. `DeltaMi(1)` means Δm_I = +1.
    DeltaMi(i32),
    Any,
}

impl Selection {
    fn admits(&self, t: &TransitionLabel) -> bool {
        if (t.upper.m_s - t.lower.m_s - 1.0).abs() > 1e-9 {
            return false;
        }
        match self {
            Selection::NuclearConserving => t.delta_m_i().abs() < 1e-9,
            Selection::DeltaMi(k) => (t.delta_m_i() - *k as f64).abs() < 1e-9,
            Selection::Any => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    /// Uniform bracketing grid size (clamped to at least 500).
    pub points: usize,
    /// Bisection stops once the bracket is narrower than this (tesla).
    pub field_tolerance: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { points: 500, field_tolerance: 1e-11 }
    }
}

/// One resonance found by [`resonance_fields`].
#[derive(Debug, Clone, PartialEq)]
pub struct Resonance {
    /// Tesla.
    pub field: f64,
    pub label: TransitionLabel,
    /// Energy-ordered level indices at `field`.
    pub lower_level: usize,
    pub upper_level: usize,
    /// <upper|Sx|lower>, <upper|Sz|lower> in the B0-along-y frame.
    pub sx: Complex64,
    pub sz: Complex64,
}

impl Resonance {
    /// sqrt(|<Sx>|^2 + |<Sz>|^2).
    pub fn element_magnitude(&self) -> f64 {
        (self.sx.norm_sqr() + self.sz.norm_sqr()).sqrt()
    }
}

fn round_half(v: f64) -> f64 {
    (2.0 * v).round() / 2.0
}

/// Field at which levels are named: well above the scale where the hyperfine
/// interaction competes with the Zeeman term.
pub fn label_field(species: &SpinSpecies, direction: &Vector3<f64>, b_max: f64) -> f64 {
    let zeeman = species.zeeman_hz_per_tesla(direction);
    let a_max = species.a_diag_mhz.iter().fold(0.0_f64, |m, a| m.max(a.abs())) * 1e6;
    let hf = a_max * species.nuclear_spin.max(0.5);
    let b = if species.has_hyperfine() { 30.0 * hf / zeeman } else { 0.0 };
    b.max(b_max).max(1e-3)
}

fn label_levels(species: &SpinSpecies, ops: &SpinOperators, direction: &Vector3<f64>, es: &EigenSystem) -> Option<Vec<LevelLabel>> {
    let g = species.g_tensor();
    let e = (g * direction).normalize();
    let se = ops.s_along(&e);
    let ie = if species.has_hyperfine() {
        let a = species.a_tensor_hz();
        let ae = a * e;
        let sign = if e.dot(&ae) < 0.0 { -1.0 } else { 1.0 };
        Some(ops.i_along(&(ae.normalize() * sign)))
    } else {
        None
    };
    let labels: Vec<LevelLabel> = (0..es.dimension())
        .map(|k| LevelLabel {
            m_s: round_half(es.expectation(&se, k)),
            m_i: ie.as_ref().map_or(0.0, |op| round_half(es.expectation(op, k))),
        })
        .collect();
    let unique = labels
        .iter()
        .enumerate()
        .all(|(a, la)| labels[a + 1..].iter().all(|lb| la != lb));
    let spin_i_zero = species.two_i() == 0 || species.has_hyperfine();
    (unique && spin_i_zero).then_some(labels)
}

/// Greedy maximum-overlap assignment: `result[p]` is the column of `cur`
/// continuing column `p` of `prev`.
pub(crate) fn assign_by_overlap(prev: &CMatrix, cur: &CMatrix) -> Vec<usize> {
    let n = prev.ncols();
    let overlap = prev.adjoint() * cur;
    let mut entries: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for p in 0..n {
        for c in 0..n {
            entries.push((overlap[(p, c)].norm_sqr(), p, c));
        }
    }
    entries.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut result = vec![usize::MAX; n];
    let mut taken = vec![false; n];
    let mut left = n;
    for (_, p, c) in entries {
        if result[p] == usize::MAX && !taken[c] {
            result[p] = c;
            taken[c] = true;
            left -= 1;
            if left == 0 {
                break;
            }
        }
    }
    result
}

/// Levels of a species followed through a field sweep at fixed orientation.
#[derive(Debug, Clone)]
pub struct TrackedSweep {
    pub fields: Vec<f64>,
    pub labels: Vec<LevelLabel>,
    /// `assignment[k][l]`: energy index of label `l` at `fields[k]`.
    pub assignment: Vec<Vec<usize>>,
    pub systems: Vec<EigenSystem>,
}

impl TrackedSweep {
    pub fn label_index(&self, label: &LevelLabel) -> Option<usize> {
        self.labels
            .iter()
            .position(|l| (l.m_s - label.m_s).abs() < 1e-9 && (l.m_i - label.m_i).abs() < 1e-9)
    }

    /// Angular energy of label index `l` at sweep point `k`.
    pub fn energy(&self, k: usize, l: usize) -> f64 {
        self.systems[k].energies[self.assignment[k][l]]
    }

    /// All transitions admitted by `selection`, in label order.
    pub fn transitions(&self, selection: Selection) -> Vec<TransitionLabel> {
        let mut out = Vec::new();
        for lower in &self.labels {
            for upper in &self.labels {
                let t = TransitionLabel { lower: *lower, upper: *upper };
                if selection.admits(&t) {
                    out.push(t);
                }
            }
        }
        out.sort_by(|a, b| {
            a.lower
                .m_s
                .total_cmp(&b.lower.m_s)
                .then(a.lower.m_i.total_cmp(&b.lower.m_i))
                .then(a.upper.m_i.total_cmp(&b.upper.m_i))
        });
        out
    }

    fn pair(&self, t: &TransitionLabel) -> Result<(usize, usize)> {
        let missing = || Error::Input(format!("transition {t} does not exist for this species"));
        Ok((
            self.label_index(&t.lower).ok_or_else(missing)?,
            self.label_index(&t.upper).ok_or_else(missing)?,
        ))
    }

    /// Signed transition angular frequency E_upper - E_lower at every sweep point.
    pub fn transition_curve(&self, t: &TransitionLabel) -> Result<Vec<f64>> {
        let (l, u) = self.pair(t)?;
        Ok((0..self.fields.len()).map(|k| self.energy(k, u) - self.energy(k, l)).collect())
    }
}

struct Tracker<'a> {
    species: &'a SpinSpecies,
    ops: SpinOperators,
    direction: Vector3<f64>,
    theta: f64,
    phi: f64,
}

impl<'a> Tracker<'a> {
    fn new(species: &'a SpinSpecies, direction: &Vector3<f64>) -> Result<Self> {
        species.validate()?;
        let f = FieldVector::from_direction(1.0, direction)?;
        Ok(Self {
            species,
            ops: SpinOperators::for_species(species),
            direction: f.direction(),
            theta: f.theta,
            phi: f.phi,
        })
    }

    fn field(&self, b: f64) -> FieldVector {
        FieldVector::new(b, self.theta, self.phi)
    }

    fn solve(&self, b: f64) -> Result<EigenSystem> {
        eigensystem(&hamiltonian_with(&self.ops, self.species, &self.field(b)))
    }

    /// Label levels at high field, then walk down to the lowest requested field.
    fn sweep(&self, fields: &[f64]) -> Result<TrackedSweep> {
        let b_max = fields.iter().cloned().fold(0.0, f64::max);
        let mut b_label = label_field(self.species, &self.direction, b_max);
        let (mut es, labels) = loop {
            let es = self.solve(b_label)?;
            if let Some(l) = label_levels(self.species, &self.ops, &self.direction, &es) {
                break (es, l);
            }
            if b_label > 1e3 {
                return Err(Error::Undefined(format!(
                    "could not assign high-field quantum numbers to levels of {}",
                    self.species.name
                )));
            }
            b_label *= 4.0;
        };
        let mut assign: Vec<usize> = (0..labels.len()).collect();

        let mut order: Vec<usize> = (0..fields.len()).collect();
        order.sort_by(|&a, &b| fields[b].total_cmp(&fields[a]));
        let mut out_assign = vec![Vec::new(); fields.len()];
        let mut out_sys: Vec<Option<EigenSystem>> = vec![None; fields.len()];

        // Coarse descent from the labelling field to the top of the requested range.
        let top = fields[order[0]];
        if b_label > top {
            let steps = 400;
            for s in 1..steps {
                let b = b_label - (b_label - top) * s as f64 / steps as f64;
                let next = self.solve(b)?;
                let map = assign_by_overlap(&es.states, &next.states);
                assign = assign.iter().map(|&i| map[i]).collect();
                es = next;
            }
        }
        for &k in &order {
            let next = self.solve(fields[k])?;
            let map = assign_by_overlap(&es.states, &next.states);
            assign = assign.iter().map(|&i| map[i]).collect();
            es = next;
            out_assign[k] = assign.clone();
            out_sys[k] = Some(es.clone());
        }
        Ok(TrackedSweep {
            fields: fields.to_vec(),
            labels,
            assignment: out_assign,
            systems: out_sys.into_iter().map(|s| s.expect("every field visited")).collect(),
        })
    }

    /// Energy indices of labels `(l, u)` at field `b`, continuing from reference states.
    fn energies_near(&self, reference: &EigenSystem, ref_idx: (usize, usize), b: f64) -> Result<(EigenSystem, usize, usize)> {
        let es = self.solve(b)?;
        let map = assign_by_overlap(&reference.states, &es.states);
        Ok((es, map[ref_idx.0], map[ref_idx.1]))
    }
}

/// Follow all levels of `species` through `fields` (tesla, any order) at
/// the fixed orientation `direction`.
pub fn track_levels(species: &SpinSpecies, direction: &Vector3<f64>, fields: &[f64]) -> Result<TrackedSweep> {
    if fields.is_empty() {
        return Err(Error::Input("empty field list".into()));
    }
    for &b in fields {
        ensure_finite("field", b)?;
        if b < 0.0 {
            return Err(Error::Input(format!("field magnitude must be >= 0, got {b}")));
        }
    }
    Tracker::new(species, direction)?.sweep(fields)
}

/// Transition frequency in Hz of `label` at each field.
pub fn transition_frequency_curve(
    species: &SpinSpecies,
    direction: &Vector3<f64>,
    fields: &[f64],
    label: &TransitionLabel,
) -> Result<Vec<f64>> {
    let sweep = track_levels(species, direction, fields)?;
    Ok(sweep.transition_curve(label)?.into_iter().map(|w| w / TWO_PI).collect())
}

/// Energy-ordered level energies in Hz at each field (no tracking).
pub fn level_energies_hz(species: &SpinSpecies, direction: &Vector3<f64>, fields: &[f64]) -> Result<Vec<Vec<f64>>> {
    let tracker = Tracker::new(species, direction)?;
    fields
        .iter()
        .map(|&b| {
            ensure_finite("field", b)?;
            Ok(tracker.solve(b)?.energies_hz())
        })
        .collect()
}

/// Static fields in `[b_lo, b_hi]` where a transition admitted by `selection`
/// has angular frequency `omega_target`. Roots are bracketed on a uniform
/// grid and refined by bisection; each returned field reproduces the target
/// to 1e-6 relative.
pub fn resonance_fields(
    species: &SpinSpecies,
    omega_target: f64,
    direction: &Vector3<f64>,
    b_range: (f64, f64),
    selection: Selection,
    opts: &SweepOptions,
) -> Result<Vec<Resonance>> {
    let (lo, hi) = b_range;
    ensure_finite("field range start", lo)?;
    ensure_finite("field range end", hi)?;
    ensure_finite("target frequency", omega_target)?;
    if omega_target <= 0.0 {
        return Err(Error::Input(format!("target frequency must be positive, got {omega_target}")));
    }
    if !(lo >= 0.0 && hi > lo) {
        return Err(Error::Input(format!("invalid field range [{lo}, {hi}]")));
    }
    let tracker = Tracker::new(species, direction)?;
    let n = opts.points.max(500);
    let fields: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
    let sweep = tracker.sweep(&fields)?;

    let mut hits = Vec::new();
    for t in sweep.transitions(selection) {
        let (l, u) = sweep.pair(&t)?;
        let curve: Vec<f64> = sweep.transition_curve(&t)?.iter().map(|w| w - omega_target).collect();
        for k in 0..n - 1 {
            let (f0, f1) = (curve[k], curve[k + 1]);
            let bracketed = f0 == 0.0 || (f0 < 0.0) != (f1 < 0.0) && f1 != 0.0;
            if !bracketed {
                continue;
            }
            let reference = &sweep.systems[k];
            let ref_idx = (sweep.assignment[k][l], sweep.assignment[k][u]);
            let (mut a, mut b) = (fields[k], fields[k + 1]);
            let mut fa = f0;
            let mut root = a;
            if f0 != 0.0 {
                for _ in 0..200 {
                    if b - a <= opts.field_tolerance {
                        break;
                    }
                    let m = 0.5 * (a + b);
                    let (es, il, iu) = tracker.energies_near(reference, ref_idx, m)?;
                    let fm = es.energies[iu] - es.energies[il] - omega_target;
                    if fm == 0.0 {
                        a = m;
                        b = m;
                        break;
                    }
                    if (fm < 0.0) == (fa < 0.0) {
                        a = m;
                        fa = fm;
                    } else {
                        b = m;
                    }
                }
                root = 0.5 * (a + b);
            }
            let (es, il, iu) = tracker.energies_near(reference, ref_idx, root)?;
            let w = es.energies[iu] - es.energies[il];
            if ((w - omega_target) / omega_target).abs() > 1e-6 {
                // Sign change from a label discontinuity rather than a root.
                continue;
            }
            let field = tracker.field(root);
            let (sx, sz) = transition_elements(&es, species, &field, iu, il)?;
            hits.push(Resonance {
                field: root,
                label: t,
                lower_level: il,
                upper_level: iu,
                sx,
                sz,
            });
        }
    }
    hits.sort_by(|a, b| a.field.total_cmp(&b.field));
    Ok(hits)
}

/// Find the resonance of a specific transition nearest to `near` (tesla).
pub fn find_transition(
    species: &SpinSpecies,
    omega_target: f64,
    direction: &Vector3<f64>,
    b_range: (f64, f64),
    label: &TransitionLabel,
    near: Option<f64>,
) -> Result<Resonance> {
    let sel = Selection::Any;
    let hits = resonance_fields(species, omega_target, direction, b_range, sel, &SweepOptions::default())?;
    let mut matching: Vec<Resonance> = hits.into_iter().filter(|r| r.label.same(label)).collect();
    if let Some(b0) = near {
        matching.sort_by(|a, b| (a.field - b0).abs().total_cmp(&(b.field - b0).abs()));
    }
    matching
        .into_iter()
        .next()
        .ok_or_else(|| Error::Input(format!("transition {label} has no resonance in [{}, {}] T", b_range.0, b_range.1)))
}

/// Eigensystem at a field together with the energy indices of a labelled
/// transition, obtained by tracking from the labelling field.
pub fn resolve_transition(
    species: &SpinSpecies,
    field: &FieldVector,
    label: &TransitionLabel,
) -> Result<(EigenSystem, usize, usize)> {
    let dir = field.direction();
    let sweep = track_levels(species, &dir, &[field.magnitude])?;
    let (l, u) = sweep.pair(label)?;
    let (il, iu) = (sweep.assignment[0][l], sweep.assignment[0][u]);
    Ok((sweep.systems.into_iter().next().expect("one system"), il, iu))
}
