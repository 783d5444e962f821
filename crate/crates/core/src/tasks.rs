//! Scoring oracles that need nothing beyond the validator.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::validator::{check_prefix, Verdict};

pub const DEFAULT_WARMUP_THRESHOLD: f64 = 0.01;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaskError {
    #[error("not a valid molecule: {0}")]
    InvalidMolecule(String),
    #[error("cannot parse task {0:?}")]
    BadTask(String),
    #[error("cannot parse formula {0:?}")]
    BadFormula(String),
}

/// Element counts, hydrogens included.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MolecularFormula(BTreeMap<String, u32>);

impl MolecularFormula {
    pub fn count(&self, element: &str) -> u32 {
        self.0.get(element).copied().unwrap_or(0)
    }

    pub fn elements(&self) -> impl Iterator<Item = (&str, u32)> {
        self.0.iter().map(|(k, &v)| (k.as_str(), v))
    }

    fn add(&mut self, element: &str, n: u32) {
        if n > 0 {
            *self.0.entry(element.to_string()).or_default() += n;
        }
    }
}

/// `C11H24`-style notation: an element symbol followed by an optional count.
impl FromStr for MolecularFormula {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TaskError::BadFormula(s.to_string());
        let mut f = MolecularFormula::default();
        let b = s.as_bytes();
        let mut i = 0;
        if b.is_empty() {
            return Err(bad());
        }
        while i < b.len() {
            if !b[i].is_ascii_uppercase() {
                return Err(bad());
            }
            let mut j = i + 1;
            while j < b.len() && b[j].is_ascii_lowercase() {
                j += 1;
            }
            let element = &s[i..j];
            let mut k = j;
            while k < b.len() && b[k].is_ascii_digit() {
                k += 1;
            }
            let n = if k == j { 1 } else { s[j..k].parse().map_err(|_| bad())? };
            if n == 0 {
                return Err(bad());
            }
            f.add(element, n);
            i = k;
        }
        Ok(f)
    }
}

/// Hill order: C, then H, then the rest alphabetically.
impl fmt::Display for MolecularFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut order: Vec<&str> = Vec::new();
        if self.0.contains_key("C") {
            order.extend(["C", "H"].iter().filter(|e| self.0.contains_key(**e)));
        }
        let carbon = !order.is_empty();
        order.extend(self.0.keys().map(String::as_str).filter(|e| !(carbon && (*e == "C" || *e == "H"))));
        for e in order {
            match self.0[e] {
                1 => write!(f, "{e}")?,
                n => write!(f, "{e}{n}")?,
            }
        }
        Ok(())
    }
}

pub fn formula_of(smiles: &str) -> Result<MolecularFormula, TaskError> {
    let invalid = || TaskError::InvalidMolecule(smiles.to_string());
    let (state, _) = check_prefix(smiles).map_err(|_| invalid())?;
    if state.finalize() != Verdict::ValidComplete {
        return Err(invalid());
    }
    let hydrogens = state.implicit_hydrogens().map_err(|_| invalid())?;
    let mut f = MolecularFormula::default();
    for (atom, h) in state.atoms().zip(hydrogens) {
        f.add(atom.element.symbol(), 1);
        f.add("H", h as u32);
    }
    Ok(f)
}

/// Geometric mean over the target's elements, plus one channel for all other
/// elements, of `exp(-delta^2 / 2)`.
pub fn isomer_score_of(formula: &MolecularFormula, target: &MolecularFormula) -> f64 {
    let mut log_sum = 0.0;
    let mut channels = 0;
    for (element, want) in target.elements() {
        let d = formula.count(element) as f64 - want as f64;
        log_sum -= d * d / 2.0;
        channels += 1;
    }
    let other: u32 = formula
        .elements()
        .filter(|(e, _)| target.count(e) == 0)
        .map(|(_, n)| n)
        .sum();
    log_sum -= (other as f64).powi(2) / 2.0;
    channels += 1;
    (log_sum / channels as f64).exp()
}

pub fn isomer_score(smiles: &str, target: &MolecularFormula) -> Result<f64, TaskError> {
    Ok(isomer_score_of(&formula_of(smiles)?, target))
}

/// A scoring task selected by name, e.g. `isomer:C11H24`.
///
/// `rings:N` and `atoms:N` are small toy objectives for smoke tests (ring
/// closures and heavy-atom count, scored `exp(-delta^2 / 2)` and
/// `exp(-delta^2 / 8)`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Task {
    Isomer(MolecularFormula),
    Rings(u32),
    Atoms(u32),
}

impl FromStr for Task {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TaskError::BadTask(s.to_string());
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "isomer" => Ok(Task::Isomer(arg.parse()?)),
            "rings" => arg.parse().map(Task::Rings).map_err(|_| bad()),
            "atoms" => arg.parse().map(Task::Atoms).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Isomer(target) => write!(f, "isomer:{target}"),
            Task::Rings(n) => write!(f, "rings:{n}"),
            Task::Atoms(n) => write!(f, "atoms:{n}"),
        }
    }
}

impl Task {
    /// Score in `[0, 1]`; invalid molecules score 0.
    pub fn score(&self, smiles: &str) -> f64 {
        let Ok((state, _)) = check_prefix(smiles) else {
            return 0.0;
        };
        if state.finalize() != Verdict::ValidComplete {
            return 0.0;
        }
        match self {
            Task::Isomer(target) => isomer_score(smiles, target).unwrap_or(0.0),
            Task::Rings(n) => {
                let d = ring_closures(smiles) as f64 - *n as f64;
                (-d * d / 2.0).exp()
            }
            Task::Atoms(n) => {
                let d = state.atom_count() as f64 - *n as f64;
                (-d * d / 8.0).exp()
            }
        }
    }
}

/// Each ring label occurs twice per closure.
fn ring_closures(smiles: &str) -> usize {
    let units = crate::vocab::split_units(smiles).unwrap_or_default();
    units
        .iter()
        .filter(|(_, u)| matches!(crate::validator::classify(u), Some(crate::validator::Lexeme::Ring(_))))
        .count()
        / 2
}
