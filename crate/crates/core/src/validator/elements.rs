//! Element table with the allowed-valence model.
//!
//! Neutral valences: B 3; C 4; N 3,5; O 2; P 3,5; S 2,4,6; halogens 1.
//! A formal charge moves the allowed valences. Elements to the right of
//! carbon use `v + charge`, boron and the metals `v - charge`, and C, Si and
//! H `v - |charge|`. Negative results are dropped.

use std::fmt;

#[derive(Debug, Clone, Copy)]
enum ChargeRule {
    /// N, O, P, S, Se, halogens
    Add,
    /// B and metals
    Subtract,
    /// C, Si, H
    Magnitude,
}

#[derive(Debug)]
pub(crate) struct ElementInfo {
    pub symbol: &'static str,
    pub valences: &'static [u8],
    pub aromatic: bool,
    rule: ChargeRule,
}

pub(crate) static ELEMENTS: &[ElementInfo] = &[
    ElementInfo { symbol: "H", valences: &[1], aromatic: false, rule: ChargeRule::Magnitude },
    ElementInfo { symbol: "B", valences: &[3], aromatic: true, rule: ChargeRule::Subtract },
    ElementInfo { symbol: "C", valences: &[4], aromatic: true, rule: ChargeRule::Magnitude },
    ElementInfo { symbol: "N", valences: &[3, 5], aromatic: true, rule: ChargeRule::Add },
    ElementInfo { symbol: "O", valences: &[2], aromatic: true, rule: ChargeRule::Add },
    ElementInfo { symbol: "F", valences: &[1], aromatic: false, rule: ChargeRule::Add },
    ElementInfo { symbol: "Si", valences: &[4], aromatic: false, rule: ChargeRule::Magnitude },
    ElementInfo { symbol: "P", valences: &[3, 5], aromatic: true, rule: ChargeRule::Add },
    ElementInfo { symbol: "S", valences: &[2, 4, 6], aromatic: true, rule: ChargeRule::Add },
    ElementInfo { symbol: "Cl", valences: &[1], aromatic: false, rule: ChargeRule::Add },
    ElementInfo { symbol: "Se", valences: &[2, 4, 6], aromatic: true, rule: ChargeRule::Add },
    ElementInfo { symbol: "Br", valences: &[1], aromatic: false, rule: ChargeRule::Add },
    ElementInfo { symbol: "I", valences: &[1], aromatic: false, rule: ChargeRule::Add },
    ElementInfo { symbol: "Li", valences: &[1], aromatic: false, rule: ChargeRule::Subtract },
    ElementInfo { symbol: "Na", valences: &[1], aromatic: false, rule: ChargeRule::Subtract },
    ElementInfo { symbol: "K", valences: &[1], aromatic: false, rule: ChargeRule::Subtract },
    ElementInfo { symbol: "Mg", valences: &[2], aromatic: false, rule: ChargeRule::Subtract },
    ElementInfo { symbol: "Ca", valences: &[2], aromatic: false, rule: ChargeRule::Subtract },
    ElementInfo { symbol: "Zn", valences: &[2], aromatic: false, rule: ChargeRule::Subtract },
    ElementInfo { symbol: "Fe", valences: &[2, 3], aromatic: false, rule: ChargeRule::Subtract },
];

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Element(u8);

impl Element {
    pub fn from_symbol(symbol: &str) -> Option<Self> {
        ELEMENTS.iter().position(|e| e.symbol == symbol).map(|i| Element(i as u8))
    }

    pub fn symbol(self) -> &'static str {
        ELEMENTS[self.index()].symbol
    }

    pub(crate) fn index(self) -> usize {
        self.0 as usize
    }

    /// Allowed total valences (bond orders plus hydrogens) at a given charge,
    /// ascending.
    pub fn allowed_valences(self, charge: i8) -> impl Iterator<Item = u8> + Clone {
        let info = &ELEMENTS[self.index()];
        let c = charge as i16;
        info.valences.iter().filter_map(move |&v| {
            let shifted = match info.rule {
                ChargeRule::Add => v as i16 + c,
                ChargeRule::Subtract => v as i16 - c,
                ChargeRule::Magnitude => v as i16 - c.abs(),
            };
            u8::try_from(shifted).ok()
        })
    }

    pub fn max_valence(self, charge: i8) -> Option<u8> {
        self.allowed_valences(charge).max()
    }

    /// Smallest allowed valence that can hold `total`.
    pub fn fitting_valence(self, charge: i8, total: u8) -> Option<u8> {
        self.allowed_valences(charge).filter(|&v| v >= total).min()
    }
}

impl fmt::Debug for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}
