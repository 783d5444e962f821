//! Incremental partial-SMILES validation.
//!
//! A [`ValidatorState`] consumes one token at a time and answers whether the
//! prefix read so far can still be completed into a valid molecule: grammar,
//! ring-bond bookkeeping, valence, and kekulizability of aromatic systems.
//! States have value semantics, so one state can be branched over every
//! candidate token.
//!
//! Prefix rules:
//! * a bond order is charged to both atoms as soon as it is committed: a bond
//!   symbol charges the anchor atom, a ring opening charges its atom;
//! * an atom is rejected when its committed bond orders plus explicit
//!   hydrogens exceed its largest allowed valence;
//! * aromatic bonds are bonds written without a symbol between two aromatic
//!   atoms that lie on a cycle; they count as order 1, and each aromatic atom
//!   whose valence leaves room for one more bond must receive exactly one
//!   double bond from a perfect matching over the aromatic bonds;
//! * the matching is checked whenever no ring label is open (after the ring
//!   system closes). Atoms that can still receive a bond (the current atom and
//!   unfinished branch roots) may stay unmatched if one more single bond would
//!   remove their need for a double bond.

mod elements;
mod lexeme;
pub mod matching;

use std::fmt;

use thiserror::Error;

pub use elements::Element;
pub use lexeme::{classify, AtomSpec, BondSymbol, Lexeme};

use crate::vocab::{Token, Vocabulary};

const NO_ATOM: u16 = u16::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Reason {
    Syntax,
    Valence,
    Ring,
    Kekulization,
    Bracket,
    Other,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::Syntax => "syntax",
            Reason::Valence => "valence",
            Reason::Ring => "ring",
            Reason::Kekulization => "kekulization",
            Reason::Bracket => "bracket",
            Reason::Other => "other",
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    ValidPrefix,
    ValidComplete,
    Invalid { reason: Reason, position: usize },
}

impl Verdict {
    pub fn is_invalid(&self) -> bool {
        matches!(self, Verdict::Invalid { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Verdict::ValidPrefix => "valid_prefix",
            Verdict::ValidComplete => "valid_complete",
            Verdict::Invalid { .. } => "invalid",
        }
    }
}

/// One-line diagnostic: `<kind> <reason> <position>` (`-` when not invalid).
impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Invalid { reason, position } => write!(f, "invalid {reason} {position}"),
            other => write!(f, "{} - -", other.kind()),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValidatorError {
    #[error("token {0:?} is not a SMILES symbol")]
    TokenNotInVocabulary(String),
    #[error("molecule is not complete: {0}")]
    NotComplete(Verdict),
    #[error(transparent)]
    Vocab(#[from] crate::vocab::VocabError),
}

/// What a vocabulary entry means to the validator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenRole {
    Smiles(Lexeme),
    Bos,
    Eos,
    Pad,
    /// Not a SMILES symbol; never a legal continuation.
    Unsupported,
}

pub fn token_roles(vocab: &Vocabulary) -> Vec<TokenRole> {
    vocab
        .tokens()
        .iter()
        .map(|t| {
            if t.id == vocab.bos_id() {
                TokenRole::Bos
            } else if t.id == vocab.eos_id() {
                TokenRole::Eos
            } else if t.id == vocab.pad_id() {
                TokenRole::Pad
            } else {
                classify(&t.symbol).map_or(TokenRole::Unsupported, TokenRole::Smiles)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Prev {
    Start,
    Atom,
    RingBond,
    /// `ringable` when the bond directly follows an atom or ring bond, so a
    /// ring label may come next.
    Bond { ringable: bool },
    Open,
    Close,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct AtomRecord {
    spec: AtomSpec,
    /// Committed bond orders, excluding hydrogens.
    bonds: u8,
    parent: u16,
    depth: u16,
    parent_aromatic: bool,
    parent_in_ring: bool,
    open_labels: u8,
}

impl AtomRecord {
    fn total(&self) -> u8 {
        self.bonds.saturating_add(self.spec.hydrogens)
    }

    fn needs_double_at(&self, total: u8) -> bool {
        self.spec.aromatic
            && self
                .spec
                .element
                .fitting_valence(self.spec.charge, total)
                .is_some_and(|v| total < v)
    }

    fn needs_double(&self) -> bool {
        self.needs_double_at(self.total())
    }

    fn valence_ok(&self) -> bool {
        self.spec
            .element
            .max_valence(self.spec.charge)
            .is_some_and(|max| self.total() <= max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ClosureEdge {
    a: u16,
    b: u16,
    aromatic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct OpenRing {
    label: u8,
    atom: u16,
    bond: Option<BondSymbol>,
}

/// Parse state of a SMILES prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatorState {
    atoms: Vec<AtomRecord>,
    closures: Vec<ClosureEdge>,
    rings: Vec<OpenRing>,
    branches: Vec<u16>,
    anchor: Option<u16>,
    pending: Option<BondSymbol>,
    prev: Prev,
    /// Union-find over aromatic ring bonds.
    components: Vec<u16>,
    tokens: usize,
    failure: Option<(Reason, usize)>,
}

impl Default for ValidatorState {
    fn default() -> Self {
        Self::new()
    }
}

/// Element, aromaticity, charge and explicit hydrogens of a parsed atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AtomView {
    pub element: Element,
    pub aromatic: bool,
    pub bracket: bool,
    pub charge: i8,
    pub explicit_hydrogens: u8,
    pub bond_order_sum: u8,
}

impl ValidatorState {
    pub fn new() -> Self {
        Self {
            atoms: Vec::new(),
            closures: Vec::new(),
            rings: Vec::new(),
            branches: Vec::new(),
            anchor: None,
            pending: None,
            prev: Prev::Start,
            components: Vec::new(),
            tokens: 0,
            failure: None,
        }
    }

    pub fn branch_depth(&self) -> usize {
        self.branches.len()
    }

    pub fn open_ring_labels(&self) -> Vec<u8> {
        self.rings.iter().map(|r| r.label).collect()
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn token_count(&self) -> usize {
        self.tokens
    }

    pub fn pending_bond(&self) -> Option<BondSymbol> {
        self.pending
    }

    pub fn last_atom(&self) -> Option<usize> {
        self.anchor.map(usize::from)
    }

    pub fn is_invalid(&self) -> bool {
        self.failure.is_some()
    }

    pub fn atoms(&self) -> impl Iterator<Item = AtomView> + '_ {
        self.atoms.iter().map(|a| AtomView {
            element: a.spec.element,
            aromatic: a.spec.aromatic,
            bracket: a.spec.bracket,
            charge: a.spec.charge,
            explicit_hydrogens: a.spec.hydrogens,
            bond_order_sum: a.bonds,
        })
    }

    /// Verdict of the prefix consumed so far.
    pub fn verdict(&self) -> Verdict {
        match self.failure {
            Some((reason, position)) => Verdict::Invalid { reason, position },
            None => Verdict::ValidPrefix,
        }
    }

    /// Value-semantics step: returns the extended state, leaving `self` as is.
    pub fn advance(&self, lexeme: &Lexeme) -> (Self, Verdict) {
        let mut next = self.clone();
        let verdict = next.push(lexeme);
        (next, verdict)
    }

    pub fn advance_token(&self, token: &Token) -> Result<(Self, Verdict), ValidatorError> {
        let lexeme = classify(&token.symbol)
            .ok_or_else(|| ValidatorError::TokenNotInVocabulary(token.symbol.clone()))?;
        Ok(self.advance(&lexeme))
    }

    /// In-place step. Invalid states are terminal: further input keeps the
    /// original failure.
    pub fn push(&mut self, lexeme: &Lexeme) -> Verdict {
        if self.failure.is_some() {
            return self.verdict();
        }
        let position = self.tokens;
        self.tokens += 1;
        if let Err(reason) = self.apply(lexeme) {
            self.failure = Some((reason, position));
        }
        self.verdict()
    }

    /// Whether the prefix is a complete, valid molecule.
    pub fn finalize(&self) -> Verdict {
        if let Some((reason, position)) = self.failure {
            return Verdict::Invalid { reason, position };
        }
        match self.complete_check() {
            Ok(()) => Verdict::ValidComplete,
            Err(reason) => Verdict::Invalid { reason, position: self.tokens },
        }
    }

    /// Hydrogen count per atom of a complete molecule: explicit for bracket
    /// atoms, otherwise filled up to the smallest allowed valence.
    pub fn implicit_hydrogens(&self) -> Result<Vec<u8>, ValidatorError> {
        let verdict = self.finalize();
        if verdict != Verdict::ValidComplete {
            return Err(ValidatorError::NotComplete(verdict));
        }
        Ok(self
            .atoms
            .iter()
            .map(|a| {
                if a.spec.bracket {
                    return a.spec.hydrogens;
                }
                let total = a.bonds + u8::from(a.needs_double());
                a.spec
                    .element
                    .fitting_valence(0, total)
                    .map_or(0, |v| v - total)
            })
            .collect())
    }

    fn complete_check(&self) -> Result<(), Reason> {
        if self.atoms.is_empty()
            || self.pending.is_some()
            || !matches!(self.prev, Prev::Atom | Prev::RingBond | Prev::Close)
            || !self.branches.is_empty()
        {
            return Err(Reason::Syntax);
        }
        if !self.rings.is_empty() {
            return Err(Reason::Ring);
        }
        let roots: Vec<u16> = self.aromatic_roots();
        for root in roots {
            if !self.component_matchable(root, false) {
                return Err(Reason::Kekulization);
            }
        }
        Ok(())
    }

    fn apply(&mut self, lexeme: &Lexeme) -> Result<(), Reason> {
        match *lexeme {
            Lexeme::MalformedBracket => Err(Reason::Bracket),
            Lexeme::Atom(spec) => self.add_atom(spec),
            Lexeme::Bond(bond) => {
                let ringable = match self.prev {
                    Prev::Atom | Prev::RingBond => true,
                    Prev::Open | Prev::Close => false,
                    _ => return Err(Reason::Syntax),
                };
                let anchor = self.anchor.ok_or(Reason::Syntax)?;
                self.charge(anchor, bond.order());
                self.pending = Some(bond);
                self.prev = Prev::Bond { ringable };
                self.check_valence(&[anchor])?;
                self.check_aromatic(&[anchor])
            }
            Lexeme::BranchOpen => {
                if !matches!(self.prev, Prev::Atom | Prev::RingBond | Prev::Close) {
                    return Err(Reason::Syntax);
                }
                let anchor = self.anchor.ok_or(Reason::Syntax)?;
                self.branches.push(anchor);
                self.prev = Prev::Open;
                Ok(())
            }
            Lexeme::BranchClose => {
                if !matches!(self.prev, Prev::Atom | Prev::RingBond | Prev::Close) {
                    return Err(Reason::Syntax);
                }
                let root = self.branches.pop().ok_or(Reason::Syntax)?;
                let old = self.anchor.ok_or(Reason::Syntax)?;
                self.anchor = Some(root);
                self.prev = Prev::Close;
                self.check_aromatic(&[old, root])
            }
            Lexeme::Ring(label) => {
                if !matches!(self.prev, Prev::Atom | Prev::RingBond | Prev::Bond { ringable: true }) {
                    return Err(Reason::Syntax);
                }
                let anchor = self.anchor.ok_or(Reason::Syntax)?;
                match self.rings.iter().position(|r| r.label == label) {
                    Some(k) => self.close_ring(k, anchor),
                    None => {
                        if self.pending.is_none() {
                            self.charge(anchor, 1);
                        }
                        self.rings.push(OpenRing { label, atom: anchor, bond: self.pending.take() });
                        self.atoms[anchor as usize].open_labels += 1;
                        self.prev = Prev::RingBond;
                        self.check_valence(&[anchor])
                    }
                }
            }
        }
    }

    fn add_atom(&mut self, spec: AtomSpec) -> Result<(), Reason> {
        if self.atoms.len() >= NO_ATOM as usize {
            return Err(Reason::Other);
        }
        let index = self.atoms.len() as u16;
        let mut record = AtomRecord {
            spec,
            bonds: 0,
            parent: NO_ATOM,
            depth: 0,
            parent_aromatic: false,
            parent_in_ring: false,
            open_labels: 0,
        };
        let previous = self.anchor;
        if let Some(p) = previous {
            let order = match self.pending.take() {
                Some(bond) => bond.order(),
                None => {
                    self.charge(p, 1);
                    record.parent_aromatic = spec.aromatic && self.atoms[p as usize].spec.aromatic;
                    1
                }
            };
            record.bonds = order;
            record.parent = p;
            record.depth = self.atoms[p as usize].depth + 1;
        }
        self.atoms.push(record);
        self.components.push(index);
        self.anchor = Some(index);
        self.prev = Prev::Atom;
        match previous {
            Some(p) => {
                self.check_valence(&[p, index])?;
                self.check_aromatic(&[p, index])
            }
            None => self.check_valence(&[index]),
        }
    }

    fn close_ring(&mut self, k: usize, closer: u16) -> Result<(), Reason> {
        let OpenRing { atom: opener, bond: opening, .. } = self.rings.remove(k);
        self.atoms[opener as usize].open_labels -= 1;
        let closing = self.pending.take();
        self.prev = Prev::RingBond;
        if opener == closer || self.bonded(opener, closer) {
            return Err(Reason::Ring);
        }
        let order = match (opening, closing) {
            (Some(a), Some(b)) if a.order() != b.order() => return Err(Reason::Ring),
            (a, b) => a.or(b).map_or(1, BondSymbol::order),
        };
        if opening.is_none() {
            self.charge(opener, order - 1);
        }
        if closing.is_none() {
            self.charge(closer, order);
        }
        let aromatic = opening.is_none()
            && closing.is_none()
            && self.atoms[opener as usize].spec.aromatic
            && self.atoms[closer as usize].spec.aromatic;
        self.closures.push(ClosureEdge { a: opener, b: closer, aromatic });
        self.mark_cycle(opener, closer);
        if aromatic {
            self.union(opener, closer);
        }
        self.check_valence(&[opener, closer])?;
        if self.rings.is_empty() {
            // every ring system just became closed
            for root in self.aromatic_roots() {
                if !self.component_ok(root) {
                    return Err(Reason::Kekulization);
                }
            }
        }
        Ok(())
    }

    fn charge(&mut self, atom: u16, order: u8) {
        let a = &mut self.atoms[atom as usize];
        a.bonds = a.bonds.saturating_add(order);
    }

    fn bonded(&self, a: u16, b: u16) -> bool {
        self.atoms[a as usize].parent == b
            || self.atoms[b as usize].parent == a
            || self
                .closures
                .iter()
                .any(|e| (e.a == a && e.b == b) || (e.a == b && e.b == a))
    }

    /// Marks the tree path between the two ring-closure atoms as cyclic.
    fn mark_cycle(&mut self, mut a: u16, mut b: u16) {
        while a != b {
            let (da, db) = (self.atoms[a as usize].depth, self.atoms[b as usize].depth);
            let lower = if da >= db { &mut a } else { &mut b };
            let child = *lower;
            let record = &mut self.atoms[child as usize];
            let parent = record.parent;
            if !record.parent_in_ring {
                record.parent_in_ring = true;
                if record.parent_aromatic {
                    self.union(child, parent);
                }
            }
            *lower = parent;
        }
    }

    fn find(&self, mut a: u16) -> u16 {
        while self.components[a as usize] != a {
            a = self.components[a as usize];
        }
        a
    }

    fn union(&mut self, a: u16, b: u16) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.components[hi as usize] = lo;
        }
    }

    fn check_valence(&self, atoms: &[u16]) -> Result<(), Reason> {
        if atoms.iter().all(|&a| self.atoms[a as usize].valence_ok()) {
            Ok(())
        } else {
            Err(Reason::Valence)
        }
    }

    fn is_open(&self, atom: u16) -> bool {
        self.anchor == Some(atom) || self.branches.contains(&atom)
    }

    /// Re-checks the aromatic systems of `touched` atoms once rings are closed.
    fn check_aromatic(&self, touched: &[u16]) -> Result<(), Reason> {
        if !self.rings.is_empty() {
            return Ok(());
        }
        let mut seen: [u16; 4] = [NO_ATOM; 4];
        for (k, &t) in touched.iter().enumerate() {
            if !self.atoms[t as usize].spec.aromatic {
                continue;
            }
            let root = self.find(t);
            if seen[..k].contains(&root) {
                continue;
            }
            seen[k] = root;
            if !self.component_ok(root) {
                return Err(Reason::Kekulization);
            }
        }
        Ok(())
    }

    fn aromatic_roots(&self) -> Vec<u16> {
        let mut roots: Vec<u16> = (0..self.atoms.len() as u16)
            .filter(|&a| self.atoms[a as usize].spec.aromatic)
            .map(|a| self.find(a))
            .collect();
        roots.sort_unstable();
        roots.dedup();
        roots
    }

    /// Prefix check of one aromatic system.
    fn component_ok(&self, root: u16) -> bool {
        let size = (0..self.atoms.len() as u16)
            .filter(|&a| self.atoms[a as usize].spec.aromatic && self.find(a) == root)
            .take(2)
            .count();
        if size == 1 {
            // an isolated aromatic atom can only still join a ring while open
            let atom = &self.atoms[root as usize];
            return self.is_open(root) || !atom.needs_double();
        }
        self.component_matchable(root, true)
    }

    fn component_matchable(&self, root: u16, allow_open: bool) -> bool {
        let members: Vec<u16> = (0..self.atoms.len() as u16)
            .filter(|&a| self.atoms[a as usize].spec.aromatic && self.find(a) == root)
            .collect();
        let mut slot = vec![usize::MAX; self.atoms.len()];
        let mut required = Vec::new();
        for &a in &members {
            let atom = &self.atoms[a as usize];
            if !atom.needs_double() {
                continue;
            }
            let total = atom.total();
            let flexible = allow_open
                && self.is_open(a)
                && !atom.needs_double_at(total + 1)
                && atom
                    .spec
                    .element
                    .max_valence(atom.spec.charge)
                    .is_some_and(|max| total < max);
            slot[a as usize] = required.len();
            required.push(!flexible);
        }
        let mut edges = Vec::new();
        for &a in &members {
            let atom = &self.atoms[a as usize];
            if atom.parent_aromatic && atom.parent_in_ring {
                let (x, y) = (slot[a as usize], slot[atom.parent as usize]);
                if x != usize::MAX && y != usize::MAX {
                    edges.push((x, y));
                }
            }
        }
        for e in self.closures.iter().filter(|e| e.aromatic) {
            let (x, y) = (slot[e.a as usize], slot[e.b as usize]);
            if x != usize::MAX && y != usize::MAX {
                edges.push((x, y));
            }
        }
        matching::covers_required(&required, &edges)
    }
}

/// Runs the validator over a whole SMILES string, stopping at the first
/// invalid token. Returns the final state and the prefix verdict.
pub fn check_prefix(smiles: &str) -> Result<(ValidatorState, Verdict), ValidatorError> {
    let mut state = ValidatorState::new();
    for unit in crate::vocab::split_units(smiles)? {
        let lexeme = classify(unit.1)
            .ok_or_else(|| ValidatorError::TokenNotInVocabulary(unit.1.to_string()))?;
        if state.push(&lexeme).is_invalid() {
            break;
        }
    }
    let verdict = state.verdict();
    Ok((state, verdict))
}

/// Full-molecule verdict of a SMILES string.
pub fn check_complete(smiles: &str) -> Result<Verdict, ValidatorError> {
    let (state, _) = check_prefix(smiles)?;
    Ok(state.finalize())
}
