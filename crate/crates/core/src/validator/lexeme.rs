//! Classification of vocabulary symbols into SMILES grammar units.

use super::elements::{Element, ELEMENTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BondSymbol {
    Single,
    Double,
    Triple,
    Up,
    Down,
}

impl BondSymbol {
    pub fn order(self) -> u8 {
        match self {
            BondSymbol::Double => 2,
            BondSymbol::Triple => 3,
            BondSymbol::Single | BondSymbol::Up | BondSymbol::Down => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AtomSpec {
    pub element: Element,
    pub aromatic: bool,
    pub bracket: bool,
    pub hydrogens: u8,
    pub charge: i8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lexeme {
    Atom(AtomSpec),
    Bond(BondSymbol),
    BranchOpen,
    BranchClose,
    Ring(u8),
    /// A bracket token whose contents do not parse.
    MalformedBracket,
}

/// Classifies a single token symbol. `None` means the symbol has no SMILES
/// meaning at all (and so cannot be fed to the validator).
pub fn classify(symbol: &str) -> Option<Lexeme> {
    let lex = match symbol {
        "-" => Lexeme::Bond(BondSymbol::Single),
        "=" => Lexeme::Bond(BondSymbol::Double),
        "#" => Lexeme::Bond(BondSymbol::Triple),
        "/" => Lexeme::Bond(BondSymbol::Up),
        "\\" => Lexeme::Bond(BondSymbol::Down),
        "(" => Lexeme::BranchOpen,
        ")" => Lexeme::BranchClose,
        _ => {
            let bytes = symbol.as_bytes();
            if bytes.len() == 1 && bytes[0].is_ascii_digit() {
                Lexeme::Ring(bytes[0] - b'0')
            } else if bytes.len() == 3 && bytes[0] == b'%' && bytes[1..].iter().all(u8::is_ascii_digit) {
                Lexeme::Ring((bytes[1] - b'0') * 10 + (bytes[2] - b'0'))
            } else if bytes.first() == Some(&b'[') {
                if bytes.last() != Some(&b']') || bytes.len() < 3 {
                    return Some(Lexeme::MalformedBracket);
                }
                parse_bracket(&symbol[1..symbol.len() - 1]).map_or(Lexeme::MalformedBracket, Lexeme::Atom)
            } else {
                return organic(symbol).map(Lexeme::Atom);
            }
        }
    };
    Some(lex)
}

fn organic(symbol: &str) -> Option<AtomSpec> {
    let (name, aromatic) = match symbol {
        "B" | "C" | "N" | "O" | "P" | "S" | "F" | "Cl" | "Br" | "I" => (symbol, false),
        "b" => ("B", true),
        "c" => ("C", true),
        "n" => ("N", true),
        "o" => ("O", true),
        "p" => ("P", true),
        "s" => ("S", true),
        _ => return None,
    };
    Some(AtomSpec {
        element: Element::from_symbol(name)?,
        aromatic,
        bracket: false,
        hydrogens: 0,
        charge: 0,
    })
}

// isotope? symbol chiral? hcount? charge? class?
fn parse_bracket(body: &str) -> Option<AtomSpec> {
    let b = body.as_bytes();
    let mut i = 0;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let rest = &body[i..];
    let (element, aromatic, used) = bracket_element(rest)?;
    i += used;
    // chirality is accepted syntactically and otherwise ignored
    if b.get(i) == Some(&b'@') {
        i += 1;
        if b.get(i) == Some(&b'@') {
            i += 1;
        }
    }
    let mut hydrogens = 0u8;
    if b.get(i) == Some(&b'H') {
        i += 1;
        hydrogens = 1;
        if let Some(d) = b.get(i).filter(|d| d.is_ascii_digit()) {
            hydrogens = d - b'0';
            i += 1;
        }
    }
    let mut charge = 0i8;
    if let Some(&sign) = b.get(i).filter(|&&c| c == b'+' || c == b'-') {
        let unit: i8 = if sign == b'+' { 1 } else { -1 };
        i += 1;
        if let Some(d) = b.get(i).filter(|d| d.is_ascii_digit()) {
            charge = unit * (d - b'0') as i8;
            i += 1;
        } else {
            charge = unit;
            while b.get(i) == Some(&sign) {
                charge += unit;
                i += 1;
            }
        }
    }
    if b.get(i) == Some(&b':') {
        i += 1;
        let start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == start {
            return None;
        }
    }
    if i != b.len() {
        return None;
    }
    Some(AtomSpec { element, aromatic, bracket: true, hydrogens, charge })
}

/// Longest element symbol at the start of `s`; aromatic forms are lower-case.
fn bracket_element(s: &str) -> Option<(Element, bool, usize)> {
    let two = s.get(..2);
    let one = s.get(..1)?;
    for cand in [two, Some(one)].into_iter().flatten() {
        if let Some(el) = Element::from_symbol(cand) {
            return Some((el, false, cand.len()));
        }
        if cand.chars().all(|c| c.is_ascii_lowercase()) {
            let mut upper = cand.to_string();
            upper[..1].make_ascii_uppercase();
            if let Some(el) = Element::from_symbol(&upper).filter(|e| ELEMENTS[e.index()].aromatic) {
                return Some((el, true, cand.len()));
            }
        }
    }
    None
}
