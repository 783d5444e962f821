//! Brute-force reference validator. Every call re-parses the whole string
//! from scratch: build the molecular graph, find ring bonds by edge removal,
//! and search kekulé assignments by backtracking.

use std::collections::{HashMap, VecDeque};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Why {
    Syntax,
    Bracket,
    Ring,
    Valence,
    Kekule,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Prefix,
    Complete,
    Bad(Why, usize),
}

#[derive(Clone, Debug)]
pub struct Atom {
    sym: String,
    arom: bool,
    h: i32,
    charge: i32,
}

#[derive(Clone, Debug)]
pub enum Unit {
    Atom(Atom),
    Bond(i32),
    Open,
    Close,
    Ring(u32),
    BadBracket,
}

const ADD: &[&str] = &["N", "O", "P", "S", "Se", "F", "Cl", "Br", "I"];
const SUB: &[&str] = &["B", "Li", "Na", "K", "Mg", "Ca", "Zn", "Fe"];
const ABS: &[&str] = &["C", "Si", "H"];
const AROMATIC: &[&str] = &["b", "c", "n", "o", "p", "s", "se"];

fn base_valences(sym: &str) -> &'static [i32] {
    match sym {
        "H" | "F" | "Cl" | "Br" | "I" | "Li" | "Na" | "K" => &[1],
        "B" => &[3],
        "C" | "Si" => &[4],
        "N" | "P" => &[3, 5],
        "O" | "Mg" | "Ca" | "Zn" => &[2],
        "S" | "Se" => &[2, 4, 6],
        "Fe" => &[2, 3],
        _ => &[],
    }
}

fn valences(sym: &str, charge: i32) -> Vec<i32> {
    let mut out: Vec<i32> = base_valences(sym)
        .iter()
        .map(|&v| {
            if ADD.contains(&sym) {
                v + charge
            } else if SUB.contains(&sym) {
                v - charge
            } else {
                assert!(ABS.contains(&sym));
                v - charge.abs()
            }
        })
        .filter(|&v| v >= 0)
        .collect();
    out.sort();
    out
}

fn is_element(sym: &str) -> bool {
    !base_valences(sym).is_empty()
}

pub fn split(s: &str) -> Vec<String> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let mut j = i + 1;
        if chars[i] == '[' {
            while j < chars.len() && chars[j - 1] != ']' {
                j += 1;
            }
        } else if chars[i] == '%' && i + 2 < chars.len() {
            j = i + 3;
        } else if (chars[i] == 'C' && chars.get(i + 1) == Some(&'l'))
            || (chars[i] == 'B' && chars.get(i + 1) == Some(&'r'))
        {
            j = i + 2;
        }
        out.push(chars[i..j].iter().collect());
        i = j;
    }
    out
}

fn bracket(body: &str) -> Option<Atom> {
    let c: Vec<char> = body.chars().collect();
    let mut i = 0;
    while i < c.len() && c[i].is_ascii_digit() {
        i += 1;
    }
    let mut found = None;
    for len in [2, 1] {
        if i + len > c.len() {
            continue;
        }
        let cand: String = c[i..i + len].iter().collect();
        if is_element(&cand) {
            found = Some((cand, false, len));
            break;
        }
        if AROMATIC.contains(&cand.as_str()) {
            let mut up = cand.clone();
            up.replace_range(..1, &cand[..1].to_uppercase());
            found = Some((up, true, len));
            break;
        }
    }
    let (sym, arom, len) = found?;
    i += len;
    for _ in 0..2 {
        if i < c.len() && c[i] == '@' {
            i += 1;
        }
    }
    let mut h = 0;
    if i < c.len() && c[i] == 'H' {
        h = 1;
        i += 1;
        if i < c.len() && c[i].is_ascii_digit() {
            h = c[i] as i32 - '0' as i32;
            i += 1;
        }
    }
    let mut charge = 0;
    if i < c.len() && (c[i] == '+' || c[i] == '-') {
        let sign = c[i];
        let unit = if sign == '+' { 1 } else { -1 };
        i += 1;
        if i < c.len() && c[i].is_ascii_digit() {
            charge = unit * (c[i] as i32 - '0' as i32);
            i += 1;
        } else {
            charge = unit;
            while i < c.len() && c[i] == sign {
                charge += unit;
                i += 1;
            }
        }
    }
    if i < c.len() && c[i] == ':' {
        let start = i + 1;
        i += 1;
        while i < c.len() && c[i].is_ascii_digit() {
            i += 1;
        }
        if i == start {
            return None;
        }
    }
    (i == c.len()).then_some(Atom { sym, arom, h, charge })
}

fn unit(u: &str) -> Option<Unit> {
    Some(match u {
        "-" | "/" | "\\" => Unit::Bond(1),
        "=" => Unit::Bond(2),
        "#" => Unit::Bond(3),
        "(" => Unit::Open,
        ")" => Unit::Close,
        "B" | "C" | "N" | "O" | "P" | "S" | "F" | "Cl" | "Br" | "I" => {
            Unit::Atom(Atom { sym: u.into(), arom: false, h: 0, charge: 0 })
        }
        "b" | "c" | "n" | "o" | "p" | "s" => {
            Unit::Atom(Atom { sym: u.to_uppercase(), arom: true, h: 0, charge: 0 })
        }
        _ if u.len() == 1 && u.as_bytes()[0].is_ascii_digit() => Unit::Ring(u.parse().ok()?),
        _ if u.len() == 3 && u.starts_with('%') => Unit::Ring(u[1..].parse().ok()?),
        _ if u.starts_with('[') && u.ends_with(']') && u.len() >= 2 => {
            bracket(&u[1..u.len() - 1]).map_or(Unit::BadBracket, Unit::Atom)
        }
        _ if u.starts_with('[') => Unit::BadBracket,
        _ => return None,
    })
}

pub fn parse_units(tokens: &[&str]) -> Option<Vec<Unit>> {
    tokens.iter().map(|t| unit(t)).collect()
}

#[derive(Clone, Copy, PartialEq)]
enum Last {
    Nothing,
    Atom,
    Ring,
    Bond(bool),
    Open,
    Close,
}

struct Graph {
    atoms: Vec<Atom>,
    /// (a, b, order, written with a bond symbol)
    bonds: Vec<(usize, usize, i32, bool)>,
    sums: Vec<i32>,
    open_rings: usize,
    open_atoms: Vec<usize>,
    last: Last,
    pending: bool,
    depth: usize,
}

fn build(units: &[Unit]) -> Result<Graph, Why> {
    let mut atoms: Vec<Atom> = Vec::new();
    let mut bonds = Vec::new();
    let mut stack = Vec::new();
    let mut anchor: Option<usize> = None;
    let mut pending: Option<i32> = None;
    let mut rings: HashMap<u32, (usize, Option<i32>)> = HashMap::new();
    let mut last = Last::Nothing;
    for u in units {
        match u {
            Unit::BadBracket => return Err(Why::Bracket),
            Unit::Atom(a) => {
                let idx = atoms.len();
                atoms.push(a.clone());
                if let Some(p) = anchor {
                    bonds.push((p, idx, pending.unwrap_or(1), pending.is_some()));
                }
                pending = None;
                anchor = Some(idx);
                last = Last::Atom;
            }
            Unit::Bond(o) => {
                let ringable = match last {
                    Last::Atom | Last::Ring => true,
                    Last::Open | Last::Close => false,
                    _ => return Err(Why::Syntax),
                };
                pending = Some(*o);
                last = Last::Bond(ringable);
            }
            Unit::Open => {
                if !matches!(last, Last::Atom | Last::Ring | Last::Close) {
                    return Err(Why::Syntax);
                }
                stack.push(anchor.unwrap());
                last = Last::Open;
            }
            Unit::Close => {
                if !matches!(last, Last::Atom | Last::Ring | Last::Close) || stack.is_empty() {
                    return Err(Why::Syntax);
                }
                anchor = stack.pop();
                last = Last::Close;
            }
            Unit::Ring(label) => {
                if !matches!(last, Last::Atom | Last::Ring | Last::Bond(true)) {
                    return Err(Why::Syntax);
                }
                let a = anchor.unwrap();
                let here = pending.take();
                last = Last::Ring;
                match rings.remove(label) {
                    None => {
                        rings.insert(*label, (a, here));
                    }
                    Some((o, there)) => {
                        if o == a
                            || bonds.iter().any(|&(x, y, _, _)| (x == o && y == a) || (x == a && y == o))
                        {
                            return Err(Why::Ring);
                        }
                        if let (Some(x), Some(y)) = (there, here) {
                            if x != y {
                                return Err(Why::Ring);
                            }
                        }
                        let order = there.or(here).unwrap_or(1);
                        bonds.push((o, a, order, there.is_some() || here.is_some()));
                    }
                }
            }
        }
    }
    let mut sums: Vec<i32> = atoms.iter().map(|a| a.h).collect();
    for &(a, b, o, _) in &bonds {
        sums[a] += o;
        sums[b] += o;
    }
    for &(a, o) in rings.values() {
        sums[a] += o.unwrap_or(1);
    }
    if let (Some(o), Some(a)) = (pending, anchor) {
        sums[a] += o;
    }
    for (a, s) in atoms.iter().zip(&sums) {
        if valences(&a.sym, a.charge).last().is_none_or(|&m| *s > m) {
            return Err(Why::Valence);
        }
    }
    let mut open_atoms = stack.clone();
    open_atoms.extend(anchor);
    Ok(Graph {
        atoms,
        bonds,
        sums,
        open_rings: rings.len(),
        open_atoms,
        last,
        pending: pending.is_some(),
        depth: stack.len(),
    })
}

fn on_cycle(g: &Graph, skip: usize) -> bool {
    let (a, b, _, _) = g.bonds[skip];
    let mut seen = vec![false; g.atoms.len()];
    let mut q = VecDeque::from([a]);
    seen[a] = true;
    while let Some(v) = q.pop_front() {
        if v == b {
            return true;
        }
        for (k, &(x, y, _, _)) in g.bonds.iter().enumerate() {
            if k == skip {
                continue;
            }
            let w = if x == v {
                y
            } else if y == v {
                x
            } else {
                continue;
            };
            if !seen[w] {
                seen[w] = true;
                q.push_back(w);
            }
        }
    }
    false
}

fn needs(g: &Graph, v: usize, sum: i32) -> bool {
    let a = &g.atoms[v];
    a.arom
        && valences(&a.sym, a.charge)
            .into_iter()
            .find(|&x| x >= sum)
            .is_some_and(|x| sum < x)
}

/// Backtracking search for a matching covering every `required` vertex.
fn cover(required: &[bool], adj: &[Vec<usize>], used: &mut Vec<bool>) -> bool {
    let Some(v) = (0..required.len()).find(|&v| required[v] && !used[v]) else {
        return true;
    };
    used[v] = true;
    for &w in &adj[v] {
        if !used[w] {
            used[w] = true;
            if cover(required, adj, used) {
                return true;
            }
            used[w] = false;
        }
    }
    used[v] = false;
    false
}

fn kekule_ok(g: &Graph, allow_open: bool) -> bool {
    let n = g.atoms.len();
    let arom_edges: Vec<(usize, usize)> = (0..g.bonds.len())
        .filter(|&k| {
            let (a, b, _, explicit) = g.bonds[k];
            !explicit && g.atoms[a].arom && g.atoms[b].arom && on_cycle(g, k)
        })
        .map(|k| (g.bonds[k].0, g.bonds[k].1))
        .collect();
    let mut comp = vec![usize::MAX; n];
    for s in 0..n {
        if !g.atoms[s].arom || comp[s] != usize::MAX {
            continue;
        }
        comp[s] = s;
        let mut q = vec![s];
        let mut members = vec![s];
        while let Some(v) = q.pop() {
            for &(a, b) in &arom_edges {
                let w = if a == v {
                    b
                } else if b == v {
                    a
                } else {
                    continue;
                };
                if comp[w] == usize::MAX {
                    comp[w] = s;
                    q.push(w);
                    members.push(w);
                }
            }
        }
        let open = |v: usize| allow_open && g.open_atoms.contains(&v);
        if members.len() == 1 {
            if needs(g, s, g.sums[s]) && !open(s) {
                return false;
            }
            continue;
        }
        let needing: Vec<usize> = members.iter().copied().filter(|&v| needs(g, v, g.sums[v])).collect();
        let required: Vec<bool> = needing
            .iter()
            .map(|&v| {
                let s = g.sums[v];
                let a = &g.atoms[v];
                let max = *valences(&a.sym, a.charge).last().unwrap();
                !(open(v) && !needs(g, v, s + 1) && s < max)
            })
            .collect();
        let mut adj = vec![Vec::new(); needing.len()];
        for &(a, b) in &arom_edges {
            if let (Some(i), Some(j)) = (
                needing.iter().position(|&x| x == a),
                needing.iter().position(|&x| x == b),
            ) {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        if !cover(&required, &adj, &mut vec![false; needing.len()]) {
            return false;
        }
    }
    true
}

/// Whether the token list, taken as a prefix, can still be completed.
pub fn static_prefix(units: &[Unit]) -> Result<(), Why> {
    let g = build(units)?;
    if g.open_rings == 0 && !kekule_ok(&g, true) {
        return Err(Why::Kekule);
    }
    Ok(())
}

/// Whether the token list is a complete, valid molecule.
pub fn static_complete(units: &[Unit]) -> Result<(), Why> {
    let g = build(units)?;
    if g.atoms.is_empty()
        || g.pending
        || g.depth > 0
        || !matches!(g.last, Last::Atom | Last::Ring | Last::Close)
    {
        return Err(Why::Syntax);
    }
    if g.open_rings > 0 {
        return Err(Why::Ring);
    }
    if !kekule_ok(&g, false) {
        return Err(Why::Kekule);
    }
    Ok(())
}

/// Prefix verdict of a whole token list: the first failing prefix decides.
pub fn prefix_outcome(units: &[Unit]) -> Outcome {
    for k in 1..=units.len() {
        if let Err(why) = static_prefix(&units[..k]) {
            return Outcome::Bad(why, k - 1);
        }
    }
    Outcome::Prefix
}

/// Verdict after reading all tokens and asking for completion.
pub fn complete_outcome(units: &[Unit]) -> Outcome {
    match prefix_outcome(units) {
        Outcome::Prefix => match static_complete(units) {
            Ok(()) => Outcome::Complete,
            Err(why) => Outcome::Bad(why, units.len()),
        },
        bad => bad,
    }
}

pub fn outcome_of_str(s: &str, complete: bool) -> Outcome {
    let toks = split(s);
    let refs: Vec<&str> = toks.iter().map(String::as_str).collect();
    let units = parse_units(&refs).expect("known symbols");
    if complete {
        complete_outcome(&units)
    } else {
        prefix_outcome(&units)
    }
}
