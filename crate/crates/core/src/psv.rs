//! Partial-validity truth tables over action sequences and the shaped reward
//! derived from them.

use std::fmt::Write as _;
use std::io::{Read, Write};

use thiserror::Error;

use crate::validator::{token_roles, TokenRole, ValidatorState, Verdict};
use crate::vocab::Vocabulary;

pub const DEFAULT_MIN_EOS_LEN: usize = 10;

const TABLE_MAGIC: &[u8; 4] = b"PSVT";
const TABLE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PsvError {
    #[error("action sequence is empty")]
    EmptyActions,
    #[error("token id {0} is not in the vocabulary")]
    UnknownTokenId(usize),
    #[error("row {row} out of range ({rows} rows)")]
    RowOutOfRange { row: usize, rows: usize },
    #[error("malformed table data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Binary validity matrix: row `i` marks the tokens that may follow the
/// first `i` actions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PsvTable {
    width: usize,
    words_per_row: usize,
    bits: Vec<u64>,
    index_invalid: Option<usize>,
    forced_fallback_rows: Vec<usize>,
}

impl PsvTable {
    fn empty(width: usize) -> Self {
        Self {
            width,
            words_per_row: width.div_ceil(64),
            bits: Vec::new(),
            index_invalid: None,
            forced_fallback_rows: Vec::new(),
        }
    }

    fn push_row(&mut self) -> usize {
        self.bits.extend(std::iter::repeat_n(0, self.words_per_row));
        self.rows() - 1
    }

    fn set(&mut self, row: usize, col: usize) {
        self.bits[row * self.words_per_row + col / 64] |= 1 << (col % 64);
    }

    pub fn rows(&self) -> usize {
        self.bits.len().checked_div(self.words_per_row).unwrap_or(0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.words_per_row + col / 64] >> (col % 64) & 1 == 1
    }

    fn row_words(&self, row: usize) -> &[u64] {
        &self.bits[row * self.words_per_row..(row + 1) * self.words_per_row]
    }

    /// First action index whose bit is 0, if any.
    pub fn index_invalid(&self) -> Option<usize> {
        self.index_invalid
    }

    /// `index_invalid` with `-1` for a sequence that stayed valid.
    pub fn index_invalid_signed(&self) -> i64 {
        self.index_invalid.map_or(-1, |i| i as i64)
    }

    pub fn forced_fallback_rows(&self) -> &[usize] {
        &self.forced_fallback_rows
    }

    pub fn row_count_ones(&self, row: usize) -> usize {
        self.row_words(row).iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn valid_set(&self, row: usize) -> Result<Vec<usize>, PsvError> {
        if row >= self.rows() {
            return Err(PsvError::RowOutOfRange { row, rows: self.rows() });
        }
        Ok(self.valid_iter(row).collect())
    }

    pub fn valid_iter(&self, row: usize) -> impl Iterator<Item = usize> + '_ {
        self.row_words(row).iter().enumerate().flat_map(|(w, &word)| {
            let mut rest = word;
            std::iter::from_fn(move || {
                (rest != 0).then(|| {
                    let bit = rest.trailing_zeros() as usize;
                    rest &= rest - 1;
                    w * 64 + bit
                })
            })
        })
    }

    /// Dense 0/1 rows, mainly for export and tests.
    pub fn to_dense(&self) -> Vec<Vec<bool>> {
        (0..self.rows())
            .map(|r| (0..self.width).map(|c| self.get(r, c)).collect())
            .collect()
    }

    /// CSV with the token symbols as header and a trailing metadata line.
    pub fn to_csv(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        let header: Vec<&str> = (0..self.width).map(|c| vocab.symbol(c)).collect();
        out.push_str(&header.iter().map(|s| csv_field(s)).collect::<Vec<_>>().join(","));
        out.push('\n');
        for r in 0..self.rows() {
            let row: Vec<&str> = (0..self.width)
                .map(|c| if self.get(r, c) { "1" } else { "0" })
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        let fallback: Vec<String> = self.forced_fallback_rows.iter().map(|r| r.to_string()).collect();
        let _ = writeln!(
            out,
            "# index_invalid={} forced_fallback_rows={}",
            self.index_invalid_signed(),
            fallback.join(";")
        );
        out
    }

    pub fn write_binary(&self, mut w: impl Write) -> Result<(), PsvError> {
        w.write_all(TABLE_MAGIC)?;
        w.write_all(&TABLE_VERSION.to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.rows() as u32).to_le_bytes())?;
        w.write_all(&self.index_invalid_signed().to_le_bytes())?;
        w.write_all(&(self.forced_fallback_rows.len() as u32).to_le_bytes())?;
        for &r in &self.forced_fallback_rows {
            w.write_all(&(r as u32).to_le_bytes())?;
        }
        for word in &self.bits {
            w.write_all(&word.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self, PsvError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TABLE_MAGIC {
            return Err(PsvError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != TABLE_VERSION {
            return Err(PsvError::Format(format!("unsupported version {version}")));
        }
        let width = read_u32(&mut r)? as usize;
        let rows = read_u32(&mut r)? as usize;
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        let index_invalid = match i64::from_le_bytes(buf) {
            -1 => None,
            i if i >= 0 => Some(i as usize),
            i => return Err(PsvError::Format(format!("bad index_invalid {i}"))),
        };
        let n_fallback = read_u32(&mut r)? as usize;
        let forced_fallback_rows = (0..n_fallback)
            .map(|_| read_u32(&mut r).map(|v| v as usize))
            .collect::<Result<_, _>>()?;
        let mut table = Self::empty(width);
        table.index_invalid = index_invalid;
        table.forced_fallback_rows = forced_fallback_rows;
        for _ in 0..rows * table.words_per_row {
            r.read_exact(&mut buf)?;
            table.bits.push(u64::from_le_bytes(buf));
        }
        Ok(table)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, PsvError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Builds tables for one vocabulary. Token roles are classified once.
#[derive(Debug, Clone)]
pub struct TableBuilder {
    roles: Vec<TokenRole>,
    eos_id: usize,
    min_eos_len: usize,
}

impl TableBuilder {
    pub fn new(vocab: &Vocabulary, min_eos_len: usize) -> Self {
        Self {
            roles: token_roles(vocab),
            eos_id: vocab.eos_id(),
            min_eos_len,
        }
    }

    pub fn min_eos_len(&self) -> usize {
        self.min_eos_len
    }

    pub fn eos_id(&self) -> usize {
        self.eos_id
    }

    pub fn width(&self) -> usize {
        self.roles.len()
    }

    /// Marks the valid continuations of `state` (a prefix of `len` tokens)
    /// into `out`, one flag per token.
    pub fn candidates(&self, state: &ValidatorState, len: usize, out: &mut [bool]) {
        let dead = state.is_invalid();
        for (j, role) in self.roles.iter().enumerate() {
            out[j] = !dead
                && match role {
                    TokenRole::Smiles(lex) => state.advance(lex).1 == Verdict::ValidPrefix,
                    TokenRole::Eos => len >= self.min_eos_len && state.finalize() == Verdict::ValidComplete,
                    TokenRole::Bos | TokenRole::Pad | TokenRole::Unsupported => false,
                };
        }
    }

    pub fn build(&self, actions: &[usize]) -> Result<PsvTable, PsvError> {
        if actions.is_empty() {
            return Err(PsvError::EmptyActions);
        }
        if let Some(&bad) = actions.iter().find(|&&a| a >= self.roles.len()) {
            return Err(PsvError::UnknownTokenId(bad));
        }
        let mut table = PsvTable::empty(self.roles.len());
        let mut state = ValidatorState::new();
        let mut dead = false;
        let mut flags = vec![false; self.roles.len()];
        for (i, &action) in actions.iter().enumerate() {
            let row = table.push_row();
            if dead {
                flags.iter_mut().for_each(|f| *f = false);
            } else {
                self.candidates(&state, i, &mut flags);
            }
            let mut any = false;
            for (j, _) in flags.iter().enumerate().filter(|(_, &f)| f) {
                table.set(row, j);
                any = true;
            }
            if !any {
                table.set(row, self.eos_id);
                table.forced_fallback_rows.push(row);
            }
            if table.index_invalid.is_none() && !table.get(row, action) {
                table.index_invalid = Some(i);
            }
            if !any || action == self.eos_id {
                break;
            }
            match self.roles[action] {
                TokenRole::Smiles(lex) => {
                    state.push(&lex);
                }
                _ => dead = true,
            }
        }
        Ok(table)
    }
}

/// Convenience wrapper over [`TableBuilder`].
pub fn build_table(actions: &[usize], vocab: &Vocabulary, min_eos_len: usize) -> Result<PsvTable, PsvError> {
    TableBuilder::new(vocab, min_eos_len).build(actions)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapedRewards {
    pub rewards: Vec<f64>,
    pub terminal_score: Option<f64>,
}

/// -1 at the first invalid action (and nothing after it); otherwise the task
/// score at the EOS row.
pub fn shaped_rewards(table: &PsvTable, task_score: f64, eos_row: usize) -> ShapedRewards {
    match table.index_invalid() {
        Some(i) => {
            let mut rewards = vec![0.0; i + 1];
            rewards[i] = -1.0;
            ShapedRewards { rewards, terminal_score: None }
        }
        None => {
            let mut rewards = vec![0.0; eos_row + 1];
            rewards[eos_row] = task_score;
            ShapedRewards { rewards, terminal_score: Some(task_score) }
        }
    }
}

/// Counts of `|valid_set|` sizes: `counts[k]` rows had exactly `k` valid tokens.
pub fn valid_set_histogram<'a>(tables: impl IntoIterator<Item = &'a PsvTable>) -> Vec<u64> {
    let mut counts = Vec::new();
    for t in tables {
        for r in 0..t.rows() {
            let k = t.row_count_ones(r);
            if counts.len() <= k {
                counts.resize(k + 1, 0);
            }
            counts[k] += 1;
        }
    }
    counts
}
