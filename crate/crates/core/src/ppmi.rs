//! Shifted, smoothed positive PMI over a sparse co-occurrence matrix.

use std::io::Write;
use std::path::Path;

use crate::binio::{self, ReadLe, WriteLe};
use crate::corpus::{read_sorted_triples, SparseCoocMatrix};
use crate::error::{Error, Result};

/// Values at or below this after the shift are dropped.
pub const ZERO_CUTOFF: f64 = 1e-15;

const SPPMI_MAGIC: &[u8; 8] = b"CMVSPMI1";

/// Sparse SPPMI values; only strictly positive entries are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SppmiMatrix {
    entries: Vec<(u32, u32, f64)>,
    vocab_size: u32,
    window: u32,
    symmetric: bool,
    alpha: f64,
    shift: f64,
}

impl SppmiMatrix {
    pub fn vocab_size(&self) -> usize {
        self.vocab_size as usize
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn window(&self) -> u32 {
        self.window
    }

    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn entries(&self) -> &[(u32, u32, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: u32, context: u32) -> f64 {
        self.entries
            .binary_search_by(|e| (e.0, e.1).cmp(&(word, context)))
            .map(|i| self.entries[i].2)
            .unwrap_or(0.0)
    }

    /// Stored row of `word` as `(context, value)` pairs; empty rows are empty.
    pub fn row(&self, word: usize) -> Result<Vec<(u32, f64)>> {
        if word >= self.vocab_size() {
            return Err(Error::Index {
                index: word,
                size: self.vocab_size(),
            });
        }
        let word = word as u32;
        let start = self.entries.partition_point(|e| e.0 < word);
        Ok(self.entries[start..]
            .iter()
            .take_while(|e| e.0 == word)
            .map(|e| (e.1, e.2))
            .collect())
    }

    /// Builds a matrix directly from positive triples (used for tests and
    /// for hand-built inputs).
    pub fn from_triples(
        triples: Vec<(u32, u32, f64)>,
        vocab_size: u32,
        alpha: f64,
        shift: f64,
    ) -> Result<Self> {
        let cooc = SparseCoocMatrix::from_triples(triples, vocab_size, 0, false)?;
        Ok(Self {
            entries: cooc.entries().to_vec(),
            vocab_size,
            window: 0,
            symmetric: false,
            alpha,
            shift,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = binio::create(path)?;
        let we = binio::write_err(path);
        w.write_all(SPPMI_MAGIC).map_err(&we)?;
        w.put_u32(self.vocab_size).map_err(&we)?;
        w.put_u32(self.window).map_err(&we)?;
        w.put_u8(self.symmetric as u8).map_err(&we)?;
        w.put_f64(self.alpha).map_err(&we)?;
        w.put_f64(self.shift).map_err(&we)?;
        w.put_u64(self.entries.len() as u64).map_err(&we)?;
        for &(r, c, v) in &self.entries {
            w.put_u32(r).map_err(&we)?;
            w.put_u32(c).map_err(&we)?;
            w.put_f64(v).map_err(&we)?;
        }
        w.flush().map_err(&we)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = binio::open(path)?;
        let re = binio::read_err(path);
        binio::expect_magic(&mut r, SPPMI_MAGIC, path)?;
        let vocab_size = r.u32_le().map_err(&re)?;
        let window = r.u32_le().map_err(&re)?;
        let symmetric = match r.u8_le().map_err(&re)? {
            0 => false,
            1 => true,
            x => return Err(Error::Format(format!("{}: bad symmetric flag {x}", path.display()))),
        };
        let alpha = r.f64_le().map_err(&re)?;
        let shift = r.f64_le().map_err(&re)?;
        validate(alpha, shift).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let n = r.u64_le().map_err(&re)?;
        let entries = read_sorted_triples(&mut r, n, vocab_size, path)?;
        binio::expect_eof(&mut r, path)?;
        Ok(Self {
            entries,
            vocab_size,
            window,
            symmetric,
            alpha,
            shift,
        })
    }
}

fn validate(alpha: f64, shift: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::BadParameter(format!("alpha must lie in [0,1], got {alpha}")));
    }
    if !(shift >= 1.0) || !shift.is_finite() {
        return Err(Error::BadParameter(format!("shift must be >= 1, got {shift}")));
    }
    Ok(())
}

/// `max(ln(#(w,c) * sum_c' #(c')^alpha / (#(w) * #(c)^alpha)) - ln(s), 0)`.
///
/// `#(w)` and `#(c)` are the row and column marginals of `cooc`; the natural
/// logarithm is used throughout.
pub fn compute_sppmi(cooc: &SparseCoocMatrix, alpha: f64, shift: f64) -> Result<SppmiMatrix> {
    validate(alpha, shift)?;
    if cooc.is_empty() {
        return Err(Error::BadInput("co-occurrence matrix is empty".into()));
    }
    let v = cooc.vocab_size();
    let mut row_mass = vec![0.0f64; v];
    let mut col_mass = vec![0.0f64; v];
    for &(w, c, x) in cooc.entries() {
        row_mass[w as usize] += x;
        col_mass[c as usize] += x;
    }
    let col_smoothed: Vec<f64> = col_mass
        .iter()
        .map(|&m| if m > 0.0 { m.powf(alpha) } else { 0.0 })
        .collect();
    let smoothed_total: f64 = col_smoothed.iter().sum();
    let log_shift = shift.ln();

    let entries = cooc
        .entries()
        .iter()
        .filter_map(|&(w, c, x)| {
            let ratio = x * smoothed_total / (row_mass[w as usize] * col_smoothed[c as usize]);
            let value = ratio.ln() - log_shift;
            (value > ZERO_CUTOFF).then_some((w, c, value))
        })
        .collect();

    Ok(SppmiMatrix {
        entries,
        vocab_size: cooc.vocab_size() as u32,
        window: cooc.window(),
        symmetric: cooc.symmetric() && alpha == 1.0,
        alpha,
        shift,
    })
}
