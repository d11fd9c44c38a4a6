//! Vocabulary construction and windowed co-occurrence counting.
//!
//! A corpus is UTF-8 text with one sentence per line, tokens separated by
//! whitespace. Lines are hard boundaries: no window crosses a newline.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::binio::{self, ReadLe, WriteLe};
use crate::error::{Error, Result};

/// Largest supported window. The exact accumulator keeps weights as integer
/// multiples of `1 / lcm(1..=window)`, which must stay below 2^53.
pub const MAX_WINDOW: usize = 40;

/// Lines per parallel accumulation chunk. Fixed so that results do not depend
/// on the number of worker threads.
const CHUNK_LINES: usize = 4096;

/// Token table with corpus counts. Ids are dense and follow the stored order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    id_of: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit `(token, count)` list, keeping the
    /// given order as the id order.
    pub fn from_entries(entries: Vec<(String, u64)>) -> Result<Self> {
        let mut tokens = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        let mut id_of = HashMap::with_capacity(entries.len());
        for (i, (tok, count)) in entries.into_iter().enumerate() {
            let id = binio::to_u32(i, "vocabulary size")?;
            if id_of.insert(tok.clone(), id).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {tok:?}")));
            }
            tokens.push(tok);
            counts.push(count);
        }
        Ok(Self {
            tokens,
            counts,
            id_of,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn count(&self, id: usize) -> Option<u64> {
        self.counts.get(id).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Writes `token<TAB>count` lines; line `i` is id `i`.
    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        let mut w = binio::create(path)?;
        let we = binio::write_err(path);
        for (tok, count) in self.tokens.iter().zip(&self.counts) {
            writeln!(w, "{tok}\t{count}").map_err(&we)?;
        }
        w.flush().map_err(&we)
    }

    pub fn load_tsv(path: &Path) -> Result<Self> {
        let r = binio::open(path)?;
        let mut entries = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let (tok, count) = line.split_once('\t').ok_or_else(|| {
                Error::Format(format!("{}:{}: expected token<TAB>count", path.display(), lineno + 1))
            })?;
            let count = count.trim().parse::<u64>().map_err(|_| {
                Error::Format(format!("{}:{}: bad count {count:?}", path.display(), lineno + 1))
            })?;
            entries.push((tok.to_string(), count));
        }
        Self::from_entries(entries)
    }
}

/// Counts tokens and keeps those seen at least `min_count` times.
///
/// Ids are assigned by descending frequency, ties broken lexicographically.
pub fn build_vocabulary<I, S>(tokens: I, min_count: u64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if min_count == 0 {
        return Err(Error::BadParameter("min_count must be positive".into()));
    }
    let mut freq: HashMap<String, u64> = HashMap::new();
    let mut seen_any = false;
    for tok in tokens {
        seen_any = true;
        let tok = tok.as_ref();
        match freq.get_mut(tok) {
            Some(c) => *c += 1,
            None => {
                freq.insert(tok.to_string(), 1);
            }
        }
    }
    if !seen_any {
        return Err(Error::EmptyCorpus);
    }
    let mut entries: Vec<(String, u64)> = freq.into_iter().filter(|(_, c)| *c >= min_count).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_entries(entries)
}

/// Convenience wrapper: whitespace-tokenizes every line.
pub fn build_vocabulary_from_lines<I, S>(lines: I, min_count: u64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let lines: Vec<S> = lines.into_iter().collect();
    build_vocabulary(lines.iter().flat_map(|l| l.as_ref().split_whitespace()), min_count)
}

/// How a co-occurrence at distance `d` is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// `1/d`, as in GloVe.
    #[default]
    InverseDistance,
    /// Every pair inside the window counts 1.
    Uniform,
}

/// Sparse word x context weights, stored sorted by `(word, context)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCoocMatrix {
    entries: Vec<(u32, u32, f64)>,
    vocab_size: u32,
    window: u32,
    symmetric: bool,
}

const COOC_MAGIC: &[u8; 8] = b"CMVCOOC1";

impl SparseCoocMatrix {
    /// Builds a matrix from raw triples. Duplicate keys are summed, zero or
    /// negative weights rejected.
    pub fn from_triples(
        mut triples: Vec<(u32, u32, f64)>,
        vocab_size: u32,
        window: u32,
        symmetric: bool,
    ) -> Result<Self> {
        triples.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut entries: Vec<(u32, u32, f64)> = Vec::with_capacity(triples.len());
        for (w, c, v) in triples {
            if w >= vocab_size || c >= vocab_size {
                return Err(Error::Index {
                    index: w.max(c) as usize,
                    size: vocab_size as usize,
                });
            }
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::BadInput(format!("weight {v} at ({w},{c}) must be positive")));
            }
            match entries.last_mut() {
                Some(last) if last.0 == w && last.1 == c => last.2 += v,
                _ => entries.push((w, c, v)),
            }
        }
        Ok(Self {
            entries,
            vocab_size,
            window,
            symmetric,
        })
    }

    pub fn empty(vocab_size: u32, window: u32, symmetric: bool) -> Self {
        Self {
            entries: Vec::new(),
            vocab_size,
            window,
            symmetric,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size as usize
    }

    pub fn window(&self) -> u32 {
        self.window
    }

    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(u32, u32, f64)] {
        &self.entries
    }

    pub fn get(&self, word: u32, context: u32) -> f64 {
        self.entries
            .binary_search_by(|e| (e.0, e.1).cmp(&(word, context)))
            .map(|i| self.entries[i].2)
            .unwrap_or(0.0)
    }

    /// The stored entries of one row, as `(context, weight)`.
    pub fn row(&self, word: u32) -> impl Iterator<Item = (u32, f64)> + '_ {
        let start = self.entries.partition_point(|e| e.0 < word);
        self.entries[start..]
            .iter()
            .take_while(move |e| e.0 == word)
            .map(|e| (e.1, e.2))
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.2).sum()
    }

    /// True when `entry(i, j) == entry(j, i)` bit for bit.
    pub fn is_transpose_symmetric(&self) -> bool {
        self.entries
            .iter()
            .all(|&(w, c, v)| self.get(c, w).to_bits() == v.to_bits())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = binio::create(path)?;
        let we = binio::write_err(path);
        w.write_all(COOC_MAGIC).map_err(&we)?;
        w.put_u32(self.vocab_size).map_err(&we)?;
        w.put_u32(self.window).map_err(&we)?;
        w.put_u8(self.symmetric as u8).map_err(&we)?;
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
        binio::expect_magic(&mut r, COOC_MAGIC, path)?;
        let vocab_size = r.u32_le().map_err(&re)?;
        let window = r.u32_le().map_err(&re)?;
        let symmetric = match r.u8_le().map_err(&re)? {
            0 => false,
            1 => true,
            x => return Err(Error::Format(format!("{}: bad symmetric flag {x}", path.display()))),
        };
        let n = r.u64_le().map_err(&re)?;
        let entries = read_sorted_triples(&mut r, n, vocab_size, path)?;
        binio::expect_eof(&mut r, path)?;
        Ok(Self {
            entries,
            vocab_size,
            window,
            symmetric,
        })
    }
}

/// Reads `n` `(u32, u32, f64)` triples and checks ordering and range.
pub(crate) fn read_sorted_triples<R: std::io::Read>(
    r: &mut R,
    n: u64,
    vocab_size: u32,
    path: &Path,
) -> Result<Vec<(u32, u32, f64)>> {
    let re = binio::read_err(path);
    // Cap the preallocation so a corrupt count cannot exhaust memory.
    let mut entries = Vec::with_capacity(n.min(1 << 20) as usize);
    let mut prev: Option<(u32, u32)> = None;
    for _ in 0..n {
        let w = r.u32_le().map_err(&re)?;
        let c = r.u32_le().map_err(&re)?;
        let v = r.f64_le().map_err(&re)?;
        if w >= vocab_size || c >= vocab_size {
            return Err(Error::Format(format!("{}: id out of range", path.display())));
        }
        if prev.is_some_and(|p| p >= (w, c)) {
            return Err(Error::Format(format!("{}: entries not sorted", path.display())));
        }
        prev = Some((w, c));
        entries.push((w, c, v));
    }
    Ok(entries)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Least common multiple of `1..=n`.
fn lcm_upto(n: usize) -> u64 {
    (1..=n as u64).fold(1, |acc, d| acc / gcd(acc, d) * d)
}

/// Streaming co-occurrence accumulator.
///
/// Weights are summed exactly as integer multiples of `1 / lcm(1..=L)`, so the
/// result does not depend on the order in which pairs or chunks are added.
#[derive(Debug, Clone)]
pub struct CoocAccumulator<'v> {
    vocab: &'v Vocabulary,
    window: usize,
    weighting: Weighting,
    unit: u64,
    cells: HashMap<(u32, u32), u128>,
}

impl<'v> CoocAccumulator<'v> {
    pub fn new(vocab: &'v Vocabulary, window: usize, weighting: Weighting) -> Result<Self> {
        if window == 0 || window > MAX_WINDOW {
            return Err(Error::BadParameter(format!(
                "window must be in 1..={MAX_WINDOW}, got {window}"
            )));
        }
        Ok(Self {
            vocab,
            window,
            weighting,
            unit: lcm_upto(window),
            cells: HashMap::new(),
        })
    }

    fn increment(&self, distance: usize) -> u128 {
        match self.weighting {
            Weighting::InverseDistance => (self.unit / distance as u64) as u128,
            Weighting::Uniform => self.unit as u128,
        }
    }

    /// Adds one sentence. Out-of-vocabulary tokens keep their position but
    /// contribute nothing.
    pub fn add_sentence<S: AsRef<str>>(&mut self, tokens: &[S]) {
        let ids: Vec<Option<u32>> = tokens.iter().map(|t| self.vocab.id(t.as_ref())).collect();
        for (p, left) in ids.iter().enumerate() {
            let Some(left) = *left else { continue };
            let end = (p + self.window).min(ids.len() - 1);
            for q in p + 1..=end {
                let Some(right) = ids[q] else { continue };
                let inc = self.increment(q - p);
                *self.cells.entry((left, right)).or_insert(0) += inc;
                *self.cells.entry((right, left)).or_insert(0) += inc;
            }
        }
    }

    pub fn add_line(&mut self, line: &str) {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        self.add_sentence(&tokens);
    }

    fn merge(&mut self, other: Self) {
        for (k, v) in other.cells {
            *self.cells.entry(k).or_insert(0) += v;
        }
    }

    pub fn finish(self) -> SparseCoocMatrix {
        let unit = self.unit as f64;
        let mut entries: Vec<(u32, u32, f64)> = self
            .cells
            .into_iter()
            .map(|((w, c), n)| (w, c, n as f64 / unit))
            .collect();
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        SparseCoocMatrix {
            entries,
            vocab_size: self.vocab.len() as u32,
            window: self.window as u32,
            symmetric: true,
        }
    }
}

/// Counts co-occurrences over whitespace-tokenized lines within a symmetric
/// window, in parallel over fixed-size chunks of lines.
pub fn accumulate_cooccurrences<S: AsRef<str> + Sync>(
    lines: &[S],
    vocab: &Vocabulary,
    window: usize,
    weighting: Weighting,
) -> Result<SparseCoocMatrix> {
    let seed = CoocAccumulator::new(vocab, window, weighting)?;
    let partials: Vec<CoocAccumulator> = lines
        .par_chunks(CHUNK_LINES)
        .map(|chunk| {
            let mut acc = seed.clone();
            for line in chunk {
                acc.add_line(line.as_ref());
            }
            acc
        })
        .collect();
    let mut total = seed;
    for p in partials {
        total.merge(p);
    }
    Ok(total.finish())
}
