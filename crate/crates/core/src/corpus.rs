//! Word-level corpora: vocabularies, batched token streams and truncated-BPTT windows.
//!
//! Tokenization is whitespace splitting; every line is terminated by an
//! end-of-sentence token. Streams follow the usual language-model layout:
//! the encoded corpus is cut into `B` contiguous slices that are consumed in
//! parallel, and each window's targets are its inputs shifted by one step.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_EOS: &str = "<eos>";
pub const DEFAULT_UNK: &str = "<unk>";

/// Dense bijection between tokens and ids `0..V`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    eos_id: u32,
    unk_id: u32,
}

impl Vocabulary {
    /// Builds a vocabulary in first-occurrence order. The eos token is
    /// appended after each line's tokens; the unk token gets the next free id
    /// unless it already occurred in the text.
    pub fn build<'a, I>(lines: I, eos: &str, unk: &str) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut vocab = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
            eos_id: 0,
            unk_id: 0,
        };
        let mut saw_line = false;
        for line in lines {
            saw_line = true;
            for tok in line.split_whitespace() {
                vocab.intern(tok);
            }
            vocab.intern(eos);
        }
        if !saw_line {
            return Err(Error::EmptyCorpus);
        }
        vocab.eos_id = vocab.token_to_id[eos];
        vocab.unk_id = vocab.intern(unk);
        Ok(vocab)
    }

    fn intern(&mut self, tok: &str) -> u32 {
        if let Some(&id) = self.token_to_id.get(tok) {
            return id;
        }
        let id = self.id_to_token.len() as u32;
        self.token_to_id.insert(tok.to_owned(), id);
        self.id_to_token.push(tok.to_owned());
        id
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn eos_id(&self) -> u32 {
        self.eos_id
    }

    pub fn unk_id(&self) -> u32 {
        self.unk_id
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Encodes one line; unknown tokens map to unk and eos is appended.
    pub fn encode_line(&self, line: &str) -> Vec<u32> {
        let mut ids: Vec<u32> = line
            .split_whitespace()
            .map(|t| self.id(t).unwrap_or(self.unk_id))
            .collect();
        ids.push(self.eos_id);
        ids
    }

    pub fn encode_lines<'a, I>(&self, lines: I) -> Vec<u32>
    where
        I: IntoIterator<Item = &'a str>,
    {
        lines
            .into_iter()
            .flat_map(|l| self.encode_line(l))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(DEFAULT_UNK))
            .collect()
    }

    /// Two-column `id<TAB>token` text form.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, tok) in self.id_to_token.iter().enumerate() {
            let _ = writeln!(out, "{id}\t{tok}");
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }

    /// Reads the `id<TAB>token` form back. Ids must be dense and in order.
    pub fn read_tsv(path: &Path, eos: &str, unk: &str) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let parse_err = |line: usize, detail: String| Error::Parse {
            path: path.display().to_string(),
            line,
            detail,
        };
        let mut vocab = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
            eos_id: 0,
            unk_id: 0,
        };
        for (n, line) in text.lines().enumerate() {
            let (id, tok) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(n + 1, "expected id<TAB>token".into()))?;
            let id: usize = id
                .parse()
                .map_err(|_| parse_err(n + 1, format!("bad id {id:?}")))?;
            if id != vocab.len() || vocab.token_to_id.contains_key(tok) {
                return Err(parse_err(
                    n + 1,
                    format!("id {id} out of order or duplicate token"),
                ));
            }
            vocab.intern(tok);
        }
        vocab.eos_id = vocab
            .id(eos)
            .ok_or_else(|| parse_err(0, format!("missing eos token {eos}")))?;
        vocab.unk_id = vocab
            .id(unk)
            .ok_or_else(|| parse_err(0, format!("missing unk token {unk}")))?;
        Ok(vocab)
    }

    /// SHA-256 over the tsv form; used to match checkpoints to corpora.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_tsv().as_bytes()))
    }
}

/// Reads a UTF-8 text file as a list of lines.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// `B` parallel contiguous slices of a token sequence, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchedStream {
    tokens: Array2<u32>,
}

impl BatchedStream {
    pub fn batch_size(&self) -> usize {
        self.tokens.nrows()
    }

    /// Timesteps per stream (`T_total`).
    pub fn len(&self) -> usize {
        self.tokens.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> ArrayView2<'_, u32> {
        self.tokens.view()
    }

    /// Positions that receive a next-token target: `B * (T_total - 1)`.
    pub fn supervised_positions(&self) -> usize {
        self.batch_size() * self.len().saturating_sub(1)
    }

    pub fn windows(&self, bptt: usize) -> Windows<'_> {
        bptt_windows(self, bptt)
    }
}

/// Splits `ids` into `batch` contiguous rows of `floor(len / batch)` tokens; the remainder is dropped.
pub fn batchify(ids: &[u32], batch: usize) -> Result<BatchedStream> {
    if batch == 0 {
        return Err(Error::ZeroBatch);
    }
    if ids.len() < batch {
        return Err(Error::InsufficientTokens {
            tokens: ids.len(),
            batch,
        });
    }
    let steps = ids.len() / batch;
    let tokens = Array2::from_shape_vec((batch, steps), ids[..batch * steps].to_vec())
        .expect("shape matches truncated length");
    Ok(BatchedStream { tokens })
}

/// One truncated-BPTT window: `inputs[b][t]` predicts `targets[b][t]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub inputs: Array2<u32>,
    pub targets: Array2<u32>,
}

impl Window {
    pub fn batch_size(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Sequential cursor over the windows of a stream.
#[derive(Debug, Clone)]
pub struct Windows<'a> {
    stream: &'a BatchedStream,
    bptt: usize,
    pos: usize,
}

/// Iterates windows of at most `bptt` steps; the final window may be shorter.
///
/// Panics if `bptt == 0`.
pub fn bptt_windows(stream: &BatchedStream, bptt: usize) -> Windows<'_> {
    assert!(bptt >= 1, "bptt window length must be at least 1");
    Windows {
        stream,
        bptt,
        pos: 0,
    }
}

impl Iterator for Windows<'_> {
    type Item = Window;

    fn next(&mut self) -> Option<Window> {
        let last = self.stream.len().saturating_sub(1);
        if self.pos >= last {
            return None;
        }
        let len = self.bptt.min(last - self.pos);
        let tokens = &self.stream.tokens;
        let inputs = tokens.slice(s![.., self.pos..self.pos + len]).to_owned();
        let targets = tokens
            .slice(s![.., self.pos + 1..self.pos + 1 + len])
            .to_owned();
        self.pos += len;
        Some(Window { inputs, targets })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let remaining = self.stream.len().saturating_sub(1).saturating_sub(self.pos);
        let n = remaining.div_ceil(self.bptt);
        (n, Some(n))
    }
}

impl ExactSizeIterator for Windows<'_> {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_occurrence_ids() {
        let v = Vocabulary::build(["a b", "b c"], DEFAULT_EOS, DEFAULT_UNK).unwrap();
        assert_eq!(v.len(), 5);
        let expected = ["a", "b", "<eos>", "c", "<unk>"];
        for (i, t) in expected.iter().enumerate() {
            assert_eq!(v.id(t), Some(i as u32));
        }
        assert_eq!(v.eos_id(), 2);
        assert_eq!(v.unk_id(), 4);
    }

    #[test]
    fn blank_line_holds_only_specials() {
        let v = Vocabulary::build([""], DEFAULT_EOS, DEFAULT_UNK).unwrap();
        assert_eq!(v.tokens(), &["<eos>".to_string(), "<unk>".to_string()]);
        assert_eq!(v.encode_line(""), vec![v.eos_id()]);
    }

    #[test]
    fn empty_corpus_rejected() {
        let lines: [&str; 0] = [];
        assert!(matches!(
            Vocabulary::build(lines, DEFAULT_EOS, DEFAULT_UNK),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let v = Vocabulary::build(["a b"], DEFAULT_EOS, DEFAULT_UNK).unwrap();
        assert_eq!(v.encode_line("a zzz"), vec![0, v.unk_id(), v.eos_id()]);
    }

    #[test]
    fn tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocabulary::build(["x y z", "z q"], DEFAULT_EOS, DEFAULT_UNK).unwrap();
        v.write_tsv(&path).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap().lines().next(),
            Some("0\tx")
        );
        let back = Vocabulary::read_tsv(&path, DEFAULT_EOS, DEFAULT_UNK).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.fingerprint(), v.fingerprint());
    }

    #[test]
    fn batchify_rows() {
        let ids: Vec<u32> = (0..12).collect();
        let s = batchify(&ids, 3).unwrap();
        assert_eq!((s.batch_size(), s.len()), (3, 4));
        assert_eq!(s.tokens().row(1).to_vec(), vec![4, 5, 6, 7]);

        let ids: Vec<u32> = (0..13).collect();
        let s = batchify(&ids, 3).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.tokens().row(2).to_vec(), vec![8, 9, 10, 11]);
    }

    #[test]
    fn batchify_errors() {
        assert!(matches!(batchify(&[1, 2], 0), Err(Error::ZeroBatch)));
        assert!(matches!(
            batchify(&[1, 2], 3),
            Err(Error::InsufficientTokens { .. })
        ));
    }

    #[test]
    fn million_tokens_twenty_streams() {
        let ids = vec![0u32; 1_000_000];
        assert_eq!(batchify(&ids, 20).unwrap().len(), 50_000);
    }

    #[test]
    fn windows_shift_by_one() {
        let s = batchify(&[5, 7, 9, 2, 4], 1).unwrap();
        let w: Vec<Window> = s.windows(2).collect();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].inputs.row(0).to_vec(), vec![5, 7]);
        assert_eq!(w[0].targets.row(0).to_vec(), vec![7, 9]);
        assert_eq!(w[1].inputs.row(0).to_vec(), vec![9, 2]);
        assert_eq!(w[1].targets.row(0).to_vec(), vec![2, 4]);
    }

    #[test]
    fn long_window_yields_one() {
        let s = batchify(&[1, 2, 3, 4, 5, 6], 1).unwrap();
        assert_eq!(s.windows(5).count(), 1);
        assert_eq!(s.windows(50).count(), 1);
    }

    #[test]
    fn window_count_arithmetic() {
        // (50000 - 1) supervised steps in windows of 70: 714 full + one of 19.
        let ids = vec![0u32; 50_000];
        let s = batchify(&ids, 1).unwrap();
        let w = s.windows(70);
        assert_eq!(w.len(), 715);
        let lens: Vec<usize> = w.map(|w| w.len()).collect();
        assert_eq!(lens.len(), 715);
        assert!(lens[..714].iter().all(|&l| l == 70));
        assert_eq!(lens[714], 49_999 - 714 * 70);
        assert_eq!(lens[714], 19);
    }
}
