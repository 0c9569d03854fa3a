//! Exact discrete information measures over small alphabets.
//!
//! Quantities are reported in bits. A network maps `X` through layers
//! `T_1 .. T_L`, giving the Markov chain `Y - X - T_1 - ... - T_L`; the
//! checks here evaluate that chain by full enumeration.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::{lstm_layer_forward, NetworkParams};

/// Tolerance on probability sums.
pub const SUM_TOLERANCE: f64 = 1e-12;
/// Tolerance for information inequalities and equalities.
pub const INFO_TOLERANCE: f64 = 1e-10;

/// `-p log2 p` summand with `0 log 0 = 0`.
fn plog(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

fn check_entries(m: &Array2<f64>, what: &str) -> Result<()> {
    if let Some(v) = m.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidValue(format!("{what} has invalid entry {v}")));
    }
    Ok(())
}

/// Joint distribution `p(a, b)`; rows index `a`, columns index `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    p: Array2<f64>,
}

impl JointTable {
    pub fn new(p: Array2<f64>) -> Result<Self> {
        check_entries(&p, "joint table")?;
        let total = p.sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidValue(format!("joint table sums to {total}")));
        }
        Ok(JointTable { p })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(rows_to_matrix(rows)?)
    }

    /// Reads a fixture file: `rows cols` header, then one row per line.
    pub fn from_fixture(path: &Path) -> Result<Self> {
        let (m, lines) = read_matrix_lines(path)?;
        Self::new(m.clone()).map_err(|e| fixture_error(path, &m, &lines, e))
    }

    /// `p(x) p(y|x)` from a marginal and a channel.
    pub fn from_marginal(px: &[f64], channel: &Channel) -> Result<Self> {
        if px.len() != channel.inputs() {
            return Err(Error::Shape(format!(
                "marginal over {} symbols, channel expects {}",
                px.len(),
                channel.inputs()
            )));
        }
        let mut p = channel.q.clone();
        for (mut row, &w) in p.axis_iter_mut(Axis(0)).zip(px) {
            row *= w;
        }
        Self::new(p)
    }

    pub fn rows(&self) -> usize {
        self.p.nrows()
    }

    pub fn cols(&self) -> usize {
        self.p.ncols()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.p
    }

    pub fn row_marginal(&self) -> Vec<f64> {
        self.p.sum_axis(Axis(1)).to_vec()
    }

    pub fn col_marginal(&self) -> Vec<f64> {
        self.p.sum_axis(Axis(0)).to_vec()
    }

    pub fn transpose(&self) -> JointTable {
        JointTable {
            p: self.p.t().to_owned(),
        }
    }

    /// `p(b | a)`; rows with zero mass become uniform.
    pub fn conditional(&self) -> Channel {
        let cols = self.cols();
        let mut q = self.p.clone();
        for mut row in q.axis_iter_mut(Axis(0)) {
            let s = row.sum();
            if s > 0.0 {
                row /= s;
            } else {
                row.fill(1.0 / cols as f64);
            }
        }
        Channel { q }
    }
}

/// Row-stochastic matrix `q(t | x)`; rows index `x`, columns index `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    q: Array2<f64>,
}

impl Channel {
    pub fn new(q: Array2<f64>) -> Result<Self> {
        check_entries(&q, "channel")?;
        if q.ncols() == 0 {
            return Err(Error::InvalidValue("channel has no outputs".into()));
        }
        for (i, row) in q.axis_iter(Axis(0)).enumerate() {
            let s = row.sum();
            if (s - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::InvalidValue(format!("channel row {i} sums to {s}")));
            }
        }
        Ok(Channel { q })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(rows_to_matrix(rows)?)
    }

    pub fn from_fixture(path: &Path) -> Result<Self> {
        let (m, lines) = read_matrix_lines(path)?;
        if let Some(i) = m
            .axis_iter(Axis(0))
            .position(|r| (r.sum() - 1.0).abs() > SUM_TOLERANCE)
        {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lines[i],
                detail: format!("channel row {i} sums to {}", m.row(i).sum()),
            });
        }
        Self::new(m.clone()).map_err(|e| fixture_error(path, &m, &lines, e))
    }

    pub fn identity(n: usize) -> Self {
        Channel { q: Array2::eye(n) }
    }

    /// Deterministic map `x -> map[x]` into `outputs` symbols.
    pub fn deterministic(map: &[usize], outputs: usize) -> Result<Self> {
        let mut q = Array2::zeros((map.len(), outputs));
        for (x, &t) in map.iter().enumerate() {
            if t >= outputs {
                return Err(Error::InvalidValue(format!(
                    "symbol {x} maps to {t}, outside {outputs} outputs"
                )));
            }
            q[[x, t]] = 1.0;
        }
        Ok(Channel { q })
    }

    pub fn inputs(&self) -> usize {
        self.q.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.q.ncols()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn row(&self, x: usize) -> ArrayView1<'_, f64> {
        self.q.row(x)
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Channel) -> Result<Channel> {
        if self.outputs() != next.inputs() {
            return Err(Error::Shape(format!(
                "{} outputs feed a channel with {} inputs",
                self.outputs(),
                next.inputs()
            )));
        }
        Ok(Channel {
            q: self.q.dot(&next.q),
        })
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape("ragged matrix rows".into()));
    }
    Array2::from_shape_vec((rows.len(), cols), rows.concat())
        .map_err(|e| Error::Shape(e.to_string()))
}

/// Points a validation failure at the first offending row, or the header.
fn fixture_error(path: &Path, m: &Array2<f64>, row_lines: &[usize], e: Error) -> Error {
    let bad_row = m
        .axis_iter(Axis(0))
        .position(|r| r.iter().any(|v| !(v.is_finite() && *v >= 0.0)));
    Error::Parse {
        path: path.display().to_string(),
        line: bad_row.and_then(|i| row_lines.get(i).copied()).unwrap_or(1),
        detail: e.to_string(),
    }
}

/// Parses a plain-text matrix: a `rows cols` header line followed by one
/// whitespace-separated row per line. Blank lines and `#` comments are skipped.
pub fn parse_matrix(text: &str, source: &str) -> Result<Array2<f64>> {
    parse_matrix_lines(text, source).map(|(m, _)| m)
}

/// Like [`parse_matrix`], also returning the source line of every row.
fn parse_matrix_lines(text: &str, source: &str) -> Result<(Array2<f64>, Vec<usize>)> {
    let err = |line: usize, detail: String| Error::Parse {
        path: source.to_string(),
        line,
        detail,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines
        .next()
        .ok_or_else(|| err(1, "missing header".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| err(hline, format!("bad header: {e}")))?;
    let [rows, cols] = dims[..] else {
        return Err(err(
            hline,
            format!("header needs 2 numbers, found {}", dims.len()),
        ));
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut row_lines = Vec::with_capacity(rows);
    let mut last = hline;
    for (n, line) in lines {
        last = n;
        if data.len() == rows * cols {
            return Err(err(n, format!("more than {rows} rows")));
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| err(n, format!("bad number {t:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        if row.len() != cols {
            return Err(err(
                n,
                format!("expected {cols} columns, found {}", row.len()),
            ));
        }
        data.extend(row);
        row_lines.push(n);
    }
    if data.len() != rows * cols {
        return Err(err(
            last,
            format!("expected {rows} rows, found {}", data.len() / cols.max(1)),
        ));
    }
    let m = Array2::from_shape_vec((rows, cols), data).expect("length checked");
    Ok((m, row_lines))
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    read_matrix_lines(path).map(|(m, _)| m)
}

fn read_matrix_lines(path: &Path) -> Result<(Array2<f64>, Vec<usize>)> {
    parse_matrix_lines(&fs::read_to_string(path)?, &path.display().to_string())
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if let Some(v) = p.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidValue(format!(
            "distribution has invalid entry {v}"
        )));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::InvalidValue(format!("distribution sums to {s}")));
    }
    Ok(())
}

/// `H(p)` in bits.
pub fn entropy(p: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    Ok(-p.iter().map(|&v| plog(v)).sum::<f64>())
}

/// `H(B | A)` in bits, columns given rows.
pub fn conditional_entropy(j: &JointTable) -> f64 {
    let mut h = 0.0;
    for row in j.p.axis_iter(Axis(0)) {
        let pa: f64 = row.sum();
        if pa > 0.0 {
            h -= row.iter().map(|&v| plog(v / pa)).sum::<f64>() * pa;
        }
    }
    h.max(0.0)
}

/// `I(A; B)` in bits as `sum p(a,b) log p(a,b) / (p(a) p(b))`.
pub fn mutual_information(j: &JointTable) -> f64 {
    let pa = j.row_marginal();
    let pb = j.col_marginal();
    let mut mi = 0.0;
    for ((a, b), &v) in j.p.indexed_iter() {
        if v > 0.0 {
            mi += v * (v / (pa[a] * pb[b])).log2();
        }
    }
    mi.max(0.0)
}

/// `I(B; C | A)` in bits for a joint `p(a, b, c)`.
pub fn conditional_mutual_information(p: &Array3<f64>) -> Result<f64> {
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (p.sum() - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::InvalidValue("invalid three-way joint".into()));
    }
    let mut mi = 0.0;
    for slice in p.axis_iter(Axis(0)) {
        let pa = slice.sum();
        if pa > 0.0 {
            let cond = JointTable {
                p: slice.to_owned() / pa,
            };
            mi += pa * mutual_information(&cond);
        }
    }
    Ok(mi)
}

/// `D(p || q)` in bits; `+inf` when `p` puts mass where `q` has none.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "KL over {} and {} symbols",
            p.len(),
            q.len()
        )));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    Ok(kl_unchecked(p.iter().copied(), q.iter().copied()))
}

fn kl_unchecked(p: impl Iterator<Item = f64>, q: impl Iterator<Item = f64>) -> f64 {
    let mut d = 0.0;
    for (a, b) in p.zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return f64::INFINITY;
            }
            d += a * (a / b).log2();
        }
    }
    d.max(0.0)
}

/// Joint of `(T, Y)` after sending `X` of `p(x, y)` through `chain`.
pub fn push_forward(p_xy: &JointTable, chain: &Channel) -> Result<JointTable> {
    if chain.inputs() != p_xy.rows() {
        return Err(Error::Shape(format!(
            "channel expects {} inputs, joint has {} rows",
            chain.inputs(),
            p_xy.rows()
        )));
    }
    Ok(JointTable {
        p: chain.q.t().dot(&p_xy.p),
    })
}

/// `p(y | t)` induced by `p(x, y)` and the channel `x -> t`.
pub fn induced_posterior(p_xy: &JointTable, chain: &Channel) -> Result<Channel> {
    Ok(push_forward(p_xy, chain)?.conditional())
}

/// The three terms of the cross-entropy identity, in bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CeDecomposition {
    /// `E_{x,y} E_{t|x} [-log Q(y|t)]`.
    pub cross_entropy: f64,
    /// `H(Y | X)`.
    pub conditional_entropy: f64,
    /// `E_{x} E_{t|x} D(p(y|x) || Q(y|t))`.
    pub kl_term: f64,
}

impl CeDecomposition {
    /// `cross_entropy - (H(Y|X) + kl_term)`; zero when the identity holds.
    pub fn residual(&self) -> f64 {
        if self.cross_entropy.is_infinite() && self.kl_term.is_infinite() {
            0.0
        } else {
            self.cross_entropy - (self.conditional_entropy + self.kl_term)
        }
    }

    pub fn holds(&self) -> bool {
        self.residual().abs() <= SUM_TOLERANCE * self.cross_entropy.abs().max(1.0)
    }
}

/// Cross entropy of a predictor `Q(y | t)` fed through the channel `x -> t`,
/// with both sides of `CE = H(Y|X) + E[KL]` evaluated directly.
pub fn ce_decomposition(
    p_xy: &JointTable,
    model: &Channel,
    chain: &Channel,
) -> Result<CeDecomposition> {
    if chain.inputs() != p_xy.rows()
        || model.inputs() != chain.outputs()
        || model.outputs() != p_xy.cols()
    {
        return Err(Error::Shape(format!(
            "joint {}x{}, chain {}x{}, model {}x{}",
            p_xy.rows(),
            p_xy.cols(),
            chain.inputs(),
            chain.outputs(),
            model.inputs(),
            model.outputs()
        )));
    }
    let px = p_xy.row_marginal();
    let p_y_x = p_xy.conditional();
    let mut ce = 0.0;
    let mut kl = 0.0;
    for (x, &pxv) in px.iter().enumerate() {
        if pxv <= 0.0 {
            continue;
        }
        for (t, &qt) in chain.row(x).iter().enumerate() {
            if qt <= 0.0 {
                continue;
            }
            let w = pxv * qt;
            for (y, &pyx) in p_y_x.row(x).iter().enumerate() {
                if pyx > 0.0 {
                    let q = model.q[[t, y]];
                    ce -= w * pyx * if q > 0.0 { q.log2() } else { f64::NEG_INFINITY };
                }
            }
            kl += w * kl_unchecked(p_y_x.row(x).iter().copied(), model.row(t).iter().copied());
        }
    }
    Ok(CeDecomposition {
        cross_entropy: ce,
        conditional_entropy: conditional_entropy(p_xy),
        kl_term: kl,
    })
}

/// Composes channels left to right.
pub fn compose(chain: &[Channel]) -> Result<Channel> {
    let (first, rest) = chain
        .split_first()
        .ok_or_else(|| Error::InvalidValue("empty channel chain".into()))?;
    rest.iter()
        .enumerate()
        .try_fold(first.clone(), |acc, (i, next)| {
            acc.then(next).map_err(|e| Error::ChainLink {
                link: i + 1,
                detail: e.to_string(),
            })
        })
}

/// `[I(Y;X), I(Y;T_1), ..., I(Y;T_L)]` plus whether it never increases.
#[derive(Debug, Clone, PartialEq)]
pub struct DpiReport {
    pub mi: Vec<f64>,
    pub monotone: bool,
}

fn non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0] + INFO_TOLERANCE)
}

/// Mutual information with `Y` along the chain `X -> T_1 -> ... -> T_L`,
/// where `links[l]` maps `T_l` to `T_{l+1}` and `T_0 = X`.
pub fn dpi_chain_check(p_xy: &JointTable, links: &[Channel]) -> Result<DpiReport> {
    let mut joint = p_xy.clone();
    let mut mi = vec![mutual_information(&joint)];
    for (l, link) in links.iter().enumerate() {
        joint = push_forward(&joint, link).map_err(|e| Error::ChainLink {
            link: l,
            detail: e.to_string(),
        })?;
        mi.push(mutual_information(&joint));
    }
    let monotone = non_increasing(&mi);
    Ok(DpiReport { mi, monotone })
}

/// Outcome of the sufficiency check on a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficiencyReport {
    /// `p(y | t_L) == p(y | x)` wherever `p(x, t_L) > 0`.
    pub condition_holds: bool,
    /// `I(Y;X) - I(Y;T_l)` for each layer.
    pub gaps: Vec<f64>,
}

impl SufficiencyReport {
    /// When the condition holds every gap must vanish.
    pub fn consistent(&self) -> bool {
        !self.condition_holds || self.gaps.iter().all(|g| g.abs() <= INFO_TOLERANCE)
    }
}

/// Tests whether the last layer keeps all information `X` has about `Y`.
pub fn sufficiency_check(p_xy: &JointTable, links: &[Channel]) -> Result<SufficiencyReport> {
    let report = dpi_chain_check(p_xy, links)?;
    let gaps = report.mi[1..].iter().map(|m| report.mi[0] - m).collect();
    let condition_holds = if links.is_empty() {
        true
    } else {
        let to_last = compose(links)?;
        let post = induced_posterior(p_xy, &to_last)?;
        let p_y_x = p_xy.conditional();
        let px = p_xy.row_marginal();
        px.iter().enumerate().all(|(x, &pxv)| {
            to_last.row(x).iter().enumerate().all(|(t, &q)| {
                pxv * q <= 0.0
                    || p_y_x
                        .row(x)
                        .iter()
                        .zip(post.row(t))
                        .all(|(a, b)| (a - b).abs() <= SUM_TOLERANCE)
            })
        })
    };
    Ok(SufficiencyReport {
        condition_holds,
        gaps,
    })
}

/// Maps a continuous state vector to a discrete code, one bin per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer {
    cuts: Cuts,
}

#[derive(Debug, Clone, PartialEq)]
enum Cuts {
    /// Same cut points for every dimension of any width.
    Shared(Vec<f64>),
    /// Cut points per dimension of a fixed width.
    PerDimension(Vec<Vec<f64>>),
}

fn check_cuts(c: &[f64], what: &str) -> Result<()> {
    if c.iter().any(|v| !v.is_finite())
        || c.windows(2)
            .any(|w| w[0].partial_cmp(&w[1]) != Some(Ordering::Less))
    {
        return Err(Error::InvalidValue(format!(
            "quantizer cuts for {what} must be finite and strictly increasing"
        )));
    }
    if c.len() >= u16::MAX as usize {
        return Err(Error::InvalidValue(format!("too many bins for {what}")));
    }
    Ok(())
}

impl Quantizer {
    /// Interior cut points per dimension; `k` cuts give `k + 1` bins.
    pub fn per_dimension(cuts: Vec<Vec<f64>>) -> Result<Self> {
        for (d, c) in cuts.iter().enumerate() {
            check_cuts(c, &format!("dimension {d}"))?;
        }
        Ok(Quantizer {
            cuts: Cuts::PerDimension(cuts),
        })
    }

    /// The same cut points applied to every dimension.
    pub fn shared(cuts: Vec<f64>) -> Result<Self> {
        check_cuts(&cuts, "all dimensions")?;
        Ok(Quantizer {
            cuts: Cuts::Shared(cuts),
        })
    }

    /// Two bins per dimension split at zero.
    pub fn sign() -> Self {
        Quantizer {
            cuts: Cuts::Shared(vec![0.0]),
        }
    }

    /// `bins` equal-width bins over `[lo, hi]` per dimension.
    pub fn uniform(bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 || lo.partial_cmp(&hi) != Some(Ordering::Less) {
            return Err(Error::InvalidValue(
                "uniform quantizer needs bins > 0 and lo < hi".into(),
            ));
        }
        Self::shared(
            (1..bins)
                .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
                .collect(),
        )
    }

    /// Fixed width, if any.
    pub fn dims(&self) -> Option<usize> {
        match &self.cuts {
            Cuts::Shared(_) => None,
            Cuts::PerDimension(c) => Some(c.len()),
        }
    }

    pub fn code(&self, state: &[f64]) -> Result<Vec<u16>> {
        let bin = |c: &[f64], v: f64| c.partition_point(|&e| e <= v) as u16;
        match &self.cuts {
            Cuts::Shared(c) => Ok(state.iter().map(|&v| bin(c, v)).collect()),
            Cuts::PerDimension(cuts) => {
                if state.len() != cuts.len() {
                    return Err(Error::Shape(format!(
                        "state of width {} for a {}-dimensional quantizer",
                        state.len(),
                        cuts.len()
                    )));
                }
                Ok(state.iter().zip(cuts).map(|(&v, c)| bin(c, v)).collect())
            }
        }
    }
}

/// One enumerated input sequence with its class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeExample {
    pub tokens: Vec<u32>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    /// `[I(Y;X), I(Y;T_1), ..., I(Y;T_L)]` over the empirical distribution.
    pub mi: Vec<f64>,
    /// Distinct symbols per entry of `mi`.
    pub alphabet: Vec<usize>,
    /// Every layer is at most `I(Y;X)`; exact since each `T_l` is a function of `X`.
    pub bounded_by_input: bool,
    /// Whole sequence non-increasing; quantization can break this between layers.
    pub monotone: bool,
}

pub const MAX_PROBE_INPUTS: usize = 4096;

fn intern<K: std::hash::Hash + Eq>(table: &mut HashMap<K, usize>, key: K) -> usize {
    let n = table.len();
    *table.entry(key).or_insert(n)
}

fn empirical_mi(symbols: &[usize], labels: &[usize], n_sym: usize, n_lab: usize) -> f64 {
    let mut p = Array2::zeros((n_sym, n_lab));
    let w = 1.0 / symbols.len() as f64;
    for (&s, &y) in symbols.iter().zip(labels) {
        p[[s, y]] += w;
    }
    mutual_information(&JointTable { p })
}

/// Runs every example through the network from a zero state, quantizes each
/// layer's final hidden state and measures information about the label.
pub fn network_mi_probe(
    params: &NetworkParams,
    quantizer: &Quantizer,
    examples: &[ProbeExample],
    symbol_budget: usize,
) -> Result<ProbeReport> {
    let n = examples.len();
    if n == 0 || n > MAX_PROBE_INPUTS {
        return Err(Error::InvalidValue(format!(
            "probe needs 1..={MAX_PROBE_INPUTS} inputs, got {n}"
        )));
    }
    let steps = examples[0].tokens.len();
    if steps == 0 || examples.iter().any(|e| e.tokens.len() != steps) {
        return Err(Error::InvalidValue(
            "probe inputs must share one non-zero length".into(),
        ));
    }
    let vocab = params.vocab();
    if let Some(t) = examples
        .iter()
        .flat_map(|e| &e.tokens)
        .find(|&&t| t as usize >= vocab)
    {
        return Err(Error::InvalidValue(format!(
            "token {t} outside vocabulary of {vocab}"
        )));
    }

    let mut label_ids = HashMap::new();
    let labels: Vec<usize> = examples
        .iter()
        .map(|e| intern(&mut label_ids, e.label))
        .collect();
    let mut input_ids = HashMap::new();
    let inputs: Vec<usize> = examples
        .iter()
        .map(|e| intern(&mut input_ids, e.tokens.clone()))
        .collect();
    let n_lab = label_ids.len();
    let mut mi = vec![empirical_mi(&inputs, &labels, input_ids.len(), n_lab)];
    let mut alphabet = vec![input_ids.len()];

    let d = params.embedding.ncols();
    let mut x = Array2::zeros((steps * n, d));
    for t in 0..steps {
        for (b, e) in examples.iter().enumerate() {
            x.row_mut(t * n + b)
                .assign(&params.embedding.row(e.tokens[t] as usize));
        }
    }
    for (l, layer) in params.layers.iter().enumerate() {
        let h = layer.hidden();
        if quantizer.dims().is_some_and(|d| d != h) {
            return Err(Error::Shape(format!(
                "quantizer covers {:?} dimensions, layer {} has {h}",
                quantizer.dims(),
                l + 1
            )));
        }
        let zeros = Array2::zeros((n, h));
        let trace = lstm_layer_forward(
            layer,
            x.view(),
            zeros.view(),
            zeros.view(),
            &Array2::ones((n, layer.input_size())),
            &Array2::ones((n, h)),
            l + 1,
        )?;
        let last = trace.hidden_at(steps - 1);
        let mut codes = HashMap::new();
        let mut symbols = Vec::with_capacity(n);
        for row in last.axis_iter(Axis(0)) {
            let code = quantizer.code(row.as_slice().expect("row-major"))?;
            symbols.push(intern(&mut codes, code));
            if codes.len() > symbol_budget {
                return Err(Error::AlphabetExplosion {
                    symbols: codes.len(),
                    budget: symbol_budget,
                });
            }
        }
        mi.push(empirical_mi(&symbols, &labels, codes.len(), n_lab));
        alphabet.push(codes.len());
        x = trace.hidden;
    }
    let bounded_by_input = mi[1..].iter().all(|&m| m <= mi[0] + INFO_TOLERANCE);
    let monotone = non_increasing(&mi);
    Ok(ProbeReport {
        mi,
        alphabet,
        bounded_by_input,
        monotone,
    })
}

/// Parity task over `bits`-bit strings as a language-modelling stream.
///
/// Tokens `0` and `1` are bits and `2` is a separator. Each record is
/// `bits` random bits followed by their parity bit and the separator, so
/// predicting the token after the last data bit requires the parity.
#[derive(Debug, Clone)]
pub struct ParityTask {
    pub bits: usize,
}

impl ParityTask {
    pub const VOCAB: usize = 3;
    pub const SEPARATOR: u32 = 2;

    pub fn new(bits: usize) -> Result<Self> {
        if bits == 0 || bits > 12 {
            return Err(Error::InvalidValue(format!(
                "parity task needs 1..=12 bits, got {bits}"
            )));
        }
        Ok(ParityTask { bits })
    }

    fn bits_of(&self, v: usize) -> Vec<u32> {
        (0..self.bits)
            .rev()
            .map(|i| ((v >> i) & 1) as u32)
            .collect()
    }

    /// Every string exactly `repeats` times, shuffled with `seed`.
    pub fn stream(&self, repeats: usize, seed: u64) -> Vec<u32> {
        let mut order: Vec<usize> = (0..1usize << self.bits)
            .flat_map(|v| std::iter::repeat_n(v, repeats))
            .collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut out = Vec::with_capacity(order.len() * (self.bits + 2));
        for v in order {
            out.extend(self.bits_of(v));
            out.push(v.count_ones() % 2);
            out.push(Self::SEPARATOR);
        }
        out
    }

    /// Separator then the bits, labelled with their parity.
    pub fn probe_set(&self) -> Vec<ProbeExample> {
        (0..1usize << self.bits)
            .map(|v| {
                let mut tokens = vec![Self::SEPARATOR];
                tokens.extend(self.bits_of(v));
                ProbeExample {
                    tokens,
                    label: (v.count_ones() % 2) as usize,
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ModelSizes;

    fn joint(rows: &[Vec<f64>]) -> JointTable {
        JointTable::from_rows(rows).unwrap()
    }

    #[test]
    fn independent_and_correlated() {
        let ind = joint(&[vec![0.25, 0.25], vec![0.25, 0.25]]);
        assert_eq!(mutual_information(&ind), 0.0);
        let cor = joint(&[vec![0.5, 0.0], vec![0.0, 0.5]]);
        assert!((mutual_information(&cor) - 1.0).abs() < 1e-15);
        assert_eq!(conditional_entropy(&cor), 0.0);
    }

    #[test]
    fn noisy_symmetric_joint() {
        let j = joint(&[vec![0.4, 0.1], vec![0.1, 0.4]]);
        // 2 * 0.4 log2(1.6) + 2 * 0.1 log2(0.4), each cell against p(a)p(b) = 0.25.
        let direct = 0.8 * 1.6f64.log2() + 0.2 * 0.4f64.log2();
        assert!((mutual_information(&j) - direct).abs() < 1e-15);
        assert!((mutual_information(&j) - 0.2781).abs() < 5e-5);
    }

    #[test]
    fn entropy_and_kl() {
        assert_eq!(entropy(&[0.5, 0.5]).unwrap(), 1.0);
        assert_eq!(entropy(&[1.0, 0.0]).unwrap(), 0.0);
        assert!(entropy(&[0.5, 0.6]).is_err());
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(
            kl_divergence(&[0.5, 0.5], &[1.0, 0.0]).unwrap(),
            f64::INFINITY
        );
        assert!(kl_divergence(&[0.5, 0.5], &[0.9, 0.1]).unwrap() > 0.0);
    }

    #[test]
    fn table_validation() {
        assert!(JointTable::from_rows(&[vec![0.5, 0.6]]).is_err());
        assert!(JointTable::from_rows(&[vec![-0.1, 1.1]]).is_err());
        assert!(Channel::from_rows(&[vec![0.5, 0.4]]).is_err());
    }

    #[test]
    fn optimum_and_uniform_model() {
        let j = joint(&[vec![0.3, 0.1], vec![0.2, 0.4]]);
        let id = Channel::identity(2);
        let best = induced_posterior(&j, &id).unwrap();
        let d = ce_decomposition(&j, &best, &id).unwrap();
        assert!(d.kl_term.abs() < 1e-15);
        assert!((d.cross_entropy - conditional_entropy(&j)).abs() < 1e-15);

        let uniform = Channel::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let d = ce_decomposition(&j, &uniform, &id).unwrap();
        assert!((d.cross_entropy - 1.0).abs() < 1e-15);
        assert!(d.holds());
    }

    #[test]
    fn zero_model_probability_is_infinite() {
        let j = joint(&[vec![0.5, 0.5]]);
        let m = Channel::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let d = ce_decomposition(&j, &m, &Channel::identity(1)).unwrap();
        assert!(d.cross_entropy.is_infinite() && d.kl_term.is_infinite());
        assert!(d.holds());
    }

    #[test]
    fn chains() {
        let j = joint(&[vec![0.3, 0.1], vec![0.05, 0.25], vec![0.2, 0.1]]);
        let perm = Channel::deterministic(&[2, 0, 1], 3).unwrap();
        let r = dpi_chain_check(&j, &[perm.clone(), perm.clone()]).unwrap();
        assert!(r.mi.iter().all(|m| (m - r.mi[0]).abs() < 1e-15));
        let collapse = Channel::deterministic(&[0, 0, 0], 1).unwrap();
        let r = dpi_chain_check(&j, &[perm.clone(), collapse]).unwrap();
        assert_eq!(*r.mi.last().unwrap(), 0.0);
        assert!(r.monotone);
        match compose(&[perm, Channel::identity(2)]) {
            Err(Error::ChainLink { link, .. }) => assert_eq!(link, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sufficiency_cases() {
        let j = joint(&[vec![0.4, 0.1], vec![0.1, 0.4]]);
        let swap = Channel::deterministic(&[1, 0], 2).unwrap();
        let r = sufficiency_check(&j, &[swap]).unwrap();
        assert!(r.condition_holds && r.consistent());
        assert!(r.gaps.iter().all(|g| g.abs() < 1e-15));

        let merge = Channel::deterministic(&[0, 0], 1).unwrap();
        let r = sufficiency_check(&j, std::slice::from_ref(&merge)).unwrap();
        assert!(!r.condition_holds);
        assert!(r.gaps[0] > 0.1);

        // x0 and x1 share p(y|x); merging them loses nothing.
        let k = joint(&[vec![0.15, 0.1], vec![0.3, 0.2], vec![0.05, 0.2]]);
        let merge01 = Channel::deterministic(&[0, 0, 1], 2).unwrap();
        let r = sufficiency_check(&k, &[merge01]).unwrap();
        assert!(r.condition_holds);
        assert!(r.gaps[0].abs() <= 1e-12);
    }

    #[test]
    fn fixture_parsing() {
        let m = parse_matrix("# joint\n2 2\n0.25 0.25\n0.25 0.25\n", "x").unwrap();
        assert_eq!(m.dim(), (2, 2));
        match parse_matrix("2 2\n0.5 0.5\n0.5 oops\n", "f.txt") {
            Err(Error::Parse { line, path, .. }) => assert_eq!((line, path.as_str()), (3, "f.txt")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_matrix("2 2\n1 0\n", "f"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(parse_matrix("2 2 2\n", "f").is_err());
    }

    #[test]
    fn corrupted_channel_fixture_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "2 2\n0.5 0.5\n\n0.7 0.7\n").unwrap();
        match Channel::from_fixture(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, "1 2\n1.5 -0.5\n").unwrap();
        assert!(matches!(
            JointTable::from_fixture(&path),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn quantizer_codes() {
        let q = Quantizer::sign();
        assert_eq!(q.code(&[-0.5, 0.0, 0.2]).unwrap(), vec![0, 1, 1]);
        let u = Quantizer::uniform(4, -1.0, 1.0).unwrap();
        assert_eq!(u.code(&[-1.0]).unwrap(), vec![0]);
        assert_eq!(u.code(&[0.99]).unwrap(), vec![3]);
        assert!(Quantizer::shared(vec![0.5, 0.5]).is_err());
        let p = Quantizer::per_dimension(vec![vec![0.0], vec![-0.5, 0.5]]).unwrap();
        assert_eq!(p.code(&[1.0, 0.0]).unwrap(), vec![1, 1]);
        assert!(p.code(&[0.0]).is_err());
    }

    fn parity_net(seed: u64, zero: bool) -> NetworkParams {
        let sizes = ModelSizes {
            vocab: 3,
            embedding: 4,
            hidden: vec![4, 4],
            tied: false,
        };
        if zero {
            NetworkParams::zeros(&sizes).unwrap()
        } else {
            NetworkParams::init(&sizes, seed, 0.8).unwrap()
        }
    }

    #[test]
    fn zero_network_carries_no_information() {
        let task = ParityTask::new(4).unwrap();
        let r = network_mi_probe(
            &parity_net(0, true),
            &Quantizer::sign(),
            &task.probe_set(),
            64,
        )
        .unwrap();
        assert_eq!(r.mi[0], 1.0);
        assert_eq!(&r.mi[1..], &[0.0, 0.0]);
        assert_eq!(&r.alphabet[1..], &[1, 1]);
    }

    #[test]
    fn single_bin_quantizer_gives_zero() {
        let task = ParityTask::new(4).unwrap();
        let q = Quantizer::shared(vec![]).unwrap();
        let r = network_mi_probe(&parity_net(5, false), &q, &task.probe_set(), 64).unwrap();
        assert_eq!(&r.mi[1..], &[0.0, 0.0]);
    }

    #[test]
    fn probe_bounded_and_budgeted() {
        let task = ParityTask::new(4).unwrap();
        let r = network_mi_probe(
            &parity_net(5, false),
            &Quantizer::sign(),
            &task.probe_set(),
            64,
        )
        .unwrap();
        assert!(r.bounded_by_input);
        assert!(matches!(
            network_mi_probe(
                &parity_net(5, false),
                &Quantizer::sign(),
                &task.probe_set(),
                1
            ),
            Err(Error::AlphabetExplosion { .. })
        ));
    }

    #[test]
    fn parity_stream_layout() {
        let task = ParityTask::new(2).unwrap();
        let s = task.stream(3, 1);
        assert_eq!(s.len(), 4 * 3 * 4);
        for rec in s.chunks(4) {
            assert_eq!((rec[0] + rec[1]) % 2, rec[2]);
            assert_eq!(rec[3], ParityTask::SEPARATOR);
        }
        let probes = task.probe_set();
        assert_eq!(probes[3].tokens, vec![2, 1, 1]);
        assert_eq!(probes[3].label, 0);
    }
}
