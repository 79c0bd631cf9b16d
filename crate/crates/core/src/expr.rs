//! Transformation programs as postfix token sequences.
//!
//! A program is a list of compositions (expression trees over original
//! features). Its postfix form wraps the postorder traversals of the trees,
//! separated by `<SEP>`, in `<SOS>` … `<EOS>`:
//!
//! ```text
//! [(f0 + f1) * f2, log(f3)]  →  <SOS> f0 f1 plus f2 multiply <SEP> f3 log <EOS>
//! ```
//!
//! Decoders may emit arbitrary token soup, so [`validate`] and [`evaluate`]
//! classify malformed input instead of failing on it.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::opset::{apply_binary, apply_unary, Mode, Operation};
use crate::record::TransformationRecord;

/// The derived order matches the vocabulary code order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    Sos,
    Eos,
    Sep,
    Feature(usize),
    Op(Operation),
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Sos => f.write_str("<SOS>"),
            Token::Eos => f.write_str("<EOS>"),
            Token::Sep => f.write_str("<SEP>"),
            Token::Feature(i) => write!(f, "f{i}"),
            Token::Op(op) => f.write_str(op.name()),
        }
    }
}

impl FromStr for Token {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "<SOS>" => Ok(Token::Sos),
            "<EOS>" => Ok(Token::Eos),
            "<SEP>" => Ok(Token::Sep),
            _ => {
                if let Some(digits) = s.strip_prefix('f') {
                    if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                        return digits
                            .parse()
                            .map(Token::Feature)
                            .map_err(|_| Error::Input(format!("bad feature token `{s}`")));
                    }
                }
                s.parse().map(Token::Op).map_err(|_| Error::Input(format!("unknown token `{s}`")))
            }
        }
    }
}

/// Token ↔ integer code mapping for a dataset with `n_features` original
/// columns: `<SOS>`=0, `<EOS>`=1, `<SEP>`=2, features 3.., then operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub n_features: usize,
}

pub const SOS_CODE: u32 = 0;
pub const EOS_CODE: u32 = 1;
pub const SEP_CODE: u32 = 2;

impl Vocabulary {
    pub fn new(n_features: usize) -> Self {
        Self { n_features }
    }

    /// |O| + |X| + 3.
    pub fn size(&self) -> usize {
        Operation::COUNT + self.n_features + 3
    }

    pub fn encode(&self, t: Token) -> Result<u32> {
        Ok(match t {
            Token::Sos => SOS_CODE,
            Token::Eos => EOS_CODE,
            Token::Sep => SEP_CODE,
            Token::Feature(i) if i < self.n_features => 3 + i as u32,
            Token::Feature(i) => {
                return Err(Error::Input(format!(
                    "feature f{i} outside a vocabulary of {} features",
                    self.n_features
                )))
            }
            Token::Op(op) => (3 + self.n_features + op.id()) as u32,
        })
    }

    pub fn decode(&self, code: u32) -> Result<Token> {
        let c = code as usize;
        match c {
            0 => Ok(Token::Sos),
            1 => Ok(Token::Eos),
            2 => Ok(Token::Sep),
            _ if c < 3 + self.n_features => Ok(Token::Feature(c - 3)),
            _ => Operation::from_id(c - 3 - self.n_features)
                .map(Token::Op)
                .ok_or_else(|| Error::Input(format!("unknown token code {code}"))),
        }
    }

    pub fn tokens(&self) -> impl Iterator<Item = Token> + '_ {
        (0..self.size() as u32).map(|c| self.decode(c).expect("in range"))
    }
}

/// A token sequence. Programs built by [`infix_to_postfix`] are well formed;
/// sequences produced by a decoder may not be, which [`validate`] reports.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PostfixProgram {
    tokens: Vec<Token>,
}

impl PostfixProgram {
    pub fn from_tokens(tokens: Vec<Token>) -> Self {
        Self { tokens }
    }

    /// Joins segments with `<SEP>` and wraps them in `<SOS>`/`<EOS>`.
    pub fn from_segments<S: AsRef<[Token]>>(segments: &[S]) -> Self {
        let mut tokens = vec![Token::Sos];
        for (i, s) in segments.iter().enumerate() {
            if i > 0 {
                tokens.push(Token::Sep);
            }
            tokens.extend_from_slice(s.as_ref());
        }
        tokens.push(Token::Eos);
        Self { tokens }
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Segment token lists between `<SOS>` and the first `<EOS>`, split on
    /// `<SEP>`. A leading `<SOS>` and everything from the first `<EOS>` on
    /// are not part of any segment.
    pub fn segments(&self) -> Vec<&[Token]> {
        split_segments(&self.tokens)
    }

    /// `<SOS>`/`<EOS>` exactly once at the ends and every segment a
    /// well-formed postfix expression.
    pub fn is_well_formed(&self) -> bool {
        let t = &self.tokens;
        t.len() >= 3
            && t[0] == Token::Sos
            && t[t.len() - 1] == Token::Eos
            && t.iter().filter(|&&x| x == Token::Sos || x == Token::Eos).count() == 2
            && validate(self).all_grammar_ok()
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.tokens
            .iter()
            .filter_map(|t| match t {
                Token::Feature(i) => Some(*i),
                _ => None,
            })
            .max()
    }
}

impl fmt::Display for PostfixProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl FromStr for PostfixProgram {
    type Err = Error;

    /// Whitespace-separated token names, e.g. `<SOS> f0 f1 plus <EOS>`.
    fn from_str(s: &str) -> Result<Self> {
        let tokens = s
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<Vec<Token>>>()?;
        if tokens.is_empty() {
            return Err(Error::Input("empty program".into()));
        }
        Ok(Self { tokens })
    }
}

/// See [`PostfixProgram::segments`].
pub fn split_segments(tokens: &[Token]) -> Vec<&[Token]> {
    let start = usize::from(tokens.first() == Some(&Token::Sos));
    let end = tokens[start..]
        .iter()
        .position(|&t| t == Token::Eos)
        .map_or(tokens.len(), |p| p + start);
    tokens[start..end].split(|&t| t == Token::Sep).collect()
}

/// One composition: an expression tree over original feature indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Feature(usize),
    Unary(Operation, Box<Expr>),
    Binary(Operation, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn feature(i: usize) -> Self {
        Expr::Feature(i)
    }

    pub fn unary(op: Operation, arg: Expr) -> Result<Self> {
        if op.arity() != 1 {
            return Err(Error::Input(format!("{op} is not unary")));
        }
        Ok(Expr::Unary(op, Box::new(arg)))
    }

    pub fn binary(op: Operation, lhs: Expr, rhs: Expr) -> Result<Self> {
        if op.arity() != 2 {
            return Err(Error::Input(format!("{op} is not binary")));
        }
        Ok(Expr::Binary(op, Box::new(lhs), Box::new(rhs)))
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Feature(_) => 0,
            Expr::Unary(_, a) => 1 + a.depth(),
            Expr::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    fn arity_ok(&self) -> bool {
        match self {
            Expr::Feature(_) => true,
            Expr::Unary(op, a) => op.arity() == 1 && a.arity_ok(),
            Expr::Binary(op, a, b) => op.arity() == 2 && a.arity_ok() && b.arity_ok(),
        }
    }

    /// Fully bracketed infix form: `( a op b )` for binary nodes and
    /// `( op ( a ) )` for unary ones.
    fn bracketed(&self, out: &mut Vec<InfixSymbol>) {
        match self {
            Expr::Feature(i) => out.push(InfixSymbol::Token(Token::Feature(*i))),
            Expr::Unary(op, a) => {
                out.push(InfixSymbol::Open);
                out.push(InfixSymbol::Token(Token::Op(*op)));
                out.push(InfixSymbol::Open);
                a.bracketed(out);
                out.push(InfixSymbol::Close);
                out.push(InfixSymbol::Close);
            }
            Expr::Binary(op, a, b) => {
                out.push(InfixSymbol::Open);
                a.bracketed(out);
                out.push(InfixSymbol::Token(Token::Op(*op)));
                b.bracketed(out);
                out.push(InfixSymbol::Close);
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Feature(i) => write!(f, "f{i}"),
            Expr::Unary(op, a) => write!(f, "{op}({a})"),
            Expr::Binary(op, a, b) => write!(f, "{op}({a}, {b})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum InfixSymbol {
    Open,
    Close,
    Token(Token),
}

/// Two-stack bracketed-infix → postfix conversion of one composition.
fn convert_composition(infix: &[InfixSymbol]) -> Vec<Token> {
    let mut ops: Vec<InfixSymbol> = Vec::new();
    let mut output: Vec<Token> = Vec::new();
    for &sym in infix {
        match sym {
            InfixSymbol::Open => ops.push(sym),
            InfixSymbol::Close => {
                while let Some(top) = ops.pop() {
                    match top {
                        InfixSymbol::Open => break,
                        InfixSymbol::Token(t) => output.push(t),
                        InfixSymbol::Close => unreachable!("never stacked"),
                    }
                }
            }
            InfixSymbol::Token(t @ Token::Op(_)) => {
                while let Some(&InfixSymbol::Token(top)) = ops.last() {
                    output.push(top);
                    ops.pop();
                }
                ops.push(InfixSymbol::Token(t));
            }
            InfixSymbol::Token(t) => output.push(t),
        }
    }
    while let Some(InfixSymbol::Token(t)) = ops.pop() {
        output.push(t);
    }
    output
}

/// Converts a list of compositions to its postfix program.
///
/// # Panics
///
/// If a node's arity does not match its operation, which the [`Expr`]
/// constructors rule out.
pub fn infix_to_postfix(program: &[Expr]) -> PostfixProgram {
    let segments: Vec<Vec<Token>> = program
        .iter()
        .map(|tree| {
            assert!(tree.arity_ok(), "arity mismatch in {tree}");
            let mut infix = Vec::new();
            tree.bracketed(&mut infix);
            convert_composition(&infix)
        })
        .collect();
    PostfixProgram::from_segments(&segments)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentStatus {
    pub grammar_ok: bool,
    /// Unset until the segment has been evaluated.
    pub finite_ok: Option<bool>,
}

impl SegmentStatus {
    pub fn is_valid(&self) -> bool {
        self.grammar_ok && self.finite_ok != Some(false)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub segments: Vec<SegmentStatus>,
}

impl ValidityReport {
    pub fn total_segment_count(&self) -> usize {
        self.segments.len()
    }

    /// Segments passing every check performed so far.
    pub fn valid_segment_count(&self) -> usize {
        self.segments.iter().filter(|s| s.is_valid()).count()
    }

    pub fn grammar_ok_count(&self) -> usize {
        self.segments.iter().filter(|s| s.grammar_ok).count()
    }

    pub fn all_grammar_ok(&self) -> bool {
        self.segments.iter().all(|s| s.grammar_ok)
    }

    pub fn all_valid(&self) -> bool {
        !self.segments.is_empty() && self.segments.iter().all(SegmentStatus::is_valid)
    }
}

/// Stack-depth scan: features push one; unary ops pop one and push one;
/// binary ops pop two and push one. Well formed iff the depth never
/// underflows and ends at exactly one. Special tokens inside a segment make
/// it ill formed.
pub fn segment_grammar_ok(segment: &[Token]) -> bool {
    let mut depth: usize = 0;
    for t in segment {
        match t {
            Token::Feature(_) => depth += 1,
            Token::Op(op) => {
                if depth < op.arity() {
                    return false;
                }
                depth -= op.arity() - 1;
            }
            Token::Sos | Token::Eos | Token::Sep => return false,
        }
    }
    depth == 1
}

/// Grammar check of every segment. Total on arbitrary token lists.
pub fn validate(p: &PostfixProgram) -> ValidityReport {
    ValidityReport {
        segments: p
            .segments()
            .into_iter()
            .map(|s| SegmentStatus {
                grammar_ok: segment_grammar_ok(s),
                finite_ok: None,
            })
            .collect(),
    }
}

/// Output of [`evaluate`].
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// One column per valid segment, in segment order.
    pub columns: Vec<Vec<f64>>,
    /// Index of the segment that produced each column.
    pub kept: Vec<usize>,
    pub report: ValidityReport,
}

impl Evaluation {
    /// The sub-program made of the kept segments only.
    pub fn valid_program(&self, p: &PostfixProgram) -> PostfixProgram {
        let segs = p.segments();
        let kept: Vec<&[Token]> = self.kept.iter().map(|&i| segs[i]).collect();
        PostfixProgram::from_segments(&kept)
    }
}

/// Runs each grammatical segment through the stack machine against the
/// columns of `x`. Segments producing any non-finite entry (including
/// intermediates) under `mode` are marked `finite_ok = false` and skipped.
pub fn evaluate(p: &PostfixProgram, x: &FeatureMatrix, mode: Mode) -> Result<Evaluation> {
    if let Some(max) = p.max_feature() {
        if max >= x.n_cols() {
            return Err(Error::Input(format!(
                "program references f{max} but the data has {} columns",
                x.n_cols()
            )));
        }
    }
    let mut report = validate(p);
    let mut columns = Vec::new();
    let mut kept = Vec::new();
    for (i, seg) in p.segments().into_iter().enumerate() {
        if !report.segments[i].grammar_ok {
            continue;
        }
        let col = run_segment(seg, x, mode)?;
        let finite = col.is_some();
        report.segments[i].finite_ok = Some(finite);
        if let Some(c) = col {
            columns.push(c);
            kept.push(i);
        }
    }
    Ok(Evaluation {
        columns,
        kept,
        report,
    })
}

/// The original columns of `x` followed by one column per valid segment.
pub fn feature_space(p: &PostfixProgram, x: &FeatureMatrix, mode: Mode) -> Result<(FeatureMatrix, Evaluation)> {
    let eval = evaluate(p, x, mode)?;
    let mut space = x.clone();
    for c in &eval.columns {
        space.push_column(c.clone())?;
    }
    Ok((space, eval))
}

/// `None` when any produced value is non-finite.
fn run_segment(seg: &[Token], x: &FeatureMatrix, mode: Mode) -> Result<Option<Vec<f64>>> {
    let mut stack: Vec<Vec<f64>> = Vec::new();
    for t in seg {
        match *t {
            Token::Feature(i) => stack.push(x.column(i).to_vec()),
            Token::Op(op) if op.is_binary() => {
                let b = stack.pop().ok_or_else(underflow)?;
                let a = stack.pop().ok_or_else(underflow)?;
                let out = apply_binary(op, &a, &b, mode)?;
                if out.iter().any(|v| !v.is_finite()) {
                    return Ok(None);
                }
                stack.push(out);
            }
            Token::Op(op) => {
                let a = stack.pop().ok_or_else(underflow)?;
                let out = apply_unary(op, &a, mode);
                if out.iter().any(|v| !v.is_finite()) {
                    return Ok(None);
                }
                stack.push(out);
            }
            _ => return Err(Error::Invariant("special token inside a checked segment".into())),
        }
    }
    let col = stack.pop().ok_or_else(underflow)?;
    if !stack.is_empty() || col.iter().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    Ok(Some(col))
}

fn underflow() -> Error {
    Error::Invariant("stack underflow in a checked segment".into())
}

/// `k` copies of the record with its segments randomly permuted, all
/// sharing the original score.
pub fn augment(r: &TransformationRecord, k: usize, rng: &mut impl Rng) -> Vec<TransformationRecord> {
    let segments: Vec<Vec<Token>> = r.program.segments().into_iter().map(<[Token]>::to_vec).collect();
    (0..k)
        .map(|_| {
            let mut shuffled = segments.clone();
            shuffled.shuffle(rng);
            TransformationRecord {
                program: PostfixProgram::from_segments(&shuffled),
                score: r.score,
                provenance: crate::record::Provenance::Augmented,
            }
        })
        .collect()
}

pub fn encode_tokens(p: &PostfixProgram, vocab: &Vocabulary) -> Result<Vec<u32>> {
    p.tokens().iter().map(|&t| vocab.encode(t)).collect()
}

pub fn decode_tokens(codes: &[u32], vocab: &Vocabulary) -> Result<PostfixProgram> {
    codes
        .iter()
        .map(|&c| vocab.decode(c))
        .collect::<Result<Vec<_>>>()
        .map(PostfixProgram::from_tokens)
}
