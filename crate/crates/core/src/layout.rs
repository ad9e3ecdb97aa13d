//! Architecture layout strings.
//!
//! ```text
//! layout := "L" n "H" d
//!         | "B" block ("-" block)* "H" d ("D" k)?
//! block  := n | n "x" m
//! ```
//!
//! `n x m` is a block of `n` distinct parameter sets, each applied `m` times
//! in a row. The grammar is case-sensitive and admits no whitespace.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{FunnelError, Result};

pub const HEAD_DIM: usize = 64;
pub const FFN_MULTIPLIER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub unique_layers: usize,
    pub repeat: usize,
}

impl BlockSpec {
    pub fn new(unique_layers: usize, repeat: usize) -> Self {
        BlockSpec {
            unique_layers,
            repeat,
        }
    }

    pub fn total_layers(&self) -> usize {
        self.unique_layers * self.repeat
    }

    /// Parameter set used by layer `t` (0-based) of this block: consecutive
    /// layers share a set.
    pub fn param_set(&self, t: usize) -> usize {
        t / self.repeat
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutSpec {
    pub blocks: Vec<BlockSpec>,
    pub hidden: usize,
    pub decoder_layers: usize,
    head_dim: usize,
    /// Written in the `L<n>H<d>` form.
    plain: bool,
}

impl LayoutSpec {
    pub fn new(blocks: Vec<BlockSpec>, hidden: usize, decoder_layers: usize) -> Result<Self> {
        let spec = LayoutSpec {
            blocks,
            hidden,
            decoder_layers,
            head_dim: HEAD_DIM,
            plain: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Standard transformer with `layers` full-length layers.
    pub fn plain(layers: usize, hidden: usize) -> Result<Self> {
        let mut spec = Self::new(vec![BlockSpec::new(layers, 1)], hidden, 0)?;
        spec.plain = true;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(FunnelError::Validation("layout needs at least one block".into()));
        }
        if self
            .blocks
            .iter()
            .any(|b| b.unique_layers == 0 || b.repeat == 0)
        {
            return Err(FunnelError::Validation("block sizes must be positive".into()));
        }
        if self.hidden == 0 || !self.hidden.is_multiple_of(HEAD_DIM) {
            return Err(FunnelError::Validation(format!(
                "hidden size {} is not a positive multiple of {HEAD_DIM}",
                self.hidden
            )));
        }
        Ok(())
    }

    /// Same block structure at hidden size `hidden * multiplier`, used for
    /// the ELECTRA generator. Below 64 the model keeps a single head whose
    /// width is the whole hidden size.
    pub fn scaled(&self, multiplier: f64) -> Result<Self> {
        let hidden = (self.hidden as f64 * multiplier).round() as usize;
        if hidden == 0 {
            return Err(FunnelError::Validation(format!(
                "multiplier {multiplier} leaves no hidden units"
            )));
        }
        let head_dim = if hidden >= HEAD_DIM {
            if !hidden.is_multiple_of(HEAD_DIM) {
                return Err(FunnelError::Validation(format!(
                    "scaled hidden size {hidden} is not a multiple of {HEAD_DIM}"
                )));
            }
            HEAD_DIM
        } else {
            hidden
        };
        Ok(LayoutSpec {
            hidden,
            head_dim,
            ..self.clone()
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn heads(&self) -> usize {
        self.hidden / self.head_dim
    }

    pub fn ffn_inner(&self) -> usize {
        FFN_MULTIPLIER * self.hidden
    }

    pub fn embed_dim(&self) -> usize {
        self.hidden
    }

    pub fn is_plain(&self) -> bool {
        self.plain
    }

    pub fn total_layers(&self) -> usize {
        self.blocks.iter().map(BlockSpec::total_layers).sum()
    }

    pub fn unique_layers(&self) -> usize {
        self.blocks.iter().map(|b| b.unique_layers).sum()
    }

    /// Upsampling factor between the last block and full length.
    pub fn upsample_rate(&self) -> usize {
        1 << (self.num_blocks() - 1)
    }

    /// Copy without the decoder suffix.
    pub fn encoder_only(&self) -> Self {
        LayoutSpec {
            decoder_layers: 0,
            ..self.clone()
        }
    }
}

pub fn parse_layout(s: &str) -> Result<LayoutSpec> {
    Parser { src: s.as_bytes(), pos: 0 }.layout()
}

pub fn format_layout(spec: &LayoutSpec) -> String {
    spec.to_string()
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(FunnelError::Parse {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        match self.peek() {
            Some(got) if got == c => {
                self.pos += 1;
                Ok(())
            }
            Some(got) => self.err(format!("expected '{}', found '{}'", c as char, got as char)),
            None => self.err(format!("expected '{}', found end of input", c as char)),
        }
    }

    fn number(&mut self) -> Result<usize> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if start == self.pos {
            return match self.peek() {
                Some(c) => self.err(format!("expected a number, found '{}'", c as char)),
                None => self.err("expected a number, found end of input"),
            };
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
        match text.parse::<usize>() {
            Ok(0) => {
                self.pos = start;
                self.err("number must be positive")
            }
            Ok(n) => Ok(n),
            Err(_) => {
                self.pos = start;
                self.err("number too large")
            }
        }
    }

    fn layout(mut self) -> Result<LayoutSpec> {
        let spec = match self.peek() {
            Some(b'L') => {
                self.pos += 1;
                let layers = self.number()?;
                self.expect(b'H')?;
                let hidden = self.number()?;
                self.end()?;
                LayoutSpec::plain(layers, hidden)?
            }
            Some(b'B') => {
                self.pos += 1;
                let mut blocks = vec![self.block()?];
                while self.peek() == Some(b'-') {
                    self.pos += 1;
                    blocks.push(self.block()?);
                }
                self.expect(b'H')?;
                let hidden = self.number()?;
                let decoder = if self.peek() == Some(b'D') {
                    self.pos += 1;
                    self.number()?
                } else {
                    0
                };
                self.end()?;
                LayoutSpec::new(blocks, hidden, decoder)?
            }
            Some(c) => return self.err(format!("layout must start with 'L' or 'B', found '{}'", c as char)),
            None => return self.err("empty layout"),
        };
        Ok(spec)
    }

    fn block(&mut self) -> Result<BlockSpec> {
        let n = self.number()?;
        let m = if self.peek() == Some(b'x') {
            self.pos += 1;
            self.number()?
        } else {
            1
        };
        Ok(BlockSpec::new(n, m))
    }

    fn end(&self) -> Result<()> {
        match self.peek() {
            None => Ok(()),
            Some(c) => self.err(format!("unexpected trailing '{}'", c as char)),
        }
    }
}

impl fmt::Display for LayoutSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.plain {
            return write!(f, "L{}H{}", self.blocks[0].unique_layers, self.hidden);
        }
        f.write_str("B")?;
        for (i, b) in self.blocks.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{}", b.unique_layers)?;
            if b.repeat > 1 {
                write!(f, "x{}", b.repeat)?;
            }
        }
        write!(f, "H{}", self.hidden)?;
        if self.decoder_layers > 0 {
            write!(f, "D{}", self.decoder_layers)?;
        }
        Ok(())
    }
}

impl FromStr for LayoutSpec {
    type Err = FunnelError;

    fn from_str(s: &str) -> Result<Self> {
        parse_layout(s)
    }
}

impl Serialize for LayoutSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for LayoutSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_layout(&s).map_err(serde::de::Error::custom)
    }
}
