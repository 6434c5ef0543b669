use rand::Rng;

use crate::error::{Error, Result};

/// A named rectangular slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter storage with a gradient buffer of identical layout.
///
/// `version` increments on every mutation of `values` made through this
/// type; tapes remember the version they were recorded at.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
    pub blocks: Vec<Block>,
    version: u64,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            grads: Vec::new(),
            blocks: Vec::new(),
            version: 0,
        }
    }

    /// Append a zero-initialised block and return its index.
    pub fn add_block(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        let offset = self.values.len();
        self.values.resize(offset + rows * cols, 0.0);
        self.grads.resize(offset + rows * cols, 0.0);
        self.blocks.push(Block {
            name: name.into(),
            offset,
            rows,
            cols,
        });
        self.blocks.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn bump(&mut self) {
        self.version += 1;
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.values[self.blocks[i].range()]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        self.version += 1;
        let r = self.blocks[i].range();
        &mut self.values[r]
    }

    pub fn grad(&self, i: usize) -> &[f64] {
        &self.grads[self.blocks[i].range()]
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.values
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn set_value(&mut self, idx: usize, v: f64) {
        self.version += 1;
        self.values[idx] = v;
    }

    /// Name of the block holding flat index `idx`.
    pub fn block_of(&self, idx: usize) -> Option<&Block> {
        self.blocks.iter().find(|b| b.range().contains(&idx))
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Uniform(-a, a) with a = scale * sqrt(3 / fan_in), fan_in = cols.
    pub fn init_fan_in<R: Rng>(&mut self, i: usize, scale: f64, rng: &mut R) {
        let cols = self.blocks[i].cols.max(1);
        let a = scale * (3.0 / cols as f64).sqrt();
        for v in self.block_mut(i) {
            *v = rng.random_range(-a..=a);
        }
    }

    pub fn same_layout(&self, other: &ParamSet) -> Result<()> {
        if self.blocks != other.blocks {
            return Err(Error::ShapeMismatch {
                expected: describe(&self.blocks),
                found: describe(&other.blocks),
            });
        }
        Ok(())
    }
}

pub fn describe(blocks: &[Block]) -> String {
    blocks
        .iter()
        .map(|b| format!("{}[{}x{}]", b.name, b.rows, b.cols))
        .collect::<Vec<_>>()
        .join(",")
}

/// Remembers which parameter version a forward pass saw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TapeStamp(pub u64);

impl TapeStamp {
    pub fn check(&self, params: &ParamSet) -> Result<()> {
        if self.0 != params.version() {
            return Err(Error::StaleTape {
                recorded: self.0,
                current: params.version(),
            });
        }
        Ok(())
    }
}
