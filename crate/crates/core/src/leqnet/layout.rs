use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A named, shaped slice of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Parameter manifest: blocks laid out back to back in declaration order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    blocks: Vec<Block>,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a block and returns its offset.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let offset = self.len();
        self.blocks.push(Block {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
        });
        offset
    }

    pub fn len(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn get(&self, name: &str) -> Result<&Block> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Shape(format!("no parameter block named {name}")))
    }

    /// Name of the block holding flat index `i`.
    pub fn block_of(&self, i: usize) -> Option<&str> {
        self.blocks.iter().find(|b| b.range().contains(&i)).map(|b| b.name.as_str())
    }

    /// First block with a non-finite entry in `values`.
    pub fn first_non_finite(&self, values: &[f64]) -> Option<&str> {
        self.blocks
            .iter()
            .find(|b| values[b.range()].iter().any(|v| !v.is_finite()))
            .map(|b| b.name.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_are_contiguous() {
        let mut l = Layout::new();
        assert_eq!(l.push("a", &[2, 3]), 0);
        assert_eq!(l.push("b", &[4]), 6);
        assert_eq!(l.len(), 10);
        assert_eq!(l.block_of(7), Some("b"));
        assert_eq!(l.get("a").unwrap().range(), 0..6);
        let mut v = vec![0.0; 10];
        v[8] = f64::NAN;
        assert_eq!(l.first_non_finite(&v), Some("b"));
    }
}
