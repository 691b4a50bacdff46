use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of classes: background plus four lane labels.
pub const NUM_CLASSES: usize = 5;

/// `H×W` per-pixel class indices; `0` is background.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ClassMask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Dimension(format!(
                "mask {width}×{height} with {} values",
                data.len()
            )));
        }
        Ok(ClassMask {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        ClassMask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn max_class(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// `1` where the class is nonzero.
    pub fn binary(&self) -> ClassMask {
        ClassMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| u8::from(v > 0)).collect(),
        }
    }

    /// Mirror left-right, swapping lane labels 1↔4 and 2↔3 so the
    /// ego-relative meaning survives.
    pub fn flip_lr(&self) -> ClassMask {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(x, y);
                let swapped = if v == 0 { 0 } else { 5 - v };
                out.set(self.width - 1 - x, y, swapped);
            }
        }
        out
    }
}
