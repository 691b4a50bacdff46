//! Naive transcription of the slice recurrence, indexing the `C×H×W` map
//! directly. Shares no code with the slice-major fast path.

use super::{Direction, Family, SliceKernel};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn slice_conv_reference(x: &Tensor, kernel: &SliceKernel, dir: Direction) -> Result<Tensor> {
    if kernel.family() != dir.family() {
        return Err(Error::Config(format!("{dir}: kernel family mismatch")));
    }
    let (c, h, w) = x.chw()?;
    let kt = kernel.weights();
    if kt.shape()[0] != c {
        return Err(Error::Dimension("channel mismatch".into()));
    }
    let k = kt.shape()[2];
    let half = (k as isize - 1) / 2;
    let kw = |co: usize, ci: usize, j: usize| kt.data()[(co * c + ci) * k + j];
    let mut out: Vec<f64> = x.data().to_vec();
    let at = |c_: usize, r: usize, col: usize| (c_ * h + r) * w + col;

    match dir {
        Direction::TopDown | Direction::BottomUp | Direction::MainDown | Direction::MainUp => {
            let rows: Vec<usize> = match dir {
                Direction::TopDown | Direction::MainDown => (0..h).collect(),
                _ => (0..h).rev().collect(),
            };
            let shift: isize = match dir {
                Direction::MainDown => 1,
                Direction::MainUp => -1,
                _ => 0,
            };
            for step in 1..rows.len() {
                let (prev, row) = (rows[step - 1], rows[step]);
                let mut msg = vec![0.0; c * w];
                for co in 0..c {
                    for col in 0..w {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for j in 0..k {
                                let src = col as isize + j as isize - half;
                                if src >= 0 && (src as usize) < w {
                                    acc += kw(co, ci, j) * out[at(ci, prev, src as usize)];
                                }
                            }
                        }
                        msg[co * w + col] = acc.max(0.0);
                    }
                }
                for co in 0..c {
                    for col in 0..w {
                        let dst = col as isize + shift;
                        if dst >= 0 && (dst as usize) < w {
                            out[at(co, row, dst as usize)] += msg[co * w + col];
                        }
                    }
                }
            }
        }
        _ => {
            debug_assert_eq!(dir.family(), Family::Horizontal);
            let cols: Vec<usize> = match dir {
                Direction::LeftRight | Direction::CounterUp => (0..w).collect(),
                _ => (0..w).rev().collect(),
            };
            let shift: isize = match dir {
                Direction::CounterDown => 1,
                Direction::CounterUp => -1,
                _ => 0,
            };
            for step in 1..cols.len() {
                let (prev, col) = (cols[step - 1], cols[step]);
                let mut msg = vec![0.0; c * h];
                for co in 0..c {
                    for row in 0..h {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for j in 0..k {
                                let src = row as isize + j as isize - half;
                                if src >= 0 && (src as usize) < h {
                                    acc += kw(co, ci, j) * out[at(ci, src as usize, prev)];
                                }
                            }
                        }
                        msg[co * h + row] = acc.max(0.0);
                    }
                }
                for co in 0..c {
                    for row in 0..h {
                        let dst = row as isize + shift;
                        if dst >= 0 && (dst as usize) < h {
                            out[at(co, dst as usize, col)] += msg[co * h + row];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}
