//! Dense n-dimensional arrays of 64-bit floats, stored contiguously in row-major order.
//!
//! Arrays are immutable values once constructed; every operation returns a new array.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    /// Build an array from a shape and row-major data. The data length must
    /// equal the product of the extents.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Misaligned {
                what: "array data length",
                expected,
                got: data.len(),
            });
        }
        Ok(Array { shape, data })
    }

    /// Rank-1 array over the given values.
    pub fn vector(data: Vec<f64>) -> Self {
        let shape = vec![data.len()];
        Array { shape, data }
    }

    /// Single-element array holding `v`.
    pub fn scalar(v: f64) -> Self {
        Array {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Array {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: Vec<usize>, v: f64) -> Self {
        let n: usize = shape.iter().product();
        Array {
            shape,
            data: vec![v; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True when the array holds exactly one element (any rank).
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Extract the single element of a scalar array.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::NotScalar {
                op: "item",
                shape: self.shape.clone(),
            })
        }
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::Misaligned {
                what: "reshape element count",
                expected,
                got: self.data.len(),
            });
        }
        Ok(Array {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Array, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Array {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Array) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Array) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|x| k * x)
    }

    /// Sum of squared elements.
    pub fn sq_norm(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.sq_norm())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &x| {
            let a = libm::fabs(x);
            if a > m {
                a
            } else {
                m
            }
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Reject arrays containing NaN or infinity, naming the offending index.
    pub fn check_finite(&self, context: &'static str) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite {
                context,
                index: Some(i),
            }),
        }
    }

    /// Matrix multiplication. Supports [m,k]x[k,n] -> [m,n] and [m,k]x[k] -> [m].
    pub fn matmul(&self, rhs: &Array) -> Result<Array> {
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            left: self.shape.clone(),
            right: rhs.shape.clone(),
        };
        match (self.shape.as_slice(), rhs.shape.as_slice()) {
            (&[m, k], &[k2, n]) => {
                if k != k2 {
                    return Err(mismatch());
                }
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    let arow = &self.data[i * k..(i + 1) * k];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (l, &ail) in arow.iter().enumerate() {
                        let brow = &rhs.data[l * n..(l + 1) * n];
                        for (o, &b) in orow.iter_mut().zip(brow) {
                            *o += ail * b;
                        }
                    }
                }
                Array::from_vec(vec![m, n], out)
            }
            (&[m, k], &[k2]) => {
                if k != k2 {
                    return Err(mismatch());
                }
                let mut out = vec![0.0; m];
                for (i, o) in out.iter_mut().enumerate() {
                    *o = dot(&self.data[i * k..(i + 1) * k], &rhs.data);
                }
                Array::from_vec(vec![m], out)
            }
            _ => Err(mismatch()),
        }
    }

    /// Concatenate arrays along `axis`. All inputs must share rank and agree on
    /// every extent except the concatenation axis.
    pub fn concat(parts: &[&Array], axis: usize) -> Result<Array> {
        let first = parts.first().ok_or(Error::InvalidParam {
            name: "concat parts",
            message: alloc::string::String::from("no arrays given"),
        })?;
        let rank = first.shape.len();
        if axis >= rank {
            return Err(Error::InvalidParam {
                name: "concat axis",
                message: alloc::format!("axis {axis} out of range for rank {rank}"),
            });
        }
        let mut axis_total = 0usize;
        for p in parts {
            if p.shape.len() != rank
                || p.shape[..axis] != first.shape[..axis]
                || p.shape[axis + 1..] != first.shape[axis + 1..]
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: first.shape.clone(),
                    right: p.shape.clone(),
                });
            }
            axis_total += p.shape[axis];
        }
        let mut shape = first.shape.clone();
        shape[axis] = axis_total;
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let out_block = axis_total * inner;
        let mut data = vec![0.0; outer * out_block];
        let mut offset = 0usize;
        for p in parts {
            let block = p.shape[axis] * inner;
            for o in 0..outer {
                let dst = o * out_block + offset;
                data[dst..dst + block].copy_from_slice(&p.data[o * block..(o + 1) * block]);
            }
            offset += block;
        }
        Array::from_vec(shape, data)
    }
}

/// Dot product with a fixed four-accumulator summation order, used by every
/// matrix product in the crate so results are reproducible.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let mut acc = [0.0f64; 4];
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}
