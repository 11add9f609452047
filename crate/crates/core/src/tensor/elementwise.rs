use std::sync::Arc;

use super::{zip_map, Op, Tensor};
use crate::error::{Error, Result};

/// Tag for [`Tensor::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Exp,
    Neg,
    LeakyRelu(f64),
}

impl Tensor {
    /// Dispatches on `op`. Binary tags need `rhs`; unary tags ignore it.
    pub fn elementwise(&self, op: ElementwiseOp, rhs: Option<&Tensor>) -> Result<Tensor> {
        let need = || rhs.ok_or_else(|| Error::contract(format!("{op:?} needs two operands")));
        match op {
            ElementwiseOp::Add => self.add(need()?),
            ElementwiseOp::Sub => self.sub(need()?),
            ElementwiseOp::Mul => self.mul(need()?),
            ElementwiseOp::Div => self.div(need()?),
            ElementwiseOp::Exp => Ok(self.exp()),
            ElementwiseOp::Neg => Ok(self.neg()),
            ElementwiseOp::LeakyRelu(slope) => Ok(self.leaky_relu(slope)),
        }
    }

    /// Brings `rhs` to `self`'s shape: identical shapes pass through, a
    /// single-element `rhs` is broadcast.
    fn align(&self, rhs: &Tensor, what: &str) -> Result<Tensor> {
        if self.shape() == rhs.shape() {
            Ok(rhs.clone())
        } else if rhs.numel() == 1 {
            rhs.gather(Arc::new(vec![0; self.numel()]), self.shape())
        } else {
            Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(),
                rhs.shape()
            )))
        }
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        let rhs = self.align(rhs, "add")?;
        let data = zip_map(self.data(), rhs.data(), |a, b| a + b);
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Add(self.clone(), rhs)))
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        let rhs = self.align(rhs, "sub")?;
        let data = zip_map(self.data(), rhs.data(), |a, b| a - b);
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Sub(self.clone(), rhs)))
    }

    /// Hadamard product.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        let rhs = self.align(rhs, "mul")?;
        let data = zip_map(self.data(), rhs.data(), |a, b| a * b);
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Mul(self.clone(), rhs)))
    }

    /// Strict division: any zero in the denominator is a domain error.
    pub fn div(&self, rhs: &Tensor) -> Result<Tensor> {
        let rhs = self.align(rhs, "div")?;
        if let Some(i) = rhs.data().iter().position(|&v| v == 0.0) {
            return Err(Error::Domain(format!("division by zero at flat index {i}")));
        }
        let data = zip_map(self.data(), rhs.data(), |a, b| a / b);
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Div(self.clone(), rhs)))
    }

    /// `self + rhs` where `rhs`'s shape is a suffix of `self`'s, repeated
    /// over the leading axes.
    pub fn add_broadcast(&self, rhs: &Tensor) -> Result<Tensor> {
        self.check_suffix(rhs, "add_broadcast")?;
        let n = rhs.numel();
        let mut data = self.data().to_vec();
        for chunk in data.chunks_exact_mut(n) {
            chunk.iter_mut().zip(rhs.data()).for_each(|(a, b)| *a += b);
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::AddBroadcast(self.clone(), rhs.clone()),
        ))
    }

    pub fn mul_broadcast(&self, rhs: &Tensor) -> Result<Tensor> {
        self.check_suffix(rhs, "mul_broadcast")?;
        let n = rhs.numel();
        let mut data = self.data().to_vec();
        for chunk in data.chunks_exact_mut(n) {
            chunk.iter_mut().zip(rhs.data()).for_each(|(a, b)| *a *= b);
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::MulBroadcast(self.clone(), rhs.clone()),
        ))
    }

    fn check_suffix(&self, rhs: &Tensor, what: &str) -> Result<()> {
        let (s, r) = (self.shape(), rhs.shape());
        if r.len() > s.len() || s[s.len() - r.len()..] != *r {
            return Err(Error::dim(format!(
                "{what}: {r:?} is not a trailing sub-shape of {s:?}"
            )));
        }
        Ok(())
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        let data = self.data().iter().map(|v| v + s).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::AddScalar(self.clone()))
    }

    pub fn mul_scalar(&self, s: f64) -> Tensor {
        let data = self.data().iter().map(|v| v * s).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::MulScalar(self.clone(), s))
    }

    pub fn neg(&self) -> Tensor {
        let data = self.data().iter().map(|v| -v).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Neg(self.clone()))
    }

    pub fn exp(&self) -> Tensor {
        let data = self.data().iter().map(|v| v.exp()).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Exp(self.clone()))
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        let data = self
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { v * slope })
            .collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::LeakyRelu(self.clone(), slope))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        let data = self.data().iter().map(|v| v.clamp(lo, hi)).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Clamp(self.clone(), lo, hi))
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::from_op(vec![1], vec![s], Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        Tensor::from_op(vec![1], vec![s / self.numel() as f64], Op::Mean(self.clone()))
    }
}
