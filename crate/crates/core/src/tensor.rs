//! Dense NCHW tensors.
//!
//! Layout is fixed row-major with `W` innermost: element `(n, c, h, w)` lives
//! at `((n * C + c) * H + h) * W + w`. There is no broadcasting; every binary
//! operation requires identical shapes.

use std::fmt;
use std::io::{Read, Write};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating-point element type. Training runs in `f32`; gradient checks
/// run the same code in `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    /// Element count, or `None` if it overflows `usize`.
    pub fn checked_numel(&self) -> Option<usize> {
        self.n
            .checked_mul(self.c)?
            .checked_mul(self.h)?
            .checked_mul(self.w)
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    pub fn with_c(self, c: usize) -> Self {
        Self { c, ..self }
    }

    pub fn with_hw(self, h: usize, w: usize) -> Self {
        Self { h, w, ..self }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl From<(usize, usize, usize, usize)> for Shape4 {
    fn from((n, c, h, w): (usize, usize, usize, usize)) -> Self {
        Self { n, c, h, w }
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{} [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:?}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn full(shape: impl Into<Shape4>, value: T) -> Self {
        let shape = shape.into();
        let len = shape
            .checked_numel()
            .expect("tensor element count overflows usize");
        Self {
            shape,
            data: vec![value; len],
        }
    }

    pub fn zeros(shape: impl Into<Shape4>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Shape4>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn from_values(shape: impl Into<Shape4>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let expected = shape.checked_numel().ok_or_else(|| Error::InvalidShape {
            op: "from_values",
            shape,
            reason: "element count overflows".into(),
        })?;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(
        shape: impl Into<Shape4>,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Self {
        let shape = shape.into();
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// In-place access. Only optimizers and data pipelines mutate tensors.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.shape.index(n, c, h, w);
        self.data[i] = v;
    }

    /// Contiguous `H*W` plane for `(n, c)`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(self, shape: impl Into<Shape4>) -> Result<Self> {
        Self::from_values(shape, self.data)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other, op)?;
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn relu(&self) -> Self {
        self.map(relu)
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Sequential left-to-right sum.
    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.data.len().max(1) as f64)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.expect_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs().as_f64())
            .fold(0.0, f64::max))
    }

    /// Channel range `[start, start + len)` as a new tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let s = self.shape;
        if start + len > s.c {
            return Err(Error::InvalidShape {
                op: "slice_channels",
                shape: s,
                reason: format!("channels {start}..{} out of range", start + len),
            });
        }
        let p = s.plane();
        let mut data = Vec::with_capacity(s.n * len * p);
        for n in 0..s.n {
            let from = (n * s.c + start) * p;
            data.extend_from_slice(&self.data[from..from + len * p]);
        }
        Ok(Self {
            shape: s.with_c(len),
            data,
        })
    }

    /// Single batch item `n` as an `(1, C, H, W)` tensor.
    pub fn batch_item(&self, n: usize) -> Self {
        let s = self.shape;
        let len = s.c * s.plane();
        Self {
            shape: Shape4::new(1, s.c, s.h, s.w),
            data: self.data[n * len..(n + 1) * len].to_vec(),
        }
    }
}

#[inline]
pub fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Logistic function, clamped so the result stays strictly inside (0, 1)
/// even where the exact value rounds to 0 or 1.
#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    let s = if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    };
    let below_one = T::one() - T::epsilon() / T::of(2.0);
    s.max(T::min_positive_value()).min(below_one)
}

/// Concatenate along the channel axis. Parts must agree on N, H and W.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?
        .shape;
    let mut total_c = 0;
    for p in parts {
        let s = p.shape;
        if s.n != first.n || s.h != first.h || s.w != first.w {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                left: first,
                right: s,
            });
        }
        total_c += s.c;
    }
    let plane = first.plane();
    let mut data = Vec::with_capacity(first.n * total_c * plane);
    for n in 0..first.n {
        for p in parts {
            let block = p.shape.c * plane;
            data.extend_from_slice(&p.data[n * block..(n + 1) * block]);
        }
    }
    Ok(Tensor {
        shape: first.with_c(total_c),
        data,
    })
}

/// Stack `(1, C, H, W)` tensors along N.
pub fn stack_batch<T: Scalar>(items: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = items
        .first()
        .ok_or_else(|| Error::InvalidArgument("stack of zero tensors".into()))?
        .shape;
    let mut data = Vec::with_capacity(first.numel() * items.len());
    let mut n = 0;
    for t in items {
        let s = t.shape;
        if s.c != first.c || s.h != first.h || s.w != first.w {
            return Err(Error::ShapeMismatch {
                op: "stack_batch",
                left: first,
                right: s,
            });
        }
        n += s.n;
        data.extend_from_slice(&t.data);
    }
    Ok(Tensor {
        shape: Shape4 { n, ..first },
        data,
    })
}

const DUMP_MAGIC: &[u8; 4] = b"MKDT";
const DUMP_VERSION: u32 = 1;

impl Tensor<f32> {
    /// Binary dump: `"MKDT"`, `u32` version, four `u32` dims, then the
    /// little-endian `f32` payload.
    pub fn write_dump<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(DUMP_MAGIC)?;
        out.write_all(&DUMP_VERSION.to_le_bytes())?;
        for d in self.shape.dims() {
            let d = u32::try_from(d)
                .map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32")))?;
            out.write_all(&d.to_le_bytes())?;
        }
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_dump<R: Read>(input: &mut R) -> Result<Self> {
        let mut header = [0u8; 24];
        read_exact_at(input, &mut header, 0)?;
        if &header[..4] != DUMP_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                reason: "bad tensor magic".into(),
            });
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != DUMP_VERSION {
            return Err(Error::Parse {
                offset: 4,
                reason: format!("unsupported tensor dump version {version}"),
            });
        }
        let shape = Shape4::new(
            word(8) as usize,
            word(12) as usize,
            word(16) as usize,
            word(20) as usize,
        );
        let len = shape.checked_numel().ok_or_else(|| Error::Parse {
            offset: 8,
            reason: format!("shape {shape} overflows"),
        })?;
        let mut payload = vec![0u8; len * 4];
        read_exact_at(input, &mut payload, 24)?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Self { shape, data })
    }
}

fn read_exact_at<R: Read>(input: &mut R, buf: &mut [u8], offset: usize) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Parse {
            offset,
            reason: format!("truncated: needed {} bytes", buf.len()),
        },
        _ => Error::Io(e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constructors() {
        let z = Tensor::<f32>::zeros((1, 1, 2, 2));
        assert_eq!(z.data(), &[0.0; 4]);
        let f = Tensor::<f32>::full((1, 2, 1, 1), 3.5);
        assert_eq!(f.data(), &[3.5, 3.5]);
        let err = Tensor::<f32>::from_values((1, 1, 1, 3), vec![1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { expected: 3, got: 2 }));
    }

    #[test]
    fn index_layout() {
        let s = Shape4::new(2, 3, 4, 5);
        let t = Tensor::<f32>::from_fn(s, |n, c, h, w| (n * 1000 + c * 100 + h * 10 + w) as f32);
        for (n, c, h, w) in [(0, 0, 0, 0), (1, 2, 3, 4), (1, 0, 2, 1)] {
            assert_eq!(t.data()[((n * 3 + c) * 4 + h) * 5 + w], t.at(n, c, h, w));
        }
    }

    #[test]
    fn elementwise_definitions() {
        let x = Tensor::<f32>::from_values((1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(x.relu().data(), &[0.0, 0.0, 2.0]);
        assert_eq!(sigmoid(0.0f32), 0.5);
        let a = Tensor::<f32>::from_values((1, 1, 1, 2), vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f32>::from_values((1, 1, 1, 2), vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(b.sub(&a).unwrap().data(), &[2.0, 2.0]);
        assert_eq!(a.mul(&b).unwrap().data(), &[3.0, 8.0]);
        assert_eq!(a.scale(0.5).data(), &[0.5, 1.0]);
        assert!(a.add(&Tensor::zeros((1, 1, 2, 1))).is_err());
    }

    #[test]
    fn sigmoid_saturates_inside_unit_interval() {
        for v in [-1e4f32, -200.0, -88.0, 17.0, 100.0, 1e4] {
            let s = sigmoid(v);
            assert!(s > 0.0 && s < 1.0, "sigmoid({v}) = {s}");
        }
        for v in [-1e4f64, -800.0, 40.0, 1e4] {
            let s = sigmoid(v);
            assert!(s > 0.0 && s < 1.0, "sigmoid({v}) = {s}");
        }
    }

    #[test]
    fn concat_shapes_and_order() {
        let a = Tensor::<f32>::zeros((1, 2, 4, 4));
        let b = Tensor::<f32>::zeros((1, 3, 4, 4));
        assert_eq!(concat_channels(&[&a, &b]).unwrap().shape(), Shape4::new(1, 5, 4, 4));
        assert_eq!(concat_channels(&[&a]).unwrap(), a);

        let a = Tensor::<f32>::from_values((1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f32>::from_values((1, 1, 2, 2), vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        // Oracle: enumerate output indices and map each back to its source.
        let out = concat_channels(&[&a, &b]).unwrap();
        let mut expected = Vec::new();
        for c in 0..2 {
            for h in 0..2 {
                for w in 0..2 {
                    let src = if c == 0 { &a } else { &b };
                    expected.push(src.at(0, 0, h, w));
                }
            }
        }
        assert_eq!(out.data(), expected.as_slice());
        assert_eq!(out.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);

        let bad = Tensor::<f32>::zeros((1, 1, 3, 2));
        assert!(concat_channels(&[&a, &bad]).is_err());
    }

    #[test]
    fn dump_rejects_truncation() {
        let t = Tensor::<f32>::from_fn((1, 2, 3, 3), |_, c, h, w| (c + h * w) as f32);
        let mut bytes = Vec::new();
        t.write_dump(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"MKDT");
        assert_eq!(bytes.len(), 24 + 18 * 4);
        let back = Tensor::read_dump(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, t);
        let err = Tensor::read_dump(&mut &bytes[..30]).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 24, .. }));
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor<f32>> {
        (1usize..3, 1usize..4, 1usize..5, 1usize..5).prop_flat_map(|(n, c, h, w)| {
            proptest::collection::vec(-100.0f32..100.0, n * c * h * w)
                .prop_map(move |d| Tensor::from_values((n, c, h, w), d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn from_values_round_trip(t in arb_tensor()) {
            let back = Tensor::from_values(t.shape(), t.data().to_vec()).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn concat_then_slice_recovers_parts(a in arb_tensor(), extra_c in 1usize..4) {
            let s = a.shape();
            let b = Tensor::<f32>::from_fn(s.with_c(extra_c), |n, c, h, w| (n + 7 * c + 3 * h + w) as f32);
            let cat = concat_channels(&[&a, &b]).unwrap();
            prop_assert_eq!(cat.slice_channels(0, s.c).unwrap(), a);
            prop_assert_eq!(cat.slice_channels(s.c, extra_c).unwrap(), b);
        }

        #[test]
        fn relu_idempotent(t in arb_tensor()) {
            prop_assert_eq!(t.relu().relu(), t.relu());
        }

        #[test]
        fn sigmoid_strictly_inside(v in proptest::num::f32::NORMAL | proptest::num::f32::ZERO) {
            let s = sigmoid(v);
            prop_assert!(s > 0.0 && s < 1.0);
        }

        #[test]
        fn dump_round_trip(t in arb_tensor()) {
            let mut bytes = Vec::new();
            t.write_dump(&mut bytes).unwrap();
            prop_assert_eq!(Tensor::read_dump(&mut bytes.as_slice()).unwrap(), t);
        }
    }
}
