//! Differentiable primitives. Every backward rule is itself expressed with
//! these primitives, which closes the set under differentiation.

use crate::kernels::{self, ConvGeom};
use crate::tensor::Backward;
use crate::{Real, Tensor};

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: &str) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

macro_rules! backward_struct {
    ($name:ident { $($field:ident : $ty:ty),* $(,)? }) => {
        struct $name { $($field: $ty),* }
    };
}

// ----- elementwise binary -------------------------------------------------

struct AddOp;
impl<T: Real> Backward<T> for AddOp {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, _i: &[Tensor<T>], g: &Tensor<T>, n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![n[0].then(|| g.clone()), n[1].then(|| g.clone())]
    }
}

struct SubOp;
impl<T: Real> Backward<T> for SubOp {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, _i: &[Tensor<T>], g: &Tensor<T>, n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![n[0].then(|| g.clone()), n[1].then(|| g.neg())]
    }
}

struct MulOp;
impl<T: Real> Backward<T> for MulOp {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, i: &[Tensor<T>], g: &Tensor<T>, n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![n[0].then(|| g.mul(&i[1])), n[1].then(|| g.mul(&i[0]))]
    }
}

struct DivOp;
impl<T: Real> Backward<T> for DivOp {
    fn name(&self) -> &'static str {
        "div"
    }
    fn backward(&self, i: &[Tensor<T>], g: &Tensor<T>, n: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (&i[0], &i[1]);
        vec![
            n[0].then(|| g.div(b)),
            n[1].then(|| g.mul(a).div(&b.square()).neg()),
        ]
    }
}

// ----- elementwise unary --------------------------------------------------

struct NegOp;
impl<T: Real> Backward<T> for NegOp {
    fn name(&self) -> &'static str {
        "neg"
    }
    fn backward(&self, _i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.neg())]
    }
}

backward_struct!(ScaleOp { s: f64 });
impl<T: Real> Backward<T> for ScaleOp {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, _i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.scale(self.s))]
    }
}

struct AddScalarOp;
impl<T: Real> Backward<T> for AddScalarOp {
    fn name(&self) -> &'static str {
        "add_scalar"
    }
    fn backward(&self, _i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.clone())]
    }
}

struct ExpOp;
impl<T: Real> Backward<T> for ExpOp {
    fn name(&self) -> &'static str {
        "exp"
    }
    fn backward(&self, i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.mul(&i[0].exp()))]
    }
}

struct LnOp;
impl<T: Real> Backward<T> for LnOp {
    fn name(&self) -> &'static str {
        "ln"
    }
    fn backward(&self, i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.div(&i[0]))]
    }
}

struct TanhOp;
impl<T: Real> Backward<T> for TanhOp {
    fn name(&self) -> &'static str {
        "tanh"
    }
    fn backward(&self, i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        let t = i[0].tanh();
        vec![Some(g.mul(&t.square().neg().add_scalar(1.0)))]
    }
}

backward_struct!(PowfOp { p: f64 });
impl<T: Real> Backward<T> for PowfOp {
    fn name(&self) -> &'static str {
        "powf"
    }
    fn backward(&self, i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.mul(&i[0].powf(self.p - 1.0)).scale(self.p))]
    }
}

// Backward of piecewise-linear activations: multiply by a constant slope
// mask computed from the forward input.
backward_struct!(SlopeMaskOp { neg_slope: f64, pos_slope: f64, name: &'static str });
impl<T: Real> Backward<T> for SlopeMaskOp {
    fn name(&self) -> &'static str {
        self.name
    }
    fn backward(&self, i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (neg, pos) = (T::lit(self.neg_slope), T::lit(self.pos_slope));
        let mask = Tensor::from_vec(
            kernels::map(i[0].data(), |v| if v > T::zero() { pos } else { neg }),
            i[0].shape(),
        );
        vec![Some(g.mul(&mask))]
    }
}

struct AbsOp;
impl<T: Real> Backward<T> for AbsOp {
    fn name(&self) -> &'static str {
        "abs"
    }
    fn backward(&self, i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        let sign = Tensor::from_vec(
            kernels::map(i[0].data(), |v| {
                if v > T::zero() {
                    T::one()
                } else if v < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }),
            i[0].shape(),
        );
        vec![Some(g.mul(&sign))]
    }
}

// ----- reductions and broadcasting ----------------------------------------

backward_struct!(SumAllOp { shape: Vec<usize> });
impl<T: Real> Backward<T> for SumAllOp {
    fn name(&self) -> &'static str {
        "sum_all"
    }
    fn backward(&self, _i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.expand(&self.shape))]
    }
}

struct ExpandOp;
impl<T: Real> Backward<T> for ExpandOp {
    fn name(&self) -> &'static str {
        "expand"
    }
    fn backward(&self, i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.sum_all().reshape(i[0].shape()))]
    }
}

backward_struct!(SumAxisOp { axis: usize, len: usize });
impl<T: Real> Backward<T> for SumAxisOp {
    fn name(&self) -> &'static str {
        "sum_axis"
    }
    fn backward(&self, _i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.broadcast_axis(self.axis, self.len))]
    }
}

backward_struct!(BroadcastAxisOp { axis: usize });
impl<T: Real> Backward<T> for BroadcastAxisOp {
    fn name(&self) -> &'static str {
        "broadcast_axis"
    }
    fn backward(&self, _i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.sum_axis(self.axis))]
    }
}

struct ReshapeOp;
impl<T: Real> Backward<T> for ReshapeOp {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.reshape(i[0].shape()))]
    }
}

backward_struct!(NarrowOp { axis: usize, start: usize, full: usize });
impl<T: Real> Backward<T> for NarrowOp {
    fn name(&self) -> &'static str {
        "narrow"
    }
    fn backward(&self, _i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.embed(self.axis, self.start, self.full))]
    }
}

backward_struct!(EmbedOp { axis: usize, start: usize, len: usize });
impl<T: Real> Backward<T> for EmbedOp {
    fn name(&self) -> &'static str {
        "embed"
    }
    fn backward(&self, _i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.narrow(self.axis, self.start, self.len))]
    }
}

backward_struct!(ConcatOp { axis: usize, sizes: Vec<usize> });
impl<T: Real> Backward<T> for ConcatOp {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn backward(&self, _i: &[Tensor<T>], g: &Tensor<T>, n: &[bool]) -> Vec<Option<Tensor<T>>> {
        let mut start = 0;
        self.sizes
            .iter()
            .zip(n)
            .map(|(&len, &need)| {
                let out = need.then(|| g.narrow(self.axis, start, len));
                start += len;
                out
            })
            .collect()
    }
}

backward_struct!(IndexSelectOp { index: Vec<usize>, rows: usize });
impl<T: Real> Backward<T> for IndexSelectOp {
    fn name(&self) -> &'static str {
        "index_select"
    }
    fn backward(&self, _i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.index_add0(&self.index, self.rows))]
    }
}

backward_struct!(IndexAddOp { index: Vec<usize> });
impl<T: Real> Backward<T> for IndexAddOp {
    fn name(&self) -> &'static str {
        "index_add"
    }
    fn backward(&self, _i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.index_select0(&self.index))]
    }
}

struct TransposeOp;
impl<T: Real> Backward<T> for TransposeOp {
    fn name(&self) -> &'static str {
        "transpose"
    }
    fn backward(&self, _i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.transpose())]
    }
}

struct MatmulOp;
impl<T: Real> Backward<T> for MatmulOp {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn backward(&self, i: &[Tensor<T>], g: &Tensor<T>, n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![
            n[0].then(|| g.matmul(&i[1].transpose())),
            n[1].then(|| i[0].transpose().matmul(g)),
        ]
    }
}

// ----- convolution family -------------------------------------------------

backward_struct!(ConvOp { geom: ConvGeom });
impl<T: Real> Backward<T> for ConvOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }
    fn backward(&self, i: &[Tensor<T>], g: &Tensor<T>, n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![
            n[0].then(|| conv_input_grad(self.geom, g, &i[1])),
            n[1].then(|| conv_weight_grad(self.geom, &i[0], g)),
        ]
    }
}

backward_struct!(ConvInputGradOp { geom: ConvGeom });
impl<T: Real> Backward<T> for ConvInputGradOp {
    fn name(&self) -> &'static str {
        "conv2d_input_grad"
    }
    fn backward(&self, i: &[Tensor<T>], g: &Tensor<T>, n: &[bool]) -> Vec<Option<Tensor<T>>> {
        // inputs: (gy, w); output is input-shaped
        vec![
            n[0].then(|| conv_forward(self.geom, g, &i[1])),
            n[1].then(|| conv_weight_grad(self.geom, g, &i[0])),
        ]
    }
}

backward_struct!(ConvWeightGradOp { geom: ConvGeom });
impl<T: Real> Backward<T> for ConvWeightGradOp {
    fn name(&self) -> &'static str {
        "conv2d_weight_grad"
    }
    fn backward(&self, i: &[Tensor<T>], g: &Tensor<T>, n: &[bool]) -> Vec<Option<Tensor<T>>> {
        // inputs: (x, gy); output is weight-shaped
        vec![
            n[0].then(|| conv_input_grad(self.geom, &i[1], g)),
            n[1].then(|| conv_forward(self.geom, &i[0], g)),
        ]
    }
}

fn conv_out_shape(g: &ConvGeom) -> Vec<usize> {
    vec![g.batch, g.out_ch, g.out_h(), g.out_w()]
}

fn conv_forward<T: Real>(geom: ConvGeom, x: &Tensor<T>, w: &Tensor<T>) -> Tensor<T> {
    let data = kernels::conv2d_forward(&geom, x.data(), w.data());
    Tensor::from_op(data, conv_out_shape(&geom), ConvOp { geom }, vec![x.clone(), w.clone()])
}

fn conv_input_grad<T: Real>(geom: ConvGeom, gy: &Tensor<T>, w: &Tensor<T>) -> Tensor<T> {
    let data = kernels::conv2d_input_grad(&geom, gy.data(), w.data());
    Tensor::from_op(
        data,
        vec![geom.batch, geom.in_ch, geom.height, geom.width],
        ConvInputGradOp { geom },
        vec![gy.clone(), w.clone()],
    )
}

fn conv_weight_grad<T: Real>(geom: ConvGeom, x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let data = kernels::conv2d_weight_grad(&geom, x.data(), gy.data());
    Tensor::from_op(
        data,
        vec![geom.out_ch, geom.in_ch, geom.kh, geom.kw],
        ConvWeightGradOp { geom },
        vec![x.clone(), gy.clone()],
    )
}

// ----- spatial resampling -------------------------------------------------

backward_struct!(ReflectPadOp { pad: usize });
impl<T: Real> Backward<T> for ReflectPadOp {
    fn name(&self) -> &'static str {
        "reflect_pad2d"
    }
    fn backward(&self, _i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.reflect_pad2d_adjoint(self.pad))]
    }
}

backward_struct!(ReflectPadAdjointOp { pad: usize });
impl<T: Real> Backward<T> for ReflectPadAdjointOp {
    fn name(&self) -> &'static str {
        "reflect_pad2d_adjoint"
    }
    fn backward(&self, _i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.reflect_pad2d(self.pad))]
    }
}

backward_struct!(UpsampleOp { factor: usize });
impl<T: Real> Backward<T> for UpsampleOp {
    fn name(&self) -> &'static str {
        "upsample_nearest2d"
    }
    fn backward(&self, _i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.sum_pool2d(self.factor))]
    }
}

backward_struct!(SumPoolOp { factor: usize });
impl<T: Real> Backward<T> for SumPoolOp {
    fn name(&self) -> &'static str {
        "sum_pool2d"
    }
    fn backward(&self, _i: &[Tensor<T>], g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.upsample_nearest2d(self.factor))]
    }
}

fn nchw(t: &Tensor<impl Real>, op: &str) -> (usize, usize, usize, usize) {
    assert_eq!(t.dims(), 4, "{op} expects NCHW, got {:?}", t.shape());
    let s = t.shape();
    (s[0], s[1], s[2], s[3])
}

impl<T: Real> Tensor<T> {
    fn unary(&self, data: Vec<T>, op: impl Backward<T> + 'static) -> Self {
        Tensor::from_op(data, self.shape().to_vec(), op, vec![self.clone()])
    }

    pub fn add(&self, other: &Self) -> Self {
        same_shape(self, other, "add");
        let data = kernels::zip_map(self.data(), other.data(), |a, b| a + b);
        Tensor::from_op(data, self.shape().to_vec(), AddOp, vec![self.clone(), other.clone()])
    }

    pub fn sub(&self, other: &Self) -> Self {
        same_shape(self, other, "sub");
        let data = kernels::zip_map(self.data(), other.data(), |a, b| a - b);
        Tensor::from_op(data, self.shape().to_vec(), SubOp, vec![self.clone(), other.clone()])
    }

    pub fn mul(&self, other: &Self) -> Self {
        same_shape(self, other, "mul");
        let data = kernels::zip_map(self.data(), other.data(), |a, b| a * b);
        Tensor::from_op(data, self.shape().to_vec(), MulOp, vec![self.clone(), other.clone()])
    }

    pub fn div(&self, other: &Self) -> Self {
        same_shape(self, other, "div");
        let data = kernels::zip_map(self.data(), other.data(), |a, b| a / b);
        Tensor::from_op(data, self.shape().to_vec(), DivOp, vec![self.clone(), other.clone()])
    }

    pub fn neg(&self) -> Self {
        self.unary(kernels::map(self.data(), |v| -v), NegOp)
    }

    pub fn scale(&self, s: f64) -> Self {
        let k = T::lit(s);
        self.unary(kernels::map(self.data(), |v| v * k), ScaleOp { s })
    }

    pub fn add_scalar(&self, s: f64) -> Self {
        let k = T::lit(s);
        self.unary(kernels::map(self.data(), |v| v + k), AddScalarOp)
    }

    pub fn square(&self) -> Self {
        self.mul(self)
    }

    pub fn exp(&self) -> Self {
        self.unary(kernels::map(self.data(), |v| v.exp()), ExpOp)
    }

    pub fn ln(&self) -> Self {
        self.unary(kernels::map(self.data(), |v| v.ln()), LnOp)
    }

    pub fn tanh(&self) -> Self {
        self.unary(kernels::map(self.data(), |v| v.tanh()), TanhOp)
    }

    pub fn powf(&self, p: f64) -> Self {
        let e = T::lit(p);
        self.unary(kernels::map(self.data(), |v| v.powf(e)), PowfOp { p })
    }

    pub fn sqrt(&self) -> Self {
        self.powf(0.5)
    }

    pub fn abs(&self) -> Self {
        self.unary(kernels::map(self.data(), |v| v.abs()), AbsOp)
    }

    pub fn relu(&self) -> Self {
        self.unary(
            kernels::map(self.data(), |v| if v > T::zero() { v } else { T::zero() }),
            SlopeMaskOp {
                neg_slope: 0.0,
                pos_slope: 1.0,
                name: "relu",
            },
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Self {
        let s = T::lit(slope);
        self.unary(
            kernels::map(self.data(), |v| if v > T::zero() { v } else { v * s }),
            SlopeMaskOp {
                neg_slope: slope,
                pos_slope: 1.0,
                name: "leaky_relu",
            },
        )
    }

    /// Sum of all elements as a 0-d tensor.
    pub fn sum_all(&self) -> Self {
        let s = self.data().iter().copied().sum();
        Tensor::from_op(
            vec![s],
            vec![],
            SumAllOp {
                shape: self.shape().to_vec(),
            },
            vec![self.clone()],
        )
    }

    pub fn mean_all(&self) -> Self {
        let n = self.numel().max(1);
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Broadcasts a one-element tensor to `shape`.
    pub fn expand(&self, shape: &[usize]) -> Self {
        assert_eq!(self.numel(), 1, "expand needs a one-element tensor");
        let n = shape.iter().product();
        Tensor::from_op(vec![self.data()[0]; n], shape.to_vec(), ExpandOp, vec![self.clone()])
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Self {
        let (o, l, i) = kernels::axis_split(self.shape(), axis);
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Tensor::from_op(
            kernels::sum_axis(self.data(), o, l, i),
            shape,
            SumAxisOp { axis, len: l },
            vec![self.clone()],
        )
    }

    pub fn mean_axis(&self, axis: usize) -> Self {
        let len = self.dim(axis);
        self.sum_axis(axis).scale(1.0 / len as f64)
    }

    /// Inserts a new `axis` of length `len` by repetition.
    pub fn broadcast_axis(&self, axis: usize, len: usize) -> Self {
        let mut shape = self.shape().to_vec();
        shape.insert(axis, len);
        let (o, l, i) = kernels::axis_split(&shape, axis);
        Tensor::from_op(
            kernels::broadcast_axis(self.data(), o, l, i),
            shape,
            BroadcastAxisOp { axis },
            vec![self.clone()],
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, self.numel(), "reshape {:?} -> {:?}", self.shape(), shape);
        Tensor::from_op_shared(
            std::sync::Arc::clone(&self.node.data),
            shape.to_vec(),
            ReshapeOp,
            vec![self.clone()],
        )
    }

    /// `[b, ...] -> [b, prod(...)]`.
    pub fn flatten_batch(&self) -> Self {
        let b = self.dim(0);
        self.reshape(&[b, self.numel() / b.max(1)])
    }

    /// The slice `start..start + len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Self {
        let (o, full, i) = kernels::axis_split(self.shape(), axis);
        assert!(start + len <= full, "narrow {start}+{len} out of {full}");
        let mut data = Vec::with_capacity(o * len * i);
        for oo in 0..o {
            let base = (oo * full + start) * i;
            data.extend_from_slice(&self.data()[base..base + len * i]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Tensor::from_op(data, shape, NarrowOp { axis, start, full }, vec![self.clone()])
    }

    /// Places this tensor at `start` inside a zero tensor with `full` entries
    /// along `axis` (adjoint of `narrow`).
    pub fn embed(&self, axis: usize, start: usize, full: usize) -> Self {
        let (o, len, i) = kernels::axis_split(self.shape(), axis);
        assert!(start + len <= full);
        let mut data = vec![T::zero(); o * full * i];
        for oo in 0..o {
            let dst = (oo * full + start) * i;
            data[dst..dst + len * i].copy_from_slice(&self.data()[oo * len * i..(oo + 1) * len * i]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = full;
        Tensor::from_op(data, shape, EmbedOp { axis, start, len }, vec![self.clone()])
    }

    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Self {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = parts[0].shape();
        for p in parts {
            assert_eq!(p.dims(), first.len());
            for (d, (a, b)) in p.shape().iter().zip(first).enumerate() {
                assert!(d == axis || a == b, "concat shape mismatch {:?} vs {:?}", p.shape(), first);
            }
        }
        let sizes: Vec<usize> = parts.iter().map(|p| p.dim(axis)).collect();
        let total: usize = sizes.iter().sum();
        let (outer, _, inner) = kernels::axis_split(first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&sizes) {
                data.extend_from_slice(&p.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first.to_vec();
        shape[axis] = total;
        Tensor::from_op(data, shape, ConcatOp { axis, sizes }, parts.to_vec())
    }

    /// Gathers rows of the leading axis: `out[i] = self[index[i]]`.
    pub fn index_select0(&self, index: &[usize]) -> Self {
        let rows = self.dim(0);
        let row = self.numel() / rows.max(1);
        let mut data = Vec::with_capacity(index.len() * row);
        for &r in index {
            assert!(r < rows, "index {r} out of range for {rows} rows");
            data.extend_from_slice(&self.data()[r * row..(r + 1) * row]);
        }
        let mut shape = self.shape().to_vec();
        shape[0] = index.len();
        Tensor::from_op(
            data,
            shape,
            IndexSelectOp {
                index: index.to_vec(),
                rows,
            },
            vec![self.clone()],
        )
    }

    /// Scatter-adds rows into a zero tensor with `rows` leading entries:
    /// `out[index[i]] += self[i]`.
    pub fn index_add0(&self, index: &[usize], rows: usize) -> Self {
        assert_eq!(index.len(), self.dim(0));
        let row = self.numel() / self.dim(0).max(1);
        let mut data = vec![T::zero(); rows * row];
        for (i, &r) in index.iter().enumerate() {
            let src = &self.data()[i * row..(i + 1) * row];
            data[r * row..(r + 1) * row]
                .iter_mut()
                .zip(src)
                .for_each(|(d, s)| *d += *s);
        }
        let mut shape = self.shape().to_vec();
        shape[0] = rows;
        Tensor::from_op(
            data,
            shape,
            IndexAddOp {
                index: index.to_vec(),
            },
            vec![self.clone()],
        )
    }

    pub fn transpose(&self) -> Self {
        assert_eq!(self.dims(), 2, "transpose expects a matrix");
        let (r, c) = (self.dim(0), self.dim(1));
        Tensor::from_op(
            kernels::transpose2d(self.data(), r, c),
            vec![c, r],
            TransposeOp,
            vec![self.clone()],
        )
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert!(self.dims() == 2 && other.dims() == 2, "matmul expects matrices");
        let (m, k, n) = (self.dim(0), self.dim(1), other.dim(1));
        assert_eq!(k, other.dim(0), "matmul inner dims {:?} x {:?}", self.shape(), other.shape());
        Tensor::from_op(
            kernels::matmul(self.data(), other.data(), m, k, n),
            vec![m, n],
            MatmulOp,
            vec![self.clone(), other.clone()],
        )
    }

    /// Cross-correlation with zero padding; `weight` is `[out, in, kh, kw]`.
    pub fn conv2d(&self, weight: &Self, stride: usize, pad: usize) -> Self {
        let (b, c, h, w) = nchw(self, "conv2d");
        assert_eq!(weight.dims(), 4, "conv2d weight must be 4-d");
        let ws = weight.shape();
        assert_eq!(ws[1], c, "conv2d: weight expects {} input channels, got {c}", ws[1]);
        assert!(stride >= 1);
        assert!(h + 2 * pad >= ws[2] && w + 2 * pad >= ws[3], "conv2d kernel larger than input");
        let geom = ConvGeom {
            batch: b,
            in_ch: c,
            height: h,
            width: w,
            out_ch: ws[0],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
        };
        conv_forward(geom, self, weight)
    }

    pub fn reflect_pad2d(&self, pad: usize) -> Self {
        let (b, c, h, w) = nchw(self, "reflect_pad2d");
        assert!(pad < h && pad < w, "reflection pad {pad} too large for {h}x{w}");
        Tensor::from_op(
            kernels::reflect_pad2d(self.data(), b * c, h, w, pad),
            vec![b, c, h + 2 * pad, w + 2 * pad],
            ReflectPadOp { pad },
            vec![self.clone()],
        )
    }

    pub fn reflect_pad2d_adjoint(&self, pad: usize) -> Self {
        let (b, c, h, w) = nchw(self, "reflect_pad2d_adjoint");
        let (ih, iw) = (h - 2 * pad, w - 2 * pad);
        Tensor::from_op(
            kernels::reflect_pad2d_adjoint(self.data(), b * c, ih, iw, pad),
            vec![b, c, ih, iw],
            ReflectPadAdjointOp { pad },
            vec![self.clone()],
        )
    }

    pub fn upsample_nearest2d(&self, factor: usize) -> Self {
        let (b, c, h, w) = nchw(self, "upsample_nearest2d");
        Tensor::from_op(
            kernels::upsample_nearest(self.data(), b * c, h, w, factor),
            vec![b, c, h * factor, w * factor],
            UpsampleOp { factor },
            vec![self.clone()],
        )
    }

    pub fn sum_pool2d(&self, factor: usize) -> Self {
        let (b, c, h, w) = nchw(self, "sum_pool2d");
        assert!(h % factor == 0 && w % factor == 0);
        Tensor::from_op(
            kernels::sum_pool(self.data(), b * c, h, w, factor),
            vec![b, c, h / factor, w / factor],
            SumPoolOp { factor },
            vec![self.clone()],
        )
    }
}
