//! Dense f64 tensors with reverse-mode differentiation on a Wengert tape.
//!
//! A `Tape` records primitive applications in topological order; `backward`
//! walks them in reverse, accumulating vector-Jacobian products. A tape and
//! the tensors it tracks are confined to one thread (they share `Rc` state);
//! independent tapes may run in parallel, and a non-recording tape gives
//! plain forward math with no bookkeeping.
//!
//! There is no broadcasting beyond the bias add: every other shape mismatch
//! is an error, so transcription bugs in the attention algebra surface as
//! structured errors instead of silently reshaped math.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("backward target is not recorded on this tape")]
    Untracked,
}

/// Derivative of arccos is clipped where |argument| exceeds this bound away
/// from 1, keeping gradients finite at the geodesic boundary.
pub const ACOS_CLIP: f64 = 1e-7;
const LAYER_NORM_EPS: f64 = 1e-12;

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Accumulates contributions into per-node gradient buffers during backward.
pub(crate) struct GradSink<'a> {
    grads: &'a mut [Option<Vec<f64>>],
}

impl GradSink<'_> {
    fn add(&mut self, node: usize, contrib: &[f64]) {
        match &mut self.grads[node] {
            Some(g) => {
                debug_assert_eq!(g.len(), contrib.len());
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi += *ci;
                }
            }
            slot => *slot = Some(contrib.to_vec()),
        }
    }
}

type BackFn = Box<dyn Fn(&[f64], &mut GradSink<'_>)>;

struct Node {
    back: Option<BackFn>,
}

struct TapeInner {
    recording: bool,
    nodes: Vec<Node>,
}

static TAPE_IDS: AtomicU64 = AtomicU64::new(1);

/// Wengert list of recorded primitives; inputs always precede their users.
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
    id: u64,
}

/// Dense row-major tensor. `node` ties it to the tape that produced it;
/// constants carry no node and never receive gradients.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    node: Option<usize>,
    tape: u64,
}

impl Tensor {
    pub fn constant(shape: &[usize], data: Vec<f64>) -> Tensor {
        assert_eq!(numel(shape), data.len(), "shape {shape:?} does not match data length {}", data.len());
        assert!(!data.is_empty(), "zero-sized tensors are not supported");
        Tensor { shape: shape.to_vec(), data: Rc::new(data), node: None, tape: 0 }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::constant(&[1], vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn value(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "value() needs a scalar, shape is {:?}", self.shape);
        self.data[0]
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }
}

/// Gradients produced by one backward pass, addressable by tensor.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn of(&self, t: &Tensor) -> Option<&[f64]> {
        let node = t.node?;
        assert_eq!(t.tape, self.tape, "tensor belongs to a different tape");
        self.grads.get(node)?.as_deref()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner { recording: true, nodes: Vec::new() })),
            id: TAPE_IDS.fetch_add(1, Ordering::Relaxed),
        }
    }

    /// Forward-only math: nothing is recorded, backward is unavailable.
    pub fn no_grad() -> Tape {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner { recording: false, nodes: Vec::new() })),
            id: TAPE_IDS.fetch_add(1, Ordering::Relaxed),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.inner.borrow().recording
    }

    /// A differentiable input; its gradient is retrievable after backward.
    pub fn leaf(&self, shape: &[usize], data: Vec<f64>) -> Tensor {
        assert_eq!(numel(shape), data.len(), "shape {shape:?} does not match data length {}", data.len());
        assert!(!data.is_empty(), "zero-sized tensors are not supported");
        if !self.is_recording() {
            return Tensor::constant(shape, data);
        }
        let node = self.push(None);
        Tensor { shape: shape.to_vec(), data: Rc::new(data), node: Some(node), tape: self.id }
    }

    fn push(&self, back: Option<BackFn>) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { back });
        inner.nodes.len() - 1
    }

    /// The input's node id if it participates in this tape's gradient flow.
    fn tracked(&self, t: &Tensor) -> Option<usize> {
        let node = t.node?;
        assert_eq!(t.tape, self.id, "tensor belongs to a different tape");
        Some(node)
    }

    fn out(&self, shape: Vec<usize>, data: Rc<Vec<f64>>, back: Option<BackFn>) -> Tensor {
        match back {
            Some(b) => {
                let id = self.push(Some(b));
                Tensor { shape, data, node: Some(id), tape: self.id }
            }
            None => Tensor { shape, data, node: None, tape: 0 },
        }
    }

    // ---- pointwise helpers ----------------------------------------------

    fn unary(
        &self,
        a: &Tensor,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let y: Rc<Vec<f64>> = Rc::new(a.data.iter().map(|&x| f(x)).collect());
        let back = self.tracked(a).map(|pa| {
            let xs = a.data.clone();
            let ys = y.clone();
            Box::new(move |g: &[f64], sink: &mut GradSink<'_>| {
                let contrib: Vec<f64> =
                    g.iter().zip(xs.iter().zip(ys.iter())).map(|(gi, (&x, &yv))| gi * df(x, yv)).collect();
                sink.add(pa, &contrib);
            }) as BackFn
        });
        self.out(a.shape.clone(), y, back)
    }

    fn binary(
        &self,
        op: &'static str,
        a: &Tensor,
        b: &Tensor,
        f: impl Fn(f64, f64) -> f64,
        dfa: impl Fn(f64, f64) -> f64 + 'static,
        dfb: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Tensor, NumericsError> {
        if a.shape != b.shape {
            return Err(NumericsError::ShapeMismatch { op, left: a.shape.clone(), right: b.shape.clone() });
        }
        let y: Rc<Vec<f64>> =
            Rc::new(a.data.iter().zip(b.data.iter()).map(|(&x, &z)| f(x, z)).collect());
        let pa = self.tracked(a);
        let pb = self.tracked(b);
        let back = if pa.is_some() || pb.is_some() {
            let xs = a.data.clone();
            let zs = b.data.clone();
            Some(Box::new(move |g: &[f64], sink: &mut GradSink<'_>| {
                if let Some(pa) = pa {
                    let contrib: Vec<f64> = g
                        .iter()
                        .zip(xs.iter().zip(zs.iter()))
                        .map(|(gi, (&x, &z))| gi * dfa(x, z))
                        .collect();
                    sink.add(pa, &contrib);
                }
                if let Some(pb) = pb {
                    let contrib: Vec<f64> = g
                        .iter()
                        .zip(xs.iter().zip(zs.iter()))
                        .map(|(gi, (&x, &z))| gi * dfb(x, z))
                        .collect();
                    sink.add(pb, &contrib);
                }
            }) as BackFn)
        } else {
            None
        };
        Ok(self.out(a.shape.clone(), y, back))
    }

    // ---- arithmetic -------------------------------------------------------

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
        self.binary("add", a, b, |x, z| x + z, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
        self.binary("sub", a, b, |x, z| x - z, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
        self.binary("mul", a, b, |x, z| x * z, |_, z| z, |x, _| x)
    }

    pub fn div(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
        self.binary("div", a, b, |x, z| x / z, |_, z| 1.0 / z, |x, z| -x / (z * z))
    }

    pub fn scale(&self, a: &Tensor, c: f64) -> Tensor {
        self.unary(a, |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, a: &Tensor, c: f64) -> Tensor {
        self.unary(a, |x| x + c, |_, _| 1.0)
    }

    pub fn neg(&self, a: &Tensor) -> Tensor {
        self.scale(a, -1.0)
    }

    pub fn abs(&self, a: &Tensor) -> Tensor {
        self.unary(a, f64::abs, |x, _| if x == 0.0 { 0.0 } else { x.signum() })
    }

    pub fn sin(&self, a: &Tensor) -> Tensor {
        self.unary(a, f64::sin, |x, _| x.cos())
    }

    pub fn cos(&self, a: &Tensor) -> Tensor {
        self.unary(a, f64::cos, |x, _| -x.sin())
    }

    pub fn sqrt(&self, a: &Tensor) -> Tensor {
        self.unary(a, f64::sqrt, |_, y| 0.5 / y)
    }

    /// arccos of the input clamped to [-1, 1]. The derivative is zero outside
    /// the clamp (the forward is flat there) and, inside, is evaluated at an
    /// argument clipped to 1 - ACOS_CLIP from the boundary so it stays finite
    /// at 0 and pi.
    pub fn acos_clip(&self, a: &Tensor) -> Tensor {
        self.unary(
            a,
            |x| x.clamp(-1.0, 1.0).acos(),
            |x, _| {
                if x.abs() > 1.0 {
                    return 0.0;
                }
                let xc = x.clamp(-(1.0 - ACOS_CLIP), 1.0 - ACOS_CLIP);
                -1.0 / (1.0 - xc * xc).sqrt()
            },
        )
    }

    /// GELU, tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
    pub fn gelu(&self, a: &Tensor) -> Tensor {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044715;
        self.unary(
            a,
            |x| 0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh()),
            |x, _| {
                let t = (C * (x + A * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
            },
        )
    }

    pub fn sum_all(&self, a: &Tensor) -> Tensor {
        let total: f64 = a.data.iter().sum();
        let n = a.data.len();
        let back = self.tracked(a).map(|pa| {
            Box::new(move |g: &[f64], sink: &mut GradSink<'_>| {
                sink.add(pa, &vec![g[0]; n]);
            }) as BackFn
        });
        self.out(vec![1], Rc::new(vec![total]), back)
    }

    pub fn mean_all(&self, a: &Tensor) -> Tensor {
        let n = a.data.len() as f64;
        let s = self.sum_all(a);
        self.scale(&s, 1.0 / n)
    }

    // ---- linear algebra ---------------------------------------------------

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
        let mismatch = || NumericsError::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        };
        if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
            return Err(mismatch());
        }
        let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
        let mut y = vec![0.0; m * n];
        for i in 0..m {
            for kk in 0..k {
                let aik = a.data[i * k + kk];
                if aik == 0.0 {
                    continue;
                }
                let brow = &b.data[kk * n..(kk + 1) * n];
                let yrow = &mut y[i * n..(i + 1) * n];
                for (yj, bj) in yrow.iter_mut().zip(brow) {
                    *yj += aik * bj;
                }
            }
        }
        let pa = self.tracked(a);
        let pb = self.tracked(b);
        let back = if pa.is_some() || pb.is_some() {
            let ad = a.data.clone();
            let bd = b.data.clone();
            Some(Box::new(move |g: &[f64], sink: &mut GradSink<'_>| {
                if let Some(pa) = pa {
                    // dA = g B'
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for kk in 0..k {
                            let mut acc = 0.0;
                            let grow = &g[i * n..(i + 1) * n];
                            let brow = &bd[kk * n..(kk + 1) * n];
                            for (gj, bj) in grow.iter().zip(brow) {
                                acc += gj * bj;
                            }
                            da[i * k + kk] = acc;
                        }
                    }
                    sink.add(pa, &da);
                }
                if let Some(pb) = pb {
                    // dB = A' g
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let aik = ad[i * k + kk];
                            if aik == 0.0 {
                                continue;
                            }
                            let dbrow = &mut db[kk * n..(kk + 1) * n];
                            for (dj, gj) in dbrow.iter_mut().zip(grow) {
                                *dj += aik * gj;
                            }
                        }
                    }
                    sink.add(pb, &db);
                }
            }) as BackFn)
        } else {
            None
        };
        Ok(self.out(vec![m, n], Rc::new(y), back))
    }

    pub fn transpose2(&self, a: &Tensor) -> Result<Tensor, NumericsError> {
        if a.shape.len() != 2 {
            return Err(NumericsError::ShapeMismatch {
                op: "transpose2",
                left: a.shape.clone(),
                right: vec![],
            });
        }
        let (m, n) = (a.shape[0], a.shape[1]);
        let mut y = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                y[j * m + i] = a.data[i * n + j];
            }
        }
        let back = self.tracked(a).map(|pa| {
            Box::new(move |g: &[f64], sink: &mut GradSink<'_>| {
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] = g[j * m + i];
                    }
                }
                sink.add(pa, &da);
            }) as BackFn
        });
        Ok(self.out(vec![n, m], Rc::new(y), back))
    }

    pub fn reshape(&self, a: &Tensor, shape: &[usize]) -> Result<Tensor, NumericsError> {
        if numel(shape) != a.data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "reshape",
                left: a.shape.clone(),
                right: shape.to_vec(),
            });
        }
        let back = self.tracked(a).map(|pa| {
            Box::new(move |g: &[f64], sink: &mut GradSink<'_>| sink.add(pa, g)) as BackFn
        });
        Ok(self.out(shape.to_vec(), a.data.clone(), back))
    }

    /// Sub-range [start, end) along `axis`; all other axes kept whole.
    pub fn slice(
        &self,
        a: &Tensor,
        axis: usize,
        start: usize,
        end: usize,
    ) -> Result<Tensor, NumericsError> {
        if axis >= a.shape.len() || start >= end || end > a.shape[axis] {
            return Err(NumericsError::ShapeMismatch {
                op: "slice",
                left: a.shape.clone(),
                right: vec![axis, start, end],
            });
        }
        let outer: usize = a.shape[..axis].iter().product();
        let alen = a.shape[axis];
        let inner: usize = a.shape[axis + 1..].iter().product();
        let olen = end - start;
        let mut y = vec![0.0; outer * olen * inner];
        for o in 0..outer {
            for s in 0..olen {
                let src = (o * alen + start + s) * inner;
                let dst = (o * olen + s) * inner;
                y[dst..dst + inner].copy_from_slice(&a.data[src..src + inner]);
            }
        }
        let mut shape = a.shape.clone();
        shape[axis] = olen;
        let total = a.data.len();
        let back = self.tracked(a).map(|pa| {
            Box::new(move |g: &[f64], sink: &mut GradSink<'_>| {
                let mut da = vec![0.0; total];
                for o in 0..outer {
                    for s in 0..olen {
                        let dst = (o * alen + start + s) * inner;
                        let src = (o * olen + s) * inner;
                        da[dst..dst + inner].copy_from_slice(&g[src..src + inner]);
                    }
                }
                sink.add(pa, &da);
            }) as BackFn
        });
        Ok(self.out(shape, Rc::new(y), back))
    }

    /// Concatenation along `axis`; inputs must agree on all other axes.
    /// Repeating one tensor several times is allowed and accumulates its
    /// gradient once per occurrence (this is how broadcasts are spelled).
    pub fn concat(&self, parts: &[&Tensor], axis: usize) -> Result<Tensor, NumericsError> {
        assert!(!parts.is_empty(), "concat needs at least one input");
        let rank = parts[0].shape.len();
        let mut axis_total = 0;
        for p in parts {
            let compatible = p.shape.len() == rank
                && axis < rank
                && p.shape
                    .iter()
                    .zip(&parts[0].shape)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat",
                    left: parts[0].shape.clone(),
                    right: p.shape.clone(),
                });
            }
            axis_total += p.shape[axis];
        }
        let outer: usize = parts[0].shape[..axis].iter().product();
        let inner: usize = parts[0].shape[axis + 1..].iter().product();
        let mut shape = parts[0].shape.clone();
        shape[axis] = axis_total;
        let mut y = vec![0.0; outer * axis_total * inner];
        let mut offset = 0;
        let mut segments = Vec::with_capacity(parts.len());
        for p in parts {
            let plen = p.shape[axis];
            for o in 0..outer {
                let src = o * plen * inner;
                let dst = (o * axis_total + offset) * inner;
                y[dst..dst + plen * inner].copy_from_slice(&p.data[src..src + plen * inner]);
            }
            segments.push((self.tracked(p), offset, plen));
            offset += plen;
        }
        let back = if segments.iter().any(|(t, _, _)| t.is_some()) {
            Some(Box::new(move |g: &[f64], sink: &mut GradSink<'_>| {
                for &(tracked, offset, plen) in &segments {
                    let Some(pn) = tracked else { continue };
                    let mut dp = vec![0.0; outer * plen * inner];
                    for o in 0..outer {
                        let src = (o * axis_total + offset) * inner;
                        let dst = o * plen * inner;
                        dp[dst..dst + plen * inner].copy_from_slice(&g[src..src + plen * inner]);
                    }
                    sink.add(pn, &dp);
                }
            }) as BackFn)
        } else {
            None
        };
        Ok(self.out(shape, Rc::new(y), back))
    }

    // ---- normalization and activations -----------------------------------

    /// Softmax over the last axis, computed with per-row max subtraction.
    pub fn softmax_lastdim(&self, a: &Tensor) -> Tensor {
        let n = *a.shape.last().expect("softmax needs rank >= 1");
        let rows = a.data.len() / n;
        let mut y = vec![0.0; a.data.len()];
        for r in 0..rows {
            let row = &a.data[r * n..(r + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &x) in y[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o = (x - max).exp();
                sum += *o;
            }
            for o in y[r * n..(r + 1) * n].iter_mut() {
                *o /= sum;
            }
        }
        let y = Rc::new(y);
        let back = self.tracked(a).map(|pa| {
            let ys = y.clone();
            Box::new(move |g: &[f64], sink: &mut GradSink<'_>| {
                let mut da = vec![0.0; g.len()];
                for r in 0..rows {
                    let yr = &ys[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for ((d, &yv), &gv) in da[r * n..(r + 1) * n].iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                sink.add(pa, &da);
            }) as BackFn
        });
        self.out(a.shape.clone(), y, back)
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// the learned gain and bias.
    pub fn layer_norm(
        &self,
        x: &Tensor,
        gain: &Tensor,
        bias: &Tensor,
    ) -> Result<Tensor, NumericsError> {
        let n = *x.shape.last().expect("layer_norm needs rank >= 1");
        if gain.shape != [n] || bias.shape != [n] {
            return Err(NumericsError::ShapeMismatch {
                op: "layer_norm",
                left: x.shape.clone(),
                right: gain.shape.clone(),
            });
        }
        let rows = x.data.len() / n;
        let mut xhat = vec![0.0; x.data.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &x.data[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for (o, &v) in xhat[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
        }
        let mut y = vec![0.0; x.data.len()];
        for r in 0..rows {
            for j in 0..n {
                y[r * n + j] = xhat[r * n + j] * gain.data[j] + bias.data[j];
            }
        }
        let px = self.tracked(x);
        let pg = self.tracked(gain);
        let pb = self.tracked(bias);
        let back = if px.is_some() || pg.is_some() || pb.is_some() {
            let xhat = Rc::new(xhat);
            let inv_std = Rc::new(inv_std);
            let gd = gain.data.clone();
            Some(Box::new(move |g: &[f64], sink: &mut GradSink<'_>| {
                if let Some(pg) = pg {
                    let mut dg = vec![0.0; n];
                    for r in 0..rows {
                        for (j, d) in dg.iter_mut().enumerate() {
                            *d += g[r * n + j] * xhat[r * n + j];
                        }
                    }
                    sink.add(pg, &dg);
                }
                if let Some(pb) = pb {
                    let mut db = vec![0.0; n];
                    for r in 0..rows {
                        for (j, d) in db.iter_mut().enumerate() {
                            *d += g[r * n + j];
                        }
                    }
                    sink.add(pb, &db);
                }
                if let Some(px) = px {
                    let mut dx = vec![0.0; g.len()];
                    for r in 0..rows {
                        let xh = &xhat[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dxh: Vec<f64> = gr.iter().zip(gd.iter()).map(|(g, w)| g * w).collect();
                        let m1 = dxh.iter().sum::<f64>() / n as f64;
                        let m2 = dxh.iter().zip(xh).map(|(d, x)| d * x).sum::<f64>() / n as f64;
                        for j in 0..n {
                            dx[r * n + j] = inv_std[r] * (dxh[j] - m1 - xh[j] * m2);
                        }
                    }
                    sink.add(px, &dx);
                }
            }) as BackFn)
        } else {
            None
        };
        Ok(self.out(x.shape.clone(), Rc::new(y), back))
    }

    /// The one permitted broadcast: a rank-1 bias added to every row.
    pub fn add_bias(&self, x: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
        let n = *x.shape.last().expect("add_bias needs rank >= 1");
        if b.shape != [n] {
            return Err(NumericsError::ShapeMismatch {
                op: "add_bias",
                left: x.shape.clone(),
                right: b.shape.clone(),
            });
        }
        let rows = x.data.len() / n;
        let mut y = vec![0.0; x.data.len()];
        for r in 0..rows {
            for j in 0..n {
                y[r * n + j] = x.data[r * n + j] + b.data[j];
            }
        }
        let px = self.tracked(x);
        let pb = self.tracked(b);
        let back = if px.is_some() || pb.is_some() {
            Some(Box::new(move |g: &[f64], sink: &mut GradSink<'_>| {
                if let Some(px) = px {
                    sink.add(px, g);
                }
                if let Some(pb) = pb {
                    let mut db = vec![0.0; n];
                    for r in 0..rows {
                        for (j, d) in db.iter_mut().enumerate() {
                            *d += g[r * n + j];
                        }
                    }
                    sink.add(pb, &db);
                }
            }) as BackFn)
        } else {
            None
        };
        Ok(self.out(x.shape.clone(), Rc::new(y), back))
    }

    /// x W + b for 2-D or 3-D x (the leading axes are flattened into rows).
    pub fn linear(&self, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
        let d = *x.shape.last().expect("linear needs rank >= 1");
        let rows = x.numel() / d;
        let flat = self.reshape(x, &[rows, d])?;
        let y = self.matmul(&flat, w)?;
        let y = self.add_bias(&y, b)?;
        let mut shape = x.shape.clone();
        *shape.last_mut().unwrap() = w.shape()[1];
        self.reshape(&y, &shape)
    }

    /// softmax(Q K' / sqrt(d_h)) V for single sequences.
    pub fn scaled_dot_attention(
        &self,
        q: &Tensor,
        k: &Tensor,
        v: &Tensor,
    ) -> Result<Tensor, NumericsError> {
        if q.shape.len() != 2 || k.shape.len() != 2 || q.shape[1] != k.shape[1] {
            return Err(NumericsError::ShapeMismatch {
                op: "scaled_dot_attention",
                left: q.shape.clone(),
                right: k.shape.clone(),
            });
        }
        let d_h = q.shape[1] as f64;
        let kt = self.transpose2(k)?;
        let scores = self.scale(&self.matmul(q, &kt)?, 1.0 / d_h.sqrt());
        let attn = self.softmax_lastdim(&scores);
        self.matmul(&attn, v)
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse pass from a scalar loss; returns per-tensor gradients.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients, NumericsError> {
        if loss.numel() != 1 {
            return Err(NumericsError::NotScalar { shape: loss.shape.clone() });
        }
        let Some(loss_node) = self.tracked(loss) else {
            return Err(NumericsError::Untracked);
        };
        let inner = self.inner.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; inner.nodes.len()];
        grads[loss_node] = Some(vec![1.0]);
        for id in (0..=loss_node).rev() {
            let Some(g) = grads[id].take() else { continue };
            if let Some(back) = &inner.nodes[id].back {
                let mut sink = GradSink { grads: &mut grads };
                back(&g, &mut sink);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { tape: self.id, grads })
    }
}
