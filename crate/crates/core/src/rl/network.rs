//! Fully connected Q-network with layer normalization and dropout on the
//! first two hidden blocks, hand-written backpropagation and Adam.
//!
//! All parameters live in one flat vector so that target syncs, optimizer
//! steps and serialization are plain slice operations.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, NdFloat};
use num_traits::{FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
/// Hidden blocks that get layer normalization and dropout.
const NORMED_BLOCKS: usize = 2;

pub trait Scalar: NdFloat + FromPrimitive + ToPrimitive {}
impl<T: NdFloat + FromPrimitive + ToPrimitive> Scalar for T {}

#[inline]
fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).unwrap()
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    weights: Vec<(Slot, usize, usize)>,
    biases: Vec<Slot>,
    gains: Vec<Slot>,
    shifts: Vec<Slot>,
    total: usize,
}

impl Layout {
    fn new(dims: &[usize]) -> Layout {
        let mut offset = 0;
        let mut take = |len: usize| {
            let s = Slot { offset, len };
            offset += len;
            s
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut gains = Vec::new();
        let mut shifts = Vec::new();
        let n_layers = dims.len() - 1;
        for l in 0..n_layers {
            let (i, o) = (dims[l], dims[l + 1]);
            weights.push((take(i * o), i, o));
            biases.push(take(o));
            if l < NORMED_BLOCKS.min(n_layers - 1) {
                gains.push(take(o));
                shifts.push(take(o));
            }
        }
        Layout {
            weights,
            biases,
            gains,
            shifts,
            total: offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork<T> {
    dims: Vec<usize>,
    pub dropout: f64,
    pub params: Vec<T>,
}

/// Forward-pass mode. Dropout is only active in `Train`.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

struct LayerCache<T> {
    input: Array2<T>,
    /// Normalized pre-activation and per-row inverse std, for normed blocks.
    norm: Option<(Array2<T>, Array1<T>)>,
    /// Value fed to the ReLU.
    pre_act: Array2<T>,
    /// Dropout mask already scaled by `1 / (1 - p)`.
    drop: Option<Array2<T>>,
}

pub struct ForwardCache<T> {
    layers: Vec<LayerCache<T>>,
}

impl<T: Scalar> QNetwork<T> {
    /// He-uniform weights, zero biases, unit gains.
    pub fn new(input: usize, hidden: &[usize], output: usize, dropout: f64, rng: &mut impl Rng) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let layout = Layout::new(&dims);
        let mut params = vec![T::zero(); layout.total];
        for &(slot, fan_in, _) in &layout.weights {
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut params[slot.offset..slot.offset + slot.len] {
                *p = lit(rng.random_range(-bound..bound));
            }
        }
        for slot in &layout.gains {
            params[slot.offset..slot.offset + slot.len].fill(T::one());
        }
        QNetwork {
            dims,
            dropout,
            params,
        }
    }

    /// Redraws the output layer: weights uniform in `±bound`, every bias
    /// set to `bias`.
    pub fn init_output(&mut self, bound: f64, bias: f64, rng: &mut impl Rng) {
        let layout = Layout::new(&self.dims);
        let (w, _, _) = *layout.weights.last().expect("network has an output layer");
        for p in &mut self.params[w.offset..w.offset + w.len] {
            *p = if bound > 0.0 { lit(rng.random_range(-bound..bound)) } else { T::zero() };
        }
        let b = *layout.biases.last().expect("network has an output layer");
        self.params[b.offset..b.offset + b.len].fill(lit(bias));
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Rebuilds a network from its shape and flat parameters.
    pub fn from_params(dims: Vec<usize>, dropout: f64, params: Vec<T>) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Format(format!("invalid layer sizes {dims:?}")));
        }
        let total = Layout::new(&dims).total;
        if params.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: params.len(),
            });
        }
        Ok(QNetwork {
            dims,
            dropout,
            params,
        })
    }

    fn layout(&self) -> Layout {
        Layout::new(&self.dims)
    }

    fn weight(&self, s: (Slot, usize, usize)) -> ArrayView2<'_, T> {
        ArrayView2::from_shape((s.1, s.2), &self.params[s.0.offset..s.0.offset + s.0.len]).unwrap()
    }

    fn vector(&self, s: Slot) -> ArrayView1<'_, T> {
        ArrayView1::from(&self.params[s.offset..s.offset + s.len])
    }

    /// Copies parameters from `other` (target-network sync).
    pub fn copy_from(&mut self, other: &QNetwork<T>) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: other.params.len(),
            });
        }
        self.params.copy_from_slice(&other.params);
        Ok(())
    }

    /// Q-values for a batch of (already normalized) states.
    pub fn forward(&self, x: ArrayView2<T>, mode: Mode) -> Result<Array2<T>> {
        self.forward_cached(x, mode, false).map(|(q, _)| q)
    }

    pub fn forward_one(&self, x: &[T]) -> Result<Vec<T>> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(self.forward(view, Mode::Eval)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(
        &self,
        x: ArrayView2<T>,
        mut mode: Mode,
        keep: bool,
    ) -> Result<(Array2<T>, Option<ForwardCache<T>>)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("network input contains non-finite values".into()));
        }
        let layout = self.layout();
        let n_layers = layout.weights.len();
        let mut caches = Vec::new();
        let mut a = x.to_owned();
        for l in 0..n_layers {
            let mut z = a.dot(&self.weight(layout.weights[l]));
            z += &self.vector(layout.biases[l]);
            if l == n_layers - 1 {
                if keep {
                    caches.push(LayerCache {
                        input: a,
                        norm: None,
                        pre_act: Array2::zeros((0, 0)),
                        drop: None,
                    });
                }
                return Ok((z, keep.then_some(ForwardCache { layers: caches })));
            }
            let norm = if l < layout.gains.len() {
                let (xhat, inv) = layer_norm(&z);
                let mut y = &xhat * &self.vector(layout.gains[l]);
                y += &self.vector(layout.shifts[l]);
                z = y;
                Some((xhat, inv))
            } else {
                None
            };
            let pre_act = if keep { z.clone() } else { Array2::zeros((0, 0)) };
            z.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
            let mut drop = None;
            if let Mode::Train(rng) = &mut mode {
                if l < layout.gains.len() && self.dropout > 0.0 {
                    let keep_scale: T = lit(1.0 / (1.0 - self.dropout));
                    let mask = Array2::from_shape_fn(z.raw_dim(), |_| {
                        if rng.random::<f64>() < self.dropout {
                            T::zero()
                        } else {
                            keep_scale
                        }
                    });
                    z *= &mask;
                    drop = Some(mask);
                }
            }
            if keep {
                caches.push(LayerCache {
                    input: a,
                    norm,
                    pre_act,
                    drop,
                });
            }
            a = z;
        }
        unreachable!("network has at least one layer")
    }

    /// Gradient of the loss with respect to every parameter, given the
    /// gradient `dq` with respect to the network output.
    pub fn backward(&self, cache: &ForwardCache<T>, dq: &Array2<T>) -> Vec<T> {
        let layout = self.layout();
        let n_layers = layout.weights.len();
        let mut grads = vec![T::zero(); layout.total];
        let mut g = dq.clone();
        for l in (0..n_layers).rev() {
            let c = &cache.layers[l];
            if l < n_layers - 1 {
                if let Some(mask) = &c.drop {
                    g *= mask;
                }
                g.zip_mut_with(&c.pre_act, |gv, &p| {
                    if p <= T::zero() {
                        *gv = T::zero()
                    }
                });
                if let Some((xhat, inv)) = &c.norm {
                    let gain = self.vector(layout.gains[l]);
                    let dgain = (&g * xhat).sum_axis(Axis(0));
                    let dshift = g.sum_axis(Axis(0));
                    write(&mut grads, layout.gains[l], dgain.iter());
                    write(&mut grads, layout.shifts[l], dshift.iter());
                    let dxhat = &g * &gain;
                    let width: T = lit(xhat.ncols() as f64);
                    let mean_d = dxhat.sum_axis(Axis(1)) / width;
                    let mean_dx = (&dxhat * xhat).sum_axis(Axis(1)) / width;
                    let mut dz = dxhat;
                    for (r, mut row) in dz.rows_mut().into_iter().enumerate() {
                        let xr = xhat.row(r);
                        for (v, &xh) in row.iter_mut().zip(xr) {
                            *v = inv[r] * (*v - mean_d[r] - xh * mean_dx[r]);
                        }
                    }
                    g = dz;
                }
            }
            let dw = c.input.t().dot(&g);
            let db = g.sum_axis(Axis(0));
            write(&mut grads, layout.weights[l].0, dw.iter());
            write(&mut grads, layout.biases[l], db.iter());
            if l > 0 {
                g = g.dot(&self.weight(layout.weights[l]).t());
            }
        }
        grads
    }
}

fn write<'a, T: Scalar + 'a>(grads: &mut [T], slot: Slot, values: impl Iterator<Item = &'a T>) {
    for (dst, v) in grads[slot.offset..slot.offset + slot.len].iter_mut().zip(values) {
        *dst = *v;
    }
}

/// Row-wise normalization; returns the normalized matrix and 1/std per row.
fn layer_norm<T: Scalar>(z: &Array2<T>) -> (Array2<T>, Array1<T>) {
    let width: T = lit(z.ncols() as f64);
    let eps: T = lit(LN_EPS);
    let mut xhat = z.clone();
    let mut inv = Array1::zeros(z.nrows());
    for (r, mut row) in xhat.rows_mut().into_iter().enumerate() {
        let mean = row.sum() / width;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).fold(T::zero(), |a, b| a + b) / width;
        let is = T::one() / (var + eps).sqrt();
        row.mapv_inplace(|v| (v - mean) * is);
        inv[r] = is;
    }
    (xhat, inv)
}

/// Adaptive moment estimation over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    pub fn update(&mut self, params: &mut [T], grads: &[T]) {
        self.step += 1;
        let t = self.step as i32;
        let b1: T = lit(self.beta1);
        let b2: T = lit(self.beta2);
        let one = T::one();
        let c1: T = lit(1.0 - self.beta1.powi(t));
        let c2: T = lit(1.0 - self.beta2.powi(t));
        let lr: T = lit(self.lr);
        let eps: T = lit(self.eps);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}
