//! Layers of the toy model with hand-written backward passes.
//!
//! Activations are stored channel-major: channel `c` of a `C x T` buffer is
//! `buf[c * T..(c + 1) * T]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Dilated-conv layers per filter block; layer `k` (1-based) has dilation
/// `2^(k-1)`.
pub const BLOCK_LAYERS: usize = 10;
pub const KERNEL_SIZE: usize = 3;

pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators keep the loop vectorizable while the summation
    // order stays fixed
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for (j, slot) in acc.iter_mut().enumerate() {
            *slot += a[4 * i + j] * b[4 * i + j];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn uniform<R: Rng + ?Sized>(n: usize, bound: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

/// Valid output range `[lo, hi)` for a tap that reads `t + offset`.
fn tap_range(len: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset.max(0)).max(0) as usize;
    (lo.min(len), hi.max(lo.min(len)))
}

/// "Same"-padded 1-D convolution with a centered, dilated kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
    /// `[out][in][tap]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv1d {
    pub fn init<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let bound = gain * (6.0 / ((in_ch + out_ch) * kernel) as f64).sqrt();
        Self {
            in_ch,
            out_ch,
            kernel,
            dilation,
            weight: uniform(out_ch * in_ch * kernel, bound, rng),
            bias: vec![0.0; out_ch],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
            ..self.clone()
        }
    }

    fn offset(&self, tap: usize) -> isize {
        (tap as isize - (self.kernel as isize - 1) / 2) * self.dilation as isize
    }

    /// Adds the convolution of `input` (in_ch x len) plus bias into `out`.
    pub fn forward_add(&self, input: &[f64], len: usize, out: &mut [f64]) {
        for o in 0..self.out_ch {
            let y = &mut out[o * len..(o + 1) * len];
            let b = self.bias[o];
            y.iter_mut().for_each(|v| *v += b);
            for i in 0..self.in_ch {
                let x = &input[i * len..(i + 1) * len];
                for tap in 0..self.kernel {
                    let w = self.weight[(o * self.in_ch + i) * self.kernel + tap];
                    let off = self.offset(tap);
                    let (lo, hi) = tap_range(len, off);
                    if lo >= hi {
                        continue;
                    }
                    let src = (lo as isize + off) as usize;
                    axpy(&mut y[lo..hi], w, &x[src..src + (hi - lo)]);
                }
            }
        }
    }

    /// Accumulates parameter gradients into `grads` and input gradients into
    /// `grad_in`.
    pub fn backward(
        &self,
        input: &[f64],
        grad_out: &[f64],
        len: usize,
        grad_in: &mut [f64],
        grads: &mut Conv1d,
    ) {
        for o in 0..self.out_ch {
            let gy = &grad_out[o * len..(o + 1) * len];
            grads.bias[o] += gy.iter().sum::<f64>();
            for i in 0..self.in_ch {
                let x = &input[i * len..(i + 1) * len];
                for tap in 0..self.kernel {
                    let widx = (o * self.in_ch + i) * self.kernel + tap;
                    let off = self.offset(tap);
                    let (lo, hi) = tap_range(len, off);
                    if lo >= hi {
                        continue;
                    }
                    let src = (lo as isize + off) as usize;
                    let n = hi - lo;
                    grads.weight[widx] += dot(&gy[lo..hi], &x[src..src + n]);
                    let gx = &mut grad_in[i * len..(i + 1) * len];
                    axpy(&mut gx[src..src + n], self.weight[widx], &gy[lo..hi]);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockLayer {
    pub conv: Conv1d,
    /// Projection of the condition features, `[channel][cond_dim]`.
    pub cond: Vec<f64>,
}

/// Neural filter block: input expansion, ten dilated tanh conv layers with
/// residual and skip connections, projection back to one channel, and a
/// residual connection around the whole block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBlock {
    pub channels: usize,
    pub cond_dims: usize,
    pub w_in: Vec<f64>,
    pub b_in: Vec<f64>,
    pub layers: Vec<BlockLayer>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockCache {
    input: Vec<f64>,
    layer_inputs: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    skip: Vec<f64>,
}

impl FilterBlock {
    pub fn init<R: Rng + ?Sized>(
        channels: usize,
        cond_dims: usize,
        out_scale: f64,
        rng: &mut R,
    ) -> Self {
        let w_in = uniform(channels, 1.0, rng);
        let layers = (0..BLOCK_LAYERS)
            .map(|k| BlockLayer {
                conv: Conv1d::init(channels, channels, KERNEL_SIZE, 1 << k, 1.0, rng),
                cond: uniform(
                    channels * cond_dims,
                    (3.0 / cond_dims.max(1) as f64).sqrt() * 0.5,
                    rng,
                ),
            })
            .collect();
        let w_out = uniform(channels, out_scale / (channels as f64).sqrt(), rng);
        Self {
            channels,
            cond_dims,
            w_in,
            b_in: vec![0.0; channels],
            layers,
            w_out,
            b_out: 0.0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            channels: self.channels,
            cond_dims: self.cond_dims,
            w_in: vec![0.0; self.w_in.len()],
            b_in: vec![0.0; self.b_in.len()],
            layers: self
                .layers
                .iter()
                .map(|l| BlockLayer {
                    conv: l.conv.zeros_like(),
                    cond: vec![0.0; l.cond.len()],
                })
                .collect(),
            w_out: vec![0.0; self.w_out.len()],
            b_out: 0.0,
        }
    }

    /// Input span that influences one output sample.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .layers
            .iter()
            .map(|l| (l.conv.kernel - 1) * l.conv.dilation)
            .sum::<usize>()
    }

    pub(crate) fn forward(
        &self,
        x: &[f64],
        cond: &[f64],
        keep_cache: bool,
    ) -> (Vec<f64>, Option<BlockCache>) {
        let len = x.len();
        let c_n = self.channels;
        let mut u = vec![0.0; c_n * len];
        for c in 0..c_n {
            let row = &mut u[c * len..(c + 1) * len];
            let (w, b) = (self.w_in[c], self.b_in[c]);
            for (r, xv) in row.iter_mut().zip(x) {
                *r = w * xv + b;
            }
        }
        let mut skip = vec![0.0; c_n * len];
        let mut layer_inputs = Vec::new();
        let mut acts = Vec::new();
        for layer in &self.layers {
            let mut z = vec![0.0; c_n * len];
            layer.conv.forward_add(&u, len, &mut z);
            for c in 0..c_n {
                let zc = &mut z[c * len..(c + 1) * len];
                for d in 0..self.cond_dims {
                    axpy(zc, layer.cond[c * self.cond_dims + d], &cond[d * len..(d + 1) * len]);
                }
            }
            z.iter_mut().for_each(|v| *v = v.tanh());
            let a = z;
            let mut next = u.clone();
            for ((n, s), av) in next.iter_mut().zip(skip.iter_mut()).zip(&a) {
                *n += av;
                *s += av;
            }
            if keep_cache {
                layer_inputs.push(std::mem::replace(&mut u, next));
                acts.push(a);
            } else {
                u = next;
            }
        }
        let mut y = x.to_vec();
        y.iter_mut().for_each(|v| *v += self.b_out);
        for c in 0..c_n {
            axpy(&mut y, self.w_out[c], &skip[c * len..(c + 1) * len]);
        }
        let cache = keep_cache.then(|| BlockCache {
            input: x.to_vec(),
            layer_inputs,
            acts,
            skip,
        });
        (y, cache)
    }

    /// Returns `dL/dx`; parameter gradients go to `grads` and condition
    /// gradients are added to `grad_cond`.
    pub(crate) fn backward(
        &self,
        cache: &BlockCache,
        cond: &[f64],
        grad_y: &[f64],
        grads: &mut FilterBlock,
        grad_cond: &mut [f64],
    ) -> Vec<f64> {
        let len = grad_y.len();
        let c_n = self.channels;
        let mut grad_x = grad_y.to_vec();
        grads.b_out += grad_y.iter().sum::<f64>();
        let mut grad_skip = vec![0.0; c_n * len];
        for c in 0..c_n {
            grads.w_out[c] += dot(grad_y, &cache.skip[c * len..(c + 1) * len]);
            axpy(&mut grad_skip[c * len..(c + 1) * len], self.w_out[c], grad_y);
        }
        // gradient w.r.t. the residual stream after the current layer
        let mut grad_u = vec![0.0; c_n * len];
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let a = &cache.acts[k];
            let mut grad_z = vec![0.0; c_n * len];
            for i in 0..c_n * len {
                let ga = grad_skip[i] + grad_u[i];
                grad_z[i] = ga * (1.0 - a[i] * a[i]);
            }
            let g_layer = &mut grads.layers[k];
            for c in 0..c_n {
                let gz = &grad_z[c * len..(c + 1) * len];
                for d in 0..self.cond_dims {
                    let cd = &cond[d * len..(d + 1) * len];
                    g_layer.cond[c * self.cond_dims + d] += dot(gz, cd);
                    axpy(
                        &mut grad_cond[d * len..(d + 1) * len],
                        layer.cond[c * self.cond_dims + d],
                        gz,
                    );
                }
            }
            // residual path passes grad_u through unchanged
            layer.conv.backward(
                &cache.layer_inputs[k],
                &grad_z,
                len,
                &mut grad_u,
                &mut g_layer.conv,
            );
        }
        for c in 0..c_n {
            let gu = &grad_u[c * len..(c + 1) * len];
            grads.w_in[c] += dot(gu, &cache.input);
            grads.b_in[c] += gu.iter().sum::<f64>();
            axpy(&mut grad_x, self.w_in[c], gu);
        }
        grad_x
    }
}

/// Frame-level condition network: two kernel-3 convolutions with a tanh in
/// between, applied to standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionNet {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
}

#[derive(Debug, Clone)]
pub(crate) struct ConditionCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
}

impl ConditionNet {
    pub fn init<R: Rng + ?Sized>(
        feature_dims: usize,
        hidden: usize,
        cond_dims: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            conv1: Conv1d::init(feature_dims, hidden, KERNEL_SIZE, 1, 1.0, rng),
            conv2: Conv1d::init(hidden, cond_dims, KERNEL_SIZE, 1, 1.0, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv1: self.conv1.zeros_like(),
            conv2: self.conv2.zeros_like(),
        }
    }

    /// `input` is `feature_dims x frames`, channel-major.
    pub(crate) fn forward(
        &self,
        input: &[f64],
        frames: usize,
        keep_cache: bool,
    ) -> (Vec<f64>, Option<ConditionCache>) {
        let mut hidden = vec![0.0; self.conv1.out_ch * frames];
        self.conv1.forward_add(input, frames, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.tanh());
        let mut out = vec![0.0; self.conv2.out_ch * frames];
        self.conv2.forward_add(&hidden, frames, &mut out);
        let cache = keep_cache.then(|| ConditionCache {
            input: input.to_vec(),
            hidden,
        });
        (out, cache)
    }

    pub(crate) fn backward(
        &self,
        cache: &ConditionCache,
        grad_out: &[f64],
        frames: usize,
        grads: &mut ConditionNet,
    ) {
        let mut grad_hidden = vec![0.0; cache.hidden.len()];
        self.conv2
            .backward(&cache.hidden, grad_out, frames, &mut grad_hidden, &mut grads.conv2);
        for (g, h) in grad_hidden.iter_mut().zip(&cache.hidden) {
            *g *= 1.0 - h * h;
        }
        let mut grad_in = vec![0.0; cache.input.len()];
        self.conv1
            .backward(&cache.input, &grad_hidden, frames, &mut grad_in, &mut grads.conv1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn receptive_field_is_2047() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = FilterBlock::init(2, 1, 1.0, &mut rng);
        assert_eq!(b.receptive_field(), 2047);
        let dil: Vec<usize> = b.layers.iter().map(|l| l.conv.dilation).collect();
        assert_eq!(dil, (1..=10).map(|k| 1usize << (k - 1)).collect::<Vec<_>>());
    }

    #[test]
    fn perturbation_outside_receptive_field_has_no_effect() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = FilterBlock::init(3, 1, 1.0, &mut rng);
        let len = 5000;
        let x: Vec<f64> = (0..len).map(|t| ((t * 7919) % 113) as f64 / 113.0 - 0.5).collect();
        let cond = vec![0.1; len];
        let (y0, _) = b.forward(&x, &cond, false);
        let t0 = 2000;
        let mut far = x.clone();
        far[t0 + 1024] += 1.0;
        let (y1, _) = b.forward(&far, &cond, false);
        assert_eq!(y0[t0].to_bits(), y1[t0].to_bits());
        let mut near = x.clone();
        near[t0 + 1023] += 1.0;
        let (y2, _) = b.forward(&near, &cond, false);
        assert_ne!(y0[t0], y2[t0]);
    }

    #[test]
    fn conv_backward_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv1d::init(2, 3, 3, 4, 1.0, &mut rng);
        let len = 20;
        let x: Vec<f64> = (0..2 * len).map(|i| (i as f64 * 0.37).sin()).collect();
        let gy: Vec<f64> = (0..3 * len).map(|i| (i as f64 * 0.11).cos()).collect();
        let loss = |c: &Conv1d, x: &[f64]| {
            let mut y = vec![0.0; 3 * len];
            c.forward_add(x, len, &mut y);
            dot(&y, &gy)
        };
        let mut grads = conv.zeros_like();
        let mut gx = vec![0.0; 2 * len];
        conv.backward(&x, &gy, len, &mut gx, &mut grads);
        for i in 0..conv.weight.len() {
            let mut p = conv.clone();
            p.weight[i] += 1e-6;
            let mut m = conv.clone();
            m.weight[i] -= 1e-6;
            let fd = (loss(&p, &x) - loss(&m, &x)) / 2e-6;
            assert!((fd - grads.weight[i]).abs() < 1e-7);
        }
        for i in 0..x.len() {
            let mut p = x.clone();
            p[i] += 1e-6;
            let mut m = x.clone();
            m[i] -= 1e-6;
            let fd = (loss(&conv, &p) - loss(&conv, &m)) / 2e-6;
            assert!((fd - gx[i]).abs() < 1e-7);
        }
    }
}
