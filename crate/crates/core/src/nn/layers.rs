use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::Tensor;

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    fn accumulate(&mut self, g: &[f64]) {
        self.grad
            .data_mut()
            .iter_mut()
            .zip(g)
            .for_each(|(a, b)| *a += b);
    }
}

/// Mutable view handed out by [`Visit::visit_mut`].
pub enum Slot<'a> {
    Param(&'a mut Param),
    Buffer(&'a mut Tensor),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Param,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

/// Named traversal of parameters and buffers, in a fixed order.
pub trait Visit {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, TensorKind));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>));
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Uniform in `±sqrt(6 / fan_in)`.
pub(crate) fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

/// Output positions `ot` for which `ot * stride + k - pad` lands inside `0..t`.
#[inline]
fn valid_range(k: usize, t: usize, t_out: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    if t + pad < k + 1 {
        return (0, 0);
    }
    let hi = ((t - 1 + pad - k) / stride + 1).min(t_out);
    (lo.min(hi), hi)
}

/// 1-D cross-correlation with zero padding. Weight is `[out, in, kernel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Conv1d {
            weight: Param::new(kaiming_uniform(
                &[out_ch, in_ch, kernel],
                in_ch * kernel,
                rng,
            )),
            bias: Param::new(Tensor::zeros(&[out_ch])),
            stride,
            padding,
        }
    }

    pub fn from_weights(
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let (out_ch, _, _) = weight.dims3()?;
        if bias.shape() != [out_ch] {
            return Err(Error::Shape(format!(
                "conv bias {:?} for {out_ch} output channels",
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv stride must be positive".into()));
        }
        Ok(Conv1d {
            weight: Param::new(weight),
            bias: Param::new(bias),
            stride,
            padding,
        })
    }

    fn dims(&self) -> (usize, usize, usize) {
        let s = self.weight.value.shape();
        (s[0], s[1], s[2])
    }

    pub fn out_len(&self, t: usize) -> Result<usize> {
        let (_, _, k) = self.dims();
        let padded = t + 2 * self.padding;
        if padded < k {
            return Err(Error::Shape(format!(
                "kernel {k} does not fit input of length {t} with padding {}",
                self.padding
            )));
        }
        Ok((padded - k) / self.stride + 1)
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let (b, c, t) = x.dims3()?;
        let (_, cin, _) = self.dims();
        if c != cin {
            return Err(Error::Shape(format!(
                "conv expects {cin} channels, got {c}"
            )));
        }
        Ok((b, c, t))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, t) = self.check_input(x)?;
        let (cout, _, k) = self.dims();
        let t_out = self.out_len(t)?;
        let (s, pad) = (self.stride, self.padding);
        let (w, bias, xd) = (self.weight.value.data(), self.bias.value.data(), x.data());
        let mut out = vec![0.0; b * cout * t_out];
        exec::for_each_row(&mut out, t_out, |row, y| {
            let (bi, o) = (row / cout, row % cout);
            y.fill(bias[o]);
            for ci in 0..c {
                let xr = &xd[(bi * c + ci) * t..][..t];
                let wr = &w[(o * c + ci) * k..][..k];
                for (kk, &wv) in wr.iter().enumerate() {
                    let (lo, hi) = valid_range(kk, t, t_out, s, pad);
                    if s == 1 {
                        let src = &xr[lo + kk - pad..hi + kk - pad];
                        y[lo..hi]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(a, v)| *a += wv * v);
                    } else {
                        for ot in lo..hi {
                            y[ot] += wv * xr[ot * s + kk - pad];
                        }
                    }
                }
            }
        });
        Tensor::new(vec![b, cout, t_out], out)
    }

    /// Accumulates weight and bias gradients; returns the input gradient.
    pub fn backward(&mut self, x: &Tensor, gy: &Tensor) -> Result<Tensor> {
        let (b, c, t) = self.check_input(x)?;
        let (cout, _, k) = self.dims();
        let t_out = self.out_len(t)?;
        if gy.shape() != [b, cout, t_out] {
            return Err(Error::Shape(format!(
                "conv output gradient {:?}, expected {:?}",
                gy.shape(),
                [b, cout, t_out]
            )));
        }
        let (s, pad) = (self.stride, self.padding);
        let (w, xd, g) = (self.weight.value.data(), x.data(), gy.data());

        let mut dx = vec![0.0; b * c * t];
        exec::for_each_row(&mut dx, t, |row, dxr| {
            let (bi, ci) = (row / c, row % c);
            for o in 0..cout {
                let gr = &g[(bi * cout + o) * t_out..][..t_out];
                let wr = &w[(o * c + ci) * k..][..k];
                for (kk, &wv) in wr.iter().enumerate() {
                    let (lo, hi) = valid_range(kk, t, t_out, s, pad);
                    if s == 1 {
                        let dst = &mut dxr[lo + kk - pad..hi + kk - pad];
                        dst.iter_mut()
                            .zip(&gr[lo..hi])
                            .for_each(|(a, v)| *a += wv * v);
                    } else {
                        for ot in lo..hi {
                            dxr[ot * s + kk - pad] += wv * gr[ot];
                        }
                    }
                }
            }
        });

        let mut dw = vec![0.0; cout * c * k];
        exec::for_each_row(&mut dw, c * k, |o, dwr| {
            for bi in 0..b {
                let gr = &g[(bi * cout + o) * t_out..][..t_out];
                for ci in 0..c {
                    let xr = &xd[(bi * c + ci) * t..][..t];
                    for kk in 0..k {
                        let (lo, hi) = valid_range(kk, t, t_out, s, pad);
                        let acc: f64 = (lo..hi).map(|ot| gr[ot] * xr[ot * s + kk - pad]).sum();
                        dwr[ci * k + kk] += acc;
                    }
                }
            }
        });

        let db: Vec<f64> = (0..cout)
            .map(|o| {
                (0..b)
                    .map(|bi| g[(bi * cout + o) * t_out..][..t_out].iter().sum::<f64>())
                    .sum()
            })
            .collect();

        self.weight.accumulate(&dw);
        self.bias.accumulate(&db);
        Tensor::new(vec![b, c, t], dx)
    }
}

impl Visit for Conv1d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, TensorKind)) {
        f(
            &join(prefix, "weight"),
            &self.weight.value,
            TensorKind::Param,
        );
        f(&join(prefix, "bias"), &self.bias.value, TensorKind::Param);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "weight"), Slot::Param(&mut self.weight));
        f(&join(prefix, "bias"), Slot::Param(&mut self.bias));
    }
}

/// Per-channel batch normalization over batch and time.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

/// Saved normalized activations for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl BatchNorm1d {
    pub fn new(channels: usize) -> Self {
        BatchNorm1d {
            gamma: Param::new(Tensor::full(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let (b, c, t) = x.dims3()?;
        if c != self.channels() {
            return Err(Error::Shape(format!(
                "batch norm over {} channels got {c}",
                self.channels()
            )));
        }
        Ok((b, c, t))
    }

    fn normalize(x: &Tensor, mean: &[f64], inv_std: &[f64]) -> Tensor {
        let (_, c, t) = x.dims3().expect("checked");
        let xd = x.data();
        let mut out = vec![0.0; xd.len()];
        exec::for_each_row(&mut out, t, |row, y| {
            let ci = row % c;
            let xr = &xd[row * t..][..t];
            y.iter_mut()
                .zip(xr)
                .for_each(|(o, v)| *o = (v - mean[ci]) * inv_std[ci]);
        });
        Tensor::new(x.shape().to_vec(), out).expect("same shape")
    }

    fn affine(&self, xhat: &Tensor) -> Tensor {
        let (_, c, t) = xhat.dims3().expect("checked");
        let (gamma, beta) = (self.gamma.value.data(), self.beta.value.data());
        let mut out = xhat.clone();
        for (row, y) in out.data_mut().chunks_mut(t).enumerate() {
            let ci = row % c;
            y.iter_mut().for_each(|v| *v = gamma[ci] * *v + beta[ci]);
        }
        out
    }

    /// Normalizes with batch statistics and updates the running averages.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, BnCache)> {
        let (b, c, t) = self.check(x)?;
        let n = (b * t) as f64;
        let xd = x.data();
        let stats: Vec<(f64, f64)> = exec::map_range(c, |ci| {
            let rows = || (0..b).flat_map(move |bi| &xd[(bi * c + ci) * t..][..t]);
            let mean = rows().sum::<f64>() / n;
            let var = rows().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (mean, var)
        });
        let mean: Vec<f64> = stats.iter().map(|s| s.0).collect();
        let inv_std: Vec<f64> = stats
            .iter()
            .map(|s| 1.0 / (s.1 + self.eps).sqrt())
            .collect();
        let m = self.momentum;
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for (ci, (mu, var)) in stats.iter().enumerate() {
            let rm = &mut self.running_mean.data_mut()[ci];
            *rm = (1.0 - m) * *rm + m * mu;
            let rv = &mut self.running_var.data_mut()[ci];
            *rv = (1.0 - m) * *rv + m * var * unbias;
        }
        let xhat = Self::normalize(x, &mean, &inv_std);
        let y = self.affine(&xhat);
        Ok((y, BnCache { xhat, inv_std }))
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let inv_std: Vec<f64> = self
            .running_var
            .data()
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect();
        let xhat = Self::normalize(x, self.running_mean.data(), &inv_std);
        Ok(self.affine(&xhat))
    }

    pub fn backward(&mut self, cache: &BnCache, gy: &Tensor) -> Result<Tensor> {
        let (b, c, t) = self.check(gy)?;
        if cache.xhat.shape() != gy.shape() {
            return Err(Error::Shape(
                "batch norm cache does not match gradient".into(),
            ));
        }
        let n = (b * t) as f64;
        let (g, xh) = (gy.data(), cache.xhat.data());
        let sums: Vec<(f64, f64)> = exec::map_range(c, |ci| {
            let mut dgamma = 0.0;
            let mut dbeta = 0.0;
            for bi in 0..b {
                let off = (bi * c + ci) * t;
                for i in off..off + t {
                    dgamma += g[i] * xh[i];
                    dbeta += g[i];
                }
            }
            (dgamma, dbeta)
        });
        let gamma = self.gamma.value.data();
        let inv_std = &cache.inv_std;
        let mut dx = vec![0.0; g.len()];
        exec::for_each_row(&mut dx, t, |row, out| {
            let ci = row % c;
            let (dgamma, dbeta) = sums[ci];
            let scale = gamma[ci] * inv_std[ci] / n;
            for (j, o) in out.iter_mut().enumerate() {
                let i = row * t + j;
                *o = scale * (n * g[i] - dbeta - xh[i] * dgamma);
            }
        });
        let dgamma: Vec<f64> = sums.iter().map(|s| s.0).collect();
        let dbeta: Vec<f64> = sums.iter().map(|s| s.1).collect();
        self.gamma.accumulate(&dgamma);
        self.beta.accumulate(&dbeta);
        Tensor::new(gy.shape().to_vec(), dx)
    }
}

impl Visit for BatchNorm1d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, TensorKind)) {
        f(&join(prefix, "gamma"), &self.gamma.value, TensorKind::Param);
        f(&join(prefix, "beta"), &self.beta.value, TensorKind::Param);
        f(
            &join(prefix, "running_mean"),
            &self.running_mean,
            TensorKind::Buffer,
        );
        f(
            &join(prefix, "running_var"),
            &self.running_var,
            TensorKind::Buffer,
        );
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "gamma"), Slot::Param(&mut self.gamma));
        f(&join(prefix, "beta"), Slot::Param(&mut self.beta));
        f(
            &join(prefix, "running_mean"),
            Slot::Buffer(&mut self.running_mean),
        );
        f(
            &join(prefix, "running_var"),
            Slot::Buffer(&mut self.running_var),
        );
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|v| v.max(0.0)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(y: &Tensor, gy: &Tensor) -> Tensor {
    let data = y
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(gy.shape().to_vec(), data).expect("same shape")
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer on `[B, in]`. Weight is `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            weight: Param::new(kaiming_uniform(&[outputs, inputs], inputs, rng)),
            bias: Param::new(Tensor::zeros(&[outputs])),
        }
    }

    pub fn from_weights(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (out, _) = weight.dims2()?;
        if bias.shape() != [out] {
            return Err(Error::Shape(format!(
                "dense bias {:?} for {out} outputs",
                bias.shape()
            )));
        }
        Ok(Dense {
            weight: Param::new(weight),
            bias: Param::new(bias),
        })
    }

    fn dims(&self) -> (usize, usize) {
        let s = self.weight.value.shape();
        (s[0], s[1])
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, inputs) = x.dims2()?;
        let (out, win) = self.dims();
        if inputs != win {
            return Err(Error::Shape(format!(
                "dense expects {win} inputs, got {inputs}"
            )));
        }
        let (w, bias, xd) = (self.weight.value.data(), self.bias.value.data(), x.data());
        let mut y = vec![0.0; b * out];
        for bi in 0..b {
            let xr = &xd[bi * inputs..][..inputs];
            for o in 0..out {
                let wr = &w[o * inputs..][..inputs];
                y[bi * out + o] = bias[o] + wr.iter().zip(xr).map(|(a, v)| a * v).sum::<f64>();
            }
        }
        Tensor::new(vec![b, out], y)
    }

    pub fn backward(&mut self, x: &Tensor, gy: &Tensor) -> Result<Tensor> {
        let (b, inputs) = x.dims2()?;
        let (out, _) = self.dims();
        if gy.shape() != [b, out] {
            return Err(Error::Shape(format!(
                "dense output gradient {:?}",
                gy.shape()
            )));
        }
        let (w, xd, g) = (self.weight.value.data(), x.data(), gy.data());
        let mut dx = vec![0.0; b * inputs];
        let mut dw = vec![0.0; out * inputs];
        let mut db = vec![0.0; out];
        for bi in 0..b {
            let xr = &xd[bi * inputs..][..inputs];
            for o in 0..out {
                let go = g[bi * out + o];
                db[o] += go;
                let wr = &w[o * inputs..][..inputs];
                let dwr = &mut dw[o * inputs..][..inputs];
                for i in 0..inputs {
                    dwr[i] += go * xr[i];
                    dx[bi * inputs + i] += go * wr[i];
                }
            }
        }
        self.weight.accumulate(&dw);
        self.bias.accumulate(&db);
        Tensor::new(vec![b, inputs], dx)
    }
}

impl Visit for Dense {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, TensorKind)) {
        f(
            &join(prefix, "weight"),
            &self.weight.value,
            TensorKind::Param,
        );
        f(&join(prefix, "bias"), &self.bias.value, TensorKind::Param);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "weight"), Slot::Param(&mut self.weight));
        f(&join(prefix, "bias"), Slot::Param(&mut self.bias));
    }
}

/// Mean over the time axis: `[B, C, T] -> [B, C]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (b, c, t) = x.dims3()?;
    let data = x
        .data()
        .chunks(t)
        .map(|row| row.iter().sum::<f64>() / t as f64)
        .collect();
    Tensor::new(vec![b, c], data)
}

pub fn global_avg_pool_backward(gy: &Tensor, t: usize) -> Result<Tensor> {
    let (b, c) = gy.dims2()?;
    let mut out = Vec::with_capacity(b * c * t);
    for &g in gy.data() {
        out.extend(std::iter::repeat_n(g / t as f64, t));
    }
    Tensor::new(vec![b, c, t], out)
}

/// Squeeze-and-excitation channel gate.
#[derive(Debug, Clone, PartialEq)]
pub struct SeBlock {
    pub fc1: Dense,
    pub fc2: Dense,
}

#[derive(Debug, Clone)]
pub struct SeCache {
    squeeze: Tensor,
    hidden: Tensor,
    gate: Tensor,
}

impl SeCache {
    /// Per-channel gate values `[B, C]`, each in `(0, 1)`.
    pub fn gate(&self) -> &Tensor {
        &self.gate
    }

    pub fn squeeze(&self) -> &Tensor {
        &self.squeeze
    }
}

impl SeBlock {
    pub fn new(channels: usize, reduction: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Config(format!(
                "SE reduction {reduction} does not divide {channels} channels"
            )));
        }
        let hidden = channels / reduction;
        Ok(SeBlock {
            fc1: Dense::new(channels, hidden, rng),
            fc2: Dense::new(hidden, channels, rng),
        })
    }

    pub fn channels(&self) -> usize {
        self.fc1.dims().1
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, SeCache)> {
        let (_, c, t) = x.dims3()?;
        if c != self.channels() {
            return Err(Error::Shape(format!(
                "SE block over {} channels got {c}",
                self.channels()
            )));
        }
        let squeeze = global_avg_pool(x)?;
        let hidden = relu(&self.fc1.forward(&squeeze)?);
        let z = self.fc2.forward(&hidden)?;
        let gate = Tensor::new(
            z.shape().to_vec(),
            z.data().iter().map(|&v| sigmoid(v)).collect(),
        )?;
        let mut out = x.clone();
        for (row, y) in out.data_mut().chunks_mut(t).enumerate() {
            let w = gate.data()[row];
            y.iter_mut().for_each(|v| *v *= w);
        }
        Ok((
            out,
            SeCache {
                squeeze,
                hidden,
                gate,
            },
        ))
    }

    pub fn backward(&mut self, x: &Tensor, cache: &SeCache, gy: &Tensor) -> Result<Tensor> {
        let (b, c, t) = x.dims3()?;
        if gy.shape() != x.shape() {
            return Err(Error::Shape("SE gradient shape differs from input".into()));
        }
        let (xd, g, gate) = (x.data(), gy.data(), cache.gate.data());
        let mut dx = vec![0.0; xd.len()];
        let mut dz = vec![0.0; b * c];
        for row in 0..b * c {
            let xr = &xd[row * t..][..t];
            let gr = &g[row * t..][..t];
            let dgate: f64 = xr.iter().zip(gr).map(|(a, v)| a * v).sum();
            dz[row] = dgate * gate[row] * (1.0 - gate[row]);
            dx[row * t..][..t]
                .iter_mut()
                .zip(gr)
                .for_each(|(d, v)| *d = v * gate[row]);
        }
        let dz = Tensor::new(vec![b, c], dz)?;
        let dh = self.fc2.backward(&cache.hidden, &dz)?;
        let dh = relu_backward(&cache.hidden, &dh);
        let ds = self.fc1.backward(&cache.squeeze, &dh)?;
        let dsq = global_avg_pool_backward(&ds, t)?;
        dx.iter_mut().zip(dsq.data()).for_each(|(a, v)| *a += v);
        Tensor::new(vec![b, c, t], dx)
    }
}

impl Visit for SeBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, TensorKind)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}
