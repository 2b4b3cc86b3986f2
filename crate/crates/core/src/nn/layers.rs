use super::{Real, Tensor};
use crate::error::{Error, Result};

/// 2-D cross-correlation (no kernel flip) with zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    /// `out x (in/groups) x kh x kw`
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl<T: Real> Conv2d<T> {
    pub fn new(
        weight: Vec<T>,
        bias: Option<Vec<T>>,
        out_channels: usize,
        in_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 || kernel.0 == 0 || kernel.1 == 0 || stride == 0 || groups == 0 {
            return Err(Error::Shape("conv dimensions must be positive".into()));
        }
        if out_channels % groups != 0 || in_channels % groups != 0 {
            return Err(Error::Shape(format!(
                "{out_channels} outputs / {in_channels} inputs not divisible by {groups} groups"
            )));
        }
        let expect = out_channels * (in_channels / groups) * kernel.0 * kernel.1;
        if weight.len() != expect {
            return Err(Error::Shape(format!("conv weight needs {expect} values, got {}", weight.len())));
        }
        if let Some(b) = &bias {
            if b.len() != out_channels {
                return Err(Error::Shape(format!("conv bias needs {out_channels} values, got {}", b.len())));
            }
        }
        Ok(Conv2d {
            weight,
            bias,
            out_channels,
            in_channels,
            kernel,
            stride,
            pad,
            groups,
        })
    }

    pub fn filter_len(&self) -> usize {
        (self.in_channels / self.groups) * self.kernel.0 * self.kernel.1
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        if h + 2 * self.pad < kh || w + 2 * self.pad < kw {
            return Err(Error::Shape(format!("{h}x{w} input smaller than {kh}x{kw} kernel")));
        }
        Ok((
            (h + 2 * self.pad - kh) / self.stride + 1,
            (w + 2 * self.pad - kw) / self.stride + 1,
        ))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, c, h, w] = x.shape;
        if c != self.in_channels {
            return Err(Error::Shape(format!("conv expects {} channels, got {c}", self.in_channels)));
        }
        let (ho, wo) = self.output_hw(h, w)?;
        let (kh, kw) = self.kernel;
        let cin_g = self.in_channels / self.groups;
        let cout_g = self.out_channels / self.groups;
        let mut out = Tensor::zeros([b, self.out_channels, ho, wo]);
        let mut idx = 0;
        for bi in 0..b {
            for o in 0..self.out_channels {
                let g = o / cout_g;
                let bias = self.bias.as_ref().map_or(0.0, |v| v[o].f64());
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = bias;
                        for ci in 0..cin_g {
                            let ic = g * cin_g + ci;
                            let wbase = (o * cin_g + ci) * kh * kw;
                            let xbase = (bi * c + ic) * h * w;
                            for ky in 0..kh {
                                let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += self.weight[wbase + ky * kw + kx].f64()
                                        * x.data[xbase + iy as usize * w + ix as usize].f64();
                                }
                            }
                        }
                        out.data[idx] = T::of(acc);
                        idx += 1;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Gradients with respect to input, weight and bias.
    pub fn backward(&self, grad_out: &Tensor<T>, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>, Option<Vec<T>>)> {
        let [b, c, h, w] = x.shape;
        let (ho, wo) = self.output_hw(h, w)?;
        if grad_out.shape != [b, self.out_channels, ho, wo] {
            return Err(Error::Shape(format!(
                "conv grad_out {:?} does not match forward output {:?}",
                grad_out.shape,
                [b, self.out_channels, ho, wo]
            )));
        }
        let (kh, kw) = self.kernel;
        let cin_g = self.in_channels / self.groups;
        let cout_g = self.out_channels / self.groups;
        let mut gin = vec![0.0f64; x.data.len()];
        let mut gw = vec![0.0f64; self.weight.len()];
        let mut gb = vec![0.0f64; self.out_channels];
        let mut idx = 0;
        for bi in 0..b {
            for o in 0..self.out_channels {
                let g = o / cout_g;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let go = grad_out.data[idx].f64();
                        idx += 1;
                        if go == 0.0 {
                            continue;
                        }
                        gb[o] += go;
                        for ci in 0..cin_g {
                            let ic = g * cin_g + ci;
                            let wbase = (o * cin_g + ci) * kh * kw;
                            let xbase = (bi * c + ic) * h * w;
                            for ky in 0..kh {
                                let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = xbase + iy as usize * w + ix as usize;
                                    let wi = wbase + ky * kw + kx;
                                    gw[wi] += go * x.data[xi].f64();
                                    gin[xi] += go * self.weight[wi].f64();
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok((
            Tensor {
                shape: x.shape,
                data: gin.into_iter().map(T::of).collect(),
            },
            gw.into_iter().map(T::of).collect(),
            self.bias.as_ref().map(|_| gb.into_iter().map(T::of).collect()),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool {
    pub kernel: usize,
    pub stride: usize,
}

impl MaxPool {
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h < self.kernel || w < self.kernel || self.kernel == 0 || self.stride == 0 {
            return Err(Error::Shape(format!("cannot pool {h}x{w} with kernel {}", self.kernel)));
        }
        Ok(((h - self.kernel) / self.stride + 1, (w - self.kernel) / self.stride + 1))
    }

    /// Output and, per output element, the flat input index of its maximum
    /// (first occurrence on ties).
    pub fn forward<T: Real>(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
        let [b, c, h, w] = x.shape;
        let (ho, wo) = self.output_hw(h, w)?;
        let mut out = Tensor::zeros([b, c, ho, wo]);
        let mut arg = Vec::with_capacity(out.data.len());
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * self.stride * w + ox * self.stride;
                    for ky in 0..self.kernel {
                        for kx in 0..self.kernel {
                            let i = base + (oy * self.stride + ky) * w + ox * self.stride + kx;
                            if x.data[i] > x.data[best] {
                                best = i;
                            }
                        }
                    }
                    out.data[arg.len()] = x.data[best];
                    arg.push(best);
                }
            }
        }
        Ok((out, arg))
    }

    pub fn backward<T: Real>(&self, grad_out: &Tensor<T>, input_shape: [usize; 4], argmax: &[usize]) -> Tensor<T> {
        let mut g = vec![0.0f64; input_shape.iter().product()];
        for (&i, v) in argmax.iter().zip(&grad_out.data) {
            g[i] += v.f64();
        }
        Tensor {
            shape: input_shape,
            data: g.into_iter().map(T::of).collect(),
        }
    }
}

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    Tensor {
        shape: x.shape,
        data: x.data.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
    }
}

pub fn relu_backward<T: Real>(grad_out: &Tensor<T>, x: &Tensor<T>) -> Tensor<T> {
    Tensor {
        shape: x.shape,
        data: grad_out
            .data
            .iter()
            .zip(&x.data)
            .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
            .collect(),
    }
}

/// Fully connected layer over the flattened sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `out x in`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub inputs: usize,
    pub outputs: usize,
}

impl<T: Real> Dense<T> {
    pub fn new(weight: Vec<T>, bias: Vec<T>, inputs: usize, outputs: usize) -> Result<Self> {
        if weight.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::Shape(format!(
                "dense {inputs}->{outputs} got {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Dense {
            weight,
            bias,
            inputs,
            outputs,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.sample_len() != self.inputs {
            return Err(Error::Shape(format!("dense expects {} inputs, got {}", self.inputs, x.sample_len())));
        }
        let b = x.batch();
        let mut out = Tensor::zeros([b, self.outputs, 1, 1]);
        for bi in 0..b {
            let xs = &x.data[bi * self.inputs..(bi + 1) * self.inputs];
            for o in 0..self.outputs {
                let ws = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                let acc: f64 = ws.iter().zip(xs).fold(self.bias[o].f64(), |a, (w, v)| a + w.f64() * v.f64());
                out.data[bi * self.outputs + o] = T::of(acc);
            }
        }
        Ok(out)
    }

    pub fn backward(&self, grad_out: &Tensor<T>, x: &Tensor<T>) -> (Tensor<T>, Vec<T>, Vec<T>) {
        let b = x.batch();
        let mut gin = vec![0.0f64; x.data.len()];
        let mut gw = vec![0.0f64; self.weight.len()];
        let mut gb = vec![0.0f64; self.outputs];
        for bi in 0..b {
            for o in 0..self.outputs {
                let go = grad_out.data[bi * self.outputs + o].f64();
                gb[o] += go;
                for k in 0..self.inputs {
                    gw[o * self.inputs + k] += go * x.data[bi * self.inputs + k].f64();
                    gin[bi * self.inputs + k] += go * self.weight[o * self.inputs + k].f64();
                }
            }
        }
        (
            Tensor {
                shape: x.shape,
                data: gin.into_iter().map(T::of).collect(),
            },
            gw.into_iter().map(T::of).collect(),
            gb.into_iter().map(T::of).collect(),
        )
    }
}

/// Mean softmax cross-entropy over a batch of logits.
#[derive(Debug, Clone, Copy, Default)]
pub struct SoftmaxCrossEntropy;

impl SoftmaxCrossEntropy {
    /// Loss and `∂loss/∂logits`; logits are `B x K` (any trailing 1x1 dims).
    pub fn loss<T: Real>(&self, logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
        let b = logits.batch();
        let k = logits.sample_len();
        if labels.len() != b {
            return Err(Error::Shape(format!("{} labels for batch of {b}", labels.len())));
        }
        let mut grad = vec![0.0f64; b * k];
        let mut total = 0.0;
        for bi in 0..b {
            let row = &logits.data[bi * k..(bi + 1) * k];
            if labels[bi] >= k {
                return Err(Error::InvalidArgument(format!("label {} >= {k} classes", labels[bi])));
            }
            let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v.f64() - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            total += sum.ln() - (row[labels[bi]].f64() - max);
            for j in 0..k {
                let p = exps[j] / sum;
                let target = if j == labels[bi] { 1.0 } else { 0.0 };
                grad[bi * k + j] = (p - target) / b as f64;
            }
        }
        Ok((
            total / b as f64,
            Tensor {
                shape: logits.shape,
                data: grad.into_iter().map(T::of).collect(),
            },
        ))
    }
}
