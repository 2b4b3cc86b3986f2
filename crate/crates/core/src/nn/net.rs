use rand::Rng as _;

use super::layers::{relu_backward, relu_forward, Conv2d, Dense, MaxPool, SoftmaxCrossEntropy};
use super::{Real, Tensor};
use crate::error::{Error, Result};
use crate::filters::FilterBank;
use crate::rng::rng;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    Relu,
    MaxPool(MaxPool),
    Dense(Dense<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedLayer<T> {
    pub name: String,
    pub layer: Layer<T>,
}

/// Parameter gradients of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T> {
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

/// Sequential CNN ending in softmax cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct Net<T> {
    /// `C x H x W` of one input sample.
    pub input: [usize; 3],
    pub classes: usize,
    pub layers: Vec<NamedLayer<T>>,
}

enum Cache {
    Input(usize),
    Pool(usize, Vec<usize>),
}

fn uniform<T: Real>(r: &mut crate::rng::Rng, n: usize, fan_in: usize) -> Vec<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| T::of(r.gen_range(-bound..bound))).collect()
}

impl<T: Real> Net<T> {
    /// Checks layer compatibility and returns every layer's output shape.
    pub fn new(input: [usize; 3], classes: usize, layers: Vec<NamedLayer<T>>) -> Result<Self> {
        let net = Net {
            input,
            classes,
            layers,
        };
        net.output_shapes()?;
        Ok(net)
    }

    /// `conv(8,3x3)-relu-pool2-conv(16,3x3)-relu-pool2-dense`, He-uniform init.
    pub fn tiny_convnet(input: [usize; 3], classes: usize, seed: u64) -> Result<Self> {
        let mut r = rng(seed);
        let [c, h, w] = input;
        let conv1 = Conv2d::new(uniform(&mut r, 8 * c * 9, c * 9), Some(vec![T::zero(); 8]), 8, c, (3, 3), 1, 1, 1)?;
        let conv2 = Conv2d::new(uniform(&mut r, 16 * 8 * 9, 8 * 9), Some(vec![T::zero(); 16]), 16, 8, (3, 3), 1, 1, 1)?;
        let pool = MaxPool { kernel: 2, stride: 2 };
        let (h1, w1) = pool.output_hw(h, w)?;
        let (h2, w2) = pool.output_hw(h1, w1)?;
        let flat = 16 * h2 * w2;
        let fc = Dense::new(uniform(&mut r, classes * flat, flat), vec![T::zero(); classes], flat, classes)?;
        let named = |name: &str, layer| NamedLayer {
            name: name.to_string(),
            layer,
        };
        Net::new(
            input,
            classes,
            vec![
                named("conv1", Layer::Conv2d(conv1)),
                named("relu1", Layer::Relu),
                named("pool1", Layer::MaxPool(pool)),
                named("conv2", Layer::Conv2d(conv2)),
                named("relu2", Layer::Relu),
                named("pool2", Layer::MaxPool(pool)),
                named("fc", Layer::Dense(fc)),
            ],
        )
    }

    /// Output shape (`C, H, W`) after every layer.
    pub fn output_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut shape = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            shape = match &l.layer {
                Layer::Conv2d(c) => {
                    if c.in_channels != shape[0] {
                        return Err(Error::Shape(format!(
                            "{} expects {} channels, previous layer gives {}",
                            l.name, c.in_channels, shape[0]
                        )));
                    }
                    let (h, w) = c.output_hw(shape[1], shape[2])?;
                    [c.out_channels, h, w]
                }
                Layer::Relu => shape,
                Layer::MaxPool(p) => {
                    let (h, w) = p.output_hw(shape[1], shape[2])?;
                    [shape[0], h, w]
                }
                Layer::Dense(d) => {
                    if d.inputs != shape.iter().product::<usize>() {
                        return Err(Error::Shape(format!(
                            "{} expects {} inputs, previous layer gives {:?}",
                            l.name, d.inputs, shape
                        )));
                    }
                    [d.outputs, 1, 1]
                }
            };
            out.push(shape);
        }
        if shape != [self.classes, 1, 1] {
            return Err(Error::Shape(format!(
                "network ends in {shape:?}, expected {} logits",
                self.classes
            )));
        }
        Ok(out)
    }

    /// Input shape (`C, H, W`) seen by layer `i`.
    pub fn input_shape_of(&self, i: usize) -> Result<[usize; 3]> {
        Ok(if i == 0 { self.input } else { self.output_shapes()?[i - 1] })
    }

    pub fn layer(&self, name: &str) -> Option<&NamedLayer<T>> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// `(index, name, conv)` for every convolution, in order.
    pub fn conv_layers(&self) -> impl Iterator<Item = (usize, &str, &Conv2d<T>)> {
        self.layers.iter().enumerate().filter_map(|(i, l)| match &l.layer {
            Layer::Conv2d(c) => Some((i, l.name.as_str(), c)),
            _ => None,
        })
    }

    /// The convolution weights of layer `i` as an analysis filter bank.
    pub fn filter_bank(&self, i: usize) -> Result<FilterBank> {
        match &self.layers[i].layer {
            Layer::Conv2d(c) => FilterBank::new(
                c.weight.iter().map(|v| v.f64()).collect(),
                c.out_channels,
                c.in_channels / c.groups,
                c.kernel.0,
                c.kernel.1,
                c.groups,
            ),
            _ => Err(Error::InvalidArgument(format!("{} is not a convolution", self.layers[i].name))),
        }
    }

    pub fn cast<U: Real>(&self) -> Net<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.f64())).collect::<Vec<U>>();
        Net {
            input: self.input,
            classes: self.classes,
            layers: self
                .layers
                .iter()
                .map(|l| NamedLayer {
                    name: l.name.clone(),
                    layer: match &l.layer {
                        Layer::Conv2d(c) => Layer::Conv2d(Conv2d {
                            weight: conv(&c.weight),
                            bias: c.bias.as_deref().map(conv),
                            out_channels: c.out_channels,
                            in_channels: c.in_channels,
                            kernel: c.kernel,
                            stride: c.stride,
                            pad: c.pad,
                            groups: c.groups,
                        }),
                        Layer::Relu => Layer::Relu,
                        Layer::MaxPool(p) => Layer::MaxPool(*p),
                        Layer::Dense(d) => Layer::Dense(Dense {
                            weight: conv(&d.weight),
                            bias: conv(&d.bias),
                            inputs: d.inputs,
                            outputs: d.outputs,
                        }),
                    },
                })
                .collect(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape[1..] != self.input {
            return Err(Error::Shape(format!(
                "input {:?} does not match network input {:?}",
                &x.shape[1..],
                self.input
            )));
        }
        Ok(())
    }

    /// Logits for a batch.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for l in &self.layers {
            cur = match &l.layer {
                Layer::Conv2d(c) => c.forward(&cur)?,
                Layer::Relu => relu_forward(&cur),
                Layer::MaxPool(p) => p.forward(&cur)?.0,
                Layer::Dense(d) => d.forward(&cur)?,
            };
        }
        Ok(cur)
    }

    /// Mean loss and the gradient of every parameterised layer (`None` for
    /// layers without parameters).
    pub fn loss_and_grads(&self, x: &Tensor<T>, labels: &[usize]) -> Result<(f64, Vec<Option<LayerGrad<T>>>)> {
        self.check_input(x)?;
        let mut acts = vec![x.clone()];
        let mut caches = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let cur = acts.last().expect("non-empty");
            let (next, cache) = match &l.layer {
                Layer::Conv2d(c) => (c.forward(cur)?, Cache::Input(acts.len() - 1)),
                Layer::Relu => (relu_forward(cur), Cache::Input(acts.len() - 1)),
                Layer::MaxPool(p) => {
                    let (y, arg) = p.forward(cur)?;
                    (y, Cache::Pool(acts.len() - 1, arg))
                }
                Layer::Dense(d) => (d.forward(cur)?, Cache::Input(acts.len() - 1)),
            };
            acts.push(next);
            caches.push(cache);
        }
        let (loss, mut grad) = SoftmaxCrossEntropy.loss(acts.last().expect("logits"), labels)?;
        let mut grads = vec![None; self.layers.len()];
        for (i, l) in self.layers.iter().enumerate().rev() {
            grad = match (&l.layer, &caches[i]) {
                (Layer::Conv2d(c), Cache::Input(a)) => {
                    let (gi, gw, gb) = c.backward(&grad, &acts[*a])?;
                    grads[i] = Some(LayerGrad { weight: gw, bias: gb });
                    gi
                }
                (Layer::Relu, Cache::Input(a)) => relu_backward(&grad, &acts[*a]),
                (Layer::MaxPool(p), Cache::Pool(a, arg)) => p.backward(&grad, acts[*a].shape, arg),
                (Layer::Dense(d), Cache::Input(a)) => {
                    let (gi, gw, gb) = d.backward(&grad, &acts[*a]);
                    grads[i] = Some(LayerGrad {
                        weight: gw,
                        bias: Some(gb),
                    });
                    gi
                }
                _ => unreachable!("cache kind follows layer kind"),
            };
        }
        Ok((loss, grads))
    }

    /// Mutable access to the weights and bias of parameterised layer `i`.
    pub fn params_mut(&mut self, i: usize) -> Option<(&mut Vec<T>, Option<&mut Vec<T>>)> {
        match &mut self.layers[i].layer {
            Layer::Conv2d(c) => Some((&mut c.weight, c.bias.as_mut())),
            Layer::Dense(d) => Some((&mut d.weight, Some(&mut d.bias))),
            _ => None,
        }
    }

    pub fn params_finite(&self) -> bool {
        self.layers.iter().all(|l| match &l.layer {
            Layer::Conv2d(c) => {
                c.weight.iter().all(|v| v.is_finite())
                    && c.bias.as_ref().map_or(true, |b| b.iter().all(|v| v.is_finite()))
            }
            Layer::Dense(d) => d.weight.iter().chain(&d.bias).all(|v| v.is_finite()),
            _ => true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(b: usize, shape: [usize; 3], seed: u64) -> Tensor<f64> {
        let mut r = rng(seed);
        let n = b * shape.iter().product::<usize>();
        Tensor::new([b, shape[0], shape[1], shape[2]], (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn tiny_convnet_shapes() {
        let net = Net::<f32>::tiny_convnet([1, 8, 8], 2, 1).unwrap();
        let shapes = net.output_shapes().unwrap();
        assert_eq!(shapes[0], [8, 8, 8]);
        assert_eq!(shapes[3], [16, 4, 4]);
        assert_eq!(shapes[5], [16, 2, 2]);
        assert_eq!(shapes[6], [2, 1, 1]);
        let mnist = Net::<f32>::tiny_convnet([1, 28, 28], 10, 1).unwrap();
        assert_eq!(mnist.output_shapes().unwrap()[5], [16, 7, 7]);
    }

    #[test]
    fn rejects_incompatible_layers() {
        let mut net = Net::<f64>::tiny_convnet([1, 8, 8], 2, 1).unwrap();
        net.layers.remove(2);
        assert!(net.output_shapes().is_err());
    }

    #[test]
    fn whole_network_gradient_matches_finite_differences() {
        let net = Net::<f64>::tiny_convnet([1, 8, 8], 3, 5).unwrap();
        let x = random_input(4, [1, 8, 8], 6);
        let labels = [0, 2, 1, 2];
        let (_, grads) = net.loss_and_grads(&x, &labels).unwrap();
        let h = 1e-5;
        let mut r = rng(7);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            for _ in 0..12 {
                let k = r.gen_range(0..g.weight.len());
                let mut p = net.clone();
                p.params_mut(i).unwrap().0[k] += h;
                let up = p.loss_and_grads(&x, &labels).unwrap().0;
                p.params_mut(i).unwrap().0[k] -= 2.0 * h;
                let down = p.loss_and_grads(&x, &labels).unwrap().0;
                let fd = (up - down) / (2.0 * h);
                assert!(
                    (fd - g.weight[k]).abs() <= 1e-4 * fd.abs().max(g.weight[k].abs()).max(1e-3),
                    "layer {i} weight {k}: fd {fd} vs {}",
                    g.weight[k]
                );
            }
        }
    }

    #[test]
    fn cast_round_trip_is_exact_from_f32() {
        let net = Net::<f32>::tiny_convnet([1, 8, 8], 2, 3).unwrap();
        assert_eq!(net.cast::<f64>().cast::<f32>(), net);
    }
}
