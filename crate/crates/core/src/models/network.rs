use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, RdeError, Result};
use crate::objective::Model;
use crate::types::Signal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

/// Activation shape `(channels, height, width)`; dense layers use `(n, 1, 1)`.
pub type Dims = (usize, usize, usize);

fn numel(d: Dims) -> usize {
    d.0 * d.1 * d.2
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// `y = W x + b`, `W` row-major `output × input`.
    Dense {
        input: usize,
        output: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Relu,
    /// Weights laid out `(out, in, k, k)` row-major.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Flatten,
}

impl Layer {
    pub fn dense(input: usize, output: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != input * output || bias.len() != output {
            return Err(RdeError::Shape(format!(
                "dense {input}->{output} needs {} weights and {output} biases, got {} and {}",
                input * output,
                weights.len(),
                bias.len()
            )));
        }
        Ok(Layer::Dense {
            input,
            output,
            weights,
            bias,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 || dilation == 0 {
            return Err(invalid("conv kernel, stride and dilation must be positive"));
        }
        if weights.len() != out_channels * in_channels * kernel * kernel || bias.len() != out_channels {
            return Err(RdeError::Shape(format!(
                "conv {in_channels}->{out_channels} k{kernel} has {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Layer::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            dilation,
            weights,
            bias,
        })
    }

    fn output_dims(&self, d: Dims) -> Result<Dims> {
        match self {
            Layer::Dense { input, output, .. } => {
                if numel(d) != *input {
                    return Err(RdeError::Shape(format!("dense layer expects {input} inputs, got {}", numel(d))));
                }
                Ok((*output, 1, 1))
            }
            Layer::Relu => Ok(d),
            Layer::Flatten => Ok((numel(d), 1, 1)),
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                dilation,
                ..
            } => {
                if d.0 != *in_channels {
                    return Err(RdeError::Shape(format!("conv expects {in_channels} channels, got {}", d.0)));
                }
                let span = dilation * (kernel - 1) + 1;
                if d.1 + 2 * padding < span || d.2 + 2 * padding < span {
                    return Err(RdeError::Shape(format!("conv kernel span {span} exceeds padded input")));
                }
                Ok((
                    *out_channels,
                    (d.1 + 2 * padding - span) / stride + 1,
                    (d.2 + 2 * padding - span) / stride + 1,
                ))
            }
        }
    }

    fn num_params(&self) -> usize {
        match self {
            Layer::Dense { weights, bias, .. } | Layer::Conv2d { weights, bias, .. } => weights.len() + bias.len(),
            _ => 0,
        }
    }

    fn params_mut(&mut self) -> Option<(&mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            Layer::Dense { weights, bias, .. } | Layer::Conv2d { weights, bias, .. } => Some((weights, bias)),
            _ => None,
        }
    }

    fn params(&self) -> Option<(&[f64], &[f64])> {
        match self {
            Layer::Dense { weights, bias, .. } | Layer::Conv2d { weights, bias, .. } => Some((weights, bias)),
            _ => None,
        }
    }

    fn forward(&self, x: &[f64], d: Dims, out_dims: Dims) -> Vec<f64> {
        match self {
            Layer::Dense {
                input, weights, bias, ..
            } => bias
                .iter()
                .zip(weights.chunks_exact(*input))
                .map(|(b, row)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
                .collect(),
            Layer::Relu => x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
            Layer::Flatten => x.to_vec(),
            Layer::Conv2d {
                in_channels,
                kernel,
                stride,
                padding,
                dilation,
                weights,
                bias,
                ..
            } => {
                let (_, h, w) = d;
                let (oc, oh, ow) = out_dims;
                let k = *kernel;
                let mut out = vec![0.0; oc * oh * ow];
                for o in 0..oc {
                    let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
                    plane.iter_mut().for_each(|v| *v = bias[o]);
                    for c in 0..*in_channels {
                        let xin = &x[c * h * w..(c + 1) * h * w];
                        for u in 0..k {
                            for v in 0..k {
                                let wt = weights[((o * in_channels + c) * k + u) * k + v];
                                if wt == 0.0 {
                                    continue;
                                }
                                for i in 0..oh {
                                    let r = (i * stride + u * dilation) as isize - *padding as isize;
                                    if r < 0 || r >= h as isize {
                                        continue;
                                    }
                                    let row = &xin[r as usize * w..(r as usize + 1) * w];
                                    let orow = &mut plane[i * ow..(i + 1) * ow];
                                    for (j, ov) in orow.iter_mut().enumerate() {
                                        let col = (j * stride + v * dilation) as isize - *padding as isize;
                                        if col >= 0 && col < w as isize {
                                            *ov += wt * row[col as usize];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                out
            }
        }
    }

    /// Returns the input cotangent; accumulates parameter gradients into
    /// `pgrad` (weights then bias) when given.
    fn backward(&self, x: &[f64], d: Dims, out_dims: Dims, g: &[f64], pgrad: Option<&mut [f64]>) -> Vec<f64> {
        match self {
            Layer::Dense {
                input,
                output,
                weights,
                ..
            } => {
                let mut gx = vec![0.0; *input];
                for (o, row) in weights.chunks_exact(*input).enumerate() {
                    let go = g[o];
                    if go != 0.0 {
                        for (a, w) in gx.iter_mut().zip(row) {
                            *a += go * w;
                        }
                    }
                }
                if let Some(pg) = pgrad {
                    let (gw, gb) = pg.split_at_mut(input * output);
                    for o in 0..*output {
                        let go = g[o];
                        gb[o] += go;
                        if go != 0.0 {
                            for (a, v) in gw[o * input..(o + 1) * input].iter_mut().zip(x) {
                                *a += go * v;
                            }
                        }
                    }
                }
                gx
            }
            // subgradient 0 at the kink
            Layer::Relu => x.iter().zip(g).map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 }).collect(),
            Layer::Flatten => g.to_vec(),
            Layer::Conv2d {
                in_channels,
                kernel,
                stride,
                padding,
                dilation,
                weights,
                ..
            } => {
                let (_, h, w) = d;
                let (oc, oh, ow) = out_dims;
                let k = *kernel;
                let mut gx = vec![0.0; in_channels * h * w];
                let mut pgrad = pgrad;
                let nw = weights.len();
                for o in 0..oc {
                    let gplane = &g[o * oh * ow..(o + 1) * oh * ow];
                    if let Some(pg) = pgrad.as_deref_mut() {
                        pg[nw + o] += gplane.iter().sum::<f64>();
                    }
                    for c in 0..*in_channels {
                        let xin = &x[c * h * w..(c + 1) * h * w];
                        let gin = &mut gx[c * h * w..(c + 1) * h * w];
                        for u in 0..k {
                            for v in 0..k {
                                let widx = ((o * in_channels + c) * k + u) * k + v;
                                let wt = weights[widx];
                                let mut gw = 0.0;
                                for i in 0..oh {
                                    let r = (i * stride + u * dilation) as isize - *padding as isize;
                                    if r < 0 || r >= h as isize {
                                        continue;
                                    }
                                    let base = r as usize * w;
                                    for j in 0..ow {
                                        let col = (j * stride + v * dilation) as isize - *padding as isize;
                                        if col >= 0 && col < w as isize {
                                            let go = gplane[i * ow + j];
                                            gin[base + col as usize] += wt * go;
                                            gw += go * xin[base + col as usize];
                                        }
                                    }
                                }
                                if let Some(pg) = pgrad.as_deref_mut() {
                                    pg[widx] += gw;
                                }
                            }
                        }
                    }
                }
                gx
            }
        }
    }
}

/// Architecture description used to initialize a [`Network`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { output: usize },
    Relu,
    Conv2d {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "one")]
        dilation: usize,
    },
    Flatten,
}

fn one() -> usize {
    1
}

/// A feed-forward stack of dense, conv, relu and flatten layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    task: Task,
    input_dims: Dims,
    layers: Vec<Layer>,
    dims: Vec<Dims>,
}

impl Network {
    pub fn new(task: Task, input_dims: Dims, layers: Vec<Layer>) -> Result<Self> {
        if numel(input_dims) == 0 {
            return Err(invalid("network input must be nonempty"));
        }
        let mut dims = vec![input_dims];
        for layer in &layers {
            let next = layer.output_dims(*dims.last().unwrap())?;
            dims.push(next);
        }
        Ok(Self {
            task,
            input_dims,
            layers,
            dims,
        })
    }

    /// He-uniform weights and zero biases, drawn from `seed`.
    pub fn init(task: Task, input_dims: Dims, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = input_dims;
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let layer = match *spec {
                LayerSpec::Dense { output } => {
                    let input = numel(d);
                    let bound = (6.0 / input as f64).sqrt();
                    let w = (0..input * output).map(|_| rng.random_range(-bound..bound)).collect();
                    Layer::dense(input, output, w, vec![0.0; output])?
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    dilation,
                } => {
                    let fan_in = d.0 * kernel * kernel;
                    let bound = (6.0 / fan_in as f64).sqrt();
                    let w = (0..out_channels * fan_in).map(|_| rng.random_range(-bound..bound)).collect();
                    Layer::conv2d(d.0, out_channels, kernel, stride, padding, dilation, w, vec![0.0; out_channels])?
                }
            };
            d = layer.output_dims(d)?;
            layers.push(layer);
        }
        Self::new(task, input_dims, layers)
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn input_dims(&self) -> Dims {
        self.input_dims
    }

    pub fn input_len(&self) -> usize {
        numel(self.input_dims)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.layers.iter().filter_map(Layer::params) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(RdeError::Shape(format!(
                "network has {} parameters, got {}",
                self.num_params(),
                p.len()
            )));
        }
        let mut off = 0;
        for (w, b) in self.layers.iter_mut().filter_map(Layer::params_mut) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&p[off..off + nw]);
            off += nw;
            b.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(RdeError::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_len(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Activations of every layer, input first.
    pub fn trace(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(&acts[i], self.dims[i], self.dims[i + 1]);
            acts.push(y);
        }
        Ok(acts)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.pop().unwrap())
    }

    /// Backpropagates `cotangent` through a recorded trace. Returns the input
    /// gradient and accumulates parameter gradients into `pgrad`.
    pub fn backward(&self, acts: &[Vec<f64>], cotangent: &[f64], mut pgrad: Option<&mut [f64]>) -> Result<Vec<f64>> {
        let m = numel(*self.dims.last().unwrap());
        if cotangent.len() != m {
            return Err(RdeError::Shape(format!("cotangent has {} entries, model has {m} outputs", cotangent.len())));
        }
        if let Some(pg) = pgrad.as_deref() {
            if pg.len() != self.num_params() {
                return Err(RdeError::Shape("parameter gradient buffer has wrong length".into()));
            }
        }
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let o = *acc;
                *acc += l.num_params();
                Some(o)
            })
            .collect();
        let mut g = cotangent.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let slot = match pgrad.as_deref_mut() {
                Some(pg) if layer.num_params() > 0 => Some(&mut pg[offsets[i]..offsets[i] + layer.num_params()]),
                _ => None,
            };
            g = layer.backward(&acts[i], self.dims[i], self.dims[i + 1], &g, slot);
        }
        Ok(g)
    }

    /// Sign pattern of every relu input; used to detect kinks.
    pub fn activation_pattern(&self, x: &[f64]) -> Result<Vec<bool>> {
        let acts = self.trace(x)?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Relu))
            .flat_map(|(i, _)| acts[i].iter().map(|&v| v > 0.0).collect::<Vec<_>>())
            .collect())
    }
}

impl Model for Network {
    fn output_dim(&self) -> usize {
        numel(*self.dims.last().unwrap())
    }

    fn forward(&self, x: &Signal) -> Result<Vec<f64>> {
        self.evaluate(x.values())
    }

    fn input_gradient(&self, x: &Signal, cotangent: &[f64]) -> Result<Vec<f64>> {
        let acts = self.trace(x.values())?;
        self.backward(&acts, cotangent, None)
    }

    fn forward_and_gradient(
        &self,
        x: &Signal,
        cotangent: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let acts = self.trace(x.values())?;
        let out = acts.last().unwrap().clone();
        let g = cotangent(&out)?;
        let grad = self.backward(&acts, &g, None)?;
        Ok((out, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_params(net: &Network, x: &[f64], cot: &[f64]) -> Vec<f64> {
        let p = net.params();
        (0..p.len())
            .map(|i| {
                let mut a = net.clone();
                let mut b = net.clone();
                let mut pa = p.clone();
                let mut pb = p.clone();
                pa[i] += 1e-6;
                pb[i] -= 1e-6;
                a.set_params(&pa).unwrap();
                b.set_params(&pb).unwrap();
                let fa: f64 = a.evaluate(x).unwrap().iter().zip(cot).map(|(u, c)| u * c).sum();
                let fb: f64 = b.evaluate(x).unwrap().iter().zip(cot).map(|(u, c)| u * c).sum();
                (fa - fb) / 2e-6
            })
            .collect()
    }

    #[test]
    fn linear_dot_product() {
        let net = Network::new(Task::Regression, (2, 1, 1), vec![Layer::dense(2, 1, vec![1.0, 2.0], vec![0.0]).unwrap()]).unwrap();
        assert_eq!(net.evaluate(&[3.0, 4.0]).unwrap(), vec![11.0]);
        let x = Signal::vector(vec![3.0, 4.0]).unwrap();
        assert_eq!(net.input_gradient(&x, &[1.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn relu_forward_and_gradient() {
        let net = Network::new(Task::Regression, (2, 1, 1), vec![Layer::Relu]).unwrap();
        assert_eq!(net.evaluate(&[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
        let x = Signal::vector(vec![-1.0, 2.0]).unwrap();
        assert_eq!(net.input_gradient(&x, &[1.0, 1.0]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn identity_kernel_copies_interior() {
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let conv = Layer::conv2d(1, 1, 3, 1, 0, 1, w, vec![0.0]).unwrap();
        let net = Network::new(Task::Regression, (1, 4, 5), vec![conv]).unwrap();
        let x: Vec<f64> = (0..20).map(|v| v as f64).collect();
        let y = net.evaluate(&x).unwrap();
        assert_eq!(y, vec![6.0, 7.0, 8.0, 11.0, 12.0, 13.0]);
    }

    #[test]
    fn conv_output_dims() {
        let conv = Layer::conv2d(2, 3, 3, 2, 1, 1, vec![0.0; 54], vec![0.0; 3]).unwrap();
        assert_eq!(conv.output_dims((2, 32, 32)).unwrap(), (3, 16, 16));
        let dil = Layer::conv2d(1, 1, 3, 1, 4, 4, vec![0.0; 9], vec![0.0]).unwrap();
        assert_eq!(dil.output_dims((1, 32, 32)).unwrap(), (1, 32, 32));
        assert!(conv.output_dims((1, 32, 32)).is_err());
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let specs = [
            LayerSpec::Conv2d {
                out_channels: 2,
                kernel: 3,
                stride: 2,
                padding: 1,
                dilation: 1,
            },
            LayerSpec::Relu,
            LayerSpec::Conv2d {
                out_channels: 2,
                kernel: 3,
                stride: 1,
                padding: 2,
                dilation: 2,
            },
            LayerSpec::Flatten,
            LayerSpec::Dense { output: 3 },
        ];
        let net = Network::init(Task::Classification, (2, 6, 6), &specs, 4).unwrap();
        let x: Vec<f64> = (0..72).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let cot = [0.3, -1.0, 0.5];
        let acts = net.trace(&x).unwrap();
        let mut pg = vec![0.0; net.num_params()];
        net.backward(&acts, &cot, Some(&mut pg)).unwrap();
        for (a, b) in pg.iter().zip(fd_params(&net, &x, &cot)) {
            assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn params_round_trip() {
        let specs = [LayerSpec::Dense { output: 4 }, LayerSpec::Relu, LayerSpec::Dense { output: 2 }];
        let mut net = Network::init(Task::Regression, (3, 1, 1), &specs, 0).unwrap();
        assert_eq!(net.num_params(), 3 * 4 + 4 + 4 * 2 + 2);
        let p: Vec<f64> = (0..net.num_params()).map(|i| i as f64).collect();
        net.set_params(&p).unwrap();
        assert_eq!(net.params(), p);
        assert!(net.set_params(&p[1..]).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let net = Network::new(Task::Regression, (2, 1, 1), vec![Layer::Relu]).unwrap();
        assert!(net.evaluate(&[1.0]).is_err());
        let x = Signal::vector(vec![1.0, 2.0]).unwrap();
        assert!(net.input_gradient(&x, &[1.0]).is_err());
    }
}
