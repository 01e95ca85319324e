use std::ops::Range;

use rand::{Rng, RngCore};

use super::tensor::{gemm, Tensor2};
use crate::error::{check_dim, Error, Result};

/// Fully connected layer computing `y = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor2,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor2::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let data = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            weight: Tensor2::from_vec(outputs, inputs, data).expect("sized above"),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear(Linear),
    Relu,
    LeakyRelu { slope: f64 },
    Dropout { rate: f64 },
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Activations recorded by a forward pass, consumed by [`DenseNet::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Tensor2>,
    masks: Vec<Option<Tensor2>>,
    output: Tensor2,
}

impl ForwardCache {
    /// Input seen by layer `idx`.
    pub fn layer_input(&self, idx: usize) -> &Tensor2 {
        &self.inputs[idx]
    }

    pub fn output(&self) -> &Tensor2 {
        &self.output
    }

    fn layer_output(&self, idx: usize) -> &Tensor2 {
        self.inputs.get(idx + 1).unwrap_or(&self.output)
    }
}

/// Parameter gradients: weight then bias (as a `1 × out` row) for every
/// linear layer, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor2>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        let tensors = net
            .linears()
            .flat_map(|l| [Tensor2::zeros(l.outputs(), l.inputs()), Tensor2::zeros(1, l.outputs())])
            .collect();
        Self { tensors }
    }

    pub fn add_scaled(&mut self, other: &Gradients, s: f64) -> Result<()> {
        check_dim("gradient tensor count", self.tensors.len(), other.tensors.len())?;
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_scaled(b, s)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.scale(s);
        }
    }

    /// Concatenate two gradient sets (e.g. encoder then decoder).
    pub fn chain(mut self, other: Gradients) -> Gradients {
        self.tensors.extend(other.tensors);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor2::is_finite)
    }
}

/// Result of [`DenseNet::input_gradient_penalty`].
#[derive(Debug, Clone)]
pub struct PenaltyOutput {
    /// `lambda * mean_b (||grad_b|| - 1)^2`
    pub value: f64,
    /// Input-gradient norm per batch row, restricted to the penalised columns.
    pub norms: Vec<f64>,
    pub grads: Gradients,
}

/// Ordered stack of layers with a train/eval switch.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
    mode: Mode,
}

impl DenseNet {
    /// Builds a network, checking that consecutive linear layers compose.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let mut width: Option<usize> = None;
        for layer in &layers {
            match layer {
                Layer::Linear(l) => {
                    if let Some(w) = width {
                        check_dim("linear layer input", w, l.inputs())?;
                    }
                    check_dim("linear bias length", l.outputs(), l.bias.len())?;
                    width = Some(l.outputs());
                }
                Layer::Dropout { rate } => validate_rate(*rate)?,
                Layer::LeakyRelu { slope } if !slope.is_finite() => {
                    return Err(Error::Config(format!("leaky slope {slope}")));
                }
                _ => {}
            }
        }
        Ok(Self {
            layers,
            mode: Mode::Train,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn linears(&self) -> impl Iterator<Item = &Linear> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Linear(lin) => Some(lin),
            _ => None,
        })
    }

    pub fn input_len(&self) -> Option<usize> {
        self.linears().next().map(Linear::inputs)
    }

    pub fn output_len(&self) -> Option<usize> {
        self.linears().last().map(Linear::outputs)
    }

    pub fn param_count(&self) -> usize {
        self.linears().map(Linear::param_count).sum()
    }

    /// Mutable parameter slices in [`Gradients`] order.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let Layer::Linear(Linear { weight, bias }) = layer {
                out.push(weight.data_mut());
                out.push(bias.as_mut_slice());
            }
        }
        out
    }

    /// Forward pass honouring the current mode; dropout draws from `rng`.
    pub fn forward<R: RngCore>(&self, input: &Tensor2, rng: &mut R) -> Result<(Tensor2, ForwardCache)> {
        let dropout = self.mode == Mode::Train;
        self.run(input, dropout.then_some(rng as &mut dyn RngCore))
    }

    /// Deterministic forward pass with dropout disabled, regardless of mode.
    pub fn forward_eval(&self, input: &Tensor2) -> Result<(Tensor2, ForwardCache)> {
        self.run(input, None)
    }

    /// Eval-mode output only.
    pub fn predict(&self, input: &Tensor2) -> Result<Tensor2> {
        Ok(self.run(input, None)?.0)
    }

    /// Single-vector convenience wrapper over [`DenseNet::forward`].
    pub fn forward_vec<R: RngCore>(&self, input: &[f64], rng: &mut R) -> Result<(Vec<f64>, ForwardCache)> {
        let (out, cache) = self.forward(&Tensor2::row_vector(input.to_vec()), rng)?;
        Ok((out.into_data(), cache))
    }

    fn run(&self, input: &Tensor2, mut rng: Option<&mut dyn RngCore>) -> Result<(Tensor2, ForwardCache)> {
        if let Some(n) = self.input_len() {
            check_dim("network input", n, input.cols())?;
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut mask = None;
            let y = match layer {
                Layer::Linear(lin) => {
                    check_dim("linear input", lin.inputs(), x.cols())?;
                    let mut y = Tensor2::zeros(x.rows(), lin.outputs());
                    gemm(1.0, &x, false, &lin.weight, true, 0.0, &mut y)?;
                    for r in 0..y.rows() {
                        for (v, b) in y.row_mut(r).iter_mut().zip(&lin.bias) {
                            *v += b;
                        }
                    }
                    y
                }
                Layer::Relu => {
                    let mut y = x.clone();
                    y.map_inplace(|v| v.max(0.0));
                    y
                }
                Layer::LeakyRelu { slope } => {
                    let mut y = x.clone();
                    y.map_inplace(|v| if v > 0.0 { v } else { slope * v });
                    y
                }
                Layer::Sigmoid => {
                    let mut y = x.clone();
                    y.map_inplace(sigmoid);
                    y
                }
                Layer::Dropout { rate } => match rng.as_deref_mut() {
                    Some(r) if *rate > 0.0 => {
                        let m = dropout_mask(x.rows(), x.cols(), *rate, r);
                        let mut y = x.clone();
                        for (v, s) in y.data_mut().iter_mut().zip(m.data()) {
                            *v *= s;
                        }
                        mask = Some(m);
                        y
                    }
                    _ => x.clone(),
                },
            };
            if !y.is_finite() {
                return Err(Error::NonFinite { layer: idx });
            }
            inputs.push(std::mem::replace(&mut x, y));
            masks.push(mask);
        }
        let cache = ForwardCache {
            inputs,
            masks,
            output: x.clone(),
        };
        Ok((x, cache))
    }

    /// Reverse-mode gradients for a loss whose gradient at the network output
    /// is `grad_out`. Returns parameter gradients and the input gradient.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Tensor2) -> Result<(Gradients, Tensor2)> {
        self.backward_below(cache, self.layers.len(), grad_out)
    }

    /// Backpropagates through layers `top-1 ..= 0` only; `grad` is the
    /// gradient with respect to the input of layer `top`.
    pub fn backward_below(&self, cache: &ForwardCache, top: usize, grad: &Tensor2) -> Result<(Gradients, Tensor2)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::Usage("forward cache does not belong to this network".into()));
        }
        if top > self.layers.len() {
            return Err(Error::Usage(format!("backward start {top} beyond layer count")));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut slot = self.layers[..top]
            .iter()
            .filter(|l| matches!(l, Layer::Linear(_)))
            .count()
            * 2;
        let mut g = grad.clone();
        for idx in (0..top).rev() {
            let x = &cache.inputs[idx];
            if g.shape() != cache.layer_output(idx).shape() {
                return Err(Error::Dimension {
                    context: format!("backward gradient at layer {idx}"),
                    expected: cache.layer_output(idx).cols(),
                    got: g.cols(),
                });
            }
            g = match &self.layers[idx] {
                Layer::Linear(lin) => {
                    slot -= 2;
                    gemm(1.0, &g, true, x, false, 0.0, &mut grads.tensors[slot])?;
                    let db = grads.tensors[slot + 1].data_mut();
                    for r in 0..g.rows() {
                        for (d, v) in db.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    let mut dx = Tensor2::zeros(g.rows(), lin.inputs());
                    gemm(1.0, &g, false, &lin.weight, false, 0.0, &mut dx)?;
                    dx
                }
                Layer::Relu => {
                    for (d, v) in g.data_mut().iter_mut().zip(x.data()) {
                        if *v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    g
                }
                Layer::LeakyRelu { slope } => {
                    for (d, v) in g.data_mut().iter_mut().zip(x.data()) {
                        if *v <= 0.0 {
                            *d *= slope;
                        }
                    }
                    g
                }
                Layer::Sigmoid => {
                    let y = cache.layer_output(idx);
                    for (d, s) in g.data_mut().iter_mut().zip(y.data()) {
                        *d *= s * (1.0 - s);
                    }
                    g
                }
                Layer::Dropout { .. } => {
                    if let Some(m) = &cache.masks[idx] {
                        for (d, s) in g.data_mut().iter_mut().zip(m.data()) {
                            *d *= s;
                        }
                    }
                    g
                }
            };
        }
        Ok((grads, g))
    }

    /// Gradient penalty `lambda * mean_b (||dD/dx_b[cols]|| - 1)^2` for a
    /// scalar-output network built from piecewise-linear layers, together
    /// with its exact gradient with respect to every weight.
    ///
    /// The input gradient is `W1^T d1 W2^T d2 ... Wn^T 1` with `d_i` the local
    /// activation/dropout slopes, so it is multilinear in the weights and its
    /// parameter derivative is obtained by a second, forward-running sweep.
    /// Bias gradients are zero almost everywhere.
    pub fn input_gradient_penalty<R: RngCore>(
        &self,
        input: &Tensor2,
        cols: Range<usize>,
        lambda: f64,
        rng: &mut R,
    ) -> Result<PenaltyOutput> {
        check_dim("penalty network output", 1, self.output_len().unwrap_or(0))?;
        if cols.end > input.cols() {
            return Err(Error::Config(format!(
                "penalty columns {cols:?} beyond input width {}",
                input.cols()
            )));
        }
        let (_, cache) = self.forward(input, rng)?;
        let batch = input.rows();

        // Downward sweep: `upstream[i]` holds the gradient arriving at the
        // output of linear layer `i`.
        let mut upstream: Vec<Option<Tensor2>> = vec![None; self.layers.len()];
        let mut a = Tensor2::filled(batch, 1, 1.0);
        for idx in (0..self.layers.len()).rev() {
            let x = &cache.inputs[idx];
            match &self.layers[idx] {
                Layer::Linear(lin) => {
                    let mut s = Tensor2::zeros(batch, lin.inputs());
                    gemm(1.0, &a, false, &lin.weight, false, 0.0, &mut s)?;
                    upstream[idx] = Some(std::mem::replace(&mut a, s));
                }
                Layer::Sigmoid => {
                    return Err(Error::Config(
                        "gradient penalty requires piecewise-linear layers".into(),
                    ));
                }
                _ => apply_slope(&mut a, &self.layers[idx], x, cache.masks[idx].as_ref()),
            }
        }

        let mut norms = Vec::with_capacity(batch);
        let mut value = 0.0;
        let mut delta = Tensor2::zeros(batch, a.cols());
        for b in 0..batch {
            let g = &a.row(b)[cols.clone()];
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            value += (norm - 1.0).powi(2);
            if norm > 0.0 {
                let coef = 2.0 * lambda * (norm - 1.0) / (norm * batch as f64);
                for (d, v) in delta.row_mut(b)[cols.clone()].iter_mut().zip(g) {
                    *d = coef * v;
                }
            }
            norms.push(norm);
        }
        value *= lambda / batch as f64;

        // Upward sweep carrying dP/ds through the same slopes.
        let mut grads = Gradients::zeros_like(self);
        let mut slot = 0;
        for idx in 0..self.layers.len() {
            let x = &cache.inputs[idx];
            match &self.layers[idx] {
                Layer::Linear(lin) => {
                    let up = upstream[idx].as_ref().expect("filled in downward sweep");
                    gemm(1.0, up, true, &delta, false, 0.0, &mut grads.tensors[slot])?;
                    let mut next = Tensor2::zeros(batch, lin.outputs());
                    gemm(1.0, &delta, false, &lin.weight, true, 0.0, &mut next)?;
                    delta = next;
                    slot += 2;
                }
                layer => apply_slope(&mut delta, layer, x, cache.masks[idx].as_ref()),
            }
        }
        Ok(PenaltyOutput { value, norms, grads })
    }
}

fn apply_slope(t: &mut Tensor2, layer: &Layer, x: &Tensor2, mask: Option<&Tensor2>) {
    match layer {
        Layer::Relu => {
            for (d, v) in t.data_mut().iter_mut().zip(x.data()) {
                if *v <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        Layer::LeakyRelu { slope } => {
            for (d, v) in t.data_mut().iter_mut().zip(x.data()) {
                if *v <= 0.0 {
                    *d *= slope;
                }
            }
        }
        Layer::Dropout { .. } => {
            if let Some(m) = mask {
                for (d, s) in t.data_mut().iter_mut().zip(m.data()) {
                    *d *= s;
                }
            }
        }
        Layer::Linear(_) | Layer::Sigmoid => {}
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn validate_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")))
    }
}

fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut dyn RngCore) -> Tensor2 {
    let keep = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Tensor2::from_vec(rows, cols, data).expect("sized above")
}

/// Inverted dropout on a single vector: in train mode each entry is zeroed
/// with probability `rate` and survivors are scaled by `1 / (1 - rate)`.
pub fn dropout_apply<R: RngCore>(x: &[f64], rate: f64, rng: &mut R, mode: Mode) -> Result<Vec<f64>> {
    validate_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x.to_vec());
    }
    let mask = dropout_mask(1, x.len(), rate, rng);
    Ok(x.iter().zip(mask.data()).map(|(v, m)| v * m).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    fn linear(w: Vec<Vec<f64>>, b: Vec<f64>) -> Layer {
        Layer::Linear(Linear {
            weight: Tensor2::from_rows(&w).unwrap(),
            bias: b,
        })
    }

    #[test]
    fn identity_linear_passes_input() {
        let net = DenseNet::new(vec![linear(
            vec![vec![1., 0., 0.], vec![0., 1., 0.], vec![0., 0., 1.]],
            vec![0.; 3],
        )])
        .unwrap();
        let (y, _) = net.forward_vec(&[1., 2., 3.], &mut rng()).unwrap();
        assert_eq!(y, vec![1., 2., 3.]);
    }

    #[test]
    fn relu_clips_negatives() {
        let net = DenseNet::new(vec![Layer::Relu]).unwrap();
        let (y, _) = net.forward_vec(&[-1., 0., 2.], &mut rng()).unwrap();
        assert_eq!(y, vec![0., 0., 2.]);
    }

    #[test]
    fn hand_matrix_multiply() {
        let net = DenseNet::new(vec![linear(vec![vec![1., 2.], vec![3., 4.]], vec![1., 1.])]).unwrap();
        let (y, _) = net.forward_vec(&[1., 1.], &mut rng()).unwrap();
        assert_eq!(y, vec![4., 8.]);
    }

    #[test]
    fn mismatched_layers_are_rejected() {
        let err = DenseNet::new(vec![
            Layer::Linear(Linear::zeros(3, 4)),
            Layer::Relu,
            Layer::Linear(Linear::zeros(5, 2)),
        ]);
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn wrong_input_width_is_a_dimension_error() {
        let net = DenseNet::new(vec![Layer::Linear(Linear::zeros(3, 1))]).unwrap();
        assert!(net.forward_vec(&[1.0, 2.0], &mut rng()).is_err());
    }

    #[test]
    fn non_finite_output_reports_layer() {
        let net = DenseNet::new(vec![Layer::Relu, linear(vec![vec![f64::MAX, f64::MAX]], vec![0.0])]).unwrap();
        let err = net.forward_vec(&[f64::MAX, f64::MAX], &mut rng()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { layer: 1 }), "{err:?}");
    }

    #[test]
    fn dropout_rate_zero_and_eval_are_identity() {
        assert_eq!(
            dropout_apply(&[5., 5.], 0.0, &mut rng(), Mode::Train).unwrap(),
            vec![5., 5.]
        );
        assert_eq!(
            dropout_apply(&[5., 5.], 0.0, &mut rng(), Mode::Eval).unwrap(),
            vec![5., 5.]
        );
        assert_eq!(dropout_apply(&[4.], 0.25, &mut rng(), Mode::Eval).unwrap(), vec![4.]);
    }

    #[test]
    fn dropout_rate_one_is_rejected() {
        assert!(dropout_apply(&[1.], 1.0, &mut rng(), Mode::Train).is_err());
        assert!(DenseNet::new(vec![Layer::Dropout { rate: 1.0 }]).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut r = rng();
        let n = 100_000;
        let mean = (0..n)
            .map(|_| dropout_apply(&[3.0], 0.25, &mut r, Mode::Train).unwrap()[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean - 3.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut r = rng();
        let mut net = DenseNet::new(vec![
            Layer::Linear(Linear::glorot(4, 8, &mut r)),
            Layer::Relu,
            Layer::Dropout { rate: 0.5 },
            Layer::Linear(Linear::glorot(8, 2, &mut r)),
        ])
        .unwrap();
        net.set_mode(Mode::Eval);
        let x = [0.3, -0.2, 0.9, 1.1];
        let a = net.forward_vec(&x, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().0;
        let b = net.forward_vec(&x, &mut ChaCha8Rng::seed_from_u64(2)).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut r = rng();
        let net = DenseNet::new(vec![
            Layer::Linear(Linear::glorot(3, 5, &mut r)),
            Layer::Relu,
            Layer::Linear(Linear::glorot(5, 2, &mut r)),
        ])
        .unwrap();
        let (_, cache) = net.forward_vec(&[1., 2., 3.], &mut r).unwrap();
        let (g, dx) = net.backward(&cache, &Tensor2::zeros(1, 2)).unwrap();
        assert!(g.tensors.iter().all(|t| t.data().iter().all(|v| *v == 0.0)));
        assert!(dx.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scalar_linear_weight_gradient_is_input() {
        let net = DenseNet::new(vec![linear(vec![vec![0.5, -0.25, 2.0]], vec![0.0])]).unwrap();
        let x = [1.5, -2.0, 0.75];
        let (_, cache) = net.forward_vec(&x, &mut rng()).unwrap();
        let (g, _) = net.backward(&cache, &Tensor2::filled(1, 1, 1.0)).unwrap();
        assert_eq!(g.tensors[0].data(), &x);
        assert_eq!(g.tensors[1].data(), &[1.0]);
    }

    #[test]
    fn foreign_cache_is_a_usage_error() {
        let a = DenseNet::new(vec![Layer::Relu]).unwrap();
        let b = DenseNet::new(vec![Layer::Relu, Layer::Relu]).unwrap();
        let (_, cache) = a.forward_vec(&[1.0], &mut rng()).unwrap();
        assert!(matches!(
            b.backward(&cache, &Tensor2::zeros(1, 1)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn param_count_sums_weights_and_biases() {
        let net = DenseNet::new(vec![
            Layer::Linear(Linear::zeros(24, 800)),
            Layer::Relu,
            Layer::Linear(Linear::zeros(800, 24)),
        ])
        .unwrap();
        assert_eq!(net.param_count(), 24 * 800 + 800 + 800 * 24 + 24);
    }

    /// Central-difference derivative of `f` with respect to every parameter.
    fn numeric_grads(net: &mut DenseNet, f: &dyn Fn(&DenseNet) -> f64) -> Vec<Vec<f64>> {
        let h = 1e-6;
        let n = net.params_mut().len();
        (0..n)
            .map(|t| {
                let len = net.params_mut()[t].len();
                (0..len)
                    .map(|i| {
                        let orig = net.params_mut()[t][i];
                        net.params_mut()[t][i] = orig + h;
                        let up = f(net);
                        net.params_mut()[t][i] = orig - h;
                        let down = f(net);
                        net.params_mut()[t][i] = orig;
                        (up - down) / (2.0 * h)
                    })
                    .collect()
            })
            .collect()
    }

    fn assert_close(analytic: &Gradients, numeric: &[Vec<f64>], tol: f64) {
        for (t, (a, n)) in analytic.tensors.iter().zip(numeric).enumerate() {
            for (i, (a, n)) in a.data().iter().zip(n).enumerate() {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
                assert!(rel < tol, "tensor {t} entry {i}: analytic {a} numeric {n}");
            }
        }
    }

    fn small_net(r: &mut ChaCha8Rng) -> DenseNet {
        // 4*5+5 + 5*3+3 + 3*1+1 = 47 parameters
        DenseNet::new(vec![
            Layer::Linear(Linear::glorot(4, 5, r)),
            Layer::LeakyRelu { slope: 0.2 },
            Layer::Linear(Linear::glorot(5, 3, r)),
            Layer::Relu,
            Layer::Linear(Linear::glorot(3, 1, r)),
            Layer::Sigmoid,
        ])
        .unwrap()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = rng();
        let mut net = small_net(&mut r);
        assert!(net.param_count() <= 50);
        let x = Tensor2::from_rows(&[vec![0.3, -1.2, 0.8, 0.05], vec![-0.7, 0.4, 1.5, -0.2]]).unwrap();
        // loss = sum of squared outputs / 2
        let loss = |n: &DenseNet| n.predict(&x).unwrap().data().iter().map(|v| v * v / 2.0).sum::<f64>();
        let (y, cache) = net.forward_eval(&x).unwrap();
        let (g, _) = net.backward(&cache, &y).unwrap();
        let numeric = numeric_grads(&mut net, &loss);
        assert_close(&g, &numeric, 1e-4);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut r = rng();
        let mut net = DenseNet::new(vec![
            Layer::Linear(Linear::glorot(3, 4, &mut r)),
            Layer::LeakyRelu { slope: 0.2 },
            Layer::Linear(Linear::glorot(4, 4, &mut r)),
            Layer::Dropout { rate: 0.4 },
            Layer::LeakyRelu { slope: 0.2 },
            Layer::Linear(Linear::glorot(4, 1, &mut r)),
        ])
        .unwrap();
        net.set_mode(Mode::Train);
        let x = Tensor2::from_rows(&[vec![0.3, -1.2, 0.8], vec![-0.7, 0.4, 1.5], vec![0.1, 0.1, -0.9]]).unwrap();
        let penalty = |n: &DenseNet| {
            n.input_gradient_penalty(&x, 0..2, 10.0, &mut ChaCha8Rng::seed_from_u64(9))
                .unwrap()
        };
        let p = penalty(&net);
        assert!(p.value >= 0.0);
        let numeric = numeric_grads(&mut net, &|n| penalty(n).value);
        assert_close(&p.grads, &numeric, 1e-4);
    }

    #[test]
    fn penalty_rejects_sigmoid_and_vector_outputs() {
        let mut r = rng();
        let net = small_net(&mut r);
        assert!(net
            .input_gradient_penalty(&Tensor2::zeros(1, 4), 0..4, 1.0, &mut r)
            .is_err());
        let wide = DenseNet::new(vec![Layer::Linear(Linear::zeros(2, 2))]).unwrap();
        assert!(wide
            .input_gradient_penalty(&Tensor2::zeros(1, 2), 0..2, 1.0, &mut r)
            .is_err());
    }
}
