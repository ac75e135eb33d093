use rand_distr::{Distribution, Normal};

use super::{shape_err, ModelConfig, NnError, Tensor};
use crate::seed::rng_for;

/// One convolutional layer: `weight` is `[out, in, window]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    pub fn zeros(out_channels: usize, in_channels: usize, window: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out_channels, in_channels, window]),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn window(&self) -> usize {
        self.weight.shape()[2]
    }
}

/// One LSTM direction. Gate blocks are stacked in the order
/// input, forget, cell candidate, output, so `w_ih` is `[4H, in]`, `w_hh` is
/// `[4H, H]` and `bias` is `[4H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

impl LstmParams {
    pub fn zeros(input_size: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor::zeros(&[4 * hidden, input_size]),
            w_hh: Tensor::zeros(&[4 * hidden, hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.shape()[1]
    }
}

/// All trainable weights. Also used as the container for gradients and Adam
/// moments, which share its shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub conv: Vec<ConvParams>,
    pub lstm_fwd: LstmParams,
    pub lstm_bwd: LstmParams,
    /// `[conv_filters + 2 * lstm_hidden_units]`
    pub dense_weight: Tensor,
    /// `[1]`
    pub dense_bias: Tensor,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let mut conv = Vec::with_capacity(config.conv_layers());
        let mut in_ch = 1;
        for &w in &config.conv_window_sizes {
            conv.push(ConvParams::zeros(config.conv_filters, in_ch, w));
            in_ch = config.conv_filters;
        }
        Self {
            conv,
            lstm_fwd: LstmParams::zeros(1, config.lstm_hidden_units),
            lstm_bwd: LstmParams::zeros(1, config.lstm_hidden_units),
            dense_weight: Tensor::zeros(&[config.dense_inputs()]),
            dense_bias: Tensor::zeros(&[1]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        z
    }

    /// Tensors with stable names, in persistence order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.conv.iter().enumerate() {
            out.push((format!("conv{i}.weight"), &c.weight));
            out.push((format!("conv{i}.bias"), &c.bias));
        }
        for (dir, p) in [("fwd", &self.lstm_fwd), ("bwd", &self.lstm_bwd)] {
            out.push((format!("lstm.{dir}.w_ih"), &p.w_ih));
            out.push((format!("lstm.{dir}.w_hh"), &p.w_hh));
            out.push((format!("lstm.{dir}.bias"), &p.bias));
        }
        out.push(("dense.weight".into(), &self.dense_weight));
        out.push(("dense.bias".into(), &self.dense_bias));
        out
    }

    /// Same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in &mut self.conv {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        for p in [&mut self.lstm_fwd, &mut self.lstm_bwd] {
            out.push(&mut p.w_ih);
            out.push(&mut p.w_hh);
            out.push(&mut p.bias);
        }
        out.push(&mut self.dense_weight);
        out.push(&mut self.dense_bias);
        out
    }

    pub fn num_values(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_values());
        for (_, t) in self.named_tensors() {
            v.extend_from_slice(t.data());
        }
        v
    }

    pub fn shapes_match(&self, other: &ModelParams) -> bool {
        let a = self.named_tensors();
        let b = other.named_tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|((_, x), (_, y))| x.same_shape(y))
    }

    /// Checks every shape against `config`.
    pub fn check_config(&self, config: &ModelConfig) -> Result<(), NnError> {
        if !self.shapes_match(&ModelParams::zeros(config)) {
            return Err(shape_err("parameters do not match model config"));
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &ModelParams) -> Result<(), NnError> {
        if !self.shapes_match(other) {
            return Err(shape_err("parameter sets differ in shape"));
        }
        let others: Vec<&Tensor> = other.named_tensors().into_iter().map(|(_, t)| t).collect();
        for (a, b) in self.tensors_mut().into_iter().zip(others) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.all_finite())
    }
}

/// He-normal weights (`sd = sqrt(2 / fan_in)`), zero biases except the LSTM
/// forget-gate block, which starts at 1.
pub fn he_normal_init(config: &ModelConfig, seed: u64) -> ModelParams {
    let mut params = ModelParams::zeros(config);
    let mut rng = rng_for(seed, "he_normal_init", 0);
    let mut fill = |t: &mut Tensor, fan_in: usize| {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive sd");
        for v in t.data_mut() {
            *v = normal.sample(&mut rng);
        }
    };
    for c in &mut params.conv {
        let fan_in = c.in_channels() * c.window();
        fill(&mut c.weight, fan_in);
    }
    let h = config.lstm_hidden_units;
    for p in [&mut params.lstm_fwd, &mut params.lstm_bwd] {
        let input = p.input_size();
        fill(&mut p.w_ih, input);
        fill(&mut p.w_hh, h);
        p.bias.data_mut()[h..2 * h].fill(1.0);
    }
    fill(&mut params.dense_weight, config.dense_inputs());
    params
}
