use super::layers::{conv1d_backward, conv1d_forward, DropoutMask};
use super::lstm::{bilstm_backward, bilstm_forward, BiLstmCache};
use super::{shape_err, ModelConfig, ModelParams, NnError, Tensor};
use crate::seed::derive_seed;
use crate::signal::PreparedSeries;

/// The dropout-free part of a forward pass: the input views, the first
/// convolution (dropout sits after it) and the whole BiLSTM (dropout sits
/// after it). Monte-Carlo sampling computes this once per input and reuses it
/// across passes.
#[derive(Debug, Clone)]
pub struct DeterministicPrefix {
    /// `[1, T]`, the convolutional stream input.
    channels: Tensor,
    /// `[T, 1]`, the recurrent stream input.
    sequence: Tensor,
    first_conv: Tensor,
    lstm_out: Tensor,
    lstm_cache: BiLstmCache,
}

impl DeterministicPrefix {
    pub fn compute(
        x: &PreparedSeries,
        params: &ModelParams,
        config: &ModelConfig,
    ) -> Result<Self, NnError> {
        if x.padded_length() != config.input_length {
            return Err(shape_err(format!(
                "input of length {} for a model expecting {}",
                x.padded_length(),
                config.input_length
            )));
        }
        params.check_config(config)?;
        let t = x.padded_length();
        let channels = Tensor::new(vec![1, t], x.values().to_vec())?;
        let sequence = Tensor::new(vec![t, 1], x.values().to_vec())?;
        let first_conv = conv1d_forward(&channels, &params.conv[0])?;
        let (lstm_out, lstm_cache) = bilstm_forward(&sequence, &params.lstm_fwd, &params.lstm_bwd)?;
        Ok(Self {
            channels,
            sequence,
            first_conv,
            lstm_out,
            lstm_cache,
        })
    }
}

/// Everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    prefix: DeterministicPrefix,
    /// Pre-dropout convolution outputs, one per layer.
    conv_pre: Vec<Tensor>,
    conv_masks: Vec<DropoutMask>,
    /// Post-ReLU activations, one per layer.
    conv_post: Vec<Tensor>,
    lstm_mask: DropoutMask,
    features: Vec<f64>,
    output: f64,
}

impl ForwardCache {
    pub fn output(&self) -> f64 {
        self.output
    }

    /// Concatenated `[pooled conv features, dropped-out BiLSTM output]`.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Smallest `|input|` over ReLU inputs not zeroed by dropout; a gradient
    /// check is only meaningful when this is well away from 0.
    pub fn min_abs_relu_input(&self) -> f64 {
        let mut m = f64::INFINITY;
        for (z, mask) in self.conv_pre.iter().zip(&self.conv_masks) {
            for (i, v) in z.data().iter().enumerate() {
                if mask.keep_flags[i] {
                    m = m.min(v.abs());
                }
            }
        }
        m
    }
}

fn conv_mask(config: &ModelConfig, dropout_on: bool, rng_seed: u64, layer: usize, len: usize) -> DropoutMask {
    if dropout_on && config.conv_dropout_rate > 0.0 {
        DropoutMask::sample(
            config.conv_dropout_rate,
            derive_seed(rng_seed, "conv_dropout", layer as u64),
            len,
        )
    } else {
        DropoutMask::identity(len)
    }
}

fn lstm_mask(config: &ModelConfig, dropout_on: bool, rng_seed: u64, len: usize) -> DropoutMask {
    if dropout_on && config.lstm_dropout_rate > 0.0 {
        DropoutMask::sample(
            config.lstm_dropout_rate,
            derive_seed(rng_seed, "lstm_dropout", 0),
            len,
        )
    } else {
        DropoutMask::identity(len)
    }
}

/// `relu(dropout(z))` in one sweep.
fn dropout_relu(z: &Tensor, mask: &DropoutMask) -> Tensor {
    let scale = mask.scale();
    let data = z
        .data()
        .iter()
        .zip(&mask.keep_flags)
        .map(|(&v, &k)| if k { (v * scale).max(0.0) } else { 0.0 })
        .collect();
    Tensor::new(z.shape().to_vec(), data).expect("same shape")
}

struct Stochastic {
    conv_pre: Vec<Tensor>,
    conv_masks: Vec<DropoutMask>,
    conv_post: Vec<Tensor>,
    lstm_mask: DropoutMask,
    features: Vec<f64>,
    output: f64,
}

fn run_stochastic(
    prefix: &DeterministicPrefix,
    params: &ModelParams,
    config: &ModelConfig,
    dropout_on: bool,
    rng_seed: u64,
    keep: bool,
) -> Result<Stochastic, NnError> {
    let layers = params.conv.len();
    let mut conv_pre = Vec::new();
    let mut conv_masks = Vec::new();
    let mut conv_post: Vec<Tensor> = Vec::new();
    let mut current: Option<Tensor> = None;
    for l in 0..layers {
        let computed;
        let z = if l == 0 {
            &prefix.first_conv
        } else {
            let input = if keep { conv_post.last() } else { current.as_ref() };
            computed = conv1d_forward(input.expect("previous layer"), &params.conv[l])?;
            &computed
        };
        let mask = conv_mask(config, dropout_on, rng_seed, l, z.len());
        let a = dropout_relu(z, &mask);
        if keep {
            conv_pre.push(z.clone());
            conv_masks.push(mask);
            conv_post.push(a);
        } else {
            current = Some(a);
        }
    }
    let last = if keep { conv_post.last() } else { current.as_ref() }.expect("at least one conv layer");
    let time = last.shape()[1] as f64;
    let filters = last.shape()[0];
    let mut features = Vec::with_capacity(filters + prefix.lstm_out.len());
    for r in 0..filters {
        features.push(last.row(r).iter().sum::<f64>() / time);
    }
    let lmask = lstm_mask(config, dropout_on, rng_seed, prefix.lstm_out.len());
    for (j, &v) in prefix.lstm_out.data().iter().enumerate() {
        features.push(v * lmask.factor(j));
    }
    let output = params.dense_bias.data()[0]
        + params
            .dense_weight
            .data()
            .iter()
            .zip(&features)
            .map(|(w, f)| w * f)
            .sum::<f64>();
    if !output.is_finite() {
        return Err(NnError::NonFiniteActivation("dense"));
    }
    Ok(Stochastic {
        conv_pre,
        conv_masks,
        conv_post,
        lstm_mask: lmask,
        features,
        output,
    })
}

/// Output for one dropout draw, reusing a precomputed prefix. Bit-identical to
/// `model_forward(x, params, config, dropout_on, rng_seed).0`.
pub fn predict_from_prefix(
    prefix: &DeterministicPrefix,
    params: &ModelParams,
    config: &ModelConfig,
    dropout_on: bool,
    rng_seed: u64,
) -> Result<f64, NnError> {
    Ok(run_stochastic(prefix, params, config, dropout_on, rng_seed, false)?.output)
}

/// Full forward pass. With `dropout_on` every dropout site draws its mask from
/// a seed derived from `rng_seed`; otherwise dropout is the identity.
pub fn model_forward(
    x: &PreparedSeries,
    params: &ModelParams,
    config: &ModelConfig,
    dropout_on: bool,
    rng_seed: u64,
) -> Result<(f64, ForwardCache), NnError> {
    let prefix = DeterministicPrefix::compute(x, params, config)?;
    let s = run_stochastic(&prefix, params, config, dropout_on, rng_seed, true)?;
    Ok((
        s.output,
        ForwardCache {
            prefix,
            conv_pre: s.conv_pre,
            conv_masks: s.conv_masks,
            conv_post: s.conv_post,
            lstm_mask: s.lstm_mask,
            features: s.features,
            output: s.output,
        },
    ))
}

/// Analytic gradients of `d_output * y_hat` with respect to every parameter,
/// reusing the forward pass's dropout masks.
pub fn model_backward(
    cache: &ForwardCache,
    params: &ModelParams,
    d_output: f64,
) -> Result<ModelParams, NnError> {
    let layers = params.conv.len();
    let filters = params.conv.last().map(|c| c.out_channels()).unwrap_or(0);
    let hidden2 = 2 * params.lstm_fwd.hidden();
    if cache.conv_pre.len() != layers
        || cache.features.len() != filters + hidden2
        || params.dense_weight.len() != cache.features.len()
        || cache
            .conv_pre
            .iter()
            .zip(&params.conv)
            .any(|(z, c)| z.shape()[0] != c.out_channels())
    {
        return Err(NnError::StaleCache(
            "forward cache was produced with different parameter shapes".into(),
        ));
    }
    let mut grads = params.zeros_like();
    grads.dense_bias.data_mut()[0] = d_output;
    let d_features: Vec<f64> = params
        .dense_weight
        .data()
        .iter()
        .map(|w| w * d_output)
        .collect();
    for (g, f) in grads.dense_weight.data_mut().iter_mut().zip(&cache.features) {
        *g = d_output * f;
    }

    let d_lstm: Vec<f64> = d_features[filters..]
        .iter()
        .enumerate()
        .map(|(j, d)| d * cache.lstm_mask.factor(j))
        .collect();
    let (gf, gb) = bilstm_backward(
        &cache.prefix.sequence,
        &cache.prefix.lstm_cache,
        &params.lstm_fwd,
        &params.lstm_bwd,
        &d_lstm,
    )?;
    grads.lstm_fwd = gf;
    grads.lstm_bwd = gb;

    let time = cache.prefix.channels.shape()[1];
    let mut d_act = Tensor::zeros(&[filters, time]);
    for r in 0..filters {
        d_act.row_mut(r).fill(d_features[r] / time as f64);
    }
    for l in (0..layers).rev() {
        let post = &cache.conv_post[l];
        let mask = &cache.conv_masks[l];
        let scale = mask.scale();
        let dz_data: Vec<f64> = d_act
            .data()
            .iter()
            .zip(post.data())
            .zip(&mask.keep_flags)
            .map(|((&d, &a), &k)| if k && a > 0.0 { d * scale } else { 0.0 })
            .collect();
        let dz = Tensor::new(post.shape().to_vec(), dz_data)?;
        let input = if l == 0 {
            &cache.prefix.channels
        } else {
            &cache.conv_post[l - 1]
        };
        let g = conv1d_backward(input, &params.conv[l], &dz, l > 0)?;
        grads.conv[l].weight = g.weight;
        grads.conv[l].bias = g.bias;
        if let Some(dx) = g.input {
            d_act = dx;
        }
    }
    Ok(grads)
}
