use rand::Rng;

use super::tensor::dot;
use super::{shape_err, ConvParams, NnError, Tensor};
use crate::seed::rng_for;

/// Left zero-padding for a "same" convolution; the right side gets the rest.
fn same_left_pad(window: usize) -> usize {
    (window - 1) / 2
}

/// Overlap of output positions `0..time` with input positions shifted by
/// `offset`: returns the output range whose `t + offset` lands in `0..time`,
/// possibly empty.
fn valid_range(time: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (time as isize - offset).clamp(0, time as isize) as usize;
    (lo.min(hi), hi)
}

/// Stride-1 "same" cross-correlation: `x` is `[in, T]`, result is `[out, T]`.
pub fn conv1d_forward(x: &Tensor, layer: &ConvParams) -> Result<Tensor, NnError> {
    if x.shape().len() != 2 || x.shape()[0] != layer.in_channels() {
        return Err(shape_err(format!(
            "conv input {:?} vs {} input channels",
            x.shape(),
            layer.in_channels()
        )));
    }
    let (in_ch, time) = (x.shape()[0], x.shape()[1]);
    let (out_ch, window) = (layer.out_channels(), layer.window());
    let left = same_left_pad(window);
    // Zero-padded copy so every tap reads a full-length slice.
    let span = time + window - 1;
    let mut xp = vec![0.0; in_ch * span];
    for i in 0..in_ch {
        xp[i * span + left..i * span + left + time].copy_from_slice(x.row(i));
    }
    let taps = in_ch * window;
    let tap = |j: usize| {
        let (i, k) = (j / window, j % window);
        &xp[i * span + k..i * span + k + time]
    };
    let w = layer.weight.data();
    let mut y = vec![0.0; out_ch * time];
    for o in 0..out_ch {
        let wo = &w[o * taps..(o + 1) * taps];
        let y_row = &mut y[o * time..(o + 1) * time];
        y_row.fill(layer.bias.data()[o]);
        let mut j = 0;
        while j + 4 <= taps {
            let (w0, w1, w2, w3) = (wo[j], wo[j + 1], wo[j + 2], wo[j + 3]);
            let (s0, s1, s2, s3) = (tap(j), tap(j + 1), tap(j + 2), tap(j + 3));
            for t in 0..time {
                y_row[t] += w0 * s0[t] + w1 * s1[t] + w2 * s2[t] + w3 * s3[t];
            }
            j += 4;
        }
        for (jj, &wv) in wo.iter().enumerate().skip(j) {
            for (yv, xv) in y_row.iter_mut().zip(tap(jj)) {
                *yv += wv * xv;
            }
        }
    }
    Tensor::new(vec![out_ch, time], y)
}

/// Gradients of one convolutional layer.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub weight: Tensor,
    pub bias: Tensor,
    /// Gradient with respect to the layer input, when requested.
    pub input: Option<Tensor>,
}

pub fn conv1d_backward(
    x: &Tensor,
    layer: &ConvParams,
    dy: &Tensor,
    want_input_grad: bool,
) -> Result<ConvGrads, NnError> {
    let (in_ch, time) = (x.shape()[0], x.shape()[1]);
    let (out_ch, window) = (layer.out_channels(), layer.window());
    if in_ch != layer.in_channels() || dy.shape() != [out_ch, time] {
        return Err(shape_err(format!(
            "conv backward: x {:?}, dy {:?}, weight {:?}",
            x.shape(),
            dy.shape(),
            layer.weight.shape()
        )));
    }
    let left = same_left_pad(window) as isize;
    let w = layer.weight.data();
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; out_ch];
    let mut dx = if want_input_grad {
        vec![0.0; in_ch * time]
    } else {
        Vec::new()
    };
    for o in 0..out_ch {
        let dy_row = dy.row(o);
        db[o] = dy_row.iter().sum();
        for i in 0..in_ch {
            let x_row = x.row(i);
            for k in 0..window {
                let off = k as isize - left;
                let (lo, hi) = valid_range(time, off);
                if lo >= hi {
                    continue;
                }
                let xs = (lo as isize + off) as usize;
                let xe = (hi as isize + off) as usize;
                let idx = (o * in_ch + i) * window + k;
                dw[idx] = dot(&dy_row[lo..hi], &x_row[xs..xe]);
                if want_input_grad {
                    let wv = w[idx];
                    let dx_row = &mut dx[i * time..(i + 1) * time];
                    for (d, g) in dx_row[xs..xe].iter_mut().zip(&dy_row[lo..hi]) {
                        *d += wv * g;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        weight: Tensor::new(layer.weight.shape().to_vec(), dw)?,
        bias: Tensor::new(vec![out_ch], db)?,
        input: if want_input_grad {
            Some(Tensor::new(vec![in_ch, time], dx)?)
        } else {
            None
        },
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Per-row mean over the time axis of a `[filters, T]` tensor.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor, NnError> {
    if x.shape().len() != 2 {
        return Err(shape_err(format!("pool expects [filters, T], got {:?}", x.shape())));
    }
    let (rows, time) = (x.shape()[0], x.shape()[1]);
    let pooled = (0..rows)
        .map(|r| x.row(r).iter().sum::<f64>() / time as f64)
        .collect();
    Ok(Tensor::from_vec(pooled))
}

/// Keep/drop flags for one dropout site.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub keep_flags: Vec<bool>,
    pub rate: f64,
    pub rng_seed: u64,
}

impl DropoutMask {
    /// Draws `len` independent keep flags with probability `1 - rate`.
    pub fn sample(rate: f64, rng_seed: u64, len: usize) -> Self {
        let keep_flags = if rate <= 0.0 {
            vec![true; len]
        } else {
            let mut rng = rng_for(rng_seed, "dropout_mask", 0);
            (0..len).map(|_| rng.gen::<f64>() >= rate).collect()
        };
        Self {
            keep_flags,
            rate,
            rng_seed,
        }
    }

    /// Mask that keeps everything (dropout disabled).
    pub fn identity(len: usize) -> Self {
        Self {
            keep_flags: vec![true; len],
            rate: 0.0,
            rng_seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.keep_flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep_flags.is_empty()
    }

    pub fn scale(&self) -> f64 {
        1.0 / (1.0 - self.rate)
    }

    /// Multiplier applied to entry `i`: `1 / (1 - rate)` or 0.
    pub fn factor(&self, i: usize) -> f64 {
        if self.keep_flags[i] {
            self.scale()
        } else {
            0.0
        }
    }
}

/// Inverted dropout: kept entries are scaled by `1 / (1 - rate)`.
pub fn dropout_apply(x: &Tensor, mask: &DropoutMask) -> Result<Tensor, NnError> {
    if mask.len() != x.len() {
        return Err(shape_err(format!(
            "dropout mask of {} for tensor of {}",
            mask.len(),
            x.len()
        )));
    }
    if mask.rate == 0.0 {
        return Ok(x.clone());
    }
    let scale = mask.scale();
    let data = x
        .data()
        .iter()
        .zip(&mask.keep_flags)
        .map(|(&v, &k)| if k { v * scale } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}
