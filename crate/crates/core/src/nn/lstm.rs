use super::tensor::dot;
use super::{shape_err, LstmParams, NnError, Tensor};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one LSTM direction, stored in processing order.
#[derive(Debug, Clone)]
pub struct LstmCache {
    /// Time index visited at each step.
    pub order: Vec<usize>,
    /// Post-activation gates, `[steps, 4H]` in i, f, g, o order.
    pub gates: Vec<f64>,
    /// Cell states, `[steps, H]`.
    pub cells: Vec<f64>,
    /// Hidden states, `[steps, H]`.
    pub hiddens: Vec<f64>,
    pub hidden: usize,
}

impl LstmCache {
    /// Hidden state after the last processed step.
    pub fn final_hidden(&self) -> &[f64] {
        let h = self.hidden;
        let s = self.order.len();
        &self.hiddens[(s - 1) * h..s * h]
    }
}

fn check_input(x: &Tensor, p: &LstmParams) -> Result<(usize, usize), NnError> {
    if x.shape().len() != 2 || x.shape()[1] != p.input_size() {
        return Err(shape_err(format!(
            "lstm input {:?} vs input size {}",
            x.shape(),
            p.input_size()
        )));
    }
    Ok((x.shape()[0], x.shape()[1]))
}

/// Runs one direction over `x` (`[T, features]`), backwards in time when
/// `reverse` is set.
pub fn lstm_direction_forward(
    x: &Tensor,
    p: &LstmParams,
    reverse: bool,
) -> Result<LstmCache, NnError> {
    let (time, input) = check_input(x, p)?;
    let h = p.hidden();
    let order: Vec<usize> = if reverse {
        (0..time).rev().collect()
    } else {
        (0..time).collect()
    };
    let mut gates = vec![0.0; time * 4 * h];
    let mut cells = vec![0.0; time * h];
    let mut hiddens = vec![0.0; time * h];
    let mut pre = vec![0.0; 4 * h];
    let zeros = vec![0.0; h];
    for (s, &t) in order.iter().enumerate() {
        let xt = x.row(t);
        let (h_prev, c_prev): (&[f64], &[f64]) = if s == 0 {
            (&zeros, &zeros)
        } else {
            (&hiddens[(s - 1) * h..s * h], &cells[(s - 1) * h..s * h])
        };
        pre.copy_from_slice(p.bias.data());
        for (r, acc) in pre.iter_mut().enumerate() {
            let wi = p.w_ih.row(r);
            let wh = p.w_hh.row(r);
            let mut sum = 0.0;
            for k in 0..input {
                sum += wi[k] * xt[k];
            }
            *acc += sum + dot(wh, h_prev);
        }
        let g_row = &mut gates[s * 4 * h..(s + 1) * 4 * h];
        for j in 0..h {
            g_row[j] = sigmoid(pre[j]);
            g_row[h + j] = sigmoid(pre[h + j]);
            g_row[2 * h + j] = pre[2 * h + j].tanh();
            g_row[3 * h + j] = sigmoid(pre[3 * h + j]);
        }
        let mut c_new = vec![0.0; h];
        let mut h_new = vec![0.0; h];
        for j in 0..h {
            c_new[j] = g_row[h + j] * c_prev[j] + g_row[j] * g_row[2 * h + j];
            h_new[j] = g_row[3 * h + j] * c_new[j].tanh();
        }
        cells[s * h..(s + 1) * h].copy_from_slice(&c_new);
        hiddens[s * h..(s + 1) * h].copy_from_slice(&h_new);
    }
    if !cells.iter().chain(&hiddens).all(|v| v.is_finite()) {
        return Err(NnError::NonFiniteActivation("lstm"));
    }
    Ok(LstmCache {
        order,
        gates,
        cells,
        hiddens,
        hidden: h,
    })
}

/// Backpropagation through time for one direction given the gradient of its
/// final hidden state. Returns parameter gradients.
pub(crate) fn lstm_direction_backward(
    x: &Tensor,
    p: &LstmParams,
    cache: &LstmCache,
    d_final: &[f64],
) -> Result<LstmParams, NnError> {
    let (_, input) = check_input(x, p)?;
    let h = p.hidden();
    if cache.hidden != h || d_final.len() != h || cache.order.len() != x.shape()[0] {
        return Err(NnError::StaleCache("lstm cache does not match input/params".into()));
    }
    let mut grads = LstmParams::zeros(input, h);
    let mut dh = d_final.to_vec();
    let mut dc = vec![0.0; h];
    let mut dpre = vec![0.0; 4 * h];
    let zeros = vec![0.0; h];
    for s in (0..cache.order.len()).rev() {
        let t = cache.order[s];
        let xt = x.row(t);
        let (h_prev, c_prev): (&[f64], &[f64]) = if s == 0 {
            (&zeros, &zeros)
        } else {
            (
                &cache.hiddens[(s - 1) * h..s * h],
                &cache.cells[(s - 1) * h..s * h],
            )
        };
        let g = &cache.gates[s * 4 * h..(s + 1) * 4 * h];
        let c = &cache.cells[s * h..(s + 1) * h];
        for j in 0..h {
            let (ig, fg, cg, og) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let tc = c[j].tanh();
            let d_o = dh[j] * tc;
            let dcj = dc[j] + dh[j] * og * (1.0 - tc * tc);
            dpre[j] = dcj * cg * ig * (1.0 - ig);
            dpre[h + j] = dcj * c_prev[j] * fg * (1.0 - fg);
            dpre[2 * h + j] = dcj * ig * (1.0 - cg * cg);
            dpre[3 * h + j] = d_o * og * (1.0 - og);
            dc[j] = dcj * fg;
        }
        for (b, d) in grads.bias.data_mut().iter_mut().zip(&dpre) {
            *b += d;
        }
        dh.fill(0.0);
        for (r, &d) in dpre.iter().enumerate() {
            let gi = grads.w_ih.row_mut(r);
            for k in 0..input {
                gi[k] += d * xt[k];
            }
            let gh = grads.w_hh.row_mut(r);
            for k in 0..h {
                gh[k] += d * h_prev[k];
            }
            let wh = p.w_hh.row(r);
            for k in 0..h {
                dh[k] += wh[k] * d;
            }
        }
    }
    Ok(grads)
}

/// Both directions of a bidirectional LSTM.
#[derive(Debug, Clone)]
pub struct BiLstmCache {
    pub forward: LstmCache,
    pub backward: LstmCache,
}

/// Returns `[h_fwd(T), h_bwd(1)]` (`2H` values) and the cache for BPTT.
pub fn bilstm_forward(
    x: &Tensor,
    fwd: &LstmParams,
    bwd: &LstmParams,
) -> Result<(Tensor, BiLstmCache), NnError> {
    if fwd.hidden() != bwd.hidden() {
        return Err(shape_err("lstm directions differ in hidden size"));
    }
    let forward = lstm_direction_forward(x, fwd, false)?;
    let backward = lstm_direction_forward(x, bwd, true)?;
    let mut out = forward.final_hidden().to_vec();
    out.extend_from_slice(backward.final_hidden());
    Ok((Tensor::from_vec(out), BiLstmCache { forward, backward }))
}

/// Gradients for both directions given `d_out` of length `2H`.
pub fn bilstm_backward(
    x: &Tensor,
    cache: &BiLstmCache,
    fwd: &LstmParams,
    bwd: &LstmParams,
    d_out: &[f64],
) -> Result<(LstmParams, LstmParams), NnError> {
    let h = fwd.hidden();
    if d_out.len() != 2 * h {
        return Err(NnError::StaleCache(format!(
            "bilstm gradient of {} for hidden size {h}",
            d_out.len()
        )));
    }
    let gf = lstm_direction_backward(x, fwd, &cache.forward, &d_out[..h])?;
    let gb = lstm_direction_backward(x, bwd, &cache.backward, &d_out[h..])?;
    Ok((gf, gb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng, input: usize, h: usize) -> LstmParams {
        let mut p = LstmParams::zeros(input, h);
        for t in [&mut p.w_ih, &mut p.w_hh, &mut p.bias] {
            for v in t.data_mut() {
                *v = rng.gen_range(-0.8..0.8);
            }
        }
        p
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let x = Tensor::new(vec![5, 1], vec![0.3, -1.0, 2.0, 0.1, 0.7]).unwrap();
        let p = LstmParams::zeros(1, 4);
        let (out, _) = bilstm_forward(&x, &p, &p).unwrap();
        assert_eq!(out.data(), &[0.0; 8]);
    }

    #[test]
    fn single_step_closed_form() {
        // One unit, one input, one step from zero state.
        let mut p = LstmParams::zeros(1, 1);
        p.w_ih.data_mut().copy_from_slice(&[0.5, -0.3, 0.8, 0.2]);
        p.bias.data_mut().copy_from_slice(&[0.1, 1.0, -0.2, 0.05]);
        let xv = 1.7;
        let x = Tensor::new(vec![1, 1], vec![xv]).unwrap();
        let cache = lstm_direction_forward(&x, &p, false).unwrap();
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let i = s(0.5 * xv + 0.1);
        let g = (0.8 * xv - 0.2).tanh();
        let o = s(0.2 * xv + 0.05);
        let c = i * g;
        let h = o * c.tanh();
        assert!((cache.final_hidden()[0] - h).abs() < 1e-12);
    }

    #[test]
    fn reversal_swaps_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (t, h) = (7, 3);
        let xs: Vec<f64> = (0..t).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fwd = random_params(&mut rng, 1, h);
        let bwd = random_params(&mut rng, 1, h);
        let x = Tensor::new(vec![t, 1], xs.clone()).unwrap();
        let xr = Tensor::new(vec![t, 1], xs.iter().rev().cloned().collect()).unwrap();
        let (a, _) = bilstm_forward(&x, &fwd, &bwd).unwrap();
        let (b, _) = bilstm_forward(&xr, &bwd, &fwd).unwrap();
        for j in 0..h {
            assert!((a.data()[j] - b.data()[h + j]).abs() < 1e-14);
            assert!((a.data()[h + j] - b.data()[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_wrong_feature_count() {
        let x = Tensor::zeros(&[4, 2]);
        let p = LstmParams::zeros(1, 2);
        assert!(matches!(bilstm_forward(&x, &p, &p), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (t, h, input) = (6, 3, 2);
        let x = Tensor::new(vec![t, input], (0..t * input).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let p = random_params(&mut rng, input, h);
        let weights: Vec<f64> = (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let objective = |p: &LstmParams| -> f64 {
            let c = lstm_direction_forward(&x, p, false).unwrap();
            c.final_hidden().iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let cache = lstm_direction_forward(&x, &p, false).unwrap();
        let grads = lstm_direction_backward(&x, &p, &cache, &weights).unwrap();
        let step = 1e-6;
        for which in 0..3 {
            let n = [&p.w_ih, &p.w_hh, &p.bias][which].len();
            for k in 0..n {
                let mut plus = p.clone();
                let mut minus = p.clone();
                [&mut plus.w_ih, &mut plus.w_hh, &mut plus.bias][which].data_mut()[k] += step;
                [&mut minus.w_ih, &mut minus.w_hh, &mut minus.bias][which].data_mut()[k] -= step;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * step);
                let an = [&grads.w_ih, &grads.w_hh, &grads.bias][which].data()[k];
                assert!((fd - an).abs() < 1e-7 * (1.0 + fd.abs()), "{which}/{k}: {fd} vs {an}");
            }
        }
    }
}
