use super::{shape_err, ModelParams, NnError};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update on flat slices. `step` counts from 1.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
) -> Result<(), NnError> {
    let n = params.len();
    if grads.len() != n || m.len() != n || v.len() != n {
        return Err(shape_err("adam: parameter, gradient and moment lengths differ"));
    }
    if step == 0 {
        return Err(NnError::InvalidConfig("adam step index starts at 1".into()));
    }
    let c1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(step as i32);
    for i in 0..n {
        let g = grads[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
    Ok(())
}

/// Adam over every tensor of the model.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    step: u64,
    lr: f64,
) -> Result<(), NnError> {
    if !params.shapes_match(grads) || !params.shapes_match(&state.m) || !params.shapes_match(&state.v) {
        return Err(shape_err("adam: gradient or moment shapes differ from parameters"));
    }
    let g: Vec<_> = grads.named_tensors().into_iter().map(|(_, t)| t).collect();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(g).zip(ms).zip(vs) {
        adam_update(p.data_mut(), g.data(), m.data_mut(), v.data_mut(), step, lr)?;
    }
    Ok(())
}
