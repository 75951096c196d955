use super::{GruSpans, NetParams};
use crate::dsp::FeatureVector;
use crate::error::{Error, Result};

/// Predictions are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Hidden states of both recurrent layers.
#[derive(Debug, Clone, PartialEq)]
pub struct GruState {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
}

impl GruState {
    pub fn zeros(params: &NetParams) -> Self {
        let c = params.config();
        Self {
            h1: vec![0.0; c.gru1_units],
            h2: vec![0.0; c.gru2_units],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruTrace {
    pub h_prev: Vec<f64>,
    /// Gate pre-activations in z, r, h order.
    pub pre: [Vec<f64>; 3],
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    /// Candidate state `tanh(...)`.
    pub hc: Vec<f64>,
    pub h: Vec<f64>,
}

/// Intermediates of one frame, kept for backpropagation and calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTrace {
    pub x: Vec<f64>,
    /// Post-ReLU conv1 output, channel-major.
    pub a1: Vec<f64>,
    /// Post-ReLU conv2 output, flattened channel-major.
    pub a2: Vec<f64>,
    pub g1: GruTrace,
    pub g2: GruTrace,
    /// Post-ReLU FC1 output.
    pub f1: Vec<f64>,
    pub logit: f64,
    pub p: f64,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Valid strided 1-D convolution followed by ReLU. `x` is `[in_ch][in_len]`.
pub(crate) fn conv_relu(
    x: &[f64],
    in_ch: usize,
    in_len: usize,
    w: &[f64],
    b: &[f64],
    kernel: usize,
    stride: usize,
    out_len: usize,
) -> Vec<f64> {
    let out_ch = b.len();
    let mut out = vec![0.0; out_ch * out_len];
    for o in 0..out_ch {
        for p in 0..out_len {
            let mut acc = b[o];
            for i in 0..in_ch {
                let wk = &w[(o * in_ch + i) * kernel..][..kernel];
                let xs = &x[i * in_len + p * stride..][..kernel];
                acc += dot(wk, xs);
            }
            out[o * out_len + p] = acc.max(0.0);
        }
    }
    out
}

pub(crate) fn gru_step(params: &NetParams, g: &GruSpans, x: &[f64], h: &[f64]) -> GruTrace {
    let n = g.units;
    let gate = |k: usize, j: usize, hv: &[f64]| {
        let w = &params.slice(g.w[k])[j * g.input..][..g.input];
        let u = &params.slice(g.u[k])[j * n..][..n];
        params.slice(g.b[k])[j] + dot(w, x) + dot(u, hv)
    };
    let pre_z: Vec<f64> = (0..n).map(|j| gate(0, j, h)).collect();
    let pre_r: Vec<f64> = (0..n).map(|j| gate(1, j, h)).collect();
    let z: Vec<f64> = pre_z.iter().map(|&a| sigmoid(a)).collect();
    let r: Vec<f64> = pre_r.iter().map(|&a| sigmoid(a)).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let pre_h: Vec<f64> = (0..n).map(|j| gate(2, j, &rh)).collect();
    let hc: Vec<f64> = pre_h.iter().map(|a| a.tanh()).collect();
    let h_new = (0..n).map(|j| (1.0 - z[j]) * h[j] + z[j] * hc[j]).collect();
    GruTrace {
        h_prev: h.to_vec(),
        pre: [pre_z, pre_r, pre_h],
        z,
        r,
        hc,
        h: h_new,
    }
}

/// One streaming step: returns the speech probability, the trace and the next state.
pub fn forward_frame(params: &NetParams, state: &GruState, x: &FeatureVector) -> Result<(f64, FrameTrace, GruState)> {
    let trace = forward_values(params, state, &x.values)?;
    let next = GruState {
        h1: trace.g1.h.clone(),
        h2: trace.g2.h.clone(),
    };
    Ok((trace.p, trace, next))
}

pub(crate) fn forward_values(params: &NetParams, state: &GruState, x: &[f64]) -> Result<FrameTrace> {
    let cfg = params.config();
    if x.len() != cfg.n_mels {
        return Err(Error::Shape(format!("feature vector has {} values, expected {}", x.len(), cfg.n_mels)));
    }
    if state.h1.len() != cfg.gru1_units || state.h2.len() != cfg.gru2_units {
        return Err(Error::Shape("recurrent state does not match the network".into()));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite feature value".into()));
    }
    if !state.h1.iter().chain(&state.h2).all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite recurrent state".into()));
    }
    let l = params.layout();
    let (c1, c2) = (cfg.conv1, cfg.conv2);
    let a1 = conv_relu(
        x,
        1,
        cfg.n_mels,
        params.slice(l.conv1_w),
        params.slice(l.conv1_b),
        c1.kernel,
        c1.stride,
        cfg.conv1_len(),
    );
    let a2 = conv_relu(
        &a1,
        c2.in_ch,
        cfg.conv1_len(),
        params.slice(l.conv2_w),
        params.slice(l.conv2_b),
        c2.kernel,
        c2.stride,
        cfg.conv2_len(),
    );
    let g1 = gru_step(params, &l.gru1, &a2, &state.h1);
    let g2 = gru_step(params, &l.gru2, &g1.h, &state.h2);
    let w1 = params.slice(l.fc1_w);
    let b1 = params.slice(l.fc1_b);
    let f1: Vec<f64> = (0..cfg.fc1_out)
        .map(|o| (b1[o] + dot(&w1[o * cfg.gru2_units..][..cfg.gru2_units], &g2.h)).max(0.0))
        .collect();
    let logit = params.slice(l.fc2_b)[0] + dot(params.slice(l.fc2_w), &f1);
    Ok(FrameTrace {
        x: x.to_vec(),
        a1,
        a2,
        g1,
        g2,
        f1,
        logit,
        p: sigmoid(logit),
    })
}

/// Stateful pass over a frame sequence starting from `state`.
pub fn forward_sequence(params: &NetParams, state: &GruState, frames: &[FeatureVector]) -> Result<(Vec<FrameTrace>, GruState)> {
    let mut state = state.clone();
    let mut traces = Vec::with_capacity(frames.len());
    for f in frames {
        let (_, trace, next) = forward_frame(params, &state, f)?;
        traces.push(trace);
        state = next;
    }
    Ok((traces, state))
}

/// Mean binary cross-entropy with soft targets.
pub fn bce_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(&p, &z)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(z * p.ln() + (1.0 - z) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / predictions.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, NetConfig};
    use proptest::prelude::*;

    fn fv(values: Vec<f64>) -> FeatureVector {
        FeatureVector {
            values,
            frame_index: 0,
            energy_db: 0.0,
        }
    }

    #[test]
    fn zero_network_fixed_point() {
        let p = NetParams::zeros(NetConfig::default()).unwrap();
        let s = GruState::zeros(&p);
        let (prob, trace, next) = forward_frame(&p, &s, &fv(vec![1.3; 32])).unwrap();
        assert_eq!(prob, 0.5);
        assert!(trace.g1.z.iter().all(|&z| z == 0.5));
        assert!(trace.g1.hc.iter().all(|&h| h == 0.0));
        assert!(next.h1.iter().chain(&next.h2).all(|&h| h == 0.0));
    }

    #[test]
    fn bce_values() {
        assert!((bce_loss(&[0.5], &[1.0]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((bce_loss(&[0.5], &[0.5]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap() <= 2e-7);
        assert!(matches!(bce_loss(&[0.5], &[1.0, 0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn soft_target_minimum_at_target() {
        // Cross-entropy at soft target z is minimized by p = z.
        let z = 0.3;
        let at = bce_loss(&[z], &[z]).unwrap();
        for p in [0.1, 0.2, 0.29, 0.31, 0.5, 0.9] {
            assert!(bce_loss(&[p], &[z]).unwrap() > at);
        }
    }

    #[test]
    fn threading_equivalence() {
        let p = init_params(NetConfig::default(), 3).unwrap();
        let frames: Vec<FeatureVector> = (0..6).map(|k| fv((0..32).map(|i| ((i * k) as f64).sin()).collect())).collect();
        let (traces, end) = forward_sequence(&p, &GruState::zeros(&p), &frames).unwrap();
        let mut s = GruState::zeros(&p);
        for (f, t) in frames.iter().zip(&traces) {
            let (prob, _, next) = forward_frame(&p, &s, f).unwrap();
            assert_eq!(prob.to_bits(), t.p.to_bits());
            s = next;
        }
        assert_eq!(s, end);
    }

    #[test]
    fn non_finite_input_rejected() {
        let p = init_params(NetConfig::default(), 3).unwrap();
        let mut x = vec![0.0; 32];
        x[4] = f64::NAN;
        assert!(matches!(forward_frame(&p, &GruState::zeros(&p), &fv(x)), Err(Error::Numeric(_))));
    }

    proptest! {
        #[test]
        fn output_in_open_unit_interval(x in prop::collection::vec(-20.0f64..20.0, 32), seed in 0u64..50) {
            let p = init_params(NetConfig::default(), seed).unwrap();
            let (prob, _, _) = forward_frame(&p, &GruState::zeros(&p), &fv(x)).unwrap();
            prop_assert!(prob > 0.0 && prob < 1.0);
        }
    }
}
