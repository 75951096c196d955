use super::forward::{FrameTrace, GruTrace, PROB_CLAMP};
use super::{GruSpans, NetParams};
use crate::error::{Error, Result};

/// Exact gradient of the mean BCE over one contiguous sequence (full BPTT).
pub fn backward(params: &NetParams, traces: &[FrameTrace], targets: &[f64]) -> Result<NetParams> {
    let mut grad = NetParams::zeros(*params.config())?;
    let scale = 1.0 / traces.len().max(1) as f64;
    accumulate_gradient(params, traces, targets, scale, &mut grad)?;
    Ok(grad)
}

/// Adds `scale · ∂(Σ_t BCE_t)/∂θ` for one sequence into `grad`.
pub fn accumulate_gradient(
    params: &NetParams,
    traces: &[FrameTrace],
    targets: &[f64],
    scale: f64,
    grad: &mut NetParams,
) -> Result<()> {
    if traces.is_empty() {
        return Err(Error::Contract("backward needs at least one frame trace".into()));
    }
    if traces.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} traces for {} targets",
            traces.len(),
            targets.len()
        )));
    }
    params.same_shape(grad)?;
    let cfg = *params.config();
    let l = params.layout().clone();
    let (c1, c2) = (cfg.conv1, cfg.conv2);
    let (len1, len2) = (cfg.conv1_len(), cfg.conv2_len());
    let mut dh1_next = vec![0.0; cfg.gru1_units];
    let mut dh2_next = vec![0.0; cfg.gru2_units];

    for (t, &z) in traces.iter().zip(targets).rev() {
        let dlogit = if t.p < PROB_CLAMP || t.p > 1.0 - PROB_CLAMP {
            0.0
        } else {
            (t.p - z) * scale
        };

        // FC2
        let w2 = params.slice(l.fc2_w).to_vec();
        for (g, &f) in grad.slice_mut(l.fc2_w).iter_mut().zip(&t.f1) {
            *g += dlogit * f;
        }
        grad.slice_mut(l.fc2_b)[0] += dlogit;
        let df1: Vec<f64> = (0..cfg.fc1_out)
            .map(|o| if t.f1[o] > 0.0 { w2[o] * dlogit } else { 0.0 })
            .collect();

        // FC1
        let n2 = cfg.gru2_units;
        let w1 = params.slice(l.fc1_w);
        let mut dh2 = dh2_next.clone();
        for o in 0..cfg.fc1_out {
            for i in 0..n2 {
                dh2[i] += w1[o * n2 + i] * df1[o];
            }
        }
        {
            let gw = grad.slice_mut(l.fc1_w);
            for o in 0..cfg.fc1_out {
                for i in 0..n2 {
                    gw[o * n2 + i] += df1[o] * t.g2.h[i];
                }
            }
        }
        for (g, d) in grad.slice_mut(l.fc1_b).iter_mut().zip(&df1) {
            *g += d;
        }

        let (dx2, dh2_prev) = gru_backward(params, &l.gru2, &t.g1.h, &t.g2, &dh2, grad);
        dh2_next = dh2_prev;
        let dh1: Vec<f64> = dx2.iter().zip(&dh1_next).map(|(a, b)| a + b).collect();
        let (da2, dh1_prev) = gru_backward(params, &l.gru1, &t.a2, &t.g1, &dh1, grad);
        dh1_next = dh1_prev;

        // conv2
        let w = params.slice(l.conv2_w);
        let mut da1 = vec![0.0; c2.in_ch * len1];
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; c2.out_ch];
        for o in 0..c2.out_ch {
            for p in 0..len2 {
                let d = if t.a2[o * len2 + p] > 0.0 { da2[o * len2 + p] } else { 0.0 };
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for i in 0..c2.in_ch {
                    let base = (o * c2.in_ch + i) * c2.kernel;
                    for k in 0..c2.kernel {
                        let xi = i * len1 + p * c2.stride + k;
                        gw[base + k] += d * t.a1[xi];
                        da1[xi] += d * w[base + k];
                    }
                }
            }
        }
        add_into(grad.slice_mut(l.conv2_w), &gw);
        add_into(grad.slice_mut(l.conv2_b), &gb);

        // conv1
        let gw1 = grad.slice_mut(l.conv1_w);
        let mut gb1 = vec![0.0; c1.out_ch];
        for o in 0..c1.out_ch {
            for p in 0..len1 {
                let idx = o * len1 + p;
                if t.a1[idx] <= 0.0 {
                    continue;
                }
                let d = da1[idx];
                gb1[o] += d;
                for k in 0..c1.kernel {
                    gw1[o * c1.kernel + k] += d * t.x[p * c1.stride + k];
                }
            }
        }
        add_into(grad.slice_mut(l.conv1_b), &gb1);
    }
    Ok(())
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Backpropagates `dh` (gradient w.r.t. this step's output state) through one GRU step.
/// Returns gradients w.r.t. the step input and the previous state.
fn gru_backward(
    params: &NetParams,
    g: &GruSpans,
    x: &[f64],
    tr: &GruTrace,
    dh: &[f64],
    grad: &mut NetParams,
) -> (Vec<f64>, Vec<f64>) {
    let n = g.units;
    let mut dx = vec![0.0; g.input];
    let mut dh_prev: Vec<f64> = (0..n).map(|j| dh[j] * (1.0 - tr.z[j])).collect();
    let da_z: Vec<f64> = (0..n)
        .map(|j| dh[j] * (tr.hc[j] - tr.h_prev[j]) * tr.z[j] * (1.0 - tr.z[j]))
        .collect();
    let da_h: Vec<f64> = (0..n)
        .map(|j| dh[j] * tr.z[j] * (1.0 - tr.hc[j] * tr.hc[j]))
        .collect();
    let rh: Vec<f64> = tr.r.iter().zip(&tr.h_prev).map(|(a, b)| a * b).collect();

    // Candidate: a_h = W_h x + U_h (r∘h) + b_h
    let u_h = params.slice(g.u[2]);
    let mut d_rh = vec![0.0; n];
    for j in 0..n {
        for i in 0..n {
            d_rh[i] += u_h[j * n + i] * da_h[j];
        }
    }
    let da_r: Vec<f64> = (0..n)
        .map(|i| d_rh[i] * tr.h_prev[i] * tr.r[i] * (1.0 - tr.r[i]))
        .collect();
    for i in 0..n {
        dh_prev[i] += d_rh[i] * tr.r[i];
    }

    let das = [&da_z, &da_r, &da_h];
    for (k, da) in das.iter().enumerate() {
        let h_in: &[f64] = if k == 2 { &rh } else { &tr.h_prev };
        let w = params.slice(g.w[k]);
        for j in 0..n {
            let d = da[j];
            if d == 0.0 {
                continue;
            }
            let wr = &w[j * g.input..][..g.input];
            for (dxi, wi) in dx.iter_mut().zip(wr) {
                *dxi += wi * d;
            }
        }
        if k < 2 {
            let u = params.slice(g.u[k]);
            for j in 0..n {
                for i in 0..n {
                    dh_prev[i] += u[j * n + i] * da[j];
                }
            }
        }
        let gw = grad.slice_mut(g.w[k]);
        for j in 0..n {
            let d = da[j];
            if d == 0.0 {
                continue;
            }
            for (gwi, xi) in gw[j * g.input..][..g.input].iter_mut().zip(x) {
                *gwi += d * xi;
            }
        }
        let gu = grad.slice_mut(g.u[k]);
        for j in 0..n {
            for i in 0..n {
                gu[j * n + i] += da[j] * h_in[i];
            }
        }
        add_into(grad.slice_mut(g.b[k]), da);
    }
    (dx, dh_prev)
}
