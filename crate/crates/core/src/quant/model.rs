use super::{CalibrationStats, FixedMultiplier, QInt, QParams, QTensor};
use crate::corpus::ClipFeatures;
use crate::dsp::FeatureVector;
use crate::error::{Error, Result};
use crate::net::{predict_clip, sigmoid, GruSpans, NetConfig, NetParams, Span};

/// Strided valid convolution with ReLU, integer weights and int32-scale bias.
#[derive(Debug, Clone, PartialEq)]
pub struct QConv<T: QInt> {
    pub w: QTensor<T>,
    pub bias: Vec<i64>,
    pub input: QParams,
    pub out: QParams,
    pub in_ch: usize,
    pub in_len: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_len: usize,
    pub(super) m: FixedMultiplier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QDense<T: QInt> {
    pub w: QTensor<T>,
    pub bias: Vec<i64>,
    pub input: QParams,
    pub out: QParams,
    pub relu: bool,
    pub in_dim: usize,
    pub(super) m: FixedMultiplier,
}

/// One GRU gate: input and recurrent weights, pre-activation mapping and LUT.
#[derive(Debug, Clone, PartialEq)]
pub struct QGate<T: QInt> {
    pub w: QTensor<T>,
    pub u: QTensor<T>,
    pub bias: Vec<i64>,
    pub pre: QParams,
    pub out: QParams,
    /// Activation indexed by `q_pre − T::MIN`.
    pub lut: Vec<T>,
    pub(super) m_x: FixedMultiplier,
    pub(super) m_h: FixedMultiplier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QGru<T: QInt> {
    pub input: QParams,
    pub hidden: QParams,
    pub units: usize,
    pub input_dim: usize,
    /// Gates in z, r, h order.
    pub gates: [QGate<T>; 3],
    pub(super) m_keep: FixedMultiplier,
    pub(super) m_cand: FixedMultiplier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetParams<T: QInt> {
    pub config: NetConfig,
    pub input: QParams,
    pub conv1: QConv<T>,
    pub conv2: QConv<T>,
    pub gru1: QGru<T>,
    pub gru2: QGru<T>,
    pub fc1: QDense<T>,
    pub fc2: QDense<T>,
    /// Sigmoid over the logit domain.
    pub out_lut: Vec<T>,
    pub output: QParams,
}

impl<T: QInt> QNetParams<T> {
    /// Recomputes every fixed-point multiplier from the stored scales.
    pub(super) fn refresh(&mut self) -> Result<()> {
        self.conv1.refresh()?;
        self.conv2.refresh()?;
        self.gru1.refresh()?;
        self.gru2.refresh()?;
        self.fc1.refresh()?;
        self.fc2.refresh()
    }
}

/// Integer hidden states at their calibrated scales.
#[derive(Debug, Clone, PartialEq)]
pub struct QState<T: QInt> {
    pub h1: Vec<T>,
    pub h2: Vec<T>,
}

impl<T: QInt> QState<T> {
    /// The exact integer encoding of a zero state.
    pub fn zeros(q: &QNetParams<T>) -> Self {
        Self {
            h1: vec![T::from_i32_sat(q.gru1.hidden.zero_point); q.gru1.units],
            h2: vec![T::from_i32_sat(q.gru2.hidden.zero_point); q.gru2.units],
        }
    }
}

fn quantize_bias<T: QInt>(b: &[f64], scale: f64) -> Vec<i64> {
    b.iter()
        .map(|&v| {
            let q = (v / scale).round();
            let limit = if T::BITS <= 8 { i32::MAX as f64 } else { i64::MAX as f64 / 4.0 };
            if q.abs() > limit {
                log::warn!("bias {v} saturates at scale {scale:e}");
            }
            q.clamp(-limit, limit) as i64
        })
        .collect()
}

fn build_lut<T: QInt>(pre: QParams, out: QParams, f: impl Fn(f64) -> f64) -> Vec<T> {
    (T::MIN..=T::MAX)
        .map(|q| out.quantize(f(pre.dequantize(T::from_i32_sat(q)))))
        .collect()
}

fn asym<T: QInt>(stats: &CalibrationStats, name: &str) -> Result<QParams> {
    let b = stats.get(name)?;
    Ok(QParams::asymmetric::<T>(b.min, b.max))
}

impl<T: QInt> QConv<T> {
    #[allow(clippy::too_many_arguments)]
    fn new(p: &NetParams, w: Span, b: Span, cfg: crate::net::ConvConfig, in_len: usize, input: QParams, out: QParams) -> Result<Self> {
        let wq = QTensor::<T>::symmetric(p.slice(w));
        let mut conv = Self {
            bias: quantize_bias::<T>(p.slice(b), input.scale * wq.scale),
            m: FixedMultiplier { mult: 0, shift: 0 },
            w: wq,
            input,
            out,
            in_ch: cfg.in_ch,
            in_len,
            kernel: cfg.kernel,
            stride: cfg.stride,
            out_len: cfg.out_len(in_len),
        };
        conv.refresh()?;
        Ok(conv)
    }

    pub(super) fn refresh(&mut self) -> Result<()> {
        self.m = FixedMultiplier::new(self.input.scale * self.w.scale / self.out.scale)?;
        Ok(())
    }

    fn forward(&self, x: &[T]) -> Vec<T> {
        let zp = self.input.zero_point as i64;
        let out_ch = self.bias.len();
        let lo = self.out.zero_point.max(T::MIN) as i64;
        let mut out = Vec::with_capacity(out_ch * self.out_len);
        for o in 0..out_ch {
            for p in 0..self.out_len {
                let mut acc = self.bias[o];
                for i in 0..self.in_ch {
                    let wk = &self.w.values[(o * self.in_ch + i) * self.kernel..][..self.kernel];
                    let xs = &x[i * self.in_len + p * self.stride..][..self.kernel];
                    for (w, v) in wk.iter().zip(xs) {
                        acc += w.to_i32() as i64 * (v.to_i32() as i64 - zp);
                    }
                }
                let q = self.out.zero_point as i64 + self.m.apply(acc);
                out.push(T::from_i32_sat(q.clamp(lo, T::MAX as i64) as i32));
            }
        }
        out
    }
}

impl<T: QInt> QDense<T> {
    fn new(p: &NetParams, w: Span, b: Span, in_dim: usize, input: QParams, out: QParams, relu: bool) -> Result<Self> {
        let wq = QTensor::<T>::symmetric(p.slice(w));
        let mut dense = Self {
            bias: quantize_bias::<T>(p.slice(b), input.scale * wq.scale),
            m: FixedMultiplier { mult: 0, shift: 0 },
            w: wq,
            input,
            out,
            relu,
            in_dim,
        };
        dense.refresh()?;
        Ok(dense)
    }

    pub(super) fn refresh(&mut self) -> Result<()> {
        self.m = FixedMultiplier::new(self.input.scale * self.w.scale / self.out.scale)?;
        Ok(())
    }

    fn forward(&self, x: &[T]) -> Vec<T> {
        let zp = self.input.zero_point as i64;
        let lo = if self.relu { self.out.zero_point.max(T::MIN) } else { T::MIN } as i64;
        self.bias
            .iter()
            .enumerate()
            .map(|(o, &b)| {
                let row = &self.w.values[o * self.in_dim..][..self.in_dim];
                let acc = b + row.iter().zip(x).map(|(w, v)| w.to_i32() as i64 * (v.to_i32() as i64 - zp)).sum::<i64>();
                let q = self.out.zero_point as i64 + self.m.apply(acc);
                T::from_i32_sat(q.clamp(lo, T::MAX as i64) as i32)
            })
            .collect()
    }
}

fn matvec<T: QInt>(w: &[T], row: usize, cols: usize, x: impl Iterator<Item = i64>) -> i64 {
    w[row * cols..][..cols].iter().zip(x).map(|(w, v)| w.to_i32() as i64 * v).sum()
}

impl<T: QInt> QGru<T> {
    fn new(p: &NetParams, g: &GruSpans, prefix: &str, input: QParams, stats: &CalibrationStats) -> Result<Self> {
        let hidden = asym::<T>(stats, &format!("{prefix}.h"))?;
        let sig = QParams::sigmoid_output::<T>();
        let tanh = QParams::tanh_output::<T>();
        let mut gates = Vec::with_capacity(3);
        for (k, name) in ["z", "r", "h"].iter().enumerate() {
            let pre = asym::<T>(stats, &format!("{prefix}.pre_{name}"))?;
            let w = QTensor::<T>::symmetric(p.slice(g.w[k]));
            let u = QTensor::<T>::symmetric(p.slice(g.u[k]));
            let out = if k == 2 { tanh } else { sig };
            let lut = if k == 2 {
                build_lut::<T>(pre, out, f64::tanh)
            } else {
                build_lut::<T>(pre, out, sigmoid)
            };
            gates.push(QGate {
                bias: quantize_bias::<T>(p.slice(g.b[k]), input.scale * w.scale),
                m_x: FixedMultiplier { mult: 0, shift: 0 },
                m_h: FixedMultiplier { mult: 0, shift: 0 },
                w,
                u,
                pre,
                out,
                lut,
            });
        }
        let mut gru = Self {
            input,
            hidden,
            units: g.units,
            input_dim: g.input,
            m_keep: FixedMultiplier { mult: 0, shift: 0 },
            m_cand: FixedMultiplier { mult: 0, shift: 0 },
            gates: gates.try_into().expect("three gates"),
        };
        gru.refresh()?;
        Ok(gru)
    }

    pub(super) fn refresh(&mut self) -> Result<()> {
        let span = T::span() as f64;
        let s_r = self.gates[1].out.scale;
        for k in 0..3 {
            // The candidate's recurrent input is r∘h at scale s_r · s_h.
            let rec_in = if k == 2 { s_r * self.hidden.scale } else { self.hidden.scale };
            let g = &mut self.gates[k];
            g.m_x = FixedMultiplier::new(self.input.scale * g.w.scale / g.pre.scale)?;
            g.m_h = FixedMultiplier::new(rec_in * g.u.scale / g.pre.scale)?;
        }
        self.m_keep = FixedMultiplier::new(1.0 / span)?;
        self.m_cand = FixedMultiplier::new(self.gates[2].out.scale / (span * self.hidden.scale))?;
        Ok(())
    }

    fn pre_activation(&self, k: usize, j: usize, x: &[T], rec: &[i64]) -> T {
        let g = &self.gates[k];
        let zp_x = self.input.zero_point as i64;
        let acc_x = g.bias[j] + matvec(&g.w.values, j, self.input_dim, x.iter().map(|v| v.to_i32() as i64 - zp_x));
        let acc_h = matvec(&g.u.values, j, self.units, rec.iter().copied());
        let q = g.pre.zero_point as i64 + g.m_x.apply(acc_x) + g.m_h.apply(acc_h);
        T::from_i32_sat(q.clamp(T::MIN as i64, T::MAX as i64) as i32)
    }

    fn lookup(&self, k: usize, q_pre: T) -> T {
        self.gates[k].lut[(q_pre.to_i32() - T::MIN) as usize]
    }

    fn step(&self, x: &[T], h: &[T]) -> Vec<T> {
        let n = self.units;
        let zp_h = self.hidden.zero_point as i64;
        let h_c: Vec<i64> = h.iter().map(|v| v.to_i32() as i64 - zp_h).collect();
        let z: Vec<T> = (0..n).map(|j| self.lookup(0, self.pre_activation(0, j, x, &h_c))).collect();
        let r: Vec<T> = (0..n).map(|j| self.lookup(1, self.pre_activation(1, j, x, &h_c))).collect();
        let zp_r = self.gates[1].out.zero_point as i64;
        let rh: Vec<i64> = r.iter().zip(&h_c).map(|(r, h)| (r.to_i32() as i64 - zp_r) * h).collect();
        let cand: Vec<T> = (0..n).map(|j| self.lookup(2, self.pre_activation(2, j, x, &rh))).collect();
        let zp_z = self.gates[0].out.zero_point as i64;
        let zp_t = self.gates[2].out.zero_point as i64;
        let span = T::span() as i64;
        (0..n)
            .map(|j| {
                let zc = z[j].to_i32() as i64 - zp_z;
                let keep = self.m_keep.apply((span - zc) * h_c[j]);
                let add = self.m_cand.apply(zc * (cand[j].to_i32() as i64 - zp_t));
                T::from_i32_sat((zp_h + keep + add).clamp(T::MIN as i64, T::MAX as i64) as i32)
            })
            .collect()
    }
}

fn quantize_generic<T: QInt>(params: &NetParams, stats: &CalibrationStats) -> Result<QNetParams<T>> {
    let cfg = *params.config();
    let l = params.layout();
    let input = asym::<T>(stats, "input")?;
    let a1 = asym::<T>(stats, "conv1")?;
    let a2 = asym::<T>(stats, "conv2")?;
    let conv1 = QConv::new(params, l.conv1_w, l.conv1_b, cfg.conv1, cfg.n_mels, input, a1)?;
    let conv2 = QConv::new(params, l.conv2_w, l.conv2_b, cfg.conv2, cfg.conv1_len(), a1, a2)?;
    let gru1 = QGru::new(params, &l.gru1, "gru1", a2, stats)?;
    let gru2 = QGru::new(params, &l.gru2, "gru2", gru1.hidden, stats)?;
    let f1 = asym::<T>(stats, "fc1")?;
    let logit = asym::<T>(stats, "logit")?;
    let fc1 = QDense::new(params, l.fc1_w, l.fc1_b, cfg.gru2_units, gru2.hidden, f1, true)?;
    let fc2 = QDense::new(params, l.fc2_w, l.fc2_b, cfg.fc1_out, f1, logit, false)?;
    let output = QParams::sigmoid_output::<T>();
    Ok(QNetParams {
        config: cfg,
        input,
        conv1,
        conv2,
        gru1,
        gru2,
        fc1,
        fc2,
        out_lut: build_lut::<T>(logit, output, sigmoid),
        output,
    })
}

/// int8 weights and activations.
pub fn quantize_net(params: &NetParams, stats: &CalibrationStats) -> Result<QNetParams<i8>> {
    quantize_generic(params, stats)
}

/// 16-bit shadow model: same pipeline at higher precision, used as a control.
pub fn quantize_net_16(params: &NetParams, stats: &CalibrationStats) -> Result<QNetParams<i16>> {
    quantize_generic(params, stats)
}

/// Integer forward step. Floating point appears only in the input quantization
/// and the final dequantization of the probability.
pub fn q_forward_frame<T: QInt>(q: &QNetParams<T>, state: &QState<T>, x: &FeatureVector) -> Result<(f64, QState<T>)> {
    if x.values.len() != q.config.n_mels {
        return Err(Error::Shape(format!(
            "feature vector has {} values, expected {}",
            x.values.len(),
            q.config.n_mels
        )));
    }
    if state.h1.len() != q.gru1.units || state.h2.len() != q.gru2.units {
        return Err(Error::Shape("quantized state does not match the network".into()));
    }
    let qx: Vec<T> = x.values.iter().map(|&v| q.input.quantize(v)).collect();
    let a1 = q.conv1.forward(&qx);
    let a2 = q.conv2.forward(&a1);
    let h1 = q.gru1.step(&a2, &state.h1);
    let h2 = q.gru2.step(&h1, &state.h2);
    let f1 = q.fc1.forward(&h2);
    let logit = q.fc2.forward(&f1)[0];
    let qp = q.out_lut[(logit.to_i32() - T::MIN) as usize];
    Ok((q.output.dequantize(qp), QState { h1, h2 }))
}

pub fn q_predict_clip<T: QInt>(q: &QNetParams<T>, frames: &[FeatureVector]) -> Result<Vec<f64>> {
    let mut state = QState::zeros(q);
    frames
        .iter()
        .map(|f| {
            let (p, next) = q_forward_frame(q, &state, f)?;
            state = next;
            Ok(p)
        })
        .collect()
}

pub fn binary_accuracy(probs: &[f64], labels: &[u8], threshold: f64) -> f64 {
    let n = probs.len().min(labels.len());
    if n == 0 {
        return 0.0;
    }
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(&p, &l)| u8::from(p > threshold) == l)
        .count();
    correct as f64 / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyDelta {
    pub acc_float: f64,
    pub acc_q: f64,
    /// `acc_float − acc_q` as a fraction (×100 for points).
    pub delta: f64,
}

/// Binary accuracy of the float and quantized paths on identical frames.
pub fn accuracy_delta<T: QInt>(
    float_params: &NetParams,
    q: &QNetParams<T>,
    clips: &[ClipFeatures],
    threshold: f64,
) -> Result<AccuracyDelta> {
    if clips.iter().all(|c| c.is_empty()) {
        return Err(Error::Config("test split is empty".into()));
    }
    let (mut pf, mut pq, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for c in clips {
        pf.extend(predict_clip(float_params, &c.features)?);
        pq.extend(q_predict_clip(q, &c.features)?);
        labels.extend_from_slice(&c.labels);
    }
    let acc_float = binary_accuracy(&pf, &labels, threshold);
    let acc_q = binary_accuracy(&pq, &labels, threshold);
    Ok(AccuracyDelta {
        acc_float,
        acc_q,
        delta: acc_float - acc_q,
    })
}
