//! Quantized model file: JSON manifest (scales, zero points, LUTs) plus a flat
//! little-endian blob of integer weight and bias sections.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{QConv, QDense, QGate, QGru, QNetParams};
use super::{FixedMultiplier, QInt, QParams, QTensor};
use crate::error::{Error, Result};
use crate::net::NetConfig;

pub const QMODEL_FORMAT_VERSION: u32 = 1;

const NO_MULT: FixedMultiplier = FixedMultiplier { mult: 0, shift: 0 };

#[derive(Debug, Serialize, Deserialize)]
struct LayerMeta {
    input: QParams,
    out: QParams,
    weight_scale: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct GateMeta {
    pre: QParams,
    out: QParams,
    w_scale: f64,
    u_scale: f64,
    lut: Vec<i32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GruMeta {
    input: QParams,
    hidden: QParams,
    gates: Vec<GateMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Section {
    name: String,
    dtype: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct QModelManifest {
    format_version: u32,
    bits: u32,
    config: NetConfig,
    input: QParams,
    output: QParams,
    conv1: LayerMeta,
    conv2: LayerMeta,
    gru1: GruMeta,
    gru2: GruMeta,
    fc1: LayerMeta,
    fc2: LayerMeta,
    out_lut: Vec<i32>,
    data_file: String,
    sections: Vec<Section>,
}

fn weight_dtype<T: QInt>() -> String {
    format!("i{}", T::BITS)
}

fn bias_dtype<T: QInt>() -> &'static str {
    if T::BITS <= 8 {
        "i32"
    } else {
        "i64"
    }
}

struct Writer<T: QInt> {
    bytes: Vec<u8>,
    sections: Vec<Section>,
    _t: std::marker::PhantomData<T>,
}

impl<T: QInt> Writer<T> {
    fn weights(&mut self, name: &str, v: &[T]) {
        v.iter().for_each(|q| self.bytes.extend(q.to_le_bytes_vec()));
        self.sections.push(Section {
            name: name.into(),
            dtype: weight_dtype::<T>(),
            len: v.len(),
        });
    }

    fn biases(&mut self, name: &str, v: &[i64]) {
        for &b in v {
            if T::BITS <= 8 {
                self.bytes.extend((b as i32).to_le_bytes());
            } else {
                self.bytes.extend(b.to_le_bytes());
            }
        }
        self.sections.push(Section {
            name: name.into(),
            dtype: bias_dtype::<T>().into(),
            len: v.len(),
        });
    }
}

struct Reader<'a, T: QInt> {
    bytes: &'a [u8],
    pos: usize,
    sections: std::slice::Iter<'a, Section>,
    _t: std::marker::PhantomData<T>,
}

impl<'a, T: QInt> Reader<'a, T> {
    fn section(&mut self, name: &str, dtype: &str, width: usize) -> Result<&'a [u8]> {
        let s = self
            .sections
            .next()
            .ok_or_else(|| Error::Format(format!("missing section `{name}`")))?;
        if s.name != name || s.dtype != dtype {
            return Err(Error::Format(format!(
                "section `{}` ({}) where `{name}` ({dtype}) was expected",
                s.name, s.dtype
            )));
        }
        let end = self.pos + s.len * width;
        if end > self.bytes.len() {
            return Err(Error::Format(format!("data file truncated in section `{name}`")));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn weights(&mut self, name: &str, scale: f64, expected: usize) -> Result<QTensor<T>> {
        let w = (T::BITS / 8) as usize;
        let raw = self.section(name, &weight_dtype::<T>(), w)?;
        let values: Vec<T> = raw.chunks_exact(w).map(T::from_le_slice).collect();
        if values.len() != expected {
            return Err(Error::Format(format!("section `{name}` has {} values, expected {expected}", values.len())));
        }
        Ok(QTensor {
            values,
            scale,
            zero_point: 0,
        })
    }

    fn biases(&mut self, name: &str, expected: usize) -> Result<Vec<i64>> {
        let values: Vec<i64> = if T::BITS <= 8 {
            self.section(name, "i32", 4)?
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]) as i64)
                .collect()
        } else {
            self.section(name, "i64", 8)?
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect()
        };
        if values.len() != expected {
            return Err(Error::Format(format!("section `{name}` has {} values, expected {expected}", values.len())));
        }
        Ok(values)
    }
}

fn lut_to_i32<T: QInt>(lut: &[T]) -> Vec<i32> {
    lut.iter().map(|v| v.to_i32()).collect()
}

fn lut_from_i32<T: QInt>(lut: &[i32], name: &str) -> Result<Vec<T>> {
    let expected = (T::span() + 1) as usize;
    if lut.len() != expected || lut.iter().any(|&v| v < T::MIN || v > T::MAX) {
        return Err(Error::Format(format!("LUT `{name}` malformed")));
    }
    Ok(lut.iter().map(|&v| T::from_i32_sat(v)).collect())
}

fn gru_meta<T: QInt>(g: &QGru<T>) -> GruMeta {
    GruMeta {
        input: g.input,
        hidden: g.hidden,
        gates: g
            .gates
            .iter()
            .map(|gate| GateMeta {
                pre: gate.pre,
                out: gate.out,
                w_scale: gate.w.scale,
                u_scale: gate.u.scale,
                lut: lut_to_i32(&gate.lut),
            })
            .collect(),
    }
}

fn layer_meta(input: QParams, out: QParams, weight_scale: f64) -> LayerMeta {
    LayerMeta {
        input,
        out,
        weight_scale,
    }
}

/// Writes `path` (JSON) and a sibling `.bin` holding the integer sections.
pub fn save_qmodel<T: QInt>(q: &QNetParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bin_path = path.with_extension("bin");
    let mut w = Writer::<T> {
        bytes: Vec::new(),
        sections: Vec::new(),
        _t: std::marker::PhantomData,
    };
    w.weights("conv1.weight", &q.conv1.w.values);
    w.biases("conv1.bias", &q.conv1.bias);
    w.weights("conv2.weight", &q.conv2.w.values);
    w.biases("conv2.bias", &q.conv2.bias);
    for (prefix, g) in [("gru1", &q.gru1), ("gru2", &q.gru2)] {
        for (name, gate) in ["z", "r", "h"].iter().zip(&g.gates) {
            w.weights(&format!("{prefix}.w_{name}"), &gate.w.values);
            w.weights(&format!("{prefix}.u_{name}"), &gate.u.values);
            w.biases(&format!("{prefix}.b_{name}"), &gate.bias);
        }
    }
    w.weights("fc1.weight", &q.fc1.w.values);
    w.biases("fc1.bias", &q.fc1.bias);
    w.weights("fc2.weight", &q.fc2.w.values);
    w.biases("fc2.bias", &q.fc2.bias);

    let manifest = QModelManifest {
        format_version: QMODEL_FORMAT_VERSION,
        bits: T::BITS,
        config: q.config,
        input: q.input,
        output: q.output,
        conv1: layer_meta(q.conv1.input, q.conv1.out, q.conv1.w.scale),
        conv2: layer_meta(q.conv2.input, q.conv2.out, q.conv2.w.scale),
        gru1: gru_meta(&q.gru1),
        gru2: gru_meta(&q.gru2),
        fc1: layer_meta(q.fc1.input, q.fc1.out, q.fc1.w.scale),
        fc2: layer_meta(q.fc2.input, q.fc2.out, q.fc2.w.scale),
        out_lut: lut_to_i32(&q.out_lut),
        data_file: bin_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sections: w.sections,
    };
    fs::write(&bin_path, &w.bytes).map_err(|e| Error::io(&bin_path, e))?;
    fs::write(path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(path, e))
}

pub fn load_qmodel<T: QInt>(path: impl AsRef<Path>) -> Result<QNetParams<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: QModelManifest = serde_json::from_str(&text)?;
    if m.format_version != QMODEL_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "quantized model format version {} (expected {QMODEL_FORMAT_VERSION})",
            m.format_version
        )));
    }
    if m.bits != T::BITS {
        return Err(Error::Format(format!("model has {}-bit values, expected {}", m.bits, T::BITS)));
    }
    m.config.validate()?;
    let bin_path = path.with_file_name(&m.data_file);
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let mut r = Reader::<T> {
        bytes: &bytes,
        pos: 0,
        sections: m.sections.iter(),
        _t: std::marker::PhantomData,
    };
    let cfg = m.config;
    let (c1, c2) = (cfg.conv1, cfg.conv2);

    let conv = |r: &mut Reader<T>, prefix: &str, meta: &LayerMeta, c: crate::net::ConvConfig, in_len: usize| -> Result<QConv<T>> {
        Ok(QConv {
            w: r.weights(&format!("{prefix}.weight"), meta.weight_scale, c.out_ch * c.in_ch * c.kernel)?,
            bias: r.biases(&format!("{prefix}.bias"), c.out_ch)?,
            input: meta.input,
            out: meta.out,
            in_ch: c.in_ch,
            in_len,
            kernel: c.kernel,
            stride: c.stride,
            out_len: c.out_len(in_len),
            m: NO_MULT,
        })
    };
    let conv1 = conv(&mut r, "conv1", &m.conv1, c1, cfg.n_mels)?;
    let conv2 = conv(&mut r, "conv2", &m.conv2, c2, cfg.conv1_len())?;

    let gru = |r: &mut Reader<T>, prefix: &str, meta: &GruMeta, input_dim: usize, units: usize| -> Result<QGru<T>> {
        if meta.gates.len() != 3 {
            return Err(Error::Format(format!("{prefix}: expected 3 gates")));
        }
        let mut gates = Vec::with_capacity(3);
        for (name, gm) in ["z", "r", "h"].iter().zip(&meta.gates) {
            gates.push(QGate {
                w: r.weights(&format!("{prefix}.w_{name}"), gm.w_scale, units * input_dim)?,
                u: r.weights(&format!("{prefix}.u_{name}"), gm.u_scale, units * units)?,
                bias: r.biases(&format!("{prefix}.b_{name}"), units)?,
                pre: gm.pre,
                out: gm.out,
                lut: lut_from_i32(&gm.lut, &format!("{prefix}.{name}"))?,
                m_x: NO_MULT,
                m_h: NO_MULT,
            });
        }
        Ok(QGru {
            input: meta.input,
            hidden: meta.hidden,
            units,
            input_dim,
            gates: gates.try_into().expect("three gates"),
            m_keep: NO_MULT,
            m_cand: NO_MULT,
        })
    };
    let gru1 = gru(&mut r, "gru1", &m.gru1, cfg.flat_len(), cfg.gru1_units)?;
    let gru2 = gru(&mut r, "gru2", &m.gru2, cfg.gru1_units, cfg.gru2_units)?;

    let dense = |r: &mut Reader<T>, prefix: &str, meta: &LayerMeta, in_dim: usize, out_dim: usize, relu: bool| -> Result<QDense<T>> {
        Ok(QDense {
            w: r.weights(&format!("{prefix}.weight"), meta.weight_scale, out_dim * in_dim)?,
            bias: r.biases(&format!("{prefix}.bias"), out_dim)?,
            input: meta.input,
            out: meta.out,
            relu,
            in_dim,
            m: NO_MULT,
        })
    };
    let fc1 = dense(&mut r, "fc1", &m.fc1, cfg.gru2_units, cfg.fc1_out, true)?;
    let fc2 = dense(&mut r, "fc2", &m.fc2, cfg.fc1_out, cfg.fc2_out, false)?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{}: trailing bytes", bin_path.display())));
    }
    let mut q = QNetParams {
        config: cfg,
        input: m.input,
        conv1,
        conv2,
        gru1,
        gru2,
        fc1,
        fc2,
        out_lut: lut_from_i32(&m.out_lut, "output")?,
        output: m.output,
    };
    q.refresh()?;
    Ok(q)
}
