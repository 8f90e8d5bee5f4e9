//! Small fully connected networks with seeded initialization, analytic
//! backpropagation and a flat parameter-file format.
//!
//! Parameter files are a raw little-endian f32 blob (`*.bin`) plus a JSON
//! sidecar (`*.json`) listing the layer shapes. For each layer the blob holds
//! the `out x in` weight matrix row-major, followed by the `out` biases.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.inputs)) {
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        if self.activation == Activation::Relu {
            for o in &mut out {
                *o = o.max(0.0);
            }
        }
        out
    }
}

/// Shape record in the JSON sidecar.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSidecar {
    pub kind: String,
    pub layers: Vec<LayerShape>,
    /// Total f32 values in the blob.
    pub parameter_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Gradient with the same layout as [`Mlp::flat_params`].
pub type FlatGrad = Vec<f64>;

impl Mlp {
    /// He-initialized weights (`N(0, 2/fan_in)`) and zero biases; the last
    /// layer is scaled by `output_scale`.
    pub fn seeded(shape: &[usize], hidden: Activation, seed: u64, output_scale: f64) -> Self {
        assert!(shape.len() >= 2, "need at least input and output sizes");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fi, fo) = (shape[i], shape[i + 1]);
                let std = (2.0 / fi as f64).sqrt() * if i + 1 == n { output_scale } else { 1.0 };
                let normal = Normal::new(0.0, std).expect("finite std");
                Dense {
                    inputs: fi,
                    outputs: fo,
                    weights: (0..fi * fo).map(|_| normal.sample(&mut rng)).collect(),
                    bias: vec![0.0; fo],
                    activation: if i + 1 == n { Activation::Identity } else { hidden },
                }
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for l in &self.layers {
            a = l.forward(&a);
        }
        a
    }

    /// Forward pass keeping every layer's output, for backprop.
    fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        for l in &self.layers {
            let next = l.forward(acts.last().expect("non-empty"));
            acts.push(next);
        }
        acts
    }

    /// Accumulates `d(loss)/d(params)` into `grad` given `d(loss)/d(output)`.
    pub fn backward_accumulate(&self, x: &[f64], d_out: &[f64], grad: &mut [f64]) {
        let acts = self.forward_trace(x);
        let offsets = self.offsets();
        let mut delta = d_out.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            if l.activation == Activation::Relu {
                for (d, &a) in delta.iter_mut().zip(&acts[li + 1]) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &acts[li];
            let off = offsets[li];
            for o in 0..l.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + o * l.inputs..off + (o + 1) * l.inputs];
                for (g, &v) in row.iter_mut().zip(input) {
                    *g += d * v;
                }
                grad[off + l.outputs * l.inputs + o] += d;
            }
            if li > 0 {
                let mut prev = vec![0.0; l.inputs];
                for o in 0..l.outputs {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, w) in prev.iter_mut().zip(&l.weights[o * l.inputs..(o + 1) * l.inputs]) {
                        *p += d * w;
                    }
                }
                delta = prev;
            }
        }
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for l in &self.layers {
            off.push(acc);
            acc += l.inputs * l.outputs + l.outputs;
        }
        off
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.inputs * l.outputs + l.outputs).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.parameter_count());
        let mut i = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[i..i + nw]);
            i += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[i..i + nb]);
            i += nb;
        }
    }

    /// Rounds every parameter to f32, matching a save/load cycle.
    pub fn quantize_f32(&mut self) {
        let q: Vec<f64> = self.flat_params().into_iter().map(|x| x as f32 as f64).collect();
        self.set_flat_params(&q);
    }

    pub fn sidecar(&self, kind: &str) -> ParamSidecar {
        ParamSidecar {
            kind: kind.to_string(),
            layers: self.layers.iter().map(|l| LayerShape { inputs: l.inputs, outputs: l.outputs, activation: l.activation }).collect(),
            parameter_count: self.parameter_count(),
        }
    }

    pub fn to_blob(&self) -> Vec<u8> {
        self.flat_params().into_iter().flat_map(|x| (x as f32).to_le_bytes()).collect()
    }

    /// Rebuilds a network from a sidecar and blob, validating every shape.
    pub fn from_parts(sidecar: &ParamSidecar, blob: &[u8]) -> Result<Self> {
        if sidecar.layers.is_empty() {
            return Err(Error::Params("no layers".into()));
        }
        let mut expected = 0usize;
        for (i, l) in sidecar.layers.iter().enumerate() {
            if l.inputs == 0 || l.outputs == 0 {
                return Err(Error::Params(format!("layer {i} has a zero dimension")));
            }
            if i > 0 && sidecar.layers[i - 1].outputs != l.inputs {
                return Err(Error::Params(format!("layer {i} input {} != previous output {}", l.inputs, sidecar.layers[i - 1].outputs)));
            }
            let n = l.inputs.checked_mul(l.outputs).and_then(|w| w.checked_add(l.outputs)).ok_or_else(|| Error::Params(format!("layer {i} too large")))?;
            expected = expected.checked_add(n).ok_or_else(|| Error::Params("parameter count overflow".into()))?;
        }
        if expected != sidecar.parameter_count {
            return Err(Error::Params(format!("sidecar declares {} parameters, shapes imply {expected}", sidecar.parameter_count)));
        }
        if expected.checked_mul(4) != Some(blob.len()) {
            return Err(Error::Params(format!("blob holds {} bytes, expected {expected} f32 values", blob.len())));
        }
        let flat: Vec<f64> = blob.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        if flat.iter().any(|x| !x.is_finite()) {
            return Err(Error::Params("non-finite parameter".into()));
        }
        let mut i = 0;
        let layers = sidecar
            .layers
            .iter()
            .map(|s| {
                let nw = s.inputs * s.outputs;
                let weights = flat[i..i + nw].to_vec();
                i += nw;
                let bias = flat[i..i + s.outputs].to_vec();
                i += s.outputs;
                Dense { inputs: s.inputs, outputs: s.outputs, weights, bias, activation: s.activation }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Writes `<stem>.bin` and `<stem>.json`.
    pub fn save(&self, stem: &Path, kind: &str) -> Result<()> {
        let (bin, json) = param_paths(stem);
        std::fs::write(&bin, self.to_blob()).map_err(|e| Error::io(&bin, e))?;
        let text = serde_json::to_string_pretty(&self.sidecar(kind))?;
        std::fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))?;
        Ok(())
    }

    /// Loads `<stem>.bin` / `<stem>.json`, returning the network and its kind tag.
    pub fn load(stem: &Path) -> Result<(Self, String)> {
        let (bin, json) = param_paths(stem);
        let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let sidecar: ParamSidecar = serde_json::from_str(&text)?;
        let blob = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        Ok((Self::from_parts(&sidecar, &blob)?, sidecar.kind))
    }
}

/// `stem.bin` and `stem.json`; an existing `.bin`/`.json` extension is replaced.
pub fn param_paths(stem: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let base = match stem.extension().and_then(|e| e.to_str()) {
        Some("bin") | Some("json") => stem.with_extension(""),
        _ => stem.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = base.clone().into_os_string();
        s.push(".");
        s.push(ext);
        std::path::PathBuf::from(s)
    };
    (with("bin"), with("json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_matches_finite_differences() {
        let mlp = Mlp::seeded(&[5, 7, 3], Activation::Relu, 1, 1.0);
        let x = [0.3, -0.2, 0.9, 0.1, -0.5];
        let w = [0.7, -1.3, 0.4];
        let f = |m: &Mlp| m.forward(&x).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let mut grad = vec![0.0; mlp.parameter_count()];
        mlp.backward_accumulate(&x, &w, &mut grad);
        let base = mlp.flat_params();
        for i in 0..base.len() {
            let h = 1e-6;
            let mut p = base.clone();
            p[i] += h;
            let mut m1 = mlp.clone();
            m1.set_flat_params(&p);
            p[i] -= 2.0 * h;
            let mut m2 = mlp.clone();
            m2.set_flat_params(&p);
            let fd = (f(&m1) - f(&m2)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6, "param {i}: fd {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn blob_round_trip_and_validation() {
        let mut mlp = Mlp::seeded(&[4, 3, 2], Activation::Relu, 2, 0.5);
        mlp.quantize_f32();
        let sc = mlp.sidecar("test");
        let back = Mlp::from_parts(&sc, &mlp.to_blob()).unwrap();
        assert_eq!(back, mlp);
        assert!(Mlp::from_parts(&sc, &mlp.to_blob()[..8]).is_err());
        let mut bad = sc.clone();
        bad.layers[1].inputs = 4;
        assert!(Mlp::from_parts(&bad, &mlp.to_blob()).is_err());
    }

    #[test]
    fn param_path_stems() {
        let (b, j) = param_paths(Path::new("/tmp/disc.bin"));
        assert_eq!((b.to_str().unwrap(), j.to_str().unwrap()), ("/tmp/disc.bin", "/tmp/disc.json"));
        let (b, _) = param_paths(Path::new("/tmp/disc"));
        assert_eq!(b.to_str().unwrap(), "/tmp/disc.bin");
    }
}
