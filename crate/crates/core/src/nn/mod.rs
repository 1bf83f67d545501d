//! Small f64 neural-network toolkit with explicit backward passes: dense and strided 3x3
//! convolution layers, MLPs with dropout, the spectrogram encoder, Adam and checkpoints.

mod checkpoint;
mod encoder;
mod layers;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, CheckpointManifest, TensorEntry, CHECKPOINT_SCHEMA_VERSION};
pub use encoder::{Encoder, EncoderCache, EncoderShape};
pub use layers::{relu, relu_backward, Activation, Conv2d, FeatureMap, Linear, Mlp, MlpCache};
pub use optim::{Adam, AdamConfig};

use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;

/// A named, ordered collection of parameter tensors.
pub trait Params {
    /// `(name, shape, values)` in a fixed order.
    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])>;
    /// Same order as [`Params::tensors`].
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    /// Copies values by name; every tensor of `self` must be present with the same shape.
    fn load_named(&mut self, prefix: &str, src: &BTreeMap<String, (Vec<usize>, Vec<f64>)>) -> Result<(), CheckpointError> {
        let shapes: Vec<(String, Vec<usize>)> = self.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        let mut values = Vec::with_capacity(shapes.len());
        for (name, shape) in &shapes {
            let key = format!("{prefix}{name}");
            let (s, v) = src.get(&key).ok_or_else(|| CheckpointError::Load(format!("missing tensor `{key}`")))?;
            if s != shape {
                return Err(CheckpointError::Load(format!("tensor `{key}` has shape {s:?}, model expects {shape:?}")));
            }
            values.push(v);
        }
        for (dst, v) in self.tensors_mut().into_iter().zip(values) {
            dst.copy_from_slice(v);
        }
        Ok(())
    }
}

/// Prefixes the names of a module's tensors.
pub fn prefixed<'a>(prefix: &str, p: &'a dyn Params) -> Vec<(String, Vec<usize>, &'a [f64])> {
    p.tensors().into_iter().map(|(n, s, v)| (format!("{prefix}{n}"), s, v)).collect()
}

/// He-normal sample with the given fan-in.
pub(crate) fn he_normal<R: Rng + ?Sized>(rng: &mut R, fan_in: usize) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * (2.0 / fan_in as f64).sqrt()
}

/// Unit-L2 normalization; the zero vector maps to itself.
pub fn l2_normalize(v: &[f64]) -> (Vec<f64>, f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return (vec![0.0; v.len()], 0.0);
    }
    (v.iter().map(|x| x / norm).collect(), norm)
}

/// Gradient through [`l2_normalize`]: `(g - u (u . g)) / |v|`, zero at the origin.
pub fn l2_normalize_backward(u: &[f64], norm: f64, g: &[f64]) -> Vec<f64> {
    if norm == 0.0 {
        return vec![0.0; u.len()];
    }
    let dot: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
    u.iter().zip(g).map(|(ui, gi)| (gi - ui * dot) / norm).collect()
}

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

#[cfg(test)]
pub(crate) mod gradcheck {
    /// Norm-wise relative error between an analytic and a numeric gradient.
    pub fn rel_error(a: &[f64], n: &[f64]) -> f64 {
        let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + n.iter().map(|x| x * x).sum::<f64>().sqrt();
        if scale < 1e-12 {
            0.0
        } else {
            diff / scale
        }
    }

    /// Central differences with step 1e-4 at selected coordinates of a flat parameter.
    pub fn numeric<F: FnMut(&mut [f64]) -> f64>(x: &mut [f64], coords: &[usize], mut f: F) -> Vec<f64> {
        const H: f64 = 1e-4;
        coords
            .iter()
            .map(|&i| {
                let orig = x[i];
                x[i] = orig + H;
                let up = f(x);
                x[i] = orig - H;
                let down = f(x);
                x[i] = orig;
                (up - down) / (2.0 * H)
            })
            .collect()
    }

    /// Up to `k` evenly spread coordinates of a length-`n` tensor.
    pub fn coords(n: usize, k: usize) -> Vec<usize> {
        if n <= k {
            return (0..n).collect();
        }
        (0..k).map(|i| i * n / k + (i * 7) % (n / k).max(1)).collect()
    }
}
