use super::layers::{conv_out, relu, relu_backward, Conv2d, FeatureMap, Linear};
use super::Params;
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderShape {
    /// Time frames.
    pub in_h: usize,
    /// Mel bins.
    pub in_w: usize,
    pub channels: [usize; 3],
    pub embed_dim: usize,
}

impl EncoderShape {
    pub fn spectrogram(embed_dim: usize) -> Self {
        Self {
            in_h: crate::mel::N_FRAMES,
            in_w: crate::mel::N_MELS,
            channels: [16, 32, 64],
            embed_dim,
        }
    }

    /// `(h, w)` of the last feature map.
    pub fn final_hw(&self) -> (usize, usize) {
        let mut hw = (self.in_h, self.in_w);
        for _ in 0..3 {
            hw = (conv_out(hw.0), conv_out(hw.1));
        }
        hw
    }

    /// Width of the mean+max temporal pooling output.
    pub fn pooled_dim(&self) -> usize {
        2 * self.channels[2] * self.final_hw().1
    }
}

/// Three stride-2 conv+relu blocks, mean and max pooling over time, linear projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub shape: EncoderShape,
    pub convs: Vec<Conv2d>,
    pub fc: Linear,
}

pub struct EncoderCache {
    n: usize,
    cols: Vec<Array2<f64>>,
    in_hw: Vec<(usize, usize)>,
    outs: Vec<FeatureMap>,
    pooled: Array2<f64>,
    /// Time index of the max for each `(n, c * w + f)`.
    argmax: Vec<usize>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(shape: EncoderShape, rng: &mut R) -> Self {
        let mut c_in = 1;
        let convs = shape
            .channels
            .iter()
            .map(|&c| {
                let conv = Conv2d::new(c_in, c, rng);
                c_in = c;
                conv
            })
            .collect();
        Self {
            shape,
            convs,
            fc: Linear::new(shape.pooled_dim(), shape.embed_dim, rng),
        }
    }

    /// Stacks `h x w` grids into a one-channel batch map.
    pub fn input_map(&self, grids: &[ArrayView2<f64>]) -> FeatureMap {
        let (h, w) = (self.shape.in_h, self.shape.in_w);
        let mut data = Vec::with_capacity(grids.len() * h * w);
        for g in grids {
            assert_eq!(g.dim(), (h, w), "encoder input shape");
            data.extend(g.iter());
        }
        FeatureMap {
            data: Array2::from_shape_vec((1, data.len()), data).unwrap(),
            n: grids.len(),
            h,
            w,
        }
    }

    pub fn forward(&self, x: &FeatureMap) -> (Array2<f64>, EncoderCache) {
        let mut cols = Vec::with_capacity(3);
        let mut in_hw = Vec::with_capacity(3);
        let mut outs: Vec<FeatureMap> = Vec::with_capacity(3);
        for conv in &self.convs {
            let input = outs.last().unwrap_or(x);
            in_hw.push((input.h, input.w));
            let (mut y, c) = conv.forward(input);
            relu(&mut y.data);
            cols.push(c);
            outs.push(y);
        }
        let last = outs.last().unwrap();
        let (c, h, w, n) = (last.channels(), last.h, last.w, last.n);
        let half = c * w;
        let mut pooled = Array2::zeros((n, 2 * half));
        let mut argmax = vec![0; n * half];
        for ci in 0..c {
            let row = last.data.row(ci);
            for ni in 0..n {
                for f in 0..w {
                    let (mut sum, mut best, mut arg) = (0.0, f64::NEG_INFINITY, 0);
                    for t in 0..h {
                        let v = row[(ni * h + t) * w + f];
                        sum += v;
                        if v > best {
                            best = v;
                            arg = t;
                        }
                    }
                    let j = ci * w + f;
                    pooled[[ni, j]] = sum / h as f64;
                    pooled[[ni, half + j]] = best;
                    argmax[ni * half + j] = arg;
                }
            }
        }
        let emb = self.fc.forward(pooled.view());
        let cache = EncoderCache {
            n,
            cols,
            in_hw,
            outs,
            pooled,
            argmax,
        };
        (emb, cache)
    }

    pub fn embed(&self, x: &FeatureMap) -> Array2<f64> {
        self.forward(x).0
    }

    /// Accumulates gradients into `grad`; returns the input gradient `(1, n * h * w)`.
    pub fn backward(&self, cache: &EncoderCache, d_emb: ArrayView2<f64>, grad: &mut Encoder) -> Array2<f64> {
        let d_pooled = self.fc.backward(cache.pooled.view(), d_emb, &mut grad.fc);
        let last = cache.outs.last().unwrap();
        let (c, h, w, n) = (last.channels(), last.h, last.w, cache.n);
        let half = c * w;
        let mut g = Array2::zeros(last.data.dim());
        for ci in 0..c {
            let mut row = g.row_mut(ci);
            for ni in 0..n {
                for f in 0..w {
                    let j = ci * w + f;
                    let gm = d_pooled[[ni, j]] / h as f64;
                    for t in 0..h {
                        row[(ni * h + t) * w + f] += gm;
                    }
                    let t = cache.argmax[ni * half + j];
                    row[(ni * h + t) * w + f] += d_pooled[[ni, half + j]];
                }
            }
        }
        for i in (0..self.convs.len()).rev() {
            relu_backward(&cache.outs[i].data, &mut g);
            g = self.convs[i].backward(&cache.cols[i], cache.in_hw[i], &g, &mut grad.convs[i]);
        }
        g
    }
}

impl Params for Encoder {
    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut t = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            t.extend(super::prefixed(&format!("conv{}.", i + 1), c));
        }
        t.extend(super::prefixed("fc.", &self.fc));
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t: Vec<&mut [f64]> = self.convs.iter_mut().flat_map(|c| c.tensors_mut()).collect();
        t.extend(self.fc.tensors_mut());
        t
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> EncoderShape {
        EncoderShape {
            in_h: 12,
            in_w: 10,
            channels: [2, 3, 4],
            embed_dim: 5,
        }
    }

    fn random_grids(n: usize, shape: &EncoderShape, seed: u64) -> Vec<Array2<f64>> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Array2::from_shape_simple_fn((shape.in_h, shape.in_w), || r.random::<f64>() * 2.0 - 1.0))
            .collect()
    }

    #[test]
    fn shapes() {
        let s = EncoderShape::spectrogram(128);
        assert_eq!(s.final_hw(), (12, 8));
        assert_eq!(s.pooled_dim(), 1024);
        let enc = Encoder::new(s, &mut ChaCha8Rng::seed_from_u64(0));
        let grids = random_grids(2, &s, 1);
        let views: Vec<_> = grids.iter().map(|g| g.view()).collect();
        let e = enc.embed(&enc.input_map(&views));
        assert_eq!(e.dim(), (2, 128));
        assert!(e.iter().all(|v| v.is_finite()));
        assert_ne!(e.row(0), e.row(1));
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let s = small();
        let enc = Encoder::new(s, &mut ChaCha8Rng::seed_from_u64(0));
        let z = Array2::zeros((12, 10));
        let e = enc.embed(&enc.input_map(&[z.view()]));
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_rows_are_independent() {
        let s = small();
        let enc = Encoder::new(s, &mut ChaCha8Rng::seed_from_u64(3));
        let grids = random_grids(3, &s, 4);
        let views: Vec<_> = grids.iter().map(|g| g.view()).collect();
        let batch = enc.embed(&enc.input_map(&views));
        for (i, v) in views.iter().enumerate() {
            let single = enc.embed(&enc.input_map(&[*v]));
            for (a, b) in single.row(0).iter().zip(batch.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encoder_gradients() {
        let s = small();
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let mut enc = Encoder::new(s, &mut r);
        for c in &mut enc.convs {
            c.b.mapv_inplace(|_| r.random::<f64>() * 0.2);
        }
        let grids = random_grids(2, &s, 6);
        let views: Vec<_> = grids.iter().map(|g| g.view()).collect();
        let x = enc.input_map(&views);
        let g_out = Array2::from_shape_simple_fn((2, s.embed_dim), || r.random::<f64>() - 0.5);
        let (_, cache) = enc.forward(&x);
        let mut grad = enc.clone();
        grad.zero();
        let dx = enc.backward(&cache, g_out.view(), &mut grad);

        let names: Vec<String> = enc.tensors().into_iter().map(|t| t.0).collect();
        let analytic: Vec<Vec<f64>> = grad.tensors().into_iter().map(|t| t.2.to_vec()).collect();
        for (ti, name) in names.iter().enumerate() {
            let mut probe = enc.clone();
            let len = probe.tensors()[ti].2.len();
            let mut vals = probe.tensors()[ti].2.to_vec();
            let idx = coords(len, 40);
            let n = numeric(&mut vals, &idx, |v| {
                probe.tensors_mut()[ti].copy_from_slice(v);
                (probe.embed(&x) * &g_out).sum()
            });
            let a: Vec<f64> = idx.iter().map(|&i| analytic[ti][i]).collect();
            assert!(rel_error(&a, &n) < 1e-3, "{name}: {}", rel_error(&a, &n));
        }
        let mut xd = x.data.clone();
        let idx = coords(xd.len(), 60);
        let n = numeric(xd.as_slice_mut().unwrap(), &idx, |v| {
            let xm = FeatureMap {
                data: Array2::from_shape_vec(x.data.dim(), v.to_vec()).unwrap(),
                ..x.clone()
            };
            (enc.embed(&xm) * &g_out).sum()
        });
        let a: Vec<f64> = idx.iter().map(|&i| dx.as_slice().unwrap()[i]).collect();
        assert!(rel_error(&a, &n) < 1e-3);
    }
}
