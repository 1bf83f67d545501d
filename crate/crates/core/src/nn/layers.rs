use super::{he_normal, Params};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fully connected layer `y = x W^T + b` over a batch of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out x in`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        Self {
            w: Array2::from_shape_simple_fn((n_out, n_in), || he_normal(rng, n_in)),
            b: Array1::zeros(n_out),
        }
    }

    pub fn n_in(&self) -> usize {
        self.w.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.w += &dy.t().dot(&x);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w)
    }
}

impl Params for Linear {
    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        vec![
            ("w".into(), self.w.shape().to_vec(), self.w.as_slice().unwrap()),
            ("b".into(), self.b.shape().to_vec(), self.b.as_slice().unwrap()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_slice_mut().unwrap(), self.b.as_slice_mut().unwrap()]
    }
}

pub fn relu(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Gradient through relu given its output.
pub fn relu_backward(out: &Array2<f64>, dy: &mut Array2<f64>) {
    ndarray::Zip::from(dy).and(out).for_each(|g, &o| {
        if o <= 0.0 {
            *g = 0.0;
        }
    });
}

/// Batch of feature maps stored channel-major: `data[c, ((n * h) + y) * w + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub data: Array2<f64>,
    pub n: usize,
    pub h: usize,
    pub w: usize,
}

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.data.nrows()
    }
}

/// Output size of a 3x3, stride-2, padding-1 convolution.
pub fn conv_out(len: usize) -> usize {
    (len - 1) / 2 + 1
}

/// 3x3 convolution with stride 2 and zero padding 1, computed as im2col + matrix product.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `out x (in * 9)`, kernel index `c * 9 + ky * 3 + kx`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        Self {
            w: Array2::from_shape_simple_fn((c_out, c_in * 9), || he_normal(rng, c_in * 9)),
            b: Array1::zeros(c_out),
        }
    }

    pub fn c_in(&self) -> usize {
        self.w.ncols() / 9
    }

    pub fn c_out(&self) -> usize {
        self.w.nrows()
    }

    pub fn im2col(x: &FeatureMap) -> Array2<f64> {
        let (ho, wo) = (conv_out(x.h), conv_out(x.w));
        let c = x.channels();
        let mut cols = Array2::zeros((c * 9, x.n * ho * wo));
        for ci in 0..c {
            let src = x.data.row(ci);
            let src = src.as_slice().unwrap();
            for ky in 0..3 {
                for kx in 0..3 {
                    let mut dst = cols.row_mut(ci * 9 + ky * 3 + kx);
                    let dst = dst.as_slice_mut().unwrap();
                    for n in 0..x.n {
                        for oy in 0..ho {
                            let iy = (2 * oy + ky) as isize - 1;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            let row_base = (n * x.h + iy as usize) * x.w;
                            let out_base = (n * ho + oy) * wo;
                            for ox in 0..wo {
                                let ix = (2 * ox + kx) as isize - 1;
                                if ix >= 0 && ix < x.w as isize {
                                    dst[out_base + ox] = src[row_base + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(dcols: &Array2<f64>, c: usize, n: usize, h: usize, w: usize) -> Array2<f64> {
        let (ho, wo) = (conv_out(h), conv_out(w));
        let mut dx = Array2::zeros((c, n * h * w));
        for ci in 0..c {
            let mut dst = dx.row_mut(ci);
            let dst = dst.as_slice_mut().unwrap();
            for ky in 0..3 {
                for kx in 0..3 {
                    let src = dcols.row(ci * 9 + ky * 3 + kx);
                    let src = src.as_slice().unwrap();
                    for ni in 0..n {
                        for oy in 0..ho {
                            let iy = (2 * oy + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row_base = (ni * h + iy as usize) * w;
                            let out_base = (ni * ho + oy) * wo;
                            for ox in 0..wo {
                                let ix = (2 * ox + kx) as isize - 1;
                                if ix >= 0 && ix < w as isize {
                                    dst[row_base + ix as usize] += src[out_base + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    /// Returns the output map and the im2col matrix needed by the backward pass.
    pub fn forward(&self, x: &FeatureMap) -> (FeatureMap, Array2<f64>) {
        assert_eq!(x.channels(), self.c_in(), "conv input channels");
        let cols = Self::im2col(x);
        let data = self.w.dot(&cols) + &self.b.view().insert_axis(Axis(1));
        let out = FeatureMap {
            data,
            n: x.n,
            h: conv_out(x.h),
            w: conv_out(x.w),
        };
        (out, cols)
    }

    /// Accumulates parameter gradients and returns `dL/dx` in the input layout.
    pub fn backward(&self, cols: &Array2<f64>, input_hw: (usize, usize), dy: &Array2<f64>, grad: &mut Conv2d) -> Array2<f64> {
        grad.w += &dy.dot(&cols.t());
        grad.b += &dy.sum_axis(Axis(1));
        let dcols = self.w.t().dot(dy);
        let n = dy.ncols() / (conv_out(input_hw.0) * conv_out(input_hw.1));
        Self::col2im(&dcols, self.c_in(), n, input_hw.0, input_hw.1)
    }

    /// Input gradient only.
    pub fn backward_input(&self, dy: &Array2<f64>, input_hw: (usize, usize)) -> Array2<f64> {
        let dcols = self.w.t().dot(dy);
        let n = dy.ncols() / (conv_out(input_hw.0) * conv_out(input_hw.1));
        Self::col2im(&dcols, self.c_in(), n, input_hw.0, input_hw.1)
    }
}

impl Params for Conv2d {
    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        vec![
            ("w".into(), self.w.shape().to_vec(), self.w.as_slice().unwrap()),
            ("b".into(), self.b.shape().to_vec(), self.b.as_slice().unwrap()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_slice_mut().unwrap(), self.b.as_slice_mut().unwrap()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// Stack of dense layers; dropout (training only) follows every hidden activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activations: Vec<Activation>,
}

pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
    /// Inverted-dropout multipliers applied after each hidden layer.
    masks: Vec<Option<Array2<f64>>>,
}

impl Mlp {
    /// Relu on every layer except the last, which is linear.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least one layer");
        let layers: Vec<Linear> = dims.windows(2).map(|d| Linear::new(d[0], d[1], rng)).collect();
        let mut activations = vec![Activation::Relu; layers.len()];
        *activations.last_mut().unwrap() = Activation::Identity;
        Self { layers, activations }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].n_in()];
        d.extend(self.layers.iter().map(Linear::n_out));
        d
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for (l, a) in self.layers.iter().zip(&self.activations) {
            h = l.forward(h.view());
            if *a == Activation::Relu {
                relu(&mut h);
            }
        }
        h
    }

    /// Training forward pass; `dropout > 0` zeroes hidden units with that probability.
    pub fn forward_train<R: Rng + ?Sized>(&self, x: ArrayView2<f64>, dropout: f64, rng: &mut R) -> (Array2<f64>, MlpCache) {
        let mut cache = MlpCache {
            inputs: Vec::new(),
            outputs: Vec::new(),
            masks: Vec::new(),
        };
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, (l, a)) in self.layers.iter().zip(&self.activations).enumerate() {
            let mut y = l.forward(h.view());
            if *a == Activation::Relu {
                relu(&mut y);
            }
            cache.inputs.push(h);
            cache.outputs.push(y.clone());
            let mask = (i < last && dropout > 0.0).then(|| {
                let keep = 1.0 / (1.0 - dropout);
                Array2::from_shape_simple_fn(y.dim(), || if rng.random::<f64>() < dropout { 0.0 } else { keep })
            });
            if let Some(m) = &mask {
                y *= m;
            }
            cache.masks.push(mask);
            h = y;
        }
        (h, cache)
    }

    pub fn backward(&self, cache: &MlpCache, dy: ArrayView2<f64>, grad: &mut Mlp) -> Array2<f64> {
        let mut g = dy.to_owned();
        for i in (0..self.layers.len()).rev() {
            if let Some(m) = &cache.masks[i] {
                g *= m;
            }
            if self.activations[i] == Activation::Relu {
                relu_backward(&cache.outputs[i], &mut g);
            }
            g = self.layers[i].backward(cache.inputs[i].view(), g.view(), &mut grad.layers[i]);
        }
        g
    }
}

impl Params for Mlp {
    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.tensors().into_iter().map(move |(n, s, v)| (format!("l{i}.{n}"), s, v)))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn randn(shape: (usize, usize), r: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn(shape, || r.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn linear_gradients() {
        let mut r = rng(1);
        let layer = Linear::new(5, 3, &mut r);
        let x = randn((4, 5), &mut r);
        let g_out = randn((4, 3), &mut r);
        let loss = |l: &Linear, x: &Array2<f64>| (l.forward(x.view()) * &g_out).sum();
        let mut grad = Linear { w: Array2::zeros((3, 5)), b: Array1::zeros(3) };
        let dx = layer.backward(x.view(), g_out.view(), &mut grad);

        let mut l2 = layer.clone();
        let n = numeric(l2.w.as_slice_mut().unwrap(), &(0..15).collect::<Vec<_>>(), |w| {
            let l = Linear { w: Array2::from_shape_vec((3, 5), w.to_vec()).unwrap(), b: layer.b.clone() };
            loss(&l, &x)
        });
        assert!(rel_error(grad.w.as_slice().unwrap(), &n) < 1e-6);
        let mut xs = x.clone();
        let n = numeric(xs.as_slice_mut().unwrap(), &(0..20).collect::<Vec<_>>(), |v| {
            loss(&layer, &Array2::from_shape_vec((4, 5), v.to_vec()).unwrap())
        });
        assert!(rel_error(dx.as_slice().unwrap(), &n) < 1e-6);
        assert_eq!(grad.b, g_out.sum_axis(Axis(0)));
    }

    #[test]
    fn relu_gradient() {
        let mut r = rng(2);
        let x = randn((3, 6), &mut r);
        let g_out = randn((3, 6), &mut r);
        let mut y = x.clone();
        relu(&mut y);
        let mut g = g_out.clone();
        relu_backward(&y, &mut g);
        let mut xs = x.clone();
        let n = numeric(xs.as_slice_mut().unwrap(), &(0..18).collect::<Vec<_>>(), |v| {
            v.iter().zip(&g_out).map(|(a, b)| a.max(0.0) * b).sum()
        });
        assert!(rel_error(g.as_slice().unwrap(), &n) < 1e-9);
    }

    fn direct_conv(conv: &Conv2d, x: &FeatureMap) -> FeatureMap {
        let (ho, wo) = (conv_out(x.h), conv_out(x.w));
        let mut data = Array2::zeros((conv.c_out(), x.n * ho * wo));
        for o in 0..conv.c_out() {
            for n in 0..x.n {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = conv.b[o];
                        for c in 0..conv.c_in() {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (2 * oy + ky) as isize - 1;
                                    let ix = (2 * ox + kx) as isize - 1;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                        acc += conv.w[[o, c * 9 + ky * 3 + kx]] * x.data[[c, (n * x.h + iy as usize) * x.w + ix as usize]];
                                    }
                                }
                            }
                        }
                        data[[o, (n * ho + oy) * wo + ox]] = acc;
                    }
                }
            }
        }
        FeatureMap { data, n: x.n, h: ho, w: wo }
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut r = rng(3);
        let mut conv = Conv2d::new(2, 3, &mut r);
        conv.b = Array1::from(vec![0.1, -0.2, 0.3]);
        let x = FeatureMap { data: randn((2, 2 * 7 * 6), &mut r), n: 2, h: 7, w: 6 };
        let (y, _) = conv.forward(&x);
        let d = direct_conv(&conv, &x);
        assert_eq!((y.h, y.w), (4, 3));
        for (a, b) in y.data.iter().zip(&d.data) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!((conv_out(96), conv_out(64)), (48, 32));
    }

    #[test]
    fn conv_gradients() {
        let mut r = rng(4);
        let conv = Conv2d::new(2, 3, &mut r);
        let x = FeatureMap { data: randn((2, 2 * 7 * 6), &mut r), n: 2, h: 7, w: 6 };
        let (y, cols) = conv.forward(&x);
        let g_out = randn(y.data.dim(), &mut r);
        let mut grad = Conv2d { w: Array2::zeros(conv.w.dim()), b: Array1::zeros(3) };
        let dx = conv.backward(&cols, (7, 6), &g_out, &mut grad);
        let loss = |c: &Conv2d, x: &FeatureMap| (c.forward(x).0.data * &g_out).sum();

        let mut w = conv.w.clone();
        let idx: Vec<usize> = (0..w.len()).collect();
        let n = numeric(w.as_slice_mut().unwrap(), &idx, |v| {
            let c = Conv2d { w: Array2::from_shape_vec(conv.w.dim(), v.to_vec()).unwrap(), b: conv.b.clone() };
            loss(&c, &x)
        });
        assert!(rel_error(grad.w.as_slice().unwrap(), &n) < 1e-6);
        let mut xd = x.data.clone();
        let idx: Vec<usize> = (0..xd.len()).collect();
        let n = numeric(xd.as_slice_mut().unwrap(), &idx, |v| {
            let xm = FeatureMap { data: Array2::from_shape_vec(x.data.dim(), v.to_vec()).unwrap(), ..x.clone() };
            loss(&conv, &xm)
        });
        assert!(rel_error(dx.as_slice().unwrap(), &n) < 1e-6);
        assert_eq!(conv.backward_input(&g_out, (7, 6)), dx);
    }

    #[test]
    fn mlp_gradients_and_dropout() {
        let mut r = rng(5);
        let mlp = Mlp::new(&[6, 8, 8, 2], &mut r);
        assert_eq!(mlp.dims(), vec![6, 8, 8, 2]);
        let x = randn((5, 6), &mut r);
        let g_out = randn((5, 2), &mut r);
        let (y, cache) = mlp.forward_train(x.view(), 0.0, &mut rng(0));
        assert_eq!(y, mlp.forward(x.view()));
        let mut grad = mlp.clone();
        grad.zero();
        let dx = mlp.backward(&cache, g_out.view(), &mut grad);
        let mut xs = x.clone();
        let n = numeric(xs.as_slice_mut().unwrap(), &(0..30).collect::<Vec<_>>(), |v| {
            (mlp.forward(Array2::from_shape_vec((5, 6), v.to_vec()).unwrap().view()) * &g_out).sum()
        });
        assert!(rel_error(dx.as_slice().unwrap(), &n) < 1e-6);

        // with a fixed dropout mask the network is still differentiable; replay the mask via the rng
        let (_, cache) = mlp.forward_train(x.view(), 0.5, &mut rng(9));
        let mut grad = mlp.clone();
        grad.zero();
        mlp.backward(&cache, g_out.view(), &mut grad);
        let mut m2 = mlp.clone();
        let w0 = m2.layers[0].w.as_slice_mut().unwrap().to_vec();
        let mut w = w0.clone();
        let n = numeric(&mut w, &(0..w0.len()).collect::<Vec<_>>(), |v| {
            m2.layers[0].w.as_slice_mut().unwrap().copy_from_slice(v);
            (m2.forward_train(x.view(), 0.5, &mut rng(9)).0 * &g_out).sum()
        });
        assert!(rel_error(grad.layers[0].w.as_slice().unwrap(), &n) < 1e-6);
        // inference ignores dropout
        assert_eq!(mlp.forward(x.view()), mlp.forward(x.view()));
    }
}
