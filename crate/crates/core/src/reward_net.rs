//! Fully convolutional cost network `f_theta`: scene features in, per-cell
//! cost out.
//!
//! Five same-padded convolutions (5x5 then four 3x3), ReLU between them and
//! a linear output. Parameters live in one flat vector so that the optimizer
//! and gradient checks can treat them uniformly; [`LayerShape`] describes how
//! the vector is carved up.

use std::hash::{DefaultHasher, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridShape, Plane};

/// Scene feature channels fed to the network.
pub const FEATURE_CHANNELS: usize = 3;

/// `(in, out, kernel)` per layer.
pub const ARCHITECTURE: [(usize, usize, usize); 5] =
    [(3, 16, 5), (16, 16, 3), (16, 16, 3), (16, 8, 3), (8, 1, 3)];

/// Height, gradient-magnitude and validity planes of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMap {
    shape: GridShape,
    height: Plane,
    gradient: Plane,
    mask: Plane,
}

impl SceneMap {
    /// Validates the three feature planes.
    pub fn new(shape: GridShape, height: Plane, gradient: Plane, mask: Plane) -> Result<Self> {
        let dims = (shape.rows, shape.cols);
        if height.dims() != dims || gradient.dims() != dims || mask.dims() != dims {
            return Err(Error::arg("scene planes do not match the grid shape"));
        }
        for (i, (&h, &m)) in height.data().iter().zip(mask.data()).enumerate() {
            if m != 0.0 && m != 1.0 {
                return Err(Error::data(format!("mask value {m} at index {i} is not 0 or 1")));
            }
            if m == 0.0 && h != 0.0 {
                return Err(Error::data(format!("invalid cell {i} has non-zero height")));
            }
        }
        if height.data().iter().chain(gradient.data()).any(|v| !v.is_finite()) {
            return Err(Error::data("scene features must be finite"));
        }
        Ok(Self {
            shape,
            height,
            gradient,
            mask,
        })
    }

    /// Builds a scene from heights, deriving the gradient magnitude with
    /// central differences over valid neighbours (one-sided at edges and
    /// next to invalid cells). Invalid cells get height and gradient 0.
    pub fn from_height(shape: GridShape, height: Plane, mask: Plane) -> Result<Self> {
        let (rows, cols) = (shape.rows, shape.cols);
        if height.dims() != (rows, cols) || mask.dims() != (rows, cols) {
            return Err(Error::arg("scene planes do not match the grid shape"));
        }
        let height = Plane::from_fn(rows, cols, |r, c| {
            if mask.get((r, c)) == 0.0 {
                0.0
            } else {
                height.get((r, c))
            }
        });
        let valid = |r: i64, c: i64| {
            r >= 0 && c >= 0 && r < rows as i64 && c < cols as i64 && mask.get((r as usize, c as usize)) != 0.0
        };
        let slope = |r: usize, c: usize, dr: i64, dc: i64| -> f64 {
            let (r, c) = (r as i64, c as i64);
            let h = |r: i64, c: i64| height.get((r as usize, c as usize));
            match (valid(r - dr, c - dc), valid(r + dr, c + dc)) {
                (true, true) => (h(r + dr, c + dc) - h(r - dr, c - dc)) / 2.0,
                (false, true) => h(r + dr, c + dc) - h(r, c),
                (true, false) => h(r, c) - h(r - dr, c - dc),
                (false, false) => 0.0,
            }
        };
        let gradient = Plane::from_fn(rows, cols, |r, c| {
            if mask.get((r, c)) == 0.0 {
                0.0
            } else {
                slope(r, c, 1, 0).hypot(slope(r, c, 0, 1))
            }
        });
        Self::new(shape, height, gradient, mask)
    }

    /// Reassembles a scene from a three-channel grid.
    pub fn from_grid(grid: &Grid, resolution_m: f64) -> Result<Self> {
        if grid.channels() != FEATURE_CHANNELS {
            return Err(Error::data(format!(
                "scene grid needs {FEATURE_CHANNELS} channels, found {}",
                grid.channels()
            )));
        }
        let shape = GridShape::new(grid.rows(), grid.cols(), resolution_m)?;
        let mut planes = grid.clone().into_planes().into_iter();
        let (h, g, m) = (planes.next().unwrap(), planes.next().unwrap(), planes.next().unwrap());
        Self::new(shape, h, g, m)
    }

    pub fn to_grid(&self) -> Grid {
        Grid::from_planes(&[self.height.clone(), self.gradient.clone(), self.mask.clone()])
            .expect("scene planes share a shape")
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn height(&self) -> &Plane {
        &self.height
    }

    pub fn gradient(&self) -> &Plane {
        &self.gradient
    }

    pub fn mask(&self) -> &Plane {
        &self.mask
    }
}

/// Per-cell cost. The reward is its negation.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMap(Plane);

impl CostMap {
    pub fn new(cost: Plane) -> Result<Self> {
        if cost.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("cost map has non-finite values".into()));
        }
        Ok(Self(cost))
    }

    pub fn plane(&self) -> &Plane {
        &self.0
    }

    pub fn reward(&self) -> Plane {
        self.0.map(|c| -c)
    }

    pub fn into_plane(self) -> Plane {
        self.0
    }
}

/// Dimensions of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub kernel: usize,
}

impl LayerShape {
    pub fn weight_count(&self) -> usize {
        self.outputs * self.inputs * self.kernel * self.kernel
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.outputs
    }

    fn weight_index(&self, o: usize, c: usize, ky: usize, kx: usize) -> usize {
        ((o * self.inputs + c) * self.kernel + ky) * self.kernel + kx
    }
}

/// Network parameters. Each layer occupies `weights [out][in][ky][kx]`
/// followed by `bias [out]` in the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FcnParams {
    layers: Vec<LayerShape>,
    data: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type ParamGrads = FcnParams;

fn standard_layers() -> Vec<LayerShape> {
    ARCHITECTURE
        .iter()
        .map(|&(inputs, outputs, kernel)| LayerShape {
            inputs,
            outputs,
            kernel,
        })
        .collect()
}

impl FcnParams {
    /// All-zero parameters of the standard architecture.
    pub fn zeros() -> Self {
        let layers = standard_layers();
        let n = layers.iter().map(LayerShape::param_count).sum();
        Self {
            layers,
            data: vec![0.0; n],
        }
    }

    /// Parameters with explicit layer shapes, e.g. from a model file. The
    /// shapes must chain and match the standard architecture.
    pub fn from_parts(layers: Vec<LayerShape>, data: Vec<f64>) -> Result<Self> {
        if layers != standard_layers() {
            return Err(Error::data(format!("unsupported layer layout {layers:?}")));
        }
        let n: usize = layers.iter().map(LayerShape::param_count).sum();
        if data.len() != n {
            return Err(Error::data(format!("expected {n} parameters, found {}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("parameters must be finite"));
        }
        Ok(Self { layers, data })
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `(weights, bias)` slices of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let start = self.offset(l);
        let shape = self.layers[l];
        let (w, rest) = self.data[start..start + shape.param_count()].split_at(shape.weight_count());
        (w, rest)
    }

    fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let start = self.offset(l);
        let shape = self.layers[l];
        self.data[start..start + shape.param_count()].split_at_mut(shape.weight_count())
    }

    /// Start of layer `l` in the flat vector.
    pub fn offset(&self, l: usize) -> usize {
        self.layers[..l].iter().map(LayerShape::param_count).sum()
    }

    /// Hash of the exact parameter bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for v in &self.data {
            h.write_u64(v.to_bits());
        }
        h.finish()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += other * k`.
    pub fn add_scaled(&mut self, other: &FcnParams, k: f64) {
        assert_eq!(self.layers, other.layers);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b * k;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in &mut self.data {
            *a *= k;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// He-style uniform initialisation, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`,
/// with zero biases.
pub fn init_params(seed: u64) -> FcnParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = FcnParams::zeros();
    for l in 0..params.layers.len() {
        let shape = params.layers[l];
        let limit = (6.0 / (shape.inputs * shape.kernel * shape.kernel) as f64).sqrt();
        let (w, _) = params.layer_mut(l);
        for v in w {
            *v = rng.random_range(-limit..limit);
        }
    }
    params
}

/// Activations kept by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    rows: usize,
    cols: usize,
    /// Input to each layer, `inputs x rows x cols`. Entry 0 is the features.
    inputs: Vec<Vec<f64>>,
}

impl ForwardCache {
    /// On/off state of every hidden rectifier unit.
    pub fn active_pattern(&self) -> Vec<bool> {
        self.inputs[1..].iter().flatten().map(|&v| v > 0.0).collect()
    }
}

/// `out(r, c) += w * inp(r + dy, c + dx)`, zero outside.
#[allow(clippy::too_many_arguments)]
#[inline]
fn correlate_add(out: &mut [f64], inp: &[f64], rows: usize, cols: usize, dy: i64, dx: i64, w: f64) {
    let (r0, r1) = ((-dy).max(0), (rows as i64 - dy.max(0)).max(0));
    let (c0, c1) = ((-dx).max(0), (cols as i64 - dx.max(0)).max(0));
    if c0 >= c1 {
        return;
    }
    for r in r0..r1 {
        let o = (r * cols as i64) as usize;
        let i = ((r + dy) * cols as i64) as usize;
        let out_row = &mut out[o + c0 as usize..o + c1 as usize];
        let in_row = &inp[(i as i64 + c0 + dx) as usize..(i as i64 + c1 + dx) as usize];
        for (a, &b) in out_row.iter_mut().zip(in_row) {
            *a += w * b;
        }
    }
}

/// `sum_{r,c} g(r, c) * inp(r + dy, c + dx)`, zero outside.
#[inline]
fn shifted_dot(g: &[f64], inp: &[f64], rows: usize, cols: usize, dy: i64, dx: i64) -> f64 {
    let (r0, r1) = ((-dy).max(0), (rows as i64 - dy.max(0)).max(0));
    let (c0, c1) = ((-dx).max(0), (cols as i64 - dx.max(0)).max(0));
    let mut s = 0.0;
    if c0 >= c1 {
        return s;
    }
    for r in r0..r1 {
        let o = (r * cols as i64) as usize;
        let i = ((r + dy) * cols as i64) as usize;
        let g_row = &g[o + c0 as usize..o + c1 as usize];
        let in_row = &inp[(i as i64 + c0 + dx) as usize..(i as i64 + c1 + dx) as usize];
        s += g_row.iter().zip(in_row).map(|(a, b)| a * b).sum::<f64>();
    }
    s
}

fn conv_layer(shape: LayerShape, w: &[f64], b: &[f64], x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let hw = rows * cols;
    let p = (shape.kernel / 2) as i64;
    let mut z = vec![0.0; shape.outputs * hw];
    for (o, out) in z.chunks_mut(hw).enumerate() {
        out.fill(b[o]);
        for c in 0..shape.inputs {
            let inp = &x[c * hw..(c + 1) * hw];
            for ky in 0..shape.kernel {
                for kx in 0..shape.kernel {
                    let wv = w[shape.weight_index(o, c, ky, kx)];
                    correlate_add(out, inp, rows, cols, ky as i64 - p, kx as i64 - p, wv);
                }
            }
        }
    }
    z
}

/// Cost map for one scene, plus the cache needed by [`fcn_backward`].
pub fn fcn_forward(params: &FcnParams, scene: &SceneMap) -> Result<(CostMap, ForwardCache)> {
    let (rows, cols) = (scene.shape.rows, scene.shape.cols);
    let features = scene.to_grid();
    if features.channels() != params.layers[0].inputs {
        return Err(Error::arg("scene channel count does not match the network"));
    }
    let mut inputs = vec![features.data().to_vec()];
    let last = params.layers.len() - 1;
    for (l, &shape) in params.layers.iter().enumerate() {
        let (w, b) = params.layer(l);
        let mut z = conv_layer(shape, w, b, inputs.last().unwrap(), rows, cols);
        if l < last {
            for v in &mut z {
                *v = v.max(0.0);
            }
            inputs.push(z);
        } else {
            let cost = CostMap::new(Plane::from_vec(rows, cols, z)?)?;
            return Ok((
                cost,
                ForwardCache {
                    fingerprint: params.fingerprint(),
                    rows,
                    cols,
                    inputs,
                },
            ));
        }
    }
    unreachable!("network has at least one layer")
}

/// Exact gradients of `sum_s dl_dc(s) * C(s)` with respect to every
/// parameter.
pub fn fcn_backward(params: &FcnParams, cache: &ForwardCache, dl_dc: &Plane) -> Result<ParamGrads> {
    if cache.fingerprint != params.fingerprint() || cache.inputs.len() != params.layers.len() {
        return Err(Error::State("forward cache does not belong to these parameters".into()));
    }
    let (rows, cols) = (cache.rows, cache.cols);
    if dl_dc.dims() != (rows, cols) {
        return Err(Error::State(format!(
            "gradient is {}x{} but the cached forward pass was {rows}x{cols}",
            dl_dc.rows(),
            dl_dc.cols()
        )));
    }
    let hw = rows * cols;
    let mut grads = FcnParams::zeros();
    let mut delta = dl_dc.data().to_vec();
    for l in (0..params.layers.len()).rev() {
        let shape = params.layers[l];
        let p = (shape.kernel / 2) as i64;
        let x = &cache.inputs[l];
        let (w, _) = params.layer(l);
        {
            let (gw, gb) = grads.layer_mut(l);
            for o in 0..shape.outputs {
                let d = &delta[o * hw..(o + 1) * hw];
                gb[o] = d.iter().sum();
                for c in 0..shape.inputs {
                    let inp = &x[c * hw..(c + 1) * hw];
                    for ky in 0..shape.kernel {
                        for kx in 0..shape.kernel {
                            gw[shape.weight_index(o, c, ky, kx)] =
                                shifted_dot(d, inp, rows, cols, ky as i64 - p, kx as i64 - p);
                        }
                    }
                }
            }
        }
        if l == 0 {
            break;
        }
        let mut prev = vec![0.0; shape.inputs * hw];
        for o in 0..shape.outputs {
            let d = &delta[o * hw..(o + 1) * hw];
            for c in 0..shape.inputs {
                let out = &mut prev[c * hw..(c + 1) * hw];
                for ky in 0..shape.kernel {
                    for kx in 0..shape.kernel {
                        let wv = w[shape.weight_index(o, c, ky, kx)];
                        correlate_add(out, d, rows, cols, p - ky as i64, p - kx as i64, wv);
                    }
                }
            }
        }
        // ReLU: the cached input is the post-activation, positive exactly where the unit was on
        for (g, &a) in prev.iter_mut().zip(x) {
            if a <= 0.0 {
                *g = 0.0;
            }
        }
        delta = prev;
    }
    Ok(grads)
}

/// Adam moments and schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize, lr: f64, decay: f64) -> Self {
        Self {
            lr,
            decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Multiplies the learning rate by the decay factor.
    pub fn decay_lr(&mut self) {
        self.lr *= self.decay;
    }

    /// One bias-corrected Adam update of a flat parameter vector.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::arg("parameter, gradient and moment sizes differ"));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("gradient {i} is not finite")));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Applies one Adam step to the network parameters.
pub fn adam_step(params: &mut FcnParams, grads: &ParamGrads, state: &mut AdamState) -> Result<()> {
    if params.layers != grads.layers {
        return Err(Error::arg("gradient layout does not match the parameters"));
    }
    state.update(&mut params.data, &grads.data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_scene(seed: u64, n: usize) -> SceneMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = Plane::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let m = Plane::from_fn(n, n, |r, c| if (r * 7 + c) % 11 == 0 { 0.0 } else { 1.0 });
        SceneMap::from_height(GridShape::square(n).unwrap(), h, m).unwrap()
    }

    #[test]
    fn init_is_seeded_with_zero_bias() {
        let a = init_params(42);
        assert_eq!(a, init_params(42));
        assert_ne!(init_params(1), init_params(2));
        for l in 0..5 {
            assert!(a.layer(l).1.iter().all(|&b| b == 0.0));
            let limit = (6.0 / (a.layers[l].inputs * a.layers[l].kernel.pow(2)) as f64).sqrt();
            assert!(a.layer(l).0.iter().all(|w| w.abs() < limit));
        }
        assert_eq!(a.len(), 3 * 16 * 25 + 16 + 2 * (16 * 16 * 9 + 16) + 16 * 8 * 9 + 8 + 8 * 9 + 1);
    }

    #[test]
    fn zero_network_gives_zero_cost_of_same_shape() {
        let scene = random_scene(1, 32);
        let (cost, _) = fcn_forward(&FcnParams::zeros(), &scene).unwrap();
        assert_eq!(cost.plane().dims(), (32, 32));
        assert!(cost.plane().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_from_height_handles_mask() {
        let h = Plane::from_fn(4, 4, |_, c| c as f64 * 0.5);
        let m = Plane::from_fn(4, 4, |r, c| if (r, c) == (1, 2) { 0.0 } else { 1.0 });
        let s = SceneMap::from_height(GridShape::square(4).unwrap(), h, m).unwrap();
        assert_eq!(s.gradient().get((0, 1)), 0.5);
        assert_eq!(s.gradient().get((1, 1)), 0.5);
        assert_eq!(s.gradient().get((1, 2)), 0.0);
        assert_eq!(s.height().get((1, 2)), 0.0);
    }

    #[test]
    fn scene_rejects_bad_mask() {
        let shape = GridShape::square(3).unwrap();
        let z = Plane::zeros(3, 3);
        assert!(SceneMap::new(shape, z.clone(), z.clone(), Plane::filled(3, 3, 0.5)).is_err());
        assert!(SceneMap::new(shape, Plane::filled(3, 3, 1.0), z.clone(), z.clone()).is_err());
        let s = SceneMap::new(shape, z.clone(), z.clone(), Plane::filled(3, 3, 1.0)).unwrap();
        assert_eq!(SceneMap::from_grid(&s.to_grid(), 0.25).unwrap(), s);
    }

    #[test]
    fn shifting_input_shifts_interior_output() {
        let params = init_params(3);
        let n = 20;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = Plane::from_fn(n, n, |_, _| rng.random_range(0.0..1.0));
        let shifted = Plane::from_fn(n, n, |r, c| if c == 0 { 0.0 } else { h.get((r, c - 1)) });
        let shape = GridShape::square(n).unwrap();
        let one = Plane::filled(n, n, 1.0);
        // gradient computed externally so only the height shifts
        let a = SceneMap::new(shape, h.clone(), Plane::zeros(n, n), one.clone()).unwrap();
        let b = SceneMap::new(shape, shifted, Plane::zeros(n, n), one).unwrap();
        let (ca, _) = fcn_forward(&params, &a).unwrap();
        let (cb, _) = fcn_forward(&params, &b).unwrap();
        // receptive field radius is 2 + 4 = 6
        for r in 6..n - 6 {
            for c in 7..n - 6 {
                let (x, y) = (ca.plane().get((r, c - 1)), cb.plane().get((r, c)));
                assert!((x - y).abs() < 1e-12, "({r},{c}) {x} {y}");
            }
        }
    }

    fn objective(params: &FcnParams, scene: &SceneMap, g: &Plane) -> f64 {
        let (c, _) = fcn_forward(params, scene).unwrap();
        c.plane().data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let scene = random_scene(4, 16);
        let mut params = init_params(5);
        // non-zero biases so every layer's bias gradient is exercised
        for v in params.data_mut().iter_mut() {
            if *v == 0.0 {
                *v = 0.05;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = Plane::from_fn(16, 16, |_, _| rng.random_range(-1.0..1.0));
        let (_, cache) = fcn_forward(&params, &scene).unwrap();
        let grads = fcn_backward(&params, &cache, &g).unwrap();
        let eps = 1e-5;
        for l in 0..5 {
            let start = params.offset(l);
            let count = params.layers()[l].param_count();
            for _ in 0..6 {
                let k = start + rng.random_range(0..count);
                let mut plus = params.clone();
                plus.data_mut()[k] += eps;
                let mut minus = params.clone();
                minus.data_mut()[k] -= eps;
                let fd = (objective(&plus, &scene, &g) - objective(&minus, &scene, &g)) / (2.0 * eps);
                let an = grads.data()[k];
                let err = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-8);
                assert!(err < 1e-4 || (fd - an).abs() < 1e-9, "layer {l} param {k}: fd {fd} analytic {an}");
            }
        }
    }

    #[test]
    fn backward_is_linear_and_checks_cache() {
        let scene = random_scene(2, 8);
        let params = init_params(7);
        let (_, cache) = fcn_forward(&params, &scene).unwrap();
        let zero = fcn_backward(&params, &cache, &Plane::zeros(8, 8)).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
        let g = Plane::from_fn(8, 8, |r, c| (r as f64 - c as f64) * 0.1);
        let a = fcn_backward(&params, &cache, &g).unwrap();
        let b = fcn_backward(&params, &cache, &g.map(|v| 2.0 * v)).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(2.0 * x, *y);
        }
        let other = init_params(8);
        assert!(matches!(fcn_backward(&other, &cache, &g), Err(Error::State(_))));
        assert!(matches!(fcn_backward(&params, &cache, &Plane::zeros(9, 9)), Err(Error::State(_))));
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut st = AdamState::new(1, 1e-4, 0.99);
        let mut p = [1.0];
        st.update(&mut p, &[0.3]).unwrap();
        assert!((p[0] - (1.0 - 1e-4)).abs() < 1e-10);
        assert_eq!(st.step(), 1);
        let mut q = [1.0];
        let mut st2 = AdamState::new(1, 1e-4, 0.99);
        st2.update(&mut q, &[0.3]).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn adam_zero_grad_and_non_finite() {
        let mut params = init_params(1);
        let before = params.clone();
        let mut st = AdamState::new(params.len(), 1e-3, 0.99);
        adam_step(&mut params, &FcnParams::zeros(), &mut st).unwrap();
        assert_eq!(params, before);
        assert_eq!(st.step(), 1);
        let mut bad = FcnParams::zeros();
        bad.data_mut()[3] = f64::NAN;
        assert!(matches!(adam_step(&mut params, &bad, &mut st), Err(Error::Numeric(_))));
        assert_eq!(st.step(), 1);
        st.decay_lr();
        assert!((st.lr - 0.99e-3).abs() < 1e-18);
    }
}
