//! Stacked LSTM trunk with per-field linear heads, batched forward pass and
//! backpropagation through time.
//!
//! Parameters live in one flat vector. Per layer: `W` (`4H × D`), `R`
//! (`4H × H`), `b` (`4H`), gate blocks ordered f, i, o, ć. Per head: `W`
//! (`n × H`) then `b` (`n`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::FieldId;
use crate::linalg::{gemm, MatView};

/// One task-specific output block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub field: FieldId,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_size: usize,
    pub hidden_size: usize,
    pub layers: usize,
    /// Field registry; output rows follow this order.
    pub heads: Vec<HeadSpec>,
}

impl Architecture {
    pub fn new(input_size: usize, hidden_size: usize, layers: usize, heads: Vec<HeadSpec>) -> Self {
        Self { input_size, hidden_size, layers, heads }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.hidden_size == 0 || self.layers == 0 {
            return Err(Error::Config(format!("degenerate architecture {self:?}")));
        }
        if self.heads.is_empty() || self.heads.iter().any(|h| h.size == 0) {
            return Err(Error::Config("every head needs at least one output".into()));
        }
        for (i, h) in self.heads.iter().enumerate() {
            if self.heads[..i].iter().any(|o| o.field == h.field) {
                return Err(Error::FieldCollision(h.field.to_string()));
            }
        }
        Ok(())
    }

    pub fn output_size(&self) -> usize {
        self.heads.iter().map(|h| h.size).sum()
    }

    /// Output row range of `field`.
    pub fn head_range(&self, field: FieldId) -> Option<std::ops::Range<usize>> {
        let mut off = 0;
        for h in &self.heads {
            if h.field == field {
                return Some(off..off + h.size);
            }
            off += h.size;
        }
        None
    }

    fn layer_input(&self, l: usize) -> usize {
        if l == 0 {
            self.input_size
        } else {
            self.hidden_size
        }
    }

    pub fn layout(&self) -> Layout {
        let h = self.hidden_size;
        let mut off = 0;
        let mut layers = Vec::with_capacity(self.layers);
        for l in 0..self.layers {
            let d = self.layer_input(l);
            let w = off;
            let r = w + 4 * h * d;
            let b = r + 4 * h * h;
            off = b + 4 * h;
            layers.push(LayerOffsets { input: d, w, r, b });
        }
        let mut heads = Vec::with_capacity(self.heads.len());
        let mut row = 0;
        for spec in &self.heads {
            let w = off;
            let b = w + spec.size * h;
            off = b + spec.size;
            heads.push(HeadOffsets { size: spec.size, row, w, b });
            row += spec.size;
        }
        Layout { layers, heads, len: off }
    }
}

/// Closed-form trainable parameter count.
pub fn count_params(arch: &Architecture) -> usize {
    let h = arch.hidden_size;
    let trunk: usize = (0..arch.layers).map(|l| 4 * h * (arch.layer_input(l) + h + 1)).sum();
    trunk + arch.heads.iter().map(|s| h * s.size + s.size).sum::<usize>()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerOffsets {
    pub input: usize,
    pub w: usize,
    pub r: usize,
    pub b: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadOffsets {
    pub size: usize,
    /// First output row of this head.
    pub row: usize,
    pub w: usize,
    pub b: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub layers: Vec<LayerOffsets>,
    pub heads: Vec<HeadOffsets>,
    pub len: usize,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one forward pass, time-major (`T × B × ·`).
#[derive(Clone, Debug)]
pub struct ForwardCache {
    generation: u64,
    pub batch: usize,
    pub steps: usize,
    input: Vec<f64>,
    pub layers: Vec<LayerCache>,
}

#[derive(Clone, Debug)]
pub struct LayerCache {
    /// Activated gates `[f, i, o, ć]` per row, `T × B × 4H`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl ForwardCache {
    /// Top-layer hidden states, `T × B × H`.
    pub fn top_hidden(&self) -> &[f64] {
        &self.layers.last().expect("at least one layer").h
    }
}

static NEXT_GENERATION: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(1);

fn next_generation() -> u64 {
    NEXT_GENERATION.fetch_add(1, std::sync::atomic::Ordering::Relaxed)
}

/// Multi-task LSTM network.
#[derive(Debug)]
pub struct Model {
    arch: Architecture,
    layout: Layout,
    theta: Vec<f64>,
    generation: u64,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Self { arch: self.arch.clone(), layout: self.layout.clone(), theta: self.theta.clone(), generation: next_generation() }
    }
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.theta == other.theta
    }
}

impl Model {
    /// Glorot-uniform weights per gate block, zero biases except the forget
    /// gate (1).
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        let mut theta = vec![0.0; layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = arch.hidden_size;
        let mut fill = |slice: &mut [f64], fan_in: usize, fan_out: usize| {
            let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
            slice.iter_mut().for_each(|v| *v = rng.gen_range(-lim..lim));
        };
        for lo in &layout.layers {
            for g in 0..4 {
                fill(&mut theta[lo.w + g * h * lo.input..lo.w + (g + 1) * h * lo.input], lo.input, h);
                fill(&mut theta[lo.r + g * h * h..lo.r + (g + 1) * h * h], h, h);
            }
            theta[lo.b..lo.b + h].iter_mut().for_each(|v| *v = 1.0);
        }
        for ho in &layout.heads {
            fill(&mut theta[ho.w..ho.w + ho.size * h], h, ho.size);
        }
        Ok(Self { arch, layout, theta, generation: next_generation() })
    }

    pub fn from_params(arch: Architecture, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        if theta.len() != layout.len {
            return Err(Error::Shape(format!("{} parameters for an architecture with {}", theta.len(), layout.len)));
        }
        Ok(Self { arch, layout, theta, generation: next_generation() })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    /// Mutable parameters; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation = next_generation();
        &mut self.theta
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    /// Names the tensor holding parameter `index`.
    pub fn param_name(&self, index: usize) -> String {
        for (l, lo) in self.layout.layers.iter().enumerate() {
            if index >= lo.w && index < lo.r {
                return format!("layer{l}.W");
            } else if index >= lo.r && index < lo.b {
                return format!("layer{l}.R");
            } else if index >= lo.b && index < lo.b + 4 * self.arch.hidden_size {
                return format!("layer{l}.b");
            }
        }
        for (spec, ho) in self.arch.heads.iter().zip(&self.layout.heads) {
            if index >= ho.w && index < ho.b {
                return format!("head[{}].W", spec.field);
            } else if index >= ho.b && index < ho.b + ho.size {
                return format!("head[{}].b", spec.field);
            }
        }
        format!("theta[{index}]")
    }

    /// Runs the trunk and heads on `batch` samples of `steps` steps.
    /// `x` is `B × T × D`; the result is `B × T × N`.
    pub fn forward(&self, x: &[f64], batch: usize, steps: usize) -> Result<(Vec<f64>, ForwardCache)> {
        let cache = self.trunk(x, batch, steps)?;
        let y = self.heads(cache.top_hidden(), batch, steps);
        Ok((y, cache))
    }

    pub fn predict(&self, x: &[f64], batch: usize, steps: usize) -> Result<Vec<f64>> {
        Ok(self.forward(x, batch, steps)?.0)
    }

    /// Stacked LSTM layers only.
    pub fn trunk(&self, x: &[f64], batch: usize, steps: usize) -> Result<ForwardCache> {
        let d0 = self.arch.input_size;
        if steps == 0 || batch == 0 {
            return Err(Error::Shape("empty input sequence".into()));
        }
        if x.len() != batch * steps * d0 {
            return Err(Error::Shape(format!("{} inputs for {batch}×{steps}×{d0}", x.len())));
        }
        let h = self.arch.hidden_size;
        let g4 = 4 * h;
        let mut input = vec![0.0; steps * batch * d0];
        for b in 0..batch {
            for t in 0..steps {
                let src = &x[(b * steps + t) * d0..(b * steps + t + 1) * d0];
                input[(t * batch + b) * d0..(t * batch + b + 1) * d0].copy_from_slice(src);
            }
        }
        let mut layers: Vec<LayerCache> = Vec::with_capacity(self.arch.layers);
        for lo in &self.layout.layers {
            let below: &[f64] = layers.last().map_or(&input, |c| &c.h);
            let d = lo.input;
            let w = &self.theta[lo.w..lo.r];
            let r = &self.theta[lo.r..lo.b];
            let bias = &self.theta[lo.b..lo.b + g4];
            let mut gates = vec![0.0; steps * batch * g4];
            // input contributions of every step in one product
            gemm(
                steps * batch,
                d,
                g4,
                1.0,
                MatView::row_major(below, d),
                MatView::transposed(w, d),
                0.0,
                &mut gates,
                g4,
            );
            let mut c = vec![0.0; steps * batch * h];
            let mut tanh_c = vec![0.0; steps * batch * h];
            let mut hs = vec![0.0; steps * batch * h];
            for t in 0..steps {
                let zt = t * batch * g4;
                if t > 0 {
                    let hp = &hs[(t - 1) * batch * h..t * batch * h];
                    gemm(
                        batch,
                        h,
                        g4,
                        1.0,
                        MatView::row_major(hp, h),
                        MatView::transposed(r, h),
                        1.0,
                        &mut gates[zt..zt + batch * g4],
                        g4,
                    );
                }
                for b in 0..batch {
                    let z = &mut gates[zt + b * g4..zt + (b + 1) * g4];
                    for (v, bb) in z.iter_mut().zip(bias) {
                        *v += bb;
                    }
                    for v in &mut z[..3 * h] {
                        *v = sigmoid(*v);
                    }
                    for v in &mut z[3 * h..] {
                        *v = v.tanh();
                    }
                    let row = (t * batch + b) * h;
                    for j in 0..h {
                        let prev = if t > 0 { c[row - batch * h + j] } else { 0.0 };
                        let cj = z[j] * prev + z[h + j] * z[3 * h + j];
                        let tc = cj.tanh();
                        c[row + j] = cj;
                        tanh_c[row + j] = tc;
                        hs[row + j] = z[2 * h + j] * tc;
                    }
                }
            }
            layers.push(LayerCache { gates, c, tanh_c, h: hs });
        }
        Ok(ForwardCache { generation: self.generation, batch, steps, input, layers })
    }

    /// Applies every head to time-major hidden states; returns `B × T × N`.
    pub fn heads(&self, hidden: &[f64], batch: usize, steps: usize) -> Vec<f64> {
        let h = self.arch.hidden_size;
        let n = self.arch.output_size();
        let rows = steps * batch;
        let mut y_tm = vec![0.0; rows * n];
        for ho in &self.layout.heads {
            let w = &self.theta[ho.w..ho.b];
            let bias = &self.theta[ho.b..ho.b + ho.size];
            let out = &mut y_tm[ho.row..];
            for r in 0..rows {
                out[r * n..r * n + ho.size].copy_from_slice(bias);
            }
            gemm(rows, h, ho.size, 1.0, MatView::row_major(hidden, h), MatView::transposed(w, h), 1.0, out, n);
        }
        let mut y = vec![0.0; rows * n];
        for t in 0..steps {
            for b in 0..batch {
                y[(b * steps + t) * n..(b * steps + t + 1) * n]
                    .copy_from_slice(&y_tm[(t * batch + b) * n..(t * batch + b + 1) * n]);
            }
        }
        y
    }

    /// Gradient of `Σ dy ⊙ y` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, dy: &[f64]) -> Result<Vec<f64>> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache);
        }
        let (batch, steps) = (cache.batch, cache.steps);
        let h = self.arch.hidden_size;
        let g4 = 4 * h;
        let n = self.arch.output_size();
        let rows = steps * batch;
        if dy.len() != rows * n {
            return Err(Error::Shape(format!("{} output gradients, expected {}", dy.len(), rows * n)));
        }
        let mut grad = vec![0.0; self.theta.len()];
        let mut dy_tm = vec![0.0; rows * n];
        for t in 0..steps {
            for b in 0..batch {
                dy_tm[(t * batch + b) * n..(t * batch + b + 1) * n]
                    .copy_from_slice(&dy[(b * steps + t) * n..(b * steps + t + 1) * n]);
            }
        }

        let top = cache.top_hidden();
        let mut dh_above = vec![0.0; rows * h];
        for ho in &self.layout.heads {
            let w = &self.theta[ho.w..ho.b];
            let dyh = &dy_tm[ho.row..];
            // dW = dYᵀ H
            let (gw, gb) = grad.split_at_mut(ho.b);
            gemm(
                ho.size,
                rows,
                h,
                1.0,
                MatView { data: dyh, row_stride: 1, col_stride: n as isize },
                MatView::row_major(top, h),
                0.0,
                &mut gw[ho.w..],
                h,
            );
            for r in 0..rows {
                for k in 0..ho.size {
                    gb[k] += dyh[r * n + k];
                }
            }
            // dH += dY W
            gemm(
                rows,
                ho.size,
                h,
                1.0,
                MatView { data: dyh, row_stride: n as isize, col_stride: 1 },
                MatView::row_major(w, h),
                1.0,
                &mut dh_above,
                h,
            );
        }

        for (l, lo) in self.layout.layers.iter().enumerate().rev() {
            let lc = &cache.layers[l];
            let below: &[f64] = if l == 0 { &cache.input } else { &cache.layers[l - 1].h };
            let d = lo.input;
            let r = &self.theta[lo.r..lo.b];
            let mut dz = vec![0.0; rows * g4];
            let mut dh_next = vec![0.0; batch * h];
            let mut dc_next = vec![0.0; batch * h];
            for t in (0..steps).rev() {
                for b in 0..batch {
                    let row = (t * batch + b) * h;
                    let g = &lc.gates[(t * batch + b) * g4..(t * batch + b + 1) * g4];
                    let z = &mut dz[(t * batch + b) * g4..(t * batch + b + 1) * g4];
                    for j in 0..h {
                        let (f, i, o, cc) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                        let tc = lc.tanh_c[row + j];
                        let dh = dh_above[row + j] + dh_next[b * h + j];
                        let dc = dh * o * (1.0 - tc * tc) + dc_next[b * h + j];
                        let c_prev = if t > 0 { lc.c[row - batch * h + j] } else { 0.0 };
                        z[j] = dc * c_prev * f * (1.0 - f);
                        z[h + j] = dc * cc * i * (1.0 - i);
                        z[2 * h + j] = dh * tc * o * (1.0 - o);
                        z[3 * h + j] = dc * i * (1.0 - cc * cc);
                        dc_next[b * h + j] = dc * f;
                    }
                }
                if t > 0 {
                    gemm(
                        batch,
                        g4,
                        h,
                        1.0,
                        MatView::row_major(&dz[t * batch * g4..(t + 1) * batch * g4], g4),
                        MatView::row_major(r, h),
                        0.0,
                        &mut dh_next,
                        h,
                    );
                }
            }
            let (g_w, rest) = grad[lo.w..].split_at_mut(lo.r - lo.w);
            let (g_r, g_b) = rest.split_at_mut(lo.b - lo.r);
            gemm(g4, rows, d, 1.0, MatView::transposed(&dz, g4), MatView::row_major(below, d), 0.0, g_w, d);
            if steps > 1 {
                let tail = (steps - 1) * batch;
                gemm(
                    g4,
                    tail,
                    h,
                    1.0,
                    MatView::transposed(&dz[batch * g4..], g4),
                    MatView::row_major(&lc.h[..tail * h], h),
                    0.0,
                    g_r,
                    h,
                );
            }
            for rr in 0..rows {
                for k in 0..g4 {
                    g_b[k] += dz[rr * g4 + k];
                }
            }
            if l > 0 {
                dh_above = vec![0.0; rows * h];
                let w = &self.theta[lo.w..lo.r];
                gemm(rows, g4, d, 1.0, MatView::row_major(&dz, g4), MatView::row_major(w, d), 0.0, &mut dh_above, d);
            }
        }
        Ok(grad)
    }

    /// Copy with extra heads appended; existing parameters are kept and new
    /// head weights drawn from `seed`.
    pub fn with_heads(&self, extra: &[HeadSpec], seed: u64) -> Result<Model> {
        let mut arch = self.arch.clone();
        arch.heads.extend_from_slice(extra);
        arch.validate()?;
        let fresh = Model::new(arch.clone(), seed)?;
        let mut theta = self.theta.clone();
        theta.extend_from_slice(&fresh.theta[self.theta.len()..]);
        Model::from_params(arch, theta)
    }

    /// Single-head model sharing this trunk and the given head.
    pub fn head_parameters(&self, field: FieldId) -> Option<&[f64]> {
        let i = self.arch.heads.iter().position(|h| h.field == field)?;
        let ho = &self.layout.heads[i];
        Some(&self.theta[ho.w..ho.b + ho.size])
    }

    pub fn set_head_parameters(&mut self, field: FieldId, values: &[f64]) -> Result<()> {
        let i = self
            .arch
            .heads
            .iter()
            .position(|h| h.field == field)
            .ok_or_else(|| Error::UnknownField(field.to_string()))?;
        let ho = self.layout.heads[i];
        let dst = &mut self.params_mut()[ho.w..ho.b + ho.size];
        if dst.len() != values.len() {
            return Err(Error::Shape(format!("{} head parameters, expected {}", values.len(), dst.len())));
        }
        dst.copy_from_slice(values);
        Ok(())
    }

    /// Index range of the trunk parameters.
    pub fn trunk_len(&self) -> usize {
        self.layout.heads.first().map_or(self.layout.len, |h| h.w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(h: usize, d: usize, layers: usize, heads: &[usize]) -> Architecture {
        let fields = [FieldId::Displacement, FieldId::VonMises, FieldId::EqPlasticStrain, FieldId::PlasticStrain];
        Architecture::new(d, h, layers, heads.iter().zip(fields).map(|(&size, field)| HeadSpec { field, size }).collect())
    }

    #[test]
    fn closed_form_parameter_counts() {
        assert_eq!(count_params(&arch(41, 1, 1, &[1, 8, 4, 3])), 7724);
        assert_eq!(count_params(&arch(1, 1, 1, &[1])), 14);
        assert_eq!(count_params(&arch(80, 2, 1, &[2, 19, 7, 4])), 29152);
        let a = arch(7, 3, 3, &[2, 5]);
        assert_eq!(Model::new(a.clone(), 0).unwrap().n_params(), count_params(&a));
    }

    #[test]
    fn zero_weights_give_zero_hidden() {
        let a = arch(4, 2, 2, &[3]);
        let m = Model::from_params(a.clone(), vec![0.0; count_params(&a)]).unwrap();
        let c = m.trunk(&[0.3; 2 * 5 * 2], 2, 5).unwrap();
        assert!(c.top_hidden().iter().all(|v| *v == 0.0));
        assert!(m.predict(&[0.3; 20], 2, 5).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hand_evaluated_single_step() {
        let a = arch(1, 1, 1, &[1]);
        let mut theta = vec![0.0; count_params(&a)];
        let lo = a.layout().layers[0];
        let bc = 30.0;
        theta[lo.b + 3] = bc;
        let m = Model::from_params(a, theta).unwrap();
        let c = m.trunk(&[0.7], 1, 1).unwrap();
        let expected = 0.5 * (0.5 * bc.tanh()).tanh();
        assert!((c.top_hidden()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn output_shapes() {
        let m = Model::new(arch(41, 1, 1, &[1, 8, 4, 3]), 1).unwrap();
        assert_eq!(m.predict(&[0.5; 10], 1, 10).unwrap().len(), 16 * 10);
        let c = m.trunk(&[0.5; 10], 1, 10).unwrap();
        assert_eq!(c.top_hidden().len(), 10 * 41);
        let beam = Model::new(arch(80, 2, 1, &[2, 19, 7, 4]), 1).unwrap();
        assert_eq!(beam.predict(&[0.5; 20], 1, 10).unwrap().len(), 32 * 10);
    }

    #[test]
    fn identity_head_passes_hidden_through() {
        let a = Architecture::new(1, 3, 1, vec![HeadSpec { field: FieldId::VonMises, size: 3 }]);
        let mut m = Model::new(a, 4).unwrap();
        let ho = m.layout().heads[0];
        let p = m.params_mut();
        p[ho.w..ho.b + 3].iter_mut().for_each(|v| *v = 0.0);
        for k in 0..3 {
            p[ho.w + k * 3 + k] = 1.0;
        }
        let (y, c) = m.forward(&[0.1, 0.9, -0.4], 1, 3).unwrap();
        assert_eq!(y, c.top_hidden());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero() {
        let m = Model::new(arch(3, 2, 2, &[2, 1]), 2).unwrap();
        let (y, c) = m.forward(&[0.2; 2 * 4 * 2], 2, 4).unwrap();
        let g = m.backward(&c, &vec![0.0; y.len()]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut m = Model::new(arch(3, 1, 1, &[1]), 2).unwrap();
        let (y, c) = m.forward(&[0.2; 3], 1, 3).unwrap();
        m.params_mut()[0] += 1.0;
        assert!(matches!(m.backward(&c, &y), Err(Error::StaleCache)));
        let other = m.clone();
        let (_, c2) = m.forward(&[0.2; 3], 1, 3).unwrap();
        assert!(matches!(other.backward(&c2, &y), Err(Error::StaleCache)));
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let m = Model::new(arch(3, 1, 1, &[1]), 2).unwrap();
        assert!(m.forward(&[], 1, 0).is_err());
    }

    #[test]
    fn added_heads_leave_existing_outputs_bitwise() {
        let m = Model::new(arch(5, 1, 2, &[2, 3]), 9).unwrap();
        let x: Vec<f64> = (0..3 * 10).map(|i| (i as f64 * 0.37).sin()).collect();
        let before = m.predict(&x, 3, 10).unwrap();
        let ext = m.with_heads(&[HeadSpec { field: FieldId::EqStrain, size: 4 }], 3).unwrap();
        let after = ext.predict(&x, 3, 10).unwrap();
        for r in 0..30 {
            assert_eq!(&before[r * 5..r * 5 + 5], &after[r * 9..r * 9 + 5]);
        }
        assert!(m.with_heads(&[HeadSpec { field: FieldId::VonMises, size: 1 }], 0).is_err());
    }

    fn weighted_output(m: &Model, x: &[f64], w: &[f64], batch: usize, steps: usize) -> f64 {
        m.predict(x, batch, steps).unwrap().iter().zip(w).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn gradients_match_central_differences() {
        for seed in 0..20u64 {
            let layers = 1 + (seed % 2) as usize;
            let (batch, steps) = (2, 4);
            let a = arch(3, 2, layers, &[2, 1]);
            let m = Model::new(a, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let x: Vec<f64> = (0..batch * steps * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..batch * steps * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, cache) = m.forward(&x, batch, steps).unwrap();
            let g = m.backward(&cache, &w).unwrap();
            let eps = 1e-6;
            for i in 0..m.n_params() {
                let mut p = m.clone();
                p.params_mut()[i] += eps;
                let up = weighted_output(&p, &x, &w, batch, steps);
                p.params_mut()[i] -= 2.0 * eps;
                let down = weighted_output(&p, &x, &w, batch, steps);
                let fd = (up - down) / (2.0 * eps);
                let tol = 1e-6 * (1.0 + fd.abs());
                assert!((g[i] - fd).abs() < tol, "seed {seed} {}: {} vs {fd}", m.param_name(i), g[i]);
            }
        }
    }

    #[test]
    fn outputs_are_causal() {
        let m = Model::new(arch(4, 1, 2, &[2]), 5).unwrap();
        let x = [0.1, -0.3, 0.8, 0.2, -0.9, 0.4];
        let mut x2 = x;
        x2[4] = 0.7;
        let (a, b) = (m.predict(&x, 1, 6).unwrap(), m.predict(&x2, 1, 6).unwrap());
        assert_eq!(&a[..8], &b[..8]);
        assert_ne!(&a[8..10], &b[8..10]);
        let prefix = m.predict(&x[..3], 1, 3).unwrap();
        assert_eq!(&prefix[..], &a[..6]);
    }

    #[test]
    fn single_head_model_matches_its_slice() {
        let multi = Model::new(arch(5, 1, 1, &[2, 3]), 11).unwrap();
        let single_arch = arch(5, 1, 1, &[2]);
        let theta = multi.params()[..count_params(&single_arch)].to_vec();
        let single = Model::from_params(single_arch, theta).unwrap();
        let x = [0.3, -0.2, 0.5, 0.9];
        let (ym, ys) = (multi.predict(&x, 1, 4).unwrap(), single.predict(&x, 1, 4).unwrap());
        for t in 0..4 {
            assert_eq!(&ym[t * 5..t * 5 + 2], &ys[t * 2..t * 2 + 2]);
        }
    }

    #[test]
    fn batched_prediction_matches_single_samples() {
        let m = Model::new(arch(6, 2, 2, &[3, 2]), 13).unwrap();
        let (batch, steps) = (5, 7);
        let x: Vec<f64> = (0..batch * steps * 2).map(|i| ((i * 37 % 23) as f64 / 23.0) - 0.4).collect();
        let all = m.predict(&x, batch, steps).unwrap();
        for b in 0..batch {
            let one = m.predict(&x[b * steps * 2..(b + 1) * steps * 2], 1, steps).unwrap();
            for (a, o) in all[b * steps * 5..(b + 1) * steps * 5].iter().zip(&one) {
                assert!((a - o).abs() < 1e-14, "sample {b}: {a} vs {o}");
            }
        }
    }
}
