//! Feed-forward toy denoiser.
//!
//! Two tanh hidden layers over `[z, control, time features]`, with the text
//! embedding projected additively into the first hidden layer. The output
//! adds a fixed `sqrt(1 - alpha_bar) z` skip term and, when the control map
//! shares the latent's spatial size, two zero-initialised 3x3 convolutions
//! of the control map with kernels mixed by noise-level gates: one added to
//! the output, one scaling `z` per element. The dense path alone cannot tie
//! output pixels to nearby control pixels, and the scaling branch lets the
//! control map set the local prior variance. Parameters
//! are kept on the `f32` grid so checkpoints reload bit-exactly.

use alloc::vec;
use alloc::vec::Vec;

use libm::{cos, pow, sin, tanh};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{ControlMap, Denoiser, GradientMechanism, Vjp};
use crate::error::{contract, Result};
use crate::schedule::NoiseLevel;
use crate::tensor::{dot, Latent, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpArchitecture {
    pub latent_shape: [usize; 3],
    pub control_shape: Option<[usize; 3]>,
    pub embedding_dim: usize,
    pub hidden: usize,
    /// Number of sinusoidal timestep features (even).
    pub time_features: usize,
}

#[derive(Clone, Copy, Debug)]
struct Layout {
    w1: usize,
    we: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    wc: usize,
    end: usize,
}

/// Gates mixing the control kernel: `sqrt(ab (1 - ab))`, `sqrt(ab)`,
/// `sqrt(1 - ab)` and 1.
const GATES: usize = 4;
const TAPS: usize = 9;

fn gates(level: NoiseLevel) -> [f64; GATES] {
    let ab = level.alpha_bar;
    [libm::sqrt(ab * (1.0 - ab)), libm::sqrt(ab), libm::sqrt(1.0 - ab), 1.0]
}

impl MlpArchitecture {
    pub fn latent_len(&self) -> usize {
        self.latent_shape.iter().product()
    }

    pub fn control_len(&self) -> usize {
        self.control_shape.map_or(0, |s| s.iter().product())
    }

    /// Whether the local control convolution is present.
    pub fn has_control_conv(&self) -> bool {
        matches!(self.control_shape, Some([_, h, w]) if h == self.latent_shape[1] && w == self.latent_shape[2])
    }

    /// Length of one gate's kernel in one branch.
    fn kernel_len(&self) -> usize {
        match self.control_shape {
            Some([c, _, _]) if self.has_control_conv() => self.latent_shape[0] * c * TAPS,
            _ => 0,
        }
    }

    fn control_conv_len(&self) -> usize {
        2 * GATES * self.kernel_len()
    }

    pub fn input_len(&self) -> usize {
        self.latent_len() + self.control_len() + self.time_features
    }

    fn layout(&self) -> Layout {
        let (h, n_in, n_out, d) = (self.hidden, self.input_len(), self.latent_len(), self.embedding_dim);
        let w1 = 0;
        let we = w1 + h * n_in;
        let b1 = we + h * d;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + n_out * h;
        let wc = b3 + n_out;
        Layout {
            w1,
            we,
            b1,
            w2,
            b2,
            w3,
            b3,
            wc,
            end: wc + self.control_conv_len(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().end
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_len() == 0 || self.hidden == 0 || self.embedding_dim == 0 {
            return Err(contract!("architecture dimensions must be positive: {:?}", self));
        }
        if self.time_features % 2 != 0 {
            return Err(contract!("time feature count must be even, got {}", self.time_features));
        }
        Ok(())
    }
}

pub(crate) struct Activations {
    x: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    pub(crate) out: Vec<f64>,
    /// Indices of the nonzero control and time inputs in `x`.
    active: Vec<usize>,
    skip: f64,
    gates: [f64; GATES],
    /// Per-element gain of the scaling branch.
    gain: Vec<f64>,
}

/// `sqrt(1 - alpha_bar)`: the noise prediction that is optimal for
/// unit-variance Gaussian data. The network learns the residual.
fn skip_gain(level: NoiseLevel) -> f64 {
    libm::sqrt(1.0 - level.alpha_bar)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpDenoiser {
    arch: MlpArchitecture,
    params: Vec<f64>,
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

impl MlpDenoiser {
    pub fn from_params(arch: MlpArchitecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(contract!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            ));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(contract!("parameters must be finite"));
        }
        Ok(Self { arch, params })
    }

    pub(crate) fn init<R: Rng>(arch: MlpArchitecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let l = arch.layout();
        let mut params = vec![0.0; l.end];
        let mut fill = |range: core::ops::Range<usize>, std: f64| {
            for p in &mut params[range] {
                let n: f64 = rng.sample(StandardNormal);
                *p = round_f32(n * std);
            }
        };
        fill(l.w1..l.we, 1.0 / libm::sqrt(arch.input_len() as f64));
        fill(l.we..l.b1, 1.0 / libm::sqrt(arch.embedding_dim as f64));
        fill(l.w2..l.b2, 1.0 / libm::sqrt(arch.hidden as f64));
        fill(l.w3..l.b3, 1.0 / libm::sqrt(arch.hidden as f64));
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn round_params(&mut self) {
        for p in &mut self.params {
            *p = round_f32(*p);
        }
    }

    fn time_features(&self, level: NoiseLevel, out: &mut Vec<f64>) {
        let half = self.arch.time_features / 2;
        let t = level.training_timestep as f64;
        for k in 0..half {
            let freq = pow(1000.0, -(k as f64) / half.max(1) as f64);
            out.push(sin(t * freq));
            out.push(cos(t * freq));
        }
    }

    pub(crate) fn forward(
        &self,
        z: &[f64],
        level: NoiseLevel,
        embedding: &[f64],
        control: Option<&[f64]>,
    ) -> Activations {
        let a = &self.arch;
        let l = a.layout();
        let p = &self.params;
        let n_in = a.input_len();
        let mut x = Vec::with_capacity(n_in);
        x.extend_from_slice(z);
        match control {
            Some(c) => x.extend_from_slice(c),
            None => x.resize(a.latent_len() + a.control_len(), 0.0),
        }
        self.time_features(level, &mut x);

        let h = a.hidden;
        let d = a.embedding_dim;
        let mut h1 = Vec::with_capacity(h);
        // Control maps are mostly zero, so the non-latent inputs are summed sparsely.
        let n_lat = a.latent_len();
        let active: Vec<usize> = (n_lat..n_in).filter(|&i| x[i] != 0.0).collect();
        for r in 0..h {
            let w = &p[l.w1 + r * n_in..l.w1 + (r + 1) * n_in];
            let we = &p[l.we + r * d..l.we + (r + 1) * d];
            let sparse: f64 = active.iter().map(|&i| w[i] * x[i]).sum();
            h1.push(tanh(p[l.b1 + r] + dot(&w[..n_lat], z) + sparse + dot(we, embedding)));
        }
        let mut h2 = Vec::with_capacity(h);
        for r in 0..h {
            let w = &p[l.w2 + r * h..l.w2 + (r + 1) * h];
            h2.push(tanh(p[l.b2 + r] + dot(w, &h1)));
        }
        let n_out = a.latent_len();
        let skip = skip_gain(level);
        let mut out = Vec::with_capacity(n_out);
        for r in 0..n_out {
            let w = &p[l.w3 + r * h..l.w3 + (r + 1) * h];
            out.push(p[l.b3 + r] + dot(w, &h2) + skip * z[r]);
        }
        let gates = gates(level);
        let mut gain = Vec::new();
        if control.is_some() && a.has_control_conv() {
            let shift = self.mixed_kernel(&gates, l.wc);
            let scale = self.mixed_kernel(&gates, l.wc + GATES * a.kernel_len());
            let (ci, plane) = (a.control_shape.map_or(0, |s| s[0]), a.latent_shape[1] * a.latent_shape[2]);
            gain = vec![0.0; n_out];
            self.control_conv(&x[a.latent_len()..a.latent_len() + a.control_len()], &mut |o, c, k, v| {
                let i = ((o / plane) * ci + c) * TAPS + k;
                out[o] += shift[i] * v;
                gain[o] += scale[i] * v;
            });
            for ((o, g), zi) in out.iter_mut().zip(&gain).zip(z) {
                *o += g * zi;
            }
        }
        Activations {
            x,
            h1,
            h2,
            out,
            active,
            skip,
            gates,
            gain,
        }
    }

    fn mixed_kernel(&self, gates: &[f64; GATES], offset: usize) -> Vec<f64> {
        let n = self.arch.kernel_len();
        let mut k = vec![0.0; n];
        for (g, gate) in gates.iter().enumerate() {
            for (acc, w) in k.iter_mut().zip(&self.params[offset + g * n..offset + (g + 1) * n]) {
                *acc += gate * w;
            }
        }
        k
    }

    /// Visits every `(output index, control channel, tap, control value)`
    /// of the zero-padded 3x3 convolution.
    fn control_conv(&self, control: &[f64], visit: &mut dyn FnMut(usize, usize, usize, f64)) {
        let [co, h, w] = self.arch.latent_shape;
        let (h, w) = (h as i64, w as i64);
        for (src, &v) in control.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let (c, yy, xx) = (src as i64 / (h * w), src as i64 / w % h, src as i64 % w);
            for k in 0..TAPS {
                // Output (y, x) reads input (y + dy, x + dx) through tap k.
                let (y, x) = (yy - (k as i64 / 3 - 1), xx - (k as i64 % 3 - 1));
                if y < 0 || x < 0 || y >= h || x >= w {
                    continue;
                }
                for o in 0..co as i64 {
                    visit(((o * h + y) * w + x) as usize, c as usize, k, v);
                }
            }
        }
    }

    /// Backpropagates `g_out`; returns the latent and embedding cotangents and
    /// accumulates parameter gradients into `param_grads` when given.
    pub(crate) fn backward(
        &self,
        act: &Activations,
        embedding: &[f64],
        g_out: &[f64],
        mut param_grads: Option<&mut [f64]>,
    ) -> (Vec<f64>, Vec<f64>) {
        let a = &self.arch;
        let l = a.layout();
        let p = &self.params;
        let (h, d, n_in, n_out) = (a.hidden, a.embedding_dim, a.input_len(), a.latent_len());

        if let Some(pg) = param_grads.as_deref_mut() {
            if !act.gain.is_empty() {
                let (ci, plane) = (a.control_shape.map_or(0, |s| s[0]), a.latent_shape[1] * a.latent_shape[2]);
                let n = a.kernel_len();
                let mut g_shift = vec![0.0; n];
                let mut g_scale = vec![0.0; n];
                self.control_conv(&act.x[n_out..n_out + a.control_len()], &mut |o, c, k, v| {
                    let i = ((o / plane) * ci + c) * TAPS + k;
                    g_shift[i] += g_out[o] * v;
                    g_scale[i] += g_out[o] * act.x[o] * v;
                });
                for (base, gk) in [(l.wc, &g_shift), (l.wc + GATES * n, &g_scale)] {
                    for (g, gate) in act.gates.iter().enumerate() {
                        for (acc, v) in pg[base + g * n..base + (g + 1) * n].iter_mut().zip(gk) {
                            *acc += gate * v;
                        }
                    }
                }
            }
        }

        let mut g_h2 = vec![0.0; h];
        for r in 0..n_out {
            let g = g_out[r];
            if g == 0.0 {
                continue;
            }
            let w = &p[l.w3 + r * h..l.w3 + (r + 1) * h];
            for (acc, wi) in g_h2.iter_mut().zip(w) {
                *acc += g * wi;
            }
            if let Some(pg) = param_grads.as_deref_mut() {
                for (acc, hi) in pg[l.w3 + r * h..l.w3 + (r + 1) * h].iter_mut().zip(&act.h2) {
                    *acc += g * hi;
                }
                pg[l.b3 + r] += g;
            }
        }
        let g_pre2: Vec<f64> = g_h2
            .iter()
            .zip(&act.h2)
            .map(|(g, y)| g * (1.0 - y * y))
            .collect();

        let mut g_h1 = vec![0.0; h];
        for r in 0..h {
            let g = g_pre2[r];
            let w = &p[l.w2 + r * h..l.w2 + (r + 1) * h];
            for (acc, wi) in g_h1.iter_mut().zip(w) {
                *acc += g * wi;
            }
            if let Some(pg) = param_grads.as_deref_mut() {
                for (acc, hi) in pg[l.w2 + r * h..l.w2 + (r + 1) * h].iter_mut().zip(&act.h1) {
                    *acc += g * hi;
                }
                pg[l.b2 + r] += g;
            }
        }
        let g_pre1: Vec<f64> = g_h1
            .iter()
            .zip(&act.h1)
            .map(|(g, y)| g * (1.0 - y * y))
            .collect();

        let mut g_z: Vec<f64> = g_out.iter().map(|g| act.skip * g).collect();
        for ((acc, g), m) in g_z.iter_mut().zip(g_out).zip(&act.gain) {
            *acc += g * m;
        }
        let mut g_e = vec![0.0; d];
        for r in 0..h {
            let g = g_pre1[r];
            let w = &p[l.w1 + r * n_in..l.w1 + r * n_in + n_out];
            for (acc, wi) in g_z.iter_mut().zip(w) {
                *acc += g * wi;
            }
            let we = &p[l.we + r * d..l.we + (r + 1) * d];
            for (acc, wi) in g_e.iter_mut().zip(we) {
                *acc += g * wi;
            }
            if let Some(pg) = param_grads.as_deref_mut() {
                let row = &mut pg[l.w1 + r * n_in..l.w1 + (r + 1) * n_in];
                for (acc, xi) in row.iter_mut().zip(&act.x[..n_out]) {
                    *acc += g * xi;
                }
                for &i in &act.active {
                    row[i] += g * act.x[i];
                }
                for (acc, ei) in pg[l.we + r * d..l.we + (r + 1) * d].iter_mut().zip(embedding) {
                    *acc += g * ei;
                }
                pg[l.b1 + r] += g;
            }
        }
        (g_z, g_e)
    }
}

impl Denoiser for MlpDenoiser {
    fn latent_shape(&self) -> [usize; 3] {
        self.arch.latent_shape
    }

    fn embedding_dim(&self) -> usize {
        self.arch.embedding_dim
    }

    fn control_shape(&self) -> Option<[usize; 3]> {
        self.arch.control_shape
    }

    fn empty_embedding(&self) -> Vec<f64> {
        vec![0.0; self.arch.embedding_dim]
    }

    fn gradient_mechanism(&self) -> GradientMechanism {
        GradientMechanism::Analytic
    }

    fn predict(
        &self,
        z: &Latent,
        level: NoiseLevel,
        embedding: &[f64],
        control: Option<&ControlMap>,
    ) -> Result<Latent> {
        self.check_inputs(z, embedding, control)?;
        let control = control.filter(|_| self.arch.control_shape.is_some());
        let act = self.forward(
            z.as_slice(),
            level,
            embedding,
            control.map(|c| c.tensor().as_slice()),
        );
        Tensor::from_vec(z.shape(), act.out)
    }

    fn vjp(
        &self,
        z: &Latent,
        level: NoiseLevel,
        embedding: &[f64],
        control: Option<&ControlMap>,
        cotangent: &Latent,
    ) -> Result<(Latent, Vjp)> {
        self.check_inputs(z, embedding, control)?;
        z.ensure_same_shape(cotangent, "cotangent")?;
        let control = control.filter(|_| self.arch.control_shape.is_some());
        let act = self.forward(
            z.as_slice(),
            level,
            embedding,
            control.map(|c| c.tensor().as_slice()),
        );
        let (g_z, g_e) = self.backward(&act, embedding, cotangent.as_slice(), None);
        Ok((
            Tensor::from_vec(z.shape(), act.out)?,
            Vjp {
                latent: Tensor::from_vec(z.shape(), g_z)?,
                embedding: g_e,
            },
        ))
    }
}
