//! MLP policy with a Gaussian-mixture action head.
//!
//! Parameters live in one flat vector so the optimizer and the gradient
//! checks can address them uniformly. Layout, per layer: the weight matrix
//! (row-major, `out x in`) followed by the bias. The head emits, in order,
//! `K` mixture logits, `K x D` means and `K x D` raw log-stds.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{EnvAction, ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -3.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const INIT_LOG_STD: f64 = -1.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyArch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub n_modes: usize,
    pub action_dim: usize,
}

impl Default for PolicyArch {
    fn default() -> Self {
        PolicyArch {
            input_dim: OBS_DIM,
            hidden: vec![64, 64],
            n_modes: 5,
            action_dim: ACTION_DIM,
        }
    }
}

impl PolicyArch {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.n_modes == 0 || self.action_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("policy: all dimensions must be >= 1".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.n_modes * (1 + 2 * self.action_dim)
    }

    /// Layer widths from input to head.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend(&self.hidden);
        w.push(self.head_dim());
        w
    }

    pub fn num_params(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Fixed per-feature affine map applied to observations before the first layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ObsNormalizer {
    pub fn identity(dim: usize) -> Self {
        ObsNormalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Feature-wise mean and std; near-constant features keep unit scale.
    pub fn fit<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            n += 1;
            for j in 0..dim {
                sum[j] += r[j];
                sq[j] += r[j] * r[j];
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = (0..dim)
            .map(|j| {
                let var = (sq[j] / n as f64 - mean[j] * mean[j]).max(0.0);
                if var.sqrt() < 1e-6 {
                    1.0
                } else {
                    var.sqrt()
                }
            })
            .collect();
        ObsNormalizer { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    arch: PolicyArch,
    norm: ObsNormalizer,
    theta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    arch: PolicyArch,
    norm: ObsNormalizer,
}

/// Mixture parameters for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmHead {
    pub logits: Vec<f64>,
    /// `K x D`, mode-major.
    pub means: Vec<f64>,
    /// Clamped log-stds, `K x D`.
    pub log_stds: Vec<f64>,
}

/// Reusable forward/backward buffers.
#[derive(Debug, Clone)]
pub struct Scratch {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
    head_grad: Vec<f64>,
    comp: Vec<f64>,
}

impl Scratch {
    pub fn new(arch: &PolicyArch) -> Self {
        let widths = arch.widths();
        Scratch {
            acts: widths.iter().map(|&w| vec![0.0; w]).collect(),
            deltas: widths.iter().map(|&w| vec![0.0; w]).collect(),
            head_grad: vec![0.0; arch.head_dim()],
            comp: vec![0.0; arch.n_modes],
        }
    }
}

fn argmax(xs: &[f64]) -> usize {
    (0..xs.len()).fold(0, |best, m| if xs[m] > xs[best] { m } else { best })
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl PolicyParams {
    /// Fan-in scaled uniform weights; log-std head rows start at exactly `INIT_LOG_STD`.
    pub fn init(arch: &PolicyArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = arch.widths();
        let mut theta = Vec::with_capacity(arch.num_params());
        let n_layers = widths.len() - 1;
        let (k, d) = (arch.n_modes, arch.action_dim);
        for (l, w) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let is_head = l + 1 == n_layers;
            for row in 0..fan_out {
                let log_std_row = is_head && row >= k + k * d;
                for _ in 0..fan_in {
                    let x = rng.random_range(-bound..bound);
                    theta.push(if log_std_row { 0.0 } else { x });
                }
            }
            for row in 0..fan_out {
                let x = rng.random_range(-bound..bound);
                theta.push(if is_head && row >= k + k * d { INIT_LOG_STD } else { x });
            }
        }
        debug_assert_eq!(theta.len(), arch.num_params());
        PolicyParams {
            arch: arch.clone(),
            norm: ObsNormalizer::identity(arch.input_dim),
            theta,
        }
    }

    pub fn from_theta(arch: &PolicyArch, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != arch.num_params() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, got {}",
                arch.num_params(),
                theta.len()
            )));
        }
        Ok(PolicyParams {
            arch: arch.clone(),
            norm: ObsNormalizer::identity(arch.input_dim),
            theta,
        })
    }

    pub fn with_normalizer(mut self, norm: ObsNormalizer) -> Result<Self> {
        if norm.mean.len() != self.arch.input_dim || norm.std.len() != self.arch.input_dim {
            return Err(Error::Checkpoint("normalizer does not match input_dim".into()));
        }
        if norm.std.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return Err(Error::Checkpoint("normalizer std must be positive".into()));
        }
        self.norm = norm;
        Ok(self)
    }

    pub fn normalizer(&self) -> &ObsNormalizer {
        &self.norm
    }

    pub fn arch(&self) -> &PolicyArch {
        &self.arch
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|x| x.is_finite())
    }

    fn forward(&self, obs: &[f64], s: &mut Scratch) {
        debug_assert_eq!(obs.len(), self.arch.input_dim);
        for (j, x) in s.acts[0].iter_mut().enumerate() {
            *x = (obs[j] - self.norm.mean[j]) / self.norm.std[j];
        }
        let n_layers = s.acts.len() - 1;
        let mut off = 0;
        for l in 0..n_layers {
            let (lo, hi) = s.acts.split_at_mut(l + 1);
            let (x, y) = (&lo[l], &mut hi[0]);
            let (n_in, n_out) = (x.len(), y.len());
            let weights = &self.theta[off..off + n_in * n_out];
            let bias = &self.theta[off + n_in * n_out..off + n_in * n_out + n_out];
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let z = bias[o] + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
                *yo = if l + 1 < n_layers { z.tanh() } else { z };
            }
            off += n_in * n_out + n_out;
        }
    }

    /// Mixture parameters for `obs`.
    pub fn head(&self, obs: &[f64]) -> GmmHead {
        let mut s = Scratch::new(&self.arch);
        self.forward(obs, &mut s);
        let (k, d) = (self.arch.n_modes, self.arch.action_dim);
        let out = s.acts.last().unwrap();
        GmmHead {
            logits: out[..k].to_vec(),
            means: out[k..k + k * d].to_vec(),
            log_stds: out[k + k * d..]
                .iter()
                .map(|x| x.clamp(LOG_STD_MIN, LOG_STD_MAX))
                .collect(),
        }
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> f64 {
        let mut s = Scratch::new(&self.arch);
        self.forward(obs, &mut s);
        self.head_log_prob(action, &mut s, false)
    }

    /// Log-likelihood of `action` from the head in `s`; optionally fills `s.head_grad`
    /// with its gradient with respect to the raw head outputs.
    fn head_log_prob(&self, action: &[f64], s: &mut Scratch, want_grad: bool) -> f64 {
        let (k, d) = (self.arch.n_modes, self.arch.action_dim);
        let out = s.acts.last().unwrap();
        let logits = &out[..k];
        let means = &out[k..k + k * d];
        let raw_ls = &out[k + k * d..];
        let lse_logits = log_sum_exp(logits);
        for m in 0..k {
            let mut c = logits[m] - lse_logits;
            for j in 0..d {
                let ls = raw_ls[m * d + j].clamp(LOG_STD_MIN, LOG_STD_MAX);
                let z = (action[j] - means[m * d + j]) * (-ls).exp();
                c -= 0.5 * z * z + ls + HALF_LN_2PI;
            }
            s.comp[m] = c;
        }
        let lp = log_sum_exp(&s.comp);
        if want_grad {
            let g = &mut s.head_grad;
            for m in 0..k {
                let resp = (s.comp[m] - lp).exp();
                let prior = (logits[m] - lse_logits).exp();
                g[m] = resp - prior;
                for j in 0..d {
                    let raw = raw_ls[m * d + j];
                    let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                    let inv_var = (-2.0 * ls).exp();
                    let diff = action[j] - means[m * d + j];
                    g[k + m * d + j] = resp * diff * inv_var;
                    g[k + k * d + m * d + j] = if raw > LOG_STD_MIN && raw < LOG_STD_MAX {
                        resp * (diff * diff * inv_var - 1.0)
                    } else {
                        0.0
                    };
                }
            }
        }
        lp
    }

    /// Adds `scale * d(head)/d(theta) . head_grad` into `grad`.
    fn backward(&self, s: &mut Scratch, scale: f64, grad: &mut [f64]) {
        let n_layers = s.acts.len() - 1;
        let widths: Vec<usize> = s.acts.iter().map(|a| a.len()).collect();
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += widths[l] * widths[l + 1] + widths[l + 1];
        }
        let last = n_layers;
        for (dst, src) in s.deltas[last].iter_mut().zip(&s.head_grad) {
            *dst = scale * src;
        }
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let off = offsets[l];
            let (dlo, dhi) = s.deltas.split_at_mut(l + 1);
            let delta = &dhi[0];
            let x = &s.acts[l];
            let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for o in 0..n_out {
                let dy = delta[o];
                if dy == 0.0 {
                    continue;
                }
                gb[o] += dy;
                for (g, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                    *g += dy * xi;
                }
            }
            if l > 0 {
                let weights = &self.theta[off..off + n_in * n_out];
                let prev = &mut dlo[l];
                prev.fill(0.0);
                for o in 0..n_out {
                    let dy = delta[o];
                    if dy == 0.0 {
                        continue;
                    }
                    for (p, w) in prev.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                        *p += dy * w;
                    }
                }
                for (p, h) in prev.iter_mut().zip(x) {
                    *p *= 1.0 - h * h;
                }
            }
        }
    }

    /// `-(1/b) sum_i w_i log pi(a_i | s_i)` and its exact gradient.
    pub fn weighted_nll_and_grad(&self, batch: &[BatchItem<'_>]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.theta.len()];
        let mut s = Scratch::new(&self.arch);
        let loss = self.weighted_nll_into(batch, &mut s, &mut grad);
        (loss, grad)
    }

    /// As [`Self::weighted_nll_and_grad`], writing into caller buffers.
    pub fn weighted_nll_into(&self, batch: &[BatchItem<'_>], s: &mut Scratch, grad: &mut [f64]) -> f64 {
        assert!(!batch.is_empty(), "empty batch");
        grad.fill(0.0);
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for item in batch {
            if item.weight == 0.0 {
                continue;
            }
            self.forward(item.obs, s);
            let lp = self.head_log_prob(item.action, s, true);
            loss -= scale * item.weight * lp;
            self.backward(s, -scale * item.weight, grad);
        }
        loss
    }

    /// Mode draw then diagonal normal draw, clamped to the action box. With
    /// `deterministic`, the mean of the highest-weight mode.
    pub fn sample_action(&self, obs: &[f64], rng: &mut impl Rng, deterministic: bool) -> EnvAction {
        let a = self.sample_raw(obs, rng, deterministic);
        EnvAction::from_slice(&a)
    }

    /// Mean of the highest-weight mode, clamped. Used for evaluation.
    pub fn mode_action(&self, obs: &[f64]) -> EnvAction {
        let head = self.head(obs);
        let d = self.arch.action_dim;
        let mode = argmax(&head.logits);
        let a: Vec<f64> = head.means[mode * d..(mode + 1) * d].to_vec();
        EnvAction::from_slice(&a)
    }

    pub fn sample_raw(&self, obs: &[f64], rng: &mut impl Rng, deterministic: bool) -> Vec<f64> {
        let head = self.head(obs);
        let (k, d) = (self.arch.n_modes, self.arch.action_dim);
        let mode = if deterministic {
            argmax(&head.logits)
        } else {
            let lse = log_sum_exp(&head.logits);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = k - 1;
            for m in 0..k {
                acc += (head.logits[m] - lse).exp();
                if u < acc {
                    chosen = m;
                    break;
                }
            }
            chosen
        };
        (0..d)
            .map(|j| {
                let mu = head.means[mode * d + j];
                let a = if deterministic {
                    mu
                } else {
                    let z: f64 = StandardNormal.sample(rng);
                    mu + head.log_stds[mode * d + j].exp() * z
                };
                a.clamp(-1.0, 1.0)
            })
            .collect()
    }

    /// Header: little-endian u64 byte length, then architecture and
    /// normalizer as JSON; body: parameters as little-endian f64 in layout order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(512 + 8 * self.theta.len());
        let header = CheckpointHeader {
            arch: self.arch.clone(),
            norm: self.norm.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&header);
        for x in &self.theta {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        bytes
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = || Error::Checkpoint("truncated checkpoint".into());
        let len = u64::from_le_bytes(bytes.get(..8).ok_or_else(short)?.try_into().unwrap()) as usize;
        let arch_end = 8usize.checked_add(len).ok_or_else(short)?;
        let header: CheckpointHeader = serde_json::from_slice(bytes.get(8..arch_end).ok_or_else(short)?)?;
        let arch = header.arch;
        arch.validate()?;
        let body = &bytes[arch_end..];
        if body.len() != 8 * arch.num_params() {
            return Err(Error::Checkpoint(format!(
                "body has {} bytes, expected {}",
                body.len(),
                8 * arch.num_params()
            )));
        }
        let theta = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_theta(&arch, theta)?.with_normalizer(header.norm)
    }
}

/// One weighted training example.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub obs: &'a [f64],
    pub action: &'a [f64],
    pub weight: f64,
}
