//! Dueling Q-network: a two-layer ReLU trunk feeding a scalar value head and
//! a per-action advantage head, combined as `Q = V + (A - mean A)`.
//!
//! All parameters live in one flat vector so that the optimizer, target
//! syncing, checkpointing and finite-difference checks can treat them
//! uniformly. Layout, row-major:
//!
//! ```text
//! W1 [h1 x in] | b1 [h1] | W2 [h2 x h1] | b2 [h2] | Wv [h2] | bv [1] | Wa [A x h2] | ba [A]
//! ```

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use rand::Rng;

use crate::error::{LinkError, Result};

const CHECKPOINT_MAGIC: &str = "v2vlink-qnet";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetDims {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub actions: usize,
    /// Without the value head the advantage head is read directly as Q.
    pub dueling: bool,
}

impl NetDims {
    pub fn new(input: usize, actions: usize) -> Self {
        Self {
            input,
            hidden1: 32,
            hidden2: 32,
            actions,
            dueling: true,
        }
    }

    fn layout(&self) -> Layout {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let w1 = take(self.hidden1 * self.input);
        let b1 = take(self.hidden1);
        let w2 = take(self.hidden2 * self.hidden1);
        let b2 = take(self.hidden2);
        let wv = take(self.hidden2);
        let bv = take(1);
        let wa = take(self.actions * self.hidden2);
        let ba = take(self.actions);
        Layout {
            w1,
            b1,
            w2,
            b2,
            wv,
            bv,
            wa,
            ba,
            len: at,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().len
    }
}

#[derive(Debug, Clone)]
struct Layout {
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    wv: Range<usize>,
    bv: Range<usize>,
    wa: Range<usize>,
    ba: Range<usize>,
    len: usize,
}

/// Named parameter blocks, for per-layer reporting.
pub const BLOCK_NAMES: [&str; 8] = ["w1", "b1", "w2", "b2", "wv", "bv", "wa", "ba"];

#[derive(Debug, Clone, PartialEq)]
pub struct DuelingNet {
    dims: NetDims,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for backprop.
#[derive(Debug, Clone)]
pub struct Forward {
    pub z1: Vec<f64>,
    pub h1: Vec<f64>,
    pub z2: Vec<f64>,
    pub h2: Vec<f64>,
    pub value: f64,
    pub advantages: Vec<f64>,
    pub q: Vec<f64>,
}

/// Four independent accumulators so the compiler can keep the lanes busy.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += a * x`
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter()
        .zip(w.chunks_exact(x.len()))
        .map(|(bi, row)| bi + dot(row, x))
        .collect()
}

impl DuelingNet {
    /// Fan-in scaled uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(dims: NetDims, rng: &mut R) -> Self {
        let layout = dims.layout();
        let mut params = vec![0.0; layout.len];
        let mut fill = |range: Range<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.random_range(-bound..bound);
            }
        };
        fill(layout.w1, dims.input);
        fill(layout.w2, dims.hidden1);
        fill(layout.wv, dims.hidden2);
        fill(layout.wa, dims.hidden2);
        Self { dims, params }
    }

    pub fn from_params(dims: NetDims, params: Vec<f64>) -> Result<Self> {
        if params.len() != dims.param_count() {
            return Err(LinkError::Checkpoint(format!(
                "expected {} parameters, got {}",
                dims.param_count(),
                params.len()
            )));
        }
        Ok(Self { dims, params })
    }

    pub fn dims(&self) -> NetDims {
        self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Parameter ranges in [`BLOCK_NAMES`] order.
    pub fn blocks(&self) -> Vec<(&'static str, Range<usize>)> {
        let l = self.dims.layout();
        BLOCK_NAMES
            .into_iter()
            .zip([l.w1, l.b1, l.w2, l.b2, l.wv, l.bv, l.wa, l.ba])
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Forward {
        assert_eq!(x.len(), self.dims.input, "state vector has wrong dimension");
        let l = self.dims.layout();
        let p = &self.params;
        let z1 = affine(&p[l.w1], &p[l.b1], x);
        let h1: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
        let z2 = affine(&p[l.w2], &p[l.b2], &h1);
        let h2: Vec<f64> = z2.iter().map(|v| v.max(0.0)).collect();
        let advantages = affine(&p[l.wa], &p[l.ba], &h2);
        let (value, q) = if self.dims.dueling {
            let v = affine(&p[l.wv], &p[l.bv], &h2)[0];
            let mean = advantages.iter().sum::<f64>() / advantages.len() as f64;
            (v, advantages.iter().map(|a| v + a - mean).collect())
        } else {
            (0.0, advantages.clone())
        };
        Forward {
            z1,
            h1,
            z2,
            h2,
            value,
            advantages,
            q,
        }
    }

    pub fn q_values(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).q
    }

    /// Greedy action, lowest index on ties.
    pub fn greedy(&self, x: &[f64]) -> usize {
        argmax(&self.q_values(x))
    }

    /// Mean squared TD error over the batch and its gradient.
    pub fn loss_and_grad(&self, states: &[&[f64]], actions: &[usize], targets: &[f64]) -> (f64, Vec<f64>) {
        assert!(states.len() == actions.len() && actions.len() == targets.len());
        let b = states.len() as f64;
        let d = self.dims;
        let l = d.layout();
        let p = &self.params;
        let mut grad = vec![0.0; l.len];
        let mut loss = 0.0;
        for ((x, &act), &y) in states.iter().zip(actions).zip(targets) {
            let f = self.forward(x);
            let err = f.q[act] - y;
            loss += err * err;
            let g = 2.0 * err / b;

            // dL/dA_j, and dL/dV when dueling
            let mut d_adv = vec![0.0; d.actions];
            if d.dueling {
                let share = g / d.actions as f64;
                d_adv.iter_mut().for_each(|v| *v = -share);
                d_adv[act] += g;
                for (gw, h) in grad[l.wv.clone()].iter_mut().zip(&f.h2) {
                    *gw += g * h;
                }
                grad[l.bv.start] += g;
            } else {
                d_adv[act] = g;
            }

            let mut d_h2 = vec![0.0; d.hidden2];
            if d.dueling {
                for (dh, w) in d_h2.iter_mut().zip(&p[l.wv.clone()]) {
                    *dh += g * w;
                }
            }
            for (j, da) in d_adv.iter().enumerate() {
                if *da == 0.0 {
                    continue;
                }
                let row = l.wa.start + j * d.hidden2..l.wa.start + (j + 1) * d.hidden2;
                axpy(&mut grad[row.clone()], *da, &f.h2);
                axpy(&mut d_h2, *da, &p[row]);
                grad[l.ba.start + j] += da;
            }

            let d_z2: Vec<f64> = d_h2
                .iter()
                .zip(&f.z2)
                .map(|(dh, z)| if *z > 0.0 { *dh } else { 0.0 })
                .collect();
            let mut d_h1 = vec![0.0; d.hidden1];
            for (i, dz) in d_z2.iter().enumerate() {
                if *dz == 0.0 {
                    continue;
                }
                let row = l.w2.start + i * d.hidden1..l.w2.start + (i + 1) * d.hidden1;
                axpy(&mut grad[row.clone()], *dz, &f.h1);
                axpy(&mut d_h1, *dz, &p[row]);
                grad[l.b2.start + i] += dz;
            }

            for (i, (dh, z)) in d_h1.iter().zip(&f.z1).enumerate() {
                if *z <= 0.0 {
                    continue;
                }
                let row = l.w1.start + i * d.input;
                axpy(&mut grad[row..row + d.input], *dh, x);
                grad[l.b1.start + i] += dh;
            }
        }
        (loss / b, grad)
    }

    pub fn loss(&self, states: &[&[f64]], actions: &[usize], targets: &[f64]) -> f64 {
        let total: f64 = states
            .iter()
            .zip(actions)
            .zip(targets)
            .map(|((x, &a), &y)| {
                let e = self.q_values(x)[a] - y;
                e * e
            })
            .sum();
        total / states.len() as f64
    }

    /// Text checkpoint: header line, dims line, then one line per block.
    pub fn to_checkpoint(&self) -> String {
        let d = self.dims;
        let mut out = format!("{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}\n");
        let _ = writeln!(
            out,
            "dims {} {} {} {} {}",
            d.input,
            d.hidden1,
            d.hidden2,
            d.actions,
            u8::from(d.dueling)
        );
        for (name, range) in self.blocks() {
            let _ = write!(out, "{name}");
            for v in &self.params[range] {
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |msg: String| LinkError::Checkpoint(msg);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty checkpoint".into()))?;
        let expected = format!("{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}");
        if header.trim() != expected {
            return Err(bad(format!("unsupported header `{header}`")));
        }
        let dims_line = lines.next().ok_or_else(|| bad("missing dims line".into()))?;
        let fields: Vec<&str> = dims_line.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != "dims" {
            return Err(bad(format!("malformed dims line `{dims_line}`")));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("dims: {e}")));
        let dims = NetDims {
            input: num(fields[1])?,
            hidden1: num(fields[2])?,
            hidden2: num(fields[3])?,
            actions: num(fields[4])?,
            dueling: num(fields[5])? != 0,
        };
        let mut params = Vec::with_capacity(dims.param_count());
        let blocks = DuelingNet {
            dims,
            params: Vec::new(),
        }
        .blocks();
        for (name, range) in blocks {
            let line = lines.next().ok_or_else(|| bad(format!("missing block {name}")))?;
            let mut it = line.split_whitespace();
            if it.next() != Some(name) {
                return Err(bad(format!("expected block {name}")));
            }
            let before = params.len();
            for tok in it {
                params.push(tok.parse::<f64>().map_err(|e| bad(format!("{name}: {e}")))?);
            }
            if params.len() - before != range.len() {
                return Err(bad(format!(
                    "block {name} has {} values, expected {}",
                    params.len() - before,
                    range.len()
                )));
            }
        }
        Self::from_params(dims, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint()).map_err(|e| LinkError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LinkError::io(path, e))?;
        Self::from_checkpoint(&text)
    }
}

/// Per-block agreement between the analytic gradient and central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub block: &'static str,
    /// `|g - g_fd| / max(|g|, |g_fd|)`, or the absolute gap when both vanish.
    pub rel_error: f64,
}

pub fn gradient_check(
    net: &DuelingNet,
    states: &[&[f64]],
    actions: &[usize],
    targets: &[f64],
    h: f64,
) -> Vec<BlockCheck> {
    let (_, analytic) = net.loss_and_grad(states, actions, targets);
    let mut probe = net.clone();
    net.blocks()
        .into_iter()
        .map(|(block, range)| {
            let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
            for i in range {
                let orig = probe.params[i];
                probe.params[i] = orig + h;
                let up = probe.loss(states, actions, targets);
                probe.params[i] = orig - h;
                let down = probe.loss(states, actions, targets);
                probe.params[i] = orig;
                let fd = (up - down) / (2.0 * h);
                diff += (analytic[i] - fd).powi(2);
                na += analytic[i].powi(2);
                nf += fd.powi(2);
            }
            let scale = na.sqrt().max(nf.sqrt());
            let rel_error = if scale < 1e-10 { diff.sqrt() } else { diff.sqrt() / scale };
            BlockCheck { block, rel_error }
        })
        .collect()
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Frozen copy of the evaluation network, refreshed on sync.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetNet(DuelingNet);

impl TargetNet {
    pub fn from_net(net: &DuelingNet) -> Self {
        Self(net.clone())
    }

    pub fn net(&self) -> &DuelingNet {
        &self.0
    }

    pub fn q_values(&self, x: &[f64]) -> Vec<f64> {
        self.0.q_values(x)
    }
}

/// Copies the evaluation parameters into the target.
pub fn sync_target(net: &DuelingNet, target: &mut TargetNet) {
    target.0.dims = net.dims;
    target.0.params.clone_from(&net.params);
}
