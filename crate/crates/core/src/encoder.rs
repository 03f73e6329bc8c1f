//! Permutation-invariant point cloud classifier: a shared per-point MLP
//! (3 → h1 → h2, ReLU), column-wise max-pool over points, and a linear head.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, tags, Rng};
use crate::tensorgrad::{Tape, Tensor, Var};

pub const MIN_POINTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub label: Option<usize>,
    pub source_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, label: Option<usize>, source_id: impl Into<String>) -> Self {
        PointCloud {
            points,
            label,
            source_id: source_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> [f64; 3] {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        c.map(|v| v / n)
    }

    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(|p| norm(p)).fold(0.0, f64::max)
    }

    pub fn bitwise_eq(&self, other: &PointCloud) -> bool {
        self.label == other.label
            && self.points.len() == other.points.len()
            && self
                .points
                .iter()
                .zip(&other.points)
                .all(|(a, b)| (0..3).all(|i| a[i].to_bits() == b[i].to_bits()))
    }
}

pub(crate) fn norm(p: &[f64; 3]) -> f64 {
    libm::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2])
}

/// Result of [`normalize_cloud`]; `degenerate` is set when every point
/// coincided and no scaling was applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub cloud: PointCloud,
    pub degenerate: bool,
}

/// Centers the cloud on its centroid and scales the farthest point to norm 1.
pub fn normalize_cloud(cloud: &PointCloud) -> Result<Normalized> {
    if cloud.is_empty() {
        return Err(Error::Validation(format!("cloud {} has no points", cloud.source_id)));
    }
    let c = cloud.centroid();
    let mut out = cloud.clone();
    for p in &mut out.points {
        for a in 0..3 {
            p[a] -= c[a];
        }
    }
    let scale = out.max_norm();
    if scale <= 1e-12 {
        log::warn!("cloud {} is degenerate (all points coincide); left unscaled", cloud.source_id);
        out.points.iter_mut().for_each(|p| *p = [0.0; 3]);
        return Ok(Normalized {
            cloud: out,
            degenerate: true,
        });
    }
    for p in &mut out.points {
        for v in p.iter_mut() {
            *v /= scale;
        }
    }
    Ok(Normalized {
        cloud: out,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub h1: usize,
    pub h2: usize,
    pub classes: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        EncoderDims {
            h1: 64,
            h2: 128,
            classes: 5,
        }
    }
}

impl EncoderDims {
    pub fn validate(&self) -> Result<()> {
        if self.h1 < 4 || self.h2 < 4 {
            return Err(Error::Parameter(format!(
                "hidden widths must be >= 4, got h1={} h2={}",
                self.h1, self.h2
            )));
        }
        if self.classes < 2 {
            return Err(Error::Parameter(format!("need >= 2 classes, got {}", self.classes)));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        let (h1, h2, c) = (self.h1, self.h2, self.classes);
        3 * h1 + h1 + h1 * h2 + h2 + h2 * c + c
    }
}

/// Which tensors receive gradients during fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FineTuneScope {
    #[default]
    Full,
    HeadOnly,
}

/// The per-point MLP that is carried across tasks by a pretrained checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub body: Body,
    pub head: Head,
}

fn uniform_tensor(rng: &mut Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = 1.0 / libm::sqrt(fan_in as f64);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape matches data").with_grad()
}

impl Body {
    pub fn init(seed: u64, h1: usize, h2: usize) -> Self {
        let mut rng = seed::rng(seed, tags::INIT, 0);
        Body {
            w1: uniform_tensor(&mut rng, vec![3, h1], 3),
            b1: uniform_tensor(&mut rng, vec![h1], 3),
            w2: uniform_tensor(&mut rng, vec![h1, h2], h1),
            b2: uniform_tensor(&mut rng, vec![h2], h1),
        }
    }

    pub fn h1(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn h2(&self) -> usize {
        self.w2.shape()[1]
    }

    pub fn named(&self) -> [(&'static str, &Tensor); 4] {
        [("body.w1", &self.w1), ("body.b1", &self.b1), ("body.w2", &self.w2), ("body.b2", &self.b2)]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn bitwise_eq(&self, other: &Body) -> bool {
        self.named().iter().zip(other.named()).all(|((_, a), (_, b))| a.bitwise_eq(b))
    }

    /// Builds a body from stored tensors, checking the 3 → h1 → h2 layout.
    pub fn from_tensors(w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Result<Self> {
        let ok = matches!(w1.shape(), [3, _])
            && b1.shape() == [w1.shape()[1]]
            && w2.shape().len() == 2
            && w2.shape()[0] == w1.shape()[1]
            && b2.shape() == [w2.shape()[1]];
        if !ok {
            return Err(Error::dim("body", w1.shape(), w2.shape()));
        }
        let mut body = Body { w1, b1, w2, b2 };
        body.tensors_mut().into_iter().for_each(|t| t.set_requires_grad(true));
        Ok(body)
    }
}

impl Head {
    pub fn init(seed: u64, h2: usize, classes: usize) -> Self {
        let mut rng = seed::rng(seed, tags::HEAD_INIT, classes as u64);
        Head {
            w: uniform_tensor(&mut rng, vec![h2, classes], h2),
            b: uniform_tensor(&mut rng, vec![classes], h2),
        }
    }

    pub fn classes(&self) -> usize {
        self.w.shape()[1]
    }
}

/// Deterministic initialization with U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn init_params(seed: u64, h1: usize, h2: usize, classes: usize) -> Result<EncoderParams> {
    EncoderDims { h1, h2, classes }.validate()?;
    Ok(EncoderParams {
        body: Body::init(seed, h1, h2),
        head: Head::init(seed, h2, classes),
    })
}

/// Tape handles for one bound parameter set.
#[derive(Debug, Clone, Copy)]
pub struct Bound {
    vars: [Var; 6],
}

impl EncoderParams {
    pub fn with_body(body: Body, head_seed: u64, classes: usize) -> Result<Self> {
        EncoderDims {
            h1: body.h1(),
            h2: body.h2(),
            classes,
        }
        .validate()?;
        let head = Head::init(head_seed, body.h2(), classes);
        Ok(EncoderParams { body, head })
    }

    pub fn dims(&self) -> EncoderDims {
        EncoderDims {
            h1: self.body.h1(),
            h2: self.body.h2(),
            classes: self.head.classes(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn named(&self) -> [(&'static str, &Tensor); 6] {
        let [a, b, c, d] = self.body.named();
        [a, b, c, d, ("head.w", &self.head.w), ("head.b", &self.head.b)]
    }

    pub fn tensors(&self) -> [&Tensor; 6] {
        self.named().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        let [a, b, c, d] = self.body.tensors_mut();
        [a, b, c, d, &mut self.head.w, &mut self.head.b]
    }

    pub fn set_scope(&mut self, scope: FineTuneScope) {
        let body_on = scope == FineTuneScope::Full;
        self.body.tensors_mut().into_iter().for_each(|t| t.set_requires_grad(body_on));
        self.head.w.set_requires_grad(true);
        self.head.b.set_requires_grad(true);
    }

    /// Detached deep copy used as the frozen old policy.
    pub fn snapshot(&self) -> EncoderParams {
        let mut s = self.clone();
        s.tensors_mut().into_iter().for_each(|t| t.set_requires_grad(false));
        s
    }

    /// Copies values back from a snapshot; shapes must match.
    pub fn restore(&mut self, snapshot: &EncoderParams) -> Result<()> {
        for (dst, src) in self.tensors_mut().into_iter().zip(snapshot.tensors()) {
            if dst.shape() != src.shape() {
                return Err(Error::dim("restore", dst.shape(), src.shape()));
            }
        }
        for (dst, src) in self.tensors_mut().into_iter().zip(snapshot.tensors()) {
            dst.copy_values_from(src)?;
        }
        Ok(())
    }

    pub fn bitwise_eq(&self, other: &EncoderParams) -> bool {
        self.tensors().iter().zip(other.tensors()).all(|(a, b)| a.bitwise_eq(b))
    }

    pub fn zero_grad(&mut self) {
        self.tensors_mut().into_iter().for_each(|t| t.zero_grad());
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.tensors().map(|t| tape.param(t)),
        }
    }

    /// Moves gradients accumulated on `tape` into the parameter tensors.
    pub fn collect_grads(&mut self, tape: &Tape, bound: &Bound) -> Result<()> {
        for (t, v) in self.tensors_mut().into_iter().zip(bound.vars) {
            if let Some(g) = tape.grad(v) {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Records the batched forward pass and returns logits `[clouds × classes]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, clouds: &[&PointCloud]) -> Result<Var> {
        if clouds.is_empty() {
            return Err(Error::Validation("forward on an empty batch".into()));
        }
        let [w1, b1, w2, b2, hw, hb] = bound.vars;
        if tape.shape(w1).first() != Some(&3) {
            return Err(Error::dim("classify", tape.shape(w1), &[3]));
        }
        let total: usize = clouds.iter().map(|c| c.len()).sum();
        let mut xs = Vec::with_capacity(total * 3);
        let mut offsets = Vec::with_capacity(clouds.len() + 1);
        offsets.push(0);
        for c in clouds {
            if c.is_empty() {
                return Err(Error::Validation(format!("cloud {} has no points", c.source_id)));
            }
            xs.extend(c.points.iter().flatten());
            offsets.push(offsets.last().unwrap() + c.len());
        }
        let x = tape.constant(vec![total, 3], xs)?;
        let h = tape.matmul(x, w1)?;
        let h = tape.add_bias(h, b1)?;
        let h = tape.relu(h);
        let h = tape.matmul(h, w2)?;
        let h = tape.add_bias(h, b2)?;
        let h = tape.relu(h);
        let pooled = tape.segment_max(h, &offsets)?;
        let logits = tape.matmul(pooled, hw)?;
        tape.add_bias(logits, hb)
    }

    /// Logits for a batch, without keeping the tape.
    pub fn logits_batch(&self, clouds: &[&PointCloud]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let logits = self.forward(&mut tape, &bound, clouds)?;
        let c = self.head.classes();
        let rows = tape.value(logits).chunks(c).map(|r| r.to_vec()).collect();
        Ok(rows)
    }

    /// Class probabilities per cloud.
    pub fn probabilities(&self, clouds: &[&PointCloud]) -> Result<Vec<Vec<f64>>> {
        let mut rows = self.logits_batch(clouds)?;
        for r in &mut rows {
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite logits".into()));
            }
            crate::tensorgrad::softmax_row(r);
        }
        Ok(rows)
    }

    /// Argmax predictions; ties resolve to the lowest class index.
    pub fn predict(&self, clouds: &[&PointCloud]) -> Result<Vec<usize>> {
        Ok(self.logits_batch(clouds)?.iter().map(|r| argmax(r)).collect())
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Logits of a single cloud.
pub fn classify(params: &EncoderParams, cloud: &PointCloud) -> Result<Vec<f64>> {
    let mut rows = params.logits_batch(&[cloud])?;
    Ok(rows.pop().expect("one row per cloud"))
}
