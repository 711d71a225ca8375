//! Small fully-connected networks used for every learned component:
//! initiation-pose regressors, behavior-cloned skill policies, and binary
//! classifiers.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{from_axis_angle, to_axis_angle, AxisAngle6, Pose};
use crate::seed::rng_from;
use crate::sim::{Action, GripperCommand, Observation, WorldState};

/// Flat observation layout: gripper pose (6), gripper flag (1), then for each
/// object its world-frame pose (6), its pose in the gripper frame (6) and its
/// world-frame offset from the gripper (3). Optionally followed by the pose of
/// every later object in the frame of every earlier one (6 per pair), and a
/// stage one-hot. A scene-only layout keeps just the object world poses and
/// the pair relations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub n_objects: usize,
    #[serde(default)]
    pub stage_onehot: Option<usize>,
    #[serde(default)]
    pub relations: bool,
    #[serde(default)]
    pub scene_only: bool,
}

impl FeatureLayout {
    pub fn new(n_objects: usize) -> Self {
        FeatureLayout { n_objects, stage_onehot: None, relations: false, scene_only: false }
    }

    pub fn with_relations(n_objects: usize) -> Self {
        FeatureLayout { relations: true, ..FeatureLayout::new(n_objects) }
    }

    /// Object poses and pair relations only, no gripper state.
    pub fn scene(n_objects: usize) -> Self {
        FeatureLayout { relations: true, scene_only: true, ..FeatureLayout::new(n_objects) }
    }

    fn n_pairs(&self) -> usize {
        if self.relations {
            self.n_objects * self.n_objects.saturating_sub(1) / 2
        } else {
            0
        }
    }

    pub fn dim(&self) -> usize {
        let per_object = if self.scene_only { 6 } else { 15 };
        let gripper = if self.scene_only { 0 } else { 7 };
        gripper + per_object * self.n_objects + 6 * self.n_pairs() + self.stage_onehot.unwrap_or(0)
    }

    fn build(&self, ee: &Pose, closed: bool, objects: &[Pose], stage: usize) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.dim());
        if !self.scene_only {
            f.extend_from_slice(&to_axis_angle(ee).0);
            f.push(if closed { 1.0 } else { 0.0 });
        }
        let inv = ee.invert();
        let objects = &objects[..self.n_objects.min(objects.len())];
        for o in objects {
            f.extend_from_slice(&to_axis_angle(o).0);
            if !self.scene_only {
                f.extend_from_slice(&to_axis_angle(&inv.compose(o)).0);
                f.extend_from_slice(&crate::se3::sub(o.position, ee.position));
            }
        }
        if self.relations {
            for (i, a) in objects.iter().enumerate() {
                for b in &objects[i + 1..] {
                    f.extend_from_slice(&to_axis_angle(&a.relative(b)).0);
                }
            }
        }
        if let Some(n) = self.stage_onehot {
            f.extend((0..n).map(|k| if k == stage { 1.0 } else { 0.0 }));
        }
        f
    }

    pub fn observation(&self, obs: &Observation) -> Vec<f64> {
        self.build(&obs.ee_pose, obs.gripper_closed, &obs.object_pose_estimates, obs.stage_index)
    }

    /// Same layout from the true state.
    pub fn state(&self, state: &WorldState, stage: usize) -> Vec<f64> {
        self.build(&state.ee_pose, state.gripper_closed, &state.object_poses, stage)
    }
}

/// Tanh multilayer perceptron with a linear output layer. Parameters are
/// stored layer by layer, weights row-major followed by biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    #[serde(skip)]
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn n_params_for(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn new<R: Rng + ?Sized>(sizes: Vec<usize>, rng: &mut R) -> Mlp {
        let mut params = Vec::with_capacity(Mlp::n_params_for(&sizes));
        let n_layers = sizes.len() - 1;
        for (l, w) in sizes.windows(2).enumerate() {
            let (i, o) = (w[0], w[1]);
            // zero output layer: an untrained net predicts the target mean
            let a = if l + 1 == n_layers { 0.0 } else { (6.0 / (i + o) as f64).sqrt() };
            params.extend((0..i * o).map(|_| if a > 0.0 { rng.gen_range(-a..a) } else { 0.0 }));
            params.extend(std::iter::repeat(0.0).take(o));
        }
        Mlp { sizes, params }
    }

    pub fn zeros(sizes: Vec<usize>) -> Mlp {
        let n = Mlp::n_params_for(&sizes);
        Mlp { sizes, params: vec![0.0; n] }
    }

    pub fn n_in(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_out(&self) -> usize {
        *self.sizes.last().expect("mlp has layers")
    }

    /// Forward pass keeping every layer's activation (input first).
    fn forward_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let mut off = 0;
        let n_layers = self.sizes.len() - 1;
        for l in 0..n_layers {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + i * o];
            let b = &self.params[off + i * o..off + i * o + o];
            let a = &acts[l];
            let mut z: Vec<f64> = (0..o).map(|r| dot(&w[r * i..(r + 1) * i], a) + b[r]).collect();
            if l + 1 < n_layers {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
            off += i * o + o;
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_all(x).pop().expect("output layer")
    }

    /// Accumulates the parameter gradient for output gradient `g`.
    fn backward(&self, acts: &[Vec<f64>], mut g: Vec<f64>, grad: &mut [f64]) {
        let n_layers = self.sizes.len() - 1;
        let mut offs = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offs.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        for l in (0..n_layers).rev() {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let off = offs[l];
            let a = &acts[l];
            for r in 0..o {
                let gr = g[r];
                if gr != 0.0 {
                    let row = &mut grad[off + r * i..off + (r + 1) * i];
                    for (gw, av) in row.iter_mut().zip(a) {
                        *gw += gr * av;
                    }
                }
                grad[off + i * o + r] += gr;
            }
            if l > 0 {
                let w = &self.params[off..off + i * o];
                let mut prev = vec![0.0; i];
                for r in 0..o {
                    let gr = g[r];
                    if gr != 0.0 {
                        for (p, wv) in prev.iter_mut().zip(&w[r * i..(r + 1) * i]) {
                            *p += gr * wv;
                        }
                    }
                }
                for (p, av) in prev.iter_mut().zip(a) {
                    *p *= 1.0 - av * av;
                }
                g = prev;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// What the network outputs mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Head {
    /// Six axis-angle pose coordinates.
    Pose,
    /// Six delta coordinates and three gripper logits; `allowed` masks
    /// gripper classes absent from the training data.
    Bc { allowed: [bool; 3], limit_pos: f64, limit_rot: f64 },
    /// One logit.
    Binary,
    /// Squashed additive correction `scale * tanh(y)` on six delta coordinates.
    Residual { scale: [f64; 6] },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Full-data loss is recorded every this many epochs.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { hidden: vec![64, 64], epochs: 2000, lr: 1e-3, batch_size: 64, optimizer: Optimizer::Adam, seed: 0, checkpoint_every: 50 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub n_samples: usize,
    /// Mean minibatch loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Full-data loss at each checkpoint, starting before training.
    pub checkpoint_losses: Vec<f64>,
    pub final_loss: f64,
    #[serde(default)]
    pub phase: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Approximator {
    pub head: Head,
    pub net: Mlp,
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    /// Standardization of regression outputs (empty for classifiers).
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
    pub meta: TrainMeta,
}

/// One training target, already in network units where applicable.
#[derive(Clone, Debug)]
enum Target {
    Reg(Vec<f64>),
    Bc(Vec<f64>, usize),
    Bin(f64),
}

/// Per-column mean and standard deviation; columns with a deviation below
/// `floor` get `floor` instead, or 1 when `floor` is 0.
fn stats(rows: &[&[f64]], dim: usize, floor: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len().max(1) as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let std = var
        .into_iter()
        .map(|v| match v.sqrt() {
            s if s > floor.max(1e-9) => s,
            _ if floor > 0.0 => floor,
            _ => 1.0,
        })
        .collect();
    (mean, std)
}

fn standardize(x: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    x.iter().zip(mean).zip(std).map(|((v, m), s)| (v - m) / s).collect()
}

impl Approximator {
    pub fn n_in(&self) -> usize {
        self.net.n_in()
    }

    pub fn n_params(&self) -> usize {
        self.net.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.net.params
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.net.params.len() {
            return Err(Error::DimensionMismatch { expected: self.net.params.len(), got: p.len() });
        }
        self.net.params.copy_from_slice(p);
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_in() {
            return Err(Error::DimensionMismatch { expected: self.n_in(), got: x.len() });
        }
        Ok(())
    }

    /// Raw network output for a feature vector.
    pub fn predict_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.net.forward(&standardize(x, &self.in_mean, &self.in_std)))
    }

    fn destandardized(&self, y: &[f64]) -> [f64; 6] {
        std::array::from_fn(|k| y[k] * self.out_std[k] + self.out_mean[k])
    }

    pub fn predict_pose(&self, x: &[f64]) -> Result<Pose> {
        let y = self.predict_raw(x)?;
        Ok(from_axis_angle(&AxisAngle6(self.destandardized(&y))))
    }

    pub fn predict_action(&self, x: &[f64]) -> Result<Action> {
        let y = self.predict_raw(x)?;
        let Head::Bc { allowed, limit_pos, limit_rot } = &self.head else {
            return Err(Error::InvalidConfig("approximator is not a behavior-cloning policy".into()));
        };
        let delta = AxisAngle6(self.destandardized(&y));
        let mut best = None;
        for k in 0..3 {
            if allowed[k] && best.map_or(true, |b: usize| y[6 + k] > y[6 + b]) {
                best = Some(k);
            }
        }
        let gripper = GripperCommand::from_index(best.unwrap_or(GripperCommand::Hold.index()));
        Ok(Action { delta, gripper }.clamped(*limit_pos, *limit_rot))
    }

    pub fn predict_prob(&self, x: &[f64]) -> Result<f64> {
        let y = self.predict_raw(x)?;
        Ok(sigmoid(y[0]))
    }

    /// Residual delta for the residual head.
    pub fn predict_residual(&self, x: &[f64]) -> Result<[f64; 6]> {
        let y = self.predict_raw(x)?;
        let Head::Residual { scale } = &self.head else {
            return Err(Error::InvalidConfig("approximator is not a residual head".into()));
        };
        Ok(std::array::from_fn(|k| scale[k] * y[k].tanh()))
    }

    /// A zero-output residual sharing `base`'s input standardization.
    pub fn zero_residual(base: &Approximator, scale: [f64; 6]) -> Approximator {
        Approximator {
            head: Head::Residual { scale },
            net: Mlp::zeros(vec![base.n_in(), 6]),
            in_mean: base.in_mean.clone(),
            in_std: base.in_std.clone(),
            out_mean: Vec::new(),
            out_std: Vec::new(),
            meta: TrainMeta { phase: "residual".into(), ..TrainMeta::default() },
        }
    }

    /// Loss of one sample and its gradient with respect to the network output.
    fn sample_loss(&self, y: &[f64], t: &Target) -> (f64, Vec<f64>) {
        match t {
            Target::Reg(v) => {
                let g: Vec<f64> = y.iter().zip(v).map(|(a, b)| a - b).collect();
                (0.5 * dot(&g, &g), g)
            }
            Target::Bc(v, class) => {
                let allowed = match &self.head {
                    Head::Bc { allowed, .. } => *allowed,
                    _ => [true; 3],
                };
                let mut g = vec![0.0; 9];
                let mut loss = 0.0;
                for k in 0..6 {
                    g[k] = y[k] - v[k];
                    loss += 0.5 * g[k] * g[k];
                }
                let zmax = (0..3).filter(|k| allowed[*k]).map(|k| y[6 + k]).fold(f64::NEG_INFINITY, f64::max);
                let mut p = [0.0; 3];
                let mut s = 0.0;
                for k in 0..3 {
                    if allowed[k] {
                        p[k] = (y[6 + k] - zmax).exp();
                        s += p[k];
                    }
                }
                for k in 0..3 {
                    p[k] /= s;
                    if allowed[k] {
                        g[6 + k] = p[k] - if k == *class { 1.0 } else { 0.0 };
                    }
                }
                loss -= p[*class].max(1e-300).ln();
                (loss, g)
            }
            Target::Bin(label) => {
                let z = y[0];
                // log(1 + e^z) - label * z, stable in both tails
                let loss = z.max(0.0) + (-z.abs()).exp().ln_1p() - label * z;
                (loss, vec![sigmoid(z) - label])
            }
        }
    }

    fn data_loss(&self, xs: &[Vec<f64>], ts: &[Target]) -> f64 {
        let n = xs.len().max(1) as f64;
        xs.iter().zip(ts).map(|(x, t)| self.sample_loss(&self.net.forward(x), t).0).sum::<f64>() / n
    }

    /// Mean loss over standardized inputs and its parameter gradient.
    fn loss_and_grad(&self, xs: &[&Vec<f64>], ts: &[&Target]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.net.params.len()];
        let mut loss = 0.0;
        for (x, t) in xs.iter().zip(ts) {
            let acts = self.net.forward_all(x);
            let (l, g) = self.sample_loss(acts.last().expect("output"), t);
            loss += l;
            self.net.backward(&acts, g, &mut grad);
        }
        let n = xs.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (loss / n, grad)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_dims(xs: &[&[f64]]) -> Result<usize> {
    let Some(first) = xs.first() else {
        return Err(Error::InvalidDataset("no training samples".into()));
    };
    let d = first.len();
    for x in xs {
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite feature".into()));
        }
    }
    Ok(d)
}

/// Minibatch training of `approx` in place on already standardized inputs.
fn fit(approx: &mut Approximator, xs: &[Vec<f64>], ts: &[Target], cfg: &TrainConfig, phase: &str) {
    let mut rng = rng_from(cfg.seed ^ 0x5eed_0f_7a1e);
    let n_par = approx.net.params.len();
    let (mut m, mut v) = (vec![0.0; n_par], vec![0.0; n_par]);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut t = 0i32;
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let bs = cfg.batch_size.max(1);
    let every = cfg.checkpoint_every.max(1);
    let mut meta = TrainMeta { seed: cfg.seed, epochs: cfg.epochs, n_samples: xs.len(), phase: phase.into(), ..TrainMeta::default() };
    meta.checkpoint_losses.push(approx.data_loss(xs, ts));
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(bs) {
            let bx: Vec<&Vec<f64>> = chunk.iter().map(|&i| &xs[i]).collect();
            let bt: Vec<&Target> = chunk.iter().map(|&i| &ts[i]).collect();
            let (loss, grad) = approx.loss_and_grad(&bx, &bt);
            epoch_loss += loss;
            batches += 1;
            t += 1;
            let p = &mut approx.net.params;
            match cfg.optimizer {
                Optimizer::Sgd => p.iter_mut().zip(&grad).for_each(|(w, g)| *w -= cfg.lr * g),
                Optimizer::Adam => {
                    let c1 = 1.0 - b1.powi(t);
                    let c2 = 1.0 - b2.powi(t);
                    for k in 0..n_par {
                        m[k] = b1 * m[k] + (1.0 - b1) * grad[k];
                        v[k] = b2 * v[k] + (1.0 - b2) * grad[k] * grad[k];
                        p[k] -= cfg.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                    }
                }
            }
        }
        meta.loss_curve.push(epoch_loss / batches.max(1) as f64);
        if (epoch + 1) % every == 0 || epoch + 1 == cfg.epochs {
            meta.checkpoint_losses.push(approx.data_loss(xs, ts));
        }
    }
    meta.final_loss = *meta.checkpoint_losses.last().expect("initial checkpoint");
    approx.meta = meta;
}

fn new_net(n_in: usize, n_out: usize, cfg: &TrainConfig) -> Mlp {
    let mut sizes = vec![n_in];
    sizes.extend(&cfg.hidden);
    sizes.push(n_out);
    Mlp::new(sizes, &mut rng_from(cfg.seed))
}

/// Keeps near-constant regression targets from being blown up to unit scale,
/// where optimizer jitter would dominate.
const OUTPUT_STD_FLOOR: f64 = 1e-3;

fn regression_targets(rows: &[[f64; 6]]) -> (Vec<f64>, Vec<f64>) {
    let refs: Vec<&[f64]> = rows.iter().map(|r| &r[..]).collect();
    stats(&refs, 6, OUTPUT_STD_FLOOR)
}

pub fn train_pose_regressor(data: &[(Vec<f64>, Pose)], cfg: &TrainConfig) -> Result<Approximator> {
    let xs: Vec<&[f64]> = data.iter().map(|(x, _)| &x[..]).collect();
    let d = check_dims(&xs)?;
    let ys: Vec<[f64; 6]> = data.iter().map(|(_, p)| to_axis_angle(p).0).collect();
    let (in_mean, in_std) = stats(&xs, d, 0.0);
    let (out_mean, out_std) = regression_targets(&ys);
    let mut a = Approximator { head: Head::Pose, net: new_net(d, 6, cfg), in_mean, in_std, out_mean, out_std, meta: TrainMeta::default() };
    let sx: Vec<Vec<f64>> = xs.iter().map(|x| standardize(x, &a.in_mean, &a.in_std)).collect();
    let ts: Vec<Target> = ys.iter().map(|y| Target::Reg(standardize(y, &a.out_mean, &a.out_std))).collect();
    fit(&mut a, &sx, &ts, cfg, "pose");
    Ok(a)
}

/// Continues training a pose regressor on new pairs, keeping its
/// standardization so earlier predictions stay comparable.
pub fn refine_pose_regressor(base: &Approximator, data: &[(Vec<f64>, Pose)], cfg: &TrainConfig, phase: &str) -> Result<Approximator> {
    if base.head != Head::Pose {
        return Err(Error::InvalidConfig("not a pose regressor".into()));
    }
    let mut a = base.clone();
    if data.is_empty() {
        return Ok(a);
    }
    let xs: Vec<&[f64]> = data.iter().map(|(x, _)| &x[..]).collect();
    let d = check_dims(&xs)?;
    if d != a.n_in() {
        return Err(Error::DimensionMismatch { expected: a.n_in(), got: d });
    }
    let sx: Vec<Vec<f64>> = xs.iter().map(|x| standardize(x, &a.in_mean, &a.in_std)).collect();
    let ts: Vec<Target> =
        data.iter().map(|(_, p)| Target::Reg(standardize(&to_axis_angle(p).0, &a.out_mean, &a.out_std))).collect();
    fit(&mut a, &sx, &ts, cfg, phase);
    Ok(a)
}

pub fn train_bc_policy(data: &[(Vec<f64>, Action)], cfg: &TrainConfig, limit_pos: f64, limit_rot: f64) -> Result<Approximator> {
    let xs: Vec<&[f64]> = data.iter().map(|(x, _)| &x[..]).collect();
    let d = check_dims(&xs)?;
    let ys: Vec<[f64; 6]> = data.iter().map(|(_, a)| a.delta.0).collect();
    let mut allowed = [false; 3];
    for (_, a) in data {
        allowed[a.gripper.index()] = true;
    }
    let (in_mean, in_std) = stats(&xs, d, 0.0);
    let (out_mean, out_std) = regression_targets(&ys);
    let mut a = Approximator {
        head: Head::Bc { allowed, limit_pos, limit_rot },
        net: new_net(d, 9, cfg),
        in_mean,
        in_std,
        out_mean,
        out_std,
        meta: TrainMeta::default(),
    };
    let sx: Vec<Vec<f64>> = xs.iter().map(|x| standardize(x, &a.in_mean, &a.in_std)).collect();
    let ts: Vec<Target> =
        data.iter().zip(&ys).map(|((_, act), y)| Target::Bc(standardize(y, &a.out_mean, &a.out_std), act.gripper.index())).collect();
    fit(&mut a, &sx, &ts, cfg, "bc");
    Ok(a)
}

pub fn train_binary_classifier(data: &[(Vec<f64>, bool)], cfg: &TrainConfig) -> Result<Approximator> {
    let xs: Vec<&[f64]> = data.iter().map(|(x, _)| &x[..]).collect();
    let d = check_dims(&xs)?;
    let pos = data.iter().filter(|(_, l)| *l).count();
    if pos == 0 || pos == data.len() {
        return Err(Error::DegenerateLabels(format!("{} samples, {} positive", data.len(), pos)));
    }
    let (in_mean, in_std) = stats(&xs, d, 0.0);
    let mut a = Approximator { head: Head::Binary, net: new_net(d, 1, cfg), in_mean, in_std, out_mean: Vec::new(), out_std: Vec::new(), meta: TrainMeta::default() };
    let sx: Vec<Vec<f64>> = xs.iter().map(|x| standardize(x, &a.in_mean, &a.in_std)).collect();
    let ts: Vec<Target> = data.iter().map(|(_, l)| Target::Bin(if *l { 1.0 } else { 0.0 })).collect();
    fit(&mut a, &sx, &ts, cfg, "binary");
    Ok(a)
}
