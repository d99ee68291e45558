//! Synthetic convex learners.
//!
//! Each learner draws its home data from a Gaussian whose mean is shifted by
//! `heterogeneity` along a learner-specific direction, which makes local
//! gradients disagree. Local training is deterministic full-batch gradient
//! descent unless a minibatch size is configured.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{MelError, Result};
use crate::orchestrator::LearnerBackend;
use crate::schedule::equal_split;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    /// Least squares, `F = 1/(2n) sum (x.w - y)^2`.
    Quadratic,
    /// Binary cross-entropy on `sigmoid(x.w)`.
    Logistic,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Quadratic => f.write_str("quadratic"),
            TaskKind::Logistic => f.write_str("logistic"),
        }
    }
}

impl FromStr for TaskKind {
    type Err = MelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "quadratic" => Ok(TaskKind::Quadratic),
            "logistic" => Ok(TaskKind::Logistic),
            other => Err(MelError::Config(format!(
                "unknown task kind {other:?}, expected \"quadratic\" or \"logistic\""
            ))),
        }
    }
}

/// Row-major feature matrix with targets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(dim: usize) -> Self {
        Dataset {
            dim,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn from_rows(dim: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != dim * y.len() {
            return Err(MelError::InvalidParams(format!(
                "feature buffer of {} values does not match {} rows of dim {dim}",
                x.len(),
                y.len()
            )));
        }
        Ok(Dataset { dim, x, y })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> (&[f64], f64) {
        (&self.x[i * self.dim..(i + 1) * self.dim], self.y[i])
    }

    pub fn push(&mut self, features: &[f64], target: f64) {
        debug_assert_eq!(features.len(), self.dim);
        self.x.extend_from_slice(features);
        self.y.push(target);
    }

    pub fn concat<'a>(dim: usize, parts: impl IntoIterator<Item = &'a Dataset>) -> Dataset {
        let mut out = Dataset::new(dim);
        for p in parts {
            out.x.extend_from_slice(&p.x);
            out.y.extend_from_slice(&p.y);
        }
        out
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset::new(self.dim);
        for &i in indices {
            let (x, y) = self.row(i);
            out.push(x, y);
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl TaskKind {
    /// Mean loss over `data`; zero for an empty set.
    pub fn loss(&self, w: &[f64], data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let total: f64 = (0..data.len())
            .map(|i| {
                let (x, y) = data.row(i);
                self.sample_loss(dot(x, w), y)
            })
            .sum();
        total / data.len() as f64
    }

    /// Loss of one sample with prediction `z = x.w`.
    pub fn sample_loss(&self, z: f64, y: f64) -> f64 {
        match self {
            TaskKind::Quadratic => 0.5 * (z - y) * (z - y),
            TaskKind::Logistic => softplus(z) - y * z,
        }
    }

    pub fn gradient(&self, w: &[f64], data: &Dataset) -> Vec<f64> {
        let mut g = vec![0.0; w.len()];
        if data.is_empty() {
            return g;
        }
        for i in 0..data.len() {
            let (x, y) = data.row(i);
            let z = dot(x, w);
            let r = match self {
                TaskKind::Quadratic => z - y,
                TaskKind::Logistic => sigmoid(z) - y,
            };
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += r * xj;
            }
        }
        let n = data.len() as f64;
        g.iter_mut().for_each(|gj| *gj /= n);
        g
    }

    /// Upper bound on the gradient Lipschitz constant over `data`:
    /// `lambda_max(X^T X / n)`, scaled by 1/4 for the logistic loss.
    pub fn smoothness_bound(&self, data: &Dataset) -> f64 {
        let lambda = top_eigenvalue(data);
        match self {
            TaskKind::Quadratic => lambda,
            TaskKind::Logistic => 0.25 * lambda,
        }
    }
}

/// Largest eigenvalue of the second-moment matrix, via power iteration.
fn top_eigenvalue(data: &Dataset) -> f64 {
    let dim = data.dim();
    if data.is_empty() || dim == 0 {
        return 0.0;
    }
    let n = data.len() as f64;
    let mut m = vec![0.0; dim * dim];
    for i in 0..data.len() {
        let (x, _) = data.row(i);
        for a in 0..dim {
            for b in 0..dim {
                m[a * dim + b] += x[a] * x[b] / n;
            }
        }
    }
    let mut v = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let mv: Vec<f64> = (0..dim)
            .map(|a| dot(&m[a * dim..(a + 1) * dim], &v))
            .collect();
        let nrm = norm(&mv);
        if nrm == 0.0 {
            return 0.0;
        }
        let next = dot(&v, &mv);
        v = mv.into_iter().map(|c| c / nrm).collect();
        if (next - lambda).abs() <= 1e-14 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // Rayleigh quotient converges from below; pad slightly.
    lambda * (1.0 + 1e-9)
}

/// One gradient step on the local loss.
pub fn local_update(kind: TaskKind, w: &[f64], data: &Dataset, eta: f64) -> Result<Vec<f64>> {
    let g = kind.gradient(w, data);
    if let Some(j) = g.iter().position(|v| !v.is_finite()) {
        return Err(MelError::NonFinite {
            context: "local gradient".into(),
            detail: format!("coordinate {j} is {} over {} samples", g[j], data.len()),
        });
    }
    Ok(w.iter().zip(&g).map(|(wj, gj)| wj - eta * gj).collect())
}

pub fn local_loss(kind: TaskKind, w: &[f64], data: &Dataset) -> f64 {
    kind.loss(w, data)
}

/// Sample-weighted average of per-learner losses, `sum d_k F_k / sum d_k`.
pub fn global_loss(kind: TaskKind, w: &[f64], datasets: &[Dataset]) -> f64 {
    let total: usize = datasets.iter().map(Dataset::len).sum();
    if total == 0 {
        return 0.0;
    }
    datasets
        .iter()
        .map(|d| d.len() as f64 * kind.loss(w, d))
        .sum::<f64>()
        / total as f64
}

/// Centralized gradient-descent trajectory restarted from the aggregated
/// model at each interval start.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryTrack {
    pub v: Vec<f64>,
    /// Global step index at which the track was last synchronized.
    pub reset_step: usize,
}

impl AuxiliaryTrack {
    pub fn new(w: &[f64], step: usize) -> Self {
        AuxiliaryTrack {
            v: w.to_vec(),
            reset_step: step,
        }
    }

    pub fn sync(&mut self, w: &[f64], step: usize) {
        self.v.clear();
        self.v.extend_from_slice(w);
        self.reset_step = step;
    }

    pub fn step(&mut self, kind: TaskKind, eta: f64, full: &Dataset) -> Result<()> {
        self.v = local_update(kind, &self.v, full, eta)?;
        Ok(())
    }
}

/// Distance between the virtually aggregated model and the centralized track
/// over one interval, with the smoothness and divergence actually observed.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalTrace {
    /// `||w[l] - v[l]||` for `l = 0..=tau` steps into the interval.
    pub deviations: Vec<f64>,
    /// Largest `||grad F_k(w_k) - grad F_k(v)|| / ||w_k - v||` seen, if any
    /// local model ever left the track.
    pub beta: Option<f64>,
    /// `sum_k (d_k/d) max_l ||grad F_k(v[l]) - grad F(v[l])||`.
    pub delta: f64,
}

pub fn interval_trace(
    kind: TaskKind,
    batches: &[Dataset],
    w: &[f64],
    eta: f64,
    tau: usize,
) -> Result<IntervalTrace> {
    let dim = w.len();
    let total: usize = batches.iter().map(Dataset::len).sum();
    if total == 0 {
        return Err(MelError::InvalidParams("interval trace needs data".into()));
    }
    let weights: Vec<f64> = batches
        .iter()
        .map(|b| b.len() as f64 / total as f64)
        .collect();
    let full = Dataset::concat(dim, batches);

    let mut locals: Vec<Vec<f64>> = vec![w.to_vec(); batches.len()];
    let mut track = AuxiliaryTrack::new(w, 0);
    let mut delta_k = vec![0.0f64; batches.len()];
    let mut beta: Option<f64> = None;
    let mut deviations = vec![0.0];

    for _ in 0..tau {
        let global_grad = kind.gradient(&track.v, &full);
        for (k, data) in batches.iter().enumerate() {
            let at_v = kind.gradient(&track.v, data);
            let div = distance(&at_v, &global_grad);
            delta_k[k] = delta_k[k].max(div);
            let gap = distance(&locals[k], &track.v);
            if gap > 0.0 {
                let at_wk = kind.gradient(&locals[k], data);
                let ratio = distance(&at_wk, &at_v) / gap;
                beta = Some(beta.map_or(ratio, |b: f64| b.max(ratio)));
            }
        }
        for (k, data) in batches.iter().enumerate() {
            locals[k] = local_update(kind, &locals[k], data, eta)?;
        }
        track.step(kind, eta, &full)?;
        let mut agg = vec![0.0; dim];
        for (wk, &p) in locals.iter().zip(&weights) {
            for (a, v) in agg.iter_mut().zip(wk) {
                *a += p * v;
            }
        }
        deviations.push(distance(&agg, &track.v));
    }
    let delta = delta_k.iter().zip(&weights).map(|(d, p)| d * p).sum();
    Ok(IntervalTrace {
        deviations,
        beta,
        delta,
    })
}

/// Analytic gradient against central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// `max_j |a_j - n_j| / max(1, |a_j|, |n_j|)`.
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradientCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub const GRADIENT_CHECK_STEP: f64 = 1e-6;

/// Central differences are taken per sample and then averaged, which equals
/// differencing the mean loss but avoids cancelling two large sums.
pub fn gradient_check(kind: TaskKind, w: &[f64], data: &Dataset) -> GradientCheck {
    let analytic = kind.gradient(w, data);
    let n = data.len().max(1) as f64;
    let mut up = w.to_vec();
    let mut down = w.to_vec();
    let numeric: Vec<f64> = (0..w.len())
        .map(|j| {
            up[j] = w[j] + GRADIENT_CHECK_STEP;
            down[j] = w[j] - GRADIENT_CHECK_STEP;
            // the representable step, not the nominal 2h
            let span = up[j] - down[j];
            let diff: f64 = (0..data.len())
                .map(|i| {
                    let (x, y) = data.row(i);
                    kind.sample_loss(dot(x, &up), y) - kind.sample_loss(dot(x, &down), y)
                })
                .sum();
            up[j] = w[j];
            down[j] = w[j];
            diff / n / span
        })
        .collect();
    let mut max_rel_error = 0.0;
    let mut worst_coordinate = 0;
    for (j, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(1.0);
        if err > max_rel_error {
            max_rel_error = err;
            worst_coordinate = j;
        }
    }
    GradientCheck {
        max_rel_error,
        worst_coordinate,
        analytic,
        numeric,
    }
}

/// Parameters of the synthetic learning problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub dim: usize,
    /// Length of each learner's mean shift.
    pub heterogeneity: f64,
    pub seed: u64,
    pub total_samples: u64,
    pub holdout_samples: u64,
    /// Samples per local step; 0 means full batch.
    pub minibatch: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            kind: TaskKind::Logistic,
            dim: 10,
            heterogeneity: 1.0,
            seed: 0,
            total_samples: 54_000,
            holdout_samples: 5_000,
            minibatch: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub spec: TaskSpec,
    pub w_true: Vec<f64>,
    /// Home data of each learner; sizes follow the equal split of `d`.
    pub shards: Vec<Dataset>,
    pub holdout: Dataset,
    full: Dataset,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| normal(rng)).collect()
}

impl SyntheticTask {
    pub fn generate(spec: TaskSpec, learners: usize) -> Result<Self> {
        if spec.dim == 0 || learners == 0 {
            return Err(MelError::InvalidParams(
                "task needs dim >= 1 and at least one learner".into(),
            ));
        }
        if spec.total_samples < learners as u64 {
            return Err(MelError::InvalidParams(format!(
                "task.total_samples={} is below the learner count {learners}",
                spec.total_samples
            )));
        }
        if !(spec.heterogeneity >= 0.0 && spec.heterogeneity.is_finite()) {
            return Err(MelError::InvalidParams(
                "task.heterogeneity must be non-negative".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let w_true = gaussian_vec(&mut rng, spec.dim);
        let shifts: Vec<Vec<f64>> = (0..learners)
            .map(|_| {
                let u = gaussian_vec(&mut rng, spec.dim);
                let n = norm(&u).max(1e-12);
                u.into_iter().map(|c| spec.heterogeneity * c / n).collect()
            })
            .collect();

        let draw = |rng: &mut ChaCha8Rng, shift: &[f64], out: &mut Dataset| {
            let x: Vec<f64> = shift.iter().map(|m| m + normal(rng)).collect();
            let z = dot(&x, &w_true);
            let y = match spec.kind {
                TaskKind::Quadratic => z + 0.1 * normal(rng),
                TaskKind::Logistic => f64::from(u8::from(rng.random::<f64>() < sigmoid(z))),
            };
            out.push(&x, y);
        };

        let sizes = equal_split(spec.total_samples, learners);
        let shards: Vec<Dataset> = shifts
            .iter()
            .zip(&sizes)
            .map(|(shift, &n)| {
                let mut ds = Dataset::new(spec.dim);
                for _ in 0..n {
                    draw(&mut rng, shift, &mut ds);
                }
                ds
            })
            .collect();
        let mut holdout = Dataset::new(spec.dim);
        for _ in 0..spec.holdout_samples {
            let k = rng.random_range(0..learners);
            draw(&mut rng, &shifts[k], &mut holdout);
        }
        let full = Dataset::concat(spec.dim, &shards);
        Ok(SyntheticTask {
            spec,
            w_true,
            shards,
            holdout,
            full,
        })
    }

    pub fn learners(&self) -> usize {
        self.shards.len()
    }

    /// The complete training set, all shards concatenated.
    pub fn full(&self) -> &Dataset {
        &self.full
    }

    /// Split the data into per-learner batches of the requested sizes.
    ///
    /// A learner first takes from its home shard, starting at an offset that
    /// rotates every round; samples it does not need go to a shared pool that
    /// tops up learners asking for more than their shard holds.
    pub fn assign_batches(&self, batches: &[u64], round: usize) -> Vec<Dataset> {
        let dim = self.spec.dim;
        let mut pool: Vec<(usize, usize)> = Vec::new();
        let mut own: Vec<Vec<usize>> = Vec::with_capacity(batches.len());
        for (k, shard) in self.shards.iter().enumerate() {
            let n = shard.len();
            let want = batches.get(k).copied().unwrap_or(0) as usize;
            let offset = if n == 0 { 0 } else { (round * 7919) % n };
            let rotated: Vec<usize> = (0..n).map(|i| (offset + i) % n).collect();
            let take = want.min(n);
            own.push(rotated[..take].to_vec());
            pool.extend(rotated[take..].iter().map(|&i| (k, i)));
        }
        let mut pool = pool.into_iter();
        own.into_iter()
            .enumerate()
            .map(|(k, idx)| {
                let mut ds = self.shards[k].select(&idx);
                let want = batches.get(k).copied().unwrap_or(0) as usize;
                while ds.len() < want {
                    match pool.next() {
                        Some((s, i)) => {
                            let (x, y) = self.shards[s].row(i);
                            ds.push(x, y);
                        }
                        None => break,
                    }
                }
                debug_assert_eq!(ds.dim(), dim);
                ds
            })
            .collect()
    }

    /// Fraction of holdout samples classified correctly; logistic tasks only.
    pub fn accuracy(&self, w: &[f64]) -> Option<f64> {
        if self.spec.kind != TaskKind::Logistic || self.holdout.is_empty() {
            return None;
        }
        let correct = (0..self.holdout.len())
            .filter(|&i| {
                let (x, y) = self.holdout.row(i);
                (dot(x, w) >= 0.0) == (y > 0.5)
            })
            .count();
        Some(correct as f64 / self.holdout.len() as f64)
    }
}

/// A fleet of simulated learners working on a [`SyntheticTask`].
#[derive(Debug, Clone)]
pub struct SimulatedFleet {
    task: SyntheticTask,
    batches: Vec<Dataset>,
    seed: u64,
}

impl SimulatedFleet {
    pub fn new(task: SyntheticTask, seed: u64) -> Self {
        let batches = vec![Dataset::new(task.spec.dim); task.learners()];
        SimulatedFleet {
            task,
            batches,
            seed,
        }
    }

    pub fn task(&self) -> &SyntheticTask {
        &self.task
    }

    pub fn batches(&self) -> &[Dataset] {
        &self.batches
    }
}

impl LearnerBackend for SimulatedFleet {
    fn dim(&self) -> usize {
        self.task.spec.dim
    }

    fn initial_model(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        (0..self.dim()).map(|_| 0.01 * normal(&mut rng)).collect()
    }

    fn dispatch(&mut self, round: usize, batches: &[u64]) {
        self.batches = self.task.assign_batches(batches, round);
    }

    fn local_train(
        &self,
        k: usize,
        w: &[f64],
        tau: u32,
        eta: f64,
        round: usize,
    ) -> Result<Vec<f64>> {
        let data = &self.batches[k];
        let kind = self.task.spec.kind;
        let mb = self.task.spec.minibatch as usize;
        let mut wk = w.to_vec();
        if mb == 0 || mb >= data.len() {
            for _ in 0..tau {
                wk = local_update(kind, &wk, data, eta)?;
            }
        } else {
            let stream = (round as u64) << 32 | k as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(stream);
            for _ in 0..tau {
                let idx = sample(&mut rng, data.len(), mb).into_vec();
                wk = local_update(kind, &wk, &data.select(&idx), eta)?;
            }
        }
        Ok(wk)
    }

    fn local_gradient(&self, k: usize, w: &[f64]) -> Vec<f64> {
        self.task.spec.kind.gradient(w, &self.batches[k])
    }

    fn local_loss(&self, k: usize, w: &[f64]) -> f64 {
        self.task.spec.kind.loss(w, &self.batches[k])
    }

    fn global_loss(&self, w: &[f64]) -> f64 {
        self.task.spec.kind.loss(w, &self.task.full)
    }

    fn accuracy(&self, w: &[f64]) -> Option<f64> {
        self.task.accuracy(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> Dataset {
        Dataset::from_rows(
            2,
            vec![1.0, 2.0, 2.0, 1.0, -1.0, -2.0, -2.0, -1.0],
            vec![1.0, 1.0, 0.0, 0.0],
        )
        .unwrap()
    }

    /// Data whose quadratic loss is `1/2 ||w||^2` up to a constant.
    fn identity_quadratic() -> Dataset {
        // rows +-sqrt(2) e_j with zero targets give X^T X / n = I
        let s = 2f64.sqrt();
        Dataset::from_rows(2, vec![s, 0.0, -s, 0.0, 0.0, s, 0.0, -s], vec![0.0; 4]).unwrap()
    }

    fn small_task(kind: TaskKind, heterogeneity: f64, seed: u64) -> SyntheticTask {
        SyntheticTask::generate(
            TaskSpec {
                kind,
                dim: 4,
                heterogeneity,
                seed,
                total_samples: 400,
                holdout_samples: 100,
                minibatch: 0,
            },
            4,
        )
        .unwrap()
    }

    #[test]
    fn quadratic_step() {
        let w = local_update(TaskKind::Quadratic, &[1.0, 1.0], &identity_quadratic(), 0.1).unwrap();
        assert!((w[0] - 0.9).abs() < 1e-15 && (w[1] - 0.9).abs() < 1e-15);
        let same = local_update(
            TaskKind::Quadratic,
            &[0.3, -2.0],
            &identity_quadratic(),
            0.0,
        )
        .unwrap();
        assert_eq!(same, vec![0.3, -2.0]);
    }

    #[test]
    fn logistic_descends_on_separable_data() {
        let data = separable();
        let mut w = vec![0.0, 0.0];
        let mut prev = TaskKind::Logistic.loss(&w, &data);
        for _ in 0..10 {
            w = local_update(TaskKind::Logistic, &w, &data, 0.5).unwrap();
            let now = TaskKind::Logistic.loss(&w, &data);
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let data = Dataset::from_rows(1, vec![f64::NAN], vec![0.0]).unwrap();
        let err = local_update(TaskKind::Quadratic, &[1.0], &data, 0.1).unwrap_err();
        assert!(matches!(err, MelError::NonFinite { .. }));
    }

    #[test]
    fn global_loss_weighting() {
        let task = small_task(TaskKind::Quadratic, 0.0, 1);
        let w = vec![0.1, 0.2, 0.3, 0.4];
        let d = &task.shards[0];
        let same = global_loss(TaskKind::Quadratic, &w, &[d.clone(), d.clone()]);
        assert!((same - TaskKind::Quadratic.loss(&w, d)).abs() < 1e-15);

        // constant-loss datasets: F_1 = 0 (one row), F_2 = 0.4 (three rows)
        let zero = Dataset::from_rows(1, vec![0.0], vec![0.0]).unwrap();
        let y = (0.8f64).sqrt();
        let point4 = Dataset::from_rows(1, vec![0.0; 3], vec![y; 3]).unwrap();
        let f = global_loss(TaskKind::Quadratic, &[0.0], &[zero, point4.clone()]);
        assert!((f - 0.3).abs() < 1e-15);
        let a = Dataset::from_rows(1, vec![0.0; 2], vec![0.4f64.sqrt(); 2]).unwrap();
        let f = global_loss(
            TaskKind::Quadratic,
            &[0.0],
            &[a, Dataset::from_rows(1, vec![0.0; 2], vec![y; 2]).unwrap()],
        );
        assert!((f - 0.3).abs() < 1e-15);
    }

    #[test]
    fn auxiliary_track_single_learner() {
        let task = small_task(TaskKind::Logistic, 1.0, 2);
        let data = task.shards[1].clone();
        let w0 = vec![0.05, -0.1, 0.0, 0.2];
        let mut track = AuxiliaryTrack::new(&w0, 0);
        assert_eq!(track.v, w0);
        let mut w = w0.clone();
        for _ in 0..20 {
            w = local_update(TaskKind::Logistic, &w, &data, 0.1).unwrap();
            track.step(TaskKind::Logistic, 0.1, &data).unwrap();
            assert_eq!(track.v, w);
        }
        let trace = interval_trace(TaskKind::Logistic, &[data], &w0, 0.1, 15).unwrap();
        assert!(trace.deviations.iter().all(|&d| d == 0.0));
        track.sync(&w0, 20);
        assert_eq!(track.v, w0);
        assert_eq!(track.reset_step, 20);
    }

    #[test]
    fn gradient_checks() {
        for kind in [TaskKind::Quadratic, TaskKind::Logistic] {
            let task = small_task(kind, 1.0, 3);
            for w in [vec![0.0; 4], vec![0.3, -0.2, 0.5, 0.1]] {
                let r = gradient_check(kind, &w, task.full());
                let tol = if kind == TaskKind::Quadratic {
                    1e-9
                } else {
                    1e-5
                };
                assert!(r.passed(tol), "{kind}: {r:?}");
                assert!(r.max_rel_error.is_finite());
            }
        }
    }

    #[test]
    fn assignment_partitions_the_data() {
        let task = small_task(TaskKind::Logistic, 1.0, 4);
        let batches = [160, 40, 100, 100];
        let parts = task.assign_batches(&batches, 3);
        for (p, &b) in parts.iter().zip(&batches) {
            assert_eq!(p.len() as u64, b);
        }
        // every sample used exactly once
        let mut rows: Vec<Vec<u64>> = parts
            .iter()
            .flat_map(|p| {
                (0..p.len()).map(move |i| p.row(i).0.iter().map(|v| v.to_bits()).collect())
            })
            .collect();
        rows.sort();
        rows.dedup();
        assert_eq!(rows.len(), 400);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = small_task(TaskKind::Logistic, 0.5, 9);
        let b = small_task(TaskKind::Logistic, 0.5, 9);
        assert_eq!(a.full(), b.full());
        assert_eq!(a.holdout, b.holdout);
        let c = small_task(TaskKind::Logistic, 0.5, 10);
        assert_ne!(a.full(), c.full());
    }

    #[test]
    fn smoothness_bound_of_identity_design() {
        let b = TaskKind::Quadratic.smoothness_bound(&identity_quadratic());
        assert!((b - 1.0).abs() < 1e-8);
    }

    #[test]
    fn deviation_stays_under_h() {
        use crate::bounds::ConvergenceParams;
        for seed in 0..50u64 {
            let task = small_task(TaskKind::Quadratic, 1.5, seed);
            let sizes = [50, 150, 120, 80];
            let batches = task.assign_batches(&sizes, seed as usize);
            let smooth = batches
                .iter()
                .map(|b| TaskKind::Quadratic.smoothness_bound(b))
                .fold(0.0, f64::max);
            let eta = 0.5 / smooth;
            let w0: Vec<f64> = (0..4).map(|j| 0.1 * j as f64 - 0.2).collect();
            let trace = interval_trace(TaskKind::Quadratic, &batches, &w0, eta, 30).unwrap();
            let beta = trace.beta.unwrap();
            assert!(beta <= smooth);
            let params = ConvergenceParams::new(eta, beta, trace.delta, 0.0075).unwrap();
            for (x, &dev) in trace.deviations.iter().enumerate() {
                let h = params.h_tau(x.max(1) as f64).unwrap();
                let h = if x == 0 { 0.0 } else { h };
                assert!(
                    dev <= h * (1.0 + 1e-9) + 1e-12,
                    "seed {seed} step {x}: {dev} > {h}"
                );
            }
        }
    }

    #[test]
    fn heterogeneity_raises_divergence() {
        let median_delta = |h: f64| {
            let mut deltas: Vec<f64> = (0..15u64)
                .map(|seed| {
                    let task = small_task(TaskKind::Logistic, h, seed);
                    interval_trace(TaskKind::Logistic, &task.shards, &[0.0; 4], 0.01, 1)
                        .unwrap()
                        .delta
                })
                .collect();
            deltas.sort_by(f64::total_cmp);
            deltas[deltas.len() / 2]
        };
        let levels = [0.0, 0.5, 1.0, 2.0, 4.0];
        let medians: Vec<f64> = levels.iter().map(|&h| median_delta(h)).collect();
        assert!(medians.windows(2).all(|p| p[1] >= p[0]), "{medians:?}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn losses_are_convex(
                seed in 0u64..1000, logistic in any::<bool>(), t in 0.0f64..1.0,
                wa in prop::collection::vec(-2.0f64..2.0, 4), wb in prop::collection::vec(-2.0f64..2.0, 4),
            ) {
                let kind = if logistic { TaskKind::Logistic } else { TaskKind::Quadratic };
                let task = small_task(kind, 1.0, seed);
                let mix: Vec<f64> = wa.iter().zip(&wb).map(|(a, b)| t * a + (1.0 - t) * b).collect();
                let lhs = kind.loss(&mix, task.full());
                let rhs = t * kind.loss(&wa, task.full()) + (1.0 - t) * kind.loss(&wb, task.full());
                prop_assert!(lhs <= rhs + 1e-10);
            }

            #[test]
            fn smoothness_probe_within_spectral_bound(
                seed in 0u64..1000, logistic in any::<bool>(),
                wa in prop::collection::vec(-2.0f64..2.0, 4), wb in prop::collection::vec(-2.0f64..2.0, 4),
            ) {
                let kind = if logistic { TaskKind::Logistic } else { TaskKind::Quadratic };
                let task = small_task(kind, 1.0, seed);
                for shard in &task.shards {
                    let gap = distance(&wa, &wb);
                    prop_assume!(gap > 1e-6);
                    let ratio = distance(&kind.gradient(&wa, shard), &kind.gradient(&wb, shard)) / gap;
                    prop_assert!(ratio <= kind.smoothness_bound(shard) * (1.0 + 1e-9));
                }
            }
        }
    }
}
