//! Block-coordinate Frank-Wolfe over the product of per-video hulls.
//!
//! The state keeps `C = XᵀY` and `P = A⁻¹C` so that a block gradient costs
//! `O(M_v d K)` and a step costs two `X_vᵀ D` products. The objective is
//! updated from its exact quadratic expansion along the step direction and
//! recomputed from scratch every `refresh_every` steps.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constraints::VideoConstraintSet;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::lmo::{lmo, BlockVertex};
use crate::objective::{AssignmentMatrix, Classifier, RidgeCache};

/// Stream id of the block sampler within the run seed.
pub const SAMPLER_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub iterations: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Relative to `max(h(Y₀), 1e-12)`.
    pub gap_tolerance: f64,
    /// Probability of a uniform draw in the block sampler.
    pub sampler_floor: f64,
    /// Trace every n-th step; 0 disables the trace.
    pub log_every: usize,
    pub refresh_every: usize,
    /// Keep each block as an explicit convex combination of vertices.
    pub track_hull: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            iterations: 30_000,
            lambda: 1e-4,
            seed: 0,
            gap_tolerance: 1e-3,
            sampler_floor: 0.05,
            log_every: 1,
            refresh_every: 1000,
            track_hull: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub video: usize,
    pub h: f64,
    pub total_gap: f64,
    pub gamma: f64,
}

/// Outcome of one block update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub video: usize,
    pub gap: f64,
    pub gamma: f64,
}

/// Convex weights of one block over integer vertices.
pub type HullWeights = Vec<(Vec<usize>, f64)>;

#[derive(Debug, Clone)]
pub struct SolverState {
    y: Matrix,
    c: Matrix,
    p: Matrix,
    h: f64,
    h0: f64,
    gaps: Vec<f64>,
    iteration: usize,
    hull: Option<Vec<HullWeights>>,
    scratch: Vec<f64>,
}

impl SolverState {
    pub fn assignment(&self) -> &Matrix {
        &self.y
    }

    pub fn objective(&self) -> f64 {
        self.h
    }

    pub fn initial_objective(&self) -> f64 {
        self.h0
    }

    /// Last gap seen per block; `+∞` until the block is visited.
    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    pub fn total_gap(&self) -> f64 {
        self.gaps.iter().sum()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn hull(&self) -> Option<&[HullWeights]> {
        self.hull.as_deref()
    }

    /// Recomputes `XᵀY`, `A⁻¹XᵀY` and `h` from `Y`.
    pub fn refresh(&mut self, cache: &RidgeCache) -> Result<()> {
        self.c = cache.xt(&self.y)?;
        self.p = cache.solve(&self.c)?;
        self.h = (self.y.frobenius_sq() - self.c.dot(&self.p)) / (2.0 * cache.rows() as f64);
        if !self.h.is_finite() {
            return Err(Error::NonFinite("objective"));
        }
        Ok(())
    }

    /// Gradient rows of one block.
    pub fn block_gradient(&self, cache: &RidgeCache, rows: Range<usize>) -> Vec<f64> {
        let k = self.y.cols();
        let mut g = vec![0.0; rows.len() * k];
        cache.block_gradient(rows.clone(), self.y.row_block(rows.start, rows.end), &self.p, &mut g);
        g
    }
}

fn check_sets(sets: &[VideoConstraintSet], cache: &RidgeCache) -> Result<usize> {
    let first = sets.first().ok_or(Error::Empty("no constraint sets"))?;
    let k = first.classes;
    if k < 2 {
        return Err(Error::invalid("at least one action class is required"));
    }
    let mut next = 0;
    for (v, s) in sets.iter().enumerate() {
        if s.classes != k {
            return Err(Error::DimensionMismatch {
                what: "constraint classes",
                expected: k,
                got: s.classes,
            });
        }
        if s.video != v || s.rows.start != next {
            return Err(Error::invalid(alloc::format!(
                "constraint set {v} must cover rows from {next} and carry video index {v}"
            )));
        }
        next = s.rows.end;
    }
    if next != cache.rows() {
        return Err(Error::DimensionMismatch {
            what: "constrained rows",
            expected: cache.rows(),
            got: next,
        });
    }
    Ok(k)
}

/// Starts every block at its vertex under a zero gradient.
pub fn init_state(sets: &[VideoConstraintSet], cache: &RidgeCache, config: &SolverConfig) -> Result<SolverState> {
    let k = check_sets(sets, cache)?;
    let mut y = Matrix::zeros(cache.rows(), k);
    let mut hull = config.track_hull.then(Vec::new);
    for s in sets {
        let vertex = lmo(s, &vec![0.0; s.len() * k])?;
        for (i, &c) in vertex.labels.iter().enumerate() {
            y.set(s.rows.start + i, c, 1.0);
        }
        if let Some(h) = hull.as_mut() {
            h.push(vec![(vertex.labels, 1.0)]);
        }
    }
    let d = cache.dim();
    let mut state = SolverState {
        y,
        c: Matrix::zeros(d, k),
        p: Matrix::zeros(d, k),
        h: 0.0,
        h0: 0.0,
        gaps: vec![f64::INFINITY; sets.len()],
        iteration: 0,
        hull,
        scratch: Vec::new(),
    };
    state.refresh(cache)?;
    state.h0 = state.h;
    Ok(state)
}

/// Exact Frank-Wolfe gap of one block at the current iterate.
pub fn block_gap(state: &SolverState, set: &VideoConstraintSet, cache: &RidgeCache) -> Result<f64> {
    let g = state.block_gradient(cache, set.rows.clone());
    let s = lmo(set, &g)?;
    let y = state.y.row_block(set.rows.start, set.rows.end);
    Ok((dot(&g, y) - s.value).max(0.0))
}

fn line_search(gap: f64, curvature: f64) -> f64 {
    if gap <= 0.0 {
        0.0
    } else if curvature <= 1e-18 {
        1.0
    } else {
        (gap / curvature).clamp(0.0, 1.0)
    }
}

/// One Frank-Wolfe step on block `v` with exact line search.
pub fn bcfw_step(state: &mut SolverState, sets: &[VideoConstraintSet], cache: &RidgeCache, v: usize) -> Result<Step> {
    let set = sets.get(v).ok_or_else(|| Error::invalid(alloc::format!("no video {v}")))?;
    let k = state.y.cols();
    let rows = set.rows.clone();
    let g = state.block_gradient(cache, rows.clone());
    let vertex: BlockVertex = lmo(set, &g)?;

    let dir = &mut state.scratch;
    dir.clear();
    dir.extend(state.y.row_block(rows.start, rows.end).iter().map(|v| -v));
    for (i, &c) in vertex.labels.iter().enumerate() {
        dir[i * k + c] += 1.0;
    }
    let gap = (-dot(&g, dir)).max(0.0);
    state.gaps[v] = gap;
    state.iteration += 1;

    let mut gamma = 0.0;
    if gap > 0.0 {
        let (e, f) = cache.block_products(rows.clone(), dir, k);
        let curvature = ((dot(dir, dir) - e.dot(&f)) / cache.rows() as f64).max(0.0);
        gamma = line_search(gap, curvature);
        if gamma > 0.0 {
            for (dst, d) in state.y.as_mut_slice()[rows.start * k..rows.end * k].iter_mut().zip(dir.iter()) {
                *dst += gamma * d;
            }
            state.c.axpy(gamma, &e);
            state.p.axpy(gamma, &f);
            state.h += -gamma * gap + 0.5 * gamma * gamma * curvature;
            if let Some(hull) = state.hull.as_mut() {
                let block = &mut hull[v];
                for w in block.iter_mut() {
                    w.1 *= 1.0 - gamma;
                }
                match block.iter_mut().find(|w| w.0 == vertex.labels) {
                    Some(w) => w.1 += gamma,
                    None => block.push((vertex.labels, gamma)),
                }
                block.retain(|w| w.1 > 0.0);
            }
        }
    }
    if !state.h.is_finite() {
        return Err(Error::NonFinite("objective"));
    }
    Ok(Step { video: v, gap, gamma })
}

/// Draws a block: uniformly with probability `floor`, otherwise in
/// proportion to the gap estimates. Unvisited blocks count as ten times the
/// largest finite gap.
pub fn sample_block<R: Rng + ?Sized>(gaps: &[f64], floor: f64, rng: &mut R) -> usize {
    let n = gaps.len();
    let u: f64 = rng.random();
    if u < floor {
        return rng.random_range(0..n);
    }
    let max_finite = gaps.iter().copied().filter(|g| g.is_finite()).fold(0.0, f64::max);
    let weight = |g: f64| if g.is_finite() { g } else { max_finite * 10.0 };
    let total: f64 = gaps.iter().map(|&g| weight(g)).sum();
    if !(total > 0.0) || !total.is_finite() {
        return rng.random_range(0..n);
    }
    let mut t = rng.random::<f64>() * total;
    for (i, &g) in gaps.iter().enumerate() {
        let w = weight(g);
        if t < w {
            return i;
        }
        t -= w;
    }
    gaps.iter().rposition(|&g| weight(g) > 0.0).unwrap_or(n - 1)
}

#[derive(Debug, Clone)]
pub struct SolverOutput {
    pub assignment: AssignmentMatrix,
    pub classifier: Classifier,
    pub trace: Vec<TraceRow>,
    /// `h(Y₀)`
    pub initial_objective: f64,
    pub objective: f64,
    /// Exact block gaps at the returned iterate.
    pub gaps: Vec<f64>,
    pub iterations: usize,
    /// Steps with a positive step size.
    pub moves: usize,
    pub hull: Option<Vec<HullWeights>>,
}

impl SolverOutput {
    pub fn total_gap(&self) -> f64 {
        self.gaps.iter().sum()
    }
}

fn exact_gaps(state: &SolverState, sets: &[VideoConstraintSet], cache: &RidgeCache) -> Result<Vec<f64>> {
    sets.iter().map(|s| block_gap(state, s, cache)).collect()
}

/// Runs BCFW until the iteration budget is spent or the total gap falls
/// below `gap_tolerance · max(h(Y₀), 1e-12)`.
pub fn run(sets: &[VideoConstraintSet], cache: &RidgeCache, config: &SolverConfig) -> Result<SolverOutput> {
    run_observed(sets, cache, config, |_, _| {})
}

/// [`run`], calling `observe` after every step.
pub fn run_observed<F>(sets: &[VideoConstraintSet], cache: &RidgeCache, config: &SolverConfig, mut observe: F) -> Result<SolverOutput>
where
    F: FnMut(&SolverState, &Step),
{
    if (cache.lambda() - config.lambda).abs() > f64::EPSILON * config.lambda.abs() {
        return Err(Error::invalid("cache and config disagree on lambda"));
    }
    let mut state = init_state(sets, cache, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SAMPLER_STREAM);
    let target = config.gap_tolerance * state.h0.max(1e-12);
    let mut trace = Vec::new();
    let mut moves = 0;
    let mut next_check = 0;

    while state.iteration < config.iterations {
        let v = sample_block(&state.gaps, config.sampler_floor, &mut rng);
        let step = bcfw_step(&mut state, sets, cache, v)?;
        if step.gamma > 0.0 {
            moves += 1;
        }
        observe(&state, &step);
        if config.refresh_every > 0 && state.iteration % config.refresh_every == 0 {
            state.refresh(cache)?;
        }
        let mut total = state.total_gap();
        let mut done = false;
        if total.is_finite() && total <= target && state.iteration >= next_check {
            let gaps = exact_gaps(&state, sets, cache)?;
            state.gaps = gaps;
            total = state.total_gap();
            done = total <= target;
            next_check = state.iteration + sets.len();
        }
        if config.log_every > 0 && (state.iteration % config.log_every == 0 || done || state.iteration == config.iterations) {
            trace.push(TraceRow {
                iteration: state.iteration,
                video: v,
                h: state.h,
                total_gap: total,
                gamma: step.gamma,
            });
        }
        if done {
            break;
        }
    }

    let gaps = exact_gaps(&state, sets, cache)?;
    let classifier = Classifier {
        weights: state.p.clone(),
        lambda: cache.lambda(),
    };
    let objective = state.h;
    Ok(SolverOutput {
        assignment: AssignmentMatrix::relaxed(state.y)?,
        classifier,
        trace,
        initial_objective: state.h0,
        objective,
        gaps,
        iterations: state.iteration,
        moves,
        hull: state.hull,
    })
}
