//! L2-regularized hinge-loss linear SVM with an unregularized bias, and its
//! one-vs-rest multi-class composition.
//!
//! The binary problem is
//!
//! ```text
//! min_{w,b}  F(w, b) = ½‖w‖² + C Σᵢ max(0, 1 − yᵢ(w·xᵢ + b))
//! ```
//!
//! For a fixed bias `b` the problem in `w` is a plain bias-free SVM whose
//! margins are shifted to `1 − yᵢ b`; it is solved by dual coordinate descent
//! over the box `0 ≤ α ≤ C`. The optimal value `g(b) = min_w F(w, b)` is
//! convex in `b` with derivative `−Σ αᵢ yᵢ`, so the bias is found by bisection
//! on the sign of that derivative, warm-starting the dual between steps.
//! Finally the bias is re-optimized exactly for the returned `w` (a weighted
//! median of the hinge breakpoints).

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ClassId;
use crate::error::{Error, Result};
use crate::features::SparseBinaryVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Per-example hinge penalty.
    #[serde(rename = "C", alias = "c")]
    pub c: f64,
    /// Stopping threshold on the spread of projected dual gradients.
    pub tolerance: f64,
    /// Epoch budget of each fixed-bias dual solve.
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            tolerance: 1e-4,
            max_epochs: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "C must be positive, got {}",
                self.c
            )));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryLinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl BinaryLinearModel {
    pub fn zero(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn decision(&self, x: &SparseBinaryVector) -> f64 {
        x.dot(&self.weights) + self.bias
    }
}

/// Primal objective `½‖w‖² + C Σ hinge`. `positive[i]` marks yᵢ = +1.
pub fn objective(
    model: &BinaryLinearModel,
    xs: &[SparseBinaryVector],
    positive: &[bool],
    c: f64,
) -> f64 {
    let reg = 0.5 * model.weights.iter().map(|w| w * w).sum::<f64>();
    let loss: f64 = xs
        .iter()
        .zip(positive)
        .map(|(x, &p)| {
            let y = if p { 1.0 } else { -1.0 };
            (1.0 - y * model.decision(x)).max(0.0)
        })
        .sum();
    reg + c * loss
}

struct FixedBiasDual<'a> {
    xs: &'a [SparseBinaryVector],
    y: Vec<f64>,
    sq_norm: Vec<f64>,
    alpha: Vec<f64>,
    w: Vec<f64>,
    order: Vec<usize>,
    rng: ChaCha8Rng,
    c: f64,
    tolerance: f64,
    max_epochs: usize,
    epochs: usize,
}

impl<'a> FixedBiasDual<'a> {
    fn new(
        xs: &'a [SparseBinaryVector],
        positive: &[bool],
        dim: usize,
        config: &TrainConfig,
    ) -> Self {
        Self {
            xs,
            y: positive
                .iter()
                .map(|&p| if p { 1.0 } else { -1.0 })
                .collect(),
            sq_norm: xs.iter().map(|x| x.len() as f64).collect(),
            alpha: vec![0.0; xs.len()],
            w: vec![0.0; dim],
            order: (0..xs.len()).collect(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            c: config.c,
            tolerance: config.tolerance,
            max_epochs: config.max_epochs,
            epochs: 0,
        }
    }

    /// Coordinate descent on the dual of the problem with bias fixed at `b`.
    fn solve(&mut self, b: f64) -> Result<()> {
        let c = self.c;
        for _ in 0..self.max_epochs {
            self.epochs += 1;
            self.order.shuffle(&mut self.rng);
            let mut pg_max = f64::NEG_INFINITY;
            let mut pg_min = f64::INFINITY;
            for &i in &self.order {
                let x = &self.xs[i];
                let yi = self.y[i];
                let g = yi * x.dot(&self.w) - (1.0 - yi * b);
                let a = self.alpha[i];
                let pg = if a <= 0.0 {
                    g.min(0.0)
                } else if a >= c {
                    g.max(0.0)
                } else {
                    g
                };
                pg_max = pg_max.max(pg);
                pg_min = pg_min.min(pg);
                if pg == 0.0 {
                    continue;
                }
                let q = self.sq_norm[i];
                let next = if q > 0.0 {
                    (a - g / q).clamp(0.0, c)
                } else if g < 0.0 {
                    c
                } else {
                    0.0
                };
                let step = (next - a) * yi;
                if step != 0.0 {
                    for &j in x.ids() {
                        self.w[j as usize] += step;
                    }
                }
                self.alpha[i] = next;
            }
            if !pg_max.is_finite() || pg_max - pg_min <= self.tolerance {
                if !self.w.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite);
                }
                return Ok(());
            }
        }
        if !self.w.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        warn!("dual solve hit max_epochs={} at bias {b}", self.max_epochs);
        Ok(())
    }

    /// Derivative of `min_w F(w, b)` with respect to `b` at the current dual.
    fn bias_slope(&self) -> f64 {
        -self
            .alpha
            .iter()
            .zip(&self.y)
            .map(|(a, y)| a * y)
            .sum::<f64>()
    }

    fn slope_at(&mut self, b: f64) -> Result<f64> {
        self.solve(b)?;
        Ok(self.bias_slope())
    }
}

/// Bias minimizing the hinge loss for fixed `w`, closest to `hint`.
///
/// The loss is piecewise linear in `b` with breakpoints `yᵢ − w·xᵢ`; its
/// slope rises by one per breakpoint from `−#positives`, so the minimizers
/// form the interval between the `p`-th and `(p+1)`-th smallest breakpoints.
fn optimal_bias(scores: &[f64], positive: &[bool], hint: f64) -> f64 {
    let n_pos = positive.iter().filter(|&&p| p).count();
    debug_assert!(n_pos > 0 && n_pos < positive.len());
    let mut pts: Vec<f64> = scores
        .iter()
        .zip(positive)
        .map(|(s, &p)| if p { 1.0 - s } else { -1.0 - s })
        .collect();
    let (_, hi, _) = pts.select_nth_unstable_by(n_pos, f64::total_cmp);
    let hi = *hi;
    let lo = pts[..n_pos]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    hint.clamp(lo, hi)
}

const BIAS_BRACKET_LIMIT: f64 = 1e15;

/// Trains a binary model. `positive[i]` gives the label of `xs[i]`; `dim` is
/// the number of feature columns.
pub fn train_binary(
    xs: &[SparseBinaryVector],
    positive: &[bool],
    dim: usize,
    config: &TrainConfig,
) -> Result<BinaryLinearModel> {
    config.validate()?;
    if xs.len() != positive.len() {
        return Err(Error::Dimension(format!(
            "{} examples but {} labels",
            xs.len(),
            positive.len()
        )));
    }
    if let Some(bad) = xs
        .iter()
        .flat_map(|x| x.ids())
        .find(|&&j| j as usize >= dim)
    {
        return Err(Error::Dimension(format!(
            "column {bad} outside {dim} features"
        )));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 || n_pos == positive.len() {
        return Err(Error::SingleClass);
    }

    let mut dual = FixedBiasDual::new(xs, positive, dim, config);
    let mut slope = dual.slope_at(0.0)?;
    let mut b = 0.0;
    if slope != 0.0 {
        // Bracket the root of the slope: it is negative for b → −∞ and
        // positive for b → +∞.
        let dir = if slope > 0.0 { -1.0 } else { 1.0 };
        let mut inner = 0.0;
        let mut step = 1.0;
        let outer = loop {
            let probe = dir * step;
            let s = dual.slope_at(probe)?;
            if s == 0.0 || (s > 0.0) != (slope > 0.0) {
                break probe;
            }
            inner = probe;
            step *= 2.0;
            if step > BIAS_BRACKET_LIMIT {
                return Err(Error::NonFinite);
            }
        };
        let (mut lo, mut hi) = if dir < 0.0 {
            (outer, inner)
        } else {
            (inner, outer)
        };
        slope = dual.bias_slope();
        b = outer;
        while slope != 0.0 {
            let width = hi - lo;
            if width <= 1e-10 * lo.abs().max(hi.abs()).max(1.0) {
                break;
            }
            b = lo + 0.5 * width;
            slope = dual.slope_at(b)?;
            if slope > 0.0 {
                hi = b;
            } else {
                lo = b;
            }
        }
    }
    let scores: Vec<f64> = xs.iter().map(|x| x.dot(&dual.w)).collect();
    let bias = optimal_bias(&scores, positive, b);
    debug!("binary solve: {} epochs, bias {bias}", dual.epochs);
    if !bias.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(BinaryLinearModel {
        weights: dual.w,
        bias,
    })
}

/// One binary head per class, in class-list order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassModel {
    pub class_list: Vec<ClassId>,
    pub heads: Vec<BinaryLinearModel>,
    pub config: TrainConfig,
}

/// Trains one-vs-rest: head `c` separates class `c` from all others.
/// `labels[i]` indexes into `classes`. Heads are trained in parallel and
/// each uses `config.seed`, so a head depends only on its own class.
pub fn train_ovr(
    xs: &[SparseBinaryVector],
    labels: &[usize],
    classes: &[ClassId],
    dim: usize,
    config: &TrainConfig,
) -> Result<MulticlassModel> {
    config.validate()?;
    let mut sizes = vec![0usize; classes.len()];
    for &l in labels {
        *sizes
            .get_mut(l)
            .ok_or_else(|| Error::Dimension(format!("label index {l} out of range")))? += 1;
    }
    if let Some(c) = sizes.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(classes[c].to_string()));
    }
    let heads = (0..classes.len())
        .into_par_iter()
        .map(|c| {
            let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            train_binary(xs, &positive, dim, config).map_err(|e| Error::ClassTraining {
                class: classes[c].to_string(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MulticlassModel {
        class_list: classes.to_vec(),
        heads,
        config: config.clone(),
    })
}

impl MulticlassModel {
    pub fn dim(&self) -> usize {
        self.heads.first().map_or(0, |h| h.weights.len())
    }

    /// `w_c·x + b_c` for every class.
    pub fn decision_values(&self, x: &SparseBinaryVector) -> Vec<f64> {
        self.heads.iter().map(|h| h.decision(x)).collect()
    }

    /// Argmax of the decision values; ties go to the earliest class.
    pub fn predict_index(&self, x: &SparseBinaryVector) -> usize {
        let mut best = 0;
        let mut best_value = f64::NEG_INFINITY;
        for (c, v) in self.decision_values(x).into_iter().enumerate() {
            if v > best_value {
                best = c;
                best_value = v;
            }
        }
        best
    }

    pub fn predict(&self, x: &SparseBinaryVector) -> &ClassId {
        &self.class_list[self.predict_index(x)]
    }
}
