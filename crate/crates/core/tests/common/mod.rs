//! Independent oracles and synthetic data shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use silverlabel::{ClassId, ClassScheme, LabeledExample, SparseBinaryVector};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

// ---------------------------------------------------------------------------
// Information gain as an entropy difference

fn entropy(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    -counts
        .iter()
        .filter(|&&n| n > 0.0)
        .map(|&n| {
            let p = n / total;
            p * p.log2()
        })
        .sum::<f64>()
}

/// H(C) - H(C | T) for the binary class-membership variable C and
/// term-presence variable T.
pub fn ig_entropy_oracle(n: u64, n_class: u64, df: u64, df_class: u64) -> f64 {
    let n = n as f64;
    let (n_class, df, df_class) = (n_class as f64, df as f64, df_class as f64);
    let h_c = entropy(&[n_class, n - n_class]);
    let with_t = entropy(&[df_class, df - df_class]);
    let without_t = entropy(&[n_class - df_class, n - df - n_class + df_class]);
    h_c - (df / n) * with_t - ((n - df) / n) * without_t
}

// ---------------------------------------------------------------------------
// SVM oracle: accelerated projected gradient on the dual

pub struct SvmProblem {
    pub xs: Vec<SparseBinaryVector>,
    pub positive: Vec<bool>,
    pub dim: usize,
    pub c: f64,
}

impl SvmProblem {
    pub fn random(rng: &mut ChaCha8Rng, max_n: usize, max_dim: usize, c: f64) -> Self {
        let n = rng.gen_range(4..=max_n);
        let dim = rng.gen_range(1..=max_dim);
        let density = rng.gen_range(0.05..0.5);
        let xs: Vec<SparseBinaryVector> = (0..n)
            .map(|_| {
                SparseBinaryVector::new((0..dim as u32).filter(|_| rng.gen_bool(density)).collect())
            })
            .collect();
        let balance = rng.gen_range(0.2..0.8);
        let mut positive: Vec<bool> = (0..n).map(|_| rng.gen_bool(balance)).collect();
        positive[0] = true;
        positive[1] = false;
        Self {
            xs,
            positive,
            dim,
            c,
        }
    }

    fn sign(&self, i: usize) -> f64 {
        if self.positive[i] {
            1.0
        } else {
            -1.0
        }
    }

    fn dot(&self, i: usize, w: &[f64]) -> f64 {
        self.xs[i].ids().iter().map(|&j| w[j as usize]).sum()
    }

    /// ½‖w‖² + C Σ hinge, written out directly.
    pub fn primal(&self, w: &[f64], b: f64) -> f64 {
        let reg: f64 = w.iter().map(|v| v * v).sum::<f64>() / 2.0;
        let loss: f64 = (0..self.xs.len())
            .map(|i| (1.0 - self.sign(i) * (self.dot(i, w) + b)).max(0.0))
            .sum();
        reg + self.c * loss
    }

    /// Best bias for fixed `w`: the hinge sum is piecewise linear in `b`
    /// with kinks at `y_i - w·x_i`, so its minimum sits on a kink.
    pub fn best_bias(&self, w: &[f64]) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..self.xs.len() {
            let b = self.sign(i) - self.dot(i, w);
            let f = self.primal(w, b);
            if f < best.0 {
                best = (f, b);
            }
        }
        best.1
    }

    fn weights_of(&self, alpha: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.dim];
        for (i, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                for &j in self.xs[i].ids() {
                    w[j as usize] += a * self.sign(i);
                }
            }
        }
        w
    }

    /// Projects onto {0 ≤ α ≤ C, Σ y_i α_i = 0} by bisection on the
    /// multiplier of the equality constraint.
    fn project(&self, v: &[f64]) -> Vec<f64> {
        let at = |nu: f64| -> Vec<f64> {
            v.iter()
                .enumerate()
                .map(|(i, &vi)| (vi - nu * self.sign(i)).clamp(0.0, self.c))
                .collect()
        };
        let balance =
            |a: &[f64]| -> f64 { a.iter().enumerate().map(|(i, &ai)| self.sign(i) * ai).sum() };
        let span = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + self.c + 1.0;
        let (mut lo, mut hi) = (-span, span);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if balance(&at(mid)) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(0.5 * (lo + hi))
    }

    fn largest_eigenvalue(&self) -> f64 {
        // power iteration on XᵀX
        let mut v = vec![1.0; self.dim];
        let mut lambda = 0.0;
        for _ in 0..1000 {
            let xv: Vec<f64> = (0..self.xs.len()).map(|i| self.dot(i, &v)).collect();
            let mut next = vec![0.0; self.dim];
            for (i, s) in xv.iter().enumerate() {
                for &j in self.xs[i].ids() {
                    next[j as usize] += s;
                }
            }
            let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 1.0;
            }
            lambda = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = next.into_iter().map(|x| x / norm).collect();
        }
        lambda
    }

    /// Certified near-optimum: returns the primal value at the recovered
    /// solution and the dual lower bound of the final iterate.
    pub fn solve_oracle(&self, rel_gap: f64, max_steps: usize) -> OracleSolution {
        let n = self.xs.len();
        let step = 1.0 / (1.1 * self.largest_eigenvalue());
        let mut alpha = self.project(&vec![0.0; n]);
        let mut prev = alpha.clone();
        let mut momentum = 1.0f64;
        let mut best = OracleSolution {
            primal: f64::INFINITY,
            dual: f64::NEG_INFINITY,
            weights: vec![0.0; self.dim],
            bias: 0.0,
            steps: 0,
        };
        for k in 0..max_steps {
            let t_next = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
            let beta = (momentum - 1.0) / t_next;
            let z: Vec<f64> = alpha
                .iter()
                .zip(&prev)
                .map(|(a, p)| a + beta * (a - p))
                .collect();
            // gradient of ½αᵀQα − Σα at z
            let w = self.weights_of(&z);
            let v: Vec<f64> = (0..n)
                .map(|i| z[i] - step * (self.sign(i) * self.dot(i, &w) - 1.0))
                .collect();
            let next = self.project(&v);
            let restart: f64 = z
                .iter()
                .zip(&next)
                .zip(&alpha)
                .map(|((zi, ni), ai)| (zi - ni) * (ni - ai))
                .sum();
            prev = std::mem::replace(&mut alpha, next);
            momentum = if restart > 0.0 { 1.0 } else { t_next };

            if k % 50 == 0 || k + 1 == max_steps {
                let w = self.weights_of(&alpha);
                let b = self.best_bias(&w);
                let primal = self.primal(&w, b);
                let dual = alpha.iter().sum::<f64>() - w.iter().map(|x| x * x).sum::<f64>() / 2.0;
                if primal < best.primal {
                    best.primal = primal;
                    best.weights = w;
                    best.bias = b;
                }
                best.dual = best.dual.max(dual);
                best.steps = k + 1;
                if best.primal - best.dual <= rel_gap * best.primal.abs().max(1.0) {
                    break;
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub primal: f64,
    pub dual: f64,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub steps: usize,
}

// ---------------------------------------------------------------------------
// Synthetic distantly-supervised corpora

pub struct SyntheticSpec {
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Fraction of training posts whose text matches their label.
    pub purity: f64,
    /// Class-indicative words per post.
    pub signal_words: usize,
    /// Shared noise words per post.
    pub noise_words: usize,
    /// Put the class signal in hashtags; test posts then use the bare word
    /// half of the time.
    pub hashtag_signal: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            train_per_class: 2000,
            test_per_class: 100,
            purity: 0.8,
            signal_words: 3,
            noise_words: 6,
            hashtag_signal: false,
            seed: 7,
        }
    }
}

const CLASS_VOCABULARY: usize = 60;
const NOISE_VOCABULARY: usize = 400;

fn class_word(class: usize, j: usize) -> String {
    format!("k{class}w{j}")
}

fn post(rng: &mut ChaCha8Rng, class: usize, spec: &SyntheticSpec, test: bool) -> String {
    let mut words: Vec<String> = Vec::new();
    for _ in 0..spec.signal_words {
        // skewed draw: low word ids are more common
        let j = (rng.gen_range(0.0f64..1.0).powi(2) * CLASS_VOCABULARY as f64) as usize;
        let w = class_word(class, j);
        let hashtag = spec.hashtag_signal && !(test && rng.gen_bool(0.5));
        words.push(if hashtag { format!("#{w}") } else { w });
    }
    for _ in 0..spec.noise_words {
        let j = (rng.gen_range(0.0f64..1.0).powi(2) * NOISE_VOCABULARY as f64) as usize;
        words.push(format!("n{j}"));
    }
    words.shuffle(rng);
    words.join(" ")
}

/// Training examples carry silver labels: with probability `1 - purity`
/// the text comes from a different class than the label.
pub fn synthetic_corpus(
    classes: &[ClassId],
    spec: &SyntheticSpec,
) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = classes.len();
    let mut train = Vec::with_capacity(k * spec.train_per_class);
    let mut timestamp = 1_400_000_000i64;
    for _ in 0..spec.train_per_class {
        for (c, label) in classes.iter().enumerate() {
            let source = if rng.gen_bool(spec.purity) {
                c
            } else {
                (c + rng.gen_range(1..k)) % k
            };
            let mut ex = LabeledExample::new(post(&mut rng, source, spec, false), label.clone());
            ex.id = Some(format!("s{}", train.len()));
            ex.timestamp = Some(timestamp);
            timestamp += 1;
            train.push(ex);
        }
    }
    let mut test = Vec::with_capacity(k * spec.test_per_class);
    for _ in 0..spec.test_per_class {
        for (c, label) in classes.iter().enumerate() {
            let mut ex = LabeledExample::new(post(&mut rng, c, spec, true), label.clone());
            ex.id = Some(format!("g{}", test.len()));
            ex.timestamp = Some(timestamp);
            timestamp += 1;
            test.push(ex);
        }
    }
    (train, test)
}

pub fn fine_classes() -> Vec<ClassId> {
    ClassScheme::default_scheme().class_list().to_vec()
}

/// Printed per-class (precision, recall, F1) rows of the reference table.
pub fn reference_metrics() -> BTreeMap<String, (f64, f64, f64)> {
    let text = std::fs::read_to_string(data_path("reference_metrics.tsv")).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (
                f[0].to_owned(),
                (
                    f[1].parse().unwrap(),
                    f[2].parse().unwrap(),
                    f[3].parse().unwrap(),
                ),
            )
        })
        .collect()
}
