//! Softmax regression and a one-hidden-layer tanh MLP, both trained on
//! multiclass cross-entropy, with hand-written per-example gradients.
//!
//! Parameter layout in `theta`:
//! - logistic: `W (classes × input)`, then `b (classes)`
//! - mlp: `W1 (hidden × input)`, `b1 (hidden)`, `W2 (classes × hidden)`, `b2 (classes)`

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Example};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModelLayout {
    pub input_dim: usize,
    /// `None` for softmax regression.
    pub hidden_dim: Option<usize>,
    pub num_classes: usize,
}

impl ModelLayout {
    pub fn logistic(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: None,
            num_classes,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: Some(hidden_dim),
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes < 2 || self.hidden_dim == Some(0) {
            return Err(Error::invalid(format!("invalid model layout {self}")));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        match self.hidden_dim {
            None => self.num_classes * (self.input_dim + 1),
            Some(h) => h * (self.input_dim + 1) + self.num_classes * (h + 1),
        }
    }

    /// Parses the [`Display`](fmt::Display) form: `lr(20->2)` or `mlp(20-16->2)`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("bad model layout {s:?}; expected lr(IN->C) or mlp(IN-H->C)"));
        let s = s.trim();
        let (kind, rest) = s.split_once('(').ok_or_else(bad)?;
        let inner = rest.strip_suffix(')').ok_or_else(bad)?;
        let (left, classes) = inner.split_once("->").ok_or_else(bad)?;
        let classes: usize = classes.trim().parse().map_err(|_| bad())?;
        let layout = match kind.trim() {
            "lr" => Self::logistic(left.trim().parse().map_err(|_| bad())?, classes),
            "mlp" => {
                let (i, h) = left.split_once('-').ok_or_else(bad)?;
                Self::mlp(
                    i.trim().parse().map_err(|_| bad())?,
                    h.trim().parse().map_err(|_| bad())?,
                    classes,
                )
            }
            _ => return Err(bad()),
        };
        layout.validate()?;
        Ok(layout)
    }
}

impl fmt::Display for ModelLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hidden_dim {
            None => write!(f, "lr({}->{})", self.input_dim, self.num_classes),
            Some(h) => write!(f, "mlp({}-{}->{})", self.input_dim, h, self.num_classes),
        }
    }
}

impl TryFrom<String> for ModelLayout {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::parse(&s)
    }
}

impl From<ModelLayout> for String {
    fn from(l: ModelLayout) -> String {
        l.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layout: ModelLayout,
    pub theta: Vec<f64>,
}

impl ModelParams {
    pub fn new(layout: ModelLayout, theta: Vec<f64>) -> Result<Self> {
        layout.validate()?;
        if theta.len() != layout.num_params() {
            return Err(Error::invalid(format!(
                "layout {layout} needs {} parameters, got {}",
                layout.num_params(),
                theta.len()
            )));
        }
        Ok(Self { layout, theta })
    }

    pub fn zeros(layout: ModelLayout) -> Self {
        Self {
            layout,
            theta: vec![0.0; layout.num_params()],
        }
    }

    /// Zeros for softmax regression; `U(−1/√fan_in, 1/√fan_in)` weights and
    /// zero biases for the MLP.
    pub fn init<R: Rng + ?Sized>(layout: ModelLayout, rng: &mut R) -> Self {
        let mut p = Self::zeros(layout);
        if let Some(h) = layout.hidden_dim {
            let d = layout.input_dim;
            let c = layout.num_classes;
            let b1 = 1.0 / (d as f64).sqrt();
            let b2 = 1.0 / (h as f64).sqrt();
            let (w1, rest) = p.theta.split_at_mut(h * d);
            let (_, rest) = rest.split_at_mut(h);
            let (w2, _) = rest.split_at_mut(c * h);
            w1.iter_mut().for_each(|w| *w = rng.random_range(-b1..b1));
            w2.iter_mut().for_each(|w| *w = rng.random_range(-b2..b2));
        }
        p
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|x| x.is_finite())
    }

    fn check(&self, ex: &Example<'_>) -> Result<()> {
        if ex.features.len() != self.layout.input_dim {
            return Err(Error::invalid(format!(
                "example has {} features, layout {} expects {}",
                ex.features.len(),
                self.layout,
                self.layout.input_dim
            )));
        }
        if ex.label >= self.layout.num_classes {
            return Err(Error::invalid(format!(
                "label {} out of range for layout {}",
                ex.label, self.layout
            )));
        }
        Ok(())
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let d = self.layout.input_dim;
        let c = self.layout.num_classes;
        match self.layout.hidden_dim {
            None => {
                let (w, b) = self.theta.split_at(c * d);
                Forward {
                    hidden: Vec::new(),
                    logits: affine(w, b, x),
                }
            }
            Some(h) => {
                let (w1, rest) = self.theta.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(c * h);
                let hidden: Vec<f64> = affine(w1, b1, x).into_iter().map(f64::tanh).collect();
                let logits = affine(w2, b2, &hidden);
                Forward { hidden, logits }
            }
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).logits
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let logits = self.logits(x);
        let mut best = 0;
        for (k, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = k;
            }
        }
        best
    }

    /// Cross-entropy loss on one example.
    pub fn loss(&self, ex: &Example<'_>) -> Result<f64> {
        self.check(ex)?;
        let logits = self.logits(ex.features);
        Ok(log_sum_exp(&logits) - logits[ex.label])
    }

    /// Gradient of [`loss`](Self::loss) with respect to `theta`.
    pub fn example_gradient(&self, ex: &Example<'_>) -> Result<Vec<f64>> {
        self.check(ex)?;
        let d = self.layout.input_dim;
        let c = self.layout.num_classes;
        let x = ex.features;
        let fwd = self.forward(x);
        // ∂loss/∂logits = softmax − onehot
        let mut delta = softmax(&fwd.logits);
        delta[ex.label] -= 1.0;

        let mut grad = vec![0.0; self.theta.len()];
        match self.layout.hidden_dim {
            None => {
                let (gw, gb) = grad.split_at_mut(c * d);
                outer_into(gw, &delta, x);
                gb.copy_from_slice(&delta);
            }
            Some(h) => {
                let w2 = &self.theta[h * d + h..h * d + h + c * h];
                let (gw1, rest) = grad.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(c * h);
                outer_into(gw2, &delta, &fwd.hidden);
                gb2.copy_from_slice(&delta);
                // back through W2 and tanh
                for j in 0..h {
                    let back: f64 = (0..c).map(|k| w2[k * h + j] * delta[k]).sum();
                    gb1[j] = back * (1.0 - fwd.hidden[j] * fwd.hidden[j]);
                }
                outer_into(gw1, gb1, x);
            }
        }
        Ok(grad)
    }

    pub fn accuracy(&self, data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let correct = data.examples().filter(|e| self.predict(e.features) == e.label).count();
        correct as f64 / data.len() as f64
    }
}

struct Forward {
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(r, bias)| bias + w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
        .collect()
}

fn outer_into(out: &mut [f64], rows: &[f64], cols: &[f64]) {
    for (r, &u) in rows.iter().enumerate() {
        for (o, &v) in out[r * cols.len()..(r + 1) * cols.len()].iter_mut().zip(cols) {
            *o = u * v;
        }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// One gradient row per example in `batch`.
pub fn per_example_gradients(params: &ModelParams, batch: &[Example<'_>]) -> Result<Vec<Vec<f64>>> {
    if batch.is_empty() {
        return Err(Error::invalid("batch is empty"));
    }
    batch.iter().map(|ex| params.example_gradient(ex)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_counts() {
        assert_eq!(ModelLayout::logistic(20, 2).num_params(), 42);
        assert_eq!(ModelLayout::mlp(4, 3, 2).num_params(), 3 * 5 + 2 * 4);
    }

    #[test]
    fn layout_text_round_trip() {
        for l in [ModelLayout::logistic(20, 2), ModelLayout::mlp(8, 16, 3)] {
            assert_eq!(ModelLayout::parse(&l.to_string()).unwrap(), l);
        }
        assert!(ModelLayout::parse("cnn(3->2)").is_err());
        assert!(ModelLayout::parse("lr(3->1)").is_err());
    }

    #[test]
    fn bias_gradients_cancel_on_balanced_pair() {
        let p = ModelParams::zeros(ModelLayout::logistic(2, 2));
        let x = [0.3, -1.2];
        let batch = [Example { features: &x, label: 0 }, Example { features: &x, label: 1 }];
        let g = per_example_gradients(&p, &batch).unwrap();
        for (a, b) in g[0][4..6].iter().zip(&g[1][4..6]) {
            assert_eq!(a + b, 0.0);
        }
    }

    #[test]
    fn duplicated_examples_give_identical_rows() {
        let mut r = crate::rng::stream(3, 0);
        let p = ModelParams::init(ModelLayout::mlp(3, 4, 3), &mut r);
        let x = [0.5, 0.1, -0.7];
        let ex = Example { features: &x, label: 2 };
        let g = per_example_gradients(&p, &[ex, ex]).unwrap();
        assert_eq!(g[0], g[1]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = ModelParams::zeros(ModelLayout::logistic(3, 2));
        let x = [1.0, 2.0];
        assert!(per_example_gradients(&p, &[Example { features: &x, label: 0 }]).is_err());
        let x = [1.0, 2.0, 3.0];
        assert!(per_example_gradients(&p, &[Example { features: &x, label: 2 }]).is_err());
        assert!(per_example_gradients(&p, &[]).is_err());
        assert!(ModelParams::new(ModelLayout::logistic(3, 2), vec![0.0; 3]).is_err());
    }

    #[test]
    fn mlp_init_within_fan_in_bounds() {
        let mut r = crate::rng::stream(5, 0);
        let l = ModelLayout::mlp(16, 4, 2);
        let p = ModelParams::init(l, &mut r);
        assert!(p.theta[..64].iter().all(|w| w.abs() < 0.25));
        assert!(p.theta[64..68].iter().all(|&b| b == 0.0));
        assert!(p.theta[68..76].iter().all(|w| w.abs() < 0.5));
        assert_eq!(ModelParams::init(ModelLayout::logistic(3, 2), &mut r), ModelParams::zeros(ModelLayout::logistic(3, 2)));
    }
}
