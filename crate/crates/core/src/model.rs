//! Hypothesis, loss, transport cost and confidence shared by every solver.
//!
//! Features carry an always-1 trailing bias slot, so a `q`-dimensional input
//! becomes a `(q+1)`-vector and the linear logistic model needs no separate
//! intercept. Labels are stored once and exposed through two numeric views:
//! the loss view `y ∈ {0, 1}` used by every likelihood computation and the
//! cost view `s ∈ {+1, −1}` used by every transport computation.

use crate::error::{Error, Result};

/// A point of the feature space, bias slot included.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    /// Wraps raw coordinates that already include the bias slot.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Empty("feature vector"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature coordinate".into()));
        }
        Ok(Self(coords))
    }

    /// Appends the bias coordinate to raw features.
    pub fn with_bias(mut raw: Vec<f64>) -> Result<Self> {
        raw.push(1.0);
        Self::new(raw)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    /// Coordinates without the trailing bias slot.
    pub fn features(&self) -> &[f64] {
        &self.0[..self.0.len() - 1]
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn distance(&self, other: &FeatureVector) -> Result<f64> {
        Error::check_dim(self.dim(), other.dim())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

impl std::ops::Index<usize> for FeatureVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Binary class tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    /// The label set in index order: `k = 0` is negative, `k = 1` positive.
    pub const ALL: [Label; 2] = [Label::Negative, Label::Positive];
    pub const COUNT: usize = 2;

    pub fn index(self) -> usize {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn from_index(k: usize) -> Result<Self> {
        Label::ALL
            .get(k)
            .copied()
            .ok_or(Error::IndexOutOfRange { index: k, len: Label::COUNT })
    }

    /// Loss view: 1 for positive, 0 for negative.
    pub fn loss_view(self) -> f64 {
        match self {
            Label::Negative => 0.0,
            Label::Positive => 1.0,
        }
    }

    /// Cost view: +1 for positive, −1 for negative.
    pub fn cost_view(self) -> f64 {
        match self {
            Label::Negative => -1.0,
            Label::Positive => 1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }

    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

/// Weights of the linear logistic model, bias included.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta(pub Vec<f64>);

impl Theta {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// ℓ2 norm of the non-bias block.
    pub fn feature_norm(&self) -> f64 {
        norm(&self.0[..self.0.len().saturating_sub(1)])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|w| w.is_finite())
    }

    pub fn neg(&self) -> Self {
        Self(self.0.iter().map(|w| -w).collect())
    }

    pub fn dot(&self, x: &FeatureVector) -> Result<f64> {
        Error::check_dim(self.dim(), x.dim())?;
        Ok(dot(&self.0, x.coords()))
    }
}

/// Transport cost `‖x − x′‖₂ + (κ/2)|s − s′|` with cost-view labels `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportCostSpec {
    kappa: f64,
}

impl TransportCostSpec {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidArgument(format!("kappa must be finite and >= 0, got {kappa}")));
        }
        Ok(Self { kappa })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Label part of the cost: exactly κ on a mismatch.
    pub fn label_cost(&self, a: Label, b: Label) -> f64 {
        0.5 * self.kappa * (a.cost_view() - b.cost_view()).abs()
    }

    pub fn cost(&self, z: &LabeledSample, z2: &LabeledSample) -> Result<f64> {
        Ok(z.x.distance(&z2.x)? + self.label_cost(z.y, z2.y))
    }
}

impl Default for TransportCostSpec {
    fn default() -> Self {
        Self { kappa: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: FeatureVector,
    pub y: Label,
}

impl LabeledSample {
    pub fn new(x: FeatureVector, y: Label) -> Self {
        Self { x, y }
    }
}

/// Labeled sample set; the empirical measure puts weight `1/N_l` on each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<LabeledSample>,
}

impl LabeledDataset {
    pub fn new(samples: Vec<LabeledSample>) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("labeled dataset"))?;
        let dim = first.x.dim();
        for s in &samples {
            Error::check_dim(dim, s.x.dim())?;
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].x.dim()
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn get(&self, i: usize) -> Result<&LabeledSample> {
        self.samples
            .get(i)
            .ok_or(Error::IndexOutOfRange { index: i, len: self.samples.len() })
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledSample> {
        self.samples.iter()
    }

    /// Number of samples carrying each label, indexed by [`Label::index`].
    pub fn label_counts(&self) -> [usize; Label::COUNT] {
        let mut counts = [0; Label::COUNT];
        for s in &self.samples {
            counts[s.y.index()] += 1;
        }
        counts
    }

    pub fn features(&self) -> UnlabeledDataset {
        UnlabeledDataset { points: self.samples.iter().map(|s| s.x.clone()).collect() }
    }

    /// Appends a sample, keeping the dimension invariant.
    pub fn push(&mut self, sample: LabeledSample) -> Result<()> {
        Error::check_dim(self.dim(), sample.x.dim())?;
        self.samples.push(sample);
        Ok(())
    }
}

/// Unlabeled feature sample; its empirical measure stands in for the feature marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    points: Vec<FeatureVector>,
}

impl UnlabeledDataset {
    pub fn new(points: Vec<FeatureVector>) -> Result<Self> {
        let first = points.first().ok_or(Error::Empty("unlabeled dataset"))?;
        let dim = first.dim();
        for p in &points {
            Error::check_dim(dim, p.dim())?;
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn points(&self) -> &[FeatureVector] {
        &self.points
    }

    pub fn get(&self, j: usize) -> Result<&FeatureVector> {
        self.points
            .get(j)
            .ok_or(Error::IndexOutOfRange { index: j, len: self.points.len() })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
pub(crate) fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Logistic loss from a precomputed score `⟨θ, x⟩`.
pub(crate) fn loss_from_score(score: f64, y: Label) -> f64 {
    match y {
        Label::Positive => softplus(-score),
        Label::Negative => softplus(score),
    }
}

/// `P(y = 1 | x) = σ(⟨θ, x⟩)`.
pub fn logistic_predict(theta: &Theta, x: &FeatureVector) -> Result<f64> {
    Ok(sigmoid(theta.dot(x)?))
}

/// Negative log-likelihood of `y` under [`logistic_predict`].
pub fn logistic_loss(theta: &Theta, x: &FeatureVector, y: Label) -> Result<f64> {
    Ok(loss_from_score(theta.dot(x)?, y))
}

/// `(σ(⟨θ,x⟩) − y)·x` with the loss-view label.
pub fn loss_grad_theta(theta: &Theta, x: &FeatureVector, y: Label) -> Result<Vec<f64>> {
    let r = sigmoid(theta.dot(x)?) - y.loss_view();
    Ok(x.coords().iter().map(|xi| r * xi).collect())
}

pub fn transport_cost(z: &LabeledSample, z2: &LabeledSample, spec: &TransportCostSpec) -> Result<f64> {
    spec.cost(z, z2)
}

/// `max{h(x), 1 − h(x)}`.
pub fn confidence(theta: &Theta, x: &FeatureVector) -> Result<f64> {
    let p = logistic_predict(theta, x)?;
    Ok(p.max(1.0 - p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(c: &[f64]) -> FeatureVector {
        FeatureVector::new(c.to_vec()).unwrap()
    }

    #[test]
    fn predict_examples() {
        let x = fv(&[1.0, 1.0]);
        assert_eq!(logistic_predict(&Theta::zeros(2), &x).unwrap(), 0.5);
        let p = logistic_predict(&Theta(vec![1.0, 0.0]), &x).unwrap();
        assert!((p - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((p - 0.731059).abs() < 1e-6);
        let mut last = 0.0;
        for t in [1.0, 10.0, 100.0, 1000.0] {
            let p = logistic_predict(&Theta(vec![t, 0.0]), &x).unwrap();
            assert!(p >= last);
            last = p;
        }
        assert_eq!(last, 1.0);
    }

    #[test]
    fn loss_examples() {
        let x = fv(&[1.0, 1.0]);
        let ln2 = std::f64::consts::LN_2;
        assert!((logistic_loss(&Theta::zeros(2), &x, Label::Positive).unwrap() - ln2).abs() < 1e-15);
        let th = Theta(vec![1.0, 0.0]);
        let lp = logistic_loss(&th, &x, Label::Positive).unwrap();
        let ln = logistic_loss(&th, &x, Label::Negative).unwrap();
        assert!((lp - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-15);
        assert!((ln - (1.0 + 1.0f64.exp()).ln()).abs() < 1e-15);
        assert!((lp - 0.313262).abs() < 1e-6);
        assert!((ln - 1.313262).abs() < 1e-6);
    }

    #[test]
    fn loss_is_stable_for_large_scores() {
        let x = fv(&[1.0, 1.0]);
        let th = Theta(vec![800.0, 0.0]);
        assert_eq!(logistic_loss(&th, &x, Label::Positive).unwrap(), 0.0);
        assert_eq!(logistic_loss(&th, &x, Label::Negative).unwrap(), 800.0);
        assert_eq!(logistic_loss(&th.neg(), &x, Label::Positive).unwrap(), 800.0);
    }

    #[test]
    fn grad_examples() {
        let g = loss_grad_theta(&Theta::zeros(2), &fv(&[2.0, 0.0]), Label::Positive).unwrap();
        assert_eq!(g, vec![-1.0, 0.0]);
        let g = loss_grad_theta(&Theta::zeros(2), &fv(&[2.0, 0.0]), Label::Negative).unwrap();
        assert_eq!(g, vec![1.0, 0.0]);
        let g = loss_grad_theta(&Theta(vec![1.0, 0.0]), &fv(&[1.0, 1.0]), Label::Positive).unwrap();
        assert!((g[0] + 0.268941).abs() < 1e-6 && (g[1] + 0.268941).abs() < 1e-6);
    }

    #[test]
    fn cost_examples() {
        let spec = TransportCostSpec::new(1.0).unwrap();
        let a = LabeledSample::new(fv(&[0.0, 0.0, 1.0]), Label::Positive);
        let b = LabeledSample::new(fv(&[3.0, 4.0, 1.0]), Label::Positive);
        assert_eq!(transport_cost(&a, &a, &spec).unwrap(), 0.0);
        assert_eq!(transport_cost(&a, &b, &spec).unwrap(), 5.0);
        let flip = LabeledSample::new(a.x.clone(), Label::Negative);
        assert_eq!(transport_cost(&a, &flip, &spec).unwrap(), 1.0);
        assert!(TransportCostSpec::new(-1.0).is_err());
    }

    #[test]
    fn confidence_examples() {
        let x = fv(&[1.0, 1.0]);
        assert_eq!(confidence(&Theta::zeros(2), &x).unwrap(), 0.5);
        // σ(t) = 0.9 at t = ln 9.
        let t = 9.0f64.ln();
        let c = confidence(&Theta(vec![t, 0.0]), &x).unwrap();
        assert!((c - 0.9).abs() < 1e-12);
        let c = confidence(&Theta(vec![-t, 0.0]), &x).unwrap();
        assert!((c - 0.9).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let x = fv(&[1.0, 1.0, 1.0]);
        let th = Theta::zeros(2);
        assert!(matches!(logistic_predict(&th, &x), Err(Error::DimensionMismatch { .. })));
        assert!(logistic_loss(&th, &x, Label::Positive).is_err());
        assert!(loss_grad_theta(&th, &x, Label::Positive).is_err());
        assert!(confidence(&th, &x).is_err());
        let a = LabeledSample::new(fv(&[0.0, 1.0]), Label::Positive);
        let b = LabeledSample::new(x, Label::Positive);
        assert!(transport_cost(&a, &b, &TransportCostSpec::default()).is_err());
    }

    #[test]
    fn label_views_are_in_bijection() {
        for y in Label::ALL {
            assert_eq!(y.cost_view(), 2.0 * y.loss_view() - 1.0);
            assert_eq!(Label::from_index(y.index()).unwrap(), y);
            assert_eq!(y.flipped().flipped(), y);
        }
    }
}
