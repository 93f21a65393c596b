//! k-nearest-neighbour and random-forest classifiers over material labels.
//!
//! Votes are tallied per class index and ties go to the smaller index.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MaterialClass;
use crate::par::{map_indexed, Execution};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: MaterialClass,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: MaterialClass) -> Self {
        Self { features, label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierKind {
    Knn {
        k: usize,
    },
    RandomForest {
        trees: usize,
        max_depth: usize,
        feature_subsample: usize,
    },
}

impl ClassifierKind {
    pub const fn default_knn() -> Self {
        ClassifierKind::Knn { k: 3 }
    }

    /// 50 trees, depth 8, 3 of 6 features per split.
    pub const fn default_forest() -> Self {
        ClassifierKind::RandomForest {
            trees: 50,
            max_depth: 8,
            feature_subsample: 3,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ClassifierKind::Knn { .. } => "k-NN",
            ClassifierKind::RandomForest { .. } => "RF",
        }
    }
}

/// Index of the largest vote count; ties resolve to the smaller index.
fn plurality(votes: &[u32; MaterialClass::COUNT]) -> MaterialClass {
    let mut best = 0;
    for (i, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = i;
        }
    }
    MaterialClass::ALL[best]
}

/// Per-feature z-scoring fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &[Sample]) -> Result<Self> {
        let first = data.first().ok_or_else(|| Error::arg("empty dataset"))?;
        let dim = first.features.len();
        let n = data.len() as f64;
        let mut mean = vec![0.0; dim];
        for s in data {
            for (m, x) in mean.iter_mut().zip(&s.features) {
                *m += x / n;
            }
        }
        let mut scale = vec![0.0; dim];
        for s in data {
            for ((v, x), m) in scale.iter_mut().zip(&s.features).zip(&mean) {
                *v += (x - m).powi(2) / n;
            }
        }
        for v in &mut scale {
            *v = if *v > 0.0 { v.sqrt() } else { 1.0 };
        }
        Ok(Self { mean, scale })
    }

    pub fn transform(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn transform_all(&self, data: &[Sample]) -> Vec<Sample> {
        data.iter()
            .map(|s| Sample::new(self.transform(&s.features), s.label))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(MaterialClass),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> MaterialClass {
        let mut ix = 0;
        loop {
            match self.nodes[ix] {
                Node::Leaf(c) => return c,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => ix = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

fn gini(counts: &[u32; MaterialClass::COUNT], n: u32) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn class_counts(data: &[Sample], idx: &[usize]) -> [u32; MaterialClass::COUNT] {
    let mut c = [0u32; MaterialClass::COUNT];
    for &i in idx {
        c[data[i].label.index()] += 1;
    }
    c
}

struct TreeBuilder<'a> {
    data: &'a [Sample],
    max_depth: usize,
    feature_subsample: usize,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    /// Best Gini split over a random feature subset: (feature, threshold, weighted impurity).
    fn best_split(&self, idx: &[usize], rng: &mut RngStream) -> Option<(usize, f64, f64)> {
        let dim = self.data[0].features.len();
        let m = self.feature_subsample.clamp(1, dim);
        let total = class_counts(self.data, idx);
        let n = idx.len() as u32;
        let mut best: Option<(usize, f64, f64)> = None;
        for feature in sample_indices(rng, dim, m).into_iter() {
            let mut order: Vec<usize> = idx.to_vec();
            order.sort_by(|&a, &b| {
                self.data[a].features[feature].total_cmp(&self.data[b].features[feature])
            });
            let mut left = [0u32; MaterialClass::COUNT];
            for k in 0..order.len() - 1 {
                left[self.data[order[k]].label.index()] += 1;
                let lo = self.data[order[k]].features[feature];
                let hi = self.data[order[k + 1]].features[feature];
                if lo == hi {
                    continue;
                }
                let nl = (k + 1) as u32;
                let mut right = total;
                for c in 0..MaterialClass::COUNT {
                    right[c] -= left[c];
                }
                let score = (nl as f64 * gini(&left, nl) + (n - nl) as f64 * gini(&right, n - nl))
                    / n as f64;
                if best.is_none_or(|(_, _, s)| score < s) {
                    best = Some((feature, 0.5 * (lo + hi), score));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: &[usize], depth: usize, rng: &mut RngStream) -> usize {
        let counts = class_counts(self.data, idx);
        let node_ix = self.nodes.len();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if depth >= self.max_depth || pure || idx.len() < 2 {
            self.nodes.push(Node::Leaf(plurality(&counts)));
            return node_ix;
        }
        let Some((feature, threshold, _)) = self.best_split(idx, rng) else {
            self.nodes.push(Node::Leaf(plurality(&counts)));
            return node_ix;
        };
        self.nodes.push(Node::Leaf(plurality(&counts)));
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.data[i].features[feature] <= threshold);
        let left = self.grow(&l, depth + 1, rng);
        let right = self.grow(&r, depth + 1, rng);
        self.nodes[node_ix] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        node_ix
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Fitted {
    Knn { k: usize, data: Vec<Sample> },
    Forest { trees: Vec<Tree> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub kind: ClassifierKind,
    fitted: Fitted,
}

/// Fits a classifier. Forest trees grow on bootstrap resamples, each with its
/// own stream forked from `rng`, so the result is independent of `mode`.
pub fn fit(kind: ClassifierKind, dataset: &[Sample], rng: &mut RngStream) -> Result<ClassifierModel> {
    fit_with(kind, dataset, rng, Execution::default())
}

pub fn fit_with(
    kind: ClassifierKind,
    dataset: &[Sample],
    rng: &mut RngStream,
    mode: Execution,
) -> Result<ClassifierModel> {
    if dataset.is_empty() {
        return Err(Error::arg("cannot fit on an empty dataset"));
    }
    let dim = dataset[0].features.len();
    if dim == 0 || dataset.iter().any(|s| s.features.len() != dim) {
        return Err(Error::arg("samples must share a non-zero feature dimension"));
    }
    let fitted = match kind {
        ClassifierKind::Knn { k } => {
            if k == 0 {
                return Err(Error::arg("k must be >= 1"));
            }
            if dataset.len() < k {
                return Err(Error::arg(format!(
                    "k-NN with k={k} needs at least {k} examples, got {}",
                    dataset.len()
                )));
            }
            Fitted::Knn {
                k,
                data: dataset.to_vec(),
            }
        }
        ClassifierKind::RandomForest {
            trees,
            max_depth,
            feature_subsample,
        } => {
            if trees == 0 {
                return Err(Error::arg("forest needs at least one tree"));
            }
            let base = rng.random::<u64>();
            let n = dataset.len();
            let trees = map_indexed(mode, trees, |t| {
                let mut tr = RngStream::derive(base, &format!("tree-{t}"));
                let boot: Vec<usize> = (0..n).map(|_| tr.random_range(0..n)).collect();
                let mut b = TreeBuilder {
                    data: dataset,
                    max_depth,
                    feature_subsample,
                    nodes: Vec::new(),
                };
                b.grow(&boot, 0, &mut tr);
                Tree { nodes: b.nodes }
            });
            Fitted::Forest { trees }
        }
    };
    Ok(ClassifierModel { kind, fitted })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

pub fn predict(model: &ClassifierModel, features: &[f64]) -> MaterialClass {
    match &model.fitted {
        Fitted::Knn { k, data } => {
            let mut d: Vec<(f64, usize)> = data
                .iter()
                .enumerate()
                .map(|(i, s)| (sq_dist(&s.features, features), i))
                .collect();
            let k = (*k).min(d.len());
            d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut votes = [0u32; MaterialClass::COUNT];
            for &(_, i) in &d[..k] {
                votes[data[i].label.index()] += 1;
            }
            plurality(&votes)
        }
        Fitted::Forest { trees } => {
            let mut votes = [0u32; MaterialClass::COUNT];
            for t in trees {
                votes[t.predict(features).index()] += 1;
            }
            plurality(&votes)
        }
    }
}

impl ClassifierModel {
    pub fn predict(&self, features: &[f64]) -> MaterialClass {
        predict(self, features)
    }

    pub fn accuracy(&self, data: &[Sample]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let correct = data.iter().filter(|s| self.predict(&s.features) == s.label).count();
        correct as f64 / data.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use proptest::prelude::{prop, prop_assert_eq, proptest};
    use rand::Rng;
    use MaterialClass::*;

    fn s(x: &[f64], l: MaterialClass) -> Sample {
        Sample::new(x.to_vec(), l)
    }

    #[test]
    fn knn_one_recovers_training_label() {
        let data = vec![s(&[0.0, 0.0], Pet), s(&[5.0, 5.0], Wood), s(&[9.0, 1.0], Hdpe)];
        let m = fit(ClassifierKind::Knn { k: 1 }, &data, &mut derive_stream(1, "t")).unwrap();
        for x in &data {
            assert_eq!(m.predict(&x.features), x.label);
        }
    }

    #[test]
    fn knn_majority_and_tie_break() {
        let data = vec![s(&[1.0], Pet), s(&[1.1], Pet), s(&[0.9], Hdpe), s(&[50.0], Wood)];
        let m = fit(ClassifierKind::Knn { k: 3 }, &data, &mut derive_stream(1, "t")).unwrap();
        assert_eq!(m.predict(&[1.0]), Pet);

        let data = vec![s(&[1.0], Wood), s(&[-1.0], Aluminium), s(&[30.0], Pet)];
        let m = fit(ClassifierKind::Knn { k: 2 }, &data, &mut derive_stream(1, "t")).unwrap();
        assert_eq!(m.predict(&[0.0]), Aluminium);
    }

    #[test]
    fn fit_errors() {
        let mut r = derive_stream(1, "t");
        assert!(fit(ClassifierKind::default_knn(), &[], &mut r).is_err());
        assert!(fit(ClassifierKind::default_forest(), &[], &mut r).is_err());
        assert!(fit(ClassifierKind::Knn { k: 3 }, &[s(&[1.0], Pet)], &mut r).is_err());
        assert!(fit(ClassifierKind::Knn { k: 0 }, &[s(&[1.0], Pet)], &mut r).is_err());
    }

    #[test]
    fn forest_single_class() {
        let data: Vec<_> = (0..20).map(|i| s(&[i as f64, (i * 7 % 5) as f64], Ceramic)).collect();
        let m = fit(ClassifierKind::default_forest(), &data, &mut derive_stream(2, "t")).unwrap();
        for x in [[0.0, 0.0], [100.0, -3.0], [7.5, 2.0]] {
            assert_eq!(m.predict(&x), Ceramic);
        }
    }

    #[test]
    fn forest_separable_two_class() {
        // Class decided by the sign of x0 + x1 with a margin; x2 is noise.
        let mut r = derive_stream(4, "data");
        let mut data = vec![];
        while data.len() < 200 {
            let x: Vec<f64> = (0..3).map(|_| r.random_range(-10.0..10.0)).collect();
            let m = x[0] + x[1];
            if m.abs() < 1.0 {
                continue;
            }
            data.push(s(&x, if m > 0.0 { Pet } else { Wood }));
        }
        let kind = ClassifierKind::RandomForest {
            trees: 50,
            max_depth: 8,
            feature_subsample: 2,
        };
        let m = fit(kind, &data, &mut derive_stream(5, "t")).unwrap();
        assert!(m.accuracy(&data) >= 0.95, "{}", m.accuracy(&data));
    }

    #[test]
    fn forest_independent_of_execution_mode() {
        let mut r = derive_stream(6, "data");
        let data: Vec<_> = (0..120)
            .map(|i| {
                s(
                    &[r.random_range(0.0..1.0) + (i % 3) as f64, r.random_range(0.0..1.0)],
                    MaterialClass::ALL[i % 3],
                )
            })
            .collect();
        let kind = ClassifierKind::default_forest();
        let a = fit_with(kind, &data, &mut derive_stream(7, "t"), Execution::Sequential).unwrap();
        let b = fit_with(kind, &data, &mut derive_stream(7, "t"), Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn standardizer_centers_and_scales() {
        let data = vec![s(&[1.0, 10.0], Pet), s(&[3.0, 10.0], Pet)];
        let z = Standardizer::fit(&data).unwrap();
        assert_eq!(z.transform(&[2.0, 10.0]), [0.0, 0.0]);
        assert_eq!(z.transform(&[3.0, 11.0]), [1.0, 1.0]);
    }

    /// Independent nearest-neighbour scan.
    fn oracle(data: &[Sample], k: usize, x: &[f64]) -> MaterialClass {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.sort_by(|&a, &b| {
            let da: f64 = data[a].features.iter().zip(x).map(|(p, q)| (p - q) * (p - q)).sum();
            let db: f64 = data[b].features.iter().zip(x).map(|(p, q)| (p - q) * (p - q)).sum();
            da.partial_cmp(&db).unwrap().then(a.cmp(&b))
        });
        let mut votes = vec![0; 6];
        for &i in &order[..k] {
            votes[data[i].label as usize] += 1;
        }
        let max = *votes.iter().max().unwrap();
        MaterialClass::ALL[votes.iter().position(|&v| v == max).unwrap()]
    }

    proptest! {
        #[test]
        fn knn_matches_brute_force(
            pts in prop::collection::vec((prop::collection::vec(-5i32..5, 3), 0usize..6), 5..60),
            query in prop::collection::vec(-5i32..5, 3),
            k in 1usize..6,
        ) {
            // Integer coordinates force plenty of distance ties.
            let data: Vec<Sample> = pts.iter().map(|(x, l)| Sample::new(x.iter().map(|&v| v as f64).collect(), MaterialClass::ALL[*l])).collect();
            let q: Vec<f64> = query.iter().map(|&v| v as f64).collect();
            let m = fit(ClassifierKind::Knn { k }, &data, &mut derive_stream(0, "t")).unwrap();
            prop_assert_eq!(m.predict(&q), oracle(&data, k, &q));
        }
    }
}
