//! Cross-validated accuracy tables and separability statistics.

use rand::seq::SliceRandom;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::classifier::{fit_with, ClassifierKind, Sample, Standardizer};
use super::features::extract_features;
use super::stats::{kruskal_wallis, KruskalWallis};
use super::trace::{generate_trace, GeneratorSpec};
use crate::error::{Error, Result};
use crate::model::{Condition, Luminosity, MaterialClass, Medium};
use crate::par::{map_indexed, Execution};
use crate::rng::RngStream;

/// Stratified k-fold cross-validation; returns pooled held-out accuracy.
///
/// Indices are shuffled once with `rng`, then each class's examples are dealt
/// round-robin across folds. Folds train on standardized features and run in
/// parallel, each with a stream forked from `rng` before any fold starts.
pub fn kfold_cv(
    dataset: &[Sample],
    folds: usize,
    kind: ClassifierKind,
    rng: &mut RngStream,
) -> Result<f64> {
    kfold_cv_with(dataset, folds, kind, rng, Execution::default())
}

pub fn kfold_cv_with(
    dataset: &[Sample],
    folds: usize,
    kind: ClassifierKind,
    rng: &mut RngStream,
    mode: Execution,
) -> Result<f64> {
    if folds < 2 {
        return Err(Error::arg("cross-validation needs at least 2 folds"));
    }
    if dataset.len() < folds {
        return Err(Error::arg(format!(
            "{} examples cannot fill {folds} folds",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(rng);
    let mut fold_of = vec![0usize; dataset.len()];
    let mut dealt = [0usize; MaterialClass::COUNT];
    for &i in &order {
        let c = dataset[i].label.index();
        fold_of[i] = dealt[c] % folds;
        dealt[c] += 1;
    }
    let mut streams: Vec<RngStream> = (0..folds).map(|f| rng.fork(&format!("fold-{f}"))).collect();

    let results = map_indexed(mode, folds, |f| -> Result<(usize, usize)> {
        let train: Vec<Sample> = (0..dataset.len())
            .filter(|&i| fold_of[i] != f)
            .map(|i| dataset[i].clone())
            .collect();
        let test: Vec<&Sample> = (0..dataset.len())
            .filter(|&i| fold_of[i] == f)
            .map(|i| &dataset[i])
            .collect();
        if test.is_empty() {
            return Ok((0, 0));
        }
        let z = Standardizer::fit(&train)?;
        let mut r = streams[f].clone();
        let model = fit_with(kind, &z.transform_all(&train), &mut r, mode)?;
        let correct = test
            .iter()
            .filter(|s| model.predict(&z.transform(&s.features)) == s.label)
            .count();
        Ok((correct, test.len()))
    });
    streams.clear();
    let (mut correct, mut total) = (0, 0);
    for r in results {
        let (c, t) = r?;
        correct += c;
        total += t;
    }
    Ok(correct as f64 / total as f64)
}

/// Condition subsets of the accuracy table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionSubset {
    All,
    Ambient,
    Darkness,
    Air,
    Water,
}

impl ConditionSubset {
    pub const ROWS: [ConditionSubset; 5] = [
        ConditionSubset::All,
        ConditionSubset::Ambient,
        ConditionSubset::Darkness,
        ConditionSubset::Air,
        ConditionSubset::Water,
    ];

    pub fn conditions(self) -> Vec<Condition> {
        Condition::ALL
            .into_iter()
            .filter(|c| match self {
                ConditionSubset::All => true,
                ConditionSubset::Ambient => c.luminosity == Luminosity::Ambient,
                ConditionSubset::Darkness => c.luminosity == Luminosity::Darkness,
                ConditionSubset::Air => c.medium == Medium::Air,
                ConditionSubset::Water => c.medium == Medium::Water,
            })
            .collect()
    }

    pub fn label(self) -> &'static str {
        match self {
            ConditionSubset::All => "All conditions",
            ConditionSubset::Ambient => "Ambient",
            ConditionSubset::Darkness => "Darkness",
            ConditionSubset::Air => "Air",
            ConditionSubset::Water => "Underwater",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum GeneratorChoice {
    /// `paper-like`, `chance` or `separable`.
    Preset(String),
    Custom(GeneratorSpec),
}

impl Default for GeneratorChoice {
    fn default() -> Self {
        GeneratorChoice::Preset("paper-like".into())
    }
}

impl GeneratorChoice {
    pub fn resolve(&self) -> Result<GeneratorSpec> {
        let spec = match self {
            GeneratorChoice::Preset(name) => match name.as_str() {
                "paper-like" => GeneratorSpec::paper_like(),
                "chance" => GeneratorSpec::chance(),
                "separable" => GeneratorSpec::separable(),
                other => return Err(Error::config(format!("unknown generator preset '{other}'"))),
            },
            GeneratorChoice::Custom(spec) => spec.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub feature_subsample: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            trees: 50,
            max_depth: 8,
            feature_subsample: 3,
        }
    }
}

/// Sensing benchmark configuration (the `bench-sensing` input file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub generator: GeneratorChoice,
    /// Traces per (object, condition).
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    /// Each trace is cut into this many windows, one example per window.
    #[serde(default = "default_windows")]
    pub windows_per_trace: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_k")]
    pub knn_k: usize,
    #[serde(default)]
    pub forest: ForestParams,
}

fn default_reps() -> usize {
    6
}
fn default_windows() -> usize {
    1
}
fn default_folds() -> usize {
    6
}
fn default_k() -> usize {
    3
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            generator: GeneratorChoice::default(),
            repetitions: default_reps(),
            windows_per_trace: default_windows(),
            folds: default_folds(),
            knn_k: default_k(),
            forest: ForestParams::default(),
        }
    }
}

impl BenchConfig {
    pub fn knn(&self) -> ClassifierKind {
        ClassifierKind::Knn { k: self.knn_k }
    }

    pub fn forest(&self) -> ClassifierKind {
        ClassifierKind::RandomForest {
            trees: self.forest.trees,
            max_depth: self.forest.max_depth,
            feature_subsample: self.forest.feature_subsample,
        }
    }
}

/// Stream label of one trace; keeps traces identical across subsets.
fn trace_label(c: Condition, m: MaterialClass, rep: usize) -> String {
    format!("sensing.trace.{}.{}.{rep}", c.label(), m.as_str())
}

/// Feature examples for every (condition, object, repetition, window).
pub fn build_dataset(
    spec: &GeneratorSpec,
    conditions: &[Condition],
    repetitions: usize,
    windows_per_trace: usize,
    seed: u64,
    mode: Execution,
) -> Result<Vec<Sample>> {
    let jobs: Vec<(Condition, MaterialClass, usize)> = conditions
        .iter()
        .flat_map(|&c| {
            MaterialClass::ALL
                .into_iter()
                .flat_map(move |m| (0..repetitions).map(move |r| (c, m, r)))
        })
        .collect();
    let per_job = map_indexed(mode, jobs.len(), |j| -> Result<Vec<Sample>> {
        let (c, m, r) = jobs[j];
        let mut rng = RngStream::derive(seed, &trace_label(c, m, r));
        let trace = generate_trace(spec, m, c, &mut rng)?;
        trace
            .windows(windows_per_trace.max(1))
            .into_iter()
            .map(|w| Ok(Sample::new(extract_features(w)?.to_array().to_vec(), m)))
            .collect()
    });
    let mut out = Vec::new();
    for r in per_job {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub subset: ConditionSubset,
    pub label: String,
    pub examples: usize,
    pub knn: f64,
    pub random_forest: f64,
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub folds: usize,
    pub rows: Vec<BenchRow>,
    /// Separability per condition on 1-second window means.
    pub kruskal: Vec<(Condition, KruskalWallis)>,
}

impl BenchTable {
    pub fn row(&self, subset: ConditionSubset) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.subset == subset)
    }

    /// Plain-text table for terminals.
    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<28} {:>7} {:>7} {:>8}\n",
            "Condition", "k-NN", "RF", "Average"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<28} {:>7.1} {:>7.1} {:>8.1}\n",
                format!("{} {}-folds", r.label, self.folds),
                100.0 * r.knn,
                100.0 * r.random_forest,
                100.0 * r.average
            ));
        }
        for (c, k) in &self.kruskal {
            s.push_str(&format!(
                "Kruskal-Wallis {:<15} H = {:>9.1}  eta^2 = {:.3}  (n = {})\n",
                c.label(),
                k.h,
                k.eta_squared,
                k.n
            ));
        }
        s
    }
}

/// Runs 6-fold CV for k-NN and RF over the five condition subsets.
pub fn bench_sensing(config: &BenchConfig) -> Result<BenchTable> {
    bench_sensing_with(config, Execution::default())
}

pub fn bench_sensing_with(config: &BenchConfig, mode: Execution) -> Result<BenchTable> {
    let spec = config.generator.resolve()?;
    let kinds = [config.knn(), config.forest()];
    let jobs: Vec<(ConditionSubset, usize)> = ConditionSubset::ROWS
        .into_iter()
        .flat_map(|s| (0..kinds.len()).map(move |k| (s, k)))
        .collect();
    let results = map_indexed(mode, jobs.len(), |j| -> Result<(usize, f64)> {
        let (subset, k) = jobs[j];
        let data = build_dataset(
            &spec,
            &subset.conditions(),
            config.repetitions,
            config.windows_per_trace,
            config.seed,
            mode,
        )?;
        let mut rng = RngStream::derive(
            config.seed,
            &format!("sensing.cv.{}.{}", subset.label(), kinds[k].label()),
        );
        Ok((data.len(), kfold_cv_with(&data, config.folds, kinds[k], &mut rng, mode)?))
    });
    let mut rows = Vec::new();
    for (chunk, subset) in results.chunks(kinds.len()).zip(ConditionSubset::ROWS) {
        let (n, knn) = chunk[0].clone()?;
        let (_, rf) = chunk[1].clone()?;
        rows.push(BenchRow {
            subset,
            label: subset.label().to_owned(),
            examples: n,
            knn,
            random_forest: rf,
            average: 0.5 * (knn + rf),
        });
    }
    let kruskal = Condition::ALL
        .iter()
        .map(|&c| Ok((c, separability(&spec, c, config.repetitions, config.seed)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchTable {
        folds: config.folds,
        rows,
        kruskal,
    })
}

/// Kruskal-Wallis across objects for one condition, using 1-second window
/// means of every repetition as observations.
pub fn separability(
    spec: &GeneratorSpec,
    condition: Condition,
    repetitions: usize,
    seed: u64,
) -> Result<KruskalWallis> {
    let groups = MaterialClass::ALL
        .iter()
        .map(|&m| -> Result<Vec<f64>> {
            let mut obs = Vec::new();
            for r in 0..repetitions {
                let mut rng = RngStream::derive(seed, &trace_label(condition, m, r));
                obs.extend(generate_trace(spec, m, condition, &mut rng)?.window_means(1.0));
            }
            Ok(obs)
        })
        .collect::<Result<Vec<_>>>()?;
    kruskal_wallis(&groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    #[test]
    fn folds_validation() {
        let data = vec![Sample::new(vec![1.0], MaterialClass::Pet); 5];
        let mut r = derive_stream(1, "cv");
        assert!(kfold_cv(&data, 6, ClassifierKind::Knn { k: 1 }, &mut r).is_err());
        assert!(kfold_cv(&data, 1, ClassifierKind::Knn { k: 1 }, &mut r).is_err());
    }

    #[test]
    fn separable_classes_score_high() {
        let data = build_dataset(
            &GeneratorSpec::separable(),
            &Condition::ALL,
            6,
            1,
            3,
            Execution::default(),
        )
        .unwrap();
        for kind in [ClassifierKind::default_knn(), ClassifierKind::default_forest()] {
            let acc = kfold_cv(&data, 6, kind, &mut derive_stream(3, "cv")).unwrap();
            assert!(acc >= 0.95, "{kind:?}: {acc}");
        }
    }

    #[test]
    fn identical_distributions_score_near_chance() {
        let data = build_dataset(&GeneratorSpec::chance(), &Condition::ALL, 6, 3, 4, Execution::default()).unwrap();
        for kind in [ClassifierKind::default_knn(), ClassifierKind::default_forest()] {
            let acc = kfold_cv(&data, 6, kind, &mut derive_stream(4, "cv")).unwrap();
            assert!((acc - 1.0 / 6.0).abs() <= 0.10, "{kind:?}: {acc}");
        }
    }

    #[test]
    fn execution_modes_agree() {
        let data = build_dataset(&GeneratorSpec::paper_like(), &Condition::ALL[..2], 3, 1, 5, Execution::Sequential).unwrap();
        let kind = ClassifierKind::default_forest();
        let a = kfold_cv_with(&data, 6, kind, &mut derive_stream(5, "cv"), Execution::Sequential).unwrap();
        let b = kfold_cv_with(&data, 6, kind, &mut derive_stream(5, "cv"), Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
