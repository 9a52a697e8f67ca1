//! Ranking quality measurement and the repeated stratified cross-validation
//! protocol.
//!
//! The quality measure is the area under the ROC curve, computed exactly
//! from ranks (equivalent to the normalized Mann-Whitney U statistic) with
//! average ranks for tied scores. The protocol runs `repeats` independent
//! stratified k-fold splits and trains one model per (repeat, fold) pair —
//! every run gets its own derived seed, so runs are independent and the
//! whole procedure is reproducible from one base seed.
//!
//! Three evaluation settings are supported:
//!
//! * `seen` — train on the fold-complement, score that same partition;
//! * `unseen` — train on the fold-complement, score the held-out fold;
//! * `one_class` — like `unseen`, but labeled anomalies are removed from
//!   the training partition first (and by default the distillation keep
//!   fraction is forced to 1, since the training data is already clean).
//!
//! Feature normalization is fitted on each run's training partition only,
//! so held-out rows never influence the statistics they are scored under.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{fit_normalizer, Dataset};
use crate::error::{Error, Result};
use crate::scoring::{build_scorer, Scorer, ScoringMode};
use crate::seeds;
use crate::trainer::{train, TrainConfig, TrainReport};

/// Exact ROC-AUC of `scores` against binary `labels` (1 = anomaly).
///
/// Computed from ranks: with `R` the sum of 1-based ranks of the positive
/// instances (ties receive their average rank), the statistic is
/// `(R - p(p+1)/2) / (p * n)` for `p` positives and `n` negatives. Ties
/// contribute one half, so chance-level scoring yields 0.5 exactly.
///
/// Returns an error when either class is absent (the measure is undefined),
/// when lengths differ, or when any score is non-finite.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::EmptyBatch("no scores to rank".into()));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidConfig(format!(
            "labels must be 0 or 1, found {bad}"
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("scores contain a non-finite value".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc(format!(
            "need both classes, got {n_pos} anomalies and {n_neg} normals"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 averaged over the tie group.
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }

    let p = n_pos as f64;
    let n = n_neg as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(u / (p * n))
}

/// Splits `0..labels.len()` into `k` folds, stratified by label: each
/// class is shuffled independently (seeded) and dealt round-robin, so
/// per-class fold counts differ by at most one. Each returned fold is
/// sorted ascending.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    if labels.is_empty() {
        return Err(Error::EmptyBatch("no labels to split".into()));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidConfig(format!(
            "labels must be 0 or 1, found {bad}"
        )));
    }
    if k < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 folds, got {k}"
        )));
    }
    if k > labels.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot split {} instances into {k} folds",
            labels.len()
        )));
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for class in [0u8, 1] {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        members.shuffle(&mut rng);
        for (i, idx) in members.into_iter().enumerate() {
            folds[i % k].push(idx);
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Which partition a cross-validation run scores, and how the training
/// partition is prepared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Score the same partition the model was trained on.
    Seen,
    /// Score the held-out fold.
    Unseen,
    /// Remove labeled anomalies from the training partition, then score
    /// the held-out fold.
    OneClass,
}

impl Setting {
    /// All settings in canonical reporting order.
    pub const ALL: [Setting; 3] = [Setting::Seen, Setting::Unseen, Setting::OneClass];
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Setting::Seen => "seen",
            Setting::Unseen => "unseen",
            Setting::OneClass => "one_class",
        })
    }
}

/// The shape of a repeated cross-validation experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvPlan {
    /// Number of folds per repeat (k).
    pub folds: usize,
    /// Number of independent repeats, each with its own fold split.
    pub repeats: usize,
    /// Base seed; all fold splits and run seeds derive from it.
    pub base_seed: u64,
    /// In the one-class setting, force the distillation keep fraction to 1
    /// (the training data is already cleaned by label). Disable only to
    /// study the keep fraction itself in that setting.
    pub force_one_class_rho_n: bool,
}

impl Default for CvPlan {
    fn default() -> Self {
        CvPlan {
            folds: 3,
            repeats: 3,
            base_seed: 0,
            force_one_class_rho_n: true,
        }
    }
}

impl CvPlan {
    /// Checks structural validity (folds >= 2, repeats >= 1).
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 folds, got {}",
                self.folds
            )));
        }
        if self.repeats == 0 {
            return Err(Error::InvalidConfig("need at least 1 repeat".into()));
        }
        Ok(())
    }

    /// Seed for the fold split of one repeat. Every repeat draws its own
    /// split; the same repeat always produces the same split.
    pub fn fold_seed(&self, repeat: usize) -> u64 {
        seeds::derive(
            seeds::derive(self.base_seed, seeds::STREAM_FOLDS),
            repeat as u64,
        )
    }

    /// Training seed for one (repeat, fold) run. Distinct runs get
    /// distinct seeds; the seed does not depend on the setting, so `seen`
    /// and `unseen` train identical models on identical partitions.
    pub fn run_seed(&self, repeat: usize, fold: usize) -> u64 {
        seeds::derive(
            seeds::derive(self.base_seed, seeds::STREAM_RUNS),
            (repeat * self.folds + fold) as u64,
        )
    }
}

/// Result of one cross-validation run (one trained model).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvRun {
    /// Repeat index (0-based).
    pub repeat: usize,
    /// Held-out fold index within the repeat (0-based).
    pub fold: usize,
    /// ROC-AUC of the scored partition.
    pub auc: f64,
    /// Rows in the training partition handed to the trainer.
    pub train_size: usize,
    /// Labeled anomalies among those rows (0 in the one-class setting).
    pub train_anomalies: usize,
}

/// Aggregated outcome of a full repeated cross-validation experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    /// The evaluation setting all runs used.
    pub setting: Setting,
    /// All runs, sorted by (repeat, fold).
    pub runs: Vec<CvRun>,
    /// Mean AUC over runs.
    pub mean_auc: f64,
    /// Sample standard deviation of run AUCs (0 for a single run).
    pub std_auc: f64,
    /// Total instances in the dataset.
    pub instances: usize,
    /// Feature count of the dataset.
    pub dims: usize,
    /// Fraction of instances labeled anomalous.
    pub anomaly_fraction: f64,
}

/// Everything produced by one cross-validation run, exposed for
/// inspection: the summary row, the scorer, and the full training report.
#[derive(Debug)]
pub struct FoldOutcome {
    /// Summary row for the report.
    pub run: CvRun,
    /// Scorer built from the run's best network over its training rows.
    pub scorer: Scorer,
    /// The trainer's full report (history, partition indices, kept rows).
    pub report: TrainReport,
}

/// Executes a single (repeat, fold) cross-validation run.
///
/// The fold split is drawn from [`CvPlan::fold_seed`], the training seed
/// from [`CvPlan::run_seed`]. Feature normalization is fitted on the
/// training partition (after one-class anomaly removal) and applied to
/// whichever partition is scored. The scorer's center is computed over the
/// rows the trainer actually trained on (its post-validation-split
/// training rows).
pub fn run_fold(
    dataset: &Dataset,
    setting: Setting,
    plan: &CvPlan,
    config: &TrainConfig,
    repeat: usize,
    fold: usize,
) -> Result<FoldOutcome> {
    plan.validate()?;
    config.validate()?;
    if repeat >= plan.repeats || fold >= plan.folds {
        return Err(Error::InvalidConfig(format!(
            "run ({repeat}, {fold}) outside plan of {} repeats x {} folds",
            plan.repeats, plan.folds
        )));
    }
    let labels = dataset.labels.as_ref().ok_or_else(|| {
        Error::InvalidConfig("cross-validation needs a labeled dataset".into())
    })?;

    let folds = stratified_folds(labels, plan.folds, plan.fold_seed(repeat))?;
    let test_idx = &folds[fold];
    let mut train_idx: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != fold)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    train_idx.sort_unstable();

    if setting == Setting::OneClass {
        train_idx.retain(|&i| labels[i] == 0);
    }
    let train_anomalies = train_idx.iter().filter(|&&i| labels[i] == 1).count();

    let mut cfg = config.clone();
    cfg.seed = plan.run_seed(repeat, fold);
    if setting == Setting::OneClass && plan.force_one_class_rho_n {
        cfg.rho_n = 1.0;
    }

    let train_raw = dataset.x.gather_rows(&train_idx);
    let normalizer = fit_normalizer(&train_raw)?;
    let train_x = normalizer.apply(&train_raw)?;

    let report = train(&train_x, &cfg)?;
    let scorer = build_scorer(
        report.best_net.clone(),
        &train_x.gather_rows(&report.train_indices),
        ScoringMode::Center,
    )?;

    let (scored_x, scored_labels): (crate::matrix::Matrix, Vec<u8>) = match setting {
        Setting::Seen => (
            train_x.clone(),
            train_idx.iter().map(|&i| labels[i]).collect(),
        ),
        Setting::Unseen | Setting::OneClass => {
            let raw = dataset.x.gather_rows(test_idx);
            (
                normalizer.apply(&raw)?,
                test_idx.iter().map(|&i| labels[i]).collect(),
            )
        }
    };
    let scores = scorer.score_all(&scored_x)?;
    let auc = roc_auc(&scores, &scored_labels)?;

    Ok(FoldOutcome {
        run: CvRun {
            repeat,
            fold,
            auc,
            train_size: train_idx.len(),
            train_anomalies,
        },
        scorer,
        report,
    })
}

/// Runs the full repeated cross-validation experiment for one setting:
/// `repeats * folds` independent trainings, executed in parallel, with
/// results aggregated in (repeat, fold) order so the report does not
/// depend on scheduling.
pub fn run_setting(
    dataset: &Dataset,
    setting: Setting,
    plan: &CvPlan,
    config: &TrainConfig,
) -> Result<CvReport> {
    plan.validate()?;
    config.validate()?;
    let pairs: Vec<(usize, usize)> = (0..plan.repeats)
        .flat_map(|r| (0..plan.folds).map(move |f| (r, f)))
        .collect();

    let mut runs: Vec<CvRun> = pairs
        .par_iter()
        .map(|&(r, f)| run_fold(dataset, setting, plan, config, r, f).map(|o| o.run))
        .collect::<Result<_>>()?;
    runs.sort_by_key(|r| (r.repeat, r.fold));

    let n = runs.len() as f64;
    let mean_auc = runs.iter().map(|r| r.auc).sum::<f64>() / n;
    let std_auc = if runs.len() > 1 {
        (runs.iter().map(|r| (r.auc - mean_auc).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };

    let anomalies = dataset
        .anomaly_count()
        .expect("labels checked by run_fold") as f64;
    Ok(CvReport {
        setting,
        runs,
        mean_auc,
        std_auc,
        instances: dataset.n_instances(),
        dims: dataset.n_features(),
        anomaly_fraction: anomalies / dataset.n_instances() as f64,
    })
}

/// Runs all three settings (seen, unseen, one-class) with the same plan
/// and configuration. Settings share nothing: every one performs its own
/// `repeats * folds` trainings.
pub fn run_all_settings(
    dataset: &Dataset,
    plan: &CvPlan,
    config: &TrainConfig,
) -> Result<Vec<CvReport>> {
    Setting::ALL
        .iter()
        .map(|&s| run_setting(dataset, s, plan, config))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_two_gaussians;
    use crate::losses::LossKind;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Brute-force pair-counting oracle: fraction of (positive, negative)
    /// pairs ranked correctly, ties counting one half.
    fn pair_count_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut hits = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if li != 1 {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj != 0 {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    hits += 1.0;
                } else if scores[i] == scores[j] {
                    hits += 0.5;
                }
            }
        }
        hits / pairs
    }

    #[test]
    fn worked_example_is_three_quarters() {
        let auc = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert_eq!(auc, 0.75);
    }

    #[test]
    fn perfect_and_inverted_rankings() {
        let labels = [0, 0, 0, 1, 1];
        assert_eq!(roc_auc(&[1.0, 2.0, 3.0, 4.0, 5.0], &labels).unwrap(), 1.0);
        assert_eq!(roc_auc(&[5.0, 4.0, 3.0, 2.0, 1.0], &labels).unwrap(), 0.0);
    }

    #[test]
    fn constant_scores_give_chance_level() {
        assert_eq!(roc_auc(&[7.0; 6], &[0, 1, 0, 1, 0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn ties_get_average_rank() {
        // pos@1 vs neg@1 -> 0.5, pos@1 vs neg@2 -> 0,
        // pos@2 vs neg@1 -> 1, pos@2 vs neg@2 -> 0.5; total 2/4.
        let auc = roc_auc(&[1.0, 1.0, 2.0, 2.0], &[0, 1, 0, 1]).unwrap();
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn matches_pair_counting_oracle_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for case in 0..300 {
            let n = rng.random_range(2..60);
            let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
            // Guarantee both classes.
            labels[0] = 0;
            labels[1] = 1;
            // Quantized scores so ties actually occur.
            let scores: Vec<f64> = (0..n)
                .map(|_| f64::from(rng.random_range(0..10)) / 10.0)
                .collect();
            let fast = roc_auc(&scores, &labels).unwrap();
            let slow = pair_count_auc(&scores, &labels);
            assert!(
                (fast - slow).abs() <= 1e-12,
                "case {case}: rank {fast} vs pairs {slow}"
            );
        }
    }

    #[test]
    fn label_flip_mirrors_the_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.random_range(4..40);
            let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
            labels[0] = 0;
            labels[1] = 1;
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let auc = roc_auc(&scores, &labels).unwrap();
            let flipped: Vec<u8> = labels.iter().map(|&l| 1 - l).collect();
            let mirror = roc_auc(&scores, &flipped).unwrap();
            assert!((auc + mirror - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn invariant_under_strictly_monotone_transforms() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.35, 0.2];
        let labels = [0, 0, 1, 1, 0, 1];
        let base = roc_auc(&scores, &labels).unwrap();
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let shifted: Vec<f64> = scores.iter().map(|s| 1000.0 + 3.0 * s).collect();
        assert_eq!(roc_auc(&exp, &labels).unwrap(), base);
        assert_eq!(roc_auc(&shifted, &labels).unwrap(), base);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(matches!(
            roc_auc(&[1.0, 2.0], &[0, 0]),
            Err(Error::UndefinedAuc(_))
        ));
        assert!(matches!(
            roc_auc(&[1.0, 2.0], &[1, 1]),
            Err(Error::UndefinedAuc(_))
        ));
        assert!(matches!(roc_auc(&[], &[]), Err(Error::EmptyBatch(_))));
        assert!(matches!(
            roc_auc(&[1.0], &[0, 1]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            roc_auc(&[1.0, 2.0], &[0, 2]),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            roc_auc(&[f64::NAN, 2.0], &[0, 1]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn folds_balance_both_classes() {
        // 9 normals + 3 anomalies into 3 folds: every fold 3 + 1.
        let labels = [0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1];
        let folds = stratified_folds(&labels, 3, 42).unwrap();
        for fold in &folds {
            assert_eq!(fold.len(), 4);
            let anomalies = fold.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!(anomalies, 1);
        }
    }

    #[test]
    fn fold_sizes_differ_by_at_most_one_per_class() {
        // 10 normals + 3 anomalies into 3 folds: sizes {5, 4, 4} as a
        // multiset, one anomaly each.
        let mut labels = vec![0u8; 10];
        labels.extend_from_slice(&[1, 1, 1]);
        let folds = stratified_folds(&labels, 3, 7).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![4, 4, 5]);
        for fold in &folds {
            assert_eq!(fold.iter().filter(|&&i| labels[i] == 1).count(), 1);
        }
    }

    #[test]
    fn folds_partition_all_indices() {
        let labels: Vec<u8> = (0..37).map(|i| u8::from(i % 5 == 0)).collect();
        let folds = stratified_folds(&labels, 4, 99).unwrap();
        let mut seen: Vec<usize> = folds.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..37).collect::<Vec<_>>());
        for fold in &folds {
            assert!(fold.windows(2).all(|w| w[0] < w[1]), "folds are sorted");
        }
    }

    #[test]
    fn fold_split_is_seed_deterministic() {
        let labels: Vec<u8> = (0..40).map(|i| u8::from(i % 4 == 0)).collect();
        let a = stratified_folds(&labels, 3, 5).unwrap();
        let b = stratified_folds(&labels, 3, 5).unwrap();
        assert_eq!(a, b);
        let c = stratified_folds(&labels, 3, 6).unwrap();
        assert_ne!(a, c, "different seeds give different splits");
    }

    #[test]
    fn fold_arguments_are_validated() {
        let labels = [0, 1, 0, 1];
        assert!(matches!(
            stratified_folds(&labels, 1, 0),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            stratified_folds(&labels, 5, 0),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            stratified_folds(&[], 2, 0),
            Err(Error::EmptyBatch(_))
        ));
        assert!(matches!(
            stratified_folds(&[0, 3], 2, 0),
            Err(Error::InvalidConfig(_))
        ));
    }

    proptest! {
        #[test]
        fn prop_folds_are_stratified_partitions(
            n in 6usize..60,
            k in 2usize..5,
            anomaly_period in 2usize..6,
            seed in 0u64..1000,
        ) {
            prop_assume!(k <= n);
            let labels: Vec<u8> = (0..n).map(|i| u8::from(i % anomaly_period == 0)).collect();
            let folds = stratified_folds(&labels, k, seed).unwrap();

            let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());

            for class in [0u8, 1] {
                let counts: Vec<usize> = folds
                    .iter()
                    .map(|f| f.iter().filter(|&&i| labels[i] == class).count())
                    .collect();
                let min = counts.iter().min().unwrap();
                let max = counts.iter().max().unwrap();
                prop_assert!(max - min <= 1, "class {} counts {:?}", class, counts);
            }
        }
    }

    #[test]
    fn plan_seeds_are_distinct_across_runs() {
        let plan = CvPlan::default();
        let mut seeds: Vec<u64> = Vec::new();
        for r in 0..plan.repeats {
            for f in 0..plan.folds {
                seeds.push(plan.run_seed(r, f));
            }
        }
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 9, "all nine run seeds distinct");
        assert_ne!(plan.fold_seed(0), plan.fold_seed(1));
        assert_ne!(plan.fold_seed(0), plan.run_seed(0, 0));
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            metric_dim: 8,
            epochs: 2,
            batch_size: 16,
            patience: 5,
            loss: LossKind::InstanceCloseness,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn cross_validation_runs_the_full_grid_deterministically() {
        let ds = synth_two_gaussians(36, 9, 4, 6.0, 5).unwrap();
        let plan = CvPlan::default();
        let cfg = quick_config();

        let a = run_setting(&ds, Setting::Unseen, &plan, &cfg).unwrap();
        assert_eq!(a.runs.len(), 9);
        let keys: Vec<(usize, usize)> = a.runs.iter().map(|r| (r.repeat, r.fold)).collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        assert_eq!(keys, sorted, "runs are reported in (repeat, fold) order");
        for run in &a.runs {
            assert!((0.0..=1.0).contains(&run.auc), "auc in range: {}", run.auc);
        }
        assert_eq!(a.instances, 45);
        assert_eq!(a.dims, 4);
        assert!((a.anomaly_fraction - 0.2).abs() < 1e-15);

        let b = run_setting(&ds, Setting::Unseen, &plan, &cfg).unwrap();
        assert_eq!(a.mean_auc.to_bits(), b.mean_auc.to_bits(), "bitwise repeatable");
        for (x, y) in a.runs.iter().zip(&b.runs) {
            assert_eq!(x.auc.to_bits(), y.auc.to_bits());
        }
    }

    #[test]
    fn one_class_training_sees_no_anomalies() {
        let ds = synth_two_gaussians(36, 9, 4, 6.0, 11).unwrap();
        let plan = CvPlan::default();
        let report = run_setting(&ds, Setting::OneClass, &plan, &quick_config()).unwrap();
        for run in &report.runs {
            assert_eq!(run.train_anomalies, 0, "one-class trains on normals only");
            assert_eq!(run.train_size, 24, "30 pool rows minus 6 anomalies");
        }
        let unseen = run_setting(&ds, Setting::Unseen, &plan, &quick_config()).unwrap();
        for run in &unseen.runs {
            assert_eq!(run.train_anomalies, 6, "unseen keeps anomalies in training");
            assert_eq!(run.train_size, 30);
        }
    }

    #[test]
    fn seen_and_unseen_share_the_trained_model() {
        let ds = synth_two_gaussians(24, 6, 3, 5.0, 21).unwrap();
        let plan = CvPlan::default();
        let cfg = quick_config();
        let seen = run_fold(&ds, Setting::Seen, &plan, &cfg, 1, 2).unwrap();
        let unseen = run_fold(&ds, Setting::Unseen, &plan, &cfg, 1, 2).unwrap();

        assert_eq!(seen.scorer.center(), unseen.scorer.center(), "same center");
        for (a, b) in seen
            .scorer
            .net()
            .layers()
            .iter()
            .zip(unseen.scorer.net().layers())
        {
            assert_eq!(a.weights().as_slice(), b.weights().as_slice());
            assert_eq!(a.bias(), b.bias());
        }
        // Only the scored partition differs: seen scores the 30-row pool,
        // unseen the 15-row held-out fold... with 24+6=30 rows and 3 folds,
        // pool is 20 and fold is 10.
        assert_eq!(seen.run.train_size, unseen.run.train_size);
    }

    #[test]
    fn one_class_forces_full_keep_fraction_by_default() {
        let ds = synth_two_gaussians(36, 9, 4, 6.0, 13).unwrap();
        let mut cfg = quick_config();
        cfg.rho_n = 0.5;

        let forced_plan = CvPlan::default();
        let forced = run_fold(&ds, Setting::OneClass, &forced_plan, &cfg, 0, 0).unwrap();
        let kept = forced.report.final_distilled.len();
        let trained_rows = forced.report.train_indices.len();
        assert_eq!(kept, trained_rows, "keep fraction forced to 1 keeps every row");

        let free_plan = CvPlan {
            force_one_class_rho_n: false,
            ..CvPlan::default()
        };
        let free = run_fold(&ds, Setting::OneClass, &free_plan, &cfg, 0, 0).unwrap();
        let free_kept = free.report.final_distilled.len();
        let free_rows = free.report.train_indices.len();
        assert_eq!(
            free_kept,
            (0.5 * free_rows as f64 + 0.5).floor().max(1.0) as usize,
            "unforced keep fraction is honored"
        );
        assert!(free_kept < free_rows);
    }

    #[test]
    fn unlabeled_dataset_is_rejected() {
        let mut ds = synth_two_gaussians(12, 3, 3, 5.0, 1).unwrap();
        ds.labels = None;
        let err = run_setting(&ds, Setting::Unseen, &CvPlan::default(), &quick_config());
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn anomaly_free_fold_propagates_undefined_auc() {
        // Two anomalies cannot cover three folds, so at least one held-out
        // fold has a single class and the unseen measure is undefined.
        let ds = synth_two_gaussians(16, 2, 3, 5.0, 3).unwrap();
        let err = run_setting(&ds, Setting::Unseen, &CvPlan::default(), &quick_config());
        assert!(matches!(err, Err(Error::UndefinedAuc(_))), "{err:?}");
    }

    #[test]
    fn separated_clusters_reach_high_auc() {
        let ds = synth_two_gaussians(60, 12, 6, 8.0, 17).unwrap();
        let report = run_setting(
            &ds,
            Setting::Unseen,
            &CvPlan::default(),
            &TrainConfig {
                metric_dim: 16,
                epochs: 5,
                batch_size: 32,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert!(
            report.mean_auc > 0.9,
            "well-separated clusters should be easy: {}",
            report.mean_auc
        );
    }
}
