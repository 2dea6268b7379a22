//! Few-shot label-generalization experiments over learned embeddings.
//!
//! Each trial shows the model 1 or 3 positive examples of a novel label,
//! forms a concept template (the mean embedding), and scores four held-out
//! test items: two from the training subordinate and two from untrained
//! subordinates of the same basic category. Generalization probability is
//! exponentiated negative Euclidean distance to the template, normalized
//! over the trial's test items; the sharpened variant scales distance by the
//! number of examples so generalization tightens with more evidence. Scores
//! are finally divided by the trial maximum so the best match reads 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::EmbeddingMatrix;
use crate::repr_analysis::euclidean_distance;
use crate::rng::{hash64, Rng};
use crate::taxonomy::Taxonomy;

/// Training-example condition: how many positives, and from which level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "1-sub")]
    OneSub,
    #[serde(rename = "3-sub")]
    ThreeSub,
    #[serde(rename = "3-basic")]
    ThreeBasic,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::OneSub, Condition::ThreeSub, Condition::ThreeBasic];

    /// Number of positive examples shown.
    pub fn n_examples(self) -> usize {
        match self {
            Condition::OneSub => 1,
            Condition::ThreeSub | Condition::ThreeBasic => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::OneSub => "1-sub",
            Condition::ThreeSub => "3-sub",
            Condition::ThreeBasic => "3-basic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchType {
    #[serde(rename = "sub-match")]
    SubMatch,
    #[serde(rename = "basic-match")]
    BasicMatch,
}

impl MatchType {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchType::SubMatch => "sub-match",
            MatchType::BasicMatch => "basic-match",
        }
    }
}

/// One test item: an embedding plus its match type and source label.
#[derive(Debug, Clone)]
pub struct TestItem {
    pub embedding: Vec<f64>,
    pub match_type: MatchType,
    pub sub_label: usize,
}

/// A sampled trial. Invariant: exactly 2 SubMatch followed by 2 BasicMatch
/// test items; basic-match items come from subordinates not used in training.
#[derive(Debug, Clone)]
pub struct Trial {
    pub condition: Condition,
    pub basic: usize,
    pub training_subs: Vec<usize>,
    pub training: Vec<Vec<f64>>,
    pub test_items: Vec<TestItem>,
}

/// Element-wise mean of the positive-example embeddings.
pub fn concept_template(examples: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = examples.first().ok_or(Error::EmptyExamples)?;
    let dim = first.len();
    let mut mean = vec![0.0; dim];
    for ex in examples {
        if ex.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "example dims {} vs {}",
                ex.len(),
                dim
            )));
        }
        for (m, x) in mean.iter_mut().zip(ex) {
            *m += x;
        }
    }
    let n = examples.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    Ok(mean)
}

/// Generalization probabilities for the queries given template `c`:
/// p_i = exp(-m d(q_i, c)) / sum_j exp(-m d(q_j, c)), with m = n when
/// `sharpened` and m = 1 otherwise. Distances are shifted by the minimum
/// before exponentiation so large m * d cannot underflow the whole vector.
pub fn generalize(queries: &[Vec<f64>], c: &[f64], n: usize, sharpened: bool) -> Result<Vec<f64>> {
    assert!(n >= 1, "n must be a positive example count");
    if queries.is_empty() {
        return Err(Error::EmptyInput);
    }
    let dists: Vec<f64> = queries
        .iter()
        .map(|q| euclidean_distance(q, c))
        .collect::<Result<_>>()?;
    let m = if sharpened { n as f64 } else { 1.0 };
    let dmin = dists.iter().cloned().fold(f64::INFINITY, f64::min);
    let exps: Vec<f64> = dists.iter().map(|&d| (-m * (d - dmin)).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Divides every entry by the vector maximum, so the best match scores 1.
pub fn max_normalize(p: &[f64]) -> Result<Vec<f64>> {
    if p.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(&bad) = p.iter().find(|&&x| !(x > 0.0)) {
        return Err(Error::NonPositiveEntry(bad));
    }
    let max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(p.iter().map(|&x| x / max).collect())
}

/// Pool indices grouped by subordinate, for subs with at least one stimulus.
fn pool_by_sub(t: &Taxonomy, pool: &EmbeddingMatrix) -> Vec<Vec<usize>> {
    let mut by_sub = vec![Vec::new(); t.n_subs()];
    for (i, &s) in pool.sub_labels.iter().enumerate() {
        by_sub[s].push(i);
    }
    by_sub
}

/// How many anchor-subordinate stimuli a condition consumes
/// (training examples from the anchor + the two sub-match test items).
fn anchor_need(cond: Condition) -> usize {
    match cond {
        Condition::OneSub => 3,
        Condition::ThreeSub => 5,
        Condition::ThreeBasic => 3,
    }
}

const THREE_BASIC_RETRIES: usize = 64;

/// Samples one trial. The target basic is drawn uniformly from eligible
/// basics (at least 3 subordinates present in the pool, one of them with
/// enough stimuli to serve as the anchor); training subordinates and all
/// stimuli are drawn uniformly without replacement. Deterministic in `seed`.
pub fn sample_trial(
    t: &Taxonomy,
    pool: &EmbeddingMatrix,
    cond: Condition,
    seed: u64,
) -> Result<Trial> {
    let by_sub = pool_by_sub(t, pool);
    let present: Vec<Vec<usize>> = (0..t.n_basics())
        .map(|b| {
            t.subs_of(b)
                .into_iter()
                .filter(|&s| !by_sub[s].is_empty())
                .collect()
        })
        .collect();
    if !present.iter().any(|subs| subs.len() >= 3) {
        return Err(Error::NoEligibleBasic { min_subs: 3 });
    }
    let need = anchor_need(cond);
    let feasible: Vec<usize> = (0..t.n_basics())
        .filter(|&b| {
            present[b].len() >= 3 && present[b].iter().any(|&s| by_sub[s].len() >= need)
        })
        .collect();
    if feasible.is_empty() {
        return Err(Error::InsufficientPool(format!(
            "no eligible basic has a subordinate with >= {need} held-out stimuli for {}",
            cond.as_str()
        )));
    }
    let mut rng = Rng::seed_from(seed);
    let retries = match cond {
        Condition::ThreeBasic => THREE_BASIC_RETRIES,
        _ => 1,
    };
    for _ in 0..retries {
        let basic = feasible[rng.below(feasible.len())];
        let subs = &present[basic];
        let anchors: Vec<usize> = subs
            .iter()
            .copied()
            .filter(|&s| by_sub[s].len() >= need)
            .collect();
        let anchor = anchors[rng.below(anchors.len())];
        // Draw the anchor stimuli: training examples first, then the two
        // sub-match test items.
        let n_anchor_train = match cond {
            Condition::ThreeSub => 3,
            _ => 1,
        };
        let picks = rng.choose_distinct(by_sub[anchor].len(), n_anchor_train + 2);
        let anchor_rows: Vec<usize> = picks.iter().map(|&p| by_sub[anchor][p]).collect();
        let mut training: Vec<Vec<f64>> = anchor_rows[..n_anchor_train]
            .iter()
            .map(|&i| pool.rows[i].clone())
            .collect();
        let mut training_subs = vec![anchor; n_anchor_train];
        let sub_match: Vec<usize> = anchor_rows[n_anchor_train..].to_vec();

        let others: Vec<usize> = subs.iter().copied().filter(|&s| s != anchor).collect();
        let basic_match: Vec<usize> = match cond {
            Condition::OneSub | Condition::ThreeSub => {
                // Two distinct untrained subordinates, one stimulus each.
                let chosen = rng.choose_distinct(others.len(), 2);
                chosen
                    .iter()
                    .map(|&k| {
                        let s = others[k];
                        by_sub[s][rng.below(by_sub[s].len())]
                    })
                    .collect()
            }
            Condition::ThreeBasic => {
                // Two more training subordinates, one example each.
                let chosen = rng.choose_distinct(others.len(), 2);
                for &k in &chosen {
                    let s = others[k];
                    training_subs.push(s);
                    training.push(pool.rows[by_sub[s][rng.below(by_sub[s].len())]].clone());
                }
                // Basic matches must come from subordinates outside the
                // three training subordinates; resample the trial if the
                // pool has none to offer.
                let unused: Vec<usize> = subs
                    .iter()
                    .copied()
                    .filter(|s| !training_subs.contains(s))
                    .collect();
                let candidates: Vec<usize> = unused
                    .iter()
                    .flat_map(|&s| by_sub[s].iter().copied())
                    .collect();
                if candidates.len() < 2 {
                    continue;
                }
                rng.choose_distinct(candidates.len(), 2)
                    .into_iter()
                    .map(|k| candidates[k])
                    .collect()
            }
        };
        let mut test_items = Vec::with_capacity(4);
        for &i in &sub_match {
            test_items.push(TestItem {
                embedding: pool.rows[i].clone(),
                match_type: MatchType::SubMatch,
                sub_label: pool.sub_labels[i],
            });
        }
        for &i in &basic_match {
            test_items.push(TestItem {
                embedding: pool.rows[i].clone(),
                match_type: MatchType::BasicMatch,
                sub_label: pool.sub_labels[i],
            });
        }
        return Ok(Trial {
            condition: cond,
            basic,
            training_subs,
            training,
            test_items,
        });
    }
    Err(Error::InsufficientPool(format!(
        "could not place basic-match items outside the training subordinates after {THREE_BASIC_RETRIES} draws"
    )))
}

/// One aggregated cell of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub condition: Condition,
    pub match_type: MatchType,
    pub mean: f64,
    pub sd: f64,
    pub n_trials: usize,
    pub sharpened: bool,
    pub seed: u64,
}

/// Per-condition, per-match-type aggregation of max-normalized
/// generalization probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationReport {
    pub rows: Vec<ReportRow>,
}

impl GeneralizationReport {
    pub fn row(&self, cond: Condition, mt: MatchType) -> &ReportRow {
        self.rows
            .iter()
            .find(|r| r.condition == cond && r.match_type == mt)
            .expect("report covers every condition x match type")
    }

    /// Flat CSV mirroring the JSON rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("condition,match_type,mean,sd,n_trials,sharpened,seed\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.condition.as_str(),
                r.match_type.as_str(),
                r.mean,
                r.sd,
                r.n_trials,
                r.sharpened,
                r.seed
            ));
        }
        out
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `trials_per_condition` trials per condition and aggregates the
/// max-normalized probabilities by match type. Per-trial RNG streams are
/// derived from (seed, condition, trial index), so trials are independent
/// of evaluation order.
pub fn run_experiment(
    pool: &EmbeddingMatrix,
    t: &Taxonomy,
    trials_per_condition: usize,
    sharpened: bool,
    seed: u64,
) -> Result<GeneralizationReport> {
    if trials_per_condition == 0 {
        return Err(Error::EmptyExperiment);
    }
    let mut rows = Vec::with_capacity(6);
    for cond in Condition::ALL {
        let mut by_match: [(Vec<f64>, MatchType); 2] = [
            (Vec::new(), MatchType::SubMatch),
            (Vec::new(), MatchType::BasicMatch),
        ];
        for trial_idx in 0..trials_per_condition {
            let trial_seed = hash64(seed, cond.as_str(), trial_idx as u64);
            let trial = sample_trial(t, pool, cond, trial_seed)?;
            let template = concept_template(&trial.training)?;
            let queries: Vec<Vec<f64>> = trial
                .test_items
                .iter()
                .map(|it| it.embedding.clone())
                .collect();
            let probs = generalize(&queries, &template, cond.n_examples(), sharpened)?;
            let normed = max_normalize(&probs)?;
            for (item, &p) in trial.test_items.iter().zip(&normed) {
                match item.match_type {
                    MatchType::SubMatch => by_match[0].0.push(p),
                    MatchType::BasicMatch => by_match[1].0.push(p),
                }
            }
        }
        for (values, mt) in &by_match {
            let (mean, sd) = mean_sd(values);
            rows.push(ReportRow {
                condition: cond,
                match_type: *mt,
                mean,
                sd,
                n_trials: trials_per_condition,
                sharpened,
                seed,
            });
        }
    }
    Ok(GeneralizationReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::build_taxonomy;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn template_of_single_example_is_that_vector() {
        let c = concept_template(&[vec![1.0, -2.0, 3.0]]).unwrap();
        assert_eq!(c, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn template_is_the_mean() {
        let c = concept_template(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(c, vec![1.0, 1.0]);
    }

    #[test]
    fn template_permutation_invariant() {
        let a = vec![0.3, 1.7];
        let b = vec![-1.2, 0.4];
        let c = vec![2.2, -0.9];
        let t1 = concept_template(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let t2 = concept_template(&[c, a, b]).unwrap();
        for (x, y) in t1.iter().zip(&t2) {
            assert!(close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn template_errors() {
        assert!(matches!(
            concept_template(&[]).unwrap_err(),
            Error::EmptyExamples
        ));
        assert!(matches!(
            concept_template(&[vec![1.0], vec![1.0, 2.0]]).unwrap_err(),
            Error::ShapeMismatch(_)
        ));
    }

    #[test]
    fn single_query_gets_probability_one() {
        let p = generalize(&[vec![3.0, 4.0]], &[0.0, 0.0], 1, false).unwrap();
        assert_eq!(p, vec![1.0]);
    }

    // Closed-form oracle for distances [0, 1]:
    //   n=1: [1/(1+e^-1), e^-1/(1+e^-1)] = [0.7310585786300049, 0.2689414213699951]
    //   n=3 sharpened: [1/(1+e^-3), e^-3/(1+e^-3)]
    //                = [0.9525741268224334, 0.04742587317756678]
    #[test]
    fn generalize_matches_closed_form() {
        let queries = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let c = vec![0.0, 0.0];
        let p1 = generalize(&queries, &c, 1, false).unwrap();
        assert!(close(p1[0], 0.731_058_578_630_004_9, 1e-12));
        assert!(close(p1[1], 0.268_941_421_369_995_1, 1e-12));
        let p3 = generalize(&queries, &c, 3, true).unwrap();
        assert!(close(p3[0], 0.952_574_126_822_433_4, 1e-12));
        assert!(close(p3[1], 0.047_425_873_177_566_78, 1e-12));
    }

    #[test]
    fn generalize_sums_to_one_with_entries_in_unit_interval() {
        let mut rng = Rng::seed_from(5);
        for _ in 0..200 {
            let c: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
            let queries: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..4).map(|_| 3.0 * rng.normal()).collect())
                .collect();
            for (n, sharpened) in [(1, false), (3, true), (5, true)] {
                let p = generalize(&queries, &c, n, sharpened).unwrap();
                assert!(close(p.iter().sum::<f64>(), 1.0, 1e-12));
                assert!(p.iter().all(|&x| x > 0.0 && x <= 1.0));
            }
        }
    }

    #[test]
    fn unsharpened_is_independent_of_n() {
        let queries = vec![vec![0.5], vec![2.0], vec![-1.0]];
        let c = vec![0.25];
        let p1 = generalize(&queries, &c, 1, false).unwrap();
        let p9 = generalize(&queries, &c, 9, false).unwrap();
        assert_eq!(p1, p9);
        // Eq. 2 at n = 1 is Eq. 1 exactly (same bits).
        let sharp1 = generalize(&queries, &c, 1, true).unwrap();
        assert_eq!(p1, sharp1);
    }

    #[test]
    fn probabilities_preserve_distance_ranking() {
        let mut rng = Rng::seed_from(6);
        for _ in 0..100 {
            let c: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let queries: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..3).map(|_| 2.0 * rng.normal()).collect())
                .collect();
            let d: Vec<f64> = queries
                .iter()
                .map(|q| euclidean_distance(q, &c).unwrap())
                .collect();
            let p = generalize(&queries, &c, 3, true).unwrap();
            let normed = max_normalize(&p).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    if d[i] < d[j] {
                        assert!(p[i] > p[j]);
                        assert!(normed[i] > normed[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn no_underflow_for_huge_sharpened_distances() {
        let queries = vec![vec![0.0], vec![500.0], vec![900.0]];
        let p = generalize(&queries, &[0.0], 3, true).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert!(close(p.iter().sum::<f64>(), 1.0, 1e-12));
        assert!(close(p[0], 1.0, 1e-12));
    }

    #[test]
    fn max_normalize_examples() {
        let normed = max_normalize(&[0.731_058_578_630_004_9, 0.268_941_421_369_995_1]).unwrap();
        assert_eq!(normed[0], 1.0);
        assert!(close(normed[1], (-1.0f64).exp(), 1e-12));
        let uniform = max_normalize(&[0.25, 0.25, 0.25, 0.25]).unwrap();
        assert!(uniform.iter().all(|&x| x == 1.0));
        let already = max_normalize(&[1.0, 0.5]).unwrap();
        assert_eq!(already, vec![1.0, 0.5]);
        assert!(matches!(
            max_normalize(&[]).unwrap_err(),
            Error::EmptyInput
        ));
        assert!(matches!(
            max_normalize(&[0.4, 0.0]).unwrap_err(),
            Error::NonPositiveEntry(_)
        ));
    }

    // The mechanism behind tightening generalization: a non-nearest item's
    // max-normalized probability is exp(-n (d - d_min)), strictly
    // decreasing in n.
    #[test]
    fn sharpening_closed_form_and_monotonicity() {
        let mut rng = Rng::seed_from(9);
        for _ in 0..100 {
            let c: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let queries: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..3).map(|_| 2.0 * rng.normal()).collect())
                .collect();
            let d: Vec<f64> = queries
                .iter()
                .map(|q| euclidean_distance(q, &c).unwrap())
                .collect();
            let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
            let mut prev: Option<Vec<f64>> = None;
            for n in [1usize, 2, 3, 5] {
                let normed =
                    max_normalize(&generalize(&queries, &c, n, true).unwrap()).unwrap();
                for i in 0..4 {
                    let expect = (-(n as f64) * (d[i] - dmin)).exp();
                    assert!(close(normed[i], expect, 1e-12), "{} vs {expect}", normed[i]);
                }
                if let Some(prev) = &prev {
                    for i in 0..4 {
                        if d[i] > dmin {
                            assert!(normed[i] < prev[i]);
                        }
                    }
                }
                prev = Some(normed);
            }
        }
    }

    #[test]
    fn rigid_transform_leaves_probabilities_unchanged() {
        let mut rng = Rng::seed_from(12);
        // Random rotation from Gram-Schmidt on a Gaussian matrix.
        let dim = 4;
        let mut basis: Vec<Vec<f64>> = Vec::new();
        while basis.len() < dim {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            for b in &basis {
                let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= proj * bi;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for vi in &mut v {
                    *vi /= norm;
                }
                basis.push(v);
            }
        }
        let shift: Vec<f64> = (0..dim).map(|_| 5.0 * rng.normal()).collect();
        let apply = |x: &[f64]| -> Vec<f64> {
            (0..dim)
                .map(|i| basis[i].iter().zip(x).map(|(b, v)| b * v).sum::<f64>() + shift[i])
                .collect()
        };
        let examples: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..dim).map(|_| rng.normal()).collect())
            .collect();
        let queries: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..dim).map(|_| 2.0 * rng.normal()).collect())
            .collect();
        let c = concept_template(&examples).unwrap();
        let p = generalize(&queries, &c, 3, true).unwrap();
        let examples_t: Vec<Vec<f64>> = examples.iter().map(|e| apply(e)).collect();
        let queries_t: Vec<Vec<f64>> = queries.iter().map(|q| apply(q)).collect();
        let c_t = concept_template(&examples_t).unwrap();
        let p_t = generalize(&queries_t, &c_t, 3, true).unwrap();
        for (a, b) in p.iter().zip(&p_t) {
            assert!(close(*a, *b, 1e-9));
        }
    }

    fn pool_taxonomy() -> Taxonomy {
        build_taxonomy(&[
            ("b0s0", "b0"),
            ("b0s1", "b0"),
            ("b0s2", "b0"),
            ("b0s3", "b0"),
            ("b1s0", "b1"),
            ("b1s1", "b1"),
            ("b1s2", "b1"),
            ("b1s3", "b1"),
        ])
        .unwrap()
    }

    /// Pool with `per_sub` random embeddings per subordinate.
    fn random_pool(t: &Taxonomy, per_sub: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = Rng::seed_from(seed);
        let mut rows = Vec::new();
        let mut sub_labels = Vec::new();
        let mut basic_labels = Vec::new();
        for s in 0..t.n_subs() {
            // Separate subordinate centers so rankings are unambiguous.
            let center: Vec<f64> = (0..6).map(|_| 8.0 * rng.normal()).collect();
            for _ in 0..per_sub {
                rows.push(center.iter().map(|c| c + 0.5 * rng.normal()).collect());
                sub_labels.push(s);
                basic_labels.push(t.parent_of(s));
            }
        }
        EmbeddingMatrix {
            rows,
            sub_labels,
            basic_labels,
        }
    }

    #[test]
    fn one_sub_trial_structure() {
        let t = pool_taxonomy();
        let pool = random_pool(&t, 6, 1);
        let trial = sample_trial(&t, &pool, Condition::OneSub, 42).unwrap();
        assert_eq!(trial.training.len(), 1);
        assert_eq!(trial.training_subs.len(), 1);
        assert_eq!(trial.test_items.len(), 4);
        let subs: Vec<_> = trial
            .test_items
            .iter()
            .filter(|i| i.match_type == MatchType::SubMatch)
            .collect();
        let basics: Vec<_> = trial
            .test_items
            .iter()
            .filter(|i| i.match_type == MatchType::BasicMatch)
            .collect();
        assert_eq!(subs.len(), 2);
        assert_eq!(basics.len(), 2);
        let anchor = trial.training_subs[0];
        assert!(subs.iter().all(|i| i.sub_label == anchor));
        assert!(basics.iter().all(|i| i.sub_label != anchor));
        assert!(basics
            .iter()
            .all(|i| t.parent_of(i.sub_label) == trial.basic));
        // The two basic-match items come from two distinct subordinates.
        assert_ne!(basics[0].sub_label, basics[1].sub_label);
        // Test stimuli are disjoint from training stimuli.
        for item in &trial.test_items {
            assert!(trial.training.iter().all(|tr| *tr != item.embedding));
        }
    }

    #[test]
    fn three_sub_trial_uses_one_subordinate() {
        let t = pool_taxonomy();
        let pool = random_pool(&t, 6, 2);
        let trial = sample_trial(&t, &pool, Condition::ThreeSub, 7).unwrap();
        assert_eq!(trial.training.len(), 3);
        assert!(trial.training_subs.iter().all(|&s| s == trial.training_subs[0]));
    }

    #[test]
    fn three_basic_trial_uses_three_distinct_subordinates() {
        let t = pool_taxonomy();
        let pool = random_pool(&t, 6, 3);
        let trial = sample_trial(&t, &pool, Condition::ThreeBasic, 9).unwrap();
        assert_eq!(trial.training.len(), 3);
        let mut subs = trial.training_subs.clone();
        subs.sort_unstable();
        subs.dedup();
        assert_eq!(subs.len(), 3);
        // Basic matches come from outside the training subordinates.
        for item in &trial.test_items {
            if item.match_type == MatchType::BasicMatch {
                assert!(!trial.training_subs.contains(&item.sub_label));
                assert_eq!(t.parent_of(item.sub_label), trial.basic);
            }
        }
    }

    #[test]
    fn trials_are_deterministic_in_seed() {
        let t = pool_taxonomy();
        let pool = random_pool(&t, 6, 4);
        let a = sample_trial(&t, &pool, Condition::ThreeBasic, 5).unwrap();
        let b = sample_trial(&t, &pool, Condition::ThreeBasic, 5).unwrap();
        assert_eq!(a.training, b.training);
        assert_eq!(a.basic, b.basic);
    }

    #[test]
    fn two_sub_basics_are_not_eligible() {
        let t = build_taxonomy(&[
            ("b0s0", "b0"),
            ("b0s1", "b0"),
            ("b1s0", "b1"),
            ("b1s1", "b1"),
        ])
        .unwrap();
        let pool = random_pool(&t, 6, 5);
        assert!(matches!(
            sample_trial(&t, &pool, Condition::OneSub, 1).unwrap_err(),
            Error::NoEligibleBasic { .. }
        ));
    }

    #[test]
    fn sparse_pool_is_insufficient() {
        let t = pool_taxonomy();
        // Two stimuli per sub: enough subs, but no anchor can give 3 draws.
        let pool = random_pool(&t, 2, 6);
        assert!(matches!(
            sample_trial(&t, &pool, Condition::OneSub, 1).unwrap_err(),
            Error::InsufficientPool(_)
        ));
    }

    #[test]
    fn three_basic_needs_a_spare_subordinate() {
        // Exactly 3 subs per basic: the three training subs exhaust the
        // basic, so basic matches can never come from an untrained sub.
        let t = build_taxonomy(&[
            ("b0s0", "b0"),
            ("b0s1", "b0"),
            ("b0s2", "b0"),
        ])
        .unwrap();
        let pool = random_pool(&t, 6, 7);
        assert!(matches!(
            sample_trial(&t, &pool, Condition::ThreeBasic, 1).unwrap_err(),
            Error::InsufficientPool(_)
        ));
    }

    #[test]
    fn zero_trials_is_an_empty_experiment() {
        let t = pool_taxonomy();
        let pool = random_pool(&t, 6, 8);
        assert!(matches!(
            run_experiment(&pool, &t, 0, true, 1).unwrap_err(),
            Error::EmptyExperiment
        ));
    }

    // A regular simplex pool: every pairwise distance is equal, so within
    // each trial the four test items are equidistant from the template and
    // every max-normalized probability is exactly 1.
    #[test]
    fn equidistant_test_items_normalize_to_one() {
        let t = build_taxonomy(&[
            ("s0", "b"),
            ("s1", "b"),
            ("s2", "b"),
            ("s3", "b"),
        ])
        .unwrap();
        let per_sub = 5;
        let n = per_sub * t.n_subs();
        let mut rows = Vec::new();
        let mut sub_labels = Vec::new();
        let mut basic_labels = Vec::new();
        for s in 0..t.n_subs() {
            for k in 0..per_sub {
                let mut row = vec![0.0; n];
                row[s * per_sub + k] = 3.0;
                rows.push(row);
                sub_labels.push(s);
                basic_labels.push(0);
            }
        }
        let pool = EmbeddingMatrix {
            rows,
            sub_labels,
            basic_labels,
        };
        let report = run_experiment(&pool, &t, 20, true, 11).unwrap();
        assert_eq!(report.rows.len(), 6);
        for row in &report.rows {
            assert!(close(row.mean, 1.0, 1e-12), "{row:?}");
            assert!(row.sd.abs() < 1e-12);
        }
    }

    #[test]
    fn report_is_deterministic_and_shaped() {
        let t = pool_taxonomy();
        let pool = random_pool(&t, 8, 9);
        let a = run_experiment(&pool, &t, 30, true, 3).unwrap();
        let b = run_experiment(&pool, &t, 30, true, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 6);
        for row in &a.rows {
            assert!(row.mean > 0.0 && row.mean <= 1.0);
            assert_eq!(row.n_trials, 30);
        }
        // Within each condition the sub-match mean dominates on this
        // well-separated pool.
        for cond in Condition::ALL {
            let sm = a.row(cond, MatchType::SubMatch).mean;
            let bm = a.row(cond, MatchType::BasicMatch).mean;
            assert!(sm >= bm, "{cond:?}: {sm} < {bm}");
        }
    }

    // Straight-line oracle: the unstabilized textbook form of the
    // generalization equations, kept deliberately independent of the
    // implementation above.
    fn oracle(queries: &[Vec<f64>], c: &[f64], n: usize, sharpened: bool) -> Vec<f64> {
        let m = if sharpened { n as f64 } else { 1.0 };
        let weights: Vec<f64> = queries
            .iter()
            .map(|q| {
                let d = q
                    .iter()
                    .zip(c)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                (-m * d).exp()
            })
            .collect();
        let z: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / z).collect()
    }

    #[test]
    fn generalize_matches_straight_line_oracle() {
        let mut rng = Rng::seed_from(99);
        for trial in 0..1000 {
            let dim = 2 + (trial % 5);
            let c: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let queries: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..dim).map(|_| 2.0 * rng.normal()).collect())
                .collect();
            let n = 1 + (trial % 4);
            let sharpened = trial % 2 == 0;
            let got = generalize(&queries, &c, n, sharpened).unwrap();
            let want = oracle(&queries, &c, n, sharpened);
            for (g, w) in got.iter().zip(&want) {
                assert!(close(*g, *w, 1e-12), "{g} vs {w}");
            }
        }
    }
}
