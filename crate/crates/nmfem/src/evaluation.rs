//! Clustering quality metrics and interpretability reports: hard
//! assignments, the pairwise misclassification rate, and per-word /
//! per-cluster decomposition summaries.

use std::collections::HashMap;
use std::io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FactoredMixture, HardAssignment, Responsibilities};

/// Hard cluster assignment: row-wise argmax of the responsibilities, lowest
/// index on exact ties, 1-based labels.
pub fn assign(resp: &Responsibilities) -> HardAssignment {
    let labels: Vec<usize> = resp
        .values()
        .outer_iter()
        .map(|row| {
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for (c, &v) in row.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            best + 1
        })
        .collect();
    let k = resp.k();
    HardAssignment::new(labels, k).expect("argmax labels are always in 1..=K")
}

fn pairs_of(x: u64) -> u64 {
    x * (x - 1) / 2
}

/// Fraction of the n(n−1)/2 unordered pairs on which the two labelings
/// disagree about co-membership (together in one, apart in the other).
/// Label-permutation invariant and symmetric; computed from the contingency
/// table in exact integer arithmetic.
pub fn pairwise_misclassification(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(Error::dim(
            "pairwise misclassification",
            format!("{} labels", truth.len()),
            format!("{} labels", predicted.len()),
        ));
    }
    let n = truth.len();
    if n < 2 {
        return Err(Error::InsufficientData {
            context: "pairwise misclassification".into(),
            needed: 2,
            got: n,
        });
    }

    let mut cells: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&a, &b) in truth.iter().zip(predicted.iter()) {
        *cells.entry((a, b)).or_insert(0) += 1;
        *rows.entry(a).or_insert(0) += 1;
        *cols.entry(b).or_insert(0) += 1;
    }
    let together_truth: u64 = rows.values().map(|&c| pairs_of(c)).sum();
    let together_pred: u64 = cols.values().map(|&c| pairs_of(c)).sum();
    let together_both: u64 = cells.values().map(|&c| pairs_of(c)).sum();
    // Pairs together in exactly one labeling = (together in truth only) +
    // (together in prediction only).
    let disagreements = (together_truth - together_both) + (together_pred - together_both);
    Ok(disagreements as f64 / pairs_of(n as u64) as f64)
}

/// A dictionary word's share of one cluster's loading column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordShare {
    /// 1-based word index.
    pub word: usize,
    pub share: f64,
}

/// One dictionary word: its identity, how much loading mass it carries
/// across all clusters, and its profile over features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordSummary {
    /// 1-based word index in the fitted dictionary.
    pub word: usize,
    /// Loading mass summed over clusters, `Σ_k Λ_hk`.
    pub total_loading: f64,
    /// Dictionary column `Φ_{·,h}` in feature-label order.
    pub profile: Vec<f64>,
}

/// One mixture component: weight, word mixture, and resulting profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    /// 1-based cluster index in the fitted model.
    pub cluster: usize,
    /// Mixture weight `p_k`.
    pub weight: f64,
    /// Full loading column `Λ_{·,k}` (one entry per word).
    pub loading: Vec<f64>,
    /// Nonzero entries of the loading column, ascending word index: the
    /// cluster expressed as a convex combination of words.
    pub shares: Vec<WordShare>,
    /// Component distribution `θ_{·,k}` in feature-label order.
    pub profile: Vec<f64>,
}

/// Interpretable summary of a fitted factored mixture: word profiles and
/// cluster decompositions, ordered for stable output (clusters by descending
/// weight, words by descending total loading, ascending index on ties).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub feature_labels: Vec<String>,
    pub words: Vec<WordSummary>,
    pub clusters: Vec<ClusterSummary>,
}

/// Build the decomposition report for a fitted model. `labels` must have
/// one entry per feature.
pub fn decomposition_report(
    model: &FactoredMixture,
    labels: &[String],
) -> Result<DecompositionReport> {
    if labels.len() != model.m() {
        return Err(Error::dim(
            "decomposition report",
            format!("{} feature labels", model.m()),
            format!("{} feature labels", labels.len()),
        ));
    }

    let mut words: Vec<WordSummary> = (0..model.h())
        .map(|h| WordSummary {
            word: h + 1,
            total_loading: model.loadings().row(h).sum(),
            profile: model.dictionary().column(h).to_vec(),
        })
        .collect();
    words.sort_by(|a, b| {
        b.total_loading
            .partial_cmp(&a.total_loading)
            .expect("loadings are finite")
            .then(a.word.cmp(&b.word))
    });

    let mut clusters: Vec<ClusterSummary> = (0..model.k())
        .map(|k| {
            let loading: Vec<f64> = model.loadings().column(k).to_vec();
            let shares: Vec<WordShare> = loading
                .iter()
                .enumerate()
                .filter(|&(_, &v)| v > 0.0)
                .map(|(h, &v)| WordShare { word: h + 1, share: v })
                .collect();
            ClusterSummary {
                cluster: k + 1,
                weight: model.weights()[k],
                loading,
                shares,
                profile: model.theta().column(k).to_vec(),
            }
        })
        .collect();
    clusters.sort_by(|a, b| {
        b.weight
            .partial_cmp(&a.weight)
            .expect("weights are finite")
            .then(a.cluster.cmp(&b.cluster))
    });

    Ok(DecompositionReport {
        feature_labels: labels.to_vec(),
        words,
        clusters,
    })
}

impl DecompositionReport {
    /// Long-format CSV for external heatmap tooling: one row per
    /// (entity, feature) pair, words first, then clusters, in report order.
    /// `weight` is the word's total loading or the cluster's mixture weight.
    pub fn to_long_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["entity_type", "entity_id", "feature_label", "value", "weight"])?;
        for word in &self.words {
            for (label, &value) in self.feature_labels.iter().zip(word.profile.iter()) {
                w.write_record(&[
                    "word".to_string(),
                    word.word.to_string(),
                    label.clone(),
                    format!("{value:?}"),
                    format!("{:?}", word.total_loading),
                ])?;
            }
        }
        for cluster in &self.clusters {
            for (label, &value) in self.feature_labels.iter().zip(cluster.profile.iter()) {
                w.write_record(&[
                    "cluster".to_string(),
                    cluster.cluster.to_string(),
                    label.clone(),
                    format!("{value:?}"),
                    format!("{:?}", cluster.weight),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn assign_takes_argmax_with_ties_to_the_first() {
        let resp = Responsibilities::new(array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]).unwrap();
        let hard = assign(&resp);
        assert_eq!(hard.labels(), &[1, 2, 1]);
        assert_eq!(hard.k(), 2);
    }

    #[test]
    fn assign_matches_naive_scan() {
        use rand::Rng;
        let mut rng = crate::seed::stream_rng(9, "assign-test", 0);
        let mut values = ndarray::Array2::zeros((50, 4));
        for mut row in values.rows_mut() {
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = rng.random::<f64>();
                sum += *v;
            }
            row.mapv_inplace(|v| v / sum);
        }
        let resp = Responsibilities::new(values.clone()).unwrap();
        let hard = assign(&resp);
        for (i, &label) in hard.labels().iter().enumerate() {
            let mut best = 0;
            for c in 1..4 {
                if values[(i, c)] > values[(i, best)] {
                    best = c;
                }
            }
            assert_eq!(label, best + 1, "row {i}");
        }
    }

    #[test]
    fn identical_partitions_have_zero_rate() {
        let rate = pairwise_misclassification(&[1, 2, 3, 1], &[3, 1, 2, 3]).unwrap();
        assert_eq!(rate, 0.0, "relabeled copies of the same partition");
    }

    #[test]
    fn hand_enumerated_example() {
        // Pairs (1,3),(1,4),(2,3),(2,4) are apart in truth, together in the
        // prediction; the other two pairs agree → 4/6.
        let rate = pairwise_misclassification(&[1, 1, 2, 2], &[1, 1, 1, 1]).unwrap();
        assert!((rate - 4.0 / 6.0).abs() < 1e-15, "{rate}");
    }

    #[test]
    fn rate_is_symmetric_and_permutation_invariant() {
        let a = [1, 2, 2, 3, 1, 3, 2];
        let b = [2, 2, 1, 1, 3, 3, 1];
        let ab = pairwise_misclassification(&a, &b).unwrap();
        let ba = pairwise_misclassification(&b, &a).unwrap();
        assert_eq!(ab, ba);
        // Relabel b through the bijection 1→7, 2→5, 3→9.
        let relabeled: Vec<usize> = b.iter().map(|&l| match l {
            1 => 7,
            2 => 5,
            _ => 9,
        }).collect();
        let relab = pairwise_misclassification(&a, &relabeled).unwrap();
        assert_eq!(ab, relab);
    }

    #[test]
    fn contingency_rate_matches_quadratic_definition() {
        use rand::Rng;
        let mut rng = crate::seed::stream_rng(4, "pairwise-test", 0);
        for trial in 0..20 {
            let n = 8;
            let a: Vec<usize> = (0..n).map(|_| rng.random_range(1..=3usize)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.random_range(1..=3usize)).collect();
            let fast = pairwise_misclassification(&a, &b).unwrap();
            let mut disagreements = 0u64;
            let mut pairs = 0u64;
            for i in 0..n {
                for j in (i + 1)..n {
                    pairs += 1;
                    if (a[i] == a[j]) != (b[i] == b[j]) {
                        disagreements += 1;
                    }
                }
            }
            let slow = disagreements as f64 / pairs as f64;
            assert_eq!(fast, slow, "trial {trial}: {a:?} vs {b:?}");
        }
    }

    #[test]
    fn tiny_or_mismatched_inputs_are_rejected() {
        assert!(pairwise_misclassification(&[1], &[1]).is_err());
        assert!(pairwise_misclassification(&[1, 2], &[1, 2, 3]).is_err());
    }

    fn example_model() -> FactoredMixture {
        FactoredMixture::new(
            array![0.3, 0.7],
            array![[0.5, 0.1], [0.3, 0.2], [0.2, 0.7]],
            array![[0.8, 0.3], [0.2, 0.7]],
        )
        .unwrap()
    }

    #[test]
    fn single_word_models_decompose_into_word_one() {
        let model = FactoredMixture::new(
            array![0.25, 0.75],
            array![[0.6], [0.4]],
            array![[1.0, 1.0]],
        )
        .unwrap();
        let labels = vec!["a".to_string(), "b".to_string()];
        let report = decomposition_report(&model, &labels).unwrap();
        for cluster in &report.clusters {
            assert_eq!(cluster.shares.len(), 1);
            assert_eq!(cluster.shares[0].word, 1);
            assert!((cluster.shares[0].share - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sparse_loading_column_reports_its_nonzero_words() {
        // Five words, five clusters; cluster 1 blends words 2 and 4 only,
        // the others are pure words.
        let mut loadings = ndarray::Array2::zeros((5, 5));
        loadings[(1, 0)] = 0.4;
        loadings[(3, 0)] = 0.6;
        for k in 1..5 {
            loadings[(k, k)] = 1.0;
        }
        let dictionary = ndarray::Array2::from_shape_fn((5, 5), |(j, h)| {
            if j == h {
                0.6
            } else {
                0.1
            }
        });
        let model = FactoredMixture::new(
            array![0.6, 0.1, 0.1, 0.1, 0.1],
            dictionary,
            loadings,
        )
        .unwrap();
        let labels: Vec<String> = (0..5).map(|j| format!("x{j}")).collect();
        let report = decomposition_report(&model, &labels).unwrap();
        // Cluster 1 has the largest weight, so it leads the report.
        assert_eq!(report.clusters[0].cluster, 1);
        let shares = &report.clusters[0].shares;
        assert_eq!(shares.len(), 2);
        assert_eq!(shares[0].word, 2);
        assert!((shares[0].share - 0.4).abs() < 1e-15);
        assert_eq!(shares[1].word, 4);
        assert!((shares[1].share - 0.6).abs() < 1e-15);
    }

    #[test]
    fn cluster_profiles_equal_the_factor_product() {
        let model = example_model();
        let labels: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let report = decomposition_report(&model, &labels).unwrap();
        for cluster in &report.clusters {
            let k = cluster.cluster - 1;
            for j in 0..3 {
                let manual: f64 = (0..2)
                    .map(|h| model.dictionary()[(j, h)] * model.loadings()[(h, k)])
                    .sum();
                assert!(
                    (cluster.profile[j] - manual).abs() < 1e-12,
                    "cluster {k}, feature {j}"
                );
            }
        }
    }

    #[test]
    fn report_orders_clusters_by_weight_and_words_by_mass() {
        let model = example_model();
        let labels: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let report = decomposition_report(&model, &labels).unwrap();
        assert_eq!(report.clusters[0].cluster, 2, "weight 0.7 first");
        assert_eq!(report.clusters[1].cluster, 1);
        // Word total loadings: word 1 gets 0.8+0.3 = 1.1, word 2 gets 0.9.
        assert_eq!(report.words[0].word, 1);
        assert!((report.words[0].total_loading - 1.1).abs() < 1e-12);
        assert_eq!(report.words[1].word, 2);
    }

    #[test]
    fn long_csv_lists_words_then_clusters() {
        let model = example_model();
        let labels: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let report = decomposition_report(&model, &labels).unwrap();
        let mut buf = Vec::new();
        report.to_long_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "entity_type,entity_id,feature_label,value,weight");
        // 2 words × 3 features + 2 clusters × 3 features = 12 data rows.
        assert_eq!(lines.len(), 13);
        assert!(lines[1].starts_with("word,1,x,0.5,"), "{}", lines[1]);
        assert!(lines[7].starts_with("cluster,2,x,"), "{}", lines[7]);
        // Every cluster row carries the cluster weight in the last column.
        let weight_field = lines[7].split(',').nth(4).unwrap();
        assert_eq!(weight_field, "0.7");
    }

    #[test]
    fn report_rejects_wrong_label_count() {
        let model = example_model();
        let labels = vec!["x".to_string()];
        assert!(decomposition_report(&model, &labels).is_err());
    }
}
