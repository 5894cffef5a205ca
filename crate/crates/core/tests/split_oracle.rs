mod oracles;

use ethfraud_core::cart::{best_split, grow_tree, predict_tree};
use ethfraud_core::rng;
use ethfraud_core::{Dataset, Label};
use oracles::{brute_force_split, gini_decrease};
use proptest::prelude::*;

fn dataset(rows: &[Vec<f64>], fraud: &[bool]) -> Dataset {
    let width = rows[0].len();
    Dataset::new(
        (0..width).map(|j| format!("f{j}")).collect(),
        (0..rows.len()).map(|i| format!("r{i}")).collect(),
        fraud
            .iter()
            .map(|&f| if f { Label::Fraud } else { Label::NonFraud })
            .collect(),
        rows.concat(),
    )
    .unwrap()
}

/// Rows with values on a coarse grid so that ties between thresholds and
/// between features are common.
fn small_table() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<bool>, usize)> {
    (1usize..=3, 1usize..=12).prop_flat_map(|(width, n)| {
        (
            prop::collection::vec(
                prop::collection::vec((0u8..5).prop_map(|v| v as f64 * 0.5), width),
                n,
            ),
            prop::collection::vec(any::<bool>(), n),
            1usize..=3,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(600))]

    #[test]
    fn best_split_agrees_with_enumeration((rows, fraud, min_node) in small_table()) {
        let d = dataset(&rows, &fraud);
        let all: Vec<usize> = (0..rows.len()).collect();
        let features: Vec<usize> = (0..rows[0].len()).collect();
        let got = best_split(&d, &all, &features, min_node);
        let want = brute_force_split(&rows, &fraud, &features, min_node);
        match (got, want) {
            (None, None) => {}
            (Some(s), Some(o)) => {
                prop_assert_eq!(s.feature, o.feature);
                let left: Vec<bool> = rows.iter().map(|r| r[s.feature] <= s.threshold).collect();
                prop_assert_eq!(&left, &o.left);
                let pf = fraud.iter().filter(|&&f| f).count() as i128;
                let lf = (0..rows.len()).filter(|&i| left[i] && fraud[i]).count() as i128;
                let ln = (0..rows.len()).filter(|&i| left[i] && !fraud[i]).count() as i128;
                let exact = gini_decrease((pf, rows.len() as i128 - pf), (lf, ln));
                prop_assert!(exact == o.decrease);
                prop_assert!((s.decrease - o.decrease.to_f64()).abs() <= 1e-12);
            }
            (got, want) => prop_assert!(false, "implementation {:?} vs oracle {:?}", got, want.map(|o| o.feature)),
        }
    }

    #[test]
    fn unpruned_tree_fits_consistent_training_data(
        (rows, fraud, _) in small_table(),
        seed in any::<u64>(),
    ) {
        let d = dataset(&rows, &fraud);
        let width = rows[0].len();
        let tree = grow_tree(&d, (0..rows.len()).collect(), width, 1, &mut rng::stream(seed, 0)).unwrap();
        for (i, r) in rows.iter().enumerate() {
            // rows sharing a feature vector with an opposite label cannot be separated
            let conflicted = rows.iter().zip(&fraud).any(|(o, &f)| o == r && f != fraud[i]);
            let (p_fraud, _) = predict_tree(&tree, r);
            if !conflicted {
                prop_assert_eq!(p_fraud, if fraud[i] { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn min_node_size_bounds_internal_nodes(
        (rows, fraud, min_node) in small_table(),
        seed in any::<u64>(),
    ) {
        let d = dataset(&rows, &fraud);
        let width = rows[0].len();
        let tree = grow_tree(&d, (0..rows.len()).collect(), width, min_node, &mut rng::stream(seed, 0)).unwrap();
        for node in &tree.nodes {
            if let ethfraud_core::cart::TreeNode::Internal { n_rows, impurity_decrease, .. } = node {
                prop_assert!(*n_rows > min_node);
                prop_assert!(*impurity_decrease >= 0.0);
            }
        }
    }
}
