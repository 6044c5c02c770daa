//! Property tests for the data layer and counterfactual generation.

use cid_core::counterfactual::{generate, CfConfig, CfMethod};
use cid_core::dataset::{load_csv, split, DatasetTable};
use cid_core::model::{Classifier, LogisticModel};
use proptest::prelude::*;

fn table_strategy() -> impl Strategy<Value = DatasetTable> {
    (1usize..5, 2usize..20).prop_flat_map(|(d, n)| {
        prop::collection::vec(
            prop::collection::vec(
                prop_oneof![-1e12f64..1e12, -1.0f64..1.0, Just(0.0)],
                d..=d,
            ),
            n..=n,
        )
        .prop_map(move |rows| {
            let names = (0..d).map(|j| format!("x{j}")).collect();
            let labels = (0..n).map(|i| (i % 2) as u8).collect();
            DatasetTable::from_parts(names, rows, labels).unwrap()
        })
    })
}

/// Rows spread over [-2, 2]^d with labels from the sign of feature 0.
fn spread_table(d: usize, n: usize) -> DatasetTable {
    let names = (0..d).map(|j| format!("f{j}")).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..d)
                .map(|j| (((i * d + j) as f64 * 0.618_033_988_749_894_8).fract()) * 4.0 - 2.0)
                .collect()
        })
        .collect();
    let labels = rows.iter().map(|r| u8::from(r[0] > 0.0)).collect();
    DatasetTable::from_parts(names, rows, labels).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn csv_round_trip_is_lossless(table in table_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        table.write_csv(&path, "label").unwrap();
        let back = load_csv(&path, "label").unwrap();
        prop_assert_eq!(&back.rows, &table.rows);
        prop_assert_eq!(&back.labels, &table.labels);
        prop_assert_eq!(back.feature_names(), table.feature_names());
    }

    #[test]
    fn split_partitions_the_rows(
        n in 4usize..60,
        fraction in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let table = spread_table(3, n);
        let n_test = (n as f64 * fraction).round() as usize;
        let result = split(&table, fraction, seed);
        if n_test == 0 || n_test == n {
            prop_assert!(result.is_err());
            return Ok(());
        }
        let (train, test) = result.unwrap();
        prop_assert_eq!(train.n_rows() + test.n_rows(), n);
        prop_assert_eq!(test.n_rows(), n_test);

        let mut all: Vec<Vec<u64>> = train.rows.iter().chain(&test.rows)
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut original: Vec<Vec<u64>> = table.rows.iter()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        all.sort();
        original.sort();
        prop_assert_eq!(all, original);
    }

    #[test]
    fn split_is_seed_deterministic(seed in any::<u64>()) {
        let table = spread_table(2, 30);
        let (tr1, te1) = split(&table, 0.3, seed).unwrap();
        let (tr2, te2) = split(&table, 0.3, seed).unwrap();
        prop_assert_eq!(tr1.rows, tr2.rows);
        prop_assert_eq!(te1.rows, te2.rows);
    }

    #[test]
    fn test_split_keeps_training_statistics(seed in any::<u64>()) {
        let table = spread_table(2, 40);
        let (train, test) = split(&table, 0.25, seed).unwrap();
        for (a, b) in train.features.iter().zip(&test.features) {
            prop_assert_eq!(a.mean, b.mean);
            prop_assert_eq!(a.std, b.std);
            prop_assert_eq!(a.min, b.min);
            prop_assert_eq!(a.max, b.max);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn counterfactual_sets_honor_the_contract(
        m in 2usize..8,
        seed in any::<u64>(),
        row in 0usize..30,
        method in prop::sample::select(vec![CfMethod::Random, CfMethod::Genetic]),
    ) {
        let table = spread_table(3, 30);
        let model = LogisticModel::new(vec![4.0, 0.0, 0.0], 0.0, None);
        let x = table.rows[row].clone();
        let mut cfg = CfConfig::new(m);
        cfg.method = method;
        cfg.seed = seed;
        let sets = generate(&x, &model, &table, &cfg).unwrap();

        prop_assert_eq!(sets.positives.len(), m);
        prop_assert_eq!(sets.negatives.len(), m);
        prop_assert_eq!(sets.original_label, model.predict_label(&x).unwrap());

        // every member carries the promised label and stays inside the
        // observed feature ranges
        for z in &sets.positives {
            prop_assert_eq!(model.predict_label(z).unwrap(), 1 - sets.original_label);
        }
        for z in &sets.negatives {
            prop_assert_eq!(model.predict_label(z).unwrap(), sets.original_label);
        }
        for z in sets.positives.iter().chain(&sets.negatives) {
            for (j, f) in table.features.iter().enumerate() {
                prop_assert!(z[j] >= f.min && z[j] <= f.max);
            }
        }

        // same configuration, same draw
        let again = generate(&x, &model, &table, &cfg).unwrap();
        prop_assert_eq!(
            serde_json::to_string(&sets).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }
}
