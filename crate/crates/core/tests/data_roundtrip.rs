use countreg::data::{indicator_c, load_dataset, read_counts, write_dataset, CountDataset, CountMatrix, DesignMatrix};
use countreg::CountRegError;
use ndarray::{array, Array2};
use proptest::prelude::*;
use std::path::Path;
use tempfile::tempdir;

fn write(path: &Path, body: &str) {
    std::fs::write(path, body).unwrap();
}

#[test]
fn standardization_centers_and_scales() {
    let dir = tempdir().unwrap();
    let (cov, cnt) = (dir.path().join("x.csv"), dir.path().join("y.csv"));
    write(&cov, "age\n1\n2\n3\n");
    write(&cnt, "a,b\n1,2\n3,0\n0,5\n");
    let data = load_dataset(&cov, &cnt, true).unwrap();
    let s = 1.5f64.sqrt();
    let col: Vec<f64> = data.x.values().column(1).to_vec();
    for (got, want) in col.iter().zip([-s, 0.0, s]) {
        assert!((got - want).abs() < 1e-12, "{col:?}");
    }
    let st = data.standardization.unwrap();
    assert!((st.means[0] - 2.0).abs() < 1e-15);
    assert!((st.sds[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(data.y.row_totals(), &[3, 3, 5]);
}

#[test]
fn unstandardized_load_keeps_values() {
    let dir = tempdir().unwrap();
    let (cov, cnt) = (dir.path().join("x.csv"), dir.path().join("y.csv"));
    write(&cov, "u,v\n0.5,7\n-1,8\n");
    write(&cnt, "a,b\n1,1\n2,0\n");
    let data = load_dataset(&cov, &cnt, false).unwrap();
    assert_eq!(data.x.values(), &array![[1.0, 0.5, 7.0], [1.0, -1.0, 8.0]]);
    assert!(data.standardization.is_none());
    assert_eq!(data.x.covariate_names(), &["u".to_string(), "v".to_string()]);
}

#[test]
fn zero_total_row_is_rejected() {
    let dir = tempdir().unwrap();
    let cnt = dir.path().join("y.csv");
    write(&cnt, "a,b\n1,2\n0,0\n");
    assert!(matches!(read_counts(&cnt), Err(CountRegError::ZeroTotalRow { row: 1 })));
}

#[test]
fn row_mismatch_names_both_files() {
    let dir = tempdir().unwrap();
    let (cov, cnt) = (dir.path().join("cov.csv"), dir.path().join("cnt.csv"));
    write(&cov, "u\n1\n2\n3\n");
    write(&cnt, "a,b\n1,2\n2,1\n");
    let err = load_dataset(&cov, &cnt, true).unwrap_err();
    assert!(matches!(err, CountRegError::RowCountMismatch { covariate_rows: 3, count_rows: 2, .. }));
    let msg = err.to_string();
    assert!(msg.contains("cov.csv") && msg.contains("cnt.csv"), "{msg}");
}

#[test]
fn non_integer_and_negative_counts_are_rejected() {
    let dir = tempdir().unwrap();
    let cnt = dir.path().join("y.csv");
    write(&cnt, "a,b\n1,2.5\n");
    assert!(matches!(read_counts(&cnt), Err(CountRegError::InvalidCount { row: 0, column: 1, .. })));
    write(&cnt, "a,b\n-1,2\n");
    assert!(matches!(read_counts(&cnt), Err(CountRegError::InvalidCount { .. })));
    write(&cnt, "a,b\n1,x\n");
    assert!(matches!(read_counts(&cnt), Err(CountRegError::Parse { .. })));
}

#[test]
fn near_integers_are_accepted() {
    let dir = tempdir().unwrap();
    let cnt = dir.path().join("y.csv");
    write(&cnt, "a,b\n3.0000000001,2\n1,0.9999999999\n");
    assert_eq!(read_counts(&cnt).unwrap().values(), &array![[3u64, 2], [1, 1]]);
}

#[test]
fn constant_covariate_is_rejected_when_standardizing() {
    let dir = tempdir().unwrap();
    let (cov, cnt) = (dir.path().join("x.csv"), dir.path().join("y.csv"));
    write(&cov, "u,k\n1,4\n2,4\n");
    write(&cnt, "a,b\n1,2\n2,1\n");
    assert!(matches!(load_dataset(&cov, &cnt, true), Err(CountRegError::ConstantCovariate { column: 1, .. })));
}

#[test]
fn indicator_marks_positive_cells() {
    let y = CountMatrix::new(array![[0u64, 3], [2, 0]], vec!["a".into(), "b".into()]).unwrap();
    assert_eq!(indicator_c(&y), array![[0u8, 1], [1, 0]]);
}

#[test]
fn design_requires_intercept() {
    assert!(DesignMatrix::new(array![[1.0, 2.0], [0.5, 1.0]], vec!["u".into()]).is_err());
    assert!(DesignMatrix::new(array![[1.0, f64::NAN]], vec!["u".into()]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn write_then_load_round_trips(
        n in 1usize..12,
        p in 0usize..4,
        taxa in 2usize..5,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cov = Array2::from_shape_fn((n, p), |_| rng.random_range(-1e3..1e3) * 10f64.powi(rng.random_range(-8..4)));
        let counts = Array2::from_shape_fn((n, taxa), |(_, d)| rng.random_range(0..50) + u64::from(d == 0));
        let x = DesignMatrix::from_covariates(&cov, (0..p).map(|j| format!("c{j}")).collect()).unwrap();
        let y = CountMatrix::new(counts, (0..taxa).map(|d| format!("t{d}")).collect()).unwrap();
        let data = CountDataset::new(x, y).unwrap();
        let dir = tempdir().unwrap();
        let (cp, yp) = (dir.path().join("x.csv"), dir.path().join("y.csv"));
        write_dataset(&data, &cp, &yp).unwrap();
        if p == 0 {
            let got = read_counts(&yp).unwrap();
            prop_assert_eq!(&got, &data.y);
        } else {
            let back = load_dataset(&cp, &yp, false).unwrap();
            prop_assert_eq!(back, data);
        }
    }
}
