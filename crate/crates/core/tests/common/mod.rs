#![allow(dead_code)]

use countreg::data::{CountDataset, CountMatrix, DesignMatrix};
use countreg::models::ModelKind;
use countreg_testkit::Model;
use ndarray::Array2;

/// Dataset from a design that already carries its intercept column.
pub fn dataset(x: &Array2<f64>, y: &Array2<u64>) -> CountDataset {
    let names = (1..x.ncols()).map(|j| format!("x{j}")).collect();
    let taxa = (1..=y.ncols()).map(|d| format!("t{d}")).collect();
    let x = DesignMatrix::new(x.clone(), names).unwrap();
    let y = CountMatrix::new(y.clone(), taxa).unwrap();
    CountDataset::new(x, y).unwrap()
}

pub fn oracle_model(kind: ModelKind) -> Model {
    match kind {
        ModelKind::Multinomial => Model::Mn,
        ModelKind::DirichletMultinomial => Model::Dm,
        ModelKind::NegativeMultinomial => Model::Nm,
        ModelKind::GeneralizedDirichletMultinomial => Model::Gdm,
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
