use nalgebra::DMatrix;
use odmd_cpd::CpdError;
use odmd_cpd_py::{matrix_to_samples, samples_to_matrix, to_py_err};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::Python;

#[test]
fn samples_round_trip() {
    let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
    let m = samples_to_matrix(&rows).unwrap();
    assert_eq!(m, DMatrix::from_row_slice(2, 3, &[1.0, 3.0, 5.0, 2.0, 4.0, 6.0]));
    assert_eq!(matrix_to_samples(&m), rows);
}

#[test]
fn ragged_samples_rejected() {
    let err = samples_to_matrix(&[vec![1.0, 2.0], vec![3.0]]).unwrap_err();
    assert!(matches!(err, CpdError::Data(_)));
    assert_eq!(samples_to_matrix(&[]).unwrap().shape(), (0, 0));
}

#[test]
fn errors_map_to_python_types() {
    Python::initialize();
    Python::attach(|py| {
        assert!(to_py_err(CpdError::Config("bad window".into())).is_instance_of::<PyValueError>(py));
        assert!(to_py_err(CpdError::Data("bad row".into())).is_instance_of::<PyValueError>(py));
        assert!(to_py_err(CpdError::State("lost".into())).is_instance_of::<PyRuntimeError>(py));
    });
}
