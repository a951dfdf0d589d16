use grounded_rank_py::grounded_rank_py;
use pyo3::prelude::*;
use pyo3::types::PyList;

#[test]
fn module_functions_from_python() {
    pyo3::append_to_inittab!(grounded_rank_py);
    Python::initialize();
    Python::attach(|py| -> PyResult<()> {
        let m = py.import("grounded_rank")?;
        let tokens: Vec<String> = m.getattr("tokenize")?.call1(("A Dog, runs!",))?.extract()?;
        assert_eq!(tokens, ["a", "dog", "runs"]);
        let s = PyList::new(py, [vec![0.5f64, 0.5], vec![0.5, 0.5]])?;
        let loss: f64 = m.getattr("max_violation")?.call1((s,))?.extract()?;
        assert!((loss - 0.8).abs() < 1e-12);
        let r: f64 = m.getattr("recall_at_k")?.call1((vec![1usize, 3, 12], 10))?.extract()?;
        assert!((r - 200.0 / 3.0).abs() < 1e-9);
        let err = m.getattr("recall_at_k")?.call1((Vec::<usize>::new(), 1)).unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(py) || err.to_string().contains("empty"));
        assert!(m
            .getattr("Model")?
            .call_method1("load", ("/nonexistent/model.ckpt",))
            .is_err());
        Ok(())
    })
    .unwrap();
}
