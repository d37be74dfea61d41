use pyo3::prelude::*;

#[pymodule]
fn lpslab(_m: &Bound<PyModule>) -> PyResult<()> {
    Ok(())
}
