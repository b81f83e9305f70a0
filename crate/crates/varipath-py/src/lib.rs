//! Python bindings (placeholder while the core library comes up).

use pyo3::prelude::*;

#[pymodule]
fn varipath_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
