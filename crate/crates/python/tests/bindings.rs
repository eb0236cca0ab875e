use std::ffi::CString;

use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<F: FnOnce(Python<'_>, &Bound<'_, PyDict>)>(f: F) {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "pynondiv").unwrap();
        pynondiv::pynondiv(&m).unwrap();
        let globals = PyDict::new(py);
        globals.set_item("nd", m).unwrap();
        f(py, &globals);
    });
}

fn run(py: Python<'_>, globals: &Bound<'_, PyDict>, code: &str) {
    let code = CString::new(code).unwrap();
    if let Err(e) = py.run(&code, Some(globals), None) {
        e.print(py);
        panic!("python snippet failed");
    }
}

#[test]
fn solve_matches_manufactured_solution() {
    with_module(|py, g| {
        run(
            py,
            g,
            r#"
grid = nd.Grid(2, (-4.0, 4.0), 33, 16)
op = nd.Operator.draw("vmo_oscillatory", seed=2, delta=0.3, epsilon=0.05)
u, f = nd.manufactured("gaussian", grid, op, 4.0)
sol = nd.solve(op, f, 4.0)
err = (sol["u"] - u).max_abs() / u.max_abs()
assert err < 0.05, err
assert sol["residual"] < 1e-9
assert len(sol["u"].values()) == len(grid) == 33 * 16
"#,
        )
    });
}

#[test]
fn halfspace_and_modes_round_trip() {
    with_module(|py, g| {
        run(
            py,
            g,
            r#"
op = nd.Operator.draw("checkerboard_x1", seed=1, delta=0.3)
grid = nd.Grid(2, (-4.0, 4.0), 33, 16)
_, f = nd.manufactured("gaussian", grid, op, 2.0)
a = nd.solve(op, f, 2.0)["u"]
b = nd.solve_modes(op, f, 2.0)
assert (a - b["u"]).max_abs() < 1e-8 * b["u"].max_abs()
assert len(b["modes"]) == 16
half = nd.Grid(2, (0.0, 4.0), 33, 16)
_, hf = nd.manufactured("even", half, op, 2.0)
hs = nd.solve_halfspace(op, hf, 2.0, bc="neumann")
assert hs["symmetry_defect"] < 1e-10
"#,
        )
    });
}

#[test]
fn errors_become_python_exceptions() {
    with_module(|py, g| {
        run(
            py,
            g,
            r#"
for call in (
    lambda: nd.Grid(2, (1.0, -1.0), 9, 8),
    lambda: nd.Operator.draw("unknown"),
    lambda: nd.run("bogus", "x.toml"),
):
    try:
        call()
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")
assert nd.run("solve", "/nonexistent.toml") == 2
"#,
        )
    });
}
