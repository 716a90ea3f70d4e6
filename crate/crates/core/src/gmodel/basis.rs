//! Natural cubic spline basis over the θ grid.

use nalgebra::DMatrix;

/// Column-orthonormal natural cubic spline basis, `grid.len() x df`.
///
/// Knots are `df + 1` equally spaced points spanning the grid (boundary knots
/// at its ends), which for a uniform grid coincides with placing the interior
/// knots at quantiles of θ. The constant function is dropped because it cancels
/// under the exponential-family normalization; the remaining columns are
/// centered and orthonormalized so that the coefficient norm penalty does not
/// depend on how the spline space is parameterized.
pub fn natural_spline_basis(grid: &[f64], df: usize) -> DMatrix<f64> {
    assert!(df >= 1, "spline basis needs df >= 1");
    assert!(grid.len() > df, "grid has {} points for df = {df}", grid.len());
    let lo = grid[0];
    let hi = grid[grid.len() - 1];
    let span = hi - lo;
    // df + 1 knots on the unit interval; x is θ rescaled to [0, 1]
    let knots: Vec<f64> = (0..=df).map(|k| k as f64 / df as f64).collect();
    let last = knots[df];
    let d = |k: usize, x: f64| {
        let cube = |v: f64| if v > 0.0 { v * v * v } else { 0.0 };
        (cube(x - knots[k]) - cube(x - last)) / (last - knots[k])
    };
    let mut raw = DMatrix::<f64>::zeros(grid.len(), df);
    for (i, &theta) in grid.iter().enumerate() {
        let x = (theta - lo) / span;
        raw[(i, 0)] = x;
        for k in 0..df.saturating_sub(1) {
            raw[(i, k + 1)] = d(k, x) - d(df - 1, x);
        }
    }
    for mut col in raw.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    raw.qr().q()
}
