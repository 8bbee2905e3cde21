//! Adaptive composite Simpson quadrature.

const MAX_DEPTH: u32 = 48;

/// Integrates `f` over `[a, b]`. The interval is first cut into `panels`
/// equal pieces; each piece is refined until successive Simpson estimates
/// differ by less than its share of `tol`.
pub(crate) fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64, panels: usize) -> f64 {
    let panels = panels.max(1);
    let width = (b - a) / panels as f64;
    let share = tol / panels as f64;
    let mut total = 0.0;
    let mut left = a;
    let mut f_left = f(left);
    for i in 0..panels {
        let right = if i + 1 == panels { b } else { a + width * (i + 1) as f64 };
        let mid = 0.5 * (left + right);
        let f_mid = f(mid);
        let f_right = f(right);
        let whole = (right - left) / 6.0 * (f_left + 4.0 * f_mid + f_right);
        total += refine(&f, left, right, f_left, f_mid, f_right, whole, share, MAX_DEPTH);
        left = right;
        f_left = f_right;
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn refine<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    refine(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + refine(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}
