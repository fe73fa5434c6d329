/// Outcome of comparing an analytic gradient against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: Option<usize>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Central-difference check of `analytic` against `f` at `point`.
///
/// Relative error per coordinate is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn finite_diff_check<F>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    h: f64,
    tol: f64,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(
        point.len(),
        analytic.len(),
        "gradient length must match point"
    );
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        checked: point.len(),
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: None,
        tolerance: tol,
        passed: true,
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(&x);
        x[i] = orig - h;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let abs = (analytic[i] - numeric).abs();
        let rel = abs / analytic[i].abs().max(numeric.abs()).max(1e-6);
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error || !rel.is_finite() {
            report.max_rel_error = rel;
            report.worst_index = Some(i);
        }
    }
    report.passed = report.max_rel_error < tol;
    report
}
