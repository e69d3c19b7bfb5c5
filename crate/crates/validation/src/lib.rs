//! Reporting helpers for the acceptance suite in `tests/acceptance.rs`.

use std::io::Write;

use nalgebra::DMatrix;

/// One measured part of a criterion.
#[derive(Debug, Clone)]
pub struct Check {
    pub ok: bool,
    pub text: String,
}

pub fn check(ok: bool, text: impl Into<String>) -> Check {
    Check {
        ok,
        text: text.into(),
    }
}

/// `PASS criterion N (title): part [ok]; part [FAIL]; ...`
pub fn verdict_line(n: usize, title: &str, checks: &[Check]) -> (bool, String) {
    let ok = checks.iter().all(|c| c.ok);
    let parts: Vec<String> = checks
        .iter()
        .map(|c| format!("{} [{}]", c.text, if c.ok { "ok" } else { "FAIL" }))
        .collect();
    let line = format!(
        "{} criterion {n} ({title}): {}",
        if ok { "PASS" } else { "FAIL" },
        parts.join("; ")
    );
    (ok, line)
}

/// Prints the verdict line straight to stdout, past the test harness
/// capture, then fails the calling test if any part failed.
pub fn verdict(n: usize, title: &str, checks: &[Check]) {
    let (ok, line) = verdict_line(n, title, checks);
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
    assert!(ok, "{line}");
}

/// Largest principal angle between the column spans of `a` and `b`.
pub fn subspace_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    (qa.transpose() * qb)
        .singular_values()
        .min()
        .clamp(-1.0, 1.0)
        .acos()
}

/// Rows of column `col` whose magnitude exceeds `tol`.
pub fn support(v: &DMatrix<f64>, col: usize, tol: f64) -> Vec<usize> {
    (0..v.nrows())
        .filter(|&i| v[(i, col)].abs() > tol)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format() {
        let (ok, line) = verdict_line(3, "demo", &[check(true, "a 1"), check(false, "b 2")]);
        assert!(!ok);
        assert_eq!(line, "FAIL criterion 3 (demo): a 1 [ok]; b 2 [FAIL]");
        let (ok, line) = verdict_line(1, "x", &[check(true, "y")]);
        assert!(ok);
        assert!(line.starts_with("PASS criterion 1 "));
    }

    #[test]
    fn angle_of_rotated_basis_is_zero() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, -1.0, 0.0, 0.0]);
        assert!(subspace_angle(&a, &b) < 1e-7);
        let c = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((subspace_angle(&a, &c) - std::f64::consts::FRAC_PI_2).abs() < 1e-7);
    }

    #[test]
    fn support_uses_strict_threshold() {
        let v = DMatrix::from_row_slice(3, 1, &[1e-6, 2e-6, -0.5]);
        assert_eq!(support(&v, 0, 1e-6), vec![1, 2]);
    }
}
