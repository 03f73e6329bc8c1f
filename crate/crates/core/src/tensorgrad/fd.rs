//! Central finite differences, used as the independent gradient oracle in tests.

use alloc::vec::Vec;

pub(crate) fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub(crate) fn assert_grad_matches(name: &str, analytic: &[f64], numeric: &[f64], rel: f64, abs: f64) {
    assert_eq!(analytic.len(), numeric.len(), "{name}: length");
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let err = (a - n).abs();
        let scale = a.abs().max(n.abs());
        assert!(
            err <= abs || err <= rel * scale,
            "{name}[{i}]: analytic {a} vs numeric {n} (err {err})"
        );
    }
}
