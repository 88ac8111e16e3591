/// Locates the switch point of a predicate that is `false` on `[lo, t)` and
/// `true` on `(t, hi]`. Returns the final bracket `(lo, hi)` with
/// `hi - lo <= tol` (or after `max_iter` halvings), so `pred(hi)` is
/// `true` whenever it was at the start.
pub(crate) fn switch_point<F: FnMut(f64) -> bool>(
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    mut pred: F,
) -> (f64, f64) {
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (lo, hi)
}

/// Root of a continuous `f` on `[lo, hi]` given a sign change, refined until
/// the bracket is tighter than `tol` or floating-point resolution.
pub(crate) fn root<F: FnMut(f64) -> f64>(lo: f64, hi: f64, tol: f64, mut f: F) -> f64 {
    let f_lo = f(lo);
    let rising = f_lo < 0.0;
    let (a, b) = switch_point(lo, hi, tol, |x| {
        let v = f(x);
        if rising {
            v >= 0.0
        } else {
            v <= 0.0
        }
    });
    // Pick whichever end has the smaller residual.
    if f(a).abs() <= f(b).abs() {
        a
    } else {
        b
    }
}
