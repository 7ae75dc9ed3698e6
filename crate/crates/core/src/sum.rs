//! Correctly rounded floating-point summation.
//!
//! Sidecar and application totals are sums of many small per-component
//! values. Summing them with [`exact_sum`] makes every total independent of
//! the order the terms arrive in (filter chain order, parallel evaluation
//! order, CSV row order), so reports are bit-identical across runs.

/// Returns the sum of `values` rounded once to the nearest `f64`.
///
/// Uses Shewchuk's non-overlapping partials. Falls back to a plain sum when
/// any input is non-finite.
pub fn exact_sum<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64>,
{
    let mut partials: Vec<f64> = Vec::new();
    let mut naive = 0.0;
    let mut finite = true;

    for value in values {
        naive += value;
        if !value.is_finite() {
            finite = false;
        }
        if !finite {
            continue;
        }
        let mut x = value;
        let mut kept = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }

    if !finite || !naive.is_finite() {
        return naive;
    }
    round_partials(partials)
}

fn round_partials(mut partials: Vec<f64>) -> f64 {
    let Some(mut hi) = partials.pop() else {
        return 0.0;
    };
    let mut lo = 0.0;
    while let Some(y) = partials.pop() {
        let x = hi;
        hi = x + y;
        let y_rounded = hi - x;
        lo = y - y_rounded;
        if lo != 0.0 {
            break;
        }
    }
    // Half-way case: the discarded tail pushes the result to the next float.
    if let Some(&next) = partials.last() {
        if (lo < 0.0 && next < 0.0) || (lo > 0.0 && next > 0.0) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
    }
    hi
}
