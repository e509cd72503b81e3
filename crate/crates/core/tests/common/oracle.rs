//! Brute-force reference computations, written independently of the
//! library's metric code.

use scopetree::metrics::AnnotationLabel;

pub fn kappa(a: &[AnnotationLabel], b: &[AnnotationLabel]) -> f64 {
    let n = a.len() as f64;
    let mut agree = 0.0;
    for i in 0..a.len() {
        if a[i] == b[i] {
            agree += 1.0;
        }
    }
    let p_o = agree / n;
    let mut p_e = 0.0;
    for label in AnnotationLabel::ALL {
        let fa = a.iter().filter(|x| **x == label).count() as f64 / n;
        let fb = b.iter().filter(|x| **x == label).count() as f64 / n;
        p_e += fa * fb;
    }
    if p_e == 1.0 {
        return 1.0;
    }
    (p_o - p_e) / (1.0 - p_e)
}

/// Per-annotator fraction of items matching `pred`, averaged.
pub fn mean_fraction(
    rows: &[Vec<AnnotationLabel>],
    pred: impl Fn(usize, AnnotationLabel) -> bool,
) -> f64 {
    let mut total = 0.0;
    for row in rows {
        let mut hits = 0usize;
        for (i, l) in row.iter().enumerate() {
            if pred(i, *l) {
                hits += 1;
            }
        }
        total += hits as f64 / row.len() as f64;
    }
    total / rows.len() as f64
}
