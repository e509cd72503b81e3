use std::collections::HashMap;
use std::hash::Hash;

use super::MetricsError;

/// Cohen's kappa for two raters over the same items.
///
/// Computed from integer counts: with `n` items, `agree` matching items and
/// `m = Σ_c count_a(c) * count_b(c)`, kappa is `(n*agree - m) / (n² - m)`.
/// When `m = n²` both raters used one identical constant label and the
/// result is 1.
pub fn cohen_kappa<T: Eq + Hash>(labels_a: &[T], labels_b: &[T]) -> Result<f64, MetricsError> {
    if labels_a.is_empty() {
        return Err(MetricsError::InvalidArgument(
            "kappa needs at least one item".into(),
        ));
    }
    if labels_a.len() != labels_b.len() {
        return Err(MetricsError::InvalidArgument(format!(
            "kappa needs aligned label vectors, got lengths {} and {}",
            labels_a.len(),
            labels_b.len()
        )));
    }
    let n = labels_a.len() as u128;
    let mut counts_a: HashMap<&T, u128> = HashMap::new();
    let mut counts_b: HashMap<&T, u128> = HashMap::new();
    let mut agree = 0u128;
    for (a, b) in labels_a.iter().zip(labels_b) {
        *counts_a.entry(a).or_default() += 1;
        *counts_b.entry(b).or_default() += 1;
        if a == b {
            agree += 1;
        }
    }
    let chance: u128 = counts_a
        .iter()
        .map(|(label, ca)| ca * counts_b.get(label).copied().unwrap_or(0))
        .sum();
    let total = n * n;
    if chance == total {
        return Ok(1.0);
    }
    let num = (n * agree) as f64 - chance as f64;
    let den = (total - chance) as f64;
    Ok(num / den)
}
