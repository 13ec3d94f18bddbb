use std::cmp::Ordering;

/// Ranks starting at 1, with tied values sharing their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve from the Mann-Whitney statistic; ties count as
/// half. Returns `None` if either class is empty.
pub fn roc_auc(positives: &[f64], negatives: &[f64]) -> Option<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return None;
    }
    let all: Vec<f64> = positives.iter().chain(negatives).copied().collect();
    let ranks = average_ranks(&all);
    let np = positives.len() as f64;
    let nn = negatives.len() as f64;
    let rank_sum: f64 = ranks[..positives.len()].iter().sum();
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Average precision: precision at each distinct score threshold, weighted by
/// the recall gained there. Returns `None` without positives.
pub fn average_precision(positives: &[f64], negatives: &[f64]) -> Option<f64> {
    if positives.is_empty() {
        return None;
    }
    let mut scored: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let total = positives.len() as f64;
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut ap = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let threshold = scored[i].0;
        let mut gained = 0.0;
        while i < scored.len() && scored[i].0 == threshold {
            if scored[i].1 {
                tp += 1.0;
                gained += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        if gained > 0.0 {
            ap += (gained / total) * tp / (tp + fp);
        }
    }
    Some(ap)
}
