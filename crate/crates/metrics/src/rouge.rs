//! ROUGE-L: LCS-based F-measure weighted towards recall.

pub const ROUGE_BETA: f64 = 1.2;

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// F-measure of one candidate/reference pair.
pub fn rouge_l_pair<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let precision = lcs as f64 / candidate.len() as f64;
    let recall = lcs as f64 / reference.len() as f64;
    let beta2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + beta2) * precision * recall / (recall + beta2 * precision)
}

/// Best F-measure over the references.
pub fn rouge_l<T: PartialEq, R: AsRef<[T]>>(candidate: &[T], references: &[R]) -> f64 {
    references
        .iter()
        .map(|r| rouge_l_pair(candidate, r.as_ref()))
        .fold(0.0, f64::max)
}
