//! METEOR-lite: exact and Porter-stem unigram alignment with the standard
//! fragmentation penalty. The WordNet synonym and paraphrase stages of the
//! official tool are not implemented, so absolute values differ from it.

use porter_stemmer::stem;

pub const ALPHA: f64 = 0.9;
pub const BETA: f64 = 3.0;
pub const GAMMA: f64 = 0.5;

/// Alignment statistics of one candidate/reference pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    /// (candidate position, reference position), sorted by candidate position.
    pub matches: Vec<(usize, usize)>,
    pub chunks: usize,
}

impl Alignment {
    pub fn match_count(&self) -> usize {
        self.matches.len()
    }
}

/// Two-stage alignment: exact surface matches first, then stem matches among
/// the words left unaligned. Within a stage each candidate word, left to
/// right, takes the reference position continuing the current chunk when
/// one is free, else the leftmost free position.
pub fn align<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Alignment {
    let mut ref_used = vec![false; reference.len()];
    let mut cand_match: Vec<Option<usize>> = vec![None; candidate.len()];

    let cand_words: Vec<&str> = candidate.iter().map(AsRef::as_ref).collect();
    let ref_words: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    run_stage(&cand_words, &ref_words, &mut cand_match, &mut ref_used);

    let cand_stems: Vec<String> = cand_words.iter().map(|w| stem(w)).collect();
    let ref_stems: Vec<String> = ref_words.iter().map(|w| stem(w)).collect();
    run_stage(&cand_stems, &ref_stems, &mut cand_match, &mut ref_used);

    let matches: Vec<(usize, usize)> = cand_match
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|j| (i, j)))
        .collect();
    let chunks = count_chunks(&matches);
    Alignment { matches, chunks }
}

fn run_stage<S: AsRef<str>>(
    candidate: &[S],
    reference: &[S],
    cand_match: &mut [Option<usize>],
    ref_used: &mut [bool],
) {
    for i in 0..candidate.len() {
        if cand_match[i].is_some() {
            continue;
        }
        let word = candidate[i].as_ref();
        let free = |j: usize| !ref_used[j] && word == reference[j].as_ref();
        let continuing = i
            .checked_sub(1)
            .and_then(|p| cand_match[p])
            .map(|j| j + 1)
            .filter(|&j| j < reference.len() && free(j));
        let chosen = continuing.or_else(|| (0..reference.len()).find(|&j| free(j)));
        if let Some(j) = chosen {
            ref_used[j] = true;
            cand_match[i] = Some(j);
        }
    }
}

/// Number of maximal runs of matches adjacent in both sentences.
pub fn count_chunks(matches: &[(usize, usize)]) -> usize {
    if matches.is_empty() {
        return 0;
    }
    1 + matches
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

/// Score of one candidate/reference pair.
pub fn meteor_pair<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    let alignment = align(candidate, reference);
    let m = alignment.match_count();
    if m == 0 {
        return 0.0;
    }
    let precision = m as f64 / candidate.len() as f64;
    let recall = m as f64 / reference.len() as f64;
    let f_mean = precision * recall / (ALPHA * precision + (1.0 - ALPHA) * recall);
    let penalty = GAMMA * (alignment.chunks as f64 / m as f64).powf(BETA);
    f_mean * (1.0 - penalty)
}

/// Best pair score over the references.
pub fn meteor_lite<S: AsRef<str>, R: AsRef<[S]>>(candidate: &[S], references: &[R]) -> f64 {
    references
        .iter()
        .map(|r| meteor_pair(candidate, r.as_ref()))
        .fold(0.0, f64::max)
}
