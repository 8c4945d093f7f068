use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use das_core::data::{
    encode_target, pad_and_mask, sample_segment_indices, Vocabulary, BOS, EOS, PAD,
};
use das_core::decode::{beam_search, BeamConfig, StepModel};
use das_core::gradcheck::random_example;
use das_core::model::{AttentionMode, Summarizer, SummarizerConfig, SummarizerParams};
use das_core::nn::{lstm_cell_step, LstmParams};
use das_core::tensor::softmax_values;
use das_core::train::{lr_at_epoch, mix_seed, sequence_ce_loss, teacher_forced_loss, TrainConfig};
use das_core::{Tape, Tensor};

/// Random next-token distributions keyed by the prefix.
struct PrefixModel {
    vocab: usize,
    seed: u64,
    spread: f64,
}

impl StepModel for PrefixModel {
    type State = Vec<usize>;

    fn initial(&mut self) -> das_core::Result<Vec<usize>> {
        Ok(Vec::new())
    }

    fn step(&mut self, state: &Vec<usize>, prev: usize) -> das_core::Result<(Vec<usize>, Vec<f64>)> {
        let mut prefix = state.clone();
        prefix.push(prev);
        let mut parts = vec![self.seed];
        parts.extend(prefix.iter().map(|&t| t as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&parts));
        let raw: Vec<f64> = (0..self.vocab).map(|_| rng.gen_range(-self.spread..self.spread)).collect();
        let z = raw.iter().map(|v| v.exp()).sum::<f64>().ln();
        Ok((prefix, raw.iter().map(|v| v - z).collect()))
    }
}

fn top(model: &mut PrefixModel, width: usize, max_len: usize) -> f64 {
    let cfg = BeamConfig {
        width,
        max_len,
        bos: BOS,
        eos: EOS,
    };
    beam_search(model, cfg).unwrap()[0].log_prob
}

/// Widening the beam can lower the best score: a wider beam may keep a
/// prefix that looks better early but whose continuations are all worse,
/// displacing the one that the narrower beam completed.
#[test]
fn wider_beam_is_not_always_better() {
    let found = (0..2000u64).find(|&seed| {
        let vocab = 3 + (seed % 4) as usize;
        let max_len = 1 + (seed % 5) as usize;
        let mut m = PrefixModel { vocab, seed, spread: 1.0 };
        (1..5).any(|b| top(&mut m, b + 1, max_len) < top(&mut m, b, max_len) - 1e-12)
    });
    assert!(found.is_some());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exhaustive_width_dominates(seed in any::<u64>(), vocab in 3usize..5, max_len in 1usize..4, width in 1usize..5) {
        let mut m = PrefixModel { vocab, seed, spread: 2.0 };
        let full = vocab.pow(max_len as u32);
        prop_assert!(top(&mut m, full, max_len) >= top(&mut m, width, max_len) - 1e-12);
    }

    #[test]
    fn beam_hypotheses_are_well_formed(seed in any::<u64>(), vocab in 3usize..7, max_len in 1usize..6, width in 1usize..5) {
        let mut m = PrefixModel { vocab, seed, spread: 2.0 };
        let cfg = BeamConfig { width, max_len, bos: BOS, eos: EOS };
        let beams = beam_search(&mut m, cfg).unwrap();
        prop_assert!(!beams.is_empty() && beams.len() <= width);
        for w in beams.windows(2) {
            prop_assert!(w[0].log_prob >= w[1].log_prob);
        }
        for h in &beams {
            prop_assert_eq!(h.tokens[0], BOS);
            prop_assert!(h.finished);
            prop_assert!(*h.tokens.last().unwrap() == EOS || h.generated_len() == max_len);
            prop_assert!(h.generated_len() <= max_len);
            let sum: f64 = h.token_log_probs.iter().sum();
            prop_assert!((sum - h.log_prob).abs() < 1e-9);
            prop_assert!(h.token_log_probs.iter().all(|&lp| lp <= 0.0));
        }
    }

    #[test]
    fn width_one_is_greedy(seed in any::<u64>(), vocab in 3usize..7, max_len in 1usize..7) {
        let mut m = PrefixModel { vocab, seed, spread: 2.0 };
        let beam = beam_search(&mut m, BeamConfig { width: 1, max_len, bos: BOS, eos: EOS }).unwrap();
        let mut state = m.initial().unwrap();
        let mut prev = BOS;
        let mut tokens = vec![BOS];
        for _ in 0..max_len {
            let (next, lp) = m.step(&state, prev).unwrap();
            let mut arg = 0;
            for i in 1..lp.len() {
                if lp[i] > lp[arg] {
                    arg = i;
                }
            }
            tokens.push(arg);
            if arg == EOS {
                break;
            }
            state = next;
            prev = arg;
        }
        prop_assert_eq!(&beam[0].tokens, &tokens);
    }

    #[test]
    fn segment_indices_cover_the_range(n in 1usize..60, count in 1usize..40) {
        let idx = sample_segment_indices(n, count).unwrap();
        prop_assert_eq!(idx.len(), count);
        prop_assert_eq!(idx[0], 0);
        prop_assert!(idx.iter().all(|&i| i < n));
        prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        if count > 1 {
            prop_assert_eq!(*idx.last().unwrap(), n - 1);
        }
        if n >= count {
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn padding_grid_invariants(lens in proptest::collection::vec(0usize..9, 1..6), width in 1usize..7) {
        let vocab = Vocabulary::build([["a", "b", "c"].as_slice()], 1);
        let sentences: Vec<Vec<&str>> = lens.iter().map(|&l| (0..l).map(|i| ["a", "b", "c", "zz"][i % 4]).collect()).collect();
        let grid = pad_and_mask(&sentences, &vocab, width);
        prop_assert_eq!(grid.ids.len(), lens.len() * width);
        prop_assert_eq!(grid.rows(), lens.len());
        for (r, &l) in lens.iter().enumerate() {
            let kept = l.min(width);
            for k in 0..width {
                let i = r * width + k;
                prop_assert_eq!(grid.mask[i], k < kept);
                prop_assert_eq!(grid.ids[i] == PAD, k >= kept);
            }
        }
    }

    #[test]
    fn targets_are_framed(len in 0usize..40, max_len in 1usize..30) {
        let vocab = Vocabulary::build([["a"].as_slice()], 1);
        let words = vec!["a"; len];
        let t = encode_target(&words, &vocab, max_len);
        prop_assert_eq!(t[0], BOS);
        prop_assert_eq!(*t.last().unwrap(), EOS);
        prop_assert!(t.len() - 1 <= max_len);
        prop_assert_eq!(t.len() - 2, len.min(max_len - 1));
    }

    #[test]
    fn lr_is_non_increasing(epoch in 0usize..500, decay in 1.0f64..3.0, every in 1usize..10) {
        let cfg = TrainConfig { lr_decay: decay, decay_every: every, ..TrainConfig::default() };
        prop_assert!(lr_at_epoch(epoch + 1, &cfg) <= lr_at_epoch(epoch, &cfg));
        prop_assert!(lr_at_epoch(epoch, &cfg) > 0.0);
    }

    #[test]
    fn cross_entropy_is_non_negative(seed in any::<u64>(), steps in 1usize..6, vocab in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let logits: Vec<_> = (0..steps)
            .map(|_| tape.constant(Tensor::vector((0..vocab).map(|_| rng.gen_range(-20.0..20.0)).collect())))
            .collect();
        let targets: Vec<usize> = (0..steps).map(|_| rng.gen_range(0..vocab)).collect();
        let mut mask: Vec<bool> = (0..steps).map(|_| rng.gen_bool(0.7)).collect();
        mask[0] = true;
        let loss = sequence_ce_loss(&mut tape, &logits, &targets, &mask).unwrap();
        prop_assert!(tape.value(loss).item() >= 0.0);
    }

    #[test]
    fn softmax_is_shift_invariant_and_masked(xs in proptest::collection::vec(-30.0f64..30.0, 1..12), c in -100.0f64..100.0, bits in any::<u16>()) {
        let mut mask: Vec<bool> = (0..xs.len()).map(|i| bits >> (i % 16) & 1 == 1).collect();
        mask[0] = true;
        let a = softmax_values(&xs, Some(&mask)).unwrap();
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let b = softmax_values(&shifted, Some(&mask)).unwrap();
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for ((x, y), &m) in a.iter().zip(&b).zip(&mask) {
            prop_assert!((x - y).abs() < 1e-12);
            prop_assert!(*x >= 0.0);
            if !m {
                prop_assert_eq!(*x, 0.0);
            }
        }
    }

    #[test]
    fn lstm_hidden_is_bounded(seed in any::<u64>(), scale in 0.1f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (z, h) = (4, 3);
        let mut r = |n: usize| Tensor::vector((0..n).map(|_| rng.gen_range(-scale..scale)).collect());
        let mut tape = Tape::new();
        let weight = Tensor::matrix(4 * h, z + h, r(4 * h * (z + h)).into_data()).unwrap();
        let p = LstmParams { weight: tape.constant(weight), bias: tape.constant(r(4 * h)) };
        let (x, hp, cp) = (tape.constant(r(z)), tape.constant(r(h)), tape.constant(r(h)));
        let (h1, _) = lstm_cell_step(&mut tape, x, hp, cp, &p).unwrap();
        prop_assert!(tape.value(h1).data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn padded_token_identity_does_not_matter(seed in 0u64..1000, replacement in 1usize..20) {
        let cfg = SummarizerConfig::tiny(if seed % 2 == 0 { AttentionMode::Simple } else { AttentionMode::Hierarchical });
        let params = SummarizerParams::init(&cfg, seed).unwrap();
        let ex = random_example(&cfg, 3, seed);
        let mut changed = ex.clone();
        for (id, &m) in changed.input.words.ids.iter_mut().zip(&ex.input.words.mask) {
            if !m {
                *id = replacement;
            }
        }
        let loss = |e| {
            let mut tape = Tape::new();
            let bound = params.bind_frozen(&mut tape);
            teacher_forced_loss(&mut tape, &cfg, &bound, e, 0.1, &mut None).unwrap().1.total
        };
        prop_assert_eq!(loss(&ex).to_bits(), loss(&changed).to_bits());
    }

    #[test]
    fn logits_span_the_vocabulary(seed in 0u64..1000) {
        let modes = [AttentionMode::DecoderOnly, AttentionMode::Simple, AttentionMode::Hierarchical];
        let cfg = SummarizerConfig::tiny(modes[(seed % 3) as usize]);
        let params = SummarizerParams::init(&cfg, seed).unwrap();
        let ex = random_example(&cfg, 2, seed);
        let mut tape = Tape::new();
        let bound = params.bind_frozen(&mut tape);
        let out = Summarizer::new(&cfg, &bound).forward_teacher_forced(&mut tape, &ex.input, &ex.target, &mut None).unwrap();
        prop_assert_eq!(out.logits.len(), ex.target.len() - 1);
        for l in &out.logits {
            prop_assert_eq!(tape.shape(*l), &[cfg.vocab_size][..]);
            prop_assert!(tape.value(*l).is_finite());
        }
    }
}
