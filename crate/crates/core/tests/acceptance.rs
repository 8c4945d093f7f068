//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test -p das-core --test acceptance -- 3 5` runs a subset.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use das_core::checkpoint::Checkpoint;
use das_core::data::{Vocabulary, BOS, EOS};
use das_core::decode::{beam_search, dm_ave_score, dm_best_select, generate, BeamConfig, StepModel};
use das_core::experiments::{lambda_sweep, render_rows, segment_sweep, ExperimentSpec};
use das_core::gradcheck::{check_model, random_example, GradcheckOptions};
use das_core::model::{AttentionMode, AttentionSite, Summarizer, SummarizerConfig, SummarizerParams};
use das_core::synthetic::{self, SyntheticConfig};
use das_core::train::{
    bleu4_reward, build_examples, lr_at_epoch, mix_seed, scst_gradient, scst_step, teacher_forced_loss, train_loop,
    train_step, vocabulary_from_records, Adam, Example, TrainConfig, TrainMode,
};
use das_core::{Tape, Tensor};
use das_metrics::{
    dense_eval, meteor_lite, rouge_l, sentence_bleu, cider_d, GroundTruthEvent, Interval, PairAggregation,
    Smoothing, TemporalPrediction, IOU_THRESHOLDS,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------- 1

fn c1_gradcheck() -> Check {
    let mut lines = Vec::new();
    for mode in [AttentionMode::Simple, AttentionMode::Hierarchical] {
        let cfg = SummarizerConfig::tiny(mode);
        let t = Instant::now();
        let opts = GradcheckOptions {
            step: 1e-5,
            tol: 1e-4,
            grad_scale: 1.0,
        };
        let report = check_model(&cfg, 11, 0.1, 0.5, opts).map_err(err)?;
        let secs = t.elapsed().as_secs_f64();
        if !report.passed() {
            return Err(format!("{} failed:\n{}", mode.label(), report.render()));
        }
        ensure(secs < 60.0, || format!("{} took {secs:.1}s", mode.label()))?;
        lines.push(format!(
            "{} {} tensors max err {:.2e} in {secs:.1}s",
            mode.label(),
            report.params.len(),
            report.max_rel_error()
        ));
    }
    Ok(lines.join("; "))
}

// ---------------------------------------------------------------- 2

fn overfit_mode(mode: AttentionMode) -> Result<(f64, usize, usize), String> {
    let corpus = synthetic::generate(&SyntheticConfig {
        proposals: 8,
        classes: 8,
        feature_dim: 16,
        seed: 4,
        ..SyntheticConfig::default()
    })
    .map_err(err)?;
    let vocab = vocabulary_from_records(&corpus.records, 1);
    let cfg = SummarizerConfig {
        n_segments: 4,
        n_words: 5,
        feature_dim: 16,
        hidden: 192,
        embed: 128,
        vocab_size: vocab.len(),
        attention_hidden: 64,
        mlp_hidden: 64,
        mode,
        keep_prob: 1.0,
        visual_encoder: true,
        visual_decoder: true,
    };
    let train = TrainConfig {
        batch_size: 8,
        max_len: 12,
        ..TrainConfig::default()
    };
    let examples = build_examples(&corpus.records, &vocab, &cfg, train.max_len).map_err(err)?;
    let mut params = SummarizerParams::init(&cfg, 1).map_err(err)?;
    let mut adam = Adam::for_params(&params, &train);
    let batch: Vec<&Example> = examples.iter().collect();
    for _ in 0..500 {
        train_step(&cfg, &mut params, &mut adam, &batch, &train, 3e-4, None).map_err(err)?;
    }
    let mut ce = 0.0;
    let mut exact = 0;
    for ex in &examples {
        let mut tape = Tape::new();
        let bound = params.bind_frozen(&mut tape);
        let (_, parts) = teacher_forced_loss(&mut tape, &cfg, &bound, ex, 0.0, &mut None).map_err(err)?;
        ce += parts.ce / examples.len() as f64;
        let g = generate(&cfg, &params, &ex.input, BeamConfig::greedy(train.max_len)).map_err(err)?;
        if g.words == ex.target[1..ex.target.len() - 1] {
            exact += 1;
        }
    }
    Ok((ce, exact, examples.len()))
}

fn c2_overfit() -> Check {
    let t = Instant::now();
    let mut lines = Vec::new();
    for mode in [AttentionMode::Simple, AttentionMode::Hierarchical] {
        let (ce, exact, n) = overfit_mode(mode)?;
        ensure(ce < 0.05, || format!("{} CE {ce:.4} after 500 steps", mode.label()))?;
        ensure(exact == n, || format!("{} greedy exact {exact}/{n}", mode.label()))?;
        lines.push(format!("{} CE {ce:.4} exact {exact}/{n}", mode.label()));
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 300.0, || format!("took {secs:.0}s"))?;
    Ok(format!("{} in {secs:.0}s", lines.join("; ")))
}

// ---------------------------------------------------------------- 3

fn random_config(rng: &mut ChaCha8Rng) -> SummarizerConfig {
    let mode = *[AttentionMode::Simple, AttentionMode::Hierarchical].choose(rng).unwrap();
    SummarizerConfig {
        n_segments: rng.gen_range(1..=6),
        n_words: rng.gen_range(1..=6),
        feature_dim: rng.gen_range(1..=8),
        hidden: rng.gen_range(2..=12),
        embed: rng.gen_range(2..=12),
        vocab_size: rng.gen_range(5..=15),
        attention_hidden: rng.gen_range(1..=8),
        mlp_hidden: rng.gen_range(1..=8),
        mode,
        keep_prob: 0.8,
        visual_encoder: rng.gen_bool(0.7),
        visual_decoder: rng.gen_bool(0.7),
    }
}

fn c3_shapes() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut records = 0;
    let mut masked_zeros = 0;
    for trial in 0..50 {
        let cfg = random_config(&mut rng);
        let params = SummarizerParams::init(&cfg, trial).map_err(err)?;
        let ex = random_example(&cfg, rng.gen_range(1..=4), 100 + trial);
        let mut tape = Tape::new();
        let bound = params.bind_frozen(&mut tape);
        let out = Summarizer::new(&cfg, &bound)
            .forward_teacher_forced(&mut tape, &ex.input, &ex.target, &mut None)
            .map_err(err)?;
        let ctx = &out.context;
        let enc = ctx.encoder.as_ref().ok_or("missing encoder output")?;
        ensure(enc.hidden.len() == cfg.n_segments * cfg.n_words, || {
            format!("trial {trial}: |H^f| = {} for {cfg:?}", enc.hidden.len())
        })?;
        ensure(tape.shape(enc.stacked) == [cfg.n_segments * cfg.n_words, cfg.hidden], || {
            format!("trial {trial}: stacked H^f shape {:?}", tape.shape(enc.stacked))
        })?;
        match cfg.mode {
            AttentionMode::Hierarchical => {
                let ha = ctx.segment_states.as_ref().ok_or("missing H^a")?;
                ensure(ha.len() == cfg.n_segments, || format!("trial {trial}: |H^a| = {}", ha.len()))?;
                let groups = out.attention.iter().filter(|a| a.site == AttentionSite::Group).count();
                ensure(groups == cfg.n_segments, || format!("trial {trial}: {groups} group attentions"))?;
            }
            _ => ensure(ctx.segment_states.is_none(), || format!("trial {trial}: SA produced H^a"))?,
        }
        let summary = out.attention.iter().filter(|a| a.site == AttentionSite::Summary).count();
        ensure(summary == ex.target.len() - 1, || format!("trial {trial}: {summary} summary attentions"))?;
        for rec in &out.attention {
            let w = tape.value(rec.weights).data();
            let sum: f64 = w.iter().sum();
            ensure(close(sum, 1.0, 1e-9), || format!("trial {trial}: {:?} sums to {sum}", rec.site))?;
            if let Some(mask) = &rec.mask {
                ensure(mask.len() == w.len(), || format!("trial {trial}: mask length"))?;
                for (v, &m) in w.iter().zip(mask) {
                    if !m {
                        ensure(*v == 0.0, || format!("trial {trial}: {:?} masked weight {v}", rec.site))?;
                        masked_zeros += 1;
                    }
                }
            }
            records += 1;
        }
    }
    Ok(format!("50 configs, {records} attention vectors, {masked_zeros} masked zeros"))
}

// ---------------------------------------------------------------- 4

fn c4_hyperparameters() -> Check {
    let cfg = TrainConfig::default();
    for (epoch, want) in [(0, 3e-4), (3, 2.4e-4), (6, 1.92e-4)] {
        let got = lr_at_epoch(epoch, &cfg);
        ensure(close(got, want, 1e-15), || format!("lr at epoch {epoch}: {got}"))?;
    }
    let mut spec = ExperimentSpec::default();
    spec.train.epochs = 2;
    spec.data.proposals = 16;
    spec.model.n_words = 3;
    spec.model.hidden = 16;
    spec.model.embed = 16;
    let lambdas = lambda_sweep(&spec, &[0.0, 0.01, 0.1, 1.0]).map_err(err)?;
    let counts = segment_sweep(&spec, &[10, 20, 40]).map_err(err)?;
    ensure(lambdas.len() == 4 && counts.len() == 3, || "missing sweep rows".into())?;
    for row in lambdas.iter().chain(&counts) {
        ensure(
            row.final_ce.is_finite() && row.scores.to_array().iter().all(|v| v.is_finite()),
            || format!("non-finite row {row:?}"),
        )?;
    }
    print!("{}", render_rows(&lambdas));
    print!("{}", render_rows(&counts));
    Ok("lr 3e-4/2.4e-4/1.92e-4; lambda_d grid 4 rows; N_m grid 3 rows".into())
}

// ---------------------------------------------------------------- 5

fn c5_metrics() -> Check {
    let bp = (1.0f64 - 4.0 / 3.0).exp();
    let b1 = sentence_bleu(&toks("the cat sat"), &[toks("the cat sat down")], 1, Smoothing::None);
    ensure(close(b1, bp, 1e-9), || format!("BLEU-1 {b1} vs {bp}"))?;
    let b2 = sentence_bleu(&toks("the cat the cat"), &[toks("the cat sat on")], 2, Smoothing::None);
    ensure(close(b2, (1.0f64 / 6.0).sqrt(), 1e-9), || format!("BLEU-2 {b2}"))?;
    let same = sentence_bleu(&toks("a b c d"), &[toks("a b c d")], 4, Smoothing::None);
    ensure(close(same, 1.0, 1e-9), || format!("BLEU-4 identical {same}"))?;
    let zero = sentence_bleu(&toks("x y"), &[toks("a b")], 1, Smoothing::None);
    ensure(zero == 0.0, || format!("BLEU-1 disjoint {zero}"))?;

    let r = rouge_l(&toks("a b c d"), &[toks("a c d e")]);
    ensure(close(r, 0.75, 1e-9), || format!("ROUGE-L {r}"))?;

    // four matches in two chunks, P = 1, R = 4/6
    let m = meteor_lite(&toks("a b c d"), &[toks("a b x c d y")]);
    ensure(close(m, 75.0 / 116.0, 1e-9), || format!("METEOR-lite {m}"))?;
    let mi = meteor_lite(&toks("a man rides a horse"), &[toks("a man rides a horse")]);
    ensure(close(mi, 1.0 - 0.5 * 0.2f64.powi(3), 1e-9), || format!("METEOR-lite identical {mi}"))?;

    let corpus = vec![
        (toks("a man rides a horse"), vec![toks("a man rides a horse")]),
        (toks("dogs play"), vec![toks("two dogs play in snow")]),
    ];
    let c = cider_d(&corpus).map_err(err)?;
    ensure(close(c[0], 10.0, 1e-9), || format!("CIDEr-D {}", c[0]))?;

    let texts = ["a man rides a horse", "two dogs play in the snow", "a woman cooks dinner"];
    let spans = [(0.0, 5.0), (3.0, 9.0), (12.0, 20.0)];
    let preds: Vec<TemporalPrediction> = texts
        .iter()
        .zip(spans)
        .map(|(t, (s, e))| TemporalPrediction {
            video_id: "v".into(),
            interval: Interval::new(s, e).unwrap(),
            sentence: toks(t),
        })
        .collect();
    let gts: Vec<GroundTruthEvent> = texts
        .iter()
        .zip(spans)
        .map(|(t, (s, e))| GroundTruthEvent {
            video_id: "v".into(),
            interval: Interval::new(s, e).unwrap(),
            references: vec![toks(t)],
        })
        .collect();
    for agg in [PairAggregation::AveragePairs, PairAggregation::BestPerPrediction] {
        let report = dense_eval(&preds, &gts, agg).map_err(err)?;
        let thresholds: Vec<f64> = report.per_threshold.iter().map(|t| t.threshold).collect();
        ensure(thresholds == IOU_THRESHOLDS, || format!("thresholds {thresholds:?}"))?;
        if agg == PairAggregation::BestPerPrediction {
            for t in &report.per_threshold {
                ensure(t.scores.bleu_1 == 1.0, || format!("BLEU-1 {} at {}", t.scores.bleu_1, t.threshold))?;
            }
        }
    }
    // With overlapping events the pair average mixes in cross pairs, so the
    // identity check uses disjoint events as well.
    let disjoint: Vec<(f64, f64)> = vec![(0.0, 5.0), (10.0, 15.0), (20.0, 25.0)];
    let preds2: Vec<TemporalPrediction> = preds
        .iter()
        .zip(&disjoint)
        .map(|(p, &(s, e))| TemporalPrediction {
            interval: Interval::new(s, e).unwrap(),
            ..p.clone()
        })
        .collect();
    let gts2: Vec<GroundTruthEvent> = gts
        .iter()
        .zip(&disjoint)
        .map(|(g, &(s, e))| GroundTruthEvent {
            interval: Interval::new(s, e).unwrap(),
            ..g.clone()
        })
        .collect();
    let report = dense_eval(&preds2, &gts2, PairAggregation::AveragePairs).map_err(err)?;
    for t in &report.per_threshold {
        ensure(t.scores.bleu_1 == 1.0, || format!("BLEU-1 {} at {}", t.scores.bleu_1, t.threshold))?;
    }
    Ok("BLEU, ROUGE-L, METEOR-lite, CIDEr-D fixtures; dense_eval identity at 0.3/0.5/0.7/0.9".into())
}

// ---------------------------------------------------------------- 6

fn c6_selectors() -> Check {
    let fixed = dm_best_select(&[vec![0.5, 0.5], vec![0.9, 0.1]]).map_err(err)?;
    ensure(fixed == 0, || format!("0.5/0.5 vs 0.9/0.1 picked {fixed}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..1000 {
        let n = rng.gen_range(1..=8);
        let sets: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..rng.gen_range(1..=10)).map(|_| rng.gen_range(1e-6..=1.0)).collect())
            .collect();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, s) in sets.iter().enumerate() {
            let mut total = 0.0;
            for p in s {
                total += f64::ln(*p);
            }
            let score = total / s.len() as f64;
            if score > best_score {
                best = i;
                best_score = score;
            }
        }
        let got = dm_best_select(&sets).map_err(err)?;
        ensure(got == best, || format!("trial {trial}: DM-best {got} vs brute force {best}"))?;
    }
    let words = ["a", "man", "rides", "horse", "dog", "runs", "the", "park"];
    for trial in 0..200 {
        let sentence = |rng: &mut ChaCha8Rng| -> Vec<String> {
            (0..rng.gen_range(1..=6)).map(|_| words.choose(rng).unwrap().to_string()).collect()
        };
        let sentences: Vec<Vec<String>> = (0..rng.gen_range(1..=6)).map(|_| sentence(&mut rng)).collect();
        let refs: Vec<Vec<String>> = (0..rng.gen_range(1..=3)).map(|_| sentence(&mut rng)).collect();
        let got = dm_ave_score(&sentences, &refs, |s, r| meteor_lite(s, r)).map_err(err)?;
        let mut total = 0.0;
        for s in &sentences {
            total += meteor_lite(s, &refs);
        }
        let want = total / sentences.len() as f64;
        ensure(close(got, want, 1e-12), || format!("trial {trial}: DM-ave {got} vs {want}"))?;
    }
    Ok("1000 DM-best sets, 200 DM-ave sets".into())
}

// ---------------------------------------------------------------- 7

fn independent_greedy(cfg: &SummarizerConfig, params: &SummarizerParams<Tensor>, ex: &Example, max_len: usize) -> Vec<usize> {
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let net = Summarizer::new(cfg, &bound);
    let ctx = net.prepare(&mut tape, &ex.input, &mut None, &mut Vec::new()).unwrap();
    let mut state = net.initial_state(&mut tape);
    let mut prev = BOS;
    let mut words = Vec::new();
    for _ in 0..max_len {
        let (next, logits) = net.decoder_step(&mut tape, &ctx, prev, state, &mut None, &mut Vec::new()).unwrap();
        let l = tape.value(logits).data();
        let mut arg = 0;
        for i in 1..l.len() {
            if l[i] > l[arg] {
                arg = i;
            }
        }
        if arg == EOS {
            break;
        }
        words.push(arg);
        state = next;
        prev = arg;
    }
    words
}

/// Next-token log-probabilities looked up by prefix.
struct PrefixTable {
    vocab: usize,
    seed: u64,
}

impl PrefixTable {
    fn log_probs(&self, prefix: &[usize]) -> Vec<f64> {
        let mut parts = vec![self.seed];
        parts.extend(prefix.iter().map(|&t| t as u64 + 1));
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&parts));
        let raw: Vec<f64> = (0..self.vocab).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let m = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = raw.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
        raw.iter().map(|v| v - z).collect()
    }
}

impl StepModel for PrefixTable {
    type State = Vec<usize>;

    fn initial(&mut self) -> das_core::Result<Vec<usize>> {
        Ok(Vec::new())
    }

    fn step(&mut self, state: &Vec<usize>, prev: usize) -> das_core::Result<(Vec<usize>, Vec<f64>)> {
        let mut prefix = state.clone();
        if prev != usize::MAX - 1 {
            prefix.push(prev);
        }
        let lp = self.log_probs(&prefix);
        Ok((prefix, lp))
    }
}

fn c7_decoding() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let modes = [AttentionMode::DecoderOnly, AttentionMode::Simple, AttentionMode::Hierarchical];
    let mut lengths = Vec::new();
    for trial in 0..100u64 {
        let mut cfg = random_config(&mut rng);
        cfg.mode = modes[trial as usize % 3];
        let mut params = SummarizerParams::init(&cfg, trial).map_err(err)?;
        params.for_each_mut(&mut |_, t| t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-1.0..1.0)));
        let ex = random_example(&cfg, 2, 500 + trial);
        let max_len = 8;
        let beam = generate(&cfg, &params, &ex.input, BeamConfig::new(1, max_len)).map_err(err)?;
        let greedy = independent_greedy(&cfg, &params, &ex, max_len);
        ensure(beam.words == greedy, || {
            format!("trial {trial} ({}): beam-1 {:?} vs greedy {greedy:?}", cfg.mode.label(), beam.words)
        })?;
        lengths.push(greedy.len());
    }

    // Three tokens, two steps, no end token: nine complete sequences.
    for seed in 0..50 {
        let mut table = PrefixTable { vocab: 3, seed };
        let cfg = BeamConfig {
            width: 3,
            max_len: 2,
            bos: usize::MAX - 1,
            eos: usize::MAX,
        };
        let beams = beam_search(&mut table, cfg).map_err(err)?;
        let mut all: Vec<(f64, Vec<usize>)> = Vec::new();
        for a in 0..3 {
            for b in 0..3 {
                let lp = table.log_probs(&[])[a] + table.log_probs(&[a])[b];
                all.push((lp, vec![a, b]));
            }
        }
        all.sort_by(|x, y| y.0.total_cmp(&x.0));
        ensure(beams.len() == 3, || format!("seed {seed}: {} beams", beams.len()))?;
        for (h, (lp, seq)) in beams.iter().zip(&all) {
            ensure(h.tokens[1..] == seq[..] && close(h.log_prob, *lp, 1e-12), || {
                format!("seed {seed}: beam {:?} {} vs exhaustive {seq:?} {lp}", &h.tokens[1..], h.log_prob)
            })?;
        }
    }
    let mean_len = lengths.iter().sum::<usize>() as f64 / lengths.len() as f64;
    Ok(format!("100 models beam-1 == greedy (mean length {mean_len:.1}); 50 beam-3 toys == exhaustive top 3"))
}

// ---------------------------------------------------------------- 8

fn scst_model(vocab: usize) -> SummarizerConfig {
    SummarizerConfig {
        n_segments: 3,
        n_words: 5,
        feature_dim: 8,
        hidden: 32,
        embed: 32,
        vocab_size: vocab,
        attention_hidden: 16,
        mlp_hidden: 32,
        mode: AttentionMode::Hierarchical,
        keep_prob: 1.0,
        visual_encoder: true,
        visual_decoder: true,
    }
}

fn greedy_reward(cfg: &SummarizerConfig, params: &SummarizerParams<Tensor>, examples: &[Example], max_len: usize) -> f64 {
    examples
        .iter()
        .map(|ex| {
            let g = generate(cfg, params, &ex.input, BeamConfig::greedy(max_len)).unwrap();
            bleu4_reward(&g.words, &ex.reference_ids)
        })
        .sum::<f64>()
        / examples.len() as f64
}

fn scst_run(seed: u64) -> Result<(f64, f64), String> {
    let corpus = synthetic::generate(&SyntheticConfig {
        proposals: 20,
        classes: 5,
        feature_dim: 8,
        seed,
        ..SyntheticConfig::default()
    })
    .map_err(err)?;
    let vocab = vocabulary_from_records(&corpus.records, 1);
    let cfg = scst_model(vocab.len());
    let train = TrainConfig {
        batch_size: 20,
        max_len: 10,
        ..TrainConfig::default()
    };
    let examples = build_examples(&corpus.records, &vocab, &cfg, train.max_len).map_err(err)?;
    let batch: Vec<&Example> = examples.iter().collect();
    let mut params = SummarizerParams::init(&cfg, seed).map_err(err)?;
    let mut adam = Adam::for_params(&params, &train);
    for _ in 0..300 {
        train_step(&cfg, &mut params, &mut adam, &batch, &train, 3e-4, None).map_err(err)?;
    }
    let before = greedy_reward(&cfg, &params, &examples, train.max_len);
    let mut adam = Adam::for_params(&params, &train);
    for step in 0..200u64 {
        let seeds: Vec<u64> = (0..batch.len() as u64).map(|i| mix_seed(&[seed, step, i])).collect();
        scst_step(&cfg, &mut params, &mut adam, &batch, &train, 1e-3, &bleu4_reward, &seeds).map_err(err)?;
    }
    let after = greedy_reward(&cfg, &params, &examples, train.max_len);
    Ok((before, after))
}

fn c8_scst() -> Check {
    let cfg = SummarizerConfig::tiny(AttentionMode::Hierarchical);
    let params = SummarizerParams::init(&cfg, 2).map_err(err)?;
    for seed in 0..5 {
        let ex = random_example(&cfg, 3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let constant = |_: &[usize], _: &[Vec<usize>]| 0.375;
        let out = scst_gradient(&cfg, &params, &ex, &constant, 6, &mut rng).map_err(err)?;
        ensure(out.advantage() == 0.0, || "advantage not zero".into())?;
        ensure(out.grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)), || {
            format!("seed {seed}: non-zero gradient under zero advantage")
        })?;
    }
    let mut before = 0.0;
    let mut after = 0.0;
    let mut per_seed = Vec::new();
    for seed in 0..5 {
        let (b, a) = scst_run(seed)?;
        before += b / 5.0;
        after += a / 5.0;
        per_seed.push(format!("{b:.4}->{a:.4}"));
    }
    let detail = format!("greedy reward {before:.4} -> {after:.4} [{}]", per_seed.join(" "));
    ensure(after >= before && after - before > 0.0, || detail.clone())?;
    Ok(format!("zero advantage gives zero gradients; {detail}"))
}

// ---------------------------------------------------------------- 9

fn tiny_run(mode: TrainMode, init: Option<SummarizerParams<Tensor>>) -> Result<Checkpoint, String> {
    let corpus = synthetic::generate(&SyntheticConfig {
        proposals: 10,
        seed: 9,
        ..SyntheticConfig::default()
    })
    .map_err(err)?;
    let vocab: Vocabulary = vocabulary_from_records(&corpus.records, 1);
    let mut cfg = SummarizerConfig::tiny(AttentionMode::Hierarchical);
    cfg.feature_dim = 16;
    cfg.vocab_size = vocab.len();
    let train = TrainConfig {
        epochs: 2,
        batch_size: 4,
        max_len: 8,
        seed: 7,
        mode,
        ..TrainConfig::default()
    };
    let examples = build_examples(&corpus.records, &vocab, &cfg, train.max_len).map_err(err)?;
    let init = match init {
        Some(p) => p,
        None => SummarizerParams::init(&cfg, train.seed).map_err(err)?,
    };
    let out = train_loop(&cfg, &train, init, &examples, &[], &vocab, |_| {}).map_err(err)?;
    Ok(Checkpoint {
        model: cfg,
        train: Some(train),
        vocab,
        seed: 7,
        epoch: out.best_epoch,
        params: out.last,
    })
}

fn c9_determinism() -> Check {
    let a = tiny_run(TrainMode::Xent, None)?;
    let b = tiny_run(TrainMode::Xent, None)?;
    let bytes = a.to_bytes().map_err(err)?;
    ensure(bytes == b.to_bytes().map_err(err)?, || "xent runs differ".into())?;
    let sa = tiny_run(TrainMode::Scst, Some(a.params.clone()))?;
    let sb = tiny_run(TrainMode::Scst, Some(a.params.clone()))?;
    ensure(sa.to_bytes().map_err(err)? == sb.to_bytes().map_err(err)?, || "scst runs differ".into())?;

    let dir = tempfile::tempdir().map_err(err)?;
    let path = dir.path().join("model.dasc");
    a.save(&path).map_err(err)?;
    let back = Checkpoint::load(&path).map_err(err)?;
    ensure(back.to_bytes().map_err(err)? == bytes, || "reloaded bytes differ".into())?;
    for ((name, x), (_, y)) in a.params.named().iter().zip(back.params.named()) {
        ensure(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()), || {
            format!("{name} changed on reload")
        })?;
    }
    Ok(format!("xent and scst reruns bitwise equal; {} byte checkpoint round-trips", bytes.len()))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Check); 9] = [
        (1, "full-model gradient check", c1_gradcheck),
        (2, "overfit SA and HA", c2_overfit),
        (3, "shape and attention normalization", c3_shapes),
        (4, "hyperparameter fidelity and sweeps", c4_hyperparameters),
        (5, "metric oracles", c5_metrics),
        (6, "DM-best / DM-ave selectors", c6_selectors),
        (7, "decode equivalence", c7_decoding),
        (8, "SCST sanity", c8_scst),
        (9, "determinism and persistence", c9_determinism),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {id} PASS {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} FAIL {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
