use std::path::Path;

use log::info;
use rayon::prelude::*;

use das_core::checkpoint::Checkpoint;
use das_core::data::{
    load_proposals, normalize_tokens, write_predictions, write_proposals, PredictionRecord, ProposalInput,
    ProposalRecord,
};
use das_core::decode::{dm_best_select_log, generate, score_sentence, BeamConfig};
use das_core::model::AttentionMode;

use crate::args::{CaptionArgs, SummarizeArgs, SummaryMode};
use crate::error::{CliError, CliResult};

fn load_checkpoint(path: &Path, expected: AttentionMode, purpose: &str) -> CliResult<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.model.mode != expected {
        return Err(CliError::Usage(format!(
            "{}: checkpoint was trained in {} mode but {purpose} needs a {} checkpoint",
            path.display(),
            ckpt.model.mode.label(),
            expected.label()
        )));
    }
    Ok(ckpt)
}

fn beam(width: usize, max_len: usize) -> CliResult<BeamConfig> {
    if width == 0 || max_len == 0 {
        return Err(CliError::Usage("--beam and --max-len must be positive".into()));
    }
    Ok(BeamConfig::new(width, max_len))
}

fn caption(ckpt: &Checkpoint, feature: &[f64], beam: BeamConfig) -> das_core::Result<String> {
    let input = ProposalInput::single_segment(feature)?;
    let g = generate(&ckpt.model, &ckpt.params, &input, beam)?;
    Ok(ckpt.vocab.decode_sentence(&g.words).join(" "))
}

pub fn caption_segments(args: CaptionArgs) -> CliResult<()> {
    let beam = beam(args.beam, args.max_len)?;
    let ckpt = load_checkpoint(&args.checkpoint, AttentionMode::DecoderOnly, "caption-segments")?;
    let records = load_proposals(&args.data)?;
    let captioned = records
        .into_par_iter()
        .map(|mut r| {
            for seg in &mut r.segments {
                seg.sentence = caption(&ckpt, &seg.feature, beam)?;
            }
            Ok(r)
        })
        .collect::<das_core::Result<Vec<ProposalRecord>>>()?;
    let n: usize = captioned.iter().map(|r| r.segments.len()).sum();
    write_proposals(&args.out, &captioned)?;
    println!("captioned {n} segments in {} proposals -> {}", captioned.len(), args.out.display());
    Ok(())
}

fn prediction(r: &ProposalRecord, sentence: String) -> PredictionRecord {
    PredictionRecord {
        video_id: r.video_id.clone(),
        proposal_id: Some(r.proposal_id.clone()),
        t_start: r.t_start,
        t_end: r.t_end,
        sentence,
    }
}

/// The segment sentence the captioner is most confident in, verbatim.
fn dm_best(ckpt: &Checkpoint, r: &ProposalRecord) -> das_core::Result<String> {
    let mut confidences = Vec::with_capacity(r.segments.len());
    for seg in &r.segments {
        let ids = ckpt.vocab.encode_sentence(&normalize_tokens(&seg.sentence));
        confidences.push(if ids.is_empty() {
            vec![f64::NEG_INFINITY]
        } else {
            score_sentence(&ckpt.model, &ckpt.params, &ProposalInput::single_segment(&seg.feature)?, &ids)?
        });
    }
    Ok(r.segments[dm_best_select_log(&confidences)?].sentence.clone())
}

pub fn summarize(args: SummarizeArgs) -> CliResult<()> {
    let beam = beam(args.beam, args.max_len)?;
    let records = load_proposals(&args.data)?;
    let checkpoint = |mode: AttentionMode| -> CliResult<Checkpoint> {
        let path = args
            .checkpoint
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("--checkpoint is required for {}", args.mode.label())))?;
        load_checkpoint(path, mode, "this summarize mode")
    };
    let predictions: Vec<PredictionRecord> = match args.mode {
        SummaryMode::Sa | SummaryMode::Ha | SummaryMode::Ta => {
            let mode = match args.mode {
                SummaryMode::Sa => AttentionMode::Simple,
                SummaryMode::Ha => AttentionMode::Hierarchical,
                _ => AttentionMode::DecoderOnly,
            };
            let ckpt = checkpoint(mode)?;
            let cfg = &ckpt.model;
            records
                .par_iter()
                .map(|r| {
                    let input = ProposalInput::from_record(r, &ckpt.vocab, cfg.n_segments, cfg.n_words)?;
                    let g = generate(cfg, &ckpt.params, &input, beam)?;
                    Ok(prediction(r, ckpt.vocab.decode_sentence(&g.words).join(" ")))
                })
                .collect::<das_core::Result<_>>()?
        }
        SummaryMode::DmBest => {
            let ckpt = checkpoint(AttentionMode::DecoderOnly)?;
            records
                .par_iter()
                .map(|r| Ok(prediction(r, dm_best(&ckpt, r)?)))
                .collect::<das_core::Result<_>>()?
        }
        // Every division sentence becomes a prediction for the proposal's
        // interval, so pair-averaged evaluation averages over them.
        SummaryMode::DmAve => records
            .iter()
            .flat_map(|r| r.segments.iter().map(move |s| prediction(r, s.sentence.clone())))
            .collect(),
    };
    write_predictions(&args.out, &predictions)?;
    info!("{} predictions for {} proposals", predictions.len(), records.len());
    println!("wrote {} predictions -> {}", predictions.len(), args.out.display());
    Ok(())
}
