use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use serde::Deserialize;

use das_core::data::{load_predictions, normalize_tokens};
use das_metrics::{dense_eval, score_pairs, GroundTruthEvent, Interval, MetricScores, PairAggregation, TemporalPrediction};

use crate::args::{Aggregation, EvalArgs, MetricsArgs};
use crate::error::{CliError, CliResult};

/// A ground-truth line. Extra fields (segments, proposal ids) are ignored
/// so proposal datasets double as ground truth.
#[derive(Debug, Deserialize)]
struct GroundTruthLine {
    video_id: String,
    t_start: f64,
    t_end: f64,
    #[serde(default)]
    references: Vec<String>,
    #[serde(default)]
    sentence: Option<String>,
}

fn schema(path: &Path, line: usize, message: impl Into<String>) -> CliError {
    CliError::Core(das_core::Error::Schema {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    })
}

pub fn load_ground_truth(path: &Path) -> CliResult<Vec<GroundTruthEvent>> {
    let file = File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let g: GroundTruthLine = serde_json::from_str(&line).map_err(|e| schema(path, i + 1, e.to_string()))?;
        let mut references: Vec<Vec<String>> = g.references.iter().map(|s| normalize_tokens(s)).collect();
        references.extend(g.sentence.as_deref().map(normalize_tokens));
        references.retain(|r| !r.is_empty());
        if references.is_empty() {
            return Err(schema(path, i + 1, "event needs a non-empty `references` or `sentence`"));
        }
        let interval = Interval::new(g.t_start, g.t_end).map_err(|e| schema(path, i + 1, e.to_string()))?;
        events.push(GroundTruthEvent {
            video_id: g.video_id,
            interval,
            references,
        });
    }
    if events.is_empty() {
        return Err(CliError::Data(format!("{}: no ground-truth events", path.display())));
    }
    Ok(events)
}

pub fn eval(args: EvalArgs) -> CliResult<()> {
    let predictions = load_predictions(&args.predictions)?
        .into_iter()
        .map(|p| {
            Ok(TemporalPrediction {
                interval: Interval::new(p.t_start, p.t_end)?,
                sentence: normalize_tokens(&p.sentence),
                video_id: p.video_id,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    if predictions.is_empty() {
        warn!("{} holds no predictions; every score is zero", args.predictions.display());
    }
    let gt = load_ground_truth(&args.gt)?;
    let aggregation = match args.aggregation {
        Aggregation::Average => PairAggregation::AveragePairs,
        Aggregation::Best => PairAggregation::BestPerPrediction,
    };
    let report = dense_eval(&predictions, &gt, aggregation)?;
    print!("{}", report.render_table());
    if let Some(out) = &args.out {
        let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
        json.push('\n');
        fs::write(out, json).map_err(|e| CliError::Usage(format!("{}: {e}", out.display())))?;
    }
    Ok(())
}

pub fn metrics(args: MetricsArgs) -> CliResult<()> {
    let candidate = normalize_tokens(&args.candidate);
    let references: Vec<Vec<String>> = args.references.iter().map(|r| normalize_tokens(r)).collect();
    let scores = score_pairs(&[(candidate, references)])?[0];
    if args.json {
        println!("{}", serde_json::to_string(&scores).expect("scores serialize"));
    } else {
        for (name, v) in MetricScores::NAMES.iter().zip(scores.to_array()) {
            println!("{name:<8} {v:.6}");
        }
    }
    Ok(())
}
