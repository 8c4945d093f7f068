use std::fs;

use log::info;

use das_core::data::write_proposals;
use das_core::experiments::{holdout_split, lambda_sweep, mode_comparison, render_rows, segment_sweep, ExperimentSpec};
use das_core::gradcheck::{check_model, GradcheckOptions};
use das_core::model::{AttentionMode, SummarizerConfig};
use das_core::synthetic::{self, SyntheticConfig};

use crate::args::{CheckMode, ExperimentArgs, ExperimentKind, GradcheckArgs, SynthArgs};
use crate::config::{read_toml, RunConfig};
use crate::error::{CliError, CliResult};

pub fn gradcheck(args: GradcheckArgs) -> CliResult<()> {
    let base = match &args.config {
        Some(path) => Some(read_toml::<RunConfig>(Some(path))?.model),
        None => None,
    };
    let modes: &[AttentionMode] = match args.mode {
        CheckMode::Sa => &[AttentionMode::Simple],
        CheckMode::Ha => &[AttentionMode::Hierarchical],
        CheckMode::Ta => &[AttentionMode::DecoderOnly],
        CheckMode::All => &[AttentionMode::DecoderOnly, AttentionMode::Simple, AttentionMode::Hierarchical],
    };
    let opts = GradcheckOptions {
        step: args.step,
        tol: args.tol,
        grad_scale: if args.inject_bug { 1.01 } else { 1.0 },
    };
    let mut failed = Vec::new();
    for &mode in modes {
        let cfg = match &base {
            Some(m) => SummarizerConfig { mode, ..m.clone() },
            None => SummarizerConfig::tiny(mode),
        };
        cfg.validate()?;
        let report = check_model(&cfg, args.seed, args.lambda_d, args.spread, opts)?;
        println!("== {} ==", mode.label());
        print!("{}", report.render());
        if !report.passed() {
            failed.push(mode.label());
        }
    }
    if failed.is_empty() {
        println!("gradcheck passed at tol {:e}", args.tol);
        Ok(())
    } else {
        Err(CliError::Numeric(format!("gradcheck failed for {}", failed.join(", "))))
    }
}

pub fn synth(args: SynthArgs) -> CliResult<()> {
    let cfg = SyntheticConfig {
        proposals: args.proposals,
        classes: args.classes,
        feature_dim: args.feature_dim,
        seed: args.seed,
        ..SyntheticConfig::default()
    };
    let corpus = synthetic::generate(&cfg)?;
    let Some(test_out) = &args.test_out else {
        write_proposals(&args.out, &corpus.records)?;
        println!("wrote {} proposals -> {}", corpus.records.len(), args.out.display());
        return Ok(());
    };
    let (train, test) = holdout_split(corpus.records, args.holdout_every, args.seed)?;
    write_proposals(&args.out, &train)?;
    write_proposals(test_out, &test)?;
    println!(
        "wrote {} proposals -> {}, {} held out -> {}",
        train.len(),
        args.out.display(),
        test.len(),
        test_out.display()
    );
    Ok(())
}

pub fn experiment(args: ExperimentArgs) -> CliResult<()> {
    let mut spec: ExperimentSpec = read_toml(args.config.as_deref())?;
    if let Some(s) = args.seed {
        spec.train.seed = s;
        spec.data.seed = s;
    }
    info!("running {:?}", args.kind);
    let rows = match args.kind {
        ExperimentKind::Modes => mode_comparison(&spec)?,
        ExperimentKind::Lambda => lambda_sweep(&spec, &args.lambdas)?,
        ExperimentKind::Segments => segment_sweep(&spec, &args.segments)?,
    };
    print!("{}", render_rows(&rows));
    if let Some(out) = &args.out {
        let mut json = serde_json::to_string_pretty(&rows).expect("rows serialize");
        json.push('\n');
        fs::write(out, json).map_err(|e| CliError::Usage(format!("{}: {e}", out.display())))?;
    }
    Ok(())
}
