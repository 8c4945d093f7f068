use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;

use das_core::checkpoint::Checkpoint;
use das_core::data::{load_proposals, ProposalRecord};
use das_core::model::SummarizerParams;
use das_core::train::{build_examples, train_loop, vocabulary_from_records, TrainMode, LOG_HEADER};

use crate::args::TrainArgs;
use crate::config::{read_toml, RunConfig};
use crate::error::{CliError, CliResult};

fn load_dataset(path: &Path) -> CliResult<Vec<ProposalRecord>> {
    let records = load_proposals(path)?;
    if records.is_empty() {
        return Err(CliError::Data(format!("{}: no records", path.display())));
    }
    let dim = records[0].feature_dim();
    if let Some(r) = records.iter().find(|r| r.feature_dim() != dim) {
        return Err(CliError::Data(format!(
            "{}: proposal {} has {}-dim features, expected {dim}",
            path.display(),
            r.proposal_id,
            r.feature_dim()
        )));
    }
    Ok(records)
}

fn log_path(args: &TrainArgs) -> PathBuf {
    args.log.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".log.tsv");
        p.into()
    })
}

pub fn run(args: TrainArgs) -> CliResult<()> {
    let RunConfig { mut model, mut train } = read_toml(args.config.as_deref())?;
    if let Some(m) = args.mode {
        train.mode = m;
    }
    if let Some(s) = args.seed {
        train.seed = s;
    }
    if let Some(v) = args.epochs {
        train.epochs = v;
    }
    if let Some(v) = args.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = args.lr {
        train.lr = v;
    }
    if let Some(v) = args.lambda_d {
        train.lambda_d = v;
    }
    if let Some(v) = args.max_len {
        train.max_len = v;
    }
    train.validate()?;

    let records = load_dataset(&args.data)?;
    let validation = args.val.as_deref().map(load_dataset).transpose()?.unwrap_or_default();

    let (model, vocab, init) = match &args.init {
        Some(path) => {
            if args.attention.is_some() || args.nm.is_some() || args.nk.is_some() {
                return Err(CliError::Usage(
                    "--attention, --nm and --nk cannot change a model loaded with --init".into(),
                ));
            }
            // The checkpoint fixes the architecture and vocabulary; a
            // [model] table in the config file is ignored.
            let ckpt = Checkpoint::load(path)?;
            (ckpt.model, ckpt.vocab, ckpt.params)
        }
        None => {
            if train.mode == TrainMode::Scst {
                return Err(CliError::Usage("scst training needs a cross-entropy checkpoint via --init".into()));
            }
            if let Some(a) = args.attention {
                model.mode = a;
            }
            if let Some(v) = args.nm {
                model.n_segments = v;
            }
            if let Some(v) = args.nk {
                model.n_words = v;
            }
            let vocab = vocabulary_from_records(&records, args.min_count);
            model.vocab_size = vocab.len();
            model.feature_dim = records[0].feature_dim();
            model.validate()?;
            let init = SummarizerParams::init(&model, train.seed)?;
            (model, vocab, init)
        }
    };
    info!(
        "{} mode, {} training proposals, vocabulary {}, {} parameters",
        model.mode.label(),
        records.len(),
        vocab.len(),
        init.parameter_count()
    );

    let examples = build_examples(&records, &vocab, &model, train.max_len)?;
    let val_examples = build_examples(&validation, &vocab, &model, train.max_len)?;

    let log_path = log_path(&args);
    let file = File::create(&log_path).map_err(|e| CliError::Usage(format!("{}: {e}", log_path.display())))?;
    let mut log = BufWriter::new(file);
    let mut write_err = None;
    let mut emit = |line: &str| {
        if write_err.is_none() {
            if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
                write_err = Some(e);
            }
        }
    };
    emit(LOG_HEADER);
    let outcome = train_loop(&model, &train, init, &examples, &val_examples, &vocab, |entry| {
        info!("{}", entry.tsv_line());
        emit(&entry.tsv_line());
    })?;
    if let Some(e) = write_err {
        return Err(CliError::Usage(format!("{}: {e}", log_path.display())));
    }
    info!("best validation epoch {}", outcome.best_epoch);

    let ckpt = Checkpoint {
        model,
        train: Some(train.clone()),
        vocab,
        seed: train.seed,
        epoch: outcome.best_epoch,
        params: outcome.best,
    };
    ckpt.save(&args.out)?;
    println!("wrote {} ({} epochs, best {})", args.out.display(), outcome.log.len(), outcome.best_epoch);
    Ok(())
}
