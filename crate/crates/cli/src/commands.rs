use std::path::{Path, PathBuf};

use casein::cascade::{train_casein, CascadeModel, CascadeTrainConfig, CurveSpec, Variant};
use casein::corpus::{generate_corpus, Corpus, CorpusConfig, PhonemeSequence, UtterancePair};
use casein::eval::{analyze_manifold, evaluate, manifold_csv, report_csv};
use casein::kv::KvFile;
use casein::manifold::{train_manifold, ManifoldModel, ManifoldTrainConfig};
use casein::numerics::container::write_atomic;
use casein::numerics::Container;
use casein::pipeline::{run_pipeline, save_with_echo, with_echo, PipelineConfig};
use casein::swer::{train_swer, SwerModel, SwerTrainConfig};
use casein::{Error, Result};

use crate::{Command, TrainFlags};

fn require<'a>(path: &'a Option<PathBuf>, what: &str, flag: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::MissingArtifact(format!("{what} (pass --{flag})")))
}

fn read_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::from_kv_over(PipelineConfig::default(), &KvFile::read(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

/// Loads the corpus and the effective configuration of a training phase.
fn training_setup(
    flags: &TrainFlags,
    pick: impl Fn(&mut casein::config::RunConfig) -> &mut casein::config::Schedule,
) -> Result<(Corpus, PipelineConfig, KvFile)> {
    let corpus = Corpus::load(&flags.data)?;
    let mut cfg = read_config(flags.config.as_deref())?;
    cfg.corpus = corpus.config.clone();
    cfg.run.fit_corpus(&corpus.config);
    let schedule = pick(&mut cfg.run);
    if let Some(e) = flags.epochs {
        schedule.epochs = e;
    }
    if let Some(b) = flags.batch_size {
        schedule.batch_size = b;
    }
    if let Some(lr) = flags.lr {
        schedule.adam.lr = lr;
    }
    let echo = echo_of(&cfg, flags.seed);
    Ok((corpus, cfg, echo))
}

fn echo_of(cfg: &PipelineConfig, seed: u64) -> KvFile {
    let mut echo = KvFile::default();
    echo.push("seed", seed);
    echo.entries.extend(cfg.to_kv().entries);
    echo
}

/// `run.*` entries of a checkpoint header.
fn echo_in(c: &Container) -> KvFile {
    KvFile {
        entries: c
            .meta
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("run.").map(|k| (k.to_string(), v.clone())))
            .collect(),
    }
}

fn find_utterance(corpus: Corpus, id: &str) -> Result<UtterancePair> {
    corpus
        .train
        .into_iter()
        .chain(corpus.val)
        .chain(corpus.test)
        .find(|p| p.id == id)
        .ok_or_else(|| Error::Config(format!("no utterance with id {id}")))
}

fn parse_list(s: &str, what: &str) -> Result<Vec<usize>> {
    s.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Config(format!("{what}: {t:?} is not a non-negative integer")))
        })
        .collect()
}

/// Emotion names recorded with a cascade checkpoint, else the default set.
fn emotion_names(c: &Container, classes: usize) -> Result<Vec<String>> {
    let names: Vec<String> = match c.meta("run.corpus.emotions") {
        Some(e) => e.split(',').map(|s| s.trim().to_string()).collect(),
        None => CorpusConfig::default().emotions,
    };
    if names.len() != classes {
        return Err(Error::Config(format!(
            "checkpoint has {classes} emotion classes but {} names",
            names.len()
        )));
    }
    Ok(names)
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenerateData { out, seed, config } => {
            let cfg = match config {
                Some(p) => CorpusConfig::from_kv(&KvFile::read(&p)?)?,
                None => CorpusConfig::default(),
            };
            let corpus = generate_corpus(&cfg, seed)?;
            corpus.save(&out)?;
            log::info!("wrote {} utterance pairs to {}", corpus.len(), out.display());
        }
        Command::TrainManifold { flags } => {
            let (corpus, cfg, echo) = training_setup(&flags, |r| &mut r.manifold)?;
            let (model, history) = train_manifold(
                &corpus.train,
                &corpus.val,
                &ManifoldTrainConfig {
                    dims: cfg.run.dims,
                    schedule: cfg.run.manifold,
                    beta: cfg.run.beta,
                    seed: flags.seed,
                    checkpoint: None,
                },
            )?;
            save_with_echo(model.to_container(), &echo, &flags.out)?;
            log::info!("best epoch {}", history.best_epoch);
        }
        Command::TrainSwer { flags, radius } => {
            let (corpus, mut cfg, _) = training_setup(&flags, |r| &mut r.swer)?;
            if let Some(r) = radius {
                cfg.run.radius = r;
            }
            let echo = echo_of(&cfg, flags.seed);
            let (model, history) = train_swer(
                &corpus.train,
                &corpus.val,
                &SwerTrainConfig {
                    dims: cfg.run.dims,
                    schedule: cfg.run.swer,
                    radius: cfg.run.radius,
                    seed: flags.seed,
                    checkpoint: None,
                },
            )?;
            save_with_echo(model.to_container(), &echo, &flags.out)?;
            log::info!("best validation accuracy {:.4}", history.best_accuracy);
        }
        Command::TrainCasein {
            flags,
            manifold,
            swer,
            lambda,
            variant,
        } => {
            let variant: Variant = variant.parse()?;
            let manifold = ManifoldModel::load(require(&manifold, "manifold checkpoint", "manifold")?)?;
            let swer = SwerModel::load(require(&swer, "swer checkpoint", "swer")?)?;
            let (corpus, mut cfg, _) = training_setup(&flags, |r| &mut r.cascade)?;
            if let Some(l) = lambda {
                cfg.run.lambda = l;
            }
            let mut echo = echo_of(&cfg, flags.seed);
            echo.push("variant", variant);
            let (model, history) = train_casein(
                &corpus.train,
                &corpus.val,
                &manifold,
                &swer,
                &CascadeTrainConfig {
                    schedule: cfg.run.cascade,
                    lambda: cfg.run.lambda,
                    detach_syn: cfg.run.detach_syn,
                    variant,
                    seed: flags.seed,
                    checkpoint: None,
                },
            )?;
            save_with_echo(model.to_container(), &echo, &flags.out)?;
            log::info!(
                "best epoch {}, literal implicit loss {:?} -> {:?}",
                history.best_epoch,
                history.initial_literal_imp,
                history.final_literal_imp
            );
        }
        Command::Synthesize {
            ckpt,
            phonemes,
            durations,
            speaker,
            curves,
            out,
        } => {
            let c = Container::load(require(&ckpt, "cascade checkpoint", "ckpt")?)?;
            let model = CascadeModel::from_container(&c)?;
            let names = emotion_names(&c, model.dims.emotions)?;
            let seq = PhonemeSequence::new(parse_list(&phonemes, "phonemes")?, parse_list(&durations, "durations")?)?;
            let text = std::fs::read_to_string(&curves).map_err(|e| Error::io(&curves, e))?;
            let spec: CurveSpec = text.parse()?;
            let (dist, mel) = model.infer_from_curves(&seq, speaker, &spec, &names)?;
            let mut m = Container::new();
            m.set_meta("kind", "mel");
            m.set_meta("phonemes", phonemes.split_whitespace().collect::<Vec<_>>().join(","));
            m.set_meta("durations", durations.split_whitespace().collect::<Vec<_>>().join(","));
            m.set_meta("speaker", speaker);
            m.set_meta("cascade", model.store.fingerprint());
            m.push_tensor("mel", mel.into_tensor());
            m.push_tensor("distribution", dist.0);
            m.save(&out)?;
        }
        Command::PredictD {
            ckpt,
            data,
            utterance,
            out,
        } => {
            let model = SwerModel::load(require(&ckpt, "swer checkpoint", "ckpt")?)?;
            let corpus = Corpus::load(&data)?;
            let names = corpus.config.emotions.clone();
            let pair = find_utterance(corpus, &utterance)?;
            let dist = model.predict_distribution(&pair.mel_emotional, &pair.phonemes.boundaries())?;
            write_atomic(&out, dist.to_csv(&names).as_bytes())?;
        }
        Command::Evaluate {
            ckpt,
            swer,
            data,
            report,
        } => {
            let c = Container::load(require(&ckpt, "cascade checkpoint", "ckpt")?)?;
            let model = CascadeModel::from_container(&c)?;
            let swer = SwerModel::load(require(&swer, "swer checkpoint", "swer")?)?;
            if swer.store.fingerprint() != model.frozen.swer_fingerprint {
                return Err(Error::Config(
                    "the swer checkpoint is not the one the cascade was trained against".into(),
                ));
            }
            let corpus = Corpus::load(&data)?;
            let rows = evaluate(&corpus.config, &swer, &model, &corpus.test)?;
            let mut echo = echo_in(&c);
            echo.push("cascade.fingerprint", model.store.fingerprint());
            let body = report_csv(&rows, &corpus.config.emotions);
            write_atomic(&report, with_echo(&echo, &body).as_bytes())?;
        }
        Command::AnalyzeManifold {
            ckpt,
            data,
            utterance,
            out,
        } => {
            let model = ManifoldModel::load(require(&ckpt, "manifold checkpoint", "ckpt")?)?;
            let pair = find_utterance(Corpus::load(&data)?, &utterance)?;
            write_atomic(&out, manifold_csv(&analyze_manifold(&model, &pair)?).as_bytes())?;
        }
        Command::Pipeline { seed, out, config } => {
            let cfg = read_config(config.as_deref())?;
            let s = run_pipeline(&cfg, seed, &out)?;
            log::info!(
                "test MCD casein {:.4}, explicit-only {:.4}; swer accuracy {:.4}",
                s.casein_mcd,
                s.explicit_mcd,
                s.swer_accuracy
            );
        }
    }
    Ok(())
}
