//! One-seed run of every phase: corpus, manifold, SWER, then the cascade and
//! its explicit-only ablation, each evaluated on the test split.

use std::path::Path;

use crate::cascade::{mean_syn_loss, prepare, train_casein, CascadeHistory, CascadeModel, CascadeTrainConfig, Variant};
use crate::config::RunConfig;
use crate::corpus::{generate_corpus, CorpusConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, report_csv, UtteranceReport};
use crate::kv::KvFile;
use crate::manifold::{reconstruction_loss, train_manifold, ManifoldModel, ManifoldTrainConfig};
use crate::numerics::container::write_atomic;
use crate::numerics::Container;
use crate::swer::{train_swer, window_metrics, SwerModel, SwerTrainConfig};

/// Corpus and training settings; `corpus.*` keys configure the generator.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub corpus: CorpusConfig,
    pub run: RunConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: CorpusConfig::default(),
            run: RunConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn desk() -> Self {
        PipelineConfig {
            corpus: CorpusConfig::default(),
            run: RunConfig::desk(),
        }
    }

    /// Applies `f` on top of `base`; model sizes that the corpus fixes are
    /// always taken from the corpus.
    pub fn from_kv_over(base: PipelineConfig, f: &KvFile) -> Result<Self> {
        let (corpus, run): (Vec<_>, Vec<_>) = f.entries.iter().cloned().partition(|(k, _)| k.starts_with("corpus."));
        let corpus = if corpus.is_empty() {
            base.corpus
        } else {
            let mut kv = base.corpus.to_kv();
            for (k, v) in corpus {
                let k = k["corpus.".len()..].to_string();
                match kv.entries.iter_mut().find(|(e, _)| *e == k) {
                    Some(e) => e.1 = v,
                    None => kv.entries.push((k, v)),
                }
            }
            CorpusConfig::from_kv(&kv)?
        };
        let mut run = RunConfig::from_kv_over(base.run, &KvFile { entries: run })?;
        run.fit_corpus(&corpus);
        run.validate()?;
        Ok(PipelineConfig { corpus, run })
    }

    pub fn to_kv(&self) -> KvFile {
        let mut f = self.run.to_kv();
        for (k, v) in self.corpus.to_kv().entries {
            f.push(format!("corpus.{k}"), v);
        }
        f
    }
}

/// Echoes `echo` into a container under `run.` and writes it atomically.
pub fn save_with_echo(mut c: Container, echo: &KvFile, path: &Path) -> Result<()> {
    for (k, v) in &echo.entries {
        c.set_meta(format!("run.{k}"), v);
    }
    c.save(path)
}

/// Report text preceded by `# key = value` lines of `echo`.
pub fn with_echo(echo: &KvFile, body: &str) -> String {
    let mut s: String = echo.entries.iter().map(|(k, v)| format!("# {k} = {v}\n")).collect();
    s.push_str(body);
    s
}

/// Paths of everything a run writes below its output directory.
#[derive(Clone, Debug)]
pub struct RunLayout {
    pub config: std::path::PathBuf,
    pub data: std::path::PathBuf,
    pub manifold: std::path::PathBuf,
    pub swer: std::path::PathBuf,
    pub casein: std::path::PathBuf,
    pub explicit: std::path::PathBuf,
    pub report: std::path::PathBuf,
    pub report_explicit: std::path::PathBuf,
    pub summary: std::path::PathBuf,
}

impl RunLayout {
    pub fn new(out: &Path) -> Self {
        RunLayout {
            config: out.join("run.cfg"),
            data: out.join("data"),
            manifold: out.join("manifold.ckpt"),
            swer: out.join("swer.ckpt"),
            casein: out.join("casein.ckpt"),
            explicit: out.join("explicit.ckpt"),
            report: out.join("report.csv"),
            report_explicit: out.join("report-explicit.csv"),
            summary: out.join("summary.cfg"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineSummary {
    /// Validation losses of the in-memory models, before they are saved.
    pub manifold_val_loss: f64,
    pub swer_val_loss: f64,
    pub swer_accuracy: f64,
    pub casein_val_syn: f64,
    pub explicit_val_syn: f64,
    pub casein: CascadeHistory,
    pub explicit: CascadeHistory,
    pub casein_mcd: f64,
    pub explicit_mcd: f64,
}

impl PipelineSummary {
    pub fn to_kv(&self) -> KvFile {
        let mut f = KvFile::default();
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        f.push("manifold.val_loss", self.manifold_val_loss);
        f.push("swer.val_loss", self.swer_val_loss);
        f.push("swer.val_accuracy", self.swer_accuracy);
        f.push("casein.val_syn", self.casein_val_syn);
        f.push("explicit.val_syn", self.explicit_val_syn);
        f.push("casein.best_epoch", self.casein.best_epoch);
        f.push("casein.literal_imp.initial", opt(self.casein.initial_literal_imp));
        f.push("casein.literal_imp.final", opt(self.casein.final_literal_imp));
        f.push("casein.test_mcd", self.casein_mcd);
        f.push("explicit.best_epoch", self.explicit.best_epoch);
        f.push("explicit.test_mcd", self.explicit_mcd);
        f
    }
}

fn mean_mcd(rows: &[UtteranceReport]) -> f64 {
    rows.iter().map(|r| r.mcd).sum::<f64>() / rows.len().max(1) as f64
}

/// Runs every phase with one seed: the corpus and manifold use `seed`, SWER
/// `seed + 1` and both cascade variants `seed + 2`.
pub fn run_pipeline(cfg: &PipelineConfig, seed: u64, out: &Path) -> Result<PipelineSummary> {
    let mut cfg = cfg.clone();
    cfg.run.fit_corpus(&cfg.corpus);
    cfg.run.validate()?;
    let layout = RunLayout::new(out);
    let mut echo = KvFile::default();
    echo.push("seed", seed);
    echo.entries.extend(cfg.to_kv().entries);
    write_atomic(&layout.config, echo.render().as_bytes())?;

    let corpus = generate_corpus(&cfg.corpus, seed)?;
    corpus.save(&layout.data)?;
    let run = &cfg.run;

    log::info!("manifold phase");
    let (manifold, _) = train_manifold(
        &corpus.train,
        &corpus.val,
        &ManifoldTrainConfig {
            dims: run.dims,
            schedule: run.manifold,
            beta: run.beta,
            seed,
            checkpoint: None,
        },
    )?;
    save_with_echo(manifold.to_container(), &echo, &layout.manifold)?;
    let manifold_val_loss = reconstruction_loss(&manifold, &corpus.val)?;

    log::info!("swer phase");
    let (swer, _) = train_swer(
        &corpus.train,
        &corpus.val,
        &SwerTrainConfig {
            dims: run.dims,
            schedule: run.swer,
            radius: run.radius,
            seed: seed + 1,
            checkpoint: None,
        },
    )?;
    save_with_echo(swer.to_container(), &echo, &layout.swer)?;
    let (swer_val_loss, swer_accuracy) = window_metrics(&swer, &corpus.val)?;
    let val = prepare(&corpus.val, &manifold, &swer)?;

    let mut results = Vec::new();
    for (variant, ckpt, report) in [
        (Variant::Casein, &layout.casein, &layout.report),
        (Variant::ExplicitOnly, &layout.explicit, &layout.report_explicit),
    ] {
        log::info!("cascade phase ({variant})");
        let (model, history) = train_casein(
            &corpus.train,
            &corpus.val,
            &manifold,
            &swer,
            &CascadeTrainConfig {
                schedule: run.cascade,
                lambda: run.lambda,
                detach_syn: run.detach_syn,
                variant,
                seed: seed + 2,
                checkpoint: None,
            },
        )?;
        save_with_echo(model.to_container(), &echo, ckpt)?;
        let rows = evaluate(&cfg.corpus, &swer, &model, &corpus.test)?;
        write_atomic(report, with_echo(&echo, &report_csv(&rows, &cfg.corpus.emotions)).as_bytes())?;
        results.push((history, mean_mcd(&rows), mean_syn_loss(&model, &val)?));
    }
    let (explicit, explicit_mcd, explicit_val_syn) =
        results.pop().ok_or_else(|| Error::Config("no cascade run".into()))?;
    let (casein, casein_mcd, casein_val_syn) = results.pop().ok_or_else(|| Error::Config("no cascade run".into()))?;
    let summary = PipelineSummary {
        manifold_val_loss,
        swer_val_loss,
        swer_accuracy,
        casein_val_syn,
        explicit_val_syn,
        casein,
        explicit,
        casein_mcd,
        explicit_mcd,
    };
    write_atomic(&layout.summary, with_echo(&echo, &summary.to_kv().render()).as_bytes())?;
    Ok(summary)
}

/// Trained models of a finished run.
pub struct RunArtifacts {
    pub corpus: crate::corpus::Corpus,
    pub manifold: ManifoldModel,
    pub swer: SwerModel,
    pub casein: CascadeModel,
    pub explicit: CascadeModel,
}

impl RunArtifacts {
    pub fn load(out: &Path) -> Result<Self> {
        let layout = RunLayout::new(out);
        Ok(RunArtifacts {
            corpus: crate::corpus::Corpus::load(&layout.data)?,
            manifold: ManifoldModel::load(&layout.manifold)?,
            swer: SwerModel::load(&layout.swer)?,
            casein: CascadeModel::load(&layout.casein)?,
            explicit: CascadeModel::load(&layout.explicit)?,
        })
    }
}
