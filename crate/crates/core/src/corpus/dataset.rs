//! Corpus generation and split files.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{apply_emotion, render_neutral, CorpusConfig, MelSpectrogram, PhonemeSequence, UtterancePair};
use crate::error::{Error, Result};
use crate::kv::{join, parse_list, parse_value, KvFile};
use crate::numerics::container::write_atomic;
use crate::numerics::Container;
use crate::seed::derive;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntensityPattern {
    Constant,
    RampUp,
    RampDown,
    Piecewise,
}

impl IntensityPattern {
    pub const ALL: [IntensityPattern; 4] = [
        IntensityPattern::Constant,
        IntensityPattern::RampUp,
        IntensityPattern::RampDown,
        IntensityPattern::Piecewise,
    ];

    pub fn is_ramp(self) -> bool {
        matches!(self, IntensityPattern::RampUp | IntensityPattern::RampDown)
    }

    /// Draws a per-phoneme curve of length `t`.
    pub fn sample(self, t: usize, rng: &mut impl Rng) -> Vec<f64> {
        let pos = |i: usize| if t > 1 { i as f64 / (t - 1) as f64 } else { 1.0 };
        match self {
            IntensityPattern::Constant => vec![rng.random_range(0.2..=1.0); t],
            IntensityPattern::RampUp => (0..t).map(pos).collect(),
            IntensityPattern::RampDown => (0..t).map(|i| 1.0 - pos(i)).collect(),
            IntensityPattern::Piecewise => {
                let pieces = rng.random_range(2..=3usize).min(t);
                let mut levels: Vec<f64> = (0..pieces).map(|_| rng.random_range(0.0..=1.0)).collect();
                if levels.iter().all(|&l| l < 0.5) {
                    let k = rng.random_range(0..pieces);
                    levels[k] = rng.random_range(0.5..=1.0);
                }
                (0..t).map(|i| levels[i * pieces / t]).collect()
            }
        }
    }
}

impl fmt::Display for IntensityPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IntensityPattern::Constant => "constant",
            IntensityPattern::RampUp => "ramp_up",
            IntensityPattern::RampDown => "ramp_down",
            IntensityPattern::Piecewise => "piecewise",
        })
    }
}

impl FromStr for IntensityPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        IntensityPattern::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| Error::Format(format!("unknown intensity pattern {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn file(self, dir: &Path) -> std::path::PathBuf {
        dir.join(format!("{}.casein", self.name()))
    }
}

/// All three splits plus the configuration that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub train: Vec<UtterancePair>,
    pub val: Vec<UtterancePair>,
    pub test: Vec<UtterancePair>,
}

impl Corpus {
    pub fn split(&self, s: Split) -> &[UtterancePair] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("corpus.cfg"), self.config.to_kv().render().as_bytes())?;
        for s in Split::ALL {
            split_container(&self.config, self.split(s)).save(&s.file(dir))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (config, train) = load_split(dir, Split::Train)?;
        let (_, val) = load_split(dir, Split::Val)?;
        let (_, test) = load_split(dir, Split::Test)?;
        Ok(Corpus {
            config,
            train,
            val,
            test,
        })
    }
}

fn generate_pair(cfg: &CorpusConfig, seed: u64, split: Split, index: usize) -> Result<UtterancePair> {
    let base = derive(seed, &[split as u64, index as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    let t = rng.random_range(cfg.min_phonemes..=cfg.max_phonemes);
    let ids = (0..t).map(|_| rng.random_range(0..cfg.vocab)).collect();
    let durations = (0..t)
        .map(|_| rng.random_range(cfg.min_duration..=cfg.max_duration))
        .collect();
    let phonemes = PhonemeSequence::new(ids, durations)?;
    let speaker = rng.random_range(0..cfg.speakers);
    let emotion = rng.random_range(0..cfg.emotion_count());
    let pattern = IntensityPattern::ALL[rng.random_range(0..4)];
    let mel_neutral = render_neutral(cfg, &phonemes, speaker, derive(base, &[1]))?;
    let (intensity, mel_emotional) = if emotion == 0 {
        (vec![0.0; t], mel_neutral.clone())
    } else {
        let intensity = pattern.sample(t, &mut rng);
        let fresh = render_neutral(cfg, &phonemes, speaker, derive(base, &[2]))?;
        let mel = apply_emotion(cfg, &fresh, emotion, &intensity, &phonemes.boundaries())?;
        (intensity, mel)
    };
    Ok(UtterancePair {
        id: format!("{}{index:04}", split.name()),
        phonemes,
        speaker,
        emotion,
        pattern,
        intensity,
        mel_neutral,
        mel_emotional,
    })
}

/// Generates every split in memory.
pub fn generate_corpus(cfg: &CorpusConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let gen = |split: Split, n: usize| -> Result<Vec<UtterancePair>> {
        (0..n).map(|i| generate_pair(cfg, seed, split, i)).collect()
    };
    Ok(Corpus {
        config: cfg.clone(),
        train: gen(Split::Train, cfg.train)?,
        val: gen(Split::Val, cfg.val)?,
        test: gen(Split::Test, cfg.test)?,
    })
}

fn split_container(cfg: &CorpusConfig, pairs: &[UtterancePair]) -> Container {
    let mut c = Container::new();
    c.set_meta("kind", "corpus-split");
    for (k, v) in cfg.to_kv().entries {
        c.set_meta(format!("corpus.{k}"), v);
    }
    c.set_meta("count", pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        c.set_meta(format!("utt.{i}.id"), &p.id);
        c.set_meta(format!("utt.{i}.speaker"), p.speaker);
        c.set_meta(format!("utt.{i}.emotion"), p.emotion);
        c.set_meta(format!("utt.{i}.pattern"), p.pattern);
        c.set_meta(format!("utt.{i}.phonemes"), join(p.phonemes.ids()));
        c.set_meta(format!("utt.{i}.durations"), join(p.phonemes.durations()));
        c.set_meta(format!("utt.{i}.intensity"), join(&p.intensity));
        c.push_tensor(format!("{}.neutral", p.id), p.mel_neutral.tensor().clone());
        c.push_tensor(format!("{}.emotional", p.id), p.mel_emotional.tensor().clone());
    }
    c
}

/// Reads one split and the corpus configuration echoed in it.
pub fn load_split(dir: &Path, split: Split) -> Result<(CorpusConfig, Vec<UtterancePair>)> {
    let c = Container::load(&split.file(dir))?;
    let fmt_err = |m: String| Error::Format(format!("{}: {m}", split.file(dir).display()));
    if c.meta("kind") != Some("corpus-split") {
        return Err(fmt_err("not a corpus split".into()));
    }
    let kv = KvFile {
        entries: c
            .meta
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("corpus.").map(|k| (k.to_string(), v.clone())))
            .collect(),
    };
    let cfg = CorpusConfig::from_kv(&kv).map_err(|e| fmt_err(e.to_string()))?;
    let get = |key: String| {
        c.meta(&key)
            .map(str::to_string)
            .ok_or_else(|| fmt_err(format!("missing {key}")))
    };
    let count: usize = parse_value("count", &get("count".into())?).map_err(|e| fmt_err(e.to_string()))?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let field = |name: &str| get(format!("utt.{i}.{name}"));
        let id = field("id")?;
        let wrap = |e: Error| fmt_err(format!("{id}: {e}"));
        let phonemes = PhonemeSequence::new(
            parse_list("phonemes", &field("phonemes")?).map_err(wrap)?,
            parse_list("durations", &field("durations")?).map_err(wrap)?,
        )
        .map_err(wrap)?;
        let mel = |kind: &str| -> Result<MelSpectrogram> {
            let t = c
                .tensor(&format!("{id}.{kind}"))
                .ok_or_else(|| fmt_err(format!("missing tensor {id}.{kind}")))?;
            MelSpectrogram::from_tensor(t.clone()).map_err(wrap)
        };
        let pair = UtterancePair {
            speaker: parse_value("speaker", &field("speaker")?).map_err(wrap)?,
            emotion: parse_value("emotion", &field("emotion")?).map_err(wrap)?,
            pattern: field("pattern")?.parse().map_err(wrap)?,
            intensity: parse_list("intensity", &field("intensity")?).map_err(wrap)?,
            mel_neutral: mel("neutral")?,
            mel_emotional: mel("emotional")?,
            phonemes,
            id: id.clone(),
        };
        pair.check(&cfg).map_err(|e| fmt_err(e.to_string()))?;
        out.push(pair);
    }
    Ok((cfg, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use sha2::{Digest, Sha256};

    fn small() -> CorpusConfig {
        CorpusConfig {
            train: 6,
            val: 3,
            test: 3,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn default_counts() {
        let c = CorpusConfig::default();
        assert_eq!(c.train + c.val + c.test, 250);
    }

    #[test]
    fn pairs_satisfy_invariants() {
        let cfg = CorpusConfig {
            train: 40,
            ..small()
        };
        let corpus = generate_corpus(&cfg, 3).unwrap();
        assert_eq!(corpus.len(), 46);
        for p in corpus.train.iter().chain(&corpus.val).chain(&corpus.test) {
            p.check(&cfg).unwrap();
            assert!((6..=12).contains(&p.phonemes.len()));
            assert!(p.phonemes.durations().iter().all(|d| (4..=16).contains(d)));
            assert_eq!(p.mel_neutral.frames(), p.mel_emotional.frames());
        }
        assert!(corpus.train.iter().any(|p| p.emotion == 0));
        assert!(corpus.train.iter().any(|p| p.emotion != 0));
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let hash_dir = |dir: &Path| {
            let mut h = Sha256::new();
            for name in ["corpus.cfg", "train.casein", "val.casein", "test.casein"] {
                h.update(std::fs::read(dir.join(name)).unwrap());
            }
            h.finalize()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_corpus(&small(), 11).unwrap().save(a.path()).unwrap();
        generate_corpus(&small(), 11).unwrap().save(b.path()).unwrap();
        assert_eq!(hash_dir(a.path()), hash_dir(b.path()));
        let c = tempfile::tempdir().unwrap();
        generate_corpus(&small(), 12).unwrap().save(c.path()).unwrap();
        assert_ne!(hash_dir(a.path()), hash_dir(c.path()));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_corpus(&small(), 5).unwrap();
        corpus.save(dir.path()).unwrap();
        assert_eq!(Corpus::load(dir.path()).unwrap(), corpus);
        let missing = tempfile::tempdir().unwrap();
        assert!(matches!(Corpus::load(missing.path()), Err(Error::MissingArtifact(_))));
    }

    #[test]
    fn patterns_have_expected_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(IntensityPattern::RampUp.sample(5, &mut rng), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(IntensityPattern::RampDown.sample(3, &mut rng), vec![1.0, 0.5, 0.0]);
        for _ in 0..50 {
            let c = IntensityPattern::Constant.sample(7, &mut rng);
            assert!(c.iter().all(|&a| a == c[0] && (0.2..=1.0).contains(&a)));
            let p = IntensityPattern::Piecewise.sample(9, &mut rng);
            assert!(p.iter().any(|&a| a >= 0.5));
        }
    }
}
