//! Model widths and training schedules shared by all phases.

use crate::error::{config_err, Result};
use crate::kv::{parse_value, KvFile};
use crate::numerics::AdamConfig;

/// Layer sizes shared by every network in the pipeline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelDims {
    /// Spectrogram channels C.
    pub channels: usize,
    /// Convolution hidden width h.
    pub hidden: usize,
    /// Code vector width d.
    pub latent: usize,
    /// Codebook size b.
    pub codes: usize,
    pub kernel: usize,
    pub dropout: f64,
    pub slope: f64,
    /// Residual blocks in each frame decoder.
    pub blocks: usize,
    /// Emotion classes n, neutral included.
    pub emotions: usize,
    /// Phoneme vocabulary V.
    pub vocab: usize,
    pub speakers: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            channels: 80,
            hidden: 256,
            latent: 512,
            codes: 256,
            kernel: 9,
            dropout: 0.2,
            slope: 0.1,
            blocks: 4,
            emotions: 5,
            vocab: 20,
            speakers: 4,
        }
    }
}

const DIM_KEYS: [&str; 11] = [
    "channels", "hidden", "latent", "codes", "kernel", "dropout", "slope", "blocks", "emotions",
    "vocab", "speakers",
];

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 {
            config_err!("kernel must be odd, got {}", self.kernel);
        }
        if [self.channels, self.hidden, self.latent, self.codes, self.emotions, self.vocab, self.speakers]
            .contains(&0)
        {
            config_err!("model sizes must be positive");
        }
        if self.hidden % 2 != 0 {
            config_err!("hidden width must be even for sinusoidal positions");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            config_err!("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    /// Writes every field as `prefix.name = value`.
    pub fn write(&self, prefix: &str, out: &mut Vec<(String, String)>) {
        let vals = [
            self.channels.to_string(),
            self.hidden.to_string(),
            self.latent.to_string(),
            self.codes.to_string(),
            self.kernel.to_string(),
            self.dropout.to_string(),
            self.slope.to_string(),
            self.blocks.to_string(),
            self.emotions.to_string(),
            self.vocab.to_string(),
            self.speakers.to_string(),
        ];
        for (k, v) in DIM_KEYS.iter().zip(vals) {
            out.push((format!("{prefix}.{k}"), v));
        }
    }

    /// Applies `key = value` where key is one of the field names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "channels" => self.channels = parse_value(key, value)?,
            "hidden" => self.hidden = parse_value(key, value)?,
            "latent" => self.latent = parse_value(key, value)?,
            "codes" => self.codes = parse_value(key, value)?,
            "kernel" => self.kernel = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "slope" => self.slope = parse_value(key, value)?,
            "blocks" => self.blocks = parse_value(key, value)?,
            "emotions" => self.emotions = parse_value(key, value)?,
            "vocab" => self.vocab = parse_value(key, value)?,
            "speakers" => self.speakers = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Reads every field from `prefix.name` entries; all must be present.
    pub fn read(prefix: &str, get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let mut d = ModelDims::default();
        for k in DIM_KEYS {
            let key = format!("{prefix}.{k}");
            let Some(v) = get(&key) else {
                return Err(crate::Error::Format(format!("missing {key}")));
            };
            d.set(k, &v)?;
        }
        d.validate()?;
        Ok(d)
    }
}

/// Epoch count, batch size and optimiser settings for one training phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            epochs: 100,
            batch_size: 16,
            adam: AdamConfig::default(),
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            config_err!("batch size must be positive");
        }
        if !(self.adam.lr > 0.0) {
            config_err!("learning rate must be positive");
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lr" => self.adam.lr = parse_value(key, value)?,
            "beta1" => self.adam.beta1 = parse_value(key, value)?,
            "beta2" => self.adam.beta2 = parse_value(key, value)?,
            "epsilon" => self.adam.epsilon = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn write(&self, prefix: &str, f: &mut KvFile) {
        f.push(format!("{prefix}.epochs"), self.epochs);
        f.push(format!("{prefix}.batch_size"), self.batch_size);
        f.push(format!("{prefix}.lr"), self.adam.lr);
        f.push(format!("{prefix}.beta1"), self.adam.beta1);
        f.push(format!("{prefix}.beta2"), self.adam.beta2);
        f.push(format!("{prefix}.epsilon"), self.adam.epsilon);
    }
}

/// Settings for a full pipeline run, read from a flat key-value file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dims: ModelDims,
    pub manifold: Schedule,
    pub swer: Schedule,
    pub cascade: Schedule,
    /// Commitment weight of the quantiser.
    pub beta: f64,
    pub radius: usize,
    pub lambda: f64,
    /// Stops synthesis-loss gradients at the quantised codes.
    pub detach_syn: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dims: ModelDims::default(),
            manifold: Schedule::default(),
            swer: Schedule::default(),
            cascade: Schedule::default(),
            beta: 0.25,
            radius: 2,
            lambda: 0.1,
            detach_syn: false,
        }
    }
}

impl RunConfig {
    /// Single-core profile: 64-wide layers and codes, no dropout, a faster
    /// learning rate for the manifold and cascade, and a longer manifold run.
    pub fn desk() -> Self {
        let mut c = RunConfig::default();
        c.dims.hidden = 64;
        c.dims.latent = 64;
        c.dims.codes = 64;
        c.dims.dropout = 0.0;
        c.manifold.epochs = 150;
        c.manifold.adam.lr = 2e-3;
        c.cascade.adam.lr = 2e-3;
        c
    }

    /// Copies the corpus-determined sizes into the model dimensions.
    pub fn fit_corpus(&mut self, corpus: &crate::corpus::CorpusConfig) {
        self.dims.channels = corpus.channels;
        self.dims.vocab = corpus.vocab;
        self.dims.speakers = corpus.speakers;
        self.dims.emotions = corpus.emotion_count();
    }

    pub fn from_kv(f: &KvFile) -> Result<Self> {
        Self::from_kv_over(RunConfig::default(), f)
    }

    /// Applies the pairs of `f` on top of `base`.
    pub fn from_kv_over(base: RunConfig, f: &KvFile) -> Result<Self> {
        let mut c = base;
        for (k, v) in &f.entries {
            let handled = match k.split_once('.') {
                Some(("dims", rest)) => c.dims.set(rest, v)?,
                Some(("manifold", rest)) => c.manifold.set(rest, v)?,
                Some(("swer", rest)) => c.swer.set(rest, v)?,
                Some(("cascade", rest)) => c.cascade.set(rest, v)?,
                _ => match k.as_str() {
                    "beta" => {
                        c.beta = parse_value(k, v)?;
                        true
                    }
                    "radius" => {
                        c.radius = parse_value(k, v)?;
                        true
                    }
                    "lambda" => {
                        c.lambda = parse_value(k, v)?;
                        true
                    }
                    "detach_syn" => {
                        c.detach_syn = parse_value(k, v)?;
                        true
                    }
                    _ => false,
                },
            };
            if !handled {
                config_err!("unknown run configuration key {k}");
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KvFile {
        let mut f = KvFile::default();
        let mut dims = Vec::new();
        self.dims.write("dims", &mut dims);
        f.entries.extend(dims);
        self.manifold.write("manifold", &mut f);
        self.swer.write("swer", &mut f);
        self.cascade.write("cascade", &mut f);
        f.push("beta", self.beta);
        f.push("radius", self.radius);
        f.push("lambda", self.lambda);
        f.push("detach_syn", self.detach_syn);
        f
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        for s in [&self.manifold, &self.swer, &self.cascade] {
            s.validate()?;
        }
        if self.beta < 0.0 || self.lambda < 0.0 {
            config_err!("loss weights must be non-negative");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_round_trips() {
        let mut c = RunConfig::default();
        c.dims.hidden = 64;
        c.swer.epochs = 7;
        c.detach_syn = true;
        let back = RunConfig::from_kv(&KvFile::parse(&c.to_kv().render()).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(RunConfig::from_kv(&KvFile::parse("dims.nope = 1").unwrap()).is_err());
        assert!(RunConfig::from_kv(&KvFile::parse("dims.kernel = 4").unwrap()).is_err());
    }

    #[test]
    fn dims_round_trip_through_meta() {
        let d = ModelDims {
            latent: 33,
            ..ModelDims::default()
        };
        let mut meta = Vec::new();
        d.write("dims", &mut meta);
        let back = ModelDims::read("dims", |k| {
            meta.iter().find(|(m, _)| m == k).map(|(_, v)| v.clone())
        })
        .unwrap();
        assert_eq!(back, d);
    }
}
