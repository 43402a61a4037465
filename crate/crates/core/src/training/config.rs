use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::models::{ArchitectureConfig, Metric, ModelKind};

use super::lambda_for_quality;

/// Training hyper-parameters. Text form is one `key = value` per line with
/// `#` comments; see [`TrainingConfig::parse`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub model: ModelKind,
    pub quality: u8,
    pub metric: Metric,
    /// Defaults to the table value for `(metric, quality)`.
    pub lambda: f64,
    /// Optional `(N, M)` override of the quality channel rule.
    pub channels: Option<(usize, usize)>,
    pub batch_size: usize,
    pub patch_size: usize,
    pub initial_lr: f64,
    pub patience: usize,
    pub lr_factor: f64,
    pub aux_lr: f64,
    pub clip_norm: f64,
    pub max_steps: u64,
    pub eval_every: u64,
    /// Size of the fixed training patch pool.
    pub train_patches: usize,
    pub eval_patches: usize,
    pub seed: u64,
    pub train_dir: Option<PathBuf>,
    pub eval_dir: Option<PathBuf>,
}

impl TrainingConfig {
    pub fn new(model: ModelKind, quality: u8, metric: Metric) -> Result<Self> {
        Ok(TrainingConfig {
            model,
            quality,
            metric,
            lambda: lambda_for_quality(metric, quality)?,
            channels: None,
            batch_size: 16,
            patch_size: 256,
            initial_lr: 1e-4,
            patience: 20,
            lr_factor: 0.5,
            aux_lr: 1e-3,
            clip_norm: 1.0,
            max_steps: 5000,
            eval_every: 500,
            train_patches: 1000,
            eval_patches: 64,
            seed: 0,
            train_dir: None,
            eval_dir: None,
        })
    }

    pub fn architecture(&self) -> Result<ArchitectureConfig> {
        let a = ArchitectureConfig::for_quality(self.model, self.quality, self.metric)?;
        match self.channels {
            Some((n, m)) => a.with_channels(n, m),
            None => Ok(a),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::input(m));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.patch_size < 64 || self.patch_size % 16 != 0 {
            return fail(format!("patch_size must be a multiple of 16 and at least 64, got {}", self.patch_size));
        }
        if self.metric == Metric::MsSsim && self.patch_size < crate::metrics::MS_SSIM_MIN_SIDE {
            return fail(format!(
                "ms-ssim training needs patch_size >= {}",
                crate::metrics::MS_SSIM_MIN_SIDE
            ));
        }
        if self.lr_factor != 0.5 {
            return fail("lr_factor is fixed at 0.5".into());
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.patience == 0 {
            return fail("batch_size, eval_every and patience must be positive".into());
        }
        if self.train_patches == 0 || self.eval_patches == 0 {
            return fail("train_patches and eval_patches must be positive".into());
        }
        if !(self.initial_lr > 0.0 && self.aux_lr > 0.0 && self.clip_norm > 0.0) {
            return fail("learning rates and clip_norm must be positive".into());
        }
        self.architecture()?;
        Ok(())
    }

    /// Parses `key = value` lines. `model`, `quality` and `metric` select the
    /// defaults; every other key overrides one field.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = vec![];
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::input(format!("line {}: expected key = value", no + 1)))?;
            pairs.push((no + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let get = |key: &str| pairs.iter().rev().find(|p| p.1 == key).map(|p| p.2.clone());
        let model = get("model").map(|s| s.parse()).transpose()?.unwrap_or(ModelKind::Factorized);
        let metric = get("metric").map(|s| s.parse()).transpose()?.unwrap_or(Metric::Mse);
        let quality = match get("quality") {
            Some(q) => q.parse().map_err(|_| Error::input(format!("bad quality `{q}`")))?,
            None => 1,
        };
        let mut cfg = TrainingConfig::new(model, quality, metric)?;
        for (no, k, v) in &pairs {
            let bad = |what: &str| Error::input(format!("line {no}: bad {what} `{v}`"));
            macro_rules! num {
                ($t:ty) => {
                    v.parse::<$t>().map_err(|_| bad(k))?
                };
            }
            match k.as_str() {
                "model" | "metric" | "quality" => {}
                "lambda" => cfg.lambda = num!(f64),
                "channels" => {
                    let (n, m) = v.split_once(',').ok_or_else(|| bad("channels (expected N,M)"))?;
                    let n = n.trim().parse().map_err(|_| bad("channels"))?;
                    let m = m.trim().parse().map_err(|_| bad("channels"))?;
                    cfg.channels = Some((n, m));
                }
                "batch_size" => cfg.batch_size = num!(usize),
                "patch_size" => cfg.patch_size = num!(usize),
                "initial_lr" => cfg.initial_lr = num!(f64),
                "patience" => cfg.patience = num!(usize),
                "lr_factor" => cfg.lr_factor = num!(f64),
                "aux_lr" => cfg.aux_lr = num!(f64),
                "clip_norm" => cfg.clip_norm = num!(f64),
                "max_steps" => cfg.max_steps = num!(u64),
                "eval_every" => cfg.eval_every = num!(u64),
                "train_patches" => cfg.train_patches = num!(usize),
                "eval_patches" => cfg.eval_patches = num!(usize),
                "seed" => cfg.seed = num!(u64),
                "train_dir" => cfg.train_dir = Some(PathBuf::from(v)),
                "eval_dir" => cfg.eval_dir = Some(PathBuf::from(v)),
                other => return Err(Error::input(format!("line {no}: unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Text form accepted by [`TrainingConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model = {}", self.model);
        let _ = writeln!(s, "quality = {}", self.quality);
        let _ = writeln!(s, "metric = {}", self.metric);
        let _ = writeln!(s, "lambda = {}", self.lambda);
        if let Some((n, m)) = self.channels {
            let _ = writeln!(s, "channels = {n},{m}");
        }
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "patch_size = {}", self.patch_size);
        let _ = writeln!(s, "initial_lr = {}", self.initial_lr);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "lr_factor = {}", self.lr_factor);
        let _ = writeln!(s, "aux_lr = {}", self.aux_lr);
        let _ = writeln!(s, "clip_norm = {}", self.clip_norm);
        let _ = writeln!(s, "max_steps = {}", self.max_steps);
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(s, "train_patches = {}", self.train_patches);
        let _ = writeln!(s, "eval_patches = {}", self.eval_patches);
        let _ = writeln!(s, "seed = {}", self.seed);
        if let Some(d) = &self.train_dir {
            let _ = writeln!(s, "train_dir = {}", d.display());
        }
        if let Some(d) = &self.eval_dir {
            let _ = writeln!(s, "eval_dir = {}", d.display());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = TrainingConfig::parse("quality = 4\n# comment\nbatch_size = 8 # trailing\npatch_size=64\nchannels = 32, 48\n").unwrap();
        assert_eq!(c.lambda, 0.0130);
        assert_eq!(c.batch_size, 8);
        assert_eq!(c.channels, Some((32, 48)));
        assert_eq!(c.architecture().unwrap().m, 48);
        assert_eq!(TrainingConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn invalid_configs() {
        for text in [
            "lambda = -1",
            "patch_size = 70",
            "patch_size = 32",
            "metric = ms-ssim\npatch_size = 128",
            "lr_factor = 0.3",
            "frobnicate = 1",
            "no equals sign",
            "quality = 9",
        ] {
            assert!(matches!(TrainingConfig::parse(text), Err(Error::Input(_))), "{text}");
        }
    }
}
