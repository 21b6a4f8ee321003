//! Flat key=value configuration files.
//!
//! Lines are `key=value`, `#` starts a comment, unknown keys are errors.
//! Every key has a desk-scale default; `configs/` ships desk and paper-scale
//! profiles.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use skimba_model::net::NetworkSpec;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone)]
pub struct Config {
    // geometry
    pub grid_l: usize,
    pub grid_w: usize,
    pub grid_h: usize,
    pub voxel_size: f32,
    pub class_count: usize,
    pub image_w: usize,
    pub image_h: usize,
    // network
    pub feat_channels: usize,
    pub latent_channels: usize,
    pub cond_channels: usize,
    pub state_size: usize,
    pub vae_channels: Vec<usize>,
    pub denoiser_channels: Vec<usize>,
    pub seg_channels: Vec<usize>,
    pub use_mscb: bool,
    pub use_sb: bool,
    pub use_skimba: bool,
    // diffusion
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    // dataset
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub test_scenes: usize,
    pub min_boxes: usize,
    pub max_boxes: usize,
    pub min_poles: usize,
    pub max_poles: usize,
    // training
    pub seed: u64,
    pub vae_lr: f64,
    pub vae_weight_decay: f64,
    pub vae_epochs: usize,
    pub diffusion_lr: f64,
    pub diffusion_weight_decay: f64,
    pub diffusion_epochs: usize,
    pub seg_lr: f64,
    pub seg_weight_decay: f64,
    pub seg_epochs: usize,
    pub beta_lovasz: f64,
    pub kl_weight: f64,
    pub warmup_frac: f64,
    pub lr_floor_frac: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            grid_l: 32,
            grid_w: 32,
            grid_h: 8,
            voxel_size: 0.2,
            class_count: 5,
            image_w: 40,
            image_h: 30,
            feat_channels: 8,
            latent_channels: 8,
            cond_channels: 8,
            state_size: 8,
            vae_channels: vec![16, 32],
            denoiser_channels: vec![16, 32],
            seg_channels: vec![16, 32],
            use_mscb: true,
            use_sb: true,
            use_skimba: true,
            diffusion_steps: 100,
            beta_start: 1e-3,
            beta_end: 0.2,
            train_scenes: 256,
            val_scenes: 32,
            test_scenes: 32,
            min_boxes: 2,
            max_boxes: 6,
            min_poles: 0,
            max_poles: 4,
            seed: 0,
            vae_lr: 3e-4,
            vae_weight_decay: 1e-4,
            vae_epochs: 24,
            diffusion_lr: 1e-3,
            diffusion_weight_decay: 1e-4,
            diffusion_epochs: 43,
            seg_lr: 5e-3,
            seg_weight_decay: 1e-4,
            seg_epochs: 24,
            beta_lovasz: 1.0,
            kl_weight: 1e-6,
            warmup_frac: 0.05,
            lr_floor_frac: 0.01,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError(format!("line {}: expected key=value, got {raw:?}", lineno + 1)));
            };
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| ConfigError(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String>
        where
            T::Err: fmt::Display,
        {
            v.parse().map_err(|e| format!("{key}: cannot parse {v:?}: {e}"))
        }
        fn plist(key: &str, v: &str) -> Result<Vec<usize>, String> {
            v.split(',')
                .map(|s| s.trim().parse().map_err(|e| format!("{key}: bad entry {s:?}: {e}")))
                .collect()
        }
        fn pbool(key: &str, v: &str) -> Result<bool, String> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(format!("{key}: expected true/false, got {v:?}")),
            }
        }
        match key {
            "grid_l" => self.grid_l = p(key, value)?,
            "grid_w" => self.grid_w = p(key, value)?,
            "grid_h" => self.grid_h = p(key, value)?,
            "voxel_size" => self.voxel_size = p(key, value)?,
            "class_count" => self.class_count = p(key, value)?,
            "image_w" => self.image_w = p(key, value)?,
            "image_h" => self.image_h = p(key, value)?,
            "feat_channels" => self.feat_channels = p(key, value)?,
            "latent_channels" => self.latent_channels = p(key, value)?,
            "cond_channels" => self.cond_channels = p(key, value)?,
            "state_size" => self.state_size = p(key, value)?,
            "vae_channels" => self.vae_channels = plist(key, value)?,
            "denoiser_channels" => self.denoiser_channels = plist(key, value)?,
            "seg_channels" => self.seg_channels = plist(key, value)?,
            "use_mscb" => self.use_mscb = pbool(key, value)?,
            "use_sb" => self.use_sb = pbool(key, value)?,
            "use_skimba" => self.use_skimba = pbool(key, value)?,
            "diffusion_steps" => self.diffusion_steps = p(key, value)?,
            "beta_start" => self.beta_start = p(key, value)?,
            "beta_end" => self.beta_end = p(key, value)?,
            "train_scenes" => self.train_scenes = p(key, value)?,
            "val_scenes" => self.val_scenes = p(key, value)?,
            "test_scenes" => self.test_scenes = p(key, value)?,
            "min_boxes" => self.min_boxes = p(key, value)?,
            "max_boxes" => self.max_boxes = p(key, value)?,
            "min_poles" => self.min_poles = p(key, value)?,
            "max_poles" => self.max_poles = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "vae_lr" => self.vae_lr = p(key, value)?,
            "vae_weight_decay" => self.vae_weight_decay = p(key, value)?,
            "vae_epochs" => self.vae_epochs = p(key, value)?,
            "diffusion_lr" => self.diffusion_lr = p(key, value)?,
            "diffusion_weight_decay" => self.diffusion_weight_decay = p(key, value)?,
            "diffusion_epochs" => self.diffusion_epochs = p(key, value)?,
            "seg_lr" => self.seg_lr = p(key, value)?,
            "seg_weight_decay" => self.seg_weight_decay = p(key, value)?,
            "seg_epochs" => self.seg_epochs = p(key, value)?,
            "beta_lovasz" => self.beta_lovasz = p(key, value)?,
            "kl_weight" => self.kl_weight = p(key, value)?,
            "warmup_frac" => self.warmup_frac = p(key, value)?,
            "lr_floor_frac" => self.lr_floor_frac = p(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let spec = self.network_spec();
        spec.validate().map_err(|e| ConfigError(e.to_string()))?;
        if self.class_count < 5 {
            return Err(ConfigError(format!(
                "class_count {} too small: the scene generator uses 5 classes",
                self.class_count
            )));
        }
        if self.grid_l < 8 || self.grid_w < 8 || self.grid_h < 4 {
            return Err(ConfigError(format!(
                "grid {}x{}x{} too small to place scene objects",
                self.grid_l, self.grid_w, self.grid_h
            )));
        }
        if self.min_boxes > self.max_boxes || self.min_poles > self.max_poles {
            return Err(ConfigError("min counts exceed max counts".into()));
        }
        if self.max_boxes == 0 {
            return Err(ConfigError("max_boxes must be positive".into()));
        }
        if !(self.beta_start > 0.0 && self.beta_start < self.beta_end && self.beta_end < 1.0) {
            return Err(ConfigError(format!(
                "invalid beta range {}..{}",
                self.beta_start, self.beta_end
            )));
        }
        if self.diffusion_steps < 2 {
            return Err(ConfigError("diffusion_steps must be at least 2".into()));
        }
        if self.vae_channels.len() != 2 {
            return Err(ConfigError("vae_channels must have exactly two entries".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) || !(0.0..1.0).contains(&self.lr_floor_frac) {
            return Err(ConfigError("warmup_frac and lr_floor_frac must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec {
            class_count: self.class_count,
            grid_dims: [self.grid_l, self.grid_w, self.grid_h],
            voxel_size: self.voxel_size,
            image_width: self.image_w,
            image_height: self.image_h,
            feat_channels: self.feat_channels,
            latent_channels: self.latent_channels,
            cond_channels: self.cond_channels,
            vae_channels: [self.vae_channels[0], self.vae_channels[1]],
            denoiser_channels: self.denoiser_channels.clone(),
            seg_channels: self.seg_channels.clone(),
            state_size: self.state_size,
            use_mscb: self.use_mscb,
            use_sb: self.use_sb,
            use_skimba: self.use_skimba,
        }
    }
}
