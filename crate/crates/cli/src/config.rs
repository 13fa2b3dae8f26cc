//! Layered configuration: flags over environment over `pageguide.toml`.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use pageguide_core::find::FindConfig;
use pageguide_core::gateway::{
    Gateway, GatewayConfig, GatewayError, HttpTransport, StoreMode, Transport, TranscriptStore, API_KEY_ENV,
    DEFAULT_BASE_URL, DEFAULT_MODEL,
};
use pageguide_core::guide::{GuideConfig, MAX_STEPS};
use pageguide_core::hide::HideConfig;
use pageguide_core::index::{IndexConfig, DEFAULT_ELEM_CLIP, DEFAULT_FUZZY_MIN};

pub const CONFIG_FILE: &str = "pageguide.toml";
pub const MODEL_ENV: &str = "PAGEGUIDE_MODEL";
pub const BASE_URL_ENV: &str = "PAGEGUIDE_BASE_URL";
/// Upper bound accepted for `max_steps`.
pub const MAX_STEPS_LIMIT: u32 = 200;
pub const DEFAULT_BODY_LIMIT: usize = 8 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// Contents of `pageguide.toml`. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<String>,
    pub base_url: Option<String>,
    pub replay: Option<PathBuf>,
    pub mode: Option<StoreMode>,
    pub elem_clip: Option<usize>,
    pub fuzzy_min: Option<f64>,
    pub max_steps: Option<u32>,
    pub body_limit: Option<usize>,
    pub timeout_secs: Option<u64>,
}

impl FileConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: FileConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        if let (Some(replay), Some(dir)) = (cfg.replay.as_mut(), path.parent()) {
            if replay.is_relative() {
                *replay = dir.join(&*replay);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.to_path_buf(), message: e.to_string() })?;
        Self::parse(&text, path)
    }
}

/// Finds the config file: the explicit path, then `./pageguide.toml`, then
/// `$HOME/.config/pageguide/pageguide.toml`.
pub fn discover(explicit: Option<&Path>, cwd: &Path, home: Option<&Path>) -> Option<PathBuf> {
    if let Some(p) = explicit {
        return Some(p.to_path_buf());
    }
    let local = cwd.join(CONFIG_FILE);
    if local.is_file() {
        return Some(local);
    }
    let global = home?.join(".config").join("pageguide").join(CONFIG_FILE);
    global.is_file().then_some(global)
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub model: Option<String>,
    pub base_url: Option<String>,
    pub replay: Option<PathBuf>,
    pub live: bool,
    /// Set by `record --transcript`.
    pub record: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub model: String,
    pub base_url: String,
    pub api_key: Option<String>,
    pub mode: StoreMode,
    pub transcript: Option<PathBuf>,
    pub elem_clip: usize,
    pub fuzzy_min: f64,
    pub max_steps: u32,
    pub body_limit: usize,
    pub timeout: Duration,
}

impl Config {
    pub fn resolve(
        flags: &Overrides,
        env: impl Fn(&str) -> Option<String>,
        file: FileConfig,
    ) -> Result<Config, ConfigError> {
        let env = |k: &str| env(k).filter(|v| !v.trim().is_empty());
        let (mode, transcript) = if let Some(path) = &flags.record {
            (StoreMode::Record, Some(path.clone()))
        } else if flags.live {
            (StoreMode::Passthrough, None)
        } else if let Some(path) = &flags.replay {
            (StoreMode::Replay, Some(path.clone()))
        } else {
            let mode = file.mode.unwrap_or(if file.replay.is_some() { StoreMode::Replay } else { StoreMode::Passthrough });
            (mode, file.replay.clone())
        };
        let cfg = Config {
            model: flags.model.clone().or_else(|| env(MODEL_ENV)).or(file.model).unwrap_or_else(|| DEFAULT_MODEL.into()),
            base_url: flags
                .base_url
                .clone()
                .or_else(|| env(BASE_URL_ENV))
                .or(file.base_url)
                .unwrap_or_else(|| DEFAULT_BASE_URL.into()),
            api_key: env(API_KEY_ENV),
            mode,
            transcript,
            elem_clip: file.elem_clip.unwrap_or(DEFAULT_ELEM_CLIP),
            fuzzy_min: file.fuzzy_min.unwrap_or(DEFAULT_FUZZY_MIN),
            max_steps: file.max_steps.unwrap_or(MAX_STEPS),
            body_limit: file.body_limit.unwrap_or(DEFAULT_BODY_LIMIT),
            timeout: Duration::from_secs(file.timeout_secs.unwrap_or(60)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.mode != StoreMode::Passthrough && self.transcript.is_none() {
            return bad(format!("{} mode needs a transcript path (--replay FILE)", mode_name(self.mode)));
        }
        if !(self.fuzzy_min > 0.0 && self.fuzzy_min <= 1.0) {
            return bad(format!("fuzzy_min must be in (0, 1], got {}", self.fuzzy_min));
        }
        if self.elem_clip == 0 {
            return bad("elem_clip must be at least 1".into());
        }
        if self.max_steps == 0 || self.max_steps > MAX_STEPS_LIMIT {
            return bad(format!("max_steps must be in 1..={MAX_STEPS_LIMIT}, got {}", self.max_steps));
        }
        if self.body_limit == 0 {
            return bad("body_limit must be positive".into());
        }
        if self.model.trim().is_empty() {
            return bad("model must not be empty".into());
        }
        Ok(())
    }

    pub fn index(&self) -> IndexConfig {
        IndexConfig { elem_clip: self.elem_clip, fuzzy_min: self.fuzzy_min, ..IndexConfig::default() }
    }

    pub fn find(&self) -> FindConfig {
        FindConfig { elem_clip: self.elem_clip, fuzzy_min: self.fuzzy_min, ..FindConfig::default() }
    }

    pub fn guide(&self) -> GuideConfig {
        GuideConfig { index: self.index(), max_steps: self.max_steps, ..GuideConfig::default() }
    }

    pub fn hide(&self) -> HideConfig {
        HideConfig { elem_clip: self.elem_clip, ..HideConfig::default() }
    }

    /// Builds the gateway. A missing credential only surfaces when a live
    /// call is actually needed.
    pub fn gateway(&self) -> Result<Gateway, GatewayError> {
        let store = match &self.transcript {
            Some(path) if self.mode != StoreMode::Passthrough => TranscriptStore::open(path, self.mode)?,
            _ => TranscriptStore::in_memory(StoreMode::Passthrough),
        };
        let transport: Option<Arc<dyn Transport>> = match (&self.api_key, self.mode) {
            (Some(key), StoreMode::Record | StoreMode::Passthrough) => {
                Some(Arc::new(HttpTransport::new(self.base_url.clone(), key.clone())))
            }
            _ => None,
        };
        let config = GatewayConfig { model: self.model.clone(), timeout: self.timeout, ..GatewayConfig::default() };
        Ok(Gateway::new(Arc::new(store), transport, config))
    }
}

fn mode_name(mode: StoreMode) -> &'static str {
    match mode {
        StoreMode::Record => "record",
        StoreMode::Replay => "replay",
        StoreMode::Passthrough => "passthrough",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn env(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let map: HashMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        move |k| map.get(k).cloned()
    }

    fn file(text: &str) -> FileConfig {
        FileConfig::parse(text, Path::new("/cfg/pageguide.toml")).unwrap()
    }

    #[test]
    fn precedence_per_field() {
        let f = || file("model = \"file-model\"\nbase_url = \"http://file\"\n");
        let e = env(&[(MODEL_ENV, "env-model"), (BASE_URL_ENV, "http://env")]);
        let flags = Overrides { model: Some("flag-model".into()), base_url: Some("http://flag".into()), ..Default::default() };
        let c = Config::resolve(&flags, &e, f()).unwrap();
        assert_eq!((c.model.as_str(), c.base_url.as_str()), ("flag-model", "http://flag"));
        let c = Config::resolve(&Overrides::default(), &e, f()).unwrap();
        assert_eq!((c.model.as_str(), c.base_url.as_str()), ("env-model", "http://env"));
        let c = Config::resolve(&Overrides::default(), env(&[]), f()).unwrap();
        assert_eq!((c.model.as_str(), c.base_url.as_str()), ("file-model", "http://file"));
        let c = Config::resolve(&Overrides::default(), env(&[]), FileConfig::default()).unwrap();
        assert_eq!((c.model.as_str(), c.base_url.as_str()), (DEFAULT_MODEL, DEFAULT_BASE_URL));
    }

    #[test]
    fn mode_selection() {
        let f = || file("replay = \"t.jsonl\"\n");
        let c = Config::resolve(&Overrides::default(), env(&[]), f()).unwrap();
        assert_eq!((c.mode, c.transcript), (StoreMode::Replay, Some(PathBuf::from("/cfg/t.jsonl"))));
        let flags = Overrides { replay: Some("x.jsonl".into()), ..Default::default() };
        let c = Config::resolve(&flags, env(&[]), f()).unwrap();
        assert_eq!(c.transcript, Some(PathBuf::from("x.jsonl")));
        let flags = Overrides { live: true, ..Default::default() };
        assert_eq!(Config::resolve(&flags, env(&[]), f()).unwrap().mode, StoreMode::Passthrough);
        let flags = Overrides { record: Some("r.jsonl".into()), live: true, ..Default::default() };
        assert_eq!(Config::resolve(&flags, env(&[]), f()).unwrap().mode, StoreMode::Record);
        assert_eq!(Config::resolve(&Overrides::default(), env(&[]), FileConfig::default()).unwrap().mode, StoreMode::Passthrough);
    }

    #[test]
    fn validation() {
        let err = |text: &str| Config::resolve(&Overrides::default(), env(&[]), file(text)).unwrap_err().to_string();
        assert!(err("mode = \"replay\"\n").contains("transcript"));
        assert!(err("fuzzy_min = 0.0\n").contains("fuzzy_min"));
        assert!(err("fuzzy_min = 1.5\n").contains("fuzzy_min"));
        assert!(err("elem_clip = 0\n").contains("elem_clip"));
        assert!(err("max_steps = 0\n").contains("max_steps"));
        assert!(err("max_steps = 1000\n").contains("max_steps"));
        assert!(Config::resolve(&Overrides::default(), env(&[]), file("fuzzy_min = 1.0\n")).is_ok());
        assert!(FileConfig::parse("colour = 1\n", Path::new("p.toml")).is_err());
    }

    #[test]
    fn blank_env_values_are_ignored() {
        let c = Config::resolve(&Overrides::default(), env(&[(MODEL_ENV, "  "), (API_KEY_ENV, "")]), FileConfig::default()).unwrap();
        assert_eq!(c.model, DEFAULT_MODEL);
        assert_eq!(c.api_key, None);
    }

    #[test]
    fn discovery_order() {
        let tmp = tempfile::tempdir().unwrap();
        let cwd = tmp.path().join("cwd");
        let home = tmp.path().join("home");
        std::fs::create_dir_all(&cwd).unwrap();
        std::fs::create_dir_all(home.join(".config/pageguide")).unwrap();
        assert_eq!(discover(None, &cwd, Some(&home)), None);
        std::fs::write(home.join(".config/pageguide").join(CONFIG_FILE), "").unwrap();
        assert_eq!(discover(None, &cwd, Some(&home)), Some(home.join(".config/pageguide").join(CONFIG_FILE)));
        std::fs::write(cwd.join(CONFIG_FILE), "").unwrap();
        assert_eq!(discover(None, &cwd, Some(&home)), Some(cwd.join(CONFIG_FILE)));
        assert_eq!(discover(Some(Path::new("/x.toml")), &cwd, Some(&home)), Some(PathBuf::from("/x.toml")));
    }
}
