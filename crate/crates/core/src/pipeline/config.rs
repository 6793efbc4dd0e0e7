//! Run configuration: a flat JSON object with the solver fields plus
//! key frame entries `{"index": k, "path": "..."}`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::energy::SolverConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyFrameSource {
    pub index: usize,
    pub path: PathBuf,
}

impl std::str::FromStr for KeyFrameSource {
    type Err = Error;

    /// Parses `IDX:PATH`.
    fn from_str(s: &str) -> Result<Self> {
        let (index, path) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("key frame must be given as IDX:PATH, got {s:?}")))?;
        let index = index.trim().parse().map_err(|_| Error::Config(format!("invalid key frame index {index:?}")))?;
        if path.is_empty() {
            return Err(Error::Config(format!("empty key frame path in {s:?}")));
        }
        Ok(Self { index, path: PathBuf::from(path) })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub solver: SolverConfig,
    pub keyframes: Vec<KeyFrameSource>,
}

impl RunConfig {
    /// Parses the JSON text. Relative key frame paths are resolved against `base`.
    pub fn from_json(text: &str, base: Option<&Path>) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        let Value::Object(mut map) = value else {
            return Err(Error::Config("configuration must be a JSON object".into()));
        };
        let keyframes: Vec<KeyFrameSource> = match map.remove("keyframes") {
            Some(v) => serde_json::from_value(v).map_err(|e| Error::Config(format!("keyframes: {e}")))?,
            None => Vec::new(),
        };
        let solver: SolverConfig = serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?;
        let keyframes = keyframes
            .into_iter()
            .map(|k| match base {
                Some(b) if k.path.is_relative() => KeyFrameSource { path: b.join(&k.path), ..k },
                _ => k,
            })
            .collect();
        Ok(Self { solver, keyframes })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_owned(), source })?;
        Self::from_json(&text, path.parent())
    }

    pub fn to_json(&self) -> String {
        let mut map = match serde_json::to_value(&self.solver).expect("serializable") {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        map.insert("keyframes".into(), serde_json::to_value(&self.keyframes).expect("serializable"));
        serde_json::to_string_pretty(&Value::Object(map)).expect("serializable")
    }

    /// Key frames sorted by index; the solver's fixed indices follow them.
    pub fn normalized(mut self) -> Result<Self> {
        self.keyframes.sort_by_key(|k| k.index);
        if self.keyframes.windows(2).any(|w| w[0].index == w[1].index) {
            return Err(Error::Config("duplicate key frame index".into()));
        }
        if !self.keyframes.is_empty() {
            self.solver.fixed_indices = self.keyframes.iter().map(|k| k.index).collect();
        }
        self.solver.validate()?;
        if self.keyframes.is_empty() {
            return Err(Error::Config("no key frames given".into()));
        }
        Ok(self)
    }

    /// `# name = value` lines echoing every parameter.
    pub fn header_lines(&self) -> Vec<String> {
        let s = &self.solver;
        let mut lines = vec![
            format!("# delta = {}", s.delta),
            format!("# sigma = {}", s.sigma),
            format!("# theta = {}", s.theta),
            format!("# K = {}", s.steps),
            format!("# levels = {}", s.levels),
            format!("# iterations = {}", s.iterations),
            format!("# beta = {}", s.beta),
            format!("# mode = {}", serde_json::to_value(s.mode).unwrap().as_str().unwrap()),
            format!("# boundary = {}", serde_json::to_value(s.boundary).unwrap().as_str().unwrap()),
            format!("# det_floor = {}", s.det_floor),
        ];
        lines.extend(self.keyframes.iter().map(|k| format!("# keyframe {} = {}", k.index, k.path.display())));
        lines
    }
}
