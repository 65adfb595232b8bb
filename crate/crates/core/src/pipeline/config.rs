use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::coregister::FlowParams;
use crate::dcva::{LayerSelection, SelectionParams};
use crate::error::{Error, Result};
use crate::threshold::{
    check_percentile, DEFAULT_ADAPTIVE_K, DEFAULT_ADAPTIVE_RADIUS, DEFAULT_OTSU_BINS,
};

pub const DEFAULT_AOI_SIZE: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    C2va,
    DcvaOtsu,
    DcvaAda,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::C2va => "c2va",
            Method::DcvaOtsu => "dcva_otsu",
            Method::DcvaAda => "dcva_ada",
        }
    }

    pub fn is_dcva(self) -> bool {
        self != Method::C2va
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub enabled: bool,
    /// Band used to estimate the flow; all bands are warped.
    pub band_index: usize,
    pub params: FlowParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aoi {
    pub x0: usize,
    pub y0: usize,
    #[serde(default = "default_aoi_size")]
    pub size: usize,
}

fn default_aoi_size() -> usize {
    DEFAULT_AOI_SIZE
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveParams {
    pub radius: usize,
    pub k: f64,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        Self {
            radius: DEFAULT_ADAPTIVE_RADIUS,
            k: DEFAULT_ADAPTIVE_K,
        }
    }
}

/// One run: inputs, optional registration and AOI, one change-detection method.
///
/// Relative paths are resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub location_tag: String,
    pub before: PathBuf,
    pub after: PathBuf,
    pub registration: RegistrationConfig,
    /// `None` analyses the whole image.
    pub aoi: Option<Aoi>,
    pub method: Method,
    /// C2VA percentile.
    pub percentile: f64,
    pub layers: LayerSelection,
    pub selection: SelectionParams,
    pub otsu_bins: usize,
    pub adaptive: AdaptiveParams,
    /// Bands fed to the DCVA extractor; default is four evenly spaced bands.
    pub bands: Option<Vec<usize>>,
    /// Seed of the built-in extractor weights.
    pub seed: u64,
    /// Extractor weight file; overrides the built-in network.
    pub weights: Option<PathBuf>,
    pub output_prefix: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            location_tag: String::new(),
            before: PathBuf::new(),
            after: PathBuf::new(),
            registration: RegistrationConfig::default(),
            aoi: None,
            method: Method::C2va,
            percentile: 90.0,
            layers: LayerSelection::preset1(),
            selection: SelectionParams::default(),
            otsu_bins: DEFAULT_OTSU_BINS,
            adaptive: AdaptiveParams::default(),
            bands: None,
            seed: 0,
            weights: None,
            output_prefix: PathBuf::from("out/run"),
        }
    }
}

impl PipelineConfig {
    /// Static checks that do not touch the input files.
    pub fn validate(&self) -> Result<()> {
        if self.before.as_os_str().is_empty() || self.after.as_os_str().is_empty() {
            return Err(Error::Config(
                "both `before` and `after` paths are required".into(),
            ));
        }
        if self.output_prefix.as_os_str().is_empty() {
            return Err(Error::Config("`output_prefix` is empty".into()));
        }
        if self.registration.enabled {
            self.registration.params.validate().map_err(as_config)?;
        }
        if let Some(aoi) = self.aoi {
            if aoi.size == 0 {
                return Err(Error::Config("aoi.size must be positive".into()));
            }
        }
        check_percentile(self.percentile).map_err(as_config)?;
        self.selection.validate().map_err(as_config)?;
        if self.otsu_bins < 2 {
            return Err(Error::Config("otsu_bins must be >= 2".into()));
        }
        if !self.adaptive.k.is_finite() {
            return Err(Error::Config("adaptive.k must be finite".into()));
        }
        if matches!(&self.bands, Some(b) if b.is_empty()) {
            return Err(Error::Config("`bands` is empty".into()));
        }
        Ok(())
    }

    /// Value of the CSV `layers` column.
    pub fn layers_label(&self) -> String {
        if self.method.is_dcva() {
            self.layers.to_string()
        } else {
            String::new()
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.before);
        fix(&mut self.after);
        fix(&mut self.output_prefix);
        if let Some(w) = self.weights.as_mut() {
            fix(w);
        }
    }

    /// Parses one config object from a JSON value.
    pub fn from_value(v: Value) -> Result<Self> {
        let cfg: Self = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file holding one object, applying `key=value` overrides.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let mut v = read_json(path)?;
        if v.is_array() {
            return Err(Error::Config(format!(
                "{} holds several configs; use batch",
                path.display()
            )));
        }
        apply_overrides(&mut v, overrides)?;
        let mut cfg = Self::from_value(v)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }
}

fn as_config(e: Error) -> Error {
    if e.is_config() {
        e
    } else {
        Error::Config(e.to_string())
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// All configs in a file: a single object or an array of objects.
pub fn load_config_file(path: impl AsRef<Path>) -> Result<Vec<PipelineConfig>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let items = match read_json(path)? {
        Value::Array(items) => items,
        one => vec![one],
    };
    items
        .into_iter()
        .map(|v| {
            let mut cfg = PipelineConfig::from_value(v)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            cfg.resolve_paths(base);
            Ok(cfg)
        })
        .collect()
}

/// Every `*.json` file of `dir` in file-name order, flattened.
pub fn load_config_dir(dir: impl AsRef<Path>) -> Result<Vec<PipelineConfig>> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!(
            "no *.json configs in {}",
            dir.display()
        )));
    }
    let mut out = Vec::new();
    for f in files {
        out.extend(load_config_file(f)?);
    }
    Ok(out)
}

/// Applies `a.b.c=value` edits. The value is parsed as JSON when possible,
/// otherwise taken as a string.
pub fn apply_overrides(root: &mut Value, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        if key.split('.').any(str::is_empty) {
            return Err(Error::Config(format!("empty key segment in {key:?}")));
        }
        set_path(root, key, &key.split('.').collect::<Vec<_>>(), value)?;
    }
    Ok(())
}

fn set_path(node: &mut Value, key: &str, parts: &[&str], value: Value) -> Result<()> {
    if node.is_null() {
        *node = Value::Object(Default::default());
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("{key:?}: {:?} is not inside an object", parts[0])))?;
    match parts {
        [last] => {
            obj.insert(last.to_string(), value);
            Ok(())
        }
        [head, rest @ ..] => {
            let child = obj.entry(head.to_string()).or_insert(Value::Null);
            set_path(child, key, rest, value)
        }
        [] => unreachable!("split yields at least one part"),
    }
}

/// The five comparison columns for one scene: C2VA, DCVA-Otsu (preset 2) and
/// DCVA-Ada with presets 1, 2 and 3. Output prefixes get a method suffix.
pub fn comparison_configs(base: &PipelineConfig) -> Vec<PipelineConfig> {
    let variant = |method, layers: LayerSelection, suffix: &str| {
        let mut c = base.clone();
        c.method = method;
        c.layers = layers;
        let mut prefix = c.output_prefix.into_os_string();
        prefix.push(suffix);
        c.output_prefix = prefix.into();
        c
    };
    vec![
        variant(Method::C2va, base.layers.clone(), "_c2va"),
        variant(Method::DcvaOtsu, LayerSelection::preset2(), "_dcva_otsu"),
        variant(Method::DcvaAda, LayerSelection::preset1(), "_dcva_ada1"),
        variant(Method::DcvaAda, LayerSelection::preset2(), "_dcva_ada2"),
        variant(Method::DcvaAda, LayerSelection::preset3(), "_dcva_ada3"),
    ]
}
