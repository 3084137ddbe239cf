//! Experiment configuration. The JSON file is checked field by field and
//! every problem is reported at its JSON-pointer path, so one pass over a
//! broken file lists all of them.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clockforge::auction::{self, AuctionConfig, StepRule};
use clockforge::bidders::{NoiseFamily, NoiseSpec};
use clockforge::encodings::MAX_ITEMS;
use clockforge::market::DEFAULT_ITEM_CAP;
use clockforge::verify;
use clockforge::{BaseScheme, Bundle, FeatureMap, ValuationProfile};
use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::valuations::load_valuations;

pub const CONFIG_VERSION: u64 = 1;

/// One schema problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub pointer: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.pointer.is_empty() { "(root)" } else { &self.pointer };
        write!(f, "{at}: {}", self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{} configuration error(s):\n{}", .0.len(), list(.0))]
    Schema(Vec<Violation>),
}

fn list(vs: &[Violation]) -> String {
    vs.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n")
}

impl ConfigError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ConfigError::Schema(v) => v,
            ConfigError::Io { .. } => &[],
        }
    }
}

/// A pricing scheme as written in configs and trace files:
/// `{"scheme": "linear" | "poly" | "bundle", "degree": r, "personalized": bool}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "SchemeRepr", try_from = "SchemeRepr")]
pub struct SchemeSpec {
    pub base: BaseScheme,
    pub personalized: bool,
}

#[derive(Serialize, Deserialize)]
struct SchemeRepr {
    scheme: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    degree: Option<usize>,
    #[serde(default)]
    personalized: bool,
}

impl From<SchemeSpec> for SchemeRepr {
    fn from(s: SchemeSpec) -> Self {
        let (scheme, degree) = match s.base {
            BaseScheme::Linear => ("linear", None),
            BaseScheme::Polynomial { degree } => ("poly", Some(degree)),
            BaseScheme::BundleIdentity => ("bundle", None),
        };
        SchemeRepr { scheme: scheme.into(), degree, personalized: s.personalized }
    }
}

impl TryFrom<SchemeRepr> for SchemeSpec {
    type Error = String;

    fn try_from(r: SchemeRepr) -> Result<Self, String> {
        let base = match (r.scheme.as_str(), r.degree) {
            ("linear", None) => BaseScheme::Linear,
            ("bundle", None) => BaseScheme::BundleIdentity,
            ("poly", Some(0)) => return Err("degree must be ≥ 1".into()),
            ("poly", Some(degree)) => BaseScheme::Polynomial { degree },
            ("poly", None) => return Err("the poly scheme needs a degree".into()),
            ("linear" | "bundle", Some(_)) => return Err("degree applies only to the poly scheme".into()),
            (other, _) => return Err(format!("unknown scheme \"{other}\"")),
        };
        Ok(SchemeSpec { base, personalized: r.personalized })
    }
}

impl SchemeSpec {
    /// Short file-name friendly name, e.g. `poly2-personal`.
    pub fn label(&self) -> String {
        let base = match self.base {
            BaseScheme::Linear => "linear".to_string(),
            BaseScheme::Polynomial { degree } => format!("poly{degree}"),
            BaseScheme::BundleIdentity => "bundle".to_string(),
        };
        if self.personalized {
            format!("{base}-personal")
        } else {
            base
        }
    }

    pub fn feature_map(&self, items: usize, agents: usize, bundles: Option<&[Bundle]>) -> clockforge::Result<FeatureMap> {
        match bundles {
            Some(b) => FeatureMap::with_bundles(self.base, self.personalized, items, agents, b.to_vec()),
            None => FeatureMap::new(self.base, self.personalized, items, agents),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Truthful,
    Stochastic,
    Oscillator,
    Garp,
}

/// Bidder section of a config, also stored in full JSON traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidderSpec {
    pub model: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valuations: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepSpec {
    /// `η^t = V/√t`; `V` defaults to the valuation bound.
    VOverSqrtT { v: Option<f64> },
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
    pub full_json: bool,
}

/// A validated experiment: the cross product of `schemes × rounds × seeds`
/// sharing one market, bidder model and auction setting.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub path: PathBuf,
    pub items: usize,
    pub agents: usize,
    pub bundles: Option<Vec<Bundle>>,
    pub schemes: Vec<SchemeSpec>,
    pub rounds: Vec<usize>,
    pub seeds: Vec<u64>,
    pub lambda: f64,
    pub radius: Option<f64>,
    pub step: StepSpec,
    pub clearing_eps: Option<f64>,
    pub early_stop: bool,
    pub objective_every: usize,
    pub record_valuations: bool,
    pub item_cap: usize,
    pub bidder: BidderSpec,
    /// Mean valuations, resolved from `bidder.valuations`.
    pub valuations: Option<ValuationProfile>,
    /// `V`: the bound on realized valuations used by the step rule and the
    /// default radius.
    pub value_scale: f64,
    pub output: OutputSpec,
    pub warnings: Vec<String>,
}

impl ExperimentConfig {
    pub fn feature_map(&self, scheme: &SchemeSpec) -> clockforge::Result<FeatureMap> {
        scheme.feature_map(self.items, self.agents, self.bundles.as_deref())
    }

    pub fn step_rule(&self) -> StepRule {
        match &self.step {
            StepSpec::VOverSqrtT { v } => StepRule::VOverSqrtT { scale: v.unwrap_or(self.value_scale) },
            StepSpec::Explicit(s) => StepRule::Explicit(s.clone()),
        }
    }

    pub fn auction_config(&self, fm: &FeatureMap, rounds: usize, seed: u64) -> AuctionConfig {
        let radius = self.radius.unwrap_or_else(|| auction::select_radius(fm, self.value_scale));
        let mut cfg = AuctionConfig::new(rounds, self.lambda, radius, self.step_rule())
            .with_early_stop(self.early_stop)
            .with_objective_every(self.objective_every)
            .with_recorded_valuations(self.record_valuations)
            .with_clearing_eps(self.clearing_eps.unwrap_or(1e-6 * self.value_scale));
        cfg.seed = seed;
        cfg.item_cap = self.item_cap;
        cfg
    }
}

fn child(ptr: &str, key: &str) -> String {
    format!("{ptr}/{}", key.replace('~', "~0").replace('/', "~1"))
}

fn index(ptr: &str, i: usize) -> String {
    format!("{ptr}/{i}")
}

fn as_usize(v: &Value) -> Result<usize, String> {
    v.as_u64().and_then(|x| usize::try_from(x).ok()).ok_or_else(|| "expected a nonnegative integer".into())
}

fn as_u64(v: &Value) -> Result<u64, String> {
    v.as_u64().ok_or_else(|| "expected a nonnegative integer".into())
}

fn as_f64(v: &Value) -> Result<f64, String> {
    v.as_f64().ok_or_else(|| "expected a number".into())
}

fn as_bool(v: &Value) -> Result<bool, String> {
    v.as_bool().ok_or_else(|| "expected true or false".into())
}

fn as_str(v: &Value) -> Result<String, String> {
    v.as_str().map(str::to_owned).ok_or_else(|| "expected a string".into())
}

#[derive(Default)]
struct Walker {
    errors: Vec<Violation>,
}

impl Walker {
    fn fail(&mut self, pointer: impl Into<String>, message: impl Into<String>) {
        self.errors.push(Violation { pointer: pointer.into(), message: message.into() });
    }

    fn object<'v>(&mut self, v: &'v Value, ptr: &str, keys: &[&str]) -> Option<&'v Map<String, Value>> {
        let Some(obj) = v.as_object() else {
            self.fail(ptr, "expected an object");
            return None;
        };
        for k in obj.keys().filter(|k| !keys.contains(&k.as_str())) {
            self.fail(child(ptr, k), "unknown field");
        }
        Some(obj)
    }

    fn array<'v>(&mut self, v: &'v Value, ptr: &str) -> Option<&'v Vec<Value>> {
        let arr = v.as_array();
        if arr.is_none() {
            self.fail(ptr, "expected an array");
        }
        arr
    }

    /// Converted field value; a missing required field or a bad value is
    /// recorded and yields `None`.
    fn field<T>(
        &mut self,
        obj: &Map<String, Value>,
        ptr: &str,
        key: &str,
        required: bool,
        conv: impl Fn(&Value) -> Result<T, String>,
    ) -> Option<T> {
        match obj.get(key) {
            None => {
                if required {
                    self.fail(child(ptr, key), "missing field");
                }
                None
            }
            Some(v) => conv(v).map_err(|m| self.fail(child(ptr, key), m)).ok(),
        }
    }

    fn list<T>(&mut self, v: &Value, ptr: &str, conv: impl Fn(&Value) -> Result<T, String>) -> Option<Vec<T>> {
        let arr = self.array(v, ptr)?;
        if arr.is_empty() {
            self.fail(ptr, "list must not be empty");
            return None;
        }
        let before = self.errors.len();
        let out: Vec<T> = arr
            .iter()
            .enumerate()
            .filter_map(|(i, e)| conv(e).map_err(|m| self.fail(index(ptr, i), m)).ok())
            .collect();
        (self.errors.len() == before).then_some(out)
    }

    fn scheme(&mut self, v: &Value, ptr: &str, items: Option<usize>) -> Option<SchemeSpec> {
        let obj = self.object(v, ptr, &["scheme", "degree", "personalized"])?;
        let name = self.field(obj, ptr, "scheme", true, as_str);
        let degree = self.field(obj, ptr, "degree", false, as_usize);
        let personalized = self.field(obj, ptr, "personalized", false, as_bool).unwrap_or(false);
        let base = match name.as_deref()? {
            "linear" | "bundle" if degree.is_some() => {
                self.fail(child(ptr, "degree"), "degree applies only to the poly scheme");
                return None;
            }
            "linear" => BaseScheme::Linear,
            "bundle" => BaseScheme::BundleIdentity,
            "poly" => match degree {
                None => {
                    if !obj.contains_key("degree") {
                        self.fail(child(ptr, "degree"), "missing field");
                    }
                    return None;
                }
                Some(0) => {
                    self.fail(child(ptr, "degree"), "degree must be ≥ 1");
                    return None;
                }
                Some(r) => {
                    if let Some(m) = items.filter(|&m| r > m) {
                        self.fail(child(ptr, "degree"), format!("degree must be ≤ the item count ({m})"));
                        return None;
                    }
                    BaseScheme::Polynomial { degree: r }
                }
            },
            other => {
                self.fail(
                    child(ptr, "scheme"),
                    format!("unknown scheme \"{other}\"; expected linear, poly or bundle"),
                );
                return None;
            }
        };
        Some(SchemeSpec { base, personalized })
    }

    fn positive(&mut self, x: Option<f64>, ptr: String, strict: bool) -> Option<f64> {
        let x = x?;
        let ok = x.is_finite() && if strict { x > 0.0 } else { x >= 0.0 };
        if !ok {
            self.fail(ptr, if strict { "must be positive" } else { "must be nonnegative" });
            return None;
        }
        Some(x)
    }
}

fn noise_family(v: &Value) -> Result<NoiseFamily, String> {
    match v.as_str() {
        Some("gumbel") => Ok(NoiseFamily::Gumbel),
        Some("gaussian") => Ok(NoiseFamily::Gaussian),
        Some("bounded_uniform") => Ok(NoiseFamily::BoundedUniform),
        Some(other) => Err(format!("unknown noise family \"{other}\"; expected gumbel, gaussian or bounded_uniform")),
        None => Err("expected a string".into()),
    }
}

fn model_kind(v: &Value) -> Result<ModelKind, String> {
    match v.as_str() {
        Some("truthful") => Ok(ModelKind::Truthful),
        Some("stochastic") => Ok(ModelKind::Stochastic),
        Some("oscillator") => Ok(ModelKind::Oscillator),
        Some("garp") => Ok(ModelKind::Garp),
        Some(other) => Err(format!(
            "unknown bidder model \"{other}\"; expected truthful, stochastic, oscillator or garp"
        )),
        None => Err("expected a string".into()),
    }
}

/// Reads and validates a config file. Relative paths inside it resolve
/// against the file's directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, path, &base_dir)
}

pub fn parse_config(text: &str, path: &Path, base_dir: &Path) -> Result<ExperimentConfig, ConfigError> {
    let root: Value = serde_json::from_str(text).map_err(|e| {
        ConfigError::Schema(vec![Violation {
            pointer: String::new(),
            message: format!("malformed JSON: {e}"),
        }])
    })?;
    let mut w = Walker::default();
    let Some(top) =
        w.object(&root, "", &["version", "market", "scheme", "auction", "bidder", "sweep", "output"])
    else {
        return Err(ConfigError::Schema(w.errors));
    };

    match w.field(top, "", "version", true, as_u64) {
        Some(CONFIG_VERSION) | None => {}
        Some(v) => w.fail("/version", format!("unsupported version {v}; expected {CONFIG_VERSION}")),
    }

    let (mut items, mut agents, mut bundles) = (None, None, None);
    match top.get("market") {
        None => w.fail("/market", "missing field"),
        Some(v) => {
            if let Some(obj) = w.object(v, "/market", &["items", "agents", "bundles"]) {
                items = w.field(obj, "/market", "items", true, as_usize);
                agents = w.field(obj, "/market", "agents", true, as_usize);
                if items == Some(0) || items.is_some_and(|m| m > MAX_ITEMS) {
                    w.fail("/market/items", format!("must be between 1 and {MAX_ITEMS}"));
                    items = None;
                }
                if agents == Some(0) {
                    w.fail("/market/agents", "must be at least 1");
                    agents = None;
                }
                if let Some(list) = obj.get("bundles") {
                    let m = items.unwrap_or(MAX_ITEMS);
                    bundles = w.list(list, "/market/bundles", |b| {
                        let Some(arr) = b.as_array() else { return Err("expected an item list".to_string()) };
                        let ids = arr.iter().map(as_usize).collect::<Result<Vec<_>, _>>()?;
                        if ids.is_empty() {
                            return Err("bundles must contain at least one item".into());
                        }
                        if let Some(j) = ids.iter().find(|&&j| j >= m) {
                            return Err(format!("item {j} out of range"));
                        }
                        Bundle::from_items(ids).map_err(|e| e.to_string())
                    });
                }
            }
        }
    }

    let mut schemes = None;
    let mut rounds_list = None;
    let mut seeds = None;
    if let Some(v) = top.get("sweep") {
        if let Some(obj) = w.object(v, "/sweep", &["seeds", "rounds", "schemes"]) {
            if let Some(s) = obj.get("seeds") {
                seeds = w.list(s, "/sweep/seeds", as_u64);
            }
            if let Some(r) = obj.get("rounds") {
                rounds_list = w.list(r, "/sweep/rounds", |x| match as_usize(x)? {
                    0 => Err("round counts must be at least 1".into()),
                    t => Ok(t),
                });
            }
            if let Some(s) = obj.get("schemes") {
                if let Some(arr) = w.array(s, "/sweep/schemes") {
                    if arr.is_empty() {
                        w.fail("/sweep/schemes", "list must not be empty");
                    }
                    let parsed: Vec<_> =
                        arr.iter().enumerate().map(|(i, e)| w.scheme(e, &index("/sweep/schemes", i), items)).collect();
                    schemes = parsed.into_iter().collect::<Option<Vec<_>>>().filter(|s| !s.is_empty());
                }
            }
        }
    }
    match top.get("scheme") {
        Some(v) => {
            let single = w.scheme(v, "/scheme", items);
            if schemes.is_none() && !top.get("sweep").is_some_and(|s| s.get("schemes").is_some()) {
                schemes = single.map(|s| vec![s]);
            }
        }
        None if !top.get("sweep").is_some_and(|s| s.get("schemes").is_some()) => w.fail("/scheme", "missing field"),
        None => {}
    }

    let mut lambda = 0.0;
    let mut radius = None;
    let mut step = StepSpec::VOverSqrtT { v: None };
    let mut clearing_eps = None;
    let mut early_stop = true;
    let mut objective_every = 10;
    let mut record_valuations = false;
    let mut item_cap = DEFAULT_ITEM_CAP;
    match top.get("auction") {
        None => w.fail("/auction", "missing field"),
        Some(v) => {
            let keys = [
                "rounds",
                "lambda",
                "radius",
                "step",
                "clearing_eps",
                "early_stop",
                "objective_every",
                "record_valuations",
                "item_cap",
            ];
            if let Some(obj) = w.object(v, "/auction", &keys) {
                let rounds = w.field(obj, "/auction", "rounds", rounds_list.is_none(), as_usize);
                if rounds == Some(0) {
                    w.fail("/auction/rounds", "must be at least 1");
                } else if rounds_list.is_none() {
                    rounds_list = rounds.map(|t| vec![t]);
                }
                let l = w.field(obj, "/auction", "lambda", false, as_f64);
                lambda = w.positive(l, "/auction/lambda".into(), false).unwrap_or(0.0);
                let r = w.field(obj, "/auction", "radius", false, as_f64);
                radius = w.positive(r, "/auction/radius".into(), true);
                let e = w.field(obj, "/auction", "clearing_eps", false, as_f64);
                clearing_eps = w.positive(e, "/auction/clearing_eps".into(), false);
                early_stop = w.field(obj, "/auction", "early_stop", false, as_bool).unwrap_or(true);
                objective_every = w.field(obj, "/auction", "objective_every", false, as_usize).unwrap_or(10);
                record_valuations = w.field(obj, "/auction", "record_valuations", false, as_bool).unwrap_or(false);
                item_cap = w.field(obj, "/auction", "item_cap", false, as_usize).unwrap_or(DEFAULT_ITEM_CAP);
                if let Some(m) = items.filter(|&m| m > item_cap) {
                    w.fail("/market/items", format!("{m} items exceed the exact-search cap of {item_cap}"));
                }
                if let Some(sv) = obj.get("step") {
                    if let Some(so) = w.object(sv, "/auction/step", &["rule", "v", "schedule"]) {
                        let rule = w.field(so, "/auction/step", "rule", true, as_str);
                        match rule.as_deref() {
                            Some("v_over_sqrt_t") => {
                                if so.contains_key("schedule") {
                                    w.fail("/auction/step/schedule", "only the explicit rule takes a schedule");
                                }
                                let v = w.field(so, "/auction/step", "v", false, as_f64);
                                step = StepSpec::VOverSqrtT { v: w.positive(v, "/auction/step/v".into(), true) };
                            }
                            Some("explicit") => {
                                if so.contains_key("v") {
                                    w.fail("/auction/step/v", "the explicit rule takes no scale");
                                }
                                match so.get("schedule") {
                                    None => w.fail("/auction/step/schedule", "missing field"),
                                    Some(s) => {
                                        let sched = w.list(s, "/auction/step/schedule", |x| {
                                            let e = as_f64(x)?;
                                            if e > 0.0 && e.is_finite() {
                                                Ok(e)
                                            } else {
                                                Err("step sizes must be positive".to_string())
                                            }
                                        });
                                        if let Some(s) = sched {
                                            step = StepSpec::Explicit(s);
                                        }
                                    }
                                }
                            }
                            Some(other) => w.fail(
                                "/auction/step/rule",
                                format!("unknown step rule \"{other}\"; expected v_over_sqrt_t or explicit"),
                            ),
                            None => {}
                        }
                    }
                }
            }
        }
    }

    let mut bidder = None;
    match top.get("bidder") {
        None => w.fail("/bidder", "missing field"),
        Some(v) => {
            if let Some(obj) = w.object(v, "/bidder", &["model", "valuations", "noise", "seed"]) {
                let model = w.field(obj, "/bidder", "model", true, model_kind);
                let file = w.field(obj, "/bidder", "valuations", false, as_str);
                let seed = w.field(obj, "/bidder", "seed", false, as_u64).unwrap_or(0);
                let mut noise = None;
                if let Some(nv) = obj.get("noise") {
                    if let Some(no) = w.object(nv, "/bidder/noise", &["family", "sigma", "shared_scale"]) {
                        let family = w.field(no, "/bidder/noise", "family", true, noise_family);
                        let s = w.field(no, "/bidder/noise", "sigma", true, as_f64);
                        let sigma = w.positive(s, "/bidder/noise/sigma".into(), true);
                        let sh = w.field(no, "/bidder/noise", "shared_scale", false, as_f64);
                        let shared = w.positive(sh, "/bidder/noise/shared_scale".into(), false);
                        if let (Some(family), Some(sigma)) = (family, sigma) {
                            noise = Some(NoiseSpec { family, sigma, shared_scale: shared.unwrap_or(0.0) });
                        }
                    }
                }
                if let Some(model) = model {
                    match model {
                        ModelKind::Oscillator => {
                            if file.is_some() {
                                w.fail("/bidder/valuations", "the oscillator model takes no valuation file");
                            }
                            if obj.contains_key("noise") {
                                w.fail("/bidder/noise", "the oscillator model takes no noise");
                            }
                            if items.is_some_and(|m| m != 1) || agents.is_some_and(|n| n != 2) {
                                w.fail("/bidder/model", "the oscillator needs a market of 2 agents and 1 item");
                            }
                        }
                        ModelKind::Truthful if obj.contains_key("noise") => {
                            w.fail("/bidder/noise", "the truthful model takes no noise");
                        }
                        ModelKind::Stochastic if !obj.contains_key("noise") => {
                            w.fail("/bidder/noise", "missing field");
                        }
                        _ => {}
                    }
                    if model != ModelKind::Oscillator && !obj.contains_key("valuations") {
                        w.fail("/bidder/valuations", "missing field");
                    }
                }
                bidder = model.map(|model| BidderSpec { model, valuations: file.map(PathBuf::from), noise, seed });
            }
        }
    }

    let mut output = OutputSpec::default();
    if let Some(v) = top.get("output") {
        if let Some(obj) = w.object(v, "/output", &["dir", "full_json"]) {
            output.dir = w.field(obj, "/output", "dir", false, as_str).map(|d| base_dir.join(d));
            output.full_json = w.field(obj, "/output", "full_json", false, as_bool).unwrap_or(false);
        }
    }

    let mut valuations = None;
    if let (Some(b), Some(n), Some(m)) = (&bidder, agents, items) {
        if let Some(rel) = &b.valuations {
            let file = base_dir.join(rel);
            if !file.is_file() {
                w.fail("/bidder/valuations", format!("file not found: {}", file.display()));
            } else {
                match load_valuations(&file, n, m) {
                    Ok(v) => valuations = Some(v),
                    Err(e) => w.fail("/bidder/valuations", format!("{e:#}")),
                }
            }
        }
    }

    if !w.errors.is_empty() {
        return Err(ConfigError::Schema(w.errors));
    }
    let (items, agents, schemes, rounds, bidder) = match (items, agents, schemes, rounds_list, bidder) {
        (Some(m), Some(n), Some(s), Some(r), Some(b)) => (m, n, s, r, b),
        _ => unreachable!("missing sections are reported as violations"),
    };

    let bundle_set = bundles.clone().unwrap_or_else(|| clockforge::encodings::graded_subsets(items, items));
    let value_scale = match (&step, &valuations) {
        (StepSpec::VOverSqrtT { v: Some(v) }, _) => *v,
        (_, Some(v)) => {
            let sup = v.sup_norm_over(&bundle_set);
            let bound = verify::v_bound(bidder.noise.as_ref(), sup, agents, bundle_set.len());
            if bound > 0.0 {
                bound
            } else {
                1.0
            }
        }
        (_, None) => 1.0,
    };

    for (k, s) in schemes.iter().enumerate() {
        let ptr = if top.get("sweep").is_some_and(|s| s.get("schemes").is_some()) {
            index("/sweep/schemes", k)
        } else {
            "/scheme".to_string()
        };
        if let Err(e) = s.feature_map(items, agents, bundles.as_deref()) {
            w.fail(ptr, e.to_string());
        }
    }
    let longest = rounds.iter().copied().max().unwrap_or(1);
    if let StepSpec::Explicit(s) = &step {
        if s.len() < longest {
            w.fail(
                "/auction/step/schedule",
                format!("schedule has {} entries but runs last up to {longest} rounds", s.len()),
            );
        }
    }
    if !w.errors.is_empty() {
        return Err(ConfigError::Schema(w.errors));
    }

    let mut warnings = Vec::new();
    if let StepSpec::VOverSqrtT { .. } = step {
        if lambda > 1.0 / value_scale {
            let msg = format!(
                "/auction/lambda: lambda = {lambda} exceeds 1/V = {}; the convergence guarantees assume lambda <= 1/V",
                1.0 / value_scale
            );
            warn!("{msg}");
            warnings.push(msg);
        }
    }

    Ok(ExperimentConfig {
        path: path.to_owned(),
        items,
        agents,
        bundles,
        schemes,
        rounds,
        seeds: seeds.unwrap_or_else(|| vec![bidder.seed]),
        lambda,
        radius,
        step,
        clearing_eps,
        early_stop,
        objective_every,
        record_valuations,
        item_cap,
        bidder,
        valuations,
        value_scale,
        output,
        warnings,
    })
}
