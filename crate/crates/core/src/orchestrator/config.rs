use std::env;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::domain::{IntentSpace, DEFAULT_SUMMARY_MAX, DEFAULT_USER_MARKER, DEFAULT_WINDOW};
use crate::gateway::{Backend, BackendConfig, GenParams, ScriptedBackend};
use crate::memory::KnowledgeBase;
use crate::pilot::Pilot;
use crate::ra::ReflectionScope;
use crate::simenv::{load_scenario, Scenario};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocatorKind {
    /// Deterministic scoring over the element model.
    #[default]
    Sim,
    /// Ask the generator backend.
    Backend,
}

/// Knobs of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Trajectory window size N.
    pub window: usize,
    pub max_iterations: usize,
    pub action_reflection: bool,
    pub information_reflection: bool,
    /// Steps between history summaries.
    pub summary_cadence: usize,
    pub summary_max: usize,
    /// Identical ineffective (action, screen) pairs in a row that force a HELP.
    pub repeat_limit: usize,
    /// Attach simulator ground truth to the trace.
    pub evaluator: bool,
    pub seed: u64,
    pub params: GenParams,
    pub intents: Vec<String>,
    pub user_marker: String,
    pub locator: LocatorKind,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            max_iterations: 40,
            action_reflection: true,
            information_reflection: true,
            summary_cadence: 4,
            summary_max: DEFAULT_SUMMARY_MAX,
            repeat_limit: 3,
            evaluator: true,
            seed: 0,
            params: GenParams::default(),
            intents: IntentSpace::default().labels,
            user_marker: DEFAULT_USER_MARKER.to_string(),
            locator: LocatorKind::Sim,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: &str| Err(OrchestratorError::Config(m.to_string()));
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if self.summary_cadence == 0 {
            return bad("summary_cadence must be at least 1");
        }
        if self.repeat_limit < 2 {
            return bad("repeat_limit must be at least 2");
        }
        if self.intents.is_empty() {
            return bad("intent space is empty");
        }
        self.params
            .validate()
            .map_err(|e| OrchestratorError::Config(e.to_string()))
    }

    pub fn scope(&self) -> ReflectionScope {
        ReflectionScope {
            action: self.action_reflection,
            information: self.information_reflection,
        }
    }

    pub fn intent_space(&self) -> IntentSpace {
        IntentSpace::new(self.intents.clone())
    }

    /// Generation parameters with the run seed filled in.
    pub fn gen_params(&self) -> GenParams {
        GenParams {
            seed: Some(self.params.seed.unwrap_or(self.seed)),
            ..self.params
        }
    }
}

/// Which generator backs a session.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendRef {
    /// The scripted scenario pilot.
    #[default]
    Pilot,
    /// Recorded fixtures; empty means the scenario's own fixture file.
    Fixtures {
        #[serde(default)]
        paths: Vec<PathBuf>,
    },
    /// A backend configuration file.
    Config { path: PathBuf },
}

/// Everything needed to start a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    /// Scenario name (file stem under the scenario directory) or path.
    pub scenario: String,
    /// Overrides the scenario's own instruction.
    #[serde(default)]
    pub instruction: Option<String>,
    #[serde(default)]
    pub backend: BackendRef,
    #[serde(default)]
    pub run: RunConfig,
}

/// Layout of the asset tree: scenarios, knowledge, fixtures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assets {
    pub root: PathBuf,
}

impl Assets {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// `$SLOTWISE_ASSETS`, else the first `assets` directory found walking
    /// up from the working directory.
    pub fn discover() -> Result<Self, OrchestratorError> {
        if let Ok(p) = env::var("SLOTWISE_ASSETS") {
            return Ok(Self::new(p));
        }
        let mut dir = env::current_dir()?;
        loop {
            let cand = dir.join("assets");
            if cand.join("scenarios").is_dir() {
                return Ok(Self::new(cand));
            }
            if !dir.pop() {
                return Err(OrchestratorError::Config("no assets directory found".into()));
            }
        }
    }

    pub fn scenarios_dir(&self) -> PathBuf {
        self.root.join("scenarios")
    }

    pub fn knowledge_dir(&self) -> PathBuf {
        self.root.join("knowledge")
    }

    pub fn fixtures_dir(&self) -> PathBuf {
        self.root.join("fixtures")
    }

    pub fn fixture_file(&self, scenario: &str) -> PathBuf {
        self.fixtures_dir().join(format!("{scenario}.jsonl"))
    }

    pub fn scenario_path(&self, name_or_path: &str) -> PathBuf {
        let p = Path::new(name_or_path);
        if p.extension().is_some() || p.components().count() > 1 {
            p.to_path_buf()
        } else {
            self.scenarios_dir().join(format!("{name_or_path}.json"))
        }
    }

    pub fn load_scenario(&self, name_or_path: &str) -> Result<Scenario, OrchestratorError> {
        Ok(load_scenario(&self.scenario_path(name_or_path))?)
    }

    /// Every scenario file, sorted by name.
    pub fn scenario_names(&self) -> Result<Vec<String>, OrchestratorError> {
        let mut names: Vec<String> = std::fs::read_dir(self.scenarios_dir())?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .collect();
        names.sort();
        Ok(names)
    }

    pub fn knowledge(&self) -> Result<Arc<KnowledgeBase>, OrchestratorError> {
        let dir = self.knowledge_dir();
        if !dir.is_dir() {
            return Ok(Arc::new(KnowledgeBase::new()));
        }
        Ok(Arc::new(KnowledgeBase::load_dir(&dir)?))
    }

    pub fn backend(&self, r: &BackendRef, scenario: &Scenario) -> Result<Arc<dyn Backend>, OrchestratorError> {
        Ok(match r {
            BackendRef::Pilot => Arc::new(Pilot::new(scenario.clone())),
            BackendRef::Fixtures { paths } => {
                let mut s = ScriptedBackend::new();
                if paths.is_empty() {
                    s.extend_from_file(&self.fixture_file(&scenario.name))?;
                }
                for p in paths {
                    s.extend_from_file(p)?;
                }
                Arc::new(s)
            }
            BackendRef::Config { path } => {
                let cfg = BackendConfig::load(path)?;
                cfg.build(path.parent().unwrap_or(Path::new(".")))?
            }
        })
    }
}
