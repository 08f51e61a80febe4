//! On-disk artifact pipeline: generate, label, readout, render, fit,
//! calibrate, evaluate, ablate and report, with per-step stamps so
//! unchanged steps are skipped and unchanged files are never rewritten.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::atoms::{
    export_atom_bundle, import_atom_bundle, inject_flip_noise, parse_atom_bundle, readout_atoms, AtomProvenance,
    AtomTable,
};
use crate::dgp::{
    generate_cohort, Cohort, DgpConfig, LatentEventTable, PersonaData, PersonaTraits, Provenance, SourceStream,
};
use crate::error::{Error, Result};
use crate::eval::ablation::{
    self, dgp_grid, grid_variants, run_noise_grid, run_training_curve, run_variants, transfer_report, DgpGrid,
    NoiseGrid, TrainCurve, TransferReport, GRID_METHODS, GRID_SCALES, NOISE_EPSILONS, TRAIN_SIZES,
};
use crate::eval::experiment::{calibrate_default, evaluate, fit_method, SeedData, Setup};
use crate::eval::report::{
    breakdown_table, headline_table, metric_report, reachability_report, reachability_table, BootstrapOptions,
    MetricReport, ReachabilityReport,
};
use crate::ground_truth::{compute_all_labels, GtLabel, LabelMap};
use crate::nl_render::{render, TEMPLATE_VERSION};
use crate::resolvers::Method;
use crate::schema::{DifficultyClass, SourceId, Split, SplitAssignment};
use crate::selective::{Decision, PolicyFile, SkipPolicy};
use crate::{Model, Prediction};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Generate,
    Label,
    Readout,
    Render,
    Fit,
    Calibrate,
    Evaluate,
    Ablate,
    Report,
}

impl Step {
    pub const ALL: [Step; 9] = [
        Step::Generate,
        Step::Label,
        Step::Readout,
        Step::Render,
        Step::Fit,
        Step::Calibrate,
        Step::Evaluate,
        Step::Ablate,
        Step::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Step::Generate => "generate",
            Step::Label => "label",
            Step::Readout => "readout",
            Step::Render => "render",
            Step::Fit => "fit",
            Step::Calibrate => "calibrate",
            Step::Evaluate => "evaluate",
            Step::Ablate => "ablate",
            Step::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Step::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown step {s:?}")))
    }

    fn producer(self) -> &'static str {
        match self {
            Step::Generate => "memqa generate",
            Step::Label => "memqa label",
            Step::Readout => "memqa readout",
            Step::Render => "memqa render",
            Step::Fit => "memqa fit",
            Step::Calibrate => "memqa calibrate",
            Step::Evaluate => "memqa evaluate",
            Step::Ablate => "memqa ablate",
            Step::Report => "memqa report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Noise,
    DgpGrid,
    TrainCurve,
    Transfer,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Noise, Ablation::DgpGrid, Ablation::TrainCurve, Ablation::Transfer];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Noise => "noise",
            Ablation::DgpGrid => "dgp-grid",
            Ablation::TrainCurve => "train-curve",
            Ablation::Transfer => "transfer",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?} (noise, dgp-grid, train-curve, transfer)")))
    }
}

/// Where test-time atoms come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AtomSource {
    Readout,
    /// Direct readout with every atom flipped with probability `epsilon`.
    Noisy { epsilon: f64 },
    /// Bundles at `{dir}/{seed}/{persona_id}.json`.
    Replay { dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub noise_epsilons: Vec<f64>,
    pub grid_scales: Vec<f64>,
    pub train_sizes: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            noise_epsilons: NOISE_EPSILONS.to_vec(),
            grid_scales: GRID_SCALES.to_vec(),
            train_sizes: TRAIN_SIZES.to_vec(),
        }
    }
}

/// The single self-describing input of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Base generator settings; `seed` is replaced by each entry of `seeds`.
    pub dgp: DgpConfig,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub atoms: AtomSource,
    pub bootstrap: BootstrapOptions,
    pub ablations: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dgp: DgpConfig::default(),
            seeds: vec![1, 2, 3, 4],
            methods: Method::MAIN.to_vec(),
            atoms: AtomSource::Readout,
            bootstrap: BootstrapOptions::default(),
            ablations: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        for &s in &self.seeds {
            self.seed_config(s).validate()?;
        }
        if let AtomSource::Noisy { epsilon } = self.atoms {
            if !(0.0..=1.0).contains(&epsilon) {
                return Err(Error::Config(format!("noise epsilon {epsilon} outside [0,1]")));
            }
        }
        Ok(())
    }

    pub fn seed_config(&self, seed: u64) -> DgpConfig {
        DgpConfig {
            seed,
            ..self.dgp.clone()
        }
    }

    pub fn hash(&self) -> String {
        digest(&[&serde_json::to_string(self).expect("config serializes")])
    }

    pub fn run_id(&self) -> String {
        format!("run-{}", &self.hash()[..12])
    }
}

fn digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub steps: Vec<Step>,
    pub artifacts: Vec<String>,
    pub tool_version: String,
}

/// Writes `bytes` unless the file already holds exactly them. Returns
/// whether the file was written.
pub fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<bool> {
    if let Ok(old) = fs::read(path) {
        if old == bytes {
            return Ok(false);
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(true)
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("artifact serializes");
    s.push('\n');
    s.into_bytes()
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<bool> {
    write_if_changed(path, &to_json(v))
}

fn read_json<T: DeserializeOwned>(path: &Path, producer: &'static str) -> Result<T> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingArtifact {
                path: path.to_path_buf(),
                producer,
            })
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Model file: parameters plus the inputs that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub config_hash: String,
    pub seed: u64,
    pub split: Split,
    pub model: Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyArtifact {
    pub config_hash: String,
    pub seed: u64,
    #[serde(flatten)]
    pub policy: PolicyFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredRecord {
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    pub skipped: bool,
}

/// persona id → question id → prediction.
pub type PredFile = BTreeMap<String, BTreeMap<String, PredRecord>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomsProvenanceFile {
    pub kind: String,
    pub personas: BTreeMap<String, AtomProvenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub method: Method,
    pub per_seed: Vec<SkipPolicy>,
}

/// Main-table results recomputed from persisted predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub run_id: String,
    pub config_hash: String,
    pub atom_provenance: String,
    pub seeds: Vec<u64>,
    pub n_clusters: usize,
    pub answer_only: Vec<MetricReport>,
    pub selective: Vec<MetricReport>,
    pub policies: Vec<PolicySummary>,
    pub reachability: ReachabilityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub template_version: String,
    #[serde(flatten)]
    pub evaluation: Evaluation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dgp_grid: Option<DgpGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_curve: Option<TrainCurve>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer: Option<TransferReport>,
}

/// Cohort-ordered (id, difficulty) pairs and the split of each persona.
type PersonaIndex = (Vec<(String, DifficultyClass)>, BTreeMap<String, Split>);

/// A run rooted at one output directory.
pub struct Workspace {
    pub root: PathBuf,
    pub config: RunConfig,
    pub setup: Setup,
    hash: String,
}

impl Workspace {
    pub fn open(root: impl Into<PathBuf>, config: RunConfig) -> Result<Self> {
        config.validate()?;
        let setup = Setup::default();
        setup.sqmap.validate(&setup.registry)?;
        let root = root.into();
        let hash = config.hash();
        let ws = Workspace {
            root,
            config,
            setup,
            hash,
        };
        write_json(&ws.root.join("config.json"), &ws.config)?;
        Ok(ws)
    }

    pub fn run_id(&self) -> String {
        self.config.run_id()
    }

    pub fn results_dir(&self) -> PathBuf {
        self.root.join("results").join(self.run_id())
    }

    fn cohort_dir(&self, seed: u64) -> PathBuf {
        self.root.join("cohort").join(seed.to_string())
    }

    fn stamp_path(&self, step: Step, unit: &str) -> PathBuf {
        self.root.join("stamps").join(step.as_str()).join(format!("{unit}.txt"))
    }

    /// Digest of everything a unit of `step` depends on.
    fn unit_digest(&self, step: Step, seed: Option<u64>, method: Option<Method>) -> String {
        let dgp = seed.map(|s| serde_json::to_string(&self.config.seed_config(s)).expect("config serializes"));
        let atoms = serde_json::to_string(&self.config.atoms).expect("config serializes");
        let m = method.map(|m| m.as_str().to_string()).unwrap_or_default();
        match step {
            Step::Generate | Step::Label | Step::Render => digest(&[step.as_str(), dgp.as_deref().unwrap_or("")]),
            Step::Readout => digest(&[step.as_str(), dgp.as_deref().unwrap_or(""), &atoms]),
            Step::Fit | Step::Calibrate => digest(&[step.as_str(), dgp.as_deref().unwrap_or(""), &atoms, &m]),
            _ => digest(&[step.as_str(), &self.hash, &m]),
        }
    }

    fn up_to_date(&self, step: Step, unit: &str, d: &str) -> bool {
        fs::read_to_string(self.stamp_path(step, unit)).is_ok_and(|s| s.trim() == d)
    }

    fn stamp(&self, step: Step, unit: &str, d: &str) -> Result<()> {
        write_if_changed(&self.stamp_path(step, unit), format!("{d}\n").as_bytes()).map(|_| ())
    }

    /// Errors unless `step` has completed for `unit` under the current config.
    fn require(&self, step: Step, unit: &str, seed: Option<u64>, method: Option<Method>) -> Result<()> {
        let d = self.unit_digest(step, seed, method);
        if self.up_to_date(step, unit, &d) {
            Ok(())
        } else {
            Err(Error::MissingArtifact {
                path: self.stamp_path(step, unit),
                producer: step.producer(),
            })
        }
    }

    fn record_step(&self, step: Step) -> Result<()> {
        let path = self.root.join("manifest.json");
        let mut steps: Vec<Step> = match fs::read_to_string(&path) {
            Ok(text) => match serde_json::from_str::<RunManifest>(&text) {
                Ok(m) if m.config_hash == self.hash => m.steps,
                _ => Vec::new(),
            },
            Err(_) => Vec::new(),
        };
        if !steps.contains(&step) {
            steps.push(step);
            steps.sort();
        }
        let artifacts = [
            "config.json",
            "cohort",
            "labels",
            "atoms",
            "memory",
            "models",
            "policies",
            "preds",
            "results",
        ]
        .iter()
        .filter(|a| self.root.join(a).exists())
        .map(|a| a.to_string())
        .collect();
        let manifest = RunManifest {
            run_id: self.run_id(),
            config_hash: self.hash.clone(),
            seeds: self.config.seeds.clone(),
            steps,
            artifacts,
            tool_version: TOOL_VERSION.to_string(),
        };
        write_json(&path, &manifest)?;
        if self.results_dir().exists() {
            write_json(&self.results_dir().join("manifest.json"), &manifest)?;
        }
        Ok(())
    }

    /// Runs `f` for every seed whose stamp is stale, in parallel.
    fn per_seed(&self, step: Step, f: impl Fn(u64) -> Result<()> + Sync) -> Result<()> {
        self.config
            .seeds
            .par_iter()
            .map(|&seed| {
                let unit = seed.to_string();
                let d = self.unit_digest(step, Some(seed), None);
                if self.up_to_date(step, &unit, &d) {
                    log::info!("{} seed {seed}: up to date", step.as_str());
                    return Ok(());
                }
                f(seed)?;
                self.stamp(step, &unit, &d)
            })
            .collect::<Result<Vec<()>>>()?;
        self.record_step(step)
    }

    fn per_seed_method(&self, step: Step, f: impl Fn(u64, Method) -> Result<()> + Sync) -> Result<()> {
        let jobs: Vec<(u64, Method)> = self
            .config
            .seeds
            .iter()
            .flat_map(|&s| self.config.methods.iter().map(move |&m| (s, m)))
            .collect();
        jobs.par_iter()
            .map(|&(seed, method)| {
                let unit = format!("{seed}-{}", method.as_str());
                let d = self.unit_digest(step, Some(seed), Some(method));
                if self.up_to_date(step, &unit, &d) {
                    log::info!("{} seed {seed} {method}: up to date", step.as_str());
                    return Ok(());
                }
                f(seed, method)?;
                self.stamp(step, &unit, &d)
            })
            .collect::<Result<Vec<()>>>()?;
        self.record_step(step)
    }

    // -- cohort -----------------------------------------------------------

    pub fn write_cohort(&self, c: &Cohort) -> Result<()> {
        let dir = self.cohort_dir(c.config.seed);
        write_json(&dir.join("config.json"), &c.config)?;
        let traits: Vec<&PersonaTraits> = c.personas.iter().map(|p| &p.traits).collect();
        write_json(&dir.join("personas.json"), &traits)?;
        write_json(&dir.join("splits.json"), &c.splits)?;
        write_json(&dir.join("provenance.json"), &c.provenance)?;
        c.personas.par_iter().try_for_each(|p| {
            let id = &p.traits.persona_id;
            write_json(&dir.join("events").join(format!("{id}.json")), &p.events)?;
            for (s, stream) in &p.streams {
                write_json(&dir.join("sources").join(id).join(format!("{}.json", s.as_str())), stream)?;
            }
            Ok(())
        })
    }

    pub fn read_cohort(&self, seed: u64) -> Result<Cohort> {
        let dir = self.cohort_dir(seed);
        let gen = Step::Generate.producer();
        let config: DgpConfig = read_json(&dir.join("config.json"), gen)?;
        let traits: Vec<PersonaTraits> = read_json(&dir.join("personas.json"), gen)?;
        let splits: Vec<SplitAssignment> = read_json(&dir.join("splits.json"), gen)?;
        let provenance: Provenance = read_json(&dir.join("provenance.json"), gen)?;
        let personas = traits
            .into_par_iter()
            .map(|t| {
                let id = t.persona_id.clone();
                let events: LatentEventTable = read_json(&dir.join("events").join(format!("{id}.json")), gen)?;
                let streams = SourceId::ALL
                    .into_iter()
                    .map(|s| {
                        let path = dir.join("sources").join(&id).join(format!("{}.json", s.as_str()));
                        Ok((s, read_json::<SourceStream>(&path, gen)?))
                    })
                    .collect::<Result<_>>()?;
                Ok(PersonaData {
                    traits: t,
                    events,
                    streams,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Cohort {
            config,
            personas,
            splits,
            provenance,
        })
    }

    fn persona_index(&self, seed: u64) -> Result<PersonaIndex> {
        let dir = self.cohort_dir(seed);
        let traits: Vec<PersonaTraits> = read_json(&dir.join("personas.json"), Step::Generate.producer())?;
        let splits: Vec<SplitAssignment> = read_json(&dir.join("splits.json"), Step::Generate.producer())?;
        Ok((
            traits.into_iter().map(|t| (t.persona_id, t.difficulty)).collect(),
            splits.into_iter().map(|s| (s.persona_id, s.split)).collect(),
        ))
    }

    // -- steps --------------------------------------------------------------

    pub fn generate(&self) -> Result<()> {
        self.per_seed(Step::Generate, |seed| {
            let c = generate_cohort(&self.config.seed_config(seed))?;
            self.write_cohort(&c)
        })
    }

    pub fn label(&self) -> Result<()> {
        self.per_seed(Step::Label, |seed| {
            self.require(Step::Generate, &seed.to_string(), Some(seed), None)?;
            let c = self.read_cohort(seed)?;
            let labels = compute_all_labels(&c, &self.setup.registry)?;
            let dir = self.root.join("labels").join(seed.to_string());
            labels
                .par_iter()
                .try_for_each(|(pid, m)| write_json(&dir.join(format!("{pid}.json")), m).map(|_| ()))
        })
    }

    pub fn readout(&self) -> Result<()> {
        self.per_seed(Step::Readout, |seed| {
            self.require(Step::Generate, &seed.to_string(), Some(seed), None)?;
            let tables = self.produce_atoms(seed)?;
            let dir = self.root.join("atoms").join(seed.to_string());
            tables.par_iter().try_for_each(|t| {
                write_if_changed(
                    &dir.join(format!("{}.json", t.persona_id)),
                    export_atom_bundle(t, &self.setup.registry).as_bytes(),
                )
                .map(|_| ())
            })?;
            let kind = tables
                .first()
                .map(|t| t.provenance.label())
                .unwrap_or("direct_readout")
                .to_string();
            let personas = tables.iter().map(|t| (t.persona_id.clone(), t.provenance.clone())).collect();
            write_json(&dir.join("provenance.json"), &AtomsProvenanceFile { kind, personas }).map(|_| ())
        })
    }

    fn produce_atoms(&self, seed: u64) -> Result<Vec<AtomTable>> {
        let reg = &self.setup.registry;
        let sqmap = &self.setup.sqmap;
        match &self.config.atoms {
            AtomSource::Readout | AtomSource::Noisy { .. } => {
                let c = self.read_cohort(seed)?;
                c.personas
                    .par_iter()
                    .map(|p| {
                        let t = readout_atoms(&p.traits.persona_id, &p.streams, reg, sqmap);
                        match self.config.atoms {
                            AtomSource::Noisy { epsilon } => inject_flip_noise(&t, reg, epsilon, seed),
                            _ => Ok(t),
                        }
                    })
                    .collect()
            }
            AtomSource::Replay { dir } => {
                let (personas, _) = self.persona_index(seed)?;
                let base = dir.join(seed.to_string());
                personas
                    .par_iter()
                    .map(|(pid, _)| {
                        let path = base.join(format!("{pid}.json"));
                        if !path.exists() {
                            return Err(Error::Bundle {
                                path: path.display().to_string(),
                                issues: vec![format!("no bundle for persona {pid}")],
                            });
                        }
                        import_atom_bundle(&path, reg, sqmap)
                    })
                    .collect()
            }
        }
    }

    pub fn render(&self) -> Result<()> {
        self.per_seed(Step::Render, |seed| {
            self.require(Step::Generate, &seed.to_string(), Some(seed), None)?;
            let c = self.read_cohort(seed)?;
            let dir = self.root.join("memory").join(seed.to_string());
            c.personas.par_iter().try_for_each(|p| {
                let id = &p.traits.persona_id;
                let md = render(id, &p.streams).to_markdown();
                write_if_changed(&dir.join(format!("{id}.md")), md.as_bytes()).map(|_| ())
            })
        })
    }

    pub fn load_labels(&self, seed: u64, personas: &[(String, DifficultyClass)]) -> Result<LabelMap> {
        let dir = self.root.join("labels").join(seed.to_string());
        personas
            .iter()
            .map(|(pid, _)| {
                let m: BTreeMap<String, GtLabel> =
                    read_json(&dir.join(format!("{pid}.json")), Step::Label.producer())?;
                Ok((pid.clone(), m))
            })
            .collect()
    }

    pub fn load_atoms(&self, seed: u64, personas: &[(String, DifficultyClass)]) -> Result<Vec<AtomTable>> {
        let dir = self.root.join("atoms").join(seed.to_string());
        let prov: AtomsProvenanceFile = read_json(&dir.join("provenance.json"), Step::Readout.producer())?;
        personas
            .iter()
            .map(|(pid, _)| {
                let path = dir.join(format!("{pid}.json"));
                let text = fs::read_to_string(&path).map_err(|_| Error::MissingArtifact {
                    path: path.clone(),
                    producer: Step::Readout.producer(),
                })?;
                let mut t = parse_atom_bundle(&text, pid, pid, &self.setup.registry, &self.setup.sqmap).map_err(
                    |issues| Error::Bundle {
                        path: path.display().to_string(),
                        issues,
                    },
                )?;
                t.provenance = prov
                    .personas
                    .get(pid)
                    .cloned()
                    .unwrap_or(AtomProvenance::DirectReadout);
                Ok(t)
            })
            .collect()
    }

    pub fn atom_provenance(&self, seed: u64) -> Result<String> {
        let path = self.root.join("atoms").join(seed.to_string()).join("provenance.json");
        Ok(read_json::<AtomsProvenanceFile>(&path, Step::Readout.producer())?.kind)
    }

    pub fn load_seed(&self, seed: u64) -> Result<SeedData> {
        let unit = seed.to_string();
        self.require(Step::Label, &unit, Some(seed), None)?;
        self.require(Step::Readout, &unit, Some(seed), None)?;
        let (personas, splits) = self.persona_index(seed)?;
        let labels = self.load_labels(seed, &personas)?;
        let tables = self.load_atoms(seed, &personas)?;
        SeedData::assemble(seed, &personas, &splits, labels, tables, &self.setup.registry)
    }

    fn model_path(&self, seed: u64, m: Method) -> PathBuf {
        self.root
            .join("models")
            .join(seed.to_string())
            .join(format!("{}.json", m.as_str()))
    }

    fn policy_path(&self, seed: u64, m: Method) -> PathBuf {
        self.root
            .join("policies")
            .join(seed.to_string())
            .join(format!("{}.json", m.as_str()))
    }

    fn preds_path(&self, seed: u64, m: Method) -> PathBuf {
        self.root
            .join("preds")
            .join(seed.to_string())
            .join(format!("{}.json", m.as_str()))
    }

    pub fn load_model(&self, seed: u64, m: Method) -> Result<Model> {
        self.require(Step::Fit, &format!("{seed}-{}", m.as_str()), Some(seed), Some(m))?;
        Ok(read_json::<ModelFile>(&self.model_path(seed, m), Step::Fit.producer())?.model)
    }

    pub fn load_policy(&self, seed: u64, m: Method) -> Result<PolicyFile> {
        self.require(Step::Calibrate, &format!("{seed}-{}", m.as_str()), Some(seed), Some(m))?;
        Ok(read_json::<PolicyArtifact>(&self.policy_path(seed, m), Step::Calibrate.producer())?.policy)
    }

    pub fn fit(&self) -> Result<()> {
        let data = self.load_all_seeds()?;
        self.per_seed_method(Step::Fit, |seed, method| {
            let d = &data[&seed];
            let fitted = fit_method(method, d, &self.setup)?;
            let file = ModelFile {
                config_hash: self.unit_digest(Step::Fit, Some(seed), Some(method)),
                seed,
                split: Split::Train,
                model: fitted.model,
            };
            write_json(&self.model_path(seed, method), &file).map(|_| ())
        })
    }

    pub fn calibrate(&self) -> Result<()> {
        let data = self.load_all_seeds()?;
        self.per_seed_method(Step::Calibrate, |seed, method| {
            let model = self.load_model(seed, method)?;
            let policy = calibrate_default(&model, &data[&seed], &self.setup)?;
            let file = PolicyArtifact {
                config_hash: self.unit_digest(Step::Calibrate, Some(seed), Some(method)),
                seed,
                policy,
            };
            write_json(&self.policy_path(seed, method), &file).map(|_| ())
        })
    }

    fn load_all_seeds(&self) -> Result<BTreeMap<u64, SeedData>> {
        self.config
            .seeds
            .par_iter()
            .map(|&s| Ok((s, self.load_seed(s)?)))
            .collect()
    }

    fn pred_file(&self, method: Method, predictions: &[Vec<Prediction>], decisions: &[Vec<Decision>], ids: &[String]) -> PredFile {
        let reg = &self.setup.registry;
        ids.iter()
            .zip(predictions.iter().zip(decisions))
            .map(|(pid, (preds, decs))| {
                let row = preds
                    .iter()
                    .zip(decs)
                    .enumerate()
                    .map(|(qi, (p, d))| {
                        let spec = reg.get(qi);
                        (
                            spec.id.clone(),
                            PredRecord {
                                answer: spec.label(d.answer as usize).to_string(),
                                posterior: method.has_posterior().then(|| p.posterior.clone()),
                                margin: p.margin,
                                skipped: d.skipped,
                            },
                        )
                    })
                    .collect();
                (pid.clone(), row)
            })
            .collect()
    }

    fn read_decisions(&self, seed: u64, m: Method, ids: &[String]) -> Result<Vec<Vec<Decision>>> {
        let file: PredFile = read_json(&self.preds_path(seed, m), Step::Evaluate.producer())?;
        let reg = &self.setup.registry;
        ids.iter()
            .map(|pid| {
                let row = file
                    .get(pid)
                    .ok_or_else(|| Error::Metric(format!("predictions for {m} seed {seed} lack persona {pid}")))?;
                reg.questions()
                    .iter()
                    .map(|spec| match row.get(&spec.id) {
                        Some(r) => Ok(Decision {
                            answer: spec.require_label(&r.answer)? as u8,
                            skipped: r.skipped,
                        }),
                        None => {
                            // a missing prediction counts as wrong
                            log::warn!("{m} seed {seed}: no prediction for {pid}/{}", spec.id);
                            Ok(Decision {
                                answer: u8::MAX,
                                skipped: false,
                            })
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Predicts the test split with every fitted model and policy, writes
    /// the prediction files, then scores them from disk.
    pub fn evaluate(&self) -> Result<()> {
        let data = self.load_all_seeds()?;
        self.per_seed_method(Step::Evaluate, |seed, method| {
            let d = &data[&seed];
            let fitted = crate::eval::Fitted {
                model: self.load_model(seed, method)?,
                policy: self.load_policy(seed, method)?,
            };
            let ev = evaluate(&fitted, &d.test, &self.setup)?;
            let ids: Vec<String> = d.test.tables.iter().map(|t| t.persona_id.clone()).collect();
            write_json(&self.preds_path(seed, method), &self.pred_file(method, &ev.predictions, &ev.decisions, &ids))
                .map(|_| ())
        })?;
        let ev = self.evaluation(&data)?;
        write_json(&self.results_dir().join("evaluation.json"), &ev)?;
        self.record_step(Step::Evaluate)
    }

    fn evaluation(&self, data: &BTreeMap<u64, SeedData>) -> Result<Evaluation> {
        let seeds = &self.config.seeds;
        let sets: Vec<_> = seeds.iter().map(|s| &data[s].test).collect();
        let ids: Vec<Vec<String>> = sets
            .iter()
            .map(|s| s.tables.iter().map(|t| t.persona_id.clone()).collect())
            .collect();
        let methods = &self.config.methods;
        let decisions: Vec<Vec<Vec<Vec<Decision>>>> = methods
            .iter()
            .map(|&m| {
                seeds
                    .iter()
                    .zip(&ids)
                    .map(|(&s, ids)| self.read_decisions(s, m, ids))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let reports = |selective: bool| -> Result<Vec<MetricReport>> {
            methods
                .par_iter()
                .zip(&decisions)
                .map(|(&m, per_seed)| {
                    let refs: Vec<&[Vec<Decision>]> = per_seed.iter().map(|d| d.as_slice()).collect();
                    metric_report(m, &sets, &refs, &self.setup.registry, selective, &self.config.bootstrap)
                })
                .collect()
        };
        let answer_only = reports(false)?;
        let selective = reports(true)?;
        let slices: Vec<(Method, Vec<&[Vec<Decision>]>)> = methods
            .iter()
            .zip(&decisions)
            .filter(|(m, _)| !matches!(m, Method::Random | Method::MajorityClass))
            .map(|(&m, per_seed)| (m, per_seed.iter().map(|d| d.as_slice()).collect()))
            .collect();
        let policies = methods
            .iter()
            .map(|&m| {
                Ok(PolicySummary {
                    method: m,
                    per_seed: seeds
                        .iter()
                        .map(|&s| Ok(self.load_policy(s, m)?.policy))
                        .collect::<Result<_>>()?,
                })
            })
            .collect::<Result<_>>()?;
        let mut kinds: Vec<String> = seeds.iter().map(|&s| self.atom_provenance(s)).collect::<Result<_>>()?;
        kinds.dedup();
        Ok(Evaluation {
            run_id: self.run_id(),
            config_hash: self.hash.clone(),
            atom_provenance: kinds.join("+"),
            seeds: seeds.clone(),
            n_clusters: sets.iter().map(|s| s.len()).sum(),
            answer_only,
            selective,
            policies,
            reachability: reachability_report(&sets, &slices),
        })
    }

    fn ablation_path(&self, a: Ablation) -> PathBuf {
        self.results_dir().join("ablations").join(format!("{}.json", a.as_str()))
    }

    /// Default-knob models for `methods` on every seed: persisted models
    /// when present, otherwise fit on the spot.
    fn default_models(&self, data: &BTreeMap<u64, SeedData>, methods: &[Method]) -> Result<Vec<Vec<Model>>> {
        self.config
            .seeds
            .par_iter()
            .map(|&s| {
                methods
                    .iter()
                    .map(|&m| match self.load_model(s, m) {
                        Ok(model) => Ok(model),
                        Err(Error::MissingArtifact { .. }) => Ok(fit_method(m, &data[&s], &self.setup)?.model),
                        Err(e) => Err(e),
                    })
                    .collect()
            })
            .collect()
    }

    pub fn ablate(&self, which: &[Ablation]) -> Result<()> {
        let data = self.load_all_seeds()?;
        let seeds = &self.config.seeds;
        let ordered: Vec<SeedData> = seeds.iter().map(|s| data[s].clone()).collect();
        let abl = &self.config.ablations;
        let mut variant_runs = None;
        for &a in which {
            let unit = a.as_str();
            let d = self.unit_digest(Step::Ablate, None, None) + unit;
            if self.up_to_date(Step::Ablate, unit, &d) && self.ablation_path(a).exists() {
                log::info!("ablate {unit}: up to date");
                continue;
            }
            log::info!("ablate {unit}");
            match a {
                Ablation::Noise => {
                    let models = self.default_models(&data, &self.config.methods)?;
                    let refs: Vec<Vec<&Model>> = models.iter().map(|r| r.iter().collect()).collect();
                    let g = run_noise_grid(&ordered, &refs, &abl.noise_epsilons, &self.setup)?;
                    write_json(&self.ablation_path(a), &g)?;
                }
                Ablation::TrainCurve => {
                    let c = run_training_curve(&ordered, &self.config.methods, &abl.train_sizes, &self.setup)?;
                    write_json(&self.ablation_path(a), &c)?;
                }
                Ablation::DgpGrid | Ablation::Transfer => {
                    if variant_runs.is_none() {
                        let models = self.default_models(&data, &GRID_METHODS)?;
                        let refs: Vec<Vec<&Model>> = models.iter().map(|r| r.iter().collect()).collect();
                        variant_runs = Some(run_variants(
                            &self.config.dgp,
                            seeds,
                            &grid_variants(&abl.grid_scales),
                            &GRID_METHODS,
                            &refs,
                            &self.setup,
                        )?);
                    }
                    let runs = variant_runs.as_ref().expect("just computed");
                    if a == Ablation::DgpGrid {
                        write_json(&self.ablation_path(a), &dgp_grid(runs))?;
                    } else {
                        write_json(&self.ablation_path(a), &transfer_report(runs, Method::Dsnbf)?)?;
                    }
                }
            }
            self.stamp(Step::Ablate, unit, &d)?;
        }
        self.record_step(Step::Ablate)
    }

    /// Assembles report.json and report.md from the evaluation and any
    /// ablation results present.
    pub fn report(&self) -> Result<RunReport> {
        let evaluation: Evaluation = read_json(&self.results_dir().join("evaluation.json"), Step::Evaluate.producer())?;
        if evaluation.config_hash != self.hash {
            return Err(Error::MissingArtifact {
                path: self.results_dir().join("evaluation.json"),
                producer: Step::Evaluate.producer(),
            });
        }
        let opt = |a: Ablation| -> Option<PathBuf> {
            let p = self.ablation_path(a);
            p.exists().then_some(p)
        };
        let load = |a: Ablation| opt(a).map(|p| fs::read_to_string(&p).map_err(|e| Error::io(&p, e)));
        let noise = load(Ablation::Noise).transpose()?.map(|t| serde_json::from_str(&t)).transpose()?;
        let grid = load(Ablation::DgpGrid).transpose()?.map(|t| serde_json::from_str(&t)).transpose()?;
        let curve = load(Ablation::TrainCurve).transpose()?.map(|t| serde_json::from_str(&t)).transpose()?;
        let transfer = load(Ablation::Transfer).transpose()?.map(|t| serde_json::from_str(&t)).transpose()?;
        let report = RunReport {
            tool_version: TOOL_VERSION.to_string(),
            template_version: TEMPLATE_VERSION.to_string(),
            evaluation,
            noise,
            dgp_grid: grid,
            train_curve: curve,
            transfer,
        };
        write_json(&self.results_dir().join("report.json"), &report)?;
        write_if_changed(&self.results_dir().join("report.md"), render_markdown(&report).as_bytes())?;
        self.record_step(Step::Report)?;
        Ok(report)
    }

    /// Every step in order, or just `only`.
    pub fn run(&self, only: Option<Step>) -> Result<()> {
        let steps: Vec<Step> = match only {
            Some(s) => vec![s],
            None => Step::ALL.to_vec(),
        };
        for s in steps {
            log::info!("step {}", s.as_str());
            match s {
                Step::Generate => self.generate()?,
                Step::Label => self.label()?,
                Step::Readout => self.readout()?,
                Step::Render => self.render()?,
                Step::Fit => self.fit()?,
                Step::Calibrate => self.calibrate()?,
                Step::Evaluate => self.evaluate()?,
                Step::Ablate => self.ablate(&Ablation::ALL)?,
                Step::Report => {
                    self.report()?;
                }
            }
        }
        Ok(())
    }
}

pub fn render_markdown(r: &RunReport) -> String {
    let e = &r.evaluation;
    let mut s = String::new();
    let _ = writeln!(s, "# Run {}\n", e.run_id);
    let _ = writeln!(
        s,
        "Config hash `{}`; seeds {:?}; {} seed-persona clusters; atoms: {}; tool {}, templates {}.\n",
        &e.config_hash[..12],
        e.seeds,
        e.n_clusters,
        e.atom_provenance,
        r.tool_version,
        r.template_version
    );
    s.push_str(&headline_table("Answer-only accuracy", &e.answer_only, false));
    s.push('\n');
    s.push_str(&headline_table("Selective QA", &e.selective, true));
    s.push('\n');
    s.push_str(&breakdown_table(&e.answer_only));
    s.push('\n');
    s.push_str(&reachability_table(&e.reachability));
    for part in [
        r.noise.as_ref().map(ablation::noise_table),
        r.train_curve.as_ref().map(ablation::train_curve_table),
        r.dgp_grid.as_ref().map(ablation::dgp_grid_table),
        r.transfer.as_ref().map(ablation::transfer_table),
    ]
    .into_iter()
    .flatten()
    {
        s.push('\n');
        s.push_str(&part);
    }
    s
}
