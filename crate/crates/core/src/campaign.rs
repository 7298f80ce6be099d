//! Annotation campaigns: rater assignment, submission validation, a durable
//! event log and export back to corpus TSV.
//!
//! Raters only ever see system aliases. The alias table lives in the project
//! file and is joined back to system names at export time.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    self, check_annotations, ErrorAnnotation, Rule, ScalarRating, Scale, SegmentKey, SegmentRating, SegmentText,
    Violation,
};
use crate::taxonomy::{ErrorCategory, Severity};

pub const PROJECT_FILE: &str = "project.json";
pub const EVENT_LOG_FILE: &str = "events.jsonl";

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("rater pool of {pool} is smaller than {needed} raters per document")]
    PoolTooSmall { pool: usize, needed: usize },
    #[error("project has no documents")]
    NoDocuments,
    #[error("invalid project: {0}")]
    InvalidProject(String),
    #[error("rater {rater} is not assigned to {what}")]
    NotAssigned { rater: String, what: String },
    #[error("submission rejected: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    ValidationFailed(Vec<Violation>),
    #[error("project is closed")]
    ProjectClosed,
    #[error("project has no accepted submissions")]
    EmptyProject,
    #[error("event log line {line}: {message}")]
    LogCorrupt { line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectMode {
    #[default]
    Mqm,
    Sqm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentSpec {
    pub doc_id: String,
    pub n_segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub id: String,
    pub systems: Vec<String>,
    pub documents: Vec<DocumentSpec>,
    pub rater_pool: Vec<String>,
    pub raters_per_doc: usize,
    pub mode: ProjectMode,
    pub seed: u64,
    /// Allowed max/min spread of per-rater segment loads, e.g. 0.1.
    /// Reported, not enforced.
    pub balance_tolerance: f64,
}

impl Project {
    pub fn new(
        id: impl Into<String>,
        systems: Vec<String>,
        documents: Vec<DocumentSpec>,
        rater_pool: Vec<String>,
    ) -> Self {
        Project {
            id: id.into(),
            systems,
            documents,
            rater_pool,
            raters_per_doc: 3,
            mode: ProjectMode::Mqm,
            seed: crate::DEFAULT_SEED,
            balance_tolerance: 0.1,
        }
    }

    fn validate(&self) -> Result<(), CampaignError> {
        if self.documents.is_empty() {
            return Err(CampaignError::NoDocuments);
        }
        if self.raters_per_doc == 0 || self.rater_pool.len() < self.raters_per_doc {
            return Err(CampaignError::PoolTooSmall {
                pool: self.rater_pool.len(),
                needed: self.raters_per_doc.max(1),
            });
        }
        let unique = |v: &[String]| v.iter().collect::<BTreeSet<_>>().len() == v.len();
        if self.systems.is_empty() || !unique(&self.systems) {
            return Err(CampaignError::InvalidProject("systems must be non-empty and unique".into()));
        }
        if !unique(&self.rater_pool) {
            return Err(CampaignError::InvalidProject("rater ids must be unique".into()));
        }
        let docs: Vec<String> = self.documents.iter().map(|d| d.doc_id.clone()).collect();
        if !unique(&docs) {
            return Err(CampaignError::InvalidProject("document ids must be unique".into()));
        }
        Ok(())
    }
}

/// All k-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        out.push(c.clone());
        let Some(i) = (0..k).rev().find(|&i| c[i] < n - k + i) else {
            return out;
        };
        c[i] += 1;
        for j in i + 1..k {
            c[j] = c[j - 1] + 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskRef {
    pub alias: String,
    pub doc_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub doc_id: String,
    pub raters: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentPlan {
    pub assignments: Vec<Assignment>,
    /// Per rater: (alias, document) pairs in presentation order.
    pub queues: BTreeMap<String, Vec<TaskRef>>,
    /// Segments each rater annotates, across all systems.
    pub loads: BTreeMap<String, usize>,
}

impl AssignmentPlan {
    /// max / min per-rater load.
    pub fn balance_ratio(&self) -> f64 {
        let max = self.loads.values().copied().max().unwrap_or(0);
        let min = self.loads.values().copied().min().unwrap_or(0);
        if min == 0 {
            f64::INFINITY
        } else {
            max as f64 / min as f64
        }
    }

    pub fn is_balanced(&self, tolerance: f64) -> bool {
        self.balance_ratio() <= 1.0 + tolerance
    }

    pub fn raters_of(&self, doc_id: &str) -> Option<&[String]> {
        self.assignments
            .iter()
            .find(|a| a.doc_id == doc_id)
            .map(|a| a.raters.as_slice())
    }

    pub fn distinct_subsets(&self) -> usize {
        self.assignments
            .iter()
            .map(|a| a.raters.clone())
            .collect::<BTreeSet<_>>()
            .len()
    }
}

/// Alias shown to raters for each system, shuffled from the project seed.
pub fn system_aliases(project: &Project) -> BTreeMap<String, String> {
    let mut order: Vec<&String> = project.systems.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(project.seed));
    let width = project.systems.len().to_string().len().max(2);
    order
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), format!("sys-{:0width$}", i + 1)))
        .collect()
}

fn loads_of(subsets: &[usize], combos: &[Vec<usize>], sizes: &[usize], pool: usize) -> Vec<usize> {
    let mut loads = vec![0; pool];
    for (doc, &c) in subsets.iter().enumerate() {
        for &r in &combos[c] {
            loads[r] += sizes[doc];
        }
    }
    loads
}

fn spread(loads: &[usize]) -> u128 {
    loads.iter().map(|&l| (l as u128) * (l as u128)).sum()
}

/// Assigns documents to rater subsets round-robin over all k-combinations of
/// the pool, then swaps subsets between documents while that reduces the sum
/// of squared per-rater segment loads. Swaps keep the number of documents per
/// subset. Each rater's (system, document) tasks are shuffled.
///
/// The result is best effort: check [`AssignmentPlan::balance_ratio`] against
/// the project's tolerance with [`AssignmentPlan::is_balanced`].
pub fn make_assignments(project: &Project) -> Result<AssignmentPlan, CampaignError> {
    project.validate()?;
    let pool = project.rater_pool.len();
    let combos = combinations(pool, project.raters_per_doc);
    let n_systems = project.systems.len();
    let sizes: Vec<usize> = project.documents.iter().map(|d| d.n_segments * n_systems).collect();
    let mut subsets: Vec<usize> = (0..sizes.len()).map(|i| i % combos.len()).collect();

    let mut loads = loads_of(&subsets, &combos, &sizes, pool);
    loop {
        let current = spread(&loads);
        let mut best: Option<(u128, usize, usize)> = None;
        for a in 0..sizes.len() {
            for b in (a + 1)..sizes.len() {
                if subsets[a] == subsets[b] || sizes[a] == sizes[b] {
                    continue;
                }
                let mut trial = loads.clone();
                for &r in &combos[subsets[a]] {
                    trial[r] = trial[r] - sizes[a] + sizes[b];
                }
                for &r in &combos[subsets[b]] {
                    trial[r] = trial[r] - sizes[b] + sizes[a];
                }
                let s = spread(&trial);
                if s < current && best.is_none_or(|(bs, _, _)| s < bs) {
                    best = Some((s, a, b));
                }
            }
        }
        let Some((_, a, b)) = best else { break };
        subsets.swap(a, b);
        loads = loads_of(&subsets, &combos, &sizes, pool);
    }

    let aliases = system_aliases(project);
    let mut queues: BTreeMap<String, Vec<TaskRef>> = BTreeMap::new();
    let assignments: Vec<Assignment> = project
        .documents
        .iter()
        .zip(&subsets)
        .map(|(doc, &c)| Assignment {
            doc_id: doc.doc_id.clone(),
            raters: combos[c].iter().map(|&r| project.rater_pool[r].clone()).collect(),
        })
        .collect();
    for (r_idx, rater) in project.rater_pool.iter().enumerate() {
        let mut tasks: Vec<TaskRef> = assignments
            .iter()
            .filter(|a| a.raters.contains(rater))
            .flat_map(|a| {
                project.systems.iter().map(|s| TaskRef {
                    alias: aliases[s].clone(),
                    doc_id: a.doc_id.clone(),
                })
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(project.seed);
        rng.set_stream(r_idx as u64 + 1);
        tasks.shuffle(&mut rng);
        queues.insert(rater.clone(), tasks);
    }
    let loads = project
        .rater_pool
        .iter()
        .cloned()
        .zip(loads)
        .collect();
    Ok(AssignmentPlan {
        assignments,
        queues,
        loads,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentRef {
    pub alias: String,
    pub doc_id: String,
    pub seg_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Payload {
    Mqm { annotations: Vec<ErrorAnnotation> },
    Sqm { value: f64 },
}

/// What a rater sends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub rater_id: String,
    pub segment: SegmentRef,
    pub payload: Payload,
}

/// Decodes a JSON submission. Unknown categories and severities are reported
/// as rule violations rather than as a generic decoding error.
pub fn parse_submission(body: &[u8]) -> Result<Submission, Vec<Violation>> {
    let err = match serde_json::from_slice::<Submission>(body) {
        Ok(s) => return Ok(s),
        Err(e) => e,
    };
    let mut out = Vec::new();
    let value: serde_json::Value = serde_json::from_slice(body).unwrap_or_default();
    let annotations = value
        .pointer("/payload/annotations")
        .and_then(serde_json::Value::as_array)
        .map(Vec::as_slice)
        .unwrap_or_default();
    for (i, a) in annotations.iter().enumerate() {
        let field = |name: &str| a.get(name).and_then(serde_json::Value::as_str).unwrap_or_default();
        let category = field("category");
        if category.parse::<ErrorCategory>().is_err() {
            out.push(Violation {
                rule: Rule::UnknownCategory,
                location: format!("annotation {i}"),
                detail: format!("{category:?}"),
            });
        }
        let severity = field("severity");
        if serde_json::from_value::<Severity>(serde_json::Value::String(severity.to_string())).is_err() {
            out.push(Violation {
                rule: Rule::UnknownSeverity,
                location: format!("annotation {i}"),
                detail: format!("{severity:?}"),
            });
        }
    }
    if out.is_empty() {
        out.push(Violation {
            rule: Rule::MalformedPayload,
            location: "body".into(),
            detail: err.to_string(),
        });
    }
    Err(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionEvent {
    pub seq: u64,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    pub rater_id: String,
    pub segment: SegmentRef,
    pub payload: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<u64>,
}

/// Append-only JSON-lines event log.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
}

impl EventLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        EventLog { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one event as a single line and syncs it to disk.
    pub fn append(&self, event: &SubmissionEvent) -> Result<(), CampaignError> {
        let mut line = serde_json::to_string(event)?;
        line.push('\n');
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        file.write_all(line.as_bytes())?;
        file.sync_data()?;
        Ok(())
    }

    /// Reads every event, checking that sequence numbers run 1, 2, 3, ...
    /// A final line without a newline is a torn write and is dropped.
    pub fn replay(&self) -> Result<Vec<SubmissionEvent>, CampaignError> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut reader = BufReader::new(file);
        let mut events = Vec::new();
        let mut line = String::new();
        let mut line_no = 0;
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                break;
            }
            line_no += 1;
            if !line.ends_with('\n') {
                break;
            }
            let event: SubmissionEvent = serde_json::from_str(line.trim_end()).map_err(|e| CampaignError::LogCorrupt {
                line: line_no,
                message: e.to_string(),
            })?;
            let expected = events.len() as u64 + 1;
            if event.seq != expected {
                return Err(CampaignError::LogCorrupt {
                    line: line_no,
                    message: format!("sequence number {} where {expected} was expected", event.seq),
                });
            }
            events.push(event);
        }
        Ok(events)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSegment {
    pub seg_index: usize,
    pub source: String,
    pub target: String,
    pub submitted: bool,
}

/// One aliased system's document as served to a rater.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub project_id: String,
    pub rater_id: String,
    pub mode: ProjectMode,
    pub alias: String,
    pub doc_id: String,
    pub segments: Vec<TaskSegment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub assigned: usize,
    pub completed: usize,
}

/// Project definition plus segment texts, as stored in `project.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectFile {
    pub project: Project,
    pub texts: Vec<(SegmentKey, SegmentText)>,
    #[serde(default)]
    pub closed: bool,
}

/// Authoritative campaign state: the project, its assignment plan and every
/// accepted event.
#[derive(Debug)]
pub struct Campaign {
    project: Project,
    plan: AssignmentPlan,
    aliases: BTreeMap<String, String>,
    texts: BTreeMap<SegmentKey, SegmentText>,
    events: Vec<SubmissionEvent>,
    latest: BTreeMap<(String, SegmentRef), usize>,
    closed: bool,
    dir: Option<PathBuf>,
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl Campaign {
    /// In-memory campaign. `texts` must cover every (system, document,
    /// segment) of the project.
    pub fn new(project: Project, texts: BTreeMap<SegmentKey, SegmentText>) -> Result<Self, CampaignError> {
        let plan = make_assignments(&project)?;
        for doc in &project.documents {
            for s in &project.systems {
                for i in 0..doc.n_segments {
                    let key = SegmentKey::new(s.clone(), doc.doc_id.clone(), i);
                    if !texts.contains_key(&key) {
                        return Err(CampaignError::InvalidProject(format!("no text for {key}")));
                    }
                }
            }
        }
        Ok(Campaign {
            aliases: system_aliases(&project),
            project,
            plan,
            texts,
            events: Vec::new(),
            latest: BTreeMap::new(),
            closed: false,
            dir: None,
        })
    }

    /// Creates a persistent campaign in `dir` (which must not already hold
    /// one).
    pub fn create(
        dir: impl AsRef<Path>,
        project: Project,
        texts: BTreeMap<SegmentKey, SegmentText>,
    ) -> Result<Self, CampaignError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        if dir.join(PROJECT_FILE).exists() {
            return Err(CampaignError::InvalidProject(format!(
                "{} already contains a project",
                dir.display()
            )));
        }
        let mut campaign = Self::new(project, texts)?;
        campaign.dir = Some(dir.to_path_buf());
        campaign.save_project()?;
        Ok(campaign)
    }

    /// Reopens a persistent campaign, replaying its event log.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, CampaignError> {
        let dir = dir.as_ref();
        let file: ProjectFile = serde_json::from_reader(BufReader::new(File::open(dir.join(PROJECT_FILE))?))?;
        let mut campaign = Self::new(file.project, file.texts.into_iter().collect())?;
        campaign.closed = file.closed;
        for event in EventLog::new(dir.join(EVENT_LOG_FILE)).replay()? {
            campaign.apply(event);
        }
        campaign.dir = Some(dir.to_path_buf());
        Ok(campaign)
    }

    fn save_project(&self) -> Result<(), CampaignError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let file = ProjectFile {
            project: self.project.clone(),
            texts: self.texts.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            closed: self.closed,
        };
        let tmp = dir.join(format!("{PROJECT_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(&file)?)?;
        fs::rename(tmp, dir.join(PROJECT_FILE))?;
        Ok(())
    }

    fn apply(&mut self, event: SubmissionEvent) {
        let key = (event.rater_id.clone(), event.segment.clone());
        self.latest.insert(key, self.events.len());
        self.events.push(event);
    }

    pub fn project(&self) -> &Project {
        &self.project
    }

    pub fn plan(&self) -> &AssignmentPlan {
        &self.plan
    }

    pub fn events(&self) -> &[SubmissionEvent] {
        &self.events
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn close(&mut self) -> Result<(), CampaignError> {
        self.closed = true;
        self.save_project()
    }

    fn system_of(&self, alias: &str) -> Option<&str> {
        self.aliases
            .iter()
            .find(|(_, a)| a.as_str() == alias)
            .map(|(s, _)| s.as_str())
    }

    fn doc_spec(&self, doc_id: &str) -> Option<&DocumentSpec> {
        self.project.documents.iter().find(|d| d.doc_id == doc_id)
    }

    fn is_assigned(&self, rater: &str, doc_id: &str) -> bool {
        self.plan.raters_of(doc_id).is_some_and(|r| r.iter().any(|x| x == rater))
    }

    /// Validates and records a submission with the current time.
    pub fn submit(&mut self, submission: Submission) -> Result<SubmissionEvent, CampaignError> {
        self.submit_at(submission, now_millis())
    }

    pub fn submit_at(&mut self, submission: Submission, timestamp: u64) -> Result<SubmissionEvent, CampaignError> {
        if self.closed {
            return Err(CampaignError::ProjectClosed);
        }
        let seg = &submission.segment;
        let not_assigned = || CampaignError::NotAssigned {
            rater: submission.rater_id.clone(),
            what: format!("{}/{}", seg.alias, seg.doc_id),
        };
        let system = self.system_of(&seg.alias).ok_or_else(not_assigned)?.to_string();
        if !self.is_assigned(&submission.rater_id, &seg.doc_id) {
            return Err(not_assigned());
        }
        let location = format!("{}/{}#{}", seg.alias, seg.doc_id, seg.seg_index);
        let violation = |rule: Rule, detail: String| Violation {
            rule,
            location: location.clone(),
            detail,
        };
        let key = SegmentKey::new(system, seg.doc_id.clone(), seg.seg_index);
        let Some(text) = self.texts.get(&key) else {
            return Err(CampaignError::ValidationFailed(vec![violation(
                Rule::DanglingReference,
                format!("segment {} does not exist", seg.seg_index),
            )]));
        };
        let violations: Vec<Violation> = match (&submission.payload, self.project.mode) {
            (Payload::Mqm { annotations }, ProjectMode::Mqm) => check_annotations(annotations, text)
                .into_iter()
                .map(|(rule, detail)| violation(rule, detail))
                .collect(),
            (Payload::Sqm { value }, ProjectMode::Sqm) => {
                if Scale::Sqm.contains(*value) {
                    Vec::new()
                } else {
                    vec![violation(Rule::ScalarOutOfRange, format!("{value} is not an integer from 0 to 6"))]
                }
            }
            (_, mode) => vec![violation(Rule::WrongPayloadKind, format!("project mode is {mode:?}"))],
        };
        if !violations.is_empty() {
            return Err(CampaignError::ValidationFailed(violations));
        }
        let supersedes = self
            .latest
            .get(&(submission.rater_id.clone(), seg.clone()))
            .map(|&i| self.events[i].seq);
        let event = SubmissionEvent {
            seq: self.events.len() as u64 + 1,
            timestamp,
            rater_id: submission.rater_id,
            segment: submission.segment,
            payload: submission.payload,
            supersedes,
        };
        if let Some(dir) = &self.dir {
            EventLog::new(dir.join(EVENT_LOG_FILE)).append(&event)?;
        }
        self.apply(event.clone());
        Ok(event)
    }

    fn task(&self, rater: &str, alias: &str, doc_id: &str) -> Option<Task> {
        let system = self.system_of(alias)?;
        let spec = self.doc_spec(doc_id)?;
        let segments = (0..spec.n_segments)
            .map(|i| {
                let text = &self.texts[&SegmentKey::new(system, doc_id, i)];
                let seg_ref = SegmentRef {
                    alias: alias.to_string(),
                    doc_id: doc_id.to_string(),
                    seg_index: i,
                };
                TaskSegment {
                    seg_index: i,
                    source: text.source.clone(),
                    target: text.target.clone(),
                    submitted: self.latest.contains_key(&(rater.to_string(), seg_ref)),
                }
            })
            .collect();
        Some(Task {
            project_id: self.project.id.clone(),
            rater_id: rater.to_string(),
            mode: self.project.mode,
            alias: alias.to_string(),
            doc_id: doc_id.to_string(),
            segments,
        })
    }

    /// The first task in the rater's queue with unsubmitted segments.
    pub fn next_task(&self, rater: &str) -> Result<Option<Task>, CampaignError> {
        let queue = self.plan.queues.get(rater).ok_or_else(|| CampaignError::NotAssigned {
            rater: rater.to_string(),
            what: format!("project {}", self.project.id),
        })?;
        Ok(queue
            .iter()
            .filter_map(|t| self.task(rater, &t.alias, &t.doc_id))
            .find(|t| t.segments.iter().any(|s| !s.submitted)))
    }

    /// An assigned document, for review or revision.
    pub fn document(&self, rater: &str, alias: &str, doc_id: &str) -> Result<Task, CampaignError> {
        if !self.is_assigned(rater, doc_id) {
            return Err(CampaignError::NotAssigned {
                rater: rater.to_string(),
                what: format!("{alias}/{doc_id}"),
            });
        }
        self.task(rater, alias, doc_id).ok_or_else(|| CampaignError::NotAssigned {
            rater: rater.to_string(),
            what: format!("{alias}/{doc_id}"),
        })
    }

    pub fn progress(&self) -> BTreeMap<String, Progress> {
        let mut completed: BTreeMap<&str, usize> = BTreeMap::new();
        for (rater, _) in self.latest.keys() {
            *completed.entry(rater.as_str()).or_default() += 1;
        }
        self.plan
            .loads
            .iter()
            .map(|(rater, &assigned)| {
                (
                    rater.clone(),
                    Progress {
                        assigned,
                        completed: completed.get(rater.as_str()).copied().unwrap_or(0),
                    },
                )
            })
            .collect()
    }

    /// Latest payload per (rater, segment), keyed by true system names.
    pub fn authoritative_state(&self) -> BTreeMap<(String, SegmentKey), Payload> {
        self.latest
            .iter()
            .map(|((rater, seg), &i)| {
                let system = self.system_of(&seg.alias).expect("validated on submit");
                (
                    (rater.clone(), SegmentKey::new(system, seg.doc_id.clone(), seg.seg_index)),
                    self.events[i].payload.clone(),
                )
            })
            .collect()
    }

    /// Latest ratings as MQM TSV (MQM projects) or scalar TSV (SQM projects).
    pub fn export_tsv(&self) -> Result<String, CampaignError> {
        if self.events.is_empty() {
            return Err(CampaignError::EmptyProject);
        }
        let state = self.authoritative_state();
        match self.project.mode {
            ProjectMode::Mqm => {
                let ratings: Vec<SegmentRating> = state
                    .into_iter()
                    .filter_map(|((rater, key), payload)| match payload {
                        Payload::Mqm { annotations } => Some(SegmentRating {
                            key,
                            rater_id: rater,
                            annotations,
                        }),
                        Payload::Sqm { .. } => None,
                    })
                    .collect();
                let mut sorted: Vec<&SegmentRating> = ratings.iter().collect();
                sorted.sort_by(|a, b| (&a.key, &a.rater_id).cmp(&(&b.key, &b.rater_id)));
                Ok(corpus::write_mqm_rows(sorted.into_iter(), |k| self.texts.get(k)))
            }
            ProjectMode::Sqm => {
                let ratings: Vec<ScalarRating> = state
                    .into_iter()
                    .filter_map(|((rater, key), payload)| match payload {
                        Payload::Sqm { value } => Some(ScalarRating {
                            key,
                            rater_id: rater,
                            value,
                            scale: Scale::Sqm,
                        }),
                        Payload::Mqm { .. } => None,
                    })
                    .collect();
                Ok(corpus::write_scalar_tsv(&ratings))
            }
        }
    }
}
