use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use maims_core::llm::BackendSpec;
use maims_core::{
    json_digest, Corpus, MentalScale, Mode, PromptTemplates, Role, RoleConfig, TaskSpec,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    task: Option<PathBuf>,
    scale: Option<PathBuf>,
    corpus: Option<PathBuf>,
    templates: Option<PathBuf>,
    cache_dir: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    mode: Option<String>,
    max_retries: Option<u32>,
    workers: Option<usize>,
    n: Option<usize>,
    include_failed: Option<bool>,
    transport_retries: Option<u32>,
    retry_base_delay_ms: Option<u64>,
    roles: Option<RolesSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RolesSection {
    poster: RoleSection,
    analysis: RoleSection,
    discriminator: RoleSection,
}

#[derive(Debug, Deserialize)]
struct RoleSection {
    #[serde(flatten)]
    backend: BackendSpec,
    #[serde(default)]
    temperature: f64,
    max_output_tokens: Option<u32>,
    request_timeout_secs: Option<u64>,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub n: Option<usize>,
    pub workers: Option<usize>,
    pub max_retries: Option<u32>,
    pub include_failed: bool,
    pub cache_dir: Option<PathBuf>,
    pub no_cache: bool,
    pub templates: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

/// The merged configuration of one invocation. Paths are resolved.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: PathBuf,
    pub scale: PathBuf,
    pub corpus: PathBuf,
    pub templates: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub roles: [RoleConfig; 3],
    pub mode: Mode,
    pub max_retries: u32,
    pub workers: usize,
    pub n: Option<usize>,
    pub include_failed: bool,
    pub transport_retries: u32,
    pub retry_base_delay_ms: u64,
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn load(path: &Path, over: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let file: FileConfig = toml::from_str(&text)
            .with_context(|| format!("invalid config file {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = if base.as_os_str().is_empty() {
            Path::new(".")
        } else {
            base
        };
        let required = |v: Option<PathBuf>, field: &str| -> Result<PathBuf> {
            match v {
                Some(p) => Ok(resolve(base, p)),
                None => bail!("{}: missing field `{field}`", path.display()),
            }
        };

        let mode = match (over.mode, &file.mode) {
            (Some(m), _) => m,
            (None, Some(s)) => s
                .parse::<Mode>()
                .map_err(|e| anyhow::anyhow!("{}: field `mode`: {e}", path.display()))?,
            (None, None) => Mode::Full,
        };
        let Some(roles) = file.roles else {
            bail!(
                "{}: missing [roles.poster], [roles.analysis] and [roles.discriminator]",
                path.display()
            );
        };
        let role = |role: Role, s: RoleSection| RoleConfig {
            role,
            backend: match s.backend {
                BackendSpec::Mock { script, model } => BackendSpec::Mock {
                    script: resolve(base, script),
                    model,
                },
                remote => remote,
            },
            temperature: s.temperature,
            max_output_tokens: s.max_output_tokens.unwrap_or(1024),
            request_timeout_secs: s.request_timeout_secs.unwrap_or(120),
        };

        let cfg = RunConfig {
            task: required(file.task, "task")?,
            scale: required(file.scale, "scale")?,
            corpus: required(file.corpus, "corpus")?,
            templates: over
                .templates
                .clone()
                .or_else(|| file.templates.map(|p| resolve(base, p))),
            cache_dir: if over.no_cache {
                None
            } else {
                over.cache_dir
                    .clone()
                    .or_else(|| file.cache_dir.map(|p| resolve(base, p)))
            },
            output_dir: over
                .output_dir
                .clone()
                .or_else(|| file.output_dir.map(|p| resolve(base, p)))
                .unwrap_or_else(|| PathBuf::from("out")),
            roles: [
                role(Role::Poster, roles.poster),
                role(Role::Analysis, roles.analysis),
                role(Role::Discriminator, roles.discriminator),
            ],
            mode,
            max_retries: over.max_retries.or(file.max_retries).unwrap_or(2),
            workers: over.workers.or(file.workers).unwrap_or(4),
            n: over.n.or(file.n),
            include_failed: over.include_failed || file.include_failed.unwrap_or(false),
            transport_retries: file.transport_retries.unwrap_or(3),
            retry_base_delay_ms: file.retry_base_delay_ms.unwrap_or(1000),
        };
        cfg.check(path)?;
        Ok(cfg)
    }

    fn check(&self, path: &Path) -> Result<()> {
        if self.workers == 0 {
            bail!("{}: `workers` must be at least 1", path.display());
        }
        if self.n == Some(0) {
            bail!("{}: `n` must be at least 1", path.display());
        }
        for (field, p) in [
            ("task", &self.task),
            ("scale", &self.scale),
            ("corpus", &self.corpus),
        ] {
            if !p.is_file() {
                bail!("{field} file not found: {}", p.display());
            }
        }
        if let Some(t) = &self.templates {
            if !t.is_dir() {
                bail!("templates directory not found: {}", t.display());
            }
        }
        for r in &self.roles {
            let problems = r.validate();
            if !problems.is_empty() {
                bail!(
                    "{}: [roles.{}]: {}",
                    path.display(),
                    r.role,
                    problems.join("; ")
                );
            }
            if let BackendSpec::Mock { script, .. } = &r.backend {
                if !script.is_file() {
                    bail!("mock script not found: {}", script.display());
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct RoleView<'a> {
    role: Role,
    backend: String,
    model: &'a str,
    temperature: f64,
    max_output_tokens: u32,
}

#[derive(Serialize)]
struct DigestView<'a> {
    roles: Vec<RoleView<'a>>,
    mode: Mode,
    max_retries: u32,
    task: &'a TaskSpec,
    scale: String,
    corpus: String,
    templates: String,
    n: Option<usize>,
    include_failed: bool,
}

/// Digest of everything that can change a run's outputs. File locations,
/// worker count and cache placement are left out.
pub fn config_digest(
    cfg: &RunConfig,
    mode: Mode,
    task: &TaskSpec,
    scale: &MentalScale,
    corpus: &Corpus,
    templates: &PromptTemplates,
) -> String {
    json_digest(&DigestView {
        roles: cfg
            .roles
            .iter()
            .map(|r| RoleView {
                role: r.role,
                backend: r.backend.identity(),
                model: r.backend.model(),
                temperature: r.temperature,
                max_output_tokens: r.max_output_tokens,
            })
            .collect(),
        mode,
        max_retries: cfg.max_retries,
        task,
        scale: json_digest(scale),
        corpus: json_digest(&corpus.posts),
        templates: templates.digest(),
        n: cfg.n,
        include_failed: cfg.include_failed,
    })
}
