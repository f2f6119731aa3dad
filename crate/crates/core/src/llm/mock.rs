use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LlmError, Role, RoleConfig, Transport, TransportError};

/// One substring or a list of substrings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Patterns {
    One(String),
    Many(Vec<String>),
}

impl Default for Patterns {
    fn default() -> Self {
        Patterns::Many(Vec::new())
    }
}

impl Patterns {
    fn as_slice(&self) -> &[String] {
        match self {
            Patterns::One(s) => std::slice::from_ref(s),
            Patterns::Many(v) => v,
        }
    }

    fn is_empty(&self) -> bool {
        self.as_slice().is_empty()
    }
}

/// Fallback rule: matches when every `contains` pattern occurs in the prompt
/// and no `excludes` pattern does.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    #[serde(default)]
    pub contains: Patterns,
    #[serde(default, skip_serializing_if = "Patterns::is_empty")]
    pub excludes: Patterns,
    pub response: String,
}

impl MockRule {
    fn matches(&self, role: Role, prompt: &str) -> bool {
        self.role.is_none_or(|r| r == role)
            && self
                .contains
                .as_slice()
                .iter()
                .all(|p| prompt.contains(p.as_str()))
            && !self
                .excludes
                .as_slice()
                .iter()
                .any(|p| prompt.contains(p.as_str()))
    }
}

/// Digest → response map, consulted before the ordered fallback rules.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub responses: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<MockRule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StructuredFile {
    #[serde(default)]
    responses: BTreeMap<String, String>,
    #[serde(default)]
    rules: Vec<MockRule>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptFile {
    Structured(StructuredFile),
    Bare(BTreeMap<String, String>),
}

impl MockScript {
    /// Accepts either `{"responses": {...}, "rules": [...]}` or a bare digest map.
    pub fn parse(json: &str) -> Result<Self, LlmError> {
        let file: ScriptFile =
            serde_json::from_str(json).map_err(|e| LlmError::Script(e.to_string()))?;
        Ok(match file {
            ScriptFile::Structured(StructuredFile { responses, rules }) => {
                MockScript { responses, rules }
            }
            ScriptFile::Bare(responses) => MockScript {
                responses,
                rules: Vec::new(),
            },
        })
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = fs::read_to_string(path)
            .map_err(|e| LlmError::Script(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| LlmError::Script(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serializes")
    }

    pub fn lookup(&self, role: Role, prompt: &str, digest: &str) -> Option<&str> {
        if let Some(r) = self.responses.get(digest) {
            return Some(r);
        }
        self.rules
            .iter()
            .find(|r| r.matches(role, prompt))
            .map(|r| r.response.as_str())
    }
}

pub struct MockTransport {
    script: MockScript,
}

impl MockTransport {
    pub fn new(script: MockScript) -> Self {
        MockTransport { script }
    }
}

impl Transport for MockTransport {
    fn send(
        &self,
        config: &RoleConfig,
        prompt: &str,
        digest: &str,
    ) -> Result<String, TransportError> {
        self.script
            .lookup(config.role, prompt, digest)
            .map(str::to_string)
            .ok_or_else(|| TransportError::ScriptMiss(digest.to_string()))
    }
}
