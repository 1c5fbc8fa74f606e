use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::privacy::is_identifier;
use crate::registry::{Did, Role};

use super::WorkflowError;

pub const DEFAULT_TEMPLATE_ID: &str = "default";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub phase_number: u32,
    pub phase_name: String,
    #[serde(default = "attesting_entity")]
    pub authorized_role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authorized_dids: Option<Vec<Did>>,
}

fn attesting_entity() -> Role {
    Role::AttestingEntity
}

impl PhaseSpec {
    pub fn authorizes(&self, did: &Did, role: Role) -> bool {
        role == self.authorized_role && self.authorized_dids.as_ref().map_or(true, |allow| allow.contains(did))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowTemplate {
    pub template_id: String,
    pub phases: Vec<PhaseSpec>,
    /// Lifetime of the aggregate credential, in days.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validity_days: Option<u32>,
}

impl WorkflowTemplate {
    /// The shipped five-phase legalization chain with two-year validity.
    pub fn default_template() -> Self {
        let names = [
            "Notary verification",
            "State authority attestation",
            "Ministry of foreign affairs attestation",
            "Embassy attestation",
            "Destination ministry attestation",
        ];
        WorkflowTemplate {
            template_id: DEFAULT_TEMPLATE_ID.into(),
            phases: names
                .iter()
                .enumerate()
                .map(|(i, name)| PhaseSpec {
                    phase_number: i as u32 + 1,
                    phase_name: (*name).into(),
                    authorized_role: Role::AttestingEntity,
                    authorized_dids: None,
                })
                .collect(),
            validity_days: Some(730),
        }
    }

    /// A template with `n` unrestricted phases named "Phase k".
    pub fn uniform(template_id: &str, n: u32, validity_days: Option<u32>) -> Self {
        WorkflowTemplate {
            template_id: template_id.into(),
            phases: (1..=n)
                .map(|k| PhaseSpec {
                    phase_number: k,
                    phase_name: format!("Phase {k}"),
                    authorized_role: Role::AttestingEntity,
                    authorized_dids: None,
                })
                .collect(),
            validity_days,
        }
    }

    pub fn len(&self) -> u32 {
        self.phases.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn phase(&self, n: u32) -> Option<&PhaseSpec> {
        n.checked_sub(1).and_then(|i| self.phases.get(i as usize))
    }

    pub fn policy_ref(&self) -> String {
        format!("template:{}", self.template_id)
    }

    pub fn validate(&self) -> Result<(), WorkflowError> {
        let bad = |msg: String| Err(WorkflowError::InvalidInput(format!("template {}: {msg}", self.template_id)));
        if !is_identifier(&self.template_id) || self.template_id.len() > 64 {
            return bad("template_id must be a short identifier".into());
        }
        if self.phases.is_empty() {
            return bad("at least one phase is required".into());
        }
        for (i, p) in self.phases.iter().enumerate() {
            if p.phase_number != i as u32 + 1 {
                return bad(format!("phase numbers must be 1..n in order, found {} at position {}", p.phase_number, i + 1));
            }
            if p.authorized_role != Role::AttestingEntity {
                return bad(format!("phase {} must be attested by an attesting entity", p.phase_number));
            }
            if p.phase_name.trim().is_empty() {
                return bad(format!("phase {} has no name", p.phase_number));
            }
        }
        Ok(())
    }
}

/// Templates by id. Always contains the default template unless a file
/// overrides it.
#[derive(Clone, Debug)]
pub struct TemplateSet(BTreeMap<String, WorkflowTemplate>);

impl Default for TemplateSet {
    fn default() -> Self {
        let t = WorkflowTemplate::default_template();
        TemplateSet(BTreeMap::from([(t.template_id.clone(), t)]))
    }
}

impl TemplateSet {
    pub fn insert(&mut self, template: WorkflowTemplate) -> Result<(), WorkflowError> {
        template.validate()?;
        self.0.insert(template.template_id.clone(), template);
        Ok(())
    }

    pub fn with(mut self, template: WorkflowTemplate) -> Result<Self, WorkflowError> {
        self.insert(template)?;
        Ok(self)
    }

    /// Default template plus every `*.json` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, WorkflowError> {
        let mut set = TemplateSet::default();
        let entries = match std::fs::read_dir(dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(set),
            Err(e) => return Err(WorkflowError::Storage(format!("{}: {e}", dir.display()))),
        };
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| WorkflowError::Storage(format!("{}: {e}", path.display())))?;
            let t: WorkflowTemplate = serde_json::from_str(&text)
                .map_err(|e| WorkflowError::InvalidInput(format!("{}: {e}", path.display())))?;
            set.insert(t)?;
        }
        Ok(set)
    }

    pub fn get(&self, id: &str) -> Option<&WorkflowTemplate> {
        self.0.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &WorkflowTemplate> {
        self.0.values()
    }
}
