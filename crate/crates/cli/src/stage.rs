//! Idempotent stage execution.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, Result};
use crate::provenance::{self, Provenance, TOOL_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    /// Outputs were already present and matched their provenance.
    Skipped,
}

/// One stage invocation: its parameters, inputs by role, and output files.
pub struct Stage<'a> {
    pub name: &'static str,
    pub params: Value,
    pub inputs: Vec<(&'a str, &'a Path)>,
    pub outputs: Vec<PathBuf>,
}

impl<'a> Stage<'a> {
    pub fn new(name: &'static str, params: impl Serialize) -> Result<Self> {
        Ok(Self { name, params: serde_json::to_value(params)?, inputs: Vec::new(), outputs: Vec::new() })
    }

    pub fn input(mut self, role: &'a str, path: &'a Path) -> Self {
        self.inputs.push((role, path));
        self
    }

    pub fn output(mut self, path: PathBuf) -> Self {
        self.outputs.push(path);
        self
    }

    fn expected(&self) -> Result<Provenance> {
        let inputs = self
            .inputs
            .iter()
            .map(|(role, p)| Ok((role.to_string(), provenance::hash_artifact(p)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Provenance {
            stage: self.name.into(),
            tool_version: TOOL_VERSION.into(),
            params: self.params.clone(),
            inputs,
            outputs: BTreeMap::new(),
        })
    }

    /// Up to date: every output exists, carries a record of this very
    /// invocation, and still has the recorded content.
    fn up_to_date(&self, expected: &Provenance) -> Result<bool> {
        for out in &self.outputs {
            if !provenance::artifact_exists(out) {
                return Ok(false);
            }
            let Some(rec) = provenance::read(out) else { return Ok(false) };
            let same = rec.stage == expected.stage
                && rec.tool_version == expected.tool_version
                && rec.params == expected.params
                && rec.inputs == expected.inputs;
            if !same || rec.outputs.get(&provenance::file_name(out)) != Some(&provenance::hash_artifact(out)?) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Runs `work` unless the outputs are up to date (or `force` is set),
    /// then records provenance for every output. Failures carry the stage name.
    pub fn run(self, force: bool, work: impl FnOnce() -> Result<()>) -> Result<Outcome> {
        let wrap = |e: CliError| match e {
            e @ (CliError::Validation(_) | CliError::Stage { .. }) => e,
            e => CliError::Stage { stage: self.name, source: Box::new(e) },
        };
        let mut record = self.expected().map_err(wrap)?;
        if !force && self.up_to_date(&record).map_err(wrap)? {
            log::info!("stage {}: up to date, skipped", self.name);
            return Ok(Outcome::Skipped);
        }
        for out in &self.outputs {
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| wrap(CliError::io(dir, e)))?;
            }
        }
        log::info!("stage {}: running", self.name);
        work().map_err(wrap)?;
        for out in &self.outputs {
            record.outputs.insert(provenance::file_name(out), provenance::hash_artifact(out).map_err(wrap)?);
        }
        for out in &self.outputs {
            provenance::write(out, &record).map_err(wrap)?;
        }
        log::info!("stage {}: done", self.name);
        Ok(Outcome::Ran)
    }
}
