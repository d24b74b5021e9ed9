use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::StudyError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub case_id: String,
    pub he_image: PathBuf,
    pub traditional_sox10: PathBuf,
    pub synthetic_sox10: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyDefinition {
    pub cases: Vec<CaseEntry>,
    pub seed: u64,
    pub reviewers: Vec<String>,
}

impl StudyDefinition {
    /// Read a definition file. Relative image paths resolve against the
    /// file's directory, and every image must exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, StudyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut def: StudyDefinition =
            serde_json::from_str(&text).map_err(|e| StudyError::Malformed {
                what: format!("study definition {}", path.display()),
                detail: e.to_string(),
            })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for c in &mut def.cases {
            for p in [
                &mut c.he_image,
                &mut c.traditional_sox10,
                &mut c.synthetic_sox10,
            ] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        def.validate(true)?;
        Ok(def)
    }

    pub fn validate(&self, check_files: bool) -> Result<(), StudyError> {
        if self.cases.is_empty() {
            return Err(StudyError::EmptyCases);
        }
        let mut ids = HashSet::new();
        for c in &self.cases {
            if !ids.insert(c.case_id.as_str()) {
                return Err(StudyError::DuplicateCase(c.case_id.clone()));
            }
            if check_files {
                for p in [&c.he_image, &c.traditional_sox10, &c.synthetic_sox10] {
                    if !p.is_file() {
                        return Err(StudyError::MissingFile {
                            case_id: c.case_id.clone(),
                            path: p.display().to_string(),
                        });
                    }
                }
            }
        }
        let mut reviewers = HashSet::new();
        for r in &self.reviewers {
            if !reviewers.insert(r.as_str()) {
                return Err(StudyError::DuplicateReviewer(r.clone()));
            }
        }
        Ok(())
    }

    pub fn case_ids(&self) -> Vec<String> {
        self.cases.iter().map(|c| c.case_id.clone()).collect()
    }
}
