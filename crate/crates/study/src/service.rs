use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use ccwsi_core::image::load_image;
use serde::{Deserialize, Serialize};

use crate::definition::StudyDefinition;
use crate::error::StudyError;
use crate::schedule::{generate_schedule, BlindedItem, Method, ReviewItem};
use crate::stats::{compute_stats, StudyStats};
use crate::store::{ResponseLog, ResponseSubmission, ReviewResponse};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum NextItem {
    Item { item: BlindedItem },
    Complete { total: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub reviewer_id: String,
    pub answered: usize,
    pub total: usize,
    pub complete: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageKind {
    He,
    Sox10,
}

struct State {
    log: ResponseLog,
    responses: Vec<ReviewResponse>,
    answered: HashMap<String, BTreeSet<usize>>,
}

/// A running study: immutable definition and schedule plus the response log.
pub struct Study {
    definition: StudyDefinition,
    schedule: Vec<ReviewItem>,
    by_label: HashMap<String, usize>,
    state: Mutex<State>,
}

fn now_utc_seconds() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

impl Study {
    /// Build the schedule and replay the response log at `log_path`.
    pub fn open(
        definition: StudyDefinition,
        log_path: impl AsRef<Path>,
    ) -> Result<Self, StudyError> {
        definition.validate(false)?;
        let schedule = generate_schedule(&definition.case_ids(), definition.seed)?;
        let by_label = schedule
            .iter()
            .map(|i| (i.blinded_label.clone(), i.position))
            .collect::<HashMap<_, _>>();
        if by_label.len() != schedule.len() {
            return Err(StudyError::Malformed {
                what: "schedule".into(),
                detail: "blinded labels collide".into(),
            });
        }
        let (log, replayed) = ResponseLog::open(log_path)?;
        let mut answered: HashMap<String, BTreeSet<usize>> = definition
            .reviewers
            .iter()
            .map(|r| (r.clone(), BTreeSet::new()))
            .collect();
        for r in &replayed {
            let set = answered
                .get_mut(&r.reviewer_id)
                .ok_or_else(|| StudyError::UnknownReviewer(r.reviewer_id.clone()))?;
            if r.position >= schedule.len() {
                return Err(StudyError::OrphanResponse {
                    reviewer_id: r.reviewer_id.clone(),
                    position: r.position,
                });
            }
            if !set.insert(r.position) {
                return Err(StudyError::Duplicate {
                    reviewer_id: r.reviewer_id.clone(),
                    position: r.position,
                });
            }
        }
        Ok(Self {
            definition,
            schedule,
            by_label,
            state: Mutex::new(State {
                log,
                responses: replayed,
                answered,
            }),
        })
    }

    pub fn definition(&self) -> &StudyDefinition {
        &self.definition
    }

    /// Full schedule including methods; for administrators only.
    pub fn schedule(&self) -> &[ReviewItem] {
        &self.schedule
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn next_item(&self, reviewer_id: &str) -> Result<NextItem, StudyError> {
        let state = self.lock();
        let done = state
            .answered
            .get(reviewer_id)
            .ok_or_else(|| StudyError::UnknownReviewer(reviewer_id.to_string()))?;
        let total = self.schedule.len();
        Ok(match (0..total).find(|p| !done.contains(p)) {
            Some(p) => NextItem::Item {
                item: self.schedule[p].blinded(total),
            },
            None => NextItem::Complete { total },
        })
    }

    /// Validate, append durably, then acknowledge.
    pub fn record_response(
        &self,
        submission: ResponseSubmission,
    ) -> Result<ReviewResponse, StudyError> {
        submission.validate()?;
        let mut state = self.lock();
        let done = state
            .answered
            .get(&submission.reviewer_id)
            .ok_or_else(|| StudyError::UnknownReviewer(submission.reviewer_id.clone()))?;
        if submission.position >= self.schedule.len() {
            return Err(StudyError::UnknownPosition(submission.position));
        }
        if done.contains(&submission.position) {
            return Err(StudyError::Duplicate {
                reviewer_id: submission.reviewer_id,
                position: submission.position,
            });
        }
        let response = submission.stamp(now_utc_seconds());
        state.log.append(&response)?;
        state
            .answered
            .get_mut(&response.reviewer_id)
            .expect("checked above")
            .insert(response.position);
        state.responses.push(response.clone());
        Ok(response)
    }

    pub fn progress(&self, reviewer_id: &str) -> Result<Progress, StudyError> {
        let state = self.lock();
        let done = state
            .answered
            .get(reviewer_id)
            .ok_or_else(|| StudyError::UnknownReviewer(reviewer_id.to_string()))?;
        let total = self.schedule.len();
        Ok(Progress {
            reviewer_id: reviewer_id.to_string(),
            answered: done.len(),
            total,
            complete: done.len() == total,
        })
    }

    pub fn responses(&self) -> Vec<ReviewResponse> {
        self.lock().responses.clone()
    }

    pub fn stats(&self) -> Result<StudyStats, StudyError> {
        let responses = self.responses();
        compute_stats(&responses, &self.schedule)
    }

    /// PNG bytes for an item, decoded and re-encoded so no file name or
    /// metadata reaches the client.
    pub fn item_image(&self, label: &str, kind: ImageKind) -> Result<Vec<u8>, StudyError> {
        let position = *self
            .by_label
            .get(label)
            .ok_or_else(|| StudyError::UnknownItem(label.to_string()))?;
        let item = &self.schedule[position];
        let case = self
            .definition
            .cases
            .iter()
            .find(|c| c.case_id == item.case_id)
            .expect("schedule built from definition");
        let path = match (kind, item.method) {
            (ImageKind::He, _) => &case.he_image,
            (ImageKind::Sox10, Method::Traditional) => &case.traditional_sox10,
            (ImageKind::Sox10, Method::Synthetic) => &case.synthetic_sox10,
        };
        let img = load_image(path).map_err(|e| StudyError::Image(e.to_string()))?;
        img.encode_png()
            .map_err(|e| StudyError::Image(e.to_string()))
    }
}
