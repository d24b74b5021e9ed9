use thiserror::Error;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("study has no cases")]
    EmptyCases,
    #[error("duplicate case id {0:?}")]
    DuplicateCase(String),
    #[error("duplicate reviewer id {0:?}")]
    DuplicateReviewer(String),
    #[error("case {case_id}: missing file {path}")]
    MissingFile { case_id: String, path: String },
    #[error("unknown reviewer {0:?}")]
    UnknownReviewer(String),
    #[error("unknown position {0}")]
    UnknownPosition(usize),
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("reviewer {reviewer_id:?} already answered position {position}")]
    Duplicate {
        reviewer_id: String,
        position: usize,
    },
    #[error("response for position {position} by {reviewer_id:?} matches no scheduled item")]
    OrphanResponse {
        reviewer_id: String,
        position: usize,
    },
    #[error("malformed {what}: {detail}")]
    Malformed { what: String, detail: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("image: {0}")]
    Image(String),
}

impl StudyError {
    /// Stable machine-readable code for API error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            StudyError::EmptyCases
            | StudyError::DuplicateCase(_)
            | StudyError::DuplicateReviewer(_)
            | StudyError::MissingFile { .. } => "invalid_definition",
            StudyError::UnknownReviewer(_) => "unknown_reviewer",
            StudyError::UnknownPosition(_) => "unknown_position",
            StudyError::UnknownItem(_) => "unknown_item",
            StudyError::InvalidResponse(_) => "invalid_response",
            StudyError::Duplicate { .. } => "duplicate_response",
            StudyError::OrphanResponse { .. } => "orphan_response",
            StudyError::Malformed { .. } => "malformed",
            StudyError::Io(_) | StudyError::Image(_) => "internal",
        }
    }
}
