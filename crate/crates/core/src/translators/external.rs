use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use log::{debug, warn};

use super::protocol::{
    read_response, FrameError, HistogramPayload, RequestFrame, ResponseFrame, MSG_HANDSHAKE,
    MSG_REQUEST,
};
use super::{TranslateError, TranslationRequest, TranslationResult, Translator};
use crate::image::RasterImage;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

type Reply = Result<ResponseFrame, TranslateError>;

#[derive(Default)]
struct Inflight {
    pending: HashMap<u32, Sender<Reply>>,
    /// Requests that timed out; a late reply for one of these is dropped.
    abandoned: HashSet<u32>,
    failure: Option<TranslateError>,
    handshake: Option<Sender<Reply>>,
}

impl Inflight {
    fn fail_all(&mut self, err: TranslateError) {
        if self.failure.is_none() {
            self.failure = Some(err.clone());
        }
        for (_, tx) in self.pending.drain() {
            let _ = tx.send(Err(err.clone()));
        }
        if let Some(tx) = self.handshake.take() {
            let _ = tx.send(Err(err));
        }
    }
}

/// Client for a translator process speaking the framed protocol.
///
/// Requests from several threads may be in flight at once; replies are
/// routed back by `tile_id`, so the server may answer in any order.
pub struct ExternalTranslator {
    writer: Mutex<Box<dyn Write + Send>>,
    inflight: Arc<Mutex<Inflight>>,
    timeout: Duration,
    child: Mutex<Option<Child>>,
    reader: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for ExternalTranslator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalTranslator")
            .field("timeout", &self.timeout)
            .finish_non_exhaustive()
    }
}

impl ExternalTranslator {
    /// Starts `argv[0]` with the remaining arguments and performs the
    /// handshake.
    pub fn spawn(argv: &[String], timeout: Duration) -> Result<Self, TranslateError> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| TranslateError::InvalidRequest("empty external command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| TranslateError::Io(format!("spawning {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut t = Self::start(stdout, stdin, timeout)?;
        *t.child.get_mut().unwrap() = Some(child);
        match t.handshake() {
            Ok(()) => Ok(t),
            Err(e) => {
                drop(t);
                Err(e)
            }
        }
    }

    /// Uses already-connected streams, e.g. in-process pipes.
    pub fn from_streams(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        timeout: Duration,
    ) -> Result<Self, TranslateError> {
        let t = Self::start(reader, writer, timeout)?;
        t.handshake()?;
        Ok(t)
    }

    fn start(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        timeout: Duration,
    ) -> Result<Self, TranslateError> {
        let inflight = Arc::new(Mutex::new(Inflight::default()));
        let shared = Arc::clone(&inflight);
        let handle = std::thread::Builder::new()
            .name("ccwsi-external-reader".into())
            .spawn(move || reader_loop(reader, shared))
            .map_err(|e| TranslateError::Io(e.to_string()))?;
        Ok(Self {
            writer: Mutex::new(Box::new(writer)),
            inflight,
            timeout,
            child: Mutex::new(None),
            reader: Some(handle),
        })
    }

    fn handshake(&self) -> Result<(), TranslateError> {
        let (tx, rx) = mpsc::channel();
        self.inflight.lock().unwrap().handshake = Some(tx);
        self.send(&RequestFrame::handshake())?;
        let frame = self.wait(&rx)?;
        if frame.width != 0 || frame.height != 0 {
            return Err(super::ProtocolViolation::BadHandshake.into());
        }
        Ok(())
    }

    fn send(&self, frame: &RequestFrame) -> Result<(), TranslateError> {
        let bytes = frame.encode();
        let mut w = self.writer.lock().unwrap();
        w.write_all(&bytes)
            .and_then(|_| w.flush())
            .map_err(|e| self.failure_or(TranslateError::ProcessExited(e.to_string())))
    }

    fn failure_or(&self, fallback: TranslateError) -> TranslateError {
        self.inflight
            .lock()
            .unwrap()
            .failure
            .clone()
            .unwrap_or(fallback)
    }

    fn wait(&self, rx: &Receiver<Reply>) -> Result<ResponseFrame, TranslateError> {
        match rx.recv_timeout(self.timeout) {
            Ok(reply) => reply,
            Err(RecvTimeoutError::Timeout) => Err(TranslateError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                Err(self.failure_or(TranslateError::ProcessExited("reader stopped".into())))
            }
        }
    }
}

fn reader_loop(mut reader: impl Read, inflight: Arc<Mutex<Inflight>>) {
    loop {
        let frame = match read_response(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => {
                inflight
                    .lock()
                    .unwrap()
                    .fail_all(TranslateError::ProcessExited("end of stream".into()));
                return;
            }
            Err(FrameError::Violation(v)) => {
                warn!("external translator protocol violation: {v}");
                inflight.lock().unwrap().fail_all(v.into());
                return;
            }
            Err(FrameError::Io(e)) => {
                inflight
                    .lock()
                    .unwrap()
                    .fail_all(TranslateError::ProcessExited(e.to_string()));
                return;
            }
        };
        let mut state = inflight.lock().unwrap();
        if frame.msg_type == MSG_HANDSHAKE {
            match state.handshake.take() {
                Some(tx) => {
                    let _ = tx.send(Ok(frame));
                }
                None => {
                    state.fail_all(
                        super::ProtocolViolation::UnexpectedMessageType(MSG_HANDSHAKE).into(),
                    );
                    return;
                }
            }
            continue;
        }
        if let Some(tx) = state.pending.remove(&frame.tile_id) {
            let _ = tx.send(Ok(frame));
        } else if state.abandoned.remove(&frame.tile_id) {
            debug!("dropping late reply for tile {}", frame.tile_id);
        } else {
            let expected = if state.pending.len() == 1 {
                state.pending.keys().next().copied()
            } else {
                None
            };
            state.fail_all(TranslateError::TileIdMismatch {
                expected,
                got: frame.tile_id,
            });
            return;
        }
    }
}

fn to_u16(v: usize, what: &str) -> Result<u16, TranslateError> {
    u16::try_from(v).map_err(|_| TranslateError::InvalidRequest(format!("{what} {v} exceeds u16")))
}

impl Translator for ExternalTranslator {
    fn name(&self) -> &'static str {
        "external"
    }

    fn translate(&self, req: &TranslationRequest) -> Result<TranslationResult, TranslateError> {
        let (w, h) = (req.tile.width(), req.tile.height());
        let histogram = match &req.condition {
            Some(c) => Some(HistogramPayload {
                bins: to_u16(c.bins(), "bins")?,
                values: c.values().iter().map(|&v| v as f32).collect(),
            }),
            None => None,
        };
        let frame = RequestFrame {
            msg_type: MSG_REQUEST,
            tile_id: req.tile_id,
            width: to_u16(w, "width")?,
            height: to_u16(h, "height")?,
            histogram,
            payload: req.tile.samples().to_vec(),
        };

        let (tx, rx) = mpsc::channel();
        {
            let mut state = self.inflight.lock().unwrap();
            if let Some(err) = &state.failure {
                return Err(err.clone());
            }
            if state.pending.contains_key(&req.tile_id) {
                return Err(TranslateError::InvalidRequest(format!(
                    "tile_id {} already in flight",
                    req.tile_id
                )));
            }
            state.abandoned.remove(&req.tile_id);
            state.pending.insert(req.tile_id, tx);
        }
        let started = Instant::now();
        if let Err(e) = self.send(&frame) {
            self.inflight.lock().unwrap().pending.remove(&req.tile_id);
            return Err(e);
        }
        let reply = match self.wait(&rx) {
            Err(TranslateError::Timeout(t)) => {
                let mut state = self.inflight.lock().unwrap();
                if state.pending.remove(&req.tile_id).is_some() {
                    state.abandoned.insert(req.tile_id);
                }
                return Err(TranslateError::Timeout(t));
            }
            other => other?,
        };
        debug!(
            "tile {} translated externally in {:?}",
            req.tile_id,
            started.elapsed()
        );

        if reply.tile_id != req.tile_id {
            return Err(TranslateError::TileIdMismatch {
                expected: Some(req.tile_id),
                got: reply.tile_id,
            });
        }
        let got = (usize::from(reply.width), usize::from(reply.height));
        if got != (w, h) {
            return Err(TranslateError::DimensionMismatch {
                expected: (w, h),
                got,
            });
        }
        let tile = RasterImage::new(w, h, reply.payload)
            .map_err(|e| TranslateError::InvalidRequest(e.to_string()))?;
        Ok(TranslationResult {
            tile_id: req.tile_id,
            tile,
        })
    }
}

impl Drop for ExternalTranslator {
    fn drop(&mut self) {
        // Closing stdin lets a well-behaved server exit on its own.
        *self.writer.get_mut().unwrap() = Box::new(std::io::sink());
        if let Some(mut child) = self.child.get_mut().unwrap().take() {
            let deadline = Instant::now() + Duration::from_secs(2);
            loop {
                match child.try_wait() {
                    Ok(Some(_)) => break,
                    Ok(None) if Instant::now() < deadline => {
                        std::thread::sleep(Duration::from_millis(10))
                    }
                    _ => {
                        let _ = child.kill();
                        let _ = child.wait();
                        break;
                    }
                }
            }
        }
        if let Some(handle) = self.reader.take() {
            // The reader only finishes on EOF; a borrowed in-process stream
            // may stay open, so never block on it.
            if handle.is_finished() {
                let _ = handle.join();
            }
        }
    }
}
