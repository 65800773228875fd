//! Segmenter living in a child process, spoken to over its standard streams.

use std::io::{self, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::Duration;

use super::wire;
use super::{BackendError, SegmentRequest, SegmentResponse, Segmenter};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

/// What the reader thread hands back for one expected frame.
struct Frame {
    bytes: Vec<u8>,
    /// The stream ended before the frame was complete.
    eof: bool,
    error: Option<io::Error>,
}

/// Strictly serial request/response handle. After any failure the handle is
/// poisoned: the stream position is unknown, so every later call fails fast.
pub struct ExternalSegmenter {
    writer: Box<dyn Write + Send>,
    wanted: Sender<usize>,
    frames: Receiver<Frame>,
    child: Option<Child>,
    timeout: Duration,
    poisoned: Option<String>,
}

impl ExternalSegmenter {
    /// Launches `program args...` with piped stdin/stdout; stderr is inherited.
    pub fn spawn(program: &str, args: &[String], timeout: Duration) -> Result<Self, BackendError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let mut seg = Self::from_streams(stdout, stdin, timeout);
        seg.child = Some(child);
        Ok(seg)
    }

    /// Speaks the protocol over arbitrary streams (useful for in-process
    /// transports and testing).
    pub fn from_streams(reader: impl Read + Send + 'static, writer: impl Write + Send + 'static, timeout: Duration) -> Self {
        let (want_tx, want_rx) = mpsc::channel::<usize>();
        let (frame_tx, frame_rx) = mpsc::channel::<Frame>();
        thread::spawn(move || read_loop(reader, want_rx, frame_tx));
        Self {
            writer: Box::new(writer),
            wanted: want_tx,
            frames: frame_rx,
            child: None,
            timeout,
            poisoned: None,
        }
    }

    pub fn is_poisoned(&self) -> bool {
        self.poisoned.is_some()
    }

    fn exchange(&mut self, req: &SegmentRequest) -> Result<SegmentResponse, BackendError> {
        let voxels = req.voxels();
        let frame = wire::encode_request(req)?;
        self.wanted
            .send(wire::response_len(voxels))
            .map_err(|_| BackendError::ProcessExited("response reader has stopped".into()))?;
        if let Err(e) = self.writer.write_all(&frame).and_then(|_| self.writer.flush()) {
            return Err(match e.kind() {
                io::ErrorKind::BrokenPipe => BackendError::ProcessExited(self.exit_status("stdin closed")),
                _ => BackendError::Io(e),
            });
        }
        let got = match self.frames.recv_timeout(self.timeout) {
            Ok(f) => f,
            Err(RecvTimeoutError::Timeout) => return Err(BackendError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(BackendError::ProcessExited(self.exit_status("output closed")))
            }
        };
        if let Some(e) = got.error {
            return Err(BackendError::Io(e));
        }
        if got.eof {
            if got.bytes.is_empty() {
                return Err(BackendError::ProcessExited(self.exit_status("no response")));
            }
            // A frame that is wrong from its first bytes is a protocol error
            // even if the process then went away.
            wire::check_magic_version(&got.bytes, wire::RESPONSE_MAGIC)?;
            return Err(BackendError::Protocol(format!(
                "response truncated at {} of {} bytes",
                got.bytes.len(),
                wire::response_len(voxels)
            )));
        }
        wire::decode_response(&got.bytes, voxels)
    }

    fn exit_status(&mut self, what: &str) -> String {
        match self.child.as_mut().map(|c| c.wait()) {
            Some(Ok(status)) => format!("{what}; {status}"),
            _ => what.to_string(),
        }
    }
}

impl Segmenter for ExternalSegmenter {
    fn segment(&mut self, req: &SegmentRequest) -> Result<SegmentResponse, BackendError> {
        if let Some(cause) = &self.poisoned {
            return Err(BackendError::ProcessExited(format!("handle unusable after earlier failure: {cause}")));
        }
        let out = self.exchange(req);
        if let Err(e) = &out {
            self.poisoned = Some(e.to_string());
            if let Some(child) = self.child.as_mut() {
                let _ = child.kill();
            }
        }
        out
    }
}

impl Drop for ExternalSegmenter {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn read_loop(mut reader: impl Read, wanted: Receiver<usize>, frames: Sender<Frame>) {
    while let Ok(len) = wanted.recv() {
        let mut bytes = vec![0u8; len];
        let mut filled = 0;
        let mut frame = Frame { bytes: Vec::new(), eof: false, error: None };
        while filled < len {
            match reader.read(&mut bytes[filled..]) {
                Ok(0) => {
                    frame.eof = true;
                    break;
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => {
                    frame.error = Some(e);
                    break;
                }
            }
        }
        bytes.truncate(filled);
        frame.bytes = bytes;
        let stop = frame.eof || frame.error.is_some();
        if frames.send(frame).is_err() || stop {
            return;
        }
    }
}
