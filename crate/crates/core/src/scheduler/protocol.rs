//! Length-prefixed binary wire protocol between master and workers.
//!
//! Every frame is a little-endian u32 byte length followed by the body;
//! the first body byte is the message tag. All integers are little-endian.
//! The first HELLO field is the protocol version (currently 1).
//!
//! The PUSH_DATASET reply to HELLO carries the run parameters along with
//! the dataset itself, either as a path every worker can read or as inline
//! EDM1 bytes for pathless workers. In inline mode workers also return row
//! payloads inside RESULT so the master can merge without reading worker
//! filesystems.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;
/// Upper bound on a single frame; anything larger is a protocol error.
pub const MAX_FRAME_LEN: u32 = 1 << 30;

const TAG_HELLO: u8 = 1;
const TAG_TASK_REQ: u8 = 2;
const TAG_TASK: u8 = 3;
const TAG_RESULT: u8 = 4;
const TAG_OPTE_BCAST: u8 = 5;
const TAG_DONE: u8 = 6;
const TAG_SHUTDOWN: u8 = 7;
const TAG_PUSH_DATASET: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    SimplexE,
    CcmRow,
}

impl TaskKind {
    fn code(self) -> u8 {
        match self {
            TaskKind::SimplexE => 0,
            TaskKind::CcmRow => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(TaskKind::SimplexE),
            1 => Ok(TaskKind::CcmRow),
            other => Err(Error::Protocol(format!("unknown task kind {other}"))),
        }
    }
}

/// One unit of work: a series index, plus the E range for simplex tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskAssignment {
    pub task_id: u64,
    pub kind: TaskKind,
    pub series: u32,
    pub e_lo: u32,
    pub e_hi: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskResult {
    Simplex {
        task_id: u64,
        series: u32,
        best_e: u32,
        rho: f64,
        rho_by_e: Vec<f64>,
    },
    CcmRow {
        task_id: u64,
        series: u32,
        /// Worker-local file the row was persisted to before this ack.
        path: String,
        /// Row bytes (float32) when the job runs in inline-results mode.
        inline: Option<Vec<u8>>,
        /// (column, cause code) pairs for sentinel entries.
        sentinels: Vec<(u32, u8)>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// A path every worker can read, plus its format code
    /// (0 = csv, 1 = edm1).
    Path { path: String, format: u8 },
    /// The dataset itself, serialized as an EDM1 file.
    Inline(Vec<u8>),
}

/// Run setup pushed to a worker right after HELLO.
#[derive(Debug, Clone, PartialEq)]
pub struct JobSetup {
    pub e_max: u32,
    pub tau: u32,
    pub exclude_self: bool,
    /// Workers must embed row bytes in their CcmRow results.
    pub inline_results: bool,
    pub dataset: DatasetSource,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello {
        version: u32,
        worker_id: u32,
        threads: u32,
    },
    TaskReq,
    Task(Vec<TaskAssignment>),
    Result(TaskResult),
    OptEBcast(Vec<u32>),
    Done,
    Shutdown,
    PushDataset(JobSetup),
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Protocol("truncated frame".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn bytes(&mut self) -> Result<Vec<u8>> {
        let len = self.u32()? as usize;
        Ok(self.take(len)?.to_vec())
    }

    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?)
            .map_err(|_| Error::Protocol("invalid utf-8 in string field".into()))
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Protocol(format!(
                "{} trailing bytes in frame",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    put_u64(out, v.to_bits());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

impl Message {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Message::Hello {
                version,
                worker_id,
                threads,
            } => {
                out.push(TAG_HELLO);
                put_u32(&mut out, *version);
                put_u32(&mut out, *worker_id);
                put_u32(&mut out, *threads);
            }
            Message::TaskReq => out.push(TAG_TASK_REQ),
            Message::Task(tasks) => {
                out.push(TAG_TASK);
                put_u32(&mut out, tasks.len() as u32);
                for t in tasks {
                    put_u64(&mut out, t.task_id);
                    out.push(t.kind.code());
                    put_u32(&mut out, t.series);
                    put_u32(&mut out, t.e_lo);
                    put_u32(&mut out, t.e_hi);
                }
            }
            Message::Result(res) => {
                out.push(TAG_RESULT);
                match res {
                    TaskResult::Simplex {
                        task_id,
                        series,
                        best_e,
                        rho,
                        rho_by_e,
                    } => {
                        out.push(TaskKind::SimplexE.code());
                        put_u64(&mut out, *task_id);
                        put_u32(&mut out, *series);
                        put_u32(&mut out, *best_e);
                        put_f64(&mut out, *rho);
                        put_u32(&mut out, rho_by_e.len() as u32);
                        for r in rho_by_e {
                            put_f64(&mut out, *r);
                        }
                    }
                    TaskResult::CcmRow {
                        task_id,
                        series,
                        path,
                        inline,
                        sentinels,
                    } => {
                        out.push(TaskKind::CcmRow.code());
                        put_u64(&mut out, *task_id);
                        put_u32(&mut out, *series);
                        put_bytes(&mut out, path.as_bytes());
                        match inline {
                            Some(bytes) => {
                                out.push(1);
                                put_bytes(&mut out, bytes);
                            }
                            None => out.push(0),
                        }
                        put_u32(&mut out, sentinels.len() as u32);
                        for (col, cause) in sentinels {
                            put_u32(&mut out, *col);
                            out.push(*cause);
                        }
                    }
                }
            }
            Message::OptEBcast(opt_e) => {
                out.push(TAG_OPTE_BCAST);
                put_u32(&mut out, opt_e.len() as u32);
                for e in opt_e {
                    put_u32(&mut out, *e);
                }
            }
            Message::Done => out.push(TAG_DONE),
            Message::Shutdown => out.push(TAG_SHUTDOWN),
            Message::PushDataset(job) => {
                out.push(TAG_PUSH_DATASET);
                put_u32(&mut out, job.e_max);
                put_u32(&mut out, job.tau);
                out.push(u8::from(job.exclude_self));
                out.push(u8::from(job.inline_results));
                match &job.dataset {
                    DatasetSource::Path { path, format } => {
                        out.push(0);
                        out.push(*format);
                        put_bytes(&mut out, path.as_bytes());
                    }
                    DatasetSource::Inline(bytes) => {
                        out.push(1);
                        put_bytes(&mut out, bytes);
                    }
                }
            }
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Message> {
        let mut r = Reader::new(buf);
        let tag = r.u8()?;
        let msg = match tag {
            TAG_HELLO => Message::Hello {
                version: r.u32()?,
                worker_id: r.u32()?,
                threads: r.u32()?,
            },
            TAG_TASK_REQ => Message::TaskReq,
            TAG_TASK => {
                let n = r.u32()? as usize;
                let mut tasks = Vec::with_capacity(n.min(1 << 20));
                for _ in 0..n {
                    tasks.push(TaskAssignment {
                        task_id: r.u64()?,
                        kind: TaskKind::from_code(r.u8()?)?,
                        series: r.u32()?,
                        e_lo: r.u32()?,
                        e_hi: r.u32()?,
                    });
                }
                Message::Task(tasks)
            }
            TAG_RESULT => {
                let kind = TaskKind::from_code(r.u8()?)?;
                match kind {
                    TaskKind::SimplexE => {
                        let task_id = r.u64()?;
                        let series = r.u32()?;
                        let best_e = r.u32()?;
                        let rho = r.f64()?;
                        let n = r.u32()? as usize;
                        let mut rho_by_e = Vec::with_capacity(n.min(1 << 20));
                        for _ in 0..n {
                            rho_by_e.push(r.f64()?);
                        }
                        Message::Result(TaskResult::Simplex {
                            task_id,
                            series,
                            best_e,
                            rho,
                            rho_by_e,
                        })
                    }
                    TaskKind::CcmRow => {
                        let task_id = r.u64()?;
                        let series = r.u32()?;
                        let path = r.string()?;
                        let inline = match r.u8()? {
                            0 => None,
                            1 => Some(r.bytes()?),
                            other => {
                                return Err(Error::Protocol(format!(
                                    "bad inline flag {other}"
                                )))
                            }
                        };
                        let n = r.u32()? as usize;
                        let mut sentinels = Vec::with_capacity(n.min(1 << 20));
                        for _ in 0..n {
                            sentinels.push((r.u32()?, r.u8()?));
                        }
                        Message::Result(TaskResult::CcmRow {
                            task_id,
                            series,
                            path,
                            inline,
                            sentinels,
                        })
                    }
                }
            }
            TAG_OPTE_BCAST => {
                let n = r.u32()? as usize;
                let mut opt_e = Vec::with_capacity(n.min(1 << 20));
                for _ in 0..n {
                    opt_e.push(r.u32()?);
                }
                Message::OptEBcast(opt_e)
            }
            TAG_DONE => Message::Done,
            TAG_SHUTDOWN => Message::Shutdown,
            TAG_PUSH_DATASET => {
                let e_max = r.u32()?;
                let tau = r.u32()?;
                let exclude_self = r.u8()? != 0;
                let inline_results = r.u8()? != 0;
                let dataset = match r.u8()? {
                    0 => DatasetSource::Path {
                        format: r.u8()?,
                        path: r.string()?,
                    },
                    1 => DatasetSource::Inline(r.bytes()?),
                    other => {
                        return Err(Error::Protocol(format!(
                            "bad dataset source {other}"
                        )))
                    }
                };
                Message::PushDataset(JobSetup {
                    e_max,
                    tau,
                    exclude_self,
                    inline_results,
                    dataset,
                })
            }
            other => return Err(Error::Protocol(format!("unknown message tag {other}"))),
        };
        r.finish()?;
        Ok(msg)
    }
}

/// Writes one frame: u32 length prefix + body.
pub fn write_message(stream: &mut impl Write, msg: &Message) -> Result<()> {
    let body = msg.encode();
    let len = body.len() as u32;
    if len > MAX_FRAME_LEN {
        return Err(Error::Protocol(format!("frame too large: {len} bytes")));
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&body);
    stream
        .write_all(&out)
        .map_err(|e| Error::Protocol(format!("write failed: {e}")))
}

/// Reads one frame. Returns Ok(None) on clean EOF at a frame boundary.
pub fn read_message(stream: &mut impl Read) -> Result<Option<Message>> {
    let mut len_buf = [0u8; 4];
    match stream.read_exact(&mut len_buf) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(Error::Protocol(format!("read failed: {e}"))),
    }
    let len = u32::from_le_bytes(len_buf);
    if len > MAX_FRAME_LEN {
        return Err(Error::Protocol(format!("frame too large: {len} bytes")));
    }
    let mut body = vec![0u8; len as usize];
    stream
        .read_exact(&mut body)
        .map_err(|e| Error::Protocol(format!("read failed: {e}")))?;
    Message::decode(&body).map(Some)
}
