//! Robot stand-in: newline-delimited JSON commands over TCP, optionally
//! acknowledged with a single `0x06` byte per command.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ACK: u8 = 0x06;
pub const SINK_LOG_HEADER: &str = "seq,t_capture,t_recv,z,y,x";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SinkMode {
    Streaming,
    Blocking,
}

impl std::str::FromStr for SinkMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "streaming" => Ok(SinkMode::Streaming),
            "blocking" => Ok(SinkMode::Blocking),
            _ => Err(Error::InvalidArgument(format!(
                "unknown sink mode '{s}' (streaming, blocking)"
            ))),
        }
    }
}

/// One wire message. `t` is the replay-clock time of the newest frame in
/// the window the command was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotCommand {
    pub seq: u64,
    pub t: f64,
    pub zyx: [f64; 3],
}

impl RobotCommand {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("plain struct serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SinkStats {
    pub received: u64,
    pub logged: u64,
    pub malformed: u64,
    pub seq_regressions: u64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkLogRow {
    pub seq: u64,
    pub t_capture: f64,
    pub t_recv: f64,
    pub zyx: [f64; 3],
}

pub struct RobotSink {
    listener: TcpListener,
    mode: SinkMode,
    ack_delay: Duration,
}

impl RobotSink {
    pub fn bind(addr: impl ToSocketAddrs, mode: SinkMode, ack_delay: Duration) -> Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            mode,
            ack_delay,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts one connection and logs every command until the peer closes.
    /// The CSV log is written to a temporary file and renamed on completion.
    pub fn run(self, log_path: &Path) -> Result<SinkStats> {
        let RobotSink {
            listener,
            mode,
            ack_delay,
        } = self;
        let (stream, peer) = listener.accept()?;
        drop(listener);
        log::info!("sink: connection from {peer}");
        stream.set_nodelay(true)?;
        let start = Instant::now();
        let tmp = tmp_path(log_path);
        let file = std::fs::File::create(&tmp).map_err(|e| Error::file(&tmp, e))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{SINK_LOG_HEADER}")?;

        let mut writer = stream.try_clone()?;
        let mut reader = BufReader::new(stream);
        let mut stats = SinkStats::default();
        let mut last_seq: Option<u64> = None;
        let mut line = String::new();
        loop {
            line.clear();
            match reader.read_line(&mut line) {
                Ok(0) => break,
                Ok(_) => {}
                Err(e) if e.kind() == std::io::ErrorKind::InvalidData => {
                    stats.malformed += 1;
                    continue;
                }
                Err(e) if e.kind() == std::io::ErrorKind::ConnectionReset => break,
                Err(e) => return Err(e.into()),
            }
            let t_recv = start.elapsed().as_secs_f64();
            let text = line.trim_end();
            if text.is_empty() {
                continue;
            }
            stats.received += 1;
            let cmd: RobotCommand = match serde_json::from_str(text) {
                Ok(c) => c,
                Err(e) => {
                    log::warn!("sink: skipping malformed line: {e}");
                    stats.malformed += 1;
                    continue;
                }
            };
            if last_seq.is_some_and(|s| cmd.seq <= s) {
                stats.seq_regressions += 1;
            }
            last_seq = Some(cmd.seq);
            writeln!(
                out,
                "{},{},{},{},{},{}",
                cmd.seq, cmd.t, t_recv, cmd.zyx[0], cmd.zyx[1], cmd.zyx[2]
            )?;
            stats.logged += 1;
            if mode == SinkMode::Blocking {
                std::thread::sleep(ack_delay);
                if writer.write_all(&[ACK]).is_err() {
                    break;
                }
            }
        }
        out.flush()?;
        out.get_ref().sync_all()?;
        drop(out);
        std::fs::rename(&tmp, log_path).map_err(|e| Error::file(log_path, e))?;
        stats.elapsed_s = start.elapsed().as_secs_f64();
        Ok(stats)
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp"))
}

/// Sending side of the sink protocol.
pub struct SinkClient {
    addr: SocketAddr,
    mode: SinkMode,
    stream: TcpStream,
}

impl SinkClient {
    pub fn connect(addr: SocketAddr, mode: SinkMode) -> Result<Self> {
        Ok(Self {
            addr,
            mode,
            stream: Self::open(addr)?,
        })
    }

    fn open(addr: SocketAddr) -> Result<TcpStream> {
        let s = TcpStream::connect_timeout(&addr, Duration::from_secs(5))?;
        s.set_nodelay(true)?;
        s.set_read_timeout(Some(Duration::from_secs(5)))?;
        Ok(s)
    }

    pub fn mode(&self) -> SinkMode {
        self.mode
    }

    /// Sends one command; in blocking mode waits for the acknowledgement.
    pub fn send(&mut self, cmd: &RobotCommand) -> Result<()> {
        self.stream.write_all(cmd.to_line().as_bytes())?;
        if self.mode == SinkMode::Blocking {
            let mut b = [0u8; 1];
            self.stream.read_exact(&mut b)?;
            if b[0] != ACK {
                return Err(Error::Protocol(format!("expected ACK, got byte {:#04x}", b[0])));
            }
        }
        Ok(())
    }

    pub fn reconnect(&mut self) -> Result<()> {
        self.stream = Self::open(self.addr)?;
        Ok(())
    }

    /// Writes raw bytes; used to exercise the sink with bad input.
    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<()> {
        Ok(self.stream.write_all(bytes)?)
    }

    pub fn close(self) -> Result<()> {
        self.stream.shutdown(std::net::Shutdown::Write)?;
        // Drain until the sink closes so its log is complete when we return.
        let mut rest = Vec::new();
        let mut s = self.stream;
        s.set_read_timeout(Some(Duration::from_secs(10)))?;
        let _ = s.read_to_end(&mut rest);
        Ok(())
    }
}

pub fn read_sink_log(path: &Path) -> Result<Vec<SinkLogRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(SINK_LOG_HEADER) {
        return Err(Error::Validation(format!("{}: not a sink log", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let bad = || Error::Validation(format!("{} line {}: malformed row", path.display(), i + 2));
            let v: Vec<&str> = l.split(',').collect();
            if v.len() != 6 {
                return Err(bad());
            }
            let f = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(SinkLogRow {
                seq: v[0].parse().map_err(|_| bad())?,
                t_capture: f(v[1])?,
                t_recv: f(v[2])?,
                zyx: [f(v[3])?, f(v[4])?, f(v[5])?],
            })
        })
        .collect()
}
