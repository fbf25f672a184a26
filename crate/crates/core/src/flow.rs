//! Flow records, class labels and the nfdump-style CSV flow format.
//!
//! Each line carries 13 comma-separated columns:
//!
//! ```text
//! te,td,sa,da,sp,dp,pr,flg,fwd,stos,ipkt,ibyt,label
//! 2016-03-19 00:00:01,0.5,10.0.0.1,10.0.0.2,1234,80,TCP,....S.,0,0,3,180,background
//! ```
//!
//! `te` is the flow end time (`YYYY-MM-DD hh:mm:ss` with optional fraction),
//! read as a naive timestamp and stored with millisecond resolution.
//! Files may be gzip-compressed; compression is detected from the magic bytes.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::net::IpAddr;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime};
use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FLOW_COLUMNS: usize = 13;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    #[serde(rename = "background")]
    Background,
    #[serde(rename = "blacklist")]
    Blacklist,
    #[serde(rename = "nerisbotnet")]
    NerisBotnet,
    #[serde(rename = "anomaly-spam")]
    AnomalySpam,
    #[serde(rename = "dos")]
    Dos,
    #[serde(rename = "scan11")]
    Scan11,
    #[serde(rename = "scan44")]
    Scan44,
    #[serde(rename = "anomaly-udpscan")]
    AnomalyUdpScan,
    #[serde(rename = "anomaly-sshscan")]
    AnomalySshScan,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 9] = [
        ClassLabel::Background,
        ClassLabel::Blacklist,
        ClassLabel::NerisBotnet,
        ClassLabel::AnomalySpam,
        ClassLabel::Dos,
        ClassLabel::Scan11,
        ClassLabel::Scan44,
        ClassLabel::AnomalyUdpScan,
        ClassLabel::AnomalySshScan,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Background => "background",
            ClassLabel::Blacklist => "blacklist",
            ClassLabel::NerisBotnet => "nerisbotnet",
            ClassLabel::AnomalySpam => "anomaly-spam",
            ClassLabel::Dos => "dos",
            ClassLabel::Scan11 => "scan11",
            ClassLabel::Scan44 => "scan44",
            ClassLabel::AnomalyUdpScan => "anomaly-udpscan",
            ClassLabel::AnomalySshScan => "anomaly-sshscan",
        }
    }

    pub fn is_attack(self) -> bool {
        self != ClassLabel::Background
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

/// True for every label except background.
pub fn is_attack(label: ClassLabel) -> bool {
    label.is_attack()
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassLabel::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown class label `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Protocol {
    Tcp,
    Udp,
    Icmp,
    Other(u8),
}

impl Protocol {
    pub fn code(self) -> u8 {
        match self {
            Protocol::Tcp => 6,
            Protocol::Udp => 17,
            Protocol::Icmp => 1,
            Protocol::Other(c) => c,
        }
    }

    pub fn from_code(code: u8) -> Self {
        match code {
            6 => Protocol::Tcp,
            17 => Protocol::Udp,
            1 => Protocol::Icmp,
            c => Protocol::Other(c),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Tcp => f.write_str("TCP"),
            Protocol::Udp => f.write_str("UDP"),
            Protocol::Icmp => f.write_str("ICMP"),
            Protocol::Other(c) => write!(f, "{c}"),
        }
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let named = match s.to_ascii_uppercase().as_str() {
            "TCP" => Some(6),
            "UDP" => Some(17),
            "ICMP" => Some(1),
            "IGMP" => Some(2),
            "IPV6" => Some(41),
            "GRE" => Some(47),
            "ESP" => Some(50),
            "AH" => Some(51),
            "ICMP6" | "IPV6-ICMP" => Some(58),
            "SCTP" => Some(132),
            _ => None,
        };
        match named {
            Some(code) => Ok(Protocol::from_code(code)),
            None => s
                .parse::<u8>()
                .map(Protocol::from_code)
                .map_err(|_| format!("unknown protocol `{s}`")),
        }
    }
}

/// The six classic TCP flags, stored as a bitmask in nfdump column order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TcpFlags(u8);

impl TcpFlags {
    pub const FIN: TcpFlags = TcpFlags(0x01);
    pub const SYN: TcpFlags = TcpFlags(0x02);
    pub const RST: TcpFlags = TcpFlags(0x04);
    pub const PSH: TcpFlags = TcpFlags(0x08);
    pub const ACK: TcpFlags = TcpFlags(0x10);
    pub const URG: TcpFlags = TcpFlags(0x20);

    // Display order of the nfdump flag string "UAPRSF".
    const ORDER: [(char, u8); 6] = [('U', 0x20), ('A', 0x10), ('P', 0x08), ('R', 0x04), ('S', 0x02), ('F', 0x01)];

    pub const fn empty() -> Self {
        TcpFlags(0)
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    pub const fn from_bits(bits: u8) -> Self {
        TcpFlags(bits & 0x3f)
    }

    pub const fn union(self, other: TcpFlags) -> Self {
        TcpFlags(self.0 | other.0)
    }

    pub const fn contains(self, other: TcpFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub const fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl std::ops::BitOr for TcpFlags {
    type Output = TcpFlags;
    fn bitor(self, rhs: TcpFlags) -> TcpFlags {
        self.union(rhs)
    }
}

impl fmt::Display for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (c, bit) in Self::ORDER {
            if self.0 & bit != 0 {
                write!(f, "{c}")?;
            } else {
                f.write_str(".")?;
            }
        }
        Ok(())
    }
}

impl FromStr for TcpFlags {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.len() != 6 {
            return Err(format!("flag string `{s}` must have 6 positions"));
        }
        let mut bits = 0u8;
        for (ch, (expected, bit)) in s.chars().zip(Self::ORDER) {
            if ch == expected {
                bits |= bit;
            } else if ch != '.' {
                return Err(format!("flag string `{s}`: unexpected `{ch}` where `{expected}` or `.` belongs"));
            }
        }
        Ok(TcpFlags(bits))
    }
}

/// One unidirectional flow record.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    /// Flow end time, milliseconds since the epoch.
    pub end_time_ms: i64,
    /// Seconds, never negative.
    pub duration: f64,
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Protocol,
    pub tcp_flags: TcpFlags,
    pub fwd_status: u32,
    pub tos: u32,
    pub packets: u64,
    pub bytes: u64,
    pub label: ClassLabel,
}

impl FlowRecord {
    /// End time in (fractional) seconds since the epoch.
    pub fn end_time(&self) -> f64 {
        self.end_time_ms as f64 / 1000.0
    }

    /// Checks the record invariants and clears TCP flags on non-TCP flows.
    pub fn normalized(mut self) -> std::result::Result<Self, String> {
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(format!("duration {} must be finite and >= 0", self.duration));
        }
        if self.packets == 0 {
            return Err("packet count must be >= 1".into());
        }
        if self.bytes == 0 {
            return Err("byte count must be >= 1".into());
        }
        if self.protocol != Protocol::Tcp {
            self.tcp_flags = TcpFlags::empty();
        }
        Ok(self)
    }

    /// Formats the record as one CSV line (no trailing newline).
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            format_timestamp(self.end_time_ms),
            self.duration,
            self.src_ip,
            self.dst_ip,
            self.src_port,
            self.dst_port,
            self.protocol,
            self.tcp_flags,
            self.fwd_status,
            self.tos,
            self.packets,
            self.bytes,
            self.label
        )
    }
}

fn format_timestamp(ms: i64) -> String {
    let secs = ms.div_euclid(1000);
    let frac = ms.rem_euclid(1000);
    let dt = DateTime::from_timestamp(secs, 0)
        .map(|d| d.naive_utc())
        .unwrap_or_default();
    if frac == 0 {
        dt.format(TIMESTAMP_FORMAT).to_string()
    } else {
        format!("{}.{frac:03}", dt.format(TIMESTAMP_FORMAT))
    }
}

fn parse_timestamp(s: &str) -> std::result::Result<i64, String> {
    let (whole, frac) = match s.split_once('.') {
        Some((w, f)) => (w, Some(f)),
        None => (s, None),
    };
    let dt = NaiveDateTime::parse_from_str(whole, TIMESTAMP_FORMAT)
        .map_err(|e| format!("bad timestamp `{s}`: {e}"))?;
    let millis = match frac {
        None => 0,
        Some(f) if !f.is_empty() && f.len() <= 9 && f.bytes().all(|b| b.is_ascii_digit()) => {
            // Truncate to millisecond resolution.
            let padded = format!("{f:0<3}");
            padded[..3].parse::<i64>().expect("three ascii digits")
        }
        Some(_) => return Err(format!("bad fractional seconds in `{s}`")),
    };
    Ok(dt.and_utc().timestamp() * 1000 + millis)
}

fn field<T: FromStr>(raw: &str, name: &str) -> std::result::Result<T, String> {
    raw.trim()
        .parse::<T>()
        .map_err(|_| format!("column {name}: cannot parse `{raw}`"))
}

fn parse_fields(line: &str) -> std::result::Result<FlowRecord, String> {
    let cols: Vec<&str> = line.trim_end_matches(['\r', '\n']).split(',').collect();
    if cols.len() != FLOW_COLUMNS {
        return Err(format!("wrong column count: expected {FLOW_COLUMNS}, found {}", cols.len()));
    }
    let protocol: Protocol = cols[6].trim().parse()?;
    let tcp_flags: TcpFlags = cols[7].trim().parse()?;
    let label: ClassLabel = cols[12]
        .trim()
        .parse()
        .map_err(|e: Error| e.to_string())?;
    FlowRecord {
        end_time_ms: parse_timestamp(cols[0].trim())?,
        duration: field(cols[1], "td")?,
        src_ip: field(cols[2], "sa")?,
        dst_ip: field(cols[3], "da")?,
        src_port: field(cols[4], "sp")?,
        dst_port: field(cols[5], "dp")?,
        protocol,
        tcp_flags,
        fwd_status: field(cols[8], "fwd")?,
        tos: field(cols[9], "stos")?,
        packets: field(cols[10], "ipkt")?,
        bytes: field(cols[11], "ibyt")?,
        label,
    }
    .normalized()
}

/// Parses one CSV flow line; errors report line 1.
pub fn parse_flow_line(line: &str) -> Result<FlowRecord> {
    parse_numbered_line(line, 1)
}

pub fn parse_numbered_line(line: &str, line_no: usize) -> Result<FlowRecord> {
    parse_fields(line).map_err(|reason| Error::Parse { line: line_no, reason })
}

/// Streaming reader over a plain or gzip-compressed flow file.
///
/// Blank lines are skipped. The first malformed line yields an error and
/// ends the stream.
pub struct FlowReader {
    lines: Box<dyn BufRead + Send>,
    line_no: usize,
    buf: String,
    failed: bool,
}

impl FlowReader {
    pub fn new<R: Read + Send + 'static>(reader: R) -> Result<Self> {
        let mut buffered = BufReader::with_capacity(1 << 16, reader);
        let is_gzip = buffered.fill_buf()?.starts_with(&[0x1f, 0x8b]);
        let lines: Box<dyn BufRead + Send> = if is_gzip {
            Box::new(BufReader::with_capacity(1 << 16, MultiGzDecoder::new(buffered)))
        } else {
            Box::new(buffered)
        };
        Ok(FlowReader { lines, line_no: 0, buf: String::new(), failed: false })
    }

    /// Current 1-based line number (of the last line read).
    pub fn line_no(&self) -> usize {
        self.line_no
    }
}

impl Iterator for FlowReader {
    type Item = Result<FlowRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            self.buf.clear();
            match self.lines.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {
                    self.line_no += 1;
                    if self.buf.trim().is_empty() {
                        continue;
                    }
                    let parsed = parse_numbered_line(&self.buf, self.line_no);
                    self.failed = parsed.is_err();
                    return Some(parsed);
                }
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e.into()));
                }
            }
        }
    }
}

/// Opens `path` and streams its flows in file order.
pub fn stream_flows(path: impl AsRef<Path>) -> Result<FlowReader> {
    FlowReader::new(File::open(path)?)
}

/// Writes flows as CSV lines.
pub fn write_flows<'a, W: std::io::Write>(
    mut out: W,
    flows: impl IntoIterator<Item = &'a FlowRecord>,
) -> Result<()> {
    for flow in flows {
        writeln!(out, "{}", flow.to_csv_line())?;
    }
    out.flush()?;
    Ok(())
}
