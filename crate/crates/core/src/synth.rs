//! Seeded synthetic flow traffic: background plus caricatured attack classes.
//!
//! Every attack sample is one attacker address active in one window with
//! enough flows to survive the minimum-flow filter. Background hosts have
//! individual service mixes and activity levels, so some of their windows
//! fall below the filter. Train and test use disjoint background address
//! pools and different days.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::{IpAddr, Ipv4Addr};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{DEFAULT_MIN_FLOWS, DEFAULT_WINDOW_SECONDS};
use crate::flow::{write_flows, ClassLabel, FlowRecord, Protocol, TcpFlags};
use crate::rng::{derive_seed, substream, STREAM_GEN};

/// Classes the generator knows how to produce.
pub const GENERATED_ATTACKS: [ClassLabel; 5] =
    [ClassLabel::Dos, ClassLabel::Scan11, ClassLabel::Scan44, ClassLabel::NerisBotnet, ClassLabel::AnomalySpam];

/// 2016-07-27 00:00:00 UTC.
const TRAIN_START_MS: i64 = 1_469_577_600_000;
const DAY_MS: i64 = 86_400_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPlan {
    /// Attack samples (attacker windows) in the training file.
    pub train_windows: usize,
    pub test_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    /// Simulated length of each file.
    pub duration_seconds: u64,
    pub train_background_sources: usize,
    pub test_background_sources: usize,
    pub attacks: BTreeMap<ClassLabel, ClassPlan>,
    pub window_seconds: u32,
}

impl Default for GenConfig {
    fn default() -> Self {
        let plan = |train_windows, test_windows| ClassPlan { train_windows, test_windows };
        GenConfig {
            seed: 0,
            duration_seconds: 3 * 3600,
            train_background_sources: 50,
            test_background_sources: 40,
            attacks: BTreeMap::from([
                (ClassLabel::Dos, plan(200, 150)),
                (ClassLabel::Scan11, plan(200, 150)),
                (ClassLabel::Scan44, plan(200, 152)),
                (ClassLabel::NerisBotnet, plan(200, 150)),
                (ClassLabel::AnomalySpam, plan(200, 150)),
            ]),
            window_seconds: DEFAULT_WINDOW_SECONDS,
        }
    }
}

impl GenConfig {
    /// A small configuration for quick tests.
    pub fn small(seed: u64) -> Self {
        let mut cfg = GenConfig { seed, duration_seconds: 3600, train_background_sources: 12, test_background_sources: 10, ..Default::default() };
        for plan in cfg.attacks.values_mut() {
            *plan = ClassPlan { train_windows: 24, test_windows: 16 };
        }
        cfg
    }

    fn windows(&self) -> i64 {
        (self.duration_seconds / u64::from(self.window_seconds)) as i64
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_background_sources == 0 || self.test_background_sources == 0 {
            return Err(Error::invalid("generator needs background sources in both splits"));
        }
        if self.window_seconds == 0 || self.windows() == 0 {
            return Err(Error::invalid("duration must cover at least one window"));
        }
        if let Some(bad) = self.attacks.keys().find(|l| !GENERATED_ATTACKS.contains(l)) {
            return Err(Error::invalid(format!("no traffic profile for class `{bad}`")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub flows: u64,
    /// Windows generated for the class; for background this counts every
    /// active host window, including those the extractor will drop.
    pub windows: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenManifest {
    pub seed: u64,
    pub config: GenConfig,
    pub train: BTreeMap<ClassLabel, ClassCounts>,
    pub test: BTreeMap<ClassLabel, ClassCounts>,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub train: Vec<FlowRecord>,
    pub test: Vec<FlowRecord>,
    pub manifest: GenManifest,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Split {
    Train,
    Test,
}

fn ipv4(a: u8, b: u8, n: u32) -> IpAddr {
    let [_, _, c, d] = n.to_be_bytes();
    IpAddr::V4(Ipv4Addr::new(a, b, c, d))
}

fn ephemeral<R: Rng>(rng: &mut R) -> u16 {
    rng.random_range(32768..=60999)
}

/// Builder for the flows of one (source, window).
struct Emitter<'a> {
    out: &'a mut Vec<FlowRecord>,
    window_start_ms: i64,
    window_ms: i64,
    src_ip: IpAddr,
    label: ClassLabel,
}

struct FlowShape {
    dst_ip: IpAddr,
    src_port: u16,
    dst_port: u16,
    protocol: Protocol,
    flags: TcpFlags,
    packets: u64,
    bytes: u64,
    duration: f64,
}

impl Emitter<'_> {
    fn emit_at(&mut self, offset_ms: i64, f: FlowShape) {
        let flags = if f.protocol == Protocol::Tcp { f.flags } else { TcpFlags::empty() };
        self.out.push(FlowRecord {
            end_time_ms: self.window_start_ms + offset_ms.clamp(0, self.window_ms - 1),
            duration: (f.duration * 1000.0).round() / 1000.0,
            src_ip: self.src_ip,
            dst_ip: f.dst_ip,
            src_port: f.src_port,
            dst_port: f.dst_port,
            protocol: f.protocol,
            tcp_flags: flags,
            fwd_status: 0,
            tos: 0,
            packets: f.packets.max(1),
            bytes: f.bytes.max(f.packets.max(1) * 20),
            label: self.label,
        });
    }

    fn emit<R: Rng>(&mut self, rng: &mut R, f: FlowShape) {
        let at = rng.random_range(0..self.window_ms);
        self.emit_at(at, f);
    }
}

const FULL_TCP: TcpFlags = TcpFlags::from_bits(0x1b); // ACK PSH SYN FIN
const DATA_TCP: TcpFlags = TcpFlags::from_bits(0x18); // ACK PSH

#[derive(Clone, Copy)]
enum Service {
    Https,
    Http,
    Dns,
    Ntp,
    Ssh,
    Mail,
    Imap,
    NetBios,
    HighTcp,
    HighUdp,
    ServeWeb,
    Refused,
}

const SERVICES: [Service; 12] = [
    Service::Https,
    Service::Http,
    Service::Dns,
    Service::Ntp,
    Service::Ssh,
    Service::Mail,
    Service::Imap,
    Service::NetBios,
    Service::HighTcp,
    Service::HighUdp,
    Service::ServeWeb,
    Service::Refused,
];

/// Typical service popularity; each host scales these by random factors.
const SERVICE_WEIGHTS: [f64; 12] = [0.34, 0.12, 0.2, 0.03, 0.04, 0.015, 0.03, 0.03, 0.1, 0.06, 0.0, 0.02];

struct BackgroundHost {
    ip: IpAddr,
    /// Mean flows per window.
    rate: f64,
    weights: Vec<f64>,
    resolver: IpAddr,
}

impl BackgroundHost {
    fn draw<R: Rng>(ip: IpAddr, rng: &mut R) -> Self {
        let rate = LogNormal::new(28f64.ln(), 0.55).unwrap().sample(rng);
        let mut weights: Vec<f64> = SERVICE_WEIGHTS.iter().map(|w| w * Exp::new(1.0).unwrap().sample(rng)).collect();
        if rng.random_bool(0.2) {
            // Hosts that mostly answer web requests.
            weights[10] = 2.0 * weights.iter().sum::<f64>();
        }
        if rng.random_bool(0.15) {
            // Misconfigured or monitoring hosts with many unanswered connection attempts.
            weights[11] = rng.random_range(0.3..1.5) * weights.iter().sum::<f64>();
        }
        let resolver = ipv4(192, 168, rng.random_range(1..=3));
        BackgroundHost { ip, rate, weights, resolver }
    }

    fn pick<R: Rng>(&self, rng: &mut R) -> Service {
        let total: f64 = self.weights.iter().sum();
        let mut x = rng.random_range(0.0..total);
        for (s, w) in SERVICES.iter().zip(&self.weights) {
            if x < *w {
                return *s;
            }
            x -= w;
        }
        Service::Https
    }
}

/// Web-like session: heavy-tailed packet count and payload.
fn session<R: Rng>(rng: &mut R, median_packets: f64) -> (u64, u64, f64) {
    let packets = LogNormal::new(median_packets.ln(), 0.9).unwrap().sample(rng).ceil() as u64;
    let size = LogNormal::new(500f64.ln(), 0.7).unwrap().sample(rng).clamp(40.0, 1500.0);
    let duration = Exp::new(0.25).unwrap().sample(rng) * (packets as f64).sqrt() / 3.0;
    (packets, (packets as f64 * size) as u64, duration)
}

fn popular_server<R: Rng>(rng: &mut R) -> IpAddr {
    // Roughly Zipf over 400 servers.
    let u: f64 = rng.random_range(0.0..1.0);
    ipv4(198, 18, (400f64.powf(u) - 1.0) as u32)
}

fn background_flow<R: Rng>(host: &BackgroundHost, rng: &mut R) -> FlowShape {
    let service = host.pick(rng);
    let client = |dst_ip, dst_port, protocol, flags, (packets, bytes, duration): (u64, u64, f64), rng: &mut R| FlowShape {
        dst_ip,
        src_port: ephemeral(rng),
        dst_port,
        protocol,
        flags,
        packets,
        bytes,
        duration,
    };
    let tcp_flags = |rng: &mut R| if rng.random_bool(0.85) { FULL_TCP } else { DATA_TCP };
    match service {
        Service::Https => {
            let s = session(rng, 14.0);
            let f = tcp_flags(rng);
            client(popular_server(rng), 443, Protocol::Tcp, f, s, rng)
        }
        Service::Http => {
            let s = session(rng, 8.0);
            let f = tcp_flags(rng);
            client(popular_server(rng), 80, Protocol::Tcp, f, s, rng)
        }
        Service::Dns => {
            let packets = rng.random_range(1..=2);
            let bytes = packets * rng.random_range(60..160);
            client(host.resolver, 53, Protocol::Udp, TcpFlags::empty(), (packets, bytes, rng.random_range(0.0..0.05)), rng)
        }
        Service::Ntp => client(ipv4(192, 168, 10), 123, Protocol::Udp, TcpFlags::empty(), (1, 76, 0.0), rng),
        Service::Ssh => {
            let (p, b, d) = session(rng, 40.0);
            client(ipv4(10, 200, rng.random_range(0..30)), 22, Protocol::Tcp, FULL_TCP, (p, b, d * 4.0), rng)
        }
        Service::Mail => {
            let s = session(rng, 12.0);
            client(ipv4(192, 168, 25), 25, Protocol::Tcp, FULL_TCP, s, rng)
        }
        Service::Imap => {
            let s = session(rng, 10.0);
            let port = if rng.random_bool(0.7) { 143 } else { 110 };
            client(ipv4(192, 168, 26), port, Protocol::Tcp, FULL_TCP, s, rng)
        }
        Service::NetBios => {
            let port = *[137u16, 138, 139].choose(rng).unwrap();
            let proto = if port == 139 { Protocol::Tcp } else { Protocol::Udp };
            let packets = rng.random_range(1..=4);
            client(ipv4(10, 0, rng.random_range(0..250)), port, proto, FULL_TCP, (packets, packets * 90, rng.random_range(0.0..1.0)), rng)
        }
        Service::HighTcp => {
            let s = session(rng, 20.0);
            let port = rng.random_range(1025..=65535);
            let ip = ipv4(100, 64, rng.random_range(0..60000));
            let f = tcp_flags(rng);
            client(ip, port, Protocol::Tcp, f, s, rng)
        }
        Service::HighUdp => {
            let (p, b, d) = session(rng, 6.0);
            let port = rng.random_range(1025..=65535);
            client(ipv4(100, 64, rng.random_range(0..60000)), port, Protocol::Udp, TcpFlags::empty(), (p, b, d), rng)
        }
        Service::Refused => {
            let port = if rng.random_bool(0.6) { 443 } else { 80 };
            let server = popular_server(rng);
            syn_probe(rng, server, port)
        }
        Service::ServeWeb => {
            let (packets, bytes, duration) = session(rng, 18.0);
            FlowShape {
                dst_ip: ipv4(100, 65, rng.random_range(0..60000)),
                src_port: if rng.random_bool(0.8) { 443 } else { 80 },
                dst_port: ephemeral(rng),
                protocol: Protocol::Tcp,
                flags: tcp_flags(rng),
                packets,
                bytes,
                duration,
            }
        }
    }
}

fn syn_probe<R: Rng>(rng: &mut R, dst_ip: IpAddr, dst_port: u16) -> FlowShape {
    let packets = if rng.random_bool(0.9) { 1 } else { 2 };
    FlowShape {
        dst_ip,
        src_port: ephemeral(rng),
        dst_port,
        protocol: Protocol::Tcp,
        flags: TcpFlags::SYN,
        packets,
        bytes: packets * rng.random_range(40..=44),
        duration: if packets == 1 { 0.0 } else { rng.random_range(0.5..3.0) },
    }
}

/// Destination port sequence of a sweep: a contiguous run from a random start.
fn sweep_ports<R: Rng>(rng: &mut R, n: usize) -> Vec<u16> {
    let start: u32 = if rng.random_bool(0.5) { 1 } else { rng.random_range(1..60000) };
    (0..n as u32).map(|i| ((start + i - 1) % 65535 + 1) as u16).collect()
}

struct Generator<'a> {
    config: &'a GenConfig,
    rng: ChaCha8Rng,
    flows: Vec<FlowRecord>,
    counts: BTreeMap<ClassLabel, ClassCounts>,
    start_ms: i64,
    split: Split,
}

impl Generator<'_> {
    fn window_ms(&self) -> i64 {
        i64::from(self.config.window_seconds) * 1000
    }

    /// Window start times aligned to the window grid.
    fn window_start(&self, w: i64) -> i64 {
        self.start_ms + w * self.window_ms()
    }

    fn random_window(&mut self) -> i64 {
        let n = self.config.windows();
        self.rng.random_range(0..n)
    }

    fn emitter_parts(&self, w: i64, src_ip: IpAddr, label: ClassLabel) -> (i64, i64, IpAddr, ClassLabel) {
        (self.window_start(w), self.window_ms(), src_ip, label)
    }

    fn record(&mut self, label: ClassLabel, flows: usize) {
        let c = self.counts.entry(label).or_default();
        c.flows += flows as u64;
        c.windows += 1;
    }

    fn with_emitter(&mut self, w: i64, src_ip: IpAddr, label: ClassLabel, body: impl FnOnce(&mut Emitter<'_>, &mut ChaCha8Rng)) {
        let (window_start_ms, window_ms, src_ip, label) = self.emitter_parts(w, src_ip, label);
        let before = self.flows.len();
        let mut e = Emitter { out: &mut self.flows, window_start_ms, window_ms, src_ip, label };
        body(&mut e, &mut self.rng);
        let added = self.flows.len() - before;
        if added > 0 {
            self.record(label, added);
        }
    }

    fn background(&mut self) {
        let (sources, second) = match self.split {
            Split::Train => (self.config.train_background_sources, 1),
            Split::Test => (self.config.test_background_sources, 2),
        };
        for i in 0..sources {
            let host = BackgroundHost::draw(ipv4(10, second, i as u32 + 1), &mut self.rng);
            for w in 0..self.config.windows() {
                let n = Poisson::new(host.rate).unwrap().sample(&mut self.rng) as usize;
                self.with_emitter(w, host.ip, ClassLabel::Background, |e, rng| {
                    for _ in 0..n {
                        let f = background_flow(&host, rng);
                        e.emit(rng, f);
                    }
                });
            }
        }
    }

    fn attacker_ip(&self, label: ClassLabel, n: usize) -> IpAddr {
        let base = match label {
            ClassLabel::Dos => 1,
            ClassLabel::Scan11 => 2,
            ClassLabel::Scan44 => 3,
            ClassLabel::NerisBotnet => 4,
            _ => 5,
        };
        let split = if self.split == Split::Train { 0 } else { 128 };
        ipv4(172, 16 + base, split * 256 + n as u32)
    }

    fn dos(&mut self, windows: usize) {
        for i in 0..windows {
            let w = self.random_window();
            let src = self.attacker_ip(ClassLabel::Dos, i);
            let victim = ipv4(198, 19, self.rng.random_range(0..8));
            let n = self.rng.random_range(40..=250);
            self.with_emitter(w, src, ClassLabel::Dos, |e, rng| {
                for _ in 0..n {
                    let f = syn_probe(rng, victim, 80);
                    e.emit(rng, f);
                }
            });
        }
    }

    fn sweep(&mut self, w: i64, src: IpAddr, label: ClassLabel, victims: &[IpAddr]) {
        // At least 32 probes per source either way.
        let per_victim = match victims.len() {
            1 => self.rng.random_range(32..=200),
            _ => self.rng.random_range(8..=50),
        };
        self.with_emitter(w, src, label, |e, rng| {
            for &victim in victims {
                for port in sweep_ports(rng, per_victim) {
                    let f = syn_probe(rng, victim, port);
                    e.emit(rng, f);
                }
            }
        });
    }

    fn scan11(&mut self, windows: usize) {
        for i in 0..windows {
            let w = self.random_window();
            let src = self.attacker_ip(ClassLabel::Scan11, i);
            let victim = ipv4(198, 20, self.rng.random_range(0..4096));
            self.sweep(w, src, ClassLabel::Scan11, &[victim]);
        }
    }

    /// Four sources each sweeping the same four victims.
    fn scan44(&mut self, windows: usize) {
        let mut made = 0;
        while made < windows {
            let w = self.random_window();
            let victims: Vec<IpAddr> = (0..4).map(|_| ipv4(198, 21, self.rng.random_range(0..4096))).collect();
            for _ in 0..4.min(windows - made) {
                let src = self.attacker_ip(ClassLabel::Scan44, made);
                self.sweep(w, src, ClassLabel::Scan44, &victims);
                made += 1;
            }
        }
    }

    /// Periodic beacons to a few command servers, mostly tunnelled over
    /// HTTPS, some on an uncommon port, with the DNS lookups that find them.
    fn botnet(&mut self, windows: usize) {
        const C2_PORTS: [u16; 5] = [6667, 4444, 16464, 5555, 7777];
        for i in 0..windows {
            let w = self.random_window();
            let src = self.attacker_ip(ClassLabel::NerisBotnet, i);
            let n_c2 = self.rng.random_range(2..=4);
            let c2: Vec<IpAddr> = (0..n_c2).map(|_| ipv4(203, 0, self.rng.random_range(0..12))).collect();
            let port = *C2_PORTS.choose(&mut self.rng).unwrap();
            let https_share = self.rng.random_range(0.4..0.8);
            let resolver = ipv4(192, 168, self.rng.random_range(1..=3));
            let n = self.rng.random_range(15..=45);
            self.with_emitter(w, src, ClassLabel::NerisBotnet, |e, rng| {
                let period = e.window_ms / n as i64;
                for k in 0..n {
                    let f = if rng.random_bool(0.2) {
                        FlowShape {
                            dst_ip: resolver,
                            src_port: ephemeral(rng),
                            dst_port: 53,
                            protocol: Protocol::Udp,
                            flags: TcpFlags::empty(),
                            packets: 1,
                            bytes: rng.random_range(60..160),
                            duration: 0.0,
                        }
                    } else {
                        let (packets, bytes, duration) = session(rng, 10.0);
                        FlowShape {
                            dst_ip: *c2.choose(rng).unwrap(),
                            src_port: ephemeral(rng),
                            dst_port: if rng.random_bool(https_share) { 443 } else { port },
                            protocol: Protocol::Tcp,
                            flags: FULL_TCP,
                            packets,
                            bytes,
                            duration,
                        }
                    };
                    let jitter = rng.random_range(-500..=500);
                    e.emit_at(k as i64 * period + period / 2 + jitter, f);
                }
            });
        }
    }

    /// Bursts of near-identical SMTP deliveries plus the MX lookups behind them.
    fn spam(&mut self, windows: usize) {
        for i in 0..windows {
            let w = self.random_window();
            let src = self.attacker_ip(ClassLabel::AnomalySpam, i);
            let template = self.rng.random_range(3000.0..6000.0);
            let n = self.rng.random_range(30..=150);
            self.with_emitter(w, src, ClassLabel::AnomalySpam, |e, rng| {
                for _ in 0..n {
                    let f = if rng.random_bool(0.75) {
                        let packets = rng.random_range(8..=14);
                        FlowShape {
                            dst_ip: ipv4(100, 70, rng.random_range(0..60000)),
                            src_port: ephemeral(rng),
                            dst_port: 25,
                            protocol: Protocol::Tcp,
                            flags: if rng.random_bool(0.9) { FULL_TCP } else { TcpFlags::from_bits(0x16) },
                            packets,
                            bytes: (template * rng.random_range(0.95..1.05)) as u64,
                            duration: rng.random_range(1.0..4.0),
                        }
                    } else {
                        FlowShape {
                            dst_ip: ipv4(192, 168, rng.random_range(1..=2)),
                            src_port: ephemeral(rng),
                            dst_port: 53,
                            protocol: Protocol::Udp,
                            flags: TcpFlags::empty(),
                            packets: 1,
                            bytes: rng.random_range(60..120),
                            duration: 0.0,
                        }
                    };
                    e.emit(rng, f);
                }
            });
        }
    }

    fn run(mut self) -> (Vec<FlowRecord>, BTreeMap<ClassLabel, ClassCounts>) {
        self.background();
        for (&label, plan) in &self.config.attacks {
            let windows = match self.split {
                Split::Train => plan.train_windows,
                Split::Test => plan.test_windows,
            };
            match label {
                ClassLabel::Dos => self.dos(windows),
                ClassLabel::Scan11 => self.scan11(windows),
                ClassLabel::Scan44 => self.scan44(windows),
                ClassLabel::NerisBotnet => self.botnet(windows),
                ClassLabel::AnomalySpam => self.spam(windows),
                _ => unreachable!("validated"),
            }
        }
        // Collector output is ordered by flow end time.
        self.flows.sort_by_key(|f| f.end_time_ms);
        (self.flows, self.counts)
    }
}

fn generate_split(config: &GenConfig, split: Split) -> (Vec<FlowRecord>, BTreeMap<ClassLabel, ClassCounts>) {
    let (name, start_ms) = match split {
        Split::Train => ("train", TRAIN_START_MS),
        Split::Test => ("test", TRAIN_START_MS + DAY_MS),
    };
    let rng = substream(derive_seed(config.seed, STREAM_GEN), name);
    Generator { config, rng, flows: Vec::new(), counts: BTreeMap::new(), start_ms, split }.run()
}

/// Generates both splits in memory.
pub fn generate(config: &GenConfig) -> Result<SynthDataset> {
    config.validate()?;
    let (train, train_counts) = generate_split(config, Split::Train);
    let (test, test_counts) = generate_split(config, Split::Test);
    let manifest = GenManifest { seed: config.seed, config: config.clone(), train: train_counts, test: test_counts, files: Vec::new() };
    Ok(SynthDataset { train, test, manifest })
}

/// Writes `train.csv`, `test.csv` and `manifest.json` into `dir`.
pub fn generate_to(config: &GenConfig, dir: impl AsRef<Path>) -> Result<GenManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut data = generate(config)?;
    let train_path = dir.join("train.csv");
    let test_path = dir.join("test.csv");
    for (path, flows) in [(&train_path, &data.train), (&test_path, &data.test)] {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_flows(&mut w, flows.iter())?;
        w.flush()?;
    }
    data.manifest.files = vec![PathBuf::from("train.csv"), PathBuf::from("test.csv")];
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut w, &data.manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(data.manifest)
}

/// Minimum flows per attack window the profiles produce.
pub const MIN_ATTACK_FLOWS: usize = 15;
const _: () = assert!(MIN_ATTACK_FLOWS > DEFAULT_MIN_FLOWS);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{extract_dataset, FeatureSchema};

    #[test]
    fn deterministic_and_valid() {
        let cfg = GenConfig::small(7);
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        for f in a.train.iter().chain(&a.test) {
            let line = f.to_csv_line();
            assert_eq!(&crate::flow::parse_flow_line(&line).unwrap(), f);
        }
        let other = generate(&GenConfig::small(8)).unwrap();
        assert_ne!(a.train, other.train);
    }

    #[test]
    fn every_class_extracts() {
        let cfg = GenConfig::small(3);
        let data = generate(&cfg).unwrap();
        let schema = FeatureSchema::default();
        for (flows, split_counts, test) in [(&data.train, &data.manifest.train, false), (&data.test, &data.manifest.test, true)] {
            let (samples, _) = extract_dataset::<f64>(flows.iter().cloned(), &schema).unwrap();
            for (label, plan) in &cfg.attacks {
                let expected = if test { plan.test_windows } else { plan.train_windows };
                let got = samples.iter().filter(|s| s.label == *label).count();
                assert_eq!(got, expected, "{label}");
                assert_eq!(split_counts[label].windows as usize, expected);
            }
            assert!(samples.iter().any(|s| s.label == ClassLabel::Background));
        }
    }

    #[test]
    fn dos_windows_are_pure_syn_to_80() {
        let data = generate(&GenConfig::small(1)).unwrap();
        let schema = FeatureSchema::default();
        let (samples, _) = extract_dataset::<f64>(data.test.iter().cloned(), &schema).unwrap();
        let port80 = schema.dst_port_offset() + schema.tracked_ports.iter().position(|&p| p == 80).unwrap();
        let flag_entropy = 14;
        let mut bg = Vec::new();
        for s in &samples {
            match s.label {
                ClassLabel::Dos => {
                    assert_eq!(s.features[port80], 1.0);
                    assert_eq!(s.features[flag_entropy], 0.0);
                }
                ClassLabel::Background => bg.push(s.features[port80]),
                _ => {}
            }
        }
        assert!(bg.iter().sum::<f64>() / (bg.len() as f64) < 1.0);
    }

    #[test]
    fn background_pools_disjoint() {
        let data = generate(&GenConfig::small(2)).unwrap();
        let ips = |flows: &[FlowRecord]| -> std::collections::BTreeSet<IpAddr> {
            flows.iter().filter(|f| f.label == ClassLabel::Background).map(|f| f.src_ip).collect()
        };
        assert!(ips(&data.train).is_disjoint(&ips(&data.test)));
    }

    #[test]
    fn rejects_missing_background() {
        let cfg = GenConfig { train_background_sources: 0, ..GenConfig::small(0) };
        assert!(generate(&cfg).is_err());
    }
}
