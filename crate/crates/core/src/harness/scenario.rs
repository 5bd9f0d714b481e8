use std::fmt;

use thiserror::Error;

use crate::identity::ServiceKind;
use crate::services::{ApiError, CuttingCondition, ProviderOutcome, TxSpec};

use super::faults::{FaultMode, FaultProgram};
use super::matrix::{fault_matrix, MatrixReport};
use super::sim::{SimConfig, SimError, Simulation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

/// One workload or fault step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Fault { id: String, program: FaultProgram },
    Heal(String),
    Advance(u64),
    Create(u64),
    Submit { index: u64, chaincode: Option<String>, payload: Vec<u8> },
    Tick(u64),
    Read(u64),
    Write(u64),
    Matrix { read: u64, write: u64, ids: Vec<String> },
}

/// A parsed scenario file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub config: SimConfig,
    pub steps: Vec<(usize, Step)>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut config = SimConfig::uniform(0, 0);
        let mut steps = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let err = |message: String| ScenarioError { line, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (word, rest) = content
                .split_once(char::is_whitespace)
                .map_or((content, ""), |(w, r)| (w, r.trim()));
            let args: Vec<&str> = rest.split_whitespace().collect();
            let is_setup = matches!(
                word,
                "seed" | "ttl" | "cutting" | "providers" | "provider" | "kyc-deny"
            );
            if is_setup && !steps.is_empty() {
                return Err(err(format!("{word} must come before the first step")));
            }
            match word {
                "seed" => {
                    config.seed = number(&args, 0).map_err(err)?;
                    config.pool_secret = config.seed.to_be_bytes().to_vec();
                }
                "ttl" => {
                    config.ttl = number(&args, 0).map_err(err)?;
                    if config.ttl == 0 {
                        return Err(err("ttl must be positive".into()));
                    }
                }
                "cutting" => config.cutting = rest.parse::<CuttingCondition>().map_err(err)?,
                "providers" => {
                    let kind = kind(&args).map_err(err)?;
                    let count: usize = number(&args, 1).map_err(err)?;
                    for i in 1..=count {
                        push_provider(&mut config, kind, format!("{kind}-{i}")).map_err(err)?;
                    }
                }
                "provider" => {
                    let kind = kind(&args).map_err(err)?;
                    let id = args.get(1).ok_or_else(|| err("missing provider id".into()))?;
                    push_provider(&mut config, kind, (*id).to_owned()).map_err(err)?;
                }
                "kyc-deny" => {
                    if rest.is_empty() {
                        return Err(err("missing KYC blob".into()));
                    }
                    config.kyc = config.kyc.clone().deny(unquote(rest).as_bytes());
                }
                "fault" => steps.push((line, parse_fault(&args, &config).map_err(err)?)),
                "heal" => {
                    let id = args.first().ok_or_else(|| err("missing provider id".into()))?;
                    steps.push((line, Step::Heal((*id).to_owned())));
                }
                "advance" => steps.push((line, Step::Advance(number(&args, 0).map_err(err)?))),
                "create-ledger" => steps.push((line, Step::Create(number(&args, 0).map_err(err)?))),
                "tick" => steps.push((line, Step::Tick(number(&args, 0).map_err(err)?))),
                "read" => steps.push((line, Step::Read(number(&args, 0).map_err(err)?))),
                "write" => steps.push((line, Step::Write(number(&args, 0).map_err(err)?))),
                "submit" => {
                    let index = number(&args, 0).map_err(err)?;
                    let mut tail = rest.split_once(char::is_whitespace).map_or("", |(_, t)| t.trim());
                    let mut chaincode = None;
                    if let Some(after) = tail.strip_prefix("chaincode=") {
                        let (id, more) = after
                            .split_once(char::is_whitespace)
                            .map_or((after, ""), |(a, b)| (a, b.trim()));
                        chaincode = Some(id.to_owned());
                        tail = more;
                    }
                    steps.push((
                        line,
                        Step::Submit {
                            index,
                            chaincode,
                            payload: unquote(tail).into_bytes(),
                        },
                    ));
                }
                "matrix" => {
                    let mut read = 0;
                    let mut write = 1;
                    let mut ids = Vec::new();
                    for a in &args {
                        if let Some(v) = a.strip_prefix("read=") {
                            read = v.parse().map_err(|_| err(format!("bad index {v:?}")))?;
                        } else if let Some(v) = a.strip_prefix("write=") {
                            write = v.parse().map_err(|_| err(format!("bad index {v:?}")))?;
                        } else {
                            ids.push((*a).to_owned());
                        }
                    }
                    steps.push((line, Step::Matrix { read, write, ids }));
                }
                other => return Err(err(format!("unknown directive {other:?}"))),
            }
        }
        let kinds_missing: Vec<&str> = ServiceKind::ALL
            .iter()
            .filter(|k| !config.providers.iter().any(|(p, _)| p == *k))
            .map(|k| k.as_str())
            .collect();
        if !kinds_missing.is_empty() {
            return Err(ScenarioError {
                line: 0,
                message: format!("no providers of kind {}", kinds_missing.join(", ")),
            });
        }
        for (line, step) in &steps {
            let ids: Vec<&String> = match step {
                Step::Fault { id, .. } | Step::Heal(id) => vec![id],
                Step::Matrix { ids, .. } => ids.iter().collect(),
                _ => vec![],
            };
            for id in ids {
                if !config.providers.iter().any(|(_, p)| p == id) {
                    return Err(ScenarioError {
                        line: *line,
                        message: format!("no provider {id:?}"),
                    });
                }
            }
        }
        Ok(Scenario { config, steps })
    }

    /// Runs every step in order on a fresh world.
    pub fn run(&self) -> Result<ScenarioOutcome, SimError> {
        let mut sim = Simulation::new(self.config.clone())?;
        let mut outcome = ScenarioOutcome::default();
        for (_, step) in &self.steps {
            run_step(&mut sim, step, &mut outcome)?;
        }
        outcome.final_time = sim.net.clock().now();
        Ok(outcome)
    }
}

fn push_provider(config: &mut SimConfig, kind: ServiceKind, id: String) -> Result<(), String> {
    if config.providers.iter().any(|(_, p)| *p == id) {
        return Err(format!("duplicate provider {id:?}"));
    }
    config.providers.push((kind, id));
    Ok(())
}

fn kind(args: &[&str]) -> Result<ServiceKind, String> {
    let word = args.first().ok_or("missing provider kind")?;
    ServiceKind::parse(word).ok_or_else(|| format!("unknown provider kind {word:?}"))
}

fn number<T: std::str::FromStr>(args: &[&str], i: usize) -> Result<T, String> {
    let word = args.get(i).ok_or("missing number")?;
    word.parse().map_err(|_| format!("bad number {word:?}"))
}

fn unquote(s: &str) -> String {
    let s = s.trim();
    s.strip_prefix('"')
        .and_then(|t| t.strip_suffix('"'))
        .unwrap_or(s)
        .to_owned()
}

fn parse_fault(args: &[&str], config: &SimConfig) -> Result<Step, String> {
    let id = args.first().ok_or("missing provider id")?;
    let split = args.iter().position(|a| *a == "from").unwrap_or(args.len());
    let mode: FaultMode = args[1..split].join(" ").parse()?;
    let mut program = FaultProgram { mode, window: None };
    if split < args.len() {
        let window = &args[split..];
        if window.len() != 4 || window[2] != "to" {
            return Err("fault window is `from <ms> to <ms>`".into());
        }
        let from: u64 = number(window, 1)?;
        let to: u64 = number(window, 3)?;
        if to <= from {
            return Err("fault window ends before it starts".into());
        }
        program = program.between(config.start_ms + from, config.start_ms + to);
    }
    Ok(Step::Fault {
        id: (*id).to_owned(),
        program,
    })
}

/// Lines printed by a run, plus the fault matrices it computed.
#[derive(Debug, Clone, Default)]
pub struct ScenarioOutcome {
    pub lines: Vec<String>,
    pub matrices: Vec<MatrixReport>,
    pub final_time: u64,
}

impl ScenarioOutcome {
    /// No matrix mismatch and no invalid commit anywhere.
    pub fn is_clean(&self) -> bool {
        self.matrices.iter().all(MatrixReport::is_clean)
    }
}

/// A `key=value` field, quoted when the value has spaces or quotes.
struct Field<'a>(&'a str, String);

impl fmt::Display for Field<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.1.is_empty() || self.1.contains([' ', '"', '=', '\t']) {
            write!(f, "{}={:?}", self.0, self.1)
        } else {
            write!(f, "{}={}", self.0, self.1)
        }
    }
}

/// `bytes` as text when it is printable UTF-8, otherwise `0x` and hex.
pub fn printable(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) if !s.is_empty() && !s.chars().any(char::is_control) => s.to_owned(),
        _ => format!("0x{}", hex::encode(bytes)),
    }
}

pub fn kv_line(head: &str, fields: &[(&str, String)]) -> String {
    let mut out = head.to_owned();
    for (k, v) in fields {
        out.push(' ');
        out.push_str(&Field(k, v.clone()).to_string());
    }
    out
}

fn status(e: &ApiError) -> &'static str {
    if e.is_fault() {
        "fault"
    } else if matches!(e, ApiError::Invalid(_)) {
        "invalid"
    } else {
        "refused"
    }
}

fn failure(head: &str, index: u64, e: &ApiError) -> String {
    kv_line(
        head,
        &[
            ("index", index.to_string()),
            ("status", status(e).into()),
            ("error", e.to_string()),
        ],
    )
}

fn run_step(sim: &mut Simulation, step: &Step, out: &mut ScenarioOutcome) -> Result<(), SimError> {
    let now = |sim: &Simulation| sim.net.clock().now() - sim.config().start_ms;
    let line = match step {
        Step::Fault { id, program } => {
            sim.net.inject(id, *program)?;
            kv_line("fault", &[("provider", id.clone()), ("mode", program.mode.to_string())])
        }
        Step::Heal(id) => {
            sim.net.heal(id)?;
            kv_line("heal", &[("provider", id.clone())])
        }
        Step::Advance(ms) => {
            sim.net.advance(*ms);
            kv_line("advance", &[("t", now(sim).to_string())])
        }
        Step::Create(index) => match sim.create_ledger(*index) {
            Ok(r) => {
                let stored = r
                    .storage
                    .iter()
                    .filter(|(_, o)| *o == ProviderOutcome::Stored)
                    .count();
                kv_line(
                    "create-ledger",
                    &[
                        ("index", index.to_string()),
                        ("status", "ok".into()),
                        ("address", sim.address(*index)?.to_base58()),
                        ("gba", r.gba),
                        ("stored", format!("{stored}/{}", r.storage.len())),
                    ],
                )
            }
            Err(e) => failure("create-ledger", *index, &e),
        },
        Step::Submit {
            index,
            chaincode,
            payload,
        } => {
            let spec = match chaincode {
                Some(id) => TxSpec::chaincode(id, payload.clone()),
                None => TxSpec::raw(payload.clone()),
            };
            match sim.submit(*index, spec) {
                Ok(r) => kv_line(
                    "submit",
                    &[
                        ("index", index.to_string()),
                        ("status", "ok".into()),
                        ("tx", r.tx_id.to_string()),
                        ("esp", r.esp),
                        ("osp", r.osp),
                        ("vsp", r.vsp),
                        ("output", printable(&r.output)),
                        (
                            "committed",
                            r.committed
                                .iter()
                                .map(u64::to_string)
                                .collect::<Vec<_>>()
                                .join(","),
                        ),
                    ],
                ),
                Err(e) => failure("submit", *index, &e),
            }
        }
        Step::Tick(index) => match sim.tick(*index) {
            Ok(c) => kv_line(
                "tick",
                &[
                    ("index", index.to_string()),
                    ("status", "ok".into()),
                    (
                        "committed",
                        c.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
                    ),
                ],
            ),
            Err(e) => failure("tick", *index, &e),
        },
        Step::Read(index) => match sim.read(*index) {
            Ok(r) => kv_line(
                "read",
                &[
                    ("index", index.to_string()),
                    ("status", if r.report.is_valid() { "ok" } else { "invalid" }.into()),
                    ("provider", r.provider),
                    ("height", r.ledger.blocks.len().to_string()),
                ],
            ),
            Err(e) => failure("read", *index, &e),
        },
        Step::Write(index) => match sim.write_probe(*index) {
            Ok(h) => kv_line(
                "write",
                &[
                    ("index", index.to_string()),
                    ("status", "ok".into()),
                    ("height", h.to_string()),
                ],
            ),
            Err(e) => failure("write", *index, &e),
        },
        Step::Matrix { read, write, ids } => {
            let report = fault_matrix(sim, *read, *write, ids);
            out.lines.extend(report.lines());
            out.matrices.push(report);
            return Ok(());
        }
    };
    out.lines.push(line);
    Ok(())
}
