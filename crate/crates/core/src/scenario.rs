//! Declarative scenario files.
//!
//! ```toml
//! name = "replay-m2"
//! curve = "production"     # or "toy"
//! stop_ms = 20000
//! evs = 1
//! css = 1
//!
//! [[session]]
//! ev = 1
//! cs = 1
//! start_ms = 100
//!
//! [[adversary]]
//! tag = "M2"
//! action = "replay"
//! after_ms = 10000
//!
//! [expect]
//! outcome = "terminated"
//! ```

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::Deserialize;
use toml::Spanned;

use crate::consensus::{Behavior, ConsensusConfig};
use crate::entities::messages::MessageTag;
use crate::entities::SessionId;
use crate::simnet::{Action, AdversaryRule, AdversaryScript, Edit, EntityId, RuleMatch, SpoofIdentity};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ScenarioError {}

impl ScenarioError {
    fn global(message: impl Into<String>) -> Self {
        Self { line: None, message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveChoice {
    Toy,
    Production,
}

impl FromStr for CurveChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "toy" => Ok(CurveChoice::Toy),
            "production" | "p256" => Ok(CurveChoice::Production),
            other => Err(format!("unknown curve `{other}` (expected toy or production)")),
        }
    }
}

impl fmt::Display for CurveChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurveChoice::Toy => "toy",
            CurveChoice::Production => "production",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkFault {
    pub src: Option<EntityId>,
    pub dst: Option<EntityId>,
    pub tag: Option<MessageTag>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub delay_ms: u64,
    pub jitter_ms: u64,
    pub faults: Vec<LinkFault>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionPlan {
    pub id: SessionId,
    pub ev: u32,
    pub cs: u32,
    pub start_ms: u64,
    pub energy_kwh: Decimal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusSetup {
    pub config: ConsensusConfig,
    /// Assumed bound on broadcast delay; a relayed transaction waits this
    /// long before it may enter a block.
    pub eligibility_delay_ms: u64,
    pub byzantine: Vec<(u32, Behavior)>,
}

impl ConsensusSetup {
    pub fn behavior(&self, cs: u32) -> Behavior {
        self.byzantine.iter().find(|(i, _)| *i == cs).map_or(Behavior::Honest, |(_, b)| *b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectedOutcome {
    Authenticated,
    Terminated,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Expectations {
    pub outcome: Option<ExpectedOutcome>,
    /// Restricts `outcome` to one session; all sessions when unset.
    pub session: Option<SessionId>,
    pub transactions_created: Option<u64>,
    pub committed_txs: Option<u64>,
    pub blocks: Option<u64>,
    /// Every accepted transaction must reach every honest ledger within
    /// this many block intervals.
    pub max_commit_intervals: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub seed: u64,
    pub curve: CurveChoice,
    pub stop_ms: u64,
    pub window_ms: u64,
    pub price_per_kwh: Decimal,
    pub num_evs: u32,
    pub num_css: u32,
    pub network: NetworkConfig,
    pub sessions: Vec<SessionPlan>,
    pub consensus: Option<ConsensusSetup>,
    pub adversary: AdversaryScript,
    pub expect: Expectations,
}

impl Scenario {
    /// One EV, one CS, one run, no consensus.
    pub fn honest(seed: u64, curve: CurveChoice) -> Self {
        Self {
            name: "honest".into(),
            description: String::new(),
            seed,
            curve,
            stop_ms: 10_000,
            window_ms: 5_000,
            price_per_kwh: Decimal::new(25, 2),
            num_evs: 1,
            num_css: 1,
            network: NetworkConfig { delay_ms: 5, jitter_ms: 3, faults: Vec::new() },
            sessions: vec![SessionPlan {
                id: SessionId(1),
                ev: 1,
                cs: 1,
                start_ms: 100,
                energy_kwh: Decimal::new(75, 1),
            }],
            consensus: None,
            adversary: AdversaryScript::default(),
            expect: Expectations {
                outcome: Some(ExpectedOutcome::Authenticated),
                transactions_created: Some(1),
                ..Default::default()
            },
        }
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError {
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        let scenario = raw.resolve(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Checks that hold after command-line overrides are applied too.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.stop_ms == 0 {
            return Err(ScenarioError::global("stop_ms must be positive"));
        }
        for s in &self.sessions {
            if s.ev == 0 || s.ev > self.num_evs || s.cs == 0 || s.cs > self.num_css {
                return Err(ScenarioError::global(format!(
                    "session {} pairs EV{} with CS{}, outside the {} EVs / {} CSs declared",
                    s.id, s.ev, s.cs, self.num_evs, self.num_css
                )));
            }
        }
        if let Some(id) = self.expect.session {
            if !self.sessions.iter().any(|s| s.id == id) {
                return Err(ScenarioError::global(format!("expect.session {id} is not a planned session")));
            }
        }
        if let Some(c) = &self.consensus {
            let cfg = &c.config;
            if self.num_css < 4 {
                return Err(ScenarioError::global(format!(
                    "consensus needs at least 4 charging stations (3f + 1 with f >= 1), found {}",
                    self.num_css
                )));
            }
            if cfg.speaker_term == 0 {
                return Err(ScenarioError::global("speaker_term must be at least 1"));
            }
            if cfg.block_interval_ms < 4 || cfg.block_interval_ms % 2 != 0 {
                return Err(ScenarioError::global("block_interval_ms must be even and at least 4"));
            }
            let round_trip = 2 * (self.network.delay_ms + self.network.jitter_ms);
            if round_trip >= cfg.vote_timeout_ms() {
                return Err(ScenarioError::global(format!(
                    "network round trip {round_trip} ms does not fit the {} ms vote timeout",
                    cfg.vote_timeout_ms()
                )));
            }
            for (cs, _) in &c.byzantine {
                if *cs == 0 || *cs > self.num_css {
                    return Err(ScenarioError::global(format!("byzantine CS{cs} does not exist")));
                }
            }
        }
        Ok(())
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

fn at<T>(text: &str, span: Range<usize>, message: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError { line: Some(line_of(text, span.start)), message: message.into() })
}

fn spanned_parse<T: FromStr>(text: &str, value: &Spanned<String>, what: &str) -> Result<T, ScenarioError>
where
    T::Err: fmt::Display,
{
    value.get_ref().parse().or_else(|e| at(text, value.span(), format!("invalid {what}: {e}")))
}

fn opt_parse<T: FromStr>(text: &str, value: &Option<Spanned<String>>, what: &str) -> Result<Option<T>, ScenarioError>
where
    T::Err: fmt::Display,
{
    value.as_ref().map(|v| spanned_parse(text, v, what)).transpose()
}

struct Tag(MessageTag);

impl FromStr for Tag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MessageTag::from_name(s).map(Tag).ok_or_else(|| format!("unknown message `{s}`"))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    curve: Option<Spanned<String>>,
    #[serde(default = "default_stop")]
    stop_ms: u64,
    #[serde(default = "default_window")]
    window_ms: u64,
    #[serde(default)]
    price_per_kwh: Option<Spanned<String>>,
    #[serde(default)]
    evs: u32,
    #[serde(default)]
    css: u32,
    #[serde(default)]
    network: RawNetwork,
    #[serde(default)]
    session: Vec<RawSession>,
    #[serde(default)]
    consensus: Option<RawConsensus>,
    #[serde(default)]
    adversary: Vec<Spanned<RawRule>>,
    #[serde(default)]
    expect: RawExpect,
}

fn default_stop() -> u64 {
    10_000
}

fn default_window() -> u64 {
    5_000
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    #[serde(default = "default_delay")]
    delay_ms: u64,
    #[serde(default = "default_jitter")]
    jitter_ms: u64,
    #[serde(default)]
    fault: Vec<RawFault>,
}

impl Default for RawNetwork {
    fn default() -> Self {
        Self { delay_ms: default_delay(), jitter_ms: default_jitter(), fault: Vec::new() }
    }
}

fn default_delay() -> u64 {
    5
}

fn default_jitter() -> u64 {
    3
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFault {
    src: Option<Spanned<String>>,
    dst: Option<Spanned<String>>,
    tag: Option<Spanned<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSession {
    ev: u32,
    cs: u32,
    start_ms: u64,
    energy_kwh: Option<Spanned<String>>,
    #[serde(default = "one")]
    count: u32,
    #[serde(default)]
    every_ms: u64,
}

fn one() -> u32 {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConsensus {
    #[serde(default = "one_u64")]
    speaker_term: u64,
    #[serde(default = "default_interval")]
    block_interval_ms: u64,
    #[serde(default)]
    literal_speaker_formula: bool,
    #[serde(default = "default_eligibility")]
    eligibility_delay_ms: u64,
    #[serde(default)]
    byzantine: Vec<RawByzantine>,
}

fn one_u64() -> u64 {
    1
}

fn default_interval() -> u64 {
    1_000
}

fn default_eligibility() -> u64 {
    50
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawByzantine {
    cs: u32,
    mode: Spanned<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawFieldRef {
    Index(usize),
    Name(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    tag: Option<Spanned<String>>,
    src: Option<Spanned<String>>,
    dst: Option<Spanned<String>>,
    session: Option<u64>,
    action: Spanned<String>,
    ms: Option<u64>,
    after_ms: Option<u64>,
    field: Option<Spanned<RawFieldRef>>,
    bit: Option<usize>,
    replace: Option<String>,
    #[serde(rename = "as")]
    as_entity: Option<Spanned<String>>,
    donor_session: Option<u64>,
    fields: Option<Vec<Spanned<RawFieldRef>>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawExpect {
    outcome: Option<Spanned<String>>,
    session: Option<u64>,
    transactions_created: Option<u64>,
    committed_txs: Option<u64>,
    blocks: Option<u64>,
    max_commit_intervals: Option<u64>,
}

fn decimal(text: &str, value: &Option<Spanned<String>>, default: Decimal, what: &str) -> Result<Decimal, ScenarioError> {
    match value {
        None => Ok(default),
        Some(v) => {
            let d: Decimal = spanned_parse(text, v, what)?;
            if d.is_sign_negative() {
                return at(text, v.span(), format!("{what} must not be negative"));
            }
            Ok(d)
        }
    }
}

impl RawScenario {
    fn resolve(self, text: &str) -> Result<Scenario, ScenarioError> {
        let curve = opt_parse(text, &self.curve, "curve")?.unwrap_or(CurveChoice::Production);
        let price_per_kwh = decimal(text, &self.price_per_kwh, Decimal::new(25, 2), "price_per_kwh")?;

        let faults = self
            .network
            .fault
            .iter()
            .map(|f| {
                Ok(LinkFault {
                    src: opt_parse(text, &f.src, "entity")?,
                    dst: opt_parse(text, &f.dst, "entity")?,
                    tag: opt_parse::<Tag>(text, &f.tag, "message tag")?.map(|t| t.0),
                })
            })
            .collect::<Result<_, ScenarioError>>()?;

        let mut sessions = Vec::new();
        for s in &self.session {
            let energy_kwh = decimal(text, &s.energy_kwh, Decimal::new(75, 1), "energy_kwh")?;
            for k in 0..s.count {
                sessions.push(SessionPlan {
                    id: SessionId(sessions.len() as u64 + 1),
                    ev: s.ev,
                    cs: s.cs,
                    start_ms: s.start_ms + u64::from(k) * s.every_ms,
                    energy_kwh,
                });
            }
        }

        let consensus = self
            .consensus
            .map(|c| {
                let byzantine = c
                    .byzantine
                    .iter()
                    .map(|b| {
                        let mode = match b.mode.get_ref().as_str() {
                            "reject" => Behavior::RejectAll,
                            "withhold" => Behavior::Withhold,
                            other => {
                                return at(
                                    text,
                                    b.mode.span(),
                                    format!("unknown byzantine mode `{other}` (expected reject or withhold)"),
                                )
                            }
                        };
                        Ok((b.cs, mode))
                    })
                    .collect::<Result<_, ScenarioError>>()?;
                Ok::<_, ScenarioError>(ConsensusSetup {
                    config: ConsensusConfig {
                        committee_size: self.css,
                        speaker_term: c.speaker_term,
                        block_interval_ms: c.block_interval_ms,
                        literal_speaker_formula: c.literal_speaker_formula,
                    },
                    eligibility_delay_ms: c.eligibility_delay_ms,
                    byzantine,
                })
            })
            .transpose()?;

        let mut rules = Vec::new();
        for rule in &self.adversary {
            rules.push(resolve_rule(text, rule)?);
        }
        let adversary = AdversaryScript { rules };
        if let Err((i, err)) = adversary.validate() {
            return at(text, self.adversary[i].span(), err.to_string());
        }

        let outcome = match &self.expect.outcome {
            None => None,
            Some(v) => Some(match v.get_ref().as_str() {
                "authenticated" => ExpectedOutcome::Authenticated,
                "terminated" => ExpectedOutcome::Terminated,
                other => {
                    return at(text, v.span(), format!("unknown outcome `{other}` (expected authenticated or terminated)"))
                }
            }),
        };

        Ok(Scenario {
            name: self.name,
            description: self.description,
            seed: self.seed,
            curve,
            stop_ms: self.stop_ms,
            window_ms: self.window_ms,
            price_per_kwh,
            num_evs: self.evs,
            num_css: self.css,
            network: NetworkConfig { delay_ms: self.network.delay_ms, jitter_ms: self.network.jitter_ms, faults },
            sessions,
            consensus,
            adversary,
            expect: Expectations {
                outcome,
                session: self.expect.session.map(SessionId),
                transactions_created: self.expect.transactions_created,
                committed_txs: self.expect.committed_txs,
                blocks: self.expect.blocks,
                max_commit_intervals: self.expect.max_commit_intervals,
            },
        })
    }
}

fn field_index(text: &str, tag: Option<MessageTag>, field: &Spanned<RawFieldRef>) -> Result<usize, ScenarioError> {
    let span = field.span();
    match field.get_ref() {
        RawFieldRef::Index(i) => Ok(*i),
        RawFieldRef::Name(name) => {
            let Some(tag) = tag else { return at(text, span, "named fields need a `tag`") };
            match tag.field_names().iter().position(|n| n == name) {
                Some(i) => Ok(i),
                None => at(
                    text,
                    span,
                    format!("{} has no field `{name}` (fields: {})", tag.name(), tag.field_names().join(", ")),
                ),
            }
        }
    }
}

fn resolve_rule(text: &str, rule: &Spanned<RawRule>) -> Result<AdversaryRule, ScenarioError> {
    let span = rule.span();
    let r = rule.get_ref();
    let tag = opt_parse::<Tag>(text, &r.tag, "message tag")?.map(|t| t.0);
    let matcher = RuleMatch {
        tag,
        src: opt_parse(text, &r.src, "entity")?,
        dst: opt_parse(text, &r.dst, "entity")?,
        session: r.session.map(SessionId),
    };
    let require = |value: Option<u64>, key: &str| match value {
        Some(v) => Ok(v),
        None => at(text, span.clone(), format!("action `{}` needs `{key}`", r.action.get_ref())),
    };
    let action = match r.action.get_ref().as_str() {
        "drop" => Action::Drop,
        "delay" => Action::Delay { ms: require(r.ms, "ms")? },
        "replay" => Action::Replay { after_ms: require(r.after_ms, "after_ms")? },
        "tamper" => {
            let Some(field) = &r.field else { return at(text, span, "action `tamper` needs `field`") };
            let field = field_index(text, tag, field)?;
            let edit = match (&r.replace, r.bit) {
                (Some(_), Some(_)) => return at(text, span, "use either `bit` or `replace`, not both"),
                (Some(hex_bytes), None) => match hex::decode(hex_bytes) {
                    Ok(bytes) => Edit::Replace(bytes),
                    Err(e) => return at(text, span, format!("invalid hex in `replace`: {e}")),
                },
                (None, bit) => Edit::FlipBit(bit.unwrap_or(0)),
            };
            Action::Tamper { field, edit }
        }
        "spoof" => {
            let identity = match &r.as_entity {
                None => SpoofIdentity::Random,
                Some(v) if v.get_ref() == "random" => SpoofIdentity::Random,
                Some(v) => SpoofIdentity::Entity(spanned_parse(text, v, "entity")?),
            };
            Action::Spoof { identity }
        }
        "splice" => {
            let donor = SessionId(require(r.donor_session, "donor_session")?);
            let fields = r
                .fields
                .as_ref()
                .map(|fs| fs.iter().map(|f| field_index(text, tag, f)).collect::<Result<Vec<_>, _>>())
                .transpose()?;
            Action::Splice { donor, fields }
        }
        other => {
            return at(
                text,
                r.action.span(),
                format!("unknown action `{other}` (expected drop, delay, replay, tamper, spoof or splice)"),
            )
        }
    };
    Ok(AdversaryRule { matcher, action })
}
