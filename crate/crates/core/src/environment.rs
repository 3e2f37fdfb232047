//! The community-structured token environment.
//!
//! Seven tokens: two communities `{A, B, C}` and `{D, E, F}` joined by the hub
//! `G`. Leaving the hub, an entry token is sampled from the configured entry
//! distribution; the walk then traverses the entered community for exactly
//! three tokens and returns to `G`. The traversal direction is
//! counterclockwise only when the last two community visits were both to the
//! community being entered.

use alloc::vec::Vec;
use alloc::{format, string::String};

use rand::Rng as _;

use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Token {
    A = 0,
    B = 1,
    C = 2,
    D = 3,
    E = 4,
    F = 5,
    G = 6,
}

impl Token {
    pub const COUNT: usize = 7;
    pub const ALL: [Token; 7] = [Token::A, Token::B, Token::C, Token::D, Token::E, Token::F, Token::G];
    pub const HUB: Token = Token::G;

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Token> {
        Self::ALL.get(index).copied()
    }

    pub fn symbol(self) -> char {
        (b'A' + self as u8) as char
    }

    pub fn from_symbol(c: char) -> Option<Token> {
        match c {
            'A'..='G' => Self::from_index(c as usize - 'A' as usize),
            _ => None,
        }
    }

    /// Community membership; `None` for the hub.
    pub fn community(self) -> Option<Community> {
        match self {
            Token::A | Token::B | Token::C => Some(Community::First),
            Token::D | Token::E | Token::F => Some(Community::Second),
            Token::G => None,
        }
    }

    pub fn is_hub(self) -> bool {
        self == Token::G
    }

    pub fn one_hot(self) -> [f64; 7] {
        let mut v = [0.0; 7];
        v[self.index()] = 1.0;
        v
    }
}

impl core::fmt::Display for Token {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Community {
    First,
    Second,
}

impl Community {
    pub fn id(self) -> u8 {
        match self {
            Community::First => 1,
            Community::Second => 2,
        }
    }

    pub fn tokens(self) -> [Token; 3] {
        match self {
            Community::First => [Token::A, Token::B, Token::C],
            Community::Second => [Token::D, Token::E, Token::F],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// A→B→C→A, D→E→F→D.
    Clockwise,
    /// A→C→B→A, D→F→E→D.
    Counterclockwise,
}

impl Direction {
    /// Next token along the community cycle. Panics on the hub.
    pub fn successor(self, token: Token) -> Token {
        let community = token.community().expect("hub token has no successor");
        let members = community.tokens();
        let offset = token.index() - members[0].index();
        let next = match self {
            Direction::Clockwise => (offset + 1) % 3,
            Direction::Counterclockwise => (offset + 2) % 3,
        };
        members[next]
    }
}

/// Traversal direction for a visit to `current` given the two previous
/// community visits. Missing history counts as a different community.
pub fn direction_rule(current: Community, last: Option<Community>, penultimate: Option<Community>) -> Direction {
    if last == Some(current) && penultimate == Some(current) {
        Direction::Counterclockwise
    } else {
        Direction::Clockwise
    }
}

/// Ordinal within the four-token macro cycle: 0 for the hub, 1..=3 inside a
/// community.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PositionLabel(u8);

impl PositionLabel {
    pub const HUB: PositionLabel = PositionLabel(0);
    pub const ENTRY: PositionLabel = PositionLabel(1);

    pub fn new(value: u8) -> Option<Self> {
        (value <= 3).then_some(PositionLabel(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    entry_tokens: Vec<Token>,
    entry_probs: Vec<f64>,
    cdf: Vec<f64>,
    seed: u64,
}

impl EnvConfig {
    pub fn new(entry_tokens: Vec<Token>, entry_probs: Vec<f64>, seed: u64) -> Result<Self> {
        if entry_tokens.is_empty() {
            return Err(Error::InvalidConfig("entry_tokens must not be empty".into()));
        }
        if entry_tokens.len() != entry_probs.len() {
            return Err(Error::InvalidConfig(format!(
                "{} entry tokens but {} probabilities",
                entry_tokens.len(),
                entry_probs.len()
            )));
        }
        for (i, t) in entry_tokens.iter().enumerate() {
            if t.is_hub() {
                return Err(Error::InvalidConfig("G cannot be an entry token".into()));
            }
            if entry_tokens[..i].contains(t) {
                return Err(Error::InvalidConfig(format!("duplicate entry token {t}")));
            }
        }
        if let Some(p) = entry_probs.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "entry probabilities must be strictly positive, got {p}"
            )));
        }
        let total: f64 = entry_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "entry probabilities sum to {total}, expected 1"
            )));
        }
        let mut acc = 0.0;
        let cdf = entry_probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(EnvConfig {
            entry_tokens,
            entry_probs,
            cdf,
            seed,
        })
    }

    /// Uniform entry distribution over `tokens`.
    pub fn uniform(tokens: &[Token], seed: u64) -> Result<Self> {
        let n = tokens.len();
        if n == 0 {
            return Err(Error::InvalidConfig("entry_tokens must not be empty".into()));
        }
        let mut probs = alloc::vec![1.0 / n as f64; n];
        // Absorb rounding so the vector sums to one exactly.
        let rest: f64 = probs[..n - 1].iter().sum();
        probs[n - 1] = 1.0 - rest;
        Self::new(tokens.to_vec(), probs, seed)
    }

    /// All six community tokens, each with probability 1/6.
    pub fn full(seed: u64) -> Self {
        Self::uniform(&Token::ALL[..6], seed).expect("full environment is valid")
    }

    /// Restricted source environment: entries {A, B, D, E} at 1/4 each.
    pub fn source(seed: u64) -> Self {
        Self::uniform(&[Token::A, Token::B, Token::D, Token::E], seed).expect("source environment is valid")
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        EnvConfig { seed, ..self.clone() }
    }

    pub fn entry_tokens(&self) -> &[Token] {
        &self.entry_tokens
    }

    pub fn entry_probs(&self) -> &[f64] {
        &self.entry_probs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entry_prob(&self, token: Token) -> f64 {
        self.entry_tokens
            .iter()
            .position(|t| *t == token)
            .map_or(0.0, |i| self.entry_probs[i])
    }

    pub fn max_entry_prob(&self) -> f64 {
        self.entry_probs.iter().copied().fold(0.0, f64::max)
    }

    /// Inverse-CDF draw of an entry token.
    pub fn sample_entry(&self, rng: &mut Rng) -> Token {
        let u: f64 = rng.gen();
        let i = self.cdf.iter().position(|c| u < *c).unwrap_or(self.cdf.len() - 1);
        self.entry_tokens[i]
    }

    pub fn describe(&self) -> String {
        let tokens: String = self.entry_tokens.iter().map(|t| t.symbol()).collect();
        format!("entries={tokens} seed={}", self.seed)
    }
}

/// Best achievable top-1 accuracy: three deterministic tokens per cycle plus
/// the most likely entry.
pub fn theoretical_ceiling(config: &EnvConfig) -> f64 {
    (3.0 + config.max_entry_prob()) / 4.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Hub,
    InCommunity { position: u8 },
}

/// Generator state without its random source. Two generators with equal
/// keys have identical conditional futures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StateKey {
    pub phase: Phase,
    pub last_token: Option<Token>,
    pub direction: Option<Direction>,
    pub last_visit: Option<Community>,
    pub penultimate_visit: Option<Community>,
}

impl StateKey {
    /// Exact next-token distribution from this state.
    pub fn next_distribution(&self, config: &EnvConfig) -> [f64; 7] {
        let mut p = [0.0; 7];
        match (self.phase, self.last_token, self.direction) {
            (Phase::InCommunity { position: 3 }, _, _) => p[Token::G.index()] = 1.0,
            (Phase::InCommunity { .. }, Some(tok), Some(dir)) => p[dir.successor(tok).index()] = 1.0,
            _ => {
                for (t, q) in config.entry_tokens.iter().zip(&config.entry_probs) {
                    p[t.index()] = *q;
                }
            }
        }
        p
    }
}

impl StateKey {
    /// Cold-start key of a fresh generator.
    pub fn initial() -> Self {
        StateKey {
            phase: Phase::Hub,
            last_token: None,
            direction: None,
            last_visit: None,
            penultimate_visit: None,
        }
    }

    /// Every token reachable in one step, with the resulting key.
    pub fn successors(&self, config: &EnvConfig) -> Vec<(Token, StateKey)> {
        let mut out = Vec::new();
        match (self.phase, self.last_token, self.direction) {
            (Phase::InCommunity { position: 3 }, _, _) => out.push((
                Token::G,
                StateKey {
                    phase: Phase::Hub,
                    last_token: Some(Token::G),
                    direction: None,
                    ..*self
                },
            )),
            (Phase::InCommunity { position }, Some(tok), Some(dir)) => {
                let next = dir.successor(tok);
                out.push((
                    next,
                    StateKey {
                        phase: Phase::InCommunity { position: position + 1 },
                        last_token: Some(next),
                        ..*self
                    },
                ));
            }
            _ => {
                for (&entry, &p) in config.entry_tokens.iter().zip(&config.entry_probs) {
                    if p <= 0.0 {
                        continue;
                    }
                    let community = entry.community().expect("entry tokens are community tokens");
                    out.push((
                        entry,
                        StateKey {
                            phase: Phase::InCommunity { position: 1 },
                            last_token: Some(entry),
                            direction: Some(direction_rule(community, self.last_visit, self.penultimate_visit)),
                            last_visit: Some(community),
                            penultimate_visit: self.last_visit,
                        },
                    ));
                }
            }
        }
        out
    }
}

/// All distinct `(last len tokens, state)` pairs reachable after at least
/// `burn_in` steps from a cold start, found by exhaustive branching over
/// entry tokens. Histories come out sorted.
pub fn enumerate_histories(config: &EnvConfig, len: usize, burn_in: usize) -> Vec<(Vec<Token>, StateKey)> {
    let mut frontier: Vec<(Vec<Token>, StateKey)> = alloc::vec![(Vec::new(), StateKey::initial())];
    let mut found = Vec::new();
    for step in 1..=burn_in + len {
        let mut next = Vec::new();
        for (hist, key) in &frontier {
            for (tok, succ) in key.successors(config) {
                let mut h = hist.clone();
                h.push(tok);
                if h.len() > len {
                    h.remove(0);
                }
                next.push((h, succ));
            }
        }
        next.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| key_order(&a.1).cmp(&key_order(&b.1))));
        next.dedup();
        if step >= burn_in && step >= len {
            found.extend(next.iter().cloned());
        }
        frontier = next;
    }
    found.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| key_order(&a.1).cmp(&key_order(&b.1))));
    found.dedup();
    found
}

fn key_order(k: &StateKey) -> [u8; 5] {
    let phase = match k.phase {
        Phase::Hub => 0,
        Phase::InCommunity { position } => position,
    };
    [
        phase,
        k.last_token.map_or(9, |t| t as u8),
        k.direction.map_or(9, |d| d as u8),
        k.last_visit.map_or(9, |c| c.id()),
        k.penultimate_visit.map_or(9, |c| c.id()),
    ]
}

/// First pair of states sharing the same `len`-token history but with
/// different next-token distributions.
pub fn history_collision(config: &EnvConfig, len: usize, burn_in: usize) -> Option<(Vec<Token>, StateKey, StateKey)> {
    let all = enumerate_histories(config, len, burn_in);
    for pair in all.windows(2) {
        let (ha, ka) = &pair[0];
        let (hb, kb) = &pair[1];
        if ha == hb && ka.next_distribution(config) != kb.next_distribution(config) {
            return Some((ha.clone(), *ka, *kb));
        }
    }
    None
}

/// One emitted token with its ground-truth labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Emission {
    pub token: Token,
    pub position: PositionLabel,
    /// True exactly at community entries (position 1).
    pub entry: bool,
}

#[derive(Clone, Debug)]
pub struct EnvState {
    pub phase: Phase,
    pub last_token: Option<Token>,
    pub current_entry: Option<Token>,
    pub direction: Option<Direction>,
    pub last_visit: Option<Community>,
    pub penultimate_visit: Option<Community>,
    rng: Rng,
}

impl EnvState {
    /// Cold start at the hub with no visit history.
    pub fn new(config: &EnvConfig) -> Self {
        EnvState {
            phase: Phase::Hub,
            last_token: None,
            current_entry: None,
            direction: None,
            last_visit: None,
            penultimate_visit: None,
            rng: rng::stream(config.seed, rng::STREAM_ENV),
        }
    }

    pub fn key(&self) -> StateKey {
        StateKey {
            phase: self.phase,
            last_token: self.last_token,
            direction: self.direction,
            last_visit: self.last_visit,
            penultimate_visit: self.penultimate_visit,
        }
    }

    /// Pure transition: the receiver is left untouched.
    pub fn next_token(&self, config: &EnvConfig) -> (Token, EnvState) {
        let mut next = self.clone();
        let emission = next.advance(config);
        (emission.token, next)
    }

    pub fn advance(&mut self, config: &EnvConfig) -> Emission {
        match self.phase {
            Phase::Hub => {
                let entry = config.sample_entry(&mut self.rng);
                let community = entry.community().expect("entry tokens are community tokens");
                self.direction = Some(direction_rule(community, self.last_visit, self.penultimate_visit));
                self.penultimate_visit = self.last_visit;
                self.last_visit = Some(community);
                self.current_entry = Some(entry);
                self.last_token = Some(entry);
                self.phase = Phase::InCommunity { position: 1 };
                Emission {
                    token: entry,
                    position: PositionLabel::ENTRY,
                    entry: true,
                }
            }
            Phase::InCommunity { position: 3 } => {
                self.phase = Phase::Hub;
                self.direction = None;
                self.last_token = Some(Token::G);
                Emission {
                    token: Token::G,
                    position: PositionLabel::HUB,
                    entry: false,
                }
            }
            Phase::InCommunity { position } => {
                let current = self.last_token.expect("in-community state has a token");
                let direction = self.direction.expect("in-community state has a direction");
                let token = direction.successor(current);
                self.last_token = Some(token);
                self.phase = Phase::InCommunity { position: position + 1 };
                Emission {
                    token,
                    position: PositionLabel(position + 1),
                    entry: false,
                }
            }
        }
    }
}

/// A running generator: configuration plus state.
#[derive(Clone, Debug)]
pub struct Environment {
    config: EnvConfig,
    state: EnvState,
}

impl Environment {
    pub fn new(config: EnvConfig) -> Self {
        let state = EnvState::new(&config);
        Environment { config, state }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn step(&mut self) -> Emission {
        self.state.advance(&self.config)
    }

    /// Exact distribution of the next emission.
    pub fn oracle(&self) -> [f64; 7] {
        self.state.key().next_distribution(&self.config)
    }
}

impl Iterator for Environment {
    type Item = Emission;

    fn next(&mut self) -> Option<Emission> {
        Some(self.step())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub tokens: Vec<Token>,
    pub positions: Vec<PositionLabel>,
    pub entry_mask: Vec<bool>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn push(&mut self, e: Emission) {
        self.tokens.push(e.token);
        self.positions.push(e.position);
        self.entry_mask.push(e.entry);
    }
}

pub fn generate(config: &EnvConfig, n: usize) -> Result<Trajectory> {
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    let mut env = Environment::new(config.clone());
    let mut out = Trajectory {
        tokens: Vec::with_capacity(n),
        positions: Vec::with_capacity(n),
        entry_mask: Vec::with_capacity(n),
    };
    for _ in 0..n {
        out.push(env.step());
    }
    Ok(out)
}

/// Number of trailing tokens a decoder needs to recover the generator state.
pub const SUFFICIENT_HISTORY: usize = 7;

/// Recovers the generator state from the last seven emitted tokens.
pub fn decode_state(history: &[Token]) -> Result<StateKey> {
    if history.len() < SUFFICIENT_HISTORY {
        return Err(Error::InsufficientHistory { given: history.len() });
    }
    let w = &history[history.len() - SUFFICIENT_HISTORY..];
    let t = w.len() - 1;
    let community_at = |i: usize| w[i].community().ok_or(Error::InconsistentHistory);
    let expect_hub = |i: usize| {
        if w[i].is_hub() {
            Ok(())
        } else {
            Err(Error::InconsistentHistory)
        }
    };

    let trailing = w.iter().rev().take_while(|tok| !tok.is_hub()).count();
    if trailing > 3 {
        return Err(Error::InconsistentHistory);
    }
    if trailing == 0 {
        // Hub: last visit occupies t-3..t-1, the one before ends at t-5.
        expect_hub(t - 4)?;
        let last = community_at(t - 1)?;
        let penultimate = community_at(t - 5)?;
        return Ok(StateKey {
            phase: Phase::Hub,
            last_token: Some(Token::G),
            direction: None,
            last_visit: Some(last),
            penultimate_visit: Some(penultimate),
        });
    }

    let hub = t - trailing;
    let current = community_at(hub + 1)?;
    for i in hub + 1..=t {
        if community_at(i)? != current {
            return Err(Error::InconsistentHistory);
        }
    }
    if hub >= 4 {
        expect_hub(hub - 4)?;
    }
    let previous = community_at(hub - 1)?;
    let direction = if trailing >= 2 {
        if Direction::Clockwise.successor(w[hub + 1]) == w[hub + 2] {
            Direction::Clockwise
        } else {
            Direction::Counterclockwise
        }
    } else {
        let before_previous = community_at(hub - 5)?;
        direction_rule(current, Some(previous), Some(before_previous))
    };
    Ok(StateKey {
        phase: Phase::InCommunity {
            position: trailing as u8,
        },
        last_token: Some(w[t]),
        direction: Some(direction),
        last_visit: Some(current),
        penultimate_visit: Some(previous),
    })
}

/// Exact next-token distribution given at least seven tokens of history.
pub fn oracle_distribution(history: &[Token], config: &EnvConfig) -> Result<[f64; 7]> {
    Ok(decode_state(history)?.next_distribution(config))
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
