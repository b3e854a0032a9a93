//! Flying ad-hoc network connectivity environment.
//!
//! Aircraft and ground stations move with constant velocities on a plane.
//! At every step each aircraft ranks the other entities by a desirability
//! value and nominates its two favourites. Aircraft pairs link only when the
//! nomination is mutual; ground stations accept in-range nominations up to
//! their link capacity. The shared reward is the fraction of aircraft that
//! have a multi-hop path to any ground station.
//!
//! Entity ids are laid out as aircraft `0..n_aircraft` followed by ground
//! stations `n_aircraft..n_entities`.

use std::collections::{BTreeSet, VecDeque};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Actions are clamped into `[ACTION_EPS, 1 - ACTION_EPS]` before ranking.
pub const ACTION_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntityKind {
    Aircraft,
    Ground,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: usize,
    pub kind: EntityKind,
    pub pos: [f64; 2],
    /// Displacement per step; zero for ground stations.
    pub vel: [f64; 2],
}

impl Entity {
    /// Position after `steps` further steps of constant-velocity motion.
    pub fn extrapolate(&self, steps: f64) -> [f64; 2] {
        [self.pos[0] + steps * self.vel[0], self.pos[1] + steps * self.vel[1]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_aircraft: usize,
    pub n_ground: usize,
    pub horizon: usize,
    pub comm_range: f64,
    pub world_side: f64,
    pub v_max: f64,
    #[serde(default = "default_max_links")]
    pub max_links: usize,
}

fn default_max_links() -> usize {
    2
}

const SCENARIO_4A1S: &str = include_str!("../scenarios/4a1s.toml");
const SCENARIO_5A2S: &str = include_str!("../scenarios/5a2s.toml");

impl ScenarioConfig {
    /// Four aircraft, one ground station, calibrated geometry.
    pub fn four_a_one_s() -> Self {
        Self::from_toml_str(SCENARIO_4A1S).expect("bundled 4a1s scenario is valid")
    }

    /// Five aircraft, two ground stations, calibrated geometry.
    pub fn five_a_two_s() -> Self {
        Self::from_toml_str(SCENARIO_5A2S).expect("bundled 5a2s scenario is valid")
    }

    /// Looks up a bundled scenario by name (`4a1s`, `5a2s`, case-insensitive).
    pub fn builtin(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "4a1s" => Some(Self::four_a_one_s()),
            "5a2s" => Some(Self::five_a_two_s()),
            _ => None,
        }
    }

    /// Resolves either a bundled scenario name or a path to a TOML file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match Self::builtin(name_or_path) {
            Some(cfg) => Ok(cfg),
            None => Self::load(name_or_path),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(s).map_err(|e| Error::Toml(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_aircraft == 0 {
            return Err(Error::config("at least one aircraft is required"));
        }
        if self.n_entities() < 2 {
            return Err(Error::config("at least two entities are required"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon must be positive"));
        }
        if !(self.comm_range > 0.0 && self.comm_range.is_finite()) {
            return Err(Error::config("comm_range must be positive and finite"));
        }
        if !(self.world_side > 0.0 && self.world_side.is_finite()) {
            return Err(Error::config("world_side must be positive and finite"));
        }
        if !(self.v_max >= 0.0 && self.v_max.is_finite()) {
            return Err(Error::config("v_max must be non-negative and finite"));
        }
        if self.max_links != 2 {
            return Err(Error::config("max_links is fixed at 2"));
        }
        Ok(())
    }

    pub fn n_entities(&self) -> usize {
        self.n_aircraft + self.n_ground
    }

    /// Length of one aircraft's observation: `1 + 3 (N - 1)`.
    pub fn obs_dim(&self) -> usize {
        1 + 3 * (self.n_entities() - 1)
    }

    /// Length of one aircraft's desirability vector: `N - 1`.
    pub fn action_dim(&self) -> usize {
        self.n_entities() - 1
    }

    /// Length of the concatenated observation seen by the centralized critic.
    pub fn global_obs_dim(&self) -> usize {
        self.n_aircraft * self.obs_dim()
    }

    /// Upper bound of the episode cumulative reward, `T * N_A`.
    pub fn max_cumulative_reward(&self) -> f64 {
        (self.horizon * self.n_aircraft) as f64
    }
}

/// Undirected link set; pairs are stored as `(min, max)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkGraph {
    edges: BTreeSet<(usize, usize)>,
}

impl LinkGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_edges(edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut g = Self::new();
        for (a, b) in edges {
            g.insert(a, b);
        }
        g
    }

    pub fn insert(&mut self, a: usize, b: usize) {
        assert_ne!(a, b, "self-links are not allowed");
        self.edges.insert((a.min(b), a.max(b)));
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn degree(&self, e: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == e || b == e).count()
    }

    pub fn degrees(&self, n_entities: usize) -> Vec<usize> {
        let mut deg = vec![0; n_entities];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn adjacency(&self, n_entities: usize) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); n_entities];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub t: usize,
    pub entities: Vec<Entity>,
    pub links: LinkGraph,
}

impl WorldState {
    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionVector {
    pub desirability: Vec<f64>,
}

impl ActionVector {
    pub fn new(desirability: Vec<f64>) -> Self {
        Self { desirability }
    }

    /// Uniform random desirabilities over `(0, 1)`.
    pub fn uniform<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self::new((0..dim).map(|_| rng.random::<f64>()).collect())
    }
}

/// Samples a fresh world: uniform positions over the square, uniform
/// aircraft velocities in `[-v_max, v_max]` per axis.
pub fn init_world(cfg: &ScenarioConfig, seed: u64) -> Result<WorldState> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entities = (0..cfg.n_entities())
        .map(|id| {
            let kind = if id < cfg.n_aircraft {
                EntityKind::Aircraft
            } else {
                EntityKind::Ground
            };
            let pos = [
                rng.random_range(0.0..=cfg.world_side),
                rng.random_range(0.0..=cfg.world_side),
            ];
            let vel = match kind {
                EntityKind::Aircraft if cfg.v_max > 0.0 => [
                    rng.random_range(-cfg.v_max..=cfg.v_max),
                    rng.random_range(-cfg.v_max..=cfg.v_max),
                ],
                _ => [0.0, 0.0],
            };
            Entity { id, kind, pos, vel }
        })
        .collect();
    Ok(WorldState {
        t: 0,
        entities,
        links: LinkGraph::new(),
    })
}

fn within(p: [f64; 2], q: [f64; 2], range: f64) -> bool {
    (p[0] - q[0]).hypot(p[1] - q[1]) <= range
}

/// Inclusive range test: true iff the Euclidean distance is at most `comm_range`.
pub fn in_range(a: &Entity, b: &Entity, cfg: &ScenarioConfig) -> bool {
    within(a.pos, b.pos, cfg.comm_range)
}

/// The `lk` feature for the pair `(i, j)`.
///
/// Returns -1 when the pair is currently out of range. Otherwise counts the
/// steps `s in t..T` at which the constant-velocity extrapolations are within
/// range and divides by `T`.
pub fn link_range_fraction(i: usize, j: usize, world: &WorldState, cfg: &ScenarioConfig) -> f64 {
    assert_ne!(i, j, "link_range_fraction needs two distinct entities");
    let a = &world.entities[i];
    let b = &world.entities[j];
    if !in_range(a, b, cfg) {
        return -1.0;
    }
    let remaining = cfg.horizon.saturating_sub(world.t);
    if remaining == 0 {
        return 0.0;
    }
    let count = in_range_steps(a, b, cfg.comm_range, remaining - 1);
    count as f64 / cfg.horizon as f64
}

/// Number of `k in 0..=max_k` with the pair in range `k` steps ahead, given
/// that it is in range at `k = 0`. The squared distance is a convex quadratic
/// in `k`, so the in-range set is a prefix `0..=k_hi`.
fn in_range_steps(a: &Entity, b: &Entity, range: f64, max_k: usize) -> usize {
    let d = [b.pos[0] - a.pos[0], b.pos[1] - a.pos[1]];
    let dv = [b.vel[0] - a.vel[0], b.vel[1] - a.vel[1]];
    let qa = dv[0] * dv[0] + dv[1] * dv[1];
    if qa == 0.0 {
        return max_k + 1;
    }
    let qb = 2.0 * (d[0] * dv[0] + d[1] * dv[1]);
    let qc = d[0] * d[0] + d[1] * d[1] - range * range;
    let disc = (qb * qb - 4.0 * qa * qc).max(0.0);
    let root = (-qb + disc.sqrt()) / (2.0 * qa);
    let mut k = if root.is_finite() && root > 0.0 {
        (root.floor() as usize).min(max_k)
    } else {
        0
    };
    // Snap the analytic root onto the exact inclusive test.
    let ok = |k: usize| within(a.extrapolate(k as f64), b.extrapolate(k as f64), range);
    while k < max_k && ok(k + 1) {
        k += 1;
    }
    while k > 0 && !ok(k) {
        k -= 1;
    }
    k + 1
}

/// Indices of the `count` entities an aircraft nominates, best first.
fn nominations(aircraft: usize, desirability: &[f64], count: usize) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = desirability
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let id = if k < aircraft { k } else { k + 1 };
            (id, c.clamp(ACTION_EPS, 1.0 - ACTION_EPS))
        })
        .collect();
    ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    ranked.truncate(count);
    ranked
}

/// Builds this step's link graph from the aircraft nominations.
pub fn resolve_links(world: &WorldState, proposals: &[ActionVector], cfg: &ScenarioConfig) -> Result<LinkGraph> {
    let n = world.n_entities();
    if proposals.len() != cfg.n_aircraft {
        return Err(Error::contract(format!(
            "expected {} proposals, got {}",
            cfg.n_aircraft,
            proposals.len()
        )));
    }
    let mut nominated: Vec<Vec<(usize, f64)>> = Vec::with_capacity(cfg.n_aircraft);
    for (i, p) in proposals.iter().enumerate() {
        if p.desirability.len() != n - 1 {
            return Err(Error::contract(format!(
                "aircraft {i}: desirability vector has length {}, expected {}",
                p.desirability.len(),
                n - 1
            )));
        }
        if p.desirability.iter().any(|c| !c.is_finite()) {
            return Err(Error::contract(format!("aircraft {i}: non-finite desirability")));
        }
        nominated.push(nominations(i, &p.desirability, cfg.max_links));
    }
    let nominates = |i: usize, e: usize| nominated[i].iter().find(|&&(id, _)| id == e);

    let mut links = LinkGraph::new();
    for i in 0..cfg.n_aircraft {
        for j in (i + 1)..cfg.n_aircraft {
            if nominates(i, j).is_some()
                && nominates(j, i).is_some()
                && in_range(&world.entities[i], &world.entities[j], cfg)
            {
                links.insert(i, j);
            }
        }
    }
    for g in cfg.n_aircraft..n {
        let mut proposers: Vec<(usize, f64)> = (0..cfg.n_aircraft)
            .filter_map(|i| nominates(i, g).map(|&(_, c)| (i, c)))
            .filter(|&(i, _)| in_range(&world.entities[i], &world.entities[g], cfg))
            .collect();
        proposers.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        for &(i, _) in proposers.iter().take(cfg.max_links) {
            links.insert(i, g);
        }
    }
    Ok(links)
}

/// Path-to-ground indicator per entity, by breadth-first search from every
/// ground station.
pub fn path_to_ground(links: &LinkGraph, world: &WorldState) -> Vec<bool> {
    let n = world.n_entities();
    let adj = links.adjacency(n);
    let mut reached = vec![false; n];
    let mut queue = VecDeque::new();
    for e in &world.entities {
        if e.kind == EntityKind::Ground {
            reached[e.id] = true;
            queue.push_back(e.id);
        }
    }
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !reached[v] {
                reached[v] = true;
                queue.push_back(v);
            }
        }
    }
    reached
}

/// Global reward: mean path-to-ground over the aircraft `0..n_aircraft`.
pub fn reward(ptg: &[bool], n_aircraft: usize) -> f64 {
    assert!(n_aircraft > 0 && ptg.len() >= n_aircraft);
    ptg[..n_aircraft].iter().filter(|&&p| p).count() as f64 / n_aircraft as f64
}

fn build_observation(
    world: &WorldState,
    ptg: &[bool],
    degrees: &[usize],
    aircraft_id: usize,
    cfg: &ScenarioConfig,
) -> Observation {
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    let half = cfg.max_links as f64 / 2.0;
    let mut values = Vec::with_capacity(cfg.obs_dim());
    values.push(ind(ptg[aircraft_id]));
    for k in (0..world.n_entities()).filter(|&k| k != aircraft_id) {
        values.push(ind(ptg[k]));
        values.push(link_range_fraction(aircraft_id, k, world, cfg));
        values.push(degrees[k] as f64 / half - 1.0);
    }
    Observation { values }
}

/// Local observation of one aircraft against the world's current link graph.
pub fn observe(world: &WorldState, aircraft_id: usize, cfg: &ScenarioConfig) -> Observation {
    assert!(aircraft_id < cfg.n_aircraft, "{aircraft_id} is not an aircraft");
    let ptg = path_to_ground(&world.links, world);
    let degrees = world.links.degrees(world.n_entities());
    build_observation(world, &ptg, &degrees, aircraft_id, cfg)
}

/// Observations of every aircraft, in id order.
pub fn observe_all(world: &WorldState, cfg: &ScenarioConfig) -> Vec<Observation> {
    let ptg = path_to_ground(&world.links, world);
    let degrees = world.links.degrees(world.n_entities());
    (0..cfg.n_aircraft)
        .map(|i| build_observation(world, &ptg, &degrees, i, cfg))
        .collect()
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub world: WorldState,
    pub observations: Vec<Observation>,
    pub ptg: Vec<bool>,
    pub reward: f64,
    pub done: bool,
}

/// Advances the world one step: move, resolve links, score, observe.
pub fn env_step(world: &WorldState, joint_action: &[ActionVector], cfg: &ScenarioConfig) -> Result<StepOutcome> {
    if world.t >= cfg.horizon {
        return Err(Error::contract(format!("episode finished at t = {}", world.t)));
    }
    let mut next = WorldState {
        t: world.t + 1,
        entities: world
            .entities
            .iter()
            .map(|e| Entity {
                pos: e.extrapolate(1.0),
                ..e.clone()
            })
            .collect(),
        links: LinkGraph::new(),
    };
    next.links = resolve_links(&next, joint_action, cfg)?;
    let ptg = path_to_ground(&next.links, &next);
    let r = reward(&ptg, cfg.n_aircraft);
    let degrees = next.links.degrees(next.n_entities());
    let observations = (0..cfg.n_aircraft)
        .map(|i| build_observation(&next, &ptg, &degrees, i, cfg))
        .collect();
    let done = next.t == cfg.horizon;
    Ok(StepOutcome {
        world: next,
        observations,
        ptg,
        reward: r,
        done,
    })
}

/// Stateful wrapper over the functional step API.
#[derive(Debug, Clone)]
pub struct FanetEnv {
    cfg: ScenarioConfig,
    world: WorldState,
}

impl FanetEnv {
    pub fn new(cfg: ScenarioConfig, seed: u64) -> Result<Self> {
        let world = init_world(&cfg, seed)?;
        Ok(Self { cfg, world })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    /// Starts a new episode and returns the initial observations.
    pub fn reset(&mut self, seed: u64) -> Result<Vec<Observation>> {
        self.world = init_world(&self.cfg, seed)?;
        Ok(observe_all(&self.world, &self.cfg))
    }

    pub fn observations(&self) -> Vec<Observation> {
        observe_all(&self.world, &self.cfg)
    }

    pub fn step(&mut self, joint_action: &[ActionVector]) -> Result<StepOutcome> {
        let out = env_step(&self.world, joint_action, &self.cfg)?;
        self.world = out.world.clone();
        Ok(out)
    }
}

/// One line of the optional JSON-lines trajectory dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: usize,
    pub positions: Vec<[f64; 2]>,
    pub links: Vec<(usize, usize)>,
    pub ptg: Vec<bool>,
    pub reward: f64,
}

impl TrajectoryRecord {
    pub fn from_outcome(out: &StepOutcome) -> Self {
        Self {
            t: out.world.t,
            positions: out.world.entities.iter().map(|e| e.pos).collect(),
            links: out.world.links.edges().collect(),
            ptg: out.ptg.clone(),
            reward: out.reward,
        }
    }

    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> Result<()> {
        serde_json::to_writer(&mut *w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }
}

/// Uniform-random episode, returning its cumulative reward.
pub fn random_episode(cfg: &ScenarioConfig, seed: u64) -> Result<f64> {
    let mut world = init_world(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ac71_0000_0000);
    let mut cr = 0.0;
    loop {
        let actions: Vec<ActionVector> = (0..cfg.n_aircraft)
            .map(|_| ActionVector::uniform(cfg.action_dim(), &mut rng))
            .collect();
        let out = env_step(&world, &actions, cfg)?;
        cr += out.ptg[..cfg.n_aircraft].iter().filter(|&&p| p).count() as f64;
        world = out.world;
        if out.done {
            return Ok(cr);
        }
    }
}
