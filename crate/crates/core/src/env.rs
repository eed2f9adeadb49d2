//! Procedural residential environments and routes through them.
//!
//! Nodes sit on a jittered square grid (default spacing 2 m) and are only ever
//! joined to grid neighbours, so the four neighbours of a node always fall in
//! four different egocentric quadrants.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{ActionLabel, Lexicon};
use crate::rng::{derive_seed_str, rng};

pub const MAX_ROUTE_STEPS: usize = 10;
pub const MAX_OBJECTS_PER_NODE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedObject {
    pub name: String,
    /// Absolute bearing in degrees, `[0, 360)`, clockwise from +y.
    pub bearing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub position: [f64; 2],
    #[serde(default, skip_serializing_if = "is_zero")]
    pub level: i32,
    pub room_label: String,
    pub objects: Vec<PlacedObject>,
}

fn is_zero(v: &i32) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub length_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EnvironmentData {
    id: String,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    room_vocab: BTreeSet<String>,
    object_vocab: BTreeSet<String>,
}

/// A connected graph of furnished nodes. Edges are traversable both ways.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvironmentData", into = "EnvironmentData")]
pub struct Environment {
    id: String,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    room_vocab: BTreeSet<String>,
    object_vocab: BTreeSet<String>,
    index: HashMap<String, usize>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl From<Environment> for EnvironmentData {
    fn from(env: Environment) -> Self {
        Self {
            id: env.id,
            nodes: env.nodes,
            edges: env.edges,
            room_vocab: env.room_vocab,
            object_vocab: env.object_vocab,
        }
    }
}

impl TryFrom<EnvironmentData> for Environment {
    type Error = Error;

    fn try_from(data: EnvironmentData) -> Result<Self> {
        let env = Environment::from_parts(data.id, data.nodes, data.edges)?;
        if env.room_vocab != data.room_vocab || env.object_vocab != data.object_vocab {
            return Err(Error::InvalidConfig(format!(
                "environment `{}`: vocabularies disagree with placed labels",
                env.id
            )));
        }
        Ok(env)
    }
}

impl Environment {
    /// Builds an environment, checking every structural invariant.
    pub fn from_parts(id: String, nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate node id `{}`", n.id)));
            }
            if n.objects.len() > MAX_OBJECTS_PER_NODE {
                return Err(Error::InvalidConfig(format!("node `{}` has too many objects", n.id)));
            }
        }
        if nodes.is_empty() {
            return Err(Error::InvalidConfig("environment has no nodes".into()));
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for e in &edges {
            let a = *index.get(&e.from).ok_or_else(|| Error::UnknownNode(e.from.clone()))?;
            let b = *index.get(&e.to).ok_or_else(|| Error::UnknownNode(e.to.clone()))?;
            if a == b || e.length_m.is_nan() || e.length_m <= 0.0 {
                return Err(Error::InvalidConfig(format!("bad edge {} -> {}", e.from, e.to)));
            }
            adjacency[a].push((b, e.length_m));
            adjacency[b].push((a, e.length_m));
        }
        for adj in &mut adjacency {
            adj.sort_by_key(|&(n, _)| n);
        }
        let room_vocab = nodes.iter().map(|n| n.room_label.clone()).collect();
        let object_vocab = nodes.iter().flat_map(|n| n.objects.iter().map(|o| o.name.clone())).collect();
        let env = Self { id, nodes, edges, room_vocab, object_vocab, index, adjacency };
        if env.bfs_order(0).len() != env.nodes.len() {
            return Err(Error::InvalidConfig(format!("environment `{}` is not connected", env.id)));
        }
        Ok(env)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn room_vocab(&self) -> &BTreeSet<String> {
        &self.room_vocab
    }

    pub fn object_vocab(&self) -> &BTreeSet<String> {
        &self.object_vocab
    }

    pub fn node_index(&self, id: &str) -> Result<usize> {
        self.index.get(id).copied().ok_or_else(|| Error::UnknownNode(id.to_owned()))
    }

    pub fn node(&self, id: &str) -> Result<&Node> {
        Ok(&self.nodes[self.node_index(id)?])
    }

    /// Neighbour indices with edge lengths, sorted by index.
    pub fn neighbors(&self, idx: usize) -> &[(usize, f64)] {
        &self.adjacency[idx]
    }

    pub fn is_adjacent(&self, a: &str, b: &str) -> bool {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&a), Some(&b)) => self.adjacency[a].iter().any(|&(n, _)| n == b),
            _ => false,
        }
    }

    /// Absolute bearing of the straight line from node `a` to node `b`.
    pub fn bearing(&self, a: usize, b: usize) -> f64 {
        let [ax, ay] = self.nodes[a].position;
        let [bx, by] = self.nodes[b].position;
        normalize_deg((bx - ax).atan2(by - ay).to_degrees())
    }

    /// Direction label of moving from `a` to `b` while facing `heading`.
    pub fn action_label(&self, a: usize, b: usize, heading: f64) -> ActionLabel {
        let (la, lb) = (self.nodes[a].level, self.nodes[b].level);
        if lb > la {
            return ActionLabel::GoUp;
        }
        if lb < la {
            return ActionLabel::GoDown;
        }
        match quadrant(self.bearing(a, b) - heading) {
            Egocentric::Ahead => ActionLabel::GoStraight,
            Egocentric::Right => ActionLabel::TurnRight,
            Egocentric::Behind => ActionLabel::TurnAround,
            Egocentric::Left => ActionLabel::TurnLeft,
        }
    }

    fn bfs_order(&self, start: usize) -> Vec<usize> {
        let mut seen = vec![false; self.nodes.len()];
        let mut order = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(n) = queue.pop_front() {
            order.push(n);
            for &(m, _) in &self.adjacency[n] {
                if !seen[m] {
                    seen[m] = true;
                    queue.push_back(m);
                }
            }
        }
        order
    }

    /// Single-source shortest path lengths (Dijkstra).
    pub fn distances_from(&self, source: usize) -> Vec<f64> {
        #[derive(PartialEq)]
        struct Item(f64, usize);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Item {
            fn cmp(&self, other: &Self) -> Ordering {
                other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
            }
        }
        let mut dist = vec![f64::INFINITY; self.nodes.len()];
        dist[source] = 0.0;
        let mut heap = BinaryHeap::from([Item(0.0, source)]);
        while let Some(Item(d, n)) = heap.pop() {
            if d > dist[n] {
                continue;
            }
            for &(m, w) in &self.adjacency[n] {
                let nd = d + w;
                if nd < dist[m] {
                    dist[m] = nd;
                    heap.push(Item(nd, m));
                }
            }
        }
        dist
    }

    /// Unweighted shortest path as node indices, `a` and `b` included.
    pub fn shortest_hops(&self, a: usize, b: usize) -> Vec<usize> {
        let mut prev = vec![usize::MAX; self.nodes.len()];
        let mut queue = VecDeque::from([a]);
        prev[a] = a;
        while let Some(n) = queue.pop_front() {
            if n == b {
                break;
            }
            for &(m, _) in &self.adjacency[n] {
                if prev[m] == usize::MAX {
                    prev[m] = n;
                    queue.push_back(m);
                }
            }
        }
        let mut path = vec![b];
        let mut cur = b;
        while cur != a {
            cur = prev[cur];
            path.push(cur);
        }
        path.reverse();
        path
    }
}

/// Shortest-path distance in meters between two nodes. Exactly symmetric:
/// the search always starts from the lower node index.
pub fn path_distance(env: &Environment, a: &str, b: &str) -> Result<f64> {
    let (a, b) = (env.node_index(a)?, env.node_index(b)?);
    Ok(env.distances_from(a.min(b))[a.max(b)])
}

pub fn normalize_deg(deg: f64) -> f64 {
    let d = deg.rem_euclid(360.0);
    if d >= 360.0 {
        0.0
    } else {
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Egocentric {
    Ahead,
    Right,
    Behind,
    Left,
}

/// Quadrant rule over a relative angle: `[315, 45)` ahead, `[45, 135)` right,
/// `[135, 225)` behind, `[225, 315)` left.
pub fn quadrant(relative_deg: f64) -> Egocentric {
    let d = normalize_deg(relative_deg);
    if !(45.0..315.0).contains(&d) {
        Egocentric::Ahead
    } else if d < 135.0 {
        Egocentric::Right
    } else if d < 225.0 {
        Egocentric::Behind
    } else {
        Egocentric::Left
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibleObject {
    pub name: String,
    pub direction: Egocentric,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub room_label: String,
    pub visible: Vec<VisibleObject>,
}

impl Observation {
    pub fn direction_of(&self, object: &str) -> impl Iterator<Item = Egocentric> + '_ {
        let object = object.to_owned();
        self.visible.iter().filter(move |v| v.name == object).map(|v| v.direction)
    }

    pub fn sees(&self, object: &str) -> bool {
        self.visible.iter().any(|v| v.name == object)
    }
}

pub fn observation_at(env: &Environment, node_id: &str, incoming_heading: f64) -> Result<Observation> {
    let node = env.node(node_id)?;
    Ok(observe(node, incoming_heading))
}

fn observe(node: &Node, heading: f64) -> Observation {
    Observation {
        room_label: node.room_label.clone(),
        visible: node
            .objects
            .iter()
            .map(|o| VisibleObject { name: o.name.clone(), direction: quadrant(o.bearing - heading) })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub direction_label: ActionLabel,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub observation: Observation,
    pub action: Action,
}

/// An intended route: observations and actions from `start` to the goal.
///
/// Position `t < steps.len()` is the node where step `t` is observed; the final
/// position `steps.len()` is the goal, observed in `arrival`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub id: String,
    pub env_id: String,
    pub start: String,
    pub start_heading: f64,
    pub steps: Vec<Step>,
    pub arrival: Observation,
}

impl Route {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Node ids along the route, start and goal included.
    pub fn node_ids(&self) -> Vec<&str> {
        std::iter::once(self.start.as_str()).chain(self.steps.iter().map(|s| s.action.target.as_str())).collect()
    }

    pub fn goal(&self) -> &str {
        self.steps.last().map_or(self.start.as_str(), |s| s.action.target.as_str())
    }

    /// Observation at position `p` (`0..=len`).
    pub fn observation(&self, p: usize) -> &Observation {
        if p < self.steps.len() {
            &self.steps[p].observation
        } else {
            &self.arrival
        }
    }

    pub fn action(&self, p: usize) -> Option<ActionLabel> {
        self.steps.get(p).map(|s| s.action.direction_label)
    }

    /// Rebuilds a route from a node path, computing observations and actions.
    pub fn from_path(env: &Environment, id: String, path: &[usize], start_heading: f64) -> Result<Self> {
        let mut heading = start_heading;
        let mut steps = Vec::with_capacity(path.len().saturating_sub(1));
        for w in path.windows(2) {
            let (a, b) = (w[0], w[1]);
            if !env.neighbors(a).iter().any(|&(n, _)| n == b) {
                return Err(Error::InvalidConfig(format!(
                    "{} and {} are not adjacent",
                    env.nodes[a].id, env.nodes[b].id
                )));
            }
            steps.push(Step {
                observation: observe(&env.nodes[a], heading),
                action: Action { direction_label: env.action_label(a, b, heading), target: env.nodes[b].id.clone() },
            });
            heading = env.bearing(a, b);
        }
        let last = *path.last().ok_or_else(|| Error::InvalidConfig("empty path".into()))?;
        Ok(Route {
            id,
            env_id: env.id.clone(),
            start: env.nodes[path[0]].id.clone(),
            start_heading,
            steps,
            arrival: observe(&env.nodes[last], heading),
        })
    }

    /// Re-walks the route on `env` and checks every stored observation and action.
    pub fn validate(&self, env: &Environment) -> Result<()> {
        let path = self.node_ids().iter().map(|id| env.node_index(id)).collect::<Result<Vec<_>>>()?;
        let rebuilt = Route::from_path(env, self.id.clone(), &path, self.start_heading)?;
        if &rebuilt != self {
            return Err(Error::InvalidConfig(format!("route `{}` disagrees with its environment", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub spacing_m: f64,
    pub jitter_m: f64,
    pub extra_edge_prob: f64,
    pub nodes_per_room: usize,
    pub rooms: Vec<String>,
    pub objects: Vec<String>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        let lex = Lexicon::builtin();
        Self {
            min_nodes: 12,
            max_nodes: 20,
            spacing_m: 2.0,
            jitter_m: 0.25,
            extra_edge_prob: 0.3,
            nodes_per_room: 3,
            rooms: lex.rooms().to_vec(),
            objects: lex.objects().to_vec(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_nodes == 0 || self.min_nodes > self.max_nodes {
            return Err(Error::InvalidConfig(format!("empty node range [{}, {}]", self.min_nodes, self.max_nodes)));
        }
        let rooms: BTreeSet<_> = self.rooms.iter().collect();
        let objects: BTreeSet<_> = self.objects.iter().collect();
        if rooms.len() < 2 {
            return Err(Error::InvalidConfig("need at least 2 room labels".into()));
        }
        if objects.len() < 3 {
            return Err(Error::InvalidConfig("need at least 3 object names".into()));
        }
        // keep neighbour bearings inside distinct quadrants
        if self.spacing_m.is_nan() || self.spacing_m <= 0.0 || !(0.0..self.spacing_m / 4.0).contains(&self.jitter_m) {
            return Err(Error::InvalidConfig("jitter must be below a quarter of the grid spacing".into()));
        }
        if !(0.0..=1.0).contains(&self.extra_edge_prob) || self.nodes_per_room == 0 {
            return Err(Error::InvalidConfig("bad edge probability or room size".into()));
        }
        Ok(())
    }
}

fn round_to(x: f64, scale: f64) -> f64 {
    (x * scale).round() / scale
}

pub fn generate_environment(seed: u64, config: &EnvConfig) -> Result<Environment> {
    config.validate()?;
    let mut rng = rng(derive_seed_str(seed, "environment"));
    let n = rng.gen_range(config.min_nodes..=config.max_nodes);

    // Grow a polyomino of grid cells; each new cell is joined to the cell it grew from.
    let mut cells: Vec<(i32, i32)> = vec![(0, 0)];
    let mut cell_index: HashMap<(i32, i32), usize> = HashMap::from([((0, 0), 0)]);
    let mut tree_edges: Vec<(usize, usize)> = Vec::new();
    const DIRS: [(i32, i32); 4] = [(0, 1), (1, 0), (0, -1), (-1, 0)];
    while cells.len() < n {
        let mut frontier: Vec<((i32, i32), usize)> = Vec::new();
        for (i, &(x, y)) in cells.iter().enumerate() {
            for (dx, dy) in DIRS {
                let c = (x + dx, y + dy);
                if !cell_index.contains_key(&c) {
                    frontier.push((c, i));
                }
            }
        }
        let &(cell, parent) = frontier.choose(&mut rng).expect("frontier never empty");
        cell_index.insert(cell, cells.len());
        tree_edges.push((parent, cells.len()));
        cells.push(cell);
    }
    let mut edge_set: BTreeSet<(usize, usize)> = tree_edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    for (i, &(x, y)) in cells.iter().enumerate() {
        for (dx, dy) in [(0, 1), (1, 0)] {
            if let Some(&j) = cell_index.get(&(x + dx, y + dy)) {
                let key = (i.min(j), i.max(j));
                if !edge_set.contains(&key) && rng.gen_bool(config.extra_edge_prob) {
                    edge_set.insert(key);
                }
            }
        }
    }

    let positions: Vec<[f64; 2]> = cells
        .iter()
        .map(|&(x, y)| {
            let jx = rng.gen_range(-config.jitter_m..=config.jitter_m);
            let jy = rng.gen_range(-config.jitter_m..=config.jitter_m);
            [round_to(f64::from(x) * config.spacing_m + jx, 1000.0), round_to(f64::from(y) * config.spacing_m + jy, 1000.0)]
        })
        .collect();

    // Rooms: multi-source BFS regions over the edge graph.
    let mut adjacency = vec![Vec::new(); n];
    for &(a, b) in &edge_set {
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    let vocab_rooms: Vec<&String> = config.rooms.iter().collect::<BTreeSet<_>>().into_iter().collect();
    let regions = (n / config.nodes_per_room).clamp(2.min(n), vocab_rooms.len());
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut region = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for (r, &seed_node) in order.iter().take(regions).enumerate() {
        region[seed_node] = r;
        queue.push_back(seed_node);
    }
    while let Some(a) = queue.pop_front() {
        let mut next = adjacency[a].clone();
        next.shuffle(&mut rng);
        for b in next {
            if region[b] == usize::MAX {
                region[b] = region[a];
                queue.push_back(b);
            }
        }
    }
    let labels: Vec<String> = vocab_rooms.choose_multiple(&mut rng, regions).map(|s| (*s).clone()).collect();

    let vocab_objects: Vec<&String> = config.objects.iter().collect::<BTreeSet<_>>().into_iter().collect();
    let nodes: Vec<Node> = (0..n)
        .map(|i| {
            let count = rng.gen_range(0..=MAX_OBJECTS_PER_NODE.min(vocab_objects.len()));
            let objects = vocab_objects
                .choose_multiple(&mut rng, count)
                .map(|name| PlacedObject {
                    name: (*name).clone(),
                    bearing: normalize_deg(round_to(rng.gen_range(0.0..360.0), 10.0)),
                })
                .collect();
            Node { id: format!("n{i}"), position: positions[i], level: 0, room_label: labels[region[i]].clone(), objects }
        })
        .collect();
    let edges = edge_set
        .iter()
        .map(|&(a, b)| {
            let [ax, ay] = positions[a];
            let [bx, by] = positions[b];
            Edge { from: format!("n{a}"), to: format!("n{b}"), length_m: (bx - ax).hypot(by - ay) }
        })
        .collect();
    Environment::from_parts(format!("env-{seed}"), nodes, edges)
}

/// Samples a simple path with a step count drawn from `length_range`. When the
/// graph has no simple path of the drawn length, shorter lengths in the range
/// are tried first, then longer ones.
pub fn sample_route(env: &Environment, seed: u64, length_range: (usize, usize)) -> Result<Route> {
    sample_route_with_id(env, seed, length_range, format!("{}/r{seed}", env.id))
}

pub fn sample_route_with_id(env: &Environment, seed: u64, length_range: (usize, usize), id: String) -> Result<Route> {
    let (lo, hi) = length_range;
    if lo == 0 || lo > hi || hi > MAX_ROUTE_STEPS {
        return Err(Error::InvalidConfig(format!("route length range [{lo}, {hi}] must lie within [1, {MAX_ROUTE_STEPS}]")));
    }
    let mut rng = rng(derive_seed_str(seed, "route"));
    let drawn = rng.gen_range(lo..=hi);
    for len in (lo..=drawn).rev().chain(drawn + 1..=hi) {
        let mut starts: Vec<usize> = (0..env.nodes.len()).collect();
        starts.shuffle(&mut rng);
        for start in starts {
            let mut path = vec![start];
            let mut budget = 10_000usize;
            if extend_path(env, &mut path, len, &mut rng, &mut budget) {
                let heading = [0.0, 90.0, 180.0, 270.0][rng.gen_range(0..4)];
                return Route::from_path(env, id, &path, heading);
            }
        }
    }
    Err(Error::RouteTooLong { env: env.id.clone(), len: lo })
}

fn extend_path(env: &Environment, path: &mut Vec<usize>, len: usize, rng: &mut crate::rng::Rng, budget: &mut usize) -> bool {
    if path.len() == len + 1 {
        return true;
    }
    if *budget == 0 {
        return false;
    }
    *budget -= 1;
    let last = *path.last().unwrap();
    let mut next: Vec<usize> = env.neighbors(last).iter().map(|&(n, _)| n).filter(|n| !path.contains(n)).collect();
    next.shuffle(rng);
    for n in next {
        path.push(n);
        if extend_path(env, path, len, rng, budget) {
            return true;
        }
        path.pop();
    }
    false
}
