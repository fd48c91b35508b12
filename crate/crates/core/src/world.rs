//! Procedural gridworld environments: rooms, objects, navigation graph,
//! shortest-path trajectories, panoramic subview features and template
//! instructions in two styles.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DIRECTIONS: [&str; 8] = [
    "north",
    "northeast",
    "east",
    "southeast",
    "south",
    "southwest",
    "west",
    "northwest",
];

pub const ROOM_TYPES: [&str; 6] = ["kitchen", "bedroom", "bathroom", "hallway", "office", "lounge"];

pub const DEFAULT_OBJECTS: [&str; 12] = [
    "sofa", "lamp", "table", "chair", "bed", "plant", "piano", "fridge", "sink", "desk", "shelf",
    "painting",
];

/// Grid offsets for each entry of [`DIRECTIONS`]; `y` grows southwards.
const OFFSETS: [(i64, i64); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

pub fn default_vocab() -> Vec<String> {
    DEFAULT_OBJECTS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    FineGrained,
    HighLevel,
}

impl Style {
    pub const ALL: [Style; 2] = [Style::FineGrained, Style::HighLevel];

    pub fn as_str(self) -> &'static str {
        match self {
            Style::FineGrained => "fine_grained",
            Style::HighLevel => "high_level",
        }
    }
}

impl std::str::FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fine_grained" | "fine" => Ok(Style::FineGrained),
            "high_level" | "high" => Ok(Style::HighLevel),
            other => Err(Error::Config(format!("unknown style {other:?}"))),
        }
    }
}

impl std::fmt::Display for Style {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Room {
    pub x0: usize,
    pub y0: usize,
    /// Exclusive.
    pub x1: usize,
    /// Exclusive.
    pub y1: usize,
    pub kind: String,
}

impl Room {
    fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldGrid {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub rooms: Vec<Room>,
    pub walkable: Vec<bool>,
    pub objects: BTreeMap<usize, String>,
    pub nav_graph: Vec<Vec<usize>>,
}

/// Parameters of the synthetic camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewConfig {
    /// Subviews per panorama.
    pub k: usize,
    /// Raw feature width (the visual-backbone stand-in).
    pub d_raw: usize,
    /// Line-of-sight range in cells.
    pub view_range: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            k: 36,
            d_raw: 32,
            view_range: 2.5,
        }
    }
}

impl ViewConfig {
    /// Fast preset used by the toy pipeline and most tests.
    pub fn toy() -> Self {
        ViewConfig {
            k: 8,
            ..Self::default()
        }
    }

    pub fn stop_action(&self) -> usize {
        self.k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanoramaObservation {
    /// `K` unit-norm feature vectors of width `d_raw`.
    pub subviews: Vec<Vec<f64>>,
    pub subview_headings: Vec<f64>,
    pub visible_objects: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub viewpoint: usize,
    pub panorama: PanoramaObservation,
    /// Subview index towards the next viewpoint, or `K` (STOP) at the end.
    pub action: usize,
    /// Subviews pointing at navigable neighbors, ascending.
    #[serde(default)]
    pub candidates: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub world_seed: u64,
    pub k: usize,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn viewpoints(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.viewpoint).collect()
    }

    pub fn start(&self) -> usize {
        self.steps[0].viewpoint
    }

    pub fn goal(&self) -> usize {
        self.steps[self.steps.len() - 1].viewpoint
    }

    pub fn stop_action(&self) -> usize {
        self.k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub trajectory_id: String,
    pub style: Style,
    pub text: Vec<String>,
    pub linguistic_landmarks: Vec<String>,
    pub reference_texts: Vec<Vec<String>>,
}

/// 64-bit FNV-1a, stable across platforms and compiler versions.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic unit vector for a name.
pub fn name_embedding(name: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(name.as_bytes()));
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Clockwise angle from north, in `[0, 2π)`.
pub fn heading(dx: f64, dy: f64) -> f64 {
    let a = dx.atan2(-dy);
    if a < 0.0 {
        a + 2.0 * PI
    } else {
        a
    }
}

/// Subview bucket containing a heading: bucket `k` spans `[k·w − w/2, k·w + w/2)`.
pub fn heading_bucket(theta: f64, k: usize) -> usize {
    let w = 2.0 * PI / k as f64;
    ((theta / w + 0.5).floor() as usize) % k
}

impl WorldGrid {
    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn xy(&self, cell: usize) -> (usize, usize) {
        (cell % self.width, cell / self.width)
    }

    pub fn cell(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn is_walkable(&self, cell: usize) -> bool {
        cell < self.cells() && self.walkable[cell]
    }

    pub fn room_index(&self, cell: usize) -> usize {
        let (x, y) = self.xy(cell);
        self.rooms
            .iter()
            .position(|r| r.contains(x, y))
            .expect("rooms tile the grid")
    }

    pub fn room_kind(&self, cell: usize) -> &str {
        &self.rooms[self.room_index(cell)].kind
    }

    pub fn object_at(&self, cell: usize) -> Option<&str> {
        self.objects.get(&cell).map(String::as_str)
    }

    /// Neighbor in one of the eight compass directions, if it is on the graph.
    pub fn step(&self, cell: usize, dir: usize) -> Option<usize> {
        let (x, y) = self.xy(cell);
        let (dx, dy) = OFFSETS[dir];
        let nx = x as i64 + dx;
        let ny = y as i64 + dy;
        if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
            return None;
        }
        let n = self.cell(nx as usize, ny as usize);
        self.nav_graph[cell].contains(&n).then_some(n)
    }

    /// Compass index (into [`DIRECTIONS`]) of a move between neighbors.
    pub fn direction_between(&self, from: usize, to: usize) -> Option<usize> {
        let (fx, fy) = self.xy(from);
        let (tx, ty) = self.xy(to);
        let d = (tx as i64 - fx as i64, ty as i64 - fy as i64);
        OFFSETS.iter().position(|&o| o == d)
    }

    pub fn heading_between(&self, from: usize, to: usize) -> f64 {
        let (fx, fy) = self.xy(from);
        let (tx, ty) = self.xy(to);
        heading(tx as f64 - fx as f64, ty as f64 - fy as f64)
    }

    /// Subview index at `from` whose heading points at `to`.
    pub fn action_towards(&self, from: usize, to: usize, k: usize) -> usize {
        heading_bucket(self.heading_between(from, to), k)
    }

    /// Subview indices whose heading points at a navigable neighbor.
    pub fn candidate_views(&self, cell: usize, k: usize) -> Vec<usize> {
        let mut views: Vec<usize> = self.nav_graph[cell].iter().map(|&n| self.action_towards(cell, n, k)).collect();
        views.sort_unstable();
        views.dedup();
        views
    }

    /// Hop distances from `src` over the navigation graph (`usize::MAX` if unreachable).
    pub fn bfs(&self, src: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.cells()];
        if !self.is_walkable(src) {
            return dist;
        }
        dist[src] = 0;
        let mut q = VecDeque::from([src]);
        while let Some(c) = q.pop_front() {
            for &n in &self.nav_graph[c] {
                if dist[n] == usize::MAX {
                    dist[n] = dist[c] + 1;
                    q.push_back(n);
                }
            }
        }
        dist
    }

    pub fn shortest_len(&self, a: usize, b: usize) -> Option<usize> {
        let d = self.bfs(a)[b];
        (d != usize::MAX).then_some(d)
    }

    /// A deterministic shortest path `from → to` (inclusive), if one exists.
    pub fn shortest_path(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        let dist = self.bfs(to);
        if dist[from] == usize::MAX {
            return None;
        }
        let mut path = vec![from];
        let mut cur = from;
        while cur != to {
            cur = *self.nav_graph[cur]
                .iter()
                .find(|&&n| dist[n] + 1 == dist[cur])
                .expect("bfs predecessor");
            path.push(cur);
        }
        Some(path)
    }

    /// No blocked cell strictly between `a` and `b` on the sampled segment.
    pub fn line_of_sight(&self, a: usize, b: usize) -> bool {
        let (ax, ay) = self.xy(a);
        let (bx, by) = self.xy(b);
        let (ax, ay, bx, by) = (ax as f64, ay as f64, bx as f64, by as f64);
        let n = ((bx - ax).abs().max((by - ay).abs()) * 2.0).ceil() as usize;
        for i in 1..n {
            let t = i as f64 / n as f64;
            let x = (ax + t * (bx - ax)).round() as usize;
            let y = (ay + t * (by - ay)).round() as usize;
            let c = self.cell(x, y);
            if c != a && c != b && !self.walkable[c] {
                return false;
            }
        }
        true
    }

    fn is_connected(&self) -> bool {
        let Some(start) = (0..self.cells()).find(|&c| self.walkable[c]) else {
            return false;
        };
        let dist = self.bfs(start);
        (0..self.cells()).all(|c| !self.walkable[c] || dist[c] != usize::MAX)
    }

    fn rebuild_graph(&mut self) {
        let mut graph = vec![Vec::new(); self.cells()];
        for (c, adj) in graph.iter_mut().enumerate() {
            if !self.walkable[c] {
                continue;
            }
            let (x, y) = self.xy(c);
            for &(dx, dy) in &OFFSETS {
                let nx = x as i64 + dx;
                let ny = y as i64 + dy;
                if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
                    continue;
                }
                let n = self.cell(nx as usize, ny as usize);
                if self.walkable[n] {
                    adj.push(n);
                }
            }
        }
        self.nav_graph = graph;
    }
}

/// Build a world: up to four rectangular rooms, a few pillars that never
/// disconnect the walkable graph, and objects on walkable cells.
pub fn generate_world(seed: u64, width: usize, height: usize, vocab: &[String]) -> Result<WorldGrid> {
    if width < 4 || height < 4 {
        return Err(Error::WorldTooSmall { width, height });
    }
    if vocab.is_empty() {
        return Err(Error::EmptyVocab);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kinds: Vec<&str> = ROOM_TYPES.to_vec();
    kinds.shuffle(&mut rng);
    let sx = rng.gen_range(2..=width - 2);
    let mut rects = Vec::new();
    for (x0, x1) in [(0, sx), (sx, width)] {
        if rng.gen_bool(0.75) {
            let sy = rng.gen_range(2..=height - 2);
            rects.push((x0, 0, x1, sy));
            rects.push((x0, sy, x1, height));
        } else {
            rects.push((x0, 0, x1, height));
        }
    }
    let rooms = rects
        .into_iter()
        .enumerate()
        .map(|(i, (x0, y0, x1, y1))| Room {
            x0,
            y0,
            x1,
            y1,
            kind: kinds[i % kinds.len()].to_string(),
        })
        .collect();

    let mut world = WorldGrid {
        seed,
        width,
        height,
        rooms,
        walkable: vec![true; width * height],
        objects: BTreeMap::new(),
        nav_graph: Vec::new(),
    };
    world.rebuild_graph();

    let mut order: Vec<usize> = (0..world.cells()).collect();
    order.shuffle(&mut rng);
    let pillars = world.cells() / 10;
    let mut placed = 0;
    for &c in &order {
        if placed == pillars {
            break;
        }
        world.walkable[c] = false;
        world.rebuild_graph();
        if world.is_connected() {
            placed += 1;
        } else {
            world.walkable[c] = true;
            world.rebuild_graph();
        }
    }

    let mut free: Vec<usize> = (0..world.cells()).filter(|&c| world.walkable[c]).collect();
    free.shuffle(&mut rng);
    let n_objects = (free.len() / 5).max(1);
    for &c in free.iter().take(n_objects) {
        let name = vocab[rng.gen_range(0..vocab.len())].clone();
        world.objects.insert(c, name);
    }
    Ok(world)
}

/// Panorama at a viewpoint. Objects are visible in subview `k` when they sit
/// inside that subview's heading bucket, within range and line of sight.
pub fn render_panorama(world: &WorldGrid, viewpoint: usize, view: &ViewConfig) -> Result<PanoramaObservation> {
    if !world.is_walkable(viewpoint) {
        return Err(Error::UnknownViewpoint(viewpoint));
    }
    let k = view.k;
    let mut seen: Vec<Vec<(f64, String)>> = vec![Vec::new(); k];
    let (vx, vy) = world.xy(viewpoint);
    for (&cell, name) in &world.objects {
        if cell == viewpoint {
            continue;
        }
        let (ox, oy) = world.xy(cell);
        let dx = ox as f64 - vx as f64;
        let dy = oy as f64 - vy as f64;
        let dist = (dx * dx + dy * dy).sqrt();
        if dist > view.view_range || !world.line_of_sight(viewpoint, cell) {
            continue;
        }
        let b = heading_bucket(heading(dx, dy), k);
        seen[b].push((dist, name.clone()));
    }
    let room = world.room_kind(viewpoint);
    let room_vec = name_embedding(&format!("room:{room}"), view.d_raw);
    let mut subviews = Vec::with_capacity(k);
    let mut visible = Vec::with_capacity(k);
    for (b, mut objs) in seen.into_iter().enumerate() {
        objs.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let mut names: Vec<String> = Vec::new();
        for (_, n) in objs {
            if !names.contains(&n) {
                names.push(n);
            }
        }
        subviews.push(subview_feature(&names, b, k, &room_vec, view.d_raw));
        visible.push(names);
    }
    Ok(PanoramaObservation {
        subviews,
        subview_headings: (0..k).map(|b| 2.0 * PI * b as f64 / k as f64).collect(),
        visible_objects: visible,
    })
}

/// Bag-of-objects embedding plus heading and room vectors, renormalized.
fn subview_feature(objects: &[String], bucket: usize, k: usize, room_vec: &[f64], dim: usize) -> Vec<f64> {
    let mut f = vec![0.0; dim];
    for o in objects {
        for (a, b) in f.iter_mut().zip(name_embedding(&format!("object:{o}"), dim)) {
            *a += b;
        }
    }
    for (a, b) in f.iter_mut().zip(name_embedding(&format!("heading:{bucket}/{k}"), dim)) {
        *a += 0.5 * b;
    }
    for (a, b) in f.iter_mut().zip(room_vec) {
        *a += 0.7 * b;
    }
    let n = f.iter().map(|x| x * x).sum::<f64>().sqrt();
    f.iter_mut().for_each(|x| *x /= n);
    f
}

/// Build a trajectory from an explicit viewpoint path.
pub fn trajectory_from_path(
    world: &WorldGrid,
    id: &str,
    path: &[usize],
    view: &ViewConfig,
) -> Result<Trajectory> {
    let mut steps = Vec::with_capacity(path.len());
    for (i, &vp) in path.iter().enumerate() {
        let action = match path.get(i + 1) {
            Some(&next) => {
                if !world.nav_graph[vp].contains(&next) {
                    return Err(Error::Data(format!("{vp} and {next} are not neighbors")));
                }
                world.action_towards(vp, next, view.k)
            }
            None => view.stop_action(),
        };
        steps.push(TrajectoryStep {
            viewpoint: vp,
            panorama: render_panorama(world, vp, view)?,
            action,
            candidates: world.candidate_views(vp, view.k),
        });
    }
    Ok(Trajectory {
        id: id.to_string(),
        world_seed: world.seed,
        k: view.k,
        steps,
    })
}

/// Sample a random shortest-path trajectory with `T ∈ [min, max]` viewpoints.
/// Goals holding an object are preferred.
pub fn sample_trajectory(
    world: &WorldGrid,
    seed: u64,
    len_range: (usize, usize),
    view: &ViewConfig,
) -> Result<Trajectory> {
    let (min, max) = len_range;
    if min < 2 || max < min {
        return Err(Error::InvalidLengthRange { min, max });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7a11);
    let walk: Vec<usize> = (0..world.cells()).filter(|&c| world.walkable[c]).collect();
    let dists: Vec<Vec<usize>> = walk.iter().map(|&c| world.bfs(c)).collect();

    let mut lengths: Vec<usize> = (min..=max).collect();
    lengths.shuffle(&mut rng);
    for t in lengths {
        let hops = t - 1;
        let mut with_obj = Vec::new();
        let mut without = Vec::new();
        for (i, &s) in walk.iter().enumerate() {
            for &g in &walk {
                if dists[i][g] == hops {
                    if world.objects.contains_key(&g) {
                        with_obj.push((s, g));
                    } else {
                        without.push((s, g));
                    }
                }
            }
        }
        let pool = if with_obj.is_empty() { &without } else { &with_obj };
        let Some(&(start, goal)) = pool.choose(&mut rng) else {
            continue;
        };
        // Random walk down the distance field to the goal.
        let to_goal = world.bfs(goal);
        let mut path = vec![start];
        let mut cur = start;
        while cur != goal {
            let options: Vec<usize> = world.nav_graph[cur]
                .iter()
                .copied()
                .filter(|&n| to_goal[n] + 1 == to_goal[cur])
                .collect();
            cur = *options.choose(&mut rng).expect("shortest-path successor");
            path.push(cur);
        }
        let id = format!("w{}-t{}", world.seed, seed);
        return trajectory_from_path(world, &id, &path, view);
    }
    Err(Error::UnreachableLength {
        world: world.seed,
        min,
    })
}

pub const MOVE_VERBS: [&str; 3] = ["go", "walk", "head"];
pub const STOP_VERBS: [&str; 2] = ["stop", "wait"];
pub const FIND_VERBS: [&str; 3] = ["find", "locate", "reach"];

struct Phrasing {
    move_verb: &'static str,
    stop_verb: &'static str,
    find_verb: &'static str,
}

const CANONICAL: Phrasing = Phrasing {
    move_verb: "go",
    stop_verb: "stop",
    find_verb: "find",
};

fn render_instruction(
    traj: &Trajectory,
    world: &WorldGrid,
    style: Style,
    p: &Phrasing,
) -> (Vec<String>, Vec<String>) {
    let cells = traj.viewpoints();
    let mut words: Vec<String> = Vec::new();
    let mut nouns: Vec<String> = Vec::new();
    let push = |words: &mut Vec<String>, s: &str| words.extend(s.split_whitespace().map(String::from));
    let last = *cells.last().expect("non-empty trajectory");
    match style {
        Style::FineGrained => {
            for i in 0..cells.len() - 1 {
                let (a, b) = (cells[i], cells[i + 1]);
                let dir = world.direction_between(a, b).expect("neighbors");
                if i > 0 {
                    push(&mut words, ",");
                }
                push(&mut words, &format!("{} {}", p.move_verb, DIRECTIONS[dir]));
                if world.room_index(a) != world.room_index(b) {
                    let room = world.room_kind(b);
                    push(&mut words, &format!("into the {room}"));
                    nouns.push(room.to_string());
                } else if i + 1 < cells.len() - 1 {
                    if let Some(obj) = world.object_at(b) {
                        push(&mut words, &format!("past the {obj}"));
                        nouns.push(obj.to_string());
                    }
                }
            }
            if cells.len() > 1 {
                push(&mut words, "and");
            }
            match world.object_at(last) {
                Some(obj) => {
                    push(&mut words, &format!("{} at the {obj}", p.stop_verb));
                    nouns.push(obj.to_string());
                }
                None => {
                    let room = world.room_kind(last);
                    push(&mut words, &format!("{} in the {room}", p.stop_verb));
                    nouns.push(room.to_string());
                }
            }
        }
        Style::HighLevel => {
            let same_room = world.room_index(cells[0]) == world.room_index(last);
            let room = world.room_kind(last);
            match world.object_at(last) {
                Some(obj) if same_room => {
                    push(&mut words, &format!("{} the {obj}", p.find_verb));
                    nouns.push(obj.to_string());
                }
                Some(obj) => {
                    push(
                        &mut words,
                        &format!("{} to the {room} and {} the {obj}", p.move_verb, p.find_verb),
                    );
                    nouns.push(room.to_string());
                    nouns.push(obj.to_string());
                }
                None => {
                    push(&mut words, &format!("{} to the {room}", p.move_verb));
                    nouns.push(room.to_string());
                }
            }
        }
    }
    let mut dedup = Vec::new();
    for n in nouns {
        if !dedup.contains(&n) {
            dedup.push(n);
        }
    }
    (words, dedup)
}

/// Ground-truth instruction for a trajectory. The canonical phrasing is the
/// training target; `seed` draws two alternates for the reference set.
pub fn synthesize_instruction(traj: &Trajectory, world: &WorldGrid, style: Style, seed: u64) -> InstructionSample {
    let (text, landmarks) = render_instruction(traj, world, style, &CANONICAL);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(traj.id.as_bytes()) ^ style as u64);
    let mut references = vec![text.clone()];
    for _ in 0..2 {
        let alt = Phrasing {
            move_verb: MOVE_VERBS[rng.gen_range(0..MOVE_VERBS.len())],
            stop_verb: STOP_VERBS[rng.gen_range(0..STOP_VERBS.len())],
            find_verb: FIND_VERBS[rng.gen_range(0..FIND_VERBS.len())],
        };
        let (alt_text, _) = render_instruction(traj, world, style, &alt);
        if !references.contains(&alt_text) {
            references.push(alt_text);
        }
    }
    InstructionSample {
        trajectory_id: traj.id.clone(),
        style,
        text,
        linguistic_landmarks: landmarks,
        reference_texts: references,
    }
}
