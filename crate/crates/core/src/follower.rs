//! Style grammars and a deterministic rule-based instruction follower.
//!
//! Fine-grained: `MOVE ("," MOVE)* "and" STOP`, where
//! `MOVE = VERB DIR ["past" "the" OBJ | "into" "the" ROOM]` and
//! `STOP = ("stop" | "wait") ("at" "the" OBJ | "in" "the" ROOM)`.
//!
//! High-level: `GOTO "and" FIND | FIND | GOTO`, where
//! `GOTO = VERB "to" "the" ROOM` and `FIND = ("find" | "locate" | "reach") "the" OBJ`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::vocab::strip_special;
use crate::world::{
    heading, Style, WorldGrid, DEFAULT_OBJECTS, DIRECTIONS, FIND_VERBS, MOVE_VERBS, ROOM_TYPES, STOP_VERBS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub objects: Vec<String>,
    pub rooms: Vec<String>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon {
            objects: DEFAULT_OBJECTS.iter().map(|s| s.to_string()).collect(),
            rooms: ROOM_TYPES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Lexicon {
    pub fn nouns(&self) -> Vec<String> {
        self.objects.iter().chain(&self.rooms).cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Object(String),
    Room(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Clause {
    Move { dir: usize, via: Option<Target> },
    Stop(Target),
    GoTo(String),
    Find(String),
}

struct Cursor<'a> {
    toks: &'a [String],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a str> {
        self.toks.get(self.pos).map(String::as_str)
    }

    fn eat(&mut self, w: &str) -> bool {
        if self.peek() == Some(w) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn one_of(&mut self, set: &[&str]) -> Option<&'a str> {
        let w = self.peek()?;
        if set.contains(&w) {
            self.pos += 1;
            Some(w)
        } else {
            None
        }
    }

    fn noun(&mut self, set: &[String]) -> Option<String> {
        let w = self.peek()?;
        if set.iter().any(|s| s == w) {
            self.pos += 1;
            Some(w.to_string())
        } else {
            None
        }
    }

    fn done(&self) -> bool {
        self.pos == self.toks.len()
    }
}

fn parse_fine(c: &mut Cursor<'_>, lex: &Lexicon) -> Option<Vec<Clause>> {
    let mut out = Vec::new();
    loop {
        c.one_of(&MOVE_VERBS)?;
        let dir = DIRECTIONS.iter().position(|d| Some(*d) == c.peek())?;
        c.pos += 1;
        let via = if c.eat("past") {
            c.eat("the").then_some(())?;
            Some(Target::Object(c.noun(&lex.objects)?))
        } else if c.eat("into") {
            c.eat("the").then_some(())?;
            Some(Target::Room(c.noun(&lex.rooms)?))
        } else {
            None
        };
        out.push(Clause::Move { dir, via });
        if c.eat(",") {
            continue;
        }
        c.eat("and").then_some(())?;
        break;
    }
    c.one_of(&STOP_VERBS)?;
    let target = if c.eat("at") {
        c.eat("the").then_some(())?;
        Target::Object(c.noun(&lex.objects)?)
    } else {
        c.eat("in").then_some(())?;
        c.eat("the").then_some(())?;
        Target::Room(c.noun(&lex.rooms)?)
    };
    out.push(Clause::Stop(target));
    c.done().then_some(out)
}

fn parse_high(c: &mut Cursor<'_>, lex: &Lexicon) -> Option<Vec<Clause>> {
    let mut out = Vec::new();
    if c.one_of(&MOVE_VERBS).is_some() {
        c.eat("to").then_some(())?;
        c.eat("the").then_some(())?;
        out.push(Clause::GoTo(c.noun(&lex.rooms)?));
        if c.done() {
            return Some(out);
        }
        c.eat("and").then_some(())?;
    }
    c.one_of(&FIND_VERBS)?;
    c.eat("the").then_some(())?;
    out.push(Clause::Find(c.noun(&lex.objects)?));
    c.done().then_some(out)
}

/// Parse `tokens` (specials stripped) under one style's grammar.
pub fn parse(tokens: &[String], style: Style, lex: &Lexicon) -> Option<Vec<Clause>> {
    let toks = strip_special(tokens);
    let mut c = Cursor { toks: &toks, pos: 0 };
    match style {
        Style::FineGrained => parse_fine(&mut c, lex),
        Style::HighLevel => parse_high(&mut c, lex),
    }
}

pub fn validates(tokens: &[String], style: Style, lex: &Lexicon) -> bool {
    parse(tokens, style, lex).is_some()
}

/// Try the fine-grained grammar, then the high-level one.
pub fn parse_any(tokens: &[String], lex: &Lexicon) -> Option<(Style, Vec<Clause>)> {
    Style::ALL
        .iter()
        .find_map(|&s| parse(tokens, s, lex).map(|c| (s, c)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowResult {
    pub path: Vec<usize>,
    pub success: bool,
    pub spl: f64,
    pub parsed: bool,
}

/// Chebyshev distance in cells.
pub fn cell_distance(world: &WorldGrid, a: usize, b: usize) -> usize {
    let (ax, ay) = world.xy(a);
    let (bx, by) = world.xy(b);
    ax.abs_diff(bx).max(ay.abs_diff(by))
}

struct Walker<'a> {
    world: &'a WorldGrid,
    view_range: f64,
    path: Vec<usize>,
    budget: usize,
}

impl Walker<'_> {
    fn here(&self) -> usize {
        *self.path.last().expect("path starts at the start cell")
    }

    fn exhausted(&self) -> bool {
        self.path.len() - 1 >= self.budget
    }

    /// Walk a shortest path to the nearest cell accepted by `pred`, in BFS
    /// order (ties broken by the lower cell index).
    fn go_to_nearest(&mut self, pred: impl Fn(usize) -> bool) {
        let from = self.here();
        if pred(from) {
            return;
        }
        let n = self.world.cells();
        let mut prev = vec![usize::MAX; n];
        let mut dist = vec![usize::MAX; n];
        dist[from] = 0;
        let mut q = VecDeque::from([from]);
        let mut found = None;
        while let Some(c) = q.pop_front() {
            if pred(c) {
                found = Some(c);
                break;
            }
            let mut next: Vec<usize> = self.world.nav_graph[c].clone();
            next.sort_unstable();
            for nb in next {
                if dist[nb] == usize::MAX {
                    dist[nb] = dist[c] + 1;
                    prev[nb] = c;
                    q.push_back(nb);
                }
            }
        }
        let Some(goal) = found else {
            return;
        };
        let mut route = vec![goal];
        while *route.last().unwrap() != from {
            route.push(prev[*route.last().unwrap()]);
        }
        route.pop();
        for cell in route.into_iter().rev() {
            if self.exhausted() {
                return;
            }
            self.path.push(cell);
        }
    }

    fn visible(&self, from: usize, cell: usize) -> bool {
        let (fx, fy) = self.world.xy(from);
        let (cx, cy) = self.world.xy(cell);
        let (dx, dy) = (cx as f64 - fx as f64, cy as f64 - fy as f64);
        (dx * dx + dy * dy).sqrt() <= self.view_range && self.world.line_of_sight(from, cell)
    }

    fn object_cells(&self, name: &str) -> Vec<usize> {
        self.world
            .objects
            .iter()
            .filter(|(_, n)| n.as_str() == name)
            .map(|(&c, _)| c)
            .collect()
    }

    fn find_object(&mut self, name: &str, prefer_room: bool) {
        let here = self.here();
        let cells = self.object_cells(name);
        if cells.contains(&here) {
            return;
        }
        let seen: Vec<usize> = cells.iter().copied().filter(|&c| self.visible(here, c)).collect();
        if !seen.is_empty() {
            return self.go_to_nearest(|c| seen.contains(&c));
        }
        if prefer_room {
            let room = self.world.room_index(here);
            let local: Vec<usize> = cells.iter().copied().filter(|&c| self.world.room_index(c) == room).collect();
            if !local.is_empty() {
                return self.go_to_nearest(|c| local.contains(&c));
            }
        }
        self.go_to_nearest(|c| cells.contains(&c));
    }

    fn enter_room(&mut self, room: &str) {
        let w = self.world;
        self.go_to_nearest(|c| w.room_kind(c) == room);
    }
}

/// Execute an instruction from `start` and score it against `goal`.
/// Unparseable text fails immediately; an empty instruction stops at once.
pub fn follow(
    world: &WorldGrid,
    tokens: &[String],
    start: usize,
    goal: usize,
    lex: &Lexicon,
    view_range: f64,
) -> FollowResult {
    let shortest = world.shortest_len(start, goal).unwrap_or(usize::MAX);
    let mut w = Walker {
        world,
        view_range,
        path: vec![start],
        budget: shortest.saturating_mul(3),
    };
    let toks = strip_special(tokens);
    let parsed = if toks.is_empty() {
        Some(Vec::new())
    } else {
        parse_any(&toks, lex).map(|(_, c)| c)
    };
    let Some(clauses) = parsed else {
        return FollowResult {
            path: w.path,
            success: false,
            spl: 0.0,
            parsed: false,
        };
    };
    for clause in &clauses {
        if w.exhausted() {
            break;
        }
        match clause {
            Clause::Move { dir, via } => {
                if let Some(n) = world.step(w.here(), *dir) {
                    w.path.push(n);
                }
                match via {
                    Some(Target::Object(o)) if world.object_at(w.here()) != Some(o.as_str()) => {
                        let cells = w.object_cells(o);
                        w.go_to_nearest(|c| cells.contains(&c));
                    }
                    Some(Target::Room(r)) => w.enter_room(r),
                    _ => {}
                }
            }
            Clause::Stop(Target::Object(o)) => {
                w.find_object(o, false);
                break;
            }
            Clause::Stop(Target::Room(r)) => {
                w.enter_room(r);
                break;
            }
            Clause::GoTo(r) => w.enter_room(r),
            Clause::Find(o) => w.find_object(o, true),
        }
    }
    let end = w.here();
    let success = cell_distance(world, end, goal) <= 1;
    let taken = w.path.len() - 1;
    let spl = if !success {
        0.0
    } else if shortest == 0 {
        1.0
    } else {
        shortest as f64 / taken.max(shortest) as f64
    };
    FollowResult {
        path: w.path,
        success,
        spl,
        parsed: true,
    }
}

/// Direction word for a heading, used by tests and diagnostics.
pub fn direction_word(dx: f64, dy: f64) -> &'static str {
    DIRECTIONS[crate::world::heading_bucket(heading(dx, dy), 8)]
}
