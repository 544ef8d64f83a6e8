//! Occupancy grid, features and travel times.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A grid cell, serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct Cell {
    pub x: u32,
    pub y: u32,
}

impl Cell {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    pub fn euclidean(self, other: Cell) -> f64 {
        let dx = self.x as f64 - other.x as f64;
        let dy = self.y as f64 - other.y as f64;
        (dx * dx + dy * dy).sqrt()
    }
}

impl From<[u32; 2]> for Cell {
    fn from(v: [u32; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Cell> for [u32; 2] {
    fn from(c: Cell) -> Self {
        [c.x, c.y]
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellState {
    Free,
    Obstacle,
    Unknown,
}

/// A semantic feature on the map (water reservoir, rescue station, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub kind: String,
    pub cell: Cell,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapError {
    #[error("cell {0} is outside the map")]
    OutOfBounds(Cell),
    #[error("cell {0} has not been explored")]
    UnknownCell(Cell),
    #[error("cell {0} is an obstacle")]
    BlockedCell(Cell),
    #[error("velocity must be positive, got {0}")]
    InvalidVelocity(f64),
    #[error("cell size must be positive, got {0}")]
    InvalidCellSize(f64),
    #[error("feature `{id}` must sit on a free explored cell, found {state:?} at {cell}")]
    BadFeatureCell {
        id: String,
        cell: Cell,
        state: Option<CellState>,
    },
}

/// Planner's view of the environment: occupancy plus known features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMap {
    pub width: u32,
    pub height: u32,
    pub cell_m: f64,
    cells: Vec<CellState>,
    pub features: BTreeMap<String, Feature>,
}

impl GridMap {
    /// A fully explored, obstacle-free map.
    pub fn new(width: u32, height: u32, cell_m: f64) -> Result<Self, MapError> {
        if cell_m <= 0.0 || !cell_m.is_finite() {
            return Err(MapError::InvalidCellSize(cell_m));
        }
        Ok(Self {
            width,
            height,
            cell_m,
            cells: vec![CellState::Free; (width as usize) * (height as usize)],
            features: BTreeMap::new(),
        })
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    fn index(&self, c: Cell) -> usize {
        c.y as usize * self.width as usize + c.x as usize
    }

    fn cell_at(&self, idx: usize) -> Cell {
        Cell::new(
            (idx % self.width as usize) as u32,
            (idx / self.width as usize) as u32,
        )
    }

    pub fn state(&self, c: Cell) -> Option<CellState> {
        self.in_bounds(c).then(|| self.cells[self.index(c)])
    }

    pub fn set_state(&mut self, c: Cell, state: CellState) -> Result<(), MapError> {
        if !self.in_bounds(c) {
            return Err(MapError::OutOfBounds(c));
        }
        let i = self.index(c);
        self.cells[i] = state;
        Ok(())
    }

    pub fn is_traversable(&self, c: Cell) -> bool {
        self.state(c) == Some(CellState::Free)
    }

    pub fn cells(&self) -> impl Iterator<Item = (Cell, CellState)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .map(|(i, s)| (self.cell_at(i), *s))
    }

    /// Checks that `c` can be used as an endpoint for travel.
    pub fn check_endpoint(&self, c: Cell) -> Result<(), MapError> {
        match self.state(c) {
            None => Err(MapError::OutOfBounds(c)),
            Some(CellState::Unknown) => Err(MapError::UnknownCell(c)),
            Some(CellState::Obstacle) => Err(MapError::BlockedCell(c)),
            Some(CellState::Free) => Ok(()),
        }
    }

    pub fn add_feature(
        &mut self,
        id: impl Into<String>,
        kind: impl Into<String>,
        cell: Cell,
    ) -> Result<(), MapError> {
        let id = id.into();
        if self.state(cell) != Some(CellState::Free) {
            return Err(MapError::BadFeatureCell {
                id,
                cell,
                state: self.state(cell),
            });
        }
        self.features.insert(
            id,
            Feature {
                kind: kind.into(),
                cell,
            },
        );
        Ok(())
    }

    /// Known feature kinds, sorted.
    pub fn feature_kinds(&self) -> Vec<String> {
        let mut kinds: Vec<String> = self.features.values().map(|f| f.kind.clone()).collect();
        kinds.sort();
        kinds.dedup();
        kinds
    }

    /// Instances of `kind` as `(id, cell)`, ordered by id.
    pub fn features_of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = (&'a str, Cell)> + 'a {
        self.features
            .iter()
            .filter(move |(_, f)| f.kind == kind)
            .map(|(id, f)| (id.as_str(), f.cell))
    }

    /// Checks the invariant that every feature sits on a free explored cell.
    pub fn validate(&self) -> Result<(), MapError> {
        for (id, f) in &self.features {
            if self.state(f.cell) != Some(CellState::Free) {
                return Err(MapError::BadFeatureCell {
                    id: id.clone(),
                    cell: f.cell,
                    state: self.state(f.cell),
                });
            }
        }
        Ok(())
    }

    const NEIGHBOURS: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

    fn neighbours(&self, c: Cell) -> impl Iterator<Item = Cell> + '_ {
        Self::NEIGHBOURS.iter().filter_map(move |&(dx, dy)| {
            let x = c.x as i64 + dx;
            let y = c.y as i64 + dy;
            if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
                None
            } else {
                Some(Cell::new(x as u32, y as u32))
            }
        })
    }

    /// Breadth-first search over free cells. Returns hop distances indexed by
    /// cell and the parent of each reached cell.
    fn bfs(&self, from: Cell) -> (Vec<Option<u32>>, Vec<usize>) {
        let n = self.cells.len();
        let mut dist = vec![None; n];
        let mut parent = vec![usize::MAX; n];
        if !self.is_traversable(from) {
            return (dist, parent);
        }
        let start = self.index(from);
        dist[start] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(c) = queue.pop_front() {
            let ci = self.index(c);
            let d = dist[ci].unwrap_or(0);
            for nb in self.neighbours(c) {
                let ni = self.index(nb);
                if dist[ni].is_none() && self.is_traversable(nb) {
                    dist[ni] = Some(d + 1);
                    parent[ni] = ci;
                    queue.push_back(nb);
                }
            }
        }
        (dist, parent)
    }

    /// Hop distances from `from` to every cell (`None` when unreachable).
    pub fn distances_from(&self, from: Cell) -> DistanceField {
        let (dist, _) = self.bfs(from);
        DistanceField {
            width: self.width,
            dist,
        }
    }

    /// Shortest 4-connected path (inclusive of both endpoints).
    pub fn shortest_path(&self, from: Cell, to: Cell) -> Option<Vec<Cell>> {
        if !self.is_traversable(from) || !self.is_traversable(to) {
            return None;
        }
        let (dist, parent) = self.bfs(from);
        let ti = self.index(to);
        dist[ti]?;
        let mut path = vec![to];
        let mut cur = ti;
        let si = self.index(from);
        while cur != si {
            cur = parent[cur];
            path.push(self.cell_at(cur));
        }
        path.reverse();
        Some(path)
    }

    /// Shortest-path length in cells times cell size divided by velocity.
    /// Unreachable pairs yield `f64::INFINITY`.
    pub fn travel_time(&self, from: Cell, to: Cell, velocity: f64) -> Result<f64, MapError> {
        if velocity <= 0.0 || !velocity.is_finite() {
            return Err(MapError::InvalidVelocity(velocity));
        }
        self.check_endpoint(from)?;
        self.check_endpoint(to)?;
        if from == to {
            return Ok(0.0);
        }
        Ok(match self.distances_from(from).get(to) {
            Some(hops) => hops as f64 * self.cell_m / velocity,
            None => f64::INFINITY,
        })
    }
}

/// Result of a single-source BFS.
#[derive(Debug, Clone)]
pub struct DistanceField {
    width: u32,
    dist: Vec<Option<u32>>,
}

impl DistanceField {
    pub fn get(&self, c: Cell) -> Option<u32> {
        if c.x >= self.width {
            return None;
        }
        self.dist
            .get(c.y as usize * self.width as usize + c.x as usize)
            .copied()
            .flatten()
    }
}
