use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

/// A grid coordinate, `row` counted from the top.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

/// Static role of a grid cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tile {
    Wall,
    Floor,
    Switch,
    Door,
    /// Floor on which moves are noisy.
    Stochastic,
}

impl Tile {
    /// Tiles the agent may stand on. The door additionally needs to be open.
    pub fn walkable(self) -> bool {
        !matches!(self, Tile::Wall)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LayoutError {
    #[error("layout is empty")]
    Empty,
    #[error("row {row} has {found} cells, expected {expected}")]
    Ragged { row: usize, found: usize, expected: usize },
    #[error("unknown layout character {ch:?} at {cell}")]
    UnknownChar { ch: char, cell: Cell },
    #[error("expected exactly one {what}, found {count}")]
    Count { what: &'static str, count: usize },
    #[error("border cell {0} must be a wall")]
    OpenBorder(Cell),
    #[error("door must be the only passage between two rooms: {0}")]
    Rooms(String),
}

/// Shipped ten-by-ten two-room layout.
pub const STANDARD_LAYOUT: &str = "\
##########
#A...#.W.#
#.S..#...#
#....#...#
#....D...#
#....#...#
#.B..#...#
#....#..S#
#..W.#...#
##########
";

/// Eight-by-eight variant. The block rides the top row between a switch and
/// a noisy cell, so every configuration stays reachable from every other.
pub const COMPACT_LAYOUT: &str = "\
########
#SB.W#A#
#....#.#
#....D.#
#....#.#
#....#W#
#....#S#
########
";

/// Single three-by-three room with the block wedged in a corner.
pub const TINY_LAYOUT: &str = "\
#####
#A..#
#...#
#..B#
#####
";

/// Static description of a world: tiles, special cells and start placement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    rows: usize,
    cols: usize,
    tiles: Vec<Tile>,
    door: Option<Cell>,
    switches: Vec<Cell>,
    stochastic: Vec<Cell>,
    agent_start: Cell,
    block_start: Cell,
}

impl Layout {
    pub fn standard() -> Self {
        Self::parse(STANDARD_LAYOUT).expect("shipped layout parses")
    }

    pub fn compact() -> Self {
        Self::parse(COMPACT_LAYOUT).expect("shipped layout parses")
    }

    pub fn tiny() -> Self {
        Self::parse(TINY_LAYOUT).expect("shipped layout parses")
    }

    /// Parses the plain-text grid format: `#` wall, `.` floor, `S` switch,
    /// `D` door, `B` block start, `W` noisy floor, `A` agent start.
    pub fn parse(text: &str) -> Result<Self, LayoutError> {
        let lines: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        if lines.is_empty() {
            return Err(LayoutError::Empty);
        }
        let rows = lines.len();
        let cols = lines[0].chars().count();
        let mut tiles = Vec::with_capacity(rows * cols);
        let (mut doors, mut switches, mut stochastic) = (Vec::new(), Vec::new(), Vec::new());
        let (mut agents, mut blocks) = (Vec::new(), Vec::new());
        for (row, line) in lines.iter().enumerate() {
            let found = line.chars().count();
            if found != cols {
                return Err(LayoutError::Ragged {
                    row,
                    found,
                    expected: cols,
                });
            }
            for (col, ch) in line.chars().enumerate() {
                let cell = Cell::new(row, col);
                let tile = match ch {
                    '#' => Tile::Wall,
                    '.' => Tile::Floor,
                    'S' => {
                        switches.push(cell);
                        Tile::Switch
                    }
                    'D' => {
                        doors.push(cell);
                        Tile::Door
                    }
                    'W' => {
                        stochastic.push(cell);
                        Tile::Stochastic
                    }
                    'A' => {
                        agents.push(cell);
                        Tile::Floor
                    }
                    'B' => {
                        blocks.push(cell);
                        Tile::Floor
                    }
                    ch => return Err(LayoutError::UnknownChar { ch, cell }),
                };
                tiles.push(tile);
            }
        }
        if agents.len() != 1 {
            return Err(LayoutError::Count {
                what: "agent start",
                count: agents.len(),
            });
        }
        if blocks.len() != 1 {
            return Err(LayoutError::Count {
                what: "block start",
                count: blocks.len(),
            });
        }
        if doors.len() > 1 {
            return Err(LayoutError::Count {
                what: "door",
                count: doors.len(),
            });
        }
        let layout = Self {
            rows,
            cols,
            tiles,
            door: doors.first().copied(),
            switches,
            stochastic,
            agent_start: agents[0],
            block_start: blocks[0],
        };
        layout.check_border()?;
        layout.check_rooms()?;
        Ok(layout)
    }

    fn check_border(&self) -> Result<(), LayoutError> {
        for row in 0..self.rows {
            for col in 0..self.cols {
                let border = row == 0 || col == 0 || row + 1 == self.rows || col + 1 == self.cols;
                let cell = Cell::new(row, col);
                if border && self.tile(cell) != Tile::Wall {
                    return Err(LayoutError::OpenBorder(cell));
                }
            }
        }
        Ok(())
    }

    /// With a door: closing it must split the walkable cells into exactly
    /// two rooms with one switch each. Without a door there may be no
    /// switch and everything must be one room.
    fn check_rooms(&self) -> Result<(), LayoutError> {
        let walkable: Vec<Cell> = self.cells().filter(|&c| self.tile(c).walkable()).collect();
        let Some(door) = self.door else {
            if !self.switches.is_empty() {
                return Err(LayoutError::Rooms("switches without a door".into()));
            }
            let room = self.flood(self.agent_start, None);
            if room.len() != walkable.len() {
                return Err(LayoutError::Rooms("floor is not connected".into()));
            }
            return Ok(());
        };
        if self.switches.len() != 2 {
            return Err(LayoutError::Count {
                what: "switch pair",
                count: self.switches.len(),
            });
        }
        let first = self.flood(self.switches[0], Some(door));
        let second = self.flood(self.switches[1], Some(door));
        if first.contains(&self.switches[1]) {
            return Err(LayoutError::Rooms("both switches share a room".into()));
        }
        if first.len() + second.len() + 1 != walkable.len() {
            return Err(LayoutError::Rooms("cells outside the two rooms".into()));
        }
        let touches = |room: &[Cell]| self.neighbours(door).any(|n| room.contains(&n));
        if !touches(&first) || !touches(&second) {
            return Err(LayoutError::Rooms("door does not join the rooms".into()));
        }
        Ok(())
    }

    fn flood(&self, from: Cell, blocked: Option<Cell>) -> Vec<Cell> {
        let mut seen = vec![false; self.tiles.len()];
        let mut out = Vec::new();
        let mut queue = VecDeque::from([from]);
        seen[self.index(from)] = true;
        while let Some(cell) = queue.pop_front() {
            out.push(cell);
            for next in self.neighbours(cell) {
                let i = self.index(next);
                if !seen[i] && self.tile(next).walkable() && Some(next) != blocked {
                    seen[i] = true;
                    queue.push_back(next);
                }
            }
        }
        out
    }

    fn neighbours(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)]
            .into_iter()
            .filter_map(move |(dr, dc)| self.offset(cell, dr, dc))
    }

    /// Neighbouring cell, or `None` off the grid.
    pub fn offset(&self, cell: Cell, dr: isize, dc: isize) -> Option<Cell> {
        let row = cell.row.checked_add_signed(dr)?;
        let col = cell.col.checked_add_signed(dc)?;
        (row < self.rows && col < self.cols).then_some(Cell::new(row, col))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn index(&self, cell: Cell) -> usize {
        cell.row * self.cols + cell.col
    }

    pub fn tile(&self, cell: Cell) -> Tile {
        self.tiles[self.index(cell)]
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| Cell::new(r, c)))
    }

    pub fn door(&self) -> Option<Cell> {
        self.door
    }

    pub fn switches(&self) -> &[Cell] {
        &self.switches
    }

    pub fn stochastic_cells(&self) -> &[Cell] {
        &self.stochastic
    }

    pub fn agent_start(&self) -> Cell {
        self.agent_start
    }

    pub fn block_start(&self) -> Cell {
        self.block_start
    }

    /// Cells the block may rest on: plain floor only.
    pub fn block_can_occupy(&self, cell: Cell) -> bool {
        self.tile(cell) == Tile::Floor
    }

    /// Text form accepted by [`Layout::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.rows * (self.cols + 1));
        for row in 0..self.rows {
            for col in 0..self.cols {
                let cell = Cell::new(row, col);
                let ch = if cell == self.agent_start {
                    'A'
                } else if cell == self.block_start {
                    'B'
                } else {
                    match self.tile(cell) {
                        Tile::Wall => '#',
                        Tile::Floor => '.',
                        Tile::Switch => 'S',
                        Tile::Door => 'D',
                        Tile::Stochastic => 'W',
                    }
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_matches_documented_geometry() {
        let layout = Layout::standard();
        assert_eq!((layout.rows(), layout.cols()), (10, 10));
        assert_eq!(layout.door(), Some(Cell::new(4, 5)));
        assert_eq!(layout.switches(), &[Cell::new(2, 2), Cell::new(7, 8)]);
        assert_eq!(layout.block_start(), Cell::new(6, 2));
        let mut w = layout.stochastic_cells().to_vec();
        w.sort();
        assert_eq!(w, vec![Cell::new(1, 7), Cell::new(8, 3)]);
        for row in 0..10 {
            let tile = layout.tile(Cell::new(row, 5));
            assert!(tile == Tile::Wall || Cell::new(row, 5) == Cell::new(4, 5));
        }
    }

    #[test]
    fn shipped_layouts_round_trip_through_text() {
        for layout in [Layout::standard(), Layout::compact(), Layout::tiny()] {
            assert_eq!(Layout::parse(&layout.to_text()).unwrap(), layout);
        }
    }

    #[test]
    fn rejects_unknown_characters_and_ragged_rows() {
        assert!(matches!(
            Layout::parse("###\n#A?\n###"),
            Err(LayoutError::UnknownChar { ch: '?', .. })
        ));
        assert!(matches!(
            Layout::parse("####\n#AB#\n###"),
            Err(LayoutError::Ragged { row: 2, .. })
        ));
    }

    #[test]
    fn rejects_second_passage() {
        // Gap in the dividing wall next to the door.
        let text = "\
#######
#S.#.S#
#A.D..#
#B....#
#######
";
        assert!(matches!(Layout::parse(text), Err(LayoutError::Rooms(_))));
    }

    #[test]
    fn rejects_missing_agent_and_open_border() {
        assert_eq!(
            Layout::parse("####\n#.B#\n####"),
            Err(LayoutError::Count {
                what: "agent start",
                count: 0
            })
        );
        assert!(matches!(
            Layout::parse("####\n#AB.\n####"),
            Err(LayoutError::OpenBorder(_))
        ));
    }
}
