use crate::tensor::Tensor;

use super::{EnvConfig, EnvKind};

/// North, east, south, west as `(d_row, d_col)`.
pub const CARDINAL: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

/// N, NE, E, SE, S, SW, W, NW as `(d_row, d_col)`.
pub const COMPASS: [(isize, isize); 8] = [
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
];

/// Positions `(row, col)` of the objects currently present.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EnvState {
    pub positions: Vec<(usize, usize)>,
}

impl EnvState {
    pub fn single(row: usize, col: usize) -> Self {
        Self {
            positions: vec![(row, col)],
        }
    }
}

pub fn in_grid(n: usize, row: isize, col: isize) -> bool {
    (0..n as isize).contains(&row) && (0..n as isize).contains(&col)
}

fn offset(n: usize, (r, c): (usize, usize), (dr, dc): (isize, isize)) -> Option<(usize, usize)> {
    let (nr, nc) = (r as isize + dr, c as isize + dc);
    in_grid(n, nr, nc).then_some((nr as usize, nc as usize))
}

/// The wall occupies column `n/2`, rows `n/4 ..= 3n/4`.
pub fn is_wall(n: usize, (r, c): (usize, usize)) -> bool {
    c == n / 2 && (n / 4..=3 * n / 4).contains(&r)
}

pub fn wall_cells(n: usize) -> Vec<(usize, usize)> {
    (n / 4..=3 * n / 4).map(|r| (r, n / 2)).collect()
}

/// One move in compass direction `dir` (0..8). A move leaving the grid on
/// either axis is a full stop.
pub fn heart_step(state: &EnvState, n: usize, dir: usize) -> EnvState {
    let pos = state.positions[0];
    EnvState::single_from(offset(n, pos, COMPASS[dir]).unwrap_or(pos))
}

/// One cardinal move (0..4), blocked by the boundary and the wall.
pub fn wall_step(state: &EnvState, n: usize, dir: usize) -> EnvState {
    let pos = state.positions[0];
    let next = offset(n, pos, CARDINAL[dir])
        .filter(|&p| !is_wall(n, p))
        .unwrap_or(pos);
    EnvState::single_from(next)
}

/// Moves `object` one cell in cardinal direction `dir` unless the target is
/// off-grid or occupied.
pub fn shapes_step(state: &EnvState, n: usize, object: usize, dir: usize) -> EnvState {
    let mut next = state.clone();
    let pos = state.positions[object];
    if let Some(target) = offset(n, pos, CARDINAL[dir]) {
        if !state.positions.contains(&target) {
            next.positions[object] = target;
        }
    }
    next
}

impl EnvState {
    fn single_from(p: (usize, usize)) -> Self {
        Self::single(p.0, p.1)
    }
}

/// Dispatches an action index to the environment's step rule. Shapes
/// actions are encoded as `object * 4 + direction`.
pub fn step(config: &EnvConfig, state: &EnvState, action: usize) -> EnvState {
    let n = config.grid_size;
    match config.kind {
        EnvKind::Heart => heart_step(state, n, action),
        EnvKind::Wall => wall_step(state, n, action),
        EnvKind::Shapes => shapes_step(state, n, action / 4, action % 4),
    }
}

/// Occupancy channels `[C, n, n]`; slots without an object stay zero.
pub fn render(state: &EnvState, config: &EnvConfig) -> Tensor {
    let n = config.grid_size;
    let mut t = Tensor::zeros(&[config.channels(), n, n]);
    let data = t.data_mut();
    for (c, &(r, col)) in state.positions.iter().enumerate() {
        data[c * n * n + r * n + col] = 1.0;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    const E: usize = 2;
    const NW: usize = 7;

    #[test]
    fn heart_unobstructed_east() {
        let s = EnvState::single(4, 4);
        assert_eq!(heart_step(&s, 8, E), EnvState::single(4, 5));
    }

    #[test]
    fn heart_corner_blocks_north_west() {
        let s = EnvState::single(0, 0);
        assert_eq!(heart_step(&s, 8, NW), s);
    }

    #[test]
    fn heart_diagonal_blocked_if_either_axis_exits() {
        // NE from the top row, interior column: row would exit.
        let s = EnvState::single(0, 3);
        assert_eq!(heart_step(&s, 8, 1), s);
    }

    #[test]
    fn heart_has_nine_distinct_deltas() {
        let mut deltas = HashSet::new();
        for r in 0..8 {
            for c in 0..8 {
                for a in 0..8 {
                    let s = EnvState::single(r, c);
                    let (nr, nc) = heart_step(&s, 8, a).positions[0];
                    deltas.insert((nr as isize - r as isize, nc as isize - c as isize));
                }
            }
        }
        assert_eq!(deltas.len(), 9);
    }

    #[test]
    fn wall_blocks_from_the_left() {
        // n = 8: wall at column 4, rows 2..=6.
        let s = EnvState::single(3, 3);
        assert_eq!(wall_step(&s, 8, 1), s);
        assert!(is_wall(8, (2, 4)) && is_wall(8, (6, 4)));
        assert!(!is_wall(8, (1, 4)) && !is_wall(8, (7, 4)));
    }

    #[test]
    fn wall_boundary_and_free_moves() {
        let s = EnvState::single(0, 0);
        assert_eq!(wall_step(&s, 8, 0), s);
        let s = EnvState::single(3, 1);
        assert_eq!(wall_step(&s, 8, 2), EnvState::single(4, 1));
    }

    #[test]
    fn shapes_boundary_and_occupied() {
        let s = EnvState {
            positions: vec![(0, 3), (4, 4)],
        };
        assert_eq!(shapes_step(&s, 5, 0, 0), s);
        let s = EnvState {
            positions: vec![(2, 2), (2, 3)],
        };
        assert_eq!(shapes_step(&s, 5, 0, 1), s);
        let moved = shapes_step(&s, 5, 1, 1);
        assert_eq!(moved.positions, vec![(2, 2), (2, 4)]);
    }

    #[test]
    fn render_single_object() {
        let mut cfg = EnvConfig::heart();
        cfg.grid_size = 4;
        let t = render(&EnvState::single(1, 2), &cfg);
        assert_eq!(t.shape(), &[1, 4, 4]);
        let ones: Vec<usize> = (0..16).filter(|&i| t.data()[i] == 1.0).collect();
        assert_eq!(ones, vec![6]);
    }

    #[test]
    fn render_absent_object_channel_is_zero() {
        let cfg = EnvConfig::shapes(3).with_present(2);
        let s = EnvState {
            positions: vec![(0, 0), (1, 1)],
        };
        let t = render(&s, &cfg);
        assert!(t.data()[50..75].iter().all(|&v| v == 0.0));
        assert_eq!(t.data().iter().sum::<f64>(), 2.0);
    }
}
