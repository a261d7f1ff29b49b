use serde::{Deserialize, Serialize};

use super::{LaneGeometry, MotionState, SceneError, Track, VehicleId};

/// Longitudinal rank of a grid row, front to back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rank {
    FrontFront,
    Front,
    Alongside,
    Behind,
}

impl Rank {
    pub const ALL: [Rank; 4] = [Rank::FrontFront, Rank::Front, Rank::Alongside, Rank::Behind];

    pub fn row(self) -> usize {
        self as usize
    }
}

/// Lane column: `Left` is the neighbor lane at lower lateral position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    Left,
    Center,
    Right,
}

impl Column {
    pub const ALL: [Column; 3] = [Column::Left, Column::Center, Column::Right];

    pub fn col(self) -> usize {
        self as usize
    }

    fn from_offset(offset: i64) -> Option<Self> {
        match offset {
            -1 => Some(Column::Left),
            0 => Some(Column::Center),
            1 => Some(Column::Right),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub rank: Rank,
    pub column: Column,
}

impl Slot {
    pub const OV: Slot = Slot {
        rank: Rank::Alongside,
        column: Column::Center,
    };

    pub const fn new(rank: Rank, column: Column) -> Self {
        Self { rank, column }
    }

    /// `(row, column)` in the 4×3 layout.
    pub fn cell(self) -> (usize, usize) {
        (self.rank.row(), self.column.col())
    }

    /// Position in [`SV_SLOTS`], or `None` for the OV cell.
    pub fn sv_index(self) -> Option<usize> {
        SV_SLOTS.iter().position(|&s| s == self)
    }
}

const fn slot(rank: Rank, column: Column) -> Slot {
    Slot::new(rank, column)
}

/// The eleven surrounding-vehicle slots in row-major order.
pub const SV_SLOTS: [Slot; 11] = [
    slot(Rank::FrontFront, Column::Left),
    slot(Rank::FrontFront, Column::Center),
    slot(Rank::FrontFront, Column::Right),
    slot(Rank::Front, Column::Left),
    slot(Rank::Front, Column::Center),
    slot(Rank::Front, Column::Right),
    slot(Rank::Alongside, Column::Left),
    slot(Rank::Alongside, Column::Right),
    slot(Rank::Behind, Column::Left),
    slot(Rank::Behind, Column::Center),
    slot(Rank::Behind, Column::Right),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Vehicles farther than this longitudinally (m) are dropped.
    pub capture_window: f64,
    /// Neighbor-lane vehicles within this longitudinal distance (m) count as alongside.
    pub alongside_half_window: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            capture_window: 90.0,
            alongside_half_window: 5.0,
        }
    }
}

/// One vehicle's state at the frame time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameVehicle {
    pub id: VehicleId,
    pub state: MotionState,
}

impl FrameVehicle {
    /// Snapshot of every track that has a state at `t`.
    pub fn from_tracks(tracks: &[Track], t: f64) -> Vec<FrameVehicle> {
        tracks
            .iter()
            .filter_map(|tr| {
                tr.state_at(t, 1e-6).map(|s| FrameVehicle {
                    id: tr.vehicle_id,
                    state: *s,
                })
            })
            .collect()
    }
}

/// 4×3 spatial-adjacency layout around the OV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextGrid {
    cells: [[Option<VehicleId>; 3]; 4],
}

impl ContextGrid {
    pub const ROWS: usize = 4;
    pub const COLS: usize = 3;

    pub fn empty(ov: VehicleId) -> Self {
        let mut cells = [[None; 3]; 4];
        let (r, c) = Slot::OV.cell();
        cells[r][c] = Some(ov);
        Self { cells }
    }

    pub fn ov(&self) -> VehicleId {
        let (r, c) = Slot::OV.cell();
        self.cells[r][c].expect("OV cell is always occupied")
    }

    pub fn get(&self, slot: Slot) -> Option<VehicleId> {
        let (r, c) = slot.cell();
        self.cells[r][c]
    }

    pub fn cells(&self) -> &[[Option<VehicleId>; 3]; 4] {
        &self.cells
    }

    /// Occupants of the SV slots in [`SV_SLOTS`] order.
    pub fn sv_occupants(&self) -> [Option<VehicleId>; 11] {
        SV_SLOTS.map(|s| self.get(s))
    }

    /// Occupied SV slots with their vehicles.
    pub fn occupied(&self) -> impl Iterator<Item = (Slot, VehicleId)> + '_ {
        SV_SLOTS.iter().filter_map(|&s| self.get(s).map(|id| (s, id)))
    }

    pub fn sv_count(&self) -> usize {
        self.occupied().count()
    }

    fn set(&mut self, slot: Slot, id: VehicleId) {
        let (r, c) = slot.cell();
        self.cells[r][c] = Some(id);
    }
}

/// Places the OV and up to 11 neighbors into the context grid.
///
/// Same lane: the nearest vehicle ahead is `Front`, the second `FrontFront`,
/// the nearest behind `Behind`. Neighbor lanes: the nearest vehicle within the
/// alongside half-window is `Alongside`; vehicles outside it are ranked ahead
/// and behind as in the same lane. Ties break on vehicle id.
pub fn assign_context_grid(
    frame: &[FrameVehicle],
    ov_id: VehicleId,
    lanes: &LaneGeometry,
    config: &GridConfig,
) -> Result<ContextGrid, SceneError> {
    let ov = frame
        .iter()
        .find(|v| v.id == ov_id)
        .ok_or(SceneError::MissingVehicle(ov_id))?;
    let ov_lane = lanes.lane_of(ov.state.y).ok_or(SceneError::OffLaneMap(ov_id))?;
    let mut grid = ContextGrid::empty(ov_id);

    // (dx, id) per column: ahead, alongside, behind
    let mut ahead: [Vec<(f64, VehicleId)>; 3] = Default::default();
    let mut along: [Vec<(f64, VehicleId)>; 3] = Default::default();
    let mut behind: [Vec<(f64, VehicleId)>; 3] = Default::default();

    for v in frame.iter().filter(|v| v.id != ov_id) {
        let Some(lane) = lanes.lane_of(v.state.y) else {
            log::warn!("vehicle {} at y={:.2} is off the lane map; skipped", v.id, v.state.y);
            continue;
        };
        let Some(column) = lanes.lane_offset(ov_lane, lane).and_then(Column::from_offset) else {
            continue;
        };
        let dx = v.state.x - ov.state.x;
        if dx.abs() > config.capture_window {
            continue;
        }
        let c = column.col();
        if column == Column::Center {
            if dx >= 0.0 {
                ahead[c].push((dx, v.id));
            } else {
                behind[c].push((dx, v.id));
            }
        } else if dx.abs() <= config.alongside_half_window {
            along[c].push((dx, v.id));
        } else if dx > 0.0 {
            ahead[c].push((dx, v.id));
        } else {
            behind[c].push((dx, v.id));
        }
    }

    let nearest = |a: &(f64, VehicleId), b: &(f64, VehicleId)| a.0.abs().total_cmp(&b.0.abs()).then(a.1.cmp(&b.1));
    for column in Column::ALL {
        let c = column.col();
        ahead[c].sort_by(nearest);
        behind[c].sort_by(nearest);
        along[c].sort_by(nearest);
        if let Some(&(_, id)) = ahead[c].first() {
            grid.set(Slot::new(Rank::Front, column), id);
        }
        if let Some(&(_, id)) = ahead[c].get(1) {
            grid.set(Slot::new(Rank::FrontFront, column), id);
        }
        if let Some(&(_, id)) = behind[c].first() {
            grid.set(Slot::new(Rank::Behind, column), id);
        }
        if column != Column::Center {
            if let Some(&(_, id)) = along[c].first() {
                grid.set(Slot::new(Rank::Alongside, column), id);
            }
        }
    }
    Ok(grid)
}
