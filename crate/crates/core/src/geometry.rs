//! Dome geometry: face discretization, tunnels between outer and inner
//! cells, goal poses on tunnel centerlines, and the brute-force shield
//! blocking check.
//!
//! Both domes are axis-aligned cuboids sharing one center. Faces are
//! tiled by square cells of side `cell_size`; on each face, columns run
//! along the first in-plane world axis and rows along the second (see
//! [`Face::col_axis`] / [`Face::row_axis`]). Cells are ordered by
//! `(face, row, col)` with faces in [`Face::ALL`] order.

use alloc::vec::Vec;
use nalgebra::{Matrix3, Rotation3, Translation3, UnitQuaternion};
#[allow(unused_imports)]
use num_traits::Float;

use crate::{Pose, Vec3};

/// Goal poses stay this far (m) from either centerline endpoint.
pub const DEFAULT_GOAL_MARGIN: f64 = 0.05;
/// Angular goal tolerance (rad) attached to sampled shield poses.
pub const DEFAULT_GOAL_ANGLE_TOLERANCE: f64 = 0.017_453_292_519_943_295;

const TILING_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid dome configuration: {0}")]
    Config(alloc::string::String),
    #[error("tunnel {0} is infeasible")]
    InfeasibleTunnel(u32),
    #[error("segment does not cross an active face of both domes")]
    NoIntersection,
}

fn config_error(msg: impl Into<alloc::string::String>) -> GeometryError {
    GeometryError::Config(msg.into())
}

/// Dome face identifier. The floor (`-Z`) is never a face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Face {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
}

impl Face {
    pub const ALL: [Face; 5] = [Face::PosX, Face::NegX, Face::PosY, Face::NegY, Face::PosZ];

    pub fn normal_axis(self) -> usize {
        match self {
            Face::PosX | Face::NegX => 0,
            Face::PosY | Face::NegY => 1,
            Face::PosZ => 2,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Face::NegX | Face::NegY => -1.0,
            _ => 1.0,
        }
    }

    pub fn col_axis(self) -> usize {
        match self {
            Face::PosX | Face::NegX => 1,
            Face::PosY | Face::NegY | Face::PosZ => 0,
        }
    }

    pub fn row_axis(self) -> usize {
        match self {
            Face::PosZ => 1,
            _ => 2,
        }
    }

    pub fn normal(self) -> Vec3 {
        let mut n = Vec3::zeros();
        n[self.normal_axis()] = self.sign();
        n
    }

    pub fn label(self) -> &'static str {
        match self {
            Face::PosX => "+X",
            Face::NegX => "-X",
            Face::PosY => "+Y",
            Face::NegY => "-Y",
            Face::PosZ => "+Z",
        }
    }

    pub fn parse(s: &str) -> Option<Face> {
        Face::ALL.into_iter().find(|f| f.label() == s)
    }

    /// Face hit when entering a box along `axis` with direction sign `dir_sign`.
    fn from_entry(axis: usize, dir_sign: f64) -> Option<Face> {
        match (axis, dir_sign < 0.0) {
            (0, true) => Some(Face::PosX),
            (0, false) => Some(Face::NegX),
            (1, true) => Some(Face::PosY),
            (1, false) => Some(Face::NegY),
            (2, true) => Some(Face::PosZ),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dome {
    Inner,
    Outer,
}

/// Protection geometry: two co-centric cuboids and the shield that blocks
/// tunnels between them.
#[derive(Debug, Clone, PartialEq)]
pub struct DomeConfig {
    pub center: Vec3,
    /// Half-sizes of the inner dome (m).
    pub inner_extents: Vec3,
    /// Half-sizes of the outer dome (m).
    pub outer_extents: Vec3,
    pub active_faces: Vec<Face>,
    pub cell_size: f64,
    /// Side of the square shield (m).
    pub shield_side: f64,
    /// Allowed shield position error (m).
    pub pose_tolerance: f64,
}

impl Default for DomeConfig {
    fn default() -> Self {
        Self {
            center: Vec3::new(0.0, 0.0, 0.75),
            inner_extents: Vec3::new(0.5, 0.5, 0.75),
            outer_extents: Vec3::new(1.25, 1.25, 1.0),
            active_faces: alloc::vec![Face::PosX],
            cell_size: 0.25,
            shield_side: 0.3,
            pose_tolerance: 0.025,
        }
    }
}

impl DomeConfig {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let all_finite = self.center.iter().all(|v| v.is_finite())
            && self.inner_extents.iter().all(|v| v.is_finite())
            && self.outer_extents.iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(config_error("non-finite dome dimensions"));
        }
        if self.inner_extents.iter().any(|&e| e <= 0.0) {
            return Err(config_error("inner extents must be positive"));
        }
        if self
            .outer_extents
            .iter()
            .zip(self.inner_extents.iter())
            .any(|(o, i)| o <= i)
        {
            return Err(config_error(
                "outer dome must strictly contain the inner dome",
            ));
        }
        if !(self.cell_size > 0.0) {
            return Err(config_error("cell_size must be positive"));
        }
        if !(self.pose_tolerance >= 0.0) {
            return Err(config_error("pose_tolerance must be non-negative"));
        }
        if !(self.cell_size < self.shield_side) {
            return Err(config_error(
                "cell_size must be smaller than the shield side",
            ));
        }
        if self.shield_side + 1e-12 < self.cell_size + 2.0 * self.pose_tolerance {
            return Err(config_error(
                "shield_side must be at least cell_size + 2 * pose_tolerance",
            ));
        }
        if self.active_faces.is_empty() {
            return Err(config_error("at least one face must be active"));
        }
        for &face in &self.active_faces {
            for (name, ext) in [
                ("inner", &self.inner_extents),
                ("outer", &self.outer_extents),
            ] {
                for axis in [face.col_axis(), face.row_axis()] {
                    if tile_count(2.0 * ext[axis], self.cell_size).is_none() {
                        return Err(config_error(alloc::format!(
                            "{name} face {} side {} is not a multiple of cell_size {}",
                            face.label(),
                            2.0 * ext[axis],
                            self.cell_size
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn extents(&self, dome: Dome) -> Vec3 {
        match dome {
            Dome::Inner => self.inner_extents,
            Dome::Outer => self.outer_extents,
        }
    }

    pub fn is_active(&self, face: Face) -> bool {
        self.active_faces.contains(&face)
    }

    /// Active faces deduplicated, in canonical order.
    pub fn sorted_faces(&self) -> Vec<Face> {
        Face::ALL
            .into_iter()
            .filter(|f| self.active_faces.contains(f))
            .collect()
    }
}

fn tile_count(side: f64, cell: f64) -> Option<u32> {
    let ratio = side / cell;
    let n = ratio.round();
    if n >= 1.0 && (ratio - n).abs() <= TILING_EPS * ratio.max(1.0) {
        Some(n as u32)
    } else {
        None
    }
}

/// One square of a dome face grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub dome: Dome,
    pub face: Face,
    pub row: u32,
    pub col: u32,
    pub center: Vec3,
    pub outward_normal: Vec3,
}

impl Cell {
    /// Unit vectors along the column and row directions of the cell's face.
    pub fn axes(&self) -> (Vec3, Vec3) {
        let mut u = Vec3::zeros();
        let mut v = Vec3::zeros();
        u[self.face.col_axis()] = 1.0;
        v[self.face.row_axis()] = 1.0;
        (u, v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceGrid {
    pub face: Face,
    pub rows: u32,
    pub cols: u32,
    /// Index of this face's first cell in the dome's cell list.
    pub offset: u32,
}

/// Per-dome grid layout for constant-time cell indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct DomeGrid {
    pub dome: Dome,
    pub center: Vec3,
    pub extents: Vec3,
    pub cell_size: f64,
    pub faces: Vec<FaceGrid>,
    face_slot: [Option<u8>; 5],
}

impl DomeGrid {
    fn new(config: &DomeConfig, dome: Dome) -> Self {
        let extents = config.extents(dome);
        let mut faces = Vec::new();
        let mut face_slot = [None; 5];
        let mut offset = 0u32;
        for face in config.sorted_faces() {
            // validated beforehand
            let cols = tile_count(2.0 * extents[face.col_axis()], config.cell_size).unwrap_or(0);
            let rows = tile_count(2.0 * extents[face.row_axis()], config.cell_size).unwrap_or(0);
            face_slot[face as usize] = Some(faces.len() as u8);
            faces.push(FaceGrid {
                face,
                rows,
                cols,
                offset,
            });
            offset += rows * cols;
        }
        Self {
            dome,
            center: config.center,
            extents,
            cell_size: config.cell_size,
            faces,
            face_slot,
        }
    }

    pub fn num_cells(&self) -> usize {
        self.faces.iter().map(|f| (f.rows * f.cols) as usize).sum()
    }

    pub fn grid(&self, face: Face) -> Option<&FaceGrid> {
        self.face_slot[face as usize].map(|slot| &self.faces[slot as usize])
    }

    fn cell(&self, grid: &FaceGrid, row: u32, col: u32) -> Cell {
        let face = grid.face;
        let c = self.cell_size;
        let mut center = self.center;
        center[face.normal_axis()] += face.sign() * self.extents[face.normal_axis()];
        center[face.col_axis()] += -self.extents[face.col_axis()] + (col as f64 + 0.5) * c;
        center[face.row_axis()] += -self.extents[face.row_axis()] + (row as f64 + 0.5) * c;
        Cell {
            dome: self.dome,
            face,
            row,
            col,
            center,
            outward_normal: face.normal(),
        }
    }

    /// Grid cell containing `point` on `face`; points on a shared edge go
    /// to the lower index.
    pub fn locate(&self, face: Face, point: &Vec3) -> Option<(u32, u32, usize)> {
        let grid = self.grid(face)?;
        let index = |axis: usize, count: u32| -> u32 {
            let rel = (point[axis] - (self.center[axis] - self.extents[axis])) / self.cell_size;
            let k = rel.ceil() - 1.0;
            k.clamp(0.0, (count - 1) as f64) as u32
        };
        let col = index(face.col_axis(), grid.cols);
        let row = index(face.row_axis(), grid.rows);
        Some((row, col, (grid.offset + row * grid.cols + col) as usize))
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::with_capacity(self.num_cells());
        for grid in &self.faces {
            for row in 0..grid.rows {
                for col in 0..grid.cols {
                    out.push(self.cell(grid, row, col));
                }
            }
        }
        out
    }

    /// First entry of the line `origin + s * dir` into this box, restricted
    /// to `s` in `range`. Returns the entry parameter and face.
    pub fn entry(
        &self,
        origin: &Vec3,
        dir: &Vec3,
        range: (f64, f64),
    ) -> Option<(f64, Option<Face>)> {
        box_entry(&self.center, &self.extents, origin, dir, range)
    }
}

/// Slab-method entry of a line into an axis-aligned box. The face is
/// `None` when entry happens through the floor.
pub fn box_entry(
    center: &Vec3,
    extents: &Vec3,
    origin: &Vec3,
    dir: &Vec3,
    range: (f64, f64),
) -> Option<(f64, Option<Face>)> {
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    let mut enter_axis = usize::MAX;
    for axis in 0..3 {
        let lo = center[axis] - extents[axis];
        let hi = center[axis] + extents[axis];
        if dir[axis] == 0.0 {
            if origin[axis] < lo || origin[axis] > hi {
                return None;
            }
            continue;
        }
        let a = (lo - origin[axis]) / dir[axis];
        let b = (hi - origin[axis]) / dir[axis];
        let (near, far) = if a < b { (a, b) } else { (b, a) };
        if near > t_enter {
            t_enter = near;
            enter_axis = axis;
        }
        t_exit = t_exit.min(far);
    }
    if enter_axis == usize::MAX || t_enter > t_exit {
        return None;
    }
    if t_enter < range.0 || t_enter > range.1 {
        return None;
    }
    Some((t_enter, Face::from_entry(enter_axis, dir[enter_axis])))
}

/// Cells of both domes plus their grid layouts.
#[derive(Debug, Clone, PartialEq)]
pub struct DomeCells {
    pub inner: Vec<Cell>,
    pub outer: Vec<Cell>,
    pub inner_grid: DomeGrid,
    pub outer_grid: DomeGrid,
}

impl DomeCells {
    pub fn num_tunnels(&self) -> usize {
        self.inner.len() * self.outer.len()
    }

    pub fn tunnel_id(&self, outer_index: usize, inner_index: usize) -> u32 {
        (outer_index * self.inner.len() + inner_index) as u32
    }
}

pub fn discretize_domes(config: &DomeConfig) -> Result<DomeCells, GeometryError> {
    config.validate()?;
    let inner_grid = DomeGrid::new(config, Dome::Inner);
    let outer_grid = DomeGrid::new(config, Dome::Outer);
    Ok(DomeCells {
        inner: inner_grid.cells(),
        outer: outer_grid.cells(),
        inner_grid,
        outer_grid,
    })
}

/// Straight segment from `start` to `end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: Vec3,
    pub end: Vec3,
}

impl Segment {
    pub fn new(start: Vec3, end: Vec3) -> Self {
        Self { start, end }
    }

    pub fn delta(&self) -> Vec3 {
        self.end - self.start
    }

    pub fn length(&self) -> f64 {
        self.delta().norm()
    }

    pub fn direction(&self) -> Vec3 {
        self.delta() / self.length()
    }

    pub fn point_at(&self, s: f64) -> Vec3 {
        self.start + self.delta() * s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tunnel {
    pub id: u32,
    pub outer_cell: Cell,
    pub inner_cell: Cell,
    /// Outer cell center to inner cell center.
    pub centerline: Segment,
    pub feasible: bool,
}

/// A tunnel is feasible when its centerline enters the outer dome through
/// the outer cell's face and first touches the inner dome at the inner
/// cell's face.
pub fn tunnel_feasible(outer: &Cell, inner: &Cell, inner_grid: &DomeGrid) -> bool {
    let d = inner.center - outer.center;
    if outer.outward_normal.dot(&d) >= -1e-12 {
        return false;
    }
    match inner_grid.entry(&outer.center, &d, (f64::NEG_INFINITY, f64::INFINITY)) {
        Some((t, face)) => (t - 1.0).abs() <= 1e-9 && face == Some(inner.face),
        None => false,
    }
}

pub fn enumerate_tunnels(cells: &DomeCells) -> Vec<Tunnel> {
    let mut tunnels = Vec::with_capacity(cells.num_tunnels());
    for (oi, outer) in cells.outer.iter().enumerate() {
        for (ii, inner) in cells.inner.iter().enumerate() {
            tunnels.push(Tunnel {
                id: cells.tunnel_id(oi, ii),
                outer_cell: *outer,
                inner_cell: *inner,
                centerline: Segment::new(outer.center, inner.center),
                feasible: tunnel_feasible(outer, inner, &cells.inner_grid),
            });
        }
    }
    tunnels
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseTolerance {
    pub position: f64,
    pub angle: f64,
}

/// Shield pose on a tunnel centerline. The shield's local `z` axis is its
/// plane normal and points back out of the tunnel (toward incoming
/// projectiles); its local `x` axis follows world up where possible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShieldGoalPose {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
    pub tolerance: PoseTolerance,
}

impl ShieldGoalPose {
    pub fn normal(&self) -> Vec3 {
        self.orientation * Vec3::z()
    }

    pub fn to_pose(&self) -> Pose {
        Pose::from_parts(Translation3::from(self.position), self.orientation)
    }

    pub fn from_pose(pose: &Pose, tolerance: PoseTolerance) -> Self {
        Self {
            position: pose.translation.vector,
            orientation: pose.rotation,
            tolerance,
        }
    }
}

/// Rotation whose `z` column is `normal` and whose `x` column is world up
/// projected onto the plane (world `x` when the normal is vertical).
pub fn shield_orientation(normal: &Vec3) -> UnitQuaternion<f64> {
    let z = normal.normalize();
    let mut x = Vec3::z() - z * z.dot(&Vec3::z());
    if x.norm() < 1e-6 {
        x = Vec3::x() - z * z.dot(&Vec3::x());
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    UnitQuaternion::from_rotation_matrix(&rot)
}

/// `n` equidistant shield poses along the centerline, `margin` metres in
/// from each end. A single pose sits at the midpoint.
pub fn sample_goal_poses(
    tunnel: &Tunnel,
    config: &DomeConfig,
    n: usize,
    margin: f64,
) -> Result<Vec<ShieldGoalPose>, GeometryError> {
    if !tunnel.feasible {
        return Err(GeometryError::InfeasibleTunnel(tunnel.id));
    }
    let length = tunnel.centerline.length();
    let margin = margin.clamp(0.0, length / 2.0);
    let orientation = shield_orientation(&-tunnel.centerline.direction());
    let tolerance = PoseTolerance {
        position: config.pose_tolerance,
        angle: DEFAULT_GOAL_ANGLE_TOLERANCE,
    };
    let fractions: Vec<f64> = if n <= 1 {
        alloc::vec![0.5]
    } else {
        let lo = margin / length;
        let hi = 1.0 - lo;
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    };
    Ok(fractions
        .into_iter()
        .map(|s| ShieldGoalPose {
            position: tunnel.centerline.point_at(s),
            orientation,
            tolerance,
        })
        .collect())
}

/// Indices of the outer and inner cells crossed by `line` (direction
/// `start -> end`), each at the line's first entry into that dome.
pub fn locate_cell_pair(
    line: &Segment,
    cells: &DomeCells,
) -> Result<(usize, usize), GeometryError> {
    const SLACK: f64 = 1e-9;
    let dir = line.delta();
    let range = (-SLACK, 1.0 + SLACK);
    let (t_out, face_out) = cells
        .outer_grid
        .entry(&line.start, &dir, range)
        .ok_or(GeometryError::NoIntersection)?;
    let (t_in, face_in) = cells
        .inner_grid
        .entry(&line.start, &dir, range)
        .ok_or(GeometryError::NoIntersection)?;
    if t_in < t_out {
        return Err(GeometryError::NoIntersection);
    }
    let face_out = face_out.ok_or(GeometryError::NoIntersection)?;
    let face_in = face_in.ok_or(GeometryError::NoIntersection)?;
    let p_out = line.start + dir * t_out;
    let p_in = line.start + dir * t_in;
    let (_, _, oi) = cells
        .outer_grid
        .locate(face_out, &p_out)
        .ok_or(GeometryError::NoIntersection)?;
    let (_, _, ii) = cells
        .inner_grid
        .locate(face_in, &p_in)
        .ok_or(GeometryError::NoIntersection)?;
    Ok((oi, ii))
}

pub fn projectile_to_cell_pair(
    line: &Segment,
    cells: &DomeCells,
) -> Result<(Cell, Cell), GeometryError> {
    let (oi, ii) = locate_cell_pair(line, cells)?;
    Ok((cells.outer[oi], cells.inner[ii]))
}

/// Points of a `m x m` stratified grid over a cell square.
fn cell_samples(cell: &Cell, side: f64, m: usize) -> Vec<Vec3> {
    let (u, v) = cell.axes();
    let mut pts = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            let a = ((i as f64 + 0.5) / m as f64 - 0.5) * side;
            let b = ((j as f64 + 0.5) / m as f64 - 0.5) * side;
            pts.push(cell.center + u * a + v * b);
        }
    }
    pts
}

/// Whether segment `a -> b` crosses the square shield at `pose`.
pub fn segment_hits_shield(a: &Vec3, b: &Vec3, pose: &ShieldGoalPose, side: f64) -> bool {
    let n = pose.normal();
    let d = b - a;
    let denom = n.dot(&d);
    if denom.abs() < 1e-15 {
        return false;
    }
    let t = n.dot(&(pose.position - a)) / denom;
    if !(-1e-12..=1.0 + 1e-12).contains(&t) {
        return false;
    }
    let rel = a + d * t - pose.position;
    let x = pose.orientation * Vec3::x();
    let y = pose.orientation * Vec3::y();
    let half = side / 2.0 + 1e-12;
    rel.dot(&x).abs() <= half && rel.dot(&y).abs() <= half
}

/// Brute-force blocking oracle: every sampled segment from the outer cell
/// square to the inner cell square must cross the shield. At least
/// `n_rays` segments are tested (`m^4` with `m = ceil(n_rays^(1/4))`).
pub fn shield_blocks_tunnel(
    pose: &ShieldGoalPose,
    tunnel: &Tunnel,
    config: &DomeConfig,
    n_rays: usize,
) -> bool {
    let m = grid_side(n_rays);
    let outer = cell_samples(&tunnel.outer_cell, config.cell_size, m);
    let inner = cell_samples(&tunnel.inner_cell, config.cell_size, m);
    outer.iter().all(|a| {
        inner
            .iter()
            .all(|b| segment_hits_shield(a, b, pose, config.shield_side))
    })
}

fn grid_side(n_rays: usize) -> usize {
    let mut m = 1usize;
    while m * m * m * m < n_rays.max(1) {
        m += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn front_config() -> DomeConfig {
        DomeConfig::default()
    }

    /// Unit-ish config with equal 1 m faces for coaxial tunnel tests.
    fn coaxial_config(shield: f64, tol: f64) -> DomeConfig {
        DomeConfig {
            center: Vec3::zeros(),
            inner_extents: Vec3::new(0.5, 0.5, 0.5),
            outer_extents: Vec3::new(1.5, 1.0, 1.0),
            active_faces: alloc::vec![Face::PosX],
            cell_size: 0.25,
            shield_side: shield,
            pose_tolerance: tol,
        }
    }

    #[test]
    fn tiles_unit_face_into_sixteen() {
        let config = coaxial_config(0.3, 0.025);
        let cells = discretize_domes(&config).unwrap();
        assert_eq!(cells.inner.len(), 16);
        let mut ys: Vec<f64> = cells.inner.iter().map(|c| c.center.y).collect();
        ys.sort_by(f64::total_cmp);
        ys.dedup();
        assert_eq!(ys, alloc::vec![-0.375, -0.125, 0.125, 0.375]);
        for c in &cells.inner {
            assert_eq!(c.center.x, 0.5);
        }
        // ordered by (face, row, col)
        let order: Vec<(u32, u32)> = cells.inner.iter().map(|c| (c.row, c.col)).collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
    }

    #[test]
    fn only_active_faces_emit_cells() {
        let cells = discretize_domes(&front_config()).unwrap();
        assert!(cells.outer.iter().all(|c| c.face == Face::PosX));
        assert_eq!(cells.outer.len(), 10 * 8);
        assert_eq!(cells.inner.len(), 4 * 6);
    }

    #[test]
    fn tiling_is_complete_and_disjoint() {
        let mut config = front_config();
        config.active_faces = alloc::vec![Face::PosX, Face::NegY, Face::PosZ];
        let cells = discretize_domes(&config).unwrap();
        for (grid, list, ext) in [
            (&cells.inner_grid, &cells.inner, config.inner_extents),
            (&cells.outer_grid, &cells.outer, config.outer_extents),
        ] {
            for face in config.sorted_faces() {
                let area: f64 = list
                    .iter()
                    .filter(|c| c.face == face)
                    .map(|_| config.cell_size * config.cell_size)
                    .sum();
                let expect = 4.0 * ext[face.col_axis()] * ext[face.row_axis()];
                assert!((area - expect).abs() < 1e-9);
                let g = grid.grid(face).unwrap();
                let mut idx: Vec<(u32, u32)> = list
                    .iter()
                    .filter(|c| c.face == face)
                    .map(|c| (c.row, c.col))
                    .collect();
                let before = idx.len();
                idx.dedup();
                assert_eq!(before, idx.len());
                assert!(idx.iter().all(|&(r, c)| r < g.rows && c < g.cols));
            }
        }
    }

    #[test]
    fn non_multiple_face_rejected() {
        let mut config = coaxial_config(0.3, 0.025);
        config.inner_extents = Vec3::new(0.5, 0.15, 0.5);
        assert!(matches!(
            discretize_domes(&config),
            Err(GeometryError::Config(_))
        ));
    }

    #[test]
    fn invariant_violations_rejected() {
        let mut c = coaxial_config(0.3, 0.025);
        c.outer_extents = Vec3::new(0.5, 1.0, 1.0);
        assert!(c.validate().is_err());
        let mut c = coaxial_config(0.25, 0.0);
        c.cell_size = 0.25;
        assert!(c.validate().is_err(), "cell must be smaller than shield");
        let c = coaxial_config(0.3, 0.05);
        assert!(c.validate().is_err(), "blocking margin");
    }

    #[test]
    fn tunnels_are_cartesian_product() {
        let mut config = coaxial_config(0.3, 0.025);
        config.cell_size = 0.5;
        config.shield_side = 0.6;
        let cells = discretize_domes(&config).unwrap();
        assert_eq!(cells.outer.len(), 16);
        assert_eq!(cells.inner.len(), 4);
        let tunnels = enumerate_tunnels(&cells);
        assert_eq!(tunnels.len(), 64);
        for (i, t) in tunnels.iter().enumerate() {
            assert_eq!(t.id as usize, i);
            assert_eq!(t.centerline.start, t.outer_cell.center);
            assert_eq!(t.centerline.end, t.inner_cell.center);
        }
    }

    #[test]
    fn occluded_pair_is_infeasible() {
        let mut config = coaxial_config(0.3, 0.025);
        config.active_faces = alloc::vec![Face::PosX, Face::NegX];
        let cells = discretize_domes(&config).unwrap();
        let tunnels = enumerate_tunnels(&cells);
        let t = tunnels
            .iter()
            .find(|t| t.outer_cell.face == Face::PosX && t.inner_cell.face == Face::NegX)
            .unwrap();
        assert!(!t.feasible);
        let coax = tunnels
            .iter()
            .find(|t| {
                t.outer_cell.face == Face::PosX
                    && t.inner_cell.face == Face::PosX
                    && (t.outer_cell.center.yz() - t.inner_cell.center.yz()).norm() < 1e-12
            })
            .unwrap();
        assert!(coax.feasible);
    }

    /// Independent oracle: march along the centerline and find the first
    /// sample inside (or on) the inner box.
    fn first_inner_contact(t: &Tunnel, config: &DomeConfig) -> Vec3 {
        let n = 20_000;
        for k in 0..=n {
            let p = t.centerline.point_at(k as f64 / n as f64);
            let rel = p - config.center;
            if (0..3).all(|a| rel[a].abs() <= config.inner_extents[a] + 1e-9) {
                return p;
            }
        }
        t.centerline.end
    }

    #[test]
    fn feasible_tunnels_first_touch_their_inner_cell() {
        let mut config = front_config();
        config.active_faces = alloc::vec![Face::PosX, Face::PosY, Face::PosZ];
        let cells = discretize_domes(&config).unwrap();
        let tunnels = enumerate_tunnels(&cells);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut checked = 0;
        for _ in 0..3000 {
            let t = &tunnels[rng.gen_range(0..tunnels.len())];
            if !t.feasible {
                continue;
            }
            checked += 1;
            let hit = first_inner_contact(t, &config);
            let step = t.centerline.length() / 20_000.0;
            assert!(
                (hit - t.centerline.end).norm() <= step + 1e-9,
                "tunnel {}",
                t.id
            );
        }
        assert!(checked > 100);
    }

    fn coaxial_tunnel(config: &DomeConfig) -> Tunnel {
        let cells = discretize_domes(config).unwrap();
        enumerate_tunnels(&cells)
            .into_iter()
            .find(|t| {
                t.feasible && (t.outer_cell.center.yz() - t.inner_cell.center.yz()).norm() < 1e-12
            })
            .unwrap()
    }

    #[test]
    fn goal_pose_sampling() {
        let config = coaxial_config(0.3, 0.025);
        let tunnel = coaxial_tunnel(&config);
        let one = sample_goal_poses(&tunnel, &config, 1, DEFAULT_GOAL_MARGIN).unwrap();
        assert_eq!(one.len(), 1);
        let mid = (tunnel.centerline.start + tunnel.centerline.end) / 2.0;
        assert!((one[0].position - mid).norm() < 1e-12);
        // 1 m centerline: outer +X at 1.5, inner +X at 0.5
        assert!((tunnel.centerline.length() - 1.0).abs() < 1e-12);
        let five = sample_goal_poses(&tunnel, &config, 5, 0.0).unwrap();
        for w in five.windows(2) {
            assert!(((w[1].position - w[0].position).norm() - 0.25).abs() < 1e-12);
        }
        let dir = tunnel.centerline.direction();
        for pose in sample_goal_poses(&tunnel, &config, 4, DEFAULT_GOAL_MARGIN).unwrap() {
            assert!(pose.normal().cross(&dir).norm() < 1e-9);
        }
        let mut bad = tunnel;
        bad.feasible = false;
        assert!(matches!(
            sample_goal_poses(&bad, &config, 3, 0.05),
            Err(GeometryError::InfeasibleTunnel(_))
        ));
    }

    #[test]
    fn margin_keeps_poses_off_the_surfaces() {
        let config = front_config();
        let cells = discretize_domes(&config).unwrap();
        let tunnel = enumerate_tunnels(&cells)
            .into_iter()
            .find(|t| t.feasible)
            .unwrap();
        let poses = sample_goal_poses(&tunnel, &config, 3, DEFAULT_GOAL_MARGIN).unwrap();
        assert!(((poses[0].position - tunnel.centerline.start).norm() - 0.05).abs() < 1e-12);
        assert!(((poses[2].position - tunnel.centerline.end).norm() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn cell_pair_through_face_centers() {
        let config = coaxial_config(0.3, 0.025);
        let cells = discretize_domes(&config).unwrap();
        // 4x4 grid has no center cell; the center point sits on a shared
        // corner and ties break toward the lower indices
        let line = Segment::new(Vec3::new(5.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 0.0));
        let (o, i) = projectile_to_cell_pair(&line, &cells).unwrap();
        assert_eq!((o.row, o.col), (3, 3));
        assert_eq!((i.row, i.col), (1, 1));
        let line = Segment::new(Vec3::new(5.0, 0.1, 0.1), Vec3::new(0.0, 0.1, 0.1));
        let (o, i) = projectile_to_cell_pair(&line, &cells).unwrap();
        assert_eq!((o.row, o.col), (4, 4));
        assert_eq!((i.row, i.col), (2, 2));
        assert!((o.center - Vec3::new(1.5, 0.125, 0.125)).norm() < 1e-12);
    }

    #[test]
    fn grazing_line_misses() {
        let config = coaxial_config(0.3, 0.025);
        let cells = discretize_domes(&config).unwrap();
        let line = Segment::new(Vec3::new(5.0, 2.0, 0.0), Vec3::new(-5.0, 2.0, 0.0));
        assert_eq!(
            projectile_to_cell_pair(&line, &cells),
            Err(GeometryError::NoIntersection)
        );
        // enters through an inactive face
        let line = Segment::new(Vec3::new(0.0, 5.0, 0.0), Vec3::new(0.0, 0.0, 0.0));
        assert_eq!(
            projectile_to_cell_pair(&line, &cells),
            Err(GeometryError::NoIntersection)
        );
    }

    #[test]
    fn blocking_oracle_cases() {
        let config = coaxial_config(0.3, 0.025);
        let tunnel = coaxial_tunnel(&config);
        let mut pose = sample_goal_poses(&tunnel, &config, 1, 0.0).unwrap()[0];
        assert!(shield_blocks_tunnel(&pose, &tunnel, &config, 10_000));
        pose.position.y += 0.1;
        assert!(!shield_blocks_tunnel(&pose, &tunnel, &config, 10_000));
        // shield exactly cell-sized, centered: still blocks
        let mut tight = config.clone();
        tight.shield_side = tight.cell_size;
        let pose = sample_goal_poses(&tunnel, &tight, 1, 0.0).unwrap()[0];
        assert!(shield_blocks_tunnel(&pose, &tunnel, &tight, 10_000));
    }

    #[test]
    fn blocking_margin_property() {
        let config = coaxial_config(0.3, 0.025);
        let cells = discretize_domes(&config).unwrap();
        let parallel: Vec<Tunnel> = enumerate_tunnels(&cells)
            .into_iter()
            .filter(|t| t.feasible && t.outer_cell.face == t.inner_cell.face)
            .filter(|t| (t.outer_cell.center.yz() - t.inner_cell.center.yz()).norm() < 1e-12)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let t = &parallel[rng.gen_range(0..parallel.len())];
            let base = sample_goal_poses(t, &config, 3, DEFAULT_GOAL_MARGIN).unwrap();
            let mut pose = base[rng.gen_range(0..3)];
            let dir = loop {
                let v = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if v.norm() > 1e-3 && v.norm() <= 1.0 {
                    break v.normalize();
                }
            };
            pose.position += dir * rng.gen_range(0.0..=config.pose_tolerance);
            assert!(shield_blocks_tunnel(&pose, t, &config, 10_000));
        }
    }

    #[test]
    fn grid_side_covers_requested_rays() {
        assert_eq!(grid_side(1), 1);
        assert_eq!(grid_side(10_000), 10);
        assert_eq!(grid_side(1000), 6);
    }
}
