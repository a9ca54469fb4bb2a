//! Ground removal with a progressive morphological filter.
//!
//! The cloud is rasterised into a grid of lowest elevations. Morphological
//! openings with growing square windows flatten everything narrower than the
//! window; a cell whose elevation drops by more than the window's height
//! threshold is marked as an object cell. Points are finally labelled against
//! the resulting ground surface, interpolated bilinearly between cell
//! centres.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowGrowth {
    /// 3, 5, 7, 9, ...
    Linear,
    /// 3, 5, 9, 17, 33, ...
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmfParams {
    pub cell_size: f64,
    /// Window widths in cells.
    pub initial_window: usize,
    pub max_window: usize,
    /// Terrain slope, rise over run.
    pub slope: f64,
    pub initial_height_thresh: f64,
    pub max_height_thresh: f64,
    pub window_growth: WindowGrowth,
}

impl Default for PmfParams {
    fn default() -> Self {
        Self {
            cell_size: 0.33,
            initial_window: 3,
            max_window: 33,
            slope: 0.15,
            initial_height_thresh: 0.15,
            max_height_thresh: 3.0,
            window_growth: WindowGrowth::Exponential,
        }
    }
}

impl PmfParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(format!("pmf: {m}")));
        if !(self.cell_size > 0.0) || !self.cell_size.is_finite() {
            return bad("cell_size must be > 0");
        }
        if self.initial_window < 1 || self.max_window < self.initial_window {
            return bad("need 1 <= initial_window <= max_window");
        }
        if !(self.slope >= 0.0) {
            return bad("slope must be >= 0");
        }
        if !(self.initial_height_thresh > 0.0)
            || self.max_height_thresh < self.initial_height_thresh
        {
            return bad("need 0 < initial_height_thresh <= max_height_thresh");
        }
        Ok(())
    }

    /// `(window, height threshold)` for every iteration.
    pub fn schedule(&self) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let mut w = self.initial_window;
        let mut prev = None;
        while w <= self.max_window {
            let dh = match prev {
                None => self.initial_height_thresh,
                Some(p) => (self.initial_height_thresh
                    + self.slope * (w - p) as f64 * self.cell_size)
                    .min(self.max_height_thresh),
            };
            out.push((w, dh));
            prev = Some(w);
            let next = match self.window_growth {
                WindowGrowth::Linear => w + 2,
                WindowGrowth::Exponential => 2 * w.max(2) - 1,
            };
            w = next;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundLabeling {
    /// `true` for ground, per input point.
    pub is_ground: Vec<bool>,
}

impl GroundLabeling {
    pub fn ground_count(&self) -> usize {
        self.is_ground.iter().filter(|&&g| g).count()
    }

    pub fn non_ground_count(&self) -> usize {
        self.is_ground.len() - self.ground_count()
    }

    /// `(ground, non_ground)` sub-clouds, each in input order.
    pub fn split(&self, cloud: &PointCloud) -> (PointCloud, PointCloud) {
        let (mut g, mut ng) = (Vec::new(), Vec::new());
        for (p, &is_g) in cloud.points.iter().zip(&self.is_ground) {
            if is_g {
                g.push(*p);
            } else {
                ng.push(*p);
            }
        }
        (
            PointCloud::new(g).with_frame_id(cloud.frame_id.clone()),
            PointCloud::new(ng).with_frame_id(cloud.frame_id.clone()),
        )
    }
}

struct Grid {
    nx: usize,
    ny: usize,
    x0: f64,
    y0: f64,
    cell: f64,
}

impl Grid {
    fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let i = (((x - self.x0) / self.cell) as usize).min(self.nx - 1);
        let j = (((y - self.y0) / self.cell) as usize).min(self.ny - 1);
        (i, j)
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
}

pub fn filter_ground(cloud: &PointCloud, params: &PmfParams) -> Result<GroundLabeling> {
    params.validate()?;
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (mut xmin, mut ymin, mut xmax, mut ymax) = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for p in &cloud.points {
        xmin = xmin.min(p.x);
        ymin = ymin.min(p.y);
        xmax = xmax.max(p.x);
        ymax = ymax.max(p.y);
    }
    let grid = Grid {
        nx: ((xmax - xmin) / params.cell_size) as usize + 1,
        ny: ((ymax - ymin) / params.cell_size) as usize + 1,
        x0: xmin,
        y0: ymin,
        cell: params.cell_size,
    };
    if grid.nx == 1 && grid.ny == 1 {
        log::warn!("ground filter: cloud fits in a single cell, labelling everything ground");
        return Ok(GroundLabeling {
            is_ground: vec![true; cloud.len()],
        });
    }

    let mut elevation = vec![f64::INFINITY; grid.nx * grid.ny];
    for p in &cloud.points {
        let (i, j) = grid.cell_of(p.x, p.y);
        let c = &mut elevation[grid.idx(i, j)];
        *c = c.min(p.z);
    }
    fill_empty(&grid, &mut elevation);

    let mut object_cell = vec![false; elevation.len()];
    let mut surface = elevation.clone();
    for (window, dh) in params.schedule() {
        let opened = open(&grid, &surface, window / 2);
        for (k, flag) in object_cell.iter_mut().enumerate() {
            if surface[k] - opened[k] > dh {
                *flag = true;
            }
        }
        surface = opened;
    }

    // Ground cells keep their lowest point; object cells fall back to the
    // most-opened surface, which never lies above the raw elevation.
    let ground_surface: Vec<f64> = elevation
        .iter()
        .zip(&surface)
        .zip(&object_cell)
        .map(|((&e, &s), &obj)| if obj { s } else { e })
        .collect();

    let is_ground = cloud
        .points
        .iter()
        .map(|p| {
            p.z - interpolate(&grid, &ground_surface, p.x, p.y) <= params.initial_height_thresh
        })
        .collect();
    Ok(GroundLabeling { is_ground })
}

/// Gives every empty cell the elevation of its nearest filled cell (BFS over
/// 4-neighbours, first reached wins).
fn fill_empty(grid: &Grid, elevation: &mut [f64]) {
    let mut queue: VecDeque<usize> = (0..elevation.len())
        .filter(|&k| elevation[k].is_finite())
        .collect();
    while let Some(k) = queue.pop_front() {
        let (i, j) = (k % grid.nx, k / grid.nx);
        let mut visit = |ni: usize, nj: usize| {
            let n = grid.idx(ni, nj);
            if !elevation[n].is_finite() {
                elevation[n] = elevation[k];
                queue.push_back(n);
            }
        };
        if i > 0 {
            visit(i - 1, j);
        }
        if i + 1 < grid.nx {
            visit(i + 1, j);
        }
        if j > 0 {
            visit(i, j - 1);
        }
        if j + 1 < grid.ny {
            visit(i, j + 1);
        }
    }
}

fn open(grid: &Grid, surface: &[f64], half: usize) -> Vec<f64> {
    let eroded = filter_square(grid, surface, half, f64::min, f64::INFINITY);
    filter_square(grid, &eroded, half, f64::max, f64::NEG_INFINITY)
}

/// Separable min/max filter over a `(2·half+1)²` window clipped at the border.
fn filter_square(
    grid: &Grid,
    src: &[f64],
    half: usize,
    op: fn(f64, f64) -> f64,
    init: f64,
) -> Vec<f64> {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut rows = vec![0.0; src.len()];
    for j in 0..ny {
        for i in 0..nx {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(nx - 1);
            rows[j * nx + i] = src[j * nx + lo..=j * nx + hi]
                .iter()
                .copied()
                .fold(init, op);
        }
    }
    let mut out = vec![0.0; src.len()];
    for i in 0..nx {
        for j in 0..ny {
            let lo = j.saturating_sub(half);
            let hi = (j + half).min(ny - 1);
            out[j * nx + i] = (lo..=hi).map(|jj| rows[jj * nx + i]).fold(init, op);
        }
    }
    out
}

/// Bilinear interpolation between cell centres, clamped at the grid edge.
fn interpolate(grid: &Grid, values: &[f64], x: f64, y: f64) -> f64 {
    let fx = ((x - grid.x0) / grid.cell - 0.5).clamp(0.0, (grid.nx - 1) as f64);
    let fy = ((y - grid.y0) / grid.cell - 0.5).clamp(0.0, (grid.ny - 1) as f64);
    let (i0, j0) = (fx.floor() as usize, fy.floor() as usize);
    let (i1, j1) = ((i0 + 1).min(grid.nx - 1), (j0 + 1).min(grid.ny - 1));
    let (tx, ty) = (fx - i0 as f64, fy - j0 as f64);
    let v = |i: usize, j: usize| values[grid.idx(i, j)];
    let a = v(i0, j0) * (1.0 - tx) + v(i1, j0) * tx;
    let b = v(i0, j1) * (1.0 - tx) + v(i1, j1) * tx;
    a * (1.0 - ty) + b * ty
}
