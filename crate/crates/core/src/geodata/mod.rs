//! Raster covariates and planar geometry. Coordinates are projected meters.

mod geometry;
mod raster;

pub use geometry::{
    convex_hull, point_in_polygon, sample_uniform_in_polygon, sample_uniform_in_polygon_counted, Polygon,
};
pub use raster::{read_ascii_grid, write_ascii_grid, RasterGrid};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Point reached by moving `length` along `heading` (radians,
    /// counterclockwise from east).
    pub fn step(self, length: f64, heading: f64) -> Point {
        Point::new(self.x + length * heading.cos(), self.y + length * heading.sin())
    }
}

/// Named rasters sharing one geometry.
#[derive(Debug, Clone)]
pub struct CovariateStack {
    names: Vec<String>,
    grids: Vec<RasterGrid>,
}

impl CovariateStack {
    pub fn new(layers: Vec<(String, RasterGrid)>) -> Result<Self> {
        if let Some((first_name, first)) = layers.first() {
            for (name, g) in &layers[1..] {
                if !g.same_geometry(first) {
                    return Err(Error::ExtentMismatch(format!(
                        "`{name}` differs from `{first_name}`"
                    )));
                }
            }
        }
        let mut names = Vec::with_capacity(layers.len());
        for (name, _) in &layers {
            if names.contains(name) {
                return Err(Error::InvalidParameter(format!("duplicate covariate `{name}`")));
            }
            names.push(name.clone());
        }
        Ok(CovariateStack {
            names,
            grids: layers.into_iter().map(|(_, g)| g).collect(),
        })
    }

    pub fn empty() -> Self {
        CovariateStack {
            names: vec![],
            grids: vec![],
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn grids(&self) -> &[RasterGrid] {
        &self.grids
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn grid(&self, name: &str) -> Option<&RasterGrid> {
        self.index_of(name).map(|i| &self.grids[i])
    }

    /// The shared geometry, if any layer exists.
    pub fn template(&self) -> Option<&RasterGrid> {
        self.grids.first()
    }

    /// Inside the shared extent (always true for an empty stack).
    pub fn contains(&self, p: Point) -> bool {
        self.template().is_none_or(|g| g.contains(p))
    }

    /// Containing-cell values aligned with [`names`](Self::names); `None`
    /// marks nodata.
    pub fn extract(&self, p: Point) -> Result<Vec<Option<f64>>> {
        let Some(t) = self.template() else {
            return Ok(vec![]);
        };
        let (r, c) = t.cell_of(p).ok_or(Error::OutOfExtent {
            x: p.x,
            y: p.y,
            step: None,
        })?;
        Ok(self
            .grids
            .iter()
            .map(|g| {
                let v = g.get(r, c);
                (!g.is_nodata(v)).then_some(v)
            })
            .collect())
    }

    /// Like [`extract`](Self::extract) but `None` unless the point is in
    /// extent and every layer holds data there.
    pub fn extract_complete(&self, p: Point) -> Option<Vec<f64>> {
        self.extract(p).ok()?.into_iter().collect()
    }

    pub fn extract_named(&self, p: Point) -> Result<Vec<(String, Option<f64>)>> {
        Ok(self.names.iter().cloned().zip(self.extract(p)?).collect())
    }
}

/// Free-function form of [`CovariateStack::extract_named`] for an ad hoc list
/// of grids.
pub fn extract_covariates(grids: &[(String, RasterGrid)], p: Point) -> Result<Vec<(String, Option<f64>)>> {
    CovariateStack::new(grids.to_vec())?.extract_named(p)
}
