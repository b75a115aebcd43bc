use std::fmt::Write as _;
use std::path::Path;

use super::Point;
use crate::error::{Error, Result};

/// Single-band regular grid. Row 0 is the northernmost row.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    ncols: usize,
    nrows: usize,
    xll: f64,
    yll: f64,
    cellsize: f64,
    nodata: f64,
    values: Vec<f64>,
}

impl RasterGrid {
    pub fn new(
        ncols: usize,
        nrows: usize,
        xll: f64,
        yll: f64,
        cellsize: f64,
        nodata: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        if ncols == 0 || nrows == 0 {
            return Err(Error::InvalidParameter("raster needs ncols, nrows >= 1".into()));
        }
        if !(cellsize.is_finite() && cellsize > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "cellsize must be > 0, got {cellsize}"
            )));
        }
        if !(xll.is_finite() && yll.is_finite()) {
            return Err(Error::InvalidParameter("raster origin must be finite".into()));
        }
        if values.len() != ncols * nrows {
            return Err(Error::InvalidParameter(format!(
                "raster expects {} values, got {}",
                ncols * nrows,
                values.len()
            )));
        }
        Ok(RasterGrid {
            ncols,
            nrows,
            xll,
            yll,
            cellsize,
            nodata,
            values,
        })
    }

    /// Grid with the geometry of `self`, filled by `f(row, col)`.
    pub fn map_cells(&self, mut f: impl FnMut(usize, usize) -> f64) -> RasterGrid {
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.nrows {
            for c in 0..self.ncols {
                values.push(f(r, c));
            }
        }
        RasterGrid {
            values,
            ..self.clone()
        }
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }
    pub fn nrows(&self) -> usize {
        self.nrows
    }
    pub fn xll(&self) -> f64 {
        self.xll
    }
    pub fn yll(&self) -> f64 {
        self.yll
    }
    pub fn cellsize(&self) -> f64 {
        self.cellsize
    }
    pub fn nodata(&self) -> f64 {
        self.nodata
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn xmax(&self) -> f64 {
        self.xll + self.ncols as f64 * self.cellsize
    }

    pub fn ymax(&self) -> f64 {
        self.yll + self.nrows as f64 * self.cellsize
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.ncols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.ncols + col] = v;
    }

    pub fn is_nodata(&self, v: f64) -> bool {
        v.is_nan() || v == self.nodata
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Point {
        Point::new(
            self.xll + (col as f64 + 0.5) * self.cellsize,
            self.yll + (self.nrows as f64 - row as f64 - 0.5) * self.cellsize,
        )
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.xll && p.x <= self.xmax() && p.y >= self.yll && p.y <= self.ymax()
    }

    /// Containing cell. Cells are closed on their west/south edges; points on
    /// the east or north border of the grid belong to the last column/row.
    pub fn cell_of(&self, p: Point) -> Option<(usize, usize)> {
        if !self.contains(p) {
            return None;
        }
        let col = (((p.x - self.xll) / self.cellsize).floor() as usize).min(self.ncols - 1);
        let from_south = (((p.y - self.yll) / self.cellsize).floor() as usize).min(self.nrows - 1);
        Some((self.nrows - 1 - from_south, col))
    }

    /// Value of the containing cell; `None` on nodata.
    pub fn value_at(&self, p: Point) -> Result<Option<f64>> {
        let (r, c) = self.cell_of(p).ok_or(Error::OutOfExtent {
            x: p.x,
            y: p.y,
            step: None,
        })?;
        let v = self.get(r, c);
        Ok(if self.is_nodata(v) { None } else { Some(v) })
    }

    pub fn same_geometry(&self, other: &RasterGrid) -> bool {
        self.ncols == other.ncols
            && self.nrows == other.nrows
            && self.xll == other.xll
            && self.yll == other.yll
            && self.cellsize == other.cellsize
    }

    /// Number of cells holding data.
    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| !self.is_nodata(**v)).count()
    }

    /// Sum over cells holding data.
    pub fn valid_sum(&self) -> f64 {
        self.values.iter().filter(|v| !self.is_nodata(**v)).sum()
    }

    pub fn to_ascii_string(&self) -> String {
        let mut s = String::with_capacity(self.values.len() * 8 + 128);
        let _ = writeln!(s, "ncols {}", self.ncols);
        let _ = writeln!(s, "nrows {}", self.nrows);
        let _ = writeln!(s, "xllcorner {}", self.xll);
        let _ = writeln!(s, "yllcorner {}", self.yll);
        let _ = writeln!(s, "cellsize {}", self.cellsize);
        let _ = writeln!(s, "NODATA_value {}", self.nodata);
        for row in self.values.chunks(self.ncols) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{v}");
            }
            s.push('\n');
        }
        s
    }

    /// Parse ESRI ASCII grid text. `origin` is used in error messages only.
    pub fn parse_ascii(text: &str, origin: &Path) -> Result<Self> {
        const KEYS: [&str; 6] = [
            "ncols",
            "nrows",
            "xllcorner",
            "yllcorner",
            "cellsize",
            "nodata_value",
        ];
        let mut lines = text.lines().enumerate();
        let mut header = [0.0f64; 6];
        for (k, key) in KEYS.iter().enumerate() {
            let (idx, line) = lines
                .next()
                .ok_or_else(|| Error::parse(origin, k + 1, format!("missing header `{key}`")))?;
            let lineno = idx + 1;
            let mut parts = line.split_whitespace();
            let name = parts.next().unwrap_or("");
            if !name.eq_ignore_ascii_case(key) {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("expected header `{key}`, found `{name}`"),
                ));
            }
            let value = parts
                .next()
                .ok_or_else(|| Error::parse(origin, lineno, format!("header `{key}` has no value")))?;
            if parts.next().is_some() {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("trailing tokens after `{key}`"),
                ));
            }
            header[k] = value
                .parse::<f64>()
                .map_err(|e| Error::parse(origin, lineno, format!("bad `{key}` value: {e}")))?;
            if k < 2 && (header[k] < 1.0 || header[k].fract() != 0.0) {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("`{key}` must be a positive integer"),
                ));
            }
        }
        let ncols = header[0] as usize;
        let nrows = header[1] as usize;
        if !(header[4] > 0.0) {
            return Err(Error::parse(origin, 5, "cellsize must be positive"));
        }

        let mut values = Vec::with_capacity(ncols * nrows);
        let mut rows_read = 0;
        let mut last_line = 6;
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            last_line = lineno;
            if rows_read == nrows {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("more than {nrows} data rows"),
                ));
            }
            let before = values.len();
            for tok in line.split_whitespace() {
                let v = tok
                    .parse::<f64>()
                    .map_err(|e| Error::parse(origin, lineno, format!("bad value `{tok}`: {e}")))?;
                values.push(v);
            }
            let got = values.len() - before;
            if got != ncols {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("expected {ncols} values in row, found {got}"),
                ));
            }
            rows_read += 1;
        }
        if rows_read != nrows {
            return Err(Error::parse(
                origin,
                last_line,
                format!("expected {nrows} data rows, found {rows_read}"),
            ));
        }
        RasterGrid::new(ncols, nrows, header[2], header[3], header[4], header[5], values)
            .map_err(|e| Error::parse(origin, 1, e.to_string()))
    }
}

pub fn read_ascii_grid(path: impl AsRef<Path>) -> Result<RasterGrid> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RasterGrid::parse_ascii(&text, path)
}

pub fn write_ascii_grid(grid: &RasterGrid, path: impl AsRef<Path>) -> Result<()> {
    crate::io::atomic_write(path.as_ref(), grid.to_ascii_string().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Result<RasterGrid> {
        RasterGrid::parse_ascii(s, Path::new("mem.asc"))
    }

    #[test]
    fn parses_small_grid() {
        let g = p("ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2\n3 4\n")
            .unwrap();
        assert_eq!((g.ncols(), g.nrows()), (2, 2));
        assert_eq!(g.values(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(g.nodata(), -9999.0);
        // row 0 is north
        assert_eq!(g.value_at(Point::new(0.5, 1.5)).unwrap(), Some(1.0));
        assert_eq!(g.value_at(Point::new(1.5, 0.5)).unwrap(), Some(4.0));
    }

    #[test]
    fn keys_case_insensitive() {
        let g = p("NCOLS 1\nNROWS 1\nXLLCORNER 5\nYLLCORNER 6\nCELLSIZE 2\nnodata_value -1\n7\n").unwrap();
        assert_eq!(g.xll(), 5.0);
        assert_eq!(g.get(0, 0), 7.0);
    }

    #[test]
    fn wrong_value_count() {
        let err = p(
            "ncols 3\nnrows 3\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2 3\n4 5 6\n7 8\n",
        )
        .unwrap_err();
        match err {
            Error::ParseError { line, .. } => assert_eq!(line, 9),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn bad_header_reports_line() {
        let err = p("ncols 2\nnrows 2\nxllcorner 0\ncellsize 1\n").unwrap_err();
        assert!(matches!(err, Error::ParseError { line: 4, .. }), "{err:?}");
    }

    #[test]
    fn nodata_and_extent() {
        let g = RasterGrid::new(2, 1, 0.0, 0.0, 1.0, -9999.0, vec![-9999.0, 2.0]).unwrap();
        assert_eq!(g.value_at(Point::new(0.5, 0.5)).unwrap(), None);
        assert_eq!(g.value_at(Point::new(2.0, 1.0)).unwrap(), Some(2.0));
        assert!(matches!(
            g.value_at(Point::new(2.001, 0.5)),
            Err(Error::OutOfExtent { .. })
        ));
    }

    #[test]
    fn cell_center_maps_back() {
        let g = RasterGrid::new(4, 3, 10.0, 20.0, 2.5, -1.0, (0..12).map(f64::from).collect()).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                assert_eq!(g.cell_of(g.cell_center(r, c)), Some((r, c)));
            }
        }
    }
}
