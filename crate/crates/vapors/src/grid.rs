//! Observation grids and their on-disk formats.
//!
//! [`ObsGrid`] is a binary occupancy mask, [`GrayGrid`] a grayscale render.
//! Masks serialize as row-major run-length-encoded bitstrings inside JSON
//! logs; both grid kinds round-trip through plain-text PBM (P1) and binary
//! PGM (P5) for inspection.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad grid file: {0}")]
    Format(String),
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("run-length data does not match {expected} pixels")]
    BadRunLength { expected: usize },
    #[error("calibration matrix is singular")]
    SingularCalibration,
}

/// Binary occupancy mask, row-major, values in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObsGrid {
    pub width: usize,
    pub height: usize,
    data: Vec<u8>,
}

impl ObsGrid {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height);
        debug_assert!(data.iter().all(|&v| v <= 1));
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> u8 {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: u8) {
        self.data[v * self.width + u] = (value != 0) as u8;
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Row-major run-length encoding: comma-separated run lengths of
    /// alternating values starting with zeros. A mask beginning with a set
    /// pixel starts with a `0` run.
    pub fn to_rle(&self) -> String {
        let mut runs: Vec<usize> = Vec::new();
        let mut current = 0u8;
        let mut len = 0usize;
        for &v in &self.data {
            if v == current {
                len += 1;
            } else {
                runs.push(len);
                current = v;
                len = 1;
            }
        }
        runs.push(len);
        let parts: Vec<String> = runs.iter().map(|r| r.to_string()).collect();
        parts.join(",")
    }

    pub fn from_rle(width: usize, height: usize, rle: &str) -> Result<Self, GridError> {
        let expected = width * height;
        let mut data = Vec::with_capacity(expected);
        let mut value = 0u8;
        for part in rle.split(',') {
            let run: usize = part
                .trim()
                .parse()
                .map_err(|_| GridError::BadRunLength { expected })?;
            data.extend(std::iter::repeat(value).take(run));
            value ^= 1;
        }
        if data.len() != expected {
            return Err(GridError::BadRunLength { expected });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Plain-text PBM (P1). Note PBM stores 1 for black = set pixel.
    pub fn write_pbm<W: Write>(&self, mut w: W) -> Result<(), GridError> {
        writeln!(w, "P1")?;
        writeln!(w, "{} {}", self.width, self.height)?;
        for v in 0..self.height {
            let row: Vec<&str> = (0..self.width)
                .map(|u| if self.get(u, v) != 0 { "1" } else { "0" })
                .collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }

    pub fn save_pbm(&self, path: &Path) -> Result<(), GridError> {
        let file = std::fs::File::create(path)?;
        self.write_pbm(std::io::BufWriter::new(file))
    }

    pub fn read_pbm<R: Read>(r: R) -> Result<Self, GridError> {
        let mut reader = BufReader::new(r);
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let mut tokens = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .flat_map(|l| l.split_whitespace());
        let magic = tokens.next().ok_or_else(|| bad("missing magic"))?;
        if magic != "P1" {
            return Err(bad(&format!("expected P1, got {magic}")));
        }
        let width: usize = parse_token(tokens.next())?;
        let height: usize = parse_token(tokens.next())?;
        let mut data = Vec::with_capacity(width * height);
        for tok in tokens {
            for ch in tok.chars() {
                match ch {
                    '0' => data.push(0),
                    '1' => data.push(1),
                    _ => return Err(bad(&format!("unexpected PBM digit {ch}"))),
                }
            }
        }
        if data.len() != width * height {
            return Err(bad("PBM pixel count mismatch"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn load_pbm(path: &Path) -> Result<Self, GridError> {
        Ok(Self::read_pbm(std::fs::File::open(path)?)?)
    }

    /// Render as a grayscale image with set pixels white.
    pub fn to_gray(&self) -> GrayGrid {
        GrayGrid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f64::from(v) * 255.0).collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ObsGridRepr {
    width: usize,
    height: usize,
    rle: String,
}

impl Serialize for ObsGrid {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        ObsGridRepr {
            width: self.width,
            height: self.height,
            rle: self.to_rle(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ObsGrid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = ObsGridRepr::deserialize(deserializer)?;
        ObsGrid::from_rle(repr.width, repr.height, &repr.rle).map_err(D::Error::custom)
    }
}

/// Grayscale grid, row-major, values in [0, 255].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayGrid {
    pub width: usize,
    pub height: usize,
    data: Vec<f64>,
}

impl GrayGrid {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        self.data[v * self.width + u] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Binary PGM (P5), one byte per pixel, values rounded and clamped.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<(), GridError> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn save_pgm(&self, path: &Path) -> Result<(), GridError> {
        let file = std::fs::File::create(path)?;
        self.write_pgm(std::io::BufWriter::new(file))
    }

    pub fn read_pgm<R: Read>(r: R) -> Result<Self, GridError> {
        let mut reader = BufReader::new(r);
        let mut header: Vec<String> = Vec::new();
        // Header = three whitespace-separated fields after the magic,
        // comments allowed. Read lines until all are collected.
        let mut magic = [0u8; 2];
        reader.read_exact(&mut magic)?;
        if &magic != b"P5" {
            return Err(bad("expected P5 magic"));
        }
        while header.len() < 3 {
            let mut line = String::new();
            if reader.read_line(&mut line)? == 0 {
                return Err(bad("truncated PGM header"));
            }
            let line = line.trim();
            if line.starts_with('#') {
                continue;
            }
            header.extend(line.split_whitespace().map(|s| s.to_string()));
        }
        let width: usize = parse_token(header.first().map(|s| s.as_str()))?;
        let height: usize = parse_token(header.get(1).map(|s| s.as_str()))?;
        let maxval: usize = parse_token(header.get(2).map(|s| s.as_str()))?;
        if maxval != 255 {
            return Err(bad(&format!("unsupported PGM maxval {maxval}")));
        }
        let mut bytes = vec![0u8; width * height];
        reader.read_exact(&mut bytes)?;
        Ok(Self {
            width,
            height,
            data: bytes.into_iter().map(f64::from).collect(),
        })
    }

    pub fn load_pgm(path: &Path) -> Result<Self, GridError> {
        Ok(Self::read_pgm(std::fs::File::open(path)?)?)
    }
}

fn bad(msg: &str) -> GridError {
    GridError::Format(msg.to_string())
}

fn parse_token<T: std::str::FromStr>(tok: Option<&str>) -> Result<T, GridError>
where
    T::Err: fmt::Display,
{
    let tok = tok.ok_or_else(|| bad("missing header token"))?;
    tok.parse()
        .map_err(|e| bad(&format!("bad header token {tok}: {e}")))
}

/// Invertible affine map between continuous pixel coordinates and plate-frame
/// meters, plus the plate-surface height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Row-major 2x2 linear part of pixel -> plate.
    pub linear: [[f64; 2]; 2],
    /// Translation of pixel -> plate.
    pub offset: [f64; 2],
    /// Plate-surface height, meters.
    pub surface_z: f64,
}

impl Calibration {
    pub fn new(linear: [[f64; 2]; 2], offset: [f64; 2], surface_z: f64) -> Result<Self, GridError> {
        let det = linear[0][0] * linear[1][1] - linear[0][1] * linear[1][0];
        if det.abs() < 1e-30 {
            return Err(GridError::SingularCalibration);
        }
        Ok(Self {
            linear,
            offset,
            surface_z,
        })
    }

    /// Axis-aligned map placing a square grid symmetrically over the plate:
    /// the grid spans `[-half_extent, half_extent]` around the plate center
    /// on both axes.
    pub fn centered(
        grid_w: usize,
        grid_h: usize,
        plate_center: (f64, f64),
        half_extent: f64,
        surface_z: f64,
    ) -> Self {
        let sx = 2.0 * half_extent / grid_w as f64;
        let sy = 2.0 * half_extent / grid_h as f64;
        Self {
            linear: [[sx, 0.0], [0.0, sy]],
            offset: [
                plate_center.0 - half_extent,
                plate_center.1 - half_extent,
            ],
            surface_z,
        }
    }

    /// Continuous pixel coordinates to plate-frame meters.
    pub fn pixel_to_plate(&self, uf: f64, vf: f64) -> (f64, f64) {
        (
            self.linear[0][0] * uf + self.linear[0][1] * vf + self.offset[0],
            self.linear[1][0] * uf + self.linear[1][1] * vf + self.offset[1],
        )
    }

    /// Plate-frame meters to continuous pixel coordinates.
    pub fn plate_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.offset[0];
        let dy = y - self.offset[1];
        let det = self.linear[0][0] * self.linear[1][1] - self.linear[0][1] * self.linear[1][0];
        (
            (self.linear[1][1] * dx - self.linear[0][1] * dy) / det,
            (-self.linear[1][0] * dx + self.linear[0][0] * dy) / det,
        )
    }
}
