//! Images, square pixel windows, and the matrix/PGM file formats.
//!
//! Pixel coordinates are 1-based `(column, row)` pairs. Sub-pixel locations
//! live in the same frame, so the pixel `(x, y)` covers `[x - 0.5, x + 0.5)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major grid of pixel intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    intensities: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, intensities: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Structure("image dimensions must be positive".into()));
        }
        if intensities.len() != width * height {
            return Err(Error::Structure(format!(
                "expected {} intensities for a {width}x{height} image, got {}",
                width * height,
                intensities.len()
            )));
        }
        if let Some(i) = intensities.iter().position(|v| !v.is_finite()) {
            return Err(Error::Structure(format!("intensity {i} is not finite")));
        }
        Ok(Image {
            width,
            height,
            intensities,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    #[inline]
    fn index(&self, x: i64, y: i64) -> Option<usize> {
        if x < 1 || y < 1 || x as usize > self.width || y as usize > self.height {
            return None;
        }
        Some((y as usize - 1) * self.width + (x as usize - 1))
    }

    /// Intensity at the 1-based pixel `(x, y)`.
    pub fn get(&self, x: i64, y: i64) -> Option<f64> {
        self.index(x, y).map(|i| self.intensities[i])
    }

    pub fn set(&mut self, x: i64, y: i64, value: f64) -> Result<()> {
        let i = self.index(x, y).ok_or(Error::OutOfBounds {
            x,
            y,
            half_width: 0,
            width: self.width,
            height: self.height,
        })?;
        self.intensities[i] = value;
        Ok(())
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.intensities
    }

    /// True when the square of half-width `half_width` around `center` fits.
    pub fn contains_square(&self, center: [i64; 2], half_width: usize) -> bool {
        let h = half_width as i64;
        center[0] - h >= 1
            && center[1] - h >= 1
            && center[0] + h <= self.width as i64
            && center[1] + h <= self.height as i64
    }
}

/// Rounds a sub-pixel location to the nearest pixel; ties go away from zero.
pub fn round_to_pixel(p: [f64; 2]) -> [i64; 2] {
    [p[0].round() as i64, p[1].round() as i64]
}

/// Row-major offsets of a square of half-width `half_width`. The order is
/// the pixel order of every window with that half-width.
pub fn window_offsets(half_width: usize) -> Vec<[i64; 2]> {
    let h = half_width as i64;
    let mut out = Vec::with_capacity((2 * half_width + 1).pow(2));
    for dy in -h..=h {
        for dx in -h..=h {
            out.push([dx, dy]);
        }
    }
    out
}

/// A square block of pixels around one atom column.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub site_id: Option<usize>,
    pub half_width: usize,
    pub center: [i64; 2],
    pub coords: Vec<[f64; 2]>,
    pub intensities: Vec<f64>,
}

impl Window {
    pub fn with_site(mut self, site_id: usize) -> Self {
        self.site_id = Some(site_id);
        self
    }

    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    pub fn side(&self) -> usize {
        2 * self.half_width + 1
    }
}

pub fn extract_window(img: &Image, center: [i64; 2], half_width: usize) -> Result<Window> {
    if !img.contains_square(center, half_width) {
        return Err(Error::OutOfBounds {
            x: center[0],
            y: center[1],
            half_width,
            width: img.width,
            height: img.height,
        });
    }
    let offsets = window_offsets(half_width);
    let mut coords = Vec::with_capacity(offsets.len());
    let mut intensities = Vec::with_capacity(offsets.len());
    for [dx, dy] in offsets {
        let (x, y) = (center[0] + dx, center[1] + dy);
        coords.push([x as f64, y as f64]);
        intensities.push(img.get(x, y).expect("bounds checked above"));
    }
    Ok(Window {
        site_id: None,
        half_width,
        center,
        coords,
        intensities,
    })
}

/// Writes a window's intensities back into `img` at its coordinates.
pub fn embed_window(img: &mut Image, w: &Window) -> Result<()> {
    for (c, &v) in w.coords.iter().zip(&w.intensities) {
        img.set(c[0] as i64, c[1] as i64, v)?;
    }
    Ok(())
}

/// True iff no pixel belongs to two of the windows.
pub fn check_disjoint(windows: &[Window]) -> bool {
    squares_disjoint(
        &windows
            .iter()
            .map(|w| (w.center, w.half_width))
            .collect::<Vec<_>>(),
    )
}

/// Disjointness test on `(center, half_width)` squares.
pub fn squares_disjoint(squares: &[([i64; 2], usize)]) -> bool {
    for (i, (ci, hi)) in squares.iter().enumerate() {
        for (cj, hj) in &squares[i + 1..] {
            let reach = (*hi + *hj) as i64;
            if (ci[0] - cj[0]).abs() <= reach && (ci[1] - cj[1]).abs() <= reach {
                return false;
            }
        }
    }
    true
}

/// Loads an image, choosing the format from the file's leading bytes: `P2` or
/// `P5` selects PGM, anything else the whitespace matrix format.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P2") {
        return parse_pgm(&bytes);
    }
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 1,
        column: 1,
        message: format!("file is not UTF-8 text: {e}"),
    })?;
    parse_matrix(&text)
}

/// Parses the matrix text format: a `rows cols` header line followed by one
/// line of whitespace-separated numbers per image row.
pub fn parse_matrix(text: &str) -> Result<Image> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        column: 1,
        message: "missing `rows cols` header".into(),
    })?;
    let dims: Vec<(usize, &str)> = tokens(header).collect();
    if dims.len() != 2 {
        return Err(Error::Parse {
            line: hline + 1,
            column: 1,
            message: "header must be `rows cols`".into(),
        });
    }
    let parse_dim = |(col, tok): (usize, &str)| {
        tok.parse::<usize>().map_err(|_| Error::Parse {
            line: hline + 1,
            column: col,
            message: format!("invalid dimension `{tok}`"),
        })
    };
    let rows = parse_dim(dims[0])?;
    let cols = parse_dim(dims[1])?;
    let mut values = Vec::with_capacity(rows * cols);
    let mut n_rows = 0;
    for (lineno, line) in lines {
        let mut n = 0;
        for (col, tok) in tokens(line) {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                column: col,
                message: format!("invalid number `{tok}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    column: col,
                    message: format!("non-finite value `{tok}`"),
                });
            }
            values.push(v);
            n += 1;
        }
        if n != cols {
            return Err(Error::Structure(format!(
                "line {} has {n} values, expected {cols}",
                lineno + 1
            )));
        }
        n_rows += 1;
    }
    if n_rows != rows {
        return Err(Error::Structure(format!(
            "header declares {rows} rows, found {n_rows}"
        )));
    }
    Image::new(cols, rows, values)
}

/// Whitespace tokens with their 1-based character columns.
fn tokens(line: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut rest = line;
    let mut offset = 0;
    std::iter::from_fn(move || {
        let trimmed = rest.trim_start();
        offset += rest.len() - trimmed.len();
        if trimmed.is_empty() {
            return None;
        }
        let end = trimmed.find(char::is_whitespace).unwrap_or(trimmed.len());
        let tok = &trimmed[..end];
        let col = line[..offset].chars().count() + 1;
        offset += end;
        rest = &trimmed[end..];
        Some((col, tok))
    })
}

/// Serializes in the matrix text format with shortest round-trip floats.
pub fn format_matrix(img: &Image) -> String {
    let mut out = format!("{} {}\n", img.height, img.width);
    for row in img.intensities.chunks(img.width) {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn save_matrix(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_matrix(img)).map_err(|e| Error::io(path, e))
}

fn parse_pgm(bytes: &[u8]) -> Result<Image> {
    let binary = bytes.starts_with(b"P5");
    // Header: magic, width, height, maxval, separated by whitespace/comments.
    let mut pos = 2;
    let mut header = Vec::with_capacity(3);
    while header.len() < 3 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        let tok = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        let v: usize = tok.parse().map_err(|_| Error::Parse {
            line: line_of(bytes, start),
            column: 1,
            message: "malformed PGM header".into(),
        })?;
        header.push(v);
    }
    let (width, height, maxval) = (header[0], header[1], header[2]);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Structure(format!("invalid PGM maxval {maxval}")));
    }
    let n = width * height;
    let mut values = Vec::with_capacity(n);
    if binary {
        pos += 1; // single whitespace after maxval
        let bpp = if maxval > 255 { 2 } else { 1 };
        let data = bytes.get(pos..).unwrap_or(&[]);
        if data.len() < n * bpp {
            return Err(Error::Structure(format!(
                "PGM raster has {} bytes, expected {}",
                data.len(),
                n * bpp
            )));
        }
        for i in 0..n {
            let v = if bpp == 2 {
                u16::from_be_bytes([data[2 * i], data[2 * i + 1]]) as f64
            } else {
                data[i] as f64
            };
            values.push(v);
        }
    } else {
        let text = std::str::from_utf8(&bytes[pos..]).map_err(|_| Error::Parse {
            line: line_of(bytes, pos),
            column: 1,
            message: "P2 raster is not ASCII".into(),
        })?;
        for tok in text.split_ascii_whitespace() {
            let v: u32 = tok.parse().map_err(|_| Error::Parse {
                line: 0,
                column: 0,
                message: format!("invalid PGM sample `{tok}`"),
            })?;
            values.push(v as f64);
        }
        if values.len() != n {
            return Err(Error::Structure(format!(
                "PGM has {} samples, expected {n}",
                values.len()
            )));
        }
    }
    Image::new(width, height, values)
}

fn line_of(bytes: &[u8], pos: usize) -> usize {
    bytes[..pos.min(bytes.len())].iter().filter(|&&b| b == b'\n').count() + 1
}
