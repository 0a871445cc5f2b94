//! Segmentation metrics: Dice index, exact Hausdorff distance, class means,
//! and the trailing-window mean used to turn a validation curve into a reward.
//!
//! Hausdorff distances are computed from an exact Euclidean distance transform
//! (lower envelope of parabolas, one pass per axis), so the cost is linear in
//! the number of pixels rather than quadratic in the set sizes.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::par;

/// Row-major 2D label image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    class_count: u32,
    labels: Vec<u8>,
    /// Physical size of one pixel along x and y (mm/pixel). Defaults to 1.
    spacing: [f64; 2],
}

impl LabelMask {
    pub fn new(width: usize, height: usize, class_count: u32, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Shape(format!(
                "mask {width}x{height} needs {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        if class_count == 0 || class_count > 256 {
            return Err(Error::Shape(format!(
                "class count {class_count} outside [1, 256]"
            )));
        }
        if let Some((i, &c)) = labels
            .iter()
            .enumerate()
            .find(|(_, &c)| u32::from(c) >= class_count)
        {
            return Err(Error::Shape(format!(
                "label {c} at pixel {i} outside [0, {class_count})"
            )));
        }
        Ok(LabelMask {
            width,
            height,
            class_count,
            labels,
            spacing: [1.0, 1.0],
        })
    }

    /// Builds a mask with class 1 at the listed `(x, y)` pixels, 0 elsewhere.
    pub fn from_points(width: usize, height: usize, points: &[(usize, usize)]) -> Result<Self> {
        let mut labels = vec![0u8; width * height];
        for &(x, y) in points {
            if x >= width || y >= height {
                return Err(Error::Shape(format!(
                    "point ({x}, {y}) outside {width}x{height}"
                )));
            }
            labels[y * width + x] = 1;
        }
        Self::new(width, height, 2, labels)
    }

    pub fn with_spacing(mut self, sx: f64, sy: f64) -> Result<Self> {
        if !(sx.is_finite() && sy.is_finite() && sx > 0.0 && sy > 0.0) {
            return Err(Error::Shape(format!("invalid pixel spacing ({sx}, {sy})")));
        }
        self.spacing = [sx, sy];
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn class_count(&self) -> u32 {
        self.class_count
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn class_pixels(&self, class_id: u8) -> usize {
        self.labels.iter().filter(|&&c| c == class_id).count()
    }

    /// Reads a mask from either a binary PGM (`P5`) file or the raw `GPMASK`
    /// format: a `GPMASK` line, a `W H C` line, then `W*H` label bytes.
    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(format!("reading mask {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut header = HeaderReader { bytes, pos: 0 };
        match header.token()? {
            "P5" => {
                let width = header.number("width")?;
                let height = header.number("height")?;
                let maxval = header.number("maxval")?;
                if maxval == 0 || maxval > 255 {
                    return Err(Error::Format(format!("PGM maxval {maxval} unsupported")));
                }
                let body = header.body(width * height)?;
                Self::new(width, height, maxval as u32 + 1, body.to_vec())
            }
            "GPMASK" => {
                let width = header.number("width")?;
                let height = header.number("height")?;
                let classes = header.number("class count")?;
                let body = header.body(width * height)?;
                Self::new(width, height, classes as u32, body.to_vec())
            }
            other => Err(Error::Format(format!(
                "unknown mask magic `{other}` (expected P5 or GPMASK)"
            ))),
        }
    }

    /// Serializes in the raw `GPMASK` format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!(
            "GPMASK\n{} {} {}\n",
            self.width, self.height, self.class_count
        )
        .into_bytes();
        out.extend_from_slice(&self.labels);
        out
    }

    fn indicator(&self, class_id: u8) -> Vec<bool> {
        self.labels.iter().map(|&c| c == class_id).collect()
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&'a str> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format(format!(
                "truncated mask header at byte {start}"
            )));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::Format(format!("non-ASCII mask header at byte {start}")))
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| Error::Format(format!("bad {what} `{tok}` in mask header near byte {at}")))
    }

    /// Exactly one whitespace byte separates the header from the payload.
    fn body(&mut self, len: usize) -> Result<&'a [u8]> {
        let start = self.pos + 1;
        let end = start + len;
        if end != self.bytes.len() {
            return Err(Error::Format(format!(
                "mask payload has {} bytes, header implies {len}",
                self.bytes.len().saturating_sub(start)
            )));
        }
        Ok(&self.bytes[start..end])
    }
}

fn check_same_shape(a: &LabelMask, b: &LabelMask) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Shape(format!(
            "mask sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Dice index `2|A∩B| / (|A|+|B|)` for one class. Two empty sets score 1.
pub fn dice(a: &LabelMask, b: &LabelMask, class_id: u8) -> Result<f64> {
    check_same_shape(a, b)?;
    let (mut both, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.labels.iter().zip(&b.labels) {
        let (ia, ib) = (x == class_id, y == class_id);
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Unweighted mean of per-class Dice.
pub fn mean_class_dice(a: &LabelMask, b: &LabelMask, class_ids: &[u8]) -> Result<f64> {
    if class_ids.is_empty() {
        return Err(Error::Shape("empty class list".into()));
    }
    let mut total = 0.0;
    for &c in class_ids {
        total += dice(a, b, c)?;
    }
    Ok(total / class_ids.len() as f64)
}

/// Exact symmetric Hausdorff distance between the `class_id` pixel sets, in
/// spacing units (pixels when no spacing was set).
pub fn hausdorff(a: &LabelMask, b: &LabelMask, class_id: u8) -> Result<f64> {
    check_same_shape(a, b)?;
    if a.spacing != b.spacing {
        return Err(Error::Shape(format!(
            "pixel spacing differs: {:?} vs {:?}",
            a.spacing, b.spacing
        )));
    }
    let set_a = a.indicator(class_id);
    let set_b = b.indicator(class_id);
    if !set_a.iter().any(|&v| v) || !set_b.iter().any(|&v| v) {
        return Err(Error::UndefinedDistance(format!(
            "class {class_id} is empty in {}",
            match (set_a.contains(&true), set_b.contains(&true)) {
                (false, false) => "both masks",
                (false, true) => "the first mask",
                _ => "the second mask",
            }
        )));
    }
    let [sx, sy] = a.spacing;
    let to_b = squared_distance_transform(&set_b, a.width, a.height, sx, sy);
    let to_a = squared_distance_transform(&set_a, a.width, a.height, sx, sy);
    let directed = |from: &[bool], dist: &[f64]| {
        from.iter()
            .zip(dist)
            .filter(|(&inside, _)| inside)
            .map(|(_, &d)| d)
            .fold(0.0f64, f64::max)
    };
    let worst = directed(&set_a, &to_b).max(directed(&set_b, &to_a));
    Ok(worst.sqrt())
}

/// Squared Euclidean distance from every pixel to the nearest `true` pixel.
/// Pixels are unreachable (infinite) only when the set is empty.
pub fn squared_distance_transform(
    set: &[bool],
    width: usize,
    height: usize,
    sx: f64,
    sy: f64,
) -> Vec<f64> {
    debug_assert_eq!(set.len(), width * height);
    if width == 0 || height == 0 {
        return Vec::new();
    }
    // Column pass into a column-major buffer.
    let mut columns = vec![0.0f64; width * height];
    par::for_each_chunk_mut(&mut columns, height, |x, out| {
        let f: Vec<f64> = (0..height)
            .map(|y| {
                if set[y * width + x] {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        lower_envelope(&f, sy, out);
    });
    let mut dist = vec![0.0f64; width * height];
    par::for_each_chunk_mut(&mut dist, width, |y, out| {
        let f: Vec<f64> = (0..width).map(|x| columns[x * height + y]).collect();
        lower_envelope(&f, sx, out);
    });
    dist
}

/// One-dimensional squared distance transform of sampled function `f` with
/// sample positions `scale * q`.
fn lower_envelope(f: &[f64], scale: f64, out: &mut [f64]) {
    let n = f.len();
    let mut sites: Vec<usize> = Vec::with_capacity(n);
    let mut bounds: Vec<f64> = Vec::with_capacity(n);
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let pq = scale * q as f64;
        while let Some(&v) = sites.last() {
            let pv = scale * v as f64;
            let s = ((f[q] + pq * pq) - (f[v] + pv * pv)) / (2.0 * (pq - pv));
            if s <= *bounds.last().expect("bounds track sites") {
                sites.pop();
                bounds.pop();
            } else {
                sites.push(q);
                bounds.push(s);
                break;
            }
        }
        if sites.is_empty() {
            sites.push(q);
            bounds.push(f64::NEG_INFINITY);
        }
    }
    if sites.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (p, slot) in out.iter_mut().enumerate() {
        let pp = scale * p as f64;
        while k + 1 < sites.len() && bounds[k + 1] < pp {
            k += 1;
        }
        let d = pp - scale * sites[k] as f64;
        *slot = d * d + f[sites[k]];
    }
}

/// Mean of the last `k` entries of `series`.
pub fn last_k_mean(series: &[f64], k: usize) -> Result<f64> {
    if k == 0 || series.len() < k {
        return Err(Error::Shape(format!(
            "cannot average the last {k} of {} values",
            series.len()
        )));
    }
    let tail = &series[series.len() - k..];
    Ok(tail.iter().sum::<f64>() / k as f64)
}
