//! 2D landmark shapes, landmark file ingestion and Procrustes alignment.
//!
//! A shape with `N/2` landmarks is stored as one interleaved vector
//! `x1, y1, x2, y2, ...` of length `N`. All alignment is planar: the optimal
//! rotation and scale of a centered configuration onto a centered reference
//! is the complex least-squares coefficient `z = Σ conj(a_k) b_k / Σ |a_k|²`,
//! which never contains a reflection.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numfmt::fmt_f64;

pub const DEFAULT_GPA_TOL: f64 = 1e-9;
pub const DEFAULT_GPA_MAX_ITER: usize = 200;

/// Centroid sizes below this are treated as a single collapsed point.
const DEGENERATE_SIZE: f64 = 1e-150;

#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    coords: DVector<f64>,
}

impl Shape {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        Self::from_vector(DVector::from_vec(coords))
    }

    pub fn from_vector(coords: DVector<f64>) -> Result<Self> {
        let n = coords.len();
        if n < 4 || n % 2 != 0 {
            return Err(Error::InvalidShape(format!(
                "coordinate count must be even and at least 4, got {n}"
            )));
        }
        if let Some(i) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidShape(format!("coordinate {i} is not finite")));
        }
        Ok(Shape { coords })
    }

    pub fn from_landmarks(points: &[(f64, f64)]) -> Result<Self> {
        Self::new(points.iter().flat_map(|&(x, y)| [x, y]).collect())
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.coords
    }

    /// Number of coordinates `N`.
    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn n_landmarks(&self) -> usize {
        self.coords.len() / 2
    }

    pub fn landmark(&self, i: usize) -> (f64, f64) {
        (self.coords[2 * i], self.coords[2 * i + 1])
    }

    pub fn landmarks(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.coords.as_slice().chunks_exact(2).map(|p| (p[0], p[1]))
    }

    pub fn centroid(&self) -> (f64, f64) {
        let k = self.n_landmarks() as f64;
        let (sx, sy) = self
            .landmarks()
            .fold((0.0, 0.0), |(ax, ay), (x, y)| (ax + x, ay + y));
        (sx / k, sy / k)
    }

    /// Square root of the summed squared landmark distances to the centroid.
    pub fn centroid_size(&self) -> f64 {
        let (cx, cy) = self.centroid();
        self.landmarks()
            .map(|(x, y)| (x - cx).powi(2) + (y - cy).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Root mean squared landmark distance.
    pub fn rmsd(&self, other: &Shape) -> f64 {
        assert_eq!(self.dim(), other.dim(), "rmsd of shapes with different N");
        ((&self.coords - &other.coords).norm_squared() / self.n_landmarks() as f64).sqrt()
    }

    pub fn transformed(&self, t: &Similarity) -> Shape {
        let (c, s) = (t.scale * t.rotation.cos(), t.scale * t.rotation.sin());
        let mut out = self.coords.clone();
        for p in out.as_mut_slice().chunks_exact_mut(2) {
            let (x, y) = (p[0], p[1]);
            p[0] = c * x - s * y + t.translation.0;
            p[1] = s * x + c * y + t.translation.1;
        }
        Shape { coords: out }
    }

    fn centered(&self) -> DVector<f64> {
        let (cx, cy) = self.centroid();
        let mut out = self.coords.clone();
        for p in out.as_mut_slice().chunks_exact_mut(2) {
            p[0] -= cx;
            p[1] -= cy;
        }
        out
    }
}

/// `x -> scale * R(rotation) * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: f64,
    pub translation: (f64, f64),
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            scale: 1.0,
            rotation: 0.0,
            translation: (0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlignMode {
    /// Translation, isotropic scale and rotation.
    #[default]
    Similarity,
    /// Translation and rotation only.
    Rigid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentReport {
    pub iterations: usize,
    pub final_change: f64,
    pub converged: bool,
}

impl AlignmentReport {
    pub fn to_key_value(&self) -> String {
        format!(
            "iterations={}\nfinal_change={}\nconverged={}\n",
            self.iterations,
            fmt_f64(self.final_change),
            self.converged
        )
    }
}

/// An ordered training set of `M >= 2` shapes sharing one coordinate count.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSet {
    shapes: Vec<Shape>,
    alignment: Option<AlignmentReport>,
}

impl ShapeSet {
    pub fn new(shapes: Vec<Shape>) -> Result<Self> {
        if shapes.len() < 2 {
            return Err(Error::TooFewSamples {
                required: 2,
                got: shapes.len(),
            });
        }
        let n = shapes[0].dim();
        if let Some((i, s)) = shapes.iter().enumerate().find(|(_, s)| s.dim() != n) {
            return Err(Error::InconsistentDimension {
                expected: n,
                found: s.dim(),
                index: i,
            });
        }
        Ok(ShapeSet {
            shapes,
            alignment: None,
        })
    }

    /// Builds a set from the columns of an `N x M` matrix.
    pub fn from_columns(data: &DMatrix<f64>) -> Result<Self> {
        let shapes = data
            .column_iter()
            .map(|c| Shape::from_vector(c.into_owned()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(shapes)
    }

    /// Marks an externally aligned set as aligned without re-running GPA.
    pub fn assume_aligned(mut self) -> Self {
        if self.alignment.is_none() {
            self.alignment = Some(AlignmentReport {
                iterations: 0,
                final_change: 0.0,
                converged: true,
            });
        }
        self
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.shapes[0].dim()
    }

    pub fn is_aligned(&self) -> bool {
        self.alignment.is_some()
    }

    pub fn alignment_report(&self) -> Option<&AlignmentReport> {
        self.alignment.as_ref()
    }

    /// `N x M` matrix with one shape per column.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.shapes.iter().map(|s| s.coords.clone()).collect::<Vec<_>>())
    }

    /// Members at `indices`, in that order. The alignment flag carries over.
    pub fn subset(&self, indices: &[usize]) -> Result<ShapeSet> {
        let shapes = indices.iter().map(|&i| self.shapes[i].clone()).collect();
        let mut out = ShapeSet::new(shapes)?;
        out.alignment = self.alignment;
        Ok(out)
    }

    pub fn mean_shape(&self) -> Shape {
        mean_shape(&self.shapes).expect("shape set is never empty")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for s in &self.shapes {
            writeln!(w, "{}", crate::numfmt::join_row(s.coords.iter().copied()))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    /// One shape per row, interleaved `x,y`, comma separated.
    CsvRows,
    /// One file per shape; lexicographic file-name order defines sample order.
    DirectoryOfFiles,
}

/// Parses comma-separated rows, skipping blank and `#` comment lines.
/// Returned row numbers are 1-based line numbers in `text`.
pub fn parse_rows(text: &str, source_name: &str) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values = line
            .split(',')
            .map(|f| {
                let f = f.trim();
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        source_name: source_name.to_string(),
                        row: lineno + 1,
                        message: format!("malformed numeric field {f:?}"),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((lineno + 1, values));
    }
    Ok(rows)
}

fn shape_from_row(values: Vec<f64>, source_name: &str, row: usize) -> Result<Shape> {
    Shape::new(values).map_err(|e| Error::Parse {
        source_name: source_name.to_string(),
        row,
        message: e.to_string(),
    })
}

pub fn load_shape_set(path: &Path, format: InputFormat) -> Result<ShapeSet> {
    let shapes = match format {
        InputFormat::CsvRows => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let name = path.display().to_string();
            let rows = parse_rows(&text, &name)?;
            check_consistent(rows.iter().map(|(row, r)| (*row, r.len())))?;
            rows.into_iter()
                .map(|(row, values)| shape_from_row(values, &name, row))
                .collect::<Result<Vec<_>>>()?
        }
        InputFormat::DirectoryOfFiles => {
            let mut files = fs::read_dir(path)
                .map_err(|e| Error::io(path, e))?
                .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
                .collect::<Result<Vec<_>>>()?;
            files.retain(|p| p.is_file());
            files.sort();
            let mut per_file = Vec::with_capacity(files.len());
            for file in &files {
                let text = fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
                let name = file.display().to_string();
                let rows = parse_rows(&text, &name)?;
                let first_row = rows.first().map_or(1, |r| r.0);
                let values: Vec<f64> = rows.into_iter().flat_map(|(_, v)| v).collect();
                per_file.push((name, first_row, values));
            }
            check_consistent(per_file.iter().enumerate().map(|(k, (_, _, v))| (k + 1, v.len())))?;
            per_file
                .into_iter()
                .map(|(name, row, values)| shape_from_row(values, &name, row))
                .collect::<Result<Vec<_>>>()?
        }
    };
    ShapeSet::new(shapes)
}

/// `lens` yields `(row label, length)`.
fn check_consistent(mut lens: impl Iterator<Item = (usize, usize)>) -> Result<()> {
    let Some((_, first)) = lens.next() else {
        return Ok(());
    };
    for (row, n) in lens {
        if n != first {
            return Err(Error::InconsistentDimension {
                expected: first,
                found: n,
                index: row,
            });
        }
    }
    Ok(())
}

/// Coordinate-wise arithmetic mean.
pub fn mean_shape(shapes: &[Shape]) -> Result<Shape> {
    let first = shapes.first().ok_or(Error::TooFewSamples {
        required: 1,
        got: 0,
    })?;
    let mut acc = DVector::zeros(first.dim());
    for (i, s) in shapes.iter().enumerate() {
        if s.dim() != first.dim() {
            return Err(Error::InconsistentDimension {
                expected: first.dim(),
                found: s.dim(),
                index: i,
            });
        }
        acc += &s.coords;
    }
    acc /= shapes.len() as f64;
    Ok(Shape { coords: acc })
}

/// Complex coefficient `z` with `z * a ≈ b` for centered interleaved vectors.
fn complex_fit(a: &DVector<f64>, b: &DVector<f64>) -> (f64, f64, f64) {
    let (mut re, mut im, mut norm) = (0.0, 0.0, 0.0);
    for (p, q) in a.as_slice().chunks_exact(2).zip(b.as_slice().chunks_exact(2)) {
        // conj(a) * b
        re += p[0] * q[0] + p[1] * q[1];
        im += p[0] * q[1] - p[1] * q[0];
        norm += p[0] * p[0] + p[1] * p[1];
    }
    (re, im, norm)
}

fn rotate_scale(v: &DVector<f64>, c: f64, s: f64, shift: (f64, f64)) -> DVector<f64> {
    let mut out = v.clone();
    for p in out.as_mut_slice().chunks_exact_mut(2) {
        let (x, y) = (p[0], p[1]);
        p[0] = c * x - s * y + shift.0;
        p[1] = s * x + c * y + shift.1;
    }
    out
}

/// Least-squares similarity fit of `shape` onto `reference`.
pub fn align_pair(shape: &Shape, reference: &Shape) -> Result<Shape> {
    align_pair_with(shape, reference, AlignMode::Similarity)
}

pub fn align_pair_with(shape: &Shape, reference: &Shape, mode: AlignMode) -> Result<Shape> {
    if shape.dim() != reference.dim() {
        return Err(Error::InconsistentDimension {
            expected: reference.dim(),
            found: shape.dim(),
            index: 0,
        });
    }
    let a = shape.centered();
    let b = reference.centered();
    let (re, im, norm) = complex_fit(&a, &b);
    if norm.sqrt() < DEGENERATE_SIZE {
        return Err(Error::DegenerateShape(0));
    }
    let (c, s) = match mode {
        AlignMode::Similarity => (re / norm, im / norm),
        AlignMode::Rigid => {
            let r = re.hypot(im);
            if r == 0.0 {
                (1.0, 0.0)
            } else {
                (re / r, im / r)
            }
        }
    };
    Ok(Shape {
        coords: rotate_scale(&a, c, s, reference.centroid()),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct GpaOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub mode: AlignMode,
}

impl Default for GpaOptions {
    fn default() -> Self {
        GpaOptions {
            tol: DEFAULT_GPA_TOL,
            max_iter: DEFAULT_GPA_MAX_ITER,
            mode: AlignMode::Similarity,
        }
    }
}

/// Generalized Procrustes alignment with full similarity transforms.
pub fn generalized_procrustes(set: &ShapeSet, tol: f64, max_iter: usize) -> Result<ShapeSet> {
    generalized_procrustes_with(
        set,
        &GpaOptions {
            tol,
            max_iter,
            mode: AlignMode::Similarity,
        },
    )
}

/// Aligns every shape to an evolving mean until the mean moves less than
/// `tol` (Euclidean norm over all coordinates).
///
/// The mean is kept centered, rotated onto the first shape's orientation and
/// (in similarity mode) rescaled to unit centroid size after every pass, so
/// re-aligning an aligned set is a fixed point.
pub fn generalized_procrustes_with(set: &ShapeSet, opts: &GpaOptions) -> Result<ShapeSet> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidConfig(format!("GPA tol must be > 0, got {}", opts.tol)));
    }
    for (i, s) in set.shapes.iter().enumerate() {
        if s.centroid_size() < DEGENERATE_SIZE {
            return Err(Error::DegenerateShape(i));
        }
    }

    let normalize = |v: DVector<f64>| -> DVector<f64> {
        match opts.mode {
            AlignMode::Similarity => {
                let n = v.norm();
                v / n
            }
            AlignMode::Rigid => v,
        }
    };
    let orientation = normalize(set.shapes[0].centered());
    let mut mean = Shape {
        coords: orientation.clone(),
    };

    let align_all = |reference: &Shape| -> Result<Vec<Shape>> {
        set.shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                align_pair_with(s, reference, opts.mode).map_err(|e| match e {
                    Error::DegenerateShape(_) => Error::DegenerateShape(i),
                    other => other,
                })
            })
            .collect()
    };

    let mut iterations = 0;
    let mut change = f64::INFINITY;
    while iterations < opts.max_iter {
        iterations += 1;
        let aligned = align_all(&mean)?;
        let raw = mean_shape(&aligned)?.centered();
        if raw.norm() < DEGENERATE_SIZE {
            return Err(Error::DegenerateShape(0));
        }
        let (re, im, _) = complex_fit(&raw, &orientation);
        let r = re.hypot(im);
        let (c, s) = if r == 0.0 { (1.0, 0.0) } else { (re / r, im / r) };
        let next = normalize(rotate_scale(&raw, c, s, (0.0, 0.0)));
        change = (&next - &mean.coords).norm();
        mean = Shape { coords: next };
        if change < opts.tol {
            break;
        }
    }

    let shapes = align_all(&mean)?;
    Ok(ShapeSet {
        shapes,
        alignment: Some(AlignmentReport {
            iterations,
            final_change: change,
            converged: change < opts.tol,
        }),
    })
}

/// Renders shapes as `x,y` landmark rows, one block per shape.
pub fn landmark_table(shape: &Shape) -> String {
    let mut out = String::from("landmark,x,y\n");
    for (i, (x, y)) in shape.landmarks().enumerate() {
        let _ = writeln!(out, "{},{},{}", i, fmt_f64(x), fmt_f64(y));
    }
    out
}
