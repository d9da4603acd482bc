//! Hyperspectral cube ingestion, per-class splitting and pixel extraction.
//!
//! A bundle is a directory holding three files:
//!
//! * `header.json` with integer fields `height`, `width`, `bands`, `classes`
//!   and the fixed strings `"dtype": "f64le"`, `"label_dtype": "i32le"`,
//!   `"order": "band-major"`;
//! * `data.bin`, `height * width * bands` little-endian `f64` values where
//!   band `b`, row `r`, column `c` lives at `(b * height + r) * width + c`;
//! * `labels.bin`, `height * width` little-endian `i32` values, row-major.
//!
//! Label `0` marks an unlabeled pixel; `1..=classes` are class ids.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::SplitShuffler;

const HEADER_FILE: &str = "header.json";
const DATA_FILE: &str = "data.bin";
const LABELS_FILE: &str = "labels.bin";
/// The files making up a bundle directory.
pub const BUNDLE_FILES: [&str; 3] = [HEADER_FILE, DATA_FILE, LABELS_FILE];

/// A hyperspectral data block with per-pixel ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCube {
    height: usize,
    width: usize,
    bands: usize,
    classes: usize,
    data: Vec<f64>,
    labels: Vec<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    height: usize,
    width: usize,
    bands: usize,
    classes: usize,
    dtype: String,
    label_dtype: String,
    order: String,
}

impl LabeledCube {
    /// Builds a cube from band-major `data` and row-major `labels`.
    ///
    /// `classes` is the class count `C`; every nonzero label must lie in
    /// `1..=C`.
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        classes: usize,
        data: Vec<f64>,
        labels: Vec<u32>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidExtent(format!(
                "spatial extent {height}x{width} is empty"
            )));
        }
        if bands == 0 {
            return Err(Error::InvalidExtent("bands must be at least 1".into()));
        }
        let pixels = height * width;
        if data.len() != pixels * bands {
            return Err(Error::SizeMismatch {
                field: "data",
                expected: pixels * bands * 8,
                found: data.len() * 8,
            });
        }
        if labels.len() != pixels {
            return Err(Error::SizeMismatch {
                field: "labels",
                expected: pixels * 4,
                found: labels.len() * 4,
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                field: "data",
                index,
            });
        }
        if let Some(index) = labels.iter().position(|&l| l as usize > classes) {
            return Err(Error::LabelOutOfRange {
                label: labels[index] as i64,
                index,
                classes,
            });
        }
        Ok(Self {
            height,
            width,
            bands,
            classes,
            data,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Number of classes `C`.
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    /// Band-major sample array.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Row-major label grid.
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, pixel: usize) -> u32 {
        self.labels[pixel]
    }

    /// Spectrum of the pixel at flat index `pixel = row * width + col`.
    pub fn spectrum(&self, pixel: usize) -> impl Iterator<Item = f64> + '_ {
        let plane = self.height * self.width;
        (0..self.bands).map(move |b| self.data[b * plane + pixel])
    }

    /// Labeled pixel count for each class, indexed by `class - 1`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            if l > 0 {
                counts[l as usize - 1] += 1;
            }
        }
        counts
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(buf)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a bundle directory. Values are taken verbatim, without scaling.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<LabeledCube> {
    let dir = dir.as_ref();
    let header_bytes = read_file(&dir.join(HEADER_FILE))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Header(e.to_string()))?;
    for (field, got, want) in [
        ("dtype", &header.dtype, "f64le"),
        ("label_dtype", &header.label_dtype, "i32le"),
        ("order", &header.order, "band-major"),
    ] {
        if got != want {
            return Err(Error::Header(format!(
                "field `{field}` is `{got}`, expected `{want}`"
            )));
        }
    }
    if header.bands == 0 || header.height == 0 || header.width == 0 {
        return Err(Error::InvalidExtent(format!(
            "header extent {}x{}x{}",
            header.height, header.width, header.bands
        )));
    }

    let pixels = header.height * header.width;
    let raw = read_file(&dir.join(DATA_FILE))?;
    let expected = pixels * header.bands * 8;
    if raw.len() != expected {
        return Err(Error::SizeMismatch {
            field: "data",
            expected,
            found: raw.len(),
        });
    }
    let data: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let raw = read_file(&dir.join(LABELS_FILE))?;
    if raw.len() != pixels * 4 {
        return Err(Error::SizeMismatch {
            field: "labels",
            expected: pixels * 4,
            found: raw.len(),
        });
    }
    let mut labels = Vec::with_capacity(pixels);
    for (index, c) in raw.chunks_exact(4).enumerate() {
        let l = i32::from_le_bytes(c.try_into().unwrap());
        if l < 0 || l as usize > header.classes {
            return Err(Error::LabelOutOfRange {
                label: l as i64,
                index,
                classes: header.classes,
            });
        }
        labels.push(l as u32);
    }

    LabeledCube::new(
        header.height,
        header.width,
        header.bands,
        header.classes,
        data,
        labels,
    )
}

/// Writes `cube` as a bundle directory, creating it if needed.
pub fn save_bundle(cube: &LabeledCube, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let header = Header {
        height: cube.height,
        width: cube.width,
        bands: cube.bands,
        classes: cube.classes,
        dtype: "f64le".into(),
        label_dtype: "i32le".into(),
        order: "band-major".into(),
    };
    write_file(
        &dir.join(HEADER_FILE),
        serde_json::to_string_pretty(&header)?.as_bytes(),
    )?;

    let mut bytes = Vec::with_capacity(cube.data.len() * 8);
    for v in &cube.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_file(&dir.join(DATA_FILE), &bytes)?;

    let mut bytes = Vec::with_capacity(cube.labels.len() * 4);
    for &l in &cube.labels {
        bytes.extend_from_slice(&(l as i32).to_le_bytes());
    }
    write_file(&dir.join(LABELS_FILE), &bytes)
}

/// Parses the small-matrix CSV format: one pixel per row, bands as columns,
/// the final column an integer label. The result is a `rows x 1` cube unless
/// `width` is given, in which case the row count must be a multiple of it.
pub fn read_csv<R: Read>(reader: R, width: Option<usize>) -> Result<LabeledCube> {
    let mut spectra: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Csv {
            line: line_no,
            reason: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::Csv {
                line: line_no,
                reason: "need at least one band and a label".into(),
            });
        }
        let (label, bands) = fields.split_last().unwrap();
        // A leading header row is tolerated.
        if spectra.is_empty() && labels.is_empty() && label.parse::<i64>().is_err() {
            if bands.iter().all(|f| f.parse::<f64>().is_err()) {
                continue;
            }
        }
        let label: i64 = label.parse().map_err(|_| Error::Csv {
            line: line_no,
            reason: format!("label `{label}` is not an integer"),
        })?;
        if label < 0 {
            return Err(Error::Csv {
                line: line_no,
                reason: format!("negative label {label}"),
            });
        }
        let row = bands
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Csv {
                    line: line_no,
                    reason: format!("value `{f}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = spectra.first() {
            if first.len() != row.len() {
                return Err(Error::Csv {
                    line: line_no,
                    reason: format!("expected {} bands, found {}", first.len(), row.len()),
                });
            }
        }
        spectra.push(row);
        labels.push(label as u32);
    }
    if spectra.is_empty() {
        return Err(Error::Empty("csv contains no pixels"));
    }
    let pixels = spectra.len();
    let width = width.unwrap_or(1);
    if width == 0 || pixels % width != 0 {
        return Err(Error::InvalidExtent(format!(
            "{pixels} rows do not tile a grid of width {width}"
        )));
    }
    let height = pixels / width;
    let bands = spectra[0].len();
    let mut data = vec![0.0; pixels * bands];
    for (p, s) in spectra.iter().enumerate() {
        for (b, &v) in s.iter().enumerate() {
            data[b * pixels + p] = v;
        }
    }
    let classes = labels.iter().copied().max().unwrap_or(0) as usize;
    LabeledCube::new(height, width, bands, classes, data, labels)
}

/// Per-class disjoint dictionary/train/test pixel lists.
///
/// Each outer vector is indexed by `class - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub dictionary_ids: Vec<Vec<usize>>,
    pub train_ids: Vec<Vec<usize>>,
    pub test_ids: Vec<Vec<usize>>,
    pub seed: u64,
}

impl Split {
    pub fn dictionary(&self) -> Vec<usize> {
        self.dictionary_ids.concat()
    }

    pub fn train(&self) -> Vec<usize> {
        self.train_ids.concat()
    }

    pub fn test(&self) -> Vec<usize> {
        self.test_ids.concat()
    }
}

/// Split sizes for one class of `n` labeled pixels.
///
/// The dictionary takes `round(dict_frac * n)` pixels (at least one), the
/// training set `round(train_frac * rest)` of the remainder.
pub fn split_sizes(n: usize, dict_frac: f64, train_frac: f64) -> (usize, usize, usize) {
    let dict = ((dict_frac * n as f64).round() as usize).clamp(1, n);
    let rest = n - dict;
    let train = ((train_frac * rest as f64).round() as usize).min(rest);
    (dict, train, rest - train)
}

/// Draws a reproducible per-class split.
///
/// Classes are visited in ascending order; within a class the labeled pixels
/// are listed by ascending flat index, shuffled by one SplitMix64 stream
/// seeded with `seed`, then cut into dictionary, train and test in that
/// order.
pub fn make_split(cube: &LabeledCube, dict_frac: f64, train_frac: f64, seed: u64) -> Result<Split> {
    if !(dict_frac > 0.0 && dict_frac < 1.0) {
        return Err(invalid("dict_frac", format!("{dict_frac} not in (0, 1)")));
    }
    if !(0.0..1.0).contains(&train_frac) {
        return Err(invalid("train_frac", format!("{train_frac} not in [0, 1)")));
    }
    split_by(cube, seed, |_, n| Ok(split_sizes(n, dict_frac, train_frac)))
}

/// Like [`make_split`] but with explicit `(dictionary, train)` counts per
/// class; every remaining pixel goes to test.
pub fn make_split_counts(cube: &LabeledCube, counts: &[(usize, usize)], seed: u64) -> Result<Split> {
    if counts.len() != cube.classes {
        return Err(Error::Dimension(format!(
            "{} split counts for {} classes",
            counts.len(),
            cube.classes
        )));
    }
    split_by(cube, seed, |c, n| {
        let (dict, train) = counts[c];
        if dict == 0 || dict + train > n {
            return Err(invalid(
                "counts",
                format!("class {} has {n} pixels, asked for {dict} + {train}", c + 1),
            ));
        }
        Ok((dict, train, n - dict - train))
    })
}

fn split_by(
    cube: &LabeledCube,
    seed: u64,
    sizes: impl Fn(usize, usize) -> Result<(usize, usize, usize)>,
) -> Result<Split> {
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); cube.classes];
    for (p, &l) in cube.labels.iter().enumerate() {
        if l > 0 {
            per_class[l as usize - 1].push(p);
        }
    }
    if let Some(c) = per_class.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass(c + 1));
    }

    let mut shuffler = SplitShuffler::new(seed);
    let mut split = Split {
        dictionary_ids: Vec::with_capacity(cube.classes),
        train_ids: Vec::with_capacity(cube.classes),
        test_ids: Vec::with_capacity(cube.classes),
        seed,
    };
    for (c, mut ids) in per_class.into_iter().enumerate() {
        shuffler.shuffle(&mut ids);
        let (dict, train, _) = sizes(c, ids.len())?;
        let test = ids.split_off(dict + train);
        let train = ids.split_off(dict);
        split.dictionary_ids.push(ids);
        split.train_ids.push(train);
        split.test_ids.push(test);
    }
    Ok(split)
}

/// Gathers the spectra of `ids` as the columns of an `L x n` matrix, with
/// their labels. With `normalize` set each column is scaled to unit norm.
pub fn extract_pixels(
    cube: &LabeledCube,
    ids: &[usize],
    normalize: bool,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let mut out = DMatrix::zeros(cube.bands, ids.len());
    let mut labels = Vec::with_capacity(ids.len());
    for (j, &id) in ids.iter().enumerate() {
        if id >= cube.pixel_count() {
            return Err(Error::PixelOutOfRange {
                index: id,
                len: cube.pixel_count(),
            });
        }
        let label = cube.labels[id];
        if label == 0 {
            return Err(Error::Unlabeled(id));
        }
        let mut col = out.column_mut(j);
        for (dst, v) in col.iter_mut().zip(cube.spectrum(id)) {
            *dst = v;
        }
        if normalize {
            let norm = col.norm();
            if norm == 0.0 {
                return Err(Error::ZeroNorm(id));
            }
            col /= norm;
        }
        labels.push(label as usize);
    }
    Ok((out, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_class_cube(n: usize) -> LabeledCube {
        LabeledCube::new(1, n, 1, 1, (1..=n).map(|v| v as f64).collect(), vec![1; n]).unwrap()
    }

    #[test]
    fn zero_cube_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cube = LabeledCube::new(2, 2, 3, 2, vec![0.0; 12], vec![0, 1, 2, 1]).unwrap();
        save_bundle(&cube, dir.path()).unwrap();
        let back = load_bundle(dir.path()).unwrap();
        assert_eq!(back.data(), &[0.0; 12]);
        assert_eq!(back.labels(), &[0, 1, 2, 1]);
    }

    #[test]
    fn short_data_file_is_a_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let cube = LabeledCube::new(2, 2, 3, 1, vec![1.0; 12], vec![1; 4]).unwrap();
        save_bundle(&cube, dir.path()).unwrap();
        let path = dir.path().join(DATA_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, bytes).unwrap();
        match load_bundle(dir.path()) {
            Err(Error::SizeMismatch { field: "data", expected: 96, found: 95 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_and_non_finite_inputs() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(Error::MissingFile(_))));

        let cube = LabeledCube::new(1, 2, 1, 1, vec![1.0, 2.0], vec![1, 1]).unwrap();
        save_bundle(&cube, dir.path()).unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&1.0f64.to_le_bytes());
        bytes.extend_from_slice(&f64::NAN.to_le_bytes());
        fs::write(dir.path().join(DATA_FILE), bytes).unwrap();
        assert!(matches!(
            load_bundle(dir.path()),
            Err(Error::NonFinite { field: "data", index: 1 })
        ));

        fs::remove_file(dir.path().join(LABELS_FILE)).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(Error::MissingFile(_))));
    }

    #[test]
    fn label_above_class_count_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cube = LabeledCube::new(1, 2, 1, 2, vec![1.0, 2.0], vec![1, 2]).unwrap();
        save_bundle(&cube, dir.path()).unwrap();
        fs::write(
            dir.path().join(LABELS_FILE),
            [1i32, 3].iter().flat_map(|l| l.to_le_bytes()).collect::<Vec<_>>(),
        )
        .unwrap();
        assert!(matches!(
            load_bundle(dir.path()),
            Err(Error::LabelOutOfRange { label: 3, index: 1, .. })
        ));
    }

    #[test]
    fn zero_band_cube_is_rejected() {
        assert!(matches!(
            LabeledCube::new(1, 1, 0, 1, vec![], vec![1]),
            Err(Error::InvalidExtent(_))
        ));
    }

    #[test]
    fn single_element_encoding() {
        let dir = tempfile::tempdir().unwrap();
        let cube = LabeledCube::new(1, 1, 1, 1, vec![7.5], vec![1]).unwrap();
        save_bundle(&cube, dir.path()).unwrap();
        let bytes = fs::read(dir.path().join(DATA_FILE)).unwrap();
        assert_eq!(bytes, 7.5f64.to_le_bytes());
        assert_eq!(fs::read(dir.path().join(LABELS_FILE)).unwrap(), 1i32.to_le_bytes());
    }

    #[test]
    fn band_major_layout() {
        // 1 row, 2 columns, 2 bands: pixel 0 = (1, 3), pixel 1 = (2, 4).
        let cube = LabeledCube::new(1, 2, 2, 1, vec![1.0, 2.0, 3.0, 4.0], vec![1, 1]).unwrap();
        assert_eq!(cube.spectrum(0).collect::<Vec<_>>(), vec![1.0, 3.0]);
        assert_eq!(cube.spectrum(1).collect::<Vec<_>>(), vec![2.0, 4.0]);
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(split_sizes(100, 0.01, 0.1), (1, 10, 89));
        let split = make_split(&one_class_cube(100), 0.01, 0.1, 3).unwrap();
        assert_eq!(split.dictionary_ids[0].len(), 1);
        assert_eq!(split.train_ids[0].len(), 10);
        assert_eq!(split.test_ids[0].len(), 89);
    }

    #[test]
    fn pavia_shadows_counts() {
        assert_eq!(split_sizes(947, 0.01, 189.0 / 938.0), (9, 189, 749));
    }

    #[test]
    fn pavia_dictionary_column() {
        // Labeled pixel counts of the nine Pavia University classes and the
        // dictionary sizes they produce at 1%.
        let counts = [6631, 18649, 2099, 3064, 1345, 5029, 1330, 3682, 947];
        let dict: Vec<usize> = counts.iter().map(|&n| split_sizes(n, 0.01, 0.0).0).collect();
        assert_eq!(dict, vec![66, 186, 21, 31, 13, 50, 13, 37, 9]);
        assert_eq!(dict.iter().sum::<usize>(), 426);
    }

    #[test]
    fn explicit_counts() {
        let cube = one_class_cube(50);
        let split = make_split_counts(&cube, &[(3, 7)], 5).unwrap();
        assert_eq!(
            (split.dictionary_ids[0].len(), split.train_ids[0].len(), split.test_ids[0].len()),
            (3, 7, 40)
        );
        // Same seed and the same per-class cut as the fractional rule.
        assert_eq!(split, make_split(&cube, 0.06, 7.0 / 47.0, 5).unwrap());
        assert!(make_split_counts(&cube, &[(0, 7)], 5).is_err());
        assert!(make_split_counts(&cube, &[(30, 30)], 5).is_err());
        assert!(make_split_counts(&cube, &[(1, 1), (1, 1)], 5).is_err());
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let cube = one_class_cube(200);
        let a = make_split(&cube, 0.05, 0.2, 11).unwrap();
        assert_eq!(a, make_split(&cube, 0.05, 0.2, 11).unwrap());
        assert_ne!(a, make_split(&cube, 0.05, 0.2, 12).unwrap());
    }

    #[test]
    fn empty_class_is_named() {
        let cube = LabeledCube::new(1, 2, 1, 3, vec![1.0, 1.0], vec![1, 3]).unwrap();
        assert!(matches!(make_split(&cube, 0.1, 0.1, 0), Err(Error::EmptyClass(2))));
    }

    #[test]
    fn extract_normalizes_three_four_five() {
        let cube = LabeledCube::new(1, 2, 2, 1, vec![3.0, 0.0, 4.0, 0.0], vec![1, 1]).unwrap();
        let (m, labels) = extract_pixels(&cube, &[0], true).unwrap();
        assert_eq!(m.column(0).as_slice(), &[0.6, 0.8]);
        assert_eq!(labels, vec![1]);
        let (raw, _) = extract_pixels(&cube, &[0], false).unwrap();
        assert_eq!(raw.column(0).as_slice(), &[3.0, 4.0]);
        assert!(matches!(extract_pixels(&cube, &[1], true), Err(Error::ZeroNorm(1))));
        assert!(matches!(
            extract_pixels(&cube, &[2], false),
            Err(Error::PixelOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn csv_import() {
        let text = "b1,b2,label\n1.0,2.0,1\n3.0,4.0,2\n";
        let cube = read_csv(text.as_bytes(), None).unwrap();
        assert_eq!((cube.height(), cube.width(), cube.bands(), cube.classes()), (2, 1, 2, 2));
        assert_eq!(cube.spectrum(1).collect::<Vec<_>>(), vec![3.0, 4.0]);
        assert!(read_csv("1.0,2.0,x\n".as_bytes(), None).is_err());
        assert!(read_csv("1.0,2.0,1\n1.0,1\n".as_bytes(), None).is_err());
    }

    fn arb_cube() -> impl Strategy<Value = LabeledCube> {
        (1usize..5, 1usize..6, 1usize..7, 1usize..5).prop_flat_map(|(h, w, b, c)| {
            (
                proptest::collection::vec(-1e6f64..1e6, h * w * b),
                proptest::collection::vec(0u32..=c as u32, h * w),
            )
                .prop_map(move |(data, labels)| LabeledCube::new(h, w, b, c, data, labels).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn bundle_round_trip_is_bit_exact(cube in arb_cube()) {
            let dir = tempfile::tempdir().unwrap();
            save_bundle(&cube, dir.path()).unwrap();
            let back = load_bundle(dir.path()).unwrap();
            let bits = |c: &LabeledCube| c.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&cube));
            prop_assert_eq!(back, cube);
        }

        #[test]
        fn split_partitions_every_class(
            labels in proptest::collection::vec(1u32..=3, 30..120),
            dict_frac in 0.01f64..0.5,
            train_frac in 0.0f64..0.9,
            seed in any::<u64>(),
        ) {
            let n = labels.len();
            let mut labels = labels;
            labels[0] = 1; labels[1] = 2; labels[2] = 3;
            let cube = LabeledCube::new(1, n, 1, 3, vec![1.0; n], labels).unwrap();
            let split = make_split(&cube, dict_frac, train_frac, seed).unwrap();
            let counts = cube.class_counts();
            for c in 0..3 {
                let mut all: Vec<usize> = split.dictionary_ids[c].iter()
                    .chain(&split.train_ids[c]).chain(&split.test_ids[c]).copied().collect();
                prop_assert!(!split.dictionary_ids[c].is_empty());
                prop_assert_eq!(all.len(), counts[c]);
                all.sort_unstable();
                all.dedup();
                prop_assert_eq!(all.len(), counts[c]);
                prop_assert!(all.iter().all(|&p| cube.label(p) as usize == c + 1));
            }
        }

        #[test]
        fn normalized_columns_have_unit_norm(cube in arb_cube()) {
            let ids: Vec<usize> = (0..cube.pixel_count())
                .filter(|&p| cube.label(p) > 0 && cube.spectrum(p).any(|v| v != 0.0))
                .collect();
            let (m, _) = extract_pixels(&cube, &ids, true).unwrap();
            for col in m.column_iter() {
                prop_assert!((col.norm() - 1.0).abs() <= 1e-12);
            }
        }
    }
}
