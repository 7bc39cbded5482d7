//! Dataset files: comma-separated `±1` matrices and MNIST IDX ingestion.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Dataset, FeatureVector};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Default binarization threshold: a pixel maps to `+1` iff it exceeds 127.
pub const DEFAULT_MNIST_THRESHOLD: u8 = 127;

fn parse_spin(field: &str) -> Option<i8> {
    match field.trim() {
        "1" | "+1" => Some(1),
        "-1" => Some(-1),
        _ => None,
    }
}

/// Reads an `M x N` matrix of `+1`/`-1`/`1` entries, one sample per line.
pub fn load_dataset_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut n_visible = 0;
    let mut samples = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Parse {
            path: path.into(),
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if row == 1 {
            n_visible = record.len();
        } else if record.len() != n_visible {
            return Err(Error::Parse {
                path: path.into(),
                row,
                column: record.len().min(n_visible) + 1,
                message: format!("expected {n_visible} entries, found {}", record.len()),
            });
        }
        for (c, field) in record.iter().enumerate() {
            let spin = parse_spin(field).ok_or_else(|| Error::Parse {
                path: path.into(),
                row,
                column: c + 1,
                message: format!("entry {field:?} is not +1 or -1"),
            })?;
            samples.push(spin);
        }
    }
    if samples.is_empty() {
        return Err(Error::invalid(format!("{}: empty dataset file", path.display())));
    }
    Dataset::from_rows(n_visible, samples)
}

/// Writes one sample per line as `+1`/`-1` entries.
pub fn save_dataset_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    for row in dataset.rows() {
        writer
            .write_record(row.iter().map(|&s| if s > 0 { "+1" } else { "-1" }))
            .map_err(|e| Error::io(path, e.into()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Writes a feature vector as a `width`-column grid of `+1`/`-1`
/// (28 columns for MNIST-sized features).
pub fn write_feature_map(xi: &FeatureVector, width: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if width == 0 || xi.len() % width != 0 {
        return Err(Error::invalid(format!(
            "feature of length {} cannot be laid out {width} wide",
            xi.len()
        )));
    }
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for row in xi.as_slice().chunks(width) {
        let line: Vec<&str> = row.iter().map(|&s| if s > 0 { "+1" } else { "-1" }).collect();
        writeln!(out, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

struct IdxReader<'a> {
    path: &'a Path,
    bytes: Vec<u8>,
    pos: usize,
}

impl<'a> IdxReader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Ok(Self { path, bytes, pos: 0 })
    }

    fn format_err(&self, message: String) -> Error {
        Error::Format {
            path: self.path.into(),
            message,
        }
    }

    fn u32_be(&mut self) -> Result<u32> {
        let chunk = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| self.format_err("truncated header".into()))?;
        self.pos += 4;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4-byte slice")))
    }

    fn expect_magic(&mut self, magic: u32) -> Result<()> {
        let found = self.u32_be()?;
        if found != magic {
            return Err(self.format_err(format!("bad magic number {found:#010x}, expected {magic:#010x}")));
        }
        Ok(())
    }

    fn payload(&self, len: usize) -> Result<&[u8]> {
        self.bytes.get(self.pos..self.pos + len).ok_or_else(|| {
            self.format_err(format!(
                "truncated file: need {len} payload bytes, have {}",
                self.bytes.len() - self.pos
            ))
        })
    }
}

/// Loads MNIST images whose label is in `digits` (at most `limit` of them, in
/// file order) and binarizes each pixel: `> threshold -> +1`, otherwise `-1`.
pub fn import_mnist_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    digits: &BTreeSet<u8>,
    limit: usize,
    threshold: u8,
) -> Result<Dataset> {
    let mut images = IdxReader::open(images_path.as_ref())?;
    images.expect_magic(IDX_IMAGES_MAGIC)?;
    let n_images = images.u32_be()? as usize;
    let rows = images.u32_be()? as usize;
    let cols = images.u32_be()? as usize;
    let pixels = rows * cols;
    if pixels == 0 {
        return Err(images.format_err("zero-sized images".into()));
    }

    let mut labels = IdxReader::open(labels_path.as_ref())?;
    labels.expect_magic(IDX_LABELS_MAGIC)?;
    let n_labels = labels.u32_be()? as usize;
    if n_labels != n_images {
        return Err(labels.format_err(format!("label count {n_labels} does not match image count {n_images}")));
    }
    let label_bytes = labels.payload(n_labels)?;
    let pixel_bytes = images.payload(n_images * pixels)?;

    let mut samples = Vec::new();
    let mut kept = 0;
    for (image, label) in pixel_bytes.chunks_exact(pixels).zip(label_bytes) {
        if kept == limit {
            break;
        }
        if digits.contains(label) {
            samples.extend(image.iter().map(|&p| if p > threshold { 1i8 } else { -1 }));
            kept += 1;
        }
    }
    if kept == 0 {
        return Err(Error::invalid("no image matched the requested digits"));
    }
    Dataset::from_rows(pixels, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_idx(dir: &Path, images: &[[u8; 4]], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("img.idx");
        let lp = dir.join("lbl.idx");
        let mut ib = Vec::new();
        ib.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        ib.extend_from_slice(&(images.len() as u32).to_be_bytes());
        ib.extend_from_slice(&2u32.to_be_bytes());
        ib.extend_from_slice(&2u32.to_be_bytes());
        for im in images {
            ib.extend_from_slice(im);
        }
        std::fs::write(&ip, ib).unwrap();
        let mut lb = Vec::new();
        lb.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lb.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        lb.extend_from_slice(labels);
        std::fs::write(&lp, lb).unwrap();
        (ip, lp)
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let d = Dataset::from_rows(3, vec![1, -1, 1, -1, -1, 1]).unwrap();
        save_dataset_csv(&d, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "+1,-1,+1\n-1,-1,+1\n");
        assert_eq!(load_dataset_csv(&p).unwrap(), d);
    }

    #[test]
    fn csv_accepts_unsigned_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "1,-1\n+1,1\n").unwrap();
        assert_eq!(load_dataset_csv(&p).unwrap().as_slice(), &[1, -1, 1, 1]);
    }

    #[test]
    fn csv_rejects_bad_entry_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "1,-1,1\n1,2,-1\n").unwrap();
        match load_dataset_csv(&p) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (2, 2)),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&p, "1,-1,1\n1,-1\n").unwrap();
        assert!(matches!(load_dataset_csv(&p), Err(Error::Parse { row: 2, .. })));
    }

    #[test]
    fn csv_rejects_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "").unwrap();
        assert!(matches!(load_dataset_csv(&p), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn mnist_filtering_and_thresholds() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = [[0, 200, 0, 0], [255, 255, 0, 10], [1, 0, 0, 0], [128, 127, 0, 0]];
        let (ip, lp) = write_idx(dir.path(), &imgs, &[0, 7, 1, 0]);
        let digits: BTreeSet<u8> = [0, 1].into();
        let d = import_mnist_idx(&ip, &lp, &digits, 10, 127).unwrap();
        assert_eq!(d.n_samples(), 3);
        assert_eq!(d.n_visible(), 4);
        assert_eq!(d.sample(0), &[-1, 1, -1, -1]);
        assert_eq!(d.sample(2), &[1, -1, -1, -1]);

        let limited = import_mnist_idx(&ip, &lp, &digits, 2, 127).unwrap();
        assert_eq!(limited.n_samples(), 2);

        let saturated = import_mnist_idx(&ip, &lp, &digits, 10, 255).unwrap();
        assert!(saturated.as_slice().iter().all(|&s| s == -1));

        let zero = import_mnist_idx(&ip, &lp, &digits, 10, 0).unwrap();
        assert_eq!(zero.sample(1), &[1, -1, -1, -1]);
    }

    #[test]
    fn mnist_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx(dir.path(), &[[0; 4], [0; 4]], &[0, 1]);
        let digits: BTreeSet<u8> = [0].into();
        // swapped files: wrong magic
        assert!(matches!(
            import_mnist_idx(&lp, &ip, &digits, 5, 127),
            Err(Error::Format { .. })
        ));

        let (ip2, lp2) = write_idx(dir.path(), &[[0; 4], [0; 4]], &[0]);
        assert!(matches!(
            import_mnist_idx(&ip2, &lp2, &digits, 5, 127),
            Err(Error::Format { .. })
        ));

        let (ip3, lp3) = write_idx(dir.path(), &[[0; 4], [0; 4]], &[0, 1]);
        let mut bytes = std::fs::read(&ip3).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&ip3, bytes).unwrap();
        assert!(matches!(
            import_mnist_idx(&ip3, &lp3, &digits, 5, 127),
            Err(Error::Format { .. })
        ));
        let _ = (ip, lp);
    }
}
