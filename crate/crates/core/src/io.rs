//! On-disk formats. Binary matrices and frame archives use small
//! little-endian formats with magic headers; configs, splits, and
//! training histories are JSON. Every write goes through a same-directory
//! temp file plus rename, so readers never observe a half-written file.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::mlp::{LayerParams, NetworkConfig, TrainingHistory};
use crate::pooling::{Codebook, PcaWhitenModel};
use crate::synth::{Split, SynthConfig};
use crate::types::{FrameSequence, LabelSet, Matrix, PredictionMatrix};

const MATRIX_MAGIC: &[u8; 4] = b"DIVM";
const FRAMES_MAGIC: &[u8; 4] = b"DIVF";
const FORMAT_VERSION: u32 = 1;
// Refuse matrix headers claiming more than 16G values; anything larger
// is a corrupt or hostile file, not data this tool produced.
const MAX_VALUES: u64 = 1 << 34;

fn malformed(path: &Path, detail: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn temp_path(path: &Path) -> Result<PathBuf> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::param(format!("{} has no file name", path.display())))?
        .to_string_lossy();
    let tag = TEMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    Ok(path.with_file_name(format!(".{name}.{}.{tag}.tmp", std::process::id())))
}

/// Writes via temp file + rename so the target is either absent, old, or
/// complete. The temp file is removed if writing fails.
fn atomic_write(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let tmp = temp_path(path)?;
    let result = (|| {
        let mut out = BufWriter::new(File::create(&tmp)?);
        body(&mut out)?;
        out.flush()?;
        Ok(())
    })();
    match result {
        Ok(()) => {
            fs::rename(&tmp, path)?;
            Ok(())
        }
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

/// Byte-position-tracking reader so malformed files can be reported with
/// the offset where parsing stopped making sense. `at_eof` probes by
/// reading one byte; a non-EOF probe parks the byte in `pushback` for
/// the next read.
struct Cursor<R> {
    inner: R,
    offset: u64,
    pushback: Option<u8>,
}

impl<R: Read> Cursor<R> {
    fn new(inner: R) -> Self {
        Cursor {
            inner,
            offset: 0,
            pushback: None,
        }
    }

    fn read_exact(&mut self, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
        if buf.is_empty() {
            return Ok(());
        }
        let start = self.offset - self.pushback.is_some() as u64;
        let rest = match self.pushback.take() {
            Some(b) => {
                buf[0] = b;
                &mut buf[1..]
            }
            None => buf,
        };
        match self.inner.read_exact(rest) {
            Ok(()) => {
                self.offset += rest.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(malformed(
                path,
                format!("file ends inside {what} at offset {start}"),
            )),
            Err(e) => Err(e.into()),
        }
    }

    fn read_u16(&mut self, path: &Path, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.read_exact(&mut b, path, what)?;
        Ok(u16::from_le_bytes(b))
    }

    fn read_u32(&mut self, path: &Path, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, path, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn read_u64(&mut self, path: &Path, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b, path, what)?;
        Ok(u64::from_le_bytes(b))
    }

    fn read_f32s(&mut self, count: usize, path: &Path, what: &str) -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; count * 4];
        self.read_exact(&mut bytes, path, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    /// True at end of input; does not consume anything else.
    fn at_eof(&mut self) -> Result<bool> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(true),
            _ => {
                self.offset += 1;
                self.pushback = Some(b[0]);
                Ok(false)
            }
        }
    }
}

fn check_header(cur: &mut Cursor<impl Read>, path: &Path, magic: &[u8; 4]) -> Result<()> {
    let mut got = [0u8; 4];
    cur.read_exact(&mut got, path, "magic")?;
    if &got != magic {
        return Err(malformed(
            path,
            format!(
                "bad magic at offset 0: expected {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&got)
            ),
        ));
    }
    let version = cur.read_u32(path, "version")?;
    if version != FORMAT_VERSION {
        return Err(malformed(
            path,
            format!("unsupported version {version}, expected {FORMAT_VERSION}"),
        ));
    }
    Ok(())
}

fn expect_eof(cur: &mut Cursor<impl Read>, path: &Path) -> Result<()> {
    if !cur.at_eof()? {
        return Err(malformed(
            path,
            format!("trailing bytes at offset {}", cur.offset - 1),
        ));
    }
    Ok(())
}

fn write_matrix_raw(path: &Path, rows: usize, cols: usize, values: &[f32]) -> Result<()> {
    debug_assert_eq!(values.len(), rows * cols);
    atomic_write(path, |out| {
        out.write_all(MATRIX_MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(rows as u64).to_le_bytes())?;
        out.write_all(&(cols as u64).to_le_bytes())?;
        for &v in values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    })
}

fn read_matrix_raw(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let mut cur = Cursor::new(BufReader::new(File::open(path)?));
    check_header(&mut cur, path, MATRIX_MAGIC)?;
    let rows = cur.read_u64(path, "row count")?;
    let cols = cur.read_u64(path, "column count")?;
    if rows == 0 || cols == 0 {
        return Err(malformed(path, format!("empty shape {rows}x{cols}")));
    }
    let total = rows
        .checked_mul(cols)
        .filter(|&n| n <= MAX_VALUES)
        .ok_or_else(|| malformed(path, format!("implausible shape {rows}x{cols}")))?;
    let values = cur.read_f32s(total as usize, path, "matrix values")?;
    expect_eof(&mut cur, path)?;
    Ok((rows as usize, cols as usize, values))
}

/// Writes a feature matrix as a DIVM file.
pub fn write_matrix(path: impl AsRef<Path>, matrix: &Matrix) -> Result<()> {
    write_matrix_raw(path.as_ref(), matrix.rows(), matrix.cols(), matrix.values())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let (rows, cols, values) = read_matrix_raw(path)?;
    Matrix::new(rows, cols, values).map_err(|e| malformed(path, e.to_string()))
}

/// Writes predictions as a DIVM file; readers re-validate the [0, 1]
/// range, so a file of raw features will not load as predictions.
pub fn write_predictions(path: impl AsRef<Path>, preds: &PredictionMatrix) -> Result<()> {
    write_matrix_raw(
        path.as_ref(),
        preds.num_videos(),
        preds.num_classes(),
        preds.values(),
    )
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<PredictionMatrix> {
    let path = path.as_ref();
    let (rows, cols, values) = read_matrix_raw(path)?;
    PredictionMatrix::new(rows, cols, values).map_err(|e| malformed(path, e.to_string()))
}

/// Writes frame sequences as a DIVF file: per record a u16 id length,
/// the UTF-8 id, frame count, dimension, then the frame values.
pub fn write_frames(path: impl AsRef<Path>, frames: &[FrameSequence]) -> Result<()> {
    let path = path.as_ref();
    for f in frames {
        if f.video_id().len() > u16::MAX as usize {
            return Err(Error::param(format!(
                "video id of {} bytes does not fit the format",
                f.video_id().len()
            )));
        }
        if f.num_frames() > u32::MAX as usize || f.dim() > u32::MAX as usize {
            return Err(Error::param("frame sequence too large for the format"));
        }
    }
    atomic_write(path, |out| {
        out.write_all(FRAMES_MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for f in frames {
            let id = f.video_id().as_bytes();
            out.write_all(&(id.len() as u16).to_le_bytes())?;
            out.write_all(id)?;
            out.write_all(&(f.num_frames() as u32).to_le_bytes())?;
            out.write_all(&(f.dim() as u32).to_le_bytes())?;
            for &v in f.values() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    })
}

pub fn read_frames(path: impl AsRef<Path>) -> Result<Vec<FrameSequence>> {
    let path = path.as_ref();
    let mut cur = Cursor::new(BufReader::new(File::open(path)?));
    check_header(&mut cur, path, FRAMES_MAGIC)?;
    let mut frames = Vec::new();
    loop {
        if cur.at_eof()? {
            break;
        }
        let record_start = cur.offset - 1;
        let id_len = cur.read_u16(path, "record id length")? as usize;
        let mut id_bytes = vec![0u8; id_len];
        cur.read_exact(&mut id_bytes, path, "record id")?;
        let id = String::from_utf8(id_bytes)
            .map_err(|_| malformed(path, format!("non-UTF-8 id at offset {record_start}")))?;
        let t = cur.read_u32(path, "frame count")? as usize;
        let dim = cur.read_u32(path, "frame dimension")? as usize;
        let total = (t as u64)
            .checked_mul(dim as u64)
            .filter(|&n| n <= MAX_VALUES)
            .ok_or_else(|| malformed(path, format!("implausible record at {record_start}")))?;
        let values = cur.read_f32s(total as usize, path, "frame values")?;
        let frame = FrameSequence::new(id, dim, values)
            .map_err(|e| malformed(path, format!("record at offset {record_start}: {e}")))?;
        frames.push(frame);
    }
    Ok(frames)
}

/// Writes labels as text: a `#classes=` header, then one
/// `video_id,c1 c2 ...` line per video (ids must be comma/space free).
pub fn write_labels(path: impl AsRef<Path>, labels: &LabelSet, ids: &[String]) -> Result<()> {
    let path = path.as_ref();
    if ids.len() != labels.num_videos() {
        return Err(Error::dim(format!(
            "{} ids for {} videos",
            ids.len(),
            labels.num_videos()
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if id.is_empty() || id.chars().any(|ch| ch == ',' || ch.is_whitespace()) {
            return Err(Error::param(format!("id {id:?} is not writable")));
        }
        if !seen.insert(id) {
            return Err(Error::param(format!("duplicate id {id:?}")));
        }
    }
    atomic_write(path, |out| {
        writeln!(out, "#classes={}", labels.num_classes())?;
        for (row, id) in ids.iter().enumerate() {
            let classes: Vec<String> = labels
                .positives(row)
                .iter()
                .map(|c| c.to_string())
                .collect();
            writeln!(out, "{id},{}", classes.join(" "))?;
        }
        Ok(())
    })
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<(LabelSet, Vec<String>)> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| malformed(path, "empty file"))??;
    let num_classes: usize = header
        .strip_prefix("#classes=")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| malformed(path, format!("bad header line {header:?}")))?;
    let mut ids = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut positives = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        let (id, rest) = line
            .split_once(',')
            .ok_or_else(|| malformed(path, format!("line {lineno}: missing comma")))?;
        if id.is_empty() {
            return Err(malformed(path, format!("line {lineno}: empty id")));
        }
        if !seen.insert(id.to_string()) {
            return Err(malformed(
                path,
                format!("line {lineno}: duplicate id {id:?}"),
            ));
        }
        let classes: Vec<u32> = rest
            .split_whitespace()
            .map(|tok| {
                tok.parse::<u32>()
                    .map_err(|_| malformed(path, format!("line {lineno}: bad class {tok:?}")))
            })
            .collect::<Result<_>>()?;
        ids.push(id.to_string());
        positives.push(classes);
    }
    let labels =
        LabelSet::new(num_classes, positives).map_err(|e| malformed(path, e.to_string()))?;
    Ok((labels, ids))
}

/// Writes a text artifact (reports, CSV tables) with the same
/// temp-plus-rename discipline as the binary formats.
pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    atomic_write(path.as_ref(), |out| {
        out.write_all(text.as_bytes())?;
        Ok(())
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, |out| {
        serde_json::to_writer_pretty(&mut *out, value)
            .map_err(|e| Error::param(format!("serialize {}: {e}", path.display())))?;
        out.write_all(b"\n")?;
        Ok(())
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| malformed(path, e.to_string()))
}

pub fn write_split(path: impl AsRef<Path>, split: &Split) -> Result<()> {
    write_json(path.as_ref(), split)
}

pub fn read_split(path: impl AsRef<Path>) -> Result<Split> {
    read_json(path.as_ref())
}

pub fn write_synth_config(path: impl AsRef<Path>, config: &SynthConfig) -> Result<()> {
    write_json(path.as_ref(), config)
}

pub fn read_synth_config(path: impl AsRef<Path>) -> Result<SynthConfig> {
    let config: SynthConfig = read_json(path.as_ref())?;
    config.validate()?;
    Ok(config)
}

pub fn write_network_config(path: impl AsRef<Path>, config: &NetworkConfig) -> Result<()> {
    write_json(path.as_ref(), config)
}

pub fn read_network_config(path: impl AsRef<Path>) -> Result<NetworkConfig> {
    let config: NetworkConfig = read_json(path.as_ref())?;
    config.validate()?;
    Ok(config)
}

/// Epoch records and config only; checkpoint weights are not serialized
/// with the history.
pub fn write_history(path: impl AsRef<Path>, history: &TrainingHistory) -> Result<()> {
    write_json(path.as_ref(), history)
}

pub fn read_history(path: impl AsRef<Path>) -> Result<TrainingHistory> {
    read_json(path.as_ref())
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointManifest {
    config: NetworkConfig,
    epoch: usize,
    val_gap: f64,
}

/// A checkpoint loaded from disk; feed `layers` to `Network::from_parts`.
pub struct LoadedCheckpoint {
    pub config: NetworkConfig,
    pub epoch: usize,
    pub val_gap: f64,
    pub layers: Vec<LayerParams>,
}

/// Saves network weights into `dir` as one manifest plus one weight and
/// one bias matrix per layer.
pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    config: &NetworkConfig,
    epoch: usize,
    val_gap: f64,
    layers: &[LayerParams],
) -> Result<()> {
    let dir = dir.as_ref();
    let sizes = config.layer_sizes();
    if layers.len() + 1 != sizes.len() {
        return Err(Error::dim(format!(
            "{} layer tensors for {} layers",
            layers.len(),
            sizes.len() - 1
        )));
    }
    fs::create_dir_all(dir)?;
    for (i, layer) in layers.iter().enumerate() {
        let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
        if layer.weights.len() != fan_in * fan_out || layer.bias.len() != fan_out {
            return Err(Error::dim(format!("layer {i} shape mismatch")));
        }
        write_matrix_raw(
            &dir.join(format!("layer{i}.weights.divm")),
            fan_out,
            fan_in,
            &layer.weights,
        )?;
        write_matrix_raw(
            &dir.join(format!("layer{i}.bias.divm")),
            1,
            fan_out,
            &layer.bias,
        )?;
    }
    write_json(
        &dir.join("manifest.json"),
        &CheckpointManifest {
            config: config.clone(),
            epoch,
            val_gap,
        },
    )
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<LoadedCheckpoint> {
    let dir = dir.as_ref();
    let manifest: CheckpointManifest = read_json(&dir.join("manifest.json"))?;
    manifest.config.validate()?;
    let sizes = manifest.config.layer_sizes();
    let mut layers = Vec::with_capacity(sizes.len() - 1);
    for i in 0..sizes.len() - 1 {
        let wpath = dir.join(format!("layer{i}.weights.divm"));
        let (rows, cols, weights) = read_matrix_raw(&wpath)?;
        if rows != sizes[i + 1] || cols != sizes[i] {
            return Err(malformed(
                &wpath,
                format!(
                    "shape {rows}x{cols} does not match layer {i} ({}x{})",
                    sizes[i + 1],
                    sizes[i]
                ),
            ));
        }
        let bpath = dir.join(format!("layer{i}.bias.divm"));
        let (brows, bcols, bias) = read_matrix_raw(&bpath)?;
        if brows != 1 || bcols != sizes[i + 1] {
            return Err(malformed(
                &bpath,
                format!("shape {brows}x{bcols} does not match layer {i} bias"),
            ));
        }
        layers.push(LayerParams { weights, bias });
    }
    Ok(LoadedCheckpoint {
        config: manifest.config,
        epoch: manifest.epoch,
        val_gap: manifest.val_gap,
        layers,
    })
}

/// PCA whitening model as one DIVM file: row 0 the mean, the next `dim`
/// rows the basis, the last row the axis scales. f64 coefficients are
/// stored as f32, which stays within the model's orthonormality
/// tolerance.
pub fn save_pca_model(path: impl AsRef<Path>, model: &PcaWhitenModel) -> Result<()> {
    let d = model.dim();
    let mut values = Vec::with_capacity((d + 2) * d);
    values.extend(model.mean().iter().map(|&v| v as f32));
    values.extend(model.basis().iter().map(|&v| v as f32));
    values.extend(model.scale().iter().map(|&v| v as f32));
    write_matrix_raw(path.as_ref(), d + 2, d, &values)
}

pub fn load_pca_model(path: impl AsRef<Path>) -> Result<PcaWhitenModel> {
    let path = path.as_ref();
    let (rows, cols, values) = read_matrix_raw(path)?;
    if rows != cols + 2 {
        return Err(malformed(
            path,
            format!("shape {rows}x{cols} is not a whitening model"),
        ));
    }
    let d = cols;
    let mean: Vec<f64> = values[..d].iter().map(|&v| v as f64).collect();
    let basis: Vec<f64> = values[d..d + d * d].iter().map(|&v| v as f64).collect();
    let scale: Vec<f64> = values[d + d * d..].iter().map(|&v| v as f64).collect();
    PcaWhitenModel::new(mean, basis, scale).map_err(|e| malformed(path, e.to_string()))
}

/// Codebook centroids as a plain k x dim DIVM file.
pub fn save_codebook(path: impl AsRef<Path>, codebook: &Codebook) -> Result<()> {
    write_matrix(path, codebook.centroids())
}

pub fn load_codebook(path: impl AsRef<Path>) -> Result<Codebook> {
    let path = path.as_ref();
    let matrix = read_matrix(path)?;
    Codebook::new(matrix).map_err(|e| malformed(path, e.to_string()))
}
