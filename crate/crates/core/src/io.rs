//! On-disk formats: coreset CSV, shard CSV, trajectory-bank binaries, and
//! server-coreset JSON. Decimal reals carry 17 significant digits so every
//! 64-bit value survives a round trip.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write as _};
use std::path::Path;

use ndarray::Array2;

use crate::bpc::{LabelMode, Pseudocoreset, Trajectory, TrajectoryBank};
use crate::error::{CoreError, Result};
use crate::federation::{DatasetShard, ServerCoreset, Split};
use crate::nn::ParamVector;

/// Formats a real with 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn format_err(path: &Path, reason: impl Into<String>) -> CoreError {
    CoreError::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn open_err(path: &Path, err: std::io::Error) -> CoreError {
    format_err(path, err.to_string())
}

fn parse_real(path: &Path, field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|e| format_err(path, format!("bad real '{field}': {e}")))
}

/// Writes a coreset as CSV with header `k,z_0..z_{D-1},y_0..y_{C-1}`.
pub fn write_coreset(path: &Path, coreset: &Pseudocoreset) -> Result<()> {
    coreset.validate()?;
    let mut out = String::new();
    out.push('k');
    for d in 0..coreset.input_dim() {
        out.push_str(&format!(",z_{d}"));
    }
    for c in 0..coreset.label_dim() {
        out.push_str(&format!(",y_{c}"));
    }
    out.push('\n');
    for k in 0..coreset.num_points() {
        out.push_str(&k.to_string());
        for z in coreset.z.row(k) {
            out.push(',');
            out.push_str(&format_real(*z));
        }
        for y in coreset.y_hat.row(k) {
            out.push(',');
            out.push_str(&format_real(*y));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| open_err(path, e))
}

/// Reads a coreset CSV back. The file does not record ownership or the
/// label mode, so the caller supplies both.
pub fn read_coreset(path: &Path, owner: usize, label_mode: LabelMode) -> Result<Pseudocoreset> {
    let text = fs::read_to_string(path).map_err(|e| open_err(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| format_err(path, "missing header line"))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.first() != Some(&"k") {
        return Err(format_err(path, "header must start with 'k'"));
    }
    let d = columns[1..]
        .iter()
        .take_while(|c| c.starts_with("z_"))
        .count();
    let c = columns.len() - 1 - d;
    if d == 0 || c == 0 {
        return Err(format_err(path, "header needs z_* and y_* columns"));
    }
    for (j, name) in columns[1..=d].iter().enumerate() {
        if *name != format!("z_{j}") {
            return Err(format_err(path, format!("unexpected column '{name}'")));
        }
    }
    for (j, name) in columns[1 + d..].iter().enumerate() {
        if *name != format!("y_{j}") {
            return Err(format_err(path, format!("unexpected column '{name}'")));
        }
    }
    let mut zs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(format_err(
                path,
                format!("row {i} has {} fields, expected {}", fields.len(), columns.len()),
            ));
        }
        let k: usize = fields[0]
            .parse()
            .map_err(|e| format_err(path, format!("bad index '{}': {e}", fields[0])))?;
        if k != i {
            return Err(format_err(path, format!("row {i} is indexed {k}")));
        }
        for f in &fields[1..=d] {
            zs.push(parse_real(path, f)?);
        }
        for f in &fields[1 + d..] {
            ys.push(parse_real(path, f)?);
        }
        rows += 1;
    }
    let z = Array2::from_shape_vec((rows, d), zs)
        .map_err(|e| format_err(path, e.to_string()))?;
    let y_hat = Array2::from_shape_vec((rows, c), ys)
        .map_err(|e| format_err(path, e.to_string()))?;
    let coreset = Pseudocoreset {
        z,
        y_hat,
        owner,
        label_mode,
    };
    coreset.validate()?;
    Ok(coreset)
}

/// Writes shards as CSV with header `client_id,x_0..x_{D-1},y_0..y_{C-1},split`,
/// one contiguous block of rows per client.
pub fn write_shards(path: &Path, shards: &[DatasetShard]) -> Result<()> {
    let first = shards
        .first()
        .ok_or_else(|| CoreError::Empty("no shards to write".into()))?;
    let (d, c) = (first.input_dim(), first.target_dim());
    let mut out = String::new();
    out.push_str("client_id");
    for j in 0..d {
        out.push_str(&format!(",x_{j}"));
    }
    for j in 0..c {
        out.push_str(&format!(",y_{j}"));
    }
    out.push_str(",split\n");
    for shard in shards {
        shard.validate()?;
        if shard.input_dim() != d || shard.target_dim() != c {
            return Err(CoreError::DimensionMismatch(format!(
                "shard {} shape differs from the first shard",
                shard.client_id
            )));
        }
        for i in 0..shard.num_points() {
            out.push_str(&shard.client_id.to_string());
            for x in shard.inputs.row(i) {
                out.push(',');
                out.push_str(&format_real(*x));
            }
            for y in shard.targets.row(i) {
                out.push(',');
                out.push_str(&format_real(*y));
            }
            out.push_str(match shard.split[i] {
                Split::Train => ",train\n",
                Split::Test => ",test\n",
            });
        }
    }
    fs::write(path, out).map_err(|e| open_err(path, e))
}

/// Reads a shard CSV. Rows for one client must be contiguous.
pub fn read_shards(path: &Path) -> Result<Vec<DatasetShard>> {
    let text = fs::read_to_string(path).map_err(|e| open_err(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| format_err(path, "missing header line"))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.first() != Some(&"client_id") || columns.last() != Some(&"split") {
        return Err(format_err(
            path,
            "header must run client_id,x_*,y_*,split",
        ));
    }
    let d = columns[1..]
        .iter()
        .take_while(|c| c.starts_with("x_"))
        .count();
    let c = columns.len() - 2 - d;
    if d == 0 || c == 0 {
        return Err(format_err(path, "header needs x_* and y_* columns"));
    }

    struct Block {
        client_id: usize,
        xs: Vec<f64>,
        ys: Vec<f64>,
        split: Vec<Split>,
    }
    let mut blocks: Vec<Block> = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(format_err(
                path,
                format!("row {i} has {} fields, expected {}", fields.len(), columns.len()),
            ));
        }
        let client_id: usize = fields[0]
            .parse()
            .map_err(|e| format_err(path, format!("bad client id '{}': {e}", fields[0])))?;
        if blocks.last().map(|b| b.client_id) != Some(client_id) {
            if blocks.iter().any(|b| b.client_id == client_id) {
                return Err(format_err(
                    path,
                    format!("rows for client {client_id} are not contiguous"),
                ));
            }
            blocks.push(Block {
                client_id,
                xs: Vec::new(),
                ys: Vec::new(),
                split: Vec::new(),
            });
        }
        let block = blocks.last_mut().expect("just pushed");
        for f in &fields[1..=d] {
            block.xs.push(parse_real(path, f)?);
        }
        for f in &fields[1 + d..1 + d + c] {
            block.ys.push(parse_real(path, f)?);
        }
        block.split.push(match fields[1 + d + c] {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(format_err(path, format!("unknown split '{other}'")));
            }
        });
    }
    let mut shards = Vec::with_capacity(blocks.len());
    for block in blocks {
        let n = block.split.len();
        let shard = DatasetShard {
            client_id: block.client_id,
            inputs: Array2::from_shape_vec((n, d), block.xs)
                .map_err(|e| format_err(path, e.to_string()))?,
            targets: Array2::from_shape_vec((n, c), block.ys)
                .map_err(|e| format_err(path, e.to_string()))?,
            split: block.split,
        };
        shard.validate()?;
        shards.push(shard);
    }
    if shards.is_empty() {
        return Err(format_err(path, "no data rows"));
    }
    Ok(shards)
}

const BANK_HEADER_INTS: usize = 4;

fn bank_file_name(index: usize) -> String {
    format!("trajectory_{index:04}.bin")
}

/// Writes one binary file per trajectory into `dir`: a 4-integer header
/// (parameter count, checkpoint count, save interval, seed; little-endian
/// 64-bit) followed by the checkpoints as little-endian 64-bit reals.
pub fn write_bank(dir: &Path, bank: &TrajectoryBank) -> Result<()> {
    if bank.trajectories.is_empty() {
        return Err(CoreError::Empty("trajectory bank".into()));
    }
    fs::create_dir_all(dir).map_err(|e| open_err(dir, e))?;
    let num_checkpoints = bank.num_checkpoints();
    for (i, trajectory) in bank.trajectories.iter().enumerate() {
        let path = dir.join(bank_file_name(i));
        if trajectory.checkpoints.len() != num_checkpoints {
            return Err(CoreError::DimensionMismatch(format!(
                "trajectory {i} has {} checkpoints, bank implies {num_checkpoints}",
                trajectory.checkpoints.len()
            )));
        }
        let p = trajectory.checkpoints[0].len();
        let file = fs::File::create(&path).map_err(|e| open_err(&path, e))?;
        let mut w = BufWriter::new(file);
        for header in [
            p as u64,
            num_checkpoints as u64,
            bank.save_interval as u64,
            trajectory.seed,
        ] {
            w.write_all(&header.to_le_bytes())
                .map_err(|e| open_err(&path, e))?;
        }
        for checkpoint in &trajectory.checkpoints {
            for v in checkpoint.values.iter() {
                w.write_all(&v.to_le_bytes()).map_err(|e| open_err(&path, e))?;
            }
        }
        w.flush().map_err(|e| open_err(&path, e))?;
    }
    Ok(())
}

/// Reads every `trajectory_*.bin` under `dir` back into a bank. Dropped
/// seeds are not persisted, so the loaded bank reports none.
pub fn read_bank(dir: &Path) -> Result<TrajectoryBank> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| open_err(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n.starts_with("trajectory_") && n.ends_with(".bin"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(format_err(dir, "no trajectory_*.bin files"));
    }
    let mut trajectories = Vec::with_capacity(names.len());
    let mut shape: Option<(usize, usize, usize)> = None;
    for name in &names {
        let path = dir.join(name);
        let file = fs::File::open(&path).map_err(|e| open_err(&path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| open_err(&path, e))?;
        if bytes.len() < BANK_HEADER_INTS * 8 {
            return Err(format_err(&path, "file shorter than its header"));
        }
        let mut header = [0u64; BANK_HEADER_INTS];
        for (j, h) in header.iter_mut().enumerate() {
            *h = u64::from_le_bytes(bytes[j * 8..(j + 1) * 8].try_into().expect("8 bytes"));
        }
        let (p, num_checkpoints, save_interval) =
            (header[0] as usize, header[1] as usize, header[2] as usize);
        if p == 0 || num_checkpoints == 0 || save_interval == 0 {
            return Err(format_err(&path, "header has zero dimensions"));
        }
        match shape {
            None => shape = Some((p, num_checkpoints, save_interval)),
            Some(s) if s != (p, num_checkpoints, save_interval) => {
                return Err(format_err(&path, "header disagrees with earlier files"));
            }
            Some(_) => {}
        }
        let expected = BANK_HEADER_INTS * 8 + num_checkpoints * p * 8;
        if bytes.len() != expected {
            return Err(format_err(
                &path,
                format!("{} bytes, header implies {expected}", bytes.len()),
            ));
        }
        let mut checkpoints = Vec::with_capacity(num_checkpoints);
        let mut offset = BANK_HEADER_INTS * 8;
        for _ in 0..num_checkpoints {
            let mut values = Vec::with_capacity(p);
            for _ in 0..p {
                values.push(f64::from_le_bytes(
                    bytes[offset..offset + 8].try_into().expect("8 bytes"),
                ));
                offset += 8;
            }
            checkpoints.push(ParamVector::new(values.into()));
        }
        trajectories.push(Trajectory {
            checkpoints,
            seed: header[3],
        });
    }
    let (_, num_checkpoints, save_interval) = shape.expect("at least one file");
    Ok(TrajectoryBank {
        trajectories,
        save_interval,
        total_steps: (num_checkpoints - 1) * save_interval,
        dropped_seeds: Vec::new(),
    })
}

/// Serializes the aggregated server coreset as JSON.
pub fn write_server_coreset(path: &Path, server: &ServerCoreset) -> Result<()> {
    server.validate()?;
    let file = fs::File::create(path).map_err(|e| open_err(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, server)?;
    w.write_all(b"\n").map_err(|e| open_err(path, e))?;
    w.flush().map_err(|e| open_err(path, e))?;
    Ok(())
}

/// Loads a server coreset JSON and validates it.
pub fn read_server_coreset(path: &Path) -> Result<ServerCoreset> {
    let file = fs::File::open(path).map_err(|e| open_err(path, e))?;
    let server: ServerCoreset = serde_json::from_reader(BufReader::new(file))?;
    server.validate()?;
    Ok(server)
}
