//! Self-describing binary checkpoints: config hash, iteration count, the
//! parameter partition, and every named tensor as little-endian f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

use ataml_core::params::{ParamStore, Partition};
use ataml_core::tensor::Tensor;

const MAGIC: &[u8; 8] = b"ATCKPT01";
const DTYPE_F64: u8 = 1;

pub struct Checkpoint {
    pub config_hash: String,
    pub seed: u64,
    pub iteration: u64,
    pub partition: Partition,
    pub params: ParamStore,
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).context("checkpoint contains invalid utf8")
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let file = File::create(path)
        .with_context(|| format!("cannot create checkpoint {}", path.display()))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    write_str(&mut w, &ckpt.config_hash)?;
    w.write_all(&ckpt.seed.to_le_bytes())?;
    w.write_all(&ckpt.iteration.to_le_bytes())?;
    for set in [&ckpt.partition.shared, &ckpt.partition.task_specific] {
        w.write_all(&(set.len() as u32).to_le_bytes())?;
        for name in set {
            write_str(&mut w, name)?;
        }
    }
    w.write_all(&(ckpt.params.len() as u32).to_le_bytes())?;
    for (name, t) in ckpt.params.iter() {
        write_str(&mut w, name)?;
        w.write_all(&[DTYPE_F64])?;
        w.write_all(&(t.rows() as u64).to_le_bytes())?;
        w.write_all(&(t.cols() as u64).to_le_bytes())?;
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let file =
        File::open(path).with_context(|| format!("cannot open checkpoint {}", path.display()))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        bail!("{} is not a checkpoint file", path.display());
    }
    let config_hash = read_str(&mut r)?;
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let seed = u64::from_le_bytes(u64buf);
    r.read_exact(&mut u64buf)?;
    let iteration = u64::from_le_bytes(u64buf);

    let mut partition = Partition::default();
    for set_idx in 0..2 {
        let mut cnt = [0u8; 4];
        r.read_exact(&mut cnt)?;
        for _ in 0..u32::from_le_bytes(cnt) {
            let name = read_str(&mut r)?;
            if set_idx == 0 {
                partition.shared.insert(name);
            } else {
                partition.task_specific.insert(name);
            }
        }
    }

    let mut cnt = [0u8; 4];
    r.read_exact(&mut cnt)?;
    let mut params = ParamStore::new();
    for _ in 0..u32::from_le_bytes(cnt) {
        let name = read_str(&mut r)?;
        let mut dtype = [0u8; 1];
        r.read_exact(&mut dtype)?;
        if dtype[0] != DTYPE_F64 {
            bail!("unsupported tensor dtype tag {}", dtype[0]);
        }
        r.read_exact(&mut u64buf)?;
        let rows = u64::from_le_bytes(u64buf) as usize;
        r.read_exact(&mut u64buf)?;
        let cols = u64::from_le_bytes(u64buf) as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            r.read_exact(&mut u64buf)?;
            data.push(f64::from_le_bytes(u64buf));
        }
        params.insert(&name, Tensor::matrix(rows, cols, data));
    }
    Ok(Checkpoint {
        config_hash,
        seed,
        iteration,
        partition,
        params,
    })
}
